//! Instance JSON and result CSV persistence.
//!
//! Instance files round-trip losslessly: serialization uses
//! shortest-round-trip decimals for every f64 and a fixed field order, so
//! write -> read -> write is byte-identical. Matrices are stored row-major
//! as nested arrays.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::instances::{BaselineInstance, ParametricInstance, Task, TaskInstance};
use crate::models::{ModelFamily, Observation, ParametricModel};
use crate::tensor::Tensor;

pub const INSTANCE_SCHEMA_VERSION: u32 = 1;
pub const RESULT_SCHEMA_VERSION: u32 = 1;

// ---------------------------------------------------------------------------
// Instance files
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct TargetEntry {
    pub u: f64,
    pub x: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct ModelFile {
    pub family: ModelFamily,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub w_tru: Option<Vec<f64>>,
    pub w_ini: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub masks: Option<Vec<usize>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_range: Option<[f64; 2]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_train: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub u_test: Option<Vec<f64>>,
}

/// On-disk instance document. For learn-cab, targets are ordered
/// [feasible, infeasible]. For parametric instances the base cost vector
/// lives in `c_ini` (the learner knows the bases; only w is unknown).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct InstanceFile {
    pub schema_version: u32,
    pub task: Task,
    pub d: usize,
    pub m: usize,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
    #[serde(rename = "A")]
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
    pub c_ini: Vec<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c_tru: Option<Vec<f64>>,
    pub targets: Vec<TargetEntry>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelFile>,
}

impl InstanceFile {
    pub fn from_task(inst: &TaskInstance) -> Self {
        let baseline = &inst.baseline;
        let a = (0..baseline.a.rows())
            .map(|i| (0..baseline.a.cols()).map(|j| baseline.a.get(i, j)).collect())
            .collect();
        let model = inst.parametric.as_ref().map(|p| ModelFile {
            family: match inst.task {
                Task::TrigDemo => ModelFamily::TrigDemo,
                _ => ModelFamily::LinearShift,
            },
            w_tru: Some(p.w_tru.as_slice().to_vec()),
            w_ini: p.w_ini.as_slice().to_vec(),
            masks: if p.masks.is_empty() { None } else { Some(p.masks.clone()) },
            u_range: Some([p.u_range.0, p.u_range.1]),
            u_train: Some(p.u_train.clone()),
            u_test: if p.u_test.is_empty() { None } else { Some(p.u_test.clone()) },
        });
        InstanceFile {
            schema_version: INSTANCE_SCHEMA_VERSION,
            task: inst.task,
            d: baseline.d,
            m: baseline.m,
            seed: baseline.seed,
            warning: baseline.warning.clone(),
            a,
            b: baseline.b.as_slice().to_vec(),
            c_ini: inst.c_ini.as_slice().to_vec(),
            c_tru: inst.c_tru.as_ref().map(|c| c.as_slice().to_vec()),
            targets: inst
                .targets
                .iter()
                .map(|o| TargetEntry { u: o.u, x: o.x.as_slice().to_vec() })
                .collect(),
            model,
        }
    }

    pub fn to_task(&self) -> Result<TaskInstance> {
        if self.schema_version != INSTANCE_SCHEMA_VERSION {
            return Err(Error::InvalidArgument(format!(
                "unsupported instance schema version {}",
                self.schema_version
            )));
        }
        let a = Tensor::from_rows(&self.a)?;
        if a.rows() != self.m || a.cols() != self.d || self.b.len() != self.m {
            return Err(Error::ShapeMismatch {
                op: "instance_file",
                detail: format!("A {:?} vs d={}, m={}", a.shape(), self.d, self.m),
            });
        }
        let baseline = BaselineInstance {
            d: self.d,
            m: self.m,
            m_requested: self.m,
            a,
            b: Tensor::vector(self.b.clone()),
            vertices: Vec::new(),
            seed: self.seed,
            warning: self.warning.clone(),
        };
        let parametric = self
            .model
            .as_ref()
            .map(|m| -> Result<ParametricInstance> {
                let u_range = m.u_range.unwrap_or([0.0, 0.0]);
                Ok(ParametricInstance {
                    w_tru: Tensor::vector(m.w_tru.clone().unwrap_or_default()),
                    w_ini: Tensor::vector(m.w_ini.clone()),
                    masks: m.masks.clone().unwrap_or_default(),
                    u_range: (u_range[0], u_range[1]),
                    u_train: m.u_train.clone().unwrap_or_default(),
                    u_test: m.u_test.clone().unwrap_or_default(),
                })
            })
            .transpose()?;
        Ok(TaskInstance {
            baseline,
            task: self.task,
            c_ini: Tensor::vector(self.c_ini.clone()),
            c_tru: self.c_tru.as_ref().map(|c| Tensor::vector(c.clone())),
            targets: self
                .targets
                .iter()
                .map(|t| Observation { u: t.u, x: Tensor::vector(t.x.clone()) })
                .collect(),
            parametric,
        })
    }

    /// The learnable model at its initial weights.
    pub fn initial_model(&self) -> Result<ParametricModel> {
        let task = self.to_task()?;
        initial_model(&task)
    }
}

/// Build the learnable model for a task instance at its initial weights.
pub fn initial_model(inst: &TaskInstance) -> Result<ParametricModel> {
    match inst.task {
        Task::LearnC | Task::LearnCab => {
            ParametricModel::direct(&inst.c_ini, &inst.baseline.a, &inst.baseline.b)
        }
        Task::Parametric => {
            let p = inst
                .parametric
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("parametric instance lacks model".into()))?;
            ParametricModel::linear_shift(
                p.w_ini.clone(),
                inst.c_ini.clone(),
                inst.baseline.a.clone(),
                inst.baseline.b.clone(),
                p.masks.clone(),
            )
        }
        Task::TrigDemo => {
            let p = inst
                .parametric
                .as_ref()
                .ok_or_else(|| Error::InvalidArgument("trig-demo instance lacks model".into()))?;
            ParametricModel::trig_demo(p.w_ini.clone())
        }
    }
}

/// The same model at the stored true weights (for test-set targets).
pub fn true_model(inst: &TaskInstance) -> Result<Option<ParametricModel>> {
    let Some(p) = inst.parametric.as_ref() else { return Ok(None) };
    if p.w_tru.numel() == 0 {
        return Ok(None);
    }
    Ok(Some(initial_model(inst)?.with_weights(p.w_tru.clone())?))
}

pub fn write_instance(path: &Path, file: &InstanceFile) -> Result<()> {
    let json = serde_json::to_string_pretty(file)?;
    fs::write(path, json + "\n")?;
    Ok(())
}

pub fn read_instance(path: &Path) -> Result<InstanceFile> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

// ---------------------------------------------------------------------------
// Result rows (CSV)
// ---------------------------------------------------------------------------

/// One learning run: a single (instance, hyper combo) pair.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultRow {
    pub schema_version: u32,
    pub instance_id: String,
    pub task: Task,
    pub d: usize,
    pub m: usize,
    pub loss_kind: String,
    pub t0: f64,
    pub mu: f64,
    pub alpha_c: f64,
    pub alpha_ab: Option<f64>,
    pub eps_schedule: String,
    pub truncate: Option<usize>,
    pub target: Option<String>,
    pub seed: u64,
    pub initial_loss: f64,
    pub final_train_loss: f64,
    pub final_test_loss: Option<f64>,
    pub steps_used: usize,
    pub termination: String,
    pub wall_ms: u64,
}

/// Append rows, writing the fixed header only when the file is new.
pub fn append_result_rows(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let exists = path.exists() && fs::metadata(path)?.len() > 0;
    let file = fs::OpenOptions::new().create(true).append(true).open(path)?;
    let mut writer = csv::WriterBuilder::new().has_headers(!exists).from_writer(file);
    for row in rows {
        writer.serialize(row)?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_result_rows(path: &Path) -> Result<Vec<ResultRow>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for row in reader.deserialize() {
        rows.push(row?);
    }
    Ok(rows)
}

// ---------------------------------------------------------------------------
// Learned-model files
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LearnedHyper {
    pub t0: f64,
    pub mu: f64,
    pub alpha_c: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha_ab: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LearnedModelFile {
    pub schema_version: u32,
    pub instance_id: String,
    pub task: Task,
    pub loss_kind: String,
    pub hyper: LearnedHyper,
    pub w_lrn: Vec<f64>,
    pub initial_loss: f64,
    pub final_train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub final_test_loss: Option<f64>,
    pub steps_used: usize,
    pub termination: String,
}

pub fn write_learned_model(path: &Path, file: &LearnedModelFile) -> Result<()> {
    let json = serde_json::to_string_pretty(file)?;
    fs::write(path, json + "\n")?;
    Ok(())
}
