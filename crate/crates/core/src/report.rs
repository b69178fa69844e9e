//! Batch summaries over result CSVs.
//!
//! Rows are first reduced to the best run per instance (lowest final
//! training loss, matching the best-of-N-combos protocol), then grouped by
//! (task, d, m, loss kind) into median/quartile summaries.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::files::ResultRow;
use crate::instances::Task;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SummaryRow {
    pub task: Task,
    pub d: usize,
    pub m: usize,
    pub loss_kind: String,
    pub instances: usize,
    pub initial_q1: f64,
    pub initial_median: f64,
    pub initial_q3: f64,
    pub final_train_q1: f64,
    pub final_train_median: f64,
    pub final_train_q3: f64,
    pub final_test_q1: Option<f64>,
    pub final_test_median: Option<f64>,
    pub final_test_q3: Option<f64>,
}

/// Linear-interpolation quantile of a sorted slice.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    debug_assert!(!sorted.is_empty());
    if sorted.len() == 1 {
        return sorted[0];
    }
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

fn quartiles(values: &mut Vec<f64>) -> (f64, f64, f64) {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite losses"));
    (quantile(values, 0.25), quantile(values, 0.5), quantile(values, 0.75))
}

/// Reduce to best-per-instance and summarize per problem size.
pub fn summarize(rows: &[ResultRow]) -> Vec<SummaryRow> {
    // Best final train loss per (instance, loss kind, target).
    let mut best: BTreeMap<(String, String, String), &ResultRow> = BTreeMap::new();
    for row in rows {
        if !row.final_train_loss.is_finite() {
            continue;
        }
        let key = (
            row.instance_id.clone(),
            row.loss_kind.clone(),
            row.target.clone().unwrap_or_default(),
        );
        match best.get(&key) {
            Some(existing) if existing.final_train_loss <= row.final_train_loss => {}
            _ => {
                best.insert(key, row);
            }
        }
    }

    let mut groups: BTreeMap<(String, usize, usize, String), Vec<&ResultRow>> = BTreeMap::new();
    for row in best.values() {
        groups
            .entry((row.task.to_string(), row.d, row.m, row.loss_kind.clone()))
            .or_default()
            .push(row);
    }

    let mut out = Vec::new();
    for ((task, d, m, loss_kind), rows) in groups {
        let task = match task.as_str() {
            "learn-c" => Task::LearnC,
            "learn-cab" => Task::LearnCab,
            "parametric" => Task::Parametric,
            _ => Task::TrigDemo,
        };
        let mut initial: Vec<f64> = rows.iter().map(|r| r.initial_loss).collect();
        let mut final_train: Vec<f64> = rows.iter().map(|r| r.final_train_loss).collect();
        let mut final_test: Vec<f64> =
            rows.iter().filter_map(|r| r.final_test_loss).filter(|v| v.is_finite()).collect();

        let (iq1, imed, iq3) = quartiles(&mut initial);
        let (fq1, fmed, fq3) = quartiles(&mut final_train);
        let (tq1, tmed, tq3) = if final_test.is_empty() {
            (None, None, None)
        } else {
            let (a, b, c) = quartiles(&mut final_test);
            (Some(a), Some(b), Some(c))
        };

        out.push(SummaryRow {
            task,
            d,
            m,
            loss_kind,
            instances: rows.len(),
            initial_q1: iq1,
            initial_median: imed,
            initial_q3: iq3,
            final_train_q1: fq1,
            final_train_median: fmed,
            final_train_q3: fq3,
            final_test_q1: tq1,
            final_test_median: tmed,
            final_test_q3: tq3,
        });
    }
    out
}

/// Fixed-width text table of the summary.
pub fn format_table(rows: &[SummaryRow]) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{:<11} {:>3} {:>4} {:>5} {:>5}  {:>11} {:>11} {:>11}  {:>11}\n",
        "task", "d", "m", "loss", "n", "init_med", "final_med", "final_q3", "test_med"
    ));
    for r in rows {
        out.push_str(&format!(
            "{:<11} {:>3} {:>4} {:>5} {:>5}  {:>11.4e} {:>11.4e} {:>11.4e}  {}\n",
            r.task.to_string(),
            r.d,
            r.m,
            r.loss_kind,
            r.instances,
            r.initial_median,
            r.final_train_median,
            r.final_train_q3,
            r.final_test_median.map_or("-".to_string(), |v| format!("{v:>11.4e}")),
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::files::RESULT_SCHEMA_VERSION;

    fn row(id: &str, loss: &str, final_train: f64) -> ResultRow {
        ResultRow {
            schema_version: RESULT_SCHEMA_VERSION,
            instance_id: id.into(),
            task: Task::LearnC,
            d: 2,
            m: 4,
            loss_kind: loss.into(),
            t0: 1.0,
            mu: 10.0,
            alpha_c: 1.0,
            alpha_ab: None,
            eps_schedule: "constant(1e-5)".into(),
            truncate: None,
            target: None,
            seed: 0,
            initial_loss: 1.0,
            final_train_loss: final_train,
            final_test_loss: None,
            steps_used: 10,
            termination: "zero-loss".into(),
            wall_ms: 1,
        }
    }

    #[test]
    fn single_row_median_is_that_row() {
        let rows = vec![row("a", "se", 0.5)];
        let summary = summarize(&rows);
        assert_eq!(summary.len(), 1);
        assert_eq!(summary[0].final_train_median, 0.5);
        assert_eq!(summary[0].instances, 1);
    }

    #[test]
    fn median_of_three() {
        let rows = vec![row("a", "se", 1.0), row("b", "se", 2.0), row("c", "se", 3.0)];
        let summary = summarize(&rows);
        assert_eq!(summary[0].final_train_median, 2.0);
        assert_eq!(summary[0].initial_median, 1.0);
    }

    #[test]
    fn best_per_instance_reduction() {
        // Two combos for the same instance: only the better one counts.
        let rows = vec![row("a", "se", 0.9), row("a", "se", 0.1), row("b", "se", 0.5)];
        let summary = summarize(&rows);
        assert_eq!(summary[0].instances, 2);
        assert!((summary[0].final_train_median - 0.3).abs() < 1e-12);
    }

    #[test]
    fn quantile_interpolates() {
        let v = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(quantile(&v, 0.5), 2.5);
        assert_eq!(quantile(&v, 0.25), 1.75);
        assert_eq!(quantile(&v, 1.0), 4.0);
    }
}
