//! Continual-learning evaluation: accuracy matrix, average accuracy,
//! average forgetting, key-selection accuracy and the oracle-key bound.

use log::warn;
use serde::Serialize;

use crate::classify::InferenceMode;
use crate::error::{Error, Result};
use crate::stream::TestSet;
use crate::trainer::ModelState;

/// Lower-triangular `T[n][τ]`: accuracy on group `τ` after training through group `n`
/// (both 1-based). Entries are `None` when a group had no test samples.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AccuracyMatrix {
    rows: Vec<Vec<Option<f64>>>,
}

impl AccuracyMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_rows(rows: Vec<Vec<Option<f64>>>) -> Result<Self> {
        let mut m = Self::new();
        for r in rows {
            m.push_row(r)?;
        }
        Ok(m)
    }

    /// Appends row `n = len + 1`, which must have `n` entries in `[0, 1]`.
    pub fn push_row(&mut self, row: Vec<Option<f64>>) -> Result<()> {
        let n = self.rows.len() + 1;
        if row.len() != n {
            return Err(Error::Input(format!(
                "row {n} of the accuracy matrix needs {n} entries, got {}",
                row.len()
            )));
        }
        if let Some(v) = row.iter().flatten().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Input(format!("accuracy {v} outside [0, 1]")));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn num_rows(&self) -> usize {
        self.rows.len()
    }

    /// `T[n][τ]`, 1-based.
    pub fn get(&self, n: usize, tau: usize) -> Option<f64> {
        if n == 0 || tau == 0 || tau > n {
            return None;
        }
        self.rows.get(n - 1).and_then(|r| r[tau - 1])
    }

    pub fn rows(&self) -> &[Vec<Option<f64>>] {
        &self.rows
    }

    /// CSV with one line per row `n`; entries beyond the diagonal are blank.
    pub fn to_csv(&self) -> String {
        let g = self.rows.len();
        let mut out = String::from("after_group");
        for tau in 1..=g {
            out.push_str(&format!(",group_{tau}"));
        }
        out.push('\n');
        for (i, row) in self.rows.iter().enumerate() {
            out.push_str(&(i + 1).to_string());
            for tau in 0..g {
                out.push(',');
                if let Some(Some(v)) = row.get(tau) {
                    out.push_str(&format!("{v:?}"));
                }
            }
            out.push('\n');
        }
        out
    }
}

fn check_row(t: &AccuracyMatrix, n: usize) -> Result<()> {
    if n > t.num_rows() {
        return Err(Error::Input(format!(
            "accuracy matrix has {} rows, asked for row {n}",
            t.num_rows()
        )));
    }
    Ok(())
}

/// `A_n = (1/n) Σ_{τ=1..n} T[n][τ]`; missing entries are left out of the mean.
pub fn average_accuracy(t: &AccuracyMatrix, n: usize) -> Result<f64> {
    if n == 0 {
        return Err(Error::Input("average accuracy needs n >= 1".into()));
    }
    check_row(t, n)?;
    let vals: Vec<f64> = (1..=n).filter_map(|tau| t.get(n, tau)).collect();
    if vals.is_empty() {
        return Err(Error::Input(format!("row {n} has no accuracies")));
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// `F_n = (1/(n-1)) Σ_{τ=1..n-1} max_{τ'∈1..n-1} (T[τ'][τ] − T[n][τ])`.
///
/// Terms are not clamped at zero, so accuracy that keeps improving yields a
/// negative contribution.
pub fn average_forgetting(t: &AccuracyMatrix, n: usize) -> Result<f64> {
    if n < 2 {
        return Err(Error::Input("average forgetting needs n >= 2".into()));
    }
    check_row(t, n)?;
    let mut terms = Vec::with_capacity(n - 1);
    for tau in 1..n {
        let Some(now) = t.get(n, tau) else { continue };
        let peak = (tau..n)
            .filter_map(|past| t.get(past, tau))
            .fold(f64::NEG_INFINITY, f64::max);
        if peak.is_finite() {
            terms.push(peak - now);
        }
    }
    if terms.is_empty() {
        return Err(Error::Input(format!("row {n} has no comparable accuracies")));
    }
    Ok(terms.iter().sum::<f64>() / terms.len() as f64)
}

/// Row `T[n][·]` for the groups in `groups` (in stream order).
pub fn evaluate_group_checkpoint(
    state: &ModelState,
    test: &TestSet,
    groups: &[usize],
    mode: InferenceMode,
) -> Result<Vec<Option<f64>>> {
    groups
        .iter()
        .map(|&g| {
            let mut total = 0usize;
            let mut correct = 0usize;
            for s in test.samples.iter().filter(|s| test.group_of(s.label) == Some(g)) {
                total += 1;
                if state.predict_with(&s.features, s.label, mode)? == s.label {
                    correct += 1;
                }
            }
            if total == 0 {
                warn!("group {g} has no test samples; skipped");
                return Ok(None);
            }
            Ok(Some(correct as f64 / total as f64))
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KeyMetrics {
    /// Fraction of test samples whose top-1 key belongs to their own class.
    pub key_accuracy: f64,
    /// Group-averaged accuracy when every sample uses its own class's prompt.
    pub upper_bound: f64,
}

/// Key-selection accuracy and oracle-key accuracy over test samples of classes the
/// model has seen, averaged per group like `A_n`.
pub fn key_and_ub_metrics(state: &ModelState, test: &TestSet, groups: &[usize]) -> Result<KeyMetrics> {
    if state.pool().is_empty() {
        return Err(Error::State("cannot evaluate an empty model".into()));
    }
    let mut hits = 0usize;
    let mut seen = 0usize;
    for s in &test.samples {
        if !state.pool().contains(s.label) {
            continue;
        }
        seen += 1;
        let q = state.encoder().encode_query(&s.features)?;
        if state.pool().retrieve_top_k(&q, 1)?[0].class_id == s.label {
            hits += 1;
        }
    }
    if seen == 0 {
        return Err(Error::Input("no test samples of seen classes".into()));
    }
    let row = evaluate_group_checkpoint(state, test, groups, InferenceMode::OracleKey)?;
    let vals: Vec<f64> = row.into_iter().flatten().collect();
    let upper_bound = if vals.is_empty() {
        0.0
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    };
    Ok(KeyMetrics {
        key_accuracy: hits as f64 / seen as f64,
        upper_bound,
    })
}
