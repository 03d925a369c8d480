//! Slice-wise comparison of a merged graph against per-model runs.

use std::fmt;

use serde::Serialize;

use super::init;
use crate::exec::{execute, ExecError};
use crate::ir::Graph;
use crate::merger::MergedGraph;
use crate::tensor::{TensorData, TensorValue};
use crate::weights::WeightStore;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Mismatch {
    pub model: usize,
    pub output: usize,
    /// Flat element index; `None` when the shapes already differ.
    pub index: Option<usize>,
    pub expected: String,
    pub actual: String,
}

impl fmt::Display for Mismatch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.index {
            Some(i) => write!(
                f,
                "model {} output {} index {}: expected {}, got {}",
                self.model, self.output, i, self.expected, self.actual
            ),
            None => write!(
                f,
                "model {} output {}: expected {}, got {}",
                self.model, self.output, self.expected, self.actual
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerifyReport {
    pub num_models: usize,
    pub batch: usize,
    pub seed: u64,
    pub compared: usize,
    pub max_abs_error: f64,
    pub max_rel_error: f64,
    /// `None` means bit-exact equality was required.
    pub tolerance: Option<f64>,
    pub first_mismatch: Option<Mismatch>,
    pub passed: bool,
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "models: {}, batch: {}, seed: {}",
            self.num_models, self.batch, self.seed
        )?;
        writeln!(f, "elements compared: {}", self.compared)?;
        writeln!(f, "max abs error: {:e}", self.max_abs_error)?;
        writeln!(f, "max rel error: {:e}", self.max_rel_error)?;
        match self.tolerance {
            Some(t) => writeln!(f, "tolerance: {t:e}")?,
            None => writeln!(f, "tolerance: bit-exact")?,
        }
        if let Some(m) = &self.first_mismatch {
            writeln!(f, "first mismatch: {m}")?;
        }
        write!(f, "{}", if self.passed { "PASS" } else { "FAIL" })
    }
}

/// Runs `references[m]` (model `m`'s own network and weights) and the
/// merged graph on the same seeded inputs, and compares slice by slice.
pub fn verify(
    references: &[(Graph, WeightStore)],
    merged: &MergedGraph,
    merged_weights: &WeightStore,
    batch: usize,
    seed: u64,
    tolerance: Option<f64>,
) -> Result<VerifyReport, ExecError> {
    let per_model: Vec<_> = references
        .iter()
        .enumerate()
        .map(|(m, (g, _))| init::inputs(g, batch, seed, m))
        .collect();
    let (outputs, _) = execute(&merged.graph, merged_weights, &merged.pack_inputs(&per_model))?;
    let actual = merged.split_outputs(outputs);

    let mut report = VerifyReport {
        num_models: references.len(),
        batch,
        seed,
        compared: 0,
        max_abs_error: 0.0,
        max_rel_error: 0.0,
        tolerance,
        first_mismatch: None,
        passed: true,
    };
    for (m, ((graph, weights), inputs)) in references.iter().zip(&per_model).enumerate() {
        let (expected, _) = execute(graph, weights, inputs)?;
        let got = actual.get(m).map(Vec::as_slice).unwrap_or_default();
        if got.len() != expected.len() {
            report.note(Mismatch {
                model: m,
                output: got.len().min(expected.len()),
                index: None,
                expected: format!("{} outputs", expected.len()),
                actual: format!("{} outputs", got.len()),
            });
            continue;
        }
        for (k, (e, a)) in expected.iter().zip(got).enumerate() {
            report.compare(m, k, e, a);
        }
    }
    report.passed = report.first_mismatch.is_none();
    Ok(report)
}

impl VerifyReport {
    fn note(&mut self, mismatch: Mismatch) {
        if self.first_mismatch.is_none() {
            self.first_mismatch = Some(mismatch);
        }
    }

    fn compare(&mut self, model: usize, output: usize, expected: &TensorValue, actual: &TensorValue) {
        if !expected.spec().same_shape(actual.spec()) {
            self.max_abs_error = f64::INFINITY;
            self.max_rel_error = f64::INFINITY;
            self.note(Mismatch {
                model,
                output,
                index: None,
                expected: expected.spec().to_string(),
                actual: actual.spec().to_string(),
            });
            return;
        }
        let bits_equal = |i: usize| match (expected.data(), actual.data()) {
            (TensorData::F32(a), TensorData::F32(b)) => a[i].to_bits() == b[i].to_bits(),
            (TensorData::F64(a), TensorData::F64(b)) => a[i].to_bits() == b[i].to_bits(),
            _ => false,
        };
        let (ev, av) = (expected.to_f64_vec(), actual.to_f64_vec());
        for (i, (&e, &a)) in ev.iter().zip(&av).enumerate() {
            self.compared += 1;
            let abs = match (e - a).abs() {
                _ if bits_equal(i) => 0.0,
                d if d.is_nan() => f64::INFINITY,
                d => d,
            };
            let rel = if abs == 0.0 {
                0.0
            } else {
                abs / e.abs().max(f64::MIN_POSITIVE)
            };
            self.max_abs_error = self.max_abs_error.max(abs);
            self.max_rel_error = self.max_rel_error.max(rel);
            let within = match self.tolerance {
                Some(t) => abs <= t,
                None => bits_equal(i),
            };
            if !within {
                self.note(Mismatch {
                    model,
                    output,
                    index: Some(i),
                    expected: format!("{e:e}"),
                    actual: format!("{a:e}"),
                });
            }
        }
    }
}
