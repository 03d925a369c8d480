//! Per-round timing of the three serving strategies.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;
use std::thread;
use std::time::Instant;

use serde::Serialize;
use thiserror::Error;

use super::init;
use crate::exec::{execute_with, ExecError, ExecOptions};
use crate::ir::{Graph, IrError};
use crate::merger::{merge, MergeError};
use crate::tensor::TensorValue;
use crate::weights::WeightStore;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("bad configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Ir(#[from] IrError),
    #[error(transparent)]
    Merge(#[from] MergeError),
    #[error(transparent)]
    Exec(#[from] ExecError),
}

/// Heap statistics source. The CLI backs this with a counting allocator.
pub trait MemoryProbe: Sync {
    /// Starts a new measurement window at the current usage.
    fn reset_peak(&self);
    fn peak_bytes(&self) -> Option<u64>;
}

pub struct NoProbe;

impl MemoryProbe for NoProbe {
    fn reset_peak(&self) {}

    fn peak_bytes(&self) -> Option<u64> {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Strategy {
    /// The `M` models one after another.
    Sequential,
    /// The `M` models on `min(M, cores)` worker threads.
    Threaded,
    /// One run of the merged graph.
    Merged,
}

impl FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sequential" => Ok(Strategy::Sequential),
            "threaded" => Ok(Strategy::Threaded),
            "merged" => Ok(Strategy::Merged),
            other => Err(format!("unknown strategy `{other}`")),
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Strategy::Sequential => "sequential",
            Strategy::Threaded => "threaded",
            Strategy::Merged => "merged",
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct BenchConfig {
    pub strategy: Strategy,
    pub num_models: usize,
    pub batch: usize,
    pub repeats: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize)]
pub struct BenchReport {
    pub schema: u32,
    pub model: String,
    pub strategy: Strategy,
    pub num_models: usize,
    pub batch: usize,
    pub repeats: usize,
    pub workers: usize,
    pub runs_ns: Vec<u64>,
    pub mean_ns: f64,
    pub std_ns: f64,
    pub min_ns: u64,
    pub max_ns: u64,
    /// Kernel invocations in one round.
    pub op_invocations: usize,
    pub peak_memory_bytes: Option<u64>,
    pub merge_latency_ns: Option<u64>,
}

const QUIET: ExecOptions = ExecOptions { record_values: false };

type Inputs = BTreeMap<String, TensorValue>;

fn run_one(graph: &Graph, weights: &WeightStore, inputs: &Inputs) -> Result<usize, ExecError> {
    execute_with(graph, weights, inputs, QUIET).map(|(_, trace)| trace.invocations)
}

/// Times `repeats` inference rounds after one untimed warm-up round.
///
/// Weights and inputs come from the seeded generators, so every strategy
/// sees the same numbers.
pub fn bench(graph: &Graph, config: BenchConfig, probe: &dyn MemoryProbe) -> Result<BenchReport, BenchError> {
    let BenchConfig {
        strategy,
        num_models: m,
        batch,
        repeats,
        seed,
    } = config;
    if repeats == 0 || m == 0 || batch == 0 {
        return Err(BenchError::Config("models, batch and repeats must all be >= 1".into()));
    }
    let stores = (0..m)
        .map(|i| init::weights(graph, seed, i))
        .collect::<Result<Vec<_>, _>>()?;
    let inputs: Vec<Inputs> = (0..m).map(|i| init::inputs(graph, batch, seed, i)).collect();

    let mut merge_latency = None;
    let mut workers = 1;
    let round: Box<dyn Fn() -> Result<usize, ExecError> + '_> = match strategy {
        Strategy::Sequential => Box::new(|| {
            let mut ops = 0;
            for (w, x) in stores.iter().zip(&inputs) {
                ops += run_one(graph, w, x)?;
            }
            Ok(ops)
        }),
        Strategy::Threaded => {
            let cores = thread::available_parallelism().map_or(1, |n| n.get());
            workers = m.min(cores);
            let (stores, inputs) = (&stores, &inputs);
            Box::new(move || {
                thread::scope(|s| {
                    let handles: Vec<_> = (0..workers)
                        .map(|w| {
                            s.spawn(move || {
                                let mut ops = 0;
                                for i in (w..m).step_by(workers) {
                                    ops += run_one(graph, &stores[i], &inputs[i])?;
                                }
                                Ok::<_, ExecError>(ops)
                            })
                        })
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("worker panicked"))
                        .sum::<Result<usize, _>>()
                })
            })
        }
        Strategy::Merged => {
            let start = Instant::now();
            let (merged, weights) = merge(graph, &stores)?;
            merge_latency = Some(start.elapsed().as_nanos() as u64);
            let packed = merged.pack_inputs(&inputs);
            Box::new(move || run_one(&merged.graph, &weights, &packed))
        }
    };

    round()?;
    probe.reset_peak();
    let mut runs_ns = Vec::with_capacity(repeats);
    let mut op_invocations = 0;
    for _ in 0..repeats {
        let start = Instant::now();
        op_invocations = round()?;
        runs_ns.push(start.elapsed().as_nanos() as u64);
    }
    let peak_memory_bytes = probe.peak_bytes();

    let n = runs_ns.len() as f64;
    let mean_ns = runs_ns.iter().map(|&r| r as f64).sum::<f64>() / n;
    let var = runs_ns.iter().map(|&r| (r as f64 - mean_ns).powi(2)).sum::<f64>() / n;
    Ok(BenchReport {
        schema: 1,
        model: graph.metadata.get("name").cloned().unwrap_or_else(|| "graph".into()),
        strategy,
        num_models: m,
        batch,
        repeats,
        workers,
        min_ns: *runs_ns.iter().min().expect("repeats >= 1"),
        max_ns: *runs_ns.iter().max().expect("repeats >= 1"),
        runs_ns,
        mean_ns,
        std_ns: var.sqrt(),
        op_invocations,
        peak_memory_bytes,
        merge_latency_ns: merge_latency,
    })
}
