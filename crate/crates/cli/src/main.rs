use std::alloc::{GlobalAlloc, Layout, System};
use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};
use netmerge::harness::{self, init, BenchConfig, MemoryProbe, Strategy, ZooName};
use netmerge::ir::{deserialize, serialize};
use netmerge::merger::{backbone_subgraph, compose_with_head, explain, Head};
use netmerge::rules::rules_json;
use netmerge::{merge, merge_backbone, DType, Graph, MergedGraph, WeightStore};

struct Counting;

static CURRENT: AtomicU64 = AtomicU64::new(0);
static PEAK: AtomicU64 = AtomicU64::new(0);

unsafe impl GlobalAlloc for Counting {
    unsafe fn alloc(&self, layout: Layout) -> *mut u8 {
        let p = unsafe { System.alloc(layout) };
        if !p.is_null() {
            let now = CURRENT.fetch_add(layout.size() as u64, Ordering::Relaxed) + layout.size() as u64;
            PEAK.fetch_max(now, Ordering::Relaxed);
        }
        p
    }

    unsafe fn dealloc(&self, ptr: *mut u8, layout: Layout) {
        unsafe { System.dealloc(ptr, layout) };
        CURRENT.fetch_sub(layout.size() as u64, Ordering::Relaxed);
    }
}

#[global_allocator]
static ALLOC: Counting = Counting;

struct AllocProbe;

impl MemoryProbe for AllocProbe {
    fn reset_peak(&self) {
        PEAK.store(CURRENT.load(Ordering::Relaxed), Ordering::Relaxed);
    }

    fn peak_bytes(&self) -> Option<u64> {
        Some(PEAK.load(Ordering::Relaxed))
    }
}

/// Merge identical-architecture networks into one graph and check the result.
#[derive(Parser)]
#[command(name = "netmerge", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a zoo model and seeded weights for M instances.
    Zoo {
        #[arg(long)]
        name: ZooName,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Receives model0/, model1/, ...
        #[arg(long)]
        weights_out: PathBuf,
        #[arg(long, default_value_t = 1)]
        num_models: usize,
        #[arg(long, default_value = "f32")]
        dtype: DType,
        /// Output widths of per-model MatMul heads, one per model.
        #[arg(long, value_delimiter = ',', requires = "heads_out")]
        head_widths: Vec<usize>,
        /// Receives head{m}.json and head{m}/ per model.
        #[arg(long)]
        heads_out: Option<PathBuf>,
    },
    /// Merge the models whose weights are given, in order.
    Merge {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        weights: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to `<out stem>.weights` next to the merged graph.
        #[arg(long)]
        merged_weights: Option<PathBuf>,
        /// Node ids of the shared backbone, one per line.
        #[arg(long, requires = "heads")]
        backbone: Option<PathBuf>,
        #[arg(long, requires = "backbone")]
        heads: Option<PathBuf>,
    },
    /// Compare the merged graph against per-model runs on seeded inputs.
    Verify {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, num_args = 1.., required = true)]
        weights: Vec<PathBuf>,
        #[arg(long)]
        merged: PathBuf,
        #[arg(long)]
        merged_weights: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        batch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Absolute tolerance; bit-exact when absent.
        #[arg(long)]
        tol: Option<f64>,
        #[arg(long, requires = "heads")]
        backbone: Option<PathBuf>,
        #[arg(long, requires = "backbone")]
        heads: Option<PathBuf>,
    },
    /// Time one serving strategy and write a JSON report.
    Bench {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        num_models: usize,
        #[arg(long, default_value_t = 1)]
        batch: usize,
        #[arg(long, default_value_t = 100)]
        repeats: usize,
        #[arg(long)]
        strategy: Strategy,
        #[arg(long)]
        report: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Inspect the merge-rule table.
    Rules {
        #[command(subcommand)]
        action: RulesAction,
    },
}

#[derive(Subcommand)]
enum RulesAction {
    /// Print the rule table as JSON.
    Dump,
}

/// A problem with the arguments rather than with the work itself.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

enum Outcome {
    Ok,
    VerifyFailed,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli.command) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::VerifyFailed) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if e.downcast_ref::<Usage>().is_some() { 2 } else { 3 })
        }
    }
}

fn run(command: Command) -> Result<Outcome> {
    match command {
        Command::Zoo {
            name,
            seed,
            out,
            weights_out,
            num_models,
            dtype,
            head_widths,
            heads_out,
        } => zoo(
            name,
            seed,
            &out,
            &weights_out,
            num_models,
            dtype,
            &head_widths,
            heads_out.as_deref(),
        ),
        Command::Merge {
            model,
            weights,
            out,
            merged_weights,
            backbone,
            heads,
        } => {
            let graph = read_graph(&model)?;
            let stores = read_stores(&weights)?;
            let merged_weights = merged_weights.unwrap_or_else(|| default_weights_dir(&out));
            let start = Instant::now();
            let (merged, w) = match (&backbone, &heads) {
                (Some(ids), Some(dir)) => {
                    let heads = read_heads(dir, stores.len(), graph_dtype(&graph))?;
                    merge_backbone(&graph, &read_ids(ids)?, &stores, &heads)?
                }
                _ => merge(&graph, &stores)?,
            };
            let latency = start.elapsed();
            write_graph(&out, &merged.graph)?;
            w.save(&merged_weights)?;
            println!("{}", explain(&merged));
            println!("merge latency: {} ns", latency.as_nanos());
            Ok(Outcome::Ok)
        }
        Command::Verify {
            model,
            weights,
            merged,
            merged_weights,
            batch,
            seed,
            tol,
            backbone,
            heads,
        } => {
            if batch == 0 {
                bail!(Usage("--batch must be >= 1".into()));
            }
            if tol.is_some_and(|t| t.is_nan() || t < 0.0) {
                bail!(Usage("--tol must be a non-negative number".into()));
            }
            let graph = read_graph(&model)?;
            let stores = read_stores(&weights)?;
            let merged_graph = MergedGraph::from_graph(read_graph(&merged)?)?;
            if merged_graph.num_models() != stores.len() {
                bail!(Usage(format!(
                    "{} was merged from {} models but {} weight stores were given",
                    merged.display(),
                    merged_graph.num_models(),
                    stores.len()
                )));
            }
            let merged_store = WeightStore::load(&merged_weights.unwrap_or_else(|| default_weights_dir(&merged)))?;
            let references = match (&backbone, &heads) {
                (Some(ids), Some(dir)) => {
                    let sub = backbone_subgraph(&graph, &read_ids(ids)?)?;
                    let heads = read_heads(dir, stores.len(), graph_dtype(&graph))?;
                    heads
                        .iter()
                        .zip(&stores)
                        .enumerate()
                        .map(|(m, (h, s))| compose_with_head(&sub, h, m, s))
                        .collect::<Result<Vec<_>, _>>()?
                }
                _ => stores.into_iter().map(|s| (graph.clone(), s)).collect(),
            };
            let report = harness::verify(&references, &merged_graph, &merged_store, batch, seed, tol)?;
            println!("{report}");
            Ok(if report.passed {
                Outcome::Ok
            } else {
                Outcome::VerifyFailed
            })
        }
        Command::Bench {
            model,
            num_models,
            batch,
            repeats,
            strategy,
            report,
            seed,
        } => {
            if repeats == 0 || num_models == 0 || batch == 0 {
                bail!(Usage("--num-models, --batch and --repeats must all be >= 1".into()));
            }
            let graph = read_graph(&model)?;
            let config = BenchConfig {
                strategy,
                num_models,
                batch,
                repeats,
                seed,
            };
            let r = harness::bench(&graph, config, &AllocProbe)?;
            let text = serde_json::to_string_pretty(&r)? + "\n";
            fs::write(&report, text).with_context(|| format!("writing {}", report.display()))?;
            println!(
                "{} {} M={} B={}: mean {:.0} ns, std {:.0} ns over {} runs, {} ops/round",
                r.model, r.strategy, r.num_models, r.batch, r.mean_ns, r.std_ns, r.repeats, r.op_invocations
            );
            if let Some(ns) = r.merge_latency_ns {
                println!("merge latency: {ns} ns");
            }
            Ok(Outcome::Ok)
        }
        Command::Rules {
            action: RulesAction::Dump,
        } => {
            print!("{}", rules_json());
            Ok(Outcome::Ok)
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn zoo(
    name: ZooName,
    seed: u64,
    out: &Path,
    weights_out: &Path,
    num_models: usize,
    dtype: DType,
    head_widths: &[usize],
    heads_out: Option<&Path>,
) -> Result<Outcome> {
    if num_models == 0 {
        bail!(Usage("--num-models must be >= 1".into()));
    }
    let graph = harness::build(name, dtype);
    write_graph(out, &graph)?;
    for m in 0..num_models {
        init::weights(&graph, seed, m)?.save(&weights_out.join(format!("model{m}")))?;
    }
    if let Some(dir) = heads_out {
        if head_widths.len() != num_models {
            bail!(Usage(format!(
                "--head-widths lists {} widths for {num_models} models",
                head_widths.len()
            )));
        }
        let [exported] = graph.outputs.as_slice() else {
            bail!(Usage(format!(
                "{name} has more than one output; heads need exactly one"
            )));
        };
        let spec = graph.edge_spec(exported).expect("zoo graphs validate");
        if spec.rank() != 2 {
            bail!(Usage(format!("{name} ends in {spec}; heads take (N, D) features")));
        }
        for (m, &width) in head_widths.iter().enumerate() {
            let head = harness::matmul_head(spec.dims[1], width, dtype);
            write_graph(&dir.join(format!("head{m}.json")), &head)?;
            // Head weights use their own seed domain by offsetting the model index.
            init::weights(&head, seed, num_models + m)?.save(&dir.join(format!("head{m}")))?;
        }
    }
    println!(
        "wrote {} and {num_models} weight store(s) under {}",
        out.display(),
        weights_out.display()
    );
    Ok(Outcome::Ok)
}

fn default_weights_dir(graph_path: &Path) -> PathBuf {
    let stem = graph_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    graph_path.with_file_name(format!("{stem}.weights"))
}

fn graph_dtype(graph: &Graph) -> DType {
    graph.inputs.first().map_or(DType::F32, |i| i.spec.dtype)
}

fn read_graph(path: &Path) -> Result<Graph> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    deserialize(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn write_graph(path: &Path, graph: &Graph) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, serialize(graph)?).with_context(|| format!("writing {}", path.display()))
}

fn read_stores(dirs: &[PathBuf]) -> Result<Vec<WeightStore>> {
    dirs.iter()
        .enumerate()
        .map(|(m, d)| {
            let mut s = WeightStore::load(d)?;
            s.model = m;
            Ok(s)
        })
        .collect()
}

fn read_ids(path: &Path) -> Result<BTreeSet<String>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_owned)
        .collect())
}

fn read_heads(dir: &Path, count: usize, dtype: DType) -> Result<Vec<Head>> {
    (0..count)
        .map(|m| {
            let graph = read_graph(&dir.join(format!("head{m}.json")))?;
            if graph_dtype(&graph) != dtype {
                bail!(Usage(format!(
                    "head {m} is {} but the model is {dtype}",
                    graph_dtype(&graph)
                )));
            }
            let weights = WeightStore::load(&dir.join(format!("head{m}")))?;
            Ok(Head { graph, weights })
        })
        .collect()
}
