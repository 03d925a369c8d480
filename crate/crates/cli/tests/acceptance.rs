//! Acceptance criteria, one PASS/FAIL line each. Exits nonzero if any fails.

use std::collections::HashMap;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use netmerge::harness::{self, init, BenchConfig, NoProbe, Strategy, ZooName};
use netmerge::ir::serialize;
use netmerge::kernels::{batch_matmul, concat, conv2d, group_norm, grouped_conv2d, layer_norm, matmul};
use netmerge::merger::merge_structure;
use netmerge::tensor::{Element, TensorValue};
use netmerge::{merge, DType, Graph};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

const BIN: &str = env!("CARGO_BIN_EXE_netmerge");

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random<T: Element>(rng: &mut ChaCha8Rng, dims: &[usize]) -> TensorValue {
    let n: usize = dims.iter().product();
    let v: Vec<T> = (0..n).map(|_| T::from_f64(rng.random_range(-1.0..1.0))).collect();
    TensorValue::from_vec(dims.to_vec(), v).unwrap()
}

fn bits<T: Element>(v: &[T]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits_u64()).collect()
}

/// Direct evaluation of a zero-padded cross-correlation, in the reference
/// accumulation order (input channel, kernel row, kernel column; bias last).
fn conv_oracle<T: Element>(x: &TensorValue, w: &TensorValue, b: &TensorValue, s: usize, p: usize) -> Vec<T> {
    let [n, c_in, h, wd] = x.dims().try_into().unwrap();
    let [c_out, _, k, _] = w.dims().try_into().unwrap();
    let (xs, ws, bs) = (
        x.as_slice::<T>().unwrap(),
        w.as_slice::<T>().unwrap(),
        b.as_slice::<T>().unwrap(),
    );
    let (ho, wo) = ((h + 2 * p - k) / s + 1, (wd + 2 * p - k) / s + 1);
    let mut y = Vec::with_capacity(n * c_out * ho * wo);
    for ni in 0..n {
        for c in 0..c_out {
            for i in 0..ho {
                for j in 0..wo {
                    let mut acc = T::zero();
                    for ci in 0..c_in {
                        for ki in 0..k {
                            for kj in 0..k {
                                let r = (i * s + ki) as isize - p as isize;
                                let col = (j * s + kj) as isize - p as isize;
                                if r >= 0 && col >= 0 && (r as usize) < h && (col as usize) < wd {
                                    let xv = xs[((ni * c_in + ci) * h + r as usize) * wd + col as usize];
                                    acc = acc + ws[((c * c_in + ci) * k + ki) * k + kj] * xv;
                                }
                            }
                        }
                    }
                    y.push(acc + bs[c]);
                }
            }
        }
    }
    y
}

fn grouped_case<T: Element>(rng: &mut ChaCha8Rng) -> Result<(), String> {
    let m = [1, 2, 3, 4, 8][rng.random_range(0..5)];
    let c_in = rng.random_range(1..=8);
    let c_out = rng.random_range(1..=8);
    let k = [1, 3][rng.random_range(0..2)];
    let hw = rng.random_range(4..=12);
    let s = rng.random_range(1..=2);
    let p = rng.random_range(0..=1);
    let xs: Vec<_> = (0..m).map(|_| random::<T>(rng, &[2, c_in, hw, hw])).collect();
    let ws: Vec<_> = (0..m).map(|_| random::<T>(rng, &[c_out, c_in, k, k])).collect();
    let bs: Vec<_> = (0..m).map(|_| random::<T>(rng, &[c_out])).collect();
    let cat = |v: &[TensorValue], axis| concat(&v.iter().collect::<Vec<_>>(), axis).unwrap();
    let y = grouped_conv2d(&cat(&xs, 1), &cat(&ws, 0), Some(&cat(&bs, 0)), s, p, m).map_err(|e| e.to_string())?;
    let yv = y.as_slice::<T>().unwrap();
    let (n, total_c) = (y.dims()[0], y.dims()[1]);
    let plane = y.dims()[2] * y.dims()[3];
    for i in 0..m {
        let oracle = conv_oracle::<T>(&xs[i], &ws[i], &bs[i], s, p);
        let mut slice = Vec::with_capacity(oracle.len());
        for ni in 0..n {
            let start = (ni * total_c + i * c_out) * plane;
            slice.extend_from_slice(&yv[start..start + c_out * plane]);
        }
        let config = format!("{} M={m} Cin={c_in} Cout={c_out} K={k} H=W={hw} s={s} p={p}", T::DTYPE);
        ensure(bits(&slice) == bits(&oracle), || {
            format!("model {i} differs from the oracle at {config}")
        })?;
        let lib = conv2d(&xs[i], &ws[i], Some(&bs[i]), s, p).unwrap();
        ensure(bits(lib.as_slice::<T>().unwrap()) == bits(&oracle), || {
            format!("conv2d differs at {config}")
        })?;
    }
    Ok(())
}

fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1);
    for _ in 0..200 {
        grouped_case::<f32>(&mut rng)?;
        grouped_case::<f64>(&mut rng)?;
    }
    Ok("200 configurations x 2 dtypes, every slice bit-exact".into())
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x2);
    let err = |e: netmerge::TensorError| e.to_string();
    for case in 0..100 {
        let c = rng.random_range(1..=6);
        let (n, c_out) = (rng.random_range(1..=3), rng.random_range(1..=6));
        let x = random::<f32>(&mut rng, &[n, c, 5, 5]);
        let w = random::<f32>(&mut rng, &[c_out, c, 3, 3]);
        let (s, p) = (rng.random_range(1..=2), rng.random_range(0..=1));
        ensure(
            grouped_conv2d(&x, &w, None, s, p, 1)
                .map_err(err)?
                .bit_eq(&conv2d(&x, &w, None, s, p).map_err(err)?),
            || format!("grouped_conv2d(G=1) != conv2d in case {case}"),
        )?;
    }
    for case in 0..100 {
        let rows = rng.random_range(1..=4);
        let d = rng.random_range(1..=12);
        let x = random::<f64>(&mut rng, &[rows, d]);
        let (g, b) = (random::<f64>(&mut rng, &[d]), random::<f64>(&mut rng, &[d]));
        ensure(
            group_norm(&x, &g, &b, 1, 1e-5)
                .map_err(err)?
                .bit_eq(&layer_norm(&x, &g, &b, 1e-5).map_err(err)?),
            || format!("group_norm(G=1) != layer_norm in case {case}"),
        )?;
    }
    for case in 0..100 {
        let (rows, d_in, d_out) = (
            rng.random_range(1..=5),
            rng.random_range(1..=8),
            rng.random_range(1..=8),
        );
        let x = random::<f32>(&mut rng, &[rows, d_in]);
        let w = random::<f32>(&mut rng, &[d_in, d_out]);
        let b = random::<f32>(&mut rng, &[d_out]);
        let bmm = batch_matmul(
            &x.clone().reshaped(vec![1, rows, d_in]).unwrap(),
            &w.clone().reshaped(vec![1, d_in, d_out]).unwrap(),
            Some(&b.clone().reshaped(vec![1, d_out]).unwrap()),
        )
        .map_err(err)?;
        ensure(
            bmm.reshaped(vec![rows, d_out])
                .unwrap()
                .bit_eq(&matmul(&x, &w, Some(&b)).map_err(err)?),
            || format!("batch_matmul(M=1) != matmul in case {case}"),
        )?;
    }
    Ok("3 x 100 cases bit-exact".into())
}

/// Node shape: (kind, attrs, weights, output spec); edges are compared through the mapping.
fn signature(node: &Value) -> (Value, Value, Value, Value) {
    (
        node["kind"].clone(),
        node["attrs"].clone(),
        node["weights"].clone(),
        node["output"].clone(),
    )
}

fn split_edge(edge: &str) -> (&str, &str) {
    edge.rsplit_once(':').expect("edges are node:index")
}

/// Finds a node bijection between two graph documents preserving kinds,
/// attributes, specs, weight names, input edges, graph inputs and outputs.
fn isomorphic(golden: &Value, actual: &Value) -> Result<(), String> {
    let g_nodes = golden["nodes"].as_array().unwrap();
    let a_nodes = actual["nodes"].as_array().unwrap();
    ensure(g_nodes.len() == a_nodes.len(), || {
        format!("golden has {} nodes, merged graph has {}", g_nodes.len(), a_nodes.len())
    })?;
    ensure(golden["graph_inputs"] == actual["graph_inputs"], || {
        "graph inputs differ".into()
    })?;
    let input_names: Vec<&str> = golden["graph_inputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|i| i["name"].as_str().unwrap())
        .collect();

    fn extend<'a>(
        k: usize,
        g_nodes: &'a [Value],
        a_nodes: &'a [Value],
        inputs: &[&str],
        map: &mut HashMap<&'a str, &'a str>,
        used: &mut Vec<bool>,
    ) -> bool {
        let Some(g) = g_nodes.get(k) else { return true };
        for (j, a) in a_nodes.iter().enumerate() {
            if used[j] || signature(g) != signature(a) {
                continue;
            }
            let (gi, ai) = (g["inputs"].as_array().unwrap(), a["inputs"].as_array().unwrap());
            let edges_match = gi.len() == ai.len()
                && gi.iter().zip(ai).all(|(ge, ae)| {
                    let ((gn, gk), (an, ak)) = (split_edge(ge.as_str().unwrap()), split_edge(ae.as_str().unwrap()));
                    gk == ak
                        && if inputs.contains(&gn) {
                            gn == an
                        } else {
                            map.get(gn) == Some(&an)
                        }
                });
            if !edges_match {
                continue;
            }
            map.insert(g["id"].as_str().unwrap(), a["id"].as_str().unwrap());
            used[j] = true;
            if extend(k + 1, g_nodes, a_nodes, inputs, map, used) {
                return true;
            }
            used[j] = false;
            map.remove(g["id"].as_str().unwrap());
        }
        false
    }

    let mut map = HashMap::new();
    let mut used = vec![false; a_nodes.len()];
    ensure(extend(0, g_nodes, a_nodes, &input_names, &mut map, &mut used), || {
        "no node mapping preserves kinds, attributes, specs and edges".into()
    })?;
    let mapped: Vec<String> = golden["graph_outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| {
            let (n, k) = split_edge(e.as_str().unwrap());
            format!("{}:{k}", map[n])
        })
        .collect();
    let outputs: Vec<String> = actual["graph_outputs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|e| e.as_str().unwrap().to_owned())
        .collect();
    ensure(mapped == outputs, || {
        format!("outputs {outputs:?}, golden maps to {mapped:?}")
    })
}

fn criterion_3() -> Outcome {
    let golden_path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden/ffnn_m2.json");
    let golden: Value = serde_json::from_str(&std::fs::read_to_string(golden_path).unwrap()).unwrap();
    let merged = merge_structure(&harness::build(ZooName::Ffnn, DType::F32), 2).map_err(|e| e.to_string())?;
    let actual: Value = serde_json::from_slice(&serialize(&merged.graph).unwrap()).unwrap();
    isomorphic(&golden, &actual)?;
    let kinds: Vec<&str> = merged.graph.nodes.iter().map(|n| n.kind.name()).collect();
    Ok(format!("isomorphic to golden: {}", kinds.join(", ")))
}

fn cli(args: &[&str]) -> Result<String, String> {
    let out = Command::new(BIN).args(args).output().map_err(|e| e.to_string())?;
    let stdout = String::from_utf8_lossy(&out.stdout).into_owned();
    if out.status.success() {
        Ok(stdout)
    } else {
        Err(format!(
            "`netmerge {}` exited {:?}: {}{}",
            args.join(" "),
            out.status.code(),
            stdout,
            String::from_utf8_lossy(&out.stderr)
        ))
    }
}

fn cli_owned(args: &[String]) -> Result<String, String> {
    cli(&args.iter().map(String::as_str).collect::<Vec<_>>())
}

fn criterion_4() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut runs = 0;
    for name in ZooName::ALL {
        for dtype in ["f32", "f64"] {
            for m in [1usize, 2, 4, 8, 16, 32] {
                let base = dir.path().join(format!("{name}_{dtype}_{m}"));
                let p = |s: &str| base.join(s).to_string_lossy().into_owned();
                let ms = m.to_string();
                cli(&[
                    "zoo",
                    "--name",
                    name.as_str(),
                    "--seed",
                    "11",
                    "--out",
                    &p("g.json"),
                    "--weights-out",
                    &p("w"),
                    "--num-models",
                    &ms,
                    "--dtype",
                    dtype,
                ])?;
                let weights: Vec<String> = (0..m).map(|i| p(&format!("w/model{i}"))).collect();
                let mut args = vec![
                    "merge".into(),
                    "--model".into(),
                    p("g.json"),
                    "--out".into(),
                    p("merged.json"),
                ];
                args.push("--weights".into());
                args.extend(weights.iter().cloned());
                cli_owned(&args)?;
                for batch in ["1", "4"] {
                    let mut args: Vec<String> = ["verify", "--model", &p("g.json"), "--merged", &p("merged.json")]
                        .into_iter()
                        .chain(["--batch", batch, "--seed", "5", "--weights"])
                        .map(str::to_owned)
                        .collect();
                    args.extend(weights.iter().cloned());
                    let out = cli_owned(&args)?;
                    ensure(
                        out.contains("max abs error: 0e0") && out.trim_end().ends_with("PASS"),
                        || format!("{name} {dtype} M={m} B={batch}: {out}"),
                    )?;
                    runs += 1;
                }
            }
        }
    }
    Ok(format!("{runs} verify runs exited 0 with max error 0.0"))
}

fn criterion_5() -> Outcome {
    let g = harness::build(ZooName::CnnBlock, DType::F32);
    let source = g.node("conv2").unwrap().kind.groups();
    let merged = merge_structure(&g, 4).map_err(|e| e.to_string())?;
    let groups = merged.graph.node("merged::conv2").unwrap().kind.groups();
    ensure(source == Some(2) && groups == Some(8), || {
        format!("G={source:?} merged to {groups:?}")
    })?;
    Ok("4 x G=2 -> G=8".into())
}

fn ops_per_round(graph: &Graph, strategy: Strategy, m: usize) -> Result<usize, String> {
    let config = BenchConfig {
        strategy,
        num_models: m,
        batch: 1,
        repeats: 1,
        seed: 3,
    };
    harness::bench(graph, config, &NoProbe)
        .map(|r| r.op_invocations)
        .map_err(|e| e.to_string())
}

fn criterion_6() -> Outcome {
    let mut failures = Vec::new();
    let mut rows = Vec::new();
    for name in ZooName::ALL {
        let g = harness::build(name, DType::F32);
        let single = ops_per_round(&g, Strategy::Sequential, 1)?;
        for m in [2, 4, 8, 16, 32] {
            let merged = merge_structure(&g, m).map_err(|e| e.to_string())?;
            let s = &merged.info.stats;
            let predicted = g.nodes.len() + 2 * s.glue_count + g.inputs.len() + g.outputs.len();
            let sequential = ops_per_round(&g, Strategy::Sequential, m)?;
            let dispatched = ops_per_round(&g, Strategy::Merged, m)?;
            if sequential != m * single {
                failures.push(format!("{name} M={m}: sequential {sequential} != {m} x {single}"));
            }
            if dispatched != s.merged_nodes || dispatched != predicted {
                failures.push(format!(
                    "{name} M={m}: dispatched {dispatched}, |V_merge| {}, predicted {predicted}",
                    s.merged_nodes
                ));
            }
            if dispatched >= m * single {
                failures.push(format!(
                    "{name} M={m}: merged {dispatched} is not < {m} x {single} = {}",
                    m * single
                ));
            }
            if m == 2 {
                rows.push(format!("{name} {dispatched}/{}", m * single));
            }
        }
    }
    if failures.is_empty() {
        Ok(format!("merged/sequential at M=2: {}", rows.join(", ")))
    } else {
        Err(failures.join("; "))
    }
}

fn criterion_7() -> Outcome {
    let g = harness::build(ZooName::CnnBlock, DType::F32);
    let stores: Vec<_> = (0..32).map(|m| init::weights(&g, 1, m).unwrap()).collect();
    let start = Instant::now();
    let (merged, _) = merge(&g, &stores).map_err(|e| e.to_string())?;
    let latency = start.elapsed();
    let s = &merged.info.stats;
    ensure(latency < Duration::from_secs(1), || format!("merge took {latency:?}"))?;
    ensure(s.node_visits == g.nodes.len(), || {
        format!("{} visits for |V| = {}", s.node_visits, g.nodes.len())
    })?;
    ensure(s.edge_inspections <= 2 * g.num_edges(), || {
        format!("{} inspections for |E| = {}", s.edge_inspections, g.num_edges())
    })?;
    Ok(format!(
        "{latency:?}, {} visits (|V| = {}), {} inspections (2|E| = {})",
        s.node_visits,
        g.nodes.len(),
        s.edge_inspections,
        2 * g.num_edges()
    ))
}

fn criterion_8() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let p = |s: &str| dir.path().join(s).to_string_lossy().into_owned();
    std::fs::write(p("ids.txt"), "fc1\nln1\nrelu1\n").map_err(|e| e.to_string())?;
    cli(&[
        "zoo",
        "--name",
        "ffnn",
        "--seed",
        "4",
        "--out",
        &p("g.json"),
        "--weights-out",
        &p("w"),
        "--num-models",
        "2",
        "--head-widths",
        "10,5",
        "--heads-out",
        &p("heads"),
    ])?;
    let (w0, w1) = (p("w/model0"), p("w/model1"));
    cli(&[
        "merge",
        "--model",
        &p("g.json"),
        "--weights",
        &w0,
        &w1,
        "--out",
        &p("bb.json"),
        "--backbone",
        &p("ids.txt"),
        "--heads",
        &p("heads"),
    ])?;
    let out = cli(&[
        "verify",
        "--model",
        &p("g.json"),
        "--weights",
        &w0,
        &w1,
        "--merged",
        &p("bb.json"),
        "--backbone",
        &p("ids.txt"),
        "--heads",
        &p("heads"),
        "--batch",
        "4",
        "--seed",
        "2",
    ])?;
    ensure(
        out.contains("max abs error: 0e0") && out.trim_end().ends_with("PASS"),
        || out.clone(),
    )?;
    Ok("heads of width 10 and 5 bit-exact at B=4".into())
}

fn criterion_9() -> Outcome {
    let g = harness::build(ZooName::CnnBlock, DType::F32);
    let mut means = Vec::new();
    let mut speedups = Vec::new();
    for m in [1, 2, 4, 8] {
        let config = |strategy| BenchConfig {
            strategy,
            num_models: m,
            batch: 1,
            repeats: 100,
            seed: 9,
        };
        let seq = harness::bench(&g, config(Strategy::Sequential), &NoProbe).map_err(|e| e.to_string())?;
        let mer = harness::bench(&g, config(Strategy::Merged), &NoProbe).map_err(|e| e.to_string())?;
        means.push(seq.mean_ns);
        speedups.push(format!("M={m} {:.2}x", seq.mean_ns / mer.mean_ns));
    }
    let shown: Vec<String> = means.iter().map(|ns| format!("{:.0}us", ns / 1e3)).collect();
    ensure(means.windows(2).all(|w| w[0] <= w[1]), || {
        format!("sequential means {shown:?}")
    })?;
    Ok(format!(
        "sequential means {}; merged speedup (not gated) {}",
        shown.join(" <= "),
        speedups.join(", ")
    ))
}

type Criterion = (&'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 9] = [
        ("grouped-convolution equivalence", Duration::from_secs(60), criterion_1),
        ("degeneracy suite", Duration::from_secs(10), criterion_2),
        ("ffnn M=2 structural golden", Duration::from_secs(1), criterion_3),
        ("end-to-end equivalence matrix", Duration::from_secs(600), criterion_4),
        ("group-count arithmetic", Duration::from_secs(1), criterion_5),
        ("dispatch-count reduction", Duration::from_secs(60), criterion_6),
        ("merge latency and instrumentation", Duration::from_secs(5), criterion_7),
        ("backbone partial merge", Duration::from_secs(5), criterion_8),
        (
            "sequential-baseline monotonicity",
            Duration::from_secs(600),
            criterion_9,
        ),
    ];
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let mut outcome = check();
        let elapsed = start.elapsed();
        if outcome.is_ok() && elapsed > *budget {
            outcome = Err(format!("took {elapsed:.2?}, budget {budget:?}"));
        }
        match outcome {
            Ok(detail) => println!("PASS criterion {}: {name} [{elapsed:.2?}] {detail}", i + 1),
            Err(reason) => {
                failed += 1;
                println!("FAIL criterion {}: {name} [{elapsed:.2?}] {reason}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
