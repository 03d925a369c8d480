//! Seeded weight and input generation.
//!
//! Every stream is a ChaCha8 generator keyed by the user seed and a
//! `(domain, index)` stream id, so weights of model `m` and inputs of model
//! `m` never share random numbers and each is reproducible on its own.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::ir::{weight_specs, DType, Graph, IrError, OpKind, TensorSpec};
use crate::tensor::{TensorData, TensorValue};
use crate::weights::WeightStore;

const WEIGHTS: u64 = 1;
const INPUTS: u64 = 2;

fn stream(seed: u64, domain: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((domain << 32) | index as u64);
    rng
}

fn uniform(rng: &mut ChaCha8Rng, spec: &TensorSpec, lo: f64, hi: f64) -> TensorValue {
    let n = spec.numel();
    let data = match spec.dtype {
        DType::F32 => TensorData::F32((0..n).map(|_| rng.random_range(lo as f32..=hi as f32)).collect()),
        DType::F64 => TensorData::F64((0..n).map(|_| rng.random_range(lo..=hi)).collect()),
    };
    TensorValue::new(TensorSpec::new(spec.dtype, spec.dims.clone()), data).expect("generated to spec")
}

/// Weights of model `model`: uniform in `[-0.5, 0.5]`, except batch-norm
/// running variances, which are drawn from `[0.5, 1.5]`.
pub fn weights(graph: &Graph, seed: u64, model: usize) -> Result<WeightStore, IrError> {
    let specs = weight_specs(graph)?;
    let variances: Vec<&String> = graph
        .nodes
        .iter()
        .filter(|n| matches!(n.kind, OpKind::BatchNorm { .. }))
        .filter_map(|n| n.weights.get(3))
        .collect();
    let mut rng = stream(seed, WEIGHTS, model);
    let mut store = WeightStore::new(model);
    for (name, spec) in specs {
        let value = if variances.contains(&&name) {
            uniform(&mut rng, &spec, 0.5, 1.5)
        } else {
            uniform(&mut rng, &spec, -0.5, 0.5)
        };
        store.insert(name, value);
    }
    Ok(store)
}

/// Inputs of model `model` with leading extent `batch`, uniform in `[-1, 1]`.
pub fn inputs(graph: &Graph, batch: usize, seed: u64, model: usize) -> BTreeMap<String, TensorValue> {
    let mut rng = stream(seed, INPUTS, model);
    graph
        .inputs
        .iter()
        .map(|input| {
            let mut dims = input.spec.dims.clone();
            dims[0] = batch;
            let spec = TensorSpec::new(input.spec.dtype, dims);
            (input.name.clone(), uniform(&mut rng, &spec, -1.0, 1.0))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::zoo::{build, ZooName};

    #[test]
    fn reproducible_and_distinct_per_model() {
        let g = build(ZooName::CnnBlock, DType::F32);
        let a = weights(&g, 7, 0).unwrap();
        assert_eq!(a, weights(&g, 7, 0).unwrap());
        assert_ne!(a, weights(&g, 7, 1).unwrap());
        for (name, t) in &a.tensors {
            let v = t.to_f64_vec();
            if name.ends_with("running_var") {
                assert!(v.iter().all(|x| (0.5..=1.5).contains(x)));
            } else {
                assert!(v.iter().all(|x| (-0.5..=0.5).contains(x)));
            }
        }
        let x = inputs(&g, 4, 7, 0);
        assert_eq!(x["x"].dims(), &[4, 4, 8, 8]);
        assert!(x["x"].to_f64_vec().iter().all(|v| (-1.0..=1.0).contains(v)));
    }
}
