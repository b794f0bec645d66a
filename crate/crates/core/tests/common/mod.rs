//! Shared helpers for integration tests: temp dirs, random tensors, and a
//! finite-difference checker for parameter-store models.

#![allow(dead_code)]

pub mod ops;

use std::collections::BTreeMap;
use std::path::PathBuf;

use rafd_core::net::{NetConfig, RafdNet};
use rafd_core::rng::Rng;
use rafd_core::tensor::{Array, FD_STEP};

/// Runs the model and returns (loss, per-parameter gradients when asked).
pub type ModelRun = dyn Fn(&mut RafdNet, bool) -> (f64, BTreeMap<String, Array>);

/// Unique temp directory, removed on drop.
pub struct TempDir(pub PathBuf);

impl TempDir {
    pub fn new(tag: &str) -> TempDir {
        let path = std::env::temp_dir().join(format!(
            "rafd-test-{tag}-{}-{}",
            std::process::id(),
            std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .unwrap()
                .as_nanos()
        ));
        std::fs::create_dir_all(&path).unwrap();
        TempDir(path)
    }
}

impl Drop for TempDir {
    fn drop(&mut self) {
        let _ = std::fs::remove_dir_all(&self.0);
    }
}

pub fn random_array(rng: &mut Rng, shape: &[usize], lo: f64, hi: f64) -> Array {
    let n: usize = shape.iter().product();
    Array::from_vec(shape, (0..n).map(|_| rng.range(lo, hi)).collect()).unwrap()
}

/// Worst relative finite-difference error over sampled parameter entries of
/// a store-backed model.
///
/// `run` executes the model and returns the scalar loss; with `with_grads`
/// it also backpropagates and returns per-parameter gradients. Every
/// evaluation starts from the same store snapshot, so batch-norm updates
/// inside a run never leak between evaluations.
pub fn model_grad_check(
    cfg: &NetConfig,
    seed: u64,
    samples_per_param: usize,
    run: &ModelRun,
) -> (f64, String) {
    let mut net = RafdNet::new(cfg.clone(), seed).unwrap();
    let _ = run(&mut net, false); // materialize parameters
    let store0 = net.store.clone();

    let mut net_a = RafdNet::with_store(cfg.clone(), store0.clone()).unwrap();
    let (_, grads) = run(&mut net_a, true);
    assert!(!grads.is_empty(), "model has no trainable parameters?");

    let mut worst = (0.0f64, String::new());
    for (name, grad) in &grads {
        let numel = grad.numel();
        let mut rng = Rng::derive(seed ^ 0x5eed_cafe, name);
        let mut picked: Vec<usize> = (0..samples_per_param.min(numel))
            .map(|_| rng.below(numel))
            .collect();
        picked.sort_unstable();
        picked.dedup();
        for &e in &picked {
            let eval = |delta: f64| -> f64 {
                let mut s = store0.clone();
                let mut v = s.get(name).unwrap().value.clone();
                v.data_mut()[e] += delta;
                s.set(name, v).unwrap();
                let mut net_n = RafdNet::with_store(cfg.clone(), s).unwrap();
                run(&mut net_n, false).0
            };
            let numeric = (eval(FD_STEP) - eval(-FD_STEP)) / (2.0 * FD_STEP);
            let a = grad.data()[e];
            let rel = (a - numeric).abs() / 1.0f64.max(a.abs()).max(numeric.abs());
            if rel > worst.0 {
                worst = (rel, format!("{name}[{e}]"));
            }
        }
    }
    worst
}
