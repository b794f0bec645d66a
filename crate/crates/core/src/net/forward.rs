//! One forward pass: a graph plus lazily staged parameters.

use std::collections::BTreeMap;

use crate::error::Result;
use crate::tensor::{Array, BnMode, Graph, Init, ParameterStore, Var};

/// Builder state for a single forward (and optional backward) pass.
///
/// Parameters are staged onto the tape on first use; gradients are collected
/// back by name after `Graph::backward`. In train mode batch-norm layers
/// normalize with batch statistics and update the store's running buffers
/// in place.
pub struct Forward<'s> {
    pub g: Graph,
    pub train: bool,
    store: &'s mut ParameterStore,
    vars: BTreeMap<String, Var>,
}

impl<'s> Forward<'s> {
    pub fn new(store: &'s mut ParameterStore, train: bool) -> Forward<'s> {
        Forward {
            g: Graph::new(),
            train,
            store,
            vars: BTreeMap::new(),
        }
    }

    /// Stage a trainable parameter (registering it on first use).
    pub fn p(&mut self, name: &str, shape: &[usize], init: Init) -> Var {
        if let Some(&v) = self.vars.get(name) {
            return v;
        }
        let value = self.store.get_or_init(name, shape, init, true).clone();
        let v = self.g.leaf(value, self.train);
        self.vars.insert(name.to_string(), v);
        v
    }

    /// Batch normalization with named running-stat buffers under `prefix`.
    pub fn batchnorm(
        &mut self,
        prefix: &str,
        x: Var,
        eps: f64,
        momentum: f64,
    ) -> Result<Var> {
        let c = self.g.value(x).shape()[0];
        let gamma = self.p(&format!("{prefix}.gamma"), &[c], Init::One);
        let beta = self.p(&format!("{prefix}.beta"), &[c], Init::Zero);
        let mean_name = format!("{prefix}.running_mean");
        let var_name = format!("{prefix}.running_var");
        let running_mean = self
            .store
            .get_or_init(&mean_name, &[c], Init::Zero, false)
            .clone();
        let running_var = self
            .store
            .get_or_init(&var_name, &[c], Init::One, false)
            .clone();
        if self.train {
            let result = self.g.batchnorm2d(x, gamma, beta, eps, BnMode::Train)?;
            let (batch_mean, batch_var) = result.batch_stats.expect("train mode stats");
            let mix = |old: &Array, new: &Array| {
                let data: Vec<f64> = old
                    .data()
                    .iter()
                    .zip(new.data())
                    .map(|(o, n)| (1.0 - momentum) * o + momentum * n)
                    .collect();
                Array::from_vec(old.shape(), data).unwrap()
            };
            self.store.set(&mean_name, mix(&running_mean, &batch_mean))?;
            self.store.set(&var_name, mix(&running_var, &batch_var))?;
            Ok(result.out)
        } else {
            let result = self.g.batchnorm2d(
                x,
                gamma,
                beta,
                eps,
                BnMode::Eval {
                    running_mean: &running_mean,
                    running_var: &running_var,
                },
            )?;
            Ok(result.out)
        }
    }

    /// Gradients of all staged trainable parameters, keyed by name.
    /// Parameters off the differentiated path get zero gradients.
    pub fn collect_grads(&self) -> BTreeMap<String, Array> {
        let mut out = BTreeMap::new();
        for (name, &var) in &self.vars {
            let trainable = self.store.get(name).map(|p| p.trainable).unwrap_or(false);
            if !trainable {
                continue;
            }
            let grad = self
                .g
                .grad(var)
                .cloned()
                .unwrap_or_else(|| Array::zeros(self.g.value(var).shape()));
            out.insert(name.clone(), grad);
        }
        out
    }
}
