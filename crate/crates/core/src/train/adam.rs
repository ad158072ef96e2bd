use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Adam hyper-parameters. Defaults follow Keras: `β₁ = 0.9`, `β₂ = 0.999`,
/// `ε = 1e-7`, with ε added to `√v` after folding the bias corrections into
/// the step size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta_1: f64,
    pub beta_2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta_1: 0.9,
            beta_2: 0.999,
            epsilon: 1e-7,
        }
    }
}

pub struct Adam {
    cfg: AdamConfig,
    vars: Vec<Var>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    step: i32,
}

impl Adam {
    pub fn new(vars: Vec<Var>, cfg: AdamConfig) -> Result<Self> {
        let m = vars.iter().map(|v| v.zeros_like()).collect::<candle_core::Result<Vec<_>>>()?;
        let v = m.clone();
        Ok(Self { cfg, vars, m, v, step: 0 })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.cfg
    }

    pub fn steps_taken(&self) -> i32 {
        self.step
    }

    /// One update. Variables without a gradient are left alone.
    pub fn step(&mut self, grads: &GradStore) -> Result<()> {
        self.step += 1;
        let AdamConfig {
            learning_rate: lr,
            beta_1: b1,
            beta_2: b2,
            epsilon: eps,
        } = self.cfg;
        let lr_t = lr * (1.0 - b2.powi(self.step)).sqrt() / (1.0 - b1.powi(self.step));
        for ((var, m), v) in self.vars.iter().zip(&mut self.m).zip(&mut self.v) {
            let Some(g) = grads.get(var.as_tensor()) else {
                continue;
            };
            *m = ((m.affine(b1, 0.0)? + g.affine(1.0 - b1, 0.0)?)?).detach();
            *v = ((v.affine(b2, 0.0)? + g.sqr()?.affine(1.0 - b2, 0.0)?)?).detach();
            let update = m.div(&v.sqrt()?.affine(1.0, eps)?)?.affine(lr_t, 0.0)?;
            var.set(&var.as_tensor().sub(&update)?.detach())?;
        }
        Ok(())
    }
}
