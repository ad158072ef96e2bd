use candle_core::{Result, Tensor};
use candle_nn::{Init, Linear, Module, VarBuilder};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::ModelConfig;

/// Dense layer with Glorot-uniform weights and zero bias.
fn dense(vb: VarBuilder, in_dim: usize, out_dim: usize) -> Result<Linear> {
    let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
    let weight = vb.get_with_hints(
        (out_dim, in_dim),
        "weight",
        Init::Uniform {
            lo: -limit,
            up: limit,
        },
    )?;
    let bias = vb.get_with_hints(out_dim, "bias", Init::Const(0.0))?;
    Ok(Linear::new(weight, Some(bias)))
}

/// Flattened features → FC1 (ReLU) → dropout → FC2 (ReLU) → dropout →
/// output units. Softmax is applied by the caller.
pub(crate) struct Head {
    fc1: Linear,
    fc2: Linear,
    output: Linear,
    dropout_rate: f64,
}

impl Head {
    pub fn new(vb: VarBuilder, in_dim: usize, cfg: &ModelConfig) -> Result<Self> {
        Ok(Self {
            fc1: dense(vb.pp("fc1"), in_dim, cfg.fc1_units)?,
            fc2: dense(vb.pp("fc2"), cfg.fc1_units, cfg.fc2_units)?,
            output: dense(vb.pp("output"), cfg.fc2_units, cfg.n_classes)?,
            dropout_rate: cfg.dropout_rate,
        })
    }

    /// Logits for `(batch, in_dim)` features. Dropout is active only when a
    /// generator is passed.
    pub fn forward(&self, x: &Tensor, dropout: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
        let mut rng = dropout;
        let x = self.fc1.forward(x)?.relu()?;
        let x = self.drop(&x, rng.as_deref_mut())?;
        let x = self.fc2.forward(&x)?.relu()?;
        let x = self.drop(&x, rng.as_deref_mut())?;
        self.output.forward(&x)
    }

    fn drop(&self, x: &Tensor, rng: Option<&mut ChaCha8Rng>) -> Result<Tensor> {
        let Some(rng) = rng else {
            return Ok(x.clone());
        };
        if self.dropout_rate == 0.0 {
            return Ok(x.clone());
        }
        let keep = 1.0 - self.dropout_rate;
        let scale = (1.0 / keep) as f32;
        let mask: Vec<f32> = (0..x.elem_count())
            .map(|_| if rng.random::<f64>() < keep { scale } else { 0.0 })
            .collect();
        x.mul(&Tensor::from_vec(mask, x.shape(), x.device())?)
    }
}
