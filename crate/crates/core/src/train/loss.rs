use candle_core::Tensor;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::TaskSpec;

/// Probabilities are clipped from below at this value before taking logs.
pub const PROB_EPSILON: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    BinaryCrossEntropy,
    CategoricalCrossEntropy,
}

pub fn select_loss(task: &TaskSpec) -> Result<LossKind> {
    loss_for_arity(task.n_classes)
}

pub fn loss_for_arity(n_classes: usize) -> Result<LossKind> {
    match n_classes {
        2 => Ok(LossKind::BinaryCrossEntropy),
        3 => Ok(LossKind::CategoricalCrossEntropy),
        n => Err(Error::Config(format!("no loss for {n} output classes"))),
    }
}

impl LossKind {
    /// Loss of one probability row against a one-hot (or soft) target.
    ///
    /// With a two-unit softmax the binary form reduces to the categorical
    /// one, since `p₀ = 1 − p₁`; both are spelled out here anyway.
    pub fn of_probabilities(self, probs: &[f64], target: &[f64]) -> f64 {
        let log = |p: f64| p.max(PROB_EPSILON).ln();
        match self {
            LossKind::CategoricalCrossEntropy => -probs.iter().zip(target).map(|(&p, &t)| t * log(p)).sum::<f64>(),
            LossKind::BinaryCrossEntropy => {
                let per_unit: f64 = probs
                    .iter()
                    .zip(target)
                    .map(|(&p, &t)| {
                        let pos = if t > 0.0 { t * log(p) } else { 0.0 };
                        let neg = if t < 1.0 { (1.0 - t) * log(1.0 - p) } else { 0.0 };
                        -(pos + neg)
                    })
                    .sum();
                per_unit / probs.len() as f64
            }
        }
    }

    /// Mean loss over a batch of logits `(batch, n)` and class labels
    /// `(batch,)`, computed through a log-softmax for stability. Both kinds
    /// coincide on softmax outputs with hard labels.
    pub fn batch_loss(self, logits: &Tensor, labels: &Tensor) -> Result<Tensor> {
        Ok(candle_nn::loss::cross_entropy(logits, labels)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::task::TaskName;
    use candle_core::Device;

    #[test]
    fn selection_by_arity() {
        assert_eq!(select_loss(&TaskName::Multiclass.spec()).unwrap(), LossKind::CategoricalCrossEntropy);
        assert_eq!(select_loss(&TaskName::NctVsVt.spec()).unwrap(), LossKind::BinaryCrossEntropy);
        for t in TaskName::BINARY {
            assert_eq!(select_loss(&t.spec()).unwrap(), LossKind::BinaryCrossEntropy);
        }
        assert!(matches!(loss_for_arity(4), Err(Error::Config(_))));
        assert!(matches!(loss_for_arity(1), Err(Error::Config(_))));
    }

    #[test]
    fn perfect_prediction_has_zero_loss() {
        let l = LossKind::CategoricalCrossEntropy.of_probabilities(&[0.0, 1.0, 0.0], &[0.0, 1.0, 0.0]);
        assert!(l.abs() < 1e-9);
        let l = LossKind::BinaryCrossEntropy.of_probabilities(&[1.0, 0.0], &[1.0, 0.0]);
        assert!(l.abs() < 1e-9);
    }

    #[test]
    fn binary_form_equals_categorical_on_two_unit_softmax() {
        for p in [0.01, 0.3, 0.5, 0.77, 0.999] {
            let probs = [1.0 - p, p];
            for target in [[1.0, 0.0], [0.0, 1.0]] {
                let b = LossKind::BinaryCrossEntropy.of_probabilities(&probs, &target);
                let c = LossKind::CategoricalCrossEntropy.of_probabilities(&probs, &target);
                assert!((b - c).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batch_loss_matches_row_formula() {
        let dev = Device::Cpu;
        let logits = Tensor::new(&[[2.0f32, -1.0, 0.5], [0.1, 0.2, 0.3]], &dev).unwrap();
        let labels = Tensor::new(&[0u32, 2], &dev).unwrap();
        let got = LossKind::CategoricalCrossEntropy
            .batch_loss(&logits, &labels)
            .unwrap()
            .to_scalar::<f32>()
            .unwrap() as f64;
        let rows = [[2.0f64, -1.0, 0.5], [0.1, 0.2, 0.3]];
        let mut expected = 0.0;
        for (row, label) in rows.iter().zip([0usize, 2]) {
            let z: f64 = row.iter().map(|v| v.exp()).sum();
            let probs: Vec<f64> = row.iter().map(|v| v.exp() / z).collect();
            let mut target = [0.0; 3];
            target[label] = 1.0;
            expected += LossKind::CategoricalCrossEntropy.of_probabilities(&probs, &target) / 2.0;
        }
        assert!((got - expected).abs() < 1e-5);
    }
}
