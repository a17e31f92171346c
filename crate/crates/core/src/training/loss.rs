use serde::{Deserialize, Serialize};

use crate::tensor::{Result, Scalar, Tensor};

/// Pixel loss used for training. Only [`LossKind::Mae`] is the reference
/// objective; [`LossKind::Mse`] exists for comparison runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    #[default]
    Mae,
    Mse,
}

impl LossKind {
    pub fn loss<T: Scalar>(self, pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
        match self {
            LossKind::Mae => mae_loss(pred, target),
            LossKind::Mse => mse_loss(pred, target),
        }
    }

    pub fn grad<T: Scalar>(self, pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
        match self {
            LossKind::Mae => mae_grad(pred, target),
            LossKind::Mse => mse_grad(pred, target),
        }
    }
}

/// Mean absolute difference over all elements, accumulated in `f64`.
pub fn mae_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    target.shape().expect_eq(&pred.shape(), "mae_loss")?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p.to_f64() - t.to_f64()).abs())
        .sum();
    Ok(sum / pred.len() as f64)
}

/// `sign(pred - target) / E` with `sign(0) = 0`.
pub fn mae_grad<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    target.shape().expect_eq(&pred.shape(), "mae_grad")?;
    let step = T::from_f64(1.0 / pred.len() as f64);
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(&p, &t)| {
            if p > t {
                step
            } else if p < t {
                -step
            } else {
                T::ZERO
            }
        })
        .collect();
    Tensor::from_vec(pred.shape(), data)
}

pub fn mse_loss<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<f64> {
    target.shape().expect_eq(&pred.shape(), "mse_loss")?;
    let sum: f64 = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| (p.to_f64() - t.to_f64()).powi(2))
        .sum();
    Ok(sum / pred.len() as f64)
}

pub fn mse_grad<T: Scalar>(pred: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    target.shape().expect_eq(&pred.shape(), "mse_grad")?;
    let k = 2.0 / pred.len() as f64;
    let data = pred
        .data()
        .iter()
        .zip(target.data())
        .map(|(p, t)| T::from_f64(k * (p.to_f64() - t.to_f64())))
        .collect();
    Tensor::from_vec(pred.shape(), data)
}
