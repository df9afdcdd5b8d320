//! Finite-difference check of the autograd gradients.
//!
//! Every parameter element is perturbed by `±eps` and the central difference
//! of the loss is compared with the backward-pass gradient. The relative
//! error is `|a - n| / max(|a|, |n|, floor)`; the floor keeps elements whose
//! true gradient is essentially zero (unused position rows, tokens absent
//! from the batch) from turning round-off into huge ratios.

use candle::{DType, Tensor};
use fidconv_core::tokenizer::N_SPECIAL;
use fidconv_core::{PackedRecord, Setting, TokenChannel, TokenId};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::model::FidModel;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub n_elements: usize,
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst element.
    pub worst: (String, usize),
    pub worst_analytic: f64,
    pub worst_numeric: f64,
}

pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// A packed record of random non-special tokens: `n_channels` channels with
/// real lengths cycling through `2..=max_len`, each padded to `max_len`, and
/// a target of `target_len` tokens.
pub fn random_record(
    rng: &mut impl Rng,
    n_channels: usize,
    vocab_size: usize,
    max_len: usize,
    target_len: usize,
) -> PackedRecord {
    let mut ids = |n: usize| -> Vec<TokenId> {
        (0..n)
            .map(|_| rng.random_range(N_SPECIAL as TokenId..vocab_size as TokenId))
            .collect()
    };
    let channels = (0..n_channels)
        .map(|i| {
            let real = 2 + (i * 3) % (max_len - 1);
            let mut c = TokenChannel::padding(max_len);
            c.ids[..real].copy_from_slice(&ids(real));
            c.mask[..real].fill(1);
            c
        })
        .collect();
    PackedRecord {
        setting: Setting::FidSp,
        channels,
        target_ids: ids(target_len),
    }
}

fn loss_value(model: &FidModel, batch: &[&PackedRecord], output_len: usize) -> Result<f64> {
    Ok(model.loss(batch, output_len, false)?.to_scalar::<f64>()?)
}

/// Requires an f64 model.
pub fn grad_check(
    model: &FidModel,
    batch: &[&PackedRecord],
    output_len: usize,
    eps: f64,
    floor: f64,
) -> Result<GradCheckReport> {
    if model.dtype() != DType::F64 {
        return Err(ModelError::InvalidConfig("gradient check needs an f64 model".into()));
    }
    let grads = model.loss(batch, output_len, false)?.backward()?;
    let mut report = GradCheckReport {
        n_elements: 0,
        max_rel_error: 0.0,
        worst: (String::new(), 0),
        worst_analytic: 0.0,
        worst_numeric: 0.0,
    };
    for (name, var) in model.vars() {
        let shape = var.shape().clone();
        let original = var.as_tensor().flatten_all()?.to_vec1::<f64>()?;
        let analytic = match grads.get(var.as_tensor()) {
            Some(g) => g.flatten_all()?.to_vec1::<f64>()?,
            None => vec![0.0; original.len()],
        };
        let mut values = original.clone();
        for i in 0..values.len() {
            values[i] = original[i] + eps;
            var.set(&Tensor::from_slice(&values, &shape, model.device())?)?;
            let plus = loss_value(model, batch, output_len)?;
            values[i] = original[i] - eps;
            var.set(&Tensor::from_slice(&values, &shape, model.device())?)?;
            let minus = loss_value(model, batch, output_len)?;
            values[i] = original[i];
            let numeric = (plus - minus) / (2.0 * eps);
            let rel = relative_error(analytic[i], numeric, floor);
            if rel > report.max_rel_error || !rel.is_finite() {
                report.max_rel_error = rel;
                report.worst = (name.clone(), i);
                report.worst_analytic = analytic[i];
                report.worst_numeric = numeric;
            }
        }
        var.set(&Tensor::from_slice(&original, &shape, model.device())?)?;
        report.n_elements += original.len();
    }
    Ok(report)
}
