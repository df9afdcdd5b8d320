use std::fmt::Write as _;
use std::path::Path;

use candle::DType;
use candle_nn::{AdamW, Optimizer, ParamsAdamW};
use fidconv_core::PackedRecord;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::Hyperparams;
use crate::error::{ModelError, Result};
use crate::model::FidModel;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub lr: f64,
    pub loss: f64,
}

/// Endless stream of shuffled minibatch index lists. Each pass over the data
/// is reshuffled from the same seeded generator, so the order depends only
/// on the seed and the dataset size.
pub struct BatchOrder {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    cursor: usize,
    batch_size: usize,
}

impl BatchOrder {
    pub fn new(n: usize, batch_size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        BatchOrder {
            rng,
            order,
            cursor: 0,
            batch_size: batch_size.max(1),
        }
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        let mut batch = Vec::with_capacity(self.batch_size);
        while batch.len() < self.batch_size.min(self.order.len()) {
            if self.cursor == self.order.len() {
                self.order.shuffle(&mut self.rng);
                self.cursor = 0;
            }
            batch.push(self.order[self.cursor]);
            self.cursor += 1;
        }
        batch
    }
}

/// Adam (no weight decay) on the mean token cross-entropy, with the
/// warmup-then-linear-decay schedule from `hp`. `on_step` sees every step's
/// log entry as it is produced.
pub fn train(
    model: &FidModel,
    data: &[PackedRecord],
    hp: &Hyperparams,
    seed: u64,
    mut on_step: impl FnMut(&LogEntry),
) -> Result<Vec<LogEntry>> {
    hp.validate()?;
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let vars = model.vars().iter().map(|(_, v)| v.clone()).collect();
    let mut opt = AdamW::new(
        vars,
        ParamsAdamW {
            lr: hp.lr_at(0),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        },
    )?;
    let mut order = BatchOrder::new(data.len(), hp.batch_size, seed);
    let mut log = Vec::with_capacity(hp.total_steps);
    for step in 0..hp.total_steps {
        let batch: Vec<&PackedRecord> = order.next_batch().into_iter().map(|i| &data[i]).collect();
        let lr = hp.lr_at(step);
        opt.set_learning_rate(lr);
        let loss = model.loss(&batch, hp.output_len, true)?;
        let value = loss.to_dtype(DType::F64)?.to_scalar::<f64>()?;
        if !value.is_finite() {
            return Err(ModelError::Diverged { step });
        }
        opt.backward_step(&loss)?;
        let entry = LogEntry { step, lr, loss: value };
        on_step(&entry);
        log.push(entry);
    }
    Ok(log)
}

/// Mean loss over `data` without dropout or parameter updates.
pub fn evaluate_loss(model: &FidModel, data: &[PackedRecord], batch_size: usize, output_len: usize) -> Result<f64> {
    if data.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut total = 0.0;
    for chunk in data.chunks(batch_size.max(1)) {
        let batch: Vec<&PackedRecord> = chunk.iter().collect();
        let loss = model.loss(&batch, output_len, false)?;
        total += loss.to_dtype(DType::F64)?.to_scalar::<f64>()? * chunk.len() as f64;
    }
    Ok(total / data.len() as f64)
}

pub fn log_csv(log: &[LogEntry]) -> String {
    let mut out = String::from("step,lr,loss\n");
    for e in log {
        let _ = writeln!(out, "{},{:e},{}", e.step, e.lr, e.loss);
    }
    out
}

pub fn write_log(path: &Path, log: &[LogEntry]) -> Result<()> {
    std::fs::write(path, log_csv(log)).map_err(|source| ModelError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::ModelConfig;
    use crate::model::tests::random_record;
    use candle::Device;

    fn setup() -> (FidModel, Vec<PackedRecord>) {
        let model = FidModel::new(&ModelConfig::tiny(40), DType::F32, &Device::Cpu).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let data = (0..6).map(|_| random_record(&mut rng, 2, 40, 8)).collect();
        (model, data)
    }

    fn hp(lr: f64, steps: usize) -> Hyperparams {
        Hyperparams {
            lr,
            warmup_steps: 1,
            total_steps: steps,
            batch_size: 2,
            max_input_len: 32,
            output_len: 16,
        }
    }

    #[test]
    fn batch_order_covers_every_example_each_pass() {
        let mut order = BatchOrder::new(7, 3, 9);
        let mut seen: Vec<usize> = (0..7).flat_map(|_| order.next_batch()).take(7).collect();
        seen.sort_unstable();
        assert_eq!(seen, (0..7).collect::<Vec<_>>());
        let a: Vec<Vec<usize>> = (0..5).map(|_| BatchOrder::new(7, 3, 9).next_batch()).collect();
        assert!(a.windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn zero_learning_rate_leaves_parameters_unchanged() {
        let (model, data) = setup();
        let before = model.parameter_values().unwrap();
        train(&model, &data, &hp(0.0, 3), 0, |_| {}).unwrap();
        assert_eq!(model.parameter_values().unwrap(), before);
    }

    #[test]
    fn training_is_deterministic() {
        let (a, data) = setup();
        let (b, _) = setup();
        let la = train(&a, &data, &hp(1e-3, 4), 5, |_| {}).unwrap();
        let lb = train(&b, &data, &hp(1e-3, 4), 5, |_| {}).unwrap();
        assert_eq!(la, lb);
        assert_eq!(a.parameter_values().unwrap(), b.parameter_values().unwrap());
        assert!(la.iter().all(|e| e.loss.is_finite()));
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let (model, data) = setup();
        let (_, embed) = &model.vars()[0];
        embed.set(&embed.as_tensor().affine(0.0, f64::NAN).unwrap()).unwrap();
        assert!(matches!(
            train(&model, &data, &hp(1e-3, 3), 0, |_| {}),
            Err(ModelError::Diverged { step: 0 })
        ));
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let (model, _) = setup();
        assert!(matches!(
            train(&model, &[], &hp(1e-3, 1), 0, |_| {}),
            Err(ModelError::EmptyDataset)
        ));
    }

    #[test]
    fn csv_log() {
        let log = [LogEntry {
            step: 0,
            lr: 5e-4,
            loss: 2.5,
        }];
        assert_eq!(log_csv(&log), "step,lr,loss\n0,5e-4,2.5\n");
    }
}
