use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::adam::AdamConfig;
use super::network::{Network, INPUT_SIZE};
use super::tensor::Tensor;

/// A labelled 96×96 crop, normalized to `[0, 1]`.
pub trait Example {
    fn pixels(&self) -> &[f32];
    fn label(&self) -> f32;
}

impl Example for (Vec<f32>, f32) {
    fn pixels(&self) -> &[f32] {
        &self.0
    }
    fn label(&self) -> f32 {
        self.1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            adam: AdamConfig::default(),
            max_epochs: 10,
            patience: 3,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.adam.validate()?;
        if self.batch_size < 1 || self.patience < 1 || self.max_epochs < 1 {
            return Err(Error::InvalidInput(format!(
                "batch size, patience and max epochs must be >= 1: {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the lowest validation loss.
    pub network: Network<f32>,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

const CROP_LEN: usize = INPUT_SIZE * INPUT_SIZE;

fn check_examples<E: Example>(set: &[E], what: &str) -> Result<()> {
    if set.is_empty() {
        return Err(Error::InvalidInput(format!("{what} set is empty")));
    }
    for (i, e) in set.iter().enumerate() {
        if e.pixels().len() != CROP_LEN {
            return Err(Error::Shape(format!(
                "{what} example {i} has {} pixels, expected {CROP_LEN}",
                e.pixels().len()
            )));
        }
        if !(0.0..=1.0).contains(&e.label()) {
            return Err(Error::InvalidInput(format!(
                "{what} example {i} has label {} outside [0, 1]",
                e.label()
            )));
        }
    }
    Ok(())
}

fn stack<E: Example>(set: &[E], idx: &[usize]) -> Result<(Tensor<f32>, Vec<f32>)> {
    let mut data = Vec::with_capacity(idx.len() * CROP_LEN);
    let mut labels = Vec::with_capacity(idx.len());
    for &i in idx {
        data.extend_from_slice(set[i].pixels());
        labels.push(set[i].label());
    }
    Ok((
        Tensor::from_vec(&[idx.len(), 1, INPUT_SIZE, INPUT_SIZE], data)?,
        labels,
    ))
}

/// Infer-mode scores for a list of crops, in chunks.
pub fn predict_crops(net: &Network<f32>, crops: &[&[f32]]) -> Result<Vec<f32>> {
    const CHUNK: usize = 64;
    let mut out = Vec::with_capacity(crops.len());
    for chunk in crops.chunks(CHUNK) {
        let mut data = Vec::with_capacity(chunk.len() * CROP_LEN);
        for c in chunk {
            if c.len() != CROP_LEN {
                return Err(Error::Shape(format!(
                    "crop has {} pixels, expected {CROP_LEN}",
                    c.len()
                )));
            }
            data.extend_from_slice(c);
        }
        let x = Tensor::from_vec(&[chunk.len(), 1, INPUT_SIZE, INPUT_SIZE], data)?;
        out.extend(net.predict(&x)?);
    }
    Ok(out)
}

/// Infer-mode mean squared error over a labelled set.
pub fn evaluate_loss<E: Example>(net: &Network<f32>, set: &[E]) -> Result<f64> {
    check_examples(set, "evaluation")?;
    let crops: Vec<&[f32]> = set.iter().map(|e| e.pixels()).collect();
    let scores = predict_crops(net, &crops)?;
    let sum: f64 = scores
        .iter()
        .zip(set)
        .map(|(&p, e)| (p as f64 - e.label() as f64).powi(2))
        .sum();
    Ok(sum / set.len() as f64)
}

/// Mini-batch ADAM training with early stopping on validation MSE.
pub fn train<E: Example>(
    net: Network<f32>,
    train_set: &[E],
    val_set: &[E],
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    train_with_progress(net, train_set, val_set, cfg, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_with_progress<E: Example>(
    mut net: Network<f32>,
    train_set: &[E],
    val_set: &[E],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_examples(train_set, "training")?;
    check_examples(val_set, "validation")?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut moments = net.zero_moments();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut step = 0u64;
    let mut history = Vec::new();
    let mut best = (f64::INFINITY, 0usize, net.clone());
    let mut since_best = 0usize;
    let mut stopped_early = false;

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0f64;
        let mut seen = 0usize;
        // batch norm needs two samples, so a trailing singleton batch is skipped
        for idx in order.chunks(cfg.batch_size).filter(|c| c.len() >= 2) {
            let (x, y) = stack(train_set, idx)?;
            step += 1;
            let loss = net.train_step(&x, &y, &mut moments, &cfg.adam, step)?;
            loss_sum += loss as f64 * idx.len() as f64;
            seen += idx.len();
        }
        if seen == 0 {
            return Err(Error::InvalidInput(
                "training set yields no batch of at least 2 samples".into(),
            ));
        }
        let val_loss = evaluate_loss(&net, val_set)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / seen as f64,
            val_loss,
        };
        if !record.train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss in epoch {epoch}: train {}, val {val_loss}",
                record.train_loss
            )));
        }
        on_epoch(&record);
        history.push(record);
        if val_loss < best.0 {
            best = (val_loss, epoch, net.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                stopped_early = epoch < cfg.max_epochs;
                break;
            }
        }
    }

    let (best_val_loss, best_epoch, network) = best;
    Ok(TrainOutcome {
        network,
        history,
        best_epoch,
        best_val_loss,
        stopped_early,
    })
}
