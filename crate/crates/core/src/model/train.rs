//! Minibatch SGD over both networks.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{stack_crops, Spotter};
use crate::data::{make_training_example, recognition_crop, Sample};
use crate::error::{Error, Result};
use crate::geometry::decode_offsets;
use crate::micronet::{sgd_update, Mode, Module};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Epochs (0-based) at which the learning rate is multiplied by `lr_decay`.
    pub milestones: Vec<usize>,
    pub lr_decay: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    /// Proposal jitter for BPDN crops.
    pub jitter: f64,
    /// Boundary point jitter for recognizer crops, relative to text height.
    pub point_jitter: f64,
    /// Proposal jitter used when scoring the holdout set.
    pub eval_jitter: f64,
    /// Upper bound on holdout instances scored per epoch.
    pub eval_limit: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::with_epochs(15)
    }
}

impl TrainConfig {
    /// Default schedule with the decay points at 2/3 and 13/15 of the run.
    pub fn with_epochs(epochs: usize) -> Self {
        Self {
            epochs,
            lr: 0.05,
            milestones: vec![(epochs * 2).div_ceil(3), (epochs * 13).div_ceil(15)],
            lr_decay: 0.1,
            batch_size: 8,
            momentum: 0.9,
            weight_decay: 1e-4,
            seed: 7,
            jitter: 0.1,
            point_jitter: 0.04,
            eval_jitter: 0.05,
            eval_limit: 300,
        }
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = self.milestones.iter().filter(|&&m| epoch >= m).count();
        self.lr * self.lr_decay.powi(decays as i32)
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Config("bad optimizer settings".into()));
        }
        if !(0.0..=0.5).contains(&self.jitter) || !(0.0..=0.5).contains(&self.eval_jitter) || self.point_jitter < 0.0 {
            return Err(Error::Config("jitter out of range".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub kind: String,
    pub epoch: usize,
    pub lr: f64,
    pub steps: usize,
    pub l_bp: f64,
    pub l_recog: f64,
    pub total: f64,
    /// Exact-sequence accuracy on holdout crops rectified from the ground truth.
    pub eval_accuracy: f64,
    /// Mean boundary point error on holdout crops, crop pixels.
    pub eval_bp_error: f64,
    pub eval_instances: usize,
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (epoch as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// One optimizer step on the instances `batch` of `(sample, instance)`.
pub fn train_step(
    spotter: &mut Spotter,
    samples: &[Sample],
    batch: &[(usize, usize)],
    cfg: &TrainConfig,
    lr: f64,
    rng: &mut impl Rng,
) -> Result<super::LossBreakdown> {
    let sc = spotter.config.clone();
    let (h, w) = (sc.crop_height, sc.crop_width);
    let mut bp_crops = Vec::with_capacity(batch.len());
    let mut offsets = Vec::with_capacity(batch.len());
    let mut rec_crops = Vec::with_capacity(batch.len());
    let mut texts = Vec::with_capacity(batch.len());
    for &(si, ii) in batch {
        let s = &samples[si];
        let inst = &s.annotation.instances[ii];
        let ex = make_training_example(&s.image, inst, sc.k, h, w, cfg.jitter, sc.proposals, rng)?;
        bp_crops.push(ex.crop);
        offsets.push(ex.targets);
        texts.push(ex.text);
        rec_crops.push(recognition_crop(&s.image, inst, sc.k, h, w, cfg.point_jitter, sc.tps_lambda, rng)?);
    }
    let bx = stack_crops(&bp_crops, h, w)?;
    let rx = stack_crops(&rec_crops, h, w)?;
    spotter.zero_grad();
    let loss = spotter.loss_and_backward(&bx, &offsets, &rx, &texts, Mode::Train)?;
    if !loss.total.is_finite() {
        return Err(Error::Config(format!("loss diverged: {loss:?}")));
    }
    sgd_update(&mut spotter.params_mut(), lr, cfg.momentum, cfg.weight_decay)?;
    Ok(loss)
}

/// Recognition accuracy and boundary error on ground-truth derived crops.
pub fn holdout_metrics(spotter: &mut Spotter, samples: &[Sample], cfg: &TrainConfig) -> Result<(f64, f64, usize)> {
    let sc = spotter.config.clone();
    let (h, w) = (sc.crop_height, sc.crop_width);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0xE7A1));
    let pairs: Vec<(usize, usize)> = samples
        .iter()
        .enumerate()
        .flat_map(|(si, s)| (0..s.annotation.instances.len()).map(move |ii| (si, ii)))
        .take(cfg.eval_limit)
        .collect();
    if pairs.is_empty() {
        return Ok((0.0, 0.0, 0));
    }
    let defaults = crate::geometry::default_points(w as f64, h as f64, sc.k)?;
    let (mut correct, mut err_sum, mut err_n) = (0usize, 0.0, 0usize);
    for chunk in pairs.chunks(32) {
        let mut rec = Vec::with_capacity(chunk.len());
        let mut bp = Vec::with_capacity(chunk.len());
        let mut truth = Vec::with_capacity(chunk.len());
        for &(si, ii) in chunk {
            let s = &samples[si];
            let inst = &s.annotation.instances[ii];
            rec.push(recognition_crop(&s.image, inst, sc.k, h, w, 0.0, sc.tps_lambda, &mut rng)?);
            let ex = make_training_example(&s.image, inst, sc.k, h, w, cfg.eval_jitter, sc.proposals, &mut rng)?;
            bp.push(ex.crop);
            truth.push((inst.text.as_str(), ex.boundary));
        }
        let decoded = spotter.recognizer.recognize(&rec, sc.max_decode)?;
        let preds = spotter.bpdn.predict_batch(&bp)?;
        for ((d, off), (text, boundary)) in decoded.iter().zip(&preds).zip(&truth) {
            correct += usize::from(d.text == *text);
            let p = decode_offsets(&defaults, off, w as f64, h as f64)?;
            for (a, b) in p.points().iter().zip(boundary.points()) {
                err_sum += a.dist(&b);
                err_n += 1;
            }
        }
    }
    Ok((correct as f64 / pairs.len() as f64, err_sum / err_n as f64, pairs.len()))
}

/// Trains for `cfg.epochs` epochs. After every epoch the holdout set is
/// scored and `on_epoch` is called (checkpointing, logging). Deterministic
/// for a fixed seed.
pub fn train_loop(
    spotter: &mut Spotter,
    samples: &[Sample],
    holdout: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochMetrics, &Spotter) -> Result<()>,
) -> Result<Vec<EpochMetrics>> {
    cfg.validate()?;
    let pairs: Vec<(usize, usize)> = samples
        .iter()
        .enumerate()
        .flat_map(|(si, s)| (0..s.annotation.instances.len()).map(move |ii| (si, ii)))
        .collect();
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = epoch_rng(cfg.seed, epoch);
        let mut order = pairs.clone();
        order.shuffle(&mut rng);
        let lr = cfg.lr_at(epoch);
        let (mut bp, mut rec, mut steps) = (0.0, 0.0, 0usize);
        for batch in order.chunks(cfg.batch_size) {
            let l = train_step(spotter, samples, batch, cfg, lr, &mut rng)?;
            bp += l.boundary;
            rec += l.recognition;
            steps += 1;
        }
        let (acc, bp_err, n_eval) = holdout_metrics(spotter, holdout, cfg)?;
        let m = EpochMetrics {
            kind: "train_epoch".into(),
            epoch: epoch + 1,
            lr,
            steps,
            l_bp: bp / steps as f64,
            l_recog: rec / steps as f64,
            total: (bp + rec) / steps as f64,
            eval_accuracy: acc,
            eval_bp_error: bp_err,
            eval_instances: n_eval,
        };
        on_epoch(&m, spotter)?;
        log.push(m);
    }
    Ok(log)
}
