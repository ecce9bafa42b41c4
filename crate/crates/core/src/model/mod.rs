//! The boundary regressor, the recognizer, their combined loss, training
//! and the inference pipeline.

pub mod bpdn;
pub mod charset;
pub mod checkpoint;
pub mod recognizer;
pub mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use bpdn::{stack_crops, Bpdn};
pub use charset::{CHARSET_SIZE, EOS};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use recognizer::{DecodeResult, Recognizer, RecognizerConfig};
pub use train::{train_loop, EpochMetrics, TrainConfig};

use crate::data::{oracle_proposals, ProposalMode, Sample};
use crate::error::{Error, Result};
use crate::eval::{ImageSpots, SpotRecord, SpotResult};
use crate::geometry::{crop_transform, decode_offsets, default_points, OffsetVector, OrientedBox};
use crate::micronet::{Buffer, Mode, Module, Param, Tensor};
use crate::rectify::{arbitrary_roi_align, rotated_roi_align, ImageBuffer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotterConfig {
    /// Boundary points per long side.
    pub k: usize,
    pub crop_height: usize,
    pub crop_width: usize,
    pub bpdn_channels: usize,
    pub rec_channels: usize,
    pub hidden: usize,
    pub attention: usize,
    pub max_decode: usize,
    pub tps_lambda: f64,
    pub proposals: ProposalMode,
}

impl Default for SpotterConfig {
    fn default() -> Self {
        Self {
            k: 7,
            crop_height: 8,
            crop_width: 64,
            bpdn_channels: 16,
            rec_channels: 64,
            hidden: 256,
            attention: 256,
            max_decode: 32,
            tps_lambda: 1e-6,
            proposals: ProposalMode::Oriented,
        }
    }
}

impl SpotterConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k < 2 {
            return Err(Error::Config(format!("K must be >= 2, got {}", self.k)));
        }
        if self.crop_height < 8 || self.crop_width < 4 {
            return Err(Error::Config(format!(
                "crop {}x{} too small for the encoder",
                self.crop_height, self.crop_width
            )));
        }
        if [self.bpdn_channels, self.rec_channels, self.hidden, self.attention, self.max_decode].contains(&0) {
            return Err(Error::Config("layer sizes must be positive".into()));
        }
        if !(self.tps_lambda >= 0.0) {
            return Err(Error::Config("tps_lambda must be >= 0".into()));
        }
        Ok(())
    }

    pub fn recognizer(&self) -> RecognizerConfig {
        RecognizerConfig {
            height: self.crop_height,
            width: self.crop_width,
            channels: self.rec_channels,
            hidden: self.hidden,
            attention: self.attention,
        }
    }
}

/// Per-term loss values.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub boundary: f64,
    pub recognition: f64,
    pub total: f64,
}

/// BPDN and recognizer together.
pub struct Spotter {
    pub config: SpotterConfig,
    pub bpdn: Bpdn,
    pub recognizer: Recognizer,
}

impl Spotter {
    pub fn new(config: SpotterConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bpdn = Bpdn::new(config.k, config.bpdn_channels, config.crop_height, config.crop_width, &mut rng);
        let recognizer = Recognizer::new(config.recognizer(), &mut rng);
        Ok(Self {
            config,
            bpdn,
            recognizer,
        })
    }

    pub fn buffers(&self) -> Vec<&Buffer> {
        let mut b = self.bpdn.buffers();
        b.extend(self.recognizer.buffers());
        b
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Buffer> {
        let mut b = self.bpdn.buffers_mut();
        b.extend(self.recognizer.buffers_mut());
        b
    }

    /// Forward and backward of `L_bp + L_recog` for one batch: BPDN crops
    /// with offset targets, rectified crops with symbol targets.
    pub fn loss_and_backward(
        &mut self,
        bpdn_x: &Tensor,
        offsets: &[OffsetVector],
        rec_x: &Tensor,
        texts: &[Vec<usize>],
        mode: Mode,
    ) -> Result<LossBreakdown> {
        let boundary = self.bpdn.loss_and_backward(bpdn_x, offsets, mode)?;
        let recognition = self.recognizer.loss_and_backward(rec_x, texts, mode)?;
        Ok(LossBreakdown {
            boundary,
            recognition,
            total: boundary + recognition,
        })
    }

    /// Boundary points, text and confidence for every proposal.
    pub fn spot(&mut self, image: &ImageBuffer, proposals: &[OrientedBox]) -> Result<Vec<SpotResult>> {
        if proposals.is_empty() {
            return Ok(Vec::new());
        }
        let (h, w) = (self.config.crop_height, self.config.crop_width);
        let crops = proposals
            .iter()
            .map(|b| rotated_roi_align(image, b, h, w))
            .collect::<Result<Vec<_>>>()?;
        let offsets = self.bpdn.predict_batch(&crops)?;
        let defaults = default_points(w as f64, h as f64, self.config.k)?;
        let mut boundaries = Vec::with_capacity(proposals.len());
        let mut rectified = Vec::with_capacity(proposals.len());
        for (b, off) in proposals.iter().zip(&offsets) {
            let local = decode_offsets(&defaults, off, w as f64, h as f64)?;
            let inv = crop_transform(b, w as f64, h as f64)?.inverse()?;
            let bp = local.map(|p| inv.apply(p));
            rectified.push(arbitrary_roi_align(image, &bp, h, w, self.config.tps_lambda)?);
            boundaries.push(bp);
        }
        let decoded = self.recognizer.recognize(&rectified, self.config.max_decode)?;
        Ok(boundaries
            .into_iter()
            .zip(decoded)
            .map(|(boundary, d)| SpotResult {
                score: d.confidence(),
                text: d.text,
                boundary,
            })
            .collect())
    }

    /// Spots every image of `samples` from oracle proposals drawn with
    /// `jitter`; image `i` uses proposal seed `seed + i`.
    pub fn spot_samples(&mut self, samples: &[Sample], jitter: f64, seed: u64) -> Result<Vec<ImageSpots>> {
        let mode = self.config.proposals;
        let mut out = Vec::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            let props = oracle_proposals(&s.annotation.instances, jitter, seed.wrapping_add(i as u64), mode)?;
            let spots = self.spot(&s.image, &props)?;
            out.push(ImageSpots {
                image: s.annotation.image.clone(),
                spots: spots.iter().map(SpotRecord::from).collect(),
            });
        }
        Ok(out)
    }
}

impl Module for Spotter {
    fn params(&self) -> Vec<&Param> {
        let mut p = self.bpdn.params();
        p.extend(self.recognizer.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.bpdn.params_mut();
        p.extend(self.recognizer.params_mut());
        p
    }
}

/// `L_bp + L_recog` from already computed BPDN outputs and encoder
/// features, without gradients.
pub fn total_loss(
    bpdn: &Bpdn,
    recognizer: &mut Recognizer,
    offset_pred: &Tensor,
    offset_targets: &[OffsetVector],
    features: &Tensor,
    text_targets: &[Vec<usize>],
) -> Result<LossBreakdown> {
    let (boundary, _) = bpdn.boundary_loss(offset_pred, offset_targets)?;
    let (recognition, _) = recognizer.sequence_loss(features, text_targets, false)?;
    Ok(LossBreakdown {
        boundary,
        recognition,
        total: boundary + recognition,
    })
}
