//! Boundary point regressor: four 3x3 conv-bn-relu blocks and one fully
//! connected layer producing 4K offsets relative to the default points.

use rand::Rng;

use crate::error::{Error, Result};
use crate::geometry::OffsetVector;
use crate::micronet::layers::{BnCache, ConvCache};
use crate::micronet::{
    activation_backward, activation_forward, smooth_l1, Activation, BatchNorm2d, Buffer, Conv2d, Linear, Mode,
    Module, Param, Tensor,
};
use crate::rectify::ImageBuffer;

/// Smooth-L1 transition used for boundary offsets.
pub const SMOOTH_L1_BETA: f64 = 1.0;
/// Conv strides. Downsampling keeps the fully connected fan-in small.
pub const STRIDES: [usize; 4] = [1, 2, 2, 2];

pub struct Bpdn {
    pub k: usize,
    pub height: usize,
    pub width: usize,
    feat_h: usize,
    feat_w: usize,
    pub convs: Vec<Conv2d>,
    pub norms: Vec<BatchNorm2d>,
    pub fc: Linear,
}

pub struct BpdnCache {
    blocks: Vec<(ConvCache, BnCache, Tensor, Tensor)>,
    flat: Tensor,
}

impl Bpdn {
    /// The final layer starts at zero, so untrained predictions are exactly
    /// the default points.
    pub fn new(k: usize, channels: usize, height: usize, width: usize, rng: &mut impl Rng) -> Self {
        Self::with_strides(k, channels, height, width, STRIDES, rng)
    }

    pub fn with_strides(
        k: usize,
        channels: usize,
        height: usize,
        width: usize,
        strides: [usize; 4],
        rng: &mut impl Rng,
    ) -> Self {
        let mut convs = Vec::with_capacity(4);
        let mut norms = Vec::with_capacity(4);
        let (mut fh, mut fw) = (height, width);
        for (i, &stride) in strides.iter().enumerate() {
            let cin = if i == 0 { 1 } else { channels };
            convs.push(Conv2d::new(&format!("bpdn.conv{i}"), cin, channels, 3, stride, (1, 1), rng));
            norms.push(BatchNorm2d::new(&format!("bpdn.bn{i}"), channels));
            fh = (fh - 1) / stride + 1;
            fw = (fw - 1) / stride + 1;
        }
        Self {
            k,
            height,
            width,
            feat_h: fh,
            feat_w: fw,
            convs,
            norms,
            fc: Linear::zeros("bpdn.fc", channels * fh * fw, 4 * k),
        }
    }

    pub fn forward(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, BpdnCache)> {
        x.expect_rank("bpdn input", 4)?;
        let n = x.dim(0);
        x.expect_shape("bpdn input", &[n, 1, self.height, self.width])?;
        let mut h = x.clone();
        let mut blocks = Vec::with_capacity(4);
        for (conv, bn) in self.convs.iter().zip(self.norms.iter_mut()) {
            let (c, cc) = conv.forward(&h)?;
            let (b, bc) = bn.forward(&c, mode)?;
            let r = activation_forward(Activation::Relu, &b);
            blocks.push((cc, bc, b, r.clone()));
            h = r;
        }
        let flat = h.reshape(&[n, self.fc.inputs()])?;
        let out = self.fc.forward(&flat)?;
        Ok((out, BpdnCache { blocks, flat }))
    }

    pub fn backward(&mut self, cache: &BpdnCache, dout: &Tensor) -> Result<()> {
        let n = cache.flat.dim(0);
        let dflat = self.fc.backward(&cache.flat, dout)?;
        let mut g = dflat.reshape(&[n, self.convs[0].weight.value.dim(0), self.feat_h, self.feat_w])?;
        for i in (0..self.convs.len()).rev() {
            let (cc, bc, pre, post) = &cache.blocks[i];
            let dr = activation_backward(Activation::Relu, pre, post, &g);
            let db = self.norms[i].backward(bc, &dr)?;
            g = self.convs[i].backward(cc, &db)?;
        }
        Ok(())
    }

    /// Offsets for one crop, eval mode.
    pub fn predict(&mut self, crop: &ImageBuffer) -> Result<OffsetVector> {
        Ok(self.predict_batch(std::slice::from_ref(crop))?.remove(0))
    }

    pub fn predict_batch(&mut self, crops: &[ImageBuffer]) -> Result<Vec<OffsetVector>> {
        let x = self.stack(crops)?;
        let (out, _) = self.forward(&x, Mode::Eval)?;
        Ok(out
            .data()
            .chunks_exact(4 * self.k)
            .map(|c| OffsetVector { values: c.to_vec() })
            .collect())
    }

    pub fn stack(&self, crops: &[ImageBuffer]) -> Result<Tensor> {
        stack_crops(crops, self.height, self.width)
    }

    /// Boundary loss averaged over the batch: per instance, the Smooth-L1
    /// sum over all 4K offset components divided by 2K. Accumulates
    /// gradients and returns the loss.
    pub fn loss_and_backward(&mut self, x: &Tensor, targets: &[OffsetVector], mode: Mode) -> Result<f64> {
        let (pred, cache) = self.forward(x, mode)?;
        let (loss, grad) = self.boundary_loss(&pred, targets)?;
        self.backward(&cache, &grad)?;
        Ok(loss)
    }

    pub fn boundary_loss(&self, pred: &Tensor, targets: &[OffsetVector]) -> Result<(f64, Tensor)> {
        let n = targets.len();
        let mut flat = Vec::with_capacity(n * 4 * self.k);
        for t in targets {
            if t.values.len() != 4 * self.k {
                return Err(Error::ArityMismatch {
                    expected: 4 * self.k,
                    got: t.values.len(),
                });
            }
            flat.extend_from_slice(&t.values);
        }
        let target = Tensor::from_vec(&[n, 4 * self.k], flat)?;
        let (sum, mut grad) = smooth_l1(pred, &target, SMOOTH_L1_BETA)?;
        let scale = 1.0 / (2.0 * self.k as f64 * n as f64);
        for g in grad.data_mut() {
            *g *= scale;
        }
        Ok((sum * scale, grad))
    }

    pub fn buffers(&self) -> Vec<&Buffer> {
        self.norms.iter().flat_map(|b| [&b.running_mean, &b.running_var]).collect()
    }

    pub fn buffers_mut(&mut self) -> Vec<&mut Buffer> {
        self.norms
            .iter_mut()
            .flat_map(|b| [&mut b.running_mean, &mut b.running_var])
            .collect()
    }
}

impl Module for Bpdn {
    fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        for (c, b) in self.convs.iter().zip(&self.norms) {
            out.extend(c.params());
            out.extend(b.params());
        }
        out.extend(self.fc.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for (c, b) in self.convs.iter_mut().zip(self.norms.iter_mut()) {
            out.extend(c.params_mut());
            out.extend(b.params_mut());
        }
        out.extend(self.fc.params_mut());
        out
    }
}

/// Packs single-channel crops into an `(N, 1, H, W)` tensor.
pub fn stack_crops(crops: &[ImageBuffer], height: usize, width: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(crops.len() * height * width);
    for c in crops {
        if c.height != height || c.width != width || c.channels != 1 {
            return Err(Error::ShapeMismatch(format!(
                "expected {height}x{width}x1 crop, got {}x{}x{}",
                c.height, c.width, c.channels
            )));
        }
        data.extend_from_slice(&c.data);
    }
    Tensor::from_vec(&[crops.len(), 1, height, width], data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{decode_offsets, default_points};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fresh_model_predicts_default_points() {
        let mut m = Bpdn::new(7, 4, 8, 64, &mut ChaCha8Rng::seed_from_u64(0));
        let crop = ImageBuffer::from_fn(8, 64, |i, j| ((i + j) % 5) as f64 / 4.0);
        let off = m.predict(&crop).unwrap();
        assert_eq!(off.values.len(), 28);
        assert!(off.values.iter().all(|&v| v == 0.0));
        let d = default_points(64.0, 8.0, 7).unwrap();
        assert_eq!(decode_offsets(&d, &off, 64.0, 8.0).unwrap(), d);
        assert!(matches!(m.predict(&ImageBuffer::new(8, 60, 1)), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn boundary_loss_is_normalized_smooth_l1() {
        let m = Bpdn::new(3, 2, 8, 16, &mut ChaCha8Rng::seed_from_u64(0));
        let pred = Tensor::from_vec(&[2, 12], (0..24).map(|i| i as f64 * 0.1 - 1.0).collect()).unwrap();
        let targets = vec![OffsetVector::zeros(3), OffsetVector { values: vec![0.5; 12] }];
        let (loss, _) = m.boundary_loss(&pred, &targets).unwrap();
        let flat: Vec<f64> = targets.iter().flat_map(|t| t.values.clone()).collect();
        let (sum, _) = smooth_l1(&pred, &Tensor::from_vec(&[2, 12], flat).unwrap(), 1.0).unwrap();
        assert_eq!(loss, sum / (2.0 * 3.0 * 2.0));
        let exact = [
            OffsetVector { values: pred.data()[..12].to_vec() },
            OffsetVector { values: pred.data()[12..].to_vec() },
        ];
        assert_eq!(m.boundary_loss(&pred, &exact).unwrap().0, 0.0);
    }
}
