//! Recognition branch: a three-block conv/pool encoder that turns a
//! rectified crop into a feature sequence, and an attention GRU decoder.
//!
//! At step t the decoder scores every feature column against the previous
//! state, `e_j = w . tanh(W s + V F_j + b)`, pools the features with the
//! softmax of those scores, feeds `[g, onehot(y_prev)]` to the GRU and
//! projects the new state onto the alphabet. The new state doubles as the
//! output vector.

use rand::Rng;

use super::charset::{self, CHARSET_SIZE, EOS};
use crate::error::{Error, Result};
use crate::micronet::layers::{BnCache, ConvCache, GruCache, PoolCache};
use crate::micronet::{
    activation_backward, activation_forward, gemm, log_softmax, log_softmax_backward, softmax_row, Activation,
    BatchNorm2d, Buffer, Conv2d, GruCell, Linear, MaxPool2d, Mode, Module, Param, Tensor,
};
use crate::rectify::ImageBuffer;


#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RecognizerConfig {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub hidden: usize,
    pub attention: usize,
}

/// Additive attention parameters.
#[derive(Debug, Clone)]
pub struct Attention {
    /// `W`, applied to the previous state: `(hidden, attention)`.
    pub w_state: Param,
    /// `V`, applied to each feature column: `(channels, attention)`.
    pub w_feat: Param,
    pub bias: Param,
    /// `w`, reducing the tanh activations to a score.
    pub score: Param,
}

impl Module for Attention {
    fn params(&self) -> Vec<&Param> {
        vec![&self.w_state, &self.w_feat, &self.bias, &self.score]
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.w_state, &mut self.w_feat, &mut self.bias, &mut self.score]
    }
}

pub struct Recognizer {
    pub cfg: RecognizerConfig,
    pub convs: Vec<Conv2d>,
    pub norms: Vec<BatchNorm2d>,
    pub pools: Vec<MaxPool2d>,
    pub attention: Attention,
    pub gru: GruCell,
    pub out: Linear,
}

struct EncoderBlock {
    conv: ConvCache,
    bn: BnCache,
    pre: Tensor,
    post: Tensor,
    pool: PoolCache,
    pooled_w: usize,
    crop_offset: usize,
}

pub struct EncoderCache {
    blocks: Vec<EncoderBlock>,
    final_shape: [usize; 4],
}

/// One decoder step for a batch.
pub struct StepOutput {
    /// `(N, |S|)` log-probabilities.
    pub logp: Tensor,
    /// `(N, hidden)` new state.
    pub state: Tensor,
    /// `(N, n)` attention weights, row-major.
    pub alpha: Vec<f64>,
}

pub struct StepCache {
    th: Vec<f64>,
    alpha: Vec<f64>,
    s_prev: Tensor,
    gru: GruCache,
    s_new: Tensor,
    logp: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecodeResult {
    pub text: String,
    /// Symbol indices including the final end-of-sequence, if reached.
    pub symbols: Vec<usize>,
    /// Full output distribution per step.
    pub step_probs: Vec<Vec<f64>>,
    /// Attention weights per step over the feature columns.
    pub attention: Vec<Vec<f64>>,
}

impl DecodeResult {
    /// Mean over steps of the chosen symbol's probability.
    pub fn confidence(&self) -> f64 {
        if self.symbols.is_empty() {
            return 0.0;
        }
        self.symbols
            .iter()
            .zip(&self.step_probs)
            .map(|(&s, p)| p[s])
            .sum::<f64>()
            / self.symbols.len() as f64
    }
}

const POOL_SPECS: [(usize, usize, (usize, usize)); 3] = [(2, 1, (0, 0)), (2, 1, (0, 1)), (2, 1, (0, 1))];

impl Recognizer {
    pub fn new(cfg: RecognizerConfig, rng: &mut impl Rng) -> Self {
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        for i in 0..3 {
            let cin = if i == 0 { 1 } else { cfg.channels };
            convs.push(Conv2d::new(&format!("rec.conv{i}"), cin, cfg.channels, 3, 1, (1, 1), rng));
            norms.push(BatchNorm2d::new(&format!("rec.bn{i}"), cfg.channels));
        }
        let pools = POOL_SPECS.iter().map(|&(k, s, p)| MaxPool2d::new(k, s, p)).collect();
        let (c, h, a) = (cfg.channels, cfg.hidden, cfg.attention);
        let attention = Attention {
            w_state: Param::uniform("rec.att.w_state", &[h, a], h, rng),
            w_feat: Param::uniform("rec.att.w_feat", &[c, a], c, rng),
            bias: Param::uniform("rec.att.bias", &[a], c, rng),
            score: Param::uniform("rec.att.score", &[a], a, rng),
        };
        Self {
            cfg,
            convs,
            norms,
            pools,
            attention,
            gru: GruCell::new("rec.gru", c + CHARSET_SIZE, h, rng),
            out: Linear::new("rec.out", h, CHARSET_SIZE, rng),
        }
    }

    /// Encoder output length for the configured input width.
    pub fn sequence_len(&self) -> usize {
        self.cfg.width
    }

    // ---------------------------------------------------------------- encoder

    /// `(N, 1, H, W)` crops to an `(N, n, C)` feature sequence: three
    /// conv-bn-relu + max-pool blocks, width center-cropped back to the input
    /// width whenever a padded pool widens it, then a mean over height.
    pub fn encode(&mut self, x: &Tensor, mode: Mode) -> Result<(Tensor, EncoderCache)> {
        x.expect_rank("encoder input", 4)?;
        let n = x.dim(0);
        x.expect_shape("encoder input", &[n, 1, self.cfg.height, self.cfg.width])?;
        let mut h = x.clone();
        let mut blocks = Vec::with_capacity(3);
        for i in 0..3 {
            let (c, conv) = self.convs[i].forward(&h)?;
            let (b, bn) = self.norms[i].forward(&c, mode)?;
            let r = activation_forward(Activation::Relu, &b);
            let (p, pool) = self.pools[i].forward(&r)?;
            let pooled_w = p.dim(3);
            let (cropped, crop_offset) = center_crop_width(&p, self.cfg.width);
            blocks.push(EncoderBlock {
                conv,
                bn,
                pre: b,
                post: r,
                pool,
                pooled_w,
                crop_offset,
            });
            h = cropped;
        }
        let (c, hh, w) = (h.dim(1), h.dim(2), h.dim(3));
        let mut f = Tensor::zeros(&[n, w, c]);
        let inv = 1.0 / hh as f64;
        for b in 0..n {
            for ch in 0..c {
                for row in 0..hh {
                    let src = &h.data()[((b * c + ch) * hh + row) * w..((b * c + ch) * hh + row + 1) * w];
                    for (j, v) in src.iter().enumerate() {
                        f.data_mut()[(b * w + j) * c + ch] += v * inv;
                    }
                }
            }
        }
        Ok((
            f,
            EncoderCache {
                blocks,
                final_shape: [n, c, hh, w],
            },
        ))
    }

    pub fn encode_backward(&mut self, cache: &EncoderCache, df: &Tensor) -> Result<()> {
        let [n, c, hh, w] = cache.final_shape;
        df.expect_shape("encoder grad", &[n, w, c])?;
        let mut g = Tensor::zeros(&[n, c, hh, w]);
        let inv = 1.0 / hh as f64;
        for b in 0..n {
            for ch in 0..c {
                for row in 0..hh {
                    for j in 0..w {
                        g.data_mut()[((b * c + ch) * hh + row) * w + j] = df.data()[(b * w + j) * c + ch] * inv;
                    }
                }
            }
        }
        for i in (0..3).rev() {
            let blk = &cache.blocks[i];
            let gp = uncrop_width(&g, blk.pooled_w, blk.crop_offset);
            let dr = self.pools[i].backward(&blk.pool, &gp)?;
            let db = activation_backward(Activation::Relu, &blk.pre, &blk.post, &dr);
            let dc = self.norms[i].backward(&blk.bn, &db)?;
            g = self.convs[i].backward(&blk.conv, &dc)?;
        }
        Ok(())
    }

    /// Feature sequence `(n, C)` for one rectified crop, eval mode.
    pub fn encoder_forward(&mut self, crop: &ImageBuffer) -> Result<Tensor> {
        let x = super::bpdn::stack_crops(std::slice::from_ref(crop), self.cfg.height, self.cfg.width)?;
        let (f, _) = self.encode(&x, Mode::Eval)?;
        let (n, c) = (f.dim(1), f.dim(2));
        f.reshape(&[n, c])
    }

    // ---------------------------------------------------------------- decoder

    fn check_features(&self, f: &Tensor) -> Result<(usize, usize)> {
        f.expect_rank("features", 3)?;
        if f.dim(2) != self.cfg.channels || f.dim(1) == 0 {
            return Err(Error::ShapeMismatch(format!(
                "features must be (N, n>0, {}), got {:?}",
                self.cfg.channels,
                f.shape()
            )));
        }
        Ok((f.dim(0), f.dim(1)))
    }

    /// `V F_j` for every sample and column: `(N * n, attention)`.
    pub fn project_features(&self, f: &Tensor) -> Vec<f64> {
        let (nb, n, c) = (f.dim(0), f.dim(1), f.dim(2));
        let a = self.cfg.attention;
        let mut vf = vec![0.0; nb * n * a];
        gemm(nb * n, c, a, 1.0, f.data(), false, self.attention.w_feat.value.data(), false, 0.0, &mut vf);
        vf
    }

    /// Attention weights and pooled features `g` for each sample.
    pub(crate) fn attend_batch(&self, f: &Tensor, vf: &[f64], s_prev: &Tensor) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let (nb, n, c) = (f.dim(0), f.dim(1), f.dim(2));
        let (a, dh) = (self.cfg.attention, self.cfg.hidden);
        let mut ws = vec![0.0; nb * a];
        gemm(nb, dh, a, 1.0, s_prev.data(), false, self.attention.w_state.value.data(), false, 0.0, &mut ws);
        let bias = self.attention.bias.value.data();
        let score = self.attention.score.value.data();
        let mut th = vec![0.0; nb * n * a];
        let mut alpha = vec![0.0; nb * n];
        let mut g = vec![0.0; nb * c];
        let mut e = vec![0.0; n];
        for b in 0..nb {
            for j in 0..n {
                let row = (b * n + j) * a;
                let mut acc = 0.0;
                for k in 0..a {
                    let t = (vf[row + k] + ws[b * a + k] + bias[k]).tanh();
                    th[row + k] = t;
                    acc += t * score[k];
                }
                e[j] = acc;
            }
            softmax_row(&e, &mut alpha[b * n..(b + 1) * n]);
            let gb = &mut g[b * c..(b + 1) * c];
            for j in 0..n {
                let w = alpha[b * n + j];
                for (gv, fv) in gb.iter_mut().zip(&f.data()[(b * n + j) * c..(b * n + j + 1) * c]) {
                    *gv += w * fv;
                }
            }
        }
        (th, alpha, g)
    }

    /// Attention over one feature sequence `(n, C)` given a state of length
    /// `hidden`. Returns `(alpha, g)`.
    pub fn attend(&self, f: &Tensor, s_prev: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        f.expect_rank("features", 2)?;
        let f3 = f.clone().reshape(&[1, f.dim(0), f.dim(1)])?;
        self.check_features(&f3)?;
        if s_prev.len() != self.cfg.hidden {
            return Err(Error::ShapeMismatch(format!("state length {} != {}", s_prev.len(), self.cfg.hidden)));
        }
        let s = Tensor::from_vec(&[1, self.cfg.hidden], s_prev.to_vec())?;
        let vf = self.project_features(&f3);
        let (_, alpha, g) = self.attend_batch(&f3, &vf, &s);
        Ok((alpha, g))
    }

    pub fn step(&self, f: &Tensor, vf: &[f64], s_prev: &Tensor, y_prev: &[usize]) -> Result<(StepOutput, StepCache)> {
        let (nb, _) = self.check_features(f)?;
        s_prev.expect_shape("decoder state", &[nb, self.cfg.hidden])?;
        if y_prev.len() != nb {
            return Err(Error::ShapeMismatch(format!("{} previous symbols for batch {nb}", y_prev.len())));
        }
        let c = self.cfg.channels;
        let (th, alpha, g) = self.attend_batch(f, vf, s_prev);
        let dx = c + CHARSET_SIZE;
        let mut x = vec![0.0; nb * dx];
        for b in 0..nb {
            if y_prev[b] >= CHARSET_SIZE {
                return Err(Error::IndexOutOfRange {
                    index: y_prev[b],
                    size: CHARSET_SIZE,
                });
            }
            x[b * dx..b * dx + c].copy_from_slice(&g[b * c..(b + 1) * c]);
            x[b * dx + c + y_prev[b]] = 1.0;
        }
        let x = Tensor::from_vec(&[nb, dx], x)?;
        let (s_new, gru) = self.gru.forward(&x, s_prev)?;
        let logits = self.out.forward(&s_new)?;
        let logp = log_softmax(&logits);
        Ok((
            StepOutput {
                logp: logp.clone(),
                state: s_new.clone(),
                alpha: alpha.clone(),
            },
            StepCache {
                th,
                alpha,
                s_prev: s_prev.clone(),
                gru,
                s_new,
                logp,
            },
        ))
    }

    /// Backward through one step. `df` and `dvf` accumulate gradients for
    /// the features and their projections; returns the previous-state
    /// gradient.
    pub fn step_backward(
        &mut self,
        f: &Tensor,
        cache: &StepCache,
        dlogp: &Tensor,
        ds_next: &Tensor,
        df: &mut [f64],
        dvf: &mut [f64],
    ) -> Result<Tensor> {
        let (nb, c) = (f.dim(0), f.dim(2));
        let dlogits = log_softmax_backward(&cache.logp, dlogp);
        let mut ds_new = self.out.backward(&cache.s_new, &dlogits)?;
        ds_new.add_assign(ds_next);
        let (dx, mut ds_prev) = self.gru.backward(&cache.gru, &ds_new)?;
        let dxd = dx.data();
        let dx_w = c + CHARSET_SIZE;

        let mut dg = vec![0.0; nb * c];
        for b in 0..nb {
            dg[b * c..(b + 1) * c].copy_from_slice(&dxd[b * dx_w..b * dx_w + c]);
        }
        let ds_att = self.attend_backward(f, &cache.th, &cache.alpha, &cache.s_prev, &dg, df, dvf)?;
        ds_prev.add_assign(&ds_att);
        Ok(ds_prev)
    }

    /// Backward of [`Self::attend_batch`] given `dg` `(N, C)`. Accumulates
    /// attention parameter gradients, adds into `df` and `dvf`, and returns
    /// the gradient with respect to the previous state.
    pub fn attend_backward(
        &mut self,
        f: &Tensor,
        th: &[f64],
        alpha_all: &[f64],
        s_prev: &Tensor,
        dg_all: &[f64],
        df: &mut [f64],
        dvf: &mut [f64],
    ) -> Result<Tensor> {
        let (nb, n, c) = (f.dim(0), f.dim(1), f.dim(2));
        let (a, dh) = (self.cfg.attention, self.cfg.hidden);
        let score = self.attention.score.value.data().to_vec();
        let mut dscore = vec![0.0; a];
        let mut dbias = vec![0.0; a];
        let mut dws = vec![0.0; nb * a];
        let mut dalpha = vec![0.0; n];
        for b in 0..nb {
            let dg = &dg_all[b * c..(b + 1) * c];
            let alpha = &alpha_all[b * n..(b + 1) * n];
            for j in 0..n {
                let fj = &f.data()[(b * n + j) * c..(b * n + j + 1) * c];
                dalpha[j] = dg.iter().zip(fj).map(|(x, y)| x * y).sum();
                let dfj = &mut df[(b * n + j) * c..(b * n + j + 1) * c];
                for (d, g) in dfj.iter_mut().zip(dg) {
                    *d += alpha[j] * g;
                }
            }
            let dot: f64 = alpha.iter().zip(&dalpha).map(|(x, y)| x * y).sum();
            for j in 0..n {
                let de = alpha[j] * (dalpha[j] - dot);
                if de == 0.0 {
                    continue;
                }
                let row = (b * n + j) * a;
                for k in 0..a {
                    let t = th[row + k];
                    dscore[k] += de * t;
                    let dpre = de * score[k] * (1.0 - t * t);
                    dbias[k] += dpre;
                    dws[b * a + k] += dpre;
                    dvf[row + k] += dpre;
                }
            }
        }
        for (g, v) in self.attention.score.grad_mut().data_mut().iter_mut().zip(&dscore) {
            *g += v;
        }
        for (g, v) in self.attention.bias.grad_mut().data_mut().iter_mut().zip(&dbias) {
            *g += v;
        }
        gemm(dh, nb, a, 1.0, s_prev.data(), true, &dws, false, 1.0, self.attention.w_state.grad_mut().data_mut());
        let mut ds = Tensor::zeros(&[nb, dh]);
        gemm(nb, a, dh, 1.0, &dws, false, self.attention.w_state.value.data(), true, 0.0, ds.data_mut());
        Ok(ds)
    }

    /// Closes the feature-projection branch: `dV += F^T dVF`, `dF += dVF V^T`.
    pub fn project_features_backward(&mut self, f: &Tensor, dvf: &[f64], df: &mut [f64]) {
        let (nb, n, c) = (f.dim(0), f.dim(1), f.dim(2));
        let a = self.cfg.attention;
        gemm(c, nb * n, a, 1.0, f.data(), true, dvf, false, 1.0, self.attention.w_feat.grad_mut().data_mut());
        gemm(nb * n, a, c, 1.0, dvf, false, self.attention.w_feat.value.data(), true, 1.0, df);
    }

    pub fn initial_state(&self, batch: usize) -> Tensor {
        Tensor::zeros(&[batch, self.cfg.hidden])
    }

    /// Teacher-forced recognition loss, `-(1/T) sum_t log p(y_t)` per
    /// sample, averaged over the batch. With `backward`, decoder gradients
    /// are accumulated and the feature gradient is returned.
    pub fn sequence_loss(&mut self, f: &Tensor, targets: &[Vec<usize>], backward: bool) -> Result<(f64, Option<Tensor>)> {
        let (nb, _) = self.check_features(f)?;
        if targets.len() != nb {
            return Err(Error::ShapeMismatch(format!("{} targets for batch {nb}", targets.len())));
        }
        for t in targets {
            if t.is_empty() {
                return Err(Error::EmptyTarget);
            }
            if let Some(&bad) = t.iter().find(|&&s| s >= CHARSET_SIZE) {
                return Err(Error::IndexOutOfRange {
                    index: bad,
                    size: CHARSET_SIZE,
                });
            }
        }
        let t_max = targets.iter().map(Vec::len).max().unwrap_or(0);
        let vf = self.project_features(f);
        let mut state = self.initial_state(nb);
        let mut caches = Vec::with_capacity(t_max);
        let mut loss = 0.0;
        for t in 0..t_max {
            let y_prev: Vec<usize> = targets
                .iter()
                .map(|tg| if t == 0 { EOS } else { *tg.get(t - 1).unwrap_or(&EOS) })
                .collect();
            let (out, cache) = self.step(f, &vf, &state, &y_prev)?;
            for (b, tg) in targets.iter().enumerate() {
                if t < tg.len() {
                    loss -= out.logp.data()[b * CHARSET_SIZE + tg[t]] / (tg.len() * nb) as f64;
                }
            }
            state = out.state;
            if backward {
                caches.push(cache);
            }
        }
        if !backward {
            return Ok((loss, None));
        }
        let mut df = vec![0.0; f.len()];
        let mut dvf = vec![0.0; vf.len()];
        let mut ds = self.initial_state(nb);
        for t in (0..t_max).rev() {
            let mut dlogp = Tensor::zeros(&[nb, CHARSET_SIZE]);
            for (b, tg) in targets.iter().enumerate() {
                if t < tg.len() {
                    dlogp.data_mut()[b * CHARSET_SIZE + tg[t]] = -1.0 / (tg.len() * nb) as f64;
                }
            }
            ds = self.step_backward(f, &caches[t], &dlogp, &ds, &mut df, &mut dvf)?;
        }
        self.project_features_backward(f, &dvf, &mut df);
        Ok((loss, Some(Tensor::from_vec(f.shape(), df)?)))
    }

    /// Loss of one feature sequence `(n, C)` against a target ending in
    /// end-of-sequence, without gradients.
    pub fn recognition_loss(&mut self, f: &Tensor, target: &[usize]) -> Result<f64> {
        if target.is_empty() {
            return Err(Error::EmptyTarget);
        }
        f.expect_rank("features", 2)?;
        let f3 = f.clone().reshape(&[1, f.dim(0), f.dim(1)])?;
        Ok(self.sequence_loss(&f3, &[target.to_vec()], false)?.0)
    }

    /// Encoder and decoder forward and backward for a training batch.
    pub fn loss_and_backward(&mut self, x: &Tensor, targets: &[Vec<usize>], mode: Mode) -> Result<f64> {
        let (f, cache) = self.encode(x, mode)?;
        let (loss, df) = self.sequence_loss(&f, targets, true)?;
        self.encode_backward(&cache, &df.expect("backward requested"))?;
        Ok(loss)
    }

    /// Greedy decoding of a batch of feature sequences `(N, n, C)`; each
    /// sample stops at end-of-sequence or after `max_t` steps.
    pub fn decode_greedy_batch(&self, f: &Tensor, max_t: usize) -> Result<Vec<DecodeResult>> {
        let (nb, _) = self.check_features(f)?;
        let vf = self.project_features(f);
        let mut state = self.initial_state(nb);
        let mut y_prev = vec![EOS; nb];
        let mut done = vec![false; nb];
        let mut results: Vec<DecodeResult> = (0..nb)
            .map(|_| DecodeResult {
                text: String::new(),
                symbols: Vec::new(),
                step_probs: Vec::new(),
                attention: Vec::new(),
            })
            .collect();
        let n = f.dim(1);
        for _ in 0..max_t.max(1) {
            if done.iter().all(|&d| d) {
                break;
            }
            let (out, _) = self.step(f, &vf, &state, &y_prev)?;
            for b in 0..nb {
                if done[b] {
                    continue;
                }
                let logp = &out.logp.data()[b * CHARSET_SIZE..(b + 1) * CHARSET_SIZE];
                let probs: Vec<f64> = logp.iter().map(|v| v.exp()).collect();
                let best = (0..CHARSET_SIZE)
                    .max_by(|&i, &j| logp[i].total_cmp(&logp[j]).then(j.cmp(&i)))
                    .unwrap();
                let r = &mut results[b];
                r.symbols.push(best);
                r.step_probs.push(probs);
                r.attention.push(out.alpha[b * n..(b + 1) * n].to_vec());
                y_prev[b] = best;
                if best == EOS {
                    done[b] = true;
                }
            }
            state = out.state;
        }
        for r in &mut results {
            r.text = charset::decode(&r.symbols);
        }
        Ok(results)
    }

    /// Greedy decoding of one feature sequence `(n, C)`.
    pub fn decode_greedy(&self, f: &Tensor, max_t: usize) -> Result<DecodeResult> {
        f.expect_rank("features", 2)?;
        let f3 = f.clone().reshape(&[1, f.dim(0), f.dim(1)])?;
        Ok(self.decode_greedy_batch(&f3, max_t)?.remove(0))
    }

    /// Encodes and greedily decodes rectified crops, eval mode.
    pub fn recognize(&mut self, crops: &[ImageBuffer], max_t: usize) -> Result<Vec<DecodeResult>> {
        if crops.is_empty() {
            return Ok(Vec::new());
        }
        let x = super::bpdn::stack_crops(crops, self.cfg.height, self.cfg.width)?;
        let (f, _) = self.encode(&x, Mode::Eval)?;
        self.decode_greedy_batch(&f, max_t)
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

impl Module for Recognizer {
    fn params(&self) -> Vec<&Param> {
        let mut out = Vec::new();
        for (c, b) in self.convs.iter().zip(&self.norms) {
            out.extend(c.params());
            out.extend(b.params());
        }
        out.extend(self.attention.params());
        out.extend(self.gru.params());
        out.extend(self.out.params());
        out
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out = Vec::new();
        for (c, b) in self.convs.iter_mut().zip(self.norms.iter_mut()) {
            out.extend(c.params_mut());
            out.extend(b.params_mut());
        }
        out.extend(self.attention.params_mut());
        out.extend(self.gru.params_mut());
        out.extend(self.out.params_mut());
        out
    }
}

/// Keeps `width` columns centered in a wider `(N, C, H, W)` map.
fn center_crop_width(x: &Tensor, width: usize) -> (Tensor, usize) {
    let w = x.dim(3);
    if w <= width {
        return (x.clone(), 0);
    }
    let off = (w - width) / 2;
    let (n, c, h) = (x.dim(0), x.dim(1), x.dim(2));
    let mut out = Tensor::zeros(&[n, c, h, width]);
    for (dst, src) in out.data_mut().chunks_exact_mut(width).zip(x.data().chunks_exact(w)) {
        dst.copy_from_slice(&src[off..off + width]);
    }
    (out, off)
}

fn uncrop_width(g: &Tensor, full_w: usize, off: usize) -> Tensor {
    let width = g.dim(3);
    if width == full_w {
        return g.clone();
    }
    let (n, c, h) = (g.dim(0), g.dim(1), g.dim(2));
    let mut out = Tensor::zeros(&[n, c, h, full_w]);
    for (dst, src) in out.data_mut().chunks_exact_mut(full_w).zip(g.data().chunks_exact(width)) {
        dst[off..off + width].copy_from_slice(src);
    }
    out
}
