//! Finite-difference gradient checks for every differentiable operator and
//! for the combined training loss.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::geometry::OffsetVector;
use crate::micronet::{
    activation_backward, activation_forward, grad_check, grad_check_module, log_softmax, log_softmax_backward,
    nll_loss, smooth_l1, Activation, BatchNorm2d, Conv2d, GradEntry, GradReport, GruCell, Linear, MaxPool2d, Mode,
    Module, Tensor,
};
use crate::model::recognizer::{Recognizer, RecognizerConfig};
use crate::model::{Spotter, SpotterConfig, CHARSET_SIZE, EOS};

pub const EPS: f64 = 1e-5;
pub const OP_TOLERANCE: f64 = 1e-4;
pub const LOSS_TOLERANCE: f64 = 1e-3;

#[derive(Debug, Clone)]
pub struct OpCheck {
    pub op: String,
    pub report: GradReport,
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub checks: Vec<OpCheck>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.report.passed())
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for c in &self.checks {
            writeln!(
                f,
                "{:<16} max rel err {:.3e} (tol {:.0e})  {}",
                c.op,
                c.report.max_error(),
                c.report.tolerance,
                if c.report.passed() { "PASS" } else { "FAIL" }
            )?;
            write!(f, "{}", c.report)?;
        }
        Ok(())
    }
}

fn randn(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).expect("shape")
}

fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn merge(op: &str, tolerance: f64, parts: Vec<GradReport>) -> OpCheck {
    let entries: Vec<GradEntry> = parts.into_iter().flat_map(|r| r.entries).collect();
    OpCheck {
        op: op.into(),
        report: GradReport { tolerance, entries },
    }
}

fn rename(mut r: GradReport, names: &[&str]) -> GradReport {
    for (e, n) in r.entries.iter_mut().zip(names) {
        e.name = n.to_string();
    }
    r
}

/// Input and parameter checks for a layer whose loss is `<r, forward(x)>`.
fn layer_check<M, F>(op: &str, module: &mut M, x: &Tensor, r: &Tensor, mut run: F) -> OpCheck
where
    M: Module,
    F: FnMut(&mut M, &Tensor, Option<&Tensor>) -> (f64, Option<Tensor>),
{
    let inputs = grad_check(
        |inp| {
            let (loss, dx) = run(module, &inp[0], Some(r));
            (loss, vec![dx.expect("backward requested")])
        },
        std::slice::from_ref(x),
        EPS,
        OP_TOLERANCE,
    );
    module.zero_grad();
    let params = grad_check_module(
        module,
        |m| {
            let (loss, _) = run(m, x, Some(r));
            loss
        },
        EPS,
        OP_TOLERANCE,
    );
    merge(op, OP_TOLERANCE, vec![rename(inputs, &["input"]), params])
}

fn check_conv(rng: &mut ChaCha8Rng) -> OpCheck {
    let mut conv = Conv2d::new("conv", 2, 3, 3, 1, (1, 1), rng);
    let x = randn(rng, &[2, 2, 4, 5]);
    let r = randn(rng, &[2, 3, 4, 5]);
    layer_check("conv2d", &mut conv, &x, &r, |m, x, r| {
        let (y, cache) = m.forward(x).expect("conv forward");
        let r = r.unwrap();
        let dx = m.backward(&cache, r).expect("conv backward");
        (dot(&y, r), Some(dx))
    })
}

fn check_batchnorm(rng: &mut ChaCha8Rng) -> OpCheck {
    let mut bn = BatchNorm2d::new("bn", 3);
    bn.gamma.value = randn(rng, &[3]);
    bn.beta.value = randn(rng, &[3]);
    let x = randn(rng, &[2, 3, 2, 3]);
    let r = randn(rng, &[2, 3, 2, 3]);
    layer_check("batchnorm2d", &mut bn, &x, &r, |m, x, r| {
        let (y, cache) = m.forward(x, Mode::Train).expect("bn forward");
        let r = r.unwrap();
        let dx = m.backward(&cache, r).expect("bn backward");
        (dot(&y, r), Some(dx))
    })
}

fn check_linear(rng: &mut ChaCha8Rng) -> OpCheck {
    let mut lin = Linear::new("linear", 5, 4, rng);
    let x = randn(rng, &[3, 5]);
    let r = randn(rng, &[3, 4]);
    layer_check("linear", &mut lin, &x, &r, |m, x, r| {
        let y = m.forward(x).expect("linear forward");
        let r = r.unwrap();
        let dx = m.backward(x, r).expect("linear backward");
        (dot(&y, r), Some(dx))
    })
}

fn check_gru(rng: &mut ChaCha8Rng) -> OpCheck {
    let mut gru = GruCell::new("gru", 4, 3, rng);
    let x = randn(rng, &[2, 4]);
    let h = randn(rng, &[2, 3]);
    let r = randn(rng, &[2, 3]);
    let inputs = grad_check(
        |inp| {
            let (y, cache) = gru.forward(&inp[0], &inp[1]).expect("gru forward");
            let (dx, dh) = gru.backward(&cache, &r).expect("gru backward");
            (dot(&y, &r), vec![dx, dh])
        },
        &[x.clone(), h.clone()],
        EPS,
        OP_TOLERANCE,
    );
    gru.zero_grad();
    let params = grad_check_module(
        &mut gru,
        |m| {
            let (y, cache) = m.forward(&x, &h).expect("gru forward");
            m.backward(&cache, &r).expect("gru backward");
            dot(&y, &r)
        },
        EPS,
        OP_TOLERANCE,
    );
    merge("gru_cell", OP_TOLERANCE, vec![rename(inputs, &["x", "h"]), params])
}

fn check_pool(rng: &mut ChaCha8Rng) -> OpCheck {
    let mut parts = Vec::new();
    for (k, pad) in [(2, (0, 0)), (2, (0, 1))] {
        let pool = MaxPool2d::new(k, 1, pad);
        let x = randn(rng, &[2, 2, 4, 5]);
        let (y0, _) = pool.forward(&x).expect("pool forward");
        let r = randn(rng, y0.shape());
        let rep = grad_check(
            |inp| {
                let (y, cache) = pool.forward(&inp[0]).expect("pool forward");
                let dx = pool.backward(&cache, &r).expect("pool backward");
                (dot(&y, &r), vec![dx])
            },
            &[x],
            EPS,
            OP_TOLERANCE,
        );
        parts.push(rename(rep, &[if pad.1 == 0 { "input_pad0" } else { "input_pad01" }]));
    }
    merge("maxpool2d", OP_TOLERANCE, parts)
}

fn check_activations(rng: &mut ChaCha8Rng) -> OpCheck {
    let mut parts = Vec::new();
    for (kind, name) in [
        (Activation::Relu, "relu"),
        (Activation::Tanh, "tanh"),
        (Activation::Sigmoid, "sigmoid"),
        (Activation::Softmax, "softmax"),
    ] {
        let x = randn(rng, &[3, 6]);
        let r = randn(rng, &[3, 6]);
        let rep = grad_check(
            |inp| {
                let y = activation_forward(kind, &inp[0]);
                let dx = activation_backward(kind, &inp[0], &y, &r);
                (dot(&y, &r), vec![dx])
            },
            &[x],
            EPS,
            OP_TOLERANCE,
        );
        parts.push(rename(rep, &[name]));
    }
    let x = randn(rng, &[3, 6]);
    let r = randn(rng, &[3, 6]);
    let rep = grad_check(
        |inp| {
            let y = log_softmax(&inp[0]);
            (dot(&y, &r), vec![log_softmax_backward(&y, &r)])
        },
        &[x],
        EPS,
        OP_TOLERANCE,
    );
    parts.push(rename(rep, &["log_softmax"]));
    merge("activations", OP_TOLERANCE, parts)
}

fn check_losses(rng: &mut ChaCha8Rng) -> OpCheck {
    let pred = randn(rng, &[2, 8]).map(|v| 3.0 * v);
    let target = randn(rng, &[2, 8]);
    let sl1 = grad_check(
        |inp| {
            let (l, g) = smooth_l1(&inp[0], &target, 1.0).expect("smooth_l1");
            (l, vec![g])
        },
        &[pred],
        EPS,
        OP_TOLERANCE,
    );
    let logp = log_softmax(&randn(rng, &[4, 6]));
    let targets = [1, 0, 5, 3];
    let nll = grad_check(
        |inp| {
            let (l, g) = nll_loss(&inp[0], &targets).expect("nll");
            (l, vec![g])
        },
        &[logp],
        EPS,
        OP_TOLERANCE,
    );
    merge("losses", OP_TOLERANCE, vec![rename(sl1, &["smooth_l1"]), rename(nll, &["nll"])])
}

fn tiny_recognizer(rng: &mut ChaCha8Rng) -> Recognizer {
    Recognizer::new(
        RecognizerConfig {
            height: 8,
            width: 16,
            channels: 3,
            hidden: 4,
            attention: 5,
        },
        rng,
    )
}

fn check_attention(rng: &mut ChaCha8Rng) -> OpCheck {
    let mut rec = tiny_recognizer(rng);
    let f = randn(rng, &[2, 6, 3]);
    let s = randn(rng, &[2, 4]);
    let r = randn(rng, &[2, 3]);
    let run = |rec: &mut Recognizer, f: &Tensor, s: &Tensor| -> (f64, Tensor, Tensor) {
        let vf = rec.project_features(f);
        let (th, alpha, g) = rec.attend_batch(f, &vf, s);
        let loss: f64 = g.iter().zip(r.data()).map(|(a, b)| a * b).sum();
        let mut df = vec![0.0; f.len()];
        let mut dvf = vec![0.0; vf.len()];
        let ds = rec.attend_backward(f, &th, &alpha, s, r.data(), &mut df, &mut dvf).expect("attend backward");
        rec.project_features_backward(f, &dvf, &mut df);
        (loss, Tensor::from_vec(f.shape(), df).expect("shape"), ds)
    };
    let inputs = grad_check(
        |inp| {
            let (l, df, ds) = run(&mut rec, &inp[0], &inp[1]);
            (l, vec![df, ds])
        },
        &[f.clone(), s.clone()],
        EPS,
        OP_TOLERANCE,
    );
    rec.attention.zero_grad();
    let params = grad_check_module(&mut rec.attention, |att| {
        // the module under test is only the attention block; rebuild a view
        let mut tmp = tiny_recognizer(&mut ChaCha8Rng::seed_from_u64(0));
        tmp.attention = att.clone();
        let (l, _, _) = run(&mut tmp, &f, &s);
        for (dst, src) in att.params_mut().into_iter().zip(tmp.attention.params()) {
            let g = src.grad.clone().expect("attention grads");
            dst.grad_mut().add_assign(&g);
        }
        l
    }, EPS, OP_TOLERANCE);
    merge("attention", OP_TOLERANCE, vec![rename(inputs, &["features", "state"]), params])
}

fn check_decoder_step(rng: &mut ChaCha8Rng) -> OpCheck {
    let mut rec = tiny_recognizer(rng);
    let f = randn(rng, &[2, 6, 3]);
    let s = randn(rng, &[2, 4]);
    let y_prev = [EOS, 7];
    // zero-sum rows keep the log-partition term out of the loss value, so
    // finite differences are not dominated by its rounding error
    let mut rl = randn(rng, &[2, CHARSET_SIZE]);
    for row in rl.data_mut().chunks_exact_mut(CHARSET_SIZE) {
        let mean = row.iter().sum::<f64>() / CHARSET_SIZE as f64;
        row.iter_mut().for_each(|v| *v -= mean);
    }
    let rs = randn(rng, &[2, 4]);
    let run = |rec: &mut Recognizer, f: &Tensor, s: &Tensor| -> (f64, Tensor, Tensor) {
        let vf = rec.project_features(f);
        let (out, cache) = rec.step(f, &vf, s, &y_prev).expect("step");
        let loss = dot(&out.logp, &rl) + dot(&out.state, &rs);
        let mut df = vec![0.0; f.len()];
        let mut dvf = vec![0.0; vf.len()];
        let ds = rec.step_backward(f, &cache, &rl, &rs, &mut df, &mut dvf).expect("step backward");
        rec.project_features_backward(f, &dvf, &mut df);
        (loss, Tensor::from_vec(f.shape(), df).expect("shape"), ds)
    };
    let inputs = grad_check(
        |inp| {
            let (l, df, ds) = run(&mut rec, &inp[0], &inp[1]);
            (l, vec![df, ds])
        },
        &[f.clone(), s.clone()],
        EPS,
        OP_TOLERANCE,
    );
    rec.zero_grad();
    let params = grad_check_module(&mut rec, |m| run(m, &f, &s).0, EPS, OP_TOLERANCE);
    // encoder parameters take no part in a decoder step
    let mut params = params;
    params.entries.retain(|e| !e.name.contains(".conv") && !e.name.contains(".bn"));
    merge("decoder_step", OP_TOLERANCE, vec![rename(inputs, &["features", "state"]), params])
}

/// Tiny pipeline configuration used for the composed-loss check: 8x16
/// crops and 3-symbol texts, i.e. a 4-step decode.
pub fn tiny_spotter_config() -> SpotterConfig {
    SpotterConfig {
        k: 3,
        crop_height: 8,
        crop_width: 16,
        bpdn_channels: 2,
        rec_channels: 3,
        hidden: 4,
        attention: 5,
        max_decode: 8,
        ..Default::default()
    }
}

fn check_total_loss(rng: &mut ChaCha8Rng, seed: u64) -> Result<OpCheck> {
    let cfg = tiny_spotter_config();
    let mut spotter = Spotter::new(cfg.clone(), seed)?;
    // a non-zero regression head so its inputs receive gradient
    for v in spotter.bpdn.fc.weight.value.data_mut() {
        *v = rng.gen_range(-0.05..0.05);
    }
    let bx = randn(rng, &[2, 1, 8, 16]);
    let rx = randn(rng, &[2, 1, 8, 16]);
    let offsets: Vec<OffsetVector> = (0..2)
        .map(|_| OffsetVector {
            values: (0..4 * cfg.k).map(|_| rng.gen_range(-0.3..0.3)).collect(),
        })
        .collect();
    let texts = vec![vec![12, 3, 40, EOS], vec![5, 5, 61, EOS]];
    let report = grad_check_module(
        &mut spotter,
        |m| m.loss_and_backward(&bx, &offsets, &rx, &texts, Mode::Train).expect("loss").total,
        EPS,
        LOSS_TOLERANCE,
    );
    Ok(OpCheck {
        op: "total_loss".into(),
        report,
    })
}

/// Runs every check. Deterministic for a given seed.
pub fn gradcheck_suite(seed: u64) -> Result<SuiteReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut checks = vec![
        check_conv(&mut rng),
        check_pool(&mut rng),
        check_batchnorm(&mut rng),
        check_linear(&mut rng),
        check_activations(&mut rng),
        check_losses(&mut rng),
        check_gru(&mut rng),
        check_attention(&mut rng),
        check_decoder_step(&mut rng),
    ];
    checks.push(check_total_loss(&mut rng, seed)?);
    Ok(SuiteReport { checks })
}
