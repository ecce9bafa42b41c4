//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fails.

use std::fs;
use std::path::Path;
use std::time::Instant;

use boundary_spot::data::dataset::ANNOTATIONS_FILE;
use boundary_spot::data::{gen_dataset, Dataset, DatasetConfig, ProposalMode};
use boundary_spot::diagnostics::gradcheck_suite;
use boundary_spot::eval::{edit_distance, evaluate, match_detections, DatasetReport, LexiconMode};
use boundary_spot::geometry::{
    crop_transform, decode_offsets, default_points, encode_offsets, map_points, resample_polyline,
    BoundaryPointSet, OffsetVector, OrientedBox, Point2, Polyline,
};
use boundary_spot::model::{load_checkpoint, save_checkpoint, train_loop, Spotter, SpotterConfig, TrainConfig};
use boundary_spot::rectify::{arbitrary_roi_align, rotated_roi_align, tps_fit, tps_map, ImageBuffer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn timed(limit_s: f64, detail: String, ok: bool, start: Instant) -> Outcome {
    let t = start.elapsed().as_secs_f64();
    check(ok && t < limit_s, format!("{detail}; {t:.1}s (limit {limit_s}s)"))
}

// Dense walk over 1e6 subdivisions of the whole polyline.
fn dense_resample(pts: &[Point2], k: usize) -> Vec<Point2> {
    const N: usize = 1_000_000;
    let seg: Vec<f64> = pts.windows(2).map(|w| w[0].dist(&w[1])).collect();
    let total: f64 = seg.iter().sum();
    let mut samples = Vec::with_capacity(N + pts.len());
    let mut acc = 0.0;
    samples.push((0.0, pts[0]));
    for (w, &len) in pts.windows(2).zip(&seg) {
        let n = ((len / total) * N as f64).ceil().max(1.0) as usize;
        for s in 1..=n {
            let t = s as f64 / n as f64;
            samples.push((acc + len * t, w[0].lerp(&w[1], t)));
        }
        acc += len;
    }
    (0..k)
        .map(|i| {
            let target = acc * i as f64 / (k - 1) as f64;
            let j = samples.partition_point(|s| s.0 < target).clamp(1, samples.len() - 1);
            let (la, pa) = samples[j - 1];
            let (lb, pb) = samples[j];
            if lb <= la {
                pb
            } else {
                pa.lerp(&pb, ((target - la) / (lb - la)).clamp(0.0, 1.0))
            }
        })
        .collect()
}

fn arc_positions(line: &[Point2], q: &[Point2]) -> Vec<f64> {
    // arc-length coordinate of each sample along the polyline
    q.iter()
        .map(|p| {
            let mut acc = 0.0;
            let mut best = (f64::INFINITY, 0.0);
            for w in line.windows(2) {
                let (dx, dy) = (w[1].x - w[0].x, w[1].y - w[0].y);
                let len = dx.hypot(dy);
                let t = if len > 0.0 {
                    (((p.x - w[0].x) * dx + (p.y - w[0].y) * dy) / (len * len)).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let dist = w[0].lerp(&w[1], t).dist(p);
                if dist < best.0 - 1e-12 {
                    best = (dist, acc + t * len);
                }
                acc += len;
            }
            best.1
        })
        .collect()
}

fn ac1() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (mut worst, mut worst_spacing) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let segs = rng.gen_range(2..=10);
        let pts: Vec<Point2> = (0..=segs)
            .map(|_| Point2::new(rng.gen_range(0.0..200.0), rng.gen_range(0.0..100.0)))
            .collect();
        let k = rng.gen_range(2..=16);
        let q = resample_polyline(&Polyline::new(pts.clone()).map_err(|e| e.to_string())?, k).map_err(|e| e.to_string())?;
        for (a, b) in q.iter().zip(dense_resample(&pts, k)) {
            worst = worst.max(a.dist(&b));
        }
        let total: f64 = pts.windows(2).map(|w| w[0].dist(&w[1])).sum();
        let s = arc_positions(&pts, &q);
        let step = total / (k - 1) as f64;
        for w in s.windows(2) {
            worst_spacing = worst_spacing.max(((w[1] - w[0]) - step).abs() / step);
        }
    }
    timed(
        5.0,
        format!("max dev {worst:.2e} px (<1e-6), spacing {worst_spacing:.2e} rel (<1e-9)"),
        worst < 1e-6 && worst_spacing < 1e-9,
        start,
    )
}

fn ac2() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let k = rng.gen_range(2..=16);
        let (w0, h0) = (rng.gen_range(1.0..200.0), rng.gen_range(1.0..50.0));
        let d = default_points(w0, h0, k).map_err(|e| e.to_string())?;
        let off = OffsetVector { values: (0..4 * k).map(|_| rng.gen_range(-0.5..0.5)).collect() };
        let bp = decode_offsets(&d, &off, w0, h0).map_err(|e| e.to_string())?;
        let back = encode_offsets(&d, &bp, w0, h0).map_err(|e| e.to_string())?;
        for (a, b) in off.values.iter().zip(&back.values) {
            worst = worst.max((a - b).abs());
        }
        let pts: Vec<Point2> = (0..2 * k)
            .map(|_| Point2::new(rng.gen_range(-w0..2.0 * w0), rng.gen_range(-h0..2.0 * h0)))
            .collect();
        let t = BoundaryPointSet::from_points(&pts, k).map_err(|e| e.to_string())?;
        let again = decode_offsets(&d, &encode_offsets(&d, &t, w0, h0).map_err(|e| e.to_string())?, w0, h0)
            .map_err(|e| e.to_string())?;
        for (a, b) in t.points().iter().zip(again.points()) {
            worst = worst.max(a.dist(&b) / w0.max(h0));
        }
    }
    timed(1.0, format!("max round-trip error {worst:.2e} (<1e-12)"), worst < 1e-12, start)
}

fn ac3() -> Outcome {
    let start = Instant::now();
    let (mut inv_err, mut corner_err) = (0.0f64, 0.0f64);
    let (out_w, out_h) = (64.0, 8.0);
    for aspect in [0.05, 0.5, 1.0, 5.0, 20.0] {
        for deg in -89..=90 {
            let a = (deg as f64).to_radians();
            let (w, h) = (10.0 * aspect, 10.0);
            let b = OrientedBox::new(Point2::new(37.0, -12.0), w, h, a).map_err(|e| e.to_string())?;
            let m = crop_transform(&b, out_w, out_h).map_err(|e| e.to_string())?;
            let prod = m.mul(&m.inverse().map_err(|e| e.to_string())?);
            for i in 0..3 {
                for j in 0..3 {
                    inv_err = inv_err.max((prod.0[i][j] - if i == j { 1.0 } else { 0.0 }).abs());
                }
            }
            // corners from the box definition, in reading order
            let (s, c) = b.angle.sin_cos();
            let (hw, hh) = (b.width / 2.0, b.height / 2.0);
            let corners = [(-hw, -hh), (hw, -hh), (hw, hh), (-hw, hh)]
                .map(|(u, v)| Point2::new(b.center.x + u * c - v * s, b.center.y + u * s + v * c));
            let want = [(0.0, 0.0), (out_w, 0.0), (out_w, out_h), (0.0, out_h)].map(|(x, y)| Point2::new(x, y));
            let got = map_points(&m, &corners, false).map_err(|e| e.to_string())?;
            for (g, w) in got.iter().zip(&want) {
                corner_err = corner_err.max(g.dist(w));
            }
        }
    }
    timed(
        5.0,
        format!("max |M M^-1 - I| {inv_err:.2e} (<1e-9), corner error {corner_err:.2e} px (<1e-6)"),
        inv_err < 1e-9 && corner_err < 1e-6,
        start,
    )
}

fn random_pts(n: usize, rng: &mut ChaCha8Rng) -> Vec<Point2> {
    (0..n).map(|_| Point2::new(rng.gen_range(0.0..100.0), rng.gen_range(0.0..60.0))).collect()
}

fn ac4() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut interp, mut affine, mut ident) = (0.0f64, 0.0f64, 0.0f64);
    for n in [3usize, 4, 8, 14, 20, 32] {
        let src = random_pts(n, &mut rng);
        let dst = random_pts(n, &mut rng);
        let p = tps_fit(&src, &dst, 0.0).map_err(|e| e.to_string())?;
        for (a, b) in tps_map(&p, &src).iter().zip(&dst) {
            interp = interp.max(a.dist(b));
        }
        let f = |q: &Point2| Point2::new(1.3 * q.x - 0.4 * q.y + 5.0, 0.2 * q.x + 0.9 * q.y - 3.0);
        let adst: Vec<Point2> = src.iter().map(f).collect();
        let p = tps_fit(&src, &adst, 0.0).map_err(|e| e.to_string())?;
        let probes = random_pts(50, &mut rng);
        for (a, q) in tps_map(&p, &probes).iter().zip(&probes) {
            affine = affine.max(a.dist(&f(q)));
        }
        let p = tps_fit(&src, &src, 0.0).map_err(|e| e.to_string())?;
        for (a, q) in tps_map(&p, &probes).iter().zip(&probes) {
            ident = ident.max(a.dist(q));
        }
    }
    let img = ImageBuffer::from_fn(96, 192, |i, j| {
        let (x, y) = (j as f64, i as f64);
        0.5 + 0.3 * (x / 7.0).sin() * (y / 5.0).cos() + 0.2 * ((x + y) / 11.0).sin()
    });
    let mut roi = 0.0f64;
    for _ in 0..50 {
        let b = OrientedBox::new(
            Point2::new(rng.gen_range(40.0..150.0), rng.gen_range(30.0..65.0)),
            rng.gen_range(20.0..80.0),
            rng.gen_range(8.0..20.0),
            rng.gen_range(-1.5..1.5),
        )
        .map_err(|e| e.to_string())?;
        let (h, w) = (8usize, 64usize);
        let inv = crop_transform(&b, w as f64, h as f64).map_err(|e| e.to_string())?.inverse().map_err(|e| e.to_string())?;
        for k in [2usize, 7] {
            let bp = default_points(w as f64, h as f64, k).map_err(|e| e.to_string())?.map(|p| inv.apply(p));
            let a = arbitrary_roi_align(&img, &bp, h, w, 1e-6).map_err(|e| e.to_string())?;
            let r = rotated_roi_align(&img, &b, h, w).map_err(|e| e.to_string())?;
            for (x, y) in a.data.iter().zip(&r.data) {
                roi = roi.max((x - y).abs());
            }
        }
    }
    timed(
        10.0,
        format!("interp {interp:.1e}, affine {affine:.1e}, identity {ident:.1e} (<1e-6); rect ROI {roi:.1e} (<1e-4)"),
        interp <= 1e-6 && affine <= 1e-6 && ident <= 1e-6 && roi <= 1e-4,
        start,
    )
}

fn ac5() -> Outcome {
    let start = Instant::now();
    let report = gradcheck_suite(11).map_err(|e| e.to_string())?;
    let failed: Vec<String> = report.checks.iter().filter(|c| !c.report.passed()).map(|c| c.op.clone()).collect();
    timed(
        120.0,
        format!("{} checks, failed: {:?}", report.checks.len(), failed),
        report.passed(),
        start,
    )
}

fn square(x: f64, y: f64, s: f64) -> Vec<Point2> {
    vec![Point2::new(x, y), Point2::new(x + s, y), Point2::new(x + s, y + s), Point2::new(x, y + s)]
}

fn ac6() -> Outcome {
    let close = |a: f64, b: f64| (a - b).abs() < 1e-12;
    // exact hits on two GT
    let r1 = match_detections(&[(square(0.0, 0.0, 1.0), 0.9), (square(5.0, 0.0, 1.0), 0.8)], &[square(0.0, 0.0, 1.0), square(5.0, 0.0, 1.0)], 0.5);
    // two predictions on one GT
    let r2 = match_detections(&[(square(0.0, 0.0, 1.0), 0.9), (square(0.05, 0.0, 1.0), 0.8)], &[square(0.0, 0.0, 1.0)], 0.5);
    // one hit, one at IoU 1/3, one missed GT
    let r3 = match_detections(&[(square(0.0, 0.0, 1.0), 0.9), (square(5.5, 0.0, 1.0), 0.8)], &[square(0.0, 0.0, 1.0), square(5.0, 0.0, 1.0)], 0.5);
    let ok1 = close(r1.precision, 1.0) && close(r1.recall, 1.0) && close(r1.f_measure, 1.0);
    let ok2 = close(r2.precision, 0.5) && close(r2.recall, 1.0) && close(r2.f_measure, 2.0 / 3.0);
    let ok3 = close(r3.precision, 0.5) && close(r3.recall, 0.5) && close(r3.f_measure, 0.5);
    let ed = edit_distance("kitten", "sitting");
    check(
        ok1 && ok2 && ok3 && ed == 3,
        format!(
            "F = {:.4}/{:.4}/{:.4} (want 1/0.6667/0.5), P2 {:.2} R2 {:.2}, edit distance {ed}",
            r1.f_measure, r2.f_measure, r3.f_measure, r2.precision, r2.recall
        ),
    )
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Trains on `train`, spots `test` at jitter 0.05, returns (none, full) reports.
fn train_and_score(
    train: &Path,
    test: &Path,
    spot_cfg: SpotterConfig,
    epochs: usize,
    seed: u64,
) -> Result<(DatasetReport, DatasetReport), String> {
    let tr = Dataset::load(train).map_err(err)?;
    let te = Dataset::load(test).map_err(err)?;
    let mut spotter = Spotter::new(spot_cfg, seed).map_err(err)?;
    let cfg = TrainConfig { seed, ..TrainConfig::with_epochs(epochs) };
    train_loop(&mut spotter, &tr.samples, &te.samples, &cfg, |m, _| {
        eprintln!("  epoch {} L_bp {:.4} L_recog {:.4} acc {:.3}", m.epoch, m.l_bp, m.l_recog, m.eval_accuracy);
        Ok(())
    })
    .map_err(err)?;
    let spots = spotter.spot_samples(&te.samples, 0.05, 0).map_err(err)?;
    let gts = te.annotations();
    let lexicon = te.vocabulary();
    let none = evaluate(&spots, &gts, LexiconMode::None, &lexicon, 0.5).map_err(err)?;
    let full = evaluate(&spots, &gts, LexiconMode::Full, &lexicon, 0.5).map_err(err)?;
    Ok((none, full))
}

fn ac7(root: &Path) -> Outcome {
    let start = Instant::now();
    let cfg = DatasetConfig::default();
    let (train, test) = (root.join("ac7-train"), root.join("ac7-test"));
    gen_dataset(&cfg, &train, 7).map_err(err)?;
    gen_dataset(&DatasetConfig { count: 200, ..cfg }, &test, 10007).map_err(err)?;
    let (none, full) = train_and_score(&train, &test, SpotterConfig::default(), AC7_EPOCHS, 7)?;
    let (det, e_none, e_full) = (none.detection.f_measure, none.e2e.f_measure, full.e2e.f_measure);
    timed(
        1800.0,
        format!("det F {det:.4} (>=0.90), E2E-Full F {e_full:.4} (>=0.85), E2E-None F {e_none:.4} (>=0.70)"),
        det >= 0.90 && e_full >= 0.85 && e_none >= 0.70,
        start,
    )
}

fn ac8(root: &Path) -> Outcome {
    let mut lines = Vec::new();
    let mut ok = true;
    for seed in [1u64, 2, 3] {
        let cfg = DatasetConfig { count: AC8_TRAIN, max_curvature: 150.0, ..Default::default() };
        let (train, test) = (root.join(format!("ac8-train-{seed}")), root.join(format!("ac8-test-{seed}")));
        gen_dataset(&cfg, &train, 100 * seed).map_err(err)?;
        gen_dataset(&DatasetConfig { count: AC8_TEST, ..cfg }, &test, 100 * seed + 50_000).map_err(err)?;
        let mut f = Vec::new();
        for mode in [ProposalMode::Oriented, ProposalMode::AxisAligned] {
            let sc = SpotterConfig {
                proposals: mode,
                rec_channels: 32,
                hidden: 128,
                attention: 128,
                ..Default::default()
            };
            let (none, _) = train_and_score(&train, &test, sc, AC8_EPOCHS, seed)?;
            f.push((none.detection.f_measure, none.e2e.f_measure));
        }
        ok &= f[0].0 > f[1].0 && f[0].1 > f[1].1;
        lines.push(format!(
            "seed {seed}: det {:.3} vs {:.3}, e2e {:.3} vs {:.3}",
            f[0].0, f[1].0, f[0].1, f[1].1
        ));
    }
    check(ok, format!("oriented vs axis-aligned; {}", lines.join("; ")))
}

fn ac9(root: &Path) -> Outcome {
    let cfg = DatasetConfig { count: 40, ..Default::default() };
    let (a, b) = (root.join("ac9-a"), root.join("ac9-b"));
    gen_dataset(&cfg, &a, 7).map_err(err)?;
    gen_dataset(&cfg, &b, 7).map_err(err)?;
    let mut same_data = fs::read(a.join(ANNOTATIONS_FILE)).map_err(err)? == fs::read(b.join(ANNOTATIONS_FILE)).map_err(err)?;
    let ds = Dataset::load(&a).map_err(err)?;
    for s in &ds.samples {
        same_data &= fs::read(a.join(&s.annotation.image)).map_err(err)? == fs::read(b.join(&s.annotation.image)).map_err(err)?;
    }
    let spot_cfg = SpotterConfig { rec_channels: 16, hidden: 32, attention: 32, ..Default::default() };
    let cfg = TrainConfig { seed: 7, ..TrainConfig::with_epochs(2) };
    let mut bytes = Vec::new();
    let mut metrics = Vec::new();
    for run in 0..2 {
        let mut sp = Spotter::new(spot_cfg.clone(), 7).map_err(err)?;
        metrics.push(train_loop(&mut sp, &ds.samples, &ds.samples, &cfg, |_, _| Ok(())).map_err(err)?);
        let path = root.join(format!("ac9-{run}.ckpt"));
        save_checkpoint(&sp, &path).map_err(err)?;
        bytes.push(fs::read(&path).map_err(err)?);
    }
    let same_train = bytes[0] == bytes[1] && metrics[0] == metrics[1];
    let mut original = boundary_spot::model::checkpoint::from_bytes(&bytes[0]).map_err(err)?;
    let mut loaded = load_checkpoint(&root.join("ac9-1.ckpt")).map_err(err)?;
    let s1 = original.spot_samples(&ds.samples, 0.05, 3).map_err(err)?;
    let s2 = loaded.spot_samples(&ds.samples, 0.05, 3).map_err(err)?;
    let same_spots = s1 == s2 && !s1.is_empty();
    check(
        same_data && same_train && same_spots,
        format!("gen-data identical {same_data}, train identical {same_train}, checkpoint spot identical {same_spots}"),
    )
}

const AC7_EPOCHS: usize = 15;
const AC8_EPOCHS: usize = 5;
const AC8_TRAIN: usize = 500;
const AC8_TEST: usize = 100;

fn main() {
    let tmp = tempfile::tempdir().expect("temp dir");
    let root = tmp.path();
    let criteria: Vec<(&str, Box<dyn Fn() -> Outcome + '_>)> = vec![
        ("AC-1", Box::new(ac1)),
        ("AC-2", Box::new(ac2)),
        ("AC-3", Box::new(ac3)),
        ("AC-4", Box::new(ac4)),
        ("AC-5", Box::new(ac5)),
        ("AC-6", Box::new(ac6)),
        ("AC-9", Box::new(|| ac9(root))),
        ("AC-8", Box::new(|| ac8(root))),
        ("AC-7", Box::new(|| ac7(root))),
    ];
    // optional criterion names on the command line select a subset
    let only: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, f) in criteria {
        if !only.is_empty() && !only.iter().any(|o| o == name) {
            continue;
        }
        match f() {
            Ok(d) => println!("{name} PASS: {d}"),
            Err(d) => {
                failed += 1;
                println!("{name} FAIL: {d}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
