//! Oracle proposals and training-target assembly.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::Instance;
use crate::error::{Error, Result};
use crate::geometry::{
    crop_transform, default_points, encode_offsets, minimum_oriented_rect, resample_polyline, BoundaryPointSet,
    HomMatrix, OffsetVector, OrientedBox, Point2,
};
use crate::model::charset;
use crate::rectify::{arbitrary_roi_align, rotated_roi_align, ImageBuffer};

/// Angle jitter per unit of jitter, degrees.
pub const ANGLE_JITTER_DEG: f64 = 15.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProposalMode {
    #[default]
    Oriented,
    AxisAligned,
}

impl fmt::Display for ProposalMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProposalMode::Oriented => "oriented",
            ProposalMode::AxisAligned => "axis-aligned",
        })
    }
}

impl FromStr for ProposalMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "oriented" => Ok(ProposalMode::Oriented),
            "axis-aligned" => Ok(ProposalMode::AxisAligned),
            _ => Err(Error::Config(format!("unknown proposal mode {s:?}"))),
        }
    }
}

/// Random perturbation of a box: center moved by up to `jitter` of each
/// side along the box axes, sides scaled by `U[1-j, 1+j]`, angle turned by
/// up to `j * 15` degrees.
pub fn jitter_box(b: &OrientedBox, jitter: f64, rng: &mut impl Rng) -> Result<OrientedBox> {
    if jitter == 0.0 {
        return Ok(*b);
    }
    let (u, v) = b.axes();
    let du = rng.gen_range(-jitter..=jitter) * b.width;
    let dv = rng.gen_range(-jitter..=jitter) * b.height;
    let center = Point2::new(b.center.x + du * u.x + dv * v.x, b.center.y + du * u.y + dv * v.y);
    let w = b.width * rng.gen_range(1.0 - jitter..=1.0 + jitter);
    let h = b.height * rng.gen_range(1.0 - jitter..=1.0 + jitter);
    let angle = b.angle + rng.gen_range(-jitter..=jitter) * ANGLE_JITTER_DEG.to_radians();
    OrientedBox::new(center, w, h, angle)
}

/// Smallest angle-0 box covering `b`.
pub fn axis_aligned_cover(b: &OrientedBox) -> Result<OrientedBox> {
    let c = b.corners();
    let (x0, x1) = c.iter().fold((f64::MAX, f64::MIN), |(a, z), p| (a.min(p.x), z.max(p.x)));
    let (y0, y1) = c.iter().fold((f64::MAX, f64::MIN), |(a, z), p| (a.min(p.y), z.max(p.y)));
    OrientedBox::axis_aligned(x0, y0, x1, y1)
}

fn proposal(points: &[Point2], jitter: f64, mode: ProposalMode, rng: &mut impl Rng) -> Result<OrientedBox> {
    if !(0.0..=0.5).contains(&jitter) {
        return Err(Error::Config(format!("jitter {jitter} outside [0, 0.5]")));
    }
    let b = jitter_box(&minimum_oriented_rect(points)?, jitter, rng)?;
    match mode {
        ProposalMode::Oriented => Ok(b),
        ProposalMode::AxisAligned => axis_aligned_cover(&b),
    }
}

/// One jittered minimum oriented rect per instance, deterministic per seed.
pub fn oracle_proposals(
    instances: &[Instance],
    jitter: f64,
    seed: u64,
    mode: ProposalMode,
) -> Result<Vec<OrientedBox>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    instances
        .iter()
        .map(|inst| proposal(&inst.all_points(), jitter, mode, &mut rng))
        .collect()
}

/// Both sides resampled to `k` equidistant points.
pub fn resample_instance(inst: &Instance, k: usize) -> Result<BoundaryPointSet> {
    BoundaryPointSet::new(resample_polyline(&inst.side_a, k)?, resample_polyline(&inst.side_b, k)?)
}

#[derive(Debug, Clone)]
pub struct TrainingExample {
    pub crop: ImageBuffer,
    pub bbox: OrientedBox,
    /// Image-to-crop transform of `bbox`.
    pub transform: HomMatrix,
    pub defaults: BoundaryPointSet,
    /// Resampled boundary in the crop frame, canonically ordered.
    pub boundary: BoundaryPointSet,
    pub targets: OffsetVector,
    pub text: Vec<usize>,
}

/// Builds the boundary-regression example for one instance: resample the
/// sides to `k` points, take the (jittered) minimum oriented rect as the
/// proposal, crop it, map the points into the crop frame and encode them
/// against the default points.
pub fn make_training_example(
    image: &ImageBuffer,
    inst: &Instance,
    k: usize,
    crop_h: usize,
    crop_w: usize,
    jitter: f64,
    mode: ProposalMode,
    rng: &mut impl Rng,
) -> Result<TrainingExample> {
    let resampled = resample_instance(inst, k)?;
    let bbox = proposal(&resampled.points(), jitter, mode, rng)?;
    let transform = crop_transform(&bbox, crop_w as f64, crop_h as f64)?;
    let crop = rotated_roi_align(image, &bbox, crop_h, crop_w)?;
    let boundary = resampled.map(|p| transform.apply(p)).canonicalize();
    let defaults = default_points(crop_w as f64, crop_h as f64, k)?;
    let targets = encode_offsets(&defaults, &boundary, crop_w as f64, crop_h as f64)?;
    Ok(TrainingExample {
        crop,
        bbox,
        transform,
        defaults,
        boundary,
        targets,
        text: charset::encode_target(&inst.text)?,
    })
}

/// Rectified recognition crop from the ground-truth boundary, each point
/// moved by up to `point_jitter` times the local side separation.
pub fn recognition_crop(
    image: &ImageBuffer,
    inst: &Instance,
    k: usize,
    crop_h: usize,
    crop_w: usize,
    point_jitter: f64,
    lambda: f64,
    rng: &mut impl Rng,
) -> Result<ImageBuffer> {
    let mut bp = resample_instance(inst, k)?;
    if point_jitter > 0.0 {
        for i in 0..k {
            let s = bp.side_a[i].dist(&bp.side_b[i]) * point_jitter;
            for p in [&mut bp.side_a[i], &mut bp.side_b[i]] {
                p.x += rng.gen_range(-s..=s);
                p.y += rng.gen_range(-s..=s);
            }
        }
    }
    arbitrary_roi_align(image, &bp, crop_h, crop_w, lambda)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{decode_offsets, map_points, Polyline};

    fn rect_instance(angle: f64) -> Instance {
        let (s, c) = angle.sin_cos();
        let at = |x: f64, y: f64| Point2::new(60.0 + c * x - s * y, 40.0 + s * x + c * y);
        let top: Vec<Point2> = (0..5).map(|i| at(-30.0 + 15.0 * i as f64, -8.0)).collect();
        let bottom: Vec<Point2> = (0..5).map(|i| at(-30.0 + 15.0 * i as f64, 8.0)).collect();
        Instance {
            side_a: Polyline::new(top).unwrap(),
            side_b: Polyline::new(bottom).unwrap(),
            text: "Ab1".into(),
        }
    }

    fn curved_instance() -> Instance {
        let arc = |r: f64| -> Vec<Point2> {
            (0..9)
                .map(|i| {
                    let t = -0.6 + 1.2 * i as f64 / 8.0;
                    Point2::new(80.0 + r * t.sin(), 120.0 - r * t.cos())
                })
                .collect()
        };
        Instance {
            side_a: Polyline::new(arc(80.0)).unwrap(),
            side_b: Polyline::new(arc(64.0)).unwrap(),
            text: "curve".into(),
        }
    }

    fn img() -> ImageBuffer {
        ImageBuffer::from_fn(96, 192, |i, j| ((i * 7 + j * 3) % 11) as f64 / 10.0)
    }

    #[test]
    fn zero_jitter_rectangle_has_zero_offsets() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for angle in [0.0, 0.4, -0.7] {
            let ex = make_training_example(&img(), &rect_instance(angle), 7, 8, 64, 0.0, ProposalMode::Oriented, &mut rng)
                .unwrap();
            assert_eq!(ex.targets.values.len(), 28);
            assert!(ex.targets.values.iter().all(|v| v.abs() < 1e-6), "{:?}", ex.targets);
            assert_eq!(ex.text.len(), 4);
        }
    }

    #[test]
    fn targets_round_trip_to_image_frame() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let inst = curved_instance();
        let original = resample_instance(&inst, 7).unwrap();
        for jitter in [0.0, 0.1] {
            for mode in [ProposalMode::Oriented, ProposalMode::AxisAligned] {
                let ex = make_training_example(&img(), &inst, 7, 8, 64, jitter, mode, &mut rng).unwrap();
                let decoded = decode_offsets(&ex.defaults, &ex.targets, 64.0, 8.0).unwrap();
                let back = map_points(&ex.transform, &decoded.points(), true).unwrap();
                for (a, b) in back.iter().zip(original.points()) {
                    assert!(a.dist(&b) < 1e-6, "{a:?} vs {b:?}");
                }
            }
        }
    }

    #[test]
    fn proposals() {
        let inst = vec![rect_instance(std::f64::consts::FRAC_PI_4), curved_instance()];
        let exact = oracle_proposals(&inst, 0.0, 1, ProposalMode::Oriented).unwrap();
        for (b, i) in exact.iter().zip(&inst) {
            assert_eq!(*b, minimum_oriented_rect(&i.all_points()).unwrap());
        }
        let axis = oracle_proposals(&inst, 0.0, 1, ProposalMode::AxisAligned).unwrap();
        assert_eq!(axis[0].angle, 0.0);
        assert!(axis[0].area() > exact[0].area() * 1.2);
        assert!(exact[0].corners().iter().all(|p| axis[0].contains(p, 1e-9)));
        let j1 = oracle_proposals(&inst, 0.1, 9, ProposalMode::Oriented).unwrap();
        assert_eq!(j1, oracle_proposals(&inst, 0.1, 9, ProposalMode::Oriented).unwrap());
        assert_ne!(j1, exact);
        assert!(oracle_proposals(&inst, 0.6, 9, ProposalMode::Oriented).is_err());
        assert_eq!("axis-aligned".parse::<ProposalMode>().unwrap(), ProposalMode::AxisAligned);
    }
}
