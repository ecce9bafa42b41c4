//! Synthetic scene generation and the on-disk dataset layout:
//! `images/NNNN.png` plus one `annotations.jsonl` record per image.

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::font::GlyphFont;
use super::render::{render_word, word_length, word_outline, Baseline, RenderedWord};
use crate::error::{Error, Result};
use crate::geometry::{minimum_oriented_rect, OrientedBox, Point2, Polyline};
use crate::model::charset;
use crate::rectify::ImageBuffer;

pub const ANNOTATIONS_FILE: &str = "annotations.jsonl";
pub const IMAGES_DIR: &str = "images";
pub const MAX_PLACEMENT_TRIES: usize = 100;
const MARGIN: f64 = 2.0;

pub const DEFAULT_VOCABULARY: [&str; 20] = [
    "Cafe", "OPEN", "sale24", "Hotel", "exit", "Road7", "MARKET", "bakery", "Taxi", "Zone51", "PARK", "coffee",
    "Bus", "Street", "LOVE", "pizza", "Room101", "Metro", "gift", "Ninja",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub count: usize,
    pub height: usize,
    pub width: usize,
    pub min_words: usize,
    pub max_words: usize,
    pub vocabulary: Vec<String>,
    pub min_text_height: f64,
    pub max_text_height: f64,
    /// Maximum absolute text rotation, degrees.
    pub max_rotation: f64,
    /// Maximum total baseline turn over a word, degrees.
    pub max_curvature: f64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            count: 2000,
            height: 96,
            width: 192,
            min_words: 1,
            max_words: 3,
            vocabulary: DEFAULT_VOCABULARY.iter().map(|s| s.to_string()).collect(),
            min_text_height: 12.0,
            max_text_height: 18.0,
            max_rotation: 45.0,
            max_curvature: 60.0,
        }
    }
}

impl DatasetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocabulary.is_empty() {
            return Err(Error::Config("vocabulary is empty".into()));
        }
        for w in &self.vocabulary {
            if w.is_empty() {
                return Err(Error::Config("vocabulary contains an empty word".into()));
            }
            charset::encode(w)?;
        }
        if self.min_words == 0 || self.min_words > self.max_words {
            return Err(Error::Config(format!("bad words-per-image range {}..={}", self.min_words, self.max_words)));
        }
        if !(self.min_text_height >= 4.0 && self.min_text_height <= self.max_text_height) {
            return Err(Error::Config("bad text height range".into()));
        }
        if self.height < 16 || self.width < 16 {
            return Err(Error::Config(format!("image {}x{} too small", self.height, self.width)));
        }
        if !(0.0..90.0).contains(&self.max_rotation) || !(0.0..=180.0).contains(&self.max_curvature) {
            return Err(Error::Config("rotation must be in [0, 90) and curvature in [0, 180]".into()));
        }
        Ok(())
    }
}

/// One text instance: two co-oriented long sides and the transcription.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub side_a: Polyline,
    pub side_b: Polyline,
    pub text: String,
}

impl Instance {
    pub fn polygon(&self) -> Vec<Point2> {
        self.side_a
            .points()
            .iter()
            .chain(self.side_b.points().iter().rev())
            .copied()
            .collect()
    }

    pub fn all_points(&self) -> Vec<Point2> {
        self.side_a.points().iter().chain(self.side_b.points()).copied().collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Annotation {
    pub image: String,
    pub instances: Vec<Instance>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub side_a: Vec<[f64; 2]>,
    pub side_b: Vec<[f64; 2]>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image: String,
    pub instances: Vec<InstanceRecord>,
}

pub(crate) fn to_pairs(pts: &[Point2]) -> Vec<[f64; 2]> {
    pts.iter().map(|p| [p.x, p.y]).collect()
}

pub(crate) fn from_pairs(pairs: &[[f64; 2]]) -> Vec<Point2> {
    pairs.iter().map(|&[x, y]| Point2::new(x, y)).collect()
}

impl From<&Annotation> for AnnotationRecord {
    fn from(a: &Annotation) -> Self {
        Self {
            image: a.image.clone(),
            instances: a
                .instances
                .iter()
                .map(|i| InstanceRecord {
                    side_a: to_pairs(i.side_a.points()),
                    side_b: to_pairs(i.side_b.points()),
                    text: i.text.clone(),
                })
                .collect(),
        }
    }
}

impl TryFrom<AnnotationRecord> for Annotation {
    type Error = Error;

    fn try_from(r: AnnotationRecord) -> Result<Self> {
        let instances = r
            .instances
            .into_iter()
            .map(|i| {
                if i.text.is_empty() {
                    return Err(Error::EmptyTarget);
                }
                charset::encode(&i.text)?;
                Ok(Instance {
                    side_a: Polyline::new(from_pairs(&i.side_a))?,
                    side_b: Polyline::new(from_pairs(&i.side_b))?,
                    text: i.text,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { image: r.image, instances })
    }
}

/// An annotated image held in memory.
#[derive(Debug, Clone)]
pub struct Sample {
    pub annotation: Annotation,
    pub image: ImageBuffer,
}

/// Worker count from `BOUNDARY_SPOT_THREADS`, falling back to rayon's default.
pub fn thread_count() -> usize {
    std::env::var("BOUNDARY_SPOT_THREADS")
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(rayon::current_num_threads)
}

pub fn thread_pool() -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(thread_count())
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn image_name(index: usize) -> String {
    format!("{IMAGES_DIR}/{index:04}.png")
}

/// Renders one scene from its own seed. Words that cannot be placed
/// without overlap are dropped; an image with no placeable word fails with
/// `PlacementFailure`. The returned image is already quantized to 8 bits.
pub fn gen_image(cfg: &DatasetConfig, seed: u64) -> Result<(ImageBuffer, Vec<Instance>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let font = GlyphFont::builtin();
    let (h, w) = (cfg.height, cfg.width);
    let base = rng.gen_range(0.0..0.35);
    let gx = rng.gen_range(-0.1..0.1) / w as f64;
    let gy = rng.gen_range(-0.1..0.1) / h as f64;
    let mut img = ImageBuffer::new(h, w, 1);
    for i in 0..h {
        for j in 0..w {
            let v = base + gx * j as f64 + gy * i as f64 + rng.gen_range(-0.04..0.04);
            img.set(i, j, 0, v.clamp(0.0, 1.0));
        }
    }

    let n_words = rng.gen_range(cfg.min_words..=cfg.max_words);
    let mut placed: Vec<OrientedBox> = Vec::new();
    let mut instances = Vec::new();
    for _ in 0..n_words {
        let Some((word, baseline, text_h)) = place_word(cfg, &mut rng, &placed) else {
            continue;
        };
        let ink = rng.gen_range(0.65..1.0);
        let sides = render_word(&word, &baseline, text_h, ink, &font, &mut img)?;
        placed.push(inflate(&minimum_oriented_rect(&outline_points(&sides))?, MARGIN));
        instances.push(Instance {
            side_a: Polyline::new(sides.side_a)?,
            side_b: Polyline::new(sides.side_b)?,
            text: word,
        });
    }
    if instances.is_empty() {
        return Err(Error::PlacementFailure(MAX_PLACEMENT_TRIES));
    }
    Ok((ImageBuffer::from_gray8(&img.to_gray8()), instances))
}

fn outline_points(w: &RenderedWord) -> Vec<Point2> {
    w.side_a.iter().chain(&w.side_b).copied().collect()
}

fn inflate(b: &OrientedBox, m: f64) -> OrientedBox {
    OrientedBox {
        width: b.width + 2.0 * m,
        height: b.height + 2.0 * m,
        ..*b
    }
}

/// Random word and baseline that fit inside the canvas without touching
/// any previously placed instance.
fn place_word(cfg: &DatasetConfig, rng: &mut ChaCha8Rng, placed: &[OrientedBox]) -> Option<(String, Baseline, f64)> {
    for _ in 0..MAX_PLACEMENT_TRIES {
        let word = cfg.vocabulary.choose(rng).expect("vocabulary validated").clone();
        let text_h = rng.gen_range(cfg.min_text_height..=cfg.max_text_height);
        let rot = rng.gen_range(-cfg.max_rotation..=cfg.max_rotation).to_radians();
        let bend = if cfg.max_curvature > 0.0 {
            rng.gen_range(-cfg.max_curvature..=cfg.max_curvature).to_radians()
        } else {
            0.0
        };
        let use_arc = rng.gen_bool(0.5);
        let len = word_length(word.chars().count(), text_h);
        let origin = Point2::new(0.0, 0.0);
        let baseline = if bend == 0.0 {
            Baseline::Line { origin, angle: rot, length: len }
        } else if use_arc {
            // a little slack: the dense chord approximation is shorter than the arc
            Baseline::Arc {
                origin,
                angle: rot - bend / 2.0,
                length: len * 1.001 + 0.1,
                turn: bend,
            }
        } else {
            // half a period whose end tangents differ by `bend`
            Baseline::Sine {
                origin,
                angle: rot,
                length: len,
                amplitude: -len * (bend / 2.0).tan() / std::f64::consts::PI,
                periods: 0.5,
            }
        };
        let sides = word_outline(word.chars().count(), &baseline, text_h).ok()?;
        let pts = outline_points(&sides);
        let (x0, x1) = pts.iter().fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.x), b.max(p.x)));
        let (y0, y1) = pts.iter().fold((f64::MAX, f64::MIN), |(a, b), p| (a.min(p.y), b.max(p.y)));
        let (lo_x, hi_x) = (MARGIN - x0, cfg.width as f64 - MARGIN - x1);
        let (lo_y, hi_y) = (MARGIN - y0, cfg.height as f64 - MARGIN - y1);
        if lo_x > hi_x || lo_y > hi_y {
            continue;
        }
        let (dx, dy) = (rng.gen_range(lo_x..=hi_x), rng.gen_range(lo_y..=hi_y));
        let moved = shift(&baseline, dx, dy);
        let shifted: Vec<Point2> = pts.iter().map(|p| Point2::new(p.x + dx, p.y + dy)).collect();
        let Ok(b) = minimum_oriented_rect(&shifted) else { continue };
        let b = inflate(&b, MARGIN);
        if placed.iter().any(|o| boxes_overlap(o, &b)) {
            continue;
        }
        return Some((word, moved, text_h));
    }
    None
}

fn shift(b: &Baseline, dx: f64, dy: f64) -> Baseline {
    let mv = |o: Point2| Point2::new(o.x + dx, o.y + dy);
    match *b {
        Baseline::Line { origin, angle, length } => Baseline::Line { origin: mv(origin), angle, length },
        Baseline::Sine {
            origin,
            angle,
            length,
            amplitude,
            periods,
        } => Baseline::Sine {
            origin: mv(origin),
            angle,
            length,
            amplitude,
            periods,
        },
        Baseline::Arc { origin, angle, length, turn } => Baseline::Arc {
            origin: mv(origin),
            angle,
            length,
            turn,
        },
    }
}

/// Separating-axis test for two oriented rectangles.
pub fn boxes_overlap(a: &OrientedBox, b: &OrientedBox) -> bool {
    let (ca, cb) = (a.corners(), b.corners());
    let (ua, va) = a.axes();
    let (ub, vb) = b.axes();
    for axis in [ua, va, ub, vb] {
        let proj = |c: &[Point2; 4]| {
            c.iter()
                .map(|p| p.x * axis.x + p.y * axis.y)
                .fold((f64::MAX, f64::MIN), |(lo, hi), v| (lo.min(v), hi.max(v)))
        };
        let (a0, a1) = proj(&ca);
        let (b0, b1) = proj(&cb);
        if a1 < b0 || b1 < a0 {
            return false;
        }
    }
    true
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct GenSummary {
    pub images: usize,
    pub instances: usize,
    pub skipped: usize,
}

/// Generates `cfg.count` scenes into `out` (per-image seed `seed + index`).
/// Images that fail placement are skipped and reported on stderr.
pub fn gen_dataset(cfg: &DatasetConfig, out: &Path, seed: u64) -> Result<GenSummary> {
    cfg.validate()?;
    fs::create_dir_all(out.join(IMAGES_DIR))?;
    let pool = thread_pool()?;
    let results: Vec<(usize, Result<(Vec<u8>, Annotation)>)> = pool.install(|| {
        (0..cfg.count)
            .into_par_iter()
            .map(|i| {
                let r = gen_image(cfg, seed.wrapping_add(i as u64)).and_then(|(img, instances)| {
                    let mut png = Vec::new();
                    img.to_gray8()
                        .write_to(&mut std::io::Cursor::new(&mut png), image::ImageFormat::Png)?;
                    Ok((png, Annotation { image: image_name(i), instances }))
                });
                (i, r)
            })
            .collect()
    });
    let mut writer = BufWriter::new(fs::File::create(out.join(ANNOTATIONS_FILE))?);
    let mut summary = GenSummary {
        images: 0,
        instances: 0,
        skipped: 0,
    };
    for (i, r) in results {
        match r {
            Ok((png, ann)) => {
                fs::write(out.join(&ann.image), png)?;
                serde_json::to_writer(&mut writer, &AnnotationRecord::from(&ann))?;
                writer.write_all(b"\n")?;
                summary.images += 1;
                summary.instances += ann.instances.len();
            }
            Err(Error::PlacementFailure(n)) => {
                eprintln!("image {i}: no instance placed after {n} tries, skipped");
                summary.skipped += 1;
            }
            Err(e) => return Err(e),
        }
    }
    writer.flush()?;
    Ok(summary)
}

pub fn load_annotations(path: &Path) -> Result<Vec<Annotation>> {
    let reader = BufReader::new(fs::File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: AnnotationRecord = serde_json::from_str(&line)?;
        out.push(Annotation::try_from(rec)?);
    }
    Ok(out)
}

pub fn write_annotations(path: &Path, anns: &[Annotation]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for a in anns {
        serde_json::to_writer(&mut w, &AnnotationRecord::from(a))?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_gray(path: &Path) -> Result<ImageBuffer> {
    Ok(ImageBuffer::from_gray8(&image::open(path)?.to_luma8()))
}

/// An annotated dataset directory loaded into memory.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub root: PathBuf,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn load(root: &Path) -> Result<Self> {
        let anns = load_annotations(&root.join(ANNOTATIONS_FILE))?;
        let samples = anns
            .into_iter()
            .map(|annotation| {
                let image = load_gray(&root.join(&annotation.image))?;
                Ok(Sample { annotation, image })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            root: root.to_path_buf(),
            samples,
        })
    }

    pub fn annotations(&self) -> Vec<Annotation> {
        self.samples.iter().map(|s| s.annotation.clone()).collect()
    }

    pub fn num_instances(&self) -> usize {
        self.samples.iter().map(|s| s.annotation.instances.len()).sum()
    }

    /// Unique transcriptions, sorted.
    pub fn vocabulary(&self) -> Vec<String> {
        let mut words: Vec<String> = self
            .samples
            .iter()
            .flat_map(|s| s.annotation.instances.iter().map(|i| i.text.clone()))
            .collect();
        words.sort();
        words.dedup();
        words
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::polygon_area;

    fn small_cfg(count: usize) -> DatasetConfig {
        DatasetConfig {
            count,
            ..Default::default()
        }
    }

    fn simple(poly: &[Point2]) -> bool {
        let n = poly.len();
        let cross = |o: Point2, a: Point2, b: Point2| (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x);
        for i in 0..n {
            for j in i + 1..n {
                if j == i + 1 || (i == 0 && j == n - 1) {
                    continue;
                }
                let (p1, p2) = (poly[i], poly[(i + 1) % n]);
                let (q1, q2) = (poly[j], poly[(j + 1) % n]);
                let d1 = cross(q1, q2, p1);
                let d2 = cross(q1, q2, p2);
                let d3 = cross(p1, p2, q1);
                let d4 = cross(p1, p2, q2);
                if d1 * d2 < 0.0 && d3 * d4 < 0.0 {
                    return false;
                }
            }
        }
        true
    }

    #[test]
    fn generated_instances_are_valid() {
        let cfg = small_cfg(30);
        for seed in 0..30 {
            let (img, instances) = gen_image(&cfg, seed).unwrap();
            assert_eq!((img.height, img.width), (96, 192));
            assert!(!instances.is_empty() && instances.len() <= 3);
            for inst in &instances {
                let poly = inst.polygon();
                assert!(polygon_area(&poly).abs() > 1.0);
                assert!(simple(&poly), "seed {seed}");
                let (a, b) = (inst.side_a.points(), inst.side_b.points());
                assert!(a[0].dist(&b[0]) < a[0].dist(b.last().unwrap()));
                assert!(poly.iter().all(|p| p.x >= 0.0 && p.y >= 0.0 && p.x <= 192.0 && p.y <= 96.0));
            }
        }
    }

    #[test]
    fn ink_stays_inside_polygons() {
        // render one word per image on a black canvas and count lit pixels
        let font = GlyphFont::builtin();
        let cfg = small_cfg(1);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (mut lit, mut inside) = (0usize, 0usize);
        for _ in 0..40 {
            let (word, baseline, h) = place_word(&cfg, &mut rng, &[]).unwrap();
            let mut canvas = ImageBuffer::new(96, 192, 1);
            let sides = render_word(&word, &baseline, h, 1.0, &font, &mut canvas).unwrap();
            let poly: Vec<Point2> = sides.side_a.iter().chain(sides.side_b.iter().rev()).copied().collect();
            for i in 0..96 {
                for j in 0..192 {
                    if canvas.get(i, j, 0) > 0.0 {
                        lit += 1;
                        let c = Point2::new(j as f64 + 0.5, i as f64 + 0.5);
                        inside += usize::from(crate::geometry::point_in_polygon(&c, &poly));
                    }
                }
            }
        }
        assert!(inside as f64 >= 0.99 * lit as f64, "{inside}/{lit}");
    }

    #[test]
    fn straight_config_boxes_contain_sides() {
        let cfg = DatasetConfig {
            max_curvature: 0.0,
            ..small_cfg(1)
        };
        for seed in 0..20 {
            let (_, instances) = gen_image(&cfg, seed).unwrap();
            for inst in instances {
                let pts = inst.all_points();
                let b = minimum_oriented_rect(&pts).unwrap();
                assert!(pts.iter().all(|p| b.contains(p, 1e-6)));
            }
        }
    }

    #[test]
    fn dataset_round_trip_and_determinism() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        let cfg = small_cfg(6);
        let sa = gen_dataset(&cfg, &a, 7).unwrap();
        gen_dataset(&cfg, &b, 7).unwrap();
        assert_eq!(sa.images + sa.skipped, 6);
        let ja = fs::read(a.join(ANNOTATIONS_FILE)).unwrap();
        assert_eq!(ja, fs::read(b.join(ANNOTATIONS_FILE)).unwrap());
        for i in 0..6 {
            let name = image_name(i);
            assert_eq!(fs::read(a.join(&name)).unwrap(), fs::read(b.join(&name)).unwrap());
        }
        let ds = Dataset::load(&a).unwrap();
        assert_eq!(ds.samples.len(), sa.images);
        let (img, inst) = gen_image(&cfg, 7).unwrap();
        assert_eq!(ds.samples[0].image, img);
        assert_eq!(ds.samples[0].annotation.instances, inst);
    }

    #[test]
    fn separating_axis() {
        let a = OrientedBox::new(Point2::new(0.0, 0.0), 10.0, 2.0, 0.0).unwrap();
        let b = OrientedBox::new(Point2::new(0.0, 3.0), 10.0, 2.0, 0.0).unwrap();
        let c = OrientedBox::new(Point2::new(0.0, 1.5), 10.0, 2.0, 0.3).unwrap();
        assert!(!boxes_overlap(&a, &b));
        assert!(boxes_overlap(&a, &c));
    }
}
