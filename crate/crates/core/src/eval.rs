//! Detection and end-to-end scoring: greedy polygon-IoU matching,
//! precision/recall/F, and lexicon-corrected transcription checks.

use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::dataset::{from_pairs, to_pairs};
use crate::data::Annotation;
use crate::error::{Error, Result};
use crate::geometry::{polygon_iou, BoundaryPointSet, Point2};

pub const DEFAULT_IOU: f64 = 0.5;

/// A predicted text instance.
#[derive(Debug, Clone, PartialEq)]
pub struct SpotResult {
    pub boundary: BoundaryPointSet,
    pub text: String,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpotRecord {
    pub side_a: Vec<[f64; 2]>,
    pub side_b: Vec<[f64; 2]>,
    pub text: String,
    pub score: f64,
}

/// One line of a spots file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageSpots {
    pub image: String,
    pub spots: Vec<SpotRecord>,
}

impl From<&SpotResult> for SpotRecord {
    fn from(s: &SpotResult) -> Self {
        Self {
            side_a: to_pairs(&s.boundary.side_a),
            side_b: to_pairs(&s.boundary.side_b),
            text: s.text.clone(),
            score: s.score,
        }
    }
}

impl TryFrom<&SpotRecord> for SpotResult {
    type Error = Error;

    fn try_from(r: &SpotRecord) -> Result<Self> {
        if !r.score.is_finite() {
            return Err(Error::Config(format!("non-finite score {}", r.score)));
        }
        Ok(Self {
            boundary: BoundaryPointSet::new(from_pairs(&r.side_a), from_pairs(&r.side_b))?,
            text: r.text.clone(),
            score: r.score,
        })
    }
}

pub fn write_spots(path: &Path, records: &[ImageSpots]) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_spots(path: &Path) -> Result<Vec<ImageSpots>> {
    let mut out = Vec::new();
    for line in BufReader::new(fs::File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            let rec: ImageSpots = serde_json::from_str(&line)?;
            for s in &rec.spots {
                SpotResult::try_from(s)?;
            }
            out.push(rec);
        }
    }
    Ok(out)
}

/// Ground truth as perfect spot records with score 1.
pub fn annotations_as_spots(anns: &[Annotation]) -> Vec<ImageSpots> {
    anns.iter()
        .map(|a| ImageSpots {
            image: a.image.clone(),
            spots: a
                .instances
                .iter()
                .map(|i| SpotRecord {
                    side_a: to_pairs(i.side_a.points()),
                    side_b: to_pairs(i.side_b.points()),
                    text: i.text.clone(),
                    score: 1.0,
                })
                .collect(),
        })
        .collect()
}

// ------------------------------------------------------------------ metrics

/// `(precision, recall, f)` from match counts. With no predictions and no
/// ground truth both ratios are 1; any other `0/0` is 0.
pub fn prf(matches: usize, preds: usize, gts: usize) -> (f64, f64, f64) {
    let ratio = |den: usize| {
        if den == 0 {
            if preds == 0 && gts == 0 {
                1.0
            } else {
                0.0
            }
        } else {
            matches as f64 / den as f64
        }
    };
    let (p, r) = (ratio(preds), ratio(gts));
    let f = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
    (p, r, f)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Match {
    pub pred: usize,
    pub gt: usize,
    pub iou: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMatches {
    pub image: String,
    pub matches: Vec<Match>,
    pub predictions: usize,
    pub ground_truths: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub true_positives: usize,
    pub predictions: usize,
    pub ground_truths: usize,
    pub per_image: Vec<ImageMatches>,
}

impl EvalReport {
    fn from_images(per_image: Vec<ImageMatches>) -> Self {
        let tp = per_image.iter().map(|m| m.matches.len()).sum();
        let np = per_image.iter().map(|m| m.predictions).sum();
        let ng = per_image.iter().map(|m| m.ground_truths).sum();
        let (precision, recall, f_measure) = prf(tp, np, ng);
        Self {
            precision,
            recall,
            f_measure,
            true_positives: tp,
            predictions: np,
            ground_truths: ng,
            per_image,
        }
    }
}

fn iou_or_zero(a: &[Point2], b: &[Point2]) -> f64 {
    polygon_iou(a, b).unwrap_or(0.0)
}

/// Greedy one-to-one matching: predictions in descending score order each
/// take the unmatched ground truth of highest IoU, if that IoU is >= `tau`.
/// Degenerate polygons never match.
pub fn greedy_match(preds: &[(Vec<Point2>, f64)], gts: &[Vec<Point2>], tau: f64) -> Vec<Match> {
    let mut order: Vec<usize> = (0..preds.len()).collect();
    order.sort_by(|&i, &j| preds[j].1.total_cmp(&preds[i].1).then(i.cmp(&j)));
    let mut taken = vec![false; gts.len()];
    let mut out = Vec::new();
    for pi in order {
        let mut best: Option<(usize, f64)> = None;
        for (gi, g) in gts.iter().enumerate() {
            if taken[gi] {
                continue;
            }
            let iou = iou_or_zero(&preds[pi].0, g);
            if iou >= tau && best.map_or(true, |(_, b)| iou > b) {
                best = Some((gi, iou));
            }
        }
        if let Some((gi, iou)) = best {
            taken[gi] = true;
            out.push(Match { pred: pi, gt: gi, iou });
        }
    }
    out
}

/// Single-image detection report.
pub fn match_detections(preds: &[(Vec<Point2>, f64)], gts: &[Vec<Point2>], tau: f64) -> EvalReport {
    EvalReport::from_images(vec![ImageMatches {
        image: String::new(),
        matches: greedy_match(preds, gts, tau),
        predictions: preds.len(),
        ground_truths: gts.len(),
    }])
}

// --------------------------------------------------------------- lexicons

/// Levenshtein distance with unit costs, over characters.
pub fn edit_distance(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Lowercase, alphanumerics only.
pub fn normalize_text(s: &str) -> String {
    s.chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_lowercase).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LexiconMode {
    #[default]
    None,
    Full,
}

impl fmt::Display for LexiconMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LexiconMode::None => "none",
            LexiconMode::Full => "full",
        })
    }
}

impl FromStr for LexiconMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(LexiconMode::None),
            "full" => Ok(LexiconMode::Full),
            _ => Err(Error::Config(format!("unknown lexicon mode {s:?}"))),
        }
    }
}

/// `raw` unchanged in `None` mode; otherwise the lexicon word closest by
/// edit distance (compared after [`normalize_text`]), ties going to the
/// lexicographically smallest word.
pub fn lexicon_transcribe(raw: &str, mode: LexiconMode, lexicon: &[String]) -> Result<String> {
    match mode {
        LexiconMode::None => Ok(raw.to_string()),
        LexiconMode::Full => {
            let key = normalize_text(raw);
            lexicon
                .iter()
                .map(|w| (edit_distance(&key, &normalize_text(w)), w))
                .min()
                .map(|(_, w)| w.clone())
                .ok_or(Error::EmptyLexicon)
        }
    }
}

pub fn texts_match(pred: &str, gt: &str) -> bool {
    normalize_text(pred) == normalize_text(gt)
}

// -------------------------------------------------------------- protocols

fn spot_polys(spots: &[SpotResult]) -> Vec<(Vec<Point2>, f64)> {
    spots.iter().map(|s| (s.boundary.polygon(), s.score)).collect()
}

/// End-to-end matches for one image: detection matches whose
/// (lexicon-corrected) text equals the ground truth.
fn e2e_image(
    spots: &[SpotResult],
    gt: &Annotation,
    mode: LexiconMode,
    lexicon: &[String],
    tau: f64,
) -> Result<(ImageMatches, ImageMatches)> {
    let gts: Vec<Vec<Point2>> = gt.instances.iter().map(|i| i.polygon()).collect();
    let det = greedy_match(&spot_polys(spots), &gts, tau);
    let mut e2e = Vec::new();
    for m in &det {
        let text = lexicon_transcribe(&spots[m.pred].text, mode, lexicon)?;
        if texts_match(&text, &gt.instances[m.gt].text) {
            e2e.push(*m);
        }
    }
    let mk = |matches| ImageMatches {
        image: gt.image.clone(),
        matches,
        predictions: spots.len(),
        ground_truths: gts.len(),
    };
    Ok((mk(det), mk(e2e)))
}

/// End-to-end report for one image.
pub fn e2e_eval(spots: &[SpotResult], gt: &Annotation, mode: LexiconMode, lexicon: &[String], tau: f64) -> Result<EvalReport> {
    let (_, e2e) = e2e_image(spots, gt, mode, lexicon, tau)?;
    Ok(EvalReport::from_images(vec![e2e]))
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetReport {
    pub detection: EvalReport,
    pub e2e: EvalReport,
    pub mode: LexiconMode,
    pub iou: f64,
}

/// Scores spot records against a dataset, summing counts over images.
/// Images without a spot record have no predictions.
pub fn evaluate(
    spots: &[ImageSpots],
    gts: &[Annotation],
    mode: LexiconMode,
    lexicon: &[String],
    tau: f64,
) -> Result<DatasetReport> {
    if !(tau > 0.0 && tau < 1.0) {
        return Err(Error::Config(format!("IoU threshold {tau} outside (0, 1)")));
    }
    if mode == LexiconMode::Full && lexicon.is_empty() {
        return Err(Error::EmptyLexicon);
    }
    let mut by_image: HashMap<&str, Vec<SpotResult>> = HashMap::new();
    for rec in spots {
        let parsed = rec.spots.iter().map(SpotResult::try_from).collect::<Result<Vec<_>>>()?;
        if by_image.insert(rec.image.as_str(), parsed).is_some() {
            return Err(Error::Config(format!("duplicate spot record for {}", rec.image)));
        }
    }
    for rec in spots {
        if !gts.iter().any(|g| g.image == rec.image) {
            return Err(Error::Config(format!("spots for unknown image {}", rec.image)));
        }
    }
    let mut det = Vec::with_capacity(gts.len());
    let mut e2e = Vec::with_capacity(gts.len());
    for gt in gts {
        let empty = Vec::new();
        let s = by_image.get(gt.image.as_str()).unwrap_or(&empty);
        let (d, e) = e2e_image(s, gt, mode, lexicon, tau)?;
        det.push(d);
        e2e.push(e);
    }
    Ok(DatasetReport {
        detection: EvalReport::from_images(det),
        e2e: EvalReport::from_images(e2e),
        mode,
        iou: tau,
    })
}

/// Machine-readable summary record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRecord {
    pub kind: String,
    pub mode: String,
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
    pub f_measure: f64,
    pub true_positives: usize,
    pub predictions: usize,
    pub ground_truths: usize,
}

impl DatasetReport {
    pub fn records(&self) -> Vec<ReportRecord> {
        [("detection", &self.detection), ("e2e", &self.e2e)]
            .into_iter()
            .map(|(kind, r)| ReportRecord {
                kind: kind.into(),
                mode: self.mode.to_string(),
                iou: self.iou,
                precision: r.precision,
                recall: r.recall,
                f_measure: r.f_measure,
                true_positives: r.true_positives,
                predictions: r.predictions,
                ground_truths: r.ground_truths,
            })
            .collect()
    }
}

impl fmt::Display for DatasetReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (name, r) in [("detection", &self.detection), ("e2e", &self.e2e)] {
            writeln!(
                f,
                "{name:<10} P={:.4} R={:.4} F={:.4}  (tp {}, preds {}, gts {}, iou {}, lexicon {})",
                r.precision, r.recall, r.f_measure, r.true_positives, r.predictions, r.ground_truths, self.iou, self.mode
            )?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Instance;
    use crate::geometry::Polyline;

    fn square(x: f64, y: f64, w: f64, h: f64) -> Vec<Point2> {
        vec![Point2::new(x, y), Point2::new(x + w, y), Point2::new(x + w, y + h), Point2::new(x, y + h)]
    }

    fn inst(x: f64, text: &str) -> Instance {
        Instance {
            side_a: Polyline::new(vec![Point2::new(x, 0.0), Point2::new(x + 10.0, 0.0)]).unwrap(),
            side_b: Polyline::new(vec![Point2::new(x, 4.0), Point2::new(x + 10.0, 4.0)]).unwrap(),
            text: text.into(),
        }
    }

    fn spot(x: f64, text: &str, score: f64) -> SpotResult {
        SpotResult {
            boundary: BoundaryPointSet::new(
                vec![Point2::new(x, 0.0), Point2::new(x + 10.0, 0.0)],
                vec![Point2::new(x, 4.0), Point2::new(x + 10.0, 4.0)],
            )
            .unwrap(),
            text: text.into(),
            score,
        }
    }

    #[test]
    fn detection_examples() {
        let gts = vec![square(0.0, 0.0, 1.0, 1.0), square(5.0, 0.0, 1.0, 1.0)];
        let preds: Vec<_> = gts.iter().map(|g| (g.clone(), 1.0)).collect();
        let r = match_detections(&preds, &gts, 0.5);
        assert_eq!((r.precision, r.recall, r.f_measure), (1.0, 1.0, 1.0));

        // shifted by half its width: IoU 1/3
        let half = vec![(square(0.5, 0.0, 1.0, 1.0), 1.0)];
        let r = match_detections(&half, &[square(0.0, 0.0, 1.0, 1.0)], 0.5);
        assert_eq!((r.precision, r.recall, r.f_measure), (0.0, 0.0, 0.0));

        let two = vec![(square(0.0, 0.0, 1.0, 1.0), 0.9), (square(0.0, 0.0, 1.0, 0.95), 0.8)];
        let r = match_detections(&two, &[square(0.0, 0.0, 1.0, 1.0)], 0.5);
        assert_eq!((r.precision, r.recall), (0.5, 1.0));
        assert!((r.f_measure - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.per_image[0].matches[0].pred, 0);
    }

    #[test]
    fn empty_conventions() {
        assert_eq!(prf(0, 0, 0), (1.0, 1.0, 1.0));
        assert_eq!(prf(0, 0, 3), (0.0, 0.0, 0.0));
        assert_eq!(prf(0, 2, 0), (0.0, 0.0, 0.0));
    }

    #[test]
    fn edit_distance_cases() {
        assert_eq!(edit_distance("kitten", "sitting"), 3);
        assert_eq!(edit_distance("same", "same"), 0);
        assert_eq!(edit_distance("", "abc"), 3);
        assert_eq!(edit_distance("abc", ""), 3);
    }

    #[test]
    fn edit_distance_is_a_metric() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        let word = |rng: &mut rand_chacha::ChaCha8Rng| -> String {
            (0..rng.gen_range(0..7)).map(|_| (b'a' + rng.gen_range(0..3)) as char).collect()
        };
        for _ in 0..300 {
            let (a, b, c) = (word(&mut rng), word(&mut rng), word(&mut rng));
            assert_eq!(edit_distance(&a, &b), edit_distance(&b, &a));
            assert!(edit_distance(&a, &c) <= edit_distance(&a, &b) + edit_distance(&b, &c));
            assert_eq!(edit_distance(&a, &b) == 0, a == b);
        }
    }

    #[test]
    fn lexicon() {
        let lex = vec!["HELLO".to_string(), "WORLD".to_string()];
        assert_eq!(lexicon_transcribe("HELL0", LexiconMode::Full, &lex).unwrap(), "HELLO");
        assert_eq!(lexicon_transcribe("WORLD", LexiconMode::Full, &lex).unwrap(), "WORLD");
        assert_eq!(lexicon_transcribe("xyz", LexiconMode::None, &[]).unwrap(), "xyz");
        assert!(matches!(lexicon_transcribe("a", LexiconMode::Full, &[]), Err(Error::EmptyLexicon)));
        let tie = vec!["ab".to_string(), "aa".to_string()];
        assert_eq!(lexicon_transcribe("a", LexiconMode::Full, &tie).unwrap(), "aa");
    }

    #[test]
    fn end_to_end_cases() {
        let gt = Annotation {
            image: "x".into(),
            instances: vec![inst(0.0, "Cafe")],
        };
        let lex = vec!["Cafe".to_string(), "Taxi".to_string()];
        let ok = e2e_eval(&[spot(0.0, "cafe", 0.9)], &gt, LexiconMode::None, &lex, 0.5).unwrap();
        assert_eq!(ok.f_measure, 1.0);
        let wrong = e2e_eval(&[spot(0.0, "Cafx", 0.9)], &gt, LexiconMode::None, &lex, 0.5).unwrap();
        assert_eq!((wrong.precision, wrong.true_positives), (0.0, 0));
        let fixed = e2e_eval(&[spot(0.0, "Cafx", 0.9)], &gt, LexiconMode::Full, &lex, 0.5).unwrap();
        assert_eq!(fixed.f_measure, 1.0);
    }

    #[test]
    fn dataset_level_counts() {
        let gts = vec![
            Annotation {
                image: "a".into(),
                instances: vec![inst(0.0, "Bus"), inst(20.0, "Taxi")],
            },
            Annotation {
                image: "b".into(),
                instances: vec![inst(0.0, "PARK")],
            },
        ];
        let spots = vec![ImageSpots {
            image: "a".into(),
            spots: vec![(&spot(0.0, "Bus", 0.7)).into(), (&spot(20.0, "Tax", 0.6)).into(), (&spot(40.0, "x", 0.5)).into()],
        }];
        let r = evaluate(&spots, &gts, LexiconMode::None, &[], 0.5).unwrap();
        assert_eq!((r.detection.true_positives, r.detection.predictions, r.detection.ground_truths), (2, 3, 3));
        assert_eq!(r.e2e.true_positives, 1);
        let perfect = evaluate(&annotations_as_spots(&gts), &gts, LexiconMode::None, &[], 0.5).unwrap();
        assert_eq!((perfect.detection.f_measure, perfect.e2e.f_measure), (1.0, 1.0));
    }
}
