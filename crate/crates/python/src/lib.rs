//! Python bindings: geometry helpers, dataset generation, the spotter and
//! evaluation. Structured results are returned as plain dicts and lists.

use std::path::{Path, PathBuf};

use boundary_spot::data::dataset::ANNOTATIONS_FILE;
use boundary_spot::data::{gen_dataset as core_gen_dataset, load_annotations, Dataset, DatasetConfig, ProposalMode};
use boundary_spot::eval::{self, write_spots, LexiconMode};
use boundary_spot::geometry::{self, BoundaryPointSet, OffsetVector, OrientedBox, Point2, Polyline};
use boundary_spot::model::{self, SpotterConfig, TrainConfig};
use boundary_spot::rectify::ImageBuffer;
use boundary_spot::Error;
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

type Pts = Vec<(f64, f64)>;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn to_points(v: &[(f64, f64)]) -> Vec<Point2> {
    v.iter().map(|&(x, y)| Point2::new(x, y)).collect()
}

fn from_points(v: &[Point2]) -> Pts {
    v.iter().map(|p| (p.x, p.y)).collect()
}

fn boundary(side_a: &[(f64, f64)], side_b: &[(f64, f64)]) -> PyResult<BoundaryPointSet> {
    BoundaryPointSet::new(to_points(side_a), to_points(side_b)).map_err(py_err)
}

/// Converts any serializable value to Python objects through `json`.
fn to_py<T: serde::Serialize>(py: Python<'_>, v: &T) -> PyResult<Py<PyAny>> {
    let s = serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    Ok(py.import("json")?.call_method1("loads", (s,))?.unbind())
}

#[pyfunction]
fn resample_polyline(points: Pts, k: usize) -> PyResult<Pts> {
    let line = Polyline::new(to_points(&points)).map_err(py_err)?;
    Ok(from_points(&geometry::resample_polyline(&line, k).map_err(py_err)?))
}

/// Returns `(side_a, side_b)` default points of a `w0 x h0` crop.
#[pyfunction]
fn default_points(w0: f64, h0: f64, k: usize) -> PyResult<(Pts, Pts)> {
    let d = geometry::default_points(w0, h0, k).map_err(py_err)?;
    Ok((from_points(&d.side_a), from_points(&d.side_b)))
}

#[pyfunction]
fn encode_offsets(defaults: (Pts, Pts), targets: (Pts, Pts), w0: f64, h0: f64) -> PyResult<Vec<f64>> {
    let d = boundary(&defaults.0, &defaults.1)?;
    let t = boundary(&targets.0, &targets.1)?;
    Ok(geometry::encode_offsets(&d, &t, w0, h0).map_err(py_err)?.values)
}

#[pyfunction]
fn decode_offsets(defaults: (Pts, Pts), offsets: Vec<f64>, w0: f64, h0: f64) -> PyResult<(Pts, Pts)> {
    let d = boundary(&defaults.0, &defaults.1)?;
    let bp = geometry::decode_offsets(&d, &OffsetVector { values: offsets }, w0, h0).map_err(py_err)?;
    Ok((from_points(&bp.side_a), from_points(&bp.side_b)))
}

#[pyfunction]
fn polygon_iou(a: Pts, b: Pts) -> PyResult<f64> {
    geometry::polygon_iou(&to_points(&a), &to_points(&b)).map_err(py_err)
}

#[pyfunction]
fn edit_distance(a: &str, b: &str) -> usize {
    eval::edit_distance(a, b)
}

#[pyfunction]
#[pyo3(signature = (out, count, seed, curvature=60.0, rotation=45.0, height=96, width=192))]
fn gen_dataset(
    py: Python<'_>,
    out: PathBuf,
    count: usize,
    seed: u64,
    curvature: f64,
    rotation: f64,
    height: usize,
    width: usize,
) -> PyResult<Py<PyAny>> {
    let cfg = DatasetConfig {
        count,
        height,
        width,
        max_curvature: curvature,
        max_rotation: rotation,
        ..Default::default()
    };
    let s = core_gen_dataset(&cfg, &out, seed).map_err(py_err)?;
    to_py(
        py,
        &serde_json::json!({"images": s.images, "instances": s.instances, "skipped": s.skipped}),
    )
}

/// Scores a spots file against a dataset directory; returns the two
/// report records (detection, e2e).
#[pyfunction]
#[pyo3(signature = (spots, data, mode="none", iou=eval::DEFAULT_IOU))]
fn evaluate(py: Python<'_>, spots: PathBuf, data: PathBuf, mode: &str, iou: f64) -> PyResult<Py<PyAny>> {
    let mode: LexiconMode = mode.parse().map_err(py_err)?;
    let records = eval::load_spots(&spots).map_err(py_err)?;
    let gts = load_annotations(&data.join(ANNOTATIONS_FILE)).map_err(py_err)?;
    let mut lexicon: Vec<String> = gts.iter().flat_map(|a| a.instances.iter().map(|i| i.text.clone())).collect();
    lexicon.sort();
    lexicon.dedup();
    let r = eval::evaluate(&records, &gts, mode, &lexicon, iou).map_err(py_err)?;
    to_py(py, &r.records())
}

#[pyfunction]
#[pyo3(signature = (seed=11))]
fn gradcheck(seed: u64) -> PyResult<bool> {
    Ok(boundary_spot::diagnostics::gradcheck_suite(seed).map_err(py_err)?.passed())
}

/// Full pipeline: boundary regressor, TPS rectification and recognizer.
#[pyclass(unsendable)]
struct Spotter {
    inner: model::Spotter,
}

#[pymethods]
impl Spotter {
    #[new]
    #[pyo3(signature = (seed=0, k=7, proposals="oriented", rec_channels=64, hidden=256, attention=256))]
    fn new(seed: u64, k: usize, proposals: &str, rec_channels: usize, hidden: usize, attention: usize) -> PyResult<Self> {
        let proposals: ProposalMode = proposals.parse().map_err(py_err)?;
        let cfg = SpotterConfig {
            k,
            proposals,
            rec_channels,
            hidden,
            attention,
            ..Default::default()
        };
        Ok(Self {
            inner: model::Spotter::new(cfg, seed).map_err(py_err)?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Self {
            inner: model::load_checkpoint(&path).map_err(py_err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        model::save_checkpoint(&self.inner, &path).map_err(py_err)
    }

    #[getter]
    fn config(&self, py: Python<'_>) -> PyResult<Py<PyAny>> {
        to_py(py, &self.inner.config)
    }

    /// Trains in place on a dataset directory; returns per-epoch metrics.
    #[pyo3(signature = (data, epochs, seed, val=None))]
    fn train(&mut self, py: Python<'_>, data: PathBuf, epochs: usize, seed: u64, val: Option<PathBuf>) -> PyResult<Py<PyAny>> {
        let cfg = TrainConfig {
            seed,
            ..TrainConfig::with_epochs(epochs)
        };
        let train = Dataset::load(&data).map_err(py_err)?;
        let holdout = match val {
            Some(v) => Dataset::load(&v).map_err(py_err)?,
            None => train.clone(),
        };
        let m = model::train_loop(&mut self.inner, &train.samples, &holdout.samples, &cfg, |_, _| Ok(()))
            .map_err(py_err)?;
        to_py(py, &m)
    }

    /// Spots one grayscale image given oriented proposals
    /// `(cx, cy, w, h, angle)`.
    fn spot(&mut self, py: Python<'_>, image: PathBuf, proposals: Vec<(f64, f64, f64, f64, f64)>) -> PyResult<Py<PyAny>> {
        let img = image_buffer(&image)?;
        let boxes = proposals
            .into_iter()
            .map(|(cx, cy, w, h, a)| OrientedBox::new(Point2::new(cx, cy), w, h, a))
            .collect::<boundary_spot::Result<Vec<_>>>()
            .map_err(py_err)?;
        let spots = self.inner.spot(&img, &boxes).map_err(py_err)?;
        let records: Vec<eval::SpotRecord> = spots.iter().map(eval::SpotRecord::from).collect();
        to_py(py, &records)
    }

    /// Spots every image of a dataset from oracle proposals and writes a
    /// spots file; returns the number of spots.
    #[pyo3(signature = (data, out, jitter=0.05, seed=0))]
    fn spot_dataset(&mut self, data: PathBuf, out: PathBuf, jitter: f64, seed: u64) -> PyResult<usize> {
        let ds = Dataset::load(&data).map_err(py_err)?;
        let records = self.inner.spot_samples(&ds.samples, jitter, seed).map_err(py_err)?;
        write_spots(&out, &records).map_err(py_err)?;
        Ok(records.iter().map(|r| r.spots.len()).sum())
    }
}

fn image_buffer(path: &Path) -> PyResult<ImageBuffer> {
    boundary_spot::data::dataset::load_gray(path).map_err(py_err)
}

#[pymodule]
fn boundary_spot_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(resample_polyline, m)?)?;
    m.add_function(wrap_pyfunction!(default_points, m)?)?;
    m.add_function(wrap_pyfunction!(encode_offsets, m)?)?;
    m.add_function(wrap_pyfunction!(decode_offsets, m)?)?;
    m.add_function(wrap_pyfunction!(polygon_iou, m)?)?;
    m.add_function(wrap_pyfunction!(edit_distance, m)?)?;
    m.add_function(wrap_pyfunction!(gen_dataset, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate, m)?)?;
    m.add_function(wrap_pyfunction!(gradcheck, m)?)?;
    m.add_class::<Spotter>()?;
    Ok(())
}
