//! Geometric primitives for boundary-point text spotting.
//!
//! Coordinates are pixels in raster convention: x grows rightward, y grows
//! downward. Angles are measured from +x towards +y, which reads as clockwise
//! on screen.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn dist(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn lerp(&self, other: &Point2, t: f64) -> Point2 {
        Point2::new(
            self.x + (other.x - self.x) * t,
            self.y + (other.y - self.y) * t,
        )
    }
}

/// Mean of a point list. Returns the origin for an empty list.
pub fn centroid(points: &[Point2]) -> Point2 {
    if points.is_empty() {
        return Point2::default();
    }
    let n = points.len() as f64;
    let (sx, sy) = points
        .iter()
        .fold((0.0, 0.0), |(sx, sy), p| (sx + p.x, sy + p.y));
    Point2::new(sx / n, sy / n)
}

/// An ordered chain of at least two points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    points: Vec<Point2>,
}

impl Polyline {
    pub fn new(points: Vec<Point2>) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::DegeneratePolyline(format!(
                "need at least 2 points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|p| !p.is_finite()) {
            return Err(Error::DegeneratePolyline("non-finite coordinate".into()));
        }
        Ok(Self { points })
    }

    pub fn points(&self) -> &[Point2] {
        &self.points
    }

    pub fn first(&self) -> Point2 {
        self.points[0]
    }

    pub fn last(&self) -> Point2 {
        self.points[self.points.len() - 1]
    }

    pub fn length(&self) -> f64 {
        self.points.windows(2).map(|w| w[0].dist(&w[1])).sum()
    }

    pub fn reversed(&self) -> Polyline {
        let mut points = self.points.clone();
        points.reverse();
        Polyline { points }
    }
}

/// Samples `k` points spaced equally by arc length along `line`, from its
/// first point to its last.
///
/// A sample at arc position `s` is taken on the segment `j` with
/// `len[j] <= s < len[j+1]`; the final sample is pinned to the last vertex,
/// which the half-open search would otherwise never select.
pub fn resample_polyline(line: &Polyline, k: usize) -> Result<Vec<Point2>> {
    if k < 2 {
        return Err(Error::BadArity(format!("K must be >= 2, got {k}")));
    }
    let pts = line.points();
    let mut cumulative = Vec::with_capacity(pts.len());
    cumulative.push(0.0);
    for w in pts.windows(2) {
        let prev = *cumulative.last().unwrap();
        cumulative.push(prev + w[0].dist(&w[1]));
    }
    let total = *cumulative.last().unwrap();
    if !(total > 0.0) {
        return Err(Error::DegeneratePolyline("zero arc length".into()));
    }
    let step = total / (k - 1) as f64;

    let mut out = Vec::with_capacity(k);
    let mut seg = 0;
    for i in 0..k - 1 {
        let pos = step * i as f64;
        while seg + 1 < pts.len() - 1 && pos >= cumulative[seg + 1] {
            seg += 1;
        }
        let seg_len = cumulative[seg + 1] - cumulative[seg];
        if pos >= cumulative[seg + 1] || seg_len <= 0.0 {
            out.push(pts[seg + 1]);
        } else {
            let t = (pos - cumulative[seg]) / seg_len;
            out.push(pts[seg].lerp(&pts[seg + 1], t));
        }
    }
    out.push(line.last());
    Ok(out)
}

/// Rotated rectangle. The width axis runs along the long side at `angle`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox {
    pub center: Point2,
    pub width: f64,
    pub height: f64,
    pub angle: f64,
}

/// Wraps an angle into (-pi/2, pi/2]. Rectangles are symmetric under a
/// half turn, so this loses no information about the box.
pub fn normalize_half_turn(angle: f64) -> f64 {
    let mut a = angle.rem_euclid(PI);
    if a > FRAC_PI_2 {
        a -= PI;
    }
    // rem_euclid maps -pi/2 to pi/2 already; guard the rounding edge.
    if a <= -FRAC_PI_2 {
        a += PI;
    }
    a
}

impl OrientedBox {
    /// Builds a box, swapping axes if needed so `width >= height`.
    pub fn new(center: Point2, width: f64, height: f64, angle: f64) -> Result<Self> {
        if !(width > 0.0 && height > 0.0) || !width.is_finite() || !height.is_finite() {
            return Err(Error::DegenerateBox(format!(
                "width {width} and height {height} must be positive"
            )));
        }
        if !center.is_finite() || !angle.is_finite() {
            return Err(Error::DegenerateBox("non-finite center or angle".into()));
        }
        let (width, height, angle) = if height > width {
            (height, width, angle + FRAC_PI_2)
        } else {
            (width, height, angle)
        };
        Ok(Self {
            center,
            width,
            height,
            angle: normalize_half_turn(angle),
        })
    }

    /// Axis-aligned box spanning `[x0, x1] x [y0, y1]`, kept at angle 0 even
    /// when it is taller than wide.
    pub fn axis_aligned(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        let (w, h) = (x1 - x0, y1 - y0);
        if !(w > 0.0 && h > 0.0) {
            return Err(Error::DegenerateBox(format!("extent {w}x{h}")));
        }
        Ok(Self {
            center: Point2::new((x0 + x1) / 2.0, (y0 + y1) / 2.0),
            width: w,
            height: h,
            angle: 0.0,
        })
    }

    pub fn area(&self) -> f64 {
        self.width * self.height
    }

    /// Unit vectors along the width axis and the height axis.
    pub fn axes(&self) -> (Point2, Point2) {
        let (s, c) = self.angle.sin_cos();
        (Point2::new(c, s), Point2::new(-s, c))
    }

    /// Corners in crop order: top-left, top-right, bottom-right, bottom-left.
    pub fn corners(&self) -> [Point2; 4] {
        let (u, v) = self.axes();
        let (hw, hh) = (self.width / 2.0, self.height / 2.0);
        let at = |a: f64, b: f64| {
            Point2::new(
                self.center.x + u.x * a + v.x * b,
                self.center.y + u.y * a + v.y * b,
            )
        };
        [at(-hw, -hh), at(hw, -hh), at(hw, hh), at(-hw, hh)]
    }

    /// True when `p` lies in the box, with tolerance `eps` on each axis.
    pub fn contains(&self, p: &Point2, eps: f64) -> bool {
        let (u, v) = self.axes();
        let (dx, dy) = (p.x - self.center.x, p.y - self.center.y);
        let a = dx * u.x + dy * u.y;
        let b = dx * v.x + dy * v.y;
        a.abs() <= self.width / 2.0 + eps && b.abs() <= self.height / 2.0 + eps
    }
}

fn cross(o: &Point2, a: &Point2, b: &Point2) -> f64 {
    (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
}

/// Convex hull by monotone chain; collinear points are dropped.
pub fn convex_hull(points: &[Point2]) -> Vec<Point2> {
    let mut pts: Vec<Point2> = points.to_vec();
    pts.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let mut hull: Vec<Point2> = Vec::with_capacity(pts.len() * 2);
    for p in &pts {
        while hull.len() >= 2 && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }
    let lower = hull.len() + 1;
    for p in pts.iter().rev().skip(1) {
        while hull.len() >= lower && cross(&hull[hull.len() - 2], &hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(*p);
    }
    hull.pop();
    hull
}

/// Minimum-area enclosing rectangle via rotating calipers over hull edges.
pub fn minimum_oriented_rect(points: &[Point2]) -> Result<OrientedBox> {
    if points.len() < 3 {
        return Err(Error::DegenerateInput(format!(
            "need at least 3 points, got {}",
            points.len()
        )));
    }
    if points.iter().any(|p| !p.is_finite()) {
        return Err(Error::DegenerateInput("non-finite coordinate".into()));
    }
    let hull = convex_hull(points);
    let scale = hull
        .iter()
        .flat_map(|p| [p.x.abs(), p.y.abs()])
        .fold(1.0, f64::max);
    if hull.len() < 3 || polygon_area(&hull).abs() <= 1e-12 * scale * scale {
        return Err(Error::DegenerateInput("points are collinear".into()));
    }

    let origin = hull[0];
    let mut best: Option<(f64, f64, f64, f64, f64, f64)> = None;
    for i in 0..hull.len() {
        let a = hull[i];
        let b = hull[(i + 1) % hull.len()];
        let len = a.dist(&b);
        if len == 0.0 {
            continue;
        }
        let (ux, uy) = ((b.x - a.x) / len, (b.y - a.y) / len);
        let (mut lo_u, mut hi_u, mut lo_v, mut hi_v) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for p in &hull {
            let (dx, dy) = (p.x - origin.x, p.y - origin.y);
            let pu = dx * ux + dy * uy;
            let pv = -dx * uy + dy * ux;
            lo_u = lo_u.min(pu);
            hi_u = hi_u.max(pu);
            lo_v = lo_v.min(pv);
            hi_v = hi_v.max(pv);
        }
        let area = (hi_u - lo_u) * (hi_v - lo_v);
        if best.map_or(true, |b| area < b.0) {
            best = Some((area, uy.atan2(ux), lo_u, hi_u, lo_v, hi_v));
        }
    }
    let (_, theta, lo_u, hi_u, lo_v, hi_v) = best.expect("hull has edges");
    let (s, c) = theta.sin_cos();
    let (mu, mv) = ((lo_u + hi_u) / 2.0, (lo_v + hi_v) / 2.0);
    let center = Point2::new(origin.x + mu * c - mv * s, origin.y + mu * s + mv * c);
    OrientedBox::new(center, hi_u - lo_u, hi_v - lo_v, theta)
}

/// Two co-oriented long sides of a text instance, `k` points each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPointSet {
    pub side_a: Vec<Point2>,
    pub side_b: Vec<Point2>,
}

impl BoundaryPointSet {
    pub fn new(side_a: Vec<Point2>, side_b: Vec<Point2>) -> Result<Self> {
        if side_a.len() != side_b.len() {
            return Err(Error::ArityMismatch {
                expected: side_a.len(),
                got: side_b.len(),
            });
        }
        if side_a.len() < 2 {
            return Err(Error::BadArity(format!(
                "need at least 2 points per side, got {}",
                side_a.len()
            )));
        }
        Ok(Self { side_a, side_b })
    }

    /// Points per side.
    pub fn k(&self) -> usize {
        self.side_a.len()
    }

    /// All 2K points, side_a first, both in start-to-end order.
    pub fn points(&self) -> Vec<Point2> {
        self.side_a.iter().chain(self.side_b.iter()).copied().collect()
    }

    pub fn from_points(points: &[Point2], k: usize) -> Result<Self> {
        if points.len() != 2 * k {
            return Err(Error::ArityMismatch {
                expected: 2 * k,
                got: points.len(),
            });
        }
        Self::new(points[..k].to_vec(), points[k..].to_vec())
    }

    /// Closed outline: side_a forward, then side_b backward.
    pub fn polygon(&self) -> Vec<Point2> {
        self.side_a
            .iter()
            .chain(self.side_b.iter().rev())
            .copied()
            .collect()
    }

    pub fn map(&self, f: impl Fn(&Point2) -> Point2) -> Self {
        Self {
            side_a: self.side_a.iter().map(&f).collect(),
            side_b: self.side_b.iter().map(&f).collect(),
        }
    }

    /// Puts the sides into canonical order: side_a above side_b (smaller
    /// mean y, ties by smaller mean x), both running towards increasing x.
    pub fn canonicalize(mut self) -> Self {
        let ca = centroid(&self.side_a);
        let cb = centroid(&self.side_b);
        if ca.y > cb.y || (ca.y == cb.y && ca.x > cb.x) {
            std::mem::swap(&mut self.side_a, &mut self.side_b);
        }
        let k = self.k();
        let run = (self.side_a[k - 1].x - self.side_a[0].x) + (self.side_b[k - 1].x - self.side_b[0].x);
        if run < 0.0 {
            self.side_a.reverse();
            self.side_b.reverse();
        }
        self
    }
}

/// Regression targets relative to default points, normalized by the box
/// size. Layout: `[dx_1, dy_1, ..., dx_2K, dy_2K]` over side_a then side_b.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OffsetVector {
    pub values: Vec<f64>,
}

impl OffsetVector {
    pub fn zeros(k: usize) -> Self {
        Self {
            values: vec![0.0; 4 * k],
        }
    }

    pub fn k(&self) -> usize {
        self.values.len() / 4
    }
}

/// Default points in the crop frame: K evenly spaced points on the top edge
/// and the same x positions on the bottom edge.
pub fn default_points(w0: f64, h0: f64, k: usize) -> Result<BoundaryPointSet> {
    if k < 2 {
        return Err(Error::BadArity(format!("K must be >= 2, got {k}")));
    }
    if !(w0 > 0.0 && h0 > 0.0) {
        return Err(Error::DegenerateBox(format!("{w0}x{h0}")));
    }
    let xs: Vec<f64> = (0..k).map(|i| i as f64 * w0 / (k - 1) as f64).collect();
    Ok(BoundaryPointSet {
        side_a: xs.iter().map(|&x| Point2::new(x, 0.0)).collect(),
        side_b: xs.iter().map(|&x| Point2::new(x, h0)).collect(),
    })
}

pub fn decode_offsets(
    defaults: &BoundaryPointSet,
    offsets: &OffsetVector,
    w0: f64,
    h0: f64,
) -> Result<BoundaryPointSet> {
    let k = defaults.k();
    if offsets.values.len() != 4 * k {
        return Err(Error::ArityMismatch {
            expected: 4 * k,
            got: offsets.values.len(),
        });
    }
    let pts: Vec<Point2> = defaults
        .points()
        .iter()
        .zip(offsets.values.chunks_exact(2))
        .map(|(d, o)| Point2::new(d.x + w0 * o[0], d.y + h0 * o[1]))
        .collect();
    BoundaryPointSet::from_points(&pts, k)
}

pub fn encode_offsets(
    defaults: &BoundaryPointSet,
    targets: &BoundaryPointSet,
    w0: f64,
    h0: f64,
) -> Result<OffsetVector> {
    if targets.k() != defaults.k() {
        return Err(Error::ArityMismatch {
            expected: defaults.k(),
            got: targets.k(),
        });
    }
    if !(w0 > 0.0 && h0 > 0.0) {
        return Err(Error::DegenerateBox(format!("{w0}x{h0}")));
    }
    let values = defaults
        .points()
        .iter()
        .zip(targets.points())
        .flat_map(|(d, t)| [(t.x - d.x) / w0, (t.y - d.y) / h0])
        .collect();
    Ok(OffsetVector { values })
}

/// Homogeneous 2-D transform, row-major.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HomMatrix(pub [[f64; 3]; 3]);

impl HomMatrix {
    pub const IDENTITY: HomMatrix = HomMatrix([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn mul(&self, other: &HomMatrix) -> HomMatrix {
        let mut out = [[0.0; 3]; 3];
        for (i, row) in out.iter_mut().enumerate() {
            for (j, cell) in row.iter_mut().enumerate() {
                *cell = (0..3).map(|k| self.0[i][k] * other.0[k][j]).sum();
            }
        }
        HomMatrix(out)
    }

    pub fn inverse(&self) -> Result<HomMatrix> {
        let m = &self.0;
        let lin_det = m[0][0] * m[1][1] - m[0][1] * m[1][0];
        if lin_det.abs() <= 1e-12 {
            return Err(Error::SingularMatrix);
        }
        let cof = |r0: usize, r1: usize, c0: usize, c1: usize| {
            m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]
        };
        let det = m[0][0] * cof(1, 2, 1, 2) - m[0][1] * cof(1, 2, 0, 2) + m[0][2] * cof(1, 2, 0, 1);
        if det.abs() <= 1e-300 {
            return Err(Error::SingularMatrix);
        }
        let adj = [
            [cof(1, 2, 1, 2), -cof(0, 2, 1, 2), cof(0, 1, 1, 2)],
            [-cof(1, 2, 0, 2), cof(0, 2, 0, 2), -cof(0, 1, 0, 2)],
            [cof(1, 2, 0, 1), -cof(0, 2, 0, 1), cof(0, 1, 0, 1)],
        ];
        let mut out = [[0.0; 3]; 3];
        for i in 0..3 {
            for j in 0..3 {
                out[i][j] = adj[i][j] / det;
            }
        }
        Ok(HomMatrix(out))
    }

    pub fn apply(&self, p: &Point2) -> Point2 {
        let m = &self.0;
        let x = m[0][0] * p.x + m[0][1] * p.y + m[0][2];
        let y = m[1][0] * p.x + m[1][1] * p.y + m[1][2];
        let w = m[2][0] * p.x + m[2][1] * p.y + m[2][2];
        if w == 1.0 {
            Point2::new(x, y)
        } else {
            Point2::new(x / w, y / w)
        }
    }
}

/// Matrix taking original-image coordinates into an `out_w x out_h` crop of
/// `bx`, with the crop origin at its top-left corner. The box's long axis
/// becomes the crop's x axis and the box corners land on the crop corners.
pub fn crop_transform(bx: &OrientedBox, out_w: f64, out_h: f64) -> Result<HomMatrix> {
    if !(bx.width > 0.0 && bx.height > 0.0) {
        return Err(Error::DegenerateBox(format!("{}x{}", bx.width, bx.height)));
    }
    if !(out_w > 0.0 && out_h > 0.0) {
        return Err(Error::DegenerateBox(format!("crop {out_w}x{out_h}")));
    }
    let sw = out_w / bx.width;
    let sh = out_h / bx.height;
    let (s, c) = bx.angle.sin_cos();
    let (cx, cy) = (bx.center.x, bx.center.y);
    Ok(HomMatrix([
        [sw * c, sw * s, -sw * (c * cx + s * cy) + out_w / 2.0],
        [-sh * s, sh * c, -sh * (-s * cx + c * cy) + out_h / 2.0],
        [0.0, 0.0, 1.0],
    ]))
}

/// Applies `m` (or its inverse) to every point.
pub fn map_points(m: &HomMatrix, pts: &[Point2], inverse: bool) -> Result<Vec<Point2>> {
    let mat = if inverse { m.inverse()? } else { *m };
    if !inverse {
        // still reject singular transforms in the forward direction
        m.inverse()?;
    }
    Ok(pts.iter().map(|p| mat.apply(p)).collect())
}

/// Signed shoelace area; positive for clockwise order in raster coordinates.
pub fn polygon_area(poly: &[Point2]) -> f64 {
    let n = poly.len();
    (0..n)
        .map(|i| {
            let (a, b) = (poly[i], poly[(i + 1) % n]);
            a.x * b.y - b.x * a.y
        })
        .sum::<f64>()
        / 2.0
}

/// Even-odd point-in-polygon test.
pub fn point_in_polygon(p: &Point2, poly: &[Point2]) -> bool {
    let n = poly.len();
    let mut inside = false;
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > p.y) != (b.y > p.y) {
            let x = a.x + (p.y - a.y) * (b.x - a.x) / (b.y - a.y);
            if p.x < x {
                inside = !inside;
            }
        }
        j = i;
    }
    inside
}

/// Minimum number of raster cells along the shorter side of the union box.
pub const IOU_GRID_CELLS: f64 = 256.0;

/// Sorted, disjoint half-open cell-index runs `[start, end)` covered by
/// `poly` on the row whose center is `y`.
fn scanline_runs(poly: &[Point2], y: f64, x0: f64, cell: f64, nx: i64) -> Vec<(i64, i64)> {
    let n = poly.len();
    let mut xs = Vec::new();
    let mut j = n - 1;
    for i in 0..n {
        let (a, b) = (poly[i], poly[j]);
        if (a.y > y) != (b.y > y) {
            xs.push(a.x + (y - a.y) * (b.x - a.x) / (b.y - a.y));
        }
        j = i;
    }
    xs.sort_by(f64::total_cmp);
    let mut runs = Vec::with_capacity(xs.len() / 2);
    for pair in xs.chunks_exact(2) {
        // cell c has center x0 + (c + 0.5) * cell; inside iff l < center < r
        let start = (((pair[0] - x0) / cell) - 0.5).floor() as i64 + 1;
        let end = ((((pair[1] - x0) / cell) - 0.5).ceil() as i64).min(nx);
        let start = start.max(0);
        if end > start {
            runs.push((start, end));
        }
    }
    runs
}

fn run_overlap(a: &[(i64, i64)], b: &[(i64, i64)]) -> i64 {
    let (mut i, mut j, mut total) = (0, 0, 0);
    while i < a.len() && j < b.len() {
        let lo = a[i].0.max(b[j].0);
        let hi = a[i].1.min(b[j].1);
        if hi > lo {
            total += hi - lo;
        }
        if a[i].1 < b[j].1 {
            i += 1;
        } else {
            j += 1;
        }
    }
    total
}

/// Intersection over union of two simple polygons, estimated by counting
/// cell centers on a grid laid over the union of their bounding boxes.
pub fn polygon_iou(a: &[Point2], b: &[Point2]) -> Result<f64> {
    for (name, poly) in [("a", a), ("b", b)] {
        if poly.len() < 3 {
            return Err(Error::DegeneratePolygon(format!(
                "polygon {name} has {} vertices",
                poly.len()
            )));
        }
        if poly.iter().any(|p| !p.is_finite()) || polygon_area(poly).abs() <= 1e-12 {
            return Err(Error::DegeneratePolygon(format!("polygon {name} has zero area")));
        }
    }
    let (mut x0, mut y0, mut x1, mut y1) = (f64::MAX, f64::MAX, f64::MIN, f64::MIN);
    for p in a.iter().chain(b) {
        x0 = x0.min(p.x);
        y0 = y0.min(p.y);
        x1 = x1.max(p.x);
        y1 = y1.max(p.y);
    }
    let cell = (x1 - x0).min(y1 - y0) / IOU_GRID_CELLS;
    let nx = ((x1 - x0) / cell).ceil() as i64;
    let ny = ((y1 - y0) / cell).ceil() as i64;
    let (mut area_a, mut area_b, mut inter) = (0i64, 0i64, 0i64);
    for row in 0..ny {
        let y = y0 + (row as f64 + 0.5) * cell;
        let ra = scanline_runs(a, y, x0, cell, nx);
        let rb = scanline_runs(b, y, x0, cell, nx);
        area_a += ra.iter().map(|r| r.1 - r.0).sum::<i64>();
        area_b += rb.iter().map(|r| r.1 - r.0).sum::<i64>();
        inter += run_overlap(&ra, &rb);
    }
    let union = area_a + area_b - inter;
    if union == 0 {
        return Ok(0.0);
    }
    Ok(inter as f64 / union as f64)
}
