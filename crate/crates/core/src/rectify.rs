//! Image resampling: bilinear lookup, rotated crops and thin-plate-spline
//! rectification of curved text regions.
//!
//! Pixel `(i, j)` (row, column) is centered at `(j + 0.5, i + 0.5)`.

use crate::error::{Error, Result};
use crate::geometry::{crop_transform, default_points, BoundaryPointSet, OrientedBox, Point2};

/// Dense image in row-major `(h, w, c)` order.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBuffer {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl ImageBuffer {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![0.0; height * width * channels],
        }
    }

    pub fn from_data(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 || channels == 0 || data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "image {height}x{width}x{channels} with {} values",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    /// Single-channel image filled from `f(row, col)`.
    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Self {
            height,
            width,
            channels: 1,
            data,
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize, ch: usize) -> f64 {
        self.data[(row * self.width + col) * self.channels + ch]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, ch: usize, v: f64) {
        self.data[(row * self.width + col) * self.channels + ch] = v;
    }

    /// Converts an 8-bit grayscale image, mapping 0..=255 onto [0, 1].
    pub fn from_gray8(img: &image::GrayImage) -> Self {
        let (w, h) = img.dimensions();
        Self {
            height: h as usize,
            width: w as usize,
            channels: 1,
            data: img.as_raw().iter().map(|&v| v as f64 / 255.0).collect(),
        }
    }

    /// First channel quantized to 8 bits.
    pub fn to_gray8(&self) -> image::GrayImage {
        let raw: Vec<u8> = (0..self.height * self.width)
            .map(|i| (self.data[i * self.channels].clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        image::GrayImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer size matches dimensions")
    }
}

/// Bilinear interpolation at `(x, y)` with clamp-to-edge borders. Writes one
/// value per channel into `out`.
pub fn bilinear_sample_into(img: &ImageBuffer, x: f64, y: f64, out: &mut [f64]) {
    let fx = x - 0.5;
    let fy = y - 0.5;
    let x0 = fx.floor();
    let y0 = fy.floor();
    let tx = fx - x0;
    let ty = fy - y0;
    let clamp = |v: f64, hi: usize| -> usize { v.max(0.0).min((hi - 1) as f64) as usize };
    let (c0, c1) = (clamp(x0, img.width), clamp(x0 + 1.0, img.width));
    let (r0, r1) = (clamp(y0, img.height), clamp(y0 + 1.0, img.height));
    for (ch, o) in out.iter_mut().enumerate().take(img.channels) {
        let top = img.get(r0, c0, ch) * (1.0 - tx) + img.get(r0, c1, ch) * tx;
        let bottom = img.get(r1, c0, ch) * (1.0 - tx) + img.get(r1, c1, ch) * tx;
        *o = top * (1.0 - ty) + bottom * ty;
    }
}

pub fn bilinear_sample(img: &ImageBuffer, x: f64, y: f64) -> Vec<f64> {
    let mut out = vec![0.0; img.channels];
    bilinear_sample_into(img, x, y, &mut out);
    out
}

/// Resamples `img` at `map(output pixel center)` for every output pixel.
fn resample(img: &ImageBuffer, out_h: usize, out_w: usize, map: impl Fn(Point2) -> Point2) -> ImageBuffer {
    let mut out = ImageBuffer::new(out_h, out_w, img.channels);
    let c = img.channels;
    for i in 0..out_h {
        for j in 0..out_w {
            let p = map(Point2::new(j as f64 + 0.5, i as f64 + 0.5));
            let start = (i * out_w + j) * c;
            bilinear_sample_into(img, p.x, p.y, &mut out.data[start..start + c]);
        }
    }
    out
}

/// Crops the oriented box `bx` into an axis-aligned `out_h x out_w` image.
pub fn rotated_roi_align(img: &ImageBuffer, bx: &OrientedBox, out_h: usize, out_w: usize) -> Result<ImageBuffer> {
    let m = crop_transform(bx, out_w as f64, out_h as f64)?;
    let inv = m.inverse()?;
    Ok(resample(img, out_h, out_w, |p| inv.apply(&p)))
}

/// Radial basis of the thin-plate spline, `r^2 log r^2` with `U(0) = 0`,
/// evaluated from the squared distance.
#[inline]
pub fn tps_kernel(r2: f64) -> f64 {
    if r2 <= 0.0 {
        0.0
    } else {
        r2 * r2.ln()
    }
}

/// Fitted thin-plate spline mapping source points onto destinations.
#[derive(Debug, Clone, PartialEq)]
pub struct TpsParams {
    pub src: Vec<Point2>,
    /// Per output coordinate: `[a0, ax, ay]`, so that `f(p) = a0 + ax*x + ay*y + ...`.
    pub affine: [[f64; 3]; 2],
    /// Per output coordinate, one radial weight per control point.
    pub warp: [Vec<f64>; 2],
    pub lambda: f64,
}

impl TpsParams {
    pub fn identity(src: Vec<Point2>) -> Self {
        let n = src.len();
        Self {
            src,
            affine: [[0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            warp: [vec![0.0; n], vec![0.0; n]],
            lambda: 0.0,
        }
    }

    pub fn map_point(&self, p: &Point2) -> Point2 {
        let mut out = [0.0; 2];
        for (d, o) in out.iter_mut().enumerate() {
            let a = &self.affine[d];
            *o = a[0] + a[1] * p.x + a[2] * p.y;
        }
        for (i, s) in self.src.iter().enumerate() {
            let u = tps_kernel((p.x - s.x).powi(2) + (p.y - s.y).powi(2));
            out[0] += self.warp[0][i] * u;
            out[1] += self.warp[1][i] * u;
        }
        Point2::new(out[0], out[1])
    }
}

/// Solves `a x = b` in place for several right-hand sides by Gaussian
/// elimination with partial pivoting. `a` is `n x n` row-major, `b` is
/// `n x m` row-major.
fn solve_dense(a: &mut [f64], b: &mut [f64], n: usize, m: usize) -> Result<()> {
    let scale = a.iter().fold(0.0f64, |s, v| s.max(v.abs())).max(1.0);
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| a[i * n + col].abs().total_cmp(&a[j * n + col].abs()))
            .unwrap();
        if a[pivot * n + col].abs() <= 1e-12 * scale {
            return Err(Error::SingularSystem(format!("pivot {col} vanishes")));
        }
        if pivot != col {
            for k in 0..n {
                a.swap(col * n + k, pivot * n + k);
            }
            for k in 0..m {
                b.swap(col * m + k, pivot * m + k);
            }
        }
        let diag = a[col * n + col];
        for row in col + 1..n {
            let f = a[row * n + col] / diag;
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row * n + k] -= f * a[col * n + k];
            }
            for k in 0..m {
                b[row * m + k] -= f * b[col * m + k];
            }
        }
    }
    for col in (0..n).rev() {
        for k in 0..m {
            let mut acc = b[col * m + k];
            for j in col + 1..n {
                acc -= a[col * n + j] * b[j * m + k];
            }
            b[col * m + k] = acc / a[col * n + col];
        }
    }
    Ok(())
}

/// Fits a thin-plate spline with `f(src_i) ~ dst_i`; exact interpolation
/// when `lambda == 0`, otherwise `lambda` is added to the kernel diagonal.
pub fn tps_fit(src: &[Point2], dst: &[Point2], lambda: f64) -> Result<TpsParams> {
    if src.len() != dst.len() {
        return Err(Error::ArityMismatch {
            expected: src.len(),
            got: dst.len(),
        });
    }
    let n = src.len();
    if n < 3 {
        return Err(Error::SingularSystem(format!("need at least 3 control points, got {n}")));
    }
    let size = n + 3;
    let mut a = vec![0.0; size * size];
    let mut b = vec![0.0; size * 2];
    for i in 0..n {
        for j in 0..n {
            let r2 = (src[i].x - src[j].x).powi(2) + (src[i].y - src[j].y).powi(2);
            a[i * size + j] = tps_kernel(r2) + if i == j { lambda } else { 0.0 };
        }
        let p = [1.0, src[i].x, src[i].y];
        for (k, v) in p.iter().enumerate() {
            a[i * size + n + k] = *v;
            a[(n + k) * size + i] = *v;
        }
        b[i * 2] = dst[i].x;
        b[i * 2 + 1] = dst[i].y;
    }
    solve_dense(&mut a, &mut b, size, 2)?;
    let warp = [
        (0..n).map(|i| b[i * 2]).collect(),
        (0..n).map(|i| b[i * 2 + 1]).collect(),
    ];
    let affine = [
        [b[n * 2], b[(n + 1) * 2], b[(n + 2) * 2]],
        [b[n * 2 + 1], b[(n + 1) * 2 + 1], b[(n + 2) * 2 + 1]],
    ];
    Ok(TpsParams {
        src: src.to_vec(),
        affine,
        warp,
        lambda,
    })
}

pub fn tps_map(params: &TpsParams, pts: &[Point2]) -> Vec<Point2> {
    pts.iter().map(|p| params.map_point(p)).collect()
}

/// Flattens the region bounded by `bp` into an `out_h x out_w` crop. The
/// crop's default points (top and bottom edges) are the spline sources and
/// the boundary points in the image are the destinations.
pub fn arbitrary_roi_align(
    img: &ImageBuffer,
    bp: &BoundaryPointSet,
    out_h: usize,
    out_w: usize,
    lambda: f64,
) -> Result<ImageBuffer> {
    let src = default_points(out_w as f64, out_h as f64, bp.k())?.points();
    let params = tps_fit(&src, &bp.points(), lambda)?;
    Ok(resample(img, out_h, out_w, |p| params.map_point(&p)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> ImageBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..h * w).map(|_| rng.gen::<f64>()).collect();
        ImageBuffer::from_data(h, w, 1, data).unwrap()
    }

    #[test]
    fn bilinear_constant_midpoint_and_centers() {
        let img = ImageBuffer::from_fn(3, 4, |_, _| 0.7);
        for &(x, y) in &[(0.0, 0.0), (1.3, 2.9), (-5.0, 9.0), (3.99, 0.51)] {
            assert!((bilinear_sample(&img, x, y)[0] - 0.7).abs() < 1e-15);
        }
        let ramp = ImageBuffer::from_data(1, 2, 1, vec![0.0, 1.0]).unwrap();
        assert!((bilinear_sample(&ramp, 1.0, 0.5)[0] - 0.5).abs() < 1e-15);
        let img = random_image(5, 6, 1);
        for i in 0..5 {
            for j in 0..6 {
                let v = bilinear_sample(&img, j as f64 + 0.5, i as f64 + 0.5)[0];
                assert_eq!(v, img.get(i, j, 0));
            }
        }
    }

    #[test]
    fn bilinear_clamps_outside() {
        let ramp = ImageBuffer::from_data(1, 2, 1, vec![0.2, 0.9]).unwrap();
        assert_eq!(bilinear_sample(&ramp, -10.0, 0.5)[0], 0.2);
        assert_eq!(bilinear_sample(&ramp, 10.0, 3.0)[0], 0.9);
    }

    #[test]
    fn rotated_align_identity() {
        let img = random_image(8, 12, 2);
        let bx = OrientedBox::new(Point2::new(6.0, 4.0), 12.0, 8.0, 0.0).unwrap();
        let out = rotated_roi_align(&img, &bx, 8, 12).unwrap();
        for (a, b) in out.data.iter().zip(&img.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn rotated_align_quarter_turn_turns_gradient() {
        // horizontal ramp v = x / 40 on a 40x40 image
        let img = ImageBuffer::from_fn(40, 40, |_, j| (j as f64 + 0.5) / 40.0);
        let bx = OrientedBox::new(Point2::new(20.0, 20.0), 20.0, 10.0, std::f64::consts::FRAC_PI_2).unwrap();
        let out = rotated_roi_align(&img, &bx, 10, 20).unwrap();
        // crop column u runs along +y; crop row v runs along -x, so the
        // value only depends on the row: x = 20 + 5 - (i + 0.5)
        for i in 0..10 {
            let want = (25.0 - (i as f64 + 0.5)) / 40.0;
            for j in 0..20 {
                assert!((out.get(i, j, 0) - want).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rotated_align_stride_halves_with_double_width() {
        let img = ImageBuffer::from_fn(10, 40, |_, j| j as f64 + 0.5);
        let bx = OrientedBox::new(Point2::new(20.0, 5.0), 32.0, 4.0, 0.0).unwrap();
        let a = rotated_roi_align(&img, &bx, 4, 16).unwrap();
        let b = rotated_roi_align(&img, &bx, 4, 32).unwrap();
        assert!((a.get(0, 1, 0) - a.get(0, 0, 0) - 2.0).abs() < 1e-12);
        assert!((b.get(0, 1, 0) - b.get(0, 0, 0) - 1.0).abs() < 1e-12);
    }

    fn random_points(n: usize, rng: &mut ChaCha8Rng) -> Vec<Point2> {
        (0..n)
            .map(|_| Point2::new(rng.gen_range(0.0..100.0), rng.gen_range(0.0..50.0)))
            .collect()
    }

    #[test]
    fn tps_identity_and_translation() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let src = random_points(10, &mut rng);
        let p = tps_fit(&src, &src, 0.0).unwrap();
        assert!(p.warp.iter().flatten().all(|w| w.abs() < 1e-9));
        let probes = random_points(20, &mut rng);
        for (a, b) in probes.iter().zip(tps_map(&p, &probes)) {
            assert!(a.dist(&b) < 1e-9);
        }
        let dst: Vec<Point2> = src.iter().map(|s| Point2::new(s.x + 3.0, s.y - 2.0)).collect();
        let p = tps_fit(&src, &dst, 0.0).unwrap();
        for (a, b) in probes.iter().zip(tps_map(&p, &probes)) {
            assert!(b.dist(&Point2::new(a.x + 3.0, a.y - 2.0)) < 1e-9);
        }
    }

    #[test]
    fn tps_interpolates_and_satisfies_side_conditions() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for n in [3, 7, 14, 32] {
            let src = random_points(n, &mut rng);
            let dst = random_points(n, &mut rng);
            let p = tps_fit(&src, &dst, 0.0).unwrap();
            let got = tps_map(&p, &src);
            let max = got.iter().zip(&dst).map(|(a, b)| a.dist(b)).fold(0.0, f64::max);
            assert!(max < 1e-6, "n={n} residual {max}");
            for w in &p.warp {
                let s: f64 = w.iter().sum();
                let sx: f64 = w.iter().zip(&src).map(|(w, p)| w * p.x).sum();
                let sy: f64 = w.iter().zip(&src).map(|(w, p)| w * p.y).sum();
                assert!(s.abs() < 1e-8 && sx.abs() < 1e-8 && sy.abs() < 1e-8);
            }
        }
    }

    #[test]
    fn tps_rejects_collinear_controls() {
        let src: Vec<Point2> = (0..5).map(|i| Point2::new(i as f64, 0.0)).collect();
        assert!(matches!(tps_fit(&src, &src, 0.0), Err(Error::SingularSystem(_))));
        assert!(matches!(tps_fit(&src, &src[..3], 0.0), Err(Error::ArityMismatch { .. })));
    }

    #[test]
    fn arbitrary_align_identity_on_full_rect() {
        let img = random_image(8, 16, 6);
        let bp = default_points(16.0, 8.0, 7).unwrap();
        let out = arbitrary_roi_align(&img, &bp, 8, 16, 0.0).unwrap();
        for (a, b) in out.data.iter().zip(&img.data) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn resampling_is_bit_deterministic() {
        let img = random_image(30, 40, 7);
        let bx = OrientedBox::new(Point2::new(20.0, 15.0), 25.0, 9.0, 0.4).unwrap();
        assert_eq!(rotated_roi_align(&img, &bx, 8, 64).unwrap(), rotated_roi_align(&img, &bx, 8, 64).unwrap());
    }
}
