//! Drawing words along parametric baselines.

use serde::{Deserialize, Serialize};

use super::font::{GlyphFont, GLYPH_COLS, GLYPH_ROWS};
use crate::error::{Error, Result};
use crate::geometry::Point2;
use crate::rectify::ImageBuffer;

/// Glyph cells per text height: 7 ink rows plus half a cell of margin
/// above and below.
pub const CELLS_PER_HEIGHT: f64 = 8.0;
/// Horizontal advance per glyph, in cells.
pub const ADVANCE_CELLS: f64 = 6.0;

const DENSE_SAMPLES: usize = 512;

/// Baseline curve in image coordinates. Every variant starts at `origin`
/// heading along `angle` (radians, from +x toward +y).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Baseline {
    Line { origin: Point2, angle: f64, length: f64 },
    /// One or more sine periods over `length` along the heading.
    Sine { origin: Point2, angle: f64, length: f64, amplitude: f64, periods: f64 },
    /// Circular arc of the given arc length turning by `turn` radians in
    /// total (positive turns toward +y).
    Arc { origin: Point2, angle: f64, length: f64, turn: f64 },
}

impl Baseline {
    fn origin_angle(&self) -> (Point2, f64) {
        match *self {
            Baseline::Line { origin, angle, .. }
            | Baseline::Sine { origin, angle, .. }
            | Baseline::Arc { origin, angle, .. } => (origin, angle),
        }
    }

    /// Point at parameter `t` in [0, 1], in the local frame (x along the
    /// heading, y toward the heading's +y side).
    fn local(&self, t: f64) -> (f64, f64) {
        match *self {
            Baseline::Line { length, .. } => (t * length, 0.0),
            Baseline::Sine {
                length,
                amplitude,
                periods,
                ..
            } => (t * length, amplitude * (std::f64::consts::TAU * periods * t).sin()),
            Baseline::Arc { length, turn, .. } => {
                if turn == 0.0 {
                    (t * length, 0.0)
                } else {
                    let r = length / turn;
                    let phi = turn * t;
                    (r * phi.sin(), r * (1.0 - phi.cos()))
                }
            }
        }
    }

    pub fn point(&self, t: f64) -> Point2 {
        let (o, a) = self.origin_angle();
        let (lx, ly) = self.local(t);
        let (s, c) = a.sin_cos();
        Point2::new(o.x + c * lx - s * ly, o.y + s * lx + c * ly)
    }

    /// Dense polyline approximation.
    pub fn sample(&self, n: usize) -> Vec<Point2> {
        (0..=n).map(|i| self.point(i as f64 / n as f64)).collect()
    }
}

/// Arc-length parameterized lookup on a dense polyline.
struct ArcSampler {
    pts: Vec<Point2>,
    cum: Vec<f64>,
}

impl ArcSampler {
    fn new(pts: Vec<Point2>) -> Self {
        let mut cum = vec![0.0];
        for w in pts.windows(2) {
            let last = *cum.last().unwrap();
            cum.push(last + w[0].dist(&w[1]));
        }
        Self { pts, cum }
    }

    fn length(&self) -> f64 {
        *self.cum.last().unwrap()
    }

    /// Point and unit tangent at arc length `s`.
    fn at(&self, s: f64) -> (Point2, Point2) {
        let s = s.clamp(0.0, self.length());
        let i = match self.cum.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => i.min(self.pts.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.pts.len() - 2),
        };
        let seg = self.cum[i + 1] - self.cum[i];
        let t = if seg > 0.0 { (s - self.cum[i]) / seg } else { 0.0 };
        let (a, b) = (self.pts[i], self.pts[i + 1]);
        let d = b.dist(&a).max(f64::MIN_POSITIVE);
        (a.lerp(&b, t), Point2::new((b.x - a.x) / d, (b.y - a.y) / d))
    }
}

/// Long sides of a rendered word: `side_a` along the glyph tops, `side_b`
/// along the baseline, both in reading order.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedWord {
    pub side_a: Vec<Point2>,
    pub side_b: Vec<Point2>,
}

/// Paints `text` onto `canvas` with cell size `height / 8`, starting at the
/// beginning of `baseline`. Glyphs stand on the baseline perpendicular to
/// its local tangent; pixels are composited with `max(canvas, ink)`.
/// The sides are sampled at every glyph boundary.
pub fn render_word(
    text: &str,
    baseline: &Baseline,
    height: f64,
    ink: f64,
    font: &GlyphFont,
    canvas: &mut ImageBuffer,
) -> Result<RenderedWord> {
    let glyphs = text
        .chars()
        .map(|c| font.glyph(c).copied().ok_or(Error::UnsupportedChar(c)))
        .collect::<Result<Vec<_>>>()?;
    let layout = Layout::new(glyphs.len(), baseline, height)?;
    let u = layout.cell;
    let step = u.min(1.0) / 3.0;
    let sub = (u / step).ceil() as usize;
    for (gi, g) in glyphs.iter().enumerate() {
        let s0 = gi as f64 * layout.advance;
        for row in 0..GLYPH_ROWS {
            for col in 0..GLYPH_COLS {
                if !g.ink(row, col) {
                    continue;
                }
                let a0 = s0 + (0.5 + col as f64) * u;
                let v0 = (0.5 + (GLYPH_ROWS - 1 - row) as f64) * u;
                for i in 0..sub {
                    for j in 0..sub {
                        let a = a0 + (i as f64 + 0.5) * u / sub as f64;
                        let v = v0 + (j as f64 + 0.5) * u / sub as f64;
                        splat(canvas, layout.frame(a, v), ink);
                    }
                }
            }
        }
    }
    Ok(layout.sides())
}

/// Sides a word of `len` glyphs would get on `baseline`, without drawing.
pub fn word_outline(len: usize, baseline: &Baseline, height: f64) -> Result<RenderedWord> {
    Ok(Layout::new(len, baseline, height)?.sides())
}

/// Baseline arc length a word of `len` glyphs needs at `height`.
pub fn word_length(len: usize, height: f64) -> f64 {
    ADVANCE_CELLS * height / CELLS_PER_HEIGHT * len as f64
}

struct Layout {
    curve: ArcSampler,
    cell: f64,
    advance: f64,
    height: f64,
    len: usize,
}

impl Layout {
    fn new(len: usize, baseline: &Baseline, height: f64) -> Result<Self> {
        if len == 0 {
            return Err(Error::EmptyTarget);
        }
        let cell = height / CELLS_PER_HEIGHT;
        let needed = word_length(len, height);
        let curve = ArcSampler::new(baseline.sample(DENSE_SAMPLES));
        if curve.length() + 1e-9 < needed {
            return Err(Error::BaselineTooShort {
                needed,
                available: curve.length(),
            });
        }
        Ok(Self {
            curve,
            cell,
            advance: ADVANCE_CELLS * cell,
            height,
            len,
        })
    }

    fn frame(&self, s: f64, v: f64) -> Point2 {
        let (p, t) = self.curve.at(s);
        // upward normal: the tangent turned a quarter toward -y
        Point2::new(p.x + v * t.y, p.y - v * t.x)
    }

    fn sides(&self) -> RenderedWord {
        let mut side_a = Vec::with_capacity(self.len + 1);
        let mut side_b = Vec::with_capacity(self.len + 1);
        for i in 0..=self.len {
            let s = i as f64 * self.advance;
            side_b.push(self.frame(s, 0.0));
            side_a.push(self.frame(s, self.height));
        }
        RenderedWord { side_a, side_b }
    }
}

fn splat(canvas: &mut ImageBuffer, p: Point2, ink: f64) {
    if p.x < 0.0 || p.y < 0.0 {
        return;
    }
    let (col, row) = (p.x as usize, p.y as usize);
    if row < canvas.height && col < canvas.width {
        for ch in 0..canvas.channels {
            let v = canvas.get(row, col, ch).max(ink);
            canvas.set(row, col, ch, v);
        }
    }
}
