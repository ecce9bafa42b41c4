//! Drawing boundaries and labels onto grayscale images.

use boundary_spot::data::font::{GlyphFont, GLYPH_COLS, GLYPH_ROWS};
use boundary_spot::geometry::Point2;
use image::GrayImage;

pub struct Shape {
    pub side_a: Vec<Point2>,
    pub side_b: Vec<Point2>,
    pub label: String,
}

const INK: u8 = 255;

fn put(img: &mut GrayImage, x: i64, y: i64, v: u8) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, image::Luma([v]));
    }
}

/// Line from `a` to `b` sampled at unit steps; pixels outside the image are
/// skipped. With `dash` set, every other pair of pixels is left untouched.
fn line(img: &mut GrayImage, a: Point2, b: Point2, dash: bool) {
    let n = (a.dist(&b).ceil() as usize).max(1);
    for i in 0..=n {
        if dash && (i / 2) % 2 == 1 {
            continue;
        }
        let p = a.lerp(&b, i as f64 / n as f64);
        put(img, p.x.floor() as i64, p.y.floor() as i64, INK);
    }
}

fn polyline(img: &mut GrayImage, pts: &[Point2], dash: bool) {
    for w in pts.windows(2) {
        line(img, w[0], w[1], dash);
    }
}

/// Text in the built-in font, one pixel per glyph cell, with a dark
/// backing box so labels stay legible.
fn label(img: &mut GrayImage, font: &GlyphFont, text: &str, x: i64, y: i64) {
    let advance = (GLYPH_COLS + 1) as i64;
    let w = advance * text.chars().count() as i64 + 1;
    for dy in -1..=GLYPH_ROWS as i64 {
        for dx in -1..w {
            put(img, x + dx, y + dy, 0);
        }
    }
    for (i, c) in text.chars().enumerate() {
        let Some(g) = font.glyph(c) else { continue };
        for r in 0..GLYPH_ROWS {
            for col in 0..GLYPH_COLS {
                if g.ink(r, col) {
                    put(img, x + i as i64 * advance + col as i64, y + r as i64, INK);
                }
            }
        }
    }
}

/// side_a solid, side_b dashed, the two ends closed with solid lines and
/// the label placed above the start of side_a.
pub fn draw(img: &GrayImage, shapes: &[Shape]) -> GrayImage {
    let mut out = img.clone();
    let font = GlyphFont::builtin();
    for s in shapes {
        polyline(&mut out, &s.side_a, false);
        polyline(&mut out, &s.side_b, true);
        if let (Some(a0), Some(b0), Some(a1), Some(b1)) = (s.side_a.first(), s.side_b.first(), s.side_a.last(), s.side_b.last()) {
            line(&mut out, *a0, *b0, false);
            line(&mut out, *a1, *b1, false);
        }
    }
    for s in shapes {
        if s.label.is_empty() {
            continue;
        }
        let Some(p) = s.side_a.first() else { continue };
        let top = (p.y - GLYPH_ROWS as f64 - 2.0).max(1.0) as i64;
        label(&mut out, &font, &s.label, p.x.max(1.0) as i64, top);
    }
    out
}
