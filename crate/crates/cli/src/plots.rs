//! Optional PNG figures: model rasters with a fixed colormap, and line charts
//! (convergence curves, log-log spectra) drawn straight into an RGB image.
//! No text is drawn. Callers treat every error here as a warning.

use std::path::Path;

use crfwi_core::VelocityGrid;
use image::{Rgb, RgbImage};

pub type PlotResult = Result<(), String>;

/// Viridis-like anchors from low to high.
const COLORMAP: [[u8; 3]; 6] = [[68, 1, 84], [65, 68, 135], [42, 120, 142], [34, 168, 132], [122, 209, 81], [253, 231, 37]];

/// Line colours, cycled.
const PALETTE: [[u8; 3]; 6] = [[31, 119, 180], [255, 127, 14], [44, 160, 44], [214, 39, 40], [148, 103, 189], [140, 86, 75]];

const WHITE: Rgb<u8> = Rgb([255, 255, 255]);
const BLACK: Rgb<u8> = Rgb([0, 0, 0]);

pub fn colormap(t: f64) -> Rgb<u8> {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let x = t * (COLORMAP.len() - 1) as f64;
    let i = (x.floor() as usize).min(COLORMAP.len() - 2);
    let f = x - i as f64;
    let (a, b) = (COLORMAP[i], COLORMAP[i + 1]);
    Rgb(std::array::from_fn(|k| (a[k] as f64 + (b[k] as f64 - a[k] as f64) * f).round() as u8))
}

fn save(path: &Path, img: &RgbImage) -> PlotResult {
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| e.to_string())
}

/// One block of pixels per cell, colour scaled over `[lo, hi]`.
pub fn raster(path: &Path, grid: &VelocityGrid, lo: f64, hi: f64) -> PlotResult {
    let scale = (720 / grid.nx().max(1)).clamp(1, 40) as u32;
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let img = RgbImage::from_fn(grid.nx() as u32 * scale, grid.nz() as u32 * scale, |x, y| {
        colormap((grid.get((y / scale) as usize, (x / scale) as usize) - lo) / span)
    });
    save(path, &img)
}

fn put(img: &mut RgbImage, x: i64, y: i64, c: Rgb<u8>) {
    if x >= 0 && y >= 0 && (x as u32) < img.width() && (y as u32) < img.height() {
        img.put_pixel(x as u32, y as u32, c);
    }
}

/// Two pixels wide, stepping along the longer axis.
fn segment(img: &mut RgbImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), c: Rgb<u8>) {
    let steps = (x1 - x0).abs().max((y1 - y0).abs()).ceil().max(1.0) as usize;
    for i in 0..=steps {
        let t = i as f64 / steps as f64;
        let (x, y) = ((x0 + (x1 - x0) * t).round() as i64, (y0 + (y1 - y0) * t).round() as i64);
        put(img, x, y, c);
        put(img, x + 1, y, c);
        put(img, x, y + 1, c);
    }
}

/// Line chart of several series in a framed box. With `log_log` both axes
/// are log10 and non-positive points are dropped.
pub fn lines(path: &Path, series: &[Vec<(f64, f64)>], log_log: bool) -> PlotResult {
    let pts: Vec<Vec<(f64, f64)>> = series
        .iter()
        .map(|s| {
            s.iter()
                .filter(|p| !log_log || (p.0 > 0.0 && p.1 > 0.0))
                .map(|p| if log_log { (p.0.log10(), p.1.log10()) } else { *p })
                .filter(|p| p.0.is_finite() && p.1.is_finite())
                .collect()
        })
        .collect();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in pts.iter().flatten() {
        x0 = x0.min(p.0);
        x1 = x1.max(p.0);
        y0 = y0.min(p.1);
        y1 = y1.max(p.1);
    }
    if !(x0 < x1) {
        return Err("nothing to plot".into());
    }
    if !(y0 < y1) {
        y0 -= 0.5;
        y1 += 0.5;
    }
    let (w, h, m) = (800.0, 560.0, 20.0);
    let to_px = |p: (f64, f64)| (m + (p.0 - x0) / (x1 - x0) * (w - 2.0 * m), h - m - (p.1 - y0) / (y1 - y0) * (h - 2.0 * m));
    let mut img = RgbImage::from_pixel(w as u32, h as u32, WHITE);
    let corners = [(m, m), (w - m, m), (w - m, h - m), (m, h - m), (m, m)];
    for c in corners.windows(2) {
        segment(&mut img, c[0], c[1], BLACK);
    }
    for (i, s) in pts.iter().enumerate() {
        let c = Rgb(PALETTE[i % PALETTE.len()]);
        for pair in s.windows(2) {
            segment(&mut img, to_px(pair[0]), to_px(pair[1]), c);
        }
    }
    save(path, &img)
}
