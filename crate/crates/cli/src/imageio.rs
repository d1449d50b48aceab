//! Grayscale image files. The format follows the extension (`.png`, `.pgm`).

use std::path::Path;

use image::{GrayImage, Luma};
use nalgebra::DVector;

pub struct Gray {
    pub height: usize,
    pub width: usize,
    /// Row-major, in [0, 1].
    pub pixels: DVector<f64>,
}

pub fn read_gray(path: &Path) -> Result<Gray, String> {
    let img = image::open(path)
        .map_err(|e| format!("{}: {e}", path.display()))?
        .to_luma8();
    let (w, h) = img.dimensions();
    Ok(Gray {
        height: h as usize,
        width: w as usize,
        pixels: DVector::from_iterator((w * h) as usize, img.pixels().map(|p| p.0[0] as f64 / 255.0)),
    })
}

/// Maps `[lo, hi]` linearly onto 0..=255, clamping outside values.
pub fn to_gray_image(values: &DVector<f64>, height: usize, width: usize, lo: f64, hi: f64) -> GrayImage {
    let span = if hi > lo { hi - lo } else { 1.0 };
    GrayImage::from_fn(width as u32, height as u32, |c, r| {
        let v = (values[r as usize * width + c as usize] - lo) / span;
        Luma([(v.clamp(0.0, 1.0) * 255.0).round() as u8])
    })
}

pub fn write_gray(path: &Path, values: &DVector<f64>, height: usize, width: usize, lo: f64, hi: f64) -> Result<(), String> {
    to_gray_image(values, height, width, lo, hi)
        .save(path)
        .map_err(|e| format!("{}: {e}", path.display()))
}

/// Tiles `tiles` row by row into a `cols`-wide grid with a 1-pixel gutter.
pub fn write_grid(
    path: &Path,
    tiles: &[DVector<f64>],
    height: usize,
    width: usize,
    cols: usize,
) -> Result<(), String> {
    let cols = cols.max(1);
    let rows = tiles.len().div_ceil(cols);
    let gw = cols * (width + 1) + 1;
    let gh = rows * (height + 1) + 1;
    let mut grid = GrayImage::from_pixel(gw as u32, gh as u32, Luma([128]));
    for (k, tile) in tiles.iter().enumerate() {
        let img = to_gray_image(tile, height, width, 0.0, 1.0);
        let (x0, y0) = (1 + (k % cols) * (width + 1), 1 + (k / cols) * (height + 1));
        for (c, r, px) in img.enumerate_pixels() {
            grid.put_pixel((x0 + c as usize) as u32, (y0 + r as usize) as u32, *px);
        }
    }
    grid.save(path).map_err(|e| format!("{}: {e}", path.display()))
}
