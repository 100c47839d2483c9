use crate::error::{Error, Result};
use crate::raster::Image;

const BINS: usize = 16;
const GRID: usize = 4;

/// Length of [`global_features`] output: three 16-bin histograms plus a
/// 4x4 grid of per-channel means.
pub const GLOBAL_FEATURE_DIM: usize = 3 * BINS + GRID * GRID * 3;

/// Whole-image descriptor used by the global label-distribution estimators.
#[derive(Clone, Debug, PartialEq)]
pub struct GlobalFeature(pub Vec<f64>);

impl GlobalFeature {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn dim(&self) -> usize {
        self.0.len()
    }
}

/// Gray-world color constancy: every channel rescaled so its image mean is
/// 0.5, then clipped to `[0, 1]`. Pixel-major, like [`Image::data`].
///
/// A global change of illumination (a per-channel gain) leaves the result
/// unchanged up to clipping.
pub fn gray_world(img: &Image) -> Vec<f64> {
    let f = img.channels();
    let mut mean = vec![0.0; f];
    for i in 0..img.num_pixels() {
        for (m, v) in mean.iter_mut().zip(img.pixel(i)) {
            *m += v;
        }
    }
    let scale: Vec<f64> = mean
        .iter()
        .map(|m| 0.5 / (m / img.num_pixels() as f64).max(1e-6))
        .collect();
    img.data()
        .chunks_exact(f)
        .flat_map(|px| px.iter().zip(&scale).map(|(v, s)| (v * s).min(1.0)))
        .collect()
}

/// Per-channel value histograms (each summing to 1) followed by the mean of
/// each channel over a 4x4 grid of cells, cells in row-major order, all
/// computed on [`gray_world`] colors.
pub fn global_features(img: &Image) -> Result<GlobalFeature> {
    if img.channels() != 3 {
        return Err(Error::Shape(format!(
            "global features need 3 channels, image has {}",
            img.channels()
        )));
    }
    let (w, h) = (img.width(), img.height());
    let n = img.num_pixels() as f64;
    let mut out = vec![0.0; GLOBAL_FEATURE_DIM];
    let colors = gray_world(img);
    let at = |row: usize, col: usize| &colors[(row * w + col) * 3..(row * w + col + 1) * 3];

    for px in colors.chunks_exact(3) {
        for (ch, &v) in px.iter().enumerate() {
            let bin = ((v * BINS as f64) as usize).min(BINS - 1);
            out[ch * BINS + bin] += 1.0;
        }
    }
    for v in &mut out[..3 * BINS] {
        *v /= n;
    }

    let grid = &mut out[3 * BINS..];
    for gy in 0..GRID {
        let (r0, r1) = (gy * h / GRID, (gy + 1) * h / GRID);
        for gx in 0..GRID {
            let (c0, c1) = (gx * w / GRID, (gx + 1) * w / GRID);
            let cell = &mut grid[(gy * GRID + gx) * 3..(gy * GRID + gx + 1) * 3];
            let count = (r1 - r0) * (c1 - c0);
            if count == 0 {
                continue;
            }
            for row in r0..r1 {
                for col in c0..c1 {
                    for (m, v) in cell.iter_mut().zip(at(row, col)) {
                        *m += v;
                    }
                }
            }
            for m in cell.iter_mut() {
                *m /= count as f64;
            }
        }
    }
    Ok(GlobalFeature(out))
}
