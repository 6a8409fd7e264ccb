//! Gradient-based sharpness scoring.
//!
//! The score is the mean Sobel gradient magnitude over interior pixels.
//! Colour rasters are reduced to Rec.601 luma first.

use std::path::{Path, PathBuf};

use image::DynamicImage;
use rayon::prelude::*;

use super::CorpusError;

/// Row-major grayscale intensities in `0..=255`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl GrayMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "data length must equal rows * cols");
        Self { rows, cols, data }
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let data = (0..rows)
            .flat_map(|r| (0..cols).map(move |c| (r, c)))
            .map(|(r, c)| f(r, c))
            .collect();
        Self { rows, cols, data }
    }

    pub fn from_image(img: &DynamicImage) -> Self {
        let rgb = img.to_rgb8();
        let (w, h) = rgb.dimensions();
        let data = rgb
            .pixels()
            .map(|p| 0.299 * f64::from(p[0]) + 0.587 * f64::from(p[1]) + 0.114 * f64::from(p[2]))
            .collect();
        Self {
            rows: h as usize,
            cols: w as usize,
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

/// Mean of `sqrt(gx² + gy²)` over interior pixels, with the 3×3 Sobel pair.
pub fn compute_sharpness(image: &GrayMatrix) -> Result<f64, CorpusError> {
    let (rows, cols) = (image.rows, image.cols);
    if rows < 3 || cols < 3 {
        return Err(CorpusError::Dimension { rows, cols });
    }
    let mut total = 0.0f64;
    for r in 1..rows - 1 {
        let (up, mid, down) = (
            &image.data[(r - 1) * cols..r * cols],
            &image.data[r * cols..(r + 1) * cols],
            &image.data[(r + 1) * cols..(r + 2) * cols],
        );
        for c in 1..cols - 1 {
            let gx = (up[c + 1] + 2.0 * mid[c + 1] + down[c + 1]) - (up[c - 1] + 2.0 * mid[c - 1] + down[c - 1]);
            let gy = (down[c - 1] + 2.0 * down[c] + down[c + 1]) - (up[c - 1] + 2.0 * up[c] + up[c + 1]);
            total += (gx * gx + gy * gy).sqrt();
        }
    }
    Ok(total / ((rows - 2) * (cols - 2)) as f64)
}

const RASTER_EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "PNG", "JPG", "JPEG"];

fn raster_path(dir: &Path, id: &str) -> Option<PathBuf> {
    RASTER_EXTENSIONS
        .iter()
        .map(|ext| dir.join(format!("{id}.{ext}")))
        .find(|p| p.is_file())
}

pub fn load_gray(path: &Path) -> Result<GrayMatrix, CorpusError> {
    let img = image::open(path).map_err(|e| CorpusError::Decode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    Ok(GrayMatrix::from_image(&img))
}

/// Scores `<dir>/<id>.{png,jpg,jpeg}` for every id in parallel. Output order
/// follows `ids`.
pub fn score_images(dir: &Path, ids: &[String]) -> Result<Vec<(String, f64)>, CorpusError> {
    ids.par_iter()
        .map(|id| {
            let path = raster_path(dir, id).ok_or_else(|| CorpusError::MissingRaster {
                id: id.clone(),
                dir: dir.to_path_buf(),
            })?;
            let score = compute_sharpness(&load_gray(&path)?)?;
            Ok((id.clone(), score))
        })
        .collect()
}
