//! Grayscale pixel grids with values in `[0, 1]`.
//!
//! All images in the pipeline (dataset studies, generator outputs, saliency
//! overlays) are carried as [`PixelGrid`]s. PNG import/export is 8-bit
//! grayscale; resizing is bilinear with center-aligned sampling so that a
//! same-size resize is an exact identity.

use std::path::Path;

use ndarray::Array2;

use crate::error::{Error, Result};

/// One of the four image quadrants, split at the horizontal and vertical
/// midlines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, serde::Serialize, serde::Deserialize)]
pub enum Quadrant {
    UpperLeft,
    UpperRight,
    LowerLeft,
    LowerRight,
}

impl Quadrant {
    pub const ALL: [Quadrant; 4] = [
        Quadrant::UpperLeft,
        Quadrant::UpperRight,
        Quadrant::LowerLeft,
        Quadrant::LowerRight,
    ];

    /// Lowercase phrase used by the synthetic report templates.
    pub fn phrase(&self) -> &'static str {
        match self {
            Quadrant::UpperLeft => "upper left",
            Quadrant::UpperRight => "upper right",
            Quadrant::LowerLeft => "lower left",
            Quadrant::LowerRight => "lower right",
        }
    }

    pub fn from_phrase(vertical: &str, horizontal: &str) -> Option<Quadrant> {
        match (vertical, horizontal) {
            ("upper", "left") => Some(Quadrant::UpperLeft),
            ("upper", "right") => Some(Quadrant::UpperRight),
            ("lower", "left") => Some(Quadrant::LowerLeft),
            ("lower", "right") => Some(Quadrant::LowerRight),
            _ => None,
        }
    }
}

/// A grayscale image, row-major, with every value in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelGrid {
    data: Array2<f64>,
}

impl PixelGrid {
    /// Wraps an array, validating the value range.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::Shape("empty pixel grid".into()));
        }
        for &v in data.iter() {
            if !v.is_finite() || !(0.0..=1.0).contains(&v) {
                return Err(Error::Shape(format!("pixel value {v} outside [0,1]")));
            }
        }
        Ok(PixelGrid { data })
    }

    /// Constant-valued grid.
    pub fn constant(height: usize, width: usize, value: f64) -> Result<Self> {
        Self::new(Array2::from_elem((height, width), value))
    }

    /// Wraps an array, clamping values into `[0, 1]` (NaN becomes 0).
    pub fn from_clamped(data: Array2<f64>) -> Self {
        let clamped = data.mapv(|v| if v.is_finite() { v.clamp(0.0, 1.0) } else { 0.0 });
        PixelGrid { data: clamped }
    }

    pub fn height(&self) -> usize {
        self.data.nrows()
    }

    pub fn width(&self) -> usize {
        self.data.ncols()
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn mean(&self) -> f64 {
        self.data.sum() / (self.data.len() as f64)
    }

    /// Mean absolute pixel difference. Errors on shape mismatch.
    pub fn l1_distance(&self, other: &PixelGrid) -> Result<f64> {
        if self.data.dim() != other.data.dim() {
            return Err(Error::Shape(format!(
                "l1 distance between {:?} and {:?}",
                self.data.dim(),
                other.data.dim()
            )));
        }
        let n = self.data.len() as f64;
        let sum: f64 = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .sum();
        Ok(sum / n)
    }

    /// Mean intensity of each quadrant, in `Quadrant::ALL` order.
    pub fn quadrant_means(&self) -> [f64; 4] {
        let (h, w) = (self.height(), self.width());
        let (mh, mw) = (h / 2, w / 2);
        let mut sums = [0.0f64; 4];
        let mut counts = [0usize; 4];
        for ((r, c), &v) in self.data.indexed_iter() {
            let q = match (r < mh, c < mw) {
                (true, true) => 0,
                (true, false) => 1,
                (false, true) => 2,
                (false, false) => 3,
            };
            sums[q] += v;
            counts[q] += 1;
        }
        let mut out = [0.0f64; 4];
        for i in 0..4 {
            out[i] = if counts[i] > 0 { sums[i] / counts[i] as f64 } else { 0.0 };
        }
        out
    }

    /// Quadrant with the highest mean intensity (ties go to the earlier
    /// quadrant in `Quadrant::ALL` order).
    pub fn brightest_quadrant(&self) -> Quadrant {
        let means = self.quadrant_means();
        let mut best = 0;
        for i in 1..4 {
            if means[i] > means[best] {
                best = i;
            }
        }
        Quadrant::ALL[best]
    }

    /// Bilinear resize with center-aligned sample coordinates. A resize to
    /// the source size reproduces the input exactly.
    pub fn resize_bilinear(&self, height: usize, width: usize) -> Result<PixelGrid> {
        if height == 0 || width == 0 {
            return Err(Error::Shape("resize target has zero dimension".into()));
        }
        let (sh, sw) = (self.height(), self.width());
        let scale_y = sh as f64 / height as f64;
        let scale_x = sw as f64 / width as f64;
        let mut out = Array2::<f64>::zeros((height, width));
        for r in 0..height {
            let sy = ((r as f64 + 0.5) * scale_y - 0.5).clamp(0.0, (sh - 1) as f64);
            let y0 = sy.floor() as usize;
            let y1 = (y0 + 1).min(sh - 1);
            let fy = sy - y0 as f64;
            for c in 0..width {
                let sx = ((c as f64 + 0.5) * scale_x - 0.5).clamp(0.0, (sw - 1) as f64);
                let x0 = sx.floor() as usize;
                let x1 = (x0 + 1).min(sw - 1);
                let fx = sx - x0 as f64;
                let top = self.data[[y0, x0]] * (1.0 - fx) + self.data[[y0, x1]] * fx;
                let bot = self.data[[y1, x0]] * (1.0 - fx) + self.data[[y1, x1]] * fx;
                out[[r, c]] = top * (1.0 - fy) + bot * fy;
            }
        }
        // Interpolation of in-range values stays in range up to rounding.
        Ok(PixelGrid::from_clamped(out))
    }

    /// Loads an 8-bit grayscale PNG, mapping byte values onto `[0, 1]`.
    pub fn load_png(path: &Path) -> Result<PixelGrid> {
        let img = image::open(path).map_err(|e| Error::UnreadableImage {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
        let gray = img.to_luma8();
        let (w, h) = (gray.width() as usize, gray.height() as usize);
        let mut data = Array2::<f64>::zeros((h, w));
        for (x, y, p) in gray.enumerate_pixels() {
            data[[y as usize, x as usize]] = p.0[0] as f64 / 255.0;
        }
        PixelGrid::new(data)
    }

    /// Writes the grid as an 8-bit grayscale PNG.
    pub fn save_png(&self, path: &Path) -> Result<()> {
        let (h, w) = (self.height(), self.width());
        let mut img = image::GrayImage::new(w as u32, h as u32);
        for ((r, c), &v) in self.data.indexed_iter() {
            let byte = (v * 255.0).round().clamp(0.0, 255.0) as u8;
            img.put_pixel(c as u32, r as u32, image::Luma([byte]));
        }
        img.save(path).map_err(|e| Error::UnreadableImage {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })
    }
}

/// Resizes to the classifier input resolution used by the full profile.
///
/// Inputs smaller than 32 pixels on a side are rejected rather than
/// upsampled into mush.
pub fn preprocess_image(image: &PixelGrid, target: usize) -> Result<PixelGrid> {
    if image.height() < 32 || image.width() < 32 {
        return Err(Error::Data(format!(
            "degenerate image {}x{}, need at least 32x32",
            image.height(),
            image.width()
        )));
    }
    image.resize_bilinear(target, target)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn identity_resize_is_exact() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let data = Array2::from_shape_fn((224, 224), |_| rng.gen::<f64>());
        let grid = PixelGrid::new(data).unwrap();
        let resized = grid.resize_bilinear(224, 224).unwrap();
        for (a, b) in grid.data().iter().zip(resized.data().iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn constant_resize_preserves_value() {
        let grid = PixelGrid::constant(512, 512, 0.37).unwrap();
        let resized = grid.resize_bilinear(224, 224).unwrap();
        for &v in resized.data().iter() {
            assert!((v - 0.37).abs() < 1e-9);
        }
    }

    #[test]
    fn checkerboard_mean_preserved() {
        // 2x2 checkerboard blown up to 512x512 blocks, then shrunk to 224.
        let data = Array2::from_shape_fn((512, 512), |(r, c)| {
            if ((r / 256) + (c / 256)) % 2 == 0 {
                1.0
            } else {
                0.0
            }
        });
        let grid = PixelGrid::new(data).unwrap();
        let input_mean = grid.mean();
        let out = preprocess_image(&grid, 224).unwrap();
        assert!((out.mean() - input_mean).abs() < 0.01);
    }

    #[test]
    fn degenerate_input_rejected() {
        let grid = PixelGrid::constant(16, 64, 0.5).unwrap();
        assert!(preprocess_image(&grid, 224).is_err());
    }

    #[test]
    fn out_of_range_rejected() {
        let mut data = Array2::zeros((4, 4));
        data[[1, 1]] = 1.5;
        assert!(PixelGrid::new(data).is_err());
    }

    #[test]
    fn png_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.png");
        let data = Array2::from_shape_fn((32, 48), |(r, c)| ((r * 48 + c) % 256) as f64 / 255.0);
        let grid = PixelGrid::new(data).unwrap();
        grid.save_png(&path).unwrap();
        let back = PixelGrid::load_png(&path).unwrap();
        assert_eq!(back.height(), 32);
        assert_eq!(back.width(), 48);
        for (a, b) in grid.data().iter().zip(back.data().iter()) {
            assert!((a - b).abs() < 1.0 / 255.0 + 1e-9);
        }
    }

    #[test]
    fn quadrant_means_localize() {
        let mut data = Array2::from_elem((64, 64), 0.1);
        for r in 4..20 {
            for c in 40..60 {
                data[[r, c]] = 0.9;
            }
        }
        let grid = PixelGrid::new(data).unwrap();
        assert_eq!(grid.brightest_quadrant(), Quadrant::UpperRight);
    }
}
