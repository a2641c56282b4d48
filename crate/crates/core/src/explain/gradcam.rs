//! Gradient-weighted class activation mapping over the classifier's final
//! convolutional layer.

use ndarray::Array2;

use crate::classifiers::ImageClassifier;
use crate::error::Result;
use crate::grid::{PixelGrid, Quadrant};

/// Non-negative saliency grid at the source image resolution, normalized
/// so the maximum is 1 unless the map is identically zero.
#[derive(Debug, Clone)]
pub struct SaliencyMap {
    pub map: Array2<f64>,
    pub label: usize,
    pub source_resolution: (usize, usize),
}

impl SaliencyMap {
    /// All values >= 0 and max in {0, 1}.
    pub fn invariants_hold(&self) -> bool {
        let max = self.map.iter().cloned().fold(0.0f64, f64::max);
        self.map.iter().all(|&v| v >= 0.0 && v.is_finite())
            && (max == 0.0 || (max - 1.0).abs() < 1e-12)
    }

    pub fn is_zero(&self) -> bool {
        self.map.iter().all(|&v| v == 0.0)
    }

    /// Fraction of total saliency mass inside each quadrant, in
    /// `Quadrant::ALL` order. All zeros for a zero map.
    pub fn quadrant_mass(&self) -> [f64; 4] {
        let total: f64 = self.map.sum();
        if total == 0.0 {
            return [0.0; 4];
        }
        let (h, w) = self.map.dim();
        let (mh, mw) = (h / 2, w / 2);
        let mut mass = [0.0f64; 4];
        for ((r, c), &v) in self.map.indexed_iter() {
            let q = match (r < mh, c < mw) {
                (true, true) => 0,
                (true, false) => 1,
                (false, true) => 2,
                (false, false) => 3,
            };
            mass[q] += v;
        }
        for m in &mut mass {
            *m /= total;
        }
        mass
    }

    pub fn mass_in(&self, quadrant: Quadrant) -> f64 {
        let idx = Quadrant::ALL.iter().position(|q| *q == quadrant).unwrap();
        self.quadrant_mass()[idx]
    }
}

/// Channel weights are the spatial mean of the label-score gradient; the
/// map is the rectified weighted sum of activation channels, bilinearly
/// upsampled to the input resolution and max-normalized.
pub fn gradcam(
    classifier: &dyn ImageClassifier,
    image: &PixelGrid,
    label: usize,
) -> Result<SaliencyMap> {
    let (activations, gradients) = classifier.cam_features(image, label)?;
    let (c, h, w) = activations.dim();
    let mut raw = Array2::<f64>::zeros((h, w));
    for ci in 0..c {
        let mut weight = 0.0;
        for y in 0..h {
            for x in 0..w {
                weight += gradients[[ci, y, x]];
            }
        }
        weight /= (h * w) as f64;
        for y in 0..h {
            for x in 0..w {
                raw[[y, x]] += weight * activations[[ci, y, x]];
            }
        }
    }
    raw.mapv_inplace(|v| v.max(0.0));

    let max = raw.iter().cloned().fold(0.0f64, f64::max);
    let target = (image.height(), image.width());
    let map = if max == 0.0 {
        Array2::zeros(target)
    } else {
        raw.mapv_inplace(|v| v / max);
        let coarse = PixelGrid::new(raw).expect("normalized map is in range");
        let mut up = coarse.resize_bilinear(target.0, target.1)?.data().clone();
        let up_max = up.iter().cloned().fold(0.0f64, f64::max);
        if up_max > 0.0 {
            up.mapv_inplace(|v| v / up_max);
        }
        up
    };
    Ok(SaliencyMap {
        map,
        label,
        source_resolution: target,
    })
}

/// Alpha-blends the saliency map over the grayscale image (alpha 0.4).
pub fn render_overlay(image: &PixelGrid, saliency: &SaliencyMap) -> PixelGrid {
    const ALPHA: f64 = 0.4;
    let mut out = image.data().clone();
    for ((r, c), v) in out.indexed_iter_mut() {
        *v = (1.0 - ALPHA) * *v + ALPHA * saliency.map[[r, c]];
    }
    PixelGrid::from_clamped(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifiers::{ToyClassifierConfig, ToyImageClassifier};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_output_classifier_yields_zero_map() {
        let stub = ToyImageClassifier::constant_stub();
        let img = PixelGrid::constant(64, 64, 0.5).unwrap();
        for label in [0, 5, 13] {
            let map = gradcam(&stub, &img, label).unwrap();
            assert!(map.is_zero());
            assert!(map.invariants_hold());
        }
    }

    #[test]
    fn maps_satisfy_invariants_on_random_inputs() {
        let model = ToyImageClassifier::new(ToyClassifierConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for i in 0..10 {
            let img =
                PixelGrid::new(Array2::from_shape_fn((64, 64), |_| rng.gen())).unwrap();
            let map = gradcam(&model, &img, i % 14).unwrap();
            assert!(map.invariants_hold());
            assert_eq!(map.map.dim(), (64, 64));
        }
    }

    #[test]
    fn quadrant_mass_sums_to_one_for_nonzero_maps() {
        let model = ToyImageClassifier::new(ToyClassifierConfig::default());
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let img = PixelGrid::new(Array2::from_shape_fn((64, 64), |_| rng.gen())).unwrap();
        let map = gradcam(&model, &img, 2).unwrap();
        if !map.is_zero() {
            let total: f64 = map.quadrant_mass().iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn overlay_stays_in_range() {
        let model = ToyImageClassifier::new(ToyClassifierConfig::default());
        let img = PixelGrid::constant(64, 64, 0.8).unwrap();
        let map = gradcam(&model, &img, 0).unwrap();
        let overlay = render_overlay(&img, &map);
        assert!(overlay.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn classifier_without_features_is_rejected() {
        struct Blind;
        impl ImageClassifier for Blind {
            fn classify(&self, _: &PixelGrid) -> Result<crate::classifiers::LabelScores> {
                crate::classifiers::LabelScores::new([0.5; 14])
            }
            fn descriptor(&self) -> String {
                "blind".into()
            }
        }
        let img = PixelGrid::constant(64, 64, 0.5).unwrap();
        assert!(gradcam(&Blind, &img, 0).is_err());
    }
}
