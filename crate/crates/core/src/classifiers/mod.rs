//! Label oracles: the pluggable multi-label image classifier and the
//! naive Bayes report classifier used by the evaluation protocols.

mod naive_bayes;
mod toy_cnn;

pub use naive_bayes::ReportClassifier;
pub use toy_cnn::{train_toy_image_classifier, ToyClassifierConfig, ToyImageClassifier};

use crate::error::{Error, Result};
use crate::grid::PixelGrid;

/// The fixed 14-label list. Every score vector, label set, and metric in
/// the crate uses this order.
pub const LABELS: [&str; 14] = [
    "No Finding",
    "Enlarged Cardiomediastinum",
    "Cardiomegaly",
    "Lung Lesion",
    "Lung Opacity",
    "Edema",
    "Consolidation",
    "Pneumonia",
    "Atelectasis",
    "Pneumothorax",
    "Pleural Effusion",
    "Pleural Other",
    "Fracture",
    "Support Devices",
];

pub const NUM_LABELS: usize = 14;

/// The three label slots the toy shapes map onto (square, circle, bar).
pub const TOY_SHAPE_SLOTS: [usize; 3] = [2, 4, 10];

/// Per-disease scores in `[0,1]`, one per label, fixed order.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct LabelScores(pub [f64; NUM_LABELS]);

impl LabelScores {
    pub fn new(scores: [f64; NUM_LABELS]) -> Result<LabelScores> {
        for &s in &scores {
            if !s.is_finite() || !(0.0..=1.0).contains(&s) {
                return Err(Error::Shape(format!("label score {s} outside [0,1]")));
            }
        }
        Ok(LabelScores(scores))
    }

    pub fn as_slice(&self) -> &[f64; NUM_LABELS] {
        &self.0
    }

    /// CSV row `study_id,score_1..score_14`.
    pub fn csv_row(&self, study_id: &str) -> String {
        let scores: Vec<String> = self.0.iter().map(|s| format!("{s}")).collect();
        format!("{study_id},{}", scores.join(","))
    }
}

/// Binary indicators, same label order as [`LabelScores`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct LabelSet(pub [bool; NUM_LABELS]);

impl LabelSet {
    pub fn empty() -> LabelSet {
        LabelSet([false; NUM_LABELS])
    }

    /// Toy shape presence mapped onto the shape proxy slots.
    pub fn from_shape_presence(present: [bool; 3]) -> LabelSet {
        let mut set = [false; NUM_LABELS];
        for (slot, &p) in TOY_SHAPE_SLOTS.iter().zip(present.iter()) {
            set[*slot] = p;
        }
        LabelSet(set)
    }
}

/// A multi-label image classifier. The real CheXNet is out of scope; this
/// interface lets a pretrained classifier be wired in later without
/// touching the metrics or protocols.
pub trait ImageClassifier {
    /// 14 per-label scores for an image at the classifier's resolution.
    fn classify(&self, image: &PixelGrid) -> Result<LabelScores>;

    /// Human-readable description of the backing model.
    fn descriptor(&self) -> String;

    /// Final convolutional activations and the gradient of the chosen
    /// label's score with respect to them, both shaped (C, H, W). Needed
    /// for Grad-CAM; classifiers without convolutional feature access
    /// return an error.
    fn cam_features(
        &self,
        _image: &PixelGrid,
        _label: usize,
    ) -> Result<(ndarray::Array3<f64>, ndarray::Array3<f64>)> {
        Err(Error::Precondition(format!(
            "classifier {:?} exposes no convolutional features",
            self.descriptor()
        )))
    }
}

pub fn classify_image(classifier: &dyn ImageClassifier, image: &PixelGrid) -> Result<LabelScores> {
    classifier.classify(image)
}
