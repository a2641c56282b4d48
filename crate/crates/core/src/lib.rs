//! Congruent chest-x-ray image/report pair generation with cycle-consistent
//! training, together with the evaluation metrics (BLEU/ROUGE, top-k label
//! agreement, KL divergence) and the explanation protocols (trust,
//! faithfulness, Grad-CAM) used to assess the generated pairs.
//!
//! The crate is organized around the two generators and the machinery that
//! feeds and judges them:
//!
//! * [`data`] — dataset ingestion, caption handling, vocabulary, splits, and
//!   a synthetic shape dataset for desk-scale verification.
//! * [`nn`] — a small reverse-mode autodiff engine (f64, CPU) that backs
//!   every trainable model in the crate.
//! * [`report_gen`] — image-to-report generator: convolutional encoder plus
//!   hierarchical sentence/word recurrent decoder.
//! * [`image_gen`] — report-to-image generator: text embedding plus a
//!   two-stage conditional GAN.
//! * [`cycle`] — cycle-consistency losses and joint training.
//! * [`classifiers`] — the multi-label image classifier interface (with a
//!   trainable toy surrogate) and a Bernoulli naive Bayes report classifier.
//! * [`metrics`] — BLEU-1..4, ROUGE-L, top-k/Precision@k/Recall@k, KL
//!   divergence, per-label accuracy.
//! * [`explain`] — Grad-CAM saliency, trust and faithfulness protocols.
//! * [`checkpoint`] — versioned on-disk container for model parameters.

pub mod checkpoint;
pub mod classifiers;
pub mod cycle;
pub mod data;
pub mod error;
pub mod explain;
pub mod grid;
pub mod image_gen;
pub mod metrics;
pub mod nn;
pub mod report_gen;

pub use error::{Error, Result};
pub use grid::PixelGrid;
