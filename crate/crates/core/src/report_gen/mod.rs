//! Image-to-report generation: a convolutional visual encoder feeding a
//! hierarchical decoder (a sentence-level recurrence that emits topic
//! states and stop probabilities, and a word-level recurrence that emits
//! tokens per topic).

mod model;
mod train;

pub use model::{ReportGenModel, VisualFeature, CHECKPOINT_KIND};
pub use train::{build_loss as report_loss, train_report_generator};

use crate::error::{Error, Result};

/// Hyperparameters of the report generator.
///
/// The full profile carries the published dimensions (sentence recurrence
/// 1024-in/512-state, word recurrence 512/512, visual feature 1024) and
/// learning rates (1e-5 encoder, 5e-4 decoder). The toy profile shrinks
/// dimensions and raises the rates so training fits in minutes on a CPU.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ReportGenConfig {
    pub visual_dim: usize,
    pub sentence_state_dim: usize,
    pub word_state_dim: usize,
    pub word_input_dim: usize,
    pub max_sentences: usize,
    pub max_words_per_sentence: usize,
    pub lr_encoder: f64,
    pub lr_decoder: f64,
    pub image_size: usize,
    pub encoder_channels: [usize; 4],
    pub vocab_size: usize,
    pub stop_threshold: f64,
    pub lambda_stop: f64,
    pub batch_size: usize,
}

impl ReportGenConfig {
    pub fn full(vocab_size: usize) -> ReportGenConfig {
        ReportGenConfig {
            visual_dim: 1024,
            sentence_state_dim: 512,
            word_state_dim: 512,
            word_input_dim: 512,
            max_sentences: 6,
            max_words_per_sentence: 20,
            lr_encoder: 1e-5,
            lr_decoder: 5e-4,
            image_size: 224,
            encoder_channels: [32, 64, 128, 256],
            vocab_size,
            stop_threshold: 0.5,
            lambda_stop: 1.0,
            batch_size: 8,
        }
    }

    pub fn toy(vocab_size: usize) -> ReportGenConfig {
        ReportGenConfig {
            visual_dim: 128,
            sentence_state_dim: 128,
            word_state_dim: 128,
            word_input_dim: 64,
            max_sentences: 6,
            max_words_per_sentence: 20,
            lr_encoder: 1e-3,
            lr_decoder: 1e-3,
            image_size: 64,
            encoder_channels: [8, 16, 32, 64],
            vocab_size,
            stop_threshold: 0.5,
            lambda_stop: 1.0,
            batch_size: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            self.visual_dim,
            self.sentence_state_dim,
            self.word_state_dim,
            self.word_input_dim,
            self.max_sentences,
            self.max_words_per_sentence,
            self.vocab_size,
            self.batch_size,
        ];
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Config("report generator dims must be >= 1".into()));
        }
        if self.lr_encoder <= 0.0 || self.lr_decoder <= 0.0 {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.image_size % 16 != 0 || self.image_size < 32 {
            return Err(Error::Config(format!(
                "encoder image size {} must be a multiple of 16 and >= 32",
                self.image_size
            )));
        }
        Ok(())
    }
}
