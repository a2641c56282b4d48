//! Dataset ingestion, captions, vocabulary, splits, and the synthetic
//! shape dataset used for desk-scale verification.
//!
//! On-disk layout:
//!
//! ```text
//! <root>/images/<study_id>.png          8-bit grayscale PNG
//! <root>/reports/<report_id>.json       impression/findings/... + images list
//! ```

mod caption;
mod ingest;
mod split;
pub mod toy;
mod vocab;

pub use caption::{extract_caption, tokenize_caption, TokenizedReport};
pub use ingest::{filter_frontal, parse_study_collection, Ingested, ReportFile};
pub use split::split_train_test;
pub use vocab::{build_vocabulary, Vocabulary, END, PAD, START, UNK};

use crate::grid::PixelGrid;

/// X-ray view orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum View {
    Frontal,
    Lateral,
}

/// The unused report sections are retained verbatim so nothing is lost on
/// a round trip through ingestion.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct RawReport {
    pub impression: String,
    pub findings: String,
    #[serde(default)]
    pub tags: String,
    #[serde(default)]
    pub comparison: String,
    #[serde(default)]
    pub indication: String,
}

/// One image paired with its report: the atom of the dataset.
#[derive(Debug, Clone)]
pub struct XRayStudy {
    pub study_id: String,
    pub image: PixelGrid,
    pub view: View,
    pub report: RawReport,
}

/// A study prepared for training: image plus its tokenized caption.
#[derive(Debug, Clone)]
pub struct StudyPair {
    pub study_id: String,
    pub image: PixelGrid,
    pub tokens: TokenizedReport,
    pub caption: String,
}

/// Tokenizes every study's caption under `vocab`. Studies whose caption is
/// empty are rejected rather than silently dropped.
pub fn make_pairs(studies: &[XRayStudy], vocab: &Vocabulary) -> crate::Result<Vec<StudyPair>> {
    studies
        .iter()
        .map(|s| {
            let caption = extract_caption(&s.report)?;
            let tokens = TokenizedReport::from_caption(&caption, vocab)?;
            Ok(StudyPair {
                study_id: s.study_id.clone(),
                image: s.image.clone(),
                tokens,
                caption,
            })
        })
        .collect()
}
