//! Loading an ingested work directory back into memory.

use std::path::{Path, PathBuf};

use radcycle_core::data::{
    make_pairs, parse_study_collection, StudyPair, Vocabulary, XRayStudy,
};
use radcycle_core::grid::preprocess_image;
use radcycle_core::image_gen::ImageGenConfig;
use radcycle_core::report_gen::ReportGenConfig;
use radcycle_core::{Error as CoreError, Result as CoreResult};

use crate::config::{ExperimentConfig, Profile};

pub const WORK_SCHEMA_VERSION: u32 = 1;

/// Pointer from a work directory back to its dataset plus the split.
#[derive(Debug, serde::Serialize, serde::Deserialize)]
pub struct WorkFile {
    pub schema_version: u32,
    pub data_root: PathBuf,
    pub train_count: usize,
    pub test_count: usize,
    pub excluded_empty_caption: usize,
    pub skipped_missing_report: usize,
}

pub struct Workspace {
    pub vocab: Vocabulary,
    pub train_studies: Vec<XRayStudy>,
    pub train_pairs: Vec<StudyPair>,
    pub test_pairs: Vec<StudyPair>,
}

/// Model hyperparameters for a profile.
pub fn model_configs(profile: Profile, vocab_size: usize) -> (ReportGenConfig, ImageGenConfig) {
    match profile {
        Profile::Toy => (
            ReportGenConfig::toy(vocab_size),
            ImageGenConfig::toy(vocab_size),
        ),
        Profile::Full => (
            ReportGenConfig::full(vocab_size),
            ImageGenConfig::full(vocab_size),
        ),
    }
}

fn read_ids(path: &Path) -> CoreResult<Vec<String>> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CoreError::Io { path: path.to_path_buf(), source: e })?;
    Ok(text.lines().map(|l| l.to_string()).collect())
}

/// Loads the vocabulary, split lists, and studies referenced by a work
/// directory, resizing images to the profile's input resolution.
pub fn load(work_dir: &Path, config: &ExperimentConfig) -> CoreResult<Workspace> {
    let work_path = work_dir.join("work.json");
    let text = std::fs::read_to_string(&work_path)
        .map_err(|e| CoreError::Io { path: work_path.clone(), source: e })?;
    let work: WorkFile = serde_json::from_str(&text)
        .map_err(|e| CoreError::Data(format!("{}: {e}", work_path.display())))?;
    if work.schema_version != WORK_SCHEMA_VERSION {
        return Err(CoreError::Data(format!(
            "work schema {} unsupported",
            work.schema_version
        )));
    }

    let vocab = Vocabulary::load(&work_dir.join("vocab.tsv"))?;
    let train_ids = read_ids(&work_dir.join("train_ids.txt"))?;
    let test_ids = read_ids(&work_dir.join("test_ids.txt"))?;

    let ingested = parse_study_collection(&work.data_root)?;
    let (report_config, _) = model_configs(config.profile, vocab.len());
    let size = report_config.image_size;
    let mut by_id: std::collections::BTreeMap<String, XRayStudy> = ingested
        .studies
        .into_iter()
        .map(|mut s| {
            if s.image.height() != size || s.image.width() != size {
                s.image = preprocess_image(&s.image, size)?;
            }
            Ok((s.study_id.clone(), s))
        })
        .collect::<CoreResult<_>>()?;

    let take = |ids: &[String], by_id: &mut std::collections::BTreeMap<String, XRayStudy>| {
        ids.iter()
            .map(|id| {
                by_id
                    .remove(id)
                    .ok_or_else(|| CoreError::Data(format!("split references missing study {id}")))
            })
            .collect::<CoreResult<Vec<_>>>()
    };
    let train_studies = take(&train_ids, &mut by_id)?;
    let test_studies = take(&test_ids, &mut by_id)?;

    let train_pairs = make_pairs(&train_studies, &vocab)?;
    let test_pairs = make_pairs(&test_studies, &vocab)?;
    Ok(Workspace {
        vocab,
        train_studies,
        train_pairs,
        test_pairs,
    })
}
