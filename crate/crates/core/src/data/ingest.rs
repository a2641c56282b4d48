//! Reading a study collection from the on-disk layout.

use std::collections::BTreeMap;
use std::path::Path;

use crate::data::{RawReport, View, XRayStudy};
use crate::error::{Error, Result};
use crate::grid::PixelGrid;

/// One `reports/<report_id>.json` file. Several images may reference the
/// same report; each listed image gets its own copy on ingestion.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ReportFile {
    pub impression: String,
    pub findings: String,
    #[serde(default)]
    pub tags: String,
    #[serde(default)]
    pub comparison: String,
    #[serde(default)]
    pub indication: String,
    pub view: View,
    pub images: Vec<String>,
}

impl ReportFile {
    pub fn raw_report(&self) -> RawReport {
        RawReport {
            impression: self.impression.clone(),
            findings: self.findings.clone(),
            tags: self.tags.clone(),
            comparison: self.comparison.clone(),
            indication: self.indication.clone(),
        }
    }
}

/// Result of parsing a collection: the studies plus the number of image
/// files skipped because no report referenced them.
#[derive(Debug)]
pub struct Ingested {
    pub studies: Vec<XRayStudy>,
    pub skipped_missing_report: usize,
}

fn sorted_files(dir: &Path, ext: &str) -> Result<Vec<std::path::PathBuf>> {
    let mut files = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let path = entry.path();
        if path.extension().and_then(|e| e.to_str()) == Some(ext) {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

/// Parses `<root>/images/*.png` + `<root>/reports/*.json` into studies,
/// sorted by study id. Images with no referencing report are skipped and
/// counted; an unreadable image aborts with an error naming the file.
pub fn parse_study_collection(root: &Path) -> Result<Ingested> {
    let reports_dir = root.join("reports");
    let images_dir = root.join("images");
    let mut by_study: BTreeMap<String, ReportFile> = BTreeMap::new();
    for path in sorted_files(&reports_dir, "json")? {
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let report: ReportFile = serde_json::from_str(&text)
            .map_err(|e| Error::Data(format!("malformed report {}: {e}", path.display())))?;
        for study_id in &report.images {
            by_study.insert(study_id.clone(), report.clone());
        }
    }

    let mut studies = Vec::new();
    let mut skipped = 0usize;
    for path in sorted_files(&images_dir, "png")? {
        let study_id = path
            .file_stem()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Data(format!("bad image filename {}", path.display())))?
            .to_string();
        let Some(report) = by_study.get(&study_id) else {
            skipped += 1;
            continue;
        };
        let image = PixelGrid::load_png(&path)?;
        studies.push(XRayStudy {
            study_id,
            image,
            view: report.view,
            report: report.raw_report(),
        });
    }
    studies.sort_by(|a, b| a.study_id.cmp(&b.study_id));
    let mut seen = std::collections::BTreeSet::new();
    for s in &studies {
        if !seen.insert(s.study_id.clone()) {
            return Err(Error::Data(format!("duplicate study id {}", s.study_id)));
        }
    }
    Ok(Ingested {
        studies,
        skipped_missing_report: skipped,
    })
}

/// Keeps only frontal studies, order preserved. Idempotent.
pub fn filter_frontal(studies: Vec<XRayStudy>) -> Vec<XRayStudy> {
    studies
        .into_iter()
        .filter(|s| s.view == View::Frontal)
        .collect()
}
