//! Synthetic shape dataset for desk-scale verification.
//!
//! Each 64x64 study contains zero to three bright findings (a square, a
//! circle, a horizontal bar), each confined to a distinct quadrant. The
//! report is produced from fixed sentence templates naming each shape and
//! its quadrant, so ground-truth labels are recoverable from the text, and
//! independently from the pixels.

use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::ingest::ReportFile;
use crate::data::{RawReport, View, XRayStudy};
use crate::error::{Error, Result};
use crate::grid::{PixelGrid, Quadrant};

pub const TOY_IMAGE_SIZE: usize = 64;

/// The three synthetic finding kinds, in fixed order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ShapeKind {
    Square,
    Circle,
    Bar,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Square, ShapeKind::Circle, ShapeKind::Bar];

    pub fn keyword(&self) -> &'static str {
        match self {
            ShapeKind::Square => "square",
            ShapeKind::Circle => "circle",
            ShapeKind::Bar => "bar",
        }
    }

    pub fn index(&self) -> usize {
        match self {
            ShapeKind::Square => 0,
            ShapeKind::Circle => 1,
            ShapeKind::Bar => 2,
        }
    }
}

/// Presence and quadrant of each shape kind, indexed by `ShapeKind` order.
pub type ToyLabels = [Option<Quadrant>; 3];

pub fn presence(labels: &ToyLabels) -> [bool; 3] {
    [labels[0].is_some(), labels[1].is_some(), labels[2].is_some()]
}

const BACKGROUND: f64 = 0.10;
const NOISE: f64 = 0.05;
const FOREGROUND: f64 = 0.90;
const SQUARE_SIDE: usize = 12;
const CIRCLE_RADIUS: usize = 6;
const BAR_H: usize = 4;
const BAR_W: usize = 18;
const MARGIN: usize = 2;

fn quadrant_origin(q: Quadrant) -> (usize, usize) {
    let half = TOY_IMAGE_SIZE / 2;
    match q {
        Quadrant::UpperLeft => (0, 0),
        Quadrant::UpperRight => (0, half),
        Quadrant::LowerLeft => (half, 0),
        Quadrant::LowerRight => (half, half),
    }
}

fn draw_shape(img: &mut Array2<f64>, kind: ShapeKind, q: Quadrant, rng: &mut ChaCha8Rng) {
    let (qr, qc) = quadrant_origin(q);
    let half = TOY_IMAGE_SIZE / 2;
    match kind {
        ShapeKind::Square => {
            let r0 = qr + rng.gen_range(MARGIN..half - MARGIN - SQUARE_SIDE);
            let c0 = qc + rng.gen_range(MARGIN..half - MARGIN - SQUARE_SIDE);
            for r in r0..r0 + SQUARE_SIDE {
                for c in c0..c0 + SQUARE_SIDE {
                    img[[r, c]] = FOREGROUND;
                }
            }
        }
        ShapeKind::Circle => {
            let lo = MARGIN + CIRCLE_RADIUS;
            let hi = half - MARGIN - CIRCLE_RADIUS;
            let cr = qr + rng.gen_range(lo..hi);
            let cc = qc + rng.gen_range(lo..hi);
            let r2 = (CIRCLE_RADIUS * CIRCLE_RADIUS) as isize;
            for r in cr - CIRCLE_RADIUS..=cr + CIRCLE_RADIUS {
                for c in cc - CIRCLE_RADIUS..=cc + CIRCLE_RADIUS {
                    let dr = r as isize - cr as isize;
                    let dc = c as isize - cc as isize;
                    if dr * dr + dc * dc <= r2 {
                        img[[r, c]] = FOREGROUND;
                    }
                }
            }
        }
        ShapeKind::Bar => {
            let r0 = qr + rng.gen_range(MARGIN..half - MARGIN - BAR_H);
            let c0 = qc + rng.gen_range(MARGIN..half - MARGIN - BAR_W);
            for r in r0..r0 + BAR_H {
                for c in c0..c0 + BAR_W {
                    img[[r, c]] = FOREGROUND;
                }
            }
        }
    }
}

fn render_report(labels: &ToyLabels) -> RawReport {
    let present: Vec<(ShapeKind, Quadrant)> = ShapeKind::ALL
        .iter()
        .filter_map(|k| labels[k.index()].map(|q| (*k, q)))
        .collect();
    let impression = if present.is_empty() {
        "no findings.".to_string()
    } else {
        "findings noted.".to_string()
    };
    let findings = present
        .iter()
        .map(|(kind, q)| match kind {
            ShapeKind::Bar => format!("there is a horizontal bar in the {} quadrant.", q.phrase()),
            _ => format!(
                "there is a {} in the {} quadrant.",
                kind.keyword(),
                q.phrase()
            ),
        })
        .collect::<Vec<_>>()
        .join(" ");
    RawReport {
        impression,
        findings,
        tags: String::new(),
        comparison: String::new(),
        indication: String::new(),
    }
}

/// Builds `n` synthetic studies. Byte-identical for a given `(n, seed)`;
/// views alternate frontal/lateral in a 51:49 pattern per hundred studies.
pub fn synthesize_toy_dataset(n: usize, seed: u64) -> Result<Vec<XRayStudy>> {
    if n < 1 {
        return Err(Error::Config("toy dataset needs n >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut studies = Vec::with_capacity(n);
    for i in 0..n {
        let mut labels: ToyLabels = [None, None, None];
        let mut quadrants = Quadrant::ALL.to_vec();
        quadrants.shuffle(&mut rng);
        let mut next_q = quadrants.into_iter();
        for kind in ShapeKind::ALL {
            if rng.gen_bool(0.5) {
                labels[kind.index()] = Some(next_q.next().expect("4 quadrants, 3 shapes"));
            }
        }
        let mut img = Array2::from_shape_fn((TOY_IMAGE_SIZE, TOY_IMAGE_SIZE), |_| {
            BACKGROUND + rng.gen_range(0.0..NOISE)
        });
        for kind in ShapeKind::ALL {
            if let Some(q) = labels[kind.index()] {
                draw_shape(&mut img, kind, q, &mut rng);
            }
        }
        let view = if (i % 100) < 51 {
            View::Frontal
        } else {
            View::Lateral
        };
        studies.push(XRayStudy {
            study_id: format!("toy_{i:05}"),
            image: PixelGrid::new(img)?,
            view,
            report: render_report(&labels),
        });
    }
    Ok(studies)
}

/// Writes a toy dataset in the standard collection layout.
pub fn write_toy_dataset(root: &Path, n: usize, seed: u64) -> Result<Vec<XRayStudy>> {
    let studies = synthesize_toy_dataset(n, seed)?;
    let images = root.join("images");
    let reports = root.join("reports");
    std::fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;
    std::fs::create_dir_all(&reports).map_err(|e| Error::io(&reports, e))?;
    for (i, study) in studies.iter().enumerate() {
        study
            .image
            .save_png(&images.join(format!("{}.png", study.study_id)))?;
        let file = ReportFile {
            impression: study.report.impression.clone(),
            findings: study.report.findings.clone(),
            tags: study.report.tags.clone(),
            comparison: study.report.comparison.clone(),
            indication: study.report.indication.clone(),
            view: study.view,
            images: vec![study.study_id.clone()],
        };
        let path = reports.join(format!("r_{i:05}.json"));
        let json = serde_json::to_string_pretty(&file)
            .map_err(|e| Error::Data(format!("report serialization: {e}")))?;
        std::fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    }
    Ok(studies)
}

/// Shape labels recovered from report text by matching the templates'
/// shape keywords and quadrant phrases.
pub fn labels_from_caption(caption: &str) -> ToyLabels {
    let mut labels: ToyLabels = [None, None, None];
    for sentence in crate::data::caption::tokenize_caption(caption) {
        for kind in ShapeKind::ALL {
            if sentence.iter().any(|t| t == kind.keyword()) {
                let vertical = sentence.iter().find(|t| *t == "upper" || *t == "lower");
                let horizontal = sentence.iter().find(|t| *t == "left" || *t == "right");
                if let (Some(v), Some(h)) = (vertical, horizontal) {
                    labels[kind.index()] = Quadrant::from_phrase(v, h);
                }
            }
        }
    }
    labels
}

/// Shape-kind presence (ignoring quadrants) mentioned anywhere in a token
/// stream; used to score generated captions.
pub fn shape_set_from_tokens(tokens: &[String]) -> [bool; 3] {
    let mut set = [false; 3];
    for kind in ShapeKind::ALL {
        set[kind.index()] = tokens.iter().any(|t| t == kind.keyword());
    }
    set
}

/// Shape labels recovered from pixels alone: threshold, take the bright
/// blob per quadrant, and classify it by aspect ratio and fill factor.
pub fn labels_from_image(image: &PixelGrid) -> ToyLabels {
    let mut labels: ToyLabels = [None, None, None];
    let data = image.data();
    let half = image.height() / 2;
    for q in Quadrant::ALL {
        let (qr, qc) = quadrant_origin(q);
        let (mut rmin, mut rmax, mut cmin, mut cmax) = (usize::MAX, 0usize, usize::MAX, 0usize);
        let mut count = 0usize;
        for r in qr..qr + half {
            for c in qc..qc + half {
                if data[[r, c]] > 0.5 {
                    count += 1;
                    rmin = rmin.min(r);
                    rmax = rmax.max(r);
                    cmin = cmin.min(c);
                    cmax = cmax.max(c);
                }
            }
        }
        if count < 20 {
            continue;
        }
        let h = (rmax - rmin + 1) as f64;
        let w = (cmax - cmin + 1) as f64;
        let fill = count as f64 / (h * w);
        let kind = if w / h >= 2.0 {
            ShapeKind::Bar
        } else if fill >= 0.85 {
            ShapeKind::Square
        } else {
            ShapeKind::Circle
        };
        labels[kind.index()] = Some(q);
    }
    labels
}

/// Ground-truth labels of a toy study (parsed from its templated report).
pub fn study_labels(study: &XRayStudy) -> ToyLabels {
    let caption = crate::data::caption::extract_caption(&study.report)
        .expect("toy reports always have an impression");
    labels_from_caption(&caption)
}
