//! Trust and faithfulness protocols.

use std::collections::BTreeMap;
use std::collections::HashMap;

use crate::classifiers::{ImageClassifier, LabelScores, LabelSet, ReportClassifier, TOY_SHAPE_SLOTS};
use crate::data::{StudyPair, TokenizedReport, Vocabulary};
use crate::error::{Error, Result};
use crate::explain::ProtocolReport;
use crate::grid::PixelGrid;
use crate::image_gen::ImageGenModel;
use crate::metrics::{per_label_accuracy, MetricsBundle};
use crate::report_gen::ReportGenModel;

/// The two generator hops the protocols walk. Implemented by the trained
/// model pair and, for plumbing tests, by lookup stubs.
pub trait CycleOracle {
    fn image_to_report(&self, image: &PixelGrid) -> Result<TokenizedReport>;
    fn report_to_image(&self, report: &TokenizedReport) -> Result<PixelGrid>;
}

/// The trained models as an oracle. Images produced by the report-to-image
/// hop are resized to the report generator's input resolution so they can
/// be fed straight back.
pub struct ModelOracles<'a> {
    pub report_model: &'a ReportGenModel,
    pub image_model: &'a ImageGenModel,
    pub vocab: &'a Vocabulary,
}

impl CycleOracle for ModelOracles<'_> {
    fn image_to_report(&self, image: &PixelGrid) -> Result<TokenizedReport> {
        self.report_model.generate_report(image, self.vocab)
    }

    fn report_to_image(&self, report: &TokenizedReport) -> Result<PixelGrid> {
        let (_, refined) = self.image_model.generate_from_report(report, self.vocab)?;
        let size = self.report_model.config.image_size;
        refined.resize_bilinear(size, size)
    }
}

fn grid_key(grid: &PixelGrid) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &v in grid.data().iter() {
        for byte in v.to_le_bytes() {
            h ^= byte as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    }
    h
}

/// Identity oracle over a fixed study set: the image hop returns the
/// study's own report, the report hop returns the study's own image.
pub struct PassthroughOracle {
    by_image: HashMap<u64, TokenizedReport>,
    by_report: HashMap<Vec<Vec<u32>>, PixelGrid>,
}

impl PassthroughOracle {
    pub fn new(studies: &[StudyPair]) -> PassthroughOracle {
        let mut by_image = HashMap::new();
        let mut by_report = HashMap::new();
        for s in studies {
            by_image.insert(grid_key(&s.image), s.tokens.clone());
            by_report.insert(s.tokens.sentences.clone(), s.image.clone());
        }
        PassthroughOracle { by_image, by_report }
    }
}

impl CycleOracle for PassthroughOracle {
    fn image_to_report(&self, image: &PixelGrid) -> Result<TokenizedReport> {
        self.by_image
            .get(&grid_key(image))
            .cloned()
            .ok_or_else(|| Error::Data("passthrough oracle: unknown image".into()))
    }

    fn report_to_image(&self, report: &TokenizedReport) -> Result<PixelGrid> {
        self.by_report
            .get(&report.sentences)
            .cloned()
            .ok_or_else(|| Error::Data("passthrough oracle: unknown report".into()))
    }
}

/// Trust protocol: image -> report -> prototypical image -> second report;
/// the naive Bayes labels of the ground-truth report and of the second
/// report are compared per label over the test set.
pub fn trust_evaluation(
    oracle: &dyn CycleOracle,
    test: &[StudyPair],
    report_classifier: &ReportClassifier,
    vocab: &Vocabulary,
) -> Result<ProtocolReport> {
    if test.is_empty() {
        return Err(Error::Data("trust evaluation: empty test set".into()));
    }
    let mut truth: Vec<LabelSet> = Vec::with_capacity(test.len());
    let mut predicted: Vec<LabelSet> = Vec::with_capacity(test.len());
    for study in test {
        let first_report = oracle.image_to_report(&study.image)?;
        let prototypical = oracle.report_to_image(&first_report)?;
        let second_report = oracle.image_to_report(&prototypical)?;
        truth.push(report_classifier.classify_report(&study.tokens, vocab));
        predicted.push(report_classifier.classify_report(&second_report, vocab));
    }
    let accuracy = per_label_accuracy(&predicted, &truth)?;

    let mut bundle = MetricsBundle::empty();
    bundle.per_label_accuracy = accuracy.to_vec();
    bundle.pair_count = test.len();
    bundle.notes = "trust: naive Bayes label agreement between ground-truth reports and second-hop reports".into();

    let mean = accuracy.iter().sum::<f64>() / accuracy.len() as f64;
    let shape_mean = TOY_SHAPE_SLOTS
        .iter()
        .map(|&s| accuracy[s])
        .sum::<f64>()
        / TOY_SHAPE_SLOTS.len() as f64;
    let mut summary = BTreeMap::new();
    summary.insert("mean_accuracy".to_string(), mean);
    summary.insert("mean_shape_proxy_accuracy".to_string(), shape_mean);

    Ok(ProtocolReport {
        protocol: "trust".into(),
        seeds: vec![],
        baseline: bundle,
        treated: None,
        summary,
        verdict_passed: mean.is_finite(),
        verdict_detail: format!(
            "mean per-label accuracy {mean:.4}, shape-proxy mean {shape_mean:.4} over {} studies",
            test.len()
        ),
    })
}

/// Classifier score pairs over (real image, image regenerated from the
/// generated report). Shared by the evaluation command and the
/// faithfulness protocol.
pub fn regeneration_label_pairs(
    report_model: &ReportGenModel,
    image_model: &ImageGenModel,
    classifier: &dyn ImageClassifier,
    test: &[StudyPair],
    vocab: &Vocabulary,
) -> Result<Vec<(LabelScores, LabelScores)>> {
    let mut pairs = Vec::with_capacity(test.len());
    for study in test {
        let report = report_model.generate_report(&study.image, vocab)?;
        let (_, refined) = image_model.generate_from_report(&report, vocab)?;
        let regen = if refined.height() != study.image.height() {
            refined.resize_bilinear(study.image.height(), study.image.width())?
        } else {
            refined
        };
        let real_scores = classifier.classify(&study.image)?;
        let regen_scores = classifier.classify(&regen)?;
        pairs.push((real_scores, regen_scores));
    }
    Ok(pairs)
}

/// Directional comparison: the trained model beats the randomized one when
/// the aggregate top-k is strictly greater. Antisymmetric for distinct
/// bundles.
pub fn faithfulness_verdict(
    trained: &MetricsBundle,
    randomized: &MetricsBundle,
    k: usize,
) -> (bool, String) {
    let key = k.to_string();
    let a = trained.top_k.get(&key).copied().unwrap_or(f64::NAN);
    let b = randomized.top_k.get(&key).copied().unwrap_or(f64::NAN);
    (
        a > b,
        format!("trained top-{k} {a:.4} vs weight-randomized {b:.4}"),
    )
}

/// Faithfulness protocol: the regeneration agreement metrics are computed
/// twice, once with the trained report model and once with its weights
/// resampled from the initialization distributions under `seed`.
pub fn faithfulness_evaluation(
    report_model: &ReportGenModel,
    image_model: &ImageGenModel,
    classifier: &dyn ImageClassifier,
    test: &[StudyPair],
    k: usize,
    seed: u64,
    vocab: &Vocabulary,
) -> Result<ProtocolReport> {
    if test.is_empty() {
        return Err(Error::Data("faithfulness evaluation: empty test set".into()));
    }
    let randomized_ckpt = crate::explain::randomize_weights(&report_model.to_checkpoint(), seed);
    let randomized = ReportGenModel::from_checkpoint(&randomized_ckpt)?;

    let ks = [k];
    let trained_pairs = regeneration_label_pairs(report_model, image_model, classifier, test, vocab)?;
    let trained_bundle = MetricsBundle::empty().with_agreement(&trained_pairs, &ks)?;
    let random_pairs = regeneration_label_pairs(&randomized, image_model, classifier, test, vocab)?;
    let random_bundle = MetricsBundle::empty().with_agreement(&random_pairs, &ks)?;

    let (passed, detail) = faithfulness_verdict(&trained_bundle, &random_bundle, k);
    let mut summary = BTreeMap::new();
    let key = k.to_string();
    summary.insert(
        format!("trained_top_{k}"),
        trained_bundle.top_k.get(&key).copied().unwrap_or(0.0),
    );
    summary.insert(
        format!("randomized_top_{k}"),
        random_bundle.top_k.get(&key).copied().unwrap_or(0.0),
    );

    Ok(ProtocolReport {
        protocol: "faithfulness".into(),
        seeds: vec![seed],
        baseline: trained_bundle,
        treated: Some(random_bundle),
        summary,
        verdict_passed: passed,
        verdict_detail: detail,
    })
}
