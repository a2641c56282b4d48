//! Cycle-consistency: the round-trip constructions (image -> report ->
//! image, report -> image -> report), their losses, and joint training in
//! which the image generator consumes generated text.
//!
//! Gradients never flow through token decoding: generated reports enter
//! the image side as plain inputs, and the report-side agreement is an
//! evaluation metric, not a training signal.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{StudyPair, TokenizedReport, Vocabulary};
use crate::error::{Error, Result};
use crate::grid::PixelGrid;
use crate::image_gen::{ImageGenModel, Stage};
use crate::nn::{Adam, ParamStore};
use crate::report_gen::ReportGenModel;

/// One round trip through both generators. The reconstruction always has
/// the same modality and shape as the original.
#[derive(Debug, Clone)]
pub enum CyclePair {
    /// image -> generated report -> reconstructed image
    ImageFirst {
        original: PixelGrid,
        first_hop: TokenizedReport,
        reconstruction: PixelGrid,
    },
    /// report -> generated image -> regenerated report
    ReportFirst {
        original: TokenizedReport,
        first_hop: PixelGrid,
        reconstruction: TokenizedReport,
    },
}

/// Cycle-phase configuration. The weights are conventional cycleGAN
/// magnitudes; the text weight only scales an evaluation quantity.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CycleConfig {
    pub lambda_cycle_image: f64,
    pub lambda_cycle_text: f64,
    /// Discriminator update period in batches (1 = every batch).
    pub alternation: usize,
    pub epochs: usize,
    pub seed: u64,
    pub batch_size: usize,
    /// Pairs used for the per-epoch report-agreement probe.
    pub agreement_probe: usize,
}

impl Default for CycleConfig {
    fn default() -> Self {
        CycleConfig {
            lambda_cycle_image: 10.0,
            lambda_cycle_text: 1.0,
            alternation: 1,
            epochs: 10,
            seed: 0,
            batch_size: 8,
            agreement_probe: 12,
        }
    }
}

impl CycleConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_cycle_image < 0.0 || self.lambda_cycle_text < 0.0 {
            return Err(Error::Config("cycle weights must be >= 0".into()));
        }
        if self.lambda_cycle_image == 0.0 && self.lambda_cycle_text == 0.0 {
            return Err(Error::Config(
                "at least one cycle weight must be positive".into(),
            ));
        }
        if self.alternation == 0 || self.batch_size == 0 {
            return Err(Error::Config("alternation and batch size must be >= 1".into()));
        }
        Ok(())
    }
}

/// Mean absolute pixel difference between an original and its
/// reconstruction.
pub fn image_cycle_loss(original: &PixelGrid, reconstruction: &PixelGrid) -> Result<f64> {
    original.l1_distance(reconstruction)
}

/// Token-level F1 between the bag (multiset) of content tokens of two
/// reports: 1 iff the multisets match, 0 when they are disjoint.
pub fn report_cycle_agreement(original: &TokenizedReport, reconstruction: &TokenizedReport) -> f64 {
    let bag = |r: &TokenizedReport| {
        let mut map: BTreeMap<u32, usize> = BTreeMap::new();
        for id in r.content_ids() {
            *map.entry(id).or_insert(0) += 1;
        }
        map
    };
    let a = bag(original);
    let b = bag(reconstruction);
    let total_a: usize = a.values().sum();
    let total_b: usize = b.values().sum();
    if total_a == 0 && total_b == 0 {
        return 1.0;
    }
    if total_a == 0 || total_b == 0 {
        return 0.0;
    }
    let common: usize = a
        .iter()
        .map(|(id, &ca)| ca.min(b.get(id).copied().unwrap_or(0)))
        .sum();
    if common == 0 {
        return 0.0;
    }
    let precision = common as f64 / total_b as f64;
    let recall = common as f64 / total_a as f64;
    2.0 * precision * recall / (precision + recall)
}

/// image -> report -> image, with the reconstruction resized back to the
/// original resolution for comparison.
pub fn cycle_forward_image(
    report_model: &ReportGenModel,
    image_model: &ImageGenModel,
    image: &PixelGrid,
    vocab: &Vocabulary,
) -> Result<CyclePair> {
    report_model.check_vocabulary(vocab)?;
    image_model.check_vocabulary(vocab)?;
    let first_hop = report_model.generate_report(image, vocab)?;
    let (_, refined) = image_model.generate_from_report(&first_hop, vocab)?;
    let reconstruction = refined.resize_bilinear(image.height(), image.width())?;
    Ok(CyclePair::ImageFirst {
        original: image.clone(),
        first_hop,
        reconstruction,
    })
}

/// report -> image -> report.
pub fn cycle_forward_report(
    report_model: &ReportGenModel,
    image_model: &ImageGenModel,
    report: &TokenizedReport,
    vocab: &Vocabulary,
) -> Result<CyclePair> {
    report_model.check_vocabulary(vocab)?;
    image_model.check_vocabulary(vocab)?;
    let (_, refined) = image_model.generate_from_report(report, vocab)?;
    let size = report_model.config.image_size;
    let as_input = refined.resize_bilinear(size, size)?;
    let reconstruction = report_model.generate_report(&as_input, vocab)?;
    Ok(CyclePair::ReportFirst {
        original: report.clone(),
        first_hop: refined,
        reconstruction,
    })
}

/// Per-epoch traces of the cycle phase.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CycleTrace {
    pub report_ce: Vec<f64>,
    pub d_loss: Vec<f64>,
    pub g_adversarial: Vec<f64>,
    pub image_cycle: Vec<f64>,
    pub report_agreement: Vec<f64>,
}

impl CycleTrace {
    fn new() -> CycleTrace {
        CycleTrace {
            report_ce: Vec::new(),
            d_loss: Vec::new(),
            g_adversarial: Vec::new(),
            image_cycle: Vec::new(),
            report_agreement: Vec::new(),
        }
    }

    pub fn is_finite(&self) -> bool {
        [
            &self.report_ce,
            &self.d_loss,
            &self.g_adversarial,
            &self.image_cycle,
            &self.report_agreement,
        ]
        .iter()
        .all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Joint cycle training. Both models must be individually pretrained.
///
/// Per batch: the report generator takes a teacher-forced step; the
/// stage-2 discriminator is updated against images generated from the
/// current generated reports; the image generator chain is updated with
/// the non-saturating adversarial loss plus `lambda_cycle_image` times the
/// reconstruction L1 against the original image.
pub fn train_cycle(
    report_model: &mut ReportGenModel,
    image_model: &mut ImageGenModel,
    train: &[StudyPair],
    config: &CycleConfig,
    vocab: &Vocabulary,
) -> Result<CycleTrace> {
    run_cycle(
        report_model,
        image_model,
        train,
        config,
        vocab,
        config.lambda_cycle_image > 0.0,
    )
}

/// Inner loop; `include_cycle_term` controls whether the weighted
/// reconstruction term is attached to the generator loss at all. The
/// public entry point includes it exactly when the weight is positive, so
/// a zero-weight run takes pure-adversarial updates.
pub(crate) fn run_cycle(
    report_model: &mut ReportGenModel,
    image_model: &mut ImageGenModel,
    train: &[StudyPair],
    config: &CycleConfig,
    vocab: &Vocabulary,
    include_cycle_term: bool,
) -> Result<CycleTrace> {
    if train.is_empty() {
        return Err(Error::Data("cycle training: empty train set".into()));
    }
    if config.lambda_cycle_image < 0.0 || config.lambda_cycle_text < 0.0 {
        return Err(Error::Config("cycle weights must be >= 0".into()));
    }
    if report_model.epochs_trained == 0 {
        return Err(Error::Precondition(
            "cycle training requires a pretrained report generator; run report pretraining first"
                .into(),
        ));
    }
    if image_model.epochs_stage1 == 0 || image_model.epochs_stage2 == 0 {
        return Err(Error::Precondition(
            "cycle training requires both image generator stages pretrained; run stage 1 and 2 first"
                .into(),
        ));
    }
    report_model.check_vocabulary(vocab)?;
    image_model.check_vocabulary(vocab)?;

    let s2 = image_model.config.stage2_resolution;
    let reals2: Vec<PixelGrid> = train
        .iter()
        .map(|p| p.image.resize_bilinear(s2, s2))
        .collect::<Result<_>>()?;

    let mut opt_report_enc = Adam::new(
        &report_model.store,
        &["encoder"],
        report_model.config.lr_encoder,
        0.9,
        0.999,
    );
    let mut opt_report_dec = Adam::new(
        &report_model.store,
        &["decoder"],
        report_model.config.lr_decoder,
        0.9,
        0.999,
    );
    let mut opt_g = Adam::new(
        &image_model.store,
        &["embedder", "g1", "g2"],
        image_model.config.lr,
        0.5,
        0.999,
    );
    let mut opt_d = Adam::new(&image_model.store, &["d2"], image_model.config.lr, 0.5, 0.999);

    let probe: Vec<&StudyPair> = train.iter().take(config.agreement_probe).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut trace = CycleTrace::new();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for _epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 4];
        let mut batches = 0usize;
        for (batch_idx, chunk) in order.chunks(config.batch_size).enumerate() {
            let pairs: Vec<&StudyPair> = chunk.iter().map(|&i| &train[i]).collect();
            let b = pairs.len();

            // 1. report generator: one teacher-forced step on ground truth
            let report_ce = {
                let ps = report_model.store.leaf_set();
                let loss = crate::report_gen::report_loss(report_model, &ps, &pairs)?;
                loss.backward();
                let grads = ParamStore::grads(&ps.tensors);
                opt_report_enc.step(&mut report_model.store, &grads);
                opt_report_dec.step(&mut report_model.store, &grads);
                loss.scalar()
            };

            // generated text is the image-side input from here on
            let generated: Vec<TokenizedReport> = pairs
                .iter()
                .map(|p| report_model.generate_report(&p.image, vocab))
                .collect::<Result<_>>()?;
            let gen_refs: Vec<StudyPair> = pairs
                .iter()
                .zip(generated.iter())
                .map(|(p, g)| StudyPair {
                    study_id: p.study_id.clone(),
                    image: p.image.clone(),
                    tokens: g.clone(),
                    caption: String::new(),
                })
                .collect();
            let gen_pairs: Vec<&StudyPair> = gen_refs.iter().collect();

            let real_grids: Vec<&PixelGrid> = chunk.iter().map(|&i| &reals2[i]).collect();
            let real = ImageGenModel::grids_to_tensor(&real_grids, s2)?;
            let z = crate::image_gen::train::noise_batch(&mut rng, b, image_model.config.noise_dim);
            let ones = ndarray::ArrayD::ones(ndarray::IxDyn(&[b, 1]));
            let zeros = ndarray::ArrayD::zeros(ndarray::IxDyn(&[b, 1]));

            // 2. stage-2 discriminator on generated-text conditioning
            let d_loss_value = if batch_idx % config.alternation == 0 {
                let frozen = image_model.const_leaves();
                let e_const =
                    crate::image_gen::train::embed_batch(image_model, &frozen, &gen_pairs);
                let coarse = image_model.g1_graph(&frozen, &z, &e_const);
                let fake_const = image_model.g2_graph(&frozen, &coarse, &e_const);
                let ps = image_model.store.leaf_set();
                let e_in = e_const.detach();
                let d_real = image_model
                    .d_graph(&ps, Stage::Two, &real, &e_in)
                    .bce_with_logits(&ones);
                let d_fake = image_model
                    .d_graph(&ps, Stage::Two, &fake_const.detach(), &e_in)
                    .bce_with_logits(&zeros);
                let loss = d_real.add(&d_fake).scale(0.5);
                loss.backward();
                let grads = ParamStore::grads(&ps.tensors);
                opt_d.step(&mut image_model.store, &grads);
                loss.scalar()
            } else {
                f64::NAN
            };

            // 3. full generator chain: adversarial + weighted image cycle
            let (g_adv_value, cycle_value) = {
                let ps = image_model.store.leaf_set();
                let e = crate::image_gen::train::embed_batch(image_model, &ps, &gen_pairs);
                let coarse = image_model.g1_graph(&ps, &z, &e);
                let fake = image_model.g2_graph(&ps, &coarse, &e);
                let adv = image_model
                    .d_graph(&ps, Stage::Two, &fake, &e)
                    .bce_with_logits(&ones);
                let cycle = fake.l1_loss(&real);
                let loss = if include_cycle_term {
                    adv.add(&cycle.scale(config.lambda_cycle_image))
                } else {
                    adv.clone()
                };
                loss.backward();
                let grads = ParamStore::grads(&ps.tensors);
                opt_g.step(&mut image_model.store, &grads);
                (adv.scalar(), cycle.scalar())
            };

            for (slot, v) in [report_ce, g_adv_value, cycle_value].into_iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::Data(format!("non-finite cycle loss {v}")));
                }
                sums[[0, 2, 3][slot]] += v;
            }
            if d_loss_value.is_finite() {
                sums[1] += d_loss_value;
            }
            batches += 1;
        }

        // evaluation-only report-side agreement on a fixed probe set
        let mut agreement = 0.0;
        for p in &probe {
            match cycle_forward_report(report_model, image_model, &p.tokens, vocab)? {
                CyclePair::ReportFirst {
                    original,
                    reconstruction,
                    ..
                } => agreement += report_cycle_agreement(&original, &reconstruction),
                CyclePair::ImageFirst { .. } => unreachable!(),
            }
        }
        agreement /= probe.len() as f64;

        trace.report_ce.push(sums[0] / batches as f64);
        trace.d_loss.push(sums[1] / batches as f64);
        trace.g_adversarial.push(sums[2] / batches as f64);
        trace.image_cycle.push(sums[3] / batches as f64);
        trace.report_agreement.push(agreement);
        if !trace.is_finite() {
            return Err(Error::Data("non-finite values in cycle trace".into()));
        }
        image_model.epochs_cycle += 1;
        report_model.epochs_trained += 1;
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::toy::synthesize_toy_dataset;
    use crate::data::{build_vocabulary, extract_caption, make_pairs};
    use crate::image_gen::{train_image_generator, ImageGenConfig};
    use crate::report_gen::{train_report_generator, ReportGenConfig};

    fn toy_world(n: usize) -> (ReportGenModel, ImageGenModel, Vec<StudyPair>, Vocabulary) {
        let studies = synthesize_toy_dataset(n, 31).unwrap();
        let captions: Vec<String> = studies
            .iter()
            .map(|s| extract_caption(&s.report).unwrap())
            .collect();
        let vocab = build_vocabulary(&captions, 1).unwrap();
        let pairs = make_pairs(&studies, &vocab).unwrap();
        let mut rc = ReportGenConfig::toy(vocab.len());
        rc.visual_dim = 32;
        rc.sentence_state_dim = 32;
        rc.word_state_dim = 32;
        rc.word_input_dim = 16;
        rc.encoder_channels = [4, 8, 8, 16];
        let mut ic = ImageGenConfig::toy(vocab.len());
        ic.embed_dim = 32;
        ic.word_embed_dim = 16;
        ic.noise_dim = 8;
        ic.base_channels = 8;
        (
            ReportGenModel::new(rc, 0).unwrap(),
            ImageGenModel::new(ic, 0).unwrap(),
            pairs,
            vocab,
        )
    }

    fn pretrained(n: usize) -> (ReportGenModel, ImageGenModel, Vec<StudyPair>, Vocabulary) {
        let (mut rm, mut im, pairs, vocab) = toy_world(n);
        train_report_generator(&mut rm, &pairs, 1, 0).unwrap();
        train_image_generator(&mut im, &pairs, Stage::One, 1, 0).unwrap();
        train_image_generator(&mut im, &pairs, Stage::Two, 1, 0).unwrap();
        (rm, im, pairs, vocab)
    }

    #[test]
    fn image_cycle_loss_cases() {
        let a = PixelGrid::constant(8, 8, 0.0).unwrap();
        let b = PixelGrid::constant(8, 8, 1.0).unwrap();
        assert_eq!(image_cycle_loss(&a, &a).unwrap(), 0.0);
        assert_eq!(image_cycle_loss(&a, &b).unwrap(), 1.0);
        let mut half = ndarray::Array2::zeros((8, 8));
        for r in 0..4 {
            for c in 0..8 {
                half[[r, c]] = 1.0;
            }
        }
        let half = PixelGrid::new(half).unwrap();
        assert!((image_cycle_loss(&half, &a).unwrap() - 0.5).abs() < 1e-12);
        let smaller = PixelGrid::constant(4, 4, 0.0).unwrap();
        assert!(image_cycle_loss(&a, &smaller).is_err());
    }

    #[test]
    fn image_cycle_loss_metric_properties() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(40);
        for _ in 0..30 {
            let g = |rng: &mut rand_chacha::ChaCha8Rng| {
                PixelGrid::new(ndarray::Array2::from_shape_fn((6, 6), |_| rng.gen())).unwrap()
            };
            let a = g(&mut rng);
            let b = g(&mut rng);
            let c = g(&mut rng);
            let ab = image_cycle_loss(&a, &b).unwrap();
            let ba = image_cycle_loss(&b, &a).unwrap();
            let ac = image_cycle_loss(&a, &c).unwrap();
            let cb = image_cycle_loss(&c, &b).unwrap();
            assert_eq!(ab, ba);
            assert!(ab <= ac + cb + 1e-12, "triangle inequality");
            assert_eq!(image_cycle_loss(&a, &a).unwrap(), 0.0);
        }
    }

    #[test]
    fn report_agreement_cases() {
        let r = |ids: &[u32]| TokenizedReport {
            sentences: vec![ids.iter().copied().chain([crate::data::END]).collect()],
        };
        let a = r(&[10, 11, 12, 13]);
        assert_eq!(report_cycle_agreement(&a, &a), 1.0);
        let disjoint = r(&[20, 21]);
        assert_eq!(report_cycle_agreement(&a, &disjoint), 0.0);
        // original {a,b,c,d}, reconstruction {a,b}: P=1, R=0.5, F1=2/3
        let partial = r(&[10, 11]);
        let f1 = report_cycle_agreement(&a, &partial);
        assert!((f1 - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(f1, report_cycle_agreement(&partial, &a), "symmetry");
    }

    #[test]
    fn agreement_is_one_iff_multisets_match() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(55);
        for _ in 0..200 {
            let mk = |rng: &mut rand_chacha::ChaCha8Rng| {
                let n = rng.gen_range(1..8);
                let ids: Vec<u32> = (0..n).map(|_| rng.gen_range(10..16)).collect();
                TokenizedReport {
                    sentences: vec![ids.into_iter().chain([crate::data::END]).collect()],
                }
            };
            let a = mk(&mut rng);
            let b = mk(&mut rng);
            let bag = |r: &TokenizedReport| {
                let mut v = r.content_ids();
                v.sort_unstable();
                v
            };
            let agreement = report_cycle_agreement(&a, &b);
            assert_eq!(agreement == 1.0, bag(&a) == bag(&b));
            assert_eq!(agreement, report_cycle_agreement(&b, &a));
        }
    }

    #[test]
    fn untrained_models_build_valid_pairs() {
        let (rm, im, pairs, vocab) = toy_world(4);
        let pair = cycle_forward_image(&rm, &im, &pairs[0].image, &vocab).unwrap();
        match &pair {
            CyclePair::ImageFirst {
                original,
                reconstruction,
                first_hop,
            } => {
                assert_eq!(original.height(), reconstruction.height());
                assert_eq!(original.width(), reconstruction.width());
                assert!(first_hop.is_valid(&vocab));
            }
            _ => panic!("wrong direction"),
        }
        let rp = cycle_forward_report(&rm, &im, &pairs[0].tokens, &vocab).unwrap();
        match &rp {
            CyclePair::ReportFirst { reconstruction, .. } => {
                assert!(reconstruction.is_valid(&vocab));
            }
            _ => panic!("wrong direction"),
        }
    }

    #[test]
    fn cycle_forward_is_deterministic() {
        let (rm, im, pairs, vocab) = toy_world(4);
        let one = cycle_forward_image(&rm, &im, &pairs[1].image, &vocab).unwrap();
        let two = cycle_forward_image(&rm, &im, &pairs[1].image, &vocab).unwrap();
        match (one, two) {
            (
                CyclePair::ImageFirst {
                    reconstruction: r1,
                    first_hop: h1,
                    ..
                },
                CyclePair::ImageFirst {
                    reconstruction: r2,
                    first_hop: h2,
                    ..
                },
            ) => {
                assert_eq!(h1, h2);
                assert_eq!(r1, r2);
            }
            _ => panic!("wrong direction"),
        }
    }

    #[test]
    fn fresh_models_are_rejected() {
        let (mut rm, mut im, pairs, vocab) = toy_world(4);
        let err =
            train_cycle(&mut rm, &mut im, &pairs, &CycleConfig::default(), &vocab).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)), "{err}");
        assert!(err.to_string().contains("pretrain"), "{err}");
    }

    #[test]
    fn seeded_cycle_runs_are_identical() {
        let mk = || {
            let (mut rm, mut im, pairs, vocab) = pretrained(8);
            let config = CycleConfig {
                epochs: 1,
                agreement_probe: 4,
                ..Default::default()
            };
            let trace = train_cycle(&mut rm, &mut im, &pairs, &config, &vocab).unwrap();
            (
                trace,
                rm.store().group_hash(&["encoder", "decoder"]),
                im.store().group_hash(&["embedder", "g1", "g2", "d1", "d2"]),
            )
        };
        let (ta, ra, ia) = mk();
        let (tb, rb, ib) = mk();
        assert_eq!(ta, tb);
        assert_eq!(ra, rb);
        assert_eq!(ia, ib);
    }

    #[test]
    fn zero_weight_updates_equal_pure_adversarial() {
        let degenerate = CycleConfig {
            lambda_cycle_image: 0.0,
            lambda_cycle_text: 0.0,
            epochs: 1,
            agreement_probe: 4,
            ..Default::default()
        };
        // public path with zero weights
        let (mut rm_a, mut im_a, pairs, vocab) = pretrained(8);
        let trace_a = train_cycle(&mut rm_a, &mut im_a, &pairs, &degenerate, &vocab).unwrap();
        // reference: same loop with the cycle term structurally attached
        // but still zero-weighted
        let (mut rm_b, mut im_b, pairs_b, vocab_b) = pretrained(8);
        let trace_b =
            run_cycle(&mut rm_b, &mut im_b, &pairs_b, &degenerate, &vocab_b, true).unwrap();
        assert_eq!(trace_a, trace_b);
        assert_eq!(
            im_a.store().group_hash(&["embedder", "g1", "g2", "d1", "d2"]),
            im_b.store().group_hash(&["embedder", "g1", "g2", "d1", "d2"]),
        );
        // the cycle values are still reported even though unused
        assert!(trace_a.image_cycle.iter().all(|v| v.is_finite()));
    }
}
