//! Staged adversarial training: stage 1 first (embedder, coarse generator,
//! its discriminator), then stage 2 with every stage-1 parameter frozen.

use ndarray::{Array2, ArrayD, IxDyn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::StudyPair;
use crate::error::{Error, Result};
use crate::grid::PixelGrid;
use crate::image_gen::model::{
    ImageGenModel, Stage, GROUP_D1, GROUP_D2, GROUP_EMBEDDER, GROUP_G1, GROUP_G2,
};
use crate::nn::{Adam, LeafSet, ParamStore, Tensor};

/// Per-epoch means of the three loss components.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StageTrace {
    pub d_loss: Vec<f64>,
    pub g_adversarial: Vec<f64>,
    pub g_l1: Vec<f64>,
}

impl StageTrace {
    fn new() -> StageTrace {
        StageTrace {
            d_loss: Vec::new(),
            g_adversarial: Vec::new(),
            g_l1: Vec::new(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.d_loss.iter().all(|v| v.is_finite())
            && self.g_adversarial.iter().all(|v| v.is_finite())
            && self.g_l1.iter().all(|v| v.is_finite())
    }
}

fn ones(b: usize) -> ArrayD<f64> {
    ArrayD::ones(IxDyn(&[b, 1]))
}

fn zeros(b: usize) -> ArrayD<f64> {
    ArrayD::zeros(IxDyn(&[b, 1]))
}

pub(crate) fn noise_batch(rng: &mut ChaCha8Rng, b: usize, dim: usize) -> Tensor {
    let arr = Array2::from_shape_fn((b, dim), |_| rng.gen_range(-1.0..1.0));
    Tensor::constant(arr.into_dyn())
}

/// Batched graph-mode embedding, one report per row.
pub(crate) fn embed_batch(model: &ImageGenModel, ps: &LeafSet, pairs: &[&StudyPair]) -> Tensor {
    let rows: Vec<Tensor> = pairs
        .iter()
        .map(|p| model.embed_graph(ps, &p.tokens.content_ids()))
        .collect();
    Tensor::concat(0, &rows)
}

/// Generator-step loss for one sample at a stage, with deterministic zero
/// noise: non-saturating adversarial term plus the weighted L1 term.
/// Shared with the finite-difference gradient checks.
pub fn generator_sample_loss(
    model: &ImageGenModel,
    pair: &StudyPair,
    stage: Stage,
) -> Result<(Tensor, LeafSet)> {
    let ps = model.store.leaf_set();
    let e = embed_batch(model, &ps, &[pair]);
    let z = Tensor::constant(
        Array2::<f64>::zeros((1, model.config.noise_dim)).into_dyn(),
    );
    let (fake, real) = match stage {
        Stage::One => {
            let real = pair
                .image
                .resize_bilinear(model.config.stage1_resolution, model.config.stage1_resolution)?;
            (
                model.g1_graph(&ps, &z, &e),
                ImageGenModel::grids_to_tensor(&[&real], model.config.stage1_resolution)?,
            )
        }
        Stage::Two => {
            let coarse = model.g1_graph(&ps, &z, &e).detach();
            let real = pair
                .image
                .resize_bilinear(model.config.stage2_resolution, model.config.stage2_resolution)?;
            (
                model.g2_graph(&ps, &coarse, &e),
                ImageGenModel::grids_to_tensor(&[&real], model.config.stage2_resolution)?,
            )
        }
    };
    let adv = model.d_graph(&ps, stage, &fake, &e).bce_with_logits(&ones(1));
    let l1 = fake.l1_loss(&real);
    Ok((adv.add(&l1.scale(model.config.l1_weight)), ps))
}

/// Alternating generator/discriminator updates at the configured learning
/// rate. Stage 2 requires a trained stage 1 and never modifies stage-1
/// parameters.
pub fn train_image_generator(
    model: &mut ImageGenModel,
    train: &[StudyPair],
    stage: Stage,
    epochs: usize,
    seed: u64,
) -> Result<StageTrace> {
    if train.is_empty() {
        return Err(Error::Data("image generator: empty train set".into()));
    }
    if stage == Stage::Two && model.epochs_stage1 == 0 {
        return Err(Error::Precondition(
            "stage 2 requires a trained stage 1; run stage-1 training first".into(),
        ));
    }
    let (g_groups, d_groups, resolution): (&[&str], &[&str], usize) = match stage {
        Stage::One => (
            &[GROUP_G1, GROUP_EMBEDDER],
            &[GROUP_D1],
            model.config.stage1_resolution,
        ),
        Stage::Two => (&[GROUP_G2], &[GROUP_D2], model.config.stage2_resolution),
    };
    let mut opt_g = Adam::new(&model.store, g_groups, model.config.lr, 0.5, 0.999);
    let mut opt_d = Adam::new(&model.store, d_groups, model.config.lr, 0.5, 0.999);

    // training targets at the stage resolution
    let reals: Vec<PixelGrid> = train
        .iter()
        .map(|p| p.image.resize_bilinear(resolution, resolution))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = StageTrace::new();
    let mut order: Vec<usize> = (0..train.len()).collect();
    for _epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 3];
        let mut batches = 0usize;
        for chunk in order.chunks(model.config.batch_size) {
            let pairs: Vec<&StudyPair> = chunk.iter().map(|&i| &train[i]).collect();
            let real_grids: Vec<&PixelGrid> = chunk.iter().map(|&i| &reals[i]).collect();
            let b = pairs.len();
            let real = ImageGenModel::grids_to_tensor(&real_grids, resolution)?;
            let z = noise_batch(&mut rng, b, model.config.noise_dim);

            // discriminator step: graph only through D; generator and
            // embedder outputs enter as constants
            let d_loss_value = {
                let frozen = model.const_leaves();
                let e_const = embed_batch(model, &frozen, &pairs);
                let fake_const = match stage {
                    Stage::One => model.g1_graph(&frozen, &z, &e_const),
                    Stage::Two => {
                        let coarse = model.g1_graph(&frozen, &z, &e_const);
                        model.g2_graph(&frozen, &coarse, &e_const)
                    }
                };
                let ps = model.store.leaf_set();
                let e_in = e_const.detach();
                let d_real = model.d_graph(&ps, stage, &real, &e_in).bce_with_logits(&ones(b));
                let d_fake = model
                    .d_graph(&ps, stage, &fake_const.detach(), &e_in)
                    .bce_with_logits(&zeros(b));
                let loss = d_real.add(&d_fake).scale(0.5);
                loss.backward();
                let grads = ParamStore::grads(&ps.tensors);
                opt_d.step(&mut model.store, &grads);
                loss.scalar()
            };

            // generator step: non-saturating adversarial + paired L1
            let (g_adv_value, g_l1_value) = {
                let ps = model.store.leaf_set();
                let (fake, e) = match stage {
                    Stage::One => {
                        let e = embed_batch(model, &ps, &pairs);
                        (model.g1_graph(&ps, &z, &e), e)
                    }
                    Stage::Two => {
                        // stage-1 parameters are frozen; its output and the
                        // embedding are inputs here
                        let frozen = model.const_leaves();
                        let e_const = embed_batch(model, &frozen, &pairs);
                        let coarse = model.g1_graph(&frozen, &z, &e_const).detach();
                        (model.g2_graph(&ps, &coarse, &e_const), e_const)
                    }
                };
                let adv = model.d_graph(&ps, stage, &fake, &e).bce_with_logits(&ones(b));
                let l1 = fake.l1_loss(&real);
                let loss = adv.add(&l1.scale(model.config.l1_weight));
                loss.backward();
                let grads = ParamStore::grads(&ps.tensors);
                opt_g.step(&mut model.store, &grads);
                (adv.scalar(), l1.scalar())
            };

            for (slot, v) in [d_loss_value, g_adv_value, g_l1_value].into_iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::Data(format!("non-finite GAN loss {v}")));
                }
                sums[slot] += v;
            }
            batches += 1;
        }
        trace.d_loss.push(sums[0] / batches as f64);
        trace.g_adversarial.push(sums[1] / batches as f64);
        trace.g_l1.push(sums[2] / batches as f64);
        match stage {
            Stage::One => model.epochs_stage1 += 1,
            Stage::Two => model.epochs_stage2 += 1,
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::toy::synthesize_toy_dataset;
    use crate::data::{build_vocabulary, extract_caption, make_pairs};
    use crate::image_gen::model::{STAGE1_GROUPS, STAGE2_GROUPS};
    use crate::image_gen::ImageGenConfig;

    fn toy_setup(n: usize) -> (ImageGenModel, Vec<StudyPair>) {
        let studies = synthesize_toy_dataset(n, 23).unwrap();
        let captions: Vec<String> = studies
            .iter()
            .map(|s| extract_caption(&s.report).unwrap())
            .collect();
        let vocab = build_vocabulary(&captions, 1).unwrap();
        let pairs = make_pairs(&studies, &vocab).unwrap();
        let mut config = ImageGenConfig::toy(vocab.len());
        config.embed_dim = 32;
        config.word_embed_dim = 16;
        config.noise_dim = 8;
        config.base_channels = 8;
        (ImageGenModel::new(config, 0).unwrap(), pairs)
    }

    #[test]
    fn stage2_requires_trained_stage1() {
        let (mut model, pairs) = toy_setup(8);
        let err = train_image_generator(&mut model, &pairs, Stage::Two, 1, 0).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)), "{err}");
    }

    #[test]
    fn stage2_leaves_stage1_bits_unchanged() {
        let (mut model, pairs) = toy_setup(8);
        train_image_generator(&mut model, &pairs, Stage::One, 1, 0).unwrap();
        let stage1_hash = model.store().group_hash(&STAGE1_GROUPS);
        let stage2_hash_before = model.store().group_hash(&STAGE2_GROUPS);
        train_image_generator(&mut model, &pairs, Stage::Two, 1, 0).unwrap();
        assert_eq!(model.store().group_hash(&STAGE1_GROUPS), stage1_hash);
        assert_ne!(model.store().group_hash(&STAGE2_GROUPS), stage2_hash_before);
    }

    #[test]
    fn seeded_runs_are_identical() {
        let run = || {
            let (mut model, pairs) = toy_setup(8);
            let t1 = train_image_generator(&mut model, &pairs, Stage::One, 2, 7).unwrap();
            let h = model.store().group_hash(&STAGE1_GROUPS);
            (t1, h)
        };
        let (ta, ha) = run();
        let (tb, hb) = run();
        assert_eq!(ta, tb);
        assert_eq!(ha, hb);
    }

    #[test]
    fn empty_train_set_is_error() {
        let (mut model, _) = toy_setup(4);
        assert!(train_image_generator(&mut model, &[], Stage::One, 1, 0).is_err());
    }

    #[test]
    fn traces_stay_finite() {
        let (mut model, pairs) = toy_setup(12);
        let t1 = train_image_generator(&mut model, &pairs, Stage::One, 3, 0).unwrap();
        assert!(t1.is_finite());
        assert_eq!(t1.d_loss.len(), 3);
        let t2 = train_image_generator(&mut model, &pairs, Stage::Two, 2, 0).unwrap();
        assert!(t2.is_finite());
    }

    #[test]
    fn generator_gradients_match_central_difference() {
        use crate::nn::ParamId;
        let (model, pairs) = toy_setup(2);
        let pair = &pairs[0];
        for (stage, group) in [(Stage::One, GROUP_G1), (Stage::Two, GROUP_G2)] {
            let (loss, ps) = generator_sample_loss(&model, pair, stage).unwrap();
            loss.backward();
            let indices = model.store().group_indices(&[group]);
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let pick = indices[rng.gen_range(0..indices.len())];
            let analytic = ps.tensors[pick].grad().iter().next().cloned().unwrap();
            let h = 1e-6;
            let eval = |delta: f64| {
                let mut m2 = ImageGenModel::new(model.config.clone(), 0).unwrap();
                m2.store_mut().clone_from(model.store());
                let mut arr = m2.store().value(ParamId(pick)).clone();
                *arr.iter_mut().next().unwrap() += delta;
                m2.store_mut().set_value(ParamId(pick), arr);
                generator_sample_loss(&m2, pair, stage).unwrap().0.scalar()
            };
            let numeric = (eval(h) - eval(-h)) / (2.0 * h);
            let denom = numeric.abs().max(analytic.abs()).max(1e-8);
            assert!(
                (analytic - numeric).abs() / denom < 1e-3,
                "stage {stage:?}: analytic {analytic} vs numeric {numeric}"
            );
        }
    }
}
