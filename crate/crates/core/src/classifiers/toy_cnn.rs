//! Desk-scale surrogate for the full multi-label x-ray classifier: a small
//! convolutional network trained on the synthetic shape dataset, with the
//! three shape kinds mapped onto three of the fourteen label slots.

use ndarray::{Array3, Array4};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::classifiers::{ImageClassifier, LabelScores, NUM_LABELS, TOY_SHAPE_SLOTS};
use crate::data::toy::{presence, study_labels};
use crate::data::XRayStudy;
use crate::error::{Error, Result};
use crate::grid::PixelGrid;
use crate::nn::{Adam, Conv2d, LeafSet, Linear, ParamStore, Tensor};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ToyClassifierConfig {
    pub image_size: usize,
    pub channels: [usize; 3],
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for ToyClassifierConfig {
    fn default() -> Self {
        ToyClassifierConfig {
            image_size: 64,
            channels: [8, 16, 32],
            lr: 2e-3,
            epochs: 12,
            batch_size: 8,
            seed: 17,
        }
    }
}

/// Three conv blocks, global average pooling, and a linear head emitting
/// fourteen sigmoid scores. The final conv activation is the Grad-CAM
/// target layer.
#[derive(Debug, Clone)]
pub struct ToyImageClassifier {
    pub config: ToyClassifierConfig,
    store: ParamStore,
    conv1: Conv2d,
    conv2: Conv2d,
    conv3: Conv2d,
    head: Linear,
}

impl ToyImageClassifier {
    pub fn new(config: ToyClassifierConfig) -> ToyImageClassifier {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let [c1, c2, c3] = config.channels;
        let conv1 = Conv2d::new(&mut store, "cls.conv1", "cls", 1, c1, 3, 1, 1, &mut rng);
        let conv2 = Conv2d::new(&mut store, "cls.conv2", "cls", c1, c2, 3, 1, 1, &mut rng);
        let conv3 = Conv2d::new(&mut store, "cls.conv3", "cls", c2, c3, 3, 1, 1, &mut rng);
        let head = Linear::new(&mut store, "cls.head", "cls", c3, NUM_LABELS, &mut rng);
        ToyImageClassifier {
            config,
            store,
            conv1,
            conv2,
            conv3,
            head,
        }
    }

    /// A classifier whose scores are constant in the input: the head
    /// weights and biases are zeroed, so every label scores exactly 0.5
    /// and all gradients into the conv features vanish.
    pub fn constant_stub() -> ToyImageClassifier {
        let mut c = ToyImageClassifier::new(ToyClassifierConfig::default());
        let w_dim = c.store.value(c.head.w).raw_dim();
        let b_dim = c.store.value(c.head.b).raw_dim();
        c.store.set_value(c.head.w, ndarray::ArrayD::zeros(w_dim));
        c.store.set_value(c.head.b, ndarray::ArrayD::zeros(b_dim));
        c
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn check_resolution(&self, image: &PixelGrid) -> Result<()> {
        let s = self.config.image_size;
        if image.height() != s || image.width() != s {
            return Err(Error::Shape(format!(
                "classifier expects {s}x{s}, got {}x{}",
                image.height(),
                image.width()
            )));
        }
        Ok(())
    }

    /// Returns (logits (B,14), final conv activation (B,C,H,W)).
    fn forward(&self, ps: &LeafSet, x: &Tensor) -> (Tensor, Tensor) {
        let h1 = self.conv1.forward(ps, x).relu().avg_pool2();
        let h2 = self.conv2.forward(ps, &h1).relu().avg_pool2();
        let act = self.conv3.forward(ps, &h2).relu();
        let pooled = act.global_avg_pool();
        let logits = self.head.forward(ps, &pooled);
        (logits, act)
    }

    fn image_batch(&self, images: &[&PixelGrid]) -> Tensor {
        let s = self.config.image_size;
        let mut batch = Array4::<f64>::zeros((images.len(), 1, s, s));
        for (i, img) in images.iter().enumerate() {
            for ((r, c), &v) in img.data().indexed_iter() {
                batch[[i, 0, r, c]] = v;
            }
        }
        Tensor::constant(batch.into_dyn())
    }
}

impl ImageClassifier for ToyImageClassifier {
    fn classify(&self, image: &PixelGrid) -> Result<LabelScores> {
        self.check_resolution(image)?;
        // constants only: no graph is recorded for plain classification
        let ps = LeafSet {
            tensors: self
                .store
                .entries()
                .iter()
                .map(|e| Tensor::constant(e.value.clone()))
                .collect(),
        };
        let x = self.image_batch(&[image]);
        let (logits, _) = self.forward(&ps, &x);
        let z = logits.value();
        let mut scores = [0.0f64; NUM_LABELS];
        for (l, s) in scores.iter_mut().enumerate() {
            *s = 1.0 / (1.0 + (-z[[0, l]]).exp());
        }
        LabelScores::new(scores)
    }

    fn descriptor(&self) -> String {
        format!(
            "toy-conv {}x{} ch{:?}",
            self.config.image_size, self.config.image_size, self.config.channels
        )
    }

    fn cam_features(
        &self,
        image: &PixelGrid,
        label: usize,
    ) -> Result<(Array3<f64>, Array3<f64>)> {
        if label >= NUM_LABELS {
            return Err(Error::Config(format!("label index {label} out of range")));
        }
        self.check_resolution(image)?;
        let ps = self.store.leaf_set();
        let x = self.image_batch(&[image]);
        let (logits, act) = self.forward(&ps, &x);
        let score = logits.pick(&[0, label]).sigmoid();
        score.backward();
        let a = act.value();
        let g = act.grad();
        let shape = a.shape().to_vec(); // (1, C, H, W)
        let squeeze = |arr: ndarray::ArrayD<f64>| -> Array3<f64> {
            arr.into_shape_with_order((shape[1], shape[2], shape[3]))
                .unwrap()
        };
        Ok((squeeze(a), squeeze(g)))
    }
}

/// Trains the surrogate classifier on toy studies with BCE over the
/// fourteen label slots (the eleven non-shape slots train toward zero).
pub fn train_toy_image_classifier(
    train: &[XRayStudy],
    config: ToyClassifierConfig,
) -> Result<ToyImageClassifier> {
    if train.len() < 50 {
        return Err(Error::Data(format!(
            "toy classifier needs at least 50 studies, got {}",
            train.len()
        )));
    }
    let mut model = ToyImageClassifier::new(config.clone());
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let mut opt = Adam::new(&model.store, &["cls"], config.lr, 0.9, 0.999);

    let targets: Vec<[f64; NUM_LABELS]> = train
        .iter()
        .map(|s| {
            let mut t = [0.0f64; NUM_LABELS];
            let p = presence(&study_labels(s));
            for (slot, &on) in TOY_SHAPE_SLOTS.iter().zip(p.iter()) {
                t[*slot] = if on { 1.0 } else { 0.0 };
            }
            t
        })
        .collect();

    let mut order: Vec<usize> = (0..train.len()).collect();
    for _epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(config.batch_size) {
            let images: Vec<&PixelGrid> = chunk.iter().map(|&i| &train[i].image).collect();
            let x = model.image_batch(&images);
            let mut y = ndarray::Array2::<f64>::zeros((chunk.len(), NUM_LABELS));
            for (row, &i) in chunk.iter().enumerate() {
                for l in 0..NUM_LABELS {
                    y[[row, l]] = targets[i][l];
                }
            }
            let ps = model.store.leaf_set();
            let (logits, _) = model.forward(&ps, &x);
            let loss = logits.bce_with_logits(&y.into_dyn());
            loss.backward();
            let grads = ParamStore::grads(&ps.tensors);
            opt.step(&mut model.store, &grads);
        }
    }
    Ok(model)
}
