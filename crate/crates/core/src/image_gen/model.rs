//! Text embedder, the two generator stages, and the conditional
//! discriminators.

use ndarray::{Array2, Array4};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::data::{TokenizedReport, Vocabulary, UNK};
use crate::error::{Error, Result};
use crate::grid::PixelGrid;
use crate::image_gen::ImageGenConfig;
use crate::nn::{Conv2d, Embedding, LeafSet, Linear, ParamStore, Tensor};

pub const CHECKPOINT_KIND: &str = "image_gen";
pub const GROUP_EMBEDDER: &str = "embedder";
pub const GROUP_G1: &str = "g1";
pub const GROUP_D1: &str = "d1";
pub const GROUP_G2: &str = "g2";
pub const GROUP_D2: &str = "d2";

/// Parameter groups owned by stage-1 pretraining; stage-2 training must
/// leave them bit-identical.
pub const STAGE1_GROUPS: [&str; 3] = [GROUP_EMBEDDER, GROUP_G1, GROUP_D1];
pub const STAGE2_GROUPS: [&str; 2] = [GROUP_G2, GROUP_D2];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    One,
    Two,
}

impl Stage {
    pub fn from_index(i: usize) -> Result<Stage> {
        match i {
            1 => Ok(Stage::One),
            2 => Ok(Stage::Two),
            _ => Err(Error::Config(format!("stage must be 1 or 2, got {i}"))),
        }
    }
}

/// Learned report embedding; finite by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct TextEmbedding(pub Vec<f64>);

impl TextEmbedding {
    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn distance(&self, other: &TextEmbedding) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

fn halve(ch: usize) -> usize {
    (ch / 2).max(8)
}

pub struct ImageGenModel {
    pub config: ImageGenConfig,
    pub(crate) store: ParamStore,
    // text embedder
    word_embed: Embedding,
    embed_fc: Linear,
    // stage-1 generator
    g1_fc: Linear,
    g1_start_ch: usize,
    g1_ups: Vec<Conv2d>,
    g1_out: Conv2d,
    // stage-2 generator
    g2_enc1: Conv2d,
    g2_enc2: Conv2d,
    g2_embed_fc: Linear,
    g2_fuse: Conv2d,
    g2_ups: Vec<Conv2d>,
    g2_out: Conv2d,
    // discriminators
    d1_convs: Vec<Conv2d>,
    d1_embed_fc: Linear,
    d1_fuse: Conv2d,
    d1_head: Linear,
    d2_convs: Vec<Conv2d>,
    d2_embed_fc: Linear,
    d2_fuse: Conv2d,
    d2_head: Linear,
    pub epochs_stage1: u64,
    pub epochs_stage2: u64,
    pub epochs_cycle: u64,
}

impl ImageGenModel {
    pub fn new(config: ImageGenConfig, seed: u64) -> Result<ImageGenModel> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let base = config.base_channels;

        let word_embed = Embedding::new(
            &mut store,
            "embed.words",
            GROUP_EMBEDDER,
            config.vocab_size,
            config.word_embed_dim,
            &mut rng,
        );
        let embed_fc = Linear::new(
            &mut store,
            "embed.fc",
            GROUP_EMBEDDER,
            config.word_embed_dim,
            config.embed_dim,
            &mut rng,
        );

        // stage-1 generator: dense seed at 4x4, nearest-neighbour up blocks
        let g1_start_ch = base * 4;
        let n_up1 = (config.stage1_resolution / 4).trailing_zeros() as usize;
        let g1_fc = Linear::new(
            &mut store,
            "g1.fc",
            GROUP_G1,
            config.noise_dim + config.embed_dim,
            g1_start_ch * 16,
            &mut rng,
        );
        let mut g1_ups = Vec::new();
        let mut ch = g1_start_ch;
        for i in 0..n_up1 {
            let next = halve(ch);
            g1_ups.push(Conv2d::new(
                &mut store,
                &format!("g1.up{i}"),
                GROUP_G1,
                ch,
                next,
                3,
                1,
                1,
                &mut rng,
            ));
            ch = next;
        }
        let g1_out = Conv2d::new(&mut store, "g1.out", GROUP_G1, ch, 1, 3, 1, 1, &mut rng);

        // stage-2 generator: encode the coarse image to s1/4, inject the
        // text embedding spatially, refine upward to s2
        let g2_enc1 = Conv2d::new(&mut store, "g2.enc1", GROUP_G2, 1, base, 3, 1, 1, &mut rng);
        let g2_enc2 = Conv2d::new(&mut store, "g2.enc2", GROUP_G2, base, base * 2, 3, 1, 1, &mut rng);
        let g2_embed_fc = Linear::new(&mut store, "g2.embed", GROUP_G2, config.embed_dim, base, &mut rng);
        let g2_fuse = Conv2d::new(
            &mut store,
            "g2.fuse",
            GROUP_G2,
            base * 3,
            base * 2,
            3,
            1,
            1,
            &mut rng,
        );
        let bottleneck = config.stage1_resolution / 4;
        let n_up2 = (config.stage2_resolution / bottleneck).trailing_zeros() as usize;
        let mut g2_ups = Vec::new();
        let mut ch = base * 2;
        for i in 0..n_up2 {
            let next = halve(ch);
            g2_ups.push(Conv2d::new(
                &mut store,
                &format!("g2.up{i}"),
                GROUP_G2,
                ch,
                next,
                3,
                1,
                1,
                &mut rng,
            ));
            ch = next;
        }
        let g2_out = Conv2d::new(&mut store, "g2.out", GROUP_G2, ch, 1, 3, 1, 1, &mut rng);

        // conditional discriminators: downsample to 8x8, concatenate the
        // projected embedding, fuse, pool, and score
        let mk_disc = |prefix: &str,
                           group: &str,
                           resolution: usize,
                           store: &mut ParamStore,
                           rng: &mut ChaCha8Rng|
         -> (Vec<Conv2d>, Linear, Conv2d, Linear) {
            let n_down = (resolution / 8).trailing_zeros() as usize;
            let mut convs = Vec::new();
            let mut ch_in = 1;
            let mut ch_out = base;
            for i in 0..n_down {
                convs.push(Conv2d::new(
                    store,
                    &format!("{prefix}.conv{i}"),
                    group,
                    ch_in,
                    ch_out,
                    3,
                    1,
                    1,
                    rng,
                ));
                ch_in = ch_out;
                ch_out = (ch_out * 2).min(base * 2);
            }
            let embed_fc = Linear::new(store, &format!("{prefix}.embed"), group, config.embed_dim, base, rng);
            let fuse = Conv2d::new(
                store,
                &format!("{prefix}.fuse"),
                group,
                ch_in + base,
                base * 2,
                3,
                1,
                1,
                rng,
            );
            let head = Linear::new(store, &format!("{prefix}.head"), group, base * 2 * 16, 1, rng);
            (convs, embed_fc, fuse, head)
        };
        let (d1_convs, d1_embed_fc, d1_fuse, d1_head) =
            mk_disc("d1", GROUP_D1, config.stage1_resolution, &mut store, &mut rng);
        let (d2_convs, d2_embed_fc, d2_fuse, d2_head) =
            mk_disc("d2", GROUP_D2, config.stage2_resolution, &mut store, &mut rng);

        Ok(ImageGenModel {
            config,
            store,
            word_embed,
            embed_fc,
            g1_fc,
            g1_start_ch,
            g1_ups,
            g1_out,
            g2_enc1,
            g2_enc2,
            g2_embed_fc,
            g2_fuse,
            g2_ups,
            g2_out,
            d1_convs,
            d1_embed_fc,
            d1_fuse,
            d1_head,
            d2_convs,
            d2_embed_fc,
            d2_fuse,
            d2_head,
            epochs_stage1: 0,
            epochs_stage2: 0,
            epochs_cycle: 0,
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn check_vocabulary(&self, vocab: &Vocabulary) -> Result<()> {
        if vocab.len() != self.config.vocab_size {
            return Err(Error::Config(format!(
                "vocabulary size {} does not match model vocabulary {}",
                vocab.len(),
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        let config_json = serde_json::to_string(&self.config).expect("config serializes");
        let mut ckpt = Checkpoint::new(CHECKPOINT_KIND, config_json, self.store.clone());
        ckpt.epochs_trained.insert("stage1".into(), self.epochs_stage1);
        ckpt.epochs_trained.insert("stage2".into(), self.epochs_stage2);
        ckpt.epochs_trained.insert("cycle".into(), self.epochs_cycle);
        ckpt
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<ImageGenModel> {
        if ckpt.kind != CHECKPOINT_KIND {
            return Err(Error::Checkpoint(format!(
                "checkpoint kind {:?} is not an image generator",
                ckpt.kind
            )));
        }
        let config: ImageGenConfig = serde_json::from_str(&ckpt.config_json)
            .map_err(|e| Error::Checkpoint(format!("config parse: {e}")))?;
        let mut model = ImageGenModel::new(config, 0)?;
        ckpt.validate_against(&model.store)?;
        model.store = ckpt.store.clone();
        model.epochs_stage1 = ckpt.epochs("stage1");
        model.epochs_stage2 = ckpt.epochs("stage2");
        model.epochs_cycle = ckpt.epochs("cycle");
        Ok(model)
    }

    pub(crate) fn const_leaves(&self) -> LeafSet {
        LeafSet {
            tensors: self
                .store
                .entries()
                .iter()
                .map(|e| Tensor::constant(e.value.clone()))
                .collect(),
        }
    }

    /// All-zero evaluation noise; inference is deterministic by default.
    pub fn zero_noise(&self) -> Vec<f64> {
        vec![0.0; self.config.noise_dim]
    }

    // ---- graph-mode forwards ----

    /// Token ids -> (1, embed_dim). The embedding is the mean of the word
    /// embeddings passed through one nonlinear layer.
    pub(crate) fn embed_graph(&self, ps: &LeafSet, content_ids: &[u32]) -> Tensor {
        let ids: Vec<usize> = if content_ids.is_empty() {
            vec![UNK as usize]
        } else {
            content_ids.iter().map(|&i| i as usize).collect()
        };
        let words = self.word_embed.forward(ps, &ids);
        self.embed_fc.forward(ps, &words.mean_rows()).relu()
    }

    /// (B, noise), (B, embed) -> (B,1,s1,s1) in [0,1].
    pub(crate) fn g1_graph(&self, ps: &LeafSet, noise: &Tensor, embed: &Tensor) -> Tensor {
        let zc = Tensor::concat(1, &[noise.clone(), embed.clone()]);
        let b = zc.shape()[0];
        let mut h = self
            .g1_fc
            .forward(ps, &zc)
            .relu()
            .reshape(&[b, self.g1_start_ch, 4, 4]);
        for up in &self.g1_ups {
            h = up.forward(ps, &h.upsample2()).relu();
        }
        self.g1_out.forward(ps, &h).sigmoid()
    }

    /// (B,1,s1,s1), (B, embed) -> (B,1,s2,s2) in [0,1].
    pub(crate) fn g2_graph(&self, ps: &LeafSet, coarse: &Tensor, embed: &Tensor) -> Tensor {
        let h1 = self.g2_enc1.forward(ps, coarse).relu().avg_pool2();
        let h2 = self.g2_enc2.forward(ps, &h1).relu().avg_pool2();
        let spatial = h2.shape()[2];
        let cond = self
            .g2_embed_fc
            .forward(ps, embed)
            .relu()
            .spatial_broadcast(spatial, spatial);
        let mut h = self
            .g2_fuse
            .forward(ps, &Tensor::concat(1, &[h2, cond]))
            .relu();
        for up in &self.g2_ups {
            h = up.forward(ps, &h.upsample2()).relu();
        }
        self.g2_out.forward(ps, &h).sigmoid()
    }

    /// Conditional discriminator logits (B,1).
    pub(crate) fn d_graph(&self, ps: &LeafSet, stage: Stage, image: &Tensor, embed: &Tensor) -> Tensor {
        let (convs, embed_fc, fuse, head) = match stage {
            Stage::One => (&self.d1_convs, &self.d1_embed_fc, &self.d1_fuse, &self.d1_head),
            Stage::Two => (&self.d2_convs, &self.d2_embed_fc, &self.d2_fuse, &self.d2_head),
        };
        let mut h = image.clone();
        for conv in convs {
            h = conv.forward(ps, &h).leaky_relu(0.2).avg_pool2();
        }
        let spatial = h.shape()[2];
        let cond = embed_fc
            .forward(ps, embed)
            .leaky_relu(0.2)
            .spatial_broadcast(spatial, spatial);
        let fused = fuse
            .forward(ps, &Tensor::concat(1, &[h, cond]))
            .leaky_relu(0.2)
            .avg_pool2();
        let b = fused.shape()[0];
        let flat_len: usize = fused.shape()[1..].iter().product();
        head.forward(ps, &fused.reshape(&[b, flat_len]))
    }

    // ---- tensor/grid plumbing ----

    pub(crate) fn grids_to_tensor(images: &[&PixelGrid], resolution: usize) -> Result<Tensor> {
        let mut batch = Array4::<f64>::zeros((images.len(), 1, resolution, resolution));
        for (i, img) in images.iter().enumerate() {
            if img.height() != resolution || img.width() != resolution {
                return Err(Error::Shape(format!(
                    "expected {resolution}x{resolution}, got {}x{}",
                    img.height(),
                    img.width()
                )));
            }
            for ((r, c), &v) in img.data().indexed_iter() {
                batch[[i, 0, r, c]] = v;
            }
        }
        Ok(Tensor::constant(batch.into_dyn()))
    }

    pub(crate) fn tensor_to_grid(batch: &Tensor, index: usize) -> PixelGrid {
        let v = batch.value();
        let shape = v.shape().to_vec();
        let mut out = ndarray::Array2::<f64>::zeros((shape[2], shape[3]));
        for r in 0..shape[2] {
            for c in 0..shape[3] {
                out[[r, c]] = v[[index, 0, r, c]];
            }
        }
        PixelGrid::from_clamped(out)
    }

    pub(crate) fn embedding_tensor(&self, embedding: &TextEmbedding) -> Result<Tensor> {
        if embedding.0.len() != self.config.embed_dim {
            return Err(Error::Shape(format!(
                "embedding length {} does not match embed_dim {}",
                embedding.0.len(),
                self.config.embed_dim
            )));
        }
        let arr = Array2::from_shape_vec((1, self.config.embed_dim), embedding.0.clone()).unwrap();
        Ok(Tensor::constant(arr.into_dyn()))
    }

    // ---- evaluation-mode operations ----

    /// Embeds a tokenized report; deterministic.
    pub fn embed_report(&self, report: &TokenizedReport, vocab: &Vocabulary) -> Result<TextEmbedding> {
        self.check_vocabulary(vocab)?;
        if !report.is_valid(vocab) {
            return Err(Error::Data("report is not valid under this vocabulary".into()));
        }
        let ps = self.const_leaves();
        let e = self.embed_graph(&ps, &report.content_ids());
        let embedding = TextEmbedding(e.value().iter().cloned().collect());
        debug_assert!(embedding.is_finite());
        Ok(embedding)
    }

    /// Coarse stage: embedding + noise -> s1 x s1 image in [0,1].
    pub fn generate_stage1(&self, embedding: &TextEmbedding, noise: &[f64]) -> Result<PixelGrid> {
        if noise.len() != self.config.noise_dim {
            return Err(Error::Shape(format!(
                "noise length {} does not match noise_dim {}",
                noise.len(),
                self.config.noise_dim
            )));
        }
        let ps = self.const_leaves();
        let z = Tensor::constant(
            Array2::from_shape_vec((1, noise.len()), noise.to_vec())
                .unwrap()
                .into_dyn(),
        );
        let e = self.embedding_tensor(embedding)?;
        let out = self.g1_graph(&ps, &z, &e);
        Ok(Self::tensor_to_grid(&out, 0))
    }

    /// Refinement stage: coarse image + embedding -> s2 x s2 image.
    pub fn generate_stage2(&self, coarse: &PixelGrid, embedding: &TextEmbedding) -> Result<PixelGrid> {
        let s1 = self.config.stage1_resolution;
        let x = Self::grids_to_tensor(&[coarse], s1)?;
        let ps = self.const_leaves();
        let e = self.embedding_tensor(embedding)?;
        let out = self.g2_graph(&ps, &x, &e);
        Ok(Self::tensor_to_grid(&out, 0))
    }

    /// Conditional real/fake probability for an image at a stage's
    /// resolution.
    pub fn discriminate(&self, image: &PixelGrid, embedding: &TextEmbedding, stage: Stage) -> Result<f64> {
        let resolution = match stage {
            Stage::One => self.config.stage1_resolution,
            Stage::Two => self.config.stage2_resolution,
        };
        let x = Self::grids_to_tensor(&[image], resolution)?;
        let ps = self.const_leaves();
        let e = self.embedding_tensor(embedding)?;
        let logit = self.d_graph(&ps, stage, &x, &e).value()[[0, 0]];
        Ok(1.0 / (1.0 + (-logit).exp()))
    }

    /// Full report-to-image chain with deterministic zero noise.
    pub fn generate_from_report(
        &self,
        report: &TokenizedReport,
        vocab: &Vocabulary,
    ) -> Result<(PixelGrid, PixelGrid)> {
        let embedding = self.embed_report(report, vocab)?;
        let coarse = self.generate_stage1(&embedding, &self.zero_noise())?;
        let refined = self.generate_stage2(&coarse, &embedding)?;
        Ok((coarse, refined))
    }
}
