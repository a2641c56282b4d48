//! Model definition, encoding, and greedy decoding.

use ndarray::Array4;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::checkpoint::Checkpoint;
use crate::data::{TokenizedReport, Vocabulary, END, PAD, START};
use crate::error::{Error, Result};
use crate::grid::PixelGrid;
use crate::nn::{softmax, Conv2d, Embedding, LeafSet, Linear, LstmCell, LstmState, ParamStore, Tensor};
use crate::report_gen::ReportGenConfig;

pub const CHECKPOINT_KIND: &str = "report_gen";
pub const GROUP_ENCODER: &str = "encoder";
pub const GROUP_DECODER: &str = "decoder";

/// Encoded image feature; finite by construction.
#[derive(Debug, Clone, PartialEq)]
pub struct VisualFeature(pub Vec<f64>);

impl VisualFeature {
    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn cosine_similarity(&self, other: &VisualFeature) -> f64 {
        let dot: f64 = self.0.iter().zip(other.0.iter()).map(|(a, b)| a * b).sum();
        let na: f64 = self.0.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb: f64 = other.0.iter().map(|v| v * v).sum::<f64>().sqrt();
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na * nb)
        }
    }
}

pub struct ReportGenModel {
    pub config: ReportGenConfig,
    pub(crate) store: ParamStore,
    enc: [Conv2d; 4],
    enc_fc: Linear,
    sent_lstm: LstmCell,
    stop_fc: Linear,
    topic_fc: Linear,
    word_embed: Embedding,
    word_lstm: LstmCell,
    out_fc: Linear,
    pub epochs_trained: u64,
}

impl ReportGenModel {
    pub fn new(config: ReportGenConfig, seed: u64) -> Result<ReportGenModel> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let ch = config.encoder_channels;
        let enc = [
            Conv2d::new(&mut store, "enc.conv1", GROUP_ENCODER, 1, ch[0], 3, 1, 1, &mut rng),
            Conv2d::new(&mut store, "enc.conv2", GROUP_ENCODER, ch[0], ch[1], 3, 1, 1, &mut rng),
            Conv2d::new(&mut store, "enc.conv3", GROUP_ENCODER, ch[1], ch[2], 3, 1, 1, &mut rng),
            Conv2d::new(&mut store, "enc.conv4", GROUP_ENCODER, ch[2], ch[3], 3, 1, 1, &mut rng),
        ];
        let enc_fc = Linear::new(&mut store, "enc.fc", GROUP_ENCODER, ch[3], config.visual_dim, &mut rng);
        let sent_lstm = LstmCell::new(
            &mut store,
            "dec.sent",
            GROUP_DECODER,
            config.visual_dim,
            config.sentence_state_dim,
            &mut rng,
        );
        let stop_fc = Linear::new(&mut store, "dec.stop", GROUP_DECODER, config.sentence_state_dim, 1, &mut rng);
        let topic_fc = Linear::new(
            &mut store,
            "dec.topic",
            GROUP_DECODER,
            config.sentence_state_dim,
            config.word_state_dim,
            &mut rng,
        );
        let word_embed = Embedding::new(
            &mut store,
            "dec.embed",
            GROUP_DECODER,
            config.vocab_size,
            config.word_input_dim,
            &mut rng,
        );
        let word_lstm = LstmCell::new(
            &mut store,
            "dec.word",
            GROUP_DECODER,
            config.word_input_dim,
            config.word_state_dim,
            &mut rng,
        );
        let out_fc = Linear::new(
            &mut store,
            "dec.out",
            GROUP_DECODER,
            config.word_state_dim,
            config.vocab_size,
            &mut rng,
        );
        Ok(ReportGenModel {
            config,
            store,
            enc,
            enc_fc,
            sent_lstm,
            stop_fc,
            topic_fc,
            word_embed,
            word_lstm,
            out_fc,
            epochs_trained: 0,
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
        ckpt.epochs_trained.insert("pretrain".into(), self.epochs_trained);
        ckpt
    }

    /// Rebuilds the model, validating the stored parameter table against a
    /// freshly constructed store for the stored config.
    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<ReportGenModel> {
        if ckpt.kind != CHECKPOINT_KIND {
            return Err(Error::Checkpoint(format!(
                "checkpoint kind {:?} is not a report generator",
                ckpt.kind
            )));
        }
        let config: ReportGenConfig = serde_json::from_str(&ckpt.config_json)
            .map_err(|e| Error::Checkpoint(format!("config parse: {e}")))?;
        let mut model = ReportGenModel::new(config, 0)?;
        ckpt.validate_against(&model.store)?;
        model.store = ckpt.store.clone();
        model.epochs_trained = ckpt.epochs("pretrain");
        Ok(model)
    }

    pub(crate) fn image_batch(&self, images: &[&PixelGrid]) -> Result<Tensor> {
        let s = self.config.image_size;
        for img in images {
            if img.height() != s || img.width() != s {
                return Err(Error::Shape(format!(
                    "encoder expects {s}x{s}, got {}x{}",
                    img.height(),
                    img.width()
                )));
            }
        }
        let mut batch = Array4::<f64>::zeros((images.len(), 1, s, s));
        for (i, img) in images.iter().enumerate() {
            for ((r, c), &v) in img.data().indexed_iter() {
                batch[[i, 0, r, c]] = v;
            }
        }
        Ok(Tensor::constant(batch.into_dyn()))
    }

    /// (B,1,S,S) -> (B, visual_dim)
    pub(crate) fn encode(&self, ps: &LeafSet, x: &Tensor) -> Tensor {
        let mut h = x.clone();
        for conv in &self.enc {
            h = conv.forward(ps, &h).relu().avg_pool2();
        }
        self.enc_fc.forward(ps, &h.global_avg_pool()).relu()
    }

    fn const_leaves(&self) -> LeafSet {
        LeafSet {
            tensors: self
                .store
                .entries()
                .iter()
                .map(|e| Tensor::constant(e.value.clone()))
                .collect(),
        }
    }

    /// Evaluation-mode encoding of a single image.
    pub fn encode_image(&self, image: &PixelGrid) -> Result<VisualFeature> {
        let ps = self.const_leaves();
        let x = self.image_batch(&[image])?;
        let v = self.encode(&ps, &x).value();
        let feature = VisualFeature(v.iter().cloned().collect());
        debug_assert!(feature.is_finite());
        Ok(feature)
    }

    /// One sentence-recurrence step: next state, stop logit, topic vector.
    pub(crate) fn sentence_step(
        &self,
        ps: &LeafSet,
        visual: &Tensor,
        state: &LstmState,
    ) -> (LstmState, Tensor, Tensor) {
        let next = self.sent_lstm.step(ps, visual, state);
        let stop_logit = self.stop_fc.forward(ps, &next.h);
        let topic = self.topic_fc.forward(ps, &next.h).tanh();
        (next, stop_logit, topic)
    }

    /// One word-recurrence step given the previous token id.
    pub(crate) fn word_step(
        &self,
        ps: &LeafSet,
        prev_token: u32,
        state: &LstmState,
    ) -> (LstmState, Tensor) {
        let x = self.word_embed.forward(ps, &[prev_token as usize]);
        let next = self.word_lstm.step(ps, &x, state);
        let logits = self.out_fc.forward(ps, &next.h);
        (next, logits)
    }

    /// Greedy decoding. The sentence recurrence runs for at most
    /// `max_sentences` steps and halts when the stop probability crosses
    /// the threshold (never before emitting the first sentence); the word
    /// recurrence emits greedily until END or the word cap.
    pub fn generate_report(&self, image: &PixelGrid, vocab: &Vocabulary) -> Result<TokenizedReport> {
        Ok(self.generate_report_traced(image, vocab)?.0)
    }

    /// As `generate_report`, also returning the word distribution emitted
    /// at every decoding step (used to verify they are distributions).
    pub fn generate_report_traced(
        &self,
        image: &PixelGrid,
        vocab: &Vocabulary,
    ) -> Result<(TokenizedReport, Vec<Vec<f64>>)> {
        self.check_vocabulary(vocab)?;
        let ps = self.const_leaves();
        let x = self.image_batch(&[image])?;
        let visual = self.encode(&ps, &x);

        let mut sentences: Vec<Vec<u32>> = Vec::new();
        let mut distributions: Vec<Vec<f64>> = Vec::new();
        let mut sent_state = LstmState::zeros(1, self.config.sentence_state_dim);
        for sentence_idx in 0..self.config.max_sentences {
            let (next, stop_logit, topic) = self.sentence_step(&ps, &visual, &sent_state);
            sent_state = next;
            let p_stop = crate::nn::Tensor::sigmoid(&stop_logit).value()[[0, 0]];
            if sentence_idx > 0 && p_stop > self.config.stop_threshold {
                break;
            }
            let mut word_state = LstmState {
                h: topic,
                c: LstmState::zeros(1, self.config.word_state_dim).c,
            };
            let mut sentence = Vec::new();
            let mut prev = START;
            for _ in 0..self.config.max_words_per_sentence {
                let (next, logits) = self.word_step(&ps, prev, &word_state);
                word_state = next;
                let mut row: Vec<f64> = logits.value().iter().cloned().collect();
                distributions.push(softmax(&row));
                // never emit padding or a start marker
                row[PAD as usize] = f64::NEG_INFINITY;
                row[START as usize] = f64::NEG_INFINITY;
                let mut best = 0usize;
                for (i, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = i;
                    }
                }
                let token = best as u32;
                if token == END {
                    break;
                }
                sentence.push(token);
                prev = token;
            }
            sentence.push(END);
            sentences.push(sentence);
        }
        Ok((TokenizedReport { sentences }, distributions))
    }
}
