//! Teacher-forced training of the report generator.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{StudyPair, END, START};
use crate::error::{Error, Result};
use crate::nn::{Adam, LeafSet, LstmState, ParamStore, Tensor};
use crate::report_gen::model::{ReportGenModel, GROUP_DECODER, GROUP_ENCODER};

/// Builds the training loss (word cross-entropy plus weighted stop loss)
/// for a set of pairs on the given leaves. Shared by the optimizer loop
/// and the finite-difference gradient checks.
pub fn build_loss(model: &ReportGenModel, ps: &LeafSet, pairs: &[&StudyPair]) -> Result<Tensor> {
    let images: Vec<&crate::grid::PixelGrid> = pairs.iter().map(|p| &p.image).collect();
    let x = model.image_batch(&images)?;
    let visual = model.encode(ps, &x);

    let mut word_logits: Vec<Tensor> = Vec::new();
    let mut word_targets: Vec<usize> = Vec::new();
    let mut stop_logits: Vec<Tensor> = Vec::new();
    let mut stop_targets: Vec<f64> = Vec::new();

    for (i, pair) in pairs.iter().enumerate() {
        let v = visual.row(i);
        let mut sentences: Vec<Vec<u32>> = pair
            .tokens
            .sentences
            .iter()
            .take(model.config.max_sentences)
            .cloned()
            .collect();
        for s in &mut sentences {
            if s.len() > model.config.max_words_per_sentence {
                s.truncate(model.config.max_words_per_sentence);
                *s.last_mut().unwrap() = END;
            }
        }
        let n_sentences = sentences.len();
        let mut sent_state = LstmState::zeros(1, model.config.sentence_state_dim);
        for sentence in &sentences {
            let (next, stop_logit, topic) = model.sentence_step(ps, &v, &sent_state);
            sent_state = next;
            stop_logits.push(stop_logit);
            stop_targets.push(0.0);

            let mut word_state = LstmState {
                h: topic,
                c: LstmState::zeros(1, model.config.word_state_dim).c,
            };
            let mut prev = START;
            for &target in sentence {
                let (next, logits) = model.word_step(ps, prev, &word_state);
                word_state = next;
                word_logits.push(logits);
                word_targets.push(target as usize);
                prev = target;
            }
        }
        // one extra step learns to emit the stop signal
        if n_sentences < model.config.max_sentences {
            let (next, stop_logit, _) = model.sentence_step(ps, &v, &sent_state);
            sent_state = next;
            stop_logits.push(stop_logit);
            stop_targets.push(1.0);
        }
    }

    let word_loss = Tensor::concat(0, &word_logits).softmax_cross_entropy(&word_targets);
    let stops = Tensor::concat(0, &stop_logits);
    let stop_array =
        ndarray::ArrayD::from_shape_vec(ndarray::IxDyn(&[stop_targets.len(), 1]), stop_targets)
            .unwrap();
    let stop_loss = stops.bce_with_logits(&stop_array);
    Ok(word_loss.add(&stop_loss.scale(model.config.lambda_stop)))
}

/// Minimizes word cross-entropy plus stop loss with separate encoder and
/// decoder learning rates. Returns the per-epoch mean loss trace.
pub fn train_report_generator(
    model: &mut ReportGenModel,
    train: &[StudyPair],
    epochs: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if train.is_empty() {
        return Err(Error::Data("report generator: empty train set".into()));
    }
    let mut opt_enc = Adam::new(
        &model.store,
        &[GROUP_ENCODER],
        model.config.lr_encoder,
        0.9,
        0.999,
    );
    let mut opt_dec = Adam::new(
        &model.store,
        &[GROUP_DECODER],
        model.config.lr_decoder,
        0.9,
        0.999,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut trace = Vec::with_capacity(epochs);
    let mut order: Vec<usize> = (0..train.len()).collect();
    for _epoch in 0..epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(model.config.batch_size) {
            let pairs: Vec<&StudyPair> = chunk.iter().map(|&i| &train[i]).collect();
            let ps = model.store.leaf_set();
            let loss = build_loss(model, &ps, &pairs)?;
            loss.backward();
            let value = loss.scalar();
            if !value.is_finite() {
                return Err(Error::Data(format!("non-finite training loss {value}")));
            }
            let grads = ParamStore::grads(&ps.tensors);
            opt_enc.step(&mut model.store, &grads);
            opt_dec.step(&mut model.store, &grads);
            epoch_loss += value;
            batches += 1;
        }
        trace.push(epoch_loss / batches as f64);
        model.epochs_trained += 1;
    }
    Ok(trace)
}
