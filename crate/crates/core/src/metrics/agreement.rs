//! Label-agreement metrics between real and generated images.

use crate::classifiers::{LabelScores, LabelSet, NUM_LABELS};
use crate::error::{Error, Result};

/// Indices of the top-k scores, ranked by descending score with ties broken
/// by ascending label index.
fn top_k_indices(scores: &LabelScores, k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..NUM_LABELS).collect();
    order.sort_by(|&a, &b| {
        scores.0[b]
            .partial_cmp(&scores.0[a])
            .expect("scores are finite")
            .then(a.cmp(&b))
    });
    order.truncate(k);
    order
}

/// Number of labels common to the top-k of both score vectors.
pub fn top_k_common(real: &LabelScores, generated: &LabelScores, k: usize) -> usize {
    assert!((1..=NUM_LABELS).contains(&k), "k must be in 1..=14");
    let a = top_k_indices(real, k);
    let b = top_k_indices(generated, k);
    a.iter().filter(|i| b.contains(i)).count()
}

/// Mean top-k common count over `(real, generated)` pairs.
pub fn aggregate_top_k(pairs: &[(LabelScores, LabelScores)], k: usize) -> Result<f64> {
    if pairs.is_empty() {
        return Err(Error::Data("aggregate_top_k over no pairs".into()));
    }
    let sum: usize = pairs.iter().map(|(r, g)| top_k_common(r, g, k)).sum();
    Ok(sum as f64 / pairs.len() as f64)
}

pub fn precision_at_k(mean_top_k: f64, k: usize) -> f64 {
    assert!(k >= 1);
    mean_top_k / k as f64
}

pub fn recall_at_k(mean_top_k: f64) -> f64 {
    mean_top_k / NUM_LABELS as f64
}

/// KL(p^ || q^) with the score vectors normalized to distributions
/// (uniform when a vector sums to zero), q floored at 1e-12, natural log.
pub fn kl_divergence(p: &LabelScores, q: &LabelScores) -> f64 {
    let normalize = |s: &LabelScores| -> [f64; NUM_LABELS] {
        let sum: f64 = s.0.iter().sum();
        if sum <= 0.0 {
            [1.0 / NUM_LABELS as f64; NUM_LABELS]
        } else {
            let mut out = s.0;
            for v in &mut out {
                *v /= sum;
            }
            out
        }
    };
    let ph = normalize(p);
    let qh = normalize(q);
    let mut kl = 0.0;
    for i in 0..NUM_LABELS {
        if ph[i] > 0.0 {
            kl += ph[i] * (ph[i] / qh[i].max(1e-12)).ln();
        }
    }
    kl.max(0.0)
}

/// Per-label fraction of matching indicators between predictions and truth.
pub fn per_label_accuracy(predicted: &[LabelSet], truth: &[LabelSet]) -> Result<[f64; NUM_LABELS]> {
    if predicted.len() != truth.len() {
        return Err(Error::Shape(format!(
            "per_label_accuracy length mismatch: {} vs {}",
            predicted.len(),
            truth.len()
        )));
    }
    if predicted.is_empty() {
        return Err(Error::Data("per_label_accuracy over no studies".into()));
    }
    let mut acc = [0.0f64; NUM_LABELS];
    for (p, t) in predicted.iter().zip(truth.iter()) {
        for i in 0..NUM_LABELS {
            if p.0[i] == t.0[i] {
                acc[i] += 1.0;
            }
        }
    }
    for v in &mut acc {
        *v /= predicted.len() as f64;
    }
    Ok(acc)
}
