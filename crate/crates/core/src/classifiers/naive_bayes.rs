//! Per-label Bernoulli naive Bayes over bag-of-tokens features with
//! Laplace smoothing (alpha = 1): fourteen independent binary classifiers
//! sharing one token vocabulary.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use crate::classifiers::{LabelSet, NUM_LABELS};
use crate::data::{TokenizedReport, Vocabulary};
use crate::error::{Error, Result};

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
struct LabelModel {
    n_pos: usize,
    n_neg: usize,
    /// log theta(token | pos) per feature index
    log_theta_pos: Vec<f64>,
    log_comp_pos: Vec<f64>,
    log_theta_neg: Vec<f64>,
    log_comp_neg: Vec<f64>,
}

impl LabelModel {
    /// Joint log-likelihoods (log prior + log evidence) for the positive
    /// and negative class. `None` when the training column was single-class.
    fn joint_log(&self, present: &BTreeSet<usize>) -> Option<(f64, f64)> {
        if self.n_pos == 0 || self.n_neg == 0 {
            return None;
        }
        let n = (self.n_pos + self.n_neg) as f64;
        // start from the all-absent baseline, then swap in present features
        let mut lp = (self.n_pos as f64 / n).ln() + self.log_comp_pos.iter().sum::<f64>();
        let mut ln = (self.n_neg as f64 / n).ln() + self.log_comp_neg.iter().sum::<f64>();
        for &f in present {
            lp += self.log_theta_pos[f] - self.log_comp_pos[f];
            ln += self.log_theta_neg[f] - self.log_comp_neg[f];
        }
        Some((lp, ln))
    }
}

/// Naive Bayes report classifier; immutable after training.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ReportClassifier {
    /// token -> feature index
    vocab: BTreeMap<String, usize>,
    labels: Vec<LabelModel>,
}

impl ReportClassifier {
    /// Trains on `(tokens, truth)` documents. Errors on an empty corpus.
    pub fn train(docs: &[(Vec<String>, LabelSet)]) -> Result<ReportClassifier> {
        if docs.is_empty() {
            return Err(Error::Data("naive Bayes: empty training corpus".into()));
        }
        let mut vocab: BTreeMap<String, usize> = BTreeMap::new();
        for (tokens, _) in docs {
            for t in tokens {
                let next = vocab.len();
                vocab.entry(t.clone()).or_insert(next);
            }
        }
        let nf = vocab.len();
        let feature_sets: Vec<BTreeSet<usize>> = docs
            .iter()
            .map(|(tokens, _)| tokens.iter().filter_map(|t| vocab.get(t)).copied().collect())
            .collect();

        let mut labels = Vec::with_capacity(NUM_LABELS);
        for l in 0..NUM_LABELS {
            let mut n_pos = 0usize;
            let mut n_neg = 0usize;
            let mut count_pos = vec![0usize; nf];
            let mut count_neg = vec![0usize; nf];
            for ((_, truth), feats) in docs.iter().zip(feature_sets.iter()) {
                if truth.0[l] {
                    n_pos += 1;
                    for &f in feats {
                        count_pos[f] += 1;
                    }
                } else {
                    n_neg += 1;
                    for &f in feats {
                        count_neg[f] += 1;
                    }
                }
            }
            let smooth = |count: &[usize], n: usize| -> (Vec<f64>, Vec<f64>) {
                let mut theta = Vec::with_capacity(nf);
                let mut comp = Vec::with_capacity(nf);
                for &c in count {
                    let t = (c as f64 + 1.0) / (n as f64 + 2.0);
                    theta.push(t.ln());
                    comp.push((1.0 - t).ln());
                }
                (theta, comp)
            };
            let (log_theta_pos, log_comp_pos) = smooth(&count_pos, n_pos);
            let (log_theta_neg, log_comp_neg) = smooth(&count_neg, n_neg);
            labels.push(LabelModel {
                n_pos,
                n_neg,
                log_theta_pos,
                log_comp_pos,
                log_theta_neg,
                log_comp_neg,
            });
        }
        Ok(ReportClassifier { vocab, labels })
    }

    fn features(&self, tokens: &[String]) -> BTreeSet<usize> {
        tokens
            .iter()
            .filter_map(|t| self.vocab.get(t))
            .copied()
            .collect()
    }

    /// 14 binary decisions by posterior comparison. A single-class label
    /// column always predicts its majority class; exact ties resolve to
    /// absent.
    pub fn classify_tokens(&self, tokens: &[String]) -> LabelSet {
        let present = self.features(tokens);
        let mut out = [false; NUM_LABELS];
        for (l, model) in self.labels.iter().enumerate() {
            out[l] = match model.joint_log(&present) {
                None => model.n_pos > model.n_neg,
                Some((lp, ln)) => lp > ln,
            };
        }
        LabelSet(out)
    }

    /// Classifies a tokenized report via its vocabulary.
    pub fn classify_report(&self, report: &TokenizedReport, vocab: &Vocabulary) -> LabelSet {
        self.classify_tokens(&report.content_tokens(vocab))
    }

    /// P(label = 1 | tokens); 0 or 1 for single-class columns.
    pub fn posterior(&self, tokens: &[String], label: usize) -> f64 {
        let present = self.features(tokens);
        match self.labels[label].joint_log(&present) {
            None => {
                if self.labels[label].n_pos > 0 {
                    1.0
                } else {
                    0.0
                }
            }
            Some((lp, ln)) => {
                let m = lp.max(ln);
                let ep = (lp - m).exp();
                let en = (ln - m).exp();
                ep / (ep + en)
            }
        }
    }

    /// Persists the log-prior and log-likelihood tables as JSON.
    pub fn save(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Data(format!("classifier serialization: {e}")))?;
        std::fs::write(path, json).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<ReportClassifier> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("classifier parse: {e}")))
    }
}
