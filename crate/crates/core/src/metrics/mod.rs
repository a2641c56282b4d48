//! Quantitative metrics: BLEU-1..4, ROUGE-L, top-k label agreement,
//! Precision@k / Recall@k, KL divergence, and per-label accuracy.
//!
//! All functions here are pure; the [`MetricsBundle`] is the persisted
//! record an evaluation run writes to disk.

mod agreement;
mod nlg;

pub use agreement::{
    aggregate_top_k, kl_divergence, per_label_accuracy, precision_at_k, recall_at_k, top_k_common,
};
pub use nlg::{bleu_n, rouge_l};

use std::collections::BTreeMap;

use crate::classifiers::{LabelScores, NUM_LABELS};
use crate::error::Result;

pub const METRICS_SCHEMA_VERSION: u32 = 1;

/// Persisted evaluation record.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct MetricsBundle {
    pub schema_version: u32,
    /// n -> mean sentence-level BLEU-n (keys "1".."4").
    pub bleu: BTreeMap<String, f64>,
    /// ROUGE-L F1, mean over pairs.
    pub rouge: f64,
    /// k -> mean top-k common-label count.
    pub top_k: BTreeMap<String, f64>,
    pub precision_at_k: BTreeMap<String, f64>,
    pub recall_at_k: BTreeMap<String, f64>,
    /// Mean KL divergence over pairs, natural log.
    pub kl_mean: f64,
    pub per_label_accuracy: Vec<f64>,
    pub pair_count: usize,
    /// How the aggregate scores were formed (e.g. sentence-mean BLEU).
    pub notes: String,
}

impl MetricsBundle {
    pub fn empty() -> MetricsBundle {
        MetricsBundle {
            schema_version: METRICS_SCHEMA_VERSION,
            bleu: BTreeMap::new(),
            rouge: 0.0,
            top_k: BTreeMap::new(),
            precision_at_k: BTreeMap::new(),
            recall_at_k: BTreeMap::new(),
            kl_mean: 0.0,
            per_label_accuracy: vec![0.0; NUM_LABELS],
            pair_count: 0,
            notes: String::new(),
        }
    }

    /// Flat CSV: a header line and one value row.
    pub fn csv(&self) -> String {
        let mut headers = Vec::new();
        let mut values = Vec::new();
        for (k, v) in &self.bleu {
            headers.push(format!("bleu_{k}"));
            values.push(format!("{v}"));
        }
        headers.push("rouge".into());
        values.push(format!("{}", self.rouge));
        for (k, v) in &self.top_k {
            headers.push(format!("top_{k}"));
            values.push(format!("{v}"));
        }
        for (k, v) in &self.precision_at_k {
            headers.push(format!("precision_at_{k}"));
            values.push(format!("{v}"));
        }
        for (k, v) in &self.recall_at_k {
            headers.push(format!("recall_at_{k}"));
            values.push(format!("{v}"));
        }
        headers.push("kl_mean".into());
        values.push(format!("{}", self.kl_mean));
        for (i, v) in self.per_label_accuracy.iter().enumerate() {
            headers.push(format!("acc_label_{}", i + 1));
            values.push(format!("{v}"));
        }
        headers.push("pair_count".into());
        values.push(format!("{}", self.pair_count));
        format!("{}\n{}\n", headers.join(","), values.join(","))
    }

    /// Fills the top-k family (top-k, Precision@k, Recall@k for each k)
    /// and the mean KL divergence from classifier score pairs.
    pub fn with_agreement(
        mut self,
        pairs: &[(LabelScores, LabelScores)],
        ks: &[usize],
    ) -> Result<MetricsBundle> {
        for &k in ks {
            let mean = aggregate_top_k(pairs, k)?;
            self.top_k.insert(k.to_string(), mean);
            self.precision_at_k.insert(k.to_string(), precision_at_k(mean, k));
            self.recall_at_k.insert(k.to_string(), recall_at_k(mean));
        }
        self.kl_mean = pairs
            .iter()
            .map(|(r, g)| kl_divergence(r, g))
            .sum::<f64>()
            / pairs.len() as f64;
        self.pair_count = pairs.len();
        Ok(self)
    }

    /// No NaN/Inf anywhere.
    pub fn is_finite(&self) -> bool {
        self.bleu.values().all(|v| v.is_finite())
            && self.rouge.is_finite()
            && self.top_k.values().all(|v| v.is_finite())
            && self.precision_at_k.values().all(|v| v.is_finite())
            && self.recall_at_k.values().all(|v| v.is_finite())
            && self.kl_mean.is_finite()
            && self.per_label_accuracy.iter().all(|v| v.is_finite())
    }
}
