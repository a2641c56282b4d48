//! Explanation protocols: Grad-CAM saliency maps, the trust evaluation
//! (does the prototypical-image round trip preserve what the naive Bayes
//! classifier reads from the report?), and the faithfulness evaluation
//! (do the explanations collapse when the report model's weights are
//! randomized?).

mod gradcam;
mod protocols;

pub use gradcam::{gradcam, render_overlay, SaliencyMap};
pub use protocols::{
    faithfulness_evaluation, faithfulness_verdict, regeneration_label_pairs, trust_evaluation,
    CycleOracle, ModelOracles, PassthroughOracle,
};

use std::collections::BTreeMap;

use crate::checkpoint::Checkpoint;
use crate::metrics::MetricsBundle;

/// Persisted outcome of one protocol run.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ProtocolReport {
    pub protocol: String,
    /// Seeds of every stochastic step involved.
    pub seeds: Vec<u64>,
    pub baseline: MetricsBundle,
    /// Present for faithfulness: the weight-randomized counterpart.
    pub treated: Option<MetricsBundle>,
    pub summary: BTreeMap<String, f64>,
    pub verdict_passed: bool,
    pub verdict_detail: String,
}

/// Resamples every parameter of a checkpoint from its recorded
/// initialization distribution. Shapes and metadata are unchanged.
pub fn randomize_weights(checkpoint: &Checkpoint, seed: u64) -> Checkpoint {
    let mut out = checkpoint.clone();
    out.store.randomize(seed);
    out
}
