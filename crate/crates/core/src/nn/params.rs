//! Named parameter storage shared by all models.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// Initialization distribution recorded per parameter so that weight
/// randomization can resample from the same family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum InitSpec {
    Zeros,
    Ones,
    /// N(0, std^2)
    Normal { std: f64 },
    /// U(-bound, bound) with bound = sqrt(6 / (fan_in + fan_out))
    XavierUniform { fan_in: usize, fan_out: usize },
}

impl InitSpec {
    pub fn sample(&self, shape: &[usize], rng: &mut ChaCha8Rng) -> ArrayD<f64> {
        match *self {
            InitSpec::Zeros => ArrayD::zeros(IxDyn(shape)),
            InitSpec::Ones => ArrayD::ones(IxDyn(shape)),
            InitSpec::Normal { std } => {
                ArrayD::from_shape_fn(IxDyn(shape), |_| std * gauss(rng))
            }
            InitSpec::XavierUniform { fan_in, fan_out } => {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                ArrayD::from_shape_fn(IxDyn(shape), |_| rng.gen_range(-bound..bound))
            }
        }
    }
}

/// Box-Muller transform; two uniforms per draw keeps the stream independent
/// of any library implementation details.
fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let u2: f64 = rng.gen_range(0.0..1.0);
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub group: String,
    pub init: InitSpec,
    pub value: ArrayD<f64>,
}

/// Ordered collection of named parameter arrays. Order is fixed at model
/// construction, which keeps optimizers, checkpoints, and randomization
/// deterministic.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new() }
    }

    pub fn add(
        &mut self,
        name: &str,
        group: &str,
        shape: &[usize],
        init: InitSpec,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        let value = init.sample(shape, rng);
        self.entries.push(ParamEntry {
            name: name.to_string(),
            group: group.to_string(),
            init,
            value,
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn value(&self, id: ParamId) -> &ArrayD<f64> {
        &self.entries[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, value: ArrayD<f64>) {
        assert_eq!(self.entries[id.0].value.shape(), value.shape());
        self.entries[id.0].value = value;
    }

    /// Total number of scalar entries across all parameters.
    pub fn entry_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    /// Indices of all parameters in the given groups.
    pub fn group_indices(&self, groups: &[&str]) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| groups.contains(&e.group.as_str()))
            .map(|(i, _)| i)
            .collect()
    }

    /// Fresh graph leaves, one per parameter, in store order.
    pub fn leaves(&self) -> Vec<Tensor> {
        self.entries
            .iter()
            .map(|e| Tensor::leaf(e.value.clone()))
            .collect()
    }

    /// Collects leaf gradients after a backward pass.
    pub fn grads(leaves: &[Tensor]) -> Vec<ArrayD<f64>> {
        leaves.iter().map(|t| t.grad()).collect()
    }

    /// Resamples every parameter from its recorded init distribution.
    pub fn randomize(&mut self, seed: u64) {
        use rand::SeedableRng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for e in &mut self.entries {
            e.value = e.init.sample(e.value.shape(), &mut rng);
        }
    }

    /// FNV-1a hash over the exact parameter bytes of the given groups;
    /// changes iff any bit of any value changes.
    pub fn group_hash(&self, groups: &[&str]) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for idx in self.group_indices(groups) {
            for &v in self.entries[idx].value.iter() {
                for byte in v.to_le_bytes() {
                    h ^= byte as u64;
                    h = h.wrapping_mul(0x100000001b3);
                }
            }
        }
        h
    }
}

/// Leaf tensors paired with their store for ergonomic lookup in layer code.
pub struct LeafSet {
    pub tensors: Vec<Tensor>,
}

impl LeafSet {
    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }
}

impl ParamStore {
    pub fn leaf_set(&self) -> LeafSet {
        LeafSet {
            tensors: self.leaves(),
        }
    }
}
