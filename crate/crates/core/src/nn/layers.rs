//! Layer building blocks over a [`ParamStore`].
//!
//! Layers hold parameter ids, not values; a forward pass takes the
//! [`LeafSet`] built from the store for the current step.

use rand_chacha::ChaCha8Rng;

use super::params::{InitSpec, LeafSet, ParamId, ParamStore};
use super::tensor::Tensor;

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Linear {
    pub w: ParamId,
    pub b: ParamId,
}

impl Linear {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w = store.add(
            &format!("{name}.w"),
            group,
            &[fan_in, fan_out],
            InitSpec::XavierUniform { fan_in, fan_out },
            rng,
        );
        let b = store.add(&format!("{name}.b"), group, &[fan_out], InitSpec::Zeros, rng);
        Linear { w, b }
    }

    /// (B, fan_in) -> (B, fan_out)
    pub fn forward(&self, ps: &LeafSet, x: &Tensor) -> Tensor {
        x.matmul(ps.get(self.w)).add_row_bias(ps.get(self.b))
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Conv2d {
    pub w: ParamId,
    pub b: ParamId,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: &str,
        in_ch: usize,
        out_ch: usize,
        k: usize,
        stride: usize,
        pad: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let fan_in = in_ch * k * k;
        let fan_out = out_ch * k * k;
        let w = store.add(
            &format!("{name}.w"),
            group,
            &[out_ch, in_ch, k, k],
            InitSpec::XavierUniform { fan_in, fan_out },
            rng,
        );
        let b = store.add(&format!("{name}.b"), group, &[out_ch], InitSpec::Zeros, rng);
        Conv2d { w, b, stride, pad }
    }

    pub fn forward(&self, ps: &LeafSet, x: &Tensor) -> Tensor {
        x.conv2d(ps.get(self.w), ps.get(self.b), self.stride, self.pad)
    }
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct Embedding {
    pub table: ParamId,
}

impl Embedding {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: &str,
        vocab: usize,
        dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let table = store.add(
            &format!("{name}.table"),
            group,
            &[vocab, dim],
            InitSpec::Normal { std: 0.1 },
            rng,
        );
        Embedding { table }
    }

    /// token ids -> (T, dim)
    pub fn forward(&self, ps: &LeafSet, ids: &[usize]) -> Tensor {
        ps.get(self.table).gather_rows(ids)
    }
}

/// Hidden and cell state of one LSTM step.
pub struct LstmState {
    pub h: Tensor,
    pub c: Tensor,
}

impl LstmState {
    pub fn zeros(batch: usize, hidden: usize) -> LstmState {
        let z = ndarray::Array2::<f64>::zeros((batch, hidden)).into_dyn();
        LstmState {
            h: Tensor::constant(z.clone()),
            c: Tensor::constant(z),
        }
    }
}

/// A single LSTM cell with per-gate weight matrices. The forget-gate bias
/// starts at one.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct LstmCell {
    wx_i: ParamId,
    wh_i: ParamId,
    b_i: ParamId,
    wx_f: ParamId,
    wh_f: ParamId,
    b_f: ParamId,
    wx_g: ParamId,
    wh_g: ParamId,
    b_g: ParamId,
    wx_o: ParamId,
    wh_o: ParamId,
    b_o: ParamId,
}

impl LstmCell {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        group: &str,
        input: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let gate_w = |store: &mut ParamStore, rng: &mut ChaCha8Rng, tag: &str, fan_in: usize| {
            store.add(
                &format!("{name}.{tag}"),
                group,
                &[fan_in, hidden],
                InitSpec::XavierUniform {
                    fan_in,
                    fan_out: hidden,
                },
                rng,
            )
        };
        let wx_i = gate_w(store, rng, "wx_i", input);
        let wh_i = gate_w(store, rng, "wh_i", hidden);
        let b_i = store.add(&format!("{name}.b_i"), group, &[hidden], InitSpec::Zeros, rng);
        let wx_f = gate_w(store, rng, "wx_f", input);
        let wh_f = gate_w(store, rng, "wh_f", hidden);
        let b_f = store.add(&format!("{name}.b_f"), group, &[hidden], InitSpec::Ones, rng);
        let wx_g = gate_w(store, rng, "wx_g", input);
        let wh_g = gate_w(store, rng, "wh_g", hidden);
        let b_g = store.add(&format!("{name}.b_g"), group, &[hidden], InitSpec::Zeros, rng);
        let wx_o = gate_w(store, rng, "wx_o", input);
        let wh_o = gate_w(store, rng, "wh_o", hidden);
        let b_o = store.add(&format!("{name}.b_o"), group, &[hidden], InitSpec::Zeros, rng);
        LstmCell {
            wx_i,
            wh_i,
            b_i,
            wx_f,
            wh_f,
            b_f,
            wx_g,
            wh_g,
            b_g,
            wx_o,
            wh_o,
            b_o,
        }
    }

    pub fn step(&self, ps: &LeafSet, x: &Tensor, state: &LstmState) -> LstmState {
        let gate = |wx: ParamId, wh: ParamId, b: ParamId| {
            x.matmul(ps.get(wx))
                .add(&state.h.matmul(ps.get(wh)))
                .add_row_bias(ps.get(b))
        };
        let i = gate(self.wx_i, self.wh_i, self.b_i).sigmoid();
        let f = gate(self.wx_f, self.wh_f, self.b_f).sigmoid();
        let g = gate(self.wx_g, self.wh_g, self.b_g).tanh();
        let o = gate(self.wx_o, self.wh_o, self.b_o).sigmoid();
        let c = f.mul(&state.c).add(&i.mul(&g));
        let h = o.mul(&c.tanh());
        LstmState { h, c }
    }
}
