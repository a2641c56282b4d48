//! Graph nodes and differentiable operations.

use std::cell::{Cell, RefCell};
use std::collections::HashSet;
use std::rc::Rc;

use ndarray::{ArrayD, ArrayViewD, Axis, Ix1, Ix2, Ix4, IxDyn};

thread_local! {
    static NEXT_ID: Cell<u64> = const { Cell::new(0) };
}

fn fresh_id() -> u64 {
    NEXT_ID.with(|c| {
        let id = c.get();
        c.set(id + 1);
        id
    })
}

type BackFn = Box<dyn Fn(&Node)>;

pub(crate) struct Node {
    id: u64,
    value: RefCell<ArrayD<f64>>,
    grad: RefCell<Option<ArrayD<f64>>>,
    parents: Vec<Tensor>,
    backward: Option<BackFn>,
    tracked: bool,
}

/// A node in the autodiff graph. Cloning is shallow; the underlying value is
/// shared. Ops that mix tracked and untracked inputs only record gradients
/// for the tracked side.
#[derive(Clone)]
pub struct Tensor {
    inner: Rc<Node>,
}

fn accum(target: &Tensor, g: ArrayD<f64>) {
    if !target.inner.tracked {
        return;
    }
    let mut slot = target.inner.grad.borrow_mut();
    match slot.as_mut() {
        Some(existing) => *existing += &g,
        None => *slot = Some(g),
    }
}

impl Tensor {
    fn mk(value: ArrayD<f64>, parents: Vec<Tensor>, backward: Option<BackFn>) -> Tensor {
        let tracked = parents.iter().any(|p| p.inner.tracked);
        Tensor {
            inner: Rc::new(Node {
                id: fresh_id(),
                value: RefCell::new(value),
                grad: RefCell::new(None),
                parents,
                backward: if tracked { backward } else { None },
                tracked,
            }),
        }
    }

    /// A trainable leaf: gradients accumulate here during `backward`.
    pub fn leaf(value: ArrayD<f64>) -> Tensor {
        Tensor {
            inner: Rc::new(Node {
                id: fresh_id(),
                value: RefCell::new(value),
                grad: RefCell::new(None),
                parents: Vec::new(),
                backward: None,
                tracked: true,
            }),
        }
    }

    /// An input constant: no gradient is recorded through it.
    pub fn constant(value: ArrayD<f64>) -> Tensor {
        Tensor {
            inner: Rc::new(Node {
                id: fresh_id(),
                value: RefCell::new(value),
                grad: RefCell::new(None),
                parents: Vec::new(),
                backward: None,
                tracked: false,
            }),
        }
    }

    pub fn value(&self) -> ArrayD<f64> {
        self.inner.value.borrow().clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.inner.value.borrow().shape().to_vec()
    }

    /// Value of a zero-dim (or single-element) tensor.
    pub fn scalar(&self) -> f64 {
        let v = self.inner.value.borrow();
        debug_assert_eq!(v.len(), 1);
        *v.iter().next().expect("scalar tensor is empty")
    }

    /// Accumulated gradient of a leaf after `backward`; zeros if untouched.
    pub fn grad(&self) -> ArrayD<f64> {
        let slot = self.inner.grad.borrow();
        match slot.as_ref() {
            Some(g) => g.clone(),
            None => ArrayD::zeros(self.inner.value.borrow().raw_dim()),
        }
    }

    /// Cuts the graph: same value, no parents.
    pub fn detach(&self) -> Tensor {
        Tensor::constant(self.value())
    }

    /// Runs reverse-mode accumulation from this (scalar) node.
    pub fn backward(&self) {
        {
            let mut slot = self.inner.grad.borrow_mut();
            let dim = self.inner.value.borrow().raw_dim();
            *slot = Some(ArrayD::ones(dim));
        }
        // Iterative post-order DFS; reverse gives topological order.
        let mut order: Vec<Tensor> = Vec::new();
        let mut seen: HashSet<u64> = HashSet::new();
        let mut stack: Vec<(Tensor, usize)> = vec![(self.clone(), 0)];
        seen.insert(self.inner.id);
        while let Some((node, child_idx)) = stack.pop() {
            if child_idx < node.inner.parents.len() {
                let parent = node.inner.parents[child_idx].clone();
                stack.push((node, child_idx + 1));
                if parent.inner.tracked && seen.insert(parent.inner.id) {
                    stack.push((parent, 0));
                }
            } else {
                order.push(node);
            }
        }
        for node in order.iter().rev() {
            // a node may have received no gradient at all (e.g. it only
            // feeds a zero-weighted term); its contribution is zero
            if node.inner.grad.borrow().is_none() {
                continue;
            }
            if let Some(f) = &node.inner.backward {
                f(&node.inner);
            }
        }
    }

    // ---- elementwise ----

    pub fn add(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.shape(), other.shape(), "add shape mismatch");
        let v = &*self.inner.value.borrow() + &*other.inner.value.borrow();
        Tensor::mk(
            v,
            vec![self.clone(), other.clone()],
            Some(Box::new(|node: &Node| {
                let g = node.grad.borrow().clone().unwrap();
                accum(&node.parents[0], g.clone());
                accum(&node.parents[1], g);
            })),
        )
    }

    pub fn sub(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.shape(), other.shape(), "sub shape mismatch");
        let v = &*self.inner.value.borrow() - &*other.inner.value.borrow();
        Tensor::mk(
            v,
            vec![self.clone(), other.clone()],
            Some(Box::new(|node: &Node| {
                let g = node.grad.borrow().clone().unwrap();
                accum(&node.parents[0], g.clone());
                accum(&node.parents[1], -g);
            })),
        )
    }

    pub fn mul(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.shape(), other.shape(), "mul shape mismatch");
        let v = &*self.inner.value.borrow() * &*other.inner.value.borrow();
        Tensor::mk(
            v,
            vec![self.clone(), other.clone()],
            Some(Box::new(|node: &Node| {
                let g = node.grad.borrow().clone().unwrap();
                let a = node.parents[0].inner.value.borrow();
                let b = node.parents[1].inner.value.borrow();
                accum(&node.parents[0], &g * &*b);
                accum(&node.parents[1], &g * &*a);
            })),
        )
    }

    pub fn scale(&self, k: f64) -> Tensor {
        let v = self.inner.value.borrow().mapv(|x| x * k);
        Tensor::mk(
            v,
            vec![self.clone()],
            Some(Box::new(move |node: &Node| {
                if k == 0.0 {
                    // exactly zero gradient; skipping keeps a zero-weighted
                    // term bit-identical to omitting it
                    return;
                }
                let g = node.grad.borrow().clone().unwrap();
                accum(&node.parents[0], g.mapv(|x| x * k));
            })),
        )
    }

    pub fn relu(&self) -> Tensor {
        let v = self.inner.value.borrow().mapv(|x| x.max(0.0));
        Tensor::mk(
            v,
            vec![self.clone()],
            Some(Box::new(|node: &Node| {
                let g = node.grad.borrow().clone().unwrap();
                let x = node.parents[0].inner.value.borrow();
                let mut dx = g;
                dx.zip_mut_with(&x, |gi, &xi| {
                    if xi <= 0.0 {
                        *gi = 0.0;
                    }
                });
                accum(&node.parents[0], dx);
            })),
        )
    }

    pub fn leaky_relu(&self, alpha: f64) -> Tensor {
        let v = self
            .inner
            .value
            .borrow()
            .mapv(|x| if x > 0.0 { x } else { alpha * x });
        Tensor::mk(
            v,
            vec![self.clone()],
            Some(Box::new(move |node: &Node| {
                let g = node.grad.borrow().clone().unwrap();
                let x = node.parents[0].inner.value.borrow();
                let mut dx = g;
                dx.zip_mut_with(&x, |gi, &xi| {
                    if xi <= 0.0 {
                        *gi *= alpha;
                    }
                });
                accum(&node.parents[0], dx);
            })),
        )
    }

    pub fn sigmoid(&self) -> Tensor {
        let v = self.inner.value.borrow().mapv(sigmoid_scalar);
        Tensor::mk(
            v,
            vec![self.clone()],
            Some(Box::new(|node: &Node| {
                let g = node.grad.borrow().clone().unwrap();
                let s = node.value.borrow();
                let mut dx = g;
                dx.zip_mut_with(&s, |gi, &si| *gi *= si * (1.0 - si));
                accum(&node.parents[0], dx);
            })),
        )
    }

    pub fn tanh(&self) -> Tensor {
        let v = self.inner.value.borrow().mapv(f64::tanh);
        Tensor::mk(
            v,
            vec![self.clone()],
            Some(Box::new(|node: &Node| {
                let g = node.grad.borrow().clone().unwrap();
                let t = node.value.borrow();
                let mut dx = g;
                dx.zip_mut_with(&t, |gi, &ti| *gi *= 1.0 - ti * ti);
                accum(&node.parents[0], dx);
            })),
        )
    }

    // ---- linear algebra ----

    /// (m,k) x (k,n) -> (m,n)
    pub fn matmul(&self, other: &Tensor) -> Tensor {
        let a = self.inner.value.borrow();
        let b = other.inner.value.borrow();
        let a2 = a.view().into_dimensionality::<Ix2>().expect("matmul lhs 2d");
        let b2 = b.view().into_dimensionality::<Ix2>().expect("matmul rhs 2d");
        assert_eq!(a2.ncols(), b2.nrows(), "matmul inner dim");
        let v = a2.dot(&b2).into_dyn();
        drop(a);
        drop(b);
        Tensor::mk(
            v,
            vec![self.clone(), other.clone()],
            Some(Box::new(|node: &Node| {
                let g = node.grad.borrow().clone().unwrap();
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let a = node.parents[0].inner.value.borrow();
                let b = node.parents[1].inner.value.borrow();
                let a2 = a.view().into_dimensionality::<Ix2>().unwrap();
                let b2 = b.view().into_dimensionality::<Ix2>().unwrap();
                let da = g2.dot(&b2.t()).into_dyn();
                let db = a2.t().dot(&g2).into_dyn();
                drop(a);
                drop(b);
                accum(&node.parents[0], da);
                accum(&node.parents[1], db);
            })),
        )
    }

    /// (B,F) + (F,) broadcast over rows.
    pub fn add_row_bias(&self, bias: &Tensor) -> Tensor {
        let x = self.inner.value.borrow();
        let b = bias.inner.value.borrow();
        let x2 = x.view().into_dimensionality::<Ix2>().expect("bias target 2d");
        let b1 = b.view().into_dimensionality::<Ix1>().expect("bias 1d");
        assert_eq!(x2.ncols(), b1.len(), "bias length");
        let v = (&x2 + &b1).into_dyn();
        drop(x);
        drop(b);
        Tensor::mk(
            v,
            vec![self.clone(), bias.clone()],
            Some(Box::new(|node: &Node| {
                let g = node.grad.borrow().clone().unwrap();
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let db = g2.sum_axis(Axis(0)).into_dyn();
                accum(&node.parents[0], g.clone());
                accum(&node.parents[1], db);
            })),
        )
    }

    /// Row `i` of a (B,F) matrix as a (1,F) tensor.
    pub fn row(&self, i: usize) -> Tensor {
        let x = self.inner.value.borrow();
        let x2 = x.view().into_dimensionality::<Ix2>().expect("row source 2d");
        let v = x2
            .row(i)
            .to_owned()
            .into_shape_with_order((1, x2.ncols()))
            .unwrap()
            .into_dyn();
        drop(x);
        Tensor::mk(
            v,
            vec![self.clone()],
            Some(Box::new(move |node: &Node| {
                let g = node.grad.borrow().clone().unwrap();
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let dim = node.parents[0].inner.value.borrow().raw_dim();
                let mut dx = ArrayD::<f64>::zeros(dim);
                {
                    let mut dx2 = dx.view_mut().into_dimensionality::<Ix2>().unwrap();
                    dx2.row_mut(i).assign(&g2.row(0));
                }
                accum(&node.parents[0], dx);
            })),
        )
    }

    /// Concatenates along an axis; all other dims must agree.
    pub fn concat(axis: usize, parts: &[Tensor]) -> Tensor {
        assert!(!parts.is_empty());
        let values: Vec<ArrayD<f64>> = parts.iter().map(|t| t.value()).collect();
        let views: Vec<ArrayViewD<f64>> = values.iter().map(|v| v.view()).collect();
        let v = ndarray::concatenate(Axis(axis), &views).expect("concat shapes");
        let sizes: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
        Tensor::mk(
            v,
            parts.to_vec(),
            Some(Box::new(move |node: &Node| {
                let g = node.grad.borrow().clone().unwrap();
                let mut offset = 0;
                for (i, &sz) in sizes.iter().enumerate() {
                    let slice = g
                        .slice_axis(Axis(axis), ndarray::Slice::from(offset..offset + sz))
                        .to_owned();
                    accum(&node.parents[i], slice);
                    offset += sz;
                }
            })),
        )
    }

    /// Row-major reshape (copies).
    pub fn reshape(&self, shape: &[usize]) -> Tensor {
        let v = self.inner.value.borrow();
        let flat: Vec<f64> = v.iter().cloned().collect();
        assert_eq!(flat.len(), shape.iter().product::<usize>(), "reshape size");
        let out = ArrayD::from_shape_vec(IxDyn(shape), flat).unwrap();
        drop(v);
        Tensor::mk(
            out,
            vec![self.clone()],
            Some(Box::new(|node: &Node| {
                let g = node.grad.borrow().clone().unwrap();
                let dim = node.parents[0].inner.value.borrow().raw_dim();
                let flat: Vec<f64> = g.iter().cloned().collect();
                let dx = ArrayD::from_shape_vec(dim, flat).unwrap();
                accum(&node.parents[0], dx);
            })),
        )
    }

    /// Picks rows of a (V,E) matrix: ids -> (T,E). Gradient scatter-adds.
    pub fn gather_rows(&self, ids: &[usize]) -> Tensor {
        let m = self.inner.value.borrow();
        let m2 = m.view().into_dimensionality::<Ix2>().expect("gather source 2d");
        let e = m2.ncols();
        let mut out = ndarray::Array2::<f64>::zeros((ids.len(), e));
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).assign(&m2.row(id));
        }
        drop(m);
        let ids_owned = ids.to_vec();
        Tensor::mk(
            out.into_dyn(),
            vec![self.clone()],
            Some(Box::new(move |node: &Node| {
                let g = node.grad.borrow().clone().unwrap();
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let dim = node.parents[0].inner.value.borrow().raw_dim();
                let mut dm = ArrayD::<f64>::zeros(dim);
                {
                    let mut dm2 = dm.view_mut().into_dimensionality::<Ix2>().unwrap();
                    for (r, &id) in ids_owned.iter().enumerate() {
                        let mut row = dm2.row_mut(id);
                        row += &g2.row(r);
                    }
                }
                accum(&node.parents[0], dm);
            })),
        )
    }

    /// Mean over axis 0 of a (T,E) matrix, keeping shape (1,E).
    pub fn mean_rows(&self) -> Tensor {
        let x = self.inner.value.borrow();
        let x2 = x.view().into_dimensionality::<Ix2>().expect("mean_rows 2d");
        let t = x2.nrows() as f64;
        let v = (x2.sum_axis(Axis(0)) / t)
            .into_shape_with_order((1, x2.ncols()))
            .unwrap()
            .into_dyn();
        drop(x);
        Tensor::mk(
            v,
            vec![self.clone()],
            Some(Box::new(|node: &Node| {
                let g = node.grad.borrow().clone().unwrap();
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let dim = node.parents[0].inner.value.borrow().raw_dim();
                let rows = dim[0];
                let mut dx = ArrayD::<f64>::zeros(dim.clone());
                {
                    let mut dx2 = dx.view_mut().into_dimensionality::<Ix2>().unwrap();
                    let per_row = g2.row(0).mapv(|v| v / rows as f64);
                    for mut r in dx2.rows_mut() {
                        r.assign(&per_row);
                    }
                }
                accum(&node.parents[0], dx);
            })),
        )
    }

    // ---- convolutional ----

    /// 2D convolution: input (B,C,H,W), weight (O,C,KH,KW), bias (O,).
    pub fn conv2d(&self, weight: &Tensor, bias: &Tensor, stride: usize, pad: usize) -> Tensor {
        let x = self.inner.value.borrow();
        let w = weight.inner.value.borrow();
        let x4 = x.view().into_dimensionality::<Ix4>().expect("conv input 4d");
        let w4 = w.view().into_dimensionality::<Ix4>().expect("conv weight 4d");
        let (bsz, c, h, wid) = x4.dim();
        let (o, cw, kh, kw) = w4.dim();
        assert_eq!(c, cw, "conv channel mismatch");
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (wid + 2 * pad - kw) / stride + 1;
        let w2 = w4
            .to_owned()
            .into_shape_with_order((o, c * kh * kw))
            .unwrap();
        let b = bias.inner.value.borrow();
        let b1 = b.view().into_dimensionality::<Ix1>().expect("conv bias 1d");
        let mut out = ndarray::Array4::<f64>::zeros((bsz, o, oh, ow));
        for bi in 0..bsz {
            let col = im2col(&x4.index_axis(Axis(0), bi), kh, kw, stride, pad, oh, ow);
            let y = w2.dot(&col); // (O, OH*OW)
            let mut out_b = out.index_axis_mut(Axis(0), bi);
            for oc in 0..o {
                for idx in 0..oh * ow {
                    out_b[[oc, idx / ow, idx % ow]] = y[[oc, idx]] + b1[oc];
                }
            }
        }
        drop(x);
        drop(w);
        drop(b);
        Tensor::mk(
            out.into_dyn(),
            vec![self.clone(), weight.clone(), bias.clone()],
            Some(Box::new(move |node: &Node| {
                let g = node.grad.borrow().clone().unwrap();
                let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                let x = node.parents[0].inner.value.borrow();
                let w = node.parents[1].inner.value.borrow();
                let x4 = x.view().into_dimensionality::<Ix4>().unwrap();
                let w4 = w.view().into_dimensionality::<Ix4>().unwrap();
                let (bsz, c, h, wid) = x4.dim();
                let (o, _, kh, kw) = w4.dim();
                let (_, _, oh, ow) = g4.dim();
                let w2 = w4
                    .to_owned()
                    .into_shape_with_order((o, c * kh * kw))
                    .unwrap();
                let mut dw2 = ndarray::Array2::<f64>::zeros((o, c * kh * kw));
                let mut db = ndarray::Array1::<f64>::zeros(o);
                let mut dx = ndarray::Array4::<f64>::zeros((bsz, c, h, wid));
                for bi in 0..bsz {
                    let gb = g4.index_axis(Axis(0), bi);
                    let g2 = gb.to_owned().into_shape_with_order((o, oh * ow)).unwrap();
                    let col = im2col(&x4.index_axis(Axis(0), bi), kh, kw, stride, pad, oh, ow);
                    dw2 += &g2.dot(&col.t());
                    db += &g2.sum_axis(Axis(1));
                    let dcol = w2.t().dot(&g2); // (C*KH*KW, OH*OW)
                    col2im(
                        &dcol,
                        &mut dx.index_axis_mut(Axis(0), bi),
                        kh,
                        kw,
                        stride,
                        pad,
                        oh,
                        ow,
                    );
                }
                drop(x);
                drop(w);
                let dw = dw2.into_shape_with_order((o, c, kh, kw)).unwrap();
                accum(&node.parents[0], dx.into_dyn());
                accum(&node.parents[1], dw.into_dyn());
                accum(&node.parents[2], db.into_dyn());
            })),
        )
    }

    /// 2x2 average pooling with stride 2; spatial dims must be even.
    pub fn avg_pool2(&self) -> Tensor {
        let x = self.inner.value.borrow();
        let x4 = x.view().into_dimensionality::<Ix4>().expect("pool input 4d");
        let (b, c, h, w) = x4.dim();
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even dims");
        let mut out = ndarray::Array4::<f64>::zeros((b, c, h / 2, w / 2));
        for bi in 0..b {
            for ci in 0..c {
                for y in 0..h / 2 {
                    for xx in 0..w / 2 {
                        out[[bi, ci, y, xx]] = 0.25
                            * (x4[[bi, ci, 2 * y, 2 * xx]]
                                + x4[[bi, ci, 2 * y, 2 * xx + 1]]
                                + x4[[bi, ci, 2 * y + 1, 2 * xx]]
                                + x4[[bi, ci, 2 * y + 1, 2 * xx + 1]]);
                    }
                }
            }
        }
        drop(x);
        Tensor::mk(
            out.into_dyn(),
            vec![self.clone()],
            Some(Box::new(|node: &Node| {
                let g = node.grad.borrow().clone().unwrap();
                let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                let (b, c, oh, ow) = g4.dim();
                let mut dx = ndarray::Array4::<f64>::zeros((b, c, oh * 2, ow * 2));
                for bi in 0..b {
                    for ci in 0..c {
                        for y in 0..oh {
                            for xx in 0..ow {
                                let v = 0.25 * g4[[bi, ci, y, xx]];
                                dx[[bi, ci, 2 * y, 2 * xx]] = v;
                                dx[[bi, ci, 2 * y, 2 * xx + 1]] = v;
                                dx[[bi, ci, 2 * y + 1, 2 * xx]] = v;
                                dx[[bi, ci, 2 * y + 1, 2 * xx + 1]] = v;
                            }
                        }
                    }
                }
                accum(&node.parents[0], dx.into_dyn());
            })),
        )
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2(&self) -> Tensor {
        let x = self.inner.value.borrow();
        let x4 = x.view().into_dimensionality::<Ix4>().expect("upsample 4d");
        let (b, c, h, w) = x4.dim();
        let mut out = ndarray::Array4::<f64>::zeros((b, c, h * 2, w * 2));
        for bi in 0..b {
            for ci in 0..c {
                for y in 0..h {
                    for xx in 0..w {
                        let v = x4[[bi, ci, y, xx]];
                        out[[bi, ci, 2 * y, 2 * xx]] = v;
                        out[[bi, ci, 2 * y, 2 * xx + 1]] = v;
                        out[[bi, ci, 2 * y + 1, 2 * xx]] = v;
                        out[[bi, ci, 2 * y + 1, 2 * xx + 1]] = v;
                    }
                }
            }
        }
        drop(x);
        Tensor::mk(
            out.into_dyn(),
            vec![self.clone()],
            Some(Box::new(|node: &Node| {
                let g = node.grad.borrow().clone().unwrap();
                let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                let (b, c, oh, ow) = g4.dim();
                let mut dx = ndarray::Array4::<f64>::zeros((b, c, oh / 2, ow / 2));
                for bi in 0..b {
                    for ci in 0..c {
                        for y in 0..oh {
                            for xx in 0..ow {
                                dx[[bi, ci, y / 2, xx / 2]] += g4[[bi, ci, y, xx]];
                            }
                        }
                    }
                }
                accum(&node.parents[0], dx.into_dyn());
            })),
        )
    }

    /// (B,C,H,W) -> (B,C) spatial mean.
    pub fn global_avg_pool(&self) -> Tensor {
        let x = self.inner.value.borrow();
        let x4 = x.view().into_dimensionality::<Ix4>().expect("gap input 4d");
        let (b, c, h, w) = x4.dim();
        let mut out = ndarray::Array2::<f64>::zeros((b, c));
        for bi in 0..b {
            for ci in 0..c {
                let mut s = 0.0;
                for y in 0..h {
                    for xx in 0..w {
                        s += x4[[bi, ci, y, xx]];
                    }
                }
                out[[bi, ci]] = s / (h * w) as f64;
            }
        }
        drop(x);
        Tensor::mk(
            out.into_dyn(),
            vec![self.clone()],
            Some(Box::new(|node: &Node| {
                let g = node.grad.borrow().clone().unwrap();
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let dim = node.parents[0].inner.value.borrow().raw_dim();
                let (h, w) = (dim[2], dim[3]);
                let mut dx = ArrayD::<f64>::zeros(dim.clone());
                {
                    let mut dx4 = dx.view_mut().into_dimensionality::<Ix4>().unwrap();
                    let scale = 1.0 / (h * w) as f64;
                    for bi in 0..dim[0] {
                        for ci in 0..dim[1] {
                            let v = g2[[bi, ci]] * scale;
                            for y in 0..h {
                                for xx in 0..w {
                                    dx4[[bi, ci, y, xx]] = v;
                                }
                            }
                        }
                    }
                }
                accum(&node.parents[0], dx);
            })),
        )
    }

    /// (B,F) -> (B,F,H,W) by spatial replication.
    pub fn spatial_broadcast(&self, h: usize, w: usize) -> Tensor {
        let x = self.inner.value.borrow();
        let x2 = x.view().into_dimensionality::<Ix2>().expect("broadcast 2d");
        let (b, f) = x2.dim();
        let mut out = ndarray::Array4::<f64>::zeros((b, f, h, w));
        for bi in 0..b {
            for fi in 0..f {
                let v = x2[[bi, fi]];
                for y in 0..h {
                    for xx in 0..w {
                        out[[bi, fi, y, xx]] = v;
                    }
                }
            }
        }
        drop(x);
        Tensor::mk(
            out.into_dyn(),
            vec![self.clone()],
            Some(Box::new(|node: &Node| {
                let g = node.grad.borrow().clone().unwrap();
                let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                let (b, f, h, w) = g4.dim();
                let mut dx = ndarray::Array2::<f64>::zeros((b, f));
                for bi in 0..b {
                    for fi in 0..f {
                        let mut s = 0.0;
                        for y in 0..h {
                            for xx in 0..w {
                                s += g4[[bi, fi, y, xx]];
                            }
                        }
                        dx[[bi, fi]] = s;
                    }
                }
                accum(&node.parents[0], dx.into_dyn());
            })),
        )
    }

    // ---- losses ----

    /// Mean softmax cross-entropy of (B,V) logits against target ids.
    pub fn softmax_cross_entropy(&self, targets: &[usize]) -> Tensor {
        let x = self.inner.value.borrow();
        let x2 = x.view().into_dimensionality::<Ix2>().expect("ce logits 2d");
        let (b, _v) = x2.dim();
        assert_eq!(b, targets.len(), "ce target count");
        let mut loss = 0.0;
        for (bi, &t) in targets.iter().enumerate() {
            let row = x2.row(bi);
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|&z| (z - m).exp()).sum::<f64>().ln() + m;
            loss += lse - row[t];
        }
        loss /= b as f64;
        drop(x);
        let targets_owned = targets.to_vec();
        Tensor::mk(
            ArrayD::from_elem(IxDyn(&[]), loss),
            vec![self.clone()],
            Some(Box::new(move |node: &Node| {
                let gout = *node.grad.borrow().as_ref().unwrap().iter().next().unwrap();
                let x = node.parents[0].inner.value.borrow();
                let x2 = x.view().into_dimensionality::<Ix2>().unwrap();
                let (b, v) = x2.dim();
                let mut dx = ndarray::Array2::<f64>::zeros((b, v));
                for (bi, &t) in targets_owned.iter().enumerate() {
                    let row = x2.row(bi);
                    let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let exps: Vec<f64> = row.iter().map(|&z| (z - m).exp()).collect();
                    let sum: f64 = exps.iter().sum();
                    for vi in 0..v {
                        let p = exps[vi] / sum;
                        dx[[bi, vi]] = gout * (p - if vi == t { 1.0 } else { 0.0 }) / b as f64;
                    }
                }
                drop(x);
                accum(&node.parents[0], dx.into_dyn());
            })),
        )
    }

    /// Mean binary cross-entropy of logits against targets of the same shape.
    pub fn bce_with_logits(&self, targets: &ArrayD<f64>) -> Tensor {
        let z = self.inner.value.borrow();
        assert_eq!(z.shape(), targets.shape(), "bce target shape");
        let n = z.len() as f64;
        let mut loss = 0.0;
        for (&zi, &yi) in z.iter().zip(targets.iter()) {
            loss += zi.max(0.0) - zi * yi + (1.0 + (-zi.abs()).exp()).ln();
        }
        loss /= n;
        drop(z);
        let targets_owned = targets.clone();
        Tensor::mk(
            ArrayD::from_elem(IxDyn(&[]), loss),
            vec![self.clone()],
            Some(Box::new(move |node: &Node| {
                let gout = *node.grad.borrow().as_ref().unwrap().iter().next().unwrap();
                let z = node.parents[0].inner.value.borrow();
                let n = z.len() as f64;
                let mut dz = z.clone();
                dz.zip_mut_with(&targets_owned, |zi, &yi| {
                    *zi = gout * (sigmoid_scalar(*zi) - yi) / n;
                });
                drop(z);
                accum(&node.parents[0], dz);
            })),
        )
    }

    /// Mean absolute difference against another tensor of the same shape.
    pub fn l1_loss(&self, other: &Tensor) -> Tensor {
        assert_eq!(self.shape(), other.shape(), "l1 shape mismatch");
        let a = self.inner.value.borrow();
        let b = other.inner.value.borrow();
        let n = a.len() as f64;
        let loss: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).sum::<f64>() / n;
        drop(a);
        drop(b);
        Tensor::mk(
            ArrayD::from_elem(IxDyn(&[]), loss),
            vec![self.clone(), other.clone()],
            Some(Box::new(|node: &Node| {
                let gout = *node.grad.borrow().as_ref().unwrap().iter().next().unwrap();
                let a = node.parents[0].inner.value.borrow();
                let b = node.parents[1].inner.value.borrow();
                let n = a.len() as f64;
                let mut da = a.clone();
                da.zip_mut_with(&b, |x, &y| {
                    *x = gout * (*x - y).signum() / n;
                });
                let db = da.mapv(|v| -v);
                drop(a);
                drop(b);
                accum(&node.parents[0], da);
                accum(&node.parents[1], db);
            })),
        )
    }

    /// One entry as a scalar tensor.
    pub fn pick(&self, index: &[usize]) -> Tensor {
        let x = self.inner.value.borrow();
        let v = x[IxDyn(index)];
        drop(x);
        let index_owned = index.to_vec();
        Tensor::mk(
            ArrayD::from_elem(IxDyn(&[]), v),
            vec![self.clone()],
            Some(Box::new(move |node: &Node| {
                let gout = *node.grad.borrow().as_ref().unwrap().iter().next().unwrap();
                let dim = node.parents[0].inner.value.borrow().raw_dim();
                let mut dx = ArrayD::<f64>::zeros(dim);
                dx[IxDyn(&index_owned)] = gout;
                accum(&node.parents[0], dx);
            })),
        )
    }

    /// Mean of all entries as a scalar tensor.
    pub fn mean_all(&self) -> Tensor {
        let x = self.inner.value.borrow();
        let n = x.len() as f64;
        let m = x.sum() / n;
        drop(x);
        Tensor::mk(
            ArrayD::from_elem(IxDyn(&[]), m),
            vec![self.clone()],
            Some(Box::new(|node: &Node| {
                let gout = *node.grad.borrow().as_ref().unwrap().iter().next().unwrap();
                let parent = node.parents[0].inner.value.borrow();
                let n = parent.len();
                let dx = ArrayD::from_elem(parent.raw_dim(), gout / n as f64);
                drop(parent);
                accum(&node.parents[0], dx);
            })),
        )
    }
}

pub(crate) fn sigmoid_scalar(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Stable softmax over a logit slice.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|&z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.iter().map(|&e| e / sum).collect()
}

fn im2col(
    x: &ndarray::ArrayView3<f64>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> ndarray::Array2<f64> {
    let (c, h, w) = x.dim();
    let mut col = ndarray::Array2::<f64>::zeros((c * kh * kw, oh * ow));
    for ci in 0..c {
        for kr in 0..kh {
            for kc in 0..kw {
                let row = ci * kh * kw + kr * kw + kc;
                for oy in 0..oh {
                    let iy = (oy * stride + kr) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kc) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        col[[row, oy * ow + ox]] = x[[ci, iy as usize, ix as usize]];
                    }
                }
            }
        }
    }
    col
}

#[allow(clippy::too_many_arguments)]
fn col2im(
    dcol: &ndarray::Array2<f64>,
    dx: &mut ndarray::ArrayViewMut3<f64>,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) {
    let (c, h, w) = dx.dim();
    for ci in 0..c {
        for kr in 0..kh {
            for kc in 0..kw {
                let row = ci * kh * kw + kr * kw + kc;
                for oy in 0..oh {
                    let iy = (oy * stride + kr) as isize - pad as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for ox in 0..ow {
                        let ix = (ox * stride + kc) as isize - pad as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        dx[[ci, iy as usize, ix as usize]] += dcol[[row, oy * ow + ox]];
                    }
                }
            }
        }
    }
}
