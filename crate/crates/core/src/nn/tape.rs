//! Dense tensors and an eager gradient tape.
//!
//! Values are computed when an op node is pushed; the tape is therefore in
//! topological order and `backward` is a single reverse sweep. Tensors are
//! generic over the element type: `f32` for training, `f64` for gradient
//! checking. A tape is confined to one worker; parameter stores are plain
//! data and can be snapshotted and shared.

use rand::Rng;
use std::collections::HashMap;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

/// Scalar element of tensors: `f32` or `f64`.
pub trait Real:
    Copy
    + PartialOrd
    + std::fmt::Debug
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + Send
    + Sync
    + 'static
{
    const ZERO: Self;
    const ONE: Self;
    fn from_f64(x: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn maxv(self, o: Self) -> Self;
    fn minv(self, o: Self) -> Self;
    fn is_finite(self) -> bool;
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            const ZERO: Self = 0.0;
            const ONE: Self = 1.0;
            fn from_f64(x: f64) -> Self {
                x as $t
            }
            fn to_f64(self) -> f64 {
                self as f64
            }
            fn exp(self) -> Self {
                self.exp()
            }
            fn ln(self) -> Self {
                self.ln()
            }
            fn sqrt(self) -> Self {
                self.sqrt()
            }
            fn maxv(self, o: Self) -> Self {
                self.max(o)
            }
            fn minv(self, o: Self) -> Self {
                self.min(o)
            }
            fn is_finite(self) -> bool {
                self.is_finite()
            }
        }
    };
}
impl_real!(f32);
impl_real!(f64);

/// A dense row-major tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<F> {
    pub shape: Vec<usize>,
    pub data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![F::ZERO; shape.iter().product()] }
    }

    pub fn from_vec(shape: &[usize], data: Vec<F>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "shape {shape:?} does not hold {} elements",
            data.len()
        );
        Self { shape: shape.to_vec(), data }
    }

    pub fn scalar(v: F) -> Self {
        Self { shape: vec![1], data: vec![v] }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// (rows, cols) of a 2D tensor; a 1D tensor is a single row.
    fn rows_cols(&self) -> (usize, usize) {
        match self.shape.len() {
            1 => (1, self.shape[0]),
            2 => (self.shape[0], self.shape[1]),
            _ => panic!("expected rank <= 2, got shape {:?}", self.shape),
        }
    }

    pub fn map_to<G: Real>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| G::from_f64(v.to_f64())).collect(),
        }
    }

    pub fn norm(&self) -> f64 {
        self.data.iter().map(|v| v.to_f64() * v.to_f64()).sum::<f64>().sqrt()
    }
}

/// Named parameter collection. Indices are stable after insertion and are
/// what gradients are keyed by.
#[derive(Debug, Clone)]
pub struct ParamStore<F> {
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
    by_name: HashMap<String, usize>,
}

impl<F: Real> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        Self { names: Vec::new(), tensors: Vec::new(), by_name: HashMap::new() }
    }

    pub fn add(&mut self, name: &str, tensor: Tensor<F>) -> usize {
        assert!(!self.by_name.contains_key(name), "duplicate parameter {name}");
        let idx = self.tensors.len();
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        self.by_name.insert(name.to_string(), idx);
        idx
    }

    /// Kaiming-uniform initialized matrix [rows, cols].
    pub fn add_kaiming<R: Rng>(&mut self, name: &str, rows: usize, cols: usize, rng: &mut R) -> usize {
        let bound = (6.0 / rows as f64).sqrt();
        let data = (0..rows * cols).map(|_| F::from_f64(rng.gen_range(-bound..bound))).collect();
        self.add(name, Tensor::from_vec(&[rows, cols], data))
    }

    pub fn add_zeros(&mut self, name: &str, shape: &[usize]) -> usize {
        self.add(name, Tensor::zeros(shape))
    }

    /// Uniformly initialized tensor in [-bound, bound]. Used for biases: a
    /// small nonzero init keeps relu pre-activations off the exact kink,
    /// where finite differences and subgradients legitimately disagree.
    pub fn add_uniform<R: Rng>(&mut self, name: &str, shape: &[usize], bound: f64, rng: &mut R) -> usize {
        let data = (0..shape.iter().product())
            .map(|_| F::from_f64(rng.gen_range(-bound..bound)))
            .collect();
        self.add(name, Tensor::from_vec(shape, data))
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.by_name.get(name).copied()
    }

    pub fn name(&self, idx: usize) -> &str {
        &self.names[idx]
    }

    pub fn get(&self, idx: usize) -> &Tensor<F> {
        &self.tensors[idx]
    }

    pub fn get_mut(&mut self, idx: usize) -> &mut Tensor<F> {
        &mut self.tensors[idx]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.names.iter().map(|n| n.as_str()).zip(self.tensors.iter())
    }

    pub fn map_to<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(|t| t.map_to()).collect(),
            by_name: self.by_name.clone(),
        }
    }
}

/// Node id on a tape.
pub type Id = usize;

enum Op<F> {
    Leaf { param: Option<usize> },
    Add(Id, Id),
    Sub(Id, Id),
    Mul(Id, Id),
    ScalarMul(Id, F),
    Matmul(Id, Id),
    AddRow(Id, Id),
    Relu(Id),
    Sigmoid(Id),
    Exp(Id),
    SoftmaxRows(Id),
    LogSoftmaxRows(Id),
    ConcatCols(Vec<Id>),
    SumAll(Id),
    MeanAll(Id),
    MeanRows(Id),
    GatherRows(Id, Vec<usize>),
    ScatterAddRows(Id, Vec<usize>),
    GatherElems(Id, Vec<usize>),
    Clamp(Id, F, F),
    MinElem(Id, Id),
    Reshape(Id),
    Conv2d3x3 { x: Id, w: Id, b: Id },
    MaxPool2d { x: Id, argmax: Vec<usize> },
    Bce { pred: Id, target: Vec<F>, weight: Vec<F> },
    Mse { pred: Id, target: Vec<F> },
}

struct Node<F> {
    op: Op<F>,
    value: Tensor<F>,
}

/// Eager reverse-mode tape.
pub struct Tape<F: Real> {
    nodes: Vec<Node<F>>,
}

impl<F: Real> Default for Tape<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> Tape<F> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn value(&self, id: Id) -> &Tensor<F> {
        &self.nodes[id].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op<F>, value: Tensor<F>) -> Id {
        self.nodes.push(Node { op, value });
        self.nodes.len() - 1
    }

    /// A differentiable leaf bound to parameter `idx` of the store.
    pub fn param(&mut self, store: &ParamStore<F>, idx: usize) -> Id {
        self.push(Op::Leaf { param: Some(idx) }, store.get(idx).clone())
    }

    /// A constant input; no gradient flows into it.
    pub fn constant(&mut self, t: Tensor<F>) -> Id {
        self.push(Op::Leaf { param: None }, t)
    }

    fn same_shape(&self, a: Id, b: Id, op: &str) {
        assert_eq!(
            self.nodes[a].value.shape, self.nodes[b].value.shape,
            "{op}: shape mismatch {:?} vs {:?}",
            self.nodes[a].value.shape, self.nodes[b].value.shape
        );
    }

    pub fn add(&mut self, a: Id, b: Id) -> Id {
        self.same_shape(a, b, "add");
        let v = Tensor {
            shape: self.nodes[a].value.shape.clone(),
            data: self.nodes[a]
                .value
                .data
                .iter()
                .zip(&self.nodes[b].value.data)
                .map(|(&x, &y)| x + y)
                .collect(),
        };
        self.push(Op::Add(a, b), v)
    }

    pub fn sub(&mut self, a: Id, b: Id) -> Id {
        self.same_shape(a, b, "sub");
        let v = Tensor {
            shape: self.nodes[a].value.shape.clone(),
            data: self.nodes[a]
                .value
                .data
                .iter()
                .zip(&self.nodes[b].value.data)
                .map(|(&x, &y)| x - y)
                .collect(),
        };
        self.push(Op::Sub(a, b), v)
    }

    pub fn mul(&mut self, a: Id, b: Id) -> Id {
        self.same_shape(a, b, "mul");
        let v = Tensor {
            shape: self.nodes[a].value.shape.clone(),
            data: self.nodes[a]
                .value
                .data
                .iter()
                .zip(&self.nodes[b].value.data)
                .map(|(&x, &y)| x * y)
                .collect(),
        };
        self.push(Op::Mul(a, b), v)
    }

    pub fn scalar_mul(&mut self, a: Id, c: F) -> Id {
        let v = Tensor {
            shape: self.nodes[a].value.shape.clone(),
            data: self.nodes[a].value.data.iter().map(|&x| x * c).collect(),
        };
        self.push(Op::ScalarMul(a, c), v)
    }

    /// [m,k] x [k,n] -> [m,n]; a 1D left operand is treated as [1,k].
    pub fn matmul(&mut self, a: Id, b: Id) -> Id {
        let (m, k) = self.nodes[a].value.rows_cols();
        let (k2, n) = self.nodes[b].value.rows_cols();
        assert_eq!(
            k, k2,
            "matmul: inner dims differ, {:?} x {:?}",
            self.nodes[a].value.shape, self.nodes[b].value.shape
        );
        let mut out = vec![F::ZERO; m * n];
        let av = &self.nodes[a].value.data;
        let bv = &self.nodes[b].value.data;
        for i in 0..m {
            for p in 0..k {
                let x = av[i * k + p];
                if x.to_f64() == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for (o, &bb) in orow.iter_mut().zip(brow) {
                    *o += x * bb;
                }
            }
        }
        let shape = if self.nodes[a].value.shape.len() == 1 { vec![n] } else { vec![m, n] };
        self.push(Op::Matmul(a, b), Tensor::from_vec(&shape, out))
    }

    /// Adds a length-n row vector to every row of an [m,n] tensor.
    pub fn add_row(&mut self, a: Id, bias: Id) -> Id {
        let (m, n) = self.nodes[a].value.rows_cols();
        assert_eq!(
            self.nodes[bias].value.numel(),
            n,
            "add_row: bias {:?} vs matrix {:?}",
            self.nodes[bias].value.shape,
            self.nodes[a].value.shape
        );
        let mut v = self.nodes[a].value.clone();
        for i in 0..m {
            for j in 0..n {
                let b = self.nodes[bias].value.data[j];
                v.data[i * n + j] += b;
            }
        }
        self.push(Op::AddRow(a, bias), v)
    }

    pub fn relu(&mut self, a: Id) -> Id {
        let v = Tensor {
            shape: self.nodes[a].value.shape.clone(),
            data: self.nodes[a].value.data.iter().map(|&x| x.maxv(F::ZERO)).collect(),
        };
        self.push(Op::Relu(a), v)
    }

    pub fn sigmoid(&mut self, a: Id) -> Id {
        let v = Tensor {
            shape: self.nodes[a].value.shape.clone(),
            data: self.nodes[a]
                .value
                .data
                .iter()
                .map(|&x| F::ONE / (F::ONE + (-x).exp()))
                .collect(),
        };
        self.push(Op::Sigmoid(a), v)
    }

    pub fn exp(&mut self, a: Id) -> Id {
        let v = Tensor {
            shape: self.nodes[a].value.shape.clone(),
            data: self.nodes[a].value.data.iter().map(|&x| x.exp()).collect(),
        };
        self.push(Op::Exp(a), v)
    }

    fn row_softmax(row: &[F]) -> Vec<F> {
        let mx = row.iter().fold(row[0], |m, &x| m.maxv(x));
        let exps: Vec<F> = row.iter().map(|&x| (x - mx).exp()).collect();
        let sum = exps.iter().fold(F::ZERO, |s, &e| s + e);
        exps.into_iter().map(|e| e / sum).collect()
    }

    /// Row-wise numerically stabilized softmax.
    pub fn softmax_rows(&mut self, a: Id) -> Id {
        let (m, n) = self.nodes[a].value.rows_cols();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            data.extend(Self::row_softmax(&self.nodes[a].value.data[i * n..(i + 1) * n]));
        }
        let v = Tensor { shape: self.nodes[a].value.shape.clone(), data };
        self.push(Op::SoftmaxRows(a), v)
    }

    pub fn log_softmax_rows(&mut self, a: Id) -> Id {
        let (m, n) = self.nodes[a].value.rows_cols();
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            let row = &self.nodes[a].value.data[i * n..(i + 1) * n];
            let mx = row.iter().fold(row[0], |mm, &x| mm.maxv(x));
            let lse = row.iter().fold(F::ZERO, |s, &x| s + (x - mx).exp()).ln() + mx;
            data.extend(row.iter().map(|&x| x - lse));
        }
        let v = Tensor { shape: self.nodes[a].value.shape.clone(), data };
        self.push(Op::LogSoftmaxRows(a), v)
    }

    /// Concatenates 2D tensors with equal row counts along columns; 1D
    /// tensors are single rows.
    pub fn concat_cols(&mut self, parts: &[Id]) -> Id {
        assert!(!parts.is_empty(), "concat of nothing");
        let m = self.nodes[parts[0]].value.rows_cols().0;
        let rank1 = self.nodes[parts[0]].value.shape.len() == 1;
        let total: usize = parts
            .iter()
            .map(|&p| {
                let (mm, n) = self.nodes[p].value.rows_cols();
                assert_eq!(mm, m, "concat_cols: row mismatch");
                n
            })
            .sum();
        let mut data = Vec::with_capacity(m * total);
        for i in 0..m {
            for &p in parts {
                let (_, n) = self.nodes[p].value.rows_cols();
                data.extend_from_slice(&self.nodes[p].value.data[i * n..(i + 1) * n]);
            }
        }
        let shape = if rank1 && m == 1 { vec![total] } else { vec![m, total] };
        self.push(Op::ConcatCols(parts.to_vec()), Tensor::from_vec(&shape, data))
    }

    pub fn sum_all(&mut self, a: Id) -> Id {
        let s = self.nodes[a].value.data.iter().fold(F::ZERO, |acc, &x| acc + x);
        self.push(Op::SumAll(a), Tensor::scalar(s))
    }

    pub fn mean_all(&mut self, a: Id) -> Id {
        let n = self.nodes[a].value.numel();
        let s = self.nodes[a].value.data.iter().fold(F::ZERO, |acc, &x| acc + x);
        self.push(Op::MeanAll(a), Tensor::scalar(s / F::from_f64(n as f64)))
    }

    /// Column means of an [m,n] tensor -> [n].
    pub fn mean_rows(&mut self, a: Id) -> Id {
        let (m, n) = self.nodes[a].value.rows_cols();
        let mut out = vec![F::ZERO; n];
        for i in 0..m {
            for j in 0..n {
                let x = self.nodes[a].value.data[i * n + j];
                out[j] += x;
            }
        }
        let inv = F::from_f64(1.0 / m as f64);
        for o in &mut out {
            *o = *o * inv;
        }
        self.push(Op::MeanRows(a), Tensor::from_vec(&[n], out))
    }

    pub fn gather_rows(&mut self, a: Id, rows: &[usize]) -> Id {
        let (m, n) = self.nodes[a].value.rows_cols();
        let mut data = Vec::with_capacity(rows.len() * n);
        for &r in rows {
            assert!(r < m, "gather_rows: row {r} out of {m}");
            data.extend_from_slice(&self.nodes[a].value.data[r * n..(r + 1) * n]);
        }
        self.push(Op::GatherRows(a, rows.to_vec()), Tensor::from_vec(&[rows.len(), n], data))
    }

    /// Sums row i of `a` into output row `rows[i]`; output has `out_rows`
    /// rows. Rows never targeted are zero.
    pub fn scatter_add_rows(&mut self, a: Id, rows: &[usize], out_rows: usize) -> Id {
        let (m, n) = self.nodes[a].value.rows_cols();
        assert_eq!(m, rows.len(), "scatter_add_rows: {m} rows vs {} indices", rows.len());
        let mut out = vec![F::ZERO; out_rows * n];
        for (i, &r) in rows.iter().enumerate() {
            assert!(r < out_rows);
            for j in 0..n {
                let x = self.nodes[a].value.data[i * n + j];
                out[r * n + j] += x;
            }
        }
        self.push(Op::ScatterAddRows(a, rows.to_vec()), Tensor::from_vec(&[out_rows, n], out))
    }

    /// Picks flat elements -> 1D tensor.
    pub fn gather_elems(&mut self, a: Id, idx: &[usize]) -> Id {
        let data: Vec<F> = idx
            .iter()
            .map(|&i| {
                assert!(i < self.nodes[a].value.numel());
                self.nodes[a].value.data[i]
            })
            .collect();
        self.push(Op::GatherElems(a, idx.to_vec()), Tensor::from_vec(&[idx.len()], data))
    }

    /// Clamp with zero gradient outside [lo, hi].
    pub fn clamp(&mut self, a: Id, lo: F, hi: F) -> Id {
        let v = Tensor {
            shape: self.nodes[a].value.shape.clone(),
            data: self.nodes[a].value.data.iter().map(|&x| x.maxv(lo).minv(hi)).collect(),
        };
        self.push(Op::Clamp(a, lo, hi), v)
    }

    /// Elementwise minimum; gradient routes to the smaller operand (ties to
    /// the first).
    pub fn min_elem(&mut self, a: Id, b: Id) -> Id {
        self.same_shape(a, b, "min_elem");
        let v = Tensor {
            shape: self.nodes[a].value.shape.clone(),
            data: self.nodes[a]
                .value
                .data
                .iter()
                .zip(&self.nodes[b].value.data)
                .map(|(&x, &y)| x.minv(y))
                .collect(),
        };
        self.push(Op::MinElem(a, b), v)
    }

    pub fn reshape(&mut self, a: Id, shape: &[usize]) -> Id {
        assert_eq!(
            self.nodes[a].value.numel(),
            shape.iter().product::<usize>(),
            "reshape {:?} -> {:?}",
            self.nodes[a].value.shape,
            shape
        );
        let v = Tensor::from_vec(shape, self.nodes[a].value.data.clone());
        self.push(Op::Reshape(a), v)
    }

    /// 3x3 convolution, stride 1, same padding. x: [C_in, H, W],
    /// w: [C_out, C_in, 3, 3], b: [C_out] -> [C_out, H, W].
    pub fn conv2d_3x3(&mut self, x: Id, w: Id, b: Id) -> Id {
        let xs = self.nodes[x].value.shape.clone();
        let ws = self.nodes[w].value.shape.clone();
        assert_eq!(xs.len(), 3, "conv input must be [C,H,W], got {xs:?}");
        assert_eq!(ws.len(), 4, "conv weight must be [Co,Ci,3,3], got {ws:?}");
        assert_eq!(ws[1], xs[0], "conv: weight {ws:?} vs input {xs:?}");
        assert_eq!((ws[2], ws[3]), (3, 3), "conv kernel must be 3x3, got {ws:?}");
        let (ci, h, wd) = (xs[0], xs[1], xs[2]);
        let co = ws[0];
        let xv = &self.nodes[x].value.data;
        let wv = &self.nodes[w].value.data;
        let bv = &self.nodes[b].value.data;
        assert_eq!(bv.len(), co, "conv bias {} vs {co} channels", bv.len());
        let mut out = vec![F::ZERO; co * h * wd];
        for o in 0..co {
            for c in 0..ci {
                let wbase = (o * ci + c) * 9;
                for ky in 0..3usize {
                    for kx in 0..3usize {
                        let wk = wv[wbase + ky * 3 + kx];
                        if wk.to_f64() == 0.0 {
                            continue;
                        }
                        for y in 0..h {
                            let sy = y as isize + ky as isize - 1;
                            if sy < 0 || sy >= h as isize {
                                continue;
                            }
                            for xcol in 0..wd {
                                let sx = xcol as isize + kx as isize - 1;
                                if sx < 0 || sx >= wd as isize {
                                    continue;
                                }
                                out[(o * h + y) * wd + xcol] +=
                                    wk * xv[(c * h + sy as usize) * wd + sx as usize];
                            }
                        }
                    }
                }
            }
            for y in 0..h {
                for xcol in 0..wd {
                    out[(o * h + y) * wd + xcol] += bv[o];
                }
            }
        }
        self.push(Op::Conv2d3x3 { x, w, b }, Tensor::from_vec(&[co, h, wd], out))
    }

    /// Max pooling, pool 3, stride 2, same padding: [C, H, W] ->
    /// [C, ceil(H/2), ceil(W/2)].
    pub fn maxpool2d_3s2(&mut self, x: Id) -> Id {
        let xs = self.nodes[x].value.shape.clone();
        assert_eq!(xs.len(), 3, "maxpool input must be [C,H,W], got {xs:?}");
        let (c, h, w) = (xs[0], xs[1], xs[2]);
        let oh = h.div_ceil(2);
        let ow = w.div_ceil(2);
        // Same padding: total pad = (oh-1)*2 + 3 - h, split low/high.
        let pad_y = (((oh - 1) * 2 + 3).saturating_sub(h)) / 2;
        let pad_x = (((ow - 1) * 2 + 3).saturating_sub(w)) / 2;
        let xv = &self.nodes[x].value.data;
        let mut out = vec![F::ZERO; c * oh * ow];
        let mut argmax = vec![0usize; c * oh * ow];
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best: Option<(F, usize)> = None;
                    for ky in 0..3usize {
                        let sy = (oy * 2 + ky) as isize - pad_y as isize;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for kx in 0..3usize {
                            let sx = (ox * 2 + kx) as isize - pad_x as isize;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            let flat = (ch * h + sy as usize) * w + sx as usize;
                            let v = xv[flat];
                            if best.map_or(true, |(bv, _)| v > bv) {
                                best = Some((v, flat));
                            }
                        }
                    }
                    let (v, flat) = best.expect("pool window never empty");
                    out[(ch * oh + oy) * ow + ox] = v;
                    argmax[(ch * oh + oy) * ow + ox] = flat;
                }
            }
        }
        self.push(Op::MaxPool2d { x, argmax }, Tensor::from_vec(&[c, oh, ow], out))
    }

    /// Weighted mean binary cross-entropy against constant targets.
    /// Predictions are clamped to [1e-7, 1 - 1e-7]; entries with zero weight
    /// do not contribute.
    pub fn bce_loss(&mut self, pred: Id, target: &[F], weight: &[F]) -> Id {
        let p = &self.nodes[pred].value;
        assert_eq!(p.numel(), target.len(), "bce: {} preds vs {} targets", p.numel(), target.len());
        assert_eq!(target.len(), weight.len());
        let wsum = weight.iter().fold(F::ZERO, |s, &w| s + w);
        assert!(wsum.to_f64() > 0.0, "bce: all weights zero");
        let eps = F::from_f64(1e-7);
        let mut loss = F::ZERO;
        for i in 0..target.len() {
            if weight[i].to_f64() == 0.0 {
                continue;
            }
            let pi = p.data[i].maxv(eps).minv(F::ONE - eps);
            let t = target[i];
            loss += weight[i] * -(t * pi.ln() + (F::ONE - t) * (F::ONE - pi).ln());
        }
        let v = Tensor::scalar(loss / wsum);
        self.push(Op::Bce { pred, target: target.to_vec(), weight: weight.to_vec() }, v)
    }

    /// Mean squared error against constant targets.
    pub fn mse_loss(&mut self, pred: Id, target: &[F]) -> Id {
        let p = &self.nodes[pred].value;
        assert_eq!(p.numel(), target.len(), "mse: {} preds vs {} targets", p.numel(), target.len());
        let mut s = F::ZERO;
        for i in 0..target.len() {
            let d = p.data[i] - target[i];
            s += d * d;
        }
        let v = Tensor::scalar(s / F::from_f64(target.len() as f64));
        self.push(Op::Mse { pred, target: target.to_vec() }, v)
    }

    /// Reverse sweep from a scalar loss; returns per-parameter gradients
    /// (zero tensors for parameters the loss never touched).
    pub fn backward(&self, loss: Id, store: &ParamStore<F>) -> Vec<Tensor<F>> {
        assert_eq!(self.nodes[loss].value.numel(), 1, "backward: loss must be scalar");
        let mut grads: Vec<Option<Vec<F>>> = vec![None; self.nodes.len()];
        grads[loss] = Some(vec![F::ONE]);
        let mut out: Vec<Tensor<F>> =
            (0..store.len()).map(|i| Tensor::zeros(&store.get(i).shape)).collect();

        for id in (0..=loss).rev() {
            let g = match grads[id].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[id];
            macro_rules! acc {
                ($src:expr, $f:expr) => {{
                    let src: Id = $src;
                    let slot = grads[src]
                        .get_or_insert_with(|| vec![F::ZERO; self.nodes[src].value.numel()]);
                    #[allow(clippy::redundant_closure_call)]
                    ($f)(slot);
                }};
            }
            match &node.op {
                Op::Leaf { param } => {
                    if let Some(p) = param {
                        for (o, gi) in out[*p].data.iter_mut().zip(&g) {
                            *o += *gi;
                        }
                    }
                }
                Op::Add(a, b) => {
                    acc!(*a, |s: &mut Vec<F>| for (o, gi) in s.iter_mut().zip(&g) { *o += *gi });
                    acc!(*b, |s: &mut Vec<F>| for (o, gi) in s.iter_mut().zip(&g) { *o += *gi });
                }
                Op::Sub(a, b) => {
                    acc!(*a, |s: &mut Vec<F>| for (o, gi) in s.iter_mut().zip(&g) { *o += *gi });
                    acc!(*b, |s: &mut Vec<F>| for (o, gi) in s.iter_mut().zip(&g) { *o += -*gi });
                }
                Op::Mul(a, b) => {
                    let av = self.nodes[*a].value.data.clone();
                    let bv = self.nodes[*b].value.data.clone();
                    acc!(*a, |s: &mut Vec<F>| for i in 0..g.len() { s[i] += g[i] * bv[i] });
                    acc!(*b, |s: &mut Vec<F>| for i in 0..g.len() { s[i] += g[i] * av[i] });
                }
                Op::ScalarMul(a, c) => {
                    let c = *c;
                    acc!(*a, |s: &mut Vec<F>| for i in 0..g.len() { s[i] += g[i] * c });
                }
                Op::Matmul(a, b) => {
                    let (m, k) = self.nodes[*a].value.rows_cols();
                    let (_, n) = self.nodes[*b].value.rows_cols();
                    let av = self.nodes[*a].value.data.clone();
                    let bv = self.nodes[*b].value.data.clone();
                    // dA = G B^T
                    acc!(*a, |s: &mut Vec<F>| for i in 0..m {
                        for p in 0..k {
                            let mut acc = F::ZERO;
                            for j in 0..n {
                                acc += g[i * n + j] * bv[p * n + j];
                            }
                            s[i * k + p] += acc;
                        }
                    });
                    // dB = A^T G
                    acc!(*b, |s: &mut Vec<F>| for p in 0..k {
                        for i in 0..m {
                            let x = av[i * k + p];
                            if x.to_f64() == 0.0 {
                                continue;
                            }
                            for j in 0..n {
                                s[p * n + j] += x * g[i * n + j];
                            }
                        }
                    });
                }
                Op::AddRow(a, bias) => {
                    let (m, n) = self.nodes[*a].value.rows_cols();
                    acc!(*a, |s: &mut Vec<F>| for (o, gi) in s.iter_mut().zip(&g) { *o += *gi });
                    acc!(*bias, |s: &mut Vec<F>| for i in 0..m {
                        for j in 0..n {
                            s[j] += g[i * n + j];
                        }
                    });
                }
                Op::Relu(a) => {
                    let av = self.nodes[*a].value.data.clone();
                    acc!(*a, |s: &mut Vec<F>| for i in 0..g.len() {
                        if av[i].to_f64() > 0.0 {
                            s[i] += g[i];
                        }
                    });
                }
                Op::Sigmoid(a) => {
                    let sv = node.value.data.clone();
                    acc!(*a, |s: &mut Vec<F>| for i in 0..g.len() {
                        s[i] += g[i] * sv[i] * (F::ONE - sv[i]);
                    });
                }
                Op::Exp(a) => {
                    let ev = node.value.data.clone();
                    acc!(*a, |s: &mut Vec<F>| for i in 0..g.len() { s[i] += g[i] * ev[i] });
                }
                Op::SoftmaxRows(a) => {
                    let (m, n) = node.value.rows_cols();
                    let sv = node.value.data.clone();
                    acc!(*a, |s: &mut Vec<F>| for i in 0..m {
                        let mut dot = F::ZERO;
                        for j in 0..n {
                            dot += g[i * n + j] * sv[i * n + j];
                        }
                        for j in 0..n {
                            s[i * n + j] += sv[i * n + j] * (g[i * n + j] - dot);
                        }
                    });
                }
                Op::LogSoftmaxRows(a) => {
                    let (m, n) = node.value.rows_cols();
                    let lv = node.value.data.clone();
                    acc!(*a, |s: &mut Vec<F>| for i in 0..m {
                        let mut gsum = F::ZERO;
                        for j in 0..n {
                            gsum += g[i * n + j];
                        }
                        for j in 0..n {
                            s[i * n + j] += g[i * n + j] - lv[i * n + j].exp() * gsum;
                        }
                    });
                }
                Op::ConcatCols(parts) => {
                    let m = self.nodes[parts[0]].value.rows_cols().0;
                    let total: usize =
                        parts.iter().map(|&p| self.nodes[p].value.rows_cols().1).sum();
                    let mut col0 = 0;
                    for &p in parts {
                        let (_, n) = self.nodes[p].value.rows_cols();
                        acc!(p, |s: &mut Vec<F>| for i in 0..m {
                            for j in 0..n {
                                s[i * n + j] += g[i * total + col0 + j];
                            }
                        });
                        col0 += n;
                    }
                }
                Op::SumAll(a) => {
                    acc!(*a, |s: &mut Vec<F>| for o in s.iter_mut() { *o += g[0] });
                }
                Op::MeanAll(a) => {
                    let inv = F::from_f64(1.0 / self.nodes[*a].value.numel() as f64);
                    acc!(*a, |s: &mut Vec<F>| for o in s.iter_mut() { *o += g[0] * inv });
                }
                Op::MeanRows(a) => {
                    let (m, n) = self.nodes[*a].value.rows_cols();
                    let inv = F::from_f64(1.0 / m as f64);
                    acc!(*a, |s: &mut Vec<F>| for i in 0..m {
                        for j in 0..n {
                            s[i * n + j] += g[j] * inv;
                        }
                    });
                }
                Op::GatherRows(a, rows) => {
                    let (_, n) = self.nodes[*a].value.rows_cols();
                    acc!(*a, |s: &mut Vec<F>| for (i, &r) in rows.iter().enumerate() {
                        for j in 0..n {
                            s[r * n + j] += g[i * n + j];
                        }
                    });
                }
                Op::ScatterAddRows(a, rows) => {
                    let (_, n) = self.nodes[*a].value.rows_cols();
                    acc!(*a, |s: &mut Vec<F>| for (i, &r) in rows.iter().enumerate() {
                        for j in 0..n {
                            s[i * n + j] += g[r * n + j];
                        }
                    });
                }
                Op::GatherElems(a, idx) => {
                    acc!(*a, |s: &mut Vec<F>| for (i, &f) in idx.iter().enumerate() {
                        s[f] += g[i];
                    });
                }
                Op::Clamp(a, lo, hi) => {
                    let av = self.nodes[*a].value.data.clone();
                    let (lo, hi) = (*lo, *hi);
                    acc!(*a, |s: &mut Vec<F>| for i in 0..g.len() {
                        if av[i] >= lo && av[i] <= hi {
                            s[i] += g[i];
                        }
                    });
                }
                Op::MinElem(a, b) => {
                    let av = self.nodes[*a].value.data.clone();
                    let bv = self.nodes[*b].value.data.clone();
                    let pick_a: Vec<bool> =
                        av.iter().zip(&bv).map(|(&x, &y)| x <= y).collect();
                    let pa = pick_a.clone();
                    acc!(*a, |s: &mut Vec<F>| for i in 0..g.len() {
                        if pa[i] {
                            s[i] += g[i];
                        }
                    });
                    acc!(*b, |s: &mut Vec<F>| for i in 0..g.len() {
                        if !pick_a[i] {
                            s[i] += g[i];
                        }
                    });
                }
                Op::Reshape(a) => {
                    acc!(*a, |s: &mut Vec<F>| for (o, gi) in s.iter_mut().zip(&g) { *o += *gi });
                }
                Op::Conv2d3x3 { x, w, b } => {
                    let xs = &self.nodes[*x].value.shape;
                    let ws = &self.nodes[*w].value.shape;
                    let (ci, h, wd) = (xs[0], xs[1], xs[2]);
                    let co = ws[0];
                    let xv = self.nodes[*x].value.data.clone();
                    let wv = self.nodes[*w].value.data.clone();
                    acc!(*x, |s: &mut Vec<F>| for o in 0..co {
                        for c in 0..ci {
                            let wbase = (o * ci + c) * 9;
                            for ky in 0..3usize {
                                for kx in 0..3usize {
                                    let wk = wv[wbase + ky * 3 + kx];
                                    for y in 0..h {
                                        let sy = y as isize + ky as isize - 1;
                                        if sy < 0 || sy >= h as isize {
                                            continue;
                                        }
                                        for xc in 0..wd {
                                            let sx = xc as isize + kx as isize - 1;
                                            if sx < 0 || sx >= wd as isize {
                                                continue;
                                            }
                                            s[(c * h + sy as usize) * wd + sx as usize] +=
                                                wk * g[(o * h + y) * wd + xc];
                                        }
                                    }
                                }
                            }
                        }
                    });
                    acc!(*w, |s: &mut Vec<F>| for o in 0..co {
                        for c in 0..ci {
                            let wbase = (o * ci + c) * 9;
                            for ky in 0..3usize {
                                for kx in 0..3usize {
                                    let mut acc = F::ZERO;
                                    for y in 0..h {
                                        let sy = y as isize + ky as isize - 1;
                                        if sy < 0 || sy >= h as isize {
                                            continue;
                                        }
                                        for xc in 0..wd {
                                            let sx = xc as isize + kx as isize - 1;
                                            if sx < 0 || sx >= wd as isize {
                                                continue;
                                            }
                                            acc += g[(o * h + y) * wd + xc]
                                                * xv[(c * h + sy as usize) * wd + sx as usize];
                                        }
                                    }
                                    s[wbase + ky * 3 + kx] += acc;
                                }
                            }
                        }
                    });
                    acc!(*b, |s: &mut Vec<F>| for o in 0..co {
                        for y in 0..h {
                            for xc in 0..wd {
                                s[o] += g[(o * h + y) * wd + xc];
                            }
                        }
                    });
                }
                Op::MaxPool2d { x, argmax } => {
                    acc!(*x, |s: &mut Vec<F>| for (i, &f) in argmax.iter().enumerate() {
                        s[f] += g[i];
                    });
                }
                Op::Bce { pred, target, weight } => {
                    let pv = self.nodes[*pred].value.data.clone();
                    let wsum = weight.iter().fold(F::ZERO, |s, &w| s + w);
                    let eps = F::from_f64(1e-7);
                    acc!(*pred, |s: &mut Vec<F>| for i in 0..pv.len() {
                        if weight[i].to_f64() == 0.0 {
                            continue;
                        }
                        let pi = pv[i].maxv(eps).minv(F::ONE - eps);
                        let t = target[i];
                        s[i] += g[0] * weight[i] / wsum
                            * (-(t / pi) + (F::ONE - t) / (F::ONE - pi));
                    });
                }
                Op::Mse { pred, target } => {
                    let pv = self.nodes[*pred].value.data.clone();
                    let inv = F::from_f64(2.0 / target.len() as f64);
                    acc!(*pred, |s: &mut Vec<F>| for i in 0..pv.len() {
                        s[i] += g[0] * (pv[i] - target[i]) * inv;
                    });
                }
            }
        }
        out
    }
}

/// Convenience: a 2-layer MLP's parameters (in -> hidden -> out) registered
/// under `prefix`. Returns the four parameter indices (w1, b1, w2, b2).
pub fn mlp2_params<F: Real, R: Rng>(
    store: &mut ParamStore<F>,
    prefix: &str,
    dims: (usize, usize, usize),
    rng: &mut R,
) -> [usize; 4] {
    let (din, dh, dout) = dims;
    [
        store.add_kaiming(&format!("{prefix}.w1"), din, dh, rng),
        store.add_uniform(&format!("{prefix}.b1"), &[dh], 0.05, rng),
        store.add_kaiming(&format!("{prefix}.w2"), dh, dout, rng),
        store.add_uniform(&format!("{prefix}.b2"), &[dout], 0.05, rng),
    ]
}

/// Forward for `mlp2_params`: linear, relu, linear.
pub fn mlp2_forward<F: Real>(
    tape: &mut Tape<F>,
    store: &ParamStore<F>,
    ids: &[usize; 4],
    x: Id,
) -> Id {
    let w1 = tape.param(store, ids[0]);
    let b1 = tape.param(store, ids[1]);
    let w2 = tape.param(store, ids[2]);
    let b2 = tape.param(store, ids[3]);
    let h = tape.matmul(x, w1);
    let h = tape.add_row(h, b1);
    let h = tape.relu(h);
    let o = tape.matmul(h, w2);
    tape.add_row(o, b2)
}
