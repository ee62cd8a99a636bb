//! Minimal differentiable-computation substrate.
//!
//! Named parameters live in a [`ParameterStore`]; forward passes are
//! recorded on a [`Tape`] whose nodes hold values and an operation, and
//! [`Tape::backward`] accumulates gradients of a scalar loss into the store.
//! Everything is `f64` and single-threaded; the networks built on top are
//! small enough that plain loops are fast.
//!
//! Convention: every parameter op on one tape must reference the same store,
//! and `backward` must be called with that store.

use std::collections::{BTreeMap, HashMap};

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch at {name}: expected {expected:?}, got {found:?}")]
    ShapeMismatch {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("unknown parameter {0}")]
    UnknownParam(String),
    #[error("parameter {0} already exists")]
    DuplicateParam(String),
    #[error("backward called on a spent or empty tape")]
    BackwardWithoutForward,
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("stores have different parameters: {0}")]
    StoreMismatch(String),
}

/// Dense array of f64 values with an explicit shape.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NumArray {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl NumArray {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        NumArray {
            shape: shape.to_vec(),
            data: vec![0.0; len],
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        NumArray {
            shape: shape.to_vec(),
            data,
        }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        NumArray {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn scalar(v: f64) -> Self {
        NumArray {
            shape: vec![1],
            data: vec![v],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    fn fill(&mut self, v: f64) {
        self.data.iter_mut().for_each(|x| *x = v);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamId(usize);

/// Named parameter arrays with gradient accumulators and Adam moments.
#[derive(Clone, Debug, Default)]
pub struct ParameterStore {
    names: Vec<String>,
    values: Vec<NumArray>,
    grads: Vec<NumArray>,
    adam_m: Vec<NumArray>,
    adam_v: Vec<NumArray>,
    adam_t: u64,
    index: HashMap<String, usize>,
}

impl ParameterStore {
    pub fn new() -> Self {
        ParameterStore::default()
    }

    pub fn add(&mut self, name: &str, value: NumArray) -> Result<ParamId, NnError> {
        if self.index.contains_key(name) {
            return Err(NnError::DuplicateParam(name.to_string()));
        }
        let id = self.values.len();
        self.index.insert(name.to_string(), id);
        self.names.push(name.to_string());
        self.grads.push(NumArray::zeros(value.shape()));
        self.adam_m.push(NumArray::zeros(value.shape()));
        self.adam_v.push(NumArray::zeros(value.shape()));
        self.values.push(value);
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Result<ParamId, NnError> {
        self.index
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.names.iter().map(|s| s.as_str())
    }

    pub fn value(&self, id: ParamId) -> &NumArray {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut NumArray {
        &mut self.values[id.0]
    }

    pub fn grad(&self, id: ParamId) -> &NumArray {
        &self.grads[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(0.0);
        }
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    /// Affine layer `prefix.w` (out x in, fan-in uniform init) and
    /// `prefix.b` (zeros).
    pub fn add_affine(
        &mut self,
        prefix: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<(), NnError> {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let data = (0..in_dim * out_dim)
            .map(|_| rng.random_range(-bound..bound))
            .collect();
        self.add(&format!("{prefix}.w"), NumArray::from_vec(&[out_dim, in_dim], data))?;
        self.add(&format!("{prefix}.b"), NumArray::zeros(&[out_dim]))?;
        Ok(())
    }

    /// MLP parameters `prefix.l{i}.w` / `prefix.l{i}.b` for the dimension
    /// chain `dims`.
    pub fn add_mlp(
        &mut self,
        prefix: &str,
        dims: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<(), NnError> {
        for i in 0..dims.len() - 1 {
            self.add_affine(&format!("{prefix}.l{i}"), dims[i], dims[i + 1], rng)?;
        }
        Ok(())
    }

    /// LSTM cell parameters: `prefix.w_ih` (4H x in), `prefix.w_hh`
    /// (4H x H), `prefix.b` (4H). Gate order is input, forget, candidate,
    /// output; the forget-gate bias slice is initialized to 1.
    pub fn add_lstm(
        &mut self,
        prefix: &str,
        in_dim: usize,
        hidden: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<(), NnError> {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut mat = |rows: usize, cols: usize| {
            let data = (0..rows * cols)
                .map(|_| rng.random_range(-bound..bound))
                .collect();
            NumArray::from_vec(&[rows, cols], data)
        };
        self.add(&format!("{prefix}.w_ih"), mat(4 * hidden, in_dim))?;
        self.add(&format!("{prefix}.w_hh"), mat(4 * hidden, hidden))?;
        let mut bias = NumArray::zeros(&[4 * hidden]);
        for i in hidden..2 * hidden {
            bias.data_mut()[i] = 1.0;
        }
        self.add(&format!("{prefix}.b"), bias)?;
        Ok(())
    }

    /// Applies `f(target, source)` elementwise across matching parameters.
    pub fn apply_pairwise(
        &mut self,
        source: &ParameterStore,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<(), NnError> {
        if self.names != source.names {
            return Err(NnError::StoreMismatch(
                "parameter names differ".to_string(),
            ));
        }
        for (i, value) in self.values.iter_mut().enumerate() {
            let other = &source.values[i];
            if value.shape() != other.shape() {
                return Err(NnError::ShapeMismatch {
                    name: self.names[i].clone(),
                    expected: value.shape().to_vec(),
                    found: other.shape().to_vec(),
                });
            }
            for (t, s) in value.data_mut().iter_mut().zip(other.data()) {
                *t = f(*t, *s);
            }
        }
        Ok(())
    }

    pub fn to_data(&self) -> StoreData {
        StoreData {
            params: self
                .names
                .iter()
                .zip(&self.values)
                .map(|(n, v)| (n.clone(), v.shape().to_vec(), v.data().to_vec()))
                .collect(),
        }
    }

    pub fn from_data(data: &StoreData) -> Result<ParameterStore, NnError> {
        let mut store = ParameterStore::new();
        for (name, shape, values) in &data.params {
            if shape.iter().product::<usize>() != values.len() {
                return Err(NnError::ShapeMismatch {
                    name: name.clone(),
                    expected: shape.clone(),
                    found: vec![values.len()],
                });
            }
            store.add(name, NumArray::from_vec(shape, values.clone()))?;
        }
        Ok(store)
    }
}

/// Flat, serializable view of a parameter store.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StoreData {
    pub params: Vec<(String, Vec<usize>, Vec<f64>)>,
}

/// Self-describing checkpoint container: named stores plus a metadata block.
/// JSON round-trips `f64` losslessly, so save/load is exact.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Checkpoint {
    pub stores: BTreeMap<String, StoreData>,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn save(&self, path: &std::path::Path) -> std::io::Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> std::io::Result<Checkpoint> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

/// Adam update over every parameter; gradients are zeroed afterwards.
pub fn adam_step(store: &mut ParameterStore, lr: f64, betas: (f64, f64), eps: f64) {
    store.adam_t += 1;
    let (b1, b2) = betas;
    let bc1 = 1.0 - b1.powi(store.adam_t as i32);
    let bc2 = 1.0 - b2.powi(store.adam_t as i32);
    for i in 0..store.values.len() {
        for j in 0..store.values[i].len() {
            let g = store.grads[i].data()[j];
            let m = b1 * store.adam_m[i].data()[j] + (1.0 - b1) * g;
            let v = b2 * store.adam_v[i].data()[j] + (1.0 - b2) * g * g;
            store.adam_m[i].data_mut()[j] = m;
            store.adam_v[i].data_mut()[j] = v;
            let update = lr * (m / bc1) / ((v / bc2).sqrt() + eps);
            store.values[i].data_mut()[j] -= update;
        }
        store.grads[i].fill(0.0);
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

#[derive(Clone, Copy, Debug)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug)]
enum Op {
    Const,
    MatVec { w: ParamId, x: Var },
    AddBias { b: ParamId, x: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    Tanh(Var),
    Sigmoid(Var),
    Exp(Var),
    Concat(Var, Var),
    Slice { x: Var, start: usize, len: usize },
    LogSoftmax(Var),
    Gather { x: Var, idx: usize },
    Sum(Var),
    Scale { x: Var, k: f64 },
}

struct Node {
    op: Op,
    value: NumArray,
}

/// Records a forward computation; one backward pass per tape.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    spent: bool,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn value(&self, v: Var) -> &NumArray {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, op: Op, value: NumArray) -> Var {
        self.nodes.push(Node { op, value });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: NumArray) -> Var {
        self.push(Op::Const, value)
    }

    pub fn constant_vec(&mut self, data: &[f64]) -> Var {
        self.constant(NumArray::vector(data.to_vec()))
    }

    /// W (m x n) times x (n).
    pub fn matvec(
        &mut self,
        store: &ParameterStore,
        w: ParamId,
        x: Var,
    ) -> Result<Var, NnError> {
        let wv = store.value(w);
        let xv = self.value(x);
        if wv.shape().len() != 2 || wv.shape()[1] != xv.len() {
            return Err(NnError::ShapeMismatch {
                name: store.name(w).to_string(),
                expected: wv.shape().to_vec(),
                found: xv.shape().to_vec(),
            });
        }
        let (m, n) = (wv.shape()[0], wv.shape()[1]);
        let mut out = vec![0.0; m];
        for i in 0..m {
            let row = &wv.data()[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(xv.data()) {
                acc += a * b;
            }
            out[i] = acc;
        }
        Ok(self.push(Op::MatVec { w, x }, NumArray::vector(out)))
    }

    pub fn add_bias(
        &mut self,
        store: &ParameterStore,
        b: ParamId,
        x: Var,
    ) -> Result<Var, NnError> {
        let bv = store.value(b);
        let xv = self.value(x);
        if bv.len() != xv.len() {
            return Err(NnError::ShapeMismatch {
                name: store.name(b).to_string(),
                expected: bv.shape().to_vec(),
                found: xv.shape().to_vec(),
            });
        }
        let out: Vec<f64> = xv.data().iter().zip(bv.data()).map(|(a, b)| a + b).collect();
        Ok(self.push(Op::AddBias { b, x }, NumArray::vector(out)))
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        debug_assert_eq!(self.value(a).len(), self.value(b).len());
        let out: Vec<f64> = self
            .value(a)
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        self.push(op, NumArray::vector(out))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    fn map(&mut self, x: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let out: Vec<f64> = self.value(x).data().iter().map(|v| f(*v)).collect();
        self.push(op, NumArray::vector(out))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map(x, Op::Relu(x), |v| v.max(0.0))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.map(x, Op::Tanh(x), f64::tanh)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.map(x, Op::Sigmoid(x), |v| 1.0 / (1.0 + (-v).exp()))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.map(x, Op::Exp(x), f64::exp)
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let mut out = self.value(a).data().to_vec();
        out.extend_from_slice(self.value(b).data());
        self.push(Op::Concat(a, b), NumArray::vector(out))
    }

    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let out = self.value(x).data()[start..start + len].to_vec();
        self.push(Op::Slice { x, start, len }, NumArray::vector(out))
    }

    /// Numerically stable log-softmax over a vector.
    pub fn log_softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x).data();
        let max = xv.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let logsum = xv.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        let out: Vec<f64> = xv.iter().map(|v| v - logsum).collect();
        self.push(Op::LogSoftmax(x), NumArray::vector(out))
    }

    /// Picks one element as a scalar.
    pub fn gather(&mut self, x: Var, idx: usize) -> Var {
        let v = self.value(x).data()[idx];
        self.push(Op::Gather { x, idx }, NumArray::scalar(v))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let v = self.value(x).data().iter().sum();
        self.push(Op::Sum(x), NumArray::scalar(v))
    }

    pub fn scale(&mut self, x: Var, k: f64) -> Var {
        self.map(x, Op::Scale { x, k }, |v| k * v)
    }

    /// Accumulates d(loss)/d(param) into the store for every parameter that
    /// participated in the tape. `loss` must be a scalar node. The tape is
    /// cleared; a second backward is an error.
    pub fn backward(&mut self, loss: Var, store: &mut ParameterStore) -> Result<(), NnError> {
        if self.spent || self.nodes.is_empty() {
            return Err(NnError::BackwardWithoutForward);
        }
        debug_assert_eq!(self.nodes[loss.0].value.len(), 1);
        self.spent = true;

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..self.nodes.len()).rev() {
            let Some(g) = grads[i].take() else {
                continue;
            };
            // Helper to accumulate into a node gradient without double borrow.
            macro_rules! acc {
                ($target:expr, $iter:expr) => {{
                    let t = grads[$target.0]
                        .get_or_insert_with(|| vec![0.0; self.nodes[$target.0].value.len()]);
                    for (slot, v) in t.iter_mut().zip($iter) {
                        *slot += v;
                    }
                }};
            }
            match self.nodes[i].op {
                Op::Const => {}
                Op::MatVec { w, x } => {
                    let xv = self.nodes[x.0].value.data().to_vec();
                    let wv = store.value(w);
                    let n = wv.shape()[1];
                    // d/dx = W^T g
                    let mut gx = vec![0.0; n];
                    for (r, gr) in g.iter().enumerate() {
                        if *gr == 0.0 {
                            continue;
                        }
                        let row = &wv.data()[r * n..(r + 1) * n];
                        for (slot, wv) in gx.iter_mut().zip(row) {
                            *slot += gr * wv;
                        }
                    }
                    acc!(x, gx.iter().copied());
                    // d/dW = g outer x
                    let gw = store.grads[w.0].data_mut();
                    for (r, gr) in g.iter().enumerate() {
                        if *gr == 0.0 {
                            continue;
                        }
                        for (c, xv) in xv.iter().enumerate() {
                            gw[r * n + c] += gr * xv;
                        }
                    }
                }
                Op::AddBias { b, x } => {
                    acc!(x, g.iter().copied());
                    let gb = store.grads[b.0].data_mut();
                    for (slot, v) in gb.iter_mut().zip(&g) {
                        *slot += v;
                    }
                }
                Op::Add(a, b) => {
                    acc!(a, g.iter().copied());
                    acc!(b, g.iter().copied());
                }
                Op::Sub(a, b) => {
                    acc!(a, g.iter().copied());
                    acc!(b, g.iter().map(|v| -v));
                }
                Op::Mul(a, b) => {
                    let av = self.nodes[a.0].value.data().to_vec();
                    let bv = self.nodes[b.0].value.data().to_vec();
                    acc!(a, g.iter().zip(&bv).map(|(g, b)| g * b));
                    acc!(b, g.iter().zip(&av).map(|(g, a)| g * a));
                }
                Op::Relu(x) => {
                    let xv = self.nodes[x.0].value.data().to_vec();
                    acc!(x, g.iter().zip(&xv).map(|(g, x)| if *x > 0.0 { *g } else { 0.0 }));
                }
                Op::Tanh(x) => {
                    let yv = self.nodes[i].value.data().to_vec();
                    acc!(x, g.iter().zip(&yv).map(|(g, y)| g * (1.0 - y * y)));
                }
                Op::Sigmoid(x) => {
                    let yv = self.nodes[i].value.data().to_vec();
                    acc!(x, g.iter().zip(&yv).map(|(g, y)| g * y * (1.0 - y)));
                }
                Op::Exp(x) => {
                    let yv = self.nodes[i].value.data().to_vec();
                    acc!(x, g.iter().zip(&yv).map(|(g, y)| g * y));
                }
                Op::Concat(a, b) => {
                    let na = self.nodes[a.0].value.len();
                    acc!(a, g[..na].iter().copied());
                    acc!(b, g[na..].iter().copied());
                }
                Op::Slice { x, start, len } => {
                    let total = self.nodes[x.0].value.len();
                    let mut gx = vec![0.0; total];
                    gx[start..start + len].copy_from_slice(&g);
                    acc!(x, gx.iter().copied());
                }
                Op::LogSoftmax(x) => {
                    // y_j = x_j - logsumexp(x); dx_i = g_i - p_i * sum(g)
                    let yv = self.nodes[i].value.data().to_vec();
                    let gsum: f64 = g.iter().sum();
                    acc!(
                        x,
                        g.iter().zip(&yv).map(|(g, y)| g - y.exp() * gsum)
                    );
                }
                Op::Gather { x, idx } => {
                    let total = self.nodes[x.0].value.len();
                    let mut gx = vec![0.0; total];
                    gx[idx] = g[0];
                    acc!(x, gx.iter().copied());
                }
                Op::Sum(x) => {
                    let total = self.nodes[x.0].value.len();
                    acc!(x, std::iter::repeat(g[0]).take(total));
                }
                Op::Scale { x, k } => {
                    acc!(x, g.iter().map(|v| k * v));
                }
            }
        }
        self.nodes.clear();
        Ok(())
    }
}

/// Affine + activation stack under `prefix` with dimension chain `dims`
/// (input size first, output size last). The activation is applied after
/// every layer except the last.
pub fn mlp_forward(
    tape: &mut Tape,
    store: &ParameterStore,
    prefix: &str,
    dims: &[usize],
    activation: Activation,
    x: Var,
) -> Result<Var, NnError> {
    let mut h = x;
    for i in 0..dims.len() - 1 {
        let w = store.id(&format!("{prefix}.l{i}.w"))?;
        let b = store.id(&format!("{prefix}.l{i}.b"))?;
        h = tape.matvec(store, w, h)?;
        h = tape.add_bias(store, b, h)?;
        if i + 1 < dims.len() - 1 {
            h = match activation {
                Activation::Relu => tape.relu(h),
                Activation::Tanh => tape.tanh(h),
                Activation::Identity => h,
            };
        }
    }
    Ok(h)
}

/// One LSTM cell step on the tape. Gate order: input, forget, candidate,
/// output.
pub fn lstm_step(
    tape: &mut Tape,
    store: &ParameterStore,
    prefix: &str,
    x: Var,
    state: (Var, Var),
) -> Result<(Var, Var), NnError> {
    let (h, c) = state;
    let w_ih = store.id(&format!("{prefix}.w_ih"))?;
    let w_hh = store.id(&format!("{prefix}.w_hh"))?;
    let b = store.id(&format!("{prefix}.b"))?;
    let hidden = store.value(w_hh).shape()[1];

    let zi = tape.matvec(store, w_ih, x)?;
    let zh = tape.matvec(store, w_hh, h)?;
    let z = tape.add(zi, zh);
    let z = tape.add_bias(store, b, z)?;

    let i_lin = tape.slice(z, 0, hidden);
    let f_lin = tape.slice(z, hidden, hidden);
    let g_lin = tape.slice(z, 2 * hidden, hidden);
    let o_lin = tape.slice(z, 3 * hidden, hidden);

    let i_gate = tape.sigmoid(i_lin);
    let f_gate = tape.sigmoid(f_lin);
    let g_cand = tape.tanh(g_lin);
    let o_gate = tape.sigmoid(o_lin);

    let keep = tape.mul(f_gate, c);
    let write = tape.mul(i_gate, g_cand);
    let c_next = tape.add(keep, write);
    let c_act = tape.tanh(c_next);
    let h_next = tape.mul(o_gate, c_act);
    Ok((h_next, c_next))
}

/// Recurrent state as plain values, for carrying between decisions.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmState {
    pub hidden: NumArray,
    pub cell: NumArray,
}

impl LstmState {
    pub fn zeros(hidden: usize) -> Self {
        LstmState {
            hidden: NumArray::zeros(&[hidden]),
            cell: NumArray::zeros(&[hidden]),
        }
    }
}

/// Value-level MLP evaluation (records nothing the caller keeps).
pub fn mlp_eval(
    store: &ParameterStore,
    prefix: &str,
    dims: &[usize],
    activation: Activation,
    x: &NumArray,
) -> Result<NumArray, NnError> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let out = mlp_forward(&mut tape, store, prefix, dims, activation, xv)?;
    Ok(tape.value(out).clone())
}

/// Value-level LSTM step.
pub fn lstm_eval(
    store: &ParameterStore,
    prefix: &str,
    x: &NumArray,
    state: &LstmState,
) -> Result<LstmState, NnError> {
    let mut tape = Tape::new();
    let xv = tape.constant(x.clone());
    let h = tape.constant(state.hidden.clone());
    let c = tape.constant(state.cell.clone());
    let (h_next, c_next) = lstm_step(&mut tape, store, prefix, xv, (h, c))?;
    Ok(LstmState {
        hidden: tape.value(h_next).clone(),
        cell: tape.value(c_next).clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seeded_rng;

    #[test]
    fn zero_mlp_maps_everything_to_zero() {
        let mut store = ParameterStore::new();
        store.add("f.l0.w", NumArray::zeros(&[3, 4])).unwrap();
        store.add("f.l0.b", NumArray::zeros(&[3])).unwrap();
        let out = mlp_eval(
            &store,
            "f",
            &[4, 3],
            Activation::Relu,
            &NumArray::vector(vec![1.0, -2.0, 3.0, 4.0]),
        )
        .unwrap();
        assert_eq!(out.data(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut store = ParameterStore::new();
        let eye = NumArray::from_vec(&[3, 3], vec![1., 0., 0., 0., 1., 0., 0., 0., 1.]);
        store.add("f.l0.w", eye).unwrap();
        store.add("f.l0.b", NumArray::zeros(&[3])).unwrap();
        let x = NumArray::vector(vec![0.5, -1.5, 2.0]);
        let out = mlp_eval(&store, "f", &[3, 3], Activation::Identity, &x).unwrap();
        assert_eq!(out.data(), x.data());
    }

    #[test]
    fn random_layer_matches_hand_multiplied_product() {
        let mut rng = seeded_rng(20, 0);
        let mut store = ParameterStore::new();
        store.add_affine("f.l0", 4, 3, &mut rng).unwrap();
        let x = vec![0.3, -0.7, 1.1, 0.4];
        let out = mlp_eval(
            &store,
            "f",
            &[4, 3],
            Activation::Identity,
            &NumArray::vector(x.clone()),
        )
        .unwrap();

        let w = store.value(store.id("f.l0.w").unwrap()).data().to_vec();
        let b = store.value(store.id("f.l0.b").unwrap()).data().to_vec();
        for i in 0..3 {
            let mut expect = b[i];
            for j in 0..4 {
                expect += w[i * 4 + j] * x[j];
            }
            assert!((out.data()[i] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn mlp_shape_mismatch_names_the_parameter() {
        let mut rng = seeded_rng(21, 0);
        let mut store = ParameterStore::new();
        store.add_affine("f.l0", 4, 3, &mut rng).unwrap();
        let err = mlp_eval(
            &store,
            "f",
            &[4, 3],
            Activation::Relu,
            &NumArray::vector(vec![1.0; 5]),
        )
        .unwrap_err();
        match err {
            NnError::ShapeMismatch { name, .. } => assert_eq!(name, "f.l0.w"),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn zero_lstm_produces_zero_hidden() {
        let mut store = ParameterStore::new();
        store.add("r.w_ih", NumArray::zeros(&[8, 3])).unwrap();
        store.add("r.w_hh", NumArray::zeros(&[8, 2])).unwrap();
        store.add("r.b", NumArray::zeros(&[8])).unwrap();
        let s = lstm_eval(
            &store,
            "r",
            &NumArray::vector(vec![1.0, 2.0, 3.0]),
            &LstmState::zeros(2),
        )
        .unwrap();
        assert!(s.hidden.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn saturated_gates_preserve_cell_state() {
        // Forget bias +10 (keep), input bias -10 (write nothing): the cell
        // state survives steps up to gate saturation error.
        let hidden = 4;
        let mut store = ParameterStore::new();
        store.add("r.w_ih", NumArray::zeros(&[4 * hidden, 3])).unwrap();
        store.add("r.w_hh", NumArray::zeros(&[4 * hidden, hidden])).unwrap();
        let mut b = NumArray::zeros(&[4 * hidden]);
        for i in 0..hidden {
            b.data_mut()[i] = -10.0; // input gate
            b.data_mut()[hidden + i] = 10.0; // forget gate
        }
        store.add("r.b", b).unwrap();

        let mut state = LstmState {
            hidden: NumArray::zeros(&[hidden]),
            cell: NumArray::vector(vec![0.3, -0.6, 0.9, 0.1]),
        };
        let before = state.cell.clone();
        for _ in 0..3 {
            state = lstm_eval(&store, "r", &NumArray::vector(vec![1.0, -1.0, 0.5]), &state)
                .unwrap();
        }
        for (a, b) in state.cell.data().iter().zip(before.data()) {
            assert!((a - b).abs() < 1e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn linear_loss_gradient_is_outer_product() {
        // loss = sum(W x): dW = outer(1, x), db won't exist here.
        let mut store = ParameterStore::new();
        store
            .add("f.w", NumArray::from_vec(&[2, 3], vec![0.0; 6]))
            .unwrap();
        let w = store.id("f.w").unwrap();
        let mut tape = Tape::new();
        let x = tape.constant_vec(&[1.0, 2.0, 3.0]);
        let y = tape.matvec(&store, w, x).unwrap();
        let loss = tape.sum(y);
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(
            store.grad(w).data(),
            &[1.0, 2.0, 3.0, 1.0, 2.0, 3.0]
        );
    }

    #[test]
    fn backward_twice_is_an_error() {
        let mut store = ParameterStore::new();
        store.add("f.w", NumArray::from_vec(&[1, 1], vec![2.0])).unwrap();
        let w = store.id("f.w").unwrap();
        let mut tape = Tape::new();
        let x = tape.constant_vec(&[3.0]);
        let y = tape.matvec(&store, w, x).unwrap();
        let loss = tape.sum(y);
        tape.backward(loss, &mut store).unwrap();
        assert!(matches!(
            tape.backward(loss, &mut store),
            Err(NnError::BackwardWithoutForward)
        ));
        // Backward on a fresh, empty tape is also an error.
        let mut empty = Tape::new();
        assert!(matches!(
            empty.backward(loss, &mut store),
            Err(NnError::BackwardWithoutForward)
        ));
    }

    #[test]
    fn adam_zero_gradient_keeps_parameters() {
        let mut rng = seeded_rng(22, 0);
        let mut store = ParameterStore::new();
        store.add_affine("f.l0", 3, 2, &mut rng).unwrap();
        let before = store.value(store.id("f.l0.w").unwrap()).clone();
        adam_step(&mut store, 0.01, (0.9, 0.999), 1e-8);
        assert_eq!(store.value(store.id("f.l0.w").unwrap()), &before);
    }

    #[test]
    fn adam_descends_against_constant_gradient() {
        let mut store = ParameterStore::new();
        store.add("p", NumArray::scalar(0.0)).unwrap();
        let id = store.id("p").unwrap();
        for _ in 0..50 {
            store.grads[id.0].data_mut()[0] = 2.5; // constant positive gradient
            adam_step(&mut store, 0.01, (0.9, 0.999), 1e-8);
        }
        assert!(store.value(id).item() < -0.1);
    }

    #[test]
    fn adam_single_step_matches_closed_form() {
        let mut store = ParameterStore::new();
        store.add("p", NumArray::scalar(1.0)).unwrap();
        let id = store.id("p").unwrap();
        let g = 0.3;
        store.grads[id.0].data_mut()[0] = g;
        let (lr, b1, b2, eps) = (0.01, 0.9, 0.999, 1e-8);
        adam_step(&mut store, lr, (b1, b2), eps);
        // After one step: m_hat = g, v_hat = g^2, update = lr * g/(|g|+eps).
        let expected = 1.0 - lr * g / (g.abs() + eps);
        assert!((store.value(id).item() - expected).abs() < 1e-12);
        // Gradients were zeroed.
        assert_eq!(store.grad(id).data(), &[0.0]);
    }

    #[test]
    fn store_roundtrip_is_exact() {
        let mut rng = seeded_rng(23, 0);
        let mut store = ParameterStore::new();
        store.add_mlp("h", &[5, 7, 2], &mut rng).unwrap();
        store.add_lstm("r", 4, 3, &mut rng).unwrap();
        let data = store.to_data();
        let json = serde_json::to_string(&data).unwrap();
        let back: StoreData = serde_json::from_str(&json).unwrap();
        let restored = ParameterStore::from_data(&back).unwrap();
        for name in store.names() {
            let a = store.value(store.id(name).unwrap());
            let b = restored.value(restored.id(name).unwrap());
            assert_eq!(a, b, "{name}");
        }
    }

    #[test]
    fn duplicate_parameter_rejected() {
        let mut store = ParameterStore::new();
        store.add("p", NumArray::scalar(1.0)).unwrap();
        assert!(matches!(
            store.add("p", NumArray::scalar(2.0)),
            Err(NnError::DuplicateParam(_))
        ));
    }

    #[test]
    fn log_softmax_normalizes() {
        let mut tape = Tape::new();
        let x = tape.constant_vec(&[2.0, -1.0, 0.5]);
        let lp = tape.log_softmax(x);
        let total: f64 = tape.value(lp).data().iter().map(|v| v.exp()).sum();
        assert!((total - 1.0).abs() < 1e-12);
    }
}
