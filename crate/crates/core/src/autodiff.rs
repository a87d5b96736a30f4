//! A small reverse-mode autodiff tape over dense `f64` tensors.
//!
//! Tensors are at most 3-D and sized for temporal 1-D convolutions
//! (`channels × time`). A [`Tape`] records operations as they run; calling
//! [`Tape::backward`] on a scalar node returns gradients for every node that
//! depends on a parameter or on a tracked input.

use crate::motion::SkeletonTopology;
use crate::quat::Quaternion;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor shape {shape:?} vs {} values", data.len());
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![0.0; n] }
    }

    pub fn scalar(v: f64) -> Self {
        Self { shape: vec![1], data: vec![v] }
    }

    pub fn vector(data: Vec<f64>) -> Self {
        Self { shape: vec![data.len()], data }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        Self::new(vec![rows, cols], data)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows and columns of a 2-D tensor.
    pub fn dims2(&self) -> (usize, usize) {
        assert_eq!(self.shape.len(), 2, "expected a 2-D tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1])
    }

    pub fn row(&self, r: usize) -> &[f64] {
        let (_, c) = self.dims2();
        &self.data[r * c..(r + 1) * c]
    }

    pub fn item(&self) -> f64 {
        assert_eq!(self.data.len(), 1, "item() on a tensor of shape {:?}", self.shape);
        self.data[0]
    }

    fn add_assign(&mut self, o: &Tensor) {
        debug_assert_eq!(self.shape, o.shape);
        for (a, b) in self.data.iter_mut().zip(&o.data) {
            *a += b;
        }
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 4];
    let chunks = n / 4;
    for i in 0..chunks {
        let o = 4 * i;
        acc[0] += a[o] * b[o];
        acc[1] += a[o + 1] * b[o + 1];
        acc[2] += a[o + 2] * b[o + 2];
        acc[3] += a[o + 3] * b[o + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in 4 * chunks..n {
        s += a[i] * b[i];
    }
    s
}

pub(crate) fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named, ordered collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamStore {
    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// Per-parameter gradients, indexed like the owning [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGrads {
    pub grads: Vec<Option<Tensor>>,
}

impl ParamGrads {
    pub fn empty(n: usize) -> Self {
        Self { grads: vec![None; n] }
    }

    pub fn get(&self, id: ParamId) -> Option<&Tensor> {
        self.grads[id.0].as_ref()
    }

    pub fn accumulate(&mut self, other: &ParamGrads, scale: f64) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            let Some(b) = b else { continue };
            match a {
                Some(a) => axpy(&mut a.data, scale, &b.data),
                None => {
                    let mut t = b.clone();
                    t.data.iter_mut().for_each(|v| *v *= scale);
                    *a = Some(t);
                }
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op<'a> {
    Constant,
    Input,
    Param(ParamId),
    Conv1d { x: Var, w: Var, b: Var, stride: usize, pad: usize, reflect: bool, cols: Vec<f64> },
    LeakyRelu { x: Var, slope: f64 },
    InstanceNorm { x: Var, inv_std: Vec<f64> },
    ScaleShift { x: Var, gamma: Var, beta: Var, normed: Var },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Upsample2(Var),
    MaxPoolTime { x: Var, argmax: Vec<usize> },
    MeanTime(Var),
    Linear { x: Var, w: Var, b: Var },
    Slice { x: Var, start: usize },
    QuatNormalize { x: Var, norms: Vec<f64> },
    Fk { x: Var, skel: &'a SkeletonTopology },
    Abs(Var),
    Square(Var),
    Relu(Var),
    Sum(Var),
    Mean(Var),
    Norm(Var),
    Sqrt(Var),
}

enum Value {
    Owned(Tensor),
    Param(ParamId),
}

struct Node<'a> {
    value: Value,
    op: Op<'a>,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`].
pub struct Gradients {
    nodes: Vec<Option<Tensor>>,
    params: ParamGrads,
}

impl Gradients {
    pub fn of(&self, v: Var) -> Option<&Tensor> {
        self.nodes[v.0].as_ref()
    }

    pub fn params(&self) -> &ParamGrads {
        &self.params
    }

    pub fn into_params(self) -> ParamGrads {
        self.params
    }
}

pub struct Tape<'a> {
    store: Option<&'a ParamStore>,
    nodes: Vec<Node<'a>>,
    param_vars: Vec<Option<Var>>,
    /// When false, parameters are recorded as constants (no gradient work).
    track_params: bool,
    trainable: Option<&'a [bool]>,
}

impl<'a> Default for Tape<'a> {
    fn default() -> Self {
        Self::new()
    }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self {
            store: None,
            nodes: Vec::new(),
            param_vars: Vec::new(),
            track_params: true,
            trainable: None,
        }
    }

    pub fn with_params(store: &'a ParamStore) -> Self {
        Self {
            store: Some(store),
            param_vars: vec![None; store.len()],
            ..Self::new()
        }
    }

    /// A tape for inference: parameters are read but never differentiated.
    pub fn inference(store: &'a ParamStore) -> Self {
        Self {
            track_params: false,
            ..Self::with_params(store)
        }
    }

    /// Only parameters with `mask[id]` set receive gradients.
    pub fn with_trainable(store: &'a ParamStore, mask: &'a [bool]) -> Self {
        assert_eq!(mask.len(), store.len(), "trainable mask length");
        Self {
            trainable: Some(mask),
            ..Self::with_params(store)
        }
    }

    fn push(&mut self, value: Tensor, op: Op<'a>, parents: &[Var]) -> Var {
        let needs_grad = parents.iter().any(|p| self.nodes[p.0].needs_grad);
        self.nodes.push(Node {
            value: Value::Owned(value),
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        match &self.nodes[v.0].value {
            Value::Owned(t) => t,
            Value::Param(id) => self.store.expect("param node without store").get(*id),
        }
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.value(v).shape
    }

    /// Data that gradients are not needed for.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(t),
            op: Op::Constant,
            needs_grad: false,
        });
        Var(self.nodes.len() - 1)
    }

    /// Data that gradients are wanted for.
    pub fn input(&mut self, t: Tensor) -> Var {
        self.nodes.push(Node {
            value: Value::Owned(t),
            op: Op::Input,
            needs_grad: true,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node {
            value: Value::Param(id),
            op: Op::Param(id),
            needs_grad: self.track_params && self.trainable.map_or(true, |m| m[id.0]),
        });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    /// Zero-padded 1-D convolution: `x [Cin, T]`, `w [Cout, Cin, K]`, `b [Cout]`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        self.conv1d_padded(x, w, b, stride, pad, false)
    }

    /// Like [`Tape::conv1d`], but the border is padded by mirroring the
    /// signal (without repeating the edge sample) instead of with zeros.
    pub fn conv1d_reflect(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize) -> Var {
        self.conv1d_padded(x, w, b, stride, pad, true)
    }

    fn conv1d_padded(&mut self, x: Var, w: Var, b: Var, stride: usize, pad: usize, reflect: bool) -> Var {
        let (cin, t_in) = self.value(x).dims2();
        let ws = self.value(w).shape.clone();
        assert_eq!(ws.len(), 3, "conv weight must be 3-D");
        let (cout, k) = (ws[0], ws[2]);
        assert_eq!(ws[1], cin, "conv expects {} input channels, got {cin}", ws[1]);
        assert!(t_in + 2 * pad >= k, "conv input too short: T={t_in}, K={k}, pad={pad}");
        assert!(!reflect || pad < t_in, "reflection padding {pad} needs more than {t_in} time steps");
        let t_out = (t_in + 2 * pad - k) / stride + 1;
        let r = cin * k;
        // cols[to][ci*K + kk] = x[ci][to*stride + kk - pad]
        let xv = &self.value(x).data;
        let mut cols = vec![0.0; t_out * r];
        for to in 0..t_out {
            let row = &mut cols[to * r..(to + 1) * r];
            for ci in 0..cin {
                for kk in 0..k {
                    if let Some(ti) = conv_tap((to * stride + kk) as isize - pad as isize, t_in, reflect) {
                        row[ci * k + kk] = xv[ci * t_in + ti];
                    }
                }
            }
        }
        let wv = &self.value(w).data;
        let bv = &self.value(b).data;
        let mut out = vec![0.0; cout * t_out];
        for co in 0..cout {
            let wrow = &wv[co * r..(co + 1) * r];
            for to in 0..t_out {
                out[co * t_out + to] = dot(wrow, &cols[to * r..(to + 1) * r]) + bv[co];
            }
        }
        self.push(
            Tensor::new(vec![cout, t_out], out),
            Op::Conv1d { x, w, b, stride, pad, reflect, cols },
            &[x, w, b],
        )
    }

    pub fn leaky_relu(&mut self, x: Var, slope: f64) -> Var {
        let t = self.value(x);
        let data = t.data.iter().map(|&v| if v > 0.0 { v } else { slope * v }).collect();
        let shape = t.shape.clone();
        self.push(Tensor::new(shape, data), Op::LeakyRelu { x, slope }, &[x])
    }

    /// Per-channel standardization over time (`[C, T]`, T ≥ 2, ε = 1e-5).
    /// The statistics do not depend on the order of time steps.
    pub fn instance_norm(&mut self, x: Var) -> Var {
        let (c, t) = self.value(x).dims2();
        assert!(t >= 2, "instance norm needs at least 2 time steps");
        let xv = &self.value(x).data;
        let mut out = vec![0.0; c * t];
        let mut inv_std = Vec::with_capacity(c);
        for ch in 0..c {
            let row = &xv[ch * t..(ch + 1) * t];
            let mean = sorted_sum(row.iter().copied()) / t as f64;
            let var = sorted_sum(row.iter().map(|v| (v - mean).powi(2))) / t as f64;
            let is = 1.0 / (var + 1e-5).sqrt();
            for (o, v) in out[ch * t..(ch + 1) * t].iter_mut().zip(row) {
                *o = (v - mean) * is;
            }
            inv_std.push(is);
        }
        self.push(Tensor::new(vec![c, t], out), Op::InstanceNorm { x, inv_std }, &[x])
    }

    /// `gamma[c] · x[c, t] + beta[c]`.
    pub fn scale_shift(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (c, t) = self.value(x).dims2();
        let g = &self.value(gamma).data;
        let b = &self.value(beta).data;
        assert!(g.len() == c && b.len() == c, "AdaIN parameters have {} / {} entries for {c} channels", g.len(), b.len());
        let xv = &self.value(x).data;
        let data = (0..c * t).map(|i| g[i / t] * xv[i] + b[i / t]).collect();
        self.push(
            Tensor::new(vec![c, t], data),
            Op::ScaleShift { x, gamma, beta, normed: x },
            &[x, gamma, beta],
        )
    }

    /// Instance normalization followed by a per-channel affine map.
    pub fn adain(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let n = self.instance_norm(x);
        self.scale_shift(n, gamma, beta)
    }

    fn zip_op(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64, op: Op<'a>) -> Var {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape, tb.shape, "elementwise shape mismatch");
        let data = ta.data.iter().zip(&tb.data).map(|(x, y)| f(*x, *y)).collect();
        let shape = ta.shape.clone();
        self.push(Tensor::new(shape, data), op, &[a, b])
    }

    fn map_op(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op<'a>) -> Var {
        let t = self.value(x);
        let data = t.data.iter().map(|v| f(*v)).collect();
        let shape = t.shape.clone();
        self.push(Tensor::new(shape, data), op, &[x])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip_op(a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip_op(a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip_op(a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.map_op(x, |v| v * s, Op::Scale(x, s))
    }

    pub fn add_scalar(&mut self, x: Var, s: f64) -> Var {
        self.map_op(x, |v| v + s, Op::AddScalar(x))
    }

    pub fn abs(&mut self, x: Var) -> Var {
        self.map_op(x, f64::abs, Op::Abs(x))
    }

    pub fn square(&mut self, x: Var) -> Var {
        self.map_op(x, |v| v * v, Op::Square(x))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.map_op(x, |v| v.max(0.0), Op::Relu(x))
    }

    pub fn sqrt(&mut self, x: Var) -> Var {
        self.map_op(x, f64::sqrt, Op::Sqrt(x))
    }

    /// Nearest-neighbour ×2 upsampling along time.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let (c, t) = self.value(x).dims2();
        let xv = &self.value(x).data;
        let data = (0..c * 2 * t).map(|i| xv[(i / (2 * t)) * t + (i % (2 * t)) / 2]).collect();
        self.push(Tensor::new(vec![c, 2 * t], data), Op::Upsample2(x), &[x])
    }

    /// Maximum over time per channel: `[C, T] → [C]`.
    pub fn max_pool_time(&mut self, x: Var) -> Var {
        let (c, t) = self.value(x).dims2();
        let xv = &self.value(x).data;
        let mut out = Vec::with_capacity(c);
        let mut argmax = Vec::with_capacity(c);
        for ch in 0..c {
            let row = &xv[ch * t..(ch + 1) * t];
            let (i, m) = row
                .iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |(bi, bm), (i, &v)| if v > bm { (i, v) } else { (bi, bm) });
            out.push(m);
            argmax.push(i);
        }
        self.push(Tensor::vector(out), Op::MaxPoolTime { x, argmax }, &[x])
    }

    /// Mean over time per channel: `[C, T] → [C]`.
    pub fn mean_time(&mut self, x: Var) -> Var {
        let (c, t) = self.value(x).dims2();
        let xv = &self.value(x).data;
        let out = (0..c).map(|ch| xv[ch * t..(ch + 1) * t].iter().sum::<f64>() / t as f64).collect();
        self.push(Tensor::vector(out), Op::MeanTime(x), &[x])
    }

    /// `w [Out, In] · x [In] + b [Out]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let (o, i) = self.value(w).dims2();
        assert_eq!(self.value(x).len(), i, "linear expects {i} inputs, got {}", self.value(x).len());
        let (xv, wv, bv) = (&self.value(x).data, &self.value(w).data, &self.value(b).data);
        let out = (0..o).map(|r| dot(&wv[r * i..(r + 1) * i], xv) + bv[r]).collect();
        self.push(Tensor::vector(out), Op::Linear { x, w, b }, &[x, w, b])
    }

    /// Contiguous range of a flattened tensor, as a vector.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let data = self.value(x).data[start..start + len].to_vec();
        self.push(Tensor::vector(data), Op::Slice { x, start }, &[x])
    }

    /// Normalizes each quaternion of a `[4J, T]` rotation tensor.
    pub fn quat_normalize(&mut self, x: Var) -> Var {
        let (c, t) = self.value(x).dims2();
        assert_eq!(c % 4, 0, "quaternion channels must be a multiple of 4");
        let xv = &self.value(x).data;
        let mut out = xv.clone();
        let mut norms = Vec::with_capacity(c / 4 * t);
        for j in 0..c / 4 {
            for ti in 0..t {
                let n = (0..4).map(|k| xv[(4 * j + k) * t + ti].powi(2)).sum::<f64>().sqrt().max(1e-8);
                for k in 0..4 {
                    out[(4 * j + k) * t + ti] /= n;
                }
                norms.push(n);
            }
        }
        self.push(Tensor::new(vec![c, t], out), Op::QuatNormalize { x, norms }, &[x])
    }

    /// Root-free forward kinematics: `[4J, T]` rotations → `[3J, T]` positions.
    pub fn fk(&mut self, x: Var, skel: &'a SkeletonTopology) -> Var {
        let (c, t) = self.value(x).dims2();
        let j_len = skel.num_joints();
        assert_eq!(c, 4 * j_len, "FK expects {} channels, got {c}", 4 * j_len);
        let xv = &self.value(x).data;
        let mut out = vec![0.0; 3 * j_len * t];
        for ti in 0..t {
            let local = frame_quats(xv, j_len, t, ti);
            let (pos, _) = crate::kinematics::fk_frame(skel, &local, [0.0; 3]);
            for (j, p) in pos.iter().enumerate() {
                for k in 0..3 {
                    out[(3 * j + k) * t + ti] = p[k];
                }
            }
        }
        self.push(Tensor::new(vec![3 * j_len, t], out), Op::Fk { x, skel }, &[x])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x), &[x])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data.iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x), &[x])
    }

    /// Euclidean norm of the flattened tensor (subgradient 0 at the origin).
    pub fn norm(&mut self, x: Var) -> Var {
        let n = self.value(x).data.iter().map(|v| v * v).sum::<f64>().sqrt();
        self.push(Tensor::scalar(n), Op::Norm(x), &[x])
    }

    /// Mean of several same-shaped nodes.
    pub fn average(&mut self, xs: &[Var]) -> Var {
        assert!(!xs.is_empty(), "average of nothing");
        let mut acc = xs[0];
        for &x in &xs[1..] {
            acc = self.add(acc, x);
        }
        if xs.len() == 1 {
            acc
        } else {
            self.scale(acc, 1.0 / xs.len() as f64)
        }
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(self.value(root).len(), 1, "backward needs a scalar root");
        let n = self.nodes.len();
        let mut grads: Vec<Option<Tensor>> = (0..n).map(|_| None).collect();
        grads[root.0] = Some(Tensor::new(self.value(root).shape.clone(), vec![1.0]));
        let mut params = ParamGrads::empty(self.store.map_or(0, ParamStore::len));

        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads, &mut params);
            grads[i] = Some(g);
        }
        Gradients { nodes: grads, params }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn propagate(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>], params: &mut ParamGrads) {
        let acc = |grads: &mut [Option<Tensor>], v: Var, t: Tensor| match &mut grads[v.0] {
            Some(e) => e.add_assign(&t),
            slot @ None => *slot = Some(t),
        };
        let out = self.value(Var(i));
        match &self.nodes[i].op {
            Op::Constant | Op::Input => {}
            Op::Param(id) => match &mut params.grads[id.0] {
                Some(e) => e.add_assign(g),
                slot @ None => *slot = Some(g.clone()),
            },
            Op::Conv1d { x, w, b, stride, pad, reflect, cols } => {
                let (cin, t_in) = self.value(*x).dims2();
                let ws = &self.value(*w).shape;
                let (cout, k) = (ws[0], ws[2]);
                let t_out = out.shape[1];
                let r = cin * k;
                if self.wants(*b) {
                    let db = (0..cout).map(|co| g.data[co * t_out..(co + 1) * t_out].iter().sum()).collect();
                    acc(grads, *b, Tensor::vector(db));
                }
                if self.wants(*w) {
                    let mut dw = vec![0.0; cout * r];
                    for co in 0..cout {
                        let row = &mut dw[co * r..(co + 1) * r];
                        for to in 0..t_out {
                            axpy(row, g.data[co * t_out + to], &cols[to * r..(to + 1) * r]);
                        }
                    }
                    acc(grads, *w, Tensor::new(ws.clone(), dw));
                }
                if self.wants(*x) {
                    let wv = &self.value(*w).data;
                    let mut dcols = vec![0.0; t_out * r];
                    for to in 0..t_out {
                        let row = &mut dcols[to * r..(to + 1) * r];
                        for co in 0..cout {
                            axpy(row, g.data[co * t_out + to], &wv[co * r..(co + 1) * r]);
                        }
                    }
                    let mut dx = vec![0.0; cin * t_in];
                    for to in 0..t_out {
                        for ci in 0..cin {
                            for kk in 0..k {
                                if let Some(ti) = conv_tap((to * stride + kk) as isize - *pad as isize, t_in, *reflect) {
                                    dx[ci * t_in + ti] += dcols[to * r + ci * k + kk];
                                }
                            }
                        }
                    }
                    acc(grads, *x, Tensor::new(vec![cin, t_in], dx));
                }
            }
            Op::LeakyRelu { x, slope } => {
                let xv = &self.value(*x).data;
                let d = xv.iter().zip(&g.data).map(|(v, g)| if *v > 0.0 { *g } else { slope * g }).collect();
                acc(grads, *x, Tensor::new(out.shape.clone(), d));
            }
            Op::InstanceNorm { x, inv_std } => {
                let (c, t) = out.dims2();
                let mut dx = vec![0.0; c * t];
                let tf = t as f64;
                for ch in 0..c {
                    let y = &out.data[ch * t..(ch + 1) * t];
                    let gy = &g.data[ch * t..(ch + 1) * t];
                    let sg: f64 = gy.iter().sum();
                    let sgy = dot(gy, y);
                    for ti in 0..t {
                        dx[ch * t + ti] = inv_std[ch] / tf * (tf * gy[ti] - sg - y[ti] * sgy);
                    }
                }
                acc(grads, *x, Tensor::new(vec![c, t], dx));
            }
            Op::ScaleShift { x, gamma, beta, normed } => {
                let (c, t) = out.dims2();
                let xv = &self.value(*normed).data;
                let gm = &self.value(*gamma).data;
                if self.wants(*x) {
                    let dx = (0..c * t).map(|i| g.data[i] * gm[i / t]).collect();
                    acc(grads, *x, Tensor::new(vec![c, t], dx));
                }
                if self.wants(*gamma) {
                    let dg = (0..c).map(|ch| dot(&g.data[ch * t..(ch + 1) * t], &xv[ch * t..(ch + 1) * t])).collect();
                    acc(grads, *gamma, Tensor::new(self.value(*gamma).shape.clone(), dg));
                }
                if self.wants(*beta) {
                    let db = (0..c).map(|ch| g.data[ch * t..(ch + 1) * t].iter().sum()).collect();
                    acc(grads, *beta, Tensor::new(self.value(*beta).shape.clone(), db));
                }
            }
            Op::Add(a, b) => {
                if self.wants(*a) {
                    acc(grads, *a, g.clone());
                }
                if self.wants(*b) {
                    acc(grads, *b, g.clone());
                }
            }
            Op::Sub(a, b) => {
                if self.wants(*a) {
                    acc(grads, *a, g.clone());
                }
                if self.wants(*b) {
                    let mut n = g.clone();
                    n.data.iter_mut().for_each(|v| *v = -*v);
                    acc(grads, *b, n);
                }
            }
            Op::Mul(a, b) => {
                let (av, bv) = (&self.value(*a).data, &self.value(*b).data);
                if self.wants(*a) {
                    let d = g.data.iter().zip(bv).map(|(g, b)| g * b).collect();
                    acc(grads, *a, Tensor::new(out.shape.clone(), d));
                }
                if self.wants(*b) {
                    let d = g.data.iter().zip(av).map(|(g, a)| g * a).collect();
                    acc(grads, *b, Tensor::new(out.shape.clone(), d));
                }
            }
            Op::Scale(x, s) => {
                let d = g.data.iter().map(|v| v * s).collect();
                acc(grads, *x, Tensor::new(out.shape.clone(), d));
            }
            Op::AddScalar(x) => acc(grads, *x, g.clone()),
            Op::Upsample2(x) => {
                let (c, t) = self.value(*x).dims2();
                let mut dx = vec![0.0; c * t];
                for (idx, gv) in g.data.iter().enumerate() {
                    dx[(idx / (2 * t)) * t + (idx % (2 * t)) / 2] += gv;
                }
                acc(grads, *x, Tensor::new(vec![c, t], dx));
            }
            Op::MaxPoolTime { x, argmax } => {
                let (c, t) = self.value(*x).dims2();
                let mut dx = vec![0.0; c * t];
                for ch in 0..c {
                    dx[ch * t + argmax[ch]] = g.data[ch];
                }
                acc(grads, *x, Tensor::new(vec![c, t], dx));
            }
            Op::MeanTime(x) => {
                let (c, t) = self.value(*x).dims2();
                let dx = (0..c * t).map(|i| g.data[i / t] / t as f64).collect();
                acc(grads, *x, Tensor::new(vec![c, t], dx));
            }
            Op::Linear { x, w, b } => {
                let (o, n_in) = self.value(*w).dims2();
                if self.wants(*b) {
                    acc(grads, *b, Tensor::vector(g.data.clone()));
                }
                if self.wants(*w) {
                    let xv = &self.value(*x).data;
                    let mut dw = vec![0.0; o * n_in];
                    for r in 0..o {
                        axpy(&mut dw[r * n_in..(r + 1) * n_in], g.data[r], xv);
                    }
                    acc(grads, *w, Tensor::matrix(o, n_in, dw));
                }
                if self.wants(*x) {
                    let wv = &self.value(*w).data;
                    let mut dx = vec![0.0; n_in];
                    for r in 0..o {
                        axpy(&mut dx, g.data[r], &wv[r * n_in..(r + 1) * n_in]);
                    }
                    acc(grads, *x, Tensor::new(self.value(*x).shape.clone(), dx));
                }
            }
            Op::Slice { x, start } => {
                let src = self.value(*x);
                let mut dx = Tensor::zeros(src.shape.clone());
                dx.data[*start..*start + g.len()].copy_from_slice(&g.data);
                acc(grads, *x, dx);
            }
            Op::QuatNormalize { x, norms } => {
                let (c, t) = out.dims2();
                let mut dx = vec![0.0; c * t];
                for j in 0..c / 4 {
                    for ti in 0..t {
                        let n = norms[j * t + ti];
                        let idx = |k: usize| (4 * j + k) * t + ti;
                        let yg: f64 = (0..4).map(|k| out.data[idx(k)] * g.data[idx(k)]).sum();
                        for k in 0..4 {
                            dx[idx(k)] = (g.data[idx(k)] - out.data[idx(k)] * yg) / n;
                        }
                    }
                }
                acc(grads, *x, Tensor::new(vec![c, t], dx));
            }
            Op::Fk { x, skel } => {
                let (c, t) = self.value(*x).dims2();
                let j_len = skel.num_joints();
                let xv = &self.value(*x).data;
                let mut dx = vec![0.0; c * t];
                for ti in 0..t {
                    let local = frame_quats(xv, j_len, t, ti);
                    let gp: Vec<[f64; 3]> = (0..j_len)
                        .map(|j| std::array::from_fn(|k| g.data[(3 * j + k) * t + ti]))
                        .collect();
                    let gq = crate::kinematics::fk_frame_backward(skel, &local, &gp);
                    for (j, q) in gq.iter().enumerate() {
                        for k in 0..4 {
                            dx[(4 * j + k) * t + ti] = q[k];
                        }
                    }
                }
                acc(grads, *x, Tensor::new(vec![c, t], dx));
            }
            Op::Abs(x) => {
                let xv = &self.value(*x).data;
                let d = xv.iter().zip(&g.data).map(|(v, g)| g * sign(*v)).collect();
                acc(grads, *x, Tensor::new(out.shape.clone(), d));
            }
            Op::Square(x) => {
                let xv = &self.value(*x).data;
                let d = xv.iter().zip(&g.data).map(|(v, g)| 2.0 * v * g).collect();
                acc(grads, *x, Tensor::new(out.shape.clone(), d));
            }
            Op::Relu(x) => {
                let xv = &self.value(*x).data;
                let d = xv.iter().zip(&g.data).map(|(v, g)| if *v > 0.0 { *g } else { 0.0 }).collect();
                acc(grads, *x, Tensor::new(out.shape.clone(), d));
            }
            Op::Sqrt(x) => {
                let d = out.data.iter().zip(&g.data).map(|(y, g)| if *y > 0.0 { g / (2.0 * y) } else { 0.0 }).collect();
                acc(grads, *x, Tensor::new(out.shape.clone(), d));
            }
            Op::Sum(x) => {
                let s = self.value(*x).shape.clone();
                let n = self.value(*x).len();
                acc(grads, *x, Tensor::new(s, vec![g.item(); n]));
            }
            Op::Mean(x) => {
                let s = self.value(*x).shape.clone();
                let n = self.value(*x).len();
                acc(grads, *x, Tensor::new(s, vec![g.item() / n as f64; n]));
            }
            Op::Norm(x) => {
                let xv = self.value(*x);
                let nrm = out.item();
                let d = if nrm > 0.0 {
                    xv.data.iter().map(|v| g.item() * v / nrm).collect()
                } else {
                    vec![0.0; xv.len()]
                };
                acc(grads, *x, Tensor::new(xv.shape.clone(), d));
            }
        }
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn frame_quats(data: &[f64], joints: usize, t: usize, ti: usize) -> Vec<Quaternion> {
    (0..joints)
        .map(|j| {
            Quaternion::new(
                data[(4 * j) * t + ti],
                data[(4 * j + 1) * t + ti],
                data[(4 * j + 2) * t + ti],
                data[(4 * j + 3) * t + ti],
            )
        })
        .collect()
}

/// Sum in ascending order, so any permutation of the terms gives the same bits.
/// Input time step read by a conv tap at padded position `ti`, if any.
fn conv_tap(ti: isize, t_in: usize, reflect: bool) -> Option<usize> {
    let n = t_in as isize;
    if (0..n).contains(&ti) {
        return Some(ti as usize);
    }
    if !reflect {
        return None;
    }
    let r = if ti < 0 { -ti } else { 2 * (n - 1) - ti };
    (0..n).contains(&r).then_some(r as usize)
}

fn sorted_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.collect();
    v.sort_by(f64::total_cmp);
    v.iter().sum()
}
