//! Tape-based reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] owns every node created during a forward pass. Nodes are
//! appended after their parents, so the node index order is a topological
//! order and [`Graph::backward`] is a single reverse sweep.
//!
//! Only the handful of operations the models and losses need are provided.
//! Apart from [`Graph::add_bias`], operands must have exactly matching shapes.
//!
//! ```
//! use detach_lab::autodiff::{Graph, Tensor};
//!
//! let mut g = Graph::new();
//! let x = g.leaf(Tensor::from_rows(&[vec![0.0, 0.0, 0.0]]).unwrap());
//! let p = g.softmax_rows(x).unwrap();
//! let pt = g.gather_true(p, &[1]).unwrap();
//! let lp = g.log(pt);
//! let loss = g.mean(lp);
//! g.backward(loss).unwrap();
//! let grad = g.grad(x).unwrap();
//! assert!((grad[1] - 2.0 / 3.0).abs() < 1e-12);
//! ```

use crate::error::{shape_err, LabError, Result};

/// Dense row-major array of `f64` with an explicit shape.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(shape_err("Tensor::new", "positive dimensions", format!("{shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(shape_err("Tensor::new", expected, data.len()));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self { shape, data: vec![0.0; len] }
    }

    pub fn scalar(value: f64) -> Self {
        Self { shape: vec![1], data: vec![value] }
    }

    pub fn vector(data: Vec<f64>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    /// Builds an `m x n` matrix from equally long rows.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = rows.len();
        let n = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n) {
            return Err(shape_err("Tensor::from_rows", "rows of equal length", "ragged rows"));
        }
        Self::new(vec![m, n], rows.concat())
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(rows, cols)` for a rank-2 tensor.
    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[m, n] => Ok((m, n)),
            other => Err(shape_err(op, "rank-2 tensor", format!("{other:?}"))),
        }
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let n = self.shape[self.shape.len() - 1];
        &self.data[i * n..(i + 1) * n]
    }

    fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Constant,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Mul(Var, Var),
    Relu(Var),
    ConcatCols(Var, Var),
    SoftmaxRows(Var),
    Log(Var),
    Powf(Var, f64),
    Affine(Var, f64),
    Clamp(Var, f64, f64),
    GatherTrue(Var, Vec<usize>),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// A single-threaded computation graph.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        self.grads.push(None);
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Differentiable input (a parameter or anything whose gradient is wanted).
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Input that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Constant, false)
    }

    /// Copies the value of `t` into a parentless node; gradient stops here.
    pub fn detach(&mut self, t: Var) -> Var {
        let value = self.nodes[t.0].value.clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Accumulated gradient of `v`, if any backward pass reached it.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }

    /// Gradient of `v` as a tensor, zeros when nothing reached it.
    pub fn grad_tensor(&self, v: Var) -> Tensor {
        let value = &self.nodes[v.0].value;
        match &self.grads[v.0] {
            Some(g) => Tensor { shape: value.shape.clone(), data: g.clone() },
            None => Tensor::zeros(value.shape.clone()),
        }
    }

    pub fn zero_grad(&mut self) {
        self.grads.iter_mut().for_each(|g| *g = None);
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.value(a).dims2("matmul")?;
        let (k2, n) = self.value(b).dims2("matmul")?;
        if k != k2 {
            return Err(shape_err("matmul", format!("inner dimension {k}"), k2));
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = av[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                for (o, &bpj) in orow.iter_mut().zip(brow) {
                    *o += aip * bpj;
                }
            }
        }
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor { shape: vec![m, n], data: out }, Op::MatMul(a, b), rg))
    }

    /// `x[m x n] + b[n]`, broadcasting the bias over rows.
    pub fn add_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (m, n) = self.value(x).dims2("add_bias")?;
        let bias = self.value(b);
        if bias.shape() != [n] {
            return Err(shape_err("add_bias", format!("[{n}]"), format!("{:?}", bias.shape())));
        }
        let bv = bias.data();
        let mut out = self.value(x).data().to_vec();
        for row in out.chunks_mut(n) {
            for (o, &bj) in row.iter_mut().zip(bv) {
                *o += bj;
            }
        }
        let rg = self.needs(&[x, b]);
        Ok(self.push(Tensor { shape: vec![m, n], data: out }, Op::AddBias(x, b), rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.value(a).shape(), self.value(b).shape());
        if sa != sb {
            return Err(shape_err(op, format!("{sa:?}"), format!("{sb:?}")));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let shape = self.value(a).shape.clone();
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor { shape, data }, Op::Add(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let shape = self.value(a).shape.clone();
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor { shape, data }, Op::Mul(a, b), rg))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(|v| v.max(0.0));
        let rg = self.needs(&[x]);
        self.push(out, Op::Relu(x), rg)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, ca) = self.value(a).dims2("concat_cols")?;
        let (m2, cb) = self.value(b).dims2("concat_cols")?;
        if m != m2 {
            return Err(shape_err("concat_cols", format!("{m} rows"), m2));
        }
        let mut data = Vec::with_capacity(m * (ca + cb));
        for i in 0..m {
            data.extend_from_slice(self.value(a).row(i));
            data.extend_from_slice(self.value(b).row(i));
        }
        let rg = self.needs(&[a, b]);
        Ok(self.push(Tensor { shape: vec![m, ca + cb], data }, Op::ConcatCols(a, b), rg))
    }

    /// Row-wise softmax with max subtraction.
    pub fn softmax_rows(&mut self, x: Var) -> Result<Var> {
        let (m, c) = self.value(x).dims2("softmax_rows")?;
        let xv = self.value(x).data();
        if xv.iter().any(|v| !v.is_finite()) {
            return Err(LabError::NonFinite { context: "softmax_rows input".into() });
        }
        let mut data = Vec::with_capacity(m * c);
        for row in xv.chunks(c) {
            data.extend(softmax(row));
        }
        let rg = self.needs(&[x]);
        Ok(self.push(Tensor { shape: vec![m, c], data }, Op::SoftmaxRows(x), rg))
    }

    /// Natural logarithm, elementwise.
    pub fn log(&mut self, x: Var) -> Var {
        let out = self.value(x).map(f64::ln);
        let rg = self.needs(&[x]);
        self.push(out, Op::Log(x), rg)
    }

    /// `x^exponent`, elementwise.
    pub fn powf(&mut self, x: Var, exponent: f64) -> Var {
        let out = self.value(x).map(|v| v.powf(exponent));
        let rg = self.needs(&[x]);
        self.push(out, Op::Powf(x, exponent), rg)
    }

    /// `scale * x + shift`, elementwise.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let out = self.value(x).map(|v| scale * v + shift);
        let rg = self.needs(&[x]);
        self.push(out, Op::Affine(x, scale), rg)
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        self.affine(x, factor, 0.0)
    }

    /// Clamps into `[lo, hi]`; gradient passes only where the input was inside.
    pub fn clamp(&mut self, x: Var, lo: f64, hi: f64) -> Var {
        let out = self.value(x).map(|v| v.clamp(lo, hi));
        let rg = self.needs(&[x]);
        self.push(out, Op::Clamp(x, lo, hi), rg)
    }

    /// Selects `p[i, labels[i]]` for each row, producing a length-`m` vector.
    pub fn gather_true(&mut self, p: Var, labels: &[usize]) -> Result<Var> {
        let (m, c) = self.value(p).dims2("gather_true")?;
        if labels.len() != m {
            return Err(shape_err("gather_true", format!("{m} labels"), labels.len()));
        }
        let pv = self.value(p).data();
        let mut data = Vec::with_capacity(m);
        for (i, &l) in labels.iter().enumerate() {
            if l >= c {
                return Err(LabError::Index { op: "gather_true", index: l, bound: c });
            }
            data.push(pv[i * c + l]);
        }
        let rg = self.needs(&[p]);
        Ok(self.push(Tensor { shape: vec![m], data }, Op::GatherTrue(p, labels.to_vec()), rg))
    }

    /// Arithmetic mean of all elements, as a shape-`[1]` tensor.
    pub fn mean(&mut self, x: Var) -> Var {
        let xv = self.value(x).data();
        let mean = xv.iter().sum::<f64>() / xv.len() as f64;
        let rg = self.needs(&[x]);
        self.push(Tensor::scalar(mean), Op::Mean(x), rg)
    }

    /// Propagates d`out`/d(node) into every reachable node that requires grad.
    ///
    /// Gradients accumulate across calls until [`Graph::zero_grad`].
    pub fn backward(&mut self, out: Var) -> Result<()> {
        if self.value(out).len() != 1 {
            return Err(LabError::Contract(format!(
                "backward requires a scalar, got shape {:?}",
                self.value(out).shape()
            )));
        }
        if !self.nodes[out.0].requires_grad {
            return Ok(());
        }
        let mut local: Vec<Option<Vec<f64>>> = vec![None; out.0 + 1];
        local[out.0] = Some(vec![1.0]);

        for idx in (0..=out.0).rev() {
            let Some(upstream) = local[idx].take() else { continue };
            self.propagate(idx, &upstream, &mut local);
            accumulate(&mut self.grads[idx], &upstream);
        }
        Ok(())
    }

    fn propagate(&self, idx: usize, dy: &[f64], local: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[idx];
        let y = node.value.data();
        let mut send = |v: Var, g: Vec<f64>| {
            if self.nodes[v.0].requires_grad {
                accumulate(&mut local[v.0], &g);
            }
        };
        match &node.op {
            Op::Leaf | Op::Constant => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k) = (av.shape[0], av.shape[1]);
                let n = bv.shape[1];
                if self.nodes[a.0].requires_grad {
                    // dA = dY B^T
                    let mut da = vec![0.0; m * k];
                    for i in 0..m {
                        let dyr = &dy[i * n..(i + 1) * n];
                        for p in 0..k {
                            let brow = &bv.data[p * n..(p + 1) * n];
                            da[i * k + p] = dyr.iter().zip(brow).map(|(x, y)| x * y).sum();
                        }
                    }
                    send(*a, da);
                }
                if self.nodes[b.0].requires_grad {
                    // dB = A^T dY
                    let mut db = vec![0.0; k * n];
                    for i in 0..m {
                        let dyr = &dy[i * n..(i + 1) * n];
                        for p in 0..k {
                            let aip = av.data[i * k + p];
                            let dbrow = &mut db[p * n..(p + 1) * n];
                            for (d, &g) in dbrow.iter_mut().zip(dyr) {
                                *d += aip * g;
                            }
                        }
                    }
                    send(*b, db);
                }
            }
            Op::AddBias(x, b) => {
                let n = self.value(*b).len();
                send(*x, dy.to_vec());
                let mut db = vec![0.0; n];
                for row in dy.chunks(n) {
                    for (d, &g) in db.iter_mut().zip(row) {
                        *d += g;
                    }
                }
                send(*b, db);
            }
            Op::Add(a, b) => {
                send(*a, dy.to_vec());
                send(*b, dy.to_vec());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                send(*a, dy.iter().zip(bv).map(|(g, b)| g * b).collect());
                send(*b, dy.iter().zip(av).map(|(g, a)| g * a).collect());
            }
            Op::Relu(x) => {
                let xv = self.value(*x).data();
                send(*x, dy.iter().zip(xv).map(|(&g, &v)| if v > 0.0 { g } else { 0.0 }).collect());
            }
            Op::ConcatCols(a, b) => {
                let ca = self.value(*a).shape[1];
                let cb = self.value(*b).shape[1];
                let (mut da, mut db) = (Vec::new(), Vec::new());
                for row in dy.chunks(ca + cb) {
                    da.extend_from_slice(&row[..ca]);
                    db.extend_from_slice(&row[ca..]);
                }
                send(*a, da);
                send(*b, db);
            }
            Op::SoftmaxRows(x) => {
                let c = node.value.shape[1];
                let mut dx = Vec::with_capacity(dy.len());
                for (yr, gr) in y.chunks(c).zip(dy.chunks(c)) {
                    let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                    dx.extend(yr.iter().zip(gr).map(|(&yi, &gi)| yi * (gi - dot)));
                }
                send(*x, dx);
            }
            Op::Log(x) => {
                let xv = self.value(*x).data();
                send(*x, dy.iter().zip(xv).map(|(g, v)| g / v).collect());
            }
            Op::Powf(x, e) => {
                let xv = self.value(*x).data();
                send(*x, dy.iter().zip(xv).map(|(g, v)| g * e * v.powf(e - 1.0)).collect());
            }
            Op::Affine(x, s) => send(*x, dy.iter().map(|g| g * s).collect()),
            Op::Clamp(x, lo, hi) => {
                let xv = self.value(*x).data();
                send(
                    *x,
                    dy.iter()
                        .zip(xv)
                        .map(|(&g, &v)| if v >= *lo && v <= *hi { g } else { 0.0 })
                        .collect(),
                );
            }
            Op::GatherTrue(p, labels) => {
                let c = self.value(*p).shape[1];
                let mut dp = vec![0.0; self.value(*p).len()];
                for (i, (&l, &g)) in labels.iter().zip(dy).enumerate() {
                    dp[i * c + l] += g;
                }
                send(*p, dp);
            }
            Op::Mean(x) => {
                let n = self.value(*x).len();
                send(*x, vec![dy[0] / n as f64; n]);
            }
        }
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: &[f64]) {
    match slot {
        Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
        None => *slot = Some(g.to_vec()),
    }
}

/// Numerically stable softmax of one row.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = row.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}
