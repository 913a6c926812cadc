//! Reverse-mode differentiation over a linear recording of primitive ops.
//!
//! A [`Tape`] borrows a [`ParamSet`] read-only, records every operation in
//! evaluation order, and [`Tape::backward`] walks the recording in reverse to
//! accumulate gradients for every parameter the loss depends on.

use super::{Gradients, NumError, ParamId, ParamSet, Tensor};

/// Handle to a node recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param(ParamId),
    EmbedRow { table: ParamId, row: usize },
    MatVec(Var, Var),
    MatTVec(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    ScaleBy(Var, Var),
    Affine { x: Var, scale: f64 },
    Div(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Sum(Vec<Var>),
    Stack(Vec<Var>),
    Norm(Var),
    Dot(Var, Var),
    Softmax(Var),
    LogSoftmax(Var),
    Pick { x: Var, index: usize },
    Mean(Vec<Var>),
}

struct Node {
    value: Tensor,
    op: Op,
}

pub struct Tape<'p> {
    params: &'p ParamSet,
    nodes: Vec<Node>,
    param_nodes: Vec<Option<Var>>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_values(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

fn log_softmax_values(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let log_total = x.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
    x.iter().map(|v| v - log_total).collect()
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamSet) -> Self {
        Tape {
            params,
            nodes: Vec::new(),
            param_nodes: vec![None; params.len()],
        }
    }

    pub fn params(&self) -> &'p ParamSet {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// The value of a scalar node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.item()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn data(&self, v: Var) -> &[f64] {
        self.nodes[v.0].value.data()
    }

    fn same_len(&self, a: Var, b: Var, what: &str) -> Result<usize, NumError> {
        let (la, lb) = (self.data(a).len(), self.data(b).len());
        if la != lb {
            return Err(NumError::Shape(format!(
                "{what}: lengths {la} and {lb} differ"
            )));
        }
        Ok(la)
    }

    /// Records a constant leaf that receives no parameter gradient.
    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input)
    }

    /// Leaf node for a registered parameter; repeated calls share one node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_nodes[id.0] {
            return v;
        }
        let v = self.push(self.params.get(id).clone(), Op::Param(id));
        self.param_nodes[id.0] = Some(v);
        v
    }

    /// Row `row` of a parameter matrix, without materializing the whole table.
    pub fn embed_row(&mut self, table: ParamId, row: usize) -> Result<Var, NumError> {
        let t = self.params.get(table);
        if row >= t.rows() {
            return Err(NumError::Shape(format!(
                "row {row} outside table with {} rows",
                t.rows()
            )));
        }
        let value = Tensor::vector(t.row(row).to_vec());
        Ok(self.push(value, Op::EmbedRow { table, row }))
    }

    /// `w · x` for `w: [r, c]` and `x: [c]`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var, NumError> {
        let wt = self.value(w);
        let (r, c) = (wt.rows(), wt.cols());
        let xs = self.data(x);
        if wt.shape().len() != 2 || xs.len() != c {
            return Err(NumError::Shape(format!(
                "matvec: matrix {:?} by vector of length {}",
                wt.shape(),
                xs.len()
            )));
        }
        let wd = wt.data();
        let out: Vec<f64> = (0..r)
            .map(|i| {
                wd[i * c..(i + 1) * c]
                    .iter()
                    .zip(xs)
                    .map(|(a, b)| a * b)
                    .sum()
            })
            .collect();
        Ok(self.push(Tensor::vector(out), Op::MatVec(w, x)))
    }

    /// `wᵀ · x` for `w: [r, c]` and `x: [r]`.
    pub fn mattvec(&mut self, w: Var, x: Var) -> Result<Var, NumError> {
        let wt = self.value(w);
        let (r, c) = (wt.rows(), wt.cols());
        let xs = self.data(x);
        if wt.shape().len() != 2 || xs.len() != r {
            return Err(NumError::Shape(format!(
                "mattvec: matrix {:?} by vector of length {}",
                wt.shape(),
                xs.len()
            )));
        }
        let wd = wt.data();
        let mut out = vec![0.0; c];
        for i in 0..r {
            let xi = xs[i];
            for (o, w) in out.iter_mut().zip(&wd[i * c..(i + 1) * c]) {
                *o += w * xi;
            }
        }
        Ok(self.push(Tensor::vector(out), Op::MatTVec(w, x)))
    }

    fn zip_with(
        &mut self,
        a: Var,
        b: Var,
        what: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var, NumError> {
        self.same_len(a, b, what)?;
        let shape = self.value(a).shape().to_vec();
        let data = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| f(*x, *y))
            .collect();
        Ok(self.push(Tensor::new(shape, data)?, op))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.zip_with(a, b, "add", |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.zip_with(a, b, "sub", |x, y| x - y, Op::Sub(a, b))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.zip_with(a, b, "mul", |x, y| x * y, Op::Mul(a, b))
    }

    /// Elementwise quotient.
    pub fn div(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.zip_with(a, b, "div", |x, y| x / y, Op::Div(a, b))
    }

    /// Multiplies every element of `x` by the scalar node `s`.
    pub fn scale_by(&mut self, x: Var, s: Var) -> Result<Var, NumError> {
        if self.data(s).len() != 1 {
            return Err(NumError::Shape("scale_by: factor is not a scalar".into()));
        }
        let k = self.data(s)[0];
        let t = self.value(x);
        let value = Tensor::new(t.shape().to_vec(), t.data().iter().map(|v| v * k).collect())?;
        Ok(self.push(value, Op::ScaleBy(x, s)))
    }

    /// `scale * x + shift`, elementwise with constant coefficients.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let t = self.value(x);
        let value = Tensor::new(
            t.shape().to_vec(),
            t.data().iter().map(|v| scale * v + shift).collect(),
        )
        .expect("same shape");
        self.push(value, Op::Affine { x, scale })
    }

    /// `1 - x`, elementwise.
    pub fn one_minus(&mut self, x: Var) -> Var {
        self.affine(x, -1.0, 1.0)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let value = Tensor::new(
            t.shape().to_vec(),
            t.data().iter().map(|&v| sigmoid(v)).collect(),
        )
        .expect("same shape");
        self.push(value, Op::Sigmoid(x))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let value = Tensor::new(
            t.shape().to_vec(),
            t.data().iter().map(|v| v.tanh()).collect(),
        )
        .expect("same shape");
        self.push(value, Op::Tanh(x))
    }

    /// Concatenates vectors end to end.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        let data: Vec<f64> = parts
            .iter()
            .flat_map(|&p| self.data(p).iter().copied())
            .collect();
        self.push(Tensor::vector(data), Op::Concat(parts.to_vec()))
    }

    /// Elements `start..start + len` of a vector.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Result<Var, NumError> {
        let xs = self.data(x);
        if start + len > xs.len() {
            return Err(NumError::Shape(format!(
                "slice {start}..{} of vector with {} elements",
                start + len,
                xs.len()
            )));
        }
        let value = Tensor::vector(xs[start..start + len].to_vec());
        Ok(self.push(value, Op::Slice { x, start }))
    }

    /// Elementwise sum of equally shaped nodes, accumulated in argument order.
    pub fn sum(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        let first = *parts
            .first()
            .ok_or_else(|| NumError::Shape("sum of nothing".into()))?;
        let mut acc = self.value(first).clone();
        for &p in &parts[1..] {
            self.same_len(first, p, "sum")?;
            for (a, b) in acc.data_mut().iter_mut().zip(self.data(p)) {
                *a += b;
            }
        }
        Ok(self.push(acc, Op::Sum(parts.to_vec())))
    }

    /// Stacks equal-length vectors as the rows of a matrix.
    pub fn stack(&mut self, rows: &[Var]) -> Result<Var, NumError> {
        let first = *rows
            .first()
            .ok_or_else(|| NumError::Shape("stack of nothing".into()))?;
        let cols = self.data(first).len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for &r in rows {
            self.same_len(first, r, "stack")?;
            data.extend_from_slice(self.data(r));
        }
        let value = Tensor::matrix(rows.len(), cols, data)?;
        Ok(self.push(value, Op::Stack(rows.to_vec())))
    }

    /// Euclidean norm, a scalar.
    pub fn norm(&mut self, x: Var) -> Var {
        let n = self.value(x).norm();
        self.push(Tensor::scalar(n), Op::Norm(x))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var, NumError> {
        self.same_len(a, b, "dot")?;
        let d = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(x, y)| x * y)
            .sum();
        Ok(self.push(Tensor::scalar(d), Op::Dot(a, b)))
    }

    pub fn softmax(&mut self, x: Var) -> Var {
        let value = Tensor::vector(softmax_values(self.data(x)));
        self.push(value, Op::Softmax(x))
    }

    pub fn log_softmax(&mut self, x: Var) -> Var {
        let value = Tensor::vector(log_softmax_values(self.data(x)));
        self.push(value, Op::LogSoftmax(x))
    }

    /// Element `index` of a vector, as a scalar.
    pub fn pick(&mut self, x: Var, index: usize) -> Result<Var, NumError> {
        let v = *self.data(x).get(index).ok_or_else(|| {
            NumError::Shape(format!("pick {index} from length {}", self.data(x).len()))
        })?;
        Ok(self.push(Tensor::scalar(v), Op::Pick { x, index }))
    }

    /// Mean of scalar nodes.
    pub fn mean(&mut self, parts: &[Var]) -> Result<Var, NumError> {
        if parts.is_empty() {
            return Err(NumError::Shape("mean of nothing".into()));
        }
        let mut total = 0.0;
        for &p in parts {
            if self.data(p).len() != 1 {
                return Err(NumError::Shape("mean expects scalar nodes".into()));
            }
            total += self.data(p)[0];
        }
        let value = Tensor::scalar(total / parts.len() as f64);
        Ok(self.push(value, Op::Mean(parts.to_vec())))
    }

    /// Negative log-probability of class `target` under `softmax(logits)`.
    pub fn cross_entropy(&mut self, logits: Var, target: usize) -> Result<Var, NumError> {
        let lp = self.log_softmax(logits);
        let picked = self.pick(lp, target)?;
        Ok(self.affine(picked, -1.0, 0.0))
    }

    /// Gradients of the scalar `loss` with respect to every parameter.
    ///
    /// Parameters the loss does not depend on receive zeros.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumError> {
        if !self.value(loss).is_scalar() {
            return Err(NumError::Shape(format!(
                "loss must be scalar, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        if let Some((i, _)) = self.nodes[..=loss.0]
            .iter()
            .enumerate()
            .find(|(_, n)| !n.value.is_finite())
        {
            return Err(NumError::Numerical(format!(
                "non-finite value at node {i} ({:?})",
                self.nodes[i].op
            )));
        }

        let mut grads = Gradients::zeros_like(self.params);
        let mut adj: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let node = &self.nodes[idx];
            let y = node.value.data();
            match &node.op {
                Op::Input => {}
                Op::Param(id) => {
                    for (a, b) in grads.get_mut(*id).data_mut().iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                Op::EmbedRow { table, row } => {
                    let t = grads.get_mut(*table);
                    let c = t.cols();
                    for (a, b) in t.data_mut()[row * c..(row + 1) * c].iter_mut().zip(&g) {
                        *a += b;
                    }
                }
                Op::MatVec(w, x) => {
                    let wt = self.value(*w);
                    let c = wt.cols();
                    let xs = self.data(*x);
                    let wd = wt.data();
                    let gw = slot(&mut adj, *w, wd.len());
                    for (i, gi) in g.iter().enumerate() {
                        for (a, xj) in gw[i * c..(i + 1) * c].iter_mut().zip(xs) {
                            *a += gi * xj;
                        }
                    }
                    let gx = slot(&mut adj, *x, c);
                    for (i, gi) in g.iter().enumerate() {
                        for (a, wij) in gx.iter_mut().zip(&wd[i * c..(i + 1) * c]) {
                            *a += gi * wij;
                        }
                    }
                }
                Op::MatTVec(w, x) => {
                    let wt = self.value(*w);
                    let (r, c) = (wt.rows(), wt.cols());
                    let xs = self.data(*x);
                    let wd = wt.data();
                    let gw = slot(&mut adj, *w, wd.len());
                    for i in 0..r {
                        for (a, gj) in gw[i * c..(i + 1) * c].iter_mut().zip(&g) {
                            *a += xs[i] * gj;
                        }
                    }
                    let gx = slot(&mut adj, *x, r);
                    for (i, a) in gx.iter_mut().enumerate() {
                        *a += wd[i * c..(i + 1) * c]
                            .iter()
                            .zip(&g)
                            .map(|(w, gj)| w * gj)
                            .sum::<f64>();
                    }
                }
                Op::Add(a, b) => {
                    add_into(slot(&mut adj, *a, g.len()), &g, 1.0);
                    add_into(slot(&mut adj, *b, g.len()), &g, 1.0);
                }
                Op::Sub(a, b) => {
                    add_into(slot(&mut adj, *a, g.len()), &g, 1.0);
                    add_into(slot(&mut adj, *b, g.len()), &g, -1.0);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (self.data(*a), self.data(*b));
                    let ga = slot(&mut adj, *a, g.len());
                    for ((s, gi), bi) in ga.iter_mut().zip(&g).zip(bv) {
                        *s += gi * bi;
                    }
                    let gb = slot(&mut adj, *b, g.len());
                    for ((s, gi), ai) in gb.iter_mut().zip(&g).zip(av) {
                        *s += gi * ai;
                    }
                }
                Op::ScaleBy(x, s) => {
                    let k = self.data(*s)[0];
                    let xs = self.data(*x);
                    add_into(slot(&mut adj, *x, g.len()), &g, k);
                    let ds: f64 = g.iter().zip(xs).map(|(gi, xi)| gi * xi).sum();
                    slot(&mut adj, *s, 1)[0] += ds;
                }
                Op::Affine { x, scale } => {
                    add_into(slot(&mut adj, *x, g.len()), &g, *scale);
                }
                Op::Div(a, b) => {
                    let (av, bv) = (self.data(*a), self.data(*b));
                    let ga = slot(&mut adj, *a, g.len());
                    for ((s, gi), bi) in ga.iter_mut().zip(&g).zip(bv) {
                        *s += gi / bi;
                    }
                    let gb = slot(&mut adj, *b, g.len());
                    for (((s, gi), ai), bi) in gb.iter_mut().zip(&g).zip(av).zip(bv) {
                        *s -= gi * ai / (bi * bi);
                    }
                }
                Op::Sigmoid(x) => {
                    let gx = slot(&mut adj, *x, g.len());
                    for ((s, gi), yi) in gx.iter_mut().zip(&g).zip(y) {
                        *s += gi * yi * (1.0 - yi);
                    }
                }
                Op::Tanh(x) => {
                    let gx = slot(&mut adj, *x, g.len());
                    for ((s, gi), yi) in gx.iter_mut().zip(&g).zip(y) {
                        *s += gi * (1.0 - yi * yi);
                    }
                }
                Op::Concat(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let n = self.data(p).len();
                        add_into(slot(&mut adj, p, n), &g[offset..offset + n], 1.0);
                        offset += n;
                    }
                }
                Op::Slice { x, start } => {
                    let n = self.data(*x).len();
                    add_into(
                        &mut slot(&mut adj, *x, n)[*start..*start + g.len()],
                        &g,
                        1.0,
                    );
                }
                Op::Sum(parts) => {
                    for &p in parts {
                        add_into(slot(&mut adj, p, g.len()), &g, 1.0);
                    }
                }
                Op::Stack(rows) => {
                    let c = node.value.cols();
                    for (r, &p) in rows.iter().enumerate() {
                        add_into(slot(&mut adj, p, c), &g[r * c..(r + 1) * c], 1.0);
                    }
                }
                Op::Norm(x) => {
                    let n = y[0];
                    if n > 0.0 {
                        let xs = self.data(*x);
                        let gx = slot(&mut adj, *x, xs.len());
                        for (s, xi) in gx.iter_mut().zip(xs) {
                            *s += g[0] * xi / n;
                        }
                    }
                }
                Op::Dot(a, b) => {
                    let (av, bv) = (self.data(*a), self.data(*b));
                    add_into(slot(&mut adj, *a, bv.len()), bv, g[0]);
                    add_into(slot(&mut adj, *b, av.len()), av, g[0]);
                }
                Op::Softmax(x) => {
                    let inner: f64 = g.iter().zip(y).map(|(gi, yi)| gi * yi).sum();
                    let gx = slot(&mut adj, *x, g.len());
                    for ((s, gi), yi) in gx.iter_mut().zip(&g).zip(y) {
                        *s += yi * (gi - inner);
                    }
                }
                Op::LogSoftmax(x) => {
                    let total: f64 = g.iter().sum();
                    let gx = slot(&mut adj, *x, g.len());
                    for ((s, gi), yi) in gx.iter_mut().zip(&g).zip(y) {
                        *s += gi - yi.exp() * total;
                    }
                }
                Op::Pick { x, index } => {
                    let n = self.data(*x).len();
                    slot(&mut adj, *x, n)[*index] += g[0];
                }
                Op::Mean(parts) => {
                    let share = g[0] / parts.len() as f64;
                    for &p in parts {
                        slot(&mut adj, p, 1)[0] += share;
                    }
                }
            }
        }

        if !grads.is_finite() {
            return Err(NumError::Numerical("non-finite gradient".into()));
        }
        Ok(grads)
    }
}

fn slot(adj: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    adj[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64], k: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += k * s;
    }
}
