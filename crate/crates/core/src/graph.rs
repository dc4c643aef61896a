//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation as a node holding its forward value.
//! [`Tape::backward`] walks the nodes in reverse creation order and
//! accumulates adjoints. Only the handful of operations needed by the
//! networks and losses in this crate are provided; each carries a
//! hand-derived backward rule.
//!
//! Shapes are checked with assertions: callers (the loss and model layers)
//! validate user-facing shapes and return errors before building nodes.

use ndarray::{concatenate, s, Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

/// Pointwise nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    LeakyRelu,
    Tanh,
    Identity,
}

const LEAKY_SLOPE: f64 = 0.01;

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            // written out so NaN propagates
            Activation::Relu => {
                if x < 0.0 {
                    0.0
                } else {
                    x
                }
            }
            Activation::LeakyRelu => {
                if x > 0.0 {
                    x
                } else {
                    LEAKY_SLOPE * x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if x > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

enum Op {
    Input,
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddConst(Var),
    MulConst(Var, Array2<f64>),
    Activate(Var, Activation),
    Square(Var),
    Sum(Var),
    Mean(Var),
    RowSum(Var),
    Transpose(Var),
    HCat(Vec<Var>),
    VCat(Vec<Var>),
    /// Stores the row norms.
    NormalizeRows(Var, Array1<f64>),
    /// Stores the per-column `sqrt(var + eps)`.
    StandardizeCols(Var, Array1<f64>),
    /// Stores the row-wise softmax.
    SoftmaxCrossEntropy(Var, Vec<usize>, Array2<f64>),
    /// Stores d(loss)/d(logit) for a unit upstream adjoint.
    BceWithLogits(Var, Array2<f64>),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    tracked: bool,
}

/// Recorded computation.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Adjoints produced by [`Tape::backward`], indexed by [`Var`].
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<f64>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

fn scalar(x: f64) -> Array2<f64> {
    Array2::from_elem((1, 1), x)
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    /// Differentiable input.
    pub fn input(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Input, true)
    }

    /// Non-differentiable input.
    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Input, false)
    }

    /// Copies the value of `v` into a new constant node (stop-gradient).
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.constant(value)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    /// Value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        let value = self.value(v);
        debug_assert_eq!(value.dim(), (1, 1));
        value[[0, 0]]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(value, Op::MatMul(a, b), tracked)
    }

    /// `a + row`, broadcasting a 1×m row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.value(row).nrows(), 1);
        let value = self.value(a) + self.value(row);
        let tracked = self.tracked(a) || self.tracked(row);
        self.push(value, Op::AddRow(a, row), tracked)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b));
        let value = self.value(a) + self.value(b);
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(value, Op::Add(a, b), tracked)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b));
        let value = self.value(a) - self.value(b);
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(value, Op::Sub(a, b), tracked)
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.shape(a), self.shape(b));
        let value = self.value(a) * self.value(b);
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(value, Op::Mul(a, b), tracked)
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) * c;
        let tracked = self.tracked(a);
        self.push(value, Op::Scale(a, c), tracked)
    }

    /// `a + c` for a same-shaped constant.
    pub fn add_const(&mut self, a: Var, c: &Array2<f64>) -> Var {
        assert_eq!(self.value(a).dim(), c.dim());
        let value = self.value(a) + c;
        let tracked = self.tracked(a);
        self.push(value, Op::AddConst(a), tracked)
    }

    /// `a ⊙ c` for a same-shaped constant.
    pub fn mul_const(&mut self, a: Var, c: Array2<f64>) -> Var {
        assert_eq!(self.value(a).dim(), c.dim());
        let value = self.value(a) * &c;
        let tracked = self.tracked(a);
        self.push(value, Op::MulConst(a, c), tracked)
    }

    pub fn activate(&mut self, a: Var, act: Activation) -> Var {
        if act == Activation::Identity {
            return a;
        }
        let value = self.value(a).mapv(|x| act.apply(x));
        let tracked = self.tracked(a);
        self.push(value, Op::Activate(a, act), tracked)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x * x);
        let tracked = self.tracked(a);
        self.push(value, Op::Square(a), tracked)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = scalar(self.value(a).sum());
        let tracked = self.tracked(a);
        self.push(value, Op::Sum(a), tracked)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let value = scalar(v.sum() / v.len() as f64);
        let tracked = self.tracked(a);
        self.push(value, Op::Mean(a), tracked)
    }

    /// Row sums as an n×1 column.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let value = self.value(a).sum_axis(Axis(1)).insert_axis(Axis(1));
        let tracked = self.tracked(a);
        self.push(value, Op::RowSum(a), tracked)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().to_owned();
        let tracked = self.tracked(a);
        self.push(value, Op::Transpose(a), tracked)
    }

    /// Column-wise concatenation.
    pub fn hcat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        if parts.len() == 1 {
            return parts[0];
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = concatenate(Axis(1), &views).expect("hcat row mismatch");
        let tracked = parts.iter().any(|&p| self.tracked(p));
        self.push(value, Op::HCat(parts.to_vec()), tracked)
    }

    /// Row-wise concatenation.
    pub fn vcat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        if parts.len() == 1 {
            return parts[0];
        }
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = concatenate(Axis(0), &views).expect("vcat column mismatch");
        let tracked = parts.iter().any(|&p| self.tracked(p));
        self.push(value, Op::VCat(parts.to_vec()), tracked)
    }

    /// Scales every row to unit L2 norm. Rows must be nonzero.
    pub fn normalize_rows(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let norms = x.map_axis(Axis(1), |r| r.dot(&r).sqrt());
        let value = x / &norms.view().insert_axis(Axis(1));
        let tracked = self.tracked(a);
        self.push(value, Op::NormalizeRows(a, norms), tracked)
    }

    /// Standardizes every column to zero mean and `var/(var+eps)` variance
    /// using population statistics over the rows.
    pub fn standardize_cols(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let n = x.nrows() as f64;
        let mean = x.sum_axis(Axis(0)) / n;
        let centered = x - &mean.view().insert_axis(Axis(0));
        let var = centered.mapv(|c| c * c).sum_axis(Axis(0)) / n;
        let denom = var.mapv(|v| (v + eps).sqrt());
        let value = centered / &denom.view().insert_axis(Axis(0));
        let tracked = self.tracked(a);
        self.push(value, Op::StandardizeCols(a, denom), tracked)
    }

    /// Mean over rows of `-log softmax(logits)[row, target]`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let x = self.value(logits);
        assert_eq!(x.nrows(), targets.len());
        let mut probs = Array2::zeros(x.dim());
        let mut total = 0.0;
        for (i, row) in x.outer_iter().enumerate() {
            let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let mut z = 0.0;
            for (j, &v) in row.iter().enumerate() {
                let e = (v - max).exp();
                probs[[i, j]] = e;
                z += e;
            }
            probs.row_mut(i).mapv_inplace(|e| e / z);
            total += z.ln() + max - row[targets[i]];
        }
        let value = scalar(total / targets.len() as f64);
        let tracked = self.tracked(logits);
        self.push(
            value,
            Op::SoftmaxCrossEntropy(logits, targets.to_vec(), probs),
            tracked,
        )
    }

    /// Mean binary cross-entropy of `sigmoid(logits)` against `targets`, with
    /// each log-probability clamped below at `ln(eps)`.
    pub fn bce_with_logits(&mut self, logits: Var, targets: &Array2<f64>, eps: f64) -> Var {
        let x = self.value(logits);
        assert_eq!(x.dim(), targets.dim());
        let floor = eps.ln();
        let count = x.len() as f64;
        let mut total = 0.0;
        let mut dlogit = Array2::zeros(x.dim());
        for ((z, t), d) in x.iter().zip(targets.iter()).zip(dlogit.iter_mut()) {
            if z.is_nan() {
                total = f64::NAN;
                *d = f64::NAN;
                continue;
            }
            let p = sigmoid(*z);
            // ln p = -softplus(-z), ln(1-p) = -softplus(z)
            let log_p = -softplus(-z);
            let log_q = -softplus(*z);
            let mut grad = 0.0;
            if log_p > floor {
                total -= t * log_p;
                grad -= t * (1.0 - p);
            } else {
                total -= t * floor;
            }
            if log_q > floor {
                total -= (1.0 - t) * log_q;
                grad += (1.0 - t) * p;
            } else {
                total -= (1.0 - t) * floor;
            }
            *d = grad / count;
        }
        let value = scalar(total / count);
        let tracked = self.tracked(logits);
        self.push(value, Op::BceWithLogits(logits, dlogit), tracked)
    }

    /// Adjoints of every tracked node with respect to the 1×1 node `out`.
    pub fn backward(&self, out: Var) -> Gradients {
        assert_eq!(self.shape(out), (1, 1), "backward needs a scalar output");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; out.0 + 1];
        grads[out.0] = Some(scalar(1.0));
        for i in (0..=out.0).rev() {
            if !self.nodes[i].tracked {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
        if !self.tracked(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(existing) => *existing += &g,
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, i: usize, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Input => {}
            Op::MatMul(a, b) => {
                if self.tracked(*a) {
                    self.accumulate(grads, *a, g.dot(&self.value(*b).t()));
                }
                if self.tracked(*b) {
                    self.accumulate(grads, *b, self.value(*a).t().dot(g));
                }
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                if self.tracked(*row) {
                    self.accumulate(grads, *row, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                if self.tracked(*b) {
                    self.accumulate(grads, *b, -g);
                }
            }
            Op::Mul(a, b) => {
                if self.tracked(*a) {
                    self.accumulate(grads, *a, g * self.value(*b));
                }
                if self.tracked(*b) {
                    self.accumulate(grads, *b, g * self.value(*a));
                }
            }
            Op::Scale(a, c) => self.accumulate(grads, *a, g * *c),
            Op::AddConst(a) => self.accumulate(grads, *a, g.clone()),
            Op::MulConst(a, c) => self.accumulate(grads, *a, g * c),
            Op::Activate(a, act) => {
                let mut d = g.clone();
                let x = self.value(*a);
                ndarray::Zip::from(&mut d)
                    .and(x)
                    .and(&node.value)
                    .for_each(|d, &x, &y| *d *= act.derivative(x, y));
                self.accumulate(grads, *a, d);
            }
            Op::Square(a) => self.accumulate(grads, *a, g * &(self.value(*a) * 2.0)),
            Op::Sum(a) => {
                let shape = self.shape(*a);
                self.accumulate(grads, *a, Array2::from_elem(shape, g[[0, 0]]));
            }
            Op::Mean(a) => {
                let shape = self.shape(*a);
                let n = (shape.0 * shape.1) as f64;
                self.accumulate(grads, *a, Array2::from_elem(shape, g[[0, 0]] / n));
            }
            Op::RowSum(a) => {
                let shape = self.shape(*a);
                let d = g.broadcast(shape).expect("row_sum broadcast").to_owned();
                self.accumulate(grads, *a, d);
            }
            Op::Transpose(a) => self.accumulate(grads, *a, g.t().to_owned()),
            Op::HCat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.shape(p).1;
                    if self.tracked(p) {
                        self.accumulate(grads, p, g.slice(s![.., offset..offset + w]).to_owned());
                    }
                    offset += w;
                }
            }
            Op::VCat(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let h = self.shape(p).0;
                    if self.tracked(p) {
                        self.accumulate(grads, p, g.slice(s![offset..offset + h, ..]).to_owned());
                    }
                    offset += h;
                }
            }
            Op::NormalizeRows(a, norms) => {
                // dx = (dy - y (dy·y)) / |x|
                let y = &node.value;
                let dots = (g * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                let d = (g - &(y * &dots)) / &norms.view().insert_axis(Axis(1));
                self.accumulate(grads, *a, d);
            }
            Op::StandardizeCols(a, denom) => {
                // dx = (dy - mean(dy) - y mean(dy ⊙ y)) / s, column-wise
                let y = &node.value;
                let n = y.nrows() as f64;
                let mean_g = g.sum_axis(Axis(0)) / n;
                let mean_gy = (g * y).sum_axis(Axis(0)) / n;
                let d = (g - &mean_g.view().insert_axis(Axis(0))
                    - &(y * &mean_gy.view().insert_axis(Axis(0))))
                    / &denom.view().insert_axis(Axis(0));
                self.accumulate(grads, *a, d);
            }
            Op::SoftmaxCrossEntropy(a, targets, probs) => {
                let n = targets.len() as f64;
                let mut d = probs.clone();
                for (i, &t) in targets.iter().enumerate() {
                    d[[i, t]] -= 1.0;
                }
                d *= g[[0, 0]] / n;
                self.accumulate(grads, *a, d);
            }
            Op::BceWithLogits(a, dlogit) => self.accumulate(grads, *a, dlogit * g[[0, 0]]),
        }
    }
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
pub fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}
