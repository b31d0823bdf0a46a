//! Matrix-valued reverse-mode differentiation and small feed-forward
//! networks.
//!
//! A [`Graph`] records operations on dense `f64` matrices during the forward
//! pass. [`Graph::backward`] walks the record in reverse and returns a
//! [`Gradients`] table; networks then pull their parameter gradients out of
//! it with [`MlpNetwork::accumulate_grads`]. Nodes are appended in evaluation
//! order, so reverse index order is a valid topological order.

use ndarray::{Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Matrix = Array2<f64>;

/// Stabilizer inside the differentiable correlation denominator.
pub const PEARSON_EPSILON: f64 = 1e-12;

/// A trainable parameter: value plus accumulated gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub value: Matrix,
    pub grad: Matrix,
    pub requires_grad: bool,
}

impl Tensor {
    pub fn new(value: Matrix, requires_grad: bool) -> Self {
        let grad = Matrix::zeros(value.raw_dim());
        Self {
            value,
            grad,
            requires_grad,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.dim()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }
}

/// Handle to a node in a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Add(NodeId, NodeId),
    Scale(NodeId, f64),
    Relu(NodeId),
    SoftmaxRows(NodeId),
    Column(NodeId, usize),
    Pearson(NodeId, NodeId),
    Sum(NodeId),
    SumScalars(Vec<NodeId>),
    CrossEntropy(NodeId, Vec<usize>),
}

#[derive(Debug, Clone)]
struct Node {
    value: Matrix,
    op: Op,
    tracked: bool,
}

/// Operation record for one forward/backward pass.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradient of a scalar loss with respect to every tracked leaf. Interior
/// gradients are released during the reverse pass.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Matrix> {
        self.grads.get(id.0).and_then(|g| g.as_ref())
    }
}

fn softmax_in_place(m: &mut Matrix) {
    for mut row in m.rows_mut() {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
}

/// Row-wise softmax of a logit matrix.
pub fn softmax_rows(logits: &Matrix) -> Matrix {
    let mut out = logits.clone();
    softmax_in_place(&mut out);
    out
}

struct PearsonParts {
    cx: Vec<f64>,
    cy: Vec<f64>,
    cov: f64,
    vx: f64,
    vy: f64,
    denom: f64,
}

fn pearson_parts(x: &Matrix, y: &Matrix) -> PearsonParts {
    let n = x.len() as f64;
    let mx = x.sum() / n;
    let my = y.sum() / n;
    let cx: Vec<f64> = x.iter().map(|v| v - mx).collect();
    let cy: Vec<f64> = y.iter().map(|v| v - my).collect();
    let cov = cx.iter().zip(&cy).map(|(a, b)| a * b).sum::<f64>() / n;
    let vx = cx.iter().map(|a| a * a).sum::<f64>() / n;
    let vy = cy.iter().map(|b| b * b).sum::<f64>() / n;
    let denom = (vx * vy + PEARSON_EPSILON).sqrt();
    PearsonParts {
        cx,
        cy,
        cov,
        vx,
        vy,
        denom,
    }
}

fn scalar(v: f64) -> Matrix {
    Matrix::from_elem((1, 1), v)
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

    fn push(&mut self, value: Matrix, op: Op, tracked: bool) -> NodeId {
        self.nodes.push(Node { value, op, tracked });
        NodeId(self.nodes.len() - 1)
    }

    fn tracked(&self, id: NodeId) -> bool {
        self.nodes[id.0].tracked
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    /// Value of a 1x1 node.
    pub fn scalar(&self, id: NodeId) -> f64 {
        self.nodes[id.0].value[[0, 0]]
    }

    /// Untracked input.
    pub fn constant(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf mirroring a parameter; tracked iff the tensor requires grad.
    pub fn param(&mut self, t: &Tensor) -> NodeId {
        self.push(t.value.clone(), Op::Leaf, t.requires_grad)
    }

    /// Tracked leaf built from a raw matrix (used by gradient checks).
    pub fn variable(&mut self, value: Matrix) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ar, ac) = self.value(a).dim();
        let (br, bc) = self.value(b).dim();
        if ac != br {
            return Err(Error::ShapeMismatch(format!(
                "matmul {ar}x{ac} by {br}x{bc}"
            )));
        }
        let v = self.value(a).dot(self.value(b));
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(v, Op::MatMul(a, b), t))
    }

    /// `a + b` with the single row of `b` broadcast over the rows of `a`.
    pub fn add_row(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ar, ac) = self.value(a).dim();
        let (br, bc) = self.value(b).dim();
        if br != 1 || bc != ac {
            return Err(Error::ShapeMismatch(format!(
                "row broadcast {ar}x{ac} + {br}x{bc}"
            )));
        }
        let v = self.value(a) + self.value(b);
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(v, Op::AddRow(a, b), t))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.value(a).dim() != self.value(b).dim() {
            return Err(Error::ShapeMismatch(format!(
                "add {:?} + {:?}",
                self.value(a).dim(),
                self.value(b).dim()
            )));
        }
        let v = self.value(a) + self.value(b);
        let t = self.tracked(a) || self.tracked(b);
        Ok(self.push(v, Op::Add(a, b), t))
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a) * c;
        let t = self.tracked(a);
        self.push(v, Op::Scale(a, c), t)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).mapv(|x| x.max(0.0));
        let t = self.tracked(a);
        self.push(v, Op::Relu(a), t)
    }

    pub fn softmax_rows(&mut self, a: NodeId) -> NodeId {
        let v = softmax_rows(self.value(a));
        let t = self.tracked(a);
        self.push(v, Op::SoftmaxRows(a), t)
    }

    /// Column `k` as an `n x 1` node.
    pub fn column(&mut self, a: NodeId, k: usize) -> Result<NodeId> {
        let (r, c) = self.value(a).dim();
        if k >= c {
            return Err(Error::ShapeMismatch(format!("column {k} of {r}x{c}")));
        }
        let v = self.value(a).column(k).to_owned().insert_axis(Axis(1));
        let t = self.tracked(a);
        Ok(self.push(v, Op::Column(a, k), t))
    }

    /// Stabilized Pearson correlation of two column vectors, as a 1x1 node.
    pub fn pearson(&mut self, x: NodeId, y: NodeId) -> Result<NodeId> {
        let (xr, xc) = self.value(x).dim();
        let (yr, yc) = self.value(y).dim();
        if xc != 1 || yc != 1 || xr != yr || xr < 2 {
            return Err(Error::ShapeMismatch(format!(
                "pearson needs equal columns of length >= 2, got {xr}x{xc} and {yr}x{yc}"
            )));
        }
        let p = pearson_parts(self.value(x), self.value(y));
        let t = self.tracked(x) || self.tracked(y);
        Ok(self.push(scalar(p.cov / p.denom), Op::Pearson(x, y), t))
    }

    pub fn sum(&mut self, a: NodeId) -> NodeId {
        let v = scalar(self.value(a).sum());
        let t = self.tracked(a);
        self.push(v, Op::Sum(a), t)
    }

    /// Sum of many 1x1 nodes.
    pub fn sum_scalars(&mut self, terms: &[NodeId]) -> Result<NodeId> {
        let mut total = 0.0;
        let mut t = false;
        for &id in terms {
            if self.value(id).dim() != (1, 1) {
                return Err(Error::ShapeMismatch("sum_scalars needs 1x1 terms".into()));
            }
            total += self.scalar(id);
            t |= self.tracked(id);
        }
        Ok(self.push(scalar(total), Op::SumScalars(terms.to_vec()), t))
    }

    /// Mean negative log-likelihood of `labels` under the row softmax of
    /// `logits`.
    pub fn cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let (r, c) = self.value(logits).dim();
        if labels.len() != r || labels.iter().any(|&l| l >= c) {
            return Err(Error::ShapeMismatch(format!(
                "cross entropy on {r}x{c} logits with {} labels",
                labels.len()
            )));
        }
        let lv = self.value(logits);
        let mut total = 0.0;
        for (row, &label) in lv.rows().into_iter().zip(labels) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            total += lse - row[label];
        }
        let t = self.tracked(logits);
        Ok(self.push(
            scalar(total / r as f64),
            Op::CrossEntropy(logits, labels.to_vec()),
            t,
        ))
    }

    /// Reverse pass from a scalar node.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let (rows, cols) = self.value(loss).dim();
        if (rows, cols) != (1, 1) {
            return Err(Error::NotScalar { rows, cols });
        }
        let mut grads: Vec<Option<Matrix>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(scalar(1.0));

        fn acc(grads: &mut [Option<Matrix>], id: NodeId, g: Matrix) {
            match &mut grads[id.0] {
                Some(existing) => *existing += &g,
                slot => *slot = Some(g),
            }
        }

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.tracked {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                }
                Op::MatMul(a, b) => {
                    if self.tracked(*a) {
                        acc(&mut grads, *a, g.dot(&self.value(*b).t()));
                    }
                    if self.tracked(*b) {
                        acc(&mut grads, *b, self.value(*a).t().dot(&g));
                    }
                }
                Op::AddRow(a, b) => {
                    if self.tracked(*b) {
                        acc(&mut grads, *b, g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    }
                    if self.tracked(*a) {
                        acc(&mut grads, *a, g.clone());
                    }
                }
                Op::Add(a, b) => {
                    if self.tracked(*a) {
                        acc(&mut grads, *a, g.clone());
                    }
                    if self.tracked(*b) {
                        acc(&mut grads, *b, g.clone());
                    }
                }
                Op::Scale(a, c) => acc(&mut grads, *a, g * *c),
                Op::Relu(a) => {
                    let mut ga = g;
                    ga.zip_mut_with(self.value(*a), |gv, &x| {
                        if x <= 0.0 {
                            *gv = 0.0
                        }
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let s = &node.value;
                    let mut ga = Matrix::zeros(s.raw_dim());
                    for ((mut out, srow), grow) in
                        ga.rows_mut().into_iter().zip(s.rows()).zip(g.rows())
                    {
                        let dot: f64 = srow.iter().zip(grow.iter()).map(|(a, b)| a * b).sum();
                        for ((o, sv), gv) in out.iter_mut().zip(srow.iter()).zip(grow.iter()) {
                            *o = sv * (gv - dot);
                        }
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Column(a, k) => {
                    let mut ga = Matrix::zeros(self.value(*a).raw_dim());
                    ga.column_mut(*k).assign(&g.column(0));
                    acc(&mut grads, *a, ga);
                }
                Op::Pearson(x, y) => {
                    let p = pearson_parts(self.value(*x), self.value(*y));
                    let n = p.cx.len() as f64;
                    let up = g[[0, 0]];
                    let d3 = p.denom * p.denom * p.denom;
                    let grad_wrt = |own: &[f64], other: &[f64], other_var: f64| {
                        Matrix::from_shape_fn((own.len(), 1), |(i, _)| {
                            up * (other[i] / (n * p.denom) - p.cov * other_var * own[i] / (n * d3))
                        })
                    };
                    if self.tracked(*x) {
                        acc(&mut grads, *x, grad_wrt(&p.cx, &p.cy, p.vy));
                    }
                    if self.tracked(*y) {
                        acc(&mut grads, *y, grad_wrt(&p.cy, &p.cx, p.vx));
                    }
                }
                Op::Sum(a) => {
                    let ga = Matrix::from_elem(self.value(*a).raw_dim(), g[[0, 0]]);
                    acc(&mut grads, *a, ga);
                }
                Op::SumScalars(terms) => {
                    for t in terms {
                        if self.tracked(*t) {
                            acc(&mut grads, *t, g.clone());
                        }
                    }
                }
                Op::CrossEntropy(a, labels) => {
                    let mut probs = softmax_rows(self.value(*a));
                    let r = labels.len() as f64;
                    for (mut row, &label) in probs.rows_mut().into_iter().zip(labels) {
                        row[label] -= 1.0;
                    }
                    probs.mapv_inplace(|v| v * g[[0, 0]] / r);
                    acc(&mut grads, *a, probs);
                }
            }
        }
        Ok(Gradients { grads })
    }
}

/// Glorot-uniform initialized multilayer perceptron with rectifier hidden
/// layers and linear output logits.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpNetwork {
    layer_sizes: Vec<usize>,
    weights: Vec<Tensor>,
    biases: Vec<Tensor>,
}

/// Graph handles for one network's parameters.
#[derive(Debug, Clone)]
pub struct BoundNetwork {
    weights: Vec<NodeId>,
    biases: Vec<NodeId>,
}

/// JSON form of a network: layer sizes plus flat row-major arrays.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParameters {
    pub layer_sizes: Vec<usize>,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpNetwork {
    pub fn new<R: Rng + ?Sized>(layer_sizes: &[usize], rng: &mut R) -> Result<Self> {
        Self::validate_sizes(layer_sizes)?;
        let mut weights = Vec::new();
        let mut biases = Vec::new();
        for w in layer_sizes.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let s = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let value = Matrix::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-s..s));
            weights.push(Tensor::new(value, true));
            biases.push(Tensor::new(Matrix::zeros((1, fan_out)), true));
        }
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
        })
    }

    /// All weights and biases zero.
    pub fn zeros(layer_sizes: &[usize]) -> Result<Self> {
        Self::validate_sizes(layer_sizes)?;
        let weights = layer_sizes
            .windows(2)
            .map(|w| Tensor::new(Matrix::zeros((w[0], w[1])), true))
            .collect();
        let biases = layer_sizes[1..]
            .iter()
            .map(|&k| Tensor::new(Matrix::zeros((1, k)), true))
            .collect();
        Ok(Self {
            layer_sizes: layer_sizes.to_vec(),
            weights,
            biases,
        })
    }

    fn validate_sizes(layer_sizes: &[usize]) -> Result<()> {
        if layer_sizes.len() < 2 || layer_sizes.contains(&0) {
            return Err(Error::Config(format!(
                "layer sizes must list at least input and output widths, all positive: {layer_sizes:?}"
            )));
        }
        Ok(())
    }

    pub fn layer_sizes(&self) -> &[usize] {
        &self.layer_sizes
    }

    pub fn input_width(&self) -> usize {
        self.layer_sizes[0]
    }

    pub fn output_width(&self) -> usize {
        *self.layer_sizes.last().unwrap()
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w, b])
    }

    pub fn params_mut(&mut self) -> impl Iterator<Item = &mut Tensor> {
        self.weights
            .iter_mut()
            .zip(self.biases.iter_mut())
            .flat_map(|(w, b)| [w, b])
    }

    pub fn bind(&self, g: &mut Graph) -> BoundNetwork {
        BoundNetwork {
            weights: self.weights.iter().map(|w| g.param(w)).collect(),
            biases: self.biases.iter().map(|b| g.param(b)).collect(),
        }
    }

    /// Output logits on the graph.
    pub fn forward_logits(&self, g: &mut Graph, bound: &BoundNetwork, x: NodeId) -> Result<NodeId> {
        let cols = g.value(x).ncols();
        if cols != self.input_width() {
            return Err(Error::ShapeMismatch(format!(
                "input has {cols} columns, network expects {}",
                self.input_width()
            )));
        }
        let last = bound.weights.len() - 1;
        let mut h = x;
        for (i, (&w, &b)) in bound.weights.iter().zip(&bound.biases).enumerate() {
            let z = g.matmul(h, w)?;
            let z = g.add_row(z, b)?;
            h = if i < last { g.relu(z) } else { z };
        }
        Ok(h)
    }

    /// Row-wise softmax outputs on the graph.
    pub fn forward_softmax_node(
        &self,
        g: &mut Graph,
        bound: &BoundNetwork,
        x: NodeId,
    ) -> Result<NodeId> {
        let logits = self.forward_logits(g, bound, x)?;
        Ok(g.softmax_rows(logits))
    }

    /// Logits without recording a graph.
    pub fn logits(&self, x: &Matrix) -> Result<Matrix> {
        if x.ncols() != self.input_width() {
            return Err(Error::ShapeMismatch(format!(
                "input has {} columns, network expects {}",
                x.ncols(),
                self.input_width()
            )));
        }
        let last = self.weights.len() - 1;
        let mut h = x.dot(&self.weights[0].value) + &self.biases[0].value;
        for i in 1..=last {
            h.mapv_inplace(|v| v.max(0.0));
            h = h.dot(&self.weights[i].value) + &self.biases[i].value;
        }
        Ok(h)
    }

    /// Class probabilities (`n x m`, rows summing to one).
    pub fn forward_softmax(&self, x: &Matrix) -> Result<Matrix> {
        let mut out = self.logits(x)?;
        softmax_in_place(&mut out);
        Ok(out)
    }

    /// Adds this pass's parameter gradients into each tensor's `grad`.
    pub fn accumulate_grads(&mut self, bound: &BoundNetwork, grads: &Gradients) {
        let ids = bound
            .weights
            .iter()
            .zip(&bound.biases)
            .flat_map(|(w, b)| [*w, *b]);
        for (t, id) in self.params_mut().zip(ids) {
            if let Some(g) = grads.get(id) {
                if g.dim() == t.grad.dim() {
                    t.grad += g;
                }
            }
        }
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().for_each(Tensor::zero_grad);
    }

    pub fn sgd_step(&mut self, learning_rate: f64) {
        for t in self.params_mut() {
            sgd_update(t, learning_rate);
        }
    }

    pub fn to_parameters(&self) -> MlpParameters {
        MlpParameters {
            layer_sizes: self.layer_sizes.clone(),
            weights: self
                .weights
                .iter()
                .map(|w| w.value.iter().cloned().collect())
                .collect(),
            biases: self
                .biases
                .iter()
                .map(|b| b.value.iter().cloned().collect())
                .collect(),
        }
    }

    pub fn from_parameters(p: &MlpParameters) -> Result<Self> {
        let mut net = Self::zeros(&p.layer_sizes)?;
        if p.weights.len() != net.weights.len() || p.biases.len() != net.biases.len() {
            return Err(Error::ShapeMismatch("parameter layer count".into()));
        }
        for (t, flat) in net.weights.iter_mut().zip(&p.weights) {
            t.value = Matrix::from_shape_vec(t.value.raw_dim(), flat.clone())
                .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        }
        for (t, flat) in net.biases.iter_mut().zip(&p.biases) {
            t.value = Matrix::from_shape_vec(t.value.raw_dim(), flat.clone())
                .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
        }
        Ok(net)
    }
}

fn sgd_update(t: &mut Tensor, learning_rate: f64) {
    if t.requires_grad {
        t.value.scaled_add(-learning_rate, &t.grad);
    }
}

/// `theta <- theta - lr * grad` for every tensor.
pub fn sgd_step(params: &mut [&mut Tensor], learning_rate: f64) {
    for t in params.iter_mut() {
        sgd_update(t, learning_rate);
    }
}

pub fn zero_grad(params: &mut [&mut Tensor]) {
    for t in params.iter_mut() {
        t.zero_grad();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Matrix {
        Matrix::from_shape_fn((r, c), |_| rng.random_range(-1.0..1.0))
    }

    /// Max relative error between the analytic gradient of `f` at `x0` and
    /// central differences.
    fn fd_check<F>(x0: &Matrix, f: F) -> f64
    where
        F: Fn(&mut Graph, NodeId) -> NodeId,
    {
        let mut g = Graph::new();
        let x = g.variable(x0.clone());
        let loss = f(&mut g, x);
        let grads = g.backward(loss).unwrap();
        let analytic = grads.get(x).unwrap().clone();
        let eval = |m: Matrix| {
            let mut g = Graph::new();
            let x = g.variable(m);
            let l = f(&mut g, x);
            g.scalar(l)
        };
        let h = 1e-6;
        let mut worst = 0.0f64;
        for idx in 0..x0.len() {
            let (i, j) = (idx / x0.ncols(), idx % x0.ncols());
            let mut plus = x0.clone();
            plus[[i, j]] += h;
            let mut minus = x0.clone();
            minus[[i, j]] -= h;
            let numeric = (eval(plus) - eval(minus)) / (2.0 * h);
            let a = analytic[[i, j]];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(rel);
        }
        worst
    }

    #[test]
    fn sum_of_parameter_has_unit_gradient() {
        let mut t = Tensor::new(Matrix::from_elem((2, 3), 0.7), true);
        let mut g = Graph::new();
        let p = g.param(&t);
        let s = g.sum(p);
        let grads = g.backward(s).unwrap();
        t.grad += grads.get(p).unwrap();
        assert_eq!(t.grad, Matrix::ones((2, 3)));
        // A second pass without zeroing accumulates.
        t.grad += g.backward(s).unwrap().get(p).unwrap();
        assert_eq!(t.grad, Matrix::from_elem((2, 3), 2.0));
    }

    #[test]
    fn zero_scaled_loss_gives_zero_gradient() {
        let mut g = Graph::new();
        let p = g.variable(Matrix::from_elem((2, 2), 3.0));
        let s = g.sum(p);
        let z = g.scale(s, 0.0);
        let grads = g.backward(z).unwrap();
        assert!(grads.get(p).unwrap().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn backward_requires_scalar() {
        let mut g = Graph::new();
        let p = g.variable(Matrix::zeros((2, 2)));
        assert_eq!(
            g.backward(p).unwrap_err(),
            Error::NotScalar { rows: 2, cols: 2 }
        );
    }

    #[test]
    fn softmax_examples() {
        let s = softmax_rows(&ndarray::array![[2.0, 0.0]]);
        let e2 = 2f64.exp();
        assert_abs_diff_eq!(s[[0, 0]], e2 / (e2 + 1.0), epsilon = 1e-15);
        assert_abs_diff_eq!(s[[0, 0]], 0.8808, epsilon = 1e-4);
        assert_abs_diff_eq!(s[[0, 1]], 0.1192, epsilon = 1e-4);

        let net = MlpNetwork::zeros(&[4, 3, 5]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_matrix(&mut rng, 7, 4);
        let out = net.forward_softmax(&x).unwrap();
        assert!(out.iter().all(|v| (v - 0.2).abs() < 1e-15));
    }

    #[test]
    fn softmax_rows_sum_to_one_and_are_row_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let net = MlpNetwork::new(&[3, 8, 4], &mut rng).unwrap();
        let x = random_matrix(&mut rng, 10, 3) * 5.0;
        let out = net.forward_softmax(&x).unwrap();
        for row in out.rows() {
            assert!((row.sum() - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|v| *v > 0.0 && *v < 1.0));
        }
        let order: Vec<usize> = (0..10).rev().collect();
        let permuted = x.select(Axis(0), &order);
        let out_p = net.forward_softmax(&permuted).unwrap();
        assert_eq!(out_p, out.select(Axis(0), &order));
        assert!(net.forward_softmax(&Matrix::zeros((2, 5))).is_err());
    }

    #[test]
    fn pearson_node_matches_strict_pearson() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_matrix(&mut rng, 30, 1);
        let y = random_matrix(&mut rng, 30, 1);
        let mut g = Graph::new();
        let (a, b) = (g.variable(x.clone()), g.variable(y.clone()));
        let r = g.pearson(a, b).unwrap();
        let strict =
            crate::corr_metrics::pearson(x.as_slice().unwrap(), y.as_slice().unwrap()).unwrap();
        assert_abs_diff_eq!(g.scalar(r), strict, epsilon = 1e-9);

        let self_corr = g.pearson(a, a).unwrap();
        assert_abs_diff_eq!(g.scalar(self_corr), 1.0, epsilon = 1e-9);
        let grads = g.backward(self_corr).unwrap();
        assert!(grads.get(a).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn pearson_with_constant_column_is_stable() {
        let mut g = Graph::new();
        let x = g.variable(ndarray::array![[0.1], [0.5], [0.9], [0.3]]);
        let y = g.variable(Matrix::from_elem((4, 1), 0.25));
        let r = g.pearson(x, y).unwrap();
        assert_abs_diff_eq!(g.scalar(r), 0.0, epsilon = 1e-12);
        let grads = g.backward(r).unwrap();
        for id in [x, y] {
            assert!(grads
                .get(id)
                .unwrap()
                .iter()
                .all(|v| v.is_finite() && v.abs() < 1e7));
        }
    }

    #[test]
    fn pearson_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let other = random_matrix(&mut rng, 50, 1);
        let x0 = random_matrix(&mut rng, 50, 1);
        let err = fd_check(&x0, |g, x| {
            let o = g.constant(other.clone());
            g.pearson(x, o).unwrap()
        });
        assert!(err < 1e-5, "relative error {err}");
    }

    #[test]
    fn mlp_cross_entropy_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x = random_matrix(&mut rng, 12, 3);
        let labels: Vec<usize> = (0..12).map(|i| i % 4).collect();
        let net = MlpNetwork::new(&[3, 5, 4], &mut rng).unwrap();
        let p = net.to_parameters();
        // Perturb each parameter tensor in turn through a rebuilt network.
        for layer in 0..2 {
            for is_bias in [false, true] {
                let base = if is_bias {
                    &p.biases[layer]
                } else {
                    &p.weights[layer]
                };
                let shape = if is_bias {
                    (1, p.layer_sizes[layer + 1])
                } else {
                    (p.layer_sizes[layer], p.layer_sizes[layer + 1])
                };
                let x0 = Matrix::from_shape_vec(shape, base.clone()).unwrap();
                let err = fd_check(&x0, |g, v| {
                    let mut ids = Vec::new();
                    let mut h = g.constant(x.clone());
                    for l in 0..2 {
                        let w = if !is_bias && l == layer {
                            v
                        } else {
                            g.constant(
                                Matrix::from_shape_vec(
                                    (p.layer_sizes[l], p.layer_sizes[l + 1]),
                                    p.weights[l].clone(),
                                )
                                .unwrap(),
                            )
                        };
                        let b = if is_bias && l == layer {
                            v
                        } else {
                            g.constant(
                                Matrix::from_shape_vec(
                                    (1, p.layer_sizes[l + 1]),
                                    p.biases[l].clone(),
                                )
                                .unwrap(),
                            )
                        };
                        ids.push(w);
                        let z = g.matmul(h, w).unwrap();
                        let z = g.add_row(z, b).unwrap();
                        h = if l == 0 { g.relu(z) } else { z };
                    }
                    g.cross_entropy(h, &labels).unwrap()
                });
                assert!(err < 1e-5, "layer {layer} bias {is_bias}: {err}");
            }
        }
    }

    #[test]
    fn bound_network_gradients_flow_into_tensors() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = MlpNetwork::new(&[2, 3, 2], &mut rng).unwrap();
        let mut g = Graph::new();
        let bound = net.bind(&mut g);
        let x = g.constant(random_matrix(&mut rng, 6, 2));
        let logits = net.forward_logits(&mut g, &bound, x).unwrap();
        let loss = g.cross_entropy(logits, &[0, 1, 0, 1, 1, 0]).unwrap();
        let grads = g.backward(loss).unwrap();
        net.accumulate_grads(&bound, &grads);
        assert!(net.params().any(|t| t.grad.iter().any(|v| *v != 0.0)));
        net.zero_grad();
        assert!(net.params().all(|t| t.grad.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn sgd_examples() {
        let mut t = Tensor::new(Matrix::from_elem((1, 1), 1.0), true);
        t.grad[[0, 0]] = 2.0;
        sgd_step(&mut [&mut t], 0.0);
        assert_eq!(t.value[[0, 0]], 1.0);
        sgd_step(&mut [&mut t], 0.1);
        assert_abs_diff_eq!(t.value[[0, 0]], 0.8, epsilon = 1e-15);
        zero_grad(&mut [&mut t]);
        assert_eq!(t.grad[[0, 0]], 0.0);
    }

    #[test]
    fn sgd_decreases_convex_quadratic() {
        // loss = sum((theta - 3)^2) via theta^2 expansion on the graph
        let mut t = Tensor::new(ndarray::array![[0.0, 10.0, -4.0]], true);
        let target = ndarray::array![[-3.0, -3.0, -3.0]];
        let mut last = f64::INFINITY;
        for _ in 0..10 {
            let mut g = Graph::new();
            let p = g.param(&t);
            let c = g.constant(target.clone());
            let d = g.add(p, c).unwrap();
            let dt = g.constant(g.value(d).t().to_owned());
            let sq = g.matmul(d, dt).unwrap();
            let loss = g.sum(sq);
            let value = g.scalar(loss);
            assert!(value < last);
            last = value;
            t.zero_grad();
            t.grad += g.backward(loss).unwrap().get(p).unwrap();
            sgd_step(&mut [&mut t], 0.1);
        }
    }

    #[test]
    fn parameters_json_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let net = MlpNetwork::new(&[3, 4, 2], &mut rng).unwrap();
        let json = serde_json::to_string(&net.to_parameters()).unwrap();
        let back: MlpParameters = serde_json::from_str(&json).unwrap();
        assert_eq!(MlpNetwork::from_parameters(&back).unwrap(), net);
    }
}
