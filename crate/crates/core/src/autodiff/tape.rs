use std::sync::Arc;

use thiserror::Error;

use crate::array::{self, Array};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodeId(pub usize);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdError {
    #[error("backward requires a scalar root, got shape {0:?}")]
    NonScalarRoot(Vec<usize>),
    #[error("non-finite value produced by {op} (node {node})")]
    NonFinite { op: &'static str, node: usize },
}

/// Time-major sequence layout for the recurrence/convolution primitives:
/// arrays are `[steps * batch, channels]` with row index `t * batch + b`.
/// `reset[t * batch + b]` zeroes the incoming hidden state of that row
/// before its input is consumed.
#[derive(Clone, Debug)]
pub struct SeqLayout {
    pub steps: usize,
    pub batch: usize,
    pub reset: Arc<Vec<bool>>,
}

impl SeqLayout {
    pub fn new(steps: usize, batch: usize, reset: Arc<Vec<bool>>) -> Self {
        assert_eq!(
            reset.len(),
            steps * batch,
            "SeqLayout: reset len {} != steps {} * batch {}",
            reset.len(),
            steps,
            batch
        );
        SeqLayout { steps, batch, reset }
    }

    /// No resets anywhere (single unbroken sequence per row).
    pub fn unbroken(steps: usize, batch: usize) -> Self {
        SeqLayout { steps, batch, reset: Arc::new(vec![false; steps * batch]) }
    }
}

enum Op {
    Leaf,
    MatMul(NodeId, NodeId),
    /// x w + bias in one node.
    Affine(NodeId, NodeId, NodeId),
    Add(NodeId, NodeId),
    AddBias(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    MulCol(NodeId, NodeId),
    SubCol(NodeId, NodeId),
    Scale(NodeId, f64),
    AddConst(NodeId),
    Neg(NodeId),
    Sigmoid(NodeId),
    Tanh(NodeId),
    Exp(NodeId),
    Log(NodeId),
    Softplus(NodeId),
    Elu(NodeId),
    Square(NodeId),
    Expm1Over(NodeId),
    Clamp(NodeId, f64, f64),
    ConcatCols(Vec<NodeId>),
    SliceCols(NodeId, usize, usize),
    ConcatRows(Vec<NodeId>),
    SliceRows(NodeId, usize, usize),
    SumAll(NodeId),
    SumCols(NodeId),
    MaskMean(NodeId, NodeId),
    /// h[t] = a[t] * h[t-1] + b[t], elementwise per channel, h[-1] = 0,
    /// hidden zeroed where the layout's reset flag is set.
    LinearScan { a: NodeId, b: NodeId, layout: SeqLayout },
    /// Depthwise causal FIR along the time axis: y[t,c] = sum_k w[k,c] x[t-k,c].
    /// Relies on zero gaps between stacked trajectories, not on reset flags.
    CausalConv { x: NodeId, w: NodeId, layout: SeqLayout },
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Affine(..) => "affine",
            Op::Add(..) => "add",
            Op::AddBias(..) => "add_bias",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MulCol(..) => "mul_col",
            Op::SubCol(..) => "sub_col",
            Op::Scale(..) => "scale",
            Op::AddConst(..) => "add_const",
            Op::Neg(..) => "neg",
            Op::Sigmoid(..) => "sigmoid",
            Op::Tanh(..) => "tanh",
            Op::Exp(..) => "exp",
            Op::Log(..) => "log",
            Op::Softplus(..) => "softplus",
            Op::Elu(..) => "elu",
            Op::Square(..) => "square",
            Op::Expm1Over(..) => "expm1_over",
            Op::Clamp(..) => "clamp",
            Op::ConcatCols(..) => "concat_cols",
            Op::SliceCols(..) => "slice_cols",
            Op::ConcatRows(..) => "concat_rows",
            Op::SliceRows(..) => "slice_rows",
            Op::SumAll(..) => "sum",
            Op::SumCols(..) => "sum_cols",
            Op::MaskMean(..) => "mask_mean",
            Op::LinearScan { .. } => "linear_scan",
            Op::CausalConv { .. } => "causal_conv",
        }
    }
}

struct Node {
    value: Array,
    op: Op,
    requires_grad: bool,
}

pub struct Tape {
    nodes: Vec<Node>,
    check_finite: bool,
    poisoned: Option<AdError>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new(), check_finite: true, poisoned: None }
    }

    pub fn with_finite_check(check: bool) -> Self {
        Tape { nodes: Vec::new(), check_finite: check, poisoned: None }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Array {
        &self.nodes[id.0].value
    }

    pub fn status(&self) -> Result<(), AdError> {
        match &self.poisoned {
            Some(e) => Err(e.clone()),
            None => Ok(()),
        }
    }

    fn push(&mut self, value: Array, op: Op, requires_grad: bool) -> NodeId {
        // leaves are parameters or caller-validated inputs; only computed
        // intermediates are screened
        let is_leaf = matches!(op, Op::Leaf);
        if self.check_finite && !is_leaf && self.poisoned.is_none() && !value.all_finite() {
            self.poisoned = Some(AdError::NonFinite { op: op.name(), node: self.nodes.len() });
        }
        self.nodes.push(Node { value, op, requires_grad });
        NodeId(self.nodes.len() - 1)
    }

    fn rg(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Input data: participates in the graph but receives no gradient.
    pub fn constant(&mut self, value: Array) -> NodeId {
        self.push(value, Op::Leaf, false)
    }

    /// Differentiable leaf (a parameter).
    pub fn leaf(&mut self, value: Array) -> NodeId {
        self.push(value, Op::Leaf, true)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = array::matmul(self.value(a), self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::MatMul(a, b), rg)
    }

    /// `x w + bias` fused: the workhorse of every linear layer.
    pub fn affine(&mut self, x: NodeId, w: NodeId, bias: NodeId) -> NodeId {
        let v = array::matmul_bias(self.value(x), self.value(w), Some(self.value(bias)));
        let rg = self.rg(x) || self.rg(w) || self.rg(bias);
        self.push(v, Op::Affine(x, w, bias), rg)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = array::add(self.value(a), self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Add(a, b), rg)
    }

    /// `[n, c] + [c]`
    pub fn add_bias(&mut self, a: NodeId, bias: NodeId) -> NodeId {
        let v = array::add_bias(self.value(a), self.value(bias));
        let rg = self.rg(a) || self.rg(bias);
        self.push(v, Op::AddBias(a, bias), rg)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = array::sub(self.value(a), self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        let v = array::mul(self.value(a), self.value(b));
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::Mul(a, b), rg)
    }

    /// `[n, c] * [n, 1]`
    pub fn mul_col(&mut self, a: NodeId, col: NodeId) -> NodeId {
        let v = array::mul_col(self.value(a), self.value(col));
        let rg = self.rg(a) || self.rg(col);
        self.push(v, Op::MulCol(a, col), rg)
    }

    /// `[n, c] - [n, 1]`
    pub fn sub_col(&mut self, a: NodeId, col: NodeId) -> NodeId {
        let v = array::sub_col(self.value(a), self.value(col));
        let rg = self.rg(a) || self.rg(col);
        self.push(v, Op::SubCol(a, col), rg)
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| x * c);
        let rg = self.rg(a);
        self.push(v, Op::Scale(a, c), rg)
    }

    pub fn add_const(&mut self, a: NodeId, c: f64) -> NodeId {
        let v = self.value(a).map(|x| x + c);
        let rg = self.rg(a);
        self.push(v, Op::AddConst(a), rg)
    }

    pub fn neg(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| -x);
        let rg = self.rg(a);
        self.push(v, Op::Neg(a), rg)
    }

    pub fn sigmoid(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(array::sigmoid);
        let rg = self.rg(a);
        self.push(v, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::tanh);
        let rg = self.rg(a);
        self.push(v, Op::Tanh(a), rg)
    }

    pub fn exp(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::exp);
        let rg = self.rg(a);
        self.push(v, Op::Exp(a), rg)
    }

    pub fn log(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(f64::ln);
        let rg = self.rg(a);
        self.push(v, Op::Log(a), rg)
    }

    pub fn softplus(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(array::softplus);
        let rg = self.rg(a);
        self.push(v, Op::Softplus(a), rg)
    }

    /// ELU with alpha = 1.
    pub fn elu(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(array::elu);
        let rg = self.rg(a);
        self.push(v, Op::Elu(a), rg)
    }

    pub fn square(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(|x| x * x);
        let rg = self.rg(a);
        self.push(v, Op::Square(a), rg)
    }

    /// `(e^x - 1) / x` with the removable singularity filled: f(0) = 1.
    pub fn expm1_over(&mut self, a: NodeId) -> NodeId {
        let v = self.value(a).map(expm1_over_x);
        let rg = self.rg(a);
        self.push(v, Op::Expm1Over(a), rg)
    }

    /// Gradient passes only strictly inside (lo, hi).
    pub fn clamp(&mut self, a: NodeId, lo: f64, hi: f64) -> NodeId {
        assert!(lo < hi, "clamp: lo {lo} >= hi {hi}");
        let v = self.value(a).map(|x| x.clamp(lo, hi));
        let rg = self.rg(a);
        self.push(v, Op::Clamp(a, lo, hi), rg)
    }

    pub fn concat_cols(&mut self, parts: &[NodeId]) -> NodeId {
        let arrays: Vec<&Array> = parts.iter().map(|&p| self.value(p)).collect();
        let v = array::concat_cols(&arrays);
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(v, Op::ConcatCols(parts.to_vec()), rg)
    }

    pub fn slice_cols(&mut self, a: NodeId, start: usize, end: usize) -> NodeId {
        let v = array::slice_cols(self.value(a), start, end);
        let rg = self.rg(a);
        self.push(v, Op::SliceCols(a, start, end), rg)
    }

    /// Stack along the row axis; all parts must share the column count.
    pub fn concat_rows(&mut self, parts: &[NodeId]) -> NodeId {
        assert!(!parts.is_empty(), "concat_rows: empty input");
        let cols = self.value(parts[0]).cols();
        let mut data = Vec::new();
        for &p in parts {
            let v = self.value(p);
            assert_eq!(v.cols(), cols, "concat_rows: column mismatch");
            data.extend_from_slice(v.data());
        }
        let rows = data.len() / cols;
        let rg = parts.iter().any(|&p| self.rg(p));
        self.push(Array::mat(rows, cols, data), Op::ConcatRows(parts.to_vec()), rg)
    }

    pub fn slice_rows(&mut self, a: NodeId, start: usize, len: usize) -> NodeId {
        let v = self.value(a);
        let (rows, cols) = (v.rows(), v.cols());
        assert!(start + len <= rows, "slice_rows: [{start}, {}) of {rows}", start + len);
        let data = v.data()[start * cols..(start + len) * cols].to_vec();
        let rg = self.rg(a);
        self.push(Array::mat(len, cols, data), Op::SliceRows(a, start, len), rg)
    }

    pub fn sum_all(&mut self, a: NodeId) -> NodeId {
        let v = Array::scalar(array::sum_all(self.value(a)));
        let rg = self.rg(a);
        self.push(v, Op::SumAll(a), rg)
    }

    /// `[n, c] -> [n, 1]` row sums.
    pub fn sum_cols(&mut self, a: NodeId) -> NodeId {
        let val = self.value(a);
        let (n, c) = (val.rows(), val.cols());
        let data = val.data().chunks_exact(c).map(|r| r.iter().sum()).collect();
        let rg = self.rg(a);
        self.push(Array::mat(n, 1, data), Op::SumCols(a), rg)
    }

    /// Masked mean reduction to a scalar. The mask is data, not a
    /// differentiable input. Panics on an all-zero mask.
    pub fn mask_mean(&mut self, x: NodeId, mask: NodeId) -> NodeId {
        let v = Array::scalar(array::mask_mean(self.value(x), self.value(mask)));
        let rg = self.rg(x);
        self.push(v, Op::MaskMean(x, mask), rg)
    }

    /// First-order linear recurrence along the time axis (see [`SeqLayout`]).
    /// `parallel` picks the chunked two-pass kernel; both kernels are
    /// deterministic for any thread count.
    pub fn linear_scan(&mut self, a: NodeId, b: NodeId, layout: SeqLayout, parallel: bool) -> NodeId {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(
            av.shape(),
            bv.shape(),
            "linear_scan: coefficient/input shapes {:?} vs {:?}",
            av.shape(),
            bv.shape()
        );
        assert_eq!(
            av.rows(),
            layout.steps * layout.batch,
            "linear_scan: rows {} != steps {} * batch {}",
            av.rows(),
            layout.steps,
            layout.batch
        );
        let v = if parallel {
            scan_parallel(av, bv, &layout)
        } else {
            scan_sequential(av, bv, &layout)
        };
        let rg = self.rg(a) || self.rg(b);
        self.push(v, Op::LinearScan { a, b, layout }, rg)
    }

    /// Depthwise causal convolution, kernel `[k, c]`, lag index 0 = current step.
    pub fn causal_conv(&mut self, x: NodeId, w: NodeId, layout: SeqLayout) -> NodeId {
        let (xv, wv) = (self.value(x), self.value(w));
        assert_eq!(
            xv.cols(),
            wv.cols(),
            "causal_conv: channels {} vs kernel channels {}",
            xv.cols(),
            wv.cols()
        );
        assert_eq!(xv.rows(), layout.steps * layout.batch, "causal_conv: layout rows");
        let v = conv_forward(xv, wv, &layout);
        let rg = self.rg(x) || self.rg(w);
        self.push(v, Op::CausalConv { x, w, layout }, rg)
    }

    /// Reverse-mode sweep from a scalar root. Returns one gradient slot per
    /// node (None where no gradient flows). Gradients accumulate in reverse
    /// node-id order, so results are bitwise reproducible.
    pub fn backward(&mut self, root: NodeId) -> Result<Vec<Option<Array>>, AdError> {
        self.status()?;
        let rv = self.value(root);
        if !rv.is_scalar() {
            return Err(AdError::NonScalarRoot(rv.shape().to_vec()));
        }
        let mut grads: Vec<Option<Array>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Array::scalar(1.0));
        for id in (0..=root.0).rev() {
            if grads[id].is_none() || !self.nodes[id].requires_grad {
                continue;
            }
            let g = grads[id].take().unwrap();
            self.accumulate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        Ok(grads)
    }

    fn accumulate(&self, id: usize, g: &Array, grads: &mut [Option<Array>]) {
        let add_to = |grads: &mut [Option<Array>], target: NodeId, delta: Array| {
            match &mut grads[target.0] {
                Some(acc) => {
                    for (a, d) in acc.data_mut().iter_mut().zip(delta.data()) {
                        *a += d;
                    }
                }
                slot => *slot = Some(delta),
            }
        };
        let node = &self.nodes[id];
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                if self.rg(*a) {
                    add_to(grads, *a, array::matmul_a_bt(g, self.value(*b)));
                }
                if self.rg(*b) {
                    add_to(grads, *b, array::matmul_at_b(self.value(*a), g));
                }
            }
            Op::Affine(x, w, bias) => {
                if self.rg(*x) {
                    add_to(grads, *x, array::matmul_a_bt(g, self.value(*w)));
                }
                if self.rg(*w) {
                    add_to(grads, *w, array::matmul_at_b(self.value(*x), g));
                }
                if self.rg(*bias) {
                    let c = g.cols();
                    let mut db = vec![0.0; c];
                    for row in g.data().chunks_exact(c) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    let shape = self.value(*bias).shape().to_vec();
                    add_to(grads, *bias, Array::new(shape, db));
                }
            }
            Op::Add(a, b) => {
                if self.rg(*a) {
                    add_to(grads, *a, g.clone());
                }
                if self.rg(*b) {
                    add_to(grads, *b, g.clone());
                }
            }
            Op::AddBias(a, bias) => {
                if self.rg(*a) {
                    add_to(grads, *a, g.clone());
                }
                if self.rg(*bias) {
                    let c = g.cols();
                    let mut db = vec![0.0; c];
                    for row in g.data().chunks_exact(c) {
                        for (d, v) in db.iter_mut().zip(row) {
                            *d += v;
                        }
                    }
                    let shape = self.value(*bias).shape().to_vec();
                    add_to(grads, *bias, Array::new(shape, db));
                }
            }
            Op::Sub(a, b) => {
                if self.rg(*a) {
                    add_to(grads, *a, g.clone());
                }
                if self.rg(*b) {
                    add_to(grads, *b, g.map(|x| -x));
                }
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    add_to(grads, *a, array::mul(g, self.value(*b)));
                }
                if self.rg(*b) {
                    add_to(grads, *b, array::mul(g, self.value(*a)));
                }
            }
            Op::MulCol(a, col) => {
                if self.rg(*a) {
                    add_to(grads, *a, array::mul_col(g, self.value(*col)));
                }
                if self.rg(*col) {
                    let prod = array::mul(g, self.value(*a));
                    let c = prod.cols();
                    let data: Vec<f64> =
                        prod.data().chunks_exact(c).map(|r| r.iter().sum()).collect();
                    let shape = self.value(*col).shape().to_vec();
                    add_to(grads, *col, Array::new(shape, data));
                }
            }
            Op::SubCol(a, col) => {
                if self.rg(*a) {
                    add_to(grads, *a, g.clone());
                }
                if self.rg(*col) {
                    let c = g.cols();
                    let data: Vec<f64> =
                        g.data().chunks_exact(c).map(|r| -r.iter().sum::<f64>()).collect();
                    let shape = self.value(*col).shape().to_vec();
                    add_to(grads, *col, Array::new(shape, data));
                }
            }
            Op::Scale(a, c) => {
                if self.rg(*a) {
                    add_to(grads, *a, g.map(|x| x * c));
                }
            }
            Op::AddConst(a) => {
                if self.rg(*a) {
                    add_to(grads, *a, g.clone());
                }
            }
            Op::Neg(a) => {
                if self.rg(*a) {
                    add_to(grads, *a, g.map(|x| -x));
                }
            }
            Op::Sigmoid(a) => {
                if self.rg(*a) {
                    let y = &node.value;
                    let data = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(gv, yv)| gv * yv * (1.0 - yv))
                        .collect();
                    add_to(grads, *a, Array::new(y.shape().to_vec(), data));
                }
            }
            Op::Tanh(a) => {
                if self.rg(*a) {
                    let y = &node.value;
                    let data = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(gv, yv)| gv * (1.0 - yv * yv))
                        .collect();
                    add_to(grads, *a, Array::new(y.shape().to_vec(), data));
                }
            }
            Op::Exp(a) => {
                if self.rg(*a) {
                    add_to(grads, *a, array::mul(g, &node.value));
                }
            }
            Op::Log(a) => {
                if self.rg(*a) {
                    let x = self.value(*a);
                    let data = g.data().iter().zip(x.data()).map(|(gv, xv)| gv / xv).collect();
                    add_to(grads, *a, Array::new(x.shape().to_vec(), data));
                }
            }
            Op::Softplus(a) => {
                if self.rg(*a) {
                    let x = self.value(*a);
                    let data = g
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(gv, xv)| gv * array::sigmoid(*xv))
                        .collect();
                    add_to(grads, *a, Array::new(x.shape().to_vec(), data));
                }
            }
            Op::Elu(a) => {
                if self.rg(*a) {
                    // elu'(x) = 1 for x > 0 else e^x = y + 1: reuse the output
                    let y = &node.value;
                    let data = g
                        .data()
                        .iter()
                        .zip(y.data())
                        .map(|(gv, yv)| if *yv > 0.0 { *gv } else { gv * (yv + 1.0) })
                        .collect();
                    add_to(grads, *a, Array::new(y.shape().to_vec(), data));
                }
            }
            Op::Square(a) => {
                if self.rg(*a) {
                    let x = self.value(*a);
                    let data =
                        g.data().iter().zip(x.data()).map(|(gv, xv)| gv * 2.0 * xv).collect();
                    add_to(grads, *a, Array::new(x.shape().to_vec(), data));
                }
            }
            Op::Expm1Over(a) => {
                if self.rg(*a) {
                    let x = self.value(*a);
                    let data = g
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(gv, xv)| gv * expm1_over_x_grad(*xv))
                        .collect();
                    add_to(grads, *a, Array::new(x.shape().to_vec(), data));
                }
            }
            Op::Clamp(a, lo, hi) => {
                if self.rg(*a) {
                    let x = self.value(*a);
                    let data = g
                        .data()
                        .iter()
                        .zip(x.data())
                        .map(|(gv, xv)| if *xv > *lo && *xv < *hi { *gv } else { 0.0 })
                        .collect();
                    add_to(grads, *a, Array::new(x.shape().to_vec(), data));
                }
            }
            Op::ConcatCols(parts) => {
                let mut off = 0;
                for &p in parts {
                    let shape = self.value(p).shape().to_vec();
                    let w = self.value(p).cols();
                    if self.rg(p) {
                        let slice = array::slice_cols(g, off, off + w);
                        add_to(grads, p, slice.reshaped(shape));
                    }
                    off += w;
                }
            }
            Op::SliceCols(a, start, end) => {
                if self.rg(*a) {
                    // scatter-add straight into the parent's grad buffer
                    let (shape, n, c) = {
                        let x = self.value(*a);
                        (x.shape().to_vec(), x.rows(), x.cols())
                    };
                    let w = end - start;
                    let slot = grads[a.0].get_or_insert_with(|| Array::zeros(&shape));
                    let dst = slot.data_mut();
                    for r in 0..n {
                        let grow = &g.data()[r * w..(r + 1) * w];
                        for (j, gv) in grow.iter().enumerate() {
                            dst[r * c + start + j] += gv;
                        }
                    }
                }
            }
            Op::ConcatRows(parts) => {
                let cols = g.cols();
                let mut row = 0;
                for &p in parts {
                    let rows = self.value(p).rows();
                    if self.rg(p) {
                        let data = g.data()[row * cols..(row + rows) * cols].to_vec();
                        add_to(grads, p, Array::mat(rows, cols, data));
                    }
                    row += rows;
                }
            }
            Op::SliceRows(a, start, len) => {
                if self.rg(*a) {
                    let (shape, c) = {
                        let x = self.value(*a);
                        (x.shape().to_vec(), x.cols())
                    };
                    let slot = grads[a.0].get_or_insert_with(|| Array::zeros(&shape));
                    let dst = slot.data_mut();
                    for (d, gv) in dst[start * c..(start + len) * c].iter_mut().zip(g.data()) {
                        *d += gv;
                    }
                }
            }
            Op::SumAll(a) => {
                if self.rg(*a) {
                    let x = self.value(*a);
                    add_to(grads, *a, Array::full(x.shape(), g.scalar_value()));
                }
            }
            Op::SumCols(a) => {
                if self.rg(*a) {
                    let x = self.value(*a);
                    let (n, c) = (x.rows(), x.cols());
                    let mut data = vec![0.0; n * c];
                    for (r, chunk) in data.chunks_exact_mut(c).enumerate() {
                        chunk.fill(g.data()[r]);
                    }
                    add_to(grads, *a, Array::new(x.shape().to_vec(), data));
                }
            }
            Op::MaskMean(x, mask) => {
                if self.rg(*x) {
                    let xv = self.value(*x);
                    let mv = self.value(*mask);
                    let denom: f64 = mv.data().iter().sum();
                    let gs = g.scalar_value() / denom;
                    let c = xv.cols();
                    let mut data = vec![0.0; xv.numel()];
                    for (row, &m) in data.chunks_exact_mut(c).zip(mv.data()) {
                        if m != 0.0 {
                            row.fill(gs * m);
                        }
                    }
                    add_to(grads, *x, Array::new(xv.shape().to_vec(), data));
                }
            }
            Op::LinearScan { a, b, layout } => {
                let (da, db) = scan_backward(g, self.value(*a), &node.value, layout);
                if self.rg(*a) {
                    add_to(grads, *a, da);
                }
                if self.rg(*b) {
                    add_to(grads, *b, db);
                }
            }
            Op::CausalConv { x, w, layout } => {
                let (dx, dw) = conv_backward(g, self.value(*x), self.value(*w), layout);
                if self.rg(*x) {
                    add_to(grads, *x, dx);
                }
                if self.rg(*w) {
                    add_to(grads, *w, dw);
                }
            }
        }
    }
}

pub fn expm1_over_x(x: f64) -> f64 {
    if x.abs() < 1e-5 {
        // series: 1 + x/2 + x^2/6
        1.0 + x * (0.5 + x / 6.0)
    } else {
        x.exp_m1() / x
    }
}

fn expm1_over_x_grad(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        // series: 1/2 + x/3 + x^2/8
        0.5 + x * (1.0 / 3.0 + x / 8.0)
    } else {
        (x.exp() * (x - 1.0) + 1.0) / (x * x)
    }
}

/// Reference kernel: plain time loop, bitwise identical to running each
/// post-reset suffix as a fresh sequence.
pub fn scan_sequential(a: &Array, b: &Array, layout: &SeqLayout) -> Array {
    let (steps, batch) = (layout.steps, layout.batch);
    let c = a.cols();
    let mut out = vec![0.0; a.numel()];
    let (ad, bd) = (a.data(), b.data());
    for bi in 0..batch {
        for t in 0..steps {
            let row = t * batch + bi;
            let off = row * c;
            if t == 0 || layout.reset[row] {
                out[off..off + c].copy_from_slice(&bd[off..off + c]);
            } else {
                let prev = (row - batch) * c;
                for j in 0..c {
                    out[off + j] = ad[off + j] * out[prev + j] + bd[off + j];
                }
            }
        }
    }
    Array::new(a.shape().to_vec(), out)
}

/// Fixed-size chunk splitting along the time axis, one parallel task per
/// (row-chunk); the chunk grid depends only on the sequence length, so the
/// result is independent of thread count.
const SCAN_CHUNK: usize = 256;

pub fn scan_parallel(a: &Array, b: &Array, layout: &SeqLayout) -> Array {
    use rayon::prelude::*;
    let (steps, batch) = (layout.steps, layout.batch);
    let c = a.cols();
    if steps <= SCAN_CHUNK {
        return scan_sequential(a, b, layout);
    }
    let n_chunks = steps.div_ceil(SCAN_CHUNK);
    let (ad, bd) = (a.data(), b.data());
    let width = batch * c;

    // Pass 1: per-chunk composites (prod of effective coefficients, local h)
    // for every lane (b, ch).
    let mut composites: Vec<(Vec<f64>, Vec<f64>)> = (0..n_chunks)
        .into_par_iter()
        .map(|ci| {
            let t0 = ci * SCAN_CHUNK;
            let t1 = ((ci + 1) * SCAN_CHUNK).min(steps);
            let mut aprod = vec![1.0; width];
            let mut hloc = vec![0.0; width];
            for t in t0..t1 {
                for bi in 0..batch {
                    let row = t * batch + bi;
                    let reset = layout.reset[row];
                    let off = row * c;
                    for j in 0..c {
                        let lane = bi * c + j;
                        let ae = if reset { 0.0 } else { ad[off + j] };
                        hloc[lane] = ae * hloc[lane] + bd[off + j];
                        aprod[lane] *= ae;
                    }
                }
            }
            (aprod, hloc)
        })
        .collect();

    // Pass 2: exclusive sequential combine of composites -> incoming h per chunk.
    let mut h_in = vec![0.0; width];
    for comp in composites.iter_mut() {
        let (aprod, hloc) = comp;
        for lane in 0..width {
            let next = aprod[lane] * h_in[lane] + hloc[lane];
            // reuse the composite buffers to store each chunk's incoming state
            aprod[lane] = h_in[lane];
            h_in[lane] = next;
        }
    }

    // Pass 3: rescan each chunk from its incoming state, writing output.
    let mut out = vec![0.0; a.numel()];
    out.par_chunks_mut(SCAN_CHUNK * width)
        .enumerate()
        .for_each(|(ci, chunk)| {
            let t0 = ci * SCAN_CHUNK;
            let t1 = ((ci + 1) * SCAN_CHUNK).min(steps);
            let h0 = &composites[ci].0;
            let mut h = h0.clone();
            for t in t0..t1 {
                for bi in 0..batch {
                    let row = t * batch + bi;
                    let reset = layout.reset[row];
                    let off = row * c;
                    let loc = (t - t0) * width + bi * c;
                    for j in 0..c {
                        let lane = bi * c + j;
                        let ae = if reset { 0.0 } else { ad[off + j] };
                        h[lane] = ae * h[lane] + bd[off + j];
                        chunk[loc + j] = h[lane];
                    }
                }
            }
        });
    Array::new(a.shape().to_vec(), out)
}

/// Adjoint of the scan: reverse recurrence on the output gradient, then
/// da[t] = gtilde[t] * h[t-1] (zero across resets), db[t] = gtilde[t].
fn scan_backward(g: &Array, a: &Array, h: &Array, layout: &SeqLayout) -> (Array, Array) {
    let (steps, batch) = (layout.steps, layout.batch);
    let c = a.cols();
    let (ad, hd, gd) = (a.data(), h.data(), g.data());
    let mut gt = vec![0.0; g.numel()];
    for bi in 0..batch {
        for t in (0..steps).rev() {
            let row = t * batch + bi;
            let off = row * c;
            if t + 1 == steps {
                gt[off..off + c].copy_from_slice(&gd[off..off + c]);
            } else {
                let nrow = row + batch;
                let noff = nrow * c;
                let kill = layout.reset[nrow];
                for j in 0..c {
                    let carry = if kill { 0.0 } else { ad[noff + j] * gt[noff + j] };
                    gt[off + j] = gd[off + j] + carry;
                }
            }
        }
    }
    let mut da = vec![0.0; a.numel()];
    for bi in 0..batch {
        for t in 0..steps {
            let row = t * batch + bi;
            if t == 0 || layout.reset[row] {
                continue; // incoming hidden is zero; no coefficient gradient
            }
            let off = row * c;
            let prev = (row - batch) * c;
            for j in 0..c {
                da[off + j] = gt[off + j] * hd[prev + j];
            }
        }
    }
    (Array::new(a.shape().to_vec(), da), Array::new(a.shape().to_vec(), gt))
}

fn conv_forward(x: &Array, w: &Array, layout: &SeqLayout) -> Array {
    let (steps, batch) = (layout.steps, layout.batch);
    let c = x.cols();
    let k = w.rows();
    let (xd, wd) = (x.data(), w.data());
    let mut out = vec![0.0; x.numel()];
    for t in 0..steps {
        for bi in 0..batch {
            let off = (t * batch + bi) * c;
            for lag in 0..k.min(t + 1) {
                let src = ((t - lag) * batch + bi) * c;
                let wrow = &wd[lag * c..(lag + 1) * c];
                for j in 0..c {
                    out[off + j] += wrow[j] * xd[src + j];
                }
            }
        }
    }
    Array::new(x.shape().to_vec(), out)
}

fn conv_backward(g: &Array, x: &Array, w: &Array, layout: &SeqLayout) -> (Array, Array) {
    let (steps, batch) = (layout.steps, layout.batch);
    let c = x.cols();
    let k = w.rows();
    let (xd, wd, gd) = (x.data(), w.data(), g.data());
    let mut dx = vec![0.0; x.numel()];
    let mut dw = vec![0.0; w.numel()];
    for t in 0..steps {
        for bi in 0..batch {
            let goff = (t * batch + bi) * c;
            for lag in 0..k.min(t + 1) {
                let src = ((t - lag) * batch + bi) * c;
                let wrow = &wd[lag * c..(lag + 1) * c];
                for j in 0..c {
                    dx[src + j] += wrow[j] * gd[goff + j];
                    dw[lag * c + j] += gd[goff + j] * xd[src + j];
                }
            }
        }
    }
    (Array::new(x.shape().to_vec(), dx), Array::new(w.shape().to_vec(), dw))
}
