//! Reverse-mode gradient tape over dense matrices.
//!
//! Every operation appends a node holding its output value. [`Tape::backward`]
//! walks the nodes in exact reverse order of creation and accumulates
//! vector-Jacobian products, depositing parameter gradients into a flat buffer
//! laid out like the [`ParamStore`] the parameters came from.

use super::matrix::gemm;
use super::{Matrix, NeuralError, ParamId, ParamStore};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Vector-Jacobian product of a single-input operation implemented outside
/// this module.
pub trait Vjp {
    /// Gradient with respect to the input, given the input value, the output
    /// value and the gradient flowing into the output.
    fn vjp(&self, input: &Matrix, output: &Matrix, grad_output: &Matrix) -> Matrix;
}

enum Op<'a> {
    Constant,
    Param { offset: usize },
    MatMul(Var, Var),
    AddRow(Var, Var),
    Add(Var, Var),
    Relu(Var),
    Sigmoid(Var),
    Scale(Var, f64),
    ConcatCols(Vec<Var>),
    GatherRows(Var, Vec<usize>),
    Scatter(Var, Vec<usize>),
    Aggregate { x: Var, w: Var, pairs: &'a [(usize, usize)], self_weight: f64 },
    GroupedSoftmax(Var, Vec<Vec<usize>>),
    Ratio { x: Var, groups: Vec<Vec<usize>>, floor: f64 },
    LogEps(Var, f64),
    Sum(Var),
    DotConst(Var, Vec<f64>),
    Custom(Var, Box<dyn Vjp + 'a>),
}

struct Node<'a> {
    value: Matrix,
    op: Op<'a>,
    needs_grad: bool,
}

/// Ordered record of a forward pass.
#[derive(Default)]
pub struct Tape<'a> {
    nodes: Vec<Node<'a>>,
}

fn shape_err(op: &'static str, a: (usize, usize), b: (usize, usize)) -> NeuralError {
    NeuralError::Shape { op, left: a, right: b }
}

impl<'a> Tape<'a> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data()[0]
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn push(&mut self, value: Matrix, op: Op<'a>, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Constant, false)
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        let offset = store.entry(id).offset;
        self.push(store.matrix(id), Op::Param { offset }, true)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NeuralError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.cols() != bv.rows() {
            return Err(shape_err("matmul", av.shape(), bv.shape()));
        }
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        let mut out = Matrix::zeros(m, n);
        gemm(m, k, n, 1.0, av.data(), false, bv.data(), false, 0.0, out.data_mut());
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::MatMul(a, b), needs))
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Result<Var, NeuralError> {
        let (av, bv) = (self.value(a), self.value(bias));
        if bv.rows() != 1 || bv.cols() != av.cols() {
            return Err(shape_err("add_row", av.shape(), bv.shape()));
        }
        let mut out = av.clone();
        let c = av.cols();
        if c > 0 {
            for row in out.data_mut().chunks_mut(c) {
                for (x, b) in row.iter_mut().zip(bv.data()) {
                    *x += b;
                }
            }
        }
        let needs = self.needs(a) || self.needs(bias);
        Ok(self.push(out, Op::AddRow(a, bias), needs))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NeuralError> {
        let (av, bv) = (self.value(a), self.value(b));
        if av.shape() != bv.shape() {
            return Err(shape_err("add", av.shape(), bv.shape()));
        }
        let mut out = av.clone();
        out.add_assign(bv);
        let needs = self.needs(a) || self.needs(b);
        Ok(self.push(out, Op::Add(a, b), needs))
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        let needs = self.needs(a);
        self.push(out, Op::Relu(a), needs)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).map(sigmoid);
        let needs = self.needs(a);
        self.push(out, Op::Sigmoid(a), needs)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let out = self.value(a).map(|x| factor * x);
        let needs = self.needs(a);
        self.push(out, Op::Scale(a, factor), needs)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var, NeuralError> {
        let rows = self.value(parts[0]).rows();
        for &p in parts {
            if self.value(p).rows() != rows {
                return Err(shape_err("concat_cols", (rows, 0), self.value(p).shape()));
            }
        }
        let cols: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(r));
            }
        }
        let needs = parts.iter().any(|&p| self.needs(p));
        Ok(self.push(Matrix::new(rows, cols, out), Op::ConcatCols(parts.to_vec()), needs))
    }

    /// Output row `i` is row `rows[i]` of `src`.
    pub fn gather_rows(&mut self, src: Var, rows: Vec<usize>) -> Result<Var, NeuralError> {
        let sv = self.value(src);
        if let Some(&bad) = rows.iter().find(|&&r| r >= sv.rows()) {
            return Err(shape_err("gather_rows", sv.shape(), (bad, 0)));
        }
        let cols = sv.cols();
        let mut out = Vec::with_capacity(rows.len() * cols);
        for &r in &rows {
            out.extend_from_slice(sv.row(r));
        }
        let needs = self.needs(src);
        Ok(self.push(Matrix::new(rows.len(), cols, out), Op::GatherRows(src, rows), needs))
    }

    /// Copy of `base` with row `rows[i]` replaced by row `i` of `src`.
    pub fn scatter_rows(&mut self, base: Matrix, src: Var, rows: Vec<usize>) -> Result<Var, NeuralError> {
        let sv = self.value(src);
        if sv.rows() != rows.len() || sv.cols() != base.cols() || rows.iter().any(|&r| r >= base.rows()) {
            return Err(shape_err("scatter_rows", base.shape(), sv.shape()));
        }
        let mut out = base;
        for (i, &r) in rows.iter().enumerate() {
            out.row_mut(r).copy_from_slice(sv.row(i));
        }
        let needs = self.needs(src);
        Ok(self.push(out, Op::Scatter(src, rows), needs))
    }

    /// Weighted neighbour sum: `out[j] = self_weight * x[j] + sum over pairs
    /// k = (i, j) of w[k] * x[i]`, with `w` a column holding one weight per pair.
    pub fn aggregate(
        &mut self,
        x: Var,
        w: Var,
        pairs: &'a [(usize, usize)],
        self_weight: f64,
    ) -> Result<Var, NeuralError> {
        let (xv, wv) = (self.value(x), self.value(w));
        if wv.cols() != 1 || wv.rows() != pairs.len() {
            return Err(shape_err("aggregate", (pairs.len(), 1), wv.shape()));
        }
        let n = xv.rows();
        if pairs.iter().any(|&(i, j)| i >= n || j >= n) {
            return Err(shape_err("aggregate", xv.shape(), (pairs.len(), 1)));
        }
        let mut out = xv.map(|v| self_weight * v);
        for (k, &(i, j)) in pairs.iter().enumerate() {
            let wk = wv.data()[k];
            if wk == 0.0 {
                continue;
            }
            let c = xv.cols();
            let src = &xv.data()[i * c..(i + 1) * c];
            for (o, s) in out.row_mut(j).iter_mut().zip(src) {
                *o += wk * s;
            }
        }
        let needs = self.needs(x) || self.needs(w);
        Ok(self.push(out, Op::Aggregate { x, w, pairs, self_weight }, needs))
    }

    /// Softmax of a column vector within each index group. Groups must
    /// partition the indices and be non-empty.
    pub fn grouped_softmax(&mut self, x: Var, groups: Vec<Vec<usize>>) -> Result<Var, NeuralError> {
        let xv = self.value(x);
        check_partition(xv, &groups)?;
        let mut out = Matrix::zeros(xv.rows(), 1);
        grouped_softmax_into(xv.data(), &groups, out.data_mut());
        let needs = self.needs(x);
        Ok(self.push(out, Op::GroupedSoftmax(x, groups), needs))
    }

    /// Plain ratio normalisation `max(x, floor) / sum` within each group.
    pub fn grouped_ratio(&mut self, x: Var, groups: Vec<Vec<usize>>, floor: f64) -> Result<Var, NeuralError> {
        let xv = self.value(x);
        check_partition(xv, &groups)?;
        let mut out = Matrix::zeros(xv.rows(), 1);
        for g in &groups {
            let total: f64 = g.iter().map(|&i| xv.data()[i].max(floor)).sum();
            for &i in g {
                out.data_mut()[i] = xv.data()[i].max(floor) / total;
            }
        }
        let needs = self.needs(x);
        Ok(self.push(out, Op::Ratio { x, groups, floor }, needs))
    }

    /// Elementwise `ln(x + eps)`.
    pub fn log_eps(&mut self, a: Var, eps: f64) -> Var {
        let out = self.value(a).map(|x| (x + eps).ln());
        let needs = self.needs(a);
        self.push(out, Op::LogEps(a, eps), needs)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let needs = self.needs(a);
        self.push(Matrix::scalar(s), Op::Sum(a), needs)
    }

    /// Scalar `sum_i a_i * weights_i`.
    pub fn dot_const(&mut self, a: Var, weights: Vec<f64>) -> Result<Var, NeuralError> {
        let av = self.value(a);
        if av.data().len() != weights.len() {
            return Err(shape_err("dot_const", av.shape(), (weights.len(), 1)));
        }
        let s = av.data().iter().zip(&weights).map(|(x, w)| x * w).sum();
        let needs = self.needs(a);
        Ok(self.push(Matrix::scalar(s), Op::DotConst(a, weights), needs))
    }

    /// Records an externally computed single-input operation.
    pub fn custom(&mut self, input: Var, output: Matrix, vjp: Box<dyn Vjp + 'a>) -> Var {
        let needs = self.needs(input);
        self.push(output, Op::Custom(input, vjp), needs)
    }

    /// Propagates `seed * d(output)` back through the tape and adds parameter
    /// gradients into `grad`, which must be laid out like the parameter store.
    pub fn backward(self, output: Var, seed: f64, grad: &mut [f64]) -> Result<(), NeuralError> {
        if self.nodes.is_empty() {
            return Err(NeuralError::EmptyTape);
        }
        if self.value(output).shape() != (1, 1) {
            return Err(NeuralError::NotScalar(self.value(output).shape()));
        }
        let mut grads: Vec<Option<Matrix>> = Vec::with_capacity(output.0 + 1);
        grads.resize_with(output.0 + 1, || None);
        grads[output.0] = Some(Matrix::scalar(seed));
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            self.backprop_node(node, &g, &mut grads, grad);
        }
        Ok(())
    }

    fn backprop_node(&self, node: &Node<'a>, g: &Matrix, grads: &mut [Option<Matrix>], param_grad: &mut [f64]) {
        let acc = |v: Var, m: Matrix, grads: &mut [Option<Matrix>]| {
            if !self.nodes[v.0].needs_grad {
                return;
            }
            match &mut grads[v.0] {
                Some(existing) => existing.add_assign(&m),
                slot => *slot = Some(m),
            }
        };
        match &node.op {
            Op::Constant => {}
            Op::Param { offset } => {
                for (dst, src) in param_grad[*offset..*offset + g.data().len()].iter_mut().zip(g.data()) {
                    *dst += src;
                }
            }
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (m, k, n) = (av.rows(), av.cols(), bv.cols());
                if self.needs(*a) {
                    let mut ga = Matrix::zeros(m, k);
                    gemm(m, n, k, 1.0, g.data(), false, bv.data(), true, 0.0, ga.data_mut());
                    acc(*a, ga, grads);
                }
                if self.needs(*b) {
                    let mut gb = Matrix::zeros(k, n);
                    gemm(k, m, n, 1.0, av.data(), true, g.data(), false, 0.0, gb.data_mut());
                    acc(*b, gb, grads);
                }
            }
            Op::AddRow(a, bias) => {
                if self.needs(*bias) {
                    let c = g.cols();
                    let mut gb = Matrix::zeros(1, c);
                    if c > 0 {
                        for row in g.data().chunks(c) {
                            for (x, r) in gb.data_mut().iter_mut().zip(row) {
                                *x += r;
                            }
                        }
                    }
                    acc(*bias, gb, grads);
                }
                acc(*a, g.clone(), grads);
            }
            Op::Add(a, b) => {
                acc(*a, g.clone(), grads);
                acc(*b, g.clone(), grads);
            }
            Op::Relu(a) => {
                let av = self.value(*a);
                let mut ga = g.clone();
                for (x, &inp) in ga.data_mut().iter_mut().zip(av.data()) {
                    if inp <= 0.0 {
                        *x = 0.0;
                    }
                }
                acc(*a, ga, grads);
            }
            Op::Sigmoid(a) => {
                let mut ga = g.clone();
                for (x, &y) in ga.data_mut().iter_mut().zip(node.value.data()) {
                    *x *= y * (1.0 - y);
                }
                acc(*a, ga, grads);
            }
            Op::Scale(a, f) => acc(*a, g.map(|x| f * x), grads),
            Op::ConcatCols(parts) => {
                let mut col = 0;
                for &p in parts {
                    let pc = self.value(p).cols();
                    if self.needs(p) {
                        let mut gp = Matrix::zeros(g.rows(), pc);
                        for r in 0..g.rows() {
                            gp.row_mut(r).copy_from_slice(&g.row(r)[col..col + pc]);
                        }
                        acc(p, gp, grads);
                    }
                    col += pc;
                }
            }
            Op::GatherRows(src, rows) => {
                let sv = self.value(*src);
                let mut gs = Matrix::zeros(sv.rows(), sv.cols());
                for (i, &r) in rows.iter().enumerate() {
                    for (x, y) in gs.row_mut(r).iter_mut().zip(g.row(i)) {
                        *x += y;
                    }
                }
                acc(*src, gs, grads);
            }
            Op::Scatter(src, rows) => {
                let sv = self.value(*src);
                let mut gs = Matrix::zeros(sv.rows(), sv.cols());
                for (i, &r) in rows.iter().enumerate() {
                    gs.row_mut(i).copy_from_slice(g.row(r));
                }
                acc(*src, gs, grads);
            }
            Op::Aggregate { x, w, pairs, self_weight } => {
                let (xv, wv) = (self.value(*x), self.value(*w));
                if self.needs(*x) {
                    let mut gx = g.map(|v| self_weight * v);
                    for (k, &(i, j)) in pairs.iter().enumerate() {
                        let wk = wv.data()[k];
                        if wk == 0.0 {
                            continue;
                        }
                        let c = g.cols();
                        let gj = &g.data()[j * c..(j + 1) * c];
                        for (o, s) in gx.row_mut(i).iter_mut().zip(gj) {
                            *o += wk * s;
                        }
                    }
                    acc(*x, gx, grads);
                }
                if self.needs(*w) {
                    let gw: Vec<f64> = pairs
                        .iter()
                        .map(|&(i, j)| g.row(j).iter().zip(xv.row(i)).map(|(a, b)| a * b).sum())
                        .collect();
                    acc(*w, Matrix::column(gw), grads);
                }
            }
            Op::GroupedSoftmax(x, groups) => {
                let y = node.value.data();
                let mut gx = Matrix::zeros(y.len(), 1);
                for grp in groups {
                    let inner: f64 = grp.iter().map(|&i| y[i] * g.data()[i]).sum();
                    for &i in grp {
                        gx.data_mut()[i] = y[i] * (g.data()[i] - inner);
                    }
                }
                acc(*x, gx, grads);
            }
            Op::Ratio { x, groups, floor } => {
                let xv = self.value(*x).data();
                let y = node.value.data();
                let mut gx = Matrix::zeros(y.len(), 1);
                for grp in groups {
                    let total: f64 = grp.iter().map(|&i| xv[i].max(*floor)).sum();
                    let inner: f64 = grp.iter().map(|&i| y[i] * g.data()[i]).sum();
                    for &i in grp {
                        if xv[i] > *floor {
                            gx.data_mut()[i] = (g.data()[i] - inner) / total;
                        }
                    }
                }
                acc(*x, gx, grads);
            }
            Op::LogEps(a, eps) => {
                let av = self.value(*a);
                let mut ga = g.clone();
                for (x, &inp) in ga.data_mut().iter_mut().zip(av.data()) {
                    *x /= inp + eps;
                }
                acc(*a, ga, grads);
            }
            Op::Sum(a) => {
                let av = self.value(*a);
                let s = g.data()[0];
                acc(*a, Matrix::new(av.rows(), av.cols(), vec![s; av.data().len()]), grads);
            }
            Op::DotConst(a, weights) => {
                let av = self.value(*a);
                let s = g.data()[0];
                acc(*a, Matrix::new(av.rows(), av.cols(), weights.iter().map(|w| s * w).collect()), grads);
            }
            Op::Custom(input, vjp) => {
                let gi = vjp.vjp(self.value(*input), &node.value, g);
                acc(*input, gi, grads);
            }
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn check_partition(x: &Matrix, groups: &[Vec<usize>]) -> Result<(), NeuralError> {
    if x.cols() != 1 {
        return Err(shape_err("grouped_softmax", x.shape(), (x.rows(), 1)));
    }
    let mut seen = vec![false; x.rows()];
    for (gi, grp) in groups.iter().enumerate() {
        if grp.is_empty() {
            return Err(NeuralError::EmptyGroup(gi));
        }
        for &i in grp {
            if i >= seen.len() || std::mem::replace(&mut seen[i], true) {
                return Err(NeuralError::NotPartition(i));
            }
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(NeuralError::NotPartition(i));
    }
    Ok(())
}

/// Max-subtracted softmax within each group.
pub fn grouped_softmax_into(scores: &[f64], groups: &[Vec<usize>], out: &mut [f64]) {
    for grp in groups {
        let max = grp.iter().map(|&i| scores[i]).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for &i in grp {
            let e = (scores[i] - max).exp();
            out[i] = e;
            total += e;
        }
        for &i in grp {
            out[i] /= total;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::{Init, ParamStore};
    use rand::SeedableRng;

    fn store_with(values: &[f64]) -> (ParamStore, ParamId) {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::new();
        let id = s.add("w", 1, values.len(), Init::Zeros, &mut rng);
        s.slice_mut(id).copy_from_slice(values);
        (s, id)
    }

    #[test]
    fn softmax_examples() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::column(vec![0.0, 0.0, 5.0, 1.0f64.ln(), 3.0f64.ln()]));
        let y = t.grouped_softmax(x, vec![vec![0, 1], vec![2], vec![3, 4]]).unwrap();
        let v = t.value(y).data();
        assert_eq!(&v[..3], &[0.5, 0.5, 1.0]);
        assert!((v[3] - 0.25).abs() < 1e-15 && (v[4] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_rejects_bad_groups() {
        let mut t = Tape::new();
        let x = t.constant(Matrix::column(vec![0.0, 1.0]));
        assert_eq!(t.grouped_softmax(x, vec![vec![0, 1], vec![]]).unwrap_err(), NeuralError::EmptyGroup(1));
        assert_eq!(t.grouped_softmax(x, vec![vec![0]]).unwrap_err(), NeuralError::NotPartition(1));
        assert_eq!(t.grouped_softmax(x, vec![vec![0, 1, 0]]).unwrap_err(), NeuralError::NotPartition(0));
    }

    #[test]
    fn linear_gradient() {
        // loss = w * x with x = 2
        let (store, id) = store_with(&[0.7]);
        let mut t = Tape::new();
        let w = t.param(&store, id);
        let x = t.constant(Matrix::scalar(2.0));
        let y = t.matmul(w, x).unwrap();
        let mut grad = vec![0.0];
        t.backward(y, 1.0, &mut grad).unwrap();
        assert_eq!(grad, vec![2.0]);
    }

    #[test]
    fn relu_subgradient_is_zero_below_and_at_zero() {
        for w0 in [-0.3, 0.0] {
            let (store, id) = store_with(&[w0]);
            let mut t = Tape::new();
            let w = t.param(&store, id);
            let r = t.relu(w);
            let s = t.sum(r);
            let mut grad = vec![0.0];
            t.backward(s, 1.0, &mut grad).unwrap();
            assert_eq!(grad, vec![0.0]);
        }
    }

    #[test]
    fn backward_errors() {
        let t = Tape::new();
        assert_eq!(t.backward(Var(0), 1.0, &mut []).unwrap_err(), NeuralError::EmptyTape);
        let mut t = Tape::new();
        let x = t.constant(Matrix::column(vec![1.0, 2.0]));
        assert!(matches!(t.backward(x, 1.0, &mut []), Err(NeuralError::NotScalar(_))));
    }

    #[test]
    fn seed_scales_gradient() {
        let (store, id) = store_with(&[0.3, -1.2, 0.8]);
        let run = |seed: f64| {
            let mut t = Tape::new();
            let w = t.param(&store, id);
            let s = t.sigmoid(w);
            let sq = t.log_eps(s, 1e-30);
            let out = t.dot_const(sq, vec![1.0, 2.0, -0.5]).unwrap();
            let mut grad = vec![0.0; 3];
            t.backward(out, seed, &mut grad).unwrap();
            grad
        };
        let g1 = run(1.0);
        let g3 = run(-3.0);
        for (a, b) in g1.iter().zip(&g3) {
            assert!((b + 3.0 * a).abs() <= 1e-15 * a.abs().max(1.0));
        }
    }
}
