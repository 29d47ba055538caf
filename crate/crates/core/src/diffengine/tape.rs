use std::borrow::Cow;
use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use super::matrix::{gemm, Matrix};
use super::params::ParamStore;
use crate::error::{Error, Result};

const LAYER_NORM_EPS: f64 = 1e-5;

/// Handle to a node of a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Silu(Var),
    Sigmoid(Var),
    Softplus(Var),
    Sqrt(Var),
    Recip(Var),
    Huber(Var, f64),
    RowSum(Var),
    SumAll(Var),
    LayerNorm(Var, Vec<f64>),
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize),
    Gather(Var, Arc<[usize]>),
    SegmentSum(Var, Arc<[usize]>),
}

struct Node<'p> {
    value: Cow<'p, Matrix>,
    op: Op,
    requires_grad: bool,
}

/// Computation record for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the node vector is already a
/// topological order and the backward sweep is a single reverse scan.
/// Parameter leaves borrow their values from a [`ParamStore`] for the
/// lifetime `'p`.
#[derive(Default)]
pub struct Tape<'p> {
    nodes: Vec<Node<'p>>,
    params: Vec<(Var, &'p str)>,
    param_index: HashMap<&'p str, Var>,
}

/// Per-node gradients produced by a backward sweep.
pub struct Gradients {
    grads: Vec<Option<Matrix>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Matrix> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }
}

/// Parameter gradients keyed by parameter name.
pub type GradMap = BTreeMap<String, Matrix>;

impl<'p> Tape<'p> {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Matrix {
        &self.nodes[var.0].value
    }

    pub fn shape(&self, var: Var) -> (usize, usize) {
        self.nodes[var.0].value.shape()
    }

    fn push(&mut self, value: Matrix, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value: Cow::Owned(value),
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// A value that receives no gradient.
    pub fn constant(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A free leaf that accumulates gradient but is not a named parameter.
    pub fn leaf(&mut self, value: Matrix) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf bound to a named parameter of `store`. Repeated requests for the
    /// same name return the same node.
    pub fn param(&mut self, store: &'p ParamStore, name: &str) -> Result<Var> {
        if let Some(&var) = self.param_index.get(name) {
            return Ok(var);
        }
        let (key, value) = store
            .get_entry(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        self.nodes.push(Node {
            value: Cow::Borrowed(value),
            op: Op::Leaf,
            requires_grad: true,
        });
        let var = Var(self.nodes.len() - 1);
        self.params.push((var, key));
        self.param_index.insert(key, var);
        Ok(var)
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::Dimension {
                op,
                left: sa,
                right: sb,
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let value = self.value(a).matmul(self.value(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::MatMul(a, b), rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Sub(a, b), rg))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let value = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Mul(a, b), rg))
    }

    /// `a + row`, broadcasting a 1×c row over every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr != (1, sa.1) {
            return Err(Error::Dimension {
                op: "add_row",
                left: sa,
                right: sr,
            });
        }
        let mut value = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for i in 0..sa.0 {
            for (v, b) in value.row_mut(i).iter_mut().zip(&r) {
                *v += b;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(value, Op::AddRow(a, row), rg))
    }

    /// `a ∘ row`, broadcasting a 1×c row over every row of `a`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Result<Var> {
        let (sa, sr) = (self.shape(a), self.shape(row));
        if sr != (1, sa.1) {
            return Err(Error::Dimension {
                op: "mul_row",
                left: sa,
                right: sr,
            });
        }
        let mut value = self.value(a).clone();
        let r = self.value(row).data().to_vec();
        for i in 0..sa.0 {
            for (v, b) in value.row_mut(i).iter_mut().zip(&r) {
                *v *= b;
            }
        }
        let rg = self.rg(a) || self.rg(row);
        Ok(self.push(value, Op::MulRow(a, row), rg))
    }

    /// `a ∘ col`, broadcasting an r×1 column over every column of `a`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Result<Var> {
        let (sa, sc) = (self.shape(a), self.shape(col));
        if sc != (sa.0, 1) {
            return Err(Error::Dimension {
                op: "mul_col",
                left: sa,
                right: sc,
            });
        }
        let mut value = self.value(a).clone();
        let c = self.value(col).data().to_vec();
        for (i, factor) in c.iter().enumerate() {
            value.row_mut(i).iter_mut().for_each(|v| *v *= factor);
        }
        let rg = self.rg(a) || self.rg(col);
        Ok(self.push(value, Op::MulCol(a, col), rg))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let value = self.value(a).map(|x| x * factor);
        let rg = self.rg(a);
        self.push(value, Op::Scale(a, factor), rg)
    }

    pub fn add_scalar(&mut self, a: Var, offset: f64) -> Var {
        let value = self.value(a).map(|x| x + offset);
        let rg = self.rg(a);
        self.push(value, Op::AddScalar(a), rg)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x * sigmoid(x));
        let rg = self.rg(a);
        self.push(value, Op::Silu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).map(sigmoid);
        let rg = self.rg(a);
        self.push(value, Op::Sigmoid(a), rg)
    }

    /// `ln(1 + e^x)`, evaluated without overflow.
    pub fn softplus(&mut self, a: Var) -> Var {
        let value = self.value(a).map(softplus);
        let rg = self.rg(a);
        self.push(value, Op::Softplus(a), rg)
    }

    /// Elementwise square root. The derivative at zero is taken as zero.
    pub fn sqrt(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| x.max(0.0).sqrt());
        let rg = self.rg(a);
        self.push(value, Op::Sqrt(a), rg)
    }

    pub fn recip(&mut self, a: Var) -> Var {
        let value = self.value(a).map(|x| 1.0 / x);
        let rg = self.rg(a);
        self.push(value, Op::Recip(a), rg)
    }

    /// Elementwise Huber penalty: quadratic below `delta`, linear above.
    pub fn huber(&mut self, a: Var, delta: f64) -> Var {
        let value = self.value(a).map(|r| huber(r, delta));
        let rg = self.rg(a);
        self.push(value, Op::Huber(a, delta), rg)
    }

    /// r×c → r×1 row sums.
    pub fn row_sum(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let value = Matrix::from_fn(m.rows(), 1, |r, _| m.row(r).iter().sum());
        let rg = self.rg(a);
        self.push(value, Op::RowSum(a), rg)
    }

    /// Sum of all entries as a 1×1 matrix.
    pub fn sum_all(&mut self, a: Var) -> Var {
        let value = Matrix::scalar(self.value(a).sum());
        let rg = self.rg(a);
        self.push(value, Op::SumAll(a), rg)
    }

    /// Euclidean norm of each row, r×c → r×1.
    pub fn row_norm(&mut self, a: Var) -> Result<Var> {
        let sq = self.mul(a, a)?;
        let s = self.row_sum(sq);
        Ok(self.sqrt(s))
    }

    /// Per-row standardisation to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let m = self.value(a);
        let (rows, cols) = m.shape();
        let mut value = Matrix::zeros(rows, cols);
        let mut inv_std = Vec::with_capacity(rows);
        for r in 0..rows {
            let x = m.row(r);
            let mean = x.iter().sum::<f64>() / cols as f64;
            let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            for (o, v) in value.row_mut(r).iter_mut().zip(x) {
                *o = (v - mean) * inv;
            }
            inv_std.push(inv);
        }
        let rg = self.rg(a);
        self.push(value, Op::LayerNorm(a, inv_std), rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.shape(parts[0]).0;
        for &p in parts {
            if self.shape(p).0 != rows {
                return Err(Error::Dimension {
                    op: "concat_cols",
                    left: self.shape(parts[0]),
                    right: self.shape(p),
                });
            }
        }
        let cols: usize = parts.iter().map(|&p| self.shape(p).1).sum();
        let mut value = Matrix::zeros(rows, cols);
        for r in 0..rows {
            let mut offset = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                value.row_mut(r)[offset..offset + src.len()].copy_from_slice(src);
                offset += src.len();
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::ConcatCols(parts.to_vec()), rg))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        let cols = self.shape(parts[0]).1;
        let mut data = Vec::new();
        for &p in parts {
            if self.shape(p).1 != cols {
                return Err(Error::Dimension {
                    op: "concat_rows",
                    left: self.shape(parts[0]),
                    right: self.shape(p),
                });
            }
            data.extend_from_slice(self.value(p).data());
        }
        let rows = data.len() / cols.max(1);
        let value = Matrix::from_vec(rows, cols, data)?;
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(value, Op::ConcatRows(parts.to_vec()), rg))
    }

    /// Rows `start..end` of `a`.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Result<Var> {
        let (rows, cols) = self.shape(a);
        if start > end || end > rows {
            return Err(Error::Contract(format!(
                "row slice {start}..{end} out of bounds for {rows} rows"
            )));
        }
        let value =
            Matrix::from_vec(end - start, cols, self.value(a).data()[start * cols..end * cols].to_vec())?;
        let rg = self.rg(a);
        Ok(self.push(value, Op::SliceRows(a, start), rg))
    }

    /// Row `i` of the output is row `index[i]` of `a`.
    pub fn gather(&mut self, a: Var, index: &Arc<[usize]>) -> Result<Var> {
        let m = self.value(a);
        let cols = m.cols();
        let mut value = Matrix::zeros(index.len(), cols);
        for (o, &src) in index.iter().enumerate() {
            if src >= m.rows() {
                return Err(Error::Contract(format!(
                    "gather index {src} out of bounds for {} rows",
                    m.rows()
                )));
            }
            value.row_mut(o).copy_from_slice(m.row(src));
        }
        let rg = self.rg(a);
        Ok(self.push(value, Op::Gather(a, Arc::clone(index)), rg))
    }

    /// Row `s` of the output is the sum of the rows `i` of `a` with `segment[i] == s`.
    pub fn segment_sum(&mut self, a: Var, segment: &Arc<[usize]>, segments: usize) -> Result<Var> {
        let m = self.value(a);
        if segment.len() != m.rows() {
            return Err(Error::Dimension {
                op: "segment_sum",
                left: m.shape(),
                right: (segment.len(), 1),
            });
        }
        let mut value = Matrix::zeros(segments, m.cols());
        for (i, &s) in segment.iter().enumerate() {
            if s >= segments {
                return Err(Error::Contract(format!(
                    "segment id {s} out of bounds for {segments} segments"
                )));
            }
            for (o, v) in value.row_mut(s).iter_mut().zip(m.row(i)) {
                *o += v;
            }
        }
        let rg = self.rg(a);
        Ok(self.push(value, Op::SegmentSum(a, Arc::clone(segment)), rg))
    }

    /// Bernoulli keep-mask with inverted scaling. Identity when `rate == 0`.
    pub fn dropout<R: rand::Rng + ?Sized>(&mut self, a: Var, rate: f64, rng: &mut R) -> Result<Var> {
        if rate <= 0.0 {
            return Ok(a);
        }
        let (rows, cols) = self.shape(a);
        let keep = 1.0 - rate;
        let mask = Matrix::from_fn(rows, cols, |_, _| {
            if rng.random::<f64>() < keep {
                1.0 / keep
            } else {
                0.0
            }
        });
        let mask = self.constant(mask);
        self.mul(a, mask)
    }

    /// Reverse sweep from a 1×1 `loss`, returning gradients for every node
    /// that depends on a gradient-carrying leaf.
    pub fn gradients(&self, loss: Var) -> Result<Gradients> {
        if self.shape(loss) != (1, 1) {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, found shape {:?}",
                self.shape(loss)
            )));
        }
        let mut grads: Vec<Option<Matrix>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Matrix::scalar(1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backprop(node, &g, &mut grads);
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    /// Gradients of `loss` with respect to every parameter bound on this tape.
    pub fn param_gradients(&self, loss: Var) -> Result<GradMap> {
        let grads = self.gradients(loss)?;
        let mut out = GradMap::new();
        for &(var, name) in &self.params {
            let g = grads
                .get(var)
                .cloned()
                .unwrap_or_else(|| Matrix::zeros(self.shape(var).0, self.shape(var).1));
            out.insert(name.to_string(), g);
        }
        Ok(out)
    }

    /// Accumulate ∂loss/∂param into the gradient buffers of `store`.
    pub fn backward(&self, loss: Var, store: &mut ParamStore) -> Result<()> {
        let grads = self.param_gradients(loss)?;
        store.accumulate(&grads)
    }

    fn accumulate(&self, grads: &mut [Option<Matrix>], var: Var, g: Matrix) {
        if !self.rg(var) {
            return;
        }
        match &mut grads[var.0] {
            Some(existing) => existing.add_assign(&g),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop(&self, node: &Node<'_>, g: &Matrix, grads: &mut [Option<Matrix>]) {
        let y = node.value.as_ref();
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                if self.rg(*a) {
                    let mut da = Matrix::zeros(av.rows(), av.cols());
                    gemm(g, false, bv, true, &mut da, 0.0);
                    self.accumulate(grads, *a, da);
                }
                if self.rg(*b) {
                    let mut db = Matrix::zeros(bv.rows(), bv.cols());
                    gemm(av, true, g, false, &mut db, 0.0);
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.map(|v| -v));
            }
            Op::Mul(a, b) => {
                if self.rg(*a) {
                    self.accumulate(grads, *a, g.zip_map(self.value(*b), |x, y| x * y));
                }
                if self.rg(*b) {
                    self.accumulate(grads, *b, g.zip_map(self.value(*a), |x, y| x * y));
                }
            }
            Op::AddRow(a, row) => {
                self.accumulate(grads, *a, g.clone());
                if self.rg(*row) {
                    self.accumulate(grads, *row, g.column_sums());
                }
            }
            Op::MulRow(a, row) => {
                let (av, rv) = (self.value(*a), self.value(*row));
                if self.rg(*a) {
                    let mut da = g.clone();
                    for r in 0..da.rows() {
                        for (d, f) in da.row_mut(r).iter_mut().zip(rv.data()) {
                            *d *= f;
                        }
                    }
                    self.accumulate(grads, *a, da);
                }
                if self.rg(*row) {
                    self.accumulate(grads, *row, g.zip_map(av, |x, y| x * y).column_sums());
                }
            }
            Op::MulCol(a, col) => {
                let (av, cv) = (self.value(*a), self.value(*col));
                if self.rg(*a) {
                    let mut da = g.clone();
                    for (r, f) in cv.data().iter().enumerate() {
                        da.row_mut(r).iter_mut().for_each(|d| *d *= f);
                    }
                    self.accumulate(grads, *a, da);
                }
                if self.rg(*col) {
                    let dc = Matrix::from_fn(av.rows(), 1, |r, _| {
                        g.row(r).iter().zip(av.row(r)).map(|(x, y)| x * y).sum()
                    });
                    self.accumulate(grads, *col, dc);
                }
            }
            Op::Scale(a, factor) => self.accumulate(grads, *a, g.map(|v| v * factor)),
            Op::AddScalar(a) => self.accumulate(grads, *a, g.clone()),
            Op::Silu(a) => {
                let d = self.value(*a).zip_map(g, |x, gv| {
                    let s = sigmoid(x);
                    gv * s * (1.0 + x * (1.0 - s))
                });
                self.accumulate(grads, *a, d);
            }
            Op::Sigmoid(a) => self.accumulate(grads, *a, y.zip_map(g, |s, gv| gv * s * (1.0 - s))),
            Op::Softplus(a) => {
                self.accumulate(grads, *a, self.value(*a).zip_map(g, |x, gv| gv * sigmoid(x)))
            }
            Op::Sqrt(a) => self.accumulate(
                grads,
                *a,
                y.zip_map(g, |s, gv| if s > 0.0 { gv * 0.5 / s } else { 0.0 }),
            ),
            Op::Recip(a) => self.accumulate(grads, *a, y.zip_map(g, |r, gv| -gv * r * r)),
            Op::Huber(a, delta) => {
                let d = self.value(*a).zip_map(g, |r, gv| {
                    if r.abs() <= *delta {
                        gv * r
                    } else {
                        gv * delta * r.signum()
                    }
                });
                self.accumulate(grads, *a, d);
            }
            Op::RowSum(a) => {
                let (rows, cols) = self.shape(*a);
                self.accumulate(grads, *a, Matrix::from_fn(rows, cols, |r, _| g.get(r, 0)));
            }
            Op::SumAll(a) => {
                let (rows, cols) = self.shape(*a);
                self.accumulate(grads, *a, Matrix::filled(rows, cols, g.get(0, 0)));
            }
            Op::LayerNorm(a, inv_std) => {
                let cols = y.cols() as f64;
                let mut d = Matrix::zeros(y.rows(), y.cols());
                for (r, inv) in inv_std.iter().enumerate() {
                    let (gr, yr) = (g.row(r), y.row(r));
                    let mean_g = gr.iter().sum::<f64>() / cols;
                    let mean_gy = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / cols;
                    for ((o, gv), yv) in d.row_mut(r).iter_mut().zip(gr).zip(yr) {
                        *o = inv * (gv - mean_g - yv * mean_gy);
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (rows, cols) = self.shape(p);
                    if self.rg(p) {
                        let d = Matrix::from_fn(rows, cols, |r, c| g.get(r, offset + c));
                        self.accumulate(grads, p, d);
                    }
                    offset += cols;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let (rows, cols) = self.shape(p);
                    if self.rg(p) {
                        let d = Matrix::from_vec(
                            rows,
                            cols,
                            g.data()[offset * cols..(offset + rows) * cols].to_vec(),
                        )
                        .expect("slice matches part shape");
                        self.accumulate(grads, p, d);
                    }
                    offset += rows;
                }
            }
            Op::SliceRows(a, start) => {
                let (rows, cols) = self.shape(*a);
                let mut d = Matrix::zeros(rows, cols);
                d.data_mut()[start * cols..start * cols + g.len()].copy_from_slice(g.data());
                self.accumulate(grads, *a, d);
            }
            Op::Gather(a, index) => {
                let (rows, cols) = self.shape(*a);
                let mut d = Matrix::zeros(rows, cols);
                for (o, &src) in index.iter().enumerate() {
                    for (dv, gv) in d.row_mut(src).iter_mut().zip(g.row(o)) {
                        *dv += gv;
                    }
                }
                self.accumulate(grads, *a, d);
            }
            Op::SegmentSum(a, segment) => {
                let (rows, cols) = self.shape(*a);
                let mut d = Matrix::zeros(rows, cols);
                for (i, &s) in segment.iter().enumerate() {
                    d.row_mut(i).copy_from_slice(g.row(s));
                }
                self.accumulate(grads, *a, d);
            }
        }
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[inline]
pub fn huber(r: f64, delta: f64) -> f64 {
    if r.abs() <= delta {
        0.5 * r * r
    } else {
        delta * (r.abs() - 0.5 * delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Central finite differences of `f` around `x`.
    fn numeric_grad(x: &Matrix, f: impl Fn(&Matrix) -> f64) -> Matrix {
        let h = 1e-5;
        let mut out = Matrix::zeros(x.rows(), x.cols());
        for i in 0..x.len() {
            let mut plus = x.clone();
            plus.data_mut()[i] += h;
            let mut minus = x.clone();
            minus.data_mut()[i] -= h;
            out.data_mut()[i] = (f(&plus) - f(&minus)) / (2.0 * h);
        }
        out
    }

    fn assert_close(a: &Matrix, b: &Matrix, tol: f64) {
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.data().iter().zip(b.data()) {
            let denom = x.abs().max(y.abs()).max(1e-6);
            assert!((x - y).abs() / denom < tol, "{x} vs {y}");
        }
    }

    fn sample() -> Matrix {
        Matrix::from_fn(4, 3, |r, c| ((r * 3 + c) as f64 * 0.731).sin() * 1.3 + 0.1)
    }

    /// Checks one unary pipeline `x -> sum(op(x) * w)` against finite differences.
    fn check_unary(op: impl Fn(&mut Tape, Var) -> Var) {
        let x0 = sample();
        let weights = Matrix::from_fn(4, 3, |r, c| (r as f64 - c as f64 * 0.5) * 0.3 + 0.2);
        let eval = |x: &Matrix| {
            let mut t = Tape::new();
            let xv = t.leaf(x.clone());
            let y = op(&mut t, xv);
            let shape = t.shape(y);
            let w = t.constant(Matrix::from_fn(shape.0, shape.1, |r, c| {
                weights.get(r % 4, c % 3)
            }));
            let p = t.mul(y, w).unwrap();
            let s = t.sum_all(p);
            (t.value(s).item().unwrap(), t, xv, s)
        };
        let (_, tape, xv, loss) = eval(&x0);
        let grads = tape.gradients(loss).unwrap();
        let numeric = numeric_grad(&x0, |x| eval(x).0);
        assert_close(grads.get(xv).unwrap(), &numeric, 1e-6);
    }

    #[test]
    fn elementwise_ops_match_finite_differences() {
        check_unary(|t, x| t.silu(x));
        check_unary(|t, x| t.sigmoid(x));
        check_unary(|t, x| t.softplus(x));
        check_unary(|t, x| t.huber(x, 0.5));
        check_unary(|t, x| {
            let sq = t.mul(x, x).unwrap();
            let s = t.add_scalar(sq, 0.3);
            t.sqrt(s)
        });
        check_unary(|t, x| {
            let s = t.add_scalar(x, 3.0);
            t.recip(s)
        });
        check_unary(|t, x| t.layer_norm(x));
        check_unary(|t, x| t.row_norm(x).unwrap());
        check_unary(|t, x| t.scale(x, -2.5));
    }

    #[test]
    fn structural_ops_match_finite_differences() {
        let idx: Arc<[usize]> = Arc::from(vec![3, 0, 0, 2, 1, 3]);
        let seg: Arc<[usize]> = Arc::from(vec![1, 0, 1, 1]);
        check_unary(move |t, x| t.gather(x, &idx).unwrap());
        check_unary(move |t, x| t.segment_sum(x, &seg, 2).unwrap());
        check_unary(|t, x| t.slice_rows(x, 1, 3).unwrap());
        check_unary(|t, x| {
            let y = t.scale(x, 2.0);
            t.concat_cols(&[x, y]).unwrap()
        });
        check_unary(|t, x| {
            let y = t.silu(x);
            t.concat_rows(&[y, x]).unwrap()
        });
        check_unary(|t, x| {
            let c = t.row_sum(x);
            t.mul_col(x, c).unwrap()
        });
        check_unary(|t, x| {
            let r = t.slice_rows(x, 2, 3).unwrap();
            let p = t.mul_row(x, r).unwrap();
            t.add_row(p, r).unwrap()
        });
        check_unary(|t, x| {
            let w = t.constant(Matrix::from_fn(3, 3, |r, c| (r as f64 + 1.0) * 0.2 - c as f64 * 0.1));
            let y = t.matmul(x, w).unwrap();
            let xt = t.constant(sample().transpose());
            let z = t.matmul(xt, y).unwrap();
            let zz = t.matmul(x, z).unwrap();
            t.sub(zz, x).unwrap()
        });
    }

    #[test]
    fn sum_of_parameter_has_unit_gradient() {
        let mut store = ParamStore::new();
        store.insert("p", Matrix::from_fn(2, 3, |r, c| (r + c) as f64)).unwrap();
        let mut tape = Tape::new();
        let p = tape.param(&store, "p").unwrap();
        let loss = tape.sum_all(p);
        let grads = tape.param_gradients(loss).unwrap();
        assert_eq!(grads["p"], Matrix::filled(2, 3, 1.0));
    }

    #[test]
    fn squared_norm_gradient_is_twice_parameter() {
        let mut store = ParamStore::new();
        let value = Matrix::from_fn(3, 2, |r, c| r as f64 - 2.0 * c as f64 + 0.5);
        store.insert("p", value.clone()).unwrap();
        let mut tape = Tape::new();
        let p = tape.param(&store, "p").unwrap();
        let sq = tape.mul(p, p).unwrap();
        let loss = tape.sum_all(sq);
        let grads = tape.param_gradients(loss).unwrap();
        assert_eq!(grads["p"], value.map(|v| 2.0 * v));
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut store = ParamStore::new();
        store.insert("p", Matrix::scalar(3.0)).unwrap();
        let snapshot = store.clone();
        let mut tape = Tape::new();
        let p = tape.param(&snapshot, "p").unwrap();
        let loss = tape.scale(p, 2.0);
        tape.backward(loss, &mut store).unwrap();
        tape.backward(loss, &mut store).unwrap();
        assert_eq!(store.grad("p").unwrap().item().unwrap(), 4.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.leaf(Matrix::zeros(2, 1));
        assert!(matches!(tape.gradients(x), Err(Error::Contract(_))));
    }

    #[test]
    fn shared_subexpression_visited_once_per_use() {
        // loss = sum((x + x) * x) = 2 sum(x^2) -> grad = 4x
        let mut tape = Tape::new();
        let x = tape.leaf(Matrix::column(&[1.0, -2.0]));
        let y = tape.add(x, x).unwrap();
        let z = tape.mul(y, x).unwrap();
        let loss = tape.sum_all(z);
        let g = tape.gradients(loss).unwrap();
        assert_eq!(g.get(x).unwrap().data(), &[4.0, -8.0]);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let c = tape.constant(Matrix::scalar(2.0));
        let x = tape.leaf(Matrix::scalar(5.0));
        let y = tape.mul(c, x).unwrap();
        let g = tape.gradients(y).unwrap();
        assert!(g.get(c).is_none());
        assert_eq!(g.get(x).unwrap().item().unwrap(), 2.0);
    }

    #[test]
    fn sqrt_at_zero_has_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.leaf(Matrix::scalar(0.0));
        let y = tape.sqrt(x);
        let g = tape.gradients(y).unwrap();
        assert_eq!(g.get(x).unwrap().item().unwrap(), 0.0);
    }
}
