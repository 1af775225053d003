//! Minimal reverse-mode differentiation over row-major f64 matrices.
//!
//! A [`Tape`] records operations against a borrowed parameter set. Calling
//! [`Tape::backward`] on a scalar node accumulates gradients for every
//! parameter that contributed to it.

use serde::{Deserialize, Serialize};

const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Self {
        assert_eq!(rows * cols, data.len(), "matrix shape mismatch");
        Self { rows, cols, data }
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub(super) fn add_assign(&mut self, other: &Matrix) {
        debug_assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }
}

/// `a · b`
pub(super) fn matmul(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols, b.rows, "matmul shape mismatch");
    let mut out = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out_row = &mut out.data[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in a.row(i).iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            for (o, &bkj) in out_row.iter_mut().zip(b.row(k)) {
                *o += aik * bkj;
            }
        }
    }
    out
}

/// Row softmax. With `causal`, entry `(i, j)` for `j > i` is masked out.
pub(super) fn softmax_rows(x: &Matrix, causal: bool) -> Matrix {
    let mut out = Matrix::zeros(x.rows, x.cols);
    for i in 0..x.rows {
        let limit = if causal { (i + 1).min(x.cols) } else { x.cols };
        let row = &x.row(i)[..limit];
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        let out_row = out.row_mut(i);
        for (o, &v) in out_row.iter_mut().zip(row) {
            *o = (v - max).exp();
            sum += *o;
        }
        out_row[..limit].iter_mut().for_each(|o| *o /= sum);
    }
    out
}

/// Returns the output, the normalized rows and each row's inverse std.
pub(super) fn layer_norm_rows(xv: &Matrix, g: &Matrix, b: &Matrix) -> (Matrix, Matrix, Vec<f64>) {
    let n = xv.cols as f64;
    let mut normalized = Matrix::zeros(xv.rows, xv.cols);
    let mut inv_std = Vec::with_capacity(xv.rows);
    let mut out = Matrix::zeros(xv.rows, xv.cols);
    for i in 0..xv.rows {
        let row = xv.row(i);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std.push(inv);
        for j in 0..xv.cols {
            let h = (row[j] - mean) * inv;
            normalized.data[i * xv.cols + j] = h;
            out.data[i * xv.cols + j] = g.data[j] * h + b.data[j];
        }
    }
    (out, normalized, inv_std)
}

pub(super) fn add_row_in_place(m: &mut Matrix, row: &Matrix) {
    for i in 0..m.rows {
        for (o, b) in m.row_mut(i).iter_mut().zip(&row.data) {
            *o += b;
        }
    }
}

/// `a · bᵀ`
pub(super) fn matmul_bt(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.cols, b.cols, "matmul_bt shape mismatch");
    let mut out = Matrix::zeros(a.rows, b.rows);
    for i in 0..a.rows {
        let ar = a.row(i);
        for j in 0..b.rows {
            out.data[i * b.rows + j] = ar.iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
        }
    }
    out
}

/// `aᵀ · b`
fn matmul_at(a: &Matrix, b: &Matrix) -> Matrix {
    assert_eq!(a.rows, b.rows, "matmul_at shape mismatch");
    let mut out = Matrix::zeros(a.cols, b.cols);
    for r in 0..a.rows {
        let br = b.row(r);
        for (i, &ari) in a.row(r).iter().enumerate() {
            if ari == 0.0 {
                continue;
            }
            for (o, &brj) in out.data[i * b.cols..(i + 1) * b.cols].iter_mut().zip(br) {
                *o += ari * brj;
            }
        }
    }
    out
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub(super) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let t = inner.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

pub type Node = usize;

enum Op {
    Param(usize),
    Gather { param: usize, ids: Vec<usize> },
    Add(Node, Node),
    AddRow(Node, Node),
    MatMul(Node, Node),
    MatMulBt(Node, Node),
    Scale(Node, f64),
    Gelu(Node),
    Softmax(Node),
    LayerNorm { x: Node, gain: Node, bias: Node, normalized: Matrix, inv_std: Vec<f64> },
    SliceCols { x: Node, start: usize },
    ConcatCols(Vec<Node>),
    CrossEntropy { logits: Node, targets: Vec<usize>, probs: Matrix },
    WeightedSum(Vec<(Node, f64)>),
}

enum Value {
    Owned(Matrix),
    Param(usize),
}

pub struct Tape<'p> {
    params: &'p [Matrix],
    ops: Vec<Op>,
    values: Vec<Value>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [Matrix]) -> Self {
        Self { params, ops: Vec::new(), values: Vec::new() }
    }

    pub fn value(&self, node: Node) -> &Matrix {
        match &self.values[node] {
            Value::Owned(m) => m,
            Value::Param(i) => &self.params[*i],
        }
    }

    fn push(&mut self, op: Op, value: Matrix) -> Node {
        self.ops.push(op);
        self.values.push(Value::Owned(value));
        self.ops.len() - 1
    }

    pub fn param(&mut self, index: usize) -> Node {
        self.ops.push(Op::Param(index));
        self.values.push(Value::Param(index));
        self.ops.len() - 1
    }

    /// Rows `ids` of parameter `param`.
    pub fn gather(&mut self, param: usize, ids: &[usize]) -> Node {
        let table = &self.params[param];
        let mut out = Matrix::zeros(ids.len(), table.cols);
        for (r, &id) in ids.iter().enumerate() {
            out.row_mut(r).copy_from_slice(table.row(id));
        }
        self.push(Op::Gather { param, ids: ids.to_vec() }, out)
    }

    pub fn add(&mut self, a: Node, b: Node) -> Node {
        let mut out = self.value(a).clone();
        out.add_assign(self.value(b));
        self.push(Op::Add(a, b), out)
    }

    /// Adds the single-row `row` to every row of `a`.
    pub fn add_row(&mut self, a: Node, row: Node) -> Node {
        let mut out = self.value(a).clone();
        let r = self.value(row);
        assert_eq!((r.rows, r.cols), (1, out.cols), "add_row shape mismatch");
        add_row_in_place(&mut out, r);
        self.push(Op::AddRow(a, row), out)
    }

    pub fn matmul(&mut self, a: Node, b: Node) -> Node {
        let out = matmul(self.value(a), self.value(b));
        self.push(Op::MatMul(a, b), out)
    }

    pub fn matmul_bt(&mut self, a: Node, b: Node) -> Node {
        let out = matmul_bt(self.value(a), self.value(b));
        self.push(Op::MatMulBt(a, b), out)
    }

    pub fn scale(&mut self, a: Node, factor: f64) -> Node {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|x| *x *= factor);
        self.push(Op::Scale(a, factor), out)
    }

    pub fn gelu(&mut self, a: Node) -> Node {
        let mut out = self.value(a).clone();
        out.data.iter_mut().for_each(|x| *x = gelu(*x));
        self.push(Op::Gelu(a), out)
    }

    /// Row softmax. With `causal`, entry `(i, j)` for `j > i` is masked out.
    pub fn softmax(&mut self, a: Node, causal: bool) -> Node {
        let out = softmax_rows(self.value(a), causal);
        self.push(Op::Softmax(a), out)
    }

    pub fn layer_norm(&mut self, x: Node, gain: Node, bias: Node) -> Node {
        let (out, normalized, inv_std) = layer_norm_rows(self.value(x), self.value(gain), self.value(bias));
        self.push(Op::LayerNorm { x, gain, bias, normalized, inv_std }, out)
    }

    pub fn slice_cols(&mut self, x: Node, start: usize, len: usize) -> Node {
        let xv = self.value(x);
        let mut out = Matrix::zeros(xv.rows, len);
        for i in 0..xv.rows {
            out.row_mut(i).copy_from_slice(&xv.row(i)[start..start + len]);
        }
        self.push(Op::SliceCols { x, start }, out)
    }

    pub fn concat_cols(&mut self, parts: &[Node]) -> Node {
        let rows = self.value(parts[0]).rows;
        let cols: usize = parts.iter().map(|&p| self.value(p).cols).sum();
        let mut out = Matrix::zeros(rows, cols);
        let mut offset = 0;
        for &p in parts {
            let pv = self.value(p);
            for i in 0..rows {
                out.data[i * cols + offset..i * cols + offset + pv.cols].copy_from_slice(pv.row(i));
            }
            offset += pv.cols;
        }
        self.push(Op::ConcatCols(parts.to_vec()), out)
    }

    /// Mean over rows of `-log softmax(logits[r])[targets[r]]`, as a 1x1 node.
    pub fn cross_entropy(&mut self, logits: Node, targets: &[usize]) -> Node {
        let lv = self.value(logits);
        assert_eq!(lv.rows, targets.len(), "one target per logit row");
        let mut probs = Matrix::zeros(lv.rows, lv.cols);
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = lv.row(i);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = row.iter().map(|v| (v - max).exp()).sum();
            let log_z = max + sum.ln();
            total += log_z - row[t];
            for (p, &v) in probs.row_mut(i).iter_mut().zip(row) {
                *p = (v - log_z).exp();
            }
        }
        let loss = total / targets.len() as f64;
        self.push(
            Op::CrossEntropy { logits, targets: targets.to_vec(), probs },
            Matrix::from_vec(1, 1, vec![loss]),
        )
    }

    pub fn weighted_sum(&mut self, terms: &[(Node, f64)]) -> Node {
        let mut out = Matrix::zeros(1, 1);
        for &(n, w) in terms {
            out.data[0] += w * self.value(n).data[0];
        }
        self.push(Op::WeightedSum(terms.to_vec()), out)
    }

    /// Gradients of the scalar `root` with respect to every parameter.
    pub fn backward(&self, root: Node) -> Vec<Matrix> {
        let mut param_grads: Vec<Matrix> =
            self.params.iter().map(|p| Matrix::zeros(p.rows, p.cols)).collect();
        let mut grads: Vec<Option<Matrix>> = (0..self.ops.len()).map(|_| None).collect();
        grads[root] = Some(Matrix::from_vec(1, 1, vec![1.0]));

        for node in (0..=root).rev() {
            let Some(g) = grads[node].take() else { continue };
            match &self.ops[node] {
                Op::Param(i) => param_grads[*i].add_assign(&g),
                Op::Gather { param, ids } => {
                    let pg = &mut param_grads[*param];
                    for (r, &id) in ids.iter().enumerate() {
                        for (o, v) in pg.row_mut(id).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::AddRow(a, row) => {
                    let mut rg = Matrix::zeros(1, g.cols);
                    for i in 0..g.rows {
                        for (o, v) in rg.data.iter_mut().zip(g.row(i)) {
                            *o += v;
                        }
                    }
                    accumulate(&mut grads, *row, rg);
                    accumulate(&mut grads, *a, g);
                }
                Op::MatMul(a, b) => {
                    let ga = matmul_bt(&g, self.value(*b));
                    let gb = matmul_at(self.value(*a), &g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::MatMulBt(a, b) => {
                    let ga = matmul(&g, self.value(*b));
                    let gb = matmul_at(&g, self.value(*a));
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Scale(a, factor) => {
                    let mut ga = g;
                    ga.data.iter_mut().for_each(|x| *x *= factor);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Gelu(a) => {
                    let x = self.value(*a);
                    let mut ga = g;
                    for (gv, &xv) in ga.data.iter_mut().zip(&x.data) {
                        *gv *= gelu_grad(xv);
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Softmax(a) => {
                    let y = self.value(node);
                    let mut ga = Matrix::zeros(y.rows, y.cols);
                    for i in 0..y.rows {
                        let (yr, gr) = (y.row(i), g.row(i));
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for (o, (yv, gv)) in ga.row_mut(i).iter_mut().zip(yr.iter().zip(gr)) {
                            *o = yv * (gv - dot);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::LayerNorm { x, gain, bias, normalized, inv_std } => {
                    let gv = self.value(*gain);
                    let n = g.cols as f64;
                    let mut gx = Matrix::zeros(g.rows, g.cols);
                    let mut ggain = Matrix::zeros(1, g.cols);
                    let mut gbias = Matrix::zeros(1, g.cols);
                    for i in 0..g.rows {
                        let (gr, hr) = (g.row(i), normalized.row(i));
                        let dh: Vec<f64> = gr.iter().zip(&gv.data).map(|(a, b)| a * b).collect();
                        let sum_dh: f64 = dh.iter().sum();
                        let sum_dh_h: f64 = dh.iter().zip(hr).map(|(a, b)| a * b).sum();
                        for j in 0..g.cols {
                            gx.data[i * g.cols + j] =
                                inv_std[i] / n * (n * dh[j] - sum_dh - hr[j] * sum_dh_h);
                            ggain.data[j] += gr[j] * hr[j];
                            gbias.data[j] += gr[j];
                        }
                    }
                    accumulate(&mut grads, *x, gx);
                    accumulate(&mut grads, *gain, ggain);
                    accumulate(&mut grads, *bias, gbias);
                }
                Op::SliceCols { x, start } => {
                    let xv = self.value(*x);
                    let mut gx = Matrix::zeros(xv.rows, xv.cols);
                    for i in 0..g.rows {
                        gx.row_mut(i)[*start..*start + g.cols].copy_from_slice(g.row(i));
                    }
                    accumulate(&mut grads, *x, gx);
                }
                Op::ConcatCols(parts) => {
                    let mut offset = 0;
                    for &p in parts {
                        let cols = self.value(p).cols;
                        let mut gp = Matrix::zeros(g.rows, cols);
                        for i in 0..g.rows {
                            gp.row_mut(i).copy_from_slice(&g.row(i)[offset..offset + cols]);
                        }
                        offset += cols;
                        accumulate(&mut grads, p, gp);
                    }
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let scale = g.data[0] / targets.len() as f64;
                    let mut gl = probs.clone();
                    for (i, &t) in targets.iter().enumerate() {
                        gl.data[i * gl.cols + t] -= 1.0;
                    }
                    gl.data.iter_mut().for_each(|x| *x *= scale);
                    accumulate(&mut grads, *logits, gl);
                }
                Op::WeightedSum(terms) => {
                    for &(n, w) in terms {
                        accumulate(&mut grads, n, Matrix::from_vec(1, 1, vec![w * g.data[0]]));
                    }
                }
            }
        }
        param_grads
    }
}

fn accumulate(grads: &mut [Option<Matrix>], node: Node, g: Matrix) {
    match &mut grads[node] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => *slot = Some(g),
    }
}
