use std::ops::Range;

use super::tensor::{gemm, Tensor};
use super::NumericsError;

/// Handle to a node recorded in a [`Graph`].
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
    MatMul {
        a: Var,
        b: Var,
        trans_b: bool,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow {
        a: Var,
        row: Var,
    },
    MulRow {
        a: Var,
        row: Var,
    },
    Scale {
        a: Var,
        factor: f64,
    },
    ScaleBy {
        a: Var,
        s: Var,
    },
    Reciprocal(Var),
    Sigmoid(Var),
    Relu(Var),
    Gelu(Var),
    Abs(Var),
    Softmax(Var),
    LayerNorm {
        a: Var,
        inv_std: Vec<f64>,
    },
    Embedding {
        table: Var,
        ids: Vec<usize>,
    },
    CumSum(Var),
    SegmentSum {
        values: Var,
        weights: Var,
        segments: Vec<Range<usize>>,
    },
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Vec<f64>,
    },
    Sum(Var),
    Transpose(Var),
    Reshape(Var),
    SliceCols {
        a: Var,
        start: usize,
        end: usize,
    },
    SliceRows {
        a: Var,
        start: usize,
    },
    ConcatCols(Vec<Var>),
    ConcatRows(Vec<Var>),
    Unfold {
        a: Var,
        kernel: usize,
        stride: usize,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Tape of primitive operations for reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the tape is already a
/// topological order and `backward` simply walks it in reverse. Shape
/// mismatches panic when the offending node is recorded.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`], indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of the loss wrt `v`, or `None` when `v` does not require grad
    /// or the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<Tensor> {
        self.grads[v.0]
            .as_ref()
            .map(|g| Tensor::new(self.shapes[v.0].clone(), g.clone()))
    }

    pub fn slice(&self, v: Var) -> Option<&[f64]> {
        self.grads[v.0].as_deref()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

pub(crate) fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + 0.044715 * x * x * x);
    let th = inner.tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

fn mat_dims(t: &Tensor) -> (usize, usize) {
    assert_eq!(
        t.shape().len(),
        2,
        "expected a matrix, got shape {:?}",
        t.shape()
    );
    (t.shape()[0], t.shape()[1])
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

    /// Drops every node recorded after the first `len`; earlier handles stay valid.
    pub fn truncate(&mut self, len: usize) {
        self.nodes.truncate(len);
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records a trainable leaf.
    pub fn param(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Records a leaf that never receives gradient.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    /// `a · b`, or `a · bᵀ` when `trans_b` is set.
    pub fn matmul_ex(&mut self, a: Var, b: Var, trans_b: bool) -> Var {
        let (m, k) = mat_dims(self.value(a));
        let (br, bc) = mat_dims(self.value(b));
        let (bk, n) = if trans_b { (bc, br) } else { (br, bc) };
        assert_eq!(
            k,
            bk,
            "matmul inner dims: {:?} x {:?}",
            self.shape(a),
            self.shape(b)
        );
        let mut out = vec![0.0; m * n];
        gemm(
            m,
            k,
            n,
            self.value(a).data(),
            false,
            self.value(b).data(),
            trans_b,
            &mut out,
            false,
        );
        let rg = self.rg(a) || self.rg(b);
        self.push(
            Tensor::new(vec![m, n], out),
            Op::MatMul { a, b, trans_b },
            rg,
        )
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        self.matmul_ex(a, b, false)
    }

    /// `a · bᵀ`.
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        self.matmul_ex(a, b, true)
    }

    fn zip_same(&mut self, a: Var, b: Var, f: impl Fn(f64, f64) -> f64) -> Tensor {
        let (ta, tb) = (self.value(a), self.value(b));
        assert_eq!(ta.shape(), tb.shape(), "elementwise shape mismatch");
        let data = ta
            .data()
            .iter()
            .zip(tb.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        Tensor::new(ta.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let t = self.zip_same(a, b, |x, y| x + y);
        let rg = self.rg(a) || self.rg(b);
        self.push(t, Op::Add(a, b), rg)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let t = self.zip_same(a, b, |x, y| x - y);
        let rg = self.rg(a) || self.rg(b);
        self.push(t, Op::Sub(a, b), rg)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let t = self.zip_same(a, b, |x, y| x * y);
        let rg = self.rg(a) || self.rg(b);
        self.push(t, Op::Mul(a, b), rg)
    }

    fn row_broadcast(&self, a: Var, row: Var) -> usize {
        let cols = self.value(a).cols();
        assert_eq!(
            self.value(row).numel(),
            cols,
            "row operand of {} values for matrix {:?}",
            self.value(row).numel(),
            self.shape(a)
        );
        cols
    }

    /// Adds `row` to every row of `a` (broadcast over the leading dimension).
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let cols = self.row_broadcast(a, row);
        let r = self.value(row).data();
        let mut t = self.value(a).clone();
        for chunk in t.data_mut().chunks_mut(cols.max(1)) {
            chunk.iter_mut().zip(r).for_each(|(x, y)| *x += y);
        }
        let rg = self.rg(a) || self.rg(row);
        self.push(t, Op::AddRow { a, row }, rg)
    }

    /// Multiplies every row of `a` elementwise by `row`.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let cols = self.row_broadcast(a, row);
        let r = self.value(row).data();
        let mut t = self.value(a).clone();
        for chunk in t.data_mut().chunks_mut(cols.max(1)) {
            chunk.iter_mut().zip(r).for_each(|(x, y)| *x *= y);
        }
        let rg = self.rg(a) || self.rg(row);
        self.push(t, Op::MulRow { a, row }, rg)
    }

    fn map(&self, a: Var, f: impl Fn(f64) -> f64) -> Tensor {
        let ta = self.value(a);
        Tensor::new(
            ta.shape().to_vec(),
            ta.data().iter().map(|x| f(*x)).collect(),
        )
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let t = self.map(a, |x| x * factor);
        let rg = self.rg(a);
        self.push(t, Op::Scale { a, factor }, rg)
    }

    /// Multiplies `a` by the one-element tensor `s`.
    pub fn scale_by(&mut self, a: Var, s: Var) -> Var {
        assert!(
            self.value(s).is_scalar(),
            "scale_by expects a one-element factor"
        );
        let f = self.value(s).item();
        let t = self.map(a, |x| x * f);
        let rg = self.rg(a) || self.rg(s);
        self.push(t, Op::ScaleBy { a, s }, rg)
    }

    pub fn reciprocal(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| 1.0 / x);
        let rg = self.rg(a);
        self.push(t, Op::Reciprocal(a), rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let t = self.map(a, sigmoid);
        let rg = self.rg(a);
        self.push(t, Op::Sigmoid(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let t = self.map(a, |x| x.max(0.0));
        let rg = self.rg(a);
        self.push(t, Op::Relu(a), rg)
    }

    /// Tanh-approximated GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let t = self.map(a, gelu);
        let rg = self.rg(a);
        self.push(t, Op::Gelu(a), rg)
    }

    /// Elementwise `|a|`; the subgradient at zero is zero.
    pub fn abs(&mut self, a: Var) -> Var {
        let t = self.map(a, f64::abs);
        let rg = self.rg(a);
        self.push(t, Op::Abs(a), rg)
    }

    /// Row-wise softmax. With `causal`, entry `(i, j)` for `j > i` is masked out.
    pub fn softmax(&mut self, a: Var, causal: bool) -> Var {
        let mut t = self.value(a).clone();
        let cols = t.cols();
        for (i, row) in t.data_mut().chunks_mut(cols.max(1)).enumerate() {
            if causal {
                let keep = (i + 1).min(cols);
                softmax_in_place(&mut row[..keep]);
                row[keep..].iter_mut().for_each(|v| *v = 0.0);
            } else {
                softmax_in_place(row);
            }
        }
        let rg = self.rg(a);
        self.push(t, Op::Softmax(a), rg)
    }

    /// Normalizes each row to zero mean and unit variance (no affine part).
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let mut t = self.value(a).clone();
        let cols = t.cols();
        let mut inv_std = Vec::with_capacity(t.rows());
        for row in t.data_mut().chunks_mut(cols.max(1)) {
            let mean = row.iter().sum::<f64>() / cols as f64;
            let var = row.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / cols as f64;
            let inv = 1.0 / (var + eps).sqrt();
            row.iter_mut().for_each(|x| *x = (*x - mean) * inv);
            inv_std.push(inv);
        }
        let rg = self.rg(a);
        self.push(t, Op::LayerNorm { a, inv_std }, rg)
    }

    /// Gathers rows of `table` by id.
    pub fn embedding(&mut self, table: Var, ids: &[usize]) -> Var {
        let (rows, cols) = mat_dims(self.value(table));
        let mut data = Vec::with_capacity(ids.len() * cols);
        for &id in ids {
            assert!(id < rows, "embedding id {id} out of range for {rows} rows");
            data.extend_from_slice(self.value(table).row(id));
        }
        let rg = self.rg(table);
        self.push(
            Tensor::new(vec![ids.len(), cols], data),
            Op::Embedding {
                table,
                ids: ids.to_vec(),
            },
            rg,
        )
    }

    /// Inclusive prefix sum over the flattened values.
    pub fn cumsum(&mut self, a: Var) -> Var {
        let mut t = self.value(a).clone();
        let mut acc = 0.0;
        for v in t.data_mut() {
            acc += *v;
            *v = acc;
        }
        let rg = self.rg(a);
        self.push(t, Op::CumSum(a), rg)
    }

    /// `out[u] = Σ_{t ∈ segments[u]} weights[t] · values[t]` over rows of `values`.
    ///
    /// Differentiable in both the values and the weights; the segment ranges
    /// themselves are treated as constants.
    pub fn segment_sum(&mut self, values: Var, weights: Var, segments: &[Range<usize>]) -> Var {
        let (rows, cols) = mat_dims(self.value(values));
        assert_eq!(
            self.value(weights).numel(),
            rows,
            "one weight per row required"
        );
        let mut out = vec![0.0; segments.len() * cols];
        {
            let v = self.value(values);
            let w = self.value(weights).data();
            for (u, seg) in segments.iter().enumerate() {
                assert!(
                    seg.start <= seg.end && seg.end <= rows,
                    "segment {seg:?} out of range"
                );
                let dst = &mut out[u * cols..(u + 1) * cols];
                for t in seg.clone() {
                    dst.iter_mut()
                        .zip(v.row(t))
                        .for_each(|(d, x)| *d += w[t] * x);
                }
            }
        }
        let rg = self.rg(values) || self.rg(weights);
        self.push(
            Tensor::new(vec![segments.len(), cols], out),
            Op::SegmentSum {
                values,
                weights,
                segments: segments.to_vec(),
            },
            rg,
        )
    }

    /// Mean token-level cross-entropy of row-wise logits against target ids.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let (rows, cols) = mat_dims(self.value(logits));
        assert_eq!(rows, targets.len(), "one target per logit row");
        assert!(rows > 0, "cross-entropy over zero rows");
        let mut probs = self.value(logits).data().to_vec();
        let mut loss = 0.0;
        for (row, &t) in probs.chunks_mut(cols).zip(targets) {
            assert!(t < cols, "target id {t} out of range for {cols} classes");
            softmax_in_place(row);
            loss -= row[t].max(f64::MIN_POSITIVE).ln();
        }
        let rg = self.rg(logits);
        self.push(
            Tensor::scalar(loss / rows as f64),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        )
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let (r, c) = mat_dims(self.value(a));
        let src = self.value(a).data();
        let mut data = vec![0.0; r * c];
        for i in 0..r {
            for j in 0..c {
                data[j * r + i] = src[i * c + j];
            }
        }
        let rg = self.rg(a);
        self.push(Tensor::new(vec![c, r], data), Op::Transpose(a), rg)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let t = self.value(a).clone().reshape(shape.to_vec());
        let rg = self.rg(a);
        self.push(t, Op::Reshape(a), rg)
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let (r, c) = mat_dims(self.value(a));
        assert!(
            start <= end && end <= c,
            "column slice {start}..{end} of {c}"
        );
        let src = self.value(a).data();
        let w = end - start;
        let mut data = Vec::with_capacity(r * w);
        for i in 0..r {
            data.extend_from_slice(&src[i * c + start..i * c + end]);
        }
        let rg = self.rg(a);
        self.push(
            Tensor::new(vec![r, w], data),
            Op::SliceCols { a, start, end },
            rg,
        )
    }

    /// Rows `start..end` of a matrix.
    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let t = self.value(a).slice_rows(start, end);
        let rg = self.rg(a);
        self.push(t, Op::SliceRows { a, start }, rg)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let rows = mat_dims(self.value(parts[0])).0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|p| {
                let (r, c) = mat_dims(self.value(*p));
                assert_eq!(r, rows, "concat_cols row mismatch");
                c
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for i in 0..rows {
            for (p, w) in parts.iter().zip(&widths) {
                data.extend_from_slice(&self.value(*p).data()[i * w..(i + 1) * w]);
            }
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        self.push(
            Tensor::new(vec![rows, total], data),
            Op::ConcatCols(parts.to_vec()),
            rg,
        )
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let cols = mat_dims(self.value(parts[0])).1;
        let mut rows = 0;
        let mut data = Vec::new();
        for p in parts {
            let (r, c) = mat_dims(self.value(*p));
            assert_eq!(c, cols, "concat_rows column mismatch");
            rows += r;
            data.extend_from_slice(self.value(*p).data());
        }
        let rg = parts.iter().any(|p| self.rg(*p));
        self.push(
            Tensor::new(vec![rows, cols], data),
            Op::ConcatRows(parts.to_vec()),
            rg,
        )
    }

    /// Causal strided window gather for 1-D convolution.
    ///
    /// Output row `r` concatenates input rows `r·stride − (kernel−1) ..= r·stride`,
    /// zero-filled before the start, so it depends on no frame past `r·stride`.
    /// There are `ceil(rows / stride)` output rows.
    pub fn causal_unfold(&mut self, a: Var, kernel: usize, stride: usize) -> Var {
        assert!(kernel >= 1 && stride >= 1);
        let (rows, cols) = mat_dims(self.value(a));
        let out_rows = rows.div_ceil(stride);
        let src = self.value(a).data();
        let mut data = vec![0.0; out_rows * kernel * cols];
        for r in 0..out_rows {
            for j in 0..kernel {
                let t = (r * stride + j) as isize - (kernel as isize - 1);
                if t >= 0 {
                    let t = t as usize;
                    let dst = (r * kernel + j) * cols;
                    data[dst..dst + cols].copy_from_slice(&src[t * cols..(t + 1) * cols]);
                }
            }
        }
        let rg = self.rg(a);
        self.push(
            Tensor::new(vec![out_rows, kernel * cols], data),
            Op::Unfold { a, kernel, stride },
            rg,
        )
    }

    /// Reverse-mode sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        let lv = self.value(loss);
        if !lv.is_scalar() {
            return Err(NumericsError::NonScalarLoss {
                shape: lv.shape().to_vec(),
            });
        }
        let n = loss.0 + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if self.nodes[loss.0].requires_grad {
            grads[loss.0] = Some(vec![1.0]);
        }
        for i in (0..n).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        let shapes = self
            .nodes
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients { grads, shapes })
    }

    fn backprop_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        // Lazily allocates the input's gradient buffer when it participates in backprop.
        let mut with = |v: Var, f: &mut dyn FnMut(&mut [f64])| {
            if !self.nodes[v.0].requires_grad {
                return;
            }
            let buf = grads[v.0].get_or_insert_with(|| vec![0.0; self.nodes[v.0].value.numel()]);
            f(buf);
        };
        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, trans_b } => {
                let (m, k) = mat_dims(self.value(*a));
                let n = out.cols();
                let av = self.value(*a).data();
                let bv = self.value(*b).data();
                with(*a, &mut |ga| {
                    // dA = dC · op(B)ᵀ
                    gemm(m, n, k, g, false, bv, !*trans_b, ga, true);
                });
                with(*b, &mut |gb| {
                    if *trans_b {
                        // B is n×k: dB = dCᵀ · A
                        gemm(n, m, k, g, true, av, false, gb, true);
                    } else {
                        // B is k×n: dB = Aᵀ · dC
                        gemm(k, m, n, av, true, g, false, gb, true);
                    }
                });
            }
            Op::Add(a, b) => {
                with(*a, &mut |ga| {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y)
                });
                with(*b, &mut |gb| {
                    gb.iter_mut().zip(g).for_each(|(x, y)| *x += y)
                });
            }
            Op::Sub(a, b) => {
                with(*a, &mut |ga| {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y)
                });
                with(*b, &mut |gb| {
                    gb.iter_mut().zip(g).for_each(|(x, y)| *x -= y)
                });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                with(*a, &mut |ga| {
                    for ((x, gi), bi) in ga.iter_mut().zip(g).zip(bv) {
                        *x += gi * bi;
                    }
                });
                with(*b, &mut |gb| {
                    for ((x, gi), ai) in gb.iter_mut().zip(g).zip(av) {
                        *x += gi * ai;
                    }
                });
            }
            Op::AddRow { a, row } => {
                let cols = out.cols().max(1);
                with(*a, &mut |ga| {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y)
                });
                with(*row, &mut |gr| {
                    for chunk in g.chunks(cols) {
                        gr.iter_mut().zip(chunk).for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::MulRow { a, row } => {
                let cols = out.cols().max(1);
                let av = self.value(*a).data();
                let rv = self.value(*row).data();
                with(*a, &mut |ga| {
                    for (gc, xc) in g.chunks(cols).zip(ga.chunks_mut(cols)) {
                        for ((x, gi), ri) in xc.iter_mut().zip(gc).zip(rv) {
                            *x += gi * ri;
                        }
                    }
                });
                with(*row, &mut |gr| {
                    for (gc, ac) in g.chunks(cols).zip(av.chunks(cols)) {
                        for ((x, gi), ai) in gr.iter_mut().zip(gc).zip(ac) {
                            *x += gi * ai;
                        }
                    }
                });
            }
            Op::Scale { a, factor } => {
                with(*a, &mut |ga| {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y * factor)
                });
            }
            Op::ScaleBy { a, s } => {
                let f = self.value(*s).item();
                let av = self.value(*a).data();
                with(*a, &mut |ga| {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y * f)
                });
                with(*s, &mut |gs| {
                    gs[0] += g.iter().zip(av).map(|(y, x)| y * x).sum::<f64>()
                });
            }
            Op::Reciprocal(a) => {
                let ov = out.data();
                with(*a, &mut |ga| {
                    for ((x, gi), y) in ga.iter_mut().zip(g).zip(ov) {
                        *x -= gi * y * y;
                    }
                });
            }
            Op::Sigmoid(a) => {
                let ov = out.data();
                with(*a, &mut |ga| {
                    for ((x, gi), y) in ga.iter_mut().zip(g).zip(ov) {
                        *x += gi * y * (1.0 - y);
                    }
                });
            }
            Op::Relu(a) => {
                let av = self.value(*a).data();
                with(*a, &mut |ga| {
                    for ((x, gi), ai) in ga.iter_mut().zip(g).zip(av) {
                        if *ai > 0.0 {
                            *x += gi;
                        }
                    }
                });
            }
            Op::Gelu(a) => {
                let av = self.value(*a).data();
                with(*a, &mut |ga| {
                    for ((x, gi), ai) in ga.iter_mut().zip(g).zip(av) {
                        *x += gi * gelu_grad(*ai);
                    }
                });
            }
            Op::Abs(a) => {
                let av = self.value(*a).data();
                with(*a, &mut |ga| {
                    for ((x, gi), ai) in ga.iter_mut().zip(g).zip(av) {
                        let sign = if *ai > 0.0 {
                            1.0
                        } else if *ai < 0.0 {
                            -1.0
                        } else {
                            0.0
                        };
                        *x += gi * sign;
                    }
                });
            }
            Op::Softmax(a) => {
                let cols = out.cols().max(1);
                let ov = out.data();
                with(*a, &mut |ga| {
                    for ((gc, yc), xc) in
                        g.chunks(cols).zip(ov.chunks(cols)).zip(ga.chunks_mut(cols))
                    {
                        let dot: f64 = gc.iter().zip(yc).map(|(a, b)| a * b).sum();
                        for ((x, gi), yi) in xc.iter_mut().zip(gc).zip(yc) {
                            *x += yi * (gi - dot);
                        }
                    }
                });
            }
            Op::LayerNorm { a, inv_std } => {
                let cols = out.cols().max(1);
                let ov = out.data();
                let nf = cols as f64;
                with(*a, &mut |ga| {
                    for (r, ((gc, yc), xc)) in g
                        .chunks(cols)
                        .zip(ov.chunks(cols))
                        .zip(ga.chunks_mut(cols))
                        .enumerate()
                    {
                        let mean_g = gc.iter().sum::<f64>() / nf;
                        let mean_gy = gc.iter().zip(yc).map(|(a, b)| a * b).sum::<f64>() / nf;
                        for ((x, gi), yi) in xc.iter_mut().zip(gc).zip(yc) {
                            *x += inv_std[r] * (gi - mean_g - yi * mean_gy);
                        }
                    }
                });
            }
            Op::Embedding { table, ids } => {
                let cols = out.cols();
                with(*table, &mut |gt| {
                    for (r, &id) in ids.iter().enumerate() {
                        let src = &g[r * cols..(r + 1) * cols];
                        gt[id * cols..(id + 1) * cols]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::CumSum(a) => {
                with(*a, &mut |ga| {
                    let mut acc = 0.0;
                    for (x, gi) in ga.iter_mut().zip(g).rev() {
                        acc += gi;
                        *x += acc;
                    }
                });
            }
            Op::SegmentSum {
                values,
                weights,
                segments,
            } => {
                let cols = out.cols();
                let vv = self.value(*values);
                let wv = self.value(*weights).data();
                with(*values, &mut |gv| {
                    for (u, seg) in segments.iter().enumerate() {
                        let gu = &g[u * cols..(u + 1) * cols];
                        for t in seg.clone() {
                            gv[t * cols..(t + 1) * cols]
                                .iter_mut()
                                .zip(gu)
                                .for_each(|(x, y)| *x += wv[t] * y);
                        }
                    }
                });
                with(*weights, &mut |gw| {
                    for (u, seg) in segments.iter().enumerate() {
                        let gu = &g[u * cols..(u + 1) * cols];
                        for t in seg.clone() {
                            gw[t] += gu.iter().zip(vv.row(t)).map(|(a, b)| a * b).sum::<f64>();
                        }
                    }
                });
            }
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            } => {
                let cols = self.value(*logits).cols();
                let scale = g[0] / targets.len() as f64;
                with(*logits, &mut |gl| {
                    for (r, &t) in targets.iter().enumerate() {
                        let row = &mut gl[r * cols..(r + 1) * cols];
                        for (x, p) in row.iter_mut().zip(&probs[r * cols..(r + 1) * cols]) {
                            *x += scale * p;
                        }
                        row[t] -= scale;
                    }
                });
            }
            Op::Sum(a) => {
                with(*a, &mut |ga| ga.iter_mut().for_each(|x| *x += g[0]));
            }
            Op::Transpose(a) => {
                let (r, c) = mat_dims(self.value(*a));
                with(*a, &mut |ga| {
                    for i in 0..r {
                        for j in 0..c {
                            ga[i * c + j] += g[j * r + i];
                        }
                    }
                });
            }
            Op::Reshape(a) => {
                with(*a, &mut |ga| {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += y)
                });
            }
            Op::SliceCols { a, start, end } => {
                let c = self.value(*a).cols();
                let w = end - start;
                with(*a, &mut |ga| {
                    for (i, gc) in g.chunks(w.max(1)).enumerate().take(out.rows()) {
                        ga[i * c + start..i * c + end]
                            .iter_mut()
                            .zip(gc)
                            .for_each(|(x, y)| *x += y);
                    }
                });
            }
            Op::SliceRows { a, start } => {
                let c = self.value(*a).cols();
                with(*a, &mut |ga| {
                    ga[start * c..start * c + g.len()]
                        .iter_mut()
                        .zip(g)
                        .for_each(|(x, y)| *x += y);
                });
            }
            Op::ConcatCols(parts) => {
                let total = out.cols();
                let rows = out.rows();
                let mut offset = 0;
                for p in parts {
                    let w = self.value(*p).cols();
                    with(*p, &mut |gp| {
                        for i in 0..rows {
                            gp[i * w..(i + 1) * w]
                                .iter_mut()
                                .zip(&g[i * total + offset..i * total + offset + w])
                                .for_each(|(x, y)| *x += y);
                        }
                    });
                    offset += w;
                }
            }
            Op::ConcatRows(parts) => {
                let mut offset = 0;
                for p in parts {
                    let len = self.value(*p).numel();
                    with(*p, &mut |gp| {
                        gp.iter_mut()
                            .zip(&g[offset..offset + len])
                            .for_each(|(x, y)| *x += y);
                    });
                    offset += len;
                }
            }
            Op::Unfold { a, kernel, stride } => {
                let cols = self.value(*a).cols();
                let out_rows = out.rows();
                with(*a, &mut |ga| {
                    for r in 0..out_rows {
                        for j in 0..*kernel {
                            let t = (r * stride + j) as isize - (*kernel as isize - 1);
                            if t >= 0 {
                                let t = t as usize;
                                let src = (r * kernel + j) * cols;
                                ga[t * cols..(t + 1) * cols]
                                    .iter_mut()
                                    .zip(&g[src..src + cols])
                                    .for_each(|(x, y)| *x += y);
                            }
                        }
                    }
                });
            }
        }
    }
}
