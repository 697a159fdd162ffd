//! Dense f32 tensors and a tape for reverse-mode automatic differentiation.
//!
//! Shapes are 1-D to 3-D, data row-major, values immutable once recorded.
//! A `Tape` owns every tensor produced during one forward pass; each op
//! appends a node holding the result plus the input ids its backward rule
//! needs. `backward` replays the nodes in reverse order and accumulates a
//! gradient for every `requires_grad` tensor reachable from the loss.
//!
//! A tape is confined to one logical training step. Tensors are plain data,
//! so independent tapes can run on separate threads.

const GELU_SCALE: f32 = 0.797_884_6; // sqrt(2/pi)
const GELU_CUBIC: f32 = 0.044_715;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
    pub requires_grad: bool,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Self {
        assert!(
            (1..=3).contains(&shape.len()),
            "tensor rank must be 1 to 3, got shape {shape:?}"
        );
        assert!(
            shape.iter().all(|&d| d > 0),
            "zero dimension in shape {shape:?}"
        );
        let want: usize = shape.iter().product();
        assert_eq!(
            want,
            data.len(),
            "shape {shape:?} wants {want} elements, data has {}",
            data.len()
        );
        Tensor {
            shape,
            data,
            requires_grad: false,
        }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor::new(shape, vec![0.0; n])
    }

    pub fn scalar(value: f32) -> Self {
        Tensor::new(vec![1], vec![value])
    }

    pub fn with_grad(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    fn dims2(&self) -> (usize, usize) {
        assert_eq!(self.shape.len(), 2, "expected 2-D tensor, got {:?}", self.shape);
        (self.shape[0], self.shape[1])
    }
}

pub type TensorId = usize;

enum Op {
    Leaf,
    MatMul { a: TensorId, b: TensorId },
    Transpose { x: TensorId },
    Add { a: TensorId, b: TensorId },
    AddRow { x: TensorId, row: TensorId },
    Mul { a: TensorId, b: TensorId },
    Scale { x: TensorId, factor: f32 },
    Softmax { x: TensorId, axis: usize },
    LayerNorm { x: TensorId, gain: TensorId, bias: TensorId, eps: f32 },
    Gelu { x: TensorId },
    Sum { x: TensorId },
    CrossEntropy { logits: TensorId, labels: Vec<usize> },
    GatherRows { x: TensorId, rows: Vec<usize> },
    SliceCols { x: TensorId, start: usize, end: usize },
    ConcatCols { parts: Vec<TensorId> },
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Every requires_grad leaf gets a gradient after `Tape::backward`; leaves
/// off the loss path get zeros. Intermediate results keep theirs too.
pub struct Gradients {
    grads: Vec<Option<Vec<f32>>>,
}

impl Gradients {
    pub fn get(&self, id: TensorId) -> Option<&[f32]> {
        self.grads.get(id).and_then(|g| g.as_deref())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: TensorId) -> &Tensor {
        &self.nodes[id].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> TensorId {
        self.nodes.push(Node { value, op });
        self.nodes.len() - 1
    }

    /// Records an externally produced tensor (parameter or input).
    pub fn input(&mut self, t: Tensor) -> TensorId {
        self.push(t, Op::Leaf)
    }

    /// Standard 2-D matrix product.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        let (m, k) = self.value(a).dims2();
        let (k2, n) = self.value(b).dims2();
        assert_eq!(
            k, k2,
            "matmul: incompatible shapes {:?} x {:?}",
            self.value(a).shape,
            self.value(b).shape
        );
        let out = mm(&self.value(a).data, m, k, &self.value(b).data, n);
        self.push(Tensor::new(vec![m, n], out), Op::MatMul { a, b })
    }

    pub fn transpose(&mut self, x: TensorId) -> TensorId {
        let (m, n) = self.value(x).dims2();
        let src = &self.value(x).data;
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = src[i * n + j];
            }
        }
        self.push(Tensor::new(vec![n, m], out), Op::Transpose { x })
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: TensorId, b: TensorId) -> TensorId {
        assert_eq!(
            self.value(a).shape,
            self.value(b).shape,
            "add: shape mismatch"
        );
        let out: Vec<f32> = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| x + y)
            .collect();
        let shape = self.value(a).shape.clone();
        self.push(Tensor::new(shape, out), Op::Add { a, b })
    }

    /// Adds a 1-D row vector to every row of a 2-D tensor.
    pub fn add_row(&mut self, x: TensorId, row: TensorId) -> TensorId {
        let (m, n) = self.value(x).dims2();
        assert_eq!(
            self.value(row).shape,
            vec![n],
            "add_row: row shape {:?} does not match {n} columns",
            self.value(row).shape
        );
        let mut out = self.value(x).data.clone();
        let r = &self.value(row).data;
        for i in 0..m {
            for j in 0..n {
                out[i * n + j] += r[j];
            }
        }
        self.push(Tensor::new(vec![m, n], out), Op::AddRow { x, row })
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> TensorId {
        assert_eq!(
            self.value(a).shape,
            self.value(b).shape,
            "mul: shape mismatch"
        );
        let out: Vec<f32> = self
            .value(a)
            .data
            .iter()
            .zip(&self.value(b).data)
            .map(|(x, y)| x * y)
            .collect();
        let shape = self.value(a).shape.clone();
        self.push(Tensor::new(shape, out), Op::Mul { a, b })
    }

    pub fn scale(&mut self, x: TensorId, factor: f32) -> TensorId {
        let out: Vec<f32> = self.value(x).data.iter().map(|v| v * factor).collect();
        let shape = self.value(x).shape.clone();
        self.push(Tensor::new(shape, out), Op::Scale { x, factor })
    }

    /// Max-subtracted softmax along `axis`; slices sum to 1.
    pub fn softmax(&mut self, x: TensorId, axis: usize) -> TensorId {
        let shape = self.value(x).shape.clone();
        assert!(axis < shape.len(), "softmax: axis {axis} out of range for {shape:?}");
        let out = softmax_values(&self.value(x).data, &shape, axis);
        self.push(Tensor::new(shape, out), Op::Softmax { x, axis })
    }

    /// Per-row normalization over the last dimension, then gain and bias.
    pub fn layer_norm(&mut self, x: TensorId, gain: TensorId, bias: TensorId, eps: f32) -> TensorId {
        let (rows, n) = row_view(&self.value(x).shape);
        assert_eq!(self.value(gain).shape, vec![n], "layer_norm: gain length");
        assert_eq!(self.value(bias).shape, vec![n], "layer_norm: bias length");
        let src = &self.value(x).data;
        let g = &self.value(gain).data;
        let b = &self.value(bias).data;
        let mut out = vec![0.0; rows * n];
        for r in 0..rows {
            let row = &src[r * n..(r + 1) * n];
            let (mean, inv_std) = row_stats(row, eps);
            for j in 0..n {
                out[r * n + j] = (row[j] - mean) * inv_std * g[j] + b[j];
            }
        }
        let shape = self.value(x).shape.clone();
        self.push(Tensor::new(shape, out), Op::LayerNorm { x, gain, bias, eps })
    }

    /// Elementwise GELU, tanh approximation.
    pub fn gelu(&mut self, x: TensorId) -> TensorId {
        let out: Vec<f32> = self.value(x).data.iter().map(|&v| gelu_value(v)).collect();
        let shape = self.value(x).shape.clone();
        self.push(Tensor::new(shape, out), Op::Gelu { x })
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&mut self, x: TensorId) -> TensorId {
        let total: f32 = self.value(x).data.iter().sum();
        self.push(Tensor::scalar(total), Op::Sum { x })
    }

    /// Mean over the batch of `-log softmax(logits)[label]`. Logits are
    /// `[batch x classes]`; each label must index a valid class.
    pub fn cross_entropy(&mut self, logits: TensorId, labels: &[usize]) -> TensorId {
        let (batch, classes) = self.value(logits).dims2();
        assert_eq!(labels.len(), batch, "cross_entropy: {batch} rows, {} labels", labels.len());
        for (i, &l) in labels.iter().enumerate() {
            assert!(
                l < classes,
                "cross_entropy: label {l} at row {i} out of range for {classes} classes"
            );
        }
        let data = &self.value(logits).data;
        let mut total = 0.0f32;
        for (i, &label) in labels.iter().enumerate() {
            let row = &data[i * classes..(i + 1) * classes];
            let max = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
            let lse: f32 = max + row.iter().map(|&v| (v - max).exp()).sum::<f32>().ln();
            total += lse - row[label];
        }
        let loss = total / batch as f32;
        self.push(
            Tensor::scalar(loss),
            Op::CrossEntropy {
                logits,
                labels: labels.to_vec(),
            },
        )
    }

    /// Selects rows of a 2-D tensor by index; indices may repeat.
    pub fn gather_rows(&mut self, x: TensorId, rows: &[usize]) -> TensorId {
        let (r, c) = self.value(x).dims2();
        assert!(!rows.is_empty(), "gather_rows: empty index list");
        for &i in rows {
            assert!(i < r, "gather_rows: row {i} out of range for {r} rows");
        }
        let src = &self.value(x).data;
        let mut out = Vec::with_capacity(rows.len() * c);
        for &i in rows {
            out.extend_from_slice(&src[i * c..(i + 1) * c]);
        }
        self.push(
            Tensor::new(vec![rows.len(), c], out),
            Op::GatherRows {
                x,
                rows: rows.to_vec(),
            },
        )
    }

    /// Keeps columns start..end of a 2-D tensor.
    pub fn slice_cols(&mut self, x: TensorId, start: usize, end: usize) -> TensorId {
        let (m, n) = self.value(x).dims2();
        assert!(start < end && end <= n, "slice_cols: invalid range {start}..{end} for {n} columns");
        let src = &self.value(x).data;
        let w = end - start;
        let mut out = Vec::with_capacity(m * w);
        for i in 0..m {
            out.extend_from_slice(&src[i * n + start..i * n + end]);
        }
        self.push(Tensor::new(vec![m, w], out), Op::SliceCols { x, start, end })
    }

    /// Concatenates 2-D tensors with equal row counts along columns.
    pub fn concat_cols(&mut self, parts: &[TensorId]) -> TensorId {
        assert!(!parts.is_empty(), "concat_cols: no parts");
        let m = self.value(parts[0]).dims2().0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                let (rows, cols) = self.value(p).dims2();
                assert_eq!(rows, m, "concat_cols: row count mismatch");
                cols
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(m * total);
        for i in 0..m {
            for (&p, &w) in parts.iter().zip(&widths) {
                let src = &self.value(p).data;
                out.extend_from_slice(&src[i * w..(i + 1) * w]);
            }
        }
        self.push(
            Tensor::new(vec![m, total], out),
            Op::ConcatCols {
                parts: parts.to_vec(),
            },
        )
    }

    /// Accumulates gradients for everything reachable from `loss`, which must
    /// be a scalar. Off-path requires_grad leaves get zero gradients.
    pub fn backward(&self, loss: TensorId) -> Gradients {
        assert_eq!(
            self.value(loss).numel(),
            1,
            "backward requires a scalar loss, got shape {:?}",
            self.value(loss).shape
        );
        let mut grads: Vec<Option<Vec<f32>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss] = Some(vec![1.0]);

        for id in (0..=loss).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul { a, b } => {
                    let (m, k) = self.value(*a).dims2();
                    let n = self.value(*b).dims2().1;
                    let da = mm_nt(&g, m, n, &self.value(*b).data, k);
                    let db = mm_tn(&self.value(*a).data, m, k, &g, n);
                    acc(&mut grads[*a], &da);
                    acc(&mut grads[*b], &db);
                }
                Op::Transpose { x } => {
                    let (m, n) = self.value(*x).dims2();
                    let mut dx = vec![0.0; m * n];
                    for i in 0..m {
                        for j in 0..n {
                            dx[i * n + j] = g[j * m + i];
                        }
                    }
                    acc(&mut grads[*x], &dx);
                }
                Op::Add { a, b } => {
                    acc(&mut grads[*a], &g);
                    acc(&mut grads[*b], &g);
                }
                Op::AddRow { x, row } => {
                    let (m, n) = self.value(*x).dims2();
                    acc(&mut grads[*x], &g);
                    let mut dr = vec![0.0; n];
                    for i in 0..m {
                        for j in 0..n {
                            dr[j] += g[i * n + j];
                        }
                    }
                    acc(&mut grads[*row], &dr);
                }
                Op::Mul { a, b } => {
                    let da: Vec<f32> = g.iter().zip(&self.value(*b).data).map(|(gv, bv)| gv * bv).collect();
                    let db: Vec<f32> = g.iter().zip(&self.value(*a).data).map(|(gv, av)| gv * av).collect();
                    acc(&mut grads[*a], &da);
                    acc(&mut grads[*b], &db);
                }
                Op::Scale { x, factor } => {
                    let dx: Vec<f32> = g.iter().map(|gv| gv * factor).collect();
                    acc(&mut grads[*x], &dx);
                }
                Op::Softmax { x, axis } => {
                    // dx = y * (g - sum(g * y)) per slice.
                    let y = &node.value;
                    let shape = &y.shape;
                    let len = shape[*axis];
                    let inner: usize = shape[*axis + 1..].iter().product();
                    let outer: usize = shape[..*axis].iter().product();
                    let mut dx = vec![0.0; y.numel()];
                    for o in 0..outer {
                        for i in 0..inner {
                            let at = |t: usize| (o * len + t) * inner + i;
                            let dot: f32 = (0..len).map(|t| g[at(t)] * y.data[at(t)]).sum();
                            for t in 0..len {
                                let idx = at(t);
                                dx[idx] = y.data[idx] * (g[idx] - dot);
                            }
                        }
                    }
                    acc(&mut grads[*x], &dx);
                }
                Op::LayerNorm { x, gain, bias, eps } => {
                    let (rows, n) = row_view(&self.value(*x).shape);
                    let src = &self.value(*x).data;
                    let gn = &self.value(*gain).data;
                    let mut dx = vec![0.0; rows * n];
                    let mut dgain = vec![0.0; n];
                    let mut dbias = vec![0.0; n];
                    for r in 0..rows {
                        let row = &src[r * n..(r + 1) * n];
                        let (mean, inv_std) = row_stats(row, *eps);
                        let mut sum_dxhat = 0.0f32;
                        let mut sum_dxhat_xhat = 0.0f32;
                        let mut xhat = vec![0.0f32; n];
                        let mut dxhat = vec![0.0f32; n];
                        for j in 0..n {
                            xhat[j] = (row[j] - mean) * inv_std;
                            let gv = g[r * n + j];
                            dxhat[j] = gv * gn[j];
                            sum_dxhat += dxhat[j];
                            sum_dxhat_xhat += dxhat[j] * xhat[j];
                            dgain[j] += gv * xhat[j];
                            dbias[j] += gv;
                        }
                        let nf = n as f32;
                        for j in 0..n {
                            dx[r * n + j] =
                                inv_std * (dxhat[j] - sum_dxhat / nf - xhat[j] * sum_dxhat_xhat / nf);
                        }
                    }
                    acc(&mut grads[*x], &dx);
                    acc(&mut grads[*gain], &dgain);
                    acc(&mut grads[*bias], &dbias);
                }
                Op::Gelu { x } => {
                    let dx: Vec<f32> = g
                        .iter()
                        .zip(&self.value(*x).data)
                        .map(|(gv, &xv)| gv * gelu_grad(xv))
                        .collect();
                    acc(&mut grads[*x], &dx);
                }
                Op::Sum { x } => {
                    let dx = vec![g[0]; self.value(*x).numel()];
                    acc(&mut grads[*x], &dx);
                }
                Op::CrossEntropy { logits, labels } => {
                    // dlogits = (softmax(row) - one_hot(label)) * g / batch.
                    let (batch, classes) = self.value(*logits).dims2();
                    let data = &self.value(*logits).data;
                    let scale = g[0] / batch as f32;
                    let mut dl = vec![0.0; batch * classes];
                    for (i, &label) in labels.iter().enumerate() {
                        let row = &data[i * classes..(i + 1) * classes];
                        let max = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
                        let exps: Vec<f32> = row.iter().map(|&v| (v - max).exp()).collect();
                        let z: f32 = exps.iter().sum();
                        for j in 0..classes {
                            let p = exps[j] / z;
                            let onehot = if j == label { 1.0 } else { 0.0 };
                            dl[i * classes + j] = scale * (p - onehot);
                        }
                    }
                    acc(&mut grads[*logits], &dl);
                }
                Op::GatherRows { x, rows } => {
                    let (r, c) = self.value(*x).dims2();
                    let dx = grads[*x].get_or_insert_with(|| vec![0.0; r * c]);
                    for (out_row, &src_row) in rows.iter().enumerate() {
                        for j in 0..c {
                            dx[src_row * c + j] += g[out_row * c + j];
                        }
                    }
                }
                Op::SliceCols { x, start, end } => {
                    let (m, n) = self.value(*x).dims2();
                    let w = end - start;
                    let dx = grads[*x].get_or_insert_with(|| vec![0.0; m * n]);
                    for i in 0..m {
                        for j in 0..w {
                            dx[i * n + start + j] += g[i * w + j];
                        }
                    }
                }
                Op::ConcatCols { parts } => {
                    let m = self.value(parts[0]).dims2().0;
                    let total: usize = parts.iter().map(|&p| self.value(p).dims2().1).sum();
                    let mut offset = 0;
                    for &p in parts {
                        let w = self.value(p).dims2().1;
                        let dp = grads[p].get_or_insert_with(|| vec![0.0; m * w]);
                        for i in 0..m {
                            for j in 0..w {
                                dp[i * w + j] += g[i * total + offset + j];
                            }
                        }
                        offset += w;
                    }
                }
            }
            grads[id] = Some(g);
        }

        // Leaves the loss never touched still owe a (zero) gradient.
        for (i, node) in self.nodes.iter().enumerate() {
            if node.value.requires_grad && grads[i].is_none() {
                grads[i] = Some(vec![0.0; node.value.numel()]);
            }
        }
        Gradients { grads }
    }
}

/// Adds `delta` into the slot, allocating zeros on first touch.
fn acc(slot: &mut Option<Vec<f32>>, delta: &[f32]) {
    match slot {
        Some(g) => {
            for (gv, dv) in g.iter_mut().zip(delta) {
                *gv += dv;
            }
        }
        None => *slot = Some(delta.to_vec()),
    }
}

/// a[m x k] * b[k x n], row-major.
fn mm(a: &[f32], m: usize, k: usize, b: &[f32], n: usize) -> Vec<f32> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for j in 0..n {
                orow[j] += av * brow[j];
            }
        }
    }
    out
}

/// x[m x inner] * y[yrows x inner]^T -> [m x yrows].
fn mm_nt(x: &[f32], m: usize, inner: usize, y: &[f32], yrows: usize) -> Vec<f32> {
    let mut out = vec![0.0; m * yrows];
    for i in 0..m {
        let xrow = &x[i * inner..(i + 1) * inner];
        for p in 0..yrows {
            let yrow = &y[p * inner..(p + 1) * inner];
            out[i * yrows + p] = xrow.iter().zip(yrow).map(|(a, b)| a * b).sum();
        }
    }
    out
}

/// x[rows x cols]^T * y[rows x ycols] -> [cols x ycols].
fn mm_tn(x: &[f32], rows: usize, cols: usize, y: &[f32], ycols: usize) -> Vec<f32> {
    let mut out = vec![0.0; cols * ycols];
    for i in 0..rows {
        for p in 0..cols {
            let xv = x[i * cols + p];
            let yrow = &y[i * ycols..(i + 1) * ycols];
            let orow = &mut out[p * ycols..(p + 1) * ycols];
            for j in 0..ycols {
                orow[j] += xv * yrow[j];
            }
        }
    }
    out
}

fn softmax_values(data: &[f32], shape: &[usize], axis: usize) -> Vec<f32> {
    let len = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    let outer: usize = shape[..axis].iter().product();
    let mut out = vec![0.0; data.len()];
    for o in 0..outer {
        for i in 0..inner {
            let at = |t: usize| (o * len + t) * inner + i;
            let max = (0..len).map(|t| data[at(t)]).fold(f32::NEG_INFINITY, f32::max);
            let mut z = 0.0f32;
            for t in 0..len {
                let e = (data[at(t)] - max).exp();
                out[at(t)] = e;
                z += e;
            }
            for t in 0..len {
                out[at(t)] /= z;
            }
        }
    }
    out
}

/// A 1-D tensor is one row; a 2-D tensor is a stack of rows.
fn row_view(shape: &[usize]) -> (usize, usize) {
    match shape {
        [n] => (1, *n),
        [m, n] => (*m, *n),
        other => panic!("layer_norm expects 1-D or 2-D input, got {other:?}"),
    }
}

fn row_stats(row: &[f32], eps: f32) -> (f32, f32) {
    let n = row.len() as f32;
    let mean = row.iter().sum::<f32>() / n;
    let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f32>() / n;
    (mean, 1.0 / (var + eps).sqrt())
}

fn gelu_value(x: f32) -> f32 {
    let u = GELU_SCALE * (x + GELU_CUBIC * x * x * x);
    0.5 * x * (1.0 + u.tanh())
}

fn gelu_grad(x: f32) -> f32 {
    let u = GELU_SCALE * (x + GELU_CUBIC * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_SCALE * (1.0 + 3.0 * GELU_CUBIC * x * x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn assert_close(a: f32, b: f32, tol: f32) {
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }

    /// Central differences over a flat input vector.
    fn numerical_grad(mut f: impl FnMut(&[f32]) -> f32, x: &[f32], h: f32) -> Vec<f32> {
        let mut probe = x.to_vec();
        let mut out = vec![0.0; x.len()];
        for i in 0..x.len() {
            let orig = probe[i];
            probe[i] = orig + h;
            let fp = f(&probe);
            probe[i] = orig - h;
            let fm = f(&probe);
            probe[i] = orig;
            out[i] = (fp - fm) / (2.0 * h);
        }
        out
    }

    fn assert_grads_match(analytic: &[f32], numeric: &[f32], rel: f32, abs: f32) {
        assert_eq!(analytic.len(), numeric.len());
        for (i, (&a, &n)) in analytic.iter().zip(numeric).enumerate() {
            let tol = (rel * a.abs().max(n.abs())).max(abs);
            assert!(
                (a - n).abs() <= tol,
                "gradient mismatch at {i}: analytic {a} vs numeric {n}"
            );
        }
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let a = tape.input(Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]));
        let eye = tape.input(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]));
        let out = tape.matmul(a, eye);
        assert_eq!(tape.value(out).data, vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn matmul_permutation() {
        let mut tape = Tape::new();
        let a = tape.input(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 0.0]));
        let p = tape.input(Tensor::new(vec![2, 2], vec![0.0, 1.0, 1.0, 0.0]));
        let out = tape.matmul(a, p);
        assert_eq!(tape.value(out).data, vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    #[should_panic(expected = "matmul: incompatible shapes")]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut tape = Tape::new();
        let a = tape.input(Tensor::zeros(vec![2, 3]));
        let b = tape.input(Tensor::zeros(vec![2, 3]));
        tape.matmul(a, b);
    }

    #[test]
    fn matmul_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let a0 = random_vec(&mut rng, 9);
        let b0 = random_vec(&mut rng, 9);

        let mut tape = Tape::new();
        let a = tape.input(Tensor::new(vec![3, 3], a0.clone()).with_grad());
        let b = tape.input(Tensor::new(vec![3, 3], b0.clone()).with_grad());
        let prod = tape.matmul(a, b);
        let loss = tape.sum(prod);
        let grads = tape.backward(loss);

        let f_a = |probe: &[f32]| {
            let mut t = Tape::new();
            let a = t.input(Tensor::new(vec![3, 3], probe.to_vec()));
            let b = t.input(Tensor::new(vec![3, 3], b0.clone()));
            let p = t.matmul(a, b);
            let s = t.sum(p);
            t.value(s).data[0]
        };
        let f_b = |probe: &[f32]| {
            let mut t = Tape::new();
            let a = t.input(Tensor::new(vec![3, 3], a0.clone()));
            let b = t.input(Tensor::new(vec![3, 3], probe.to_vec()));
            let p = t.matmul(a, b);
            let s = t.sum(p);
            t.value(s).data[0]
        };
        assert_grads_match(grads.get(a).unwrap(), &numerical_grad(f_a, &a0, 1e-3), 1e-3, 1e-3);
        assert_grads_match(grads.get(b).unwrap(), &numerical_grad(f_b, &b0, 1e-3), 1e-3, 1e-3);
    }

    #[test]
    fn softmax_symmetry_and_known_values() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::new(vec![2], vec![0.0, 0.0]));
        let y = tape.softmax(x, 0);
        assert_eq!(tape.value(y).data, vec![0.5, 0.5]);

        let x = tape.input(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]));
        let y = tape.softmax(x, 0);
        let want = [0.090_030_57, 0.244_728_48, 0.665_240_94];
        for (got, want) in tape.value(y).data.iter().zip(want) {
            assert_close(*got, want, 1e-6);
        }
    }

    #[test]
    fn softmax_is_stable_for_large_inputs() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::new(vec![2], vec![1000.0, 0.0]));
        let y = tape.softmax(x, 0);
        let out = &tape.value(y).data;
        assert!(out.iter().all(|v| v.is_finite()));
        assert_close(out[0], 1.0, 1e-6);
        assert!(out[1] < 1e-6);
    }

    #[test]
    fn softmax_rows_sum_to_one_on_both_axes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let data = random_vec(&mut rng, 12);
        let mut tape = Tape::new();
        let x = tape.input(Tensor::new(vec![3, 4], data));

        let rows = tape.softmax(x, 1);
        for i in 0..3 {
            let s: f32 = tape.value(rows).data[i * 4..(i + 1) * 4].iter().sum();
            assert_close(s, 1.0, 1e-6);
        }
        let cols = tape.softmax(x, 0);
        for j in 0..4 {
            let s: f32 = (0..3).map(|i| tape.value(cols).data[i * 4 + j]).sum();
            assert_close(s, 1.0, 1e-6);
        }
        assert!(tape.value(rows).data.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn softmax_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let x0 = random_vec(&mut rng, 8);
        // Weighted sum keeps the loss sensitive to every output.
        let w = random_vec(&mut rng, 8);

        let run = |probe: &[f32], tape_out: &mut Option<(Tape, TensorId, TensorId)>| {
            let mut t = Tape::new();
            let x = t.input(Tensor::new(vec![2, 4], probe.to_vec()).with_grad());
            let wt = t.input(Tensor::new(vec![2, 4], w.clone()));
            let y = t.softmax(x, 1);
            let prod = t.mul(y, wt);
            let loss = t.sum(prod);
            let v = t.value(loss).data[0];
            *tape_out = Some((t, x, loss));
            v
        };
        let mut ctx = None;
        run(&x0, &mut ctx);
        let (tape, x, loss) = ctx.unwrap();
        let grads = tape.backward(loss);
        let numeric = numerical_grad(|p| { let mut sink = None; run(p, &mut sink) }, &x0, 1e-3);
        assert_grads_match(grads.get(x).unwrap(), &numeric, 1e-2, 1e-3);
    }

    #[test]
    fn layer_norm_constant_row_is_zeroed() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::new(vec![4], vec![5.0, 5.0, 5.0, 5.0]));
        let g = tape.input(Tensor::new(vec![4], vec![1.0; 4]));
        let b = tape.input(Tensor::new(vec![4], vec![0.0; 4]));
        let y = tape.layer_norm(x, g, b, 1e-12);
        for &v in &tape.value(y).data {
            assert_close(v, 0.0, 1e-5);
        }
    }

    #[test]
    fn layer_norm_fixes_mean_and_variance() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::new(vec![2], vec![1.0, -1.0]));
        let g = tape.input(Tensor::new(vec![2], vec![1.0, 1.0]));
        let b = tape.input(Tensor::new(vec![2], vec![0.0, 0.0]));
        let y = tape.layer_norm(x, g, b, 1e-12);
        assert_close(tape.value(y).data[0], 1.0, 1e-5);
        assert_close(tape.value(y).data[1], -1.0, 1e-5);

        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let data = random_vec(&mut rng, 24);
        let x = tape.input(Tensor::new(vec![3, 8], data));
        let g = tape.input(Tensor::new(vec![8], vec![1.0; 8]));
        let b = tape.input(Tensor::new(vec![8], vec![0.0; 8]));
        let y = tape.layer_norm(x, g, b, 1e-12);
        for r in 0..3 {
            let row = &tape.value(y).data[r * 8..(r + 1) * 8];
            let mean = row.iter().sum::<f32>() / 8.0;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / 8.0;
            assert!(mean.abs() < 1e-5, "row mean {mean}");
            assert!((var - 1.0).abs() < 1e-3, "row variance {var}");
        }
    }

    #[test]
    fn layer_norm_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let x0 = random_vec(&mut rng, 12);
        let g0 = random_vec(&mut rng, 4);
        let b0 = random_vec(&mut rng, 4);
        let w = random_vec(&mut rng, 12);

        let value = |xv: &[f32], gv: &[f32], bv: &[f32]| {
            let mut t = Tape::new();
            let x = t.input(Tensor::new(vec![3, 4], xv.to_vec()));
            let g = t.input(Tensor::new(vec![4], gv.to_vec()));
            let b = t.input(Tensor::new(vec![4], bv.to_vec()));
            let wt = t.input(Tensor::new(vec![3, 4], w.clone()));
            let y = t.layer_norm(x, g, b, 1e-12);
            let prod = t.mul(y, wt);
            let loss = t.sum(prod);
            t.value(loss).data[0]
        };

        let mut tape = Tape::new();
        let x = tape.input(Tensor::new(vec![3, 4], x0.clone()).with_grad());
        let g = tape.input(Tensor::new(vec![4], g0.clone()).with_grad());
        let b = tape.input(Tensor::new(vec![4], b0.clone()).with_grad());
        let wt = tape.input(Tensor::new(vec![3, 4], w.clone()));
        let y = tape.layer_norm(x, g, b, 1e-12);
        let prod = tape.mul(y, wt);
        let loss = tape.sum(prod);
        let grads = tape.backward(loss);

        assert_grads_match(
            grads.get(x).unwrap(),
            &numerical_grad(|p| value(p, &g0, &b0), &x0, 1e-3),
            1e-2,
            1e-3,
        );
        assert_grads_match(
            grads.get(g).unwrap(),
            &numerical_grad(|p| value(&x0, p, &b0), &g0, 1e-3),
            1e-2,
            1e-3,
        );
        assert_grads_match(
            grads.get(b).unwrap(),
            &numerical_grad(|p| value(&x0, &g0, p), &b0, 1e-3),
            1e-2,
            1e-3,
        );
    }

    #[test]
    fn gelu_known_values_and_monotonicity() {
        assert_eq!(gelu_value(0.0), 0.0);
        assert_close(gelu_value(10.0), 10.0, 1e-4);
        let mut prev = gelu_value(0.0);
        for i in 1..200 {
            let v = gelu_value(i as f32 * 0.05);
            assert!(v >= prev, "gelu not monotone at {}", i as f32 * 0.05);
            prev = v;
        }
    }

    #[test]
    fn gelu_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let x0 = random_vec(&mut rng, 16);
        let value = |p: &[f32]| {
            let mut t = Tape::new();
            let x = t.input(Tensor::new(vec![16], p.to_vec()));
            let y = t.gelu(x);
            let s = t.sum(y);
            t.value(s).data[0]
        };
        let mut tape = Tape::new();
        let x = tape.input(Tensor::new(vec![16], x0.clone()).with_grad());
        let y = tape.gelu(x);
        let loss = tape.sum(y);
        let grads = tape.backward(loss);
        assert_grads_match(grads.get(x).unwrap(), &numerical_grad(value, &x0, 1e-3), 1e-2, 1e-3);
    }

    #[test]
    fn cross_entropy_known_values() {
        let mut tape = Tape::new();
        let logits = tape.input(Tensor::new(vec![1, 2], vec![0.0, 0.0]));
        let loss = tape.cross_entropy(logits, &[0]);
        assert_close(tape.value(loss).data[0], std::f32::consts::LN_2, 1e-6);

        let logits = tape.input(Tensor::new(vec![1, 2], vec![20.0, -20.0]));
        let loss = tape.cross_entropy(logits, &[0]);
        assert!(tape.value(loss).data[0] < 1e-8);
        assert!(tape.value(loss).data[0] >= 0.0);
    }

    #[test]
    #[should_panic(expected = "out of range")]
    fn cross_entropy_rejects_bad_label() {
        let mut tape = Tape::new();
        let logits = tape.input(Tensor::new(vec![1, 2], vec![0.0, 0.0]));
        tape.cross_entropy(logits, &[2]);
    }

    #[test]
    fn cross_entropy_gradient_is_softmax_minus_onehot() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let x0 = random_vec(&mut rng, 6);
        let labels = vec![1usize, 0, 1];

        let mut tape = Tape::new();
        let logits = tape.input(Tensor::new(vec![3, 2], x0.clone()).with_grad());
        let loss = tape.cross_entropy(logits, &labels);
        let grads = tape.backward(loss);
        let got = grads.get(logits).unwrap();

        // Analytic identity.
        for i in 0..3 {
            let row = &x0[i * 2..(i + 1) * 2];
            let max = row[0].max(row[1]);
            let e0 = (row[0] - max).exp();
            let e1 = (row[1] - max).exp();
            let z = e0 + e1;
            for j in 0..2 {
                let p = if j == 0 { e0 / z } else { e1 / z };
                let onehot = if j == labels[i] { 1.0 } else { 0.0 };
                assert_close(got[i * 2 + j], (p - onehot) / 3.0, 1e-5);
            }
        }

        // Finite differences agree.
        let value = |p: &[f32]| {
            let mut t = Tape::new();
            let l = t.input(Tensor::new(vec![3, 2], p.to_vec()));
            let loss = t.cross_entropy(l, &labels);
            t.value(loss).data[0]
        };
        assert_grads_match(got, &numerical_grad(value, &x0, 1e-3), 1e-2, 1e-3);
    }

    #[test]
    fn backward_through_sum_and_square() {
        let mut tape = Tape::new();
        let w = tape.input(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).with_grad());
        let loss = tape.sum(w);
        let grads = tape.backward(loss);
        assert_eq!(grads.get(w).unwrap(), &[1.0, 1.0, 1.0]);

        let mut tape = Tape::new();
        let w = tape.input(Tensor::new(vec![3], vec![1.0, 2.0, 3.0]).with_grad());
        let sq = tape.mul(w, w);
        let loss = tape.sum(sq);
        let grads = tape.backward(loss);
        assert_eq!(grads.get(w).unwrap(), &[2.0, 4.0, 6.0]);
    }

    #[test]
    fn off_path_parameters_get_zero_gradients() {
        let mut tape = Tape::new();
        let used = tape.input(Tensor::new(vec![2], vec![1.0, 2.0]).with_grad());
        let unused = tape.input(Tensor::new(vec![3], vec![1.0, 1.0, 1.0]).with_grad());
        let loss = tape.sum(used);
        let grads = tape.backward(loss);
        assert_eq!(grads.get(unused).unwrap(), &[0.0, 0.0, 0.0]);
    }

    #[test]
    #[should_panic(expected = "scalar loss")]
    fn backward_rejects_non_scalar() {
        let mut tape = Tape::new();
        let w = tape.input(Tensor::new(vec![2], vec![1.0, 2.0]).with_grad());
        tape.backward(w);
    }

    #[test]
    fn gather_rows_accumulates_repeated_indices() {
        let mut tape = Tape::new();
        let table = tape.input(Tensor::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).with_grad());
        let picked = tape.gather_rows(table, &[0, 0, 2]);
        assert_eq!(tape.value(picked).data, vec![1.0, 2.0, 1.0, 2.0, 5.0, 6.0]);
        let loss = tape.sum(picked);
        let grads = tape.backward(loss);
        // Row 0 was picked twice, row 1 never.
        assert_eq!(grads.get(table).unwrap(), &[2.0, 2.0, 0.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn slice_and_concat_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let data = random_vec(&mut rng, 12);
        let mut tape = Tape::new();
        let x = tape.input(Tensor::new(vec![3, 4], data.clone()).with_grad());
        let left = tape.slice_cols(x, 0, 2);
        let right = tape.slice_cols(x, 2, 4);
        let back = tape.concat_cols(&[left, right]);
        assert_eq!(tape.value(back).data, data);

        let loss = tape.sum(back);
        let grads = tape.backward(loss);
        assert_eq!(grads.get(x).unwrap(), &vec![1.0; 12][..]);
    }

    #[test]
    fn transpose_add_row_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let x0 = random_vec(&mut rng, 6);
        let r0 = random_vec(&mut rng, 2);
        let w = random_vec(&mut rng, 6);

        let value = |xv: &[f32], rv: &[f32]| {
            let mut t = Tape::new();
            let x = t.input(Tensor::new(vec![2, 3], xv.to_vec()));
            let r = t.input(Tensor::new(vec![2], rv.to_vec()));
            let xt = t.transpose(x); // [3 x 2]
            let shifted = t.add_row(xt, r);
            let wt = t.input(Tensor::new(vec![3, 2], w.clone()));
            let prod = t.mul(shifted, wt);
            let s = t.sum(prod);
            t.value(s).data[0]
        };

        let mut tape = Tape::new();
        let x = tape.input(Tensor::new(vec![2, 3], x0.clone()).with_grad());
        let r = tape.input(Tensor::new(vec![2], r0.clone()).with_grad());
        let xt = tape.transpose(x);
        let shifted = tape.add_row(xt, r);
        let wt = tape.input(Tensor::new(vec![3, 2], w.clone()));
        let prod = tape.mul(shifted, wt);
        let loss = tape.sum(prod);
        let grads = tape.backward(loss);

        assert_grads_match(
            grads.get(x).unwrap(),
            &numerical_grad(|p| value(p, &r0), &x0, 1e-3),
            1e-2,
            1e-3,
        );
        assert_grads_match(
            grads.get(r).unwrap(),
            &numerical_grad(|p| value(&x0, p), &r0, 1e-3),
            1e-2,
            1e-3,
        );
    }

    #[test]
    fn composite_chain_gradient_matches_finite_differences() {
        // matmul -> add_row -> gelu -> layer_norm -> softmax -> weighted sum,
        // the same op mix an encoder layer uses.
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let x0 = random_vec(&mut rng, 8);
        let w0 = random_vec(&mut rng, 16);
        let b0 = random_vec(&mut rng, 4);
        let probe_w = random_vec(&mut rng, 8);

        let value = |wv: &[f32]| {
            let mut t = Tape::new();
            let x = t.input(Tensor::new(vec![2, 4], x0.clone()));
            let w = t.input(Tensor::new(vec![4, 4], wv.to_vec()));
            let b = t.input(Tensor::new(vec![4], b0.clone()));
            let ones = t.input(Tensor::new(vec![4], vec![1.0; 4]));
            let zeros = t.input(Tensor::new(vec![4], vec![0.0; 4]));
            let h = t.matmul(x, w);
            let h = t.add_row(h, b);
            let h = t.gelu(h);
            let h = t.layer_norm(h, ones, zeros, 1e-12);
            let h = t.softmax(h, 1);
            let pw = t.input(Tensor::new(vec![2, 4], probe_w.clone()));
            let prod = t.mul(h, pw);
            let s = t.sum(prod);
            t.value(s).data[0]
        };

        let mut tape = Tape::new();
        let x = tape.input(Tensor::new(vec![2, 4], x0.clone()));
        let w = tape.input(Tensor::new(vec![4, 4], w0.clone()).with_grad());
        let b = tape.input(Tensor::new(vec![4], b0.clone()));
        let ones = tape.input(Tensor::new(vec![4], vec![1.0; 4]));
        let zeros = tape.input(Tensor::new(vec![4], vec![0.0; 4]));
        let h = tape.matmul(x, w);
        let h = tape.add_row(h, b);
        let h = tape.gelu(h);
        let h = tape.layer_norm(h, ones, zeros, 1e-12);
        let h = tape.softmax(h, 1);
        let pw = tape.input(Tensor::new(vec![2, 4], probe_w.clone()));
        let prod = tape.mul(h, pw);
        let loss = tape.sum(prod);
        let grads = tape.backward(loss);

        assert_grads_match(grads.get(w).unwrap(), &numerical_grad(value, &w0, 1e-3), 1e-2, 2e-3);
        let _ = x;
    }

    #[test]
    fn identical_op_sequences_are_bitwise_identical() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(43);
            let data = random_vec(&mut rng, 16);
            let mut t = Tape::new();
            let x = t.input(Tensor::new(vec![4, 4], data));
            let sm = t.softmax(x, 1);
            let g = t.gelu(sm);
            let s = t.sum(g);
            t.value(s).data[0].to_bits()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn finite_outputs_on_finite_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(47);
        let data = random_vec(&mut rng, 64);
        let mut t = Tape::new();
        let x = t.input(Tensor::new(vec![8, 8], data));
        let sm = t.softmax(x, 1);
        let ones = t.input(Tensor::new(vec![8], vec![1.0; 8]));
        let zeros = t.input(Tensor::new(vec![8], vec![0.0; 8]));
        let ln = t.layer_norm(sm, ones, zeros, 1e-12);
        let ge = t.gelu(ln);
        assert!(t.value(ge).data.iter().all(|v| v.is_finite()));
    }
}
