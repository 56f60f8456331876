use rayon::prelude::*;

use super::{fast_exp, gelu_grad_scalar, gelu_scalar, sum_f64};
use crate::tensor::optim::{ParamId, ParamSet};

/// Deterministic f64 dot product with four accumulator chains.
fn dot_f64(a: &[f32], b: &[f32]) -> f64 {
    let mut acc = [0.0f64; 4];
    let ca = a.chunks_exact(4);
    let ra = ca.remainder();
    let cb = b.chunks_exact(4);
    let rb = cb.remainder();
    for (x, y) in ca.zip(cb) {
        acc[0] += (x[0] * y[0]) as f64;
        acc[1] += (x[1] * y[1]) as f64;
        acc[2] += (x[2] * y[2]) as f64;
        acc[3] += (x[3] * y[3]) as f64;
    }
    let mut tail = 0.0f64;
    for (x, y) in ra.iter().zip(rb) {
        tail += (x * y) as f64;
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Value(pub(crate) usize);

#[derive(Clone, Debug)]
enum Op {
    /// Constant leaf; receives no gradient.
    Leaf,
    /// Grad-tracked leaf not bound to a parameter (tests, probes).
    Input,
    /// Leaf mirroring an external [`Parameter`](crate::tensor::Parameter).
    Param { slot: ParamId },
    MatMul { a: Value, b: Value },
    Transpose { x: Value },
    Add { a: Value, b: Value },
    /// `a[R,C] + v[1,C]` broadcast over rows.
    AddRowVec { a: Value, v: Value },
    Mul { a: Value, b: Value },
    /// `a[R,C] * v[1,C]` broadcast over rows.
    MulRowVec { a: Value, v: Value },
    Scale { x: Value, c: f32 },
    Gelu { x: Value },
    /// Row-wise softmax with max subtraction.
    Softmax { x: Value },
    LayerNorm { x: Value, gamma: Value, beta: Value },
    /// Row gather; ids live in `aux_ids`.
    Embedding { table: Value },
    /// Mean negative log-likelihood; targets in `aux_ids`, probs in `aux`.
    CrossEntropy { logits: Value },
    SliceRows { x: Value, start: usize },
    SliceCols { x: Value, start: usize },
    ConcatRows { xs: Vec<Value> },
    ConcatCols { xs: Vec<Value> },
    MeanRows { x: Value },
    /// Column-wise max over rows; argmax rows in `aux_ids`.
    MaxRows { x: Value },
    SumAll { x: Value },
}

struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    data: Vec<f32>,
    grad: Option<Vec<f32>>,
    needs_grad: bool,
    aux: Vec<f32>,
    aux_ids: Vec<u32>,
}

/// Append-only record of the forward pass.
///
/// Nodes are stored in execution order, so inputs always precede their
/// consumers and [`Tape::backward`] visits each node exactly once in reverse.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    pub fn shape(&self, v: Value) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn data(&self, v: Value) -> &[f32] {
        &self.nodes[v.0].data
    }

    /// Gradient buffer of `v`, if one was populated by `backward`.
    pub fn grad(&self, v: Value) -> Option<&[f32]> {
        self.nodes[v.0].grad.as_deref()
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, data: Vec<f32>, needs_grad: bool) -> Value {
        debug_assert_eq!(data.len(), rows * cols);
        self.nodes.push(Node {
            op,
            rows,
            cols,
            data,
            grad: None,
            needs_grad,
            aux: Vec::new(),
            aux_ids: Vec::new(),
        });
        Value(self.nodes.len() - 1)
    }

    fn any_needs_grad(&self, vs: &[Value]) -> bool {
        vs.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    // ── Leaves ──────────────────────────────────────────────────────

    /// Constant leaf: immutable data, never receives a gradient.
    pub fn leaf(&mut self, rows: usize, cols: usize, data: Vec<f32>) -> Value {
        assert_eq!(data.len(), rows * cols, "leaf data length {} != {}x{}", data.len(), rows, cols);
        self.push(Op::Leaf, rows, cols, data, false)
    }

    /// Grad-tracked leaf not tied to a parameter store.
    pub fn input(&mut self, rows: usize, cols: usize, data: Vec<f32>) -> Value {
        assert_eq!(data.len(), rows * cols, "input data length {} != {}x{}", data.len(), rows, cols);
        self.push(Op::Input, rows, cols, data, true)
    }

    /// Bind an external parameter onto the tape. Frozen parameters enter as
    /// constants and receive no gradient.
    pub fn param(&mut self, params: &ParamSet, id: ParamId) -> Value {
        let p = params.get(id);
        if p.trainable {
            self.push(Op::Param { slot: id }, p.rows, p.cols, p.data.clone(), true)
        } else {
            self.push(Op::Leaf, p.rows, p.cols, p.data.clone(), false)
        }
    }

    // ── Forward ops ─────────────────────────────────────────────────

    pub fn matmul(&mut self, a: Value, b: Value) -> Value {
        let (m, ka) = self.shape(a);
        let (kb, n) = self.shape(b);
        assert_eq!(
            ka, kb,
            "matmul dimension mismatch: [{m}x{ka}] . [{kb}x{n}]"
        );
        let mut out = vec![0.0f32; m * n];
        matmul_nn(&self.nodes[a.0].data, &self.nodes[b.0].data, m, ka, n, &mut out);
        let ng = self.any_needs_grad(&[a, b]);
        self.push(Op::MatMul { a, b }, m, n, out, ng)
    }

    pub fn transpose(&mut self, x: Value) -> Value {
        let (r, c) = self.shape(x);
        let src = &self.nodes[x.0].data;
        let mut out = vec![0.0f32; r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = src[i * c + j];
            }
        }
        let ng = self.nodes[x.0].needs_grad;
        self.push(Op::Transpose { x }, c, r, out, ng)
    }

    /// Elementwise add; `b` may be a `1xC` row vector broadcast over rows.
    pub fn add(&mut self, a: Value, b: Value) -> Value {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        let ng = self.any_needs_grad(&[a, b]);
        if ra == rb && ca == cb {
            let out: Vec<f32> = self.nodes[a.0]
                .data
                .iter()
                .zip(&self.nodes[b.0].data)
                .map(|(x, y)| x + y)
                .collect();
            self.push(Op::Add { a, b }, ra, ca, out, ng)
        } else if rb == 1 && cb == ca {
            let v = &self.nodes[b.0].data;
            let mut out = Vec::with_capacity(ra * ca);
            for row in self.nodes[a.0].data.chunks_exact(ca) {
                out.extend(row.iter().zip(v).map(|(x, y)| x + y));
            }
            self.push(Op::AddRowVec { a, v: b }, ra, ca, out, ng)
        } else {
            panic!("add shape mismatch: [{ra}x{ca}] + [{rb}x{cb}]");
        }
    }

    /// Elementwise multiply; `b` may be a `1xC` row vector broadcast over rows.
    pub fn mul(&mut self, a: Value, b: Value) -> Value {
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        let ng = self.any_needs_grad(&[a, b]);
        if ra == rb && ca == cb {
            let out: Vec<f32> = self.nodes[a.0]
                .data
                .iter()
                .zip(&self.nodes[b.0].data)
                .map(|(x, y)| x * y)
                .collect();
            self.push(Op::Mul { a, b }, ra, ca, out, ng)
        } else if rb == 1 && cb == ca {
            let v = &self.nodes[b.0].data;
            let mut out = Vec::with_capacity(ra * ca);
            for row in self.nodes[a.0].data.chunks_exact(ca) {
                out.extend(row.iter().zip(v).map(|(x, y)| x * y));
            }
            self.push(Op::MulRowVec { a, v: b }, ra, ca, out, ng)
        } else {
            panic!("mul shape mismatch: [{ra}x{ca}] * [{rb}x{cb}]");
        }
    }

    pub fn scale(&mut self, x: Value, c: f32) -> Value {
        let (r, co) = self.shape(x);
        let out: Vec<f32> = self.nodes[x.0].data.iter().map(|v| v * c).collect();
        let ng = self.nodes[x.0].needs_grad;
        self.push(Op::Scale { x, c }, r, co, out, ng)
    }

    pub fn gelu(&mut self, x: Value) -> Value {
        let (r, c) = self.shape(x);
        let out: Vec<f32> = self.nodes[x.0].data.iter().map(|&v| gelu_scalar(v)).collect();
        let ng = self.nodes[x.0].needs_grad;
        self.push(Op::Gelu { x }, r, c, out, ng)
    }

    /// Row-wise softmax with max subtraction; normalization sums run in f64
    /// so wide rows still sum to 1 within 1e-6.
    pub fn softmax(&mut self, x: Value) -> Value {
        let (r, c) = self.shape(x);
        assert!(c > 0, "softmax on empty rows");
        let src = &self.nodes[x.0].data;
        let mut out = vec![0.0f32; r * c];
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let dst = &mut out[i * c..(i + 1) * c];
            softmax_row(row, dst);
        }
        let ng = self.nodes[x.0].needs_grad;
        self.push(Op::Softmax { x }, r, c, out, ng)
    }

    /// Per-row normalization to zero mean / unit variance, then `gamma`, `beta`
    /// (`1xC` each). `eps` is fixed at 1e-5.
    pub fn layer_norm(&mut self, x: Value, gamma: Value, beta: Value) -> Value {
        const EPS: f32 = 1e-5;
        let (r, c) = self.shape(x);
        let (rg, cg) = self.shape(gamma);
        let (rb, cb) = self.shape(beta);
        assert!(
            rg == 1 && cg == c && rb == 1 && cb == c,
            "layer_norm affine shape mismatch: x [{r}x{c}], gamma [{rg}x{cg}], beta [{rb}x{cb}]"
        );
        let src = &self.nodes[x.0].data;
        let g = &self.nodes[gamma.0].data;
        let b = &self.nodes[beta.0].data;
        let mut out = vec![0.0f32; r * c];
        let mut aux = Vec::with_capacity(2 * r); // per row: mean, rstd
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let mut sum = 0.0f64;
            for &v in row {
                sum += v as f64;
            }
            let mean = (sum / c as f64) as f32;
            let mut var = 0.0f64;
            for &v in row {
                let d = (v - mean) as f64;
                var += d * d;
            }
            let rstd = (1.0 / ((var / c as f64) + EPS as f64).sqrt()) as f32;
            let dst = &mut out[i * c..(i + 1) * c];
            for j in 0..c {
                dst[j] = (row[j] - mean) * rstd * g[j] + b[j];
            }
            aux.push(mean);
            aux.push(rstd);
        }
        let ng = self.any_needs_grad(&[x, gamma, beta]);
        let v = self.push(Op::LayerNorm { x, gamma, beta }, r, c, out, ng);
        self.nodes[v.0].aux = aux;
        v
    }

    /// Gather rows of `table` by id; backward scatter-adds into the table.
    pub fn embedding(&mut self, table: Value, ids: &[u32]) -> Value {
        let (v, d) = self.shape(table);
        for &id in ids {
            assert!(
                (id as usize) < v,
                "embedding id {id} out of range for table of {v} rows"
            );
        }
        let src = &self.nodes[table.0].data;
        let mut out = Vec::with_capacity(ids.len() * d);
        for &id in ids {
            out.extend_from_slice(&src[id as usize * d..(id as usize + 1) * d]);
        }
        let ng = self.nodes[table.0].needs_grad;
        let val = self.push(Op::Embedding { table }, ids.len(), d, out, ng);
        self.nodes[val.0].aux_ids = ids.to_vec();
        val
    }

    /// Mean over rows of `-log softmax(logits)[target]`; returns a scalar.
    pub fn cross_entropy(&mut self, logits: Value, targets: &[u32]) -> Value {
        let (r, c) = self.shape(logits);
        assert_eq!(targets.len(), r, "cross_entropy: {} targets for {r} rows", targets.len());
        assert!(r >= 1, "cross_entropy on empty batch");
        for &t in targets {
            assert!(
                (t as usize) < c,
                "cross_entropy target {t} out of range for {c} classes"
            );
        }
        let src = &self.nodes[logits.0].data;
        let mut probs = vec![0.0f32; r * c];
        let mut total = 0.0f64;
        for i in 0..r {
            let row = &src[i * c..(i + 1) * c];
            let mut max = f32::NEG_INFINITY;
            for &v in row {
                max = max.max(v);
            }
            let prow = &mut probs[i * c..(i + 1) * c];
            for (p, &v) in prow.iter_mut().zip(row) {
                *p = fast_exp(v - max);
            }
            let sum = sum_f64(prow);
            let inv = 1.0 / sum;
            for p in prow.iter_mut() {
                *p = (*p as f64 * inv) as f32;
            }
            let lse = max as f64 + sum.ln();
            total += lse - row[targets[i] as usize] as f64;
        }
        let loss = (total / r as f64) as f32;
        let ng = self.nodes[logits.0].needs_grad;
        let v = self.push(Op::CrossEntropy { logits }, 1, 1, vec![loss], ng);
        self.nodes[v.0].aux = probs;
        self.nodes[v.0].aux_ids = targets.to_vec();
        v
    }

    pub fn slice_rows(&mut self, x: Value, start: usize, len: usize) -> Value {
        let (r, c) = self.shape(x);
        assert!(start + len <= r, "slice_rows {start}..{} out of {r} rows", start + len);
        let out = self.nodes[x.0].data[start * c..(start + len) * c].to_vec();
        let ng = self.nodes[x.0].needs_grad;
        self.push(Op::SliceRows { x, start }, len, c, out, ng)
    }

    pub fn slice_cols(&mut self, x: Value, start: usize, len: usize) -> Value {
        let (r, c) = self.shape(x);
        assert!(start + len <= c, "slice_cols {start}..{} out of {c} cols", start + len);
        let src = &self.nodes[x.0].data;
        let mut out = Vec::with_capacity(r * len);
        for i in 0..r {
            out.extend_from_slice(&src[i * c + start..i * c + start + len]);
        }
        let ng = self.nodes[x.0].needs_grad;
        self.push(Op::SliceCols { x, start }, r, len, out, ng)
    }

    pub fn concat_rows(&mut self, xs: &[Value]) -> Value {
        assert!(!xs.is_empty(), "concat_rows of nothing");
        let c = self.shape(xs[0]).1;
        let mut rows = 0;
        let mut out = Vec::new();
        for &x in xs {
            let (r, cx) = self.shape(x);
            assert_eq!(cx, c, "concat_rows column mismatch: {cx} vs {c}");
            rows += r;
            out.extend_from_slice(&self.nodes[x.0].data);
        }
        let ng = self.any_needs_grad(xs);
        self.push(Op::ConcatRows { xs: xs.to_vec() }, rows, c, out, ng)
    }

    pub fn concat_cols(&mut self, xs: &[Value]) -> Value {
        assert!(!xs.is_empty(), "concat_cols of nothing");
        let r = self.shape(xs[0]).0;
        let widths: Vec<usize> = xs
            .iter()
            .map(|&x| {
                let (rx, cx) = self.shape(x);
                assert_eq!(rx, r, "concat_cols row mismatch: {rx} vs {r}");
                cx
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&x, &w) in xs.iter().zip(&widths) {
                out.extend_from_slice(&self.nodes[x.0].data[i * w..(i + 1) * w]);
            }
        }
        let ng = self.any_needs_grad(xs);
        self.push(Op::ConcatCols { xs: xs.to_vec() }, r, total, out, ng)
    }

    /// Column means over rows: `[R,C] -> [1,C]`.
    pub fn mean_rows(&mut self, x: Value) -> Value {
        let (r, c) = self.shape(x);
        let src = &self.nodes[x.0].data;
        let mut out = vec![0.0f64; c];
        for i in 0..r {
            for j in 0..c {
                out[j] += src[i * c + j] as f64;
            }
        }
        let out: Vec<f32> = out.iter().map(|&s| (s / r as f64) as f32).collect();
        let ng = self.nodes[x.0].needs_grad;
        self.push(Op::MeanRows { x }, 1, c, out, ng)
    }

    /// Column-wise max over rows: `[R,C] -> [1,C]`. Ties keep the lowest row.
    pub fn max_rows(&mut self, x: Value) -> Value {
        let (r, c) = self.shape(x);
        assert!(r >= 1, "max_rows on empty input");
        let src = &self.nodes[x.0].data;
        let mut out = src[..c].to_vec();
        let mut arg = vec![0u32; c];
        for i in 1..r {
            for j in 0..c {
                let v = src[i * c + j];
                if v > out[j] {
                    out[j] = v;
                    arg[j] = i as u32;
                }
            }
        }
        let ng = self.nodes[x.0].needs_grad;
        let v = self.push(Op::MaxRows { x }, 1, c, out, ng);
        self.nodes[v.0].aux_ids = arg;
        v
    }

    pub fn sum_all(&mut self, x: Value) -> Value {
        let mut s = 0.0f64;
        for &v in &self.nodes[x.0].data {
            s += v as f64;
        }
        let ng = self.nodes[x.0].needs_grad;
        self.push(Op::SumAll { x }, 1, 1, vec![s as f32], ng)
    }

    // ── Backward ────────────────────────────────────────────────────

    /// Reverse pass seeded at `loss`. Leaf gradients accumulate across calls;
    /// intermediate gradients are reset each call.
    pub fn backward(&mut self, loss: Value) {
        let (r, c) = self.shape(loss);
        assert!(r == 1 && c == 1, "backward requires a scalar loss, got [{r}x{c}]");
        assert_eq!(
            loss.0,
            self.nodes.len() - 1,
            "backward requires the loss to be the last node on the tape"
        );

        for node in self.nodes.iter_mut() {
            if !node.needs_grad {
                continue;
            }
            let is_leaf = matches!(node.op, Op::Input | Op::Param { .. });
            match &mut node.grad {
                Some(g) if !is_leaf => g.iter_mut().for_each(|v| *v = 0.0),
                Some(_) => {}
                None => node.grad = Some(vec![0.0f32; node.rows * node.cols]),
            }
        }
        if let Some(g) = self.nodes[loss.0].grad.as_mut() {
            g[0] += 1.0;
        } else {
            return; // loss does not depend on anything trainable
        }

        for i in (0..self.nodes.len()).rev() {
            if self.nodes[i].grad.is_none() {
                continue;
            }
            self.step_backward(i);
        }
    }

    fn take_grad(&self, i: usize) -> Vec<f32> {
        self.nodes[i].grad.as_ref().expect("grad present").clone()
    }

    fn add_into_grad(&mut self, v: Value, delta: &[f32]) {
        let node = &mut self.nodes[v.0];
        if !node.needs_grad {
            return;
        }
        let g = node
            .grad
            .as_mut()
            .expect("needs_grad node missing grad buffer");
        for (a, b) in g.iter_mut().zip(delta) {
            *a += b;
        }
    }

    fn step_backward(&mut self, i: usize) {
        let op = self.nodes[i].op.clone();
        match op {
            Op::Leaf | Op::Input | Op::Param { .. } => {}
            Op::MatMul { a, b } => {
                let g = self.take_grad(i);
                let (m, k) = self.shape(a);
                let n = self.shape(b).1;
                if self.nodes[a.0].needs_grad {
                    let mut da = vec![0.0f32; m * k];
                    matmul_nt(&g, &self.nodes[b.0].data, m, n, k, &mut da);
                    self.add_into_grad(a, &da);
                }
                if self.nodes[b.0].needs_grad {
                    let mut db = vec![0.0f32; k * n];
                    matmul_tn(&self.nodes[a.0].data, &g, m, k, n, &mut db);
                    self.add_into_grad(b, &db);
                }
            }
            Op::Transpose { x } => {
                let g = self.take_grad(i);
                let (r, c) = self.shape(Value(i));
                let mut dx = vec![0.0f32; r * c];
                for ii in 0..r {
                    for jj in 0..c {
                        dx[jj * r + ii] = g[ii * c + jj];
                    }
                }
                self.add_into_grad(x, &dx);
            }
            Op::Add { a, b } => {
                let g = self.take_grad(i);
                self.add_into_grad(a, &g);
                self.add_into_grad(b, &g);
            }
            Op::AddRowVec { a, v } => {
                let g = self.take_grad(i);
                self.add_into_grad(a, &g);
                if self.nodes[v.0].needs_grad {
                    let c = self.shape(v).1;
                    let mut dv = vec![0.0f32; c];
                    for row in g.chunks_exact(c) {
                        for (d, x) in dv.iter_mut().zip(row) {
                            *d += x;
                        }
                    }
                    self.add_into_grad(v, &dv);
                }
            }
            Op::Mul { a, b } => {
                let g = self.take_grad(i);
                if self.nodes[a.0].needs_grad {
                    let da: Vec<f32> = g.iter().zip(&self.nodes[b.0].data).map(|(x, y)| x * y).collect();
                    self.add_into_grad(a, &da);
                }
                if self.nodes[b.0].needs_grad {
                    let db: Vec<f32> = g.iter().zip(&self.nodes[a.0].data).map(|(x, y)| x * y).collect();
                    self.add_into_grad(b, &db);
                }
            }
            Op::MulRowVec { a, v } => {
                let g = self.take_grad(i);
                let c = self.shape(v).1;
                if self.nodes[a.0].needs_grad {
                    let vd = &self.nodes[v.0].data;
                    let mut da = Vec::with_capacity(g.len());
                    for row in g.chunks_exact(c) {
                        da.extend(row.iter().zip(vd).map(|(x, y)| x * y));
                    }
                    self.add_into_grad(a, &da);
                }
                if self.nodes[v.0].needs_grad {
                    let ad = &self.nodes[a.0].data;
                    let mut dv = vec![0.0f32; c];
                    for (row_g, row_a) in g.chunks_exact(c).zip(ad.chunks_exact(c)) {
                        for j in 0..c {
                            dv[j] += row_g[j] * row_a[j];
                        }
                    }
                    self.add_into_grad(v, &dv);
                }
            }
            Op::Scale { x, c } => {
                let g = self.take_grad(i);
                let dx: Vec<f32> = g.iter().map(|v| v * c).collect();
                self.add_into_grad(x, &dx);
            }
            Op::Gelu { x } => {
                let g = self.take_grad(i);
                let dx: Vec<f32> = g
                    .iter()
                    .zip(&self.nodes[x.0].data)
                    .map(|(gv, &xv)| gv * gelu_grad_scalar(xv))
                    .collect();
                self.add_into_grad(x, &dx);
            }
            Op::Softmax { x } => {
                let g = self.take_grad(i);
                let (r, c) = self.shape(Value(i));
                let s = &self.nodes[i].data;
                let mut dx = vec![0.0f32; r * c];
                for ii in 0..r {
                    let srow = &s[ii * c..(ii + 1) * c];
                    let grow = &g[ii * c..(ii + 1) * c];
                    let dot = dot_f64(grow, srow) as f32;
                    let drow = &mut dx[ii * c..(ii + 1) * c];
                    for j in 0..c {
                        drow[j] = srow[j] * (grow[j] - dot);
                    }
                }
                self.add_into_grad(x, &dx);
            }
            Op::LayerNorm { x, gamma, beta } => {
                let g = self.take_grad(i);
                let (r, c) = self.shape(Value(i));
                let aux = self.nodes[i].aux.clone();
                let xd = &self.nodes[x.0].data;
                let gd = &self.nodes[gamma.0].data;
                let mut dx = vec![0.0f32; r * c];
                let mut dgamma = vec![0.0f32; c];
                let mut dbeta = vec![0.0f32; c];
                for ii in 0..r {
                    let mean = aux[2 * ii];
                    let rstd = aux[2 * ii + 1];
                    let xrow = &xd[ii * c..(ii + 1) * c];
                    let grow = &g[ii * c..(ii + 1) * c];
                    let mut sum_dxhat = 0.0f64;
                    let mut sum_dxhat_xhat = 0.0f64;
                    for j in 0..c {
                        let xhat = (xrow[j] - mean) * rstd;
                        let dxhat = grow[j] * gd[j];
                        dgamma[j] += grow[j] * xhat;
                        dbeta[j] += grow[j];
                        sum_dxhat += dxhat as f64;
                        sum_dxhat_xhat += (dxhat * xhat) as f64;
                    }
                    let m1 = (sum_dxhat / c as f64) as f32;
                    let m2 = (sum_dxhat_xhat / c as f64) as f32;
                    let drow = &mut dx[ii * c..(ii + 1) * c];
                    for j in 0..c {
                        let xhat = (xrow[j] - mean) * rstd;
                        let dxhat = grow[j] * gd[j];
                        drow[j] = rstd * (dxhat - m1 - xhat * m2);
                    }
                }
                self.add_into_grad(x, &dx);
                self.add_into_grad(gamma, &dgamma);
                self.add_into_grad(beta, &dbeta);
            }
            Op::Embedding { table } => {
                if !self.nodes[table.0].needs_grad {
                    return;
                }
                let g = self.take_grad(i);
                let ids = self.nodes[i].aux_ids.clone();
                let (vr, d) = self.shape(table);
                let mut dt = vec![0.0f32; vr * d];
                for (r, &id) in ids.iter().enumerate() {
                    let dst = &mut dt[id as usize * d..(id as usize + 1) * d];
                    let src = &g[r * d..(r + 1) * d];
                    for (a, b) in dst.iter_mut().zip(src) {
                        *a += b;
                    }
                }
                self.add_into_grad(table, &dt);
            }
            Op::CrossEntropy { logits } => {
                let g = self.take_grad(i)[0];
                let (r, c) = self.shape(logits);
                let probs = &self.nodes[i].aux;
                let targets = &self.nodes[i].aux_ids;
                let scale = g / r as f32;
                let mut dl = Vec::with_capacity(r * c);
                for ii in 0..r {
                    let prow = &probs[ii * c..(ii + 1) * c];
                    let t = targets[ii] as usize;
                    for (j, &p) in prow.iter().enumerate() {
                        let onehot = if j == t { 1.0 } else { 0.0 };
                        dl.push(scale * (p - onehot));
                    }
                }
                self.add_into_grad(logits, &dl);
            }
            Op::SliceRows { x, start } => {
                let g = self.take_grad(i);
                let (len, c) = self.shape(Value(i));
                let node = &mut self.nodes[x.0];
                if !node.needs_grad {
                    return;
                }
                let gx = node.grad.as_mut().expect("grad buffer");
                for (a, b) in gx[start * c..(start + len) * c].iter_mut().zip(&g) {
                    *a += b;
                }
            }
            Op::SliceCols { x, start } => {
                let g = self.take_grad(i);
                let (r, len) = self.shape(Value(i));
                let c = self.shape(x).1;
                let node = &mut self.nodes[x.0];
                if !node.needs_grad {
                    return;
                }
                let gx = node.grad.as_mut().expect("grad buffer");
                for ii in 0..r {
                    for jj in 0..len {
                        gx[ii * c + start + jj] += g[ii * len + jj];
                    }
                }
            }
            Op::ConcatRows { xs } => {
                let g = self.take_grad(i);
                let c = self.shape(Value(i)).1;
                let mut offset = 0;
                for x in xs {
                    let r = self.shape(x).0;
                    let part = &g[offset * c..(offset + r) * c];
                    self.add_into_grad(x, part);
                    offset += r;
                }
            }
            Op::ConcatCols { xs } => {
                let g = self.take_grad(i);
                let (r, total) = self.shape(Value(i));
                let mut offset = 0;
                for x in xs {
                    let w = self.shape(x).1;
                    if self.nodes[x.0].needs_grad {
                        let mut dx = Vec::with_capacity(r * w);
                        for ii in 0..r {
                            dx.extend_from_slice(&g[ii * total + offset..ii * total + offset + w]);
                        }
                        self.add_into_grad(x, &dx);
                    }
                    offset += w;
                }
            }
            Op::MeanRows { x } => {
                let g = self.take_grad(i);
                let (r, c) = self.shape(x);
                let inv = 1.0 / r as f32;
                let mut dx = Vec::with_capacity(r * c);
                for _ in 0..r {
                    dx.extend(g.iter().map(|v| v * inv));
                }
                self.add_into_grad(x, &dx);
            }
            Op::MaxRows { x } => {
                let g = self.take_grad(i);
                let arg = self.nodes[i].aux_ids.clone();
                let (r, c) = self.shape(x);
                let mut dx = vec![0.0f32; r * c];
                for (j, (&gv, &row)) in g.iter().zip(&arg).enumerate() {
                    dx[row as usize * c + j] = gv;
                }
                self.add_into_grad(x, &dx);
            }
            Op::SumAll { x } => {
                let g = self.take_grad(i)[0];
                let n = self.nodes[x.0].data.len();
                let dx = vec![g; n];
                self.add_into_grad(x, &dx);
            }
        }
    }

    /// Accumulate gradients of parameter-bound leaves into the store.
    pub fn export_grads(&self, params: &mut ParamSet) {
        for node in &self.nodes {
            if let Op::Param { slot } = node.op {
                if let Some(g) = node.grad.as_deref() {
                    let p = params.get_mut(slot);
                    for (a, b) in p.grad.iter_mut().zip(g) {
                        *a += b;
                    }
                }
            }
        }
    }
}

fn softmax_row(row: &[f32], dst: &mut [f32]) {
    let mut max = f32::NEG_INFINITY;
    for &v in row {
        max = max.max(v);
    }
    for (d, &v) in dst.iter_mut().zip(row) {
        *d = fast_exp(v - max);
    }
    let inv = 1.0 / sum_f64(dst);
    for d in dst.iter_mut() {
        *d = (*d as f64 * inv) as f32;
    }
}

// ── Matmul kernels ──────────────────────────────────────────────────
//
// The NN kernel accumulates over the contraction index in ascending order
// for every output element, so results are bit-identical to the scalar
// triple loop and independent of row-level parallelism. The transposed
// variants materialize the transpose and reuse the NN kernel, which keeps
// the inner loop a vectorizable row update instead of a serial dot product.

const PAR_MIN_FLOPS: usize = 1 << 15;

/// One output row, contraction unrolled by four. The per-element addition
/// order (ascending p) matches the scalar triple loop exactly.
fn nn_row(arow: &[f32], b: &[f32], k: usize, n: usize, row: &mut [f32]) {
    let mut p = 0;
    while p + 4 <= k {
        let a0 = arow[p];
        let a1 = arow[p + 1];
        let a2 = arow[p + 2];
        let a3 = arow[p + 3];
        let b0 = &b[p * n..(p + 1) * n];
        let b1 = &b[(p + 1) * n..(p + 2) * n];
        let b2 = &b[(p + 2) * n..(p + 3) * n];
        let b3 = &b[(p + 3) * n..(p + 4) * n];
        for j in 0..n {
            let mut t = row[j];
            t += a0 * b0[j];
            t += a1 * b1[j];
            t += a2 * b2[j];
            t += a3 * b3[j];
            row[j] = t;
        }
        p += 4;
    }
    while p < k {
        let aip = arow[p];
        let brow = &b[p * n..(p + 1) * n];
        for (o, &bv) in row.iter_mut().zip(brow) {
            *o += aip * bv;
        }
        p += 1;
    }
}

/// Four output rows per pass for narrow outputs, so each loaded `b` row
/// feeds four independent accumulator chains. Addition order per element is
/// still ascending p.
fn nn_rows4(a4: &[f32], b: &[f32], k: usize, n: usize, rows: &mut [f32]) {
    let (r0, rest) = rows.split_at_mut(n);
    let (r1, rest) = rest.split_at_mut(n);
    let (r2, r3) = rest.split_at_mut(n);
    let a0 = &a4[..k];
    let a1 = &a4[k..2 * k];
    let a2 = &a4[2 * k..3 * k];
    let a3 = &a4[3 * k..4 * k];
    for p in 0..k {
        let bv = &b[p * n..(p + 1) * n];
        let c0 = a0[p];
        let c1 = a1[p];
        let c2 = a2[p];
        let c3 = a3[p];
        for j in 0..n {
            r0[j] += c0 * bv[j];
            r1[j] += c1 * bv[j];
            r2[j] += c2 * bv[j];
            r3[j] += c3 * bv[j];
        }
    }
}

/// `out[m,n] = a[m,k] . b[k,n]`
pub fn matmul_nn(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    let parallel = m * k * n >= PAR_MIN_FLOPS && m > 1;
    if n <= 32 {
        // narrow outputs are latency-bound on one accumulator; block rows
        let run4 = |bi: usize, rows: &mut [f32]| {
            let i0 = bi * 4;
            if rows.len() == 4 * n {
                nn_rows4(&a[i0 * k..(i0 + 4) * k], b, k, n, rows);
            } else {
                for (r, row) in rows.chunks_mut(n).enumerate() {
                    nn_row(&a[(i0 + r) * k..(i0 + r + 1) * k], b, k, n, row);
                }
            }
        };
        if parallel {
            out.par_chunks_mut(4 * n)
                .enumerate()
                .for_each(|(bi, rows)| run4(bi, rows));
        } else {
            for (bi, rows) in out.chunks_mut(4 * n).enumerate() {
                run4(bi, rows);
            }
        }
    } else if parallel {
        out.par_chunks_mut(n)
            .with_min_len(4)
            .enumerate()
            .for_each(|(i, row)| nn_row(&a[i * k..(i + 1) * k], b, k, n, row));
    } else {
        for (i, row) in out.chunks_mut(n).enumerate() {
            nn_row(&a[i * k..(i + 1) * k], b, k, n, row);
        }
    }
}

fn transpose_into(src: &[f32], rows: usize, cols: usize, dst: &mut [f32]) {
    for i in 0..rows {
        for j in 0..cols {
            dst[j * rows + i] = src[i * cols + j];
        }
    }
}

/// `out[m,k] = a[m,n] . b[k,n]^T`
pub fn matmul_nt(a: &[f32], b: &[f32], m: usize, n: usize, k: usize, out: &mut [f32]) {
    let mut bt = vec![0.0f32; n * k];
    transpose_into(b, k, n, &mut bt);
    matmul_nn(a, &bt, m, n, k, out);
}

/// `out[k,n] = a[m,k]^T . b[m,n]`
pub fn matmul_tn(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    let mut at = vec![0.0f32; k * m];
    transpose_into(a, m, k, &mut at);
    matmul_nn(&at, b, k, m, n, out);
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scalar triple-loop reference, the oracle the kernels must match
    /// bit-for-bit at small sizes.
    fn matmul_reference(a: &[f32], b: &[f32], m: usize, k: usize, n: usize) -> Vec<f32> {
        let mut c = vec![0.0f32; m * n];
        for i in 0..m {
            for j in 0..n {
                for p in 0..k {
                    c[i * n + j] += a[i * k + p] * b[p * n + j];
                }
            }
        }
        c
    }

    fn lcg(seed: &mut u64) -> f32 {
        *seed = seed.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
        ((*seed >> 33) as f32 / (1u64 << 31) as f32) - 0.5
    }

    #[test]
    fn matmul_identity() {
        let mut tape = Tape::new();
        let eye = tape.leaf(3, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0]);
        let x = tape.leaf(3, 3, (0..9).map(|v| v as f32).collect());
        let y = tape.matmul(eye, x);
        assert_eq!(tape.data(y), tape.data(x));
    }

    #[test]
    fn matmul_scalar_case() {
        let mut tape = Tape::new();
        let a = tape.leaf(1, 1, vec![2.0]);
        let b = tape.leaf(1, 1, vec![3.0]);
        let c = tape.matmul(a, b);
        assert_eq!(tape.data(c), &[6.0]);
    }

    #[test]
    fn matmul_matches_triple_loop_exactly() {
        let mut seed = 7u64;
        for (m, k, n) in [(4, 5, 3), (1, 8, 8), (8, 8, 8), (2, 3, 7)] {
            let a: Vec<f32> = (0..m * k).map(|_| lcg(&mut seed)).collect();
            let b: Vec<f32> = (0..k * n).map(|_| lcg(&mut seed)).collect();
            let mut tape = Tape::new();
            let va = tape.leaf(m, k, a.clone());
            let vb = tape.leaf(k, n, b.clone());
            let vc = tape.matmul(va, vb);
            let reference = matmul_reference(&a, &b, m, k, n);
            assert_eq!(tape.data(vc), &reference[..], "dims {m}x{k}x{n}");
        }
    }

    #[test]
    #[should_panic(expected = "matmul dimension mismatch")]
    fn matmul_rejects_bad_shapes() {
        let mut tape = Tape::new();
        let a = tape.leaf(2, 3, vec![0.0; 6]);
        let b = tape.leaf(2, 2, vec![0.0; 4]);
        tape.matmul(a, b);
    }

    #[test]
    fn softmax_symmetry_and_stability() {
        let mut tape = Tape::new();
        let x = tape.leaf(1, 2, vec![0.0, 0.0]);
        let s = tape.softmax(x);
        assert_eq!(tape.data(s), &[0.5, 0.5]);

        let y = tape.leaf(1, 2, vec![1000.0, 0.0]);
        let sy = tape.softmax(y);
        let d = tape.data(sy);
        assert!(d[0] > 0.999_999 && d[0].is_finite());
        assert!(d[1] < 1e-6);
    }

    #[test]
    fn softmax_rows_sum_to_one_at_large_magnitude() {
        let mut seed = 11u64;
        let mut tape = Tape::new();
        let data: Vec<f32> = (0..16 * 33).map(|_| lcg(&mut seed) * 2e4).collect();
        let x = tape.leaf(16, 33, data);
        let s = tape.softmax(x);
        for row in tape.data(s).chunks(33) {
            let sum: f64 = row.iter().map(|&v| v as f64).sum();
            assert!((sum - 1.0).abs() < 1e-6, "row sum {sum}");
        }
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let mut tape = Tape::new();
        let x = tape.leaf(1, 4, vec![3.5; 4]);
        let g = tape.leaf(1, 4, vec![1.0; 4]);
        let b = tape.leaf(1, 4, vec![0.0; 4]);
        let y = tape.layer_norm(x, g, b);
        for &v in tape.data(y) {
            assert_eq!(v, 0.0);
        }
    }

    #[test]
    fn layer_norm_two_point_row() {
        let mut tape = Tape::new();
        let x = tape.leaf(1, 2, vec![1.0, 3.0]);
        let g = tape.leaf(1, 2, vec![1.0; 2]);
        let b = tape.leaf(1, 2, vec![0.0; 2]);
        let y = tape.layer_norm(x, g, b);
        let d = tape.data(y);
        assert!((d[0] + 1.0).abs() < 1e-4, "{d:?}");
        assert!((d[1] - 1.0).abs() < 1e-4, "{d:?}");
    }

    #[test]
    fn add_mul_identities() {
        let mut tape = Tape::new();
        let x = tape.leaf(2, 3, vec![1.0, -2.0, 3.0, 4.0, -5.0, 6.0]);
        let zero = tape.leaf(2, 3, vec![0.0; 6]);
        let one = tape.leaf(2, 3, vec![1.0; 6]);
        let a = tape.add(x, zero);
        let m = tape.mul(x, one);
        assert_eq!(tape.data(a), tape.data(x));
        assert_eq!(tape.data(m), tape.data(x));
    }

    #[test]
    #[should_panic(expected = "add shape mismatch")]
    fn add_rejects_incompatible() {
        let mut tape = Tape::new();
        let x = tape.leaf(2, 3, vec![0.0; 6]);
        let y = tape.leaf(3, 2, vec![0.0; 6]);
        tape.add(x, y);
    }

    #[test]
    fn embedding_gathers_rows() {
        let mut tape = Tape::new();
        let t = tape.leaf(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let e = tape.embedding(t, &[0]);
        assert_eq!(tape.data(e), &[1.0, 2.0]);
    }

    #[test]
    #[should_panic(expected = "out of range for table of 2 rows")]
    fn embedding_rejects_bad_id() {
        let mut tape = Tape::new();
        let t = tape.leaf(2, 2, vec![0.0; 4]);
        tape.embedding(t, &[2]);
    }

    #[test]
    fn embedding_duplicate_ids_accumulate_grad() {
        let mut tape = Tape::new();
        let t = tape.input(3, 2, vec![0.0; 6]);
        let e = tape.embedding(t, &[1, 1]);
        let s = tape.sum_all(e);
        tape.backward(s);
        let g = tape.grad(t).unwrap();
        assert_eq!(g, &[0.0, 0.0, 2.0, 2.0, 0.0, 0.0]);
    }

    #[test]
    fn cross_entropy_uniform_and_saturated() {
        let mut tape = Tape::new();
        let uniform = tape.leaf(1, 4001, vec![0.25; 4001]);
        let l = tape.cross_entropy(uniform, &[17]);
        let expected = (4001.0f64).ln() as f32;
        assert!((tape.data(l)[0] - expected).abs() < 1e-4);

        let mut hot = vec![0.0f32; 10];
        hot[3] = 30.0;
        let logits = tape.leaf(1, 10, hot);
        let l2 = tape.cross_entropy(logits, &[3]);
        assert!(tape.data(l2)[0] < 1e-9, "saturated loss {}", tape.data(l2)[0]);
    }

    #[test]
    #[should_panic(expected = "target 5 out of range")]
    fn cross_entropy_rejects_bad_target() {
        let mut tape = Tape::new();
        let logits = tape.leaf(1, 5, vec![0.0; 5]);
        tape.cross_entropy(logits, &[5]);
    }

    #[test]
    fn backward_sum_gives_ones() {
        let mut tape = Tape::new();
        let x = tape.input(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let s = tape.sum_all(x);
        tape.backward(s);
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 4]);
    }

    #[test]
    fn backward_sum_of_squares() {
        let mut tape = Tape::new();
        let x = tape.input(1, 2, vec![1.0, 2.0]);
        let sq = tape.mul(x, x);
        let s = tape.sum_all(sq);
        tape.backward(s);
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 4.0]);
    }

    #[test]
    fn repeated_backward_accumulates() {
        let mut tape = Tape::new();
        let x = tape.input(1, 2, vec![1.0, 2.0]);
        let s = tape.sum_all(x);
        tape.backward(s);
        tape.backward(s);
        assert_eq!(tape.grad(x).unwrap(), &[2.0, 2.0]);
    }

    #[test]
    #[should_panic(expected = "scalar loss")]
    fn backward_rejects_nonscalar() {
        let mut tape = Tape::new();
        let x = tape.input(1, 2, vec![1.0, 2.0]);
        tape.backward(x);
    }

    #[test]
    fn max_rows_routes_grad_to_argmax() {
        let mut tape = Tape::new();
        let x = tape.input(3, 2, vec![1.0, 5.0, 4.0, 2.0, 3.0, 5.0]);
        let m = tape.max_rows(x);
        assert_eq!(tape.data(m), &[4.0, 5.0]);
        let s = tape.sum_all(m);
        tape.backward(s);
        // col 0 max at row 1; col 1 tie between rows 0 and 2 keeps row 0
        assert_eq!(tape.grad(x).unwrap(), &[0.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn slice_concat_roundtrip() {
        let mut tape = Tape::new();
        let x = tape.input(4, 3, (0..12).map(|v| v as f32).collect());
        let top = tape.slice_rows(x, 0, 2);
        let bottom = tape.slice_rows(x, 2, 2);
        let back = tape.concat_rows(&[top, bottom]);
        assert_eq!(tape.data(back), tape.data(x));
        let left = tape.slice_cols(x, 0, 1);
        let right = tape.slice_cols(x, 1, 2);
        let back2 = tape.concat_cols(&[left, right]);
        assert_eq!(tape.data(back2), tape.data(x));
        let s = tape.sum_all(back2);
        tape.backward(s);
        assert_eq!(tape.grad(x).unwrap(), &[1.0; 12]);
    }
}
