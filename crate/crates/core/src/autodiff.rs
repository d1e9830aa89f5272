//! Reverse-mode differentiation over a small, fixed layer vocabulary.
//!
//! A [`Tape`] records every operation as a node holding its output value.
//! Parameters enter the tape by copy through [`Tape::param`]; after
//! [`Tape::backward`] their gradients are written back into the owning
//! [`Parameter`] slice by index.
//!
//! Layout conventions: images are `N×C×H×W`, dense activations `N×F`,
//! dense weights `I×O`, conv kernels `F×C×k×k`. Convolution is
//! cross-correlation (no kernel flip).

use crate::error::{Error, Result};
use crate::param::Parameter;
use crate::tensor::{LabelMatrix, TaskKind, Tensor};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    f: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.c * self.k * self.k
    }

    fn out_area(&self) -> usize {
        self.ho * self.wo
    }
}

#[derive(Debug)]
enum Op {
    Input,
    Param(usize),
    Dense {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeom,
        cols: Vec<f64>,
    },
    Relu(Var),
    MaxPool {
        input: Var,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(Var),
    Add(Var, Var),
    Concat(Var, Var),
    Sum(Var),
    WeightedSum {
        input: Var,
        weights: Vec<f64>,
    },
    Loss {
        scores: Var,
        kind: TaskKind,
        targets: Vec<f64>,
        activations: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients of one backward pass, indexed by node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    visited: Vec<usize>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Option<&Tensor> {
        self.grads.get(var.0).and_then(|g| g.as_ref())
    }

    /// Node indices in the order the backward sweep processed them.
    pub fn visit_order(&self) -> &[usize] {
        &self.visited
    }
}

#[derive(Debug, Default)]
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

    /// Drops every recorded node. Parameter values live outside the tape
    /// and are never touched.
    pub fn reset(&mut self) {
        self.nodes.clear();
    }

    pub fn value(&self, var: Var) -> &Tensor {
        &self.nodes[var.0].value
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    fn check(&self, var: Var) -> Result<()> {
        if var.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::State(format!(
                "variable {} is not recorded on this tape",
                var.0
            )))
        }
    }

    pub fn input(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Input)
    }

    /// Records `param` (the `index`-th entry of the parameter slice later
    /// handed to [`Tape::backward`]).
    pub fn param(&mut self, index: usize, param: &Parameter) -> Var {
        self.push(param.value.clone(), Op::Param(index))
    }

    pub fn dense(&mut self, input: Var, weight: Var, bias: Var) -> Result<Var> {
        for v in [input, weight, bias] {
            self.check(v)?;
        }
        let (x, w, b) = (self.value(input), self.value(weight), self.value(bias));
        let (xs, ws, bs) = (x.shape(), w.shape(), b.shape());
        if xs.len() != 2 || ws.len() != 2 || bs.len() != 1 || xs[1] != ws[0] || bs[0] != ws[1] {
            return Err(Error::dim(format!(
                "dense: input {xs:?}, weight {ws:?}, bias {bs:?} do not conform"
            )));
        }
        let (n, i, o) = (xs[0], xs[1], ws[1]);
        let mut out = Vec::with_capacity(n * o);
        for _ in 0..n {
            out.extend_from_slice(b.data());
        }
        gemm(n, i, o, x.data(), false, w.data(), false, &mut out, 1.0);
        let value = Tensor::new(vec![n, o], out)?;
        Ok(self.push(
            value,
            Op::Dense {
                input,
                weight,
                bias,
            },
        ))
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Var,
        stride: usize,
        padding: usize,
    ) -> Result<Var> {
        for v in [input, kernel, bias] {
            self.check(v)?;
        }
        let (x, kt, b) = (self.value(input), self.value(kernel), self.value(bias));
        let (xs, ks, bs) = (x.shape(), kt.shape(), b.shape());
        if xs.len() != 4 || ks.len() != 4 || bs.len() != 1 {
            return Err(Error::dim(format!(
                "conv2d: input {xs:?}, kernel {ks:?}, bias {bs:?} have wrong ranks"
            )));
        }
        if ks[1] != xs[1] || ks[2] != ks[3] || bs[0] != ks[0] {
            return Err(Error::dim(format!(
                "conv2d: input {xs:?}, kernel {ks:?}, bias {bs:?} do not conform"
            )));
        }
        if stride == 0 {
            return Err(Error::dim("conv2d: stride must be positive"));
        }
        let k = ks[2];
        let (ph, pw) = (xs[2] + 2 * padding, xs[3] + 2 * padding);
        if k > ph || k > pw {
            return Err(Error::dim(format!(
                "conv2d: kernel {k}x{k} larger than padded input {ph}x{pw}"
            )));
        }
        let geom = ConvGeom {
            n: xs[0],
            c: xs[1],
            h: xs[2],
            w: xs[3],
            f: ks[0],
            k,
            stride,
            pad: padding,
            ho: (ph - k) / stride + 1,
            wo: (pw - k) / stride + 1,
        };
        let (patch, area) = (geom.patch(), geom.out_area());
        let mut cols = vec![0.0; geom.n * patch * area];
        let mut out = vec![0.0; geom.n * geom.f * area];
        let in_stride = geom.c * geom.h * geom.w;
        for s in 0..geom.n {
            let col = &mut cols[s * patch * area..(s + 1) * patch * area];
            im2col(&geom, &x.data()[s * in_stride..(s + 1) * in_stride], col);
            let o = &mut out[s * geom.f * area..(s + 1) * geom.f * area];
            for (f, row) in o.chunks_mut(area).enumerate() {
                row.fill(b.data()[f]);
            }
            gemm(geom.f, patch, area, kt.data(), false, col, false, o, 1.0);
        }
        let value = Tensor::new(vec![geom.n, geom.f, geom.ho, geom.wo], out)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                cols,
            },
        ))
    }

    pub fn relu(&mut self, input: Var) -> Result<Var> {
        self.check(input)?;
        let x = self.value(input);
        let data = x.data().iter().map(|&v| v.max(0.0)).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Relu(input)))
    }

    /// 2×2 max pooling with stride 2; odd trailing rows/columns are dropped.
    pub fn max_pool2x2(&mut self, input: Var) -> Result<Var> {
        self.check(input)?;
        let x = self.value(input);
        let s = x.shape();
        if s.len() != 4 || s[2] < 2 || s[3] < 2 {
            return Err(Error::dim(format!("max_pool2x2: input {s:?} too small")));
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (ho, wo) = (h / 2, w / 2);
        let mut out = Vec::with_capacity(n * c * ho * wo);
        let mut argmax = Vec::with_capacity(n * c * ho * wo);
        let d = x.data();
        for plane in 0..n * c {
            let base = plane * h * w;
            for i in 0..ho {
                for j in 0..wo {
                    let mut best = base + 2 * i * w + 2 * j;
                    for (di, dj) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * i + di) * w + 2 * j + dj;
                        if d[idx] > d[best] {
                            best = idx;
                        }
                    }
                    out.push(d[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor::new(vec![n, c, ho, wo], out)?;
        Ok(self.push(value, Op::MaxPool { input, argmax }))
    }

    /// `N×C×H×W → N×C` spatial mean.
    pub fn global_avg_pool(&mut self, input: Var) -> Result<Var> {
        self.check(input)?;
        let x = self.value(input);
        let s = x.shape();
        if s.len() != 4 {
            return Err(Error::dim(format!("global_avg_pool: input {s:?} is not 4-d")));
        }
        let area = s[2] * s[3];
        let data = x
            .data()
            .chunks(area)
            .map(|p| p.iter().sum::<f64>() / area as f64)
            .collect();
        let value = Tensor::new(vec![s[0], s[1]], data)?;
        Ok(self.push(value, Op::GlobalAvgPool(input)))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (x, y) = (self.value(a), self.value(b));
        if x.shape() != y.shape() {
            return Err(Error::dim(format!(
                "add: operands {:?} and {:?} differ",
                x.shape(),
                y.shape()
            )));
        }
        let data = x.data().iter().zip(y.data()).map(|(p, q)| p + q).collect();
        let value = Tensor::new(x.shape().to_vec(), data)?;
        Ok(self.push(value, Op::Add(a, b)))
    }

    /// Channel concatenation of two `N×C×H×W` tensors.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check(a)?;
        self.check(b)?;
        let (x, y) = (self.value(a), self.value(b));
        let (xs, ys) = (x.shape(), y.shape());
        if xs.len() != 4 || ys.len() != 4 || xs[0] != ys[0] || xs[2..] != ys[2..] {
            return Err(Error::dim(format!(
                "concat: operands {xs:?} and {ys:?} are incompatible"
            )));
        }
        let (n, area) = (xs[0], xs[2] * xs[3]);
        let (ca, cb) = (xs[1] * area, ys[1] * area);
        let mut data = Vec::with_capacity(n * (ca + cb));
        for s in 0..n {
            data.extend_from_slice(&x.data()[s * ca..(s + 1) * ca]);
            data.extend_from_slice(&y.data()[s * cb..(s + 1) * cb]);
        }
        let value = Tensor::new(vec![n, xs[1] + ys[1], xs[2], xs[3]], data)?;
        Ok(self.push(value, Op::Concat(a, b)))
    }

    pub fn sum(&mut self, input: Var) -> Result<Var> {
        self.check(input)?;
        let total = self.value(input).data().iter().sum();
        Ok(self.push(Tensor::scalar(total), Op::Sum(input)))
    }

    /// `Σ weights_i · input_i` with constant weights.
    pub fn weighted_sum(&mut self, input: Var, weights: Vec<f64>) -> Result<Var> {
        self.check(input)?;
        let x = self.value(input);
        if x.len() != weights.len() {
            return Err(Error::dim(format!(
                "weighted_sum: {} weights for {} values",
                weights.len(),
                x.len()
            )));
        }
        let total = x.data().iter().zip(&weights).map(|(a, b)| a * b).sum();
        Ok(self.push(Tensor::scalar(total), Op::WeightedSum { input, weights }))
    }

    /// Softmax cross-entropy averaged over rows (multi-class), or per-class
    /// sigmoid binary cross-entropy averaged over all entries (multi-label).
    pub fn loss(&mut self, scores: Var, labels: &LabelMatrix, kind: TaskKind) -> Result<Var> {
        self.check(scores)?;
        let s = self.value(scores);
        let shape = s.shape();
        if shape.len() != 2 || shape[0] != labels.rows() || shape[1] != labels.cols() {
            return Err(Error::dim(format!(
                "loss: scores {shape:?} vs labels {}x{}",
                labels.rows(),
                labels.cols()
            )));
        }
        labels.validate(kind)?;
        let (n, c) = (shape[0], shape[1]);
        let targets: Vec<f64> = labels.data().iter().map(|&v| f64::from(v)).collect();
        let mut activations = Vec::with_capacity(n * c);
        let total = match kind {
            TaskKind::MultiClass => {
                let mut acc = 0.0;
                for (row, y) in s.data().chunks(c).zip(targets.chunks(c)) {
                    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
                    let log_z = max + z.ln();
                    for (v, t) in row.iter().zip(y) {
                        activations.push((v - max).exp() / z);
                        acc -= t * (v - log_z);
                    }
                }
                acc / n as f64
            }
            TaskKind::MultiLabel => {
                let mut acc = 0.0;
                for (&v, &t) in s.data().iter().zip(&targets) {
                    activations.push(sigmoid(v));
                    acc += v.max(0.0) - v * t + (-v.abs()).exp().ln_1p();
                }
                acc / (n * c) as f64
            }
        };
        Ok(self.push(
            Tensor::scalar(total),
            Op::Loss {
                scores,
                kind,
                targets,
                activations,
            },
        ))
    }

    /// Sweeps the tape backward from `root` (a scalar node).
    pub fn backward_full(&self, root: Var) -> Result<Gradients> {
        if self.nodes.is_empty() {
            return Err(Error::State(
                "backward called with no recorded forward pass".into(),
            ));
        }
        self.check(root)?;
        if self.value(root).len() != 1 {
            return Err(Error::State(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::scalar(1.0));
        let mut visited = Vec::new();
        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            visited.push(idx);
            self.backprop_node(idx, &g, &mut grads)?;
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads, visited })
    }

    /// Runs the backward sweep and overwrites `params[i].grad` for every
    /// parameter; parameters not reached receive zeros. Trainability is
    /// ignored here.
    pub fn backward(&self, root: Var, params: &mut [Parameter]) -> Result<Gradients> {
        let grads = self.backward_full(root)?;
        for p in params.iter_mut() {
            p.zero_grad();
        }
        for (idx, node) in self.nodes.iter().enumerate() {
            if let Op::Param(pi) = node.op {
                let p = params.get_mut(pi).ok_or_else(|| {
                    Error::State(format!("tape references parameter {pi} beyond slice"))
                })?;
                if let Some(g) = &grads.grads[idx] {
                    p.grad.add_assign(g)?;
                }
            }
        }
        Ok(grads)
    }

    fn backprop_node(&self, idx: usize, g: &Tensor, grads: &mut [Option<Tensor>]) -> Result<()> {
        let node = &self.nodes[idx];
        match &node.op {
            Op::Input | Op::Param(_) => {}
            Op::Dense {
                input,
                weight,
                bias,
            } => {
                let (x, w) = (self.value(*input), self.value(*weight));
                let (n, i, o) = (x.shape()[0], x.shape()[1], w.shape()[1]);
                let mut dw = vec![0.0; i * o];
                gemm(i, n, o, x.data(), true, g.data(), false, &mut dw, 0.0);
                let mut dx = vec![0.0; n * i];
                gemm(n, o, i, g.data(), false, w.data(), true, &mut dx, 0.0);
                let mut db = vec![0.0; o];
                for row in g.data().chunks(o) {
                    for (a, b) in db.iter_mut().zip(row) {
                        *a += b;
                    }
                }
                accumulate(grads, *input, Tensor::new(vec![n, i], dx)?)?;
                accumulate(grads, *weight, Tensor::new(vec![i, o], dw)?)?;
                accumulate(grads, *bias, Tensor::new(vec![o], db)?)?;
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                cols,
            } => {
                let kt = self.value(*kernel);
                let (patch, area) = (geom.patch(), geom.out_area());
                let in_stride = geom.c * geom.h * geom.w;
                let mut dk = vec![0.0; geom.f * patch];
                let mut db = vec![0.0; geom.f];
                let mut dx = vec![0.0; geom.n * in_stride];
                let mut dcol = vec![0.0; patch * area];
                for s in 0..geom.n {
                    let go = &g.data()[s * geom.f * area..(s + 1) * geom.f * area];
                    let col = &cols[s * patch * area..(s + 1) * patch * area];
                    gemm(geom.f, area, patch, go, false, col, true, &mut dk, 1.0);
                    for (f, row) in go.chunks(area).enumerate() {
                        db[f] += row.iter().sum::<f64>();
                    }
                    gemm(patch, geom.f, area, kt.data(), true, go, false, &mut dcol, 0.0);
                    col2im(geom, &dcol, &mut dx[s * in_stride..(s + 1) * in_stride]);
                }
                let ks = kt.shape().to_vec();
                accumulate(
                    grads,
                    *input,
                    Tensor::new(vec![geom.n, geom.c, geom.h, geom.w], dx)?,
                )?;
                accumulate(grads, *kernel, Tensor::new(ks, dk)?)?;
                accumulate(grads, *bias, Tensor::new(vec![geom.f], db)?)?;
            }
            Op::Relu(input) => {
                let x = self.value(*input);
                let data = x
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&v, &d)| if v > 0.0 { d } else { 0.0 })
                    .collect();
                accumulate(grads, *input, Tensor::new(x.shape().to_vec(), data)?)?;
            }
            Op::MaxPool { input, argmax } => {
                let x = self.value(*input);
                let mut dx = Tensor::zeros(x.shape());
                let d = dx.data_mut();
                for (&src, &gv) in argmax.iter().zip(g.data()) {
                    d[src] += gv;
                }
                accumulate(grads, *input, dx)?;
            }
            Op::GlobalAvgPool(input) => {
                let x = self.value(*input);
                let s = x.shape();
                let area = s[2] * s[3];
                let scale = 1.0 / area as f64;
                let mut data = Vec::with_capacity(x.len());
                for &gv in g.data() {
                    data.extend(std::iter::repeat(gv * scale).take(area));
                }
                accumulate(grads, *input, Tensor::new(s.to_vec(), data)?)?;
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.clone())?;
                accumulate(grads, *b, g.clone())?;
            }
            Op::Concat(a, b) => {
                let (xs, ys) = (self.value(*a).shape(), self.value(*b).shape());
                let (n, area) = (xs[0], xs[2] * xs[3]);
                let (ca, cb) = (xs[1] * area, ys[1] * area);
                let mut da = Vec::with_capacity(n * ca);
                let mut dbv = Vec::with_capacity(n * cb);
                for row in g.data().chunks(ca + cb) {
                    da.extend_from_slice(&row[..ca]);
                    dbv.extend_from_slice(&row[ca..]);
                }
                let (xs, ys) = (xs.to_vec(), ys.to_vec());
                accumulate(grads, *a, Tensor::new(xs, da)?)?;
                accumulate(grads, *b, Tensor::new(ys, dbv)?)?;
            }
            Op::Sum(input) => {
                let x = self.value(*input);
                accumulate(grads, *input, Tensor::full(x.shape(), g.data()[0]))?;
            }
            Op::WeightedSum { input, weights } => {
                let x = self.value(*input);
                let gv = g.data()[0];
                let data = weights.iter().map(|w| w * gv).collect();
                accumulate(grads, *input, Tensor::new(x.shape().to_vec(), data)?)?;
            }
            Op::Loss {
                scores,
                kind,
                targets,
                activations,
            } => {
                let s = self.value(*scores).shape().to_vec();
                let denom = match kind {
                    TaskKind::MultiClass => s[0] as f64,
                    TaskKind::MultiLabel => (s[0] * s[1]) as f64,
                };
                let scale = g.data()[0] / denom;
                let data = activations
                    .iter()
                    .zip(targets)
                    .map(|(p, t)| (p - t) * scale)
                    .collect();
                accumulate(grads, *scores, Tensor::new(s, data)?)?;
            }
        }
        Ok(())
    }
}

fn accumulate(grads: &mut [Option<Tensor>], var: Var, g: Tensor) -> Result<()> {
    match &mut grads[var.0] {
        Some(existing) => existing.add_assign(&g),
        slot @ None => {
            *slot = Some(g);
            Ok(())
        }
    }
}

pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Row-wise softmax of an `N×C` score matrix.
pub fn softmax_rows(scores: &[f64], cols: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(scores.len());
    for row in scores.chunks(cols) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = row.iter().map(|v| (v - max).exp()).sum();
        out.extend(row.iter().map(|v| (v - max).exp() / z));
    }
    out
}

fn im2col(g: &ConvGeom, x: &[f64], cols: &mut [f64]) {
    let area = g.out_area();
    for c in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let r = (c * g.k + ki) * g.k + kj;
                let row = &mut cols[r * area..(r + 1) * area];
                for oi in 0..g.ho {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    let dst = &mut row[oi * g.wo..(oi + 1) * g.wo];
                    if ii < 0 || ii >= g.h as isize {
                        dst.fill(0.0);
                        continue;
                    }
                    let src = &x[(c * g.h + ii as usize) * g.w..(c * g.h + ii as usize + 1) * g.w];
                    for (oj, d) in dst.iter_mut().enumerate() {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        *d = if jj < 0 || jj >= g.w as isize {
                            0.0
                        } else {
                            src[jj as usize]
                        };
                    }
                }
            }
        }
    }
}

fn col2im(g: &ConvGeom, cols: &[f64], dx: &mut [f64]) {
    let area = g.out_area();
    for c in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let r = (c * g.k + ki) * g.k + kj;
                let row = &cols[r * area..(r + 1) * area];
                for oi in 0..g.ho {
                    let ii = (oi * g.stride + ki) as isize - g.pad as isize;
                    if ii < 0 || ii >= g.h as isize {
                        continue;
                    }
                    let base = (c * g.h + ii as usize) * g.w;
                    for oj in 0..g.wo {
                        let jj = (oj * g.stride + kj) as isize - g.pad as isize;
                        if jj >= 0 && jj < g.w as isize {
                            dx[base + jj as usize] += row[oi * g.wo + oj];
                        }
                    }
                }
            }
        }
    }
}

/// `C = A·B + beta·C` for row-major `A: m×k`, `B: k×n`, `C: m×n`; the
/// `*_t` flags mean the slice stores the transpose of the operand.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    beta: f64,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    let (rsa, csa) = if a_t { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_t { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: the assertion above bounds every index the strides can reach.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}
