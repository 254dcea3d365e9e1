use super::{dims2, dims3, gemm, Backward, NdError, Rng, Tape, Tensor, Var};

/// Forward-pass mode for layers that behave differently while training.
#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

pub const BATCHNORM_EPS: f64 = 1e-5;
pub const BATCHNORM_MOMENTUM: f64 = 0.1;

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn silu(x: f64) -> f64 {
    x * sigmoid(x)
}

/// Inverse of softplus: `ln(e^y - 1)` for `y > 0`.
pub fn softplus_inv(y: f64) -> f64 {
    y + (-(-y).exp_m1()).ln()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Unary {
    Exp,
    Softplus,
    Silu,
    Sigmoid,
    Neg,
}

impl Unary {
    fn apply(self, x: f64) -> f64 {
        match self {
            Unary::Exp => x.exp(),
            Unary::Softplus => softplus(x),
            Unary::Silu => silu(x),
            Unary::Sigmoid => sigmoid(x),
            Unary::Neg => -x,
        }
    }

    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Unary::Exp => y,
            Unary::Softplus => sigmoid(x),
            Unary::Silu => {
                let s = sigmoid(x);
                s * (1.0 + x * (1.0 - s))
            }
            Unary::Sigmoid => y * (1.0 - y),
            Unary::Neg => -1.0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Sub,
    Mul,
}

/// How an operand's elements line up with the output.
#[derive(Clone, Copy, Debug, PartialEq)]
enum Bcast {
    Same,
    Scalar,
    /// rank-1 `[C]` over `[N×C]` (inner = 1) or `[B×C×L]` (inner = L)
    Channel { c: usize, inner: usize },
}

impl Bcast {
    fn of(small: &[usize], big: &[usize]) -> Option<Self> {
        if small == big {
            return Some(Bcast::Same);
        }
        if small.iter().product::<usize>() == 1 {
            return Some(Bcast::Scalar);
        }
        match (small, big) {
            (&[c], &[_, c2]) if c == c2 => Some(Bcast::Channel { c, inner: 1 }),
            (&[c], &[_, c2, l]) if c == c2 => Some(Bcast::Channel { c, inner: l }),
            _ => None,
        }
    }

    #[inline]
    fn index(self, off: usize) -> usize {
        match self {
            Bcast::Same => off,
            Bcast::Scalar => 0,
            Bcast::Channel { c, inner } => (off / inner) % c,
        }
    }

    fn reduce(self, g: &[f64], shape: &[usize]) -> Tensor {
        if self == Bcast::Same {
            return Tensor::new(shape, g.to_vec()).expect("shape");
        }
        let mut out = Tensor::zeros(shape).into_data();
        for (off, v) in g.iter().enumerate() {
            out[self.index(off)] += v;
        }
        Tensor::new(shape, out).expect("shape")
    }
}

fn broadcast_pair(a: &[usize], b: &[usize], op: &str) -> Result<(Vec<usize>, Bcast, Bcast), NdError> {
    let na: usize = a.iter().product();
    let nb: usize = b.iter().product();
    let (big, ba, bb) = if na >= nb {
        (a, Some(Bcast::Same), Bcast::of(b, a))
    } else {
        (b, Bcast::of(a, b), Some(Bcast::Same))
    };
    match (ba, bb) {
        (Some(x), Some(y)) => Ok((big.to_vec(), x, y)),
        _ => Err(NdError::shape_mismatch(op, a, b)),
    }
}

struct BinaryOp {
    kind: Binary,
    ba: Bcast,
    bb: Bcast,
}

impl Backward for BinaryOp {
    fn name(&self) -> &'static str {
        "binary"
    }

    fn backward(&self, g: &Tensor, inputs: &[&Tensor], _out: &Tensor) -> Result<Vec<Option<Tensor>>, NdError> {
        let (a, b) = (inputs[0], inputs[1]);
        let gd = g.data();
        let (ga, gb): (Vec<f64>, Vec<f64>) = match self.kind {
            Binary::Add => (gd.to_vec(), gd.to_vec()),
            Binary::Sub => (gd.to_vec(), gd.iter().map(|v| -v).collect()),
            Binary::Mul => gd
                .iter()
                .enumerate()
                .map(|(i, gv)| {
                    let av = a.data()[self.ba.index(i)];
                    let bv = b.data()[self.bb.index(i)];
                    (gv * bv, gv * av)
                })
                .unzip(),
        };
        Ok(vec![
            Some(self.ba.reduce(&ga, a.shape())),
            Some(self.bb.reduce(&gb, b.shape())),
        ])
    }
}

struct UnaryOp(Unary);

impl Backward for UnaryOp {
    fn name(&self) -> &'static str {
        "unary"
    }

    fn backward(&self, g: &Tensor, inputs: &[&Tensor], out: &Tensor) -> Result<Vec<Option<Tensor>>, NdError> {
        let x = inputs[0];
        let data = g
            .data()
            .iter()
            .zip(x.data().iter().zip(out.data()))
            .map(|(gv, (&xv, &yv))| gv * self.0.derivative(xv, yv))
            .collect();
        Ok(vec![Some(Tensor::new(x.shape(), data)?)])
    }
}

struct ScaleOp(f64);

impl Backward for ScaleOp {
    fn name(&self) -> &'static str {
        "scale"
    }

    fn backward(&self, g: &Tensor, _: &[&Tensor], _: &Tensor) -> Result<Vec<Option<Tensor>>, NdError> {
        Ok(vec![Some(g.map(|v| v * self.0))])
    }
}

struct MatmulOp;

impl Backward for MatmulOp {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn backward(&self, g: &Tensor, inputs: &[&Tensor], _: &Tensor) -> Result<Vec<Option<Tensor>>, NdError> {
        let (a, b) = (inputs[0], inputs[1]);
        let ga = g.matmul(&b.transpose2()?)?;
        let gb = a.transpose2()?.matmul(g)?;
        Ok(vec![Some(ga), Some(gb)])
    }
}

fn bmm_raw(a: &[f64], b: &[f64], g: usize, m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; g * m * n];
    for i in 0..g {
        gemm(
            &a[i * m * k..(i + 1) * m * k],
            &b[i * k * n..(i + 1) * k * n],
            &mut out[i * m * n..(i + 1) * m * n],
            m,
            k,
            n,
        );
    }
    out
}

fn batch_transpose(t: &Tensor) -> Result<Tensor, NdError> {
    t.permute(&[0, 2, 1])
}

struct BmmOp;

impl Backward for BmmOp {
    fn name(&self) -> &'static str {
        "bmm"
    }

    fn backward(&self, g: &Tensor, inputs: &[&Tensor], _: &Tensor) -> Result<Vec<Option<Tensor>>, NdError> {
        let (a, b) = (inputs[0], inputs[1]);
        let (bs, m, k) = dims3(a, "bmm")?;
        let n = b.shape()[2];
        let bt = batch_transpose(b)?;
        let at = batch_transpose(a)?;
        let ga = bmm_raw(g.data(), bt.data(), bs, m, n, k);
        let gb = bmm_raw(at.data(), g.data(), bs, k, m, n);
        Ok(vec![
            Some(Tensor::new(a.shape(), ga)?),
            Some(Tensor::new(b.shape(), gb)?),
        ])
    }
}

struct ReshapeOp;

impl Backward for ReshapeOp {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, g: &Tensor, inputs: &[&Tensor], _: &Tensor) -> Result<Vec<Option<Tensor>>, NdError> {
        Ok(vec![Some(g.reshape(inputs[0].shape())?)])
    }
}

struct PermuteOp {
    inverse: Vec<usize>,
}

impl Backward for PermuteOp {
    fn name(&self) -> &'static str {
        "permute"
    }

    fn backward(&self, g: &Tensor, _: &[&Tensor], _: &Tensor) -> Result<Vec<Option<Tensor>>, NdError> {
        Ok(vec![Some(g.permute(&self.inverse)?)])
    }
}

struct NarrowOp {
    axis: usize,
    start: usize,
}

#[allow(clippy::too_many_arguments)]
/// Copies a `[outer, len, inner]` block view between tensors that differ
/// only along `axis`.
fn copy_along_axis(
    src: &[f64],
    dst: &mut [f64],
    outer: usize,
    inner: usize,
    src_axis: usize,
    dst_axis: usize,
    src_start: usize,
    dst_start: usize,
    len: usize,
) {
    for o in 0..outer {
        let s = (o * src_axis + src_start) * inner;
        let d = (o * dst_axis + dst_start) * inner;
        dst[d..d + len * inner].copy_from_slice(&src[s..s + len * inner]);
    }
}

impl Backward for NarrowOp {
    fn name(&self) -> &'static str {
        "narrow"
    }

    fn backward(&self, g: &Tensor, inputs: &[&Tensor], _: &Tensor) -> Result<Vec<Option<Tensor>>, NdError> {
        let shape = inputs[0].shape();
        let outer: usize = shape[..self.axis].iter().product();
        let inner: usize = shape[self.axis + 1..].iter().product();
        let len = g.shape()[self.axis];
        let mut out = vec![0.0; inputs[0].len()];
        copy_along_axis(g.data(), &mut out, outer, inner, len, shape[self.axis], 0, self.start, len);
        Ok(vec![Some(Tensor::new(shape, out)?)])
    }
}

struct SumOp;

impl Backward for SumOp {
    fn name(&self) -> &'static str {
        "sum"
    }

    fn backward(&self, g: &Tensor, inputs: &[&Tensor], _: &Tensor) -> Result<Vec<Option<Tensor>>, NdError> {
        Ok(vec![Some(Tensor::full(inputs[0].shape(), g.data()[0]))])
    }
}

struct MeanAxisOp {
    axis: usize,
}

impl Backward for MeanAxisOp {
    fn name(&self) -> &'static str {
        "mean_axis"
    }

    fn backward(&self, g: &Tensor, inputs: &[&Tensor], _: &Tensor) -> Result<Vec<Option<Tensor>>, NdError> {
        let shape = inputs[0].shape();
        let outer: usize = shape[..self.axis].iter().product();
        let n = shape[self.axis];
        let inner: usize = shape[self.axis + 1..].iter().product();
        let mut out = vec![0.0; inputs[0].len()];
        for o in 0..outer {
            for j in 0..n {
                for i in 0..inner {
                    out[(o * n + j) * inner + i] = g.data()[o * inner + i] / n as f64;
                }
            }
        }
        Ok(vec![Some(Tensor::new(shape, out)?)])
    }
}

struct Conv1dOp {
    pad_left: usize,
}

impl Backward for Conv1dOp {
    fn name(&self) -> &'static str {
        "conv1d"
    }

    fn backward(&self, g: &Tensor, inputs: &[&Tensor], _: &Tensor) -> Result<Vec<Option<Tensor>>, NdError> {
        let (x, w) = (inputs[0], inputs[1]);
        let (b, cin, l) = dims3(x, "conv1d")?;
        let (cout, _, k) = dims3(w, "conv1d")?;
        let lout = g.shape()[2];
        let (xd, wd, gd) = (x.data(), w.data(), g.data());
        let mut gx = vec![0.0; xd.len()];
        let mut gw = vec![0.0; wd.len()];
        let mut gb = vec![0.0; cout];
        for bi in 0..b {
            for o in 0..cout {
                let grow = &gd[(bi * cout + o) * lout..(bi * cout + o + 1) * lout];
                gb[o] += grow.iter().sum::<f64>();
                for c in 0..cin {
                    let xrow = &xd[(bi * cin + c) * l..(bi * cin + c + 1) * l];
                    let gxrow = (bi * cin + c) * l;
                    for j in 0..k {
                        let widx = (o * cin + c) * k + j;
                        let wv = wd[widx];
                        let mut acc = 0.0;
                        for (t, &gv) in grow.iter().enumerate() {
                            let src = t + j;
                            if src < self.pad_left || src - self.pad_left >= l {
                                continue;
                            }
                            let s = src - self.pad_left;
                            acc += gv * xrow[s];
                            gx[gxrow + s] += gv * wv;
                        }
                        gw[widx] += acc;
                    }
                }
            }
        }
        Ok(vec![
            Some(Tensor::new(x.shape(), gx)?),
            Some(Tensor::new(w.shape(), gw)?),
            Some(Tensor::new(&[cout], gb)?),
        ])
    }
}

struct DepthwiseOp {
    left_pad: usize,
}

impl Backward for DepthwiseOp {
    fn name(&self) -> &'static str {
        "depthwise_conv1d"
    }

    fn backward(&self, g: &Tensor, inputs: &[&Tensor], _: &Tensor) -> Result<Vec<Option<Tensor>>, NdError> {
        let (x, w) = (inputs[0], inputs[1]);
        let (b, c, l) = dims3(x, "depthwise_conv1d")?;
        let k = w.shape()[1];
        let lout = g.shape()[2];
        let (xd, wd, gd) = (x.data(), w.data(), g.data());
        let mut gx = vec![0.0; xd.len()];
        let mut gw = vec![0.0; wd.len()];
        let mut gb = vec![0.0; c];
        for bi in 0..b {
            for ch in 0..c {
                let row = (bi * c + ch) * l;
                let grow = &gd[(bi * c + ch) * lout..(bi * c + ch + 1) * lout];
                gb[ch] += grow.iter().sum::<f64>();
                for (t, &gv) in grow.iter().enumerate() {
                    for j in 0..k {
                        let src = t + j;
                        if src < self.left_pad || src - self.left_pad >= l {
                            continue;
                        }
                        let s = src - self.left_pad;
                        gw[ch * k + j] += gv * xd[row + s];
                        gx[row + s] += gv * wd[ch * k + j];
                    }
                }
            }
        }
        Ok(vec![
            Some(Tensor::new(x.shape(), gx)?),
            Some(Tensor::new(w.shape(), gw)?),
            Some(Tensor::new(&[c], gb)?),
        ])
    }
}

struct MaxPoolOp {
    argmax: Vec<usize>,
}

impl Backward for MaxPoolOp {
    fn name(&self) -> &'static str {
        "maxpool1d"
    }

    fn backward(&self, g: &Tensor, inputs: &[&Tensor], _: &Tensor) -> Result<Vec<Option<Tensor>>, NdError> {
        let mut gx = vec![0.0; inputs[0].len()];
        for (gv, &src) in g.data().iter().zip(&self.argmax) {
            gx[src] += gv;
        }
        Ok(vec![Some(Tensor::new(inputs[0].shape(), gx)?)])
    }
}

/// Running per-channel statistics of a batch-norm layer.
#[derive(Clone, Debug, PartialEq)]
pub struct RunningStats {
    pub mean: Tensor,
    pub var: Tensor,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        Self {
            mean: Tensor::zeros(&[channels]),
            var: Tensor::ones(&[channels]),
        }
    }
}

struct BatchNormOp {
    xhat: Vec<f64>,
    inv_std: Vec<f64>,
    train: bool,
}

impl Backward for BatchNormOp {
    fn name(&self) -> &'static str {
        "batchnorm1d"
    }

    fn backward(&self, g: &Tensor, inputs: &[&Tensor], _: &Tensor) -> Result<Vec<Option<Tensor>>, NdError> {
        let (x, gamma) = (inputs[0], inputs[1]);
        let (b, c, l) = dims3(x, "batchnorm1d")?;
        let n = (b * l) as f64;
        let gd = g.data();
        let mut gx = vec![0.0; x.len()];
        let mut ggamma = vec![0.0; c];
        let mut gbeta = vec![0.0; c];
        for ch in 0..c {
            let idx = |bi: usize, t: usize| (bi * c + ch) * l + t;
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for bi in 0..b {
                for t in 0..l {
                    let i = idx(bi, t);
                    sum_g += gd[i];
                    sum_gx += gd[i] * self.xhat[i];
                }
            }
            ggamma[ch] = sum_gx;
            gbeta[ch] = sum_g;
            let gm = gamma.data()[ch];
            let is = self.inv_std[ch];
            for bi in 0..b {
                for t in 0..l {
                    let i = idx(bi, t);
                    gx[i] = if self.train {
                        gm * is / n * (n * gd[i] - sum_g - self.xhat[i] * sum_gx)
                    } else {
                        gm * is * gd[i]
                    };
                }
            }
        }
        Ok(vec![
            Some(Tensor::new(x.shape(), gx)?),
            Some(Tensor::new(&[c], ggamma)?),
            Some(Tensor::new(&[c], gbeta)?),
        ])
    }
}

struct MaskOp {
    mask: Vec<f64>,
}

impl Backward for MaskOp {
    fn name(&self) -> &'static str {
        "dropout"
    }

    fn backward(&self, g: &Tensor, inputs: &[&Tensor], _: &Tensor) -> Result<Vec<Option<Tensor>>, NdError> {
        let data = g.data().iter().zip(&self.mask).map(|(a, m)| a * m).collect();
        Ok(vec![Some(Tensor::new(inputs[0].shape(), data)?)])
    }
}

struct SoftmaxOp;

impl Backward for SoftmaxOp {
    fn name(&self) -> &'static str {
        "softmax"
    }

    fn backward(&self, g: &Tensor, _: &[&Tensor], y: &Tensor) -> Result<Vec<Option<Tensor>>, NdError> {
        let n = *y.shape().last().unwrap_or(&1);
        let mut out = vec![0.0; y.len()];
        for ((orow, yrow), grow) in out
            .chunks_mut(n)
            .zip(y.data().chunks(n))
            .zip(g.data().chunks(n))
        {
            let dot: f64 = yrow.iter().zip(grow).map(|(a, b)| a * b).sum();
            for ((o, &yv), &gv) in orow.iter_mut().zip(yrow).zip(grow) {
                *o = yv * (gv - dot);
            }
        }
        Ok(vec![Some(Tensor::new(y.shape(), out)?)])
    }
}

struct CrossEntropyOp {
    probs: Vec<f64>,
    labels: Vec<usize>,
}

impl Backward for CrossEntropyOp {
    fn name(&self) -> &'static str {
        "softmax_cross_entropy"
    }

    fn backward(&self, g: &Tensor, inputs: &[&Tensor], _: &Tensor) -> Result<Vec<Option<Tensor>>, NdError> {
        let (b, k) = dims2(inputs[0], "softmax_cross_entropy")?;
        let scale = g.data()[0] / b as f64;
        let mut out = self.probs.clone();
        for (i, &lab) in self.labels.iter().enumerate() {
            out[i * k + lab] -= 1.0;
        }
        out.iter_mut().for_each(|v| *v *= scale);
        Ok(vec![Some(Tensor::new(&[b, k], out)?)])
    }
}

fn softmax_rows(data: &[f64], n: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(data.len());
    for row in data.chunks(n) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
        let s: f64 = exps.iter().sum();
        out.extend(exps.iter().map(|e| e / s));
    }
    out
}

impl Tape {
    /// Pointwise unary function.
    pub fn unary(&mut self, op: Unary, a: Var) -> Var {
        let value = self.value(a).map(|x| op.apply(x));
        self.push_op(value, &[a], Box::new(UnaryOp(op)))
    }

    /// Pointwise binary function with the limited broadcasting rules:
    /// equal shapes, a one-element operand, or a rank-1 per-channel vector
    /// against `[N×C]` / `[B×C×L]`.
    pub fn binary(&mut self, op: Binary, a: Var, b: Var) -> Result<Var, NdError> {
        let (av, bv) = (self.value(a), self.value(b));
        let (shape, ba, bb) = broadcast_pair(av.shape(), bv.shape(), "elementwise")?;
        let n: usize = shape.iter().product();
        let (ad, bd) = (av.data(), bv.data());
        let data = (0..n)
            .map(|i| {
                let (x, y) = (ad[ba.index(i)], bd[bb.index(i)]);
                match op {
                    Binary::Add => x + y,
                    Binary::Sub => x - y,
                    Binary::Mul => x * y,
                }
            })
            .collect();
        let value = Tensor::new(&shape, data)?;
        Ok(self.push_op(value, &[a, b], Box::new(BinaryOp { kind: op, ba, bb })))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        self.binary(Binary::Add, a, b)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        self.binary(Binary::Sub, a, b)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        self.binary(Binary::Mul, a, b)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.unary(Unary::Exp, a)
    }

    pub fn softplus(&mut self, a: Var) -> Var {
        self.unary(Unary::Softplus, a)
    }

    pub fn silu(&mut self, a: Var) -> Var {
        self.unary(Unary::Silu, a)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.unary(Unary::Sigmoid, a)
    }

    pub fn neg(&mut self, a: Var) -> Var {
        self.unary(Unary::Neg, a)
    }

    /// Multiplies by a constant.
    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a).map(|x| x * c);
        self.push_op(value, &[a], Box::new(ScaleOp(c)))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        let value = self.value(a).matmul(self.value(b))?;
        Ok(self.push_op(value, &[a, b], Box::new(MatmulOp)))
    }

    /// Batched product `[G×m×k] · [G×k×n] → [G×m×n]`.
    pub fn bmm(&mut self, a: Var, b: Var) -> Result<Var, NdError> {
        let (av, bv) = (self.value(a), self.value(b));
        let (g, m, k) = dims3(av, "bmm")?;
        let (g2, k2, n) = dims3(bv, "bmm")?;
        if g != g2 || k != k2 {
            return Err(NdError::shape_mismatch("bmm", av.shape(), bv.shape()));
        }
        let value = Tensor::new(&[g, m, n], bmm_raw(av.data(), bv.data(), g, m, k, n))?;
        Ok(self.push_op(value, &[a, b], Box::new(BmmOp)))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var, NdError> {
        let value = self.value(a).reshape(shape)?;
        Ok(self.push_op(value, &[a], Box::new(ReshapeOp)))
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var, NdError> {
        let value = self.value(a).permute(axes)?;
        let mut inverse = vec![0; axes.len()];
        for (i, &ax) in axes.iter().enumerate() {
            inverse[ax] = i;
        }
        Ok(self.push_op(value, &[a], Box::new(PermuteOp { inverse })))
    }

    /// Slice `start..start+len` along `axis`.
    pub fn narrow(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var, NdError> {
        let av = self.value(a);
        let shape = av.shape();
        if axis >= shape.len() || start + len > shape[axis] {
            return Err(NdError::Dimension(format!(
                "narrow({axis}, {start}, {len}) out of range for shape {shape:?}"
            )));
        }
        let outer: usize = shape[..axis].iter().product();
        let inner: usize = shape[axis + 1..].iter().product();
        let mut out_shape = shape.to_vec();
        out_shape[axis] = len;
        let mut data = vec![0.0; outer * len * inner];
        copy_along_axis(av.data(), &mut data, outer, inner, shape[axis], len, start, 0, len);
        let value = Tensor::new(&out_shape, data)?;
        Ok(self.push_op(value, &[a], Box::new(NarrowOp { axis, start })))
    }

    /// Sum of all elements as a scalar.
    pub fn sum(&mut self, a: Var) -> Var {
        let value = Tensor::scalar(self.value(a).sum());
        self.push_op(value, &[a], Box::new(SumOp))
    }

    /// Mean over one axis, which is removed from the shape.
    pub fn mean_axis(&mut self, a: Var, axis: usize) -> Result<Var, NdError> {
        let av = self.value(a);
        let shape = av.shape();
        if axis >= shape.len() || shape[axis] == 0 {
            return Err(NdError::Dimension(format!("mean over axis {axis} of shape {shape:?}")));
        }
        let outer: usize = shape[..axis].iter().product();
        let n = shape[axis];
        let inner: usize = shape[axis + 1..].iter().product();
        let mut data = vec![0.0; outer * inner];
        for o in 0..outer {
            for j in 0..n {
                for i in 0..inner {
                    data[o * inner + i] += av.data()[(o * n + j) * inner + i];
                }
            }
        }
        data.iter_mut().for_each(|v| *v /= n as f64);
        let mut out_shape = shape.to_vec();
        out_shape.remove(axis);
        let value = Tensor::new(&out_shape, data)?;
        Ok(self.push_op(value, &[a], Box::new(MeanAxisOp { axis })))
    }

    /// Dense 1-D convolution: `x[B×Cin×L]`, `w[Cout×Cin×K]`, `bias[Cout]`,
    /// stride 1, zero padding on both ends.
    pub fn conv1d(&mut self, x: Var, w: Var, bias: Var, pad_left: usize, pad_right: usize) -> Result<Var, NdError> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(bias));
        let (b, cin, l) = dims3(xv, "conv1d")?;
        let (cout, cin2, k) = dims3(wv, "conv1d")?;
        if cin != cin2 || bv.shape() != [cout] {
            return Err(NdError::Dimension(format!(
                "conv1d: input {:?}, weight {:?}, bias {:?}",
                xv.shape(),
                wv.shape(),
                bv.shape()
            )));
        }
        let padded = l + pad_left + pad_right;
        if k > padded {
            return Err(NdError::Degenerate(format!("conv1d kernel {k} longer than padded input {padded}")));
        }
        let lout = padded - k + 1;
        let (xd, wd, bd) = (xv.data(), wv.data(), bv.data());
        let mut out = vec![0.0; b * cout * lout];
        for bi in 0..b {
            for o in 0..cout {
                let orow = &mut out[(bi * cout + o) * lout..(bi * cout + o + 1) * lout];
                orow.iter_mut().for_each(|v| *v = bd[o]);
                for c in 0..cin {
                    let xrow = &xd[(bi * cin + c) * l..(bi * cin + c + 1) * l];
                    for j in 0..k {
                        let wv = wd[(o * cin + c) * k + j];
                        // output t reads padded index t + j = source s + pad_left
                        let t_lo = pad_left.saturating_sub(j);
                        let t_hi = (l + pad_left).saturating_sub(j).min(lout);
                        for t in t_lo..t_hi {
                            orow[t] += wv * xrow[t + j - pad_left];
                        }
                    }
                }
            }
        }
        let value = Tensor::new(&[b, cout, lout], out)?;
        Ok(self.push_op(value, &[x, w, bias], Box::new(Conv1dOp { pad_left })))
    }

    /// Per-channel 1-D convolution over `x[B×C×L]` with kernels `w[C×K]`,
    /// left-padded by `left_pad` zeros; output truncated to `L` samples.
    ///
    /// With `left_pad = K − 1` the filter is causal:
    /// `y[b,c,t] = bias[c] + Σ_j w[c,j]·x[b,c,t+j−K+1]`.
    pub fn depthwise_conv1d(&mut self, x: Var, w: Var, bias: Var, left_pad: usize) -> Result<Var, NdError> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(bias));
        let (b, c, l) = dims3(xv, "depthwise_conv1d")?;
        let (c2, k) = dims2(wv, "depthwise_conv1d")?;
        if c != c2 || bv.shape() != [c] {
            return Err(NdError::Dimension(format!(
                "depthwise_conv1d: input {:?}, weight {:?}, bias {:?}",
                xv.shape(),
                wv.shape(),
                bv.shape()
            )));
        }
        if k > l + left_pad {
            return Err(NdError::Degenerate(format!(
                "depthwise kernel {k} longer than padded input {}",
                l + left_pad
            )));
        }
        let lout = (l + left_pad + 1 - k).min(l);
        let (xd, wd, bd) = (xv.data(), wv.data(), bv.data());
        let mut out = vec![0.0; b * c * lout];
        for bi in 0..b {
            for ch in 0..c {
                let xrow = &xd[(bi * c + ch) * l..(bi * c + ch + 1) * l];
                let orow = &mut out[(bi * c + ch) * lout..(bi * c + ch + 1) * lout];
                for (t, o) in orow.iter_mut().enumerate() {
                    let mut acc = bd[ch];
                    for j in 0..k {
                        let src = t + j;
                        if src >= left_pad && src - left_pad < l {
                            acc += wd[ch * k + j] * xrow[src - left_pad];
                        }
                    }
                    *o = acc;
                }
            }
        }
        let value = Tensor::new(&[b, c, lout], out)?;
        Ok(self.push_op(value, &[x, w, bias], Box::new(DepthwiseOp { left_pad })))
    }

    /// Non-overlapping max pooling over the last axis of `[B×C×L]`;
    /// a trailing remainder shorter than `k` is dropped.
    pub fn maxpool1d(&mut self, x: Var, k: usize) -> Result<Var, NdError> {
        let xv = self.value(x);
        let (b, c, l) = dims3(xv, "maxpool1d")?;
        if k == 0 || l / k == 0 {
            return Err(NdError::Degenerate(format!("maxpool window {k} over length {l}")));
        }
        let lout = l / k;
        let mut out = Vec::with_capacity(b * c * lout);
        let mut argmax = Vec::with_capacity(b * c * lout);
        for row in 0..b * c {
            for t in 0..lout {
                let base = row * l + t * k;
                let (mut best, mut best_i) = (f64::NEG_INFINITY, base);
                for i in base..base + k {
                    if xv.data()[i] > best {
                        best = xv.data()[i];
                        best_i = i;
                    }
                }
                out.push(best);
                argmax.push(best_i);
            }
        }
        let value = Tensor::new(&[b, c, lout], out)?;
        Ok(self.push_op(value, &[x], Box::new(MaxPoolOp { argmax })))
    }

    /// Batch normalization over `[B×C×L]` per channel.
    ///
    /// Train mode normalizes with the batch statistics and returns updated
    /// running statistics (momentum 0.1, unbiased variance); eval mode
    /// normalizes with `running` and returns `None`.
    pub fn batchnorm1d(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running: &RunningStats,
        mode: Mode,
    ) -> Result<(Var, Option<RunningStats>), NdError> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let (b, c, l) = dims3(xv, "batchnorm1d")?;
        if gv.shape() != [c] || bv.shape() != [c] || running.mean.shape() != [c] {
            return Err(NdError::Dimension(format!(
                "batchnorm1d: input {:?} with gamma {:?}, beta {:?}",
                xv.shape(),
                gv.shape(),
                bv.shape()
            )));
        }
        let n = b * l;
        let train = mode == Mode::Train;
        if train && n < 2 {
            return Err(NdError::Degenerate(format!("batchnorm in train mode over {n} values per channel")));
        }
        let xd = xv.data();
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        if train {
            for ch in 0..c {
                let vals = (0..b).flat_map(|bi| xd[(bi * c + ch) * l..(bi * c + ch + 1) * l].iter());
                let m = vals.clone().sum::<f64>() / n as f64;
                mean[ch] = m;
                var[ch] = vals.map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
            }
        } else {
            mean.copy_from_slice(running.mean.data());
            var.copy_from_slice(running.var.data());
        }
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BATCHNORM_EPS).sqrt()).collect();
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        for (i, (&xvv, (xh, o))) in xd.iter().zip(xhat.iter_mut().zip(out.iter_mut())).enumerate() {
            let ch = (i / l) % c;
            *xh = (xvv - mean[ch]) * inv_std[ch];
            *o = gv.data()[ch] * *xh + bv.data()[ch];
        }
        let updated = train.then(|| {
            let unbias = n as f64 / (n - 1) as f64;
            RunningStats {
                mean: Tensor::from_fn(&[c], |ch| {
                    (1.0 - BATCHNORM_MOMENTUM) * running.mean.data()[ch] + BATCHNORM_MOMENTUM * mean[ch]
                }),
                var: Tensor::from_fn(&[c], |ch| {
                    (1.0 - BATCHNORM_MOMENTUM) * running.var.data()[ch] + BATCHNORM_MOMENTUM * var[ch] * unbias
                }),
            }
        });
        let value = Tensor::new(xv.shape(), out)?;
        let var_out = self.push_op(value, &[x, gamma, beta], Box::new(BatchNormOp { xhat, inv_std, train }));
        Ok((var_out, updated))
    }

    /// Inverted dropout: in train mode each element is zeroed with
    /// probability `p` and survivors scaled by `1/(1−p)`; identity in eval.
    pub fn dropout(&mut self, x: Var, p: f64, mode: Mode, rng: &mut Rng) -> Result<Var, NdError> {
        if !(0.0..1.0).contains(&p) {
            return Err(NdError::Parameter(format!("dropout probability {p} outside [0, 1)")));
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(x);
        }
        let keep = 1.0 / (1.0 - p);
        let mask: Vec<f64> = (0..self.value(x).len())
            .map(|_| if rng.uniform() < p { 0.0 } else { keep })
            .collect();
        let xv = self.value(x);
        let data = xv.data().iter().zip(&mask).map(|(a, m)| a * m).collect();
        let value = Tensor::new(xv.shape(), data)?;
        Ok(self.push_op(value, &[x], Box::new(MaskOp { mask })))
    }

    /// Softmax over the last axis.
    pub fn softmax(&mut self, a: Var) -> Result<Var, NdError> {
        let av = self.value(a);
        let n = *av.shape().last().ok_or_else(|| NdError::Dimension("softmax of a scalar".into()))?;
        let value = Tensor::new(av.shape(), softmax_rows(av.data(), n))?;
        Ok(self.push_op(value, &[a], Box::new(SoftmaxOp)))
    }

    /// Mean negative log-likelihood of `labels` under row-wise softmax of
    /// `logits[B×K]`, in log-sum-exp form.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var, NdError> {
        let lv = self.value(logits);
        let (b, k) = dims2(lv, "softmax_cross_entropy")?;
        if labels.len() != b {
            return Err(NdError::Data(format!("{} labels for {b} rows of logits", labels.len())));
        }
        if let Some(bad) = labels.iter().find(|&&y| y >= k) {
            return Err(NdError::Data(format!("label {bad} out of range for {k} classes")));
        }
        let mut loss = 0.0;
        for (row, &y) in lv.data().chunks(k).zip(labels) {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            loss += lse - row[y];
        }
        let probs = softmax_rows(lv.data(), k);
        let value = Tensor::scalar(loss / b as f64);
        Ok(self.push_op(
            value,
            &[logits],
            Box::new(CrossEntropyOp {
                probs,
                labels: labels.to_vec(),
            }),
        ))
    }
}
