//! Reverse-mode automatic differentiation over small dense tensors.
//!
//! The graph is an eager tape: adding an operation computes its value
//! immediately and records enough to run [`Graph::backward`] later. Values
//! are plain [`RealTensor`]s; complex images travel as stacked `[2, h, w]`
//! tensors (channel 0 real, channel 1 imaginary), matching the two-channel
//! convention the networks train under.
//!
//! Determinism: node evaluation order is insertion order, every reduction
//! runs row-major sequential, and backward walks the tape in strict reverse.
//! Replaying a graph with identical inputs is bit-identical.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::RealTensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(pub usize);

/// Data-consistency weight: soft blend or hard replacement.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DcLambda<T> {
    /// Sampled entries become `(pred + lambda * measured) / (1 + lambda)`.
    Soft(T),
    /// Sampled entries copy `measured` exactly.
    Hard,
}

impl<T: Scalar> DcLambda<T> {
    /// Weight on `measured` at sampled locations.
    fn measured_weight(self) -> T {
        match self {
            DcLambda::Soft(l) => l / (T::one() + l),
            DcLambda::Hard => T::one(),
        }
    }

    /// Weight on `pred` at sampled locations.
    fn pred_weight(self) -> T {
        match self {
            DcLambda::Soft(l) => T::one() / (T::one() + l),
            DcLambda::Hard => T::zero(),
        }
    }
}

enum Op<T> {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Relu(NodeId),
    /// Same-padding 2D convolution: input `[ci,h,w]`, weight `[co,ci,k,k]`,
    /// bias `[co]`.
    Conv2d {
        input: NodeId,
        weight: NodeId,
        bias: NodeId,
    },
    /// Unitary 2D FFT of a stacked `[2,h,w]` complex image.
    Fft2 {
        input: NodeId,
        inverse: bool,
    },
    /// Elementwise multiply of every channel by a constant `[h,w]` plane.
    MaskMul {
        input: NodeId,
        mask: Arc<RealTensor<T>>,
    },
    /// K-space backfill: keep `pred` where the mask is 0, blend toward
    /// `measured` where it is 1.
    DataConsistency {
        pred: NodeId,
        measured: NodeId,
        mask: Arc<RealTensor<T>>,
        lambda: DcLambda<T>,
    },
    /// Channel concatenation of `[c_i,h,w]` tensors.
    Concat(Vec<NodeId>),
    /// Channel slice `[start, start+len)` of a `[c,h,w]` tensor.
    SliceChannels {
        input: NodeId,
        start: usize,
        len: usize,
    },
    /// `scalar[0] * input`, with the scalar itself a graph node.
    ScaleByScalar {
        input: NodeId,
        scalar: NodeId,
    },
    Sum(NodeId),
    /// Mean squared difference over all elements; scalar output.
    Mse(NodeId, NodeId),
}

struct Node<T> {
    op: Op<T>,
    value: RealTensor<T>,
    requires_grad: bool,
    grad: Option<RealTensor<T>>,
}

/// Reverse-mode tape over real tensors.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn chw(shape: &[usize], what: &str) -> Result<(usize, usize, usize)> {
    if shape.len() != 3 {
        return Err(Error::Dimension(format!(
            "{} expects [c,h,w], got {:?}",
            what, shape
        )));
    }
    Ok((shape[0], shape[1], shape[2]))
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn value(&self, id: NodeId) -> &RealTensor<T> {
        &self.nodes[id.0].value
    }

    /// Gradient of the last backward pass; zeros if the node never
    /// influenced the loss.
    pub fn grad(&self, id: NodeId) -> RealTensor<T> {
        let node = &self.nodes[id.0];
        node.grad
            .clone()
            .unwrap_or_else(|| RealTensor::zeros(node.value.shape()))
    }

    fn push(&mut self, op: Op<T>, value: RealTensor<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
            grad: None,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant input; no gradient is tracked for it.
    pub fn constant(&mut self, value: RealTensor<T>) -> NodeId {
        self.push(Op::Leaf, value, false)
    }

    /// Trainable input; gradients accumulate here.
    pub fn parameter(&mut self, value: RealTensor<T>) -> NodeId {
        self.push(Op::Leaf, value, true)
    }

    fn wants_grad(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).add(self.value(b))?;
        let rg = self.wants_grad(&[a, b]);
        Ok(self.push(Op::Add(a, b), v, rg))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).sub(self.value(b))?;
        let rg = self.wants_grad(&[a, b]);
        Ok(self.push(Op::Sub(a, b), v, rg))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|v| if v > T::zero() { v } else { T::zero() });
        let rg = self.wants_grad(&[x]);
        self.push(Op::Relu(x), v, rg)
    }

    pub fn conv2d(&mut self, input: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let v = conv2d_forward(self.value(input), self.value(weight), self.value(bias))?;
        let rg = self.wants_grad(&[input, weight, bias]);
        Ok(self.push(Op::Conv2d { input, weight, bias }, v, rg))
    }

    pub fn fft2(&mut self, input: NodeId, inverse: bool) -> Result<NodeId> {
        let v = fft2_stacked(self.value(input), inverse)?;
        let rg = self.wants_grad(&[input]);
        Ok(self.push(Op::Fft2 { input, inverse }, v, rg))
    }

    pub fn mask_mul(&mut self, input: NodeId, mask: Arc<RealTensor<T>>) -> Result<NodeId> {
        let v = mask_mul_forward(self.value(input), &mask)?;
        let rg = self.wants_grad(&[input]);
        Ok(self.push(Op::MaskMul { input, mask }, v, rg))
    }

    pub fn data_consistency(
        &mut self,
        pred: NodeId,
        measured: NodeId,
        mask: Arc<RealTensor<T>>,
        lambda: DcLambda<T>,
    ) -> Result<NodeId> {
        if let DcLambda::Soft(l) = lambda {
            if l <= T::zero() {
                return Err(Error::Config(
                    "data-consistency lambda must be positive or hard".into(),
                ));
            }
        }
        let v = dc_forward(self.value(pred), self.value(measured), &mask, lambda)?;
        let rg = self.wants_grad(&[pred, measured]);
        Ok(self.push(
            Op::DataConsistency {
                pred,
                measured,
                mask,
                lambda,
            },
            v,
            rg,
        ))
    }

    pub fn concat(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of zero tensors".into()));
        }
        let (_, h, w) = chw(self.value(parts[0]).shape(), "concat")?;
        let mut channels = 0;
        let mut data = Vec::new();
        for &p in parts {
            let (c, ph, pw) = chw(self.value(p).shape(), "concat")?;
            if (ph, pw) != (h, w) {
                return Err(Error::Dimension(format!(
                    "concat spatial mismatch: {}x{} vs {}x{}",
                    ph, pw, h, w
                )));
            }
            channels += c;
            data.extend_from_slice(self.value(p).data());
        }
        let v = RealTensor::new(vec![channels, h, w], data)?;
        let rg = self.wants_grad(parts);
        Ok(self.push(Op::Concat(parts.to_vec()), v, rg))
    }

    pub fn slice_channels(&mut self, input: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let (c, h, w) = chw(self.value(input).shape(), "slice_channels")?;
        if start + len > c {
            return Err(Error::Dimension(format!(
                "slice [{}, {}) out of {} channels",
                start,
                start + len,
                c
            )));
        }
        let plane = h * w;
        let data = self.value(input).data()[start * plane..(start + len) * plane].to_vec();
        let v = RealTensor::new(vec![len, h, w], data)?;
        let rg = self.wants_grad(&[input]);
        Ok(self.push(Op::SliceChannels { input, start, len }, v, rg))
    }

    pub fn scale_by_scalar(&mut self, input: NodeId, scalar: NodeId) -> Result<NodeId> {
        if self.value(scalar).len() != 1 {
            return Err(Error::Dimension(format!(
                "scale_by_scalar wants a [1] scalar node, got {:?}",
                self.value(scalar).shape()
            )));
        }
        let s = self.value(scalar).data()[0];
        let v = self.value(input).scale(s);
        let rg = self.wants_grad(&[input, scalar]);
        Ok(self.push(Op::ScaleByScalar { input, scalar }, v, rg))
    }

    pub fn sum(&mut self, input: NodeId) -> NodeId {
        let v = RealTensor::scalar(self.value(input).sum());
        let rg = self.wants_grad(&[input]);
        self.push(Op::Sum(input), v, rg)
    }

    pub fn mse(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let diff = self.value(a).sub(self.value(b))?;
        let n = T::of_f64(diff.len() as f64);
        let mut acc = T::zero();
        for &d in diff.data() {
            acc = acc + d * d;
        }
        let v = RealTensor::scalar(acc / n);
        let rg = self.wants_grad(&[a, b]);
        Ok(self.push(Op::Mse(a, b), v, rg))
    }

    fn accumulate(&mut self, id: NodeId, delta: &RealTensor<T>) {
        let node = &mut self.nodes[id.0];
        match &mut node.grad {
            Some(g) => {
                for (gv, dv) in g.data_mut().iter_mut().zip(delta.data()) {
                    *gv = *gv + *dv;
                }
            }
            None => node.grad = Some(delta.clone()),
        }
    }

    /// Propagates d(loss)/d(node) to every node that influenced `loss`.
    ///
    /// The loss must be scalar. Gradients from a previous backward pass are
    /// cleared first.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.value(loss).len() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        for node in &mut self.nodes {
            node.grad = None;
        }
        self.nodes[loss.0].grad = Some(RealTensor::scalar(T::one()));

        for i in (0..=loss.0).rev() {
            let g = match &self.nodes[i].grad {
                Some(g) => g.clone(),
                None => continue,
            };
            // Temporarily swap the op out so `propagate` can borrow freely.
            let op = std::mem::replace(&mut self.nodes[i].op, Op::Leaf);
            self.propagate(&op, &g);
            self.nodes[i].op = op;
        }
        Ok(())
    }

    fn propagate(&mut self, op: &Op<T>, g: &RealTensor<T>) {
        match op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accumulate(*a, g);
                self.accumulate(*b, g);
            }
            Op::Sub(a, b) => {
                self.accumulate(*a, g);
                let neg = g.scale(-T::one());
                self.accumulate(*b, &neg);
            }
            Op::Relu(x) => {
                let xv = &self.nodes[x.0].value;
                let mut d = g.clone();
                for (dv, &iv) in d.data_mut().iter_mut().zip(xv.data()) {
                    if iv <= T::zero() {
                        *dv = T::zero();
                    }
                }
                self.accumulate(*x, &d);
            }
            Op::Conv2d { input, weight, bias } => {
                let (gi, gw, gb) = conv2d_backward(
                    &self.nodes[input.0].value,
                    &self.nodes[weight.0].value,
                    g,
                );
                self.accumulate(*input, &gi);
                self.accumulate(*weight, &gw);
                self.accumulate(*bias, &gb);
            }
            Op::Fft2 { input, inverse } => {
                // The real-linear transpose of a unitary FFT is its inverse.
                let d = fft2_stacked(g, !inverse).expect("gradient shape mirrors forward");
                self.accumulate(*input, &d);
            }
            Op::MaskMul { input, mask } => {
                let d = mask_mul_forward(g, mask).expect("gradient shape mirrors forward");
                self.accumulate(*input, &d);
            }
            Op::DataConsistency {
                pred,
                measured,
                mask,
                lambda,
            } => {
                let pw = lambda.pred_weight();
                let mw = lambda.measured_weight();
                let (c, h, w) = chw(g.shape(), "dc grad").unwrap();
                let plane = h * w;
                let mut gp = g.clone();
                let mut gm = g.clone();
                for ch in 0..c {
                    for p in 0..plane {
                        let m = mask.data()[p];
                        let idx = ch * plane + p;
                        let gv = g.data()[idx];
                        if m > T::zero() {
                            gp.data_mut()[idx] = gv * pw;
                            gm.data_mut()[idx] = gv * mw;
                        } else {
                            gp.data_mut()[idx] = gv;
                            gm.data_mut()[idx] = T::zero();
                        }
                    }
                }
                self.accumulate(*pred, &gp);
                self.accumulate(*measured, &gm);
            }
            Op::Concat(parts) => {
                let (_, h, w) = chw(g.shape(), "concat grad").unwrap();
                let plane = h * w;
                let mut offset = 0;
                for &p in parts {
                    let c = self.nodes[p.0].value.shape()[0];
                    let slice = RealTensor::new(
                        vec![c, h, w],
                        g.data()[offset * plane..(offset + c) * plane].to_vec(),
                    )
                    .unwrap();
                    self.accumulate(p, &slice);
                    offset += c;
                }
            }
            Op::SliceChannels { input, start, len } => {
                let (c, h, w) = chw(self.nodes[input.0].value.shape(), "slice grad").unwrap();
                let plane = h * w;
                let mut d = RealTensor::zeros(&[c, h, w]);
                d.data_mut()[start * plane..(start + len) * plane].copy_from_slice(g.data());
                self.accumulate(*input, &d);
            }
            Op::ScaleByScalar { input, scalar } => {
                let s = self.nodes[scalar.0].value.data()[0];
                let gi = g.scale(s);
                self.accumulate(*input, &gi);
                let xv = &self.nodes[input.0].value;
                let mut acc = T::zero();
                for (&gv, &xvv) in g.data().iter().zip(xv.data()) {
                    acc = acc + gv * xvv;
                }
                let gs = RealTensor::scalar(acc);
                self.accumulate(*scalar, &gs);
            }
            Op::Sum(input) => {
                let shape = self.nodes[input.0].value.shape().to_vec();
                let d = RealTensor::full(&shape, g.data()[0]);
                self.accumulate(*input, &d);
            }
            Op::Mse(a, b) => {
                let av = &self.nodes[a.0].value;
                let bv = &self.nodes[b.0].value;
                let n = T::of_f64(av.len() as f64);
                let scale = g.data()[0] * T::of_f64(2.0) / n;
                let mut da = av.sub(bv).unwrap();
                for v in da.data_mut() {
                    *v = *v * scale;
                }
                let db = da.scale(-T::one());
                self.accumulate(*a, &da);
                self.accumulate(*b, &db);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// kernels

fn conv_shapes<T: Scalar>(
    input: &RealTensor<T>,
    weight: &RealTensor<T>,
    bias: Option<&RealTensor<T>>,
) -> Result<(usize, usize, usize, usize, usize)> {
    let (ci, h, w) = chw(input.shape(), "conv2d input")?;
    let ws = weight.shape();
    if ws.len() != 4 {
        return Err(Error::Dimension(format!(
            "conv2d weight expects [co,ci,k,k], got {:?}",
            ws
        )));
    }
    let (co, wci, kh, kw) = (ws[0], ws[1], ws[2], ws[3]);
    if wci != ci {
        return Err(Error::Dimension(format!(
            "conv2d channel mismatch: input {} vs weight {}",
            ci, wci
        )));
    }
    if kh != kw || kh % 2 == 0 {
        return Err(Error::Dimension(format!(
            "conv2d kernel must be square with odd extent, got {}x{}",
            kh, kw
        )));
    }
    if let Some(b) = bias {
        if b.shape() != [co] {
            return Err(Error::Dimension(format!(
                "conv2d bias expects [{}], got {:?}",
                co,
                b.shape()
            )));
        }
    }
    Ok((ci, co, h, w, kh))
}

/// Same-padding convolution; output spatial extents equal the input's.
pub(crate) fn conv2d_forward<T: Scalar>(
    input: &RealTensor<T>,
    weight: &RealTensor<T>,
    bias: &RealTensor<T>,
) -> Result<RealTensor<T>> {
    let (ci, co, h, w, k) = conv_shapes(input, weight, Some(bias))?;
    let pad = (k - 1) / 2;
    let plane = h * w;
    let mut out = vec![T::zero(); co * plane];

    for o in 0..co {
        let b = bias.data()[o];
        for v in &mut out[o * plane..(o + 1) * plane] {
            *v = b;
        }
        for i in 0..ci {
            let in_plane = &input.data()[i * plane..(i + 1) * plane];
            for dy in 0..k {
                for dx in 0..k {
                    let wv = weight.data()[((o * ci + i) * k + dy) * k + dx];
                    if wv == T::zero() {
                        continue;
                    }
                    // out[y][x] += wv * in[y+dy-pad][x+dx-pad] over valid spans;
                    // exact-length zipped slices keep the inner loop vectorized
                    let (y0, y1) = row_span(h, dy, pad);
                    let (x0, x1) = row_span(w, dx, pad);
                    for y in y0..y1 {
                        let iy = y + dy - pad;
                        let src = &in_plane[iy * w + x0 + dx - pad..iy * w + x1 + dx - pad];
                        let dst = &mut out[o * plane + y * w + x0..o * plane + y * w + x1];
                        for (d, s) in dst.iter_mut().zip(src) {
                            *d = *d + wv * *s;
                        }
                    }
                }
            }
        }
    }
    RealTensor::new(vec![co, h, w], out)
}

/// Valid output index span along one axis for a given kernel offset.
fn row_span(extent: usize, d: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(d);
    let hi = (extent + pad - d).min(extent);
    (lo, hi)
}

fn conv2d_backward<T: Scalar>(
    input: &RealTensor<T>,
    weight: &RealTensor<T>,
    grad_out: &RealTensor<T>,
) -> (RealTensor<T>, RealTensor<T>, RealTensor<T>) {
    let (ci, co, h, w, k) = conv_shapes(input, weight, None).expect("checked at forward");
    let pad = (k - 1) / 2;
    let plane = h * w;

    let mut gi = vec![T::zero(); ci * plane];
    let mut gw = vec![T::zero(); co * ci * k * k];
    let mut gb = vec![T::zero(); co];

    for o in 0..co {
        let g_plane = &grad_out.data()[o * plane..(o + 1) * plane];
        let mut b_acc = T::zero();
        for &gv in g_plane {
            b_acc = b_acc + gv;
        }
        gb[o] = gb[o] + b_acc;

        for i in 0..ci {
            let in_plane = &input.data()[i * plane..(i + 1) * plane];
            for dy in 0..k {
                for dx in 0..k {
                    let widx = ((o * ci + i) * k + dy) * k + dx;
                    let wv = weight.data()[widx];
                    let (y0, y1) = row_span(h, dy, pad);
                    let (x0, x1) = row_span(w, dx, pad);
                    let mut w_acc = T::zero();
                    for y in y0..y1 {
                        let iy = y + dy - pad;
                        let g_row = &g_plane[y * w + x0..y * w + x1];
                        let in_row = &in_plane[iy * w + x0 + dx - pad..iy * w + x1 + dx - pad];
                        let gi_row = &mut gi
                            [i * plane + iy * w + x0 + dx - pad..i * plane + iy * w + x1 + dx - pad];
                        for ((gv, sv), giv) in g_row.iter().zip(in_row).zip(gi_row) {
                            w_acc = w_acc + *gv * *sv;
                            *giv = *giv + *gv * wv;
                        }
                    }
                    gw[widx] = gw[widx] + w_acc;
                }
            }
        }
    }

    (
        RealTensor::new(vec![ci, h, w], gi).unwrap(),
        RealTensor::new(vec![co, ci, k, k], gw).unwrap(),
        RealTensor::new(vec![co], gb).unwrap(),
    )
}

/// FFT of a stacked `[2,h,w]` complex image.
pub(crate) fn fft2_stacked<T: Scalar>(
    x: &RealTensor<T>,
    inverse: bool,
) -> Result<RealTensor<T>> {
    let (c, h, w) = chw(x.shape(), "fft2")?;
    if c != 2 {
        return Err(Error::Dimension(format!(
            "fft2 expects a stacked [2,h,w] complex image, got {} channels",
            c
        )));
    }
    let plane = h * w;
    let mut re = x.data()[..plane].to_vec();
    let mut im = x.data()[plane..].to_vec();
    crate::fft::fft2_planes(&mut re, &mut im, h, w, inverse)?;
    let mut data = re;
    data.extend_from_slice(&im);
    RealTensor::new(vec![2, h, w], data)
}

fn mask_mul_forward<T: Scalar>(x: &RealTensor<T>, mask: &RealTensor<T>) -> Result<RealTensor<T>> {
    let (c, h, w) = chw(x.shape(), "mask_mul")?;
    if mask.shape() != [h, w] {
        return Err(Error::Dimension(format!(
            "mask plane {:?} does not match image {}x{}",
            mask.shape(),
            h,
            w
        )));
    }
    let plane = h * w;
    let mut out = x.clone();
    for ch in 0..c {
        for p in 0..plane {
            out.data_mut()[ch * plane + p] = x.data()[ch * plane + p] * mask.data()[p];
        }
    }
    Ok(out)
}

fn dc_forward<T: Scalar>(
    pred: &RealTensor<T>,
    measured: &RealTensor<T>,
    mask: &RealTensor<T>,
    lambda: DcLambda<T>,
) -> Result<RealTensor<T>> {
    if pred.shape() != measured.shape() {
        return Err(Error::Dimension(format!(
            "dc pred {:?} vs measured {:?}",
            pred.shape(),
            measured.shape()
        )));
    }
    let (c, h, w) = chw(pred.shape(), "dc")?;
    if mask.shape() != [h, w] {
        return Err(Error::Dimension(format!(
            "dc mask plane {:?} does not match image {}x{}",
            mask.shape(),
            h,
            w
        )));
    }
    let plane = h * w;
    let pw = lambda.pred_weight();
    let mw = lambda.measured_weight();
    let mut out = pred.clone();
    for ch in 0..c {
        for p in 0..plane {
            if mask.data()[p] > T::zero() {
                let idx = ch * plane + p;
                // Hard replacement copies the measured bits untouched.
                out.data_mut()[idx] = match lambda {
                    DcLambda::Hard => measured.data()[idx],
                    DcLambda::Soft(_) => pred.data()[idx] * pw + measured.data()[idx] * mw,
                };
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// gradient checking

/// Compares analytic gradients against central differences, coordinate by
/// coordinate, over every supplied input.
///
/// `build` receives fresh parameter leaves (same shapes as `points`) and must
/// return a scalar loss node. Returns the max over coordinates of
/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-8)`.
///
/// `skip_near_zero`: when set, input coordinates with `|x| <= step` are
/// excluded — finite differences straddle the ReLU kink there.
pub fn grad_check<F>(
    build: F,
    points: &[RealTensor<f64>],
    step: f64,
    skip_near_zero: bool,
) -> Result<f64>
where
    F: Fn(&mut Graph<f64>, &[NodeId]) -> Result<NodeId>,
{
    let eval = |inputs: &[RealTensor<f64>]| -> Result<(f64, Vec<RealTensor<f64>>)> {
        let mut g = Graph::new();
        let ids: Vec<NodeId> = inputs.iter().map(|t| g.parameter(t.clone())).collect();
        let loss = build(&mut g, &ids)?;
        if g.value(loss).len() != 1 {
            return Err(Error::Contract("grad_check loss must be scalar".into()));
        }
        let loss_val = g.value(loss).data()[0];
        if !loss_val.is_finite() {
            return Err(Error::Numeric("grad_check hit a non-finite loss".into()));
        }
        g.backward(loss)?;
        let grads = ids.iter().map(|&id| g.grad(id)).collect();
        Ok((loss_val, grads))
    };

    let (_, analytic) = eval(points)?;

    let mut worst = 0.0f64;
    for (ti, point) in points.iter().enumerate() {
        for ci in 0..point.len() {
            if skip_near_zero && point.data()[ci].abs() <= step {
                continue;
            }
            let mut plus = points.to_vec();
            plus[ti].data_mut()[ci] += step;
            let mut minus = points.to_vec();
            minus[ti].data_mut()[ci] -= step;
            let (lp, _) = eval(&plus)?;
            let (lm, _) = eval(&minus)?;
            let numeric = (lp - lm) / (2.0 * step);
            let a = analytic[ti].data()[ci];
            if !numeric.is_finite() || !a.is_finite() {
                return Err(Error::Numeric(
                    "grad_check hit NaN/Inf in a derivative".into(),
                ));
            }
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
            if rel > worst {
                worst = rel;
            }
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rand_tensor(shape: &[usize], seed: u64) -> RealTensor<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        RealTensor::from_fn(shape, |_| rng.gen::<f64>() * 2.0 - 1.0)
    }

    #[test]
    fn conv_identity_kernel_passes_input_through() {
        let x = rand_tensor(&[1, 4, 4], 1);
        let mut w = RealTensor::zeros(&[1, 1, 3, 3]);
        w.data_mut()[4] = 1.0; // center tap
        let b = RealTensor::zeros(&[1]);
        let y = conv2d_forward(&x, &w, &b).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn conv_zero_input_yields_bias_planes() {
        let x = RealTensor::<f64>::zeros(&[2, 4, 4]);
        let w = rand_tensor(&[3, 2, 3, 3], 2);
        let b = RealTensor::new(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let y = conv2d_forward(&x, &w, &b).unwrap();
        for o in 0..3 {
            for p in 0..16 {
                assert_eq!(y.data()[o * 16 + p], b.data()[o]);
            }
        }
    }

    #[test]
    fn conv_matches_scalar_loop_oracle() {
        let x = rand_tensor(&[1, 4, 4], 3);
        let w = rand_tensor(&[2, 1, 3, 3], 4);
        let b = rand_tensor(&[2], 5);
        let y = conv2d_forward(&x, &w, &b).unwrap();

        // independent scalar-loop convolution at output [0, 1, 2]
        let (o, oy, ox) = (0usize, 1usize, 2usize);
        let mut expect = b.data()[o];
        for dy in 0..3usize {
            for dx in 0..3usize {
                let iy = oy as isize + dy as isize - 1;
                let ix = ox as isize + dx as isize - 1;
                if iy >= 0 && iy < 4 && ix >= 0 && ix < 4 {
                    expect += w.data()[(o * 3 + dy) * 3 + dx]
                        * x.data()[iy as usize * 4 + ix as usize];
                }
            }
        }
        assert!((y.data()[(o * 4 + oy) * 4 + ox] - expect).abs() < 1e-12);
    }

    #[test]
    fn conv_is_linear() {
        let x = rand_tensor(&[2, 8, 8], 6);
        let y = rand_tensor(&[2, 8, 8], 7);
        let w = rand_tensor(&[2, 2, 3, 3], 8);
        let b = RealTensor::zeros(&[2]);
        let (a, c) = (1.7, -0.3);
        let lhs = conv2d_forward(&x.scale(a).add(&y.scale(c)).unwrap(), &w, &b).unwrap();
        let rhs = conv2d_forward(&x, &w, &b)
            .unwrap()
            .scale(a)
            .add(&conv2d_forward(&y, &w, &b).unwrap().scale(c))
            .unwrap();
        for i in 0..lhs.len() {
            assert!((lhs.data()[i] - rhs.data()[i]).abs() < 1e-10);
        }
    }

    #[test]
    fn relu_forward_and_gradient() {
        let mut g = Graph::new();
        let x = g.parameter(RealTensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap());
        let y = g.relu(x);
        assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);
        let loss = g.sum(y);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).data(), &[0.0, 0.0, 1.0]);

        let all_neg = RealTensor::new(vec![4], vec![-3.0, -0.5, -2.0, -1e-9]).unwrap();
        let mut g2 = Graph::new();
        let x2 = g2.parameter(all_neg);
        let y2 = g2.relu(x2);
        assert!(g2.value(y2).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn sum_loss_gradient_is_ones() {
        let mut g = Graph::new();
        let x = g.parameter(rand_tensor(&[2, 3, 3], 9));
        let loss = g.sum(x);
        g.backward(loss).unwrap();
        assert!(g.grad(x).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn mse_of_node_with_itself_is_zero_grad() {
        let mut g = Graph::new();
        let x = g.parameter(rand_tensor(&[5], 10));
        let loss = g.mse(x, x).unwrap();
        assert_eq!(g.value(loss).data()[0], 0.0);
        g.backward(loss).unwrap();
        assert!(g.grad(x).data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn backward_rejects_non_scalar_loss() {
        let mut g = Graph::new();
        let x = g.parameter(rand_tensor(&[4], 11));
        let y = g.relu(x);
        assert!(matches!(g.backward(y), Err(Error::Contract(_))));
    }

    #[test]
    fn grad_check_linear_op_is_tight() {
        let err = grad_check(
            |g, ids| {
                let w = g.constant(rand_tensor(&[2, 1, 3, 3], 30));
                let b = g.constant(rand_tensor(&[2], 31));
                let y = g.conv2d(ids[0], w, b)?;
                Ok(g.sum(y))
            },
            &[rand_tensor(&[1, 4, 4], 32)],
            1e-4,
            false,
        )
        .unwrap();
        assert!(err < 1e-7, "linear op relative error {}", err);
    }

    #[test]
    fn grad_check_relu_away_from_kink() {
        let point = RealTensor::new(vec![4], vec![0.7, -0.9, 1.3, -2.0]).unwrap();
        let err = grad_check(
            |g, ids| {
                let y = g.relu(ids[0]);
                Ok(g.sum(y))
            },
            &[point],
            1e-4,
            false,
        )
        .unwrap();
        assert!(err < 1e-6, "relu relative error {}", err);
    }

    #[test]
    fn grad_check_relu_straddling_zero_skips_kink() {
        let point = RealTensor::new(vec![4], vec![0.5, 1e-6, -1e-6, -0.5]).unwrap();
        let err = grad_check(
            |g, ids| {
                let y = g.relu(ids[0]);
                Ok(g.sum(y))
            },
            &[point],
            1e-4,
            true,
        )
        .unwrap();
        assert!(err < 1e-6, "relu (kink skipped) relative error {}", err);
    }

    #[test]
    fn composed_chain_matches_finite_differences() {
        // conv -> relu -> fft2-ish mix -> mse against a constant
        let target = rand_tensor(&[2, 4, 4], 40);
        let mask = Arc::new(RealTensor::from_fn(&[4, 4], |i| {
            if i % 3 == 0 {
                1.0
            } else {
                0.0
            }
        }));
        let err = grad_check(
            |g, ids| {
                let b = g.constant(RealTensor::zeros(&[2]));
                let c = g.conv2d(ids[0], ids[1], b)?;
                let r = g.relu(c);
                let k = g.fft2(r, false)?;
                let m = g.mask_mul(k, mask.clone())?;
                let back = g.fft2(m, true)?;
                let t = g.constant(target.clone());
                g.mse(back, t)
            },
            &[rand_tensor(&[2, 4, 4], 41), rand_tensor(&[2, 2, 3, 3], 42)],
            1e-4,
            true,
        )
        .unwrap();
        assert!(err < 1e-4, "3-op chain relative error {}", err);
    }

    #[test]
    fn dc_and_scale_ops_match_finite_differences() {
        let mask = Arc::new(RealTensor::from_fn(&[4, 4], |i| {
            if i % 2 == 0 {
                1.0
            } else {
                0.0
            }
        }));
        let err = grad_check(
            |g, ids| {
                let kdc = g.data_consistency(
                    ids[0],
                    ids[1],
                    mask.clone(),
                    DcLambda::Soft(1.5),
                )?;
                let scaled = g.scale_by_scalar(kdc, ids[2])?;
                let z = g.constant(RealTensor::zeros(&[2, 4, 4]));
                g.mse(scaled, z)
            },
            &[
                rand_tensor(&[2, 4, 4], 50),
                rand_tensor(&[2, 4, 4], 51),
                RealTensor::scalar(0.8),
            ],
            1e-4,
            false,
        )
        .unwrap();
        assert!(err < 1e-6, "dc/scale relative error {}", err);
    }

    #[test]
    fn concat_slice_round_trip_gradients() {
        let err = grad_check(
            |g, ids| {
                let cat = g.concat(&[ids[0], ids[1]])?;
                let left = g.slice_channels(cat, 0, 2)?;
                let right = g.slice_channels(cat, 2, 1)?;
                let l = g.sum(left);
                let r = g.sum(right);
                g.add(l, r)
            },
            &[rand_tensor(&[2, 4, 4], 60), rand_tensor(&[1, 4, 4], 61)],
            1e-4,
            false,
        )
        .unwrap();
        assert!(err < 1e-7);
    }

    #[test]
    fn dc_hard_copies_measured_bitwise() {
        let pred = rand_tensor(&[2, 4, 4], 70);
        let meas = rand_tensor(&[2, 4, 4], 71);
        let mask = RealTensor::from_fn(&[4, 4], |i| if i < 8 { 1.0 } else { 0.0 });
        let out = dc_forward(&pred, &meas, &mask, DcLambda::<f64>::Hard).unwrap();
        for ch in 0..2 {
            for p in 0..16 {
                let idx = ch * 16 + p;
                if mask.data()[p] > 0.0 {
                    assert_eq!(out.data()[idx].to_bits(), meas.data()[idx].to_bits());
                } else {
                    assert_eq!(out.data()[idx].to_bits(), pred.data()[idx].to_bits());
                }
            }
        }
    }

    #[test]
    fn dc_soft_blends_sampled_locations() {
        let pred = RealTensor::full(&[2, 2, 2], 2.0f64);
        let meas = RealTensor::full(&[2, 2, 2], 4.0f64);
        let mask = RealTensor::full(&[2, 2], 1.0f64);
        let out = dc_forward(&pred, &meas, &mask, DcLambda::Soft(1.0)).unwrap();
        for &v in out.data() {
            assert!((v - 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn replay_is_bit_identical() {
        let x = rand_tensor(&[2, 8, 8], 80);
        let w = rand_tensor(&[4, 2, 3, 3], 81);
        let b = rand_tensor(&[4], 82);
        let run = || {
            let mut g = Graph::new();
            let xi = g.parameter(x.clone());
            let wi = g.parameter(w.clone());
            let bi = g.parameter(b.clone());
            let c = g.conv2d(xi, wi, bi).unwrap();
            let r = g.relu(c);
            let loss = g.sum(r);
            g.backward(loss).unwrap();
            (
                g.value(loss).data()[0].to_bits(),
                g.grad(wi).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            )
        };
        assert_eq!(run(), run());
    }
}
