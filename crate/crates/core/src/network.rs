//! Per-coil unrolled reconstruction stacks with k-space data-consistency
//! layers, plus a learned coil-combination network.
//!
//! Each coil's k-space is reconstructed by its own stack. A stack is either
//! an unrolled alternating-direction block (learned operators for the
//! data-consistency deviation, the regularizer, and the auxiliary update,
//! plus a learned step scalar) or a residual conv cascade. Every block is
//! followed by a k-space backfill layer. The per-coil images are then
//! concatenated along channels and fused by a small conv net; in
//! single-channel mode the input is coil-combined first and one stack runs
//! without the fusion net.
//!
//! All networks are 2D spatial: training data are merged to a single frame
//! before they reach the model.

use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use crate::autodiff::{DcLambda, Graph, NodeId};
use crate::encoding::{CoilSensitivities, MultiCoilKSpace, SamplingMask};
use crate::error::{Error, Result};
use crate::fft::{fft2, ifft2};
use crate::io;
use crate::scalar::Scalar;
use crate::tensor::{ComplexTensor, RealTensor};

pub const KERNEL: usize = 3;
/// Cascade geometry of the residual variant: 5 blocks of 5 conv layers.
pub const CASCADE_BLOCKS: usize = 5;
pub const CASCADE_LAYERS: usize = 5;
const ADMM_NET_LAYERS: usize = 3;

/// Input handling: one stack per coil with learned combination, or a single
/// stack on coil-combined input.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelMode {
    MultiChannel,
    SingleChannel,
}

/// Which unrolled block the per-coil stacks use.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ReconBlock {
    Admm3,
    D5C5,
}

/// Structural hyperparameters of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub mode: ModelMode,
    pub block: ReconBlock,
    /// Unrolled iteration count for the alternating-direction block.
    /// The residual cascade is fixed at 5 blocks.
    pub n_iters: usize,
    /// Hidden channel width of every conv net.
    pub width: usize,
    /// `None` backfills sampled k-space exactly; `Some(l)` soft-blends.
    pub dc_lambda: Option<f64>,
    pub nc: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_iters < 1 {
            return Err(Error::Config("n_iters must be >= 1".into()));
        }
        if self.width < 1 {
            return Err(Error::Config("width must be >= 1".into()));
        }
        if self.nc < 1 {
            return Err(Error::Config("nc must be >= 1".into()));
        }
        if let Some(l) = self.dc_lambda {
            if l <= 0.0 {
                return Err(Error::Config("dc_lambda must be positive".into()));
            }
        }
        Ok(())
    }

    /// Stacks the model owns: one per coil, or one in single-channel mode.
    pub fn stack_count(&self) -> usize {
        match self.mode {
            ModelMode::MultiChannel => self.nc,
            ModelMode::SingleChannel => 1,
        }
    }

    fn lambda<T: Scalar>(&self) -> DcLambda<T> {
        match self.dc_lambda {
            Some(l) => DcLambda::Soft(T::of_f64(l)),
            None => DcLambda::Hard,
        }
    }

    /// Conv channel plan `(c_in, hidden, c_out, layers)` of each net kind.
    fn admm_net_plan(&self, net: &str) -> (usize, usize, usize, usize) {
        let c_in = match net {
            "gamma" => 4,  // candidate k-space and measured k-space
            "pi" => 6,     // image iterate, auxiliary gap, adjoint correction
            "lambda" => 2, // image plus multiplier
            _ => unreachable!("unknown net kind"),
        };
        (c_in, self.width, 2, ADMM_NET_LAYERS)
    }
}

/// One conv layer: weight `[co, ci, k, k]`, bias `[co]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T> {
    pub weight: RealTensor<T>,
    pub bias: RealTensor<T>,
}

/// A conv stack with ReLU between layers and a linear final layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvStack<T> {
    pub layers: Vec<ConvLayer<T>>,
}

/// Learned pieces of one unrolled alternating-direction block.
#[derive(Clone, Debug, PartialEq)]
pub struct AdmmBlockParams<T> {
    pub gamma: ConvStack<T>,
    pub pi: ConvStack<T>,
    pub lambda: ConvStack<T>,
    /// Learned multiplier step, shape `[1]`.
    pub eta: RealTensor<T>,
}

/// Parameters of one per-coil reconstruction stack.
#[derive(Clone, Debug, PartialEq)]
pub enum StackParams<T> {
    Admm(Vec<AdmmBlockParams<T>>),
    Cascade(Vec<ConvStack<T>>),
}

/// All trainable tensors of the model.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub stacks: Vec<StackParams<T>>,
    pub combine: Option<ConvStack<T>>,
}

fn layer_channels(c_in: usize, hidden: usize, c_out: usize, layers: usize) -> Vec<(usize, usize)> {
    let mut plan = Vec::with_capacity(layers);
    for l in 0..layers {
        let ci = if l == 0 { c_in } else { hidden };
        let co = if l == layers - 1 { c_out } else { hidden };
        plan.push((ci, co));
    }
    plan
}

impl<T: Scalar> ModelParams<T> {
    /// Zero-initialized parameters with the exact shapes of `cfg`.
    pub fn zeros(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let zero_stack = |plan: &[(usize, usize)]| ConvStack {
            layers: plan
                .iter()
                .map(|&(ci, co)| ConvLayer {
                    weight: RealTensor::zeros(&[co, ci, KERNEL, KERNEL]),
                    bias: RealTensor::zeros(&[co]),
                })
                .collect(),
        };
        let make_stack = || -> StackParams<T> {
            match cfg.block {
                ReconBlock::Admm3 => StackParams::Admm(
                    (0..cfg.n_iters)
                        .map(|_| {
                            let net = |kind: &str| {
                                let (ci, hid, co, layers) = cfg.admm_net_plan(kind);
                                zero_stack(&layer_channels(ci, hid, co, layers))
                            };
                            AdmmBlockParams {
                                gamma: net("gamma"),
                                pi: net("pi"),
                                lambda: net("lambda"),
                                eta: RealTensor::zeros(&[1]),
                            }
                        })
                        .collect(),
                ),
                ReconBlock::D5C5 => StackParams::Cascade(
                    (0..CASCADE_BLOCKS)
                        .map(|_| zero_stack(&layer_channels(2, cfg.width, 2, CASCADE_LAYERS)))
                        .collect(),
                ),
            }
        };
        let stacks = (0..cfg.stack_count()).map(|_| make_stack()).collect();
        let combine = match cfg.mode {
            ModelMode::MultiChannel => Some(zero_stack(&layer_channels(
                2 * cfg.nc,
                cfg.width,
                2,
                ADMM_NET_LAYERS,
            ))),
            ModelMode::SingleChannel => None,
        };
        Ok(Self { stacks, combine })
    }

    /// Visits every tensor in a fixed, documented order:
    /// stacks (blocks, then the nets' weight-bias pairs, then eta),
    /// then the combine net.
    pub fn visit(&self, mut f: impl FnMut(&str, &RealTensor<T>)) {
        let emit =
            |prefix: String, stack: &ConvStack<T>, f: &mut dyn FnMut(&str, &RealTensor<T>)| {
                for (l, layer) in stack.layers.iter().enumerate() {
                    f(&format!("{}/layer{}.w", prefix, l), &layer.weight);
                    f(&format!("{}/layer{}.b", prefix, l), &layer.bias);
                }
            };
        for (s, stack) in self.stacks.iter().enumerate() {
            match stack {
                StackParams::Admm(blocks) => {
                    for (b, block) in blocks.iter().enumerate() {
                        emit(format!("stack{}/block{}/gamma", s, b), &block.gamma, &mut f);
                        emit(format!("stack{}/block{}/pi", s, b), &block.pi, &mut f);
                        emit(format!("stack{}/block{}/lambda", s, b), &block.lambda, &mut f);
                        f(&format!("stack{}/block{}/eta/layer0.w", s, b), &block.eta);
                    }
                }
                StackParams::Cascade(cascades) => {
                    for (b, cascade) in cascades.iter().enumerate() {
                        emit(format!("stack{}/block{}/net", s, b), cascade, &mut f);
                    }
                }
            }
        }
        if let Some(combine) = &self.combine {
            emit("combine/block0/net".to_string(), combine, &mut f);
        }
    }

    /// Mutable traversal in the same order as [`visit`](Self::visit).
    pub fn visit_mut(&mut self, mut f: impl FnMut(&str, &mut RealTensor<T>)) {
        let emit = |prefix: String,
                    stack: &mut ConvStack<T>,
                    f: &mut dyn FnMut(&str, &mut RealTensor<T>)| {
            for (l, layer) in stack.layers.iter_mut().enumerate() {
                f(&format!("{}/layer{}.w", prefix, l), &mut layer.weight);
                f(&format!("{}/layer{}.b", prefix, l), &mut layer.bias);
            }
        };
        for (s, stack) in self.stacks.iter_mut().enumerate() {
            match stack {
                StackParams::Admm(blocks) => {
                    for (b, block) in blocks.iter_mut().enumerate() {
                        emit(format!("stack{}/block{}/gamma", s, b), &mut block.gamma, &mut f);
                        emit(format!("stack{}/block{}/pi", s, b), &mut block.pi, &mut f);
                        emit(
                            format!("stack{}/block{}/lambda", s, b),
                            &mut block.lambda,
                            &mut f,
                        );
                        f(&format!("stack{}/block{}/eta/layer0.w", s, b), &mut block.eta);
                    }
                }
                StackParams::Cascade(cascades) => {
                    for (b, cascade) in cascades.iter_mut().enumerate() {
                        emit(format!("stack{}/block{}/net", s, b), cascade, &mut f);
                    }
                }
            }
        }
        if let Some(combine) = &mut self.combine {
            emit("combine/block0/net".to_string(), combine, &mut f);
        }
    }

    /// Flat list of `(name, tensor)` in visit order.
    pub fn named_tensors(&self) -> Vec<(String, RealTensor<T>)> {
        let mut out = Vec::new();
        self.visit(|name, t| out.push((name.to_string(), t.clone())));
        out
    }

    pub fn tensor_count(&self) -> usize {
        let mut n = 0;
        self.visit(|_, _| n += 1);
        n
    }

    pub fn scalar_count(&self) -> usize {
        let mut n = 0;
        self.visit(|_, t| n += t.len());
        n
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let cast_stack = |s: &ConvStack<T>| ConvStack {
            layers: s
                .layers
                .iter()
                .map(|l| ConvLayer {
                    weight: l.weight.cast(),
                    bias: l.bias.cast(),
                })
                .collect(),
        };
        ModelParams {
            stacks: self
                .stacks
                .iter()
                .map(|s| match s {
                    StackParams::Admm(blocks) => StackParams::Admm(
                        blocks
                            .iter()
                            .map(|b| AdmmBlockParams {
                                gamma: cast_stack(&b.gamma),
                                pi: cast_stack(&b.pi),
                                lambda: cast_stack(&b.lambda),
                                eta: b.eta.cast(),
                            })
                            .collect(),
                    ),
                    StackParams::Cascade(c) => {
                        StackParams::Cascade(c.iter().map(cast_stack).collect())
                    }
                })
                .collect(),
            combine: self.combine.as_ref().map(cast_stack),
        }
    }
}

/// Closed-form trainable scalar count for a config.
pub fn parameter_count(cfg: &ModelConfig) -> usize {
    let stack_params = |plan: &[(usize, usize)]| -> usize {
        plan.iter()
            .map(|&(ci, co)| co * ci * KERNEL * KERNEL + co)
            .sum()
    };
    let per_stack = match cfg.block {
        ReconBlock::Admm3 => {
            let net = |kind: &str| {
                let (ci, hid, co, layers) = cfg.admm_net_plan(kind);
                stack_params(&layer_channels(ci, hid, co, layers))
            };
            cfg.n_iters * (net("gamma") + net("pi") + net("lambda") + 1)
        }
        ReconBlock::D5C5 => {
            CASCADE_BLOCKS * stack_params(&layer_channels(2, cfg.width, 2, CASCADE_LAYERS))
        }
    };
    let combine = match cfg.mode {
        ModelMode::MultiChannel => {
            stack_params(&layer_channels(2 * cfg.nc, cfg.width, 2, ADMM_NET_LAYERS))
        }
        ModelMode::SingleChannel => 0,
    };
    cfg.stack_count() * per_stack + combine
}

// ---------------------------------------------------------------------------
// graph construction

struct ConvStackNodes {
    layers: Vec<(NodeId, NodeId)>,
}

struct AdmmBlockNodes {
    gamma: ConvStackNodes,
    pi: ConvStackNodes,
    lambda: ConvStackNodes,
    eta: NodeId,
}

enum StackNodes {
    Admm(Vec<AdmmBlockNodes>),
    Cascade(Vec<ConvStackNodes>),
}

/// Graph leaves of every parameter, in visit order.
pub struct ModelNodes {
    stacks: Vec<StackNodes>,
    combine: Option<ConvStackNodes>,
    ordered: Vec<NodeId>,
}

impl ModelNodes {
    /// Gradients of every parameter, in visit order.
    pub fn gradients<T: Scalar>(&self, g: &Graph<T>) -> Vec<RealTensor<T>> {
        self.ordered.iter().map(|&id| g.grad(id)).collect()
    }

    /// Parameter leaf ids in visit order.
    pub fn leaf_ids(&self) -> &[NodeId] {
        &self.ordered
    }
}

/// Inserts every parameter as a graph leaf (trainable or constant).
pub fn insert_params<T: Scalar>(
    g: &mut Graph<T>,
    params: &ModelParams<T>,
    trainable: bool,
) -> ModelNodes {
    let mut ordered = Vec::new();
    fn conv_nodes<T: Scalar>(
        g: &mut Graph<T>,
        s: &ConvStack<T>,
        trainable: bool,
        ordered: &mut Vec<NodeId>,
    ) -> ConvStackNodes {
        let layers = s
            .layers
            .iter()
            .map(|l| {
                let w = if trainable {
                    g.parameter(l.weight.clone())
                } else {
                    g.constant(l.weight.clone())
                };
                ordered.push(w);
                let b = if trainable {
                    g.parameter(l.bias.clone())
                } else {
                    g.constant(l.bias.clone())
                };
                ordered.push(b);
                (w, b)
            })
            .collect();
        ConvStackNodes { layers }
    }

    let stacks = params
        .stacks
        .iter()
        .map(|stack| match stack {
            StackParams::Admm(blocks) => StackNodes::Admm(
                blocks
                    .iter()
                    .map(|b| {
                        let gamma = conv_nodes(g, &b.gamma, trainable, &mut ordered);
                        let pi = conv_nodes(g, &b.pi, trainable, &mut ordered);
                        let lambda = conv_nodes(g, &b.lambda, trainable, &mut ordered);
                        let eta = if trainable {
                            g.parameter(b.eta.clone())
                        } else {
                            g.constant(b.eta.clone())
                        };
                        ordered.push(eta);
                        AdmmBlockNodes {
                            gamma,
                            pi,
                            lambda,
                            eta,
                        }
                    })
                    .collect(),
            ),
            StackParams::Cascade(cascades) => StackNodes::Cascade(
                cascades
                    .iter()
                    .map(|c| conv_nodes(g, c, trainable, &mut ordered))
                    .collect(),
            ),
        })
        .collect();
    let combine = params
        .combine
        .as_ref()
        .map(|c| conv_nodes(g, c, trainable, &mut ordered));
    ModelNodes {
        stacks,
        combine,
        ordered,
    }
}

fn conv_stack_forward<T: Scalar>(
    g: &mut Graph<T>,
    input: NodeId,
    stack: &ConvStackNodes,
) -> Result<NodeId> {
    let mut x = input;
    let last = stack.layers.len() - 1;
    for (l, &(w, b)) in stack.layers.iter().enumerate() {
        x = g.conv2d(x, w, b)?;
        if l < last {
            x = g.relu(x);
        }
    }
    Ok(x)
}

/// One alternating-direction update (the four lines: candidate k-space
/// correction, image update, auxiliary update, multiplier update). No data
/// consistency here; the caller applies it after the block.
fn admm_block_graph<T: Scalar>(
    g: &mut Graph<T>,
    state: (NodeId, NodeId, NodeId),
    measured: NodeId,
    mask: &Arc<RealTensor<T>>,
    block: &AdmmBlockNodes,
) -> Result<(NodeId, NodeId, NodeId)> {
    let (d, z, beta) = state;
    // candidate k-space of the iterate
    let kd = g.fft2(d, false)?;
    let ed = g.mask_mul(kd, mask.clone())?;
    // learned data-consistency deviation, in k-space
    let gin = g.concat(&[ed, measured])?;
    let alpha = conv_stack_forward(g, gin, &block.gamma)?;
    // adjoint of the per-coil operator brings the correction back to image space
    let masked_alpha = g.mask_mul(alpha, mask.clone())?;
    let eha = g.fft2(masked_alpha, true)?;
    // image update from iterate, auxiliary gap, and correction
    let zmb = g.sub(z, beta)?;
    let pin = g.concat(&[d, zmb, eha])?;
    let d_next = conv_stack_forward(g, pin, &block.pi)?;
    // auxiliary update
    let zin = g.add(d_next, beta)?;
    let z_next = conv_stack_forward(g, zin, &block.lambda)?;
    // multiplier update with the learned step
    let gap = g.sub(d_next, z_next)?;
    let step = g.scale_by_scalar(gap, block.eta)?;
    let beta_next = g.add(beta, step)?;
    Ok((d_next, z_next, beta_next))
}

fn stack_forward_graph<T: Scalar>(
    g: &mut Graph<T>,
    measured: NodeId,
    mask: &Arc<RealTensor<T>>,
    stack: &StackNodes,
    lambda: DcLambda<T>,
) -> Result<(NodeId, NodeId)> {
    let d0 = g.fft2(measured, true)?;
    let mut kdc_last = None;
    let mut d = d0;
    match stack {
        StackNodes::Admm(blocks) => {
            let mut z = d0;
            let mut beta = {
                let shape = g.value(d0).shape().to_vec();
                g.constant(RealTensor::zeros(&shape))
            };
            for block in blocks {
                let (d_next, z_next, beta_next) =
                    admm_block_graph(g, (d, z, beta), measured, mask, block)?;
                let k = g.fft2(d_next, false)?;
                let kdc = g.data_consistency(k, measured, mask.clone(), lambda)?;
                d = g.fft2(kdc, true)?;
                z = z_next;
                beta = beta_next;
                kdc_last = Some(kdc);
            }
        }
        StackNodes::Cascade(cascades) => {
            for cascade in cascades {
                let r = conv_stack_forward(g, d, cascade)?;
                let d_res = g.add(d, r)?;
                let k = g.fft2(d_res, false)?;
                let kdc = g.data_consistency(k, measured, mask.clone(), lambda)?;
                d = g.fft2(kdc, true)?;
                kdc_last = Some(kdc);
            }
        }
    }
    Ok((d, kdc_last.expect("at least one block")))
}

/// A fully built forward graph ready for backward.
pub struct ForwardGraph<T> {
    pub graph: Graph<T>,
    /// Stacked `[2,h,w]` output image node.
    pub output: NodeId,
    /// Final backfilled k-space node per stack.
    pub coil_dc: Vec<NodeId>,
    pub nodes: ModelNodes,
}

/// Coil-combines multichannel k-space into one channel via conjugate maps in
/// the image domain (single-channel mode input).
pub fn coil_combine_kspace<T: Scalar>(
    m: &MultiCoilKSpace<T>,
    csm: &CoilSensitivities<T>,
) -> Result<MultiCoilKSpace<T>> {
    if m.nc != csm.nc {
        return Err(Error::Dimension(format!(
            "k-space has {} coils, csm has {}",
            m.nc, csm.nc
        )));
    }
    let mut out = MultiCoilKSpace::zeros(m.nx, m.ny, m.nt, 1);
    for t in 0..m.nt {
        let mut acc = ComplexTensor::zeros(&[m.ny, m.nx]);
        for c in 0..m.nc {
            let img = ifft2(&m.coil(t, c))?;
            acc = acc.add(&img.mul(&csm.coil(c).conj())?)?;
        }
        out.set_coil(t, 0, &fft2(&acc)?);
    }
    Ok(out)
}

/// Builds the full forward graph for one merged-frame input.
///
/// `trainable` controls whether parameters are gradient leaves. The input
/// must be nt=1; single-channel mode additionally needs `csm` to combine the
/// coils first.
pub fn build_forward_graph<T: Scalar>(
    m: &MultiCoilKSpace<T>,
    mask: &SamplingMask,
    csm: Option<&CoilSensitivities<T>>,
    cfg: &ModelConfig,
    params: &ModelParams<T>,
    trainable: bool,
) -> Result<ForwardGraph<T>> {
    cfg.validate()?;
    if m.nt != 1 {
        return Err(Error::Contract(format!(
            "model consumes merged nt=1 k-space, got nt={}",
            m.nt
        )));
    }
    if m.nc != cfg.nc {
        return Err(Error::Config(format!(
            "input has {} coils but config says {}",
            m.nc, cfg.nc
        )));
    }
    if params.stacks.len() != cfg.stack_count() {
        return Err(Error::Config(format!(
            "params have {} stacks, config wants {}",
            params.stacks.len(),
            cfg.stack_count()
        )));
    }
    if mask.ny != m.ny || mask.nt != 1 {
        return Err(Error::Dimension(format!(
            "mask {}x{} does not fit nt=1 k-space with ny {}",
            mask.ny, mask.nt, m.ny
        )));
    }

    let mut g = Graph::new();
    let nodes = insert_params(&mut g, params, trainable);
    let mask_plane = Arc::new(mask.dft_plane::<T>(0, m.nx));
    let lambda = cfg.lambda::<T>();

    let mut coil_dc = Vec::new();
    let output = match cfg.mode {
        ModelMode::MultiChannel => {
            let mut images = Vec::with_capacity(cfg.nc);
            for c in 0..cfg.nc {
                let measured = g.constant(m.coil(0, c).to_stacked());
                let (img, kdc) =
                    stack_forward_graph(&mut g, measured, &mask_plane, &nodes.stacks[c], lambda)?;
                images.push(img);
                coil_dc.push(kdc);
            }
            let cat = g.concat(&images)?;
            let combine = nodes
                .combine
                .as_ref()
                .ok_or_else(|| Error::Config("multichannel mode needs a combine net".into()))?;
            conv_stack_forward(&mut g, cat, combine)?
        }
        ModelMode::SingleChannel => {
            let csm = csm.ok_or_else(|| {
                Error::Config("single-channel mode needs coil sensitivities".into())
            })?;
            let combined = coil_combine_kspace(m, csm)?;
            let measured = g.constant(combined.coil(0, 0).to_stacked());
            let (img, kdc) =
                stack_forward_graph(&mut g, measured, &mask_plane, &nodes.stacks[0], lambda)?;
            coil_dc.push(kdc);
            img
        }
    };

    Ok(ForwardGraph {
        graph: g,
        output,
        coil_dc,
        nodes,
    })
}

/// Forward output: combined image plus each stack's final backfilled
/// k-space (the model's k-space estimate).
pub struct ModelOutput<T> {
    pub image: ComplexTensor<T>,
    pub coil_dc_kspace: Vec<ComplexTensor<T>>,
}

/// Runs the model on one merged frame.
pub fn model_forward<T: Scalar>(
    m: &MultiCoilKSpace<T>,
    mask: &SamplingMask,
    csm: Option<&CoilSensitivities<T>>,
    cfg: &ModelConfig,
    params: &ModelParams<T>,
) -> Result<ModelOutput<T>> {
    let fg = build_forward_graph(m, mask, csm, cfg, params, false)?;
    let image = ComplexTensor::from_stacked(fg.graph.value(fg.output))?;
    let coil_dc_kspace = fg
        .coil_dc
        .iter()
        .map(|&id| ComplexTensor::from_stacked(fg.graph.value(id)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ModelOutput {
        image,
        coil_dc_kspace,
    })
}

/// Reconstructs a single coil with one stack; returns the image and the
/// final backfilled k-space.
pub fn coil_recon_forward<T: Scalar>(
    coil_k: &ComplexTensor<T>,
    mask: &SamplingMask,
    stack: &StackParams<T>,
    dc_lambda: Option<f64>,
) -> Result<(ComplexTensor<T>, ComplexTensor<T>)> {
    let shape = coil_k.shape();
    if shape.len() != 2 {
        return Err(Error::Dimension(format!(
            "coil k-space must be [ny, nx], got {:?}",
            shape
        )));
    }
    let (ny, nx) = (shape[0], shape[1]);
    if mask.ny != ny || mask.nt != 1 {
        return Err(Error::Dimension(format!(
            "mask {}x{} does not fit coil k-space {}x{}",
            mask.ny, mask.nt, ny, nx
        )));
    }
    let lambda = match dc_lambda {
        Some(l) if l <= 0.0 => return Err(Error::Config("dc_lambda must be positive".into())),
        Some(l) => DcLambda::Soft(T::of_f64(l)),
        None => DcLambda::Hard,
    };
    let mut g = Graph::new();
    let params_one = ModelParams {
        stacks: vec![stack.clone()],
        combine: None,
    };
    let nodes = insert_params(&mut g, &params_one, false);
    let mask_plane = Arc::new(mask.dft_plane::<T>(0, nx));
    let measured = g.constant(coil_k.to_stacked());
    let (img, kdc) = stack_forward_graph(&mut g, measured, &mask_plane, &nodes.stacks[0], lambda)?;
    Ok((
        ComplexTensor::from_stacked(g.value(img))?,
        ComplexTensor::from_stacked(g.value(kdc))?,
    ))
}

/// One alternating-direction block on plain tensors (no data consistency).
pub fn admm_block_forward<T: Scalar>(
    d: &ComplexTensor<T>,
    z: &ComplexTensor<T>,
    beta: &ComplexTensor<T>,
    measured: &ComplexTensor<T>,
    mask: &SamplingMask,
    block: &AdmmBlockParams<T>,
) -> Result<(ComplexTensor<T>, ComplexTensor<T>, ComplexTensor<T>)> {
    let shape = d.shape();
    if shape.len() != 2 {
        return Err(Error::Dimension(format!(
            "block state must be [ny, nx], got {:?}",
            shape
        )));
    }
    let nx = shape[1];
    let mut g = Graph::new();
    let params_one = ModelParams {
        stacks: vec![StackParams::Admm(vec![block.clone()])],
        combine: None,
    };
    let nodes = insert_params(&mut g, &params_one, false);
    let block_nodes = match &nodes.stacks[0] {
        StackNodes::Admm(blocks) => &blocks[0],
        StackNodes::Cascade(_) => unreachable!(),
    };
    let mask_plane = Arc::new(mask.dft_plane::<T>(0, nx));
    let dn = g.constant(d.to_stacked());
    let zn = g.constant(z.to_stacked());
    let bn = g.constant(beta.to_stacked());
    let mn = g.constant(measured.to_stacked());
    let (d2, z2, b2) = admm_block_graph(&mut g, (dn, zn, bn), mn, &mask_plane, block_nodes)?;
    Ok((
        ComplexTensor::from_stacked(g.value(d2))?,
        ComplexTensor::from_stacked(g.value(z2))?,
        ComplexTensor::from_stacked(g.value(b2))?,
    ))
}

/// Residual-cascade variant on a single coil.
pub fn d5c5_forward<T: Scalar>(
    coil_k: &ComplexTensor<T>,
    mask: &SamplingMask,
    cascades: &[ConvStack<T>],
    dc_lambda: Option<f64>,
) -> Result<(ComplexTensor<T>, ComplexTensor<T>)> {
    coil_recon_forward(
        coil_k,
        mask,
        &StackParams::Cascade(cascades.to_vec()),
        dc_lambda,
    )
}

/// Standalone k-space backfill on plain tensors: sampled locations blend
/// toward `measured` (exactly, when `lambda` is `None`), unsampled keep
/// `pred`.
pub fn dc_layer<T: Scalar>(
    pred_k: &ComplexTensor<T>,
    measured_k: &ComplexTensor<T>,
    mask: &SamplingMask,
    lambda: Option<f64>,
) -> Result<ComplexTensor<T>> {
    let shape = pred_k.shape();
    if shape.len() != 2 {
        return Err(Error::Dimension(format!(
            "dc_layer expects [ny, nx], got {:?}",
            shape
        )));
    }
    let lam = match lambda {
        Some(l) if l <= 0.0 => return Err(Error::Config("dc lambda must be positive".into())),
        Some(l) => DcLambda::Soft(T::of_f64(l)),
        None => DcLambda::Hard,
    };
    let mut g = Graph::new();
    let mask_plane = Arc::new(mask.dft_plane::<T>(0, shape[1]));
    let p = g.constant(pred_k.to_stacked());
    let m = g.constant(measured_k.to_stacked());
    let out = g.data_consistency(p, m, mask_plane, lam)?;
    ComplexTensor::from_stacked(g.value(out))
}

/// Scale estimate computable from undersampled input alone: the largest
/// per-coil zero-filled image magnitude. Used to normalize network inputs.
pub fn input_scale<T: Scalar>(m: &MultiCoilKSpace<T>) -> Result<f64> {
    let mut s = 0.0f64;
    for t in 0..m.nt {
        for c in 0..m.nc {
            let img = ifft2(&m.coil(t, c))?;
            s = s.max(img.max_abs());
        }
    }
    Ok(if s > 0.0 { s } else { 1.0 })
}

// ---------------------------------------------------------------------------
// checkpoints

fn checkpoint_manifest(cfg: &ModelConfig, dtype: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "format = checkpoint-v1");
    let _ = writeln!(s, "dtype = {}", dtype);
    let _ = writeln!(
        s,
        "mode = {}",
        match cfg.mode {
            ModelMode::MultiChannel => "multichannel",
            ModelMode::SingleChannel => "single-channel",
        }
    );
    let _ = writeln!(
        s,
        "block = {}",
        match cfg.block {
            ReconBlock::Admm3 => "admm3",
            ReconBlock::D5C5 => "d5c5",
        }
    );
    let _ = writeln!(s, "n_iters = {}", cfg.n_iters);
    let _ = writeln!(s, "width = {}", cfg.width);
    let _ = writeln!(s, "nc = {}", cfg.nc);
    let _ = writeln!(
        s,
        "dc_lambda = {}",
        match cfg.dc_lambda {
            None => "inf".to_string(),
            Some(l) => format!("{}", l),
        }
    );
    s
}

/// Parses the model structure back out of a checkpoint manifest.
pub fn parse_checkpoint_manifest(text: &str) -> Result<(ModelConfig, String)> {
    let mut map = std::collections::BTreeMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some((k, v)) = line.split_once('=') {
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
    }
    let get = |k: &str| -> Result<String> {
        map.get(k)
            .cloned()
            .ok_or_else(|| Error::Format(format!("checkpoint manifest missing {}", k)))
    };
    if get("format")? != "checkpoint-v1" {
        return Err(Error::Format("unknown checkpoint format".into()));
    }
    let mode = match get("mode")?.as_str() {
        "multichannel" => ModelMode::MultiChannel,
        "single-channel" => ModelMode::SingleChannel,
        other => return Err(Error::Format(format!("unknown mode {}", other))),
    };
    let block = match get("block")?.as_str() {
        "admm3" => ReconBlock::Admm3,
        "d5c5" => ReconBlock::D5C5,
        other => return Err(Error::Format(format!("unknown block {}", other))),
    };
    let num = |k: &str| -> Result<usize> {
        get(k)?
            .parse()
            .map_err(|_| Error::Format(format!("checkpoint key {} is not a number", k)))
    };
    let dc_lambda = match get("dc_lambda")?.as_str() {
        "inf" => None,
        other => Some(
            other
                .parse::<f64>()
                .map_err(|_| Error::Format("bad dc_lambda".into()))?,
        ),
    };
    Ok((
        ModelConfig {
            mode,
            block,
            n_iters: num("n_iters")?,
            width: num("width")?,
            dc_lambda,
            nc: num("nc")?,
        },
        get("dtype")?,
    ))
}

/// Writes one TNS1 file per parameter under the visit-order naming scheme,
/// plus `manifest.txt`.
pub fn save_checkpoint<T: Scalar>(
    dir: &Path,
    cfg: &ModelConfig,
    params: &ModelParams<T>,
) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("manifest.txt"), checkpoint_manifest(cfg, T::DTYPE))?;
    let mut err = None;
    params.visit(|name, t| {
        if err.is_some() {
            return;
        }
        let path = dir.join(format!("{}.tns", name));
        if let Some(parent) = path.parent() {
            if let Err(e) = std::fs::create_dir_all(parent) {
                err = Some(Error::Io(e));
                return;
            }
        }
        if let Err(e) = io::write_real(&path, t) {
            err = Some(e);
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok(()),
    }
}

/// Loads a checkpoint directory; every tensor shape must match the
/// manifest's structure.
pub fn load_checkpoint<T: Scalar>(dir: &Path) -> Result<(ModelConfig, ModelParams<T>)> {
    let manifest = std::fs::read_to_string(dir.join("manifest.txt"))?;
    let (cfg, dtype) = parse_checkpoint_manifest(&manifest)?;
    if dtype != T::DTYPE {
        return Err(Error::Format(format!(
            "checkpoint dtype {} does not match requested {}",
            dtype,
            T::DTYPE
        )));
    }
    let mut params = ModelParams::<T>::zeros(&cfg)?;
    let mut err = None;
    params.visit_mut(|name, t| {
        if err.is_some() {
            return;
        }
        match io::read_real::<T>(&dir.join(format!("{}.tns", name))) {
            Ok(loaded) => {
                if loaded.shape() != t.shape() {
                    err = Some(Error::Format(format!(
                        "checkpoint tensor {} has shape {:?}, expected {:?}",
                        name,
                        loaded.shape(),
                        t.shape()
                    )));
                } else {
                    *t = loaded;
                }
            }
            Err(e) => err = Some(e),
        }
    });
    match err {
        Some(e) => Err(e),
        None => Ok((cfg, params)),
    }
}
