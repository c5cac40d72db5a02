//! Static FLOP, parameter and activation accounting.
//!
//! Counting convention: one multiply-accumulate is one FLOP. Convolutions
//! and matrix products count their MACs; softmax, sigmoid, ReLU, norms,
//! pooling and elementwise add/mul count one op per element touched;
//! reshapes, transposes and concatenations are free. `peak_activation` is
//! the element count of the largest single activation tensor.

use std::fmt;
use std::ops::Add;

use serde::Serialize;

use crate::attention::{
    reduced_width, AttentionKind, BlockSpec, ConvSpec, PsaLayout, CBAM_REDUCTION,
    CBAM_SPATIAL_KERNEL, SE_GC_REDUCTION,
};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct CostReport {
    pub flops: u64,
    pub params: u64,
    pub peak_activation: u64,
}

impl CostReport {
    pub fn new(flops: u64, params: u64, peak_activation: u64) -> Self {
        Self {
            flops,
            params,
            peak_activation,
        }
    }
}

/// Sums flops and params; peak activation takes the maximum.
impl Add for CostReport {
    type Output = CostReport;

    fn add(self, rhs: CostReport) -> CostReport {
        CostReport {
            flops: self.flops + rhs.flops,
            params: self.params + rhs.params,
            peak_activation: self.peak_activation.max(rhs.peak_activation),
        }
    }
}

impl std::iter::Sum for CostReport {
    fn sum<I: Iterator<Item = CostReport>>(iter: I) -> CostReport {
        iter.fold(CostReport::default(), Add::add)
    }
}

/// `1234567` → `"1.23M"`.
pub fn human(count: u64) -> String {
    let v = count as f64;
    if v >= 1e9 {
        format!("{:.2}G", v / 1e9)
    } else if v >= 1e6 {
        format!("{:.2}M", v / 1e6)
    } else if v >= 1e3 {
        format!("{:.2}K", v / 1e3)
    } else {
        count.to_string()
    }
}

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "flops {} params {} peak_activation {}",
            human(self.flops),
            human(self.params),
            human(self.peak_activation)
        )
    }
}

fn conv1x1(cin: u64, cout: u64, pixels: u64, bias: bool) -> CostReport {
    CostReport::new(
        cin * cout * pixels,
        cin * cout + if bias { cout } else { 0 },
        0,
    )
}

fn elementwise(n: u64) -> CostReport {
    CostReport::new(n, 0, 0)
}

fn psa_channel_branch(c: u64, p: u64, normalize: bool, bias: bool) -> CostReport {
    let half = c / 2;
    let mut r = conv1x1(c, 1, p, bias)
        + conv1x1(c, half, p, bias)
        + elementwise(p)
        + CostReport::new(half * p, 0, 0)
        + conv1x1(half, c, 1, bias)
        + elementwise(c);
    if normalize {
        r = r + CostReport::new(c, 2 * c, 0);
    }
    r
}

fn psa_spatial_branch(c: u64, p: u64, bias: bool) -> CostReport {
    let half = c / 2;
    conv1x1(c, half, p, bias)
        + elementwise(half * p)
        + elementwise(half)
        + conv1x1(c, half, p, bias)
        + CostReport::new(half * p, 0, 0)
        + elementwise(p)
}

/// Closed-form cost of one attention block on a `[C, H, W]` input.
pub fn cost_of_attention_block(
    kind: AttentionKind,
    channels: usize,
    h: usize,
    w: usize,
) -> Result<CostReport> {
    kind.validate_channels(channels)?;
    if h == 0 || w == 0 {
        return Err(Error::Config(format!("empty spatial extent {h}x{w}")));
    }
    let (c, p) = (channels as u64, (h * w) as u64);
    let cp = c * p;
    let body = match kind {
        AttentionKind::Psa {
            layout,
            normalize,
            bias,
        } => {
            let ch = psa_channel_branch(c, p, normalize, bias);
            let sp = psa_spatial_branch(c, p, bias);
            match layout {
                PsaLayout::ChannelOnly => ch + elementwise(cp),
                PsaLayout::SpatialOnly => sp + elementwise(cp),
                PsaLayout::Parallel => ch + sp + elementwise(3 * cp),
                PsaLayout::Sequential => ch + sp + elementwise(2 * cp),
            }
        }
        AttentionKind::NonLocal => {
            (0..4).map(|_| conv1x1(c, c, p, true)).sum::<CostReport>()
                + CostReport::new(2 * c * p * p + p * p, 0, p * p)
                + elementwise(cp)
        }
        AttentionKind::Se => {
            let r = reduced_width(channels, SE_GC_REDUCTION) as u64;
            elementwise(cp)
                + conv1x1(c, r, 1, true)
                + elementwise(r)
                + conv1x1(r, c, 1, true)
                + elementwise(c)
                + elementwise(cp)
        }
        AttentionKind::Gc => {
            let r = reduced_width(channels, SE_GC_REDUCTION) as u64;
            conv1x1(c, 1, p, true)
                + elementwise(p)
                + CostReport::new(cp, 0, 0)
                + conv1x1(c, r, 1, true)
                + CostReport::new(r, 2 * r, 0)
                + elementwise(r)
                + conv1x1(r, c, 1, true)
                + elementwise(cp)
        }
        AttentionKind::Cbam => {
            let r = reduced_width(channels, CBAM_REDUCTION) as u64;
            let k2 = (CBAM_SPATIAL_KERNEL * CBAM_SPATIAL_KERNEL) as u64;
            let mlp = conv1x1(c, r, 1, true) + elementwise(r) + conv1x1(r, c, 1, true);
            let mlp_calls = CostReport::new(2 * mlp.flops, mlp.params, 0);
            elementwise(2 * cp)
                + mlp_calls
                + elementwise(2 * c)
                + elementwise(cp)
                + elementwise(2 * cp)
                + CostReport::new(2 * k2 * p, 2 * k2 + 1, 0)
                + elementwise(p)
                + elementwise(cp)
        }
    };
    Ok(body + CostReport::new(0, 0, cp))
}

/// Kind and hyperparameters of one descriptor layer.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerKind {
    Conv {
        kernel: usize,
        out_channels: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    },
    /// Transposed convolution; output extent `(H−1)·stride − 2·pad + kernel`.
    Deconv {
        kernel: usize,
        out_channels: usize,
        stride: usize,
        pad: usize,
        bias: bool,
    },
    Fc {
        out_features: usize,
        bias: bool,
    },
    BatchNorm,
    MaxPool {
        kernel: usize,
        stride: usize,
        pad: usize,
    },
    GlobalAvgPool,
    Softmax,
    Sigmoid,
    Relu,
    Elementwise,
    Attention(AttentionKind),
    Residual(BlockSpec),
}

impl LayerKind {
    pub fn label(&self) -> String {
        match self {
            LayerKind::Conv { kernel, .. } => format!("conv{kernel}x{kernel}"),
            LayerKind::Deconv { kernel, stride, .. } => format!("deconv{kernel}x{kernel}s{stride}"),
            LayerKind::Fc { .. } => "fc".into(),
            LayerKind::BatchNorm => "batchnorm".into(),
            LayerKind::MaxPool { .. } => "maxpool".into(),
            LayerKind::GlobalAvgPool => "pool".into(),
            LayerKind::Softmax => "softmax".into(),
            LayerKind::Sigmoid => "sigmoid".into(),
            LayerKind::Relu => "relu".into(),
            LayerKind::Elementwise => "elementwise".into(),
            LayerKind::Attention(k) => format!("attention:{k}"),
            LayerKind::Residual(b) => match &b.attention {
                Some(a) => format!("{:?}+{}", b.kind, a.kind).to_lowercase(),
                None => format!("{:?}", b.kind).to_lowercase(),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerSpec {
    pub name: String,
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn new(name: impl Into<String>, kind: LayerKind) -> Self {
        Self {
            name: name.into(),
            kind,
        }
    }
}

/// `[C, H, W]` of one sample.
pub type Shape3 = [usize; 3];

fn numel(s: Shape3) -> u64 {
    (s[0] * s[1] * s[2]) as u64
}

fn conv_out(extent: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 || extent + 2 * pad < kernel {
        return Err(Error::Descriptor(format!(
            "{kernel}x{kernel} kernel (stride {stride}, pad {pad}) does not fit extent {extent}"
        )));
    }
    Ok((extent + 2 * pad - kernel) / stride + 1)
}

fn conv_spec_cost(spec: &ConvSpec, bias: bool, input: Shape3) -> Result<(CostReport, Shape3)> {
    layer_cost(
        &LayerKind::Conv {
            kernel: spec.kernel,
            out_channels: spec.out_channels,
            stride: spec.stride,
            pad: spec.pad,
            bias,
        },
        input,
    )
}

fn residual_cost(block: &BlockSpec, input: Shape3) -> Result<(CostReport, Shape3)> {
    if input[0] != block.in_channels {
        return Err(Error::Descriptor(format!(
            "block expects {} input channels, chain provides {}",
            block.in_channels, input[0]
        )));
    }
    let norm = |s: Shape3| {
        if block.batch_norm {
            CostReport::new(numel(s), 2 * s[0] as u64, numel(s))
        } else {
            CostReport::default()
        }
    };
    let mut total = CostReport::new(0, 0, numel(input));
    let mut shape = input;
    let convs = block.convs();
    let last = convs.len() - 1;
    for (i, conv) in convs.iter().enumerate() {
        let (c, out) = conv_spec_cost(conv, block.conv_bias, shape)?;
        shape = out;
        total = total + c + norm(shape);
        if let Some(att) = block.attention.filter(|a| a.after_conv == i) {
            total = total + cost_of_attention_block(att.kind, shape[0], shape[1], shape[2])?;
        }
        if i != last || !block.is_residual() {
            total = total + elementwise(numel(shape));
        }
    }
    if block.is_residual() {
        if let Some(proj) = block.projection() {
            let (c, skip) = conv_spec_cost(&proj, block.conv_bias, input)?;
            if skip != shape {
                return Err(Error::Descriptor(format!(
                    "projection {skip:?} does not match main path {shape:?}"
                )));
            }
            total = total + c + norm(skip);
        } else if input != shape {
            return Err(Error::Descriptor(format!(
                "identity skip {input:?} does not match main path {shape:?}"
            )));
        }
        // Skip addition and the closing ReLU.
        total = total + elementwise(2 * numel(shape));
    }
    Ok((total, shape))
}

/// Cost of one layer on `input`, plus its output shape.
pub fn layer_cost(kind: &LayerKind, input: Shape3) -> Result<(CostReport, Shape3)> {
    let [c, h, w] = input;
    if c == 0 || h == 0 || w == 0 {
        return Err(Error::Descriptor(format!("empty input shape {input:?}")));
    }
    let n = numel(input);
    let (report, out) = match *kind {
        LayerKind::Conv {
            kernel,
            out_channels,
            stride,
            pad,
            bias,
        } => {
            let out = [
                out_channels,
                conv_out(h, kernel, stride, pad)?,
                conv_out(w, kernel, stride, pad)?,
            ];
            let weights = (out_channels * c * kernel * kernel) as u64;
            let params = weights + if bias { out_channels as u64 } else { 0 };
            (
                CostReport::new(weights * (out[1] * out[2]) as u64, params, 0),
                out,
            )
        }
        LayerKind::Deconv {
            kernel,
            out_channels,
            stride,
            pad,
            bias,
        } => {
            let extent = |e: usize| {
                ((e - 1) * stride + kernel)
                    .checked_sub(2 * pad)
                    .filter(|&v| v > 0)
                    .ok_or_else(|| Error::Descriptor(format!("deconv collapses extent {e}")))
            };
            let out = [out_channels, extent(h)?, extent(w)?];
            let weights = (out_channels * c * kernel * kernel) as u64;
            let params = weights + if bias { out_channels as u64 } else { 0 };
            // Weight elements × output positions, the convention the
            // reference pose-estimation cost tables use for deconvolutions.
            (
                CostReport::new(weights * (out[1] * out[2]) as u64, params, 0),
                out,
            )
        }
        LayerKind::Fc { out_features, bias } => {
            let weights = n * out_features as u64;
            let params = weights + if bias { out_features as u64 } else { 0 };
            (CostReport::new(weights, params, 0), [out_features, 1, 1])
        }
        LayerKind::BatchNorm => (CostReport::new(n, 2 * c as u64, 0), input),
        LayerKind::MaxPool {
            kernel,
            stride,
            pad,
        } => {
            let out = [
                c,
                conv_out(h, kernel, stride, pad)?,
                conv_out(w, kernel, stride, pad)?,
            ];
            (
                CostReport::new(numel(out) * (kernel * kernel) as u64, 0, 0),
                out,
            )
        }
        LayerKind::GlobalAvgPool => (elementwise(n), [c, 1, 1]),
        LayerKind::Softmax | LayerKind::Sigmoid | LayerKind::Relu | LayerKind::Elementwise => {
            (elementwise(n), input)
        }
        LayerKind::Attention(k) => (cost_of_attention_block(k, c, h, w)?, input),
        LayerKind::Residual(ref block) => residual_cost(block, input)?,
    };
    let peak = report.peak_activation.max(n).max(numel(out));
    Ok((
        CostReport {
            peak_activation: peak,
            ..report
        },
        out,
    ))
}

/// Named layer chain with a nominal input shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Descriptor {
    pub name: String,
    pub input_shape: Shape3,
    pub layers: Vec<LayerSpec>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerReport {
    pub name: String,
    pub kind: String,
    pub output_shape: Shape3,
    pub flops: u64,
    pub params: u64,
    pub peak_activation: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ModelReport {
    pub flops: u64,
    pub params: u64,
    pub peak_activation: u64,
    pub breakdown: Vec<LayerReport>,
}

impl ModelReport {
    pub fn total(&self) -> CostReport {
        CostReport::new(self.flops, self.params, self.peak_activation)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

/// Sums layer costs along the shape chain starting at `input_shape`.
pub fn cost_of_model(descriptor: &Descriptor, input_shape: Shape3) -> Result<ModelReport> {
    let mut shape = input_shape;
    let mut total = CostReport::default();
    let mut breakdown = Vec::with_capacity(descriptor.layers.len());
    for layer in &descriptor.layers {
        let (c, out) = layer_cost(&layer.kind, shape).map_err(|e| match e {
            Error::Descriptor(m) | Error::Config(m) | Error::Shape(m) => {
                Error::Descriptor(format!("layer `{}`: {m}", layer.name))
            }
            other => other,
        })?;
        breakdown.push(LayerReport {
            name: layer.name.clone(),
            kind: layer.kind.label(),
            output_shape: out,
            flops: c.flops,
            params: c.params,
            peak_activation: c.peak_activation,
        });
        total = total + c;
        shape = out;
    }
    Ok(ModelReport {
        flops: total.flops,
        params: total.params,
        peak_activation: total.peak_activation,
        breakdown,
    })
}

pub const RESNET50_SIMPLEBASELINE: &str = "resnet50-simplebaseline";
pub const RESNET50_SIMPLEBASELINE_PSA: &str = "resnet50-simplebaseline-psa";
pub const TOY_HEATMAP_NET: &str = "toy-heatmap-net";
pub const TOY_HEATMAP_NET_PSA: &str = "toy-heatmap-net-psa";

pub const BUILTIN_NAMES: [&str; 4] = [
    RESNET50_SIMPLEBASELINE,
    RESNET50_SIMPLEBASELINE_PSA,
    TOY_HEATMAP_NET,
    TOY_HEATMAP_NET_PSA,
];

/// Bottleneck counts and widths of the four ResNet-50 stages.
pub const RESNET50_STAGES: [(usize, usize); 4] = [(3, 64), (4, 128), (6, 256), (3, 512)];

/// PSA as attached to the ResNet-50 pose model: parallel layout with
/// bias-free 1×1 convolutions.
pub fn resnet_psa_kind() -> AttentionKind {
    AttentionKind::Psa {
        layout: PsaLayout::Parallel,
        normalize: false,
        bias: false,
    }
}

/// ResNet-50 trunk, three 4×4 stride-2 deconvolutions to 256 channels and
/// a 1×1 head to 17 heatmaps; attention (if any) joins every bottleneck.
pub fn resnet50_simplebaseline(attention: Option<AttentionKind>) -> Result<Descriptor> {
    let mut layers = vec![
        LayerSpec::new(
            "stem.conv",
            LayerKind::Conv {
                kernel: 7,
                out_channels: 64,
                stride: 2,
                pad: 3,
                bias: false,
            },
        ),
        LayerSpec::new("stem.bn", LayerKind::BatchNorm),
        LayerSpec::new("stem.relu", LayerKind::Relu),
        LayerSpec::new(
            "stem.pool",
            LayerKind::MaxPool {
                kernel: 3,
                stride: 2,
                pad: 1,
            },
        ),
    ];
    let mut in_ch = 64;
    for (stage, &(blocks, mid)) in RESNET50_STAGES.iter().enumerate() {
        for b in 0..blocks {
            let stride = if stage > 0 && b == 0 { 2 } else { 1 };
            let mut spec = BlockSpec::bottleneck(in_ch, mid, mid * 4, stride);
            if let Some(kind) = attention {
                spec = crate::attention::attach_to_residual_block(&spec, kind)?;
            }
            layers.push(LayerSpec::new(
                format!("layer{}.{b}", stage + 1),
                LayerKind::Residual(spec),
            ));
            in_ch = mid * 4;
        }
    }
    for d in 0..3 {
        layers.push(LayerSpec::new(
            format!("deconv{d}"),
            LayerKind::Deconv {
                kernel: 4,
                out_channels: 256,
                stride: 2,
                pad: 1,
                bias: false,
            },
        ));
        layers.push(LayerSpec::new(
            format!("deconv{d}.bn"),
            LayerKind::BatchNorm,
        ));
        layers.push(LayerSpec::new(format!("deconv{d}.relu"), LayerKind::Relu));
    }
    layers.push(LayerSpec::new(
        "head",
        LayerKind::Conv {
            kernel: 1,
            out_channels: 17,
            stride: 1,
            pad: 0,
            bias: true,
        },
    ));
    let name = if attention.is_some() {
        RESNET50_SIMPLEBASELINE_PSA
    } else {
        RESNET50_SIMPLEBASELINE
    };
    Ok(Descriptor {
        name: name.into(),
        input_shape: [3, 384, 288],
        layers,
    })
}

/// Stem conv3×3 + ReLU, `depth` basic blocks (biased convs, no batch
/// norm), 1×1 head to `outputs` maps.
pub fn toy_net_descriptor(
    width: usize,
    depth: usize,
    outputs: usize,
    image: usize,
    attention: Option<AttentionKind>,
) -> Result<Descriptor> {
    let mut layers = vec![
        LayerSpec::new(
            "stem.conv",
            LayerKind::Conv {
                kernel: 3,
                out_channels: width,
                stride: 1,
                pad: 1,
                bias: true,
            },
        ),
        LayerSpec::new("stem.relu", LayerKind::Relu),
    ];
    for b in 0..depth {
        let mut spec = BlockSpec::basic(width, width, 1);
        spec.conv_bias = true;
        spec.batch_norm = false;
        if let Some(kind) = attention {
            spec = crate::attention::attach_to_residual_block(&spec, kind)?;
        }
        layers.push(LayerSpec::new(
            format!("block{b}"),
            LayerKind::Residual(spec),
        ));
    }
    layers.push(LayerSpec::new(
        "head",
        LayerKind::Conv {
            kernel: 1,
            out_channels: outputs,
            stride: 1,
            pad: 0,
            bias: true,
        },
    ));
    Ok(Descriptor {
        name: if attention.is_some() {
            TOY_HEATMAP_NET_PSA.into()
        } else {
            TOY_HEATMAP_NET.into()
        },
        input_shape: [3, image, image],
        layers,
    })
}

pub fn builtin_descriptor(name: &str) -> Result<Descriptor> {
    let toy_psa = AttentionKind::psa(PsaLayout::Parallel);
    match name {
        RESNET50_SIMPLEBASELINE => resnet50_simplebaseline(None),
        RESNET50_SIMPLEBASELINE_PSA => resnet50_simplebaseline(Some(resnet_psa_kind())),
        TOY_HEATMAP_NET => toy_net_descriptor(32, 4, 4, 32, None),
        TOY_HEATMAP_NET_PSA => toy_net_descriptor(32, 4, 4, 32, Some(toy_psa)),
        _ => Err(Error::UnknownName(name.to_string())),
    }
}

/// Closed-form parameter count of one attention block.
pub fn attention_param_count(kind: AttentionKind, channels: usize) -> Result<u64> {
    cost_of_attention_block(kind, channels, 1, 1).map(|r| r.params)
}

/// Which part of a block's cost a scaling fit looks at.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CostTerm {
    /// Total FLOPs of the block.
    Total,
    /// The `HW×HW` similarity product of the non-local block (`C·(HW)²`).
    Similarity,
}

pub fn term_flops(
    kind: AttentionKind,
    term: CostTerm,
    c: usize,
    h: usize,
    w: usize,
) -> Result<u64> {
    match term {
        CostTerm::Total => cost_of_attention_block(kind, c, h, w).map(|r| r.flops),
        CostTerm::Similarity => match kind {
            AttentionKind::NonLocal => {
                kind.validate_channels(c)?;
                let p = (h * w) as u64;
                Ok(c as u64 * p * p)
            }
            other => Err(Error::Config(format!("{other} has no similarity term"))),
        },
    }
}

/// Log-log exponents of cost against `C` and `H·W`; `None` where the grid
/// does not vary that variable.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ScalingFit {
    pub channel_exponent: Option<f64>,
    pub spatial_exponent: Option<f64>,
}

/// Minimum number of grid points for a fit.
pub const MIN_GRID_POINTS: usize = 3;

/// Fits `log cost = a + α·log C + β·log(HW)` by least squares over the
/// `(C, H, W)` grid.
pub fn scaling_check(kind: AttentionKind, term: CostTerm, grid: &[Shape3]) -> Result<ScalingFit> {
    if grid.len() < MIN_GRID_POINTS {
        return Err(Error::DegenerateGrid(format!(
            "need at least {MIN_GRID_POINTS} grid points, got {}",
            grid.len()
        )));
    }
    let mut rows = Vec::with_capacity(grid.len());
    for &[c, h, w] in grid {
        let y = term_flops(kind, term, c, h, w)?;
        if y == 0 {
            return Err(Error::DegenerateGrid(format!("zero cost at {c}x{h}x{w}")));
        }
        rows.push(((c as f64).ln(), ((h * w) as f64).ln(), (y as f64).ln()));
    }
    let n = rows.len() as f64;
    let mean = |f: fn(&(f64, f64, f64)) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let (mc, ms, my) = (mean(|r| r.0), mean(|r| r.1), mean(|r| r.2));
    let (mut scc, mut sss, mut scs, mut scy, mut ssy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for &(c, s, y) in &rows {
        let (dc, ds, dy) = (c - mc, s - ms, y - my);
        scc += dc * dc;
        sss += ds * ds;
        scs += dc * ds;
        scy += dc * dy;
        ssy += ds * dy;
    }
    const TINY: f64 = 1e-12;
    let fit = match (scc > TINY, sss > TINY) {
        (false, false) => {
            return Err(Error::DegenerateGrid(
                "grid has no variance in C or H·W".into(),
            ))
        }
        (true, false) => ScalingFit {
            channel_exponent: Some(scy / scc),
            spatial_exponent: None,
        },
        (false, true) => ScalingFit {
            channel_exponent: None,
            spatial_exponent: Some(ssy / sss),
        },
        (true, true) => {
            let det = scc * sss - scs * scs;
            if det.abs() <= TINY * scc * sss {
                return Err(Error::DegenerateGrid(
                    "C and H·W vary together; exponents are not separable".into(),
                ));
            }
            ScalingFit {
                channel_exponent: Some((scy * sss - ssy * scs) / det),
                spatial_exponent: Some((ssy * scc - scy * scs) / det),
            }
        }
    };
    Ok(fit)
}
