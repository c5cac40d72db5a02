//! Polarized self-attention (PSA) and the comparison blocks.
//!
//! All blocks map one sample `[C, H, W]` to `[C, H, W]`. PSA is built from
//! two gates:
//!
//! * the channel-only gate `[C, 1, 1]`: a softmax over the `H·W` positions
//!   of a one-channel query pools the `C/2`-channel value map, a 1×1 conv
//!   lifts the pooled vector back to `C`, and a sigmoid squashes it;
//! * the spatial-only gate `[1, H, W]`: a globally pooled `C/2`-channel
//!   query is softmaxed over its channels and dotted with the `C/2`-channel
//!   value map at every position, followed by a sigmoid.
//!
//! The parallel layout sums the two gated copies of `x`; the sequential
//! layout feeds the channel-gated tensor into the spatial branch.

use std::fmt;
use std::str::FromStr;

use rand::Rng;

use crate::error::{Error, Result};
use crate::layers::{Conv, Norm};
use crate::tape::{ParamStore, Tape, Var};
use crate::tensor::Tensor;

/// Channel reduction of SE and GC (`C/4`).
pub const SE_GC_REDUCTION: usize = 4;
/// Channel reduction of the CBAM channel MLP (`C/16`).
pub const CBAM_REDUCTION: usize = 16;
/// Kernel of the CBAM spatial convolution.
pub const CBAM_SPATIAL_KERNEL: usize = 7;

/// `C / divisor`, floored at one channel so small test blocks stay valid.
pub fn reduced_width(channels: usize, divisor: usize) -> usize {
    (channels / divisor).max(1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum PsaLayout {
    ChannelOnly,
    SpatialOnly,
    Parallel,
    Sequential,
}

impl PsaLayout {
    pub const ALL: [PsaLayout; 4] = [
        PsaLayout::ChannelOnly,
        PsaLayout::SpatialOnly,
        PsaLayout::Parallel,
        PsaLayout::Sequential,
    ];

    pub fn has_channel(self) -> bool {
        self != PsaLayout::SpatialOnly
    }

    pub fn has_spatial(self) -> bool {
        self != PsaLayout::ChannelOnly
    }

    fn name(self) -> &'static str {
        match self {
            PsaLayout::ChannelOnly => "channel",
            PsaLayout::SpatialOnly => "spatial",
            PsaLayout::Parallel => "parallel",
            PsaLayout::Sequential => "sequential",
        }
    }
}

/// Which attention block to build.
///
/// String form: `psa-{channel,spatial,parallel,sequential}` with optional
/// `+norm` (layer norm before the channel sigmoid) and `+nobias`
/// (bias-free 1×1 convs) suffixes, or `nl`, `se`, `gc`, `cbam`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AttentionKind {
    Psa {
        layout: PsaLayout,
        normalize: bool,
        bias: bool,
    },
    NonLocal,
    Se,
    Gc,
    Cbam,
}

impl AttentionKind {
    /// PSA with the default options (no normalization, biased convs).
    pub fn psa(layout: PsaLayout) -> Self {
        AttentionKind::Psa {
            layout,
            normalize: false,
            bias: true,
        }
    }

    /// The eight blocks the gradient and invariant suites cover.
    pub fn all_default() -> Vec<AttentionKind> {
        let mut kinds: Vec<_> = PsaLayout::ALL.iter().map(|&l| Self::psa(l)).collect();
        kinds.extend([
            AttentionKind::NonLocal,
            AttentionKind::Se,
            AttentionKind::Gc,
            AttentionKind::Cbam,
        ]);
        kinds
    }

    pub fn is_psa(&self) -> bool {
        matches!(self, AttentionKind::Psa { .. })
    }

    pub fn validate_channels(&self, channels: usize) -> Result<()> {
        if channels == 0 {
            return Err(Error::Config("attention needs at least one channel".into()));
        }
        if self.is_psa() && (channels < 2 || !channels.is_multiple_of(2)) {
            return Err(Error::Config(format!(
                "PSA needs an even channel count >= 2, got {channels}"
            )));
        }
        Ok(())
    }
}

impl fmt::Display for AttentionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttentionKind::Psa {
                layout,
                normalize,
                bias,
            } => {
                write!(f, "psa-{}", layout.name())?;
                if *normalize {
                    f.write_str("+norm")?;
                }
                if !bias {
                    f.write_str("+nobias")?;
                }
                Ok(())
            }
            AttentionKind::NonLocal => f.write_str("nl"),
            AttentionKind::Se => f.write_str("se"),
            AttentionKind::Gc => f.write_str("gc"),
            AttentionKind::Cbam => f.write_str("cbam"),
        }
    }
}

impl FromStr for AttentionKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut parts = s.split('+');
        let head = parts.next().unwrap_or_default();
        let kind = match head {
            "nl" | "nonlocal" => AttentionKind::NonLocal,
            "se" => AttentionKind::Se,
            "gc" => AttentionKind::Gc,
            "cbam" => AttentionKind::Cbam,
            _ => {
                let layout = match head {
                    "psa-channel" => PsaLayout::ChannelOnly,
                    "psa-spatial" => PsaLayout::SpatialOnly,
                    "psa-parallel" | "psa" => PsaLayout::Parallel,
                    "psa-sequential" => PsaLayout::Sequential,
                    _ => return Err(Error::UnknownName(s.to_string())),
                };
                let (mut normalize, mut bias) = (false, true);
                for flag in parts.by_ref() {
                    match flag {
                        "norm" => normalize = true,
                        "nobias" => bias = false,
                        _ => return Err(Error::UnknownName(s.to_string())),
                    }
                }
                AttentionKind::Psa {
                    layout,
                    normalize,
                    bias,
                }
            }
        };
        if parts.next().is_some() {
            return Err(Error::UnknownName(s.to_string()));
        }
        Ok(kind)
    }
}

/// Configuration of one PSA block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PsaConfig {
    pub channels: usize,
    pub layout: PsaLayout,
    pub normalize: bool,
    pub bias: bool,
}

impl PsaConfig {
    pub fn new(channels: usize, layout: PsaLayout) -> Self {
        Self {
            channels,
            layout,
            normalize: false,
            bias: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        AttentionKind::Psa {
            layout: self.layout,
            normalize: self.normalize,
            bias: self.bias,
        }
        .validate_channels(self.channels)
    }

    pub fn kind(&self) -> AttentionKind {
        AttentionKind::Psa {
            layout: self.layout,
            normalize: self.normalize,
            bias: self.bias,
        }
    }
}

/// An attention map together with the softmax weights that produced it.
#[derive(Clone, Copy, Debug)]
pub struct Gate {
    pub map: Var,
    pub weights: Var,
}

fn expect_channels(tape: &Tape, x: Var, channels: usize) -> Result<(usize, usize)> {
    let (c, h, w) = tape.value(x).dims3()?;
    if c != channels {
        return Err(Error::Config(format!(
            "block built for {channels} channels received {:?}",
            tape.value(x).shape()
        )));
    }
    Ok((h, w))
}

/// Parameters of the channel-only branch: `W_q: C→1`, `W_v: C→C/2`,
/// `W_z: C/2→C`, optional layer norm over the `C` outputs.
#[derive(Clone, Debug)]
pub struct ChannelBranch {
    pub channels: usize,
    pub wq: Conv,
    pub wv: Conv,
    pub wz: Conv,
    pub norm: Option<Norm>,
}

impl ChannelBranch {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cfg: &PsaConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        let half = c / 2;
        Ok(Self {
            channels: c,
            wq: Conv::pointwise(store, &format!("{name}.wq"), c, 1, cfg.bias, rng)?,
            wv: Conv::pointwise(store, &format!("{name}.wv"), c, half, cfg.bias, rng)?,
            wz: Conv::pointwise(store, &format!("{name}.wz"), half, c, cfg.bias, rng)?,
            norm: if cfg.normalize {
                Some(Norm::new(store, &format!("{name}.norm"), &[c, 1, 1])?)
            } else {
                None
            },
        })
    }

    /// The `[C, 1, 1]` channel gate of `x`.
    pub fn attention(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Gate> {
        let (h, w) = expect_channels(tape, x, self.channels)?;
        let hw = h * w;
        let half = self.channels / 2;
        let v = self.wv.forward(tape, store, x)?;
        let v = tape.reshape(v, [half, hw])?;
        let q = self.wq.forward(tape, store, x)?;
        let q = tape.reshape(q, [hw, 1])?;
        let weights = tape.softmax(q, 0)?;
        let pooled = tape.matmul(v, weights)?;
        let pooled = tape.reshape(pooled, [half, 1, 1])?;
        let mut z = self.wz.forward(tape, store, pooled)?;
        if let Some(norm) = &self.norm {
            z = norm.forward(tape, store, z)?;
        }
        let map = tape.sigmoid(z)?;
        Ok(Gate { map, weights })
    }
}

/// Parameters of the spatial-only branch: `W_q, W_v: C→C/2`.
#[derive(Clone, Debug)]
pub struct SpatialBranch {
    pub channels: usize,
    pub wq: Conv,
    pub wv: Conv,
}

impl SpatialBranch {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        cfg: &PsaConfig,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let c = cfg.channels;
        Ok(Self {
            channels: c,
            wq: Conv::pointwise(store, &format!("{name}.wq"), c, c / 2, cfg.bias, rng)?,
            wv: Conv::pointwise(store, &format!("{name}.wv"), c, c / 2, cfg.bias, rng)?,
        })
    }

    /// The `[1, H, W]` spatial gate of `x`.
    pub fn attention(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Gate> {
        let (h, w) = expect_channels(tape, x, self.channels)?;
        let half = self.channels / 2;
        let q = self.wq.forward(tape, store, x)?;
        let q = tape.global_avg_pool(q)?;
        let q = tape.reshape(q, [1, half])?;
        let weights = tape.softmax(q, 1)?;
        let v = self.wv.forward(tape, store, x)?;
        let v = tape.reshape(v, [half, h * w])?;
        let s = tape.matmul(weights, v)?;
        let s = tape.reshape(s, [1, h, w])?;
        let map = tape.sigmoid(s)?;
        Ok(Gate { map, weights })
    }
}

/// A PSA block in one of the four layouts.
#[derive(Clone, Debug)]
pub struct PsaBlock {
    pub config: PsaConfig,
    pub channel: Option<ChannelBranch>,
    pub spatial: Option<SpatialBranch>,
}

impl PsaBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        config: PsaConfig,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let channel = if config.layout.has_channel() {
            Some(ChannelBranch::new(
                store,
                &format!("{name}.ch"),
                &config,
                rng,
            )?)
        } else {
            None
        };
        let spatial = if config.layout.has_spatial() {
            Some(SpatialBranch::new(
                store,
                &format!("{name}.sp"),
                &config,
                rng,
            )?)
        } else {
            None
        };
        Ok(Self {
            config,
            channel,
            spatial,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let missing = || Error::Config("PSA branch missing for layout".into());
        match self.config.layout {
            PsaLayout::ChannelOnly => {
                let ch = self.channel.as_ref().ok_or_else(missing)?;
                let gate = ch.attention(tape, store, x)?;
                tape.mul(gate.map, x)
            }
            PsaLayout::SpatialOnly => {
                let sp = self.spatial.as_ref().ok_or_else(missing)?;
                let gate = sp.attention(tape, store, x)?;
                tape.mul(gate.map, x)
            }
            PsaLayout::Parallel => {
                let ch = self.channel.as_ref().ok_or_else(missing)?;
                let sp = self.spatial.as_ref().ok_or_else(missing)?;
                let a_ch = ch.attention(tape, store, x)?;
                let z_ch = tape.mul(a_ch.map, x)?;
                let a_sp = sp.attention(tape, store, x)?;
                let z_sp = tape.mul(a_sp.map, x)?;
                tape.add(z_ch, z_sp)
            }
            PsaLayout::Sequential => {
                let ch = self.channel.as_ref().ok_or_else(missing)?;
                let sp = self.spatial.as_ref().ok_or_else(missing)?;
                let a_ch = ch.attention(tape, store, x)?;
                let z_ch = tape.mul(a_ch.map, x)?;
                let a_sp = sp.attention(tape, store, z_ch)?;
                tape.mul(a_sp.map, z_ch)
            }
        }
    }
}

/// Non-local block: `x + W_z(V·softmax(QᵀK)ᵀ)` with full-width (`C`)
/// query, key and value maps. Row `i` of the similarity matrix holds query
/// position `i` against every key position.
#[derive(Clone, Debug)]
pub struct NonLocalBlock {
    pub channels: usize,
    pub wq: Conv,
    pub wk: Conv,
    pub wv: Conv,
    pub wz: Conv,
}

impl NonLocalBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        AttentionKind::NonLocal.validate_channels(channels)?;
        let c = channels;
        Ok(Self {
            channels,
            wq: Conv::pointwise(store, &format!("{name}.wq"), c, c, true, rng)?,
            wk: Conv::pointwise(store, &format!("{name}.wk"), c, c, true, rng)?,
            wv: Conv::pointwise(store, &format!("{name}.wv"), c, c, true, rng)?,
            wz: Conv::pointwise(store, &format!("{name}.wz"), c, c, true, rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let (h, w) = expect_channels(tape, x, self.channels)?;
        let (c, hw) = (self.channels, h * w);
        let q = self.wq.forward(tape, store, x)?;
        let q = tape.reshape(q, [c, hw])?;
        let k = self.wk.forward(tape, store, x)?;
        let k = tape.reshape(k, [c, hw])?;
        let v = self.wv.forward(tape, store, x)?;
        let v = tape.reshape(v, [c, hw])?;
        let qt = tape.transpose(q)?;
        let sim = tape.matmul(qt, k)?;
        let attn = tape.softmax(sim, 1)?;
        let attn_t = tape.transpose(attn)?;
        let y = tape.matmul(v, attn_t)?;
        let y = tape.reshape(y, [c, h, w])?;
        let a = self.wz.forward(tape, store, y)?;
        tape.add(x, a)
    }
}

/// Squeeze-and-excitation: `x ⊙ σ(FC₂(relu(FC₁(gap(x)))))`, width `C/4`.
#[derive(Clone, Debug)]
pub struct SeBlock {
    pub channels: usize,
    pub fc1: Conv,
    pub fc2: Conv,
}

impl SeBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        AttentionKind::Se.validate_channels(channels)?;
        let r = reduced_width(channels, SE_GC_REDUCTION);
        Ok(Self {
            channels,
            fc1: Conv::pointwise(store, &format!("{name}.fc1"), channels, r, true, rng)?,
            fc2: Conv::pointwise(store, &format!("{name}.fc2"), r, channels, true, rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        expect_channels(tape, x, self.channels)?;
        let p = tape.global_avg_pool(x)?;
        let h = self.fc1.forward(tape, store, p)?;
        let h = tape.relu(h)?;
        let g = self.fc2.forward(tape, store, h)?;
        let g = tape.sigmoid(g)?;
        tape.mul(g, x)
    }
}

/// Global-context block: softmax-pooled context, then a
/// conv–norm–relu–conv transform (`C→C/4→C`) added to every position.
#[derive(Clone, Debug)]
pub struct GcBlock {
    pub channels: usize,
    pub context: Conv,
    pub t1: Conv,
    pub norm: Norm,
    pub t2: Conv,
}

impl GcBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        AttentionKind::Gc.validate_channels(channels)?;
        let r = reduced_width(channels, SE_GC_REDUCTION);
        Ok(Self {
            channels,
            context: Conv::pointwise(store, &format!("{name}.context"), channels, 1, true, rng)?,
            t1: Conv::pointwise(store, &format!("{name}.t1"), channels, r, true, rng)?,
            norm: Norm::new(store, &format!("{name}.norm"), &[r, 1, 1])?,
            t2: Conv::pointwise(store, &format!("{name}.t2"), r, channels, true, rng)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let (h, w) = expect_channels(tape, x, self.channels)?;
        let (c, hw) = (self.channels, h * w);
        let k = self.context.forward(tape, store, x)?;
        let k = tape.reshape(k, [hw, 1])?;
        let weights = tape.softmax(k, 0)?;
        let xv = tape.reshape(x, [c, hw])?;
        let ctx = tape.matmul(xv, weights)?;
        let ctx = tape.reshape(ctx, [c, 1, 1])?;
        let t = self.t1.forward(tape, store, ctx)?;
        let t = self.norm.forward(tape, store, t)?;
        let t = tape.relu(t)?;
        let t = self.t2.forward(tape, store, t)?;
        tape.add(x, t)
    }
}

/// CBAM: channel gate `σ(MLP(avg) + MLP(max))` (shared MLP, width `C/16`)
/// followed by a spatial gate `σ(conv7×7([mean_c, max_c]))`.
#[derive(Clone, Debug)]
pub struct CbamBlock {
    pub channels: usize,
    pub mlp1: Conv,
    pub mlp2: Conv,
    pub spatial: Conv,
}

impl CbamBlock {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        AttentionKind::Cbam.validate_channels(channels)?;
        let r = reduced_width(channels, CBAM_REDUCTION);
        let k = CBAM_SPATIAL_KERNEL;
        Ok(Self {
            channels,
            mlp1: Conv::pointwise(store, &format!("{name}.mlp1"), channels, r, true, rng)?,
            mlp2: Conv::pointwise(store, &format!("{name}.mlp2"), r, channels, true, rng)?,
            spatial: Conv::new(
                store,
                &format!("{name}.spatial"),
                2,
                1,
                k,
                1,
                k / 2,
                true,
                rng,
            )?,
        })
    }

    fn mlp(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let h = self.mlp1.forward(tape, store, x)?;
        let h = tape.relu(h)?;
        self.mlp2.forward(tape, store, h)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        expect_channels(tape, x, self.channels)?;
        let avg = tape.global_avg_pool(x)?;
        let max = tape.global_max_pool(x)?;
        let a = self.mlp(tape, store, avg)?;
        let m = self.mlp(tape, store, max)?;
        let logits = tape.add(a, m)?;
        let ch_gate = tape.sigmoid(logits)?;
        let x1 = tape.mul(ch_gate, x)?;
        let mean_c = tape.channel_mean(x1)?;
        let max_c = tape.channel_max(x1)?;
        let stacked = tape.concat_channels(&[mean_c, max_c])?;
        let s = self.spatial.forward(tape, store, stacked)?;
        let sp_gate = tape.sigmoid(s)?;
        tape.mul(sp_gate, x1)
    }
}

/// Any attention block, built into a shared parameter store.
#[derive(Clone, Debug)]
pub enum AttentionBlock {
    Psa(PsaBlock),
    NonLocal(NonLocalBlock),
    Se(SeBlock),
    Gc(GcBlock),
    Cbam(CbamBlock),
}

impl AttentionBlock {
    pub fn build<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        kind: AttentionKind,
        channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        kind.validate_channels(channels)?;
        Ok(match kind {
            AttentionKind::Psa {
                layout,
                normalize,
                bias,
            } => AttentionBlock::Psa(PsaBlock::new(
                store,
                name,
                PsaConfig {
                    channels,
                    layout,
                    normalize,
                    bias,
                },
                rng,
            )?),
            AttentionKind::NonLocal => {
                AttentionBlock::NonLocal(NonLocalBlock::new(store, name, channels, rng)?)
            }
            AttentionKind::Se => AttentionBlock::Se(SeBlock::new(store, name, channels, rng)?),
            AttentionKind::Gc => AttentionBlock::Gc(GcBlock::new(store, name, channels, rng)?),
            AttentionKind::Cbam => {
                AttentionBlock::Cbam(CbamBlock::new(store, name, channels, rng)?)
            }
        })
    }

    pub fn kind(&self) -> AttentionKind {
        match self {
            AttentionBlock::Psa(b) => b.config.kind(),
            AttentionBlock::NonLocal(_) => AttentionKind::NonLocal,
            AttentionBlock::Se(_) => AttentionKind::Se,
            AttentionBlock::Gc(_) => AttentionKind::Gc,
            AttentionBlock::Cbam(_) => AttentionKind::Cbam,
        }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        match self {
            AttentionBlock::Psa(b) => b.forward(tape, store, x),
            AttentionBlock::NonLocal(b) => b.forward(tape, store, x),
            AttentionBlock::Se(b) => b.forward(tape, store, x),
            AttentionBlock::Gc(b) => b.forward(tape, store, x),
            AttentionBlock::Cbam(b) => b.forward(tape, store, x),
        }
    }

    /// Evaluates one sample without keeping the tape.
    pub fn apply(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let input = tape.input(x.clone());
        let out = self.forward(&mut tape, store, input)?;
        Ok(tape.value(out).clone())
    }

    /// Evaluates a `[N, C, H, W]` batch sample by sample.
    pub fn apply_batch(&self, store: &ParamStore, x: &Tensor) -> Result<Tensor> {
        x.map_batch(|sample| self.apply(store, sample))
    }
}

/// Residual block families that can host an attention block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockKind {
    /// 3×3 → 3×3.
    Basic,
    /// 1×1 → 3×3 → 1×1.
    Bottleneck,
    /// A single 3×3 conv without a skip path.
    Plain,
}

/// One convolution inside a block description.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: usize,
    pub in_channels: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub pad: usize,
}

/// Where an attention block sits inside a residual block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Attachment {
    pub kind: AttentionKind,
    pub channels: usize,
    /// Index into [`BlockSpec::convs`] of the conv the block follows.
    pub after_conv: usize,
}

/// Static description of a (possibly attention-augmented) block.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub in_channels: usize,
    /// Output width of the first 3×3 conv.
    pub width: usize,
    pub out_channels: usize,
    pub stride: usize,
    pub conv_bias: bool,
    pub batch_norm: bool,
    pub attention: Option<Attachment>,
}

impl BlockSpec {
    pub fn basic(in_channels: usize, width: usize, stride: usize) -> Self {
        Self {
            kind: BlockKind::Basic,
            in_channels,
            width,
            out_channels: width,
            stride,
            conv_bias: false,
            batch_norm: true,
            attention: None,
        }
    }

    pub fn bottleneck(in_channels: usize, mid: usize, out_channels: usize, stride: usize) -> Self {
        Self {
            kind: BlockKind::Bottleneck,
            in_channels,
            width: mid,
            out_channels,
            stride,
            conv_bias: false,
            batch_norm: true,
            attention: None,
        }
    }

    pub fn plain(in_channels: usize, out_channels: usize) -> Self {
        Self {
            kind: BlockKind::Plain,
            in_channels,
            width: out_channels,
            out_channels,
            stride: 1,
            conv_bias: false,
            batch_norm: true,
            attention: None,
        }
    }

    pub fn is_residual(&self) -> bool {
        self.kind != BlockKind::Plain
    }

    /// Main-path convolutions in order.
    pub fn convs(&self) -> Vec<ConvSpec> {
        let conv = |kernel, i, o, stride| ConvSpec {
            kernel,
            in_channels: i,
            out_channels: o,
            stride,
            pad: kernel / 2,
        };
        match self.kind {
            BlockKind::Basic => vec![
                conv(3, self.in_channels, self.width, self.stride),
                conv(3, self.width, self.width, 1),
            ],
            BlockKind::Bottleneck => vec![
                conv(1, self.in_channels, self.width, 1),
                conv(3, self.width, self.width, self.stride),
                conv(1, self.width, self.out_channels, 1),
            ],
            BlockKind::Plain => vec![conv(3, self.in_channels, self.out_channels, 1)],
        }
    }

    /// 1×1 projection on the skip path when the shape changes.
    pub fn projection(&self) -> Option<ConvSpec> {
        (self.is_residual() && (self.stride != 1 || self.in_channels != self.out_channels))
            .then_some(ConvSpec {
                kernel: 1,
                in_channels: self.in_channels,
                out_channels: self.out_channels,
                stride: self.stride,
                pad: 0,
            })
    }
}

/// Places `kind` right after the first 3×3 convolution of a residual
/// block, at that convolution's output width.
pub fn attach_to_residual_block(block: &BlockSpec, kind: AttentionKind) -> Result<BlockSpec> {
    if !block.is_residual() {
        return Err(Error::Config(format!(
            "attention can only be attached to residual blocks, got {:?}",
            block.kind
        )));
    }
    let convs = block.convs();
    let after_conv = convs
        .iter()
        .position(|c| c.kernel == 3)
        .ok_or_else(|| Error::Config("residual block has no 3x3 convolution".into()))?;
    let channels = convs[after_conv].out_channels;
    kind.validate_channels(channels)?;
    let mut out = block.clone();
    out.attention = Some(Attachment {
        kind,
        channels,
        after_conv,
    });
    Ok(out)
}
