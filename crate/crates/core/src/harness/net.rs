//! Toy residual network for the synthetic tasks.

use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::attention::{attach_to_residual_block, AttentionBlock, AttentionKind, BlockSpec};
use crate::cost::{toy_net_descriptor, Descriptor};
use crate::error::{Error, Result};
use crate::layers::Conv;
use crate::tape::{ParamStore, Tape, Var};
use crate::tensor::Tensor;

/// Attention variant of the toy net: none, or one attention kind.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Baseline,
    Attention(AttentionKind),
}

impl Variant {
    pub fn attention(self) -> Option<AttentionKind> {
        match self {
            Variant::Baseline => None,
            Variant::Attention(k) => Some(k),
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Baseline => f.write_str("none"),
            Variant::Attention(k) => k.fmt(f),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Variant::Baseline),
            _ => s.parse().map(Variant::Attention),
        }
    }
}

impl Serialize for Variant {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Variant {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ToyNetConfig {
    pub width: usize,
    pub depth: usize,
    pub in_channels: usize,
    pub outputs: usize,
    pub variant: Variant,
}

#[derive(Clone, Debug)]
struct ResidualBlock {
    conv1: Conv,
    attention: Option<AttentionBlock>,
    conv2: Conv,
}

/// Stem conv3×3 + ReLU, `depth` basic residual blocks, 1×1 head.
#[derive(Clone, Debug)]
pub struct ToyNet {
    pub config: ToyNetConfig,
    pub store: ParamStore,
    stem: Conv,
    blocks: Vec<ResidualBlock>,
    head: Conv,
}

/// Builds the net. Backbone and attention weights come from separate
/// streams of `seed`, so two variants share identical backbone weights.
pub fn build_toy_net(config: ToyNetConfig, seed: u64) -> Result<ToyNet> {
    let ToyNetConfig {
        width,
        depth,
        in_channels,
        outputs,
        variant,
    } = config;
    if width == 0 || in_channels == 0 || outputs == 0 {
        return Err(Error::Config(format!(
            "width, input channels and outputs must be >= 1 (got {width}, {in_channels}, {outputs})"
        )));
    }
    let mut backbone_rng = ChaCha8Rng::seed_from_u64(seed);
    backbone_rng.set_stream(1);
    let mut attention_rng = ChaCha8Rng::seed_from_u64(seed);
    attention_rng.set_stream(2);

    let mut store = ParamStore::new();
    let stem = Conv::new(
        &mut store,
        "stem",
        in_channels,
        width,
        3,
        1,
        1,
        true,
        &mut backbone_rng,
    )?;
    let mut blocks = Vec::with_capacity(depth);
    for b in 0..depth {
        let mut spec = BlockSpec::basic(width, width, 1);
        spec.conv_bias = true;
        spec.batch_norm = false;
        if let Some(kind) = variant.attention() {
            spec = attach_to_residual_block(&spec, kind)?;
        }
        let name = format!("block{b}");
        let conv1 = Conv::new(
            &mut store,
            &format!("{name}.conv1"),
            width,
            width,
            3,
            1,
            1,
            true,
            &mut backbone_rng,
        )?;
        let conv2 = Conv::new(
            &mut store,
            &format!("{name}.conv2"),
            width,
            width,
            3,
            1,
            1,
            true,
            &mut backbone_rng,
        )?;
        let attention = match spec.attention {
            Some(att) => Some(AttentionBlock::build(
                &mut store,
                &format!("{name}.attn"),
                att.kind,
                att.channels,
                &mut attention_rng,
            )?),
            None => None,
        };
        blocks.push(ResidualBlock {
            conv1,
            attention,
            conv2,
        });
    }
    let head = Conv::pointwise(&mut store, "head", width, outputs, true, &mut backbone_rng)?;
    Ok(ToyNet {
        config,
        store,
        stem,
        blocks,
        head,
    })
}

impl ToyNet {
    /// `[3, H, W]` → `[K, H, W]` on an existing tape.
    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let store = &self.store;
        let h = self.stem.forward(tape, store, x)?;
        let mut h = tape.relu(h)?;
        for block in &self.blocks {
            let mut y = block.conv1.forward(tape, store, h)?;
            if let Some(att) = &block.attention {
                y = att.forward(tape, store, y)?;
            }
            let y = tape.relu(y)?;
            let y = block.conv2.forward(tape, store, y)?;
            let y = tape.add(y, h)?;
            h = tape.relu(y)?;
        }
        self.head.forward(tape, store, h)
    }

    /// Forward pass on one image without keeping the tape.
    pub fn predict(&self, image: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let x = tape.input(image.clone());
        let out = self.forward(&mut tape, x)?;
        Ok(tape.value(out).clone())
    }

    pub fn num_params(&self) -> usize {
        self.store.num_scalars()
    }

    /// Static description matching this net at `image`×`image` input.
    pub fn descriptor(&self, image: usize) -> Result<Descriptor> {
        let c = self.config;
        let mut d = toy_net_descriptor(c.width, c.depth, c.outputs, image, c.variant.attention())?;
        d.input_shape[0] = c.in_channels;
        Ok(d)
    }
}
