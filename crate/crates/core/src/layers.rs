//! Parameterized layers shared by the attention blocks and the toy network.

use rand::Rng;

use crate::error::Result;
use crate::tape::{ParamId, ParamStore, Tape, Var};
use crate::tensor::Tensor;

/// Weight tensor drawn from `U(−1/√fan_in, 1/√fan_in)`.
pub fn fan_in_uniform<R: Rng + ?Sized>(
    rng: &mut R,
    shape: impl Into<Vec<usize>>,
    fan_in: usize,
) -> Result<Tensor> {
    let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
    Tensor::from_fn(shape, |_| rng.gen_range(-bound..=bound))
}

/// Square-kernel convolution with learnable weight and optional bias.
///
/// A 1×1 convolution stores its weight as a `[C_out, C_in]` matrix; larger
/// kernels use `[C_out, C_in, k, k]`.
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = in_channels * kernel * kernel;
        let shape = if kernel == 1 {
            vec![out_channels, in_channels]
        } else {
            vec![out_channels, in_channels, kernel, kernel]
        };
        let weight = store.add(
            format!("{name}.weight"),
            fan_in_uniform(rng, shape, fan_in)?,
        )?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros([out_channels])?)?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            in_channels,
            out_channels,
            kernel,
            stride,
            pad,
        })
    }

    pub fn pointwise<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        Self::new(store, name, in_channels, out_channels, 1, 1, 0, bias, rng)
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let b = self.bias.map(|id| tape.param(store, id));
        if self.kernel == 1 && self.stride == 1 && self.pad == 0 {
            tape.conv1x1(x, w, b)
        } else {
            tape.conv2d(x, w, b, self.stride, self.pad)
        }
    }

    pub fn param_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        std::iter::once(self.weight).chain(self.bias)
    }

    /// Zeroes weight and bias.
    pub fn zero(&self, store: &mut ParamStore) {
        for id in self.param_ids() {
            store.get_mut(id).value_mut().fill(0.0);
        }
    }
}

/// Layer norm over a whole `[C, 1, 1]` tensor with elementwise affine.
#[derive(Clone, Debug)]
pub struct Norm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl Norm {
    pub fn new(store: &mut ParamStore, name: &str, shape: &[usize]) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::ones(shape.to_vec())?)?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(shape.to_vec())?)?,
        })
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        tape.layer_norm(x, g, b)
    }
}
