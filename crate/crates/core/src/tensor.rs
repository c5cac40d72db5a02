use std::fmt;

use crate::error::{shape_err, Result};

/// Dense row-major tensor of `f64`, rank 1 to 4.
///
/// Rank-4 tensors are laid out NCHW; lower ranks drop leading axes, so a
/// single sample is `[C, H, W]`.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

pub const MAX_RANK: usize = 4;

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(shape_err!(
            "rank must be 1..={MAX_RANK}, got shape {shape:?}"
        ));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<f64>) -> Result<Self> {
        let shape = shape.into();
        let numel = check_shape(&shape)?;
        if numel != data.len() {
            return Err(shape_err!(
                "shape {shape:?} holds {numel} elements but {} were given",
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: f64) -> Result<Self> {
        let shape = shape.into();
        let numel = check_shape(&shape)?;
        Ok(Self {
            shape,
            data: vec![value; numel],
        })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(shape, 1.0)
    }

    /// A rank-1 tensor with a single element.
    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, f: impl FnMut(usize) -> f64) -> Result<Self> {
        let shape = shape.into();
        let numel = check_shape(&shape)?;
        Ok(Self {
            shape,
            data: (0..numel).map(f).collect(),
        })
    }

    /// Zero tensor of the same shape.
    pub fn zeros_like(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            data: vec![0.0; self.data.len()],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(shape_err!("item() on tensor of shape {:?}", self.shape));
        }
        Ok(self.data[0])
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshape(&self, new_shape: impl Into<Vec<usize>>) -> Result<Self> {
        let new_shape = new_shape.into();
        let numel = check_shape(&new_shape)?;
        if numel != self.numel() {
            return Err(shape_err!(
                "cannot reshape {:?} ({} elements) to {new_shape:?} ({numel} elements)",
                self.shape,
                self.numel()
            ));
        }
        Ok(Self {
            shape: new_shape,
            data: self.data.clone(),
        })
    }

    /// Row-major flat offset of a multi-index.
    pub fn offset(&self, index: &[usize]) -> usize {
        debug_assert_eq!(index.len(), self.shape.len());
        index
            .iter()
            .zip(&self.shape)
            .fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn at(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    /// `(C, H, W)` of a rank-3 tensor.
    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(shape_err!("expected [C, H, W], got {:?}", self.shape)),
        }
    }

    /// `(M, N)` of a rank-2 tensor.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [m, n] => Ok((m, n)),
            _ => Err(shape_err!("expected a matrix, got {:?}", self.shape)),
        }
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> Result<f64> {
        if self.shape != other.shape {
            return Err(shape_err!(
                "cannot compare {:?} with {:?}",
                self.shape,
                other.shape
            ));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// Sample `n` of a rank-4 batch, as a rank-3 tensor.
    pub fn sample(&self, n: usize) -> Result<Self> {
        let [batch, c, h, w] = self.shape[..] else {
            return Err(shape_err!("expected [N, C, H, W], got {:?}", self.shape));
        };
        if n >= batch {
            return Err(shape_err!("sample {n} out of range for batch of {batch}"));
        }
        let len = c * h * w;
        Ok(Self {
            shape: vec![c, h, w],
            data: self.data[n * len..(n + 1) * len].to_vec(),
        })
    }

    /// Stacks equally shaped tensors along a new leading axis.
    pub fn stack(items: &[Tensor]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| shape_err!("cannot stack zero tensors"))?;
        let mut shape = vec![items.len()];
        shape.extend_from_slice(&first.shape);
        check_shape(&shape)?;
        let mut data = Vec::with_capacity(items.len() * first.numel());
        for t in items {
            if t.shape != first.shape {
                return Err(shape_err!(
                    "cannot stack {:?} with {:?}",
                    first.shape,
                    t.shape
                ));
            }
            data.extend_from_slice(&t.data);
        }
        Ok(Self { shape, data })
    }

    /// Applies a per-sample map over the leading batch axis of `[N, C, H, W]`.
    pub fn map_batch(&self, mut f: impl FnMut(&Tensor) -> Result<Tensor>) -> Result<Tensor> {
        let batch = match self.shape[..] {
            [n, _, _, _] => n,
            _ => return Err(shape_err!("expected [N, C, H, W], got {:?}", self.shape)),
        };
        let outs = (0..batch)
            .map(|n| f(&self.sample(n)?))
            .collect::<Result<Vec<_>>>()?;
        Tensor::stack(&outs)
    }
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?}", self.shape)?;
        let head: Vec<_> = self.data.iter().take(SHOWN).collect();
        if self.data.len() > SHOWN {
            write!(f, " {head:?}...")
        } else {
            write!(f, " {head:?}")
        }
    }
}
