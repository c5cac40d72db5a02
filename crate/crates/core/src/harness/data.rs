//! Synthetic pixel-wise regression datasets.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Amplitude of the uniform background noise in rendered images.
const BACKGROUND_NOISE: f64 = 0.15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    /// Gaussian keypoint heatmaps, one map per keypoint.
    Heatmap,
    /// Binary masks, one map per foreground class.
    Mask,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Heatmap => "heatmap",
            Task::Mask => "mask",
        })
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "heatmap" => Ok(Task::Heatmap),
            "mask" => Ok(Task::Mask),
            _ => Err(Error::UnknownName(s.to_string())),
        }
    }
}

/// One image with its target stack.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSample {
    /// `[3, H, W]` in `[0, 1]`.
    pub image: Tensor,
    /// `[K, H, W]`.
    pub target: Tensor,
    /// `(row, col)` per keypoint; empty for masks.
    pub keypoints: Vec<(usize, usize)>,
}

/// A batch of samples stored as stacked tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub task: Task,
    /// `[N, 3, H, W]`.
    pub images: Tensor,
    /// `[N, K, H, W]`.
    pub targets: Tensor,
    /// `N` rows of `K` keypoints (heatmap task only).
    pub keypoints: Vec<Vec<(usize, usize)>>,
}

impl Dataset {
    pub fn from_samples(task: Task, samples: &[SyntheticSample]) -> Result<Self> {
        let images: Vec<_> = samples.iter().map(|s| s.image.clone()).collect();
        let targets: Vec<_> = samples.iter().map(|s| s.target.clone()).collect();
        Ok(Self {
            task,
            images: Tensor::stack(&images)?,
            targets: Tensor::stack(&targets)?,
            keypoints: match task {
                Task::Heatmap => samples.iter().map(|s| s.keypoints.clone()).collect(),
                Task::Mask => Vec::new(),
            },
        })
    }

    pub fn len(&self) -> usize {
        self.images.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of target maps `K`.
    pub fn maps(&self) -> usize {
        self.targets.shape()[1]
    }

    pub fn sample(&self, i: usize) -> Result<SyntheticSample> {
        Ok(SyntheticSample {
            image: self.images.sample(i)?,
            target: self.targets.sample(i)?,
            keypoints: self.keypoints.get(i).cloned().unwrap_or_default(),
        })
    }
}

/// Evenly spaced hues at full saturation.
fn palette_color(index: usize, count: usize) -> [f64; 3] {
    let hue = 6.0 * index as f64 / count.max(1) as f64;
    let x = 1.0 - (hue % 2.0 - 1.0).abs();
    match hue as usize {
        0 => [1.0, x, 0.0],
        1 => [x, 1.0, 0.0],
        2 => [0.0, 1.0, x],
        3 => [0.0, x, 1.0],
        4 => [x, 0.0, 1.0],
        _ => [1.0, 0.0, x],
    }
}

fn noise_image<R: Rng>(rng: &mut R, h: usize, w: usize) -> Vec<f64> {
    (0..3 * h * w)
        .map(|_| rng.gen_range(0.0..BACKGROUND_NOISE))
        .collect()
}

/// Margin kept between keypoints and the border.
pub fn keypoint_margin(sigma: f64) -> usize {
    (2.0 * sigma).ceil() as usize
}

/// `exp(−‖p − kp‖² / (2σ²))`.
pub fn gaussian(row: usize, col: usize, kp: (usize, usize), sigma: f64) -> f64 {
    let dr = row as f64 - kp.0 as f64;
    let dc = col as f64 - kp.1 as f64;
    (-(dr * dr + dc * dc) / (2.0 * sigma * sigma)).exp()
}

/// `n` images of `k` coloured blobs on a noisy background; target map `k`
/// is a Gaussian of width `sigma` centred on keypoint `k`.
pub fn gen_keypoint_dataset(
    n: usize,
    h: usize,
    w: usize,
    k: usize,
    sigma: f64,
    seed: u64,
) -> Result<Dataset> {
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Config(format!(
            "sigma must be positive, got {sigma}"
        )));
    }
    if k == 0 || n == 0 {
        return Err(Error::Config(format!("need n, k >= 1, got n={n}, k={k}")));
    }
    let m = keypoint_margin(sigma);
    if h < 2 * m + 1 || w < 2 * m + 1 {
        return Err(Error::Config(format!(
            "{h}x{w} image too small for a {m}-pixel keypoint margin"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        let keypoints: Vec<_> = (0..k)
            .map(|_| (rng.gen_range(m..h - m), rng.gen_range(m..w - m)))
            .collect();
        let mut image = noise_image(&mut rng, h, w);
        let mut target = vec![0.0; k * h * w];
        for (j, &kp) in keypoints.iter().enumerate() {
            let color = palette_color(j, k);
            for r in 0..h {
                for c in 0..w {
                    let g = gaussian(r, c, kp, sigma);
                    target[(j * h + r) * w + c] = g;
                    for (ch, &col) in color.iter().enumerate() {
                        image[(ch * h + r) * w + c] += col * g;
                    }
                }
            }
        }
        image.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
        samples.push(SyntheticSample {
            image: Tensor::new([3, h, w], image)?,
            target: Tensor::new([k, h, w], target)?,
            keypoints,
        });
    }
    Dataset::from_samples(Task::Heatmap, &samples)
}

/// `n` images holding between 0 and `classes` filled rectangles or disks,
/// each of a random class; later shapes cover earlier ones so every pixel
/// has at most one foreground class.
pub fn gen_mask_dataset(
    n: usize,
    h: usize,
    w: usize,
    classes: usize,
    seed: u64,
) -> Result<Dataset> {
    if classes == 0 || n == 0 {
        return Err(Error::Config(format!(
            "need n, classes >= 1, got n={n}, classes={classes}"
        )));
    }
    if h < 4 || w < 4 {
        return Err(Error::Config(format!("{h}x{w} image too small for masks")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut samples = Vec::with_capacity(n);
    for _ in 0..n {
        // 0 = background, otherwise class index + 1.
        let mut label = vec![0usize; h * w];
        for _ in 0..rng.gen_range(0..=classes) {
            let class = rng.gen_range(1..=classes);
            if rng.gen_bool(0.5) {
                let (hh, ww) = (rng.gen_range(h / 4..=h / 2), rng.gen_range(w / 4..=w / 2));
                let (r0, c0) = (rng.gen_range(0..=h - hh), rng.gen_range(0..=w - ww));
                for r in r0..r0 + hh {
                    label[r * w + c0..r * w + c0 + ww].fill(class);
                }
            } else {
                let radius = rng.gen_range(h.min(w) as f64 / 8.0..=h.min(w) as f64 / 4.0);
                let (cr, cc) = (rng.gen_range(0.0..h as f64), rng.gen_range(0.0..w as f64));
                for r in 0..h {
                    for c in 0..w {
                        let (dr, dc) = (r as f64 - cr, c as f64 - cc);
                        if dr * dr + dc * dc <= radius * radius {
                            label[r * w + c] = class;
                        }
                    }
                }
            }
        }
        let mut image = noise_image(&mut rng, h, w);
        let mut target = vec![0.0; classes * h * w];
        for (p, &l) in label.iter().enumerate() {
            if l == 0 {
                continue;
            }
            target[(l - 1) * h * w + p] = 1.0;
            let color = palette_color(l - 1, classes);
            for (ch, &col) in color.iter().enumerate() {
                let v = &mut image[ch * h * w + p];
                *v = (*v + col).min(1.0);
            }
        }
        samples.push(SyntheticSample {
            image: Tensor::new([3, h, w], image)?,
            target: Tensor::new([classes, h, w], target)?,
            keypoints: Vec::new(),
        });
    }
    Dataset::from_samples(Task::Mask, &samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heatmap_peaks_at_keypoint() {
        let d = gen_keypoint_dataset(3, 16, 16, 2, 1.5, 7).unwrap();
        for i in 0..d.len() {
            let s = d.sample(i).unwrap();
            for (j, &(r, c)) in s.keypoints.iter().enumerate() {
                assert_eq!(s.target.at(&[j, r, c]), 1.0);
                let m = keypoint_margin(1.5);
                assert!(r >= m && r < 16 - m && c >= m && c < 16 - m);
            }
            assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn gaussian_at_one_sigma() {
        let v = gaussian(5, 7, (5, 5), 2.0);
        assert!((v - (-0.5f64).exp()).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_data() {
        let a = gen_keypoint_dataset(4, 12, 12, 3, 1.0, 11).unwrap();
        let b = gen_keypoint_dataset(4, 12, 12, 3, 1.0, 11).unwrap();
        assert_eq!(a, b);
        let c = gen_mask_dataset(4, 12, 12, 3, 11).unwrap();
        let d = gen_mask_dataset(4, 12, 12, 3, 11).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn too_small_for_margin() {
        assert!(matches!(
            gen_keypoint_dataset(1, 6, 20, 1, 1.5, 0),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn masks_are_one_hot_or_background() {
        let d = gen_mask_dataset(20, 16, 16, 3, 5).unwrap();
        let mut saw_empty = false;
        for i in 0..d.len() {
            let t = d.sample(i).unwrap().target;
            assert!(t.data().iter().all(|&v| v == 0.0 || v == 1.0));
            for p in 0..256 {
                let s: f64 = (0..3).map(|k| t.data()[k * 256 + p]).sum();
                assert!(s <= 1.0);
            }
            saw_empty |= t.data().iter().all(|&v| v == 0.0);
        }
        assert!(saw_empty, "expected at least one all-background sample");
    }
}
