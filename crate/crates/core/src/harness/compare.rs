//! Seeded comparison of attention variants.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::harness::net::Variant;
use crate::harness::train::{run_experiment, TrainConfig};

/// Minimum number of seeds for a comparison.
pub const MIN_SEEDS: usize = 3;

/// Final validation numbers of one run.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeedRow {
    pub seed: u64,
    pub variant: String,
    pub val_loss: f64,
    pub metric: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Medians {
    pub val_loss: f64,
    pub metric: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AbSummary {
    pub variant_a: String,
    pub variant_b: String,
    pub rows: Vec<SeedRow>,
    pub median_a: Medians,
    pub median_b: Medians,
    /// `median_b − median_a`.
    pub median_difference: Medians,
}

/// Median of a non-empty slice; even lengths average the middle pair.
pub fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Medians over the rows belonging to `variant`.
pub fn medians_of(rows: &[SeedRow], variant: &str) -> Medians {
    let pick = |f: fn(&SeedRow) -> f64| {
        let v: Vec<f64> = rows
            .iter()
            .filter(|r| r.variant == variant)
            .map(f)
            .collect();
        median(&v)
    };
    Medians {
        val_loss: pick(|r| r.val_loss),
        metric: pick(|r| r.metric),
    }
}

/// Trains `base` once per (seed, variant) pair. Runs are independent and
/// may execute concurrently; rows come back seed-major in input order.
pub fn run_seeds(base: &TrainConfig, variants: &[Variant], seeds: &[u64]) -> Result<Vec<SeedRow>> {
    let jobs: Vec<(u64, Variant)> = seeds
        .iter()
        .flat_map(|&s| variants.iter().map(move |&v| (s, v)))
        .collect();
    jobs.par_iter()
        .map(|&(seed, variant)| {
            let cfg = TrainConfig {
                seed,
                variant,
                ..base.clone()
            };
            let last = run_experiment(&cfg)?.last();
            Ok(SeedRow {
                seed,
                variant: variant.to_string(),
                val_loss: last.val_loss,
                metric: last.metric,
            })
        })
        .collect()
}

/// Runs `cfg_a` and `cfg_b` over `seeds` and summarizes final validation
/// loss and metric per variant.
pub fn ab_compare(cfg_a: &TrainConfig, cfg_b: &TrainConfig, seeds: &[u64]) -> Result<AbSummary> {
    if seeds.len() < MIN_SEEDS {
        return Err(Error::Config(format!(
            "need at least {MIN_SEEDS} seeds, got {}",
            seeds.len()
        )));
    }
    let aligned = TrainConfig {
        variant: cfg_a.variant,
        seed: cfg_a.seed,
        ..cfg_b.clone()
    };
    if aligned != *cfg_a {
        return Err(Error::Config(
            "configs differ in more than the attention variant".into(),
        ));
    }
    let run = |cfg: &TrainConfig| run_seeds(cfg, &[cfg.variant], seeds);
    let (rows_a, rows_b) = (run(cfg_a)?, run(cfg_b)?);
    let stats = |rows: &[SeedRow]| Medians {
        val_loss: median(&rows.iter().map(|r| r.val_loss).collect::<Vec<_>>()),
        metric: median(&rows.iter().map(|r| r.metric).collect::<Vec<_>>()),
    };
    let (median_a, median_b) = (stats(&rows_a), stats(&rows_b));
    Ok(AbSummary {
        variant_a: cfg_a.variant.to_string(),
        variant_b: cfg_b.variant.to_string(),
        rows: rows_a.into_iter().chain(rows_b).collect(),
        median_a,
        median_b,
        median_difference: Medians {
            val_loss: median_b.val_loss - median_a.val_loss,
            metric: median_b.metric - median_a.metric,
        },
    })
}
