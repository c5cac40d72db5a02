//! Command-line surface: `psa gradcheck | cost | train | compare | descriptors`.
//!
//! Exit codes: 0 success, 1 failed check or runtime error, 2 usage or
//! configuration error.

pub mod config;
pub mod format;
pub mod metrics;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::attention::AttentionKind;
use crate::cost::{
    builtin_descriptor, cost_of_attention_block, cost_of_model, human, scaling_check, CostTerm,
    Shape3, BUILTIN_NAMES,
};
use crate::error::{Error, Result};
use crate::gradsuite::{run_suite, SUITE_TOLERANCE};
use crate::harness::train::make_datasets;
use crate::harness::{ab_compare, build_toy_net, train, Dataset, TrainConfig};

pub use config::{parse_config, Command, RunConfig};
pub use format::{bind_weights, load_weights, save_weights};
pub use metrics::emit_metrics;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

/// Environment variable overriding the configured seed.
pub const SEED_ENV: &str = "PSA_SEED";

#[derive(Parser, Debug)]
#[command(name = "psa", version, about = "Polarized self-attention toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Sub,
}

#[derive(Subcommand, Debug)]
enum Sub {
    /// Check analytic gradients of every primitive and attention block.
    Gradcheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Print FLOP / parameter / activation counts.
    Cost(CostArgs),
    /// Train the toy network and stream metrics as JSON lines.
    Train(RunArgs),
    /// Compare two attention variants over several seeds.
    Compare(RunArgs),
    /// List the built-in model descriptors.
    Descriptors,
}

#[derive(Args, Debug)]
struct CostArgs {
    /// Built-in model descriptor.
    #[arg(long)]
    model: Option<String>,
    /// Attention block kind (e.g. psa-parallel, nl, se, gc, cbam).
    #[arg(long)]
    kind: Option<String>,
    /// Input shape CxHxW.
    #[arg(long = "input-shape")]
    input_shape: Option<String>,
    /// Comma-separated CxHxW sizes for an exponent fit (needs --kind).
    #[arg(long)]
    grid: Option<String>,
    /// Cost term for --grid: total or similarity.
    #[arg(long, default_value = "total")]
    term: String,
}

#[derive(Args, Debug)]
struct RunArgs {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed (overrides PSA_SEED and the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Initial weights to bind before training (train only).
    #[arg(long)]
    init: Option<PathBuf>,
}

fn parse_shape(s: &str) -> Result<Shape3> {
    let dims: Vec<usize> = s
        .split('x')
        .map(|d| d.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Usage(format!("bad shape `{s}`, expected CxHxW")))?;
    match dims[..] {
        [c, h, w] if c > 0 && h > 0 && w > 0 => Ok([c, h, w]),
        _ => Err(Error::Usage(format!("bad shape `{s}`, expected CxHxW"))),
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Usage(_)
        | Error::Config(_)
        | Error::MalformedJson(_)
        | Error::UnknownKey(_)
        | Error::OutOfRange { .. }
        | Error::UnknownName(_) => EXIT_USAGE,
        _ => EXIT_FAILURE,
    }
}

fn io_err(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

fn print_report(out: &mut dyn Write, params: u64, flops: u64, peak: u64) -> Result<()> {
    writeln!(out, "params {} ({params})", human(params)).map_err(io_err)?;
    writeln!(out, "flops {} ({flops})", human(flops)).map_err(io_err)?;
    writeln!(out, "peak_activation {} ({peak})", human(peak)).map_err(io_err)
}

fn cmd_cost(args: &CostArgs, out: &mut dyn Write) -> Result<i32> {
    let shape = args.input_shape.as_deref().map(parse_shape).transpose()?;
    match (&args.model, &args.kind) {
        (Some(name), None) => {
            let d = builtin_descriptor(name)?;
            let shape = shape.unwrap_or(d.input_shape);
            let r = cost_of_model(&d, shape)?;
            writeln!(
                out,
                "model {name} input {}x{}x{}",
                shape[0], shape[1], shape[2]
            )
            .map_err(io_err)?;
            print_report(out, r.params, r.flops, r.peak_activation)?;
            writeln!(out, "{}", r.to_json()).map_err(io_err)?;
        }
        (None, Some(kind)) => {
            let kind: AttentionKind = kind.parse()?;
            if let Some(grid) = &args.grid {
                let term = match args.term.as_str() {
                    "total" => CostTerm::Total,
                    "similarity" => CostTerm::Similarity,
                    t => return Err(Error::Usage(format!("unknown cost term `{t}`"))),
                };
                let points = grid
                    .split(',')
                    .map(parse_shape)
                    .collect::<Result<Vec<_>>>()?;
                let fit = scaling_check(kind, term, &points)?;
                let show = |e: Option<f64>| e.map_or("-".to_string(), |v| format!("{v:.4}"));
                writeln!(out, "kind {kind} term {}", args.term).map_err(io_err)?;
                writeln!(out, "channel_exponent {}", show(fit.channel_exponent)).map_err(io_err)?;
                writeln!(out, "spatial_exponent {}", show(fit.spatial_exponent)).map_err(io_err)?;
                writeln!(
                    out,
                    "{}",
                    serde_json::to_string(&fit).expect("fit serializes")
                )
                .map_err(io_err)?;
            } else {
                let [c, h, w] = shape
                    .ok_or_else(|| Error::Usage("--kind needs --input-shape or --grid".into()))?;
                let r = cost_of_attention_block(kind, c, h, w)?;
                writeln!(out, "kind {kind} input {c}x{h}x{w}").map_err(io_err)?;
                print_report(out, r.params, r.flops, r.peak_activation)?;
                writeln!(
                    out,
                    "{}",
                    serde_json::to_string(&r).expect("report serializes")
                )
                .map_err(io_err)?;
            }
        }
        _ => {
            return Err(Error::Usage(
                "cost needs exactly one of --model or --kind".into(),
            ))
        }
    }
    Ok(EXIT_OK)
}

fn cmd_gradcheck(seed: u64, out: &mut dyn Write) -> Result<i32> {
    let entries = run_suite(seed)?;
    let mut failed = 0;
    for e in &entries {
        let status = if e.passed { "ok" } else { "FAIL" };
        failed += usize::from(!e.passed);
        writeln!(out, "{:<26} {:.3e}  {status}", e.name, e.max_rel_error).map_err(io_err)?;
    }
    let max = entries.iter().map(|e| e.max_rel_error).fold(0.0, f64::max);
    writeln!(
        out,
        "{} checks, {failed} failed, max relative error {max:.3e} (tolerance {SUITE_TOLERANCE:.0e})",
        entries.len()
    )
    .map_err(io_err)?;
    Ok(if failed == 0 { EXIT_OK } else { EXIT_FAILURE })
}

fn cmd_descriptors(out: &mut dyn Write) -> Result<i32> {
    for name in BUILTIN_NAMES {
        let d = builtin_descriptor(name)?;
        let r = cost_of_model(&d, d.input_shape)?;
        let [c, h, w] = d.input_shape;
        writeln!(
            out,
            "{name:<30} input {c}x{h}x{w}  layers {:>3}  params {:>8}  flops {:>8}",
            d.layers.len(),
            human(r.params),
            human(r.flops)
        )
        .map_err(io_err)?;
    }
    Ok(EXIT_OK)
}

fn load_run_config(args: &RunArgs, command: Command, env_seed: Option<&str>) -> Result<RunConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            parse_config(&text)?
        }
        None => RunConfig::default(),
    };
    cfg.command = command;
    let env = env_seed
        .map(|s| {
            s.trim()
                .parse::<u64>()
                .map_err(|_| Error::Usage(format!("{SEED_ENV}=`{s}` is not an unsigned integer")))
        })
        .transpose()?;
    if let Some(seed) = args.seed.or(env) {
        cfg.train.seed = seed;
        let n = cfg.seeds.len() as u64;
        cfg.seeds = (seed..seed + n).collect();
    }
    if let Some(dir) = &args.out {
        cfg.out = Some(dir.clone());
    }
    cfg.validate()?;
    Ok(cfg)
}

fn cache_name(cfg: &TrainConfig, split: &str) -> String {
    format!(
        "{}-seed{}-n{}-{}px-k{}-s{}.{split}.psaw",
        cfg.task,
        cfg.seed,
        if split == "train" {
            cfg.train_samples
        } else {
            cfg.val_samples
        },
        cfg.image_size,
        cfg.maps,
        cfg.sigma
    )
}

fn datasets(cfg: &RunConfig) -> Result<(Dataset, Dataset)> {
    let Some(dir) = &cfg.dataset_cache else {
        return make_datasets(&cfg.train);
    };
    let (tp, vp) = (
        dir.join(cache_name(&cfg.train, "train")),
        dir.join(cache_name(&cfg.train, "val")),
    );
    if tp.exists() && vp.exists() {
        return Ok((format::load_dataset(&tp)?, format::load_dataset(&vp)?));
    }
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (t, v) = make_datasets(&cfg.train)?;
    format::save_dataset(&t, &tp)?;
    format::save_dataset(&v, &vp)?;
    Ok((t, v))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn cmd_train(
    args: &RunArgs,
    env_seed: Option<&str>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> Result<i32> {
    let cfg = load_run_config(args, Command::Train, env_seed)?;
    let (train_set, val_set) = datasets(&cfg)?;
    let mut net = build_toy_net(cfg.train.net_config(), cfg.train.seed)?;
    if let Some(path) = &args.init {
        bind_weights(&mut net.store, &load_weights(path)?)?;
    }
    let history = train(&mut net, &train_set, &val_set, &cfg.train)?;
    emit_metrics(&history, out)?;
    if let Some(dir) = &cfg.out {
        ensure_dir(dir)?;
        let mut buf = Vec::new();
        emit_metrics(&history, &mut buf)?;
        format::write_atomic(&dir.join("metrics.jsonl"), &buf)?;
        save_weights(&net.store, &dir.join("weights.psaw"))?;
        let cfg_json = serde_json::to_string_pretty(&cfg).expect("config serializes");
        format::write_atomic(&dir.join("config.json"), cfg_json.as_bytes())?;
    }
    if let Some(last) = history.last() {
        let _ = writeln!(
            err,
            "variant {} seed {} params {}: val_loss {:.6} metric {:.4}",
            cfg.train.variant,
            cfg.train.seed,
            net.num_params(),
            last.val_loss,
            last.metric
        );
    }
    Ok(EXIT_OK)
}

fn cmd_compare(args: &RunArgs, env_seed: Option<&str>, out: &mut dyn Write) -> Result<i32> {
    if args.init.is_some() {
        return Err(Error::Usage("--init applies to train only".into()));
    }
    let cfg = load_run_config(args, Command::Compare, env_seed)?;
    let summary = ab_compare(&cfg.train, &cfg.train_b(), &cfg.seeds)?;
    for row in &summary.rows {
        writeln!(
            out,
            "seed {:<4} {:<24} val_loss {:.6}  metric {:.4}",
            row.seed, row.variant, row.val_loss, row.metric
        )
        .map_err(io_err)?;
    }
    writeln!(
        out,
        "median {}: val_loss {:.6} metric {:.4}\nmedian {}: val_loss {:.6} metric {:.4}\ndifference (b - a): val_loss {:+.6} metric {:+.4}",
        summary.variant_a,
        summary.median_a.val_loss,
        summary.median_a.metric,
        summary.variant_b,
        summary.median_b.val_loss,
        summary.median_b.metric,
        summary.median_difference.val_loss,
        summary.median_difference.metric
    )
    .map_err(io_err)?;
    let json = serde_json::to_string(&summary).expect("summary serializes");
    writeln!(out, "{json}").map_err(io_err)?;
    if let Some(dir) = &cfg.out {
        ensure_dir(dir)?;
        format::write_atomic(&dir.join("compare.json"), json.as_bytes())?;
    }
    Ok(EXIT_OK)
}

/// Runs one command with explicit streams and seed environment.
pub fn run_with<I, T>(
    argv: I,
    env_seed: Option<&str>,
    out: &mut dyn Write,
    err: &mut dyn Write,
) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if code == EXIT_OK {
                write!(out, "{rendered}")
            } else {
                write!(err, "{rendered}")
            };
            return code;
        }
    };
    let result = match &cli.command {
        Sub::Gradcheck { seed } => cmd_gradcheck(*seed, out),
        Sub::Cost(a) => cmd_cost(a, out),
        Sub::Train(a) => cmd_train(a, env_seed, out, err),
        Sub::Compare(a) => cmd_compare(a, env_seed, out),
        Sub::Descriptors => cmd_descriptors(out),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(err, "error[{}]: {e}", e.code());
            exit_code(&e)
        }
    }
}

/// Entry point used by the `psa` binary.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let env_seed = std::env::var(SEED_ENV).ok();
    let stdout = std::io::stdout();
    let stderr = std::io::stderr();
    run_with(
        argv,
        env_seed.as_deref(),
        &mut stdout.lock(),
        &mut stderr.lock(),
    )
}
