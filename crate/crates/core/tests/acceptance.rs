//! Acceptance criteria. Prints one PASS/FAIL line per criterion and exits
//! nonzero if a hard criterion fails.

use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use psa_core::attention::{
    AttentionBlock, AttentionKind, ChannelBranch, PsaBlock, PsaConfig, PsaLayout, SpatialBranch,
};
use psa_core::cli::format::{bind_weights, decode, encode, store_entries};
use psa_core::cost::{
    attention_param_count, cost_of_model, resnet50_simplebaseline, resnet_psa_kind, scaling_check,
    CostTerm,
};
use psa_core::gradsuite::{run_suite, SUITE_INPUT, SUITE_TOLERANCE};
use psa_core::harness::compare::medians_of;
use psa_core::harness::{build_toy_net, run_seeds, TrainConfig, Variant};
use psa_core::{ParamStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    passed: bool,
    soft: bool,
    detail: String,
}

impl Verdict {
    fn hard(passed: bool, detail: String) -> Self {
        Self {
            passed,
            soft: false,
            detail,
        }
    }
}

fn within(value: f64, target: f64, rel: f64) -> bool {
    (value / target - 1.0).abs() <= rel
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let entries = match run_suite(0) {
        Ok(e) => e,
        Err(e) => return Verdict::hard(false, format!("suite error: {e}")),
    };
    let elapsed = start.elapsed();
    let worst = entries
        .iter()
        .max_by(|a, b| a.max_rel_error.total_cmp(&b.max_rel_error))
        .expect("suite is not empty");
    let failed: Vec<_> = entries
        .iter()
        .filter(|e| !e.passed)
        .map(|e| e.name.clone())
        .collect();
    Verdict::hard(
        failed.is_empty() && elapsed < Duration::from_secs(60),
        format!(
            "{} checks on {:?}, worst {} at {:.2e} (< {:.0e}), failed {:?}, {:.2}s",
            entries.len(),
            SUITE_INPUT,
            worst.name,
            worst.max_rel_error,
            SUITE_TOLERANCE,
            failed,
            elapsed.as_secs_f64()
        ),
    )
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| r.gen_range(-2.0..2.0)).unwrap()
}

fn randomize(store: &mut ParamStore, r: &mut ChaCha8Rng) {
    for p in store.iter_mut() {
        let v = random(r, p.value().shape());
        p.set_value(v).unwrap();
    }
}

fn permute(x: &Tensor, perm: &[usize]) -> Tensor {
    let (c, h, w) = x.dims3().unwrap();
    let hw = h * w;
    Tensor::from_fn([c, h, w], |i| x.data()[(i / hw) * hw + perm[i % hw]]).unwrap()
}

fn criterion_2() -> Verdict {
    const EXACT: f64 = 1e-12;
    let mut worst_sum: f64 = 0.0;
    let mut worst_sym: f64 = 0.0;
    let mut worst_oracle: f64 = 0.0;
    let mut ranges_ok = true;
    let mut shapes_ok = true;

    for seed in 0..10 {
        let mut r = rng(seed);
        let mut store = ParamStore::new();
        let cfg = PsaConfig::new(8, PsaLayout::Parallel);
        let ch = ChannelBranch::new(&mut store, "ch", &cfg, &mut r).unwrap();
        let sp = SpatialBranch::new(&mut store, "sp", &cfg, &mut r).unwrap();
        randomize(&mut store, &mut r);
        let x = random(&mut r, &[8, 5, 6]);
        let mut perm: Vec<usize> = (0..30).collect();
        for i in (1..30).rev() {
            perm.swap(i, r.gen_range(0..=i));
        }
        let gates = |x: &Tensor| {
            let mut tape = Tape::new();
            let xv = tape.input(x.clone());
            let a = ch.attention(&mut tape, &store, xv).unwrap();
            let b = sp.attention(&mut tape, &store, xv).unwrap();
            let v = |t: psa_core::Var| tape.value(t).clone();
            (v(a.map), v(a.weights), v(b.map), v(b.weights))
        };
        let (a_ch, w_ch, a_sp, w_sp) = gates(&x);
        let (p_ch, _, p_sp, _) = gates(&permute(&x, &perm));
        for w in [&w_ch, &w_sp] {
            worst_sum = worst_sum.max((w.data().iter().sum::<f64>() - 1.0).abs());
        }
        ranges_ok &= a_ch
            .data()
            .iter()
            .chain(a_sp.data())
            .all(|&v| v > 0.0 && v < 1.0);
        worst_sym = worst_sym
            .max(a_ch.max_abs_diff(&p_ch).unwrap())
            .max(permute(&a_sp, &perm).max_abs_diff(&p_sp).unwrap());

        for kind in AttentionKind::all_default() {
            let mut store = ParamStore::new();
            let block = AttentionBlock::build(&mut store, "b", kind, 8, &mut r).unwrap();
            randomize(&mut store, &mut r);
            let y = block.apply(&store, &x).unwrap();
            shapes_ok &= y.shape() == x.shape();
            if kind != AttentionKind::Cbam {
                let yp = block.apply(&store, &permute(&x, &perm)).unwrap();
                worst_sym = worst_sym.max(permute(&y, &perm).max_abs_diff(&yp).unwrap());
            }
        }
    }

    let x = random(&mut rng(99), &[16, 4, 5]);
    let scaled = |k: f64| Tensor::from_fn([16, 4, 5], |i| k * x.data()[i]).unwrap();
    for (layout, k) in [(PsaLayout::Parallel, 1.0), (PsaLayout::Sequential, 0.25)] {
        let mut store = ParamStore::new();
        let block =
            PsaBlock::new(&mut store, "p", PsaConfig::new(16, layout), &mut rng(1)).unwrap();
        randomize(&mut store, &mut rng(2));
        block.channel.as_ref().unwrap().wz.zero(&mut store);
        block.spatial.as_ref().unwrap().wv.zero(&mut store);
        let mut tape = Tape::new();
        let xv = tape.input(x.clone());
        let y = block.forward(&mut tape, &store, xv).unwrap();
        worst_oracle = worst_oracle.max(tape.value(y).max_abs_diff(&scaled(k)).unwrap());
    }
    for (kind, k) in [
        (AttentionKind::NonLocal, 1.0),
        (AttentionKind::Se, 0.5),
        (AttentionKind::Gc, 1.0),
        (AttentionKind::Cbam, 0.25),
    ] {
        let mut store = ParamStore::new();
        let block = AttentionBlock::build(&mut store, "b", kind, 16, &mut rng(3)).unwrap();
        randomize(&mut store, &mut rng(4));
        match &block {
            AttentionBlock::NonLocal(b) => b.wz.zero(&mut store),
            AttentionBlock::Se(b) => {
                b.fc1.zero(&mut store);
                b.fc2.zero(&mut store);
            }
            AttentionBlock::Gc(b) => b.t2.zero(&mut store),
            AttentionBlock::Cbam(b) => {
                b.mlp1.zero(&mut store);
                b.mlp2.zero(&mut store);
                b.spatial.zero(&mut store);
            }
            AttentionBlock::Psa(_) => unreachable!(),
        }
        let y = block.apply(&store, &x).unwrap();
        worst_oracle = worst_oracle.max(y.max_abs_diff(&scaled(k)).unwrap());
    }

    Verdict::hard(
        worst_sum <= EXACT && worst_sym <= EXACT && worst_oracle <= EXACT && ranges_ok && shapes_ok,
        format!(
            "softmax sum err {worst_sum:.1e}, symmetry err {worst_sym:.1e}, \
             degenerate oracle err {worst_oracle:.1e}, gates in (0,1) {ranges_ok}, shapes {shapes_ok}"
        ),
    )
}

fn criterion_3() -> Verdict {
    let grid = [[64, 32, 32], [64, 64, 64], [64, 128, 128]];
    let psa = scaling_check(
        AttentionKind::psa(PsaLayout::Parallel),
        CostTerm::Total,
        &grid,
    )
    .unwrap()
    .spatial_exponent
    .unwrap();
    let nl = scaling_check(AttentionKind::NonLocal, CostTerm::Similarity, &grid)
        .unwrap()
        .spatial_exponent
        .unwrap();

    let mut kinds = AttentionKind::all_default();
    for layout in PsaLayout::ALL {
        kinds.push(AttentionKind::Psa {
            layout,
            normalize: true,
            bias: false,
        });
    }
    let mut mismatches = Vec::new();
    for kind in kinds {
        for c in [16, 64, 256] {
            let mut store = ParamStore::new();
            AttentionBlock::build(&mut store, "b", kind, c, &mut rng(0)).unwrap();
            let enumerated = store.num_scalars() as u64;
            if attention_param_count(kind, c).unwrap() != enumerated {
                mismatches.push(format!("{kind}@{c}"));
            }
        }
    }
    let mut store = ParamStore::new();
    let cfg = PsaConfig {
        bias: false,
        ..PsaConfig::new(64, PsaLayout::SpatialOnly)
    };
    SpatialBranch::new(&mut store, "sp", &cfg, &mut rng(0)).unwrap();
    let spatial = store.num_scalars();

    Verdict::hard(
        (psa - 1.0).abs() <= 0.05
            && (nl - 2.0).abs() <= 0.05
            && mismatches.is_empty()
            && spatial == 2 * 64 * 32,
        format!(
            "PSA spatial exponent {psa:.4} (1 ± 0.05), NL similarity exponent {nl:.4} (2 ± 0.05), \
             param enumeration mismatches {mismatches:?}, spatial branch weights at C=64: {spatial} (2·C·C/2 = {})",
            2 * 64 * 32
        ),
    )
}

fn criterion_4() -> Verdict {
    let start = Instant::now();
    let shape = [3, 384, 288];
    let base = cost_of_model(&resnet50_simplebaseline(None).unwrap(), shape).unwrap();
    let psa = cost_of_model(
        &resnet50_simplebaseline(Some(resnet_psa_kind())).unwrap(),
        shape,
    )
    .unwrap();
    let biased_kind = AttentionKind::psa(PsaLayout::Parallel);
    let biased =
        cost_of_model(&resnet50_simplebaseline(Some(biased_kind)).unwrap(), shape).unwrap();
    let elapsed = start.elapsed();
    let added = (psa.params - base.params) as f64;
    let added_biased = (biased.params - base.params) as f64;
    Verdict::hard(
        within(base.params as f64, 34.0e6, 0.03)
            && within(base.flops as f64, 20.0e9, 0.10)
            && within(added, 2.1e6, 0.20)
            && elapsed < Duration::from_secs(1),
        format!(
            "params {} ({:+.2}% vs 34.0M), flops {} ({:+.2}% vs 20.0G), PSA adds {} ({:+.2}% vs 2.1M; \
             with conv biases {} = {:+.2}%), {:.3}s",
            base.params,
            (base.params as f64 / 34.0e6 - 1.0) * 100.0,
            base.flops,
            (base.flops as f64 / 20.0e9 - 1.0) * 100.0,
            added,
            (added / 2.1e6 - 1.0) * 100.0,
            added_biased,
            (added_biased / 2.1e6 - 1.0) * 100.0,
            elapsed.as_secs_f64()
        ),
    )
}

fn criteria_5_and_6() -> (Verdict, Verdict) {
    let base = TrainConfig::default();
    let variants: Vec<Variant> = ["none", "psa-parallel", "psa-sequential"]
        .iter()
        .map(|v| v.parse().unwrap())
        .collect();
    let seeds = [0, 1, 2, 3, 4];
    let start = Instant::now();
    let rows = run_seeds(&base, &variants, &seeds).expect("toy runs succeed");
    let elapsed = start.elapsed();
    let none = medians_of(&rows, "none");
    let par = medians_of(&rows, "psa-parallel");
    let seq = medians_of(&rows, "psa-sequential");
    for row in &rows {
        println!(
            "    seed {} {:<15} val_mse {:.6} pck@{} {:.4}",
            row.seed, row.variant, row.val_loss, base.pck_radius, row.metric
        );
    }

    let five = Verdict::hard(
        par.val_loss < none.val_loss
            && par.metric >= none.metric
            && elapsed < Duration::from_secs(20 * 60),
        format!(
            "median val MSE none {:.6} vs psa-parallel {:.6}; median PCK@{} none {:.4} vs psa-parallel {:.4}; {:.0}s",
            none.val_loss,
            par.val_loss,
            base.pck_radius,
            none.metric,
            par.metric,
            elapsed.as_secs_f64()
        ),
    );
    let gap = (par.val_loss - seq.val_loss).abs();
    let improvement = none.val_loss - par.val_loss;
    let six = Verdict {
        passed: improvement > 0.0 && gap <= 0.15 * improvement,
        soft: true,
        detail: format!(
            "|parallel - sequential| = {gap:.6} vs 15% of improvement {improvement:.6} = {:.6} \
             (sequential median {:.6})",
            0.15 * improvement,
            seq.val_loss
        ),
    };
    (five, six)
}

fn criterion_7() -> Verdict {
    let cfg = TrainConfig {
        width: 8,
        depth: 2,
        variant: "psa-sequential".parse().unwrap(),
        ..TrainConfig::default()
    };
    let net = build_toy_net(cfg.net_config(), 11).unwrap();
    let entries = store_entries(&net.store);
    let bytes = encode(&entries);
    let back = decode(&bytes).unwrap();
    let exact = back.len() == entries.len()
        && entries.iter().zip(&back).all(|((na, a), (nb, b))| {
            na == nb
                && a.shape() == b.shape()
                && a.data()
                    .iter()
                    .zip(b.data())
                    .all(|(x, y)| x.to_bits() == y.to_bits())
        });

    let mut codes = Vec::new();
    let mut bad = bytes.clone();
    bad[..4].copy_from_slice(b"XXXX");
    codes.push(decode(&bad).unwrap_err().code());
    let mut future = bytes.clone();
    future[4..8].copy_from_slice(&2u32.to_le_bytes());
    codes.push(decode(&future).unwrap_err().code());
    codes.push(decode(&bytes[..bytes.len() - 3]).unwrap_err().code());
    let mut trailing = bytes.clone();
    trailing.push(1);
    codes.push(decode(&trailing).unwrap_err().code());
    let wide = TrainConfig {
        width: 64,
        ..TrainConfig::default()
    };
    let narrow = TrainConfig {
        width: 32,
        ..TrainConfig::default()
    };
    let mut target = build_toy_net(narrow.net_config(), 0).unwrap();
    let source = build_toy_net(wide.net_config(), 0).unwrap();
    codes.push(
        bind_weights(&mut target.store, &store_entries(&source.store))
            .unwrap_err()
            .code(),
    );
    for text in ["{", r#"{"unknown_key": 1}"#, r#"{"lr": -1}"#] {
        codes.push(
            psa_core::cli::config::parse_config(text)
                .unwrap_err()
                .code(),
        );
    }
    let expected = [
        "E_BAD_MAGIC",
        "E_UNSUPPORTED_VERSION",
        "E_TRUNCATED",
        "E_MALFORMED_CONTAINER",
        "E_BIND_MISMATCH",
        "E_MALFORMED_JSON",
        "E_UNKNOWN_KEY",
        "E_OUT_OF_RANGE",
    ];

    let bin = env!("CARGO_BIN_EXE_psa");
    let grad = Command::new(bin).arg("gradcheck").output().unwrap();
    let usage = Command::new(bin).arg("frobnicate").output().unwrap();
    let exit_ok = grad.status.code() == Some(0) && usage.status.code() == Some(2);

    Verdict::hard(
        exact && codes == expected && exit_ok,
        format!(
            "{} tensors round trip bit-exact: {exact}; error codes {:?}; gradcheck exit {:?}, unknown subcommand exit {:?}",
            entries.len(),
            codes,
            grad.status.code(),
            usage.status.code()
        ),
    )
}

fn report(n: &str, title: &str, v: &Verdict) {
    let status = match (v.passed, v.soft) {
        (true, _) => "PASS",
        (false, false) => "FAIL",
        (false, true) => "FAIL (soft, not fatal)",
    };
    println!("criterion {n} {title} ... {status}: {}", v.detail);
}

fn main() -> ExitCode {
    let mut verdicts = Vec::new();
    let mut run = |n: &'static str, title: &'static str, v: Verdict| {
        report(n, title, &v);
        verdicts.push(v);
    };
    run("1", "gradient suite", criterion_1());
    run("2", "invariant suite", criterion_2());
    run("3", "complexity exponents", criterion_3());
    run("4", "resnet50 cost", criterion_4());
    let (five, six) = criteria_5_and_6();
    run("5", "toy A/B trend", five);
    run("6", "parallel vs sequential closeness", six);
    run("7", "serialization and CLI", criterion_7());

    let hard_failures = verdicts.iter().filter(|v| !v.passed && !v.soft).count();
    println!(
        "acceptance: {} passed, {} failed ({} hard)",
        verdicts.iter().filter(|v| v.passed).count(),
        verdicts.iter().filter(|v| !v.passed).count(),
        hard_failures
    );
    if hard_failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
