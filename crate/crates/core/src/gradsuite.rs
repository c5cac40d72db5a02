//! The full gradient suite: every differentiable primitive and every
//! attention block, checked against central differences.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::attention::{AttentionBlock, AttentionKind, PsaLayout};
use crate::error::Result;
use crate::gradcheck::{finite_diff_gradcheck, gradcheck_params, worst, DEFAULT_STEP};
use crate::tape::{ParamStore, Tape, Var};
use crate::tensor::Tensor;

/// Pass threshold on the maximum relative error.
pub const SUITE_TOLERANCE: f64 = 1e-4;

/// Input shape `[C, H, W]` every check runs on.
pub const SUITE_INPUT: [usize; 3] = [4, 5, 6];

/// Random points drawn per check.
pub const CHECK_POINTS: u64 = 3;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SuiteEntry {
    pub name: String,
    pub max_rel_error: f64,
    pub passed: bool,
}

impl SuiteEntry {
    fn new(name: impl Into<String>, max_rel_error: f64) -> Self {
        Self {
            name: name.into(),
            max_rel_error,
            passed: max_rel_error < SUITE_TOLERANCE,
        }
    }
}

fn normal_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| {
        // Sum of uniforms: cheap, bounded, roughly Gaussian.
        (0..4).map(|_| rng.gen_range(-1.0..1.0)).sum::<f64>() * 0.6
    })
    .expect("valid shape")
}

type OutputFn = Box<dyn Fn(&mut Tape, &ParamStore, Var) -> Result<Var>>;

/// Checks `Σ R ⊙ f(x)` for a fixed random `R`, against both `x` and every
/// parameter in `store`.
fn check(store: &mut ParamStore, x: &Tensor, f: &OutputFn, rng: &mut ChaCha8Rng) -> Result<f64> {
    let probe = {
        let mut tape = Tape::new();
        let xv = tape.input(x.clone());
        let out = f(&mut tape, store, xv)?;
        tape.value(out).shape().to_vec()
    };
    let weights = normal_tensor(rng, &probe);
    let objective = |tape: &mut Tape, store: &ParamStore, xv: Var| -> Result<Var> {
        let out = f(tape, store, xv)?;
        let r = tape.input(weights.clone());
        let prod = tape.mul(out, r)?;
        tape.sum(prod)
    };
    let fixed = &*store;
    let input = finite_diff_gradcheck(|t, xv| objective(t, fixed, xv), x, DEFAULT_STEP)?;
    let params = gradcheck_params(
        store,
        |t, s| {
            let xv = t.input(x.clone());
            objective(t, s, xv)
        },
        DEFAULT_STEP,
    )?;
    Ok(input.max_rel_error.max(worst(&params)))
}

fn primitives(rng: &mut ChaCha8Rng) -> Vec<(&'static str, ParamStore, OutputFn)> {
    let [c, h, w] = SUITE_INPUT;
    let mut out: Vec<(&'static str, ParamStore, OutputFn)> = Vec::new();
    let mut with = |name, params: Vec<(&str, Vec<usize>)>, f: OutputFn| {
        let mut store = ParamStore::new();
        for (n, shape) in params {
            store
                .add(n, normal_tensor(rng, &shape))
                .expect("unique names");
        }
        out.push((name, store, f));
    };
    with(
        "reshape",
        vec![],
        Box::new(move |t, _, x| t.reshape(x, [c * h, w])),
    );
    with(
        "transpose",
        vec![],
        Box::new(move |t, _, x| {
            let m = t.reshape(x, [c, h * w])?;
            t.transpose(m)
        }),
    );
    with(
        "matmul",
        vec![],
        Box::new(move |t, _, x| {
            let a = t.reshape(x, [c * h, w])?;
            let b = t.transpose(a)?;
            t.matmul(a, b)
        }),
    );
    for (name, stride) in [("conv3x3", 1), ("conv3x3_stride2", 2)] {
        with(
            name,
            vec![("w", vec![3, c, 3, 3]), ("b", vec![3])],
            Box::new(move |t, s, x| {
                let wv = t.param(s, s.id("w").unwrap());
                let bv = t.param(s, s.id("b").unwrap());
                t.conv2d(x, wv, Some(bv), stride, 1)
            }),
        );
    }
    with(
        "conv1x1",
        vec![("w", vec![3, c]), ("b", vec![3])],
        Box::new(|t, s, x| {
            let wv = t.param(s, s.id("w").unwrap());
            let bv = t.param(s, s.id("b").unwrap());
            t.conv1x1(x, wv, Some(bv))
        }),
    );
    for (name, axis) in [("softmax_axis0", 0), ("softmax_axis1", 1)] {
        with(
            name,
            vec![],
            Box::new(move |t, _, x| {
                let m = t.reshape(x, [c * h, w])?;
                t.softmax(m, axis)
            }),
        );
    }
    with("sigmoid", vec![], Box::new(|t, _, x| t.sigmoid(x)));
    with("relu", vec![], Box::new(|t, _, x| t.relu(x)));
    with("add", vec![], Box::new(|t, _, x| t.add(x, x)));
    with("mul", vec![], Box::new(|t, _, x| t.mul(x, x)));
    for (name, shape) in [
        ("add_channel_broadcast", vec![c, 1, 1]),
        ("add_spatial_broadcast", vec![1, h, w]),
    ] {
        with(
            name,
            vec![("p", shape)],
            Box::new(|t, s, x| {
                let p = t.param(s, s.id("p").unwrap());
                t.add(p, x)
            }),
        );
    }
    for (name, shape) in [
        ("mul_channel_broadcast", vec![c, 1, 1]),
        ("mul_spatial_broadcast", vec![1, h, w]),
    ] {
        with(
            name,
            vec![("p", shape)],
            Box::new(|t, s, x| {
                let p = t.param(s, s.id("p").unwrap());
                t.mul(p, x)
            }),
        );
    }
    with(
        "global_avg_pool",
        vec![],
        Box::new(|t, _, x| t.global_avg_pool(x)),
    );
    with(
        "global_max_pool",
        vec![],
        Box::new(|t, _, x| t.global_max_pool(x)),
    );
    with(
        "channel_mean",
        vec![],
        Box::new(|t, _, x| t.channel_mean(x)),
    );
    with("channel_max", vec![], Box::new(|t, _, x| t.channel_max(x)));
    with(
        "concat_channels",
        vec![],
        Box::new(|t, _, x| {
            let m = t.channel_mean(x)?;
            t.concat_channels(&[x, m])
        }),
    );
    with(
        "layer_norm",
        vec![("g", vec![c, h, w]), ("b", vec![c, h, w])],
        Box::new(|t, s, x| {
            let g = t.param(s, s.id("g").unwrap());
            let b = t.param(s, s.id("b").unwrap());
            t.layer_norm(x, g, b)
        }),
    );
    with("sum", vec![], Box::new(|t, _, x| t.sum(x)));
    with(
        "mse",
        vec![("target", vec![c, h, w])],
        Box::new(|t, s, x| {
            let y = t.param(s, s.id("target").unwrap());
            t.mse(x, y)
        }),
    );
    with(
        "bce_with_logits",
        vec![("target", vec![c, h, w])],
        Box::new(|t, s, x| {
            let y = t.param(s, s.id("target").unwrap());
            let y = t.sigmoid(y)?;
            t.bce_with_logits(x, y)
        }),
    );
    out
}

/// Checks every primitive at [`CHECK_POINTS`] random inputs.
pub fn primitive_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_errs: Vec<(&'static str, f64)> = Vec::new();
    for point in 0..CHECK_POINTS {
        let x = normal_tensor(&mut rng, &SUITE_INPUT);
        for (i, (name, mut store, f)) in primitives(&mut rng).into_iter().enumerate() {
            let err = check(&mut store, &x, &f, &mut rng)?;
            if point == 0 {
                worst_errs.push((name, err));
            } else {
                worst_errs[i].1 = worst_errs[i].1.max(err);
            }
        }
    }
    Ok(worst_errs
        .into_iter()
        .map(|(name, err)| SuiteEntry::new(name, err))
        .collect())
}

/// The eight default blocks plus PSA with layer norm and without biases.
pub fn suite_kinds() -> Vec<AttentionKind> {
    let mut kinds = AttentionKind::all_default();
    kinds.push(AttentionKind::Psa {
        layout: PsaLayout::Parallel,
        normalize: true,
        bias: true,
    });
    kinds.push(AttentionKind::Psa {
        layout: PsaLayout::Sequential,
        normalize: false,
        bias: false,
    });
    kinds
}

/// Checks one attention block at [`CHECK_POINTS`] random points. Every
/// parameter is redrawn, so zero-initialized biases and unit norm gains do
/// not sit on ReLU kinks.
pub fn block_check(kind: AttentionKind, seed: u64) -> Result<SuiteEntry> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst_err: f64 = 0.0;
    for _ in 0..CHECK_POINTS {
        let mut store = ParamStore::new();
        let block = AttentionBlock::build(&mut store, "block", kind, SUITE_INPUT[0], &mut rng)?;
        for p in store.iter_mut() {
            let v = normal_tensor(&mut rng, p.value().shape());
            p.set_value(v)?;
        }
        let x = normal_tensor(&mut rng, &SUITE_INPUT);
        let f: OutputFn = Box::new(move |t, s, xv| block.forward(t, s, xv));
        worst_err = worst_err.max(check(&mut store, &x, &f, &mut rng)?);
    }
    Ok(SuiteEntry::new(kind.to_string(), worst_err))
}

pub fn block_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    suite_kinds()
        .into_iter()
        .enumerate()
        .map(|(i, k)| block_check(k, seed.wrapping_add(i as u64)))
        .collect()
}

/// Primitives followed by blocks.
pub fn run_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut entries = primitive_suite(seed)?;
    entries.extend(block_suite(seed)?);
    Ok(entries)
}
