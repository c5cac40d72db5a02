#![allow(clippy::needless_range_loop)]

use psa_core::attention::{
    AttentionBlock, AttentionKind, ChannelBranch, PsaBlock, PsaConfig, PsaLayout, SpatialBranch,
};
use psa_core::{ParamStore, Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const EXACT: f64 = 1e-12;

type Zeroer = Box<dyn Fn(&AttentionBlock, &mut ParamStore)>;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn random(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape.to_vec(), |_| rng.gen_range(-2.0..2.0)).unwrap()
}

fn randomize(store: &mut ParamStore, rng: &mut ChaCha8Rng) {
    for p in store.iter_mut() {
        let v = Tensor::from_fn(p.value().shape().to_vec(), |_| rng.gen_range(-1.0..1.0)).unwrap();
        p.set_value(v).unwrap();
    }
}

/// Reorders the spatial positions of a `[C, H, W]` tensor by `perm`.
fn permute(x: &Tensor, perm: &[usize]) -> Tensor {
    let (c, h, w) = x.dims3().unwrap();
    let hw = h * w;
    let mut out = x.clone();
    for ch in 0..c {
        for (dst, &src) in perm.iter().enumerate() {
            out.data_mut()[ch * hw + dst] = x.data()[ch * hw + src];
        }
    }
    out
}

fn shuffled(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    let mut p: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        p.swap(i, rng.gen_range(0..=i));
    }
    p
}

fn channel_gate(branch: &ChannelBranch, store: &ParamStore, x: &Tensor) -> (Tensor, Tensor) {
    let mut tape = Tape::new();
    let xv = tape.input(x.clone());
    let gate = branch.attention(&mut tape, store, xv).unwrap();
    (
        tape.value(gate.map).clone(),
        tape.value(gate.weights).clone(),
    )
}

fn spatial_gate(branch: &SpatialBranch, store: &ParamStore, x: &Tensor) -> (Tensor, Tensor) {
    let mut tape = Tape::new();
    let xv = tape.input(x.clone());
    let gate = branch.attention(&mut tape, store, xv).unwrap();
    (
        tape.value(gate.map).clone(),
        tape.value(gate.weights).clone(),
    )
}

fn branches(seed: u64, c: usize) -> (ParamStore, ChannelBranch, SpatialBranch) {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let cfg = PsaConfig::new(c, PsaLayout::Parallel);
    let ch = ChannelBranch::new(&mut store, "ch", &cfg, &mut r).unwrap();
    let sp = SpatialBranch::new(&mut store, "sp", &cfg, &mut r).unwrap();
    randomize(&mut store, &mut r);
    (store, ch, sp)
}

#[test]
fn softmax_weights_sum_to_one() {
    for seed in 0..5 {
        let (store, ch, sp) = branches(seed, 8);
        let x = random(&mut rng(100 + seed), &[8, 5, 7]);
        let (_, w_ch) = channel_gate(&ch, &store, &x);
        let (_, w_sp) = spatial_gate(&sp, &store, &x);
        assert_eq!(w_ch.shape(), &[35, 1]);
        assert_eq!(w_sp.shape(), &[1, 4]);
        for w in [w_ch, w_sp] {
            let total: f64 = w.data().iter().sum();
            assert!((total - 1.0).abs() <= EXACT, "sum {total}");
        }
    }
}

#[test]
fn gates_lie_strictly_inside_unit_interval() {
    for seed in 0..5 {
        let (store, ch, sp) = branches(seed, 6);
        let x = random(&mut rng(200 + seed), &[6, 4, 4]);
        let (a_ch, _) = channel_gate(&ch, &store, &x);
        let (a_sp, _) = spatial_gate(&sp, &store, &x);
        assert_eq!(a_ch.shape(), &[6, 1, 1]);
        assert_eq!(a_sp.shape(), &[1, 4, 4]);
        assert!(a_ch
            .data()
            .iter()
            .chain(a_sp.data())
            .all(|&v| v > 0.0 && v < 1.0));
    }
}

#[test]
fn channel_gate_ignores_spatial_order() {
    for seed in 0..5 {
        let (store, ch, _) = branches(seed, 8);
        let mut r = rng(300 + seed);
        let x = random(&mut r, &[8, 6, 5]);
        let perm = shuffled(&mut r, 30);
        let (a, _) = channel_gate(&ch, &store, &x);
        let (b, _) = channel_gate(&ch, &store, &permute(&x, &perm));
        assert!(a.max_abs_diff(&b).unwrap() <= EXACT);
    }
}

#[test]
fn spatial_gate_and_block_outputs_follow_permutations() {
    let (store, _, sp) = branches(7, 8);
    let mut r = rng(400);
    let x = random(&mut r, &[8, 4, 6]);
    let perm = shuffled(&mut r, 24);
    let (a, _) = spatial_gate(&sp, &store, &x);
    let (b, _) = spatial_gate(&sp, &store, &permute(&x, &perm));
    assert!(permute(&a, &perm).max_abs_diff(&b).unwrap() <= EXACT);

    for (i, kind) in AttentionKind::all_default().into_iter().enumerate() {
        if kind == AttentionKind::Cbam {
            // The 7×7 spatial convolution depends on neighbourhoods.
            continue;
        }
        let mut r = rng(500 + i as u64);
        let mut store = ParamStore::new();
        let block = AttentionBlock::build(&mut store, "b", kind, 8, &mut r).unwrap();
        randomize(&mut store, &mut r);
        let x = random(&mut r, &[8, 4, 6]);
        let perm = shuffled(&mut r, 24);
        let y = block.apply(&store, &x).unwrap();
        let yp = block.apply(&store, &permute(&x, &perm)).unwrap();
        let err = permute(&y, &perm).max_abs_diff(&yp).unwrap();
        assert!(err <= EXACT, "{kind}: {err}");
    }
}

#[test]
fn every_block_preserves_shape() {
    let mut kinds = AttentionKind::all_default();
    for layout in PsaLayout::ALL {
        kinds.push(AttentionKind::Psa {
            layout,
            normalize: true,
            bias: false,
        });
    }
    for kind in kinds {
        for shape in [[4, 5, 6], [16, 1, 1], [8, 7, 3]] {
            let mut r = rng(1);
            let mut store = ParamStore::new();
            let block = AttentionBlock::build(&mut store, "b", kind, shape[0], &mut r).unwrap();
            let y = block.apply(&store, &random(&mut r, &shape)).unwrap();
            assert_eq!(y.shape(), &shape, "{kind}");
        }
    }
}

#[test]
fn channel_gate_on_constant_input_matches_single_pixel() {
    let (store, ch, _) = branches(3, 6);
    let mut r = rng(600);
    let pixel = random(&mut r, &[6, 1, 1]);
    let (single, _) = channel_gate(&ch, &store, &pixel);
    for (h, w) in [(2, 3), (5, 5), (1, 9)] {
        let x = Tensor::from_fn([6, h, w], |i| pixel.data()[i / (h * w)]).unwrap();
        let (a, _) = channel_gate(&ch, &store, &x);
        assert!(a.max_abs_diff(&single).unwrap() <= EXACT);
    }
}

fn conv1x1_ref(w: &Tensor, b: Option<&Tensor>, x: &[f64]) -> Vec<f64> {
    let (cout, cin) = w.dims2().unwrap();
    (0..cout)
        .map(|o| {
            let dot: f64 = (0..cin).map(|i| w.at(&[o, i]) * x[i]).sum();
            dot + b.map_or(0.0, |b| b.data()[o])
        })
        .collect()
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

#[test]
fn single_pixel_gates_reduce_to_closed_forms() {
    let (store, ch, sp) = branches(11, 8);
    let x = random(&mut rng(700), &[8, 1, 1]);
    let w = |id| store.value(id);
    let bias = |c: &psa_core::layers::Conv| c.bias.map(|id| store.value(id));

    let v = conv1x1_ref(w(ch.wv.weight), bias(&ch.wv), x.data());
    let z = conv1x1_ref(w(ch.wz.weight), bias(&ch.wz), &v);
    let (a_ch, _) = channel_gate(&ch, &store, &x);
    for (got, want) in a_ch.data().iter().zip(&z) {
        assert!((got - sigmoid(*want)).abs() <= EXACT);
    }

    let q = conv1x1_ref(w(sp.wq.weight), bias(&sp.wq), x.data());
    let v = conv1x1_ref(w(sp.wv.weight), bias(&sp.wv), x.data());
    let m = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = q.iter().map(|v| (v - m).exp()).collect();
    let total: f64 = e.iter().sum();
    let s: f64 = e.iter().zip(&v).map(|(e, v)| e / total * v).sum();
    let (a_sp, _) = spatial_gate(&sp, &store, &x);
    assert!((a_sp.data()[0] - sigmoid(s)).abs() <= EXACT);
}

fn psa_block(seed: u64, layout: PsaLayout) -> (ParamStore, PsaBlock) {
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let block = PsaBlock::new(&mut store, "psa", PsaConfig::new(8, layout), &mut r).unwrap();
    randomize(&mut store, &mut r);
    (store, block)
}

fn run_psa(block: &PsaBlock, store: &ParamStore, x: &Tensor) -> Tensor {
    let mut tape = Tape::new();
    let xv = tape.input(x.clone());
    let y = block.forward(&mut tape, store, xv).unwrap();
    tape.value(y).clone()
}

fn scaled(x: &Tensor, k: f64) -> Tensor {
    Tensor::from_fn(x.shape().to_vec(), |i| k * x.data()[i]).unwrap()
}

#[test]
fn degenerate_psa_parallel_is_identity_and_sequential_quarters() {
    let x = random(&mut rng(800), &[8, 5, 4]);
    for (layout, factor) in [
        (PsaLayout::Parallel, 1.0),
        (PsaLayout::Sequential, 0.25),
        (PsaLayout::ChannelOnly, 0.5),
        (PsaLayout::SpatialOnly, 0.5),
    ] {
        let (mut store, block) = psa_block(9, layout);
        if let Some(ch) = &block.channel {
            ch.wz.zero(&mut store);
        }
        if let Some(sp) = &block.spatial {
            sp.wv.zero(&mut store);
        }
        let y = run_psa(&block, &store, &x);
        let err = y.max_abs_diff(&scaled(&x, factor)).unwrap();
        assert!(err <= EXACT, "{layout:?}: {err}");
    }
}

#[test]
fn spatial_gate_with_zero_values_is_one_half() {
    let (mut store, _, sp) = branches(5, 8);
    sp.wv.zero(&mut store);
    let (a, _) = spatial_gate(&sp, &store, &random(&mut rng(801), &[8, 3, 3]));
    assert!(a.data().iter().all(|&v| (v - 0.5).abs() <= EXACT));
}

fn baseline<F>(kind: AttentionKind, seed: u64, zero: F) -> (ParamStore, AttentionBlock)
where
    F: Fn(&AttentionBlock, &mut ParamStore),
{
    let mut r = rng(seed);
    let mut store = ParamStore::new();
    let block = AttentionBlock::build(&mut store, "b", kind, 16, &mut r).unwrap();
    randomize(&mut store, &mut r);
    zero(&block, &mut store);
    (store, block)
}

#[test]
fn degenerate_baselines() {
    let x = random(&mut rng(900), &[16, 4, 5]);
    let cases: Vec<(AttentionKind, f64, Zeroer)> = vec![
        (
            AttentionKind::NonLocal,
            1.0,
            Box::new(|b, s| {
                if let AttentionBlock::NonLocal(nl) = b {
                    nl.wz.zero(s);
                }
            }),
        ),
        (
            AttentionKind::Se,
            0.5,
            Box::new(|b, s| {
                if let AttentionBlock::Se(se) = b {
                    se.fc1.zero(s);
                    se.fc2.zero(s);
                }
            }),
        ),
        (
            AttentionKind::Gc,
            1.0,
            Box::new(|b, s| {
                if let AttentionBlock::Gc(gc) = b {
                    gc.t2.zero(s);
                }
            }),
        ),
        (
            AttentionKind::Cbam,
            0.25,
            Box::new(|b, s| {
                if let AttentionBlock::Cbam(cb) = b {
                    cb.mlp1.zero(s);
                    cb.mlp2.zero(s);
                    cb.spatial.zero(s);
                }
            }),
        ),
    ];
    for (kind, factor, zero) in cases {
        let (store, block) = baseline(kind, 13, zero);
        let y = block.apply(&store, &x).unwrap();
        let err = y.max_abs_diff(&scaled(&x, factor)).unwrap();
        assert!(err <= EXACT, "{kind}: {err}");
    }
}

#[test]
fn nonlocal_single_pixel_adds_value_path() {
    let mut r = rng(21);
    let mut store = ParamStore::new();
    let block =
        AttentionBlock::build(&mut store, "nl", AttentionKind::NonLocal, 4, &mut r).unwrap();
    randomize(&mut store, &mut r);
    let AttentionBlock::NonLocal(nl) = &block else {
        unreachable!()
    };
    let x = random(&mut r, &[4, 1, 1]);
    let w = |c: &psa_core::layers::Conv| store.value(c.weight);
    let b = |c: &psa_core::layers::Conv| c.bias.map(|id| store.value(id));
    let v = conv1x1_ref(w(&nl.wv), b(&nl.wv), x.data());
    let z = conv1x1_ref(w(&nl.wz), b(&nl.wz), &v);
    let y = block.apply(&store, &x).unwrap();
    for c in 0..4 {
        assert!((y.data()[c] - (x.data()[c] + z[c])).abs() <= EXACT);
    }
}

#[test]
fn nonlocal_matches_loop_reference() {
    let mut r = rng(31);
    let mut store = ParamStore::new();
    let block =
        AttentionBlock::build(&mut store, "nl", AttentionKind::NonLocal, 4, &mut r).unwrap();
    randomize(&mut store, &mut r);
    let AttentionBlock::NonLocal(nl) = &block else {
        unreachable!()
    };
    let x = random(&mut r, &[4, 3, 3]);
    let (c, p) = (4, 9);
    let pixel = |i: usize| -> Vec<f64> { (0..c).map(|ch| x.data()[ch * p + i]).collect() };
    let map = |conv: &psa_core::layers::Conv, v: &[f64]| {
        conv1x1_ref(
            store.value(conv.weight),
            conv.bias.map(|id| store.value(id)),
            v,
        )
    };
    let q: Vec<Vec<f64>> = (0..p).map(|i| map(&nl.wq, &pixel(i))).collect();
    let k: Vec<Vec<f64>> = (0..p).map(|i| map(&nl.wk, &pixel(i))).collect();
    let v: Vec<Vec<f64>> = (0..p).map(|i| map(&nl.wv, &pixel(i))).collect();
    let y = block.apply(&store, &x).unwrap();
    for i in 0..p {
        let logits: Vec<f64> = (0..p)
            .map(|j| (0..c).map(|ch| q[i][ch] * k[j][ch]).sum())
            .collect();
        let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
        let total: f64 = e.iter().sum();
        let agg: Vec<f64> = (0..c)
            .map(|ch| (0..p).map(|j| e[j] / total * v[j][ch]).sum())
            .collect();
        let a = map(&nl.wz, &agg);
        for ch in 0..c {
            let want = x.data()[ch * p + i] + a[ch];
            assert!((y.data()[ch * p + i] - want).abs() <= EXACT);
        }
    }
}

#[test]
fn conv1x1_matches_matrix_product() {
    let mut r = rng(41);
    let x = random(&mut r, &[3, 4, 4]);
    let w = random(&mut r, &[5, 3]);
    let mut tape = Tape::new();
    let xv = tape.input(x.clone());
    let wv = tape.input(w.clone());
    let y = tape.conv1x1(xv, wv, None).unwrap();
    let y = tape.value(y).clone();
    assert_eq!(y.shape(), &[5, 4, 4]);
    for o in 0..5 {
        for p in 0..16 {
            let want: f64 = (0..3).map(|i| w.at(&[o, i]) * x.data()[i * 16 + p]).sum();
            assert!((y.data()[o * 16 + p] - want).abs() <= EXACT);
        }
    }
}

#[test]
fn channel_branch_output_is_spatially_constant_when_broadcast() {
    let (store, block) = psa_block(51, PsaLayout::ChannelOnly);
    let x = random(&mut rng(52), &[8, 3, 4]);
    let y = run_psa(&block, &store, &x);
    // y / x recovers the per-channel gate at every position.
    for c in 0..8 {
        let ratios: Vec<f64> = (0..12)
            .map(|p| y.data()[c * 12 + p] / x.data()[c * 12 + p])
            .collect();
        assert!(ratios.iter().all(|r| (r - ratios[0]).abs() <= 1e-10));
    }
}

#[test]
fn replay_reproduces_forward_values() {
    let (store, block) = psa_block(61, PsaLayout::Sequential);
    let x = random(&mut rng(62), &[8, 4, 4]);
    let mut tape = Tape::new();
    let xv = tape.input(x);
    block.forward(&mut tape, &store, xv).unwrap();
    let replayed = tape.replay().unwrap();
    for (rec, value) in tape.records().iter().zip(&replayed) {
        assert_eq!(rec.value().data(), value.data());
    }
}

#[test]
fn odd_width_psa_is_rejected() {
    let mut store = ParamStore::new();
    for layout in PsaLayout::ALL {
        let err =
            PsaBlock::new(&mut store, "p", PsaConfig::new(7, layout), &mut rng(0)).unwrap_err();
        assert_eq!(err.code(), "E_CONFIG");
    }
}
