use psa_core::attention::{AttentionBlock, AttentionKind, BlockKind, PsaLayout};
use psa_core::cost::{
    attention_param_count, builtin_descriptor, cost_of_attention_block, cost_of_model,
    resnet50_simplebaseline, LayerKind, RESNET50_SIMPLEBASELINE, TOY_HEATMAP_NET,
};
use psa_core::tape::Op;
use psa_core::{ParamStore, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn all_kinds() -> Vec<AttentionKind> {
    let mut kinds = AttentionKind::all_default();
    for layout in PsaLayout::ALL {
        for (normalize, bias) in [(true, true), (false, false), (true, false)] {
            kinds.push(AttentionKind::Psa {
                layout,
                normalize,
                bias,
            });
        }
    }
    kinds
}

/// Counts multiply-accumulates by walking the recorded forward pass.
fn tape_flops(tape: &Tape) -> u64 {
    let shape = |v| tape.value(v).shape().to_vec();
    let mut total = 0u64;
    for rec in tape.records() {
        let ins = rec.inputs();
        let out = rec.value().numel() as u64;
        total += match rec.op() {
            Op::Input | Op::Param(_) | Op::Reshape(_) | Op::Transpose | Op::ConcatChannels => 0,
            Op::MatMul => {
                let (a, b) = (shape(ins[0]), shape(ins[1]));
                (a[0] * a[1] * b[1]) as u64
            }
            Op::Conv { .. } => {
                let w = shape(ins[1]);
                let taps: usize = w[1..].iter().product();
                let out_px: usize = rec.value().shape()[1..].iter().product();
                (w[0] * taps * out_px) as u64
            }
            Op::GlobalAvgPool | Op::GlobalMaxPool | Op::ChannelMean | Op::ChannelMax => {
                tape.value(ins[0]).numel() as u64
            }
            Op::Softmax { .. } | Op::Sigmoid | Op::Relu | Op::LayerNorm | Op::Add | Op::Mul => out,
            other => panic!("unexpected op in an attention block: {other:?}"),
        };
    }
    total
}

fn build(kind: AttentionKind, c: usize) -> (ParamStore, AttentionBlock) {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    let block = AttentionBlock::build(&mut store, "b", kind, c, &mut rng).unwrap();
    (store, block)
}

#[test]
fn closed_form_flops_match_recorded_ops() {
    for kind in all_kinds() {
        for (c, h, w) in [(16, 8, 8), (32, 5, 7), (4, 1, 1), (64, 3, 9)] {
            let (store, block) = build(kind, c);
            let mut tape = Tape::new();
            let x = tape.input(Tensor::ones([c, h, w]).unwrap());
            block.forward(&mut tape, &store, x).unwrap();
            let closed = cost_of_attention_block(kind, c, h, w).unwrap();
            assert_eq!(closed.flops, tape_flops(&tape), "{kind} at {c}x{h}x{w}");
        }
    }
}

#[test]
fn closed_form_params_match_enumeration() {
    for kind in all_kinds() {
        for c in [4, 16, 64, 96] {
            let (store, _) = build(kind, c);
            let enumerated: usize = store.iter().map(|p| p.value().numel()).sum();
            assert_eq!(
                attention_param_count(kind, c).unwrap(),
                enumerated as u64,
                "{kind} C={c}"
            );
        }
    }
}

#[test]
fn psa_parallel_weights_at_64_channels() {
    let no_bias = AttentionKind::Psa {
        layout: PsaLayout::Parallel,
        normalize: false,
        bias: false,
    };
    assert_eq!(attention_param_count(no_bias, 64).unwrap(), 8256);
    let with_bias = AttentionKind::psa(PsaLayout::Parallel);
    // Biases: 1 + 32 + 64 on the channel side, 32 + 32 on the spatial side.
    assert_eq!(attention_param_count(with_bias, 64).unwrap(), 8256 + 161);
}

#[test]
fn nonlocal_similarity_product_is_in_the_total() {
    let (c, h, w) = (16usize, 8usize, 8usize);
    let p = h * w;
    let (store, block) = build(AttentionKind::NonLocal, c);
    let mut tape = Tape::new();
    let x = tape.input(Tensor::ones([c, h, w]).unwrap());
    block.forward(&mut tape, &store, x).unwrap();
    let sim = tape
        .records()
        .iter()
        .filter(|r| matches!(r.op(), Op::MatMul) && r.value().shape() == [p, p])
        .map(|r| {
            let k = tape.value(r.inputs()[0]).shape()[1];
            (p * k * p) as u64
        })
        .sum::<u64>();
    assert_eq!(sim, 16 * 4096);
    assert!(
        cost_of_attention_block(AttentionKind::NonLocal, c, h, w)
            .unwrap()
            .flops
            > sim
    );
}

fn residual_blocks(name: &str) -> Vec<psa_core::attention::BlockSpec> {
    builtin_descriptor(name)
        .unwrap()
        .layers
        .into_iter()
        .filter_map(|l| match l.kind {
            LayerKind::Residual(b) => Some(b),
            _ => None,
        })
        .collect()
}

#[test]
fn resnet50_has_sixteen_bottlenecks() {
    let blocks = residual_blocks(RESNET50_SIMPLEBASELINE);
    assert_eq!(blocks.len(), 16);
    assert!(blocks.iter().all(|b| b.kind == BlockKind::Bottleneck));
    let mut widths: Vec<usize> = blocks.iter().map(|b| b.width).collect();
    widths.dedup();
    assert_eq!(widths, vec![64, 128, 256, 512]);

    let psa = resnet50_simplebaseline(Some(AttentionKind::psa(PsaLayout::Parallel))).unwrap();
    let attached: Vec<_> = psa
        .layers
        .iter()
        .filter_map(|l| match &l.kind {
            LayerKind::Residual(b) => b.attention,
            _ => None,
        })
        .collect();
    assert_eq!(attached.len(), 16);
    assert!(attached.iter().all(|a| a.after_conv == 1));
}

#[test]
fn toy_net_is_stem_blocks_head() {
    let blocks = residual_blocks(TOY_HEATMAP_NET);
    assert_eq!(blocks.len(), 4);
    assert!(blocks.iter().all(|b| b.kind == BlockKind::Basic));
    let desc = builtin_descriptor(TOY_HEATMAP_NET).unwrap();
    let report = cost_of_model(&desc, desc.input_shape).unwrap();
    assert_eq!(report.breakdown.last().unwrap().output_shape[1..], [32, 32]);
}

#[test]
fn model_report_is_the_sum_of_its_layers() {
    for name in psa_core::cost::BUILTIN_NAMES {
        let desc = builtin_descriptor(name).unwrap();
        let r = cost_of_model(&desc, desc.input_shape).unwrap();
        assert_eq!(r.flops, r.breakdown.iter().map(|l| l.flops).sum::<u64>());
        assert_eq!(r.params, r.breakdown.iter().map(|l| l.params).sum::<u64>());
        assert_eq!(
            r.peak_activation,
            r.breakdown.iter().map(|l| l.peak_activation).max().unwrap()
        );
    }
}
