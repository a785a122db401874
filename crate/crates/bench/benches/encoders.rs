use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use treenc::{ForwardCtx, LayoutKind, LeafRnn, Tape};
use treenc_bench::{model, sentences};

fn forward_backward(c: &mut Criterion) {
    let mut g = c.benchmark_group("encode_fwd_bwd");
    g.sample_size(20);
    let batch = sentences(32, 20, 1);
    for layout in [
        LayoutKind::Balanced,
        LayoutKind::Left,
        LayoutKind::Random(0.5),
        LayoutKind::Gumbel,
        LayoutKind::Linear,
        LayoutKind::LinearBidirectional,
    ] {
        for leaf in [LeafRnn::None, LeafRnn::Bidirectional] {
            if !layout.is_tree() && leaf == LeafRnn::Bidirectional {
                continue;
            }
            let (m, params) = model(layout, leaf, 64);
            g.bench_with_input(BenchmarkId::new(layout.to_string(), leaf), &batch, |b, src| {
                b.iter(|| {
                    let mut tape = Tape::new();
                    let pv = params.attach(&mut tape, |_| true);
                    let mut ctx = ForwardCtx::train(0);
                    let enc = m.encode(&mut tape, &pv, src, &mut ctx).unwrap().encoding;
                    let loss = tape.sum(enc);
                    tape.backward(loss).unwrap()
                })
            });
        }
    }
    g.finish();
}

fn sentence_length(c: &mut Criterion) {
    let mut g = c.benchmark_group("balanced_by_length");
    g.sample_size(20);
    let (m, params) = model(LayoutKind::Balanced, LeafRnn::None, 64);
    for len in [8, 16, 32, 64] {
        let src = sentences(16, len, 2);
        g.bench_with_input(BenchmarkId::from_parameter(len), &src, |b, src| {
            b.iter(|| {
                let mut tape = Tape::new();
                let pv = params.attach(&mut tape, |_| false);
                m.encode(&mut tape, &pv, src, &mut ForwardCtx::eval(0)).unwrap().encoding
            })
        });
    }
    g.finish();
}

criterion_group!(benches, forward_backward, sentence_length);
criterion_main!(benches);
