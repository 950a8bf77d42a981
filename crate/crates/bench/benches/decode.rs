use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use idec_bench::{copy_model, question, responses};
use idec_core::consistency::{factuality_score, SupportFn};
use idec_core::decoder::aggregate;
use idec_core::rng::make_rng;
use idec_core::{id_decode, DecodeConfig, LogProbDist, SamplingSpec, Strategy, TemplateSet, TieBreak};

fn bench_aggregate(c: &mut Criterion) {
    let mut group = c.benchmark_group("aggregate");
    let vocab = 32_000;
    for k in [1usize, 4, 16] {
        let mut rng = make_rng(k as u64, "bench-dists");
        let dists: Vec<LogProbDist> = (0..k)
            .map(|_| {
                let logits: Vec<f64> = (0..vocab).map(|_| 8.0 * rng.next_f64()).collect();
                LogProbDist::from_logits(&logits).unwrap()
            })
            .collect();
        group.throughput(Throughput::Elements((k * vocab) as u64));
        group.bench_with_input(BenchmarkId::from_parameter(k), &dists, |b, d| {
            b.iter(|| aggregate(d).unwrap())
        });
    }
    group.finish();
}

fn bench_id_decode(c: &mut Criterion) {
    let mut group = c.benchmark_group("id_decode");
    let model = copy_model(24, 1);
    let template = TemplateSet::builtin("toy").unwrap();
    let q = question(&model, 4);
    for k in [1usize, 4, 8, 16] {
        let samples = responses(&model, &q, k, 7);
        let config = DecodeConfig {
            k,
            max_new_tokens: 16,
            sampling: SamplingSpec {
                strategy: Strategy::Temperature(0.7),
                max_new_tokens: 16,
                seed: 7,
            },
            seed: 7,
            tie_break: TieBreak::LowestTokenId,
            template_id: "toy".into(),
        };
        group.bench_with_input(BenchmarkId::from_parameter(k), &samples, |b, s| {
            b.iter(|| id_decode(&model, &q, s, &template, &config).unwrap())
        });
    }
    group.finish();
}

fn bench_sampling(c: &mut Criterion) {
    let model = copy_model(24, 2);
    let q = question(&model, 4);
    c.bench_function("sample_k/16", |b| b.iter(|| responses(&model, &q, 16, 3)));
}

fn bench_factuality(c: &mut Criterion) {
    let sentence = |i: usize| format!("Fact number {i} holds for item {}.", i % 7);
    let response: String = (0..10).map(sentence).collect::<Vec<_>>().join(" ");
    let samples: Vec<String> = (0..8)
        .map(|j| (j..j + 10).map(sentence).collect::<Vec<_>>().join(" "))
        .collect();
    let refs: Vec<&str> = samples.iter().map(String::as_str).collect();
    c.bench_function("factuality_score/f1", |b| {
        b.iter(|| factuality_score(&response, &refs, SupportFn::default()).unwrap())
    });
}

criterion_group!(
    benches,
    bench_aggregate,
    bench_id_decode,
    bench_sampling,
    bench_factuality
);
criterion_main!(benches);
