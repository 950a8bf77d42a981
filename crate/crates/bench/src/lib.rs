//! Fixtures shared by the benchmarks.

use idec_core::rng::make_rng;
use idec_core::{
    LmBackend, SampledResponse, SamplingSpec, Strategy, TemplateSet, ToyCopyLm, ToyTableLm, Vocab,
};

/// A dense order-3 table over `size` tokens with separators at ids 1 and 2,
/// wrapped with copy weight 0.5.
pub fn copy_model(size: usize, seed: u64) -> ToyCopyLm {
    let mut tokens: Vec<String> = vec!["</s>".into(), "<sep>".into(), "<item>".into()];
    tokens.extend((3..size).map(|i| format!("w{i}")));
    let vocab = Vocab::with_tokens(tokens, 0, None, vec![1, 2]).expect("bench vocab");
    let mut rng = make_rng(seed, "bench-model");
    let mut row = || -> Vec<f64> { (0..size).map(|_| (rng.next_f64() + 0.01).powi(2)).collect() };
    let mut rows = vec![(vec![], row())];
    for a in 0..size as u32 {
        rows.push((vec![a], row()));
        for b in 0..size as u32 {
            rows.push((vec![a, b], row()));
        }
    }
    let table = ToyTableLm::new(vocab, 3, rows).expect("bench table");
    ToyCopyLm::new(table, 0.5).expect("bench copy model")
}

/// `k` sampled responses to `question` under the toy template.
pub fn responses(model: &ToyCopyLm, question: &str, k: usize, seed: u64) -> Vec<SampledResponse> {
    let template = TemplateSet::builtin("toy").expect("toy template");
    let prompt = template.build_base(model, question).expect("prompt");
    let spec = SamplingSpec {
        strategy: Strategy::Temperature(0.7),
        max_new_tokens: 16,
        seed,
    };
    idec_core::sample_k(model, &prompt, k, &spec).expect("samples")
}

/// A question of `len` vocabulary words.
pub fn question(model: &dyn LmBackend, len: usize) -> String {
    let size = model.vocab().size() as u32;
    let ids: Vec<u32> = (0..len as u32).map(|i| 3 + i % (size - 3)).collect();
    model.detokenize(&ids).expect("question")
}
