use std::path::Path;

use idec_core::consistency::{
    factuality_score, factuality_score_member, report_from_matrix, split_statements, support, token_f1,
    Statement, SupportFn,
};
use idec_core::numeric::exact_sum;
use proptest::prelude::*;
use serde::Deserialize;

#[derive(Deserialize)]
struct Case {
    text: String,
    statements: Vec<String>,
}

#[test]
fn splitter_matches_hand_labels() {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/statements.json");
    let cases: Vec<Case> = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    for case in cases {
        let got = split_statements(&case.text);
        let texts: Vec<&str> = got.iter().map(|s| s.text.as_str()).collect();
        assert_eq!(texts, case.statements, "{:?}", case.text);
        for s in &got {
            assert_eq!(&case.text[s.span.0..s.span.1], s.text);
        }
    }
}

fn statements(n: usize) -> Vec<Statement> {
    (0..n)
        .map(|i| Statement {
            text: format!("s{i}"),
            span: (0, 0),
        })
        .collect()
}

#[test]
fn two_by_two_example() {
    let r = report_from_matrix(
        statements(2),
        vec![vec![1.0, 0.0], vec![0.0, 0.0]],
        SupportFn::ExactNorm,
    )
    .unwrap();
    assert_eq!(r.score, 0.25);
    assert_eq!(r.statement_scores, vec![0.5, 0.0]);
    assert_eq!(r.response_scores, vec![0.5, 0.0]);
    assert!(r.proxy);
}

#[test]
fn exact_support_scores_agreement() {
    let response = "Paris is the capital. It has the Louvre.";
    let samples = [
        "Paris is the capital of France.",
        "paris is the capital",
        "Lyon is the capital.",
    ];
    let r = factuality_score(response, &samples, SupportFn::ExactNorm).unwrap();
    assert_eq!(r.statements.len(), 2);
    assert_eq!(r.matrix, vec![vec![1.0, 1.0, 0.0], vec![0.0, 0.0, 0.0]]);
    assert_eq!(r.score, 2.0 / 6.0);
}

#[test]
fn f1_support_is_graded() {
    assert!((token_f1("a b c", "a b d") - 2.0 / 3.0).abs() < 1e-15);
    assert_eq!(token_f1("a a", "a"), 2.0 / 3.0);
    assert_eq!(token_f1("", "a"), 0.0);
    let f = SupportFn::TokenF1 { tau: 0.6 };
    // Best sentence-level F1 over the response, scaled by 1/tau.
    assert_eq!(
        support("born in Warsaw", "She was born in Warsaw. She died.", f),
        1.0
    );
    let s = support("born in Paris", "She was born in Warsaw.", f);
    assert!((s - (2.0 * 2.0 / 8.0) / 0.6).abs() < 1e-12, "{s}");
}

#[test]
fn member_score_excludes_itself() {
    let rs = ["A is X.", "A is X.", "B is Y."];
    let r = factuality_score_member(&rs, 0, SupportFn::ExactNorm).unwrap();
    assert_eq!(r.matrix, vec![vec![1.0, 0.0]]);
    let r = factuality_score_member(&rs, 2, SupportFn::ExactNorm).unwrap();
    assert_eq!(r.score, 0.0);
    assert!(factuality_score_member(&rs, 3, SupportFn::ExactNorm).is_err());
}

#[test]
fn degenerate_inputs_are_errors() {
    assert!(factuality_score("", &["x"], SupportFn::default()).is_err());
    assert!(factuality_score("x.", &[], SupportFn::default()).is_err());
    assert!(report_from_matrix(statements(1), vec![vec![1.5]], SupportFn::ExactNorm).is_err());
    assert!(report_from_matrix(statements(2), vec![vec![1.0], vec![]], SupportFn::ExactNorm).is_err());
    assert!("f1:0".parse::<SupportFn>().is_err());
    assert_eq!(
        "f1:0.5".parse::<SupportFn>().unwrap(),
        SupportFn::TokenF1 { tau: 0.5 }
    );
}

fn dyadic_matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
    // Power-of-two shapes keep every mean exact.
    let dim = prop::sample::select(vec![1usize, 2, 4, 8, 16]);
    (dim.clone(), dim).prop_flat_map(|(n, k)| {
        prop::collection::vec(
            prop::collection::vec((0u32..=64).prop_map(|v| v as f64 / 64.0), k),
            n,
        )
    })
}

proptest! {
    #[test]
    fn score_marginalizes_exactly_on_dyadic_grids(m in dyadic_matrix()) {
        let n = m.len();
        let k = m[0].len();
        let r = report_from_matrix(statements(n), m.clone(), SupportFn::ExactNorm).unwrap();
        let by_rows = exact_sum(r.statement_scores.iter().copied()) / n as f64;
        let by_cols = exact_sum(r.response_scores.iter().copied()) / k as f64;
        prop_assert_eq!(r.score, by_rows);
        prop_assert_eq!(r.score, by_cols);
        let naive: f64 = m.iter().flatten().sum::<f64>() / (n * k) as f64;
        prop_assert_eq!(r.score, naive);
    }

    #[test]
    fn score_marginalizes_closely_on_any_matrix(
        m in (1usize..10, 1usize..10).prop_flat_map(|(n, k)| prop::collection::vec(prop::collection::vec(0.0f64..=1.0, k), n))
    ) {
        let n = m.len();
        let k = m[0].len();
        let r = report_from_matrix(statements(n), m, SupportFn::ExactNorm).unwrap();
        let by_rows = r.statement_scores.iter().sum::<f64>() / n as f64;
        let by_cols = r.response_scores.iter().sum::<f64>() / k as f64;
        prop_assert!((r.score - by_rows).abs() <= 1e-12);
        prop_assert!((r.score - by_cols).abs() <= 1e-12);
        prop_assert!((0.0..=1.0).contains(&r.score));
    }

    #[test]
    fn self_support_is_full(text in "[A-Za-z]{1,8}( [A-Za-z]{1,8}){0,5}\\.( [A-Za-z]{1,8}( [A-Za-z]{1,8}){0,5}\\.){0,3}") {
        for f in [SupportFn::ExactNorm, SupportFn::default()] {
            let r = factuality_score(&text, &[text.as_str()], f).unwrap();
            prop_assert_eq!(r.score, 1.0);
        }
    }

    #[test]
    fn splitter_spans_cover_statement_text(text in "[a-z .!?\\-\\n0-9)]{0,80}") {
        for s in split_statements(&text) {
            prop_assert_eq!(&text[s.span.0..s.span.1], s.text.as_str());
            prop_assert!(!s.text.trim().is_empty());
        }
    }
}
