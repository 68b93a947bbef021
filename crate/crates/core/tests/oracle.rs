mod support;

use support::oracle::{check_case, random_cases};

#[test]
fn toy_traces_match_exact_recomputation() {
    for (k, case) in random_cases(20_240_611, 200).iter().enumerate() {
        if let Err(msg) = check_case(case, 1e-9) {
            panic!("case {k} ({:?}, sentence {}..={}, span {:?}): {msg}", case.text, case.first, case.last, case.span);
        }
    }
}

#[test]
fn uniform_model_has_zero_cis() {
    use inputrisk_core::measures::{series_from_trace, Measure};
    use inputrisk_core::toy_lm::BigramModel;
    use inputrisk_core::trace::TokenRange;
    let m = BigramModel::new("abcdefgh".chars().collect(), 1.0).unwrap();
    let t = m.trace_prompt("u", "abcdefghhgfe", TokenRange::new(2, 9)).unwrap();
    let cis = series_from_trace(&t, Measure::Cis, Default::default()).unwrap();
    for i in 0..t.len() - 1 {
        assert_eq!(cis.get(i), Some(0.0));
    }
    assert_eq!(cis.get(t.len() - 1), None);
}

#[test]
fn bigram_cis_conditions_on_the_token_before() {
    use inputrisk_core::measures::{series_from_trace, Measure};
    use inputrisk_core::toy_lm::BigramModel;
    use inputrisk_core::trace::TokenRange;
    use support::oracle::{log2q, ExactBigram};
    let mut m = BigramModel::new("abc".chars().collect(), 1.0).unwrap();
    m.train(["abcabcab", "aab", "cba"]).unwrap();
    let exact = ExactBigram::from_model(&m);
    let t = m.trace_prompt("b", "cab", TokenRange::new(0, 2)).unwrap();
    let cis = series_from_trace(&t, Measure::Cis, Default::default()).unwrap();
    // position 1: log P(b | a) - log P(b | c)
    let b = 1;
    let want = log2q(exact.row(Some('a'))[b]) - log2q(exact.row(Some('c'))[b]);
    assert!((cis.get(1).unwrap() - want).abs() < 1e-12);
}
