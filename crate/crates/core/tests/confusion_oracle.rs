//! Instance-level confusion checked against a brute-force count over every
//! one-to-one matching of small weakness sets.

mod common;

use ave_core::backend::CostLedger;
use ave_core::dataset::WeaknessSet;
use ave_core::matching::{
    confusion_from_sets, evaluate_instance, render_pairs, synthesize_feedback, MatchAgent, MatchOutcome, RawCounts,
    EMPTY_SIDE, PERFECT_PREDICTION,
};
use ave_core::stub::ScriptedBackend;
use proptest::prelude::*;

fn set(prefix: &str, n: usize) -> Vec<String> {
    (0..n).map(|i| format!("{prefix} {i}")).collect()
}

/// Every partial injection from `0..a` into `0..b`, as `(r, p)` pairs.
fn matchings(a: usize, b: usize) -> Vec<Vec<(usize, usize)>> {
    fn go(
        r: usize,
        a: usize,
        b: usize,
        used: &mut Vec<bool>,
        cur: &mut Vec<(usize, usize)>,
        out: &mut Vec<Vec<(usize, usize)>>,
    ) {
        if r == a {
            out.push(cur.clone());
            return;
        }
        go(r + 1, a, b, used, cur, out);
        for p in 0..b {
            if !used[p] {
                used[p] = true;
                cur.push((r, p));
                go(r + 1, a, b, used, cur, out);
                cur.pop();
                used[p] = false;
            }
        }
    }
    let mut out = Vec::new();
    go(0, a, b, &mut vec![false; b], &mut Vec::new(), &mut out);
    out
}

/// Walks the items one by one when both sets are non-empty: every
/// referenced item is a hit or a miss, every unpaired prediction is a false
/// alarm. The set-level outcome then adds one count to whichever cell
/// describes the pair of sets.
fn oracle(a: usize, b: usize, pairs: &[(usize, usize)]) -> RawCounts {
    let mut c = RawCounts::default();
    let items = if a > 0 && b > 0 { a } else { 0 };
    for r in 0..items {
        if pairs.iter().any(|&(x, _)| x == r) {
            c.tp += 1;
        } else {
            c.fn_ += 1;
        }
    }
    for p in 0..(if items > 0 { b } else { 0 }) {
        if !pairs.iter().any(|&(_, x)| x == p) {
            c.fp += 1;
        }
    }
    match (a > 0, b > 0) {
        (true, true) => c.tp += 1,
        (false, false) => c.tn += 1,
        (false, true) => c.fp += 1,
        (true, false) => c.fn_ += 1,
    }
    c
}

#[test]
fn exhaustive_small_sets_match_oracle() {
    let mut cases = 0;
    for a in 0..=3 {
        for b in 0..=3 {
            let y = set("ref", a);
            let yhat = set("pred", b);
            let ys = WeaknessSet::new(y.clone()).unwrap();
            let yhs = WeaknessSet::new(yhat.clone()).unwrap();
            for pairs in matchings(a, b) {
                if (a == 0 || b == 0) && !pairs.is_empty() {
                    continue;
                }
                let outcome = MatchOutcome::from_index_pairs(&y, &yhat, &pairs);
                let given = (a > 0 && b > 0).then_some(&outcome);
                let cv = confusion_from_sets(&ys, &yhs, given).unwrap();
                let expected = oracle(a, b, &pairs);
                assert_eq!(cv.raw, expected, "a={a} b={b} pairs={pairs:?}");

                let total = f64::from(expected.total());
                assert_eq!(cv.tp(), f64::from(expected.tp) / total);
                assert_eq!(cv.fn_(), f64::from(expected.fn_) / total);
                let sum: f64 = cv.normalized.iter().sum();
                assert!((sum - 1.0).abs() < 1e-12);
                let both = a > 0 && b > 0;
                let expected_total = if both { 1 + a + b - pairs.len() } else { 1 };
                assert_eq!(expected.total() as usize, expected_total);

                let feedback = synthesize_feedback(&cv, given, &ys, &yhs);
                let perfect = expected.fp == 0 && expected.fn_ == 0;
                assert_eq!(feedback == PERFECT_PREDICTION, perfect);
                if !perfect {
                    assert!(feedback.starts_with("Omissions: "));
                    let omitted = if both { a - pairs.len() } else { a };
                    let invented = if both { b - pairs.len() } else { b };
                    assert_eq!(feedback.contains(EMPTY_SIDE), omitted == 0 || invented == 0);
                }
                cases += 1;
            }
        }
    }
    // Sum over a, b of the number of partial injections, minus the empty-side
    // combinations that were skipped (none: an empty side has one matching).
    assert_eq!(cases, 1 + 1 + 1 + 1 + 1 + 2 + 3 + 4 + 1 + 3 + 7 + 13 + 1 + 4 + 13 + 34);
}

#[test]
fn evaluate_instance_agrees_with_oracle_through_the_match_protocol() {
    for a in 1..=3 {
        for b in 1..=3 {
            for pairs in matchings(a, b) {
                let y = set("ref", a);
                let yhat = set("pred", b);
                let backend = ScriptedBackend::queue("m", [render_pairs(&pairs)]);
                let agent = MatchAgent::new(&backend, "match");
                let mut ledger = common::ledger(1000.0, &["m"]);
                let eval = evaluate_instance(
                    &WeaknessSet::new(yhat.clone()).unwrap(),
                    &WeaknessSet::new(y.clone()).unwrap(),
                    &agent,
                    &mut ledger,
                )
                .unwrap();
                assert_eq!(eval.confusion.raw, oracle(a, b, &pairs));
                assert_eq!(eval.outcome.omissions.len(), a - pairs.len());
                assert_eq!(eval.outcome.hallucinations.len(), b - pairs.len());
            }
        }
    }
}

#[test]
fn empty_sides_never_call_the_matcher() {
    let backend = ScriptedBackend::queue("m", Vec::<String>::new());
    let agent = MatchAgent::new(&backend, "match");
    let mut ledger = CostLedger::new(1000.0, common::pricing(&["m"])).unwrap();
    for (a, b) in [(0, 0), (0, 2), (3, 0)] {
        let eval = evaluate_instance(
            &WeaknessSet::new(set("p", b)).unwrap(),
            &WeaknessSet::new(set("r", a)).unwrap(),
            &agent,
            &mut ledger,
        )
        .unwrap();
        assert_eq!(eval.confusion.raw, oracle(a, b, &[]));
    }
    assert_eq!(backend.consumed(), 0);
    assert!(ledger.entries.is_empty());
}

proptest! {
    #[test]
    fn normalized_vector_is_a_distribution(a in 0usize..12, b in 0usize..12, seed in any::<u64>()) {
        let y = set("r", a);
        let yhat = set("p", b);
        let m = if a > 0 && b > 0 { (seed as usize) % (a.min(b) + 1) } else { 0 };
        let pairs: Vec<(usize, usize)> = (0..m).map(|i| (i, (i + seed as usize) % b.max(1))).collect();
        let pairs = if pairs.iter().map(|p| p.1).collect::<std::collections::BTreeSet<_>>().len() == pairs.len() {
            pairs
        } else {
            (0..m).map(|i| (i, i)).collect()
        };
        let outcome = MatchOutcome::from_index_pairs(&y, &yhat, &pairs);
        let cv = confusion_from_sets(
            &WeaknessSet::new(y).unwrap(),
            &WeaknessSet::new(yhat).unwrap(),
            (a > 0 && b > 0).then_some(&outcome),
        ).unwrap();
        prop_assert_eq!(cv.raw, oracle(a, b, &pairs));
        prop_assert!(cv.normalized.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!((cv.normalized.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert_eq!(cv.tn() > 0.0, a == 0 && b == 0);
    }
}
