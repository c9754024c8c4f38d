use dyk_core::evalharness::{match_metric, token_f1};
use proptest::prelude::*;

fn brute_match(pred: &str, gold: &str) -> bool {
    let (p, g) = (pred.as_bytes(), gold.as_bytes());
    (0..=p.len().saturating_sub(g.len())).any(|i| p.len() >= g.len() && &p[i..i + g.len()] == g)
}

fn brute_f1(pred: &str, gold: &str) -> f64 {
    let p: Vec<&str> = pred.split_whitespace().collect();
    let g: Vec<&str> = gold.split_whitespace().collect();
    let mut used = vec![false; g.len()];
    let mut overlap = 0;
    for t in &p {
        if let Some(j) = (0..g.len()).find(|&j| !used[j] && g[j] == *t) {
            used[j] = true;
            overlap += 1;
        }
    }
    if overlap == 0 {
        return 0.0;
    }
    let precision = overlap as f64 / p.len() as f64;
    let recall = overlap as f64 / g.len() as f64;
    2.0 * precision * recall / (precision + recall)
}

fn text() -> impl Strategy<Value = String> {
    proptest::string::string_regex("[abAB \t]{0,24}").unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1000))]

    #[test]
    fn metrics_match_brute_force(pred in text(), gold in text()) {
        prop_assume!(!gold.trim().is_empty());
        prop_assert_eq!(match_metric(&pred, &gold).unwrap(), brute_match(&pred, &gold));
        prop_assert_eq!(token_f1(&pred, &gold).unwrap(), brute_f1(&pred, &gold));
    }

    #[test]
    fn aligned_substring_implies_overlap(
        pre in proptest::collection::vec("[a-c]{1,3}", 0..4),
        gold in proptest::collection::vec("[a-c]{1,3}", 1..4),
        post in proptest::collection::vec("[a-c]{1,3}", 0..4),
    ) {
        let gold = gold.join(" ");
        let pred = pre.iter().chain(std::iter::once(&gold)).chain(&post).cloned().collect::<Vec<_>>().join(" ");
        prop_assert!(match_metric(&pred, &gold).unwrap());
        prop_assert!(token_f1(&pred, &gold).unwrap() > 0.0);
    }

    #[test]
    fn f1_is_bounded_and_symmetric_in_identity(s in "[a-z ]{1,30}") {
        prop_assume!(!s.trim().is_empty());
        prop_assert_eq!(token_f1(&s, &s).unwrap(), 1.0);
        let f = token_f1("zzz qqq", &s).unwrap();
        prop_assert!((0.0..=1.0).contains(&f));
    }
}
