use std::collections::{HashMap, HashSet};

use kgrec::context::{rescore_with, Gaussian};
use kgrec::eval::{all_links, evaluate_dataset, f_at_n, mean_rank_fraction, rank_links, t_at_n, EvalMode, Link};
use kgrec::graph::{EntityId, RelationId, Vocab};
use kgrec::{ContextStats, KgModel, LinkQuery, ModelConfig, Variant};
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn model(seed: u64) -> KgModel {
    let entities = Vocab::from_labels((0..8).map(|i| format!("e{i}"))).unwrap();
    let relations = Vocab::from_labels(["r0", "r1"]).unwrap();
    let config = ModelConfig {
        dim: 3,
        slices: 2,
        seed,
        ..ModelConfig::default()
    };
    KgModel::init(Variant::Ntl, config, entities, relations).unwrap()
}

fn query(model: &KgModel, vector: Vec<f64>, truth_mask: &[bool]) -> LinkQuery {
    let candidates = all_links(model);
    let truth: HashSet<Link> = candidates
        .iter()
        .zip(truth_mask.iter().cycle())
        .filter(|(_, &t)| t)
        .map(|(l, _)| *l)
        .collect();
    LinkQuery::new("q", vector, candidates, truth).unwrap()
}

fn context(counts: &[u32]) -> ContextStats {
    let mut map = HashMap::new();
    for (i, &c) in counts.iter().enumerate() {
        map.insert((RelationId((i / 8) as u32 % 2), EntityId((i % 8) as u32)), c);
    }
    ContextStats {
        counts: map,
        known_entity_count: 10,
        true_scores: Gaussian { mu: -0.5, sigma: 0.4 },
        false_scores: Gaussian { mu: 0.5, sigma: 0.6 },
        per_relation: None,
        laplace: 0.0,
    }
}

fn vec3() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-2.0f64..2.0, 3)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn ranking_is_a_sorted_permutation(
        seed in 0u64..1000,
        v in vec3(),
        mask in prop::collection::vec(any::<bool>(), 1..16),
        counts in prop::collection::vec(0u32..=10, 16),
    ) {
        let m = model(seed);
        let q = query(&m, v, &mask);
        let ctx = context(&counts);
        for c in [None, Some(&ctx)] {
            let r = rank_links(&m, &q, c).unwrap();
            let mut idx: Vec<usize> = r.links.iter().map(|l| l.candidate_index).collect();
            idx.sort_unstable();
            prop_assert_eq!(idx, (0..q.candidates.len()).collect::<Vec<_>>());
            for w in r.links.windows(2) {
                match c {
                    None => prop_assert!(w[0].raw_score <= w[1].raw_score),
                    Some(_) => prop_assert!(w[0].u_score.unwrap() >= w[1].u_score.unwrap()),
                }
            }
            for l in &r.links {
                prop_assert_eq!(l.is_true, q.truth.contains(&(l.relation, l.entity)));
                if let Some(u) = l.u_score {
                    prop_assert!((0.0..=1.0).contains(&u));
                }
            }
        }
    }

    #[test]
    fn metrics_stay_in_range(
        seed in 0u64..1000,
        vs in prop::collection::vec(vec3(), 1..6),
        mask in prop::collection::vec(any::<bool>(), 2..16),
        n in 1usize..6,
    ) {
        prop_assume!(mask.iter().any(|&b| b) && mask.iter().any(|&b| !b));
        let m = model(seed);
        let rankings: Vec<_> = vs
            .into_iter()
            .map(|v| rank_links(&m, &query(&m, v, &mask), None).unwrap())
            .collect();
        let mu = mean_rank_fraction(&rankings).unwrap();
        let t = t_at_n(&rankings, n);
        let f = f_at_n(&rankings, n);
        prop_assert!((0.0..=1.0).contains(&mu));
        prop_assert!((0.0..=1.0).contains(&f));
        prop_assert!(t >= 0.0 && t <= n as f64);
        prop_assert!(f <= t + 1e-12, "f {f} exceeds t {t}");
        prop_assert_eq!(f > 0.0, t > 0.0);
    }

    #[test]
    fn candidate_order_does_not_change_the_ranking(
        seed in 0u64..1000,
        v in vec3(),
        mask in prop::collection::vec(any::<bool>(), 1..16),
        shuffle_seed in any::<u64>(),
    ) {
        let m = model(seed);
        let q = query(&m, v, &mask);
        let mut shuffled = q.clone();
        shuffled.candidates.shuffle(&mut kgrec::seeded_rng(shuffle_seed));
        let key = |q: &LinkQuery| -> Vec<Link> {
            rank_links(&m, q, None).unwrap().links.iter().map(|l| (l.relation, l.entity)).collect()
        };
        prop_assert_eq!(key(&q), key(&shuffled));
        let a = evaluate_dataset(&m, std::slice::from_ref(&q), None, 3, EvalMode::PerImage);
        let b = evaluate_dataset(&m, std::slice::from_ref(&shuffled), None, 3, EvalMode::PerImage);
        if let (Ok(a), Ok(b)) = (a, b) {
            prop_assert_eq!(a.summary(), b.summary());
        }
    }

    #[test]
    fn context_score_is_bounded_and_monotone(
        a in 0.0f64..=1.0,
        b in 0.0f64..=1.0,
        x in -5.0f64..5.0,
        y in -5.0f64..5.0,
        sigma in 0.05f64..2.0,
    ) {
        let t = Gaussian { mu: -1.0, sigma };
        let f = Gaussian { mu: 1.0, sigma };
        for (att, s) in [(a, x), (b, y), (a, y), (b, x)] {
            let u = rescore_with(att, s, &t, &f);
            prop_assert!((0.0..=1.0).contains(&u));
        }
        // Equal spreads: lower raw score means more likely true.
        let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
        prop_assert!(rescore_with(a, lo, &t, &f) >= rescore_with(a, hi, &t, &f));
        // More attention never lowers the score.
        let (small, large) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(rescore_with(small, x, &t, &f) <= rescore_with(large, x, &t, &f));
    }
}

#[test]
fn far_tail_scores_still_order() {
    let t = Gaussian { mu: 0.0, sigma: 0.01 };
    let f = Gaussian { mu: 1.0, sigma: 0.01 };
    // Both densities underflow at these points.
    let near_true = rescore_with(0.5, -40.0, &t, &f);
    let near_false = rescore_with(0.5, 40.0, &t, &f);
    assert!(near_true > near_false);
    assert_eq!(near_true, 1.0);
}
