use kgrec::graph::{gen_toy_graph, transitive_expand, EntityId, RelationId, Triple, Vocab};
use kgrec::kg::{
    batch_hinge_loss, loss_gradients, train, KgModel, ModelConfig, Objective, RelationParams, Variant,
};
use proptest::prelude::*;
use rand::Rng;

fn random_model(seed: u64, d: usize, k: usize, scale: f64) -> KgModel {
    let entities = Vocab::from_labels((0..5).map(|i| format!("e{i}"))).unwrap();
    let relations = Vocab::from_labels(["r0", "r1"]).unwrap();
    let config = ModelConfig {
        dim: d,
        slices: k,
        seed,
        ..ModelConfig::default()
    };
    let mut model = KgModel::init(Variant::Ntl, config, entities, relations).unwrap();
    let mut rng = kgrec::seeded_rng(seed);
    model.for_each_slot_mut(|_, p| p.iter_mut().for_each(|x| *x = rng.random_range(-scale..scale)));
    model
}

fn triple((h, r, t): (u32, u32, u32)) -> Triple {
    Triple::new(EntityId(h), RelationId(r), EntityId(t))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn tensor_score_is_bounded_by_u(
        seed in any::<u64>(),
        d in 1usize..5,
        k in 1usize..4,
        h in prop::collection::vec(-50.0f64..50.0, 4),
        t in prop::collection::vec(-50.0f64..50.0, 4),
    ) {
        let model = random_model(seed, d, k, 3.0);
        for r in 0..2 {
            let RelationParams::Tensor(p) = &model.relation_params[r] else { unreachable!() };
            let bound: f64 = p.u.iter().map(|u| u.abs()).sum();
            let s = model.score(&h[..d], RelationId(r as u32), &t[..d]).unwrap();
            prop_assert!(s.abs() <= bound + 1e-12);
            // Pure: bit-identical on repeat.
            prop_assert_eq!(s.to_bits(), model.score(&h[..d], RelationId(r as u32), &t[..d]).unwrap().to_bits());
        }
    }

    #[test]
    fn hinge_is_nonnegative_and_zero_exactly_when_margins_hold(
        seed in any::<u64>(),
        pairs in prop::collection::vec(((0u32..5, 0u32..2, 0u32..5), 0u32..5), 1..8),
    ) {
        let model = random_model(seed, 3, 2, 1.0);
        let pos: Vec<Triple> = pairs.iter().map(|&(p, _)| triple(p)).collect();
        let neg: Vec<Triple> = pairs.iter().map(|&((h, r, _), t)| triple((h, r, t))).collect();
        let loss = batch_hinge_loss(&model, &pos, &neg).unwrap();
        prop_assert!(loss >= 0.0);
        let all_hold = pos.iter().zip(&neg).all(|(p, n)| {
            model.score_triple(n).unwrap() >= model.score_triple(p).unwrap() + model.config.gamma
        });
        prop_assert_eq!(loss == 0.0, all_hold);
    }

    #[test]
    fn duplicated_batch_has_identical_gradient(
        seed in any::<u64>(),
        pairs in prop::collection::vec(((0u32..5, 0u32..2, 0u32..5), 0u32..5), 1..6),
    ) {
        let model = random_model(seed, 3, 2, 1.0);
        let pos: Vec<Triple> = pairs.iter().map(|&(p, _)| triple(p)).collect();
        let neg: Vec<Triple> = pairs.iter().map(|&((h, r, _), t)| triple((h, r, t))).collect();
        let once = loss_gradients(&model, &pos, &neg, Objective::Hinge).unwrap();
        let pos2: Vec<Triple> = pos.iter().chain(&pos).copied().collect();
        let neg2: Vec<Triple> = neg.iter().chain(&neg).copied().collect();
        let twice = loss_gradients(&model, &pos2, &neg2, Objective::Hinge).unwrap();
        for (a, b) in once.slots().iter().zip(twice.slots()) {
            for (x, y) in a.iter().zip(b) {
                prop_assert!((x - y).abs() <= 1e-12 * (1.0 + x.abs()));
            }
        }
    }
}

#[test]
fn training_is_bit_reproducible_and_makes_progress() {
    let base = gen_toy_graph(3, 3, 0, 2).unwrap();
    let rel = base.resolve_relations(&["hypernym", "hyponym"]).unwrap();
    let store = transitive_expand(&base, &rel, 4).unwrap();
    for variant in [Variant::TransE, Variant::Ntl, Variant::Sntl] {
        let config = ModelConfig {
            dim: 8,
            slices: 2,
            epochs: 200,
            batch_size: 50,
            learning_rate: 0.1,
            seed: 9,
            ..ModelConfig::default()
        };
        let run = || {
            let m = KgModel::init(variant, config.clone(), store.entities().clone(), store.relations().clone()).unwrap();
            train(m, &store).unwrap()
        };
        let (a, ra) = run();
        let (b, rb) = run();
        assert_eq!(ra, rb, "{variant}");
        assert_eq!(a.embedding, b.embedding, "{variant}");
        assert!(ra.last().unwrap() < ra.first().unwrap(), "{variant}: {ra:?}");
    }
}

#[test]
fn sum_slices_keeps_combination_at_ones() {
    let store = gen_toy_graph(2, 2, 2, 0).unwrap();
    let config = ModelConfig {
        dim: 4,
        slices: 3,
        epochs: 20,
        batch_size: 4,
        learning_rate: 0.1,
        sum_slices: true,
        ..ModelConfig::default()
    };
    let m = KgModel::init(Variant::Ntl, config, store.entities().clone(), store.relations().clone()).unwrap();
    let (m, _) = train(m, &store).unwrap();
    for p in &m.relation_params {
        let RelationParams::Tensor(p) = p else { unreachable!() };
        assert_eq!(p.u, vec![1.0; 3]);
    }
}
