use std::collections::{BTreeSet, HashSet, VecDeque};

use kgrec::graph::{
    corrupt_tail, gen_toy_graph, make_splits, transitive_expand, EntityId, RelationId, Triple, TripleStore,
};
use proptest::prelude::*;

fn store_from(edges: &[(u8, u8, u8)]) -> TripleStore {
    let mut store = TripleStore::new();
    for &(h, r, t) in edges {
        store.insert_labels(&format!("v{h}"), &format!("r{}", r % 2), &format!("v{t}"));
    }
    store
}

/// Length of the shortest path from `from` to `to` using only `relation`
/// edges of `store`, if any.
fn shortest_path(store: &TripleStore, from: EntityId, relation: RelationId, to: EntityId) -> Option<usize> {
    let mut queue = VecDeque::from([(from, 0usize)]);
    let mut seen = HashSet::from([from]);
    while let Some((node, dist)) = queue.pop_front() {
        for t in store.triples().iter().filter(|t| t.head == node && t.relation == relation) {
            if t.tail == to {
                return Some(dist + 1);
            }
            if seen.insert(t.tail) {
                queue.push_back((t.tail, dist + 1));
            }
        }
    }
    None
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn expansion_is_a_witnessed_superset(
        edges in prop::collection::vec((0u8..12, 0u8..2, 0u8..12), 1..40),
        depth in 1usize..5,
    ) {
        let store = store_from(&edges);
        let relations: Vec<RelationId> = (0..store.relations().len() as u32).map(RelationId).collect();
        let out = transitive_expand(&store, &relations, depth).unwrap();
        let original: HashSet<Triple> = store.triples().iter().copied().collect();
        let expanded: HashSet<Triple> = out.triples().iter().copied().collect();
        prop_assert!(original.is_subset(&expanded));
        prop_assert_eq!(&out.triples()[..store.len()], store.triples());
        for t in expanded.difference(&original) {
            let len = shortest_path(&store, t.head, t.relation, t.tail);
            prop_assert!(matches!(len, Some(l) if l <= depth), "{t} has no witness within {depth}");
        }
        if depth == 1 {
            prop_assert_eq!(out.triples(), store.triples());
        }
    }

    #[test]
    fn splits_partition_and_isolate_holdout(
        edges in prop::collection::vec((0u8..15, 0u8..2, 0u8..15), 1..60),
        holdout in prop::collection::btree_set(0u32..15, 0..4),
        fraction in 0.0f64..0.5,
        seed in any::<u64>(),
    ) {
        let store = store_from(&edges);
        let holdout: BTreeSet<EntityId> = holdout
            .into_iter()
            .filter(|&e| (e as usize) < store.entity_count())
            .map(EntityId)
            .collect();
        let s = make_splits(&store, &holdout, fraction, seed).unwrap();
        let all: Vec<Triple> = s.train.iter().chain(&s.standard_test).chain(&s.hard_test).copied().collect();
        let unique: HashSet<Triple> = all.iter().copied().collect();
        prop_assert_eq!(unique.len(), all.len(), "splits overlap");
        let input: HashSet<Triple> = store.triples().iter().copied().collect();
        prop_assert_eq!(unique, input);
        for t in &s.train {
            prop_assert!(!holdout.contains(&t.head) && !holdout.contains(&t.tail));
        }
        for t in &s.hard_test {
            prop_assert!(holdout.contains(&t.head) || holdout.contains(&t.tail));
        }
        let again = make_splits(&store, &holdout, fraction, seed).unwrap();
        prop_assert_eq!(&s.train, &again.train);
        prop_assert_eq!(&s.standard_test, &again.standard_test);
    }

    #[test]
    fn corruptions_are_new_and_change_the_tail(
        edges in prop::collection::vec((0u8..10, 0u8..2, 0u8..10), 1..30),
        seed in any::<u64>(),
    ) {
        let store = store_from(&edges);
        let mut rng = kgrec::seeded_rng(seed);
        for t in store.triples() {
            match corrupt_tail(t, &store, &mut rng) {
                Ok(c) => {
                    prop_assert!(!store.contains(&c));
                    prop_assert_ne!(c.tail, t.tail);
                    prop_assert_eq!((c.head, c.relation), (t.head, t.relation));
                }
                // Every alternative tail already forms a known triple.
                Err(_) => {
                    let free = (0..store.entity_count() as u32)
                        .map(EntityId)
                        .any(|e| e != t.tail && !store.contains_parts(t.head, t.relation, e));
                    prop_assert!(!free);
                }
            }
        }
    }
}

#[test]
fn binary_tree_counts() {
    let store = gen_toy_graph(2, 3, 0, 0).unwrap();
    assert_eq!(store.entity_count(), 15);
    assert_eq!(store.len(), 28);
    let with_parts = gen_toy_graph(2, 3, 5, 0).unwrap();
    let meronym = with_parts.relation_id("part_meronym").unwrap();
    let holonym = with_parts.relation_id("part_holonym").unwrap();
    let count = |r| with_parts.triples().iter().filter(|t| t.relation == r).count();
    assert_eq!((count(meronym), count(holonym)), (5, 5));
}

#[test]
fn five_chain_closes_to_ten_triples() {
    let mut store = TripleStore::new();
    for (a, b) in [("a", "b"), ("b", "c"), ("c", "d"), ("d", "e")] {
        store.insert_labels(a, "hypernym", b);
    }
    let hyper = store.resolve_relations(&["hypernym"]).unwrap();
    assert_eq!(transitive_expand(&store, &hyper, 4).unwrap().len(), 10);
    assert_eq!(transitive_expand(&store, &hyper, 2).unwrap().len(), 7);
}
