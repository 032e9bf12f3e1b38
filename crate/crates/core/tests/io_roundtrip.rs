mod common;

use std::collections::HashSet;

use common::*;
use kgbench::graph::{EntityKind, KnowledgeGraph, Relation, Triple};
use kgbench::ingest::{load_edges, load_features, load_negatives, write_edges, write_features, write_negatives, FeatureTable};
use kgbench::negatives::{NegativePool, Tier};
use kgbench::split::{read_manifest, split_relation, write_manifest, SplitConfig};
use proptest::prelude::*;
use rand::Rng;

fn year_set(g: &KnowledgeGraph) -> HashSet<(String, Relation, String, Option<i32>)> {
    g.edges()
        .iter()
        .map(|t| (g.name(t.head).to_string(), t.relation, g.name(t.tail).to_string(), t.year))
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn edges_survive_a_round_trip(seed in 0u64..100_000, n in 0usize..200, p_na in 0.0f64..0.5) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, [12, 10, 10], n, p_na);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("edges.tsv");
        write_edges(&path, &g, g.edges()).unwrap();
        let mut back = KnowledgeGraph::new();
        let added = load_edges(&path, None, &mut back).unwrap();
        prop_assert_eq!(added, g.num_edges());
        prop_assert_eq!(year_set(&back), year_set(&g));
    }

    #[test]
    fn negatives_and_features_survive_a_round_trip(seed in 0u64..100_000, dim in 1usize..6) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, [8, 8, 8], 40, 0.2);
        let mut pool = NegativePool::new();
        for _ in 0..30 {
            let t = random_triple(&mut r, &g);
            let tier = match t.relation {
                Relation::DrugProtein => Tier::Verified,
                Relation::DrugIndication => if r.random_bool(0.5) { Tier::Hard } else { Tier::Medium },
            };
            if !g.contains(&t) {
                pool.insert(tier, Triple { year: Some(r.random_range(2000..2030)), ..t });
            }
        }
        let dir = tempfile::tempdir().unwrap();
        let np = dir.path().join("neg.tsv");
        write_negatives(&np, &pool, &g).unwrap();
        let (back, _) = load_negatives(&np, &g).unwrap();
        let a: Vec<_> = pool.iter().map(|(t, x)| (t, *x)).collect();
        let b: Vec<_> = back.iter().map(|(t, x)| (t, *x)).collect();
        prop_assert_eq!(a, b);

        let table = FeatureTable {
            kind: EntityKind::Protein,
            dim,
            vectors: (0..8u32)
                .filter_map(|i| {
                    r.random_bool(0.7)
                        .then(|| (i, (0..dim).map(|_| r.random_range(-1e3..1e3)).collect()))
                })
                .collect(),
            missing: Vec::new(),
            skipped: 0,
        };
        let fp = dir.path().join("feat.tsv");
        write_features(&fp, &table, &g).unwrap();
        let read = load_features(&fp, EntityKind::Protein, &g).unwrap();
        prop_assert_eq!(&read.vectors, &table.vectors);
        prop_assert_eq!(read.missing.len() + read.vectors.len(), 8);
    }

    #[test]
    fn manifest_reproduces_the_split(seed in 0u64..100_000, n in 1usize..300) {
        let mut r = rng(seed);
        let g = random_graph(&mut r, [15, 15, 15], n, 0.1);
        let cfg = SplitConfig { seed, ..SplitConfig::default() };
        let splits: Vec<_> = Relation::ALL.iter().map(|&rel| split_relation(&g, rel, &cfg).unwrap()).collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.tsv");
        write_manifest(&path, &g, &splits).unwrap();
        let back = read_manifest(&path, &g).unwrap();
        for (a, b) in splits.iter().zip(&back) {
            let keys = |v: &[Triple]| v.iter().map(Triple::key).collect::<HashSet<_>>();
            prop_assert_eq!(keys(&a.train), keys(&b.train));
            prop_assert_eq!(keys(&a.validation), keys(&b.validation));
            prop_assert_eq!(keys(&a.test), keys(&b.test));
        }
    }
}
