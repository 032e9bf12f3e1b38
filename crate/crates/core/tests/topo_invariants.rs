mod common;

use common::*;
use kgbench::graph::{EntityId, EntityKind, KnowledgeGraph, Relation, Triple};
use kgbench::ingest::{generate_synthetic, synthetic_features, SyntheticSpec};
use kgbench::negatives::MixSpec;
use kgbench::topo::{encode_nodes, top_k_novel, train_topo, MessageGraph, TopoConfig, TopoInputs, TopoParams, TrainSet};
use proptest::prelude::*;
use rand::seq::SliceRandom;

fn learnable(sd: usize, layers: usize) -> TopoConfig {
    TopoConfig {
        shared_dim: sd,
        layers,
        indication_init_dim: 3,
        use_protein_features: false,
        epochs: 5,
        patience: 0,
        ..TopoConfig::default()
    }
}

fn state_of(z: &ndarray::Array2<f64>, inputs: &TopoInputs, id: EntityId) -> Vec<f64> {
    z.row(inputs.global_index(id)).to_vec()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    /// Relabelling entities within each kind relabels the node states and
    /// nothing else.
    #[test]
    fn permutation_equivariance(seed in 0u64..10_000, n_edges in 1usize..40) {
        let mut r = rng(seed);
        let counts = [5, 4, 4];
        let g = random_graph(&mut r, counts, n_edges, 0.0);
        let perms: Vec<Vec<u32>> = counts
            .iter()
            .map(|&n| {
                let mut p: Vec<u32> = (0..n as u32).collect();
                p.shuffle(&mut r);
                p
            })
            .collect();
        let mut h = KnowledgeGraph::new();
        for kind in EntityKind::ALL {
            let mut by_new = vec![0u32; counts[kind.code()]];
            for (old, &new) in perms[kind.code()].iter().enumerate() {
                by_new[new as usize] = old as u32;
            }
            for old in by_new {
                h.intern(kind, g.name(EntityId::new(kind, old))).unwrap();
            }
        }
        let moved = |id: EntityId| EntityId::new(id.kind, perms[id.kind.code()][id.index as usize]);
        for t in g.edges() {
            h.insert(Triple::new(moved(t.head), t.relation, moved(t.tail), t.year)).unwrap();
        }

        let cfg = learnable(4, 2);
        let ig = TopoInputs::new(&cfg, &g, None, None).unwrap();
        let ih = TopoInputs::new(&cfg, &h, None, None).unwrap();
        let pg = TopoParams::init(&cfg, &ig, &mut r);
        let mut ph = pg.clone();
        for i in 0..counts[0] {
            ph.drug_embeddings.row_mut(perms[0][i] as usize).assign(&pg.drug_embeddings.row(i));
        }
        for i in 0..counts[1] {
            ph.protein_embeddings.row_mut(perms[1][i] as usize).assign(&pg.protein_embeddings.row(i));
        }
        for i in 0..counts[2] {
            ph.indication_embeddings.row_mut(perms[2][i] as usize).assign(&pg.indication_embeddings.row(i));
        }
        let zg = encode_nodes(&pg, &cfg, &ig, &MessageGraph::from_edges(counts, g.edges()));
        let zh = encode_nodes(&ph, &cfg, &ih, &MessageGraph::from_edges(counts, h.edges()));
        for kind in EntityKind::ALL {
            for id in g.entities(kind) {
                let a = state_of(&zg, &ig, id);
                let b = state_of(&zh, &ih, moved(id));
                for (x, y) in a.iter().zip(&b) {
                    prop_assert!((x - y).abs() <= 1e-12, "{id:?}: {x} vs {y}");
                }
            }
        }
    }

    #[test]
    fn message_graph_is_symmetric(seed in 0u64..10_000, n_edges in 0usize..60) {
        let mut r = rng(seed);
        let counts = [6, 5, 5];
        let g = random_graph(&mut r, counts, n_edges, 0.0);
        let mg = MessageGraph::from_edges(counts, g.edges());
        for u in 0..mg.n_nodes() {
            for &v in mg.neighbors(u) {
                prop_assert!(mg.neighbors(v).contains(&u));
            }
        }
    }
}

/// Chain d0 - p0 - d1 - p1 - d2 - p2 - d3 plus one isolated indication.
fn chain() -> KnowledgeGraph {
    let mut g = KnowledgeGraph::new();
    for i in 0..4 {
        if i < 3 {
            g.add_triple(&format!("d{i}"), Relation::DrugProtein, &format!("p{i}"), None).unwrap();
        }
        if i > 0 {
            g.add_triple(&format!("d{i}"), Relation::DrugProtein, &format!("p{}", i - 1), None).unwrap();
        }
    }
    g.intern(EntityKind::Indication, "i0").unwrap();
    g
}

#[test]
fn receptive_field_is_l_hops() {
    let g = chain();
    let cfg = learnable(4, 2);
    let inputs = TopoInputs::new(&cfg, &g, None, None).unwrap();
    let counts = inputs.counts();
    let mg = MessageGraph::from_edges(counts, g.edges());
    let mut r = rng(1);
    let params = TopoParams::init(&cfg, &inputs, &mut r);
    let d0 = g.lookup("d0").unwrap();
    let base = state_of(&encode_nodes(&params, &cfg, &inputs, &mg), &inputs, d0);

    // p1 is three hops from d0, d1 two hops
    let far = g.lookup("p1").unwrap();
    let mut p = params.clone();
    p.protein_embeddings.row_mut(far.index as usize).mapv_inplace(|v| v + 1.0);
    assert_eq!(state_of(&encode_nodes(&p, &cfg, &inputs, &mg), &inputs, d0), base);

    let near = g.lookup("d1").unwrap();
    let mut p = params.clone();
    p.drug_embeddings.row_mut(near.index as usize).mapv_inplace(|v| v + 1.0);
    let moved = encode_nodes(&p, &cfg, &inputs, &mg);
    let unchanged = encode_nodes(&params, &cfg, &inputs, &mg);
    assert_ne!(moved, unchanged);
}

#[test]
fn learnable_ablation_never_reads_features() {
    let spec = SyntheticSpec::uniform(24, 3, 0.5, 0.02, 4);
    let (g, pool) = generate_synthetic(&spec).unwrap();
    let edges = g.edges().to_vec();
    let mixes: Vec<MixSpec> = Relation::ALL.iter().map(|&r| MixSpec::default_for(r, 1, 0)).collect();
    let features = synthetic_features(&spec, &g, EntityKind::Protein, 6, 2);
    let set = TrainSet {
        known: &g,
        train_edges: &edges,
        pool: &pool,
        mixes: &mixes,
        validation: None,
        drug_features: None,
        protein_features: Some(&features),
    };
    let off = train_topo(&learnable(4, 1), &set).unwrap();
    assert_eq!(off.model.inputs.feature_reads(), 0);

    let on = TopoConfig {
        use_protein_features: true,
        protein_feature_dim: 6,
        ..learnable(4, 1)
    };
    let out = train_topo(&on, &set).unwrap();
    assert!(out.model.inputs.feature_reads() > 0);
    assert_eq!(out.model.inputs.fallback_count(EntityKind::Protein), 0);
}

#[test]
fn training_and_ranking_are_reproducible() {
    let spec = SyntheticSpec::uniform(24, 3, 0.5, 0.02, 8);
    let (g, pool) = generate_synthetic(&spec).unwrap();
    let edges = g.edges().to_vec();
    let mixes: Vec<MixSpec> = Relation::ALL.iter().map(|&r| MixSpec::default_for(r, 1, 0)).collect();
    let set = TrainSet {
        known: &g,
        train_edges: &edges,
        pool: &pool,
        mixes: &mixes,
        validation: None,
        drug_features: None,
        protein_features: None,
    };
    let cfg = TopoConfig { seed: 3, ..learnable(6, 2) };
    let a = train_topo(&cfg, &set).unwrap();
    let b = train_topo(&cfg, &set).unwrap();
    assert_eq!(a.loss_trace, b.loss_trace);
    assert_eq!(a.model.params, b.model.params);
    let ka = top_k_novel(&a.model, &g, Relation::DrugIndication, 20);
    let kb = top_k_novel(&b.model, &g, Relation::DrugIndication, 20);
    assert_eq!(ka, kb);
    assert!(ka.iter().all(|p| !g.is_positive(p.drug, Relation::DrugIndication, p.tail)));

    let other = train_topo(&TopoConfig { seed: 4, ..cfg }, &set).unwrap();
    assert_ne!(a.loss_trace, other.loss_trace);
}
