use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{loss_gradients, KgeConfig, KgeFamily, KgeParams};
use crate::error::{Error, Result};
use crate::graph::{KnowledgeGraph, Triple};
use crate::negatives::{corrupt_filtered, Side};

#[derive(Clone, Debug)]
pub struct TrainedKge {
    pub params: KgeParams,
    /// Mean hinge loss per (positive, negative) pair, one entry per epoch.
    pub loss_trace: Vec<f64>,
}

/// Minibatch SGD on the margin ranking loss. Negatives are filtered
/// corruptions of head or tail (chosen uniformly) against `known`, which
/// also fixes the entity registry sizes.
pub fn train(known: &KnowledgeGraph, edges: &[Triple], config: &KgeConfig) -> Result<TrainedKge> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = KgeParams::for_graph(config, known, &mut rng)?;
    let mut loss_trace = Vec::with_capacity(config.epochs);
    if config.epochs > 0 && edges.is_empty() {
        return Err(Error::Config("no training edges".into()));
    }
    let mut order: Vec<Triple> = edges.to_vec();
    let k = config.negatives_per_positive;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(config.batch_size) {
            let mut negatives = Vec::with_capacity(batch.len() * k);
            for pos in batch {
                for _ in 0..k {
                    let side = if rng.random_bool(0.5) { Side::Head } else { Side::Tail };
                    negatives.push(corrupt_filtered(pos, known, side, &mut rng)?);
                }
            }
            let (loss, grads) = loss_gradients(&params, batch, &negatives, config.margin)?;
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            epoch_loss += loss;
            params.apply_sgd(&grads, config.learning_rate);
        }
        if config.family == KgeFamily::TransE {
            params.renormalize_entities();
        }
        let mean = epoch_loss / (order.len() * k) as f64;
        if !mean.is_finite() || !params.is_finite() {
            return Err(Error::Divergence { epoch, loss: mean });
        }
        loss_trace.push(mean);
    }
    Ok(TrainedKge { params, loss_trace })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Relation;
    use crate::ingest::{generate_synthetic, SyntheticSpec};

    fn small() -> KnowledgeGraph {
        generate_synthetic(&SyntheticSpec::uniform(20, 2, 0.4, 0.02, 5)).unwrap().0
    }

    #[test]
    fn zero_epochs_returns_init() {
        let g = small();
        let cfg = KgeConfig {
            family: KgeFamily::DistMult,
            entity_dim: 8,
            epochs: 0,
            seed: 9,
            ..KgeConfig::default()
        };
        let out = train(&g, g.edges(), &cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        assert_eq!(out.params, KgeParams::for_graph(&cfg, &g, &mut rng).unwrap());
        assert!(out.loss_trace.is_empty());
    }

    #[test]
    fn training_is_deterministic_and_keeps_norms() {
        let g = small();
        for family in KgeFamily::ALL {
            let cfg = KgeConfig {
                family,
                entity_dim: 8,
                relation_dim: 6,
                epochs: 5,
                batch_size: 16,
                seed: 3,
                ..KgeConfig::default()
            };
            let a = train(&g, g.edges(), &cfg).unwrap();
            let b = train(&g, g.edges(), &cfg).unwrap();
            assert_eq!(a.loss_trace, b.loss_trace, "{family}");
            assert!(a.params.is_finite());
            if family == KgeFamily::TransE {
                for row in a.params.entities.chunks(8) {
                    assert!(row.iter().map(|v| v * v).sum::<f64>().sqrt() <= 1.0 + 1e-9);
                }
            }
        }
    }

    #[test]
    fn one_active_step_widens_the_gap() {
        let mut g = KnowledgeGraph::new();
        let pos = g.add_triple("d0", Relation::DrugProtein, "p0", None).unwrap();
        g.add_triple("d1", Relation::DrugProtein, "p1", None).unwrap();
        let neg = Triple::new(pos.head, Relation::DrugProtein, g.lookup("p1").unwrap(), None);
        for family in KgeFamily::ALL {
            let cfg = KgeConfig {
                family,
                entity_dim: 4,
                relation_dim: 4,
                margin: 100.0,
                seed: 1,
                ..KgeConfig::default()
            };
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            let mut p = KgeParams::for_graph(&cfg, &g, &mut rng).unwrap();
            let gap = |p: &KgeParams| p.score(&pos).unwrap() - p.score(&neg).unwrap();
            let before = gap(&p);
            let (_, grads) = loss_gradients(&p, &[pos], &[neg], cfg.margin).unwrap();
            p.apply_sgd(&grads, 1e-3);
            assert!(gap(&p) > before, "{family}");
        }
    }
}
