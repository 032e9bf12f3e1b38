use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{bce_loss_and_grads, logistic, Example, MessageGraph, TopoConfig, TopoInputs, TopoModel, TopoParams};
use crate::error::{Error, Result};
use crate::graph::{EntityId, KnowledgeGraph, Relation, Triple};
use crate::ingest::FeatureTable;
use crate::metrics::{pr_auc, ScoredSet, TripleScorer};
use crate::negatives::{ActiveNodes, MixSpec, MixedSampler, NegativePool};
use crate::optim::Optimizer;

/// Everything a training run reads besides its configuration.
#[derive(Clone, Copy)]
pub struct TrainSet<'a> {
    /// Full positive set (train, validation, test); filters random negatives
    /// and fixes the entity registry.
    pub known: &'a KnowledgeGraph,
    pub train_edges: &'a [Triple],
    /// Training-period verified negatives.
    pub pool: &'a NegativePool,
    /// Negative mix per relation; `batch_size` is ignored.
    pub mixes: &'a [MixSpec],
    /// Validation positives and negatives for early stopping.
    pub validation: Option<(&'a [Triple], &'a [Triple])>,
    pub drug_features: Option<&'a FeatureTable>,
    pub protein_features: Option<&'a FeatureTable>,
}

#[derive(Debug)]
pub struct TopoTrainOutcome {
    pub model: TopoModel,
    /// Mean BCE per epoch.
    pub loss_trace: Vec<f64>,
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

/// One optimizer update on the mean BCE of `examples`; returns the loss.
pub fn bce_step(
    params: &mut TopoParams,
    config: &TopoConfig,
    inputs: &TopoInputs,
    graph: &MessageGraph,
    examples: &[Example],
    optimizer: &mut Optimizer,
) -> Result<f64> {
    let (loss, grads) = bce_loss_and_grads(params, config, inputs, graph, examples);
    if !loss.is_finite() {
        return Err(Error::Divergence { epoch: 0, loss });
    }
    let g: Vec<&[f64]> = grads.groups().into_iter().map(|(_, g)| g).collect();
    optimizer.step(params.groups_mut(), g);
    Ok(loss)
}

fn sampler_seed(seed: u64, relation: Relation) -> u64 {
    seed.wrapping_mul(0x9e37_79b9_7f4a_7c15).wrapping_add(relation.code() as u64 + 1)
}

fn validation_pr_auc(model: &TopoModel, pos: &[Triple], neg: &[Triple]) -> Option<f64> {
    let mut set = ScoredSet::default();
    for t in pos {
        set.push(model.logit(t.head, t.relation, t.tail), true);
    }
    for t in neg {
        set.push(model.logit(t.head, t.relation, t.tail), false);
    }
    pr_auc(&set).ok()
}

pub fn train_topo(config: &TopoConfig, set: &TrainSet<'_>) -> Result<TopoTrainOutcome> {
    config.validate()?;
    let inputs = TopoInputs::new(config, set.known, set.drug_features, set.protein_features)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = TopoParams::init(config, &inputs, &mut rng);
    let graph = MessageGraph::from_edges(inputs.counts(), set.train_edges);
    let active = ActiveNodes::from_edges(set.train_edges);
    let mut samplers = Vec::new();
    for rel in Relation::ALL {
        if !set.train_edges.iter().any(|t| t.relation == rel) {
            continue;
        }
        let mut mix = set
            .mixes
            .iter()
            .find(|m| m.relation == rel)
            .cloned()
            .unwrap_or_else(|| MixSpec::default_for(rel, 1, 0));
        mix.seed = sampler_seed(config.seed, rel);
        samplers.push(MixedSampler::new(mix)?);
    }
    if config.epochs > 0 && set.train_edges.is_empty() {
        return Err(Error::Config("no training edges".into()));
    }

    let mut optimizer = Optimizer::new(config.optimizer, config.learning_rate);
    let mut order = set.train_edges.to_vec();
    let mut loss_trace = Vec::with_capacity(config.epochs);
    let early = config.patience > 0 && set.validation.is_some();
    let mut best: Option<(f64, usize, TopoParams)> = None;
    let mut stopped_early = false;

    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let bs = if config.batch_size == 0 { order.len() } else { config.batch_size };
        let (mut total, mut steps) = (0.0, 0usize);
        for batch in order.chunks(bs) {
            let mut examples: Vec<Example> = batch
                .iter()
                .map(|t| Example {
                    u: inputs.global_index(t.head),
                    v: inputs.global_index(t.tail),
                    relation: t.relation,
                    label: 1.0,
                })
                .collect();
            for sampler in &mut samplers {
                let rel = sampler.spec().relation;
                let n = batch.iter().filter(|t| t.relation == rel).count() * config.negatives_per_positive;
                if n == 0 {
                    continue;
                }
                for t in sampler.sample_n(n, set.pool, set.known, &active)? {
                    examples.push(Example {
                        u: inputs.global_index(t.head),
                        v: inputs.global_index(t.tail),
                        relation: rel,
                        label: 0.0,
                    });
                }
            }
            let loss = bce_step(&mut params, config, &inputs, &graph, &examples, &mut optimizer)
                .map_err(|e| match e {
                    Error::Divergence { loss, .. } => Error::Divergence { epoch, loss },
                    other => other,
                })?;
            total += loss;
            steps += 1;
        }
        let mean = total / steps.max(1) as f64;
        if !mean.is_finite() || !params.is_finite() {
            return Err(Error::Divergence { epoch, loss: mean });
        }
        loss_trace.push(mean);

        if early {
            let (vp, vn) = set.validation.unwrap();
            let probe = TopoModel::new(config.clone(), params.clone(), clone_inputs(&inputs), graph.clone());
            let score = validation_pr_auc(&probe, vp, vn).unwrap_or(0.0);
            match &best {
                Some((b, _, _)) if score <= *b => {}
                _ => best = Some((score, epoch, params.clone())),
            }
            if epoch - best.as_ref().unwrap().1 >= config.patience {
                stopped_early = true;
                break;
            }
        }
    }

    let best_epoch = best.as_ref().map(|b| b.1);
    if let Some((_, _, p)) = best {
        params = p;
    }
    Ok(TopoTrainOutcome {
        model: TopoModel::new(config.clone(), params, inputs, graph),
        loss_trace,
        best_epoch,
        stopped_early,
    })
}

fn clone_inputs(inputs: &TopoInputs) -> TopoInputs {
    TopoInputs {
        counts: inputs.counts,
        drug_features: inputs.drug_features.clone(),
        drug_slots: inputs.drug_slots.clone(),
        protein_features: inputs.protein_features.clone(),
        protein_slots: inputs.protein_slots.clone(),
        feature_reads: Default::default(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    pub rank: usize,
    pub drug: EntityId,
    pub tail: EntityId,
    pub probability: f64,
}

/// Highest-scoring type-valid pairs of `relation` absent from `train`.
/// Scores are mapped through the logistic function; ties break by
/// ascending (drug index, tail index).
pub fn top_k_novel<S: TripleScorer + ?Sized>(
    scorer: &S,
    train: &KnowledgeGraph,
    relation: Relation,
    k: usize,
) -> Vec<Prediction> {
    if k == 0 {
        return Vec::new();
    }
    let mut all: Vec<(f64, EntityId, EntityId)> = Vec::new();
    for d in train.entities(relation.head_kind()) {
        for t in train.entities(relation.tail_kind()) {
            if train.is_positive(d, relation, t) {
                continue;
            }
            all.push((logistic(scorer.score_triple(d, relation, t)), d, t));
        }
    }
    all.sort_by(|a, b| {
        b.0.total_cmp(&a.0)
            .then(a.1.index.cmp(&b.1.index))
            .then(a.2.index.cmp(&b.2.index))
    });
    all.into_iter()
        .take(k)
        .enumerate()
        .map(|(i, (p, d, t))| Prediction {
            rank: i + 1,
            drug: d,
            tail: t,
            probability: p,
        })
        .collect()
}

pub fn write_predictions(path: &Path, graph: &KnowledgeGraph, predictions: &[Prediction]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    writeln!(w, "#rank\tdrug_id\ttail_id\tprobability").map_err(io)?;
    for p in predictions {
        writeln!(
            w,
            "{}\t{}\t{}\t{:.6}",
            p.rank,
            graph.name(p.drug),
            graph.name(p.tail),
            p.probability
        )
        .map_err(io)?;
    }
    w.flush().map_err(io)
}
