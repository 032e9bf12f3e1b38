//! Shallow knowledge-graph embedding models.
//!
//! | family   | score                         |
//! |----------|-------------------------------|
//! | TransE   | -‖h + r - t‖                  |
//! | TransR   | -‖M_r h + r - M_r t‖          |
//! | RotatE   | -‖h ∘ r - t‖, r = e^{iθ}      |
//! | ComplEx  | Re(⟨h, r, conj(t)⟩)           |
//! | DistMult | ⟨h, r, t⟩                     |
//!
//! Complex-valued families store coordinates as interleaved (re, im) pairs.
//! RotatE relations are stored as phase angles, one per complex coordinate.

mod train;

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EntityId, EntityKind, KnowledgeGraph, Relation, Triple};
use crate::metrics::TripleScorer;

pub use train::{train, TrainedKge};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KgeFamily {
    TransE,
    TransR,
    RotatE,
    ComplEx,
    DistMult,
}

impl KgeFamily {
    pub const ALL: [KgeFamily; 5] = [
        KgeFamily::TransE,
        KgeFamily::TransR,
        KgeFamily::RotatE,
        KgeFamily::ComplEx,
        KgeFamily::DistMult,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            KgeFamily::TransE => "transe",
            KgeFamily::TransR => "transr",
            KgeFamily::RotatE => "rotate",
            KgeFamily::ComplEx => "complex",
            KgeFamily::DistMult => "distmult",
        }
    }
}

impl fmt::Display for KgeFamily {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for KgeFamily {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        KgeFamily::ALL
            .into_iter()
            .find(|f| f.as_str() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown KGE family `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KgeConfig {
    pub family: KgeFamily,
    pub entity_dim: usize,
    /// TransR only; the other families use `entity_dim`.
    pub relation_dim: usize,
    pub margin: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub negatives_per_positive: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for KgeConfig {
    fn default() -> Self {
        KgeConfig {
            family: KgeFamily::TransE,
            entity_dim: 128,
            relation_dim: 128,
            margin: 1.0,
            learning_rate: 0.01,
            epochs: 500,
            negatives_per_positive: 1,
            batch_size: 128,
            seed: 0,
        }
    }
}

impl KgeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.entity_dim == 0 || self.relation_dim == 0 {
            return Err(Error::Config("embedding dimensions must be positive".into()));
        }
        if matches!(self.family, KgeFamily::RotatE | KgeFamily::ComplEx) && self.entity_dim % 2 != 0 {
            return Err(Error::Config(format!("{} needs an even entity_dim", self.family)));
        }
        if !(self.margin > 0.0) || !(self.learning_rate > 0.0) {
            return Err(Error::Config("margin and learning_rate must be positive".into()));
        }
        if self.negatives_per_positive == 0 || self.batch_size == 0 {
            return Err(Error::Config("negatives_per_positive and batch_size must be positive".into()));
        }
        Ok(())
    }

    /// Width of one relation row.
    pub fn relation_width(&self) -> usize {
        match self.family {
            KgeFamily::TransR => self.relation_dim,
            KgeFamily::RotatE => self.entity_dim / 2,
            _ => self.entity_dim,
        }
    }
}

/// Embedding tables. Entity rows are laid out drugs, proteins, indications;
/// relation rows follow the relation codes.
#[derive(Clone, Debug, PartialEq)]
pub struct KgeParams {
    pub family: KgeFamily,
    pub entity_counts: [usize; 3],
    pub n_relations: usize,
    pub entity_dim: usize,
    pub relation_width: usize,
    pub entities: Vec<f64>,
    pub relations: Vec<f64>,
    /// TransR: one relation_width x entity_dim matrix per relation, row-major.
    pub projections: Vec<f64>,
}

/// Gradient tables congruent to [`KgeParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct KgeGrads {
    pub entities: Vec<f64>,
    pub relations: Vec<f64>,
    pub projections: Vec<f64>,
}

impl KgeGrads {
    pub fn zeros_like(p: &KgeParams) -> Self {
        KgeGrads {
            entities: vec![0.0; p.entities.len()],
            relations: vec![0.0; p.relations.len()],
            projections: vec![0.0; p.projections.len()],
        }
    }

    pub fn is_zero(&self) -> bool {
        self.entities
            .iter()
            .chain(&self.relations)
            .chain(&self.projections)
            .all(|&g| g == 0.0)
    }
}

impl KgeParams {
    /// Uniform init in [-6/√d, 6/√d]; TransR projections start as the
    /// identity padded with zeros, RotatE phases uniform in [-π, π].
    pub fn init<R: Rng + ?Sized>(config: &KgeConfig, entity_counts: [usize; 3], rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.entity_dim;
        let w = config.relation_width();
        let n_rel = Relation::ALL.len();
        let n_ent: usize = entity_counts.iter().sum();
        let bound = 6.0 / (d as f64).sqrt();
        let entities = (0..n_ent * d).map(|_| rng.random_range(-bound..bound)).collect();
        let relations = match config.family {
            KgeFamily::RotatE => (0..n_rel * w)
                .map(|_| rng.random_range(-std::f64::consts::PI..std::f64::consts::PI))
                .collect(),
            _ => {
                let rb = 6.0 / (w as f64).sqrt();
                (0..n_rel * w).map(|_| rng.random_range(-rb..rb)).collect()
            }
        };
        let projections = if config.family == KgeFamily::TransR {
            let mut m = vec![0.0; n_rel * w * d];
            for r in 0..n_rel {
                for i in 0..w.min(d) {
                    m[r * w * d + i * d + i] = 1.0;
                }
            }
            m
        } else {
            Vec::new()
        };
        Ok(KgeParams {
            family: config.family,
            entity_counts,
            n_relations: n_rel,
            entity_dim: d,
            relation_width: w,
            entities,
            relations,
            projections,
        })
    }

    pub fn for_graph<R: Rng + ?Sized>(config: &KgeConfig, graph: &KnowledgeGraph, rng: &mut R) -> Result<Self> {
        Self::init(config, EntityKind::ALL.map(|k| graph.count(k)), rng)
    }

    pub fn n_entities(&self) -> usize {
        self.entity_counts.iter().sum()
    }

    pub fn num_parameters(&self) -> usize {
        self.entities.len() + self.relations.len() + self.projections.len()
    }

    pub fn entity_row(&self, id: EntityId) -> Result<usize> {
        let k = id.kind.code();
        if id.index as usize >= self.entity_counts[k] {
            return Err(Error::IndexOutOfRange(format!("{id:?} has no embedding row")));
        }
        Ok(self.entity_counts[..k].iter().sum::<usize>() + id.index as usize)
    }

    fn rows(&self, t: &Triple) -> Result<(usize, usize, usize)> {
        let r = t.relation.code();
        if r >= self.n_relations {
            return Err(Error::IndexOutOfRange(format!("relation {} has no row", t.relation)));
        }
        Ok((self.entity_row(t.head)?, r, self.entity_row(t.tail)?))
    }

    pub fn score(&self, t: &Triple) -> Result<f64> {
        let (h, r, tl) = self.rows(t)?;
        Ok(self.score_rows(h, r, tl))
    }

    fn entity(&self, row: usize) -> &[f64] {
        &self.entities[row * self.entity_dim..(row + 1) * self.entity_dim]
    }

    fn relation(&self, row: usize) -> &[f64] {
        &self.relations[row * self.relation_width..(row + 1) * self.relation_width]
    }

    fn projection(&self, rel: usize) -> &[f64] {
        let n = self.relation_width * self.entity_dim;
        &self.projections[rel * n..(rel + 1) * n]
    }

    /// Score by raw table rows; higher is more plausible.
    pub fn score_rows(&self, h: usize, r: usize, t: usize) -> f64 {
        let (hv, rv, tv) = (self.entity(h), self.relation(r), self.entity(t));
        match self.family {
            KgeFamily::TransE => -norm(hv.iter().zip(rv).zip(tv).map(|((h, r), t)| h + r - t)),
            KgeFamily::TransR => {
                let m = self.projection(r);
                let (mh, mt) = (matvec(m, hv, self.entity_dim), matvec(m, tv, self.entity_dim));
                -norm(mh.iter().zip(rv).zip(&mt).map(|((a, r), b)| a + r - b))
            }
            KgeFamily::RotatE => -norm(rotate_residual(hv, rv, tv).into_iter()),
            KgeFamily::ComplEx => {
                let mut s = 0.0;
                for i in 0..hv.len() / 2 {
                    let (hr, hi) = (hv[2 * i], hv[2 * i + 1]);
                    let (rr, ri) = (rv[2 * i], rv[2 * i + 1]);
                    let (tr, ti) = (tv[2 * i], tv[2 * i + 1]);
                    s += hr * rr * tr + hi * rr * ti + hr * ri * ti - hi * ri * tr;
                }
                s
            }
            // r * (h * t) keeps score(h, r, t) and score(t, r, h) bitwise equal
            KgeFamily::DistMult => hv.iter().zip(rv).zip(tv).map(|((h, r), t)| r * (h * t)).sum(),
        }
    }

    /// Adds `coeff * ∂score/∂θ` for the triple at (h, r, t) into `g`.
    pub fn accumulate_score_grad(&self, h: usize, r: usize, t: usize, coeff: f64, g: &mut KgeGrads) {
        let d = self.entity_dim;
        let w = self.relation_width;
        let (hv, rv, tv) = (self.entity(h), self.relation(r), self.entity(t));
        let mut gh = vec![0.0; d];
        let mut gt = vec![0.0; d];
        let mut gr = vec![0.0; w];
        match self.family {
            KgeFamily::TransE => {
                let x: Vec<f64> = hv.iter().zip(rv).zip(tv).map(|((h, r), t)| h + r - t).collect();
                let n = norm(x.iter().copied());
                if n > 0.0 {
                    for i in 0..d {
                        let gx = -x[i] / n;
                        gh[i] = gx;
                        gr[i] = gx;
                        gt[i] = -gx;
                    }
                }
            }
            KgeFamily::TransR => {
                let m = self.projection(r);
                let (mh, mt) = (matvec(m, hv, d), matvec(m, tv, d));
                let x: Vec<f64> = mh.iter().zip(rv).zip(&mt).map(|((a, r), b)| a + r - b).collect();
                let n = norm(x.iter().copied());
                if n > 0.0 {
                    let gx: Vec<f64> = x.iter().map(|v| -v / n).collect();
                    gr.copy_from_slice(&gx);
                    let base = r * w * d;
                    for i in 0..w {
                        for j in 0..d {
                            gh[j] += m[i * d + j] * gx[i];
                            g.projections[base + i * d + j] += coeff * gx[i] * (hv[j] - tv[j]);
                        }
                    }
                    for j in 0..d {
                        gt[j] = -gh[j];
                    }
                }
            }
            KgeFamily::RotatE => {
                let x = rotate_residual(hv, rv, tv);
                let n = norm(x.iter().copied());
                if n > 0.0 {
                    for i in 0..w {
                        let (c, s) = (rv[i].cos(), rv[i].sin());
                        let (hr, hi) = (hv[2 * i], hv[2 * i + 1]);
                        let (g_re, g_im) = (-x[2 * i] / n, -x[2 * i + 1] / n);
                        gh[2 * i] = g_re * c + g_im * s;
                        gh[2 * i + 1] = -g_re * s + g_im * c;
                        gt[2 * i] = -g_re;
                        gt[2 * i + 1] = -g_im;
                        let (u_re, u_im) = (hr * c - hi * s, hr * s + hi * c);
                        gr[i] = -g_re * u_im + g_im * u_re;
                    }
                }
            }
            KgeFamily::ComplEx => {
                for i in 0..d / 2 {
                    let (hr, hi) = (hv[2 * i], hv[2 * i + 1]);
                    let (rr, ri) = (rv[2 * i], rv[2 * i + 1]);
                    let (tr, ti) = (tv[2 * i], tv[2 * i + 1]);
                    gh[2 * i] = rr * tr + ri * ti;
                    gh[2 * i + 1] = rr * ti - ri * tr;
                    gr[2 * i] = hr * tr + hi * ti;
                    gr[2 * i + 1] = hr * ti - hi * tr;
                    gt[2 * i] = hr * rr - hi * ri;
                    gt[2 * i + 1] = hi * rr + hr * ri;
                }
            }
            KgeFamily::DistMult => {
                for i in 0..d {
                    gh[i] = rv[i] * tv[i];
                    gr[i] = hv[i] * tv[i];
                    gt[i] = rv[i] * hv[i];
                }
            }
        }
        for i in 0..d {
            g.entities[h * d + i] += coeff * gh[i];
            g.entities[t * d + i] += coeff * gt[i];
        }
        for i in 0..w {
            g.relations[r * w + i] += coeff * gr[i];
        }
    }

    pub fn is_finite(&self) -> bool {
        self.entities
            .iter()
            .chain(&self.relations)
            .chain(&self.projections)
            .all(|v| v.is_finite())
    }

    /// Scales every entity row with norm above 1 back onto the unit sphere.
    pub fn renormalize_entities(&mut self) {
        for row in self.entities.chunks_mut(self.entity_dim) {
            let n = norm(row.iter().copied());
            if n > 1.0 {
                row.iter_mut().for_each(|v| *v /= n);
            }
        }
    }

    pub fn apply_sgd(&mut self, g: &KgeGrads, lr: f64) {
        for (p, d) in self.entities.iter_mut().zip(&g.entities) {
            *p -= lr * d;
        }
        for (p, d) in self.relations.iter_mut().zip(&g.relations) {
            *p -= lr * d;
        }
        for (p, d) in self.projections.iter_mut().zip(&g.projections) {
            *p -= lr * d;
        }
    }
}

impl TripleScorer for KgeParams {
    fn score_triple(&self, head: EntityId, relation: Relation, tail: EntityId) -> f64 {
        self.score(&Triple::new(head, relation, tail, None))
            .expect("triple outside the embedding tables")
    }
}

fn norm(it: impl Iterator<Item = f64>) -> f64 {
    it.map(|v| v * v).sum::<f64>().sqrt()
}

fn matvec(m: &[f64], v: &[f64], cols: usize) -> Vec<f64> {
    m.chunks(cols)
        .map(|row| row.iter().zip(v).map(|(a, b)| a * b).sum())
        .collect()
}

/// Interleaved (re, im) residual of h ∘ e^{iθ} - t.
fn rotate_residual(h: &[f64], phases: &[f64], t: &[f64]) -> Vec<f64> {
    let mut x = vec![0.0; h.len()];
    for (i, &theta) in phases.iter().enumerate() {
        let (c, s) = (theta.cos(), theta.sin());
        let (hr, hi) = (h[2 * i], h[2 * i + 1]);
        x[2 * i] = hr * c - hi * s - t[2 * i];
        x[2 * i + 1] = hr * s + hi * c - t[2 * i + 1];
    }
    x
}

/// Σ max(0, γ + s(neg) − s(pos)); negative `j` pairs with positive
/// `j / k` where `k = negatives.len() / positives.len()`.
pub fn margin_loss(params: &KgeParams, positives: &[Triple], negatives: &[Triple], margin: f64) -> Result<f64> {
    let k = aligned_ratio(positives, negatives)?;
    let mut loss = 0.0;
    for (j, neg) in negatives.iter().enumerate() {
        let pos = &positives[j / k];
        let slack = margin + params.score(neg)? - params.score(pos)?;
        // NaN must reach the caller, f64::max would drop it
        loss += if slack.is_nan() { slack } else { slack.max(0.0) };
    }
    Ok(loss)
}

/// Loss and exact subgradients of [`margin_loss`]. Pairs with zero slack
/// contribute nothing.
pub fn loss_gradients(
    params: &KgeParams,
    positives: &[Triple],
    negatives: &[Triple],
    margin: f64,
) -> Result<(f64, KgeGrads)> {
    let k = aligned_ratio(positives, negatives)?;
    let mut grads = KgeGrads::zeros_like(params);
    let mut loss = 0.0;
    for (j, neg) in negatives.iter().enumerate() {
        let pos = &positives[j / k];
        let (ph, pr, pt) = params.rows(pos)?;
        let (nh, nr, nt) = params.rows(neg)?;
        let slack = margin + params.score_rows(nh, nr, nt) - params.score_rows(ph, pr, pt);
        if slack.is_nan() {
            loss = f64::NAN;
        } else if slack > 0.0 {
            loss += slack;
            params.accumulate_score_grad(nh, nr, nt, 1.0, &mut grads);
            params.accumulate_score_grad(ph, pr, pt, -1.0, &mut grads);
        }
    }
    Ok((loss, grads))
}

fn aligned_ratio(positives: &[Triple], negatives: &[Triple]) -> Result<usize> {
    if positives.is_empty() {
        return if negatives.is_empty() {
            Ok(1)
        } else {
            Err(Error::Config("negatives without positives".into()))
        };
    }
    if negatives.len() % positives.len() != 0 {
        return Err(Error::Config(format!(
            "{} negatives cannot align with {} positives",
            negatives.len(),
            positives.len()
        )));
    }
    Ok((negatives.len() / positives.len()).max(1))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_chacha::rand_core::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// One drug, one protein, one indication; dims as given.
    fn tiny(family: KgeFamily, d: usize) -> (KgeParams, Triple) {
        let cfg = KgeConfig {
            family,
            entity_dim: d,
            relation_dim: d,
            ..KgeConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = KgeParams::init(&cfg, [1, 1, 1], &mut rng).unwrap();
        let t = Triple::new(
            EntityId::new(EntityKind::Drug, 0),
            Relation::DrugProtein,
            EntityId::new(EntityKind::Protein, 0),
            None,
        );
        (p, t)
    }

    fn set(p: &mut KgeParams, h: &[f64], r: &[f64], t: &[f64]) {
        let d = p.entity_dim;
        p.entities[..d].copy_from_slice(h);
        p.entities[d..2 * d].copy_from_slice(t);
        p.relations[..r.len()].copy_from_slice(r);
    }

    #[test]
    fn transe_exact_translation_scores_zero() {
        let (mut p, t) = tiny(KgeFamily::TransE, 2);
        set(&mut p, &[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]);
        assert_eq!(p.score(&t).unwrap(), 0.0);
    }

    #[test]
    fn transr_identity_matches_transe() {
        let (mut p, t) = tiny(KgeFamily::TransR, 3);
        set(&mut p, &[0.3, -0.2, 0.9], &[0.1, 0.5, -0.4], &[-1.0, 0.2, 0.7]);
        let mut e = p.clone();
        e.family = KgeFamily::TransE;
        e.projections.clear();
        assert_eq!(p.score(&t).unwrap(), e.score(&t).unwrap());
    }

    #[test]
    fn distmult_arithmetic() {
        let (mut p, t) = tiny(KgeFamily::DistMult, 2);
        set(&mut p, &[1.0, 2.0], &[1.0, 1.0], &[3.0, 4.0]);
        assert_eq!(p.score(&t).unwrap(), 11.0);
    }

    #[test]
    fn rotate_zero_phase_is_negative_distance() {
        let (mut p, t) = tiny(KgeFamily::RotatE, 4);
        set(&mut p, &[1.0, 2.0, 0.0, 1.0], &[0.0, 0.0], &[1.0, 0.0, 3.0, 1.0]);
        assert_eq!(p.score(&t).unwrap(), -(4.0f64 + 9.0).sqrt());
    }

    #[test]
    fn hinge_cases() {
        let (mut p, t) = tiny(KgeFamily::DistMult, 2);
        set(&mut p, &[1.0, 0.0], &[0.2, 0.0], &[1.0, 0.0]);
        // negative: (d0, DP, p0) scored against itself -> equal scores
        assert_eq!(margin_loss(&p, &[t], &[t], 1.0).unwrap(), 1.0);
        let neg = Triple::new(t.head, Relation::DrugIndication, EntityId::new(EntityKind::Indication, 0), None);
        p.entities[4..6].copy_from_slice(&[0.0, 0.0]);
        // s(pos) = 0.2, s(neg) = 0
        assert!((margin_loss(&p, &[t], &[neg], 1.0).unwrap() - 0.8).abs() < 1e-15);
        let (l, g) = loss_gradients(&p, &[t], &[neg], 0.1).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.is_zero());
        p.entities[0] = f64::INFINITY;
        p.entities[2] = 0.0;
        // inf * 0 in the positive score
        assert!(margin_loss(&p, &[t], &[neg], 1.0).unwrap().is_nan());
        assert!(loss_gradients(&p, &[t], &[neg], 1.0).unwrap().0.is_nan());
    }

    #[test]
    fn transe_gradient_closed_form() {
        let (mut p, t) = tiny(KgeFamily::TransE, 3);
        set(&mut p, &[0.5, 0.1, -0.3], &[0.2, 0.2, 0.2], &[-0.1, 0.4, 0.0]);
        let neg = Triple::new(t.head, Relation::DrugIndication, EntityId::new(EntityKind::Indication, 0), None);
        let (_, g) = loss_gradients(&p, &[t], &[neg], 10.0).unwrap();
        let x: [f64; 3] = [0.5 + 0.2 + 0.1, 0.1 + 0.2 - 0.4, -0.3 + 0.2 - 0.0];
        let n = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
        // loss contains -s(pos) = +‖x‖, and h also appears in the negative
        let (nh, nr, nt) = p.rows(&neg).unwrap();
        let mut neg_only = KgeGrads::zeros_like(&p);
        p.accumulate_score_grad(nh, nr, nt, 1.0, &mut neg_only);
        for i in 0..3 {
            let pos_part = g.entities[i] - neg_only.entities[i];
            assert!((pos_part - x[i] / n).abs() < 1e-12);
        }
    }
}
