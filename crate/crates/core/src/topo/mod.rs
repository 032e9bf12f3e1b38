//! Topological link-prediction model: per-kind input states, `L` rounds of
//! heterogeneous mean-aggregation message passing over training edges, and
//! one MLP link head per relation. Gradients are accumulated in reverse
//! through the fixed computation graph.
//!
//! Layer update: `h'_u = act(W · [h_u ‖ mean_{v ∈ N(u)} h_v] + b)`, where
//! `N(u)` joins neighbours over all relations (undirected) and an isolated
//! node aggregates the zero vector.

mod train;

use std::sync::atomic::{AtomicUsize, Ordering};

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EntityId, EntityKind, KnowledgeGraph, Relation, Triple};
use crate::ingest::FeatureTable;
use crate::metrics::TripleScorer;
use crate::optim::OptimizerKind;

pub use train::{bce_step, train_topo, top_k_novel, write_predictions, Prediction, TopoTrainOutcome, TrainSet};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrugMode {
    #[default]
    LearnableEmbedding,
    FixedVector,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    fn derivative(self, pre: f64) -> f64 {
        match self {
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TopoConfig {
    pub shared_dim: usize,
    pub layers: usize,
    pub protein_feature_dim: usize,
    pub drug_feature_dim: usize,
    pub indication_init_dim: usize,
    pub drug_mode: DrugMode,
    pub use_protein_features: bool,
    /// Learnable rows for entities lacking a fixed vector; otherwise a
    /// missing vector is an error.
    pub feature_fallback: bool,
    pub activation: Activation,
    pub optimizer: OptimizerKind,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Positive edges per optimizer step; 0 means all training edges.
    pub batch_size: usize,
    pub negatives_per_positive: usize,
    /// Epochs without validation PR-AUC improvement before stopping; 0 disables.
    pub patience: usize,
    pub seed: u64,
}

impl Default for TopoConfig {
    fn default() -> Self {
        TopoConfig {
            shared_dim: 256,
            layers: 3,
            protein_feature_dim: 2560,
            drug_feature_dim: 0,
            indication_init_dim: 32,
            drug_mode: DrugMode::LearnableEmbedding,
            use_protein_features: true,
            feature_fallback: true,
            activation: Activation::Relu,
            optimizer: OptimizerKind::Sgd,
            learning_rate: 0.01,
            epochs: 500,
            batch_size: 0,
            negatives_per_positive: 1,
            patience: 50,
            seed: 0,
        }
    }
}

impl TopoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.shared_dim == 0 || self.indication_init_dim == 0 {
            return Err(Error::Config("shared_dim and indication_init_dim must be positive".into()));
        }
        if self.use_protein_features && self.protein_feature_dim == 0 {
            return Err(Error::Config("protein_feature_dim must be positive when features are used".into()));
        }
        if self.drug_mode == DrugMode::FixedVector && self.drug_feature_dim == 0 {
            return Err(Error::Config("drug_feature_dim must be positive in fixed_vector mode".into()));
        }
        if !(self.learning_rate > 0.0) || self.negatives_per_positive == 0 {
            return Err(Error::Config("learning_rate and negatives_per_positive must be positive".into()));
        }
        Ok(())
    }
}

/// Where an entity's layer-0 state comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Slot {
    Feature(usize),
    Embedding(usize),
}

/// Fixed feature matrices aligned with the graph registry.
#[derive(Debug)]
pub struct TopoInputs {
    counts: [usize; 3],
    drug_features: Array2<f64>,
    drug_slots: Vec<Slot>,
    protein_features: Array2<f64>,
    protein_slots: Vec<Slot>,
    feature_reads: AtomicUsize,
}

fn slots_for(
    kind: EntityKind,
    count: usize,
    enabled: bool,
    table: Option<&FeatureTable>,
    dim: usize,
    fallback: bool,
) -> Result<(Array2<f64>, Vec<Slot>)> {
    if !enabled {
        return Ok((Array2::zeros((0, dim)), (0..count).map(Slot::Embedding).collect()));
    }
    let table = table.ok_or_else(|| Error::MissingFeature(format!("{} feature table", kind.as_str())))?;
    if table.dim != dim {
        return Err(Error::Config(format!(
            "{} features have dim {}, config expects {dim}",
            kind.as_str(),
            table.dim
        )));
    }
    let mut rows: Vec<f64> = Vec::new();
    let (mut n_feat, mut n_emb) = (0, 0);
    let mut slots = Vec::with_capacity(count);
    for i in 0..count as u32 {
        match table.get(i) {
            Some(v) => {
                rows.extend_from_slice(v);
                slots.push(Slot::Feature(n_feat));
                n_feat += 1;
            }
            None if fallback => {
                slots.push(Slot::Embedding(n_emb));
                n_emb += 1;
            }
            None => {
                return Err(Error::MissingFeature(format!("{} #{i}", kind.as_str())));
            }
        }
    }
    let m = Array2::from_shape_vec((n_feat, dim), rows).expect("feature rows have uniform width");
    Ok((m, slots))
}

impl TopoInputs {
    pub fn new(
        config: &TopoConfig,
        graph: &KnowledgeGraph,
        drug_features: Option<&FeatureTable>,
        protein_features: Option<&FeatureTable>,
    ) -> Result<Self> {
        config.validate()?;
        let counts = EntityKind::ALL.map(|k| graph.count(k));
        let (df, ds) = slots_for(
            EntityKind::Drug,
            counts[0],
            config.drug_mode == DrugMode::FixedVector,
            drug_features,
            config.drug_feature_dim,
            config.feature_fallback,
        )?;
        let (pf, ps) = slots_for(
            EntityKind::Protein,
            counts[1],
            config.use_protein_features,
            protein_features,
            config.protein_feature_dim,
            config.feature_fallback,
        )?;
        Ok(TopoInputs {
            counts,
            drug_features: df,
            drug_slots: ds,
            protein_features: pf,
            protein_slots: ps,
            feature_reads: AtomicUsize::new(0),
        })
    }

    pub fn counts(&self) -> [usize; 3] {
        self.counts
    }

    pub fn n_nodes(&self) -> usize {
        self.counts.iter().sum()
    }

    fn embedding_rows(slots: &[Slot]) -> usize {
        slots.iter().filter(|s| matches!(s, Slot::Embedding(_))).count()
    }

    /// Entities of `kind` served by a learnable fallback row.
    pub fn fallback_count(&self, kind: EntityKind) -> usize {
        match kind {
            EntityKind::Drug => Self::embedding_rows(&self.drug_slots),
            EntityKind::Protein => Self::embedding_rows(&self.protein_slots),
            EntityKind::Indication => 0,
        }
    }

    /// Number of times a forward pass has read a fixed feature matrix.
    pub fn feature_reads(&self) -> usize {
        self.feature_reads.load(Ordering::Relaxed)
    }

    pub fn global_index(&self, id: EntityId) -> usize {
        self.counts[..id.kind.code()].iter().sum::<usize>() + id.index as usize
    }
}

/// Undirected neighbourhoods over global node indices (CSR).
#[derive(Clone, Debug, PartialEq)]
pub struct MessageGraph {
    offsets: Vec<usize>,
    neighbors: Vec<usize>,
}

impl MessageGraph {
    pub fn from_edges<'a>(counts: [usize; 3], edges: impl IntoIterator<Item = &'a Triple>) -> Self {
        let n: usize = counts.iter().sum();
        let global = |e: EntityId| counts[..e.kind.code()].iter().sum::<usize>() + e.index as usize;
        let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
        for t in edges {
            let (u, v) = (global(t.head), global(t.tail));
            adj[u].push(v);
            adj[v].push(u);
        }
        let mut offsets = Vec::with_capacity(n + 1);
        offsets.push(0);
        let mut neighbors = Vec::new();
        for list in adj {
            neighbors.extend(list);
            offsets.push(neighbors.len());
        }
        MessageGraph { offsets, neighbors }
    }

    pub fn n_nodes(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn neighbors(&self, u: usize) -> &[usize] {
        &self.neighbors[self.offsets[u]..self.offsets[u + 1]]
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MpLayer {
    /// (2·sd) x sd, applied as `[h ‖ m] · weight`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LinkHead {
    pub hidden_weight: Array2<f64>,
    pub hidden_bias: Array1<f64>,
    pub out_weight: Array1<f64>,
    pub out_bias: Array1<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopoParams {
    pub drug_embeddings: Array2<f64>,
    pub drug_projection: Array2<f64>,
    pub protein_embeddings: Array2<f64>,
    pub protein_projection: Array2<f64>,
    pub indication_embeddings: Array2<f64>,
    pub indication_projection: Array2<f64>,
    pub layers: Vec<MpLayer>,
    /// Indexed by relation code.
    pub heads: Vec<LinkHead>,
}

fn uniform<R: Rng + ?Sized>(rng: &mut R, shape: (usize, usize), bound: f64) -> Array2<f64> {
    Array2::from_shape_fn(shape, |_| rng.random_range(-bound..=bound))
}

impl TopoParams {
    pub fn init<R: Rng + ?Sized>(config: &TopoConfig, inputs: &TopoInputs, rng: &mut R) -> Self {
        let sd = config.shared_dim;
        let xavier = |i: usize, o: usize| (6.0 / (i + o) as f64).sqrt();
        let he = |i: usize| (6.0 / i as f64).sqrt();
        let n_drug_emb = TopoInputs::embedding_rows(&inputs.drug_slots);
        let n_prot_emb = TopoInputs::embedding_rows(&inputs.protein_slots);
        let fd = inputs.drug_features.ncols();
        let pf = inputs.protein_features.ncols();
        let id = config.indication_init_dim;
        let drug_embeddings = uniform(rng, (n_drug_emb, sd), 1.0);
        let drug_projection = uniform(rng, (if inputs.drug_features.nrows() > 0 { fd } else { 0 }, sd), xavier(fd.max(1), sd));
        let protein_embeddings = uniform(rng, (n_prot_emb, sd), 1.0);
        let protein_projection = uniform(
            rng,
            (if inputs.protein_features.nrows() > 0 { pf } else { 0 }, sd),
            xavier(pf.max(1), sd),
        );
        let indication_embeddings = uniform(rng, (inputs.counts[2], id), 1.0);
        let indication_projection = uniform(rng, (id, sd), xavier(id, sd));
        let layers = (0..config.layers)
            .map(|_| MpLayer {
                weight: uniform(rng, (2 * sd, sd), he(2 * sd)),
                bias: Array1::zeros(sd),
            })
            .collect();
        let heads = Relation::ALL
            .iter()
            .map(|_| LinkHead {
                hidden_weight: uniform(rng, (2 * sd, sd), he(2 * sd)),
                hidden_bias: Array1::zeros(sd),
                out_weight: Array1::from_shape_fn(sd, |_| rng.random_range(-xavier(sd, 1)..=xavier(sd, 1))),
                out_bias: Array1::zeros(1),
            })
            .collect();
        TopoParams {
            drug_embeddings,
            drug_projection,
            protein_embeddings,
            protein_projection,
            indication_embeddings,
            indication_projection,
            layers,
            heads,
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z2 = |a: &Array2<f64>| Array2::zeros(a.raw_dim());
        let z1 = |a: &Array1<f64>| Array1::zeros(a.raw_dim());
        TopoParams {
            drug_embeddings: z2(&self.drug_embeddings),
            drug_projection: z2(&self.drug_projection),
            protein_embeddings: z2(&self.protein_embeddings),
            protein_projection: z2(&self.protein_projection),
            indication_embeddings: z2(&self.indication_embeddings),
            indication_projection: z2(&self.indication_projection),
            layers: self
                .layers
                .iter()
                .map(|l| MpLayer {
                    weight: z2(&l.weight),
                    bias: z1(&l.bias),
                })
                .collect(),
            heads: self
                .heads
                .iter()
                .map(|h| LinkHead {
                    hidden_weight: z2(&h.hidden_weight),
                    hidden_bias: z1(&h.hidden_bias),
                    out_weight: z1(&h.out_weight),
                    out_bias: z1(&h.out_bias),
                })
                .collect(),
        }
    }

    /// Named flat views of every trainable group, in a fixed order.
    pub fn groups(&self) -> Vec<(String, &[f64])> {
        let mut out: Vec<(String, &[f64])> = vec![
            ("drug_embeddings".into(), self.drug_embeddings.as_slice().unwrap()),
            ("drug_projection".into(), self.drug_projection.as_slice().unwrap()),
            ("protein_embeddings".into(), self.protein_embeddings.as_slice().unwrap()),
            ("protein_projection".into(), self.protein_projection.as_slice().unwrap()),
            ("indication_embeddings".into(), self.indication_embeddings.as_slice().unwrap()),
            ("indication_projection".into(), self.indication_projection.as_slice().unwrap()),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.weight"), l.weight.as_slice().unwrap()));
            out.push((format!("layer{i}.bias"), l.bias.as_slice().unwrap()));
        }
        for (r, h) in Relation::ALL.iter().zip(&self.heads) {
            out.push((format!("head.{r}.hidden_weight"), h.hidden_weight.as_slice().unwrap()));
            out.push((format!("head.{r}.hidden_bias"), h.hidden_bias.as_slice().unwrap()));
            out.push((format!("head.{r}.out_weight"), h.out_weight.as_slice().unwrap()));
            out.push((format!("head.{r}.out_bias"), h.out_bias.as_slice().unwrap()));
        }
        out
    }

    /// Mutable counterpart of [`groups`](Self::groups), same order.
    pub fn groups_mut(&mut self) -> Vec<&mut [f64]> {
        let mut out: Vec<&mut [f64]> = vec![
            self.drug_embeddings.as_slice_mut().unwrap(),
            self.drug_projection.as_slice_mut().unwrap(),
            self.protein_embeddings.as_slice_mut().unwrap(),
            self.protein_projection.as_slice_mut().unwrap(),
            self.indication_embeddings.as_slice_mut().unwrap(),
            self.indication_projection.as_slice_mut().unwrap(),
        ];
        for l in &mut self.layers {
            out.push(l.weight.as_slice_mut().unwrap());
            out.push(l.bias.as_slice_mut().unwrap());
        }
        for h in &mut self.heads {
            out.push(h.hidden_weight.as_slice_mut().unwrap());
            out.push(h.hidden_bias.as_slice_mut().unwrap());
            out.push(h.out_weight.as_slice_mut().unwrap());
            out.push(h.out_bias.as_slice_mut().unwrap());
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.groups().iter().map(|(_, g)| g.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.groups().iter().all(|(_, g)| g.iter().all(|v| v.is_finite()))
    }
}

/// Closed-form trainable parameter count of the topological model.
pub fn topo_parameter_count(config: &TopoConfig, inputs: &TopoInputs) -> usize {
    let sd = config.shared_dim;
    let drug_proj = if inputs.drug_features.nrows() > 0 { config.drug_feature_dim * sd } else { 0 };
    let prot_proj = if inputs.protein_features.nrows() > 0 { config.protein_feature_dim * sd } else { 0 };
    let embeddings = (inputs.fallback_count(EntityKind::Drug) + inputs.fallback_count(EntityKind::Protein)) * sd
        + inputs.counts[2] * config.indication_init_dim;
    let layers = config.layers * (2 * sd * sd + sd);
    let heads = Relation::ALL.len() * (2 * sd * sd + sd + sd + 1);
    embeddings + drug_proj + prot_proj + config.indication_init_dim * sd + layers + heads
}

struct Forward {
    /// Per layer: input `[h ‖ m]` and pre-activation.
    inputs: Vec<Array2<f64>>,
    pre: Vec<Array2<f64>>,
    z: Array2<f64>,
}

fn initial_states(params: &TopoParams, inputs: &TopoInputs, sd: usize) -> Array2<f64> {
    let [nd, np, ni] = inputs.counts;
    let mut h0 = Array2::zeros((nd + np + ni, sd));
    let dproj = (inputs.drug_features.nrows() > 0).then(|| {
        inputs.feature_reads.fetch_add(1, Ordering::Relaxed);
        inputs.drug_features.dot(&params.drug_projection)
    });
    let pproj = (inputs.protein_features.nrows() > 0).then(|| {
        inputs.feature_reads.fetch_add(1, Ordering::Relaxed);
        inputs.protein_features.dot(&params.protein_projection)
    });
    for (i, slot) in inputs.drug_slots.iter().enumerate() {
        let src = match *slot {
            Slot::Feature(r) => dproj.as_ref().unwrap().row(r),
            Slot::Embedding(r) => params.drug_embeddings.row(r),
        };
        h0.row_mut(i).assign(&src);
    }
    for (i, slot) in inputs.protein_slots.iter().enumerate() {
        let src = match *slot {
            Slot::Feature(r) => pproj.as_ref().unwrap().row(r),
            Slot::Embedding(r) => params.protein_embeddings.row(r),
        };
        h0.row_mut(nd + i).assign(&src);
    }
    let ind = params.indication_embeddings.dot(&params.indication_projection);
    h0.slice_mut(s![nd + np.., ..]).assign(&ind);
    h0
}

fn aggregate(h: &Array2<f64>, graph: &MessageGraph) -> Array2<f64> {
    let mut m = Array2::zeros(h.raw_dim());
    for u in 0..graph.n_nodes() {
        let nb = graph.neighbors(u);
        if nb.is_empty() {
            continue;
        }
        let mut row = m.row_mut(u);
        for &v in nb {
            row += &h.row(v);
        }
        row /= nb.len() as f64;
    }
    m
}

fn forward(params: &TopoParams, config: &TopoConfig, inputs: &TopoInputs, graph: &MessageGraph) -> Forward {
    let mut h = initial_states(params, inputs, config.shared_dim);
    let mut cache_in = Vec::with_capacity(params.layers.len());
    let mut cache_pre = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let m = aggregate(&h, graph);
        let x = concatenate(Axis(1), &[h.view(), m.view()]).unwrap();
        let pre = x.dot(&layer.weight) + &layer.bias;
        h = pre.mapv(|v| config.activation.apply(v));
        cache_in.push(x);
        cache_pre.push(pre);
    }
    Forward {
        inputs: cache_in,
        pre: cache_pre,
        z: h,
    }
}

/// Final-layer node states, one row per entity (global index order).
pub fn encode_nodes(params: &TopoParams, config: &TopoConfig, inputs: &TopoInputs, graph: &MessageGraph) -> Array2<f64> {
    forward(params, config, inputs, graph).z
}

fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Pre-logistic output of the relation's head for `[z_u ‖ z_v]`.
pub fn link_logit(params: &TopoParams, z_u: ArrayView1<f64>, z_v: ArrayView1<f64>, relation: Relation) -> f64 {
    let head = &params.heads[relation.code()];
    let c = concatenate(Axis(0), &[z_u, z_v]).unwrap();
    let hidden = (c.dot(&head.hidden_weight) + &head.hidden_bias).mapv(|v| v.max(0.0));
    hidden.dot(&head.out_weight) + head.out_bias[0]
}

pub fn predict_link(params: &TopoParams, z_u: ArrayView1<f64>, z_v: ArrayView1<f64>, relation: Relation) -> f64 {
    logistic(link_logit(params, z_u, z_v, relation))
}

/// One labelled pair in global node indices.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Example {
    pub u: usize,
    pub v: usize,
    pub relation: Relation,
    pub label: f64,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Mean binary cross-entropy over `examples` and its exact gradient.
pub fn bce_loss_and_grads(
    params: &TopoParams,
    config: &TopoConfig,
    inputs: &TopoInputs,
    graph: &MessageGraph,
    examples: &[Example],
) -> (f64, TopoParams) {
    let sd = config.shared_dim;
    let fwd = forward(params, config, inputs, graph);
    let mut grads = params.zeros_like();
    let mut dz = Array2::<f64>::zeros(fwd.z.raw_dim());
    let n = examples.len().max(1) as f64;
    let mut loss = 0.0;

    for rel in Relation::ALL {
        let batch: Vec<&Example> = examples.iter().filter(|e| e.relation == rel).collect();
        if batch.is_empty() {
            continue;
        }
        let head = &params.heads[rel.code()];
        let gh = &mut grads.heads[rel.code()];
        let mut c = Array2::<f64>::zeros((batch.len(), 2 * sd));
        for (i, e) in batch.iter().enumerate() {
            c.slice_mut(s![i, ..sd]).assign(&fwd.z.row(e.u));
            c.slice_mut(s![i, sd..]).assign(&fwd.z.row(e.v));
        }
        let a = c.dot(&head.hidden_weight) + &head.hidden_bias;
        let hidden = a.mapv(|v| v.max(0.0));
        let logits = hidden.dot(&head.out_weight) + head.out_bias[0];
        let mut dlogit = Array1::<f64>::zeros(batch.len());
        for (i, e) in batch.iter().enumerate() {
            let x = logits[i];
            loss += softplus(x) - e.label * x;
            dlogit[i] = (logistic(x) - e.label) / n;
        }
        gh.out_weight += &hidden.t().dot(&dlogit);
        gh.out_bias[0] += dlogit.sum();
        let mut da = Array2::<f64>::zeros(a.raw_dim());
        for i in 0..batch.len() {
            for j in 0..sd {
                if a[[i, j]] > 0.0 {
                    da[[i, j]] = dlogit[i] * head.out_weight[j];
                }
            }
        }
        gh.hidden_weight += &c.t().dot(&da);
        gh.hidden_bias += &da.sum_axis(Axis(0));
        let dc = da.dot(&head.hidden_weight.t());
        for (i, e) in batch.iter().enumerate() {
            let mut ru = dz.row_mut(e.u);
            ru += &dc.slice(s![i, ..sd]);
            let mut rv = dz.row_mut(e.v);
            rv += &dc.slice(s![i, sd..]);
        }
    }
    loss /= n;

    // message-passing layers, last to first
    let mut dh = dz;
    for (l, layer) in params.layers.iter().enumerate().rev() {
        let pre = &fwd.pre[l];
        let dpre = &dh * &pre.mapv(|v| config.activation.derivative(v));
        grads.layers[l].weight += &fwd.inputs[l].t().dot(&dpre);
        grads.layers[l].bias += &dpre.sum_axis(Axis(0));
        let dx = dpre.dot(&layer.weight.t());
        let mut dprev = dx.slice(s![.., ..sd]).to_owned();
        for u in 0..graph.n_nodes() {
            let nb = graph.neighbors(u);
            if nb.is_empty() {
                continue;
            }
            let dm = dx.slice(s![u, sd..]).mapv(|v| v / nb.len() as f64);
            for &v in nb {
                let mut r = dprev.row_mut(v);
                r += &dm;
            }
        }
        dh = dprev;
    }

    // layer-0 sources
    let [nd, np, _] = inputs.counts;
    let mut dproj_d = Array2::<f64>::zeros((inputs.drug_features.nrows(), sd));
    for (i, slot) in inputs.drug_slots.iter().enumerate() {
        match *slot {
            Slot::Feature(r) => dproj_d.row_mut(r).assign(&dh.row(i)),
            Slot::Embedding(r) => {
                let mut g = grads.drug_embeddings.row_mut(r);
                g += &dh.row(i);
            }
        }
    }
    if inputs.drug_features.nrows() > 0 {
        grads.drug_projection += &inputs.drug_features.t().dot(&dproj_d);
    }
    let mut dproj_p = Array2::<f64>::zeros((inputs.protein_features.nrows(), sd));
    for (i, slot) in inputs.protein_slots.iter().enumerate() {
        match *slot {
            Slot::Feature(r) => dproj_p.row_mut(r).assign(&dh.row(nd + i)),
            Slot::Embedding(r) => {
                let mut g = grads.protein_embeddings.row_mut(r);
                g += &dh.row(nd + i);
            }
        }
    }
    if inputs.protein_features.nrows() > 0 {
        grads.protein_projection += &inputs.protein_features.t().dot(&dproj_p);
    }
    let dind = dh.slice(s![nd + np.., ..]);
    grads.indication_embeddings += &dind.dot(&params.indication_projection.t());
    grads.indication_projection += &params.indication_embeddings.t().dot(&dind);

    (loss, grads)
}

/// Trained parameters bundled with their inputs and cached node states.
#[derive(Debug)]
pub struct TopoModel {
    pub config: TopoConfig,
    pub params: TopoParams,
    pub inputs: TopoInputs,
    pub graph: MessageGraph,
    z: Array2<f64>,
    /// Per relation: node states times the top and bottom halves of the
    /// head's hidden weight, so a pair costs O(sd).
    halves: Vec<(Array2<f64>, Array2<f64>)>,
}

impl TopoModel {
    pub fn new(config: TopoConfig, params: TopoParams, inputs: TopoInputs, graph: MessageGraph) -> Self {
        let z = encode_nodes(&params, &config, &inputs, &graph);
        let sd = config.shared_dim;
        let halves = params
            .heads
            .iter()
            .map(|h| {
                (
                    z.dot(&h.hidden_weight.slice(s![..sd, ..])),
                    z.dot(&h.hidden_weight.slice(s![sd.., ..])),
                )
            })
            .collect();
        TopoModel {
            config,
            params,
            inputs,
            graph,
            z,
            halves,
        }
    }

    pub fn node_states(&self) -> &Array2<f64> {
        &self.z
    }

    pub fn logit(&self, head: EntityId, relation: Relation, tail: EntityId) -> f64 {
        let (u, v) = (self.inputs.global_index(head), self.inputs.global_index(tail));
        let h = &self.params.heads[relation.code()];
        let (top, bottom) = &self.halves[relation.code()];
        let (a, b) = (top.row(u), bottom.row(v));
        let mut acc = h.out_bias[0];
        for j in 0..a.len() {
            acc += (a[j] + b[j] + h.hidden_bias[j]).max(0.0) * h.out_weight[j];
        }
        acc
    }

    pub fn probability(&self, head: EntityId, relation: Relation, tail: EntityId) -> f64 {
        logistic(self.logit(head, relation, tail))
    }
}

impl TripleScorer for TopoModel {
    fn score_triple(&self, head: EntityId, relation: Relation, tail: EntityId) -> f64 {
        self.logit(head, relation, tail)
    }
}
