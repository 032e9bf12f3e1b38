//! Binary model checkpoints shared by the embedding and topological models.
//!
//! Layout: the 8-byte magic `KGBCKPT\0`, a little-endian `u32` version, a
//! little-endian `u64` header length, a UTF-8 JSON header, then every table
//! listed in the header as row-major little-endian `f64`s in header order.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::Relation;
use crate::kge::{KgeConfig, KgeFamily, KgeParams};
use crate::topo::{LinkHead, MpLayer, TopoConfig, TopoParams};

pub const MAGIC: &[u8; 8] = b"KGBCKPT\0";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TableInfo {
    pub name: String,
    pub shape: Vec<usize>,
}

impl TableInfo {
    fn len(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Model configuration stored alongside the tables.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum ModelConfig {
    Kge(KgeConfig),
    Topo(TopoConfig),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    /// `transe`, `transr`, `rotate`, `complex`, `distmult` or `topo`.
    pub family: String,
    pub entity_counts: [usize; 3],
    pub n_relations: usize,
    pub registry_hash: String,
    pub config: ModelConfig,
    pub tables: Vec<TableInfo>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    pub data: Vec<Vec<f64>>,
}

fn ckpt_err(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn table(&self, name: &str) -> Result<(&TableInfo, &[f64])> {
        self.header
            .tables
            .iter()
            .position(|t| t.name == name)
            .map(|i| (&self.header.tables[i], self.data[i].as_slice()))
            .ok_or_else(|| ckpt_err(format!("missing table `{name}`")))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let json = serde_json::to_vec(&self.header).map_err(|e| ckpt_err(e.to_string()))?;
        let body: usize = self.data.iter().map(Vec::len).sum();
        let mut out = Vec::with_capacity(20 + json.len() + 8 * body);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (info, table) in self.header.tables.iter().zip(&self.data) {
            if info.len() != table.len() {
                return Err(ckpt_err(format!("table `{}` does not match its shape", info.name)));
            }
            for v in table {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(ckpt_err("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if version != VERSION {
            return Err(ckpt_err(format!("unsupported version {version}")));
        }
        let hlen = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
        let body = bytes
            .get(20..)
            .filter(|b| b.len() >= hlen)
            .ok_or_else(|| ckpt_err("truncated header"))?;
        let header: Header = serde_json::from_slice(&body[..hlen]).map_err(|e| ckpt_err(e.to_string()))?;
        let mut rest = &body[hlen..];
        let mut data = Vec::with_capacity(header.tables.len());
        for info in &header.tables {
            let n = info.len();
            if rest.len() < 8 * n {
                return Err(ckpt_err(format!("truncated table `{}`", info.name)));
            }
            let (chunk, tail) = rest.split_at(8 * n);
            data.push(
                chunk
                    .chunks_exact(8)
                    .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
                    .collect(),
            );
            rest = tail;
        }
        if !rest.is_empty() {
            return Err(ckpt_err(format!("{} trailing bytes", rest.len())));
        }
        Ok(Checkpoint { header, data })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }

    /// Fails unless the checkpoint was written against the same registry.
    pub fn check_registry(&self, registry_hash: &str) -> Result<()> {
        if self.header.registry_hash != registry_hash {
            return Err(ckpt_err("entity registry differs from the one the checkpoint was trained on"));
        }
        Ok(())
    }

    pub fn from_kge(params: &KgeParams, config: &KgeConfig, registry_hash: &str) -> Self {
        let d = params.entity_dim;
        let w = params.relation_width;
        let mut tables = vec![
            TableInfo {
                name: "entities".into(),
                shape: vec![params.n_entities(), d],
            },
            TableInfo {
                name: "relations".into(),
                shape: vec![params.n_relations, w],
            },
        ];
        let mut data = vec![params.entities.clone(), params.relations.clone()];
        if !params.projections.is_empty() {
            tables.push(TableInfo {
                name: "projections".into(),
                shape: vec![params.n_relations, w, d],
            });
            data.push(params.projections.clone());
        }
        Checkpoint {
            header: Header {
                family: params.family.as_str().into(),
                entity_counts: params.entity_counts,
                n_relations: params.n_relations,
                registry_hash: registry_hash.into(),
                config: ModelConfig::Kge(config.clone()),
                tables,
            },
            data,
        }
    }

    pub fn to_kge(&self) -> Result<(KgeParams, KgeConfig)> {
        let ModelConfig::Kge(config) = &self.header.config else {
            return Err(ckpt_err("checkpoint holds a topological model"));
        };
        let family: KgeFamily = self.header.family.parse()?;
        let (ei, entities) = self.table("entities")?;
        let (ri, relations) = self.table("relations")?;
        let projections = match self.table("projections") {
            Ok((_, p)) => p.to_vec(),
            Err(_) if family != KgeFamily::TransR => Vec::new(),
            Err(e) => return Err(e),
        };
        let params = KgeParams {
            family,
            entity_counts: self.header.entity_counts,
            n_relations: self.header.n_relations,
            entity_dim: ei.shape[1],
            relation_width: ri.shape[1],
            entities: entities.to_vec(),
            relations: relations.to_vec(),
            projections,
        };
        if params.n_entities() != ei.shape[0] {
            return Err(ckpt_err("entity table rows disagree with entity counts"));
        }
        Ok((params, config.clone()))
    }

    pub fn from_topo(params: &TopoParams, config: &TopoConfig, entity_counts: [usize; 3], registry_hash: &str) -> Self {
        let mut tables = Vec::new();
        let mut data = Vec::new();
        let mut push2 = |name: String, a: &Array2<f64>| {
            tables.push(TableInfo {
                name,
                shape: vec![a.nrows(), a.ncols()],
            });
            data.push(a.iter().copied().collect::<Vec<f64>>());
        };
        push2("drug_embeddings".into(), &params.drug_embeddings);
        push2("drug_projection".into(), &params.drug_projection);
        push2("protein_embeddings".into(), &params.protein_embeddings);
        push2("protein_projection".into(), &params.protein_projection);
        push2("indication_embeddings".into(), &params.indication_embeddings);
        push2("indication_projection".into(), &params.indication_projection);
        for (i, l) in params.layers.iter().enumerate() {
            push2(format!("layer{i}.weight"), &l.weight);
        }
        for (r, h) in Relation::ALL.iter().zip(&params.heads) {
            push2(format!("head.{r}.hidden_weight"), &h.hidden_weight);
        }
        let mut push1 = |name: String, a: &Array1<f64>| {
            tables.push(TableInfo {
                name,
                shape: vec![a.len()],
            });
            data.push(a.to_vec());
        };
        for (i, l) in params.layers.iter().enumerate() {
            push1(format!("layer{i}.bias"), &l.bias);
        }
        for (r, h) in Relation::ALL.iter().zip(&params.heads) {
            push1(format!("head.{r}.hidden_bias"), &h.hidden_bias);
            push1(format!("head.{r}.out_weight"), &h.out_weight);
            push1(format!("head.{r}.out_bias"), &h.out_bias);
        }
        Checkpoint {
            header: Header {
                family: "topo".into(),
                entity_counts,
                n_relations: Relation::ALL.len(),
                registry_hash: registry_hash.into(),
                config: ModelConfig::Topo(config.clone()),
                tables,
            },
            data,
        }
    }

    fn array2(&self, name: &str) -> Result<Array2<f64>> {
        let (info, v) = self.table(name)?;
        match info.shape[..] {
            [r, c] => Array2::from_shape_vec((r, c), v.to_vec()).map_err(|e| ckpt_err(e.to_string())),
            _ => Err(ckpt_err(format!("table `{name}` is not a matrix"))),
        }
    }

    fn array1(&self, name: &str) -> Result<Array1<f64>> {
        let (info, v) = self.table(name)?;
        match info.shape[..] {
            [_] => Ok(Array1::from(v.to_vec())),
            _ => Err(ckpt_err(format!("table `{name}` is not a vector"))),
        }
    }

    pub fn to_topo(&self) -> Result<(TopoParams, TopoConfig)> {
        let ModelConfig::Topo(config) = &self.header.config else {
            return Err(ckpt_err("checkpoint holds an embedding model"));
        };
        let layers = (0..config.layers)
            .map(|i| {
                Ok(MpLayer {
                    weight: self.array2(&format!("layer{i}.weight"))?,
                    bias: self.array1(&format!("layer{i}.bias"))?,
                })
            })
            .collect::<Result<_>>()?;
        let heads = Relation::ALL
            .iter()
            .map(|r| {
                Ok(LinkHead {
                    hidden_weight: self.array2(&format!("head.{r}.hidden_weight"))?,
                    hidden_bias: self.array1(&format!("head.{r}.hidden_bias"))?,
                    out_weight: self.array1(&format!("head.{r}.out_weight"))?,
                    out_bias: self.array1(&format!("head.{r}.out_bias"))?,
                })
            })
            .collect::<Result<_>>()?;
        let params = TopoParams {
            drug_embeddings: self.array2("drug_embeddings")?,
            drug_projection: self.array2("drug_projection")?,
            protein_embeddings: self.array2("protein_embeddings")?,
            protein_projection: self.array2("protein_projection")?,
            indication_embeddings: self.array2("indication_embeddings")?,
            indication_projection: self.array2("indication_projection")?,
            layers,
            heads,
        };
        Ok((params, config.clone()))
    }
}
