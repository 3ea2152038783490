//! Deterministic clustered toy graphs with nested held-out splits.
//!
//! Entities are grouped into clusters. Each relation maps every cluster onto
//! one target cluster (or two, for the bimodal relations), and each head
//! links to a few members of its target clusters. Held-out edges are
//! therefore predictable from cluster structure.

use std::path::Path;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kg::{write_triples, GraphSplits, Triple, Vocab, Vocabularies};
use crate::rng::stream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticConfig {
    pub clusters: usize,
    pub cluster_size: usize,
    pub relations: usize,
    /// Tails per (head, relation, target cluster).
    pub fanout: usize,
    /// The first this many relations split tails over two target clusters.
    pub bimodal_relations: usize,
    /// Fraction of edges withheld at each nesting level.
    pub holdout: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            clusters: 20,
            cluster_size: 5,
            relations: 6,
            fanout: 3,
            bimodal_relations: 2,
            holdout: 0.1,
            seed: 0,
        }
    }
}

/// Edges by the split that first contains them.
#[derive(Debug, Clone)]
pub struct SyntheticKg {
    pub vocab: Vocabularies,
    pub train: Vec<Triple>,
    pub valid: Vec<Triple>,
    pub test: Vec<Triple>,
}

impl SyntheticKg {
    pub fn splits(&self) -> Result<GraphSplits> {
        GraphSplits::from_triples(self.vocab.clone(), &self.train, &self.valid, &self.test)
    }

    /// Writes `train.txt`, `valid.txt` and `test.txt` under `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_triples(dir.join("train.txt"), &self.train, &self.vocab)?;
        write_triples(dir.join("valid.txt"), &self.valid, &self.vocab)?;
        write_triples(dir.join("test.txt"), &self.test, &self.vocab)
    }
}

fn withhold<R: Rng>(edges: &mut Vec<Triple>, fraction: f64, rng: &mut R) -> Vec<Triple> {
    let n = (edges.len() as f64 * fraction).round() as usize;
    edges.shuffle(rng);
    let mut held = edges.split_off(edges.len() - n);
    edges.sort_unstable();
    held.sort_unstable();
    held
}

pub fn generate(cfg: &SyntheticConfig) -> Result<SyntheticKg> {
    if cfg.clusters < 2 || cfg.cluster_size == 0 || cfg.relations == 0 {
        return Err(Error::Input(
            "synthetic graph needs >= 2 clusters, members and relations".into(),
        ));
    }
    if cfg.fanout == 0 || cfg.fanout > cfg.cluster_size {
        return Err(Error::Input(format!(
            "fanout {} must be in 1..={}",
            cfg.fanout, cfg.cluster_size
        )));
    }
    if !(0.0..0.5).contains(&cfg.holdout) {
        return Err(Error::Input(format!("holdout {} outside [0, 0.5)", cfg.holdout)));
    }
    let mut rng = stream(cfg.seed, &["synthetic"]);
    let (c, s) = (cfg.clusters, cfg.cluster_size);
    let member = |cluster: usize, i: usize| (cluster * s + i) as u32;

    let mut edges = Vec::new();
    for r in 0..cfg.relations {
        let mut primary: Vec<usize> = (0..c).collect();
        primary.shuffle(&mut rng);
        let mut secondary: Vec<usize> = (0..c).collect();
        secondary.shuffle(&mut rng);
        let bimodal = r < cfg.bimodal_relations;
        for src in 0..c {
            let mut targets = vec![primary[src]];
            if bimodal && secondary[src] != primary[src] {
                targets.push(secondary[src]);
            }
            for i in 0..s {
                let head = member(src, i);
                for &dst in &targets {
                    for j in index::sample(&mut rng, s, cfg.fanout) {
                        edges.push(Triple::new(head, r as u32, member(dst, j)));
                    }
                }
            }
        }
    }
    edges.sort_unstable();
    edges.dedup();

    let test = withhold(&mut edges, cfg.holdout, &mut rng);
    let valid = withhold(&mut edges, cfg.holdout, &mut rng);
    let vocab = Vocabularies {
        entities: Vocab::from_labels((0..c * s).map(|e| format!("c{}_{}", e / s, e % s))),
        relations: Vocab::from_labels((0..cfg.relations).map(|r| format!("r{r}"))),
    };
    Ok(SyntheticKg {
        vocab,
        train: edges,
        valid,
        test,
    })
}
