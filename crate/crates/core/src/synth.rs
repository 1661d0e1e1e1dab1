//! Synthetic knowledge graphs with a hidden translational structure.
//!
//! Every entity gets a Gaussian latent vector and every relation a latent
//! offset. A fact `(h, r, t)` picks `t` among the entities nearest to
//! `x_h + o_r`, so the graph is learnable but needs several dimensions to
//! model well. The defaults mimic a small biomedical graph: few entities,
//! many relations and about 5k facts.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Triple};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub entities: usize,
    pub relations: usize,
    pub triples: usize,
    pub latent_dim: usize,
    /// Tails are drawn uniformly from this many nearest neighbours.
    pub fanout: usize,
    pub valid_fraction: f64,
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            entities: 135,
            relations: 46,
            triples: 5000,
            latent_dim: 8,
            fanout: 3,
            valid_fraction: 0.1,
            test_fraction: 0.1,
            seed: 7,
        }
    }
}

pub fn generate(cfg: &SynthConfig) -> Result<Dataset> {
    let bad = |m: &str| Err(Error::InvalidConfig(format!("synthetic graph: {m}")));
    if cfg.entities < 2 || cfg.relations == 0 || cfg.latent_dim == 0 || cfg.fanout == 0 {
        return bad("needs at least 2 entities, 1 relation, latent_dim and fanout ≥ 1");
    }
    if cfg.fanout >= cfg.entities {
        return bad("fanout must be below the entity count");
    }
    let capacity = cfg.entities * cfg.relations * cfg.fanout;
    if cfg.triples > capacity / 2 {
        return bad("too many triples requested for the entity/relation/fanout sizes");
    }
    let split_total = cfg.valid_fraction + cfg.test_fraction;
    if !(0.0..1.0).contains(&split_total) || cfg.valid_fraction < 0.0 || cfg.test_fraction < 0.0 {
        return bad("valid and test fractions must be non-negative and sum below 1");
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k = cfg.latent_dim;
    let mut gauss = |n: usize, scale: f64| -> Vec<f64> {
        (0..n)
            .map(|_| scale * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, &mut rng))
            .collect()
    };
    let x = gauss(cfg.entities * k, 1.0);
    let o = gauss(cfg.relations * k, 1.0);

    let mut seen = HashSet::with_capacity(cfg.triples);
    let mut triples = Vec::with_capacity(cfg.triples);
    let mut dist: Vec<(f64, u32)> = Vec::with_capacity(cfg.entities);
    let mut attempts = 0usize;
    while triples.len() < cfg.triples {
        attempts += 1;
        if attempts > cfg.triples * 50 {
            return bad("could not draw enough distinct triples");
        }
        let h = rng.random_range(0..cfg.entities);
        let r = rng.random_range(0..cfg.relations);
        dist.clear();
        for e in 0..cfg.entities {
            if e == h {
                continue;
            }
            let d: f64 = (0..k)
                .map(|c| {
                    let v = x[h * k + c] + o[r * k + c] - x[e * k + c];
                    v * v
                })
                .sum();
            dist.push((d, e as u32));
        }
        dist.select_nth_unstable_by(cfg.fanout - 1, |a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let near = &mut dist[..cfg.fanout];
        near.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let t = near[rng.random_range(0..cfg.fanout)].1;
        let triple = Triple::new(h as u32, r as u32, t);
        if seen.insert(triple) {
            triples.push(triple);
        }
    }
    triples.shuffle(&mut rng);
    let n_valid = (cfg.triples as f64 * cfg.valid_fraction).round() as usize;
    let n_test = (cfg.triples as f64 * cfg.test_fraction).round() as usize;
    let test = triples.split_off(triples.len() - n_test);
    let valid = triples.split_off(triples.len() - n_valid);
    Dataset::from_encoded(cfg.entities, cfg.relations, triples, valid, test)
}
