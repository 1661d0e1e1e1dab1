//! Filtered link-prediction ranking, aggregate metrics and the ability
//! retention ratio.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{check_ids, Dataset, FilterIndex, Split, Triple};
use crate::error::{Error, Result};
use crate::scoring::score_at;
use crate::store::{CroppableModel, Real};

/// A triple counts as correct for a sub-model when its mean rank is at most this.
pub const ARR_TOP_K: f64 = 10.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Head,
    Tail,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankOutcome {
    pub triple: Triple,
    pub rank_head: f64,
    pub rank_tail: f64,
}

impl RankOutcome {
    pub fn mean_rank(&self) -> f64 {
        (self.rank_head + self.rank_tail) / 2.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub dim: usize,
    pub params: usize,
    pub mrr: f64,
    pub hit1: f64,
    pub hit3: f64,
    pub hit10: f64,
    pub effi: f64,
}

/// Filtered rank of the gold entity on one side, computed at `width`
/// columns. Candidates forming other known-true triples are skipped; ties
/// count half.
pub fn rank_at<R: Real>(
    model: &CroppableModel<R>,
    width: usize,
    triple: &Triple,
    filter: &FilterIndex,
    side: Side,
) -> f64 {
    let (gold, known) = match side {
        Side::Head => (triple.head, filter.heads(triple.relation, triple.tail)),
        Side::Tail => (triple.tail, filter.tails(triple.head, triple.relation)),
    };
    let gold_score = score_at(model, width, triple);
    let mut greater = 0u64;
    let mut equal = 0u64;
    let mut k = 0;
    for e in 0..model.num_entities() as u32 {
        if e == gold {
            continue;
        }
        while k < known.len() && known[k] < e {
            k += 1;
        }
        if k < known.len() && known[k] == e {
            continue;
        }
        let cand = match side {
            Side::Head => Triple::new(e, triple.relation, triple.tail),
            Side::Tail => Triple::new(triple.head, triple.relation, e),
        };
        let s = score_at(model, width, &cand);
        if s > gold_score {
            greater += 1;
        } else if s == gold_score {
            equal += 1;
        }
    }
    1.0 + greater as f64 + equal as f64 / 2.0
}

/// Filtered rank for sub-model `i` (1-based).
pub fn rank_triple<R: Real>(
    model: &CroppableModel<R>,
    i: usize,
    triple: &Triple,
    filter: &FilterIndex,
    side: Side,
) -> Result<f64> {
    let width = model.schedule().dim(i)?;
    check_ids(triple, model.num_entities(), model.num_relations())?;
    Ok(rank_at(model, width, triple, filter, side))
}

/// Head and tail ranks of every triple at `width`, in input order.
pub fn rank_all<R: Real>(
    model: &CroppableModel<R>,
    width: usize,
    triples: &[Triple],
    filter: &FilterIndex,
) -> Result<Vec<RankOutcome>> {
    for t in triples {
        check_ids(t, model.num_entities(), model.num_relations())?;
    }
    Ok(triples
        .par_iter()
        .map(|t| RankOutcome {
            triple: *t,
            rank_head: rank_at(model, width, t, filter, Side::Head),
            rank_tail: rank_at(model, width, t, filter, Side::Tail),
        })
        .collect())
}

/// Aggregate ranks into metrics. The sum runs sequentially in input order so
/// results do not depend on the thread count.
pub fn metrics_from_ranks(dim: usize, params: usize, outcomes: &[RankOutcome]) -> MetricsReport {
    let n = outcomes.len() as f64;
    let mut mrr = 0.0;
    let mut hits = [0usize; 3];
    for o in outcomes {
        let m = o.mean_rank();
        mrr += 1.0 / m;
        for (h, k) in hits.iter_mut().zip([1.0, 3.0, 10.0]) {
            if m <= k {
                *h += 1;
            }
        }
    }
    let mrr = mrr / n;
    MetricsReport {
        dim,
        params,
        mrr,
        hit1: hits[0] as f64 / n,
        hit3: hits[1] as f64 / n,
        hit10: hits[2] as f64 / n,
        effi: mrr / params as f64,
    }
}

fn split_triples(dataset: &Dataset, split: Split) -> Result<&[Triple]> {
    let triples = dataset.split(split);
    if triples.is_empty() {
        return Err(Error::EmptySplit(split.name()));
    }
    Ok(triples)
}

fn check_model<R: Real>(model: &CroppableModel<R>, dataset: &Dataset) -> Result<()> {
    if model.num_entities() != dataset.num_entities()
        || model.num_relations() != dataset.num_relations()
    {
        return Err(Error::Mismatch(format!(
            "model has {} entities and {} relations, dataset has {} and {}",
            model.num_entities(),
            model.num_relations(),
            dataset.num_entities(),
            dataset.num_relations()
        )));
    }
    Ok(())
}

/// Metrics of sub-model `i` on a split.
pub fn link_prediction<R: Real>(
    model: &CroppableModel<R>,
    i: usize,
    dataset: &Dataset,
    split: Split,
) -> Result<MetricsReport> {
    check_model(model, dataset)?;
    let width = model.schedule().dim(i)?;
    let triples = split_triples(dataset, split)?;
    let outcomes = rank_all(model, width, triples, &dataset.filter)?;
    Ok(metrics_from_ranks(width, model.param_count(width), &outcomes))
}

/// Per-sub-model rank outcomes for every scheduled width.
pub fn rank_sub_models<R: Real>(
    model: &CroppableModel<R>,
    dataset: &Dataset,
    split: Split,
) -> Result<Vec<Vec<RankOutcome>>> {
    check_model(model, dataset)?;
    let triples = split_triples(dataset, split)?;
    model
        .schedule()
        .dims()
        .iter()
        .map(|&w| rank_all(model, w, triples, &dataset.filter))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrReport {
    pub arr: f64,
    pub retained: usize,
    /// Denominator of `arr`.
    pub counted: usize,
    pub total: usize,
    /// `correct[t][i]`: triple `t` has mean rank at most 10 under sub-model `i+1`.
    #[serde(skip)]
    pub correct: Vec<Vec<bool>>,
}

/// Ability retention ratio from a correctness matrix (triples × sub-models).
///
/// A triple is retained when every sub-model above its smallest correct one
/// is correct as well. Triples no sub-model gets right are left out of the
/// denominator unless `include_vacuous` is set, in which case they count as
/// retained. With an empty denominator the ratio is 0.
pub fn arr_from_matrix(correct: Vec<Vec<bool>>, include_vacuous: bool) -> ArrReport {
    let mut retained = 0;
    let mut counted = 0;
    for row in &correct {
        match row.iter().position(|&c| c) {
            Some(first) => {
                counted += 1;
                if row[first..].iter().all(|&c| c) {
                    retained += 1;
                }
            }
            None if include_vacuous => {
                counted += 1;
                retained += 1;
            }
            None => {}
        }
    }
    ArrReport {
        arr: if counted == 0 {
            0.0
        } else {
            retained as f64 / counted as f64
        },
        retained,
        counted,
        total: correct.len(),
        correct,
    }
}

/// Correctness matrix from per-sub-model outcomes (outer index: sub-model).
pub fn correctness_matrix(per_sub_model: &[Vec<RankOutcome>]) -> Vec<Vec<bool>> {
    let triples = per_sub_model.first().map_or(0, Vec::len);
    (0..triples)
        .map(|t| {
            per_sub_model
                .iter()
                .map(|o| o[t].mean_rank() <= ARR_TOP_K)
                .collect()
        })
        .collect()
}

pub fn arr<R: Real>(
    model: &CroppableModel<R>,
    dataset: &Dataset,
    split: Split,
    include_vacuous: bool,
) -> Result<ArrReport> {
    let ranks = rank_sub_models(model, dataset, split)?;
    Ok(arr_from_matrix(correctness_matrix(&ranks), include_vacuous))
}

/// `triple_index<TAB>bits`, one bit per sub-model, smallest first.
pub fn format_matrix(correct: &[Vec<bool>]) -> String {
    let mut out = String::new();
    for (t, row) in correct.iter().enumerate() {
        let bits: String = row.iter().map(|&c| if c { '1' } else { '0' }).collect();
        let _ = writeln!(out, "{t}\t{bits}");
    }
    out
}

pub fn parse_matrix(text: &str) -> Result<Vec<Vec<bool>>> {
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let bad = |m: &str| Error::Report(format!("matrix line {}: {m}", n + 1));
        let (idx, bits) = line.split_once('\t').ok_or_else(|| bad("missing tab"))?;
        let idx: usize = idx.parse().map_err(|_| bad("bad triple index"))?;
        if idx != rows.len() {
            return Err(bad("triple indices must be consecutive from 0"));
        }
        let row = bits
            .chars()
            .map(|c| match c {
                '0' => Ok(false),
                '1' => Ok(true),
                _ => Err(bad("bits must be 0 or 1")),
            })
            .collect::<Result<Vec<_>>>()?;
        if rows.first().is_some_and(|r: &Vec<bool>| r.len() != row.len()) {
            return Err(bad("rows differ in length"));
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_matrix(correct: &[Vec<bool>], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_matrix(correct)).map_err(|e| Error::io(path, e))
}
