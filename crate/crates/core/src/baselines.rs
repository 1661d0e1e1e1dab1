//! Comparison methods: direct training at one width, prefix extraction with
//! optional column reordering, and score-level knowledge distillation.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{Dataset, Triple};
use crate::error::{Error, Result};
use crate::loss::{distill_kl, kge_loss_split};
use crate::objective::{DistillTerms, LossBreakdown};
use crate::optim::GradBuffer;
use crate::sampler::{sample_negatives, NegativeBatch};
use crate::scoring::{backprop, score_at, Scratch};
use crate::store::{CroppableModel, DimensionSchedule, Real};
use crate::train::{fit, init_state, StepObjective, TrainConfig, TrainOutcome};

/// Plain training of a single model at width `dim`.
pub fn train_dt(dataset: &Dataset, dim: usize, config: &TrainConfig) -> Result<TrainOutcome> {
    let config = TrainConfig {
        dims: DimensionSchedule::new(vec![dim])?,
        early_stop: crate::train::EarlyStop {
            probe_dims: None,
            ..config.early_stop.clone()
        },
        ..config.clone()
    };
    let (model, rng) = init_state(dataset, &config)?;
    fit(dataset, &config, model, rng, &config.plain_objective())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImportanceMethod {
    /// Validation-loss increase when the column is zeroed.
    Loss,
    /// Mean absolute parameter value in the column.
    Value,
}

impl FromStr for ImportanceMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "loss" => Ok(Self::Loss),
            "value" => Ok(Self::Value),
            _ => Err(Error::InvalidConfig(format!("unknown importance mode `{s}`"))),
        }
    }
}

/// Full-width KGE loss on fixed positives and negatives.
fn full_width_loss<R: Real>(model: &CroppableModel<R>, pos: &[Triple], neg: &[Triple]) -> f64 {
    let w = model.full_dim();
    let sp: Vec<f64> = pos.iter().map(|t| score_at(model, w, t)).collect();
    let sn: Vec<f64> = neg.iter().map(|t| score_at(model, w, t)).collect();
    kge_loss_split(&sp, &sn).value
}

/// Per-column increase of the validation KGE loss when that column is
/// zeroed in every table. Negatives are drawn once from `seed` so every
/// column sees the same batch.
pub fn importance_by_loss<R: Real>(
    model: &CroppableModel<R>,
    valid: &[Triple],
    neg_per_pos: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if valid.is_empty() {
        return Err(Error::EmptySplit("valid"));
    }
    for t in valid {
        crate::data::check_ids(t, model.num_entities(), model.num_relations())?;
    }
    let neg = sample_negatives(
        valid,
        neg_per_pos,
        model.num_entities(),
        &mut ChaCha8Rng::seed_from_u64(seed),
    )?
    .flatten();
    let base = full_width_loss(model, valid, &neg);
    let importance = (0..model.full_dim())
        .into_par_iter()
        .map_init(
            || model.clone(),
            |scratch, c| {
                let saved: Vec<Vec<R>> = scratch
                    .tables()
                    .iter()
                    .map(|t| (0..t.rows()).map(|r| t.get(r, c)).collect())
                    .collect();
                scratch.zero_column(c);
                let loss = full_width_loss(scratch, valid, &neg);
                for (t, col) in scratch.tables_mut().iter_mut().zip(saved) {
                    for (r, v) in col.into_iter().enumerate() {
                        t.set(r, c, v);
                    }
                }
                loss - base
            },
        )
        .collect();
    Ok(importance)
}

/// Mean absolute value of each column over every row of every table.
pub fn importance_by_value<R: Real>(model: &CroppableModel<R>) -> Vec<f64> {
    let width = model.full_dim();
    let mut sum = vec![0.0; width];
    let mut rows = 0usize;
    for t in model.tables() {
        for r in 0..t.rows() {
            for (s, v) in sum.iter_mut().zip(t.row(r)) {
                *s += v.to_f64().abs();
            }
        }
        rows += t.rows();
    }
    sum.into_iter().map(|s| s / rows as f64).collect()
}

/// Reorder columns by descending importance (when given), then keep the
/// first `dim`.
pub fn ext_crop<R: Real>(
    model: &CroppableModel<R>,
    dim: usize,
    importance: Option<&[f64]>,
) -> Result<CroppableModel<R>> {
    match importance {
        Some(imp) => model.reorder_dimensions(imp)?.truncate(dim),
        None => model.truncate(dim),
    }
}

/// The extraction pipeline viewed as a croppable model: the (optionally
/// reordered) full model under `schedule`, so sub-model `i` is `ext_crop`
/// at `d_i`.
pub fn ext_model<R: Real>(
    model: &CroppableModel<R>,
    schedule: DimensionSchedule,
    importance: Option<&[f64]>,
) -> Result<CroppableModel<R>> {
    let base = match importance {
        Some(imp) => model.reorder_dimensions(imp)?,
        None => model.clone(),
    };
    base.with_schedule(schedule)
}

pub fn format_importance(importance: &[f64]) -> String {
    let mut out = String::new();
    for (c, v) in importance.iter().enumerate() {
        let _ = writeln!(out, "{c}\t{v}");
    }
    out
}

pub fn parse_importance(text: &str) -> Result<Vec<f64>> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim_end_matches('\r');
        if line.is_empty() {
            continue;
        }
        let bad = |m: &str| Error::Report(format!("importance line {}: {m}", n + 1));
        let (c, v) = line.split_once('\t').ok_or_else(|| bad("missing tab"))?;
        let c: usize = c.parse().map_err(|_| bad("bad column index"))?;
        if c != out.len() {
            return Err(bad("columns must be consecutive from 0"));
        }
        let v: f64 = v.parse().map_err(|_| bad("bad score"))?;
        if !v.is_finite() {
            return Err(Error::NonFiniteImportance(c));
        }
        out.push(v);
    }
    Ok(out)
}

pub fn write_importance(importance: &[f64], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, format_importance(importance)).map_err(|e| Error::io(path, e))
}

pub fn read_importance(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    parse_importance(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

/// `α·KGE + (1−α)·T²·KL(teacher ‖ student)`, the KL taken per positive over
/// the softmax of its candidate set (the positive and its own negatives).
#[derive(Debug, Clone, Copy)]
pub struct BkdObjective<'a, T: Real> {
    pub teacher: &'a CroppableModel<T>,
    pub alpha: f64,
    pub temperature: f64,
    /// Offset inside the hard-label term only; the softmax ignores it.
    pub margin: f64,
}

impl<R: Real, T: Real> StepObjective<R> for BkdObjective<'_, T> {
    fn step(
        &self,
        model: &CroppableModel<R>,
        i: usize,
        positives: &[Triple],
        negatives: &NegativeBatch,
        grads: &mut GradBuffer,
    ) -> Result<LossBreakdown> {
        let b = self.evaluate(model, i, positives, negatives, Some(grads))?;
        Ok(b)
    }
}

impl<T: Real> BkdObjective<'_, T> {
    pub fn evaluate<R: Real>(
        &self,
        model: &CroppableModel<R>,
        i: usize,
        positives: &[Triple],
        negatives: &NegativeBatch,
        grads: Option<&mut GradBuffer>,
    ) -> Result<LossBreakdown> {
        let width = model.schedule().dim(i)?;
        let tw = self.teacher.full_dim();
        if width > tw {
            return Err(Error::StudentTooWide {
                student: width,
                teacher: tw,
            });
        }
        let groups = negatives.per_positive();
        if groups.len() != positives.len() {
            return Err(Error::Mismatch("one negative group per positive expected".into()));
        }
        for t in positives.iter().chain(groups.iter().flatten()) {
            crate::data::check_ids(t, model.num_entities(), model.num_relations())?;
            crate::data::check_ids(t, self.teacher.num_entities(), self.teacher.num_relations())?;
        }
        let flat = negatives.flatten();
        let sp: Vec<f64> = positives.iter().map(|t| score_at(model, width, t)).collect();
        let sn: Vec<f64> = flat.iter().map(|t| score_at(model, width, t)).collect();
        let hard = if self.margin == 0.0 {
            kge_loss_split(&sp, &sn)
        } else {
            let shift = |v: &[f64]| v.iter().map(|s| self.margin + s).collect::<Vec<_>>();
            kge_loss_split(&shift(&sp), &shift(&sn))
        };

        let np = positives.len().max(1) as f64;
        let mut d_pos: Vec<f64> = hard.d_pos.iter().map(|g| self.alpha * g).collect();
        let mut d_neg: Vec<f64> = hard.d_neg.iter().map(|g| self.alpha * g).collect();
        let mut kl_sum = 0.0;
        let mut offset = 0;
        for (p, (pos, group)) in positives.iter().zip(groups).enumerate() {
            let mut teacher = Vec::with_capacity(group.len() + 1);
            teacher.push(score_at(self.teacher, tw, pos));
            teacher.extend(group.iter().map(|t| score_at(self.teacher, tw, t)));
            let mut student = Vec::with_capacity(group.len() + 1);
            student.push(sp[p]);
            student.extend_from_slice(&sn[offset..offset + group.len()]);
            let (kl, g) = distill_kl(&teacher, &student, self.temperature);
            kl_sum += kl;
            let scale = (1.0 - self.alpha) / np;
            d_pos[p] += scale * g[0];
            for (d, gk) in d_neg[offset..offset + group.len()].iter_mut().zip(&g[1..]) {
                *d += scale * gk;
            }
            offset += group.len();
        }
        let kl = kl_sum / np;

        if let Some(grads) = grads {
            let mut scratch = Scratch::default();
            let pairs = positives.iter().zip(&d_pos).chain(flat.iter().zip(&d_neg));
            for (t, &c) in pairs {
                if c != 0.0 {
                    backprop(model, width, t, c, grads, &mut scratch);
                }
            }
        }
        let mut b = LossBreakdown {
            kge: hard.value,
            distill: Some(DistillTerms {
                alpha: self.alpha,
                kl,
            }),
            ..LossBreakdown::default()
        };
        b.total = b.recomputed_total();
        Ok(b)
    }
}

/// Train a single-width student against the full-width teacher.
pub fn distill_bkd(
    teacher: &CroppableModel,
    dataset: &Dataset,
    student_dim: usize,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if student_dim > teacher.full_dim() {
        return Err(Error::StudentTooWide {
            student: student_dim,
            teacher: teacher.full_dim(),
        });
    }
    if teacher.num_entities() != dataset.num_entities()
        || teacher.num_relations() != dataset.num_relations()
    {
        return Err(Error::Mismatch(
            "teacher vocabulary sizes differ from the dataset".into(),
        ));
    }
    if teacher.kind() != config.score_fn {
        return Err(Error::Mismatch(format!(
            "teacher uses {}, config asks for {}",
            teacher.kind(),
            config.score_fn
        )));
    }
    let config = TrainConfig {
        dims: DimensionSchedule::new(vec![student_dim])?,
        early_stop: crate::train::EarlyStop {
            probe_dims: None,
            ..config.early_stop.clone()
        },
        ..config.clone()
    };
    let (model, rng) = init_state(dataset, &config)?;
    let objective = BkdObjective {
        teacher,
        alpha: config.alpha,
        temperature: config.temperature,
        margin: config.margin,
    };
    fit(dataset, &config, model, rng, &objective)
}
