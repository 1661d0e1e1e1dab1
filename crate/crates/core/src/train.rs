//! Training configuration, per-step updates and the epoch loop with
//! validation-based early stopping.

use std::collections::BTreeMap;
use std::io::Write;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split, Triple};
use crate::error::{Error, Result};
use crate::eval::link_prediction;
use crate::loss::{kge_loss_split, EiWeightInput};
use crate::objective::{Ablation, LossBreakdown, BreakdownMean, MedObjective, PairMode, SubModelChoice};
use crate::optim::{lr_schedule, Adam, AdamConfig, GradBuffer};
use crate::sampler::{sample_negatives, NegativeBatch};
use crate::scoring::{backprop, score_at, Scratch};
use crate::store::{
    CroppableModel, DimensionSchedule, InitScheme, Norm, Real, RowRole, ScoreFunction, ScoreKind,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EarlyStop {
    /// Validate every this many epochs; 0 disables validation and early stopping.
    pub validate_every: usize,
    /// Stop after this many validations without strict improvement.
    pub patience: usize,
    /// Widths whose validation MRR is averaged; `None` means
    /// `{d_1, d_⌈n/2⌉, d_n}`.
    pub probe_dims: Option<Vec<usize>>,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self {
            validate_every: 10,
            patience: 5,
            probe_dims: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub score_fn: ScoreKind,
    pub norm: Norm,
    pub dims: DimensionSchedule,
    pub batch_size: usize,
    pub neg_per_pos: usize,
    pub max_epochs: usize,
    pub lr: f64,
    pub lr_search: Vec<f64>,
    pub early_stop: EarlyStop,
    pub seed: u64,
    pub ablation: Ablation,
    pub ei_input: EiWeightInput,
    pub pair_mode: PairMode,
    /// Distillation mix between the hard-label and KL terms.
    pub alpha: f64,
    pub temperature: f64,
    /// Rescale touched entity rows to unit L2 norm after each update.
    pub normalize_entities: bool,
    /// Constant `γ` added to scores inside the sigmoid losses, so the
    /// hard-label terms see `σ(γ + s)`. Ranking is unaffected. Distance-based
    /// scores are never positive, so without an offset a positive triple
    /// cannot get a probability above one half.
    #[serde(default)]
    pub margin: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            score_fn: ScoreKind::TransE,
            norm: Norm::L2,
            dims: DimensionSchedule::parse_spec("10:640:10").expect("valid default schedule"),
            batch_size: 1024,
            neg_per_pos: 64,
            max_epochs: 3000,
            lr: 1e-3,
            lr_search: vec![1e-4, 5e-4, 1e-3, 1e-2],
            early_stop: EarlyStop::default(),
            seed: 42,
            ablation: Ablation::default(),
            ei_input: EiWeightInput::Sigmoid,
            pair_mode: PairMode::Single,
            alpha: 0.5,
            temperature: 1.0,
            normalize_entities: false,
            margin: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn score_function(&self) -> ScoreFunction {
        ScoreFunction::new(self.score_fn, self.norm)
    }

    pub fn objective(&self) -> MedObjective {
        MedObjective {
            ablation: self.ablation,
            ei_input: self.ei_input,
            pair_mode: self.pair_mode,
            margin: self.margin,
        }
    }

    pub fn plain_objective(&self) -> PlainKge {
        PlainKge {
            margin: self.margin,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if self.neg_per_pos == 0 {
            return Err(Error::ZeroNegatives);
        }
        if !(self.lr.is_finite() && self.lr >= 0.0) {
            return bad(format!("learning rate {} is not a non-negative number", self.lr));
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha {} outside [0, 1]", self.alpha));
        }
        if !self.margin.is_finite() {
            return bad(format!("margin {} is not finite", self.margin));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return bad(format!("temperature {} must be positive", self.temperature));
        }
        if let Some(p) = &self.early_stop.probe_dims {
            if p.is_empty() {
                return bad("probe dims must not be empty".into());
            }
            for &d in p {
                self.dims.index_of(d)?;
            }
        }
        Ok(())
    }

    /// 1-based sub-model indices probed during validation.
    pub fn probe_indices(&self) -> Result<Vec<usize>> {
        let mut idx = match &self.early_stop.probe_dims {
            Some(dims) => dims
                .iter()
                .map(|&d| self.dims.index_of(d))
                .collect::<Result<Vec<_>>>()?,
            None => {
                let n = self.dims.len();
                vec![1, n.div_ceil(2), n]
            }
        };
        idx.sort_unstable();
        idx.dedup();
        Ok(idx)
    }
}

/// Loss, gradient and breakdown for one step on a sampled sub-model.
pub trait StepObjective<R: Real> {
    fn step(
        &self,
        model: &CroppableModel<R>,
        i: usize,
        positives: &[Triple],
        negatives: &NegativeBatch,
        grads: &mut GradBuffer,
    ) -> Result<LossBreakdown>;
}

impl<R: Real> StepObjective<R> for MedObjective {
    fn step(
        &self,
        model: &CroppableModel<R>,
        i: usize,
        positives: &[Triple],
        negatives: &NegativeBatch,
        grads: &mut GradBuffer,
    ) -> Result<LossBreakdown> {
        self.evaluate(model, SubModelChoice::Sampled(i), positives, &negatives.flatten(), Some(grads))
    }
}

/// The plain sigmoid cross-entropy of the sampled sub-model, with no
/// weighting, no scalars and no neighbour terms.
#[derive(Debug, Clone, Copy, Default)]
pub struct PlainKge {
    pub margin: f64,
}

impl<R: Real> StepObjective<R> for PlainKge {
    fn step(
        &self,
        model: &CroppableModel<R>,
        i: usize,
        positives: &[Triple],
        negatives: &NegativeBatch,
        grads: &mut GradBuffer,
    ) -> Result<LossBreakdown> {
        let width = model.schedule().dim(i)?;
        let negatives = negatives.flatten();
        for t in positives.iter().chain(&negatives) {
            crate::data::check_ids(t, model.num_entities(), model.num_relations())?;
        }
        let logit = |t: &Triple| self.margin + score_at(model, width, t);
        let sp: Vec<f64> = positives.iter().map(logit).collect();
        let sn: Vec<f64> = negatives.iter().map(logit).collect();
        let loss = kge_loss_split(&sp, &sn);
        let mut scratch = Scratch::default();
        let pairs = positives.iter().zip(&loss.d_pos).chain(negatives.iter().zip(&loss.d_neg));
        for (t, &c) in pairs {
            if c != 0.0 {
                backprop(model, width, t, c, grads, &mut scratch);
            }
        }
        let mut b = LossBreakdown {
            kge: loss.value,
            total: loss.value,
            ..LossBreakdown::default()
        };
        b.ei.insert(i, loss.value);
        Ok(b)
    }
}

/// Everything that changes while training.
#[derive(Debug, Clone)]
pub struct TrainState<R: Real = f32> {
    pub model: CroppableModel<R>,
    pub adam: Adam<R>,
    grads: GradBuffer,
    pub step: u64,
    pub epoch: usize,
    pub rng: ChaCha8Rng,
    pub neg_per_pos: usize,
    pub normalize_entities: bool,
}

impl<R: Real> TrainState<R> {
    pub fn new(model: CroppableModel<R>, rng: ChaCha8Rng, neg_per_pos: usize) -> Self {
        Self {
            adam: Adam::new(&model, AdamConfig::default()),
            grads: GradBuffer::for_model(&model),
            model,
            step: 0,
            epoch: 0,
            rng,
            neg_per_pos,
            normalize_entities: false,
        }
    }

    /// Gradients accumulated by the most recent step.
    pub fn last_grads(&self) -> &GradBuffer {
        &self.grads
    }
}

/// One optimizer step: sample negatives and a sub-model index, accumulate
/// the objective's gradients and apply Adam.
pub fn train_step<R: Real, O: StepObjective<R> + ?Sized>(
    state: &mut TrainState<R>,
    positives: &[Triple],
    objective: &O,
    lr: f64,
) -> Result<(usize, LossBreakdown)> {
    let negatives = sample_negatives(
        positives,
        state.neg_per_pos,
        state.model.num_entities(),
        &mut state.rng,
    )?;
    let n = state.model.num_sub_models();
    let i = state.rng.random_range(1..=n);
    state.grads.clear();
    let breakdown = objective.step(&state.model, i, positives, &negatives, &mut state.grads)?;
    if !breakdown.is_finite() || !state.grads.is_finite() {
        return Err(Error::NonFiniteLoss {
            step: state.step,
            sub_model: i,
            batch: positives.to_vec(),
        });
    }
    state.adam.update(&mut state.model, &state.grads, lr);
    if state.normalize_entities {
        normalize_touched_entities(&mut state.model, &state.grads);
    }
    state.step += 1;
    Ok((i, breakdown))
}

fn normalize_touched_entities<R: Real>(model: &mut CroppableModel<R>, grads: &GradBuffer) {
    for (ti, table) in model.tables_mut().iter_mut().enumerate() {
        if table.role != RowRole::Entity {
            continue;
        }
        for &r in grads.touched_rows(ti) {
            let row = table.row_mut(r);
            let norm = row.iter().map(|v| v.to_f64().powi(2)).sum::<f64>().sqrt();
            if norm > 0.0 {
                for v in row.iter_mut() {
                    *v = R::from_f64(v.to_f64() / norm);
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub steps: u64,
    pub losses: LossBreakdown,
    /// Validation MRR keyed by probed width, on validation epochs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub probe_mrr: Option<BTreeMap<usize, f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_probe_mrr: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Best-validation model, or the final one when validation is off.
    pub model: CroppableModel,
    pub log: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub best_mrr: Option<f64>,
    pub stopped_early: bool,
    pub epochs_run: usize,
    pub steps: u64,
}

impl TrainOutcome {
    pub fn write_log<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        for rec in &self.log {
            serde_json::to_writer(&mut *out, rec)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Fresh model and RNG for a config: the same seeded stream initializes the
/// tables and then drives training.
pub fn init_state(dataset: &Dataset, config: &TrainConfig) -> Result<(CroppableModel, ChaCha8Rng)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let model = CroppableModel::init(
        config.score_function(),
        config.dims.clone(),
        dataset.num_entities(),
        dataset.num_relations(),
        InitScheme::UniformScaled,
        &mut rng,
    )?;
    Ok((model, rng))
}

/// Mean validation MRR over the probed sub-models.
pub fn probe_validation<R: Real>(
    model: &CroppableModel<R>,
    dataset: &Dataset,
    probes: &[usize],
) -> Result<(BTreeMap<usize, f64>, f64)> {
    let mut per = BTreeMap::new();
    for &i in probes {
        let r = link_prediction(model, i, dataset, Split::Valid)?;
        per.insert(r.dim, r.mrr);
    }
    let mean = per.values().sum::<f64>() / per.len() as f64;
    Ok((per, mean))
}

/// The epoch loop shared by every method.
pub fn fit<O: StepObjective<f32> + ?Sized>(
    dataset: &Dataset,
    config: &TrainConfig,
    model: CroppableModel,
    rng: ChaCha8Rng,
    objective: &O,
) -> Result<TrainOutcome> {
    config.validate()?;
    let train = dataset.split(Split::Train);
    if train.is_empty() {
        return Err(Error::EmptySplit("train"));
    }
    if model.num_entities() != dataset.num_entities()
        || model.num_relations() != dataset.num_relations()
    {
        return Err(Error::Mismatch(
            "model vocabulary sizes differ from the dataset".into(),
        ));
    }
    let validating = config.early_stop.validate_every > 0;
    if validating && dataset.split(Split::Valid).is_empty() {
        return Err(Error::EmptySplit("valid"));
    }
    let probes = if validating {
        let idx = TrainConfig {
            dims: model.schedule().clone(),
            ..config.clone()
        }
        .probe_indices()?;
        idx
    } else {
        Vec::new()
    };

    let steps_per_epoch = train.len().div_ceil(config.batch_size) as u64;
    let max_steps = steps_per_epoch * config.max_epochs as u64;
    let mut state = TrainState::new(model, rng, config.neg_per_pos);
    state.normalize_entities = config.normalize_entities;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut batch = Vec::with_capacity(config.batch_size);
    let mut log = Vec::new();
    let mut best: Option<(usize, f64, CroppableModel)> = None;
    let mut bad = 0;
    let mut stopped_early = false;

    for epoch in 1..=config.max_epochs {
        state.epoch = epoch;
        let epoch_lr = lr_schedule(state.step, max_steps, config.lr);
        order.shuffle(&mut state.rng);
        let mut mean = BreakdownMean::default();
        for chunk in order.chunks(config.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&k| train[k]));
            let lr = lr_schedule(state.step, max_steps, config.lr);
            let (_, b) = train_step(&mut state, &batch, objective, lr)?;
            mean.push(&b);
        }
        let mut rec = EpochLog {
            epoch,
            lr: epoch_lr,
            steps: state.step,
            losses: mean.finish(),
            probe_mrr: None,
            mean_probe_mrr: None,
        };
        if validating
            && (epoch % config.early_stop.validate_every == 0 || epoch == config.max_epochs)
        {
            let (per, m) = probe_validation(&state.model, dataset, &probes)?;
            rec.probe_mrr = Some(per);
            rec.mean_probe_mrr = Some(m);
            if best.as_ref().is_none_or(|b| m > b.1) {
                best = Some((epoch, m, state.model.clone()));
                bad = 0;
            } else {
                bad += 1;
            }
        }
        log.push(rec);
        if validating && bad >= config.early_stop.patience && epoch < config.max_epochs {
            stopped_early = true;
            break;
        }
    }

    let epochs_run = state.epoch;
    let steps = state.step;
    let (best_epoch, best_mrr, model) = match best {
        Some((e, m, model)) => (Some(e), Some(m), model),
        None => (None, None, state.model),
    };
    Ok(TrainOutcome {
        model,
        log,
        best_epoch,
        best_mrr,
        stopped_early,
        epochs_run,
        steps,
    })
}

/// Train the croppable model with the configured objective.
pub fn train_med(dataset: &Dataset, config: &TrainConfig) -> Result<TrainOutcome> {
    let (model, rng) = init_state(dataset, config)?;
    fit(dataset, config, model, rng, &config.objective())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LrSearch {
    pub best_lr: f64,
    /// `(lr, best mean probe MRR)` per candidate, in search order.
    pub results: Vec<(f64, f64)>,
}

/// Train once per candidate learning rate and keep the one with the highest
/// best-validation MRR (the first wins ties).
pub fn search_lr<F>(config: &TrainConfig, mut run: F) -> Result<LrSearch>
where
    F: FnMut(&TrainConfig) -> Result<TrainOutcome>,
{
    if config.lr_search.is_empty() {
        return Err(Error::InvalidConfig("learning-rate search list is empty".into()));
    }
    if config.early_stop.validate_every == 0 {
        return Err(Error::InvalidConfig(
            "learning-rate search needs validation (validate_every > 0)".into(),
        ));
    }
    let mut results = Vec::new();
    let mut best: Option<(f64, f64)> = None;
    for &lr in &config.lr_search {
        let out = run(&TrainConfig {
            lr,
            ..config.clone()
        })?;
        let m = out.best_mrr.unwrap_or(0.0);
        results.push((lr, m));
        if best.is_none_or(|b| m > b.1) {
            best = Some((lr, m));
        }
    }
    Ok(LrSearch {
        best_lr: best.expect("non-empty search").0,
        results,
    })
}
