//! The croppable training objective: mutual learning between neighbouring
//! sub-models, evolutionary-improvement hard-label loss, and dynamic loss
//! weights, plus the three ablations.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::Triple;
use crate::error::{Error, Result};
use crate::loss::{
    dynamic_weight, ei_weights_neg, ei_weights_pos, hard_label_loss, huber, huber_grad,
    kge_loss_split, EiWeightInput,
};
use crate::optim::GradBuffer;
use crate::scoring::{backprop, score_at, Scratch};
use crate::store::{CroppableModel, Real};

/// Huber threshold of the mutual-learning loss.
pub const HUBER_DELTA: f64 = 1.0;

/// Components switched off for ablation runs. They compose independently.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    /// Drop every mutual-learning term.
    pub no_mlm: bool,
    /// Use the plain KGE loss in place of the weighted hard-label loss.
    pub no_eim: bool,
    /// Fix every dynamic loss weight to 1.
    pub no_dlw: bool,
}

impl Ablation {
    pub const ALL: Ablation = Ablation {
        no_mlm: true,
        no_eim: true,
        no_dlw: true,
    };

    /// Parse a comma list such as `noMLM,noEIM` (case-insensitive; empty or
    /// `none` means no ablation).
    pub fn parse(list: &str) -> Result<Self> {
        let mut a = Ablation::default();
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match item.to_ascii_lowercase().as_str() {
                "nomlm" => a.no_mlm = true,
                "noeim" => a.no_eim = true,
                "nodlw" => a.no_dlw = true,
                "none" => {}
                other => {
                    return Err(Error::InvalidConfig(format!("unknown ablation `{other}`")))
                }
            }
        }
        Ok(a)
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.no_mlm {
            parts.push("noMLM");
        }
        if self.no_eim {
            parts.push("noEIM");
        }
        if self.no_dlw {
            parts.push("noDLW");
        }
        if parts.is_empty() {
            f.write_str("none")
        } else {
            f.write_str(&parts.join(","))
        }
    }
}

/// How the full objective is realized on one sampled sub-model per step.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PairMode {
    /// `λ_i·L_EI^i + L_ML^{i-1,i}`
    #[default]
    Single,
    /// Additionally `λ_{i-1}·L_EI^{i-1}`.
    Pair,
}

impl FromStr for PairMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "single" => Ok(PairMode::Single),
            "pair" => Ok(PairMode::Pair),
            _ => Err(Error::InvalidConfig(format!("unknown pair mode `{s}`"))),
        }
    }
}

impl FromStr for EiWeightInput {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sigmoid" => Ok(EiWeightInput::Sigmoid),
            "raw" => Ok(EiWeightInput::Raw),
            _ => Err(Error::InvalidConfig(format!("unknown EI weight input `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct MedObjective {
    pub ablation: Ablation,
    pub ei_input: EiWeightInput,
    pub pair_mode: PairMode,
    /// Constant `γ` added to every score before the sigmoid terms; see
    /// [`TrainConfig::margin`](crate::train::TrainConfig::margin).
    #[serde(default)]
    pub margin: f64,
}

/// Which sub-models an objective evaluation covers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SubModelChoice {
    /// The per-step realization around one sampled sub-model (1-based).
    Sampled(usize),
    /// Every term of the full objective.
    Full,
}

/// Loss components of one objective evaluation. Maps are keyed by 1-based
/// sub-model index; a mutual-learning entry under `i` is the pair `(i-1, i)`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// Plain KGE loss of the sampled sub-model (monitoring only).
    pub kge: f64,
    pub ml: BTreeMap<usize, f64>,
    pub ei: BTreeMap<usize, f64>,
    pub lambda: BTreeMap<usize, f64>,
    pub total: f64,
    /// Raw-mode teacher scores clamped away from zero.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub clamped: usize,
    /// Set for distillation runs; `total` then mixes `kge` and the KL term.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distill: Option<DistillTerms>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistillTerms {
    pub alpha: f64,
    /// Mean over positives of `T²·KL`.
    pub kl: f64,
}

fn is_zero(v: &usize) -> bool {
    *v == 0
}

impl LossBreakdown {
    /// Weighted sum of the components; equals `total`.
    pub fn recomputed_total(&self) -> f64 {
        if let Some(d) = self.distill {
            return d.alpha * self.kge + (1.0 - d.alpha) * d.kl;
        }
        let ml: f64 = self.ml.values().sum();
        let ei: f64 = self
            .ei
            .iter()
            .map(|(i, v)| self.lambda.get(i).copied().unwrap_or(1.0) * v)
            .sum();
        ml + ei
    }

    pub fn is_finite(&self) -> bool {
        self.total.is_finite()
            && self.kge.is_finite()
            && self.ml.values().all(|v| v.is_finite())
            && self.ei.values().all(|v| v.is_finite())
            && self.distill.is_none_or(|d| d.kl.is_finite())
    }
}

/// Running mean of breakdowns over an epoch.
#[derive(Debug, Clone, Default)]
pub struct BreakdownMean {
    steps: usize,
    kge: f64,
    total: f64,
    ml: BTreeMap<usize, (f64, usize)>,
    ei: BTreeMap<usize, (f64, usize)>,
    lambda: BTreeMap<usize, (f64, usize)>,
    clamped: usize,
    distill: Option<(f64, f64)>,
}

impl BreakdownMean {
    pub fn push(&mut self, b: &LossBreakdown) {
        self.steps += 1;
        self.kge += b.kge;
        self.total += b.total;
        self.clamped += b.clamped;
        if let Some(d) = b.distill {
            let e = self.distill.get_or_insert((d.alpha, 0.0));
            e.1 += d.kl;
        }
        for (dst, src) in [(&mut self.ml, &b.ml), (&mut self.ei, &b.ei), (&mut self.lambda, &b.lambda)] {
            for (k, v) in src {
                let e = dst.entry(*k).or_insert((0.0, 0));
                e.0 += v;
                e.1 += 1;
            }
        }
    }

    pub fn finish(&self) -> LossBreakdown {
        let n = self.steps.max(1) as f64;
        let avg = |m: &BTreeMap<usize, (f64, usize)>| -> BTreeMap<usize, f64> {
            m.iter().map(|(k, (s, c))| (*k, s / *c as f64)).collect()
        };
        LossBreakdown {
            kge: self.kge / n,
            ml: avg(&self.ml),
            ei: avg(&self.ei),
            lambda: avg(&self.lambda),
            total: self.total / n,
            clamped: self.clamped,
            distill: self.distill.map(|(alpha, kl)| DistillTerms { alpha, kl: kl / n }),
        }
    }
}

/// Logits `γ + s` of a batch (positives then negatives) at one width.
fn logits_at<R: Real>(model: &CroppableModel<R>, width: usize, triples: &[Triple], margin: f64) -> Vec<f64> {
    triples.iter().map(|t| margin + score_at(model, width, t)).collect()
}

fn check_batch<R: Real>(model: &CroppableModel<R>, triples: &[Triple]) -> Result<()> {
    for t in triples {
        crate::data::check_ids(t, model.num_entities(), model.num_relations())?;
    }
    Ok(())
}

struct Workspace {
    /// 1-based index → logits over `positives ++ negatives`.
    scores: BTreeMap<usize, Vec<f64>>,
    margin: f64,
    /// 1-based index → `∂L/∂score`.
    dscore: BTreeMap<usize, Vec<f64>>,
}

impl Workspace {
    fn ensure<R: Real>(&mut self, model: &CroppableModel<R>, i: usize, triples: &[Triple]) {
        if !self.scores.contains_key(&i) {
            let w = model.schedule().dims()[i - 1];
            self.scores.insert(i, logits_at(model, w, triples, self.margin));
        }
    }

    fn dscore(&mut self, i: usize, len: usize) -> &mut Vec<f64> {
        self.dscore.entry(i).or_insert_with(|| vec![0.0; len])
    }
}

impl MedObjective {
    /// Evaluate the objective on a batch and, when `grads` is given, add the
    /// gradients of `total` to it.
    pub fn evaluate<R: Real>(
        &self,
        model: &CroppableModel<R>,
        choice: SubModelChoice,
        positives: &[Triple],
        negatives: &[Triple],
        grads: Option<&mut GradBuffer>,
    ) -> Result<LossBreakdown> {
        let n = model.num_sub_models();
        let (ei_terms, ml_terms, monitor): (Vec<usize>, Vec<usize>, usize) = match choice {
            SubModelChoice::Sampled(i) => {
                model.schedule().check_index(i)?;
                let mut ei = Vec::new();
                if self.pair_mode == PairMode::Pair && i >= 2 {
                    ei.push(i - 1);
                }
                ei.push(i);
                let ml = if i >= 2 { vec![i] } else { Vec::new() };
                (ei, ml, i)
            }
            SubModelChoice::Full => ((1..=n).collect(), (2..=n).collect(), n),
        };
        let ml_terms = if self.ablation.no_mlm { Vec::new() } else { ml_terms };
        self.evaluate_terms(model, &ei_terms, &ml_terms, monitor, positives, negatives, grads)
    }

    #[allow(clippy::too_many_arguments)]
    fn evaluate_terms<R: Real>(
        &self,
        model: &CroppableModel<R>,
        ei_terms: &[usize],
        ml_terms: &[usize],
        monitor: usize,
        positives: &[Triple],
        negatives: &[Triple],
        grads: Option<&mut GradBuffer>,
    ) -> Result<LossBreakdown> {
        check_batch(model, positives)?;
        check_batch(model, negatives)?;
        let triples: Vec<Triple> = positives.iter().chain(negatives).copied().collect();
        let np = positives.len();
        let total_len = triples.len();
        let dims = model.schedule().dims();
        let full = model.full_dim();
        let w = model.scalars;
        let mut ws = Workspace {
            scores: BTreeMap::new(),
            margin: self.margin,
            dscore: BTreeMap::new(),
        };
        let mut out = LossBreakdown::default();
        let mut scalar_grad = [0.0f64; 3];

        ws.ensure(model, monitor, &triples);
        {
            let s = &ws.scores[&monitor];
            out.kge = kge_loss_split(&s[..np], &s[np..]).value;
        }

        for &j in ei_terms {
            ws.ensure(model, j, &triples);
            let weighted = j >= 2 && !self.ablation.no_eim;
            let (pw, nw) = if weighted {
                ws.ensure(model, j - 1, &triples);
                let teacher = &ws.scores[&(j - 1)];
                let pw = ei_weights_pos(&teacher[..np], w.w1.to_f64(), j, self.ei_input);
                let nw = ei_weights_neg(&teacher[np..], w.w2.to_f64(), j, self.ei_input);
                (pw, nw)
            } else {
                (
                    ei_weights_pos(&[], 0.0, 1, self.ei_input).with_len(np),
                    ei_weights_neg(&[], 0.0, 1, self.ei_input).with_len(total_len - np),
                )
            };
            out.clamped += pw.clamped;
            let s = &ws.scores[&j];
            let hl = hard_label_loss(&s[..np], &s[np..], &pw.weights, &nw.weights);
            let lambda = if self.ablation.no_dlw {
                1.0
            } else {
                dynamic_weight(w.w3.to_f64(), dims[j - 1], full)
            };
            if weighted {
                scalar_grad[0] += lambda * pw.scale_grad(&hl.pos_terms);
                scalar_grad[1] += lambda * nw.scale_grad(&hl.neg_terms);
            }
            if !self.ablation.no_dlw {
                scalar_grad[2] += lambda * (dims[j - 1] as f64 / full as f64) * hl.value;
            }
            let d = ws.dscore(j, total_len);
            for (k, g) in hl.d_pos.iter().chain(&hl.d_neg).enumerate() {
                d[k] += lambda * g;
            }
            out.ei.insert(j, hl.value);
            out.lambda.insert(j, lambda);
        }

        for &p in ml_terms {
            if p < 2 {
                return Err(Error::InvalidConfig(
                    "mutual learning needs a sub-model index of at least 2".into(),
                ));
            }
            ws.ensure(model, p, &triples);
            ws.ensure(model, p - 1, &triples);
            let (value, g) = mutual_terms(&ws.scores[&(p - 1)], &ws.scores[&p]);
            {
                let lo = ws.dscore(p - 1, total_len);
                for (a, b) in lo.iter_mut().zip(&g) {
                    *a += b;
                }
            }
            let hi = ws.dscore(p, total_len);
            for (a, b) in hi.iter_mut().zip(&g) {
                *a -= b;
            }
            out.ml.insert(p, value);
        }

        out.total = out.recomputed_total();

        if let Some(grads) = grads {
            let mut scratch = Scratch::default();
            for (&i, d) in &ws.dscore {
                let width = dims[i - 1];
                for (t, &c) in triples.iter().zip(d) {
                    if c != 0.0 {
                        backprop(model, width, t, c, grads, &mut scratch);
                    }
                }
            }
            let weighted_any = ei_terms.iter().any(|&j| j >= 2) && !self.ablation.no_eim;
            if weighted_any {
                grads.add_scalar(0, scalar_grad[0]);
                grads.add_scalar(1, scalar_grad[1]);
            }
            if !self.ablation.no_dlw && !ei_terms.is_empty() {
                grads.add_scalar(2, scalar_grad[2]);
            }
        }
        Ok(out)
    }
}

/// Mean Huber loss between neighbour scores and `∂/∂s^{i-1}` per triple
/// (the derivative for `s^i` is its negation).
fn mutual_terms(lower: &[f64], upper: &[f64]) -> (f64, Vec<f64>) {
    let n = lower.len().max(1) as f64;
    let mut value = 0.0;
    let mut g = Vec::with_capacity(lower.len());
    for (a, b) in lower.iter().zip(upper) {
        let r = a - b;
        value += huber(r, HUBER_DELTA);
        g.push(huber_grad(r, HUBER_DELTA) / n);
    }
    (value / n, g)
}

impl crate::loss::EiWeights {
    fn with_len(mut self, len: usize) -> Self {
        self.weights = crate::loss::uniform_weights(len);
        self
    }
}

/// Mutual-learning loss between sub-models `i-1` and `i` on a batch, with
/// gradients into both prefixes.
pub fn mutual_learning_loss<R: Real>(
    model: &CroppableModel<R>,
    i: usize,
    triples: &[Triple],
    grads: Option<&mut GradBuffer>,
) -> Result<f64> {
    model.schedule().check_index(i)?;
    if i < 2 {
        return Err(Error::InvalidConfig(
            "mutual learning needs a sub-model index of at least 2".into(),
        ));
    }
    let obj = MedObjective::default();
    let b = obj.evaluate_terms(model, &[], &[i], i, triples, &[], grads)?;
    Ok(b.ml[&i])
}

/// Evolutionary-improvement loss of sub-model `i` with gradients into its
/// prefix and into `w1`/`w2` (teacher scores are constants).
pub fn ei_loss<R: Real>(
    model: &CroppableModel<R>,
    i: usize,
    positives: &[Triple],
    negatives: &[Triple],
    input: EiWeightInput,
    grads: Option<&mut GradBuffer>,
) -> Result<f64> {
    model.schedule().check_index(i)?;
    let obj = MedObjective {
        ablation: Ablation {
            no_dlw: true,
            ..Ablation::default()
        },
        ei_input: input,
        pair_mode: PairMode::Single,
        margin: 0.0,
    };
    let b = obj.evaluate_terms(model, &[i], &[], i, positives, negatives, grads)?;
    Ok(b.ei[&i])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loss::kge_loss_split;
    use crate::scoring::batch_score;
    use crate::store::{DimensionSchedule, InitScheme, ScoreFunction, ScoreKind};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model(dims: &[usize]) -> CroppableModel<f64> {
        CroppableModel::init(
            ScoreFunction::from(ScoreKind::TransE),
            DimensionSchedule::new(dims.to_vec()).unwrap(),
            8,
            2,
            InitScheme::UniformScaled,
            &mut ChaCha8Rng::seed_from_u64(5),
        )
        .unwrap()
    }

    fn batch() -> (Vec<Triple>, Vec<Triple>) {
        (
            vec![Triple::new(0, 0, 1), Triple::new(2, 1, 3)],
            vec![
                Triple::new(0, 0, 4),
                Triple::new(5, 0, 1),
                Triple::new(2, 1, 6),
                Triple::new(7, 1, 3),
            ],
        )
    }

    #[test]
    fn ablation_parsing() {
        let a = Ablation::parse("noMLM, noDLW").unwrap();
        assert!(a.no_mlm && !a.no_eim && a.no_dlw);
        assert_eq!(a.to_string(), "noMLM,noDLW");
        assert_eq!(Ablation::parse("").unwrap(), Ablation::default());
        assert!(Ablation::parse("noXYZ").is_err());
    }

    #[test]
    fn ei_at_first_sub_model_is_kge_bitwise() {
        let m = model(&[2, 4]);
        let (pos, neg) = batch();
        let ei = ei_loss(&m, 1, &pos, &neg, EiWeightInput::Sigmoid, None).unwrap();
        let sp = batch_score(&m, 1, &pos).unwrap();
        let sn = batch_score(&m, 1, &neg).unwrap();
        let kge = kge_loss_split(&sp, &sn).value;
        assert_eq!(ei.to_bits(), kge.to_bits());
    }

    #[test]
    fn identical_neighbours_have_zero_mutual_loss() {
        let mut m = model(&[2, 4]);
        for t in m.tables_mut() {
            for r in 0..t.rows() {
                t.set(r, 2, 0.0);
                t.set(r, 3, 0.0);
            }
        }
        let (pos, neg) = batch();
        let all: Vec<Triple> = pos.iter().chain(&neg).copied().collect();
        let mut g = GradBuffer::for_model(&m);
        let l = mutual_learning_loss(&m, 2, &all, Some(&mut g)).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.touched_rows(0).is_empty());
        assert!(mutual_learning_loss(&m, 1, &all, None).is_err());
    }

    #[test]
    fn fully_ablated_step_is_plain_kge() {
        let m = model(&[2, 4, 8]);
        let (pos, neg) = batch();
        let obj = MedObjective {
            ablation: Ablation::ALL,
            ..MedObjective::default()
        };
        for i in 1..=3 {
            let b = obj
                .evaluate(&m, SubModelChoice::Sampled(i), &pos, &neg, None)
                .unwrap();
            let sp = batch_score(&m, i, &pos).unwrap();
            let sn = batch_score(&m, i, &neg).unwrap();
            assert_eq!(b.total.to_bits(), kge_loss_split(&sp, &sn).value.to_bits());
            assert!(b.ml.is_empty());
        }
    }

    #[test]
    fn single_sub_model_is_lambda_times_kge() {
        let m = model(&[6]);
        let (pos, neg) = batch();
        let b = MedObjective::default()
            .evaluate(&m, SubModelChoice::Sampled(1), &pos, &neg, None)
            .unwrap();
        let sp = batch_score(&m, 1, &pos).unwrap();
        let sn = batch_score(&m, 1, &neg).unwrap();
        let expected = std::f64::consts::E * kge_loss_split(&sp, &sn).value;
        assert!((b.total - expected).abs() < 1e-12);
    }

    #[test]
    fn breakdown_total_is_weighted_sum() {
        let m = model(&[2, 4, 8]);
        let (pos, neg) = batch();
        for mode in [PairMode::Single, PairMode::Pair] {
            let obj = MedObjective {
                pair_mode: mode,
                ..MedObjective::default()
            };
            for choice in [SubModelChoice::Sampled(3), SubModelChoice::Full] {
                let b = obj.evaluate(&m, choice, &pos, &neg, None).unwrap();
                assert_eq!(b.total, b.recomputed_total());
                assert!(b.ml.values().chain(b.ei.values()).all(|v| *v >= 0.0));
            }
        }
        let full = MedObjective::default()
            .evaluate(&m, SubModelChoice::Full, &pos, &neg, None)
            .unwrap();
        assert_eq!(full.ei.len(), 3);
        assert_eq!(full.ml.keys().copied().collect::<Vec<_>>(), vec![2, 3]);
    }

    #[test]
    fn pair_mode_adds_lower_ei_term() {
        let m = model(&[2, 4, 8]);
        let (pos, neg) = batch();
        let obj = MedObjective {
            pair_mode: PairMode::Pair,
            ..MedObjective::default()
        };
        let b = obj
            .evaluate(&m, SubModelChoice::Sampled(3), &pos, &neg, None)
            .unwrap();
        assert_eq!(b.ei.keys().copied().collect::<Vec<_>>(), vec![2, 3]);
    }
}
