#![allow(dead_code)]

use std::collections::BTreeSet;

use cropkge::baselines::BkdObjective;
use cropkge::data::Triple;
use cropkge::eval::{rank_triple, Side};
use cropkge::loss::{
    dynamic_weight, ei_weights_neg, ei_weights_pos, hard_label_loss, huber, uniform_weights,
    EiWeightInput,
};
use cropkge::objective::{ei_loss, mutual_learning_loss, SubModelChoice};
use cropkge::optim::GradBuffer;
use cropkge::sampler::{sample_negatives, NegativeBatch};
use cropkge::scoring::score_at;
use cropkge::store::{InitScheme, Scalars};
use cropkge::{
    Ablation, CroppableModel, Dataset, DimensionSchedule, MedObjective, Norm, PairMode,
    ScoreFunction, ScoreKind,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const KINDS: [ScoreKind; 4] = [
    ScoreKind::TransE,
    ScoreKind::SimplE,
    ScoreKind::RotatE,
    ScoreKind::PairRE,
];

pub const FD_STEP: f64 = 1e-4;
pub const FD_TOLERANCE: f64 = 1e-4;
/// Entries whose gradients are both below this size are compared in
/// absolute terms.
pub const FD_FLOOR: f64 = 1e-2;

pub fn score_fns() -> Vec<ScoreFunction> {
    let mut out = Vec::new();
    for kind in KINDS {
        out.push(ScoreFunction::new(kind, Norm::L2));
        if kind != ScoreKind::SimplE {
            out.push(ScoreFunction::new(kind, Norm::L1));
        }
    }
    out
}

/// A model with entries uniform in (-1, 1) and scalars in (0.3, 1.5).
pub fn random_model(
    f: ScoreFunction,
    dims: &[usize],
    entities: usize,
    relations: usize,
    rng: &mut ChaCha8Rng,
) -> CroppableModel<f64> {
    let schedule = DimensionSchedule::new(dims.to_vec()).unwrap();
    let mut m = CroppableModel::<f64>::init(f, schedule, entities, relations, InitScheme::Constant(0.0), rng)
        .unwrap();
    for t in m.tables_mut() {
        for v in t.data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
    }
    m.scalars = Scalars {
        w1: rng.random_range(0.3..1.5),
        w2: rng.random_range(0.3..1.5),
        w3: rng.random_range(0.3..1.5),
    };
    m
}

pub fn random_triples(n: usize, entities: usize, relations: usize, rng: &mut ChaCha8Rng) -> Vec<Triple> {
    (0..n)
        .map(|_| {
            Triple::new(
                rng.random_range(0..entities as u32),
                rng.random_range(0..relations as u32),
                rng.random_range(0..entities as u32),
            )
        })
        .collect()
}

/// Whether an L1 distance has a component within `eps` of its kink.
pub fn near_l1_kink(m: &CroppableModel<f64>, triples: &[Triple], eps: f64) -> bool {
    if m.score_fn().norm != Norm::L1 {
        return false;
    }
    let w = m.full_dim();
    let t = |name: &str, row: u32| m.table_by_name(name).unwrap().row(row as usize)[..w].to_vec();
    triples.iter().any(|x| {
        let comps: Vec<f64> = match m.kind() {
            ScoreKind::TransE => {
                let (h, r, tl) = (t("entity", x.head), t("relation", x.relation), t("entity", x.tail));
                (0..w).map(|j| h[j] + r[j] - tl[j]).collect()
            }
            ScoreKind::PairRE => {
                let (h, tl) = (t("entity", x.head), t("entity", x.tail));
                let (rh, rt) = (t("relation_h", x.relation), t("relation_t", x.relation));
                (0..w).map(|j| h[j] * rh[j] - tl[j] * rt[j]).collect()
            }
            ScoreKind::RotatE => {
                let (hr, hi) = (t("entity_re", x.head), t("entity_im", x.head));
                let (tr, ti) = (t("entity_re", x.tail), t("entity_im", x.tail));
                let p = t("relation_phase", x.relation);
                (0..w)
                    .map(|j| {
                        let (c, s) = (p[j].cos(), p[j].sin());
                        let re = hr[j] * c - hi[j] * s - tr[j];
                        let im = hr[j] * s + hi[j] * c - ti[j];
                        (re * re + im * im).sqrt()
                    })
                    .collect()
            }
            ScoreKind::SimplE => Vec::new(),
        };
        comps.iter().any(|c| c.abs() < eps)
    })
}

pub type LossFn<'a> = dyn Fn(&CroppableModel<f64>, Option<&mut GradBuffer>) -> f64 + 'a;

fn analytic_entry(g: &GradBuffer, table: usize, row: usize, col: usize) -> f64 {
    if !g.touched_rows(table).contains(&row) {
        return 0.0;
    }
    g.row(table, row).get(col).copied().unwrap_or(0.0)
}

/// Worst relative error between analytic and central-difference gradients
/// over every table entry and the three scalars.
pub fn gradient_error(model: &CroppableModel<f64>, loss: &LossFn) -> f64 {
    let mut grads = GradBuffer::for_model(model);
    loss(model, Some(&mut grads));
    let mut m = model.clone();
    let mut worst: f64 = 0.0;
    let mut compare = |a: f64, n: f64| {
        let e = (a - n).abs() / a.abs().max(n.abs()).max(FD_FLOOR);
        worst = worst.max(e);
    };
    for ti in 0..m.tables().len() {
        let (rows, width) = (m.tables()[ti].rows(), m.tables()[ti].width());
        for r in 0..rows {
            for c in 0..width {
                let idx = r * width + c;
                let orig = m.tables()[ti].data()[idx];
                m.tables_mut()[ti].data_mut()[idx] = orig + FD_STEP;
                let up = loss(&m, None);
                m.tables_mut()[ti].data_mut()[idx] = orig - FD_STEP;
                let down = loss(&m, None);
                m.tables_mut()[ti].data_mut()[idx] = orig;
                compare(analytic_entry(&grads, ti, r, c), (up - down) / (2.0 * FD_STEP));
            }
        }
    }
    for k in 0..3 {
        let orig = *m.scalars.get_mut(k);
        *m.scalars.get_mut(k) = orig + FD_STEP;
        let up = loss(&m, None);
        *m.scalars.get_mut(k) = orig - FD_STEP;
        let down = loss(&m, None);
        *m.scalars.get_mut(k) = orig;
        compare(grads.scalars[k], (up - down) / (2.0 * FD_STEP));
    }
    worst
}

pub struct Instance {
    pub model: CroppableModel<f64>,
    pub teacher: CroppableModel<f64>,
    pub positives: Vec<Triple>,
    pub negatives: NegativeBatch,
    pub i: usize,
}

pub const LOSSES: [&str; 11] = [
    "kge", "kge_margin", "ei_sigmoid", "ei_raw", "ml", "med", "med_pair", "med_full",
    "med_noeim", "med_nodlw", "bkd",
];

/// A random instance away from L1 kinks; `i` is at least 2.
pub fn instance(f: ScoreFunction, rng: &mut ChaCha8Rng) -> Instance {
    let (ne, nr) = (6, 3);
    loop {
        let model = random_model(f, &[2, 3, 5], ne, nr, rng);
        let teacher = random_model(f, &[5], ne, nr, rng);
        let positives = random_triples(3, ne, nr, rng);
        let negatives = sample_negatives(&positives, 2, ne, rng).unwrap();
        let all: Vec<Triple> = positives.iter().copied().chain(negatives.flatten()).collect();
        if near_l1_kink(&model, &all, 1e-3) || near_l1_kink(&teacher, &all, 1e-3) {
            continue;
        }
        let i = rng.random_range(2..=3);
        return Instance { model, teacher, positives, negatives, i };
    }
}

/// Independent forward pass of the sampled or full objective with the EI
/// teachers taken from `frozen`, so differentiating it in `model` leaves the
/// teacher scores constant.
pub fn med_forward(
    obj: &MedObjective,
    choice: SubModelChoice,
    model: &CroppableModel<f64>,
    frozen: &CroppableModel<f64>,
    pos: &[Triple],
    neg: &[Triple],
) -> f64 {
    let n = model.num_sub_models();
    let dims = model.schedule().dims();
    let logits = |m: &CroppableModel<f64>, j: usize, ts: &[Triple]| -> Vec<f64> {
        ts.iter().map(|t| obj.margin + score_at(m, dims[j - 1], t)).collect()
    };
    let (ei, ml): (Vec<usize>, Vec<usize>) = match choice {
        SubModelChoice::Sampled(i) => {
            let mut ei = vec![i];
            if obj.pair_mode == PairMode::Pair && i >= 2 {
                ei.insert(0, i - 1);
            }
            (ei, if i >= 2 { vec![i] } else { vec![] })
        }
        SubModelChoice::Full => ((1..=n).collect(), (2..=n).collect()),
    };
    let sc = model.scalars;
    let mut total = 0.0;
    for j in ei {
        let (sp, sn) = (logits(model, j, pos), logits(model, j, neg));
        let (pw, nw) = if j >= 2 && !obj.ablation.no_eim {
            let (tp, tn) = (logits(frozen, j - 1, pos), logits(frozen, j - 1, neg));
            (
                ei_weights_pos(&tp, sc.w1, j, obj.ei_input).weights,
                ei_weights_neg(&tn, sc.w2, j, obj.ei_input).weights,
            )
        } else {
            (uniform_weights(pos.len()), uniform_weights(neg.len()))
        };
        let l = hard_label_loss(&sp, &sn, &pw, &nw).value;
        let lambda = if obj.ablation.no_dlw { 1.0 } else { dynamic_weight(sc.w3, dims[j - 1], model.full_dim()) };
        total += lambda * l;
    }
    if !obj.ablation.no_mlm {
        let all: Vec<Triple> = pos.iter().chain(neg).copied().collect();
        for p in ml {
            let (lo, hi) = (logits(model, p - 1, &all), logits(model, p, &all));
            total += lo.iter().zip(&hi).map(|(a, b)| huber(a - b, 1.0)).sum::<f64>() / all.len() as f64;
        }
    }
    total
}

/// The loss as seen by the analytic gradient: library value and gradient at
/// the instance point, the frozen-teacher oracle for perturbed points.
pub fn loss_fn<'a>(name: &str, x: &'a Instance) -> Box<LossFn<'a>> {
    let pos = &x.positives;
    let neg = x.negatives.flatten();
    let i = x.i;
    let med = |obj: MedObjective, choice: SubModelChoice| -> Box<LossFn<'a>> {
        let neg = neg.clone();
        let frozen = x.model.clone();
        let lib = obj.evaluate(&x.model, choice, pos, &neg, None).unwrap().total;
        let oracle = med_forward(&obj, choice, &x.model, &frozen, pos, &neg);
        assert!(
            (lib - oracle).abs() <= 1e-12 * lib.abs().max(1.0),
            "forward mismatch {lib} vs {oracle}"
        );
        Box::new(move |m, g| match g {
            Some(g) => obj.evaluate(m, choice, pos, &neg, Some(g)).unwrap().total,
            None => med_forward(&obj, choice, m, &frozen, pos, &neg),
        })
    };
    let plain = MedObjective { ablation: Ablation::ALL, ..MedObjective::default() };
    match name {
        "kge" => med(plain, SubModelChoice::Sampled(i)),
        "kge_margin" => med(MedObjective { margin: 2.5, ..plain }, SubModelChoice::Sampled(i)),
        "ei_sigmoid" | "ei_raw" => {
            let input = if name == "ei_raw" { EiWeightInput::Raw } else { EiWeightInput::Sigmoid };
            let obj = MedObjective {
                ablation: Ablation { no_dlw: true, no_mlm: true, ..Ablation::default() },
                ei_input: input,
                ..MedObjective::default()
            };
            let frozen = x.model.clone();
            let lib = ei_loss(&x.model, i, pos, &neg, input, None).unwrap();
            let oracle = med_forward(&obj, SubModelChoice::Sampled(i), &x.model, &frozen, pos, &neg);
            assert!((lib - oracle).abs() <= 1e-12 * lib.abs().max(1.0), "ei forward {lib} vs {oracle}");
            Box::new(move |m, g| match g {
                Some(g) => ei_loss(m, i, pos, &neg, input, Some(g)).unwrap(),
                None => med_forward(&obj, SubModelChoice::Sampled(i), m, &frozen, pos, &neg),
            })
        }
        "ml" => {
            let all: Vec<Triple> = pos.iter().copied().chain(neg.iter().copied()).collect();
            Box::new(move |m, g| mutual_learning_loss(m, i, &all, g).unwrap())
        }
        "med" => med(MedObjective { margin: 1.0, ..MedObjective::default() }, SubModelChoice::Sampled(i)),
        "med_pair" => med(
            MedObjective { pair_mode: PairMode::Pair, ..MedObjective::default() },
            SubModelChoice::Sampled(i),
        ),
        "med_full" => med(MedObjective::default(), SubModelChoice::Full),
        "med_noeim" => med(
            MedObjective { ablation: Ablation { no_eim: true, ..Ablation::default() }, ..MedObjective::default() },
            SubModelChoice::Sampled(i),
        ),
        "med_nodlw" => med(
            MedObjective { ablation: Ablation { no_dlw: true, ..Ablation::default() }, ..MedObjective::default() },
            SubModelChoice::Sampled(i),
        ),
        "bkd" => {
            let obj = BkdObjective { teacher: &x.teacher, alpha: 0.3, temperature: 1.7, margin: 0.5 };
            let batch = &x.negatives;
            Box::new(move |m, g| obj.evaluate(m, i, pos, batch, g).unwrap().total)
        }
        other => panic!("unknown loss {other}"),
    }
}

/// `(score function, loss, worst error)` over `instances` draws per pair.
pub fn gradient_suite(instances: usize, seed: u64) -> Vec<(String, &'static str, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for f in score_fns() {
        for name in LOSSES {
            let mut worst: f64 = 0.0;
            for _ in 0..instances {
                let x = instance(f, &mut rng);
                worst = worst.max(gradient_error(&x.model, &*loss_fn(name, &x)));
            }
            out.push((format!("{}/{}", f.kind, f.norm), name, worst));
        }
    }
    out
}

/// Filtered rank by sorting every candidate score; ties share the mean of
/// the positions they occupy.
pub fn oracle_rank(m: &CroppableModel<f64>, ds: &Dataset, t: &Triple, side: Side) -> f64 {
    let known: BTreeSet<Triple> = ds.train.iter().chain(&ds.valid).chain(&ds.test).copied().collect();
    let mut cands: Vec<(f64, bool)> = Vec::new();
    for e in 0..m.num_entities() as u32 {
        let c = match side {
            Side::Head => Triple::new(e, t.relation, t.tail),
            Side::Tail => Triple::new(t.head, t.relation, e),
        };
        let gold = c == *t;
        if !gold && known.contains(&c) {
            continue;
        }
        cands.push((score_at(m, m.full_dim(), &c), gold));
    }
    cands.sort_by(|a, b| b.0.total_cmp(&a.0));
    let g = cands.iter().find(|c| c.1).unwrap().0;
    let first = cands.iter().position(|c| c.0 == g).unwrap();
    let ties = cands.iter().filter(|c| c.0 == g).count();
    // positions first+1 ..= first+ties, of which the gold takes the mean
    // over the others: 1 + first + (ties - 1) / 2
    1.0 + first as f64 + (ties - 1) as f64 / 2.0
}

/// Random KG with up to 50 entities and coarse model values so ties occur.
pub fn ranking_case(seed: u64) -> (CroppableModel<f64>, Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ne = rng.random_range(5..=50);
    let nr = rng.random_range(1..=5);
    let mut seen = BTreeSet::new();
    let target = rng.random_range(ne..=3 * ne);
    while seen.len() < target {
        seen.insert(random_triples(1, ne, nr, &mut rng)[0]);
    }
    let all: Vec<Triple> = seen.into_iter().collect();
    let n = all.len();
    let (train, rest) = all.split_at(n * 7 / 10);
    let (valid, test) = rest.split_at(rest.len() / 2);
    let ds = Dataset::from_encoded(ne, nr, train.to_vec(), valid.to_vec(), test.to_vec()).unwrap();
    let kind = KINDS[(seed % 4) as usize];
    let norm = if seed % 3 == 0 { Norm::L1 } else { Norm::L2 };
    let mut m = random_model(ScoreFunction::new(kind, norm), &[2, 4], ne, nr, &mut rng);
    for t in m.tables_mut() {
        for v in t.data_mut() {
            *v = rng.random_range(-1i32..=1) as f64;
        }
    }
    (m, ds)
}

/// Number of disagreements between `rank_triple` and the oracle.
pub fn ranking_mismatches(seed: u64) -> usize {
    let (m, ds) = ranking_case(seed);
    let n = m.num_sub_models();
    let mut bad = 0;
    for t in ds.train.iter().chain(&ds.valid).chain(&ds.test) {
        for side in [Side::Head, Side::Tail] {
            let got = rank_triple(&m, n, t, &ds.filter, side).unwrap();
            if got != oracle_rank(&m, &ds, t, side) {
                bad += 1;
            }
        }
    }
    bad
}
