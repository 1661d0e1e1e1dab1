//! Triple scores for any prefix width, with analytic gradients.
//!
//! Scores are accumulated in `f64` regardless of storage type. Higher scores
//! mean more plausible triples:
//!
//! | kind   | score |
//! |--------|-------|
//! | TransE | `-‖h + r - t‖` |
//! | SimplE | `½(⟨hᴴ, r, tᵀ⟩ + ⟨tᴴ, r⁻¹, hᵀ⟩)` |
//! | RotatE | `-‖h ∘ r - t‖`, `r = e^{iθ}` |
//! | PairRE | `-‖h ∘ rᴴ - t ∘ rᵀ‖` |

use crate::data::{check_ids, Triple};
use crate::error::Result;
use crate::store::{CroppableModel, Norm, Real, ScoreKind};

pub(crate) mod slot {
    pub const ENTITY: usize = 0;
    pub const RELATION: usize = 1;

    pub const S_ENTITY_HEAD: usize = 0;
    pub const S_ENTITY_TAIL: usize = 1;
    pub const S_RELATION: usize = 2;
    pub const S_RELATION_INV: usize = 3;

    pub const R_ENTITY_RE: usize = 0;
    pub const R_ENTITY_IM: usize = 1;
    pub const R_PHASE: usize = 2;

    pub const P_ENTITY: usize = 0;
    pub const P_RELATION_H: usize = 1;
    pub const P_RELATION_T: usize = 2;
}

/// Receives `coeff · ∂s/∂row` for every parameter row a score reads.
pub trait GradSink {
    fn add(&mut self, table: usize, row: usize, coeff: f64, grad: &[f64]);
}

/// Partial derivative of a score with respect to one parameter row prefix.
#[derive(Debug, Clone, PartialEq)]
pub struct Partial {
    pub table: usize,
    pub row: usize,
    pub grad: Vec<f64>,
}

/// A score together with its partial derivatives.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScoreGrad {
    pub value: f64,
    pub partials: Vec<Partial>,
}

impl ScoreGrad {
    pub fn partial(&self, table: usize, row: usize) -> Option<&[f64]> {
        self.partials
            .iter()
            .find(|p| p.table == table && p.row == row)
            .map(|p| p.grad.as_slice())
    }
}

impl GradSink for ScoreGrad {
    fn add(&mut self, table: usize, row: usize, coeff: f64, grad: &[f64]) {
        if let Some(p) = self
            .partials
            .iter_mut()
            .find(|p| p.table == table && p.row == row)
        {
            for (a, g) in p.grad.iter_mut().zip(grad) {
                *a += coeff * g;
            }
        } else {
            self.partials.push(Partial {
                table,
                row,
                grad: grad.iter().map(|g| coeff * g).collect(),
            });
        }
    }
}

/// Reusable per-thread buffers for gradient evaluation.
#[derive(Debug, Default, Clone)]
pub struct Scratch {
    bufs: [Vec<f64>; 6],
}

impl Scratch {
    fn prepare(&mut self, width: usize) -> &mut [Vec<f64>; 6] {
        for b in &mut self.bufs {
            b.clear();
            b.resize(width, 0.0);
        }
        &mut self.bufs
    }
}

/// Score of `triple` under sub-model `i` (1-based).
pub fn score<R: Real>(model: &CroppableModel<R>, i: usize, triple: &Triple) -> Result<f64> {
    let width = model.schedule().dim(i)?;
    check_ids(triple, model.num_entities(), model.num_relations())?;
    Ok(score_at(model, width, triple))
}

/// Score and partial derivatives under sub-model `i`.
pub fn score_grad<R: Real>(model: &CroppableModel<R>, i: usize, triple: &Triple) -> Result<ScoreGrad> {
    let width = model.schedule().dim(i)?;
    check_ids(triple, model.num_entities(), model.num_relations())?;
    let mut out = ScoreGrad::default();
    let mut scratch = Scratch::default();
    out.value = backprop(model, width, triple, 1.0, &mut out, &mut scratch);
    Ok(out)
}

/// Order-preserving batch of scores under sub-model `i`.
pub fn batch_score<R: Real>(model: &CroppableModel<R>, i: usize, triples: &[Triple]) -> Result<Vec<f64>> {
    let width = model.schedule().dim(i)?;
    for t in triples {
        check_ids(t, model.num_entities(), model.num_relations())?;
    }
    Ok(triples.iter().map(|t| score_at(model, width, t)).collect())
}

#[inline]
fn r<R: Real>(model: &CroppableModel<R>, table: usize, row: u32, width: usize) -> &[R] {
    &model.table(table).row(row as usize)[..width]
}

/// Score at an arbitrary prefix width; ids must already be validated.
pub fn score_at<R: Real>(model: &CroppableModel<R>, width: usize, t: &Triple) -> f64 {
    let norm = model.score_fn().norm;
    match model.kind() {
        ScoreKind::TransE => {
            let h = r(model, slot::ENTITY, t.head, width);
            let rel = r(model, slot::RELATION, t.relation, width);
            let tl = r(model, slot::ENTITY, t.tail, width);
            let mut acc = 0.0;
            for j in 0..width {
                let d = h[j].to_f64() + rel[j].to_f64() - tl[j].to_f64();
                acc += dist_term(norm, d);
            }
            finish(norm, acc)
        }
        ScoreKind::PairRE => {
            let h = r(model, slot::P_ENTITY, t.head, width);
            let rh = r(model, slot::P_RELATION_H, t.relation, width);
            let rt = r(model, slot::P_RELATION_T, t.relation, width);
            let tl = r(model, slot::P_ENTITY, t.tail, width);
            let mut acc = 0.0;
            for j in 0..width {
                let d = h[j].to_f64() * rh[j].to_f64() - tl[j].to_f64() * rt[j].to_f64();
                acc += dist_term(norm, d);
            }
            finish(norm, acc)
        }
        ScoreKind::RotatE => {
            let hre = r(model, slot::R_ENTITY_RE, t.head, width);
            let him = r(model, slot::R_ENTITY_IM, t.head, width);
            let ph = r(model, slot::R_PHASE, t.relation, width);
            let tre = r(model, slot::R_ENTITY_RE, t.tail, width);
            let tim = r(model, slot::R_ENTITY_IM, t.tail, width);
            let mut acc = 0.0;
            for j in 0..width {
                let (re, im) = rotate_residual(
                    hre[j].to_f64(),
                    him[j].to_f64(),
                    ph[j].to_f64(),
                    tre[j].to_f64(),
                    tim[j].to_f64(),
                );
                acc += complex_term(norm, re, im);
            }
            finish(norm, acc)
        }
        ScoreKind::SimplE => {
            let hh = r(model, slot::S_ENTITY_HEAD, t.head, width);
            let ht = r(model, slot::S_ENTITY_TAIL, t.head, width);
            let th = r(model, slot::S_ENTITY_HEAD, t.tail, width);
            let tt = r(model, slot::S_ENTITY_TAIL, t.tail, width);
            let rel = r(model, slot::S_RELATION, t.relation, width);
            let inv = r(model, slot::S_RELATION_INV, t.relation, width);
            let mut fwd = 0.0;
            let mut bwd = 0.0;
            for j in 0..width {
                fwd += hh[j].to_f64() * rel[j].to_f64() * tt[j].to_f64();
                bwd += th[j].to_f64() * inv[j].to_f64() * ht[j].to_f64();
            }
            0.5 * (fwd + bwd)
        }
    }
}

#[inline]
fn dist_term(norm: Norm, d: f64) -> f64 {
    match norm {
        Norm::L2 => d * d,
        Norm::L1 => d.abs(),
    }
}

#[inline]
fn complex_term(norm: Norm, re: f64, im: f64) -> f64 {
    match norm {
        Norm::L2 => re * re + im * im,
        Norm::L1 => (re * re + im * im).sqrt(),
    }
}

#[inline]
fn finish(norm: Norm, acc: f64) -> f64 {
    match norm {
        Norm::L2 => -acc.sqrt(),
        Norm::L1 => -acc,
    }
}

#[inline]
fn rotate_residual(hre: f64, him: f64, phase: f64, tre: f64, tim: f64) -> (f64, f64) {
    let (s, c) = phase.sin_cos();
    (hre * c - him * s - tre, hre * s + him * c - tim)
}

/// `∂s/∂ρ` for `s = -‖ρ‖`; the L1 subgradient at zero is zero.
fn dist_grad(norm: Norm, resid: &[f64], acc: f64, out: &mut [f64]) {
    match norm {
        Norm::L2 => {
            let n = acc.sqrt();
            if n > 0.0 {
                for (o, d) in out.iter_mut().zip(resid) {
                    *o = -d / n;
                }
            } else {
                out.fill(0.0);
            }
        }
        Norm::L1 => {
            for (o, d) in out.iter_mut().zip(resid) {
                *o = if *d > 0.0 {
                    -1.0
                } else if *d < 0.0 {
                    1.0
                } else {
                    0.0
                };
            }
        }
    }
}

/// Evaluate the score at `width` and push `coeff · ∂s/∂θ` into `sink`.
/// Returns the score, bit-identical to [`score_at`].
pub fn backprop<R: Real, S: GradSink + ?Sized>(
    model: &CroppableModel<R>,
    width: usize,
    t: &Triple,
    coeff: f64,
    sink: &mut S,
    scratch: &mut Scratch,
) -> f64 {
    let norm = model.score_fn().norm;
    let (h, rl, tl) = (t.head as usize, t.relation as usize, t.tail as usize);
    let b = scratch.prepare(width);
    match model.kind() {
        ScoreKind::TransE => {
            let he = r(model, slot::ENTITY, t.head, width);
            let re = r(model, slot::RELATION, t.relation, width);
            let te = r(model, slot::ENTITY, t.tail, width);
            let [resid, g, ..] = b;
            let mut acc = 0.0;
            for j in 0..width {
                let d = he[j].to_f64() + re[j].to_f64() - te[j].to_f64();
                resid[j] = d;
                acc += dist_term(norm, d);
            }
            dist_grad(norm, resid, acc, g);
            sink.add(slot::ENTITY, h, coeff, g);
            sink.add(slot::RELATION, rl, coeff, g);
            sink.add(slot::ENTITY, tl, -coeff, g);
            finish(norm, acc)
        }
        ScoreKind::PairRE => {
            let he = r(model, slot::P_ENTITY, t.head, width);
            let rh = r(model, slot::P_RELATION_H, t.relation, width);
            let rt = r(model, slot::P_RELATION_T, t.relation, width);
            let te = r(model, slot::P_ENTITY, t.tail, width);
            let [resid, g, gh, grh, gt, grt] = b;
            let mut acc = 0.0;
            for j in 0..width {
                let d = he[j].to_f64() * rh[j].to_f64() - te[j].to_f64() * rt[j].to_f64();
                resid[j] = d;
                acc += dist_term(norm, d);
            }
            dist_grad(norm, resid, acc, g);
            for j in 0..width {
                gh[j] = g[j] * rh[j].to_f64();
                grh[j] = g[j] * he[j].to_f64();
                gt[j] = -g[j] * rt[j].to_f64();
                grt[j] = -g[j] * te[j].to_f64();
            }
            sink.add(slot::P_ENTITY, h, coeff, gh);
            sink.add(slot::P_RELATION_H, rl, coeff, grh);
            sink.add(slot::P_ENTITY, tl, coeff, gt);
            sink.add(slot::P_RELATION_T, rl, coeff, grt);
            finish(norm, acc)
        }
        ScoreKind::RotatE => {
            let hre = r(model, slot::R_ENTITY_RE, t.head, width);
            let him = r(model, slot::R_ENTITY_IM, t.head, width);
            let ph = r(model, slot::R_PHASE, t.relation, width);
            let tre = r(model, slot::R_ENTITY_RE, t.tail, width);
            let tim = r(model, slot::R_ENTITY_IM, t.tail, width);
            let [res_re, res_im, g_hre, g_him, g_ph, g_mod] = b;
            let mut acc = 0.0;
            for j in 0..width {
                let (re, im) = rotate_residual(
                    hre[j].to_f64(),
                    him[j].to_f64(),
                    ph[j].to_f64(),
                    tre[j].to_f64(),
                    tim[j].to_f64(),
                );
                res_re[j] = re;
                res_im[j] = im;
                acc += complex_term(norm, re, im);
            }
            // g_mod holds the per-coordinate scale so that ∂s/∂ρ = -scale·ρ
            match norm {
                Norm::L2 => {
                    let n = acc.sqrt();
                    g_mod.fill(if n > 0.0 { 1.0 / n } else { 0.0 });
                }
                Norm::L1 => {
                    for j in 0..width {
                        let m = (res_re[j] * res_re[j] + res_im[j] * res_im[j]).sqrt();
                        g_mod[j] = if m > 0.0 { 1.0 / m } else { 0.0 };
                    }
                }
            }
            for j in 0..width {
                let gre = -g_mod[j] * res_re[j];
                let gim = -g_mod[j] * res_im[j];
                let (s, c) = ph[j].to_f64().sin_cos();
                let (a, bb) = (hre[j].to_f64(), him[j].to_f64());
                g_hre[j] = gre * c + gim * s;
                g_him[j] = -gre * s + gim * c;
                g_ph[j] = gre * (-a * s - bb * c) + gim * (a * c - bb * s);
                // reuse the residual buffers for the tail partials
                res_re[j] = -gre;
                res_im[j] = -gim;
            }
            sink.add(slot::R_ENTITY_RE, h, coeff, g_hre);
            sink.add(slot::R_ENTITY_IM, h, coeff, g_him);
            sink.add(slot::R_PHASE, rl, coeff, g_ph);
            sink.add(slot::R_ENTITY_RE, tl, coeff, res_re);
            sink.add(slot::R_ENTITY_IM, tl, coeff, res_im);
            finish(norm, acc)
        }
        ScoreKind::SimplE => {
            let hh = r(model, slot::S_ENTITY_HEAD, t.head, width);
            let ht = r(model, slot::S_ENTITY_TAIL, t.head, width);
            let th = r(model, slot::S_ENTITY_HEAD, t.tail, width);
            let tt = r(model, slot::S_ENTITY_TAIL, t.tail, width);
            let rel = r(model, slot::S_RELATION, t.relation, width);
            let inv = r(model, slot::S_RELATION_INV, t.relation, width);
            let [g_hh, g_tt, g_rel, g_th, g_inv, g_ht] = b;
            let mut fwd = 0.0;
            let mut bwd = 0.0;
            for j in 0..width {
                let (a, rr, c) = (hh[j].to_f64(), rel[j].to_f64(), tt[j].to_f64());
                let (x, ri, y) = (th[j].to_f64(), inv[j].to_f64(), ht[j].to_f64());
                fwd += a * rr * c;
                bwd += x * ri * y;
                g_hh[j] = 0.5 * rr * c;
                g_tt[j] = 0.5 * a * rr;
                g_rel[j] = 0.5 * a * c;
                g_th[j] = 0.5 * ri * y;
                g_inv[j] = 0.5 * x * y;
                g_ht[j] = 0.5 * x * ri;
            }
            sink.add(slot::S_ENTITY_HEAD, h, coeff, g_hh);
            sink.add(slot::S_ENTITY_TAIL, tl, coeff, g_tt);
            sink.add(slot::S_RELATION, rl, coeff, g_rel);
            sink.add(slot::S_ENTITY_HEAD, tl, coeff, g_th);
            sink.add(slot::S_RELATION_INV, rl, coeff, g_inv);
            sink.add(slot::S_ENTITY_TAIL, h, coeff, g_ht);
            0.5 * (fwd + bwd)
        }
    }
}
