//! Sparse gradient accumulation, Adam and the learning-rate schedule.

use crate::scoring::GradSink;
use crate::store::{CroppableModel, Real};

/// Dense per-table gradient storage that remembers which rows were touched
/// and how many leading columns each touched row received.
#[derive(Debug, Clone)]
pub struct GradBuffer {
    tables: Vec<TableGrad>,
    pub scalars: [f64; 3],
    pub scalar_touched: [bool; 3],
}

#[derive(Debug, Clone)]
struct TableGrad {
    width: usize,
    data: Vec<f64>,
    row_width: Vec<usize>,
    touched: Vec<usize>,
}

impl GradBuffer {
    pub fn for_model<R: Real>(model: &CroppableModel<R>) -> Self {
        Self {
            tables: model
                .tables()
                .iter()
                .map(|t| TableGrad {
                    width: t.width(),
                    data: vec![0.0; t.rows() * t.width()],
                    row_width: vec![0; t.rows()],
                    touched: Vec::new(),
                })
                .collect(),
            scalars: [0.0; 3],
            scalar_touched: [false; 3],
        }
    }

    pub fn clear(&mut self) {
        for t in &mut self.tables {
            for &r in &t.touched {
                let w = t.row_width[r];
                t.data[r * t.width..r * t.width + w].fill(0.0);
                t.row_width[r] = 0;
            }
            t.touched.clear();
        }
        self.scalars = [0.0; 3];
        self.scalar_touched = [false; 3];
    }

    pub fn add_scalar(&mut self, k: usize, g: f64) {
        self.scalars[k] += g;
        self.scalar_touched[k] = true;
    }

    /// Touched rows of a table in first-touch order.
    pub fn touched_rows(&self, table: usize) -> &[usize] {
        &self.tables[table].touched
    }

    /// Gradient of a touched row over its active columns.
    pub fn row(&self, table: usize, row: usize) -> &[f64] {
        let t = &self.tables[table];
        &t.data[row * t.width..row * t.width + t.row_width[row]]
    }

    pub fn num_tables(&self) -> usize {
        self.tables.len()
    }

    /// Whether every accumulated entry (rows and scalars) is finite.
    pub fn is_finite(&self) -> bool {
        self.scalars.iter().all(|v| v.is_finite())
            && (0..self.tables.len()).all(|t| {
                self.touched_rows(t)
                    .iter()
                    .all(|&r| self.row(t, r).iter().all(|v| v.is_finite()))
            })
    }
}

impl GradSink for GradBuffer {
    fn add(&mut self, table: usize, row: usize, coeff: f64, grad: &[f64]) {
        let t = &mut self.tables[table];
        if t.row_width[row] == 0 {
            t.touched.push(row);
        }
        t.row_width[row] = t.row_width[row].max(grad.len());
        let base = row * t.width;
        for (a, g) in t.data[base..base + grad.len()].iter_mut().zip(grad) {
            *a += coeff * g;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with lazy (row-sparse) moment updates: only rows and columns that
/// received a non-zero gradient this step move. Bias correction uses the
/// global step count.
#[derive(Debug, Clone)]
pub struct Adam<R: Real> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<R>>,
    v: Vec<Vec<R>>,
    scalar_m: [f64; 3],
    scalar_v: [f64; 3],
}

impl<R: Real> Adam<R> {
    pub fn new(model: &CroppableModel<R>, config: AdamConfig) -> Self {
        let zeros = || -> Vec<Vec<R>> {
            model
                .tables()
                .iter()
                .map(|t| vec![R::default(); t.data().len()])
                .collect()
        };
        Self {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
            scalar_m: [0.0; 3],
            scalar_v: [0.0; 3],
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn first_moment(&self, table: usize) -> &[R] {
        &self.m[table]
    }

    pub fn second_moment(&self, table: usize) -> &[R] {
        &self.v[table]
    }

    pub fn update(&mut self, model: &mut CroppableModel<R>, grads: &GradBuffer, lr: f64) {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step.min(i32::MAX as u64) as i32);
        let bc2 = 1.0 - beta2.powi(self.step.min(i32::MAX as u64) as i32);
        for (ti, table) in model.tables_mut().iter_mut().enumerate() {
            let width = table.width();
            let (m, v) = (&mut self.m[ti], &mut self.v[ti]);
            let data = table.data_mut();
            for &row in grads.touched_rows(ti) {
                let g = grads.row(ti, row);
                if g.iter().all(|x| *x == 0.0) {
                    continue;
                }
                let base = row * width;
                for (c, &gc) in g.iter().enumerate() {
                    let k = base + c;
                    let mk = beta1 * m[k].to_f64() + (1.0 - beta1) * gc;
                    let vk = beta2 * v[k].to_f64() + (1.0 - beta2) * gc * gc;
                    m[k] = R::from_f64(mk);
                    v[k] = R::from_f64(vk);
                    let mk = m[k].to_f64();
                    let vk = v[k].to_f64();
                    let delta = lr * (mk / bc1) / ((vk / bc2).sqrt() + eps);
                    data[k] = R::from_f64(data[k].to_f64() - delta);
                }
            }
        }
        for k in 0..3 {
            let g = grads.scalars[k];
            if !grads.scalar_touched[k] || g == 0.0 {
                continue;
            }
            self.scalar_m[k] = beta1 * self.scalar_m[k] + (1.0 - beta1) * g;
            self.scalar_v[k] = beta2 * self.scalar_v[k] + (1.0 - beta2) * g * g;
            let delta = lr * (self.scalar_m[k] / bc1) / ((self.scalar_v[k] / bc2).sqrt() + eps);
            let w = model.scalars.get_mut(k);
            *w = R::from_f64(w.to_f64() - delta);
        }
    }
}

/// Linear decay from `init_lr` at step 0 to zero at `max_steps`.
pub fn lr_schedule(step: u64, max_steps: u64, init_lr: f64) -> f64 {
    if max_steps == 0 {
        return init_lr;
    }
    (init_lr * (1.0 - step as f64 / max_steps as f64)).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::store::{DimensionSchedule, ScoreKind};

    fn model() -> CroppableModel<f64> {
        CroppableModel::zeros(
            ScoreKind::TransE.into(),
            DimensionSchedule::new(vec![2, 4]).unwrap(),
            3,
            1,
        )
        .unwrap()
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut m = model();
        let mut g = GradBuffer::for_model(&m);
        g.add(0, 1, 1.0, &[1.0, 1.0]);
        let mut adam = Adam::new(&m, AdamConfig::default());
        adam.update(&mut m, &g, 0.001);
        let expected = -0.001 * (1.0 / (1.0 + 1e-8));
        assert!((m.table(0).get(1, 0) - expected).abs() < 1e-15);
        assert!((m.table(0).get(1, 0) + 0.001).abs() < 1e-9);
        // columns past the active width are untouched
        assert_eq!(m.table(0).get(1, 2), 0.0);
        assert_eq!(m.table(0).get(0, 0), 0.0);
    }

    #[test]
    fn zero_gradient_rows_do_not_move() {
        let mut m = model();
        let mut g = GradBuffer::for_model(&m);
        g.add(0, 0, 1.0, &[0.5, -0.5]);
        let mut adam = Adam::new(&m, AdamConfig::default());
        adam.update(&mut m, &g, 0.01);
        let snapshot = m.clone();
        g.clear();
        g.add(0, 0, 1.0, &[0.0, 0.0]);
        g.add_scalar(2, 0.0);
        adam.update(&mut m, &g, 0.01);
        assert_eq!(m, snapshot);
    }

    #[test]
    fn clear_resets_touched_state() {
        let m = model();
        let mut g = GradBuffer::for_model(&m);
        g.add(0, 2, 2.0, &[1.0, 3.0, 5.0]);
        g.add(0, 2, 1.0, &[1.0]);
        assert_eq!(g.row(0, 2), &[3.0, 6.0, 10.0]);
        g.clear();
        assert!(g.touched_rows(0).is_empty());
        g.add(0, 2, 1.0, &[1.0]);
        assert_eq!(g.row(0, 2), &[1.0]);
    }

    #[test]
    fn scalars_update_when_touched() {
        let mut m = model();
        let mut g = GradBuffer::for_model(&m);
        g.add_scalar(0, 2.0);
        let mut adam = Adam::new(&m, AdamConfig::default());
        adam.update(&mut m, &g, 0.1);
        assert!((m.scalars.w1 - 0.9).abs() < 1e-7);
        assert_eq!(m.scalars.w2, 1.0);
    }

    #[test]
    fn linear_decay() {
        assert_eq!(lr_schedule(0, 100, 0.01), 0.01);
        assert_eq!(lr_schedule(50, 100, 0.01), 0.005);
        assert_eq!(lr_schedule(100, 100, 0.01), 0.0);
        assert_eq!(lr_schedule(150, 100, 0.01), 0.0);
    }
}
