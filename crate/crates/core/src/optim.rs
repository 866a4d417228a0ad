//! Adam, L-BFGS and the staged training loop.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A smooth scalar function of a flat parameter vector.
pub trait Objective {
    fn value(&mut self, x: &[f64]) -> Result<f64>;

    fn value_grad(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)>;

    /// Loss components `[pde, sb1, sb2, sb3, sb4, t]` of the most recent
    /// evaluation, if the objective has that structure.
    fn components(&self) -> Option<[f64; 6]> {
        None
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

fn check_finite(g: &[f64], what: &str) -> Result<()> {
    match g.iter().position(|v| !v.is_finite()) {
        Some(i) => Err(Error::NonFinite(format!("{what} entry {i} is {}", g[i]))),
        None => Ok(()),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(n: usize, lr: f64) -> AdamState {
        AdamState {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// `θ ← θ − lr·m̂/(√v̂ + ε)` with bias-corrected moments.
    pub fn step(&mut self, theta: &mut [f64], grad: &[f64]) -> Result<()> {
        if theta.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "Adam state for {} parameters, got θ of {} and gradient of {}",
                self.m.len(),
                theta.len(),
                grad.len()
            )));
        }
        check_finite(grad, "gradient")?;
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for i in 0..theta.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let mhat = self.m[i] / c1;
            let vhat = self.v[i] / c2;
            theta[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LineSearch {
    /// Backtracking until sufficient decrease.
    Armijo,
    /// One secant step on the directional derivative; exact on quadratics.
    Secant,
}

/// Result of one L-BFGS iteration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LbfgsStep {
    pub value: f64,
    pub step_length: f64,
    pub trials: usize,
    /// The line search failed and a scaled gradient step was taken.
    pub fallback: bool,
    pub pair_stored: bool,
}

#[derive(Clone, Debug)]
pub struct LbfgsState {
    pub lr: f64,
    pub memory: usize,
    pub c1: f64,
    pub shrink: f64,
    pub max_trials: usize,
    pub line_search: LineSearch,
    history: VecDeque<(Vec<f64>, Vec<f64>)>,
    current: Option<(Vec<f64>, f64, Vec<f64>)>,
}

impl LbfgsState {
    pub fn new(lr: f64) -> LbfgsState {
        LbfgsState {
            lr,
            memory: 10,
            c1: 1e-4,
            shrink: 0.5,
            max_trials: 25,
            line_search: LineSearch::Armijo,
            history: VecDeque::new(),
            current: None,
        }
    }

    pub fn history_len(&self) -> usize {
        self.history.len()
    }

    /// Stored `(s, y)` pairs, oldest first.
    pub fn pairs(&self) -> impl Iterator<Item = (&[f64], &[f64])> {
        self.history.iter().map(|(s, y)| (s.as_slice(), y.as_slice()))
    }

    fn value_grad_at(&mut self, theta: &[f64], obj: &mut dyn Objective) -> Result<(f64, Vec<f64>)> {
        if let Some((x, f, g)) = &self.current {
            if x.as_slice() == theta {
                return Ok((*f, g.clone()));
            }
        }
        let (f, g) = obj.value_grad(theta)?;
        check_finite(&g, "gradient")?;
        Ok((f, g))
    }

    /// `−H·g` by the two-loop recursion, or `−lr·g` without history.
    fn direction(&self, g: &[f64]) -> Vec<f64> {
        let mut q = g.to_vec();
        let Some((s_last, y_last)) = self.history.back() else {
            return g.iter().map(|v| -self.lr * v).collect();
        };
        let mut alphas = Vec::with_capacity(self.history.len());
        for (s, y) in self.history.iter().rev() {
            let rho = 1.0 / dot(y, s);
            let a = rho * dot(s, &q);
            q.iter_mut().zip(y).for_each(|(qi, yi)| *qi -= a * yi);
            alphas.push(a);
        }
        let gamma = dot(s_last, y_last) / dot(y_last, y_last);
        q.iter_mut().for_each(|v| *v *= gamma);
        for ((s, y), a) in self.history.iter().zip(alphas.into_iter().rev()) {
            let rho = 1.0 / dot(y, s);
            let b = rho * dot(y, &q);
            q.iter_mut().zip(s).for_each(|(qi, si)| *qi += (a - b) * si);
        }
        q.iter_mut().for_each(|v| *v = -*v);
        q
    }

    /// One outer iteration: direction, line search, history update.
    pub fn step(&mut self, theta: &mut [f64], obj: &mut dyn Objective) -> Result<LbfgsStep> {
        let (f0, g0) = self.value_grad_at(theta, obj)?;
        let mut d = self.direction(&g0);
        let mut slope = dot(&g0, &d);
        if !(slope < 0.0) {
            self.history.clear();
            d = g0.iter().map(|v| -self.lr * v).collect();
            slope = dot(&g0, &d);
        }
        let trial_point = |alpha: f64| -> Vec<f64> { theta.iter().zip(&d).map(|(t, di)| t + alpha * di).collect() };

        let mut accepted: Option<(f64, Vec<f64>, f64, Vec<f64>)> = None;
        let mut trials = 0;
        if slope < 0.0 {
            let mut alpha = 1.0;
            if self.line_search == LineSearch::Secant {
                let x1 = trial_point(1.0);
                let (_, g1) = obj.value_grad(&x1)?;
                trials += 1;
                let denom = slope - dot(&g1, &d);
                if denom < 0.0 {
                    alpha = slope / denom;
                }
            }
            while trials < self.max_trials + usize::from(self.line_search == LineSearch::Secant) {
                let x = trial_point(alpha);
                let (f, g) = obj.value_grad(&x)?;
                trials += 1;
                if f.is_finite() && g.iter().all(|v| v.is_finite()) && f <= f0 + self.c1 * alpha * slope {
                    accepted = Some((alpha, x, f, g));
                    break;
                }
                alpha *= self.shrink;
            }
        }

        let (alpha, x, f, g, fallback) = match accepted {
            Some((a, x, f, g)) => (a, x, f, g, false),
            None => {
                self.history.clear();
                let scale = self.lr / norm(&g0).max(1.0);
                let x: Vec<f64> = theta.iter().zip(&g0).map(|(t, gi)| t - scale * gi).collect();
                let (f, g) = obj.value_grad(&x)?;
                check_finite(&g, "gradient")?;
                (0.0, x, f, g, true)
            }
        };

        let mut pair_stored = false;
        if !fallback {
            let s: Vec<f64> = x.iter().zip(theta.iter()).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = g.iter().zip(&g0).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > 0.0 && sy.is_finite() {
                if self.history.len() == self.memory {
                    self.history.pop_front();
                }
                self.history.push_back((s, y));
                pair_stored = true;
            }
        }
        theta.copy_from_slice(&x);
        self.current = Some((x, f, g));
        Ok(LbfgsStep {
            value: f,
            step_length: alpha,
            trials,
            fallback,
            pair_stored,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    #[serde(alias = "adam")]
    Adam,
    #[serde(alias = "lbfgs", alias = "L-BFGS")]
    LBFGS,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Stage {
    pub optimizer: OptimizerKind,
    pub iterations: usize,
    pub lr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub stages: Vec<Stage>,
}

impl Schedule {
    fn from_table(t: &[(OptimizerKind, usize, f64)]) -> Schedule {
        Schedule {
            stages: t
                .iter()
                .map(|&(optimizer, iterations, lr)| Stage { optimizer, iterations, lr })
                .collect(),
        }
    }

    /// Two stages of 15K Adam + 5K L-BFGS, at learning rates 1e-4 then 2.5e-5.
    pub fn full() -> Schedule {
        use OptimizerKind::*;
        Self::from_table(&[(Adam, 15_000, 1e-4), (LBFGS, 5000, 1e-4), (Adam, 5000, 2.5e-5), (LBFGS, 5000, 2.5e-5)])
    }

    /// The reduced schedule for a desktop machine.
    pub fn desk() -> Schedule {
        use OptimizerKind::*;
        Self::from_table(&[(Adam, 2000, 1e-3), (LBFGS, 500, 1e-3)])
    }

    pub fn total_iterations(&self) -> usize {
        self.stages.iter().map(|s| s.iterations).sum()
    }

    pub fn validate(&self) -> Result<()> {
        for (i, s) in self.stages.iter().enumerate() {
            if !(s.lr > 0.0 && s.lr.is_finite()) {
                return Err(Error::Config(format!("stage {i}: learning rate {} must be positive", s.lr)));
            }
        }
        Ok(())
    }
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule::full()
    }
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iter: usize,
    pub stage: usize,
    pub optimizer: OptimizerKind,
    pub lr: f64,
    /// `[pde, sb1, sb2, sb3, sb4, t]`, squared.
    pub components: [f64; 6],
    /// Square root of the loss.
    pub total: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainingRecord {
    pub log: Vec<LogRow>,
    pub initial_loss: f64,
    pub final_loss: f64,
    pub lbfgs_fallbacks: usize,
    /// Set when training stopped because the loss blew up.
    pub diverged: Option<String>,
}

/// Loss above this multiple of the initial loss counts as divergence.
pub const DIVERGENCE_FACTOR: f64 = 1e6;

/// Runs the schedule on `theta` in place. Divergence and non-finite
/// gradients stop training early and are reported in the record.
pub fn train(
    theta: &mut [f64],
    obj: &mut dyn Objective,
    schedule: &Schedule,
    mut on_row: impl FnMut(&LogRow),
) -> Result<TrainingRecord> {
    schedule.validate()?;
    let mut rec = TrainingRecord::default();
    let f0 = obj.value(theta)?;
    if !f0.is_finite() {
        return Err(Error::NonFinite(format!("initial loss {f0}")));
    }
    rec.initial_loss = f0;
    let mut iter = 0;
    let mut log = |rec: &mut TrainingRecord, iter: usize, stage: usize, st: &Stage, f: f64, obj: &dyn Objective| {
        let row = LogRow {
            iter,
            stage,
            optimizer: st.optimizer,
            lr: st.lr,
            components: obj.components().unwrap_or([f, 0.0, 0.0, 0.0, 0.0, 0.0]),
            total: f.sqrt(),
        };
        on_row(&row);
        rec.log.push(row);
    };
    let diverged = |f: f64| !f.is_finite() || f > DIVERGENCE_FACTOR * f0;

    'stages: for (si, st) in schedule.stages.iter().enumerate() {
        match st.optimizer {
            OptimizerKind::Adam => {
                let mut adam = AdamState::new(theta.len(), st.lr);
                for _ in 0..st.iterations {
                    let (f, g) = obj.value_grad(theta)?;
                    log(&mut rec, iter, si, st, f, obj);
                    if diverged(f) {
                        rec.diverged = Some(format!("loss {f:e} at iteration {iter} (initial {f0:e})"));
                        break 'stages;
                    }
                    if let Err(e) = adam.step(theta, &g) {
                        rec.diverged = Some(format!("{e} at iteration {iter}"));
                        break 'stages;
                    }
                    iter += 1;
                }
            }
            OptimizerKind::LBFGS => {
                let mut lbfgs = LbfgsState::new(st.lr);
                for _ in 0..st.iterations {
                    let outcome = match lbfgs.step(theta, obj) {
                        Ok(o) => o,
                        Err(e @ Error::NonFinite(_)) => {
                            rec.diverged = Some(format!("{e} at iteration {iter}"));
                            break 'stages;
                        }
                        Err(e) => return Err(e),
                    };
                    rec.lbfgs_fallbacks += usize::from(outcome.fallback);
                    iter += 1;
                    log(&mut rec, iter, si, st, outcome.value, obj);
                    if diverged(outcome.value) {
                        rec.diverged = Some(format!("loss {:e} at iteration {iter} (initial {f0:e})", outcome.value));
                        break 'stages;
                    }
                }
            }
        }
    }
    rec.final_loss = obj.value(theta)?;
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `½ Σ dᵢ xᵢ²`
    struct Quadratic {
        diag: Vec<f64>,
        evals: usize,
    }

    impl Objective for Quadratic {
        fn value(&mut self, x: &[f64]) -> Result<f64> {
            self.evals += 1;
            Ok(0.5 * x.iter().zip(&self.diag).map(|(x, d)| d * x * x).sum::<f64>())
        }
        fn value_grad(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
            let f = self.value(x)?;
            Ok((f, x.iter().zip(&self.diag).map(|(x, d)| d * x).collect()))
        }
    }

    fn quad(diag: &[f64]) -> Quadratic {
        Quadratic {
            diag: diag.to_vec(),
            evals: 0,
        }
    }

    /// `½ xᵀAx` for a dense symmetric positive definite `A`.
    struct Dense(Vec<Vec<f64>>);

    impl Objective for Dense {
        fn value(&mut self, x: &[f64]) -> Result<f64> {
            Ok(0.5 * self.0.iter().zip(x).map(|(row, xi)| xi * dot(row, x)).sum::<f64>())
        }
        fn value_grad(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
            Ok((self.value(x)?, self.0.iter().map(|row| dot(row, x)).collect()))
        }
    }

    #[test]
    fn adam_first_step() {
        let mut s = AdamState::new(1, 0.1);
        let mut theta = [0.0];
        s.step(&mut theta, &[1.0]).unwrap();
        assert!((theta[0] + 0.1 / (1.0 + 1e-8)).abs() < 1e-17);
        assert!((theta[0] + 0.099_999_999_0).abs() < 1e-10);
        assert_eq!(s.steps(), 1);
    }

    #[test]
    fn adam_zero_gradient_is_a_no_op() {
        let mut s = AdamState::new(3, 0.1);
        let mut theta = [1.0, -2.0, 0.5];
        for _ in 0..50 {
            s.step(&mut theta, &[0.0; 3]).unwrap();
        }
        assert_eq!(theta, [1.0, -2.0, 0.5]);
    }

    #[test]
    fn adam_decreases_scalar_quadratic() {
        let mut s = AdamState::new(1, 0.01);
        let mut theta = [1.0];
        let mut prev = 0.5;
        for _ in 0..100 {
            let g = [theta[0]];
            s.step(&mut theta, &g).unwrap();
            let f = 0.5 * theta[0] * theta[0];
            assert!(f < prev);
            prev = f;
        }
    }

    #[test]
    fn adam_step_is_bounded_by_lr() {
        let mut s = AdamState::new(4, 0.05);
        let mut theta = [0.0; 4];
        let grads = [[1e3, -1e-3, 5.0, 0.0], [-1e3, 2e-3, 5.0, 1.0], [7.0, -1.0, -3.0, 1e6]];
        for g in grads {
            let before = theta;
            s.step(&mut theta, &g).unwrap();
            for i in 0..4 {
                // sign flips can exceed lr; the envelope is lr·(1−β₁)/√(1−β₂)
                assert!((theta[i] - before[i]).abs() <= 0.05 * (1.0 - 0.9) / (1.0f64 - 0.999).sqrt() + 1e-12);
            }
        }
        let mut s = AdamState::new(1, 0.05);
        let mut x = [0.0];
        for _ in 0..20 {
            let before = x[0];
            s.step(&mut x, &[3.0]).unwrap();
            assert!((x[0] - before).abs() <= 0.05 * (1.0 + 1e-8));
        }
    }

    #[test]
    fn adam_rejects_non_finite_gradient() {
        let mut s = AdamState::new(1, 0.1);
        assert!(matches!(s.step(&mut [0.0], &[f64::NAN]), Err(Error::NonFinite(_))));
    }

    #[test]
    fn lbfgs_isotropic_quadratic_in_one_step() {
        let mut q = quad(&[1.0, 1.0]);
        let mut s = LbfgsState::new(1e-3);
        s.line_search = LineSearch::Secant;
        let mut x = [1.0, 1.0];
        s.step(&mut x, &mut q).unwrap();
        assert!(x[0].abs() < 1e-12 && x[1].abs() < 1e-12, "{x:?}");
    }

    #[test]
    fn lbfgs_ill_conditioned_quadratic() {
        let mut q = quad(&[1.0, 100.0]);
        let mut s = LbfgsState::new(1e-2);
        let mut x = [1.0, 1.0];
        let mut done = None;
        for it in 1..=30 {
            s.step(&mut x, &mut q).unwrap();
            for (s, y) in s.pairs() {
                assert!(dot(s, y) > 0.0);
            }
            let (_, g) = q.value_grad(&x).unwrap();
            if norm(&g) <= 1e-8 {
                done = Some(it);
                break;
            }
        }
        assert!(done.is_some(), "{x:?}");
    }

    #[test]
    fn lbfgs_finite_termination_on_quadratics() {
        for n in 1..=5 {
            // A = I + vvᵀ + diag(1..n)
            let v: Vec<f64> = (0..n).map(|i| 0.3 * i as f64 + 0.2).collect();
            let a: Vec<Vec<f64>> = (0..n)
                .map(|i| {
                    (0..n)
                        .map(|j| v[i] * v[j] + if i == j { 2.0 + i as f64 } else { 0.0 })
                        .collect()
                })
                .collect();
            let mut obj = Dense(a);
            let mut s = LbfgsState::new(1.0);
            s.line_search = LineSearch::Secant;
            let mut x: Vec<f64> = (0..n).map(|i| 1.0 - 0.4 * i as f64).collect();
            for _ in 0..n {
                s.step(&mut x, &mut obj).unwrap();
            }
            let (_, g) = obj.value_grad(&x).unwrap();
            assert!(norm(&g) < 1e-10, "n={n}: |g|={}", norm(&g));
        }
    }

    #[test]
    fn lbfgs_fallback_on_non_descent() {
        // the reported gradient is never a descent direction for the value
        struct Flat;
        impl Objective for Flat {
            fn value(&mut self, _: &[f64]) -> Result<f64> {
                Ok(1.0)
            }
            fn value_grad(&mut self, _: &[f64]) -> Result<(f64, Vec<f64>)> {
                Ok((1.0, vec![2.0]))
            }
        }
        let mut s = LbfgsState::new(0.1);
        let mut x = [0.0];
        let out = s.step(&mut x, &mut Flat).unwrap();
        assert!(out.fallback);
        assert_eq!(out.trials, 25);
        assert!((x[0] + 0.1).abs() < 1e-15);
        assert_eq!(s.history_len(), 0);
    }

    #[test]
    fn zero_iteration_schedule_keeps_params() {
        let mut q = quad(&[1.0, 2.0]);
        let mut x = [0.3, -0.7];
        let sched = Schedule {
            stages: vec![Stage {
                optimizer: OptimizerKind::Adam,
                iterations: 0,
                lr: 1e-3,
            }],
        };
        let rec = train(&mut x, &mut q, &sched, |_| {}).unwrap();
        assert_eq!(x, [0.3, -0.7]);
        assert!(rec.log.is_empty());
        assert_eq!(rec.initial_loss, rec.final_loss);
    }

    #[test]
    fn training_is_reproducible_and_decreases() {
        let sched = Schedule {
            stages: vec![
                Stage { optimizer: OptimizerKind::Adam, iterations: 50, lr: 1e-2 },
                Stage { optimizer: OptimizerKind::LBFGS, iterations: 20, lr: 1e-2 },
            ],
        };
        let run = || {
            let mut q = quad(&[1.0, 10.0, 3.0]);
            let mut x = [1.0, -1.0, 0.5];
            let rec = train(&mut x, &mut q, &sched, |_| {}).unwrap();
            (x, rec)
        };
        let (x1, r1) = run();
        let (x2, r2) = run();
        assert_eq!(x1, x2);
        assert_eq!(r1, r2);
        assert_eq!(r1.log.len(), 70);
        assert!(r1.final_loss < 1e-12 * r1.initial_loss);
    }

    #[test]
    fn divergence_is_recorded() {
        struct Up;
        impl Objective for Up {
            fn value(&mut self, x: &[f64]) -> Result<f64> {
                Ok((x[0] * 10.0).exp())
            }
            fn value_grad(&mut self, x: &[f64]) -> Result<(f64, Vec<f64>)> {
                // gradient with the wrong sign drives the loss up
                Ok((self.value(x)?, vec![-1.0]))
            }
        }
        let sched = Schedule {
            stages: vec![Stage { optimizer: OptimizerKind::Adam, iterations: 100_000, lr: 0.1 }],
        };
        let mut x = [0.0];
        let rec = train(&mut x, &mut Up, &sched, |_| {}).unwrap();
        assert!(rec.diverged.is_some());
        assert!(rec.log.len() < 100_000);
    }

    #[test]
    fn schedules() {
        assert_eq!(Schedule::full().total_iterations(), 30_000);
        assert_eq!(Schedule::desk().stages[1].optimizer, OptimizerKind::LBFGS);
        let bad = Schedule {
            stages: vec![Stage { optimizer: OptimizerKind::Adam, iterations: 1, lr: 0.0 }],
        };
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
}
