//! Training loss, generalization error and total L² error.
//!
//! Every component is a quadrature approximation of `∫ ‖R‖²` over its
//! domain: the interior residual over `[0,2]² × [0,T]`, each of the four
//! periodic mismatches over `{xᵢ = 0} × [0,T]` (both axes summed), and the
//! initial residual over `[0,2]²`. All components carry weight one.

use serde::{Deserialize, Serialize};

use crate::autodiff::{residual_sums, Jet, JetAdjoint, ResidualTerm, SpaceTime};
use crate::error::{Error, Result};
use crate::network::{MlpParams, ParamGradient};
use crate::optim::Objective;
use crate::physics::{
    boundary_residual_jets, boundary_residual_pullback, exact_solution, forcing, opposite_point,
    pde_residual_jets, pde_residual_pullback, FieldOracle, Problem, DIM,
};
use crate::quadrature::{KahanSum, QuadKind, QuadSet};

/// Requested node counts. `m_sb` is per boundary residual and is split
/// evenly between the two face families.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SetSizes {
    pub m_int: usize,
    pub m_sb: usize,
    pub m_t: usize,
}

impl Default for SetSizes {
    fn default() -> Self {
        SetSizes {
            m_int: 10_000,
            m_sb: 1000,
            m_t: 1000,
        }
    }
}

/// The quadrature sets of one training run.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSets {
    pub interior: QuadSet,
    pub boundary: [QuadSet; DIM],
    pub initial: QuadSet,
}

impl TrainingSets {
    pub fn midpoint(sizes: SetSizes, horizon: f64) -> Result<TrainingSets> {
        let per_axis = (sizes.m_sb / DIM).max(1);
        Ok(TrainingSets {
            interior: QuadSet::midpoint_interior(sizes.m_int, horizon)?,
            boundary: [
                QuadSet::midpoint_boundary(per_axis, 0, horizon)?,
                QuadSet::midpoint_boundary(per_axis, 1, horizon)?,
            ],
            initial: QuadSet::midpoint_initial(sizes.m_t)?,
        })
    }

    pub fn uniform_random(sizes: SetSizes, horizon: f64, seed: u64) -> Result<TrainingSets> {
        let per_axis = (sizes.m_sb / DIM).max(1);
        Ok(TrainingSets {
            interior: QuadSet::uniform_random(QuadKind::Interior, sizes.m_int, horizon, seed)?,
            boundary: [
                QuadSet::uniform_random(QuadKind::Boundary { axis: 0 }, per_axis, horizon, seed + 1)?,
                QuadSet::uniform_random(QuadKind::Boundary { axis: 1 }, per_axis, horizon, seed + 2)?,
            ],
            initial: QuadSet::uniform_random(QuadKind::Initial, sizes.m_t, horizon, seed + 3)?,
        })
    }

    pub fn refined(&self, factor: usize) -> Result<TrainingSets> {
        Ok(TrainingSets {
            interior: self.interior.refined(factor)?,
            boundary: [self.boundary[0].refined(factor)?, self.boundary[1].refined(factor)?],
            initial: self.initial.refined(factor)?,
        })
    }

    /// Actual node counts; the boundary count is per residual (both axes).
    pub fn actual_sizes(&self) -> SetSizes {
        SetSizes {
            m_int: self.interior.len(),
            m_sb: self.boundary.iter().map(QuadSet::len).sum(),
            m_t: self.initial.len(),
        }
    }
}

/// Squared loss components. `total2` is their sum and `total` its root.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub e_pde2: f64,
    pub e_sb2: [f64; 4],
    pub e_t2: f64,
    /// Boundary components split by face family.
    pub e_sb2_axis: [[f64; 4]; DIM],
    pub total2: f64,
    pub total: f64,
}

impl LossBreakdown {
    fn assemble(pde: &[f64], boundary: [&[f64]; DIM], initial: &[f64]) -> LossBreakdown {
        let mut out = LossBreakdown {
            e_pde2: pde.iter().sum(),
            e_t2: initial.iter().sum(),
            ..Default::default()
        };
        for (axis, sums) in boundary.iter().enumerate() {
            for k in 0..4 {
                let v: f64 = sums[k * DIM..(k + 1) * DIM].iter().sum();
                out.e_sb2_axis[axis][k] = v;
                out.e_sb2[k] += v;
            }
        }
        let mut total = KahanSum::default();
        total.add(out.e_pde2);
        out.e_sb2.iter().for_each(|&v| total.add(v));
        total.add(out.e_t2);
        out.total2 = total.value();
        out.total = out.total2.sqrt();
        out
    }

    /// The components in the order PDE, sb1..sb4, t.
    pub fn components(&self) -> [f64; 6] {
        [
            self.e_pde2,
            self.e_sb2[0],
            self.e_sb2[1],
            self.e_sb2[2],
            self.e_sb2[3],
            self.e_t2,
        ]
    }
}

pub struct PdeTerm {
    point: [SpaceTime; 1],
    forcing: [f64; 2],
    lambda: f64,
    weight: f64,
}

impl ResidualTerm for PdeTerm {
    fn points(&self) -> &[SpaceTime] {
        &self.point
    }
    fn residual_len(&self) -> usize {
        DIM
    }
    fn weight(&self) -> f64 {
        self.weight
    }
    fn eval(&self, jets: &[Jet], out: &mut [f64]) {
        out.copy_from_slice(&pde_residual_jets(jets, self.lambda, self.forcing));
    }
    fn pullback(&self, jets: &[Jet], rbar: &[f64], adj: &mut [JetAdjoint]) {
        pde_residual_pullback(jets, self.lambda, rbar, adj);
    }
}

pub struct BoundaryTerm {
    points: [SpaceTime; 2],
    axis: usize,
    weight: f64,
}

impl ResidualTerm for BoundaryTerm {
    fn points(&self) -> &[SpaceTime] {
        &self.points
    }
    fn residual_len(&self) -> usize {
        4 * DIM
    }
    fn weight(&self) -> f64 {
        self.weight
    }
    fn eval(&self, jets: &[Jet], out: &mut [f64]) {
        out.copy_from_slice(&boundary_residual_jets(&jets[..DIM], &jets[DIM..], self.axis));
    }
    fn pullback(&self, _jets: &[Jet], rbar: &[f64], adj: &mut [JetAdjoint]) {
        boundary_residual_pullback(self.axis, rbar, adj);
    }
}

pub struct InitialTerm {
    point: [SpaceTime; 1],
    target: [f64; 2],
    weight: f64,
}

impl ResidualTerm for InitialTerm {
    fn points(&self) -> &[SpaceTime] {
        &self.point
    }
    fn residual_len(&self) -> usize {
        DIM
    }
    fn weight(&self) -> f64 {
        self.weight
    }
    fn eval(&self, jets: &[Jet], out: &mut [f64]) {
        for c in 0..DIM {
            out[c] = jets[c].value - self.target[c];
        }
    }
    fn pullback(&self, _jets: &[Jet], rbar: &[f64], adj: &mut [JetAdjoint]) {
        for c in 0..DIM {
            adj[c].value += rbar[c];
        }
    }
}

/// Derivative orders needed by each residual kind.
const PDE_ORDER: usize = 4;
const BOUNDARY_ORDER: usize = 3;
const INITIAL_ORDER: usize = 0;

/// The residual terms of a problem on fixed quadrature sets, i.e. the
/// squared training loss as a function of the network parameters.
pub struct TrainingObjective {
    widths: Vec<usize>,
    pde: Vec<PdeTerm>,
    boundary: [Vec<BoundaryTerm>; DIM],
    initial: Vec<InitialTerm>,
    evaluations: usize,
    last: Option<LossBreakdown>,
}

impl TrainingObjective {
    pub fn new(problem: &Problem, sets: &TrainingSets, widths: &[usize]) -> Result<TrainingObjective> {
        if widths.first() != Some(&3) || widths.last() != Some(&DIM) {
            return Err(Error::ShapeMismatch(format!(
                "velocity networks map (x, y, t) to {DIM} components, got widths {widths:?}"
            )));
        }
        let q = &sets.interior;
        let w_int = q.measure() * q.weight();
        let pde = (0..q.len())
            .map(|m| {
                let p = q.space_time(m);
                PdeTerm {
                    point: [p],
                    forcing: problem.forcing_at([p[0], p[1]], p[2]),
                    lambda: problem.lambda,
                    weight: w_int,
                }
            })
            .collect();
        let boundary = [0, 1].map(|axis| {
            let q = &sets.boundary[axis];
            let w = q.measure() * q.weight();
            (0..q.len())
                .map(|m| {
                    let p = q.space_time(m);
                    let y = opposite_point([p[0], p[1]], axis);
                    BoundaryTerm {
                        points: [p, [y[0], y[1], p[2]]],
                        axis,
                        weight: w,
                    }
                })
                .collect()
        });
        let q = &sets.initial;
        let w_t = q.measure() * q.weight();
        let initial = (0..q.len())
            .map(|m| {
                let p = q.space_time(m);
                InitialTerm {
                    point: [p],
                    target: exact_solution(p[0], p[1], 0.0, 0.0),
                    weight: w_t,
                }
            })
            .collect();
        Ok(TrainingObjective {
            widths: widths.to_vec(),
            pde,
            boundary,
            initial,
            evaluations: 0,
            last: None,
        })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    /// Number of loss evaluations so far.
    pub fn evaluations(&self) -> usize {
        self.evaluations
    }

    /// Loss components and, on request, the gradient of `total2`.
    pub fn evaluate(
        &mut self,
        params: &MlpParams,
        with_gradient: bool,
    ) -> Result<(LossBreakdown, Option<ParamGradient>)> {
        if params.widths() != self.widths.as_slice() {
            return Err(Error::ShapeMismatch(format!(
                "parameters for widths {:?}, objective built for {:?}",
                params.widths(),
                self.widths
            )));
        }
        self.evaluations += 1;
        let mut grad: Option<ParamGradient> = None;
        let mut merge = |g: Option<ParamGradient>| {
            if let Some(g) = g {
                match grad.as_mut() {
                    Some(acc) => acc.add_assign(&g),
                    None => grad = Some(g),
                }
            }
        };
        let (pde, g) = residual_sums(params, &self.pde, PDE_ORDER, with_gradient)?;
        merge(g);
        let (sb0, g) = residual_sums(params, &self.boundary[0], BOUNDARY_ORDER, with_gradient)?;
        merge(g);
        let (sb1, g) = residual_sums(params, &self.boundary[1], BOUNDARY_ORDER, with_gradient)?;
        merge(g);
        let (init, g) = residual_sums(params, &self.initial, INITIAL_ORDER, with_gradient)?;
        merge(g);
        let breakdown = LossBreakdown::assemble(
            &pde.per_entry,
            [&sb0.per_entry, &sb1.per_entry],
            &init.per_entry,
        );
        self.last = Some(breakdown);
        Ok((breakdown, grad))
    }

    fn params_from(&self, theta: &[f64]) -> Result<MlpParams> {
        MlpParams::from_flat(&self.widths, theta.to_vec())
    }
}

impl Objective for TrainingObjective {
    fn value(&mut self, theta: &[f64]) -> Result<f64> {
        let p = self.params_from(theta)?;
        Ok(self.evaluate(&p, false)?.0.total2)
    }

    fn value_grad(&mut self, theta: &[f64]) -> Result<(f64, Vec<f64>)> {
        let p = self.params_from(theta)?;
        let (b, g) = self.evaluate(&p, true)?;
        Ok((b.total2, g.expect("gradient requested").into_vec()))
    }

    fn components(&self) -> Option<[f64; 6]> {
        self.last.map(|b| b.components())
    }
}

const ORACLE_TERMS_PER_CHUNK: usize = 4096;

fn oracle_sums<T: ResidualTerm>(oracle: &dyn FieldOracle, terms: &[T]) -> Result<Vec<f64>> {
    let rlen = terms.first().ok_or(Error::EmptyBatch)?.residual_len();
    let mut sums = vec![KahanSum::default(); rlen];
    let mut r = vec![0.0; rlen];
    for chunk in terms.chunks(ORACLE_TERMS_PER_CHUNK) {
        let points: Vec<SpaceTime> = chunk.iter().flat_map(|t| t.points().iter().copied()).collect();
        let jets: Vec<Jet> = oracle.jets_batch(&points)?.into_iter().flatten().collect();
        let mut offset = 0;
        for term in chunk {
            let span = term.points().len() * DIM;
            term.eval(&jets[offset..offset + span], &mut r);
            offset += span;
            for (i, ri) in r.iter().enumerate() {
                if !ri.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "residual entry {i} at {:?}",
                        term.points()
                    )));
                }
                sums[i].add(term.weight() * ri * ri);
            }
        }
    }
    Ok(sums.iter().map(KahanSum::value).collect())
}

/// Training loss components of any field on the given sets.
pub fn training_loss(oracle: &dyn FieldOracle, problem: &Problem, sets: &TrainingSets) -> Result<LossBreakdown> {
    let obj = TrainingObjective::new(problem, sets, &[3, 1, DIM])?;
    let pde = oracle_sums(oracle, &obj.pde)?;
    let sb0 = oracle_sums(oracle, &obj.boundary[0])?;
    let sb1 = oracle_sums(oracle, &obj.boundary[1])?;
    let init = oracle_sums(oracle, &obj.initial)?;
    Ok(LossBreakdown::assemble(&pde, [&sb0, &sb1], &init))
}

/// The same components on sets refined `fine_factor` times per axis.
pub fn generalization_error(
    oracle: &dyn FieldOracle,
    problem: &Problem,
    sets: &TrainingSets,
    fine_factor: usize,
) -> Result<LossBreakdown> {
    training_loss(oracle, problem, &sets.refined(fine_factor)?)
}

/// `‖u* − u‖_{L²([0,2]²×[0,T])}` against the manufactured solution.
pub fn total_l2_error(oracle: &dyn FieldOracle, problem: &Problem, interior: &QuadSet) -> Result<f64> {
    let points: Vec<SpaceTime> = (0..interior.len()).map(|m| interior.space_time(m)).collect();
    let values = oracle.values(&points)?;
    let mut m = 0;
    let sq = interior.integrate(|p| {
        let u = exact_solution(p[0], p[1], p[2], problem.lambda);
        let v = values[m];
        m += 1;
        (v[0] - u[0]).powi(2) + (v[1] - u[1]).powi(2)
    })?;
    Ok(sq.sqrt())
}

/// `‖f‖²_{L²}` of the manufactured forcing over the interior set.
pub fn forcing_norm2(problem: &Problem, interior: &QuadSet) -> Result<f64> {
    interior.integrate(|p| {
        let f = forcing(p[0], p[1], p[2], problem.lambda);
        f[0] * f[0] + f[1] * f[1]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::{exact_jet, CustomOracle, Manufactured};
    use std::f64::consts::PI;

    fn small_sets() -> TrainingSets {
        TrainingSets::midpoint(SetSizes { m_int: 500, m_sb: 200, m_t: 200 }, 1.0).unwrap()
    }

    #[test]
    fn manufactured_oracle_has_zero_loss() {
        let problem = Problem::new(0.01, 1.0, true).unwrap();
        let sets = small_sets();
        let m = Manufactured { lambda: 0.01 };
        let b = training_loss(&m, &problem, &sets).unwrap();
        assert!(b.total <= 1e-10, "{b:?}");
        let g = generalization_error(&m, &problem, &sets, 2).unwrap();
        assert!(g.total <= 1e-10);
        assert_eq!(total_l2_error(&m, &problem, &sets.interior).unwrap(), 0.0);
    }

    #[test]
    fn zero_network_initial_component() {
        let problem = Problem::default();
        let sets = TrainingSets::midpoint(SetSizes { m_int: 64, m_sb: 16, m_t: 1000 }, 1.0).unwrap();
        let p = MlpParams::zeros(&[3, 4, 2]).unwrap();
        let b = training_loss(&p, &problem, &sets).unwrap();
        assert!((b.e_t2 - 2.0).abs() < 1e-3, "{}", b.e_t2);
        assert_eq!(b.e_sb2, [0.0; 4]);
        let total: f64 = b.components().iter().sum();
        assert!((b.total2 - total).abs() <= 1e-12 * total);
    }

    #[test]
    fn fine_factor_one_reproduces_training_loss() {
        let problem = Problem::default();
        let sets = small_sets();
        let p = MlpParams::init(2, &[3, 8, 8, 2]).unwrap();
        let a = training_loss(&p, &problem, &sets).unwrap();
        let b = generalization_error(&p, &problem, &sets, 1).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn objective_agrees_with_oracle_loss() {
        let problem = Problem::default();
        let sets = small_sets();
        let p = MlpParams::init(4, &[3, 10, 10, 2]).unwrap();
        let mut obj = TrainingObjective::new(&problem, &sets, p.widths()).unwrap();
        let (b, _) = obj.evaluate(&p, false).unwrap();
        let c = training_loss(&p, &problem, &sets).unwrap();
        for (x, y) in b.components().iter().zip(c.components()) {
            assert!((x - y).abs() <= 1e-12 * y.abs().max(1e-300), "{b:?} vs {c:?}");
        }
    }

    #[test]
    fn l2_error_examples() {
        let problem = Problem::new(0.01, 1.0, true).unwrap();
        let q = QuadSet::midpoint_interior(4000, 1.0).unwrap();
        let shift = CustomOracle(|x: [f64; 2], t: f64| {
            let mut j = [exact_jet(x[0], x[1], t, 0.01, 0), exact_jet(x[0], x[1], t, 0.01, 1)];
            j[0].value += 0.1;
            j
        });
        assert!((total_l2_error(&shift, &problem, &q).unwrap() - 0.2).abs() < 1e-12);
        let bump = CustomOracle(|x: [f64; 2], t: f64| {
            let mut j = [exact_jet(x[0], x[1], t, 0.01, 0), exact_jet(x[0], x[1], t, 0.01, 1)];
            j[0].value += 0.1 * (PI * x[0]).sin();
            j
        });
        // 0.01·∫sin²(πx) dx dy dt = 0.01·1·2·1
        let e = total_l2_error(&bump, &problem, &q).unwrap();
        assert!((e - 0.02f64.sqrt()).abs() < 1e-10, "{e}");
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let problem = Problem::default();
        let sets = TrainingSets::midpoint(SetSizes { m_int: 27, m_sb: 8, m_t: 9 }, 1.0).unwrap();
        let p = MlpParams::init(8, &[3, 5, 4, 2]).unwrap();
        let mut obj = TrainingObjective::new(&problem, &sets, p.widths()).unwrap();
        let theta = p.as_slice().to_vec();
        let (_, g) = obj.value_grad(&theta).unwrap();
        for i in (0..theta.len()).step_by(7) {
            let h = 1e-5;
            let mut tp = theta.clone();
            let mut tm = theta.clone();
            tp[i] += h;
            tm[i] -= h;
            let fd = (obj.value(&tp).unwrap() - obj.value(&tm).unwrap()) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1.0), "param {i}: {fd} vs {}", g[i]);
        }
    }
}
