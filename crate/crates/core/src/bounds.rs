//! The computable a-posteriori L² error bound.
//!
//! ```text
//! ‖u* − u‖²_{L²(Ω)} ≤ C₃(M)·(T + C₂T²e^{C₂T})
//! C₃(M) = E_t² + C_t M_t^{−2/d} + E_pde² + C_pde M_int^{−2/(d+1)}
//!         + C√T Σ_k (E_sb,k + C_sb,k M_sb,k^{−1/d})
//! C₂    = C₁(‖û‖²_∞ + ‖u‖²_∞ + ‖∇u‖²_{L²} + 1)
//! ```
//!
//! The network-dependent constants are products like
//! `(e² n⁴ W³ Rⁿ ‖σ‖_{Cⁿ})^{nL}` and are carried as [`LogReal`]s. Every
//! hidden absolute constant behind a `≲` is taken to be one.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::autodiff::SpaceTime;
use crate::error::{Error, Result};
use crate::logreal::LogReal;
use crate::loss::{generalization_error, total_l2_error, training_loss, LossBreakdown, TrainingSets};
use crate::network::{sigma_cn_norm, MlpParams};
use crate::physics::{exact_jet, exact_solution, FieldOracle, Problem, DIM, PERIOD};

/// Young's-inequality constant `C₁`.
pub const C1: f64 = 1.0;

/// `‖u‖_{C^k}` of the manufactured solution: the largest
/// `π^{a+b}(π²λ/4)^c` over `a + b + c ≤ k`.
pub fn ck_norm_exact(problem: &Problem, k: usize) -> Result<f64> {
    if k > 6 {
        return Err(Error::InvalidArgument(format!("C^k norm supports k ≤ 6, got {k}")));
    }
    let q = PI * PI * problem.lambda / 4.0;
    let mut best: f64 = 0.0;
    for c in 0..=k {
        for s in 0..=(k - c) {
            best = best.max(PI.powi(s as i32) * q.powi(c as i32));
        }
    }
    Ok(best)
}

/// `sup_t ‖∇u(·,t)‖²_{L²([0,2]²)}` of the manufactured solution, attained at `t = 0`.
pub fn exact_grad_l2_sq() -> f64 {
    4.0 * PI * PI
}

/// Architecture data entering the analytic constants.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetworkShape {
    /// Number of affine layers `L`.
    pub layers: usize,
    /// Maximal width `W`.
    pub width: usize,
    /// Max-abs parameter `R`, before clamping to one.
    pub r: f64,
}

impl NetworkShape {
    pub fn of(params: &MlpParams) -> NetworkShape {
        NetworkShape {
            layers: params.num_layers(),
            width: params.width(),
            r: params.max_abs(),
        }
    }
}

/// `(e² · base · W³ Rⁿ ‖σ‖_{Cⁿ})^{nL}` with `R` clamped to at least one.
pub fn network_factor(shape: &NetworkShape, base: f64, n: usize) -> LogReal {
    let (nf, l) = (n as f64, shape.layers as f64);
    let inner = 2.0 + base.ln() + 3.0 * (shape.width as f64).ln() + nf * shape.r.max(1.0).ln() + sigma_cn_norm(n).ln();
    LogReal::from_ln(nf * l * inner)
}

/// The analytic constants built from the architecture and `‖u‖_{C^k}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnalyticConstants {
    /// `‖u‖_{C⁴} + 16^{4L}(d+1)⁸(4⁴e²W³R⁴‖σ‖_{C⁴})^{4L}`, reported only.
    pub c_network: LogReal,
    pub c_t: LogReal,
    pub c_pde: LogReal,
    pub c_sb: [LogReal; 4],
}

pub fn analytic_constants(shape: &NetworkShape, problem: &Problem) -> Result<AnalyticConstants> {
    if !shape.r.is_finite() {
        return Err(Error::NonFinite(format!("weight bound R={}", shape.r)));
    }
    let l = shape.layers as f64;
    let u_c2 = ck_norm_exact(problem, 2)?;
    let u_c4 = ck_norm_exact(problem, 4)?;
    let prefix = LogReal::from_ln(4.0 * l * 16f64.ln() + 8.0 * ((DIM + 1) as f64).ln());
    let c_network = LogReal::new(u_c4) + prefix * network_factor(shape, 256.0, 4);
    let c_t = LogReal::new(u_c2 * u_c2) + network_factor(shape, 64.0, 2);
    let c_pde = network_factor(shape, 1296.0, 6).sqrt();
    let c_sb = std::array::from_fn(|k| {
        let n = k + 2;
        network_factor(shape, (n as f64).powi(4), n).sqrt()
    });
    Ok(AnalyticConstants {
        c_network,
        c_t,
        c_pde,
        c_sb,
    })
}

/// Derivative-norm bounds on `‖(u_θ)_j‖_{Cⁿ}` for `n = 2..=6`.
pub fn network_cn_norms(params: &MlpParams) -> Result<[LogReal; 5]> {
    let mut out = [LogReal::ZERO; 5];
    for (i, o) in out.iter_mut().enumerate() {
        *o = params.cn_norm_bound(i + 2)?;
    }
    Ok(out)
}

/// Resolution of the sup-norm sampling of `û = u* − u`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupGrid {
    /// Nodes per spatial axis for values.
    pub nx: usize,
    /// Time levels for values, endpoints included.
    pub nt: usize,
    /// Nodes per spatial axis for derivatives.
    pub jet_nx: usize,
    /// Time levels for derivatives.
    pub jet_nt: usize,
}

impl Default for SupGrid {
    fn default() -> Self {
        SupGrid {
            nx: 256,
            nt: 64,
            jet_nx: 32,
            jet_nt: 8,
        }
    }
}

impl SupGrid {
    fn check(&self) -> Result<()> {
        if self.nx == 0 || self.jet_nx == 0 || self.nt < 2 || self.jet_nt < 2 {
            return Err(Error::InvalidArgument(format!("sup grid too small: {self:?}")));
        }
        Ok(())
    }
}

/// Sampled sup-norms of `û`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledNorms {
    /// `max |û|` (Euclidean in the components) on the value grid.
    pub u_hat_sup: f64,
    /// `max |∂^α û_j|` over the available partials of order ≤ k, k = 0..=4.
    pub u_hat_ck: [f64; 5],
    pub grid: SupGrid,
}

fn time_level(k: usize, nt: usize, horizon: f64) -> f64 {
    horizon * k as f64 / (nt - 1) as f64
}

fn space_node(i: usize, nx: usize) -> f64 {
    PERIOD * i as f64 / nx as f64
}

pub fn sample_norms(oracle: &dyn FieldOracle, problem: &Problem, grid: SupGrid) -> Result<SampledNorms> {
    grid.check()?;
    let mut u_hat_sup: f64 = 0.0;
    for k in 0..grid.nt {
        let t = time_level(k, grid.nt, problem.horizon);
        let points: Vec<SpaceTime> = (0..grid.nx * grid.nx)
            .map(|m| [space_node(m / grid.nx, grid.nx), space_node(m % grid.nx, grid.nx), t])
            .collect();
        for (p, v) in points.iter().zip(oracle.values(&points)?) {
            let u = exact_solution(p[0], p[1], p[2], problem.lambda);
            let d = (v[0] - u[0]).hypot(v[1] - u[1]);
            if !d.is_finite() {
                return Err(Error::NonFinite(format!("field value at {p:?}")));
            }
            u_hat_sup = u_hat_sup.max(d);
        }
    }

    let mut by_order = [0.0f64; 5];
    let n = grid.jet_nx;
    let points: Vec<SpaceTime> = (0..grid.jet_nt * n * n)
        .map(|m| {
            let (k, r) = (m / (n * n), m % (n * n));
            [space_node(r / n, n), space_node(r % n, n), time_level(k, grid.jet_nt, problem.horizon)]
        })
        .collect();
    for (p, jets) in points.iter().zip(oracle.jets_batch(&points)?) {
        for (c, jet) in jets.iter().enumerate() {
            let ex = exact_jet(p[0], p[1], p[2], problem.lambda, c);
            let orders: [(usize, &[f64], &[f64]); 6] = [
                (0, std::slice::from_ref(&jet.value), std::slice::from_ref(&ex.value)),
                (1, std::slice::from_ref(&jet.dt), std::slice::from_ref(&ex.dt)),
                (1, &jet.grad, &ex.grad),
                (2, &jet.hess_diag, &ex.hess_diag),
                (3, &jet.third, &ex.third),
                (4, &jet.bih_parts, &ex.bih_parts),
            ];
            for (order, a, b) in orders {
                for (x, y) in a.iter().zip(b) {
                    let d = (x - y).abs();
                    if !d.is_finite() {
                        return Err(Error::NonFinite(format!("field derivative at {p:?}")));
                    }
                    by_order[order] = by_order[order].max(d);
                }
            }
        }
    }
    let mut u_hat_ck = [0.0; 5];
    let mut running: f64 = 0.0;
    for k in 0..5 {
        running = running.max(by_order[k]);
        u_hat_ck[k] = running;
    }
    u_hat_ck[0] = u_hat_ck[0].max(u_hat_sup);
    Ok(SampledNorms {
        u_hat_sup,
        u_hat_ck,
        grid,
    })
}

/// `C₁(‖û‖²_∞ + ‖u‖²_∞ + ‖∇u‖²_{L²} + 1)` with `‖u‖_∞ = 1`.
pub fn c2_constant(u_hat_sup: f64, problem: &Problem) -> Result<f64> {
    if !problem.mms {
        return Err(Error::InvalidArgument("C₂ needs the manufactured solution".into()));
    }
    if !(u_hat_sup >= 0.0 && u_hat_sup.is_finite()) {
        return Err(Error::NonFinite(format!("‖û‖_∞ = {u_hat_sup}")));
    }
    Ok(C1 * (u_hat_sup * u_hat_sup + 1.0 + exact_grad_l2_sq() + 1.0))
}

/// `C = ‖u‖⁴_{C⁰} + ‖û‖⁴_{C⁰}`.
pub fn c_constant(u_hat_sup: f64) -> LogReal {
    LogReal::new(1.0) + LogReal::new(u_hat_sup).powf(4.0)
}

/// Quadrature sizes entering `C₃(M)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuadSizes {
    pub m_t: usize,
    pub m_int: usize,
    pub m_sb: [usize; 4],
}

impl QuadSizes {
    /// All four boundary residuals share the boundary set of both axes.
    pub fn of(sets: &TrainingSets) -> QuadSizes {
        let s = sets.actual_sizes();
        QuadSizes {
            m_t: s.m_t,
            m_int: s.m_int,
            m_sb: [s.m_sb; 4],
        }
    }
}

/// Inputs of `C₃(M)`. Squared training errors are stored as in
/// [`LossBreakdown`]; a `None` marks a missing component.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct C3Inputs {
    pub e_t2: Option<f64>,
    pub e_pde2: Option<f64>,
    pub e_sb2: [Option<f64>; 4],
    pub c: LogReal,
    pub c_t: LogReal,
    pub c_pde: LogReal,
    pub c_sb: [LogReal; 4],
    pub sizes: QuadSizes,
    pub horizon: f64,
}

impl C3Inputs {
    pub fn new(training: &LossBreakdown, c: LogReal, analytic: &AnalyticConstants, sizes: QuadSizes, horizon: f64) -> C3Inputs {
        C3Inputs {
            e_t2: Some(training.e_t2),
            e_pde2: Some(training.e_pde2),
            e_sb2: training.e_sb2.map(Some),
            c,
            c_t: analytic.c_t,
            c_pde: analytic.c_pde,
            c_sb: analytic.c_sb,
            sizes,
            horizon,
        }
    }
}

fn component(v: Option<f64>, name: &str) -> Result<LogReal> {
    match v {
        None => Err(Error::InvalidArgument(format!("missing component {name}"))),
        Some(x) if x >= 0.0 && x.is_finite() => Ok(LogReal::new(x)),
        Some(x) => Err(Error::NonFinite(format!("component {name} = {x}"))),
    }
}

fn inv_pow(m: usize, p: f64, name: &str) -> Result<LogReal> {
    if m == 0 {
        return Err(Error::InvalidArgument(format!("{name} must be positive")));
    }
    Ok(LogReal::from_ln(-p * (m as f64).ln()))
}

/// Assembles `C₃(M)` with `d = 2`.
pub fn c3_of_m(inp: &C3Inputs) -> Result<LogReal> {
    if !(inp.horizon > 0.0 && inp.horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!("T must be positive, got {}", inp.horizon)));
    }
    let d = DIM as f64;
    let s = &inp.sizes;
    let mut c3 = component(inp.e_t2, "E_t")?
        + inp.c_t * inv_pow(s.m_t, 2.0 / d, "M_t")?
        + component(inp.e_pde2, "E_pde")?
        + inp.c_pde * inv_pow(s.m_int, 2.0 / (d + 1.0), "M_int")?;
    let mut sb = LogReal::ZERO;
    for k in 0..4 {
        let e = component(inp.e_sb2[k], &format!("E_sb{}", k + 1))?.sqrt();
        sb = sb + e + inp.c_sb[k] * inv_pow(s.m_sb[k], 1.0 / d, &format!("M_sb{}", k + 1))?;
    }
    c3 = c3 + inp.c * LogReal::new(inp.horizon).sqrt() * sb;
    Ok(c3)
}

/// `C₃(T + C₂T²e^{C₂T})`.
pub fn total_bound(c3: LogReal, c2: f64, horizon: f64) -> Result<LogReal> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!("T must be positive, got {horizon}")));
    }
    if !(c2 >= 0.0 && c2.is_finite()) {
        return Err(Error::InvalidArgument(format!("C₂ must be finite and ≥ 0, got {c2}")));
    }
    let growth = LogReal::new(horizon) + LogReal::new(c2) * LogReal::new(horizon * horizon) * LogReal::from_ln(c2 * horizon);
    Ok(c3 * growth)
}

/// Measured errors of one field.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub training: LossBreakdown,
    pub generalization: LossBreakdown,
    pub total_l2_error: f64,
    /// Refinement factor of the generalization and L² sets.
    pub fine_factor: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundConstants {
    pub c1: f64,
    pub c: LogReal,
    pub c2: f64,
    pub analytic: AnalyticConstants,
    /// Derivative-norm bounds on `‖u*_j‖_{Cⁿ}`, n = 2..=6.
    pub network_cn: Option<[LogReal; 5]>,
    /// `‖u‖_{C^k}` of the manufactured solution, k = 0..=6.
    pub exact_ck: [f64; 7],
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub lambda: f64,
    pub horizon: f64,
    pub shape: NetworkShape,
    pub measured: Measured,
    pub sampled: SampledNorms,
    pub constants: BoundConstants,
    pub sizes: QuadSizes,
    pub c3: LogReal,
    pub bound_total: LogReal,
    /// `|bound_total − error²|`; the sign is given by `dominates`.
    pub margin: LogReal,
    pub dominates: bool,
    /// `log₁₀(bound_total / error²)`; `None` for a zero error.
    pub log10_margin: Option<f64>,
    /// The bound does not fit in an `f64`.
    pub overflow: bool,
    /// Absolute constants hidden by `≲` are set to one.
    pub hidden_constants_one: bool,
}

impl BoundReport {
    pub fn error2(&self) -> f64 {
        self.measured.total_l2_error * self.measured.total_l2_error
    }

    fn c3_inputs(&self) -> C3Inputs {
        C3Inputs::new(&self.measured.training, self.constants.c, &self.constants.analytic, self.sizes, self.horizon)
    }

    /// Recomputes `C₃` and the bound from the stored components and returns
    /// the larger relative discrepancy in log space.
    pub fn recompute_discrepancy(&self) -> Result<f64> {
        let c3 = c3_of_m(&self.c3_inputs())?;
        let bound = total_bound(c3, self.constants.c2, self.horizon)?;
        let rel = |a: LogReal, b: LogReal| ((a.ln() - b.ln()) / b.ln().abs().max(1.0)).abs();
        Ok(rel(c3, self.c3).max(rel(bound, self.bound_total)))
    }

    pub fn summary_header() -> &'static str {
        "m_int,neurons,lambda,e_t,e_g,l2_error,log10_c3,log10_bound"
    }

    pub fn summary_row(&self) -> String {
        format!(
            "{},{},{},{:e},{:e},{:e},{},{}",
            self.sizes.m_int,
            self.shape.width,
            self.lambda,
            self.measured.training.total,
            self.measured.generalization.total,
            self.measured.total_l2_error,
            self.c3.log10(),
            self.bound_total.log10()
        )
    }
}

/// Evaluates every measured quantity and constant for `oracle`.
///
/// `network` supplies the Cⁿ-norm bounds when the field is a network;
/// `shape` always feeds the analytic constants.
pub fn bound_report(
    oracle: &dyn FieldOracle,
    network: Option<&MlpParams>,
    shape: NetworkShape,
    problem: &Problem,
    sets: &TrainingSets,
    fine_factor: usize,
    grid: SupGrid,
) -> Result<BoundReport> {
    let training = training_loss(oracle, problem, sets)?;
    let generalization = generalization_error(oracle, problem, sets, fine_factor)?;
    let l2 = total_l2_error(oracle, problem, &sets.interior.refined(fine_factor)?)?;
    let sampled = sample_norms(oracle, problem, grid)?;
    let analytic = analytic_constants(&shape, problem)?;
    let mut exact_ck = [0.0; 7];
    for (k, v) in exact_ck.iter_mut().enumerate() {
        *v = ck_norm_exact(problem, k)?;
    }
    let constants = BoundConstants {
        c1: C1,
        c: c_constant(sampled.u_hat_sup),
        c2: c2_constant(sampled.u_hat_sup, problem)?,
        analytic,
        network_cn: network.map(network_cn_norms).transpose()?,
        exact_ck,
    };
    let sizes = QuadSizes::of(sets);
    let c3 = c3_of_m(&C3Inputs::new(&training, constants.c, &analytic, sizes, problem.horizon))?;
    let bound_total = total_bound(c3, constants.c2, problem.horizon)?;
    let err2 = LogReal::new(l2 * l2);
    let (margin, dominates) = match bound_total.checked_sub(err2) {
        Some(m) => (m, true),
        None => (err2.checked_sub(bound_total).unwrap_or(LogReal::ZERO), false),
    };
    Ok(BoundReport {
        lambda: problem.lambda,
        horizon: problem.horizon,
        shape,
        measured: Measured {
            training,
            generalization,
            total_l2_error: l2,
            fine_factor,
        },
        sampled,
        constants,
        sizes,
        c3,
        bound_total,
        margin,
        dominates,
        log10_margin: (!err2.is_zero()).then(|| bound_total.log10() - err2.log10()),
        overflow: bound_total.value().is_infinite(),
        hidden_constants_one: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::E;
    use crate::loss::SetSizes;
    use crate::autodiff::Jet;
    use crate::physics::{CustomOracle, Manufactured};

    fn unit_shape() -> NetworkShape {
        NetworkShape {
            layers: 2,
            width: 1,
            r: 1.0,
        }
    }

    #[test]
    fn exact_ck_norms() {
        let p001 = Problem::new(0.01, 1.0, true).unwrap();
        let p0 = Problem::new(0.0, 1.0, true).unwrap();
        assert_eq!(ck_norm_exact(&p001, 0).unwrap(), 1.0);
        assert!((ck_norm_exact(&p001, 4).unwrap() - PI.powi(4)).abs() < 1e-12);
        assert!((ck_norm_exact(&p0, 2).unwrap() - PI * PI).abs() < 1e-12);
        assert!(ck_norm_exact(&p0, 7).is_err());
        // a large λ makes the time derivative dominate
        let big = Problem::new(4.0, 1.0, true).unwrap();
        assert!((ck_norm_exact(&big, 1).unwrap() - PI * PI).abs() < 1e-12);
    }

    #[test]
    fn ct_factor_for_unit_network() {
        // (e²·2⁶·1·1·1)^{2·2} = 64⁴e⁸
        let f = network_factor(&unit_shape(), 64.0, 2);
        let expect = 64f64.powi(4) * E.powi(8);
        assert!((f.value() / expect - 1.0).abs() < 1e-12);
        assert!((f.value() - 5.0012e10).abs() < 1e7);
    }

    #[test]
    fn log_assembly_matches_direct_evaluation() {
        let shape = NetworkShape {
            layers: 2,
            width: 2,
            r: 1.3,
        };
        let problem = Problem::default();
        let a = analytic_constants(&shape, &problem).unwrap();
        let direct = |base: f64, n: i32| {
            let s = sigma_cn_norm(n as usize);
            (E * E * base * 8.0 * 1.3f64.powi(n) * s).powi(n * 2)
        };
        let u2 = PI.powi(2);
        let rel = |x: LogReal, y: f64| (x.value() / y - 1.0).abs();
        assert!(rel(a.c_t, u2 * u2 + direct(64.0, 2)) < 1e-9);
        assert!(rel(a.c_pde, direct(1296.0, 6).sqrt()) < 1e-9);
        for k in 0..4 {
            let n = k as i32 + 2;
            assert!(rel(a.c_sb[k], direct((n as f64).powi(4), n).sqrt()) < 1e-9);
        }
        let net = PI.powi(4) + 16f64.powi(8) * 3f64.powi(8) * direct(256.0, 4);
        assert!(rel(a.c_network, net) < 1e-9);
    }

    #[test]
    fn c2_examples() {
        let p0 = Problem::new(0.0, 1.0, true).unwrap();
        let c2 = c2_constant(0.0, &p0).unwrap();
        assert!((c2 - (2.0 + 4.0 * PI * PI)).abs() < 1e-12);
        assert!((c2 - 41.478).abs() < 1e-3);
        assert!((c2_constant(0.1, &p0).unwrap() - c2 - 0.01).abs() < 1e-12);
        assert!(c2 >= 1.0);
        assert!(c2_constant(0.0, &Problem::new(0.0, 1.0, false).unwrap()).is_err());
    }

    fn inputs() -> C3Inputs {
        C3Inputs {
            e_t2: Some(0.0),
            e_pde2: Some(0.0),
            e_sb2: [Some(0.0); 4],
            c: LogReal::ZERO,
            c_t: LogReal::ZERO,
            c_pde: LogReal::ZERO,
            c_sb: [LogReal::ZERO; 4],
            sizes: QuadSizes {
                m_t: 1000,
                m_int: 10000,
                m_sb: [1000; 4],
            },
            horizon: 1.0,
        }
    }

    #[test]
    fn c3_examples() {
        assert!(c3_of_m(&inputs()).unwrap().is_zero());
        let mut i = inputs();
        i.e_t2 = Some(1.0);
        i.c_t = LogReal::ONE;
        assert!((c3_of_m(&i).unwrap().value() - 1.001).abs() < 1e-12);
        i.e_sb2[2] = None;
        assert!(c3_of_m(&i).unwrap_err().to_string().contains("missing component"));
    }

    #[test]
    fn c3_plain_arithmetic() {
        let mut i = inputs();
        i.e_t2 = Some(0.3);
        i.e_pde2 = Some(0.2);
        i.e_sb2 = [Some(0.01), Some(0.04), Some(0.09), Some(0.16)];
        i.c = LogReal::new(2.0);
        i.c_t = LogReal::new(5.0);
        i.c_pde = LogReal::new(7.0);
        i.c_sb = [1.0, 2.0, 3.0, 4.0].map(LogReal::new);
        i.horizon = 0.5;
        let sb: f64 = (0..4).map(|k| [0.1, 0.2, 0.3, 0.4][k] + (k + 1) as f64 / 1000f64.sqrt()).sum();
        let expect = 0.3 + 5.0 / 1000.0 + 0.2 + 7.0 * 10000f64.powf(-2.0 / 3.0) + 2.0 * 0.5f64.sqrt() * sb;
        assert!((c3_of_m(&i).unwrap().value() / expect - 1.0).abs() < 1e-12);
    }

    #[test]
    fn c3_nonincreasing_in_sizes() {
        let mut i = inputs();
        i.c_t = LogReal::new(3.0);
        i.c_pde = LogReal::new(4.0);
        i.c = LogReal::ONE;
        i.c_sb = [LogReal::new(2.0); 4];
        let base = c3_of_m(&i).unwrap();
        for which in 0..6 {
            let mut j = i;
            match which {
                0 => j.sizes.m_t *= 2,
                1 => j.sizes.m_int *= 2,
                k => j.sizes.m_sb[k - 2] *= 2,
            }
            assert!(c3_of_m(&j).unwrap() < base);
        }
    }

    #[test]
    fn total_bound_examples() {
        assert!((total_bound(LogReal::ONE, 0.0, 1.0).unwrap().value() - 1.0).abs() < 1e-14);
        let b = total_bound(LogReal::new(2.0), 1.0, 1.0).unwrap().value();
        assert!((b - 2.0 * (1.0 + E)).abs() < 1e-12);
        assert!((b - 7.43656).abs() < 1e-5);
        assert!(total_bound(LogReal::ONE, 1.0, 0.0).is_err());
        let base = total_bound(LogReal::new(2.0), 1.0, 1.0).unwrap();
        assert!(total_bound(LogReal::new(3.0), 1.0, 1.0).unwrap() > base);
        assert!(total_bound(LogReal::new(2.0), 1.5, 1.0).unwrap() > base);
        assert!(total_bound(LogReal::new(2.0), 1.0, 1.5).unwrap() > base);
        let huge = total_bound(LogReal::ONE, 800.0, 1.0).unwrap();
        assert!(huge.value().is_infinite() && huge.ln().is_finite());
    }

    fn small_sets() -> TrainingSets {
        TrainingSets::midpoint(
            SetSizes {
                m_int: 512,
                m_sb: 64,
                m_t: 64,
            },
            1.0,
        )
        .unwrap()
    }

    fn small_grid() -> SupGrid {
        SupGrid {
            nx: 16,
            nt: 4,
            jet_nx: 4,
            jet_nt: 2,
        }
    }

    #[test]
    fn exact_oracle_report() {
        let problem = Problem::new(0.0, 1.0, true).unwrap();
        let sets = small_sets();
        let r = bound_report(&Manufactured { lambda: 0.0 }, None, unit_shape(), &problem, &sets, 2, small_grid()).unwrap();
        assert!(r.sampled.u_hat_sup == 0.0 && r.sampled.u_hat_ck.iter().all(|&v| v == 0.0));
        assert!(r.measured.total_l2_error < 1e-14);
        assert!((r.constants.c2 - (2.0 + 4.0 * PI * PI)).abs() < 1e-12);
        assert!(r.dominates && r.bound_total > LogReal::ZERO);
        assert!(r.recompute_discrepancy().unwrap() < 1e-12);
        let json = serde_json::to_string(&r).unwrap();
        let back: BoundReport = serde_json::from_str(&json).unwrap();
        assert!(back.recompute_discrepancy().unwrap() < 1e-9);
    }

    #[test]
    fn offset_oracle_adds_to_c2() {
        let problem = Problem::new(0.0, 1.0, true).unwrap();
        let shifted = CustomOracle(|x: [f64; 2], t: f64| {
            let mut j: [Jet; 2] = [exact_jet(x[0], x[1], t, 0.0, 0), exact_jet(x[0], x[1], t, 0.0, 1)];
            j[0].value += 0.1;
            j
        });
        let s = sample_norms(&shifted, &problem, small_grid()).unwrap();
        assert!((s.u_hat_sup - 0.1).abs() < 1e-14);
        assert!((s.u_hat_ck[4] - 0.1).abs() < 1e-14);
        let c2 = c2_constant(s.u_hat_sup, &problem).unwrap();
        assert!((c2 - (2.0 + 4.0 * PI * PI) - 0.01).abs() < 1e-12);
    }

    #[test]
    fn network_report_dominates_and_bounds_sampled_norms() {
        let problem = Problem::default();
        let sets = small_sets();
        let p = MlpParams::init(3, &[3, 8, 8, 2]).unwrap();
        let r = bound_report(&p, Some(&p), NetworkShape::of(&p), &problem, &sets, 1, small_grid()).unwrap();
        assert!(r.dominates && r.log10_margin.unwrap() > 0.0);
        let cn = r.constants.network_cn.unwrap();
        for n in 2..=4 {
            let analytic = cn[n - 2] + LogReal::new(r.constants.exact_ck[n]);
            assert!(analytic.value() >= r.sampled.u_hat_ck[n]);
        }
        assert!(r.summary_row().starts_with("512,8,0.01,"));
        assert_eq!(BoundReport::summary_header().split(',').count(), r.summary_row().split(',').count());
    }
}
