//! Operators of the two-dimensional vector Kuramoto–Sivashinsky equation
//!
//! ```text
//! u_t + (u·∇)u + λΔu + Δ²u = f    on [0,2]² × [0,T], 2-periodic in space,
//! ```
//!
//! the manufactured solution used for validation, its forcing, and the
//! pointwise residuals (interior, periodic boundary mismatch, initial).

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Jet, JetAdjoint, JetTape, SpaceTime, MAX_ORDER};
use crate::error::{Error, Result};
use crate::network::MlpParams;

/// Spatial dimension.
pub const DIM: usize = 2;
/// Period (and side length of the domain) along every axis.
pub const PERIOD: f64 = 2.0;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Problem {
    pub lambda: f64,
    /// Time horizon `T`.
    pub horizon: f64,
    /// Subtract the manufactured forcing in the interior residual.
    pub mms: bool,
}

impl Default for Problem {
    fn default() -> Self {
        Problem {
            lambda: 0.01,
            horizon: 1.0,
            mms: true,
        }
    }
}

impl Problem {
    pub fn new(lambda: f64, horizon: f64, mms: bool) -> Result<Problem> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("λ must be finite and ≥ 0, got {lambda}")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!("T must be finite and > 0, got {horizon}")));
        }
        Ok(Problem { lambda, horizon, mms })
    }

    /// Forcing at `(x, t)`, or zero when the manufactured mode is off.
    pub fn forcing_at(&self, x: [f64; 2], t: f64) -> [f64; 2] {
        if self.mms {
            forcing(x[0], x[1], t, self.lambda)
        } else {
            [0.0; 2]
        }
    }
}

/// `∂^a cos(θ)` and `∂^a sin(θ)` with respect to θ, by quarter-turn rotation.
fn trig_deriv(c: f64, s: f64, a: usize) -> (f64, f64) {
    match a % 4 {
        0 => (c, s),
        1 => (-s, c),
        2 => (-c, -s),
        _ => (s, -c),
    }
}

fn decay(t: f64, lambda: f64) -> f64 {
    (-PI * PI * lambda * t / 4.0).exp()
}

/// The manufactured pair
/// `u = −cos(πx)sin(πy)e^{−π²λt/4}`, `v = sin(πx)cos(πy)e^{−π²λt/4}`.
pub fn exact_solution(x: f64, y: f64, t: f64, lambda: f64) -> [f64; 2] {
    let e = decay(t, lambda);
    let (cx, sx) = ((PI * x).cos(), (PI * x).sin());
    let (cy, sy) = ((PI * y).cos(), (PI * y).sin());
    [-cx * sy * e, sx * cy * e]
}

fn exact_partial(x: f64, y: f64, t: f64, lambda: f64, component: usize, [a, b, c]: [usize; 3]) -> f64 {
    let (cx, sx) = ((PI * x).cos(), (PI * x).sin());
    let (cy, sy) = ((PI * y).cos(), (PI * y).sin());
    let (dcx, dsx) = trig_deriv(cx, sx, a);
    let (dcy, dsy) = trig_deriv(cy, sy, b);
    let rate = -PI * PI * lambda / 4.0;
    let scale = PI.powi((a + b) as i32) * rate.powi(c as i32) * decay(t, lambda);
    if component == 0 {
        -dcx * dsy * scale
    } else {
        dsx * dcy * scale
    }
}

/// All jet fields of the manufactured solution, in closed form.
pub fn exact_jet(x: f64, y: f64, t: f64, lambda: f64, component: usize) -> Jet {
    let p = |m: [usize; 3]| exact_partial(x, y, t, lambda, component, m);
    Jet::from_partials(
        p([0, 0, 0]),
        p([0, 0, 1]),
        [p([1, 0, 0]), p([0, 1, 0])],
        [p([2, 0, 0]), p([0, 2, 0])],
        [p([3, 0, 0]), p([2, 1, 0]), p([1, 2, 0]), p([0, 3, 0])],
        [p([4, 0, 0]), p([2, 2, 0]), p([0, 4, 0])],
    )
}

/// `f = u_t + (u·∇)u + λΔu + Δ²u` evaluated on the manufactured solution,
/// so that it solves the forced equation exactly.
pub fn forcing(x: f64, y: f64, t: f64, lambda: f64) -> [f64; 2] {
    let jets = [exact_jet(x, y, t, lambda, 0), exact_jet(x, y, t, lambda, 1)];
    pde_residual_jets(&jets, lambda, [0.0; 2])
}

/// Where the jets supplied by a [`FieldOracle`] come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Network,
    Manufactured,
    SpectralSnapshot,
    Custom,
}

/// A velocity field that can report its jets at any space-time point.
pub trait FieldOracle {
    fn jets(&self, x: [f64; 2], t: f64) -> Result<[Jet; DIM]>;

    fn provenance(&self) -> Provenance;

    fn jets_batch(&self, points: &[SpaceTime]) -> Result<Vec<[Jet; DIM]>> {
        points.iter().map(|p| self.jets([p[0], p[1]], p[2])).collect()
    }

    fn values(&self, points: &[SpaceTime]) -> Result<Vec<[f64; DIM]>> {
        Ok(self.jets_batch(points)?.iter().map(|j| [j[0].value, j[1].value]).collect())
    }
}

const ORACLE_CHUNK: usize = 512;

fn check_velocity_net(params: &MlpParams) -> Result<()> {
    if params.output_dim() != DIM {
        return Err(Error::ShapeMismatch(format!(
            "velocity network must have {DIM} outputs, has {}",
            params.output_dim()
        )));
    }
    Ok(())
}

impl FieldOracle for MlpParams {
    fn jets(&self, x: [f64; 2], t: f64) -> Result<[Jet; DIM]> {
        Ok(self.jets_batch(&[[x[0], x[1], t]])?[0])
    }

    fn provenance(&self) -> Provenance {
        Provenance::Network
    }

    fn jets_batch(&self, points: &[SpaceTime]) -> Result<Vec<[Jet; DIM]>> {
        check_velocity_net(self)?;
        let mut out = Vec::with_capacity(points.len());
        let mut tape = JetTape::default();
        for chunk in points.chunks(ORACLE_CHUNK) {
            tape.run(self, chunk, MAX_ORDER)?;
            out.extend((0..chunk.len()).map(|b| [tape.jet(b, 0), tape.jet(b, 1)]));
        }
        Ok(out)
    }

    fn values(&self, points: &[SpaceTime]) -> Result<Vec<[f64; DIM]>> {
        check_velocity_net(self)?;
        let mut out = Vec::with_capacity(points.len());
        let mut tape = JetTape::default();
        for chunk in points.chunks(ORACLE_CHUNK) {
            tape.run(self, chunk, 0)?;
            let v = tape.values();
            out.extend((0..chunk.len()).map(|b| [v[[0, b]], v[[1, b]]]));
        }
        Ok(out)
    }
}

/// The manufactured solution as an oracle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Manufactured {
    pub lambda: f64,
}

impl FieldOracle for Manufactured {
    fn jets(&self, x: [f64; 2], t: f64) -> Result<[Jet; DIM]> {
        Ok([
            exact_jet(x[0], x[1], t, self.lambda, 0),
            exact_jet(x[0], x[1], t, self.lambda, 1),
        ])
    }

    fn provenance(&self) -> Provenance {
        Provenance::Manufactured
    }
}

/// Oracle backed by a closure.
pub struct CustomOracle<F>(pub F);

impl<F> FieldOracle for CustomOracle<F>
where
    F: Fn([f64; 2], f64) -> [Jet; DIM],
{
    fn jets(&self, x: [f64; 2], t: f64) -> Result<[Jet; DIM]> {
        Ok((self.0)(x, t))
    }

    fn provenance(&self) -> Provenance {
        Provenance::Custom
    }
}

fn finite_jets(jets: [Jet; DIM], x: [f64; 2], t: f64) -> Result<[Jet; DIM]> {
    if jets.iter().all(Jet::is_finite) {
        Ok(jets)
    } else {
        Err(Error::NonFinite(format!("jet at x={x:?}, t={t}")))
    }
}

/// Interior residual from the component jets `jets[j]`.
pub fn pde_residual_jets(jets: &[Jet], lambda: f64, f: [f64; 2]) -> [f64; 2] {
    let mut r = [0.0; 2];
    for (j, rj) in r.iter_mut().enumerate() {
        let jet = &jets[j];
        let transport: f64 = (0..DIM).map(|i| jets[i].value * jet.grad[i]).sum();
        *rj = jet.dt + transport + lambda * jet.lap + jet.bih - f[j];
    }
    r
}

/// Transposed derivative of [`pde_residual_jets`].
pub fn pde_residual_pullback(jets: &[Jet], lambda: f64, rbar: &[f64], adj: &mut [JetAdjoint]) {
    for j in 0..DIM {
        let rb = rbar[j];
        adj[j].dt += rb;
        for i in 0..DIM {
            adj[i].value += rb * jets[j].grad[i];
            adj[j].grad[i] += rb * jets[i].value;
        }
        adj[j].add_lap(lambda * rb);
        adj[j].add_bih(rb);
    }
}

/// `R_PDE[v](x, t)` for the oracle's field.
pub fn pde_residual(
    oracle: &dyn FieldOracle,
    x: [f64; 2],
    t: f64,
    lambda: f64,
    mms: bool,
) -> Result<[f64; 2]> {
    let jets = finite_jets(oracle.jets(x, t)?, x, t)?;
    let f = if mms { forcing(x[0], x[1], t, lambda) } else { [0.0; 2] };
    Ok(pde_residual_jets(&jets, lambda, f))
}

/// The partner of a lower-face point on the upper face `x_axis = 2`.
pub fn opposite_point(x: [f64; 2], axis: usize) -> [f64; 2] {
    let mut y = x;
    y[axis] += PERIOD;
    y
}

/// Periodic mismatches `[value, ∂ᵢ, Δ, ∂ᵢΔ]` between the jets on the lower
/// face (`lower`) and on the upper face (`upper`), flattened as
/// `4·kind + component`.
pub fn boundary_residual_jets(lower: &[Jet], upper: &[Jet], axis: usize) -> [f64; 8] {
    let mut r = [0.0; 8];
    for c in 0..DIM {
        let (l, u) = (&lower[c], &upper[c]);
        r[c] = l.value - u.value;
        r[DIM + c] = l.grad[axis] - u.grad[axis];
        r[2 * DIM + c] = l.lap - u.lap;
        r[3 * DIM + c] = l.grad_lap[axis] - u.grad_lap[axis];
    }
    r
}

/// Transposed derivative of [`boundary_residual_jets`]; `adj` holds the
/// lower-face adjoints followed by the upper-face ones.
pub fn boundary_residual_pullback(axis: usize, rbar: &[f64], adj: &mut [JetAdjoint]) {
    for (side, sign) in [(0, 1.0), (1, -1.0)] {
        for c in 0..DIM {
            let a = &mut adj[side * DIM + c];
            a.value += sign * rbar[c];
            a.grad[axis] += sign * rbar[DIM + c];
            a.add_lap(sign * rbar[2 * DIM + c]);
            a.add_grad_lap(axis, sign * rbar[3 * DIM + c]);
        }
    }
}

/// The four periodic-mismatch residuals at a point `x` of the face
/// `x_axis = 0`, each a `DIM`-vector.
pub fn boundary_residuals(
    oracle: &dyn FieldOracle,
    x: [f64; 2],
    t: f64,
    axis: usize,
) -> Result<[[f64; DIM]; 4]> {
    if axis >= DIM {
        return Err(Error::InvalidArgument(format!("axis {axis} in dimension {DIM}")));
    }
    if x[axis].abs() > 1e-12 {
        return Err(Error::NotOnFace { axis, point: x });
    }
    let y = opposite_point(x, axis);
    let lower = finite_jets(oracle.jets(x, t)?, x, t)?;
    let upper = finite_jets(oracle.jets(y, t)?, y, t)?;
    let r = boundary_residual_jets(&lower, &upper, axis);
    Ok([[r[0], r[1]], [r[2], r[3]], [r[4], r[5]], [r[6], r[7]]])
}

/// `v(x, 0) − u₀(x)` against the manufactured initial data.
pub fn initial_residual(oracle: &dyn FieldOracle, x: [f64; 2]) -> Result<[f64; 2]> {
    let jets = finite_jets(oracle.jets(x, 0.0)?, x, 0.0)?;
    let u0 = exact_solution(x[0], x[1], 0.0, 0.0);
    Ok([jets[0].value - u0[0], jets[1].value - u0[1]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn poly_oracle(f: impl Fn(f64) -> [f64; 5]) -> CustomOracle<impl Fn([f64; 2], f64) -> [Jet; 2]> {
        // f(x₁) returns (p, p', p'', p''', p'''') for u = (p(x₁), 0)
        CustomOracle(move |x: [f64; 2], _t: f64| {
            let d = f(x[0]);
            [
                Jet::from_partials(d[0], 0.0, [d[1], 0.0], [d[2], 0.0], [d[3], 0.0, 0.0, 0.0], [d[4], 0.0, 0.0]),
                Jet::default(),
            ]
        })
    }

    #[test]
    fn exact_solution_values() {
        assert_eq!(exact_solution(0.0, 0.5, 0.0, 0.7), [-1.0, 0.0]);
        let a = exact_solution(0.3, 1.1, 0.0, 0.0);
        let b = exact_solution(0.3, 1.1, 0.8, 0.0);
        assert_eq!(a, b);
        let u = exact_solution(0.5, 0.5, 1.0, 0.01);
        assert!(u[0].abs() < 1e-16);
    }

    #[test]
    fn exact_jet_examples() {
        let j = exact_jet(0.0, 0.5, 0.0, 0.01, 0);
        assert!((j.lap - 2.0 * PI * PI).abs() < 1e-12);
        assert!((j.lap - 19.739_208_8).abs() < 1e-7);
        assert!((j.bih + 4.0 * PI.powi(4)).abs() < 1e-10);
        assert!((j.bih + 389.636_3).abs() < 1e-4);
        assert!((j.dt - PI * PI / 4.0 * 0.01).abs() < 1e-15);
        assert!((j.dt - 0.024_674_01).abs() < 1e-8);
    }

    #[test]
    fn exact_jet_mixed_partials() {
        // ∂x²∂y² of cos(πx)sin(πy) is π⁴cos(πx)sin(πy)
        let (x, y) = (0.31, 1.27);
        let j = exact_jet(x, y, 0.0, 0.0, 0);
        let base = -(PI * x).cos() * (PI * y).sin();
        assert!((j.bih_parts[1] - PI.powi(4) * base).abs() < 1e-11);
        assert!((j.third[1] - PI.powi(3) * (PI * x).cos() * (PI * y).cos()).abs() < 1e-11);
        assert!((j.third[2] + PI.powi(3) * (PI * x).sin() * (PI * y).sin()).abs() < 1e-11);
    }

    #[test]
    fn forcing_matches_closed_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..200 {
            let (x, y, t) = (rng.gen::<f64>() * 2.0, rng.gen::<f64>() * 2.0, rng.gen::<f64>());
            for lambda in [0.0, 0.01, 0.3] {
                let e = decay(t, lambda);
                let k = -PI * PI * lambda / 4.0 - 2.0 * PI * PI * lambda + 4.0 * PI.powi(4);
                let u = exact_solution(x, y, t, lambda);
                let f = forcing(x, y, t, lambda);
                let g1 = k * u[0] - PI / 2.0 * (2.0 * PI * x).sin() * e * e;
                let g2 = k * u[1] - PI / 2.0 * (2.0 * PI * y).sin() * e * e;
                assert!((f[0] - g1).abs() < 1e-10, "{f:?} vs {g1}");
                assert!((f[1] - g2).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn forcing_is_time_independent_without_damping() {
        assert_eq!(forcing(0.3, 0.7, 0.0, 0.0), forcing(0.3, 0.7, 1.0, 0.0));
    }

    #[test]
    fn forcing_against_finite_differences() {
        // λ = 0: f₁ = u_t + u u_x + v u_y + Δ²u with u_t = 0
        let (x, y) = (0.25, 0.25);
        let h = 1e-2;
        let u = |x: f64, y: f64| exact_solution(x, y, 0.0, 0.0);
        let d1 = |g: &dyn Fn(f64) -> f64, z: f64| (g(z - 2.0 * h) - 8.0 * g(z - h) + 8.0 * g(z + h) - g(z + 2.0 * h)) / (12.0 * h);
        let ux = d1(&|s| u(s, y)[0], x);
        let uy = d1(&|s| u(x, s)[0], y);
        let d4 = |g: &dyn Fn(f64) -> f64, z: f64| {
            (-g(z - 3.0 * h) + 12.0 * g(z - 2.0 * h) - 39.0 * g(z - h) + 56.0 * g(z) - 39.0 * g(z + h)
                + 12.0 * g(z + 2.0 * h)
                - g(z + 3.0 * h))
                / (6.0 * h.powi(4))
        };
        let uxxxx = d4(&|s| u(s, y)[0], x);
        let uyyyy = d4(&|s| u(x, s)[0], y);
        let d2 = |g: &dyn Fn(f64) -> f64, z: f64| (-g(z - 2.0 * h) + 16.0 * g(z - h) - 30.0 * g(z) + 16.0 * g(z + h) - g(z + 2.0 * h)) / (12.0 * h * h);
        let uxxyy = d2(&|s| d2(&|r| u(r, s)[0], x), y);
        let v = u(x, y);
        let want = v[0] * ux + v[1] * uy + uxxxx + 2.0 * uxxyy + uyyyy;
        let f = forcing(x, y, 0.0, 0.0);
        assert!((f[0] - want).abs() < 1e-6 * want.abs(), "{} vs {want}", f[0]);
    }

    #[test]
    fn forcing_at_quarter_point() {
        // u = v = ∓1/2 there, so f₁ = 4π⁴·(−1/2) − (π/2)·sin(π/2)
        let f = forcing(0.25, 0.25, 0.0, 0.0);
        assert!((f[0] - (-2.0 * PI.powi(4) - PI / 2.0)).abs() < 1e-8);
    }

    #[test]
    fn pde_residual_examples() {
        let zero = CustomOracle(|_: [f64; 2], _: f64| [Jet::default(); 2]);
        assert_eq!(pde_residual(&zero, [0.4, 0.9], 0.2, 0.01, false).unwrap(), [0.0, 0.0]);

        let sq = poly_oracle(|x| [x * x, 2.0 * x, 2.0, 0.0, 0.0]);
        let x1 = 0.7;
        let r = pde_residual(&sq, [x1, 0.3], 0.0, 1.0, false).unwrap();
        assert!((r[0] - (2.0 * x1.powi(3) + 2.0)).abs() < 1e-14);
        assert_eq!(r[1], 0.0);
        assert_eq!(pde_residual(&sq, [1.0, 0.3], 0.0, 1.0, false).unwrap(), [4.0, 0.0]);
    }

    #[test]
    fn manufactured_residuals_vanish() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for lambda in [0.0, 0.01] {
            let m = Manufactured { lambda };
            for _ in 0..1000 {
                let x = [rng.gen::<f64>() * 2.0, rng.gen::<f64>() * 2.0];
                let t = rng.gen::<f64>();
                let r = pde_residual(&m, x, t, lambda, true).unwrap();
                assert!(r[0].abs() < 1e-12 && r[1].abs() < 1e-12, "{r:?}");
                for axis in 0..2 {
                    let mut p = x;
                    p[axis] = 0.0;
                    for ri in boundary_residuals(&m, p, t, axis).unwrap() {
                        assert!(ri[0].abs() < 1e-11 && ri[1].abs() < 1e-11, "{ri:?}");
                    }
                }
                let r0 = initial_residual(&m, x).unwrap();
                assert!(r0[0].abs() < 1e-15 && r0[1].abs() < 1e-15);
            }
        }
    }

    #[test]
    fn boundary_residual_examples() {
        let lin = poly_oracle(|x| [x, 1.0, 0.0, 0.0, 0.0]);
        let r = boundary_residuals(&lin, [0.0, 0.4], 0.5, 0).unwrap();
        assert_eq!(r, [[-2.0, 0.0], [0.0, 0.0], [0.0, 0.0], [0.0, 0.0]]);

        let cube = poly_oracle(|x| [x.powi(3), 3.0 * x * x, 6.0 * x, 6.0, 0.0]);
        let r = boundary_residuals(&cube, [0.0, 0.4], 0.5, 0).unwrap();
        assert_eq!(r, [[-8.0, 0.0], [-12.0, 0.0], [-12.0, 0.0], [0.0, 0.0]]);

        assert!(matches!(
            boundary_residuals(&cube, [0.5, 0.4], 0.5, 0),
            Err(Error::NotOnFace { axis: 0, .. })
        ));
    }

    #[test]
    fn initial_residual_examples() {
        let zero = CustomOracle(|_: [f64; 2], _: f64| [Jet::default(); 2]);
        assert_eq!(initial_residual(&zero, [0.0, 0.5]).unwrap(), [1.0, -0.0]);
        let shifted = CustomOracle(|x: [f64; 2], t: f64| {
            let mut j = [exact_jet(x[0], x[1], t, 0.0, 0), exact_jet(x[0], x[1], t, 0.0, 1)];
            j[0].value += 0.1;
            j
        });
        let r = initial_residual(&shifted, [0.3, 1.7]).unwrap();
        assert!((r[0] - 0.1).abs() < 1e-15 && r[1] == 0.0);
    }

    #[test]
    fn non_finite_jets_are_rejected() {
        let bad = CustomOracle(|_: [f64; 2], _: f64| [Jet::constant(f64::NAN), Jet::default()]);
        assert!(matches!(pde_residual(&bad, [0.1, 0.1], 0.0, 0.0, false), Err(Error::NonFinite(_))));
    }

    #[test]
    fn nonlinear_cross_terms() {
        // R[v+w] − R[v] − R[w] = (v·∇)w + (w·∇)v for λ-linear parts
        let v = |x: [f64; 2]| {
            let (a, b) = (x[0], x[1]);
            [
                Jet::from_partials(a * b, 0.0, [b, a], [0.0, 0.0], [0.0; 4], [0.0; 3]),
                Jet::from_partials(a * a, 1.0, [2.0 * a, 0.0], [2.0, 0.0], [0.0; 4], [0.0; 3]),
            ]
        };
        let w = |x: [f64; 2]| {
            let (a, b) = (x[0], x[1]);
            [
                Jet::from_partials(b * b * b, 0.0, [0.0, 3.0 * b * b], [0.0, 6.0 * b], [0.0, 0.0, 0.0, 6.0], [0.0; 3]),
                Jet::from_partials(a + b, 0.0, [1.0, 1.0], [0.0; 2], [0.0; 4], [0.0; 3]),
            ]
        };
        let x = [0.6, 1.3];
        let (jv, jw) = (v(x), w(x));
        let sum = [jv[0].combine(1.0, &jw[0], 1.0), jv[1].combine(1.0, &jw[1], 1.0)];
        let lambda = 0.5;
        let r = |j: &[Jet]| pde_residual_jets(j, lambda, [0.0; 2]);
        let (rs, rv, rw) = (r(&sum), r(&jv), r(&jw));
        for c in 0..2 {
            let cross: f64 = (0..2)
                .map(|i| jv[i].value * jw[c].grad[i] + jw[i].value * jv[c].grad[i])
                .sum();
            assert!((rs[c] - rv[c] - rw[c] - cross).abs() < 1e-13);
        }
    }

    #[test]
    fn pullbacks_are_transposes() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut rand_jet = || {
            let mut g = || rng.gen::<f64>() - 0.5;
            Jet::from_partials(g(), g(), [g(), g()], [g(), g()], [g(), g(), g(), g()], [g(), g(), g()])
        };
        let jets: Vec<Jet> = (0..4).map(|_| rand_jet()).collect();
        let dirs: Vec<Jet> = (0..4).map(|_| rand_jet()).collect();
        let h = 1e-6;
        let lambda = 0.3;
        let perturbed = |s: f64| -> Vec<Jet> { jets.iter().zip(&dirs).map(|(j, d)| j.combine(1.0, d, s)).collect() };
        let dot = |adj: &[JetAdjoint], d: &[Jet]| -> f64 {
            adj.iter()
                .zip(d)
                .map(|(a, d)| {
                    a.value * d.value
                        + a.dt * d.dt
                        + a.grad[0] * d.grad[0]
                        + a.grad[1] * d.grad[1]
                        + a.hess_diag[0] * d.hess_diag[0]
                        + a.hess_diag[1] * d.hess_diag[1]
                        + (0..4).map(|k| a.third[k] * d.third[k]).sum::<f64>()
                        + (0..3).map(|k| a.bih_parts[k] * d.bih_parts[k]).sum::<f64>()
                })
                .sum()
        };

        let rbar = [0.7, -1.3];
        let mut adj = vec![JetAdjoint::default(); 2];
        pde_residual_pullback(&jets[..2], lambda, &rbar, &mut adj);
        let (p, m) = (perturbed(h), perturbed(-h));
        let rp = pde_residual_jets(&p[..2], lambda, [0.0; 2]);
        let rm = pde_residual_jets(&m[..2], lambda, [0.0; 2]);
        let fd: f64 = (0..2).map(|c| rbar[c] * (rp[c] - rm[c]) / (2.0 * h)).sum();
        assert!((fd - dot(&adj, &dirs[..2])).abs() < 1e-8);

        for axis in 0..2 {
            let rbar: Vec<f64> = (0..8).map(|k| (k as f64 * 0.37).sin()).collect();
            let mut adj = vec![JetAdjoint::default(); 4];
            boundary_residual_pullback(axis, &rbar, &mut adj);
            let rp = boundary_residual_jets(&p[..2], &p[2..], axis);
            let rm = boundary_residual_jets(&m[..2], &m[2..], axis);
            let fd: f64 = (0..8).map(|k| rbar[k] * (rp[k] - rm[k]) / (2.0 * h)).sum();
            assert!((fd - dot(&adj, &dirs)).abs() < 1e-8);
        }
    }
}
