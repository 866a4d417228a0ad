//! Fourier analysis on the periodic square and a pseudo-spectral ETDRK4
//! solver for the forced vector Kuramoto–Sivashinsky equation.
//!
//! A [`GridField`] holds `n × n` samples per component at nodes
//! `(iℓ/n, jℓ/n)`, stored row-major with `i` (the `x₁` index) outermost,
//! together with the normalized coefficients
//! `f̂(m) = n⁻² Σ f(x) e^{−ik·x}`, `k = 2πm/ℓ`, in the same layout.
//! Continuous norms carry the factor `ℓ²`, so `‖f‖²_{L²} = ℓ² Σ|f̂|²`.

use std::f64::consts::PI;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::autodiff::{Jet, SpaceTime};
use crate::error::{Error, Result};
use crate::physics::{forcing, FieldOracle, Provenance, DIM};

/// Signed frequency index of storage index `a`, in `[−n/2, n/2)`.
pub fn signed_index(a: usize, n: usize) -> i64 {
    if a < n / 2 {
        a as i64
    } else {
        a as i64 - n as i64
    }
}

fn check_size(n: usize) -> Result<()> {
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::InvalidArgument(format!("grid size must be a power of two ≥ 2, got {n}")));
    }
    Ok(())
}

/// Planned two-dimensional transforms of one size.
#[derive(Clone)]
pub struct Fft2 {
    n: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2").field("n", &self.n).finish()
    }
}

impl Fft2 {
    pub fn new(n: usize) -> Result<Fft2> {
        check_size(n)?;
        let mut planner = FftPlanner::new();
        Ok(Fft2 {
            n,
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        })
    }

    pub fn size(&self) -> usize {
        self.n
    }

    fn transform(&self, buf: &mut [Complex64], plan: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        plan.process(buf);
        let mut col = vec![Complex64::new(0.0, 0.0); n];
        for j in 0..n {
            for i in 0..n {
                col[i] = buf[i * n + j];
            }
            plan.process(&mut col);
            for i in 0..n {
                buf[i * n + j] = col[i];
            }
        }
    }

    /// Normalized forward transform of real samples.
    pub fn forward(&self, values: &[f64]) -> Result<Vec<Complex64>> {
        let n = self.n;
        if values.len() != n * n {
            return Err(Error::ShapeMismatch(format!("expected {} samples, got {}", n * n, values.len())));
        }
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.transform(&mut buf, &self.fwd);
        let scale = 1.0 / (n * n) as f64;
        buf.iter_mut().for_each(|c| *c *= scale);
        Ok(buf)
    }

    /// Inverse of [`Fft2::forward`]; the imaginary part is discarded.
    pub fn inverse(&self, spectrum: &[Complex64]) -> Result<Vec<f64>> {
        let n = self.n;
        if spectrum.len() != n * n {
            return Err(Error::ShapeMismatch(format!("expected {} coefficients, got {}", n * n, spectrum.len())));
        }
        let mut buf = spectrum.to_vec();
        self.transform(&mut buf, &self.inv);
        Ok(buf.iter().map(|c| c.re).collect())
    }
}

/// Normalized forward transform of an `n × n` real grid.
pub fn dft2(values: &[f64], n: usize) -> Result<Vec<Complex64>> {
    Fft2::new(n)?.forward(values)
}

/// Inverse of [`dft2`].
pub fn idft2(spectrum: &[Complex64], n: usize) -> Result<Vec<f64>> {
    Fft2::new(n)?.inverse(spectrum)
}

/// A real vector field on the uniform periodic grid with its spectrum.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    n: usize,
    period: f64,
    values: Vec<Vec<f64>>,
    spectra: Vec<Vec<Complex64>>,
}

impl GridField {
    pub fn from_values(n: usize, period: f64, values: Vec<Vec<f64>>) -> Result<GridField> {
        let fft = Fft2::new(n)?;
        Self::from_values_with(&fft, period, values)
    }

    fn from_values_with(fft: &Fft2, period: f64, values: Vec<Vec<f64>>) -> Result<GridField> {
        if !(period > 0.0 && period.is_finite()) {
            return Err(Error::InvalidArgument(format!("period must be positive, got {period}")));
        }
        if values.is_empty() {
            return Err(Error::ShapeMismatch("field needs at least one component".into()));
        }
        if let Some(v) = values.iter().flatten().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("grid value {v}")));
        }
        let spectra = values.iter().map(|v| fft.forward(v)).collect::<Result<_>>()?;
        Ok(GridField {
            n: fft.size(),
            period,
            values,
            spectra,
        })
    }

    /// Field from spectra; Hermitian symmetry is the caller's responsibility
    /// and the stored spectrum is recomputed from the real part.
    pub fn from_spectra(n: usize, period: f64, spectra: &[Vec<Complex64>]) -> Result<GridField> {
        let fft = Fft2::new(n)?;
        let values = spectra.iter().map(|s| fft.inverse(s)).collect::<Result<_>>()?;
        Self::from_values_with(&fft, period, values)
    }

    /// Samples `f(x₁, x₂)` with `ncomp` components at the grid nodes.
    pub fn from_fn(n: usize, period: f64, ncomp: usize, f: impl Fn(f64, f64) -> Vec<f64>) -> Result<GridField> {
        check_size(n)?;
        let h = period / n as f64;
        let mut values = vec![vec![0.0; n * n]; ncomp];
        for i in 0..n {
            for j in 0..n {
                let v = f(i as f64 * h, j as f64 * h);
                if v.len() != ncomp {
                    return Err(Error::ShapeMismatch(format!("expected {ncomp} components, got {}", v.len())));
                }
                for c in 0..ncomp {
                    values[c][i * n + j] = v[c];
                }
            }
        }
        Self::from_values(n, period, values)
    }

    pub fn zeros(n: usize, period: f64, ncomp: usize) -> Result<GridField> {
        Self::from_values(n, period, vec![vec![0.0; n * n]; ncomp.max(1)])
    }

    pub fn size(&self) -> usize {
        self.n
    }

    pub fn period(&self) -> f64 {
        self.period
    }

    pub fn components(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self, c: usize) -> &[f64] {
        &self.values[c]
    }

    pub fn spectrum(&self, c: usize) -> &[Complex64] {
        &self.spectra[c]
    }

    pub fn spectra(&self) -> &[Vec<Complex64>] {
        &self.spectra
    }

    /// Node coordinates of storage index `idx`.
    pub fn node(&self, idx: usize) -> [f64; 2] {
        let h = self.period / self.n as f64;
        [(idx / self.n) as f64 * h, (idx % self.n) as f64 * h]
    }

    /// Wavevector of storage index `idx`.
    pub fn wavevector(&self, idx: usize) -> [f64; 2] {
        wavevector(idx, self.n, self.period)
    }

    /// `‖f‖²_{L²}` by the rectangle rule on the grid.
    pub fn l2_norm2_grid(&self) -> f64 {
        let cell = (self.period / self.n as f64).powi(2);
        cell * self.values.iter().flatten().map(|v| v * v).sum::<f64>()
    }

    /// `‖f‖²_{L²}` from the coefficients.
    pub fn l2_norm2_spectral(&self) -> f64 {
        self.period.powi(2) * self.spectra.iter().flatten().map(|c| c.norm_sqr()).sum::<f64>()
    }

    /// Largest `|f̂(m) − conj f̂(−m)|` over all modes and components.
    pub fn hermitian_defect(&self) -> f64 {
        let n = self.n;
        let mut worst: f64 = 0.0;
        for s in &self.spectra {
            for a in 0..n {
                for b in 0..n {
                    let mirror = ((n - a) % n) * n + (n - b) % n;
                    worst = worst.max((s[a * n + b] - s[mirror].conj()).norm());
                }
            }
        }
        worst
    }

    /// Pointwise maximum of the Euclidean norm over the components.
    pub fn sup_norm(&self) -> f64 {
        (0..self.n * self.n)
            .map(|i| self.values.iter().map(|v| v[i] * v[i]).sum::<f64>().sqrt())
            .fold(0.0, f64::max)
    }

    /// Spectral partial derivative `∂_{x₁}^{a} ∂_{x₂}^{b}` of every component.
    pub fn derivative(&self, a: u32, b: u32) -> Result<GridField> {
        let spectra: Vec<Vec<Complex64>> = self
            .spectra
            .iter()
            .map(|s| {
                s.iter()
                    .enumerate()
                    .map(|(idx, &c)| c * deriv_symbol(idx, self.n, self.period, a, b))
                    .collect()
            })
            .collect();
        Self::from_spectra(self.n, self.period, &spectra)
    }

    /// Divergence of a two-component field.
    pub fn divergence(&self) -> Result<GridField> {
        if self.components() != DIM {
            return Err(Error::ShapeMismatch(format!("divergence needs {DIM} components")));
        }
        let n = self.n;
        let s: Vec<Complex64> = (0..n * n)
            .map(|idx| {
                self.spectra[0][idx] * deriv_symbol(idx, n, self.period, 1, 0)
                    + self.spectra[1][idx] * deriv_symbol(idx, n, self.period, 0, 1)
            })
            .collect();
        Self::from_spectra(n, self.period, &[s])
    }

    /// The `2·ncomp` first partials `∂ⱼ f_c`, ordered `(c, j)`.
    pub fn gradient(&self) -> Result<GridField> {
        let mut spectra = Vec::with_capacity(DIM * self.components());
        for s in &self.spectra {
            for (a, b) in [(1, 0), (0, 1)] {
                spectra.push(
                    s.iter()
                        .enumerate()
                        .map(|(idx, &c)| c * deriv_symbol(idx, self.n, self.period, a, b))
                        .collect(),
                );
            }
        }
        Self::from_spectra(self.n, self.period, &spectra)
    }

    /// Evaluates the trigonometric interpolant of component `c` and its
    /// partial `∂_{x₁}^{a} ∂_{x₂}^{b}` at an arbitrary point.
    pub fn eval_partial(&self, c: usize, x: [f64; 2], a: u32, b: u32) -> f64 {
        let n = self.n;
        let s = &self.spectra[c];
        let mut acc = 0.0;
        for idx in 0..n * n {
            let k = self.wavevector(idx);
            let sym = deriv_symbol(idx, n, self.period, a, b);
            let phase = Complex64::from_polar(1.0, k[0] * x[0] + k[1] * x[1]);
            acc += (s[idx] * sym * phase).re;
        }
        acc
    }
}

/// Wavevector of storage index `idx` on an `n × n` grid of period `ℓ`.
pub fn wavevector(idx: usize, n: usize, period: f64) -> [f64; 2] {
    let w = 2.0 * PI / period;
    [w * signed_index(idx / n, n) as f64, w * signed_index(idx % n, n) as f64]
}

/// Fourier symbol `(ik₁)^a (ik₂)^b`; odd derivatives vanish on the
/// unpaired Nyquist index.
fn deriv_symbol(idx: usize, n: usize, period: f64, a: u32, b: u32) -> Complex64 {
    let k = wavevector(idx, n, period);
    let nyq = [idx / n == n / 2, idx % n == n / 2];
    let mut sym = Complex64::new(1.0, 0.0);
    for (axis, p) in [a, b].into_iter().enumerate() {
        if p % 2 == 1 && nyq[axis] {
            return Complex64::new(0.0, 0.0);
        }
        sym *= Complex64::new(0.0, k[axis]).powu(p);
    }
    sym
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SobolevNorm {
    pub value: f64,
    /// A nonzero mean was excluded from a homogeneous norm.
    pub mean_dropped: bool,
}

/// `(ℓ² Σ w(k)|f̂(k)|²)^{1/2}` summed over components, with `w = |k|^{2s}`
/// (mean excluded) when homogeneous and `w = 1 + |k|^{2s}` otherwise.
pub fn sobolev_norm(field: &GridField, s: f64, homogeneous: bool) -> Result<SobolevNorm> {
    if !(-4.0..=4.0).contains(&s) {
        return Err(Error::InvalidArgument(format!("Sobolev index must lie in [−4, 4], got {s}")));
    }
    let mut sum = 0.0;
    let mut mean_dropped = false;
    for spec in field.spectra() {
        for (idx, c) in spec.iter().enumerate() {
            let k = field.wavevector(idx);
            let k2 = k[0] * k[0] + k[1] * k[1];
            let w = if idx == 0 {
                if homogeneous {
                    mean_dropped |= c.norm() > 1e-14 * (1.0 + spec.iter().map(|z| z.norm()).fold(0.0, f64::max));
                    0.0
                } else {
                    1.0 + if s == 0.0 { 1.0 } else { 0.0 }
                }
            } else {
                let ks = k2.powf(s);
                if homogeneous {
                    ks
                } else {
                    1.0 + ks
                }
            };
            sum += w * c.norm_sqr();
        }
    }
    Ok(SobolevNorm {
        value: (field.period().powi(2) * sum).sqrt(),
        mean_dropped,
    })
}

/// Right-hand side forcing of the solver.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Forcing {
    Off,
    /// The manufactured forcing for the solver's λ.
    Manufactured,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub lambda: f64,
    pub dt: f64,
    pub forcing: Forcing,
    /// Include `(u·∇)u`.
    pub nonlinear: bool,
    /// Apply the 2/3 rule to the nonlinear term.
    pub dealias: bool,
}

impl SolverConfig {
    pub fn new(lambda: f64, dt: f64) -> SolverConfig {
        SolverConfig {
            lambda,
            dt,
            forcing: Forcing::Off,
            nonlinear: true,
            dealias: true,
        }
    }
}

/// Points on the contour used for the φ-functions.
pub const CONTOUR_POINTS: usize = 32;

/// Upper bound on `dt · max|u| · k_max` accepted by a step.
pub const CFL_LIMIT: f64 = 2.0;

/// ETDRK4 integrator for a fixed grid, period and step.
#[derive(Clone, Debug)]
pub struct Etdrk4 {
    fft: Fft2,
    period: f64,
    cfg: SolverConfig,
    e: Vec<f64>,
    e2: Vec<f64>,
    q: Vec<f64>,
    f1: Vec<f64>,
    f2: Vec<f64>,
    f3: Vec<f64>,
    mask: Vec<bool>,
    k_max: f64,
}

/// Linear rate `λ|k|² − |k|⁴`.
pub fn linear_rate(k: [f64; 2], lambda: f64) -> f64 {
    let k2 = k[0] * k[0] + k[1] * k[1];
    lambda * k2 - k2 * k2
}

fn phi_coefficients(l: f64, h: f64) -> [f64; 4] {
    let m = CONTOUR_POINTS;
    let mut acc = [0.0; 4];
    for j in 0..m {
        let r = Complex64::from_polar(1.0, PI * (j as f64 + 0.5) / m as f64);
        let z = Complex64::new(h * l, 0.0) + r;
        let ez = z.exp();
        let z3 = z * z * z;
        acc[0] += (((z / 2.0).exp() - 1.0) / z).re;
        acc[1] += ((-4.0 - z + ez * (4.0 - 3.0 * z + z * z)) / z3).re;
        acc[2] += ((2.0 + z + ez * (z - 2.0)) / z3).re;
        acc[3] += ((-4.0 - 3.0 * z - z * z + ez * (4.0 - z)) / z3).re;
    }
    acc.map(|a| h * a / m as f64)
}

impl Etdrk4 {
    pub fn new(n: usize, period: f64, cfg: SolverConfig) -> Result<Etdrk4> {
        if !(cfg.dt > 0.0 && cfg.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!("time step must be positive, got {}", cfg.dt)));
        }
        if !(cfg.lambda >= 0.0 && cfg.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!("λ must be ≥ 0, got {}", cfg.lambda)));
        }
        let fft = Fft2::new(n)?;
        let h = cfg.dt;
        let nn = n * n;
        let (mut e, mut e2, mut q, mut f1, mut f2, mut f3) =
            (vec![0.0; nn], vec![0.0; nn], vec![0.0; nn], vec![0.0; nn], vec![0.0; nn], vec![0.0; nn]);
        let mut mask = vec![true; nn];
        let cutoff = n as f64 / 3.0;
        let mut k_max: f64 = 0.0;
        for idx in 0..nn {
            let k = wavevector(idx, n, period);
            let l = linear_rate(k, cfg.lambda);
            e[idx] = (l * h).exp();
            e2[idx] = (l * h / 2.0).exp();
            [q[idx], f1[idx], f2[idx], f3[idx]] = phi_coefficients(l, h);
            let (a, b) = (signed_index(idx / n, n).abs() as f64, signed_index(idx % n, n).abs() as f64);
            if cfg.dealias {
                mask[idx] = a < cutoff && b < cutoff;
            }
            if mask[idx] {
                k_max = k_max.max(k[0].abs().max(k[1].abs()));
            }
        }
        Ok(Etdrk4 {
            fft,
            period,
            cfg,
            e,
            e2,
            q,
            f1,
            f2,
            f3,
            mask,
            k_max,
        })
    }

    pub fn config(&self) -> &SolverConfig {
        &self.cfg
    }

    /// `−ℱ[(u·∇)u] + ℱ[f]` for both components.
    fn nonlinear(&self, v: &[Vec<Complex64>], t: f64) -> Result<Vec<Vec<Complex64>>> {
        let n = self.fft.size();
        let nn = n * n;
        let mut out = vec![vec![Complex64::new(0.0, 0.0); nn]; DIM];
        if self.cfg.nonlinear {
            let filtered: Vec<Vec<Complex64>> = v
                .iter()
                .map(|s| s.iter().zip(&self.mask).map(|(&c, &keep)| if keep { c } else { Complex64::new(0.0, 0.0) }).collect())
                .collect();
            let u: Vec<Vec<f64>> = filtered.iter().map(|s| self.fft.inverse(s)).collect::<Result<_>>()?;
            let mut adv = vec![vec![0.0; nn]; DIM];
            for (axis, (a, b)) in [(1, 0), (0, 1)].into_iter().enumerate() {
                for c in 0..DIM {
                    let ds: Vec<Complex64> = filtered[c]
                        .iter()
                        .enumerate()
                        .map(|(idx, &z)| z * deriv_symbol(idx, n, self.period, a, b))
                        .collect();
                    let d = self.fft.inverse(&ds)?;
                    for i in 0..nn {
                        adv[c][i] += u[axis][i] * d[i];
                    }
                }
            }
            for c in 0..DIM {
                let s = self.fft.forward(&adv[c])?;
                for i in 0..nn {
                    if self.mask[i] {
                        out[c][i] -= s[i];
                    }
                }
            }
        }
        if self.cfg.forcing == Forcing::Manufactured {
            let h = self.period / n as f64;
            let mut fv = vec![vec![0.0; nn]; DIM];
            for i in 0..nn {
                let f = forcing((i / n) as f64 * h, (i % n) as f64 * h, t, self.cfg.lambda);
                fv[0][i] = f[0];
                fv[1][i] = f[1];
            }
            for c in 0..DIM {
                let s = self.fft.forward(&fv[c])?;
                for i in 0..nn {
                    out[c][i] += s[i];
                }
            }
        }
        Ok(out)
    }

    fn cfl_check(&self, v: &[Vec<Complex64>], t: f64) -> Result<()> {
        if !self.cfg.nonlinear {
            return Ok(());
        }
        let mut umax: f64 = 0.0;
        for s in v {
            umax = umax.max(self.fft.inverse(s)?.iter().fold(0.0, |m, x| m.max(x.abs())));
        }
        let c = self.cfg.dt * umax * self.k_max;
        if c > CFL_LIMIT {
            return Err(Error::Divergence(format!("CFL guard: dt·max|u|·k_max = {c:.3} at t={t}")));
        }
        Ok(())
    }

    /// Advances the spectra `v` from `t` to `t + dt`.
    pub fn step(&self, v: &mut [Vec<Complex64>], t: f64) -> Result<()> {
        if v.len() != DIM || v.iter().any(|s| s.len() != self.e.len()) {
            return Err(Error::ShapeMismatch("solver state must be two n×n spectra".into()));
        }
        self.cfl_check(v, t)?;
        let h = self.cfg.dt;
        let nn = self.e.len();
        let combine = |base: &[Vec<Complex64>], decay: &[f64], terms: &[(&[Vec<Complex64>], f64)]| -> Vec<Vec<Complex64>> {
            (0..DIM)
                .map(|c| {
                    (0..nn)
                        .map(|i| {
                            let mut z = base[c][i] * decay[i];
                            for (nl, w) in terms {
                                z += nl[c][i] * self.q[i] * *w;
                            }
                            z
                        })
                        .collect()
                })
                .collect()
        };
        let nv = self.nonlinear(v, t)?;
        let a = combine(v, &self.e2, &[(&nv, 1.0)]);
        let na = self.nonlinear(&a, t + h / 2.0)?;
        let b = combine(v, &self.e2, &[(&na, 1.0)]);
        let nb = self.nonlinear(&b, t + h / 2.0)?;
        let c = combine(&a, &self.e2, &[(&nb, 2.0), (&nv, -1.0)]);
        let nc = self.nonlinear(&c, t + h)?;
        for comp in 0..DIM {
            for i in 0..nn {
                v[comp][i] = v[comp][i] * self.e[i]
                    + nv[comp][i] * self.f1[i]
                    + (na[comp][i] + nb[comp][i]) * (2.0 * self.f2[i])
                    + nc[comp][i] * self.f3[i];
            }
        }
        if v.iter().flatten().any(|z| !(z.re.is_finite() && z.im.is_finite())) {
            return Err(Error::Divergence(format!("non-finite spectral state at t={}", t + h)));
        }
        Ok(())
    }
}

/// One stored solver state.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub t: f64,
    pub field: GridField,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub lambda: f64,
    pub snapshots: Vec<Snapshot>,
}

impl Trajectory {
    pub fn times(&self) -> Vec<f64> {
        self.snapshots.iter().map(|s| s.t).collect()
    }
}

/// Integrates from `u0` to time `horizon`. The step is shrunk so that an
/// integer number of steps lands on `horizon`; snapshots are taken every
/// `snapshot_every` steps and at the final time.
pub fn solve(u0: &GridField, horizon: f64, cfg: SolverConfig, snapshot_every: usize) -> Result<Trajectory> {
    if u0.components() != DIM {
        return Err(Error::ShapeMismatch(format!("initial field must have {DIM} components")));
    }
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::InvalidArgument(format!("T must be ≥ 0, got {horizon}")));
    }
    if snapshot_every == 0 {
        return Err(Error::InvalidArgument("snapshot_every must be positive".into()));
    }
    let mut snapshots = vec![Snapshot { t: 0.0, field: u0.clone() }];
    if horizon == 0.0 {
        return Ok(Trajectory {
            lambda: cfg.lambda,
            snapshots,
        });
    }
    let steps = (horizon / cfg.dt - 1e-9).ceil().max(1.0) as usize;
    let cfg = SolverConfig {
        dt: horizon / steps as f64,
        ..cfg
    };
    let solver = Etdrk4::new(u0.size(), u0.period(), cfg)?;
    let mut v: Vec<Vec<Complex64>> = u0.spectra().to_vec();
    for s in 0..steps {
        let t = s as f64 * cfg.dt;
        solver.step(&mut v, t)?;
        if (s + 1) % snapshot_every == 0 || s + 1 == steps {
            let t_new = if s + 1 == steps { horizon } else { (s + 1) as f64 * cfg.dt };
            snapshots.push(Snapshot {
                t: t_new,
                field: GridField::from_spectra(u0.size(), u0.period(), &v)?,
            });
        }
    }
    Ok(Trajectory {
        lambda: cfg.lambda,
        snapshots,
    })
}

/// Writes one snapshot: `n` (u64), `ℓ`, `t`, `λ` (f64), then each
/// component row-major, all little-endian.
pub fn write_snapshot(path: &Path, snap: &Snapshot, lambda: f64) -> Result<()> {
    let f = &snap.field;
    let mut buf = Vec::with_capacity(32 + 8 * f.components() * f.size() * f.size());
    buf.extend_from_slice(&(f.size() as u64).to_le_bytes());
    for v in [f.period(), snap.t, lambda] {
        buf.extend_from_slice(&v.to_le_bytes());
    }
    for c in 0..f.components() {
        for v in f.values(c) {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let mut file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    file.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Reads a file written by [`write_snapshot`]; returns the snapshot and λ.
pub fn read_snapshot(path: &Path) -> Result<(Snapshot, f64)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let field_err = |msg: String| Error::Field {
        path: path.to_path_buf(),
        field: "snapshot".into(),
        msg,
    };
    if bytes.len() < 32 {
        return Err(field_err(format!("header needs 32 bytes, file has {}", bytes.len())));
    }
    let word = |i: usize| -> [u8; 8] { bytes[8 * i..8 * i + 8].try_into().expect("8 bytes") };
    let n = u64::from_le_bytes(word(0)) as usize;
    let (period, t, lambda) = (f64::from_le_bytes(word(1)), f64::from_le_bytes(word(2)), f64::from_le_bytes(word(3)));
    let body = bytes.len() - 32;
    if n == 0 || n > 1 << 14 || body % (8 * n * n) != 0 || body == 0 {
        return Err(field_err(format!("payload of {body} bytes does not match n={n}")));
    }
    let ncomp = body / (8 * n * n);
    let values = (0..ncomp)
        .map(|c| (0..n * n).map(|i| f64::from_le_bytes(word(4 + c * n * n + i))).collect())
        .collect();
    Ok((
        Snapshot {
            t,
            field: GridField::from_values(n, period, values)?,
        },
        lambda,
    ))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnapshotEntry {
    pub t: f64,
    pub file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryIndex {
    pub n: usize,
    pub period: f64,
    pub lambda: f64,
    pub snapshots: Vec<SnapshotEntry>,
}

/// Writes `snap_XXXXX.bin` files and `index.json` into `dir`.
pub fn write_trajectory(dir: &Path, traj: &Trajectory) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let first = traj
        .snapshots
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty trajectory".into()))?;
    let mut entries = Vec::new();
    for (i, s) in traj.snapshots.iter().enumerate() {
        let file = format!("snap_{i:05}.bin");
        write_snapshot(&dir.join(&file), s, traj.lambda)?;
        entries.push(SnapshotEntry { t: s.t, file });
    }
    let index = TrajectoryIndex {
        n: first.field.size(),
        period: first.field.period(),
        lambda: traj.lambda,
        snapshots: entries,
    };
    let path = dir.join("index.json");
    let text = serde_json::to_string_pretty(&index).expect("index serializes");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn read_trajectory(index_path: &Path) -> Result<Trajectory> {
    let text = fs::read_to_string(index_path).map_err(|e| Error::io(index_path, e))?;
    let index: TrajectoryIndex = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: index_path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })?;
    let dir = index_path.parent().unwrap_or(Path::new("."));
    let snapshots = index
        .snapshots
        .iter()
        .map(|e| read_snapshot(&dir.join(&e.file)).map(|(s, _)| s))
        .collect::<Result<_>>()?;
    Ok(Trajectory {
        lambda: index.lambda,
        snapshots,
    })
}

/// Spectral-interpolation oracle on a trajectory. Jets exist only at
/// snapshot times; `∂_t` uses fourth-order differences of neighboring
/// snapshots, which must be equally spaced.
pub struct SpectralSnapshotOracle<'a> {
    traj: &'a Trajectory,
}

impl<'a> SpectralSnapshotOracle<'a> {
    pub fn new(traj: &'a Trajectory) -> Result<SpectralSnapshotOracle<'a>> {
        if traj.snapshots.len() < 5 {
            return Err(Error::InvalidArgument("time derivatives need at least five snapshots".into()));
        }
        if traj.snapshots.iter().any(|s| s.field.components() != DIM) {
            return Err(Error::ShapeMismatch(format!("snapshots must have {DIM} components")));
        }
        Ok(SpectralSnapshotOracle { traj })
    }

    fn index_of(&self, t: f64) -> Result<usize> {
        self.traj
            .snapshots
            .iter()
            .position(|s| (s.t - t).abs() <= 1e-12 * (1.0 + t.abs()))
            .ok_or_else(|| Error::InvalidArgument(format!("t={t} is not a snapshot time")))
    }
}

/// Fourth-order first-derivative stencils on five equally spaced samples,
/// by position of the evaluation point.
const DT_STENCILS: [[f64; 5]; 5] = [
    [-25.0, 48.0, -36.0, 16.0, -3.0],
    [-3.0, -10.0, 18.0, -6.0, 1.0],
    [1.0, -8.0, 0.0, 8.0, -1.0],
    [-1.0, 6.0, -18.0, 10.0, 3.0],
    [3.0, -16.0, 36.0, -48.0, 25.0],
];

impl FieldOracle for SpectralSnapshotOracle<'_> {
    fn jets(&self, x: [f64; 2], t: f64) -> Result<[Jet; DIM]> {
        let i = self.index_of(t)?;
        let snaps = &self.traj.snapshots;
        let start = i.saturating_sub(2).min(snaps.len() - 5);
        let h = (snaps[start + 4].t - snaps[start].t) / 4.0;
        let stencil = DT_STENCILS[i - start];
        let field = &snaps[i].field;
        let jets = std::array::from_fn(|c| {
            let p = |a: u32, b: u32| field.eval_partial(c, x, a, b);
            let dt = (0..5).map(|s| stencil[s] * snaps[start + s].field.eval_partial(c, x, 0, 0)).sum::<f64>() / (12.0 * h);
            Jet::from_partials(
                p(0, 0),
                dt,
                [p(1, 0), p(0, 1)],
                [p(2, 0), p(0, 2)],
                [p(3, 0), p(2, 1), p(1, 2), p(0, 3)],
                [p(4, 0), p(2, 2), p(0, 4)],
            )
        });
        Ok(jets)
    }

    fn provenance(&self) -> Provenance {
        Provenance::SpectralSnapshot
    }

    fn values(&self, points: &[SpaceTime]) -> Result<Vec<[f64; DIM]>> {
        points
            .iter()
            .map(|p| {
                let i = self.index_of(p[2])?;
                let f = &self.traj.snapshots[i].field;
                Ok([f.eval_partial(0, [p[0], p[1]], 0, 0), f.eval_partial(1, [p[0], p[1]], 0, 0)])
            })
            .collect()
    }
}
