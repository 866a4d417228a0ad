//! Littlewood–Paley blocks, homogeneous Besov norms on the periodic square,
//! and the space-time integrals of the regularity criteria evaluated on
//! solver trajectories.
//!
//! The radial profile is `φ(ξ) = χ(ξ) − χ(2ξ)` with
//! `χ(ξ) = g(2−|ξ|) / (g(2−|ξ|) + g(|ξ|−1))`, `g(s) = e^{−1/s}` for `s > 0`,
//! so `supp φ ⊂ {1/2 < |ξ| < 2}` and `Σ_j φ(2^{−j}ξ) = 1` for `ξ ≠ 0`.

use std::fmt;
use std::fs;
use std::ops::RangeInclusive;
use std::path::Path;
use std::str::FromStr;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::physics::DIM;
use crate::spectral::{GridField, Trajectory};

fn g(s: f64) -> f64 {
    if s > 0.0 {
        (-1.0 / s).exp()
    } else {
        0.0
    }
}

/// Smooth cutoff: one on `|ξ| ≤ 1`, zero on `|ξ| ≥ 2`.
pub fn chi(r: f64) -> f64 {
    let r = r.abs();
    if r <= 1.0 {
        return 1.0;
    }
    if r >= 2.0 {
        return 0.0;
    }
    let (a, b) = (g(2.0 - r), g(r - 1.0));
    a / (a + b)
}

/// Annular profile `φ(ξ) = χ(ξ) − χ(2ξ)`.
pub fn phi(r: f64) -> f64 {
    chi(r) - chi(2.0 * r)
}

fn kmag(field: &GridField, idx: usize) -> f64 {
    let k = field.wavevector(idx);
    k[0].hypot(k[1])
}

/// Block indices that can be nonzero on this grid.
pub fn active_blocks(field: &GridField) -> RangeInclusive<i32> {
    let n = field.size();
    let (mut kmin, mut kmax) = (f64::INFINITY, 0.0f64);
    for idx in 1..n * n {
        let k = kmag(field, idx);
        kmin = kmin.min(k);
        kmax = kmax.max(k);
    }
    kmin.log2().floor() as i32..=kmax.log2().ceil() as i32 + 1
}

/// `Δ_j f`: the spectrum multiplied by `φ(2^{−j}|k|)`, mean excluded.
pub fn lp_block(field: &GridField, j: i32) -> Result<GridField> {
    let scale = 2f64.powi(-j);
    let spectra: Vec<Vec<Complex64>> = field
        .spectra()
        .iter()
        .map(|s| {
            s.iter()
                .enumerate()
                .map(|(idx, &c)| if idx == 0 { Complex64::new(0.0, 0.0) } else { c * phi(scale * kmag(field, idx)) })
                .collect()
        })
        .collect();
    GridField::from_spectra(field.size(), field.period(), &spectra)
}

/// Exponent of a Lebesgue or sequence norm.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Exponent {
    Two,
    Inf,
}

impl Exponent {
    pub fn from_f64(p: f64) -> Result<Exponent> {
        if p == 2.0 {
            Ok(Exponent::Two)
        } else if p == f64::INFINITY {
            Ok(Exponent::Inf)
        } else {
            Err(Error::InvalidArgument(format!("only exponents 2 and ∞ are supported, got {p}")))
        }
    }
}

/// `‖f‖_{L^p}` of the (Euclidean) vector field: spectral Parseval for
/// `p = 2`, the grid maximum for `p = ∞`.
pub fn lp_norm(field: &GridField, p: Exponent) -> f64 {
    match p {
        Exponent::Two => field.l2_norm2_spectral().sqrt(),
        Exponent::Inf => field.sup_norm(),
    }
}

/// `‖f‖_{Ḃ^s_{p,q}} = ‖(2^{sj}‖Δ_j f‖_{L^p})_j‖_{ℓ^q}` over the active blocks.
pub fn besov_norm(field: &GridField, s: f64, p: f64, q: f64) -> Result<f64> {
    let (p, q) = (Exponent::from_f64(p)?, Exponent::from_f64(q)?);
    if !(-3.0..=3.0).contains(&s) {
        return Err(Error::InvalidArgument(format!("Besov index must lie in [−3, 3], got {s}")));
    }
    let mut acc: f64 = 0.0;
    for j in active_blocks(field) {
        let v = 2f64.powf(s * j as f64) * lp_norm(&lp_block(field, j)?, p);
        acc = match q {
            Exponent::Two => acc + v * v,
            Exponent::Inf => acc.max(v),
        };
    }
    Ok(match q {
        Exponent::Two => acc.sqrt(),
        Exponent::Inf => acc,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CriterionId {
    /// `∫ ‖u‖^{8/5}_{Ḃ^{−1/2}_{∞,∞}} dt`
    #[serde(rename = "T3.2")]
    T3_2,
    /// `∫ ‖u_i‖²_{Ḃ^{∓1/2}_{∞,∞}} dt`, i = 1, 2
    #[serde(rename = "T3.10Y")]
    T3_10Y,
    /// `∫ ‖∇u‖²_{Ḃ^{−1}_{∞,∞}} + ‖∇u‖²_{L²} dt`
    #[serde(rename = "T3.12H")]
    T3_12H,
    /// `∫ ‖∇·u‖²_{Ḃ⁰_{2,2}} dt`
    #[serde(rename = "T3.10kM")]
    T3_10KM,
}

impl CriterionId {
    pub const ALL: [CriterionId; 4] = [CriterionId::T3_2, CriterionId::T3_10Y, CriterionId::T3_12H, CriterionId::T3_10KM];

    pub fn as_str(self) -> &'static str {
        match self {
            CriterionId::T3_2 => "T3.2",
            CriterionId::T3_10Y => "T3.10Y",
            CriterionId::T3_12H => "T3.12H",
            CriterionId::T3_10KM => "T3.10kM",
        }
    }
}

impl fmt::Display for CriterionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for CriterionId {
    type Err = Error;

    fn from_str(s: &str) -> Result<CriterionId> {
        CriterionId::ALL
            .into_iter()
            .find(|c| c.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown criterion `{s}` (expected T3.2, T3.10Y, T3.12H or T3.10kM)")))
    }
}

/// One time series of norms and its integral `∫ norm^exponent dt`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionColumn {
    pub label: String,
    pub exponent: f64,
    pub norms: Vec<f64>,
    pub integral: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriterionSeries {
    pub id: CriterionId,
    pub times: Vec<f64>,
    pub columns: Vec<CriterionColumn>,
    /// Sum of the column integrals.
    pub integral: f64,
}

/// Trapezoid rule on possibly nonuniform times.
pub fn trapezoid(times: &[f64], values: &[f64]) -> f64 {
    times
        .windows(2)
        .zip(values.windows(2))
        .map(|(t, v)| 0.5 * (t[1] - t[0]) * (v[0] + v[1]))
        .sum()
}

fn component(field: &GridField, c: usize) -> Result<GridField> {
    GridField::from_values(field.size(), field.period(), vec![field.values(c).to_vec()])
}

fn column_norms(id: CriterionId, u: &GridField) -> Result<Vec<f64>> {
    let inf = f64::INFINITY;
    Ok(match id {
        CriterionId::T3_2 => vec![besov_norm(u, -0.5, inf, inf)?],
        CriterionId::T3_10Y => {
            let mut v = Vec::with_capacity(4);
            for c in 0..DIM {
                let uc = component(u, c)?;
                v.push(besov_norm(&uc, -0.5, inf, inf)?);
                v.push(besov_norm(&uc, 0.5, inf, inf)?);
            }
            v
        }
        CriterionId::T3_12H => {
            let grad = u.gradient()?;
            vec![besov_norm(&grad, -1.0, inf, inf)?, lp_norm(&grad, Exponent::Two)]
        }
        CriterionId::T3_10KM => vec![besov_norm(&u.divergence()?, 0.0, 2.0, 2.0)?],
    })
}

fn columns(id: CriterionId) -> Vec<(&'static str, f64)> {
    match id {
        CriterionId::T3_2 => vec![("u_B-1/2_inf_inf", 1.6)],
        CriterionId::T3_10Y => vec![
            ("u1_B-1/2_inf_inf", 2.0),
            ("u1_B1/2_inf_inf", 2.0),
            ("u2_B-1/2_inf_inf", 2.0),
            ("u2_B1/2_inf_inf", 2.0),
        ],
        CriterionId::T3_12H => vec![("grad_u_B-1_inf_inf", 2.0), ("grad_u_L2", 2.0)],
        CriterionId::T3_10KM => vec![("div_u_B0_2_2", 2.0)],
    }
}

/// Norm series and trapezoid integrals of one criterion along a trajectory.
pub fn criterion(traj: &Trajectory, id: CriterionId) -> Result<CriterionSeries> {
    if traj.snapshots.is_empty() {
        return Err(Error::InvalidArgument("empty trajectory".into()));
    }
    if traj.snapshots.iter().any(|s| s.field.components() != DIM) {
        return Err(Error::ShapeMismatch(format!("criteria need {DIM}-component fields")));
    }
    let times = traj.times();
    let spec = columns(id);
    let mut norms = vec![Vec::with_capacity(times.len()); spec.len()];
    for s in &traj.snapshots {
        for (col, v) in norms.iter_mut().zip(column_norms(id, &s.field)?) {
            col.push(v);
        }
    }
    let columns: Vec<CriterionColumn> = spec
        .into_iter()
        .zip(norms)
        .map(|((label, exponent), norms)| {
            let integrand: Vec<f64> = norms.iter().map(|v| v.powf(exponent)).collect();
            CriterionColumn {
                label: label.to_string(),
                exponent,
                integral: trapezoid(&times, &integrand),
                norms,
            }
        })
        .collect();
    let integral = columns.iter().map(|c| c.integral).sum();
    Ok(CriterionSeries {
        id,
        times,
        columns,
        integral,
    })
}

impl CriterionSeries {
    /// Header `t,<labels>`, one row per snapshot, then a `#` summary line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("t");
        for c in &self.columns {
            out.push(',');
            out.push_str(&c.label);
        }
        out.push('\n');
        for (i, t) in self.times.iter().enumerate() {
            out.push_str(&format!("{t:e}"));
            for c in &self.columns {
                out.push_str(&format!(",{:e}", c.norms[i]));
            }
            out.push('\n');
        }
        out.push_str(&format!("# criterion={} integral={:e}\n", self.id, self.integral));
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::{exact_solution, PERIOD};
    use crate::spectral::Snapshot;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    const TAU: f64 = 2.0 * PI;

    fn sine(a: f64) -> GridField {
        GridField::from_fn(32, TAU, 1, |x, _| vec![a * x.sin()]).unwrap()
    }

    #[test]
    fn profile_properties() {
        assert_eq!(phi(1.0), 1.0);
        assert_eq!(phi(0.5), 0.0);
        assert_eq!(phi(2.0), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..1000 {
            let r = 10f64.powf(rng.gen_range(-3.0..3.0));
            let s: f64 = (-20..=20).map(|j| phi(2f64.powi(-j) * r)).sum();
            assert!((s - 1.0).abs() <= 1e-10, "r={r} sum={s}");
        }
    }

    #[test]
    fn single_mode_lives_in_block_zero() {
        let f = sine(1.0);
        for j in active_blocks(&f) {
            let b = lp_block(&f, j).unwrap();
            if j == 0 {
                for (x, y) in b.values(0).iter().zip(f.values(0)) {
                    assert!((x - y).abs() < 1e-14);
                }
            } else {
                assert!(b.values(0).iter().all(|v| v.abs() < 1e-15), "block {j}");
            }
        }
        let r = active_blocks(&f);
        for j in [*r.start() - 1, *r.end() + 1] {
            assert!(lp_block(&f, j).unwrap().values(0).iter().all(|v| *v == 0.0));
        }
    }

    #[test]
    fn single_mode_besov_norms() {
        let a = 2.5;
        let f = sine(a);
        for s in [-3.0, -0.5, 0.0, 1.0, 3.0] {
            assert!((besov_norm(&f, s, f64::INFINITY, f64::INFINITY).unwrap() - a).abs() < 1e-10);
        }
        assert!((besov_norm(&f, 0.0, 2.0, 2.0).unwrap() - a * PI * 2f64.sqrt()).abs() < 1e-10);
        let z = GridField::zeros(16, TAU, 1).unwrap();
        for (p, q) in [(2.0, 2.0), (2.0, f64::INFINITY), (f64::INFINITY, 2.0)] {
            assert_eq!(besov_norm(&z, 0.7, p, q).unwrap(), 0.0);
        }
        assert!(besov_norm(&f, 0.0, 1.0, 2.0).is_err());
        assert!(besov_norm(&f, 4.0, 2.0, 2.0).is_err());
    }

    fn random_band_limited(seed: u64) -> GridField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let modes: Vec<(f64, f64, f64, f64)> = (0..8)
            .map(|_| (rng.gen_range(-6..=6) as f64, rng.gen_range(-6..=6) as f64, rng.gen_range(-1.0..1.0), rng.gen_range(0.0..TAU)))
            .collect();
        GridField::from_fn(32, TAU, 2, |x, y| {
            (0..2)
                .map(|c| modes.iter().skip(c).step_by(2).map(|(a, b, amp, ph)| amp * (a * x + b * y + ph).cos()).sum())
                .collect()
        })
        .unwrap()
    }

    #[test]
    fn reconstruction_scaling_and_equivalence() {
        let f = random_band_limited(1);
        let mut sum = vec![vec![0.0; 32 * 32]; 2];
        for j in active_blocks(&f) {
            let b = lp_block(&f, j).unwrap();
            for c in 0..2 {
                for (s, v) in sum[c].iter_mut().zip(b.values(c)) {
                    *s += v;
                }
            }
        }
        for c in 0..2 {
            let mean = f.spectrum(c)[0].re;
            for (s, v) in sum[c].iter().zip(f.values(c)) {
                assert!((s - (v - mean)).abs() < 1e-10);
            }
        }
        let b = besov_norm(&f, 0.0, 2.0, 2.0).unwrap();
        let l2 = f.l2_norm2_spectral().sqrt();
        assert!(b >= l2 / 2f64.sqrt() && b <= l2 * 2f64.sqrt());
        let g = GridField::from_values(32, TAU, (0..2).map(|c| f.values(c).iter().map(|v| -3.0 * v).collect()).collect()).unwrap();
        for q in [2.0, f64::INFINITY] {
            let (nf, ng) = (besov_norm(&f, 0.5, 2.0, q).unwrap(), besov_norm(&g, 0.5, 2.0, q).unwrap());
            assert!((ng - 3.0 * nf).abs() < 1e-10 * nf);
        }
    }

    #[test]
    fn distant_blocks_are_orthogonal() {
        let f = random_band_limited(2);
        let blocks: Vec<GridField> = active_blocks(&f).map(|j| lp_block(&f, j).unwrap()).collect();
        for a in 0..blocks.len() {
            for b in a + 2..blocks.len() {
                let dot: f64 = (0..2)
                    .map(|c| blocks[a].values(c).iter().zip(blocks[b].values(c)).map(|(x, y)| x * y).sum::<f64>())
                    .sum();
                assert!(dot.abs() < 1e-12);
            }
        }
    }

    fn steady(field: GridField) -> Trajectory {
        Trajectory {
            lambda: 0.0,
            snapshots: (0..5).map(|i| Snapshot { t: 0.25 * i as f64, field: field.clone() }).collect(),
        }
    }

    #[test]
    fn criteria_examples() {
        let a = 1.7;
        let tr = steady(GridField::from_fn(32, TAU, 2, |x, _| vec![a * x.sin(), 0.0]).unwrap());
        let s = criterion(&tr, CriterionId::T3_2).unwrap();
        assert!((s.integral - a.powf(1.6)).abs() < 1e-10);
        let zero = steady(GridField::zeros(16, TAU, 2).unwrap());
        for id in CriterionId::ALL {
            assert_eq!(criterion(&zero, id).unwrap().integral, 0.0);
        }
        let mms = steady(GridField::from_fn(32, PERIOD, 2, |x, y| exact_solution(x, y, 0.0, 0.0).to_vec()).unwrap());
        assert!(criterion(&mms, CriterionId::T3_10KM).unwrap().integral.abs() < 1e-10);
        let y = criterion(&mms, CriterionId::T3_10Y).unwrap();
        assert_eq!(y.columns.len(), 4);
        for c in &y.columns {
            assert!((c.integral - trapezoid(&y.times, &c.norms.iter().map(|v| v * v).collect::<Vec<_>>())).abs() <= 1e-12 * c.integral);
        }
        assert!("t3.10km".parse::<CriterionId>().is_ok());
        assert!("T9".parse::<CriterionId>().is_err());
        let csv = s.to_csv();
        assert!(csv.starts_with("t,u_B-1/2_inf_inf\n") && csv.contains("# criterion=T3.2"));
    }
}
