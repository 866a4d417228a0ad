//! Midpoint quadrature on the interior `[0,2]² × [0,T]`, on the periodic
//! faces `{xᵢ = 0} × [0,T]` and on the initial slice `[0,2]² × {0}`.
//!
//! A set approximates `∫ g` by `|domain| · (1/M) · Σ g(y_m)`. For `g ∈ C²`
//! the midpoint rule on a tensor grid has error `O(M^{−2/dim})`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::SpaceTime;
use crate::error::{Error, Result};
use crate::physics::{DIM, PERIOD};

/// Compensated (Neumaier) summation.
#[derive(Clone, Copy, Debug, Default)]
pub struct KahanSum {
    sum: f64,
    comp: f64,
}

impl KahanSum {
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for KahanSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut k = KahanSum::default();
        iter.into_iter().for_each(|x| k.add(x));
        k
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum QuadKind {
    /// `[0,2]² × [0,T]`
    Interior,
    /// `{x_axis = 0} × [0,T]`; points are stored with the face coordinate.
    Boundary { axis: usize },
    /// `[0,2]²` at `t = 0`
    Initial,
    /// An arbitrary axis-aligned box.
    Box,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampling {
    Midpoint,
    UniformRandom { seed: u64 },
}

/// Equal-weight nodes over a box.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadSet {
    kind: QuadKind,
    sampling: Sampling,
    /// Box of the parameter coordinates the nodes are laid out in.
    lo: Vec<f64>,
    hi: Vec<f64>,
    /// Nodes per axis for midpoint grids; the total count otherwise.
    counts: Vec<usize>,
    /// Row-major nodes in the embedding coordinates.
    points: Vec<f64>,
    point_dim: usize,
    measure: f64,
}

/// Per-axis counts whose product is nearest `target`: the leading axes share
/// a count `N`, the last axis uses `N − 1`, `N` or `N + 1`. Ties go to the
/// smaller product.
pub fn grid_counts(target: usize, dim: usize) -> Vec<usize> {
    assert!(dim >= 1 && target >= 1);
    if dim == 1 {
        return vec![target];
    }
    let mut best: Option<(usize, Vec<usize>)> = None;
    let n_max = (target as f64).powf(1.0 / dim as f64).ceil() as usize + 2;
    for n in 1..=n_max {
        for last in n.saturating_sub(1).max(1)..=n + 1 {
            let prod = n.pow(dim as u32 - 1) * last;
            let better = match &best {
                None => true,
                Some((p, _)) => {
                    let (d_new, d_old) = (prod.abs_diff(target), p.abs_diff(target));
                    d_new < d_old || (d_new == d_old && prod < *p)
                }
            };
            if better {
                let mut c = vec![n; dim - 1];
                c.push(last);
                best = Some((prod, c));
            }
        }
    }
    best.expect("at least one candidate").1
}

impl QuadSet {
    /// Tensor midpoint grid over the box `[lo, hi]` with the given counts.
    pub fn midpoint_box(lo: &[f64], hi: &[f64], counts: &[usize]) -> Result<QuadSet> {
        check_box(lo, hi)?;
        if counts.len() != lo.len() || counts.contains(&0) {
            return Err(Error::InvalidArgument(format!("grid counts {counts:?} for a {}-D box", lo.len())));
        }
        let mut set = QuadSet {
            kind: QuadKind::Box,
            sampling: Sampling::Midpoint,
            lo: lo.to_vec(),
            hi: hi.to_vec(),
            counts: counts.to_vec(),
            points: Vec::new(),
            point_dim: lo.len(),
            measure: 0.0,
        };
        set.fill();
        Ok(set)
    }

    /// Midpoint grid over `[0,2]² × [0,T]` with about `target` nodes.
    pub fn midpoint_interior(target: usize, horizon: f64) -> Result<QuadSet> {
        if target < 8 {
            return Err(Error::InvalidArgument(format!("interior target {target} < 8")));
        }
        Self::build(QuadKind::Interior, Sampling::Midpoint, grid_counts(target, 3), horizon)
    }

    /// Midpoint grid over the face `{x_axis = 0} × [0,T]`.
    pub fn midpoint_boundary(target: usize, axis: usize, horizon: f64) -> Result<QuadSet> {
        if axis >= DIM {
            return Err(Error::InvalidArgument(format!("axis {axis} in dimension {DIM}")));
        }
        Self::build(QuadKind::Boundary { axis }, Sampling::Midpoint, grid_counts(target.max(1), 2), horizon)
    }

    /// Midpoint grid over `[0,2]²`.
    pub fn midpoint_initial(target: usize) -> Result<QuadSet> {
        Self::build(QuadKind::Initial, Sampling::Midpoint, grid_counts(target.max(1), 2), 1.0)
    }

    /// `target` independent uniform nodes for the given kind.
    pub fn uniform_random(kind: QuadKind, target: usize, horizon: f64, seed: u64) -> Result<QuadSet> {
        if target == 0 {
            return Err(Error::EmptyBatch);
        }
        if kind == QuadKind::Box {
            return Err(Error::InvalidArgument("random sampling needs a named domain".into()));
        }
        Self::build(kind, Sampling::UniformRandom { seed }, vec![target], horizon)
    }

    fn build(kind: QuadKind, sampling: Sampling, counts: Vec<usize>, horizon: f64) -> Result<QuadSet> {
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::InvalidArgument(format!("horizon {horizon}")));
        }
        let (lo, hi, point_dim) = match kind {
            QuadKind::Interior => (vec![0.0; 3], vec![PERIOD, PERIOD, horizon], 3),
            QuadKind::Boundary { .. } => (vec![0.0; 2], vec![PERIOD, horizon], 3),
            QuadKind::Initial => (vec![0.0; 2], vec![PERIOD, PERIOD], 2),
            QuadKind::Box => unreachable!("boxes are built by midpoint_box"),
        };
        let mut set = QuadSet {
            kind,
            sampling,
            lo,
            hi,
            counts,
            points: Vec::new(),
            point_dim,
            measure: 0.0,
        };
        set.fill();
        Ok(set)
    }

    fn fill(&mut self) {
        let dim = self.lo.len();
        self.measure = self.lo.iter().zip(&self.hi).map(|(a, b)| b - a).product();
        let params: Vec<Vec<f64>> = match self.sampling {
            Sampling::Midpoint => {
                let m: usize = self.counts.iter().product();
                let mut out = Vec::with_capacity(m);
                let mut idx = vec![0usize; dim];
                for _ in 0..m {
                    out.push(
                        (0..dim)
                            .map(|a| {
                                let h = (self.hi[a] - self.lo[a]) / self.counts[a] as f64;
                                self.lo[a] + (idx[a] as f64 + 0.5) * h
                            })
                            .collect(),
                    );
                    // last axis varies fastest
                    for a in (0..dim).rev() {
                        idx[a] += 1;
                        if idx[a] < self.counts[a] {
                            break;
                        }
                        idx[a] = 0;
                    }
                }
                out
            }
            Sampling::UniformRandom { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..self.counts[0])
                    .map(|_| (0..dim).map(|a| rng.gen_range(self.lo[a]..self.hi[a])).collect())
                    .collect()
            }
        };
        self.points = Vec::with_capacity(params.len() * self.point_dim);
        for p in params {
            match self.kind {
                QuadKind::Boundary { axis } => {
                    let mut x = [0.0; 2];
                    x[1 - axis] = p[0];
                    self.points.extend_from_slice(&[x[0], x[1], p[1]]);
                }
                _ => self.points.extend_from_slice(&p),
            }
        }
    }

    /// The same domain with every axis count multiplied by `factor` (or the
    /// node count by `factor^dim` with a fresh seed for random sets).
    pub fn refined(&self, factor: usize) -> Result<QuadSet> {
        if factor == 0 {
            return Err(Error::InvalidArgument("refinement factor 0".into()));
        }
        let mut set = self.clone();
        match self.sampling {
            Sampling::Midpoint => set.counts.iter_mut().for_each(|c| *c *= factor),
            Sampling::UniformRandom { seed } => {
                set.counts[0] *= factor.pow(self.lo.len() as u32);
                if factor > 1 {
                    set.sampling = Sampling::UniformRandom { seed: seed.wrapping_add(1) };
                }
            }
        }
        set.fill();
        Ok(set)
    }

    pub fn kind(&self) -> QuadKind {
        self.kind
    }

    pub fn sampling(&self) -> Sampling {
        self.sampling
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.point_dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `|domain|`
    pub fn measure(&self) -> f64 {
        self.measure
    }

    /// Weight `1/M` shared by every node.
    pub fn weight(&self) -> f64 {
        1.0 / self.len() as f64
    }

    pub fn point_dim(&self) -> usize {
        self.point_dim
    }

    pub fn point(&self, m: usize) -> &[f64] {
        &self.points[m * self.point_dim..(m + 1) * self.point_dim]
    }

    pub fn points(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.points.chunks_exact(self.point_dim)
    }

    /// Node `m` as `(x, y, t)`; initial nodes sit at `t = 0`.
    pub fn space_time(&self, m: usize) -> SpaceTime {
        let p = self.point(m);
        match p.len() {
            3 => [p[0], p[1], p[2]],
            2 => [p[0], p[1], 0.0],
            _ => panic!("node of a {}-D box has no space-time embedding", p.len()),
        }
    }

    /// `|domain| · (1/M) · Σ g(y_m)`, summed in node order with compensation.
    pub fn integrate(&self, mut g: impl FnMut(&[f64]) -> f64) -> Result<f64> {
        if self.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let mut acc = KahanSum::default();
        for (m, p) in self.points().enumerate() {
            let v = g(p);
            if !v.is_finite() {
                return Err(Error::NonFinite(format!("integrand {v} at node {m} {p:?}")));
            }
            acc.add(v);
        }
        Ok(self.measure * acc.value() / self.len() as f64)
    }
}

fn check_box(lo: &[f64], hi: &[f64]) -> Result<()> {
    if lo.is_empty() || lo.len() != hi.len() {
        return Err(Error::ShapeMismatch(format!("box bounds {lo:?} and {hi:?}")));
    }
    if lo.iter().zip(hi).any(|(a, b)| !(a.is_finite() && b.is_finite() && a < b)) {
        return Err(Error::InvalidArgument(format!("empty or non-finite box {lo:?}..{hi:?}")));
    }
    Ok(())
}
