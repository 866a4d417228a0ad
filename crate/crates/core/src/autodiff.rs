//! Exact input derivatives of tanh networks up to order four, and reverse
//! accumulation of scalar residual losses over all network parameters.
//!
//! Derivatives in the inputs are carried as truncated univariate Taylor
//! coefficients (in derivative normalization) along five input directions:
//! `t`, `x`, `y`, `x+y` and `x−y`. Affine layers act linearly on all
//! coefficients, tanh is propagated by Faà di Bruno's formula. Mixed spatial
//! derivatives follow from polarization, e.g.
//!
//! ```text
//! ∂x²∂y² = (D₊⁴ + D₋⁴ − 2∂x⁴ − 2∂y⁴) / 12,   D± = ∂x ± ∂y
//! ```
//!
//! Points are processed in batches. Each batch is a matrix whose column blocks
//! are the Taylor channels, so every layer costs one GEMM.

use ndarray::{linalg::general_mat_mul, s, Array2, ArrayView2, Axis};

use crate::error::{Error, Result};
use crate::network::{MlpParams, ParamGradient};
use crate::quadrature::KahanSum;

pub const MAX_ORDER: usize = 4;

/// A space-time point `(x, y, t)`.
pub type SpaceTime = [f64; 3];

const DIRECTIONS: [[f64; 2]; 4] = [[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, -1.0]];
const DIR_X: usize = 0;
const DIR_Y: usize = 1;
const DIR_P: usize = 2;
const DIR_M: usize = 3;

const POINTS_PER_CHUNK: usize = 256;

/// Value and the partial derivatives of one network output component that
/// enter the Kuramoto–Sivashinsky residuals.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Jet {
    pub value: f64,
    /// ∂_t
    pub dt: f64,
    /// (∂₁, ∂₂)
    pub grad: [f64; 2],
    /// (∂₁², ∂₂²)
    pub hess_diag: [f64; 2],
    /// Δ = ∂₁² + ∂₂²
    pub lap: f64,
    /// (∂₁³, ∂₁²∂₂, ∂₁∂₂², ∂₂³)
    pub third: [f64; 4],
    /// (∂₁Δ, ∂₂Δ)
    pub grad_lap: [f64; 2],
    /// (∂₁⁴, ∂₁²∂₂², ∂₂⁴)
    pub bih_parts: [f64; 3],
    /// Δ² = ∂₁⁴ + 2∂₁²∂₂² + ∂₂⁴
    pub bih: f64,
}

impl Jet {
    /// Builds a jet from its independent partials and fills the derived
    /// fields (`lap`, `grad_lap`, `bih`).
    pub fn from_partials(
        value: f64,
        dt: f64,
        grad: [f64; 2],
        hess_diag: [f64; 2],
        third: [f64; 4],
        bih_parts: [f64; 3],
    ) -> Jet {
        Jet {
            value,
            dt,
            grad,
            hess_diag,
            lap: hess_diag[0] + hess_diag[1],
            third,
            grad_lap: [third[0] + third[2], third[1] + third[3]],
            bih_parts,
            bih: bih_parts[0] + 2.0 * bih_parts[1] + bih_parts[2],
        }
    }

    pub fn constant(value: f64) -> Jet {
        Jet {
            value,
            ..Jet::default()
        }
    }

    pub fn is_finite(&self) -> bool {
        self.fields().iter().all(|v| v.is_finite())
    }

    fn fields(&self) -> [f64; 17] {
        let j = self;
        [
            j.value,
            j.dt,
            j.grad[0],
            j.grad[1],
            j.hess_diag[0],
            j.hess_diag[1],
            j.lap,
            j.third[0],
            j.third[1],
            j.third[2],
            j.third[3],
            j.grad_lap[0],
            j.grad_lap[1],
            j.bih_parts[0],
            j.bih_parts[1],
            j.bih_parts[2],
            j.bih,
        ]
    }

    /// The partial `∂x^a ∂y^b ∂t^c` if the jet carries it.
    pub fn partial(&self, multi: [usize; 3]) -> Option<f64> {
        let v = match multi {
            [0, 0, 0] => self.value,
            [0, 0, 1] => self.dt,
            [1, 0, 0] => self.grad[0],
            [0, 1, 0] => self.grad[1],
            [2, 0, 0] => self.hess_diag[0],
            [0, 2, 0] => self.hess_diag[1],
            [3, 0, 0] => self.third[0],
            [2, 1, 0] => self.third[1],
            [1, 2, 0] => self.third[2],
            [0, 3, 0] => self.third[3],
            [4, 0, 0] => self.bih_parts[0],
            [2, 2, 0] => self.bih_parts[1],
            [0, 4, 0] => self.bih_parts[2],
            _ => return None,
        };
        Some(v)
    }

    pub fn scale(&self, a: f64) -> Jet {
        self.combine(a, &Jet::default(), 0.0)
    }

    /// `a·self + b·other`
    pub fn combine(&self, a: f64, other: &Jet, b: f64) -> Jet {
        let m = |x: f64, y: f64| a * x + b * y;
        let m2 = |x: [f64; 2], y: [f64; 2]| [m(x[0], y[0]), m(x[1], y[1])];
        Jet::from_partials(
            m(self.value, other.value),
            m(self.dt, other.dt),
            m2(self.grad, other.grad),
            m2(self.hess_diag, other.hess_diag),
            [
                m(self.third[0], other.third[0]),
                m(self.third[1], other.third[1]),
                m(self.third[2], other.third[2]),
                m(self.third[3], other.third[3]),
            ],
            [
                m(self.bih_parts[0], other.bih_parts[0]),
                m(self.bih_parts[1], other.bih_parts[1]),
                m(self.bih_parts[2], other.bih_parts[2]),
            ],
        )
    }
}

/// Cotangent of a [`Jet`]: sensitivities of a scalar with respect to the
/// independent partials. Derived fields are pushed back onto their parts by
/// the `add_*` helpers.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct JetAdjoint {
    pub value: f64,
    pub dt: f64,
    pub grad: [f64; 2],
    pub hess_diag: [f64; 2],
    pub third: [f64; 4],
    pub bih_parts: [f64; 3],
}

impl JetAdjoint {
    pub fn add_lap(&mut self, a: f64) {
        self.hess_diag[0] += a;
        self.hess_diag[1] += a;
    }

    pub fn add_grad_lap(&mut self, axis: usize, a: f64) {
        if axis == 0 {
            self.third[0] += a;
            self.third[2] += a;
        } else {
            self.third[1] += a;
            self.third[3] += a;
        }
    }

    pub fn add_bih(&mut self, a: f64) {
        self.bih_parts[0] += a;
        self.bih_parts[1] += 2.0 * a;
        self.bih_parts[2] += a;
    }
}

/// Column-block layout of the Taylor channels for a given maximal order.
#[derive(Clone, Copy, Debug, Default)]
struct Channels {
    order: usize,
}

impl Channels {
    fn count(self) -> usize {
        if self.order == 0 {
            1
        } else {
            2 + 4 * self.order
        }
    }

    const VALUE: usize = 0;
    const TIME: usize = 1;

    /// Channel of the `k`-th directional derivative along direction `dir`.
    fn dir(self, dir: usize, k: usize) -> usize {
        debug_assert!(k >= 1 && k <= self.order);
        2 + self.order * dir + (k - 1)
    }
}

/// Forward record of a batch of points through the network, kept for the
/// reverse sweep. Buffers are reused when the tape is run again on a batch of
/// the same shape.
#[derive(Default)]
pub struct JetTape {
    channels: Channels,
    batch: usize,
    /// Inputs `H_{j−1}` of every layer `j = 1..=L`.
    inputs: Vec<Array2<f64>>,
    /// Pre-activations `Z_j` of the hidden layers.
    preacts: Vec<Array2<f64>>,
    output: Array2<f64>,
    /// Cotangents `Z̄_j` and one `H̄` buffer for the reverse sweep.
    zbars: Vec<Array2<f64>>,
    hbar: Array2<f64>,
}

fn check_params(params: &MlpParams) -> Result<()> {
    if params.input_dim() != 3 {
        return Err(Error::ShapeMismatch(format!(
            "network input width {} but space-time points have 3 coordinates",
            params.input_dim()
        )));
    }
    if !params.all_finite() {
        return Err(Error::NonFinite("network parameters".into()));
    }
    Ok(())
}

fn ensure_shape(a: &mut Array2<f64>, shape: (usize, usize)) {
    if a.dim() != shape {
        *a = Array2::zeros(shape);
    }
}

impl JetTape {
    /// Propagates `points` through the network carrying all partials up to
    /// total spatial order `order` (and `∂_t` when `order ≥ 1`).
    pub fn forward(params: &MlpParams, points: &[SpaceTime], order: usize) -> Result<JetTape> {
        let mut tape = JetTape::default();
        tape.run(params, points, order)?;
        Ok(tape)
    }

    /// Like [`JetTape::forward`], reusing this tape's buffers.
    pub fn run(&mut self, params: &MlpParams, points: &[SpaceTime], order: usize) -> Result<()> {
        if order > MAX_ORDER {
            return Err(Error::UnsupportedOrder(order));
        }
        check_params(params)?;
        if let Some(p) = points.iter().find(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(Error::NonFinite(format!("point {p:?}")));
        }
        let channels = Channels { order };
        let (nb, nc) = (points.len(), channels.count());
        let cols = nc * nb;
        let layers = params.num_layers();
        self.channels = channels;
        self.batch = nb;
        self.inputs.resize_with(layers, Default::default);
        self.preacts.resize_with(layers - 1, Default::default);

        let h = &mut self.inputs[0];
        ensure_shape(h, (3, cols));
        h.fill(0.0);
        for (b, p) in points.iter().enumerate() {
            for i in 0..3 {
                h[[i, b]] = p[i];
            }
        }
        if order >= 1 {
            for b in 0..nb {
                h[[2, Channels::TIME * nb + b]] = 1.0;
                for (d, dir) in DIRECTIONS.iter().enumerate() {
                    let col = channels.dir(d, 1) * nb + b;
                    h[[0, col]] = dir[0];
                    h[[1, col]] = dir[1];
                }
            }
        }

        for j in 1..=layers {
            let w = params.weight(j);
            let z = if j < layers { &mut self.preacts[j - 1] } else { &mut self.output };
            ensure_shape(z, (w.nrows(), cols));
            general_mat_mul(1.0, &w, &self.inputs[j - 1], 0.0, z);
            let bias = params.bias(j);
            z.slice_mut(s![.., 0..nb])
                .axis_iter_mut(Axis(1))
                .for_each(|mut col| col += &bias);
            if j < layers {
                let h = &mut self.inputs[j];
                ensure_shape(h, (w.nrows(), cols));
                tanh_forward(&self.preacts[j - 1], h, channels, nb);
            }
        }
        Ok(())
    }

    pub fn batch_len(&self) -> usize {
        self.batch
    }

    pub fn output_dim(&self) -> usize {
        self.output.nrows()
    }

    /// Network outputs at the points, shape `(out, batch)`.
    pub fn values(&self) -> ArrayView2<'_, f64> {
        self.output.slice(s![.., 0..self.batch])
    }

    /// Jet of output `component` at point `b`. Fields above the tape's order
    /// are zero.
    pub fn jet(&self, b: usize, component: usize) -> Jet {
        let y = self.output.row(component);
        let nb = self.batch;
        let ch = self.channels;
        let at = |c: usize| y[c * nb + b];
        let value = at(Channels::VALUE);
        if ch.order == 0 {
            return Jet::constant(value);
        }
        let d = |dir: usize, k: usize| if k <= ch.order { at(ch.dir(dir, k)) } else { 0.0 };
        let third = [
            d(DIR_X, 3),
            (d(DIR_P, 3) - d(DIR_M, 3) - 2.0 * d(DIR_Y, 3)) / 6.0,
            (d(DIR_P, 3) + d(DIR_M, 3) - 2.0 * d(DIR_X, 3)) / 6.0,
            d(DIR_Y, 3),
        ];
        let fourth = [
            d(DIR_X, 4),
            (d(DIR_P, 4) + d(DIR_M, 4) - 2.0 * d(DIR_X, 4) - 2.0 * d(DIR_Y, 4)) / 12.0,
            d(DIR_Y, 4),
        ];
        Jet::from_partials(
            value,
            at(Channels::TIME),
            [d(DIR_X, 1), d(DIR_Y, 1)],
            [d(DIR_X, 2), d(DIR_Y, 2)],
            third,
            fourth,
        )
    }

    fn scatter_adjoint(&self, adj: &JetAdjoint, b: usize, component: usize, out: &mut Array2<f64>) {
        let nb = self.batch;
        let ch = self.channels;
        let mut row = out.row_mut(component);
        row[Channels::VALUE * nb + b] += adj.value;
        if ch.order == 0 {
            return;
        }
        row[Channels::TIME * nb + b] += adj.dt;
        let mut put = |dir: usize, k: usize, v: f64| {
            if k <= ch.order {
                row[ch.dir(dir, k) * nb + b] += v;
            }
        };
        put(DIR_X, 1, adj.grad[0]);
        put(DIR_Y, 1, adj.grad[1]);
        put(DIR_X, 2, adj.hess_diag[0]);
        put(DIR_Y, 2, adj.hess_diag[1]);
        let [x3, xxy, xyy, y3] = adj.third;
        put(DIR_X, 3, x3 - xyy / 3.0);
        put(DIR_Y, 3, y3 - xxy / 3.0);
        put(DIR_P, 3, (xxy + xyy) / 6.0);
        put(DIR_M, 3, (xyy - xxy) / 6.0);
        let [x4, xxyy, y4] = adj.bih_parts;
        put(DIR_X, 4, x4 - xxyy / 6.0);
        put(DIR_Y, 4, y4 - xxyy / 6.0);
        put(DIR_P, 4, xxyy / 12.0);
        put(DIR_M, 4, xxyy / 12.0);
    }

    /// Reverse sweep. `adjoints[b * out + c]` is the cotangent of the jet of
    /// component `c` at point `b`; the parameter gradient is accumulated into
    /// `grad`.
    pub fn backward(&mut self, params: &MlpParams, adjoints: &[JetAdjoint], grad: &mut ParamGradient) {
        let out = self.output_dim();
        assert_eq!(adjoints.len(), self.batch * out, "adjoint count");
        let layers = params.num_layers();
        let (nb, ch) = (self.batch, self.channels);
        let mut zbars = std::mem::take(&mut self.zbars);
        zbars.resize_with(layers, Default::default);
        let top = &mut zbars[layers - 1];
        ensure_shape(top, self.output.dim());
        top.fill(0.0);
        for (i, adj) in adjoints.iter().enumerate() {
            self.scatter_adjoint(adj, i / out, i % out, top);
        }
        for j in (1..=layers).rev() {
            let (lower, upper) = zbars.split_at_mut(j - 1);
            let zbar = &upper[0];
            let h = &self.inputs[j - 1];
            general_mat_mul(1.0, zbar, &h.t(), 1.0, &mut grad.weight_mut(j));
            let mut gb = grad.bias_mut(j);
            gb += &zbar.slice(s![.., 0..nb]).sum_axis(Axis(1));
            if j > 1 {
                let w = params.weight(j);
                ensure_shape(&mut self.hbar, h.dim());
                general_mat_mul(1.0, &w.t(), zbar, 0.0, &mut self.hbar);
                let next = &mut lower[j - 2];
                ensure_shape(next, h.dim());
                tanh_backward(&self.preacts[j - 2], h, &self.hbar, next, ch, nb);
            }
        }
        self.zbars = zbars;
    }
}

/// tanh and its first five derivatives over one row of pre-activations.
struct TanhDerivs {
    s: [Vec<f64>; 6],
}

impl TanhDerivs {
    fn new(n: usize) -> TanhDerivs {
        TanhDerivs {
            s: std::array::from_fn(|_| vec![0.0; n]),
        }
    }

    fn fill(&mut self, z: &[f64]) {
        for (t, &zb) in self.s[0].iter_mut().zip(z) {
            *t = zb.tanh();
        }
        self.fill_from_tanh();
    }

    fn fill_from_tanh(&mut self) {
        let [t, s1, s2, s3, s4, s5] = &mut self.s;
        for b in 0..t.len() {
            let tb = t[b];
            let d1 = 1.0 - tb * tb;
            let d2 = -2.0 * tb * d1;
            let d3 = -2.0 * d1 * d1 - 2.0 * tb * d2;
            let d4 = -6.0 * d1 * d2 - 2.0 * tb * d3;
            s1[b] = d1;
            s2[b] = d2;
            s3[b] = d3;
            s4[b] = d4;
            s5[b] = -6.0 * d2 * d2 - 8.0 * d1 * d3 - 2.0 * tb * d4;
        }
    }
}

/// Taylor coefficients of order `1..=K` along one direction through tanh.
fn tanh_dir_forward<const K: usize>(d: &TanhDerivs, z: &[f64], h: &mut [f64], nb: usize) {
    let [_, s1, s2, s3, s4, _] = &d.s;
    let (s1, s2, s3, s4) = (&s1[..nb], &s2[..nb], &s3[..nb], &s4[..nb]);
    let zero = [0.0];
    let zk = |k: usize, b: usize| if k <= K { z[(k - 1) * nb + b] } else { zero[0] };
    for b in 0..nb {
        let (z1, z2, z3, z4) = (zk(1, b), zk(2, b), zk(3, b), zk(4, b));
        h[b] = s1[b] * z1;
        if K >= 2 {
            h[nb + b] = s2[b] * z1 * z1 + s1[b] * z2;
        }
        if K >= 3 {
            h[2 * nb + b] = s3[b] * z1 * z1 * z1 + 3.0 * s2[b] * z1 * z2 + s1[b] * z3;
        }
        if K >= 4 {
            h[3 * nb + b] = s4[b] * z1 * z1 * z1 * z1
                + 6.0 * s3[b] * z1 * z1 * z2
                + s2[b] * (4.0 * z1 * z3 + 3.0 * z2 * z2)
                + s1[b] * z4;
        }
    }
}

/// Adjoint of [`tanh_dir_forward`]; accumulates the value cotangent into `g0`.
fn tanh_dir_backward<const K: usize>(
    d: &TanhDerivs,
    z: &[f64],
    hbar: &[f64],
    zbar: &mut [f64],
    g0: &mut [f64],
    nb: usize,
) {
    let [_, s1, s2, s3, s4, s5] = &d.s;
    let (s1, s2, s3, s4, s5) = (&s1[..nb], &s2[..nb], &s3[..nb], &s4[..nb], &s5[..nb]);
    let g0 = &mut g0[..nb];
    let at = |v: &[f64], k: usize, b: usize| if k <= K { v[(k - 1) * nb + b] } else { 0.0 };
    for b in 0..nb {
        let (z1, z2, z3, z4) = (at(z, 1, b), at(z, 2, b), at(z, 3, b), at(z, 4, b));
        let (h1, h2, h3, h4) = (at(hbar, 1, b), at(hbar, 2, b), at(hbar, 3, b), at(hbar, 4, b));
        let (a1, a2, a3, a4, a5) = (s1[b], s2[b], s3[b], s4[b], s5[b]);
        g0[b] += h1 * a2 * z1
            + h2 * (a3 * z1 * z1 + a2 * z2)
            + h3 * (a4 * z1 * z1 * z1 + 3.0 * a3 * z1 * z2 + a2 * z3)
            + h4 * (a5 * z1 * z1 * z1 * z1 + 6.0 * a4 * z1 * z1 * z2 + a3 * (4.0 * z1 * z3 + 3.0 * z2 * z2) + a2 * z4);
        zbar[b] = h1 * a1
            + h2 * 2.0 * a2 * z1
            + h3 * (3.0 * a3 * z1 * z1 + 3.0 * a2 * z2)
            + h4 * (4.0 * a4 * z1 * z1 * z1 + 12.0 * a3 * z1 * z2 + 4.0 * a2 * z3);
        if K >= 2 {
            zbar[nb + b] = h2 * a1 + h3 * 3.0 * a2 * z1 + h4 * (6.0 * a3 * z1 * z1 + 6.0 * a2 * z2);
        }
        if K >= 3 {
            zbar[2 * nb + b] = h3 * a1 + h4 * 4.0 * a2 * z1;
        }
        if K >= 4 {
            zbar[3 * nb + b] = h4 * a1;
        }
    }
}

macro_rules! dispatch_order {
    ($order:expr, $f:ident, $($arg:expr),*) => {
        match $order {
            1 => $f::<1>($($arg),*),
            2 => $f::<2>($($arg),*),
            3 => $f::<3>($($arg),*),
            _ => $f::<4>($($arg),*),
        }
    };
}

fn tanh_forward(z: &Array2<f64>, h: &mut Array2<f64>, ch: Channels, nb: usize) {
    let order = ch.order;
    let mut d = TanhDerivs::new(nb);
    for (zr, mut hr) in z.rows().into_iter().zip(h.rows_mut()) {
        let zr = zr.to_slice().expect("standard layout");
        let hr = hr.as_slice_mut().expect("standard layout");
        d.fill(&zr[..nb]);
        hr[..nb].copy_from_slice(&d.s[0]);
        if order == 0 {
            continue;
        }
        for b in 0..nb {
            hr[nb + b] = d.s[1][b] * zr[nb + b];
        }
        for dir in 0..4 {
            let span = ch.dir(dir, 1) * nb..(ch.dir(dir, order) + 1) * nb;
            dispatch_order!(order, tanh_dir_forward, &d, &zr[span.clone()], &mut hr[span], nb);
        }
    }
}

/// `h` is the forward output, whose value block holds `tanh(z)`.
fn tanh_backward(
    z: &Array2<f64>,
    h: &Array2<f64>,
    hbar: &Array2<f64>,
    zbar: &mut Array2<f64>,
    ch: Channels,
    nb: usize,
) {
    let order = ch.order;
    let mut d = TanhDerivs::new(nb);
    let mut g0 = vec![0.0; nb];
    let rows = z.rows().into_iter().zip(h.rows()).zip(hbar.rows()).zip(zbar.rows_mut());
    for (((zr, tr), hr), mut gr) in rows {
        let zr = zr.to_slice().expect("standard layout");
        let hr = hr.to_slice().expect("standard layout");
        let gr = gr.as_slice_mut().expect("standard layout");
        d.s[0].copy_from_slice(&tr.to_slice().expect("standard layout")[..nb]);
        d.fill_from_tanh();
        for b in 0..nb {
            g0[b] = hr[b] * d.s[1][b];
        }
        if order > 0 {
            for b in 0..nb {
                g0[b] += hr[nb + b] * d.s[2][b] * zr[nb + b];
                gr[nb + b] = hr[nb + b] * d.s[1][b];
            }
            for dir in 0..4 {
                let span = ch.dir(dir, 1) * nb..(ch.dir(dir, order) + 1) * nb;
                dispatch_order!(
                    order,
                    tanh_dir_backward,
                    &d,
                    &zr[span.clone()],
                    &hr[span.clone()],
                    &mut gr[span],
                    &mut g0,
                    nb
                );
            }
        }
        gr[..nb].copy_from_slice(&g0);
    }
}

/// Jet of output `component` of the network at `(x, t)`.
pub fn jet_eval(params: &MlpParams, x: [f64; 2], t: f64, component: usize) -> Result<Jet> {
    if component >= params.output_dim() {
        return Err(Error::ShapeMismatch(format!(
            "component {component} of a network with {} outputs",
            params.output_dim()
        )));
    }
    let tape = JetTape::forward(params, &[[x[0], x[1], t]], MAX_ORDER)?;
    Ok(tape.jet(0, component))
}

/// A vector residual built from network jets at a fixed set of points.
/// The loss contributed by a term is `weight · ‖r‖²`.
pub trait ResidualTerm {
    /// Points at which the network is read.
    fn points(&self) -> &[SpaceTime];

    fn residual_len(&self) -> usize;

    fn weight(&self) -> f64;

    /// `jets[p * out + c]` is the jet of component `c` at `points()[p]`.
    fn eval(&self, jets: &[Jet], out: &mut [f64]);

    /// Accumulates `(∂r/∂jets)ᵀ · rbar` into `adj` (same layout as `jets`).
    fn pullback(&self, jets: &[Jet], rbar: &[f64], adj: &mut [JetAdjoint]);
}

/// Weighted residual sums `S_i = Σ_terms w·r_i²`, one per residual entry.
#[derive(Clone, Debug, PartialEq)]
pub struct ResidualSums {
    pub per_entry: Vec<f64>,
}

impl ResidualSums {
    pub fn total(&self) -> f64 {
        self.per_entry.iter().sum()
    }
}

/// Evaluates `Σ w‖r‖²` over `terms`, optionally with its exact parameter
/// gradient. Terms are visited in order and reduced with compensated sums, so
/// the result is bit-reproducible.
pub fn residual_sums<T: ResidualTerm>(
    params: &MlpParams,
    terms: &[T],
    order: usize,
    with_gradient: bool,
) -> Result<(ResidualSums, Option<ParamGradient>)> {
    let first = terms.first().ok_or(Error::EmptyBatch)?;
    let rlen = first.residual_len();
    let out = params.output_dim();
    let mut sums: Vec<KahanSum> = vec![KahanSum::default(); rlen];
    let mut grad = with_gradient.then(|| params.zero_gradient());

    let mut tape = JetTape::default();
    let mut start = 0;
    while start < terms.len() {
        let mut end = start;
        let mut npts = 0;
        while end < terms.len() && (npts == 0 || npts + terms[end].points().len() <= POINTS_PER_CHUNK) {
            npts += terms[end].points().len();
            end += 1;
        }
        let chunk = &terms[start..end];
        let points: Vec<SpaceTime> = chunk.iter().flat_map(|t| t.points().iter().copied()).collect();
        tape.run(params, &points, order)?;
        let jets: Vec<Jet> = (0..points.len())
            .flat_map(|b| (0..out).map(move |c| (b, c)))
            .map(|(b, c)| tape.jet(b, c))
            .collect();
        let mut adjoints = vec![JetAdjoint::default(); if with_gradient { jets.len() } else { 0 }];
        let mut r = vec![0.0; rlen];
        let mut rbar = vec![0.0; rlen];
        let mut offset = 0;
        for term in chunk {
            if term.residual_len() != rlen {
                return Err(Error::ShapeMismatch(format!(
                    "mixed residual lengths {} and {rlen} in one batch",
                    term.residual_len()
                )));
            }
            let span = term.points().len() * out;
            let term_jets = &jets[offset..offset + span];
            term.eval(term_jets, &mut r);
            let w = term.weight();
            for (i, ri) in r.iter().enumerate() {
                if !ri.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "residual entry {i} at {:?}",
                        term.points()
                    )));
                }
                sums[i].add(w * ri * ri);
            }
            if with_gradient {
                for (rb, ri) in rbar.iter_mut().zip(&r) {
                    *rb = 2.0 * w * ri;
                }
                term.pullback(term_jets, &rbar, &mut adjoints[offset..offset + span]);
            }
            offset += span;
        }
        if let Some(g) = grad.as_mut() {
            tape.backward(params, &adjoints, g);
        }
        start = end;
    }
    let sums = ResidualSums {
        per_entry: sums.iter().map(KahanSum::value).collect(),
    };
    Ok((sums, grad))
}

/// Loss value `Σ w‖r‖²` and its exact gradient with respect to every
/// network parameter.
pub fn loss_param_gradient<T: ResidualTerm>(
    params: &MlpParams,
    terms: &[T],
    order: usize,
) -> Result<(f64, ParamGradient)> {
    let (sums, grad) = residual_sums(params, terms, order, true)?;
    Ok((sums.total(), grad.expect("gradient requested")))
}

/// Analytic jet entry against a centered finite-difference estimate.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FdCheck {
    pub analytic: f64,
    pub numeric: f64,
    /// `|analytic − numeric| / max(1, |analytic|)`
    pub rel_err: f64,
}

/// Five-point centered difference of order `multi[axis]` along `axis`,
/// nested over the remaining axes.
fn nested_stencil(
    params: &MlpParams,
    component: usize,
    base: SpaceTime,
    multi: [usize; 3],
    axis: usize,
    h: f64,
) -> Result<f64> {
    if axis == 3 {
        return Ok(params.forward(&base)?[component]);
    }
    let f = |k: i32| {
        let mut p = base;
        p[axis] += k as f64 * h;
        nested_stencil(params, component, p, multi, axis + 1, h)
    };
    let v = match multi[axis] {
        0 => return f(0),
        1 => (8.0 * (f(1)? - f(-1)?) - (f(2)? - f(-2)?)) / (12.0 * h),
        2 => {
            let f0 = f(0)?;
            (16.0 * (f(1)? + f(-1)? - 2.0 * f0) - (f(2)? + f(-2)? - 2.0 * f0)) / (12.0 * h * h)
        }
        3 => ((f(2)? - f(-2)?) - 2.0 * (f(1)? - f(-1)?)) / (2.0 * h.powi(3)),
        _ => {
            let f0 = f(0)?;
            ((f(2)? + f(-2)? - 2.0 * f0) - 4.0 * (f(1)? + f(-1)? - 2.0 * f0)) / h.powi(4)
        }
    };
    Ok(v)
}

/// Compares the jet partial `∂x^a ∂y^b ∂t^c` (`multi = [a, b, c]`) of output
/// `component` with a tensor-product five-point stencil of step `step`.
pub fn fd_check(
    params: &MlpParams,
    point: SpaceTime,
    component: usize,
    multi: [usize; 3],
    step: f64,
) -> Result<FdCheck> {
    let order: usize = multi.iter().sum();
    if order > MAX_ORDER {
        return Err(Error::UnsupportedOrder(order));
    }
    if !(step > 0.0 && step.is_finite()) {
        return Err(Error::InvalidArgument(format!("finite-difference step {step}")));
    }
    let jet = jet_eval(params, [point[0], point[1]], point[2], component)?;
    let analytic = jet.partial(multi).ok_or_else(|| {
        Error::InvalidArgument(format!("multi-index {multi:?} is not carried by a jet"))
    })?;
    let numeric = nested_stencil(params, component, point, multi, 0, step)?;
    Ok(FdCheck {
        analytic,
        numeric,
        rel_err: (analytic - numeric).abs() / analytic.abs().max(1.0),
    })
}
