//! The tanh multilayer perceptron family used as PINN ansatz.
//!
//! A network with widths `l₀, …, l_L` realizes
//! `u_θ = A_L ∘ σ ∘ A_{L−1} ∘ … ∘ σ ∘ A₁` with affine maps `A_j(z) = W_j z + b_j`
//! and `σ = tanh`. The last layer has no activation. Parameters live in one
//! flat buffer so optimizers can treat them as a plain vector.

use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logreal::LogReal;

/// Weights and biases of a tanh MLP.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams {
    widths: Vec<usize>,
    data: Vec<f64>,
    /// Offset of `W_j` in `data`; `b_j` follows it directly.
    offsets: Vec<usize>,
}

/// ∇_θ of a scalar loss, laid out exactly like [`MlpParams`].
#[derive(Clone, Debug, PartialEq)]
pub struct ParamGradient {
    widths: Vec<usize>,
    data: Vec<f64>,
    offsets: Vec<usize>,
}

fn layout(widths: &[usize]) -> Result<(Vec<usize>, usize)> {
    if widths.len() < 3 {
        return Err(Error::InvalidArgument(format!(
            "a network needs at least two layers (three widths), got {widths:?}"
        )));
    }
    if widths.contains(&0) {
        return Err(Error::InvalidArgument(format!(
            "zero width in {widths:?}"
        )));
    }
    let mut offsets = Vec::with_capacity(widths.len() - 1);
    let mut total = 0;
    for pair in widths.windows(2) {
        offsets.push(total);
        total += pair[1] * pair[0] + pair[1];
    }
    Ok((offsets, total))
}

macro_rules! layered_accessors {
    ($ty:ty) => {
        impl $ty {
            pub fn widths(&self) -> &[usize] {
                &self.widths
            }

            /// Number of affine layers `L`.
            pub fn num_layers(&self) -> usize {
                self.widths.len() - 1
            }

            pub fn num_params(&self) -> usize {
                self.data.len()
            }

            pub fn as_slice(&self) -> &[f64] {
                &self.data
            }

            pub fn as_mut_slice(&mut self) -> &mut [f64] {
                &mut self.data
            }

            /// `W_j` for `j` in `1..=L`, shape `l_j × l_{j−1}`.
            pub fn weight(&self, j: usize) -> ArrayView2<'_, f64> {
                let (rows, cols) = (self.widths[j], self.widths[j - 1]);
                let off = self.offsets[j - 1];
                ArrayView2::from_shape((rows, cols), &self.data[off..off + rows * cols])
                    .expect("layout")
            }

            pub fn weight_mut(&mut self, j: usize) -> ArrayViewMut2<'_, f64> {
                let (rows, cols) = (self.widths[j], self.widths[j - 1]);
                let off = self.offsets[j - 1];
                ArrayViewMut2::from_shape((rows, cols), &mut self.data[off..off + rows * cols])
                    .expect("layout")
            }

            /// `b_j` for `j` in `1..=L`.
            pub fn bias(&self, j: usize) -> ArrayView1<'_, f64> {
                let (rows, cols) = (self.widths[j], self.widths[j - 1]);
                let off = self.offsets[j - 1] + rows * cols;
                ArrayView1::from(&self.data[off..off + rows])
            }

            pub fn bias_mut(&mut self, j: usize) -> ArrayViewMut1<'_, f64> {
                let (rows, cols) = (self.widths[j], self.widths[j - 1]);
                let off = self.offsets[j - 1] + rows * cols;
                ArrayViewMut1::from(&mut self.data[off..off + rows])
            }
        }
    };
}

layered_accessors!(MlpParams);
layered_accessors!(ParamGradient);

impl MlpParams {
    pub fn zeros(widths: &[usize]) -> Result<Self> {
        let (offsets, total) = layout(widths)?;
        Ok(MlpParams {
            widths: widths.to_vec(),
            data: vec![0.0; total],
            offsets,
        })
    }

    /// Glorot-uniform weights `U(±√(6/(l_{j−1}+l_j)))`, deterministic in `seed`.
    /// Biases are drawn from the same per-layer range.
    pub fn init(seed: u64, widths: &[usize]) -> Result<Self> {
        let mut params = Self::zeros(widths)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for j in 1..=params.num_layers() {
            let limit = (6.0 / (widths[j - 1] + widths[j]) as f64).sqrt();
            for w in params.weight_mut(j).iter_mut() {
                *w = rng.gen_range(-limit..=limit);
            }
            for b in params.bias_mut(j).iter_mut() {
                *b = rng.gen_range(-limit..=limit);
            }
        }
        Ok(params)
    }

    pub fn from_flat(widths: &[usize], data: Vec<f64>) -> Result<Self> {
        let (offsets, total) = layout(widths)?;
        if data.len() != total {
            return Err(Error::ShapeMismatch(format!(
                "widths {widths:?} need {total} parameters, got {}",
                data.len()
            )));
        }
        Ok(MlpParams {
            widths: widths.to_vec(),
            data,
            offsets,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    /// Network width `W = max(l₀, …, l_L)`.
    pub fn width(&self) -> usize {
        self.widths.iter().copied().max().unwrap()
    }

    /// `R`: the largest absolute weight or bias. Always computed from the
    /// current parameters.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `u_θ(z)`.
    pub fn forward(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.input_dim() {
            return Err(Error::ShapeMismatch(format!(
                "input of length {} for a network with input width {}",
                z.len(),
                self.input_dim()
            )));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("network input {z:?}")));
        }
        let mut h = z.to_vec();
        let layers = self.num_layers();
        for j in 1..=layers {
            let mut next = self.weight(j).dot(&ArrayView1::from(&h[..]));
            next += &self.bias(j);
            if j < layers {
                next.mapv_inplace(f64::tanh);
            }
            h = next.to_vec();
        }
        Ok(h)
    }

    pub fn zero_gradient(&self) -> ParamGradient {
        ParamGradient {
            widths: self.widths.clone(),
            data: vec![0.0; self.data.len()],
            offsets: self.offsets.clone(),
        }
    }

    /// Upper bound on `‖(u_θ)_j‖_{Cⁿ}`, see [`cn_norm_bound_raw`].
    /// `R` is clamped to at least one.
    pub fn cn_norm_bound(&self, n: usize) -> Result<LogReal> {
        cn_norm_bound_raw(
            self.num_layers(),
            self.input_dim() - 1,
            self.width(),
            self.max_abs(),
            n,
        )
    }
}

impl ParamGradient {
    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn add_assign(&mut self, other: &ParamGradient) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn norm_inf(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `sup_x |tanh^{(k)}(x)|`.
///
/// `tanh^{(k)} = P_k(tanh)` with `P_0(t) = t` and `P_{k+1} = P_k'·(1 − t²)`;
/// the supremum over `t ∈ [−1, 1]` is found by dense sampling followed by a
/// golden-section refinement.
pub fn tanh_derivative_sup(k: usize) -> f64 {
    static CACHE: OnceLock<Vec<f64>> = OnceLock::new();
    let table = CACHE.get_or_init(|| (0..=8).map(compute_tanh_sup).collect());
    match table.get(k) {
        Some(v) => *v,
        None => compute_tanh_sup(k),
    }
}

fn tanh_poly(k: usize) -> Vec<f64> {
    // coefficients in ascending powers of t
    let mut p = vec![0.0, 1.0];
    for _ in 0..k {
        let dp: Vec<f64> = (1..p.len()).map(|i| i as f64 * p[i]).collect();
        let mut next = vec![0.0; dp.len() + 2];
        for (i, c) in dp.iter().enumerate() {
            next[i] += c;
            next[i + 2] -= c;
        }
        p = next;
    }
    p
}

fn eval_poly(p: &[f64], t: f64) -> f64 {
    p.iter().rev().fold(0.0, |acc, c| acc * t + c)
}

fn compute_tanh_sup(k: usize) -> f64 {
    let p = tanh_poly(k);
    let f = |t: f64| eval_poly(&p, t).abs();
    let samples = 20_000;
    let (mut best_t, mut best) = (-1.0, f(-1.0));
    for i in 1..=samples {
        let t = -1.0 + 2.0 * i as f64 / samples as f64;
        let v = f(t);
        if v > best {
            best = v;
            best_t = t;
        }
    }
    let h = 2.0 / samples as f64;
    let (mut a, mut b) = ((best_t - h).max(-1.0), (best_t + h).min(1.0));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    for _ in 0..80 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if f(c) > f(d) {
            b = d;
        } else {
            a = c;
        }
    }
    best.max(f(0.5 * (a + b)))
}

/// `‖σ‖_{Cⁿ}`: running maximum of the derivative sup-norms up to order `n`,
/// floored at one.
pub fn sigma_cn_norm(n: usize) -> f64 {
    (0..=n).map(tanh_derivative_sup).fold(1.0, f64::max)
}

/// `16^L (d+1)^{2n} (e² n⁴ W³ Rⁿ ‖σ‖_{Cⁿ})^{nL}` evaluated in log space, with
/// `R` replaced by `max(R, 1)`.
pub fn cn_norm_bound_raw(
    layers: usize,
    d: usize,
    width: usize,
    r: f64,
    n: usize,
) -> Result<LogReal> {
    if !(1..=6).contains(&n) {
        return Err(Error::InvalidArgument(format!(
            "Cⁿ bound supports 1 ≤ n ≤ 6, got n={n}"
        )));
    }
    if !r.is_finite() {
        return Err(Error::NonFinite(format!("weight bound R={r}")));
    }
    let (l, nf) = (layers as f64, n as f64);
    let r = r.max(1.0);
    let inner = 2.0
        + 4.0 * nf.ln()
        + 3.0 * (width as f64).ln()
        + nf * r.ln()
        + sigma_cn_norm(n).ln();
    let ln = l * 16f64.ln() + 2.0 * nf * ((d + 1) as f64).ln() + nf * l * inner;
    Ok(LogReal::from_ln(ln))
}

/// Free-form run metadata stored with a checkpoint.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub lambda: f64,
    pub stage: String,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    widths: Vec<usize>,
    activation: String,
    weights: Vec<Vec<Vec<f64>>>,
    biases: Vec<Vec<f64>>,
    meta: CheckpointMeta,
}

pub fn checkpoint_to_string(params: &MlpParams, meta: &CheckpointMeta) -> String {
    let layers = params.num_layers();
    let file = CheckpointFile {
        widths: params.widths.clone(),
        activation: "tanh".to_string(),
        weights: (1..=layers)
            .map(|j| params.weight(j).rows().into_iter().map(|r| r.to_vec()).collect())
            .collect(),
        biases: (1..=layers).map(|j| params.bias(j).to_vec()).collect(),
        meta: meta.clone(),
    };
    serde_json::to_string_pretty(&file).expect("checkpoint serializes")
}

pub fn save_checkpoint(params: &MlpParams, meta: &CheckpointMeta, path: &Path) -> Result<()> {
    fs::write(path, checkpoint_to_string(params, meta)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<(MlpParams, CheckpointMeta)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_str(&text, path)
}

pub fn checkpoint_from_str(text: &str, path: &Path) -> Result<(MlpParams, CheckpointMeta)> {
    let file: CheckpointFile = serde_json::from_str(text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        line: e.line(),
        column: e.column(),
        msg: e.to_string(),
    })?;
    let field = |field: String, msg: String| Error::Field {
        path: path.to_path_buf(),
        field,
        msg,
    };
    if file.activation != "tanh" {
        return Err(field(
            "activation".into(),
            format!("unsupported activation {:?}", file.activation),
        ));
    }
    let mut params = MlpParams::zeros(&file.widths)
        .map_err(|e| field("widths".into(), e.to_string()))?;
    let layers = params.num_layers();
    if file.weights.len() != layers || file.biases.len() != layers {
        return Err(field(
            "weights".into(),
            format!(
                "expected {layers} layers, found {} weight and {} bias arrays",
                file.weights.len(),
                file.biases.len()
            ),
        ));
    }
    for j in 1..=layers {
        let (rows, cols) = (file.widths[j], file.widths[j - 1]);
        let w = &file.weights[j - 1];
        if w.len() != rows {
            return Err(field(
                format!("weights[{}]", j - 1),
                format!("expected {rows} rows, got {}", w.len()),
            ));
        }
        for (r, row) in w.iter().enumerate() {
            if row.len() != cols {
                return Err(field(
                    format!("weights[{}][{r}]", j - 1),
                    format!("expected {cols} entries, got {}", row.len()),
                ));
            }
        }
        let b = &file.biases[j - 1];
        if b.len() != rows {
            return Err(field(
                format!("biases[{}]", j - 1),
                format!("expected {rows} entries, got {}", b.len()),
            ));
        }
        let mut wm = params.weight_mut(j);
        for (r, row) in w.iter().enumerate() {
            for (c, v) in row.iter().enumerate() {
                wm[[r, c]] = *v;
            }
        }
        params.bias_mut(j).assign(&ArrayView1::from(&b[..]));
    }
    if !params.all_finite() {
        return Err(field("weights".into(), "non-finite entry".into()));
    }
    Ok((params, file.meta))
}
