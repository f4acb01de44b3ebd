//! Dense feedforward correlation-functional models with one-step memory,
//! with forward evaluation and exact vector-Jacobian products with respect
//! to both inputs and parameters.

use crate::error::{Error, Result};
use ndarray::{Array1, Array2, ArrayView1};
use num_complex::Complex64;

/// Canonical scaled-exponential-linear-unit constants; recorded in
/// checkpoints. The derivative at exactly zero is taken from the positive
/// branch.
pub const SELU_LAMBDA: f64 = 1.0507009873554805;
pub const SELU_ALPHA: f64 = 1.6732632423543772;

fn selu(x: f64) -> f64 {
    if x >= 0.0 {
        SELU_LAMBDA * x
    } else {
        SELU_LAMBDA * SELU_ALPHA * (x.exp() - 1.0)
    }
}

fn selu_deriv(x: f64) -> f64 {
    if x >= 0.0 {
        SELU_LAMBDA
    } else {
        SELU_LAMBDA * SELU_ALPHA * x.exp()
    }
}

/// Input assembly rule: raw state parts or densities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ModelKind {
    /// Input `[phi^R; phi^I; phi'^R; phi'^I]`, width `4 (J+1)`.
    PhiMemory,
    /// Input `[2|phi|^2; 2|phi'|^2]`, width `2 (J+1)`.
    DensityMemory,
}

impl ModelKind {
    pub fn input_width(&self, points: usize) -> usize {
        match self {
            ModelKind::PhiMemory => 4 * points,
            ModelKind::DensityMemory => 2 * points,
        }
    }
}

/// Weights and biases of the dense stack, hidden layers SELU-activated,
/// linear output of width `J+1`.
#[derive(Debug, Clone)]
pub struct MlpParameters {
    /// `(weight, bias)` per layer; weight shape `(out, in)`.
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

// splitmix64 finalizer; the counter-based generator hashes
// (seed, layer, slot, entry) so draws are independent of evaluation order.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

fn unit_open(bits: u64) -> f64 {
    // (0, 1]
    ((bits >> 11) + 1) as f64 * (1.0 / 9007199254740992.0)
}

fn counter_normal(seed: u64, layer: u64, slot: u64, entry: u64) -> f64 {
    let base = mix(mix(mix(mix(seed) ^ layer) ^ slot) ^ entry);
    let u1 = unit_open(mix(base ^ 0xA5A5A5A5A5A5A5A5));
    let u2 = unit_open(mix(base ^ 0x5A5A5A5A5A5A5A5A));
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Layer widths from input to output for the given architecture.
pub fn layer_widths(kind: ModelKind, points: usize, hidden: &[usize]) -> Vec<usize> {
    let mut widths = vec![kind.input_width(points)];
    widths.extend_from_slice(hidden);
    widths.push(points);
    widths
}

/// All weights and biases drawn i.i.d. Normal(0, sigma^2) from a
/// counter-based deterministic generator; same seed gives bit-identical
/// parameters regardless of platform or thread count.
pub fn init_params(
    seed: u64,
    sigma: f64,
    kind: ModelKind,
    points: usize,
    hidden: &[usize],
) -> Result<MlpParameters> {
    if sigma <= 0.0 {
        return Err(Error::Config("init sigma must be positive".into()));
    }
    let widths = layer_widths(kind, points, hidden);
    let mut layers = Vec::with_capacity(widths.len() - 1);
    for l in 0..widths.len() - 1 {
        let (n_in, n_out) = (widths[l], widths[l + 1]);
        let w = Array2::from_shape_fn((n_out, n_in), |(r, c)| {
            sigma * counter_normal(seed, l as u64, 0, (r * n_in + c) as u64)
        });
        let b = Array1::from_shape_fn(n_out, |r| {
            sigma * counter_normal(seed, l as u64, 1, r as u64)
        });
        layers.push((w, b));
    }
    Ok(MlpParameters { layers })
}

pub struct MlpCache {
    pub input: Array1<f64>,
    /// Pre-activation of each layer.
    pub pre: Vec<Array1<f64>>,
    /// Post-activation of each hidden layer (input excluded).
    pub act: Vec<Array1<f64>>,
}

impl MlpParameters {
    pub fn output_width(&self) -> usize {
        self.layers.last().map(|(_, b)| b.len()).unwrap_or(0)
    }

    pub fn flat_len(&self) -> usize {
        self.layers.iter().map(|(w, b)| w.len() + b.len()).sum()
    }

    /// Canonical parameter ordering: per layer, weights row-major then bias.
    pub fn flatten(&self) -> Array1<f64> {
        let mut out = Vec::with_capacity(self.flat_len());
        for (w, b) in &self.layers {
            out.extend(w.iter().copied());
            out.extend(b.iter().copied());
        }
        Array1::from_vec(out)
    }

    pub fn unflatten_like(&self, flat: ArrayView1<f64>) -> Result<MlpParameters> {
        if flat.len() != self.flat_len() {
            return Err(Error::Shape(format!(
                "flat parameter length {} does not match expected {}",
                flat.len(),
                self.flat_len()
            )));
        }
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut off = 0;
        for (w, b) in &self.layers {
            let (rows, cols) = w.dim();
            let wv = Array2::from_shape_vec(
                (rows, cols),
                flat.slice(ndarray::s![off..off + rows * cols]).to_vec(),
            )
            .unwrap();
            off += rows * cols;
            let bv = flat.slice(ndarray::s![off..off + b.len()]).to_owned();
            off += b.len();
            layers.push((wv, bv));
        }
        Ok(MlpParameters { layers })
    }

    pub fn fingerprint(&self) -> u64 {
        crate::fingerprint_f64(self.flatten().as_slice().unwrap())
    }

    fn assemble_input(
        &self,
        phi: ArrayView1<Complex64>,
        phi_prev: ArrayView1<Complex64>,
        kind: ModelKind,
    ) -> Result<Array1<f64>> {
        let points = self.output_width();
        if phi.len() != points || phi_prev.len() != points {
            return Err(Error::Shape(format!(
                "state length {}/{} does not match model width {points}",
                phi.len(),
                phi_prev.len()
            )));
        }
        let expected = kind.input_width(points);
        if self.layers[0].0.ncols() != expected {
            return Err(Error::Shape(format!(
                "model input width {} does not match kind (expected {expected})",
                self.layers[0].0.ncols()
            )));
        }
        let mut input = Vec::with_capacity(expected);
        match kind {
            ModelKind::PhiMemory => {
                input.extend(phi.iter().map(|z| z.re));
                input.extend(phi.iter().map(|z| z.im));
                input.extend(phi_prev.iter().map(|z| z.re));
                input.extend(phi_prev.iter().map(|z| z.im));
            }
            ModelKind::DensityMemory => {
                input.extend(phi.iter().map(|z| 2.0 * z.norm_sqr()));
                input.extend(phi_prev.iter().map(|z| 2.0 * z.norm_sqr()));
            }
        }
        Ok(Array1::from_vec(input))
    }

    fn forward_cached(&self, input: Array1<f64>) -> (Array1<f64>, MlpCache) {
        let depth = self.layers.len();
        let mut pre = Vec::with_capacity(depth);
        let mut act = Vec::with_capacity(depth - 1);
        let mut a = input.clone();
        for (l, (w, b)) in self.layers.iter().enumerate() {
            let z = w.dot(&a) + b;
            pre.push(z.clone());
            if l + 1 < depth {
                a = z.mapv(selu);
                act.push(a.clone());
            } else {
                a = z;
            }
        }
        (a, MlpCache { input, pre, act })
    }

    pub fn forward(
        &self,
        phi: ArrayView1<Complex64>,
        phi_prev: ArrayView1<Complex64>,
        kind: ModelKind,
    ) -> Result<Array1<f64>> {
        let input = self.assemble_input(phi, phi_prev, kind)?;
        Ok(self.forward_cached(input).0)
    }

    /// Reverse pass through the dense stack: cotangent on the output
    /// pulled back to the assembled input and, optionally, the flat
    /// parameter gradient.
    fn backprop(
        &self,
        cache: &MlpCache,
        cot: ArrayView1<f64>,
        want_params: bool,
    ) -> (Array1<f64>, Option<Array1<f64>>) {
        let depth = self.layers.len();
        let mut param_grad = want_params.then(|| Array1::zeros(self.flat_len()));
        // Offsets of each layer's block in the canonical flat ordering.
        let mut offsets = Vec::with_capacity(depth);
        let mut off = 0;
        for (w, b) in &self.layers {
            offsets.push(off);
            off += w.len() + b.len();
        }

        let mut delta = cot.to_owned();
        for l in (0..depth).rev() {
            let (w, _) = &self.layers[l];
            let a_prev = if l == 0 { &cache.input } else { &cache.act[l - 1] };
            if let Some(pg) = param_grad.as_mut() {
                let base = offsets[l];
                let n_in = w.ncols();
                for (r, d) in delta.iter().enumerate() {
                    let row = base + r * n_in;
                    for (c, a) in a_prev.iter().enumerate() {
                        pg[row + c] += d * a;
                    }
                }
                let bias_base = base + w.len();
                for (r, d) in delta.iter().enumerate() {
                    pg[bias_base + r] += d;
                }
            }
            let mut upstream = w.t().dot(&delta);
            if l > 0 {
                let z = &cache.pre[l - 1];
                upstream.zip_mut_with(z, |u, &zz| *u *= selu_deriv(zz));
            }
            delta = upstream;
        }
        (delta, param_grad)
    }

    /// Chain the assembled-input gradient back to the four state parts.
    fn input_grad_to_state(
        &self,
        input_grad: &Array1<f64>,
        phi: ArrayView1<Complex64>,
        phi_prev: ArrayView1<Complex64>,
        kind: ModelKind,
    ) -> InputGradients {
        let points = self.output_width();
        match kind {
            ModelKind::PhiMemory => InputGradients {
                phi_re: input_grad.slice(ndarray::s![0..points]).to_owned(),
                phi_im: input_grad.slice(ndarray::s![points..2 * points]).to_owned(),
                prev_re: input_grad.slice(ndarray::s![2 * points..3 * points]).to_owned(),
                prev_im: input_grad.slice(ndarray::s![3 * points..4 * points]).to_owned(),
            },
            ModelKind::DensityMemory => {
                // n = 2(phi_R^2 + phi_I^2), so dn/dphi_R = 4 phi_R etc.
                let g_n = input_grad.slice(ndarray::s![0..points]);
                let g_np = input_grad.slice(ndarray::s![points..2 * points]);
                InputGradients {
                    phi_re: Array1::from_shape_fn(points, |j| g_n[j] * 4.0 * phi[j].re),
                    phi_im: Array1::from_shape_fn(points, |j| g_n[j] * 4.0 * phi[j].im),
                    prev_re: Array1::from_shape_fn(points, |j| g_np[j] * 4.0 * phi_prev[j].re),
                    prev_im: Array1::from_shape_fn(points, |j| g_np[j] * 4.0 * phi_prev[j].im),
                }
            }
        }
    }

    /// Cotangent contraction against both input and parameter Jacobians in
    /// one reverse pass.
    pub fn vjp_all(
        &self,
        phi: ArrayView1<Complex64>,
        phi_prev: ArrayView1<Complex64>,
        kind: ModelKind,
        cot: ArrayView1<f64>,
    ) -> Result<(InputGradients, Array1<f64>)> {
        let input = self.assemble_input(phi, phi_prev, kind)?;
        let (_, cache) = self.forward_cached(input);
        let (input_grad, params) = self.backprop(&cache, cot, true);
        Ok((
            self.input_grad_to_state(&input_grad, phi, phi_prev, kind),
            params.unwrap(),
        ))
    }

    pub fn vjp_inputs(
        &self,
        phi: ArrayView1<Complex64>,
        phi_prev: ArrayView1<Complex64>,
        kind: ModelKind,
        cot: ArrayView1<f64>,
    ) -> Result<InputGradients> {
        let input = self.assemble_input(phi, phi_prev, kind)?;
        let (_, cache) = self.forward_cached(input);
        let (input_grad, _) = self.backprop(&cache, cot, false);
        Ok(self.input_grad_to_state(&input_grad, phi, phi_prev, kind))
    }

    pub fn vjp_params(
        &self,
        phi: ArrayView1<Complex64>,
        phi_prev: ArrayView1<Complex64>,
        kind: ModelKind,
        cot: ArrayView1<f64>,
    ) -> Result<Array1<f64>> {
        Ok(self.vjp_all(phi, phi_prev, kind, cot)?.1)
    }
}

/// `cot^T dvC/d(phi parts)`: one vector per state part.
#[derive(Debug, Clone)]
pub struct InputGradients {
    pub phi_re: Array1<f64>,
    pub phi_im: Array1<f64>,
    pub prev_re: Array1<f64>,
    pub prev_im: Array1<f64>,
}
