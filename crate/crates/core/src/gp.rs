//! Gaussian-process regression with a constant mean and a squared-exponential
//! kernel over the 2-D log₁₀ weight plane.
//!
//! Targets are standardized internally; every public quantity is reported in
//! the original target units.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, Cholesky, Matrix};

pub const INPUT_DIM: usize = 2;
pub type Point = [f64; INPUT_DIM];

/// Smallest noise variance (standardized units).
pub const JITTER: f64 = 1e-8;
const MAX_JITTER: f64 = 1e-4;

/// Kernel hyperparameters in standardized target units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelParams {
    pub lengthscales: Point,
    pub signal_var: f64,
    pub noise_var: f64,
}

impl Default for KernelParams {
    fn default() -> Self {
        Self { lengthscales: [1.0; INPUT_DIM], signal_var: 1.0, noise_var: JITTER }
    }
}

impl KernelParams {
    fn validate(&self) -> Result<()> {
        let ok = self.lengthscales.iter().all(|l| *l > 0.0 && l.is_finite())
            && self.signal_var > 0.0
            && self.signal_var.is_finite()
            && self.noise_var >= JITTER
            && self.noise_var.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("invalid kernel parameters {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum HyperPolicy {
    Fixed(KernelParams),
    /// Type-II maximum likelihood; falls back to the defaults below three points.
    MaxLikelihood,
}

/// Hyperparameters in original target units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub mean: f64,
    pub signal_var: f64,
    pub lengthscales: Point,
    pub noise_var: f64,
}

/// Serializable model contents; refitting from a dump is deterministic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpDump {
    pub inputs: Vec<Point>,
    pub targets: Vec<f64>,
    pub kernel: KernelParams,
    pub hyperparameters: Hyperparameters,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpModel {
    inputs: Vec<Point>,
    targets: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
    kernel: KernelParams,
    chol: Option<Cholesky>,
    alpha: Vec<f64>,
}

/// Posterior at one query, with derivatives of mean and stddev.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub stddev: f64,
    pub d_mean: Point,
    pub d_stddev: Point,
}

fn se(kernel: &KernelParams, a: &Point, b: &Point) -> f64 {
    let mut s = 0.0;
    for d in 0..INPUT_DIM {
        let r = (a[d] - b[d]) / kernel.lengthscales[d];
        s += r * r;
    }
    kernel.signal_var * (-0.5 * s).exp()
}

fn kernel_matrix(kernel: &KernelParams, x: &[Point], noise: f64) -> Matrix {
    let n = x.len();
    let mut k = Matrix::zeros(n);
    for i in 0..n {
        for j in 0..=i {
            let v = se(kernel, &x[i], &x[j]);
            k.set(i, j, v);
            k.set(j, i, v);
        }
        k.add(i, i, noise);
    }
    k
}

/// Factorizes with the requested noise, doubling it on failure up to the cap.
fn factor_with_jitter(kernel: &mut KernelParams, x: &[Point]) -> Result<Cholesky> {
    let mut noise = kernel.noise_var.max(JITTER);
    loop {
        if let Some(c) = Cholesky::factor(&kernel_matrix(kernel, x, noise)) {
            kernel.noise_var = noise;
            return Ok(c);
        }
        if noise >= MAX_JITTER {
            return Err(Error::IllConditioned { jitter: noise });
        }
        noise = (2.0 * noise).min(MAX_JITTER);
    }
}

/// Standardized log marginal likelihood, `None` if the factorization fails.
fn std_log_likelihood(kernel: &KernelParams, x: &[Point], y: &[f64]) -> Option<f64> {
    let chol = Cholesky::factor(&kernel_matrix(kernel, x, kernel.noise_var))?;
    let alpha = chol.solve(y);
    let n = y.len() as f64;
    Some(-0.5 * dot(y, &alpha) - 0.5 * chol.log_det() - 0.5 * n * (2.0 * std::f64::consts::PI).ln())
}

// Search box for ML-II, in natural-log coordinates:
// ln ℓ₁, ln ℓ₂, ln σ_f², ln σ_n².
const LOG_LO: [f64; 4] = [-3.0, -3.0, -4.6, -18.42];
const LOG_HI: [f64; 4] = [3.0, 3.0, 4.6, 0.0];

fn params_from_log(z: &[f64; 4]) -> KernelParams {
    KernelParams { lengthscales: [z[0].exp(), z[1].exp()], signal_var: z[2].exp(), noise_var: z[3].exp().max(JITTER) }
}

/// Multi-start coordinate search maximizing the log marginal likelihood.
fn max_likelihood(x: &[Point], y: &[f64]) -> KernelParams {
    let score = |z: &[f64; 4]| std_log_likelihood(&params_from_log(z), x, y).unwrap_or(f64::NEG_INFINITY);
    let mut best_z = [0.0, 0.0, 0.0, JITTER.ln()];
    let mut best = score(&best_z);
    for l1 in [0.25f64, 1.0, 4.0] {
        for l2 in [0.25f64, 1.0, 4.0] {
            let mut z = [l1.ln(), l2.ln(), 0.0, (1e-3f64).ln()];
            let mut f = score(&z);
            let mut step = 1.0;
            while step > 1e-3 {
                let mut improved = false;
                for d in 0..4 {
                    for dir in [1.0, -1.0] {
                        let mut t = z;
                        t[d] = (t[d] + dir * step).clamp(LOG_LO[d], LOG_HI[d]);
                        let ft = score(&t);
                        if ft > f {
                            z = t;
                            f = ft;
                            improved = true;
                            break;
                        }
                    }
                }
                if !improved {
                    step *= 0.5;
                }
            }
            if f > best {
                best = f;
                best_z = z;
            }
        }
    }
    params_from_log(&best_z)
}

impl GpModel {
    /// Model with no data: the prior with standardized defaults.
    pub fn prior(kernel: KernelParams) -> Self {
        Self { inputs: Vec::new(), targets: Vec::new(), y_mean: 0.0, y_scale: 1.0, kernel, chol: None, alpha: Vec::new() }
    }

    pub fn fit(inputs: &[Point], targets: &[f64], policy: HyperPolicy) -> Result<Self> {
        if inputs.len() != targets.len() {
            return Err(Error::InvalidArgument("inputs and targets differ in length".into()));
        }
        if inputs.is_empty() {
            return Err(Error::InvalidArgument("at least one training point is required".into()));
        }
        if inputs.iter().flatten().chain(targets).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("training data must be finite".into()));
        }
        let n = targets.len() as f64;
        let y_mean = targets.iter().sum::<f64>() / n;
        let var = targets.iter().map(|y| (y - y_mean).powi(2)).sum::<f64>() / n;
        let y_scale = if var > 0.0 { var.sqrt() } else { 1.0 };
        let y_std: Vec<f64> = targets.iter().map(|y| (y - y_mean) / y_scale).collect();

        let mut kernel = match policy {
            HyperPolicy::Fixed(k) => k,
            HyperPolicy::MaxLikelihood if targets.len() < 3 => KernelParams::default(),
            HyperPolicy::MaxLikelihood => max_likelihood(inputs, &y_std),
        };
        kernel.validate()?;
        if kernel.noise_var <= JITTER {
            check_conflicting_duplicates(inputs, targets)?;
        }
        let chol = factor_with_jitter(&mut kernel, inputs)?;
        let alpha = chol.solve(&y_std);
        Ok(Self { inputs: inputs.to_vec(), targets: targets.to_vec(), y_mean, y_scale, kernel, chol: Some(chol), alpha })
    }

    pub fn from_dump(dump: &GpDump) -> Result<Self> {
        Self::fit(&dump.inputs, &dump.targets, HyperPolicy::Fixed(dump.kernel))
    }

    pub fn dump(&self) -> GpDump {
        GpDump {
            inputs: self.inputs.clone(),
            targets: self.targets.clone(),
            kernel: self.kernel,
            hyperparameters: self.hyperparameters(),
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    pub fn inputs(&self) -> &[Point] {
        &self.inputs
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn kernel(&self) -> &KernelParams {
        &self.kernel
    }

    pub fn hyperparameters(&self) -> Hyperparameters {
        let s2 = self.y_scale * self.y_scale;
        Hyperparameters {
            mean: self.y_mean,
            signal_var: s2 * self.kernel.signal_var,
            lengthscales: self.kernel.lengthscales,
            noise_var: s2 * self.kernel.noise_var,
        }
    }

    /// Log marginal likelihood of the training targets in original units.
    pub fn log_marginal_likelihood(&self) -> f64 {
        let Some(chol) = &self.chol else { return 0.0 };
        let n = self.targets.len() as f64;
        let y_std: Vec<f64> = self.targets.iter().map(|y| (y - self.y_mean) / self.y_scale).collect();
        -0.5 * dot(&y_std, &self.alpha) - 0.5 * chol.log_det() - n * self.y_scale.ln()
            - 0.5 * n * (2.0 * std::f64::consts::PI).ln()
    }

    /// Posterior mean and latent standard deviation.
    pub fn predict(&self, query: &Point) -> (f64, f64) {
        let p = self.predict_full(query);
        (p.mean, p.stddev)
    }

    pub fn predict_full(&self, query: &Point) -> Prediction {
        let kern = &self.kernel;
        let s = self.y_scale;
        let Some(chol) = &self.chol else {
            return Prediction { mean: self.y_mean, stddev: s * kern.signal_var.sqrt(), d_mean: [0.0; 2], d_stddev: [0.0; 2] };
        };
        let ks: Vec<f64> = self.inputs.iter().map(|x| se(kern, query, x)).collect();
        // ∂k_i/∂x_d = −k_i (x_d − x_id)/ℓ_d²
        let dk = |d: usize| -> Vec<f64> {
            let l2 = kern.lengthscales[d] * kern.lengthscales[d];
            self.inputs.iter().zip(&ks).map(|(x, k)| -k * (query[d] - x[d]) / l2).collect()
        };
        let kinv_k = chol.solve(&ks);
        let var_std = (kern.signal_var - dot(&ks, &kinv_k)).max(0.0);
        let stddev = s * var_std.sqrt();
        let mut d_mean = [0.0; 2];
        let mut d_stddev = [0.0; 2];
        for d in 0..INPUT_DIM {
            let g = dk(d);
            d_mean[d] = s * dot(&g, &self.alpha);
            if var_std > 0.0 {
                d_stddev[d] = s * (-dot(&kinv_k, &g)) / var_std.sqrt();
            }
        }
        Prediction { mean: self.y_mean + s * dot(&ks, &self.alpha), stddev, d_mean, d_stddev }
    }
}

fn check_conflicting_duplicates(inputs: &[Point], targets: &[f64]) -> Result<()> {
    for i in 0..inputs.len() {
        for j in 0..i {
            if inputs[i] == inputs[j] && targets[i] != targets[j] {
                return Err(Error::IllConditioned { jitter: JITTER });
            }
        }
    }
    Ok(())
}
