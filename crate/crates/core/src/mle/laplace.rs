use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, OnceLock};

use crate::error::{Error, Result};
use crate::linalg::{HodlrFactor, HodlrKernel, HodlrOptions, SymmetricToeplitz};
use crate::mrw::{normalization_constant, unit_covariance_column, MrwParams};

/// Latent fields up to this length use a single dense block.
const DENSE_LIMIT: usize = 256;

/// The `λ = 1` covariance of `n` consecutive log-volatilities, in both FFT
/// and hierarchical form. `Σ = λ²·K`.
#[derive(Debug)]
pub struct LatentPrior {
    t_ratio: f64,
    kernel: HodlrKernel,
    unit_factor: OnceLock<std::result::Result<HodlrFactor, String>>,
}

impl LatentPrior {
    pub fn new(n: usize, t_ratio: f64) -> Self {
        let toeplitz = SymmetricToeplitz::new(unit_covariance_column(t_ratio, n));
        let kernel = if n <= DENSE_LIMIT {
            HodlrKernel::dense(toeplitz)
        } else {
            HodlrKernel::new(toeplitz, HodlrOptions::default())
        };
        Self {
            t_ratio,
            kernel,
            unit_factor: OnceLock::new(),
        }
    }

    /// Process-wide cache keyed by `(n, T/Δt)`. Window fits of equal length share one prior.
    pub fn shared(n: usize, t_ratio: f64) -> Arc<Self> {
        static CACHE: OnceLock<Mutex<HashMap<(usize, u64), Arc<LatentPrior>>>> = OnceLock::new();
        let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
        let key = (n, t_ratio.to_bits());
        if let Some(p) = cache.lock().expect("prior cache poisoned").get(&key) {
            return p.clone();
        }
        let prior = Arc::new(Self::new(n, t_ratio));
        let mut guard = cache.lock().expect("prior cache poisoned");
        if guard.len() >= 32 {
            guard.clear();
        }
        guard.entry(key).or_insert(prior).clone()
    }

    pub fn len(&self) -> usize {
        self.kernel.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernel.is_empty()
    }

    pub fn t_ratio(&self) -> f64 {
        self.t_ratio
    }

    /// True when `K = 0` (`T ≤ Δt`).
    pub fn is_null(&self) -> bool {
        self.kernel.toeplitz().column()[0] == 0.0
    }

    fn mul_unit(&self, v: &[f64]) -> Vec<f64> {
        self.kernel.toeplitz().mul_vec(v)
    }

    fn unit_factor(&self) -> Result<&HodlrFactor> {
        self.unit_factor
            .get_or_init(|| self.kernel.factor(0.0, 1.0, None).map_err(|e| e.to_string()))
            .as_ref()
            .map_err(|e| Error::Factorization(e.clone()))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct LaplaceOptions {
    pub max_iterations: usize,
    /// Convergence threshold on the max-norm of the gradient in `h`.
    pub grad_tol: f64,
    pub max_halvings: usize,
}

impl Default for LaplaceOptions {
    fn default() -> Self {
        Self {
            max_iterations: 100,
            grad_tol: 1e-9,
            max_halvings: 50,
        }
    }
}

/// Mode of `p(h | x)` with the factorization of `B = I + W^½ Σ W^½`, where
/// `W = diag(x² e^{−ĥ} / (2σ²c))`. The negative Hessian of the joint
/// log-density is `Σ⁻¹ + W = Σ⁻¹ B'` with `det B' = det B`.
#[derive(Debug)]
pub struct PosteriorMode {
    pub h: Vec<f64>,
    /// `Σ⁻¹ ĥ`.
    pub precision_h: Vec<f64>,
    pub weights: Vec<f64>,
    pub factor: HodlrFactor,
    pub iterations: usize,
    pub grad_norm: f64,
    /// `Σ_t log p(x_t | ĥ_t) − ½ ĥᵀΣ⁻¹ĥ − ½ log det B`.
    pub log_likelihood: f64,
}

impl PosteriorMode {
    /// `log det(Σ⁻¹ + W)`; requires a non-singular prior.
    pub fn log_det_neg_hessian(&self, params: &MrwParams, prior: &LatentPrior) -> Result<f64> {
        let n = self.h.len() as f64;
        if params.lambda == 0.0 || prior.is_null() {
            return Err(Error::validation("negative Hessian is unbounded for a degenerate prior"));
        }
        let log_det_sigma = n * (params.lambda * params.lambda).ln() + prior.unit_factor()?.log_det();
        Ok(self.factor.log_det() - log_det_sigma)
    }
}

struct Observation<'a> {
    x2: Vec<f64>,
    log_norm: f64,
    inv_2s2c: f64,
    _x: &'a [f64],
}

impl<'a> Observation<'a> {
    fn new(x: &'a [f64], params: &MrwParams) -> Self {
        let s2c = params.sigma * params.sigma * normalization_constant(params);
        Self {
            x2: x.iter().map(|v| v * v).collect(),
            log_norm: -0.5 * (2.0 * PI * s2c).ln(),
            inv_2s2c: 1.0 / (2.0 * s2c),
            _x: x,
        }
    }

    /// `Σ_t log N(x_t; 0, σ² c e^{h_t})`.
    fn log_lik(&self, h: &[f64]) -> f64 {
        self.x2
            .iter()
            .zip(h)
            .map(|(&x2, &hv)| self.log_norm - 0.5 * hv - x2 * (-hv).exp() * self.inv_2s2c)
            .sum()
    }

    fn weights(&self, h: &[f64]) -> Vec<f64> {
        self.x2
            .iter()
            .zip(h)
            .map(|(&x2, &hv)| x2 * (-hv).exp() * self.inv_2s2c)
            .collect()
    }
}

fn check_inputs(x: &[f64], params: &MrwParams) -> Result<()> {
    if x.is_empty() {
        return Err(Error::validation("need at least one observation"));
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("observations must be finite"));
    }
    params.validate(f64::INFINITY)
}

/// `log p(x, h | θ)`: the conditional Gaussian terms plus the latent Gaussian
/// log-density. For a degenerate prior (`λ = 0` or `T ≤ Δt`) the latent
/// density is a point mass at 0 and contributes nothing.
pub fn joint_log_density(x: &[f64], h: &[f64], params: &MrwParams) -> Result<f64> {
    check_inputs(x, params)?;
    if h.len() != x.len() || h.iter().any(|v| !v.is_finite()) {
        return Err(Error::validation("latent vector must be finite and match the data length"));
    }
    let obs = Observation::new(x, params);
    let prior = LatentPrior::shared(x.len(), params.t_ratio());
    let data = obs.log_lik(h);
    if params.lambda == 0.0 || prior.is_null() {
        if h.iter().any(|&v| v != 0.0) {
            return Err(Error::validation("latent vector outside the support of a degenerate prior"));
        }
        return Ok(data);
    }
    let l2 = params.lambda * params.lambda;
    let f = prior.unit_factor()?;
    let kinv_h = f.solve_vec(h);
    let quad: f64 = h.iter().zip(&kinv_h).map(|(a, b)| a * b).sum::<f64>() / l2;
    let n = x.len() as f64;
    let log_det = n * l2.ln() + f.log_det();
    Ok(data - 0.5 * quad - 0.5 * log_det - 0.5 * n * (2.0 * PI).ln())
}

/// Gradient of [`joint_log_density`] with respect to `h` (non-degenerate prior).
pub fn joint_log_density_gradient(x: &[f64], h: &[f64], params: &MrwParams) -> Result<Vec<f64>> {
    check_inputs(x, params)?;
    let obs = Observation::new(x, params);
    let prior = LatentPrior::shared(x.len(), params.t_ratio());
    if params.lambda == 0.0 || prior.is_null() {
        return Err(Error::validation("gradient undefined for a degenerate prior"));
    }
    let l2 = params.lambda * params.lambda;
    let kinv_h = prior.unit_factor()?.solve_vec(h);
    Ok(obs
        .weights(h)
        .iter()
        .zip(&kinv_h)
        .map(|(w, k)| -0.5 + w - k / l2)
        .collect())
}

pub fn posterior_mode(x: &[f64], params: &MrwParams) -> Result<PosteriorMode> {
    check_inputs(x, params)?;
    let prior = LatentPrior::shared(x.len(), params.t_ratio());
    posterior_mode_with(x, params, &prior, None, None, &LaplaceOptions::default())
}

/// Laplace approximation of `log p(x | θ)`.
pub fn approx_log_likelihood(x: &[f64], params: &MrwParams) -> Result<f64> {
    Ok(posterior_mode(x, params)?.log_likelihood)
}

/// Newton iteration in the coordinates `a = Σ⁻¹h`, which stay well defined
/// when `Σ` is singular. `start` is an initial `K⁻¹h = λ²a` (the field in
/// `λ`-free units), used to warm-start consecutive evaluations.
///
/// Newton systems in `B` are solved by conjugate gradients preconditioned
/// with `reference`, a factorization of `B` at nearby parameters. The
/// preconditioner is refreshed when CG needs many iterations. One last
/// factorization at the mode gives `log det B`.
pub(crate) fn posterior_mode_with(
    x: &[f64],
    params: &MrwParams,
    prior: &LatentPrior,
    start: Option<&[f64]>,
    reference: Option<&HodlrFactor>,
    opts: &LaplaceOptions,
) -> Result<PosteriorMode> {
    let n = x.len();
    assert_eq!(prior.len(), n, "prior length does not match the data");
    let obs = Observation::new(x, params);
    let l2 = params.lambda * params.lambda;
    let degenerate = l2 == 0.0 || prior.is_null();
    let sigma_mul = |v: &[f64]| -> Vec<f64> {
        if degenerate {
            vec![0.0; v.len()]
        } else {
            prior.mul_unit(v).into_iter().map(|y| l2 * y).collect()
        }
    };
    let objective = |a: &[f64], h: &[f64]| -> f64 {
        obs.log_lik(h) - 0.5 * a.iter().zip(h).map(|(p, q)| p * q).sum::<f64>()
    };

    let mut a: Vec<f64> = match start {
        Some(s) if !degenerate => s.iter().map(|v| v / l2).collect(),
        _ => vec![0.0; n],
    };
    let mut h = sigma_mul(&a);
    let mut psi = objective(&a, &h);
    let mut grad_norm = f64::INFINITY;
    let mut own: Option<HodlrFactor> = None;
    let mut refresh = reference.is_none();
    for iter in 0..=opts.max_iterations {
        let w = obs.weights(&h);
        grad_norm = w
            .iter()
            .zip(&a)
            .map(|(wv, av)| (-0.5 + wv - av).abs())
            .fold(0.0, f64::max);
        let sqrt_w: Vec<f64> = w.iter().map(|v| v.sqrt()).collect();
        let converged = grad_norm < opts.grad_tol || degenerate;
        if converged || refresh {
            let factor = prior.kernel.factor(1.0, if degenerate { 0.0 } else { l2 }, Some(&sqrt_w))?;
            if converged {
                let log_likelihood = psi - 0.5 * factor.log_det();
                return Ok(PosteriorMode {
                    h,
                    precision_h: a,
                    weights: w,
                    factor,
                    iterations: iter,
                    grad_norm: if degenerate { 0.0 } else { grad_norm },
                    log_likelihood,
                });
            }
            own = Some(factor);
            refresh = false;
        }
        if iter == opts.max_iterations {
            break;
        }
        let precond = own.as_ref().or(reference).expect("a preconditioner is available");
        // Newton step: Δa = g − W^½ B⁻¹ W^½ Σ g with g the gradient in h.
        let g: Vec<f64> = w.iter().zip(&a).map(|(wv, av)| wv - 0.5 - av).collect();
        let sg = sigma_mul(&g);
        let rhs: Vec<f64> = sqrt_w.iter().zip(&sg).map(|(s, v)| s * v).collect();
        let apply_b = |v: &[f64]| -> Vec<f64> {
            let sv: Vec<f64> = sqrt_w.iter().zip(v).map(|(s, x)| s * x).collect();
            let ksv = sigma_mul(&sv);
            v.iter()
                .zip(sqrt_w.iter().zip(&ksv))
                .map(|(x, (s, k))| x + s * k)
                .collect()
        };
        // Inexact Newton: the solve only needs to be as accurate as the gradient is small.
        let cg_tol = grad_norm.clamp(1e-12, 1e-3);
        let (sol, cg_iters) = preconditioned_cg(apply_b, |r| precond.solve_vec(r), &rhs, cg_tol, 200);
        if cg_iters > 25 {
            refresh = true;
        }
        let da: Vec<f64> = g
            .iter()
            .zip(sqrt_w.iter().zip(&sol))
            .map(|(gv, (s, v))| gv - s * v)
            .collect();
        let dh = sigma_mul(&da);
        let a_new: Vec<f64> = a.iter().zip(&da).map(|(p, q)| p + q).collect();
        let h_new: Vec<f64> = h.iter().zip(&dh).map(|(p, q)| p + q).collect();
        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..=opts.max_halvings {
            let a_try: Vec<f64> = a.iter().zip(&a_new).map(|(p, q)| p + step * (q - p)).collect();
            let h_try: Vec<f64> = h.iter().zip(&h_new).map(|(p, q)| p + step * (q - p)).collect();
            let psi_try = objective(&a_try, &h_try);
            if psi_try.is_finite() && psi_try >= psi - 1e-12 * psi.abs().max(1.0) {
                a = a_try;
                h = h_try;
                psi = psi_try;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    Err(Error::NewtonNonConvergence {
        iterations: opts.max_iterations,
        grad_norm,
    })
}

/// Solves `A x = b` for symmetric positive definite `A`; stops when the
/// residual norm falls below `rel_tol·‖b‖`. Returns the iterate and the
/// iteration count.
fn preconditioned_cg(
    apply: impl Fn(&[f64]) -> Vec<f64>,
    precondition: impl Fn(&[f64]) -> Vec<f64>,
    b: &[f64],
    rel_tol: f64,
    max_iter: usize,
) -> (Vec<f64>, usize) {
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(p, q)| p * q).sum::<f64>();
    let bnorm = dot(b, b).sqrt();
    let mut x = precondition(b);
    if bnorm == 0.0 {
        return (x, 0);
    }
    let ax = apply(&x);
    let mut r: Vec<f64> = b.iter().zip(&ax).map(|(p, q)| p - q).collect();
    let mut z = precondition(&r);
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    for it in 1..=max_iter {
        if dot(&r, &r).sqrt() <= rel_tol * bnorm {
            return (x, it);
        }
        let ap = apply(&p);
        let alpha = rz / dot(&p, &ap);
        for i in 0..x.len() {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        z = precondition(&r);
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..p.len() {
            p[i] = z[i] + beta * p[i];
        }
    }
    (x, max_iter + 1)
}

/// First-order prediction of `K⁻¹ĥ` at `next` from the mode at `current`
/// (same prior). With `ρ = ln σ²c`, the mode moves by
/// `(Σ⁻¹ + W)⁻¹ (−w Δρ + a Δλ²/λ²)`.
pub(crate) fn predicted_start(
    mode: &PosteriorMode,
    current: &MrwParams,
    next: &MrwParams,
    prior: &LatentPrior,
) -> Vec<f64> {
    let l2 = current.lambda * current.lambda;
    if l2 == 0.0 || prior.is_null() {
        return vec![0.0; mode.h.len()];
    }
    let rho = |p: &MrwParams| 2.0 * p.sigma.ln() - 0.5 * p.log_vol_variance();
    let d_rho = rho(next) - rho(current);
    let d_l2 = next.lambda * next.lambda - l2;
    // The expansion is only trusted for moderate relative changes in λ².
    if !(d_l2.abs() <= l2) {
        return mode.precision_h.iter().map(|a| l2 * a).collect();
    }
    let v: Vec<f64> = mode
        .weights
        .iter()
        .zip(&mode.precision_h)
        .map(|(w, a)| -w * d_rho + a * d_l2 / l2)
        .collect();
    let sqrt_w: Vec<f64> = mode.weights.iter().map(|w| w.sqrt()).collect();
    let sv: Vec<f64> = prior.mul_unit(&v).into_iter().map(|y| l2 * y).collect();
    let rhs: Vec<f64> = sqrt_w.iter().zip(&sv).map(|(s, y)| s * y).collect();
    let u = mode.factor.solve_vec(&rhs);
    mode.precision_h
        .iter()
        .zip(v.iter().zip(sqrt_w.iter().zip(&u)))
        .map(|(a, (vv, (s, uu)))| l2 * (a + vv - s * uu))
        .collect()
}
