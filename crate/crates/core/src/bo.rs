//! Trust-region Bayesian optimisation over sampler weights.
//!
//! Observations are solutions (0/1 points) paired with their coverage. A
//! Gaussian process with a squared-exponential ARD kernel is fit to the
//! standardised values, and the next weight vector is chosen by Thompson
//! sampling among candidates drawn inside a box of side `L` around the best
//! solution seen. `L` doubles after a run of improving rounds and halves
//! after a run of stalled ones.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dpll::WeightVector;
use crate::seeding::{derive_seed, rng};

pub const DELTA_MIN: f64 = 0.01;
pub const DELTA_MAX: f64 = 0.99;

#[derive(Debug, Error, PartialEq)]
pub enum BoError {
    #[error("no observations")]
    Empty,
    #[error("{points} points but {values} values")]
    LengthMismatch { points: usize, values: usize },
    #[error("point has dimension {got}, expected {expected}")]
    Dimension { expected: usize, got: usize },
    #[error("value {0} is not finite")]
    NonFinite(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrustRegionParams {
    pub l_init: f64,
    pub l_min: f64,
    pub l_max: f64,
    pub tau_succ: u32,
    pub tau_fail: u32,
    /// A round improves when its best exceeds `best + rel_tol · |best|`.
    pub rel_tol: f64,
}

impl Default for TrustRegionParams {
    fn default() -> Self {
        TrustRegionParams {
            l_init: 0.8,
            l_min: 0.5f64.powi(7),
            l_max: 1.0,
            tau_succ: 3,
            tau_fail: 3,
            rel_tol: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GpConfig {
    pub adam_iters: usize,
    pub learning_rate: f64,
    /// Training points kept, nearest to the incumbent first.
    pub max_train: usize,
    pub candidates: usize,
    /// Fixes the noise variance instead of fitting it.
    pub fixed_noise: Option<f64>,
}

impl Default for GpConfig {
    fn default() -> Self {
        GpConfig {
            adam_iters: 40,
            learning_rate: 0.1,
            max_train: 256,
            candidates: 512,
            fixed_noise: None,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct BoConfig {
    pub trust_region: TrustRegionParams,
    pub gp: GpConfig,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub point: Vec<f64>,
    pub value: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BoState {
    pub observations: Vec<Observation>,
    pub length: f64,
    pub success_count: u32,
    pub failure_count: u32,
    pub best_value: f64,
    /// Index of the incumbent in `observations`.
    pub best_index: usize,
    /// `length` after initialisation and after every update.
    pub length_trace: Vec<f64>,
    pub suggestions: u64,
    pub config: BoConfig,
    #[serde(skip)]
    index: HashMap<Vec<u64>, usize>,
}

fn point_key(p: &[f64]) -> Vec<u64> {
    p.iter().map(|v| v.to_bits()).collect()
}

impl BoState {
    pub fn dim(&self) -> usize {
        self.observations[0].point.len()
    }

    pub fn incumbent(&self) -> &Observation {
        &self.observations[self.best_index]
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("state serializes")
    }

    /// Adds observations; an already seen point keeps the larger value.
    fn insert(&mut self, points: &[Vec<f64>], values: &[f64]) -> Result<(), BoError> {
        if points.len() != values.len() {
            return Err(BoError::LengthMismatch {
                points: points.len(),
                values: values.len(),
            });
        }
        let dim = self.observations.first().map(|o| o.point.len()).or(points.first().map(Vec::len));
        for (p, &v) in points.iter().zip(values) {
            if let Some(d) = dim {
                if p.len() != d {
                    return Err(BoError::Dimension { expected: d, got: p.len() });
                }
            }
            if !v.is_finite() {
                return Err(BoError::NonFinite(v));
            }
            let key = point_key(p);
            let idx = match self.index.get(&key) {
                Some(&i) => {
                    let o = &mut self.observations[i];
                    o.value = o.value.max(v);
                    i
                }
                None => {
                    self.observations.push(Observation {
                        point: p.clone(),
                        value: v,
                    });
                    self.index.insert(key, self.observations.len() - 1);
                    self.observations.len() - 1
                }
            };
            if self.observations[idx].value > self.best_value {
                self.best_value = self.observations[idx].value;
                self.best_index = idx;
            }
        }
        Ok(())
    }
}

pub fn bits_to_point(bits: &[bool]) -> Vec<f64> {
    bits.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect()
}

/// Starts a trust region from the first round of observations.
pub fn init_ci(points: &[Vec<f64>], values: &[f64], config: BoConfig) -> Result<BoState, BoError> {
    if points.is_empty() {
        return Err(BoError::Empty);
    }
    let mut state = BoState {
        observations: Vec::new(),
        length: config.trust_region.l_init,
        success_count: 0,
        failure_count: 0,
        best_value: f64::NEG_INFINITY,
        best_index: 0,
        length_trace: vec![config.trust_region.l_init],
        suggestions: 0,
        config,
        index: HashMap::new(),
    };
    state.insert(points, values)?;
    Ok(state)
}

/// Records a round and resizes the trust region.
pub fn update_ci(state: &mut BoState, points: &[Vec<f64>], values: &[f64]) -> Result<(), BoError> {
    if points.is_empty() {
        return Err(BoError::Empty);
    }
    let tr = state.config.trust_region;
    let round_best = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let improved = round_best > state.best_value + tr.rel_tol * state.best_value.abs();
    state.insert(points, values)?;
    if improved {
        state.success_count += 1;
        state.failure_count = 0;
    } else {
        state.failure_count += 1;
        state.success_count = 0;
    }
    if state.success_count >= tr.tau_succ {
        state.length = (2.0 * state.length).min(tr.l_max);
        state.success_count = 0;
    } else if state.failure_count >= tr.tau_fail {
        state.length = (state.length / 2.0).max(tr.l_min);
        state.failure_count = 0;
    }
    state.length_trace.push(state.length);
    Ok(())
}

/// The trust region is still worth searching.
pub fn tr_sufficient(state: &BoState) -> bool {
    state.length > state.config.trust_region.l_min
}

/// Proposes the next weight vector, every entry in `[0.01, 0.99]`.
pub fn suggest_prefer(state: &mut BoState) -> WeightVector {
    let mut r = rng(derive_seed(state.config.seed, &[state.suggestions]));
    state.suggestions += 1;
    let center = state.incumbent().point.clone();
    let half = state.length / 2.0;
    let lb: Vec<f64> = center.iter().map(|c| (c - half).max(0.0)).collect();
    let ub: Vec<f64> = center.iter().map(|c| (c + half).min(1.0)).collect();

    let values: Vec<f64> = state.observations.iter().map(|o| o.value).collect();
    let spread = values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
        - values.iter().copied().fold(f64::INFINITY, f64::min);
    let raw = if state.observations.len() < 2 || spread <= 0.0 {
        center
            .iter()
            .zip(lb.iter().zip(&ub))
            .map(|(_, (&l, &u))| uniform(&mut r, l, u))
            .collect()
    } else {
        thompson_candidate(state, &center, &lb, &ub, &mut r)
    };
    WeightVector::new(raw.into_iter().map(|v| v.clamp(DELTA_MIN, DELTA_MAX)).collect())
        .expect("clamped weights are in range")
}

fn uniform(r: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        r.random_range(lo..=hi)
    } else {
        lo
    }
}

fn thompson_candidate(
    state: &BoState,
    center: &[f64],
    lb: &[f64],
    ub: &[f64],
    r: &mut ChaCha8Rng,
) -> Vec<f64> {
    let cfg = state.config.gp;
    let d = center.len();
    let train = nearest_indices(state, cfg.max_train);
    let x = DMatrix::from_fn(train.len(), d, |i, j| state.observations[train[i]].point[j]);
    let y: Vec<f64> = train.iter().map(|&i| state.observations[i].value).collect();
    let gp = Gp::fit(&x, &y, &cfg);

    let prob = (20.0 / d as f64).min(1.0);
    let n_cand = cfg.candidates.max(1);
    let mut cand = DMatrix::from_fn(n_cand, d, |_, j| center[j]);
    for i in 0..n_cand {
        let mut any = false;
        for j in 0..d {
            if r.random_bool(prob) {
                cand[(i, j)] = uniform(r, lb[j], ub[j]);
                any = true;
            }
        }
        if !any {
            let j = r.random_range(0..d);
            cand[(i, j)] = uniform(r, lb[j], ub[j]);
        }
    }
    let draw = gp.sample_joint(&cand, r);
    let best = draw
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
    cand.row(best.0).iter().copied().collect()
}

/// Indices of up to `cap` observations closest to the incumbent (L1), ties
/// broken by insertion order.
fn nearest_indices(state: &BoState, cap: usize) -> Vec<usize> {
    let center = &state.incumbent().point;
    let mut idx: Vec<(f64, usize)> = state
        .observations
        .iter()
        .enumerate()
        .map(|(i, o)| (o.point.iter().zip(center).map(|(a, b)| (a - b).abs()).sum(), i))
        .collect();
    idx.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    idx.truncate(cap.max(1));
    idx.into_iter().map(|(_, i)| i).collect()
}

const LOG_LS_BOUNDS: (f64, f64) = (-3.0, 4.0);
const LOG_SF2_BOUNDS: (f64, f64) = (-3.0, 3.0);
// noise variance floor of 5e-4 on standardised targets
const LOG_SN2_BOUNDS: (f64, f64) = (-7.6, -1.0);

/// Exact GP regression on standardised targets with a zero prior mean.
#[derive(Debug, Clone)]
pub struct Gp {
    x: DMatrix<f64>,
    lengthscales: Vec<f64>,
    signal_var: f64,
    noise_var: f64,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    alpha: DVector<f64>,
    y_mean: f64,
    y_std: f64,
}

impl Gp {
    /// Fits hyperparameters by Adam ascent on the log marginal likelihood.
    pub fn fit(x: &DMatrix<f64>, y: &[f64], cfg: &GpConfig) -> Gp {
        let m = y.len() as f64;
        let y_mean = y.iter().sum::<f64>() / m;
        let var = y.iter().map(|v| (v - y_mean).powi(2)).sum::<f64>() / m;
        let y_std = if var > 0.0 { var.sqrt() } else { 1.0 };
        let ys = DVector::from_iterator(y.len(), y.iter().map(|v| (v - y_mean) / y_std));

        let d = x.ncols();
        let mut theta = vec![(0.5 * (d as f64).sqrt()).ln().clamp(LOG_LS_BOUNDS.0, LOG_LS_BOUNDS.1); d];
        theta.push(0.0);
        theta.push(cfg.fixed_noise.map_or(-6.0, f64::ln));
        let fit_noise = cfg.fixed_noise.is_none();

        let mut best = (f64::NEG_INFINITY, theta.clone());
        let (mut m1, mut m2) = (vec![0.0; theta.len()], vec![0.0; theta.len()]);
        let (b1, b2) = (0.9f64, 0.999f64);
        for t in 1..=cfg.adam_iters {
            let Some((lml, grad)) = lml_and_grad(x, &ys, &theta) else {
                break;
            };
            if lml > best.0 {
                best = (lml, theta.clone());
            }
            for k in 0..theta.len() {
                if k == d + 1 && !fit_noise {
                    continue;
                }
                m1[k] = b1 * m1[k] + (1.0 - b1) * grad[k];
                m2[k] = b2 * m2[k] + (1.0 - b2) * grad[k] * grad[k];
                let mh = m1[k] / (1.0 - b1.powi(t as i32));
                let vh = m2[k] / (1.0 - b2.powi(t as i32));
                theta[k] += cfg.learning_rate * mh / (vh.sqrt() + 1e-8);
            }
            clamp_theta(&mut theta, d, fit_noise);
        }
        if let Some((lml, _)) = lml_and_grad(x, &ys, &theta) {
            if lml > best.0 {
                best = (lml, theta.clone());
            }
        }
        Gp::with_params(x, ys, y_mean, y_std, &best.1)
    }

    fn with_params(x: &DMatrix<f64>, ys: DVector<f64>, y_mean: f64, y_std: f64, theta: &[f64]) -> Gp {
        let d = x.ncols();
        let lengthscales: Vec<f64> = theta[..d].iter().map(|v| v.exp()).collect();
        let signal_var = theta[d].exp();
        let mut noise_var = theta[d + 1].exp();
        let kf = kernel(x, x, &lengthscales, signal_var);
        let chol = loop {
            let mut k = kf.clone();
            for i in 0..k.nrows() {
                k[(i, i)] += noise_var;
            }
            if let Some(c) = k.cholesky() {
                break c;
            }
            noise_var = (noise_var * 10.0).max(1e-10);
        };
        let alpha = chol.solve(&ys);
        Gp {
            x: x.clone(),
            lengthscales,
            signal_var,
            noise_var,
            chol,
            alpha,
            y_mean,
            y_std,
        }
    }

    pub fn lengthscales(&self) -> &[f64] {
        &self.lengthscales
    }

    pub fn noise_var(&self) -> f64 {
        self.noise_var
    }

    /// Posterior mean in standardised units.
    pub fn predict_mean(&self, xs: &DMatrix<f64>) -> DVector<f64> {
        kernel(xs, &self.x, &self.lengthscales, self.signal_var) * &self.alpha
    }

    /// Posterior mean in the original units.
    pub fn predict(&self, xs: &DMatrix<f64>) -> Vec<f64> {
        self.predict_mean(xs)
            .iter()
            .map(|v| v * self.y_std + self.y_mean)
            .collect()
    }

    /// Joint posterior mean and covariance, standardised.
    pub fn posterior(&self, xs: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let ks = kernel(xs, &self.x, &self.lengthscales, self.signal_var);
        let mean = &ks * &self.alpha;
        let v = self
            .chol
            .l()
            .solve_lower_triangular(&ks.transpose())
            .expect("cholesky factor is invertible");
        let cov = kernel(xs, xs, &self.lengthscales, self.signal_var) - v.transpose() * v;
        (mean, cov)
    }

    /// One joint draw from the posterior at `xs`.
    pub fn sample_joint(&self, xs: &DMatrix<f64>, r: &mut ChaCha8Rng) -> Vec<f64> {
        let (mean, cov) = self.posterior(xs);
        let n = xs.nrows();
        let z = DVector::from_iterator(n, (0..n).map(|_| r.sample::<f64, _>(StandardNormal)));
        let scale = cov.diagonal().amax().max(1e-12);
        for jitter in [1e-10, 1e-8, 1e-6, 1e-4, 1e-2] {
            let mut c = cov.clone();
            for i in 0..n {
                c[(i, i)] += jitter * scale;
            }
            if let Some(ch) = c.cholesky() {
                return (mean + ch.l() * z).iter().copied().collect();
            }
        }
        log::debug!("posterior covariance not factorable; sampling marginals");
        (0..n)
            .map(|i| mean[i] + cov[(i, i)].max(0.0).sqrt() * z[i])
            .collect()
    }
}

fn clamp_theta(theta: &mut [f64], d: usize, fit_noise: bool) {
    for v in &mut theta[..d] {
        *v = v.clamp(LOG_LS_BOUNDS.0, LOG_LS_BOUNDS.1);
    }
    theta[d] = theta[d].clamp(LOG_SF2_BOUNDS.0, LOG_SF2_BOUNDS.1);
    if fit_noise {
        theta[d + 1] = theta[d + 1].clamp(LOG_SN2_BOUNDS.0, LOG_SN2_BOUNDS.1);
    }
}

/// `σ² exp(-½ Σ_d (a_d - b_d)² / ℓ_d²)` for every row pair.
fn kernel(a: &DMatrix<f64>, b: &DMatrix<f64>, ls: &[f64], signal_var: f64) -> DMatrix<f64> {
    let scale = |m: &DMatrix<f64>| DMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)] / ls[j]);
    let (sa, sb) = (scale(a), scale(b));
    let na: Vec<f64> = sa.row_iter().map(|r| r.norm_squared()).collect();
    let nb: Vec<f64> = sb.row_iter().map(|r| r.norm_squared()).collect();
    let mut k = &sa * sb.transpose();
    for i in 0..k.nrows() {
        for j in 0..k.ncols() {
            let sq = (na[i] + nb[j] - 2.0 * k[(i, j)]).max(0.0);
            k[(i, j)] = signal_var * (-0.5 * sq).exp();
        }
    }
    k
}

/// Log marginal likelihood and its gradient in log-parameter space
/// (`log ℓ_1..d`, `log σ_f²`, `log σ_n²`).
fn lml_and_grad(x: &DMatrix<f64>, y: &DVector<f64>, theta: &[f64]) -> Option<(f64, Vec<f64>)> {
    let (m, d) = (x.nrows(), x.ncols());
    let ls: Vec<f64> = theta[..d].iter().map(|v| v.exp()).collect();
    let sf2 = theta[d].exp();
    let sn2 = theta[d + 1].exp();
    let kf = kernel(x, x, &ls, sf2);
    let mut k = kf.clone();
    for i in 0..m {
        k[(i, i)] += sn2;
    }
    let chol = k.cholesky()?;
    let alpha = chol.solve(y);
    let log_det: f64 = chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>() * 2.0;
    let lml = -0.5 * y.dot(&alpha) - 0.5 * log_det - 0.5 * m as f64 * (2.0 * std::f64::consts::PI).ln();

    let w = &alpha * alpha.transpose() - chol.inverse();
    let mw = w.component_mul(&kf);
    let row_sums: Vec<f64> = mw.row_iter().map(|r| r.sum()).collect();
    let mx = &mw * x;
    let mut grad = Vec::with_capacity(d + 2);
    for j in 0..d {
        let mut acc = 0.0;
        for i in 0..m {
            let xij = x[(i, j)];
            acc += row_sums[i] * xij * xij - xij * mx[(i, j)];
        }
        grad.push(acc / (ls[j] * ls[j]));
    }
    grad.push(0.5 * mw.sum());
    grad.push(0.5 * sn2 * w.trace());
    Some((lml, grad))
}
