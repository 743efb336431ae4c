//! Negative-binomial regression with log link and exposure offset.
//!
//! This is the first step of the two-step estimator: it ignores serial
//! dependence and produces intensities `λ = e · exp(x·η)` for the panel
//! likelihood. The NB size is a nuisance parameter, profiled on its log scale
//! by golden-section search between weighted least-squares sweeps for `η`.

use nalgebra::{DMatrix, DVector};

use crate::dist::{nb_log_pmf, NbLaw};
use crate::error::{Error, Result};

/// Largest `|x·η|` accepted before exponentiating.
pub const MAX_LINEAR_PREDICTOR: f64 = 700.0;

const LOG_SIZE_MIN: f64 = -9.0;
const LOG_SIZE_MAX: f64 = 18.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DesignRow {
    pub x: Vec<f64>,
    pub exposure: f64,
    pub y: u64,
}

impl DesignRow {
    pub fn new(x: Vec<f64>, exposure: f64, y: u64) -> Result<Self> {
        if !(exposure > 0.0 && exposure.is_finite()) {
            return Err(Error::domain(format!("exposure must be positive, got {exposure}")));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::domain("covariates must be finite"));
        }
        Ok(Self { x, exposure, y })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GlmOptions {
    /// Bound on the Euclidean norm of the score for `η`.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for GlmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GlmFit {
    pub eta: Vec<f64>,
    /// NB size `k`; the variance is `μ + μ²/k`.
    pub dispersion: f64,
    pub loglik: f64,
    pub converged: bool,
    pub iterations: usize,
    pub score_norm: f64,
    /// Condition number of the Fisher information at the estimate.
    pub condition_number: f64,
}

/// `e · exp(x·η)`, refusing linear predictors beyond ±700.
pub fn intensity(fit: &GlmFit, row: &DesignRow) -> Result<f64> {
    intensity_from(&fit.eta, &row.x, row.exposure)
}

pub fn intensity_from(eta: &[f64], x: &[f64], exposure: f64) -> Result<f64> {
    if eta.len() != x.len() {
        return Err(Error::domain(format!(
            "coefficient vector has {} entries but the row has {} covariates",
            eta.len(),
            x.len()
        )));
    }
    let lin: f64 = eta.iter().zip(x).map(|(a, b)| a * b).sum();
    if !(lin.abs() <= MAX_LINEAR_PREDICTOR) {
        return Err(Error::domain(format!(
            "linear predictor {lin} exceeds ±{MAX_LINEAR_PREDICTOR}; intensity would overflow"
        )));
    }
    Ok(exposure * lin.exp())
}

struct Design<'a> {
    rows: &'a [DesignRow],
    d: usize,
}

impl Design<'_> {
    fn means(&self, eta: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| {
                let lin: f64 = eta.iter().zip(&r.x).map(|(a, b)| a * b).sum();
                r.exposure * lin.clamp(-MAX_LINEAR_PREDICTOR, MAX_LINEAR_PREDICTOR).exp()
            })
            .collect()
    }

    fn loglik(&self, mu: &[f64], size: f64) -> f64 {
        self.rows
            .iter()
            .zip(mu)
            .map(|(r, &m)| nb_log_pmf(r.y, &NbLaw::new(m.max(1e-300), size).expect("positive")))
            .sum()
    }

    fn score(&self, mu: &[f64], size: f64) -> DVector<f64> {
        let mut s = DVector::zeros(self.d);
        for (r, &m) in self.rows.iter().zip(mu) {
            let w = (r.y as f64 - m) / (1.0 + m / size);
            for (j, xj) in r.x.iter().enumerate() {
                s[j] += w * xj;
            }
        }
        s
    }

    fn information(&self, mu: &[f64], size: f64) -> DMatrix<f64> {
        let mut info = DMatrix::zeros(self.d, self.d);
        for (r, &m) in self.rows.iter().zip(mu) {
            let w = m / (1.0 + m / size);
            for a in 0..self.d {
                let wa = w * r.x[a];
                for b in a..self.d {
                    info[(a, b)] += wa * r.x[b];
                }
            }
        }
        for a in 0..self.d {
            for b in 0..a {
                info[(a, b)] = info[(b, a)];
            }
        }
        info
    }

    /// Columns that are (numerically) linear combinations of earlier ones.
    fn dependent_columns(&self) -> Vec<usize> {
        let n = self.rows.len();
        let mut basis: Vec<Vec<f64>> = Vec::new();
        let mut bad = Vec::new();
        for j in 0..self.d {
            let mut v: Vec<f64> = self.rows.iter().map(|r| r.x[j]).collect();
            let norm0 = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            for b in &basis {
                let proj: f64 = v.iter().zip(b).map(|(a, c)| a * c).sum();
                v.iter_mut().zip(b).for_each(|(a, c)| *a -= proj * c);
            }
            let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm0 == 0.0 || norm <= 1e-10 * norm0 * (n as f64).sqrt().max(1.0) {
                bad.push(j);
            } else {
                basis.push(v.into_iter().map(|a| a / norm).collect());
            }
        }
        bad
    }
}

fn weighted_least_squares(design: &Design<'_>, weights: &[f64], response: &[f64]) -> Result<Vec<f64>> {
    let d = design.d;
    let mut xtwx = DMatrix::zeros(d, d);
    let mut xtwz = DVector::zeros(d);
    for ((r, &w), &z) in design.rows.iter().zip(weights).zip(response) {
        for a in 0..d {
            let wa = w * r.x[a];
            xtwz[a] += wa * z;
            for b in a..d {
                xtwx[(a, b)] += wa * r.x[b];
            }
        }
    }
    for a in 0..d {
        for b in 0..a {
            xtwx[(a, b)] = xtwx[(b, a)];
        }
    }
    let chol = xtwx
        .cholesky()
        .ok_or_else(|| Error::Estimation("weighted normal equations are not positive definite".into()))?;
    Ok(chol.solve(&xtwz).iter().copied().collect())
}

/// Fisher scoring for `η` at a fixed size, with step halving on likelihood decrease.
fn fit_mean(design: &Design<'_>, eta: &mut Vec<f64>, size: f64, opts: &GlmOptions) -> Result<(usize, f64)> {
    let mut mu = design.means(eta);
    let mut ll = design.loglik(&mu, size);
    for iter in 0..opts.max_iter {
        let score_norm = design.score(&mu, size).norm();
        if score_norm <= opts.tol {
            return Ok((iter, score_norm));
        }
        let weights: Vec<f64> = mu.iter().map(|&m| m / (1.0 + m / size)).collect();
        let response: Vec<f64> = design
            .rows
            .iter()
            .zip(&mu)
            .map(|(r, &m)| (m / r.exposure).ln() + (r.y as f64 - m) / m)
            .collect();
        let target = weighted_least_squares(design, &weights, &response)?;
        let mut step = 1.0;
        loop {
            let trial: Vec<f64> = eta.iter().zip(&target).map(|(a, b)| a + step * (b - a)).collect();
            let trial_mu = design.means(&trial);
            let trial_ll = design.loglik(&trial_mu, size);
            if trial_ll >= ll - 1e-12 * ll.abs() || step < 1e-6 {
                *eta = trial;
                mu = trial_mu;
                ll = trial_ll;
                break;
            }
            step *= 0.5;
        }
    }
    Ok((opts.max_iter, design.score(&mu, size).norm()))
}

fn golden_section_max(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64, tol: f64) -> f64 {
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let mut a = hi - ratio * (hi - lo);
    let mut b = lo + ratio * (hi - lo);
    let (mut fa, mut fb) = (f(a), f(b));
    while hi - lo > tol {
        if fa < fb {
            lo = a;
            a = b;
            fa = fb;
            b = lo + ratio * (hi - lo);
            fb = f(b);
        } else {
            hi = b;
            b = a;
            fb = fa;
            a = hi - ratio * (hi - lo);
            fa = f(a);
        }
    }
    0.5 * (lo + hi)
}

/// Maximum-likelihood NB regression over `(η, size)`.
pub fn fit_nb_glm(rows: &[DesignRow], opts: &GlmOptions) -> Result<GlmFit> {
    let d = rows
        .first()
        .map(|r| r.x.len())
        .ok_or_else(|| Error::Estimation("no rows to fit".into()))?;
    if d == 0 {
        return Err(Error::Estimation("design has no columns".into()));
    }
    if let Some((i, _)) = rows.iter().enumerate().find(|(_, r)| r.x.len() != d) {
        return Err(Error::Estimation(format!("row {i} has a different number of covariates")));
    }
    if rows.len() <= d {
        return Err(Error::Estimation(format!(
            "need more rows than coefficients ({} rows, {d} coefficients)",
            rows.len()
        )));
    }
    let design = Design { rows, d };
    let dependent = design.dependent_columns();
    if !dependent.is_empty() {
        return Err(Error::Estimation(format!(
            "rank-deficient design: columns {dependent:?} are linear combinations of the preceding columns"
        )));
    }

    // Start from a least-squares fit of log((y + 0.5)/e).
    let start_w: Vec<f64> = rows.iter().map(|r| r.y as f64 + 0.5).collect();
    let start_z: Vec<f64> = rows.iter().map(|r| ((r.y as f64 + 0.5) / r.exposure).ln()).collect();
    let mut eta = weighted_least_squares(&design, &start_w, &start_z)?;
    let mut log_size = 0.0f64;

    let mut iterations = 0;
    let mut converged = false;
    let mut score_norm = f64::INFINITY;
    for _ in 0..opts.max_iter {
        let (inner, norm) = fit_mean(&design, &mut eta, log_size.exp(), opts)?;
        iterations += inner.max(1);
        score_norm = norm;
        let mu = design.means(&eta);
        let new_log_size = golden_section_max(
            |ls| design.loglik(&mu, ls.exp()),
            LOG_SIZE_MIN,
            LOG_SIZE_MAX,
            1e-9,
        );
        let moved = (new_log_size - log_size).abs();
        log_size = new_log_size;
        if moved < 1e-7 {
            let (inner, norm) = fit_mean(&design, &mut eta, log_size.exp(), opts)?;
            iterations += inner;
            score_norm = norm;
            converged = score_norm <= opts.tol;
            break;
        }
    }

    let size = log_size.exp();
    let mu = design.means(&eta);
    let info = design.information(&mu, size);
    let eig = info.symmetric_eigenvalues();
    let (min, max) = eig
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &e| (lo.min(e), hi.max(e)));
    Ok(GlmFit {
        eta,
        dispersion: size,
        loglik: design.loglik(&mu, size),
        converged,
        iterations,
        score_norm,
        condition_number: if min > 0.0 { max / min } else { f64::INFINITY },
    })
}

/// Score vector of the NB log-likelihood for `η` at `(eta, size)`.
pub fn nb_score(rows: &[DesignRow], eta: &[f64], size: f64) -> Vec<f64> {
    let design = Design { rows, d: eta.len() };
    design.score(&design.means(eta), size).iter().copied().collect()
}
