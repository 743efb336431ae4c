//! Panel likelihood and the second step of two-step estimation.
//!
//! Step one fits the negative-binomial GLM and fixes every intensity. Step
//! two maximises the panel log-likelihood over the dynamics parameters
//! `(β₀, p, q)` of a regime with a multistart Nelder–Mead search in the
//! coordinates `ln β₀`, `logit p`, `logit q`.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::filter::{filter_loglik, run_filter_with, FilterTrace, Observation};
use crate::io::{BicSampleSize, HoldoutCase, Panel};
use crate::metrics::ForecastPair;
use crate::optim::{nelder_mead, Minimum, NelderMeadOptions};
use crate::regimes::{posterior_rates, QPair, RegimeKind, RegimeSpec, ScheduleContext};
use crate::regression::{fit_nb_glm, intensity_from, GlmFit, GlmOptions};

/// How the schedule sees `β_t`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LikOptions {
    /// Drive the schedule with the posterior rates of a fully observed series
    /// whose intensity at each position is the panel mean at that position,
    /// instead of each series' own rates. Only the constant-variance schedule
    /// depends on `β_t`, so only it is affected.
    pub pooled_beta: bool,
}

/// Mean intensity at each position across the series long enough to have it.
fn pooled_intensities(intensities: &[Vec<f64>]) -> Vec<f64> {
    let horizon = intensities.iter().map(Vec::len).max().unwrap_or(0);
    (0..horizon)
        .map(|t| {
            let (sum, n) = intensities
                .iter()
                .filter_map(|l| l.get(t))
                .fold((0.0, 0usize), |(s, n), &v| (s + v, n + 1));
            sum / n as f64
        })
        .collect()
}

struct Schedule {
    regime: RegimeSpec,
    pooled: Option<Vec<f64>>,
}

impl Schedule {
    fn new(regime: &RegimeSpec, intensities: &[Vec<f64>], opts: &LikOptions) -> Result<Self> {
        regime.validate()?;
        let pooled = if opts.pooled_beta {
            Some(posterior_rates(regime, &pooled_intensities(intensities))?)
        } else {
            None
        };
        Ok(Self {
            regime: *regime,
            pooled,
        })
    }

    /// Pair for the predict step after the update at 1-based position `t`.
    fn pair(&self, t: usize, ctx: ScheduleContext) -> Result<QPair> {
        match &self.pooled {
            Some(rates) => self.regime.q_pair(ScheduleContext { beta: rates[t - 1] }),
            None => self.regime.q_pair(ctx),
        }
    }

    fn filter(&self, panel: &Panel, intensities: &[Vec<f64>], i: usize) -> Result<FilterTrace> {
        let obs = panel.observations(i, &intensities[i])?;
        run_filter_with(&obs, self.regime.beta0, |t, ctx| self.pair(t, ctx))
    }
}

fn observations(panel: &Panel, intensities: &[Vec<f64>]) -> Result<Vec<Vec<Observation>>> {
    check_shapes(panel, intensities)?;
    (0..panel.series.len())
        .map(|i| panel.observations(i, &intensities[i]))
        .collect()
}

/// Series are filtered in parallel; the sum runs sequentially in panel order
/// so the value does not depend on the thread count.
fn loglik_of(obs: &[Vec<Observation>], intensities: &[Vec<f64>], regime: &RegimeSpec, opts: &LikOptions) -> Result<f64> {
    let schedule = Schedule::new(regime, intensities, opts)?;
    let parts = obs
        .par_iter()
        .map(|series| filter_loglik(series, regime.beta0, |t, ctx| schedule.pair(t, ctx)))
        .collect::<Result<Vec<f64>>>()?;
    Ok(parts.iter().sum())
}

fn check_shapes(panel: &Panel, intensities: &[Vec<f64>]) -> Result<()> {
    if panel.series.is_empty() {
        return Err(Error::domain("panel has no series"));
    }
    if panel.series.len() != intensities.len() {
        return Err(Error::domain(format!(
            "panel has {} series but {} intensity vectors",
            panel.series.len(),
            intensities.len()
        )));
    }
    Ok(())
}

/// Sum over series of the filter log-likelihoods.
pub fn panel_loglik(panel: &Panel, intensities: &[Vec<f64>], regime: &RegimeSpec, opts: &LikOptions) -> Result<f64> {
    loglik_of(&observations(panel, intensities)?, intensities, regime, opts)
}

/// Which coordinate of the search reached the edge of its box.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Param {
    Beta0,
    P,
    Q,
}

impl Param {
    pub fn name(self) -> &'static str {
        match self {
            Param::Beta0 => "beta0",
            Param::P => "p",
            Param::Q => "q",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundaryFlag {
    pub param: Param,
    /// Value of the transformed coordinate (`ln β₀` or a logit).
    pub transformed: f64,
}

impl std::fmt::Display for BoundaryFlag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let side = if self.transformed > 0.0 { "upper" } else { "lower" };
        write!(f, "{}@{side}", self.param.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitOptions {
    pub beta0_grid: Vec<f64>,
    pub p_grid: Vec<f64>,
    pub q_grid: Vec<f64>,
    pub lik: LikOptions,
    pub optimizer: NelderMeadOptions,
    /// Number of regression coefficients counted in AIC/BIC.
    pub regression_params: usize,
    pub bic_n: BicSampleSize,
    /// A transformed coordinate beyond this magnitude is flagged.
    pub boundary: f64,
    /// Step of the finite-difference optimality check.
    pub fd_step: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            beta0_grid: vec![0.25, 1.0, 4.0],
            p_grid: vec![0.3, 0.7, 0.95],
            q_grid: vec![0.3, 0.7, 0.95],
            lik: LikOptions::default(),
            optimizer: NelderMeadOptions::default(),
            regression_params: 0,
            bic_n: BicSampleSize::Observations,
            boundary: 8.0,
            fd_step: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DynamicsFit {
    pub regime: RegimeSpec,
    pub loglik: f64,
    pub aic: f64,
    pub bic: f64,
    /// Regression plus dynamics parameters.
    pub k: usize,
    /// Sample size entering the BIC penalty.
    pub n_obs: usize,
    pub boundary_flags: Vec<BoundaryFlag>,
    /// Largest one-sided finite-difference slope of the log-likelihood along
    /// a free transformed coordinate; about zero or negative at an interior maximum.
    pub fd_slope: f64,
    pub evaluations: usize,
    pub starts: usize,
}

impl DynamicsFit {
    pub fn at_boundary(&self) -> bool {
        !self.boundary_flags.is_empty()
    }
}

fn logistic(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

fn free_params(kind: RegimeKind) -> Vec<Param> {
    let mut v = vec![Param::Beta0];
    if kind.uses_p() {
        v.push(Param::P);
    }
    if kind.uses_q() {
        v.push(Param::Q);
    }
    v
}

fn decode(kind: RegimeKind, params: &[Param], z: &[f64]) -> Result<RegimeSpec> {
    let mut beta0 = f64::NAN;
    let (mut p, mut q) = (None, None);
    for (param, &v) in params.iter().zip(z) {
        match param {
            Param::Beta0 => beta0 = v.exp(),
            Param::P => p = Some(logistic(v)),
            Param::Q => q = Some(logistic(v)),
        }
    }
    RegimeSpec::from_free(kind, beta0, p, q)
}

/// Deterministic start points in transformed coordinates.
fn start_grid(params: &[Param], opts: &FitOptions) -> Vec<Vec<f64>> {
    let mut starts: Vec<Vec<f64>> = vec![Vec::new()];
    for param in params {
        let values: Vec<f64> = match param {
            Param::Beta0 => opts.beta0_grid.iter().map(|b| b.ln()).collect(),
            Param::P => opts.p_grid.iter().map(|&p| logit(p)).collect(),
            Param::Q => opts.q_grid.iter().map(|&q| logit(q)).collect(),
        };
        starts = starts
            .into_iter()
            .flat_map(|s| {
                values.iter().map(move |&v| {
                    let mut s = s.clone();
                    s.push(v);
                    s
                })
            })
            .collect();
    }
    // Keep at least five starts for the one-dimensional searches.
    if params.len() == 1 && starts.len() < 5 {
        for extra in [0.5f64, 2.0] {
            let z = extra.ln();
            if !starts.iter().any(|s| (s[0] - z).abs() < 1e-12) {
                starts.push(vec![z]);
            }
        }
    }
    starts
}

pub fn aic(loglik: f64, k: usize) -> f64 {
    -2.0 * loglik + 2.0 * k as f64
}

pub fn bic(loglik: f64, k: usize, n: usize) -> f64 {
    -2.0 * loglik + k as f64 * (n as f64).ln()
}

/// Maximises the panel log-likelihood of `kind` with intensities held fixed.
pub fn fit_dynamics(panel: &Panel, intensities: &[Vec<f64>], kind: RegimeKind, opts: &FitOptions) -> Result<DynamicsFit> {
    let obs = observations(panel, intensities)?;
    let params = free_params(kind);
    let objective = |z: &[f64]| -> f64 {
        match decode(kind, &params, z).and_then(|r| loglik_of(&obs, intensities, &r, &opts.lik)) {
            Ok(l) if l.is_finite() => -l,
            _ => f64::INFINITY,
        }
    };

    let starts = start_grid(&params, opts);
    let mut best: Option<Minimum> = None;
    let mut evaluations = 0;
    for start in &starts {
        let run = nelder_mead(objective, start, &opts.optimizer);
        evaluations += run.evals;
        if run.f.is_finite() && best.as_ref().is_none_or(|b| run.f < b.f) {
            best = Some(run);
        }
    }
    let best = best.ok_or_else(|| {
        Error::Estimation(format!(
            "regime `{kind}`: no start out of {} reached a finite log-likelihood",
            starts.len()
        ))
    })?;

    let regime = decode(kind, &params, &best.x)?;
    let loglik = -best.f;
    let boundary_flags: Vec<BoundaryFlag> = params
        .iter()
        .zip(&best.x)
        .filter(|(_, z)| z.abs() > opts.boundary)
        .map(|(&param, &transformed)| BoundaryFlag { param, transformed })
        .collect();

    let mut fd_slope = f64::NEG_INFINITY;
    for j in 0..params.len() {
        for sign in [1.0, -1.0] {
            let mut z = best.x.clone();
            z[j] += sign * opts.fd_step;
            let l = -objective(&z);
            fd_slope = fd_slope.max((l - loglik) / opts.fd_step);
        }
    }
    evaluations += 2 * params.len();

    let k = opts.regression_params + kind.n_dynamics_params();
    let n_obs = match opts.bic_n {
        BicSampleSize::Observations => panel.n_observed(),
        BicSampleSize::Policyholders => panel.series.len(),
    };
    Ok(DynamicsFit {
        regime,
        loglik,
        aic: aic(loglik, k),
        bic: bic(loglik, k, n_obs),
        k,
        n_obs,
        boundary_flags,
        fd_slope,
        evaluations,
        starts: starts.len(),
    })
}

/// Fits every kind and sorts the fits by AIC; ties keep the input order.
pub fn compare_models(
    panel: &Panel,
    intensities: &[Vec<f64>],
    kinds: &[RegimeKind],
    opts: &FitOptions,
) -> Result<Vec<DynamicsFit>> {
    if kinds.is_empty() {
        return Err(Error::Config("no regimes to compare".into()));
    }
    let mut fits = kinds
        .iter()
        .map(|&kind| fit_dynamics(panel, intensities, kind, opts))
        .collect::<Result<Vec<_>>>()?;
    fits.sort_by(|a, b| a.aic.total_cmp(&b.aic));
    Ok(fits)
}

/// Step one: the NB GLM on every observed record and the implied intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOne {
    pub glm: GlmFit,
    pub intensities: Vec<Vec<f64>>,
}

pub fn step_one(panel: &Panel, opts: &GlmOptions) -> Result<StepOne> {
    let rows = panel.design_rows()?;
    let glm = fit_nb_glm(&rows, opts)?;
    let intensities = panel.intensities(&glm.eta)?;
    Ok(StepOne { glm, intensities })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub id: String,
    pub period: i64,
    pub actual: Option<u64>,
    /// Predictive mean of the count.
    pub predicted: f64,
}

/// Predictive means for the holdout records, one per case.
///
/// Each training series is filtered with `regime`, then predicted one step
/// ahead and scaled by the intensity of the holdout record.
pub fn forecast_holdout(
    train: &Panel,
    holdout: &[HoldoutCase],
    eta: &[f64],
    regime: &RegimeSpec,
    opts: &LikOptions,
) -> Result<Vec<Forecast>> {
    let intensities = train.intensities(eta)?;
    check_shapes(train, &intensities)?;
    let schedule = Schedule::new(regime, &intensities, opts)?;
    holdout
        .par_iter()
        .map(|case| {
            let trace = schedule.filter(train, &intensities, case.series)?;
            let t = trace.len();
            let ctx = trace.last.context().expect("filtered at least one period");
            let next = trace.last.predict(schedule.pair(t, ctx)?)?;
            let lambda = intensity_from(eta, &case.record.covariates, case.record.exposure)?;
            Ok(Forecast {
                id: case.id.clone(),
                period: case.record.period,
                actual: case.record.count,
                predicted: next.predictive_mean(lambda),
            })
        })
        .collect()
}

/// Scorable pairs: forecasts whose actual count is known.
pub fn forecast_pairs(forecasts: &[Forecast]) -> Result<Vec<ForecastPair>> {
    forecasts
        .iter()
        .filter_map(|f| f.actual.map(|a| ForecastPair::new(a, f.predicted)))
        .collect()
}

/// Joint maximum likelihood over `η` and the dynamics parameters, started
/// from a two-step fit. Slower and less stable than the two-step route.
pub fn fit_joint(
    panel: &Panel,
    start_eta: &[f64],
    start: &DynamicsFit,
    opts: &FitOptions,
) -> Result<(Vec<f64>, DynamicsFit)> {
    let kind = start.regime.kind;
    let params = free_params(kind);
    let d = start_eta.len();
    let encode = |r: &RegimeSpec| -> Vec<f64> {
        params
            .iter()
            .map(|p| match p {
                Param::Beta0 => r.beta0.ln(),
                Param::P => logit(r.p.min(1.0 - 1e-12)),
                Param::Q => logit(r.q.min(1.0 - 1e-12)),
            })
            .collect()
    };
    let objective = |z: &[f64]| -> f64 {
        let (eta, dynamics) = z.split_at(d);
        let value = decode(kind, &params, dynamics).and_then(|r| {
            let lambdas = panel.intensities(eta)?;
            panel_loglik(panel, &lambdas, &r, &opts.lik)
        });
        match value {
            Ok(l) if l.is_finite() => -l,
            _ => f64::INFINITY,
        }
    };
    let mut x0 = start_eta.to_vec();
    x0.extend(encode(&start.regime));
    let nm = NelderMeadOptions {
        max_evals: opts.optimizer.max_evals.max(400 * x0.len()),
        step: 0.1,
        ..opts.optimizer
    };
    let run = nelder_mead(objective, &x0, &nm);
    if !run.f.is_finite() {
        return Err(Error::Estimation(format!("joint fit of `{kind}` left the admissible region")));
    }
    let (eta, dynamics) = run.x.split_at(d);
    let regime = decode(kind, &params, dynamics)?;
    let loglik = -run.f;
    let fit = DynamicsFit {
        regime,
        loglik,
        aic: aic(loglik, start.k),
        bic: bic(loglik, start.k, start.n_obs),
        k: start.k,
        n_obs: start.n_obs,
        boundary_flags: params
            .iter()
            .zip(dynamics)
            .filter(|(_, z)| z.abs() > opts.boundary)
            .map(|(&param, &transformed)| BoundaryFlag { param, transformed })
            .collect(),
        fd_slope: f64::NAN,
        evaluations: run.evals,
        starts: 1,
    };
    Ok((eta.to_vec(), fit))
}
