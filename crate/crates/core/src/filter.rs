//! Closed-form filtering for a single series.
//!
//! The recursion alternates two steps. `update` conditions the predictive law
//! `Gamma(α_{t|t-1}, β_{t|t-1})` on the count `Y_t` to give the posterior
//! `Gamma(α_t, β_t)`; `predict` thins the posterior with a schedule pair
//! `(q*, q**)` to give the predictive law of the next period. Missing counts
//! leave the law unchanged and contribute nothing to the likelihood.

use crate::dist::{nb_log_pmf, GammaLaw, NbLaw};
use crate::error::{Error, Result};
use crate::regimes::{QPair, RegimeSpec, ScheduleContext};

/// One period of a series: the count, if observed, and its intensity `λ_t`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub count: Option<u64>,
    pub intensity: f64,
}

impl Observation {
    pub fn new(count: Option<u64>, intensity: f64) -> Result<Self> {
        if !(intensity > 0.0 && intensity.is_finite()) {
            return Err(Error::domain(format!("intensity must be positive, got {intensity}")));
        }
        Ok(Self { count, intensity })
    }

    pub fn observed(count: u64, intensity: f64) -> Result<Self> {
        Self::new(Some(count), intensity)
    }

    pub fn missing(intensity: f64) -> Result<Self> {
        Self::new(None, intensity)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterState {
    /// Period the predictive law refers to (1-based).
    pub t: usize,
    /// Posterior of the latest update; `None` before the first one.
    pub post: Option<GammaLaw>,
    pub pred: GammaLaw,
}

impl FilterState {
    /// Prior state `Gamma(beta0, beta0)` for period 1, so that `E[Θ_1] = 1`.
    pub fn init(beta0: f64) -> Result<Self> {
        if !(beta0 > 0.0 && beta0.is_finite()) {
            return Err(Error::domain(format!("beta0 must be positive, got {beta0}")));
        }
        Ok(Self {
            t: 1,
            post: None,
            pred: GammaLaw::new(beta0, beta0)?,
        })
    }

    pub fn update(&self, obs: &Observation) -> Result<Self> {
        let post = match obs.count {
            Some(y) => GammaLaw::new(self.pred.shape() + y as f64, self.pred.rate() + obs.intensity)?,
            None => self.pred,
        };
        Ok(Self {
            post: Some(post),
            ..*self
        })
    }

    /// Predictive law for period `t + 1` from the current posterior.
    pub fn predict(&self, pair: QPair) -> Result<Self> {
        let post = self
            .post
            .ok_or_else(|| Error::domain("predict called before the first update"))?;
        let pair = QPair::new(pair.qstar, pair.q2)?;
        let shape = pair.qstar * post.shape() + (pair.q2 - pair.qstar) * post.rate();
        let rate = pair.q2 * post.rate();
        Ok(Self {
            t: self.t + 1,
            post: Some(post),
            pred: GammaLaw::new(shape, rate)?,
        })
    }

    pub fn predictive_law(&self, intensity: f64) -> Result<NbLaw> {
        NbLaw::from_mixture(self.pred.shape(), self.pred.rate(), intensity)
    }

    pub fn predictive_mean(&self, intensity: f64) -> f64 {
        intensity * self.pred.shape() / self.pred.rate()
    }

    /// Schedule context after the latest update.
    pub fn context(&self) -> Option<ScheduleContext> {
        self.post.map(|post| ScheduleContext { beta: post.rate() })
    }
}

/// Free-function form of [`FilterState::init`].
pub fn init_state(beta0: f64) -> Result<FilterState> {
    FilterState::init(beta0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceStep {
    pub pred: GammaLaw,
    pub post: GammaLaw,
    pub predictive: NbLaw,
    /// Log predictive mass of the count; `None` for a missing period.
    pub contribution: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterTrace {
    pub steps: Vec<TraceStep>,
    pub loglik: f64,
    /// State after the last update, ready for a forecast.
    pub last: FilterState,
}

impl FilterTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }
}

/// Filters `series` with the schedule of `regime`.
pub fn run_filter(series: &[Observation], regime: &RegimeSpec) -> Result<FilterTrace> {
    regime.validate()?;
    run_filter_with(series, regime.beta0, |_, ctx| regime.q_pair(ctx))
}

/// Filters `series` with an arbitrary schedule.
///
/// `schedule(t, ctx)` gives the pair for the predict step that follows the
/// update of period `t` (1-based); `ctx` carries that update's posterior rate.
pub fn run_filter_with<F>(series: &[Observation], beta0: f64, mut schedule: F) -> Result<FilterTrace>
where
    F: FnMut(usize, ScheduleContext) -> Result<QPair>,
{
    if series.is_empty() {
        return Err(Error::domain("cannot filter an empty series"));
    }
    let mut state = FilterState::init(beta0)?;
    let mut steps = Vec::with_capacity(series.len());
    let mut loglik = 0.0;
    for (i, obs) in series.iter().enumerate() {
        if i > 0 {
            let ctx = state.context().expect("updated on the previous period");
            state = state.predict(schedule(i, ctx)?)?;
        }
        let predictive = state.predictive_law(obs.intensity)?;
        let contribution = obs.count.map(|y| nb_log_pmf(y, &predictive));
        if let Some(c) = contribution {
            loglik += c;
        }
        state = state.update(obs)?;
        steps.push(TraceStep {
            pred: state.pred,
            post: state.post.expect("just updated"),
            predictive,
            contribution,
        });
    }
    Ok(FilterTrace {
        steps,
        loglik,
        last: state,
    })
}

/// The log-likelihood of [`run_filter_with`] without recording a trace.
pub fn filter_loglik<F>(series: &[Observation], beta0: f64, mut schedule: F) -> Result<f64>
where
    F: FnMut(usize, ScheduleContext) -> Result<QPair>,
{
    if series.is_empty() {
        return Err(Error::domain("cannot filter an empty series"));
    }
    let mut state = FilterState::init(beta0)?;
    let mut loglik = 0.0;
    for (i, obs) in series.iter().enumerate() {
        if i > 0 {
            let ctx = state.context().expect("updated on the previous period");
            state = state.predict(schedule(i, ctx)?)?;
        }
        if let Some(y) = obs.count {
            loglik += nb_log_pmf(y, &state.predictive_law(obs.intensity)?);
        }
        state = state.update(obs)?;
    }
    Ok(loglik)
}

/// Predictive mean of the period after `series` given intensity `next_intensity`.
pub fn forecast_mean(series: &[Observation], regime: &RegimeSpec, next_intensity: f64) -> Result<f64> {
    let trace = run_filter(series, regime)?;
    let ctx = trace.last.context().expect("filtered at least one period");
    let next = trace.last.predict(regime.q_pair(ctx)?)?;
    Ok(next.predictive_mean(next_intensity))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn state(shape: f64, rate: f64) -> FilterState {
        FilterState {
            t: 1,
            post: None,
            pred: GammaLaw::new(shape, rate).unwrap(),
        }
    }

    fn posterior(shape: f64, rate: f64) -> FilterState {
        FilterState {
            t: 1,
            post: Some(GammaLaw::new(shape, rate).unwrap()),
            pred: GammaLaw::new(1.0, 1.0).unwrap(),
        }
    }

    #[test]
    fn init_examples() {
        let s = init_state(3.0).unwrap();
        assert_eq!((s.t, s.pred.shape(), s.pred.rate()), (1, 3.0, 3.0));
        assert_eq!(s.pred.mean(), 1.0);
        let s = init_state(0.651).unwrap();
        assert_eq!((s.pred.shape(), s.pred.rate()), (0.651, 0.651));
        assert_eq!(init_state(1.0).unwrap().pred.variance(), 1.0);
        assert!(init_state(0.0).is_err());
        assert!(init_state(-2.0).is_err());
    }

    #[test]
    fn update_examples() {
        let s = state(3.0, 3.0).update(&Observation::observed(2, 1.0).unwrap()).unwrap();
        let post = s.post.unwrap();
        assert_eq!((post.shape(), post.rate()), (5.0, 4.0));

        let s = state(3.0, 3.0).update(&Observation::missing(1.0).unwrap()).unwrap();
        assert_eq!(s.post.unwrap(), s.pred);

        let s = state(0.786, 0.786).update(&Observation::observed(0, 0.5).unwrap()).unwrap();
        let post = s.post.unwrap();
        assert_eq!(post.shape(), 0.786);
        assert_relative_eq!(post.rate(), 1.286, epsilon = 1e-15);
    }

    #[test]
    fn predict_examples() {
        let s = posterior(5.0, 4.0);
        let p = s.predict(QPair::new(0.8, 0.8).unwrap()).unwrap();
        assert_relative_eq!(p.pred.shape(), 4.0, epsilon = 1e-15);
        assert_relative_eq!(p.pred.rate(), 3.2, epsilon = 1e-15);
        assert_relative_eq!(p.pred.mean(), 1.25, epsilon = 1e-15);
        assert_eq!(p.t, 2);

        let p = s.predict(QPair::new(1.0, 1.0).unwrap()).unwrap();
        assert_eq!((p.pred.shape(), p.pred.rate()), (5.0, 4.0));

        let p = s.predict(QPair::new(0.8, 1.0).unwrap()).unwrap();
        assert_relative_eq!(p.pred.shape(), 4.8, epsilon = 1e-15);
        assert_eq!(p.pred.rate(), 4.0);

        assert!(state(1.0, 1.0).predict(QPair { qstar: 1.0, q2: 1.0 }).is_err());
        assert!(s.predict(QPair { qstar: 0.9, q2: 0.5 }).is_err());
        assert!(s.predict(QPair { qstar: 0.0, q2: 0.0 }).is_err());
    }

    #[test]
    fn predictive_law_examples() {
        let law = state(3.0, 3.0).predictive_law(1.0).unwrap();
        assert_eq!((law.mean(), law.size()), (1.0, 3.0));
        let law = state(4.0, 3.2).predictive_law(2.0).unwrap();
        assert_relative_eq!(law.mean(), 2.5, epsilon = 1e-15);
        assert_eq!(law.size(), 4.0);
        let law = state(4.8, 4.0).predictive_law(1.0).unwrap();
        assert_relative_eq!(law.mean(), 1.2, epsilon = 1e-15);
        assert_eq!(law.size(), 4.8);
    }

    #[test]
    fn predictive_mean_examples() {
        assert_relative_eq!(state(3.0, 3.0).predictive_mean(1.7), 1.7);
        assert_relative_eq!(state(5.0, 4.0).predictive_mean(1.0), 1.25);
        let s = state(2.3, 1.9);
        assert_relative_eq!(s.predictive_mean(3.0 * 0.4), 3.0 * s.predictive_mean(0.4), epsilon = 1e-15);
    }

    #[test]
    fn run_filter_examples() {
        let shared = RegimeSpec::shared(3.0).unwrap();
        let series = [
            Observation::observed(2, 1.0).unwrap(),
            Observation::observed(0, 1.0).unwrap(),
        ];
        let trace = run_filter(&series, &shared).unwrap();
        let expected = nb_log_pmf(2, &NbLaw::new(1.0, 3.0).unwrap())
            + nb_log_pmf(0, &NbLaw::new(1.25, 5.0).unwrap());
        assert_relative_eq!(trace.loglik, expected, epsilon = 1e-14);
        assert_eq!(trace.len(), 2);

        let one = [Observation::observed(0, 1.0).unwrap()];
        assert_relative_eq!(run_filter(&one, &shared).unwrap().loglik, 0.421875f64.ln(), epsilon = 1e-14);

        let missing = vec![Observation::missing(1.0).unwrap(); 5];
        let hf = RegimeSpec::increasing(3.0, 0.8).unwrap();
        let trace = run_filter(&missing, &hf).unwrap();
        assert_eq!(trace.loglik, 0.0);
        assert!(trace.steps.iter().all(|s| s.post == s.pred && s.contribution.is_none()));

        assert!(run_filter(&[], &shared).is_err());
    }

    #[test]
    fn trace_loglik_sums_contributions() {
        let spec = RegimeSpec::constant_variance(1.5, 0.8).unwrap();
        let series: Vec<_> = [Some(0), None, Some(3), Some(1), None, Some(0)]
            .iter()
            .zip([0.5, 1.0, 0.8, 1.2, 0.3, 0.9])
            .map(|(&c, l)| Observation::new(c, l).unwrap())
            .collect();
        let trace = run_filter(&series, &spec).unwrap();
        let total: f64 = trace.steps.iter().filter_map(|s| s.contribution).sum();
        assert_eq!(trace.loglik, total);
        assert_eq!(trace.steps.len(), series.len());
    }

    #[test]
    fn independent_regime_resets_every_period() {
        let spec = RegimeSpec::independent(0.7).unwrap();
        let series: Vec<_> = [4u64, 0, 2, 7]
            .iter()
            .zip([1.0, 0.4, 2.0, 1.5])
            .map(|(&y, l)| Observation::observed(y, l).unwrap())
            .collect();
        let trace = run_filter(&series, &spec).unwrap();
        let mut expected = 0.0;
        for (step, obs) in trace.steps.iter().zip(&series) {
            assert_relative_eq!(step.pred.shape(), 0.7, epsilon = 1e-14);
            assert_relative_eq!(step.pred.rate(), 0.7, epsilon = 1e-14);
            expected += nb_log_pmf(obs.count.unwrap(), &NbLaw::new(obs.intensity, 0.7).unwrap());
        }
        assert_relative_eq!(trace.loglik, expected, epsilon = 1e-12);
    }

    #[test]
    fn ewma_weights_match_finite_differences() {
        // With constant q*, Y_{t-k} enters the next predictive shape with weight q*^(k+1),
        // and the predictive rate does not depend on the counts.
        for spec in [
            RegimeSpec::converging(2.0, 0.6, 0.85).unwrap(),
            RegimeSpec::decreasing(2.0, 0.7).unwrap(),
            RegimeSpec::increasing(2.0, 0.8).unwrap(),
        ] {
            let counts = [1u64, 0, 3, 2, 0];
            let lambdas = [0.9, 1.1, 0.7, 1.4, 1.0];
            let next_lambda = 1.3;
            let build = |counts: &[u64]| -> Vec<Observation> {
                counts
                    .iter()
                    .zip(lambdas)
                    .map(|(&y, l)| Observation::observed(y, l).unwrap())
                    .collect()
            };
            let base = forecast_mean(&build(&counts), &spec, next_lambda).unwrap();
            let trace = run_filter(&build(&counts), &spec).unwrap();
            let next_rate = spec.q_pair(trace.last.context().unwrap()).unwrap().q2
                * trace.last.post.unwrap().rate();
            let qstar = spec.q_pair(ScheduleContext { beta: 1.0 }).unwrap().qstar;
            for k in 0..counts.len() {
                let mut bumped = counts;
                bumped[counts.len() - 1 - k] += 1;
                let diff = forecast_mean(&build(&bumped), &spec, next_lambda).unwrap() - base;
                let symbolic = next_lambda * qstar.powi(k as i32 + 1) / next_rate;
                assert_relative_eq!(diff, symbolic, epsilon = 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn predict_preserves_mean_formula(
            shape in 0.05f64..50.0, rate in 0.05f64..50.0, q2 in 0.01f64..=1.0, frac in 0.0f64..=1.0,
        ) {
            let qstar = frac * q2;
            let s = posterior(shape, rate).predict(QPair::new(qstar, q2).unwrap()).unwrap();
            let expected = qstar / q2 * (shape / rate) + (q2 - qstar) / q2;
            prop_assert!((s.pred.mean() - expected).abs() <= 1e-12 * expected.max(1.0));
        }

        #[test]
        fn martingale_when_qstar_equals_q2(shape in 0.05f64..50.0, rate in 0.05f64..50.0, q in 0.01f64..=1.0) {
            let s = posterior(shape, rate).predict(QPair::new(q, q).unwrap()).unwrap();
            let before = shape / rate;
            prop_assert!((s.pred.mean() - before).abs() <= 1e-12 * before.max(1.0));
        }

        #[test]
        fn loglik_without_trace_is_identical(
            counts in proptest::collection::vec(proptest::option::weighted(0.85, 0u64..40), 1..15),
            lambda in 0.05f64..4.0, beta0 in 0.1f64..10.0, p in 0.05f64..=1.0,
        ) {
            let series: Vec<_> = counts.iter().map(|&c| Observation::new(c, lambda).unwrap()).collect();
            let spec = RegimeSpec::constant_variance(beta0, p).unwrap();
            let traced = run_filter(&series, &spec).unwrap().loglik;
            let bare = filter_loglik(&series, beta0, |_, ctx| spec.q_pair(ctx)).unwrap();
            prop_assert_eq!(traced, bare);
        }
    }
}
