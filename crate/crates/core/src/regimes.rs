//! Thinning schedules `(q*, q**)` for each variance regime.
//!
//! A regime decides how the filtering law of the latent factor is widened
//! before the next observation arrives: the predictive shape is
//! `q* α + (q** − q*) β` and the predictive rate `q** β`. Every schedule emitted
//! here satisfies `0 ≤ q* ≤ q** ≤ 1` and `q** > 0`.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum RegimeKind {
    Independent,
    Shared,
    Increasing,
    Decreasing,
    Converging,
    Bounded,
    ConstantVariance,
}

impl RegimeKind {
    pub const ALL: [RegimeKind; 7] = [
        RegimeKind::Independent,
        RegimeKind::Shared,
        RegimeKind::Increasing,
        RegimeKind::Decreasing,
        RegimeKind::Converging,
        RegimeKind::Bounded,
        RegimeKind::ConstantVariance,
    ];

    pub fn name(self) -> &'static str {
        match self {
            RegimeKind::Independent => "independent",
            RegimeKind::Shared => "shared",
            RegimeKind::Increasing => "increasing",
            RegimeKind::Decreasing => "decreasing",
            RegimeKind::Converging => "converging",
            RegimeKind::Bounded => "bounded",
            RegimeKind::ConstantVariance => "constant_variance",
        }
    }

    /// Whether the regime has a free `p` parameter.
    pub fn uses_p(self) -> bool {
        matches!(
            self,
            RegimeKind::Decreasing
                | RegimeKind::Converging
                | RegimeKind::Bounded
                | RegimeKind::ConstantVariance
        )
    }

    /// Whether the regime has a free `q` parameter.
    pub fn uses_q(self) -> bool {
        matches!(
            self,
            RegimeKind::Increasing | RegimeKind::Converging | RegimeKind::Bounded
        )
    }

    /// Number of dynamics parameters, counting `beta0`.
    pub fn n_dynamics_params(self) -> usize {
        1 + usize::from(self.uses_p()) + usize::from(self.uses_q())
    }
}

impl fmt::Display for RegimeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RegimeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RegimeKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| {
                let names: Vec<_> = RegimeKind::ALL.iter().map(|k| k.name()).collect();
                Error::Config(format!("unknown regime `{s}`; expected one of {}", names.join(" | ")))
            })
    }
}

/// A regime together with its parameters.
///
/// `p` and `q` are stored for every kind; kinds that fix them carry the fixed
/// value (`p = 1`, `q = 1` for the shared effect, for instance).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegimeSpec {
    pub kind: RegimeKind,
    pub p: f64,
    pub q: f64,
    pub beta0: f64,
}

/// State a schedule may depend on: the posterior rate `β_t` of the series.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScheduleContext {
    pub beta: f64,
}

/// One step of the schedule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QPair {
    pub qstar: f64,
    pub q2: f64,
}

impl QPair {
    pub fn new(qstar: f64, q2: f64) -> Result<Self> {
        if !(q2 > 0.0 && q2 <= 1.0) {
            return Err(Error::domain(format!("q** must satisfy 0 < q** <= 1, got {q2}")));
        }
        if !(qstar >= 0.0 && qstar <= q2) {
            return Err(Error::domain(format!(
                "q* must satisfy 0 <= q* <= q** = {q2}, got {qstar}"
            )));
        }
        Ok(Self { qstar, q2 })
    }
}

impl RegimeSpec {
    pub fn new(kind: RegimeKind, beta0: f64, p: f64, q: f64) -> Result<Self> {
        let spec = Self { kind, p, q, beta0 };
        spec.validate()?;
        Ok(spec)
    }

    pub fn independent(beta0: f64) -> Result<Self> {
        Self::new(RegimeKind::Independent, beta0, 0.0, 1.0)
    }

    pub fn shared(beta0: f64) -> Result<Self> {
        Self::new(RegimeKind::Shared, beta0, 1.0, 1.0)
    }

    /// Harvey–Fernandes schedule `q* = q** = q`.
    pub fn increasing(beta0: f64, q: f64) -> Result<Self> {
        Self::new(RegimeKind::Increasing, beta0, 1.0, q)
    }

    pub fn decreasing(beta0: f64, p: f64) -> Result<Self> {
        Self::new(RegimeKind::Decreasing, beta0, p, 1.0)
    }

    pub fn converging(beta0: f64, p: f64, q: f64) -> Result<Self> {
        Self::new(RegimeKind::Converging, beta0, p, q)
    }

    pub fn bounded(beta0: f64, p: f64, q: f64) -> Result<Self> {
        Self::new(RegimeKind::Bounded, beta0, p, q)
    }

    pub fn constant_variance(beta0: f64, p: f64) -> Result<Self> {
        Self::new(RegimeKind::ConstantVariance, beta0, p, 1.0)
    }

    /// Builds `kind` from whichever of `p`, `q` it uses, filling fixed values.
    pub fn from_free(kind: RegimeKind, beta0: f64, p: Option<f64>, q: Option<f64>) -> Result<Self> {
        let need = |name: &str, v: Option<f64>| {
            v.ok_or_else(|| Error::Config(format!("regime `{kind}` requires parameter {name}")))
        };
        match kind {
            RegimeKind::Independent => Self::independent(beta0),
            RegimeKind::Shared => Self::shared(beta0),
            RegimeKind::Increasing => Self::increasing(beta0, need("q", q)?),
            RegimeKind::Decreasing => Self::decreasing(beta0, need("p", p)?),
            RegimeKind::Converging => Self::converging(beta0, need("p", p)?, need("q", q)?),
            RegimeKind::Bounded => Self::bounded(beta0, need("p", p)?, need("q", q)?),
            RegimeKind::ConstantVariance => Self::constant_variance(beta0, need("p", p)?),
        }
    }

    /// Checks the admissible set of each kind.
    ///
    /// Boundaries that reduce a regime to a nested one are admitted
    /// (`q = 1` for the increasing regime, `p = 1` for the decreasing one),
    /// matching the closed estimation boxes `p ∈ [0, 1]`, `q ∈ (0, 1]`.
    pub fn validate(&self) -> Result<()> {
        if !(self.beta0 > 0.0 && self.beta0.is_finite()) {
            return Err(Error::domain(format!("beta0 must be positive, got {}", self.beta0)));
        }
        let unit_p = |p: f64| (0.0..=1.0).contains(&p);
        let unit_q = |q: f64| q > 0.0 && q <= 1.0;
        let ok = match self.kind {
            RegimeKind::Independent => self.p == 0.0 && self.q == 1.0,
            RegimeKind::Shared => self.p == 1.0 && self.q == 1.0,
            RegimeKind::Increasing => self.p == 1.0 && unit_q(self.q),
            RegimeKind::Decreasing => unit_p(self.p) && self.q == 1.0,
            RegimeKind::Converging | RegimeKind::Bounded => unit_p(self.p) && unit_q(self.q),
            RegimeKind::ConstantVariance => unit_p(self.p) && self.p > 0.0 && self.q == 1.0,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::domain(format!(
                "inadmissible parameters for regime `{}`: p = {}, q = {} (need 0 <= p <= 1, 0 < q <= 1)",
                self.kind, self.p, self.q
            )))
        }
    }

    /// The pair used by the predict step that follows a posterior with rate `ctx.beta`.
    pub fn q_pair(&self, ctx: ScheduleContext) -> Result<QPair> {
        if !(ctx.beta > 0.0) {
            return Err(Error::domain(format!("schedule context needs beta > 0, got {}", ctx.beta)));
        }
        let (qstar, q2) = match self.kind {
            // Predictive law Gamma(β0, β0) whatever the posterior: q* = 0 and q** β_t = β0.
            RegimeKind::Independent => (0.0, (self.beta0 / ctx.beta).min(1.0)),
            RegimeKind::Shared => (1.0, 1.0),
            RegimeKind::Increasing => (self.q, self.q),
            RegimeKind::Decreasing => (self.p, 1.0),
            RegimeKind::Converging | RegimeKind::Bounded => (self.p * self.q, self.q),
            RegimeKind::ConstantVariance => {
                let p2 = self.p * self.p;
                let q2 = (self.beta0 / (p2 * self.beta0 + (1.0 - p2) * ctx.beta)).min(1.0);
                (self.p * q2, q2)
            }
        };
        QPair::new(qstar, q2)
    }
}

impl fmt::Display for RegimeSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(beta0={}", self.kind, self.beta0)?;
        if self.kind.uses_p() {
            write!(f, ", p={}", self.p)?;
        }
        if self.kind.uses_q() {
            write!(f, ", q={}", self.q)?;
        }
        f.write_str(")")
    }
}

/// Residual of the constant-variance condition for one step.
///
/// Zero exactly when the predict step with `(qstar, q2)` after a posterior of
/// rate `beta_t` keeps `Var(Θ)` at its initial value `1/beta0`.
pub fn constant_variance_check(beta0: f64, beta_t: f64, qstar: f64, q2: f64) -> f64 {
    let ratio = qstar / q2;
    (1.0 / q2) / beta_t + ratio * ratio * (1.0 / beta0 - 1.0 / beta_t) - 1.0 / beta0
}

/// Exact unconditional variances `Var(Θ_1), …, Var(Θ_T)` when every count is observed.
///
/// Uses `Var(Θ_t) = 1/β_t + W_t` with `W_t = Var(E[Θ_t | Y_1:t])`, the
/// predict-step identities `E[Var(Θ_{t+1} | Y_1:t)] = 1/(q** β_t)` and
/// `W_{t+1} = (q*/q**)² W_t`, and `β_{t+1} = q** β_t + λ_{t+1}`. The schedule
/// only depends on the deterministic `β_t`, so the recursion is exact.
///
/// `intensities` must hold at least `horizon` values.
pub fn variance_recursion(spec: &RegimeSpec, intensities: &[f64], horizon: usize) -> Result<Vec<f64>> {
    spec.validate()?;
    if horizon == 0 {
        return Ok(Vec::new());
    }
    if intensities.len() < horizon {
        return Err(Error::domain(format!(
            "variance recursion needs {horizon} intensities, got {}",
            intensities.len()
        )));
    }
    let mut out = Vec::with_capacity(horizon);
    let mut var = 1.0 / spec.beta0;
    let mut pred_rate = spec.beta0;
    for (t, &lambda) in intensities.iter().take(horizon).enumerate() {
        out.push(var);
        if t + 1 == horizon {
            break;
        }
        let beta = pred_rate + lambda;
        let pair = spec.q_pair(ScheduleContext { beta })?;
        let between = var - 1.0 / beta;
        let ratio = pair.qstar / pair.q2;
        var = 1.0 / (pair.q2 * beta) + ratio * ratio * between;
        pred_rate = pair.q2 * beta;
    }
    Ok(out)
}

/// Posterior rates `β_1, …, β_T` for a fully observed series.
pub fn posterior_rates(spec: &RegimeSpec, intensities: &[f64]) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(intensities.len());
    let mut pred_rate = spec.beta0;
    for &lambda in intensities {
        let beta = pred_rate + lambda;
        out.push(beta);
        pred_rate = spec.q_pair(ScheduleContext { beta })?.q2 * beta;
    }
    Ok(out)
}
