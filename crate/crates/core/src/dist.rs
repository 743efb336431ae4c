//! Probability primitives used by the filter and the simulator.
//!
//! Densities are evaluated in log space. The shape of the one-step predictive
//! law grows without bound in some regimes, so gamma-function ratios go through
//! [`log_gamma_fn`] except for small counts, where the ratio is a short product.
//!
//! Degenerate laws follow the usual conventions: `Gamma(0, b)` is the constant
//! zero, `Beta(a, 0)` is the constant one and `Beta(0, b)` the constant zero.
//! They are carried by explicit constructors rather than by zero-valued
//! parameters, so a live law always has strictly positive parameters.

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::Distribution;

use crate::error::{Error, Result};

/// Generator used for every random draw in the crate.
pub type SimRng = ChaCha8Rng;

/// Independent stream `stream` of the generator seeded with `seed`.
///
/// ChaCha is counter based, so streams keyed by series or path index never
/// overlap and do not depend on the order in which they are consumed.
pub fn stream_rng(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Gamma law with shape/rate parameterisation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaLaw {
    shape: f64,
    rate: f64,
    degenerate: bool,
}

impl GammaLaw {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        if !(shape > 0.0 && shape.is_finite()) {
            return Err(Error::domain(format!("gamma shape must be positive, got {shape}")));
        }
        if !(rate > 0.0 && rate.is_finite()) {
            return Err(Error::domain(format!("gamma rate must be positive, got {rate}")));
        }
        Ok(Self {
            shape,
            rate,
            degenerate: false,
        })
    }

    /// The constant zero (`Gamma(0, rate)`).
    pub fn zero(rate: f64) -> Self {
        Self {
            shape: 0.0,
            rate,
            degenerate: true,
        }
    }

    /// `Gamma(shape, rate)` for `shape > 0`, the constant zero for `shape == 0`.
    pub fn new_or_zero(shape: f64, rate: f64) -> Result<Self> {
        if shape == 0.0 {
            if !(rate > 0.0) {
                return Err(Error::domain(format!("gamma rate must be positive, got {rate}")));
            }
            Ok(Self::zero(rate))
        } else {
            Self::new(shape, rate)
        }
    }

    pub fn shape(&self) -> f64 {
        self.shape
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    pub fn is_degenerate(&self) -> bool {
        self.degenerate
    }

    pub fn mean(&self) -> f64 {
        if self.degenerate {
            0.0
        } else {
            self.shape / self.rate
        }
    }

    pub fn variance(&self) -> f64 {
        if self.degenerate {
            0.0
        } else {
            self.shape / (self.rate * self.rate)
        }
    }

    pub fn log_pdf(&self, x: f64) -> f64 {
        if self.degenerate || x <= 0.0 {
            return f64::NEG_INFINITY;
        }
        self.shape * self.rate.ln() - ln_gamma_unchecked(self.shape) + (self.shape - 1.0) * x.ln()
            - self.rate * x
    }
}

/// Beta law on the unit interval, including the two point-mass conventions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BetaLaw {
    a: f64,
    b: f64,
}

impl BetaLaw {
    pub fn new(a: f64, b: f64) -> Result<Self> {
        if !(a >= 0.0 && b >= 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::domain(format!("beta parameters must be nonnegative, got ({a}, {b})")));
        }
        if a == 0.0 && b == 0.0 {
            return Err(Error::domain("beta parameters cannot both be zero"));
        }
        Ok(Self { a, b })
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn mean(&self) -> f64 {
        self.a / (self.a + self.b)
    }

    /// The point mass the law collapses to, if any.
    pub fn point_mass(&self) -> Option<f64> {
        if self.b == 0.0 {
            Some(1.0)
        } else if self.a == 0.0 {
            Some(0.0)
        } else {
            None
        }
    }
}

/// Negative binomial law in mean/size form: variance is `mean + mean^2 / size`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NbLaw {
    mean: f64,
    size: f64,
}

impl NbLaw {
    pub fn new(mean: f64, size: f64) -> Result<Self> {
        if !(mean > 0.0 && mean.is_finite()) {
            return Err(Error::domain(format!("NB mean must be positive, got {mean}")));
        }
        if !(size > 0.0 && size.is_finite()) {
            return Err(Error::domain(format!("NB size must be positive, got {size}")));
        }
        Ok(Self { mean, size })
    }

    /// Predictive law of a count with intensity `lambda` whose latent factor is `Gamma(shape, rate)`.
    pub fn from_mixture(shape: f64, rate: f64, lambda: f64) -> Result<Self> {
        Self::new(lambda * shape / rate, shape)
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    pub fn size(&self) -> f64 {
        self.size
    }

    pub fn variance(&self) -> f64 {
        self.mean + self.mean * self.mean / self.size
    }
}

fn ln_gamma_unchecked(x: f64) -> f64 {
    statrs::function::gamma::ln_gamma(x)
}

/// Natural log of the gamma function for `x > 0`.
pub fn log_gamma_fn(x: f64) -> Result<f64> {
    if !(x > 0.0) || !x.is_finite() {
        return Err(Error::domain(format!("log-gamma requires a positive finite argument, got {x}")));
    }
    Ok(ln_gamma_unchecked(x))
}

/// Log mass of `y` under the negative binomial law.
///
/// With `size = a` and `mean = lambda * a / b` this is the Poisson-gamma
/// mixture `Γ(y+a) / (y! Γ(a)) (λ/(λ+b))^y (b/(λ+b))^a`; the ratios are written
/// as `mean/(mean+size)` and `size/(mean+size)`.
pub fn nb_log_pmf(y: u64, law: &NbLaw) -> f64 {
    let (m, k) = (law.mean, law.size);
    let denom = m + k;
    let yf = y as f64;
    let log_binom = if y <= SMALL_COUNT && k < 1e12 {
        // Γ(y+k) / (Γ(k) y!) = Π_{j<y} (k+j)/(j+1)
        (0..y).map(|j| (k + j as f64) / (j as f64 + 1.0)).product::<f64>().ln()
    } else if k >= 1e3 && y <= 10_000 {
        // Avoids the cancellation in ln Γ(y+k) - ln Γ(k) for large k.
        yf * k.ln() + (0..y).map(|j| (j as f64 / k).ln_1p()).sum::<f64>() - ln_gamma_unchecked(yf + 1.0)
    } else {
        ln_gamma_unchecked(yf + k) - ln_gamma_unchecked(yf + 1.0) - ln_gamma_unchecked(k)
    };
    let mut log_p = log_binom - k * (m / k).ln_1p();
    if y > 0 {
        log_p += yf * (m / denom).ln();
    }
    log_p
}

const SMALL_COUNT: u64 = 24;

/// Log mass of `y` under `Pois(mean)`; `mean == 0` is the point mass at zero.
pub fn poisson_log_pmf(y: u64, mean: f64) -> f64 {
    if mean == 0.0 {
        return if y == 0 { 0.0 } else { f64::NEG_INFINITY };
    }
    let yf = y as f64;
    let mut log_p = -mean - ln_gamma_unchecked(yf + 1.0);
    if y > 0 {
        log_p += yf * mean.ln();
    }
    log_p
}

/// Draw from a gamma law; the degenerate law returns 0 and leaves `rng` untouched.
pub fn sample_gamma<R: Rng + ?Sized>(law: &GammaLaw, rng: &mut R) -> f64 {
    if law.degenerate {
        return 0.0;
    }
    rand_distr::Gamma::new(law.shape, 1.0 / law.rate)
        .expect("live gamma law has positive parameters")
        .sample(rng)
}

/// Draw from a beta law; point-mass conventions return exactly 0 or 1.
pub fn sample_beta<R: Rng + ?Sized>(law: &BetaLaw, rng: &mut R) -> f64 {
    if let Some(point) = law.point_mass() {
        return point;
    }
    // Ratio of gammas stays accurate for the small shapes the filter produces.
    let x = rand_distr::Gamma::new(law.a, 1.0).expect("a > 0").sample(rng);
    let y = rand_distr::Gamma::new(law.b, 1.0).expect("b > 0").sample(rng);
    let s = x + y;
    if s > 0.0 {
        x / s
    } else {
        // Both draws underflowed; fall back to the law's mean.
        law.mean()
    }
}

/// Poisson draw with the given mean (0 yields 0).
pub fn sample_poisson<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> Result<u64> {
    if !(mean >= 0.0) || !mean.is_finite() {
        return Err(Error::domain(format!("Poisson mean must be nonnegative, got {mean}")));
    }
    if mean == 0.0 {
        return Ok(0);
    }
    let draw: f64 = rand_distr::Poisson::new(mean)
        .map_err(|e| Error::domain(format!("Poisson mean {mean}: {e}")))?
        .sample(rng);
    Ok(draw as u64)
}

/// Independent check of [`nb_log_pmf`] by numerical integration.
///
/// Integrates `Pois(y; λθ) · Gamma(θ; shape, rate)` over θ. For shapes below
/// one the substitution `θ = u^(1/shape)` removes the integrable singularity
/// at zero.
pub fn nb_pmf_oracle(y: u64, shape: f64, rate: f64, intensity: f64) -> Result<f64> {
    if !(shape > 0.0 && rate > 0.0 && intensity > 0.0) {
        return Err(Error::domain("oracle requires positive shape, rate and intensity"));
    }
    let yf = y as f64;
    let s = shape.min(1.0);
    let u_power = shape / s - 1.0;
    let log_norm = shape * rate.ln() - ln_gamma_unchecked(shape) - ln_gamma_unchecked(yf + 1.0) - s.ln();
    let integrand = |u: f64| -> f64 {
        if u <= 0.0 {
            return if y == 0 && u_power == 0.0 { log_norm.exp() } else { 0.0 };
        }
        let theta = u.powf(1.0 / s);
        let mut log_f = log_norm + u_power * u.ln() - (rate + intensity) * theta;
        if y > 0 {
            log_f += yf * (intensity * theta).ln();
        }
        log_f.exp()
    };
    // Posterior of θ is Gamma(shape + y, rate + λ); integrate far past its bulk.
    let post_shape = shape + yf;
    let theta_max = (post_shape + 40.0 * post_shape.sqrt() + 60.0) / (rate + intensity);
    let u_max = theta_max.powf(s);
    let panels = 64;
    let width = u_max / panels as f64;
    (0..panels).try_fold(0.0, |acc, k| {
        let a = k as f64 * width;
        let part = quadrature::adaptive_gauss_kronrod(&integrand, a, a + width, 1e-14, 40)?;
        Ok(acc + part)
    })
}

mod quadrature {
    use crate::error::{Error, Result};

    const XGK: [f64; 8] = [
        0.991_455_371_120_812_6,
        0.949_107_912_342_758_5,
        0.864_864_423_359_769_1,
        0.741_531_185_599_394_4,
        0.586_087_235_467_691_1,
        0.405_845_151_377_397_2,
        0.207_784_955_007_898_5,
        0.0,
    ];
    const WGK: [f64; 8] = [
        0.022_935_322_010_529_22,
        0.063_092_092_629_978_55,
        0.104_790_010_322_250_2,
        0.140_653_259_715_525_9,
        0.169_004_726_639_267_9,
        0.190_350_578_064_785_4,
        0.204_432_940_075_298_9,
        0.209_482_141_084_727_8,
    ];
    const WG: [f64; 4] = [
        0.129_484_966_168_869_7,
        0.279_705_391_489_276_7,
        0.381_830_050_505_118_9,
        0.417_959_183_673_469_4,
    ];

    fn gk15(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> (f64, f64) {
        let c = 0.5 * (a + b);
        let h = 0.5 * (b - a);
        let fc = f(c);
        let mut kronrod = fc * WGK[7];
        let mut gauss = fc * WG[3];
        for j in 0..7 {
            let dx = h * XGK[j];
            let pair = f(c - dx) + f(c + dx);
            kronrod += WGK[j] * pair;
            if j % 2 == 1 {
                gauss += WG[j / 2] * pair;
            }
        }
        (kronrod * h, ((kronrod - gauss) * h).abs())
    }

    pub(super) fn adaptive_gauss_kronrod(
        f: &dyn Fn(f64) -> f64,
        a: f64,
        b: f64,
        abs_tol: f64,
        max_depth: usize,
    ) -> Result<f64> {
        fn recurse(
            f: &dyn Fn(f64) -> f64,
            a: f64,
            b: f64,
            tol: f64,
            depth: usize,
        ) -> Option<f64> {
            let (value, err) = gk15(f, a, b);
            if err <= tol.max(1e-300) {
                return Some(value);
            }
            if depth == 0 {
                return None;
            }
            let m = 0.5 * (a + b);
            Some(recurse(f, a, m, 0.5 * tol, depth - 1)? + recurse(f, m, b, 0.5 * tol, depth - 1)?)
        }
        recurse(f, a, b, abs_tol, max_depth)
            .ok_or_else(|| Error::Oracle(format!("quadrature on [{a}, {b}] did not converge")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn sample_moments(draws: &[f64]) -> (f64, f64) {
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let var = draws.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var)
    }

    #[test]
    fn small_count_product_matches_log_gamma() {
        for size in [1e-3, 0.4, 1.0, 7.5, 250.0] {
            for y in 0..=SMALL_COUNT + 1 {
                let law = NbLaw::new(1.3, size).unwrap();
                let yf = y as f64;
                let direct = ln_gamma_unchecked(yf + size) - ln_gamma_unchecked(yf + 1.0) - ln_gamma_unchecked(size)
                    + size * (size / (1.3 + size)).ln()
                    + yf * (1.3 / (1.3 + size)).ln();
                let got = nb_log_pmf(y, &law);
                assert!((got - direct).abs() <= 1e-12 * direct.abs().max(1.0), "y={y} size={size}: {got} vs {direct}");
            }
        }
    }

    #[test]
    fn large_size_reference_values() {
        // 50-digit references, mean 1.3.
        let cases = [
            (1e6, 0, -1.299_999_155_000_732_3),
            (1e6, 2, -1.468_419_406_624_505_5),
            (1e6, 7, -7.988_598_764_833_294),
            (1e6, 30, -68.086_911_574_058_25),
            (1e9, 0, -1.299_999_999_155),
            (1e9, 2, -1.468_418_652_379_963_2),
            (1e9, 30, -68.087_308_017_960_44),
        ];
        for (size, y, expected) in cases {
            let got = nb_log_pmf(y, &NbLaw::new(1.3, size).unwrap());
            assert!((got - expected).abs() <= 1e-13 * expected.abs(), "y={y} size={size}: {got} vs {expected}");
        }
    }

    #[test]
    fn log_gamma_reference_values() {
        // High-precision references rounded to f64.
        let cases = [
            (1e-6, 13.815_509_980_749_432),
            (0.5, 0.572_364_942_924_700_1),
            (1.5, -0.120_782_237_635_245_22),
            (3.7, 1.428_072_326_665_388),
            (10.0, 12.801_827_480_081_469),
            (123.456, 469.605_547_129_929_5),
            (1e4, 82_099.717_496_442_38),
            (1e6, 12_815_504.569_147_612),
        ];
        for (x, expected) in cases {
            let got = log_gamma_fn(x).unwrap();
            assert!(
                ((got - expected) / expected).abs() <= 1e-12,
                "lgamma({x}) = {got}, expected {expected}"
            );
        }
        assert!(log_gamma_fn(1.0).unwrap().abs() < 1e-15);
        assert!(log_gamma_fn(2.0).unwrap().abs() < 1e-15);
    }

    #[test]
    fn log_gamma_rejects_nonpositive() {
        assert!(matches!(log_gamma_fn(0.0), Err(Error::Domain(_))));
        assert!(matches!(log_gamma_fn(-1.5), Err(Error::Domain(_))));
    }

    #[test]
    fn nb_hand_values() {
        let law = NbLaw::new(1.0, 3.0).unwrap();
        assert_relative_eq!(nb_log_pmf(0, &law), 0.421875f64.ln(), epsilon = 1e-14);
        assert_relative_eq!(nb_log_pmf(1, &law), 0.31640625f64.ln(), epsilon = 1e-14);
        let total: f64 = (0..=200).map(|y| nb_log_pmf(y, &law).exp()).sum();
        assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn nb_variance_formula() {
        let law = NbLaw::new(2.5, 4.0).unwrap();
        assert_relative_eq!(law.variance(), 2.5 + 6.25 / 4.0);
        let (mut m1, mut m2) = (0.0, 0.0);
        for y in 0..400u64 {
            let p = nb_log_pmf(y, &law).exp();
            m1 += p * y as f64;
            m2 += p * (y * y) as f64;
        }
        assert_relative_eq!(m1, 2.5, epsilon = 1e-10);
        assert_relative_eq!(m2 - m1 * m1, law.variance(), epsilon = 1e-9);
    }

    #[test]
    fn oracle_matches_closed_form() {
        let p0 = nb_pmf_oracle(0, 3.0, 3.0, 1.0).unwrap();
        assert!((p0 - 0.421875).abs() < 1e-8);
        let p2 = nb_pmf_oracle(2, 3.0, 3.0, 1.0).unwrap();
        let law = NbLaw::from_mixture(3.0, 3.0, 1.0).unwrap();
        assert!((p2 - nb_log_pmf(2, &law).exp()).abs() < 1e-8);
        let tiny = nb_pmf_oracle(0, 3.0, 3.0, 1e-8).unwrap();
        assert!((tiny - 1.0).abs() < 1e-7);
    }

    #[test]
    fn oracle_small_shape() {
        for y in [0u64, 1, 7] {
            let q = nb_pmf_oracle(y, 0.5, 10.0, 5.0).unwrap();
            let law = NbLaw::from_mixture(0.5, 10.0, 5.0).unwrap();
            assert!((q - nb_log_pmf(y, &law).exp()).abs() < 1e-8, "y={y}");
        }
    }

    #[test]
    fn gamma_sampler_moments() {
        let mut rng = stream_rng(11, 0);
        let law = GammaLaw::new(3.0, 3.0).unwrap();
        let draws: Vec<f64> = (0..1_000_000).map(|_| sample_gamma(&law, &mut rng)).collect();
        let (mean, _) = sample_moments(&draws);
        assert!((mean - 1.0).abs() < 0.004, "mean {mean}");

        let law = GammaLaw::new(5.0, 2.0).unwrap();
        let draws: Vec<f64> = (0..200_000).map(|_| sample_gamma(&law, &mut rng)).collect();
        let (_, var) = sample_moments(&draws);
        assert!((var - 1.25).abs() < 0.03, "var {var}");
    }

    #[test]
    fn degenerate_gamma_consumes_nothing() {
        let mut a = stream_rng(3, 1);
        let mut b = stream_rng(3, 1);
        assert_eq!(sample_gamma(&GammaLaw::zero(2.0), &mut a), 0.0);
        assert_eq!(a.random::<u64>(), b.random::<u64>());
        assert!(GammaLaw::new(0.0, 1.0).is_err());
        assert!(GammaLaw::new_or_zero(0.0, 1.0).unwrap().is_degenerate());
    }

    #[test]
    fn beta_sampler_conventions() {
        let mut rng = stream_rng(5, 0);
        assert_eq!(sample_beta(&BetaLaw::new(2.5, 0.0).unwrap(), &mut rng), 1.0);
        assert_eq!(sample_beta(&BetaLaw::new(0.0, 1.5).unwrap(), &mut rng), 0.0);
        assert!(BetaLaw::new(0.0, 0.0).is_err());
        let law = BetaLaw::new(2.0, 2.0).unwrap();
        let draws: Vec<f64> = (0..1_000_000).map(|_| sample_beta(&law, &mut rng)).collect();
        let (mean, _) = sample_moments(&draws);
        assert!((mean - 0.5).abs() < 0.001, "mean {mean}");
        assert!(draws.iter().all(|&x| (0.0..=1.0).contains(&x)));
    }

    #[test]
    fn poisson_sampler() {
        let mut rng = stream_rng(8, 0);
        assert_eq!(sample_poisson(0.0, &mut rng).unwrap(), 0);
        assert!(sample_poisson(-1.0, &mut rng).is_err());
        let ones: Vec<f64> = (0..1_000_000)
            .map(|_| sample_poisson(1.0, &mut rng).unwrap() as f64)
            .collect();
        assert!((sample_moments(&ones).0 - 1.0).abs() < 0.004);
        let fours: Vec<f64> = (0..200_000)
            .map(|_| sample_poisson(4.0, &mut rng).unwrap() as f64)
            .collect();
        assert!((sample_moments(&fours).1 - 4.0).abs() < 0.1);
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let xs: Vec<u64> = (0..4).map(|_| 0).scan(stream_rng(1, 2), |r, _| Some(r.random())).collect();
        let ys: Vec<u64> = (0..4).map(|_| 0).scan(stream_rng(1, 2), |r, _| Some(r.random())).collect();
        let zs: Vec<u64> = (0..4).map(|_| 0).scan(stream_rng(1, 3), |r, _| Some(r.random())).collect();
        assert_eq!(xs, ys);
        assert_ne!(xs, zs);
    }
}
