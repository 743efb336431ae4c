//! Point-forecast losses over a holdout set.
//!
//! The Poisson deviance term for `Y = 0` is read as `2Ŷ`, the limit of
//! `y ln y → 0`.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForecastPair {
    pub actual: u64,
    pub predicted: f64,
}

impl ForecastPair {
    pub fn new(actual: u64, predicted: f64) -> Result<Self> {
        if !(predicted > 0.0 && predicted.is_finite()) {
            return Err(Error::domain(format!("forecast must be positive and finite, got {predicted}")));
        }
        Ok(Self { actual, predicted })
    }
}

fn check(pairs: &[ForecastPair]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::domain("no forecast pairs to score"));
    }
    if let Some(p) = pairs.iter().find(|p| !(p.predicted > 0.0 && p.predicted.is_finite())) {
        return Err(Error::domain(format!("forecast must be positive and finite, got {}", p.predicted)));
    }
    Ok(())
}

fn mean_of(pairs: &[ForecastPair], loss: impl Fn(&ForecastPair) -> f64) -> f64 {
    pairs.iter().map(loss).sum::<f64>() / pairs.len() as f64
}

pub fn rmse(pairs: &[ForecastPair]) -> Result<f64> {
    check(pairs)?;
    Ok(mean_of(pairs, |p| (p.actual as f64 - p.predicted).powi(2)).sqrt())
}

pub fn mae(pairs: &[ForecastPair]) -> Result<f64> {
    check(pairs)?;
    Ok(mean_of(pairs, |p| (p.actual as f64 - p.predicted).abs()))
}

/// Mean Poisson deviance `2(Ŷ − Y − Y ln(Ŷ/Y))`.
pub fn pdl(pairs: &[ForecastPair]) -> Result<f64> {
    check(pairs)?;
    Ok(mean_of(pairs, |p| {
        let y = p.actual as f64;
        let yhat = p.predicted;
        if p.actual == 0 {
            2.0 * yhat
        } else {
            // Never negative; clamp rounding noise at Ŷ ≈ Y.
            (2.0 * (yhat - y - y * (yhat / y).ln())).max(0.0)
        }
    }))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scores {
    pub rmse: f64,
    pub mae: f64,
    pub pdl: f64,
    pub n: usize,
}

pub fn score(pairs: &[ForecastPair]) -> Result<Scores> {
    Ok(Scores {
        rmse: rmse(pairs)?,
        mae: mae(pairs)?,
        pdl: pdl(pairs)?,
        n: pairs.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{seq::SliceRandom, Rng, SeedableRng};

    fn pairs(v: &[(u64, f64)]) -> Vec<ForecastPair> {
        v.iter().map(|&(a, p)| ForecastPair::new(a, p).unwrap()).collect()
    }

    #[test]
    fn hand_examples() {
        let perfect = pairs(&[(1, 1.0), (2, 2.0)]);
        assert_eq!(rmse(&perfect).unwrap(), 0.0);
        assert_eq!(mae(&perfect).unwrap(), 0.0);
        assert_eq!(pdl(&perfect).unwrap(), 0.0);

        let off = pairs(&[(0, 1.0), (2, 1.0)]);
        assert!((rmse(&off).unwrap() - 1.0).abs() <= 1e-12);
        assert!((mae(&off).unwrap() - 1.0).abs() <= 1e-12);
        // 2·1 and 2(1 − 2 − 2 ln ½) = 4 ln 2 − 2.
        let expected = (2.0 + 4.0 * 2f64.ln() - 2.0) / 2.0;
        assert!((pdl(&off).unwrap() - expected).abs() <= 1e-12);

        assert!((pdl(&pairs(&[(0, 0.5)])).unwrap() - 1.0).abs() <= 1e-12);
        assert!((rmse(&pairs(&[(3, 1.0)])).unwrap() - 2.0).abs() <= 1e-12);
    }

    #[test]
    fn rejects_empty_and_nonpositive() {
        assert!(rmse(&[]).is_err());
        assert!(mae(&[]).is_err());
        assert!(pdl(&[]).is_err());
        assert!(ForecastPair::new(1, 0.0).is_err());
        let bad = [ForecastPair { actual: 1, predicted: -0.5 }];
        assert!(pdl(&bad).is_err());
    }

    #[test]
    fn rmse_dominates_mae_fuzz() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..10_000 {
            let n = rng.random_range(1..20);
            let set: Vec<_> = (0..n)
                .map(|_| ForecastPair::new(rng.random_range(0..6), rng.random_range(1e-3..5.0)).unwrap())
                .collect();
            let (r, m) = (rmse(&set).unwrap(), mae(&set).unwrap());
            assert!(r >= m - 1e-15 * r.max(1.0), "{set:?}");
        }
    }

    #[test]
    fn permutation_invariance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let mut set: Vec<_> = (0..50)
            .map(|_| ForecastPair::new(rng.random_range(0..4), rng.random_range(0.01..3.0)).unwrap())
            .collect();
        let before = score(&set).unwrap();
        set.shuffle(&mut rng);
        let after = score(&set).unwrap();
        for (a, b) in [(before.rmse, after.rmse), (before.mae, after.mae), (before.pdl, after.pdl)] {
            assert!((a - b).abs() <= 1e-12 * a.max(1.0));
        }
    }

    proptest! {
        #[test]
        fn nonnegative_and_zero_only_when_exact(a in 0u64..10, p in 0.01f64..10.0) {
            let set = [ForecastPair::new(a, p).unwrap()];
            let s = score(&set).unwrap();
            prop_assert!(s.rmse >= 0.0 && s.mae >= 0.0 && s.pdl >= 0.0);
            if (a as f64 - p).abs() > 1e-6 {
                prop_assert!(s.pdl > 0.0 && s.mae > 0.0);
            }
        }
    }
}
