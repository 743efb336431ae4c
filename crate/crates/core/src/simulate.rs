//! Forward simulation of latent paths and counts, and the Monte Carlo study.
//!
//! The latent factor evolves as `Θ_{t+1} = Θ_t B_{t+1} / q** + η_{t+1}` with
//! `B ~ Beta(q* α_t, (1 − q*) α_t)` and `η ~ Gamma((q** − q*) β_t, q** β_t)`.
//! Both laws depend on the current posterior `(α_t, β_t)`, so each path runs
//! the filter alongside the simulation.

use std::io::Write;
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::dist::{sample_beta, sample_gamma, sample_poisson, stream_rng, BetaLaw, GammaLaw};
use crate::error::{Error, Result};
use crate::filter::{FilterState, Observation};
use crate::regimes::{QPair, RegimeSpec};

/// Draws `Θ_{t+1}` given `Θ_t = theta` and the posterior `Gamma(α_t, β_t)`.
pub fn step_theta<R: Rng + ?Sized>(theta: f64, post: &GammaLaw, pair: QPair, rng: &mut R) -> Result<f64> {
    let alpha = post.shape();
    let beta = post.rate();
    let thin = BetaLaw::new(pair.qstar * alpha, (1.0 - pair.qstar) * alpha)?;
    let noise = GammaLaw::new_or_zero((pair.q2 - pair.qstar) * beta, pair.q2 * beta)?;
    let b = sample_beta(&thin, rng);
    let eta = sample_gamma(&noise, rng);
    Ok(theta * b / pair.q2 + eta)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimPath {
    pub theta: Vec<f64>,
    pub counts: Vec<u64>,
    /// Filtering law `Gamma(α_t, β_t)` after each count.
    pub posterior: Vec<GammaLaw>,
}

/// Simulates one path of length `intensities.len()`.
pub fn simulate_path<R: Rng + ?Sized>(regime: &RegimeSpec, intensities: &[f64], rng: &mut R) -> Result<SimPath> {
    regime.validate()?;
    let horizon = intensities.len();
    let mut theta = Vec::with_capacity(horizon);
    let mut counts = Vec::with_capacity(horizon);
    let mut posterior = Vec::with_capacity(horizon);

    let mut state = FilterState::init(regime.beta0)?;
    let mut current = sample_gamma(&state.pred, rng);
    for (t, &lambda) in intensities.iter().enumerate() {
        let y = sample_poisson(lambda * current, rng)?;
        theta.push(current);
        counts.push(y);
        state = state.update(&Observation::observed(y, lambda)?)?;
        let post = state.post.expect("just updated");
        posterior.push(post);
        if t + 1 < horizon {
            let pair = regime.q_pair(state.context().expect("just updated"))?;
            current = step_theta(current, &post, pair, rng)?;
            state = state.predict(pair)?;
        }
    }
    Ok(SimPath {
        theta,
        counts,
        posterior,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimStudyConfig {
    pub regime: RegimeSpec,
    pub horizon: usize,
    pub n_paths: usize,
    /// One intensity per period; a single value is used for every period.
    pub intensities: Vec<f64>,
    pub seed: u64,
    /// Paths written to the trajectory table.
    pub n_trajectories: usize,
    /// Periods at which kernel density summaries are taken.
    pub density_times: Vec<usize>,
}

impl SimStudyConfig {
    pub fn new(regime: RegimeSpec, horizon: usize, n_paths: usize, seed: u64) -> Self {
        Self {
            regime,
            horizon,
            n_paths,
            intensities: vec![1.0],
            seed,
            n_trajectories: 4,
            density_times: vec![1, 5, 20, 50],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.regime.validate()?;
        if self.horizon == 0 {
            return Err(Error::domain("study horizon T must be at least 1"));
        }
        if self.n_paths == 0 {
            return Err(Error::domain("study needs at least one path"));
        }
        if self.intensities.len() != 1 && self.intensities.len() != self.horizon {
            return Err(Error::domain(format!(
                "expected 1 or {} intensities, got {}",
                self.horizon,
                self.intensities.len()
            )));
        }
        if let Some(bad) = self.intensities.iter().find(|l| !(**l > 0.0 && l.is_finite())) {
            return Err(Error::domain(format!("intensities must be positive, got {bad}")));
        }
        Ok(())
    }

    pub fn intensity_path(&self) -> Vec<f64> {
        if self.intensities.len() == 1 {
            vec![self.intensities[0]; self.horizon]
        } else {
            self.intensities.clone()
        }
    }
}

/// Simulates `n_paths` independent paths; path `i` uses stream `i` of `seed`.
pub fn simulate_paths(config: &SimStudyConfig) -> Result<Vec<SimPath>> {
    config.validate()?;
    let lambdas = config.intensity_path();
    (0..config.n_paths)
        .into_par_iter()
        .map(|i| simulate_path(&config.regime, &lambdas, &mut stream_rng(config.seed, i as u64)))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentRow {
    pub t: usize,
    pub mean: f64,
    pub var: f64,
    /// Standard error of `mean`.
    pub se: f64,
    /// Standard error of `var`.
    pub var_se: f64,
}

/// Sample mean, unbiased variance and their standard errors.
///
/// A single sample yields zero variance and zero standard errors.
pub fn moment_row(t: usize, sample: &[f64]) -> MomentRow {
    let n = sample.len() as f64;
    let mean = sample.iter().sum::<f64>() / n;
    if sample.len() < 2 {
        return MomentRow {
            t,
            mean,
            var: 0.0,
            se: 0.0,
            var_se: 0.0,
        };
    }
    let m2 = sample.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let m4 = sample.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    let var = m2 * n / (n - 1.0);
    MomentRow {
        t,
        mean,
        var,
        se: (var / n).sqrt(),
        var_se: ((m4 - m2 * m2 * (n - 3.0) / (n - 1.0)) / n).max(0.0).sqrt(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityRow {
    pub t: usize,
    pub grid: f64,
    pub density: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryRow {
    pub path_id: usize,
    pub t: usize,
    pub theta: f64,
    pub y: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyTables {
    pub trajectories: Vec<TrajectoryRow>,
    pub moments: Vec<MomentRow>,
    pub density: Vec<DensityRow>,
}

const DENSITY_GRID: usize = 128;

/// Gaussian kernel density on a regular grid with Silverman's bandwidth.
pub fn kernel_density(sample: &[f64], grid_points: usize) -> Vec<(f64, f64)> {
    let n = sample.len() as f64;
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let quantile = |p: f64| sorted[((p * (n - 1.0)).round() as usize).min(sorted.len() - 1)];
    let row = moment_row(0, sample);
    let sd = row.var.sqrt();
    let iqr = quantile(0.75) - quantile(0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    let bandwidth = if spread > 0.0 {
        0.9 * spread * n.powf(-0.2)
    } else {
        0.1 * row.mean.abs().max(1.0)
    };
    let upper = quantile(0.995) + 3.0 * bandwidth;
    let step = upper / (grid_points - 1) as f64;
    let norm = 1.0 / (n * bandwidth * (2.0 * std::f64::consts::PI).sqrt());
    (0..grid_points)
        .map(|g| {
            let x = g as f64 * step;
            let dens = sorted
                .iter()
                .map(|s| (-0.5 * ((x - s) / bandwidth).powi(2)).exp())
                .sum::<f64>()
                * norm;
            (x, dens)
        })
        .collect()
}

/// Summarises simulated paths into trajectory, moment and density tables.
pub fn summarize(config: &SimStudyConfig, paths: &[SimPath]) -> StudyTables {
    let trajectories = paths
        .iter()
        .take(config.n_trajectories)
        .enumerate()
        .flat_map(|(path_id, path)| {
            path.theta
                .iter()
                .zip(&path.counts)
                .enumerate()
                .map(move |(t, (&theta, &y))| TrajectoryRow {
                    path_id,
                    t: t + 1,
                    theta,
                    y,
                })
        })
        .collect();
    let column = |t: usize| -> Vec<f64> { paths.iter().map(|p| p.theta[t - 1]).collect() };
    let moments = (1..=config.horizon).map(|t| moment_row(t, &column(t))).collect();
    let density = config
        .density_times
        .iter()
        .filter(|&&t| t >= 1 && t <= config.horizon)
        .flat_map(|&t| {
            kernel_density(&column(t), DENSITY_GRID)
                .into_iter()
                .map(move |(grid, density)| DensityRow { t, grid, density })
        })
        .collect();
    StudyTables {
        trajectories,
        moments,
        density,
    }
}

pub fn run_study(config: &SimStudyConfig) -> Result<StudyTables> {
    let paths = simulate_paths(config)?;
    Ok(summarize(config, &paths))
}

/// Writes `trajectories.csv`, `moments.csv` and `density.csv` into `dir`.
///
/// Each file starts with the `#`-prefixed `header` lines.
pub fn write_study(dir: &Path, tables: &StudyTables, header: &[String]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let open = |name: &str| -> Result<std::io::BufWriter<std::fs::File>> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(dir.join(name))?);
        for line in header {
            writeln!(w, "# {line}")?;
        }
        Ok(w)
    };

    let mut w = open("trajectories.csv")?;
    writeln!(w, "path_id,t,theta,y")?;
    for r in &tables.trajectories {
        writeln!(w, "{},{},{},{}", r.path_id, r.t, r.theta, r.y)?;
    }
    w.flush()?;

    let mut w = open("moments.csv")?;
    writeln!(w, "t,mean,var,se")?;
    for r in &tables.moments {
        writeln!(w, "{},{},{},{}", r.t, r.mean, r.var, r.se)?;
    }
    w.flush()?;

    let mut w = open("density.csv")?;
    writeln!(w, "t,grid,density")?;
    for r in &tables.density {
        writeln!(w, "{},{},{}", r.t, r.grid, r.density)?;
    }
    w.flush()?;
    Ok(())
}

/// The four settings of the reference study: `β0 = 3`, `λ ≡ 1`.
pub fn reference_regimes() -> Vec<(&'static str, RegimeSpec)> {
    vec![
        ("increasing", RegimeSpec::increasing(3.0, 0.8).expect("valid")),
        ("decreasing", RegimeSpec::decreasing(3.0, 0.8).expect("valid")),
        // q* = 0.8, q** = 0.9, i.e. p = 8/9.
        ("converging", RegimeSpec::converging(3.0, 0.8 / 0.9, 0.9).expect("valid")),
        ("constant_variance", RegimeSpec::constant_variance(3.0, 0.9).expect("valid")),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::regimes::variance_recursion;

    #[test]
    fn shared_paths_are_constant() {
        let spec = RegimeSpec::shared(3.0).unwrap();
        let path = simulate_path(&spec, &[1.0; 30], &mut stream_rng(1, 0)).unwrap();
        assert!(path.theta.iter().all(|&t| t == path.theta[0]));
    }

    #[test]
    fn step_theta_shared_is_identity() {
        let post = GammaLaw::new(4.0, 2.5).unwrap();
        let mut rng = stream_rng(2, 0);
        let pair = QPair::new(1.0, 1.0).unwrap();
        assert_eq!(step_theta(1.37, &post, pair, &mut rng).unwrap(), 1.37);
    }

    #[test]
    fn step_theta_martingale() {
        let post = GammaLaw::new(4.0, 2.5).unwrap();
        let mut rng = stream_rng(3, 0);
        let pair = QPair::new(0.8, 0.8).unwrap();
        let n = 200_000;
        let draws: Vec<f64> = (0..n).map(|_| step_theta(1.6, &post, pair, &mut rng).unwrap()).collect();
        let row = moment_row(1, &draws);
        assert!((row.mean - 1.6).abs() < 4.0 * row.se, "{row:?}");
    }

    #[test]
    fn step_theta_handles_zero_qstar() {
        let post = GammaLaw::new(4.0, 2.5).unwrap();
        let mut rng = stream_rng(4, 0);
        let pair = QPair::new(0.0, 0.6).unwrap();
        let draws: Vec<f64> = (0..100_000).map(|_| step_theta(9.0, &post, pair, &mut rng).unwrap()).collect();
        // Θ_{t+1} = η ~ Gamma(0.6 β, 0.6 β): mean one, independent of Θ_t.
        let row = moment_row(1, &draws);
        assert!((row.mean - 1.0).abs() < 4.0 * row.se);
        assert!((row.var - 1.0 / 1.5).abs() < 4.0 * row.var_se);
    }

    #[test]
    fn single_path_study_is_well_formed() {
        let config = SimStudyConfig::new(RegimeSpec::increasing(3.0, 0.8).unwrap(), 10, 1, 9);
        let tables = run_study(&config).unwrap();
        assert_eq!(tables.moments.len(), 10);
        assert!(tables.moments.iter().all(|m| m.var == 0.0 && m.se == 0.0));
        assert_eq!(tables.trajectories.len(), 10);
        assert!(tables.density.iter().all(|d| d.density.is_finite()));
        assert_eq!(tables.density.len(), 2 * DENSITY_GRID);
    }

    #[test]
    fn study_is_seed_deterministic() {
        let config = SimStudyConfig::new(RegimeSpec::constant_variance(3.0, 0.9).unwrap(), 20, 200, 5);
        assert_eq!(run_study(&config).unwrap(), run_study(&config).unwrap());
        let other = SimStudyConfig { seed: 6, ..config.clone() };
        assert_ne!(run_study(&config).unwrap(), run_study(&other).unwrap());
    }

    #[test]
    fn mean_stays_at_one() {
        for (_, regime) in reference_regimes() {
            let config = SimStudyConfig::new(regime, 50, 2000, 17);
            let tables = run_study(&config).unwrap();
            for m in &tables.moments {
                assert!((m.mean - 1.0).abs() < 4.0 * m.se, "{regime}: {m:?}");
            }
        }
    }

    #[test]
    fn hf_variance_grows() {
        let exact = variance_recursion(&RegimeSpec::increasing(3.0, 0.8).unwrap(), &[1.0; 50], 50).unwrap();
        assert!(exact[49] / exact[0] > 3.0);
        let config = SimStudyConfig::new(RegimeSpec::increasing(3.0, 0.8).unwrap(), 50, 5000, 23);
        let tables = run_study(&config).unwrap();
        assert!(tables.moments[49].var / tables.moments[0].var > 3.0);
    }

    #[test]
    fn decreasing_variance_falls_and_counts_approach_poisson() {
        let config = SimStudyConfig::new(RegimeSpec::decreasing(3.0, 0.8).unwrap(), 50, 5000, 29);
        let paths = simulate_paths(&config).unwrap();
        let tables = summarize(&config, &paths);
        assert!(tables.moments[49].var < tables.moments[4].var);
        let y50: Vec<f64> = paths.iter().map(|p| p.counts[49] as f64).collect();
        let exact = variance_recursion(&config.regime, &[1.0; 50], 50).unwrap();
        // Var(Y_t) = λ E[Θ_t] + λ² Var(Θ_t).
        let row = moment_row(50, &y50);
        assert!((row.var - (1.0 + exact[49])).abs() < 4.0 * row.var_se, "{row:?}");
    }

    #[test]
    fn posterior_shape_tracks_rate() {
        // E[α_t] = β_t and E[α_t / β_t²] = 1/β_t for every regime.
        for (_, regime) in reference_regimes() {
            let config = SimStudyConfig::new(regime, 30, 3000, 31);
            let paths = simulate_paths(&config).unwrap();
            for t in [0usize, 9, 29] {
                let beta = paths[0].posterior[t].rate();
                assert!(paths.iter().all(|p| (p.posterior[t].rate() - beta).abs() < 1e-12));
                let alphas: Vec<f64> = paths.iter().map(|p| p.posterior[t].shape()).collect();
                let row = moment_row(t + 1, &alphas);
                assert!((row.mean - beta).abs() < 4.0 * row.se, "{regime} t={t}: {row:?} vs {beta}");
                let post_var: Vec<f64> = paths.iter().map(|p| p.posterior[t].variance()).collect();
                let row = moment_row(t + 1, &post_var);
                assert!((row.mean - 1.0 / beta).abs() < 4.0 * row.se);
            }
        }
    }

    #[test]
    fn study_csvs_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let config = SimStudyConfig::new(RegimeSpec::shared(3.0).unwrap(), 5, 10, 1);
        let tables = run_study(&config).unwrap();
        write_study(dir.path(), &tables, &["seed=1".to_string()]).unwrap();
        let moments = std::fs::read_to_string(dir.path().join("moments.csv")).unwrap();
        let mut lines = moments.lines();
        assert_eq!(lines.next(), Some("# seed=1"));
        assert_eq!(lines.next(), Some("t,mean,var,se"));
        assert_eq!(lines.count(), 5);
        for name in ["trajectories.csv", "density.csv"] {
            assert!(dir.path().join(name).exists());
        }
    }
}
