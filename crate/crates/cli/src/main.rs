use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use count_ssm_core::estimate::{
    compare_models, fit_dynamics, fit_joint, forecast_holdout, forecast_pairs, step_one, DynamicsFit, FitOptions,
    LikOptions,
};
use count_ssm_core::io::{
    load_panel, save_panel, split_panel, synth_panel, synth_truth_text, HoldoutRule, ModelFile, Panel, PanelSchema,
    RunConfig, SynthSpec,
};
use count_ssm_core::metrics::{score, Scores};
use count_ssm_core::regimes::{RegimeKind, RegimeSpec};
use count_ssm_core::regression::GlmOptions;
use count_ssm_core::simulate::{reference_regimes, run_study, write_study, SimStudyConfig};
use count_ssm_core::{Error, Result};

const PANEL_HELP: &str = "\
Panel CSV: header `id,period,count[,exposure],<covariates...>`. `period` is an
integer label, an empty `count` marks a missing count, `exposure` is the
fraction of the period at risk (default 1, must lie in (0, 1]). Lines starting
with `#` are ignored. Schemas: `numeric` (covariates used as is), `generic`
(adds an intercept), `lgpif` (adds an intercept and dummy codes `entity_type`
against Miscellaneous).";

#[derive(Parser)]
#[command(name = "count-ssm", version, about = "Observation-driven Poisson-gamma state-space models for count panels")]
struct Cli {
    /// Worker threads for the per-series filter; results do not depend on it.
    #[arg(long, global = true, env = "COUNT_SSM_THREADS")]
    threads: Option<usize>,

    /// Seed for every random draw; a fresh one is drawn and recorded when absent.
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate risk-factor paths for one regime and write study tables.
    ///
    /// Writes trajectories.csv (path_id,t,theta,y), moments.csv
    /// (t,mean,var,se; Θ moments across paths) and density.csv
    /// (t,grid,density; Gaussian kernel estimate of the law of Θ_t).
    Simulate(SimulateArgs),
    /// Run the four reference settings (β₀ = 3, λ = 1) into one directory each.
    Study(StudyArgs),
    /// Two-step fit of one regime; writes a model file.
    #[command(after_help = PANEL_HELP)]
    Fit(FitArgs),
    /// Fit several regimes and write a comparison CSV sorted by AIC.
    ///
    /// Columns: regime,loglik,aic,bic,k,n_obs,beta0,p,q,boundary. `k` counts
    /// regression and dynamics parameters.
    #[command(after_help = PANEL_HELP)]
    Compare(CompareArgs),
    /// Predictive means for the holdout records of a panel under a model file.
    ///
    /// Columns: id,period,actual,predicted. Records with an empty count are
    /// forecast and left unscored.
    #[command(after_help = PANEL_HELP)]
    Forecast(ForecastArgs),
    /// Out-of-sample RMSE, MAE and Poisson deviance loss per regime.
    ///
    /// The deviance term of a zero count is 2Ŷ. CSV columns: regime,rmse,mae,pdl,n.
    #[command(after_help = PANEL_HELP)]
    Validate(ValidateArgs),
    /// Simulate a panel with known parameters; writes the panel and its truth file.
    Synth(SynthArgs),
}

#[derive(Args)]
struct RegimeArgs {
    /// independent | shared | increasing | decreasing | converging | bounded | constant_variance
    #[arg(long)]
    regime: RegimeKind,
    /// Prior rate β₁|₀ (the prior of Θ₁ is Gamma(β₀, β₀), mean 1).
    #[arg(long, default_value_t = 3.0)]
    beta0: f64,
    /// Thinning parameter p, 0 ≤ p ≤ 1.
    #[arg(long)]
    p: Option<f64>,
    /// Thinning parameter q, 0 < q ≤ 1.
    #[arg(long)]
    q: Option<f64>,
}

impl RegimeArgs {
    fn spec(&self) -> Result<RegimeSpec> {
        RegimeSpec::from_free(self.regime, self.beta0, self.p, self.q)
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[command(flatten)]
    regime: RegimeArgs,
    /// Number of periods.
    #[arg(long = "T", default_value_t = 50)]
    horizon: usize,
    #[arg(long, default_value_t = 5000)]
    paths: usize,
    /// Intensity λ of every period (expected claims per unit exposure).
    #[arg(long, default_value_t = 1.0)]
    intensity: f64,
    /// Paths kept in trajectories.csv.
    #[arg(long, default_value_t = 4)]
    trajectories: usize,
    #[arg(long, default_value = "sim-out")]
    out: PathBuf,
}

#[derive(Args)]
struct StudyArgs {
    #[arg(long = "T", default_value_t = 50)]
    horizon: usize,
    #[arg(long, default_value_t = 5000)]
    paths: usize,
    #[arg(long, default_value = "study-out")]
    out: PathBuf,
}

#[derive(Args)]
struct PanelArgs {
    /// Panel CSV.
    #[arg(long)]
    panel: PathBuf,
    /// Run configuration (`key = value` lines).
    #[arg(long)]
    config: Option<PathBuf>,
    /// numeric | generic | lgpif; overrides the config.
    #[arg(long)]
    schema: Option<String>,
    /// `last`, `none` or a period label; overrides the config.
    #[arg(long)]
    holdout: Option<HoldoutRule>,
    /// Drive the constant-variance schedule with pooled posterior rates.
    #[arg(long)]
    pooled_beta: bool,
}

#[derive(Args)]
struct FitArgs {
    #[command(flatten)]
    panel: PanelArgs,
    #[arg(long)]
    regime: RegimeKind,
    /// Refine with a joint maximum-likelihood search over η and the dynamics.
    #[arg(long)]
    joint: bool,
    #[arg(long, default_value = "model.txt")]
    out: PathBuf,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    panel: PanelArgs,
    /// Comma-separated regimes; overrides the config.
    #[arg(long, value_delimiter = ',')]
    regimes: Vec<RegimeKind>,
    #[arg(long, default_value = "comparison.csv")]
    out: PathBuf,
    /// Also write one model file per regime into this directory.
    #[arg(long)]
    models: Option<PathBuf>,
}

#[derive(Args)]
struct ForecastArgs {
    #[command(flatten)]
    panel: PanelArgs,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value = "forecasts.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct ValidateArgs {
    #[command(flatten)]
    panel: PanelArgs,
    /// Model files to score; without any, the configured regimes are fitted on the training split.
    #[arg(long)]
    model: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    regimes: Vec<RegimeKind>,
    #[arg(long, default_value = "validation.csv")]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    #[command(flatten)]
    regime: RegimeArgs,
    #[arg(long, default_value_t = 500)]
    series: usize,
    #[arg(long = "T", default_value_t = 10)]
    horizon: usize,
    /// Intercept, then one coefficient per standard-normal covariate.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, default_value = "-0.5,0.3")]
    eta: Vec<f64>,
    #[arg(long, default_value = "panel.csv")]
    out: PathBuf,
    /// Truth file; defaults to the panel path with `.truth` appended.
    #[arg(long)]
    truth: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be at least 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot start thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    let seed = cli.seed;
    let outcome = match cli.command {
        Command::Simulate(a) => cmd_simulate(a, seed),
        Command::Study(a) => cmd_study(a, seed),
        Command::Fit(a) => cmd_fit(a, seed),
        Command::Compare(a) => cmd_compare(a, seed),
        Command::Forecast(a) => cmd_forecast(a, seed),
        Command::Validate(a) => cmd_validate(a, seed),
        Command::Synth(a) => cmd_synth(a, seed),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numerical() { 3 } else { 2 })
        }
    }
}

fn resolve_seed(seed: Option<u64>) -> u64 {
    seed.unwrap_or_else(rand::random)
}

fn header(command: &str, seed: u64, lines: impl IntoIterator<Item = String>) -> Vec<String> {
    let mut out = vec![format!("count-ssm {command} {}", env!("CARGO_PKG_VERSION")), format!("seed = {seed}")];
    out.extend(lines);
    out
}

/// Config lines for output headers; the seed is already recorded by [`header`].
fn config_lines(config: &RunConfig) -> Vec<String> {
    config.to_lines().into_iter().filter(|l| !l.starts_with("seed =")).collect()
}

fn write_lines(path: &Path, header: &[String], body: &str) -> Result<()> {
    let mut text = String::new();
    for line in header {
        let _ = writeln!(text, "# {line}");
    }
    text.push_str(body);
    std::fs::write(path, text).map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

fn cmd_simulate(a: SimulateArgs, seed: Option<u64>) -> Result<()> {
    let seed = resolve_seed(seed);
    let regime = a.regime.spec()?;
    let mut config = SimStudyConfig::new(regime, a.horizon, a.paths, seed);
    config.intensities = vec![a.intensity];
    config.n_trajectories = a.trajectories.min(a.paths);
    config.density_times.retain(|&t| t <= a.horizon);
    let tables = run_study(&config)?;
    std::fs::create_dir_all(&a.out)?;
    let head = header(
        "simulate",
        seed,
        [
            format!("regime = {regime}"),
            format!("T = {}", a.horizon),
            format!("paths = {}", a.paths),
            format!("intensity = {}", a.intensity),
        ],
    );
    write_study(&a.out, &tables, &head)?;
    println!("wrote {} paths of {regime} to {}", a.paths, a.out.display());
    Ok(())
}

fn cmd_study(a: StudyArgs, seed: Option<u64>) -> Result<()> {
    let seed = resolve_seed(seed);
    for (name, regime) in reference_regimes() {
        let mut config = SimStudyConfig::new(regime, a.horizon, a.paths, seed);
        config.density_times.retain(|&t| t <= a.horizon);
        let tables = run_study(&config)?;
        let dir = a.out.join(name);
        std::fs::create_dir_all(&dir)?;
        let head = header(
            "study",
            seed,
            [
                format!("regime = {regime}"),
                format!("T = {}", a.horizon),
                format!("paths = {}", a.paths),
                "intensity = 1".to_string(),
            ],
        );
        write_study(&dir, &tables, &head)?;
        println!("{name}: {}", dir.display());
    }
    Ok(())
}

struct Prepared {
    config: RunConfig,
    train: Panel,
    split: count_ssm_core::io::Split,
}

fn prepare(a: &PanelArgs, seed: Option<u64>) -> Result<(Prepared, u64)> {
    let mut config = match &a.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(s) = &a.schema {
        config.schema = s.clone();
    }
    if let Some(rule) = a.holdout {
        config.holdout = rule;
    }
    if a.pooled_beta {
        config.pooled_beta = true;
    }
    if seed.is_some() {
        config.seed = seed;
    }
    config.validate()?;
    let seed = resolve_seed(config.seed);
    config.seed = Some(seed);
    let schema = PanelSchema::by_name(&config.schema)?;
    let panel = load_panel(&a.panel, &schema)?;
    let split = split_panel(&panel, config.holdout);
    for w in &split.warnings {
        eprintln!("warning: {w}");
    }
    if split.train.series.is_empty() {
        return Err(Error::Config("no series left for training".into()));
    }
    Ok((
        Prepared {
            config,
            train: split.train.clone(),
            split,
        },
        seed,
    ))
}

fn fit_options(config: &RunConfig, regression_params: usize) -> FitOptions {
    FitOptions {
        beta0_grid: config.beta0_grid.clone(),
        p_grid: config.p_grid.clone(),
        q_grid: config.q_grid.clone(),
        lik: LikOptions {
            pooled_beta: config.pooled_beta,
        },
        regression_params,
        bic_n: config.bic_n,
        ..FitOptions::default()
    }
}

fn glm_options(config: &RunConfig) -> GlmOptions {
    GlmOptions {
        tol: config.glm_tol,
        max_iter: config.glm_max_iter,
    }
}

fn model_file(panel: &Panel, eta: &[f64], dispersion: f64, fit: &DynamicsFit, config: &RunConfig, seed: u64) -> ModelFile {
    ModelFile {
        regime: fit.regime,
        covariate_names: panel.covariate_names.clone(),
        eta: eta.to_vec(),
        dispersion,
        loglik: fit.loglik,
        k: fit.k,
        n_obs: fit.n_obs,
        seed,
        pooled_beta: config.pooled_beta,
    }
}

fn step_one_checked(prep: &Prepared) -> Result<count_ssm_core::estimate::StepOne> {
    let one = step_one(&prep.train, &glm_options(&prep.config))?;
    if !one.glm.converged {
        eprintln!(
            "warning: regression stopped after {} iterations with score norm {:.3e}",
            one.glm.iterations, one.glm.score_norm
        );
    }
    Ok(one)
}

fn flags(fit: &DynamicsFit) -> String {
    fit.boundary_flags.iter().map(|f| f.to_string()).collect::<Vec<_>>().join(";")
}

fn cmd_fit(a: FitArgs, seed: Option<u64>) -> Result<()> {
    let (prep, seed) = prepare(&a.panel, seed)?;
    let one = step_one_checked(&prep)?;
    let opts = fit_options(&prep.config, one.glm.eta.len());
    let mut fit = fit_dynamics(&prep.train, &one.intensities, a.regime, &opts)?;
    let mut eta = one.glm.eta.clone();
    if a.joint {
        let (joint_eta, joint_fit) = fit_joint(&prep.train, &eta, &fit, &opts)?;
        eta = joint_eta;
        fit = joint_fit;
    }
    model_file(&prep.train, &eta, one.glm.dispersion, &fit, &prep.config, seed).save(&a.out)?;
    println!(
        "{}: loglik {:.3}, AIC {:.3}, BIC {:.3}{}",
        fit.regime,
        fit.loglik,
        fit.aic,
        fit.bic,
        if fit.at_boundary() { format!(" [boundary: {}]", flags(&fit)) } else { String::new() }
    );
    println!("model written to {}", a.out.display());
    Ok(())
}

fn cmd_compare(a: CompareArgs, seed: Option<u64>) -> Result<()> {
    let (mut prep, seed) = prepare(&a.panel, seed)?;
    if !a.regimes.is_empty() {
        prep.config.regimes = a.regimes.clone();
    }
    let one = step_one_checked(&prep)?;
    let opts = fit_options(&prep.config, one.glm.eta.len());
    let fits = compare_models(&prep.train, &one.intensities, &prep.config.regimes, &opts)?;

    let mut csv = String::from("regime,loglik,aic,bic,k,n_obs,beta0,p,q,boundary\n");
    for f in &fits {
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{}",
            f.regime.kind, f.loglik, f.aic, f.bic, f.k, f.n_obs, f.regime.beta0, f.regime.p, f.regime.q, flags(f)
        );
    }
    let mut head = header("compare", seed, config_lines(&prep.config));
    head.push(format!("panel = {}", a.panel.panel.display()));
    head.push(format!("eta = {}", join(&one.glm.eta)));
    write_lines(&a.out, &head, &csv)?;

    if let Some(dir) = &a.models {
        std::fs::create_dir_all(dir)?;
        for f in &fits {
            model_file(&prep.train, &one.glm.eta, one.glm.dispersion, f, &prep.config, seed)
                .save(&dir.join(format!("{}.txt", f.regime.kind)))?;
        }
    }

    println!("{:<18} {:>12} {:>12} {:>12} {:>3} {:>8} {:>8} {:>8}  flags", "regime", "loglik", "AIC", "BIC", "k", "beta0", "p", "q");
    for f in &fits {
        println!(
            "{:<18} {:>12.3} {:>12.3} {:>12.3} {:>3} {:>8.3} {:>8.3} {:>8.3}  {}",
            f.regime.kind.name(),
            f.loglik,
            f.aic,
            f.bic,
            f.k,
            f.regime.beta0,
            f.regime.p,
            f.regime.q,
            flags(f)
        );
    }
    println!("comparison written to {}", a.out.display());
    Ok(())
}

fn join(v: &[f64]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

fn check_covariates(model: &ModelFile, panel: &Panel) -> Result<()> {
    if model.covariate_names != panel.covariate_names {
        return Err(Error::Config(format!(
            "model covariates [{}] differ from panel covariates [{}]",
            model.covariate_names.join(", "),
            panel.covariate_names.join(", ")
        )));
    }
    Ok(())
}

fn cmd_forecast(a: ForecastArgs, seed: Option<u64>) -> Result<()> {
    let (prep, seed) = prepare(&a.panel, seed)?;
    let model = ModelFile::load(&a.model)?;
    check_covariates(&model, &prep.train)?;
    if prep.split.holdout.is_empty() {
        return Err(Error::Config(format!("holdout rule `{}` selects no records", prep.config.holdout)));
    }
    let lik = LikOptions {
        pooled_beta: model.pooled_beta,
    };
    let forecasts = forecast_holdout(&prep.train, &prep.split.holdout, &model.eta, &model.regime, &lik)?;
    let mut csv = String::from("id,period,actual,predicted\n");
    for f in &forecasts {
        let actual = f.actual.map(|y| y.to_string()).unwrap_or_default();
        let _ = writeln!(csv, "{},{},{},{}", f.id, f.period, actual, f.predicted);
    }
    let mut head = header("forecast", seed, config_lines(&prep.config));
    head.push(format!("model = {}", model.regime));
    write_lines(&a.out, &head, &csv)?;
    println!("{} forecasts written to {}", forecasts.len(), a.out.display());
    Ok(())
}

fn cmd_validate(a: ValidateArgs, seed: Option<u64>) -> Result<()> {
    let (mut prep, seed) = prepare(&a.panel, seed)?;
    if !a.regimes.is_empty() {
        prep.config.regimes = a.regimes.clone();
    }
    if prep.split.holdout.iter().all(|c| c.record.count.is_none()) {
        return Err(Error::Config(format!(
            "holdout rule `{}` leaves no observed records to score",
            prep.config.holdout
        )));
    }
    let models: Vec<ModelFile> = if a.model.is_empty() {
        let one = step_one_checked(&prep)?;
        let opts = fit_options(&prep.config, one.glm.eta.len());
        prep.config
            .regimes
            .iter()
            .map(|&kind| {
                let fit = fit_dynamics(&prep.train, &one.intensities, kind, &opts)?;
                Ok(model_file(&prep.train, &one.glm.eta, one.glm.dispersion, &fit, &prep.config, seed))
            })
            .collect::<Result<_>>()?
    } else {
        a.model.iter().map(|p| ModelFile::load(p)).collect::<Result<_>>()?
    };

    let mut rows: Vec<(String, Scores)> = Vec::new();
    for model in &models {
        check_covariates(model, &prep.train)?;
        let lik = LikOptions {
            pooled_beta: model.pooled_beta,
        };
        let forecasts = forecast_holdout(&prep.train, &prep.split.holdout, &model.eta, &model.regime, &lik)?;
        rows.push((model.regime.kind.name().to_string(), score(&forecast_pairs(&forecasts)?)?));
    }

    let mut csv = String::from("regime,rmse,mae,pdl,n\n");
    for (name, s) in &rows {
        let _ = writeln!(csv, "{name},{},{},{},{}", s.rmse, s.mae, s.pdl, s.n);
    }
    let mut head = header("validate", seed, config_lines(&prep.config));
    head.push(format!("panel = {}", a.panel.panel.display()));
    write_lines(&a.out, &head, &csv)?;

    print!("{:<6}", "");
    for (name, _) in &rows {
        print!(" {name:>18}");
    }
    println!();
    for (label, pick) in [
        ("RMSE", (|s: &Scores| s.rmse) as fn(&Scores) -> f64),
        ("MAE", |s: &Scores| s.mae),
        ("PDL", |s: &Scores| s.pdl),
    ] {
        print!("{label:<6}");
        for (_, s) in &rows {
            print!(" {:>18.4}", pick(s));
        }
        println!();
    }
    println!("validation written to {}", a.out.display());
    Ok(())
}

fn cmd_synth(a: SynthArgs, seed: Option<u64>) -> Result<()> {
    let seed = resolve_seed(seed);
    let spec = SynthSpec {
        n_series: a.series,
        horizon: a.horizon,
        regime: a.regime.spec()?,
        eta: a.eta.clone(),
    };
    let panel = synth_panel(&spec, seed)?;
    let head = header(
        "synth",
        seed,
        [format!("regime = {}", spec.regime), format!("eta = {}", join(&spec.eta))],
    );
    save_panel(&panel, &a.out, &head)?;
    let truth = a.truth.clone().unwrap_or_else(|| {
        let mut p = a.out.clone().into_os_string();
        p.push(".truth");
        PathBuf::from(p)
    });
    std::fs::write(&truth, synth_truth_text(&spec, seed))?;
    println!(
        "wrote {} series x {} periods to {} (truth: {})",
        a.series,
        a.horizon,
        a.out.display(),
        truth.display()
    );
    Ok(())
}
