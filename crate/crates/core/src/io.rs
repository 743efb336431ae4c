//! Panel files, run configuration, model files and synthetic panels.
//!
//! Panel CSV layout: `id, period, count, exposure, <covariates...>`. `period`
//! is an integer label, an empty `count` cell marks a missing count and the
//! `exposure` column may be omitted (every exposure is then 1). Lines starting
//! with `#` are comments. Categorical covariates are dummy coded against a
//! declared reference level; every other covariate column is read as a number.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use crate::dist::stream_rng;
use crate::error::{Error, Result};
use crate::filter::Observation;
use crate::regimes::{RegimeKind, RegimeSpec};
use crate::regression::{intensity_from, DesignRow};
use crate::simulate::simulate_path;

pub const SCHEMA_VERSION: u32 = 1;
pub const INTERCEPT: &str = "(Intercept)";

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub period: i64,
    pub count: Option<u64>,
    pub exposure: f64,
    /// Coded covariates, aligned with [`Panel::covariate_names`].
    pub covariates: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelSeries {
    pub id: String,
    /// Sorted by strictly increasing period.
    pub records: Vec<Record>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Panel {
    pub covariate_names: Vec<String>,
    pub series: Vec<PanelSeries>,
}

impl Panel {
    pub fn n_records(&self) -> usize {
        self.series.iter().map(|s| s.records.len()).sum()
    }

    pub fn n_observed(&self) -> usize {
        self.series
            .iter()
            .flat_map(|s| &s.records)
            .filter(|r| r.count.is_some())
            .count()
    }

    /// Observed records as regression rows; missing counts are skipped.
    pub fn design_rows(&self) -> Result<Vec<DesignRow>> {
        self.series
            .iter()
            .flat_map(|s| &s.records)
            .filter_map(|r| r.count.map(|y| DesignRow::new(r.covariates.clone(), r.exposure, y)))
            .collect()
    }

    /// Intensities `e · exp(x·η)` for every record, one vector per series.
    pub fn intensities(&self, eta: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.series
            .iter()
            .map(|s| {
                s.records
                    .iter()
                    .map(|r| intensity_from(eta, &r.covariates, r.exposure))
                    .collect()
            })
            .collect()
    }

    /// Filter input for series `i` given its intensities.
    pub fn observations(&self, i: usize, intensities: &[f64]) -> Result<Vec<Observation>> {
        let records = &self.series[i].records;
        if records.len() != intensities.len() {
            return Err(Error::domain(format!(
                "series `{}` has {} records but {} intensities",
                self.series[i].id,
                records.len(),
                intensities.len()
            )));
        }
        records
            .iter()
            .zip(intensities)
            .map(|(r, &l)| Observation::new(r.count, l))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CategoricalSpec {
    pub column: String,
    /// Declared level order; dummies follow it, skipping the reference.
    pub levels: Vec<String>,
    pub reference: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PanelSchema {
    pub categorical: Vec<CategoricalSpec>,
    /// Prepend a constant column named `(Intercept)`.
    pub intercept: bool,
    /// Upper bound on exposures; `None` disables the check.
    pub max_exposure: Option<f64>,
}

impl PanelSchema {
    /// All covariates numeric, no intercept added, exposures in (0, 1].
    pub fn numeric() -> Self {
        Self {
            categorical: Vec::new(),
            intercept: false,
            max_exposure: Some(1.0),
        }
    }

    pub fn with_intercept() -> Self {
        Self {
            intercept: true,
            ..Self::numeric()
        }
    }

    /// Inland-marine layout of the Wisconsin local government property fund.
    ///
    /// Expects an `entity_type` column with levels City, County,
    /// Miscellaneous, School, Town and Village (reference Miscellaneous) and
    /// the already logged `CoverageIM` and `lnDeductIM` columns.
    pub fn lgpif() -> Self {
        Self {
            categorical: vec![CategoricalSpec {
                column: "entity_type".into(),
                levels: ["City", "County", "Miscellaneous", "School", "Town", "Village"]
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
                reference: "Miscellaneous".into(),
            }],
            intercept: true,
            max_exposure: Some(1.0),
        }
    }

    pub fn by_name(name: &str) -> Result<Self> {
        match name {
            "numeric" => Ok(Self::numeric()),
            "generic" => Ok(Self::with_intercept()),
            "lgpif" => Ok(Self::lgpif()),
            other => Err(Error::Config(format!(
                "unknown schema `{other}`; expected numeric | generic | lgpif"
            ))),
        }
    }
}

enum ColumnCoder {
    Numeric { name: String, index: usize },
    Dummies { spec: CategoricalSpec, index: usize },
}

/// Reads a panel CSV.
pub fn load_panel(path: &Path, schema: &PanelSchema) -> Result<Panel> {
    let file = std::fs::File::open(path)
        .map_err(|e| Error::parse(path.display().to_string(), format!("cannot open: {e}")))?;
    read_panel(file, schema, &path.display().to_string())
}

pub fn read_panel<R: std::io::Read>(reader: R, schema: &PanelSchema, source: &str) -> Result<Panel> {
    let mut csv = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = csv.headers()?.clone();
    let find = |name: &str| headers.iter().position(|h| h == name);
    let id_col = find("id").ok_or_else(|| Error::parse(source, "missing `id` column"))?;
    let period_col = find("period").ok_or_else(|| Error::parse(source, "missing `period` column"))?;
    let count_col = find("count").ok_or_else(|| Error::parse(source, "missing `count` column"))?;
    let exposure_col = find("exposure");
    let fixed = [Some(id_col), Some(period_col), Some(count_col), exposure_col];

    for cat in &schema.categorical {
        if find(&cat.column).is_none() {
            return Err(Error::parse(source, format!("missing categorical column `{}`", cat.column)));
        }
        if !cat.levels.contains(&cat.reference) {
            return Err(Error::Config(format!(
                "reference level `{}` is not among the levels of `{}`",
                cat.reference, cat.column
            )));
        }
    }

    // A file that already carries the intercept column keeps it as is.
    let add_intercept = schema.intercept && find(INTERCEPT).is_none();
    let mut coders = Vec::new();
    let mut covariate_names = Vec::new();
    if add_intercept {
        covariate_names.push(INTERCEPT.to_string());
    }
    for (index, name) in headers.iter().enumerate() {
        if fixed.contains(&Some(index)) {
            continue;
        }
        match schema.categorical.iter().find(|c| c.column == name) {
            Some(spec) => {
                for level in spec.levels.iter().filter(|l| **l != spec.reference) {
                    covariate_names.push(format!("{}:{}", spec.column, level));
                }
                coders.push(ColumnCoder::Dummies {
                    spec: spec.clone(),
                    index,
                });
            }
            None => {
                covariate_names.push(name.to_string());
                coders.push(ColumnCoder::Numeric {
                    name: name.to_string(),
                    index,
                });
            }
        }
    }

    let mut order: Vec<String> = Vec::new();
    let mut grouped: HashMap<String, Vec<Record>> = HashMap::new();
    for (line, row) in csv.records().enumerate() {
        let row = row?;
        let location = format!("{source} record {}", line + 1);
        let field = |i: usize| row.get(i).unwrap_or("");
        let id = field(id_col).to_string();
        if id.is_empty() {
            return Err(Error::parse(location, "empty id"));
        }
        let period: i64 = field(period_col)
            .parse()
            .map_err(|_| Error::parse(&location, format!("period `{}` is not an integer", field(period_col))))?;
        let count = match field(count_col) {
            "" => None,
            s => Some(s.parse::<u64>().map_err(|_| {
                Error::parse(&location, format!("count `{s}` is not a nonnegative integer"))
            })?),
        };
        let exposure = match exposure_col {
            Some(c) => field(c)
                .parse::<f64>()
                .map_err(|_| Error::parse(&location, format!("exposure `{}` is not a number", field(c))))?,
            None => 1.0,
        };
        if !(exposure > 0.0 && exposure.is_finite()) {
            return Err(Error::parse(&location, format!("exposure must be positive, got {exposure}")));
        }
        if let Some(max) = schema.max_exposure {
            if exposure > max {
                return Err(Error::parse(&location, format!("exposure {exposure} exceeds {max}")));
            }
        }
        let mut covariates = Vec::with_capacity(covariate_names.len());
        if add_intercept {
            covariates.push(1.0);
        }
        for coder in &coders {
            match coder {
                ColumnCoder::Numeric { name, index } => {
                    let v: f64 = field(*index).parse().map_err(|_| {
                        Error::parse(&location, format!("covariate `{name}` value `{}` is not a number", field(*index)))
                    })?;
                    if !v.is_finite() {
                        return Err(Error::parse(&location, format!("covariate `{name}` is not finite")));
                    }
                    covariates.push(v);
                }
                ColumnCoder::Dummies { spec, index } => {
                    let value = field(*index);
                    if !spec.levels.iter().any(|l| l == value) {
                        return Err(Error::parse(
                            &location,
                            format!(
                                "unknown level `{value}` for `{}`; valid levels: {}",
                                spec.column,
                                spec.levels.join(", ")
                            ),
                        ));
                    }
                    for level in spec.levels.iter().filter(|l| **l != spec.reference) {
                        covariates.push(if level == value { 1.0 } else { 0.0 });
                    }
                }
            }
        }
        let entry = grouped.entry(id.clone()).or_insert_with(|| {
            order.push(id.clone());
            Vec::new()
        });
        entry.push(Record {
            period,
            count,
            exposure,
            covariates,
        });
    }

    let mut series = Vec::with_capacity(order.len());
    for id in order {
        let mut records = grouped.remove(&id).expect("grouped by id");
        records.sort_by_key(|r| r.period);
        if let Some(w) = records.windows(2).find(|w| w[0].period == w[1].period) {
            return Err(Error::parse(
                source,
                format!("duplicate record for id `{id}` and period {}", w[0].period),
            ));
        }
        series.push(PanelSeries { id, records });
    }
    Ok(Panel {
        covariate_names,
        series,
    })
}

/// Writes `panel` in the CSV layout read by [`load_panel`] with a numeric schema.
pub fn write_panel<W: std::io::Write>(panel: &Panel, writer: W, header: &[String]) -> Result<()> {
    use std::io::Write as _;
    let mut w = std::io::BufWriter::new(writer);
    for line in header {
        writeln!(w, "# {line}")?;
    }
    let mut csv = csv::Writer::from_writer(w);
    let mut names = vec!["id".to_string(), "period".into(), "count".into(), "exposure".into()];
    names.extend(panel.covariate_names.iter().cloned());
    csv.write_record(&names)?;
    for s in &panel.series {
        for r in &s.records {
            let mut fields = vec![
                s.id.clone(),
                r.period.to_string(),
                r.count.map(|c| c.to_string()).unwrap_or_default(),
                r.exposure.to_string(),
            ];
            fields.extend(r.covariates.iter().map(|v| v.to_string()));
            csv.write_record(&fields)?;
        }
    }
    csv.flush()?;
    Ok(())
}

pub fn save_panel(panel: &Panel, path: &Path, header: &[String]) -> Result<()> {
    write_panel(panel, std::fs::File::create(path)?, header)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HoldoutRule {
    /// The last record of every series.
    LastPeriod,
    /// Records carrying this period label; later records are dropped.
    Period(i64),
    /// No holdout; the whole panel trains.
    Disabled,
}

impl std::str::FromStr for HoldoutRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "last" => Ok(HoldoutRule::LastPeriod),
            "none" => Ok(HoldoutRule::Disabled),
            other => other
                .parse()
                .map(HoldoutRule::Period)
                .map_err(|_| Error::Config(format!("holdout rule must be `last`, `none` or a period label, got `{other}`"))),
        }
    }
}

impl std::fmt::Display for HoldoutRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            HoldoutRule::LastPeriod => f.write_str("last"),
            HoldoutRule::Period(p) => write!(f, "{p}"),
            HoldoutRule::Disabled => f.write_str("none"),
        }
    }
}

/// One out-of-sample target: the record following a series' training window.
#[derive(Debug, Clone, PartialEq)]
pub struct HoldoutCase {
    /// Index into the training panel's series.
    pub series: usize,
    pub id: String,
    pub record: Record,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Panel,
    pub holdout: Vec<HoldoutCase>,
    pub warnings: Vec<String>,
}

/// Splits `panel` into a training panel and at most one holdout case per series.
///
/// Series without training records are dropped with a warning. Holdout
/// records with a missing count are kept: they can be forecast but not scored.
pub fn split_panel(panel: &Panel, rule: HoldoutRule) -> Split {
    let mut train = Panel {
        covariate_names: panel.covariate_names.clone(),
        series: Vec::new(),
    };
    let mut holdout = Vec::new();
    let mut warnings = Vec::new();
    for s in &panel.series {
        let (kept, target): (Vec<Record>, Option<Record>) = match rule {
            HoldoutRule::LastPeriod => {
                let (last, rest) = s.records.split_last().expect("series are nonempty");
                (rest.to_vec(), Some(last.clone()))
            }
            HoldoutRule::Period(label) => (
                s.records.iter().filter(|r| r.period < label).cloned().collect(),
                s.records.iter().find(|r| r.period == label).cloned(),
            ),
            HoldoutRule::Disabled => (s.records.clone(), None),
        };
        if kept.is_empty() {
            warnings.push(format!("series `{}` has no training records and is excluded", s.id));
            continue;
        }
        train.series.push(PanelSeries {
            id: s.id.clone(),
            records: kept,
        });
        if let Some(record) = target {
            holdout.push(HoldoutCase {
                series: train.series.len() - 1,
                id: s.id.clone(),
                record,
            });
        }
    }
    Split {
        train,
        holdout,
        warnings,
    }
}

/// Which sample size enters the BIC penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BicSampleSize {
    /// Observed (non-missing) count records.
    Observations,
    Policyholders,
}

impl std::str::FromStr for BicSampleSize {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "observations" => Ok(Self::Observations),
            "policyholders" => Ok(Self::Policyholders),
            other => Err(Error::Config(format!(
                "bic_n must be `observations` or `policyholders`, got `{other}`"
            ))),
        }
    }
}

impl std::fmt::Display for BicSampleSize {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Observations => "observations",
            Self::Policyholders => "policyholders",
        })
    }
}

/// Settings shared by the fitting commands, read from a flat `key = value` file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub regimes: Vec<RegimeKind>,
    pub beta0_grid: Vec<f64>,
    pub p_grid: Vec<f64>,
    pub q_grid: Vec<f64>,
    pub glm_tol: f64,
    pub glm_max_iter: usize,
    pub seed: Option<u64>,
    pub holdout: HoldoutRule,
    pub bic_n: BicSampleSize,
    pub pooled_beta: bool,
    pub schema: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            regimes: vec![
                RegimeKind::Independent,
                RegimeKind::Shared,
                RegimeKind::Increasing,
                RegimeKind::Decreasing,
                RegimeKind::ConstantVariance,
            ],
            beta0_grid: vec![0.25, 1.0, 4.0],
            p_grid: vec![0.3, 0.7, 0.95],
            q_grid: vec![0.3, 0.7, 0.95],
            glm_tol: 1e-8,
            glm_max_iter: 100,
            seed: None,
            holdout: HoldoutRule::LastPeriod,
            bic_n: BicSampleSize::Observations,
            pooled_beta: false,
            schema: "generic".into(),
        }
    }
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    value
        .split(',')
        .map(|v| v.trim())
        .filter(|v| !v.is_empty())
        .map(|v| v.parse().map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`"))))
        .collect()
}

fn parse_scalar<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
        if out.insert(key.trim().to_string(), value.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: duplicate key `{}`", n + 1, key.trim())));
        }
    }
    Ok(out)
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut config = Self::default();
        for (key, value) in parse_key_values(text)? {
            match key.as_str() {
                "regimes" => config.regimes = parse_list(&key, &value)?,
                "beta0_grid" => config.beta0_grid = parse_list(&key, &value)?,
                "p_grid" => config.p_grid = parse_list(&key, &value)?,
                "q_grid" => config.q_grid = parse_list(&key, &value)?,
                "glm_tol" => config.glm_tol = parse_scalar(&key, &value)?,
                "glm_max_iter" => config.glm_max_iter = parse_scalar(&key, &value)?,
                "seed" => config.seed = Some(parse_scalar(&key, &value)?),
                "holdout" => config.holdout = value.parse()?,
                "bic_n" => config.bic_n = value.parse()?,
                "pooled_beta" => config.pooled_beta = parse_scalar(&key, &value)?,
                "schema" => config.schema = value,
                other => return Err(Error::Config(format!("unknown config key `{other}`"))),
            }
        }
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.regimes.is_empty() {
            return Err(Error::Config("at least one regime is required".into()));
        }
        if self.beta0_grid.is_empty() || self.beta0_grid.iter().any(|b| !(*b > 0.0 && b.is_finite())) {
            return Err(Error::Config("beta0_grid must hold positive values".into()));
        }
        if self.p_grid.is_empty() || self.p_grid.iter().any(|p| !(*p > 0.0 && *p < 1.0)) {
            return Err(Error::Config("p_grid values must lie in (0, 1)".into()));
        }
        if self.q_grid.is_empty() || self.q_grid.iter().any(|q| !(*q > 0.0 && *q < 1.0)) {
            return Err(Error::Config("q_grid values must lie in (0, 1)".into()));
        }
        if !(self.glm_tol > 0.0) || self.glm_max_iter == 0 {
            return Err(Error::Config("glm_tol must be positive and glm_max_iter at least 1".into()));
        }
        PanelSchema::by_name(&self.schema)?;
        Ok(())
    }

    /// The resolved settings as `key = value` lines.
    pub fn to_lines(&self) -> Vec<String> {
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        vec![
            format!(
                "regimes = {}",
                self.regimes.iter().map(|k| k.name()).collect::<Vec<_>>().join(",")
            ),
            format!("beta0_grid = {}", join(&self.beta0_grid)),
            format!("p_grid = {}", join(&self.p_grid)),
            format!("q_grid = {}", join(&self.q_grid)),
            format!("glm_tol = {}", self.glm_tol),
            format!("glm_max_iter = {}", self.glm_max_iter),
            format!("seed = {}", self.seed.map(|s| s.to_string()).unwrap_or_else(|| "none".into())),
            format!("holdout = {}", self.holdout),
            format!("bic_n = {}", self.bic_n),
            format!("pooled_beta = {}", self.pooled_beta),
            format!("schema = {}", self.schema),
        ]
    }
}

/// A fitted two-step model as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub regime: RegimeSpec,
    pub covariate_names: Vec<String>,
    pub eta: Vec<f64>,
    pub dispersion: f64,
    pub loglik: f64,
    pub k: usize,
    pub n_obs: usize,
    pub seed: u64,
    pub pooled_beta: bool,
}

impl ModelFile {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let join = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let _ = writeln!(s, "schema_version = {SCHEMA_VERSION}");
        let _ = writeln!(s, "regime = {}", self.regime.kind);
        let _ = writeln!(s, "beta0 = {}", self.regime.beta0);
        let _ = writeln!(s, "p = {}", self.regime.p);
        let _ = writeln!(s, "q = {}", self.regime.q);
        let _ = writeln!(s, "covariates = {}", self.covariate_names.join(","));
        let _ = writeln!(s, "eta = {}", join(&self.eta));
        let _ = writeln!(s, "dispersion = {}", self.dispersion);
        let _ = writeln!(s, "loglik = {}", self.loglik);
        let _ = writeln!(s, "k = {}", self.k);
        let _ = writeln!(s, "n_obs = {}", self.n_obs);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "pooled_beta = {}", self.pooled_beta);
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let kv = parse_key_values(text)?;
        let get = |k: &str| kv.get(k).ok_or_else(|| Error::Config(format!("model file lacks `{k}`")));
        let version: u32 = parse_scalar("schema_version", get("schema_version")?)?;
        if version != SCHEMA_VERSION {
            return Err(Error::Config(format!("unsupported model schema version {version}")));
        }
        let kind: RegimeKind = get("regime")?.parse()?;
        let regime = RegimeSpec::new(
            kind,
            parse_scalar("beta0", get("beta0")?)?,
            parse_scalar("p", get("p")?)?,
            parse_scalar("q", get("q")?)?,
        )?;
        let covariate_names: Vec<String> = get("covariates")?
            .split(',')
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .collect();
        let eta: Vec<f64> = parse_list("eta", get("eta")?)?;
        if eta.len() != covariate_names.len() {
            return Err(Error::Config("model file: `eta` and `covariates` differ in length".into()));
        }
        Ok(Self {
            regime,
            covariate_names,
            eta,
            dispersion: parse_scalar("dispersion", get("dispersion")?)?,
            loglik: parse_scalar("loglik", get("loglik")?)?,
            k: parse_scalar("k", get("k")?)?,
            n_obs: parse_scalar("n_obs", get("n_obs")?)?,
            seed: parse_scalar("seed", get("seed")?)?,
            pooled_beta: parse_scalar("pooled_beta", get("pooled_beta")?)?,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }
}

/// Recipe for a synthetic panel with known parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSpec {
    pub n_series: usize,
    pub horizon: usize,
    pub regime: RegimeSpec,
    /// Intercept first, then one coefficient per standard-normal covariate.
    pub eta: Vec<f64>,
}

/// Simulates a panel: covariates are i.i.d. standard normal per record,
/// exposures are 1, periods run from 1 to `horizon`. Series `i` draws from
/// stream `i` of `seed`.
pub fn synth_panel(spec: &SynthSpec, seed: u64) -> Result<Panel> {
    use rand_distr::{Distribution, StandardNormal};
    if spec.eta.is_empty() {
        return Err(Error::Config("synthetic panel needs at least an intercept coefficient".into()));
    }
    if spec.n_series == 0 || spec.horizon == 0 {
        return Err(Error::Config("synthetic panel needs N >= 1 and T >= 1".into()));
    }
    spec.regime.validate()?;
    let mut covariate_names = vec![INTERCEPT.to_string()];
    covariate_names.extend((1..spec.eta.len()).map(|j| format!("x{j}")));
    let series = (0..spec.n_series)
        .map(|i| {
            let mut rng = stream_rng(seed, i as u64);
            let covariates: Vec<Vec<f64>> = (0..spec.horizon)
                .map(|_| {
                    std::iter::once(1.0)
                        .chain((1..spec.eta.len()).map(|_| StandardNormal.sample(&mut rng)))
                        .collect()
                })
                .collect();
            let lambdas = covariates
                .iter()
                .map(|x| intensity_from(&spec.eta, x, 1.0))
                .collect::<Result<Vec<_>>>()?;
            let path = simulate_path(&spec.regime, &lambdas, &mut rng)?;
            let records = covariates
                .into_iter()
                .zip(path.counts)
                .enumerate()
                .map(|(t, (x, y))| Record {
                    period: t as i64 + 1,
                    count: Some(y),
                    exposure: 1.0,
                    covariates: x,
                })
                .collect();
            Ok(PanelSeries {
                id: format!("s{:05}", i + 1),
                records,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Panel {
        covariate_names,
        series,
    })
}

/// Ground truth of a synthetic panel as `key = value` text.
pub fn synth_truth_text(spec: &SynthSpec, seed: u64) -> String {
    let eta = spec.eta.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
    format!(
        "schema_version = {SCHEMA_VERSION}\nregime = {}\nbeta0 = {}\np = {}\nq = {}\neta = {eta}\nn_series = {}\nhorizon = {}\nseed = {seed}\n",
        spec.regime.kind, spec.regime.beta0, spec.regime.p, spec.regime.q, spec.n_series, spec.horizon
    )
}
