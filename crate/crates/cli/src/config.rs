//! Scenario presets and the merged run configuration.
//!
//! A run starts from a preset, overlays the optional TOML file and then the
//! command-line overrides. The figure presets pin their market, horizon,
//! initial wealth and preference inputs; overriding any of those is an error.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use robust_forward::bsde::SigmaModel;
use robust_forward::market::{MarketConfig, MarketSpec};
use robust_forward::preferences::LambdaSpec;
use robust_forward::verify::Deviation;
use serde::{Deserialize, Serialize};
use toml::{Table, Value};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Fig1,
    Fig2,
    Fig3,
    #[value(name = "drift_only_demo")]
    DriftOnlyDemo,
    Custom,
}

impl Preset {
    pub const FIGURES: [Preset; 3] = [Preset::Fig1, Preset::Fig2, Preset::Fig3];

    pub fn name(self) -> &'static str {
        match self {
            Preset::Fig1 => "fig1",
            Preset::Fig2 => "fig2",
            Preset::Fig3 => "fig3",
            Preset::DriftOnlyDemo => "drift_only_demo",
            Preset::Custom => "custom",
        }
    }

    pub fn is_figure(self) -> bool {
        Self::FIGURES.contains(&self)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    DriftVol,
    DriftOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LambdaConfig {
    Zero,
    /// `rate_base` defaults to `G` (drift/volatility) or `ρ·sup|Y|` (drift only).
    Exponential { alpha: f64, beta: f64, rate_base: Option<f64> },
    Tabulated { path: PathBuf },
}

impl LambdaConfig {
    pub fn build(&self, default_rate: f64) -> Result<LambdaSpec<f64>, CliError> {
        let spec = match self {
            LambdaConfig::Zero => LambdaSpec::Zero,
            LambdaConfig::Exponential { alpha, beta, rate_base } => {
                LambdaSpec::Exponential { alpha: *alpha, beta: *beta, rate_base: rate_base.unwrap_or(default_rate) }
            }
            LambdaConfig::Tabulated { path } => LambdaSpec::from_csv(path)?,
        };
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PreferencesConfig {
    pub mode: Mode,
    pub delta: f64,
    pub x0: f64,
    pub y0: f64,
    pub g0: f64,
    /// Evaluation horizon for preferences, simulation and verification.
    pub horizon: f64,
    pub n_grid: usize,
    /// Probe consumption level for the `Uc_at_C` column.
    pub c_probe: f64,
    pub lambda: LambdaConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SaddleConfig {
    /// Force the numeric solver even in one dimension.
    pub numeric: bool,
    pub tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub dt: f64,
    pub n_paths: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BsdeConfig {
    pub rho: f64,
    /// Truncation horizon.
    pub horizon: f64,
    pub dt: f64,
    pub sigma: SigmaModel,
    pub n_paths: usize,
    pub n_basis: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DeviationConfig {
    None,
    Strategy {
        p: Vec<f64>,
        c: Option<f64>,
    },
    Parameter {
        b: Option<Vec<f64>>,
        /// Volatility matrix, row-major.
        sigma: Option<Vec<Vec<f64>>>,
    },
}

impl DeviationConfig {
    pub fn build(&self) -> Result<Deviation, CliError> {
        Ok(match self {
            DeviationConfig::None => Deviation::None,
            DeviationConfig::Strategy { p, c } => Deviation::Strategy { p: p.clone(), c: *c },
            DeviationConfig::Parameter { b, sigma } => {
                Deviation::Parameter { b: b.clone(), sigma: sigma.as_ref().map(|rows| matrix(rows)).transpose()? }
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    pub n_paths: usize,
    pub dt: f64,
    pub seed: u64,
    pub confidence: f64,
    /// Random deviations per kind in the sign check.
    pub n_random: usize,
    /// Trajectories written to `r_paths.csv`.
    pub n_r_paths: usize,
    pub deviation: DeviationConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub preset: Preset,
    pub market: MarketConfig,
    pub preferences: PreferencesConfig,
    pub saddle: SaddleConfig,
    pub simulation: SimulationConfig,
    pub bsde: BsdeConfig,
    pub verify: VerifyConfig,
}

pub fn matrix(rows: &[Vec<f64>]) -> Result<DMatrix<f64>, CliError> {
    let n = rows.len();
    if n == 0 || rows.iter().any(|r| r.len() != rows[0].len()) {
        return Err(CliError::Config("matrix rows must be non-empty and equally long".into()));
    }
    Ok(DMatrix::from_fn(n, rows[0].len(), |i, j| rows[i][j]))
}

fn figure_market(b: (f64, f64)) -> MarketConfig {
    MarketConfig {
        r: 0.2,
        d: 1,
        b_lo: vec![b.0],
        b_hi: vec![b.1],
        cov_vertices: vec![vec![vec![0.01]], vec![vec![0.25]]],
        p_lo: vec![-0.5],
        p_hi: vec![1.5],
    }
}

impl Config {
    pub fn preset(preset: Preset) -> Self {
        let market = match preset {
            Preset::Fig1 => figure_market((0.1, 0.5)),
            Preset::Fig3 => figure_market((-0.1, 0.1)),
            Preset::Fig2 | Preset::Custom => figure_market((0.3, 0.8)),
            Preset::DriftOnlyDemo => MarketConfig { cov_vertices: vec![vec![vec![0.25]]], ..figure_market((0.3, 0.8)) },
        };
        let mode = if preset == Preset::DriftOnlyDemo { Mode::DriftOnly } else { Mode::DriftVol };
        Config {
            preset,
            market,
            preferences: PreferencesConfig {
                mode,
                delta: 0.5,
                x0: 50.0,
                y0: 0.0,
                g0: 0.0,
                horizon: 3.0,
                n_grid: 300,
                c_probe: 1.0,
                lambda: LambdaConfig::Zero,
            },
            saddle: SaddleConfig { numeric: false, tol: 1e-10, max_iter: 5000 },
            simulation: SimulationConfig { dt: 0.01, n_paths: 2, seed: 2024 },
            bsde: BsdeConfig {
                rho: 0.1,
                horizon: 50.0,
                dt: 0.01,
                sigma: SigmaModel::Constant { sigma: DMatrix::from_element(1, 1, 0.5) },
                n_paths: 100_000,
                n_basis: 4,
                seed: 7,
            },
            verify: VerifyConfig {
                n_paths: 100_000,
                dt: 1e-3,
                seed: 11,
                confidence: 0.99,
                n_random: 1000,
                n_r_paths: 4,
                deviation: DeviationConfig::None,
            },
        }
    }

    /// Preset, then `file`, then `overrides` (dotted keys such as
    /// `bsde.rho`). Figure presets reject changes to their locked fields.
    pub fn resolve(preset: Option<Preset>, file: Option<&Path>, overrides: &[(String, Value)]) -> Result<Self, CliError> {
        let mut user = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
                text.parse::<Table>().map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?
            }
            None => Table::new(),
        };
        for (key, value) in overrides {
            set_dotted(&mut user, key, value.clone())?;
        }
        let preset = match (preset, user.remove("preset")) {
            (Some(p), _) => p,
            (None, Some(v)) => v.try_into().map_err(|e| CliError::Config(format!("preset: {e}")))?,
            (None, None) => Preset::Custom,
        };
        let base = Config::preset(preset);
        let mut merged = Table::try_from(&base).map_err(|e| CliError::Config(e.to_string()))?;
        merge(&mut merged, user);
        let cfg: Config = Value::Table(merged).try_into().map_err(|e| CliError::Config(e.to_string()))?;
        if preset.is_figure() {
            cfg.check_locked(&base)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn check_locked(&self, base: &Config) -> Result<(), CliError> {
        let (a, b) = (&self.preferences, &base.preferences);
        let locked = [
            ("market", self.market != base.market),
            ("preferences.mode", a.mode != b.mode),
            ("preferences.delta", a.delta != b.delta),
            ("preferences.x0", a.x0 != b.x0),
            ("preferences.y0", a.y0 != b.y0),
            ("preferences.horizon", a.horizon != b.horizon),
            ("preferences.lambda", a.lambda != b.lambda),
        ];
        match locked.iter().find(|(_, changed)| *changed) {
            Some((field, _)) => Err(CliError::Config(format!(
                "preset {} locks `{field}`; use preset = \"custom\" to change it",
                self.preset.name()
            ))),
            None => Ok(()),
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        self.market_spec()?;
        let p = &self.preferences;
        if !(p.delta > 0.0 && p.delta < 1.0) {
            return Err(CliError::Config(format!("preferences.delta must lie in (0,1), got {}", p.delta)));
        }
        if !(p.x0 > 0.0 && p.horizon > 0.0) || p.n_grid == 0 {
            return Err(CliError::Config("preferences: x0 and horizon must be positive, n_grid >= 1".into()));
        }
        if ![self.simulation.dt, self.verify.dt, self.bsde.dt].iter().all(|dt| *dt > 0.0) {
            return Err(CliError::Config("time steps must be positive".into()));
        }
        Ok(())
    }

    pub fn market_spec(&self) -> Result<MarketSpec<f64>, CliError> {
        Ok(MarketSpec::from_config(&self.market)?)
    }

    pub fn to_toml(&self) -> Result<String, CliError> {
        toml::to_string(self).map_err(|e| CliError::Config(e.to_string()))
    }
}

/// Deep merge; a table carrying its own `kind` tag replaces the old variant.
fn merge(base: &mut Table, over: Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(Value::Table(b)), Value::Table(o)) if !o.contains_key("kind") => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn set_dotted(root: &mut Table, key: &str, value: Value) -> Result<(), CliError> {
    let parts: Vec<&str> = key.split('.').collect();
    let mut table = root;
    for part in &parts[..parts.len() - 1] {
        let entry = table.entry(part.to_string()).or_insert_with(|| Value::Table(Table::new()));
        table = entry.as_table_mut().ok_or_else(|| CliError::Config(format!("`{part}` in `{key}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Parses the right-hand side of `key=value` as a TOML value, falling back
/// to a plain string.
pub fn parse_override(s: &str) -> Result<(String, Value), CliError> {
    let (key, raw) = s.split_once('=').ok_or_else(|| CliError::Config(format!("expected key=value, got `{s}`")))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(CliError::Config(format!("empty key in `{s}`")));
    }
    let value = format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.trim().to_string()));
    Ok((key.to_string(), value))
}
