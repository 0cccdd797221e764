//! Command-line front end: presets, configuration and the file outputs of
//! each subcommand.

pub mod commands;
pub mod config;
pub mod error;

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

pub use commands::Outcome;
pub use config::{Config, Preset};
pub use error::CliError;

#[derive(Debug, Parser)]
#[command(name = "robust-forward", version, about = "Robust forward investment and consumption preferences")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Scenario preset (overrides `preset` in the config file).
    #[arg(long, global = true, value_enum)]
    pub preset: Option<Preset>,
    /// Override a config value, e.g. `--set bsde.rho=0.2`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Print the result as JSON on stdout.
    #[arg(long, global = true)]
    pub json: bool,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Print the merged configuration as TOML and exit.
    #[arg(long, global = true)]
    pub dump_effective_config: bool,
}

/// Comma-separated numbers.
#[derive(Debug, Clone, PartialEq)]
pub struct List(pub Vec<f64>);

/// Rows separated by `;`, entries by `,`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix(pub Vec<Vec<f64>>);

fn parse_numbers(s: &str) -> Result<Vec<f64>, String> {
    s.split(',').map(|x| x.trim().parse::<f64>().map_err(|e| format!("`{x}`: {e}"))).collect()
}

fn parse_list(s: &str) -> Result<List, String> {
    parse_numbers(s).map(List)
}

fn parse_matrix(s: &str) -> Result<Matrix, String> {
    s.split(';').map(parse_numbers).collect::<Result<_, _>>().map(Matrix)
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Saddle point of G (drift and volatility uncertainty).
    SaddleG {
        /// Use the numeric solver even in one dimension.
        #[arg(long)]
        numeric: bool,
    },
    /// Saddle point of H (drift uncertainty, known volatility).
    SaddleH {
        #[arg(long, default_value_t = 0.0)]
        t: f64,
        /// Volatility matrix, rows separated by `;` (default: bsde.sigma at t).
        #[arg(long, value_parser = parse_matrix)]
        sigma: Option<Matrix>,
        #[arg(long, value_parser = parse_list)]
        z: Option<List>,
    },
    /// Closed-form preference ODE solutions and condition check.
    Ode,
    /// Infinite-horizon BSDE by truncation.
    Bsde {
        #[arg(long)]
        rho: Option<f64>,
        #[arg(long)]
        horizon: Option<f64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        n_paths: Option<usize>,
        #[arg(long)]
        n_basis: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Wealth paths under the saddle strategy.
    Simulate {
        #[arg(long)]
        n_paths: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        dt: Option<f64>,
    },
    /// Martingale checks of the criterion process.
    Verify {
        /// Strategy deviation: investment proportions.
        #[arg(long, value_parser = parse_list, conflicts_with_all = ["b", "sigma"])]
        p: Option<List>,
        /// Strategy deviation: consumption rate.
        #[arg(long, conflicts_with_all = ["b", "sigma"])]
        c: Option<f64>,
        /// Parameter deviation: drift.
        #[arg(long, value_parser = parse_list)]
        b: Option<List>,
        /// Parameter deviation: volatility matrix.
        #[arg(long, value_parser = parse_matrix)]
        sigma: Option<Matrix>,
        #[arg(long)]
        n_paths: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        dt: Option<f64>,
        #[arg(long)]
        confidence: Option<f64>,
    },
    /// Saddle points, preferences and two sample paths for fig1–fig3.
    ReproduceFigures {
        #[arg(long, value_enum)]
        only: Vec<Preset>,
    },
    /// BSDE → condition 2 → g → preferences → verification.
    PipelineDriftOnly,
}

fn toml_f64(x: f64) -> toml::Value {
    toml::Value::Float(x)
}

fn toml_int(x: u64) -> Result<toml::Value, CliError> {
    i64::try_from(x).map(toml::Value::Integer).map_err(|_| CliError::Config(format!("{x} is too large")))
}

fn toml_list(xs: &[f64]) -> toml::Value {
    toml::Value::Array(xs.iter().map(|&x| toml_f64(x)).collect())
}

fn toml_matrix(m: &[Vec<f64>]) -> toml::Value {
    toml::Value::Array(m.iter().map(|r| toml_list(r)).collect())
}

impl Command {
    /// Subcommand flags as dotted config overrides.
    fn overrides(&self) -> Result<Vec<(String, toml::Value)>, CliError> {
        let mut o: Vec<(String, toml::Value)> = Vec::new();
        let mut f = |k: &str, v: Option<f64>| {
            if let Some(v) = v {
                o.push((k.into(), toml_f64(v)));
            }
        };
        match self {
            Command::SaddleG { numeric } => {
                if *numeric {
                    o.push(("saddle.numeric".into(), toml::Value::Boolean(true)));
                }
            }
            Command::Bsde { rho, horizon, dt, n_paths, n_basis, seed } => {
                f("bsde.rho", *rho);
                f("bsde.horizon", *horizon);
                f("bsde.dt", *dt);
                for (k, v) in [("bsde.n_paths", n_paths.map(|x| x as u64)), ("bsde.n_basis", n_basis.map(|x| x as u64)), ("bsde.seed", *seed)] {
                    if let Some(v) = v {
                        o.push((k.into(), toml_int(v)?));
                    }
                }
            }
            Command::Simulate { n_paths, seed, dt } => {
                f("simulation.dt", *dt);
                for (k, v) in [("simulation.n_paths", n_paths.map(|x| x as u64)), ("simulation.seed", *seed)] {
                    if let Some(v) = v {
                        o.push((k.into(), toml_int(v)?));
                    }
                }
            }
            Command::Verify { p, c, b, sigma, n_paths, seed, dt, confidence } => {
                f("verify.dt", *dt);
                f("verify.confidence", *confidence);
                for (k, v) in [("verify.n_paths", n_paths.map(|x| x as u64)), ("verify.seed", *seed)] {
                    if let Some(v) = v {
                        o.push((k.into(), toml_int(v)?));
                    }
                }
                let mut dev = toml::Table::new();
                if p.is_some() || c.is_some() {
                    dev.insert("kind".into(), "strategy".into());
                    let p = p.as_ref().ok_or_else(|| CliError::Config("--c needs --p".into()))?;
                    dev.insert("p".into(), toml_list(&p.0));
                    if let Some(c) = c {
                        dev.insert("c".into(), toml_f64(*c));
                    }
                } else if b.is_some() || sigma.is_some() {
                    dev.insert("kind".into(), "parameter".into());
                    if let Some(b) = b {
                        dev.insert("b".into(), toml_list(&b.0));
                    }
                    if let Some(s) = sigma {
                        dev.insert("sigma".into(), toml_matrix(&s.0));
                    }
                }
                if !dev.is_empty() {
                    o.push(("verify.deviation".into(), toml::Value::Table(dev)));
                }
            }
            Command::SaddleH { .. } | Command::Ode | Command::ReproduceFigures { .. } | Command::PipelineDriftOnly => {}
        }
        Ok(o)
    }
}

/// Runs one parsed invocation; returns what to print on stdout.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    let g = &cli.global;
    let mut overrides = g.set.iter().map(|s| config::parse_override(s)).collect::<Result<Vec<_>, _>>()?;
    overrides.extend(cli.command.overrides()?);
    let file = g.config.as_deref();
    let default_out = PathBuf::from("out");
    let out = g.out.as_deref().unwrap_or(&default_out);

    if let Command::ReproduceFigures { only } = &cli.command {
        if g.dump_effective_config {
            let wanted = if only.is_empty() { Preset::FIGURES.to_vec() } else { only.clone() };
            let mut text = String::new();
            for p in wanted {
                text.push_str(&format!("# {}\n{}\n", p.name(), Config::resolve(Some(p), file, &overrides)?.to_toml()?));
            }
            return Ok(text);
        }
        return render(commands::reproduce_figures(file, &overrides, only, out)?, g.json);
    }

    let cfg = Config::resolve(g.preset, file, &overrides)?;
    if g.dump_effective_config {
        return cfg.to_toml();
    }
    let outcome = match &cli.command {
        Command::SaddleG { .. } => commands::saddle_g(&cfg, g.out.as_deref())?,
        Command::SaddleH { t, sigma, z } => {
            commands::saddle_h(&cfg, *t, sigma.clone().map(|m| m.0), z.clone().map(|l| l.0), g.out.as_deref())?
        },
        Command::Ode => commands::ode(&cfg, out)?,
        Command::Bsde { .. } => commands::bsde(&cfg, out)?,
        Command::Simulate { .. } => commands::simulate(&cfg, out)?,
        Command::Verify { .. } => commands::verify(&cfg, out)?,
        Command::PipelineDriftOnly => commands::pipeline_drift_only(&cfg, out)?,
        Command::ReproduceFigures { .. } => unreachable!("handled above"),
    };
    render(outcome, g.json)
}

fn render(outcome: Outcome, json: bool) -> Result<String, CliError> {
    if json {
        return Ok(serde_json::to_string_pretty(&outcome.json)?);
    }
    let mut text = outcome.text;
    for f in &outcome.files {
        text.push_str(&format!("\nwrote {}", display(f)));
    }
    Ok(text)
}

fn display(p: &Path) -> String {
    p.display().to_string()
}
