//! Command-line front end.
//!
//! Every subcommand evaluates one quantity on a grid and writes a table (CSV
//! by default) together with a `<output>.meta.json` sidecar. The sidecar holds
//! the resolved configuration, so `polarikit replay <sidecar>` repeats a run.
//!
//! Settings are resolved in this order: command-line flag, then config file
//! (`--config`, flat `key = value` lines, `#` comments), then built-in
//! defaults. The defaults are rubidium-87 on the D2 line at ñ = 0.05.
//!
//! Exit codes: 0 on success, 1 on numeric failure (the diagnostic goes to the
//! sidecar), and 2 on usage or configuration errors.

use std::ffi::OsString;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use nalgebra::Vector3;
use num_complex::Complex64;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tempfile::NamedTempFile;
use thiserror::Error;

use crate::condensate::{CondensateProfile, FORM_FACTOR_REL_TOL};
use crate::dielectric::permittivity;
use crate::params::{
    build_model, AtomSpec, EpsilonMode, ModelOptions, ModelParams, ParamsError, PhotonTerm, ATOMIC_MASS_UNIT,
    DEFAULT_LIGHT_CONE_REG, RB87_D2_LINEWIDTH_HZ, RB87_D2_WAVELENGTH, RB87_MASS_U,
};
use crate::propagator::Component;
use crate::scattering::{
    differential_cross_section, extinction_cross_section, integrated_elastic, to_si_area, AngularGrid,
    ScatteringGeometry, Target,
};
use crate::spectra::{
    default_seed, sweep_surface, trace_samples, BranchLabel, Cell, PoleOptions, TraceOptions, DEFAULT_CELL_BUDGET,
    DEFAULT_MAX_ITER, DEFAULT_POLE_TOL,
};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "POLARIKIT_THREADS";

const TOOL: &str = "polarikit";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Usage(#[from] clap::Error),
    #[error("{key}: {message}")]
    Config { key: String, message: String },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl CliError {
    fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        CliError::Config { key: key.into(), message: message.into() }
    }

    fn io(path: &Path, err: impl std::fmt::Display) -> Self {
        CliError::Io { path: path.to_path_buf(), message: err.to_string() }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(err) => err.exit_code(),
            CliError::Config { .. } | CliError::Io { .. } => 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunCommand {
    Epsilon,
    Sweep,
    Dispersion,
    Xsec,
    Diffxsec,
    Formfactor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TargetKind {
    #[default]
    SingleAtom,
    ThomasFermi,
}

/// Evenly spaced samples from `min` to `max`, both included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Axis {
    pub const fn new(min: f64, max: f64, count: usize) -> Self {
        Self { min, max, count }
    }

    pub fn values(&self) -> Vec<f64> {
        if self.count == 1 {
            return vec![self.min];
        }
        let last = self.count - 1;
        (0..self.count)
            .map(|i| if i == last { self.max } else { self.min + (self.max - self.min) * (i as f64 / last as f64) })
            .collect()
    }

    fn validate(&self, name: &str) -> Result<(), CliError> {
        if !(self.min.is_finite() && self.max.is_finite()) {
            return Err(CliError::config(format!("--{name}-min/--{name}-max"), "bounds must be finite"));
        }
        if self.count == 0 {
            return Err(CliError::config(format!("--{name}-count"), "must be at least 1"));
        }
        if self.min > self.max {
            return Err(CliError::config(
                format!("--{name}-min"),
                format!("{} exceeds --{name}-max {}", self.min, self.max),
            ));
        }
        if self.count > 1 && self.min == self.max {
            return Err(CliError::config(format!("--{name}-count"), "several samples need min < max"));
        }
        Ok(())
    }
}

/// Physical inputs of the model in laboratory units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelInputs {
    /// ñ = n₀(λ₀/2π)³.
    pub density: f64,
    pub wavelength_nm: f64,
    /// γ/2π in MHz.
    pub linewidth_mhz: f64,
    pub mass_u: f64,
    pub light_cone_reg: f64,
    pub epsilon_mode: EpsilonMode,
    pub photon_term: PhotonTerm,
}

impl Default for ModelInputs {
    fn default() -> Self {
        Self {
            density: 0.05,
            wavelength_nm: RB87_D2_WAVELENGTH * 1e9,
            linewidth_mhz: RB87_D2_LINEWIDTH_HZ / 1e6,
            mass_u: RB87_MASS_U,
            light_cone_reg: DEFAULT_LIGHT_CONE_REG,
            epsilon_mode: EpsilonMode::Full,
            photon_term: PhotonTerm::Exact,
        }
    }
}

impl ModelInputs {
    pub fn atom(&self) -> AtomSpec {
        AtomSpec {
            wavelength: self.wavelength_nm * 1e-9,
            linewidth: 2.0 * std::f64::consts::PI * self.linewidth_mhz * 1e6,
            mass: self.mass_u * ATOMIC_MASS_UNIT,
        }
    }

    pub fn build(&self) -> Result<ModelParams, ParamsError> {
        let options = ModelOptions {
            light_cone_reg: self.light_cone_reg,
            epsilon_mode: self.epsilon_mode,
            photon_term: self.photon_term,
        };
        build_model(&self.atom(), self.density, options)
    }

    fn validate(&self) -> Result<ModelParams, CliError> {
        let checks = [
            ("--density", self.density, true),
            ("--wavelength-nm", self.wavelength_nm, false),
            ("--linewidth-mhz", self.linewidth_mhz, false),
            ("--mass-u", self.mass_u, false),
            ("--light-cone-reg", self.light_cone_reg, true),
        ];
        for (key, value, zero_ok) in checks {
            let ok = value.is_finite() && (value > 0.0 || (zero_ok && value == 0.0));
            if !ok {
                let bound = if zero_ok { "non-negative" } else { "positive" };
                return Err(CliError::config(key, format!("must be finite and {bound}, got {value}")));
            }
        }
        self.build().map_err(|err| CliError::config("model", err.to_string()))
    }
}

/// A fully resolved run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub command: RunCommand,
    pub model: ModelInputs,
    pub component: Component,
    pub delta: Axis,
    pub kappa: Axis,
    /// Polar scattering angle (rad).
    pub theta: Axis,
    /// Momentum transfer in units of k₀.
    pub q: Axis,
    /// Detuning of the differential cross section.
    pub detuning: f64,
    /// Azimuth of the scattering plane (rad), measured from the incoming polarization.
    pub phi: f64,
    pub branch: BranchLabel,
    pub seed: Option<Complex64>,
    pub pole_tol: f64,
    pub max_iter: usize,
    pub target: TargetKind,
    pub atom_count: f64,
    /// Thomas-Fermi radius in units of 1/k₀.
    pub tf_radius: f64,
    pub output: PathBuf,
    pub format: OutputFormat,
}

/// Grid defaults per subcommand, matching the axes each one uses.
fn default_axes(command: RunCommand) -> (Axis, Axis) {
    match command {
        RunCommand::Epsilon | RunCommand::Xsec => (Axis::new(-10.0, 10.0, 201), Axis::new(0.0, 0.0, 1)),
        RunCommand::Sweep => (Axis::new(-5.0, 5.0, 200), Axis::new(-5.0, 5.0, 200)),
        RunCommand::Dispersion => (Axis::new(0.0, 0.0, 1), Axis::new(-10.0, 10.0, 201)),
        RunCommand::Diffxsec | RunCommand::Formfactor => (Axis::new(0.0, 0.0, 1), Axis::new(0.0, 0.0, 1)),
    }
}

impl RunConfig {
    /// Checks every invariant and returns the model it describes.
    pub fn validate(&self) -> Result<ModelParams, CliError> {
        let params = self.model.validate()?;
        self.delta.validate("delta")?;
        self.kappa.validate("kappa")?;
        self.theta.validate("theta")?;
        self.q.validate("q")?;
        if self.command == RunCommand::Sweep {
            let cells = self.delta.count.saturating_mul(self.kappa.count);
            if cells > DEFAULT_CELL_BUDGET {
                return Err(CliError::config(
                    "--delta-count/--kappa-count",
                    format!("{cells} cells exceed the budget of {DEFAULT_CELL_BUDGET}"),
                ));
            }
        }
        for (key, value) in [("--detuning", self.detuning), ("--phi", self.phi)] {
            if !value.is_finite() {
                return Err(CliError::config(key, format!("must be finite, got {value}")));
            }
        }
        if let Some(seed) = self.seed {
            if !seed.is_finite() {
                return Err(CliError::config("--seed-re/--seed-im", "seed must be finite"));
            }
        }
        if !(self.pole_tol.is_finite() && self.pole_tol > 0.0) {
            return Err(CliError::config("--pole-tol", format!("must be finite and positive, got {}", self.pole_tol)));
        }
        if self.max_iter == 0 {
            return Err(CliError::config("--max-iter", "must be at least 1"));
        }
        let needs_profile = self.command == RunCommand::Formfactor || self.target == TargetKind::ThomasFermi;
        if needs_profile {
            CondensateProfile::thomas_fermi(self.atom_count, self.tf_radius)
                .map_err(|err| CliError::config("--atom-count/--tf-radius", err.to_string()))?;
        }
        if self.output.as_os_str().is_empty() {
            return Err(CliError::config("--output", "must not be empty"));
        }
        Ok(params)
    }

    fn scattering_target(&self) -> Target {
        match self.target {
            TargetKind::SingleAtom => Target::SingleAtom,
            TargetKind::ThomasFermi => Target::Condensate(self.profile()),
        }
    }

    fn profile(&self) -> CondensateProfile {
        CondensateProfile::ThomasFermi { atom_count: self.atom_count, tf_radius: self.tf_radius }
    }

    /// Path of the JSON sidecar, `<output>.meta.json`.
    pub fn sidecar_path(&self) -> PathBuf {
        sidecar_for(&self.output)
    }
}

pub fn sidecar_for(output: &Path) -> PathBuf {
    let mut name = output.file_name().map(OsString::from).unwrap_or_default();
    name.push(".meta.json");
    output.with_file_name(name)
}

fn parse_enum<T: DeserializeOwned>(text: &str) -> Result<T, String> {
    let name = text.trim().to_ascii_lowercase().replace('-', "_");
    serde_json::from_value(serde_json::Value::String(name)).map_err(|err| err.to_string())
}

#[derive(Debug, Clone, Default, Args)]
pub struct RunArgs {
    /// Flat `key = value` file; its keys are the long flag names.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Dimensionless density n₀(λ₀/2π)³ [default: 0.05]
    #[arg(long, allow_hyphen_values = true)]
    pub density: Option<f64>,
    /// Resonance wavelength λ₀ in nm [default: 780]
    #[arg(long, allow_hyphen_values = true)]
    pub wavelength_nm: Option<f64>,
    /// Natural linewidth γ/2π in MHz [default: 6.0666]
    #[arg(long, allow_hyphen_values = true)]
    pub linewidth_mhz: Option<f64>,
    /// Atomic mass in u [default: 86.909180527]
    #[arg(long, allow_hyphen_values = true)]
    pub mass_u: Option<f64>,
    /// Light-cone regularizer η in units of γ [default: 1e-6]
    #[arg(long, allow_hyphen_values = true)]
    pub light_cone_reg: Option<f64>,
    /// full | unity [default: full]
    #[arg(long, value_parser = parse_enum::<EpsilonMode>)]
    pub epsilon_mode: Option<EpsilonMode>,
    /// exact | near-cone | static | off [default: exact]
    #[arg(long, value_parser = parse_enum::<PhotonTerm>)]
    pub photon_term: Option<PhotonTerm>,
    /// transverse | longitudinal [default: transverse]
    #[arg(long, value_parser = parse_enum::<Component>)]
    pub component: Option<Component>,
    #[arg(long, allow_hyphen_values = true)]
    pub delta_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub delta_max: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub delta_count: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub kappa_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub kappa_max: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub kappa_count: Option<usize>,
    /// Polar angle range in rad [default: 0 to π, 181 samples]
    #[arg(long, allow_hyphen_values = true)]
    pub theta_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub theta_max: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub theta_count: Option<usize>,
    /// Momentum transfer in units of k₀ [default: 0 to 1, 201 samples]
    #[arg(long, allow_hyphen_values = true)]
    pub q_min: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub q_max: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub q_count: Option<usize>,
    /// Detuning of the differential cross section [default: 0]
    #[arg(long, allow_hyphen_values = true)]
    pub detuning: Option<f64>,
    /// Scattering-plane azimuth in rad [default: 0]
    #[arg(long, allow_hyphen_values = true)]
    pub phi: Option<f64>,
    /// atom-like | photon-like [default: atom-like]
    #[arg(long, value_parser = parse_enum::<BranchLabel>)]
    pub branch: Option<BranchLabel>,
    /// Real part of the initial pole guess
    #[arg(long, allow_hyphen_values = true)]
    pub seed_re: Option<f64>,
    /// Imaginary part of the initial pole guess
    #[arg(long, allow_hyphen_values = true)]
    pub seed_im: Option<f64>,
    /// Residual tolerance |D(δ*)| of the pole finder [default: 1e-10]
    #[arg(long, allow_hyphen_values = true)]
    pub pole_tol: Option<f64>,
    /// Iteration cap of the pole finder [default: 100]
    #[arg(long, allow_hyphen_values = true)]
    pub max_iter: Option<usize>,
    /// single-atom | thomas-fermi [default: single-atom]
    #[arg(long, value_parser = parse_enum::<TargetKind>)]
    pub target: Option<TargetKind>,
    /// Thomas-Fermi atom number [default: 1e4]
    #[arg(long, allow_hyphen_values = true)]
    pub atom_count: Option<f64>,
    /// Thomas-Fermi radius in units of 1/k₀ [default: 20]
    #[arg(long, allow_hyphen_values = true)]
    pub tf_radius: Option<f64>,
    /// Output data file
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// csv | json [default: csv]
    #[arg(long, value_parser = parse_enum::<OutputFormat>)]
    pub format: Option<OutputFormat>,
}

impl RunArgs {
    /// Field-wise `self` if set, otherwise `fallback`.
    fn or(self, fallback: RunArgs) -> RunArgs {
        RunArgs {
            config: self.config.or(fallback.config),
            density: self.density.or(fallback.density),
            wavelength_nm: self.wavelength_nm.or(fallback.wavelength_nm),
            linewidth_mhz: self.linewidth_mhz.or(fallback.linewidth_mhz),
            mass_u: self.mass_u.or(fallback.mass_u),
            light_cone_reg: self.light_cone_reg.or(fallback.light_cone_reg),
            epsilon_mode: self.epsilon_mode.or(fallback.epsilon_mode),
            photon_term: self.photon_term.or(fallback.photon_term),
            component: self.component.or(fallback.component),
            delta_min: self.delta_min.or(fallback.delta_min),
            delta_max: self.delta_max.or(fallback.delta_max),
            delta_count: self.delta_count.or(fallback.delta_count),
            kappa_min: self.kappa_min.or(fallback.kappa_min),
            kappa_max: self.kappa_max.or(fallback.kappa_max),
            kappa_count: self.kappa_count.or(fallback.kappa_count),
            theta_min: self.theta_min.or(fallback.theta_min),
            theta_max: self.theta_max.or(fallback.theta_max),
            theta_count: self.theta_count.or(fallback.theta_count),
            q_min: self.q_min.or(fallback.q_min),
            q_max: self.q_max.or(fallback.q_max),
            q_count: self.q_count.or(fallback.q_count),
            detuning: self.detuning.or(fallback.detuning),
            phi: self.phi.or(fallback.phi),
            branch: self.branch.or(fallback.branch),
            seed_re: self.seed_re.or(fallback.seed_re),
            seed_im: self.seed_im.or(fallback.seed_im),
            pole_tol: self.pole_tol.or(fallback.pole_tol),
            max_iter: self.max_iter.or(fallback.max_iter),
            target: self.target.or(fallback.target),
            atom_count: self.atom_count.or(fallback.atom_count),
            tf_radius: self.tf_radius.or(fallback.tf_radius),
            output: self.output.or(fallback.output),
            format: self.format.or(fallback.format),
        }
    }

    /// Fills the remaining gaps with defaults.
    pub fn resolve(self, command: RunCommand) -> Result<RunConfig, CliError> {
        let model_defaults = ModelInputs::default();
        let (delta, kappa) = default_axes(command);
        let seed = match (self.seed_re, self.seed_im) {
            (None, None) => None,
            (re, im) => Some(Complex64::new(re.unwrap_or(0.0), im.unwrap_or(-0.5))),
        };
        let output = self.output.ok_or_else(|| CliError::config("--output", "an output path is required"))?;
        Ok(RunConfig {
            command,
            model: ModelInputs {
                density: self.density.unwrap_or(model_defaults.density),
                wavelength_nm: self.wavelength_nm.unwrap_or(model_defaults.wavelength_nm),
                linewidth_mhz: self.linewidth_mhz.unwrap_or(model_defaults.linewidth_mhz),
                mass_u: self.mass_u.unwrap_or(model_defaults.mass_u),
                light_cone_reg: self.light_cone_reg.unwrap_or(model_defaults.light_cone_reg),
                epsilon_mode: self.epsilon_mode.unwrap_or(model_defaults.epsilon_mode),
                photon_term: self.photon_term.unwrap_or(model_defaults.photon_term),
            },
            component: self.component.unwrap_or(Component::Transverse),
            delta: Axis::new(
                self.delta_min.unwrap_or(delta.min),
                self.delta_max.unwrap_or(delta.max),
                self.delta_count.unwrap_or(delta.count),
            ),
            kappa: Axis::new(
                self.kappa_min.unwrap_or(kappa.min),
                self.kappa_max.unwrap_or(kappa.max),
                self.kappa_count.unwrap_or(kappa.count),
            ),
            theta: Axis::new(
                self.theta_min.unwrap_or(0.0),
                self.theta_max.unwrap_or(std::f64::consts::PI),
                self.theta_count.unwrap_or(181),
            ),
            q: Axis::new(self.q_min.unwrap_or(0.0), self.q_max.unwrap_or(1.0), self.q_count.unwrap_or(201)),
            detuning: self.detuning.unwrap_or(0.0),
            phi: self.phi.unwrap_or(0.0),
            branch: self.branch.unwrap_or(BranchLabel::AtomLike),
            seed,
            pole_tol: self.pole_tol.unwrap_or(DEFAULT_POLE_TOL),
            max_iter: self.max_iter.unwrap_or(DEFAULT_MAX_ITER),
            target: self.target.unwrap_or_default(),
            atom_count: self.atom_count.unwrap_or(1.0e4),
            tf_radius: self.tf_radius.unwrap_or(20.0),
            output,
            format: self.format.unwrap_or_default(),
        })
    }
}

#[derive(Debug, Clone, Args)]
pub struct ReplayArgs {
    /// Sidecar JSON written by an earlier run
    pub sidecar: PathBuf,
    /// Write to this path instead of the recorded one
    #[arg(long, short)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, Subcommand)]
enum CliCommand {
    /// Lorentz-Lorentz permittivity ε(δ) and its root √ε
    Epsilon(RunArgs),
    /// Propagator surface γG(δ, κ) of one component
    Sweep(RunArgs),
    /// Complex pole δ*(κ) traced along κ
    Dispersion(RunArgs),
    /// Per-atom extinction and integrated elastic cross sections versus δ
    Xsec(RunArgs),
    /// Differential elastic cross section versus scattering angle
    Diffxsec(RunArgs),
    /// Thomas-Fermi density form factor F(q)
    Formfactor(RunArgs),
    /// Repeat the run recorded in a sidecar file
    Replay(ReplayArgs),
}

#[derive(Debug, Parser)]
#[command(
    name = TOOL,
    version,
    about = "Polariton propagators, permittivity and light scattering of a Bose-Einstein condensate",
    arg_required_else_help = true,
    after_help = "Environment: POLARIKIT_THREADS caps the number of worker threads."
)]
struct Cli {
    #[command(subcommand)]
    command: CliCommand,
}

/// Parser used for config files: the same flags without a subcommand.
#[derive(Debug, Parser)]
#[command(name = "config", no_binary_name = true, disable_help_flag = true, disable_version_flag = true)]
struct FileArgs {
    #[command(flatten)]
    args: RunArgs,
}

/// Reads a flat `key = value` config file into flag values.
pub fn read_config_file(path: &Path) -> Result<RunArgs, CliError> {
    let text = std::fs::read_to_string(path).map_err(|err| CliError::io(path, err))?;
    let command = FileArgs::command();
    let known: Vec<String> = command
        .get_arguments()
        .filter_map(|a| a.get_long().map(str::to_owned))
        .filter(|long| long != "config")
        .collect();
    let mut tokens: Vec<String> = Vec::new();
    for (number, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let location = format!("{} line {}", path.display(), number + 1);
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::config(location.clone(), format!("expected `key = value`, got `{line}`")))?;
        let key = key.trim().replace('_', "-");
        if !known.contains(&key) {
            return Err(CliError::config(format!("{location}: {key}"), "unknown key"));
        }
        let value = value.trim().trim_matches('"');
        tokens.push(format!("--{key}={value}"));
    }
    let matches = command
        .try_get_matches_from(tokens)
        .map_err(|err| CliError::config(path.display().to_string(), err.render().to_string().trim().to_owned()))?;
    Ok(FileArgs::from_arg_matches(&matches)?.args)
}

/// What a successful parse asks for.
#[derive(Debug, Clone, PartialEq)]
pub struct Invocation {
    pub config: RunConfig,
}

/// Parses argv (including the program name) and merges the optional config file.
pub fn parse_config<I, T>(argv: I) -> Result<Invocation, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv)?;
    let (command, args) = match cli.command {
        CliCommand::Epsilon(a) => (RunCommand::Epsilon, a),
        CliCommand::Sweep(a) => (RunCommand::Sweep, a),
        CliCommand::Dispersion(a) => (RunCommand::Dispersion, a),
        CliCommand::Xsec(a) => (RunCommand::Xsec, a),
        CliCommand::Diffxsec(a) => (RunCommand::Diffxsec, a),
        CliCommand::Formfactor(a) => (RunCommand::Formfactor, a),
        CliCommand::Replay(replay) => return load_replay(&replay).map(|config| Invocation { config }),
    };
    let merged = match &args.config {
        Some(path) => {
            let from_file = read_config_file(path)?;
            args.or(from_file)
        }
        None => args,
    };
    let config = merged.resolve(command)?;
    config.validate()?;
    Ok(Invocation { config })
}

fn load_replay(replay: &ReplayArgs) -> Result<RunConfig, CliError> {
    let text = std::fs::read_to_string(&replay.sidecar).map_err(|err| CliError::io(&replay.sidecar, err))?;
    let sidecar: serde_json::Value = serde_json::from_str(&text).map_err(|err| CliError::io(&replay.sidecar, err))?;
    let recorded = sidecar
        .get("config")
        .cloned()
        .ok_or_else(|| CliError::config(replay.sidecar.display().to_string(), "no `config` entry"))?;
    let mut config: RunConfig = serde_json::from_value(recorded)
        .map_err(|err| CliError::config(replay.sidecar.display().to_string(), err.to_string()))?;
    if let Some(output) = &replay.output {
        config.output = output.clone();
    }
    config.validate()?;
    Ok(config)
}

/// One table cell.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Field {
    Real(f64),
    Count(u64),
    Text(&'static str),
    Missing,
}

impl Field {
    fn render(&self) -> String {
        match self {
            Field::Real(x) => format!("{x:.16e}"),
            Field::Count(n) => n.to_string(),
            Field::Text(s) => (*s).to_owned(),
            Field::Missing => String::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Field>>,
}

impl Table {
    fn new(columns: &[&'static str]) -> Self {
        Self { columns: columns.to_vec(), rows: Vec::new() }
    }

    fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut writer = csv::Writer::from_writer(out);
        writer.write_record(&self.columns)?;
        for row in &self.rows {
            writer.write_record(row.iter().map(Field::render))?;
        }
        writer.flush()?;
        Ok(())
    }
}

/// Result of the numerical part of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub table: Table,
    /// Subcommand-specific facts recorded in the sidecar.
    pub summary: serde_json::Value,
    /// Set when the run failed numerically; `table` then holds the rows obtained before the failure.
    pub failure: Option<String>,
}

/// Evaluates row-wise in parallel and stops the table at the first failing row.
fn collect_rows<T, F>(samples: &[T], columns: &[&'static str], row: F) -> Evaluation
where
    T: Sync,
    F: Fn(&T) -> Result<Vec<Field>, String> + Sync + Send,
{
    let results: Vec<Result<Vec<Field>, String>> = samples.par_iter().map(&row).collect();
    let mut table = Table::new(columns);
    let mut failure = None;
    for result in results {
        match result {
            Ok(fields) => table.rows.push(fields),
            Err(message) => {
                failure = Some(message);
                break;
            }
        }
    }
    Evaluation { table, summary: serde_json::Value::Null, failure }
}

fn eval_epsilon(config: &RunConfig, params: &ModelParams) -> Evaluation {
    let columns = ["delta", "eps_re", "eps_im", "sqrt_eps_re", "sqrt_eps_im"];
    collect_rows(&config.delta.values(), &columns, |&delta| {
        let eps = permittivity(delta, params).map_err(|err| format!("delta = {delta}: {err}"))?;
        Ok(vec![
            Field::Real(delta),
            Field::Real(eps.value.re),
            Field::Real(eps.value.im),
            Field::Real(eps.root.re),
            Field::Real(eps.root.im),
        ])
    })
}

fn eval_sweep(config: &RunConfig, params: &ModelParams) -> Evaluation {
    let mut table = Table::new(&["kappa", "delta", "re", "im", "flag"]);
    let surface = match sweep_surface(config.component, &config.kappa.values(), &config.delta.values(), params) {
        Ok(surface) => surface,
        Err(err) => return Evaluation { table, summary: serde_json::Value::Null, failure: Some(err.to_string()) },
    };
    let mut flagged = 0u64;
    for (i, &kappa) in surface.kappa_grid.iter().enumerate() {
        for (&delta, cell) in surface.delta_grid.iter().zip(surface.row(i)) {
            let (re, im) = match cell {
                Cell::Value(z) => (Field::Real(z.re), Field::Real(z.im)),
                _ => {
                    flagged += 1;
                    (Field::Missing, Field::Missing)
                }
            };
            table.rows.push(vec![Field::Real(kappa), Field::Real(delta), re, im, Field::Text(cell.flag())]);
        }
    }
    let summary = serde_json::json!({ "component": config.component, "flagged_cells": flagged });
    Evaluation { table, summary, failure: None }
}

fn eval_dispersion(config: &RunConfig, params: &ModelParams) -> Evaluation {
    let mut table = Table::new(&["kappa", "pole_re", "pole_im", "residual", "iterations"]);
    let samples = config.kappa.values();
    let seed = config.seed.unwrap_or_else(|| default_seed(config.branch, samples[0], params));
    let options = TraceOptions {
        pole: PoleOptions { tol: config.pole_tol, max_iter: config.max_iter },
        ..TraceOptions::default()
    };
    let branch = match trace_samples(config.component, &samples, seed, params, &options) {
        Ok(branch) => branch,
        Err(err) => return Evaluation { table, summary: serde_json::Value::Null, failure: Some(err.to_string()) },
    };
    for p in &branch.points {
        table.rows.push(vec![
            Field::Real(p.kappa),
            Field::Real(p.pole.re),
            Field::Real(p.pole.im),
            Field::Real(p.residual),
            Field::Count(p.iterations as u64),
        ]);
    }
    let summary = serde_json::json!({
        "component": branch.component,
        "requested_branch": config.branch,
        "branch_label": branch.branch_label,
        "seed": seed,
        "termination": branch.termination,
    });
    let failure = branch.termination.as_ref().map(|b| format!("branch ended at kappa = {}: {}", b.kappa, b.reason));
    Evaluation { table, summary, failure }
}

fn eval_xsec(config: &RunConfig, params: &ModelParams) -> Evaluation {
    let columns = ["delta", "sigma_ext_k0sq", "sigma_ext_m2", "sigma_el_k0sq", "sigma_el_m2"];
    let target = config.scattering_target();
    let wavelength = config.model.wavelength_nm * 1e-9;
    let mut evaluation = collect_rows(&config.delta.values(), &columns, |&delta| {
        let fail = |err: crate::scattering::ScatteringError| format!("delta = {delta}: {err}");
        let ext = extinction_cross_section(delta, params).map_err(fail)?;
        let grid = AngularGrid::resolving(&target, delta, params);
        let el = integrated_elastic(delta, &target, params, &grid).map_err(fail)?.total;
        Ok(vec![
            Field::Real(delta),
            Field::Real(ext),
            Field::Real(to_si_area(ext, wavelength)),
            Field::Real(el),
            Field::Real(to_si_area(el, wavelength)),
        ])
    });
    evaluation.summary = serde_json::json!({ "target": target, "angular_grid": AngularGrid::default() });
    evaluation
}

fn eval_diffxsec(config: &RunConfig, params: &ModelParams) -> Evaluation {
    let columns = ["theta", "q", "form_factor", "dcs_theta", "dcs_phi", "dcs_total"];
    let target = config.scattering_target();
    let delta = config.detuning;
    let (sp, cp) = config.phi.sin_cos();
    let real = |v: Vector3<f64>| v.map(|x| Complex64::new(x, 0.0));
    let k_in = Vector3::z();
    let e_in = real(Vector3::x());
    let mut evaluation = collect_rows(&config.theta.values(), &columns, |&theta| {
        let fail = |err: crate::scattering::ScatteringError| format!("theta = {theta}: {err}");
        let (st, ct) = theta.sin_cos();
        let k_out = Vector3::new(st * cp, st * sp, ct);
        let theta_hat = real(Vector3::new(ct * cp, ct * sp, -st));
        let phi_hat = real(Vector3::new(-sp, cp, 0.0));
        let along_theta = ScatteringGeometry::elastic(k_in, e_in, k_out, theta_hat, delta).map_err(fail)?;
        let along_phi = ScatteringGeometry::elastic(k_in, e_in, k_out, phi_hat, delta).map_err(fail)?;
        let q = along_theta.momentum_transfer(params);
        let form = target.form_factor(q).map_err(fail)?;
        let dcs_theta = differential_cross_section(&along_theta, &target, params).map_err(fail)?;
        let dcs_phi = differential_cross_section(&along_phi, &target, params).map_err(fail)?;
        Ok(vec![
            Field::Real(theta),
            Field::Real(q),
            Field::Real(form),
            Field::Real(dcs_theta),
            Field::Real(dcs_phi),
            Field::Real(dcs_theta + dcs_phi),
        ])
    });
    evaluation.summary = serde_json::json!({ "target": target, "detuning": delta, "phi": config.phi });
    evaluation
}

fn eval_formfactor(config: &RunConfig) -> Evaluation {
    let columns = ["q", "form_factor", "form_factor_norm"];
    let profile = config.profile();
    let n = profile.atom_count();
    collect_rows(&config.q.values(), &columns, |&q| {
        let f = crate::condensate::form_factor(&profile, q).map_err(|err| format!("q = {q}: {err}"))?;
        Ok(vec![Field::Real(q), Field::Real(f), Field::Real(f / n)])
    })
}

/// Runs the numerical part of `config` on the current thread pool.
pub fn evaluate(config: &RunConfig, params: &ModelParams) -> Evaluation {
    match config.command {
        RunCommand::Epsilon => eval_epsilon(config, params),
        RunCommand::Sweep => eval_sweep(config, params),
        RunCommand::Dispersion => eval_dispersion(config, params),
        RunCommand::Xsec => eval_xsec(config, params),
        RunCommand::Diffxsec => eval_diffxsec(config, params),
        RunCommand::Formfactor => eval_formfactor(config),
    }
}

#[derive(Debug, Serialize)]
struct Derived {
    resonance_ratio: f64,
    recoil_ratio: f64,
    lorentz_lorenz_shift: f64,
    k0_per_m: f64,
}

#[derive(Debug, Serialize)]
struct Tolerances {
    pole_tol: f64,
    max_iter: usize,
    light_cone_reg: f64,
    form_factor_rel_tol: f64,
    angular_rel_tol: f64,
}

#[derive(Debug, Serialize)]
struct Sidecar<'a> {
    tool: &'static str,
    version: &'static str,
    status: &'static str,
    diagnostic: Option<&'a str>,
    config: &'a RunConfig,
    derived: Derived,
    tolerances: Tolerances,
    summary: &'a serde_json::Value,
    columns: &'a [&'static str],
    rows: usize,
    threads: usize,
    timestamp_unix: f64,
    wall_clock_seconds: f64,
}

fn thread_count() -> Result<Option<usize>, CliError> {
    match std::env::var(THREADS_ENV) {
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(err) => Err(CliError::config(THREADS_ENV, err.to_string())),
        Ok(text) => match text.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(CliError::config(THREADS_ENV, format!("expected a positive integer, got `{text}`"))),
        },
    }
}

fn temp_beside(path: &Path) -> Result<NamedTempFile, CliError> {
    let parent = match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => dir,
        _ => Path::new("."),
    };
    NamedTempFile::new_in(parent).map_err(|err| CliError::io(path, format!("not writable: {err}")))
}

fn persist(temp: NamedTempFile, path: &Path) -> Result<(), CliError> {
    temp.persist(path).map(|_| ()).map_err(|err| CliError::io(path, err.error))
}

/// Outcome of a completed run.
#[derive(Debug, Clone, PartialEq)]
pub struct RunReport {
    pub rows: usize,
    pub failure: Option<String>,
    pub output: PathBuf,
    pub sidecar: PathBuf,
}

impl RunReport {
    pub fn exit_code(&self) -> i32 {
        if self.failure.is_some() {
            1
        } else {
            0
        }
    }
}

/// Executes a validated run: checks the outputs are writable, evaluates, and
/// writes the table and sidecar atomically.
pub fn run(config: &RunConfig) -> Result<RunReport, CliError> {
    let params = config.validate()?;
    let threads = thread_count()?;
    let sidecar_path = config.sidecar_path();
    let data_tmp = temp_beside(&config.output)?;
    let meta_tmp = temp_beside(&sidecar_path)?;

    let started = Instant::now();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        pool = pool.num_threads(n);
    }
    let pool = pool.build().map_err(|err| CliError::config(THREADS_ENV, err.to_string()))?;
    let evaluation = pool.install(|| evaluate(config, &params));
    let wall_clock = started.elapsed().as_secs_f64();

    {
        let mut out = BufWriter::new(data_tmp.as_file());
        let written = match config.format {
            OutputFormat::Csv => evaluation.table.write_csv(&mut out).map_err(|err| err.to_string()),
            OutputFormat::Json => serde_json::to_writer(&mut out, &evaluation.table).map_err(|err| err.to_string()),
        };
        written
            .and_then(|_| out.flush().map_err(|err| err.to_string()))
            .map_err(|err| CliError::io(&config.output, err))?;
    }
    persist(data_tmp, &config.output)?;

    let timestamp = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
    let sidecar = Sidecar {
        tool: TOOL,
        version: env!("CARGO_PKG_VERSION"),
        status: if evaluation.failure.is_some() { "failed" } else { "ok" },
        diagnostic: evaluation.failure.as_deref(),
        config,
        derived: Derived {
            resonance_ratio: params.resonance_ratio(),
            recoil_ratio: params.recoil_ratio(),
            lorentz_lorenz_shift: params.lorentz_lorenz_shift(),
            k0_per_m: config.model.atom().k0(),
        },
        tolerances: Tolerances {
            pole_tol: config.pole_tol,
            max_iter: config.max_iter,
            light_cone_reg: config.model.light_cone_reg,
            form_factor_rel_tol: FORM_FACTOR_REL_TOL,
            angular_rel_tol: AngularGrid::default().rel_tol,
        },
        summary: &evaluation.summary,
        columns: &evaluation.table.columns,
        rows: evaluation.table.rows.len(),
        threads: pool.current_num_threads(),
        timestamp_unix: timestamp,
        wall_clock_seconds: wall_clock,
    };
    {
        let mut out = BufWriter::new(meta_tmp.as_file());
        serde_json::to_writer_pretty(&mut out, &sidecar)
            .map_err(|err| err.to_string())
            .and_then(|_| out.flush().map_err(|err| err.to_string()))
            .map_err(|err| CliError::io(&sidecar_path, err))?;
    }
    persist(meta_tmp, &sidecar_path)?;

    Ok(RunReport {
        rows: evaluation.table.rows.len(),
        failure: evaluation.failure,
        output: config.output.clone(),
        sidecar: sidecar_path,
    })
}

/// Full command-line entry point; returns the process exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let invocation = match parse_config(argv) {
        Ok(invocation) => invocation,
        Err(CliError::Usage(err)) => {
            let _ = err.print();
            return err.exit_code();
        }
        Err(err) => {
            eprintln!("{TOOL}: {err}");
            return err.exit_code();
        }
    };
    match run(&invocation.config) {
        Ok(report) => {
            if let Some(failure) = &report.failure {
                eprintln!("{TOOL}: numeric failure: {failure} (details in {})", report.sidecar.display());
            }
            report.exit_code()
        }
        Err(err) => {
            eprintln!("{TOOL}: {err}");
            err.exit_code()
        }
    }
}
