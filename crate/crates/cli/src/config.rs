//! Run configuration: a TOML schema with strict validation, plus the
//! built-in presets.
//!
//! Units follow the library convention: frequencies in units of the atomic
//! splitting omega_0, times in laser cycles.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

use superband::bath::{BandParams, DriveWaveform, Envelope};
use superband::dynamics::{FailurePolicy, SimParams};
use superband::integrator::StepController;
use superband::oracle::OracleConfig;

pub const CONFIG_SCHEMA_VERSION: u32 = 1;

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum, Default,
)]
#[serde(rename_all = "kebab-case")]
#[clap(rename_all = "kebab-case")]
pub enum Precision {
    Single,
    #[default]
    Double,
}

impl Precision {
    pub fn name(self) -> &'static str {
        match self {
            Precision::Single => "single",
            Precision::Double => "double",
        }
    }
}

fn default_failure_policy() -> FailurePolicy {
    FailurePolicy::Abort
}

/// Hilbert-space and batch dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemSpec {
    pub n_atoms: usize,
    pub n_modes: usize,
    /// Total virtual-photon cutoff of the Fock register.
    pub max_total_photons: usize,
    pub n_batch: usize,
    #[serde(default = "default_failure_policy")]
    pub failure_policy: FailurePolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSpec {
    pub t_start_cycles: f64,
    pub t_end_cycles: f64,
    pub record_interval_cycles: f64,
}

/// Tolerances for the batch stepper; everything else in the step controller
/// keeps the per-precision default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct IntegratorSpec {
    pub rtol: f64,
    pub atol: f64,
    #[serde(default)]
    pub initial_step: Option<f64>,
    /// Relative truncation target for the exponential-series evaluations.
    /// Unset means machine precision; loose-tolerance runs can raise it to
    /// skip series terms far below the step-error budget.
    #[serde(default)]
    pub series_rtol: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSpec {
    /// Record times (laser cycles) at which raw alpha samples are dumped.
    /// Each must lie on the recording grid.
    pub alpha_dump_times_cycles: Vec<f64>,
    /// Modes for which a Husimi marginal of the final state is written.
    pub husimi_modes: Vec<usize>,
    pub husimi_bins: usize,
    /// Gaussian smoothing bandwidth in bins; 0 disables smoothing.
    pub husimi_smooth_bins: f64,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            alpha_dump_times_cycles: Vec::new(),
            husimi_modes: Vec::new(),
            husimi_bins: 101,
            husimi_smooth_bins: 0.0,
        }
    }
}

/// Refinement ladders for the convergence sweep, one axis at a time off the
/// base config. Empty lists skip the axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub n_modes: Vec<usize>,
    pub max_total_photons: Vec<usize>,
    pub n_batch: Vec<usize>,
    pub rtol: Vec<f64>,
}

impl SweepSpec {
    pub fn is_empty(&self) -> bool {
        self.n_modes.is_empty()
            && self.max_total_photons.is_empty()
            && self.n_batch.is_empty()
            && self.rtol.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub precision: Precision,
    pub seed: u64,
    pub system: SystemSpec,
    pub band: BandParams,
    #[serde(default)]
    pub drive: DriveWaveform,
    pub time: TimeSpec,
    pub integrator: IntegratorSpec,
    /// Settings for the exact reference propagation (`oracle` command).
    #[serde(default)]
    pub oracle: OracleConfig,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub sweep: SweepSpec,
}

impl RunConfig {
    /// Assemble the solver parameter block. The step controller starts from
    /// the per-precision defaults and takes only the tolerances from the
    /// config.
    pub fn sim_params(&self) -> SimParams {
        let base = match self.precision {
            Precision::Double => StepController::default_double(),
            Precision::Single => StepController::default_single(),
        };
        SimParams {
            n_atoms: self.system.n_atoms,
            n_modes: self.system.n_modes,
            max_total_photons: self.system.max_total_photons,
            n_batch: self.system.n_batch,
            band: self.band,
            drive: self.drive,
            t_start_cycles: self.time.t_start_cycles,
            t_end_cycles: self.time.t_end_cycles,
            record_interval_cycles: self.time.record_interval_cycles,
            seed: self.seed,
            controller: StepController {
                rtol: self.integrator.rtol,
                atol: self.integrator.atol,
                initial_step: self.integrator.initial_step,
                series_rel_tol: self.integrator.series_rtol.unwrap_or(base.series_rel_tol),
                ..base
            },
            failure_policy: self.system.failure_policy,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != CONFIG_SCHEMA_VERSION {
            bail!(
                "unsupported schema_version {} (this build reads version {})",
                self.schema_version,
                CONFIG_SCHEMA_VERSION
            );
        }
        let params = self.sim_params();
        params.validate().context("invalid simulation parameters")?;
        if self.output.husimi_bins < 2 {
            bail!("output.husimi_bins must be at least 2");
        }
        for &m in &self.output.husimi_modes {
            if m >= self.system.n_modes {
                bail!(
                    "output.husimi_modes entry {m} out of range (n_modes = {})",
                    self.system.n_modes
                );
            }
        }
        let grid = params.record_grid_cycles();
        for &t in &self.output.alpha_dump_times_cycles {
            let on_grid = grid.iter().any(|&g| (g - t).abs() < 1e-9);
            if !on_grid {
                bail!("alpha dump time {t} cycles is not on the recording grid");
            }
        }
        Ok(())
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).context("failed to parse config TOML")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config file {}", path.display()))?;
        Self::from_toml_str(&text)
            .with_context(|| format!("in config file {}", path.display()))
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).context("failed to serialize config")
    }

    /// Built-in named configurations.
    pub fn preset(name: &str) -> Option<RunConfig> {
        match name {
            "desk-benchmark" => Some(desk_benchmark()),
            "reduced" => Some(reduced()),
            "paper-full" => Some(paper_full()),
            _ => None,
        }
    }

    pub fn preset_names() -> &'static [&'static str] {
        &["desk-benchmark", "reduced", "paper-full"]
    }
}

/// Small instance validated against the exact reference: 2 atoms, 2 modes,
/// 4 virtual photons, 4096 trajectories, detuned band (center at twice the
/// atomic splitting), one 2*pi pulse over 8 cycles.
fn desk_benchmark() -> RunConfig {
    RunConfig {
        schema_version: CONFIG_SCHEMA_VERSION,
        precision: Precision::Double,
        seed: 20260818,
        system: SystemSpec {
            n_atoms: 2,
            n_modes: 2,
            max_total_photons: 4,
            n_batch: 4096,
            failure_policy: FailurePolicy::Abort,
        },
        band: BandParams {
            epsilon: 2.0,
            hopping: 0.2,
            coupling: 0.2,
        },
        drive: DriveWaveform::default(),
        time: TimeSpec {
            t_start_cycles: 0.0,
            t_end_cycles: 8.0,
            record_interval_cycles: 0.125,
        },
        integrator: IntegratorSpec {
            rtol: 1e-4,
            atol: 1e-7,
            initial_step: None,
            series_rtol: None,
        },
        oracle: OracleConfig {
            mode_cutoff: 4,
            ..OracleConfig::default()
        },
        output: OutputSpec::default(),
        sweep: SweepSpec {
            n_modes: vec![1, 2, 4],
            max_total_photons: vec![2, 3, 4],
            n_batch: vec![64, 512, 4096],
            rtol: vec![1e-4, 1e-5, 1e-6],
        },
    }
}

/// Mid-size qualitative run: 16 atoms, 8 modes, 256 trajectories; shows the
/// gridlocked-emission window and the correlation build-up at desk cost.
fn reduced() -> RunConfig {
    RunConfig {
        schema_version: CONFIG_SCHEMA_VERSION,
        precision: Precision::Double,
        seed: 20260818,
        system: SystemSpec {
            n_atoms: 16,
            n_modes: 8,
            max_total_photons: 4,
            n_batch: 256,
            failure_policy: FailurePolicy::Abort,
        },
        band: BandParams {
            epsilon: 2.0,
            hopping: 0.2,
            coupling: 0.2,
        },
        drive: DriveWaveform::default(),
        time: TimeSpec {
            t_start_cycles: 0.0,
            t_end_cycles: 8.0,
            record_interval_cycles: 0.125,
        },
        integrator: IntegratorSpec {
            rtol: 1e-3,
            atol: 1e-6,
            initial_step: None,
            series_rtol: Some(1e-9),
        },
        oracle: OracleConfig::default(),
        output: OutputSpec {
            alpha_dump_times_cycles: vec![8.0],
            husimi_modes: vec![0, 3, 7],
            husimi_bins: 101,
            husimi_smooth_bins: 0.0,
        },
        sweep: SweepSpec::default(),
    }
}

/// Full-scale configuration from the published experiments: 40 atoms,
/// 12 modes, 6 virtual photons, 512 trajectories, single precision.
/// Compute-heavy: hours on a desktop CPU; sized for accelerator-class runs.
fn paper_full() -> RunConfig {
    RunConfig {
        schema_version: CONFIG_SCHEMA_VERSION,
        precision: Precision::Single,
        seed: 20260818,
        system: SystemSpec {
            n_atoms: 40,
            n_modes: 12,
            max_total_photons: 6,
            n_batch: 512,
            failure_policy: FailurePolicy::DropAndReport,
        },
        band: BandParams {
            epsilon: 2.0,
            hopping: 0.2,
            coupling: 0.2,
        },
        drive: DriveWaveform {
            carrier: 1.0,
            amplitude: 0.25,
            phase: 0.0,
            envelope: Envelope::SineSquared {
                duration_cycles: 8.0,
            },
        },
        time: TimeSpec {
            t_start_cycles: 0.0,
            t_end_cycles: 8.0,
            record_interval_cycles: 0.0625,
        },
        integrator: IntegratorSpec {
            rtol: 1e-4,
            atol: 1e-6,
            initial_step: None,
            series_rtol: Some(1e-10),
        },
        oracle: OracleConfig::default(),
        output: OutputSpec {
            alpha_dump_times_cycles: vec![4.0, 8.0],
            husimi_modes: vec![0, 5, 11],
            husimi_bins: 121,
            husimi_smooth_bins: 1.0,
        },
        sweep: SweepSpec::default(),
    }
}
