//! Implementations behind the CLI subcommands: run, oracle, compare, sweep,
//! husimi.  Everything here is a plain function so integration tests can
//! drive the same paths without spawning processes.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};
use std::time::Instant;

use superband::dynamics::{propagate_batch, BatchRecorder, BatchView, SimParams};
use superband::hilbert::C64;
use superband::observables::{husimi_marginal, GridSpec, ObservableSeries, SeriesPoint, SeriesRecorder};
use superband::oracle::{compare_runs, exact_reference, CompareReport};
use superband::Real;

use crate::config::{Precision, RunConfig};
use crate::io::{
    alpha_dump_filename, atomic_write, oracle_to_points, points_to_oracle, read_meta,
    read_series_csv, write_alpha_dump, write_husimi, write_meta, write_series_csv, AlphaDump,
    Meta, RunSummary, COMPARE_FILE, META_FILE, SERIES_FILE, SWEEP_FILE, SWEEP_TABLE_FILE,
};

/// Environment variable naming the root directory for default outputs.
pub const OUT_ROOT_ENV: &str = "SUPERBAND_OUT";

pub const META_SCHEMA_VERSION: u32 = 1;

/// Acceptance thresholds used by `compare`.
pub const Z_THRESHOLD: f64 = 3.0;
pub const REL_THRESHOLD: f64 = 0.05;

/// Where a configuration comes from; exactly one source must be set.
#[derive(Debug, Clone, Default)]
pub struct ConfigSource {
    pub config: Option<PathBuf>,
    pub preset: Option<String>,
    pub from_meta: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub precision: Option<Precision>,
}

/// Load and validate the configuration, applying CLI overrides. Returns the
/// config plus a short name used for default output directories.
pub fn resolve_config(src: &ConfigSource, ov: Overrides) -> Result<(RunConfig, String)> {
    let picked = src.config.is_some() as u8 + src.preset.is_some() as u8 + src.from_meta.is_some() as u8;
    if picked != 1 {
        bail!("exactly one of --config, --preset, --from-meta must be given");
    }
    let (mut cfg, name) = if let Some(path) = &src.config {
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "config".to_owned());
        (RunConfig::load(path)?, name)
    } else if let Some(preset) = &src.preset {
        let cfg = RunConfig::preset(preset).with_context(|| {
            format!(
                "unknown preset '{preset}' (available: {})",
                RunConfig::preset_names().join(", ")
            )
        })?;
        (cfg, preset.clone())
    } else {
        let meta = read_meta(src.from_meta.as_ref().unwrap())?;
        (meta.config, "from-meta".to_owned())
    };
    if let Some(seed) = ov.seed {
        cfg.seed = seed;
    }
    if let Some(precision) = ov.precision {
        cfg.precision = precision;
    }
    cfg.validate()?;
    Ok((cfg, name))
}

/// Default output directory: `--out` if given, else
/// `$SUPERBAND_OUT/<command>-<name>-seed<seed>`, else the same under
/// `./superband-runs`.
pub fn resolve_out_dir(
    explicit: Option<PathBuf>,
    command: &str,
    name: &str,
    seed: u64,
) -> PathBuf {
    if let Some(dir) = explicit {
        return dir;
    }
    let root = std::env::var_os(OUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("superband-runs"));
    root.join(format!("{command}-{name}-seed{seed}"))
}

/// Observable series plus the raw samples needed for file outputs.
struct RunArtifacts {
    series: ObservableSeries,
    summary: RunSummary,
    final_alphas: Vec<C64>,
    final_t_cycles: f64,
}

fn run_typed<R: Real>(cfg: &RunConfig, params: &SimParams, out_dir: &Path) -> Result<RunArtifacts> {
    struct Recorder<'a> {
        series: SeriesRecorder,
        dump_times: &'a [f64],
        out_dir: &'a Path,
        n_modes: u32,
        n_batch: u32,
        t_final: f64,
        final_alphas: Vec<C64>,
        final_t_cycles: f64,
        io_errors: Vec<anyhow::Error>,
    }
    impl<R: Real> BatchRecorder<R> for Recorder<'_> {
        fn record(&mut self, t_cycles: f64, view: &BatchView<'_, R>) {
            BatchRecorder::<R>::record(&mut self.series, t_cycles, view);
            let wants_dump = self.dump_times.iter().any(|&d| (d - t_cycles).abs() < 1e-9);
            let is_final = (t_cycles - self.t_final).abs() < 1e-9;
            if !(wants_dump || is_final) {
                return;
            }
            let alphas: Vec<C64> = view
                .alphas()
                .iter()
                .map(|z| C64::new(z.re.to_f64(), z.im.to_f64()))
                .collect();
            if wants_dump {
                let dump = AlphaDump {
                    n_batch: self.n_batch,
                    n_modes: self.n_modes,
                    t_cycles,
                    data: alphas.clone(),
                };
                let path = self.out_dir.join(alpha_dump_filename(t_cycles));
                if let Err(e) = write_alpha_dump(&path, &dump) {
                    self.io_errors.push(e);
                }
            }
            if is_final {
                self.final_alphas = alphas;
                self.final_t_cycles = t_cycles;
            }
        }
    }

    let mut recorder = Recorder {
        series: SeriesRecorder::new(),
        dump_times: &cfg.output.alpha_dump_times_cycles,
        out_dir,
        n_modes: params.n_modes as u32,
        n_batch: params.n_batch as u32,
        t_final: params.t_end_cycles,
        final_alphas: Vec::new(),
        final_t_cycles: f64::NAN,
        io_errors: Vec::new(),
    };
    let report = propagate_batch::<R>(params, &mut recorder)?;
    if let Some(err) = recorder.io_errors.into_iter().next() {
        return Err(err.context("failed to write alpha dump"));
    }
    Ok(RunArtifacts {
        series: recorder.series.finish(),
        summary: RunSummary {
            wall_seconds: report.wall_seconds,
            steps_accepted: report.integration.steps_accepted,
            steps_rejected: report.integration.steps_rejected,
            dropped_trajectories: report.dropped,
            max_boundary_weight: report.max_boundary_weight,
            max_norm_drift: None,
        },
        final_alphas: recorder.final_alphas,
        final_t_cycles: recorder.final_t_cycles,
    })
}

/// Run the stochastic simulation and write series.csv, meta.json, and any
/// configured alpha dumps and Husimi grids. Returns the metadata block.
pub fn cmd_run(cfg: &RunConfig, out_dir: &Path) -> Result<Meta> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))?;
    let params = cfg.sim_params();
    let artifacts = match cfg.precision {
        Precision::Double => run_typed::<f64>(cfg, &params, out_dir)?,
        Precision::Single => run_typed::<f32>(cfg, &params, out_dir)?,
    };
    write_series_csv(&out_dir.join(SERIES_FILE), &artifacts.series)?;

    let mut outputs = vec![SERIES_FILE.to_owned(), META_FILE.to_owned()];
    for &t in &cfg.output.alpha_dump_times_cycles {
        outputs.push(alpha_dump_filename(t));
    }
    for &mode in &cfg.output.husimi_modes {
        let row = &artifacts.final_alphas
            [mode * params.n_batch..(mode + 1) * params.n_batch];
        let grid = GridSpec::auto(row, cfg.output.husimi_bins, cfg.output.husimi_bins);
        let mut map = husimi_marginal(row, grid);
        if cfg.output.husimi_smooth_bins > 0.0 {
            map.smooth(cfg.output.husimi_smooth_bins);
        }
        write_husimi(
            out_dir,
            mode,
            artifacts.final_t_cycles,
            &map,
            cfg.output.husimi_smooth_bins,
        )?;
        outputs.push(format!("husimi_mode{mode}.csv"));
        outputs.push(format!("husimi_mode{mode}.json"));
    }

    let meta = Meta {
        schema_version: META_SCHEMA_VERSION,
        code_version: env!("CARGO_PKG_VERSION").to_owned(),
        command: "run".to_owned(),
        config: cfg.clone(),
        summary: artifacts.summary,
        outputs,
    };
    write_meta(&out_dir.join(META_FILE), &meta)?;
    Ok(meta)
}

/// Propagate the exact reference and write it in the same series schema.
pub fn cmd_oracle(cfg: &RunConfig, out_dir: &Path) -> Result<Meta> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))?;
    let params = cfg.sim_params();
    let t0 = Instant::now();
    let oracle = exact_reference(&params, &cfg.oracle)?;
    let series = ObservableSeries {
        points: oracle_to_points(&oracle),
    };
    write_series_csv(&out_dir.join(SERIES_FILE), &series)?;
    let meta = Meta {
        schema_version: META_SCHEMA_VERSION,
        code_version: env!("CARGO_PKG_VERSION").to_owned(),
        command: "oracle".to_owned(),
        config: cfg.clone(),
        summary: RunSummary {
            wall_seconds: t0.elapsed().as_secs_f64(),
            steps_accepted: 0,
            steps_rejected: 0,
            dropped_trajectories: Vec::new(),
            max_boundary_weight: 0.0,
            max_norm_drift: Some(oracle.max_norm_drift),
        },
        outputs: vec![SERIES_FILE.to_owned(), META_FILE.to_owned()],
    };
    write_meta(&out_dir.join(META_FILE), &meta)?;
    Ok(meta)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CompareOutcome {
    pub pass: bool,
    pub z_threshold: f64,
    pub rel_threshold: f64,
    #[serde(flatten)]
    pub report: CompareReport,
}

/// Compare a stochastic run directory against an oracle run directory;
/// writes compare.json (into the stochastic directory unless `out` is given).
pub fn cmd_compare(
    stochastic_dir: &Path,
    oracle_dir: &Path,
    out: Option<&Path>,
) -> Result<CompareOutcome> {
    let series = read_series_csv(&stochastic_dir.join(SERIES_FILE))?;
    let oracle = points_to_oracle(&read_series_csv(&oracle_dir.join(SERIES_FILE))?);
    let report = compare_runs(&series, &oracle)?;
    let pass = report.max_abs_z_n_mean <= Z_THRESHOLD
        && report.max_abs_z_excited <= Z_THRESHOLD
        && report.rel_err_at_peak.abs() <= REL_THRESHOLD;
    let outcome = CompareOutcome {
        pass,
        z_threshold: Z_THRESHOLD,
        rel_threshold: REL_THRESHOLD,
        report,
    };
    let mut text = serde_json::to_string_pretty(&outcome)?;
    text.push('\n');
    let dir = out.unwrap_or(stochastic_dir);
    std::fs::create_dir_all(dir)?;
    atomic_write(&dir.join(COMPARE_FILE), text.as_bytes())?;
    Ok(outcome)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepAxis {
    pub axis: String,
    pub values: Vec<f64>,
    pub n_final: Vec<f64>,
    pub n_final_se: Vec<f64>,
    pub dispersion_final: Vec<f64>,
    pub correlator_final: Vec<f64>,
    /// |n_final[i+1] - n_final[i]| along the refinement ladder.
    pub deltas: Vec<f64>,
    pub dispersion_deltas: Vec<f64>,
    pub correlator_deltas: Vec<f64>,
    /// Whether the photon-number deltas shrink monotonically.
    pub monotone: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepReport {
    pub axes: Vec<SweepAxis>,
    pub all_monotone: bool,
}

fn final_point(cfg: &RunConfig) -> Result<SeriesPoint> {
    let params = cfg.sim_params();
    let series = match cfg.precision {
        Precision::Double => {
            let mut rec = SeriesRecorder::new();
            propagate_batch::<f64>(&params, &mut rec)?;
            rec.finish()
        }
        Precision::Single => {
            let mut rec = SeriesRecorder::new();
            propagate_batch::<f32>(&params, &mut rec)?;
            rec.finish()
        }
    };
    series
        .points
        .last()
        .copied()
        .context("run produced no recordings")
}

/// Run the one-axis-at-a-time refinement ladders from `[sweep]` and report
/// final-observable deltas; flags non-monotone convergence.
pub fn cmd_sweep(cfg: &RunConfig, out_dir: &Path) -> Result<SweepReport> {
    if cfg.sweep.is_empty() {
        bail!("config has no [sweep] ladders");
    }
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))?;

    enum Axis {
        Modes(Vec<usize>),
        Photons(Vec<usize>),
        Batch(Vec<usize>),
        Rtol(Vec<f64>),
    }
    let axes = [
        Axis::Modes(cfg.sweep.n_modes.clone()),
        Axis::Photons(cfg.sweep.max_total_photons.clone()),
        Axis::Batch(cfg.sweep.n_batch.clone()),
        Axis::Rtol(cfg.sweep.rtol.clone()),
    ];

    let mut report = SweepReport {
        axes: Vec::new(),
        all_monotone: true,
    };
    for axis in axes {
        let (name, values): (&str, Vec<f64>) = match &axis {
            Axis::Modes(v) => ("n_modes", v.iter().map(|&x| x as f64).collect()),
            Axis::Photons(v) => ("max_total_photons", v.iter().map(|&x| x as f64).collect()),
            Axis::Batch(v) => ("n_batch", v.iter().map(|&x| x as f64).collect()),
            Axis::Rtol(v) => ("rtol", v.clone()),
        };
        if values.is_empty() {
            continue;
        }
        let mut n_final = Vec::new();
        let mut n_final_se = Vec::new();
        let mut dispersion_final = Vec::new();
        let mut correlator_final = Vec::new();
        for (k, &value) in values.iter().enumerate() {
            let mut variant = cfg.clone();
            match &axis {
                Axis::Modes(v) => variant.system.n_modes = v[k],
                Axis::Photons(v) => variant.system.max_total_photons = v[k],
                Axis::Batch(v) => variant.system.n_batch = v[k],
                Axis::Rtol(v) => variant.integrator.rtol = v[k],
            }
            variant
                .validate()
                .with_context(|| format!("sweep {name} = {value} is not a valid config"))?;
            let point = final_point(&variant)
                .with_context(|| format!("sweep {name} = {value} failed"))?;
            n_final.push(point.n_mean);
            n_final_se.push(point.n_mean_se);
            dispersion_final.push(point.dispersion);
            correlator_final.push(point.correlator);
        }
        let abs_deltas =
            |v: &[f64]| -> Vec<f64> { v.windows(2).map(|w| (w[1] - w[0]).abs()).collect() };
        let deltas = abs_deltas(&n_final);
        let dispersion_deltas = abs_deltas(&dispersion_final);
        let correlator_deltas = abs_deltas(&correlator_final);
        let monotone = deltas.windows(2).all(|w| w[1] < w[0]);
        report.all_monotone &= monotone;
        report.axes.push(SweepAxis {
            axis: name.to_owned(),
            values,
            n_final,
            n_final_se,
            dispersion_final,
            correlator_final,
            deltas,
            dispersion_deltas,
            correlator_deltas,
            monotone,
        });
    }

    let mut json = serde_json::to_string_pretty(&report)?;
    json.push('\n');
    atomic_write(&out_dir.join(SWEEP_FILE), json.as_bytes())?;

    let mut table = String::from(
        "axis,value,n_final,n_final_se,dispersion_final,correlator_final,delta_n,delta_dispersion,delta_correlator\n",
    );
    for ax in &report.axes {
        for (k, &v) in ax.values.iter().enumerate() {
            let delta = |d: &[f64]| {
                if k == 0 {
                    String::from("NaN")
                } else {
                    format!("{:?}", d[k - 1])
                }
            };
            table.push_str(&format!(
                "{},{:?},{:?},{:?},{:?},{:?},{},{},{}\n",
                ax.axis,
                v,
                ax.n_final[k],
                ax.n_final_se[k],
                ax.dispersion_final[k],
                ax.correlator_final[k],
                delta(&ax.deltas),
                delta(&ax.dispersion_deltas),
                delta(&ax.correlator_deltas),
            ));
        }
    }
    atomic_write(&out_dir.join(SWEEP_TABLE_FILE), table.as_bytes())?;
    Ok(report)
}

/// Rebuild a Husimi marginal from a raw alpha dump file.
pub fn cmd_husimi(
    dump_path: &Path,
    mode: usize,
    bins: usize,
    smooth_bins: f64,
    out_dir: &Path,
) -> Result<()> {
    if bins < 2 {
        bail!("--bins must be at least 2");
    }
    let dump = crate::io::read_alpha_dump(dump_path)?;
    if mode >= dump.n_modes as usize {
        bail!(
            "mode {mode} out of range: dump holds {} modes",
            dump.n_modes
        );
    }
    let n_batch = dump.n_batch as usize;
    let row = &dump.data[mode * n_batch..(mode + 1) * n_batch];
    let grid = GridSpec::auto(row, bins, bins);
    let mut map = husimi_marginal(row, grid);
    if smooth_bins > 0.0 {
        map.smooth(smooth_bins);
    }
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))?;
    write_husimi(out_dir, mode, dump.t_cycles, &map, smooth_bins)
}
