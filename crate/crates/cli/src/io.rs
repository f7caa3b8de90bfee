//! Output formats: the observable CSV, run metadata JSON, raw alpha sample
//! dumps, and Husimi grids.  All writes go through a temp-file-plus-rename
//! so readers never see a half-written file.

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use std::io::Write;
use std::path::{Path, PathBuf};

use superband::hilbert::C64;
use superband::observables::{HusimiMap, ObservableSeries, SeriesPoint};
use superband::oracle::OracleSeries;

use crate::config::RunConfig;

pub const SERIES_FILE: &str = "series.csv";
pub const META_FILE: &str = "meta.json";
pub const COMPARE_FILE: &str = "compare.json";
pub const SWEEP_FILE: &str = "sweep.json";
pub const SWEEP_TABLE_FILE: &str = "sweep.csv";

pub const SERIES_HEADER: &str = "t_cycles,n_mean,n_mean_se,n_second,n_second_se,var_n,var_n_se,\
dispersion,dispersion_se,dispersion_masked,correlator,correlator_se,excited_fraction,\
excited_fraction_se,emission_rate,emission_rate_se";

/// Shortest representation that parses back to the same bits (Rust's Debug
/// float format); keeps the CSV byte-stable across runs.
fn fmt(x: f64) -> String {
    format!("{x:?}")
}

/// Replace `path` atomically: write a sibling temp file, then rename over.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))?;
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    {
        let mut f = std::fs::File::create(&tmp)
            .with_context(|| format!("cannot create {}", tmp.display()))?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
        .with_context(|| format!("cannot move temp file onto {}", path.display()))?;
    Ok(())
}

pub fn write_series_csv(path: &Path, series: &ObservableSeries) -> Result<()> {
    let mut out = String::with_capacity(64 * (series.points.len() + 1));
    out.push_str(SERIES_HEADER);
    out.push('\n');
    for p in &series.points {
        let cols = [
            fmt(p.t_cycles),
            fmt(p.n_mean),
            fmt(p.n_mean_se),
            fmt(p.n_second),
            fmt(p.n_second_se),
            fmt(p.var_n),
            fmt(p.var_n_se),
            fmt(p.dispersion),
            fmt(p.dispersion_se),
            p.dispersion_masked.to_string(),
            fmt(p.correlator),
            fmt(p.correlator_se),
            fmt(p.excited_fraction),
            fmt(p.excited_fraction_se),
            fmt(p.emission_rate),
            fmt(p.emission_rate_se),
        ];
        out.push_str(&cols.join(","));
        out.push('\n');
    }
    atomic_write(path, out.as_bytes())
}

pub fn read_series_csv(path: &Path) -> Result<ObservableSeries> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or_default();
    if header != SERIES_HEADER {
        bail!(
            "{}: unrecognized series header (schema mismatch)",
            path.display()
        );
    }
    let mut points = Vec::new();
    for (k, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 16 {
            bail!("{}: row {} has {} columns", path.display(), k + 2, cells.len());
        }
        let f = |i: usize| -> Result<f64> {
            cells[i]
                .parse::<f64>()
                .with_context(|| format!("{}: row {} column {}", path.display(), k + 2, i + 1))
        };
        points.push(SeriesPoint {
            t_cycles: f(0)?,
            n_mean: f(1)?,
            n_mean_se: f(2)?,
            n_second: f(3)?,
            n_second_se: f(4)?,
            var_n: f(5)?,
            var_n_se: f(6)?,
            dispersion: f(7)?,
            dispersion_se: f(8)?,
            dispersion_masked: cells[9].parse::<bool>().with_context(|| {
                format!("{}: row {} column 10", path.display(), k + 2)
            })?,
            correlator: f(10)?,
            correlator_se: f(11)?,
            excited_fraction: f(12)?,
            excited_fraction_se: f(13)?,
            emission_rate: f(14)?,
            emission_rate_se: f(15)?,
        });
    }
    Ok(ObservableSeries { points })
}

/// Lay exact reference curves out in the same CSV schema (standard errors
/// zero, dispersion masked where the mean photon number vanishes).
pub fn oracle_to_points(oracle: &OracleSeries) -> Vec<SeriesPoint> {
    let n = oracle.times_cycles.len();
    let rate = |i: usize| -> f64 {
        if n < 2 {
            return 0.0;
        }
        let (j0, j1) = if i == 0 {
            (0, 1)
        } else if i + 1 == n {
            (n - 2, n - 1)
        } else {
            (i - 1, i + 1)
        };
        (oracle.n_mean[j1] - oracle.n_mean[j0])
            / (oracle.times_cycles[j1] - oracle.times_cycles[j0])
    };
    (0..n)
        .map(|i| {
            let n_mean = oracle.n_mean[i];
            let masked = !(n_mean.abs() > 1e-12);
            SeriesPoint {
                t_cycles: oracle.times_cycles[i],
                n_mean,
                n_mean_se: 0.0,
                n_second: oracle.n_second[i],
                n_second_se: 0.0,
                var_n: oracle.var_n[i],
                var_n_se: 0.0,
                dispersion: if masked { f64::NAN } else { oracle.var_n[i] / n_mean },
                dispersion_se: 0.0,
                dispersion_masked: masked,
                correlator: oracle.correlator[i],
                correlator_se: 0.0,
                excited_fraction: oracle.excited_fraction[i],
                excited_fraction_se: 0.0,
                emission_rate: rate(i),
                emission_rate_se: 0.0,
            }
        })
        .collect()
}

/// Rebuild exact-reference curves from a series written by `oracle`.
pub fn points_to_oracle(series: &ObservableSeries) -> OracleSeries {
    OracleSeries {
        times_cycles: series.points.iter().map(|p| p.t_cycles).collect(),
        n_mean: series.points.iter().map(|p| p.n_mean).collect(),
        n_second: series.points.iter().map(|p| p.n_second).collect(),
        var_n: series.points.iter().map(|p| p.var_n).collect(),
        excited_fraction: series.points.iter().map(|p| p.excited_fraction).collect(),
        correlator: series.points.iter().map(|p| p.correlator).collect(),
        max_norm_drift: 0.0,
    }
}

/// Propagation statistics recorded alongside a run.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct RunSummary {
    pub wall_seconds: f64,
    pub steps_accepted: usize,
    pub steps_rejected: usize,
    pub dropped_trajectories: Vec<usize>,
    pub max_boundary_weight: f64,
    /// Worst |norm^2 - 1| of the exact propagation (oracle command only).
    pub max_norm_drift: Option<f64>,
}

/// Everything needed to reproduce and audit a run. `config` is the fully
/// resolved configuration (presets expanded, CLI overrides applied), so
/// `run --from-meta` regenerates identical outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Meta {
    pub schema_version: u32,
    pub code_version: String,
    pub command: String,
    pub config: RunConfig,
    pub summary: RunSummary,
    pub outputs: Vec<String>,
}

pub fn write_meta(path: &Path, meta: &Meta) -> Result<()> {
    let mut text = serde_json::to_string_pretty(meta).context("cannot serialize meta")?;
    text.push('\n');
    atomic_write(path, text.as_bytes())
}

pub fn read_meta(path: &Path) -> Result<Meta> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    let meta: Meta =
        serde_json::from_str(&text).with_context(|| format!("bad meta JSON {}", path.display()))?;
    Ok(meta)
}

const ALPHA_MAGIC: &[u8; 4] = b"ALPH";

/// One time slice of raw noise amplitudes, mode-major:
/// `data[nu * n_batch + xi]` is trajectory `xi`'s amplitude in mode `nu`.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaDump {
    pub n_batch: u32,
    pub n_modes: u32,
    pub t_cycles: f64,
    pub data: Vec<C64>,
}

/// Binary layout (little-endian): magic "ALPH", u32 n_batch, u32 n_modes,
/// f64 time in cycles, then n_modes*n_batch interleaved (re, im) f64 pairs,
/// mode-major. Samples are stored at f64 width regardless of run precision.
pub fn write_alpha_dump(path: &Path, dump: &AlphaDump) -> Result<()> {
    let n = dump.n_batch as usize * dump.n_modes as usize;
    if dump.data.len() != n {
        bail!(
            "alpha dump shape mismatch: {} samples for {} x {}",
            dump.data.len(),
            dump.n_modes,
            dump.n_batch
        );
    }
    let mut bytes = Vec::with_capacity(20 + 16 * n);
    bytes.extend_from_slice(ALPHA_MAGIC);
    bytes.extend_from_slice(&dump.n_batch.to_le_bytes());
    bytes.extend_from_slice(&dump.n_modes.to_le_bytes());
    bytes.extend_from_slice(&dump.t_cycles.to_le_bytes());
    for z in &dump.data {
        bytes.extend_from_slice(&z.re.to_le_bytes());
        bytes.extend_from_slice(&z.im.to_le_bytes());
    }
    atomic_write(path, &bytes)
}

pub fn read_alpha_dump(path: &Path) -> Result<AlphaDump> {
    let bytes =
        std::fs::read(path).with_context(|| format!("cannot read {}", path.display()))?;
    if bytes.len() < 20 || &bytes[0..4] != ALPHA_MAGIC {
        bail!("{}: not an alpha dump (bad magic)", path.display());
    }
    let n_batch = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    let n_modes = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    let t_cycles = f64::from_le_bytes(bytes[12..20].try_into().unwrap());
    let n = n_batch as usize * n_modes as usize;
    if bytes.len() != 20 + 16 * n {
        bail!(
            "{}: payload is {} bytes, expected {} for {} x {} samples",
            path.display(),
            bytes.len() - 20,
            16 * n,
            n_modes,
            n_batch
        );
    }
    let mut data = Vec::with_capacity(n);
    for k in 0..n {
        let off = 20 + 16 * k;
        let re = f64::from_le_bytes(bytes[off..off + 8].try_into().unwrap());
        let im = f64::from_le_bytes(bytes[off + 8..off + 16].try_into().unwrap());
        data.push(C64::new(re, im));
    }
    Ok(AlphaDump {
        n_batch,
        n_modes,
        t_cycles,
        data,
    })
}

pub fn alpha_dump_filename(t_cycles: f64) -> String {
    // Dots in times become 'p' so names stay extension-safe: 2.5 -> "t2p5".
    let tag = format!("{t_cycles}").replace('.', "p").replace('-', "m");
    format!("alpha_t{tag}.bin")
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HusimiMeta {
    pub mode: usize,
    pub t_cycles: f64,
    pub n_re: usize,
    pub n_im: usize,
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
    pub smooth_bins: f64,
    pub total_mass: f64,
}

/// Writes `husimi_mode{nu}.csv` (long format: re, im, density) and a JSON
/// sidecar with the grid geometry.
pub fn write_husimi(dir: &Path, mode: usize, t_cycles: f64, map: &HusimiMap, smooth_bins: f64) -> Result<()> {
    let g = map.grid;
    let dre = (g.re_max - g.re_min) / g.n_re as f64;
    let dim = (g.im_max - g.im_min) / g.n_im as f64;
    let mut csv = String::from("re,im,density\n");
    for j in 0..g.n_im {
        let im = g.im_min + (j as f64 + 0.5) * dim;
        for i in 0..g.n_re {
            let re = g.re_min + (i as f64 + 0.5) * dre;
            csv.push_str(&format!("{},{},{}\n", fmt(re), fmt(im), fmt(map.density[(j, i)])));
        }
    }
    atomic_write(&dir.join(format!("husimi_mode{mode}.csv")), csv.as_bytes())?;
    let meta = HusimiMeta {
        mode,
        t_cycles,
        n_re: g.n_re,
        n_im: g.n_im,
        re_min: g.re_min,
        re_max: g.re_max,
        im_min: g.im_min,
        im_max: g.im_max,
        smooth_bins,
        total_mass: map.total_mass(),
    };
    let mut text = serde_json::to_string_pretty(&meta)?;
    text.push('\n');
    atomic_write(&dir.join(format!("husimi_mode{mode}.json")), text.as_bytes())
}
