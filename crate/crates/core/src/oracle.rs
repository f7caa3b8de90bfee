//! Exact small-scale reference solver.
//!
//! Propagates the full atom-field wavefunction on the product space
//! (collective spin) x (each mode truncated at a per-mode photon cutoff)
//! with a classical embedded Runge-Kutta pair, entirely independent of the
//! stochastic engine and its exponential integrator.  Feasible only for a
//! handful of modes, which is exactly its job: a ground-truth curve that
//! batch estimates must reproduce within their own error bars.

use ndarray::Array2;

use crate::bath::{discretize_band, BathDiscretization, CYCLE};
use crate::dynamics::SimParams;
use crate::error::{Result, SimError};
use crate::hilbert::{CollectiveSpinBasis, C64};
use crate::observables::ObservableSeries;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleConfig {
    /// Photon cutoff per mode (occupations 0..=mode_cutoff).
    pub mode_cutoff: usize,
    /// Hard limit on the product-space dimension.
    pub dim_cap: usize,
    pub rtol: f64,
    pub atol: f64,
    /// Number of initially excited atoms (0 = collective ground state).
    pub initial_excited: usize,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            mode_cutoff: 3,
            dim_cap: 20_000,
            rtol: 1e-10,
            atol: 1e-12,
            initial_excited: 0,
        }
    }
}

/// Exact observable curves on the recording grid.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct OracleSeries {
    pub times_cycles: Vec<f64>,
    pub n_mean: Vec<f64>,
    pub n_second: Vec<f64>,
    pub var_n: Vec<f64>,
    pub excited_fraction: Vec<f64>,
    pub correlator: Vec<f64>,
    /// Worst |norm^2 - 1| seen at any recording.
    pub max_norm_drift: f64,
}

/// Mixed-radix product basis: spin level major, then mode occupations with
/// the last mode fastest.
struct ProductBasis {
    spin: CollectiveSpinBasis,
    n_modes: usize,
    cutoff: usize,
    fock_dim: usize,
    dim: usize,
}

impl ProductBasis {
    fn new(n_atoms: usize, n_modes: usize, cutoff: usize, cap: usize) -> Result<Self> {
        let radix = cutoff as u128 + 1;
        let mut fock_dim: u128 = 1;
        for _ in 0..n_modes {
            fock_dim = fock_dim.saturating_mul(radix);
        }
        let dim = fock_dim.saturating_mul(n_atoms as u128 + 1);
        if dim > cap as u128 {
            return Err(SimError::OracleDimCap { dim, cap });
        }
        Ok(Self {
            spin: CollectiveSpinBasis::new(n_atoms)?,
            n_modes,
            cutoff,
            fock_dim: fock_dim as usize,
            dim: dim as usize,
        })
    }

    #[inline]
    fn spin_level(&self, i: usize) -> usize {
        i / self.fock_dim
    }

    /// Occupation of mode nu at state index i.
    #[inline]
    fn digit(&self, i: usize, nu: usize) -> usize {
        let mut f = i % self.fock_dim;
        let radix = self.cutoff + 1;
        // last mode is the fastest digit
        for _ in nu + 1..self.n_modes {
            f /= radix;
        }
        f % radix
    }

    /// Stride of mode nu in the Fock part.
    #[inline]
    fn stride(&self, nu: usize) -> usize {
        let radix = self.cutoff + 1;
        radix.pow((self.n_modes - 1 - nu) as u32)
    }

    fn total_photons(&self, i: usize) -> usize {
        (0..self.n_modes).map(|nu| self.digit(i, nu)).sum()
    }
}

/// out = H(t) psi on the product basis.
fn apply_h(
    basis: &ProductBasis,
    bath: &BathDiscretization,
    drive_coef: f64,
    psi: &[C64],
    out: &mut [C64],
) {
    let fd = basis.fock_dim;
    let ns = basis.spin.dim();
    let n_atoms = basis.spin.n_atoms();
    for i in 0..basis.dim {
        let m = basis.spin_level(i);
        let mut e = 0.5 * basis.spin.sz_eigenvalue(m);
        for nu in 0..basis.n_modes {
            e += basis.digit(i, nu) as f64 * bath.omegas[nu];
        }
        let mut acc = e * psi[i];

        if drive_coef != 0.0 {
            if m >= 1 {
                acc += drive_coef * basis.spin.raising_amp(m - 1) * psi[i - fd];
            }
            if m + 1 < ns {
                acc += drive_coef * basis.spin.lowering_amp(m + 1) * psi[i + fd];
            }
        }

        for nu in 0..basis.n_modes {
            let n = basis.digit(i, nu);
            let stride = basis.stride(nu);
            // c_nu S_+ a_nu: gather from (m - 1, n + 1)
            if m >= 1 && n + 1 <= basis.cutoff {
                let amp = basis.spin.raising_amp(m - 1) * ((n + 1) as f64).sqrt();
                acc += bath.couplings[nu] * amp * psi[i - fd + stride];
            }
            // conj(c_nu) S_- a_nu^dag: gather from (m + 1, n - 1)
            if m + 1 < ns && n >= 1 {
                let amp = basis.spin.lowering_amp(m + 1) * (n as f64).sqrt();
                acc += bath.couplings[nu].conj() * amp * psi[i + fd - stride];
            }
        }
        out[i] = acc;
    }
    let _ = n_atoms;
}

struct ExactObservables {
    n_mean: f64,
    n_second: f64,
    excited_fraction: f64,
    correlator: f64,
    norm_sq: f64,
}

fn measure(basis: &ProductBasis, psi: &[C64]) -> ExactObservables {
    let fd = basis.fock_dim;
    let ns = basis.spin.dim();
    let n_atoms = basis.spin.n_atoms() as f64;

    let mut norm_sq = 0.0;
    let mut n1 = 0.0;
    let mut n2 = 0.0;
    let mut sz = 0.0;
    let mut s2 = 0.0;
    let mut sm = C64::new(0.0, 0.0);
    for i in 0..basis.dim {
        let p = psi[i].norm_sqr();
        norm_sq += p;
        let n_tot = basis.total_photons(i) as f64;
        n1 += n_tot * p;
        n2 += n_tot * n_tot * p;
        let m = basis.spin_level(i);
        let sz_eig = basis.spin.sz_eigenvalue(m);
        sz += sz_eig * p;
        s2 += sz_eig * sz_eig * p;
        // |S_x psi|^2 + |S_y psi|^2 cross terms cancel in the sum
        if m >= 1 {
            let a = basis.spin.raising_amp(m - 1);
            s2 += 2.0 * a * a * psi[i - fd].norm_sqr();
        }
        if m + 1 < ns {
            let a = basis.spin.lowering_amp(m + 1);
            s2 += 2.0 * a * a * psi[i + fd].norm_sqr();
            sm += psi[i].conj() * a * psi[i + fd];
        }
    }
    let (n1, n2, sz, s2) = (n1 / norm_sq, n2 / norm_sq, sz / norm_sq, s2 / norm_sq);
    let sm = sm / norm_sq;
    let sx = 2.0 * sm.re;
    let sy = -2.0 * sm.im;
    let correlator = if n_atoms < 2.0 {
        f64::NAN
    } else {
        (s2 - 3.0 * n_atoms) / (n_atoms * (n_atoms - 1.0))
            - (sx * sx + sy * sy + sz * sz) / (n_atoms * n_atoms)
    };
    ExactObservables {
        n_mean: n1,
        n_second: n2,
        excited_fraction: 0.5 * (sz / n_atoms + 1.0),
        correlator,
        norm_sq,
    }
}

/// Reduced spin density matrix of the exact state.
pub fn partial_trace_system(psi: &[C64], spin_dim: usize) -> Array2<C64> {
    assert_eq!(psi.len() % spin_dim, 0);
    let fd = psi.len() / spin_dim;
    let norm: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
    let mut rho = Array2::<C64>::zeros((spin_dim, spin_dim));
    for m in 0..spin_dim {
        for mp in 0..spin_dim {
            let mut acc = C64::new(0.0, 0.0);
            for f in 0..fd {
                acc += psi[m * fd + f] * psi[mp * fd + f].conj();
            }
            rho[(m, mp)] = acc / norm;
        }
    }
    rho
}

// Dormand-Prince 5(4) tableau.
const DP_C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const DP_A: [[f64; 6]; 6] = [
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const DP_B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const DP_B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Exact reference run on the recording grid of `params`.
pub fn exact_reference(params: &SimParams, cfg: &OracleConfig) -> Result<OracleSeries> {
    params.validate()?;
    let basis = ProductBasis::new(
        params.n_atoms,
        params.n_modes,
        cfg.mode_cutoff,
        cfg.dim_cap,
    )?;
    if cfg.initial_excited >= basis.spin.dim() {
        return Err(SimError::InvalidParams(format!(
            "initial_excited {} exceeds the spin ladder (N_e = {})",
            cfg.initial_excited, params.n_atoms
        )));
    }
    let bath = discretize_band(params.band, params.n_modes)?;
    let drive = params.drive;

    let dim = basis.dim;
    let mut y = vec![C64::new(0.0, 0.0); dim];
    y[cfg.initial_excited * basis.fock_dim] = C64::new(1.0, 0.0);

    let grid_cycles = params.record_grid_cycles();
    let grid: Vec<f64> = grid_cycles.iter().map(|&c| c * CYCLE).collect();
    let t0 = params.t_start_cycles * CYCLE;
    let t1 = params.t_end_cycles * CYCLE;

    let rhs = |t: f64, y: &[C64], out: &mut [C64]| {
        apply_h(&basis, &bath, drive.eval(t), y, out);
        for z in out.iter_mut() {
            *z *= C64::new(0.0, -1.0);
        }
    };

    let mut series = OracleSeries {
        times_cycles: Vec::new(),
        n_mean: Vec::new(),
        n_second: Vec::new(),
        var_n: Vec::new(),
        excited_fraction: Vec::new(),
        correlator: Vec::new(),
        max_norm_drift: 0.0,
    };
    let mut rec_idx = 0usize;
    let record = |t_cycles: f64, y: &[C64], series: &mut OracleSeries| -> Result<()> {
        let obs = measure(&basis, y);
        let drift = (obs.norm_sq - 1.0).abs();
        if drift > 1e-8 {
            return Err(SimError::OracleNormDrift {
                t_cycles,
                drift,
                limit: 1e-8,
            });
        }
        series.max_norm_drift = series.max_norm_drift.max(drift);
        series.times_cycles.push(t_cycles);
        series.n_mean.push(obs.n_mean);
        series.n_second.push(obs.n_second);
        series.var_n.push(obs.n_second - obs.n_mean * obs.n_mean);
        series.excited_fraction.push(obs.excited_fraction);
        series.correlator.push(obs.correlator);
        Ok(())
    };

    // embedded RK pair with steps clamped onto the recording grid
    let mut k: Vec<Vec<C64>> = (0..7).map(|_| vec![C64::new(0.0, 0.0); dim]).collect();
    let mut y_stage = vec![C64::new(0.0, 0.0); dim];
    let mut y_next = vec![C64::new(0.0, 0.0); dim];

    while rec_idx < grid.len() && grid[rec_idx] <= t0 + 1e-14 * (t1 - t0).max(1.0) {
        record(grid_cycles[rec_idx], &y, &mut series)?;
        rec_idx += 1;
    }

    let mut t = t0;
    rhs(t, &y, &mut k[0]);

    let norm_y = |v: &[C64]| (v.iter().map(|z| z.norm_sqr()).sum::<f64>()).sqrt();
    let mut h = {
        let fy = norm_y(&k[0]);
        let yy = norm_y(&y).max(1e-12);
        (0.01 * yy / fy.max(1e-12)).min((t1 - t0) / 10.0).max(1e-10)
    };
    let end_eps = 1e-14 * (t1 - t0).max(t1.abs());
    let mut fsal_valid = true;

    while t < t1 - end_eps {
        let mut h_try = h.min(t1 - t);
        if rec_idx < grid.len() {
            let next_rec = grid[rec_idx];
            if next_rec - t > end_eps {
                h_try = h_try.min(next_rec - t);
            }
        }

        if !fsal_valid {
            rhs(t, &y, &mut k[0]);
            fsal_valid = true;
        }

        for stage in 1..7 {
            for i in 0..dim {
                let mut acc = y[i];
                for (j, a) in DP_A[stage - 1].iter().enumerate().take(stage) {
                    if *a != 0.0 {
                        acc += h_try * a * k[j][i];
                    }
                }
                y_stage[i] = acc;
            }
            let ts = t + DP_C[stage] * h_try;
            let (left, right) = k.split_at_mut(stage);
            let _ = left;
            rhs(ts, &y_stage, &mut right[0]);
        }

        let mut err_sq = 0.0;
        for i in 0..dim {
            let mut y5 = y[i];
            let mut e = C64::new(0.0, 0.0);
            for j in 0..7 {
                if DP_B5[j] != 0.0 {
                    y5 += h_try * DP_B5[j] * k[j][i];
                }
                let db = DP_B5[j] - DP_B4[j];
                if db != 0.0 {
                    e += h_try * db * k[j][i];
                }
            }
            y_next[i] = y5;
            let scale = cfg.atol + cfg.rtol * y[i].norm();
            let r = e.norm() / scale;
            err_sq += r * r;
        }
        let err = (err_sq / dim as f64).sqrt();

        if err.is_finite() && err <= 1.0 {
            t += h_try;
            std::mem::swap(&mut y, &mut y_next);
            // FSAL: last stage evaluation is the next first stage
            let (head, tail) = k.split_at_mut(6);
            std::mem::swap(&mut head[0], &mut tail[0]);
            while rec_idx < grid.len() && (grid[rec_idx] - t).abs() <= end_eps {
                record(grid_cycles[rec_idx], &y, &mut series)?;
                rec_idx += 1;
            }
            let factor = (0.9 * err.max(1e-12).powf(-0.2)).clamp(0.2, 5.0);
            h = h_try * factor;
        } else {
            let factor = if err.is_finite() {
                (0.9 * err.powf(-0.2)).clamp(0.2, 1.0)
            } else {
                0.5
            };
            h = h_try * factor;
            fsal_valid = false;
            if h < 1e-12 {
                return Err(SimError::StepSizeUnderflow {
                    t_cycles: t / CYCLE,
                    h,
                    min: 1e-12,
                });
            }
        }
    }
    while rec_idx < grid.len() {
        record(grid_cycles[rec_idx], &y, &mut series)?;
        rec_idx += 1;
    }
    Ok(series)
}

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct CompareRow {
    pub t_cycles: f64,
    pub z_n_mean: f64,
    pub z_excited: f64,
}

/// z-scores of batch estimates against the exact curves.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    pub max_abs_z_n_mean: f64,
    pub max_abs_z_excited: f64,
    /// Relative photon-number error where the exact curve peaks.
    pub rel_err_at_peak: f64,
    pub peak_index: usize,
    pub peak_t_cycles: f64,
}

fn z_score(estimate: f64, se: f64, exact: f64) -> f64 {
    let diff = estimate - exact;
    if se > 0.0 && se.is_finite() {
        diff / se
    } else if diff.abs() < 1e-12 {
        0.0
    } else {
        f64::INFINITY
    }
}

pub fn compare_runs(series: &ObservableSeries, oracle: &OracleSeries) -> Result<CompareReport> {
    if series.points.len() != oracle.times_cycles.len() {
        return Err(SimError::GridMismatch(format!(
            "{} batch recordings vs {} exact recordings",
            series.points.len(),
            oracle.times_cycles.len()
        )));
    }
    let mut rows = Vec::with_capacity(series.points.len());
    let mut max_n: f64 = 0.0;
    let mut max_e: f64 = 0.0;
    for (p, (&t, (&n_exact, &x_exact))) in series.points.iter().zip(
        oracle
            .times_cycles
            .iter()
            .zip(oracle.n_mean.iter().zip(&oracle.excited_fraction)),
    ) {
        if (p.t_cycles - t).abs() > 1e-9 * t.abs().max(1.0) {
            return Err(SimError::GridMismatch(format!(
                "recording times diverge: {} vs {}",
                p.t_cycles, t
            )));
        }
        let zn = z_score(p.n_mean, p.n_mean_se, n_exact);
        let zx = z_score(p.excited_fraction, p.excited_fraction_se, x_exact);
        max_n = max_n.max(zn.abs());
        max_e = max_e.max(zx.abs());
        rows.push(CompareRow {
            t_cycles: t,
            z_n_mean: zn,
            z_excited: zx,
        });
    }

    let peak_index = oracle
        .n_mean
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
        .map(|(i, _)| i)
        .unwrap_or(0);
    let n_exact_peak = oracle.n_mean[peak_index];
    let rel_err_at_peak = if n_exact_peak > 0.0 {
        (series.points[peak_index].n_mean - n_exact_peak).abs() / n_exact_peak
    } else {
        f64::NAN
    };

    Ok(CompareReport {
        rows,
        max_abs_z_n_mean: max_n,
        max_abs_z_excited: max_e,
        rel_err_at_peak,
        peak_index,
        peak_t_cycles: oracle.times_cycles[peak_index],
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    use crate::bath::{BandParams, DriveWaveform};
    use crate::dynamics::FailurePolicy;
    use crate::integrator::StepController;
    use crate::observables::SeriesPoint;
    use approx::assert_abs_diff_eq;

    fn base_params() -> SimParams {
        SimParams {
            n_atoms: 1,
            n_modes: 1,
            max_total_photons: 1,
            n_batch: 1,
            band: BandParams {
                epsilon: 1.0,
                hopping: 0.3,
                coupling: 0.05,
            },
            drive: DriveWaveform {
                amplitude: 0.0,
                ..DriveWaveform::default()
            },
            t_start_cycles: 0.0,
            t_end_cycles: 4.0,
            record_interval_cycles: 0.125,
            seed: 1,
            controller: StepController::default_double(),
            failure_policy: FailurePolicy::Abort,
        }
    }

    #[test]
    fn resonant_single_mode_vacuum_oscillation() {
        // one mode at the band center sits exactly at the qubit splitting;
        // starting from |e, vac> the excitation swaps at the coupling rate
        let params = base_params();
        let cfg = OracleConfig {
            mode_cutoff: 1,
            initial_excited: 1,
            ..OracleConfig::default()
        };
        let series = exact_reference(&params, &cfg).unwrap();
        let g = params.band.coupling * 2.0f64.sqrt(); // single midpoint node
        for (&t_cycles, &pe) in series.times_cycles.iter().zip(&series.excited_fraction) {
            let t = t_cycles * CYCLE;
            let expect = (g * t).cos().powi(2);
            assert!(
                (pe - expect).abs() < 1e-7,
                "t = {t_cycles}: P_e = {pe} vs {expect}"
            );
        }
        // photon number is the complementary probability
        for (&ne, &pe) in series.n_mean.iter().zip(&series.excited_fraction) {
            assert_abs_diff_eq!(ne, 1.0 - pe, epsilon = 1e-7);
        }
    }

    #[test]
    fn norm_is_conserved_through_a_driven_pulse() {
        let mut params = base_params();
        params.n_atoms = 2;
        // band detuned above the splitting, the protected regime where the
        // pulse hands the atoms back
        params.band.epsilon = 2.0;
        params.drive = DriveWaveform::default();
        params.t_end_cycles = 8.0;
        params.record_interval_cycles = 0.5;
        let cfg = OracleConfig {
            mode_cutoff: 2,
            ..OracleConfig::default()
        };
        let series = exact_reference(&params, &cfg).unwrap();
        assert!(
            series.max_norm_drift < 1e-8,
            "norm drift {}",
            series.max_norm_drift
        );
        // the pulse has area 2 pi per atom: the atoms return to the ground
        // state apart from the weak emission losses
        let last = *series.excited_fraction.last().unwrap();
        assert!(last < 0.05, "residual excitation {last}");
    }

    #[test]
    fn undriven_excited_atom_conserves_energy_flow() {
        // with no drive the total excitation number (atoms + photons) is a
        // constant of motion for this interaction
        let mut params = base_params();
        params.band.coupling = 0.08;
        params.t_end_cycles = 6.0;
        let cfg = OracleConfig {
            mode_cutoff: 1,
            initial_excited: 1,
            ..OracleConfig::default()
        };
        let series = exact_reference(&params, &cfg).unwrap();
        for k in 0..series.times_cycles.len() {
            let total = series.excited_fraction[k] * params.n_atoms as f64 + series.n_mean[k];
            assert_abs_diff_eq!(total, 1.0, epsilon = 1e-8);
        }
    }

    #[test]
    fn mode_cutoff_ladder_converges() {
        let mut params = base_params();
        params.n_atoms = 2;
        params.n_modes = 2;
        params.band.coupling = 0.15;
        params.drive = DriveWaveform::default();
        params.t_end_cycles = 4.0;
        params.record_interval_cycles = 0.25;

        let run = |cutoff: usize| {
            let cfg = OracleConfig {
                mode_cutoff: cutoff,
                ..OracleConfig::default()
            };
            exact_reference(&params, &cfg).unwrap().n_mean
        };
        let coarse = run(1);
        let mid = run(2);
        let fine = run(3);
        let dist = |a: &[f64], b: &[f64]| {
            a.iter()
                .zip(b)
                .map(|(x, y)| (x - y).abs())
                .fold(0.0f64, f64::max)
        };
        let d01 = dist(&coarse, &mid);
        let d12 = dist(&mid, &fine);
        assert!(
            d12 < 0.5 * d01,
            "cutoff ladder not contracting: {d01:.3e} then {d12:.3e}"
        );
        assert!(d12 < 5e-3, "cutoff 2 -> 3 still moves by {d12:.3e}");
    }

    #[test]
    fn dimension_cap_is_enforced() {
        let mut params = base_params();
        params.n_modes = 8;
        let cfg = OracleConfig {
            mode_cutoff: 5,
            ..OracleConfig::default()
        };
        match exact_reference(&params, &cfg) {
            Err(SimError::OracleDimCap { .. }) => {}
            other => panic!("expected dimension cap error, got {other:?}"),
        }
    }

    #[test]
    fn partial_trace_is_a_density_matrix() {
        let params = base_params();
        let cfg = OracleConfig {
            mode_cutoff: 1,
            initial_excited: 1,
            ..OracleConfig::default()
        };
        // evolve by hand to an entangled point, then trace
        let basis = ProductBasis::new(1, 1, 1, 1000).unwrap();
        let bath = discretize_band(params.band, 1).unwrap();
        let mut psi = vec![C64::new(0.0, 0.0); basis.dim];
        psi[basis.fock_dim] = C64::new(1.0, 0.0);
        // crude fixed-step evolution is fine for constructing a state
        let mut out = vec![C64::new(0.0, 0.0); basis.dim];
        let h = 1e-3;
        for step in 0..4000 {
            let t = step as f64 * h;
            apply_h(&basis, &bath, params.drive.eval(t), &psi, &mut out);
            for i in 0..basis.dim {
                psi[i] -= C64::new(0.0, 1.0) * h * out[i];
            }
            let n: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
            let s = 1.0 / n.sqrt();
            for z in psi.iter_mut() {
                *z *= s;
            }
        }
        let rho = partial_trace_system(&psi, 2);
        let trace = rho[(0, 0)].re + rho[(1, 1)].re;
        assert_abs_diff_eq!(trace, 1.0, epsilon = 1e-10);
        assert!((rho[(0, 1)] - rho[(1, 0)].conj()).norm() < 1e-12);
        assert!(rho[(0, 0)].re >= 0.0 && rho[(1, 1)].re >= 0.0);
        let _ = cfg;
    }

    fn synthetic_series(oracle: &OracleSeries, offset_sigmas: f64, se: f64) -> ObservableSeries {
        let points = oracle
            .times_cycles
            .iter()
            .zip(oracle.n_mean.iter().zip(&oracle.excited_fraction))
            .map(|(&t, (&n, &x))| SeriesPoint {
                t_cycles: t,
                n_mean: n + offset_sigmas * se,
                n_mean_se: se,
                n_second: 0.0,
                n_second_se: 0.0,
                var_n: 0.0,
                var_n_se: 0.0,
                dispersion: 0.0,
                dispersion_se: 0.0,
                dispersion_masked: true,
                correlator: 0.0,
                correlator_se: 0.0,
                excited_fraction: x,
                excited_fraction_se: se,
                emission_rate: 0.0,
                emission_rate_se: 0.0,
            })
            .collect();
        ObservableSeries { points }
    }

    #[test]
    fn comparison_scores_offsets_in_standard_errors() {
        let params = base_params();
        let cfg = OracleConfig {
            mode_cutoff: 1,
            initial_excited: 1,
            ..OracleConfig::default()
        };
        let oracle = exact_reference(&params, &cfg).unwrap();

        let honest = synthetic_series(&oracle, 0.0, 1e-3);
        let report = compare_runs(&honest, &oracle).unwrap();
        assert!(report.max_abs_z_n_mean < 1e-9);
        assert!(report.max_abs_z_excited < 1e-9);

        let shifted = synthetic_series(&oracle, 4.0, 1e-3);
        let report = compare_runs(&shifted, &oracle).unwrap();
        assert!(
            (report.max_abs_z_n_mean - 4.0).abs() < 1e-9,
            "z = {}",
            report.max_abs_z_n_mean
        );

        // mismatched grids must be rejected loudly
        let mut truncated = synthetic_series(&oracle, 0.0, 1e-3);
        truncated.points.pop();
        assert!(matches!(
            compare_runs(&truncated, &oracle),
            Err(SimError::GridMismatch(_))
        ));
    }

    #[test]
    fn annihilator_ordering_identity_holds() {
        // <a a^dag> = <n> + 1 checked by explicit ladder application on a
        // weakly excited state, where the cutoff loss is negligible
        let params = base_params();
        let cfg = OracleConfig {
            mode_cutoff: 3,
            initial_excited: 1,
            ..OracleConfig::default()
        };
        let mut p = params.clone();
        p.band.coupling = 0.02;
        p.t_end_cycles = 1.0;
        let oracle = exact_reference(&p, &cfg).unwrap();
        let n_final = *oracle.n_mean.last().unwrap();
        assert!(n_final < 0.1, "state not weakly excited: {n_final}");

        // rebuild the final state by a short fixed-step evolution and apply
        // the ladder identity directly
        let basis = ProductBasis::new(1, 1, 3, 1000).unwrap();
        let bath = discretize_band(p.band, 1).unwrap();
        let mut psi = vec![C64::new(0.0, 0.0); basis.dim];
        psi[basis.fock_dim] = C64::new(1.0, 0.0);
        let mut out = vec![C64::new(0.0, 0.0); basis.dim];
        let steps = 60_000;
        let h = p.t_end_cycles * CYCLE / steps as f64;
        for step in 0..steps {
            let t = step as f64 * h;
            // midpoint rule keeps the crude propagator honest enough
            apply_h(&basis, &bath, p.drive.eval(t + 0.5 * h), &psi, &mut out);
            let mut mid = psi.clone();
            for i in 0..basis.dim {
                mid[i] -= C64::new(0.0, 0.5) * h * out[i];
            }
            apply_h(&basis, &bath, p.drive.eval(t + 0.5 * h), &mid, &mut out);
            for i in 0..basis.dim {
                psi[i] -= C64::new(0.0, 1.0) * h * out[i];
            }
            let n: f64 = psi.iter().map(|z| z.norm_sqr()).sum();
            let s = 1.0 / n.sqrt();
            for z in psi.iter_mut() {
                *z *= s;
            }
        }
        // <n> from digits
        let n_mean: f64 = (0..basis.dim)
            .map(|i| basis.digit(i, 0) as f64 * psi[i].norm_sqr())
            .sum();
        // <a a^dag> = ||a^dag psi||^2 with the cutoff edge unoccupied
        let mut aa = 0.0;
        for i in 0..basis.dim {
            let n = basis.digit(i, 0);
            if n + 1 <= basis.cutoff {
                aa += (n as f64 + 1.0) * psi[i].norm_sqr();
            }
        }
        assert!(
            (aa - (n_mean + 1.0)).abs() < 1e-6,
            "<a a^dag> = {aa} vs <n> + 1 = {}",
            n_mean + 1.0
        );
    }
}
