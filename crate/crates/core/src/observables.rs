//! Batch estimators for photonic and atomic observables.
//!
//! Photon statistics come from the noise amplitudes alone: for the
//! conditional ensemble the alpha marginal samples the antinormally ordered
//! moments, so E[|alpha_nu|^2] = <n_nu> + 1 and every photon moment follows
//! from polynomial combinations of ||alpha||^2 with the mode count
//! subtracted.  Atomic observables are per-trajectory normalized
//! expectations averaged over the batch.  All standard errors are delete-one
//! jackknife estimates, which handle the nonlinear combinations (variance,
//! relative dispersion, pair correlator) without ad hoc error propagation.

use ndarray::Array2;

use crate::dynamics::{BatchRecorder, BatchView, NORM_SQ_FLOOR};
use crate::hilbert::C64;
use crate::scalar::Real;

/// Relative dispersion is flagged unreliable when the mean photon number is
/// within this many standard errors of zero.
pub const DISPERSION_MASK_SIGMAS: f64 = 10.0;

/// Delete-one jackknife for a smooth statistic of column means.
///
/// `columns` holds K equal-length sample columns; `theta` maps the K means
/// to the statistic.  Returns the plug-in estimate and its jackknife
/// standard error in O(n K) time.
pub fn jackknife<F>(columns: &[&[f64]], theta: F) -> (f64, f64)
where
    F: Fn(&[f64]) -> f64,
{
    let k = columns.len();
    assert!(k > 0, "jackknife needs at least one column");
    let n = columns[0].len();
    for c in columns {
        assert_eq!(c.len(), n, "jackknife columns must have equal length");
    }
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }

    let totals: Vec<f64> = columns.iter().map(|c| c.iter().sum()).collect();
    let means: Vec<f64> = totals.iter().map(|t| t / n as f64).collect();
    let estimate = theta(&means);
    if n == 1 {
        return (estimate, 0.0);
    }

    let mut loo = vec![0.0f64; k];
    let mut thetas = Vec::with_capacity(n);
    let denom = (n - 1) as f64;
    for i in 0..n {
        for (j, c) in columns.iter().enumerate() {
            loo[j] = (totals[j] - c[i]) / denom;
        }
        thetas.push(theta(&loo));
    }
    let mean_theta: f64 = thetas.iter().sum::<f64>() / n as f64;
    let ss: f64 = thetas.iter().map(|t| (t - mean_theta).powi(2)).sum();
    let se = (denom / n as f64 * ss).sqrt();
    (estimate, se)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PhotonMoments {
    /// Total photon number across all modes.
    pub n_mean: f64,
    pub n_mean_se: f64,
    /// Second moment <n^2>.
    pub n_second: f64,
    pub n_second_se: f64,
    pub var_n: f64,
    pub var_n_se: f64,
    /// Var(n) / <n>.
    pub dispersion: f64,
    pub dispersion_se: f64,
    /// True when <n> is too close to zero for the ratio to mean anything.
    pub dispersion_masked: bool,
}

/// Photon-number samples u = ||alpha||^2 - N_modes per trajectory, with NaN
/// for inactive trajectories.
pub fn photon_number_samples<R: Real>(view: &BatchView<'_, R>) -> Vec<f64> {
    let nb = view.n_batch;
    let mut u = vec![0.0f64; nb];
    for nu in 0..view.n_modes {
        let row = view.alpha_row(nu);
        for (acc, z) in u.iter_mut().zip(row) {
            *acc += z.norm_sqr().to_f64();
        }
    }
    for (xi, acc) in u.iter_mut().enumerate() {
        if view.active[xi] {
            *acc -= view.n_modes as f64;
        } else {
            *acc = f64::NAN;
        }
    }
    u
}

/// Photon moments from pre-extracted u = ||alpha||^2 - N_modes samples.
/// The mode count enters once more because the antinormal second moment
/// carries a residual single-power term: <n^2> = E[u^2] - E[u + N_modes].
pub fn photon_moments_from_u(u: &[f64], n_modes: usize) -> PhotonMoments {
    let x1: Vec<f64> = u.to_vec();
    let x2: Vec<f64> = u
        .iter()
        .map(|&v| v * v - (v + n_modes as f64))
        .collect();
    let cols = [x1.as_slice(), x2.as_slice()];

    let (n_mean, n_mean_se) = jackknife(&cols[..1], |m| m[0]);
    let (n_second, n_second_se) = jackknife(&cols[1..], |m| m[0]);
    let (var_n, var_n_se) = jackknife(&cols, |m| m[1] - m[0] * m[0]);
    let (dispersion, dispersion_se) = jackknife(&cols, |m| (m[1] - m[0] * m[0]) / m[0]);
    let dispersion_masked = !(n_mean.abs() > DISPERSION_MASK_SIGMAS * n_mean_se);

    PhotonMoments {
        n_mean,
        n_mean_se,
        n_second,
        n_second_se,
        var_n,
        var_n_se,
        dispersion,
        dispersion_se,
        dispersion_masked,
    }
}

pub fn photon_moments<R: Real>(view: &BatchView<'_, R>) -> PhotonMoments {
    let u: Vec<f64> = photon_number_samples(view)
        .into_iter()
        .filter(|v| v.is_finite())
        .collect();
    photon_moments_from_u(&u, view.n_modes)
}

/// Per-trajectory normalized spin moments, computed in fused sweeps over the
/// batched state.  Inactive or collapsed trajectories get NaN.
#[derive(Debug, Clone)]
pub struct BatchSpinMoments {
    pub norms: Vec<f64>,
    /// <S_->; <S_x> = 2 Re, <S_y> = -2 Im.
    pub sm: Vec<C64>,
    pub sz: Vec<f64>,
    /// <S_x^2 + S_y^2 + S_z^2>; equals N_e (N_e + 2) identically on the
    /// symmetric sector, a useful built-in consistency check.
    pub s2: Vec<f64>,
}

pub fn batch_spin_moments<R: Real>(view: &BatchView<'_, R>) -> BatchSpinMoments {
    let nb = view.n_batch;
    let dim = view.dim();
    let fd = view.basis.fock.dim();
    let ns = view.basis.spin.dim();
    let n_atoms = view.basis.spin.n_atoms();
    let psi = view.psi();

    let mut norms = vec![0.0f64; nb];
    let mut sm = vec![C64::new(0.0, 0.0); nb];
    let mut szn = vec![0.0f64; nb];
    let mut s2n = vec![0.0f64; nb];

    for row in 0..dim {
        let m = row / fd;
        let here = &psi[row * nb..(row + 1) * nb];
        let sz_eig = view.basis.spin.sz_eigenvalue(m);

        // ladder amplitudes into this row
        let a_up = if m >= 1 {
            view.basis.spin.raising_amp(m - 1)
        } else {
            0.0
        };
        let a_down = if m + 1 < ns {
            view.basis.spin.lowering_amp(m + 1)
        } else {
            0.0
        };

        for xi in 0..nb {
            let z = here[xi];
            let p = z.norm_sqr().to_f64();
            norms[xi] += p;
            szn[xi] += sz_eig * p;
            // |S_x psi|^2 + |S_y psi|^2 has no cross terms between the two
            // gathered neighbors, so it reduces to weighted populations
            s2n[xi] += sz_eig * sz_eig * p;
        }
        if a_up > 0.0 {
            let below = &psi[(row - fd) * nb..(row - fd + 1) * nb];
            for xi in 0..nb {
                s2n[xi] += 2.0 * a_up * a_up * below[xi].norm_sqr().to_f64();
            }
        }
        if a_down > 0.0 {
            let above = &psi[(row + fd) * nb..(row + fd + 1) * nb];
            for xi in 0..nb {
                s2n[xi] += 2.0 * a_down * a_down * above[xi].norm_sqr().to_f64();
                let zc = C64::new(here[xi].re.to_f64(), -here[xi].im.to_f64());
                let up = C64::new(above[xi].re.to_f64(), above[xi].im.to_f64());
                sm[xi] += zc * a_down * up;
            }
        }
    }
    let _ = n_atoms;

    for xi in 0..nb {
        let n = norms[xi];
        if view.active[xi] && n.is_finite() && n > NORM_SQ_FLOOR {
            sm[xi] /= n;
            szn[xi] /= n;
            s2n[xi] /= n;
        } else {
            sm[xi] = C64::new(f64::NAN, f64::NAN);
            szn[xi] = f64::NAN;
            s2n[xi] = f64::NAN;
        }
    }

    BatchSpinMoments {
        norms,
        sm,
        sz: szn,
        s2: s2n,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SpinObservables {
    /// Connected pair correlator: (<S^2> - 3N)/(N(N-1)) minus the squared
    /// mean polarization |<S/N>|^2; zero for every product state, NaN for a
    /// single atom.
    pub correlator: f64,
    pub correlator_se: f64,
    /// Mean excited-state population per atom, in [0, 1].
    pub excited_fraction: f64,
    pub excited_fraction_se: f64,
}

pub fn spin_observables<R: Real>(view: &BatchView<'_, R>) -> SpinObservables {
    let moments = batch_spin_moments(view);
    let n_atoms = view.basis.spin.n_atoms() as f64;

    let mut sx = Vec::new();
    let mut sy = Vec::new();
    let mut sz = Vec::new();
    let mut s2 = Vec::new();
    for xi in 0..view.n_batch {
        if !view.active[xi] || !moments.sz[xi].is_finite() {
            continue;
        }
        sx.push(2.0 * moments.sm[xi].re);
        sy.push(-2.0 * moments.sm[xi].im);
        sz.push(moments.sz[xi]);
        s2.push(moments.s2[xi]);
    }

    let cols = [sx.as_slice(), sy.as_slice(), sz.as_slice(), s2.as_slice()];
    let (excited_fraction, excited_fraction_se) =
        jackknife(&cols[2..3], |m| 0.5 * (m[0] / n_atoms + 1.0));

    let (correlator, correlator_se) = if n_atoms < 2.0 {
        (f64::NAN, f64::NAN)
    } else {
        jackknife(&cols, |m| {
            let pair = (m[3] - 3.0 * n_atoms) / (n_atoms * (n_atoms - 1.0));
            let pol = (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]) / (n_atoms * n_atoms);
            pair - pol
        })
    };

    SpinObservables {
        correlator,
        correlator_se,
        excited_fraction,
        excited_fraction_se,
    }
}

/// Reduced spin density matrix: batch mean of the Fock-traced normalized
/// projectors, hermitized.  Row and column indices count excited atoms.
pub fn estimate_rho_system<R: Real>(view: &BatchView<'_, R>) -> Array2<C64> {
    let nb = view.n_batch;
    let fd = view.basis.fock.dim();
    let ns = view.basis.spin.dim();
    let psi = view.psi();
    let norms = view.norms_sq();

    let mut rho = Array2::<C64>::zeros((ns, ns));
    let mut n_used = 0usize;
    let usable: Vec<bool> = (0..nb)
        .map(|xi| view.active[xi] && norms[xi].is_finite() && norms[xi] > NORM_SQ_FLOOR)
        .collect();
    n_used += usable.iter().filter(|u| **u).count();

    for m in 0..ns {
        for mp in 0..=m {
            let mut acc = C64::new(0.0, 0.0);
            for f in 0..fd {
                let row_m = &psi[(m * fd + f) * nb..(m * fd + f + 1) * nb];
                let row_mp = &psi[(mp * fd + f) * nb..(mp * fd + f + 1) * nb];
                for xi in 0..nb {
                    if !usable[xi] {
                        continue;
                    }
                    let a = C64::new(row_m[xi].re.to_f64(), row_m[xi].im.to_f64());
                    let b = C64::new(row_mp[xi].re.to_f64(), -row_mp[xi].im.to_f64());
                    acc += a * b / norms[xi];
                }
            }
            acc /= n_used.max(1) as f64;
            rho[(m, mp)] = acc;
            rho[(mp, m)] = acc.conj();
        }
    }
    for m in 0..ns {
        rho[(m, m)] = C64::new(rho[(m, m)].re, 0.0);
    }
    rho
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GridSpec {
    pub re_min: f64,
    pub re_max: f64,
    pub im_min: f64,
    pub im_max: f64,
    pub n_re: usize,
    pub n_im: usize,
}

impl GridSpec {
    /// Grid covering the central 99% of the samples with 10% padding.
    pub fn auto(samples: &[C64], n_re: usize, n_im: usize) -> Self {
        let mut res: Vec<f64> = samples.iter().map(|z| z.re).filter(|v| v.is_finite()).collect();
        let mut ims: Vec<f64> = samples.iter().map(|z| z.im).filter(|v| v.is_finite()).collect();
        let quantile_span = |v: &mut Vec<f64>| -> (f64, f64) {
            if v.is_empty() {
                return (-1.0, 1.0);
            }
            v.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let lo = v[((v.len() - 1) as f64 * 0.005).round() as usize];
            let hi = v[((v.len() - 1) as f64 * 0.995).round() as usize];
            let pad = 0.1 * (hi - lo).max(1e-6) + 0.5;
            (lo - pad, hi + pad)
        };
        let (re_min, re_max) = quantile_span(&mut res);
        let (im_min, im_max) = quantile_span(&mut ims);
        Self {
            re_min,
            re_max,
            im_min,
            im_max,
            n_re,
            n_im,
        }
    }

    pub fn bin_area(&self) -> f64 {
        let dre = (self.re_max - self.re_min) / self.n_re as f64;
        let dim = (self.im_max - self.im_min) / self.n_im as f64;
        dre * dim
    }
}

/// Phase-space density of one mode's noise amplitudes, normalized so the sum
/// of density * bin_area equals the in-range sample fraction.
#[derive(Debug, Clone)]
pub struct HusimiMap {
    pub grid: GridSpec,
    /// Indexed [im_bin, re_bin].
    pub density: Array2<f64>,
}

pub fn husimi_marginal(samples: &[C64], grid: GridSpec) -> HusimiMap {
    let mut density = Array2::<f64>::zeros((grid.n_im, grid.n_re));
    let dre = (grid.re_max - grid.re_min) / grid.n_re as f64;
    let dim = (grid.im_max - grid.im_min) / grid.n_im as f64;
    let mut n_total = 0usize;
    for z in samples {
        if !z.re.is_finite() || !z.im.is_finite() {
            continue;
        }
        n_total += 1;
        let i = ((z.re - grid.re_min) / dre).floor();
        let j = ((z.im - grid.im_min) / dim).floor();
        if i < 0.0 || j < 0.0 {
            continue;
        }
        let (i, j) = (i as usize, j as usize);
        if i >= grid.n_re || j >= grid.n_im {
            continue;
        }
        density[(j, i)] += 1.0;
    }
    if n_total > 0 {
        let w = 1.0 / (n_total as f64 * grid.bin_area());
        density.mapv_inplace(|v| v * w);
    }
    HusimiMap { grid, density }
}

impl HusimiMap {
    /// In-place separable Gaussian blur; sigma in bins.  The kernel is
    /// renormalized at the edges so total mass is preserved.
    pub fn smooth(&mut self, sigma_bins: f64) {
        if !(sigma_bins > 0.0) {
            return;
        }
        let radius = (4.0 * sigma_bins).ceil() as isize;
        let kernel: Vec<f64> = (-radius..=radius)
            .map(|d| (-0.5 * (d as f64 / sigma_bins).powi(2)).exp())
            .collect();

        let blur_axis = |data: &Array2<f64>, along_rows: bool| -> Array2<f64> {
            let (ni, nr) = data.dim();
            let mut out = Array2::<f64>::zeros((ni, nr));
            for j in 0..ni {
                for i in 0..nr {
                    let mut acc = 0.0;
                    let mut wsum = 0.0;
                    for (ki, w) in kernel.iter().enumerate() {
                        let d = ki as isize - radius;
                        let (jj, ii) = if along_rows {
                            (j as isize, i as isize + d)
                        } else {
                            (j as isize + d, i as isize)
                        };
                        if jj < 0 || ii < 0 || jj >= ni as isize || ii >= nr as isize {
                            continue;
                        }
                        acc += w * data[(jj as usize, ii as usize)];
                        wsum += w;
                    }
                    out[(j, i)] = if wsum > 0.0 { acc / wsum } else { 0.0 };
                }
            }
            out
        };
        self.density = blur_axis(&blur_axis(&self.density, true), false);
    }

    pub fn total_mass(&self) -> f64 {
        self.density.sum() * self.grid.bin_area()
    }
}

/// One row of the assembled time series; field order mirrors the CSV schema.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SeriesPoint {
    pub t_cycles: f64,
    pub n_mean: f64,
    pub n_mean_se: f64,
    pub n_second: f64,
    pub n_second_se: f64,
    pub var_n: f64,
    pub var_n_se: f64,
    pub dispersion: f64,
    pub dispersion_se: f64,
    pub dispersion_masked: bool,
    pub correlator: f64,
    pub correlator_se: f64,
    pub excited_fraction: f64,
    pub excited_fraction_se: f64,
    /// d<n>/dt in photons per laser cycle, centered differences inside the
    /// grid, one-sided at the ends.
    pub emission_rate: f64,
    pub emission_rate_se: f64,
}

#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct ObservableSeries {
    pub points: Vec<SeriesPoint>,
}

impl ObservableSeries {
    /// Index of the recording with the largest mean photon number.
    pub fn peak_index(&self) -> Option<usize> {
        self.points
            .iter()
            .enumerate()
            .filter(|(_, p)| p.n_mean.is_finite())
            .max_by(|a, b| a.1.n_mean.partial_cmp(&b.1.n_mean).unwrap())
            .map(|(i, _)| i)
    }
}

/// Recorder that turns batch snapshots into the observable time series.
/// Emission rates need photon samples from neighboring times, so they are
/// filled in by `finish`.
#[derive(Default)]
pub struct SeriesRecorder {
    times: Vec<f64>,
    photon: Vec<PhotonMoments>,
    spin: Vec<SpinObservables>,
    u_rows: Vec<Vec<f64>>,
}

impl SeriesRecorder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Jackknifed mean of per-trajectory difference quotients between two
    /// recordings, using trajectories alive at both.
    fn rate_between(&self, k0: usize, k1: usize) -> (f64, f64) {
        let dt = self.times[k1] - self.times[k0];
        if !(dt > 0.0) {
            return (f64::NAN, f64::NAN);
        }
        let rates: Vec<f64> = self.u_rows[k0]
            .iter()
            .zip(&self.u_rows[k1])
            .filter(|(a, b)| a.is_finite() && b.is_finite())
            .map(|(a, b)| (b - a) / dt)
            .collect();
        jackknife(&[rates.as_slice()], |m| m[0])
    }

    pub fn finish(self) -> ObservableSeries {
        let n = self.times.len();
        let mut points = Vec::with_capacity(n);
        for k in 0..n {
            let (rate, rate_se) = if n < 2 {
                (f64::NAN, f64::NAN)
            } else if k == 0 {
                self.rate_between(0, 1)
            } else if k == n - 1 {
                self.rate_between(n - 2, n - 1)
            } else {
                self.rate_between(k - 1, k + 1)
            };
            let p = self.photon[k];
            let s = self.spin[k];
            points.push(SeriesPoint {
                t_cycles: self.times[k],
                n_mean: p.n_mean,
                n_mean_se: p.n_mean_se,
                n_second: p.n_second,
                n_second_se: p.n_second_se,
                var_n: p.var_n,
                var_n_se: p.var_n_se,
                dispersion: p.dispersion,
                dispersion_se: p.dispersion_se,
                dispersion_masked: p.dispersion_masked,
                correlator: s.correlator,
                correlator_se: s.correlator_se,
                excited_fraction: s.excited_fraction,
                excited_fraction_se: s.excited_fraction_se,
                emission_rate: rate,
                emission_rate_se: rate_se,
            });
        }
        ObservableSeries { points }
    }
}

impl<R: Real> BatchRecorder<R> for SeriesRecorder {
    fn record(&mut self, t_cycles: f64, view: &BatchView<'_, R>) {
        self.times.push(t_cycles);
        self.photon.push(photon_moments(view));
        self.spin.push(spin_observables(view));
        self.u_rows.push(photon_number_samples(view));
    }
}
