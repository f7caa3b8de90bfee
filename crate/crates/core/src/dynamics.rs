//! Batched propagation of conditional trajectories.
//!
//! Each trajectory pairs an unnormalized system wavefunction psi (collective
//! spin x truncated Fock) with one complex amplitude alpha_nu per bath mode.
//! They evolve under the coupled, deliberately non-Hermitian equations
//!
//! ```text
//! d psi / dt   = -i [ H_S(t) + H_B + H_I ] psi
//!                - i lambda S_- psi
//!                + i conj(<S_->) sum_nu c_nu a_nu psi
//! d alpha_nu / dt = -i ( omega_nu alpha_nu + conj(c_nu) <S_-> )
//! ```
//!
//! with lambda = sum_nu conj(c_nu) conj(alpha_nu) and <S_-> the normalized
//! expectation in psi.  The missing Hermitian conjugates are intentional:
//! the noise enters through S_- only, and the annihilator subtraction keeps
//! the conditional field centered.
//!
//! The whole batch advances in lockstep with one shared adaptive step; the
//! state is stored row-major with the batch index fastest, so per-row work
//! vectorizes across trajectories and all batch reductions run over fixed
//! chunk boundaries (results do not depend on thread count).

use std::sync::Arc;
use std::time::Instant;

use num_complex::Complex;
use rayon::prelude::*;

use crate::bath::{discretize_band, BandParams, DriveWaveform, VacuumSampler, CYCLE};
use crate::error::{Result, SimError};
use crate::hilbert::{inner, CompositeBasis, SpinOp, StateVector, C64, NO_STATE};
use crate::integrator::{integrate_adaptive, IntegrationReport, OdeSystem, StepController};
use crate::scalar::{mul_neg_i, Real};

/// Below this squared norm a conditional state counts as collapsed.
pub const NORM_SQ_FLOOR: f64 = 1e-18;
/// Above this squared norm a conditional state counts as blown up.
pub const NORM_SQ_CEIL: f64 = 1e18;

/// Rows per reduction chunk; fixed so batch statistics are identical for any
/// thread count.
const ROW_CHUNK: usize = 256;

/// ⟨ψ|Ô|ψ⟩ / ⟨ψ|ψ⟩ for a spin operator.
pub fn normalized_expectation(op: SpinOp, psi: &StateVector) -> Result<C64> {
    let n = psi.norm_sq();
    if !(n > NORM_SQ_FLOOR) {
        return Err(SimError::InvalidParams(
            "zero-norm state has no normalized expectations".into(),
        ));
    }
    let mut out = vec![C64::new(0.0, 0.0); psi.amps.len()];
    psi.basis.apply_spin(op, &psi.amps, &mut out);
    Ok(inner(&psi.amps, &out) / n)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FailurePolicy {
    /// Stop the run at the first collapsed or non-finite trajectory.
    Abort,
    /// Zero the failed trajectory, exclude it from statistics, keep going.
    DropAndReport,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SimParams {
    pub n_atoms: usize,
    pub n_modes: usize,
    pub max_total_photons: usize,
    pub n_batch: usize,
    pub band: BandParams,
    pub drive: DriveWaveform,
    /// Times in laser cycles.
    pub t_start_cycles: f64,
    pub t_end_cycles: f64,
    pub record_interval_cycles: f64,
    pub seed: u64,
    pub controller: StepController,
    pub failure_policy: FailurePolicy,
}

impl SimParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_atoms == 0 {
            return Err(SimError::InvalidParams("n_atoms must be at least 1".into()));
        }
        if self.n_modes == 0 {
            return Err(SimError::InvalidParams("n_modes must be at least 1".into()));
        }
        if self.n_batch == 0 {
            return Err(SimError::InvalidParams("n_batch must be at least 1".into()));
        }
        if !(self.t_end_cycles > self.t_start_cycles) {
            return Err(SimError::InvalidParams(
                "t_end_cycles must exceed t_start_cycles".into(),
            ));
        }
        if !(self.record_interval_cycles > 0.0) {
            return Err(SimError::InvalidParams(
                "record_interval_cycles must be positive".into(),
            ));
        }
        self.band.validate()?;
        self.drive.validate()?;
        self.controller.validate()?;
        // fails early if the Fock basis would be oversized
        CompositeBasis::new(self.n_atoms, self.n_modes, self.max_total_photons)?;
        Ok(())
    }

    /// Recording grid in laser cycles: multiples of the interval from
    /// t_start, with t_end appended when it falls off the grid.
    pub fn record_grid_cycles(&self) -> Vec<f64> {
        let span = self.t_end_cycles - self.t_start_cycles;
        let n = (span / self.record_interval_cycles + 1e-9).floor() as usize;
        let mut grid: Vec<f64> = (0..=n)
            .map(|k| self.t_start_cycles + k as f64 * self.record_interval_cycles)
            .collect();
        let last = *grid.last().unwrap();
        if self.t_end_cycles - last > 1e-9 * span.max(1.0) {
            grid.push(self.t_end_cycles);
        }
        grid
    }
}

/// Owned batch state: psi rows (composite index major, batch index minor)
/// followed by alpha rows (one per mode).
pub struct BatchState<R: Real> {
    basis: Arc<CompositeBasis>,
    n_modes: usize,
    n_batch: usize,
    data: Vec<Complex<R>>,
}

impl<R: Real> BatchState<R> {
    pub fn from_parts(
        basis: Arc<CompositeBasis>,
        n_modes: usize,
        n_batch: usize,
        data: Vec<Complex<R>>,
    ) -> Self {
        assert_eq!(data.len(), (basis.dim() + n_modes) * n_batch);
        Self {
            basis,
            n_modes,
            n_batch,
            data,
        }
    }

    /// All trajectories in the collective ground state with vacuum-sampled
    /// noise amplitudes.
    pub fn ground_with_vacuum_noise(
        basis: Arc<CompositeBasis>,
        n_modes: usize,
        n_batch: usize,
        sampler: &VacuumSampler,
    ) -> Self {
        let dim = basis.dim();
        let zero = Complex::new(R::zero(), R::zero());
        let mut data = vec![zero; (dim + n_modes) * n_batch];
        let one = Complex::new(R::one(), R::zero());
        for xi in 0..n_batch {
            data[xi] = one; // composite row 0 = (all ground, vacuum)
        }
        for xi in 0..n_batch {
            let alphas = sampler.sample(xi as u64);
            for (nu, a) in alphas.iter().enumerate() {
                data[(dim + nu) * n_batch + xi] =
                    Complex::new(R::from_f64(a.re), R::from_f64(a.im));
            }
        }
        Self {
            basis,
            n_modes,
            n_batch,
            data,
        }
    }

    pub fn raw(&self) -> &[Complex<R>] {
        &self.data
    }

    pub fn raw_vec_mut(&mut self) -> &mut Vec<Complex<R>> {
        &mut self.data
    }

    pub fn view<'a>(&'a self, active: &'a [bool]) -> BatchView<'a, R> {
        BatchView {
            basis: &self.basis,
            n_modes: self.n_modes,
            n_batch: self.n_batch,
            data: &self.data,
            active,
        }
    }
}

/// Borrowed view of a batch at one instant; what recorders receive.
pub struct BatchView<'a, R: Real> {
    pub basis: &'a CompositeBasis,
    pub n_modes: usize,
    pub n_batch: usize,
    data: &'a [Complex<R>],
    pub active: &'a [bool],
}

impl<'a, R: Real> BatchView<'a, R> {
    pub fn new(
        basis: &'a CompositeBasis,
        n_modes: usize,
        n_batch: usize,
        data: &'a [Complex<R>],
        active: &'a [bool],
    ) -> Self {
        assert_eq!(data.len(), (basis.dim() + n_modes) * n_batch);
        assert_eq!(active.len(), n_batch);
        Self {
            basis,
            n_modes,
            n_batch,
            data,
            active,
        }
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn n_active(&self) -> usize {
        self.active.iter().filter(|a| **a).count()
    }

    /// psi block, composite-row major.
    pub fn psi(&self) -> &[Complex<R>] {
        &self.data[..self.dim() * self.n_batch]
    }

    /// alpha block, mode major.
    pub fn alphas(&self) -> &[Complex<R>] {
        &self.data[self.dim() * self.n_batch..]
    }

    pub fn psi_row(&self, row: usize) -> &[Complex<R>] {
        &self.psi()[row * self.n_batch..(row + 1) * self.n_batch]
    }

    pub fn alpha_row(&self, nu: usize) -> &[Complex<R>] {
        &self.alphas()[nu * self.n_batch..(nu + 1) * self.n_batch]
    }

    /// Squared psi norm per trajectory, in f64.
    pub fn norms_sq(&self) -> Vec<f64> {
        let mut norms = vec![0.0f64; self.n_batch];
        for row in 0..self.dim() {
            let slice = self.psi_row(row);
            for (n, z) in norms.iter_mut().zip(slice) {
                *n += z.norm_sqr().to_f64();
            }
        }
        norms
    }

    pub fn trajectory_psi(&self, xi: usize) -> StateVector {
        let dim = self.dim();
        let mut amps = Vec::with_capacity(dim);
        for row in 0..dim {
            let z = self.psi()[row * self.n_batch + xi];
            amps.push(C64::new(z.re.to_f64(), z.im.to_f64()));
        }
        StateVector {
            basis: Arc::new(CompositeBasis {
                spin: self.basis.spin.clone(),
                fock: self.basis.fock.clone(),
            }),
            amps,
        }
    }

    pub fn trajectory_alpha(&self, xi: usize) -> Vec<C64> {
        (0..self.n_modes)
            .map(|nu| {
                let z = self.alphas()[nu * self.n_batch + xi];
                C64::new(z.re.to_f64(), z.im.to_f64())
            })
            .collect()
    }
}

/// The batched right-hand side plus its frozen linearization.
pub struct BatchSystem<R: Real> {
    basis: Arc<CompositeBasis>,
    dim: usize,
    fock_dim: usize,
    spin_dim: usize,
    n_modes: usize,
    n_batch: usize,
    drive: DriveWaveform,
    /// Non-Hermitian noise and subtraction terms; disabled only to validate
    /// norm conservation of the Hermitian part.
    pub stochastic_terms: bool,

    // cast operator tables
    omegas: Vec<f64>,
    couplings: Vec<C64>,
    omegas_r: Vec<R>,
    couplings_r: Vec<Complex<R>>,
    sz_half: Vec<R>,
    s_plus: Vec<R>,
    s_minus: Vec<R>,
    bath_diag: Vec<R>,
    raise_to: Vec<Vec<u32>>,
    raise_amp: Vec<Vec<R>>,
    lower_to: Vec<Vec<u32>>,
    lower_amp: Vec<Vec<R>>,

    frozen_drive: R,

    // per-call scratch, reused across steps
    norms: Vec<f64>,
    sm: Vec<C64>,
    neg_i_lambda: Vec<Complex<R>>,
    i_conj_sm: Vec<Complex<R>>,
    sm_r: Vec<Complex<R>>,
    partial_norms: Vec<f64>,
    partial_sm: Vec<C64>,
}

impl<R: Real> BatchSystem<R> {
    pub fn new(params: &SimParams) -> Result<Self> {
        params.validate()?;
        let basis = CompositeBasis::new(params.n_atoms, params.n_modes, params.max_total_photons)?;
        let bath = discretize_band(params.band, params.n_modes)?;
        let dim = basis.dim();
        let fock_dim = basis.fock.dim();
        let spin_dim = basis.spin.dim();
        let nb = params.n_batch;

        let sz_half: Vec<R> = (0..spin_dim)
            .map(|m| R::from_f64(0.5 * basis.spin.sz_eigenvalue(m)))
            .collect();
        // s_plus[m] multiplies |m> -> |m + 1>, s_minus[m] multiplies
        // |m> -> |m - 1>; the unreachable ladder ends are padded with zero
        let s_plus: Vec<R> = (0..spin_dim)
            .map(|m| {
                if m < params.n_atoms {
                    R::from_f64(basis.spin.raising_amp(m))
                } else {
                    R::zero()
                }
            })
            .collect();
        let s_minus: Vec<R> = (0..spin_dim)
            .map(|m| {
                if m >= 1 {
                    R::from_f64(basis.spin.lowering_amp(m))
                } else {
                    R::zero()
                }
            })
            .collect();
        let bath_diag: Vec<R> = (0..fock_dim)
            .map(|f| {
                let occ = basis.fock.occupation(f);
                let e: f64 = occ
                    .iter()
                    .zip(&bath.omegas)
                    .map(|(&n, &w)| n as f64 * w)
                    .sum();
                R::from_f64(e)
            })
            .collect();

        let mut raise_to = Vec::with_capacity(params.n_modes);
        let mut raise_amp = Vec::with_capacity(params.n_modes);
        let mut lower_to = Vec::with_capacity(params.n_modes);
        let mut lower_amp = Vec::with_capacity(params.n_modes);
        for nu in 0..params.n_modes {
            let (rt, ra) = basis.fock.raise_table(nu);
            raise_to.push(rt.to_vec());
            raise_amp.push(ra.iter().map(|&a| R::from_f64(a)).collect());
            let (lt, la) = basis.fock.lower_table(nu);
            lower_to.push(lt.to_vec());
            lower_amp.push(la.iter().map(|&a| R::from_f64(a)).collect());
        }

        let n_row_chunks = dim.div_ceil(ROW_CHUNK);
        Ok(Self {
            basis,
            dim,
            fock_dim,
            spin_dim,
            n_modes: params.n_modes,
            n_batch: nb,
            drive: params.drive,
            stochastic_terms: true,
            omegas_r: bath.omegas.iter().map(|&w| R::from_f64(w)).collect(),
            couplings_r: bath
                .couplings
                .iter()
                .map(|c| Complex::new(R::from_f64(c.re), R::from_f64(c.im)))
                .collect(),
            omegas: bath.omegas,
            couplings: bath.couplings,
            sz_half,
            s_plus,
            s_minus,
            bath_diag,
            raise_to,
            raise_amp,
            lower_to,
            lower_amp,
            frozen_drive: R::zero(),
            norms: vec![0.0; nb],
            sm: vec![C64::new(0.0, 0.0); nb],
            neg_i_lambda: vec![Complex::new(R::zero(), R::zero()); nb],
            i_conj_sm: vec![Complex::new(R::zero(), R::zero()); nb],
            sm_r: vec![Complex::new(R::zero(), R::zero()); nb],
            partial_norms: vec![0.0; n_row_chunks * nb],
            partial_sm: vec![C64::new(0.0, 0.0); n_row_chunks * nb],
        })
    }

    pub fn basis(&self) -> &Arc<CompositeBasis> {
        &self.basis
    }

    pub fn n_batch(&self) -> usize {
        self.n_batch
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    pub fn couplings(&self) -> &[C64] {
        &self.couplings
    }

    pub fn initial_state(&self, params: &SimParams) -> BatchState<R> {
        let sampler = VacuumSampler::new(params.seed, params.n_modes);
        BatchState::ground_with_vacuum_noise(
            Arc::clone(&self.basis),
            self.n_modes,
            self.n_batch,
            &sampler,
        )
    }

    /// Per-trajectory norms and normalized <S_-> over the psi block, reduced
    /// over fixed row chunks so the result is thread-count independent.
    fn batch_moments(&mut self, psi: &[Complex<R>]) {
        let nb = self.n_batch;
        let fd = self.fock_dim;
        let dim = self.dim;
        let n_chunks = dim.div_ceil(ROW_CHUNK);
        let s_minus = &self.s_minus;

        self.partial_norms[..n_chunks * nb].fill(0.0);
        self.partial_sm[..n_chunks * nb].fill(C64::new(0.0, 0.0));

        self.partial_norms[..n_chunks * nb]
            .par_chunks_mut(nb)
            .zip(self.partial_sm[..n_chunks * nb].par_chunks_mut(nb))
            .enumerate()
            .for_each(|(chunk, (pn, ps))| {
                let row_lo = chunk * ROW_CHUNK;
                let row_hi = (row_lo + ROW_CHUNK).min(dim);
                for row in row_lo..row_hi {
                    let here = &psi[row * nb..(row + 1) * nb];
                    for (acc, z) in pn.iter_mut().zip(here) {
                        *acc += z.norm_sqr().to_f64();
                    }
                    // <psi| S_- |psi> couples (m, f) to (m + 1, f)
                    let m = row / fd;
                    if m + 1 < self.spin_dim {
                        let amp = s_minus[m + 1].to_f64();
                        let above = &psi[(row + fd) * nb..(row + fd + 1) * nb];
                        for ((acc, z), up) in ps.iter_mut().zip(here).zip(above) {
                            let zc = C64::new(z.re.to_f64(), -z.im.to_f64());
                            let u = C64::new(up.re.to_f64(), up.im.to_f64());
                            *acc += zc * amp * u;
                        }
                    }
                }
            });

        self.norms.fill(0.0);
        self.sm.fill(C64::new(0.0, 0.0));
        for chunk in 0..n_chunks {
            let pn = &self.partial_norms[chunk * nb..(chunk + 1) * nb];
            let ps = &self.partial_sm[chunk * nb..(chunk + 1) * nb];
            for xi in 0..nb {
                self.norms[xi] += pn[xi];
                self.sm[xi] += ps[xi];
            }
        }
        for xi in 0..nb {
            let n = self.norms[xi];
            if n.is_finite() && n > NORM_SQ_FLOOR {
                self.sm[xi] /= n;
            } else {
                self.sm[xi] = C64::new(0.0, 0.0);
            }
        }
    }

    /// The Hermitian generator action out = -i (H_S(drive_coef) + H_B + H_I) psi
    /// plus, for the full rhs, the per-trajectory stochastic terms.
    #[allow(clippy::too_many_arguments)]
    fn apply_deterministic_and_stochastic(
        &self,
        drive_coef: R,
        psi: &[Complex<R>],
        out_psi: &mut [Complex<R>],
        with_stochastic: bool,
    ) {
        let nb = self.n_batch;
        let fd = self.fock_dim;
        let ns = self.spin_dim;
        let n_modes = self.n_modes;

        out_psi.par_chunks_mut(nb).enumerate().for_each(|(row, out_row)| {
            let m = row / fd;
            let f = row % fd;

            // diagonal: qubit splitting + bath energies
            let diag = mul_neg_i(Complex::new(self.sz_half[m] + self.bath_diag[f], R::zero()));
            let here = &psi[row * nb..(row + 1) * nb];
            for (o, z) in out_row.iter_mut().zip(here) {
                *o = diag * *z;
            }

            // drive: F(t) Sx gathers from both spin neighbors
            if drive_coef != R::zero() {
                if m >= 1 {
                    let c = mul_neg_i(Complex::new(drive_coef * self.s_plus[m - 1], R::zero()));
                    let src = &psi[(row - fd) * nb..(row - fd + 1) * nb];
                    for (o, z) in out_row.iter_mut().zip(src) {
                        *o += c * *z;
                    }
                }
                if m + 1 < ns {
                    let c = mul_neg_i(Complex::new(drive_coef * self.s_minus[m + 1], R::zero()));
                    let src = &psi[(row + fd) * nb..(row + fd + 1) * nb];
                    for (o, z) in out_row.iter_mut().zip(src) {
                        *o += c * *z;
                    }
                }
            }

            // interaction: c_nu S_+ a_nu + conj(c_nu) S_- a_nu^dag
            for nu in 0..n_modes {
                if m >= 1 {
                    let tgt = self.raise_to[nu][f];
                    if tgt != NO_STATE {
                        let w = self.couplings_r[nu]
                            * (self.s_plus[m - 1] * self.raise_amp[nu][f]);
                        let c = mul_neg_i(w);
                        let src_row = (m - 1) * fd + tgt as usize;
                        let src = &psi[src_row * nb..(src_row + 1) * nb];
                        for (o, z) in out_row.iter_mut().zip(src) {
                            *o += c * *z;
                        }
                    }
                }
                if m + 1 < ns {
                    let tgt = self.lower_to[nu][f];
                    if tgt != NO_STATE {
                        let w = self.couplings_r[nu].conj()
                            * (self.s_minus[m + 1] * self.lower_amp[nu][f]);
                        let c = mul_neg_i(w);
                        let src_row = (m + 1) * fd + tgt as usize;
                        let src = &psi[src_row * nb..(src_row + 1) * nb];
                        for (o, z) in out_row.iter_mut().zip(src) {
                            *o += c * *z;
                        }
                    }
                }
            }

            if !with_stochastic {
                return;
            }

            // noise drive: -i lambda_xi S_- psi, gathering from (m + 1, f)
            if m + 1 < ns {
                let amp = self.s_minus[m + 1];
                let src = &psi[(row + fd) * nb..(row + fd + 1) * nb];
                for ((o, z), lam) in out_row.iter_mut().zip(src).zip(&self.neg_i_lambda) {
                    *o += *lam * amp * *z;
                }
            }

            // subtraction: +i conj(<S_->) sum_nu c_nu a_nu psi, spin-diagonal
            for nu in 0..n_modes {
                let tgt = self.raise_to[nu][f];
                if tgt != NO_STATE {
                    let w = self.couplings_r[nu] * self.raise_amp[nu][f];
                    let src_row = m * fd + tgt as usize;
                    let src = &psi[src_row * nb..(src_row + 1) * nb];
                    for ((o, z), s) in out_row.iter_mut().zip(src).zip(&self.i_conj_sm) {
                        *o += *s * w * *z;
                    }
                }
            }
        });
    }
}

impl<R: Real> OdeSystem<R> for BatchSystem<R> {
    fn len(&self) -> usize {
        (self.dim + self.n_modes) * self.n_batch
    }

    fn rhs(&mut self, t: f64, y: &[Complex<R>], out: &mut [Complex<R>]) {
        let nb = self.n_batch;
        let split = self.dim * nb;
        let (psi, alpha) = y.split_at(split);

        if self.stochastic_terms {
            self.batch_moments(psi);
            // lambda_xi = sum_nu conj(c_nu) conj(alpha_nu_xi)
            for xi in 0..nb {
                let mut lam = C64::new(0.0, 0.0);
                for nu in 0..self.n_modes {
                    let a = alpha[nu * nb + xi];
                    let ac = C64::new(a.re.to_f64(), -a.im.to_f64());
                    lam += self.couplings[nu].conj() * ac;
                }
                let nl = C64::new(0.0, -1.0) * lam;
                self.neg_i_lambda[xi] = Complex::new(R::from_f64(nl.re), R::from_f64(nl.im));
                let ism = C64::new(0.0, 1.0) * self.sm[xi].conj();
                self.i_conj_sm[xi] = Complex::new(R::from_f64(ism.re), R::from_f64(ism.im));
                self.sm_r[xi] = Complex::new(R::from_f64(self.sm[xi].re), R::from_f64(self.sm[xi].im));
            }
        } else {
            // still track <S_-> for the alpha feedback; psi stays Hermitian
            self.batch_moments(psi);
            for xi in 0..nb {
                self.sm_r[xi] = Complex::new(R::from_f64(self.sm[xi].re), R::from_f64(self.sm[xi].im));
            }
        }

        let drive_coef = R::from_f64(self.drive.eval(t));
        let (out_psi, out_alpha) = out.split_at_mut(split);
        self.apply_deterministic_and_stochastic(drive_coef, psi, out_psi, self.stochastic_terms);

        // d alpha_nu = -i (omega_nu alpha_nu + conj(c_nu) <S_->)
        out_alpha
            .par_chunks_mut(nb)
            .enumerate()
            .for_each(|(nu, out_row)| {
                let w = self.omegas_r[nu];
                let cc = self.couplings_r[nu].conj();
                let src = &alpha[nu * nb..(nu + 1) * nb];
                for ((o, a), sm) in out_row.iter_mut().zip(src).zip(&self.sm_r) {
                    *o = mul_neg_i(*a * w + cc * *sm);
                }
            });
    }

    fn freeze_linear_part(&mut self, t: f64, _y: &[Complex<R>]) {
        self.frozen_drive = R::from_f64(self.drive.eval(t));
    }

    fn apply_linear(&self, v: &[Complex<R>], out: &mut [Complex<R>]) {
        let nb = self.n_batch;
        let split = self.dim * nb;
        let (psi, alpha) = v.split_at(split);
        let (out_psi, out_alpha) = out.split_at_mut(split);
        self.apply_deterministic_and_stochastic(self.frozen_drive, psi, out_psi, false);
        out_alpha
            .par_chunks_mut(nb)
            .enumerate()
            .for_each(|(nu, out_row)| {
                let w = self.omegas_r[nu];
                let src = &alpha[nu * nb..(nu + 1) * nb];
                for (o, a) in out_row.iter_mut().zip(src) {
                    *o = mul_neg_i(*a * w);
                }
            });
    }

    /// Max over trajectories of the per-trajectory weighted RMS, so one bad
    /// trajectory cannot hide inside a large batch.
    fn error_norm(&self, err: &[Complex<R>], y: &[Complex<R>], rtol: f64, atol: f64) -> f64 {
        let nb = self.n_batch;
        let n_rows = self.dim + self.n_modes;
        let n_chunks = n_rows.div_ceil(ROW_CHUNK);

        let partials: Vec<Vec<f64>> = (0..n_chunks)
            .into_par_iter()
            .map(|chunk| {
                let mut acc = vec![0.0f64; nb];
                let row_lo = chunk * ROW_CHUNK;
                let row_hi = (row_lo + ROW_CHUNK).min(n_rows);
                for row in row_lo..row_hi {
                    let e = &err[row * nb..(row + 1) * nb];
                    let v = &y[row * nb..(row + 1) * nb];
                    for ((a, ei), vi) in acc.iter_mut().zip(e).zip(v) {
                        let scale = atol + rtol * vi.norm().to_f64();
                        let r = ei.norm().to_f64() / scale;
                        *a += r * r;
                    }
                }
                acc
            })
            .collect();

        let mut worst = 0.0f64;
        let mut acc = vec![0.0f64; nb];
        for p in &partials {
            for (a, v) in acc.iter_mut().zip(p) {
                *a += v;
            }
        }
        for &a in &acc {
            if !a.is_finite() {
                return f64::INFINITY;
            }
            let rms = (a / n_rows as f64).sqrt();
            if rms > worst {
                worst = rms;
            }
        }
        worst
    }
}

/// Receives the full batch at every recording time.
pub trait BatchRecorder<R: Real> {
    fn record(&mut self, t_cycles: f64, view: &BatchView<'_, R>);
}

impl<R: Real, F: FnMut(f64, &BatchView<'_, R>)> BatchRecorder<R> for F {
    fn record(&mut self, t_cycles: f64, view: &BatchView<'_, R>) {
        self(t_cycles, view)
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunReport {
    pub integration: IntegrationReport,
    /// Trajectories excluded under the drop policy, in failure order.
    pub dropped: Vec<usize>,
    /// Largest normalized weight seen in the top photon-number grade; a
    /// truncation-quality diagnostic (0 when the basis has no photon room).
    pub max_boundary_weight: f64,
    pub wall_seconds: f64,
}

/// Propagate from the standard initial condition (collective ground state,
/// vacuum-sampled noise).
pub fn propagate_batch<R: Real>(
    params: &SimParams,
    recorder: &mut dyn BatchRecorder<R>,
) -> Result<RunReport> {
    let sys = BatchSystem::<R>::new(params)?;
    let state = sys.initial_state(params);
    propagate_batch_from(params, sys, state, recorder)
}

/// Propagate a caller-supplied initial batch (validation runs and tests).
pub fn propagate_batch_from<R: Real>(
    params: &SimParams,
    mut sys: BatchSystem<R>,
    mut state: BatchState<R>,
    recorder: &mut dyn BatchRecorder<R>,
) -> Result<RunReport> {
    let start = Instant::now();
    let basis = Arc::clone(&state.basis);
    let dim = basis.dim();
    let fd = basis.fock.dim();
    let nb = state.n_batch;
    let n_modes = state.n_modes;

    let grid_cycles = params.record_grid_cycles();
    let grid_internal: Vec<f64> = grid_cycles.iter().map(|&c| c * CYCLE).collect();
    let t0 = params.t_start_cycles * CYCLE;
    let t1 = params.t_end_cycles * CYCLE;

    // top-grade mask for the truncation diagnostic
    let top_grade: Vec<bool> = if params.max_total_photons == 0 {
        vec![false; fd]
    } else {
        (0..fd)
            .map(|f| basis.fock.total(f) == params.max_total_photons)
            .collect()
    };

    let mut active = vec![true; nb];
    let mut dropped: Vec<usize> = Vec::new();
    let mut max_boundary = 0.0f64;
    let mut rec_idx = 0usize;
    let policy = params.failure_policy;

    let integration = {
        let recorder = &mut *recorder;
        let active = &mut active;
        let dropped = &mut dropped;
        let max_boundary = &mut max_boundary;
        let rec_idx = &mut rec_idx;
        let grid_cycles = &grid_cycles;
        let basis_ref = &basis;
        let top_grade = &top_grade;

        integrate_adaptive(
            &mut sys,
            t0,
            t1,
            state.raw_vec_mut(),
            &grid_internal,
            move |_t_int, y: &mut [Complex<R>]| {
                let t_cycles = grid_cycles[*rec_idx];
                *rec_idx += 1;

                // per-trajectory health check over the psi block
                let mut norms = vec![0.0f64; nb];
                for row in 0..dim {
                    let slice = &y[row * nb..(row + 1) * nb];
                    for (n, z) in norms.iter_mut().zip(slice) {
                        *n += z.norm_sqr().to_f64();
                    }
                }
                for xi in 0..nb {
                    if !active[xi] {
                        continue;
                    }
                    let n = norms[xi];
                    let healthy = n.is_finite() && n > NORM_SQ_FLOOR && n < NORM_SQ_CEIL;
                    if healthy {
                        continue;
                    }
                    let reason = if !n.is_finite() {
                        "non-finite norm".to_string()
                    } else if n <= NORM_SQ_FLOOR {
                        format!("norm collapsed (|psi|^2 = {n:.3e})")
                    } else {
                        format!("norm blew up (|psi|^2 = {n:.3e})")
                    };
                    match policy {
                        FailurePolicy::Abort => {
                            return Err(SimError::TrajectoryFailure {
                                index: xi,
                                t_cycles,
                                reason,
                            });
                        }
                        FailurePolicy::DropAndReport => {
                            active[xi] = false;
                            dropped.push(xi);
                            for row in 0..dim + n_modes {
                                y[row * nb + xi] = Complex::new(R::zero(), R::zero());
                            }
                        }
                    }
                }
                if active.iter().all(|a| !*a) {
                    return Err(SimError::TrajectoryFailure {
                        index: *dropped.last().unwrap(),
                        t_cycles,
                        reason: "all trajectories failed".into(),
                    });
                }

                // truncation diagnostic: weight at the top photon grade
                for xi in 0..nb {
                    if !active[xi] || !(norms[xi] > NORM_SQ_FLOOR) {
                        continue;
                    }
                    let mut top = 0.0f64;
                    for row in 0..dim {
                        if top_grade[row % fd] {
                            let z = y[row * nb + xi];
                            top += z.norm_sqr().to_f64();
                        }
                    }
                    let w = top / norms[xi];
                    if w > *max_boundary {
                        *max_boundary = w;
                    }
                }

                // Per-trajectory renormalization. The conditional flow is
                // equivariant under psi_xi -> c psi_xi: the Hamiltonian sees
                // the spin moments only through their normalized values and
                // every estimator is norm-invariant, so rescaling here is
                // exact. It keeps the multiplicative norm walk (violent in
                // strongly collective windows) inside floating-point range.
                for xi in 0..nb {
                    if !active[xi] {
                        continue;
                    }
                    let scale = R::from_f64(1.0 / norms[xi].sqrt());
                    for row in 0..dim {
                        let z = &mut y[row * nb + xi];
                        *z = *z * scale;
                    }
                }

                let view = BatchView::new(basis_ref, n_modes, nb, y, active);
                recorder.record(t_cycles, &view);
                Ok(())
            },
            &params.controller,
        )?
    };

    Ok(RunReport {
        integration,
        dropped,
        max_boundary_weight: max_boundary,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}
