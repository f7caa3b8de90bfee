//! State space for N_e driven two-level atoms coupled to a truncated multimode
//! photon register.
//!
//! The atoms are restricted to the permutation-symmetric sector, which the
//! initial condition (all atoms in the ground state) and the collective
//! Hamiltonian never leave.  That sector is the ladder |m>, m = 0..N_e, where
//! m counts excited atoms, with
//!
//! ```text
//! S+ |m> = sqrt((m+1)(N_e - m)) |m+1>
//! S- |m> = sqrt(m(N_e - m + 1)) |m-1>
//! Sz |m> = (2m - N_e) |m>
//! Sx = S+ + S-,   Sy = i(S+ - S-)
//! ```
//!
//! so [Sz, S+-] = +-2 S+- and [S+, S-] = Sz.  The photon register keeps every
//! occupation tuple (n_1..n_Nm) with total at most N_p; creation out of that
//! set is projected away and the lost weight is reported through a
//! discarded-norm accumulator.  Composite index = m * fock_dim + fock_index.

use std::collections::HashMap;
use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Result, SimError};

pub type C64 = Complex64;

/// Sentinel for "no partner state" in the mode transition tables.
pub(crate) const NO_STATE: u32 = u32::MAX;

/// Default cap on the number of Fock states a basis may enumerate.
pub const DEFAULT_MAX_FOCK_STATES: usize = 4_000_000;

/// Exact binomial coefficient in u128; errors on overflow.
pub fn binomial(n: u64, k: u64) -> Result<u128> {
    let k = k.min(n - k.min(n));
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc
            .checked_mul((n - i) as u128)
            .ok_or_else(|| SimError::InvalidParams(format!("binomial({n},{k}) overflows")))?;
        acc /= (i + 1) as u128;
    }
    Ok(acc)
}

/// Symmetric-sector ladder for N_e two-level atoms.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CollectiveSpinBasis {
    n_atoms: usize,
}

impl CollectiveSpinBasis {
    pub fn new(n_atoms: usize) -> Result<Self> {
        if n_atoms == 0 {
            return Err(SimError::InvalidParams("n_atoms must be at least 1".into()));
        }
        Ok(Self { n_atoms })
    }

    pub fn n_atoms(&self) -> usize {
        self.n_atoms
    }

    pub fn dim(&self) -> usize {
        self.n_atoms + 1
    }

    /// Matrix element of S+ taking |m> to |m+1>.
    #[inline]
    pub fn raising_amp(&self, m: usize) -> f64 {
        debug_assert!(m < self.n_atoms);
        (((m + 1) * (self.n_atoms - m)) as f64).sqrt()
    }

    /// Matrix element of S- taking |m> to |m-1>.
    #[inline]
    pub fn lowering_amp(&self, m: usize) -> f64 {
        debug_assert!(m >= 1 && m <= self.n_atoms);
        ((m * (self.n_atoms - m + 1)) as f64).sqrt()
    }

    /// Eigenvalue of Sz on |m>: excited minus ground population.
    #[inline]
    pub fn sz_eigenvalue(&self, m: usize) -> f64 {
        2.0 * m as f64 - self.n_atoms as f64
    }
}

/// Photon occupation tuples with bounded total, graded by total photon number.
///
/// Within a grade the first mode carries the largest count first, so for
/// (n_modes, max_total) = (2, 2) the order is
/// (0,0), (1,0), (0,1), (2,0), (1,1), (0,2).
#[derive(Debug, Clone)]
pub struct FockBasis {
    n_modes: usize,
    max_total: usize,
    dim: usize,
    /// Flat dim * n_modes occupation table.
    occupations: Vec<u8>,
    /// Total photons per state.
    totals: Vec<u8>,
    index_of: HashMap<Box<[u8]>, u32>,
    /// Per (mode, state): index after removing one photon, NO_STATE if empty.
    lower_to: Vec<u32>,
    /// Per (mode, state): index after adding one photon, NO_STATE at the truncation boundary.
    raise_to: Vec<u32>,
    /// sqrt(n_mode) per (mode, state).
    lower_amp: Vec<f64>,
    /// sqrt(n_mode + 1) per (mode, state).
    raise_amp: Vec<f64>,
}

impl FockBasis {
    pub fn new(n_modes: usize, max_total: usize) -> Result<Self> {
        Self::with_state_limit(n_modes, max_total, DEFAULT_MAX_FOCK_STATES)
    }

    pub fn with_state_limit(n_modes: usize, max_total: usize, limit: usize) -> Result<Self> {
        if n_modes == 0 {
            return Err(SimError::InvalidParams("n_modes must be at least 1".into()));
        }
        if max_total > u8::MAX as usize {
            return Err(SimError::InvalidParams(format!(
                "max_total = {max_total} exceeds the u8 occupation range"
            )));
        }
        let dim_exact = binomial((n_modes + max_total) as u64, max_total as u64)?;
        if dim_exact > limit as u128 {
            return Err(SimError::BasisTooLarge {
                n_modes,
                max_total,
                dim: dim_exact,
                limit,
            });
        }
        let dim = dim_exact as usize;

        let mut occupations = Vec::with_capacity(dim * n_modes);
        let mut totals = Vec::with_capacity(dim);
        let mut scratch = vec![0u8; n_modes];
        for grade in 0..=max_total {
            enumerate_grade(&mut occupations, &mut scratch, 0, grade);
            let count_before = totals.len();
            let count_now = occupations.len() / n_modes;
            totals.resize(count_now, grade as u8);
            debug_assert!(count_now > count_before);
        }
        debug_assert_eq!(occupations.len(), dim * n_modes);

        let mut index_of = HashMap::with_capacity(dim);
        for i in 0..dim {
            let occ = &occupations[i * n_modes..(i + 1) * n_modes];
            index_of.insert(occ.to_vec().into_boxed_slice(), i as u32);
        }

        let mut lower_to = vec![NO_STATE; n_modes * dim];
        let mut raise_to = vec![NO_STATE; n_modes * dim];
        let mut lower_amp = vec![0.0; n_modes * dim];
        let mut raise_amp = vec![0.0; n_modes * dim];
        let mut tuple = vec![0u8; n_modes];
        for i in 0..dim {
            let occ = &occupations[i * n_modes..(i + 1) * n_modes];
            for nu in 0..n_modes {
                let n = occ[nu];
                let slot = nu * dim + i;
                lower_amp[slot] = (n as f64).sqrt();
                raise_amp[slot] = (n as f64 + 1.0).sqrt();
                if n > 0 {
                    tuple.copy_from_slice(occ);
                    tuple[nu] = n - 1;
                    lower_to[slot] = index_of[tuple.as_slice()];
                }
                if (totals[i] as usize) < max_total {
                    tuple.copy_from_slice(occ);
                    tuple[nu] = n + 1;
                    raise_to[slot] = index_of[tuple.as_slice()];
                }
            }
        }

        Ok(Self {
            n_modes,
            max_total,
            dim,
            occupations,
            totals,
            index_of,
            lower_to,
            raise_to,
            lower_amp,
            raise_amp,
        })
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn max_total(&self) -> usize {
        self.max_total
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn occupation(&self, state: usize) -> &[u8] {
        &self.occupations[state * self.n_modes..(state + 1) * self.n_modes]
    }

    pub fn total(&self, state: usize) -> usize {
        self.totals[state] as usize
    }

    pub fn index_of(&self, occ: &[u8]) -> Option<usize> {
        self.index_of.get(occ).map(|&i| i as usize)
    }

    /// (target, sqrt(n)) for removing one photon from `mode`, if occupied.
    #[inline]
    pub fn lowered(&self, mode: usize, state: usize) -> Option<(usize, f64)> {
        let slot = mode * self.dim + state;
        let t = self.lower_to[slot];
        (t != NO_STATE).then(|| (t as usize, self.lower_amp[slot]))
    }

    /// (target, sqrt(n + 1)) for adding one photon to `mode`, unless truncated.
    #[inline]
    pub fn raised(&self, mode: usize, state: usize) -> Option<(usize, f64)> {
        let slot = mode * self.dim + state;
        let t = self.raise_to[slot];
        (t != NO_STATE).then(|| (t as usize, self.raise_amp[slot]))
    }

    pub(crate) fn lower_table(&self, mode: usize) -> (&[u32], &[f64]) {
        let r = mode * self.dim..(mode + 1) * self.dim;
        (&self.lower_to[r.clone()], &self.lower_amp[r])
    }

    pub(crate) fn raise_table(&self, mode: usize) -> (&[u32], &[f64]) {
        let r = mode * self.dim..(mode + 1) * self.dim;
        (&self.raise_to[r.clone()], &self.raise_amp[r])
    }
}

fn enumerate_grade(out: &mut Vec<u8>, scratch: &mut [u8], mode: usize, remaining: usize) {
    if mode + 1 == scratch.len() {
        scratch[mode] = remaining as u8;
        out.extend_from_slice(scratch);
        return;
    }
    for n in (0..=remaining).rev() {
        scratch[mode] = n as u8;
        enumerate_grade(out, scratch, mode + 1, remaining - n);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpinOp {
    Plus,
    Minus,
    X,
    Y,
    Z,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModeOp {
    Create,
    Annihilate,
}

/// Tensor product of the spin ladder and the truncated photon register.
#[derive(Debug, Clone)]
pub struct CompositeBasis {
    pub spin: CollectiveSpinBasis,
    pub fock: FockBasis,
}

impl CompositeBasis {
    pub fn new(n_atoms: usize, n_modes: usize, max_total: usize) -> Result<Arc<Self>> {
        Ok(Arc::new(Self {
            spin: CollectiveSpinBasis::new(n_atoms)?,
            fock: FockBasis::new(n_modes, max_total)?,
        }))
    }

    pub fn dim(&self) -> usize {
        self.spin.dim() * self.fock.dim()
    }

    #[inline]
    pub fn index(&self, m: usize, fock_state: usize) -> usize {
        m * self.fock.dim() + fock_state
    }

    /// out = op |psi>.  `out` is overwritten.
    pub fn apply_spin(&self, op: SpinOp, psi: &[C64], out: &mut [C64]) {
        self.check_len(psi, out);
        out.fill(C64::new(0.0, 0.0));
        let fd = self.fock.dim();
        let ne = self.spin.n_atoms();
        match op {
            SpinOp::Plus => {
                for m in 0..ne {
                    let a = self.spin.raising_amp(m);
                    let (src, dst) = (m * fd, (m + 1) * fd);
                    for f in 0..fd {
                        out[dst + f] = psi[src + f] * a;
                    }
                }
            }
            SpinOp::Minus => {
                for m in 1..=ne {
                    let a = self.spin.lowering_amp(m);
                    let (src, dst) = (m * fd, (m - 1) * fd);
                    for f in 0..fd {
                        out[dst + f] = psi[src + f] * a;
                    }
                }
            }
            SpinOp::X => {
                for m in 0..=ne {
                    let src = m * fd;
                    if m < ne {
                        let a = self.spin.raising_amp(m);
                        let dst = (m + 1) * fd;
                        for f in 0..fd {
                            out[dst + f] += psi[src + f] * a;
                        }
                    }
                    if m > 0 {
                        let a = self.spin.lowering_amp(m);
                        let dst = (m - 1) * fd;
                        for f in 0..fd {
                            out[dst + f] += psi[src + f] * a;
                        }
                    }
                }
            }
            SpinOp::Y => {
                // i(S+ - S-)
                for m in 0..=ne {
                    let src = m * fd;
                    if m < ne {
                        let a = C64::new(0.0, self.spin.raising_amp(m));
                        let dst = (m + 1) * fd;
                        for f in 0..fd {
                            out[dst + f] += psi[src + f] * a;
                        }
                    }
                    if m > 0 {
                        let a = C64::new(0.0, -self.spin.lowering_amp(m));
                        let dst = (m - 1) * fd;
                        for f in 0..fd {
                            out[dst + f] += psi[src + f] * a;
                        }
                    }
                }
            }
            SpinOp::Z => {
                for m in 0..=ne {
                    let z = self.spin.sz_eigenvalue(m);
                    let src = m * fd;
                    for f in 0..fd {
                        out[src + f] = psi[src + f] * z;
                    }
                }
            }
        }
    }

    /// out = a_mode |psi> or a_mode^dag |psi>.  `out` is overwritten.
    ///
    /// Creation beyond the total-photon truncation is projected away; each
    /// projected input component adds its squared amplitude to `discarded`.
    pub fn apply_mode(
        &self,
        mode: usize,
        op: ModeOp,
        psi: &[C64],
        out: &mut [C64],
        mut discarded: Option<&mut f64>,
    ) {
        self.check_len(psi, out);
        assert!(mode < self.fock.n_modes(), "mode index out of range");
        out.fill(C64::new(0.0, 0.0));
        let fd = self.fock.dim();
        for m in 0..self.spin.dim() {
            let base = m * fd;
            match op {
                ModeOp::Annihilate => {
                    let (to, amp) = self.fock.lower_table(mode);
                    for f in 0..fd {
                        let t = to[f];
                        if t != NO_STATE {
                            out[base + t as usize] += psi[base + f] * amp[f];
                        }
                    }
                }
                ModeOp::Create => {
                    let (to, amp) = self.fock.raise_table(mode);
                    for f in 0..fd {
                        let t = to[f];
                        if t != NO_STATE {
                            out[base + t as usize] += psi[base + f] * amp[f];
                        } else if let Some(acc) = discarded.as_deref_mut() {
                            *acc += psi[base + f].norm_sqr();
                        }
                    }
                }
            }
        }
    }

    /// out = [(omega0/2) Sz + drive_coef Sx] |psi> with omega0 = 1.
    ///
    /// `drive_coef` is the instantaneous product d0 F(t).
    pub fn apply_h_system(&self, drive_coef: f64, psi: &[C64], out: &mut [C64]) {
        self.check_len(psi, out);
        let fd = self.fock.dim();
        let ne = self.spin.n_atoms();
        for m in 0..=ne {
            let diag = 0.5 * self.spin.sz_eigenvalue(m);
            let src = m * fd;
            for f in 0..fd {
                out[src + f] = psi[src + f] * diag;
            }
        }
        if drive_coef != 0.0 {
            for m in 0..=ne {
                let src = m * fd;
                if m < ne {
                    let a = drive_coef * self.spin.raising_amp(m);
                    let dst = (m + 1) * fd;
                    for f in 0..fd {
                        out[dst + f] += psi[src + f] * a;
                    }
                }
                if m > 0 {
                    let a = drive_coef * self.spin.lowering_amp(m);
                    let dst = (m - 1) * fd;
                    for f in 0..fd {
                        out[dst + f] += psi[src + f] * a;
                    }
                }
            }
        }
    }

    /// out = sum_nu omega_nu n_nu |psi> (diagonal).  `out` is overwritten.
    pub fn apply_h_bath(&self, omegas: &[f64], psi: &[C64], out: &mut [C64]) {
        self.check_len(psi, out);
        assert_eq!(omegas.len(), self.fock.n_modes());
        let fd = self.fock.dim();
        let mut diag = vec![0.0; fd];
        for (f, d) in diag.iter_mut().enumerate() {
            let occ = self.fock.occupation(f);
            *d = occ
                .iter()
                .zip(omegas)
                .map(|(&n, &w)| n as f64 * w)
                .sum::<f64>();
        }
        for m in 0..self.spin.dim() {
            let base = m * fd;
            for f in 0..fd {
                out[base + f] = psi[base + f] * diag[f];
            }
        }
    }

    /// out = sum_nu [c_nu S+ a_nu + conj(c_nu) S- a_nu^dag] |psi>.
    ///
    /// The creation half is projected onto the truncated register; projected
    /// input components add their squared amplitude to `discarded`.
    pub fn apply_h_int(
        &self,
        couplings: &[C64],
        psi: &[C64],
        out: &mut [C64],
        mut discarded: Option<&mut f64>,
    ) {
        self.check_len(psi, out);
        assert_eq!(couplings.len(), self.fock.n_modes());
        out.fill(C64::new(0.0, 0.0));
        let fd = self.fock.dim();
        let ne = self.spin.n_atoms();
        for nu in 0..self.fock.n_modes() {
            let c = couplings[nu];
            let (lower_to, lower_amp) = self.fock.lower_table(nu);
            let (raise_to, raise_amp) = self.fock.raise_table(nu);
            for m in 0..=ne {
                let src = m * fd;
                // c S+ a_nu
                if m < ne {
                    let a = c * self.spin.raising_amp(m);
                    let dst = (m + 1) * fd;
                    for f in 0..fd {
                        let t = lower_to[f];
                        if t != NO_STATE {
                            out[dst + t as usize] += psi[src + f] * (a * lower_amp[f]);
                        }
                    }
                }
                // conj(c) S- a_nu^dag; the creation acts first, so discard
                // accounting happens for every m.
                let sm = if m > 0 { self.spin.lowering_amp(m) } else { 0.0 };
                let a = c.conj() * sm;
                let dst = if m > 0 { (m - 1) * fd } else { 0 };
                for f in 0..fd {
                    let t = raise_to[f];
                    if t != NO_STATE {
                        if m > 0 {
                            out[dst + t as usize] += psi[src + f] * (a * raise_amp[f]);
                        }
                    } else if let Some(acc) = discarded.as_deref_mut() {
                        *acc += psi[src + f].norm_sqr();
                    }
                }
            }
        }
    }

    fn check_len(&self, psi: &[C64], out: &[C64]) {
        assert_eq!(psi.len(), self.dim(), "state length mismatch");
        assert_eq!(out.len(), self.dim(), "output length mismatch");
    }
}

/// Amplitudes plus the basis they live in.
#[derive(Debug, Clone)]
pub struct StateVector {
    pub basis: Arc<CompositeBasis>,
    pub amps: Vec<C64>,
}

impl StateVector {
    pub fn zero(basis: Arc<CompositeBasis>) -> Self {
        let dim = basis.dim();
        Self {
            basis,
            amps: vec![C64::new(0.0, 0.0); dim],
        }
    }

    /// Unit basis state |m> tensor |fock_state>.
    pub fn basis_state(basis: Arc<CompositeBasis>, m: usize, fock_state: usize) -> Self {
        assert!(m < basis.spin.dim());
        assert!(fock_state < basis.fock.dim());
        let mut s = Self::zero(basis);
        let idx = s.basis.index(m, fock_state);
        s.amps[idx] = C64::new(1.0, 0.0);
        s
    }

    /// All atoms down, photon register empty.
    pub fn ground(basis: Arc<CompositeBasis>) -> Self {
        Self::basis_state(basis, 0, 0)
    }

    pub fn norm_sq(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }
}

pub fn inner(bra: &[C64], ket: &[C64]) -> C64 {
    debug_assert_eq!(bra.len(), ket.len());
    bra.iter()
        .zip(ket)
        .map(|(b, k)| b.conj() * k)
        .fold(C64::new(0.0, 0.0), |acc, z| acc + z)
}

pub fn norm_sq(psi: &[C64]) -> f64 {
    psi.iter().map(|a| a.norm_sqr()).sum()
}
