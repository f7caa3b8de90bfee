//! Photonic band, its finite-mode discretization, the classical drive, and
//! the vacuum sampler for the coherent field variables.
//!
//! The band is the single branch of a tight-binding chain,
//!
//! ```text
//! omega(k) = epsilon + 2 h cos k,          k in (0, pi)
//! ```
//!
//! sampled on the midpoint grid k_nu = (nu - 1/2) pi / N_m with dk = pi / N_m.
//! The atoms couple through the first chain site, which under the sine
//! transform gives per-mode couplings
//!
//! ```text
//! c_nu = h_c sqrt(2/pi) sin(k_nu) sqrt(dk)
//! ```
//!
//! normalized so that sum |c_nu|^2 -> h_c^2 as N_m grows.  All frequencies are
//! in units of omega_0 (the atomic splitting) and all times in laser cycles of
//! length 2 pi / omega_0.

use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{Result, SimError};
use crate::hilbert::C64;

/// Internal time units per laser cycle (omega_0 = 1).
pub const CYCLE: f64 = 2.0 * PI;

/// Tight-binding band: center, half-bandwidth parameter, and site coupling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BandParams {
    /// Band center epsilon, units of omega_0.
    pub epsilon: f64,
    /// Hopping h; the band spans epsilon +- 2h.
    pub hopping: f64,
    /// Atom-site coupling h_c.
    pub coupling: f64,
}

impl BandParams {
    pub fn omega(&self, k: f64) -> f64 {
        self.epsilon + 2.0 * self.hopping * k.cos()
    }

    /// Continuum coupling density c(k), before quadrature weighting.
    pub fn coupling_density(&self, k: f64) -> f64 {
        self.coupling * (2.0 / PI).sqrt() * k.sin()
    }

    pub fn validate(&self) -> Result<()> {
        if !self.epsilon.is_finite() || !self.hopping.is_finite() || !self.coupling.is_finite() {
            return Err(SimError::InvalidParams("band parameters must be finite".into()));
        }
        if self.hopping < 0.0 {
            return Err(SimError::InvalidParams("hopping must be non-negative".into()));
        }
        if self.coupling < 0.0 {
            return Err(SimError::InvalidParams("coupling must be non-negative".into()));
        }
        Ok(())
    }
}

/// Midpoint-rule discretization of the band into N_m modes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BathDiscretization {
    pub band: BandParams,
    pub n_modes: usize,
    pub dk: f64,
    pub k_nodes: Vec<f64>,
    pub omegas: Vec<f64>,
    pub couplings: Vec<C64>,
}

pub fn discretize_band(band: BandParams, n_modes: usize) -> Result<BathDiscretization> {
    band.validate()?;
    if n_modes == 0 {
        return Err(SimError::InvalidParams("n_modes must be at least 1".into()));
    }
    let dk = PI / n_modes as f64;
    let k_nodes: Vec<f64> = (1..=n_modes).map(|nu| (nu as f64 - 0.5) * dk).collect();
    let omegas: Vec<f64> = k_nodes.iter().map(|&k| band.omega(k)).collect();
    let couplings: Vec<C64> = k_nodes
        .iter()
        .map(|&k| Complex64::new(band.coupling_density(k) * dk.sqrt(), 0.0))
        .collect();
    Ok(BathDiscretization {
        band,
        n_modes,
        dk,
        k_nodes,
        omegas,
        couplings,
    })
}

impl BathDiscretization {
    /// sum |c_nu|^2, which converges to h_c^2 from below as N_m grows.
    pub fn total_coupling_weight(&self) -> f64 {
        self.couplings.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Pulse envelope shapes.  Durations and centers are in laser cycles.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Envelope {
    /// sin^2(pi t / T) on [0, T], zero outside.
    SineSquared { duration_cycles: f64 },
    /// 1 on [0, T], zero outside.
    FlatTop { duration_cycles: f64 },
    /// exp(-(t - t0)^2 / (2 sigma^2)), never exactly zero.
    Gaussian { center_cycles: f64, sigma_cycles: f64 },
}

impl Envelope {
    /// Envelope value at internal time t (omega_0 units).
    pub fn eval(&self, t: f64) -> f64 {
        match *self {
            Envelope::SineSquared { duration_cycles } => {
                let big_t = duration_cycles * CYCLE;
                if t < 0.0 || t > big_t {
                    0.0
                } else {
                    let s = (PI * t / big_t).sin();
                    s * s
                }
            }
            Envelope::FlatTop { duration_cycles } => {
                let big_t = duration_cycles * CYCLE;
                if t < 0.0 || t > big_t {
                    0.0
                } else {
                    1.0
                }
            }
            Envelope::Gaussian {
                center_cycles,
                sigma_cycles,
            } => {
                let t0 = center_cycles * CYCLE;
                let sigma = sigma_cycles * CYCLE;
                let x = (t - t0) / sigma;
                (-0.5 * x * x).exp()
            }
        }
    }
}

/// Classical drive F(t) = amplitude * envelope(t) * cos(carrier t + phase).
///
/// `amplitude` is the product d_0 F_0, i.e. the peak Rabi frequency in units
/// of omega_0.  The default (sine-squared over 8 cycles, amplitude 1/4) gives
/// a pulse area of 2 pi: an undamped resonant atom completes one full Rabi
/// cycle, reaching full inversion at the pulse center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriveWaveform {
    /// Carrier frequency, units of omega_0.
    pub carrier: f64,
    /// Peak Rabi frequency d_0 F_0, units of omega_0.
    pub amplitude: f64,
    /// Carrier-envelope phase, radians.
    pub phase: f64,
    pub envelope: Envelope,
}

impl Default for DriveWaveform {
    fn default() -> Self {
        Self {
            carrier: 1.0,
            amplitude: 0.25,
            phase: 0.0,
            envelope: Envelope::SineSquared {
                duration_cycles: 8.0,
            },
        }
    }
}

impl DriveWaveform {
    /// F(t) at internal time t (omega_0 units).
    #[inline]
    pub fn eval(&self, t: f64) -> f64 {
        if self.amplitude == 0.0 {
            return 0.0;
        }
        self.amplitude * self.envelope.eval(t) * (self.carrier * t + self.phase).cos()
    }

    /// Pulse area / 2: the accumulated Rabi phase theta(t) = int_0^t A env dt',
    /// by Simpson quadrature.  Used by tests against the resonant flopping
    /// formula sin^2(theta / 2).
    pub fn rabi_phase(&self, t: f64, n_panels: usize) -> f64 {
        let n = n_panels.max(2) & !1; // even
        let h = t / n as f64;
        let f = |x: f64| self.amplitude * self.envelope.eval(x);
        let mut acc = f(0.0) + f(t);
        for i in 1..n {
            let w = if i % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(i as f64 * h);
        }
        acc * h / 3.0
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.carrier.is_finite() && self.amplitude.is_finite() && self.phase.is_finite()) {
            return Err(SimError::InvalidParams("drive parameters must be finite".into()));
        }
        if self.carrier < 0.0 {
            return Err(SimError::InvalidParams("carrier must be non-negative".into()));
        }
        match self.envelope {
            Envelope::SineSquared { duration_cycles } | Envelope::FlatTop { duration_cycles } => {
                if duration_cycles <= 0.0 {
                    return Err(SimError::InvalidParams("envelope duration must be positive".into()));
                }
            }
            Envelope::Gaussian { sigma_cycles, .. } => {
                if sigma_cycles <= 0.0 {
                    return Err(SimError::InvalidParams("gaussian sigma must be positive".into()));
                }
            }
        }
        Ok(())
    }
}

/// Draws the initial coherent field variables alpha_nu from the vacuum Husimi
/// distribution: independent complex Gaussians with E|alpha|^2 = 1, i.e.
/// standard deviation 1/sqrt(2) per quadrature.
///
/// Streams are counter-based: trajectory xi always sees the same draws for a
/// given master seed, independent of batch size or threading.
#[derive(Debug, Clone, Copy)]
pub struct VacuumSampler {
    master_seed: u64,
    n_modes: usize,
}

impl VacuumSampler {
    pub fn new(master_seed: u64, n_modes: usize) -> Self {
        Self {
            master_seed,
            n_modes,
        }
    }

    pub fn sample(&self, trajectory: u64) -> Vec<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.master_seed);
        rng.set_stream(trajectory);
        let root_half = std::f64::consts::FRAC_1_SQRT_2;
        (0..self.n_modes)
            .map(|_| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                Complex64::new(re * root_half, im * root_half)
            })
            .collect()
    }
}
