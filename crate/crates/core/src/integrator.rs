//! Adaptive third-order exponential Rosenbrock stepper (exprb32).
//!
//! One step from (t, y) with step h and frozen linearization J:
//!
//! ```text
//! U2     = y + h phi_1(hJ) F(t, y)
//! D      = F(t + h, U2) - F(t, y) - J (U2 - y)
//! y_next = U2 + 2 h phi_3(hJ) D
//! ```
//!
//! U2 alone is the exponential-Euler (second-order) result, so the correction
//! term doubles as the embedded error estimate.  The phi-function actions
//! phi_k(z) = sum_j z^j / (j + k)! are evaluated through a truncated Taylor
//! series of an augmented linear system; when ||hJ v|| / ||v|| exceeds a
//! configured ratio the interval is split into equal sub-steps, using the
//! exact semigroup composition of the augmented flow.
//!
//! Linear problems with F = J y are reproduced exactly (the defect D
//! vanishes), which is what makes the scheme efficient here: the stiff
//! oscillatory part of the dynamics sits entirely in J.

use num_complex::Complex;

use crate::error::{Result, SimError};
use crate::scalar::Real;

/// Any linear action v -> A v.
pub trait LinearOp<R: Real> {
    fn len(&self) -> usize;
    fn apply(&self, v: &[Complex<R>], out: &mut [Complex<R>]);
}

/// Right-hand side with a caller-chosen linearization, frozen per step.
pub trait OdeSystem<R: Real> {
    fn len(&self) -> usize;
    fn rhs(&mut self, t: f64, y: &[Complex<R>], out: &mut [Complex<R>]);
    /// Freeze the linear part at the step's start point.
    fn freeze_linear_part(&mut self, t: f64, y: &[Complex<R>]);
    /// Apply the frozen linear part.
    fn apply_linear(&self, v: &[Complex<R>], out: &mut [Complex<R>]);
    /// Scaled error norm; step accepted when it is at most 1.  The default
    /// treats the whole vector as one group.
    fn error_norm(&self, err: &[Complex<R>], y: &[Complex<R>], rtol: f64, atol: f64) -> f64 {
        weighted_rms(err, y, rtol, atol)
    }
}

/// sqrt(mean((|e_i| / (atol + rtol |y_i|))^2)), accumulated in f64.
pub fn weighted_rms<R: Real>(err: &[Complex<R>], y: &[Complex<R>], rtol: f64, atol: f64) -> f64 {
    debug_assert_eq!(err.len(), y.len());
    if err.is_empty() {
        return 0.0;
    }
    let mut acc = 0.0f64;
    for (e, v) in err.iter().zip(y) {
        let scale = atol + rtol * v.norm().to_f64();
        let r = e.norm().to_f64() / scale;
        acc += r * r;
    }
    (acc / err.len() as f64).sqrt()
}

/// Step-size control and series limits.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct StepController {
    pub rtol: f64,
    pub atol: f64,
    pub safety: f64,
    pub min_factor: f64,
    pub max_factor: f64,
    /// Starting step; estimated from the initial slope when absent.
    pub initial_step: Option<f64>,
    pub min_step: f64,
    /// Taylor terms allowed per sub-step before the step is declared too large.
    pub max_series_terms: usize,
    /// Sub-step when ||hJ v|| / ||v|| exceeds this.
    pub substep_ratio: f64,
    pub max_substeps: usize,
    /// Relative truncation target for the phi series.  Zero (the default)
    /// means machine epsilon in the working precision; a loose-tolerance run
    /// can raise it (e.g. 1e-9) to stop summing terms that are far below the
    /// step-error budget.  Keep it at least three orders below `atol`.
    pub series_rel_tol: f64,
}

impl StepController {
    pub fn default_double() -> Self {
        Self {
            rtol: 1e-6,
            atol: 1e-9,
            safety: 0.9,
            min_factor: 0.2,
            max_factor: 5.0,
            initial_step: None,
            min_step: 1e-10,
            max_series_terms: 48,
            substep_ratio: 4.0,
            max_substeps: 65_536,
            series_rel_tol: 0.0,
        }
    }

    pub fn default_single() -> Self {
        Self {
            rtol: 1e-4,
            atol: 1e-6,
            ..Self::default_double()
        }
    }

    /// Step-size multiplier from a scaled error (third-order exponent).
    /// Non-finite errors halve the step.
    pub fn step_factor(&self, error: f64) -> f64 {
        if !error.is_finite() {
            return 0.5;
        }
        if error == 0.0 {
            return self.max_factor;
        }
        (self.safety * error.powf(-1.0 / 3.0)).clamp(self.min_factor, self.max_factor)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol > 0.0) {
            return Err(SimError::InvalidParams("tolerances must be positive".into()));
        }
        if !(self.safety > 0.0 && self.safety < 1.0) {
            return Err(SimError::InvalidParams("safety must lie in (0, 1)".into()));
        }
        if !(self.min_factor > 0.0 && self.min_factor < 1.0 && self.max_factor > 1.0) {
            return Err(SimError::InvalidParams("step factors must bracket 1".into()));
        }
        if self.max_series_terms < 4 || self.substep_ratio <= 0.0 || self.max_substeps == 0 {
            return Err(SimError::InvalidParams("series limits out of range".into()));
        }
        if !(0.0..1e-3).contains(&self.series_rel_tol) {
            return Err(SimError::InvalidParams(
                "series_rel_tol must lie in [0, 1e-3)".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StepFailure {
    /// Taylor series did not converge within the configured limits.
    SeriesOverflow,
    /// A stage produced non-finite values.
    NonFinite,
}

/// Scratch for one step; reusable across steps of equal dimension.
pub struct Workspace<R: Real> {
    f0: Vec<Complex<R>>,
    u2: Vec<Complex<R>>,
    f1: Vec<Complex<R>>,
    jw: Vec<Complex<R>>,
    err: Vec<Complex<R>>,
    phi_term: Vec<Complex<R>>,
    phi_tmp: Vec<Complex<R>>,
    /// Whether f0 and the frozen linear part are valid for the current (t, y).
    f0_valid: bool,
}

impl<R: Real> Workspace<R> {
    pub fn new(len: usize) -> Self {
        let zero = Complex::new(R::zero(), R::zero());
        Self {
            f0: vec![zero; len],
            u2: vec![zero; len],
            f1: vec![zero; len],
            jw: vec![zero; len],
            err: vec![zero; len],
            phi_term: vec![zero; len],
            phi_tmp: vec![zero; len],
            f0_valid: false,
        }
    }

    /// Call when (t, y) changed (step accepted or state edited externally).
    pub fn invalidate(&mut self) {
        self.f0_valid = false;
    }
}

struct FrozenLinear<'a, R: Real, S: OdeSystem<R>> {
    sys: &'a S,
    _r: std::marker::PhantomData<R>,
}

impl<'a, R: Real, S: OdeSystem<R>> LinearOp<R> for FrozenLinear<'a, R, S> {
    fn len(&self) -> usize {
        self.sys.len()
    }
    fn apply(&self, v: &[Complex<R>], out: &mut [Complex<R>]) {
        self.sys.apply_linear(v, out);
    }
}

fn norm2<R: Real>(v: &[Complex<R>]) -> f64 {
    v.iter().map(|z| z.norm_sqr().to_f64()).sum::<f64>().sqrt()
}

/// out += s0 * h^k phi_k(hA) v, by Taylor series with equal sub-steps.
///
/// The augmented state is (y, s_0..s_{k-1}) with dy/dt = A y + v s_{k-1},
/// ds_j/dt = s_{j-1}, ds_0/dt = 0, started at y = 0, s = (s0, 0, ..).  The
/// scalar chain is nilpotent, so it contributes exactly; `v` enters linearly
/// and s0 may carry any scale factor.
#[allow(clippy::too_many_arguments)]
fn phi_accumulate<R: Real>(
    op: &dyn LinearOp<R>,
    k: usize,
    h: f64,
    v: &[Complex<R>],
    s0: f64,
    out: &mut [Complex<R>],
    term: &mut [Complex<R>],
    tmp: &mut [Complex<R>],
    ctrl: &StepController,
) -> std::result::Result<(), StepFailure> {
    debug_assert!(k >= 1);
    let n = v.len();
    let zero = Complex::new(R::zero(), R::zero());

    let v_norm = norm2(v) * s0.abs();
    if v_norm == 0.0 || h == 0.0 {
        return Ok(());
    }

    // Sub-step count from the spectral scale of A on v.
    op.apply(v, tmp);
    let ratio = h.abs() * norm2(tmp) / norm2(v);
    if !ratio.is_finite() {
        return Err(StepFailure::NonFinite);
    }
    let m = ((ratio / ctrl.substep_ratio).ceil() as usize).max(1);
    if m > ctrl.max_substeps {
        return Err(StepFailure::SeriesOverflow);
    }
    let dt = h / m as f64;

    // Running augmented state: y-part accumulates into `acc`, scalars in f64.
    let mut acc = vec![zero; n];
    let mut s_acc = vec![0.0f64; k];
    s_acc[0] = s0;

    let mut s_term = vec![0.0f64; k];
    for _ in 0..m {
        term.copy_from_slice(&acc);
        s_term.copy_from_slice(&s_acc);
        let base_norm = {
            let sn: f64 = s_term.iter().map(|s| s * s).sum();
            (norm2(term).powi(2) + sn).sqrt().max(v_norm)
        };
        let mut converged = false;
        for p in 1..=ctrl.max_series_terms {
            // tmp = A term_y + v * s_{k-1}
            op.apply(term, tmp);
            let drive = R::from_f64(s_term[k - 1]);
            for (t_i, v_i) in tmp.iter_mut().zip(v) {
                *t_i += *v_i * drive;
            }
            let w = R::from_f64(dt / p as f64);
            for (dst, src) in term.iter_mut().zip(tmp.iter()) {
                *dst = *src * w;
            }
            // scalar chain shifts up one slot per order
            for j in (1..k).rev() {
                s_term[j] = s_term[j - 1] * dt / p as f64;
            }
            s_term[0] = 0.0;

            for (a, t) in acc.iter_mut().zip(term.iter()) {
                *a += *t;
            }
            for (a, s) in s_acc.iter_mut().zip(s_term.iter()) {
                *a += *s;
            }

            let t_norm = {
                let sn: f64 = s_term.iter().map(|s| s * s).sum();
                (norm2(term).powi(2) + sn).sqrt()
            };
            if !t_norm.is_finite() {
                return Err(StepFailure::NonFinite);
            }
            let a_norm = {
                let sn: f64 = s_acc.iter().map(|s| s * s).sum();
                (norm2(&acc).powi(2) + sn).sqrt().max(base_norm)
            };
            if t_norm <= R::EPS.max(ctrl.series_rel_tol) * a_norm {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(StepFailure::SeriesOverflow);
        }
    }

    for (o, a) in out.iter_mut().zip(acc.iter()) {
        *o += *a;
    }
    Ok(())
}

/// phi_k(hA) v for k >= 0.  phi_0 is the plain exponential action.
pub fn phi_action<R: Real>(
    op: &dyn LinearOp<R>,
    k: usize,
    h: f64,
    v: &[Complex<R>],
    ctrl: &StepController,
) -> Result<Vec<Complex<R>>> {
    let n = op.len();
    assert_eq!(v.len(), n);
    let zero = Complex::new(R::zero(), R::zero());
    let fail = |f: StepFailure| {
        SimError::InvalidParams(format!(
            "phi series did not converge ({f:?}); reduce h or raise the series limits"
        ))
    };

    if k == 0 {
        // e^{hA} v: start from v and push it through phi_1's machinery via
        // the identity e^z = 1 + z phi_1(z).
        let mut av = vec![zero; n];
        op.apply(v, &mut av);
        let mut out = v.to_vec();
        let mut term = vec![zero; n];
        let mut tmp = vec![zero; n];
        phi_accumulate(op, 1, h, &av, 1.0, &mut out, &mut term, &mut tmp, ctrl).map_err(fail)?;
        return Ok(out);
    }

    let mut kfact = 1.0f64;
    for j in 2..=k {
        kfact *= j as f64;
    }
    if h == 0.0 {
        let w = R::from_f64(1.0 / kfact);
        return Ok(v.iter().map(|z| *z * w).collect());
    }

    let mut out = vec![zero; n];
    let mut term = vec![zero; n];
    let mut tmp = vec![zero; n];
    // h^k phi_k(hA) v scaled back by h^{-k}, carried in the s_0 seed.
    let s0 = 1.0 / h.powi(k as i32);
    phi_accumulate(op, k, h, v, s0, &mut out, &mut term, &mut tmp, ctrl).map_err(fail)?;
    Ok(out)
}

/// One exprb32 attempt.  On success y_next holds the third-order result and
/// the scaled error estimate is returned; the caller decides acceptance.
pub fn exprb32_step<R: Real, S: OdeSystem<R>>(
    sys: &mut S,
    t: f64,
    h: f64,
    y: &[Complex<R>],
    y_next: &mut [Complex<R>],
    ws: &mut Workspace<R>,
    ctrl: &StepController,
) -> std::result::Result<f64, StepFailure> {
    let n = y.len();
    debug_assert_eq!(sys.len(), n);

    if !ws.f0_valid {
        sys.freeze_linear_part(t, y);
        sys.rhs(t, y, &mut ws.f0);
        ws.f0_valid = true;
    }

    // U2 = y + h phi_1(hJ) f0
    ws.u2.copy_from_slice(y);
    {
        let lin = FrozenLinear {
            sys: &*sys,
            _r: std::marker::PhantomData,
        };
        phi_accumulate(
            &lin,
            1,
            h,
            &ws.f0,
            1.0,
            &mut ws.u2,
            &mut ws.phi_term,
            &mut ws.phi_tmp,
            ctrl,
        )?;
    }

    // D = F(t + h, U2) - f0 - J (U2 - y), assembled in f1
    sys.rhs(t + h, &ws.u2, &mut ws.f1);
    for i in 0..n {
        ws.err[i] = ws.u2[i] - y[i];
    }
    sys.apply_linear(&ws.err, &mut ws.jw);
    for i in 0..n {
        ws.f1[i] = ws.f1[i] - ws.f0[i] - ws.jw[i];
    }

    // correction = 2 h phi_3(hJ) D, also the error estimate
    ws.err.fill(Complex::new(R::zero(), R::zero()));
    {
        let lin = FrozenLinear {
            sys: &*sys,
            _r: std::marker::PhantomData,
        };
        phi_accumulate(
            &lin,
            3,
            h,
            &ws.f1,
            2.0 / (h * h),
            &mut ws.err,
            &mut ws.phi_term,
            &mut ws.phi_tmp,
            ctrl,
        )?;
    }

    for i in 0..n {
        y_next[i] = ws.u2[i] + ws.err[i];
    }

    let error = sys.error_norm(&ws.err, y, ctrl.rtol, ctrl.atol);
    if !error.is_finite() {
        return Err(StepFailure::NonFinite);
    }
    Ok(error)
}

#[derive(Debug, Clone, Default)]
pub struct IntegrationReport {
    pub steps_accepted: usize,
    pub steps_rejected: usize,
    pub rhs_evals: usize,
}

/// Adaptive integration of y from t0 to t1.  Steps are clamped so that every
/// entry of the sorted `record_times` is hit exactly by a step endpoint, and
/// the state is handed to `record` there; no interpolation is involved.  The
/// callback may edit the state in place (the linearization is refrozen
/// afterwards) and may abort the run by returning an error.
pub fn integrate_adaptive<R: Real, S: OdeSystem<R>>(
    sys: &mut S,
    t0: f64,
    t1: f64,
    y: &mut Vec<Complex<R>>,
    record_times: &[f64],
    mut record: impl FnMut(f64, &mut [Complex<R>]) -> Result<()>,
    ctrl: &StepController,
) -> Result<IntegrationReport> {
    ctrl.validate()?;
    if !(t1 > t0) {
        return Err(SimError::InvalidParams("t1 must exceed t0".into()));
    }
    let n = y.len();
    let mut ws = Workspace::new(n);
    let mut y_next = vec![Complex::new(R::zero(), R::zero()); n];
    let mut report = IntegrationReport::default();

    let mut next_rec = 0usize;
    while next_rec < record_times.len() && record_times[next_rec] <= t0 {
        record(record_times[next_rec], y)?;
        next_rec += 1;
    }

    let span = t1 - t0;
    let mut h = match ctrl.initial_step {
        Some(h0) => h0.min(span),
        None => {
            sys.freeze_linear_part(t0, y);
            sys.rhs(t0, y, &mut ws.f0);
            ws.f0_valid = true;
            report.rhs_evals += 1;
            let y_norm = norm2(y).max(ctrl.atol);
            let f_norm = norm2(&ws.f0);
            if f_norm > 0.0 {
                (0.01 * y_norm / f_norm).min(span / 10.0).max(ctrl.min_step)
            } else {
                span / 10.0
            }
        }
    };

    let mut t = t0;
    let end_eps = 1e-14 * span.max(t1.abs());
    while t1 - t > end_eps {
        let mut h_try = h.min(t1 - t);
        if let Some(&r) = record_times.get(next_rec) {
            if r - t > end_eps {
                h_try = h_try.min(r - t);
            }
        }
        match exprb32_step(sys, t, h_try, y, &mut y_next, &mut ws, ctrl) {
            Ok(error) => {
                report.rhs_evals += 2;
                if error <= 1.0 {
                    t += h_try;
                    while next_rec < record_times.len() && record_times[next_rec] <= t + end_eps {
                        record(record_times[next_rec], &mut y_next)?;
                        next_rec += 1;
                    }
                    std::mem::swap(y, &mut y_next);
                    ws.invalidate();
                    report.steps_accepted += 1;
                    h = h_try * ctrl.step_factor(error);
                } else {
                    report.steps_rejected += 1;
                    h = h_try * ctrl.step_factor(error);
                    if h < ctrl.min_step {
                        return Err(SimError::StepSizeUnderflow {
                            t_cycles: t / crate::bath::CYCLE,
                            h,
                            min: ctrl.min_step,
                        });
                    }
                }
            }
            Err(_) => {
                report.steps_rejected += 1;
                h = h_try * 0.5;
                if h < ctrl.min_step {
                    return Err(SimError::StepSizeUnderflow {
                        t_cycles: t / crate::bath::CYCLE,
                        h,
                        min: ctrl.min_step,
                    });
                }
            }
        }
    }

    while next_rec < record_times.len() {
        record(record_times[next_rec], y)?;
        next_rec += 1;
    }
    Ok(report)
}
