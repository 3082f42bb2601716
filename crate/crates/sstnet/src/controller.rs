//! Storage tracking controller: setpoint conversion, reference assembly, the
//! derivative filter, the feedback-linearizing duty law, and the duty ↔
//! phase-shift inversion for the storage converter.
//!
//! The duty law cancels the storage converter's nonlinearity so the tracking
//! error δ = I_b − I_b^r obeys δ̇ = −κ_p/(r_o·C_o)·δ exactly when the
//! derivative feedforward terms (İ_b^r and the bus rate φ_vl) are exact. In
//! simulation both come from a first-order filter with time constant `tau_f`.
//!
//! Duty-to-phase-shift inversion uses the branch
//!   φ_b = 1/2 − (1/2)·√(1 − 4h),  h = 2·f_b·L_b·u_b/n_b,
//! which round-trips the forward map u_b = n_b·φ_b(1−φ_b)/(2·f_b·L_b) over the
//! whole feasible range [−n_b/(f_b·L_b), n_b/(8·f_b·L_b)], hitting φ_b = −1 at
//! the lower endpoint and φ_b = 1/2 at the upper.

use thiserror::Error;

use crate::dynamics::{Clamped, DesdState};
use crate::netmodel::DesdParams;

#[derive(Debug, Error, PartialEq)]
pub enum ControllerError {
    #[error("low-voltage bus setpoint must be positive, got {v_l}")]
    NonPositiveBusSetpoint { v_l: f64 },
    #[error("battery-side voltage {v_in} fell below guard {guard}; duty held")]
    InputVoltageFault { v_in: f64, guard: f64 },
}

/// DAB current setpoint from the power setpoint:
/// I_dab★ = (P_rec★ − (v_f★ − v_h★)²/r_h) / v_l★.
pub fn idab_setpoint(
    p_rec: f64,
    v_f_sp: f64,
    v_h_sp: f64,
    v_l_sp: f64,
    r_h: f64,
) -> Result<f64, ControllerError> {
    if v_l_sp <= 0.0 {
        return Err(ControllerError::NonPositiveBusSetpoint { v_l: v_l_sp });
    }
    let loss = (v_f_sp - v_h_sp).powi(2) / r_h;
    Ok((p_rec - loss) / v_l_sp)
}

/// Storage current reference I_b^r = I_b − I_dab + I_dab★.
///
/// Substituting the bus current balance shows the reference is exogenous:
/// it equals I_l − I_pv − I_w + I_dab★ independent of the storage state.
pub fn reference_current(i_b: f64, i_dab: f64, i_dab_sp: f64) -> f64 {
    i_b - i_dab + i_dab_sp
}

/// First-order reference filter providing İ_b^r.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerState {
    /// Filtered reference, A.
    pub filt_ibr: f64,
    /// Reference rate estimate, A/s.
    pub filt_dibr: f64,
    /// Filter time constant, s.
    pub tau_f: f64,
    /// Most recent raw reference, A.
    pub last_raw: f64,
    primed: bool,
}

impl ControllerState {
    pub fn new(tau_f: f64) -> Self {
        Self { filt_ibr: 0.0, filt_dibr: 0.0, tau_f, last_raw: 0.0, primed: false }
    }

    /// Advance the filter one step: filt += (dt/τ_f)(raw − filt), with the
    /// rate estimate taken from the same update. The first call primes the
    /// filter at the raw value so startup injects no artificial derivative.
    pub fn filter_step(&mut self, raw: f64, dt: f64) {
        if !self.primed {
            self.filt_ibr = raw;
            self.filt_dibr = 0.0;
            self.primed = true;
        } else {
            let next = self.filt_ibr + (dt / self.tau_f) * (raw - self.filt_ibr);
            self.filt_dibr = (next - self.filt_ibr) / dt;
            self.filt_ibr = next;
        }
        self.last_raw = raw;
    }
}

/// Default low-voltage fault guard on the battery-side voltage: 1% of v_b_min.
pub fn default_vin_guard(p: &DesdParams) -> f64 {
    0.01 * p.v_b_min
}

/// Feedback-linearizing storage duty:
/// u_b = (1/v_in)·[(1−κ_p)(v_o−v_l)/r_o + κ_p·I_b^r + r_o·C_o·İ_b^r + C_o·φ_vl].
///
/// Fails (so the caller can hold the previous duty) when v_in is at or below
/// the guard, where the division loses meaning.
pub fn control_law(
    d: &DesdState,
    v_l: f64,
    i_b_ref: f64,
    di_b_ref: f64,
    phi_vl: f64,
    p: &DesdParams,
    v_in_guard: f64,
) -> Result<f64, ControllerError> {
    if d.v_in <= v_in_guard {
        return Err(ControllerError::InputVoltageFault { v_in: d.v_in, guard: v_in_guard });
    }
    let numer = (1.0 - p.kappa_p) * (d.v_o - v_l) / p.r_o
        + p.kappa_p * i_b_ref
        + p.r_o * p.c_o * di_b_ref
        + p.c_o * phi_vl;
    Ok(numer / d.v_in)
}

/// Feasible storage duty interval [−n_b/(f_b·L_b), n_b/(8·f_b·L_b)].
pub fn duty_range(p: &DesdParams) -> (f64, f64) {
    let scale = p.n_b / (p.f_b * p.l_b);
    (-scale, scale / 8.0)
}

/// Forward map: u_b = n_b·φ_b(1−φ_b)/(2·f_b·L_b).
pub fn duty_from_phase_shift(phi_b: f64, p: &DesdParams) -> f64 {
    p.n_b * phi_b * (1.0 - phi_b) / (2.0 * p.f_b * p.l_b)
}

/// Inverse map with range clamping. Out-of-range duties are clamped to the
/// feasible interval first and flagged.
pub fn phase_shift_from_duty(u_b: f64, p: &DesdParams) -> Clamped {
    assert!(u_b.is_finite(), "storage duty must be finite, got {u_b}");
    let (lo, hi) = duty_range(p);
    let saturated = u_b < lo || u_b > hi;
    let u = u_b.clamp(lo, hi);
    let h = 2.0 * p.f_b * p.l_b * u / p.n_b;
    // Rounding at the upper endpoint can push the radicand a hair negative.
    let radicand = (1.0 - 4.0 * h).max(0.0);
    Clamped { value: 0.5 - 0.5 * radicand.sqrt(), saturated }
}
