//! Converter dynamics of one SST: active rectifier with dq current control,
//! dual-active-bridge (DAB) stage, and the storage (battery) converter.
//!
//! State conventions, per SST:
//! - rectifier: dq currents `i_d`, `i_q`, DC bus voltage `v_f`, PI integrators
//!   `xi1` (bus-voltage error), `xi2` (d-current error), `xi3` (q-current error)
//! - DAB: input bus `v_h`, low-voltage bus `v_l`, PI integrator `xi4`
//! - storage: output voltage `v_o`, battery-side voltage `v_in`
//!
//! The rectifier supports two fidelity modes: `Full` keeps the double-frequency
//! (2θ) terms on the DC bus equation that the single-phase stage injects;
//! `Fundamental` drops them, leaving the autonomous average model that the
//! equilibrium and eigenvalue analyses are built on.
//!
//! All duty-type outputs are clamped to their physical ranges and carry a
//! saturation flag; the clamp never silently rewrites state.

use serde::{Deserialize, Serialize};

use crate::netmodel::{DesdParams, SetpointSet, SstParams};

/// Rectifier fidelity: keep or drop the 2θ ripple terms on the DC bus.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RectifierMode {
    Full,
    #[default]
    Fundamental,
}

/// Dynamic state of one SST (rectifier + DAB stages).
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SstState {
    pub i_d: f64,
    pub i_q: f64,
    pub v_f: f64,
    pub v_h: f64,
    pub v_l: f64,
    pub xi1: f64,
    pub xi2: f64,
    pub xi3: f64,
    pub xi4: f64,
}

impl SstState {
    /// Pack into the analysis ordering [i_d, i_q, v_f, v_h, v_l, ξ1, ξ2, ξ3, ξ4].
    pub fn to_array(self) -> [f64; 9] {
        [
            self.i_d, self.i_q, self.v_f, self.v_h, self.v_l, self.xi1, self.xi2, self.xi3,
            self.xi4,
        ]
    }

    pub fn from_array(z: [f64; 9]) -> Self {
        Self {
            i_d: z[0],
            i_q: z[1],
            v_f: z[2],
            v_h: z[3],
            v_l: z[4],
            xi1: z[5],
            xi2: z[6],
            xi3: z[7],
            xi4: z[8],
        }
    }
}

/// Dynamic state of one storage converter.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct DesdState {
    /// Storage output voltage, V.
    pub v_o: f64,
    /// Battery-side voltage, V.
    pub v_in: f64,
}

/// Exogenous inputs of one SST at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SstInputs {
    /// Terminal d-axis voltage from the feeder coupling, V.
    pub v_d: f64,
    /// Terminal q-axis voltage from the feeder coupling, V.
    pub v_q: f64,
    /// Grid phase, rad.
    pub theta: f64,
    /// Grid angular frequency, rad/s.
    pub omega: f64,
    /// Current drawn from the low-voltage bus node, A.
    pub i_dab: f64,
}

/// A control output after range limiting.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Clamped {
    pub value: f64,
    pub saturated: bool,
}

fn clamp(raw: f64, lo: f64, hi: f64) -> Clamped {
    if raw < lo {
        Clamped { value: lo, saturated: true }
    } else if raw > hi {
        Clamped { value: hi, saturated: true }
    } else {
        Clamped { value: raw, saturated: false }
    }
}

/// Saturation flags of one SST's modulation outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SstFlags {
    pub d1: bool,
    pub d2: bool,
    pub phi_s: bool,
}

// ---------------------------------------------------------------------------
// Rectifier stage
// ---------------------------------------------------------------------------

/// Rectifier duty cycles from the cascaded PI laws, clamped to [−1, 1].
///
/// d1 = k4·[k1(v_f★ − v_f) + k2·ξ1 − i_d] + k3·ξ2 regulates the DC bus through
/// the d-axis current; d2 = k5(i_q★ − i_q) + k6·ξ3 regulates reactive current.
pub fn duty_cycles(s: &SstState, p: &SstParams, sp: &SetpointSet) -> (Clamped, Clamped) {
    let (d1, d2) = duty_cycles_raw(s, p, sp);
    (clamp(d1, -1.0, 1.0), clamp(d2, -1.0, 1.0))
}

/// The modulation commands the rectifier duty laws request, before range
/// limiting — the smooth signals the small-signal analysis differentiates.
pub fn duty_cycles_raw(s: &SstState, p: &SstParams, sp: &SetpointSet) -> (f64, f64) {
    let e_vf = sp.v_f - s.v_f;
    let d1 = p.k4 * (p.k1 * e_vf + p.k2 * s.xi1 - s.i_d) + p.k3 * s.xi2;
    let d2 = p.k5 * (sp.i_q - s.i_q) + p.k6 * s.xi3;
    (d1, d2)
}

/// Rectifier derivatives, ordered (i_d, i_q, v_f, ξ1, ξ2, ξ3).
///
/// The v_f equation exchanges charge with the DAB input bus through r_h. In
/// `Full` mode the single-phase power pulsation adds
/// (d1·i_d + d2·i_q)·cos2θ/C_f + (d1·i_q + d2·i_d)·sin2θ/C_f.
pub fn rectifier_rhs(
    s: &SstState,
    u: &SstInputs,
    p: &SstParams,
    sp: &SetpointSet,
    mode: RectifierMode,
) -> [f64; 6] {
    let (d1, d2) = duty_cycles(s, p, sp);
    rectifier_rhs_with(d1.value, d2.value, s, u, p, sp, mode)
}

/// `rectifier_rhs` for externally supplied duties.
pub fn rectifier_rhs_with(
    d1: f64,
    d2: f64,
    s: &SstState,
    u: &SstInputs,
    p: &SstParams,
    sp: &SetpointSet,
    mode: RectifierMode,
) -> [f64; 6] {
    let did = -(p.r_f / p.l_f) * s.i_d + u.omega * s.i_q + (d1 * s.v_f - u.v_d) / p.l_f;
    let diq = -u.omega * s.i_d - (p.r_f / p.l_f) * s.i_q + (d2 * s.v_f - u.v_q) / p.l_f;
    let pulsation = d1 * s.i_d + d2 * s.i_q;
    let mut dvf = -(s.v_f - s.v_h) / (p.c_f * p.r_h) - pulsation / (2.0 * p.c_f);
    if mode == RectifierMode::Full {
        let two_theta = 2.0 * u.theta;
        dvf += pulsation * two_theta.cos() / p.c_f
            + (d1 * s.i_q + d2 * s.i_d) * two_theta.sin() / p.c_f;
    }
    let e_vf = sp.v_f - s.v_f;
    let dxi1 = e_vf;
    let dxi2 = p.k1 * e_vf + p.k2 * s.xi1 - s.i_d;
    let dxi3 = sp.i_q - s.i_q;
    [did, diq, dvf, dxi1, dxi2, dxi3]
}

// ---------------------------------------------------------------------------
// DAB stage
// ---------------------------------------------------------------------------

/// DAB phase-shift ratio from the low-voltage bus PI, clamped to [0, 1].
pub fn dab_phase_shift(s: &SstState, p: &SstParams, sp: &SetpointSet) -> Clamped {
    clamp(dab_phase_shift_raw(s, p, sp), 0.0, 1.0)
}

/// The phase-shift ratio the bus PI requests, before range limiting.
pub fn dab_phase_shift_raw(s: &SstState, p: &SstParams, sp: &SetpointSet) -> f64 {
    p.k7 * (sp.v_l - s.v_l) + p.k8 * s.xi4
}

/// DAB power-coupling conductance n_s·φ_s(1−φ_s)/(2·f_s·L_s), siemens.
///
/// Maximal at φ_s = 1/2; zero at φ_s ∈ {0, 1}.
pub fn dab_coupling(phi_s: f64, p: &SstParams) -> f64 {
    p.n_s * phi_s * (1.0 - phi_s) / (2.0 * p.f_s * p.l_s)
}

/// Low-voltage bus slope for a given operating point: the DAB charge current
/// minus the bus draw, over C_l. Also serves as the controller's bus-rate
/// feedforward term.
pub fn vl_rate(v_h: f64, phi_s: f64, i_dab: f64, p: &SstParams) -> f64 {
    (dab_coupling(phi_s, p) * v_h - i_dab) / p.c_l
}

/// DAB derivatives, ordered (v_h, v_l, ξ4).
pub fn dab_rhs(s: &SstState, i_dab: f64, p: &SstParams, sp: &SetpointSet) -> [f64; 3] {
    dab_rhs_with(dab_phase_shift(s, p, sp).value, s, i_dab, p, sp)
}

/// `dab_rhs` for an externally supplied phase-shift ratio.
pub fn dab_rhs_with(phi_s: f64, s: &SstState, i_dab: f64, p: &SstParams, sp: &SetpointSet) -> [f64; 3] {
    let c_s = dab_coupling(phi_s, p);
    let dvh = (s.v_f - s.v_h) / (p.c_h * p.r_h) - c_s * s.v_l / p.c_h;
    let dvl = (c_s * s.v_h - i_dab) / p.c_l;
    let dxi4 = sp.v_l - s.v_l;
    [dvh, dvl, dxi4]
}

/// Complete SST derivative in the analysis ordering, plus saturation flags.
pub fn sst_rhs(
    s: &SstState,
    u: &SstInputs,
    p: &SstParams,
    sp: &SetpointSet,
    mode: RectifierMode,
) -> ([f64; 9], SstFlags) {
    let (d1, d2) = duty_cycles(s, p, sp);
    let phi_s = dab_phase_shift(s, p, sp);
    let rect = rectifier_rhs(s, u, p, sp, mode);
    let dab = dab_rhs(s, u.i_dab, p, sp);
    let flags = SstFlags { d1: d1.saturated, d2: d2.saturated, phi_s: phi_s.saturated };
    (
        [
            rect[0], rect[1], rect[2], dab[0], dab[1], rect[3], rect[4], rect[5], dab[2],
        ],
        flags,
    )
}

/// `sst_rhs` with the modulation range limits removed: the smooth closed loop
/// the small-signal analysis linearizes. Matches `sst_rhs` exactly wherever
/// no duty law saturates.
pub fn sst_rhs_unlimited(
    s: &SstState,
    u: &SstInputs,
    p: &SstParams,
    sp: &SetpointSet,
    mode: RectifierMode,
) -> [f64; 9] {
    let (d1, d2) = duty_cycles_raw(s, p, sp);
    let phi_s = dab_phase_shift_raw(s, p, sp);
    let rect = rectifier_rhs_with(d1, d2, s, u, p, sp, mode);
    let dab = dab_rhs_with(phi_s, s, u.i_dab, p, sp);
    [
        rect[0], rect[1], rect[2], dab[0], dab[1], rect[3], rect[4], rect[5], dab[2],
    ]
}

// ---------------------------------------------------------------------------
// Storage converter
// ---------------------------------------------------------------------------

/// Storage output current delivered to the low-voltage bus, A.
pub fn battery_current(v_o: f64, v_l: f64, r_o: f64) -> f64 {
    (v_o - v_l) / r_o
}

/// Storage converter derivatives (v̇_o, v̇_in) for duty `u_b` and battery EMF
/// `v_b`. The u_b cross terms transfer power losslessly between the two
/// capacitors: C_o·v_o·v̇_o + C_in·v_in·v̇_in contains no u_b contribution.
pub fn desd_rhs(d: &DesdState, v_l: f64, u_b: f64, v_b: f64, p: &DesdParams) -> [f64; 2] {
    let dvo = (v_l - d.v_o) / (p.r_o * p.c_o) + u_b * d.v_in / p.c_o;
    let dvin = (v_b - d.v_in) / (p.r_in * p.c_in) - u_b * d.v_o / p.c_in;
    [dvo, dvin]
}
