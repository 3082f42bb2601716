//! Network-level model: radial feeder topology, grid coupling voltages, and
//! the parameter / setpoint records shared by every other module.
//!
//! The feeder is a chain of complex line impedances hanging off a stiff grid
//! source. SST `i` (0-based internally, 1-based in reports) sits at bus `i+1`.
//! Two coupling laws are supported:
//!
//! * [`CouplingMode::AsWritten`]: each bus voltage offsets the grid voltage by
//!   the bus's own line impedance times the sum of *all* SST currents,
//!     v_di = v_g^d + r_i·Σ_j i_dj − x_i·Σ_j i_qj
//!     v_qi = v_g^q + r_i·Σ_j i_dj + x_i·Σ_j i_qj
//! * [`CouplingMode::PrefixSum`]: the cumulative radial law, where each line
//!   segment k carries the sum of currents of SSTs at or beyond bus k and the
//!   drops accumulate as complex products along the path.
//!
//! Setpoint bookkeeping used by power sharing (prefix resistance/reactance
//! sums) always follows the radial structure regardless of coupling mode.

use serde::{Deserialize, Serialize};

/// Series impedance of one feeder segment, ohms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineImpedance {
    pub r: f64,
    pub x: f64,
}

/// Which voltage-coupling law the plant applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum CouplingMode {
    /// Per-bus impedance times the total current sum (verbatim network law).
    #[default]
    AsWritten,
    /// Cumulative radial drops with per-segment branch currents.
    PrefixSum,
}

/// Radial feeder description. Immutable after construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeederTopology {
    /// Grid d-axis voltage, volts.
    pub v_g_d: f64,
    /// Grid q-axis voltage, volts.
    pub v_g_q: f64,
    /// Grid angular frequency per SST, rad/s (commonly all equal).
    pub omega: Vec<f64>,
    /// Initial grid phase per SST, rad.
    pub theta0: Vec<f64>,
    /// Line impedances; `lines[i]` connects bus i to bus i+1 (SST i).
    pub lines: Vec<LineImpedance>,
    pub coupling_mode: CouplingMode,
}

impl FeederTopology {
    /// Number of SSTs on the feeder.
    pub fn n(&self) -> usize {
        self.lines.len()
    }

    /// Grid phase seen by SST `i` at time `t`: θ_i(t) = ω_i·t + θ_{0i}.
    pub fn theta(&self, i: usize, t: f64) -> f64 {
        self.omega[i] * t + self.theta0[i]
    }

    /// Sum of line resistances from the grid up to and including SST `m`'s bus.
    pub fn prefix_r(&self, m: usize) -> f64 {
        self.lines[..=m].iter().map(|z| z.r).sum()
    }

    /// Sum of line reactances from the grid up to and including SST `m`'s bus.
    pub fn prefix_x(&self, m: usize) -> f64 {
        self.lines[..=m].iter().map(|z| z.x).sum()
    }

    /// Terminal dq voltages at every SST for the given injection currents.
    ///
    /// Lengths of `i_d` and `i_q` must equal the SST count.
    pub fn coupling_voltages(&self, i_d: &[f64], i_q: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = self.n();
        assert_eq!(i_d.len(), n, "i_d length {} != {} SSTs", i_d.len(), n);
        assert_eq!(i_q.len(), n, "i_q length {} != {} SSTs", i_q.len(), n);
        match self.coupling_mode {
            CouplingMode::AsWritten => {
                let sum_d: f64 = i_d.iter().sum();
                let sum_q: f64 = i_q.iter().sum();
                let v_d = self
                    .lines
                    .iter()
                    .map(|z| self.v_g_d + z.r * sum_d - z.x * sum_q)
                    .collect();
                let v_q = self
                    .lines
                    .iter()
                    .map(|z| self.v_g_q + z.x * sum_d + z.r * sum_q)
                    .collect();
                (v_d, v_q)
            }
            CouplingMode::PrefixSum => {
                // Branch k carries the currents of SSTs k..n; accumulate the
                // complex drop z_k * J_k along the path from the grid.
                let mut v_d = vec![0.0; n];
                let mut v_q = vec![0.0; n];
                let mut acc_d = self.v_g_d;
                let mut acc_q = self.v_g_q;
                for k in 0..n {
                    let j_d: f64 = i_d[k..].iter().sum();
                    let j_q: f64 = i_q[k..].iter().sum();
                    let z = self.lines[k];
                    acc_d += z.r * j_d - z.x * j_q;
                    acc_q += z.x * j_d + z.r * j_q;
                    v_d[k] = acc_d;
                    v_q[k] = acc_q;
                }
                (v_d, v_q)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Per-SST parameters
// ---------------------------------------------------------------------------

/// Converter parameters of one SST (rectifier stage + DAB stage).
///
/// Defaults are an order-of-magnitude realistic set for a medium-voltage SST
/// (3.8 kV rectifier bus, 200 V low-voltage bus, 60 Hz grid) with gains tuned
/// so the closed loop is comfortably stable; scenarios may override any field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SstParams {
    /// Rectifier filter inductance, H.
    pub l_f: f64,
    /// Rectifier filter resistance, ohm.
    pub r_f: f64,
    /// Rectifier DC capacitance, F.
    pub c_f: f64,
    /// Rectifier-bus voltage PI: proportional gain (current command per volt).
    pub k1: f64,
    /// Rectifier-bus voltage PI: integral gain.
    pub k2: f64,
    /// d-axis current loop integral trim gain (duty per amp-second).
    pub k3: f64,
    /// d-axis current loop proportional gain (duty per amp).
    pub k4: f64,
    /// q-axis current loop proportional gain (duty per amp).
    pub k5: f64,
    /// q-axis current loop integral gain.
    pub k6: f64,
    /// DAB input capacitance, F.
    pub c_h: f64,
    /// DAB input series resistance, ohm.
    pub r_h: f64,
    /// DAB output (low-voltage bus) capacitance, F.
    pub c_l: f64,
    /// DAB transformer leakage inductance, H.
    pub l_s: f64,
    /// DAB transformer turns ratio.
    pub n_s: f64,
    /// DAB switching frequency, Hz.
    pub f_s: f64,
    /// Low-voltage bus PI: proportional gain (phase-shift per volt).
    pub k7: f64,
    /// Low-voltage bus PI: integral gain.
    pub k8: f64,
}

impl Default for SstParams {
    fn default() -> Self {
        Self {
            l_f: 1.0e-3,
            r_f: 0.1,
            c_f: 1.0e-3,
            // Voltage-loop gains are negative: the rectifier imports power at
            // negative i_d, so a low DC bus must push the current command
            // further negative. The PI zero k2/k1 sets the slowest closed-loop
            // mode; the current loops are kept several times faster so the
            // feeder cross-coupling cannot excite the inter-SST mode.
            k1: -8.0,
            k2: -150.0,
            k3: 0.16,
            k4: 4.0e-3,
            k5: 4.0e-3,
            k6: 0.4,
            c_h: 1.0e-3,
            r_h: 1.0,
            c_l: 2.0e-3,
            l_s: 2.0e-5,
            n_s: 0.1,
            f_s: 1.0e4,
            k7: 0.01,
            k8: 0.2,
        }
    }
}

/// Storage (battery) converter parameters of one SST.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DesdParams {
    /// Storage-side output capacitance, F.
    pub c_o: f64,
    /// Output coupling resistance between storage bus and LV bus, ohm.
    pub r_o: f64,
    /// Battery-side input capacitance, F.
    pub c_in: f64,
    /// Battery series resistance, ohm.
    pub r_in: f64,
    /// Storage converter transformer leakage inductance, H.
    pub l_b: f64,
    /// Storage converter transformer turns ratio.
    pub n_b: f64,
    /// Storage converter switching frequency, Hz.
    pub f_b: f64,
    /// Battery EMF lower bound, V.
    pub v_b_min: f64,
    /// Battery EMF upper bound, V.
    pub v_b_max: f64,
    /// Storage current capacity used by sharing detection, A.
    pub i_b_max: f64,
    /// Tracking gain; closed-loop error pole sits at −κ_p/(r_o·C_o).
    pub kappa_p: f64,
}

impl Default for DesdParams {
    fn default() -> Self {
        Self {
            c_o: 1.0e-3,
            r_o: 0.5,
            c_in: 1.0e-3,
            r_in: 0.1,
            l_b: 5.0e-5,
            n_b: 1.0,
            f_b: 1.0e4,
            v_b_min: 300.0,
            v_b_max: 400.0,
            i_b_max: 50.0,
            kappa_p: 0.5,
        }
    }
}

impl DesdParams {
    /// Closed-loop tracking rate κ_p/(r_o·C_o), 1/s.
    pub fn tracking_rate(&self) -> f64 {
        self.kappa_p / (self.r_o * self.c_o)
    }
}

// ---------------------------------------------------------------------------
// Setpoints
// ---------------------------------------------------------------------------

/// Dispatch setpoints of one SST.
///
/// The plant actuates `v_f`, `v_l`, `i_q` (through its PI loops) and `i_dab`
/// (through the storage reference); `p_rec`, `i_d`, `v_d`, `v_q` are the
/// bookkeeping the sharing methods keep mutually consistent through the
/// quadratic power-balance relation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SetpointSet {
    /// Rectifier power setpoint, W. Positive means power flows from the DC
    /// side toward the grid under the sharing power-balance convention.
    pub p_rec: f64,
    /// Upper cap on `p_rec` honored by the sharing methods, W.
    pub p_rec_max: f64,
    /// Rectifier DC bus voltage setpoint, V.
    pub v_f: f64,
    /// DAB input bus voltage reference used by the loss term, V.
    pub v_h: f64,
    /// Low-voltage bus setpoint, V. Must be positive.
    pub v_l: f64,
    /// d-axis current setpoint, A.
    pub i_d: f64,
    /// q-axis current setpoint, A.
    pub i_q: f64,
    /// d-axis terminal voltage bookkeeping value, V.
    pub v_d: f64,
    /// q-axis terminal voltage bookkeeping value, V.
    pub v_q: f64,
    /// DAB current setpoint derived from `p_rec` by the loss-corrected
    /// division; kept consistent whenever `p_rec` changes.
    pub i_dab: f64,
}

impl SetpointSet {
    /// Recompute `i_dab` from `p_rec` with the r_h loss correction.
    pub fn refresh_i_dab(&mut self, r_h: f64) {
        self.i_dab = crate::controller::idab_setpoint(self.p_rec, self.v_f, self.v_h, self.v_l, r_h)
            .expect("setpoint refresh requires v_l > 0");
    }
}
