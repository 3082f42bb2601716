//! Power-sharing methods: when one SST's storage current reference exceeds its
//! capacity, the network re-dispatches setpoints so the shortfall moves to the
//! grid (constant-current method) or to the immediate neighbors
//! (constant-voltage method).
//!
//! Both methods keep every SST's bookkeeping consistent with the quadratic
//! power-balance relation that ties (i_d★, i_q★, v_d★, v_q★) to P_rec★. The
//! current change Δi_dm at the overloaded SST solves
//!   A·Δ² + B·Δ + 2·ΔP = 0,
//! A and B collecting the filter resistance and the feeder impedance the
//! change is felt through; the root continuous at ΔP = 0 is taken in the
//! cancellation-free form Δ = 2ΔP/q, q = −(B + sign(B)√(B² − 8·A·ΔP))/2.
//!
//! Method 1 (constant current) shifts every voltage setpoint by the common
//! feeder drop and recomputes every P_reci★; helper currents stay fixed.
//! Method 2 (constant voltage) leaves every node voltage i ≠ m untouched,
//! which on a radial feeder forces the two neighbor current changes to obey
//!   Δi_{m−1} + Δi_m + Δi_{m+1} = 0            (upstream branches unchanged)
//!   z_m(Δi_m + Δi_{m+1}) + z_{m+1}·Δi_{m+1} = 0 (downstream buses unchanged)
//! so SST m's own quadratic carries the parallel impedance z_m∥z_{m+1} and the
//! total feeder injection (hence the grid current) is unchanged.
//!
//! Any infeasibility (negative discriminant, power cap violation) reverts the
//! whole plan: the outcome says so and the previous setpoints remain in force.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{FeederTopology, SetpointSet, SstParams};

/// Which re-dispatch method a sharing event applies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SharingMethod {
    /// Method 1: helper currents constant, all voltages shift, grid supplies.
    ConstantCurrent,
    /// Method 2: node voltages constant, immediate neighbors compensate.
    ConstantVoltage,
}

/// One re-dispatch request.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharingEvent {
    /// Overloaded SST, 0-based.
    pub m: usize,
    /// Requested change of SST m's power setpoint, W (negative when a load
    /// increase must move onto the grid or the neighbors).
    pub delta_p: f64,
    pub method: SharingMethod,
    /// Actuation delay between computing and applying the plan, s.
    pub delay: f64,
}

/// Why a plan was abandoned in favor of the standing setpoints.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum RevertReason {
    #[error("current change infeasible: discriminant {discriminant} < 0")]
    InfeasibleTransfer { discriminant: f64 },
    #[error("sst {sst} power setpoint {p_rec} W would exceed its cap {cap} W")]
    PowerCapExceeded { sst: usize, p_rec: f64, cap: f64 },
}

/// A completed re-dispatch plan.
#[derive(Debug, Clone, PartialEq)]
pub struct SharingUpdate {
    pub setpoints: Vec<SetpointSet>,
    /// SSTs whose setpoints differ from the input.
    pub changed: Vec<usize>,
    /// Human-readable note per changed SST on which relation produced it.
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SharingOutcome {
    Updated(SharingUpdate),
    Reverted { reason: RevertReason },
}

/// Saturation predicate: the reference meets or exceeds capacity in magnitude.
pub fn detect_saturation(i_b_ref: f64, i_b_max: f64) -> bool {
    i_b_ref.abs() >= i_b_max
}

/// Power-balance residual of one setpoint record. Zero when P_rec★ is
/// consistent with the currents and voltages.
///
/// Evaluated in the expanded form
///   (i_d² + i_q²) + (v_d·i_d + v_q·i_q)/r_f + 2·P_rec/r_f,
/// algebraically identical to the completed-square statement
///   (i_d + v_d/2r_f)² + (i_q + v_q/2r_f)² − (v_d² + v_q²)/4r_f² + 2P/r_f
/// but free of its catastrophic cancellation at kilovolt scales.
pub fn power_balance_residual(sp: &SetpointSet, r_f: f64) -> f64 {
    sp.i_d * sp.i_d + sp.i_q * sp.i_q
        + (sp.v_d * sp.i_d + sp.v_q * sp.i_q) / r_f
        + 2.0 * sp.p_rec / r_f
}

/// The power setpoint that zeroes the balance residual for given currents and
/// voltages: P = −(r_f(i_d² + i_q²) + v_d·i_d + v_q·i_q)/2.
pub fn solve_p_rec(i_d: f64, i_q: f64, v_d: f64, v_q: f64, r_f: f64) -> f64 {
    -0.5 * (r_f * (i_d * i_d + i_q * i_q) + v_d * i_d + v_q * i_q)
}

/// Quadratic coefficients (A, B) of the current-change equation at SST m for
/// an effective series impedance (r_eff, x_eff) the change is felt through.
fn quadratic_coefficients(sp: &SetpointSet, r_f: f64, r_eff: f64, x_eff: f64) -> (f64, f64) {
    let a = r_f + r_eff;
    let b = 2.0 * r_f * sp.i_d + sp.v_d + r_eff * sp.i_d + x_eff * sp.i_q;
    (a, b)
}

/// Root of A·Δ² + B·Δ + 2ΔP = 0 continuous at ΔP = 0, in the stable
/// small-root form. Errors when the discriminant is negative (the requested
/// transfer cannot be realized along this axis).
pub fn delta_id_quadratic(a: f64, b: f64, delta_p: f64) -> Result<f64, RevertReason> {
    let c = 2.0 * delta_p;
    if c == 0.0 {
        return Ok(0.0);
    }
    if a == 0.0 {
        if b == 0.0 {
            return Err(RevertReason::InfeasibleTransfer { discriminant: -1.0 });
        }
        return Ok(-c / b);
    }
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 {
        return Err(RevertReason::InfeasibleTransfer { discriminant: disc });
    }
    let sign_b = if b >= 0.0 { 1.0 } else { -1.0 };
    let q = -0.5 * (b + sign_b * disc.sqrt());
    if q == 0.0 {
        // b == 0 and disc == 0 force c == 0, handled above; guard anyway.
        return Ok(0.0);
    }
    Ok(c / q)
}

/// Complex feeder drop (Δv_d, Δv_q) = (Δi_d + jΔi_q)·(R + jX).
pub fn voltage_drop(d_i_d: f64, d_i_q: f64, r: f64, x: f64) -> (f64, f64) {
    (d_i_d * r - d_i_q * x, d_i_d * x + d_i_q * r)
}

fn min_cap(p_rec: f64, cap: f64) -> f64 {
    p_rec.min(cap)
}

/// Method 1 (constant current): SST m absorbs the capped power change with a
/// current move along the d axis; the common feeder drop shifts every voltage
/// setpoint; every other SST keeps its currents and gets its power setpoint
/// recomputed from the balance relation. Reverts if any recomputed power
/// exceeds its cap or the current change is infeasible.
pub fn method1_constant_current(
    setpoints: &[SetpointSet],
    params: &[SstParams],
    topo: &FeederTopology,
    event: &SharingEvent,
) -> SharingOutcome {
    let m = event.m;
    let sp_m = &setpoints[m];
    let p_new = min_cap(sp_m.p_rec + event.delta_p, sp_m.p_rec_max);
    let dp_eff = p_new - sp_m.p_rec;
    if dp_eff == 0.0 {
        return SharingOutcome::Updated(SharingUpdate {
            setpoints: setpoints.to_vec(),
            changed: Vec::new(),
            notes: vec!["no-op: zero effective power change".into()],
        });
    }
    let (r_sum, x_sum) = (topo.prefix_r(m), topo.prefix_x(m));
    let (a, b) = quadratic_coefficients(sp_m, params[m].r_f, r_sum, x_sum);
    let delta_id = match delta_id_quadratic(a, b, dp_eff) {
        Ok(d) => d,
        Err(reason) => return SharingOutcome::Reverted { reason },
    };
    let (dv_d, dv_q) = voltage_drop(delta_id, 0.0, r_sum, x_sum);

    let mut out = setpoints.to_vec();
    let mut notes = Vec::new();
    for (i, sp) in out.iter_mut().enumerate() {
        sp.v_d += dv_d;
        sp.v_q += dv_q;
        if i == m {
            sp.i_d += delta_id;
            sp.p_rec = p_new;
            notes.push(format!(
                "sst {}: power target {p_new:.3} W, current from quadratic balance, voltage from feeder drop",
                i
            ));
        } else {
            sp.p_rec = solve_p_rec(sp.i_d, sp.i_q, sp.v_d, sp.v_q, params[i].r_f);
            if sp.p_rec > sp.p_rec_max {
                return SharingOutcome::Reverted {
                    reason: RevertReason::PowerCapExceeded {
                        sst: i,
                        p_rec: sp.p_rec,
                        cap: sp.p_rec_max,
                    },
                };
            }
            notes.push(format!(
                "sst {}: currents held, power re-balanced after common drop",
                i
            ));
        }
        sp.refresh_i_dab(params[i].r_h);
    }
    let changed = (0..out.len()).collect();
    SharingOutcome::Updated(SharingUpdate { setpoints: out, changed, notes })
}

/// Method 2 (constant voltage): only SST m and its immediate neighbors move.
/// The neighbor current changes cancel SST m's change in every branch outside
/// the m-neighborhood, so node voltages i ≠ m and the grid current are
/// untouched; the neighbors' power setpoints are re-balanced at their
/// unchanged voltages. Reverts on cap or feasibility violations.
pub fn method2_constant_voltage(
    setpoints: &[SetpointSet],
    params: &[SstParams],
    topo: &FeederTopology,
    event: &SharingEvent,
) -> SharingOutcome {
    let n = setpoints.len();
    let m = event.m;
    let sp_m = &setpoints[m];
    let p_new = min_cap(sp_m.p_rec + event.delta_p, sp_m.p_rec_max);
    let dp_eff = p_new - sp_m.p_rec;
    if dp_eff == 0.0 {
        return SharingOutcome::Updated(SharingUpdate {
            setpoints: setpoints.to_vec(),
            changed: Vec::new(),
            notes: vec!["no-op: zero effective power change".into()],
        });
    }

    let z_m = Complex::new(topo.lines[m].r, topo.lines[m].x);
    // The impedance SST m's change is felt through once the neighbors pin the
    // rest of the feeder: z_m alone at the tail bus, z_m ∥ z_{m+1} inside.
    let (z_eff, split_next) = if m + 1 < n {
        let z_next = Complex::new(topo.lines[m + 1].r, topo.lines[m + 1].x);
        (z_m * z_next / (z_m + z_next), Some(-z_m / (z_m + z_next)))
    } else {
        (z_m, None)
    };
    let (a, b) = quadratic_coefficients(sp_m, params[m].r_f, z_eff.re, z_eff.im);
    let delta_id = match delta_id_quadratic(a, b, dp_eff) {
        Ok(d) => d,
        Err(reason) => return SharingOutcome::Reverted { reason },
    };
    let delta_m = Complex::new(delta_id, 0.0);
    let delta_next = split_next.map(|s| s * delta_m);
    // Upstream branches must carry no net change.
    let delta_prev = if m > 0 {
        Some(-delta_m - delta_next.unwrap_or(Complex::new(0.0, 0.0)))
    } else {
        None
    };

    let mut out = setpoints.to_vec();
    let mut notes = Vec::new();
    let mut changed = Vec::new();

    if let Some(dp) = delta_prev {
        let i = m - 1;
        let sp = &mut out[i];
        sp.i_d += dp.re;
        sp.i_q += dp.im;
        sp.p_rec = solve_p_rec(sp.i_d, sp.i_q, sp.v_d, sp.v_q, params[i].r_f);
        if sp.p_rec > sp.p_rec_max {
            return SharingOutcome::Reverted {
                reason: RevertReason::PowerCapExceeded { sst: i, p_rec: sp.p_rec, cap: sp.p_rec_max },
            };
        }
        sp.refresh_i_dab(params[i].r_h);
        changed.push(i);
        notes.push(format!(
            "sst {}: upstream neighbor absorbs branch-current balance, power re-balanced at fixed voltage",
            i
        ));
    }

    {
        let sp = &mut out[m];
        let (dv_d, dv_q) = voltage_drop(delta_id, 0.0, z_eff.re, z_eff.im);
        sp.i_d += delta_id;
        sp.v_d += dv_d;
        sp.v_q += dv_q;
        sp.p_rec = p_new;
        sp.refresh_i_dab(params[m].r_h);
        changed.push(m);
        notes.push(format!(
            "sst {}: power target {p_new:.3} W, current from quadratic balance through the neighbor-pinned impedance",
            m
        ));
    }

    if let Some(dn) = delta_next {
        let i = m + 1;
        let sp = &mut out[i];
        sp.i_d += dn.re;
        sp.i_q += dn.im;
        sp.p_rec = solve_p_rec(sp.i_d, sp.i_q, sp.v_d, sp.v_q, params[i].r_f);
        if sp.p_rec > sp.p_rec_max {
            return SharingOutcome::Reverted {
                reason: RevertReason::PowerCapExceeded { sst: i, p_rec: sp.p_rec, cap: sp.p_rec_max },
            };
        }
        sp.refresh_i_dab(params[i].r_h);
        changed.push(i);
        notes.push(format!(
            "sst {}: downstream neighbor pins the tail-bus voltages, power re-balanced at fixed voltage",
            i
        ));
    }

    changed.sort_unstable();
    SharingOutcome::Updated(SharingUpdate { setpoints: out, changed, notes })
}

/// Why a requested operating point cannot be realized.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum OperatingPointError {
    #[error("sst {sst}: power {p_rec} W is beyond the feeder transfer capability")]
    PowerBeyondCapability { sst: usize, p_rec: f64 },
    #[error("operating-point fixed point did not settle (last move {last_move} A)")]
    NoFixedPoint { last_move: f64 },
}

/// Complete a consistent setpoint vector from power targets.
///
/// Solves the coupled root-finding problem where every SST's d-axis current
/// satisfies its power-balance relation at the feeder voltages those currents
/// produce, then fills in the internal-bus and storage-branch references: the
/// DC-link drop follows w = r_h·P★/v_f★ (so v_h★ = v_f★ − w), and the DAB
/// current reference absorbs the remaining power at the low-voltage bus.
pub fn solve_operating_point(
    params: &[SstParams],
    topo: &FeederTopology,
    p_rec: &[f64],
    p_rec_max: &[f64],
    i_q: &[f64],
    v_f: &[f64],
    v_l: &[f64],
) -> Result<Vec<SetpointSet>, OperatingPointError> {
    let n = p_rec.len();
    // Coupling is linear in the currents, so one probe per bus captures the
    // exact voltage sensitivity used by the Newton corrections below.
    let (v0_d, v0_q) = topo.coupling_voltages(&vec![0.0; n], &vec![0.0; n]);
    let mut dvd = DMatrix::zeros(n, n);
    let mut dvq = DMatrix::zeros(n, n);
    let mut probe = vec![0.0; n];
    for k in 0..n {
        probe[k] = 1.0;
        let (vd, vq) = topo.coupling_voltages(&probe, &vec![0.0; n]);
        probe[k] = 0.0;
        for i in 0..n {
            dvd[(i, k)] = vd[i] - v0_d[i];
            dvq[(i, k)] = vq[i] - v0_q[i];
        }
    }

    let balance = |i_d: &[f64]| -> DVector<f64> {
        let (v_d, v_q) = topo.coupling_voltages(i_d, i_q);
        DVector::from_fn(n, |i, _| {
            // F_i = r_f·i_d² + v_d·i_d + r_f·i_q² + v_q·i_q + 2P = 0.
            let r_f = params[i].r_f;
            r_f * (i_d[i] * i_d[i] + i_q[i] * i_q[i])
                + v_d[i] * i_d[i]
                + v_q[i] * i_q[i]
                + 2.0 * p_rec[i]
        })
    };

    let mut i_d = vec![0.0; n];
    let mut last_move = f64::INFINITY;
    let mut jac = DMatrix::zeros(n, n);
    for _ in 0..60 {
        let (v_d, _) = topo.coupling_voltages(&i_d, &i_q);
        let residual = balance(&i_d);
        // A watt-scale balance this small is already below anything the
        // downstream audits can resolve; it also covers the all-zero system,
        // whose exact solution sits on a singular correction matrix.
        if residual.amax() < 1e-10 {
            return complete_setpoints(params, topo, p_rec, p_rec_max, &i_d, i_q, v_f, v_l);
        }
        for i in 0..n {
            let r_f = params[i].r_f;
            for k in 0..n {
                let own = if i == k { 2.0 * r_f * i_d[i] + v_d[i] } else { 0.0 };
                jac[(i, k)] = own + i_d[i] * dvd[(i, k)] + i_q[i] * dvq[(i, k)];
            }
        }
        let lu = jac.clone().lu();
        let step = match lu.solve(&residual) {
            Some(s) => s,
            None => return Err(infeasibility(topo, params, p_rec, &i_d, i_q, last_move)),
        };
        if step.amax() < 1e-12 {
            return complete_setpoints(params, topo, p_rec, p_rec_max, &i_d, i_q, v_f, v_l);
        }
        // Backtrack until the step actually shrinks the balance residual;
        // raw corrections can two-cycle when the drop terms are steep.
        let norm0 = residual.norm();
        let mut alpha = 1.0;
        let mut trial: Vec<f64> = i_d.clone();
        let mut accepted = false;
        for _ in 0..40 {
            for i in 0..n {
                trial[i] = i_d[i] - alpha * step[i];
            }
            if balance(&trial).norm() < norm0 * (1.0 - 1e-4 * alpha) {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            return Err(infeasibility(topo, params, p_rec, &i_d, i_q, last_move));
        }
        last_move = alpha * step.amax();
        i_d.copy_from_slice(&trial);
    }
    Err(infeasibility(topo, params, p_rec, &i_d, i_q, last_move))
}

/// Build the full setpoint vector once the feeder currents are known. A
/// solution behind a collapsed bus voltage is the wrong quadratic branch and
/// is rejected.
#[allow(clippy::too_many_arguments)]
fn complete_setpoints(
    params: &[SstParams],
    topo: &FeederTopology,
    p_rec: &[f64],
    p_rec_max: &[f64],
    i_d: &[f64],
    i_q: &[f64],
    v_f: &[f64],
    v_l: &[f64],
) -> Result<Vec<SetpointSet>, OperatingPointError> {
    let n = p_rec.len();
    let (v_d, v_q) = topo.coupling_voltages(i_d, i_q);
    if let Some(i) = (0..n).find(|&i| v_d[i] < 0.0) {
        return Err(OperatingPointError::PowerBeyondCapability { sst: i, p_rec: p_rec[i] });
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let w = params[i].r_h * p_rec[i] / v_f[i];
        let mut sp = SetpointSet {
            p_rec: p_rec[i],
            p_rec_max: p_rec_max[i],
            v_f: v_f[i],
            v_h: v_f[i] - w,
            v_l: v_l[i],
            i_d: i_d[i],
            i_q: i_q[i],
            v_d: v_d[i],
            v_q: v_q[i],
            i_dab: 0.0,
        };
        sp.refresh_i_dab(params[i].r_h);
        out.push(sp);
    }
    Ok(out)
}

/// Classify a failed operating-point solve: if some bus's local quadratic has
/// no real root at the last iterate's voltages, that power target exceeds what
/// the feeder can transfer; otherwise report the stalled correction size.
fn infeasibility(
    topo: &FeederTopology,
    params: &[SstParams],
    p_rec: &[f64],
    i_d: &[f64],
    i_q: &[f64],
    last_move: f64,
) -> OperatingPointError {
    let (v_d, v_q) = topo.coupling_voltages(i_d, i_q);
    let mut worst: Option<(usize, f64)> = None;
    for i in 0..p_rec.len() {
        let r_f = params[i].r_f;
        let c = r_f * i_q[i] * i_q[i] + v_q[i] * i_q[i] + 2.0 * p_rec[i];
        let disc = v_d[i] * v_d[i] - 4.0 * r_f * c;
        if disc < 0.0 && worst.map_or(true, |(_, w)| disc < w) {
            worst = Some((i, disc));
        }
    }
    match worst {
        Some((sst, _)) => OperatingPointError::PowerBeyondCapability { sst, p_rec: p_rec[sst] },
        None => OperatingPointError::NoFixedPoint { last_move },
    }
}

/// Dispatch an event to its method.
pub fn apply(
    setpoints: &[SetpointSet],
    params: &[SstParams],
    topo: &FeederTopology,
    event: &SharingEvent,
) -> SharingOutcome {
    match event.method {
        SharingMethod::ConstantCurrent => method1_constant_current(setpoints, params, topo, event),
        SharingMethod::ConstantVoltage => method2_constant_voltage(setpoints, params, topo, event),
    }
}

/// Net change of total feeder injection between two setpoint vectors. Method 2
/// leaves this at zero, which is what keeps the grid current untouched.
pub fn total_injection_change(before: &[SetpointSet], after: &[SetpointSet]) -> (f64, f64) {
    let mut d = 0.0;
    let mut q = 0.0;
    for (b, a) in before.iter().zip(after) {
        d += a.i_d - b.i_d;
        q += a.i_q - b.i_q;
    }
    (d, q)
}
