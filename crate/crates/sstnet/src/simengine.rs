//! Fixed-step simulation of the coupled feeder: explicit RK4 over the full
//! per-SST state (converter stages, storage converter, and the reference
//! filter), with piecewise-constant sources, scheduled events, bounded
//! random-walk noise, and the storage-saturation re-dispatch pipeline.
//!
//! The storage duty is recomputed inside every integrator stage from the
//! stage state, and the reference filter is integrated as a state
//! (ḟ = (I_b^r − f)/τ_f), so the closed loop is a smooth ODE between event
//! boundaries and the integrator keeps its full fourth order. Sources only
//! change at macro-step boundaries.
//!
//! Storage saturation is re-checked on a fixed tick. A triggered re-dispatch
//! is computed immediately and applied after the configured delay; an
//! infeasible plan is logged and the run continues under the standing
//! setpoints.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::controller::{
    control_law, default_vin_guard, duty_from_phase_shift, phase_shift_from_duty,
};
use crate::dynamics::{
    battery_current, dab_phase_shift, desd_rhs, duty_cycles, sst_rhs, sst_rhs_unlimited,
    DesdState, SstInputs, SstState,
};
use crate::netmodel::SetpointSet;
use crate::powershare::{apply, detect_saturation, SharingEvent, SharingMethod, SharingOutcome};
use crate::scenario::{EventKind, Scenario};

/// States carried per SST: the nine converter states, the two storage
/// voltages, and the reference-filter state.
pub const STATES_PER_SST: usize = 12;

const COMPONENT_NAMES: [&str; STATES_PER_SST] = [
    "i_d", "i_q", "v_f", "v_h", "v_l", "xi1", "xi2", "xi3", "xi4", "v_o", "v_in", "ref_filter",
];

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("state diverged at t = {t} s: sst {sst} component {component} is not finite")]
    Diverged { t: f64, sst: usize, component: &'static str },
    #[error("sst {sst} cannot start at its operating point: {detail}")]
    BadStart { sst: usize, detail: String },
}

/// One SST's slice of a trajectory sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SstSample {
    pub state: SstState,
    pub desd: DesdState,
    /// Storage output current, A.
    pub i_b: f64,
    /// Commanded storage current reference (unfiltered), A.
    pub i_b_ref: f64,
    /// Current drawn from the low-voltage bus node, A.
    pub i_dab: f64,
    /// Storage duty commanded by the controller.
    pub u_b: f64,
    /// Phase-shift ratio actually applied (range-limited).
    pub phi_b: f64,
    /// Tracking error I_b − I_b^r, A.
    pub delta: f64,
    /// Net source injection I_pv + I_w − I_l at this instant, A.
    pub net_source: f64,
    /// Saturation bits: 1 = d1, 2 = d2, 4 = φ_s, 8 = storage duty.
    pub flags: u8,
}

/// All SSTs at one sample time.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub t: f64,
    pub sst: Vec<SstSample>,
}

/// One saturation-triggered re-dispatch, successful or not.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct SetpointChange {
    /// When the plan was computed (the saturation tick), s.
    pub computed_at: f64,
    /// When it took effect; absent for reverted plans.
    pub applied_at: Option<f64>,
    /// The saturated SST that triggered the plan.
    pub trigger_sst: usize,
    pub method: SharingMethod,
    /// Power moved off the trigger SST, W.
    pub delta_p: f64,
    /// "applied", or the revert reason.
    pub outcome: String,
    /// SSTs whose setpoints changed.
    pub changed: Vec<usize>,
    pub before: Vec<SetpointSet>,
    pub after: Option<Vec<SetpointSet>>,
    pub notes: Vec<String>,
}

/// Decimated simulation output plus the re-dispatch history.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub setpoint_changes: Vec<SetpointChange>,
    /// True when at least one re-dispatch plan had to be abandoned.
    pub infeasible_sharing: bool,
    pub initial_setpoints: Vec<SetpointSet>,
    pub final_setpoints: Vec<SetpointSet>,
}

impl Trajectory {
    /// Times of all samples.
    pub fn times(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.t).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
struct ChannelValues {
    i_pv: f64,
    i_w: f64,
    i_l: f64,
}

#[derive(Debug, Clone)]
struct PendingUpdate {
    apply_at: f64,
    setpoints: Vec<SetpointSet>,
    log_index: usize,
}

/// The simulation state machine. [`run`] drives it over a whole scenario;
/// tests and examples can also step it manually and poke at states.
pub struct Simulator {
    scn: Scenario,
    /// Flat state, [`STATES_PER_SST`] entries per SST.
    y: Vec<f64>,
    step_index: u64,
    setpoints: Vec<SetpointSet>,
    /// Event-adjusted base source values.
    base: Vec<ChannelValues>,
    /// Random-walk offsets, bounded by each SST's noise amplitude.
    walk: Vec<ChannelValues>,
    rng: Vec<Option<ChaCha8Rng>>,
    next_walk: Vec<f64>,
    next_event: usize,
    next_sat_tick: f64,
    next_hold_tick: f64,
    /// Duty commanded at the last commit; the in-stage fallback when the
    /// input-voltage guard trips, and the active duty in sampled-controller
    /// mode.
    held_u_b: Vec<f64>,
    pending: Option<PendingUpdate>,
    /// Per-SST: a revert happened during the current saturation spell, so do
    /// not retry until the reference re-enters its range.
    suppressed: Vec<bool>,
    log: Vec<SetpointChange>,
    infeasible: bool,
    /// When false, duty laws apply unclamped — the smooth closed loop the
    /// small-signal analysis describes.
    limits: bool,
}

impl Simulator {
    pub fn new(scn: &Scenario) -> Result<Self, SimError> {
        let n = scn.n();
        let mut y = vec![0.0; n * STATES_PER_SST];
        let base: Vec<ChannelValues> = scn
            .sources
            .iter()
            .map(|s| ChannelValues { i_pv: s.i_pv, i_w: s.i_w, i_l: s.i_l })
            .collect();
        for i in 0..n {
            let state = equilibrium_state(scn, i, &base[i])?;
            y[i * STATES_PER_SST..(i + 1) * STATES_PER_SST].copy_from_slice(&state);
        }
        let rng = (0..n)
            .map(|i| {
                scn.sources[i].noise.map(|_| {
                    let mut r = ChaCha8Rng::seed_from_u64(scn.sim.seed);
                    r.set_stream(i as u64 + 1);
                    r
                })
            })
            .collect();
        let next_walk = scn
            .sources
            .iter()
            .map(|s| s.noise.map_or(f64::INFINITY, |nz| nz.hold))
            .collect();
        let mut sim = Self {
            setpoints: scn.setpoints.clone(),
            scn: scn.clone(),
            y,
            step_index: 0,
            base,
            walk: vec![ChannelValues::default(); n],
            rng,
            next_walk,
            next_event: 0,
            next_sat_tick: scn.sim.saturation_tick,
            next_hold_tick: 0.0,
            held_u_b: vec![0.0; n],
            pending: None,
            suppressed: vec![false; n],
            log: Vec::new(),
            infeasible: false,
            limits: true,
        };
        sim.commit_duties();
        Ok(sim)
    }

    /// Remove every modulation range limit for the remainder of the run.
    ///
    /// The physical converter always enforces its duty and phase-shift
    /// ranges; disabling them yields the smooth closed loop that the
    /// linearized analysis describes, which is the right plant for checking
    /// simulated transients against eigenvalue predictions.
    pub fn disable_actuation_limits(&mut self) {
        self.limits = false;
    }

    pub fn time(&self) -> f64 {
        self.step_index as f64 * self.scn.sim.dt
    }

    pub fn step_count(&self) -> u64 {
        self.step_index
    }

    pub fn setpoints(&self) -> &[SetpointSet] {
        &self.setpoints
    }

    pub fn setpoint_changes(&self) -> &[SetpointChange] {
        &self.log
    }

    pub fn infeasible_sharing(&self) -> bool {
        self.infeasible
    }

    pub fn sst_state(&self, i: usize) -> SstState {
        let b = i * STATES_PER_SST;
        SstState::from_array(self.y[b..b + 9].try_into().unwrap())
    }

    pub fn set_sst_state(&mut self, i: usize, s: SstState) {
        let b = i * STATES_PER_SST;
        self.y[b..b + 9].copy_from_slice(&s.to_array());
    }

    pub fn desd_state(&self, i: usize) -> DesdState {
        let b = i * STATES_PER_SST;
        DesdState { v_o: self.y[b + 9], v_in: self.y[b + 10] }
    }

    pub fn set_desd_state(&mut self, i: usize, d: DesdState) {
        let b = i * STATES_PER_SST;
        self.y[b + 9] = d.v_o;
        self.y[b + 10] = d.v_in;
    }

    /// Current effective source values (base plus walk) for SST `i`.
    fn sources_now(&self, i: usize) -> ChannelValues {
        ChannelValues {
            i_pv: self.base[i].i_pv + self.walk[i].i_pv,
            i_w: self.base[i].i_w + self.walk[i].i_w,
            i_l: self.base[i].i_l + self.walk[i].i_l,
        }
    }

    /// Commanded storage reference of SST `i` at the current sources.
    pub fn raw_reference(&self, i: usize) -> f64 {
        let src = self.sources_now(i);
        src.i_l - src.i_pv - src.i_w + self.setpoints[i].i_dab
    }

    /// Advance one macro step: apply due events, walk ticks, pending setpoint
    /// updates and saturation checks, then one RK4 step.
    pub fn advance(&mut self) -> Result<(), SimError> {
        let dt = self.scn.sim.dt;
        let t = self.time();
        let boundary = t + 0.5 * dt;

        while self.next_event < self.scn.events.len()
            && self.scn.events[self.next_event].t <= boundary
        {
            let ev = self.scn.events[self.next_event];
            let b = &mut self.base[ev.sst];
            match ev.kind {
                EventKind::LoadStep => b.i_l += ev.delta,
                EventKind::PvStep => b.i_pv += ev.delta,
                EventKind::WindStep => b.i_w += ev.delta,
            }
            self.next_event += 1;
        }

        for i in 0..self.scn.n() {
            let Some(nz) = self.scn.sources[i].noise else { continue };
            while self.next_walk[i] <= boundary {
                let rng = self.rng[i].as_mut().expect("noise spec implies a stream");
                let step = nz.amplitude / 4.0;
                let w = &mut self.walk[i];
                for ch in [&mut w.i_pv, &mut w.i_w, &mut w.i_l] {
                    let moved = *ch + rng.gen_range(-step..=step);
                    *ch = moved.clamp(-nz.amplitude, nz.amplitude);
                }
                self.next_walk[i] += nz.hold;
            }
        }

        if let Some(p) = &self.pending {
            if p.apply_at <= boundary {
                let p = self.pending.take().expect("checked above");
                self.setpoints = p.setpoints;
                let entry = &mut self.log[p.log_index];
                entry.applied_at = Some(t);
                entry.outcome = "applied".to_string();
            }
        }

        while self.next_sat_tick <= boundary {
            self.saturation_tick(t);
            self.next_sat_tick += self.scn.sim.saturation_tick;
        }

        if let Some(hold) = self.scn.sim.controller_hold {
            while self.next_hold_tick <= boundary {
                self.commit_duties();
                self.next_hold_tick += hold;
            }
        }

        let m = self.y.len();
        let mut k1 = vec![0.0; m];
        let mut k2 = vec![0.0; m];
        let mut k3 = vec![0.0; m];
        let mut k4 = vec![0.0; m];
        let mut tmp = vec![0.0; m];

        self.eval(t, &self.y, &mut k1);
        for j in 0..m {
            tmp[j] = self.y[j] + 0.5 * dt * k1[j];
        }
        self.eval(t + 0.5 * dt, &tmp, &mut k2);
        for j in 0..m {
            tmp[j] = self.y[j] + 0.5 * dt * k2[j];
        }
        self.eval(t + 0.5 * dt, &tmp, &mut k3);
        for j in 0..m {
            tmp[j] = self.y[j] + dt * k3[j];
        }
        self.eval(t + dt, &tmp, &mut k4);
        for j in 0..m {
            self.y[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
        self.step_index += 1;

        for (j, v) in self.y.iter().enumerate() {
            if !v.is_finite() {
                return Err(SimError::Diverged {
                    t: self.time(),
                    sst: j / STATES_PER_SST,
                    component: COMPONENT_NAMES[j % STATES_PER_SST],
                });
            }
        }

        if self.scn.sim.controller_hold.is_none() {
            self.commit_duties();
        }
        Ok(())
    }

    /// One full-system derivative evaluation at (t, y).
    fn eval(&self, t: f64, y: &[f64], dy: &mut [f64]) {
        let scn = &self.scn;
        let n = scn.n();
        let hold_mode = scn.sim.controller_hold.is_some();
        let mut i_d = vec![0.0; n];
        let mut i_q = vec![0.0; n];
        for i in 0..n {
            let b = i * STATES_PER_SST;
            i_d[i] = y[b];
            i_q[i] = y[b + 1];
        }
        let (v_d, v_q) = scn.topology.coupling_voltages(&i_d, &i_q);
        for i in 0..n {
            let b = i * STATES_PER_SST;
            let s = SstState::from_array(y[b..b + 9].try_into().unwrap());
            let d = DesdState { v_o: y[b + 9], v_in: y[b + 10] };
            let filt = y[b + 11];
            let p = &scn.params[i];
            let dp = &scn.desd[i];
            let sp = &self.setpoints[i];
            let src = self.sources_now(i);
            let i_b = battery_current(d.v_o, s.v_l, dp.r_o);
            let i_dab = src.i_pv + src.i_w + i_b - src.i_l;
            let inputs = SstInputs {
                v_d: v_d[i],
                v_q: v_q[i],
                theta: scn.topology.theta(i, t),
                omega: scn.topology.omega[i],
                i_dab,
            };
            let sst_dot = if self.limits {
                sst_rhs(&s, &inputs, p, sp, scn.sim.mode).0
            } else {
                sst_rhs_unlimited(&s, &inputs, p, sp, scn.sim.mode)
            };
            let raw_ref = src.i_l - src.i_pv - src.i_w + sp.i_dab;
            let dfilt = (raw_ref - filt) / scn.sim.tau_f;
            let u_b_cmd = if hold_mode {
                self.held_u_b[i]
            } else {
                // sst_dot[4] is v̇_l, the bus-rate feedforward φ_vl.
                control_law(&d, s.v_l, filt, dfilt, sst_dot[4], dp, default_vin_guard(dp))
                    .unwrap_or(self.held_u_b[i])
            };
            // A non-finite state must reach the post-step divergence check,
            // not trip assertions inside the actuation path.
            let u_b_cmd = if u_b_cmd.is_finite() { u_b_cmd } else { self.held_u_b[i] };
            let u_b = if self.limits {
                let phi_b = phase_shift_from_duty(u_b_cmd, dp);
                duty_from_phase_shift(phi_b.value, dp)
            } else {
                u_b_cmd
            };
            let desd_dot = desd_rhs(&d, s.v_l, u_b, scn.v_b[i], dp);
            dy[b..b + 9].copy_from_slice(&sst_dot);
            dy[b + 9] = desd_dot[0];
            dy[b + 10] = desd_dot[1];
            dy[b + 11] = dfilt;
        }
    }

    /// Recompute the held storage duties from the committed state.
    fn commit_duties(&mut self) {
        for i in 0..self.scn.n() {
            let b = i * STATES_PER_SST;
            let s = SstState::from_array(self.y[b..b + 9].try_into().unwrap());
            let d = DesdState { v_o: self.y[b + 9], v_in: self.y[b + 10] };
            let filt = self.y[b + 11];
            let p = &self.scn.params[i];
            let dp = &self.scn.desd[i];
            let sp = &self.setpoints[i];
            let src = self.sources_now(i);
            let i_b = battery_current(d.v_o, s.v_l, dp.r_o);
            let i_dab = src.i_pv + src.i_w + i_b - src.i_l;
            let phi_s = dab_phase_shift(&s, p, sp).value;
            let c_s = crate::dynamics::dab_coupling(phi_s, p);
            let phi_vl = (c_s * s.v_h - i_dab) / p.c_l;
            let raw_ref = src.i_l - src.i_pv - src.i_w + sp.i_dab;
            let dfilt = (raw_ref - filt) / self.scn.sim.tau_f;
            if let Ok(u) = control_law(&d, s.v_l, filt, dfilt, phi_vl, dp, default_vin_guard(dp)) {
                if u.is_finite() {
                    self.held_u_b[i] = u;
                }
            }
        }
    }

    /// Evaluate the saturation predicate for every SST and, at most once per
    /// tick, compute a re-dispatch plan for the worst offender.
    fn saturation_tick(&mut self, t: f64) {
        let n = self.scn.n();
        let mut worst: Option<(usize, f64)> = None;
        for i in 0..n {
            let reference = self.raw_reference(i);
            if detect_saturation(reference, self.scn.desd[i].i_b_max) {
                let excess = reference.abs() - self.scn.desd[i].i_b_max;
                if !self.suppressed[i] && worst.is_none_or(|(_, w)| excess > w) {
                    worst = Some((i, excess));
                }
            } else {
                self.suppressed[i] = false;
            }
        }
        let Some(policy) = self.scn.sharing else { return };
        if self.pending.is_some() {
            return;
        }
        let Some((m, _)) = worst else { return };

        let reference = self.raw_reference(m);
        let delta_p = policy.delta_p.unwrap_or_else(|| {
            // Move the measured excess plus 5 % of the limit, in the direction
            // that brings the reference back inside.
            let i_b_max = self.scn.desd[m].i_b_max;
            let shed = reference.abs() - i_b_max + 0.05 * i_b_max;
            -reference.signum() * shed * self.setpoints[m].v_l
        });
        let event =
            SharingEvent { m, delta_p, method: policy.method, delay: policy.delay };
        match apply(&self.setpoints, &self.scn.params, &self.scn.topology, &event) {
            SharingOutcome::Updated(update) => {
                let entry = SetpointChange {
                    computed_at: t,
                    applied_at: None,
                    trigger_sst: m,
                    method: policy.method,
                    delta_p,
                    outcome: "pending".to_string(),
                    changed: update.changed,
                    before: self.setpoints.clone(),
                    after: Some(update.setpoints.clone()),
                    notes: update.notes,
                };
                self.log.push(entry);
                let log_index = self.log.len() - 1;
                if policy.delay == 0.0 {
                    self.setpoints = update.setpoints;
                    let entry = &mut self.log[log_index];
                    entry.applied_at = Some(t);
                    entry.outcome = "applied".to_string();
                } else {
                    self.pending = Some(PendingUpdate {
                        apply_at: t + policy.delay,
                        setpoints: update.setpoints,
                        log_index,
                    });
                }
            }
            SharingOutcome::Reverted { reason } => {
                self.infeasible = true;
                self.suppressed[m] = true;
                self.log.push(SetpointChange {
                    computed_at: t,
                    applied_at: None,
                    trigger_sst: m,
                    method: policy.method,
                    delta_p,
                    outcome: reason.to_string(),
                    changed: Vec::new(),
                    before: self.setpoints.clone(),
                    after: None,
                    notes: Vec::new(),
                });
            }
        }
    }

    /// Snapshot every SST at the committed state.
    pub fn sample(&self) -> Sample {
        let n = self.scn.n();
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let s = self.sst_state(i);
            let d = self.desd_state(i);
            let p = &self.scn.params[i];
            let dp = &self.scn.desd[i];
            let sp = &self.setpoints[i];
            let src = self.sources_now(i);
            let i_b = battery_current(d.v_o, s.v_l, dp.r_o);
            let i_dab = src.i_pv + src.i_w + i_b - src.i_l;
            let i_b_ref = src.i_l - src.i_pv - src.i_w + sp.i_dab;
            let u_b = self.held_u_b[i];
            let (d1, d2) = duty_cycles(&s, p, sp);
            let phi_s = dab_phase_shift(&s, p, sp);
            let phi_b = phase_shift_from_duty(u_b, dp);
            let flags = u8::from(d1.saturated)
                | u8::from(d2.saturated) << 1
                | u8::from(phi_s.saturated) << 2
                | u8::from(phi_b.saturated) << 3;
            rows.push(SstSample {
                state: s,
                desd: d,
                i_b,
                i_b_ref,
                i_dab,
                u_b,
                phi_b: phi_b.value,
                delta: i_b - i_b_ref,
                net_source: src.i_pv + src.i_w - src.i_l,
                flags,
            });
        }
        Sample { t: self.time(), sst: rows }
    }
}

/// The exact closed-loop equilibrium for SST `i` at its setpoints: converter
/// integrators inverted from the duty laws, DAB phase shift from the bus
/// current balance, storage voltages from the battery branch quadratic, and
/// the reference filter primed at the commanded reference.
fn equilibrium_state(
    scn: &Scenario,
    i: usize,
    base: &ChannelValues,
) -> Result<[f64; STATES_PER_SST], SimError> {
    let p = &scn.params[i];
    let dp = &scn.desd[i];
    let sp = &scn.setpoints[i];
    let omega = scn.topology.omega[i];

    for (gain, value) in [("k2", p.k2), ("k3", p.k3), ("k6", p.k6), ("k8", p.k8)] {
        if value == 0.0 {
            return Err(SimError::BadStart {
                sst: i,
                detail: format!("integral gain {gain} is zero; the loop cannot hold a setpoint"),
            });
        }
    }

    let d1 = (sp.v_d + p.r_f * sp.i_d - omega * p.l_f * sp.i_q) / sp.v_f;
    let d2 = (sp.v_q + p.r_f * sp.i_q + omega * p.l_f * sp.i_d) / sp.v_f;
    if d1.abs() > 1.0 || d2.abs() > 1.0 {
        return Err(SimError::BadStart {
            sst: i,
            detail: format!("rectifier duty ({d1:.3}, {d2:.3}) exceeds the modulation range"),
        });
    }

    // DAB charge balance c_s·v_h = i_dab, solved for the phase shift on the
    // principal branch φ ≤ 1/2.
    let c_s = sp.i_dab / sp.v_h;
    let gamma = 2.0 * p.f_s * p.l_s * c_s / p.n_s;
    let radicand = 1.0 - 4.0 * gamma;
    if !(0.0..=1.0).contains(&radicand) {
        return Err(SimError::BadStart {
            sst: i,
            detail: format!(
                "bus current target {} A is outside the DAB transfer range",
                sp.i_dab
            ),
        });
    }
    let phi_s = 0.5 * (1.0 - radicand.sqrt());

    let i_b0 = base.i_l - base.i_pv - base.i_w + sp.i_dab;
    let v_o = sp.v_l + dp.r_o * i_b0;
    let v_b = scn.v_b[i];
    let storage_radicand = v_b * v_b - 4.0 * dp.r_in * i_b0 * v_o;
    if storage_radicand < 0.0 {
        return Err(SimError::BadStart {
            sst: i,
            detail: format!("battery branch cannot supply the initial reference {i_b0} A"),
        });
    }
    let v_in = 0.5 * (v_b + storage_radicand.sqrt());

    Ok([
        sp.i_d,
        sp.i_q,
        sp.v_f,
        sp.v_h,
        sp.v_l,
        sp.i_d / p.k2,
        d1 / p.k3,
        d2 / p.k6,
        phi_s / p.k8,
        v_o,
        v_in,
        i_b0,
    ])
}

/// Simulate a whole scenario: decimated samples over [0, t_end] plus the
/// re-dispatch history. Fails on divergence, naming the time and component.
pub fn run(scn: &Scenario) -> Result<Trajectory, SimError> {
    let mut sim = Simulator::new(scn)?;
    let steps = (scn.sim.t_end / scn.sim.dt).round().max(1.0) as u64;
    let every = scn.sim.sample_every as u64;
    let mut samples = Vec::with_capacity((steps / every + 2) as usize);
    let initial_setpoints = sim.setpoints().to_vec();
    loop {
        let k = sim.step_count();
        if k % every == 0 {
            samples.push(sim.sample());
        }
        if k >= steps {
            break;
        }
        sim.advance()?;
    }
    if steps % every != 0 {
        samples.push(sim.sample());
    }
    Ok(Trajectory {
        samples,
        setpoint_changes: sim.log.clone(),
        infeasible_sharing: sim.infeasible,
        initial_setpoints,
        final_setpoints: sim.setpoints.clone(),
    })
}
