//! Scenario files: everything one simulation run needs, in one document.
//!
//! The primary encoding is TOML; a document whose first non-blank character is
//! `{` is read as JSON with the same schema. Sections:
//!
//! ```toml
//! name = "two-unit feeder"
//!
//! [sim]                  # integration settings
//! t_end = 1.0            # required, s
//! dt = 1e-5              # fixed RK4 step, s
//! mode = "fundamental"   # or "full" (keeps the 2θ rectifier ripple)
//! seed = 7               # noise seed; identical seed → identical run
//! sample_every = 20      # trajectory decimation (samples every N steps)
//! tau_f = 2e-4           # reference-derivative filter time constant, s
//! saturation_tick = 0.01 # sharing re-evaluation cadence, s
//! # controller_hold = 1e-4  # optional zero-order hold on the storage duty, s
//!
//! [grid]                 # stiff source behind the feeder
//! v_d = 1000.0           # required, V
//! v_q = 0.0
//! frequency = 60.0       # Hz; or `omega` in rad/s (exactly one of the two)
//! coupling = "as-written" # or "prefix-sum"
//!
//! [sst_defaults]         # optional layer applied to every SST
//! v_b = 350.0            # battery EMF, V
//! [sst_defaults.params]  # any converter parameter field
//! [sst_defaults.desd]    # any storage-converter field
//! [sst_defaults.setpoint]
//! i_dab = 2.0            # storage-branch current target, A — or `p_rec` in W
//! [sst_defaults.sources]
//! i_l = 5.0              # base load current, A (also i_pv, i_w)
//! [sst_defaults.noise]   # bounded random walk added to every source channel
//! amplitude = 0.05       # walk bound, A
//! hold = 0.005           # dwell per walk value, s
//!
//! [[sst]]                # one table per SST, feeder order
//! line = { r = 0.653, x = 0.651 }  # segment feeding this SST, ohm
//! theta0 = 0.0           # initial grid phase, rad
//! # frequency / omega, v_b, params, desd, setpoint, sources, noise:
//! # same keys as the defaults layer; values here win.
//!
//! [[events]]             # piecewise-constant source schedule changes
//! t = 0.3
//! sst = 0                # 0-based feeder position
//! kind = "load-step"     # or "pv-step" / "wind-step"
//! delta = 5.0            # A, added to the channel's base value
//!
//! [sharing]              # optional re-dispatch policy on storage saturation
//! method = "constant-current"  # or "constant-voltage"
//! delay = 0.0            # s between computing and applying new setpoints
//! delta_p = -500.0       # W moved off the saturated SST; omitted → sized
//!                        # from the measured excess plus 5 % headroom
//! ```
//!
//! Power targets may be given as `p_rec` (rectifier power, W) or as `i_dab`
//! (storage-branch current, A); the latter is inverted through the DC-link
//! loss quadratic. Resolution then solves the coupled feeder operating point,
//! so a parsed [`Scenario`] always carries fully consistent setpoints.
//!
//! Serialization writes every resolved value explicitly (no defaults layer,
//! `omega` instead of `frequency`, `p_rec` instead of `i_dab`), which makes
//! parse → serialize → parse the identity.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::RectifierMode;
use crate::netmodel::{
    CouplingMode, DesdParams, FeederTopology, LineImpedance, SetpointSet, SstParams,
};
use crate::powershare::{solve_operating_point, SharingMethod};

/// Bundled scenario names, resolvable through [`preset`].
pub const PRESET_NAMES: [&str; 3] = ["ieee34_9sst", "fig7_sharing", "fig8_delay"];

/// Text of a bundled scenario, by name (a trailing `.scn` is accepted).
pub fn preset(name: &str) -> Result<&'static str, ScenarioError> {
    match name.strip_suffix(".scn").unwrap_or(name) {
        "ieee34_9sst" => Ok(include_str!("../presets/ieee34_9sst.scn")),
        "fig7_sharing" => Ok(include_str!("../presets/fig7_sharing.scn")),
        "fig8_delay" => Ok(include_str!("../presets/fig8_delay.scn")),
        other => Err(ScenarioError::UnknownPreset { name: other.to_string() }),
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ScenarioError {
    #[error("scenario syntax: {0}")]
    Syntax(String),
    #[error("config key '{key}': {detail}")]
    Invalid { key: String, detail: String },
    #[error("scenario is not realizable: {detail}")]
    Infeasible { detail: String },
    #[error("no bundled scenario named '{name}' (available: ieee34_9sst, fig7_sharing, fig8_delay)")]
    UnknownPreset { name: String },
}

impl ScenarioError {
    fn invalid(key: impl Into<String>, detail: impl Into<String>) -> Self {
        Self::Invalid { key: key.into(), detail: detail.into() }
    }
}

// ---------------------------------------------------------------------------
// Resolved scenario
// ---------------------------------------------------------------------------

/// Integration and run settings.
#[derive(Debug, Clone, PartialEq)]
pub struct SimSettings {
    /// Simulated horizon, s.
    pub t_end: f64,
    /// Fixed integrator step, s.
    pub dt: f64,
    pub mode: RectifierMode,
    /// Seed for the source-noise generator.
    pub seed: u64,
    /// Keep one trajectory sample every this many steps.
    pub sample_every: usize,
    /// Reference-derivative filter time constant, s.
    pub tau_f: f64,
    /// Cadence at which storage saturation is re-checked, s.
    pub saturation_tick: f64,
    /// Optional zero-order hold on the storage duty (sampled controller), s.
    pub controller_hold: Option<f64>,
}

/// Bounded uniform random walk added to each source channel of one SST.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseSpec {
    /// Walk bound, A; 0 disables the walk.
    pub amplitude: f64,
    /// Dwell per walk value, s.
    pub hold: f64,
}

/// Base source currents of one SST; events and noise modulate these.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SourceProfile {
    pub i_pv: f64,
    pub i_w: f64,
    pub i_l: f64,
    pub noise: Option<NoiseSpec>,
}

/// Which source channel a scheduled step acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventKind {
    LoadStep,
    PvStep,
    WindStep,
}

/// One scheduled piecewise-constant change of a source channel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimedEvent {
    /// Event time, s.
    pub t: f64,
    /// Affected SST, 0-based feeder position.
    pub sst: usize,
    pub kind: EventKind,
    /// Added to the channel's standing value, A.
    pub delta: f64,
}

/// Re-dispatch policy applied when a storage current reference saturates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SharingPolicy {
    pub method: SharingMethod,
    /// Delay between computing and applying the new setpoints, s.
    pub delay: f64,
    /// Power moved off the saturated SST, W (negative sheds import). When
    /// absent, the engine sizes it from the measured excess plus 5 % headroom.
    pub delta_p: Option<f64>,
}

/// A validated, fully resolved simulation description.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub sim: SimSettings,
    pub topology: FeederTopology,
    /// Converter parameters, one entry per SST.
    pub params: Vec<SstParams>,
    /// Storage-converter parameters, one entry per SST.
    pub desd: Vec<DesdParams>,
    /// Battery EMF per SST, V.
    pub v_b: Vec<f64>,
    /// Consistent operating-point setpoints, one entry per SST.
    pub setpoints: Vec<SetpointSet>,
    pub sources: Vec<SourceProfile>,
    /// Time-ordered schedule changes.
    pub events: Vec<TimedEvent>,
    pub sharing: Option<SharingPolicy>,
}

impl Scenario {
    pub fn n(&self) -> usize {
        self.params.len()
    }
}

// ---------------------------------------------------------------------------
// Raw file schema
// ---------------------------------------------------------------------------

/// Defines an all-`Option` overlay of a parameter struct: fields present in a
/// scenario file replace the corresponding resolved values, absent fields keep
/// whatever the previous layer chose.
macro_rules! overlay {
    ($name:ident => $full:ty { $($field:ident),+ $(,)? }) => {
        #[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
        #[serde(deny_unknown_fields)]
        struct $name {
            $(
                #[serde(skip_serializing_if = "Option::is_none")]
                $field: Option<f64>,
            )+
        }

        impl $name {
            fn apply(&self, dst: &mut $full) {
                $( if let Some(v) = self.$field { dst.$field = v; } )+
            }

            fn capture(src: &$full) -> Self {
                Self { $( $field: Some(src.$field), )+ }
            }
        }
    };
}

overlay!(RawSstParams => SstParams {
    l_f, r_f, c_f, k1, k2, k3, k4, k5, k6, c_h, r_h, c_l, l_s, n_s, f_s, k7, k8,
});

overlay!(RawDesdParams => DesdParams {
    c_o, r_o, c_in, r_in, l_b, n_b, f_b, v_b_min, v_b_max, i_b_max, kappa_p,
});

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSetpoint {
    /// Rectifier power target, W. Mutually exclusive with `i_dab`.
    #[serde(skip_serializing_if = "Option::is_none")]
    p_rec: Option<f64>,
    /// Storage-branch current target, A. Mutually exclusive with `p_rec`.
    #[serde(skip_serializing_if = "Option::is_none")]
    i_dab: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    p_rec_max: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    i_q: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    v_f: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    v_l: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSources {
    #[serde(skip_serializing_if = "Option::is_none")]
    i_pv: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    i_w: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    i_l: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSstLayer {
    #[serde(skip_serializing_if = "Option::is_none")]
    v_b: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    params: Option<RawSstParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    desd: Option<RawDesdParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    setpoint: Option<RawSetpoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sources: Option<RawSources>,
    #[serde(skip_serializing_if = "Option::is_none")]
    noise: Option<NoiseSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSst {
    #[serde(skip_serializing_if = "Option::is_none")]
    theta0: Option<f64>,
    /// Grid frequency override, Hz. Mutually exclusive with `omega`.
    #[serde(skip_serializing_if = "Option::is_none")]
    frequency: Option<f64>,
    /// Grid angular frequency override, rad/s.
    #[serde(skip_serializing_if = "Option::is_none")]
    omega: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    v_b: Option<f64>,
    line: LineImpedance,
    #[serde(skip_serializing_if = "Option::is_none")]
    params: Option<RawSstParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    desd: Option<RawDesdParams>,
    #[serde(skip_serializing_if = "Option::is_none")]
    setpoint: Option<RawSetpoint>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sources: Option<RawSources>,
    #[serde(skip_serializing_if = "Option::is_none")]
    noise: Option<NoiseSpec>,
}

impl RawSst {
    fn layer(&self) -> RawSstLayer {
        RawSstLayer {
            v_b: self.v_b,
            params: self.params,
            desd: self.desd,
            setpoint: self.setpoint,
            sources: self.sources,
            noise: self.noise,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGrid {
    v_d: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    v_q: Option<f64>,
    /// Grid frequency, Hz. Mutually exclusive with `omega`. Default 60 Hz.
    #[serde(skip_serializing_if = "Option::is_none")]
    frequency: Option<f64>,
    /// Grid angular frequency, rad/s.
    #[serde(skip_serializing_if = "Option::is_none")]
    omega: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    coupling: Option<CouplingMode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSim {
    t_end: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    dt: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    mode: Option<RectifierMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sample_every: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    tau_f: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    saturation_tick: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    controller_hold: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSharing {
    method: SharingMethod,
    #[serde(skip_serializing_if = "Option::is_none")]
    delay: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    delta_p: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawScenario {
    #[serde(skip_serializing_if = "Option::is_none")]
    name: Option<String>,
    sim: RawSim,
    grid: RawGrid,
    #[serde(skip_serializing_if = "Option::is_none")]
    sst_defaults: Option<RawSstLayer>,
    sst: Vec<RawSst>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    events: Vec<TimedEvent>,
    #[serde(skip_serializing_if = "Option::is_none")]
    sharing: Option<RawSharing>,
}

// ---------------------------------------------------------------------------
// Parse / resolve
// ---------------------------------------------------------------------------

/// Parse and validate a scenario document (TOML, or JSON when it starts with
/// `{`). Every rejected document yields an error naming the offending key.
pub fn parse(text: &str) -> Result<Scenario, ScenarioError> {
    let raw: RawScenario = if text.trim_start().starts_with('{') {
        serde_json::from_str(text).map_err(|e| ScenarioError::Syntax(e.to_string()))?
    } else {
        toml::from_str(text).map_err(|e| ScenarioError::Syntax(e.to_string()))?
    };
    resolve(raw)
}

fn require_positive(key: &str, v: f64) -> Result<(), ScenarioError> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(ScenarioError::invalid(key, format!("must be a positive finite number, got {v}")))
    }
}

fn require_finite(key: &str, v: f64) -> Result<(), ScenarioError> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(ScenarioError::invalid(key, format!("must be finite, got {v}")))
    }
}

/// Angular frequency from an optional Hz/rad-per-second pair.
fn resolve_omega(
    key: &str,
    frequency: Option<f64>,
    omega: Option<f64>,
    fallback: f64,
) -> Result<f64, ScenarioError> {
    match (frequency, omega) {
        (Some(_), Some(_)) => Err(ScenarioError::invalid(
            key,
            "give either `frequency` (Hz) or `omega` (rad/s), not both",
        )),
        (Some(f), None) => {
            require_positive(&format!("{key}.frequency"), f)?;
            Ok(std::f64::consts::TAU * f)
        }
        (None, Some(w)) => {
            require_positive(&format!("{key}.omega"), w)?;
            Ok(w)
        }
        (None, None) => Ok(fallback),
    }
}

/// The power target equivalent to a storage-branch current target: inverts
/// I_dab = (P − r_h·P²/v_f²)/v_l through the root continuous at I_dab = 0,
/// P = 2c / (1 + √(1 − 4ac)) with a = r_h/v_f² and c = v_l·I_dab.
fn p_rec_from_i_dab(
    key: &str,
    i_dab: f64,
    r_h: f64,
    v_f: f64,
    v_l: f64,
) -> Result<f64, ScenarioError> {
    let a = r_h / (v_f * v_f);
    let c = v_l * i_dab;
    let radicand = 1.0 - 4.0 * a * c;
    if radicand < 0.0 {
        return Err(ScenarioError::invalid(
            key,
            format!("storage-branch target {i_dab} A exceeds what the DC link can carry"),
        ));
    }
    Ok(2.0 * c / (1.0 + radicand.sqrt()))
}

struct MergedSst {
    params: SstParams,
    desd: DesdParams,
    v_b: f64,
    sources: SourceProfile,
    /// (power target W, cap W, i_q A, v_f V, v_l V)
    targets: (f64, f64, f64, f64, f64),
}

fn check_params(key: &str, p: &SstParams) -> Result<(), ScenarioError> {
    for (name, v) in [
        ("l_f", p.l_f),
        ("r_f", p.r_f),
        ("c_f", p.c_f),
        ("c_h", p.c_h),
        ("r_h", p.r_h),
        ("c_l", p.c_l),
        ("l_s", p.l_s),
        ("n_s", p.n_s),
        ("f_s", p.f_s),
    ] {
        require_positive(&format!("{key}.{name}"), v)?;
    }
    for (name, v) in [
        ("k1", p.k1),
        ("k2", p.k2),
        ("k3", p.k3),
        ("k4", p.k4),
        ("k5", p.k5),
        ("k6", p.k6),
        ("k7", p.k7),
        ("k8", p.k8),
    ] {
        require_finite(&format!("{key}.{name}"), v)?;
    }
    Ok(())
}

fn check_desd(key: &str, d: &DesdParams) -> Result<(), ScenarioError> {
    for (name, v) in [
        ("c_o", d.c_o),
        ("r_o", d.r_o),
        ("c_in", d.c_in),
        ("r_in", d.r_in),
        ("l_b", d.l_b),
        ("n_b", d.n_b),
        ("f_b", d.f_b),
        ("v_b_min", d.v_b_min),
        ("i_b_max", d.i_b_max),
        ("kappa_p", d.kappa_p),
    ] {
        require_positive(&format!("{key}.{name}"), v)?;
    }
    if !(d.v_b_max.is_finite() && d.v_b_max >= d.v_b_min) {
        return Err(ScenarioError::invalid(
            format!("{key}.v_b_max"),
            format!("must be at least v_b_min = {}, got {}", d.v_b_min, d.v_b_max),
        ));
    }
    Ok(())
}

/// One layer's power target, if it states one. Errors when a single layer
/// states both forms.
fn layer_target(key: &str, sp: &RawSetpoint) -> Result<Option<(bool, f64)>, ScenarioError> {
    match (sp.p_rec, sp.i_dab) {
        (Some(_), Some(_)) => Err(ScenarioError::invalid(
            format!("{key}.setpoint"),
            "give either `p_rec` (W) or `i_dab` (A), not both",
        )),
        (Some(p), None) => Ok(Some((false, p))),
        (None, Some(i)) => Ok(Some((true, i))),
        (None, None) => Ok(None),
    }
}

fn merge_sst(
    index: usize,
    defaults: &RawSstLayer,
    sst: &RawSstLayer,
) -> Result<MergedSst, ScenarioError> {
    let key = format!("sst[{index}]");

    let mut params = SstParams::default();
    if let Some(layer) = &defaults.params {
        layer.apply(&mut params);
    }
    if let Some(layer) = &sst.params {
        layer.apply(&mut params);
    }
    check_params(&format!("{key}.params"), &params)?;

    let mut desd = DesdParams::default();
    if let Some(layer) = &defaults.desd {
        layer.apply(&mut desd);
    }
    if let Some(layer) = &sst.desd {
        layer.apply(&mut desd);
    }
    check_desd(&format!("{key}.desd"), &desd)?;

    let v_b = sst.v_b.or(defaults.v_b).unwrap_or(350.0);
    if !(v_b.is_finite() && v_b >= desd.v_b_min && v_b <= desd.v_b_max) {
        return Err(ScenarioError::invalid(
            format!("{key}.v_b"),
            format!("battery EMF {v_b} V must lie in [{}, {}] V", desd.v_b_min, desd.v_b_max),
        ));
    }

    let default_sp = defaults.setpoint.unwrap_or_default();
    let sst_sp = sst.setpoint.unwrap_or_default();
    let v_f = sst_sp.v_f.or(default_sp.v_f).unwrap_or(3_800.0);
    let v_l = sst_sp.v_l.or(default_sp.v_l).unwrap_or(200.0);
    let i_q = sst_sp.i_q.or(default_sp.i_q).unwrap_or(0.0);
    let p_rec_max = sst_sp.p_rec_max.or(default_sp.p_rec_max).unwrap_or(30_000.0);
    require_positive(&format!("{key}.setpoint.v_f"), v_f)?;
    require_positive(&format!("{key}.setpoint.v_l"), v_l)?;
    require_positive(&format!("{key}.setpoint.p_rec_max"), p_rec_max)?;
    require_finite(&format!("{key}.setpoint.i_q"), i_q)?;

    // A power target stated on the SST supersedes both forms of the default
    // layer's target; within one layer the two forms are mutually exclusive.
    let target = match layer_target(&key, &sst_sp)? {
        Some(t) => Some(t),
        None => layer_target("sst_defaults", &default_sp)?,
    };
    let p_rec = match target {
        Some((false, p)) => {
            require_finite(&format!("{key}.setpoint.p_rec"), p)?;
            p
        }
        Some((true, i)) => {
            require_finite(&format!("{key}.setpoint.i_dab"), i)?;
            if i < 0.0 {
                return Err(ScenarioError::invalid(
                    format!("{key}.setpoint.i_dab"),
                    format!(
                        "current target {i} A is negative; the storage branch \
                         only transfers power toward the low-voltage bus"
                    ),
                ));
            }
            p_rec_from_i_dab(&format!("{key}.setpoint.i_dab"), i, params.r_h, v_f, v_l)?
        }
        None => 0.0,
    };
    if p_rec > p_rec_max {
        return Err(ScenarioError::invalid(
            format!("{key}.setpoint.p_rec"),
            format!("power target {p_rec} W exceeds p_rec_max = {p_rec_max} W"),
        ));
    }
    if p_rec < 0.0 {
        return Err(ScenarioError::invalid(
            format!("{key}.setpoint.p_rec"),
            format!(
                "power target {p_rec} W is negative; the storage branch only \
                 transfers power toward the low-voltage bus"
            ),
        ));
    }

    let default_src = defaults.sources.unwrap_or_default();
    let sst_src = sst.sources.unwrap_or_default();
    let i_pv = sst_src.i_pv.or(default_src.i_pv).unwrap_or(0.0);
    let i_w = sst_src.i_w.or(default_src.i_w).unwrap_or(0.0);
    let i_l = sst_src.i_l.or(default_src.i_l).unwrap_or(0.0);
    for (name, v) in [("i_pv", i_pv), ("i_w", i_w), ("i_l", i_l)] {
        require_finite(&format!("{key}.sources.{name}"), v)?;
    }

    let noise = sst.noise.or(defaults.noise);
    if let Some(nz) = &noise {
        if !(nz.amplitude.is_finite() && nz.amplitude >= 0.0) {
            return Err(ScenarioError::invalid(
                format!("{key}.noise.amplitude"),
                format!("must be a finite non-negative number, got {}", nz.amplitude),
            ));
        }
        require_positive(&format!("{key}.noise.hold"), nz.hold)?;
    }

    Ok(MergedSst {
        params,
        desd,
        v_b,
        sources: SourceProfile { i_pv, i_w, i_l, noise },
        targets: (p_rec, p_rec_max, i_q, v_f, v_l),
    })
}

fn resolve(raw: RawScenario) -> Result<Scenario, ScenarioError> {
    if raw.sst.is_empty() {
        return Err(ScenarioError::invalid("sst", "at least one [[sst]] table is required"));
    }
    let n = raw.sst.len();

    require_positive("sim.t_end", raw.sim.t_end)?;
    let dt = raw.sim.dt.unwrap_or(1e-5);
    require_positive("sim.dt", dt)?;
    if dt > raw.sim.t_end {
        return Err(ScenarioError::invalid(
            "sim.dt",
            format!("step {dt} s exceeds the horizon t_end = {} s", raw.sim.t_end),
        ));
    }
    let sample_every = raw.sim.sample_every.unwrap_or(20);
    if sample_every == 0 {
        return Err(ScenarioError::invalid("sim.sample_every", "must be at least 1"));
    }
    let tau_f = raw.sim.tau_f.unwrap_or(2e-4);
    require_positive("sim.tau_f", tau_f)?;
    let saturation_tick = raw.sim.saturation_tick.unwrap_or(0.01);
    require_positive("sim.saturation_tick", saturation_tick)?;
    if let Some(hold) = raw.sim.controller_hold {
        require_positive("sim.controller_hold", hold)?;
    }
    let sim = SimSettings {
        t_end: raw.sim.t_end,
        dt,
        mode: raw.sim.mode.unwrap_or_default(),
        seed: raw.sim.seed.unwrap_or(0),
        sample_every,
        tau_f,
        saturation_tick,
        controller_hold: raw.sim.controller_hold,
    };

    require_finite("grid.v_d", raw.grid.v_d)?;
    let v_g_q = raw.grid.v_q.unwrap_or(0.0);
    require_finite("grid.v_q", v_g_q)?;
    let omega_grid = resolve_omega(
        "grid",
        raw.grid.frequency,
        raw.grid.omega,
        std::f64::consts::TAU * 60.0,
    )?;

    let defaults = raw.sst_defaults.unwrap_or_default();
    let mut merged = Vec::with_capacity(n);
    let mut lines = Vec::with_capacity(n);
    let mut omega = Vec::with_capacity(n);
    let mut theta0 = Vec::with_capacity(n);
    for (i, entry) in raw.sst.iter().enumerate() {
        let key = format!("sst[{i}]");
        if !(entry.line.r.is_finite() && entry.line.r >= 0.0) {
            return Err(ScenarioError::invalid(
                format!("{key}.line.r"),
                format!("must be a finite non-negative resistance, got {}", entry.line.r),
            ));
        }
        require_finite(&format!("{key}.line.x"), entry.line.x)?;
        lines.push(entry.line);
        omega.push(resolve_omega(&key, entry.frequency, entry.omega, omega_grid)?);
        let th = entry.theta0.unwrap_or(0.0);
        require_finite(&format!("{key}.theta0"), th)?;
        theta0.push(th);
        merged.push(merge_sst(i, &defaults, &entry.layer())?);
    }

    let topology = FeederTopology {
        v_g_d: raw.grid.v_d,
        v_g_q,
        omega,
        theta0,
        lines,
        coupling_mode: raw.grid.coupling.unwrap_or_default(),
    };

    for (k, ev) in raw.events.iter().enumerate() {
        let key = format!("events[{k}]");
        require_finite(&format!("{key}.t"), ev.t)?;
        require_finite(&format!("{key}.delta"), ev.delta)?;
        if ev.t < 0.0 || ev.t > sim.t_end {
            return Err(ScenarioError::invalid(
                format!("{key}.t"),
                format!("event time {} s is outside [0, {}] s", ev.t, sim.t_end),
            ));
        }
        if ev.sst >= n {
            return Err(ScenarioError::invalid(
                format!("{key}.sst"),
                format!("index {} out of range for {n} SSTs", ev.sst),
            ));
        }
        if k > 0 && ev.t < raw.events[k - 1].t {
            return Err(ScenarioError::invalid(
                format!("{key}.t"),
                format!("events must be time-ordered; {} s follows {} s", ev.t, raw.events[k - 1].t),
            ));
        }
    }

    let sharing = match &raw.sharing {
        None => None,
        Some(sh) => {
            let delay = sh.delay.unwrap_or(0.0);
            if !(delay.is_finite() && delay >= 0.0) {
                return Err(ScenarioError::invalid(
                    "sharing.delay",
                    format!("must be a finite non-negative time, got {delay}"),
                ));
            }
            if let Some(dp) = sh.delta_p {
                require_finite("sharing.delta_p", dp)?;
            }
            Some(SharingPolicy { method: sh.method, delay, delta_p: sh.delta_p })
        }
    };

    let params: Vec<SstParams> = merged.iter().map(|m| m.params).collect();
    let p_rec: Vec<f64> = merged.iter().map(|m| m.targets.0).collect();
    let p_rec_max: Vec<f64> = merged.iter().map(|m| m.targets.1).collect();
    let i_q: Vec<f64> = merged.iter().map(|m| m.targets.2).collect();
    let v_f: Vec<f64> = merged.iter().map(|m| m.targets.3).collect();
    let v_l: Vec<f64> = merged.iter().map(|m| m.targets.4).collect();
    let setpoints = solve_operating_point(&params, &topology, &p_rec, &p_rec_max, &i_q, &v_f, &v_l)
        .map_err(|e| ScenarioError::Infeasible { detail: e.to_string() })?;

    Ok(Scenario {
        name: raw.name.unwrap_or_else(|| "scenario".to_string()),
        sim,
        topology,
        params,
        desd: merged.iter().map(|m| m.desd).collect(),
        v_b: merged.iter().map(|m| m.v_b).collect(),
        setpoints,
        sources: merged.iter().map(|m| m.sources).collect(),
        events: raw.events,
        sharing,
    })
}

// ---------------------------------------------------------------------------
// Serialize
// ---------------------------------------------------------------------------

/// Render a resolved scenario back to TOML. Every value is written explicitly
/// (no defaults layer, `omega` in rad/s, power targets as `p_rec`), so parsing
/// the output reproduces the input scenario exactly.
pub fn serialize(s: &Scenario) -> String {
    let raw = RawScenario {
        name: Some(s.name.clone()),
        sim: RawSim {
            t_end: s.sim.t_end,
            dt: Some(s.sim.dt),
            mode: Some(s.sim.mode),
            seed: Some(s.sim.seed),
            sample_every: Some(s.sim.sample_every),
            tau_f: Some(s.sim.tau_f),
            saturation_tick: Some(s.sim.saturation_tick),
            controller_hold: s.sim.controller_hold,
        },
        grid: RawGrid {
            v_d: s.topology.v_g_d,
            v_q: Some(s.topology.v_g_q),
            frequency: None,
            omega: None, // written per SST, which is the general form
            coupling: Some(s.topology.coupling_mode),
        },
        sst_defaults: None,
        sst: (0..s.n())
            .map(|i| RawSst {
                theta0: Some(s.topology.theta0[i]),
                frequency: None,
                omega: Some(s.topology.omega[i]),
                v_b: Some(s.v_b[i]),
                line: s.topology.lines[i],
                params: Some(RawSstParams::capture(&s.params[i])),
                desd: Some(RawDesdParams::capture(&s.desd[i])),
                setpoint: Some(RawSetpoint {
                    p_rec: Some(s.setpoints[i].p_rec),
                    i_dab: None,
                    p_rec_max: Some(s.setpoints[i].p_rec_max),
                    i_q: Some(s.setpoints[i].i_q),
                    v_f: Some(s.setpoints[i].v_f),
                    v_l: Some(s.setpoints[i].v_l),
                }),
                sources: Some(RawSources {
                    i_pv: Some(s.sources[i].i_pv),
                    i_w: Some(s.sources[i].i_w),
                    i_l: Some(s.sources[i].i_l),
                }),
                noise: s.sources[i].noise,
            })
            .collect(),
        events: s.events.clone(),
        sharing: s.sharing.map(|sh| RawSharing {
            method: sh.method,
            delay: Some(sh.delay),
            delta_p: sh.delta_p,
        }),
    };
    toml::to_string_pretty(&raw).expect("scenario serialization cannot fail")
}
