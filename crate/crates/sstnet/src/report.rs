//! Run artifacts: the trajectory CSV, the line-delimited setpoint-change
//! log, the run summary, stability and envelope reports, and an emitted
//! plotting script.
//!
//! All indices in artifacts are 0-based, matching the `sst` keys of the
//! scenario format. Floating-point values are written with Rust's shortest
//! round-trip formatting, so identical runs produce byte-identical files.

use std::fmt::Write as _;

use crate::dynamics::RectifierMode;
use crate::scenario::Scenario;
use crate::simengine::{SetpointChange, Trajectory};
use crate::stability::{
    assemble_linearization, assess_stability, eigenvalue_union_gap, find_equilibrium,
    vin_envelope, EnvelopePair, StabilityError,
};

/// Column layout of the trajectory CSV, one row per (sample, SST).
pub const CSV_HEADER: &str =
    "t,sst,i_d,i_q,v_f,v_h,v_l,v_o,v_in,I_b,I_b_ref,I_dab,u_b,phi_b,delta,sat_flags";

/// Render the whole trajectory in the pinned CSV schema.
pub fn trajectory_csv(traj: &Trajectory) -> String {
    let mut out = String::with_capacity(traj.samples.len() * 160 + 128);
    out.push_str(CSV_HEADER);
    out.push('\n');
    for sample in &traj.samples {
        for (i, row) in sample.sst.iter().enumerate() {
            let s = &row.state;
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
                sample.t,
                i,
                s.i_d,
                s.i_q,
                s.v_f,
                s.v_h,
                s.v_l,
                row.desd.v_o,
                row.desd.v_in,
                row.i_b,
                row.i_b_ref,
                row.i_dab,
                row.u_b,
                row.phi_b,
                row.delta,
                row.flags,
            );
        }
    }
    out
}

/// Setpoint-change history as line-delimited JSON records.
pub fn setpoint_log(traj: &Trajectory) -> String {
    let mut out = String::new();
    for change in &traj.setpoint_changes {
        let line = serde_json::to_string(change).expect("setpoint record serializes");
        out.push_str(&line);
        out.push('\n');
    }
    out
}

fn mode_name(mode: RectifierMode) -> &'static str {
    match mode {
        RectifierMode::Full => "full",
        RectifierMode::Fundamental => "fundamental",
    }
}

/// Peak excursion and settling time of one SST's tracking error after `t0`:
/// the first sample time from which |δ| stays within the threshold, where
/// the threshold is 1 % of the peak with a 0.1 mA floor.
fn settling(traj: &Trajectory, sst: usize, t0: f64) -> Option<(f64, Option<f64>)> {
    let after: Vec<(f64, f64)> = traj
        .samples
        .iter()
        .filter(|s| s.t >= t0)
        .map(|s| (s.t, s.sst[sst].delta.abs()))
        .collect();
    if after.is_empty() {
        return None;
    }
    let peak = after.iter().fold(0.0f64, |m, (_, d)| m.max(*d));
    let threshold = (0.01 * peak).max(1e-4);
    let mut settle = None;
    for &(t, d) in after.iter().rev() {
        if d <= threshold {
            settle = Some(t);
        } else {
            break;
        }
    }
    Some((peak, settle))
}

/// Integrated-envelope verdict for one SST over the sampled trajectory:
/// (p_max used, observed v_in range, within-envelope flag).
fn envelope_verdict(scn: &Scenario, traj: &Trajectory, i: usize) -> (f64, f64, f64, bool) {
    let d = &scn.desd[i];
    let p_max = 1.05
        * traj
            .samples
            .iter()
            .map(|s| {
                let r = &s.sst[i];
                (r.u_b * r.desd.v_in * r.desd.v_o).abs()
            })
            .fold(0.0f64, f64::max);
    let v0 = traj.samples[0].sst[i].desd.v_in;
    let mut pair = EnvelopePair::new(v0);
    let mut within = true;
    let mut lo = v0;
    let mut hi = v0;
    for w in traj.samples.windows(2) {
        let span = w[1].t - w[0].t;
        let substeps = (span / 2e-5).ceil().max(1.0) as usize;
        let h = span / substeps as f64;
        for _ in 0..substeps {
            pair.step(h, p_max, d);
        }
        let v = w[1].sst[i].desd.v_in;
        lo = lo.min(v);
        hi = hi.max(v);
        within &= pair.contains(v);
    }
    (p_max, lo, hi, within)
}

fn format_changed(changed: &[usize], n: usize) -> String {
    if changed.len() == n {
        format!("all {n}")
    } else if changed.is_empty() {
        "none".to_string()
    } else {
        changed.iter().map(|i| i.to_string()).collect::<Vec<_>>().join(", ")
    }
}

fn setpoint_table(change: &SetpointChange) -> String {
    let mut out = String::new();
    let after = change.after.as_ref();
    let _ = writeln!(
        out,
        "      {:<4} {:>24} {:>20} {:>20} {:>22}",
        "sst", "P_rec W (before -> after)", "i_d A", "i_q A", "bus current target A"
    );
    for (i, before) in change.before.iter().enumerate() {
        let mark = if change.changed.contains(&i) { "*" } else { " " };
        match after {
            Some(post) => {
                let a = &post[i];
                let _ = writeln!(
                    out,
                    "      {i:<4}{mark}{:>12.3} -> {:<12.3} {:>8.4} -> {:<8.4} {:>8.4} -> {:<8.4} {:>9.4} -> {:<9.4}",
                    before.p_rec, a.p_rec, before.i_d, a.i_d, before.i_q, a.i_q,
                    before.i_dab, a.i_dab,
                );
            }
            None => {
                let _ = writeln!(
                    out,
                    "      {i:<4}{mark}{:>12.3} (unchanged)  {:>8.4} {:>8.4} {:>9.4}",
                    before.p_rec, before.i_d, before.i_q, before.i_dab,
                );
            }
        }
    }
    out
}

/// Human-readable run summary: header, per-SST tracking and envelope
/// verdicts, per-event settling, and a before/after table per setpoint
/// change including the disturbance-to-settle window.
pub fn summary(scn: &Scenario, traj: &Trajectory) -> String {
    let n = scn.n();
    let mut out = String::new();
    let _ = writeln!(
        out,
        "scenario '{}': {} SST{}, horizon {} s at dt = {} s, {} rectifier mode, seed {}",
        scn.name,
        n,
        if n == 1 { "" } else { "s" },
        scn.sim.t_end,
        scn.sim.dt,
        mode_name(scn.sim.mode),
        scn.sim.seed,
    );
    let noisy = scn.sources.iter().filter(|s| s.noise.is_some()).count();
    if noisy > 0 {
        let _ = writeln!(out, "source noise: bounded random walk on {noisy} of {n} SSTs");
    }
    if let Some(policy) = scn.sharing {
        let _ = writeln!(
            out,
            "sharing policy: {:?} with {} s actuation delay",
            policy.method, policy.delay
        );
    }

    let _ = writeln!(out, "\nper-SST tracking and storage envelopes");
    let _ = writeln!(
        out,
        "  {:<4} {:>12} {:>13} {:>21} {:>16}",
        "sst", "max|delta| A", "final|delta| A", "v_in range V", "within envelope"
    );
    for i in 0..n {
        let max_delta =
            traj.samples.iter().map(|s| s.sst[i].delta.abs()).fold(0.0f64, f64::max);
        let final_delta = traj.samples.last().map_or(0.0, |s| s.sst[i].delta.abs());
        let (_, lo, hi, within) = envelope_verdict(scn, traj, i);
        let _ = writeln!(
            out,
            "  {i:<4} {max_delta:>12.5} {final_delta:>13.2e} {:>9.2} ..{hi:>9.2} {:>16}",
            lo,
            if within { "yes" } else { "NO" }
        );
    }

    if !scn.events.is_empty() {
        let _ = writeln!(out, "\nevents");
        for ev in &scn.events {
            let kind = match ev.kind {
                crate::scenario::EventKind::LoadStep => "load-step",
                crate::scenario::EventKind::PvStep => "pv-step",
                crate::scenario::EventKind::WindStep => "wind-step",
            };
            match settling(traj, ev.sst, ev.t) {
                Some((peak, Some(ts))) => {
                    let _ = writeln!(
                        out,
                        "  t = {} s {kind} sst {} ({:+} A): peak |delta| {peak:.4} A, settled by t = {ts:.4} s ({:.1} ms)",
                        ev.t, ev.sst, ev.delta, (ts - ev.t) * 1e3
                    );
                }
                Some((peak, None)) => {
                    let _ = writeln!(
                        out,
                        "  t = {} s {kind} sst {} ({:+} A): peak |delta| {peak:.4} A, NOT settled by horizon",
                        ev.t, ev.sst, ev.delta
                    );
                }
                None => {
                    let _ = writeln!(out, "  t = {} s {kind} sst {}: beyond sampled horizon", ev.t, ev.sst);
                }
            }
        }
    }

    if traj.setpoint_changes.is_empty() {
        let _ = writeln!(out, "\nsetpoint changes: none (no storage saturation handled)");
    } else {
        let _ = writeln!(out, "\nsetpoint changes");
        for (k, change) in traj.setpoint_changes.iter().enumerate() {
            let _ = writeln!(
                out,
                "  [{k}] computed t = {} s: {:?}, trigger sst {}, delta_p = {} W, outcome: {}, changed: {}",
                change.computed_at,
                change.method,
                change.trigger_sst,
                change.delta_p,
                change.outcome,
                format_changed(&change.changed, n),
            );
            out.push_str(&setpoint_table(change));
            if let Some(applied) = change.applied_at {
                let delay = applied - change.computed_at;
                let i_b_max = scn.desd[change.trigger_sst].i_b_max;
                let window = traj
                    .samples
                    .iter()
                    .filter(|s| s.t >= applied)
                    .find(|s| {
                        let from = s.t;
                        traj.samples
                            .iter()
                            .filter(|r| r.t >= from)
                            .all(|r| r.sst[change.trigger_sst].delta.abs() < 1e-3 * i_b_max)
                    })
                    .map(|s| s.t);
                match window {
                    Some(ts) => {
                        let _ = writeln!(
                            out,
                            "      window: disturbance absorbed {:.4} s after computation (delay {delay:.4} s + settling {:.4} s)",
                            ts - change.computed_at,
                            ts - applied
                        );
                    }
                    None => {
                        let _ = writeln!(out, "      window: not settled within the horizon");
                    }
                }
            }
        }
    }

    if traj.infeasible_sharing {
        let _ = writeln!(
            out,
            "\nWARNING: at least one re-dispatch plan was infeasible and reverted; the run continued under the standing setpoints"
        );
    }
    out
}

/// Spectrum analysis of the linearized closed loop at the scenario's
/// operating point.
pub fn stability_report(scn: &Scenario) -> Result<String, StabilityError> {
    let eq = find_equilibrium(&scn.params, &scn.topology, &scn.setpoints)?;
    let sys = assemble_linearization(&scn.params, &scn.desd, &scn.topology, &scn.setpoints, &eq.z);
    let report = assess_stability(&sys.assembled());
    let gap = eigenvalue_union_gap(&sys);
    let n = scn.n();
    let mut out = String::new();
    let _ = writeln!(out, "stability analysis: {n} SST{}", if n == 1 { "" } else { "s" });
    let _ = writeln!(
        out,
        "equilibrium residual {:.3e} after {} Newton iterations",
        eq.residual, eq.iterations
    );
    let _ = writeln!(
        out,
        "assembled spectrum: {} eigenvalues; stable: {} (margin {:.4} 1/s)",
        report.eigenvalues.len(),
        if report.stable { "yes" } else { "NO" },
        report.margin
    );
    let _ = writeln!(
        out,
        "block-structure check: assembled spectrum matches the network spectrum plus the storage rates within {gap:.3e}"
    );
    let _ = writeln!(
        out,
        "storage tracking rates: {}",
        sys.k_p.iter().map(|k| format!("{k:.1}")).collect::<Vec<_>>().join(", ")
    );
    let _ = writeln!(out, "rightmost eigenvalues:");
    let mut eigs = report.eigenvalues.clone();
    eigs.sort_by(|a, b| b.re.partial_cmp(&a.re).unwrap());
    for l in eigs.iter().take(8) {
        let _ = writeln!(out, "  {:>12.4} {:+.4}j", l.re, l.im);
    }
    Ok(out)
}

/// Storage input-voltage envelope report. With a trajectory the power bound
/// is calibrated from the observed storage power; without one a worst-case
/// bound at the current limit is used.
pub fn envelope_report(scn: &Scenario, traj: Option<&Trajectory>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "storage input-voltage envelopes");
    for i in 0..scn.n() {
        let d = &scn.desd[i];
        let (p_max, observed) = match traj {
            Some(t) => {
                let (p, lo, hi, within) = envelope_verdict(scn, t, i);
                (p, Some((lo, hi, within)))
            }
            None => ((scn.setpoints[i].v_l + d.r_o * d.i_b_max) * d.i_b_max, None),
        };
        let v0 = match traj {
            Some(t) => t.samples[0].sst[i].desd.v_in,
            None => scn.v_b[i],
        };
        let env = vin_envelope(d, p_max, v0);
        let _ = write!(
            out,
            "sst {i}: p_max = {p_max:.1} W, sustainable: {}, collapse threshold {:.2} V, \
             lower rest {:.2} V, upper rest {:.2} V, start {v0:.2} V admissible: {}",
            if env.feasible { "yes" } else { "NO" },
            env.v_min_lo,
            env.v_min_hi,
            env.v_max_hi,
            if env.admissible { "yes" } else { "NO" }
        );
        match observed {
            Some((lo, hi, within)) => {
                let _ = writeln!(
                    out,
                    "; observed v_in in [{lo:.2}, {hi:.2}] V, within integrated envelope: {}",
                    if within { "yes" } else { "NO" }
                );
            }
            None => {
                out.push('\n');
            }
        }
    }
    out
}

/// A self-contained plotting script (python3 + matplotlib) that renders the
/// storage current against its reference for every SST from the CSV.
pub fn plot_script(csv_file: &str) -> String {
    format!(
        r#"#!/usr/bin/env python3
"""Plot storage currents I_b against their references I_b_ref per SST."""
import csv
import sys
from collections import defaultdict

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

path = sys.argv[1] if len(sys.argv) > 1 else "{csv_file}"
series = defaultdict(lambda: {{"t": [], "I_b": [], "I_b_ref": [], "delta": []}})
with open(path, newline="") as fh:
    for row in csv.DictReader(fh):
        s = series[int(row["sst"])]
        s["t"].append(float(row["t"]))
        s["I_b"].append(float(row["I_b"]))
        s["I_b_ref"].append(float(row["I_b_ref"]))
        s["delta"].append(float(row["delta"]))

n = len(series)
fig, axes = plt.subplots(n, 1, sharex=True, figsize=(9, 1.9 * n + 1), squeeze=False)
for ax, (i, s) in zip(axes[:, 0], sorted(series.items())):
    ax.plot(s["t"], s["I_b_ref"], "k--", lw=1.0, label="I_b_ref")
    ax.plot(s["t"], s["I_b"], lw=1.2, label="I_b")
    ax.set_ylabel(f"sst {{i}}\nA")
    ax.grid(alpha=0.3)
axes[0, 0].legend(loc="upper right", ncol=2, fontsize=8)
axes[-1, 0].set_xlabel("t  s")
fig.suptitle("Storage current tracking")
fig.tight_layout()
out = path.rsplit(".", 1)[0] + ".png"
fig.savefig(out, dpi=150)
print(f"wrote {{out}}")
"#
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::parse;
    use crate::simengine::run;

    fn small_scenario(tail: &str) -> Scenario {
        let text = format!(
            r#"
            [sim]
            t_end = 0.05
            seed = 3

            [grid]
            v_d = 1000.0

            [sst_defaults.setpoint]
            i_dab = 2.0

            [[sst]]
            line = {{ r = 0.653, x = 0.651 }}
            [sst.sources]
            i_pv = 7.0
            i_l = 5.0

            [[sst]]
            line = {{ r = 0.438, x = 0.437 }}
            [sst.sources]
            i_pv = 4.0
            i_l = 5.0
            {tail}
            "#
        );
        parse(&text).unwrap()
    }

    fn sharing_tail() -> &'static str {
        r#"
        [sst_defaults.desd]
        i_b_max = 4.0

        [[events]]
        t = 0.02
        sst = 0
        kind = "load-step"
        delta = 4.5

        [sharing]
        method = "constant-current"
        delay = 0.0
        "#
    }

    #[test]
    fn csv_is_deterministic_with_the_pinned_header() {
        let scn = small_scenario("");
        let a = trajectory_csv(&run(&scn).unwrap());
        let b = trajectory_csv(&run(&scn).unwrap());
        assert_eq!(a, b);
        let mut lines = a.lines();
        assert_eq!(lines.next().unwrap(), CSV_HEADER);
        let body: Vec<&str> = lines.collect();
        let expected = run(&scn).unwrap().samples.len() * 2;
        assert_eq!(body.len(), expected);
        assert!(body[0].starts_with("0,0,"));
        assert_eq!(body[0].split(',').count(), CSV_HEADER.split(',').count());
    }

    #[test]
    fn setpoint_log_lines_parse_as_json() {
        let scn = small_scenario(sharing_tail());
        let traj = run(&scn).unwrap();
        let log = setpoint_log(&traj);
        assert_eq!(log.lines().count(), traj.setpoint_changes.len());
        assert!(!log.is_empty());
        for line in log.lines() {
            let v: serde_json::Value = serde_json::from_str(line).unwrap();
            assert!(v.get("computed_at").is_some());
            assert!(v.get("outcome").is_some());
        }
    }

    #[test]
    fn summary_reports_settling_and_the_setpoint_table() {
        let scn = small_scenario(sharing_tail());
        let traj = run(&scn).unwrap();
        let text = summary(&scn, &traj);
        assert!(text.contains("load-step"), "{text}");
        assert!(text.contains("settled"), "{text}");
        assert!(text.contains("P_rec W (before -> after)"), "{text}");
        assert!(text.contains("within envelope"), "{text}");
        assert!(text.contains("window: disturbance absorbed"), "{text}");
    }

    #[test]
    fn stability_report_confirms_shipped_gains() {
        let scn = small_scenario("");
        let text = stability_report(&scn).unwrap();
        assert!(text.contains("stable: yes"), "{text}");
        assert!(text.contains("storage tracking rates: -1000.0, -1000.0"), "{text}");
    }

    #[test]
    fn envelope_report_covers_both_calibrations() {
        let scn = small_scenario("");
        let traj = run(&scn).unwrap();
        let with = envelope_report(&scn, Some(&traj));
        assert!(with.contains("within integrated envelope: yes"), "{with}");
        let without = envelope_report(&scn, None);
        assert!(without.contains("admissible: yes"), "{without}");
        assert!(without.contains("sustainable: yes"), "{without}");
    }

    #[test]
    fn plot_script_reads_the_tracking_columns() {
        let script = plot_script("trajectory.csv");
        assert!(script.starts_with("#!/usr/bin/env python3"));
        for needle in ["I_b_ref", "I_b", "trajectory.csv", "sst"] {
            assert!(script.contains(needle), "missing {needle}");
        }
    }
}
