//! Comparison envelopes for the storage input voltage v_in.
//!
//! The battery-side voltage is sandwiched between two scalar comparison
//! systems: Φ_min drains at the worst-case power bound from the weakest EMF,
//! Φ_max injects it at the strongest. Their equilibria bound where v_in can
//! settle; the unstable low root of Φ_min is the collapse threshold below
//! which no recovery is possible.

use sstnet::stability::{phi_max, phi_min, vin_envelope, EnvelopePair};
use sstnet::DesdParams;

fn main() {
    let d = DesdParams::default();
    let v_in0 = 350.0;
    let edge = d.v_b_min * d.v_b_min / (4.0 * d.r_in);
    println!(
        "battery EMF window [{}, {}] V, series resistance {} ohm",
        d.v_b_min, d.v_b_max, d.r_in
    );
    println!("sustainable-power edge v_b_min^2/(4 r_in) = {edge} W");
    println!();
    println!(
        "{:>10} {:>10} {:>10} {:>10} {:>9} {:>11}",
        "p_max [W]", "v_min_lo", "v_min_hi", "v_max_hi", "feasible", "admissible"
    );
    for p_max in [5_000.0, 20_000.0, 100_000.0, edge, 1.05 * edge] {
        let env = vin_envelope(&d, p_max, v_in0);
        println!(
            "{:>10.0} {:>10.3} {:>10.3} {:>10.3} {:>9} {:>11}",
            p_max,
            env.v_min_lo,
            env.v_min_hi,
            env.v_max_hi,
            env.feasible,
            env.admissible
        );
    }
    println!();

    // The roots are bisected from the comparison fields directly; both printed
    // closed-form variants are shown by the report module side by side because
    // they disagree in the radicand scale — the numeric roots are the anchor.
    let p_max = 20_000.0;
    let env = vin_envelope(&d, p_max, v_in0);
    println!("residuals of the bisected roots in the comparison fields (p_max = {p_max} W):");
    println!("  phi_min(v_min_lo) = {:+.3e}", phi_min(env.v_min_lo, p_max, &d));
    println!("  phi_min(v_min_hi) = {:+.3e}", phi_min(env.v_min_hi, p_max, &d));
    println!("  phi_max(v_max_hi) = {:+.3e}", phi_max(env.v_max_hi, p_max, &d));
    println!();

    // Integrate the pair the way the simulator audits a run: same step size,
    // both envelopes started at the measured initial voltage.
    let mut pair = EnvelopePair::new(v_in0);
    let dt = 1.0e-5;
    let t_end = 0.2;
    for _ in 0..(t_end / dt) as usize {
        pair.step(dt, p_max, &d);
    }
    println!("after {t_end} s of integration from v_in(0) = {v_in0} V:");
    println!("  lower envelope {:.6} V -> settles at v_min_hi {:.6} V", pair.v_min, env.v_min_hi);
    println!("  upper envelope {:.6} V -> settles at v_max_hi {:.6} V", pair.v_max, env.v_max_hi);
    println!(
        "  any simulated v_in starting at {v_in0} V stays inside [{:.3}, {:.3}] V",
        pair.v_min, pair.v_max
    );
}
