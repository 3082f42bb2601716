//! Round trip between the storage duty u_b and the DAB phase-shift ratio φ_b.
//!
//! The averaged storage converter transfers u_b = n_b·φ_b(1−φ_b)/(2·f_b·L_b),
//! which the controller inverts over the feasible branch φ_b ∈ [−1, 1/2].
//! This walks the whole feasible duty interval, reports the worst round-trip
//! error, and shows what happens to duties outside the interval.

use sstnet::controller::{duty_from_phase_shift, duty_range, phase_shift_from_duty};
use sstnet::DesdParams;

fn main() {
    let p = DesdParams::default();
    let (lo, hi) = duty_range(&p);
    println!("feasible duty interval: [{lo}, {hi}]  (ratio -8:1)");
    println!(
        "endpoints map to the branch ends: u={lo} -> phi={}, u={hi} -> phi={}",
        phase_shift_from_duty(lo, &p).value,
        phase_shift_from_duty(hi, &p).value
    );
    println!();

    let samples = 10_000;
    let mut worst = 0.0f64;
    for k in 0..=samples {
        let u = lo + (hi - lo) * k as f64 / samples as f64;
        let phi = phase_shift_from_duty(u, &p);
        assert!(!phi.saturated, "in-range duty must not clamp");
        let back = duty_from_phase_shift(phi.value, &p);
        worst = worst.max((back - u).abs());
    }
    println!("worst |u_b - forward(inverse(u_b))| over {samples} in-range samples: {worst:.3e}");
    println!();

    println!("{:>12} {:>12} {:>10} {:>10}", "duty in", "phi_b", "clamped?", "duty out");
    for u in [1.5 * lo, lo, 0.25 * lo, 0.0, 0.5 * hi, hi, 2.0 * hi] {
        let phi = phase_shift_from_duty(u, &p);
        let back = duty_from_phase_shift(phi.value, &p);
        println!(
            "{:>12.3} {:>12.6} {:>10} {:>10.3}",
            u,
            phi.value,
            if phi.saturated { "yes" } else { "no" },
            back
        );
    }
    println!();
    println!("out-of-range duties clamp to the nearest feasible endpoint and flag it;");
    println!("the inverse always lands on the monotone branch phi_b <= 1/2.");
}
