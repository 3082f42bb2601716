//! Full vs fundamental rectifier fidelity: the double-frequency bus ripple.
//!
//! A single-phase rectifier carries a power pulsation at twice the grid
//! frequency. The full mode keeps it, so a small 2ω component appears on the
//! DC buses; the fundamental mode averages it away. Everything else about the
//! operating point matches, which this run verifies by comparing windowed
//! means and peak-to-peak excursions of both modes on the same scenario.

use sstnet::dynamics::RectifierMode;
use sstnet::scenario::parse;
use sstnet::simengine::run;

const CASE: &str = r#"
name = "ripple-demo"

[sim]
t_end = 0.1
dt = 1e-5
seed = 3
sample_every = 2

[grid]
v_d = 1000.0
frequency = 60.0

[[sst]]
line = { r = 0.653, x = 0.651 }
[sst.setpoint]
i_dab = 2.0
[sst.sources]
i_pv = 7.0
i_l = 5.0
"#;

struct Window {
    mean_v_f: f64,
    pkpk_v_f: f64,
    mean_v_l: f64,
    pkpk_v_l: f64,
}

fn windowed(mode: RectifierMode) -> Window {
    let mut scn = parse(CASE).expect("scenario parses");
    scn.sim.mode = mode;
    let traj = run(&scn).expect("run completes");
    // Skip the first half: the full mode needs a few grid cycles to reach its
    // periodic steady state.
    let tail: Vec<_> = traj.samples.iter().filter(|s| s.t >= 0.05).collect();
    let stats = |get: fn(&sstnet::simengine::Sample) -> f64| {
        let (mut lo, mut hi, mut sum) = (f64::INFINITY, f64::NEG_INFINITY, 0.0);
        for s in &tail {
            let v = get(s);
            lo = lo.min(v);
            hi = hi.max(v);
            sum += v;
        }
        (sum / tail.len() as f64, hi - lo)
    };
    let (mean_v_f, pkpk_v_f) = stats(|s| s.sst[0].state.v_f);
    let (mean_v_l, pkpk_v_l) = stats(|s| s.sst[0].state.v_l);
    Window { mean_v_f, pkpk_v_f, mean_v_l, pkpk_v_l }
}

fn main() {
    let full = windowed(RectifierMode::Full);
    let fund = windowed(RectifierMode::Fundamental);

    println!("one SST, 60 Hz grid — windowed over the second half of a 0.1 s run");
    println!();
    println!("{:>22} {:>16} {:>16}", "", "full", "fundamental");
    println!("{:>22} {:>16.6} {:>16.6}", "v_f mean [V]", full.mean_v_f, fund.mean_v_f);
    println!("{:>22} {:>16.3e} {:>16.3e}", "v_f peak-to-peak [V]", full.pkpk_v_f, fund.pkpk_v_f);
    println!("{:>22} {:>16.6} {:>16.6}", "v_l mean [V]", full.mean_v_l, fund.mean_v_l);
    println!("{:>22} {:>16.3e} {:>16.3e}", "v_l peak-to-peak [V]", full.pkpk_v_l, fund.pkpk_v_l);
    println!();

    let rel_f = full.pkpk_v_f / full.mean_v_f;
    let rel_l = full.pkpk_v_l / full.mean_v_l;
    println!("full-mode ripple relative to the mean: v_f {rel_f:.2e}, v_l {rel_l:.2e}");
    if fund.pkpk_v_f == 0.0 && fund.pkpk_v_l == 0.0 {
        println!("fundamental mode is ripple-free to the last bit at this operating point");
    } else {
        println!(
            "fundamental-mode residual excursions: v_f {:.1e} V, v_l {:.1e} V",
            fund.pkpk_v_f, fund.pkpk_v_l
        );
    }
    println!(
        "means agree across modes: v_f within {:.2e}, v_l within {:.2e} (relative)",
        (full.mean_v_f - fund.mean_v_f).abs() / fund.mean_v_f,
        (full.mean_v_l - fund.mean_v_l).abs() / fund.mean_v_l
    );
    println!();
    println!("the 2ω component rides on the rectifier bus and shrinks through the");
    println!("cascade; the fundamental mode holds the averaged operating point.");
}
