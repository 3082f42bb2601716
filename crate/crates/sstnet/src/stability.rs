//! Small-signal analysis of the closed-loop network and storage-voltage
//! envelopes.
//!
//! The analysis model treats the storage loops as already tracking: every
//! DAB load current is pinned to its reference, leaving the rectifier + DAB
//! cascade whose equilibrium and Jacobian Γ are computed here. The storage
//! tracking errors attach underneath as a diagonal block K_p, so the full
//! linearization is block upper-triangular,
//!
//! ```text
//!   [ Γ  P ]           eigenvalues = eig(Γ) ∪ diag(K_p)
//!   [ 0  K ]
//! ```
//!
//! and stability of the coupled system reduces to Re eig(Γ) < 0 plus the
//! (always negative) storage rates −κ_p/(r_o·C_o).
//!
//! The envelope half bounds the storage input voltage between solutions of
//! the scalar comparison fields Φ_min/Φ_max, whose positive roots are found
//! numerically; see `vin_envelope` for why both printed closed forms are
//! reported instead of trusted.

use nalgebra::{Complex, DMatrix, DVector};
use thiserror::Error;

use crate::dynamics::{sst_rhs, RectifierMode, SstInputs, SstState};
use crate::netmodel::{DesdParams, FeederTopology, SetpointSet, SstParams};

/// States per SST in the analysis ordering
/// [i_d, i_q, v_f, v_h, v_l, ξ1, ξ2, ξ3, ξ4].
pub const STATES_PER_SST: usize = 9;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum StabilityError {
    #[error("equilibrium search stalled at residual {residual:.3e} after {iterations} iterations")]
    NoEquilibrium { residual: f64, iterations: usize },
    #[error("Newton step failed: Jacobian is singular at iteration {iteration}")]
    SingularJacobian { iteration: usize },
}

// ---------------------------------------------------------------------------
// Cascade model: the network with storage pinned to its references
// ---------------------------------------------------------------------------

/// Closed-loop network derivative with every DAB load current held at its
/// reference, in fundamental rectifier mode. `z` and `out` are `9n` long.
pub fn cascade_rhs(
    params: &[SstParams],
    topo: &FeederTopology,
    setpoints: &[SetpointSet],
    z: &[f64],
    out: &mut [f64],
) {
    let n = params.len();
    let i_d: Vec<f64> = (0..n).map(|i| z[STATES_PER_SST * i]).collect();
    let i_q: Vec<f64> = (0..n).map(|i| z[STATES_PER_SST * i + 1]).collect();
    let (v_d, v_q) = topo.coupling_voltages(&i_d, &i_q);
    for i in 0..n {
        let o = STATES_PER_SST * i;
        let s = SstState::from_array(z[o..o + STATES_PER_SST].try_into().unwrap());
        let u = SstInputs {
            v_d: v_d[i],
            v_q: v_q[i],
            theta: 0.0,
            omega: topo.omega[i],
            i_dab: setpoints[i].i_dab,
        };
        let (dz, _) = sst_rhs(&s, &u, &params[i], &setpoints[i], RectifierMode::Fundamental);
        out[o..o + STATES_PER_SST].copy_from_slice(&dz);
    }
}

/// RK4 integration of the cascade model; returns the final state.
pub fn simulate_cascade(
    params: &[SstParams],
    topo: &FeederTopology,
    setpoints: &[SetpointSet],
    z0: &[f64],
    dt: f64,
    t_end: f64,
) -> Vec<f64> {
    let dim = z0.len();
    let mut z = z0.to_vec();
    let mut k1 = vec![0.0; dim];
    let mut k2 = vec![0.0; dim];
    let mut k3 = vec![0.0; dim];
    let mut k4 = vec![0.0; dim];
    let mut tmp = vec![0.0; dim];
    let steps = (t_end / dt).round() as usize;
    for _ in 0..steps {
        cascade_rhs(params, topo, setpoints, &z, &mut k1);
        for j in 0..dim {
            tmp[j] = z[j] + 0.5 * dt * k1[j];
        }
        cascade_rhs(params, topo, setpoints, &tmp, &mut k2);
        for j in 0..dim {
            tmp[j] = z[j] + 0.5 * dt * k2[j];
        }
        cascade_rhs(params, topo, setpoints, &tmp, &mut k3);
        for j in 0..dim {
            tmp[j] = z[j] + dt * k3[j];
        }
        cascade_rhs(params, topo, setpoints, &tmp, &mut k4);
        for j in 0..dim {
            z[j] += dt / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
    }
    z
}

// ---------------------------------------------------------------------------
// Equilibrium
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct Equilibrium {
    pub z: Vec<f64>,
    /// ∞-norm of the cascade derivative at `z`.
    pub residual: f64,
    pub iterations: usize,
}

/// Steady-state seed from the setpoint algebra: currents and bus voltages at
/// their references, integrators sized so the PI outputs reproduce the
/// steady duties, v_h from the DC-link power balance
/// v_h·(v_f − v_h) = r_h·v_l·I_dab.
pub fn initial_guess(
    params: &[SstParams],
    topo: &FeederTopology,
    setpoints: &[SetpointSet],
) -> Vec<f64> {
    let n = setpoints.len();
    let mut z = vec![0.0; STATES_PER_SST * n];
    for i in 0..n {
        let p = &params[i];
        let sp = &setpoints[i];
        let d1 = (sp.v_d + p.r_f * sp.i_d - topo.omega[i] * p.l_f * sp.i_q) / sp.v_f;
        let d2 = (sp.v_q + p.r_f * sp.i_q + topo.omega[i] * p.l_f * sp.i_d) / sp.v_f;
        let disc = (sp.v_f * sp.v_f - 4.0 * p.r_h * sp.v_l * sp.i_dab).max(0.0);
        let v_h = 0.5 * (sp.v_f + disc.sqrt());
        // Bridge coupling for the pinned current, on the φ < ½ branch.
        let g = (2.0 * p.f_s * p.l_s * (sp.i_dab / v_h) / p.n_s).clamp(0.0, 0.25);
        let phi = 0.5 * (1.0 - (1.0 - 4.0 * g).sqrt());
        let o = STATES_PER_SST * i;
        z[o] = sp.i_d;
        z[o + 1] = sp.i_q;
        z[o + 2] = sp.v_f;
        z[o + 3] = v_h;
        z[o + 4] = sp.v_l;
        z[o + 5] = sp.i_d / p.k2;
        z[o + 6] = d1 / p.k3;
        z[o + 7] = d2 / p.k6;
        z[o + 8] = phi / p.k8;
    }
    z
}

/// Newton iteration on the cascade derivative, seeded by `initial_guess`.
pub fn find_equilibrium(
    params: &[SstParams],
    topo: &FeederTopology,
    setpoints: &[SetpointSet],
) -> Result<Equilibrium, StabilityError> {
    const TOL: f64 = 1e-9;
    const MAX_ITER: usize = 50;
    let dim = STATES_PER_SST * setpoints.len();
    let mut z = initial_guess(params, topo, setpoints);
    let mut rhs = vec![0.0; dim];
    let mut best = f64::INFINITY;
    for iteration in 0..MAX_ITER {
        cascade_rhs(params, topo, setpoints, &z, &mut rhs);
        let residual = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        best = best.min(residual);
        if residual < TOL {
            return Ok(Equilibrium { z, residual, iterations: iteration });
        }
        let jac = gamma_jacobian(params, topo, setpoints, &z);
        let step = jac
            .lu()
            .solve(&DVector::from_column_slice(&rhs))
            .ok_or(StabilityError::SingularJacobian { iteration })?;
        for j in 0..dim {
            z[j] -= step[j];
        }
    }
    Err(StabilityError::NoEquilibrium { residual: best, iterations: MAX_ITER })
}

// ---------------------------------------------------------------------------
// Linearization
// ---------------------------------------------------------------------------

/// Block upper-triangular linearization of the coupled system at an
/// equilibrium: the cascade Jacobian Γ, the storage coupling columns P, and
/// the diagonal tracking-rate block K_p.
#[derive(Debug, Clone)]
pub struct LinearizedSystem {
    pub gamma: DMatrix<f64>,
    pub p_block: DMatrix<f64>,
    /// Diagonal entries −κ_pi/(r_oi·C_oi), all strictly negative.
    pub k_p: DVector<f64>,
    pub z_star: Vec<f64>,
}

impl LinearizedSystem {
    pub fn n_sst(&self) -> usize {
        self.k_p.len()
    }

    /// The assembled (9n + n) × (9n + n) matrix [[Γ, P], [0, diag(K_p)]].
    pub fn assembled(&self) -> DMatrix<f64> {
        let gn = self.gamma.nrows();
        let n = self.n_sst();
        let mut m = DMatrix::zeros(gn + n, gn + n);
        m.view_mut((0, 0), (gn, gn)).copy_from(&self.gamma);
        m.view_mut((0, gn), (gn, n)).copy_from(&self.p_block);
        for i in 0..n {
            m[(gn + i, gn + i)] = self.k_p[i];
        }
        m
    }
}

/// Central finite-difference Jacobian of the cascade derivative, step
/// 1e−6·(1 + |z_j|) per coordinate.
pub fn gamma_jacobian(
    params: &[SstParams],
    topo: &FeederTopology,
    setpoints: &[SetpointSet],
    z: &[f64],
) -> DMatrix<f64> {
    let dim = z.len();
    let mut jac = DMatrix::zeros(dim, dim);
    let mut zp = z.to_vec();
    let mut fp = vec![0.0; dim];
    let mut fm = vec![0.0; dim];
    for j in 0..dim {
        let h = 1e-6 * (1.0 + z[j].abs());
        zp[j] = z[j] + h;
        cascade_rhs(params, topo, setpoints, &zp, &mut fp);
        zp[j] = z[j] - h;
        cascade_rhs(params, topo, setpoints, &zp, &mut fm);
        zp[j] = z[j];
        for i in 0..dim {
            jac[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    jac
}

/// Assemble the full linearization at an equilibrium of the cascade.
///
/// The storage coupling enters each SST through its low-voltage bus row; the
/// column scaling uses the filter capacitance, and since the block sits
/// strictly above the diagonal, any nonzero scale yields the same spectrum.
pub fn assemble_linearization(
    params: &[SstParams],
    desd: &[DesdParams],
    topo: &FeederTopology,
    setpoints: &[SetpointSet],
    z_star: &[f64],
) -> LinearizedSystem {
    let n = params.len();
    let gamma = gamma_jacobian(params, topo, setpoints, z_star);
    let mut p_block = DMatrix::zeros(STATES_PER_SST * n, n);
    for i in 0..n {
        p_block[(STATES_PER_SST * i + 4, i)] = -1.0 / params[i].c_f;
    }
    let k_p = DVector::from_iterator(n, desd.iter().map(|d| -d.kappa_p / (d.r_o * d.c_o)));
    LinearizedSystem { gamma, p_block, k_p, z_star: z_star.to_vec() }
}

// ---------------------------------------------------------------------------
// Eigenvalue assessment
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct StabilityReport {
    /// Spectrum of the assembled matrix, sorted by real part then imaginary.
    pub eigenvalues: Vec<Complex<f64>>,
    /// Every real part strictly negative.
    pub stable: bool,
    /// Distance of the rightmost eigenvalue from the imaginary axis
    /// (−max Re λ; positive when stable).
    pub margin: f64,
}

/// Classify the spectrum of the assembled linearization.
pub fn assess_stability(matrix: &DMatrix<f64>) -> StabilityReport {
    let eigenvalues = balanced_eigenvalues(matrix);
    let max_re = eigenvalues.iter().fold(f64::NEG_INFINITY, |m, l| m.max(l.re));
    StabilityReport { eigenvalues, stable: max_re < 0.0, margin: -max_re }
}

/// Eigenvalues computed after a balancing pass.
///
/// The cascade Jacobian mixes row scales across five orders of magnitude
/// (current rows carry 1/L_f, integrator rows are O(1)), which degrades the
/// raw QR iteration; balancing by exact powers of two equalizes row and
/// column norms without any rounding, so the spectrum is unchanged.
pub fn balanced_eigenvalues(matrix: &DMatrix<f64>) -> Vec<Complex<f64>> {
    let mut a = matrix.clone();
    balance_in_place(&mut a);
    let mut eig: Vec<Complex<f64>> = a.complex_eigenvalues().iter().copied().collect();
    eig.sort_by(|p, q| {
        p.re.partial_cmp(&q.re).unwrap().then(p.im.partial_cmp(&q.im).unwrap())
    });
    eig
}

/// Iterative diagonal similarity scaling (radix-2) until every row/column
/// norm pair is within a factor ~2 of balance.
fn balance_in_place(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    const RADIX: f64 = 2.0;
    const SQ: f64 = RADIX * RADIX;
    loop {
        let mut done = true;
        for i in 0..n {
            let mut c: f64 = (0..n).filter(|&j| j != i).map(|j| a[(j, i)].abs()).sum();
            let r: f64 = (0..n).filter(|&j| j != i).map(|j| a[(i, j)].abs()).sum();
            if c == 0.0 || r == 0.0 {
                continue;
            }
            let s = c + r;
            let mut f = 1.0;
            let mut g = r / RADIX;
            while c < g {
                f *= RADIX;
                c *= SQ;
            }
            g = r * RADIX;
            while c > g {
                f /= RADIX;
                c /= SQ;
            }
            if (c + r) / f < 0.95 * s {
                done = false;
                let g = 1.0 / f;
                for j in 0..n {
                    a[(i, j)] *= g;
                }
                for j in 0..n {
                    a[(j, i)] *= f;
                }
            }
        }
        if done {
            return;
        }
    }
}

/// Greatest distance between the assembled spectrum and the union
/// eig(Γ) ∪ diag(K_p), under nearest matching. The block-triangular
/// structure makes this zero up to eigensolver accuracy.
pub fn eigenvalue_union_gap(sys: &LinearizedSystem) -> f64 {
    let assembled = balanced_eigenvalues(&sys.assembled());
    let mut expected = balanced_eigenvalues(&sys.gamma);
    expected.extend(sys.k_p.iter().map(|&k| Complex::new(k, 0.0)));
    nearest_match_gap(&assembled, &expected)
}

fn nearest_match_gap(a: &[Complex<f64>], b: &[Complex<f64>]) -> f64 {
    assert_eq!(a.len(), b.len());
    let mut used = vec![false; b.len()];
    // Match large-magnitude eigenvalues first; they are the best separated.
    let mut order: Vec<usize> = (0..a.len()).collect();
    order.sort_by(|&p, &q| b[q].norm().partial_cmp(&b[p].norm()).unwrap());
    let mut worst = 0.0f64;
    for &ia in &order {
        let la = a[ia];
        let mut best = f64::INFINITY;
        let mut jbest = usize::MAX;
        for (jb, lb) in b.iter().enumerate() {
            if used[jb] {
                continue;
            }
            let d = (la - lb).norm();
            if d < best {
                best = d;
                jbest = jb;
            }
        }
        used[jbest] = true;
        worst = worst.max(best);
    }
    worst
}

// ---------------------------------------------------------------------------
// Storage input-voltage envelopes
// ---------------------------------------------------------------------------

/// Lower comparison field for the storage input voltage: worst-case battery
/// EMF with maximal power draw.
pub fn phi_min(v: f64, p_max: f64, d: &DesdParams) -> f64 {
    (d.v_b_min - v) / (d.r_in * d.c_in) - p_max / (d.c_in * v)
}

/// Upper comparison field: best-case EMF with maximal power injection.
pub fn phi_max(v: f64, p_max: f64, d: &DesdParams) -> f64 {
    (d.v_b_max - v) / (d.r_in * d.c_in) + p_max / (d.c_in * v)
}

/// Envelope analysis of the storage input voltage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VinEnvelope {
    pub p_max: f64,
    /// Unstable low root of Φ_min: starts below it collapse to zero.
    pub v_min_lo: f64,
    /// Stable root of Φ_min: the lower envelope settles here.
    pub v_min_hi: f64,
    /// Stable root of Φ_max: the upper envelope settles here.
    pub v_max_hi: f64,
    /// Φ_min has real positive roots (the power bound is sustainable).
    pub feasible: bool,
    /// The queried initial voltage starts above the collapse threshold.
    pub admissible: bool,
    /// Closed forms [v_min_lo, v_min_hi, v_max_hi] with the resistance
    /// radicand — what the balance quadratic v² − v_b·v ± r_in·p_max = 0
    /// implies dimensionally.
    pub closed_form_resistance: [f64; 3],
    /// The same three values with a capacitance radicand and the minimum EMF
    /// inside v_max_hi, reported side by side because published variants of
    /// these root formulas disagree with the quadratic; the numeric roots
    /// above are authoritative.
    pub closed_form_capacitance: [f64; 3],
}

/// Bisection root of v² − b·v + c = 0 on [lo, hi] (sign change assumed).
fn quad_bisect(b: f64, c: f64, mut lo: f64, mut hi: f64) -> f64 {
    let g = |v: f64| v * v - b * v + c;
    let mut flo = g(lo);
    if flo == 0.0 {
        return lo;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let fmid = g(mid);
        if fmid == 0.0 {
            return mid;
        }
        if (flo > 0.0) == (fmid > 0.0) {
            lo = mid;
            flo = fmid;
        } else {
            hi = mid;
        }
        if (hi - lo) <= f64::EPSILON * hi.abs().max(1.0) {
            break;
        }
    }
    0.5 * (lo + hi)
}

/// Solve the comparison-field roots numerically and classify feasibility and
/// admissibility of a starting voltage.
///
/// Φ_min's positive roots coincide with those of v² − v_b_min·v + r_in·p_max
/// (multiply through by −r_in·C_in·v), which extends continuously to v = 0;
/// the roots are bisected on each side of the vertex rather than taken from
/// a printed closed form, and both closed-form variants are reported for
/// comparison.
pub fn vin_envelope(d: &DesdParams, p_max: f64, v_in0: f64) -> VinEnvelope {
    let b_min = d.v_b_min;
    let b_max = d.v_b_max;
    let c = d.r_in * p_max;
    let feasible = b_min * b_min - 4.0 * c >= 0.0;
    let (v_min_lo, v_min_hi) = if feasible {
        (quad_bisect(b_min, c, 0.0, 0.5 * b_min), quad_bisect(b_min, c, 0.5 * b_min, b_min))
    } else {
        (f64::NAN, f64::NAN)
    };
    // Positive root of v² − v_b_max·v − r_in·p_max = 0 lies above v_b_max.
    let hi = b_max + c / b_max + 1.0;
    let v_max_hi = quad_bisect(b_max, -c, b_max, hi);

    let closed = |radicand_scale: f64, vmax_base: f64| -> [f64; 3] {
        let disc_min = b_min * b_min - 4.0 * radicand_scale * p_max;
        let disc_max = vmax_base * vmax_base + 4.0 * radicand_scale * p_max;
        [
            0.5 * (b_min - disc_min.max(0.0).sqrt()),
            0.5 * (b_min + disc_min.max(0.0).sqrt()),
            0.5 * (vmax_base + disc_max.sqrt()),
        ]
    };
    VinEnvelope {
        p_max,
        v_min_lo,
        v_min_hi,
        v_max_hi,
        feasible,
        admissible: feasible && v_in0 > v_min_lo,
        closed_form_resistance: closed(d.r_in, b_max),
        closed_form_capacitance: closed(d.c_in, b_min),
    }
}

/// Integrated comparison bounds: two scalar states advanced with the same
/// step as the simulation they sandwich.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvelopePair {
    pub v_min: f64,
    pub v_max: f64,
}

impl EnvelopePair {
    /// Both envelopes start at the measured initial voltage.
    pub fn new(v_in0: f64) -> Self {
        Self { v_min: v_in0, v_max: v_in0 }
    }

    /// One RK4 step of both envelope fields.
    pub fn step(&mut self, dt: f64, p_max: f64, d: &DesdParams) {
        self.v_min = rk4_scalar(self.v_min, dt, |v| phi_min(v, p_max, d));
        self.v_max = rk4_scalar(self.v_max, dt, |v| phi_max(v, p_max, d));
    }

    pub fn contains(&self, v_in: f64) -> bool {
        self.v_min <= v_in && v_in <= self.v_max
    }
}

fn rk4_scalar(v: f64, dt: f64, f: impl Fn(f64) -> f64) -> f64 {
    let k1 = f(v);
    let k2 = f(v + 0.5 * dt * k1);
    let k3 = f(v + 0.5 * dt * k2);
    let k4 = f(v + dt * k3);
    v + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
}

/// Instantaneous power signal of one storage loop,
/// p = v_o·[(1−κ_p)(v_o − v_l)/r_o + κ_p·I_b^r + r_o·C_o·İ_b^r + C_o·φ_vl];
/// its running maximum calibrates the envelope bound p_max.
pub fn p_signal(
    v_o: f64,
    v_l: f64,
    i_b_ref: f64,
    di_b_ref: f64,
    phi_vl: f64,
    d: &DesdParams,
) -> f64 {
    v_o * ((1.0 - d.kappa_p) * (v_o - v_l) / d.r_o
        + d.kappa_p * i_b_ref
        + d.r_o * d.c_o * di_b_ref
        + d.c_o * phi_vl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::controller;
    use crate::dynamics::DesdState;
    use crate::netmodel::{CouplingMode, LineImpedance};
    use crate::powershare::solve_operating_point;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn feeder(n: usize) -> FeederTopology {
        let z = [
            LineImpedance { r: 0.653, x: 0.651 },
            LineImpedance { r: 0.438, x: 0.437 },
            LineImpedance { r: 8.16, x: 8.14 },
            LineImpedance { r: 9.49, x: 9.47 },
            LineImpedance { r: 7.53, x: 7.51 },
            LineImpedance { r: 0.0037, x: 0.0027 },
            LineImpedance { r: 0.906, x: 0.481 },
            LineImpedance { r: 25.52, x: 13.546 },
            LineImpedance { r: 7.284, x: 13.865 },
        ];
        FeederTopology {
            v_g_d: 1000.0,
            v_g_q: 0.0,
            omega: vec![2.0 * std::f64::consts::PI * 60.0; n],
            theta0: vec![0.0; n],
            lines: z[..n].to_vec(),
            coupling_mode: CouplingMode::AsWritten,
        }
    }

    fn system(n: usize, p_each: f64) -> (Vec<SstParams>, FeederTopology, Vec<SetpointSet>) {
        powered_system(&vec![p_each; n])
    }

    fn powered_system(p: &[f64]) -> (Vec<SstParams>, FeederTopology, Vec<SetpointSet>) {
        let n = p.len();
        let params = vec![SstParams::default(); n];
        let topo = feeder(n);
        let sps = solve_operating_point(
            &params,
            &topo,
            p,
            &vec![30_000.0; n],
            &vec![0.0; n],
            &vec![3_800.0; n],
            &vec![200.0; n],
        )
        .unwrap();
        (params, topo, sps)
    }

    /// Nine-SST loading shaped like the shipped sharing preset: light
    /// scheduled feeder draw everywhere except the stepped unit at bus 4.
    fn preset_powers() -> Vec<f64> {
        let mut p = vec![400.0; 9];
        p[4] = 2_400.4;
        p
    }

    #[test]
    fn rest_network_is_an_exact_equilibrium() {
        let params = vec![SstParams::default()];
        let mut topo = feeder(1);
        topo.v_g_d = 0.0;
        let sps = solve_operating_point(
            &params,
            &topo,
            &[0.0],
            &[1e4],
            &[0.0],
            &[3_800.0],
            &[200.0],
        )
        .unwrap();
        let z = initial_guess(&params, &topo, &sps);
        let mut rhs = vec![0.0; 9];
        cascade_rhs(&params, &topo, &sps, &z, &mut rhs);
        let res = rhs.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        assert!(res < 1e-12, "residual {res}");
    }

    #[test]
    fn consistent_setpoints_seed_newton_exactly() {
        let (params, topo, sps) = system(1, 4_000.0);
        let eq = find_equilibrium(&params, &topo, &sps).unwrap();
        assert!(eq.residual < 1e-9);
        assert!(eq.iterations <= 3, "took {} iterations", eq.iterations);
        let guess = initial_guess(&params, &topo, &sps);
        for (a, b) in eq.z.iter().zip(&guess) {
            assert!((a - b).abs() < 1e-6 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn equilibrium_does_not_drift_under_simulation() {
        let (params, topo, sps) = system(1, 4_000.0);
        let eq = find_equilibrium(&params, &topo, &sps).unwrap();
        let z = simulate_cascade(&params, &topo, &sps, &eq.z, 1e-5, 0.1);
        for (a, b) in z.iter().zip(&eq.z) {
            assert!((a - b).abs() < 1e-6, "drifted {} from {}", a, b);
        }
    }

    #[test]
    fn nine_sst_network_converges_quickly() {
        let (params, topo, sps) = powered_system(&preset_powers());
        let eq = find_equilibrium(&params, &topo, &sps).unwrap();
        assert!(eq.residual < 1e-9);
        assert!(eq.iterations <= 20);
    }

    #[test]
    fn linearization_dimensions() {
        let (params, topo, sps) = system(1, 4_000.0);
        let desd = vec![DesdParams::default()];
        let eq = find_equilibrium(&params, &topo, &sps).unwrap();
        let sys = assemble_linearization(&params, &desd, &topo, &sps, &eq.z);
        assert_eq!(sys.gamma.nrows(), 9);
        assert_eq!(sys.gamma.ncols(), 9);
        assert_eq!(sys.assembled().nrows(), 10);
        assert!(sys.k_p[0] < 0.0);
        assert_eq!(sys.p_block[(4, 0)], -1.0 / params[0].c_f);
    }

    #[test]
    fn union_structure_holds_for_random_blocks() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let n = 3;
            let gamma =
                DMatrix::from_fn(9, 9, |i, j| rng.gen_range(-1.0..1.0) - if i == j { 5.0 } else { 0.0 });
            let p_block = DMatrix::from_fn(9, n, |_, _| rng.gen_range(-1.0..1.0));
            let k_p = DVector::from_fn(n, |_, _| -rng.gen_range(0.5..2.0) * 1e3);
            let sys = LinearizedSystem { gamma, p_block, k_p, z_star: vec![] };
            let gap = eigenvalue_union_gap(&sys);
            assert!(gap < 1e-8, "gap {gap}");
        }
    }

    #[test]
    fn union_structure_holds_for_the_real_cascade() {
        let (params, topo, sps) = system(2, 4_000.0);
        let desd = vec![DesdParams::default(); 2];
        let eq = find_equilibrium(&params, &topo, &sps).unwrap();
        let sys = assemble_linearization(&params, &desd, &topo, &sps, &eq.z);
        let gap = eigenvalue_union_gap(&sys);
        assert!(gap < 1e-8, "gap {gap}");
    }

    /// The Jacobian must reproduce the nonlinear model's short-time response:
    /// one RK4 step of the cascade from a perturbed equilibrium is compared
    /// against the degree-4 Taylor action of Γ (what RK4 computes exactly on
    /// a linear system).
    #[test]
    fn jacobian_matches_nonlinear_short_time_response() {
        let (params, topo, sps) = system(1, 4_000.0);
        let eq = find_equilibrium(&params, &topo, &sps).unwrap();
        let gamma = gamma_jacobian(&params, &topo, &sps, &eq.z);
        let h = 1e-6;
        let hg = &gamma * h;
        let mut series = DMatrix::identity(9, 9);
        let mut term = DMatrix::identity(9, 9);
        for k in 1..=4 {
            term = &term * &hg / k as f64;
            series += &term;
        }
        for j in [0usize, 2, 3, 4, 8] {
            let eps = 1e-4 * (1.0 + eq.z[j].abs());
            let mut zp = eq.z.clone();
            zp[j] += eps;
            let mut zm = eq.z.clone();
            zm[j] -= eps;
            let fp = simulate_cascade(&params, &topo, &sps, &zp, h, h);
            let fm = simulate_cascade(&params, &topo, &sps, &zm, h, h);
            let measured: Vec<f64> =
                (0..9).map(|i| (fp[i] - fm[i]) / (2.0 * eps)).collect();
            let col_max = (0..9).map(|i| series[(i, j)].abs()).fold(0.0f64, f64::max);
            for i in 0..9 {
                let predicted = series[(i, j)];
                if predicted.abs() > 1e-3 * col_max {
                    assert!(
                        (measured[i] - predicted).abs() < 1e-4 * predicted.abs(),
                        "entry ({i},{j}): measured {} predicted {}",
                        measured[i],
                        predicted
                    );
                }
            }
        }
    }

    #[test]
    fn report_classifies_diagonal_spectra() {
        let stable = assess_stability(&DMatrix::from_diagonal(&DVector::from_vec(vec![
            -1.0, -2.0,
        ])));
        assert!(stable.stable);
        assert!((stable.margin - 1.0).abs() < 1e-12);
        let unstable = assess_stability(&DMatrix::from_diagonal(&DVector::from_vec(vec![
            -1.0, 0.5,
        ])));
        assert!(!unstable.stable);
        assert!((unstable.margin + 0.5).abs() < 1e-12);
    }

    #[test]
    fn shipped_gains_are_stable_with_margin() {
        let (params, topo, sps) = system(1, 4_000.0);
        let desd = vec![DesdParams::default()];
        let eq = find_equilibrium(&params, &topo, &sps).unwrap();
        let sys = assemble_linearization(&params, &desd, &topo, &sps, &eq.z);
        let report = assess_stability(&sys.assembled());
        assert!(report.stable, "margin {}", report.margin);
        assert!(report.margin > 10.0, "slowest mode only {} 1/s", report.margin);
    }

    #[test]
    fn shipped_gains_hold_margin_across_the_network() {
        let (params, topo, sps) = powered_system(&preset_powers());
        let desd = vec![DesdParams::default(); 9];
        let eq = find_equilibrium(&params, &topo, &sps).unwrap();
        let sys = assemble_linearization(&params, &desd, &topo, &sps, &eq.z);
        let report = assess_stability(&sys.assembled());
        assert!(report.stable, "margin {}", report.margin);
        assert!(report.margin > 10.0, "slowest mode only {} 1/s", report.margin);
    }

    #[test]
    fn flipped_bus_gain_destabilizes() {
        let mut params = vec![SstParams::default()];
        params[0].k1 = -params[0].k1;
        let topo = feeder(1);
        let sps = solve_operating_point(
            &params,
            &topo,
            &[4_000.0],
            &[30_000.0],
            &[0.0],
            &[3_800.0],
            &[200.0],
        )
        .unwrap();
        let desd = vec![DesdParams::default()];
        let z = initial_guess(&params, &topo, &sps);
        let sys = assemble_linearization(&params, &desd, &topo, &sps, &z);
        let report = assess_stability(&sys.assembled());
        assert!(!report.stable, "margin {}", report.margin);
    }

    #[test]
    fn storage_rates_appear_verbatim_in_the_k_block() {
        let desd = vec![DesdParams::default(); 3];
        let sys = LinearizedSystem {
            gamma: DMatrix::zeros(0, 0),
            p_block: DMatrix::zeros(0, 3),
            k_p: DVector::from_iterator(
                3,
                desd.iter().map(|d| -d.kappa_p / (d.r_o * d.c_o)),
            ),
            z_star: vec![],
        };
        let eig = balanced_eigenvalues(&sys.assembled());
        for l in eig {
            assert!((l.re + 1000.0).abs() < 1e-12 && l.im == 0.0);
        }
    }

    #[test]
    fn zero_power_envelope_roots_are_the_emf_bounds() {
        let d = DesdParams::default();
        let env = vin_envelope(&d, 0.0, 350.0);
        assert!(env.feasible);
        assert_eq!(env.v_min_lo, 0.0);
        assert!((env.v_min_hi - d.v_b_min).abs() < 1e-9);
        assert!((env.v_max_hi - d.v_b_max).abs() < 1e-9);
        assert!(env.admissible);
    }

    #[test]
    fn envelope_roots_match_the_balance_quadratic() {
        let d = DesdParams {
            r_in: 0.1,
            c_in: 1e-3,
            v_b_min: 300.0,
            v_b_max: 400.0,
            ..DesdParams::default()
        };
        let env = vin_envelope(&d, 1e4, 350.0);
        // Roots of v² − 300·v + 1000 = 0.
        let disc = (300.0f64 * 300.0 - 4.0 * 1000.0).sqrt();
        assert!((env.v_min_lo - 0.5 * (300.0 - disc)).abs() < 1e-9);
        assert!((env.v_min_hi - 0.5 * (300.0 + disc)).abs() < 1e-9);
        assert!((env.v_min_lo - 3.37).abs() < 0.05);
        assert!((env.v_min_hi - 296.63).abs() < 0.05);
        let disc_max = (400.0f64 * 400.0 + 4.0 * 1000.0).sqrt();
        assert!((env.v_max_hi - 0.5 * (400.0 + disc_max)).abs() < 1e-9);
        assert_eq!(env.closed_form_resistance[0], env.closed_form_resistance[0]);
        assert!((env.closed_form_resistance[0] - env.v_min_lo).abs() < 1e-9);
        assert!((env.closed_form_resistance[2] - env.v_max_hi).abs() < 1e-9);
        // The capacitance variant differs measurably; it is reported, not used.
        assert!((env.closed_form_capacitance[0] - env.v_min_lo).abs() > 1e-3);
    }

    #[test]
    fn unsustainable_power_is_infeasible() {
        let d = DesdParams::default();
        // Feasibility boundary: p_max = v_b_min² / (4 r_in).
        let p_limit = d.v_b_min * d.v_b_min / (4.0 * d.r_in);
        let env = vin_envelope(&d, 2.0 * p_limit, 350.0);
        assert!(!env.feasible);
        assert!(!env.admissible);
    }

    #[test]
    fn admissibility_needs_clearance_above_the_collapse_root() {
        let d = DesdParams::default();
        let env = vin_envelope(&d, 1e4, 350.0);
        assert!(env.admissible);
        let below = vin_envelope(&d, 1e4, 0.5 * env.v_min_lo);
        assert!(!below.admissible);
    }

    #[test]
    fn envelopes_settle_on_their_roots() {
        let d = DesdParams::default();
        let p_max = 1e4;
        let env = vin_envelope(&d, p_max, 350.0);
        let mut pair = EnvelopePair::new(350.0);
        // Rates are ~1/(r_in·c_in); integrate well past ten time constants.
        let dt = 1e-6;
        for _ in 0..5_000 {
            pair.step(dt, p_max, &d);
        }
        assert!((pair.v_min - env.v_min_hi).abs() < 1e-3 * env.v_min_hi);
        assert!((pair.v_max - env.v_max_hi).abs() < 1e-3 * env.v_max_hi);
    }

    #[test]
    fn power_signal_trivial_zeros() {
        let d = DesdParams::default();
        assert_eq!(p_signal(0.0, 200.0, 5.0, 1.0, 3.0, &d), 0.0);
        let unity = DesdParams { kappa_p: 1.0, ..d };
        assert_eq!(p_signal(210.0, 200.0, 0.0, 0.0, 0.0, &unity), 0.0);
    }

    #[test]
    fn power_signal_equals_bus_power_through_the_control_law() {
        let d = DesdParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let state = DesdState {
                v_o: rng.gen_range(150.0..250.0),
                v_in: rng.gen_range(300.0..400.0),
            };
            let v_l = rng.gen_range(180.0..220.0);
            let i_b_ref = rng.gen_range(-30.0..30.0);
            let di_b_ref = rng.gen_range(-100.0..100.0);
            let phi_vl = rng.gen_range(-50.0..50.0);
            let u_b = controller::control_law(
                &state,
                v_l,
                i_b_ref,
                di_b_ref,
                phi_vl,
                &d,
                controller::default_vin_guard(&d),
            )
            .unwrap();
            let p = p_signal(state.v_o, v_l, i_b_ref, di_b_ref, phi_vl, &d);
            assert!((p - state.v_o * state.v_in * u_b).abs() < 1e-9 * p.abs().max(1.0));
        }
    }
}
