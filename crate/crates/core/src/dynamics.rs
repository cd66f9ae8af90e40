//! Physical dynamics: the Newtonian vector field, a Dormand–Prince
//! integrator, the first-integral profile and the generalized-solution
//! verifier.

use std::fmt::Write as _;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::FieldConfig;
use crate::geometry::{ComplexPoint, MINUS_ONE, PLUS_ONE};
use crate::loopspace::{DiscreteLoop, PhysicalLoop, COLLISION_CLEARANCE};
use crate::solver::OrbitRecord;
use crate::spectral::CumulativeIntegral;

type C = Complex64;

/// `q̈ = 𝔅 i q̇ − (1−μ)(q+1)/|q+1|³ − μ(q−1)/|q−1|³ − ∇E_t(q)`.
pub fn newtonian_rhs(t: f64, q: ComplexPoint, v: ComplexPoint, cfg: &FieldConfig) -> Result<ComplexPoint> {
    if q == MINUS_ONE || q == PLUS_ONE {
        return Err(Error::Singularity { re: q.re, im: q.im });
    }
    let mut a = C::i() * v * cfg.b(q) - cfg.grad_e(t, q);
    if cfg.mu < 1.0 {
        let d = q - MINUS_ONE;
        a -= d * ((1.0 - cfg.mu) / d.norm().powi(3));
    }
    if cfg.mu > 0.0 {
        let d = q - PLUS_ONE;
        a -= d * (cfg.mu / d.norm().powi(3));
    }
    Ok(a)
}

/// `½|v|² + U(q) + E_t(q)`.
pub fn energy(t: f64, q: ComplexPoint, v: ComplexPoint, cfg: &FieldConfig) -> f64 {
    0.5 * v.norm_sqr() + cfg.potential(q) + cfg.e(t, q)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Completed,
    CollisionProximity,
    StepFailure,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub positions: Vec<ComplexPoint>,
    pub velocities: Vec<ComplexPoint>,
    pub terminated: Termination,
}

impl Trajectory {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,q_re,q_im,v_re,v_im\n");
        for ((t, q), v) in self.times.iter().zip(&self.positions).zip(&self.velocities) {
            let _ = writeln!(s, "{t},{},{},{},{}", q.re, q.im, v.re, v.im);
        }
        s
    }
}

#[derive(Debug, Clone)]
pub struct IntegrateOptions {
    /// Relative and absolute per-step tolerance.
    pub tol: f64,
    pub clearance: f64,
    pub min_step: f64,
    pub max_steps: usize,
}

impl Default for IntegrateOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            clearance: COLLISION_CLEARANCE,
            min_step: 1e-14,
            max_steps: 1_000_000,
        }
    }
}

const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const CN: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];
const D: [f64; 7] = [
    -12715105075.0 / 11282082432.0,
    0.0,
    87487479700.0 / 32700410799.0,
    -10690763975.0 / 1880347072.0,
    701980252875.0 / 199316789632.0,
    -1453857185.0 / 822651844.0,
    69997945.0 / 29380423.0,
];

type State = [f64; 4];

fn pack(q: C, v: C) -> State {
    [q.re, q.im, v.re, v.im]
}

fn unpack(y: &State) -> (C, C) {
    (C::new(y[0], y[1]), C::new(y[2], y[3]))
}

fn field(t: f64, y: &State, cfg: &FieldConfig) -> Result<State> {
    let (q, v) = unpack(y);
    let a = newtonian_rhs(t, q, v, cfg)?;
    Ok([v.re, v.im, a.re, a.im])
}

fn near_primary(q: C, clearance: f64) -> bool {
    (q - PLUS_ONE).norm() < clearance || (q - MINUS_ONE).norm() < clearance
}

/// Integrates from `t0` to `t1` (either direction), recording accepted steps.
pub fn integrate(
    q0: ComplexPoint,
    v0: ComplexPoint,
    t0: f64,
    t1: f64,
    cfg: &FieldConfig,
    tol: f64,
) -> Result<Trajectory> {
    let opts = IntegrateOptions {
        tol,
        ..Default::default()
    };
    integrate_with(q0, v0, t0, t1, cfg, &opts, None)
}

/// As [`integrate`], but records the dense-output solution at `samples`
/// (ordered in the direction of integration) instead of at step points.
pub fn integrate_at(
    q0: ComplexPoint,
    v0: ComplexPoint,
    t0: f64,
    samples: &[f64],
    cfg: &FieldConfig,
    opts: &IntegrateOptions,
) -> Result<Trajectory> {
    let t1 = match samples.last() {
        Some(&t) => t,
        None => t0,
    };
    integrate_with(q0, v0, t0, t1, cfg, opts, Some(samples))
}

/// Re-integrates one period from the loop's own initial conditions and
/// returns the trajectory at `t_j = j/M` (`j = 0..=M`) with the sup distance
/// to the samples, including closure at `t = 1`.
pub fn reintegrate(q: &PhysicalLoop, cfg: &FieldConfig, tol: f64) -> Result<(Trajectory, f64)> {
    let m = q.m();
    let v = q.velocity_or_spectral();
    let qs = q.samples();
    let times: Vec<f64> = (0..=m).map(|j| j as f64 / m as f64).collect();
    let opts = IntegrateOptions {
        tol,
        ..Default::default()
    };
    let traj = integrate_at(qs[0], v[0], 0.0, &times, cfg, &opts)?;
    let err = traj
        .positions
        .iter()
        .enumerate()
        .map(|(j, p)| (p - qs[j % m]).norm())
        .fold(0.0, f64::max);
    Ok((traj, err))
}

fn integrate_with(
    q0: ComplexPoint,
    v0: ComplexPoint,
    t0: f64,
    t1: f64,
    cfg: &FieldConfig,
    opts: &IntegrateOptions,
    samples: Option<&[f64]>,
) -> Result<Trajectory> {
    if near_primary(q0, opts.clearance) {
        return Err(Error::Singularity { re: q0.re, im: q0.im });
    }
    let dir = if t1 >= t0 { 1.0 } else { -1.0 };
    let span = (t1 - t0).abs();
    let mut out = Trajectory {
        times: Vec::new(),
        positions: Vec::new(),
        velocities: Vec::new(),
        terminated: Termination::Completed,
    };
    let mut next_sample = 0;
    let record = |out: &mut Trajectory, t: f64, y: &State| {
        let (q, v) = unpack(y);
        out.times.push(t);
        out.positions.push(q);
        out.velocities.push(v);
    };
    let mut t = t0;
    let mut y = pack(q0, v0);
    match samples {
        None => record(&mut out, t, &y),
        Some(s) => {
            while next_sample < s.len() && (s[next_sample] - t0) * dir <= 0.0 {
                record(&mut out, s[next_sample], &y);
                next_sample += 1;
            }
        }
    }
    if span == 0.0 {
        return Ok(out);
    }

    let tol = opts.tol;
    let scale = |a: f64, b: f64| tol + tol * a.abs().max(b.abs());
    let mut k = [[0.0; 4]; 7];
    k[0] = field(t, &y, cfg)?;
    let norm = |v: &State, y: &State| {
        (v.iter().zip(y).map(|(a, b)| (a / scale(*b, *b)).powi(2)).sum::<f64>() / 4.0).sqrt()
    };
    let d0 = norm(&y, &y);
    let d1 = norm(&k[0], &y);
    let mut h = if d0 > 1e-5 && d1 > 1e-5 { 0.01 * d0 / d1 } else { 1e-6 };
    h = h.min(span).min(0.1 * span.max(1e-3));
    let beta = 0.04;
    let expo1 = 0.2 - beta * 0.75;
    let safe = 0.9;
    let mut facold: f64 = 1e-4;
    let mut steps = 0;
    let mut rejected_last = false;

    while (t1 - t) * dir > 0.0 {
        if steps >= opts.max_steps {
            out.terminated = Termination::StepFailure;
            break;
        }
        steps += 1;
        if h < opts.min_step {
            out.terminated = Termination::StepFailure;
            break;
        }
        let last = (t + dir * h - t1) * dir >= 0.0;
        if last {
            h = (t1 - t).abs();
        }
        let hs = dir * h;
        let mut ok = true;
        for s in 1..7 {
            let mut ys = y;
            for (i, yi) in ys.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (r, a) in A[s].iter().enumerate().take(s) {
                    acc += a * k[r][i];
                }
                *yi += hs * acc;
            }
            match field(t + CN[s] * hs, &ys, cfg) {
                Ok(f) => k[s] = f,
                Err(_) => {
                    ok = false;
                    break;
                }
            }
        }
        if !ok {
            // A stage landed on a primary: shrink and retry.
            h *= 0.25;
            rejected_last = true;
            continue;
        }
        let mut ynew = y;
        let mut errv = [0.0; 4];
        for i in 0..4 {
            let mut acc = 0.0;
            let mut eacc = 0.0;
            for s in 0..7 {
                acc += A[6].get(s).copied().unwrap_or(0.0) * k[s][i];
                eacc += E[s] * k[s][i];
            }
            ynew[i] += hs * acc;
            errv[i] = hs * eacc;
        }
        let err = (errv
            .iter()
            .zip(y.iter().zip(&ynew))
            .map(|(e, (a, b))| (e / scale(*a, *b)).powi(2))
            .sum::<f64>()
            / 4.0)
            .sqrt();
        let fac11 = err.powf(expo1);
        if err <= 1.0 {
            let fac = (fac11 / facold.powf(beta) / safe).clamp(0.1, 5.0);
            facold = err.max(1e-4);
            let tnew = if last { t1 } else { t + hs };
            if let Some(s) = samples {
                // Dense output on [t, tnew].
                let mut ydiff = [0.0; 4];
                let mut cont = [[0.0; 4]; 5];
                for i in 0..4 {
                    ydiff[i] = ynew[i] - y[i];
                    let bspl = hs * k[0][i] - ydiff[i];
                    cont[0][i] = y[i];
                    cont[1][i] = ydiff[i];
                    cont[2][i] = bspl;
                    cont[3][i] = ydiff[i] - hs * k[6][i] - bspl;
                    cont[4][i] = hs * (0..7).map(|r| D[r] * k[r][i]).sum::<f64>();
                }
                while next_sample < s.len() && (s[next_sample] - tnew) * dir <= 0.0 {
                    let ts = s[next_sample];
                    let th = (ts - t) / hs;
                    let th1 = 1.0 - th;
                    let mut yy = [0.0; 4];
                    for i in 0..4 {
                        yy[i] = cont[0][i]
                            + th * (cont[1][i]
                                + th1 * (cont[2][i] + th * (cont[3][i] + th1 * cont[4][i])));
                    }
                    record(&mut out, ts, &yy);
                    next_sample += 1;
                }
            }
            t = tnew;
            y = ynew;
            k[0] = k[6];
            if samples.is_none() {
                record(&mut out, t, &y);
            }
            let (q, _) = unpack(&y);
            if near_primary(q, opts.clearance) {
                out.terminated = Termination::CollisionProximity;
                return Ok(out);
            }
            let mut hnew = h / fac;
            if rejected_last {
                hnew = hnew.min(h);
            }
            rejected_last = false;
            h = hnew;
        } else {
            h /= (fac11 / safe).min(5.0);
            rejected_last = true;
        }
    }
    Ok(out)
}

/// Osculating two-body elements about `center` with gravitational parameter `gm`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct KeplerElements {
    pub semi_major_axis: f64,
    pub eccentricity: f64,
}

/// Elements from position and velocity relative to one attracting center.
pub fn kepler_elements(q: ComplexPoint, v: ComplexPoint, center: ComplexPoint, gm: f64) -> KeplerElements {
    let r = q - center;
    let energy = 0.5 * v.norm_sqr() - gm / r.norm();
    let h = r.re * v.im - r.im * v.re;
    KeplerElements {
        semi_major_axis: -gm / (2.0 * energy),
        eccentricity: (1.0 + 2.0 * energy * h * h / (gm * gm)).max(0.0).sqrt(),
    }
}

/// Energy defect along a physical loop.
#[derive(Debug, Clone, Serialize)]
pub struct PhiProfile {
    #[serde(rename = "C")]
    pub c: f64,
    pub phi: Vec<f64>,
    /// `Φ·|z²−1|²/|z|²` on the loop-parameter grid, when a source loop is given.
    pub psi: Option<Vec<f64>>,
    pub mean_phi: f64,
    pub sup_phi: f64,
    /// `sup_phi / (|C| + max ½|q̇|²)`.
    pub sup_relative: f64,
    /// Nodes excluded for proximity to a primary.
    pub masked: Vec<usize>,
}

fn t_grid_tail(q: &[C], cfg: &FieldConfig) -> Vec<f64> {
    if cfg.electric.is_zero() {
        return vec![0.0; q.len()];
    }
    let m = q.len() as f64;
    let edot: Vec<f64> = q
        .iter()
        .enumerate()
        .map(|(j, &v)| cfg.dot_e(j as f64 / m, v))
        .collect();
    CumulativeIntegral::new(&edot).tail()
}

/// `C` assembled on the physical side:
/// `∫(½|q̇|² + U + E) dt + ∫₀¹ ∫_t¹ Ė ds dt`.
pub fn energy_constant(q: &PhysicalLoop, cfg: &FieldConfig) -> f64 {
    let qs = q.samples();
    let v = q.velocity_or_spectral();
    let tail = t_grid_tail(qs, cfg);
    let m = qs.len() as f64;
    (0..qs.len())
        .map(|j| energy(j as f64 / m, qs[j], v[j], cfg) + tail[j])
        .sum::<f64>()
        / m
}

pub fn phi_profile(
    q: &PhysicalLoop,
    cfg: &FieldConfig,
    c: f64,
    source: Option<&DiscreteLoop>,
) -> Result<PhiProfile> {
    let qs = q.samples();
    let m = qs.len();
    let v = q.velocity_or_spectral();
    let tail = t_grid_tail(qs, cfg);
    let mut phi = Vec::with_capacity(m);
    let mut masked = Vec::new();
    let mut kin_max: f64 = 0.0;
    for j in 0..m {
        let t = j as f64 / m as f64;
        let val = c - energy(t, qs[j], v[j], cfg) - tail[j];
        if near_primary(qs[j], 10.0 * COLLISION_CLEARANCE) || !val.is_finite() {
            masked.push(j);
        } else {
            kin_max = kin_max.max(0.5 * v[j].norm_sqr());
        }
        phi.push(val);
    }
    let kept: Vec<f64> = (0..m)
        .filter(|j| masked.binary_search(j).is_err())
        .map(|j| phi[j])
        .collect();
    let mean_phi = if kept.is_empty() {
        f64::NAN
    } else {
        kept.iter().sum::<f64>() / kept.len() as f64
    };
    let sup_phi = kept.iter().map(|v| v.abs()).fold(0.0, f64::max);
    let psi = source.map(|z| psi_profile(z, cfg, c)).transpose()?;
    Ok(PhiProfile {
        c,
        phi,
        psi,
        mean_phi,
        sup_phi,
        sup_relative: sup_phi / (c.abs() + kin_max).max(f64::MIN_POSITIVE),
        masked,
    })
}

/// `Ψ(τ_j)`, regular through collisions.
pub fn psi_profile(z: &DiscreteLoop, cfg: &FieldConfig, c: f64) -> Result<Vec<f64>> {
    let f = z.zhat()?;
    let tm = z.time_map()?;
    let zs = z.samples();
    let p = z.derivative();
    let w = z.weights();
    let n = zs.len();
    let t: Vec<f64> = tm.t_of_tau()[..n].to_vec();
    let q = z.birkhoff_image();
    let tail = if cfg.electric.is_zero() {
        vec![0.0; n]
    } else {
        let edw: Vec<f64> = (0..n).map(|j| cfg.dot_e(t[j], q[j]) * w[j]).collect();
        CumulativeIntegral::new(&edw)
            .tail()
            .into_iter()
            .map(|v| v / f)
            .collect()
    };
    let mu = cfg.mu;
    Ok((0..n)
        .map(|j| {
            let zz = zs[j];
            let r2 = zz.norm_sqr();
            let r = r2.sqrt();
            (zz * zz - 1.0).norm_sqr() / r2 * (c - tail[j] - cfg.e(t[j], q[j]))
                - 2.0 * f * f * p[j].norm_sqr() / r2
                + 2.0 * (1.0 - mu) * (zz - 1.0).norm_sqr() / r
                + 2.0 * mu * (zz + 1.0).norm_sqr() / r
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyOptions {
    /// Tolerance for the re-integration and closure checks.
    pub tol: f64,
    /// Tolerance for energy continuity across collisions, relative to `1 + |C|`.
    pub energy_tol: f64,
    /// Integrator tolerance for the oracle.
    pub integrate_tol: f64,
    /// Nodes closer than this to a primary are not compared in check (2).
    pub arc_clearance: f64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            tol: 1e-5,
            energy_tol: 1e-4,
            integrate_tol: 1e-10,
            arc_clearance: 1e-2,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct VerificationReport {
    pub collision_count: usize,
    /// Every collision is isolated (`z′ ≠ 0` there).
    pub finite_collisions: bool,
    /// Sup distance between re-integrated arcs and the loop.
    pub newton_defect: f64,
    pub newton_pass: bool,
    /// Largest energy jump across a collision, relative to `1 + |C|`.
    pub energy_jump: f64,
    pub energy_pass: bool,
    pub closure: f64,
    pub closure_pass: bool,
    pub passed: bool,
}

pub fn verify_generalized(
    orbit: &OrbitRecord,
    cfg: &FieldConfig,
    opts: &VerifyOptions,
) -> Result<VerificationReport> {
    verify_loop(&orbit.z, &orbit.q, orbit.c, cfg, opts)
}

/// Checks that `q` is a generalized solution reconstructed from `z`.
pub fn verify_loop(
    z: &DiscreteLoop,
    q: &PhysicalLoop,
    c: f64,
    cfg: &FieldConfig,
    opts: &VerifyOptions,
) -> Result<VerificationReport> {
    let m = q.m();
    let recon = z.reconstruct(m)?;
    let vel = recon.velocity_or_spectral();
    let qs = q.samples();
    let collisions = recon.collision_times().to_vec();
    let tm = z.time_map()?;
    let it = z.interpolant();

    // (1) isolated collisions
    let dz = z.derivative();
    let dz_max = dz.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let finite_collisions = collisions
        .iter()
        .all(|&t| it.eval_derivative(tm.inverse(t)).norm() > 1e-6 * dz_max)
        && collisions.len() < m / 2;

    // (2) re-integration on each arc
    let iopts = IntegrateOptions {
        tol: opts.integrate_tol,
        ..Default::default()
    };
    let clear = |j: usize| {
        let v = qs[j % m];
        (v - PLUS_ONE).norm() > opts.arc_clearance && (v - MINUS_ONE).norm() > opts.arc_clearance
    };
    let mut defect: f64 = 0.0;
    let mut closure: f64 = (it.eval(1.0) - it.eval(0.0)).norm().min(
        (crate::geometry::birkhoff_unchecked(it.eval(1.0))
            - crate::geometry::birkhoff_unchecked(it.eval(0.0)))
        .norm(),
    );
    let mf = m as f64;
    if collisions.is_empty() {
        let times: Vec<f64> = (1..=m).map(|j| j as f64 / mf).collect();
        let tr = integrate_at(recon.samples()[0], vel[0], 0.0, &times, cfg, &iopts)?;
        for (k, (t, p)) in tr.times.iter().zip(&tr.positions).enumerate() {
            let j = (t * mf).round() as usize;
            if k + 1 == m {
                closure = closure.max((p - qs[0]).norm());
            } else if clear(j) {
                defect = defect.max((p - qs[j]).norm());
            }
        }
        if tr.terminated != Termination::Completed || tr.times.len() < m {
            defect = f64::INFINITY;
        }
    } else {
        let k = collisions.len();
        for i in 0..k {
            let a = collisions[i];
            let b = if i + 1 < k { collisions[i + 1] } else { collisions[0] + 1.0 };
            let mid = 0.5 * (a + b);
            let j0 = (mid * mf).round() as i64;
            let t_start = j0 as f64 / mf;
            let idx = |j: i64| j.rem_euclid(m as i64) as usize;
            let start = idx(j0);
            let fwd: Vec<f64> = ((j0 + 1)..)
                .map(|j| j as f64 / mf)
                .take_while(|&t| t < b)
                .collect();
            let bwd: Vec<f64> = (i64::MIN..j0)
                .rev()
                .map(|j| j as f64 / mf)
                .take_while(|&t| t > a)
                .collect();
            if !clear(start) {
                continue;
            }
            for dir in [fwd, bwd] {
                let tr = integrate_at(recon.samples()[start], vel[start], t_start, &dir, cfg, &iopts)?;
                for (t, p) in tr.times.iter().zip(&tr.positions) {
                    let j = idx((t * mf).round() as i64);
                    if clear(j) {
                        defect = defect.max((p - qs[j]).norm());
                    }
                }
            }
        }
    }

    // (3) energy continuity across collisions
    let tail = t_grid_tail(recon.samples(), cfg);
    let en = |j: usize| {
        energy(j as f64 / mf, recon.samples()[j], vel[j], cfg) + tail[j]
    };
    let usable = |j: usize| {
        let v = recon.samples()[j];
        !near_primary(v, 10.0 * COLLISION_CLEARANCE) && en(j).is_finite()
    };
    let mut jump: f64 = 0.0;
    for &tc in &collisions {
        let base = (tc * mf).floor() as i64;
        let left = (0..m as i64)
            .map(|s| (base - s).rem_euclid(m as i64) as usize)
            .find(|&j| usable(j));
        let right = (1..=m as i64)
            .map(|s| (base + s).rem_euclid(m as i64) as usize)
            .find(|&j| usable(j));
        if let (Some(l), Some(r)) = (left, right) {
            jump = jump.max((en(l) - en(r)).abs() / (1.0 + c.abs()));
        }
    }

    let newton_pass = defect < opts.tol;
    let energy_pass = jump < opts.energy_tol;
    let closure_pass = closure < opts.tol;
    Ok(VerificationReport {
        collision_count: collisions.len(),
        finite_collisions,
        newton_defect: defect,
        newton_pass,
        energy_jump: jump,
        energy_pass,
        closure,
        closure_pass,
        passed: finite_collisions && newton_pass && energy_pass && closure_pass,
    })
}
