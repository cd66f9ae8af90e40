//! Critical points of the regularized functional: seeds, a matrix-free
//! Levenberg–Marquardt iteration on the gradient, and natural-parameter
//! continuation.

use std::path::PathBuf;

use log::{debug, warn};
use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::action::{self, ActionBreakdown};
use crate::dynamics::phi_profile;
use crate::error::{Error, Result};
use crate::fields::{FieldConfig, FieldsBlock};
use crate::geometry::{ComplexPoint, WindingReport};
use crate::loopspace::{self, DiscreteLoop, PhysicalLoop, ZHAT_FLOOR};
use crate::spectral::shifted_helmholtz_solve;

type C = Complex64;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveOptions {
    /// Resample the seed to this many points first.
    pub n: Option<usize>,
    /// Physical samples for the reconstruction (defaults to the loop size).
    pub m: Option<usize>,
    pub g_tol: f64,
    pub max_iterations: usize,
    pub lambda0: f64,
    /// Damping is divided by this after an accepted step.
    pub lambda_down: f64,
    /// and multiplied by this after a rejected one.
    pub lambda_up: f64,
    pub phase_fix: bool,
    pub zhat_floor: f64,
    /// Fixed-step descent on the least-squares residual before LM;
    /// only used while the gradient norm exceeds `warmup_threshold`.
    pub warmup_steps: usize,
    pub warmup_step: f64,
    pub warmup_threshold: f64,
    pub cg_max_iterations: usize,
    pub cg_rtol: f64,
    /// Shift of the `-d² + σ` preconditioner.
    pub preconditioner_shift: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            n: None,
            m: None,
            g_tol: 1e-9,
            max_iterations: 200,
            lambda0: 1e-3,
            lambda_down: 3.0,
            lambda_up: 4.0,
            phase_fix: true,
            zhat_floor: ZHAT_FLOOR,
            warmup_steps: 0,
            warmup_step: 1e-2,
            warmup_threshold: 1.0,
            cg_max_iterations: 300,
            cg_rtol: 1e-8,
            preconditioner_shift: 1.0,
        }
    }
}

impl SolveOptions {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("g_tol", self.g_tol),
            ("lambda0", self.lambda0),
            ("zhat_floor", self.zhat_floor),
            ("warmup_step", self.warmup_step),
            ("warmup_threshold", self.warmup_threshold),
            ("cg_rtol", self.cg_rtol),
            ("preconditioner_shift", self.preconditioner_shift),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::InvalidOptions(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.lambda_down > 1.0 && self.lambda_up > 1.0) {
            return Err(Error::InvalidOptions("damping factors must exceed 1".into()));
        }
        if self.max_iterations == 0 || self.cg_max_iterations == 0 {
            return Err(Error::InvalidOptions("iteration caps must be positive".into()));
        }
        if let Some(n) = self.n {
            if n < loopspace::MIN_SAMPLES || n % 2 == 1 {
                return Err(Error::InvalidOptions(format!("grid n = {n} must be even and ≥ 16")));
            }
        }
        if matches!(self.m, Some(m) if m < 4) {
            return Err(Error::InvalidOptions("m must be at least 4".into()));
        }
        Ok(())
    }
}

/// A solved (or best-effort) loop with its diagnostics.
#[derive(Debug, Clone)]
pub struct OrbitRecord {
    pub z: DiscreteLoop,
    pub q: PhysicalLoop,
    pub breakdown: ActionBreakdown,
    pub c: f64,
    pub grad_norm: f64,
    /// Relative sup of the delay residual.
    pub delay_sup: f64,
    /// Relative sup of `Φ`.
    pub phi_sup: f64,
    /// Winding of `q`; absent when `q` passes through a primary.
    pub winding: Option<WindingReport>,
    pub twisted: bool,
    pub cfg: FieldConfig,
    pub iterations: usize,
}

impl OrbitRecord {
    /// Evaluates every diagnostic at `z`.
    pub fn from_loop(z: DiscreteLoop, cfg: &FieldConfig, m: usize, iterations: usize) -> Result<Self> {
        let (breakdown, g) = action::eval_with_gradient(&z, cfg)?;
        let q = z.reconstruct(m)?;
        let c = breakdown.c();
        let delay_sup = action::delay_residual(&z, cfg)?.relative;
        let phi_sup = phi_profile(&q, cfg, c, None)?.sup_relative;
        let winding = if q.collision_times().is_empty() {
            WindingReport::of(q.samples()).ok()
        } else {
            None
        };
        Ok(Self {
            twisted: z.is_twisted(),
            z,
            q,
            breakdown,
            c,
            grad_norm: norm_l2(&g),
            delay_sup,
            phi_sup,
            winding,
            cfg: cfg.clone(),
            iterations,
        })
    }

    pub fn action(&self) -> f64 {
        self.breakdown.total
    }

    pub fn to_json(&self) -> Result<String> {
        let file = OrbitFile::try_from(self)?;
        serde_json::to_string_pretty(&file).map_err(|e| Error::InvalidLoop(e.to_string()))
    }

    pub fn from_json(s: &str) -> serde_json::Result<Self> {
        serde_json::from_str(s)
    }
}

impl Serialize for OrbitRecord {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        OrbitFile::try_from(self)
            .map_err(serde::ser::Error::custom)?
            .serialize(s)
    }
}

impl<'de> Deserialize<'de> for OrbitRecord {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let file = OrbitFile::deserialize(d)?;
        Self::try_from(file).map_err(serde::de::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OrbitFile {
    z: DiscreteLoop,
    twisted: bool,
    mu: f64,
    fields: FieldsBlock,
    diagnostics: Diagnostics,
    q: QFile,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Diagnostics {
    action: f64,
    components: ActionBreakdown,
    #[serde(rename = "C")]
    c: f64,
    grad_norm: f64,
    delay_sup: f64,
    phi_sup: f64,
    winding: Option<WindingReport>,
    iterations: usize,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct QFile {
    m: usize,
    samples: Vec<[f64; 2]>,
    collision_times: Vec<f64>,
}

impl TryFrom<&OrbitRecord> for OrbitFile {
    type Error = Error;

    fn try_from(r: &OrbitRecord) -> Result<Self> {
        Ok(Self {
            z: r.z.clone(),
            twisted: r.twisted,
            mu: r.cfg.mu,
            fields: r.cfg.to_block()?,
            diagnostics: Diagnostics {
                action: r.breakdown.total,
                components: r.breakdown,
                c: r.c,
                grad_norm: r.grad_norm,
                delay_sup: r.delay_sup,
                phi_sup: r.phi_sup,
                winding: r.winding,
                iterations: r.iterations,
            },
            q: QFile {
                m: r.q.m(),
                samples: r.q.samples().iter().map(|v| [v.re, v.im]).collect(),
                collision_times: r.q.collision_times().to_vec(),
            },
        })
    }
}

impl TryFrom<OrbitFile> for OrbitRecord {
    type Error = Error;

    fn try_from(f: OrbitFile) -> Result<Self> {
        if f.fields.mu != f.mu {
            return Err(Error::InvalidFields("mu differs from fields.mu".into()));
        }
        if f.twisted != f.z.is_twisted() {
            return Err(Error::InvalidLoop("twisted flag differs from the loop".into()));
        }
        if f.q.m != f.q.samples.len() {
            return Err(Error::InvalidLoop("q.m differs from the sample count".into()));
        }
        let cfg = FieldConfig::try_from(f.fields)?;
        let d = f.diagnostics;
        let mut breakdown = d.components;
        breakdown.mu = cfg.mu;
        breakdown.total = d.action;
        let q = PhysicalLoop::from_parts(
            f.q.samples.iter().map(|[a, b]| C::new(*a, *b)).collect(),
            f.q.collision_times,
        )?;
        Ok(Self {
            z: f.z,
            q,
            breakdown,
            c: d.c,
            grad_norm: d.grad_norm,
            delay_sup: d.delay_sup,
            phi_sup: d.phi_sup,
            winding: d.winding,
            twisted: f.twisted,
            cfg,
            iterations: d.iterations,
        })
    }
}

/// Seed families.
#[derive(Debug, Clone, PartialEq)]
pub enum SeedSpec {
    /// Plain circle in the z-plane.
    Circle { center: ComplexPoint, radius: f64 },
    /// Lift of the physical ellipse `a cos 2πt + i b sin 2πt`.
    EllipseLift { a: f64, b: f64 },
    /// Lift of a circle of the given radius about the primary `side` (±1).
    KeplerGuess { side: f64, radius: f64 },
    /// Rectilinear orbit bouncing off the primary `side`, reaching
    /// `side + reach` on the real axis.
    Collision { side: f64, reach: f64 },
    File(PathBuf),
}

impl std::str::FromStr for SeedSpec {
    type Err = Error;

    /// `circle:CX,CY,R`, `ellipse:A,B`, `kepler:SIDE,R`,
    /// `collision:SIDE,REACH` or `file:PATH`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidOptions(format!("seed '{s}' lacks a kind prefix")))?;
        if kind == "file" {
            return Ok(Self::File(PathBuf::from(rest)));
        }
        let nums: Vec<f64> = rest
            .split(',')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::InvalidOptions(format!("seed '{s}': {e}")))?;
        match (kind, nums.as_slice()) {
            ("circle", [cx, cy, r]) => Ok(Self::Circle {
                center: C::new(*cx, *cy),
                radius: *r,
            }),
            ("ellipse", [a, b]) => Ok(Self::EllipseLift { a: *a, b: *b }),
            ("kepler", [side, r]) => Ok(Self::KeplerGuess {
                side: *side,
                radius: *r,
            }),
            ("collision", [side, reach]) => Ok(Self::Collision {
                side: *side,
                reach: *reach,
            }),
            _ => Err(Error::InvalidOptions(format!("unrecognized seed '{s}'"))),
        }
    }
}

/// Builds a seed loop with `n` samples (files keep their own size).
pub fn seed(spec: &SeedSpec, n: usize) -> Result<DiscreteLoop> {
    match spec {
        SeedSpec::Circle { center, radius } => loopspace::circle(n, *center, *radius),
        SeedSpec::EllipseLift { a, b } => ellipse_lift(*a, *b, n),
        SeedSpec::KeplerGuess { side, radius } => kepler_guess(*side, *radius, n),
        SeedSpec::Collision { side, reach } => collision_guess(*side, *reach, n),
        SeedSpec::File(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::InvalidLoop(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Error::InvalidLoop(format!("{}: {e}", path.display())))
        }
    }
}

fn lift_samples(n: usize, f: impl Fn(f64) -> C) -> Result<DiscreteLoop> {
    let m = (4 * n).max(512);
    let q = PhysicalLoop::new((0..m).map(|j| f(j as f64 / m as f64)).collect())?;
    q.lift(n)
}

pub fn ellipse_lift(a: f64, b: f64, n: usize) -> Result<DiscreteLoop> {
    let tau = 2.0 * std::f64::consts::PI;
    lift_samples(n, |t| C::new(a * (tau * t).cos(), b * (tau * t).sin()))
}

pub fn kepler_guess(side: f64, radius: f64, n: usize) -> Result<DiscreteLoop> {
    if side.abs() != 1.0 {
        return Err(Error::InvalidOptions(format!("kepler side must be ±1, got {side}")));
    }
    if !(radius > 0.0 && radius < 2.0) {
        return Err(Error::InvalidOptions(format!("kepler radius must lie in (0, 2), got {radius}")));
    }
    lift_samples(n, |t| C::new(side, 0.0) + C::from_polar(radius, 2.0 * std::f64::consts::PI * t))
}

/// Branch of `B⁻¹(−1 − u²/2)` near `−1`; satisfies `1/φ(u) = φ(−u)`.
fn near_minus_one(u: C) -> C {
    -1.0 + 0.5 * (-u * u + u * (u * u + 4.0).sqrt())
}

/// Radial Kepler orbit about the primary `side`, from `side + reach` into
/// the collision at `t = 1/2` and back, timed by Kepler's equation at unit
/// mass and period 1 and reparametrized by the loop time map. A critical
/// point of the functional when the mass at `side` is 1 and
/// `|reach| = 2(4π²)^{−1/3}`.
pub fn collision_guess(side: f64, reach: f64, n: usize) -> Result<DiscreteLoop> {
    if side.abs() != 1.0 {
        return Err(Error::InvalidOptions(format!("collision side must be ±1, got {side}")));
    }
    if !(reach != 0.0 && reach.abs() < 2.0) {
        return Err(Error::InvalidOptions(format!(
            "collision reach must be nonzero with |reach| < 2, got {reach}"
        )));
    }
    if n < loopspace::MIN_SAMPLES || n % 2 == 1 {
        return Err(Error::InvalidLoop(format!("n = {n} must be even and ≥ 16")));
    }
    let pi = std::f64::consts::PI;
    // q − side = ∓u²/2 along the segment, u real or imaginary.
    let amp = (2.0 * reach.abs()).sqrt();
    let unit = if (reach > 0.0) == (side < 0.0) { C::i() } else { C::new(1.0, 0.0) };
    // Eccentric anomaly E = π + 2πs, s ∈ [0, 1); u = amp·sin(E/2)·unit.
    let u_of = |s: f64| unit * (amp * (0.5 * pi + pi * s).sin());
    let z_of = |s: f64| near_minus_one(u_of(s)) * -side;
    // dτ ∝ dt/w with dt ∝ 1 − cos E = 2 sin²(E/2). Writing z + 1 = u·h(u),
    // w = |u|²|h|²|z − 1|²/(4|z|²) and the sin² cancels.
    let k = 32 * n;
    let density: Vec<f64> = (0..k)
        .map(|j| {
            let u = u_of(j as f64 / k as f64);
            let h = 0.5 * (-u + (u * u + 4.0).sqrt());
            let z = -1.0 + u * h;
            8.0 * z.norm_sqr() / (amp * amp * h.norm_sqr() * (z - 1.0).norm_sqr())
        })
        .collect();
    let map = loopspace::MonotoneMap::new(&density);
    let samples = (0..n).map(|j| z_of(map.inverse(j as f64 / n as f64))).collect();
    DiscreteLoop::new(samples, true)
}

fn dot(a: &[C], b: &[C]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x.re * y.re + x.im * y.im).sum()
}

fn norm_l2(g: &[C]) -> f64 {
    action::pairing(g, g).sqrt()
}

fn axpy(y: &mut [C], a: f64, x: &[C]) {
    y.iter_mut().zip(x).for_each(|(u, v)| *u += v * a);
}

/// Linearization of the preconditioned gradient at a fixed loop.
struct Linearization<'a> {
    z: &'a DiscreteLoop,
    cfg: &'a FieldConfig,
    /// `|z_j|²/ẑ`, frozen at `z`.
    scale: Vec<f64>,
    /// `−1/z_j²`, used to extend twisted data to the double cover.
    twist: Option<Vec<C>>,
    shift: f64,
    inf_norm: f64,
}

impl<'a> Linearization<'a> {
    fn new(z: &'a DiscreteLoop, cfg: &'a FieldConfig, shift: f64) -> Result<Self> {
        let f = z.zhat()?;
        let s = z.samples();
        Ok(Self {
            z,
            cfg,
            scale: s.iter().map(|v| v.norm_sqr() / f).collect(),
            twist: z
                .is_twisted()
                .then(|| s.iter().map(|v| -1.0 / (v * v)).collect()),
            shift,
            inf_norm: s.iter().map(|v| v.norm()).fold(1.0, f64::max),
        })
    }

    /// Symmetric positive smoothing operator.
    fn smooth(&self, u: &[C]) -> Vec<C> {
        match &self.twist {
            None => shifted_helmholtz_solve(u, 1.0, self.shift),
            Some(a) => {
                let n = u.len();
                let mut ext = u.to_vec();
                ext.extend(u.iter().zip(a).map(|(x, y)| x * y));
                let v = shifted_helmholtz_solve(&ext, 2.0, self.shift);
                (0..n).map(|j| 0.5 * (v[j] + a[j].conj() * v[n + j])).collect()
            }
        }
    }

    fn scaled(&self, u: &[C]) -> Vec<C> {
        u.iter().zip(&self.scale).map(|(x, s)| x * s).collect()
    }

    fn residual(&self, g: &[C]) -> Vec<C> {
        self.smooth(&self.scaled(g))
    }

    /// Hessian-vector product by central differences of the gradient.
    fn hess(&self, v: &[C]) -> Result<Vec<C>> {
        let vmax = v.iter().map(|x| x.norm()).fold(0.0, f64::max);
        if vmax == 0.0 {
            return Ok(vec![C::new(0.0, 0.0); v.len()]);
        }
        let mut h = 1e-6 * self.inf_norm / vmax;
        let twisted = self.z.is_twisted();
        let s = self.z.samples();
        for _ in 0..4 {
            let plus = DiscreteLoop::new(s.iter().zip(v).map(|(a, b)| a + b * h).collect(), twisted)
                .and_then(|l| action::gradient(&l, self.cfg));
            let minus = DiscreteLoop::new(s.iter().zip(v).map(|(a, b)| a - b * h).collect(), twisted)
                .and_then(|l| action::gradient(&l, self.cfg));
            if let (Ok(p), Ok(m)) = (plus, minus) {
                return Ok(p.iter().zip(&m).map(|(a, b)| (a - b) / (2.0 * h)).collect());
            }
            h *= 0.1;
        }
        Err(Error::Degenerated("finite-difference probe left the admissible set".into()))
    }

    fn jv(&self, v: &[C]) -> Result<Vec<C>> {
        Ok(self.residual(&self.hess(v)?))
    }

    fn jtv(&self, u: &[C]) -> Result<Vec<C>> {
        self.hess(&self.scaled(&self.smooth(u)))
    }
}

/// `(J̃ᵀJ̃ + ccᵀ + λ) x`.
fn normal_apply(lin: &Linearization, phase: Option<&[C]>, lambda: f64, x: &[C]) -> Result<Vec<C>> {
    let mut y = lin.jtv(&lin.jv(x)?)?;
    if let Some(c) = phase {
        axpy(&mut y, dot(c, x), c);
    }
    axpy(&mut y, lambda, x);
    Ok(y)
}

fn conjugate_gradient(
    apply: impl Fn(&[C]) -> Result<Vec<C>>,
    b: &[C],
    rtol: f64,
    max_iter: usize,
) -> Result<Vec<C>> {
    let n = b.len();
    let mut x = vec![C::new(0.0, 0.0); n];
    let mut r = b.to_vec();
    let mut p = r.clone();
    let mut rr = dot(&r, &r);
    let stop = rtol * rr.sqrt();
    for _ in 0..max_iter {
        if rr.sqrt() <= stop {
            break;
        }
        let ap = apply(&p)?;
        let pap = dot(&p, &ap);
        if pap <= 0.0 {
            break;
        }
        let alpha = rr / pap;
        axpy(&mut x, alpha, &p);
        axpy(&mut r, -alpha, &ap);
        let rr_new = dot(&r, &r);
        let beta = rr_new / rr;
        rr = rr_new;
        p.iter_mut().zip(&r).for_each(|(pi, ri)| *pi = ri + *pi * beta);
    }
    Ok(x)
}

fn admissible(samples: Vec<C>, twisted: bool, cfg: &FieldConfig, floor: f64) -> Result<(DiscreteLoop, ActionBreakdown, Vec<C>)> {
    let z = DiscreteLoop::new(samples, twisted)?;
    if z.samples().iter().any(|v| v.norm() < 1e-8) {
        return Err(Error::Degenerated("sample approaching z = 0".into()));
    }
    z.zhat_with_floor(floor)?;
    let (b, g) = action::eval_with_gradient(&z, cfg)?;
    if !b.total.is_finite() || g.iter().any(|v| !v.norm().is_finite()) {
        return Err(Error::Degenerated("non-finite functional".into()));
    }
    Ok((z, b, g))
}

fn q_winding(z: &DiscreteLoop) -> Option<WindingReport> {
    WindingReport::of(&z.birkhoff_image()).ok()
}

/// Unit phase row `z′/‖z′‖` (Euclidean).
fn phase_row(z: &DiscreteLoop) -> Vec<C> {
    let d = z.derivative();
    let nrm = dot(&d, &d).sqrt();
    d.into_iter().map(|v| v / nrm).collect()
}

/// Searches for a critical point starting from `seed`.
pub fn solve(seed: &DiscreteLoop, cfg: &FieldConfig, opts: &SolveOptions) -> Result<OrbitRecord> {
    opts.validate()?;
    let seed = match opts.n {
        Some(n) if n != seed.n() => seed.resample(n)?,
        _ => seed.clone(),
    };
    let m = opts.m.unwrap_or(seed.n());
    let twisted = seed.is_twisted();
    let (mut z, mut b, mut g) =
        admissible(seed.samples().to_vec(), twisted, cfg, opts.zhat_floor).map_err(|e| match e {
            Error::DegenerateLoop { zhat } => {
                Error::Degenerated(format!("seed has ẑ = {zhat:e} below the floor"))
            }
            other => other,
        })?;
    let phase = (opts.phase_fix && cfg.is_autonomous()).then(|| phase_row(&seed));
    let seed_winding = q_winding(&seed);
    let mut lambda = opts.lambda0;
    let mut best = (norm_l2(&g), z.clone());

    // Optional fixed-step descent on ½‖P⁻¹g‖².
    let mut warm = 0;
    while warm < opts.warmup_steps && norm_l2(&g) > opts.warmup_threshold {
        let lin = Linearization::new(&z, cfg, opts.preconditioner_shift)?;
        let r = lin.residual(&g);
        let dir = lin.jtv(&r)?;
        let dmax = dir.iter().map(|v| v.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let step = opts.warmup_step / dmax.max(1.0);
        let trial: Vec<C> = z.samples().iter().zip(&dir).map(|(a, d)| a - d * step).collect();
        match admissible(trial, twisted, cfg, opts.zhat_floor) {
            Ok(next) => (z, b, g) = next,
            Err(_) => break,
        }
        warm += 1;
    }

    let mut rejections = 0;
    for iteration in 0..opts.max_iterations {
        let gn = norm_l2(&g);
        if gn < best.0 {
            best = (gn, z.clone());
        }
        debug!("iteration {iteration}: grad_norm = {gn:e}, action = {}, λ = {lambda:e}", b.total);
        if gn < opts.g_tol {
            return OrbitRecord::from_loop(z, cfg, m, iteration);
        }
        let lin = Linearization::new(&z, cfg, opts.preconditioner_shift)?;
        let r = lin.residual(&g);
        let offset: Vec<C> = z.samples().iter().zip(seed.samples()).map(|(a, s)| a - s).collect();
        let rho = phase.as_ref().map_or(0.0, |c| dot(c, &offset));
        let mut rhs = lin.jtv(&r)?;
        if let Some(c) = &phase {
            axpy(&mut rhs, rho, c);
        }
        let cost = 0.5 * (dot(&r, &r) + rho * rho);
        let neg: Vec<C> = rhs.iter().map(|v| -v).collect();
        let delta = conjugate_gradient(
            |x| normal_apply(&lin, phase.as_deref(), lambda, x),
            &neg,
            opts.cg_rtol,
            opts.cg_max_iterations,
        )?;
        let pred = 0.5 * (lambda * dot(&delta, &delta) - dot(&delta, &rhs));
        let trial: Vec<C> = z.samples().iter().zip(&delta).map(|(a, d)| a + d).collect();
        let accepted = match admissible(trial, twisted, cfg, opts.zhat_floor) {
            Ok((zn, bn, gn_vec)) => {
                let rn = lin.residual(&gn_vec);
                let rho_n = phase.as_ref().map_or(0.0, |c| {
                    let off: Vec<C> = zn.samples().iter().zip(seed.samples()).map(|(a, s)| a - s).collect();
                    dot(c, &off)
                });
                let cost_n = 0.5 * (dot(&rn, &rn) + rho_n * rho_n);
                let ratio = (cost - cost_n) / pred.max(f64::MIN_POSITIVE);
                if cost_n < cost {
                    if ratio > 0.25 {
                        lambda = (lambda / opts.lambda_down).max(1e-15);
                    }
                    if q_winding(&zn) != seed_winding {
                        warn!("winding of the iterate differs from the seed at iteration {iteration}");
                    }
                    (z, b, g) = (zn, bn, gn_vec);
                    true
                } else {
                    false
                }
            }
            Err(e) => {
                debug!("trial step rejected: {e}");
                false
            }
        };
        if accepted {
            rejections = 0;
        } else {
            lambda *= opts.lambda_up;
            rejections += 1;
            if rejections > 40 {
                let zhat = z.zhat()?;
                if zhat < 1e3 * opts.zhat_floor {
                    return Err(Error::Degenerated(format!("ẑ = {zhat:e} collapsing")));
                }
                break;
            }
        }
    }
    let gn = norm_l2(&g);
    if gn < opts.g_tol {
        return OrbitRecord::from_loop(z, cfg, m, opts.max_iterations);
    }
    if gn < best.0 {
        best = (gn, z);
    }
    let record = OrbitRecord::from_loop(best.1, cfg, m, opts.max_iterations)?;
    Err(Error::NoConvergence {
        iterations: opts.max_iterations,
        grad_norm: record.grad_norm,
        best: Box::new(record),
    })
}

/// Solves several seeds concurrently; `SZBOV_THREADS` caps the pool.
pub fn solve_many(seeds: &[DiscreteLoop], cfg: &FieldConfig, opts: &SolveOptions) -> Vec<Result<OrbitRecord>> {
    let run = || seeds.par_iter().map(|s| solve(s, cfg, opts)).collect();
    match thread_cap().and_then(|t| rayon::ThreadPoolBuilder::new().num_threads(t).build().ok()) {
        Some(pool) => pool.install(run),
        None => run(),
    }
}

fn thread_cap() -> Option<usize> {
    std::env::var("SZBOV_THREADS").ok()?.parse().ok().filter(|&t| t > 0)
}

/// Extreme Ritz values of the Gauss–Newton normal matrix at `z` (λ = 0),
/// from `steps` Lanczos iterations.
pub fn normal_matrix_ritz(
    z: &DiscreteLoop,
    cfg: &FieldConfig,
    opts: &SolveOptions,
    phase_fix: bool,
    steps: usize,
) -> Result<(f64, f64)> {
    let lin = Linearization::new(z, cfg, opts.preconditioner_shift)?;
    let phase = phase_fix.then(|| phase_row(z));
    let n = z.n();
    let k = steps.min(2 * n).max(2);
    let mut basis: Vec<Vec<C>> = Vec::with_capacity(k);
    let mut v: Vec<C> = (0..n)
        .map(|j| C::new(1.0 + (j as f64 * 0.7).sin(), (j as f64 * 1.3).cos()))
        .collect();
    let nv = dot(&v, &v).sqrt();
    v.iter_mut().for_each(|x| *x /= nv);
    let mut alpha = Vec::new();
    let mut beta: Vec<f64> = Vec::new();
    for _ in 0..k {
        let mut w = normal_apply(&lin, phase.as_deref(), 0.0, &v)?;
        let a = dot(&w, &v);
        alpha.push(a);
        axpy(&mut w, -a, &v);
        if let (Some(prev), Some(b)) = (basis.last(), beta.last()) {
            axpy(&mut w, -b, prev);
        }
        basis.push(v.clone());
        for u in &basis {
            let p = dot(&w, u);
            axpy(&mut w, -p, u);
        }
        let b = dot(&w, &w).sqrt();
        if b < 1e-14 * a.abs().max(1.0) {
            break;
        }
        beta.push(b);
        v = w.into_iter().map(|x| x / b).collect();
    }
    let dim = alpha.len();
    let mut t = DMatrix::<f64>::zeros(dim, dim);
    for i in 0..dim {
        t[(i, i)] = alpha[i];
        if i + 1 < dim {
            t[(i, i + 1)] = beta[i];
            t[(i + 1, i)] = beta[i];
        }
    }
    let eig = SymmetricEigen::new(t).eigenvalues;
    let lo = eig.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = eig.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((lo, hi))
}

/// Outcome of a continuation run.
#[derive(Debug)]
pub struct Family {
    /// Converged records, starting with the initial orbit.
    pub records: Vec<OrbitRecord>,
    /// First failing step (1-based), its configuration and the error.
    pub failure: Option<(usize, FieldConfig, Error)>,
}

/// Natural-parameter continuation along `path`.
pub fn continue_family(start: &OrbitRecord, path: &[FieldConfig], opts: &SolveOptions) -> Result<Family> {
    let mut records = vec![start.clone()];
    for (i, cfg) in path.iter().enumerate() {
        let prev = &records[records.len() - 1].z;
        match solve(prev, cfg, opts) {
            Ok(r) => records.push(r),
            Err(e) if i == 0 => {
                return Err(Error::Continuation {
                    step: 1,
                    config: Box::new(cfg.clone()),
                    source: Box::new(e),
                })
            }
            Err(e) => {
                warn!("continuation stopped at step {}: {e}", i + 1);
                return Ok(Family {
                    records,
                    failure: Some((i + 1, cfg.clone(), e)),
                });
            }
        }
    }
    Ok(Family { records, failure: None })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn seeds() {
        let c = seed(&"circle:0,0,2".parse().unwrap(), 256).unwrap();
        assert!(!c.is_twisted());
        assert_eq!(q_winding(&c).unwrap().total, 2);
        let k = kepler_guess(-1.0, 0.3, 128).unwrap();
        assert!(k.is_twisted());
        let w = WindingReport::of(k.reconstruct(256).unwrap().samples()).unwrap();
        assert_eq!((w.around_minus_one, w.around_plus_one), (1, 0));
        assert!("kepler:2,0.3".parse::<SeedSpec>().is_ok());
        assert!(seed(&"kepler:2,0.3".parse().unwrap(), 64).is_err());
        assert!("bogus".parse::<SeedSpec>().is_err());
        for (side, reach) in [(-1.0, 0.6), (-1.0, -0.6), (1.0, -0.6), (1.0, 0.6)] {
            let z = collision_guess(side, reach, 64).unwrap();
            let q = z.birkhoff_image();
            assert!((q[0] - C::new(side + reach, 0.0)).norm() < 1e-12);
            assert!((q[32] - C::new(side, 0.0)).norm() < 1e-9);
            assert!(q.iter().all(|v| v.im.abs() < 1e-12));
            // Smooth across the seam: z(1) = 1/z(0).
            let it = z.interpolant();
            assert!((it.eval(1.0) - 1.0 / z.samples()[0]).norm() < 1e-12);
        }
    }

    #[test]
    fn preconditioner_is_symmetric() {
        let cfg = FieldConfig::euler(0.5).unwrap();
        for z in [kepler_guess(-1.0, 0.3, 64).unwrap(), loopspace::circle(64, C::new(0.1, 0.0), 1.7).unwrap()] {
            let lin = Linearization::new(&z, &cfg, 1.0).unwrap();
            let a: Vec<C> = (0..64).map(|j| C::new((j as f64).sin(), (2.0 * j as f64).cos())).collect();
            let b: Vec<C> = (0..64).map(|j| C::new((0.3 * j as f64).cos(), (1.1 * j as f64).sin())).collect();
            let lhs = dot(&lin.smooth(&a), &b);
            let rhs = dot(&a, &lin.smooth(&b));
            assert!((lhs - rhs).abs() < 1e-13 * lhs.abs().max(1.0));
            assert!(dot(&a, &lin.smooth(&a)) > 0.0);
        }
    }

    #[test]
    fn kepler_circle() {
        let cfg = FieldConfig::euler(0.0).unwrap();
        let z = kepler_guess(-1.0, 0.3, 128).unwrap();
        let r = solve(&z, &cfg, &SolveOptions::default()).unwrap();
        // μ = 0 leaves a degenerate family of ellipses; all share the semi-major axis.
        let radius = (4.0 * PI * PI).powf(-1.0 / 3.0);
        let v = r.q.velocity_or_spectral();
        let dev = r
            .q
            .samples()
            .iter()
            .zip(&v)
            .map(|(&q, &v)| (crate::dynamics::kepler_elements(q, v, C::new(-1.0, 0.0), 1.0).semi_major_axis / radius - 1.0).abs())
            .fold(0.0, f64::max);
        assert!(r.twisted);
        assert!(dev < 1e-6, "radius deviation {dev}");
        let action = 1.5 * (4.0 * PI * PI).powf(1.0 / 3.0);
        assert!((r.action() / action - 1.0).abs() < 1e-6);
        assert!(r.iterations <= 50, "{}", r.iterations);
    }

    #[test]
    fn degenerate_seed_is_rejected() {
        let z = DiscreteLoop::from_fn(32, false, |t| C::new(1.0, 0.0) + C::from_polar(1e-7, 2.0 * PI * t)).unwrap();
        let err = solve(&z, &FieldConfig::euler(0.5).unwrap(), &SolveOptions::default()).unwrap_err();
        assert!(matches!(err, Error::Degenerated(_) | Error::DegenerateLoop { .. }), "{err}");
    }

    #[test]
    fn empty_continuation_returns_start() {
        let cfg = FieldConfig::euler(0.0).unwrap();
        let r = solve(&kepler_guess(-1.0, 0.3, 64).unwrap(), &cfg, &SolveOptions::default()).unwrap();
        let fam = continue_family(&r, &[], &SolveOptions::default()).unwrap();
        assert_eq!(fam.records.len(), 1);
        assert!(fam.failure.is_none());
    }

    #[test]
    fn record_json_round_trip() {
        let cfg = FieldConfig::euler(0.0).unwrap();
        let r = OrbitRecord::from_loop(kepler_guess(-1.0, 0.3, 32).unwrap(), &cfg, 64, 0).unwrap();
        let s = r.to_json().unwrap();
        let back = OrbitRecord::from_json(&s).unwrap();
        assert_eq!(back.to_json().unwrap(), s);
        assert_eq!(back.z, r.z);
    }
}
