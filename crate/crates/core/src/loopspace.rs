//! Sampled loops in the blown-up plane, the time reparametrization and the
//! maps between z-loops and physical q-loops.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    birkhoff_derivative_unchecked, birkhoff_unchecked, weight_unchecked, ComplexPoint, MINUS_ONE,
    PLUS_ONE,
};
use crate::spectral::{self, CumulativeIntegral, Interpolant, Pchip};

/// Default lower bound on ẑ.
pub const ZHAT_FLOOR: f64 = 1e-10;
/// Default distance to ±1 (in q) below which a point counts as a collision.
pub const COLLISION_CLEARANCE: f64 = 1e-6;
/// Smallest admissible loop size.
pub const MIN_SAMPLES: usize = 16;

/// A uniformly sampled loop `z(j/N)`, possibly twisted (`z(τ+1) = 1/z(τ)`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "LoopFile", into = "LoopFile")]
pub struct DiscreteLoop {
    samples: Vec<ComplexPoint>,
    twisted: bool,
}

/// On-disk loop format.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoopFile {
    pub n: usize,
    pub twisted: bool,
    pub samples: Vec<[f64; 2]>,
}

impl TryFrom<LoopFile> for DiscreteLoop {
    type Error = Error;

    fn try_from(f: LoopFile) -> Result<Self> {
        if f.n != f.samples.len() {
            return Err(Error::InvalidLoop(format!(
                "n = {} but {} samples given",
                f.n,
                f.samples.len()
            )));
        }
        let samples = f
            .samples
            .iter()
            .map(|[re, im]| Complex64::new(*re, *im))
            .collect();
        DiscreteLoop::new(samples, f.twisted)
    }
}

impl From<DiscreteLoop> for LoopFile {
    fn from(l: DiscreteLoop) -> Self {
        LoopFile {
            n: l.samples.len(),
            twisted: l.twisted,
            samples: l.samples.iter().map(|z| [z.re, z.im]).collect(),
        }
    }
}

impl DiscreteLoop {
    pub fn new(samples: Vec<ComplexPoint>, twisted: bool) -> Result<Self> {
        let n = samples.len();
        if n < MIN_SAMPLES || !n.is_multiple_of(2) {
            return Err(Error::InvalidLoop(format!(
                "sample count must be even and at least {MIN_SAMPLES}, got {n}"
            )));
        }
        for (j, z) in samples.iter().enumerate() {
            if !(z.re.is_finite() && z.im.is_finite()) {
                return Err(Error::InvalidLoop(format!("non-finite sample at {j}")));
            }
            if *z == Complex64::new(0.0, 0.0) {
                return Err(Error::InvalidLoop(format!("sample {j} is zero")));
            }
        }
        Ok(Self { samples, twisted })
    }

    /// Samples `f(j/n)`.
    pub fn from_fn(n: usize, twisted: bool, f: impl Fn(f64) -> ComplexPoint) -> Result<Self> {
        Self::new((0..n).map(|j| f(j as f64 / n as f64)).collect(), twisted)
    }

    pub fn samples(&self) -> &[ComplexPoint] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<ComplexPoint> {
        self.samples
    }

    pub fn n(&self) -> usize {
        self.samples.len()
    }

    pub fn is_twisted(&self) -> bool {
        self.twisted
    }

    /// Loop parameters `τ_j = j/N`.
    pub fn nodes(&self) -> Vec<f64> {
        let n = self.n() as f64;
        (0..self.n()).map(|j| j as f64 / n).collect()
    }

    /// Samplewise inversion `z_j ↦ 1/z_j`, same sector.
    pub fn involuted(&self) -> Self {
        Self {
            samples: self.samples.iter().map(|z| z.inv()).collect(),
            twisted: self.twisted,
        }
    }

    /// `[z_0..z_{N-1}, 1/z_0..1/z_{N-1}]`, a closed 2N-sample loop on `[0, 2)`.
    pub fn double_cover(&self) -> Vec<ComplexPoint> {
        let mut out = self.samples.clone();
        out.extend(self.samples.iter().map(|z| z.inv()));
        out
    }

    /// Spectral derivative `z'(τ_j)`.
    pub fn derivative(&self) -> Vec<ComplexPoint> {
        loop_derivative(&self.samples, self.twisted)
    }

    pub fn second_derivative(&self) -> Vec<ComplexPoint> {
        let n = self.n();
        if self.twisted {
            let mut d = spectral::second_derivative(&self.double_cover(), 2.0);
            d.truncate(n);
            d
        } else {
            spectral::second_derivative(&self.samples, 1.0)
        }
    }

    /// `w(z_j)`.
    pub fn weights(&self) -> Vec<f64> {
        self.samples.iter().map(|&z| weight_unchecked(z)).collect()
    }

    pub fn zhat(&self) -> Result<f64> {
        self.zhat_with_floor(ZHAT_FLOOR)
    }

    pub fn zhat_with_floor(&self, floor: f64) -> Result<f64> {
        let zhat = mean(&self.weights());
        if zhat <= floor || !zhat.is_finite() {
            return Err(Error::DegenerateLoop { zhat });
        }
        Ok(zhat)
    }

    pub fn time_map(&self) -> Result<TimeMap> {
        TimeMap::new(self)
    }

    /// Trigonometric interpolant, evaluated on the double cover when twisted.
    pub fn interpolant(&self) -> LoopInterpolant {
        if self.twisted {
            LoopInterpolant(Interpolant::new(&self.double_cover(), 2.0))
        } else {
            LoopInterpolant(Interpolant::new(&self.samples, 1.0))
        }
    }

    /// Trigonometric resampling to `n` nodes.
    pub fn resample(&self, n: usize) -> Result<Self> {
        let it = self.interpolant();
        Self::from_fn(n, self.twisted, |tau| it.eval(tau))
    }

    pub fn reconstruct(&self, m: usize) -> Result<PhysicalLoop> {
        reconstruct_with(self, m, COLLISION_CLEARANCE)
    }

    /// Samplewise Birkhoff image `B(z_j)`.
    pub fn birkhoff_image(&self) -> Vec<ComplexPoint> {
        self.samples.iter().map(|&z| birkhoff_unchecked(z)).collect()
    }
}

fn loop_derivative(z: &[ComplexPoint], twisted: bool) -> Vec<ComplexPoint> {
    let n = z.len();
    if twisted {
        let mut cover = z.to_vec();
        cover.extend(z.iter().map(|v| v.inv()));
        let mut d = spectral::derivative(&cover, 2.0);
        d.truncate(n);
        d
    } else {
        spectral::derivative(z, 1.0)
    }
}

/// The genuinely periodic sample set behind a loop: the loop itself, or
/// its double cover when twisted, together with its derivative.
pub(crate) struct Periodic {
    pub z: Vec<ComplexPoint>,
    pub p: Vec<ComplexPoint>,
    period: f64,
    n: usize,
}

impl Periodic {
    pub fn new(z: &[ComplexPoint], twisted: bool) -> Self {
        let n = z.len();
        let (zc, period) = if twisted {
            let mut cover = z.to_vec();
            cover.extend(z.iter().map(|v| v.inv()));
            (cover, 2.0)
        } else {
            (z.to_vec(), 1.0)
        };
        let p = spectral::derivative(&zc, period);
        Self {
            z: zc,
            p,
            period,
            n,
        }
    }

    /// Pulls back adjoints of a quantity `mean_k f(z̃_k, p̃_k)` over the
    /// periodic set to the L² gradient with respect to the loop samples.
    /// `zbar` and `pbar` are the pointwise partial gradients.
    pub fn pull_back(&self, mut zbar: Vec<ComplexPoint>, pbar: &[ComplexPoint]) -> Vec<ComplexPoint> {
        for (a, b) in zbar.iter_mut().zip(spectral::derivative(pbar, self.period)) {
            *a -= b;
        }
        if self.z.len() == self.n {
            return zbar;
        }
        let n = self.n;
        (0..n)
            .map(|j| {
                let dinv = -(self.z[j] * self.z[j]).inv();
                0.5 * (zbar[j] + dinv.conj() * zbar[n + j])
            })
            .collect()
    }
}

pub(crate) fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Continuous evaluation `τ ↦ z(τ)` of a [`DiscreteLoop`].
#[derive(Debug, Clone)]
pub struct LoopInterpolant(Interpolant);

impl LoopInterpolant {
    pub fn eval(&self, tau: f64) -> ComplexPoint {
        self.0.eval(tau)
    }

    pub fn eval_derivative(&self, tau: f64) -> ComplexPoint {
        self.0.eval_derivative(tau)
    }
}

/// Normalized running integral of a nonnegative periodic density, with a
/// robust inverse.
#[derive(Debug, Clone)]
pub(crate) struct MonotoneMap {
    integral: CumulativeIntegral,
    table: Vec<f64>,
    guess: Pchip,
}

impl MonotoneMap {
    pub fn new(density: &[f64]) -> Self {
        let integral = CumulativeIntegral::new(density);
        let total = integral.total();
        let n = density.len();
        let mut table = Vec::with_capacity(n + 1);
        let mut hi = 0.0_f64;
        for (j, v) in integral.nodes().iter().enumerate() {
            let x = if j == 0 {
                0.0
            } else if j == n {
                1.0
            } else {
                (v / total).clamp(hi, 1.0)
            };
            hi = hi.max(x);
            table.push(x);
        }
        let grid: Vec<f64> = (0..=n).map(|j| j as f64 / n as f64).collect();
        let guess = Pchip::new(&table, &grid);
        Self {
            integral,
            table,
            guess,
        }
    }

    pub fn table(&self) -> &[f64] {
        &self.table
    }

    pub fn eval(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else if x >= 1.0 {
            1.0
        } else {
            self.integral.eval(x) / self.integral.total()
        }
    }

    pub fn inverse(&self, y: f64) -> f64 {
        if y <= 0.0 {
            return 0.0;
        }
        if y >= 1.0 {
            return 1.0;
        }
        let n = self.table.len() - 1;
        let total = self.integral.total();
        let j = self.table.partition_point(|&v| v <= y).clamp(1, n) - 1;
        let resid = |x: f64| self.eval(x) - y;
        let mut a = j as f64 / n as f64;
        let mut b = (j + 1) as f64 / n as f64;
        // Widen the bracket when clamping hid a dip of the raw integral.
        let mut widen = 0;
        while resid(a) > 0.0 && a > 0.0 && widen < 4 {
            a = (a - 1.0 / n as f64).max(0.0);
            widen += 1;
        }
        widen = 0;
        while resid(b) < 0.0 && b < 1.0 && widen < 4 {
            b = (b + 1.0 / n as f64).min(1.0);
            widen += 1;
        }
        let mut x = self.guess.eval(y).clamp(a, b);
        let bracketed = resid(a) <= 0.0 && resid(b) >= 0.0;
        for _ in 0..200 {
            let r = resid(x);
            if r.abs() < 1e-14 {
                break;
            }
            if bracketed {
                if r < 0.0 {
                    a = x;
                } else {
                    b = x;
                }
                if b - a < 1e-16 {
                    break;
                }
            }
            let slope = self.integral.eval_derivative(x) / total;
            let newton = x - r / slope;
            x = if slope > 0.0 && newton > a && newton < b {
                newton
            } else if bracketed {
                0.5 * (a + b)
            } else {
                break;
            };
        }
        x
    }
}

/// The reparametrization `t_z` of a loop and its inverse `τ_z`.
#[derive(Debug, Clone)]
pub struct TimeMap {
    zhat: f64,
    map: MonotoneMap,
}

impl TimeMap {
    pub fn new(z: &DiscreteLoop) -> Result<Self> {
        let zhat = z.zhat()?;
        Ok(Self {
            zhat,
            map: MonotoneMap::new(&z.weights()),
        })
    }

    pub fn zhat(&self) -> f64 {
        self.zhat
    }

    /// `t_z(j/N)` for `j = 0..=N`; nondecreasing from exactly 0 to exactly 1.
    pub fn t_of_tau(&self) -> &[f64] {
        self.map.table()
    }

    /// `t_z(τ)` for `τ ∈ [0, 1]`.
    pub fn eval(&self, tau: f64) -> f64 {
        self.map.eval(tau)
    }

    /// `τ_z(t)` for `t ∈ [0, 1]`.
    pub fn inverse(&self, t: f64) -> f64 {
        self.map.inverse(t)
    }
}

/// A closed physical loop sampled at `t_j = j/M`.
#[derive(Debug, Clone, PartialEq)]
pub struct PhysicalLoop {
    samples: Vec<ComplexPoint>,
    collision_times: Vec<f64>,
    velocities: Option<Vec<ComplexPoint>>,
}

impl PhysicalLoop {
    /// Wraps raw samples; collisions are detected at the nodes only.
    pub fn new(samples: Vec<ComplexPoint>) -> Result<Self> {
        Self::with_clearance(samples, COLLISION_CLEARANCE)
    }

    pub fn with_clearance(samples: Vec<ComplexPoint>, clearance: f64) -> Result<Self> {
        if samples.len() < 4 {
            return Err(Error::InvalidLoop("physical loop needs at least 4 samples".into()));
        }
        if samples.iter().any(|q| !(q.re.is_finite() && q.im.is_finite())) {
            return Err(Error::InvalidLoop("non-finite physical sample".into()));
        }
        let m = samples.len() as f64;
        let collision_times = samples
            .iter()
            .enumerate()
            .filter(|(_, q)| primary_distance(**q) < clearance)
            .map(|(j, _)| j as f64 / m)
            .collect();
        Ok(Self {
            samples,
            collision_times,
            velocities: None,
        })
    }

    /// Rebuilds a loop from stored samples and collision times.
    pub fn from_parts(samples: Vec<ComplexPoint>, collision_times: Vec<f64>) -> Result<Self> {
        let mut q = Self::with_clearance(samples, 0.0)?;
        if collision_times.iter().any(|t| !(0.0..1.0).contains(t)) {
            return Err(Error::InvalidLoop("collision time outside [0, 1)".into()));
        }
        q.collision_times = collision_times;
        Ok(q)
    }

    pub fn samples(&self) -> &[ComplexPoint] {
        &self.samples
    }

    pub fn m(&self) -> usize {
        self.samples.len()
    }

    pub fn times(&self) -> Vec<f64> {
        let m = self.m() as f64;
        (0..self.m()).map(|j| j as f64 / m).collect()
    }

    pub fn collision_times(&self) -> &[f64] {
        &self.collision_times
    }

    /// Chain-rule velocities, present when reconstructed from a z-loop.
    /// Entries at collisions may be non-finite.
    pub fn velocities(&self) -> Option<&[ComplexPoint]> {
        self.velocities.as_deref()
    }

    /// Stored velocities, or the spectral derivative of the samples.
    pub fn velocity_or_spectral(&self) -> Vec<ComplexPoint> {
        match &self.velocities {
            Some(v) => v.clone(),
            None => spectral::derivative(&self.samples, 1.0),
        }
    }

    pub fn lift(&self, n: usize) -> Result<DiscreteLoop> {
        lift(self, n)
    }
}

fn primary_distance(q: ComplexPoint) -> f64 {
    (q - PLUS_ONE).norm().min((q - MINUS_ONE).norm())
}

/// `q_z(j/M) = B(z(τ_z(j/M)))` with collision times located by refining the
/// minima of `|B(z(τ)) ∓ 1|`.
pub fn reconstruct_with(z: &DiscreteLoop, m: usize, clearance: f64) -> Result<PhysicalLoop> {
    if m < 4 {
        return Err(Error::InvalidLoop("physical loop needs at least 4 samples".into()));
    }
    let tm = z.time_map()?;
    let it = z.interpolant();
    let zhat = tm.zhat();
    let mut samples = Vec::with_capacity(m);
    let mut velocities = Vec::with_capacity(m);
    for j in 0..m {
        let tau = tm.inverse(j as f64 / m as f64);
        let zz = it.eval(tau);
        let dz = it.eval_derivative(tau);
        samples.push(birkhoff_unchecked(zz));
        let w = weight_unchecked(zz);
        velocities.push(birkhoff_derivative_unchecked(zz) * dz * (zhat / w));
    }

    let mut collision_times = Vec::new();
    let n = z.n();
    let q = z.birkhoff_image();
    for center in [MINUS_ONE, PLUS_ONE] {
        let d: Vec<f64> = q.iter().map(|v| (v - center).norm()).collect();
        for j in 0..n {
            let prev = d[(j + n - 1) % n];
            let next = d[(j + 1) % n];
            if d[j] > prev || d[j] > next {
                continue;
            }
            let h = 1.0 / n as f64;
            let tau0 = j as f64 * h;
            let f = |tau: f64| (birkhoff_unchecked(it.eval(tau)) - center).norm();
            let (tau_c, dist) = golden_min(f, tau0 - h, tau0 + h);
            if dist < clearance {
                let t = tm.eval(tau_c.rem_euclid(1.0));
                if !collision_times
                    .iter()
                    .any(|&s: &f64| periodic_gap(s, t) < 0.5 / m as f64)
                {
                    collision_times.push(t);
                }
            }
        }
    }
    collision_times.sort_by(|a, b| a.total_cmp(b));

    Ok(PhysicalLoop {
        samples,
        collision_times,
        velocities: Some(velocities),
    })
}

pub(crate) fn periodic_gap(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

fn golden_min(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> (f64, f64) {
    let g = 0.5 * (5.0_f64.sqrt() - 1.0);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-13 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    (x, f(x))
}

/// Lifts a collision-free physical loop through the Birkhoff cover and
/// resamples it to `n` uniform loop parameters.
pub fn lift(q: &PhysicalLoop, n: usize) -> Result<DiscreteLoop> {
    lift_with(q, n, COLLISION_CLEARANCE)
}

pub fn lift_with(q: &PhysicalLoop, n: usize, clearance: f64) -> Result<DiscreteLoop> {
    let qs = q.samples();
    let m = qs.len();
    if let Some(index) = qs.iter().position(|&v| primary_distance(v) < clearance) {
        return Err(Error::LiftThroughBranchPoint { index });
    }
    let roots = |v: ComplexPoint| {
        let s = (v * v - 1.0).sqrt();
        (v + s, v - s)
    };
    let pick = |prev: ComplexPoint, v: ComplexPoint, index: usize| -> Result<ComplexPoint> {
        let (a, b) = roots(v);
        let (da, db) = ((a - prev).norm(), (b - prev).norm());
        if da.min(db) >= 0.5 * (a - b).norm() {
            return Err(Error::UndersampledLift { index });
        }
        Ok(if da <= db { a } else { b })
    };

    let (a, b) = roots(qs[0]);
    let mut zs = Vec::with_capacity(m);
    zs.push(if a.norm() >= b.norm() { a } else { b });
    for (j, &v) in qs.iter().enumerate().skip(1) {
        let prev = zs[j - 1];
        zs.push(pick(prev, v, j)?);
    }
    let closing = pick(zs[m - 1], qs[0], 0)?;
    let twisted = (closing - zs[0]).norm() > (closing - zs[0].inv()).norm();

    // Reparametrize from uniform t to uniform τ: dτ/dt ∝ 1/w.
    let inv_w: Vec<f64> = zs.iter().map(|&v| 1.0 / weight_unchecked(v)).collect();
    let tau_of_t = MonotoneMap::new(&inv_w);
    let zt = if twisted {
        let mut cover = zs.clone();
        cover.extend(zs.iter().map(|v| v.inv()));
        Interpolant::new(&cover, 2.0)
    } else {
        Interpolant::new(&zs, 1.0)
    };
    DiscreteLoop::from_fn(n, twisted, |tau| zt.eval(tau_of_t.inverse(tau)))
}

/// Uniform-speed circle `c + r e^{2πiτ}`.
pub fn circle(n: usize, center: ComplexPoint, radius: f64) -> Result<DiscreteLoop> {
    DiscreteLoop::from_fn(n, false, |tau| {
        center + radius * Complex64::cis(2.0 * PI * tau)
    })
}
