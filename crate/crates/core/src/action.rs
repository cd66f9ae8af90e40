//! The regularized functional on sampled loops, its exact discrete gradient,
//! the physical action and the delay Euler–Lagrange residual.

use std::fmt;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fields::{dot, FieldConfig};
use crate::geometry::{
    birkhoff_derivative_unchecked, birkhoff_unchecked, weight_gradient, MINUS_ONE, PLUS_ONE,
};
use crate::loopspace::{
    DiscreteLoop, Periodic, PhysicalLoop, COLLISION_CLEARANCE,
};
use crate::spectral::{self, cumulative_transpose, CumulativeIntegral};

type C = Complex64;

/// Component values and the assembled total.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ActionBreakdown {
    #[serde(rename = "F")]
    pub f: f64,
    #[serde(rename = "G")]
    pub g: f64,
    #[serde(rename = "H1")]
    pub h1: f64,
    #[serde(rename = "H2")]
    pub h2: f64,
    #[serde(rename = "M")]
    pub m: f64,
    #[serde(rename = "E")]
    pub e_val: f64,
    #[serde(rename = "E1")]
    pub e1: f64,
    #[serde(skip)]
    pub mu: f64,
    #[serde(skip)]
    pub total: f64,
}

impl ActionBreakdown {
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn assemble(f: f64, g: f64, h1: f64, h2: f64, m: f64, e_val: f64, e1: f64, mu: f64) -> Self {
        let h = (1.0 - mu) * h1 + mu * h2;
        Self {
            f,
            g,
            h1,
            h2,
            m,
            e_val,
            e1,
            mu,
            total: f * g + h / f - m - e_val,
        }
    }

    /// Mass-weighted potential part `(1−μ)H1 + μH2`.
    pub fn h(&self) -> f64 {
        (1.0 - self.mu) * self.h1 + self.mu * self.h2
    }

    /// The constant of the delay equation.
    pub fn c(&self) -> f64 {
        self.f * self.g - self.h() / self.f + self.e_val + self.e1
    }
}

/// Names of the gradient components.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Component {
    F,
    G,
    H1,
    H2,
    M,
    E,
}

impl Component {
    pub const ALL: [Component; 6] = [
        Component::F,
        Component::G,
        Component::H1,
        Component::H2,
        Component::M,
        Component::E,
    ];

    pub fn value(&self, b: &ActionBreakdown) -> f64 {
        match self {
            Component::F => b.f,
            Component::G => b.g,
            Component::H1 => b.h1,
            Component::H2 => b.h2,
            Component::M => b.m,
            Component::E => b.e_val,
        }
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Component::F => "F",
            Component::G => "G",
            Component::H1 => "H1",
            Component::H2 => "H2",
            Component::M => "M",
            Component::E => "E",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Component {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "F" => Component::F,
            "G" => Component::G,
            "H1" => Component::H1,
            "H2" => Component::H2,
            "M" => Component::M,
            "E" => Component::E,
            other => return Err(Error::InvalidOptions(format!("unknown component {other}"))),
        })
    }
}

/// Gradients of the individual components. Each is the L² gradient with
/// respect to the samples: `dX·ξ = (1/N) Σ Re(conj(g_j) ξ_j)`.
#[derive(Debug, Clone)]
pub struct ComponentGradients {
    pub f: Vec<C>,
    pub g: Vec<C>,
    pub h1: Vec<C>,
    pub h2: Vec<C>,
    pub m: Vec<C>,
    pub e: Vec<C>,
}

impl ComponentGradients {
    pub fn get(&self, c: Component) -> &[C] {
        match c {
            Component::F => &self.f,
            Component::G => &self.g,
            Component::H1 => &self.h1,
            Component::H2 => &self.h2,
            Component::M => &self.m,
            Component::E => &self.e,
        }
    }

    pub(crate) fn flip(&mut self, c: Component) {
        self.get_mut(c).iter_mut().for_each(|v| *v = -*v);
    }

    fn get_mut(&mut self, c: Component) -> &mut Vec<C> {
        match c {
            Component::F => &mut self.f,
            Component::G => &mut self.g,
            Component::H1 => &mut self.h1,
            Component::H2 => &mut self.h2,
            Component::M => &mut self.m,
            Component::E => &mut self.e,
        }
    }
}

/// Shared intermediate quantities. Integrands involving `z'` are averaged
/// over `per`, the double cover for twisted loops, which keeps the discrete
/// functional exactly symmetric under the seam shift.
struct Pieces {
    z: Vec<C>,
    per: Periodic,
    w: Vec<f64>,
    q: Vec<C>,
    f: f64,
    t: Vec<f64>,
}

fn pieces(z: &DiscreteLoop) -> Result<Pieces> {
    let f = z.zhat()?;
    let zs = z.samples().to_vec();
    let per = Periodic::new(&zs, z.is_twisted());
    let w = z.weights();
    let ci = CumulativeIntegral::new(&w);
    let n = zs.len();
    let t = ci.nodes()[..n].iter().map(|v| v / f).collect();
    let q = zs.iter().map(|&v| birkhoff_unchecked(v)).collect();
    Ok(Pieces { z: zs, per, w, q, f, t })
}

fn breakdown_from(pc: &Pieces, cfg: &FieldConfig) -> Result<ActionBreakdown> {
    let n = pc.z.len() as f64;
    let mut g = 0.0;
    let mut h1 = 0.0;
    let mut h2 = 0.0;
    let mut m = 0.0;
    let mut ne = 0.0;
    let mut ne1 = 0.0;
    let magnetic = !cfg.magnetic.is_zero();
    let electric = !cfg.electric.is_zero();
    let k = pc.per.z.len() as f64;
    for (z, p) in pc.per.z.iter().zip(&pc.per.p) {
        g += 0.5 * p.norm_sqr() / z.norm_sqr();
        if magnetic {
            let v = birkhoff_derivative_unchecked(*z) * p;
            m += dot(cfg.gauge(birkhoff_unchecked(*z)), v);
        }
    }
    for j in 0..pc.z.len() {
        let z = pc.z[j];
        let r = z.norm();
        h1 += 0.5 * (z - PLUS_ONE).norm_sqr() / r;
        h2 += 0.5 * (z - MINUS_ONE).norm_sqr() / r;
        if electric {
            let t = pc.t[j];
            ne += cfg.e(t, pc.q[j]) * pc.w[j];
            ne1 += cfg.dot_e(t, pc.q[j]) * t * pc.w[j];
        }
    }
    let b = ActionBreakdown::assemble(
        pc.f,
        g / k,
        h1 / n,
        h2 / n,
        m / k,
        ne / n / pc.f,
        ne1 / n / pc.f,
        cfg.mu,
    );
    if !b.total.is_finite() {
        return Err(Error::Domain("non-finite action integrand".into()));
    }
    Ok(b)
}

pub fn eval_components(z: &DiscreteLoop, cfg: &FieldConfig) -> Result<ActionBreakdown> {
    breakdown_from(&pieces(z)?, cfg)
}

pub fn eval_action(z: &DiscreteLoop, cfg: &FieldConfig) -> Result<f64> {
    Ok(eval_components(z, cfg)?.total)
}

/// Physical action of a collision-free loop on its uniform time grid.
pub fn eval_unregularized(q: &PhysicalLoop, cfg: &FieldConfig) -> Result<f64> {
    let qs = q.samples();
    for (index, v) in qs.iter().enumerate() {
        if (v - PLUS_ONE).norm() < COLLISION_CLEARANCE || (v - MINUS_ONE).norm() < COLLISION_CLEARANCE {
            return Err(Error::SingularAction { index });
        }
    }
    let m = qs.len();
    let qdot = spectral::derivative(qs, 1.0);
    let mut acc = 0.0;
    for j in 0..m {
        let t = j as f64 / m as f64;
        acc += 0.5 * qdot[j].norm_sqr() - dot(cfg.gauge(qs[j]), qdot[j]) - cfg.potential(qs[j])
            - cfg.e(t, qs[j]);
    }
    Ok(acc / m as f64)
}

pub fn component_gradients(z: &DiscreteLoop, cfg: &FieldConfig) -> Result<ComponentGradients> {
    let pc = pieces(z)?;
    Ok(component_gradients_from(&pc, cfg))
}

fn component_gradients_from(pc: &Pieces, cfg: &FieldConfig) -> ComponentGradients {
    let n = pc.z.len();
    let zero = vec![C::new(0.0, 0.0); n];
    let phi: Vec<C> = pc.z.iter().map(|&z| weight_gradient(z)).collect();

    let mut h1 = Vec::with_capacity(n);
    let mut h2 = Vec::with_capacity(n);
    for &z in &pc.z {
        let r2 = z.norm_sqr();
        let r = r2.sqrt();
        h1.push(z * (z - 1.0) * (z.conj() + 1.0) / (2.0 * r * r2));
        h2.push(z * (z + 1.0) * (z.conj() - 1.0) / (2.0 * r * r2));
    }

    let per = &pc.per;
    let (mut g_direct, mut g_pbar) = (Vec::new(), Vec::new());
    for (&z, &p) in per.z.iter().zip(&per.p) {
        let r2 = z.norm_sqr();
        g_pbar.push(p / r2);
        g_direct.push(-z * (p.norm_sqr() / (r2 * r2)));
    }
    let g = per.pull_back(g_direct, &g_pbar);

    let m = if cfg.magnetic.is_zero() {
        zero.clone()
    } else {
        let (mut zbar, mut pbar) = (Vec::new(), Vec::new());
        for (&z, &p) in per.z.iter().zip(&per.p) {
            let q = birkhoff_unchecked(z);
            let bp = birkhoff_derivative_unchecked(z);
            let bpp = (z * z * z).inv();
            let v = bp * p;
            let a = cfg.gauge(q);
            let jac = cfg.gauge_jacobian(q);
            let qbar = C::new(
                jac[0][0] * v.re + jac[1][0] * v.im,
                jac[0][1] * v.re + jac[1][1] * v.im,
            );
            zbar.push(bp.conj() * qbar + (bpp * p).conj() * a);
            pbar.push(bp.conj() * a);
        }
        per.pull_back(zbar, &pbar)
    };

    let e = if cfg.electric.is_zero() {
        zero
    } else {
        electric_gradient(pc, cfg, &phi)
    };

    ComponentGradients {
        f: phi,
        g,
        h1,
        h2,
        m,
        e,
    }
}

fn electric_gradient(pc: &Pieces, cfg: &FieldConfig, phi: &[C]) -> Vec<C> {
    let n = pc.z.len();
    let f = pc.f;
    let mut ne = 0.0;
    let mut wbar = vec![0.0; n];
    let mut qbar = vec![C::new(0.0, 0.0); n];
    let mut ibar = vec![0.0; n];
    let mut fbar_t = 0.0;
    for j in 0..n {
        let (t, q, w) = (pc.t[j], pc.q[j], pc.w[j]);
        let e = cfg.e(t, q);
        ne += e * w;
        wbar[j] = e / f;
        qbar[j] = cfg.grad_e(t, q) * (w / f);
        let tbar = cfg.dot_e(t, q) * w / f;
        ibar[j] = tbar / f;
        fbar_t -= tbar * t / f;
    }
    ne /= n as f64;
    let fbar = -(ne / f) / f + fbar_t / n as f64;
    let st = cumulative_transpose(&ibar);
    (0..n)
        .map(|j| {
            let wb = wbar[j] + st[j] + fbar;
            phi[j] * wb + birkhoff_derivative_unchecked(pc.z[j]).conj() * qbar[j]
        })
        .collect()
}

fn assemble_gradient(b: &ActionBreakdown, cg: &ComponentGradients) -> Vec<C> {
    let (f, g, mu) = (b.f, b.g, b.mu);
    let h = b.h();
    (0..cg.f.len())
        .map(|j| {
            cg.f[j] * (g - h / (f * f)) + cg.g[j] * f + (cg.h1[j] * (1.0 - mu) + cg.h2[j] * mu) / f
                - cg.m[j]
                - cg.e[j]
        })
        .collect()
}

/// L² gradient of the discrete functional: `d𝓑·ξ = (1/N) Σ Re(conj(g_j) ξ_j)`.
pub fn gradient(z: &DiscreteLoop, cfg: &FieldConfig) -> Result<Vec<C>> {
    gradient_with_fault(z, cfg, None)
}

/// Gradient with one component's contribution sign-flipped. Used only as a
/// negative control for gradient checks.
#[doc(hidden)]
pub fn gradient_with_fault(
    z: &DiscreteLoop,
    cfg: &FieldConfig,
    fault: Option<Component>,
) -> Result<Vec<C>> {
    let pc = pieces(z)?;
    let b = breakdown_from(&pc, cfg)?;
    let mut cg = component_gradients_from(&pc, cfg);
    if let Some(c) = fault {
        cg.flip(c);
    }
    Ok(assemble_gradient(&b, &cg))
}

/// Value and gradient in one pass.
pub fn eval_with_gradient(z: &DiscreteLoop, cfg: &FieldConfig) -> Result<(ActionBreakdown, Vec<C>)> {
    let pc = pieces(z)?;
    let b = breakdown_from(&pc, cfg)?;
    let cg = component_gradients_from(&pc, cfg);
    Ok((b, assemble_gradient(&b, &cg)))
}

/// `(1/N) Σ Re(conj(a_j) b_j)`.
pub fn pairing(a: &[C], b: &[C]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x.conj() * y).re).sum::<f64>() / a.len() as f64
}

/// Pointwise defect of the delay Euler–Lagrange equation.
#[derive(Debug, Clone)]
pub struct DelayResidual {
    pub c: f64,
    pub residual: Vec<C>,
    pub sup_norm: f64,
    /// `sup_norm / max_j |z''_j|`.
    pub relative: f64,
    pub eps1: Vec<C>,
    pub eps2: Vec<C>,
    pub eps3: Vec<C>,
}

pub fn delay_residual(z: &DiscreteLoop, cfg: &FieldConfig) -> Result<DelayResidual> {
    let pc = pieces(z)?;
    let b = breakdown_from(&pc, cfg)?;
    let c = b.c();
    let f = pc.f;
    let mu = cfg.mu;
    let n = pc.z.len();
    let zpp = z.second_derivative();
    let electric = !cfg.electric.is_zero();

    let tail = if electric {
        let edw: Vec<f64> = (0..n)
            .map(|j| cfg.dot_e(pc.t[j], pc.q[j]) * pc.w[j])
            .collect();
        CumulativeIntegral::new(&edw).tail()
    } else {
        vec![0.0; n]
    };

    let mut residual = Vec::with_capacity(n);
    let mut eps1 = Vec::with_capacity(n);
    let mut eps2 = Vec::with_capacity(n);
    let mut eps3 = Vec::with_capacity(n);
    for j in 0..n {
        let zz = pc.z[j];
        let p = pc.per.p[j];
        let r2 = zz.norm_sqr();
        let r = r2.sqrt();
        let w = pc.w[j];
        let phi = weight_gradient(zz);
        let (e1, e2, e3) = if electric {
            let (t, q) = (pc.t[j], pc.q[j]);
            (
                phi * (tail[j] / f),
                cfg.grad_e(t, q) * birkhoff_derivative_unchecked(zz).conj() * w,
                phi * cfg.e(t, q),
            )
        } else {
            (C::new(0.0, 0.0), C::new(0.0, 0.0), C::new(0.0, 0.0))
        };
        let two_center = (zz * (zz - 1.0) * (zz.conj() + 1.0) * (1.0 - mu)
            + zz * (zz + 1.0) * (zz.conj() - 1.0) * mu)
            / r;
        let rhs = phi * (c * r2 / (f * f)) + zz.conj() * p * p / r2 + two_center / (2.0 * f * f)
            + C::i() * p * (w / f * cfg.b(pc.q[j]))
            - (e1 + e2 + e3) * (r2 / (f * f));
        residual.push(rhs - zpp[j]);
        eps1.push(e1);
        eps2.push(e2);
        eps3.push(e3);
    }
    let sup_norm = residual.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let scale = zpp.iter().map(|v| v.norm()).fold(0.0, f64::max);
    let relative = if scale > 0.0 { sup_norm / scale } else { sup_norm };
    Ok(DelayResidual {
        c,
        residual,
        sup_norm,
        relative,
        eps1,
        eps2,
        eps3,
    })
}

/// Scalar `C` computed directly from a loop.
pub fn delay_constant(z: &DiscreteLoop, cfg: &FieldConfig) -> Result<f64> {
    Ok(eval_components(z, cfg)?.c())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fields::{ElectricSpec, MagneticSpec};
    use crate::loopspace::circle;
    use std::f64::consts::PI;

    fn c(re: f64, im: f64) -> C {
        C::new(re, im)
    }

    fn all_on(mu: f64) -> FieldConfig {
        FieldConfig::new(
            mu,
            MagneticSpec::constant(2.0),
            ElectricSpec::rotating_charge(0.01, 3.0, 1, 0.2),
        )
        .unwrap()
    }

    fn oscillating(mu: f64) -> FieldConfig {
        FieldConfig::new(
            mu,
            MagneticSpec::constant(-0.7),
            ElectricSpec::uniform_oscillating(0.1, c(0.6, 0.8)),
        )
        .unwrap()
    }

    fn wobbly(n: usize, twisted: bool) -> DiscreteLoop {
        if twisted {
            DiscreteLoop::from_fn(n, true, |t| {
                let s = c(0.9 * (PI * t).cos(), 0.5 * (PI * t).sin())
                    + c(0.05 * (3.0 * PI * t).sin(), 0.03 * (3.0 * PI * t).cos());
                s.exp()
            })
            .unwrap()
        } else {
            DiscreteLoop::from_fn(n, false, |t| {
                let th = 2.0 * PI * t;
                2.0 * C::cis(th) + c(0.1, 0.05) * C::cis(2.0 * th) + c(0.03, -0.02) * C::cis(-3.0 * th)
            })
            .unwrap()
        }
    }

    fn direction(n: usize, seed: u64) -> Vec<C> {
        (0..n)
            .map(|j| {
                let t = j as f64 / n as f64;
                let a = (seed as f64 + 1.0) * 0.37;
                c(
                    (2.0 * PI * t + a).sin() + 0.3 * (4.0 * PI * t * (1.0 + seed as f64 % 3.0)).cos(),
                    (2.0 * PI * t * 2.0 - a).cos(),
                ) * 0.5
            })
            .collect()
    }

    /// Smooth variations; for twisted loops of the admissible form
    /// `ξ = z σ` with `σ(τ+1) = −σ(τ)`.
    fn admissible(z: &DiscreteLoop, seed: u64) -> Vec<C> {
        if !z.is_twisted() {
            return direction(z.n(), seed);
        }
        let a = 0.3 + 0.1 * seed as f64;
        z.samples()
            .iter()
            .enumerate()
            .map(|(j, v)| {
                let t = j as f64 / z.n() as f64;
                let sigma = c(a * (PI * t).cos(), 0.2 * (3.0 * PI * t + a).sin());
                v * sigma
            })
            .collect()
    }

    fn perturbed(z: &DiscreteLoop, xi: &[C], h: f64) -> DiscreteLoop {
        DiscreteLoop::new(
            z.samples().iter().zip(xi).map(|(a, b)| a + h * b).collect(),
            z.is_twisted(),
        )
        .unwrap()
    }

    fn fd<F: Fn(&DiscreteLoop) -> f64>(z: &DiscreteLoop, xi: &[C], h: f64, f: F) -> f64 {
        (f(&perturbed(z, xi, h)) - f(&perturbed(z, xi, -h))) / (2.0 * h)
    }

    #[test]
    fn radius_two_circle_components() {
        let z = circle(64, c(0.0, 0.0), 2.0).unwrap();
        let b = eval_components(&z, &FieldConfig::euler(0.3).unwrap()).unwrap();
        assert!((b.f - 1.0625).abs() < 1e-12);
        assert!((b.g - 2.0 * PI * PI).abs() < 1e-10);
        assert!((b.h1 - 1.25).abs() < 1e-12 && (b.h2 - 1.25).abs() < 1e-12);
        assert_eq!((b.m, b.e_val, b.e1), (0.0, 0.0, 0.0));

        let half = eval_components(&z, &FieldConfig::euler(0.5).unwrap()).unwrap();
        let expected = 1.0625 * 2.0 * PI * PI + 1.25 / 1.0625;
        assert!((half.total - expected).abs() < 1e-10);
        assert!((expected - 22.1494).abs() < 1e-4);

        let mag = FieldConfig::new(0.5, MagneticSpec::constant(1.5), ElectricSpec::Zero).unwrap();
        let bm = eval_components(&z, &mag).unwrap();
        assert!((bm.m - 1.5 * 15.0 * PI / 16.0).abs() < 1e-10);
    }

    #[test]
    fn constant_loop_components() {
        let z = DiscreteLoop::new(vec![c(0.0, 1.0); 16], false).unwrap();
        for mu in [0.0, 0.3, 1.0] {
            let b = eval_components(&z, &FieldConfig::euler(mu).unwrap()).unwrap();
            assert!((b.f - 1.0).abs() < 1e-15 && b.g == 0.0);
            assert!((b.h1 - 1.0).abs() < 1e-15 && (b.h2 - 1.0).abs() < 1e-15);
            assert!((b.total - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn unit_circle_is_regular() {
        let z = circle(64, c(0.0, 0.0), 1.0).unwrap();
        let cfg = all_on(0.5);
        let b = eval_components(&z, &cfg).unwrap();
        assert!((b.f - 0.5).abs() < 1e-12 && (b.g - 2.0 * PI * PI).abs() < 1e-10);
        assert!((b.h1 - 1.0).abs() < 1e-12 && (b.h2 - 1.0).abs() < 1e-12);
        assert!(gradient(&z, &cfg).unwrap().iter().all(|v| v.re.is_finite() && v.im.is_finite()));
    }

    #[test]
    fn unregularized_examples() {
        let r = 0.4;
        let m = 128;
        let q = PhysicalLoop::new(
            (0..m)
                .map(|j| c(-1.0, 0.0) + r * C::cis(2.0 * PI * j as f64 / m as f64))
                .collect(),
        )
        .unwrap();
        let a = eval_unregularized(&q, &FieldConfig::euler(0.0).unwrap()).unwrap();
        assert!((a - (2.0 * PI * PI * r * r + 1.0 / r)).abs() < 1e-12);

        let k = PhysicalLoop::new(vec![c(0.0, 2.0); 16]).unwrap();
        let a = eval_unregularized(&k, &FieldConfig::euler(0.5).unwrap()).unwrap();
        assert!((a - 1.0 / 5f64.sqrt()).abs() < 1e-15);

        let hit = PhysicalLoop::new(vec![c(1.0, 0.0); 16]).unwrap();
        assert!(matches!(
            eval_unregularized(&hit, &FieldConfig::euler(0.5).unwrap()),
            Err(Error::SingularAction { .. })
        ));
    }

    #[test]
    fn pullback_identity() {
        let z = wobbly(256, false);
        for cfg in [FieldConfig::euler(0.4).unwrap(), all_on(0.4), oscillating(0.4)] {
            let b = eval_action(&z, &cfg).unwrap();
            let q = z.reconstruct(256).unwrap();
            let a = eval_unregularized(&q, &cfg).unwrap();
            assert!(((a - b) / b).abs() < 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn component_gradients_match_finite_differences() {
        for twisted in [false, true] {
            let z = wobbly(64, twisted);
            for cfg in [all_on(0.3), oscillating(0.3)] {
                let cg = component_gradients(&z, &cfg).unwrap();
                for seed in 0..4 {
                    let xi = direction(64, seed);
                    for comp in Component::ALL {
                        let an = pairing(cg.get(comp), &xi);
                        let num = fd(&z, &xi, 1e-5, |l| {
                            comp.value(&eval_components(l, &cfg).unwrap())
                        });
                        assert!(
                            (an - num).abs() < 1e-7 * (1.0 + num.abs()),
                            "{comp} twisted={twisted}: {an} vs {num}"
                        );
                    }
                    let g = gradient(&z, &cfg).unwrap();
                    let an = pairing(&g, &xi);
                    let num = fd(&z, &xi, 1e-5, |l| eval_action(l, &cfg).unwrap());
                    assert!((an - num).abs() < 1e-7 * (1.0 + num.abs()), "total: {an} vs {num}");
                }
            }
        }
    }

    #[test]
    fn weight_gradient_matches_formula_level_pairing() {
        let z = wobbly(128, false);
        let xi = direction(128, 7);
        let num = fd(&z, &xi, 1e-5, |l| l.zhat().unwrap());
        let an: f64 = z
            .samples()
            .iter()
            .zip(&xi)
            .map(|(&v, x)| {
                let phi = v * (v * v - 1.0) * (v.conj() * v.conj() + 1.0) / (2.0 * v.norm_sqr().powi(2));
                dot(phi, *x)
            })
            .sum::<f64>()
            / 128.0;
        assert!((an - num).abs() < 1e-8);
    }

    #[test]
    fn involution_invariance_and_equivariance() {
        let cfg = all_on(0.35);
        for twisted in [false, true] {
            let z = wobbly(64, twisted);
            let zi = z.involuted();
            let a = eval_action(&z, &cfg).unwrap();
            let b = eval_action(&zi, &cfg).unwrap();
            assert!(((a - b) / a).abs() < 1e-12);
            let g = gradient(&z, &cfg).unwrap();
            let gi = gradient(&zi, &cfg).unwrap();
            let xi = admissible(&z, 3);
            let dxi: Vec<C> = z
                .samples()
                .iter()
                .zip(&xi)
                .map(|(v, x)| -x / (v * v))
                .collect();
            let lhs = pairing(&gi, &dxi);
            let rhs = pairing(&g, &xi);
            assert!((lhs - rhs).abs() < 1e-10 * (1.0 + rhs.abs()), "{lhs} vs {rhs}");
        }
    }

    #[test]
    fn delay_residual_is_scaled_gradient() {
        // residual = (|z|²/F)·∇𝓑 pointwise. With an electric field the
        // continuum gradient jumps at τ = 0 by a multiple of ∫Ė dt, so
        // agreement is only checked away from that seam.
        for twisted in [false, true] {
            let z = wobbly(256, twisted);
            for cfg in [FieldConfig::euler(0.3).unwrap(), all_on(0.3), oscillating(0.6)] {
                let d = delay_residual(&z, &cfg).unwrap();
                let (b, g) = eval_with_gradient(&z, &cfg).unwrap();
                let electric = !cfg.electric.is_zero();
                let mut err: f64 = 0.0;
                for (j, v) in z.samples().iter().enumerate() {
                    let tau = j as f64 / 256.0;
                    if electric && !(0.25..=0.75).contains(&tau) {
                        continue;
                    }
                    let scaled = g[j] * (v.norm_sqr() / b.f);
                    err = err.max((scaled - d.residual[j]).norm());
                }
                let tol = if electric { 1e-3 } else { 1e-10 };
                assert!(err < tol * (1.0 + d.sup_norm), "twisted={twisted} {:?} {:?}: {err} sup={}", cfg.magnetic, cfg.electric, d.sup_norm);
            }
        }
    }

    #[test]
    fn delay_residual_examples() {
        let z = circle(64, c(0.0, 0.0), 2.0).unwrap();
        let cfg = FieldConfig::euler(0.5).unwrap();
        let d = delay_residual(&z, &cfg).unwrap();
        assert!(d.sup_norm > 1.0);
        let b = eval_components(&z, &cfg).unwrap();
        let expected = b.f * b.g - b.h() / b.f + b.e_val + b.e1;
        assert!(((d.c - expected) / expected).abs() < 1e-12);
    }
}
