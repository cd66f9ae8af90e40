//! Mass ratio, magnetic field with gauge primitive, and the time-periodic
//! electric potential.

use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{ComplexPoint, MINUS_ONE, PLUS_ONE};

/// A user-supplied magnetic field. `gauge` must satisfy
/// `∂₁a₂ − ∂₂a₁ = field`.
pub trait MagneticField: Send + Sync {
    fn field(&self, q: ComplexPoint) -> f64;
    /// Gauge primitive `(a₁, a₂)` packed as `a₁ + i a₂`.
    fn gauge(&self, q: ComplexPoint) -> ComplexPoint;
    /// `[[∂₁a₁, ∂₂a₁], [∂₁a₂, ∂₂a₂]]`. Defaults to central differences.
    fn gauge_jacobian(&self, q: ComplexPoint) -> [[f64; 2]; 2] {
        let h = 1e-6 * (1.0 + q.norm());
        let dx = (self.gauge(q + h) - self.gauge(q - h)) / (2.0 * h);
        let i = Complex64::i();
        let dy = (self.gauge(q + i * h) - self.gauge(q - i * h)) / (2.0 * h);
        [[dx.re, dy.re], [dx.im, dy.im]]
    }
}

/// A user-supplied electric potential, 1-periodic in `t`.
pub trait ElectricField: Send + Sync {
    fn potential(&self, t: f64, q: ComplexPoint) -> f64;
    /// `∂₁E + i ∂₂E`.
    fn gradient(&self, t: f64, q: ComplexPoint) -> ComplexPoint;
    fn time_derivative(&self, t: f64, q: ComplexPoint) -> f64;
}

#[derive(Clone)]
pub enum MagneticSpec {
    Zero,
    Constant { b: f64 },
    Custom(Arc<dyn MagneticField>),
}

#[derive(Clone)]
pub enum ElectricSpec {
    Zero,
    UniformOscillating { epsilon: f64, direction: ComplexPoint },
    RotatingCharge { mu_s: f64, r_s: f64, k: i64, theta0: f64 },
    Custom(Arc<dyn ElectricField>),
}

impl fmt::Debug for MagneticSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => write!(f, "Zero"),
            Self::Constant { b } => write!(f, "Constant {{ b: {b} }}"),
            Self::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl fmt::Debug for ElectricSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Zero => write!(f, "Zero"),
            Self::UniformOscillating { epsilon, direction } => {
                write!(f, "UniformOscillating {{ epsilon: {epsilon}, direction: {direction} }}")
            }
            Self::RotatingCharge { mu_s, r_s, k, theta0 } => write!(
                f,
                "RotatingCharge {{ mu_s: {mu_s}, r_s: {r_s}, k: {k}, theta0: {theta0} }}"
            ),
            Self::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl MagneticSpec {
    pub fn constant(b: f64) -> Self {
        Self::Constant { b }
    }

    pub fn field(&self, q: ComplexPoint) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::Constant { b } => *b,
            Self::Custom(m) => m.field(q),
        }
    }

    pub fn gauge(&self, q: ComplexPoint) -> ComplexPoint {
        match self {
            Self::Zero => Complex64::new(0.0, 0.0),
            Self::Constant { b } => Complex64::new(-0.5 * b * q.im, 0.5 * b * q.re),
            Self::Custom(m) => m.gauge(q),
        }
    }

    pub fn gauge_jacobian(&self, q: ComplexPoint) -> [[f64; 2]; 2] {
        match self {
            Self::Zero => [[0.0; 2]; 2],
            Self::Constant { b } => [[0.0, -0.5 * b], [0.5 * b, 0.0]],
            Self::Custom(m) => m.gauge_jacobian(q),
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Self::Zero) || matches!(self, Self::Constant { b } if *b == 0.0)
    }
}

impl ElectricSpec {
    pub fn uniform_oscillating(epsilon: f64, direction: ComplexPoint) -> Self {
        Self::UniformOscillating { epsilon, direction }
    }

    /// A third attracting charge circling the origin `k` times per period.
    /// Loosely modelled on bicircular perturbations; not a reproduction of
    /// any particular restricted four-body model.
    pub fn rotating_charge(mu_s: f64, r_s: f64, k: i64, theta0: f64) -> Self {
        if r_s <= 1.0 {
            log::warn!("third center may intersect orbit region (r_s = {r_s})");
        }
        Self::RotatingCharge { mu_s, r_s, k, theta0 }
    }

    /// Position of the rotating charge.
    pub fn charge_position(r_s: f64, k: i64, theta0: f64, t: f64) -> ComplexPoint {
        Complex64::from_polar(r_s, 2.0 * PI * k as f64 * t + theta0)
    }

    pub fn potential(&self, t: f64, q: ComplexPoint) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::UniformOscillating { epsilon, direction } => {
                epsilon * (2.0 * PI * t).cos() * dot(*direction, q)
            }
            Self::RotatingCharge { mu_s, r_s, k, theta0 } => {
                let d = q - Self::charge_position(*r_s, *k, *theta0, t);
                -mu_s / d.norm()
            }
            Self::Custom(e) => e.potential(t, q),
        }
    }

    pub fn gradient(&self, t: f64, q: ComplexPoint) -> ComplexPoint {
        match self {
            Self::Zero => Complex64::new(0.0, 0.0),
            Self::UniformOscillating { epsilon, direction } => {
                direction * (epsilon * (2.0 * PI * t).cos())
            }
            Self::RotatingCharge { mu_s, r_s, k, theta0 } => {
                let d = q - Self::charge_position(*r_s, *k, *theta0, t);
                d * (mu_s / d.norm().powi(3))
            }
            Self::Custom(e) => e.gradient(t, q),
        }
    }

    pub fn time_derivative(&self, t: f64, q: ComplexPoint) -> f64 {
        match self {
            Self::Zero => 0.0,
            Self::UniformOscillating { epsilon, direction } => {
                -2.0 * PI * epsilon * (2.0 * PI * t).sin() * dot(*direction, q)
            }
            Self::RotatingCharge { mu_s, r_s, k, theta0 } => {
                let qs = Self::charge_position(*r_s, *k, *theta0, t);
                let vs = Complex64::i() * (2.0 * PI * *k as f64) * qs;
                let d = q - qs;
                -mu_s * dot(d, vs) / d.norm().powi(3)
            }
            Self::Custom(e) => e.time_derivative(t, q),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Self::Zero => true,
            Self::UniformOscillating { epsilon, direction } => {
                *epsilon == 0.0 || direction.norm() == 0.0
            }
            Self::RotatingCharge { mu_s, .. } => *mu_s == 0.0,
            Self::Custom(_) => false,
        }
    }
}

#[inline]
pub(crate) fn dot(a: ComplexPoint, b: ComplexPoint) -> f64 {
    a.re * b.re + a.im * b.im
}

/// Complete problem data.
#[derive(Debug, Clone)]
pub struct FieldConfig {
    pub mu: f64,
    pub magnetic: MagneticSpec,
    pub electric: ElectricSpec,
}

impl FieldConfig {
    pub fn new(mu: f64, magnetic: MagneticSpec, electric: ElectricSpec) -> Result<Self> {
        if !(0.0..=1.0).contains(&mu) {
            return Err(Error::InvalidFields(format!("mu = {mu} outside [0, 1]")));
        }
        let finite = |x: f64| x.is_finite();
        let ok = match &magnetic {
            MagneticSpec::Constant { b } => finite(*b),
            _ => true,
        } && match &electric {
            ElectricSpec::UniformOscillating { epsilon, direction } => {
                finite(*epsilon) && finite(direction.re) && finite(direction.im)
            }
            ElectricSpec::RotatingCharge { mu_s, r_s, theta0, .. } => {
                finite(*mu_s) && finite(*r_s) && *r_s > 0.0 && finite(*theta0)
            }
            _ => true,
        };
        if !ok {
            return Err(Error::InvalidFields("non-finite or invalid field parameter".into()));
        }
        Ok(Self {
            mu,
            magnetic,
            electric,
        })
    }

    /// Two-center problem without external fields.
    pub fn euler(mu: f64) -> Result<Self> {
        Self::new(mu, MagneticSpec::Zero, ElectricSpec::Zero)
    }

    /// Builds a configuration from preset names.
    ///
    /// Magnetic: `zero`, `constant` (`[b]`). Electric: `zero`,
    /// `uniform_oscillating` (`[epsilon, d_re, d_im]`), `rotating_charge`
    /// (`[mu_s, r_s, k, theta0]`).
    pub fn preset(
        mu: f64,
        magnetic: (&str, &[f64]),
        electric: (&str, &[f64]),
    ) -> Result<Self> {
        let bad = |name: &str, want: usize, got: usize| {
            Error::InvalidFields(format!("preset {name} expects {want} parameters, got {got}"))
        };
        let m = match magnetic {
            ("zero", []) => MagneticSpec::Zero,
            ("constant", [b]) => MagneticSpec::constant(*b),
            ("zero", p) => return Err(bad("zero", 0, p.len())),
            ("constant", p) => return Err(bad("constant", 1, p.len())),
            (other, _) => {
                return Err(Error::InvalidFields(format!("unknown magnetic preset {other}")))
            }
        };
        let e = match electric {
            ("zero", []) => ElectricSpec::Zero,
            ("uniform_oscillating", [eps, dx, dy]) => {
                ElectricSpec::uniform_oscillating(*eps, Complex64::new(*dx, *dy))
            }
            ("rotating_charge", [mu_s, r_s, k, th]) => {
                if k.fract() != 0.0 {
                    return Err(Error::InvalidFields("rotating_charge k must be an integer".into()));
                }
                ElectricSpec::rotating_charge(*mu_s, *r_s, *k as i64, *th)
            }
            ("zero", p) => return Err(bad("zero", 0, p.len())),
            ("uniform_oscillating", p) => return Err(bad("uniform_oscillating", 3, p.len())),
            ("rotating_charge", p) => return Err(bad("rotating_charge", 4, p.len())),
            (other, _) => {
                return Err(Error::InvalidFields(format!("unknown electric preset {other}")))
            }
        };
        Self::new(mu, m, e)
    }

    pub fn with_mu(&self, mu: f64) -> Result<Self> {
        Self::new(mu, self.magnetic.clone(), self.electric.clone())
    }

    pub fn with_electric(&self, electric: ElectricSpec) -> Result<Self> {
        Self::new(self.mu, self.magnetic.clone(), electric)
    }

    /// True when the electric potential is time independent (here: absent).
    pub fn is_autonomous(&self) -> bool {
        self.electric.is_zero()
    }

    /// `U(q) = −(1−μ)/|q+1| − μ/|q−1|`.
    pub fn potential(&self, q: ComplexPoint) -> f64 {
        let mut u = 0.0;
        if self.mu < 1.0 {
            u -= (1.0 - self.mu) / (q - MINUS_ONE).norm();
        }
        if self.mu > 0.0 {
            u -= self.mu / (q - PLUS_ONE).norm();
        }
        u
    }

    pub fn b(&self, q: ComplexPoint) -> f64 {
        self.magnetic.field(q)
    }

    pub fn gauge(&self, q: ComplexPoint) -> ComplexPoint {
        self.magnetic.gauge(q)
    }

    pub fn gauge_jacobian(&self, q: ComplexPoint) -> [[f64; 2]; 2] {
        self.magnetic.gauge_jacobian(q)
    }

    pub fn e(&self, t: f64, q: ComplexPoint) -> f64 {
        self.electric.potential(t, q)
    }

    pub fn grad_e(&self, t: f64, q: ComplexPoint) -> ComplexPoint {
        self.electric.gradient(t, q)
    }

    pub fn dot_e(&self, t: f64, q: ComplexPoint) -> f64 {
        self.electric.time_derivative(t, q)
    }

    /// Consistency checks on a fixed pseudo-random point cloud.
    pub fn validate(&self) -> FieldReport {
        validate(self)
    }

    pub fn to_block(&self) -> Result<FieldsBlock> {
        FieldsBlock::try_from(self)
    }
}

/// Maximum violations found by [`FieldConfig::validate`].
#[derive(Debug, Clone, Default, Serialize)]
pub struct FieldReport {
    pub curl: f64,
    pub gauge_jacobian: f64,
    pub periodicity: f64,
    pub grad_e: f64,
    pub dot_e: f64,
    pub failures: Vec<String>,
}

impl FieldReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn into_result(self) -> Result<Self> {
        if self.passed() {
            Ok(self)
        } else {
            Err(Error::FieldValidation(self.failures))
        }
    }
}

const VALIDATION_SEED: u64 = 0x5eed_f1e1d;
const DERIVATIVE_TOL: f64 = 1e-6;
const PERIODICITY_TOL: f64 = 1e-10;

fn validate(cfg: &FieldConfig) -> FieldReport {
    let mut rng = ChaCha8Rng::seed_from_u64(VALIDATION_SEED);
    let mut rep = FieldReport::default();
    let h = 1e-5;
    let i = Complex64::i();
    let mut checked = 0;
    while checked < 64 {
        let q = Complex64::new(rng.gen_range(-2.5..2.5), rng.gen_range(-2.5..2.5));
        let t: f64 = rng.gen_range(0.0..1.0);
        if let ElectricSpec::RotatingCharge { r_s, k, theta0, .. } = cfg.electric {
            let qs = ElectricSpec::charge_position(r_s, k, theta0, t);
            if (q - qs).norm() < 0.3 {
                continue;
            }
        }
        checked += 1;

        let ax = (cfg.gauge(q + h) - cfg.gauge(q - h)) / (2.0 * h);
        let ay = (cfg.gauge(q + i * h) - cfg.gauge(q - i * h)) / (2.0 * h);
        let curl = ax.im - ay.re;
        let scale = 1.0 + cfg.b(q).abs();
        rep.curl = rep.curl.max((curl - cfg.b(q)).abs() / scale);
        let jac = cfg.gauge_jacobian(q);
        let jdiff = (jac[0][0] - ax.re).abs()
            + (jac[1][0] - ax.im).abs()
            + (jac[0][1] - ay.re).abs()
            + (jac[1][1] - ay.im).abs();
        rep.gauge_jacobian = rep.gauge_jacobian.max(jdiff / (1.0 + ax.norm() + ay.norm()));

        let e0 = cfg.e(t, q);
        let escale = 1.0 + e0.abs();
        for shift in [1.0, -1.0, 2.0] {
            let v = (cfg.e(t + shift, q) - e0).abs() / escale;
            rep.periodicity = rep.periodicity.max(v);
        }
        let gx = (cfg.e(t, q + h) - cfg.e(t, q - h)) / (2.0 * h);
        let gy = (cfg.e(t, q + i * h) - cfg.e(t, q - i * h)) / (2.0 * h);
        let g = cfg.grad_e(t, q);
        let gscale = 1.0 + g.norm();
        rep.grad_e = rep.grad_e.max((g - Complex64::new(gx, gy)).norm() / gscale);
        let et = (cfg.e(t + h, q) - cfg.e(t - h, q)) / (2.0 * h);
        let d = cfg.dot_e(t, q);
        rep.dot_e = rep.dot_e.max((d - et).abs() / (1.0 + d.abs()));
    }
    let mut push = |ok: bool, name: &str, v: f64| {
        if !ok || !v.is_finite() {
            rep.failures.push(format!("{name} ({v:e})"));
        }
    };
    push(rep.curl < DERIVATIVE_TOL, "curl mismatch", rep.curl);
    push(
        rep.gauge_jacobian < DERIVATIVE_TOL,
        "gauge jacobian mismatch",
        rep.gauge_jacobian,
    );
    push(
        rep.periodicity < PERIODICITY_TOL,
        "periodicity violation",
        rep.periodicity,
    );
    push(rep.grad_e < DERIVATIVE_TOL, "grad_E mismatch", rep.grad_e);
    push(rep.dot_e < DERIVATIVE_TOL, "dot_E mismatch", rep.dot_e);
    rep
}

/// JSON form of a [`FieldConfig`]; custom fields have no representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FieldsBlock {
    pub mu: f64,
    #[serde(default = "MagneticBlock::zero")]
    pub magnetic: MagneticBlock,
    #[serde(default = "ElectricBlock::zero")]
    pub electric: ElectricBlock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MagneticBlock {
    Zero,
    Constant { b: f64 },
}

impl MagneticBlock {
    fn zero() -> Self {
        Self::Zero
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ElectricBlock {
    Zero,
    UniformOscillating { epsilon: f64, d: [f64; 2] },
    RotatingCharge { mu_s: f64, r_s: f64, k: i64, theta0: f64 },
}

impl ElectricBlock {
    fn zero() -> Self {
        Self::Zero
    }
}

impl TryFrom<&FieldConfig> for FieldsBlock {
    type Error = Error;

    fn try_from(c: &FieldConfig) -> Result<Self> {
        let magnetic = match &c.magnetic {
            MagneticSpec::Zero => MagneticBlock::Zero,
            MagneticSpec::Constant { b } => MagneticBlock::Constant { b: *b },
            MagneticSpec::Custom(_) => {
                return Err(Error::InvalidFields("custom magnetic field is not serializable".into()))
            }
        };
        let electric = match &c.electric {
            ElectricSpec::Zero => ElectricBlock::Zero,
            ElectricSpec::UniformOscillating { epsilon, direction } => {
                ElectricBlock::UniformOscillating {
                    epsilon: *epsilon,
                    d: [direction.re, direction.im],
                }
            }
            ElectricSpec::RotatingCharge { mu_s, r_s, k, theta0 } => ElectricBlock::RotatingCharge {
                mu_s: *mu_s,
                r_s: *r_s,
                k: *k,
                theta0: *theta0,
            },
            ElectricSpec::Custom(_) => {
                return Err(Error::InvalidFields("custom electric field is not serializable".into()))
            }
        };
        Ok(Self {
            mu: c.mu,
            magnetic,
            electric,
        })
    }
}

impl TryFrom<FieldsBlock> for FieldConfig {
    type Error = Error;

    fn try_from(b: FieldsBlock) -> Result<Self> {
        let magnetic = match b.magnetic {
            MagneticBlock::Zero => MagneticSpec::Zero,
            MagneticBlock::Constant { b } => MagneticSpec::constant(b),
        };
        let electric = match b.electric {
            ElectricBlock::Zero => ElectricSpec::Zero,
            ElectricBlock::UniformOscillating { epsilon, d } => {
                ElectricSpec::uniform_oscillating(epsilon, Complex64::new(d[0], d[1]))
            }
            ElectricBlock::RotatingCharge { mu_s, r_s, k, theta0 } => {
                ElectricSpec::rotating_charge(mu_s, r_s, k, theta0)
            }
        };
        FieldConfig::new(b.mu, magnetic, electric)
    }
}
