//! Finite-difference checks of the discrete gradient on random smooth loops.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::action::{self, Component};
use crate::error::{Error, Result};
use crate::fields::FieldConfig;
use crate::loopspace::DiscreteLoop;

type C = Complex64;

const PLAIN_MODES: [f64; 6] = [-3.0, -2.0, -1.0, 0.0, 2.0, 3.0];

/// Radius-2 circle plus a small random trigonometric perturbation, or for
/// twisted loops `exp(s)` with `s(τ+1) = −s(τ)` built from odd half-modes.
pub fn random_smooth_loop<R: Rng>(rng: &mut R, n: usize, twisted: bool) -> Result<DiscreteLoop> {
    let modes: Vec<(f64, C)> = (0..6)
        .map(|j| {
            let k = if twisted { (2 * j + 3) as f64 } else { PLAIN_MODES[j] };
            let amp = 0.08 / (1.0 + k.abs());
            (k, C::new(rng.gen_range(-amp..amp), rng.gen_range(-amp..amp)))
        })
        .collect();
    if twisted {
        let a = rng.gen_range(0.6..1.0);
        let b = rng.gen_range(0.4..0.8);
        DiscreteLoop::from_fn(n, true, |t| {
            let mut s = C::new(a * (PI * t).cos(), b * (PI * t).sin());
            for (k, c) in &modes {
                s += c * C::cis(PI * k * t);
            }
            s.exp()
        })
    } else {
        DiscreteLoop::from_fn(n, false, |t| {
            let mut z = 2.0 * C::cis(2.0 * PI * t);
            for (k, c) in &modes {
                z += c * C::cis(2.0 * PI * k * t);
            }
            z
        })
    }
}

/// Smooth random variation of `z`. Twisted variations have the form `z σ`
/// with `σ` antiperiodic so that the double cover stays smooth.
pub fn random_variation<R: Rng>(rng: &mut R, z: &DiscreteLoop) -> Vec<C> {
    let n = z.n();
    let coeffs: Vec<C> = (0..5)
        .map(|_| C::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)))
        .collect();
    let twisted = z.is_twisted();
    (0..n)
        .map(|j| {
            let t = j as f64 / n as f64;
            if twisted {
                let sigma: C = coeffs
                    .iter()
                    .enumerate()
                    .map(|(k, c)| c * C::cis(PI * (2 * k + 1) as f64 * t * if k % 2 == 0 { 1.0 } else { -1.0 }))
                    .sum();
                z.samples()[j] * sigma * 0.3
            } else {
                coeffs
                    .iter()
                    .enumerate()
                    .map(|(k, c)| c * C::cis(2.0 * PI * (k as f64 - 2.0) * t))
                    .sum::<C>()
                    * 0.5
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckOptions {
    pub n: usize,
    pub loops: usize,
    pub directions: usize,
    pub twisted: bool,
    /// Central-difference steps; the smallest error over the sweep counts.
    pub steps: Vec<f64>,
    pub tol: f64,
    pub rng_seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            n: 256,
            loops: 20,
            directions: 1,
            twisted: false,
            steps: vec![1e-4, 1e-5, 1e-6, 1e-7],
            tol: 1e-6,
            rng_seed: 7,
        }
    }
}

/// Worst relative error per term, `|⟨g, ξ⟩ − FD| / (|FD| + 1e-12)`.
#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub errors: Vec<(String, f64)>,
    pub max_error: f64,
    pub worst: String,
    pub cases: usize,
    pub passed: bool,
}

/// Errors for one loop and direction: each component, then `total`.
pub fn directional_errors(
    z: &DiscreteLoop,
    cfg: &FieldConfig,
    xi: &[C],
    steps: &[f64],
    fault: Option<Component>,
) -> Result<Vec<(String, f64)>> {
    if xi.len() != z.n() || steps.is_empty() {
        return Err(Error::InvalidOptions("direction length or step sweep mismatch".into()));
    }
    let mut cg = action::component_gradients(z, cfg)?;
    if let Some(c) = fault {
        cg.flip(c);
    }
    let g = action::gradient_with_fault(z, cfg, fault)?;
    let mut analytic: Vec<f64> = Component::ALL.iter().map(|&c| action::pairing(cg.get(c), xi)).collect();
    analytic.push(action::pairing(&g, xi));

    let mut best = vec![f64::INFINITY; analytic.len()];
    let shifted = |h: f64| {
        DiscreteLoop::new(z.samples().iter().zip(xi).map(|(a, b)| a + h * b).collect(), z.is_twisted())
            .and_then(|l| action::eval_components(&l, cfg))
    };
    for &h in steps {
        let (Ok(p), Ok(m)) = (shifted(h), shifted(-h)) else { continue };
        for (k, a) in analytic.iter().enumerate() {
            let (vp, vm) = match Component::ALL.get(k) {
                Some(c) => (c.value(&p), c.value(&m)),
                None => (p.total, m.total),
            };
            let fd = (vp - vm) / (2.0 * h);
            best[k] = best[k].min((a - fd).abs() / (fd.abs() + 1e-12));
        }
    }
    let mut names: Vec<String> = Component::ALL.iter().map(|c| c.to_string()).collect();
    names.push("total".into());
    Ok(names.into_iter().zip(best).collect())
}

/// Runs the check over `opts.loops` random loops for every configuration.
pub fn run(cfgs: &[FieldConfig], opts: &GradCheckOptions, fault: Option<Component>) -> Result<GradCheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.rng_seed);
    let mut errors: Vec<(String, f64)> = Vec::new();
    let mut cases = 0;
    for _ in 0..opts.loops {
        let z = random_smooth_loop(&mut rng, opts.n, opts.twisted)?;
        for _ in 0..opts.directions {
            let xi = random_variation(&mut rng, &z);
            for cfg in cfgs {
                let errs = directional_errors(&z, cfg, &xi, &opts.steps, fault)?;
                if errors.is_empty() {
                    errors = errs;
                } else {
                    for (acc, (_, e)) in errors.iter_mut().zip(errs) {
                        acc.1 = acc.1.max(e);
                    }
                }
                cases += 1;
            }
        }
    }
    // Name a component when one fails; `total` only fails on its own.
    let argmax = |rows: &[(String, f64)]| {
        rows.iter()
            .fold((String::new(), 0.0f64), |(w, m), (name, e)| if *e > m || e.is_nan() { (name.clone(), *e) } else { (w, m) })
    };
    let split = errors.len().saturating_sub(1);
    let (mut worst, mut max_error) = argmax(&errors[..split]);
    let total = errors.get(split).map_or(0.0, |r| r.1);
    if max_error < opts.tol && (total > max_error || total.is_nan()) {
        worst = "total".into();
        max_error = total;
    } else if total.is_nan() {
        max_error = f64::NAN;
    } else {
        max_error = max_error.max(total);
    }
    Ok(GradCheckReport {
        passed: max_error < opts.tol && cases > 0,
        errors,
        max_error,
        worst,
        cases,
    })
}

/// The preset grid {zero, constant b = 2} × {zero, oscillating ε = 0.1,
/// rotating charge μ_S = 0.01, R_S = 3, k = 1}.
pub fn preset_grid(mu: f64) -> Result<Vec<FieldConfig>> {
    let mags: [(&str, &[f64]); 2] = [("zero", &[]), ("constant", &[2.0])];
    let elecs: [(&str, &[f64]); 3] = [
        ("zero", &[]),
        ("uniform_oscillating", &[0.1, 1.0, 0.0]),
        ("rotating_charge", &[0.01, 3.0, 1.0, 0.0]),
    ];
    let mut out = Vec::new();
    for m in mags {
        for e in elecs {
            out.push(FieldConfig::preset(mu, m, e)?);
        }
    }
    Ok(out)
}
