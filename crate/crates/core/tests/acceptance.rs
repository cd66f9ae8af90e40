//! Acceptance criteria 1–10. Prints one PASS/FAIL line per criterion and
//! exits nonzero if any fails.

use std::f64::consts::PI;
use std::time::{Duration, Instant};

use num_complex::Complex64 as C;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use szbov_core::action::{self, pairing};
use szbov_core::dynamics::{self, VerifyOptions};
use szbov_core::fields::{ElectricSpec, FieldConfig, MagneticSpec};
use szbov_core::geometry::{self, WindingReport};
use szbov_core::gradcheck::{self, GradCheckOptions};
use szbov_core::loopspace::{self, PhysicalLoop};
use szbov_core::solver::{self, OrbitRecord, SolveOptions};

type Check = Result<String, String>;

fn ensure(ok: bool, msg: String) -> Check {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn kepler_radius() -> f64 {
    (4.0 * PI * PI).powf(-1.0 / 3.0)
}

fn c1_gradient() -> Check {
    let opts = GradCheckOptions::default();
    let rep = gradcheck::run(&gradcheck::preset_grid(0.3).map_err(|e| e.to_string())?, &opts, None)
        .map_err(|e| e.to_string())?;
    ensure(
        rep.passed && rep.cases == 120,
        format!("{} cases at N = {}, worst {} {:.2e}", rep.cases, opts.n, rep.worst, rep.max_error),
    )
}

fn c2_pullback() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let cfg = FieldConfig::new(
        0.3,
        MagneticSpec::constant(2.0),
        ElectricSpec::uniform_oscillating(0.1, C::new(0.6, 0.8)),
    )
    .map_err(|e| e.to_string())?;
    let err = |z: &loopspace::DiscreteLoop| -> Result<f64, String> {
        let b = action::eval_action(z, &cfg).map_err(|e| e.to_string())?;
        let q = z.reconstruct(z.n()).map_err(|e| e.to_string())?;
        let a = action::eval_unregularized(&q, &cfg).map_err(|e| e.to_string())?;
        Ok(((a - b) / b).abs())
    };
    let (mut worst, mut worst_ratio) = (0.0f64, f64::INFINITY);
    for _ in 0..10 {
        let z = gradcheck::random_smooth_loop(&mut rng, 1024, false).map_err(|e| e.to_string())?;
        let at = |n: usize| z.resample(n).map_err(|e| e.to_string()).and_then(|l| err(&l));
        worst = worst.max(at(512)?);
        // Doubling in the pre-asymptotic range; past the roundoff floor the
        // ratio is meaningless.
        for n in [32, 64, 128, 256] {
            let (e1, e2) = (at(n)?, at(2 * n)?);
            if e2 > 1e-12 {
                worst_ratio = worst_ratio.min(e1 / e2);
            }
        }
    }
    ensure(
        worst < 1e-8 && worst_ratio >= 4.0,
        format!("max rel error {worst:.2e} at N = M = 512, min doubling ratio {worst_ratio:.1}"),
    )
}

fn c3_involution() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let cfgs = gradcheck::preset_grid(0.4).map_err(|e| e.to_string())?;
    let (mut inv, mut eqv) = (0.0f64, 0.0f64);
    for k in 0..100 {
        let z = gradcheck::random_smooth_loop(&mut rng, 128, k % 2 == 1).map_err(|e| e.to_string())?;
        let cfg = &cfgs[k % cfgs.len()];
        let iz = z.involuted();
        let (b, g) = action::eval_with_gradient(&z, cfg).map_err(|e| e.to_string())?;
        let (bi, gi) = action::eval_with_gradient(&iz, cfg).map_err(|e| e.to_string())?;
        inv = inv.max(((bi.total - b.total) / b.total).abs());
        let xi = gradcheck::random_variation(&mut rng, &z);
        let dxi: Vec<C> = z.samples().iter().zip(&xi).map(|(v, x)| -x / (v * v)).collect();
        let (l, r) = (pairing(&gi, &dxi), pairing(&g, &xi));
        eqv = eqv.max((l - r).abs() / (1.0 + r.abs()));
    }
    ensure(inv < 1e-12 && eqv < 1e-10, format!("invariance {inv:.2e}, equivariance {eqv:.2e}"))
}

fn c4_kepler(store: &mut Vec<OrbitRecord>) -> Check {
    let cfg = FieldConfig::euler(0.0).map_err(|e| e.to_string())?;
    let seed = solver::kepler_guess(-1.0, 0.3, 256).map_err(|e| e.to_string())?;
    let r = solver::solve(&seed, &cfg, &SolveOptions::default()).map_err(|e| e.to_string())?;
    // μ = 0 has a degenerate family of Kepler ellipses of equal period; the
    // semi-major axis is the radius that the period fixes.
    let v = r.q.velocity_or_spectral();
    let (mut a_dev, mut ecc) = (0.0f64, 0.0f64);
    for (q, v) in r.q.samples().iter().zip(&v) {
        let el = dynamics::kepler_elements(*q, *v, geometry::MINUS_ONE, 1.0);
        a_dev = a_dev.max((el.semi_major_axis / kepler_radius() - 1.0).abs());
        ecc = ecc.max(el.eccentricity);
    }
    let action = 1.5 * (4.0 * PI * PI).powf(1.0 / 3.0);
    let a_err = (r.action() / action - 1.0).abs();
    let msg = format!(
        "{} iterations, twisted {}, semi-major axis rel dev {a_dev:.2e} (e = {ecc:.3}), action rel dev {a_err:.2e}",
        r.iterations, r.twisted
    );
    let ok = r.iterations <= 50 && r.twisted && a_dev < 1e-6 && a_err < 1e-6;
    store.push(r);
    ensure(ok, msg)
}

fn c5_equivalence(store: &mut Vec<OrbitRecord>) -> Check {
    let mk = |m: MagneticSpec, e: ElectricSpec| FieldConfig::new(0.5, m, e).map_err(|e| e.to_string());
    let cfgs = [
        ("euler", mk(MagneticSpec::Zero, ElectricSpec::Zero)?),
        ("magnetic", mk(MagneticSpec::constant(0.5), ElectricSpec::Zero)?),
        ("electric", mk(MagneticSpec::Zero, ElectricSpec::uniform_oscillating(0.01, C::new(1.0, 0.0)))?),
    ];
    let seeds = ["circle:0,0,2", "circle:0,0,1", "kepler:1,0.3"];
    let vopts = VerifyOptions::default();
    let mut lines = Vec::new();
    let mut ok = true;
    for (name, cfg) in &cfgs {
        let mut converged = 0;
        for s in seeds {
            let z = solver::seed(&s.parse().map_err(|e: szbov_core::Error| e.to_string())?, 128)
                .map_err(|e| e.to_string())?;
            let Ok(r) = solver::solve(&z, cfg, &SolveOptions::default()) else { continue };
            converged += 1;
            let v = dynamics::verify_generalized(&r, cfg, &vopts).map_err(|e| e.to_string())?;
            let good = r.grad_norm < 1e-9 && r.delay_sup < 1e-6 && r.phi_sup < 1e-6 && v.passed;
            ok &= good;
            if !good {
                lines.push(format!(
                    "{name}/{s}: grad {:.1e} delay {:.1e} phi {:.1e} verify {}",
                    r.grad_norm, r.delay_sup, r.phi_sup, v.passed
                ));
            }
            store.push(r);
        }
        ok &= converged > 0;
        lines.push(format!("{name} {converged}/{}", seeds.len()));
    }
    ensure(ok, format!("converged per config: {}", lines.join(", ")))
}

fn c6_cross(store: &[OrbitRecord]) -> Check {
    let mut worst = 0.0f64;
    let mut count = 0;
    for r in store.iter().filter(|r| r.q.collision_times().is_empty()) {
        let (traj, err) = dynamics::reintegrate(&r.q, &r.cfg, 1e-10).map_err(|e| e.to_string())?;
        if traj.terminated != dynamics::Termination::Completed {
            return Err(format!("integration stopped: {:?}", traj.terminated));
        }
        worst = worst.max(err);
        count += 1;
    }
    ensure(count > 0 && worst < 1e-5, format!("{count} collision-free orbits, sup error {worst:.2e}"))
}

fn c7_mean_zero() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let cfgs = gradcheck::preset_grid(0.3).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for k in 0..100 {
        let z = gradcheck::random_smooth_loop(&mut rng, 128, k % 2 == 1).map_err(|e| e.to_string())?;
        let cfg = &cfgs[k % cfgs.len()];
        let q = z.reconstruct(256).map_err(|e| e.to_string())?;
        let c = dynamics::energy_constant(&q, cfg);
        let p = dynamics::phi_profile(&q, cfg, c, Some(&z)).map_err(|e| e.to_string())?;
        worst = worst.max(p.mean_phi.abs());
    }
    ensure(worst < 1e-10, format!("max |mean Φ| {worst:.2e} over 100 loops"))
}

fn c8_collision() -> Check {
    let z = loopspace::circle(128, C::new(0.0, 0.0), 1.0).map_err(|e| e.to_string())?;
    let cfg = FieldConfig::euler(0.5).map_err(|e| e.to_string())?;
    let b = action::eval_components(&z, &cfg).map_err(|e| e.to_string())?;
    let g = action::gradient(&z, &cfg).map_err(|e| e.to_string())?;
    let finite = g.iter().all(|v| v.re.is_finite() && v.im.is_finite());
    let dev = [(b.f, 0.5), (b.g, 2.0 * PI * PI), (b.h1, 1.0), (b.h2, 1.0)]
        .iter()
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max);
    let r = solver::solve(&z, &cfg, &SolveOptions::default()).map_err(|e| e.to_string())?;
    ensure(
        finite && dev < 1e-10,
        format!("component deviation {dev:.2e}, gradient finite {finite}, solve {} iterations", r.iterations),
    )
}

fn c9_winding() -> Check {
    let small = loopspace::circle(256, C::new(1.0, 0.0), 0.1).map_err(|e| e.to_string())?;
    let w = WindingReport::of(&small.birkhoff_image()).map_err(|e| e.to_string())?;
    let m = 512;
    let q = PhysicalLoop::new(
        (0..m)
            .map(|j| C::new(-1.0, 0.0) + 0.5 * C::cis(2.0 * PI * j as f64 / m as f64))
            .collect(),
    )
    .map_err(|e| e.to_string())?;
    let lifted = q.lift(128).map_err(|e| e.to_string())?;
    ensure(
        w.around_plus_one == 2 && w.around_minus_one == 0 && lifted.is_twisted(),
        format!(
            "B-image winding (+1: {}, −1: {}), odd lift twisted {}",
            w.around_plus_one,
            w.around_minus_one,
            lifted.is_twisted()
        ),
    )
}

fn c10_continuation() -> Check {
    let opts = SolveOptions::default();
    // For μ > 0 the surviving period-one Kepler orbits are the collision
    // ellipses along the axis, so the family starts there.
    let seed = solver::collision_guess(-1.0, 2.0 * kepler_radius(), 128).map_err(|e| e.to_string())?;
    let start = solver::solve(&seed, &FieldConfig::euler(0.0).map_err(|e| e.to_string())?, &opts)
        .map_err(|e| e.to_string())?;
    let mu_path: Vec<FieldConfig> = (1..=20)
        .map(|k| FieldConfig::euler(0.01 * k as f64))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let mu = solver::continue_family(&start, &mu_path, &opts).map_err(|e| e.to_string())?;

    let euler = FieldConfig::euler(0.5).map_err(|e| e.to_string())?;
    let unit = loopspace::circle(128, C::new(0.0, 0.0), 1.0).map_err(|e| e.to_string())?;
    let base = solver::solve(&unit, &euler, &opts).map_err(|e| e.to_string())?;
    let eps_path: Vec<FieldConfig> = (1..=10)
        .map(|k| euler.with_electric(ElectricSpec::uniform_oscillating(0.001 * k as f64, C::new(1.0, 0.0))))
        .collect::<Result<_, _>>()
        .map_err(|e| e.to_string())?;
    let eps = solver::continue_family(&base, &eps_path, &opts).map_err(|e| e.to_string())?;

    let vopts = VerifyOptions::default();
    let mut ok = true;
    let mut max_it = 0;
    for fam in [&mu, &eps] {
        ok &= fam.failure.is_none();
        for r in &fam.records[1..] {
            max_it = max_it.max(r.iterations);
        }
        let r5 = fam.records.get(5).ok_or("family shorter than 5 steps")?;
        let v = dynamics::verify_generalized(r5, &r5.cfg, &vopts).map_err(|e| e.to_string())?;
        ok &= r5.grad_norm < 1e-9 && r5.delay_sup < 1e-6 && r5.phi_sup < 1e-6 && v.passed;
    }
    ok &= max_it <= 50;
    ensure(
        ok,
        format!(
            "μ: {}/20 steps, ε: {}/10 steps, max {} iterations per step",
            mu.records.len() - 1,
            eps.records.len() - 1,
            max_it
        ),
    )
}

fn main() {
    let mut store = Vec::new();
    let mut results: Vec<(usize, &str, Duration, Duration, Check)> = Vec::new();
    let mut run = |id: usize, name: &'static str, budget: u64, f: &mut dyn FnMut() -> Check| {
        let t = Instant::now();
        let r = f();
        results.push((id, name, t.elapsed(), Duration::from_secs(budget), r));
    };
    run(1, "gradient correctness", 30, &mut c1_gradient);
    run(2, "pullback identity", 10, &mut c2_pullback);
    run(3, "involution symmetry", 5, &mut c3_involution);
    run(4, "Kepler limit", 20, &mut || c4_kepler(&mut store));
    run(5, "four-way equivalence", 120, &mut || c5_equivalence(&mut store));
    run(6, "oracle cross-integration", 30, &mut || c6_cross(&store));
    run(7, "mean-zero of Φ", 5, &mut c7_mean_zero);
    run(8, "collision regularity", 5, &mut c8_collision);
    run(9, "branched-cover winding", 5, &mut c9_winding);
    run(10, "continuation robustness", 180, &mut c10_continuation);

    let mut failed = 0;
    for (id, name, took, budget, r) in &results {
        let in_time = took <= budget;
        let (ok, msg) = match r {
            Ok(m) => (in_time, m.as_str()),
            Err(m) => (false, m.as_str()),
        };
        failed += usize::from(!ok);
        println!(
            "{} criterion {id:>2} {name}: {msg} [{:.2}s / {}s]",
            if ok { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failed > 0 {
        eprintln!("{failed} criteria failed");
        std::process::exit(1);
    }
}
