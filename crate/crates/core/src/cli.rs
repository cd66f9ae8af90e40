//! Batch front end.
//!
//! Exit codes: 0 success, 1 failed check, 2 validation, 3 no convergence,
//! 4 I/O.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::action::{self, ActionBreakdown, Component};
use crate::dynamics::{self, IntegrateOptions, VerifyOptions};
use crate::error::Error;
use crate::fields::{ElectricBlock, FieldConfig, FieldsBlock, MagneticBlock};
use crate::gradcheck::{self, GradCheckOptions};
use crate::loopspace::DiscreteLoop;
use crate::solver::{self, OrbitRecord, SeedSpec, SolveOptions};

type C = Complex64;

const DEFAULT_N: usize = 128;

#[derive(Debug, Parser)]
#[command(name = "szbov", version, about = "Periodic orbits of regularized two-center problems")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub global: GlobalArgs,
}

#[derive(Debug, Args)]
pub struct GlobalArgs {
    /// Run configuration (JSON).
    #[arg(long, global = true, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Seed: circle:CX,CY,R | ellipse:A,B | kepler:SIDE,R | collision:SIDE,REACH | file:PATH
    #[arg(long, global = true, value_name = "SPEC")]
    pub seed: Option<String>,
    #[arg(long, global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,
    /// Loop samples.
    #[arg(long, global = true)]
    pub n: Option<usize>,
    /// Physical samples of the reconstruction.
    #[arg(long, global = true)]
    pub m: Option<usize>,
    /// Tolerance of the subcommand's main test.
    #[arg(long, global = true)]
    pub tol: Option<f64>,
    /// Require the seed to lie in the twisted (true) or plain (false) sector.
    #[arg(long, global = true, value_name = "BOOL")]
    pub twisted: Option<bool>,
    #[arg(long, global = true)]
    pub quiet: bool,
    /// Flip the sign of one gradient component (negative control).
    #[arg(long, global = true, hide = true, value_name = "COMPONENT")]
    pub inject_fault: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Evaluate the functional on a loop file or seed.
    Eval { input: Option<PathBuf> },
    /// Compare analytic gradients against central differences.
    GradCheck,
    /// Search for a critical point.
    Solve,
    /// Natural-parameter continuation from an orbit or a freshly solved seed.
    Continue { input: Option<PathBuf> },
    /// Integrate Newton's equations (orbit initial conditions or config).
    Integrate { input: Option<PathBuf> },
    /// Check an orbit against the equations of motion.
    Verify { input: PathBuf },
    /// SVG of an orbit's z-loop and physical loop.
    Plot { input: Option<PathBuf> },
    /// Write the z-loop of an orbit or seed as a loop file.
    Export { input: Option<PathBuf> },
}

/// Contents of `--config`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub fields: Option<FieldsBlock>,
    pub grid: Grid,
    pub solver: SolveOptions,
    pub seed: Option<String>,
    pub output: Outputs,
    pub continuation: Option<ContinuationConfig>,
    pub grad_check: GradCheckOptions,
    pub integrate: IntegrateConfig,
    pub verify: VerifyOptions,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Grid {
    pub n: Option<usize>,
    pub m: Option<usize>,
}

/// Default destinations when `--out` is absent.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Outputs {
    pub eval: Option<PathBuf>,
    pub orbit: Option<PathBuf>,
    pub family: Option<PathBuf>,
    pub trajectory: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub svg: Option<PathBuf>,
    #[serde(rename = "loop")]
    pub loop_file: Option<PathBuf>,
}

/// Linear path from the configured fields to `target` in `steps` steps.
/// A zero field is treated as the zero-strength member of the other kind.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContinuationConfig {
    pub target: FieldsBlock,
    pub steps: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegrateConfig {
    pub q0: Option<[f64; 2]>,
    pub v0: Option<[f64; 2]>,
    pub t0: f64,
    pub t1: f64,
    /// Output samples; 0 uses the orbit's M (or 256).
    pub samples: usize,
    pub tol: f64,
}

impl Default for IntegrateConfig {
    fn default() -> Self {
        Self {
            q0: None,
            v0: None,
            t0: 0.0,
            t1: 1.0,
            samples: 0,
            tol: 1e-10,
        }
    }
}

/// Failure with its exit code.
#[derive(Debug)]
pub enum Failure {
    Check(String),
    Validation(String),
    NoConvergence(String),
    Io(String),
}

impl Failure {
    pub fn code(&self) -> i32 {
        match self {
            Failure::Check(_) => 1,
            Failure::Validation(_) => 2,
            Failure::NoConvergence(_) => 3,
            Failure::Io(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Check(s) | Failure::Validation(s) | Failure::NoConvergence(s) | Failure::Io(s) => s,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::NoConvergence { .. } | Error::Degenerated(_) | Error::Continuation { .. } => {
                Failure::NoConvergence(e.to_string())
            }
            Error::InvalidLoop(_)
            | Error::DegenerateLoop { .. }
            | Error::InvalidFields(_)
            | Error::FieldValidation(_)
            | Error::InvalidOptions(_)
            | Error::Domain(_)
            | Error::UndersampledLoop { .. }
            | Error::UndersampledLift { .. }
            | Error::LiftThroughBranchPoint { .. } => Failure::Validation(e.to_string()),
            _ => Failure::Check(e.to_string()),
        }
    }
}

type Outcome<T = ()> = std::result::Result<T, Failure>;

/// Parses `args` (program name first), runs, and returns the exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let quiet = cli.global.quiet;
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(if quiet { "error" } else { "warn" }))
        .try_init();
    match run(cli) {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message());
            f.code()
        }
    }
}

pub fn run(cli: Cli) -> Outcome {
    let ctx = Context::new(cli.global)?;
    match cli.command {
        Command::Eval { input } => ctx.eval(input.as_deref()),
        Command::GradCheck => ctx.grad_check(),
        Command::Solve => ctx.solve(),
        Command::Continue { input } => ctx.continue_family(input.as_deref()),
        Command::Integrate { input } => ctx.integrate(input.as_deref()),
        Command::Verify { input } => ctx.verify(&input),
        Command::Plot { input } => ctx.plot(input.as_deref()),
        Command::Export { input } => ctx.export(input.as_deref()),
    }
}

struct Context {
    args: GlobalArgs,
    config: RunConfig,
}

fn read_text(path: &Path) -> Outcome<String> {
    std::fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn write_text(path: &Path, text: &str) -> Outcome {
    std::fs::write(path, text).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn parse_json<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> Outcome<T> {
    serde_json::from_str(text).map_err(|e| Failure::Validation(format!("{}: {e}", path.display())))
}

fn to_json<T: Serialize>(v: &T) -> Outcome<String> {
    let mut s = serde_json::to_string_pretty(v).map_err(|e| Failure::Validation(e.to_string()))?;
    s.push('\n');
    Ok(s)
}

impl Context {
    fn new(args: GlobalArgs) -> Outcome<Self> {
        let config: RunConfig = match &args.config {
            Some(p) => parse_json(p, &read_text(p)?)?,
            None => RunConfig::default(),
        };
        config.solver.validate()?;
        Ok(Self { args, config })
    }

    fn say(&self, msg: impl AsRef<str>) {
        if !self.args.quiet {
            eprintln!("{}", msg.as_ref());
        }
    }

    fn fields(&self) -> Outcome<FieldConfig> {
        let cfg = match &self.config.fields {
            Some(b) => FieldConfig::try_from(b.clone())?,
            None => FieldConfig::euler(0.0)?,
        };
        cfg.validate().into_result()?;
        Ok(cfg)
    }

    fn n(&self) -> usize {
        self.args.n.or(self.config.grid.n).unwrap_or(DEFAULT_N)
    }

    fn m(&self) -> Option<usize> {
        self.args.m.or(self.config.grid.m)
    }

    fn fault(&self) -> Outcome<Option<Component>> {
        self.args
            .inject_fault
            .as_deref()
            .map(|s| s.parse::<Component>())
            .transpose()
            .map_err(Failure::from)
    }

    fn solve_options(&self) -> SolveOptions {
        let mut o = self.config.solver.clone();
        if let Some(n) = self.args.n.or(self.config.grid.n) {
            o.n = Some(n);
        }
        if let Some(m) = self.m() {
            o.m = Some(m);
        }
        if let Some(t) = self.args.tol {
            o.g_tol = t;
        }
        o
    }

    fn check_sector(&self, z: &DiscreteLoop) -> Outcome {
        match self.args.twisted {
            Some(want) if want != z.is_twisted() => Err(Failure::Validation(format!(
                "loop is {} but --twisted {want} was requested",
                if z.is_twisted() { "twisted" } else { "plain" }
            ))),
            _ => Ok(()),
        }
    }

    /// Reads a loop file or the z-loop of an orbit file.
    fn read_loop(&self, path: &Path) -> Outcome<DiscreteLoop> {
        let text = read_text(path)?;
        let z = if text.contains("\"diagnostics\"") {
            parse_json::<OrbitRecord>(path, &text)?.z
        } else {
            parse_json::<DiscreteLoop>(path, &text)?
        };
        self.check_sector(&z)?;
        Ok(z)
    }

    fn read_orbit(&self, path: &Path) -> Outcome<OrbitRecord> {
        parse_json(path, &read_text(path)?)
    }

    fn seed_loop(&self) -> Outcome<DiscreteLoop> {
        let spec = self
            .args
            .seed
            .as_ref()
            .or(self.config.seed.as_ref())
            .ok_or_else(|| Failure::Validation("no seed given (use --seed or the config's \"seed\")".into()))?;
        let spec: SeedSpec = spec.parse()?;
        let z = match &spec {
            SeedSpec::File(p) => self.read_loop(p)?,
            _ => solver::seed(&spec, self.n())?,
        };
        self.check_sector(&z)?;
        Ok(z)
    }

    fn loop_from(&self, input: Option<&Path>) -> Outcome<DiscreteLoop> {
        match input {
            Some(p) => self.read_loop(p),
            None => self.seed_loop(),
        }
    }

    /// Writes to `--out`, else to the configured path, else stdout.
    fn emit(&self, configured: Option<&PathBuf>, text: &str) -> Outcome {
        match self.args.out.as_ref().or(configured) {
            Some(p) => write_text(p, text),
            None => std::io::stdout()
                .write_all(text.as_bytes())
                .map_err(|e| Failure::Io(e.to_string())),
        }
    }

    fn eval(&self, input: Option<&Path>) -> Outcome {
        let cfg = self.fields()?;
        let z = self.loop_from(input)?;
        let b = action::eval_components(&z, &cfg)?;
        let report = EvalReport::new(&b);
        let target = self.args.out.as_ref().or(self.config.output.eval.as_ref());
        if !self.args.quiet || target.is_none() {
            let mut s = String::new();
            for (name, v) in report.lines() {
                let _ = writeln!(s, "{name:<5} = {v}");
            }
            if self.args.quiet {
                s = to_json(&report)?;
            }
            print!("{s}");
        }
        if let Some(p) = target {
            write_text(p, &to_json(&report)?)?;
        }
        Ok(())
    }

    fn grad_check(&self) -> Outcome {
        let mut opts = self.config.grad_check.clone();
        if let Some(n) = self.args.n {
            opts.n = n;
        }
        if let Some(t) = self.args.tol {
            opts.tol = t;
        }
        let cfgs = match &self.config.fields {
            Some(_) => vec![self.fields()?],
            None => gradcheck::preset_grid(0.3)?,
        };
        let rep = gradcheck::run(&cfgs, &opts, self.fault()?)?;
        if !self.args.quiet {
            for (name, e) in &rep.errors {
                println!("{name:<5} max relative error {e:.3e}");
            }
            println!(
                "{} cases, worst {} at {:.3e} (tol {:.0e}): {}",
                rep.cases,
                rep.worst,
                rep.max_error,
                opts.tol,
                if rep.passed { "PASS" } else { "FAIL" }
            );
        }
        if let Some(p) = self.args.out.as_ref().or(self.config.output.report.as_ref()) {
            write_text(p, &to_json(&rep)?)?;
        }
        if rep.passed {
            Ok(())
        } else {
            Err(Failure::Check(format!("gradient check failed in {} ({:.3e})", rep.worst, rep.max_error)))
        }
    }

    fn solve(&self) -> Outcome {
        let cfg = self.fields()?;
        let z = self.seed_loop()?;
        let opts = self.solve_options();
        match solver::solve(&z, &cfg, &opts) {
            Ok(r) => {
                self.say(format!(
                    "converged in {} iterations: action {}, grad_norm {:.3e}",
                    r.iterations,
                    r.action(),
                    r.grad_norm
                ));
                self.emit(self.config.output.orbit.as_ref(), &to_json(&r)?)
            }
            Err(Error::NoConvergence { iterations, grad_norm, best }) => {
                self.emit(self.config.output.orbit.as_ref(), &to_json(&*best)?)?;
                Err(Failure::NoConvergence(format!(
                    "no convergence after {iterations} iterations (grad_norm {grad_norm:.3e}); best iterate written"
                )))
            }
            Err(e) => Err(e.into()),
        }
    }

    fn continue_family(&self, input: Option<&Path>) -> Outcome {
        let cont = self
            .config
            .continuation
            .as_ref()
            .ok_or_else(|| Failure::Validation("config has no \"continuation\" block".into()))?;
        let opts = self.solve_options();
        let start = match input {
            Some(p) => self.read_orbit(p)?,
            None => solver::solve(&self.seed_loop()?, &self.fields()?, &opts)?,
        };
        let from = start.cfg.to_block()?;
        let path = linear_path(&from, &cont.target, cont.steps)?;
        let fam = solver::continue_family(&start, &path, &opts)?;
        self.say(format!("{} of {} steps converged", fam.records.len() - 1, path.len()));
        self.emit(self.config.output.family.as_ref(), &to_json(&fam.records)?)?;
        match fam.failure {
            None => Ok(()),
            Some((step, _, e)) => Err(Failure::NoConvergence(format!("continuation stopped at step {step}: {e}"))),
        }
    }

    fn integrate(&self, input: Option<&Path>) -> Outcome {
        let ic = &self.config.integrate;
        let tol = self.args.tol.unwrap_or(ic.tol);
        let (cfg, q0, v0, samples, reference) = match input {
            Some(p) => {
                let r = self.read_orbit(p)?;
                let v = r.q.velocity_or_spectral();
                let m = if ic.samples > 0 { ic.samples } else { r.q.m() };
                (r.cfg.clone(), r.q.samples()[0], v[0], m, Some(r))
            }
            None => {
                let (Some(q), Some(v)) = (ic.q0, ic.v0) else {
                    return Err(Failure::Validation("integrate needs an orbit file or integrate.q0/v0".into()));
                };
                let m = if ic.samples > 0 { ic.samples } else { 256 };
                (self.fields()?, C::new(q[0], q[1]), C::new(v[0], v[1]), m, None)
            }
        };
        let (t0, t1) = (ic.t0, ic.t1);
        let times: Vec<f64> = (0..=samples).map(|j| t0 + (t1 - t0) * j as f64 / samples as f64).collect();
        let opts = IntegrateOptions {
            tol,
            ..Default::default()
        };
        let traj = dynamics::integrate_at(q0, v0, t0, &times, &cfg, &opts)?;
        if let Some(r) = reference.filter(|_| t0 == 0.0 && t1 == 1.0) {
            let m = r.q.m();
            if samples == m {
                let err = traj
                    .positions
                    .iter()
                    .enumerate()
                    .map(|(j, p)| (p - r.q.samples()[j % m]).norm())
                    .fold(0.0, f64::max);
                self.say(format!("sup distance to the orbit's samples: {err:.3e}"));
            }
        }
        self.say(format!("{} samples, {:?}", traj.times.len(), traj.terminated));
        self.emit(self.config.output.trajectory.as_ref(), &traj.to_csv())
    }

    fn verify(&self, input: &Path) -> Outcome {
        let r = self.read_orbit(input)?;
        let mut opts = self.config.verify.clone();
        if let Some(t) = self.args.tol {
            opts.tol = t;
        }
        let rep = dynamics::verify_generalized(&r, &r.cfg, &opts)?;
        if !self.args.quiet {
            println!("collisions        {}", rep.collision_count);
            println!("finite collisions {}", rep.finite_collisions);
            println!("newton defect     {:.3e} {}", rep.newton_defect, pass(rep.newton_pass));
            println!("energy jump       {:.3e} {}", rep.energy_jump, pass(rep.energy_pass));
            println!("closure           {:.3e} {}", rep.closure, pass(rep.closure_pass));
        }
        if let Some(p) = self.args.out.as_ref().or(self.config.output.report.as_ref()) {
            write_text(p, &to_json(&rep)?)?;
        }
        if rep.passed {
            Ok(())
        } else {
            Err(Failure::Check("verification failed".into()))
        }
    }

    fn plot(&self, input: Option<&Path>) -> Outcome {
        let (z, q) = match input {
            Some(p) if read_text(p)?.contains("\"diagnostics\"") => {
                let r = self.read_orbit(p)?;
                (r.z.clone(), r.q.samples().to_vec())
            }
            _ => {
                let z = self.loop_from(input)?;
                let q = z.birkhoff_image();
                (z, q)
            }
        };
        self.emit(self.config.output.svg.as_ref(), &svg(&z.double_cover(), &q))
    }

    fn export(&self, input: Option<&Path>) -> Outcome {
        let mut z = self.loop_from(input)?;
        if let Some(n) = self.args.n.filter(|&n| n != z.n()) {
            z = z.resample(n)?;
        }
        self.emit(self.config.output.loop_file.as_ref(), &to_json(&z)?)
    }
}

fn pass(ok: bool) -> &'static str {
    if ok {
        "PASS"
    } else {
        "FAIL"
    }
}

/// Output of `eval`.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub components: ActionBreakdown,
    pub total: f64,
    #[serde(rename = "C")]
    pub c: f64,
}

impl EvalReport {
    pub fn new(b: &ActionBreakdown) -> Self {
        Self {
            components: *b,
            total: b.total,
            c: b.c(),
        }
    }

    fn lines(&self) -> [(&'static str, f64); 9] {
        let b = &self.components;
        [
            ("F", b.f),
            ("G", b.g),
            ("H1", b.h1),
            ("H2", b.h2),
            ("M", b.m),
            ("E", b.e_val),
            ("E1", b.e1),
            ("total", self.total),
            ("C", self.c),
        ]
    }
}

fn lerp(a: f64, b: f64, s: f64) -> f64 {
    a + (b - a) * s
}

/// Configurations at `s = k/steps`, `k = 1..=steps`.
pub fn linear_path(from: &FieldsBlock, to: &FieldsBlock, steps: usize) -> Result<Vec<FieldConfig>, Error> {
    use ElectricBlock as E;
    use MagneticBlock as M;
    let bad = || Error::InvalidOptions("continuation endpoints have incompatible field kinds".into());
    let mag_b = |m: &M| match m {
        M::Zero => 0.0,
        M::Constant { b } => *b,
    };
    // Zero electric fields borrow the other end's shape parameters.
    let widen = |e: &E, other: &E| -> E {
        match (e, other) {
            (E::Zero, E::UniformOscillating { d, .. }) => E::UniformOscillating { epsilon: 0.0, d: *d },
            (E::Zero, E::RotatingCharge { r_s, k, theta0, .. }) => E::RotatingCharge {
                mu_s: 0.0,
                r_s: *r_s,
                k: *k,
                theta0: *theta0,
            },
            _ => e.clone(),
        }
    };
    let (ea, eb) = (widen(&from.electric, &to.electric), widen(&to.electric, &from.electric));
    (1..=steps)
        .map(|k| {
            let s = k as f64 / steps as f64;
            let magnetic = match (&from.magnetic, &to.magnetic) {
                (M::Zero, M::Zero) => M::Zero,
                (a, b) => M::Constant {
                    b: lerp(mag_b(a), mag_b(b), s),
                },
            };
            let electric = match (&ea, &eb) {
                (E::Zero, E::Zero) => E::Zero,
                (E::UniformOscillating { epsilon: x, d: da }, E::UniformOscillating { epsilon: y, d: db }) => {
                    E::UniformOscillating {
                        epsilon: lerp(*x, *y, s),
                        d: [lerp(da[0], db[0], s), lerp(da[1], db[1], s)],
                    }
                }
                (
                    E::RotatingCharge { mu_s: x, r_s: ra, k: ka, theta0: ta },
                    E::RotatingCharge { mu_s: y, r_s: rb, k: kb, theta0: tb },
                ) if ka == kb => E::RotatingCharge {
                    mu_s: lerp(*x, *y, s),
                    r_s: lerp(*ra, *rb, s),
                    k: *ka,
                    theta0: lerp(*ta, *tb, s),
                },
                _ => return Err(bad()),
            };
            FieldConfig::try_from(FieldsBlock {
                mu: lerp(from.mu, to.mu, s),
                magnetic,
                electric,
            })
        })
        .collect()
}

/// z-loop and physical loop overlaid in one frame (`B` fixes ±1), with the
/// primaries marked and the unit circle dashed.
pub fn svg(z: &[C], q: &[C]) -> String {
    let size = 640.0;
    let pad = 40.0;
    let pts = z.iter().chain(q).copied().chain([C::new(-1.0, -1.0), C::new(1.0, 1.0)]);
    let (mut lo, mut hi) = (C::new(f64::INFINITY, f64::INFINITY), C::new(f64::NEG_INFINITY, f64::NEG_INFINITY));
    for p in pts.filter(|p| p.re.is_finite() && p.im.is_finite()) {
        lo = C::new(lo.re.min(p.re), lo.im.min(p.im));
        hi = C::new(hi.re.max(p.re), hi.im.max(p.im));
    }
    let span = (hi.re - lo.re).max(hi.im - lo.im) * 1.05;
    let mid = (lo + hi) * 0.5;
    let scale = (size - 2.0 * pad) / span;
    let map = |p: C| (size / 2.0 + (p.re - mid.re) * scale, size / 2.0 - (p.im - mid.im) * scale);
    let path = |pts: &[C]| {
        let mut d = String::new();
        for (j, p) in pts.iter().filter(|p| p.re.is_finite() && p.im.is_finite()).enumerate() {
            let (x, y) = map(*p);
            let _ = write!(d, "{}{x:.2},{y:.2} ", if j == 0 { "M" } else { "L" });
        }
        d.push('Z');
        d
    };
    let (ox, oy) = map(C::new(0.0, 0.0));
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" viewBox="0 0 {size} {size}">"#
    );
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    let _ = writeln!(
        s,
        r##"<circle class="unit-circle" cx="{ox:.2}" cy="{oy:.2}" r="{:.2}" fill="none" stroke="#888888" stroke-dasharray="6 4"/>"##,
        scale
    );
    let _ = writeln!(
        s,
        r##"<path class="z-curve" d="{}" fill="none" stroke="#1f5fa8" stroke-width="1.5"/>"##,
        path(z)
    );
    let _ = writeln!(
        s,
        r##"<path class="q-curve" d="{}" fill="none" stroke="#c0392b" stroke-width="1.5"/>"##,
        path(q)
    );
    for side in [-1.0, 1.0] {
        let (x, y) = map(C::new(side, 0.0));
        let _ = writeln!(s, r##"<circle class="primary" cx="{x:.2}" cy="{y:.2}" r="4" fill="#000000"/>"##);
    }
    let _ = writeln!(s, r##"<text x="12" y="22" font-family="sans-serif" font-size="13" fill="#1f5fa8">z</text>"##);
    let _ = writeln!(s, r##"<text x="28" y="22" font-family="sans-serif" font-size="13" fill="#c0392b">q = B(z)</text>"##);
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_path_interpolates_and_widens_zero_fields() {
        let from = FieldsBlock {
            mu: 0.0,
            magnetic: MagneticBlock::Zero,
            electric: ElectricBlock::Zero,
        };
        let to = FieldsBlock {
            mu: 0.2,
            magnetic: MagneticBlock::Zero,
            electric: ElectricBlock::UniformOscillating { epsilon: 0.01, d: [1.0, 0.0] },
        };
        let p = linear_path(&from, &to, 4).unwrap();
        assert_eq!(p.len(), 4);
        assert!((p[1].mu - 0.1).abs() < 1e-15);
        match p[3].to_block().unwrap().electric {
            ElectricBlock::UniformOscillating { epsilon, d } => {
                assert!((epsilon - 0.01).abs() < 1e-15);
                assert_eq!(d, [1.0, 0.0]);
            }
            other => panic!("{other:?}"),
        }
        let rot = FieldsBlock {
            electric: ElectricBlock::RotatingCharge { mu_s: 0.01, r_s: 3.0, k: 1, theta0: 0.0 },
            ..to.clone()
        };
        assert!(linear_path(&to, &rot, 2).is_err());
    }

    #[test]
    fn svg_structure() {
        let z: Vec<C> = (0..8).map(|j| C::cis(j as f64)).collect();
        let s = svg(&z, &z);
        assert_eq!(s.matches("<path").count(), 2);
        assert_eq!(s.matches(r#"class="primary""#).count(), 2);
        assert!(s.contains("stroke-dasharray"));
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let err = serde_json::from_str::<RunConfig>(r#"{"grid": {"n": 64}, "solver": {"gtol": 1}}"#).unwrap_err();
        assert!(err.to_string().contains("gtol"), "{err}");
        let ok: RunConfig = serde_json::from_str(r#"{"fields": {"mu": 0.5}, "seed": "kepler:-1,0.3"}"#).unwrap();
        assert_eq!(ok.fields.unwrap().mu, 0.5);
    }
}
