//! Uniform-grid trigonometric tools: differentiation, interpolation and
//! exact integration of trigonometric interpolants.
//!
//! All routines treat a length-`n` sample vector as the values of a
//! periodic function on `j * period / n`. The Nyquist mode of an even-length
//! grid is interpreted as a cosine, which is zero-derivative at the nodes,
//! so differentiation drops it.

use std::cell::RefCell;
use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(n)
        } else {
            p.plan_fft_forward(n)
        }
    })
}

/// Normalized forward transform: `c_k = (1/n) Σ_j x_j e^{-2πijk/n}`.
pub(crate) fn forward(samples: &[Complex64]) -> Vec<Complex64> {
    let n = samples.len();
    let mut buf = samples.to_vec();
    plan(n, false).process(&mut buf);
    let scale = 1.0 / n as f64;
    buf.iter_mut().for_each(|c| *c *= scale);
    buf
}

/// Inverse of [`forward`].
pub(crate) fn inverse(coeffs: &[Complex64]) -> Vec<Complex64> {
    let mut buf = coeffs.to_vec();
    plan(buf.len(), true).process(&mut buf);
    buf
}

/// Signed wavenumber of FFT bin `k`; `None` for the Nyquist bin.
#[inline]
pub(crate) fn wavenumber(k: usize, n: usize) -> Option<f64> {
    if 2 * k == n {
        None
    } else if 2 * k < n {
        Some(k as f64)
    } else {
        Some(k as f64 - n as f64)
    }
}

fn apply_multiplier(samples: &[Complex64], mult: impl Fn(f64) -> Complex64) -> Vec<Complex64> {
    let n = samples.len();
    let mut c = forward(samples);
    for (k, ck) in c.iter_mut().enumerate() {
        *ck *= match wavenumber(k, n) {
            Some(kk) => mult(kk),
            None => Complex64::new(0.0, 0.0),
        };
    }
    inverse(&c)
}

/// Spectral first derivative.
pub(crate) fn derivative(samples: &[Complex64], period: f64) -> Vec<Complex64> {
    let w = 2.0 * PI / period;
    apply_multiplier(samples, |k| Complex64::new(0.0, w * k))
}

/// Spectral second derivative.
pub(crate) fn second_derivative(samples: &[Complex64], period: f64) -> Vec<Complex64> {
    let w = 2.0 * PI / period;
    apply_multiplier(samples, |k| Complex64::new(-(w * k) * (w * k), 0.0))
}

/// Solves `(-d²/dx² + shift) u = f` on a periodic grid.
pub(crate) fn shifted_helmholtz_solve(f: &[Complex64], period: f64, shift: f64) -> Vec<Complex64> {
    let n = f.len();
    let mut c = forward(f);
    for (k, ck) in c.iter_mut().enumerate() {
        let kk = wavenumber(k, n).unwrap_or(n as f64 / 2.0);
        *ck /= (2.0 * PI * kk / period).powi(2) + shift;
    }
    inverse(&c)
}

/// Evaluates `e^{i k θ}` for `k = 0..count` with periodic re-anchoring.
fn powers(theta: f64, count: usize) -> impl Iterator<Item = Complex64> {
    let step = Complex64::cis(theta);
    let mut cur = Complex64::new(1.0, 0.0);
    (0..count).map(move |k| {
        let out = cur;
        cur = if (k + 1) % 32 == 0 {
            Complex64::cis(theta * (k + 1) as f64)
        } else {
            cur * step
        };
        out
    })
}

/// Trigonometric interpolant of complex samples.
#[derive(Debug, Clone)]
pub(crate) struct Interpolant {
    coeffs: Vec<Complex64>,
    period: f64,
}

impl Interpolant {
    pub fn new(samples: &[Complex64], period: f64) -> Self {
        Self {
            coeffs: forward(samples),
            period,
        }
    }

    fn sum(&self, x: f64, order: u32) -> Complex64 {
        let n = self.coeffs.len();
        let half = n / 2;
        let w = 2.0 * PI / self.period;
        let theta = w * x;
        let mut acc = Complex64::new(0.0, 0.0);
        let factor = |k: f64| Complex64::new(0.0, w * k).powu(order);
        for (k, e) in powers(theta, half.max(1)).enumerate() {
            if k == 0 {
                acc += if order == 0 { self.coeffs[0] } else { Complex64::new(0.0, 0.0) };
                continue;
            }
            let kf = k as f64;
            acc += self.coeffs[k] * factor(kf) * e;
            acc += self.coeffs[n - k] * factor(-kf) * e.conj();
        }
        if n.is_multiple_of(2) && n >= 2 {
            // Nyquist term as c cos(half θ)
            let a = half as f64 * theta;
            let hw = half as f64 * w;
            let c = self.coeffs[half];
            acc += c * match order % 4 {
                0 => a.cos() * hw.powi(order as i32),
                1 => -a.sin() * hw,
                2 => -a.cos() * hw * hw,
                _ => a.sin() * hw.powi(3),
            };
        }
        acc
    }

    pub fn eval(&self, x: f64) -> Complex64 {
        self.sum(x, 0)
    }

    pub fn eval_derivative(&self, x: f64) -> Complex64 {
        self.sum(x, 1)
    }
}

/// Exact running integral of the trigonometric interpolant of real
/// period-1 samples `f_j = f(j/n)`:
/// `I(x) = ∫_0^x f_interp`.
#[derive(Debug, Clone)]
pub(crate) struct CumulativeIntegral {
    n: usize,
    mean: f64,
    coeffs: Vec<Complex64>,
    nodes: Vec<f64>,
}

impl CumulativeIntegral {
    pub fn new(f: &[f64]) -> Self {
        let n = f.len();
        let data: Vec<Complex64> = f.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        let coeffs = forward(&data);
        let mean = coeffs[0].re;
        let periodic = antiderivative_periodic_from_coeffs(&coeffs);
        let offset = periodic[0];
        let mut nodes: Vec<f64> = (0..n)
            .map(|j| mean * j as f64 / n as f64 + periodic[j] - offset)
            .collect();
        nodes[0] = 0.0;
        nodes.push(mean);
        Self {
            n,
            mean,
            coeffs,
            nodes,
        }
    }

    /// `∫_0^1 f_interp`, equal to the sample mean.
    pub fn total(&self) -> f64 {
        self.mean
    }

    /// Values at `x_j = j/n`, `j = 0..=n`.
    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    /// `∫_{x_j}^1 f_interp` at the nodes `j = 0..n`.
    pub fn tail(&self) -> Vec<f64> {
        self.nodes[..self.n].iter().map(|v| self.mean - v).collect()
    }

    pub fn eval(&self, x: f64) -> f64 {
        let n = self.n;
        let half = n / 2;
        let theta = 2.0 * PI * x;
        let mut acc = self.mean * x;
        for (k, e) in powers(theta, half).enumerate().skip(1) {
            let kk = 2.0 * PI * k as f64;
            // 2 Re(c_k (e^{ikθ} - 1) / (i kk))
            let term = self.coeffs[k] * (e - 1.0) / Complex64::new(0.0, kk);
            acc += 2.0 * term.re;
        }
        if n.is_multiple_of(2) {
            let c = self.coeffs[half].re;
            acc += c * (PI * n as f64 * x).sin() / (PI * n as f64);
        }
        acc
    }

    /// The integrand's interpolant, i.e. `I'(x)`.
    pub fn eval_derivative(&self, x: f64) -> f64 {
        let n = self.n;
        let half = n / 2;
        let theta = 2.0 * PI * x;
        let mut acc = self.mean;
        for (k, e) in powers(theta, half).enumerate().skip(1) {
            acc += 2.0 * (self.coeffs[k] * e).re;
        }
        if n.is_multiple_of(2) {
            acc += self.coeffs[half].re * (PI * n as f64 * x).cos();
        }
        acc
    }
}

/// Periodic part `K f` of the running integral, evaluated at nodes.
fn antiderivative_periodic_from_coeffs(coeffs: &[Complex64]) -> Vec<f64> {
    let n = coeffs.len();
    let mut c = coeffs.to_vec();
    for (k, ck) in c.iter_mut().enumerate() {
        *ck = match wavenumber(k, n) {
            Some(kk) if kk != 0.0 => *ck / Complex64::new(0.0, 2.0 * PI * kk),
            _ => Complex64::new(0.0, 0.0),
        };
    }
    inverse(&c).iter().map(|v| v.re).collect()
}

fn periodic_antiderivative(f: &[f64]) -> Vec<f64> {
    let data: Vec<Complex64> = f.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    antiderivative_periodic_from_coeffs(&forward(&data))
}

/// Transpose of the linear map `f ↦ (I(x_j))_{j<n}` realized by
/// [`CumulativeIntegral::nodes`], with respect to the plain dot product.
pub(crate) fn cumulative_transpose(g: &[f64]) -> Vec<f64> {
    let n = g.len();
    let weighted: f64 = g
        .iter()
        .enumerate()
        .map(|(j, v)| v * j as f64 / n as f64)
        .sum::<f64>()
        / n as f64;
    let total: f64 = g.iter().sum();
    let kg = periodic_antiderivative(g);
    let mut e0 = vec![0.0; n];
    e0[0] = 1.0;
    let kappa = periodic_antiderivative(&e0);
    (0..n)
        .map(|i| weighted - kg[i] + total * kappa[i])
        .collect()
}

/// Monotone piecewise-cubic Hermite interpolation (Fritsch–Carlson).
#[derive(Debug, Clone)]
pub(crate) struct Pchip {
    x: Vec<f64>,
    y: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    /// `x` must be nondecreasing. Repeated abscissae are collapsed.
    pub fn new(x: &[f64], y: &[f64]) -> Self {
        let mut xs = Vec::with_capacity(x.len());
        let mut ys = Vec::with_capacity(y.len());
        for (&a, &b) in x.iter().zip(y) {
            if let Some(&last) = xs.last() {
                if a <= last {
                    continue;
                }
            }
            xs.push(a);
            ys.push(b);
        }
        let m = xs.len();
        let mut d = vec![0.0; m];
        if m >= 2 {
            let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
            let s: Vec<f64> = (0..m - 1).map(|i| (ys[i + 1] - ys[i]) / h[i]).collect();
            if m == 2 {
                d[0] = s[0];
                d[1] = s[0];
            } else {
                for i in 1..m - 1 {
                    if s[i - 1] * s[i] > 0.0 {
                        let w1 = 2.0 * h[i] + h[i - 1];
                        let w2 = h[i] + 2.0 * h[i - 1];
                        d[i] = (w1 + w2) / (w1 / s[i - 1] + w2 / s[i]);
                    }
                }
                d[0] = end_slope(h[0], h[1], s[0], s[1]);
                d[m - 1] = end_slope(h[m - 2], h[m - 3], s[m - 2], s[m - 3]);
            }
        }
        Self { x: xs, y: ys, d }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let m = self.x.len();
        if m == 1 {
            return self.y[0];
        }
        let i = match self.x.partition_point(|&v| v <= t) {
            0 => 0,
            p if p >= m => m - 2,
            p => p - 1,
        };
        let h = self.x[i + 1] - self.x[i];
        let s = ((t - self.x[i]) / h).clamp(0.0, 1.0);
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        h00 * self.y[i] + h10 * h * self.d[i] + h01 * self.y[i + 1] + h11 * h * self.d[i + 1]
    }
}

fn end_slope(h0: f64, h1: f64, s0: f64, s1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * s0 - h0 * s1) / (h0 + h1);
    if d.signum() != s0.signum() {
        0.0
    } else if s0.signum() != s1.signum() && d.abs() > 3.0 * s0.abs() {
        3.0 * s0
    } else {
        d
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    #[test]
    fn derivative_of_exponential() {
        let n = 64;
        let z: Vec<_> = (0..n)
            .map(|j| Complex64::cis(2.0 * PI * j as f64 / n as f64))
            .collect();
        let d = derivative(&z, 1.0);
        for (j, dj) in d.iter().enumerate() {
            let exact = c(0.0, 2.0 * PI) * z[j];
            assert!((dj - exact).norm() < 1e-12);
        }
        let dd = second_derivative(&z, 1.0);
        for (j, v) in dd.iter().enumerate() {
            assert!((v + 4.0 * PI * PI * z[j]).norm() < 1e-10);
        }
    }

    #[test]
    fn interpolant_reproduces_trig_polynomial() {
        let n = 32;
        let f = |x: f64| {
            Complex64::cis(2.0 * PI * 3.0 * x) * 0.5 + c(0.2, -0.1) * Complex64::cis(-2.0 * PI * 5.0 * x) + 1.5
        };
        let samples: Vec<_> = (0..n).map(|j| f(j as f64 / n as f64)).collect();
        let it = Interpolant::new(&samples, 1.0);
        for &x in &[0.013, 0.37, 0.5, 0.999] {
            assert!((it.eval(x) - f(x)).norm() < 1e-13);
            let h = 1e-6;
            let fd = (f(x + h) - f(x - h)) / (2.0 * h);
            assert!((it.eval_derivative(x) - fd).norm() < 1e-6);
        }
    }

    #[test]
    fn interpolant_nyquist_is_cosine() {
        let n = 16;
        let samples: Vec<_> = (0..n)
            .map(|j| c(if j % 2 == 0 { 1.0 } else { -1.0 }, 0.0))
            .collect();
        let it = Interpolant::new(&samples, 1.0);
        let x = 0.01;
        assert!((it.eval(x).re - (PI * n as f64 * x).cos()).abs() < 1e-12);
    }

    #[test]
    fn cumulative_integral_of_sin_squared() {
        let n = 32;
        let f: Vec<f64> = (0..n)
            .map(|j| (2.0 * PI * j as f64 / n as f64).sin().powi(2))
            .collect();
        let ci = CumulativeIntegral::new(&f);
        let exact = |x: f64| x / 2.0 - (4.0 * PI * x).sin() / (8.0 * PI);
        for (j, v) in ci.nodes().iter().enumerate() {
            assert!((v - exact(j as f64 / n as f64)).abs() < 1e-14);
        }
        for &x in &[0.125, 0.3, 0.77] {
            assert!((ci.eval(x) - exact(x)).abs() < 1e-14);
            assert!((ci.eval_derivative(x) - (2.0 * PI * x).sin().powi(2)).abs() < 1e-13);
        }
        assert_eq!(ci.nodes()[n], ci.total());
    }

    #[test]
    fn cumulative_eval_agrees_with_nodes() {
        let n = 24;
        let f: Vec<f64> = (0..n).map(|j| 1.0 + 0.3 * ((j * j) % 7) as f64).collect();
        let ci = CumulativeIntegral::new(&f);
        for j in 0..=n {
            assert!((ci.eval(j as f64 / n as f64) - ci.nodes()[j]).abs() < 1e-12);
        }
    }

    #[test]
    fn transpose_dot_test() {
        let n = 20;
        let f: Vec<f64> = (0..n).map(|j| ((j * 37 % 11) as f64).sin()).collect();
        let g: Vec<f64> = (0..n).map(|j| ((j * 13 % 7) as f64).cos()).collect();
        let sf = CumulativeIntegral::new(&f);
        let lhs: f64 = g.iter().zip(sf.nodes()).map(|(a, b)| a * b).sum();
        let stg = cumulative_transpose(&g);
        let rhs: f64 = stg.iter().zip(&f).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-12, "{lhs} vs {rhs}");
    }

    #[test]
    fn helmholtz_inverts_operator() {
        let n = 16;
        let u: Vec<_> = (0..n)
            .map(|j| c((j as f64 * 0.4).sin(), (j as f64 * 0.9).cos()))
            .collect();
        let lap = second_derivative(&u, 1.0);
        // Nyquist mode is dropped by the derivative; compare on the rest.
        let f: Vec<_> = u.iter().zip(&lap).map(|(a, b)| -b + 3.0 * a).collect();
        let back = shifted_helmholtz_solve(&f, 1.0, 3.0);
        let mut diff: Vec<_> = back.iter().zip(&u).map(|(a, b)| a - b).collect();
        let coeffs = forward(&diff);
        diff.clear();
        for (k, ck) in coeffs.iter().enumerate() {
            if 2 * k != n {
                assert!(ck.norm() < 1e-12);
            }
        }
    }

    #[test]
    fn pchip_is_monotone_and_interpolating() {
        let x = [0.0, 0.1, 0.1, 0.4, 0.5, 1.0];
        let y = [0.0, 0.2, 0.2, 0.25, 0.8, 1.0];
        let p = Pchip::new(&x, &y);
        let mut last = -1.0;
        for k in 0..=200 {
            let t = k as f64 / 200.0;
            let v = p.eval(t);
            assert!(v >= last - 1e-15);
            last = v;
        }
        assert!((p.eval(0.4) - 0.25).abs() < 1e-15);
    }
}
