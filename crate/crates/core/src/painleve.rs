//! Hastings–McLeod solution of `q'' = r q + 2 q³` with `q ~ -Ai(r)` at `+∞`,
//! and the Tracy–Widom distributions built from it.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::quadrature;
use crate::specfun::{airy, airy_ai};

/// Points of the dense uniform output grid.
pub const DENSE_POINTS: usize = 8801;

/// Chebyshev interpolant on `[a, b]` in barycentric form.
#[derive(Clone, Debug)]
struct Cheb {
    a: f64,
    b: f64,
    x: Vec<f64>,
    f: Vec<f64>,
    df: Vec<f64>,
}

impl Cheb {
    fn bary(&self, r: f64, vals: &[f64]) -> f64 {
        let n = self.x.len() - 1;
        let mut num = 0.0;
        let mut den = 0.0;
        for (j, (&xj, &fj)) in self.x.iter().zip(vals).enumerate() {
            let d = r - xj;
            if d == 0.0 {
                return fj;
            }
            let mut w = if j % 2 == 0 { 1.0 } else { -1.0 };
            if j == 0 || j == n {
                w *= 0.5;
            }
            num += w * fj / d;
            den += w / d;
        }
        num / den
    }
}

/// Chebyshev points on `[a, b]` (increasing) and the first-derivative matrix.
fn cheb_grid(n: usize, a: f64, b: f64) -> (Vec<f64>, DMatrix<f64>) {
    // Trefethen's construction on [-1,1] with x_j = cos(πj/n), then reversed
    let xs: Vec<f64> = (0..=n).map(|j| (PI * j as f64 / n as f64).cos()).collect();
    let c = |j: usize| (if j == 0 || j == n { 2.0 } else { 1.0 }) * if j % 2 == 0 { 1.0 } else { -1.0 };
    let mut d = DMatrix::zeros(n + 1, n + 1);
    for i in 0..=n {
        for j in 0..=n {
            if i != j {
                d[(i, j)] = c(i) / c(j) / (xs[i] - xs[j]);
            }
        }
        let s: f64 = (0..=n).filter(|&j| j != i).map(|j| d[(i, j)]).sum();
        d[(i, i)] = -s;
    }
    // reverse to increasing order and map to [a, b]
    let m = n + 1;
    let scale = 2.0 / (b - a);
    let dr = DMatrix::from_fn(m, m, |i, j| d[(n - i, n - j)] * scale);
    let x = (0..m).map(|i| a + 0.5 * (b - a) * (xs[n - i] + 1.0)).collect();
    (x, dr)
}

/// Left asymptote `-√(-r/2) (1 + 1/(8r³) - 73/(128 r⁶))`.
pub fn left_asymptote(r: f64) -> f64 {
    let r3 = r * r * r;
    -(-r / 2.0).sqrt() * (1.0 + 1.0 / (8.0 * r3) - 73.0 / (128.0 * r3 * r3))
}

/// Hastings–McLeod solution on a dense uniform grid over `[-L, R]`.
#[derive(Clone, Debug)]
pub struct HMSolution {
    pub grid: Vec<f64>,
    pub q: Vec<f64>,
    pub q_prime: Vec<f64>,
    cheb: Cheb,
}

impl HMSolution {
    pub fn left(&self) -> f64 {
        self.cheb.a
    }

    pub fn right(&self) -> f64 {
        self.cheb.b
    }

    /// `(q(r), q'(r))` from the collocation interpolant; `q ≈ -Ai` beyond `R`.
    pub fn eval(&self, r: f64) -> Result<(f64, f64)> {
        if r > self.cheb.b {
            let v = airy(r);
            return Ok((-v.ai, -v.ai_prime));
        }
        if r < self.cheb.a {
            return Err(Error::OutOfGrid(format!("r = {r} below left end {}", self.cheb.a)));
        }
        Ok((self.cheb.bary(r, &self.cheb.f), self.cheb.bary(r, &self.cheb.df)))
    }
}

/// Newton iteration on the Chebyshev collocation system with `n` intervals.
pub fn hastings_mcleod(l: f64, r: f64, n: usize) -> Result<HMSolution> {
    if !(l >= 6.0 && r >= 6.0) || n < 200 {
        return Err(Error::Domain(format!("need L, R >= 6 and n >= 200; got {l}, {r}, {n}")));
    }
    let (x, d1) = cheb_grid(n, -l, r);
    let d2 = &d1 * &d1;
    let m = n + 1;
    let mut q = DVector::from_iterator(
        m,
        x.iter().map(|&s| {
            let a = airy_ai(s);
            -((-s / 2.0).max(0.0) + a * a).sqrt()
        }),
    );
    let (ql, qr) = (left_asymptote(-l), -airy_ai(r));
    let mut trace = Vec::new();
    for _ in 0..50 {
        let mut f = &d2 * &q;
        let mut j = d2.clone();
        for i in 0..m {
            f[i] -= x[i] * q[i] + 2.0 * q[i].powi(3);
            j[(i, i)] -= x[i] + 6.0 * q[i] * q[i];
        }
        for (i, target) in [(0, ql), (m - 1, qr)] {
            j.row_mut(i).fill(0.0);
            j[(i, i)] = 1.0;
            f[i] = q[i] - target;
        }
        let dq = j.lu().solve(&f).ok_or_else(|| Error::Singular("collocation Jacobian".into()))?;
        q -= &dq;
        let step = dq.amax();
        trace.push(step);
        if step < 1e-12 {
            let dq1 = &d1 * &q;
            let cheb = Cheb { a: -l, b: r, x, f: q.iter().copied().collect(), df: dq1.iter().copied().collect() };
            let h = (r + l) / (DENSE_POINTS - 1) as f64;
            let grid: Vec<f64> = (0..DENSE_POINTS).map(|i| -l + i as f64 * h).collect();
            let q: Vec<f64> = grid.iter().map(|&s| cheb.bary(s, &cheb.f)).collect();
            let q_prime = grid.iter().map(|&s| cheb.bary(s, &cheb.df)).collect();
            if q.iter().any(|&v| !(v < 0.0)) {
                return Err(Error::NoConvergence("solution is not strictly negative".into()));
            }
            return Ok(HMSolution { grid, q, q_prime, cheb });
        }
    }
    Err(Error::NoConvergence(format!("Newton steps: {trace:?}")))
}

/// Solution with the default window `[-14, 8]`, 400 collocation intervals.
pub fn hastings_mcleod_default() -> Result<HMSolution> {
    hastings_mcleod(14.0, 8.0, 400)
}

fn check_range(s: f64, hm: &HMSolution) -> Result<()> {
    if s < hm.left() + 1.0 || s > hm.right() - 1.0 {
        return Err(Error::OutOfGrid(format!(
            "s = {s} outside [{}, {}]",
            hm.left() + 1.0,
            hm.right() - 1.0
        )));
    }
    Ok(())
}

/// Gauss-Legendre panels on `[a, b]`, one per unit length.
fn panels(a: f64, b: f64) -> Result<quadrature::QuadRule> {
    quadrature::composite(a, b, ((b - a).ceil() as usize).max(1), 24)
}

/// `ln F_GUE(s) = -∫_s^∞ (u-s) q(u)² du`.
pub fn log_f_gue(s: f64, hm: &HMSolution) -> Result<f64> {
    check_range(s, hm)?;
    let r = hm.right();
    let rule = panels(s, r)?;
    let mut acc = 0.0;
    for (&u, &w) in rule.nodes.iter().zip(&rule.weights) {
        let q = hm.eval(u)?.0;
        acc += w * (u - s) * q * q;
    }
    // beyond R, q = -Ai: ∫Ai² = Ai'² - R Ai², ∫u Ai² = -(R²Ai² - R Ai'² + Ai Ai')/3
    let v = airy(r);
    let (a, ap) = (v.ai, v.ai_prime);
    let m0 = ap * ap - r * a * a;
    let m1 = -(r * r * a * a - r * ap * ap + a * ap) / 3.0;
    Ok(-(acc + m1 - s * m0))
}

pub fn f_gue(s: f64, hm: &HMSolution) -> Result<f64> {
    Ok(log_f_gue(s, hm)?.exp())
}

/// `∫_s^∞ q(u) du`, the tail beyond `R` done on `-Ai` directly.
fn integral_q(s: f64, hm: &HMSolution) -> Result<f64> {
    let r = hm.right();
    let mut acc = 0.0;
    let rule = panels(s, r)?;
    for (&u, &w) in rule.nodes.iter().zip(&rule.weights) {
        acc += w * hm.eval(u)?.0;
    }
    let tail = panels(r, r + 12.0)?;
    acc -= tail.integrate(airy_ai);
    Ok(acc)
}

/// `ln F_GOE(s) = ½∫_s^∞ q + ½ ln F_GUE(s)` for the negative solution `q ~ -Ai`.
pub fn log_f_goe(s: f64, hm: &HMSolution) -> Result<f64> {
    check_range(s, hm)?;
    Ok(0.5 * integral_q(s, hm)? + 0.5 * log_f_gue(s, hm)?)
}

pub fn f_goe(s: f64, hm: &HMSolution) -> Result<f64> {
    Ok(log_f_goe(s, hm)?.exp())
}

/// Residuals of the two self-similar reductions on `[-5, 5]`:
/// `ψ''' + 12ψψ' - 4rψ' - 2ψ` with `ψ = -q²`, and
/// `ψ''' + 12ψψ' - rψ' - 2ψ` with `ψ = ½(q' - q²)`.
/// Derivatives are 5-point central differences on the dense grid.
pub fn selfsimilar_ode_residuals(hm: &HMSolution) -> (f64, f64) {
    selfsimilar_residuals_with_step(hm, 1)
}

/// As [`selfsimilar_ode_residuals`] using every `stride`-th dense point.
pub fn selfsimilar_residuals_with_step(hm: &HMSolution, stride: usize) -> (f64, f64) {
    let h = (hm.grid[1] - hm.grid[0]) * stride as f64;
    let psi_gue: Vec<f64> = hm.q.iter().map(|q| -q * q).collect();
    let psi_goe: Vec<f64> = hm.q.iter().zip(&hm.q_prime).map(|(q, qp)| 0.5 * (qp - q * q)).collect();
    let mut worst = (0.0f64, 0.0f64);
    let k = 2 * stride;
    for i in k..hm.grid.len() - k {
        let r = hm.grid[i];
        if !(-5.0..=5.0).contains(&r) {
            continue;
        }
        let d = |p: &[f64]| {
            let f = |o: isize| p[(i as isize + o * stride as isize) as usize];
            let d1 = (f(-2) - 8.0 * f(-1) + 8.0 * f(1) - f(2)) / (12.0 * h);
            let d3 = (-f(-2) + 2.0 * f(-1) - 2.0 * f(1) + f(2)) / (2.0 * h * h * h);
            (p[i], d1, d3)
        };
        let (p, p1, p3) = d(&psi_gue);
        worst.0 = worst.0.max((p3 + 12.0 * p * p1 - 4.0 * r * p1 - 2.0 * p).abs());
        let (p, p1, p3) = d(&psi_goe);
        worst.1 = worst.1.max((p3 + 12.0 * p * p1 - r * p1 - 2.0 * p).abs());
    }
    worst
}

/// Sup of `|q'' - rq - 2q³|` over interior dense-grid points (5-point stencil).
pub fn p2_residual(hm: &HMSolution) -> f64 {
    let h = hm.grid[1] - hm.grid[0];
    let q = &hm.q;
    (2..q.len() - 2)
        .map(|i| {
            let d2 = (-q[i - 2] + 16.0 * q[i - 1] - 30.0 * q[i] + 16.0 * q[i + 1] - q[i + 2]) / (12.0 * h * h);
            (d2 - hm.grid[i] * q[i] - 2.0 * q[i].powi(3)).abs()
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::OnceLock;

    fn hm() -> &'static HMSolution {
        static HM: OnceLock<HMSolution> = OnceLock::new();
        HM.get_or_init(|| hastings_mcleod_default().unwrap())
    }

    #[test]
    fn boundary_values() {
        let h = hm();
        assert!((h.eval(8.0).unwrap().0 + airy_ai(8.0)).abs() < 1e-8);
        assert!((h.eval(-8.0).unwrap().0 + 2.0).abs() < 5e-3);
    }

    #[test]
    fn collocation_residual_small() {
        assert!(p2_residual(hm()) < 1e-8, "{}", p2_residual(hm()));
    }

    #[test]
    fn tail_limits() {
        let h = hm();
        assert!(1.0 - f_gue(4.0, h).unwrap() < 1e-4);
        assert!(1.0 - f_goe(4.0, h).unwrap() < 1e-3);
        assert!(f_gue(-2.0, h).unwrap() < f_gue(-1.0, h).unwrap());
    }

    #[test]
    fn out_of_grid() {
        assert!(f_gue(-13.5, hm()).is_err());
    }

    #[test]
    fn self_similar_reductions() {
        let (a, b) = selfsimilar_ode_residuals(hm());
        assert!(a < 1e-5 && b < 1e-5, "{a} {b}");
    }
}
