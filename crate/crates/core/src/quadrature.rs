//! Gauss-Legendre rules and the domain maps used to discretize half-lines,
//! the real line and vertical contours.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};

pub const MAX_GL: usize = 512;

/// Which domain a rule discretizes.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Domain {
    Reference,
    Interval { a: f64, b: f64 },
    HalfLine { r0: f64, scale: f64 },
    /// `(-inf, b]`, the mirror image of a half-line.
    LeftHalfLine { b: f64, scale: f64 },
    WholeLine { center: f64, scale: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadRule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
    pub domain: Domain,
}

impl QuadRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes.iter().zip(&self.weights).map(|(&x, &w)| w * f(x)).sum()
    }

    /// Concatenate two rules (used for split whole-line discretizations).
    pub fn concat(&self, other: &QuadRule) -> QuadRule {
        let mut nodes = self.nodes.clone();
        let mut weights = self.weights.clone();
        nodes.extend_from_slice(&other.nodes);
        weights.extend_from_slice(&other.weights);
        QuadRule { nodes, weights, domain: Domain::Reference }
    }
}

/// Gauss-Legendre rule with `n` nodes on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> Result<QuadRule> {
    if n == 0 || n > MAX_GL {
        return Err(Error::Size(format!("Gauss-Legendre order {n} not in 1..={MAX_GL}")));
    }
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut x = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Ok(QuadRule { nodes, weights, domain: Domain::Reference })
}

/// P_n(x) and P_n'(x) by the three-term recurrence.
fn legendre(n: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}

/// Affine map of a reference rule onto `[a, b]`.
pub fn map_interval(rule: &QuadRule, a: f64, b: f64) -> QuadRule {
    let h = 0.5 * (b - a);
    let c = 0.5 * (b + a);
    QuadRule {
        nodes: rule.nodes.iter().map(|x| c + h * x).collect(),
        weights: rule.weights.iter().map(|w| h * w).collect(),
        domain: Domain::Interval { a, b },
    }
}

/// Composite rule: `panels` equal panels on `[a, b]` with `per_panel` nodes each.
pub fn composite(a: f64, b: f64, panels: usize, per_panel: usize) -> Result<QuadRule> {
    let base = gauss_legendre(per_panel)?;
    let h = (b - a) / panels as f64;
    let mut nodes = Vec::with_capacity(panels * per_panel);
    let mut weights = Vec::with_capacity(panels * per_panel);
    for p in 0..panels {
        let m = map_interval(&base, a + p as f64 * h, a + (p + 1) as f64 * h);
        nodes.extend(m.nodes);
        weights.extend(m.weights);
    }
    Ok(QuadRule { nodes, weights, domain: Domain::Interval { a, b } })
}

/// Algebraic map `u = r0 + scale (1+ξ)/(1-ξ)` onto `[r0, ∞)`.
pub fn map_half_line(rule: &QuadRule, r0: f64, scale: f64) -> Result<QuadRule> {
    if !(scale > 0.0) {
        return Err(Error::Domain(format!("half-line scale must be positive, got {scale}")));
    }
    let mut nodes = Vec::with_capacity(rule.len());
    let mut weights = Vec::with_capacity(rule.len());
    for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
        let d = 1.0 - x;
        nodes.push(r0 + scale * (1.0 + x) / d);
        weights.push(w * 2.0 * scale / (d * d));
    }
    Ok(QuadRule { nodes, weights, domain: Domain::HalfLine { r0, scale } })
}

/// Mirror of [`map_half_line`]: nodes on `(-∞, b]`, increasing.
pub fn map_left_half_line(rule: &QuadRule, b: f64, scale: f64) -> Result<QuadRule> {
    let h = map_half_line(rule, 0.0, scale)?;
    let nodes: Vec<f64> = h.nodes.iter().rev().map(|u| b - u).collect();
    let weights: Vec<f64> = h.weights.iter().rev().copied().collect();
    Ok(QuadRule { nodes, weights, domain: Domain::LeftHalfLine { b, scale } })
}

/// Map `u = center + scale·tan(πξ/2)` onto the real line.
pub fn map_whole_line(rule: &QuadRule, center: f64, scale: f64) -> Result<QuadRule> {
    if !(scale > 0.0) {
        return Err(Error::Domain(format!("whole-line scale must be positive, got {scale}")));
    }
    let mut nodes = Vec::with_capacity(rule.len());
    let mut weights = Vec::with_capacity(rule.len());
    for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
        let a = 0.5 * PI * x;
        let c = a.cos();
        nodes.push(center + scale * a.tan());
        weights.push(w * scale * 0.5 * PI / (c * c));
    }
    Ok(QuadRule { nodes, weights, domain: Domain::WholeLine { center, scale } })
}

/// Rule on a complex contour: nodes `z_k` and weights carrying `dz`.
#[derive(Clone, Debug, PartialEq)]
pub struct ContourRule {
    pub nodes: Vec<Complex64>,
    pub weights: Vec<Complex64>,
}

impl ContourRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn integrate(&self, f: impl Fn(Complex64) -> Complex64) -> Complex64 {
        self.nodes.iter().zip(&self.weights).map(|(&z, &w)| w * f(z)).sum()
    }
}

/// Upward vertical segment `anchor + i s`, `s ∈ [-H, H]`, with GL nodes in `s`.
pub fn contour_vertical(anchor: f64, half_height: f64, n: usize) -> Result<ContourRule> {
    if !(half_height > 0.0) {
        return Err(Error::Domain(format!("half-height must be positive, got {half_height}")));
    }
    let gl = map_interval(&gauss_legendre(n)?, -half_height, half_height);
    Ok(ContourRule {
        nodes: gl.nodes.iter().map(|&s| Complex64::new(anchor, s)).collect(),
        weights: gl.weights.iter().map(|&w| Complex64::new(0.0, w)).collect(),
    })
}

/// Upward contour `z(s) = path(s) + i s` for `s ∈ [-H, H]`, split into
/// `panels` GL panels. `path` returns the real part and its derivative.
pub fn contour_parametric(
    path: impl Fn(f64) -> (f64, f64),
    half_height: f64,
    panels: usize,
    per_panel: usize,
) -> Result<ContourRule> {
    if !(half_height > 0.0) || panels == 0 {
        return Err(Error::Domain(format!("bad contour: H={half_height}, panels={panels}")));
    }
    let h = 2.0 * half_height / panels as f64;
    let breaks: Vec<f64> = (0..=panels).map(|k| -half_height + k as f64 * h).collect();
    contour_panels(path, &breaks, per_panel)
}

/// As [`contour_parametric`] with explicit increasing panel breakpoints in `s`.
pub fn contour_panels(path: impl Fn(f64) -> (f64, f64), breaks: &[f64], per_panel: usize) -> Result<ContourRule> {
    if breaks.len() < 2 || breaks.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Domain("contour breakpoints must be increasing".into()));
    }
    let base = gauss_legendre(per_panel)?;
    let mut nodes = Vec::with_capacity((breaks.len() - 1) * per_panel);
    let mut weights = Vec::with_capacity(nodes.capacity());
    for w in breaks.windows(2) {
        let m = map_interval(&base, w[0], w[1]);
        for (&s, &wt) in m.nodes.iter().zip(&m.weights) {
            let (re, dre) = path(s);
            nodes.push(Complex64::new(re, s));
            weights.push(Complex64::new(dre, 1.0) * wt);
        }
    }
    Ok(ContourRule { nodes, weights })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn small_rules() {
        let r1 = gauss_legendre(1).unwrap();
        assert_eq!(r1.nodes, vec![0.0]);
        assert!((r1.weights[0] - 2.0).abs() < 1e-15);
        let r2 = gauss_legendre(2).unwrap();
        assert!((r2.nodes[1] - 0.577_350_269_189_625_8).abs() < 1e-15);
        assert!((r2.weights[0] - 1.0).abs() < 1e-15);
        assert!(gauss_legendre(0).is_err());
        assert!(gauss_legendre(513).is_err());
    }

    #[test]
    fn weights_sum_to_two() {
        for n in [3, 17, 64, 200, 512] {
            let r = gauss_legendre(n).unwrap();
            let s: f64 = r.weights.iter().sum();
            assert!((s - 2.0).abs() < 1e-14, "n={n}: {s}");
        }
    }

    #[test]
    fn exactness_degree() {
        let r = gauss_legendre(16).unwrap();
        let v = r.integrate(|x| x.powi(30));
        assert!((v - 2.0 / 31.0).abs() < 1e-13);
    }

    #[test]
    fn half_line_moments() {
        let r = map_half_line(&gauss_legendre(64).unwrap(), 0.0, 4.0).unwrap();
        assert!((r.integrate(|u| (-2.0 * u).exp()) - 0.5).abs() < 1e-10);
        assert!((r.integrate(|u| u * (-u).exp()) - 1.0).abs() < 1e-9);
        assert!(r.nodes.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn left_half_line_mirror() {
        let r = map_left_half_line(&gauss_legendre(64).unwrap(), 1.0, 4.0).unwrap();
        assert!(r.nodes.iter().all(|&u| u <= 1.0));
        assert!((r.integrate(|u| (2.0 * (u - 1.0)).exp()) - 0.5).abs() < 1e-10);
    }

    #[test]
    fn whole_line_gaussian() {
        let r = map_whole_line(&gauss_legendre(128).unwrap(), 0.0, 1.0).unwrap();
        assert!((r.integrate(|u| (-u * u).exp()) - PI.sqrt()).abs() < 1e-8);
        assert!(r.integrate(|u| u * (-u * u).exp()).abs() < 1e-12);
    }
}
