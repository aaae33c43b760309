//! Finite-difference residuals of the PDEs and identities satisfied by the
//! distribution functions, on small tensor-product stencils.
//!
//! Every residual is normalized by the largest single-term magnitude over the
//! evaluated points, so a value of `1e-3` means the terms cancel to three digits.

use std::ops::{AddAssign, Mul};

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Values on a uniform `(t, x, r)` grid, `values[(it·n_x + ix)·n_r + ir]`.
///
/// For the matrix and Airy-process identities the axes are `(t, y, a)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Grid<T> {
    pub t0: f64,
    pub x0: f64,
    pub r0: f64,
    pub ht: f64,
    pub hx: f64,
    pub hr: f64,
    pub dims: [usize; 3],
    pub values: Vec<T>,
}

pub type GridField = Grid<f64>;
pub type MatrixField = Grid<DMatrix<f64>>;

impl<T: Clone + Send> Grid<T> {
    /// Tabulate `f` on the grid centered at `center`.
    pub fn tabulate<F>(center: [f64; 3], steps: [f64; 3], dims: [usize; 3], f: F) -> Result<Self>
    where
        F: Fn(f64, f64, f64) -> Result<T> + Sync,
    {
        if dims.iter().any(|&n| n == 0 || n % 2 == 0) {
            return Err(Error::Stencil(format!("grid dims must be odd and positive, got {dims:?}")));
        }
        let origin: Vec<f64> = (0..3).map(|k| center[k] - (dims[k] / 2) as f64 * steps[k]).collect();
        let total = dims[0] * dims[1] * dims[2];
        let values = (0..total)
            .into_par_iter()
            .map(|i| {
                let (it, rem) = (i / (dims[1] * dims[2]), i % (dims[1] * dims[2]));
                let (ix, ir) = (rem / dims[2], rem % dims[2]);
                f(
                    origin[0] + it as f64 * steps[0],
                    origin[1] + ix as f64 * steps[1],
                    origin[2] + ir as f64 * steps[2],
                )
            })
            .collect::<Result<Vec<T>>>()?;
        Ok(Grid {
            t0: origin[0],
            x0: origin[1],
            r0: origin[2],
            ht: steps[0],
            hx: steps[1],
            hr: steps[2],
            dims,
            values,
        })
    }
}

impl<T> Grid<T> {
    fn at(&self, i: [usize; 3]) -> &T {
        &self.values[(i[0] * self.dims[1] + i[1]) * self.dims[2] + i[2]]
    }

    pub fn coords(&self, i: [usize; 3]) -> [f64; 3] {
        [
            self.t0 + i[0] as f64 * self.ht,
            self.x0 + i[1] as f64 * self.hx,
            self.r0 + i[2] as f64 * self.hr,
        ]
    }

    pub fn center(&self) -> [usize; 3] {
        [self.dims[0] / 2, self.dims[1] / 2, self.dims[2] / 2]
    }
}

/// Second-order central stencil for the `k`-th derivative, offsets `-w..=w`.
fn stencil(k: usize) -> &'static [f64] {
    match k {
        0 => &[1.0],
        1 => &[-0.5, 0.0, 0.5],
        2 => &[1.0, -2.0, 1.0],
        3 => &[-0.5, 1.0, 0.0, -1.0, 0.5],
        4 => &[1.0, -4.0, 6.0, -4.0, 1.0],
        5 => &[-0.5, 2.0, -2.5, 0.0, 2.5, -2.0, 0.5],
        _ => unreachable!("derivative order above 5"),
    }
}

impl<T> Grid<T>
where
    T: Clone + AddAssign + Mul<f64, Output = T>,
{
    /// Mixed partial `∂_t^{o0} ∂_x^{o1} ∂_r^{o2}` at grid index `i`.
    fn deriv(&self, i: [usize; 3], o: [usize; 3]) -> T {
        let h = [self.ht, self.hx, self.hr];
        let scale: f64 = (0..3).map(|k| h[k].powi(o[k] as i32)).product::<f64>().recip();
        let (s0, s1, s2) = (stencil(o[0]), stencil(o[1]), stencil(o[2]));
        let (w0, w1, w2) = (s0.len() / 2, s1.len() / 2, s2.len() / 2);
        let mut acc: Option<T> = None;
        for (a, &c0) in s0.iter().enumerate() {
            for (b, &c1) in s1.iter().enumerate() {
                for (c, &c2) in s2.iter().enumerate() {
                    let c = (c, c0 * c1 * c2);
                    let idx = [i[0] + a - w0, i[1] + b - w1, i[2] + c.0 - w2];
                    let term = self.at(idx).clone() * (c.1 * scale);
                    match acc.as_mut() {
                        Some(v) => *v += term,
                        None => acc = Some(term),
                    }
                }
            }
        }
        acc.expect("stencils are non-empty")
    }
}

/// Normalized residual of one identity over a stencil grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub identity: String,
    pub residual_sup: f64,
    pub residual_l2: f64,
    /// Largest magnitude of each term, divided by the largest over all terms.
    pub term_magnitudes: Vec<f64>,
    pub steps: [f64; 3],
    pub quad_n: usize,
    pub points: usize,
}

/// Evaluate `terms` at every index where stencils of half-width `hw` fit,
/// with `norm` measuring a term or residual value.
fn evaluate<T, V>(
    field: &Grid<T>,
    identity: &str,
    hw: [usize; 3],
    norm: impl Fn(&V) -> f64,
    terms: impl Fn([usize; 3]) -> Vec<V>,
) -> Result<ResidualReport>
where
    V: Clone + AddAssign,
{
    for k in 0..3 {
        if field.dims[k] < 2 * hw[k] + 1 {
            return Err(Error::Stencil(format!(
                "{identity}: axis {k} has {} points, needs {}",
                field.dims[k],
                2 * hw[k] + 1
            )));
        }
    }
    let mut per_term: Vec<f64> = Vec::new();
    let mut residuals = Vec::new();
    for i0 in hw[0]..field.dims[0] - hw[0] {
        for i1 in hw[1]..field.dims[1] - hw[1] {
            for i2 in hw[2]..field.dims[2] - hw[2] {
                let ts = terms([i0, i1, i2]);
                if per_term.is_empty() {
                    per_term = vec![0.0; ts.len()];
                }
                let mut sum = ts[0].clone();
                for (k, t) in ts.iter().enumerate() {
                    per_term[k] = per_term[k].max(norm(t));
                    if k > 0 {
                        sum += t.clone();
                    }
                }
                residuals.push(norm(&sum));
            }
        }
    }
    let scale = per_term.iter().cloned().fold(0.0, f64::max);
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let sup = residuals.iter().cloned().fold(0.0, f64::max) / scale;
    let l2 = (residuals.iter().map(|r| r * r).sum::<f64>() / residuals.len() as f64).sqrt() / scale;
    if !sup.is_finite() {
        return Err(Error::Stencil(format!("{identity}: non-finite residual")));
    }
    Ok(ResidualReport {
        identity: identity.to_string(),
        residual_sup: sup,
        residual_l2: l2,
        term_magnitudes: per_term.iter().map(|m| m / scale).collect(),
        steps: [field.ht, field.hx, field.hr],
        quad_n: 0,
        points: residuals.len(),
    })
}

/// `F F_tr - F_t F_r + F F_rrrr/12 - F_r F_rrr/3 + F_rr²/4 + F F_xx/4 - F_x²/4` on a field of `F`.
pub fn hirota_residual(field: &GridField) -> Result<ResidualReport> {
    if field.dims[0] < 5 || field.dims[1] < 5 || field.dims[2] < 7 {
        return Err(Error::Stencil(format!("Hirota needs dims >= (5,5,7), got {:?}", field.dims)));
    }
    evaluate(field, "hirota", [1, 1, 2], |v: &f64| v.abs(), |i| {
        let d = |o| field.deriv(i, o);
        let f = *field.at(i);
        let (ft, fr, fx) = (d([1, 0, 0]), d([0, 0, 1]), d([0, 1, 0]));
        let (frr, frrr) = (d([0, 0, 2]), d([0, 0, 3]));
        vec![
            f * d([1, 0, 1]),
            -ft * fr,
            f * d([0, 0, 4]) / 12.0,
            -fr * frrr / 3.0,
            0.25 * frr * frr,
            0.25 * f * d([0, 2, 0]),
            -0.25 * fx * fx,
        ]
    })
}

/// KP-II for `φ = ∂_r² G` on a field of `G = ln F`:
/// `G_trr + G_rr G_rrr + G_rrrrr/12 + G_xxr/4`.
pub fn kp_scalar_residual(field: &GridField) -> Result<ResidualReport> {
    evaluate(field, "kp_scalar", [1, 1, 3], |v: &f64| v.abs(), |i| {
        let d = |o| field.deriv(i, o);
        vec![d([1, 0, 2]), d([0, 0, 2]) * d([0, 0, 3]), d([0, 0, 5]) / 12.0, d([0, 2, 1]) / 4.0]
    })
}

fn sup_norm(m: &DMatrix<f64>) -> f64 {
    m.amax()
}

/// Matrix KP for `q = ∂_a Q` on a field of boundary resolvents `Q(t, y, a)`:
/// `q_t + ½(q q_a + q_a q) + q_aaa/12 + Q_yy/4 + ½(q Q_y - Q_y q)`.
pub fn matrix_kp_residual(field: &MatrixField) -> Result<ResidualReport> {
    evaluate(field, "matrix_kp", [1, 1, 2], sup_norm, |i| {
        let d = |o| field.deriv(i, o);
        let q = d([0, 0, 1]);
        let qa = d([0, 0, 2]);
        let qy = d([0, 1, 0]);
        vec![
            d([1, 0, 1]),
            (&q * &qa + &qa * &q) * 0.5,
            d([0, 0, 4]) / 12.0,
            d([0, 2, 0]) / 4.0,
            (&q * &qy - &qy * &q) * 0.5,
        ]
    })
}

/// `σ₂(q)/σ₁(q)` and the relative defect of `tr(q q_a) = tr q · tr q_a` at the
/// grid center, with `q = ∂_a Q` and `q_a = ∂_a² Q`.
pub fn rank_one_and_trace_check(field: &MatrixField) -> Result<(f64, f64)> {
    if field.dims[2] < 3 {
        return Err(Error::Stencil("rank-one check needs 3 points in a".into()));
    }
    let c = field.center();
    let q = field.deriv(c, [0, 0, 1]);
    let qa = field.deriv(c, [0, 0, 2]);
    if q.nrows() == 1 {
        return Ok((0.0, 0.0));
    }
    let sv = q.clone().singular_values();
    let mut s: Vec<f64> = sv.iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    let ratio = if s[0] > 0.0 { s[1] / s[0] } else { 0.0 };
    let lhs = (&q * &qa).trace();
    let rhs = q.trace() * qa.trace();
    let denom = lhs.abs().max(rhs.abs()).max(f64::MIN_POSITIVE);
    Ok((ratio, (lhs - rhs).abs() / denom))
}

/// Cylindrical KdV for `φ̂ = ∂_r² Ĝ` on an `(n_t, 1, n_r)` field of `Ĝ`:
/// `φ̂_t + φ̂_r/(2t) + φ̂ φ̂_r + φ̂_rrr/12 + φ̂/(2t)`.
pub fn cylindrical_kdv_residual(field: &GridField) -> Result<ResidualReport> {
    if field.t0 < 0.5 {
        return Err(Error::Domain(format!("cylindrical KdV needs t >= 0.5, got {}", field.t0)));
    }
    evaluate(field, "cylindrical_kdv", [1, 0, 3], |v: &f64| v.abs(), |i| {
        let d = |o| field.deriv(i, o);
        let t = field.coords(i)[0];
        let (p, pr) = (d([0, 0, 2]), d([0, 0, 3]));
        vec![d([1, 0, 2]), pr / (2.0 * t), p * pr, d([0, 0, 5]) / 12.0, p / (2.0 * t)]
    })
}

/// Cubic lower-tail fit: least squares of `-ln F` against `|r|³` (with an
/// intercept) over the deepest 30% of the points. Returns `(slope, r²)`.
pub fn tail_slope_fit(r_eff: &[f64], log_f: &[f64]) -> Result<(f64, f64)> {
    if r_eff.len() != log_f.len() || r_eff.len() < 4 {
        return Err(Error::Range("tail fit needs at least 4 matching samples".into()));
    }
    let deepest = r_eff.iter().cloned().fold(f64::INFINITY, f64::min);
    if deepest > -5.0 {
        return Err(Error::Range(format!("tail fit needs r <= -5, deepest is {deepest}")));
    }
    let mut idx: Vec<usize> = (0..r_eff.len()).collect();
    idx.sort_by(|&a, &b| r_eff[a].total_cmp(&r_eff[b]));
    let keep = ((0.3 * idx.len() as f64).ceil() as usize).max(3);
    let pts: Vec<(f64, f64)> = idx[..keep].iter().map(|&i| (r_eff[i].abs().powi(3), -log_f[i])).collect();
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::Range("tail fit abscissae are degenerate".into()));
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    Ok((slope, r2))
}
