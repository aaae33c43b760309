//! Short-time behaviour of the wedge scattering kernels and the Brownian
//! objects they converge to: hitting kernels, constrained bridge densities
//! (by nested Gaussian quadrature and by Monte Carlo), the `t → 0` block
//! kernel, and the path-integral form of the narrow-wedge determinant.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fredholm::{boundary_resolvent, det_one_minus_matrix, Nystrom};
use crate::kernels::{heat_kernel, heat_unchecked, log_s, KernelSpec, Wedge, MAX_WEDGES};
use crate::quadrature::{self, QuadRule};

/// Nodes per Gauss-Legendre panel in the bridge integrals.
const BRIDGE_PER_PANEL: usize = 16;
/// Gaussian tails are cut this many standard deviations out.
const TAIL_SIGMAS: f64 = 12.0;
/// Monte-Carlo paths per RNG stream.
const MC_CHUNK: usize = 10_000;
/// A boundary-resolvent diagonal above this is reported as divergent.
pub const DIVERGENCE_LEVEL: f64 = 1e3;

/// Finite collection of narrow wedges together with observation points.
#[derive(Clone, Debug, PartialEq)]
pub struct WedgeConfig {
    pub wedges: Vec<Wedge>,
    pub xs: Vec<f64>,
    pub rs: Vec<f64>,
}

impl WedgeConfig {
    pub fn new(wedges: Vec<Wedge>, xs: Vec<f64>, rs: Vec<f64>) -> Result<Self> {
        let cfg = WedgeConfig { wedges, xs, rs };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.wedges.is_empty() || self.wedges.len() > MAX_WEDGES {
            return Err(Error::Size(format!("wedge count {} not in 1..={MAX_WEDGES}", self.wedges.len())));
        }
        if self.wedges.windows(2).any(|w| !(w[1].a > w[0].a)) {
            return Err(Error::Ordering("wedge positions must be strictly increasing".into()));
        }
        if self.xs.is_empty() || self.xs.len() != self.rs.len() {
            return Err(Error::Domain("xs and rs must be non-empty and of equal length".into()));
        }
        if self.xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Ordering("xs must be strictly increasing".into()));
        }
        let finite = self.wedges.iter().all(|w| w.a.is_finite() && w.b.is_finite());
        if !finite || self.xs.iter().chain(&self.rs).any(|v| !v.is_finite()) {
            return Err(Error::Domain("wedge config must be finite".into()));
        }
        Ok(())
    }

    /// Initial profile: `b` at a wedge position, `-∞` elsewhere.
    pub fn profile(&self, x: f64) -> f64 {
        self.wedges.iter().find(|w| w.a == x).map_or(f64::NEG_INFINITY, |w| w.b)
    }

    fn check_pair(&self, i: usize, j: usize) -> Result<(f64, f64)> {
        let n = self.xs.len();
        if i >= n || j >= n {
            return Err(Error::Size(format!("index pair ({i},{j}) out of range for {n} points")));
        }
        let (xi, xj) = (self.xs[i], self.xs[j]);
        if !(xi < xj) {
            return Err(Error::Ordering(format!("need x_i < x_j, got {xi} >= {xj}")));
        }
        Ok((xi, xj))
    }

    fn wedges_in(&self, lo: f64, hi: f64) -> Vec<Wedge> {
        self.wedges.iter().copied().filter(|w| w.a >= lo && w.a <= hi).collect()
    }
}

/// Pointwise constraint `lo ≤ B(pos) ≤ hi`.
#[derive(Clone, Copy, Debug)]
struct Gate {
    pos: f64,
    lo: f64,
    hi: f64,
}

fn indicator(g: &Gate, y: f64) -> f64 {
    if y >= g.lo && y <= g.hi {
        1.0
    } else {
        0.0
    }
}

/// Sort gates and intersect those at equal positions.
fn merge_gates(mut gates: Vec<Gate>) -> Vec<Gate> {
    gates.sort_by(|a, b| a.pos.total_cmp(&b.pos));
    let mut out: Vec<Gate> = Vec::with_capacity(gates.len());
    for g in gates {
        match out.last_mut() {
            Some(last) if last.pos == g.pos => {
                last.lo = last.lo.max(g.lo);
                last.hi = last.hi.min(g.hi);
            }
            _ => out.push(g),
        }
    }
    out
}

/// Density of a diffusivity-2 Brownian motion from `(start, u)` to
/// `(end, v)` restricted to pass every gate, on node sets `us × vs`.
fn gated_density(start: f64, end: f64, gates: Vec<Gate>, us: &[f64], vs: &[f64]) -> Result<DMatrix<f64>> {
    if !(end > start) {
        return Err(Error::Ordering(format!("bridge needs start < end, got {start} >= {end}")));
    }
    let gates = merge_gates(gates);
    if gates.iter().any(|g| g.pos < start || g.pos > end) {
        return Err(Error::Domain("gate outside the bridge interval".into()));
    }
    let row_mask: Vec<f64> =
        us.iter().map(|&u| gates.iter().filter(|g| g.pos == start).map(|g| indicator(g, u)).product()).collect();
    let col_mask: Vec<f64> =
        vs.iter().map(|&v| gates.iter().filter(|g| g.pos == end).map(|g| indicator(g, v)).product()).collect();
    let inner: Vec<Gate> = gates.into_iter().filter(|g| g.pos > start && g.pos < end).collect();

    let mut out = if inner.is_empty() {
        DMatrix::from_fn(us.len(), vs.len(), |i, j| heat_unchecked(end - start, us[i], vs[j]))
    } else {
        let mut times = Vec::with_capacity(inner.len() + 1);
        times.push(inner[0].pos - start);
        for w in inner.windows(2) {
            times.push(w[1].pos - w[0].pos);
        }
        times.push(end - inner[inner.len() - 1].pos);
        let spread = TAIL_SIGMAS * (2.0 * (end - start)).sqrt();
        let finite_bounds = inner.iter().flat_map(|g| [g.lo, g.hi]).filter(|v| v.is_finite());
        let all: Vec<f64> = us.iter().chain(vs).copied().chain(finite_bounds).collect();
        let lo_all = all.iter().copied().fold(f64::INFINITY, f64::min) - spread;
        let hi_all = all.iter().copied().fold(f64::NEG_INFINITY, f64::max) + spread;
        let mut rules = Vec::with_capacity(inner.len());
        for (p, g) in inner.iter().enumerate() {
            let (a, b) = (g.lo.max(lo_all), g.hi.min(hi_all));
            if !(b > a) {
                return Ok(DMatrix::zeros(us.len(), vs.len()));
            }
            let sigma = (2.0 * times[p].min(times[p + 1])).sqrt();
            let panels = (((b - a) / sigma).ceil() as usize).clamp(1, 4000);
            rules.push(quadrature::composite(a, b, panels, BRIDGE_PER_PANEL)?);
        }
        chain_product(&rules, &times, us, vs)
    };
    for (i, m) in row_mask.iter().enumerate() {
        out.row_mut(i).scale_mut(*m);
    }
    for (j, m) in col_mask.iter().enumerate() {
        out.column_mut(j).scale_mut(*m);
    }
    Ok(out)
}

/// `e^{l_0∂²} W_1 e^{l_1∂²} W_2 ⋯ e^{l_k∂²}` where `W_p` is the quadrature rule of gate `p`.
fn chain_product(rules: &[QuadRule], times: &[f64], us: &[f64], vs: &[f64]) -> DMatrix<f64> {
    let first = &rules[0];
    let mut acc = DMatrix::from_fn(us.len(), first.len(), |i, k| {
        heat_unchecked(times[0], us[i], first.nodes[k]) * first.weights[k]
    });
    for p in 1..rules.len() {
        let (prev, next) = (&rules[p - 1], &rules[p]);
        let h = DMatrix::from_fn(prev.len(), next.len(), |k, l| {
            heat_unchecked(times[p], prev.nodes[k], next.nodes[l]) * next.weights[l]
        });
        acc = acc * h;
    }
    let last = &rules[rules.len() - 1];
    let right = DMatrix::from_fn(last.len(), vs.len(), |k, j| heat_unchecked(times[rules.len()], last.nodes[k], vs[j]));
    acc * right
}

/// Hit kernel `P^{Hit}_{x_i,x_j}` on node sets: density of paths from
/// `(x_i, u)` to `(x_j, v)` that end up at or below some wedge in `[x_i, x_j]`.
pub fn hit_block(cfg: &WedgeConfig, i: usize, j: usize, us: &[f64], vs: &[f64]) -> Result<DMatrix<f64>> {
    cfg.validate()?;
    let (xi, xj) = cfg.check_pair(i, j)?;
    let inside = cfg.wedges_in(xi, xj);
    let k = inside.len();
    let mut out = DMatrix::zeros(us.len(), vs.len());
    for mask in 1u32..(1 << k) {
        let gates: Vec<Gate> = (0..k)
            .filter(|p| mask & (1 << p) != 0)
            .map(|p| Gate { pos: inside[p].a, lo: f64::NEG_INFINITY, hi: inside[p].b })
            .collect();
        let sign = if gates.len() % 2 == 1 { 1.0 } else { -1.0 };
        out += gated_density(xi, xj, gates, us, vs)? * sign;
    }
    Ok(out)
}

pub fn hit_kernel(cfg: &WedgeConfig, i: usize, j: usize, u: f64, v: f64) -> Result<f64> {
    Ok(hit_block(cfg, i, j, &[u], &[v])?[(0, 0)])
}

/// `P^{No hit}_{x_i,x_j}` computed directly from lower gates, independent
/// of the inclusion-exclusion route in [`hit_block`].
pub fn no_hit_block(cfg: &WedgeConfig, i: usize, j: usize, us: &[f64], vs: &[f64]) -> Result<DMatrix<f64>> {
    cfg.validate()?;
    let (xi, xj) = cfg.check_pair(i, j)?;
    let gates =
        cfg.wedges_in(xi, xj).iter().map(|w| Gate { pos: w.a, lo: w.b.next_up(), hi: f64::INFINITY }).collect();
    gated_density(xi, xj, gates, us, vs)
}

/// Density at `(x_j, r_j)` of a path from `(x_i, r_i)` that stays above each
/// wedge in `[x_i, x_j]` and below `r_n` at every intermediate `x_n`.
pub fn constrained_bridge_density(cfg: &WedgeConfig, i: usize, j: usize) -> Result<f64> {
    cfg.validate()?;
    let (xi, xj) = cfg.check_pair(i, j)?;
    let mut gates: Vec<Gate> =
        cfg.wedges_in(xi, xj).iter().map(|w| Gate { pos: w.a, lo: w.b, hi: f64::INFINITY }).collect();
    gates.extend((i + 1..j).map(|n| Gate { pos: cfg.xs[n], lo: f64::NEG_INFINITY, hi: cfg.rs[n] }));
    Ok(gated_density(xi, xj, gates, &[cfg.rs[i]], &[cfg.rs[j]])?[(0, 0)])
}

/// Monte-Carlo estimate of [`constrained_bridge_density`] with its standard error.
///
/// Bridge values are sampled exactly at the constraint positions, so no time
/// stepping is involved. Chunk `c` of `MC_CHUNK` paths draws from the ChaCha8
/// stream `c` of `seed`, which makes the estimate independent of thread count.
pub fn monte_carlo_bridge_density(cfg: &WedgeConfig, i: usize, j: usize, samples: usize, seed: u64) -> Result<(f64, f64)> {
    cfg.validate()?;
    let (xi, xj) = cfg.check_pair(i, j)?;
    if samples < 2 {
        return Err(Error::Size("need at least two Monte-Carlo samples".into()));
    }
    let (ri, rj) = (cfg.rs[i], cfg.rs[j]);
    let mut gates: Vec<Gate> =
        cfg.wedges_in(xi, xj).iter().map(|w| Gate { pos: w.a, lo: w.b, hi: f64::INFINITY }).collect();
    gates.extend((i + 1..j).map(|n| Gate { pos: cfg.xs[n], lo: f64::NEG_INFINITY, hi: cfg.rs[n] }));
    let gates = merge_gates(gates);
    let ends: f64 = gates
        .iter()
        .map(|g| match g.pos {
            p if p == xi => indicator(g, ri),
            p if p == xj => indicator(g, rj),
            _ => 1.0,
        })
        .product();
    let inner: Vec<Gate> = gates.into_iter().filter(|g| g.pos > xi && g.pos < xj).collect();
    let chunks = samples.div_ceil(MC_CHUNK);
    let hits: usize = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(c as u64);
            let n = MC_CHUNK.min(samples - c * MC_CHUNK);
            (0..n)
                .filter(|_| {
                    let (mut s, mut y) = (xi, ri);
                    inner.iter().all(|g| {
                        let frac = (g.pos - s) / (xj - s);
                        let var = 2.0 * (g.pos - s) * (xj - g.pos) / (xj - s);
                        let z: f64 = StandardNormal.sample(&mut rng);
                        y += frac * (rj - y) + var.sqrt() * z;
                        s = g.pos;
                        y >= g.lo && y <= g.hi
                    })
                })
                .count()
        })
        .sum();
    let p = hits as f64 / samples as f64;
    let free = heat_kernel(xj - xi, ri, rj)? * ends;
    let se = (p * (1.0 - p) / (samples - 1) as f64).sqrt();
    Ok((free * p, free * se))
}

/// One comparison between a boundary-resolvent entry and its `t → 0` limit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RkRow {
    pub t: f64,
    pub i: usize,
    pub j: usize,
    pub fredholm_value: f64,
    pub oracle_value: f64,
    pub abs_err: f64,
    /// Diagonal entry at an observation point below the profile whose
    /// resolvent value exceeds [`DIVERGENCE_LEVEL`].
    pub divergent: bool,
}

/// Boundary resolvent of the extended wedge kernel against its short-time
/// limit: minus the constrained bridge density above the diagonal, zero elsewhere.
pub fn rk_limit_check(cfg: &WedgeConfig, t_seq: &[f64], nys: &Nystrom) -> Result<Vec<RkRow>> {
    cfg.validate()?;
    if t_seq.is_empty() || t_seq.iter().any(|&t| !(t > 0.0 && t <= 0.2)) {
        return Err(Error::Domain("t_seq must be non-empty and inside (0, 0.2]".into()));
    }
    let n = cfg.xs.len();
    let mut oracle = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i + 1..n {
            oracle[(i, j)] = -constrained_bridge_density(cfg, i, j)?;
        }
    }
    let tables: Vec<Vec<RkRow>> = t_seq
        .par_iter()
        .map(|&t| {
            let spec = KernelSpec::multiwedge(t, cfg.xs.clone(), cfg.rs.clone(), cfg.wedges.clone());
            let q = boundary_resolvent(&spec, nys)?.q_matrix;
            let mut rows = Vec::with_capacity(n * n);
            for i in 0..n {
                for j in 0..n {
                    let below = cfg.rs[i] < cfg.profile(cfg.xs[i]);
                    let (f, o) = (q[(i, j)], oracle[(i, j)]);
                    rows.push(RkRow {
                        t,
                        i,
                        j,
                        fredholm_value: f,
                        oracle_value: o,
                        abs_err: (f - o).abs(),
                        divergent: i == j && below && f.abs() > DIVERGENCE_LEVEL,
                    });
                }
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    Ok(tables.into_iter().flatten().collect())
}

/// Largest error per `t`, in the order of `t_seq`.
pub fn rk_errors_by_t(rows: &[RkRow]) -> Vec<(f64, f64)> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    for r in rows {
        match out.iter_mut().find(|(t, _)| *t == r.t) {
            Some(e) => e.1 = e.1.max(r.abs_err),
            None => out.push((r.t, r.abs_err)),
        }
    }
    out
}

/// `e^{-x_i∂²} K^{hypo(d_a^b)}_t e^{x_j∂²}(u, v) = ∫_{-∞}^b S_{t,a-x_i}(λ-u) S_{t,x_j-a}(λ-v) dλ`
/// as `(ln|value|, sign)`, accumulated in log space so `e^{-c/t²}` sizes stay representable.
pub fn log_wedge_kernel(t: f64, wedge: Wedge, xi: f64, xj: f64, u: f64, v: f64) -> Result<(f64, f64)> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("t must be positive, got {t}")));
    }
    let f = |lam: f64| {
        let (l1, s1) = log_s(t, wedge.a - xi, lam - u);
        let (l2, s2) = log_s(t, xj - wedge.a, lam - v);
        (l1 + l2, s1 * s2)
    };
    // Grow the window until the integrand has dropped far below its peak.
    let mut len = t.cbrt();
    let peak = |len: f64| (0..=64).map(|k| f(wedge.b - len * k as f64 / 64.0).0).fold(f64::NEG_INFINITY, f64::max);
    while f(wedge.b - len).0 > peak(len) - 60.0 {
        len *= 2.0;
        if len > 1e4 {
            return Err(Error::Quadrature("wedge kernel integrand does not decay".into()));
        }
    }
    let rule = quadrature::composite(wedge.b - len, wedge.b, 128, BRIDGE_PER_PANEL)?;
    let terms: Vec<(f64, f64)> =
        rule.nodes.iter().zip(&rule.weights).map(|(&x, &w)| { let (l, s) = f(x); (l + w.ln(), s) }).collect();
    let m = terms.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = terms.iter().map(|&(l, s)| s * (l - m).exp()).sum();
    if sum == 0.0 || !sum.is_finite() {
        return Err(Error::Quadrature("wedge kernel sum vanished".into()));
    }
    Ok((m + sum.abs().ln(), sum.signum()))
}

/// Fit of `ln|K_t(u*, v*)| ≈ d - c/t²`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub c: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub ts: Vec<f64>,
    pub log_values: Vec<f64>,
}

/// Decay rate of a single-wedge kernel block when the wedge lies outside `[x_i, x_j]`.
pub fn t0_kernel_decay_check(wedge: Wedge, xi: f64, xj: f64, point: (f64, f64), ts: &[f64]) -> Result<DecayFit> {
    if ts.len() < 3 {
        return Err(Error::Size("need at least three times for the decay fit".into()));
    }
    let log_values: Vec<f64> =
        ts.iter().map(|&t| log_wedge_kernel(t, wedge, xi, xj, point.0, point.1).map(|p| p.0)).collect::<Result<_>>()?;
    let xs: Vec<f64> = ts.iter().map(|t| 1.0 / (t * t)).collect();
    let (slope, intercept, r_squared) = linear_fit(&xs, &log_values);
    Ok(DecayFit { c: -slope, intercept, r_squared, ts: ts.to_vec(), log_values })
}

fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 { 1.0 } else { sxy * sxy / (sxx * syy) };
    (slope, my - slope * mx, r2)
}

/// `det(I - P_r K_0 P_r)` for the `t → 0` block kernel: the projection
/// `P̄_{h(x_i)}` on the diagonal, `-P^{No hit}` above it, zero below.
///
/// The diagonal blocks are multiplication operators, so their Nyström form
/// is the indicator on the nodes rather than a weighted kernel matrix.
pub fn initial_data_determinant(cfg: &WedgeConfig, n_quad: usize) -> Result<f64> {
    cfg.validate()?;
    let n = cfg.xs.len();
    let base = quadrature::gauss_legendre(n_quad)?;
    let rules: Vec<QuadRule> =
        cfg.rs.iter().map(|&r| quadrature::map_half_line(&base, r, 4.0)).collect::<Result<_>>()?;
    let mut m = DMatrix::zeros(n * n_quad, n * n_quad);
    for i in 0..n {
        let h = cfg.profile(cfg.xs[i]);
        for (k, &u) in rules[i].nodes.iter().enumerate() {
            if u <= h {
                m[(i * n_quad + k, i * n_quad + k)] = 1.0;
            }
        }
        for j in i + 1..n {
            let block = no_hit_block(cfg, i, j, &rules[i].nodes, &rules[j].nodes)?;
            for k in 0..n_quad {
                for l in 0..n_quad {
                    let w = (rules[i].weights[k] * rules[j].weights[l]).sqrt();
                    m[(i * n_quad + k, j * n_quad + l)] = -w * block[(k, l)];
                }
            }
        }
    }
    Ok(det_one_minus_matrix(&m)?.value)
}

/// Path-integral form of the narrow-wedge (at the origin, height 0)
/// multipoint distribution `P(h(t, x_k) ≤ r_k, k = 1..m)`.
///
/// Moving `P̄_0 S_{t,x_1}` to the front by cyclicity turns the determinant
/// into one on `L²(-∞, 0]` with kernel `S_{t,x_1} G_1`, where
/// `G_m = P_{r_m} S_{-t,-x_m}` and `G_k = P_{r_k} S_{-t,-x_k} + P̄_{r_k} e^{(x_{k+1}-x_k)∂²} G_{k+1}`.
/// Each intermediate variable lives on the whole line split at `r_k`.
pub fn path_integral_determinant(t: f64, xs: &[f64], rs: &[f64], n_quad: usize) -> Result<f64> {
    if !(t > 0.0) || !t.is_finite() {
        return Err(Error::Domain(format!("t must be positive, got {t}")));
    }
    let m = xs.len();
    if m == 0 || m > 3 || rs.len() != m {
        return Err(Error::Size(format!("path integral takes 1..=3 points, got {m}")));
    }
    if xs.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Ordering("xs must be strictly increasing".into()));
    }
    let base = quadrature::gauss_legendre(n_quad)?;
    let scale = 4.0 * t.cbrt();
    let outer = quadrature::map_left_half_line(&base, 0.0, scale)?;
    let upper: Vec<QuadRule> =
        rs.iter().map(|&r| quadrature::map_half_line(&base, r, scale)).collect::<Result<_>>()?;
    // Lower pieces only meet a heat kernel, so a finite window suffices.
    let lower: Vec<QuadRule> = (0..m - 1)
        .map(|k| {
            let gap = xs[k + 1] - xs[k];
            let lo = rs[k].min(rs[k + 1]) - TAIL_SIGMAS * (2.0 * gap).sqrt();
            let panels = ((rs[k] - lo) / (0.25 * gap.sqrt().min(1.0))).ceil() as usize;
            quadrature::composite(lo, rs[k], panels.max(1), BRIDGE_PER_PANEL)
        })
        .collect::<Result<_>>()?;

    let s_rows = |x: f64, zs: &[f64]| -> DMatrix<f64> {
        DMatrix::from_fn(zs.len(), outer.len(), |a, b| {
            let (l, s) = log_s(t, -x, outer.nodes[b] - zs[a]);
            s * l.exp()
        })
    };
    // g[k] has rows over upper[k] followed by lower[k] (if any).
    let mut g: Option<DMatrix<f64>> = None;
    for k in (0..m).rev() {
        let top = s_rows(xs[k], &upper[k].nodes);
        let next = match g.take() {
            None => top,
            Some(gn) => {
                let gap = xs[k + 1] - xs[k];
                let nodes: Vec<f64> = upper[k + 1].nodes.iter().chain(&lower.get(k + 1).map_or(vec![], |r| r.nodes.clone())).copied().collect();
                let weights: Vec<f64> = upper[k + 1].weights.iter().chain(&lower.get(k + 1).map_or(vec![], |r| r.weights.clone())).copied().collect();
                let h = DMatrix::from_fn(lower[k].len(), nodes.len(), |a, b| heat_unchecked(gap, lower[k].nodes[a], nodes[b]) * weights[b]);
                let bottom = h * gn;
                let mut both = DMatrix::zeros(top.nrows() + bottom.nrows(), outer.len());
                both.rows_mut(0, top.nrows()).copy_from(&top);
                both.rows_mut(top.nrows(), bottom.nrows()).copy_from(&bottom);
                both
            }
        };
        g = Some(next);
    }
    let g1 = g.expect("at least one point");
    let (zs, zw): (Vec<f64>, Vec<f64>) = {
        let mut z = upper[0].nodes.clone();
        let mut w = upper[0].weights.clone();
        if let Some(l) = lower.first() {
            z.extend_from_slice(&l.nodes);
            w.extend_from_slice(&l.weights);
        }
        (z, w)
    };
    let left = DMatrix::from_fn(outer.len(), zs.len(), |a, b| {
        let (l, s) = log_s(t, xs[0], outer.nodes[a] - zs[b]);
        s * l.exp() * zw[b]
    });
    let mut kernel = left * g1;
    for a in 0..outer.len() {
        for b in 0..outer.len() {
            kernel[(a, b)] *= (outer.weights[a] * outer.weights[b]).sqrt();
        }
    }
    if kernel.iter().any(|v| !v.is_finite()) {
        return Err(Error::Quadrature("non-finite entry in the path-integral kernel".into()));
    }
    Ok(det_one_minus_matrix(&kernel)?.value)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one_wedge(a: f64, b: f64, xs: Vec<f64>, rs: Vec<f64>) -> WedgeConfig {
        WedgeConfig::new(vec![Wedge { a, b }], xs, rs).unwrap()
    }

    #[test]
    fn hit_kernel_matches_direct_quadrature() {
        let cfg = one_wedge(0.0, 0.0, vec![-1.0, 1.0], vec![0.0, 0.0]);
        let direct = quadrature::composite(-40.0, 0.0, 400, 16)
            .unwrap()
            .integrate(|l| heat_unchecked(1.0, 1.0, l) * heat_unchecked(1.0, l, 1.0));
        let hit = hit_kernel(&cfg, 0, 1, 1.0, 1.0).unwrap();
        assert!((hit - direct).abs() < 1e-13, "{hit} vs {direct}");
    }

    #[test]
    fn hit_kernel_vanishes_without_wedge_between() {
        let cfg = one_wedge(3.0, 0.0, vec![-1.0, 1.0], vec![0.0, 0.0]);
        assert_eq!(hit_kernel(&cfg, 0, 1, 0.3, -0.2).unwrap(), 0.0);
    }

    #[test]
    fn hit_is_certain_for_high_wedge() {
        let cfg = one_wedge(0.0, 8.0, vec![-1.0, 1.0], vec![0.0, 0.0]);
        let h = hit_kernel(&cfg, 0, 1, 0.2, 0.5).unwrap();
        assert!((h - heat_kernel(2.0, 0.2, 0.5).unwrap()).abs() < 1e-8);
    }

    #[test]
    fn hit_and_no_hit_partition_the_heat_kernel() {
        let cfg = WedgeConfig::new(
            vec![Wedge { a: -0.5, b: 0.3 }, Wedge { a: 0.2, b: -0.4 }, Wedge { a: 0.6, b: 0.1 }],
            vec![-1.0, 1.0],
            vec![0.0, 0.0],
        )
        .unwrap();
        let us = [-0.7, 0.0, 1.1];
        let vs = [-0.2, 0.9];
        let hit = hit_block(&cfg, 0, 1, &us, &vs).unwrap();
        let miss = no_hit_block(&cfg, 0, 1, &us, &vs).unwrap();
        for (a, &u) in us.iter().enumerate() {
            for (b, &v) in vs.iter().enumerate() {
                let total = hit[(a, b)] + miss[(a, b)];
                assert!((total - heat_unchecked(2.0, u, v)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ordering_is_enforced() {
        let cfg = one_wedge(0.0, 0.0, vec![-1.0, 1.0], vec![0.0, 0.0]);
        assert!(matches!(hit_kernel(&cfg, 1, 0, 0.0, 0.0), Err(Error::Ordering(_))));
        assert!(matches!(constrained_bridge_density(&cfg, 1, 1), Err(Error::Ordering(_))));
    }

    #[test]
    fn unconstrained_bridge_is_heat_kernel() {
        let cfg = one_wedge(5.0, 0.0, vec![-1.0, 1.0], vec![0.3, -0.4]);
        let d = constrained_bridge_density(&cfg, 0, 1).unwrap();
        assert!((d - heat_kernel(2.0, 0.3, -0.4).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn impossible_constraint_gives_zero() {
        let cfg = one_wedge(0.0, 60.0, vec![-1.0, 1.0], vec![0.0, 0.0]);
        assert!(constrained_bridge_density(&cfg, 0, 1).unwrap().abs() < 1e-30);
    }

    #[test]
    fn single_gate_bridge_has_closed_form() {
        // Midpoint of a bridge between equal heights is N(r, 1) for diffusivity 2 over length 2.
        let cfg = one_wedge(0.0, 0.25, vec![-1.0, 1.0], vec![0.0, 0.0]);
        let d = constrained_bridge_density(&cfg, 0, 1).unwrap();
        let p_above = 0.5 * erfc_quad(0.25 / 2f64.sqrt());
        assert!((d - heat_kernel(2.0, 0.0, 0.0).unwrap() * p_above).abs() < 1e-13);
    }

    fn erfc_quad(x: f64) -> f64 {
        // erfc via the tail integral of the Gaussian density.
        2.0 / std::f64::consts::PI.sqrt()
            * quadrature::composite(x, x + 12.0, 60, 16).unwrap().integrate(|s| (-s * s).exp())
    }

    #[test]
    fn initial_determinant_is_zero_one() {
        let above = one_wedge(0.0, 0.0, vec![-0.5, 0.7], vec![0.1, -0.3]);
        assert!((initial_data_determinant(&above, 32).unwrap() - 1.0).abs() < 1e-12);
        let below = one_wedge(0.0, 0.0, vec![-0.5, 0.0], vec![0.1, -0.3]);
        assert!(initial_data_determinant(&below, 32).unwrap().abs() < 1e-12);
    }

    #[test]
    fn path_integral_one_point_is_gue() {
        let (t, x, r) = (1.0, 0.3, -0.5);
        let f = path_integral_determinant(t, &[x], &[r], 64).unwrap();
        let spec = KernelSpec::nw_fixed_point(t, x, r, Wedge { a: 0.0, b: 0.0 });
        let d = crate::fredholm::fredholm_det(&spec, &Nystrom::new(64)).unwrap().value;
        assert!((f - d).abs() < 1e-10, "{f} vs {d}");
    }
}
