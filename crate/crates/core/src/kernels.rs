//! Kernel families whose Fredholm determinants give the distributions:
//! the Airy-group propagators `S_{t,x}`, the heat kernel, finite collections
//! of narrow wedges (one point or extended over several positions), the flat
//! Hankel kernel, and the two KPZ-equation kernels.
//!
//! Every family is exposed through [`BlockKernel`], which hands `fredholm`
//! dense blocks evaluated on node sets in the shifted frame `u ↦ u + r_a`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::quadrature::{self, ContourRule};
use crate::specfun::{airy_ai, log_airy_ai, log_gamma};

/// Upper limit on the number of wedges in a multi-wedge kernel.
pub const MAX_WEDGES: usize = 3;

/// Narrow wedge: height `b` at position `a`, `-∞` elsewhere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Wedge {
    pub a: f64,
    pub b: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Family {
    NwFixedPoint,
    FlatFixedPoint,
    MultiwedgeExtended,
    KpzNarrowWedge,
    KpzSpiked,
}

impl Family {
    pub fn name(&self) -> &'static str {
        match self {
            Family::NwFixedPoint => "nw_fixed_point",
            Family::FlatFixedPoint => "flat_fixed_point",
            Family::MultiwedgeExtended => "multiwedge_extended",
            Family::KpzNarrowWedge => "kpz_narrow_wedge",
            Family::KpzSpiked => "kpz_spiked",
        }
    }

    pub fn parse(s: &str) -> Option<Family> {
        Some(match s {
            "nw_fixed_point" => Family::NwFixedPoint,
            "flat_fixed_point" => Family::FlatFixedPoint,
            "multiwedge_extended" => Family::MultiwedgeExtended,
            "kpz_narrow_wedge" => Family::KpzNarrowWedge,
            "kpz_spiked" => Family::KpzSpiked,
            _ => return None,
        })
    }
}

/// Contour placement for the spiked double-contour kernel.
///
/// `η` runs up the vertical line `Re η = eta_anchor`. `ξ` crosses the real
/// axis at `xi_anchor` and bends to `Re ξ = xi_tail` away from the axis, so
/// that `e^{-tξ³/3}` decays while `0 < Re(η-ξ) < 1` holds everywhere.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ContourParams {
    pub eta_anchor: f64,
    pub xi_anchor: Option<f64>,
    pub xi_tail: Option<f64>,
    /// Phase advance of `t s³/3 + (1+|r|) s` allotted to one panel.
    pub phase_step: f64,
    pub per_panel: usize,
    /// Contours are cut where the Gaussian envelope falls below `e^{-decay}`.
    pub decay: f64,
    /// Longest panel in `s`; resolves the `1/sin` ridge where `η-ξ` nears an integer.
    pub max_panel: f64,
    /// Refuse contours needing more nodes than this (slow decay when `|x|` is close to `t`).
    pub max_nodes: usize,
}

impl Default for ContourParams {
    fn default() -> Self {
        ContourParams {
            eta_anchor: 0.45,
            xi_anchor: None,
            xi_tail: None,
            phase_step: 90.0,
            per_panel: 32,
            decay: 20.0,
            max_panel: 1.0,
            max_nodes: 6000,
        }
    }
}

/// Sizes of the internal (non-Nyström) integrals.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InnerQuad {
    /// Nodes for each `λ ∈ (-∞, b]` integral in S-compositions.
    pub n: usize,
    /// Half-line scale for those integrals; `None` means `4 t^{1/3}`.
    pub scale: Option<f64>,
    /// Nodes per unit-oscillation panel in the KPZ `y` integral.
    pub per_panel: usize,
}

impl Default for InnerQuad {
    fn default() -> Self {
        InnerQuad { n: 96, scale: None, per_panel: 16 }
    }
}

/// Tagged description of a kernel and its parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct KernelSpec {
    pub family: Family,
    pub t: f64,
    pub xs: Vec<f64>,
    pub rs: Vec<f64>,
    pub wedges: Vec<Wedge>,
    pub spikes: Vec<f64>,
    pub inner: InnerQuad,
    pub contour: ContourParams,
}

impl KernelSpec {
    /// One-point narrow wedge `(a, b)` observed at `(x, r)`.
    pub fn nw_fixed_point(t: f64, x: f64, r: f64, wedge: Wedge) -> Self {
        Self::base(Family::NwFixedPoint, t, vec![x], vec![r], vec![wedge], vec![])
    }

    pub fn flat(t: f64, r: f64) -> Self {
        Self::base(Family::FlatFixedPoint, t, vec![0.0], vec![r], vec![], vec![])
    }

    pub fn multiwedge(t: f64, xs: Vec<f64>, rs: Vec<f64>, wedges: Vec<Wedge>) -> Self {
        Self::base(Family::MultiwedgeExtended, t, xs, rs, wedges, vec![])
    }

    pub fn kpz_narrow_wedge(t: f64, x: f64, r: f64) -> Self {
        Self::base(Family::KpzNarrowWedge, t, vec![x], vec![r], vec![], vec![])
    }

    pub fn kpz_spiked(t: f64, x: f64, r: f64, spikes: Vec<f64>) -> Self {
        Self::base(Family::KpzSpiked, t, vec![x], vec![r], vec![], spikes)
    }

    fn base(family: Family, t: f64, xs: Vec<f64>, rs: Vec<f64>, wedges: Vec<Wedge>, spikes: Vec<f64>) -> Self {
        KernelSpec {
            family,
            t,
            xs,
            rs,
            wedges,
            spikes,
            inner: InnerQuad::default(),
            contour: ContourParams::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t > 0.0) || !self.t.is_finite() {
            return Err(Error::Domain(format!("t must be positive, got {}", self.t)));
        }
        if self.xs.is_empty() || self.xs.len() != self.rs.len() {
            return Err(Error::Domain("xs and rs must be non-empty and of equal length".into()));
        }
        if self.xs.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Ordering("xs must be strictly increasing".into()));
        }
        if self.wedges.windows(2).any(|w| !(w[1].a > w[0].a)) {
            return Err(Error::Ordering("wedge positions must be strictly increasing".into()));
        }
        match self.family {
            Family::NwFixedPoint => {
                if self.wedges.len() != 1 || self.xs.len() != 1 {
                    return Err(Error::Domain("nw_fixed_point takes one wedge and one point".into()));
                }
            }
            Family::MultiwedgeExtended => {
                if self.wedges.is_empty() || self.wedges.len() > MAX_WEDGES {
                    return Err(Error::Size(format!(
                        "wedge count {} not in 1..={MAX_WEDGES}",
                        self.wedges.len()
                    )));
                }
            }
            Family::FlatFixedPoint | Family::KpzNarrowWedge | Family::KpzSpiked => {
                if self.xs.len() != 1 {
                    return Err(Error::Domain(format!("{} is a one-point kernel", self.family.name())));
                }
            }
        }
        Ok(())
    }

    pub fn n_blocks(&self) -> usize {
        self.xs.len()
    }

    fn inner_scale(&self) -> f64 {
        self.inner.scale.unwrap_or(4.0 * self.t.cbrt())
    }
}

/// Dense block access used by the Nyström assembly.
pub trait BlockKernel: Sync {
    type Scalar: nalgebra::ComplexField<RealField = f64> + Copy;

    fn n_blocks(&self) -> usize;

    /// Level `r_a` of block `a`; its shifted variable `u ≥ 0` sits at `u + r_a`.
    fn level(&self, a: usize) -> f64;

    /// Diagonal gauge: the blocks returned by [`BlockKernel::block`] equal
    /// `e^{g_a U} K_ab(U, V) e^{-g_b V}` in absolute coordinates.
    fn gauge(&self, _a: usize) -> f64 {
        0.0
    }

    /// `K_ab(us[i] + r_a, vs[j] + r_b)` in the gauge above.
    fn block(&self, a: usize, b: usize, us: &[f64], vs: &[f64]) -> Result<DMatrix<Self::Scalar>>;
}

/// Kernel of `e^{l∂²}`: the heat kernel at time `l` for diffusivity 2.
pub fn heat_kernel(l: f64, u: f64, v: f64) -> Result<f64> {
    if !(l > 0.0) {
        return Err(Error::Domain(format!("heat kernel needs l > 0, got {l}")));
    }
    Ok(heat_unchecked(l, u, v))
}

pub(crate) fn heat_unchecked(l: f64, u: f64, v: f64) -> f64 {
    let d = u - v;
    (-d * d / (4.0 * l)).exp() / (4.0 * PI * l).sqrt()
}

fn log_heat(l: f64, u: f64, v: f64) -> f64 {
    let d = u - v;
    -d * d / (4.0 * l) - 0.5 * (4.0 * PI * l).ln()
}

/// `(ln|S_{t,x}(w)|, sign)` for `t > 0`.
pub(crate) fn log_s(t: f64, x: f64, w: f64) -> (f64, f64) {
    let t13 = t.cbrt();
    let z = -w / t13 + x * x / (t13 * t);
    let (la, s) = log_airy_ai(z);
    (-t13.ln() + 2.0 * x * x * x / (3.0 * t * t) - w * x / t + la, s)
}

/// Convolution kernel of `S_{t,x} = e^{x∂²} U_t`.
pub fn s_kernel(t: f64, x: f64, u: f64) -> Result<f64> {
    if t == 0.0 || !t.is_finite() {
        return Err(Error::Domain(format!("S kernel needs t != 0, got {t}")));
    }
    let (tt, w) = if t > 0.0 { (t, u) } else { (-t, -u) };
    let (l, s) = log_s(tt, x, w);
    Ok(s * l.exp())
}

/// Chain `S_{-t,A} P̄_{b_1} e^{(a_2-a_1)∂²} P̄_{b_2} ⋯ P̄_{b_n} S_{t,B}` on
/// node sets, with an extra row factor `e^{g_row U}` and column factor
/// `e^{-g_col V}` folded in before exponentiation.
struct Chain<'a> {
    t: f64,
    a_left: f64,
    b_right: f64,
    wedges: &'a [Wedge],
    g_row: f64,
    g_col: f64,
}

fn inner_rule(b: f64, n: usize, scale: f64) -> Result<quadrature::QuadRule> {
    quadrature::map_left_half_line(&quadrature::gauss_legendre(n)?, b, scale)
}

impl Chain<'_> {
    fn matrix(&self, us: &[f64], vs: &[f64], n_inner: usize, scale: f64) -> Result<DMatrix<f64>> {
        let rules: Vec<_> =
            self.wedges.iter().map(|w| inner_rule(w.b, n_inner, scale)).collect::<Result<_>>()?;
        let first = &rules[0];
        let mut acc = DMatrix::from_fn(us.len(), first.len(), |i, k| {
            let (l, s) = log_s(self.t, self.a_left, first.nodes[k] - us[i]);
            s * (l + self.g_row * us[i]).exp() * first.weights[k]
        });
        for p in 1..rules.len() {
            let gap = self.wedges[p].a - self.wedges[p - 1].a;
            let (prev, next) = (&rules[p - 1], &rules[p]);
            let h = DMatrix::from_fn(prev.len(), next.len(), |k, l| {
                heat_unchecked(gap, prev.nodes[k], next.nodes[l]) * next.weights[l]
            });
            acc = acc * h;
        }
        let last = &rules[rules.len() - 1];
        let right = DMatrix::from_fn(last.len(), vs.len(), |k, j| {
            let (l, s) = log_s(self.t, self.b_right, last.nodes[k] - vs[j]);
            s * (l - self.g_col * vs[j]).exp()
        });
        Ok(acc * right)
    }
}

/// Extended multi-wedge kernel with an optional diagonal gauge `g_a = κ x_a`.
#[derive(Clone, Debug)]
pub struct ExtendedKernel {
    pub spec: KernelSpec,
    pub kappa: f64,
}

impl ExtendedKernel {
    pub fn new(spec: &KernelSpec, kappa: f64) -> Result<Self> {
        spec.validate()?;
        if !matches!(spec.family, Family::MultiwedgeExtended | Family::NwFixedPoint) {
            return Err(Error::Domain(format!("{} is not a wedge kernel", spec.family.name())));
        }
        Ok(ExtendedKernel { spec: spec.clone(), kappa })
    }

    /// Block `(i, j)` at absolute coordinates `U = us`, `V = vs`.
    fn block_abs(&self, i: usize, j: usize, us: &[f64], vs: &[f64]) -> Result<DMatrix<f64>> {
        let s = &self.spec;
        let (xi, xj) = (s.xs[i], s.xs[j]);
        let (gi, gj) = (self.kappa * xi, self.kappa * xj);
        let k = s.wedges.len();
        let mut out = DMatrix::zeros(us.len(), vs.len());
        for mask in 1u32..(1 << k) {
            let sub: Vec<Wedge> = (0..k).filter(|p| mask & (1 << p) != 0).map(|p| s.wedges[p]).collect();
            let sign = if sub.len() % 2 == 1 { 1.0 } else { -1.0 };
            let chain = Chain {
                t: s.t,
                a_left: sub[0].a - xi,
                b_right: xj - sub[sub.len() - 1].a,
                wedges: &sub,
                g_row: gi,
                g_col: gj,
            };
            out += chain.matrix(us, vs, s.inner.n, s.inner_scale())? * sign;
        }
        if i < j {
            let l = xj - xi;
            for (r, &u) in us.iter().enumerate() {
                for (c, &v) in vs.iter().enumerate() {
                    out[(r, c)] -= (log_heat(l, u, v) + gi * u - gj * v).exp();
                }
            }
        }
        if out.iter().any(|v| !v.is_finite()) {
            return Err(Error::Quadrature(format!("non-finite kernel entry in block ({i},{j})")));
        }
        Ok(out)
    }
}

impl BlockKernel for ExtendedKernel {
    type Scalar = f64;

    fn n_blocks(&self) -> usize {
        self.spec.xs.len()
    }

    fn level(&self, a: usize) -> f64 {
        self.spec.rs[a]
    }

    fn gauge(&self, a: usize) -> f64 {
        self.kappa * self.spec.xs[a]
    }

    fn block(&self, a: usize, b: usize, us: &[f64], vs: &[f64]) -> Result<DMatrix<f64>> {
        let ua: Vec<f64> = us.iter().map(|u| u + self.spec.rs[a]).collect();
        let vb: Vec<f64> = vs.iter().map(|v| v + self.spec.rs[b]).collect();
        self.block_abs(a, b, &ua, &vb)
    }
}

/// `e^{-x∂²} K_t e^{x∂²}(u + r, v + r) = S_{-t,a-x} P̄_b S_{t,x-a}` for a
/// single wedge, `r` taken from `spec.rs[0]`.
pub fn nw_fixed_point_kernel(spec: &KernelSpec, x: f64, u: f64, v: f64) -> Result<f64> {
    if spec.wedges.len() != 1 {
        return Err(Error::Domain("nw_fixed_point_kernel takes exactly one wedge".into()));
    }
    let mut one = spec.clone();
    one.family = Family::NwFixedPoint;
    one.xs = vec![x];
    one.rs = vec![spec.rs[0]];
    let k = ExtendedKernel::new(&one, 0.0)?;
    Ok(k.block(0, 0, &[u], &[v])?[(0, 0)])
}

/// Block `(i, j)` of the extended kernel at shifted points, in the gauge of
/// the operator formula (no extra conjugation).
pub fn multiwedge_extended_block(spec: &KernelSpec, i: usize, j: usize, u: f64, v: f64) -> Result<f64> {
    let k = ExtendedKernel::new(spec, 0.0)?;
    if i >= k.n_blocks() || j >= k.n_blocks() {
        return Err(Error::Size(format!("block ({i},{j}) out of range")));
    }
    Ok(k.block(i, j, &[u], &[v])?[(0, 0)])
}

/// Flat kernel `(2t)^{-1/3} Ai((2t)^{-1/3}(u + v))`.
pub fn flat_kernel(t: f64, u: f64, v: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("flat kernel needs t > 0, got {t}")));
    }
    let c = (2.0 * t).cbrt().recip();
    Ok(c * airy_ai(c * (u + v)))
}

#[derive(Clone, Debug)]
pub struct FlatKernel {
    pub t: f64,
    pub r: f64,
}

impl BlockKernel for FlatKernel {
    type Scalar = f64;

    fn n_blocks(&self) -> usize {
        1
    }

    fn level(&self, _a: usize) -> f64 {
        self.r
    }

    fn block(&self, _a: usize, _b: usize, us: &[f64], vs: &[f64]) -> Result<DMatrix<f64>> {
        let c = (2.0 * self.t).cbrt().recip();
        Ok(DMatrix::from_fn(us.len(), vs.len(), |i, j| c * airy_ai(c * (us[i] + vs[j] + 2.0 * self.r))))
    }
}

/// KPZ-equation narrow wedge kernel
/// `∫ dy t^{-2/3} (1+e^y)^{-1} Ai(t^{-1/3}(u+r-y) + t^{-4/3}x²) Ai(t^{-1/3}(v+r-y) + t^{-4/3}x²)`.
#[derive(Clone, Debug)]
pub struct KpzKernel {
    pub t: f64,
    pub x: f64,
    pub r: f64,
    pub per_panel: usize,
}

/// Upper cut of the `y` integral: `(1+e^y)^{-1} < 5e-18` beyond it.
const FERMI_CUT: f64 = 39.0;
/// Airy arguments above this are below 1e-17 relative to the oscillatory scale.
const AIRY_CUT: f64 = 16.0;

impl KpzKernel {
    fn y_rule(&self, u_min: f64) -> Result<quadrature::QuadRule> {
        let t13 = self.t.cbrt();
        let beta = self.x * self.x / (t13 * self.t);
        // y below lo makes both Airy arguments exceed AIRY_CUT
        let lo = u_min + (beta - AIRY_CUT) * t13;
        let hi = FERMI_CUT.max(lo + 1.0);
        // largest oscillation frequency of Ai(-z) is sqrt(z)/t^{1/3} per unit y
        let zmax = ((hi - u_min) / t13 - beta).max(1.0);
        let omega = zmax.sqrt() / t13;
        let panels = ((hi - lo) * omega / 3.0).ceil().max(4.0) as usize;
        quadrature::composite(lo, hi, panels, self.per_panel)
    }

    fn airy_matrix(&self, pts: &[f64], rule: &quadrature::QuadRule) -> DMatrix<f64> {
        let t13 = self.t.cbrt();
        let beta = self.x * self.x / (t13 * self.t);
        DMatrix::from_fn(pts.len(), rule.len(), |i, k| airy_ai((pts[i] - rule.nodes[k]) / t13 + beta) / t13)
    }
}

/// Fermi factor `(1+e^y)^{-1}` without overflow.
pub fn fermi(y: f64) -> f64 {
    if y > 0.0 {
        let e = (-y).exp();
        e / (1.0 + e)
    } else {
        1.0 / (1.0 + y.exp())
    }
}

impl BlockKernel for KpzKernel {
    type Scalar = f64;

    fn n_blocks(&self) -> usize {
        1
    }

    fn level(&self, _a: usize) -> f64 {
        self.r
    }

    fn block(&self, _a: usize, _b: usize, us: &[f64], vs: &[f64]) -> Result<DMatrix<f64>> {
        let ua: Vec<f64> = us.iter().map(|u| u + self.r).collect();
        let va: Vec<f64> = vs.iter().map(|v| v + self.r).collect();
        let u_min = ua.iter().chain(&va).cloned().fold(f64::INFINITY, f64::min);
        let rule = self.y_rule(u_min)?;
        let mut a = self.airy_matrix(&ua, &rule);
        for (k, (&y, &w)) in rule.nodes.iter().zip(&rule.weights).enumerate() {
            let f = w * fermi(y);
            a.column_mut(k).scale_mut(f);
        }
        let b = self.airy_matrix(&va, &rule);
        Ok(a * b.transpose())
    }
}

pub fn kpz_nw_kernel(t: f64, x: f64, r: f64, u: f64, v: f64) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::Domain(format!("KPZ kernel needs t > 0, got {t}")));
    }
    let k = KpzKernel { t, x, r, per_panel: InnerQuad::default().per_panel };
    Ok(k.block(0, 0, &[u], &[v])?[(0, 0)])
}

/// Double-contour kernel for spiked initial data.
#[derive(Clone, Debug)]
pub struct SpikedKernel {
    pub t: f64,
    pub x: f64,
    pub r: f64,
    pub spikes: Vec<f64>,
    eta: ContourRule,
    xi: ContourRule,
}

impl SpikedKernel {
    pub fn new(t: f64, x: f64, r: f64, spikes: &[f64], params: ContourParams) -> Result<Self> {
        if !(t > 0.0) {
            return Err(Error::Domain(format!("spiked kernel needs t > 0, got {t}")));
        }
        if x.abs() > t {
            return Err(Error::Domain(format!("spiked kernel needs |x| <= t, got x={x}")));
        }
        for (i, a) in spikes.iter().enumerate() {
            if spikes[..i].iter().any(|b| (a - b).abs() < 1e-12) {
                return Err(Error::Domain("spikes must be pairwise distinct".into()));
            }
        }
        let bmax = spikes.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let ce = params.eta_anchor;
        let cx = params.xi_anchor.unwrap_or(if spikes.is_empty() { ce - 0.5 } else { 0.5 * (bmax + ce) });
        let ct = params.xi_tail.unwrap_or(cx.min(ce - 0.8));
        if !(ce > 0.0) {
            return Err(Error::Contour(format!("eta anchor must be positive, got {ce}")));
        }
        if !(cx < ce && ce - ct < 1.0 && ct <= cx && ct < 0.0) {
            return Err(Error::Contour(format!(
                "need xi_tail < 0, xi_tail <= xi_anchor < eta_anchor < xi_tail + 1; got {ct}, {cx}, {ce}"
            )));
        }
        if spikes.iter().any(|&b| b >= cx) {
            return Err(Error::Contour(format!("xi contour at {cx} must pass right of every spike")));
        }
        if spikes.iter().any(|&b| ((ce - b) - (ce - b).round()).abs() < 1e-9 && ce - b <= 0.0) {
            return Err(Error::Pole(ce));
        }
        // Gaussian decay rates along each contour, including the x η² term
        let rate_eta = t * ce + x;
        let rate_xi = t * (-ct) - x;
        if !(rate_eta > 0.05 && rate_xi > 0.05) {
            return Err(Error::Contour(format!("contours do not decay: rates {rate_eta}, {rate_xi}")));
        }
        let m = spikes.len() as f64;
        let h_of = |rate: f64| {
            // rate H² - (π/2)(m+1) H ≥ decay, the Gamma ratio growing like e^{π m |s|/2}
            let b = 0.5 * PI * (m + 1.0);
            (b + (b * b + 4.0 * rate * params.decay).sqrt()) / (2.0 * rate)
        };
        let breaks = |h: f64| panel_breaks(t, r, h, params.phase_step, params.max_panel);
        let eta = quadrature::contour_panels(|_| (ce, 0.0), &breaks(h_of(rate_eta)), params.per_panel)?;
        let xi = quadrature::contour_panels(
            |s| {
                let sech = 1.0 / s.cosh();
                (ct + (cx - ct) * sech * sech, -2.0 * (cx - ct) * sech * sech * s.tanh())
            },
            &breaks(h_of(rate_xi)),
            params.per_panel,
        )?;
        if eta.len().max(xi.len()) > params.max_nodes {
            return Err(Error::Contour(format!(
                "contours need {} and {} nodes (limit {}); decay rates {rate_eta:.3}, {rate_xi:.3} are too slow",
                eta.len(),
                xi.len(),
                params.max_nodes
            )));
        }
        Ok(SpikedKernel { t, x, r, spikes: spikes.to_vec(), eta, xi })
    }

    pub fn node_counts(&self) -> (usize, usize) {
        (self.eta.len(), self.xi.len())
    }

    fn gamma_sum(&self, z: Complex64) -> Result<Complex64> {
        let mut s = Complex64::new(0.0, 0.0);
        for &b in &self.spikes {
            s += log_gamma(z - b)?;
        }
        Ok(s)
    }
}

/// Symmetric breakpoints on `[-h, h]`, equally spaced in the phase
/// `t s³/3 + (1+|r|) s` and never longer than `max_panel`.
fn panel_breaks(t: f64, r: f64, h: f64, step: f64, max_panel: f64) -> Vec<f64> {
    let k0 = 1.0 + r.abs();
    let mut pos = vec![0.0];
    let mut s: f64 = 0.0;
    while s < h {
        let dphi = t * s * s + k0;
        s = (s + (step / dphi).min(max_panel)).min(h);
        pos.push(s);
    }
    let mut out: Vec<f64> = pos.iter().rev().map(|v| -v).collect();
    out.extend_from_slice(&pos[1..]);
    out
}

impl SpikedKernel {
    /// Operator on the `η` nodes whose `det(I - ·)` equals the Fredholm
    /// determinant: the `u` integral of `e^{(u+r)(ξ-η)}` over `[0,∞)` is done
    /// in closed form, which needs `Re η > Re ξ` on all node pairs.
    pub fn contour_operator(&self) -> Result<DMatrix<Complex64>> {
        let (t, x, r) = (self.t, self.x, self.r);
        let max_xi = self.xi.nodes.iter().map(|z| z.re).fold(f64::NEG_INFINITY, f64::max);
        let min_eta = self.eta.nodes.iter().map(|z| z.re).fold(f64::INFINITY, f64::min);
        if !(min_eta > max_xi) {
            return Err(Error::Contour("eta contour must lie right of the xi contour".into()));
        }
        let fe: Vec<Complex64> = self
            .eta
            .nodes
            .iter()
            .zip(&self.eta.weights)
            .map(|(&z, &w)| Ok(w * (t * z * z * z / 3.0 + x * z * z - r * z - self.gamma_sum(z)?).exp()))
            .collect::<Result<_>>()?;
        let fx: Vec<Complex64> = self
            .xi
            .nodes
            .iter()
            .zip(&self.xi.weights)
            .map(|(&z, &w)| Ok(w * (-t * z * z * z / 3.0 - x * z * z + r * z + self.gamma_sum(z)?).exp()))
            .collect::<Result<_>>()?;
        let c0 = Complex64::new(-0.25 / (PI * PI), 0.0);
        let h = DMatrix::from_fn(self.eta.len(), self.xi.len(), |k, l| {
            let d = self.eta.nodes[k] - self.xi.nodes[l];
            c0 * PI / (d * PI).sin()
        });
        let c = DMatrix::from_fn(self.xi.len(), self.eta.len(), |l, k| {
            fx[l] * fe[k] / (self.eta.nodes[k] - self.xi.nodes[l])
        });
        let m = complex_gemm(&h, &c);
        if m.iter().any(|v| !v.is_finite()) {
            return Err(Error::Quadrature("non-finite contour operator".into()));
        }
        Ok(m)
    }
}

/// Complex product through four real products, which take the optimized
/// `f64` GEMM path.
fn complex_gemm(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> DMatrix<Complex64> {
    let (ar, ai) = (a.map(|z| z.re), a.map(|z| z.im));
    let (br, bi) = (b.map(|z| z.re), b.map(|z| z.im));
    let re = &ar * &br - &ai * &bi;
    let im = &ar * &bi + &ai * &br;
    re.zip_map(&im, Complex64::new)
}

impl BlockKernel for SpikedKernel {
    type Scalar = Complex64;

    fn n_blocks(&self) -> usize {
        1
    }

    fn level(&self, _a: usize) -> f64 {
        self.r
    }

    fn block(&self, _a: usize, _b: usize, us: &[f64], vs: &[f64]) -> Result<DMatrix<Complex64>> {
        let (t, x) = (self.t, self.x);
        let ge: Vec<Complex64> = self.eta.nodes.iter().map(|&z| self.gamma_sum(z)).collect::<Result<_>>()?;
        let gx: Vec<Complex64> = self.xi.nodes.iter().map(|&z| self.gamma_sum(z)).collect::<Result<_>>()?;
        let a = DMatrix::from_fn(us.len(), self.eta.len(), |i, k| {
            let z = self.eta.nodes[k];
            let e = t * z * z * z / 3.0 + x * z * z - (us[i] + self.r) * z - ge[k];
            self.eta.weights[k] * e.exp()
        });
        let h = DMatrix::from_fn(self.eta.len(), self.xi.len(), |k, l| {
            let d = self.eta.nodes[k] - self.xi.nodes[l];
            Complex64::new(PI, 0.0) / (d * PI).sin()
        });
        let b = DMatrix::from_fn(self.xi.len(), vs.len(), |l, j| {
            let z = self.xi.nodes[l];
            let e = -t * z * z * z / 3.0 - x * z * z + (vs[j] + self.r) * z + gx[l];
            self.xi.weights[l] * e.exp()
        });
        // 1/(2πi)² = -1/(4π²)
        Ok(a * h * b * Complex64::new(-0.25 / (PI * PI), 0.0))
    }
}

pub fn kpz_spiked_kernel(t: f64, x: f64, r: f64, spikes: &[f64], u: f64, v: f64) -> Result<Complex64> {
    let k = SpikedKernel::new(t, x, r, spikes, ContourParams::default())?;
    Ok(k.block(0, 0, &[u], &[v])?[(0, 0)])
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::specfun::airy_ai_prime;

    fn airy_kernel(u: f64, v: f64) -> f64 {
        if (u - v).abs() < 1e-8 {
            let a = airy_ai(u);
            let ap = airy_ai_prime(u);
            return ap * ap - u * a * a;
        }
        (airy_ai(u) * airy_ai_prime(v) - airy_ai_prime(u) * airy_ai(v)) / (u - v)
    }

    #[test]
    fn heat_values() {
        assert!((heat_kernel(0.25, 1.3, 1.3).unwrap() - PI.sqrt().recip()).abs() < 1e-15);
        assert_eq!(heat_kernel(0.7, 0.2, -1.0).unwrap(), heat_kernel(0.7, -1.0, 0.2).unwrap());
        assert!(heat_kernel(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn s_kernel_reflection() {
        assert!((s_kernel(1.0, 0.0, 0.0).unwrap() - airy_ai(0.0)).abs() < 1e-15);
        assert_eq!(s_kernel(-1.0, 0.0, 2.0).unwrap(), s_kernel(1.0, 0.0, -2.0).unwrap());
        assert!(s_kernel(0.0, 0.0, 0.0).is_err());
    }

    #[test]
    fn single_wedge_is_airy_kernel() {
        // at x = a = b = 0, t = 1 the composition is the Airy kernel
        let spec = KernelSpec::nw_fixed_point(1.0, 0.0, 0.0, Wedge { a: 0.0, b: 0.0 });
        for &(u, v) in &[(0.0, 0.0), (0.3, 1.2), (2.0, 0.5), (4.0, 4.5)] {
            let k = nw_fixed_point_kernel(&spec, 0.0, u, v).unwrap();
            assert!((k - airy_kernel(u, v)).abs() < 1e-12, "({u},{v}): {k} vs {}", airy_kernel(u, v));
        }
    }

    #[test]
    fn flat_kernel_is_hankel() {
        let a = flat_kernel(1.0, 0.4, 1.1).unwrap();
        let b = flat_kernel(1.0, 0.4 + 0.37, 1.1 - 0.37).unwrap();
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn kpz_kernel_symmetric() {
        let a = kpz_nw_kernel(1.0, 0.3, 0.5, 0.2, 1.7).unwrap();
        let b = kpz_nw_kernel(1.0, 0.3, 0.5, 1.7, 0.2).unwrap();
        assert!((a - b).abs() < 1e-15 * a.abs().max(1.0));
    }

    #[test]
    fn spiked_without_spikes_matches_kpz_kernel() {
        for &(u, v) in &[(0.0, 0.0), (0.5, 1.5), (2.0, 0.3)] {
            let s = kpz_spiked_kernel(1.0, 0.0, 0.2, &[], u, v).unwrap();
            let k = kpz_nw_kernel(1.0, 0.0, 0.2, u, v).unwrap();
            assert!(s.im.abs() < 1e-13);
            assert!((s.re - k).abs() < 1e-10, "({u},{v}): {} vs {k}", s.re);
        }
    }
}
