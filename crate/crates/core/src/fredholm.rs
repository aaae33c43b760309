//! Nyström discretization of block kernels on products of half-lines,
//! `det(I - K)` by pivoted LU, and the boundary resolvent `Q = [(I-K)^{-1}K]`.

use nalgebra::{ComplexField, DMatrix};
use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::kernels::{
    BlockKernel, ExtendedKernel, Family, FlatKernel, KernelSpec, KpzKernel, SpikedKernel,
};
use crate::quadrature::{self, QuadRule};

/// Below this `|det|` the determinant is reported as near-singular.
pub const SINGULAR_DET: f64 = 1e-14;
/// Largest imaginary part tolerated for conjugate-symmetric complex kernels.
pub const IMAG_TOL: f64 = 1e-9;

/// Nyström rule parameters for the outer `[0, ∞)` integrals.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Nystrom {
    pub n_quad: usize,
    /// Half-line map scale; `None` picks one from the kernel's time.
    pub scale: Option<f64>,
}

impl Default for Nystrom {
    fn default() -> Self {
        Nystrom { n_quad: 64, scale: None }
    }
}

impl Nystrom {
    pub fn new(n_quad: usize) -> Self {
        Nystrom { n_quad, scale: None }
    }

    fn scale_for(&self, t: f64) -> f64 {
        self.scale.unwrap_or(4.0 * t.cbrt().max(0.5))
    }
}

/// Discretized operator `√w_i K(u_i, u_j) √w_j` plus the kernel evaluated
/// against the boundary point `u = 0` of every block.
#[derive(Clone, Debug)]
pub struct Discretization<T: ComplexField> {
    pub rules: Vec<QuadRule>,
    pub matrix: DMatrix<T>,
    pub n_blocks: usize,
    pub levels: Vec<f64>,
    pub gauges: Vec<f64>,
    /// `K_ab(0, u_j) √w_j`, one row per block.
    boundary_rows: DMatrix<T>,
    /// `√w_i K_ab(u_i, 0)`, one column per block.
    boundary_cols: DMatrix<T>,
    /// `K_ab(0, 0)`.
    corner: DMatrix<T>,
}

impl<T: ComplexField<RealField = f64> + Copy> Discretization<T> {
    pub fn n_quad(&self) -> usize {
        self.rules.first().map_or(0, |r| r.len())
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Assemble the Nyström matrix of `kernel` with `n_quad` nodes per block.
pub fn assemble<K: BlockKernel>(kernel: &K, n_quad: usize, scale: f64) -> Result<Discretization<K::Scalar>> {
    if !(8..=quadrature::MAX_GL).contains(&n_quad) {
        return Err(Error::Size(format!("n_quad {n_quad} not in 8..={}", quadrature::MAX_GL)));
    }
    let nb = kernel.n_blocks();
    let rule = quadrature::map_half_line(&quadrature::gauss_legendre(n_quad)?, 0.0, scale)?;
    // node 0 is the boundary point, the rest are quadrature nodes
    let mut pts = Vec::with_capacity(n_quad + 1);
    pts.push(0.0);
    pts.extend_from_slice(&rule.nodes);
    let sw: Vec<f64> = rule.weights.iter().map(|w| w.sqrt()).collect();

    let pairs: Vec<(usize, usize)> = (0..nb).flat_map(|a| (0..nb).map(move |b| (a, b))).collect();
    let blocks: Vec<DMatrix<K::Scalar>> =
        pairs.par_iter().map(|&(a, b)| kernel.block(a, b, &pts, &pts)).collect::<Result<_>>()?;

    let n = n_quad;
    let zero = <K::Scalar as nalgebra::ComplexField>::from_real(0.0);
    let mut matrix = DMatrix::from_element(nb * n, nb * n, zero);
    let mut boundary_rows = DMatrix::from_element(nb, nb * n, zero);
    let mut boundary_cols = DMatrix::from_element(nb * n, nb, zero);
    let mut corner = DMatrix::from_element(nb, nb, zero);
    for (&(a, b), blk) in pairs.iter().zip(&blocks) {
        corner[(a, b)] = blk[(0, 0)];
        for j in 0..n {
            boundary_rows[(a, b * n + j)] = blk[(0, j + 1)].scale(sw[j]);
        }
        for i in 0..n {
            boundary_cols[(a * n + i, b)] = blk[(i + 1, 0)].scale(sw[i]);
            for j in 0..n {
                matrix[(a * n + i, b * n + j)] = blk[(i + 1, j + 1)].scale(sw[i] * sw[j]);
            }
        }
    }
    if matrix.iter().any(|v| !v.is_finite()) {
        return Err(Error::Quadrature("non-finite entry in Nyström matrix".into()));
    }
    Ok(Discretization {
        rules: vec![rule; nb],
        matrix,
        n_blocks: nb,
        levels: (0..nb).map(|a| kernel.level(a)).collect(),
        gauges: (0..nb).map(|a| kernel.gauge(a)).collect(),
        boundary_rows,
        boundary_cols,
        corner,
    })
}

/// Value of `det(I - M)` with its magnitude on a log scale.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DetValue<T> {
    pub value: T,
    pub log_abs: f64,
    /// `|det| < SINGULAR_DET`: the value is still returned but resolvent
    /// quantities derived from it are unreliable.
    pub near_singular: bool,
}

/// `det(I - M)` by partial-pivot LU.
pub fn det_one_minus_matrix<T: ComplexField<RealField = f64> + Copy>(m: &DMatrix<T>) -> Result<DetValue<T>> {
    if !m.is_square() {
        return Err(Error::Size(format!("matrix is {}x{}", m.nrows(), m.ncols())));
    }
    let a = DMatrix::<T>::identity(m.nrows(), m.ncols()) - m;
    let lu = a.lu();
    let u = lu.u();
    let mut log_abs = 0.0;
    let mut phase = T::one();
    for i in 0..u.nrows() {
        let d = u[(i, i)];
        let r = d.modulus();
        if r == 0.0 {
            return Ok(DetValue { value: T::zero(), log_abs: f64::NEG_INFINITY, near_singular: true });
        }
        log_abs += r.ln();
        phase *= d.unscale(r);
    }
    // permutation parity
    let mut p = DMatrix::<T>::identity(m.nrows(), m.nrows());
    lu.p().permute_rows(&mut p);
    let parity = p.determinant();
    let value = phase * parity * T::from_real(log_abs.exp());
    Ok(DetValue { value, log_abs, near_singular: log_abs.exp() < SINGULAR_DET })
}

pub fn det_one_minus<T: ComplexField<RealField = f64> + Copy>(disc: &Discretization<T>) -> Result<DetValue<T>> {
    det_one_minus_matrix(&disc.matrix)
}

/// Real part of a complex determinant, checking the imaginary part is noise.
pub fn real_det(d: DetValue<Complex64>) -> Result<DetValue<f64>> {
    if d.value.im.abs() > IMAG_TOL {
        return Err(Error::Quadrature(format!(
            "complex determinant has imaginary part {:e}",
            d.value.im
        )));
    }
    Ok(DetValue { value: d.value.re, log_abs: d.log_abs, near_singular: d.near_singular })
}

/// `det(I - K)` for any kernel family described by `spec`.
pub fn fredholm_det(spec: &KernelSpec, nys: &Nystrom) -> Result<DetValue<f64>> {
    spec.validate()?;
    let scale = nys.scale_for(spec.t);
    match spec.family {
        Family::NwFixedPoint | Family::MultiwedgeExtended => {
            let k = ExtendedKernel::new(spec, 1.0)?;
            det_one_minus(&assemble(&k, nys.n_quad, scale)?)
        }
        Family::FlatFixedPoint => {
            let k = FlatKernel { t: spec.t, r: spec.rs[0] };
            det_one_minus(&assemble(&k, nys.n_quad, scale)?)
        }
        Family::KpzNarrowWedge => {
            let k = KpzKernel { t: spec.t, x: spec.xs[0], r: spec.rs[0], per_panel: spec.inner.per_panel };
            det_one_minus(&assemble(&k, nys.n_quad, scale)?)
        }
        Family::KpzSpiked => {
            let k = SpikedKernel::new(spec.t, spec.xs[0], spec.rs[0], &spec.spikes, spec.contour)?;
            real_det(det_one_minus_matrix(&k.contour_operator()?)?)
        }
    }
}

/// The `n × n` boundary resolvent and the determinant it came with.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundaryResolvent {
    pub q_matrix: DMatrix<f64>,
    pub t: f64,
    pub xs: Vec<f64>,
    pub rs: Vec<f64>,
    pub det_value: f64,
}

/// `Q_ab = K_ab(0,0) + K(0,·) W^{1/2} (I - M)^{-1} W^{1/2} K(·,0)`, in the
/// kernel's own gauge (the diagonal gauge is removed before returning).
pub fn boundary_resolvent_matrix(disc: &Discretization<f64>) -> Result<(DMatrix<f64>, f64)> {
    let det = det_one_minus(disc)?;
    if det.near_singular {
        return Err(Error::Singular(format!("det(I-K) = {:e}", det.value)));
    }
    let a = DMatrix::identity(disc.dim(), disc.dim()) - &disc.matrix;
    let x = a
        .lu()
        .solve(&disc.boundary_cols)
        .ok_or_else(|| Error::Singular("resolvent solve failed".into()))?;
    let mut q = &disc.corner + &disc.boundary_rows * x;
    for a in 0..disc.n_blocks {
        for b in 0..disc.n_blocks {
            let ga = disc.gauges[a] * disc.levels[a];
            let gb = disc.gauges[b] * disc.levels[b];
            q[(a, b)] *= (gb - ga).exp();
        }
    }
    Ok((q, det.value))
}

pub fn boundary_resolvent(spec: &KernelSpec, nys: &Nystrom) -> Result<BoundaryResolvent> {
    spec.validate()?;
    let scale = nys.scale_for(spec.t);
    let disc = match spec.family {
        Family::NwFixedPoint | Family::MultiwedgeExtended => assemble(&ExtendedKernel::new(spec, 1.0)?, nys.n_quad, scale)?,
        Family::FlatFixedPoint => assemble(&FlatKernel { t: spec.t, r: spec.rs[0] }, nys.n_quad, scale)?,
        Family::KpzNarrowWedge => assemble(
            &KpzKernel { t: spec.t, x: spec.xs[0], r: spec.rs[0], per_panel: spec.inner.per_panel },
            nys.n_quad,
            scale,
        )?,
        Family::KpzSpiked => {
            return Err(Error::Domain("boundary resolvent is not available for the spiked kernel".into()))
        }
    };
    let (q_matrix, det_value) = boundary_resolvent_matrix(&disc)?;
    Ok(BoundaryResolvent { q_matrix, t: spec.t, xs: spec.xs.clone(), rs: spec.rs.clone(), det_value })
}

/// Smooth block test kernel with analytic partial derivatives.
pub trait TestKernel: Sync {
    fn n_blocks(&self) -> usize;
    /// `(K_ab(u,v), ∂_u K_ab, ∂_v K_ab)`.
    fn eval(&self, a: usize, b: usize, u: f64, v: f64) -> (f64, f64, f64);
}

/// `‖[A][B] + [A D₁B + D₂A B]‖_∞` where `[X] = X(0,0)` blockwise and the
/// inner integrals run over `[0, ∞)` with `n_quad` nodes.
pub fn boundary_bracket_product_check<A: TestKernel, B: TestKernel>(a: &A, b: &B, n_quad: usize) -> Result<f64> {
    let n = a.n_blocks();
    if b.n_blocks() != n {
        return Err(Error::Size("block counts differ".into()));
    }
    let rule = quadrature::map_half_line(&quadrature::gauss_legendre(n_quad)?, 0.0, 1.0)?;
    let mut worst: f64 = 0.0;
    for i in 0..n {
        for j in 0..n {
            let mut lhs = 0.0;
            let mut rhs = 0.0;
            for c in 0..n {
                lhs += a.eval(i, c, 0.0, 0.0).0 * b.eval(c, j, 0.0, 0.0).0;
                for (&w, &wt) in rule.nodes.iter().zip(&rule.weights) {
                    let (av, _, adv) = a.eval(i, c, 0.0, w);
                    let (_, bdu, _) = b.eval(c, j, w, 0.0);
                    let (bv, _, _) = b.eval(c, j, w, 0.0);
                    rhs += wt * (av * bdu + adv * bv);
                }
            }
            worst = worst.max((lhs + rhs).abs());
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;

    struct RankOne;

    impl BlockKernel for RankOne {
        type Scalar = f64;
        fn n_blocks(&self) -> usize {
            1
        }
        fn level(&self, _a: usize) -> f64 {
            0.0
        }
        fn block(&self, _a: usize, _b: usize, us: &[f64], vs: &[f64]) -> Result<DMatrix<f64>> {
            Ok(DMatrix::from_fn(us.len(), vs.len(), |i, j| (-us[i] - vs[j]).exp()))
        }
    }

    #[test]
    fn rank_one_toy() {
        let d = assemble(&RankOne, 64, 1.0).unwrap();
        let sv = d.matrix.clone().singular_values();
        assert!(sv[1] < 1e-12);
        assert!((det_one_minus(&d).unwrap().value - 0.5).abs() < 1e-10);
        let (q, _) = boundary_resolvent_matrix(&d).unwrap();
        assert!((q[(0, 0)] - 2.0).abs() < 1e-10);
    }

    #[test]
    fn zero_kernel() {
        let m = DMatrix::<f64>::zeros(5, 5);
        assert_eq!(det_one_minus_matrix(&m).unwrap().value, 1.0);
    }

    #[test]
    fn symmetric_scaling_preserves_det() {
        let k = DMatrix::from_row_slice(3, 3, &[0.3, -0.1, 0.2, 0.05, 0.4, -0.2, 0.1, 0.1, 0.2]);
        let w = [0.5, 1.5, 2.0];
        let plain = DMatrix::from_fn(3, 3, |i, j| k[(i, j)] * w[j]);
        let sym = DMatrix::from_fn(3, 3, |i, j| w[i].sqrt() * k[(i, j)] * w[j].sqrt());
        let a = det_one_minus_matrix(&plain).unwrap().value;
        let b = det_one_minus_matrix(&sym).unwrap().value;
        assert!((a - b).abs() < 1e-14);
    }

    #[test]
    fn lu_sign_tracks_permutation() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, -2.0, -3.0, 1.0]);
        // I - m = [[0, 2], [3, 0]] has det -6 and needs a row swap
        assert!((det_one_minus_matrix(&m).unwrap().value + 6.0).abs() < 1e-14);
    }

    struct Gauss;

    impl TestKernel for Gauss {
        fn n_blocks(&self) -> usize {
            1
        }
        fn eval(&self, _a: usize, _b: usize, u: f64, v: f64) -> (f64, f64, f64) {
            let e = (-u * u - v * v).exp();
            (e, -2.0 * u * e, -2.0 * v * e)
        }
    }

    #[test]
    fn bracket_identity_gaussian() {
        assert!(boundary_bracket_product_check(&Gauss, &Gauss, 96).unwrap() < 1e-8);
    }
}
