//! Real Airy function and complex log-Gamma.
//!
//! `Ai` is evaluated in four regimes: a Maclaurin series near the origin,
//! Taylor continuation from a precomputed table of anchors on `[-12, 10]`,
//! and the classical asymptotic expansions beyond. The anchor table on the
//! positive side is built by stepping *backward* from `x = 10`, where the
//! asymptotic series is accurate to ~1e-18 relative, so that the growing
//! solution `Bi` never contaminates the result.

use std::f64::consts::{FRAC_PI_4, PI};
use std::sync::OnceLock;

use num_complex::Complex64;

use crate::error::{Error, Result};

/// Ai(0) = 3^{-2/3} / Gamma(2/3).
pub const AI0: f64 = 0.355_028_053_887_817_24;
/// Ai'(0) = -3^{-1/3} / Gamma(1/3).
pub const AIP0: f64 = -0.258_819_403_792_806_8;

const SERIES_MAX: f64 = 1.5;
const TABLE_LO: f64 = -12.0;
const TABLE_HI: f64 = 10.0;
const TABLE_STEP: f64 = 0.25;

/// Airy function value and derivative at a point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AiryValue {
    pub x: f64,
    pub ai: f64,
    pub ai_prime: f64,
}

/// Ai(x).
pub fn airy_ai(x: f64) -> f64 {
    airy(x).ai
}

/// Ai'(x).
pub fn airy_ai_prime(x: f64) -> f64 {
    airy(x).ai_prime
}

/// Ai(x) and Ai'(x) together.
pub fn airy(x: f64) -> AiryValue {
    let (ai, ai_prime) = if x.abs() <= SERIES_MAX {
        maclaurin(x)
    } else if x > TABLE_HI {
        let z = zeta(x);
        let (a, ap) = asym_pos_scaled(x);
        let e = (-z).exp();
        (a * e, ap * e)
    } else if x < TABLE_LO {
        asym_neg(-x)
    } else {
        from_table(x)
    };
    AiryValue { x, ai, ai_prime }
}

/// Exponentially scaled Airy function `e^{ζ} Ai(x)` with `ζ = (2/3) x^{3/2}`,
/// defined for `x > 0`. Returns `(scaled Ai, scaled Ai')`.
pub fn airy_ai_scaled(x: f64) -> (f64, f64) {
    debug_assert!(x > 0.0);
    if x > TABLE_HI {
        asym_pos_scaled(x)
    } else {
        let v = airy(x);
        let e = zeta(x).exp();
        (v.ai * e, v.ai_prime * e)
    }
}

/// `(ln|Ai(x)|, sign Ai(x))`, finite for every finite `x` except at Airy zeros.
pub fn log_airy_ai(x: f64) -> (f64, f64) {
    if x > 2.0 {
        let (a, _) = airy_ai_scaled(x);
        (a.ln() - zeta(x), 1.0)
    } else {
        let a = airy_ai(x);
        (a.abs().ln(), a.signum())
    }
}

fn zeta(x: f64) -> f64 {
    2.0 / 3.0 * x.abs().powf(1.5)
}

fn maclaurin(x: f64) -> (f64, f64) {
    // Ai = c1 f - c2 g with f = sum 3^k (1/3)_k x^{3k}/(3k)!, g = sum 3^k (2/3)_k x^{3k+1}/(3k+1)!
    let c1 = AI0;
    let c2 = -AIP0;
    let x3 = x * x * x;
    let (mut f, mut g) = (1.0, x);
    let (mut fp, mut gp) = (0.0, 1.0);
    let (mut tf, mut tg) = (1.0, x);
    let mut k = 0.0;
    loop {
        // term ratios from the ODE recurrence
        let nf = tf * x3 / ((3.0 * k + 2.0) * (3.0 * k + 3.0));
        let ng = tg * x3 / ((3.0 * k + 3.0) * (3.0 * k + 4.0));
        f += nf;
        g += ng;
        fp += nf * (3.0 * k + 3.0) / x;
        gp += ng * (3.0 * k + 4.0) / x;
        tf = nf;
        tg = ng;
        k += 1.0;
        if nf.abs() < 1e-18 && ng.abs() < 1e-18 {
            break;
        }
        if k > 200.0 {
            break;
        }
    }
    if x == 0.0 {
        return (c1, -c2);
    }
    (c1 * f - c2 * g, c1 * fp - c2 * gp)
}

/// Taylor step of the Airy ODE y'' = x y from `x0` by `h`.
fn taylor_step(x0: f64, y0: f64, yp0: f64, h: f64) -> (f64, f64) {
    let mut c_nm1 = yp0; // c_1
    let mut c_nm2 = y0; // c_0
    let mut y = y0 + yp0 * h;
    let mut yp = yp0;
    let mut hp = h; // h^{n-1} for derivative of term n
    let mut c_n3 = 0.0; // c_{n-3}
    let scale = y0.abs().max(yp0.abs()).max(1e-300);
    let mut quiet = 0;
    // c_n = (x0 c_{n-2} + c_{n-3}) / (n (n-1))
    for n in 2..200 {
        let nf = n as f64;
        let c_n = (x0 * c_nm2 + c_n3) / (nf * (nf - 1.0));
        let dy = c_n * hp * h;
        let dyp = nf * c_n * hp;
        y += dy;
        yp += dyp;
        hp *= h;
        c_n3 = c_nm2;
        c_nm2 = c_nm1;
        c_nm1 = c_n;
        // coefficients can vanish individually (x0 = 0), so wait for three in a row
        if dy.abs() < 1e-19 * scale && dyp.abs() < 1e-19 * scale {
            quiet += 1;
            if quiet == 3 {
                break;
            }
        } else {
            quiet = 0;
        }
    }
    (y, yp)
}

struct Table {
    vals: Vec<(f64, f64)>,
}

fn table() -> &'static Table {
    static T: OnceLock<Table> = OnceLock::new();
    T.get_or_init(|| {
        let n = ((TABLE_HI - TABLE_LO) / TABLE_STEP).round() as usize;
        let i0 = (-TABLE_LO / TABLE_STEP).round() as usize;
        let mut vals = vec![(0.0, 0.0); n + 1];
        vals[i0] = (AI0, AIP0);
        // negative side: oscillatory, forward stepping is stable
        for i in (0..i0).rev() {
            let x0 = TABLE_LO + (i + 1) as f64 * TABLE_STEP;
            let (y, yp) = vals[i + 1];
            vals[i] = sub_steps(x0, y, yp, -TABLE_STEP);
        }
        // positive side: step backward from the asymptotic regime
        let z = zeta(TABLE_HI);
        let (a, ap) = asym_pos_scaled(TABLE_HI);
        vals[n] = (a * (-z).exp(), ap * (-z).exp());
        for i in (i0 + 1..n).rev() {
            let x0 = TABLE_LO + (i + 1) as f64 * TABLE_STEP;
            let (y, yp) = vals[i + 1];
            vals[i] = sub_steps(x0, y, yp, -TABLE_STEP);
        }
        Table { vals }
    })
}

fn sub_steps(x0: f64, y: f64, yp: f64, h: f64) -> (f64, f64) {
    // two half steps keep the Taylor radius small at |x| ~ 12
    let (y1, yp1) = taylor_step(x0, y, yp, h / 2.0);
    taylor_step(x0 + h / 2.0, y1, yp1, h / 2.0)
}

fn from_table(x: f64) -> (f64, f64) {
    let t = table();
    let i = ((x - TABLE_LO) / TABLE_STEP).round() as usize;
    let i = i.min(t.vals.len() - 1);
    let x0 = TABLE_LO + i as f64 * TABLE_STEP;
    let (y, yp) = t.vals[i];
    taylor_step(x0, y, yp, x - x0)
}

fn u_coeffs(n: usize) -> Vec<f64> {
    let mut u = vec![1.0; n];
    for k in 1..n {
        let kf = k as f64;
        u[k] = u[k - 1] * (6.0 * kf - 5.0) * (6.0 * kf - 3.0) * (6.0 * kf - 1.0)
            / ((2.0 * kf - 1.0) * 216.0 * kf);
    }
    u
}

fn v_coeff(u: &[f64], k: usize) -> f64 {
    let kf = k as f64;
    -(6.0 * kf + 1.0) / (6.0 * kf - 1.0) * u[k]
}

const NCOEF: usize = 40;

fn coeffs() -> &'static Vec<f64> {
    static U: OnceLock<Vec<f64>> = OnceLock::new();
    U.get_or_init(|| u_coeffs(NCOEF))
}

/// Scaled asymptotic series for x > 0: returns (e^ζ Ai, e^ζ Ai').
fn asym_pos_scaled(x: f64) -> (f64, f64) {
    let u = coeffs();
    let z = zeta(x);
    let (mut sa, mut sb) = (0.0, 0.0);
    let mut zk = 1.0;
    let mut last = f64::INFINITY;
    for k in 0..NCOEF {
        let ta = u[k] * zk;
        if ta.abs() > last {
            break;
        }
        last = ta.abs();
        let sgn = if k % 2 == 0 { 1.0 } else { -1.0 };
        sa += sgn * ta;
        sb += sgn * v_coeff(u, k) * zk;
        zk /= z;
        if last < 1e-17 {
            break;
        }
    }
    let pre = 0.5 / PI.sqrt();
    let x4 = x.powf(0.25);
    (pre / x4 * sa, -pre * x4 * sb)
}

/// Asymptotic series for Ai(-x), Ai'(-x) with x > 0 large.
fn asym_neg(x: f64) -> (f64, f64) {
    let u = coeffs();
    let z = zeta(x);
    let (mut p, mut q, mut pv, mut qv) = (0.0, 0.0, 0.0, 0.0);
    let mut last = f64::INFINITY;
    let mut zk = 1.0;
    for k in 0..NCOEF {
        let t = u[k] * zk;
        if t.abs() > last {
            break;
        }
        last = t.abs();
        let j = k / 2;
        let sgn = if j % 2 == 0 { 1.0 } else { -1.0 };
        if k % 2 == 0 {
            p += sgn * t;
            pv += sgn * v_coeff(u, k) * zk;
        } else {
            q += sgn * t;
            qv += sgn * v_coeff(u, k) * zk;
        }
        zk /= z;
        if last < 1e-17 {
            break;
        }
    }
    let th = z + FRAC_PI_4;
    let (s, c) = th.sin_cos();
    let x4 = x.powf(0.25);
    let rp = PI.sqrt().recip();
    let ai = rp / x4 * (s * p - c * q);
    let aip = -rp * x4 * (c * pv + s * qv);
    (ai, aip)
}

const LANCZOS_G: f64 = 7.0;
const LANCZOS: [f64; 9] = [
    0.999_999_999_999_809_9,
    676.520_368_121_885_1,
    -1_259.139_216_722_402_8,
    771.323_428_777_653_1,
    -176.615_029_162_140_6,
    12.507_343_278_686_905,
    -0.138_571_095_265_720_12,
    9.984_369_578_019_572e-6,
    1.505_632_735_149_311_6e-7,
];

/// Complex log-Gamma. `exp` of the result is Gamma(z); the imaginary part is
/// continuous along lines of constant real part for `Re z >= 1/2`.
pub fn log_gamma(z: Complex64) -> Result<Complex64> {
    if z.re <= 0.0 && z.im.abs() < 1e-14 && (z.re - z.re.round()).abs() < 1e-14 {
        return Err(Error::Pole(z.re));
    }
    Ok(lgamma_inner(z))
}

fn lgamma_inner(z: Complex64) -> Complex64 {
    if z.re < 0.5 {
        // reflection: lnG(z) = ln(pi) - ln(sin(pi z)) - lnG(1-z)
        let s = (Complex64::new(PI, 0.0) * z).sin();
        return Complex64::new(PI.ln(), 0.0) - s.ln() - lgamma_inner(Complex64::new(1.0, 0.0) - z);
    }
    // Shift upward so the Lanczos sum is used where it is most accurate.
    let mut zz = z;
    let mut acc = Complex64::new(0.0, 0.0);
    while zz.re < 8.0 {
        acc -= zz.ln();
        zz += 1.0;
    }
    let w = zz - 1.0;
    let mut a = Complex64::new(LANCZOS[0], 0.0);
    for (k, c) in LANCZOS.iter().enumerate().skip(1) {
        a += *c / (w + k as f64);
    }
    let t = w + LANCZOS_G + 0.5;
    acc + 0.5 * (2.0 * PI).ln() + (w + 0.5) * t.ln() - t + a.ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn origin_values() {
        assert!((airy_ai(0.0) - 0.355_028_053_887_817_23).abs() < 1e-16);
        assert!((airy_ai_prime(0.0) + 0.258_819_403_792_806_8).abs() < 1e-16);
    }

    #[test]
    fn regimes_agree_at_switch_points() {
        // series vs table just outside the series window
        for &x in &[-1.5, 1.5] {
            let (a, ap) = maclaurin(x);
            let (b, bp) = from_table(x);
            assert!((a - b).abs() < 1e-14, "x={x}: {a} vs {b}");
            assert!((ap - bp).abs() < 1e-14);
        }
        // table vs asymptotics at both ends
        let (a, ap) = from_table(TABLE_LO);
        let (b, bp) = asym_neg(-TABLE_LO);
        assert!((a - b).abs() < 1e-14 && (ap - bp).abs() < 1e-13);
        let (a, _) = from_table(9.9);
        let (s, _) = asym_pos_scaled(9.9);
        assert!((a - s * (-zeta(9.9)).exp()).abs() < 1e-24);
    }

    #[test]
    fn taylor_table_reaches_exact_origin() {
        // the positive half of the table is built from x=10 downward; it must
        // land on the closed-form value at 0
        let t = table();
        let i0 = (-TABLE_LO / TABLE_STEP).round() as usize;
        let (y, yp) = taylor_step(TABLE_STEP, t.vals[i0 + 1].0, t.vals[i0 + 1].1, -TABLE_STEP);
        assert!((y - AI0).abs() < 1e-15, "{y}");
        assert!((yp - AIP0).abs() < 1e-15);
    }

    #[test]
    fn known_values() {
        // reference values from the integral representation at high precision
        let cases = [
            (1.0, 0.135_292_416_312_881_4),
            (-1.0, 0.535_560_883_292_352_1),
            (5.0, 1.083_444_281_360_744_7e-4),
            (-5.0, 0.350_761_009_024_114_2),
            (-10.0, 0.040_241_238_486_443_19),
        ];
        for (x, v) in cases {
            assert!((airy_ai(x) - v).abs() < 1e-14, "Ai({x}) = {}", airy_ai(x));
        }
    }

    #[test]
    fn log_airy_matches_direct() {
        for &x in &[-3.0, 0.5, 3.0, 9.0, 15.0] {
            let (l, s) = log_airy_ai(x);
            let a = airy_ai(x);
            assert!((s * l.exp() - a).abs() < 1e-14 * a.abs().max(1e-300) + 1e-300);
        }
        let (l, _) = log_airy_ai(400.0);
        assert!((l + zeta(400.0)).abs() < 10.0);
    }

    #[test]
    fn gamma_basic() {
        let one = log_gamma(Complex64::new(1.0, 0.0)).unwrap();
        assert!(one.norm() < 1e-14);
        let half = log_gamma(Complex64::new(0.5, 0.0)).unwrap();
        assert!((half.re - 0.5 * PI.ln()).abs() < 1e-14);
        assert!(log_gamma(Complex64::new(-2.0, 0.0)).is_err());
    }
}
