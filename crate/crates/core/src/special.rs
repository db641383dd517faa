//! Stable special-function kernels: log-factorials, Bessel functions of the
//! first kind, Gauss–Hermite quadrature nodes, and Hermite/Laguerre
//! recurrences.
//!
//! Everything that can overflow past n ≈ 170 is evaluated in log-domain with
//! sign tracking.

use std::sync::OnceLock;

const LN_FACTORIAL_TABLE_LEN: usize = 4096;

fn ln_factorial_table() -> &'static [f64] {
    static TABLE: OnceLock<Vec<f64>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut t = Vec::with_capacity(LN_FACTORIAL_TABLE_LEN);
        let mut acc = 0.0_f64;
        t.push(0.0);
        for k in 1..LN_FACTORIAL_TABLE_LEN {
            acc += (k as f64).ln();
            t.push(acc);
        }
        t
    })
}

/// ln(n!) from a cumulative table.
pub fn ln_factorial(n: usize) -> f64 {
    let table = ln_factorial_table();
    assert!(n < table.len(), "ln_factorial table exhausted (n = {n})");
    table[n]
}

/// A signed magnitude in log-domain: value = sign * exp(ln_abs).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SignLn {
    pub sign: f64,
    pub ln_abs: f64,
}

impl SignLn {
    pub fn zero() -> Self {
        SignLn { sign: 0.0, ln_abs: f64::NEG_INFINITY }
    }

    pub fn value(self) -> f64 {
        self.sign * self.ln_abs.exp()
    }
}

/// Table of J_0(x)..J_{n_max}(x) by downward (Miller) recurrence with the
/// J_0 + 2*sum J_{2k} = 1 normalization. Accurate for the small arguments
/// (|x| < ~50) and orders (<= ~90) in play here.
pub fn bessel_j_table(n_max: usize, x: f64) -> Vec<f64> {
    let ax = x.abs();
    let mut out = vec![0.0; n_max + 1];
    if ax < 1e-300 {
        out[0] = 1.0;
        return out;
    }
    // Start far enough above both the requested order and the turning point.
    let start = (n_max.max(ax.ceil() as usize) + 2) + 50 + (ax * 0.2) as usize;
    let start = start + (start % 2);

    let mut sum = 0.0_f64;
    let mut j_above = 0.0_f64; // J_{k+1}, unnormalized
    let mut j_here = 1e-30_f64; // J_k
    for k in (0..=start).rev() {
        if k <= n_max {
            out[k] = j_here;
        }
        if k % 2 == 0 {
            sum += if k == 0 { j_here } else { 2.0 * j_here };
        }
        if k > 0 {
            let j_below = 2.0 * (k as f64) / ax * j_here - j_above;
            j_above = j_here;
            j_here = j_below;
            if j_here.abs() > 1e250 {
                j_here *= 1e-250;
                j_above *= 1e-250;
                sum *= 1e-250;
                for v in out.iter_mut() {
                    *v *= 1e-250;
                }
            }
        }
    }
    for v in out.iter_mut() {
        *v /= sum;
    }
    if x < 0.0 {
        for (k, v) in out.iter_mut().enumerate() {
            if k % 2 == 1 {
                *v = -*v;
            }
        }
    }
    out
}

/// J_order(x) for any integer order (negative orders by symmetry).
pub fn bessel_j(order: i32, x: f64) -> f64 {
    let n = order.unsigned_abs() as usize;
    let v = bessel_j_table(n, x)[n];
    if order < 0 && n % 2 == 1 {
        -v
    } else {
        v
    }
}

/// Gauss–Hermite nodes and weights for ∫ e^{-x²} f(x) dx ≈ Σ w_i f(x_i),
/// returned in ascending node order. Newton iteration on the orthonormal
/// Hermite recurrence; beyond ~160 nodes the weight evaluation overflows,
/// so the count is capped.
pub fn gauss_hermite(n: usize) -> (Vec<f64>, Vec<f64>) {
    assert!((1..=160).contains(&n), "gauss_hermite supports 1..=160 nodes, asked for {n}");
    const PIM4: f64 = 0.751_125_544_464_942_5; // pi^(-1/4)
    const EPS: f64 = 3e-14;
    const MAX_IT: usize = 64;

    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    let nf = n as f64;
    let mut z = 0.0_f64;
    for i in 0..m {
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * x[0],
            3 => 1.91 * z - 0.91 * x[1],
            _ => 2.0 * z - x[i - 2],
        };
        let mut pp = 0.0;
        for it in 0..MAX_IT {
            let mut p1 = PIM4;
            let mut p2 = 0.0;
            for j in 1..=n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let z1 = z;
            z = z1 - p1 / pp;
            if (z - z1).abs() <= EPS * (1.0 + z.abs()) {
                break;
            }
            assert!(it + 1 < MAX_IT, "Gauss-Hermite Newton iteration stalled");
        }
        x[i] = z;
        x[n - 1 - i] = -z;
        w[i] = 2.0 / (pp * pp);
        w[n - 1 - i] = w[i];
    }
    x.reverse(); // ascending
    w.reverse();
    (x, w)
}

/// Normalized harmonic-oscillator eigenfunction φ_n(u) in dimensionless
/// coordinates (unit impedance), Gaussian included. Stable for n up to
/// several hundred; underflows cleanly to 0 deep in the tail.
pub fn hermite_fn(n: usize, u: f64) -> f64 {
    const PIM4: f64 = 0.751_125_544_464_942_5;
    let mut prev = 0.0_f64;
    let mut here = PIM4 * (-0.5 * u * u).exp();
    for k in 1..=n {
        let kf = k as f64;
        let next = u * (2.0 / kf).sqrt() * here - ((kf - 1.0) / kf).sqrt() * prev;
        prev = here;
        here = next;
    }
    here
}

/// φ_n(u) with the Gaussian factor removed, i.e. hermite_fn(n,u)·e^{u²/2}.
/// Grows like e^{u²/2}; callers pair it with quadrature weights that carry
/// the compensating decay.
pub fn hermite_fn_nogauss(n: usize, u: f64) -> f64 {
    const PIM4: f64 = 0.751_125_544_464_942_5;
    let mut prev = 0.0_f64;
    let mut here = PIM4;
    for k in 1..=n {
        let kf = k as f64;
        let next = u * (2.0 / kf).sqrt() * here - ((kf - 1.0) / kf).sqrt() * prev;
        prev = here;
        here = next;
    }
    here
}

/// Associated Laguerre polynomial L_k^{(alpha)}(x) in log-domain, by the
/// three-term recurrence with periodic rescaling.
pub fn laguerre_assoc_ln(k: usize, alpha: f64, x: f64) -> SignLn {
    let mut shift = 0.0_f64;
    let mut prev = 1.0_f64; // L_0
    if k == 0 {
        return SignLn { sign: 1.0, ln_abs: 0.0 };
    }
    let mut here = 1.0 + alpha - x; // L_1
    for j in 1..k {
        let jf = j as f64;
        let next = ((2.0 * jf + 1.0 + alpha - x) * here - (jf + alpha) * prev) / (jf + 1.0);
        prev = here;
        here = next;
        if here.abs() > 1e280 {
            here *= 1e-280;
            prev *= 1e-280;
            shift += 280.0 * std::f64::consts::LN_10;
        }
    }
    if here == 0.0 {
        SignLn::zero()
    } else {
        SignLn { sign: here.signum(), ln_abs: here.abs().ln() + shift }
    }
}
