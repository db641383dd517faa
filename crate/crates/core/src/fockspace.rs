//! Truncated-Fock-space linear algebra: squeeze/displacement matrix
//! elements, oscillator wavefunctions, standard phonon distributions,
//! distribution moments, and Wigner functions of diagonal states.

use crate::error::{Error, Result};
use crate::expm::expm;
use crate::special::{
    gauss_hermite, hermite_fn, hermite_fn_nogauss, laguerre_assoc_ln, ln_factorial,
};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Probability vector P(n) over a truncated Fock space.
///
/// Invariants: every entry >= 0, entries sum to 1 (enforced by explicit
/// renormalization in every constructor), length >= 2.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhononDistribution {
    probs: Vec<f64>,
}

impl PhononDistribution {
    /// Builds a distribution from raw weights, clipping float-noise
    /// negatives and renormalizing.
    pub fn new(mut probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidParams("distribution needs n_max >= 1".into()));
        }
        for p in probs.iter_mut() {
            if *p < 0.0 {
                if *p < -1e-9 {
                    return Err(Error::InvalidParams(format!(
                        "negative probability {p} in distribution"
                    )));
                }
                *p = 0.0;
            }
        }
        let total: f64 = probs.iter().sum();
        if !(total > 0.0) {
            return Err(Error::InvalidParams("distribution has zero total mass".into()));
        }
        for p in probs.iter_mut() {
            *p /= total;
        }
        Ok(PhononDistribution { probs })
    }

    /// A single Fock bin at `n`.
    pub fn fock(n: usize, n_max: usize) -> Result<Self> {
        if n > n_max {
            return Err(Error::InvalidParams(format!("fock bin {n} above n_max {n_max}")));
        }
        let mut probs = vec![0.0; n_max + 1];
        probs[n] = 1.0;
        PhononDistribution::new(probs)
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn n_max(&self) -> usize {
        self.probs.len() - 1
    }

    pub fn moments(&self) -> Result<Moments> {
        moments(self)
    }
}

/// First two moments of a number distribution plus the Fano factor
/// var(n)/<n>.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub mean: f64,
    pub variance: f64,
    pub fano: f64,
}

/// Exact discrete moments. Errors when the mean vanishes (Fano undefined).
pub fn moments(dist: &PhononDistribution) -> Result<Moments> {
    let mut mean = 0.0;
    let mut second = 0.0;
    for (n, p) in dist.probs().iter().enumerate() {
        let nf = n as f64;
        mean += nf * p;
        second += nf * nf * p;
    }
    let variance = (second - mean * mean).max(0.0);
    if mean <= 0.0 {
        return Err(Error::Statistics("Fano factor undefined for zero-mean distribution".into()));
    }
    Ok(Moments { mean, variance, fano: variance / mean })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MatrixKind {
    Squeeze,
    Displacement,
    Composite,
}

/// Dense (n_max+1)x(n_max+1) operator matrix in the Fock basis, built on an
/// enlarged space and cropped so interior entries carry no truncation bias.
#[derive(Debug, Clone)]
pub struct FockOperatorMatrix {
    entries: Array2<f64>,
    kind: MatrixKind,
    /// Construction guard: rows at least this far from the truncation edge
    /// passed the interior unitarity check.
    guard: usize,
}

impl FockOperatorMatrix {
    pub fn entry(&self, m: usize, n: usize) -> f64 {
        self.entries[[m, n]]
    }

    pub fn entries(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn kind(&self) -> MatrixKind {
        self.kind
    }

    pub fn n_max(&self) -> usize {
        self.entries.nrows() - 1
    }

    pub fn guard(&self) -> usize {
        self.guard
    }

    /// Element-wise squared magnitudes, e.g. for qubit-flip branching
    /// probabilities.
    pub fn abs_squared(&self) -> Array2<f64> {
        self.entries.mapv(|v| v * v)
    }
}

fn squeeze_generator(z: f64, dim: usize) -> Array2<f64> {
    // (z/2)(a^2 - a^dag^2): couples n to n -+ 2 only, skew-symmetric.
    let mut g = Array2::<f64>::zeros((dim, dim));
    for n in 2..dim {
        let nf = n as f64;
        g[[n - 2, n]] = 0.5 * z * (nf * (nf - 1.0)).sqrt();
    }
    for n in 0..dim.saturating_sub(2) {
        let nf = n as f64;
        g[[n + 2, n]] = -0.5 * z * ((nf + 1.0) * (nf + 2.0)).sqrt();
    }
    g
}

fn displacement_generator(beta: f64, dim: usize) -> Array2<f64> {
    // beta (a^dag - a), real beta; skew-symmetric.
    let mut g = Array2::<f64>::zeros((dim, dim));
    for n in 0..dim - 1 {
        let nf = n as f64;
        g[[n + 1, n]] = beta * (nf + 1.0).sqrt();
    }
    for n in 1..dim {
        let nf = n as f64;
        g[[n - 1, n]] = -beta * nf.sqrt();
    }
    g
}

fn squeeze_buffer(z: f64, n_max: usize) -> usize {
    (16usize).max((8.0 * z.abs() * n_max as f64).ceil() as usize)
}

fn displacement_buffer(beta: f64, n_max: usize) -> usize {
    (16usize).max((8.0 * beta.abs() * (n_max as f64).sqrt()).ceil() as usize)
}

/// Crops the enlarged matrix and verifies approximate unitarity on the
/// interior rows (the truncation guard).
fn crop_checked(big: Array2<f64>, n_max: usize, guard: usize, kind: MatrixKind) -> Result<FockOperatorMatrix> {
    let dim = n_max + 1;
    let entries = big.slice(ndarray::s![..dim, ..dim]).to_owned();
    let check_rows = n_max.saturating_sub(guard);
    for m in 0..=check_rows {
        let norm: f64 = entries.row(m).iter().map(|v| v * v).sum();
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::Truncation(format!(
                "interior unitarity check failed at row {m}: |row|^2 = {norm:.9} (n_max too small)"
            )));
        }
    }
    Ok(FockOperatorMatrix { entries, kind, guard })
}

/// <m| exp[(z/2)(a^2 - a^dag^2)] |n> on the truncated space, built as the
/// matrix exponential of the truncated generator with
/// max(16, ceil(8 |z| n_max)) extra Fock levels, then cropped.
pub fn squeeze_matrix(z: f64, n_max: usize) -> Result<FockOperatorMatrix> {
    if z.abs() > 1.0 {
        return Err(Error::InvalidParams(format!("|z| = {} exceeds 1", z.abs())));
    }
    if n_max < 8 {
        return Err(Error::InvalidParams("squeeze_matrix needs n_max >= 8".into()));
    }
    let buffer = squeeze_buffer(z, n_max);
    let big = expm(&squeeze_generator(z, n_max + 1 + buffer));
    crop_checked(big, n_max, buffer, MatrixKind::Squeeze)
}

/// <m| exp[beta a^dag - beta a] |n> for real beta, via the truncated matrix
/// exponential.
pub fn displacement_matrix(beta: f64, n_max: usize) -> Result<FockOperatorMatrix> {
    if n_max < 8 {
        return Err(Error::InvalidParams("displacement_matrix needs n_max >= 8".into()));
    }
    if beta.abs() > (n_max as f64).sqrt() / 4.0 {
        return Err(Error::Truncation(format!(
            "displacement support overflow: |beta| = {} > sqrt(n_max)/4",
            beta.abs()
        )));
    }
    let buffer = displacement_buffer(beta, n_max);
    let big = expm(&displacement_generator(beta, n_max + 1 + buffer));
    crop_checked(big, n_max, buffer, MatrixKind::Displacement)
}

/// Qubit-flip overlap operator with residual linear coupling:
/// <m| D^dag(beta) S(-2r) D(-beta) |n>, composed on the enlarged space
/// before cropping. With beta = 0 this reduces exactly to
/// squeeze_matrix(-2r).
pub fn residual_overlap_matrix(r: f64, beta: f64, n_max: usize) -> Result<FockOperatorMatrix> {
    let z = -2.0 * r;
    if z.abs() > 1.0 {
        return Err(Error::InvalidParams(format!("|2r| = {} exceeds 1", z.abs())));
    }
    if n_max < 8 {
        return Err(Error::InvalidParams("residual_overlap_matrix needs n_max >= 8".into()));
    }
    if beta.abs() > (n_max as f64).sqrt() / 4.0 {
        return Err(Error::Truncation(format!(
            "displacement support overflow: |beta| = {} > sqrt(n_max)/4",
            beta.abs()
        )));
    }
    let buffer = squeeze_buffer(z, n_max).max(displacement_buffer(beta, n_max));
    let dim = n_max + 1 + buffer;
    let squeeze = expm(&squeeze_generator(z, dim));
    // D^dag(beta) = D(-beta); both outer factors share one matrix.
    let disp_neg = expm(&displacement_generator(-beta, dim));
    let big = disp_neg.dot(&squeeze).dot(&disp_neg);
    crop_checked(big, n_max, buffer, MatrixKind::Composite)
}

/// Harmonic-oscillator eigenfunction with qubit-state-dependent width, in
/// dimensionless coordinates. `impedance_scale` is the ratio of the
/// effective impedance to the bare one; the wavefunction stays
/// L2-normalized for any positive scale.
pub fn wavefunction(x: f64, n: usize, impedance_scale: f64) -> f64 {
    assert!(impedance_scale > 0.0, "impedance scale must be positive");
    impedance_scale.powf(0.25) * hermite_fn(n, impedance_scale.sqrt() * x)
}

/// Spatial-overlap integral of two oscillator eigenfunctions with different
/// impedances, by Gauss-Hermite quadrature that is exact for the
/// polynomial-times-Gaussian integrand. This is the independent oracle for
/// the squeeze matrix elements.
pub fn fc_overlap_numeric(m: usize, n: usize, scale_g: f64, scale_e: f64) -> Result<f64> {
    if m > 100 || n > 100 {
        return Err(Error::InvalidParams("fc_overlap_numeric limited to m, n <= 100".into()));
    }
    if !(scale_g > 0.0 && scale_e > 0.0) {
        return Err(Error::InvalidParams("impedance scales must be positive".into()));
    }
    let eval = |nodes: usize| -> f64 {
        let (u, w) = gauss_hermite(nodes);
        let alpha = 0.5 * (scale_g + scale_e);
        let ratio_g = (scale_g / alpha).sqrt();
        let ratio_e = (scale_e / alpha).sqrt();
        let prefactor = (scale_g * scale_e).powf(0.25) / alpha.sqrt();
        let mut acc = 0.0;
        for (ui, wi) in u.iter().zip(&w) {
            acc += wi * hermite_fn_nogauss(n, ratio_g * ui) * hermite_fn_nogauss(m, ratio_e * ui);
        }
        prefactor * acc
    };
    let nodes = (m + n) / 2 + 16;
    let v1 = eval(nodes);
    let v2 = eval(nodes + 8);
    if (v1 - v2).abs() > 1e-9 * (1.0 + v1.abs()) {
        return Err(Error::Accuracy(format!(
            "overlap quadrature did not converge: {v1} vs {v2}"
        )));
    }
    Ok(v2)
}

/// Impedance scales of the ground/excited oscillator manifolds for a
/// single-manifold squeeze parameter r (relative squeeze between manifolds
/// is 2r).
pub fn qubit_state_impedance_scales(r: f64) -> (f64, f64) {
    ((-2.0 * r).exp(), (2.0 * r).exp())
}

/// Bose-Einstein number distribution with mean occupancy n_th, renormalized
/// over the truncation. Errors when the truncation holds less than 99.9% of
/// the mass.
pub fn thermal_distribution(n_th: f64, n_max: usize) -> Result<PhononDistribution> {
    if n_th < 0.0 {
        return Err(Error::InvalidParams("n_th must be >= 0".into()));
    }
    let q = n_th / (1.0 + n_th);
    let mass = 1.0 - q.powi(n_max as i32 + 1);
    if mass < 0.999 {
        return Err(Error::Truncation(format!(
            "thermal distribution holds only {:.4}% of its mass below n_max = {}",
            100.0 * mass,
            n_max
        )));
    }
    let mut probs = Vec::with_capacity(n_max + 1);
    let mut p = 1.0 / (1.0 + n_th);
    for _ in 0..=n_max {
        probs.push(p);
        p *= q;
    }
    PhononDistribution::new(probs)
}

/// |<n| D(sqrt(n_disp)) |m>|^2 in log-domain: the photon-number overlap of a
/// displaced Fock state.
pub fn displaced_fock_overlap_sq(n: usize, m: usize, n_disp: f64) -> f64 {
    if n_disp == 0.0 {
        return if n == m { 1.0 } else { 0.0 };
    }
    let (lo, hi) = if n <= m { (n, m) } else { (m, n) };
    let diff = (hi - lo) as f64;
    let lag = laguerre_assoc_ln(lo, diff, n_disp);
    let ln = -n_disp + ln_factorial(lo) - ln_factorial(hi) + diff * n_disp.ln() + 2.0 * lag.ln_abs;
    ln.exp()
}

/// Number distribution of a coherently displaced thermal state: thermal
/// weights pushed through the displaced-Fock overlap series, with the inner
/// sum truncated once its geometric tail bound (ratio n_th/(1+n_th)) drops
/// below 1e-12 of the accumulated value.
pub fn displaced_thermal_distribution(
    n_th: f64,
    n_disp: f64,
    n_max: usize,
) -> Result<PhononDistribution> {
    if n_th < 0.0 || n_disp < 0.0 {
        return Err(Error::InvalidParams("n_th and n_disp must be >= 0".into()));
    }
    let mut probs = Vec::with_capacity(n_max + 1);
    if n_th < 1e-14 {
        for n in 0..=n_max {
            probs.push(displaced_fock_overlap_sq(n, 0, n_disp));
        }
    } else {
        let q = n_th / (1.0 + n_th);
        let ln_q = q.ln();
        for n in 0..=n_max {
            let mut acc = 0.0;
            let mut m = 0usize;
            loop {
                let ln_w = m as f64 * ln_q - (1.0 + n_th).ln();
                acc += ln_w.exp() * displaced_fock_overlap_sq(n, m, n_disp);
                // Geometric tail bound: remaining mass <= q^{m+1}, and each
                // overlap factor is <= 1.
                let tail = ((m as f64 + 1.0) * ln_q).exp();
                if m >= n && tail < 1e-12 * acc.max(1e-300) {
                    break;
                }
                m += 1;
                if m > 20 * (n_max + 1) + 2000 {
                    return Err(Error::Accuracy("displaced-thermal inner sum stalled".into()));
                }
            }
            probs.push(acc);
        }
    }
    let mass: f64 = probs.iter().sum();
    if mass < 0.999 {
        return Err(Error::Truncation(format!(
            "displaced thermal distribution holds only {:.4}% of its mass below n_max = {}",
            100.0 * mass,
            n_max
        )));
    }
    PhononDistribution::new(probs)
}

/// Discretized Gaussian over n >= 0 with variance fano*mean. A vanishing
/// variance clamps to a single Fock bin at round(mean).
pub fn gaussian_number_distribution(mean: f64, fano: f64, n_max: usize) -> Result<PhononDistribution> {
    if !(mean > 0.0) || fano < 0.0 {
        return Err(Error::InvalidParams("gaussian number distribution needs mean > 0, fano >= 0".into()));
    }
    let variance = fano * mean;
    if variance < 1e-12 {
        let bin = (mean.round() as usize).min(n_max);
        return PhononDistribution::fock(bin, n_max);
    }
    let mut probs = Vec::with_capacity(n_max + 1);
    for n in 0..=n_max {
        let d = n as f64 - mean;
        probs.push((-0.5 * d * d / variance).exp());
    }
    PhononDistribution::new(probs)
}

/// Dimensionless phase-space grid holding W(x, p) values.
#[derive(Debug, Clone)]
pub struct WignerGrid {
    pub x_axis: Vec<f64>,
    pub p_axis: Vec<f64>,
    pub values: Array2<f64>,
}

impl WignerGrid {
    /// Trapezoid-rule integral over the grid.
    pub fn integral(&self) -> f64 {
        let dx = self.x_axis[1] - self.x_axis[0];
        let dp = self.p_axis[1] - self.p_axis[0];
        let nx = self.x_axis.len();
        let np = self.p_axis.len();
        let mut total = 0.0;
        for i in 0..nx {
            let wx = if i == 0 || i == nx - 1 { 0.5 } else { 1.0 };
            for j in 0..np {
                let wp = if j == 0 || j == np - 1 { 0.5 } else { 1.0 };
                total += wx * wp * self.values[[i, j]];
            }
        }
        total * dx * dp
    }

    pub fn min(&self) -> f64 {
        self.values.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Value at the grid point closest to (x, p).
    pub fn nearest_value(&self, x: f64, p: f64) -> f64 {
        let find = |axis: &[f64], v: f64| {
            axis.iter()
                .enumerate()
                .min_by(|a, b| (a.1 - v).abs().partial_cmp(&(b.1 - v).abs()).unwrap())
                .unwrap()
                .0
        };
        self.values[[find(&self.x_axis, x), find(&self.p_axis, p)]]
    }
}

/// Symmetric square grid specification for Wigner evaluation.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct WignerGridSpec {
    pub half_width: f64,
    pub points_per_axis: usize,
}

impl WignerGridSpec {
    pub fn square(half_width: f64, points_per_axis: usize) -> Self {
        WignerGridSpec { half_width, points_per_axis }
    }
}

/// W(x,p) of a diagonal state: sum_n P(n) W_n with the radially symmetric
/// Fock-state Wigner functions evaluated by a rescaled Laguerre recurrence.
/// Errors when the grid is too coarse for the state (normalization check).
pub fn wigner_from_diagonal(dist: &PhononDistribution, spec: &WignerGridSpec) -> Result<WignerGrid> {
    if spec.points_per_axis < 2 || !(spec.half_width > 0.0) {
        return Err(Error::InvalidParams("degenerate Wigner grid spec".into()));
    }
    let npts = spec.points_per_axis;
    let axis: Vec<f64> = (0..npts)
        .map(|i| -spec.half_width + 2.0 * spec.half_width * i as f64 / (npts - 1) as f64)
        .collect();
    let probs = dist.probs();
    let n_top = probs.len() - 1;
    let inv_pi = 1.0 / std::f64::consts::PI;

    let mut values = Array2::<f64>::zeros((npts, npts));
    for (i, &x) in axis.iter().enumerate() {
        for (j, &p) in axis.iter().enumerate() {
            let r_sq = x * x + p * p;
            let arg = 2.0 * r_sq;
            // Rescaled upward recurrence in n for L_n(arg); the factor
            // e^{-r_sq} is folded in through the running shift.
            let mut shift = -r_sq;
            let mut prev = 0.0_f64;
            let mut here = 1.0_f64; // L_0
            let mut acc = probs[0] * here * shift.exp();
            for n in 1..=n_top {
                let nf = n as f64;
                let next = ((2.0 * nf - 1.0 - arg) * here - (nf - 1.0) * prev) / nf;
                prev = here;
                here = next;
                if here.abs() > 1e280 {
                    here *= 1e-280;
                    prev *= 1e-280;
                    shift += 280.0 * std::f64::consts::LN_10;
                }
                if probs[n] != 0.0 {
                    let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
                    acc += probs[n] * sign * here * shift.exp();
                }
            }
            values[[i, j]] = inv_pi * acc;
        }
    }
    let grid = WignerGrid { x_axis: axis.clone(), p_axis: axis, values };
    let integral = grid.integral();
    if (integral - 1.0).abs() > 1e-3 {
        return Err(Error::Accuracy(format!(
            "Wigner grid too coarse or too small: integral = {integral:.6}"
        )));
    }
    Ok(grid)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal, Poisson};

    #[test]
    fn squeeze_zero_is_identity() {
        let s = squeeze_matrix(0.0, 16).unwrap();
        for m in 0..=16 {
            for n in 0..=16 {
                let expect = if m == n { 1.0 } else { 0.0 };
                assert!((s.entry(m, n) - expect).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn squeeze_parity_selection_rule() {
        let s = squeeze_matrix(0.2, 32).unwrap();
        assert!(s.entry(3, 0).abs() < 1e-14);
        for m in 0..=28 {
            for n in 0..=28 {
                if (m as i64 - n as i64).rem_euclid(2) == 1 {
                    assert!(s.entry(m, n).abs() < 1e-10, "parity violated at ({m},{n})");
                }
            }
        }
    }

    #[test]
    fn squeeze_vacuum_element_matches_closed_form_and_oracle() {
        let z = 0.3;
        let s = squeeze_matrix(z, 48).unwrap();
        let sech_sqrt = (1.0 / z.cosh()).sqrt();
        assert_relative_eq!(s.entry(0, 0), sech_sqrt, epsilon = 1e-10);
        // Wavefunction-overlap oracle: |n>-side impedance e^{2z}.
        let oracle = fc_overlap_numeric(0, 0, (2.0 * z).exp(), 1.0).unwrap();
        assert_relative_eq!(s.entry(0, 0), oracle, epsilon = 1e-10);
    }

    #[test]
    fn squeeze_interior_unitarity() {
        let s = squeeze_matrix(-0.0104, 64).unwrap();
        for m in 0..=(64 - s.guard()) {
            let norm: f64 = (0..=64).map(|n| s.entry(m, n).powi(2)).sum();
            assert!((norm - 1.0).abs() < 1e-6, "row {m} norm {norm}");
        }
        // Column norms likewise, on the interior.
        for n in 0..=(64 - s.guard()) {
            let norm: f64 = (0..=64).map(|m| s.entry(m, n).powi(2)).sum();
            assert!((norm - 1.0).abs() < 1e-6, "col {n} norm {norm}");
        }
    }

    #[test]
    fn squeeze_matches_fc_oracle_across_entries() {
        // Oracle equivalence: small squeeze, a band of interior entries.
        let two_r = 0.0104;
        let s = squeeze_matrix(-two_r, 64).unwrap();
        let (scale_g, scale_e) = qubit_state_impedance_scales(two_r / 2.0);
        for &(m, n) in &[(45usize, 43usize), (43, 45), (40, 40), (12, 16), (7, 7), (0, 2)] {
            let oracle = fc_overlap_numeric(m, n, scale_g, scale_e).unwrap();
            assert!(
                (s.entry(m, n) - oracle).abs() < 1e-6,
                "entry ({m},{n}): matrix {} vs overlap {}",
                s.entry(m, n),
                oracle
            );
        }
    }

    #[test]
    fn displacement_identity_and_coherent_column() {
        let d0 = displacement_matrix(0.0, 16).unwrap();
        for m in 0..=16 {
            for n in 0..=16 {
                let expect = if m == n { 1.0 } else { 0.0 };
                assert!((d0.entry(m, n) - expect).abs() < 1e-14);
            }
        }
        // Coherent-state series oracle for column 0.
        let beta = 0.5;
        let d = displacement_matrix(beta, 64).unwrap();
        let mut norm = 0.0;
        for n in 0..=64 {
            let expect = (-0.125_f64).exp() * beta.powi(n as i32)
                / (0.5 * ln_factorial(n)).exp();
            assert!((d.entry(n, 0) - expect).abs() < 1e-10, "coherent amplitude at n={n}");
            norm += d.entry(n, 0).powi(2);
        }
        assert!((norm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn displacement_support_overflow_errors() {
        assert!(matches!(displacement_matrix(2.0, 16), Err(Error::Truncation(_))));
    }

    #[test]
    fn residual_overlap_reduces_and_composes() {
        let id = residual_overlap_matrix(0.0, 0.0, 12).unwrap();
        for m in 0..=12 {
            assert!((id.entry(m, m) - 1.0).abs() < 1e-13);
        }
        // beta = 0 restores parity.
        let bare = residual_overlap_matrix(0.005, 0.0, 24).unwrap();
        assert!(bare.entry(1, 0).abs() < 1e-12);
        let sq = squeeze_matrix(-0.01, 24).unwrap();
        for m in 0..=20 {
            for n in 0..=20 {
                assert!((bare.entry(m, n) - sq.entry(m, n)).abs() < 1e-12);
            }
        }
        // Dense matrix-product oracle at a much larger truncation.
        let (r, beta) = (0.005, 0.1);
        let got = residual_overlap_matrix(r, beta, 32).unwrap();
        let dim = 129;
        let s = expm(&squeeze_generator(-2.0 * r, dim));
        let d = expm(&displacement_generator(-beta, dim));
        let oracle = d.dot(&s).dot(&d);
        assert!(got.entry(1, 0).abs() > 1e-3, "odd entry should be nonzero with beta != 0");
        for m in 0..=8 {
            for n in 0..=8 {
                assert!(
                    (got.entry(m, n) - oracle[[m, n]]).abs() < 1e-8,
                    "residual overlap ({m},{n}) disagrees with dense oracle"
                );
            }
        }
    }

    #[test]
    fn wavefunction_basics() {
        assert_eq!(wavefunction(0.0, 1, 1.0), 0.0);
        assert_relative_eq!(
            wavefunction(0.0, 0, 1.0),
            std::f64::consts::PI.powf(-0.25),
            epsilon = 1e-14
        );
        // L2 normalization via the overlap quadrature.
        assert_relative_eq!(fc_overlap_numeric(5, 5, 1.0, 1.0).unwrap(), 1.0, epsilon = 1e-8);
        // Orthogonality at equal impedance.
        assert!(fc_overlap_numeric(6, 2, 1.0, 1.0).unwrap().abs() < 1e-10);
        assert!(fc_overlap_numeric(3, 2, 1.0, 1.0).unwrap().abs() < 1e-10);
    }

    #[test]
    fn thermal_distribution_properties() {
        let zero = thermal_distribution(0.0, 8).unwrap();
        assert_eq!(zero.probs()[0], 1.0);
        let t = thermal_distribution(17.7, 400).unwrap();
        let m = t.moments().unwrap();
        assert_relative_eq!(m.mean, 17.7, max_relative = 1e-4);
        assert_relative_eq!(m.fano, 18.7, max_relative = 1e-4);
        assert!(matches!(thermal_distribution(100.0, 32), Err(Error::Truncation(_))));
    }

    #[test]
    fn displaced_thermal_zero_temperature_is_poisson() {
        let nd = 5.0;
        let d = displaced_thermal_distribution(0.0, nd, 64).unwrap();
        for n in 0..=64 {
            let poisson = (-nd + n as f64 * nd.ln() - ln_factorial(n)).exp();
            assert!((d.probs()[n] - poisson).abs() < 1e-10, "entry {n}");
        }
    }

    #[test]
    fn displaced_thermal_mean_and_mc_oracle() {
        let (n_th, n_disp) = (3.0, 7.0);
        let d = displaced_thermal_distribution(n_th, n_disp, 100).unwrap();
        let m = d.moments().unwrap();
        assert_relative_eq!(m.mean, n_th + n_disp, max_relative = 1e-6);

        // Monte-Carlo sampling oracle: coherent amplitude = sqrt(n_disp)
        // plus complex thermal noise, then Poisson counts.
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let gauss = Normal::new(0.0, (n_th / 2.0_f64).sqrt()).unwrap();
        let samples = 200_000;
        let mut acc = 0.0;
        for _ in 0..samples {
            let re = n_disp.sqrt() + gauss.sample(&mut rng);
            let im = gauss.sample(&mut rng);
            let intensity = re * re + im * im;
            acc += Poisson::new(intensity.max(1e-12)).unwrap().sample(&mut rng);
        }
        let mc_mean = acc / samples as f64;
        let sigma = (m.variance / samples as f64).sqrt();
        assert!(
            (mc_mean - m.mean).abs() < 5.0 * sigma,
            "MC mean {mc_mean} vs analytic {}",
            m.mean
        );
    }

    #[test]
    fn gaussian_number_distribution_moments() {
        let g = gaussian_number_distribution(43.0, 0.25, 200).unwrap();
        let m = g.moments().unwrap();
        assert_relative_eq!(m.variance.sqrt(), 10.75_f64.sqrt(), max_relative = 0.01);
        assert_relative_eq!(m.mean, 43.0, max_relative = 0.01);
        // fano -> 0 clamps to a single bin
        let delta = gaussian_number_distribution(42.7, 0.0, 100).unwrap();
        assert_eq!(delta.probs()[43], 1.0);
        // moments match request within 1% for fano >= 0.1
        for &f in &[0.1, 0.5, 1.0] {
            let g = gaussian_number_distribution(50.0, f, 300).unwrap();
            let m = g.moments().unwrap();
            assert_relative_eq!(m.mean, 50.0, max_relative = 0.01);
            assert_relative_eq!(m.fano, f, max_relative = 0.01);
        }
    }

    #[test]
    fn moments_edge_cases() {
        let fock = PhononDistribution::fock(5, 16).unwrap();
        let m = fock.moments().unwrap();
        assert_eq!((m.mean, m.variance, m.fano), (5.0, 0.0, 0.0));
        let t = thermal_distribution(13.0, 400).unwrap();
        assert_relative_eq!(t.moments().unwrap().fano, 14.0, max_relative = 1e-4);
        let vacuum = PhononDistribution::fock(0, 8).unwrap();
        assert!(matches!(vacuum.moments(), Err(Error::Statistics(_))));
    }

    #[test]
    fn wigner_known_values() {
        let inv_pi = 1.0 / std::f64::consts::PI;
        let spec = WignerGridSpec::square(6.0, 201);
        let vac = wigner_from_diagonal(&PhononDistribution::fock(0, 16).unwrap(), &spec).unwrap();
        assert_relative_eq!(vac.nearest_value(0.0, 0.0), inv_pi, epsilon = 1e-9);
        assert_relative_eq!(vac.integral(), 1.0, epsilon = 1e-3);
        let one = wigner_from_diagonal(&PhononDistribution::fock(1, 16).unwrap(), &spec).unwrap();
        assert_relative_eq!(one.nearest_value(0.0, 0.0), -inv_pi, epsilon = 1e-9);
    }

    #[test]
    fn wigner_coarse_grid_errors() {
        let t = thermal_distribution(5.0, 64).unwrap();
        assert!(matches!(
            wigner_from_diagonal(&t, &WignerGridSpec::square(2.0, 11)),
            Err(Error::Accuracy(_))
        ));
    }

    #[test]
    fn distribution_constructor_guards() {
        assert!(PhononDistribution::new(vec![1.0]).is_err());
        assert!(PhononDistribution::new(vec![0.5, -0.3]).is_err());
        let d = PhononDistribution::new(vec![2.0, 2.0]).unwrap();
        assert_eq!(d.probs(), &[0.5, 0.5]);
    }
}
