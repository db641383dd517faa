//! Analytic frequency shifts and transition rates: gate-charge dispersion,
//! quadratic coupling, phonon-number Stark shifts, quantum and classical
//! sideband amplitudes, ac-dither rates, and Lorentzian-filtered reduced
//! rates for the master equation.
//!
//! All frequencies and rates are ordinary (non-angular) MHz.

use crate::error::{Error, Result};
use crate::fockspace::{residual_overlap_matrix, FockOperatorMatrix};
use crate::special::{bessel_j, bessel_j_table};
use serde::{Deserialize, Serialize};

/// Physical constants of the coupled qubit-oscillator system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SystemParams {
    /// Qubit Josephson energy, E_J/h in MHz.
    pub e_j: f64,
    /// Qubit charging energy, E_c/h in MHz.
    pub e_c: f64,
    /// Mechanical frequency in MHz.
    pub omega_m: f64,
    /// Transverse qubit-mechanics coupling rate in MHz.
    pub g_m: f64,
    /// Residual longitudinal coupling rate in MHz.
    pub g_m_z: f64,
    /// Quadratic dispersive shift per phonon pair in MHz (supplied or derived).
    pub chi_m: f64,
    /// Bare qubit frequency at charge degeneracy in MHz.
    pub omega_q_bare: f64,
    /// Qubit energy decay rate in MHz.
    pub gamma_1: f64,
    /// Qubit decoherence rate in MHz.
    pub gamma_2_star: f64,
    /// Mechanical damping rate in MHz.
    pub gamma_m: f64,
    /// Bath occupancy (dimensionless).
    pub n_th: f64,
    /// Gate-charge offset standard deviation, units of 2e.
    pub sigma_c: f64,
    /// Qubit-cavity coupling in MHz.
    pub g_c: f64,
    /// Readout cavity frequency in MHz.
    pub omega_c: f64,
    /// ac-dither frequency in MHz.
    pub omega_dither: f64,
    /// Dither gate-charge amplitude, units of 2e.
    pub n_dither: f64,
}

impl SystemParams {
    /// Representative parameter set for the device this toolkit models.
    pub fn default_device() -> Self {
        let g_m = 22.0;
        let e_j = 3800.0;
        let e_c = 2900.0;
        let sigma_c = 0.0071;
        SystemParams {
            e_j,
            e_c,
            omega_m: 25.0,
            g_m,
            // Longitudinal coupling from an effective charge offset of one
            // standard deviation (small-angle mixing of the coupling axis).
            g_m_z: g_m * 8.0 * e_c * sigma_c / e_j,
            chi_m: 0.26,
            omega_q_bare: e_j,
            gamma_1: 0.612,
            gamma_2_star: 3.7,
            gamma_m: 9.4e-5,
            n_th: 13.0,
            sigma_c,
            g_c: 37.0,
            omega_c: 4760.0,
            omega_dither: 257.0,
            n_dither: 0.0501,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let nonneg = [
            ("e_j", self.e_j),
            ("e_c", self.e_c),
            ("omega_m", self.omega_m),
            ("g_m", self.g_m),
            ("g_m_z", self.g_m_z),
            ("chi_m", self.chi_m),
            ("omega_q_bare", self.omega_q_bare),
            ("gamma_1", self.gamma_1),
            ("gamma_2_star", self.gamma_2_star),
            ("gamma_m", self.gamma_m),
            ("n_th", self.n_th),
            ("sigma_c", self.sigma_c),
            ("g_c", self.g_c),
            ("omega_c", self.omega_c),
            ("omega_dither", self.omega_dither),
            ("n_dither", self.n_dither),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0) {
                return Err(Error::InvalidParams(format!("{name} must be >= 0, got {v}")));
            }
        }
        if self.omega_m >= 0.1 * self.omega_q_bare {
            return Err(Error::InvalidParams(format!(
                "omega_m/omega_q_bare = {:.3} violates the slow-oscillator regime (< 0.1)",
                self.omega_m / self.omega_q_bare
            )));
        }
        Ok(())
    }

    /// Single-manifold squeeze parameter r = chi_m / 2 omega_m.
    pub fn squeeze_parameter(&self) -> f64 {
        self.chi_m / (2.0 * self.omega_m)
    }

    /// Qubit-state-dependent displacement beta = -g_m_z / omega_m.
    pub fn residual_displacement(&self) -> f64 {
        -self.g_m_z / self.omega_m
    }

    /// Longitudinal coupling induced by a gate-charge offset (small-angle
    /// mixing): g_m * 8 E_c delta_ng / E_J.
    pub fn residual_coupling_for_offset(&self, delta_ng: f64) -> f64 {
        self.g_m * 8.0 * self.e_c * delta_ng / self.e_j
    }

    /// Phonon-number sensitivity xi = Gamma_2* / 2 chi_m, in phonons.
    pub fn phonon_sensitivity(&self) -> f64 {
        self.gamma_2_star / (2.0 * self.chi_m)
    }
}

impl Default for SystemParams {
    fn default() -> Self {
        SystemParams::default_device()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SidebandSide {
    Blue,
    Red,
}

/// One ac-dither sideband drive tone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DitherDriveParams {
    /// Drive frequency in MHz.
    pub omega_d: f64,
    /// Bare Rabi rate of the drive tone in MHz.
    pub omega_rabi: f64,
    pub side: SidebandSide,
    /// Phonon index of the resonant transition (real-valued; chirps sweep it).
    pub n_center: f64,
}

impl DitherDriveParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.omega_rabi >= 0.0) {
            return Err(Error::InvalidParams("omega_rabi must be >= 0".into()));
        }
        Ok(())
    }
}

/// Gate-charge dispersion of the qubit: sqrt(E_J^2 + (4E_c)^2 (1-2n_g)^2).
pub fn qubit_frequency(params: &SystemParams, n_g: f64) -> f64 {
    let detune = 4.0 * params.e_c * (1.0 - 2.0 * n_g);
    (params.e_j * params.e_j + detune * detune).sqrt()
}

/// Bare qubit frequency at a small charge offset from degeneracy:
/// sqrt(E_J^2 + (8 E_c delta_ng)^2).
pub fn bare_qubit_frequency_at_offset(params: &SystemParams, delta_ng: f64) -> f64 {
    let detune = 8.0 * params.e_c * delta_ng;
    (params.e_j * params.e_j + detune * detune).sqrt()
}

/// Quadratic dispersive shift chi_m = g_m^2 (1/(w_q - w_m) + 1/(w_q + w_m)),
/// Bloch-Siegert term included.
pub fn derive_chi(params: &SystemParams) -> Result<f64> {
    if params.omega_q_bare <= params.omega_m {
        return Err(Error::InvalidParams("derive_chi requires omega_q > omega_m".into()));
    }
    let delta = params.omega_q_bare - params.omega_m;
    let sigma = params.omega_q_bare + params.omega_m;
    Ok(params.g_m * params.g_m * (1.0 / delta + 1.0 / sigma))
}

/// Phonon-number-dependent qubit frequency (w_q^b + chi_m) + 2 chi_m n.
pub fn stark_shifted_qubit_frequency(params: &SystemParams, n: f64) -> f64 {
    params.omega_q_bare + params.chi_m * (1.0 + 2.0 * n)
}

/// |<n+l| D^dag(beta) S(-2r) D(-beta) |n>| with r and beta taken from the
/// system parameters. Builds the overlap operator on a space comfortably
/// larger than n + |l|; for sweeps, build `residual_overlap_matrix` once and
/// index it instead.
pub fn quantum_sideband_amplitude(params: &SystemParams, n: usize, l: i64) -> Result<f64> {
    let target = n as i64 + l;
    if target < 0 {
        return Ok(0.0);
    }
    let top = (target as usize).max(n);
    let n_max = (top + top / 4 + 24).max(16);
    let overlaps = residual_overlap_matrix(
        params.squeeze_parameter(),
        params.residual_displacement(),
        n_max,
    )?;
    Ok(overlaps.entry(target as usize, n).abs())
}

/// Drive-induced mean qubit shift at charge offset delta_ng and modulation
/// amplitude n_x: (4 E_c E_J)^2 n_x^2 / w_q^b(delta_ng)^3.
pub fn classical_stark_shift(params: &SystemParams, delta_ng: f64, n_x: f64) -> f64 {
    let wqb = bare_qubit_frequency_at_offset(params, delta_ng);
    let num = 4.0 * params.e_c * params.e_j;
    num * num * n_x * n_x / (wqb * wqb * wqb)
}

const BESSEL_ORDER_CUTOFF: i64 = 40;

/// Dimensionless transition amplitude of the l-th order sideband under
/// classical gate-charge modulation: the Jacobi-Anger double sum
/// sum_{2a+b=l} J_a(X) J_b(Y), truncated at |a|, |b| <= 40 (terms decay
/// super-exponentially beyond the O(1-10) arguments in play).
pub fn classical_sideband_amplitude(params: &SystemParams, l: i64, delta_ng: f64, n_x: f64) -> f64 {
    let wqb = bare_qubit_frequency_at_offset(params, delta_ng);
    let x_arg = classical_stark_shift(params, delta_ng, n_x) / (2.0 * params.omega_m);
    let y_arg = (8.0 * params.e_c).powi(2) * n_x * delta_ng / (params.omega_m * wqb);

    let ja = bessel_j_table(BESSEL_ORDER_CUTOFF as usize, x_arg);
    let jb = bessel_j_table(BESSEL_ORDER_CUTOFF as usize, y_arg);
    let fetch = |table: &[f64], order: i64| -> f64 {
        let idx = order.unsigned_abs() as usize;
        if idx >= table.len() {
            return 0.0;
        }
        let v = table[idx];
        if order < 0 && idx % 2 == 1 {
            -v
        } else {
            v
        }
    };

    let mut acc = 0.0;
    for a in -BESSEL_ORDER_CUTOFF..=BESSEL_ORDER_CUTOFF {
        let b = l - 2 * a;
        if b.abs() > BESSEL_ORDER_CUTOFF {
            continue;
        }
        acc += fetch(&ja, a) * fetch(&jb, b);
    }
    acc
}

/// Gate-charge modulation amplitude that Stark-shifts the qubit by the same
/// amount as n phonons: n + 1/2 = (4 E_c)^2 n_x^2 / (2 chi_m E_J).
pub fn phonon_modulation_map(params: &SystemParams, n: f64) -> f64 {
    (2.0 * params.chi_m * params.e_j * (n + 0.5)).sqrt() / (4.0 * params.e_c)
}

/// Inverse of `phonon_modulation_map`.
pub fn phonon_modulation_inverse(params: &SystemParams, n_x: f64) -> f64 {
    (4.0 * params.e_c).powi(2) * n_x * n_x / (2.0 * params.chi_m * params.e_j) - 0.5
}

/// Bare ac-dither sideband rate g_m Omega_R / (2 (w_d - w_q)) * J_1(8 E_c
/// n_dither / E_J). Errors when the drive sits inside the qubit linewidth.
pub fn dither_sideband_rate(params: &SystemParams, drive: &DitherDriveParams) -> Result<f64> {
    drive.validate()?;
    let detune = drive.omega_d - params.omega_q_bare;
    if detune.abs() < params.gamma_2_star {
        return Err(Error::Validity(format!(
            "dither drive at {:.1} MHz is resonant with the qubit (detuning {:.2} MHz)",
            drive.omega_d, detune
        )));
    }
    let dither_arg = 8.0 * params.e_c * params.n_dither / params.e_j;
    Ok(params.g_m * drive.omega_rabi / (2.0 * detune) * bessel_j(1, dither_arg))
}

/// Sideband transition frequencies activated by the dither for a state with
/// n phonons: blue at w_q^n + w_m -+ w_dither, red at w_q^n - w_m -+ w_dither.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DitherSidebandFrequencies {
    pub blue_lower: f64,
    pub blue_upper: f64,
    pub red_lower: f64,
    pub red_upper: f64,
}

pub fn dither_sideband_frequencies(params: &SystemParams, n: f64) -> DitherSidebandFrequencies {
    let wq_n = stark_shifted_qubit_frequency(params, n);
    DitherSidebandFrequencies {
        blue_lower: wq_n + params.omega_m - params.omega_dither,
        blue_upper: wq_n + params.omega_m + params.omega_dither,
        red_lower: wq_n - params.omega_m - params.omega_dither,
        red_upper: wq_n - params.omega_m + params.omega_dither,
    }
}

fn phonon_lorentzian(params: &SystemParams, n: f64, n_center: f64) -> f64 {
    let arg = 4.0 * params.chi_m * (n - n_center) / params.gamma_2_star;
    1.0 / (1.0 + arg * arg)
}

/// Reduced blue sideband rate of |g,n> <-> |e,n+1> for a drive centered on
/// phonon index n_b: 4 (n+1) Omega_B0^2 / Gamma_2* x Lorentzian.
pub fn reduced_blue_rate(params: &SystemParams, n: usize, n_b: f64, omega_b0: f64) -> Result<f64> {
    if params.gamma_2_star <= 0.0 {
        return Err(Error::InvalidParams("Gamma_2* must be positive".into()));
    }
    Ok(4.0 * (n as f64 + 1.0) * omega_b0 * omega_b0 / params.gamma_2_star
        * phonon_lorentzian(params, n as f64, n_b))
}

/// Reduced red sideband rate of |g,n> <-> |e,n-1>: prefactor 4n, vanishing
/// in the ground state.
pub fn reduced_red_rate(params: &SystemParams, n: usize, n_r: f64, omega_r0: f64) -> Result<f64> {
    if params.gamma_2_star <= 0.0 {
        return Err(Error::InvalidParams("Gamma_2* must be positive".into()));
    }
    Ok(4.0 * n as f64 * omega_r0 * omega_r0 / params.gamma_2_star
        * phonon_lorentzian(params, n as f64, n_r))
}

/// Cavity-filtered drive Rabi rate Omega_R(w) = 2 g_c epsilon / (w - w_c),
/// with w the absolute drive frequency in MHz.
pub fn cavity_filtered_rabi(params: &SystemParams, epsilon: f64, omega_abs: f64) -> f64 {
    2.0 * params.g_c * epsilon / (omega_abs - params.omega_c)
}

/// Reduced l-th order sideband rate of |g,n> <-> |e,n+l> for an off-resonant
/// drive at w_d: 4 Omega_R^2(w_d) |alpha_{n+l,n}|^2 / Gamma_2* x Lorentzian
/// with resonance at w_l(n) = w_q^n + l w_m. `overlaps` is the qubit-flip
/// overlap operator from `residual_overlap_matrix`.
pub fn reduced_order_l_rate(
    params: &SystemParams,
    overlaps: &FockOperatorMatrix,
    n: usize,
    l: i64,
    omega_d: f64,
    omega_rabi_at_drive: f64,
) -> Result<f64> {
    if params.gamma_2_star <= 0.0 {
        return Err(Error::InvalidParams("Gamma_2* must be positive".into()));
    }
    let target = n as i64 + l;
    if target < 0 {
        return Ok(0.0);
    }
    let target = target as usize;
    if target > overlaps.n_max() || n > overlaps.n_max() {
        return Err(Error::Truncation(format!(
            "overlap matrix (n_max = {}) cannot serve transition {n} -> {target}",
            overlaps.n_max()
        )));
    }
    let alpha_sq = overlaps.entry(target, n).powi(2);
    let omega_l = stark_shifted_qubit_frequency(params, n as f64) + l as f64 * params.omega_m;
    let detune = (omega_d - omega_l) / (params.gamma_2_star / 2.0);
    Ok(4.0 * omega_rabi_at_drive * omega_rabi_at_drive * alpha_sq / params.gamma_2_star
        / (1.0 + detune * detune))
}
