//! Forward model of qubit spectroscopy: saturation Lorentzians, skewed
//! Lorentzian fitting shapes, charge-noise-averaged spectra, PSF-map
//! construction, and the phonon-distribution convolution.
//!
//! Probe frequencies are stored relative to the bare qubit frequency at
//! charge degeneracy.

use crate::error::{Error, Result};
use crate::fockspace::PhononDistribution;
use crate::optim::{multi_start_nelder_mead, NmOptions};
use crate::rates::{
    bare_qubit_frequency_at_offset, cavity_filtered_rabi, classical_sideband_amplitude,
    classical_stark_shift, phonon_modulation_map, SystemParams,
};
use crate::special::gauss_hermite;
use ndarray::Array2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};

/// Qubit excitation probability sampled on a strictly increasing frequency
/// grid (MHz relative to the bare qubit frequency). Values live in
/// [0, 0.5], the saturation bound of incoherent spectroscopy.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    freqs: Vec<f64>,
    pe: Vec<f64>,
}

impl Spectrum {
    pub fn new(freqs: Vec<f64>, pe: Vec<f64>) -> Result<Self> {
        if freqs.len() != pe.len() {
            return Err(Error::Dimension(format!(
                "{} frequencies vs {} values",
                freqs.len(),
                pe.len()
            )));
        }
        if freqs.len() < 2 {
            return Err(Error::InvalidParams("spectrum needs at least two points".into()));
        }
        if freqs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParams("frequency grid must be strictly increasing".into()));
        }
        if let Some(bad) = pe.iter().find(|v| !(-1e-9..=0.5 + 1e-9).contains(*v)) {
            return Err(Error::InvalidParams(format!(
                "excitation probability {bad} outside [0, 0.5]"
            )));
        }
        Ok(Spectrum { freqs, pe })
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn pe(&self) -> &[f64] {
        &self.pe
    }

    pub fn len(&self) -> usize {
        self.freqs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.freqs.is_empty()
    }

    /// Two-column CSV (freq_mhz, pe), optionally preceded by `#` comment
    /// lines.
    pub fn write_csv<W: Write>(&self, mut w: W, comment: Option<&str>) -> Result<()> {
        if let Some(c) = comment {
            writeln!(w, "# {c}")?;
        }
        writeln!(w, "freq_mhz,pe")?;
        for (f, p) in self.freqs.iter().zip(&self.pe) {
            writeln!(w, "{f:.9e},{p:.9e}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut freqs = Vec::new();
        let mut pe = Vec::new();
        for (idx, line) in r.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') || t.starts_with("freq") {
                continue;
            }
            let mut parts = t.split(',');
            let parse = |s: Option<&str>| -> Result<f64> {
                s.ok_or_else(|| Error::InvalidParams(format!("malformed CSV at line {line_no}: missing column")))?
                    .trim()
                    .parse::<f64>()
                    .map_err(|e| Error::InvalidParams(format!("malformed CSV at line {line_no}: {e}")))
            };
            freqs.push(parse(parts.next())?);
            pe.push(parse(parts.next())?);
            if parts.next().is_some() {
                return Err(Error::InvalidParams(format!(
                    "malformed CSV at line {line_no}: expected two columns"
                )));
            }
        }
        Spectrum::new(freqs, pe)
    }
}

/// Matrix of per-Fock-state qubit spectra: row n holds P_e^{|n>}(w), the
/// forward kernel linking phonon distributions to measured spectra.
#[derive(Debug, Clone, PartialEq)]
pub struct PsfMap {
    freqs: Vec<f64>,
    rows: Array2<f64>,
}

impl PsfMap {
    pub fn new(freqs: Vec<f64>, rows: Array2<f64>) -> Result<Self> {
        if rows.ncols() != freqs.len() {
            return Err(Error::Dimension(format!(
                "{} columns vs {} frequencies",
                rows.ncols(),
                freqs.len()
            )));
        }
        if freqs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParams("frequency grid must be strictly increasing".into()));
        }
        if let Some(bad) = rows.iter().find(|v| !(-1e-9..=0.5 + 1e-9).contains(*v)) {
            return Err(Error::InvalidParams(format!("PSF entry {bad} outside [0, 0.5]")));
        }
        Ok(PsfMap { freqs, rows })
    }

    pub fn freqs(&self) -> &[f64] {
        &self.freqs
    }

    pub fn rows(&self) -> &Array2<f64> {
        &self.rows
    }

    pub fn n_rows(&self) -> usize {
        self.rows.nrows()
    }

    pub fn n_max(&self) -> usize {
        self.rows.nrows() - 1
    }

    /// Frequency of the dominant peak of row n.
    pub fn row_peak(&self, n: usize) -> f64 {
        let row = self.rows.row(n);
        let mut best = 0;
        for (j, v) in row.iter().enumerate() {
            if *v > row[best] {
                best = j;
            }
        }
        self.freqs[best]
    }

    /// Least-squares slope of row-peak frequency vs Fock number over rows
    /// 0..=top, the synthetic analogue of reading the Stark ladder off a
    /// measured map. Meaningful while the phonon-conserving peak dominates.
    pub fn stark_slope(&self, top: usize) -> f64 {
        let top = top.min(self.n_max());
        let peaks: Vec<f64> = (0..=top).map(|n| self.row_peak(n)).collect();
        let n_mean = top as f64 / 2.0;
        let cov: f64 = peaks.iter().enumerate().map(|(n, pk)| (n as f64 - n_mean) * pk).sum();
        let var: f64 = (0..=top).map(|n| (n as f64 - n_mean).powi(2)).sum();
        cov / var
    }

    /// Identity kernel on an arbitrary grid, for deconvolution fixed-point
    /// tests.
    pub fn identity(size: usize) -> Result<Self> {
        let freqs: Vec<f64> = (0..size).map(|i| i as f64).collect();
        let rows = Array2::eye(size) * 0.5;
        PsfMap::new(freqs, rows)
    }

    /// CSV layout: optional `#` comments, then the frequency grid as the
    /// first data row, then one row of P_e values per Fock state.
    pub fn write_csv<W: Write>(&self, mut w: W, comment: Option<&str>) -> Result<()> {
        if let Some(c) = comment {
            writeln!(w, "# {c}")?;
        }
        let fmt_row = |vals: &[f64]| -> String {
            vals.iter().map(|v| format!("{v:.9e}")).collect::<Vec<_>>().join(",")
        };
        writeln!(w, "{}", fmt_row(&self.freqs))?;
        for row in self.rows.rows() {
            writeln!(w, "{}", fmt_row(row.as_slice().unwrap()))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut freqs: Option<Vec<f64>> = None;
        let mut data: Vec<f64> = Vec::new();
        let mut n_rows = 0usize;
        for (idx, line) in r.lines().enumerate() {
            let line_no = idx + 1;
            let line = line?;
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let vals: Vec<f64> = t
                .split(',')
                .map(|s| {
                    s.trim().parse::<f64>().map_err(|e| {
                        Error::InvalidParams(format!("malformed CSV at line {line_no}: {e}"))
                    })
                })
                .collect::<Result<_>>()?;
            match &freqs {
                None => freqs = Some(vals),
                Some(f) => {
                    if vals.len() != f.len() {
                        return Err(Error::InvalidParams(format!(
                            "malformed CSV at line {line_no}: {} values, expected {}",
                            vals.len(),
                            f.len()
                        )));
                    }
                    data.extend_from_slice(&vals);
                    n_rows += 1;
                }
            }
        }
        let freqs = freqs.ok_or_else(|| Error::InvalidParams("empty PSF file".into()))?;
        if n_rows == 0 {
            return Err(Error::InvalidParams("PSF file has no data rows".into()));
        }
        let rows = Array2::from_shape_vec((n_rows, freqs.len()), data)
            .map_err(|e| Error::Dimension(e.to_string()))?;
        PsfMap::new(freqs, rows)
    }
}

/// Knobs of the synthetic spectrum model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumConfig {
    /// Sideband orders synthesized: |l| <= sideband_cutoff.
    pub sideband_cutoff: i64,
    /// Gauss-Hermite node count for the charge-noise average.
    pub gh_nodes: usize,
    /// Spectroscopic drive field strength (free scale; the default puts the
    /// carrier near the working point of the measurements this models).
    /// Large values push the multi-peak sum past the 1/2 saturation bound.
    pub epsilon: f64,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        SpectrumConfig { sideband_cutoff: 6, gh_nodes: 41, epsilon: 30.0 }
    }
}

/// Uniform frequency grid in MHz.
pub fn uniform_grid(min: f64, max: f64, points: usize) -> Vec<f64> {
    assert!(points >= 2 && max > min);
    (0..points)
        .map(|i| min + (max - min) * i as f64 / (points - 1) as f64)
        .collect()
}

/// Default probe grid: 601 points spanning [-3 w_m, +5 w_m] around the
/// Stark-shifted carrier of a state with the given mean occupation.
pub fn default_grid(params: &SystemParams, mean_n: f64) -> Vec<f64> {
    let center = params.chi_m * (1.0 + 2.0 * mean_n);
    uniform_grid(center - 3.0 * params.omega_m, center + 5.0 * params.omega_m, 601)
}

/// Saturation Lorentzian of incoherent two-level spectroscopy; peaks at
/// a^2/(2(1+a^2)) <= 1/2 on resonance.
fn saturation_lorentzian(detune: f64, a: f64, gamma: f64) -> f64 {
    let half = 0.5 * gamma;
    let num = a * half;
    0.5 * num * num / (detune * detune + half * half * (1.0 + a * a))
}

/// Qubit spectrum at a fixed gate-charge offset under classical modulation
/// of amplitude n_x: a sum of saturation Lorentzians, one per sideband
/// order, with cavity-filtered drive strength. Errors when the carrier
/// falls outside the grid (off-grid sidebands only contribute their tails,
/// as in a windowed measurement).
fn offset_spectrum_values(
    params: &SystemParams,
    delta_ng: f64,
    n_x: f64,
    freqs: &[f64],
    cfg: &SpectrumConfig,
) -> Vec<f64> {
    let offset_shift = bare_qubit_frequency_at_offset(params, delta_ng) - params.omega_q_bare;
    let carrier = offset_shift + classical_stark_shift(params, delta_ng, n_x);
    let cutoff = cfg.sideband_cutoff;
    let amp_factor = (2.0 / (params.gamma_1 * params.gamma_2_star)).sqrt();
    let peaks: Vec<(f64, f64)> = (-cutoff..=cutoff)
        .map(|l| {
            let center = carrier + l as f64 * params.omega_m;
            let amp = classical_sideband_amplitude(params, l, delta_ng, n_x);
            (center, amp)
        })
        .collect();

    freqs
        .iter()
        .map(|&w| {
            let rabi = cavity_filtered_rabi(params, cfg.epsilon, params.omega_q_bare + w).abs();
            peaks
                .iter()
                .map(|&(center, amp)| {
                    let a = rabi * amp.abs() * amp_factor;
                    saturation_lorentzian(w - center, a, params.gamma_2_star)
                })
                .sum()
        })
        .collect()
}

pub fn offset_spectrum(
    params: &SystemParams,
    delta_ng: f64,
    n_x: f64,
    freqs: &[f64],
    cfg: &SpectrumConfig,
) -> Result<Spectrum> {
    if freqs.len() < 2 {
        return Err(Error::InvalidParams("need at least two probe frequencies".into()));
    }
    let carrier = bare_qubit_frequency_at_offset(params, delta_ng) - params.omega_q_bare
        + classical_stark_shift(params, delta_ng, n_x);
    let (lo, hi) = (freqs[0], freqs[freqs.len() - 1]);
    if carrier < lo || carrier > hi {
        return Err(Error::Coverage(format!(
            "carrier at {carrier:.2} MHz outside grid [{lo:.2}, {hi:.2}]"
        )));
    }
    Spectrum::new(freqs.to_vec(), offset_spectrum_values(params, delta_ng, n_x, freqs, cfg))
}

/// Gauss-Hermite average of `offset_spectrum` over gate-charge offsets
/// drawn from N(0, sigma_c^2). Coverage is checked for the central carrier;
/// strongly offset components contribute their in-window tails, as in a
/// windowed measurement.
pub fn charge_averaged_spectrum(
    params: &SystemParams,
    n_x: f64,
    freqs: &[f64],
    cfg: &SpectrumConfig,
) -> Result<Spectrum> {
    if params.sigma_c == 0.0 {
        return offset_spectrum(params, 0.0, n_x, freqs, cfg);
    }
    let carrier = classical_stark_shift(params, 0.0, n_x);
    if carrier < freqs[0] || carrier > freqs[freqs.len() - 1] {
        return Err(Error::Coverage(format!("central carrier at {carrier:.2} MHz outside grid")));
    }
    let (nodes, weights) = gauss_hermite(cfg.gh_nodes);
    let norm = std::f64::consts::PI.sqrt();
    let mut acc = vec![0.0; freqs.len()];
    for (u, w) in nodes.iter().zip(&weights) {
        if w / norm < 1e-18 {
            continue;
        }
        let delta_ng = std::f64::consts::SQRT_2 * params.sigma_c * u;
        let vals = offset_spectrum_values(params, delta_ng, n_x, freqs, cfg);
        for (a, v) in acc.iter_mut().zip(&vals) {
            *a += w / norm * v;
        }
    }
    Spectrum::new(freqs.to_vec(), acc)
}

/// One peak of the skewed-Lorentzian fitting shape.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SkewedLorentzianParams {
    /// Peak center in MHz (relative frequency).
    pub center: f64,
    /// Dimensionless reduced drive amplitude.
    pub amplitude: f64,
    /// Linewidth in MHz.
    pub width: f64,
    /// Skew parameter, |skew| < 1; the width divisor is
    /// 1 + skew * sign(w - center).
    pub skew: f64,
}

impl SkewedLorentzianParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.width > 0.0) {
            return Err(Error::InvalidParams("peak width must be positive".into()));
        }
        if self.skew.abs() >= 1.0 {
            return Err(Error::InvalidParams("|skew| must be < 1".into()));
        }
        Ok(())
    }
}

/// Sum of skewed saturation Lorentzians on a grid.
pub fn skewed_lorentzian_eval(peaks: &[SkewedLorentzianParams], freqs: &[f64]) -> Result<Spectrum> {
    for p in peaks {
        p.validate()?;
    }
    let pe: Vec<f64> = freqs
        .iter()
        .map(|&w| {
            peaks
                .iter()
                .map(|p| {
                    let raw = w - p.center;
                    let stretched = raw / (1.0 + p.skew * raw.signum());
                    saturation_lorentzian(stretched, p.amplitude, p.width)
                })
                .sum()
        })
        .collect();
    Spectrum::new(freqs.to_vec(), pe)
}

/// Least-squares fit of a sum of skewed Lorentzians. `shared_skew` ties one
/// skew parameter across all peaks (the default reading); otherwise each
/// peak fits its own. Initialization comes from the caller's `init` guess.
pub fn fit_skewed_lorentzians(
    spectrum: &Spectrum,
    init: &[SkewedLorentzianParams],
    shared_skew: bool,
) -> Result<(Vec<SkewedLorentzianParams>, f64)> {
    if init.is_empty() {
        return Err(Error::InvalidParams("need at least one initial peak".into()));
    }
    let n_peaks = init.len();
    let pack = |peaks: &[SkewedLorentzianParams]| -> Vec<f64> {
        let mut x = Vec::with_capacity(3 * n_peaks + 1);
        for p in peaks {
            x.extend_from_slice(&[p.center, p.amplitude, p.width]);
        }
        if shared_skew {
            x.push(peaks[0].skew);
        } else {
            x.extend(peaks.iter().map(|p| p.skew));
        }
        x
    };
    let unpack = |x: &[f64]| -> Vec<SkewedLorentzianParams> {
        (0..n_peaks)
            .map(|k| SkewedLorentzianParams {
                center: x[3 * k],
                amplitude: x[3 * k + 1],
                width: x[3 * k + 2],
                skew: if shared_skew { x[3 * n_peaks] } else { x[3 * n_peaks + k] },
            })
            .collect()
    };

    let freqs = spectrum.freqs();
    let data = spectrum.pe();
    let objective = |x: &[f64]| -> f64 {
        let peaks = unpack(x);
        let mut rss = 0.0;
        for (j, &w) in freqs.iter().enumerate() {
            let model: f64 = peaks
                .iter()
                .map(|p| {
                    let raw = w - p.center;
                    let stretched = raw / (1.0 + p.skew * raw.signum());
                    saturation_lorentzian(stretched, p.amplitude, p.width)
                })
                .sum();
            let r = model - data[j];
            rss += r * r;
        }
        rss
    };

    let span = freqs[freqs.len() - 1] - freqs[0];
    let mut bounds = Vec::new();
    let mut scale = Vec::new();
    for p in init {
        bounds.push((freqs[0] - span, freqs[freqs.len() - 1] + span));
        bounds.push((0.0, 1e4));
        bounds.push((1e-4, 10.0 * span));
        scale.extend_from_slice(&[0.2 * p.width.max(0.1), 0.2 * (p.amplitude.abs() + 0.1), 0.2 * p.width.max(0.1)]);
    }
    let n_skews = if shared_skew { 1 } else { n_peaks };
    for _ in 0..n_skews {
        bounds.push((-0.95, 0.95));
        scale.push(0.05);
    }

    let x0 = pack(init);
    let mut starts = vec![x0.clone()];
    for shift in [0.7, 1.4] {
        let mut s = x0.clone();
        for (i, v) in s.iter_mut().enumerate() {
            *v += shift * scale[i];
        }
        starts.push(s);
    }
    let opts = NmOptions { max_iter: 6000 * (3 * n_peaks + n_skews), ..Default::default() };
    let result = multi_start_nelder_mead(objective, &starts, &scale, &bounds, &opts);
    if !result.fval.is_finite() {
        return Err(Error::Fit(format!("skewed-Lorentzian fit diverged, rss = {}", result.fval)));
    }
    Ok((unpack(&result.x), result.fval))
}

/// Synthetic PSF map: row n is the charge-noise-averaged spectrum at the
/// gate-charge modulation equivalent to n phonons. Rows are independent and
/// computed in parallel.
pub fn build_psf_map(
    params: &SystemParams,
    n_max: usize,
    freqs: &[f64],
    cfg: &SpectrumConfig,
) -> Result<PsfMap> {
    // Carrier coverage across the whole Stark ladder.
    for n in [0, n_max] {
        let carrier = params.chi_m * (1.0 + 2.0 * n as f64);
        if carrier < freqs[0] || carrier > freqs[freqs.len() - 1] {
            return Err(Error::Coverage(format!(
                "Stark-shifted carrier of row {n} at {carrier:.2} MHz outside grid"
            )));
        }
    }
    let spectra: Vec<Spectrum> = (0..=n_max)
        .into_par_iter()
        .map(|n| {
            let n_x = phonon_modulation_map(params, n as f64);
            charge_averaged_spectrum(params, n_x, freqs, cfg)
        })
        .collect::<Result<_>>()?;
    let mut rows = Array2::<f64>::zeros((n_max + 1, freqs.len()));
    for (n, s) in spectra.iter().enumerate() {
        for (j, v) in s.pe().iter().enumerate() {
            rows[[n, j]] = *v;
        }
    }
    PsfMap::new(freqs.to_vec(), rows)
}

/// P_e(w) = sum_n P(n) P_e^{|n>}(w): the PSF applied to a phonon
/// distribution.
pub fn dressed_spectrum(dist: &PhononDistribution, psf: &PsfMap) -> Result<Spectrum> {
    if dist.probs().len() != psf.n_rows() {
        return Err(Error::Dimension(format!(
            "distribution length {} vs {} PSF rows",
            dist.probs().len(),
            psf.n_rows()
        )));
    }
    let weights = ndarray::Array1::from(dist.probs().to_vec());
    let pe = psf.rows().t().dot(&weights);
    Spectrum::new(psf.freqs().to_vec(), pe.to_vec())
}
