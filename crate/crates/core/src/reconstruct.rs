//! Inverse problem and statistics: Richardson-Lucy deconvolution against a
//! PSF, constrained least-squares fits, bootstrap confidence intervals,
//! signal-dependent noise modeling, and the simulated-experiment Monte
//! Carlo that bounds the true Fano factor.

use crate::dynamics::{
    integrate, BlueDrive, ChirpSchedule, DecayChannel, IntegrationOptions, MasterState,
    RedDrive, SidebandProtocol,
};
use crate::error::{Error, Result};
use crate::fockspace::{
    gaussian_number_distribution, thermal_distribution, PhononDistribution,
};
use crate::optim::{multi_start_nelder_mead, NmOptions};
use crate::rates::SystemParams;
use crate::spectra::{dressed_spectrum, PsfMap, Spectrum};
use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// Measurement noise as a second-order polynomial in the mean signal:
/// sigma_P(s) = c0 + c1 s + c2 s^2, positive over s in [0, 0.5].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub poly_coeffs: [f64; 3],
}

impl NoiseModel {
    pub fn new(poly_coeffs: [f64; 3]) -> Result<Self> {
        let model = NoiseModel { poly_coeffs };
        for k in 0..=50 {
            let s = 0.01 * k as f64;
            if model.sigma(s) <= 0.0 {
                return Err(Error::InvalidParams(format!(
                    "noise model not positive at signal {s}"
                )));
            }
        }
        Ok(model)
    }

    pub fn sigma(&self, signal: f64) -> f64 {
        let [c0, c1, c2] = self.poly_coeffs;
        c0 + c1 * signal + c2 * signal * signal
    }
}

/// Generic fit outcome with named parameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitResult {
    /// (name, value) pairs; frequencies in MHz, occupations in phonons.
    pub parameters: Vec<(String, f64)>,
    pub residual_sum_of_squares: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl FitResult {
    pub fn get(&self, name: &str) -> Option<f64> {
        self.parameters.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub point: f64,
    pub lower: f64,
    pub upper: f64,
    pub confidence_level: f64,
    pub resamples: usize,
}

/// Richardson-Lucy outcome: the normalized distribution plus iteration
/// diagnostics.
#[derive(Debug, Clone)]
pub struct RlOutcome {
    pub distribution: PhononDistribution,
    pub iterations_run: usize,
    /// Poisson log-likelihood of the forward prediction, per iteration.
    pub likelihood_trace: Vec<f64>,
    /// False when the likelihood stopped improving before the iteration
    /// budget and the early-stop never triggered cleanly.
    pub monotone: bool,
}

/// Iteration controls for Richardson-Lucy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RlOptions {
    pub max_iterations: usize,
    /// Early stop when the relative likelihood gain drops below this.
    pub stop_rel_gain: f64,
}

impl Default for RlOptions {
    fn default() -> Self {
        // The kernel is ~2x wider than the narrow states it must resolve,
        // so the multiplicative updates need a few thousand rounds to
        // sharpen the second moment; the stop threshold keeps the budget
        // from spinning on converged runs.
        RlOptions { max_iterations: 4000, stop_rel_gain: 1e-12 }
    }
}

const RL_FLOOR: f64 = 1e-12;

/// Multiplicative Richardson-Lucy deconvolution of a spectrum against the
/// PSF kernel. Data must be nonnegative; the output is normalized. The
/// forward prediction is floored at 1e-12 to guard empty channels.
pub fn richardson_lucy(spectrum: &Spectrum, psf: &PsfMap, opts: &RlOptions) -> Result<RlOutcome> {
    if spectrum.len() != psf.freqs().len() {
        return Err(Error::Dimension(format!(
            "spectrum has {} points, PSF {} columns",
            spectrum.len(),
            psf.freqs().len()
        )));
    }
    if spectrum.pe().iter().any(|v| *v < 0.0) {
        return Err(Error::InvalidParams("spectrum must be nonnegative".into()));
    }
    let kernel = psf.rows();
    let n_states = kernel.nrows();
    let data = Array1::from(spectrum.pe().to_vec());
    // kernel column sensitivity K^T 1
    let sensitivity: Vec<f64> = (0..n_states)
        .map(|n| kernel.row(n).sum().max(RL_FLOOR))
        .collect();

    let mut estimate = Array1::from_elem(n_states, 1.0 / n_states as f64);
    let mut likelihood_trace = Vec::new();
    let mut monotone = true;
    let mut iterations_run = 0;

    for _ in 0..opts.max_iterations {
        iterations_run += 1;
        let forward = kernel.t().dot(&estimate).mapv(|v| v.max(RL_FLOOR));
        let likelihood: f64 = data
            .iter()
            .zip(forward.iter())
            .map(|(d, f)| d * f.ln() - f)
            .sum();
        if let Some(&prev) = likelihood_trace.last() {
            if likelihood + 1e-9 * likelihood.abs().max(1.0) < prev {
                monotone = false;
            }
            if likelihood - prev < opts.stop_rel_gain * prev.abs().max(1.0) {
                likelihood_trace.push(likelihood);
                break;
            }
        }
        likelihood_trace.push(likelihood);
        let ratio = &data / &forward;
        let correction = kernel.dot(&ratio);
        for n in 0..n_states {
            estimate[n] *= correction[n] / sensitivity[n];
        }
    }
    let distribution = PhononDistribution::new(estimate.to_vec())?;
    Ok(RlOutcome { distribution, iterations_run, likelihood_trace, monotone })
}

/// Dressed-spectrum model values with a rigid frequency shift of the
/// kernel, by linear interpolation of the summed spectrum.
fn shifted_model(dist: &PhononDistribution, psf: &PsfMap, shift: f64) -> Result<Vec<f64>> {
    let base = dressed_spectrum(dist, psf)?;
    let freqs = psf.freqs();
    let vals = base.pe();
    let interp = |w: f64| -> f64 {
        let x = w - shift;
        if x <= freqs[0] {
            return vals[0];
        }
        if x >= freqs[freqs.len() - 1] {
            return vals[vals.len() - 1];
        }
        let j = freqs.partition_point(|&f| f < x).max(1);
        let frac = (x - freqs[j - 1]) / (freqs[j] - freqs[j - 1]);
        vals[j - 1] + frac * (vals[j] - vals[j - 1])
    };
    Ok(freqs.iter().map(|&w| interp(w)).collect())
}

fn rss(model: &[f64], data: &[f64]) -> f64 {
    model.iter().zip(data).map(|(m, d)| (m - d) * (m - d)).sum()
}

/// Bounded-window options for the thermal fit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ThermalFitOptions {
    pub n_th_range: (f64, f64),
    /// Bare-qubit-frequency search window in MHz around the PSF's own
    /// reference.
    pub shift_range: (f64, f64),
}

impl Default for ThermalFitOptions {
    fn default() -> Self {
        ThermalFitOptions { n_th_range: (0.5, 80.0), shift_range: (-5.0, 5.0) }
    }
}

/// Least squares over (n_th, bare-frequency shift) of the dressed thermal
/// spectrum against the data; the shift moves the whole kernel rigidly.
pub fn fit_thermal(
    spectrum: &Spectrum,
    psf: &PsfMap,
    opts: &ThermalFitOptions,
) -> Result<FitResult> {
    if spectrum.len() != psf.freqs().len() {
        return Err(Error::Dimension("spectrum grid must match PSF columns".into()));
    }
    let n_max = psf.n_max();
    let data = spectrum.pe();
    let objective = |x: &[f64]| -> f64 {
        let (n_th, shift) = (x[0], x[1]);
        match thermal_distribution(n_th, n_max)
            .and_then(|d| shifted_model(&d, psf, shift))
        {
            Ok(model) => rss(&model, data),
            Err(_) => f64::INFINITY,
        }
    };
    let bounds = [opts.n_th_range, opts.shift_range];
    let mid = 0.5 * (opts.n_th_range.0 + opts.n_th_range.1);
    let starts = vec![
        vec![mid, 0.0],
        vec![0.5 * mid, 0.5 * opts.shift_range.1],
        vec![1.5 * mid, 0.5 * opts.shift_range.0],
    ];
    let nm = multi_start_nelder_mead(
        objective,
        &starts,
        &[0.2 * mid, 0.5],
        &bounds,
        &NmOptions { max_iter: 800, ..Default::default() },
    );
    Ok(FitResult {
        parameters: vec![("n_th".into(), nm.x[0]), ("omega_q_shift_mhz".into(), nm.x[1])],
        residual_sum_of_squares: nm.fval,
        converged: nm.converged,
        iterations: nm.iterations,
    })
}

/// One-dimensional least squares over the coherent displacement, with n_th
/// held at a previously fitted value.
pub fn fit_displaced_thermal(
    spectrum: &Spectrum,
    psf: &PsfMap,
    n_th: f64,
    shift: f64,
    n_disp_range: (f64, f64),
) -> Result<FitResult> {
    if spectrum.len() != psf.freqs().len() {
        return Err(Error::Dimension("spectrum grid must match PSF columns".into()));
    }
    let n_max = psf.n_max();
    let data = spectrum.pe();
    let objective = |x: &[f64]| -> f64 {
        match crate::fockspace::displaced_thermal_distribution(n_th, x[0], n_max)
            .and_then(|d| shifted_model(&d, psf, shift))
        {
            Ok(model) => rss(&model, data),
            Err(_) => f64::INFINITY,
        }
    };
    let mid = 0.5 * (n_disp_range.0 + n_disp_range.1);
    let starts = vec![vec![mid], vec![n_disp_range.0 + 0.1 * mid], vec![n_disp_range.1 - 0.1 * mid]];
    let nm = multi_start_nelder_mead(
        objective,
        &starts,
        &[0.2 * mid.max(1.0)],
        &[n_disp_range],
        &NmOptions { max_iter: 400, ..Default::default() },
    );
    Ok(FitResult {
        parameters: vec![("n_disp".into(), nm.x[0])],
        residual_sum_of_squares: nm.fval,
        converged: nm.converged,
        iterations: nm.iterations,
    })
}

/// Grid specification for the staged sideband-parameter fit.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct JointFitGrid {
    pub omega_b0: Vec<f64>,
    pub n_b0: Vec<f64>,
    pub omega_r0: Vec<f64>,
    /// Chirp rate in phonons/ms (known experimentally, not fitted).
    pub chirp_rate: f64,
    /// Detuning between the red and initial blue drive tones in MHz; the
    /// red center n_R follows from it and the fitted n_B(0), not from a
    /// fit.
    pub drive_detuning_mhz: f64,
    pub n_th: f64,
    pub dt: f64,
}

/// Red-drive center index from the frequency detuning between the red
/// drive and the initial blue drive (both on the lower dither sideband):
/// n_R = n_B(0) + (detuning + 2 w_m) / (2 chi_m).
pub fn derive_n_r(params: &SystemParams, n_b0: f64, drive_detuning_mhz: f64) -> f64 {
    n_b0 + (drive_detuning_mhz + 2.0 * params.omega_m) / (2.0 * params.chi_m)
}

fn simulate_distribution(
    params: &SystemParams,
    n_max: usize,
    n_th: f64,
    blue: Option<BlueDrive>,
    red: Option<RedDrive>,
    tau: f64,
    dt: f64,
) -> Result<PhononDistribution> {
    let decay = DecayChannel::from_params(params, n_max, false)?;
    let init = MasterState::ground_thermalized(&thermal_distribution(n_th, n_max)?);
    let protocol = SidebandProtocol { blue, red, spurious: None, duration: tau };
    let opts = IntegrationOptions { dt, sample_interval: 0.0 };
    Ok(integrate(&init, params, &protocol, &decay, &opts)?
        .final_state()
        .phonon_distribution()?)
}

/// Staged least-squares fit of the sideband drive parameters against
/// chirped-drive spectra: stage A fits (Omega_B0, n_B(0)) on blue-only
/// data over a simulation lookup grid; stage B holds those fixed and fits
/// Omega_R0 on both-drive data. Errors when a best-fit lands on the grid
/// boundary.
pub fn joint_fit_protocol(
    blue_only: &[(f64, Spectrum)],
    both_drives: &[(f64, Spectrum)],
    params: &SystemParams,
    psf: &PsfMap,
    grid: &JointFitGrid,
) -> Result<FitResult> {
    if blue_only.is_empty() || both_drives.is_empty() {
        return Err(Error::InvalidParams("joint fit needs spectra for both stages".into()));
    }
    let n_max = psf.n_max();

    // Stage A: blue-only chirps.
    let mut stage_a: Vec<(usize, usize, f64)> = Vec::new();
    let combos: Vec<(usize, usize)> = (0..grid.omega_b0.len())
        .flat_map(|i| (0..grid.n_b0.len()).map(move |j| (i, j)))
        .collect();
    let scores: Vec<Result<f64>> = combos
        .par_iter()
        .map(|&(i, j)| {
            let mut total = 0.0;
            for (tau, data) in blue_only {
                let chirp = ChirpSchedule::linear(grid.n_b0[j], grid.chirp_rate, *tau)?;
                let dist = simulate_distribution(
                    params,
                    n_max,
                    grid.n_th,
                    Some(BlueDrive { omega_b0: grid.omega_b0[i], chirp }),
                    None,
                    *tau,
                    grid.dt,
                )?;
                let model = dressed_spectrum(&dist, psf)?;
                total += rss(model.pe(), data.pe());
            }
            Ok(total)
        })
        .collect();
    for (&(i, j), score) in combos.iter().zip(scores) {
        stage_a.push((i, j, score?));
    }
    let &(bi, bj, best_a) = stage_a
        .iter()
        .min_by(|a, b| a.2.partial_cmp(&b.2).unwrap())
        .unwrap();
    if (bi == 0 || bi == grid.omega_b0.len() - 1 || bj == 0 || bj == grid.n_b0.len() - 1)
        && grid.omega_b0.len() > 2
        && grid.n_b0.len() > 2
    {
        return Err(Error::Fit(format!(
            "stage-A optimum on the grid boundary (omega_b0[{bi}], n_b0[{bj}]); widen the grid"
        )));
    }
    let omega_b0 = grid.omega_b0[bi];
    let n_b0 = grid.n_b0[bj];
    let n_r = derive_n_r(params, n_b0, grid.drive_detuning_mhz);

    // Stage B: both drives, red rate free.
    let scores_b: Vec<Result<f64>> = grid
        .omega_r0
        .par_iter()
        .map(|&omega_r0| {
            let mut total = 0.0;
            for (tau, data) in both_drives {
                let chirp = ChirpSchedule::linear(n_b0, grid.chirp_rate, *tau)?;
                let dist = simulate_distribution(
                    params,
                    n_max,
                    grid.n_th,
                    Some(BlueDrive { omega_b0, chirp }),
                    Some(RedDrive { omega_r0, n_r }),
                    *tau,
                    grid.dt,
                )?;
                let model = dressed_spectrum(&dist, psf)?;
                total += rss(model.pe(), data.pe());
            }
            Ok(total)
        })
        .collect();
    let mut best_b = (0usize, f64::INFINITY);
    for (k, score) in scores_b.into_iter().enumerate() {
        let s = score?;
        if s < best_b.1 {
            best_b = (k, s);
        }
    }
    if (best_b.0 == 0 || best_b.0 == grid.omega_r0.len() - 1) && grid.omega_r0.len() > 2 {
        return Err(Error::Fit("stage-B optimum on the grid boundary; widen the grid".into()));
    }

    Ok(FitResult {
        parameters: vec![
            ("omega_b0_mhz".into(), omega_b0),
            ("n_b0".into(), n_b0),
            ("omega_r0_mhz".into(), grid.omega_r0[best_b.0]),
            ("n_r".into(), n_r),
        ],
        residual_sum_of_squares: best_a + best_b.1,
        converged: true,
        iterations: stage_a.len() + grid.omega_r0.len(),
    })
}

/// Per-frequency standard deviation regressed on per-frequency mean with a
/// quadratic polynomial (plain least squares on the Vandermonde normal
/// equations).
pub fn fit_noise_model(traces: &Array2<f64>) -> Result<NoiseModel> {
    let n_traces = traces.nrows();
    if n_traces < 30 {
        return Err(Error::Statistics(format!(
            "noise model needs >= 30 traces, got {n_traces}"
        )));
    }
    let n_freq = traces.ncols();
    let mut means = Vec::with_capacity(n_freq);
    let mut sigmas = Vec::with_capacity(n_freq);
    for j in 0..n_freq {
        let col = traces.column(j);
        let mean = col.sum() / n_traces as f64;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (n_traces as f64 - 1.0);
        means.push(mean);
        sigmas.push(var.sqrt());
    }
    // normal equations for sigma = c0 + c1 m + c2 m^2
    let mut a = [[0.0_f64; 3]; 3];
    let mut b = [0.0_f64; 3];
    for (m, s) in means.iter().zip(&sigmas) {
        let basis = [1.0, *m, m * m];
        for r in 0..3 {
            for c in 0..3 {
                a[r][c] += basis[r] * basis[c];
            }
            b[r] += basis[r] * s;
        }
    }
    let coeffs = solve_3x3(a, b)
        .ok_or_else(|| Error::Statistics("degenerate noise regression".into()))?;
    NoiseModel::new(coeffs)
}

fn solve_3x3(mut a: [[f64; 3]; 3], mut b: [f64; 3]) -> Option<[f64; 3]> {
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().partial_cmp(&a[j][col].abs()).unwrap())?;
        if a[pivot][col].abs() < 1e-30 {
            return None;
        }
        a.swap(col, pivot);
        b.swap(col, pivot);
        for row in 0..3 {
            if row == col {
                continue;
            }
            let f = a[row][col] / a[col][col];
            for k in col..3 {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    Some([b[0] / a[0][0], b[1] / a[1][1], b[2] / a[2][2]])
}

/// Percentile bootstrap of an estimator over resampled-and-averaged trace
/// sets. Deterministic for a fixed seed.
pub fn bootstrap_ci<F>(
    traces: &Array2<f64>,
    estimator: F,
    resamples: usize,
    level: f64,
    seed: u64,
) -> Result<BootstrapCi>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let n_traces = traces.nrows();
    if n_traces < 2 {
        return Err(Error::Statistics("bootstrap needs at least two traces".into()));
    }
    if !(0.0 < level && level < 1.0) {
        return Err(Error::InvalidParams("confidence level must be in (0,1)".into()));
    }
    if resamples < 100 {
        return Err(Error::Statistics(format!(
            "resample count {resamples} too small for stable percentiles (need >= 100)"
        )));
    }
    let n_freq = traces.ncols();
    let full_mean: Vec<f64> =
        (0..n_freq).map(|j| traces.column(j).sum() / n_traces as f64).collect();
    let point = estimator(&full_mean)?;

    let estimates: Vec<Result<f64>> = (0..resamples)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k as u64 + 1);
            let mut acc = vec![0.0; n_freq];
            for _ in 0..n_traces {
                let pick = rng.gen_range(0..n_traces);
                for (a, v) in acc.iter_mut().zip(traces.row(pick)) {
                    *a += v;
                }
            }
            for a in acc.iter_mut() {
                *a /= n_traces as f64;
            }
            estimator(&acc)
        })
        .collect();
    let mut values = Vec::with_capacity(resamples);
    for e in estimates {
        values.push(e?);
    }
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let alpha = 0.5 * (1.0 - level);
    let pick = |q: f64| -> f64 {
        let idx = (q * (values.len() - 1) as f64).round() as usize;
        values[idx]
    };
    Ok(BootstrapCi {
        point,
        lower: pick(alpha).min(point),
        upper: pick(1.0 - alpha).max(point),
        confidence_level: level,
        resamples,
    })
}

/// Configuration of the Fano-factor bounding Monte Carlo.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FanoBoundConfig {
    /// Mean phonon number of the synthetic distributions.
    pub mean: f64,
    /// Grid of true Fano factors to simulate.
    pub f_true_grid: Vec<f64>,
    pub noise: NoiseModel,
    /// Simulated experiments per grid point.
    pub n_sims: usize,
    /// Averages folded into each simulated experiment.
    pub n_averages: usize,
    pub rl: RlOptions,
    pub seed: u64,
}

/// Histogram of extracted Fano factors per true value, binned at 0.01.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FanoBoundResult {
    pub f_true_grid: Vec<f64>,
    pub bin_width: f64,
    /// counts[i][k]: simulations at f_true_grid[i] whose F_extract fell in
    /// bin k (bin edges k*bin_width).
    pub counts: Vec<Vec<u32>>,
}

pub const FANO_BIN_WIDTH: f64 = 0.01;
const FANO_BIN_COUNT: usize = 400;

impl FanoBoundResult {
    /// Conditional CDF of F_true given F_extract in [lo, hi]: returns
    /// (f_true, cumulative probability) pairs over the simulated grid.
    pub fn conditional_cdf(&self, lo: f64, hi: f64) -> Result<Vec<(f64, f64)>> {
        let mut weights: Vec<(f64, u64)> = Vec::new();
        let mut total = 0u64;
        for (f_true, row) in self.f_true_grid.iter().zip(&self.counts) {
            let mut w = 0u64;
            for (k, c) in row.iter().enumerate() {
                let center = (k as f64 + 0.5) * self.bin_width;
                if center >= lo && center <= hi {
                    w += *c as u64;
                }
            }
            weights.push((*f_true, w));
            total += w;
        }
        if total == 0 {
            return Err(Error::Statistics(format!(
                "no simulations landed in the F_extract window [{lo}, {hi}]"
            )));
        }
        let mut acc = 0u64;
        Ok(weights
            .into_iter()
            .map(|(f, w)| {
                acc += w;
                (f, acc as f64 / total as f64)
            })
            .collect())
    }

    /// Smallest grid value whose conditional CDF reaches the given level.
    pub fn upper_bound(&self, lo: f64, hi: f64, level: f64) -> Result<f64> {
        let cdf = self.conditional_cdf(lo, hi)?;
        cdf.iter()
            .find(|(_, c)| *c >= level)
            .map(|(f, _)| *f)
            .ok_or_else(|| Error::Statistics("conditional CDF never reaches the level".into()))
    }
}

/// Simulated-experiment Monte Carlo: synthesize a Gaussian number
/// distribution per F_true, forward-convolve, draw the n_averages-fold
/// averaged signal noise (sampled exactly as N(signal, sigma^2/n)), clamp
/// into the physical window, reconstruct, and bin the extracted Fano
/// factor. Per-task RNG streams split deterministically from the seed.
pub fn fano_bound_mc(cfg: &FanoBoundConfig, psf: &PsfMap) -> Result<FanoBoundResult> {
    if cfg.f_true_grid.is_empty() || cfg.n_sims == 0 || cfg.n_averages == 0 {
        return Err(Error::InvalidParams("empty Fano-bound configuration".into()));
    }
    let n_max = psf.n_max();
    let freqs = psf.freqs().to_vec();
    let tasks: Vec<(usize, usize)> = (0..cfg.f_true_grid.len())
        .flat_map(|i| (0..cfg.n_sims).map(move |s| (i, s)))
        .collect();

    let extracted: Vec<Result<(usize, f64)>> = tasks
        .par_iter()
        .map(|&(i, s)| {
            let f_true = cfg.f_true_grid[i];
            let truth = gaussian_number_distribution(cfg.mean, f_true, n_max)?;
            let clean = dressed_spectrum(&truth, psf)?;
            let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
            rng.set_stream((i * cfg.n_sims + s) as u64);
            let sqrt_n = (cfg.n_averages as f64).sqrt();
            let noisy: Vec<f64> = clean
                .pe()
                .iter()
                .map(|&v| {
                    let sigma = cfg.noise.sigma(v) / sqrt_n;
                    let draw = v + sigma * Normal::new(0.0, 1.0).unwrap().sample(&mut rng);
                    draw.clamp(0.0, 0.5)
                })
                .collect();
            let spectrum = Spectrum::new(freqs.clone(), noisy)?;
            let outcome = richardson_lucy(&spectrum, psf, &cfg.rl)?;
            Ok((i, outcome.distribution.moments()?.fano))
        })
        .collect();

    let mut counts = vec![vec![0u32; FANO_BIN_COUNT]; cfg.f_true_grid.len()];
    for e in extracted {
        let (i, fano) = e?;
        let bin = ((fano / FANO_BIN_WIDTH).floor() as usize).min(FANO_BIN_COUNT - 1);
        counts[i][bin] += 1;
    }
    Ok(FanoBoundResult { f_true_grid: cfg.f_true_grid.clone(), bin_width: FANO_BIN_WIDTH, counts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::Array2;

    #[test]
    fn rl_identity_kernel_fixed_point() {
        let psf = PsfMap::identity(12).unwrap();
        let mut pe = vec![0.0; 12];
        pe[3] = 0.3;
        pe[4] = 0.2;
        pe[7] = 0.1;
        let spectrum = Spectrum::new(psf.freqs().to_vec(), pe.clone()).unwrap();
        for iters in [1usize, 5, 50] {
            let opts = RlOptions { max_iterations: iters, stop_rel_gain: 0.0 };
            let out = richardson_lucy(&spectrum, &psf, &opts).unwrap();
            let total: f64 = pe.iter().sum();
            for (p, d) in out.distribution.probs().iter().zip(&pe) {
                assert_relative_eq!(p, &(d / total), epsilon = 1e-9);
            }
        }
    }

    #[test]
    fn rl_likelihood_monotone_and_permutation_equivariant() {
        // small synthetic kernel, off-diagonal mixing
        let n = 16;
        let freqs: Vec<f64> = (0..n).map(|i| i as f64).collect();
        let mut rows = Array2::<f64>::zeros((n, n));
        for i in 0..n {
            for j in 0..n {
                let d = (i as f64 - j as f64).abs();
                rows[[i, j]] = 0.4 * (-0.5 * d * d / 4.0).exp();
            }
        }
        let psf = PsfMap::new(freqs.clone(), rows.clone()).unwrap();
        let truth: Vec<f64> = (0..n).map(|i| ((i as f64) - 8.0).powi(2) * 0.01 + 0.01).collect();
        let data: Vec<f64> = (0..n)
            .map(|j| (0..n).map(|i| truth[i] * rows[[i, j]]).sum::<f64>() / 10.0)
            .collect();
        let spectrum = Spectrum::new(freqs.clone(), data.clone()).unwrap();
        let out =
            richardson_lucy(&spectrum, &psf, &RlOptions { max_iterations: 200, stop_rel_gain: 0.0 })
                .unwrap();
        assert!(out.monotone, "likelihood not monotone");
        for w in out.likelihood_trace.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0));
        }

        // permuting columns of data and kernel identically changes nothing
        let perm: Vec<usize> = (0..n).rev().collect();
        let mut rows_p = Array2::<f64>::zeros((n, n));
        let mut data_p = vec![0.0; n];
        for (jp, &j) in perm.iter().enumerate() {
            data_p[jp] = data[j];
            for i in 0..n {
                rows_p[[i, jp]] = rows[[i, j]];
            }
        }
        let psf_p = PsfMap::new(freqs.clone(), rows_p).unwrap();
        let spectrum_p = Spectrum::new(freqs, data_p).unwrap();
        let out_p =
            richardson_lucy(&spectrum_p, &psf_p, &RlOptions { max_iterations: 200, stop_rel_gain: 0.0 })
                .unwrap();
        for (a, b) in out.distribution.probs().iter().zip(out_p.distribution.probs()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn noise_model_regression() {
        use rand::SeedableRng;
        use rand_distr::Distribution;
        let n_traces = 916;
        let n_freq = 64;
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // heteroscedastic synthetic: sigma(s) = 0.01 + 0.05 s
        let signal: Vec<f64> = (0..n_freq).map(|j| 0.4 * (j as f64) / n_freq as f64).collect();
        let mut traces = Array2::<f64>::zeros((n_traces, n_freq));
        for r in 0..n_traces {
            for (j, s) in signal.iter().enumerate() {
                let sigma = 0.01 + 0.05 * s;
                traces[[r, j]] = s + sigma * Normal::new(0.0, 1.0).unwrap().sample(&mut rng);
            }
        }
        let model = fit_noise_model(&traces).unwrap();
        assert!((model.poly_coeffs[0] - 0.01).abs() < 0.001, "{:?}", model.poly_coeffs);
        assert!((model.poly_coeffs[1] - 0.05).abs() < 0.005, "{:?}", model.poly_coeffs);
        assert!(model.poly_coeffs[2].abs() < 0.02, "{:?}", model.poly_coeffs);

        // constant-noise synthetic: slope and curvature vanish
        let mut flat = Array2::<f64>::zeros((400, n_freq));
        for r in 0..400 {
            for (j, s) in signal.iter().enumerate() {
                flat[[r, j]] = s + 0.02 * Normal::new(0.0, 1.0).unwrap().sample(&mut rng);
            }
        }
        let model = fit_noise_model(&flat).unwrap();
        assert!(model.poly_coeffs[1].abs() < 0.01);
        assert!(model.poly_coeffs[2].abs() < 0.03);
        assert!(fit_noise_model(&Array2::zeros((10, 4))).is_err());
    }

    #[test]
    fn bootstrap_determinism_and_degenerate_traces() {
        let mut traces = Array2::<f64>::zeros((40, 8));
        for r in 0..40 {
            for c in 0..8 {
                traces[[r, c]] = 0.25; // zero variance
            }
        }
        let mean_est = |avg: &[f64]| -> Result<f64> {
            Ok(avg.iter().sum::<f64>() / avg.len() as f64)
        };
        let ci = bootstrap_ci(&traces, mean_est, 200, 0.9, 5).unwrap();
        assert_eq!(ci.lower, ci.point);
        assert_eq!(ci.upper, ci.point);
        let again = bootstrap_ci(&traces, mean_est, 200, 0.9, 5).unwrap();
        assert_eq!(ci.point, again.point);
        assert!(bootstrap_ci(&traces, mean_est, 50, 0.9, 5).is_err());
    }

    #[test]
    fn bootstrap_coverage() {
        use rand_distr::Distribution;
        // 90% CI should cover the truth in roughly 90% of meta-trials.
        let truth = 0.3;
        let n_traces = 60;
        let n_freq = 4;
        let meta_trials = 500;
        let mut covered = 0;
        for trial in 0..meta_trials {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
            let mut traces = Array2::<f64>::zeros((n_traces, n_freq));
            for r in 0..n_traces {
                for c in 0..n_freq {
                    traces[[r, c]] =
                        truth + 0.05 * Normal::new(0.0, 1.0).unwrap().sample(&mut rng);
                }
            }
            let est = |avg: &[f64]| -> Result<f64> {
                Ok(avg.iter().sum::<f64>() / avg.len() as f64)
            };
            let ci = bootstrap_ci(&traces, est, 300, 0.9, trial).unwrap();
            if ci.lower <= truth && truth <= ci.upper {
                covered += 1;
            }
        }
        let rate = covered as f64 / meta_trials as f64;
        assert!((rate - 0.9).abs() < 0.04, "coverage {rate}");
    }

    #[test]
    fn conditional_cdf_bookkeeping() {
        let result = FanoBoundResult {
            f_true_grid: vec![0.1, 0.2, 0.3],
            bin_width: FANO_BIN_WIDTH,
            counts: {
                let mut c = vec![vec![0u32; FANO_BIN_COUNT]; 3];
                c[0][20] = 10; // F_extract ~ 0.205
                c[1][20] = 30;
                c[2][25] = 60; // outside the window below
                c
            },
        };
        let cdf = result.conditional_cdf(0.20, 0.21).unwrap();
        assert_relative_eq!(cdf[0].1, 0.25);
        assert_relative_eq!(cdf[1].1, 1.0);
        assert_relative_eq!(cdf[2].1, 1.0);
        assert_eq!(result.upper_bound(0.20, 0.21, 0.95).unwrap(), 0.2);
        assert!(result.conditional_cdf(0.38, 0.39).is_err());
    }

    #[test]
    fn derive_n_r_roundtrip() {
        let p = SystemParams::default_device();
        // detuning that corresponds to n_R = 44 from n_B(0) = -1.3
        let detuning = 2.0 * p.chi_m * (44.0 - (-1.3)) - 2.0 * p.omega_m;
        assert_relative_eq!(derive_n_r(&p, -1.3, detuning), 44.0, epsilon = 1e-9);
    }
}
