//! Command implementations: each builds its inputs from the validated
//! config, runs the pipeline, and writes plot-ready CSV/JSON artifacts.

use crate::config::{echo_config, provenance_line, ExperimentConfig, ReconstructionMode};
use crate::CliError;
use log::info;
use ndarray::Array2;
use qem_core::dynamics::{
    integrate, BlueDrive, ChirpSchedule, DecayChannel, MasterState, RedDrive,
    SidebandProtocol, SpuriousConfig, Trajectory,
};
use qem_core::fockspace::thermal_distribution;
use qem_core::rates::{
    derive_chi, dither_sideband_frequencies, dither_sideband_rate, phonon_modulation_map,
    DitherDriveParams, SidebandSide,
};
use qem_core::reconstruct::{
    bootstrap_ci, fano_bound_mc, fit_displaced_thermal, fit_thermal,
    joint_fit_protocol, richardson_lucy, FanoBoundConfig, JointFitGrid, NoiseModel,
    ThermalFitOptions,
};
use qem_core::spectra::{build_psf_map, dressed_spectrum, uniform_grid, PsfMap, Spectrum};
use qem_core::PhononDistribution;
use serde_json::json;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

fn compute<T>(r: qem_core::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| CliError::Compute(e.to_string()))
}

fn write_file(path: &Path, body: &str) -> Result<(), CliError> {
    std::fs::write(path, body)
        .map_err(|e| CliError::Compute(format!("cannot write {}: {e}", path.display())))
}

fn outdir_for(config: &ExperimentConfig, out_flag: Option<&Path>) -> Result<PathBuf, CliError> {
    let dir = out_flag
        .map(|p| p.to_path_buf())
        .or_else(|| config.output.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    echo_config(config, &dir)
        .map_err(|e| CliError::Input(format!("cannot prepare output dir {}: {e}", dir.display())))?;
    Ok(dir)
}

fn grid_freqs(config: &ExperimentConfig) -> Vec<f64> {
    uniform_grid(config.grid.freq_min, config.grid.freq_max, config.grid.freq_points)
}

fn synthetic_psf(config: &ExperimentConfig) -> Result<PsfMap, CliError> {
    let freqs = grid_freqs(config);
    info!("building synthetic kernel: {} rows x {} frequencies", config.grid.n_max + 1, freqs.len());
    compute(build_psf_map(&config.system, config.grid.n_max, &freqs, &config.spectrum))
}

fn load_or_build_psf(config: &ExperimentConfig, psf_file: Option<&Path>) -> Result<PsfMap, CliError> {
    match psf_file {
        Some(path) => {
            let file = File::open(path)
                .map_err(|e| CliError::Input(format!("cannot open PSF {}: {e}", path.display())))?;
            PsfMap::read_csv(BufReader::new(file)).map_err(|e| CliError::Input(e.to_string()))
        }
        None => synthetic_psf(config),
    }
}

fn read_spectrum(path: &Path) -> Result<Spectrum, CliError> {
    let file = File::open(path)
        .map_err(|e| CliError::Input(format!("cannot open spectrum {}: {e}", path.display())))?;
    Spectrum::read_csv(BufReader::new(file)).map_err(|e| CliError::Input(e.to_string()))
}

fn write_distribution(
    path: &Path,
    dist: &PhononDistribution,
    header: &str,
) -> Result<(), CliError> {
    let mut body = format!("# {header}\nn,p\n");
    for (n, p) in dist.probs().iter().enumerate() {
        body.push_str(&format!("{n},{p:.9e}\n"));
    }
    write_file(path, &body)
}

/// Builds (or passes through) the PSF kernel, writes it as CSV, and prints
/// a short summary including the Stark-ladder slope check.
pub fn cmd_psf(config: &ExperimentConfig, out_flag: Option<&Path>) -> Result<(), CliError> {
    let outdir = outdir_for(config, out_flag)?;
    let psf = if let Some(size) = config.grid.identity_size {
        compute(PsfMap::identity(size))?
    } else {
        synthetic_psf(config)?
    };
    let path = outdir.join("psf.csv");
    let file = File::create(&path)
        .map_err(|e| CliError::Compute(format!("cannot create {}: {e}", path.display())))?;
    compute(psf.write_csv(BufWriter::new(file), Some(&provenance_line(config, "psf"))))?;

    let slope_top = psf.n_max().min(110);
    let slope = psf.stark_slope(slope_top);
    let expected = 2.0 * config.system.chi_m;
    println!(
        "psf: {} rows x {} freqs spanning [{:.1}, {:.1}] MHz",
        psf.n_rows(),
        psf.freqs().len(),
        psf.freqs()[0],
        psf.freqs()[psf.freqs().len() - 1]
    );
    if config.grid.identity_size.is_none() {
        println!(
            "psf: Stark slope over rows 0..={slope_top}: {slope:.4} MHz/phonon (2 chi_m = {expected:.4})"
        );
    }
    println!("psf: wrote {}", path.display());
    Ok(())
}

fn protocol_from_config(config: &ExperimentConfig) -> Result<(SidebandProtocol, f64), CliError> {
    let pc = config
        .protocol
        .as_ref()
        .ok_or_else(|| CliError::Input("config needs a protocol block".into()))?;
    let blue = match &pc.blue {
        Some(b) => Some(BlueDrive {
            omega_b0: b.omega_b0,
            chirp: compute(ChirpSchedule::linear(
                b.chirp.n_start,
                b.chirp.rate_per_ms,
                b.chirp.t_end_ms,
            ))?,
        }),
        None => None,
    };
    let red = pc.red.as_ref().map(|r| RedDrive { omega_r0: r.omega_r0, n_r: r.n_r });
    let protocol = SidebandProtocol {
        blue,
        red,
        spurious: pc.spurious_l_max.map(|l_max| SpuriousConfig { l_max }),
        duration: pc.duration_ms,
    };
    compute(protocol.validate())?;
    Ok((protocol, pc.n_th))
}

fn write_trajectory(path: &Path, traj: &Trajectory, header: &str) -> Result<(), CliError> {
    let mut body = format!("# {header}\nt_ms,n,pg,pe\n");
    for s in &traj.samples {
        for n in 0..=s.n_max() {
            body.push_str(&format!("{:.6},{n},{:.9e},{:.9e}\n", s.t, s.pg[n], s.pe[n]));
        }
    }
    write_file(path, &body)
}

/// Runs the configured sideband protocol; emits the sampled trajectory,
/// the final phonon distribution, and optionally the dressed spectrum.
pub fn cmd_simulate(config: &ExperimentConfig, out_flag: Option<&Path>) -> Result<(), CliError> {
    let outdir = outdir_for(config, out_flag)?;
    let (protocol, n_th) = protocol_from_config(config)?;
    let pc = config.protocol.as_ref().unwrap();
    let n_max = config.grid.n_max;
    let mut params = config.system.clone();
    params.n_th = n_th;
    let decay = compute(DecayChannel::from_params(&params, n_max, pc.residual_branching))?;
    let init = MasterState::ground_thermalized(&compute(thermal_distribution(n_th, n_max))?);
    info!(
        "integrating {} ms at dt = {} ms over {} Fock levels",
        protocol.duration, pc.integration.dt, n_max + 1
    );
    let traj = integrate(&init, &params, &protocol, &decay, &pc.integration).map_err(|e| {
        CliError::Compute(format!(
            "{e}\nhint: reduce integration.dt, raise grid.n_max, or shorten the protocol"
        ))
    })?;

    let header = provenance_line(config, "simulate");
    write_trajectory(&outdir.join("trajectory.csv"), &traj, &header)?;
    let final_dist = compute(traj.final_state().phonon_distribution())?;
    write_distribution(&outdir.join("final_distribution.csv"), &final_dist, &header)?;
    let moments = compute(final_dist.moments())?;
    let report = json!({
        "mean": moments.mean,
        "variance": moments.variance,
        "fano": moments.fano,
        "clipped_mass": traj.clipped_mass,
        "max_boundary_mass": traj.max_boundary_mass,
        "samples": traj.samples.len(),
    });
    write_file(&outdir.join("simulation_report.json"), &serde_json::to_string_pretty(&report).unwrap())?;

    if pc.emit_spectrum {
        let psf = synthetic_psf(config)?;
        let padded = if final_dist.probs().len() < psf.n_rows() {
            let mut probs = final_dist.probs().to_vec();
            probs.resize(psf.n_rows(), 0.0);
            compute(PhononDistribution::new(probs))?
        } else {
            final_dist.clone()
        };
        let spectrum = compute(dressed_spectrum(&padded, &psf))?;
        let path = outdir.join("spectrum.csv");
        let file = File::create(&path)
            .map_err(|e| CliError::Compute(format!("cannot create {}: {e}", path.display())))?;
        compute(spectrum.write_csv(BufWriter::new(file), Some(&header)))?;
    }
    println!(
        "simulate: final mean {:.2} phonons, Fano {:.3}; outputs in {}",
        moments.mean,
        moments.fano,
        outdir.display()
    );
    Ok(())
}

fn read_trace_matrix(path: &Path) -> Result<(Vec<f64>, Array2<f64>), CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read traces {}: {e}", path.display())))?;
    let mut freqs: Option<Vec<f64>> = None;
    let mut rows: Vec<f64> = Vec::new();
    let mut n_rows = 0usize;
    for (idx, line) in text.lines().enumerate() {
        let t = line.trim();
        if t.is_empty() || t.starts_with('#') {
            continue;
        }
        let vals: Result<Vec<f64>, _> = t.split(',').map(|s| s.trim().parse::<f64>()).collect();
        let vals = vals.map_err(|e| {
            CliError::Input(format!("malformed traces CSV at line {}: {e}", idx + 1))
        })?;
        match &freqs {
            None => freqs = Some(vals),
            Some(f) => {
                if vals.len() != f.len() {
                    return Err(CliError::Input(format!(
                        "malformed traces CSV at line {}: {} values, expected {}",
                        idx + 1,
                        vals.len(),
                        f.len()
                    )));
                }
                rows.extend_from_slice(&vals);
                n_rows += 1;
            }
        }
    }
    let freqs = freqs.ok_or_else(|| CliError::Input("empty traces file".into()))?;
    if n_rows == 0 {
        return Err(CliError::Input("traces file has a header but no rows".into()));
    }
    let matrix = Array2::from_shape_vec((n_rows, freqs.len()), rows)
        .map_err(|e| CliError::Input(e.to_string()))?;
    Ok((freqs, matrix))
}

/// Deconvolution and/or parametric fits of a measured spectrum.
pub fn cmd_reconstruct(
    config: &ExperimentConfig,
    spectrum_file: Option<&Path>,
    out_flag: Option<&Path>,
) -> Result<(), CliError> {
    let outdir = outdir_for(config, out_flag)?;
    let rc = config.reconstruction.clone().unwrap_or_default();
    let header = provenance_line(config, "reconstruct");

    if rc.mode == ReconstructionMode::JointFit {
        let psf = load_or_build_psf(config, rc.psf_file.as_deref())?;
        let jf = &rc.joint_fit;
        let load_set = |files: &[crate::config::TauFile]| -> Result<Vec<(f64, Spectrum)>, CliError> {
            files
                .iter()
                .map(|tf| Ok((tf.tau_ms, read_spectrum(&tf.file)?)))
                .collect()
        };
        let blue_only = load_set(&jf.blue_only)?;
        let both = load_set(&jf.both_drives)?;
        let grid = JointFitGrid {
            omega_b0: jf.omega_b0_grid.clone(),
            n_b0: jf.n_b0_grid.clone(),
            omega_r0: jf.omega_r0_grid.clone(),
            chirp_rate: jf.chirp_rate,
            drive_detuning_mhz: jf.drive_detuning_mhz,
            n_th: jf.n_th,
            dt: jf.dt_ms,
        };
        let fit = compute(joint_fit_protocol(&blue_only, &both, &config.system, &psf, &grid))?;
        write_file(
            &outdir.join("fit_report.json"),
            &serde_json::to_string_pretty(&fit).unwrap(),
        )?;
        println!("reconstruct: joint fit {:?}", fit.parameters);
        return Ok(());
    }

    let spectrum_path = spectrum_file
        .ok_or_else(|| CliError::Input("reconstruct needs --spectrum <file.csv>".into()))?;
    let spectrum = read_spectrum(spectrum_path)?;
    let psf = load_or_build_psf(config, rc.psf_file.as_deref())?;
    if spectrum.len() != psf.freqs().len() {
        return Err(CliError::Input(format!(
            "spectrum has {} points but the kernel has {} frequency columns",
            spectrum.len(),
            psf.freqs().len()
        )));
    }

    let mut report = serde_json::Map::new();
    match rc.mode {
        ReconstructionMode::RichardsonLucy => {
            let outcome = compute(richardson_lucy(&spectrum, &psf, &rc.rl))?;
            write_distribution(&outdir.join("distribution.csv"), &outcome.distribution, &header)?;
            let m = compute(outcome.distribution.moments())?;
            report.insert("mode".into(), json!("richardson_lucy"));
            report.insert("iterations_run".into(), json!(outcome.iterations_run));
            report.insert("likelihood_monotone".into(), json!(outcome.monotone));
            report.insert("mean".into(), json!(m.mean));
            report.insert("variance".into(), json!(m.variance));
            report.insert("fano".into(), json!(m.fano));
            println!(
                "reconstruct: mean {:.2} phonons, Fano {:.3} after {} iterations",
                m.mean, m.fano, outcome.iterations_run
            );
        }
        ReconstructionMode::ThermalFit => {
            let opts = ThermalFitOptions { n_th_range: rc.n_th_range, shift_range: rc.shift_range };
            let fit = compute(fit_thermal(&spectrum, &psf, &opts))?;
            let n_th = fit.get("n_th").unwrap();
            let dist = compute(thermal_distribution(n_th, psf.n_max()))?;
            write_distribution(&outdir.join("distribution.csv"), &dist, &header)?;
            report.insert("mode".into(), json!("thermal_fit"));
            report.insert("fit".into(), serde_json::to_value(&fit).unwrap());
            println!("reconstruct: thermal fit n_th = {n_th:.2}");
        }
        ReconstructionMode::DisplacedThermalFit => {
            let fit = compute(fit_displaced_thermal(
                &spectrum,
                &psf,
                rc.n_th_fixed,
                rc.shift_mhz,
                rc.n_disp_range,
            ))?;
            let n_disp = fit.get("n_disp").unwrap();
            let dist = compute(qem_core::fockspace::displaced_thermal_distribution(
                rc.n_th_fixed,
                n_disp,
                psf.n_max(),
            ))?;
            write_distribution(&outdir.join("distribution.csv"), &dist, &header)?;
            report.insert("mode".into(), json!("displaced_thermal_fit"));
            report.insert("fit".into(), serde_json::to_value(&fit).unwrap());
            println!("reconstruct: displaced-thermal fit n_disp = {n_disp:.2}");
        }
        ReconstructionMode::JointFit => unreachable!(),
    }

    if let Some(bs) = &rc.bootstrap {
        let (freqs, traces) = read_trace_matrix(&bs.traces_file)?;
        if freqs.len() != psf.freqs().len() {
            return Err(CliError::Input("trace columns must match the kernel grid".into()));
        }
        let estimator = |avg: &[f64]| -> qem_core::Result<f64> {
            let clamped: Vec<f64> = avg.iter().map(|v| v.clamp(0.0, 0.5)).collect();
            let s = Spectrum::new(freqs.clone(), clamped)?;
            match rc.mode {
                ReconstructionMode::RichardsonLucy => {
                    Ok(richardson_lucy(&s, &psf, &rc.rl)?.distribution.moments()?.fano)
                }
                ReconstructionMode::ThermalFit => {
                    let opts =
                        ThermalFitOptions { n_th_range: rc.n_th_range, shift_range: rc.shift_range };
                    Ok(fit_thermal(&s, &psf, &opts)?.get("n_th").unwrap())
                }
                ReconstructionMode::DisplacedThermalFit => Ok(fit_displaced_thermal(
                    &s,
                    &psf,
                    rc.n_th_fixed,
                    rc.shift_mhz,
                    rc.n_disp_range,
                )?
                .get("n_disp")
                .unwrap()),
                ReconstructionMode::JointFit => unreachable!(),
            }
        };
        let ci = compute(bootstrap_ci(&traces, estimator, bs.resamples, bs.level, config.seed))?;
        report.insert("bootstrap".into(), serde_json::to_value(ci).unwrap());
        println!(
            "reconstruct: bootstrap {:.0}% CI [{:.3}, {:.3}] around {:.3}",
            100.0 * ci.confidence_level,
            ci.lower,
            ci.upper,
            ci.point
        );
    }
    write_file(
        &outdir.join("fit_report.json"),
        &serde_json::to_string_pretty(&serde_json::Value::Object(report)).unwrap(),
    )?;
    Ok(())
}

/// Simulated-experiment Monte Carlo bounding the true Fano factor.
pub fn cmd_fano_bound(config: &ExperimentConfig, out_flag: Option<&Path>) -> Result<(), CliError> {
    let outdir = outdir_for(config, out_flag)?;
    let mc = config.monte_carlo.clone().unwrap_or_default();
    let noise = NoiseModel::new(mc.noise_coeffs).map_err(|e| CliError::Input(e.to_string()))?;
    let full = synthetic_psf(config)?;
    let rows = mc.psf_rows.min(full.n_max());
    let psf = compute(PsfMap::new(
        full.freqs().to_vec(),
        full.rows().slice(ndarray::s![..=rows, ..]).to_owned(),
    ))?;
    let cfg = FanoBoundConfig {
        mean: mc.mean,
        f_true_grid: (0..mc.f_true_count)
            .map(|k| mc.f_true_start + mc.f_true_step * k as f64)
            .collect(),
        noise,
        n_sims: mc.n_sims,
        n_averages: mc.n_averages,
        rl: mc.rl,
        seed: config.seed,
    };
    info!(
        "running {} simulated experiments ({} grid points x {} sims)",
        cfg.f_true_grid.len() * cfg.n_sims,
        cfg.f_true_grid.len(),
        cfg.n_sims
    );
    let result = compute(fano_bound_mc(&cfg, &psf))?;

    let header = provenance_line(config, "fano-bound");
    let mut csv = format!("# {header}\nf_true,bin_lo,bin_hi,count\n");
    for (f_true, row) in result.f_true_grid.iter().zip(&result.counts) {
        for (k, count) in row.iter().enumerate() {
            if *count > 0 {
                csv.push_str(&format!(
                    "{f_true:.4},{:.4},{:.4},{count}\n",
                    k as f64 * result.bin_width,
                    (k + 1) as f64 * result.bin_width
                ));
            }
        }
    }
    write_file(&outdir.join("fano_histogram.csv"), &csv)?;

    let (lo, hi) = mc.window;
    let cdf = compute(result.conditional_cdf(lo, hi))?;
    let bound95 = compute(result.upper_bound(lo, hi, 0.95))?;
    let bound99 = compute(result.upper_bound(lo, hi, 0.99))?;
    let report = json!({
        "window": [lo, hi],
        "conditional_cdf": cdf,
        "f_true_bound_95": bound95,
        "f_true_bound_99": bound99,
    });
    write_file(&outdir.join("cdf_report.json"), &serde_json::to_string_pretty(&report).unwrap())?;
    println!(
        "fano-bound: conditioning on F_extract in [{lo}, {hi}]: F_true <= {bound95:.3} (95%), <= {bound99:.3} (99%)"
    );
    Ok(())
}

/// Derived frequency/rate summary for the configured system.
pub fn cmd_rates(config: &ExperimentConfig, out_flag: Option<&Path>) -> Result<(), CliError> {
    let outdir = outdir_for(config, out_flag)?;
    let p = &config.system;
    let chi_derived = compute(derive_chi(p))?;
    let drive = DitherDriveParams {
        omega_d: p.omega_q_bare + p.omega_m - p.omega_dither,
        omega_rabi: 1.0,
        side: SidebandSide::Blue,
        n_center: 0.0,
    };
    let rate_per_rabi = compute(dither_sideband_rate(p, &drive))?;
    let freqs0 = dither_sideband_frequencies(p, 0.0);
    let report = json!({
        "chi_m_supplied_mhz": p.chi_m,
        "chi_m_derived_mhz": chi_derived,
        "two_chi_m_derived_mhz": 2.0 * chi_derived,
        "phonon_sensitivity_xi": p.phonon_sensitivity(),
        "squeeze_parameter_r": p.squeeze_parameter(),
        "residual_displacement_beta": p.residual_displacement(),
        "dither_bessel_argument": 8.0 * p.e_c * p.n_dither / p.e_j,
        "dither_rate_per_unit_rabi": rate_per_rabi,
        "modulation_amplitude_n0": phonon_modulation_map(p, 0.0),
        "blue_sideband_frequencies_n0_mhz": [freqs0.blue_lower, freqs0.blue_upper],
        "red_sideband_frequencies_n0_mhz": [freqs0.red_lower, freqs0.red_upper],
    });
    let body = serde_json::to_string_pretty(&report).unwrap();
    write_file(&outdir.join("rates_report.json"), &body)?;
    println!("{body}");
    Ok(())
}
