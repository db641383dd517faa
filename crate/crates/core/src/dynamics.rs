//! Classical master-equation engine for the joint populations
//! {P_g^{|n>}, P_e^{|n>}} under sideband drives and strong-coupling decay,
//! with chirp protocols and optional higher-order spurious sidebands.
//!
//! Rates enter as ordinary (non-angular) MHz and convert to physical
//! per-ms rates (x 2 pi x 1000) for time evolution, so trajectory
//! timestamps and chirp rates in phonons/ms are laboratory milliseconds.

use crate::error::{Error, Result};
use crate::fockspace::{residual_overlap_matrix, PhononDistribution};
use crate::rates::{
    reduced_blue_rate, reduced_red_rate, stark_shifted_qubit_frequency, SystemParams,
};
use ndarray::Array2;
use serde::{Deserialize, Serialize};

/// Ordinary-MHz rate to physical rate per millisecond.
pub const MHZ_TO_PER_MS: f64 = 2.0 * std::f64::consts::PI * 1e3;

/// Joint population vector over qubit state and Fock level at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct MasterState {
    /// Ground-manifold populations, length n_max + 1.
    pub pg: Vec<f64>,
    /// Excited-manifold populations, same length.
    pub pe: Vec<f64>,
    /// Time in ms.
    pub t: f64,
}

impl MasterState {
    /// All population in the ground manifold with the given phonon
    /// distribution.
    pub fn ground_thermalized(dist: &PhononDistribution) -> Self {
        MasterState { pg: dist.probs().to_vec(), pe: vec![0.0; dist.probs().len()], t: 0.0 }
    }

    pub fn pure(excited: bool, n: usize, n_max: usize) -> Self {
        let mut s =
            MasterState { pg: vec![0.0; n_max + 1], pe: vec![0.0; n_max + 1], t: 0.0 };
        if excited {
            s.pe[n] = 1.0;
        } else {
            s.pg[n] = 1.0;
        }
        s
    }

    pub fn n_max(&self) -> usize {
        self.pg.len() - 1
    }

    pub fn total(&self) -> f64 {
        self.pg.iter().sum::<f64>() + self.pe.iter().sum::<f64>()
    }

    /// Traces out the qubit: P(n) = pg[n] + pe[n].
    pub fn phonon_distribution(&self) -> Result<PhononDistribution> {
        PhononDistribution::new(
            self.pg.iter().zip(&self.pe).map(|(g, e)| g + e).collect(),
        )
    }

    /// Mean phonon number of the traced-out distribution.
    pub fn mean_phonons(&self) -> f64 {
        let mut mean = 0.0;
        for n in 0..=self.n_max() {
            mean += n as f64 * (self.pg[n] + self.pe[n]);
        }
        mean
    }
}

/// Piecewise-linear chirp schedule n_B(t); times in ms, strictly
/// increasing, values nondecreasing. Evaluation clamps at the endpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChirpSchedule {
    points: Vec<(f64, f64)>,
}

impl ChirpSchedule {
    pub fn new(points: Vec<(f64, f64)>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::InvalidParams("chirp schedule needs at least one point".into()));
        }
        for w in points.windows(2) {
            if w[1].0 <= w[0].0 {
                return Err(Error::InvalidParams("chirp times must be strictly increasing".into()));
            }
            if w[1].1 < w[0].1 {
                return Err(Error::InvalidParams("chirp schedule must be nondecreasing".into()));
            }
        }
        Ok(ChirpSchedule { points })
    }

    pub fn constant(n_center: f64) -> Self {
        ChirpSchedule { points: vec![(0.0, n_center)] }
    }

    /// Linear ramp from `n0` at t = 0 with the given rate (phonons/ms),
    /// held constant after `t_end`.
    pub fn linear(n0: f64, rate_per_ms: f64, t_end: f64) -> Result<Self> {
        ChirpSchedule::new(vec![(0.0, n0), (t_end, n0 + rate_per_ms * t_end)])
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn eval(&self, t: f64) -> f64 {
        let pts = &self.points;
        if t <= pts[0].0 {
            return pts[0].1;
        }
        for w in pts.windows(2) {
            if t <= w[1].0 {
                let frac = (t - w[0].0) / (w[1].0 - w[0].0);
                return w[0].1 + frac * (w[1].1 - w[0].1);
            }
        }
        pts[pts.len() - 1].1
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlueDrive {
    /// Bare blue sideband rate in MHz.
    pub omega_b0: f64,
    pub chirp: ChirpSchedule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RedDrive {
    /// Bare red sideband rate in MHz.
    pub omega_r0: f64,
    /// Center of the addressed transition, constant.
    pub n_r: f64,
}

/// Off-resonant higher-order sideband terms of the dither drive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpuriousConfig {
    /// Include orders |l| <= l_max (l = 0, +-1 are dominated by the main
    /// drives and the carrier; they contribute negligibly here).
    pub l_max: i64,
}

/// Sideband drive protocol: optional blue chirp, optional static red drive,
/// optional spurious higher-order terms, and a total duration in ms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidebandProtocol {
    pub blue: Option<BlueDrive>,
    pub red: Option<RedDrive>,
    pub spurious: Option<SpuriousConfig>,
    /// Duration in ms.
    pub duration: f64,
}

impl SidebandProtocol {
    pub fn validate(&self) -> Result<()> {
        if !(self.duration > 0.0) {
            return Err(Error::InvalidParams("protocol duration must be positive".into()));
        }
        if let Some(s) = &self.spurious {
            if s.l_max > 11 {
                return Err(Error::InvalidParams("spurious order cutoff limited to l_max <= 11".into()));
            }
        }
        Ok(())
    }

    pub fn idle(duration: f64) -> Self {
        SidebandProtocol { blue: None, red: None, spurious: None, duration }
    }
}

/// Decay channels: qubit energy decay with Fock-space branching, and
/// qubit-state-dependent mechanical thermalization.
#[derive(Debug, Clone)]
pub struct DecayChannel {
    /// Qubit energy decay rate in MHz.
    pub gamma_1: f64,
    /// Mechanical damping rate in MHz.
    pub gamma_m: f64,
    /// Bath occupancy.
    pub n_th: f64,
    /// Squeeze parameter chi_m / 2 omega_m.
    pub r: f64,
    /// |alpha_mn|^2 branching matrix of a qubit flip; row m sums to 1 for
    /// interior m.
    pub qubit_flip_overlaps: Array2<f64>,
}

impl DecayChannel {
    /// Builds the channel from system parameters, with or without the
    /// residual linear coupling in the branching matrix.
    pub fn from_params(params: &SystemParams, n_max: usize, include_residual: bool) -> Result<Self> {
        let r = params.squeeze_parameter();
        let beta = if include_residual { params.residual_displacement() } else { 0.0 };
        let overlaps = residual_overlap_matrix(r, beta, n_max)?;
        Ok(DecayChannel {
            gamma_1: params.gamma_1,
            gamma_m: params.gamma_m,
            n_th: params.n_th,
            r,
            qubit_flip_overlaps: overlaps.abs_squared(),
        })
    }

    /// Phonon-conserving limit: identity branching, no squeeze scaling.
    pub fn phonon_conserving(gamma_1: f64, gamma_m: f64, n_th: f64, n_max: usize) -> Self {
        DecayChannel {
            gamma_1,
            gamma_m,
            n_th,
            r: 0.0,
            qubit_flip_overlaps: Array2::eye(n_max + 1),
        }
    }

    pub fn validate(&self, n_max: usize) -> Result<()> {
        let dim = self.qubit_flip_overlaps.nrows();
        if dim != n_max + 1 || self.qubit_flip_overlaps.ncols() != dim {
            return Err(Error::Dimension(format!(
                "overlap matrix is {dim}x{}, state needs {}",
                self.qubit_flip_overlaps.ncols(),
                n_max + 1
            )));
        }
        // Interior rows of |alpha|^2 must be near-stochastic.
        let guard = (n_max / 4).max(8).min(n_max);
        for m in 0..=(n_max - guard) {
            let s: f64 = self.qubit_flip_overlaps.row(m).sum();
            if (s - 1.0).abs() > 1e-6 {
                return Err(Error::Truncation(format!(
                    "qubit-flip branching row {m} sums to {s:.9}"
                )));
            }
        }
        Ok(())
    }
}

/// Context for the spurious higher-order terms: the dither drive frequency
/// tracks the blue chirp, and the drive strength scales with the cavity
/// filter.
struct SpuriousContext {
    overlaps_sq: Array2<f64>,
    l_max: i64,
    /// Rabi rate (MHz) of the drive tone at the chirp start.
    rabi_at_start: f64,
    omega_drive_start: f64,
    omega_c: f64,
}

fn drive_frequency_for_center(params: &SystemParams, n_center: f64) -> f64 {
    // Lower blue dither sideband: w_q^n + w_m - w_dither.
    stark_shifted_qubit_frequency(params, n_center) + params.omega_m - params.omega_dither
}

/// dstate/dt from the sideband drives alone, in per-ms units. Each drive
/// couples its transition pair bidirectionally at the reduced rate, so the
/// column sums of the generator vanish and probability is conserved
/// analytically.
pub fn drive_derivative(
    state: &MasterState,
    params: &SystemParams,
    protocol: &SidebandProtocol,
    t: f64,
) -> Result<MasterState> {
    let n_max = state.n_max();
    let mut d = MasterState { pg: vec![0.0; n_max + 1], pe: vec![0.0; n_max + 1], t: 1.0 };

    if let Some(blue) = &protocol.blue {
        let n_b = blue.chirp.eval(t);
        for n in 0..n_max {
            // |g,n> <-> |e,n+1>
            let rate = reduced_blue_rate(params, n, n_b, blue.omega_b0)? * MHZ_TO_PER_MS;
            let flow = rate * (state.pg[n] - state.pe[n + 1]);
            d.pg[n] -= flow;
            d.pe[n + 1] += flow;
        }
    }
    if let Some(red) = &protocol.red {
        for n in 1..=n_max {
            // |g,n> <-> |e,n-1>
            let rate = reduced_red_rate(params, n, red.n_r, red.omega_r0)? * MHZ_TO_PER_MS;
            let flow = rate * (state.pg[n] - state.pe[n - 1]);
            d.pg[n] -= flow;
            d.pe[n - 1] += flow;
        }
    }
    Ok(d)
}

/// dstate/dt from qubit and mechanical decay, in per-ms units. Mechanical
/// thermalization runs at e^{+2r} gamma_m in the ground manifold and
/// e^{-2r} gamma_m in the excited manifold; qubit decay redistributes
/// excited population over the ground manifold through |alpha_mn|^2.
/// Many-phonon qubit excitation is omitted.
pub fn decay_derivative(state: &MasterState, decay: &DecayChannel) -> Result<MasterState> {
    let n_max = state.n_max();
    decay.validate(n_max)?;
    let mut d = MasterState { pg: vec![0.0; n_max + 1], pe: vec![0.0; n_max + 1], t: 1.0 };

    let thermalize = |pop: &[f64], out: &mut [f64], rate: f64| {
        let n_th = decay.n_th;
        for n in 0..=n_max {
            let nf = n as f64;
            // reflecting truncation boundary: no flow above n_max
            let up_out = if n < n_max { n_th * (nf + 1.0) } else { 0.0 };
            let down_out = (1.0 + n_th) * nf;
            out[n] -= rate * (up_out + down_out) * pop[n];
            if n > 0 {
                out[n] += rate * n_th * nf * pop[n - 1];
            }
            if n < n_max {
                out[n] += rate * (1.0 + n_th) * (nf + 1.0) * pop[n + 1];
            }
        }
    };
    let gm = decay.gamma_m * MHZ_TO_PER_MS;
    thermalize(&state.pg, &mut d.pg, (2.0 * decay.r).exp() * gm);
    thermalize(&state.pe, &mut d.pe, (-2.0 * decay.r).exp() * gm);

    let g1 = decay.gamma_1 * MHZ_TO_PER_MS;
    if g1 > 0.0 {
        for m in 0..=n_max {
            let loss = g1 * state.pe[m];
            d.pe[m] -= loss;
            if loss != 0.0 {
                for n in 0..=n_max {
                    d.pg[n] += loss * decay.qubit_flip_overlaps[[m, n]];
                }
            }
        }
    }
    Ok(d)
}

/// Off-resonant l-th order sideband terms for the chirped blue dither
/// drive, added bidirectionally like the main drives.
fn spurious_derivative(
    state: &MasterState,
    params: &SystemParams,
    ctx: &SpuriousContext,
    n_b: f64,
    d: &mut MasterState,
) {
    let n_max = state.n_max();
    let omega_d = drive_frequency_for_center(params, n_b);
    // cavity filter relative to the calibration point
    let rabi = ctx.rabi_at_start * (ctx.omega_drive_start - ctx.omega_c) / (omega_d - ctx.omega_c);
    let prefactor = 4.0 * rabi * rabi / params.gamma_2_star * MHZ_TO_PER_MS;
    let half_width = params.gamma_2_star / 2.0;
    for n in 0..=n_max {
        let base = stark_shifted_qubit_frequency(params, n as f64);
        for l in -ctx.l_max..=ctx.l_max {
            if l.abs() < 2 {
                continue;
            }
            let target = n as i64 + l;
            if target < 0 || target > n_max as i64 {
                continue;
            }
            let target = target as usize;
            let alpha_sq = ctx.overlaps_sq[[target, n]];
            if alpha_sq == 0.0 {
                continue;
            }
            let detune = (omega_d - (base + l as f64 * params.omega_m)) / half_width;
            let rate = prefactor * alpha_sq / (1.0 + detune * detune);
            let flow = rate * (state.pg[n] - state.pe[target]);
            d.pg[n] -= flow;
            d.pe[target] += flow;
        }
    }
}

/// One sampled trajectory plus bookkeeping from the step-wise conservation
/// enforcement.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub samples: Vec<MasterState>,
    /// Total probability clipped from negative excursions.
    pub clipped_mass: f64,
    /// Largest population seen in the top Fock level (truncation pile-up).
    pub max_boundary_mass: f64,
}

impl Trajectory {
    pub fn final_state(&self) -> &MasterState {
        self.samples.last().expect("trajectory has at least the initial state")
    }
}

fn max_active_rate(
    params: &SystemParams,
    protocol: &SidebandProtocol,
    decay: &DecayChannel,
    n_max: usize,
) -> f64 {
    let nf = n_max as f64;
    let mut max_rate = decay.gamma_1.max(decay.gamma_m * (2.0 * decay.n_th + 1.0) * (nf + 1.0));
    // Worst-case Lorentzian over the whole drive schedule, per level.
    let lorentz_max = |n: f64, lo: f64, hi: f64| -> f64 {
        let dist = if n < lo {
            lo - n
        } else if n > hi {
            n - hi
        } else {
            0.0
        };
        let arg = 4.0 * params.chi_m * dist / params.gamma_2_star;
        1.0 / (1.0 + arg * arg)
    };
    if let Some(blue) = &protocol.blue {
        let lo = blue.chirp.points()[0].1;
        let hi = blue.chirp.points().last().unwrap().1;
        for n in 0..=n_max {
            let rate = 4.0 * (n as f64 + 1.0) * blue.omega_b0.powi(2) / params.gamma_2_star
                * lorentz_max(n as f64, lo, hi);
            max_rate = max_rate.max(rate);
        }
    }
    if let Some(red) = &protocol.red {
        for n in 0..=n_max {
            let rate = 4.0 * n as f64 * red.omega_r0.powi(2) / params.gamma_2_star
                * lorentz_max(n as f64, red.n_r, red.n_r);
            max_rate = max_rate.max(rate);
        }
    }
    max_rate * MHZ_TO_PER_MS
}

/// Integration controls. `dt` must resolve the fastest active rate
/// (dt * max_rate < 0.1); the default honors the stiffest channel of the
/// default parameter set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IntegrationOptions {
    /// Fixed RK4 step in ms.
    pub dt: f64,
    /// Sample interval in ms (0 = only initial and final states).
    pub sample_interval: f64,
}

impl Default for IntegrationOptions {
    fn default() -> Self {
        IntegrationOptions { dt: 2e-5, sample_interval: 0.1 }
    }
}

fn add_scaled(state: &MasterState, k: &MasterState, factor: f64) -> MasterState {
    let mut out = state.clone();
    for n in 0..state.pg.len() {
        out.pg[n] += factor * k.pg[n];
        out.pe[n] += factor * k.pe[n];
    }
    out
}

/// Fixed-step RK4 integration of drives + decay. The chirp is evaluated at
/// the RK4 stage times. After each step negative float-noise is clipped,
/// the top level is folded into the ground manifold, and the total is
/// renormalized to 1.
pub fn integrate(
    initial: &MasterState,
    params: &SystemParams,
    protocol: &SidebandProtocol,
    decay: &DecayChannel,
    opts: &IntegrationOptions,
) -> Result<Trajectory> {
    protocol.validate()?;
    let n_max = initial.n_max();
    decay.validate(n_max)?;
    if initial.pe.len() != initial.pg.len() {
        return Err(Error::Dimension("pg and pe lengths differ".into()));
    }
    if !(opts.dt > 0.0) {
        return Err(Error::InvalidParams("dt must be positive".into()));
    }
    let max_rate = max_active_rate(params, protocol, decay, n_max);
    if opts.dt * max_rate >= 0.1 {
        return Err(Error::StepSize(format!(
            "dt = {} ms does not resolve the fastest rate {:.3e}/ms (need dt*rate < 0.1); \
             try dt <= {:.2e} ms",
            opts.dt,
            max_rate,
            0.09 / max_rate
        )));
    }

    let spurious_ctx = match (&protocol.spurious, &protocol.blue) {
        (Some(cfg), Some(blue)) => {
            let overlaps =
                residual_overlap_matrix(params.squeeze_parameter(), params.residual_displacement(), n_max)?;
            let n_b0 = blue.chirp.eval(0.0);
            let omega_drive_start = drive_frequency_for_center(params, n_b0);
            // Invert the bare sideband rate for the drive tone's Rabi rate.
            let dither_arg = 8.0 * params.e_c * params.n_dither / params.e_j;
            let j1 = crate::special::bessel_j(1, dither_arg);
            if j1.abs() < 1e-12 || params.g_m == 0.0 {
                return Err(Error::InvalidParams(
                    "spurious terms need a nonzero dither amplitude and coupling".into(),
                ));
            }
            let rabi_at_start = blue.omega_b0 * 2.0 * (omega_drive_start - params.omega_q_bare)
                / (params.g_m * j1);
            Some(SpuriousContext {
                overlaps_sq: overlaps.abs_squared(),
                l_max: cfg.l_max,
                rabi_at_start,
                omega_drive_start,
                omega_c: params.omega_c,
            })
        }
        (Some(_), None) => {
            return Err(Error::InvalidParams("spurious terms require a blue drive".into()))
        }
        _ => None,
    };

    let rhs = |s: &MasterState, t: f64| -> Result<MasterState> {
        let mut d = drive_derivative(s, params, protocol, t)?;
        let dd = decay_derivative(s, decay)?;
        for n in 0..=n_max {
            d.pg[n] += dd.pg[n];
            d.pe[n] += dd.pe[n];
        }
        if let (Some(ctx), Some(blue)) = (&spurious_ctx, &protocol.blue) {
            spurious_derivative(s, params, ctx, blue.chirp.eval(t), &mut d);
        }
        Ok(d)
    };

    let steps = (protocol.duration / opts.dt).ceil() as usize;
    let sample_every = if opts.sample_interval <= 0.0 {
        usize::MAX
    } else {
        ((opts.sample_interval / opts.dt).round() as usize).max(1)
    };

    let mut state = initial.clone();
    state.t = 0.0;
    let mut samples = vec![state.clone()];
    let mut clipped_mass = 0.0;
    let mut max_boundary_mass: f64 = 0.0;

    for step in 0..steps {
        let t = step as f64 * opts.dt;
        let dt = opts.dt.min(protocol.duration - t);
        let k1 = rhs(&state, t)?;
        let k2 = rhs(&add_scaled(&state, &k1, 0.5 * dt), t + 0.5 * dt)?;
        let k3 = rhs(&add_scaled(&state, &k2, 0.5 * dt), t + 0.5 * dt)?;
        let k4 = rhs(&add_scaled(&state, &k3, dt), t + dt)?;
        for n in 0..=n_max {
            state.pg[n] += dt / 6.0 * (k1.pg[n] + 2.0 * k2.pg[n] + 2.0 * k3.pg[n] + k4.pg[n]);
            state.pe[n] += dt / 6.0 * (k1.pe[n] + 2.0 * k2.pe[n] + 2.0 * k3.pe[n] + k4.pe[n]);
        }
        state.t = t + dt;

        // conservation enforcement: clip float noise, fold the top level
        // into the ground manifold, renormalize
        for v in state.pg.iter_mut().chain(state.pe.iter_mut()) {
            if *v < 0.0 {
                if *v < -1e-10 {
                    return Err(Error::Accuracy(format!(
                        "population went negative ({v:.3e}) at t = {:.4} ms; reduce dt",
                        state.t
                    )));
                }
                clipped_mass += -*v;
                *v = 0.0;
            }
        }
        state.pg[n_max] += state.pe[n_max];
        state.pe[n_max] = 0.0;
        let total = state.total();
        if !(total > 0.0) {
            return Err(Error::Accuracy("total probability vanished".into()));
        }
        for v in state.pg.iter_mut().chain(state.pe.iter_mut()) {
            *v /= total;
        }
        max_boundary_mass = max_boundary_mass.max(state.pg[n_max]);

        if (step + 1) % sample_every == 0 || step + 1 == steps {
            samples.push(state.clone());
        }
    }

    if max_boundary_mass > 0.01 {
        return Err(Error::Truncation(format!(
            "truncation boundary accumulated {:.2}% of the population; raise n_max",
            100.0 * max_boundary_mass
        )));
    }
    Ok(Trajectory { samples, clipped_mass, max_boundary_mass })
}

/// Runs a full sideband protocol and returns the final phonon distribution
/// (qubit traced out).
pub fn run_squeeze_protocol(
    initial: &MasterState,
    params: &SystemParams,
    protocol: &SidebandProtocol,
    decay: &DecayChannel,
    opts: &IntegrationOptions,
) -> Result<PhononDistribution> {
    let traj = integrate(initial, params, protocol, decay, opts)?;
    traj.final_state().phonon_distribution()
}
