//! Analysis passes over simulated trajectories: modulation tracking,
//! scattering extraction, dispersive norms, and the decay-law comparison.
//!
//! Tracking fits every stored snapshot, warm-starting each frame from the
//! previous one with the frame advanced by its own flow (`d` by `v dt`,
//! `theta` by `(omega + v^2/4) dt`), and unwraps the fitted phase against
//! that prediction, so the reported `theta(t)` and `D(t)` are continuous.
//!
//! Scattering data comes from the tail of the run: each stored radiation
//! field is mapped back to the lab frame, the free flow is undone, and the
//! resulting waveforms are compared pairwise; a time-independent limit is
//! the discrete signature of `f(t) -> e^{i t Delta} f_+`.
//!
//! The decay comparison removes the fast oscillation of `|z(t)|` by
//! averaging over four mode periods, fits `1 / |z_env|^2` to an affine
//! function of time, and measures the slope against the reduced-ODE
//! prediction integrated from the same starting amplitude.

use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{gauge_boost, weighted_l2, Grid, Spectral, SpinorField};
use crate::fgr::reduced_mode_ode;
use crate::groundstate::SolitonFamily;
use crate::linearize::EigenMode;
use crate::modulation::{fit_modulation, ModulationGuess};
use crate::simulate::Trajectory;

/// Spatial decay weight of the local-energy norm.
pub const WEIGHT_S: f64 = 2.0;

/// Width of the envelope-averaging window in mode periods.
pub const ENVELOPE_PERIODS: f64 = 4.0;

/// Minimum number of stored tail waveforms for a scattering verdict.
pub const SCATTERING_MIN_SAMPLES: usize = 16;

/// A time-space exponent pair `(p, q)`; on the line the admissible family
/// is `2/p + 1/q = 1/2`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct AdmissiblePair {
    pub p: f64,
    pub q: f64,
}

/// The pairs reported by default: the conserved-level `(inf, 2)` plus two
/// interior points of the admissible line.
pub fn line_pairs() -> Vec<AdmissiblePair> {
    vec![
        AdmissiblePair { p: f64::INFINITY, q: 2.0 },
        AdmissiblePair { p: 8.0, q: 4.0 },
        AdmissiblePair { p: 6.0, q: 6.0 },
    ]
}

/// Tracking controls.
#[derive(Clone, Debug)]
pub struct TrackConfig {
    pub fit_tol: f64,
    /// Fraction of the run, measured from the end, whose radiation fields
    /// are kept for scattering extraction.
    pub tail_fraction: f64,
    /// Cap on the number of kept tail waveforms.
    pub max_tail_fields: usize,
    pub pairs: Vec<AdmissiblePair>,
}

impl Default for TrackConfig {
    fn default() -> Self {
        TrackConfig {
            fit_tol: 1e-7,
            tail_fraction: 0.5,
            max_tail_fields: 32,
            pairs: line_pairs(),
        }
    }
}

/// One fitted frame; `theta` is unwrapped and `d` continuous.
#[derive(Clone, Debug)]
pub struct TrackedFrame {
    pub t: f64,
    pub omega: f64,
    pub theta: f64,
    pub d: f64,
    pub v: f64,
    pub z: Vec<C64>,
    pub residual: f64,
    pub f_l2: f64,
    pub f_weighted: f64,
    pub f_charge: f64,
    pub f_momentum: f64,
    /// `W^{1,q}` norms of the radiation, one per configured pair.
    pub f_sobolev: Vec<f64>,
}

/// The tracked series plus the stored tail waveforms.
#[derive(Debug)]
pub struct TrackedSeries {
    pub frames: Vec<TrackedFrame>,
    pub pairs: Vec<AdmissiblePair>,
    /// `(frame index, moving-frame radiation)` on the tail window.
    pub tail_fields: Vec<(usize, SpinorField)>,
}

impl TrackedSeries {
    /// Wraps a radiation-only record (no soliton, identity frame) so the
    /// scattering and norm passes can run on free or near-free data.
    pub fn radiation_only(
        times: &[f64],
        fields: &[SpinorField],
        pairs: Vec<AdmissiblePair>,
    ) -> Result<Self> {
        if times.len() != fields.len() || times.is_empty() {
            return Err(Error::InvalidArgument(
                "times and fields must align and be nonempty".into(),
            ));
        }
        let mut frames = Vec::with_capacity(times.len());
        for (&t, f) in times.iter().zip(fields) {
            frames.push(frame_from_radiation(t, 0.0, 0.0, 0.0, 0.0, vec![], 0.0, f, &pairs));
        }
        let tail_fields = (0..fields.len()).map(|i| (i, fields[i].clone())).collect();
        Ok(TrackedSeries { frames, pairs, tail_fields })
    }

    pub fn times(&self) -> Vec<f64> {
        self.frames.iter().map(|f| f.t).collect()
    }

    /// Amplitudes of mode `j` along the series.
    pub fn mode_series(&self, j: usize) -> Result<Vec<C64>> {
        if self.frames.iter().any(|f| f.z.len() <= j) {
            return Err(Error::InvalidArgument(format!("no mode {j} in the tracked series")));
        }
        Ok(self.frames.iter().map(|f| f.z[j]).collect())
    }
}

fn lq_norm(grid: &Grid, values: &[C64], q: f64) -> f64 {
    let mut s = 0.0;
    for (i, v) in values.iter().enumerate() {
        s += grid.weight(i) * v.norm().powf(q);
    }
    s.powf(1.0 / q)
}

fn sobolev_w1q(sp: &Spectral, f: &SpinorField, q: f64) -> f64 {
    let du = sp.derivative(&f.c1);
    lq_norm(f.grid(), &f.c1, q) + lq_norm(f.grid(), &du, q)
}

#[allow(clippy::too_many_arguments)]
fn frame_from_radiation(
    t: f64,
    omega: f64,
    theta: f64,
    d: f64,
    v: f64,
    z: Vec<C64>,
    residual: f64,
    f: &SpinorField,
    pairs: &[AdmissiblePair],
) -> TrackedFrame {
    let sp = Spectral::new(f.grid());
    let f_sobolev = pairs.iter().map(|pair| sobolev_w1q(&sp, f, pair.q)).collect();
    TrackedFrame {
        t,
        omega,
        theta,
        d,
        v,
        z,
        residual,
        f_l2: f.norm(),
        f_weighted: weighted_l2(f, -WEIGHT_S),
        f_charge: crate::field::charge(f),
        f_momentum: crate::field::momentum(f),
        f_sobolev,
    }
}

fn unwrap_near(wrapped: f64, predicted: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    wrapped + two_pi * ((predicted - wrapped) / two_pi).round()
}

/// Fits every snapshot of the trajectory, warm-started frame to frame.
pub fn track_modulation(
    traj: &Trajectory,
    family: &SolitonFamily,
    modes: &[EigenMode],
    guess0: &ModulationGuess,
    cfg: &TrackConfig,
) -> Result<TrackedSeries> {
    if traj.times.len() != traj.snapshots.len() || traj.times.is_empty() {
        return Err(Error::InvalidArgument("trajectory carries no snapshots".into()));
    }
    let n_frames = traj.times.len();
    let tail_start =
        ((n_frames as f64) * (1.0 - cfg.tail_fraction)).floor().min((n_frames - 1) as f64) as usize;
    let tail_len = n_frames - tail_start;
    let tail_stride = tail_len.div_ceil(cfg.max_tail_fields.max(1)).max(1);

    let mut frames: Vec<TrackedFrame> = Vec::with_capacity(n_frames);
    let mut tail_fields = Vec::new();
    let mut guess = guess0.clone();
    let mut prev_t = traj.times[0];
    let mut theta_cont = guess0.theta;

    for (i, (t, u)) in traj.times.iter().zip(&traj.snapshots).enumerate() {
        let gap = t - prev_t;
        let rate = guess.omega + 0.25 * guess.v * guess.v;
        guess.d += guess.v * gap;
        let theta_pred = theta_cont + rate * gap;
        guess.theta = theta_pred;
        let state = fit_modulation(u, &guess, family, modes, cfg.fit_tol).map_err(|e| {
            Error::SolveDiverged(format!(
                "orbital fit broke at frame {i} (t = {t}): {e}"
            ))
        })?;
        theta_cont = unwrap_near(state.theta, theta_pred);
        frames.push(frame_from_radiation(
            *t,
            state.omega,
            theta_cont,
            state.d,
            state.v,
            state.z.clone(),
            state.residual,
            &state.f,
            &cfg.pairs,
        ));
        if i >= tail_start && (i - tail_start) % tail_stride == 0 {
            tail_fields.push((i, state.f.clone()));
        }
        guess = state.guess();
        prev_t = *t;
    }
    Ok(TrackedSeries { frames, pairs: cfg.pairs.clone(), tail_fields })
}

/// Central-difference derivative of a sampled series.
pub fn series_derivative(times: &[f64], values: &[f64]) -> Vec<f64> {
    let n = times.len();
    let mut out = vec![0.0; n];
    if n < 2 {
        return out;
    }
    for i in 0..n {
        let (lo, hi) = if i == 0 {
            (0, 1)
        } else if i == n - 1 {
            (n - 2, n - 1)
        } else {
            (i - 1, i + 1)
        };
        out[i] = (values[hi] - values[lo]) / (times[hi] - times[lo]);
    }
    out
}

/// Residuals of the parameter laws `dD/dt = v` and
/// `dtheta/dt = omega + v^2/4` along the tracked series.
pub struct FrameConsistency {
    pub d_dot_minus_v: Vec<f64>,
    pub theta_dot_minus_rate: Vec<f64>,
}

pub fn frame_consistency(series: &TrackedSeries) -> FrameConsistency {
    let times = series.times();
    let d: Vec<f64> = series.frames.iter().map(|f| f.d).collect();
    let th: Vec<f64> = series.frames.iter().map(|f| f.theta).collect();
    let dd = series_derivative(&times, &d);
    let dth = series_derivative(&times, &th);
    FrameConsistency {
        d_dot_minus_v: series
            .frames
            .iter()
            .zip(&dd)
            .map(|(f, dot)| dot - f.v)
            .collect(),
        theta_dot_minus_rate: series
            .frames
            .iter()
            .zip(&dth)
            .map(|(f, dot)| dot - (f.omega + 0.25 * f.v * f.v))
            .collect(),
    }
}

fn uniform_stride(times: &[f64]) -> Result<f64> {
    if times.len() < 2 {
        return Err(Error::InvalidArgument("series needs at least two samples".into()));
    }
    let dt = times[1] - times[0];
    for w in times.windows(2) {
        if ((w[1] - w[0]) - dt).abs() > 1e-9 * dt.max(1e-300) {
            return Err(Error::InvalidArgument(
                "series is not uniformly sampled".into(),
            ));
        }
    }
    Ok(dt)
}

/// Pairwise-stability record of the backward-evolved tail waveforms.
#[derive(Clone, Debug, Serialize)]
pub struct ScatteringReport {
    pub samples: usize,
    pub f_plus_norm: f64,
    /// Consecutive discrete-`H^1` distances of the waveforms.
    pub residuals: Vec<f64>,
    pub first_half_max: f64,
    pub second_half_max: f64,
    pub converged: bool,
}

fn h1_distance(sp: &Spectral, a: &SpinorField, b: &SpinorField) -> f64 {
    let diff = a.sub(b);
    let du = sp.derivative(&diff.c1);
    let mut s = 0.0;
    for (i, (v, dv)) in diff.c1.iter().zip(&du).enumerate() {
        s += diff.grid().weight(i) * (v.norm_sqr() + dv.norm_sqr());
    }
    s.sqrt()
}

/// Undoes the moving frame and the free flow on the stored tail radiation
/// and reports the Cauchy behavior of the result.
pub fn scattering_extract(series: &TrackedSeries) -> Result<(ScatteringReport, SpinorField)> {
    if series.tail_fields.len() < SCATTERING_MIN_SAMPLES {
        return Err(Error::InvalidArgument(format!(
            "scattering extraction needs at least {SCATTERING_MIN_SAMPLES} tail waveforms, got {}",
            series.tail_fields.len()
        )));
    }
    let grid = *series.tail_fields[0].1.grid();
    let sp = Spectral::new(&grid);
    let mut waves: Vec<SpinorField> = Vec::with_capacity(series.tail_fields.len());
    for (idx, f) in &series.tail_fields {
        let fr = &series.frames[*idx];
        let lab = gauge_boost(f, fr.v, fr.theta, fr.d)?;
        // Free backward flow: the forward multiplier is exp(-i k^2 t).
        let mut w = lab.c1.clone();
        sp.forward(&mut w);
        for (c, &k) in w.iter_mut().zip(sp.wavenumbers()) {
            let ph = k * k * fr.t;
            *c *= C64::new(ph.cos(), ph.sin());
        }
        sp.inverse(&mut w);
        waves.push(SpinorField::from_scalar(&grid, w)?);
    }
    let mut mean = SpinorField::zero(&grid);
    let weight = C64::new(1.0 / waves.len() as f64, 0.0);
    for w in &waves {
        mean.axpy(weight, w);
    }
    let residuals: Vec<f64> = waves.windows(2).map(|w| h1_distance(&sp, &w[1], &w[0])).collect();
    let half = residuals.len() / 2;
    let first_half_max = residuals[..half].iter().cloned().fold(0.0, f64::max);
    let second_half_max = residuals[half..].iter().cloned().fold(0.0, f64::max);
    let report = ScatteringReport {
        samples: waves.len(),
        f_plus_norm: mean.norm(),
        converged: second_half_max <= first_half_max,
        residuals,
        first_half_max,
        second_half_max,
    };
    Ok((report, mean))
}

/// One row of the dispersive table: `|| ||f||_{W^{1,q}} ||_{L^p_t}`.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct NormRow {
    pub p: f64,
    pub q: f64,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct NormTable {
    pub rows: Vec<NormRow>,
    /// `||f||_{L^2_t L^{2,-S}_x}`, the radiation-budget proxy.
    pub weighted_l2_t: f64,
}

/// Discrete-time mixed norms of the tracked radiation, trapezoidal in
/// time.
pub fn dispersive_norms(series: &TrackedSeries) -> Result<NormTable> {
    let times = series.times();
    let dt = uniform_stride(&times)?;
    let last = series.frames.len() - 1;
    let wt = |i: usize| if i == 0 || i == last { 0.5 * dt } else { dt };
    let mut rows = Vec::with_capacity(series.pairs.len());
    for (j, pair) in series.pairs.iter().enumerate() {
        let value = if pair.p.is_infinite() {
            series.frames.iter().map(|f| f.f_sobolev[j]).fold(0.0, f64::max)
        } else {
            let s: f64 = series
                .frames
                .iter()
                .enumerate()
                .map(|(i, f)| f.f_sobolev[j].powf(pair.p) * wt(i))
                .sum();
            s.powf(1.0 / pair.p)
        };
        rows.push(NormRow { p: pair.p, q: pair.q, value });
    }
    let weighted: f64 = series
        .frames
        .iter()
        .enumerate()
        .map(|(i, f)| f.f_weighted * f.f_weighted * wt(i))
        .sum();
    Ok(NormTable { rows, weighted_l2_t: weighted.sqrt() })
}

/// Window-averaged envelope and the affine fit of its inverse square.
#[derive(Clone, Debug, Serialize)]
pub struct DecayFit {
    /// Averaging window length.
    pub window: f64,
    pub transient_cut: f64,
    /// `(window center, averaged |z|)`.
    pub envelope: Vec<(f64, f64)>,
    /// Largest positive envelope increment past the cut; 0 for a monotone
    /// envelope.
    pub max_uptick: f64,
    pub monotone: bool,
    pub initial: f64,
    pub final_value: f64,
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    /// Relative rms misfit of the affine law.
    pub fit_residual: Option<f64>,
    pub prediction_slope: Option<f64>,
    pub ratio: Option<f64>,
}

fn envelope_windows(times: &[f64], amps: &[f64], window: f64) -> Result<Vec<(f64, f64)>> {
    let t0 = times[0];
    let span = times[times.len() - 1] - t0;
    let buckets = (span / window).floor() as usize;
    if buckets < 2 {
        return Err(Error::InvalidArgument(format!(
            "span {span:.2} too short for two averaging windows of {window:.2}"
        )));
    }
    if times.len() < 4 * buckets {
        return Err(Error::InvalidArgument(
            "fewer than four samples per averaging window".into(),
        ));
    }
    let mut sum_t = vec![0.0; buckets];
    let mut sum_a = vec![0.0; buckets];
    let mut count = vec![0usize; buckets];
    for (&t, &a) in times.iter().zip(amps) {
        let b = ((t - t0) / window).floor() as usize;
        if b < buckets {
            sum_t[b] += t;
            sum_a[b] += a;
            count[b] += 1;
        }
    }
    Ok((0..buckets)
        .filter(|&b| count[b] > 0)
        .map(|b| (sum_t[b] / count[b] as f64, sum_a[b] / count[b] as f64))
        .collect())
}

/// Least squares `y = c + s t`; returns `(s, c, relative rms)`.
fn affine_fit(pts: &[(f64, f64)]) -> Result<(f64, f64, f64)> {
    if pts.len() < 3 {
        return Err(Error::InvalidArgument(
            "affine fit needs at least three envelope windows".into(),
        ));
    }
    let n = pts.len() as f64;
    let (mut st, mut sy, mut stt, mut sty) = (0.0, 0.0, 0.0, 0.0);
    for &(t, y) in pts {
        st += t;
        sy += y;
        stt += t * t;
        sty += t * y;
    }
    let det = n * stt - st * st;
    if det.abs() < 1e-300 {
        return Err(Error::InvalidArgument("degenerate time axis in the fit".into()));
    }
    let slope = (n * sty - st * sy) / det;
    let intercept = (sy - slope * st) / n;
    let mean = sy / n;
    let mut rss = 0.0;
    for &(t, y) in pts {
        let e = y - (intercept + slope * t);
        rss += e * e;
    }
    let rel = (rss / n).sqrt() / mean.abs().max(1e-300);
    Ok((slope, intercept, rel))
}

/// Compares the measured mode decay to the reduced-ODE law.
///
/// The envelope is the mean of `|z|` over four mode periods; windows past
/// `transient_cut` enter the affine fit of `1/|z_env|^2` and the prediction
/// is the same fit applied to the reduced ODE started from the first fitted
/// window.
pub fn compare_decay(
    times: &[f64],
    z: &[C64],
    lambda0: f64,
    gamma: f64,
    resonance_order: usize,
    transient_cut: f64,
) -> Result<DecayFit> {
    if times.len() != z.len() || times.is_empty() {
        return Err(Error::InvalidArgument("times and amplitudes must align".into()));
    }
    if !(lambda0 > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "mode frequency {lambda0} must be positive"
        )));
    }
    let window = ENVELOPE_PERIODS * 2.0 * std::f64::consts::PI / lambda0;
    let amps: Vec<f64> = z.iter().map(|c| c.norm()).collect();
    let peak = amps.iter().cloned().fold(0.0, f64::max);
    if peak == 0.0 {
        return Ok(DecayFit {
            window,
            transient_cut,
            envelope: vec![],
            max_uptick: 0.0,
            monotone: true,
            initial: 0.0,
            final_value: 0.0,
            slope: None,
            intercept: None,
            fit_residual: None,
            prediction_slope: None,
            ratio: None,
        });
    }
    let envelope = envelope_windows(times, &amps, window)?;
    let fitted: Vec<(f64, f64)> = envelope
        .iter()
        .filter(|(t, _)| *t >= transient_cut)
        .map(|&(t, e)| (t, 1.0 / (e * e)))
        .collect();
    let mut max_uptick = 0.0f64;
    for w in envelope.windows(2) {
        if w[0].0 >= transient_cut {
            max_uptick = max_uptick.max(w[1].1 - w[0].1);
        }
    }
    let (slope, intercept, fit_residual) = affine_fit(&fitted)?;

    // Reduced-ODE reference started from the first fitted window.
    let (t_start, y_start) = fitted[0];
    let t_end = fitted[fitted.len() - 1].0;
    let e_start = 1.0 / y_start.sqrt();
    let dt_ode = 2.0 * std::f64::consts::PI / (lambda0 * 128.0);
    let sim = reduced_mode_ode(
        &[C64::new(e_start, 0.0)],
        &[lambda0],
        gamma,
        resonance_order,
        t_end - t_start,
        dt_ode,
    )?;
    let ode_amps: Vec<f64> = sim.zeta.iter().map(|zs| zs[0].norm()).collect();
    let ode_env = envelope_windows(&sim.times, &ode_amps, window)?;
    let ode_pts: Vec<(f64, f64)> = ode_env.iter().map(|&(t, e)| (t, 1.0 / (e * e))).collect();
    let (pred_slope, _, _) = affine_fit(&ode_pts)?;

    Ok(DecayFit {
        window,
        transient_cut,
        max_uptick,
        monotone: max_uptick <= 0.0,
        initial: envelope.first().map(|&(_, e)| e).unwrap_or(0.0),
        final_value: envelope.last().map(|&(_, e)| e).unwrap_or(0.0),
        envelope,
        slope: Some(slope),
        intercept: Some(intercept),
        fit_residual: Some(fit_residual),
        prediction_slope: Some(pred_slope),
        ratio: if pred_slope.abs() > 1e-300 { Some(slope / pred_slope) } else { None },
    })
}

/// A reported limit with its tail-variation witness.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct LimitWitness {
    pub value: f64,
    pub tail_variation: f64,
}

fn limit_witness(values: &[f64]) -> LimitWitness {
    let tail = &values[values.len() - values.len().div_ceil(4)..];
    let mean = tail.iter().sum::<f64>() / tail.len() as f64;
    let lo = tail.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = tail.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    LimitWitness { value: mean, tail_variation: hi - lo }
}

/// Scalar view of one tracked frame for serialized reports.
#[derive(Clone, Debug, Serialize)]
pub struct FrameSummary {
    pub t: f64,
    pub omega: f64,
    pub theta: f64,
    pub d: f64,
    pub v: f64,
    pub abs_z: Vec<f64>,
    pub f_l2: f64,
    pub f_weighted: f64,
}

/// The assembled stability record of one tracked run.
#[derive(Clone, Debug, Serialize)]
pub struct StabilityReport {
    pub frame_count: usize,
    pub span: (f64, f64),
    pub omega_limit: LimitWitness,
    pub v_limit: LimitWitness,
    /// Largest mode amplitude on the tail quarter.
    pub z_tail_max: f64,
    /// Tail residuals of the parameter laws.
    pub d_dot_tail: f64,
    pub theta_dot_tail: f64,
    pub decay: Option<DecayFit>,
    pub scattering: ScatteringReport,
    pub norms: NormTable,
    pub frames: Vec<FrameSummary>,
}

/// Assembles the full report. `fgr` carries `(Gamma, lambda0, N)` when a
/// single tracked mode should be compared to the decay law.
pub fn analyze(
    series: &TrackedSeries,
    fgr: Option<(f64, f64, usize)>,
    transient_cut: f64,
) -> Result<StabilityReport> {
    if series.frames.is_empty() {
        return Err(Error::InvalidArgument("empty tracked series".into()));
    }
    let times = series.times();
    let omegas: Vec<f64> = series.frames.iter().map(|f| f.omega).collect();
    let vs: Vec<f64> = series.frames.iter().map(|f| f.v).collect();
    let tail_len = times.len().div_ceil(4);
    let tail = times.len() - tail_len;

    let cons = frame_consistency(series);
    // The one-sided endpoint difference is excluded from the witnesses.
    let interior = |vals: &[f64]| -> f64 {
        vals[tail..vals.len() - 1]
            .iter()
            .map(|r| r.abs())
            .fold(0.0, f64::max)
    };

    let z_tail_max = series.frames[tail..]
        .iter()
        .flat_map(|f| f.z.iter().map(|c| c.norm()))
        .fold(0.0, f64::max);

    let decay = match fgr {
        None => None,
        Some((gamma, lambda0, n)) => {
            let z = series.mode_series(0)?;
            Some(compare_decay(&times, &z, lambda0, gamma, n, transient_cut)?)
        }
    };
    let scattering = scattering_extract(series)?.0;
    let norms = dispersive_norms(series)?;

    Ok(StabilityReport {
        frame_count: series.frames.len(),
        span: (times[0], times[times.len() - 1]),
        omega_limit: limit_witness(&omegas),
        v_limit: limit_witness(&vs),
        z_tail_max,
        d_dot_tail: interior(&cons.d_dot_minus_v),
        theta_dot_tail: interior(&cons.theta_dot_minus_rate),
        decay,
        scattering,
        norms,
        frames: series
            .frames
            .iter()
            .map(|f| FrameSummary {
                t: f.t,
                omega: f.omega,
                theta: f.theta,
                d: f.d,
                v: f.v,
                abs_z: f.z.iter().map(|c| c.norm()).collect(),
                f_l2: f.f_l2,
                f_weighted: f.f_weighted,
            })
            .collect(),
    })
}

/// Writes the tracked series as
/// `t,omega,theta,D,v,Re z_j,Im z_j,...,f_l2,f_weighted,Q_f,Pi_f` rows.
pub fn write_series_csv(path: &std::path::Path, series: &TrackedSeries) -> Result<()> {
    use std::io::Write;
    let modes = series.frames.first().map(|f| f.z.len()).unwrap_or(0);
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    let mut header = String::from("t,omega,theta,D,v");
    for j in 0..modes {
        header.push_str(&format!(",re_z{j},im_z{j}"));
    }
    header.push_str(",f_l2,f_weighted,Q_f,Pi_f");
    writeln!(out, "{header}")?;
    for f in &series.frames {
        let mut row = format!(
            "{:.17e},{:.17e},{:.17e},{:.17e},{:.17e}",
            f.t, f.omega, f.theta, f.d, f.v
        );
        for z in &f.z {
            row.push_str(&format!(",{:.17e},{:.17e}", z.re, z.im));
        }
        row.push_str(&format!(
            ",{:.17e},{:.17e},{:.17e},{:.17e}",
            f.f_l2, f.f_weighted, f.f_charge, f.f_momentum
        ));
        writeln!(out, "{row}")?;
    }
    Ok(())
}
