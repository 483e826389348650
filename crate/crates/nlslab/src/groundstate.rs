//! Ground-state branch: stationary profiles phi_omega, the branch functions
//! q, e, d, and dense spectral checks of the scalar second-variation
//! operators L+ and L-.
//!
//! The profile solves `-lap(phi) + omega*phi + beta(phi^2)*phi = 0`, the
//! critical-point equation of E + omega*Q, so that `exp(i*omega*t)*phi` is an
//! exact solution of the evolution equation. Newton iteration with a spectral
//! Laplacian; inner solves use GMRES preconditioned by `(-lap + omega)^{-1}`.

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{charge, energy, resample, Dim, Grid, Nonlinearity, Spectral, SpinorField};
use crate::krylov::{dense_symmetric_eigs, gmres_real};

const VACUUM_FRACTION: f64 = 0.01;
const BLOWUP_FACTOR: f64 = 100.0;
const MAX_NEWTON_ITERATIONS: usize = 60;
/// Dense eigensolves run on grids at most this large; finer profiles are
/// spectrally resampled first.
const DENSE_EIGEN_MAX_N: usize = 1024;

/// Stationary profile at one frequency, with its Newton residual history.
#[derive(Clone, Debug)]
pub struct GroundState {
    pub grid: Grid,
    pub beta: Nonlinearity,
    pub omega: f64,
    pub phi: Vec<f64>,
    /// Final relative L2 residual of the stationary equation.
    pub residual: f64,
    /// Relative L2 residual before each Newton step and after the last.
    pub history: Vec<f64>,
}

impl GroundState {
    pub fn spinor(&self) -> SpinorField {
        SpinorField::symmetric_real(&self.grid, &self.phi)
    }

    /// q(omega), the squared L2 mass of the profile.
    pub fn charge(&self) -> f64 {
        charge(&self.spinor())
    }

    /// e(omega), kinetic plus potential energy of the profile.
    pub fn energy(&self) -> f64 {
        energy(&self.spinor(), &self.beta)
    }

    /// d(omega) = e(omega) + omega q(omega); its derivative in omega is q.
    pub fn action(&self) -> f64 {
        self.energy() + self.omega * self.charge()
    }

    /// Multiplier of L+ = -lap + w; includes the omega term.
    pub fn lplus_potential(&self) -> Vec<f64> {
        self.phi
            .iter()
            .map(|&p| {
                let s = p * p;
                self.omega + self.beta.beta(s) + 2.0 * self.beta.beta_prime(s) * s
            })
            .collect()
    }

    /// Multiplier of L- = -lap + w; includes the omega term. L- phi = 0.
    pub fn lminus_potential(&self) -> Vec<f64> {
        self.phi
            .iter()
            .map(|&p| self.omega + self.beta.beta(p * p))
            .collect()
    }
}

/// `(-lap + potential) v` with the grid's own Laplacian.
pub fn schrodinger_apply(sp: &Spectral, potential: &[f64], v: &[C64]) -> Vec<C64> {
    let lap = sp.laplacian(v);
    v.iter()
        .zip(lap)
        .zip(potential)
        .map(|((vi, li), wi)| -li + wi * vi)
        .collect()
}

fn to_complex(v: &[f64]) -> Vec<C64> {
    v.iter().map(|&t| C64::new(t, 0.0)).collect()
}

fn stationary_residual(sp: &Spectral, beta: &Nonlinearity, omega: f64, phi: &[f64]) -> Vec<f64> {
    let lap = sp.laplacian(&to_complex(phi));
    phi.iter()
        .zip(lap)
        .map(|(&p, l)| -l.re + omega * p + beta.beta(p * p) * p)
        .collect()
}

fn weighted_l2(grid: &Grid, v: &[f64]) -> f64 {
    v.iter()
        .enumerate()
        .map(|(i, &t)| grid.weight(i) * t * t)
        .sum::<f64>()
        .sqrt()
}

fn sup(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, &t| m.max(t.abs()))
}

/// Symmetrizes under x -> -x; iterates must stay exactly even so that the
/// odd translation kernel of L+ never enters the Newton solves.
fn symmetrize_even(v: &mut [f64]) {
    let n = v.len();
    for i in 1..n / 2 {
        let avg = 0.5 * (v[i] + v[n - i]);
        v[i] = avg;
        v[n - i] = avg;
    }
}

/// Antisymmetrizes under x -> -x, pinning the fixed points to zero.
fn symmetrize_odd(v: &mut [f64]) {
    let n = v.len();
    v[0] = 0.0;
    v[n / 2] = 0.0;
    for i in 1..n / 2 {
        let avg = 0.5 * (v[i] - v[n - i]);
        v[i] = avg;
        v[n - i] = -avg;
    }
}

/// Recovers phi from psi = x phi; the on-axis value is psi'(0).
fn phi_from_psi(sp: &Spectral, xs: &[f64], psi: &[f64]) -> Vec<f64> {
    let n = psi.len();
    let dpsi = sp.derivative(&to_complex(psi));
    (0..n)
        .map(|i| if i == n / 2 { dpsi[i].re } else { psi[i] / xs[i] })
        .collect()
}

/// Default initial profile: the exact cubic soliton shape on the line, a
/// Gaussian bump of matching scaling in the radial case.
pub fn initial_profile(grid: &Grid, omega: f64) -> Vec<f64> {
    let rw = omega.sqrt();
    grid.points()
        .iter()
        .map(|&x| match grid.dim() {
            Dim::One => (2.0 * omega).sqrt() / (rw * x).cosh(),
            Dim::RadialThree => 4.3 * rw * (-(rw * x) * (rw * x) / 2.0).exp(),
        })
        .collect()
}

pub fn solve_ground_state(
    beta: &Nonlinearity,
    omega: f64,
    grid: &Grid,
    tol: f64,
) -> Result<GroundState> {
    solve_ground_state_from(beta, omega, grid, tol, None)
}

/// Same as [`solve_ground_state`] but warm-started, for continuation in omega.
pub fn solve_ground_state_from(
    beta: &Nonlinearity,
    omega: f64,
    grid: &Grid,
    tol: f64,
    init: Option<&[f64]>,
) -> Result<GroundState> {
    if !(omega > 0.0) {
        return Err(Error::BranchNotFound(format!(
            "no decaying stationary profile at frequency {omega}"
        )));
    }
    if tol < 1e-12 {
        return Err(Error::InvalidArgument(format!(
            "ground-state tolerance {tol:.1e} below the supported floor 1e-12"
        )));
    }
    let phi = match init {
        Some(p) => {
            if p.len() != grid.n() {
                return Err(Error::InvalidArgument(
                    "initial profile length does not match grid".into(),
                ));
            }
            p.to_vec()
        }
        None => initial_profile(grid, omega),
    };
    match grid.dim() {
        Dim::One => newton_line(beta, omega, grid, tol, phi),
        Dim::RadialThree => newton_radial(beta, omega, grid, tol, phi, init.is_none()),
    }
}

/// Fixed-point warm-up for the radial solve: renormalized iteration on the
/// leading cubic term, in the psi = x phi variable. Newton's basin is small
/// in three dimensions and a cold Gaussian rarely lands inside it.
fn petviashvili_radial(
    beta: &Nonlinearity,
    omega: f64,
    grid: &Grid,
    sp: &Spectral,
    mut psi: Vec<f64>,
) -> Vec<f64> {
    let c0 = beta.coeffs().first().copied().unwrap_or(0.0);
    if c0 >= 0.0 {
        return psi; // no focusing cubic term to iterate on
    }
    let a = -c0;
    let n = grid.n();
    let h = grid.spacing();
    let xs = grid.points();
    let k2: Vec<f64> = sp.wavenumbers().iter().map(|&k| k * k).collect();
    for _ in 0..40 {
        let nl: Vec<f64> = (0..n)
            .map(|i| {
                if i == n / 2 {
                    0.0
                } else {
                    a * psi[i].powi(3) / (xs[i] * xs[i])
                }
            })
            .collect();
        let lap = sp.laplacian_line(&to_complex(&psi));
        let num: f64 = (0..n).map(|i| psi[i] * (-lap[i].re + omega * psi[i])).sum::<f64>() * h;
        let den: f64 = (0..n).map(|i| psi[i] * nl[i]).sum::<f64>() * h;
        if !(den > 0.0) {
            return psi;
        }
        let gamma = num / den;
        let mut w = to_complex(&nl);
        sp.forward(&mut w);
        for (z, kk) in w.iter_mut().zip(&k2) {
            *z /= kk + omega;
        }
        sp.inverse(&mut w);
        for i in 0..n {
            psi[i] = gamma.powf(1.5) * w[i].re;
        }
        symmetrize_odd(&mut psi);
        if (gamma - 1.0).abs() < 1e-4 {
            break;
        }
    }
    psi
}

fn newton_line(
    beta: &Nonlinearity,
    omega: f64,
    grid: &Grid,
    tol: f64,
    mut phi: Vec<f64>,
) -> Result<GroundState> {
    let sp = Spectral::new(grid);
    symmetrize_even(&mut phi);
    let amplitude_cap = BLOWUP_FACTOR * (1.0 + sup(&phi));

    let k2 = sp.wavenumbers().iter().map(|&k| k * k).collect::<Vec<_>>();
    let mut history = Vec::new();
    let mut relres = f64::INFINITY;

    for iteration in 0..=MAX_NEWTON_ITERATIONS {
        let res = stationary_residual(&sp, beta, omega, &phi);
        let pn = weighted_l2(grid, &phi);
        relres = weighted_l2(grid, &res) / pn.max(1e-300);
        history.push(relres);
        if !relres.is_finite() {
            return Err(Error::NonFinite(format!(
                "newton residual at iteration {iteration}"
            )));
        }
        if relres <= tol {
            if sup(&phi) < VACUUM_FRACTION * (2.0 * omega).sqrt() {
                return Err(Error::BranchNotFound(format!(
                    "iteration collapsed to the vacuum at frequency {omega}"
                )));
            }
            // Positivity distinguishes the ground state from excited branches,
            // whose negative lobes are O(sup); coarse grids leave sign-mixed
            // truncation ripples well below this.
            if phi.iter().any(|&p| p < -1e-2 * sup(&phi)) {
                return Err(Error::DegenerateBranch(format!(
                    "sign-changing profile at frequency {omega}"
                )));
            }
            return Ok(GroundState {
                grid: *grid,
                beta: beta.clone(),
                omega,
                phi,
                residual: relres,
                history,
            });
        }
        if iteration == MAX_NEWTON_ITERATIONS {
            break;
        }

        let wplus: Vec<f64> = phi
            .iter()
            .map(|&p| {
                let s = p * p;
                omega + beta.beta(s) + 2.0 * beta.beta_prime(s) * s
            })
            .collect();
        // The solve lives on the even sector, where L+ has no kernel; the
        // operator and data are symmetrized so roundoff cannot reintroduce
        // the odd translation mode.
        let apply = |v: &[f64]| -> Vec<f64> {
            let av = schrodinger_apply(&sp, &wplus, &to_complex(v));
            let mut out: Vec<f64> = av.iter().map(|z| z.re).collect();
            symmetrize_even(&mut out);
            out
        };
        let precond = |v: &[f64]| -> Vec<f64> {
            let mut vz = to_complex(v);
            sp.forward(&mut vz);
            for (z, kk) in vz.iter_mut().zip(&k2) {
                *z /= kk + omega;
            }
            sp.inverse(&mut vz);
            vz.iter().map(|z| z.re).collect()
        };
        let mut rhs = res;
        symmetrize_even(&mut rhs);
        // Inexact Newton: the inner tolerance follows the outer residual
        // down, and a short inner solve is acceptable as long as the line
        // search still sees sufficient decrease.
        let eta = (0.01 * relres).clamp(1e-10, 1e-6);
        let (delta, _) = gmres_real(apply, precond, &rhs, None, eta, 80, 2000)?;

        // Backtracking step with sufficient-decrease acceptance.
        let mut step = 1.0;
        let mut accepted = false;
        while step >= 1.0 / 256.0 {
            let mut cand: Vec<f64> = phi
                .iter()
                .zip(&delta)
                .map(|(&p, &d)| p - step * d)
                .collect();
            symmetrize_even(&mut cand);
            let crn = weighted_l2(grid, &stationary_residual(&sp, beta, omega, &cand))
                / weighted_l2(grid, &cand).max(1e-300);
            if crn.is_finite() && crn <= (1.0 - 0.25 * step) * relres {
                phi = cand;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return Err(Error::BranchNotFound(format!(
                "newton cannot descend at frequency {omega}; residual {relres:.3e}"
            )));
        }
        if sup(&phi) > amplitude_cap {
            return Err(Error::BranchNotFound(format!(
                "amplitude diverged at frequency {omega}"
            )));
        }
        if sup(&phi) < VACUUM_FRACTION * (2.0 * omega).sqrt() {
            return Err(Error::BranchNotFound(format!(
                "iteration collapsed to the vacuum at frequency {omega}"
            )));
        }
    }
    Err(Error::NewtonStalled {
        iterations: MAX_NEWTON_ITERATIONS,
        residual: relres,
    })
}

/// Radial Newton in the variable psi = x phi: the operator
/// -f'' - 2f'/x + w f on radial functions is -psi'' + w psi on odd psi,
/// which keeps every inner solve a line Schrodinger problem.
fn newton_radial(
    beta: &Nonlinearity,
    omega: f64,
    grid: &Grid,
    tol: f64,
    phi0: Vec<f64>,
    cold_start: bool,
) -> Result<GroundState> {
    let sp = Spectral::new(grid);
    let xs = grid.points();
    let n = grid.n();
    let mut psi: Vec<f64> = phi0.iter().zip(&xs).map(|(&p, &x)| p * x).collect();
    symmetrize_odd(&mut psi);
    if cold_start {
        psi = petviashvili_radial(beta, omega, grid, &sp, psi);
    }
    let amplitude_cap = BLOWUP_FACTOR * (1.0 + sup(&phi0));

    let k2 = sp.wavenumbers().iter().map(|&k| k * k).collect::<Vec<_>>();
    let line_l2 = |v: &[f64]| {
        let h = grid.spacing();
        (v.iter().map(|t| t * t).sum::<f64>() * h).sqrt()
    };
    // G(psi) = -psi'' + omega psi + beta(phi^2) psi = x F(phi), so the
    // relative L2 size of G against psi equals that of F against phi in the
    // radial volume measure.
    let residual_of = |sp: &Spectral, psi: &[f64], phi: &[f64]| -> Vec<f64> {
        let lap = sp.laplacian_line(&to_complex(psi));
        (0..n)
            .map(|i| -lap[i].re + (omega + beta.beta(phi[i] * phi[i])) * psi[i])
            .collect()
    };

    let mut phi = phi_from_psi(&sp, &xs, &psi);
    let mut history = Vec::new();
    let mut relres = f64::INFINITY;

    for iteration in 0..=MAX_NEWTON_ITERATIONS {
        let res = residual_of(&sp, &psi, &phi);
        relres = line_l2(&res) / line_l2(&psi).max(1e-300);
        history.push(relres);
        if !relres.is_finite() {
            return Err(Error::NonFinite(format!(
                "newton residual at iteration {iteration}"
            )));
        }
        if relres <= tol {
            if sup(&phi) < VACUUM_FRACTION * (2.0 * omega).sqrt() {
                return Err(Error::BranchNotFound(format!(
                    "iteration collapsed to the vacuum at frequency {omega}"
                )));
            }
            if phi.iter().any(|&p| p < -1e-2 * sup(&phi)) {
                return Err(Error::DegenerateBranch(format!(
                    "sign-changing profile at frequency {omega}"
                )));
            }
            return Ok(GroundState {
                grid: *grid,
                beta: beta.clone(),
                omega,
                phi,
                residual: relres,
                history,
            });
        }
        if iteration == MAX_NEWTON_ITERATIONS {
            break;
        }

        let wplus: Vec<f64> = phi
            .iter()
            .map(|&p| {
                let s = p * p;
                omega + beta.beta(s) + 2.0 * beta.beta_prime(s) * s
            })
            .collect();
        let apply = |v: &[f64]| -> Vec<f64> {
            let lap = sp.laplacian_line(&to_complex(v));
            let mut out: Vec<f64> = (0..n).map(|i| -lap[i].re + wplus[i] * v[i]).collect();
            symmetrize_odd(&mut out);
            out
        };
        let precond = |v: &[f64]| -> Vec<f64> {
            let mut vz = to_complex(v);
            sp.forward(&mut vz);
            for (z, kk) in vz.iter_mut().zip(&k2) {
                *z /= kk + omega;
            }
            sp.inverse(&mut vz);
            vz.iter().map(|z| z.re).collect()
        };
        let mut rhs = res;
        symmetrize_odd(&mut rhs);
        let eta = (0.01 * relres).clamp(1e-10, 1e-6);
        let (delta, _) = gmres_real(apply, precond, &rhs, None, eta, 80, 2000)?;

        let mut step = 1.0;
        let mut accepted = false;
        while step >= 1.0 / 256.0 {
            let mut cand: Vec<f64> = psi
                .iter()
                .zip(&delta)
                .map(|(&p, &d)| p - step * d)
                .collect();
            symmetrize_odd(&mut cand);
            let cphi = phi_from_psi(&sp, &xs, &cand);
            let crn = line_l2(&residual_of(&sp, &cand, &cphi)) / line_l2(&cand).max(1e-300);
            if crn.is_finite() && crn <= (1.0 - 0.25 * step) * relres {
                psi = cand;
                phi = cphi;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            return Err(Error::BranchNotFound(format!(
                "newton cannot descend at frequency {omega}; residual {relres:.3e}"
            )));
        }
        if sup(&phi) > amplitude_cap {
            return Err(Error::BranchNotFound(format!(
                "amplitude diverged at frequency {omega}"
            )));
        }
        if sup(&phi) < VACUUM_FRACTION * (2.0 * omega).sqrt() {
            return Err(Error::BranchNotFound(format!(
                "iteration collapsed to the vacuum at frequency {omega}"
            )));
        }
    }
    Err(Error::NewtonStalled {
        iterations: MAX_NEWTON_ITERATIONS,
        residual: relres,
    })
}

/// One sampled frequency on the branch.
#[derive(Clone, Debug, Serialize)]
pub struct FamilySample {
    pub omega: f64,
    pub q: f64,
    pub e: f64,
    pub d: f64,
    /// Centered-difference dq/domega (one-sided at the scan ends).
    pub q_prime: f64,
    #[serde(skip)]
    pub phi: Vec<f64>,
    /// Finite-difference dphi/domega on the scan spacing.
    #[serde(skip)]
    pub dphi: Vec<f64>,
}

/// The ground-state branch sampled on a frequency interval.
#[derive(Clone, Debug)]
pub struct SolitonFamily {
    pub grid: Grid,
    pub beta: Nonlinearity,
    pub samples: Vec<FamilySample>,
}

impl SolitonFamily {
    pub fn min_q_prime(&self) -> f64 {
        self.samples
            .iter()
            .map(|s| s.q_prime)
            .fold(f64::INFINITY, f64::min)
    }

    /// Strict monotonicity of the charge along the branch.
    pub fn charge_monotone(&self) -> bool {
        self.min_q_prime() > 0.0
    }

    pub fn nearest(&self, omega: f64) -> &FamilySample {
        self.samples
            .iter()
            .min_by(|a, b| {
                (a.omega - omega)
                    .abs()
                    .partial_cmp(&(b.omega - omega).abs())
                    .unwrap()
            })
            .expect("family is never empty")
    }
}

/// Walks the branch from a converged profile to `target` with adaptive
/// frequency steps, halving on Newton failure. Branches with steep charge
/// slope (flat-top profiles near a critical frequency) are only reachable
/// this way.
pub fn continue_profile(
    beta: &Nonlinearity,
    grid: &Grid,
    start_omega: f64,
    start_phi: &[f64],
    target: f64,
) -> Result<GroundState> {
    let mut omega = start_omega;
    let mut phi = start_phi.to_vec();
    let mut step = (target - start_omega) / 4.0;
    if step == 0.0 {
        return solve_ground_state_from(beta, target, grid, 1e-12, Some(&phi));
    }
    for _ in 0..400 {
        let remaining = target - omega;
        let next = if remaining.abs() <= step.abs() {
            target
        } else {
            omega + step
        };
        match solve_ground_state_from(beta, next, grid, 1e-12, Some(&phi)) {
            Ok(gs) => {
                if next == target {
                    return Ok(gs);
                }
                omega = next;
                phi = gs.phi;
                step *= 1.6;
            }
            Err(_) => {
                step *= 0.5;
                if step.abs() < 1e-7 * (1.0 + target.abs()) {
                    return Err(Error::BranchNotFound(format!(
                        "continuation stalled at frequency {omega:.6} en route to {target:.6}"
                    )));
                }
            }
        }
    }
    Err(Error::BranchNotFound(format!(
        "continuation budget exhausted en route to {target:.6}"
    )))
}

/// Cold solve at `omega`, or continuation from the nearest cold-reachable
/// anchor below when the plain Newton basin does not contain the sech seed.
fn reach_cold(beta: &Nonlinearity, grid: &Grid, omega: f64) -> Result<GroundState> {
    let first = solve_ground_state(beta, omega, grid, 1e-12);
    if first.is_ok() {
        return first;
    }
    for frac in [0.95, 0.9, 0.8, 0.65, 0.5] {
        if let Ok(anchor) = solve_ground_state(beta, frac * omega, grid, 1e-12) {
            return continue_profile(beta, grid, anchor.omega, &anchor.phi, omega);
        }
    }
    first
}

pub fn family_scan(
    beta: &Nonlinearity,
    omega_lo: f64,
    omega_hi: f64,
    n_samples: usize,
    grid: &Grid,
) -> Result<SolitonFamily> {
    if !(omega_lo > 0.0 && omega_hi > omega_lo) {
        return Err(Error::InvalidArgument(format!(
            "frequency window [{omega_lo}, {omega_hi}] must be positive and increasing"
        )));
    }
    if n_samples < 3 {
        return Err(Error::InvalidArgument(
            "family scan needs at least three samples".into(),
        ));
    }
    let h = (omega_hi - omega_lo) / (n_samples - 1) as f64;
    let mut profiles: Vec<GroundState> = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let omega = omega_lo + h * i as f64;
        let gs = match profiles.last() {
            None => reach_cold(beta, grid, omega)?,
            Some(prev) => {
                match solve_ground_state_from(beta, omega, grid, 1e-12, Some(&prev.phi)) {
                    Ok(gs) => gs,
                    Err(_) => continue_profile(beta, grid, prev.omega, &prev.phi, omega)?,
                }
            }
        };
        // Converged profiles carry a spectral-truncation floor at the
        // boundary well below this even when the analytic decay is far
        // smaller.
        let edge = gs.phi[0].abs();
        if edge > 1e-9 * sup(&gs.phi).max(1.0) {
            return Err(Error::Config(format!(
                "domain too small: profile at frequency {omega} is {edge:.2e} at the boundary"
            )));
        }
        profiles.push(gs);
    }

    let n = grid.n();
    let mut samples = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let gs = &profiles[i];
        let (q, e) = (gs.charge(), gs.energy());
        let (lo, hi, span) = if i == 0 {
            (0, 1, h)
        } else if i == n_samples - 1 {
            (n_samples - 2, n_samples - 1, h)
        } else {
            (i - 1, i + 1, 2.0 * h)
        };
        let q_prime = (profiles[hi].charge() - profiles[lo].charge()) / span;
        let dphi = (0..n)
            .map(|j| (profiles[hi].phi[j] - profiles[lo].phi[j]) / span)
            .collect();
        samples.push(FamilySample {
            omega: gs.omega,
            q,
            e,
            d: e + gs.omega * q,
            q_prime,
            phi: gs.phi.clone(),
            dphi,
        });
    }
    Ok(SolitonFamily {
        grid: *grid,
        beta: beta.clone(),
        samples,
    })
}

/// Eigenvalue counts of one scalar operator on one symmetry sector.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct SectorCounts {
    pub negative: usize,
    pub kernel: usize,
    pub lowest: f64,
}

/// Dense spectral summary of L+ and L- on the branch point.
#[derive(Clone, Debug, Serialize)]
pub struct LplusReport {
    pub omega: f64,
    /// Grid size actually used by the dense eigensolves.
    pub n_dense: usize,
    pub kernel_tolerance: f64,
    /// L+ restricted to the even (1d) or radial (3d) sector.
    pub lplus_even: SectorCounts,
    /// L+ on the full line; absent in the radial case.
    pub lplus_full: Option<SectorCounts>,
    /// Cosine of the angle between the full-line zero mode and dphi/dx.
    pub translation_overlap: Option<f64>,
    /// L- on the full line (1d) or radial sector (3d).
    pub lminus: SectorCounts,
    /// Relative L2 size of L- phi, which vanishes identically on the branch.
    pub lminus_phi_residual: f64,
}

/// Dense matrix of `-lap_line + potential` assembled column-by-column from
/// the same spectral operator used matrix-free.
pub(crate) fn dense_line_schrodinger(sp: &Spectral, potential: &[f64]) -> DMatrix<f64> {
    let n = potential.len();
    let mut mat = DMatrix::<f64>::zeros(n, n);
    let mut unit = vec![C64::new(0.0, 0.0); n];
    for j in 0..n {
        unit[j] = C64::new(1.0, 0.0);
        let lap = sp.laplacian_line(&unit);
        for i in 0..n {
            mat[(i, j)] = -lap[i].re;
        }
        mat[(j, j)] += potential[j];
        unit[j] = C64::new(0.0, 0.0);
    }
    // Exact symmetry keeps SymmetricEigen honest against roundoff skew.
    for i in 0..n {
        for j in 0..i {
            let avg = 0.5 * (mat[(i, j)] + mat[(j, i)]);
            mat[(i, j)] = avg;
            mat[(j, i)] = avg;
        }
    }
    mat
}

/// Projects a parity-commuting dense matrix onto the even sector:
/// basis e_0, (e_k + e_{n-k})/sqrt2 for 0 < k < n/2, e_{n/2}.
fn even_sector(mat: &DMatrix<f64>) -> DMatrix<f64> {
    let n = mat.nrows();
    let m = n / 2 + 1;
    let mut out = DMatrix::<f64>::zeros(m, m);
    let s2 = std::f64::consts::SQRT_2;
    for a in 0..m {
        for b in 0..m {
            let paired_a = a != 0 && a != n / 2;
            let paired_b = b != 0 && b != n / 2;
            let val = match (paired_a, paired_b) {
                (false, false) => mat[(a, b)],
                (false, true) => (mat[(a, b)] + mat[(a, n - b)]) / s2,
                (true, false) => (mat[(a, b)] + mat[(n - a, b)]) / s2,
                (true, true) => {
                    (mat[(a, b)] + mat[(a, n - b)] + mat[(n - a, b)] + mat[(n - a, n - b)]) / 2.0
                }
            };
            out[(a, b)] = val;
        }
    }
    out
}

/// Projects onto the odd sector: basis (e_k - e_{n-k})/sqrt2 for 0 < k < n/2.
fn odd_sector(mat: &DMatrix<f64>) -> DMatrix<f64> {
    let n = mat.nrows();
    let m = n / 2 - 1;
    let mut out = DMatrix::<f64>::zeros(m, m);
    for a in 0..m {
        for b in 0..m {
            let (i, j) = (a + 1, b + 1);
            out[(a, b)] = 0.5
                * (mat[(i, j)] - mat[(i, n - j)] - mat[(n - i, j)] + mat[(n - i, n - j)]);
        }
    }
    out
}

fn sector_counts(values: &[f64], kernel_tol: f64) -> SectorCounts {
    SectorCounts {
        negative: values.iter().filter(|&&v| v < -kernel_tol).count(),
        kernel: values.iter().filter(|&&v| v.abs() <= kernel_tol).count(),
        lowest: values.first().copied().unwrap_or(f64::NAN),
    }
}

/// Same report as [`check_lplus`] for a profile given by its parts rather
/// than a full solver result.
pub fn check_lplus_at(
    beta: Nonlinearity,
    grid: Grid,
    omega: f64,
    phi: &[f64],
) -> Result<LplusReport> {
    let gs = GroundState {
        grid,
        beta,
        omega,
        phi: phi.to_vec(),
        residual: 0.0,
        history: Vec::new(),
    };
    check_lplus(&gs)
}

pub fn check_lplus(gs: &GroundState) -> Result<LplusReport> {
    // Dense work happens on a grid no finer than DENSE_EIGEN_MAX_N.
    let (grid, phi) = if gs.grid.n() > DENSE_EIGEN_MAX_N {
        let coarse = Grid::new(gs.grid.dim(), DENSE_EIGEN_MAX_N, gs.grid.half_length())?;
        let sp_f = Spectral::new(&gs.grid);
        let sp_c = Spectral::new(&coarse);
        let down = resample(&sp_f, &sp_c, &to_complex(&gs.phi))?;
        (coarse, down.iter().map(|z| z.re).collect::<Vec<_>>())
    } else {
        (gs.grid, gs.phi.clone())
    };
    let sp = Spectral::new(&grid);
    let n = grid.n();

    let wplus: Vec<f64> = phi
        .iter()
        .map(|&p| {
            let s = p * p;
            gs.omega + gs.beta.beta(s) + 2.0 * gs.beta.beta_prime(s) * s
        })
        .collect();
    let wminus: Vec<f64> = phi
        .iter()
        .map(|&p| gs.omega + gs.beta.beta(p * p))
        .collect();

    let kmax = sp
        .wavenumbers()
        .iter()
        .fold(0.0f64, |m, &k| m.max(k.abs()));
    let radius = kmax * kmax + wplus.iter().fold(0.0f64, |m, &w| m.max(w.abs()));
    let kernel_tol = 1e-6 * radius;

    match grid.dim() {
        Dim::One => {
            let tplus = dense_line_schrodinger(&sp, &wplus);
            let (even_vals, _) = dense_symmetric_eigs(even_sector(&tplus));
            let (full_vals, full_vecs) = dense_symmetric_eigs(tplus);
            let lplus_full = sector_counts(&full_vals, kernel_tol);

            // Alignment of the full-line kernel with the translation mode.
            let dphi: Vec<f64> = sp
                .derivative(&to_complex(&phi))
                .iter()
                .map(|z| z.re)
                .collect();
            let dnorm = dphi.iter().map(|t| t * t).sum::<f64>().sqrt();
            let mut overlap = 0.0f64;
            for (val, vec) in full_vals.iter().zip(&full_vecs) {
                if val.abs() <= kernel_tol {
                    let dot: f64 = vec.iter().zip(&dphi).map(|(a, b)| a * b).sum();
                    let vn = vec.iter().map(|t| t * t).sum::<f64>().sqrt();
                    overlap = overlap.max(dot.abs() / (vn * dnorm).max(1e-300));
                }
            }

            let tminus = dense_line_schrodinger(&sp, &wminus);
            let (minus_vals, _) = dense_symmetric_eigs(tminus);

            let lm_phi = schrodinger_apply(&sp, &wminus, &to_complex(&phi));
            let lm_res: Vec<f64> = lm_phi.iter().map(|z| z.re).collect();
            let lminus_phi_residual =
                weighted_l2(&grid, &lm_res) / weighted_l2(&grid, &phi).max(1e-300);

            Ok(LplusReport {
                omega: gs.omega,
                n_dense: n,
                kernel_tolerance: kernel_tol,
                lplus_even: sector_counts(&even_vals, kernel_tol),
                lplus_full: Some(lplus_full),
                translation_overlap: Some(overlap),
                lminus: sector_counts(&minus_vals, kernel_tol),
                lminus_phi_residual,
            })
        }
        Dim::RadialThree => {
            // With psi = x phi, the radial operator -f'' - 2f'/x + w f acts as
            // the line operator -psi'' + w psi on odd psi; the radial sector
            // is exactly the odd sector of that line operator.
            let tplus_line = dense_line_schrodinger(&sp, &wplus);
            let (odd_vals, _) = dense_symmetric_eigs(odd_sector(&tplus_line));
            let tminus_line = dense_line_schrodinger(&sp, &wminus);
            let (modd_vals, _) = dense_symmetric_eigs(odd_sector(&tminus_line));

            // Measured on psi = x phi with the line operator, which is the
            // discretization the sector eigensolves above actually use; the
            // ratio equals |L- phi| / |phi| in the radial volume measure.
            let xs = grid.points();
            let psi: Vec<f64> = phi.iter().zip(&xs).map(|(&p, &x)| p * x).collect();
            let lap = sp.laplacian_line(&to_complex(&psi));
            let lm_res: Vec<f64> = (0..n)
                .map(|i| -lap[i].re + wminus[i] * psi[i])
                .collect();
            let line_l2 = |v: &[f64]| v.iter().map(|t| t * t).sum::<f64>().sqrt();
            let lminus_phi_residual = line_l2(&lm_res) / line_l2(&psi).max(1e-300);

            Ok(LplusReport {
                omega: gs.omega,
                n_dense: n,
                kernel_tolerance: kernel_tol,
                lplus_even: sector_counts(&odd_vals, kernel_tol),
                lplus_full: None,
                translation_overlap: None,
                lminus: sector_counts(&modd_vals, kernel_tol),
                lminus_phi_residual,
            })
        }
    }
}
