//! Soliton + radiation decomposition of a field.
//!
//! A field near the soliton manifold is written as
//!
//! ```text
//!   U(x) = e^{i sigma3 (v (x - D)/2 + theta)} (Phi_omega + R)(x - D),
//! ```
//!
//! with the moving-frame remainder R pinned by four secular conditions
//! (bilinear pairings against the adjoint generalized kernel):
//!
//! ```text
//!   Re <R | Phi> = 0,          Im <R | sigma3 dPhi/domega> = 0,
//!   Re <R | x Phi> = 0,        Im <R | sigma3 dPhi/dx> = 0.
//! ```
//!
//! [`fit_modulation`] solves these by Newton iteration in (omega, theta, D, v)
//! with analytic parameter derivatives, re-solving the profile at each
//! iterate, then splits R over the discrete spectrum into mode amplitudes z
//! and the continuous part f. [`reduced_coordinates`] inverts the charge and
//! momentum back into (omega, v); [`gauge_identities`] measures the exact
//! charge/momentum/energy splitting laws a fitted state must satisfy.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64 as C64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::field::{
    charge, energy, gauge_boost, momentum, pairing, Grid, Nonlinearity, Spectral, SpinorField,
};
use crate::groundstate::{solve_ground_state_from, SolitonFamily};
use crate::linearize::{EigenMode, LinearizedOperator};

const MAX_FIT_ITERATIONS: usize = 50;
/// Relative step for the on-the-fly omega-derivative of the profile.
const OMEGA_STEP_RELATIVE: f64 = 1e-4;
/// Consecutive residual increases treated as divergence.
const MAX_GROWTH_STEPS: usize = 5;

/// Starting point for the ansatz fit.
#[derive(Clone, Copy, Debug)]
pub struct ModulationGuess {
    pub omega: f64,
    pub theta: f64,
    pub d: f64,
    pub v: f64,
}

/// A fitted decomposition: frame parameters, mode amplitudes, and the
/// continuous remainder.
#[derive(Clone, Debug)]
pub struct ModulationState {
    pub omega: f64,
    /// Phase, reduced to (-pi, pi].
    pub theta: f64,
    pub d: f64,
    pub v: f64,
    /// Internal-mode amplitudes; the sigma1-partner amplitudes are their
    /// conjugates for physical fields.
    pub z: Vec<C64>,
    /// Continuous (dispersive) part of the remainder, annihilated by the
    /// adjoint-kernel and mode duals.
    pub f: SpinorField,
    /// (charge, momentum) of `f`.
    pub rho: (f64, f64),
    /// Profile and its omega-derivative at the fitted frequency.
    pub phi: Vec<f64>,
    pub dphi: Vec<f64>,
    /// Final normalized secular residual.
    pub residual: f64,
    pub iterations: usize,
}

/// Residuals of the splitting laws for charge, momentum, and energy, plus
/// the momentum identity Pi(Phi + R) = Pi(R).
#[derive(Clone, Copy, Debug, Serialize)]
pub struct GaugeResiduals {
    pub charge: f64,
    pub momentum: f64,
    pub energy: f64,
    pub remainder_momentum: f64,
}

impl ModulationState {
    /// The moving-frame remainder R = sum_j (z_j xi_j + conj(z_j) sigma1
    /// xi_j) + f.
    pub fn remainder(&self, modes: &[EigenMode]) -> Result<SpinorField> {
        if modes.len() != self.z.len() {
            return Err(Error::InvalidArgument(format!(
                "state carries {} mode amplitudes but {} modes were given",
                self.z.len(),
                modes.len()
            )));
        }
        let mut r = self.f.clone();
        for (zj, m) in self.z.iter().zip(modes) {
            r.axpy(*zj, &m.xi);
            r.axpy(zj.conj(), &m.xi.sigma1());
        }
        Ok(r)
    }

    /// The soliton profile as a spinor in the moving frame.
    pub fn soliton(&self) -> SpinorField {
        SpinorField::symmetric_real(self.f.grid(), &self.phi)
    }

    /// Rebuilds the lab-frame field from the fitted data.
    pub fn reconstruct(&self, modes: &[EigenMode]) -> Result<SpinorField> {
        let inner = self.soliton().add(&self.remainder(modes)?);
        gauge_boost(&inner, self.v, self.theta, self.d)
    }

    pub fn guess(&self) -> ModulationGuess {
        ModulationGuess {
            omega: self.omega,
            theta: self.theta,
            d: self.d,
            v: self.v,
        }
    }
}

fn wrap_angle(t: f64) -> f64 {
    let two_pi = 2.0 * std::f64::consts::PI;
    let mut w = t.rem_euclid(two_pi);
    if w > std::f64::consts::PI {
        w -= two_pi;
    }
    w
}

fn i_sigma3(f: &SpinorField) -> SpinorField {
    f.sigma3().scaled(C64::new(0.0, 1.0))
}

fn d_dx(sp: &Spectral, f: &SpinorField) -> SpinorField {
    SpinorField::from_components(f.grid(), sp.derivative(&f.c1), sp.derivative(&f.c2))
        .expect("component lengths match the grid")
}

/// Profile and omega-derivative at `omega`, warm-started from `init`.
fn profile_pair(
    beta: &Nonlinearity,
    grid: &Grid,
    omega: f64,
    init: &[f64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let gs = solve_ground_state_from(beta, omega, grid, 1e-12, Some(init))?;
    let step = OMEGA_STEP_RELATIVE * omega;
    let hi = solve_ground_state_from(beta, omega + step, grid, 1e-12, Some(&gs.phi))?;
    let lo = solve_ground_state_from(beta, omega - step, grid, 1e-12, Some(&gs.phi))?;
    let dphi = hi
        .phi
        .iter()
        .zip(&lo.phi)
        .map(|(a, b)| (a - b) / (2.0 * step))
        .collect();
    Ok((gs.phi, dphi))
}

/// R(y) = e^{-i sigma3 (v y/2 + theta)} U(y + D) - Phi(y).
fn frame_remainder(
    u: &SpinorField,
    sp: &Spectral,
    phi: &[f64],
    theta: f64,
    d: f64,
    v: f64,
) -> SpinorField {
    let c1t = sp.translate(&u.c1, -d);
    let c2t = sp.translate(&u.c2, -d);
    let grid = u.grid();
    let n = grid.n();
    let mut c1 = Vec::with_capacity(n);
    let mut c2 = Vec::with_capacity(n);
    for i in 0..n {
        let ph = -(0.5 * v * grid.x(i) + theta);
        let e = C64::new(ph.cos(), ph.sin());
        c1.push(e * c1t[i] - phi[i]);
        c2.push(e.conj() * c2t[i] - phi[i]);
    }
    SpinorField::from_components(grid, c1, c2).expect("component lengths match the grid")
}

/// Duals of the four secular conditions:
/// [Phi, sigma3 dPhi/domega, x Phi, sigma3 dPhi/dx].
fn secular_duals(
    grid: &Grid,
    sp: &Spectral,
    phi: &[f64],
    dphi: &[f64],
) -> [SpinorField; 4] {
    let phi_sp = SpinorField::symmetric_real(grid, phi);
    let dphi_sp = SpinorField::symmetric_real(grid, dphi);
    let dx_phi = d_dx(sp, &phi_sp);
    [
        phi_sp.clone(),
        dphi_sp.sigma3(),
        phi_sp.mul_x(),
        dx_phi.sigma3(),
    ]
}

/// The four secular values; entries 0 and 2 are real parts, 1 and 3
/// imaginary parts of the bilinear pairings.
fn secular_values(r: &SpinorField, duals: &[SpinorField; 4]) -> [f64; 4] {
    let p0 = pairing(r, &duals[0]);
    let p1 = pairing(r, &duals[1]);
    let p2 = pairing(r, &duals[2]);
    let p3 = pairing(r, &duals[3]);
    [p0.re, p1.im, p2.re, p3.im]
}

fn extract(k: usize, z: C64) -> f64 {
    if k % 2 == 0 {
        z.re
    } else {
        z.im
    }
}

/// Fits the moving-soliton ansatz to `u` by Newton iteration on the four
/// secular conditions, then projects the remainder onto the given internal
/// modes. `modes` must belong to the same branch; pass an empty slice when
/// the spectrum has none.
pub fn fit_modulation(
    u: &SpinorField,
    guess: &ModulationGuess,
    family: &SolitonFamily,
    modes: &[EigenMode],
    fit_tol: f64,
) -> Result<ModulationState> {
    if *u.grid() != family.grid {
        return Err(Error::InvalidArgument(
            "field and family live on different grids".into(),
        ));
    }
    if !(fit_tol >= 1e-14) {
        return Err(Error::InvalidArgument(format!(
            "fit tolerance {fit_tol} below the attainable floor"
        )));
    }
    let grid = u.grid();
    let sp = Spectral::new(grid);
    let beta = &family.beta;
    let omega_lo = family.samples.first().map(|s| s.omega).unwrap_or(0.0);
    let omega_hi = family.samples.last().map(|s| s.omega).unwrap_or(0.0);
    let span = (omega_hi - omega_lo).max(0.1 * omega_hi);

    let mut omega = guess.omega;
    let mut theta = guess.theta;
    let mut d = guess.d;
    let mut v = guess.v;
    let mut warm = family.nearest(omega).phi.clone();
    let mut last_res = f64::INFINITY;
    let mut growth = 0usize;

    for iter in 0..MAX_FIT_ITERATIONS {
        if ![omega, theta, d, v].iter().all(|t| t.is_finite()) {
            return Err(Error::NonFinite("modulation parameters".into()));
        }
        if omega < omega_lo - 0.5 * span || omega > omega_hi + 0.5 * span {
            return Err(Error::SolveDiverged(format!(
                "fitted frequency {omega:.4} left the branch window [{omega_lo:.4}, {omega_hi:.4}]"
            )));
        }
        let (phi, dphi) = profile_pair(beta, grid, omega, &warm)?;
        warm.clone_from(&phi);
        let duals = secular_duals(grid, &sp, &phi, &dphi);
        let r = frame_remainder(u, &sp, &phi, theta, d, v);
        let fvals = secular_values(&r, &duals);

        let phi_sp = SpinorField::symmetric_real(grid, &phi);
        let size = phi_sp.norm() + r.norm();
        let res = fvals
            .iter()
            .zip(&duals)
            .map(|(f, dual)| f.abs() / (dual.norm() * size).max(1e-300))
            .fold(0.0f64, f64::max);

        if res <= fit_tol {
            return finalize_fit(
                u, family, modes, omega, theta, d, v, phi, dphi, r, res, iter,
            );
        }
        if res >= last_res {
            growth += 1;
            if growth >= MAX_GROWTH_STEPS {
                return Err(Error::SolveDiverged(format!(
                    "secular residual stopped decreasing at {res:.3e}"
                )));
            }
        } else {
            growth = 0;
        }
        last_res = res;

        // Analytic parameter derivatives of R at the current frame.
        let pr = phi_sp.add(&r);
        let col_omega = SpinorField::symmetric_real(grid, &dphi).scaled(C64::new(-1.0, 0.0));
        let col_theta = i_sigma3(&pr).scaled(C64::new(-1.0, 0.0));
        let mut col_d = d_dx(&sp, &pr);
        col_d.axpy(C64::new(0.0, 0.5 * v), &pr.sigma3());
        let col_v = i_sigma3(&pr).mul_x().scaled(C64::new(-0.5, 0.0));
        let cols = [col_omega, col_theta, col_d, col_v];

        let mut jac = DMatrix::<f64>::zeros(4, 4);
        for (l, col) in cols.iter().enumerate() {
            for (k, dual) in duals.iter().enumerate() {
                jac[(k, l)] = extract(k, pairing(col, dual));
            }
        }
        let rhs = DVector::from_iterator(4, fvals.iter().map(|f| -f));
        let lu = jac.full_piv_lu();
        let Some(delta) = lu.solve(&rhs) else {
            return Err(Error::DegenerateBranch(
                "secular Jacobian is singular (charge slope vanishes?)".into(),
            ));
        };
        // Clamp wild frequency steps; the profile solve cannot follow them.
        let mut scale = 1.0f64;
        if delta[0].abs() > 0.2 * omega {
            scale = 0.2 * omega / delta[0].abs();
        }
        omega += scale * delta[0];
        theta += scale * delta[1];
        d += scale * delta[2];
        v += scale * delta[3];
    }
    Err(Error::NewtonStalled {
        iterations: MAX_FIT_ITERATIONS,
        residual: last_res,
    })
}

#[allow(clippy::too_many_arguments)]
fn finalize_fit(
    u: &SpinorField,
    family: &SolitonFamily,
    modes: &[EigenMode],
    omega: f64,
    theta: f64,
    d: f64,
    v: f64,
    phi: Vec<f64>,
    dphi: Vec<f64>,
    r: SpinorField,
    residual: f64,
    iterations: usize,
) -> Result<ModulationState> {
    let h = LinearizedOperator::assemble_from_profile(&family.beta, u.grid(), omega, &phi)?;
    let dec = h.spectral_project(modes, &r)?;
    let f = dec.continuous;
    let rho = (charge(&f), momentum(&f));
    Ok(ModulationState {
        omega,
        theta: wrap_angle(theta),
        d,
        v,
        z: dec.z,
        f,
        rho,
        phi,
        dphi,
        residual,
        iterations,
    })
}

/// Inverts total charge and momentum into frame parameters: solves
/// q(omega) + Q(R) = Q for omega along the family, then
/// v = 2 (Pi - Pi(R)) / Q.
pub fn reduced_coordinates(
    q_total: f64,
    pi_total: f64,
    state: &ModulationState,
    modes: &[EigenMode],
    family: &SolitonFamily,
) -> Result<(f64, f64)> {
    if q_total <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "total charge {q_total} is not positive"
        )));
    }
    let r = state.remainder(modes)?;
    let q_r = charge(&r);
    let pi_r = momentum(&r);
    let q_target = q_total - q_r;

    let (mut q_lo, mut q_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in &family.samples {
        q_lo = q_lo.min(s.q);
        q_hi = q_hi.max(s.q);
    }
    if q_target < q_lo - 1e-9 || q_target > q_hi + 1e-9 {
        return Err(Error::BranchNotFound(format!(
            "soliton charge {q_target:.6} falls outside the scanned branch range [{q_lo:.6}, {q_hi:.6}]"
        )));
    }

    let start = family
        .samples
        .iter()
        .min_by(|a, b| {
            (a.q - q_target)
                .abs()
                .partial_cmp(&(b.q - q_target).abs())
                .unwrap()
        })
        .expect("family is never empty");
    let mut omega = start.omega;
    let mut warm = start.phi.clone();
    let omega_lo = family.samples.first().map(|s| s.omega).unwrap();
    let omega_hi = family.samples.last().map(|s| s.omega).unwrap();

    for _ in 0..40 {
        let gs = solve_ground_state_from(&family.beta, omega, &family.grid, 1e-12, Some(&warm))?;
        warm.clone_from(&gs.phi);
        let err = gs.charge() - q_target;
        if err.abs() <= 1e-12 * (1.0 + q_target.abs()) {
            let v = 2.0 * (pi_total - pi_r) / q_total;
            return Ok((omega, v));
        }
        let q_prime = family.nearest(omega).q_prime;
        if !(q_prime > 1e-10) {
            return Err(Error::DegenerateBranch(format!(
                "charge slope {q_prime:.3e} too small to invert q(omega)"
            )));
        }
        omega = (omega - err / q_prime).clamp(
            omega_lo - 0.1 * (omega_hi - omega_lo),
            omega_hi + 0.1 * (omega_hi - omega_lo),
        );
    }
    Err(Error::NewtonStalled {
        iterations: 40,
        residual: f64::NAN,
    })
}

/// Residuals of the exact splitting laws at a fitted state:
///
/// ```text
///   Q(U) = q(omega) + Q(R),
///   Pi(U) = Pi(R) + (v/2) Q(Phi + R),
///   E(U) = E(Phi + R) + v Pi(Phi + R) + (v^2/4) Q(Phi + R),
/// ```
///
/// plus Pi(Phi + R) - Pi(R), which vanishes through the translation secular
/// condition.
pub fn gauge_identities(
    u: &SpinorField,
    state: &ModulationState,
    modes: &[EigenMode],
    beta: &Nonlinearity,
) -> Result<GaugeResiduals> {
    let r = state.remainder(modes)?;
    let phi_sp = state.soliton();
    let pr = phi_sp.add(&r);
    let q_phi = charge(&phi_sp);

    let charge_res = (charge(u) - q_phi - charge(&r)).abs();
    let momentum_res = (momentum(u) - (momentum(&r) + 0.5 * state.v * charge(&pr))).abs();
    let energy_res = (energy(u, beta)
        - (energy(&pr, beta) + state.v * momentum(&pr) + 0.25 * state.v * state.v * charge(&pr)))
    .abs();
    let remainder_momentum = (momentum(&pr) - momentum(&r)).abs();
    Ok(GaugeResiduals {
        charge: charge_res,
        momentum: momentum_res,
        energy: energy_res,
        remainder_momentum,
    })
}
