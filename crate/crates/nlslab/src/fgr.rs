//! Resonant mode-radiation couplings and the Fermi-golden-rule coefficient.
//!
//! An internal-mode pair `z xi + zbar sigma1 xi` drives the continuous
//! component at the combination frequencies `lambda . alpha`. Once such a
//! frequency sits inside the essential spectrum, the driven response
//! radiates and the mode amplitude obeys, at leading order,
//!
//! ```text
//!     d/dt ( lambda |zeta|^2 ) = -Gamma |zeta^alpha|^2,
//!     Gamma = 2 Lambda Im < R+(Lambda) G | sigma3 conj G >,
//! ```
//!
//! with `G` the resonant coupling field. This module extracts the couplings
//! from the quadratic Taylor coefficient of the stationary operator at the
//! soliton, evaluates `Gamma` through the limiting-absorption ladder,
//! cross-checks it against the radiated far-field flux, decides the
//! nondegeneracy of the resonant family, and integrates the reduced mode
//! equation.

use num_complex::Complex64 as C64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{embed, pairing, weighted_l2, Grid, Nonlinearity, SpinorField};
use crate::linearize::LinearizedOperator;
use crate::resolvent::{
    cap_profile_custom, krylov_resolve, ladder_epsilon0, limiting_resolvent_detailed,
    MonomialKey, CAP_TO_EPSILON, LADDER_RESIDUAL_TOL, LAP_WEIGHT,
};
use crate::spectrum::DiscreteSpectrum;
use crate::thread_pool;

/// Accepted defect in the coupling symmetry `G_{mu nu} = -sigma1 conj G_{nu mu}`.
pub const COUPLING_SKEW_TOL: f64 = 1e-10;
/// Relative weighted-norm target of the ladder solve behind `Gamma`.
pub const FGR_LADDER_RTOL: f64 = 3e-5;
/// Smallest relative Gram singular value of a nondegenerate resonant family.
pub const NONDEGENERACY_THRESHOLD: f64 = 1e-6;
/// A coefficient counts as resolved when it exceeds this multiple of its own
/// ladder uncertainty.
pub const GAMMA_RESOLVED_FACTOR: f64 = 10.0;
/// Far-field amplitudes are read on a domain at least this much larger than
/// the operator's own.
const FAR_FIELD_MIN_FACTOR: usize = 4;
/// The two far-field absorptions, as fractions of the ladder epsilon0. Small
/// enough that the window damping is mild, extrapolated pairwise to zero.
const FAR_FIELD_EPS: [f64; 2] = [0.25, 0.125];
/// The far-field sponge occupies the outer quarter of the enlarged domain;
/// wider than the ladder's so the weak absorptions above stay wrap-free.
const FAR_FIELD_CAP_WIDTH: f64 = 0.25;
/// Amplitude-reading window, as fractions of the enlarged half length.
const FAR_FIELD_WINDOW: (f64, f64) = (0.20, 0.35);
/// Steps per mode period demanded of the reduced-ODE integrator.
const PERIOD_RESOLUTION: f64 = 100.0;
/// Relative slack when matching `lambda . alpha` against `Lambda`.
const RESONANCE_MATCH_TOL: f64 = 1e-9;

/// Quadratic Taylor coefficient of the doubled stationary operator at the
/// profile: with `S(U) = -Lap U + omega U + beta(U_1 U_2) U` and
/// `S(Phi + R) = L R + N2(R) + O(R^3)`,
///
/// ```text
///     N2(R)_1 = beta' phi [ R1 R2 + (R1 + R2) R1 ] + 1/2 beta'' phi^3 (R1 + R2)^2
/// ```
///
/// and the second component with `R1 <-> R2`.
fn quadratic_force(beta: &Nonlinearity, phi: &[f64], r: &SpinorField) -> SpinorField {
    let grid = r.grid();
    let n = grid.n();
    let mut c1 = Vec::with_capacity(n);
    let mut c2 = Vec::with_capacity(n);
    for i in 0..n {
        let p = phi[i];
        let s = p * p;
        let bp = beta.beta_prime(s);
        let bpp = beta.beta_second(s);
        let r1 = r.c1[i];
        let r2 = r.c2[i];
        let sum = r1 + r2;
        let prod = r1 * r2;
        let curv = 0.5 * bpp * p * s * (sum * sum);
        c1.push(bp * p * (prod + sum * r1) + curv);
        c2.push(bp * p * (prod + sum * r2) + curv);
    }
    SpinorField::from_components(grid, c1, c2).expect("component lengths match")
}

/// Symmetric bilinear extension of [`quadratic_force`] by polarization.
fn polarized_force(
    beta: &Nonlinearity,
    phi: &[f64],
    x: &SpinorField,
    y: &SpinorField,
) -> SpinorField {
    let mut out = quadratic_force(beta, phi, &x.add(y));
    out.axpy(C64::new(-1.0, 0.0), &quadratic_force(beta, phi, x));
    out.axpy(C64::new(-1.0, 0.0), &quadratic_force(beta, phi, y));
    out.scaled(C64::new(0.5, 0.0))
}

/// Multi-indices `alpha` with `|alpha| = 2` whose combination frequency
/// `lambda . alpha` lies inside the essential spectrum while every partial
/// sum `lambda . alpha - lambda_k` stays below it.
pub fn resonant_set(lambdas: &[f64], omega: f64) -> Vec<Vec<usize>> {
    let m = lambdas.len();
    let mut out = Vec::new();
    for j in 0..m {
        for l in j..m {
            let total = lambdas[j] + lambdas[l];
            if total > omega && total - lambdas[j] < omega && total - lambdas[l] < omega {
                let mut alpha = vec![0usize; m];
                alpha[j] += 1;
                alpha[l] += 1;
                out.push(alpha);
            }
        }
    }
    out
}

fn delta(m: usize, j: usize) -> Vec<usize> {
    let mut v = vec![0usize; m];
    v[j] = 1;
    v
}

fn add_idx(a: &[usize], b: &[usize]) -> Vec<usize> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

/// Coupling fields of every order-2 monomial that multiplies the continuous
/// component linearly in the expanded Hamiltonian: projecting the mode
/// substitution `R = sum_j z_j xi_j + zbar_j sigma1 xi_j + f` through the
/// quadratic force,
///
/// ```text
///     G_{mu nu} = P_c sigma3 [ coefficient of z^mu zbar^nu in N2 ].
/// ```
///
/// The symmetry `G_{mu nu} = -sigma1 conj G_{nu mu}` holds by construction
/// and is asserted before returning. Resonance orders beyond the quadratic
/// one would need higher Taylor coefficients and are not supported.
pub fn leading_couplings(
    h: &LinearizedOperator,
    modes: &DiscreteSpectrum,
) -> Result<Vec<(MonomialKey, SpinorField)>> {
    let m = modes.mode_count();
    if m == 0 {
        return Err(Error::InvalidArgument(
            "no internal modes: there are no mode-radiation couplings".into(),
        ));
    }
    for (j, n_j) in modes.n_j.iter().enumerate() {
        if *n_j != 1 {
            return Err(Error::NotSupported(format!(
                "mode {j} has resonance order {n_j}; only order-1 (quadratic) couplings are built"
            )));
        }
    }
    let grid = h.grid();
    for mode in &modes.modes {
        if mode.xi.grid() != grid {
            return Err(Error::InvalidArgument(
                "discrete modes live on a different grid than the operator".into(),
            ));
        }
    }
    let beta = h.beta();
    let phi = h.phi();
    let project = |v: SpinorField| -> Result<SpinorField> {
        Ok(h.spectral_project(&modes.modes, &v)?.continuous)
    };

    let mut entries: Vec<(MonomialKey, SpinorField)> = Vec::new();
    let zero = vec![0usize; m];
    for j in 0..m {
        let xi_j = &modes.modes[j].xi;
        // z_j z_l and zbar_j zbar_l blocks, multiplicity 2 off the diagonal.
        for l in j..m {
            let xi_l = &modes.modes[l].xi;
            let mult = if j == l { 1.0 } else { 2.0 };
            let base = polarized_force(beta, phi, xi_j, xi_l)
                .sigma3()
                .scaled(C64::new(mult, 0.0));
            let mu = add_idx(&delta(m, j), &delta(m, l));
            entries.push((MonomialKey::new(mu.clone(), zero.clone(), 1)?, project(base)?));

            let base_bar = polarized_force(beta, phi, &xi_j.sigma1(), &xi_l.sigma1())
                .sigma3()
                .scaled(C64::new(mult, 0.0));
            entries.push((MonomialKey::new(zero.clone(), mu, 1)?, project(base_bar)?));
        }
        // z_j zbar_l blocks: the two slots are distinct for every (j, l).
        for l in 0..m {
            let xi_l = &modes.modes[l].xi;
            let base = polarized_force(beta, phi, xi_j, &xi_l.sigma1())
                .sigma3()
                .scaled(C64::new(2.0, 0.0));
            entries.push((
                MonomialKey::new(delta(m, j), delta(m, l), 1)?,
                project(base)?,
            ));
        }
    }

    let scale = entries
        .iter()
        .map(|(_, g)| g.norm())
        .fold(1.0_f64, f64::max);
    for (key, g) in &entries {
        let partner = entries
            .iter()
            .find(|(k, _)| k.mu == key.nu && k.nu == key.mu)
            .expect("every monomial is built with its conjugate partner");
        let defect = g.add(&partner.1.conj().sigma1()).norm();
        if defect > COUPLING_SKEW_TOL * scale {
            return Err(Error::ContractViolation(format!(
                "coupling symmetry defect {defect:.3e} exceeds {COUPLING_SKEW_TOL:.1e} \
                 (scale {scale:.3e})"
            )));
        }
    }
    Ok(entries)
}

/// Unit-coefficient sum of the couplings `G_{alpha 0}` whose combination
/// frequency matches `Lambda`.
fn resonant_sum(
    grid: &Grid,
    lambdas: &[f64],
    couplings: &[(MonomialKey, SpinorField)],
    lambda_big: f64,
) -> Result<SpinorField> {
    let mut sum = SpinorField::zero(grid);
    let mut hits = 0usize;
    for (key, g) in couplings {
        if g.grid() != grid {
            return Err(Error::InvalidArgument(
                "coupling field lives on a different grid than the operator".into(),
            ));
        }
        if key.nu.iter().any(|&v| v != 0) {
            continue;
        }
        let freq: f64 = key
            .mu
            .iter()
            .zip(lambdas)
            .map(|(&p, &l)| p as f64 * l)
            .sum();
        if (freq - lambda_big).abs() <= RESONANCE_MATCH_TOL * lambda_big.abs() {
            sum.axpy(C64::new(1.0, 0.0), g);
            hits += 1;
        }
    }
    if hits == 0 {
        return Err(Error::InvalidArgument(format!(
            "no coupling oscillates at Lambda = {lambda_big}"
        )));
    }
    Ok(sum)
}

/// The damping coefficient with its ladder-propagated uncertainty.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct FgrCoefficient {
    pub gamma: f64,
    /// Cauchy-Schwarz propagation of the ladder's weighted-norm uncertainty
    /// through the pairing; absolute.
    pub uncertainty: f64,
    /// Domain doublings the ladder needed.
    pub doublings: usize,
}

/// `Gamma = 2 Lambda Im < R+(Lambda) G | sigma3 conj G >` over the resonant
/// couplings at `Lambda`, evaluated with the extrapolated outgoing solve.
/// Semipositivity is asserted up to the reported uncertainty.
pub fn fgr_coefficient(
    h: &LinearizedOperator,
    modes: &DiscreteSpectrum,
    couplings: &[(MonomialKey, SpinorField)],
    lambda_big: f64,
) -> Result<FgrCoefficient> {
    let lambdas = modes.lambdas();
    let g = resonant_sum(h.grid(), &lambdas, couplings, lambda_big)?;
    if g.norm() == 0.0 {
        return Ok(FgrCoefficient {
            gamma: 0.0,
            uncertainty: 0.0,
            doublings: 0,
        });
    }
    let solve = limiting_resolvent_detailed(h, lambda_big, &g, FGR_LADDER_RTOL)?;
    let g_big = embed(&g, solve.field.grid())?;
    let ip = pairing(&solve.field, &g_big.conj().sigma3());
    let gamma = 2.0 * lambda_big * ip.im;
    let uncertainty = 2.0 * lambda_big * solve.uncertainty * weighted_l2(&g_big, -LAP_WEIGHT);
    if gamma < -uncertainty {
        return Err(Error::ContractViolation(format!(
            "damping coefficient {gamma:.6e} is negative beyond its uncertainty {uncertainty:.3e}"
        )));
    }
    Ok(FgrCoefficient {
        gamma,
        uncertainty,
        doublings: solve.doublings,
    })
}

/// Outgoing far-field amplitudes `(a+, a-)` of `R+(Lambda) g` in the
/// propagating channel.
///
/// Two weakly absorbed solves are read in a window clear of both the core
/// and the sponge, each de-phased with its exact complex wavenumber
/// `k_eps = sqrt(Lambda - omega + i eps)`, then extrapolated to `eps = 0`.
fn radiated_amplitudes(
    h: &LinearizedOperator,
    lambda_big: f64,
    g: &SpinorField,
) -> Result<[C64; 2]> {
    let omega = h.omega();
    let k2 = lambda_big - omega;
    if k2 <= 0.0 {
        return Err(Error::EdgeProximity {
            frequency: lambda_big,
            margin: k2,
        });
    }
    let big = h.embedded(FAR_FIELD_MIN_FACTOR)?;
    let grid = *LinearizedOperator::grid(&big);
    let eps0 = ladder_epsilon0(&grid, k2.sqrt());
    let cap = cap_profile_custom(&grid, CAP_TO_EPSILON * eps0, FAR_FIELD_CAP_WIDTH);
    let rhs = embed(g, &grid)?;
    let solves: Vec<SpinorField> = thread_pool().install(|| {
        FAR_FIELD_EPS
            .par_iter()
            .map(|&fr| {
                krylov_resolve(
                    &big,
                    C64::new(lambda_big, fr * eps0),
                    &rhs,
                    None,
                    Some(&cap),
                    LADDER_RESIDUAL_TOL,
                )
            })
            .collect::<Result<Vec<_>>>()
    })?;

    let l = grid.half_length();
    let (lo, hi) = (FAR_FIELD_WINDOW.0 * l, FAR_FIELD_WINDOW.1 * l);
    let read = |w: &SpinorField, eps: f64| -> [C64; 2] {
        let keps = C64::new(k2, eps).sqrt();
        let mut right = C64::new(0.0, 0.0);
        let mut left = C64::new(0.0, 0.0);
        let mut count = 0usize;
        for i in 0..grid.n() {
            let x = grid.x(i);
            if x >= lo && x <= hi {
                right += w.c1[i] * (-C64::i() * keps * x).exp();
                count += 1;
            } else if x >= -hi && x <= -lo {
                left += w.c1[i] * (C64::i() * keps * x).exp();
            }
        }
        let n = count.max(1) as f64;
        [right / n, left / n]
    };
    let coarse = read(&solves[0], FAR_FIELD_EPS[0] * eps0);
    let fine = read(&solves[1], FAR_FIELD_EPS[1] * eps0);
    Ok([
        2.0 * fine[0] - coarse[0],
        2.0 * fine[1] - coarse[1],
    ])
}

/// `Gamma` from the radiated flux, `2 Lambda k (|a+|^2 + |a-|^2)`: the d = 1
/// sphere integral of the resonant amplitude of the summed coupling. An
/// independent discretization of [`fgr_coefficient`]'s pairing.
pub fn far_field_gamma(
    h: &LinearizedOperator,
    modes: &DiscreteSpectrum,
    couplings: &[(MonomialKey, SpinorField)],
    lambda_big: f64,
) -> Result<f64> {
    let g = resonant_sum(h.grid(), &modes.lambdas(), couplings, lambda_big)?;
    if g.norm() == 0.0 {
        return Ok(0.0);
    }
    let a = radiated_amplitudes(h, lambda_big, &g)?;
    let k = (lambda_big - h.omega()).sqrt();
    Ok(2.0 * lambda_big * k * (a[0].norm_sqr() + a[1].norm_sqr()))
}

/// Nondegeneracy of the resonant coupling family on the d = 1 resonant
/// sphere `{+k, -k}`.
#[derive(Clone, Copy, Debug, serde::Serialize)]
pub struct Nondegeneracy {
    pub nondegenerate: bool,
    /// Smallest Gram eigenvalue of the far-field amplitude vectors, relative
    /// to the squared coupling norms.
    pub margin: f64,
}

/// Tests linear independence of the resonant couplings through the Gram
/// matrix of their far-field amplitude vectors.
pub fn fgr_nondegeneracy(
    h: &LinearizedOperator,
    modes: &DiscreteSpectrum,
    couplings: &[(MonomialKey, SpinorField)],
    lambda_big: f64,
) -> Result<Nondegeneracy> {
    let lambdas = modes.lambdas();
    let mut family: Vec<&SpinorField> = Vec::new();
    for (key, g) in couplings {
        if key.nu.iter().any(|&v| v != 0) {
            continue;
        }
        let freq: f64 = key
            .mu
            .iter()
            .zip(&lambdas)
            .map(|(&p, &l)| p as f64 * l)
            .sum();
        if (freq - lambda_big).abs() <= RESONANCE_MATCH_TOL * lambda_big.abs() {
            family.push(g);
        }
    }
    let scale: f64 = family.iter().map(|g| g.norm() * g.norm()).sum();
    if family.is_empty() || scale == 0.0 {
        return Ok(Nondegeneracy {
            nondegenerate: false,
            margin: 0.0,
        });
    }
    let mut amps = Vec::with_capacity(family.len());
    for g in &family {
        amps.push(radiated_amplitudes(h, lambda_big, g)?);
    }
    // Hermitian PSD Gram, embedded as a real symmetric matrix; its spectrum
    // is the Gram's doubled.
    let r = amps.len();
    let mut gram = nalgebra::DMatrix::<f64>::zeros(2 * r, 2 * r);
    for a in 0..r {
        for b in 0..r {
            let m: C64 = (0..2).map(|s| amps[a][s] * amps[b][s].conj()).sum();
            gram[(a, b)] = m.re;
            gram[(a + r, b + r)] = m.re;
            gram[(a, b + r)] = -m.im;
            gram[(a + r, b)] = m.im;
        }
    }
    let (eigs, _) = crate::krylov::dense_symmetric_eigs(gram);
    let margin = eigs.first().copied().unwrap_or(0.0).max(0.0) / scale;
    Ok(Nondegeneracy {
        nondegenerate: margin > NONDEGENERACY_THRESHOLD,
        margin,
    })
}

/// Trajectory of the reduced mode equation.
#[derive(Clone, Debug)]
pub struct ModeTrajectory {
    pub times: Vec<f64>,
    /// One amplitude vector per sample.
    pub zeta: Vec<Vec<C64>>,
}

/// Integrates the reduced mode equation
///
/// ```text
///     d zeta / dt = -i lambda0 zeta - gamma_ode |zeta|^{2N} zeta,
///     gamma_ode = Gamma / (2 lambda0),
/// ```
///
/// whose damping constant is fixed by matching `d/dt (lambda0 |zeta|^2)`
/// to `-Gamma |zeta|^{2(N+1)}`. The linear rotation is integrated exactly
/// through the gauge `zeta = e^{-i lambda0 t} eta`; classical RK4 advances
/// the amplitude flow of `eta`, so the stated period resolution bounds the
/// sampling density rather than the phase error.
pub fn reduced_mode_ode(
    zeta0: &[C64],
    lambda0: &[f64],
    gamma: f64,
    resonance_order: usize,
    t_final: f64,
    dt: f64,
) -> Result<ModeTrajectory> {
    if zeta0.len() != lambda0.len() {
        return Err(Error::InvalidArgument(format!(
            "{} mode amplitudes vs {} frequencies",
            zeta0.len(),
            lambda0.len()
        )));
    }
    if zeta0.len() != 1 {
        return Err(Error::NotSupported(
            "the reduced equation is integrated for single-resonance configurations only".into(),
        ));
    }
    let lam = lambda0[0];
    if !(lam > 0.0) || !lam.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "mode frequency {lam} must be positive"
        )));
    }
    if resonance_order == 0 {
        return Err(Error::InvalidArgument(
            "resonance order N must be at least 1".into(),
        ));
    }
    if !gamma.is_finite() || !t_final.is_finite() || t_final < 0.0 {
        return Err(Error::InvalidArgument(
            "gamma and the final time must be finite, t_final nonnegative".into(),
        ));
    }
    let dt_max = 2.0 * std::f64::consts::PI / (PERIOD_RESOLUTION * lam);
    if !(dt > 0.0) || dt > dt_max {
        return Err(Error::InvalidArgument(format!(
            "dt = {dt} must lie in (0, {dt_max:.6e}] to resolve the mode period"
        )));
    }

    let gamma_ode = gamma / (2.0 * lam);
    let n2 = resonance_order as i32;
    let flow = |eta: C64| -> C64 { -gamma_ode * eta.norm_sqr().powi(n2) * eta };

    let steps = (t_final / dt).ceil() as usize;
    let mut times = Vec::with_capacity(steps + 1);
    let mut zeta = Vec::with_capacity(steps + 1);
    let mut eta = zeta0[0];
    let mut t = 0.0;
    times.push(t);
    zeta.push(vec![eta]);
    for _ in 0..steps {
        let step = dt.min(t_final - t);
        let k1 = flow(eta);
        let k2 = flow(eta + 0.5 * step * k1);
        let k3 = flow(eta + 0.5 * step * k2);
        let k4 = flow(eta + step * k3);
        eta += (step / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        t += step;
        if !eta.re.is_finite() || !eta.im.is_finite() {
            return Err(Error::NonFinite(format!(
                "mode amplitude left the finite range at t = {t:.6e}"
            )));
        }
        times.push(t);
        zeta.push(vec![(-C64::i() * lam * t).exp() * eta]);
    }
    Ok(ModeTrajectory { times, zeta })
}

/// The assembled golden-rule data of a single-resonance configuration.
#[derive(Clone, Debug)]
pub struct FgrReport {
    /// The resonant combination frequency `lambda . alpha`.
    pub lambda_big: f64,
    /// Resonant multi-indices `alpha`, in the order of `couplings`.
    pub resonant_set: Vec<Vec<usize>>,
    /// The couplings `G_{alpha 0}` at `lambda_big`.
    pub couplings: Vec<(MonomialKey, SpinorField)>,
    pub gamma: f64,
    pub uncertainty: f64,
    pub nondegenerate: bool,
    pub margin: f64,
}

/// Builds the couplings, the coefficient, and the nondegeneracy verdict for
/// the resonant configuration of `modes`, asserting their mutual
/// consistency.
pub fn fgr_report(h: &LinearizedOperator, modes: &DiscreteSpectrum) -> Result<FgrReport> {
    let lambdas = modes.lambdas();
    let set = resonant_set(&lambdas, h.omega());
    if set.is_empty() {
        return Err(Error::InvalidArgument(
            "no second-order combination frequency reaches the essential spectrum".into(),
        ));
    }
    let freqs: Vec<f64> = set
        .iter()
        .map(|a| a.iter().zip(&lambdas).map(|(&p, &l)| p as f64 * l).sum())
        .collect();
    let lambda_big = freqs[0];
    if freqs
        .iter()
        .any(|f| (f - lambda_big).abs() > RESONANCE_MATCH_TOL * lambda_big)
    {
        return Err(Error::NotSupported(
            "multiple distinct resonant frequencies; the report assumes a single resonance".into(),
        ));
    }

    let all = leading_couplings(h, modes)?;
    let coeff = fgr_coefficient(h, modes, &all, lambda_big)?;
    let nd = fgr_nondegeneracy(h, modes, &all, lambda_big)?;
    let resolved = coeff.gamma > GAMMA_RESOLVED_FACTOR * coeff.uncertainty;
    if nd.nondegenerate != resolved {
        return Err(Error::ContractViolation(format!(
            "nondegeneracy verdict {} contradicts the damping coefficient \
             {:.6e} (uncertainty {:.3e})",
            nd.nondegenerate, coeff.gamma, coeff.uncertainty
        )));
    }
    if coeff.gamma < -1e-10 {
        return Err(Error::ContractViolation(format!(
            "semipositivity failed: Gamma = {:.6e}",
            coeff.gamma
        )));
    }

    let mut couplings = Vec::with_capacity(set.len());
    for alpha in &set {
        let zero = vec![0usize; lambdas.len()];
        let entry = all
            .iter()
            .find(|(k, _)| k.mu == *alpha && k.nu == zero)
            .expect("every resonant multi-index has a built coupling");
        couplings.push(entry.clone());
    }
    Ok(FgrReport {
        lambda_big,
        resonant_set: set,
        couplings,
        gamma: coeff.gamma,
        uncertainty: coeff.uncertainty,
        nondegenerate: nd.nondegenerate,
        margin: nd.margin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::Dim;
    use crate::groundstate::family_scan;
    use crate::spectrum::discrete_spectrum;
    use once_cell::sync::Lazy;

    const CQ_OMEGA: f64 = 1.8745;

    fn build_cq(n: usize, half_length: f64) -> (LinearizedOperator, DiscreteSpectrum) {
        let grid = Grid::new(Dim::One, n, half_length).unwrap();
        let beta = Nonlinearity::cubic_quintic();
        let family = family_scan(&beta, 1.86, CQ_OMEGA, 18, &grid).unwrap();
        let h = LinearizedOperator::assemble_from_profile(
            &beta,
            &grid,
            CQ_OMEGA,
            &family.samples.last().unwrap().phi,
        )
        .unwrap();
        let spec = discrete_spectrum(&h, None, 4).unwrap();
        assert_eq!(spec.mode_count(), 1);
        (h, spec)
    }

    static CQ: Lazy<(LinearizedOperator, DiscreteSpectrum)> = Lazy::new(|| build_cq(512, 80.0));

    /// Nonlinear part `beta(U1 U2) U` of the stationary operator
    /// `S(U) = -Lap U + omega U + beta(U1 U2) U`. The linear part cancels
    /// identically in an even second difference, so the oracle omits it
    /// before rounding can see its large magnitude.
    fn nonlinear_product(beta: &Nonlinearity, u: &SpinorField) -> SpinorField {
        let grid = u.grid();
        let n = grid.n();
        let mut c1 = Vec::with_capacity(n);
        let mut c2 = Vec::with_capacity(n);
        for i in 0..n {
            let b = beta.beta((u.c1[i] * u.c2[i]).re);
            c1.push(b * u.c1[i]);
            c2.push(b * u.c2[i]);
        }
        SpinorField::from_components(grid, c1, c2).unwrap()
    }

    #[test]
    fn absent_nonlinearity_produces_no_coupling() {
        let grid = Grid::new(Dim::One, 128, 20.0).unwrap();
        let phi: Vec<f64> = grid.points().iter().map(|x| (-x * x / 4.0).exp()).collect();
        let mut r = SpinorField::symmetric_real(&grid, &phi);
        r.axpy(C64::new(0.0, 0.7), &r.clone().sigma1());
        let free = Nonlinearity::free();
        assert_eq!(quadratic_force(&free, &phi, &r).norm(), 0.0);

        // Zero couplings: Gamma = 0 exactly, nondegenerate = false, margin 0.
        let (h, spec) = &*CQ;
        let lambda = spec.modes[0].lambda;
        let key = MonomialKey::new(vec![2], vec![0], 1).unwrap();
        let zero = vec![(key, SpinorField::zero(h.grid()))];
        let c = fgr_coefficient(h, spec, &zero, 2.0 * lambda).unwrap();
        assert_eq!(c.gamma, 0.0);
        assert_eq!(c.uncertainty, 0.0);
        let nd = fgr_nondegeneracy(h, spec, &zero, 2.0 * lambda).unwrap();
        assert!(!nd.nondegenerate);
        assert_eq!(nd.margin, 0.0);
        assert_eq!(
            far_field_gamma(h, spec, &zero, 2.0 * lambda).unwrap(),
            0.0
        );
    }

    #[test]
    fn couplings_match_the_finite_difference_hessian() {
        let (h, spec) = &*CQ;
        let entries = leading_couplings(h, spec).unwrap();
        let g = &entries
            .iter()
            .find(|(k, _)| k.mu == vec![2] && k.nu == vec![0])
            .unwrap()
            .1;

        // FD second derivative of the stationary operator along the mode:
        // its even second difference isolates the quadratic coefficient.
        let beta = h.beta();
        let phi_spinor = SpinorField::symmetric_real(h.grid(), h.phi());
        let xi = &spec.modes[0].xi;
        let t = 1e-4;
        let mut up = phi_spinor.clone();
        up.axpy(C64::new(t, 0.0), xi);
        let mut dn = phi_spinor.clone();
        dn.axpy(C64::new(-t, 0.0), xi);
        let mut num = nonlinear_product(beta, &up);
        num.axpy(C64::new(1.0, 0.0), &nonlinear_product(beta, &dn));
        num.axpy(C64::new(-2.0, 0.0), &nonlinear_product(beta, &phi_spinor));
        let fd = num.scaled(C64::new(1.0 / (2.0 * t * t), 0.0));
        let g_fd = h
            .spectral_project(&spec.modes, &fd.sigma3())
            .unwrap()
            .continuous;
        let rel = g.sub(&g_fd).norm() / g.norm();
        assert!(rel <= 1e-5, "FD mismatch {rel:.3e}");

        // The skew partner is asserted inside the builder; spot-check it.
        let g02 = &entries
            .iter()
            .find(|(k, _)| k.mu == vec![0] && k.nu == vec![2])
            .unwrap()
            .1;
        let defect = g.add(&g02.conj().sigma1()).norm() / g.norm();
        assert!(defect <= 1e-10, "skew defect {defect:.3e}");

        // Couplings live in the continuous range.
        let reproj = h.spectral_project(&spec.modes, g).unwrap().continuous;
        assert!(g.sub(&reproj).norm() <= 1e-8 * g.norm());
    }

    #[test]
    fn damping_coefficient_is_stable_and_certified() {
        let (h, spec) = &*CQ;
        let lambda = spec.modes[0].lambda;
        let entries = leading_couplings(h, spec).unwrap();
        let c0 = fgr_coefficient(h, spec, &entries, 2.0 * lambda).unwrap();
        assert!(c0.gamma > 0.0);
        assert!(
            c0.gamma > 10.0 * c0.uncertainty,
            "gamma {:.6e} not resolved against uncertainty {:.3e}",
            c0.gamma,
            c0.uncertainty
        );

        for (n, half) in [(1024usize, 80.0), (1024, 160.0)] {
            let (h2, spec2) = build_cq(n, half);
            let lambda2 = spec2.modes[0].lambda;
            assert!((lambda2 - lambda).abs() <= 1e-4 * lambda);
            let entries2 = leading_couplings(&h2, &spec2).unwrap();
            let c2 = fgr_coefficient(&h2, &spec2, &entries2, 2.0 * lambda2).unwrap();
            let allowed = c0.uncertainty + c2.uncertainty + 1e-8 * c0.gamma.abs();
            assert!(
                (c2.gamma - c0.gamma).abs() <= allowed,
                "gamma drifted: {:.8e} vs {:.8e} (allowed {:.3e}) at ({n}, {half})",
                c2.gamma,
                c0.gamma,
                allowed
            );
        }
    }

    #[test]
    fn ladder_and_far_field_discretizations_agree() {
        let (h, spec) = &*CQ;
        let lambda = spec.modes[0].lambda;
        let entries = leading_couplings(h, spec).unwrap();
        let c = fgr_coefficient(h, spec, &entries, 2.0 * lambda).unwrap();
        let far = far_field_gamma(h, spec, &entries, 2.0 * lambda).unwrap();
        let rel = (far - c.gamma).abs() / c.gamma.abs().max(far.abs());
        assert!(
            rel <= 0.05,
            "ladder {:.6e} vs far field {far:.6e}: {rel:.3e}",
            c.gamma
        );

        let nd = fgr_nondegeneracy(h, spec, &entries, 2.0 * lambda).unwrap();
        assert!(nd.nondegenerate);
        assert!(nd.margin > NONDEGENERACY_THRESHOLD);
    }

    #[test]
    fn gap_band_limited_coupling_is_degenerate() {
        // A smooth bump placed outside the potential, below the resonant
        // wavenumber in Fourier: its resonant amplitude is its own Fourier
        // transform at k_Lambda, which is designed to vanish.
        let (h, spec) = &*CQ;
        let lambda = spec.modes[0].lambda;
        let grid = h.grid();
        let sigma = 4.0;
        let x0 = 40.0;
        let c1: Vec<C64> = grid
            .points()
            .iter()
            .map(|&x| C64::new((-(x - x0) * (x - x0) / (2.0 * sigma * sigma)).exp(), 0.0))
            .collect();
        let n = grid.n();
        let g = SpinorField::from_components(grid, c1, vec![C64::new(0.0, 0.0); n]).unwrap();
        let key = MonomialKey::new(vec![2], vec![0], 1).unwrap();
        let fake = vec![(key, g)];

        let nd = fgr_nondegeneracy(h, spec, &fake, 2.0 * lambda).unwrap();
        assert!(!nd.nondegenerate, "margin {:.3e}", nd.margin);
        assert!(nd.margin <= NONDEGENERACY_THRESHOLD);

        let c = fgr_coefficient(h, spec, &fake, 2.0 * lambda).unwrap();
        assert!(
            c.gamma.abs() <= 10.0 * c.uncertainty,
            "gap-supported coupling still damped: {:.3e} vs {:.3e}",
            c.gamma,
            c.uncertainty
        );
    }

    #[test]
    fn mode_ode_without_damping_preserves_amplitude() {
        let lam = 1.3;
        let z0 = C64::new(0.37, -0.22);
        let dt = 0.99 * 2.0 * std::f64::consts::PI / (100.0 * lam);
        let traj = reduced_mode_ode(&[z0], &[lam], 0.0, 1, 50.0, dt).unwrap();
        for (t, z) in traj.times.iter().zip(&traj.zeta) {
            assert!((z[0].norm() - z0.norm()).abs() <= 1e-10);
            let expected = (-C64::i() * lam * t).exp() * z0;
            assert!((z[0] - expected).norm() <= 1e-9);
        }

        let zero = reduced_mode_ode(&[C64::new(0.0, 0.0)], &[lam], 0.8, 1, 10.0, dt).unwrap();
        assert!(zero.zeta.iter().all(|z| z[0].norm() == 0.0));

        assert!(reduced_mode_ode(&[z0], &[lam], 0.0, 1, 1.0, 1.0).is_err());
        assert!(reduced_mode_ode(&[z0], &[lam, 1.0], 0.0, 1, 1.0, dt).is_err());
        assert!(reduced_mode_ode(&[z0, z0], &[lam, 1.0], 0.0, 1, 1.0, dt).is_err());
        assert!(reduced_mode_ode(&[z0], &[lam], 0.0, 0, 1.0, dt).is_err());
    }

    #[test]
    fn mode_ode_damping_is_affine_in_the_inverse_square() {
        let lam = 1.8529;
        let gamma = 0.8;
        let z0 = C64::new(0.5, 0.0);
        let dt = 2.0 * std::f64::consts::PI / (100.0 * lam);
        let traj = reduced_mode_ode(&[z0], &[lam], gamma, 1, 40.0, dt).unwrap();

        // Closed form: 1/|zeta|^2 grows affinely with slope Gamma / lambda.
        let slope_true = gamma / lam;
        for (t, z) in traj.times.iter().zip(&traj.zeta) {
            let inv = 1.0 / z[0].norm_sqr();
            let expect = 1.0 / z0.norm_sqr() + slope_true * t;
            assert!((inv - expect).abs() <= 1e-9 * expect);
        }

        // Affine fit over the whole trajectory.
        let ts = &traj.times;
        let ys: Vec<f64> = traj.zeta.iter().map(|z| 1.0 / z[0].norm_sqr()).collect();
        let n = ts.len() as f64;
        let tbar = ts.iter().sum::<f64>() / n;
        let ybar = ys.iter().sum::<f64>() / n;
        let sxy: f64 = ts.iter().zip(&ys).map(|(t, y)| (t - tbar) * (y - ybar)).sum();
        let sxx: f64 = ts.iter().map(|t| (t - tbar) * (t - tbar)).sum();
        let slope = sxy / sxx;
        assert!((slope - slope_true).abs() <= 1e-8 * slope_true);
        let resid = ts
            .iter()
            .zip(&ys)
            .map(|(t, y)| (y - ybar - slope * (t - tbar)).abs())
            .fold(0.0_f64, f64::max);
        assert!(resid <= 1e-6 * ybar);

        // Second-order resonance: 1/|zeta|^4 is the affine quantity.
        let traj2 = reduced_mode_ode(&[z0], &[lam], gamma, 2, 20.0, dt).unwrap();
        let gamma_ode = gamma / (2.0 * lam);
        for (t, z) in traj2.times.iter().zip(&traj2.zeta) {
            let inv = 1.0 / z[0].norm_sqr().powi(2);
            let expect = 1.0 / z0.norm_sqr().powi(2) + 4.0 * gamma_ode * t;
            assert!((inv - expect).abs() <= 1e-9 * expect);
        }
    }


    #[test]
    fn report_states_the_resonant_configuration() {
        let (h, spec) = &*CQ;
        let report = fgr_report(h, spec).unwrap();
        let lambda = spec.modes[0].lambda;
        assert_eq!(report.resonant_set, vec![vec![2usize]]);
        assert!((report.lambda_big - 2.0 * lambda).abs() <= 1e-12 * lambda);
        assert_eq!(report.couplings.len(), 1);
        assert_eq!(report.couplings[0].0.mu, vec![2]);
        assert_eq!(report.couplings[0].0.nu, vec![0]);
        assert!(report.gamma >= -1e-10);
        assert!(report.gamma > 0.0);
        assert!(report.nondegenerate);
        assert!(report.margin > 0.0);
    }
}
