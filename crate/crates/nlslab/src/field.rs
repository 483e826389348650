//! Fields, functionals and snapshot I/O.
//!
//! State is kept in the doubled (spinor) representation
//!
//! ```text
//!     U = (u, conj u),
//! ```
//!
//! which is the natural home for the linearized theory. Physical fields
//! always satisfy the reality constraint `sigma1 U = conj U`; generic spinors
//! (eigenmodes, resolvent outputs) do not, and the same container is used for
//! both.
//!
//! Conventions fixed here and relied on everywhere else:
//!
//! * charge     `Q(U)  = int |u|^2`
//! * momentum   `Pi(U) = Im int conj(u) du/dx`  (so a half-phase boost
//!   `u -> e^{i v x / 2} u` shifts momentum by `+ (v/2) Q`)
//! * energy     `E(U)  = int |grad u|^2 + int B(|u|^2)`, `B' = beta`, `B(0)=0`
//!
//! Grids are uniform periodic on `[-L, L)` with a power-of-two point count.
//! `dim = 3` means radial reduction: samples live on the same symmetric axis,
//! fields are even in `x`, and quadrature carries the `2 pi x^2` weight.
//!
//! Snapshot format `NLSF v1` (little endian throughout):
//!
//! ```text
//!     "NLSF"  magic, 4 bytes
//!     u32     version (= 1)
//!     u32     dim (1 or 3)
//!     u64     points per axis, repeated dim times
//!     f64     half length per axis, repeated dim times
//!     f64     time
//!     f64 x 2 per point: re, im of the scalar component u
//! ```
//!
//! Only `u` is stored; the conjugate component is rebuilt on read.

use num_complex::Complex64 as C64;
use once_cell::sync::Lazy;
use rustfft::{Fft, FftPlanner};
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::sync::{Arc, Mutex};

use crate::error::{Error, Result};

pub const SNAPSHOT_MAGIC: &[u8; 4] = b"NLSF";
pub const SNAPSHOT_VERSION: u32 = 1;

/// Tolerance to which physical spinors satisfy `sigma1 U = conj U`.
pub const REALITY_TOL: f64 = 1e-13;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Dim {
    One,
    RadialThree,
}

impl Dim {
    pub fn as_usize(self) -> usize {
        match self {
            Dim::One => 1,
            Dim::RadialThree => 3,
        }
    }

    pub fn from_usize(d: usize) -> Result<Self> {
        match d {
            1 => Ok(Dim::One),
            3 => Ok(Dim::RadialThree),
            other => Err(Error::InvalidArgument(format!(
                "dim must be 1 or 3, got {other}"
            ))),
        }
    }
}

/// Uniform periodic grid on `[-L, L)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    dim: Dim,
    n: usize,
    half_length: f64,
}

impl Grid {
    pub fn new(dim: Dim, n: usize, half_length: f64) -> Result<Self> {
        if !n.is_power_of_two() || n < 16 {
            return Err(Error::InvalidArgument(format!(
                "grid size must be a power of two >= 16, got {n}"
            )));
        }
        if !(half_length.is_finite() && half_length > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "half length must be positive, got {half_length}"
            )));
        }
        Ok(Grid { dim, n, half_length })
    }

    pub fn line(n: usize, half_length: f64) -> Result<Self> {
        Grid::new(Dim::One, n, half_length)
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn half_length(&self) -> f64 {
        self.half_length
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_length / self.n as f64
    }

    pub fn x(&self, i: usize) -> f64 {
        -self.half_length + i as f64 * self.spacing()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.x(i)).collect()
    }

    /// Signed wavenumbers in FFT storage order; `k_max h = pi`.
    pub fn wavenumbers(&self) -> Vec<f64> {
        let n = self.n;
        let dk = std::f64::consts::PI / self.half_length;
        (0..n)
            .map(|j| {
                let js = if j <= n / 2 { j as isize } else { j as isize - n as isize };
                js as f64 * dk
            })
            .collect()
    }

    /// Quadrature weight at node `i`, including the radial measure for dim 3.
    pub fn weight(&self, i: usize) -> f64 {
        let h = self.spacing();
        match self.dim {
            Dim::One => h,
            // int_{R^3} f = 4 pi int_0^inf x^2 f dx = 2 pi int_{-L}^{L} x^2 f dx
            Dim::RadialThree => {
                let x = self.x(i);
                2.0 * std::f64::consts::PI * x * x * h
            }
        }
    }

    pub fn weights(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.weight(i)).collect()
    }
}

static PLANNER: Lazy<Mutex<FftPlanner<f64>>> = Lazy::new(|| Mutex::new(FftPlanner::new()));

fn plan(n: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    let mut p = PLANNER.lock().expect("fft planner");
    if inverse {
        p.plan_fft_inverse(n)
    } else {
        p.plan_fft_forward(n)
    }
}

/// Cached FFT plans plus spectral calculus on one grid.
#[derive(Clone)]
pub struct Spectral {
    grid: Grid,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    k: Vec<f64>,
}

impl Spectral {
    pub fn new(grid: &Grid) -> Self {
        Spectral {
            grid: *grid,
            fwd: plan(grid.n(), false),
            inv: plan(grid.n(), true),
            k: grid.wavenumbers(),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn wavenumbers(&self) -> &[f64] {
        &self.k
    }

    /// Unnormalized forward transform, in place.
    pub fn forward(&self, v: &mut [C64]) {
        self.fwd.process(v);
    }

    /// Inverse transform with the 1/n normalization, in place.
    pub fn inverse(&self, v: &mut [C64]) {
        self.inv.process(v);
        let s = 1.0 / v.len() as f64;
        for z in v.iter_mut() {
            *z *= s;
        }
    }

    /// Applies a Fourier multiplier `m(k)`, in place.
    pub fn apply_multiplier(&self, v: &mut [C64], m: impl Fn(f64) -> C64) {
        self.forward(v);
        for (z, &k) in v.iter_mut().zip(&self.k) {
            *z *= m(k);
        }
        self.inverse(v);
    }

    /// Spectral derivative along the axis. The Nyquist mode is dropped: its
    /// derivative is not representable with a consistent sign.
    pub fn derivative(&self, v: &[C64]) -> Vec<C64> {
        let n = self.grid.n();
        let mut w = v.to_vec();
        self.forward(&mut w);
        for (j, z) in w.iter_mut().enumerate() {
            if j == n / 2 {
                *z = C64::new(0.0, 0.0);
            } else {
                *z *= C64::new(0.0, self.k[j]);
            }
        }
        self.inverse(&mut w);
        w
    }

    /// One-dimensional Laplacian `d^2/dx^2`.
    pub fn laplacian_line(&self, v: &[C64]) -> Vec<C64> {
        let mut w = v.to_vec();
        self.forward(&mut w);
        for (z, &k) in w.iter_mut().zip(&self.k) {
            *z *= -k * k;
        }
        self.inverse(&mut w);
        w
    }

    /// Radial Laplacian `f'' + 2 f'/x` for even fields on the symmetric axis.
    /// The on-axis value uses the smooth limit `3 f''(0)`.
    pub fn laplacian_radial(&self, v: &[C64]) -> Vec<C64> {
        let n = self.grid.n();
        let d1 = self.derivative(v);
        let d2 = self.laplacian_line(v);
        let mut out = vec![C64::new(0.0, 0.0); n];
        for i in 0..n {
            let x = self.grid.x(i);
            if i == n / 2 {
                out[i] = 3.0 * d2[i];
            } else {
                out[i] = d2[i] + 2.0 / x * d1[i];
            }
        }
        out
    }

    /// Laplacian appropriate for the grid dimension.
    pub fn laplacian(&self, v: &[C64]) -> Vec<C64> {
        match self.grid.dim() {
            Dim::One => self.laplacian_line(v),
            Dim::RadialThree => self.laplacian_radial(v),
        }
    }

    /// Periodic translation `(tau_a f)(x) = f(x - a)`.
    ///
    /// The unpaired Nyquist bin gets the real part of its phase so the
    /// shift commutes with complex conjugation; the discarded piece is of
    /// the size of the spectral truncation error.
    pub fn translate(&self, v: &[C64], a: f64) -> Vec<C64> {
        let mut w = v.to_vec();
        self.forward(&mut w);
        let nyquist = if w.len() % 2 == 0 { Some(w.len() / 2) } else { None };
        for (j, (z, &k)) in w.iter_mut().zip(&self.k).enumerate() {
            let ph = -k * a;
            if Some(j) == nyquist {
                *z *= ph.cos();
            } else {
                *z *= C64::new(ph.cos(), ph.sin());
            }
        }
        self.inverse(&mut w);
        w
    }
}

/// Smooth nonlinearity `beta(s) = sum_j c_j s^{j+1}`; `beta(0) = 0` holds
/// structurally because there is no constant term.
#[derive(Clone, Debug, PartialEq)]
pub struct Nonlinearity {
    coeffs: Vec<f64>,
}

impl Nonlinearity {
    pub fn new(coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidArgument(
                "nonlinearity coefficients must be finite".into(),
            ));
        }
        Ok(Nonlinearity { coeffs })
    }

    /// Focusing cubic, `beta(s) = -s`.
    pub fn cubic() -> Self {
        Nonlinearity { coeffs: vec![-1.0] }
    }

    /// Focusing cubic with a defocusing quintic correction,
    /// `beta(s) = -s + 0.1 s^2`.
    pub fn cubic_quintic() -> Self {
        Nonlinearity { coeffs: vec![-1.0, 0.1] }
    }

    /// The linear (free) equation.
    pub fn free() -> Self {
        Nonlinearity { coeffs: vec![] }
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    /// Power-law growth exponent of `beta`, taken from the top monomial.
    pub fn growth_exponent(&self) -> usize {
        2 * self.coeffs.len().max(1) - 1
    }

    pub fn beta(&self, s: f64) -> f64 {
        // Horner in s, with the overall factor s pulled out.
        let mut acc = 0.0;
        for &c in self.coeffs.iter().rev() {
            acc = acc * s + c;
        }
        acc * s
    }

    pub fn beta_prime(&self, s: f64) -> f64 {
        let mut acc = 0.0;
        for (j, &c) in self.coeffs.iter().enumerate().rev() {
            acc = acc * s + (j + 1) as f64 * c;
        }
        acc
    }

    pub fn beta_second(&self, s: f64) -> f64 {
        let mut acc = 0.0;
        for (j, &c) in self.coeffs.iter().enumerate().rev().take_while(|(j, _)| *j >= 1) {
            acc = acc * s + ((j + 1) * j) as f64 * c;
        }
        acc
    }

    /// Potential energy density `B`, the antiderivative of `beta` with
    /// `B(0) = 0`.
    pub fn big_b(&self, s: f64) -> f64 {
        let mut acc = 0.0;
        for (j, &c) in self.coeffs.iter().enumerate().rev() {
            acc = acc * s + c / (j + 2) as f64;
        }
        acc * s * s
    }
}

/// Doubled field `U = (c1, c2)`. Physical states have `c2 = conj(c1)`.
#[derive(Clone, Debug)]
pub struct SpinorField {
    grid: Grid,
    pub c1: Vec<C64>,
    pub c2: Vec<C64>,
}

impl SpinorField {
    pub fn zero(grid: &Grid) -> Self {
        SpinorField {
            grid: *grid,
            c1: vec![C64::new(0.0, 0.0); grid.n()],
            c2: vec![C64::new(0.0, 0.0); grid.n()],
        }
    }

    /// Builds the physical spinor of a scalar field.
    pub fn from_scalar(grid: &Grid, u: Vec<C64>) -> Result<Self> {
        if u.len() != grid.n() {
            return Err(Error::InvalidArgument(format!(
                "field length {} does not match grid size {}",
                u.len(),
                grid.n()
            )));
        }
        let c2 = u.iter().map(|z| z.conj()).collect();
        Ok(SpinorField { grid: *grid, c1: u, c2 })
    }

    /// Builds a general spinor from independent components.
    pub fn from_components(grid: &Grid, c1: Vec<C64>, c2: Vec<C64>) -> Result<Self> {
        if c1.len() != grid.n() || c2.len() != grid.n() {
            return Err(Error::InvalidArgument(
                "component length does not match grid size".into(),
            ));
        }
        Ok(SpinorField { grid: *grid, c1, c2 })
    }

    /// Real spinor with both components equal (the `Phi` pattern).
    pub fn symmetric_real(grid: &Grid, f: &[f64]) -> Self {
        let c: Vec<C64> = f.iter().map(|&v| C64::new(v, 0.0)).collect();
        SpinorField { grid: *grid, c1: c.clone(), c2: c }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn n(&self) -> usize {
        self.grid.n()
    }

    /// Deviation from the reality constraint `sigma1 U = conj U`.
    pub fn reality_defect(&self) -> f64 {
        self.c1
            .iter()
            .zip(&self.c2)
            .map(|(a, b)| (*b - a.conj()).norm())
            .fold(0.0, f64::max)
    }

    pub fn is_physical(&self, tol: f64) -> bool {
        self.reality_defect() <= tol
    }

    pub fn sigma1(&self) -> Self {
        SpinorField { grid: self.grid, c1: self.c2.clone(), c2: self.c1.clone() }
    }

    pub fn sigma3(&self) -> Self {
        SpinorField {
            grid: self.grid,
            c1: self.c1.clone(),
            c2: self.c2.iter().map(|z| -z).collect(),
        }
    }

    pub fn conj(&self) -> Self {
        SpinorField {
            grid: self.grid,
            c1: self.c1.iter().map(|z| z.conj()).collect(),
            c2: self.c2.iter().map(|z| z.conj()).collect(),
        }
    }

    pub fn scaled(&self, a: C64) -> Self {
        SpinorField {
            grid: self.grid,
            c1: self.c1.iter().map(|z| a * z).collect(),
            c2: self.c2.iter().map(|z| a * z).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        SpinorField {
            grid: self.grid,
            c1: self.c1.iter().zip(&other.c1).map(|(a, b)| a + b).collect(),
            c2: self.c2.iter().zip(&other.c2).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        SpinorField {
            grid: self.grid,
            c1: self.c1.iter().zip(&other.c1).map(|(a, b)| a - b).collect(),
            c2: self.c2.iter().zip(&other.c2).map(|(a, b)| a - b).collect(),
        }
    }

    /// `self += a * other`.
    pub fn axpy(&mut self, a: C64, other: &Self) {
        for (z, w) in self.c1.iter_mut().zip(&other.c1) {
            *z += a * w;
        }
        for (z, w) in self.c2.iter_mut().zip(&other.c2) {
            *z += a * w;
        }
    }

    /// Multiply pointwise by the coordinate.
    pub fn mul_x(&self) -> Self {
        let xs = self.grid.points();
        SpinorField {
            grid: self.grid,
            c1: self.c1.iter().zip(&xs).map(|(z, &x)| x * z).collect(),
            c2: self.c2.iter().zip(&xs).map(|(z, &x)| x * z).collect(),
        }
    }

    /// Vector L2 norm over both components.
    pub fn norm(&self) -> f64 {
        let mut s = 0.0;
        for i in 0..self.n() {
            s += self.grid.weight(i) * (self.c1[i].norm_sqr() + self.c2[i].norm_sqr());
        }
        s.sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.c1.iter().chain(&self.c2).all(|z| z.re.is_finite() && z.im.is_finite())
    }
}

/// Bilinear pairing `<f|g> = int (f1 g1 + f2 g2)`, no conjugation.
pub fn pairing(f: &SpinorField, g: &SpinorField) -> C64 {
    let mut s = C64::new(0.0, 0.0);
    for i in 0..f.n() {
        s += f.grid().weight(i) * (f.c1[i] * g.c1[i] + f.c2[i] * g.c2[i]);
    }
    s
}

/// Conserved quantities of one state.
#[derive(Clone, Copy, Debug, PartialEq, serde::Serialize)]
pub struct ConservedTriple {
    pub charge: f64,
    pub momentum: f64,
    pub energy: f64,
}

/// `Q(U) = int u conj(u)`; for generic spinors the bilinear extension
/// `int c1 c2` is used and the real part returned.
pub fn charge(u: &SpinorField) -> f64 {
    let mut s = C64::new(0.0, 0.0);
    for i in 0..u.n() {
        s += u.grid().weight(i) * u.c1[i] * u.c2[i];
    }
    s.re
}

/// `Pi(U) = Im int conj(u) u_x`. Vanishes identically in the radial setting.
pub fn momentum(u: &SpinorField) -> f64 {
    match u.grid().dim() {
        Dim::RadialThree => 0.0,
        Dim::One => {
            let sp = Spectral::new(u.grid());
            let du = sp.derivative(&u.c1);
            let mut s = 0.0;
            for i in 0..u.n() {
                s += u.grid().weight(i) * (u.c1[i].conj() * du[i]).im;
            }
            s
        }
    }
}

/// `E(U) = int |grad u|^2 + int B(|u|^2)`.
pub fn energy(u: &SpinorField, beta: &Nonlinearity) -> f64 {
    let sp = Spectral::new(u.grid());
    let du = sp.derivative(&u.c1);
    let mut s = 0.0;
    for i in 0..u.n() {
        let w = u.grid().weight(i);
        s += w * (du[i].norm_sqr() + beta.big_b(u.c1[i].norm_sqr()));
    }
    s
}

pub fn conserved(u: &SpinorField, beta: &Nonlinearity) -> ConservedTriple {
    ConservedTriple {
        charge: charge(u),
        momentum: momentum(u),
        energy: energy(u, beta),
    }
}

/// Symmetry action `U -> e^{i sigma3 (v (x - d) / 2 + theta)} tau_d U`.
///
/// Applied to a soliton at the origin this produces the traveling, rotated,
/// shifted soliton; the momentum gains `+ (v/2) Q`.
pub fn gauge_boost(u: &SpinorField, v: f64, theta: f64, d: f64) -> Result<SpinorField> {
    if u.grid().dim() == Dim::RadialThree && (v != 0.0 || d != 0.0) {
        return Err(Error::InvalidArgument(
            "boosts and shifts are line-only operations".into(),
        ));
    }
    let sp = Spectral::new(u.grid());
    let c1t = sp.translate(&u.c1, d);
    let c2t = sp.translate(&u.c2, d);
    let xs = u.grid().points();
    let mut c1 = Vec::with_capacity(u.n());
    let mut c2 = Vec::with_capacity(u.n());
    for i in 0..u.n() {
        let ph = 0.5 * v * (xs[i] - d) + theta;
        let e = C64::new(ph.cos(), ph.sin());
        c1.push(e * c1t[i]);
        c2.push(e.conj() * c2t[i]);
    }
    Ok(SpinorField { grid: *u.grid(), c1, c2 })
}

/// Weighted Sobolev norm used by the dispersive estimates:
/// the square is `sum_{j<=l} |d^j U|^2 + sum_{1<=a<=l} |x^a U|^2`.
/// For `l = 0` this is the plain L2 norm of the doubled vector.
pub fn sigma_norm(u: &SpinorField, l: usize) -> f64 {
    let sp = Spectral::new(u.grid());
    let mut total = 0.0;
    let mut d1 = u.c1.clone();
    let mut d2 = u.c2.clone();
    for j in 0..=l {
        if j > 0 {
            d1 = sp.derivative(&d1);
            d2 = sp.derivative(&d2);
        }
        for i in 0..u.n() {
            total += u.grid().weight(i) * (d1[i].norm_sqr() + d2[i].norm_sqr());
        }
    }
    let xs = u.grid().points();
    let mut xa1 = u.c1.clone();
    let mut xa2 = u.c2.clone();
    for _a in 1..=l {
        for i in 0..u.n() {
            xa1[i] *= xs[i];
            xa2[i] *= xs[i];
        }
        for i in 0..u.n() {
            total += u.grid().weight(i) * (xa1[i].norm_sqr() + xa2[i].norm_sqr());
        }
    }
    total.sqrt()
}

/// Polynomially weighted L2 norm `|(1 + x^2)^{s/2} U|_2`. Negative `s`
/// measures locally uniform decay, the topology of the limiting-absorption
/// estimates.
pub fn weighted_l2(u: &SpinorField, s: f64) -> f64 {
    let grid = u.grid();
    let mut total = 0.0;
    for i in 0..u.n() {
        let x = grid.x(i);
        let w = (1.0 + x * x).powf(s);
        total += grid.weight(i) * w * (u.c1[i].norm_sqr() + u.c2[i].norm_sqr());
    }
    total.sqrt()
}

pub(crate) fn embed_offset(from: &Grid, to: &Grid) -> Result<usize> {
    if from.dim() != Dim::One || to.dim() != Dim::One {
        return Err(Error::NotSupported("embedding is line-only".into()));
    }
    if (from.spacing() - to.spacing()).abs() > 1e-12 * from.spacing() {
        return Err(Error::InvalidArgument(
            "embedding requires matching grid spacings".into(),
        ));
    }
    if to.n() < from.n() || (to.n() - from.n()) % 2 != 0 {
        return Err(Error::InvalidArgument(
            "embedding target must extend the source symmetrically".into(),
        ));
    }
    Ok((to.n() - from.n()) / 2)
}

pub(crate) fn embed_real(from: &Grid, to: &Grid, v: &[f64]) -> Result<Vec<f64>> {
    if v.len() != from.n() {
        return Err(Error::InvalidArgument("embed input length mismatch".into()));
    }
    let offset = embed_offset(from, to)?;
    let mut out = vec![0.0; to.n()];
    out[offset..offset + from.n()].copy_from_slice(v);
    Ok(out)
}

/// Zero-extends `u` onto a larger grid with the same spacing; node locations
/// are preserved, so decayed fields embed exactly.
pub fn embed(u: &SpinorField, to: &Grid) -> Result<SpinorField> {
    let offset = embed_offset(u.grid(), to)?;
    let zero = C64::new(0.0, 0.0);
    let mut c1 = vec![zero; to.n()];
    let mut c2 = vec![zero; to.n()];
    c1[offset..offset + u.n()].copy_from_slice(&u.c1);
    c2[offset..offset + u.n()].copy_from_slice(&u.c2);
    SpinorField::from_components(to, c1, c2)
}

/// Spectral resampling between grids of the same extent. Band-limited
/// fields survive a round trip exactly; downsampling folds the dropped
/// Nyquist pair so real fields stay real.
pub fn resample(from: &Spectral, to: &Spectral, v: &[C64]) -> Result<Vec<C64>> {
    let (n, m) = (from.grid().n(), to.grid().n());
    if v.len() != n {
        return Err(Error::InvalidArgument("resample input length mismatch".into()));
    }
    if (from.grid().half_length() - to.grid().half_length()).abs() > 1e-12 {
        return Err(Error::InvalidArgument(
            "resample requires matching domain extents".into(),
        ));
    }
    let mut hat = v.to_vec();
    from.forward(&mut hat);
    let scale = m as f64 / n as f64;
    let mut out = vec![C64::new(0.0, 0.0); m];
    let keep = n.min(m);
    for j in 0..keep / 2 {
        out[j] = hat[j] * scale;
        if j > 0 {
            out[m - j] = hat[n - j] * scale;
        }
    }
    if m < n {
        out[m / 2] = (hat[m / 2] + hat[n - m / 2]) * scale;
    } else if m > n {
        out[n / 2] = hat[n / 2] * scale * 0.5;
        out[m - n / 2] = hat[n / 2] * scale * 0.5;
    } else {
        out[n / 2] = hat[n / 2] * scale;
    }
    to.inverse(&mut out);
    Ok(out)
}

/// L2 norm with the decaying weight `<x>^{-s}`.
pub fn weighted_norm(u: &SpinorField, s: f64) -> f64 {
    let xs = u.grid().points();
    let mut total = 0.0;
    for i in 0..u.n() {
        let w = (1.0 + xs[i] * xs[i]).powf(-s);
        total += u.grid().weight(i) * w * (u.c1[i].norm_sqr() + u.c2[i].norm_sqr());
    }
    total.sqrt()
}

fn put_u32(w: &mut impl Write, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_u64(w: &mut impl Write, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn put_f64(w: &mut impl Write, v: f64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

fn get_exact<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|_| Error::Format("snapshot truncated".into()))?;
    Ok(buf)
}

/// Writes one NLSF v1 snapshot.
pub fn write_snapshot(path: &Path, u: &SpinorField, time: f64) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = BufWriter::new(f);
    w.write_all(SNAPSHOT_MAGIC)?;
    put_u32(&mut w, SNAPSHOT_VERSION)?;
    put_u32(&mut w, u.grid().dim().as_usize() as u32)?;
    put_u64(&mut w, u.grid().n() as u64)?;
    put_f64(&mut w, u.grid().half_length())?;
    put_f64(&mut w, time)?;
    for z in &u.c1 {
        put_f64(&mut w, z.re)?;
        put_f64(&mut w, z.im)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads an NLSF snapshot, rebuilding the conjugate component.
pub fn read_snapshot(path: &Path) -> Result<(SpinorField, f64)> {
    let f = std::fs::File::open(path)?;
    let mut r = BufReader::new(f);
    let magic = get_exact::<4>(&mut r)?;
    if &magic != SNAPSHOT_MAGIC {
        return Err(Error::Format("bad magic, not an NLSF snapshot".into()));
    }
    let version = u32::from_le_bytes(get_exact::<4>(&mut r)?);
    if version != SNAPSHOT_VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dim = Dim::from_usize(u32::from_le_bytes(get_exact::<4>(&mut r)?) as usize)?;
    let n = u64::from_le_bytes(get_exact::<8>(&mut r)?) as usize;
    let half_length = f64::from_le_bytes(get_exact::<8>(&mut r)?);
    let time = f64::from_le_bytes(get_exact::<8>(&mut r)?);
    let grid = Grid::new(dim, n, half_length)?;
    let mut u = Vec::with_capacity(n);
    for _ in 0..n {
        let re = f64::from_le_bytes(get_exact::<8>(&mut r)?);
        let im = f64::from_le_bytes(get_exact::<8>(&mut r)?);
        u.push(C64::new(re, im));
    }
    // Trailing garbage means the file is not what it claims to be.
    let mut probe = [0u8; 1];
    if r.read(&mut probe)? != 0 {
        return Err(Error::Format("trailing bytes after snapshot payload".into()));
    }
    Ok((SpinorField::from_scalar(&grid, u)?, time))
}
