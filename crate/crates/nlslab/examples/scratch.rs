use nlslab::field::{gauge_boost, Dim, Grid, Nonlinearity, SpinorField};
use nlslab::groundstate::family_scan;
use nlslab::linearize::LinearizedOperator;
use nlslab::spectrum::discrete_spectrum;
use num_complex::Complex64 as C64;

fn defect(u: &SpinorField) -> f64 {
    u.c1.iter()
        .zip(&u.c2)
        .map(|(a, b)| (b - a.conj()).norm())
        .fold(0.0, f64::max)
}

fn main() {
    let grid = Grid::new(Dim::One, 512, 80.0).unwrap();
    let beta = Nonlinearity::cubic_quintic();
    let fam = family_scan(&beta, 1.86, 1.8745, 18, &grid).unwrap();
    let sample = fam.samples.last().unwrap();
    let h =
        LinearizedOperator::assemble_from_profile(&beta, &grid, sample.omega, &sample.phi).unwrap();
    let spec = discrete_spectrum(&h, None, 4).unwrap();
    let xi = &spec.modes[0].xi;
    let xi_im = xi
        .c1
        .iter()
        .chain(&xi.c2)
        .map(|c| c.im.abs())
        .fold(0.0, f64::max);
    println!("mode imag contamination: {:.3e}", xi_im);

    let mut inner = SpinorField::symmetric_real(&grid, &sample.phi);
    inner.axpy(C64::new(0.02, 0.0), xi);
    inner.axpy(C64::new(0.02, 0.0), &xi.sigma1());
    println!("inner defect: {:.3e}", defect(&inner));
    let u0 = gauge_boost(&inner, 0.0, 0.0, 0.0).unwrap();
    println!("u0 defect: {:.3e}", defect(&u0));
    let b = gauge_boost(&u0, std::f64::consts::PI / 40.0, 0.2, 1.0).unwrap();
    println!("boosted defect: {:.3e} (sup {:.3e})", defect(&b), 1e-8 * (1.0 + 1.4));
    let b2 = gauge_boost(&u0, std::f64::consts::PI / 40.0, 0.2, 0.0).unwrap();
    println!("boost-no-shift defect: {:.3e}", defect(&b2));
    let b3 = gauge_boost(&u0, 0.0, 0.0, 1.0).unwrap();
    println!("shift-only defect: {:.3e}", defect(&b3));
}
