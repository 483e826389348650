//! Numerical laboratory for moving solitons of nonlinear Schrodinger equations
//!
//! The equation under study is
//!
//! ```text
//!     i u_t = -Laplace(u) + beta(|u|^2) u,      u(t, x) in C,
//! ```
//!
//! with a smooth nonlinearity `beta` vanishing at zero. The crate builds the
//! standing-wave (soliton) families of this equation, linearizes around them in
//! the doubled `(u, conj u)` formalism, extracts the discrete spectrum of the
//! linearization, and measures the nonlinear damping of internal modes
//! (Fermi-golden-rule coefficient) both from first principles and from direct
//! time-dependent simulation.
//!
//! Modules are arranged bottom-up:
//!
//! * [`field`]: grids, spinor fields, conserved functionals, snapshot I/O
//! * [`groundstate`]: soliton profiles and soliton families
//! * [`linearize`]: the matrix linearization and its symplectic projections
//! * [`spectrum`]: internal modes and spectral hypothesis checks
//! * [`modulation`]: nonlinear soliton + radiation decompositions
//! * [`resolvent`]: resolvents, limiting absorption, homological equations
//! * [`fgr`]: resonant couplings and the damping coefficient
//! * [`simulate`]: conservative split-step time integration
//! * [`diagnostics`]: trajectory-level asymptotic-stability diagnostics

pub mod config;
pub mod diagnostics;
pub mod error;
pub mod fgr;
pub mod field;
pub mod groundstate;
pub mod krylov;
pub mod linearize;
pub mod modulation;
pub mod report;
pub mod resolvent;
pub mod simulate;
pub mod spectrum;
pub mod svg;

pub use error::{Error, Result};

/// Runtime thread cap, read from `NLSLAB_THREADS` (defaults to the hardware
/// parallelism). All parallel sections in the crate go through this pool.
pub fn thread_pool() -> &'static rayon::ThreadPool {
    use once_cell::sync::OnceCell;
    static POOL: OnceCell<rayon::ThreadPool> = OnceCell::new();
    POOL.get_or_init(|| {
        let n = std::env::var("NLSLAB_THREADS")
            .ok()
            .and_then(|s| s.parse::<usize>().ok())
            .filter(|&n| n > 0)
            .unwrap_or_else(|| {
                std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
            });
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .expect("thread pool")
    })
}
