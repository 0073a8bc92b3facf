//! Numerical laboratory for Bergman kernels of high tensor powers `L^p` of a
//! positive line bundle over the model projective manifolds `CP^1` and `CP^2`.
//!
//! The crate is organised bottom-up:
//!
//! * [`geometry`]: Fubini–Study reference data, weights `phi`, curvature
//!   `omega = dd^c phi + omega_0`, positivity floors and Taylor jets.
//! * [`quadrature`]: tensor rules on the compactified chart.
//! * [`sections`]: monomial bases of `H^0(CP^n, O(p))` and weighted evaluation.
//! * [`bergman`]: Gram assembly, orthonormalisation and kernel evaluation.
//! * [`model`]: the Gaussian model kernel and near-diagonal comparison.
//! * [`spectral`]: Galerkin spectrum of `D_p^2` and the Fourier filter.
//! * [`lab`]: experiment configuration, sweeps, power-law fits and output.

pub mod bergman;
pub mod geometry;
pub mod lab;
pub mod model;
pub mod quadrature;
pub mod sections;
pub mod spectral;

mod dd;
mod summation;

pub use num_complex::Complex64 as C64;

pub(crate) fn ln_factorial(k: u64) -> f64 {
    (2..=k).map(|i| (i as f64).ln()).sum()
}

pub(crate) fn binomial(n: u64, k: u64) -> u64 {
    if k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc * (n - i) / (i + 1))
}
