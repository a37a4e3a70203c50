//! Lorentz-Lorentz permittivity of a dense two-level gas.
//!
//! The reduced polarizability f(δ) = 1/(−δ − i/2) is the two-level response in
//! units of d₀²/(ħγ). With the dipole eliminated the local-field form reads
//!
//! ε(δ) = 1 + 3πñ f / (1 − πñ f).
//!
//! The same expressions continue analytically to complex δ, which is where the
//! pole finder evaluates them.

use std::f64::consts::PI;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::{EpsilonMode, ModelParams};

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum DielectricError {
    /// The local-field denominator 1 − πñf vanishes.
    #[error("permittivity pole at delta = {delta}")]
    Pole { delta: Complex64 },
}

/// Complex permittivity together with its principal square root.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Permittivity {
    pub value: Complex64,
    pub root: Complex64,
}

impl Permittivity {
    fn from_value(value: Complex64) -> Self {
        Self { value, root: refractive_root(value) }
    }

    pub fn vacuum() -> Self {
        Self { value: Complex64::new(1.0, 0.0), root: Complex64::new(1.0, 0.0) }
    }
}

/// f(δ) = 1/(−δ − i/2).
pub fn reduced_polarizability(delta: f64) -> Complex64 {
    reduced_polarizability_at(Complex64::new(delta, 0.0))
}

/// Analytic continuation of [`reduced_polarizability`] to complex detuning.
pub fn reduced_polarizability_at(delta: Complex64) -> Complex64 {
    let denom = -delta - Complex64::new(0.0, 0.5);
    denom.inv()
}

pub fn permittivity(delta: f64, params: &ModelParams) -> Result<Permittivity, DielectricError> {
    permittivity_at(Complex64::new(delta, 0.0), params)
}

pub fn permittivity_at(delta: Complex64, params: &ModelParams) -> Result<Permittivity, DielectricError> {
    let n = params.n_dimless();
    if params.epsilon_mode() == EpsilonMode::Unity || n == 0.0 {
        return Ok(Permittivity::vacuum());
    }
    let f = reduced_polarizability_at(delta);
    let local = Complex64::new(1.0, 0.0) - PI * n * f;
    let value = Complex64::new(1.0, 0.0) + 3.0 * PI * n * f / local;
    if local == Complex64::new(0.0, 0.0) || !value.is_finite() {
        return Err(DielectricError::Pole { delta });
    }
    Ok(Permittivity::from_value(value))
}

/// Principal square root, branch cut on the negative real axis, Re ≥ 0.
///
/// A value on the cut is treated as approached from Im > 0, so −|x| maps to
/// +i√|x| whatever the sign of its zero imaginary part.
pub fn refractive_root(eps: Complex64) -> Complex64 {
    if eps.im == 0.0 && eps.re < 0.0 {
        return Complex64::new(0.0, (-eps.re).sqrt());
    }
    eps.sqrt()
}
