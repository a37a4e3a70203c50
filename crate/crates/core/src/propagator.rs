//! Polariton propagator of the homogeneous condensate.
//!
//! All values are stored dimensionless as γ·G. The inverse brackets are
//!
//! * transverse:   δ − ρ(k/k₀)² + πñ + (i/2)√ε(δ) − 3πñ·W(δ, κ)
//! * longitudinal: δ − ρ(k/k₀)² − 2πñ + (i/2)√ε(δ)
//! * exciton:      δ − 2πñ + (i/2)√ε(δ)
//!
//! where W = ω²/(ω² − c²k²) is the photon-pole weight. Replacing W by one
//! turns the transverse bracket into the longitudinal one.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dielectric::{permittivity_at, DielectricError};
use crate::params::{ModelParams, PhotonTerm};

const UNIT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, Copy, PartialEq)]
pub enum PropagatorError {
    #[error("light-cone singularity at delta = kappa = {kappa} with zero regularizer")]
    LightCone { kappa: f64 },
    #[error("evaluation on a propagator pole at delta = {delta}, kappa = {kappa}")]
    OnPole { delta: Complex64, kappa: f64 },
    #[error(transparent)]
    Permittivity(#[from] DielectricError),
    #[error("direction must have unit norm, got |k| = {norm}")]
    NonUnitDirection { norm: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Transverse,
    Longitudinal,
}

impl std::fmt::Display for Component {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Component::Transverse => f.write_str("transverse"),
            Component::Longitudinal => f.write_str("longitudinal"),
        }
    }
}

/// One evaluation γ·G(δ, κ).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GreenValue {
    pub delta: f64,
    pub kappa: f64,
    pub value: Complex64,
}

/// Exact photon-pole weight W = (R+δ)² / [((δ−κ) + iη)(2R+δ+κ)].
///
/// The difference δ−κ is formed from the detunings themselves, never from the
/// absolute frequencies, so it stays exact close to the light cone.
pub fn photon_pole_weight(delta: f64, kappa: f64, params: &ModelParams) -> Result<Complex64, PropagatorError> {
    exact_weight(Complex64::new(delta, 0.0), kappa, params)
}

fn cone_offset(delta: Complex64, kappa: f64, params: &ModelParams) -> Result<Complex64, PropagatorError> {
    let offset = Complex64::new(delta.re - kappa, delta.im + params.light_cone_reg());
    if offset.re == 0.0 && offset.im == 0.0 {
        return Err(PropagatorError::LightCone { kappa });
    }
    Ok(offset)
}

fn exact_weight(delta: Complex64, kappa: f64, params: &ModelParams) -> Result<Complex64, PropagatorError> {
    let r = params.resonance_ratio();
    let offset = cone_offset(delta, kappa, params)?;
    let omega = delta + r;
    let sum = delta + (2.0 * r + kappa);
    Ok(omega * omega / (offset * sum))
}

/// Photon-pole weight as selected by the model's [`PhotonTerm`], at complex δ.
pub fn photon_weight_at(delta: Complex64, kappa: f64, params: &ModelParams) -> Result<Complex64, PropagatorError> {
    match params.photon_term() {
        PhotonTerm::Exact => exact_weight(delta, kappa, params),
        PhotonTerm::NearCone => {
            let offset = cone_offset(delta, kappa, params)?;
            Ok(0.5 * params.resonance_ratio() / offset)
        }
        PhotonTerm::Static => Ok(Complex64::new(1.0, 0.0)),
        PhotonTerm::Off => Ok(Complex64::new(0.0, 0.0)),
    }
}

fn damping(delta: Complex64, params: &ModelParams) -> Result<Complex64, PropagatorError> {
    let eps = permittivity_at(delta, params)?;
    Ok(Complex64::new(0.0, 0.5) * eps.root)
}

/// Inverse-propagator bracket D(δ) = 1/(γG) of one tensor component.
pub fn inverse_bracket_at(
    component: Component,
    delta: Complex64,
    kappa: f64,
    params: &ModelParams,
) -> Result<Complex64, PropagatorError> {
    let n = params.n_dimless();
    let base = delta - params.recoil_shift(kappa) + damping(delta, params)?;
    match component {
        Component::Transverse => {
            // the photon term carries the factor ñ; at zero density it is absent
            // even exactly on an unregularized light cone
            if n == 0.0 {
                return Ok(base);
            }
            let w = photon_weight_at(delta, kappa, params)?;
            Ok(base + PI * n - 3.0 * PI * n * w)
        }
        Component::Longitudinal => Ok(base - 2.0 * PI * n),
    }
}

/// Inverse bracket of the motionless exciton, δ − 2πñ + (i/2)√ε(δ).
pub fn exciton_bracket_at(delta: Complex64, params: &ModelParams) -> Result<Complex64, PropagatorError> {
    Ok(delta + damping(delta, params)? - 2.0 * PI * params.n_dimless())
}

fn invert(bracket: Complex64, delta: f64, kappa: f64) -> Result<GreenValue, PropagatorError> {
    let value = bracket.inv();
    if bracket == Complex64::new(0.0, 0.0) || !value.is_finite() {
        return Err(PropagatorError::OnPole { delta: Complex64::new(delta, 0.0), kappa });
    }
    Ok(GreenValue { delta, kappa, value })
}

/// Evaluates one component at real (δ, κ).
pub fn green(
    component: Component,
    delta: f64,
    kappa: f64,
    params: &ModelParams,
) -> Result<GreenValue, PropagatorError> {
    let bracket = inverse_bracket_at(component, Complex64::new(delta, 0.0), kappa, params)?;
    invert(bracket, delta, kappa)
}

/// Transverse component γ·G⊥(δ, κ).
pub fn g_transverse(delta: f64, kappa: f64, params: &ModelParams) -> Result<GreenValue, PropagatorError> {
    green(Component::Transverse, delta, kappa, params)
}

/// Longitudinal component γ·G∥(δ, κ).
pub fn g_longitudinal(delta: f64, kappa: f64, params: &ModelParams) -> Result<GreenValue, PropagatorError> {
    green(Component::Longitudinal, delta, kappa, params)
}

/// Static exciton propagator, the k → 0 and W → 1 limit with recoil dropped.
///
/// The returned value carries κ = −R, the k = 0 point.
pub fn g_exciton(delta: f64, params: &ModelParams) -> Result<GreenValue, PropagatorError> {
    let bracket = exciton_bracket_at(Complex64::new(delta, 0.0), params)?;
    invert(bracket, delta, -params.resonance_ratio())
}

/// Full propagator tensor G∥ k̂k̂ᵀ + G⊥ (I − k̂k̂ᵀ).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GreenTensor {
    pub khat: Vector3<f64>,
    pub components: Matrix3<Complex64>,
}

impl GreenTensor {
    pub fn assemble(
        khat: Vector3<f64>,
        longitudinal: Complex64,
        transverse: Complex64,
    ) -> Result<Self, PropagatorError> {
        let norm = khat.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOLERANCE {
            return Err(PropagatorError::NonUnitDirection { norm });
        }
        let projector = khat * khat.transpose();
        let components = Matrix3::from_fn(|i, j| {
            let p = projector[(i, j)];
            let identity = if i == j { 1.0 } else { 0.0 };
            longitudinal * p + transverse * (identity - p)
        });
        Ok(Self { khat, components })
    }

    /// k̂ᵀ·G·k̂, which recovers G∥.
    pub fn longitudinal_part(&self) -> Complex64 {
        let k = self.khat.map(|x| Complex64::new(x, 0.0));
        (k.transpose() * self.components * k)[(0, 0)]
    }

    pub fn trace(&self) -> Complex64 {
        self.components.trace()
    }
}

pub fn green_tensor(
    khat: Vector3<f64>,
    delta: f64,
    kappa: f64,
    params: &ModelParams,
) -> Result<GreenTensor, PropagatorError> {
    let norm = khat.norm();
    if !norm.is_finite() || (norm - 1.0).abs() > UNIT_TOLERANCE {
        return Err(PropagatorError::NonUnitDirection { norm });
    }
    let transverse = g_transverse(delta, kappa, params)?.value;
    let longitudinal = g_longitudinal(delta, kappa, params)?.value;
    GreenTensor::assemble(khat, longitudinal, transverse)
}
