//! Ordering parameter of the condensate and its density form factor.
//!
//! Lengths are in units of 1/k₀ and densities in atoms per (1/k₀)³, so a
//! homogeneous profile stores ñ directly.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::quadrature::{integrate_adaptive, QuadResult};

/// Relative tolerance of the form-factor quadrature.
pub const FORM_FACTOR_REL_TOL: f64 = 1e-8;
const MAX_PANELS: usize = 20_000;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CondensateError {
    #[error("a homogeneous condensate is not normalizable and has no form factor")]
    NotNormalizable,
    #[error("{name} must be finite and positive, got {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error("form-factor quadrature at q = {q} not converged (error estimate {abs_error:e})")]
    NotConverged { q: f64, abs_error: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CondensateProfile {
    /// |Ξ|² = ñ everywhere.
    Homogeneous { n_dimless: f64 },
    /// Inverted parabola n_peak (1 − r²/R²) inside the Thomas-Fermi radius.
    ThomasFermi { atom_count: f64, tf_radius: f64 },
}

impl CondensateProfile {
    pub fn homogeneous(n_dimless: f64) -> Result<Self, CondensateError> {
        if !(n_dimless.is_finite() && n_dimless >= 0.0) {
            return Err(CondensateError::InvalidParameter { name: "n_dimless", value: n_dimless });
        }
        Ok(Self::Homogeneous { n_dimless })
    }

    pub fn thomas_fermi(atom_count: f64, tf_radius: f64) -> Result<Self, CondensateError> {
        for (name, value) in [("atom_count", atom_count), ("tf_radius", tf_radius)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(CondensateError::InvalidParameter { name, value });
            }
        }
        Ok(Self::ThomasFermi { atom_count, tf_radius })
    }

    /// 15N/(8πR³) for Thomas-Fermi, ñ for the homogeneous gas.
    pub fn peak_density(&self) -> f64 {
        match *self {
            Self::Homogeneous { n_dimless } => n_dimless,
            Self::ThomasFermi { atom_count, tf_radius } => 15.0 * atom_count / (8.0 * PI * tf_radius.powi(3)),
        }
    }

    /// Number of atoms; infinite for the homogeneous gas.
    pub fn atom_count(&self) -> f64 {
        match *self {
            Self::Homogeneous { .. } => f64::INFINITY,
            Self::ThomasFermi { atom_count, .. } => atom_count,
        }
    }
}

/// Atomic density at distance r from the trap centre.
pub fn density_at(profile: &CondensateProfile, r: f64) -> f64 {
    match *profile {
        CondensateProfile::Homogeneous { n_dimless } => n_dimless,
        CondensateProfile::ThomasFermi { tf_radius, .. } => {
            let x = r / tf_radius;
            profile.peak_density() * (1.0 - x * x).max(0.0)
        }
    }
}

/// Ordering parameter Ξ(r), taken real and non-negative: Ξ = √n.
pub fn order_parameter(profile: &CondensateProfile, r: f64) -> f64 {
    density_at(profile, r).sqrt()
}

fn sinc(x: f64) -> f64 {
    if x.abs() < 1e-4 {
        let x2 = x * x;
        1.0 - x2 / 6.0 * (1.0 - x2 / 20.0)
    } else {
        x.sin() / x
    }
}

/// F(q) = ∫ d³r e^{iq·r} n(r) = 4π ∫₀^R n(r) r² sinc(qr) dr, with its error estimate.
pub fn form_factor_quad(profile: &CondensateProfile, q: f64, rel_tol: f64) -> Result<QuadResult, CondensateError> {
    let tf_radius = match *profile {
        CondensateProfile::Homogeneous { .. } => return Err(CondensateError::NotNormalizable),
        CondensateProfile::ThomasFermi { tf_radius, .. } => tf_radius,
    };
    if !q.is_finite() {
        return Err(CondensateError::InvalidParameter { name: "q", value: q });
    }
    let q = q.abs();
    // at most half an oscillation of sin(qr) per starting panel
    let panels = ((q * tf_radius / PI).ceil() as usize).max(1);
    let breakpoints: Vec<f64> = (0..=panels).map(|i| tf_radius * i as f64 / panels as f64).collect();
    let scale = 4.0 * PI * profile.peak_density();
    let result = integrate_adaptive(
        |r| {
            let x = r / tf_radius;
            scale * (1.0 - x * x) * r * r * sinc(q * r)
        },
        &breakpoints,
        rel_tol,
        1e-15 * profile.atom_count(),
        MAX_PANELS,
    );
    if !result.converged {
        return Err(CondensateError::NotConverged { q, abs_error: result.abs_error });
    }
    Ok(result)
}

pub fn form_factor(profile: &CondensateProfile, q: f64) -> Result<f64, CondensateError> {
    form_factor_quad(profile, q, FORM_FACTOR_REL_TOL).map(|r| r.value)
}
