//! Extinction and coherent elastic cross sections.
//!
//! All cross sections are dimensionless, σk₀² and (dσ/dΩ)k₀². The quantization
//! volume cancels symbolically between the amplitude normalization and the
//! cross-section prefactors, so it never appears here.
//!
//! The elastic amplitude is closed with the motionless-exciton propagator and
//! the density form factor of the target:
//!
//! a = (3/4)(k/k₀)² (e_out*·e_in) γG_exc(δ) F(q),   q = |k_in − k_out|.

use std::f64::consts::PI;

use nalgebra::Vector3;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::condensate::{form_factor, CondensateError, CondensateProfile};
use crate::dielectric::{permittivity, reduced_polarizability};
use crate::params::{EpsilonMode, ModelParams};
use crate::propagator::{g_exciton, PropagatorError};
use crate::quadrature::composite_rule;

const GEOMETRY_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScatteringError {
    #[error("invalid scattering geometry: {0}")]
    InvalidGeometry(&'static str),
    #[error("inelastic channel: incoming detuning {incoming}, outgoing detuning {outgoing}")]
    Inelastic { incoming: f64, outgoing: f64 },
    #[error(transparent)]
    Condensate(#[from] CondensateError),
    #[error(transparent)]
    Propagator(#[from] PropagatorError),
    #[error("angular grid has {panels} polar panels, at least {required} needed to resolve the form factor")]
    GridTooCoarse { panels: usize, required: usize },
    #[error("angular quadrature under-resolved: estimated relative error {estimate:e} above {tolerance:e}")]
    UnderResolved { estimate: f64, tolerance: f64 },
    #[error("invalid input {name} = {value}")]
    InvalidInput { name: &'static str, value: f64 },
}

/// What the light scatters from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "target", rename_all = "snake_case")]
pub enum Target {
    /// A single atom, F ≡ 1.
    SingleAtom,
    Condensate(CondensateProfile),
}

impl Target {
    pub fn form_factor(&self, q: f64) -> Result<f64, ScatteringError> {
        match self {
            Target::SingleAtom => Ok(1.0),
            Target::Condensate(profile) => Ok(form_factor(profile, q)?),
        }
    }

    fn tf_radius(&self) -> Option<f64> {
        match self {
            Target::Condensate(CondensateProfile::ThomasFermi { tf_radius, .. }) => Some(*tf_radius),
            _ => None,
        }
    }
}

/// Incoming and outgoing photon modes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScatteringGeometry {
    k_in_hat: Vector3<f64>,
    k_out_hat: Vector3<f64>,
    e_in: Vector3<Complex64>,
    e_out: Vector3<Complex64>,
    delta: f64,
    delta_out: f64,
}

fn check_mode(k: &Vector3<f64>, e: &Vector3<Complex64>) -> Result<(), ScatteringError> {
    if (k.norm() - 1.0).abs() > GEOMETRY_TOL {
        return Err(ScatteringError::InvalidGeometry("wave-vector direction is not a unit vector"));
    }
    if (e.norm() - 1.0).abs() > GEOMETRY_TOL {
        return Err(ScatteringError::InvalidGeometry("polarization vector is not unit-norm"));
    }
    let kc = k.map(|x| Complex64::new(x, 0.0));
    if kc.dotc(e).norm() > GEOMETRY_TOL {
        return Err(ScatteringError::InvalidGeometry("polarization is not transverse to the wave vector"));
    }
    Ok(())
}

impl ScatteringGeometry {
    /// Elastic geometry: the outgoing photon has the incoming detuning.
    pub fn elastic(
        k_in_hat: Vector3<f64>,
        e_in: Vector3<Complex64>,
        k_out_hat: Vector3<f64>,
        e_out: Vector3<Complex64>,
        delta: f64,
    ) -> Result<Self, ScatteringError> {
        check_mode(&k_in_hat, &e_in)?;
        check_mode(&k_out_hat, &e_out)?;
        if !delta.is_finite() {
            return Err(ScatteringError::InvalidInput { name: "delta", value: delta });
        }
        Ok(Self { k_in_hat, k_out_hat, e_in, e_out, delta, delta_out: delta })
    }

    /// Sets a different detuning for the scattered photon.
    pub fn with_outgoing_detuning(mut self, delta_out: f64) -> Self {
        self.delta_out = delta_out;
        self
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn k_in_hat(&self) -> Vector3<f64> {
        self.k_in_hat
    }

    pub fn k_out_hat(&self) -> Vector3<f64> {
        self.k_out_hat
    }

    pub fn e_in(&self) -> Vector3<Complex64> {
        self.e_in
    }

    pub fn e_out(&self) -> Vector3<Complex64> {
        self.e_out
    }

    /// Momentum transfer |k_in − k_out| in units of k₀.
    pub fn momentum_transfer(&self, params: &ModelParams) -> f64 {
        params.frequency_ratio(self.delta) * (self.k_in_hat - self.k_out_hat).norm()
    }

    /// The same geometry with every vector rotated.
    pub fn rotated(&self, rotation: &nalgebra::Rotation3<f64>) -> Self {
        let m = rotation.matrix().map(|x| Complex64::new(x, 0.0));
        Self {
            k_in_hat: rotation * self.k_in_hat,
            k_out_hat: rotation * self.k_out_hat,
            e_in: m * self.e_in,
            e_out: m * self.e_out,
            ..*self
        }
    }
}

/// Per-atom extinction σk₀² = 2(1 + δ/R) Im√ε(δ) / ñ.
///
/// The Lorentz-Lorentz permittivity is used whatever the model's epsilon mode.
/// At ñ = 0 the dilute limit 3π(1 + δ/R) Im f(δ) is returned.
pub fn extinction_cross_section(delta: f64, params: &ModelParams) -> Result<f64, ScatteringError> {
    if !delta.is_finite() {
        return Err(ScatteringError::InvalidInput { name: "delta", value: delta });
    }
    let n = params.n_dimless();
    let frequency = params.frequency_ratio(delta);
    if n == 0.0 {
        return Ok(3.0 * PI * frequency * reduced_polarizability(delta).im);
    }
    let medium = params.with_epsilon_mode(EpsilonMode::Full);
    let eps = permittivity(delta, &medium).map_err(PropagatorError::from)?;
    // √ε − 1 = (ε − 1)/(√ε + 1) keeps the dilute regime free of cancellation
    let excess = (eps.value - 1.0) / (eps.root + 1.0);
    Ok(2.0 * frequency * excess.im / n)
}

fn amplitude_with_form_factor(
    geom: &ScatteringGeometry,
    form: f64,
    exciton: Complex64,
    params: &ModelParams,
) -> Complex64 {
    let ratio = params.frequency_ratio(geom.delta);
    let overlap = geom.e_out.dotc(&geom.e_in);
    0.75 * ratio * ratio * overlap * exciton * form
}

fn check_elastic(geom: &ScatteringGeometry) -> Result<(), ScatteringError> {
    if geom.delta_out != geom.delta {
        return Err(ScatteringError::Inelastic { incoming: geom.delta, outgoing: geom.delta_out });
    }
    Ok(())
}

/// Dimensionless elastic amplitude a.
pub fn elastic_amplitude(
    geom: &ScatteringGeometry,
    target: &Target,
    params: &ModelParams,
) -> Result<Complex64, ScatteringError> {
    check_elastic(geom)?;
    let exciton = g_exciton(geom.delta, params)?.value;
    let form = target.form_factor(geom.momentum_transfer(params))?;
    Ok(amplitude_with_form_factor(geom, form, exciton, params))
}

/// (dσ/dΩ)k₀² = |a|².
pub fn differential_cross_section(
    geom: &ScatteringGeometry,
    target: &Target,
    params: &ModelParams,
) -> Result<f64, ScatteringError> {
    Ok(elastic_amplitude(geom, target, params)?.norm_sqr())
}

/// Product Gauss-Legendre grid over the outgoing sphere.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AngularGrid {
    pub theta_panels: usize,
    pub theta_order: usize,
    pub phi_order: usize,
    pub rel_tol: f64,
}

impl Default for AngularGrid {
    fn default() -> Self {
        Self { theta_panels: 8, theta_order: 16, phi_order: 16, rel_tol: 1e-6 }
    }
}

impl AngularGrid {
    /// Fewest polar panels that resolve the form factor of `target`: 8·k·R_tf.
    pub fn required_panels(target: &Target, delta: f64, params: &ModelParams) -> usize {
        match target.tf_radius() {
            Some(radius) => (8.0 * params.frequency_ratio(delta) * radius).ceil() as usize,
            None => 1,
        }
    }

    /// The default grid refined until it meets the panel requirement.
    pub fn resolving(target: &Target, delta: f64, params: &ModelParams) -> Self {
        let base = Self::default();
        Self { theta_panels: base.theta_panels.max(Self::required_panels(target, delta, params)), ..base }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntegratedElastic {
    /// Sum over both outgoing polarizations.
    pub total: f64,
    /// Outgoing polarization along the polar unit vector θ̂.
    pub theta_channel: f64,
    /// Outgoing polarization along the azimuthal unit vector φ̂.
    pub phi_channel: f64,
    pub error_estimate: f64,
}

fn integrate_channels(
    delta: f64,
    target: &Target,
    params: &ModelParams,
    panels: usize,
    theta_order: usize,
    phi_order: usize,
) -> Result<(f64, f64), ScatteringError> {
    let exciton = g_exciton(delta, params)?.value;
    let k_in = Vector3::z();
    let e_in = Vector3::new(Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0));
    let theta_rule = composite_rule(0.0, PI, panels, theta_order);
    let phi_rule = composite_rule(0.0, 2.0 * PI, 1, phi_order);
    let mut theta_sum = 0.0;
    let mut phi_sum = 0.0;
    for &(theta, wt) in &theta_rule {
        let (st, ct) = theta.sin_cos();
        for &(phi, wp) in &phi_rule {
            let (sp, cp) = phi.sin_cos();
            let k_out = Vector3::new(st * cp, st * sp, ct);
            let theta_hat = Vector3::new(ct * cp, ct * sp, -st).map(|x| Complex64::new(x, 0.0));
            let phi_hat = Vector3::new(-sp, cp, 0.0).map(|x| Complex64::new(x, 0.0));
            let geom = ScatteringGeometry {
                k_in_hat: k_in,
                k_out_hat: k_out,
                e_in,
                e_out: theta_hat,
                delta,
                delta_out: delta,
            };
            let form = target.form_factor(geom.momentum_transfer(params))?;
            let weight = wt * wp * st;
            theta_sum += weight * amplitude_with_form_factor(&geom, form, exciton, params).norm_sqr();
            let geom = ScatteringGeometry { e_out: phi_hat, ..geom };
            phi_sum += weight * amplitude_with_form_factor(&geom, form, exciton, params).norm_sqr();
        }
    }
    Ok((theta_sum, phi_sum))
}

fn reduced_order(order: usize) -> usize {
    (order - (order / 4).max(1)).max(1)
}

/// Elastic cross section integrated over the outgoing sphere and summed over
/// an orthonormal outgoing polarization pair, for light along ẑ polarized
/// along x̂.
///
/// The error estimate compares against the same panels at three quarters of
/// the Gauss order.
pub fn integrated_elastic(
    delta: f64,
    target: &Target,
    params: &ModelParams,
    grid: &AngularGrid,
) -> Result<IntegratedElastic, ScatteringError> {
    if !delta.is_finite() {
        return Err(ScatteringError::InvalidInput { name: "delta", value: delta });
    }
    if grid.theta_panels == 0 || grid.theta_order < 2 || grid.phi_order < 2 {
        return Err(ScatteringError::InvalidInput { name: "angular grid size", value: 0.0 });
    }
    let required = AngularGrid::required_panels(target, delta, params);
    if grid.theta_panels < required {
        return Err(ScatteringError::GridTooCoarse { panels: grid.theta_panels, required });
    }
    let (theta_channel, phi_channel) =
        integrate_channels(delta, target, params, grid.theta_panels, grid.theta_order, grid.phi_order)?;
    let (coarse_theta, coarse_phi) = integrate_channels(
        delta,
        target,
        params,
        grid.theta_panels,
        reduced_order(grid.theta_order),
        reduced_order(grid.phi_order),
    )?;
    let total = theta_channel + phi_channel;
    let error_estimate = (total - coarse_theta - coarse_phi).abs();
    if error_estimate > grid.rel_tol * total.abs() {
        return Err(ScatteringError::UnderResolved { estimate: error_estimate / total.abs(), tolerance: grid.rel_tol });
    }
    Ok(IntegratedElastic { total, theta_channel, phi_channel, error_estimate })
}

/// Converts σk₀² to m² for the resonance wavelength `wavelength` (m).
pub fn to_si_area(sigma_k0_sq: f64, wavelength: f64) -> f64 {
    let k0 = 2.0 * PI / wavelength;
    sigma_k0_sq / (k0 * k0)
}
