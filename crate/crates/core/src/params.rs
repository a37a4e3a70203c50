//! Dimensionless unit system for the condensate model.
//!
//! Every spectral quantity is measured in units of the natural linewidth γ.
//! A point of the (ω, k) plane is addressed by the pair
//!
//! * δ = (ω − ω₀)/γ, the optical detuning, and
//! * κ = (ck − ω₀)/γ, the wavenumber written as a detuning of the light line.
//!
//! The dipole moment never appears explicitly. The two-level decay identity
//! γ = 4d₀²k₀³/(3ħ) turns every coupling 4πn₀d₀²/ħ into 3πñγ, where
//! ñ = n₀/k₀³ is the density per cubed reduced wavelength.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;
/// Reduced Planck constant (J s).
pub const HBAR: f64 = 1.054_571_817e-34;
/// Unified atomic mass unit (kg).
pub const ATOMIC_MASS_UNIT: f64 = 1.660_539_066_60e-27;

/// Rubidium-87 D2 line wavelength (m), rounded to 780 nm.
pub const RB87_D2_WAVELENGTH: f64 = 780e-9;
/// Rubidium-87 D2 natural linewidth γ/2π (Hz).
pub const RB87_D2_LINEWIDTH_HZ: f64 = 6.0666e6;
/// Rubidium-87 atomic mass (u).
pub const RB87_MASS_U: f64 = 86.909_180_527;

/// Default regularizer of the photon-pole denominator, in units of γ.
pub const DEFAULT_LIGHT_CONE_REG: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamsError {
    #[error("{name} must be finite and positive, got {value}")]
    NotPositive { name: &'static str, value: f64 },
    #[error("{name} must be finite and non-negative, got {value}")]
    Negative { name: &'static str, value: f64 },
}

/// How the permittivity enters the radiative damping term.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum EpsilonMode {
    /// Lorentz-Lorentz permittivity of the medium.
    #[default]
    Full,
    /// ε ≡ 1, used where closed-form expectations are needed.
    Unity,
}

/// Treatment of the photon-pole weight W = ω²/(ω² − c²k²) in the transverse bracket.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PhotonTerm {
    /// The full expression (R+δ)² / [((δ−κ) + iη)(2R+δ+κ)].
    #[default]
    Exact,
    /// Leading order near the light cone: R / [2((δ−κ) + iη)].
    NearCone,
    /// W ≡ 1, the motionless-exciton limit.
    Static,
    /// W ≡ 0, the photon term switched off.
    Off,
}

/// Immutable, validated set of dimensionless model constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    n_dimless: f64,
    resonance_ratio: f64,
    recoil_ratio: f64,
    light_cone_reg: f64,
    epsilon_mode: EpsilonMode,
    photon_term: PhotonTerm,
}

/// Physical description of the atomic transition, in SI units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AtomSpec {
    /// Resonance wavelength λ₀ (m).
    pub wavelength: f64,
    /// Natural linewidth γ as an angular frequency (rad/s).
    pub linewidth: f64,
    /// Atomic mass (kg).
    pub mass: f64,
}

impl AtomSpec {
    pub fn rubidium_d2() -> Self {
        Self {
            wavelength: RB87_D2_WAVELENGTH,
            linewidth: 2.0 * PI * RB87_D2_LINEWIDTH_HZ,
            mass: RB87_MASS_U * ATOMIC_MASS_UNIT,
        }
    }

    /// Resonance wavenumber k₀ = 2π/λ₀ (1/m).
    pub fn k0(&self) -> f64 {
        2.0 * PI / self.wavelength
    }
}

impl Default for AtomSpec {
    fn default() -> Self {
        Self::rubidium_d2()
    }
}

/// Evaluation options that do not follow from the atomic constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelOptions {
    pub light_cone_reg: f64,
    pub epsilon_mode: EpsilonMode,
    pub photon_term: PhotonTerm,
}

impl Default for ModelOptions {
    fn default() -> Self {
        Self { light_cone_reg: DEFAULT_LIGHT_CONE_REG, epsilon_mode: EpsilonMode::Full, photon_term: PhotonTerm::Exact }
    }
}

fn positive(name: &'static str, value: f64) -> Result<f64, ParamsError> {
    if value.is_finite() && value > 0.0 {
        Ok(value)
    } else {
        Err(ParamsError::NotPositive { name, value })
    }
}

fn non_negative(name: &'static str, value: f64) -> Result<f64, ParamsError> {
    if value.is_finite() && value >= 0.0 {
        Ok(value)
    } else {
        Err(ParamsError::Negative { name, value })
    }
}

/// Builds the dimensionless model from physical inputs.
///
/// The resonance ratio is R = (2πc/λ₀)/γ and the recoil ratio is
/// ρ = ħk₀²/(2mγ). The chemical potential of the condensate is taken as zero.
pub fn build_model(atom: &AtomSpec, n_dimless: f64, options: ModelOptions) -> Result<ModelParams, ParamsError> {
    let wavelength = positive("wavelength", atom.wavelength)?;
    let linewidth = positive("linewidth", atom.linewidth)?;
    let mass = positive("atomic mass", atom.mass)?;
    let k0 = 2.0 * PI / wavelength;
    let resonance_ratio = SPEED_OF_LIGHT * k0 / linewidth;
    let recoil_ratio = HBAR * k0 * k0 / (2.0 * mass * linewidth);
    ModelParams::new(n_dimless, resonance_ratio, recoil_ratio)?.with_options(options)
}

impl ModelParams {
    /// Dimensionless constructor with default options.
    pub fn new(n_dimless: f64, resonance_ratio: f64, recoil_ratio: f64) -> Result<Self, ParamsError> {
        let defaults = ModelOptions::default();
        Ok(Self {
            n_dimless: non_negative("n_dimless", n_dimless)?,
            resonance_ratio: positive("resonance_ratio", resonance_ratio)?,
            recoil_ratio: non_negative("recoil_ratio", recoil_ratio)?,
            light_cone_reg: defaults.light_cone_reg,
            epsilon_mode: defaults.epsilon_mode,
            photon_term: defaults.photon_term,
        })
    }

    /// Rubidium-87 D2 line at the given dimensionless density.
    pub fn rubidium_d2(n_dimless: f64) -> Result<Self, ParamsError> {
        build_model(&AtomSpec::rubidium_d2(), n_dimless, ModelOptions::default())
    }

    pub fn with_options(self, options: ModelOptions) -> Result<Self, ParamsError> {
        Ok(self
            .with_light_cone_reg(options.light_cone_reg)?
            .with_epsilon_mode(options.epsilon_mode)
            .with_photon_term(options.photon_term))
    }

    pub fn with_light_cone_reg(mut self, eta: f64) -> Result<Self, ParamsError> {
        self.light_cone_reg = non_negative("light_cone_reg", eta)?;
        Ok(self)
    }

    pub fn with_epsilon_mode(mut self, mode: EpsilonMode) -> Self {
        self.epsilon_mode = mode;
        self
    }

    pub fn with_photon_term(mut self, term: PhotonTerm) -> Self {
        self.photon_term = term;
        self
    }

    pub fn with_n_dimless(mut self, n_dimless: f64) -> Result<Self, ParamsError> {
        self.n_dimless = non_negative("n_dimless", n_dimless)?;
        Ok(self)
    }

    pub fn with_recoil_ratio(mut self, recoil_ratio: f64) -> Result<Self, ParamsError> {
        self.recoil_ratio = non_negative("recoil_ratio", recoil_ratio)?;
        Ok(self)
    }

    /// ñ = n₀(λ₀/2π)³.
    pub fn n_dimless(&self) -> f64 {
        self.n_dimless
    }

    /// R = ω₀/γ.
    pub fn resonance_ratio(&self) -> f64 {
        self.resonance_ratio
    }

    /// ρ = ħk₀²/(2mγ).
    pub fn recoil_ratio(&self) -> f64 {
        self.recoil_ratio
    }

    /// η, in units of γ.
    pub fn light_cone_reg(&self) -> f64 {
        self.light_cone_reg
    }

    pub fn epsilon_mode(&self) -> EpsilonMode {
        self.epsilon_mode
    }

    pub fn photon_term(&self) -> PhotonTerm {
        self.photon_term
    }

    pub fn options(&self) -> ModelOptions {
        ModelOptions {
            light_cone_reg: self.light_cone_reg,
            epsilon_mode: self.epsilon_mode,
            photon_term: self.photon_term,
        }
    }

    /// k/k₀ = 1 + κ/R.
    pub fn wavenumber_ratio(&self, kappa: f64) -> f64 {
        1.0 + kappa / self.resonance_ratio
    }

    /// ω/ω₀ = 1 + δ/R.
    pub fn frequency_ratio(&self, delta: f64) -> f64 {
        1.0 + delta / self.resonance_ratio
    }

    /// Recoil shift ħk²/(2mγ) = ρ(k/k₀)².
    pub fn recoil_shift(&self, kappa: f64) -> f64 {
        let ratio = self.wavenumber_ratio(kappa);
        self.recoil_ratio * ratio * ratio
    }

    /// Static Lorentz-Lorentz shift of this medium, in units of γ.
    pub fn lorentz_lorenz_shift(&self) -> f64 {
        PI * self.n_dimless
    }
}

/// Magnitude 4πn₀d₀²/(3ħγ) of the red Lorentz-Lorentz shift, which equals πñ
/// once d₀² = 3ħγ/(4k₀³) is substituted.
pub fn lorentz_lorenz_shift(n_dimless: f64) -> Result<f64, ParamsError> {
    Ok(PI * non_negative("n_dimless", n_dimless)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    #[test]
    fn resonance_ratio_of_rubidium_line() {
        let atom = AtomSpec { wavelength: 780e-9, linewidth: 2.0 * PI * 6.0666e6, mass: 86.909 * ATOMIC_MASS_UNIT };
        let params = build_model(&atom, 0.05, ModelOptions::default()).unwrap();
        // (2πc/λ₀)/γ = c / (λ₀ · 6.0666 MHz)
        let oracle = SPEED_OF_LIGHT / (780e-9 * 6.0666e6);
        assert!(rel(params.resonance_ratio(), oracle) < 1e-12);
        assert!(rel(params.resonance_ratio(), 6.34e7) < 1e-3);
    }

    #[test]
    fn recoil_ratio_of_rubidium_line() {
        let atom = AtomSpec { wavelength: 780e-9, linewidth: 2.0 * PI * 6.0666e6, mass: 86.909 * ATOMIC_MASS_UNIT };
        let params = build_model(&atom, 0.05, ModelOptions::default()).unwrap();
        assert!(rel(params.recoil_ratio(), 6.22e-4) < 1e-3, "{}", params.recoil_ratio());
    }

    #[test]
    fn density_stored_unchanged() {
        let params = ModelParams::rubidium_d2(0.05).unwrap();
        assert_eq!(params.n_dimless(), 0.05);
    }

    #[test]
    fn rejects_non_physical_inputs() {
        let mut atom = AtomSpec::rubidium_d2();
        atom.wavelength = 0.0;
        assert!(matches!(
            build_model(&atom, 0.05, ModelOptions::default()),
            Err(ParamsError::NotPositive { name: "wavelength", .. })
        ));
        let mut atom = AtomSpec::rubidium_d2();
        atom.mass = -1.0;
        assert!(build_model(&atom, 0.05, ModelOptions::default()).is_err());
        let mut atom = AtomSpec::rubidium_d2();
        atom.linewidth = f64::NAN;
        assert!(build_model(&atom, 0.05, ModelOptions::default()).is_err());
        assert!(ModelParams::rubidium_d2(-1.0).is_err());
        assert!(ModelParams::new(0.05, 0.0, 0.0).is_err());
        assert!(ModelParams::new(0.05, 1e7, 0.0).unwrap().with_light_cone_reg(-1e-3).is_err());
    }

    #[test]
    fn lorentz_lorenz_shift_values() {
        assert_eq!(lorentz_lorenz_shift(0.0).unwrap(), 0.0);
        assert!(rel(lorentz_lorenz_shift(0.05).unwrap(), 0.15708) < 1e-5);
        assert!(rel(lorentz_lorenz_shift(0.05).unwrap(), PI * 0.05) < 1e-15);
        assert!(rel(lorentz_lorenz_shift(0.1).unwrap(), 0.31416) < 1e-5);
        assert!(lorentz_lorenz_shift(-0.1).is_err());
    }

    #[test]
    fn build_model_is_deterministic() {
        let a = ModelParams::rubidium_d2(0.05).unwrap();
        let b = ModelParams::rubidium_d2(0.05).unwrap();
        assert_eq!(a.resonance_ratio().to_bits(), b.resonance_ratio().to_bits());
        assert_eq!(a.recoil_ratio().to_bits(), b.recoil_ratio().to_bits());
        assert_eq!(a, b);
    }

    proptest! {
        #[test]
        fn shift_is_linear_in_density(n in 0.0f64..10.0, a in 0.0f64..100.0) {
            let lhs = lorentz_lorenz_shift(a * n).unwrap();
            let rhs = a * lorentz_lorenz_shift(n).unwrap();
            prop_assert!((lhs - rhs).abs() <= 4.0 * f64::EPSILON * rhs.abs());
        }
    }
}
