//! Polariton propagators, dielectric response, quasi-energy poles and elastic
//! light scattering for a Bose-Einstein condensate of two-level atoms.
//!
//! Frequencies are detunings in units of the natural linewidth, see [`params`].

pub mod cli;
pub mod condensate;
pub mod dielectric;
pub mod params;
pub mod propagator;
pub mod quadrature;
pub mod scattering;
pub mod spectra;

pub use condensate::{density_at, form_factor, CondensateProfile};
pub use dielectric::{permittivity, Permittivity};
pub use params::{build_model, AtomSpec, EpsilonMode, ModelOptions, ModelParams, PhotonTerm};
pub use propagator::{g_exciton, g_longitudinal, g_transverse, green_tensor, Component, GreenTensor, GreenValue};
pub use scattering::{extinction_cross_section, integrated_elastic, AngularGrid, ScatteringGeometry, Target};
pub use spectra::{find_pole, sweep_surface, trace_dispersion, trace_samples, DispersionBranch, SpectralSurface};
