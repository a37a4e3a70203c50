//! Spectral surfaces and complex quasi-energy poles.
//!
//! A quasi-energy pole is a complex root δ* of the inverse bracket D(δ) at
//! fixed κ: its real part is the collective level shift, minus its imaginary
//! part the half-width.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::params::ModelParams;
use crate::propagator::{green, inverse_bracket_at, Component, PropagatorError};

pub const DEFAULT_CELL_BUDGET: usize = 10_000_000;
pub const DEFAULT_POLE_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_ITER: usize = 100;
const DIFF_STEP: f64 = 1e-6;
const MAX_HALVINGS: usize = 40;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectraError {
    #[error("{axis} grid is empty")]
    EmptyGrid { axis: &'static str },
    #[error("{axis} grid is not sorted ascending or has non-finite entries")]
    BadGrid { axis: &'static str },
    #[error("grid of {cells} cells exceeds the budget of {budget}")]
    BudgetExceeded { cells: usize, budget: usize },
    #[error("invalid {name}: {value}")]
    InvalidInput { name: &'static str, value: f64 },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PoleError {
    #[error("no convergence after {iterations} iterations: last iterate {last}, |D| = {residual:e}")]
    NotConverged { last: Complex64, residual: f64, iterations: usize },
    #[error("iteration diverged to a non-finite value after {iterations} iterations (last finite iterate {last})")]
    Diverged { last: Complex64, iterations: usize },
    #[error("bracket cannot be evaluated at the seed: {0}")]
    Singular(#[from] PropagatorError),
    #[error("invalid pole-search input {name} = {value}")]
    InvalidInput { name: &'static str, value: f64 },
}

/// One surface cell: a finite value or the kind of singularity met there.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cell {
    Value(Complex64),
    LightCone,
    Pole,
}

impl Cell {
    pub fn flag(&self) -> &'static str {
        match self {
            Cell::Value(_) => "ok",
            Cell::LightCone => "lightcone",
            Cell::Pole => "pole",
        }
    }

    pub fn value(&self) -> Option<Complex64> {
        match *self {
            Cell::Value(z) => Some(z),
            _ => None,
        }
    }

    fn from_eval(result: Result<Complex64, PropagatorError>) -> Self {
        match result {
            Ok(z) => Cell::Value(z),
            Err(PropagatorError::LightCone { .. }) => Cell::LightCone,
            Err(_) => Cell::Pole,
        }
    }
}

/// Dense (κ, δ) grid of one propagator component, row-major in κ.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectralSurface {
    pub component: Component,
    pub kappa_grid: Vec<f64>,
    pub delta_grid: Vec<f64>,
    pub values: Vec<Cell>,
    pub params_snapshot: ModelParams,
}

impl SpectralSurface {
    pub fn get(&self, kappa_index: usize, delta_index: usize) -> Cell {
        self.values[kappa_index * self.delta_grid.len() + delta_index]
    }

    pub fn row(&self, kappa_index: usize) -> &[Cell] {
        let width = self.delta_grid.len();
        &self.values[kappa_index * width..(kappa_index + 1) * width]
    }

    /// Index of the δ cell with the largest −Im(γG) in one κ row.
    pub fn peak_loss_index(&self, kappa_index: usize) -> Option<usize> {
        self.row(kappa_index)
            .iter()
            .enumerate()
            .filter_map(|(j, c)| c.value().map(|z| (j, -z.im)))
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(j, _)| j)
    }
}

fn check_grid(grid: &[f64], axis: &'static str) -> Result<(), SpectraError> {
    if grid.is_empty() {
        return Err(SpectraError::EmptyGrid { axis });
    }
    let finite = grid.iter().all(|x| x.is_finite());
    let sorted = grid.windows(2).all(|w| w[0] <= w[1]);
    if !(finite && sorted) {
        return Err(SpectraError::BadGrid { axis });
    }
    Ok(())
}

/// Evaluates `component` on every (κ, δ) pair of the grids.
pub fn sweep_surface(
    component: Component,
    kappa_grid: &[f64],
    delta_grid: &[f64],
    params: &ModelParams,
) -> Result<SpectralSurface, SpectraError> {
    sweep_surface_with_budget(component, kappa_grid, delta_grid, params, DEFAULT_CELL_BUDGET)
}

pub fn sweep_surface_with_budget(
    component: Component,
    kappa_grid: &[f64],
    delta_grid: &[f64],
    params: &ModelParams,
    budget: usize,
) -> Result<SpectralSurface, SpectraError> {
    check_grid(kappa_grid, "kappa")?;
    check_grid(delta_grid, "delta")?;
    let cells = kappa_grid.len().saturating_mul(delta_grid.len());
    if cells > budget {
        return Err(SpectraError::BudgetExceeded { cells, budget });
    }
    let values: Vec<Cell> = kappa_grid
        .par_iter()
        .flat_map_iter(|&kappa| {
            delta_grid
                .iter()
                .map(move |&delta| Cell::from_eval(green(component, delta, kappa, params).map(|g| g.value)))
        })
        .collect();
    Ok(SpectralSurface {
        component,
        kappa_grid: kappa_grid.to_vec(),
        delta_grid: delta_grid.to_vec(),
        values,
        params_snapshot: *params,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoleOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for PoleOptions {
    fn default() -> Self {
        Self { tol: DEFAULT_POLE_TOL, max_iter: DEFAULT_MAX_ITER }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoleSolution {
    pub pole: Complex64,
    pub residual: f64,
    pub iterations: usize,
}

fn central_derivative<F>(bracket: &F, x: Complex64) -> Option<Complex64>
where
    F: Fn(Complex64) -> Result<Complex64, PropagatorError>,
{
    let h = DIFF_STEP * x.norm().max(1.0);
    let hi = bracket(x + h).ok()?;
    let lo = bracket(x - h).ok()?;
    let d = (hi - lo) / (2.0 * h);
    (d.is_finite() && d.norm() > f64::MIN_POSITIVE).then_some(d)
}

/// Damped Newton iteration for a root of `bracket`.
///
/// The derivative is a central difference; where it underflows or cannot be
/// evaluated the secant through the previous iterate is used instead.
/// A returned pole always satisfies |D| < `tol`. The terms of D grow like |δ|
/// far from resonance, so there `tol` has to sit above their rounding level.
pub fn newton_root<F>(bracket: F, seed: Complex64, options: &PoleOptions) -> Result<PoleSolution, PoleError>
where
    F: Fn(Complex64) -> Result<Complex64, PropagatorError>,
{
    if !(options.tol > 0.0 && options.tol.is_finite()) {
        return Err(PoleError::InvalidInput { name: "tol", value: options.tol });
    }
    if !seed.is_finite() {
        return Err(PoleError::InvalidInput { name: "seed", value: seed.norm() });
    }
    let mut x = seed;
    let mut d = bracket(x)?;
    if !d.is_finite() {
        return Err(PoleError::Diverged { last: x, iterations: 0 });
    }
    let mut previous: Option<(Complex64, Complex64)> = None;
    for iteration in 0..options.max_iter {
        if d.norm() < options.tol {
            return Ok(PoleSolution { pole: x, residual: d.norm(), iterations: iteration });
        }
        let slope = central_derivative(&bracket, x).or_else(|| {
            previous.and_then(|(xp, dp)| {
                let s = (d - dp) / (x - xp);
                (s.is_finite() && s.norm() > 0.0).then_some(s)
            })
        });
        let Some(slope) = slope else {
            return Err(PoleError::NotConverged { last: x, residual: d.norm(), iterations: iteration });
        };
        let step = d / slope;
        if !step.is_finite() || !(x - step).is_finite() {
            return Err(PoleError::Diverged { last: x, iterations: iteration });
        }
        let mut accepted = None;
        let mut scale = 1.0;
        for _ in 0..MAX_HALVINGS {
            let candidate = x - step * scale;
            if let Ok(dc) = bracket(candidate) {
                if dc.is_finite() && dc.norm() < d.norm() {
                    accepted = Some((candidate, dc));
                    break;
                }
            }
            scale *= 0.5;
        }
        let (next, dn) = match accepted {
            Some(pair) => pair,
            // no damped step reduces |D|: take the full step to leave the basin
            None => {
                let candidate = x - step;
                match bracket(candidate) {
                    Ok(dc) if dc.is_finite() => (candidate, dc),
                    Ok(_) => return Err(PoleError::Diverged { last: x, iterations: iteration + 1 }),
                    Err(_) => {
                        return Err(PoleError::NotConverged { last: x, residual: d.norm(), iterations: iteration })
                    }
                }
            }
        };
        previous = Some((x, d));
        x = next;
        d = dn;
    }
    if d.norm() < options.tol {
        return Ok(PoleSolution { pole: x, residual: d.norm(), iterations: options.max_iter });
    }
    Err(PoleError::NotConverged { last: x, residual: d.norm(), iterations: options.max_iter })
}

/// Complex pole of one propagator component at fixed κ.
pub fn find_pole(
    component: Component,
    kappa: f64,
    seed: Complex64,
    options: &PoleOptions,
    params: &ModelParams,
) -> Result<PoleSolution, PoleError> {
    if !kappa.is_finite() {
        return Err(PoleError::InvalidInput { name: "kappa", value: kappa });
    }
    newton_root(|delta| inverse_bracket_at(component, delta, kappa, params), seed, options)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchLabel {
    AtomLike,
    PhotonLike,
}

impl std::fmt::Display for BranchLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            BranchLabel::AtomLike => f.write_str("atom_like"),
            BranchLabel::PhotonLike => f.write_str("photon_like"),
        }
    }
}

/// Default seed for a branch.
///
/// Atom-like branches start from the free-atom pole ρ(k/k₀)² − i/2.
/// Photon-like branches start from the root of the near-cone quadratic
/// (δ + πñ + i/2)(δ − κ + iη) = 3πñR/2 closest to the light line, or from a
/// point just off the cone when there is no coupling.
pub fn default_seed(label: BranchLabel, kappa: f64, params: &ModelParams) -> Complex64 {
    match label {
        BranchLabel::AtomLike => Complex64::new(params.recoil_shift(kappa), -0.5),
        BranchLabel::PhotonLike => {
            let n = params.n_dimless();
            let eta = params.light_cone_reg();
            if n == 0.0 {
                let nudge = (10.0 * eta).max(1e-3 * kappa.abs().max(1.0));
                return Complex64::new(kappa + nudge, 0.0);
            }
            let a = Complex64::new(PI * n, 0.5);
            let k = Complex64::new(kappa, -eta);
            let b = a - k;
            let c = -(a * k + 1.5 * PI * n * params.resonance_ratio());
            let disc = (b * b - 4.0 * c).sqrt();
            let q = if (b.conj() * disc).re >= 0.0 { -0.5 * (b + disc) } else { -0.5 * (b - disc) };
            let other = c / q;
            if (q.re - kappa).abs() <= (other.re - kappa).abs() {
                q
            } else {
                other
            }
        }
    }
}

/// Photon-like labelling: every traced point with |κ| ≥ `min_abs_kappa` obeys
/// |Re δ* − κ| < `window`·|κ|.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelPolicy {
    pub window: f64,
    pub min_abs_kappa: f64,
}

impl Default for LabelPolicy {
    fn default() -> Self {
        Self { window: 0.05, min_abs_kappa: 100.0 }
    }
}

impl LabelPolicy {
    pub fn classify(&self, points: &[BranchPoint]) -> BranchLabel {
        let mut far = points.iter().filter(|p| p.kappa.abs() >= self.min_abs_kappa).peekable();
        if far.peek().is_none() {
            return BranchLabel::AtomLike;
        }
        if far.all(|p| (p.pole.re - p.kappa).abs() < self.window * p.kappa.abs()) {
            BranchLabel::PhotonLike
        } else {
            BranchLabel::AtomLike
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceOptions {
    pub pole: PoleOptions,
    pub label: LabelPolicy,
    /// Largest accepted |Δpole| between neighbours is `jump_factor·step + jump_floor`.
    pub jump_factor: f64,
    pub jump_floor: f64,
}

impl Default for TraceOptions {
    fn default() -> Self {
        Self { pole: PoleOptions::default(), label: LabelPolicy::default(), jump_factor: 10.0, jump_floor: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchPoint {
    pub kappa: f64,
    pub pole: Complex64,
    pub residual: f64,
    pub iterations: usize,
}

/// Why a continuation stopped before the end of its κ range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BranchBreak {
    pub kappa: f64,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DispersionBranch {
    pub component: Component,
    pub points: Vec<BranchPoint>,
    pub branch_label: BranchLabel,
    pub termination: Option<BranchBreak>,
}

impl DispersionBranch {
    pub fn is_complete(&self) -> bool {
        self.termination.is_none()
    }

    pub fn pole_at(&self, kappa: f64) -> Option<Complex64> {
        self.points.iter().find(|p| p.kappa == kappa).map(|p| p.pole)
    }
}

/// κ samples from `start` to `end` inclusive with spacing at most `step`.
pub fn kappa_samples(start: f64, end: f64, step: f64) -> Vec<f64> {
    let span = end - start;
    let intervals = (span.abs() / step).ceil() as usize;
    if intervals == 0 {
        return vec![start];
    }
    (0..=intervals).map(|i| if i == intervals { end } else { start + span * (i as f64 / intervals as f64) }).collect()
}

/// Follows one pole from `kappa_range.0` to `kappa_range.1`.
///
/// Each converged pole, linearly extrapolated from its predecessor, seeds the
/// next κ. A failed solve or an over-long jump ends the branch; the points
/// obtained so far are returned with the diagnostic.
pub fn trace_dispersion(
    component: Component,
    kappa_range: (f64, f64),
    kappa_step: f64,
    initial_seed: Complex64,
    params: &ModelParams,
    options: &TraceOptions,
) -> Result<DispersionBranch, SpectraError> {
    if !(kappa_step > 0.0 && kappa_step.is_finite()) {
        return Err(SpectraError::InvalidInput { name: "kappa_step", value: kappa_step });
    }
    for (name, value) in [("kappa_start", kappa_range.0), ("kappa_end", kappa_range.1)] {
        if !value.is_finite() {
            return Err(SpectraError::InvalidInput { name, value });
        }
    }
    let samples = kappa_samples(kappa_range.0, kappa_range.1, kappa_step);
    trace_samples(component, &samples, initial_seed, params, options)
}

/// Follows one pole through an explicit, monotone list of κ samples.
///
/// The accepted jump between neighbours scales with their local spacing.
pub fn trace_samples(
    component: Component,
    samples: &[f64],
    initial_seed: Complex64,
    params: &ModelParams,
    options: &TraceOptions,
) -> Result<DispersionBranch, SpectraError> {
    if samples.is_empty() {
        return Err(SpectraError::EmptyGrid { axis: "kappa" });
    }
    let finite = samples.iter().all(|k| k.is_finite());
    let monotone = samples.windows(2).all(|w| w[0] < w[1]) || samples.windows(2).all(|w| w[0] > w[1]);
    if !(finite && monotone) {
        return Err(SpectraError::BadGrid { axis: "kappa" });
    }
    let mut points: Vec<BranchPoint> = Vec::with_capacity(samples.len());
    let mut termination = None;
    for &kappa in samples {
        let seed = match points.as_slice() {
            [] => initial_seed,
            [only] => only.pole,
            [.., a, b] => b.pole + (b.pole - a.pole) * ((kappa - b.kappa) / (b.kappa - a.kappa)),
        };
        match find_pole(component, kappa, seed, &options.pole, params) {
            Ok(sol) => {
                if let Some(last) = points.last() {
                    let max_jump = options.jump_factor * (kappa - last.kappa).abs() + options.jump_floor;
                    let jump = (sol.pole - last.pole).norm();
                    if jump > max_jump {
                        termination = Some(BranchBreak {
                            kappa,
                            reason: format!("pole jumped by {jump:e} (limit {max_jump:e})"),
                        });
                        break;
                    }
                }
                points.push(BranchPoint { kappa, pole: sol.pole, residual: sol.residual, iterations: sol.iterations });
            }
            Err(err) => {
                termination = Some(BranchBreak { kappa, reason: err.to_string() });
                break;
            }
        }
    }
    let branch_label = options.label.classify(&points);
    Ok(DispersionBranch { component, points, branch_label, termination })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::{EpsilonMode, PhotonTerm};
    use std::f64::consts::PI;

    const R_RB: f64 = 6.34e7;

    fn unity(n: f64) -> ModelParams {
        ModelParams::new(n, R_RB, 0.0).unwrap().with_epsilon_mode(EpsilonMode::Unity)
    }

    /// Both roots of (δ + πñ + i/2)(δ − κ + iη) − 3πñR/2 = 0.
    fn near_cone_roots(n: f64, r: f64, eta: f64, kappa: f64) -> [Complex64; 2] {
        let a = Complex64::new(PI * n, 0.5);
        let k = Complex64::new(kappa, -eta);
        let coupling = 1.5 * PI * n * r;
        // δ² + (a − k)δ − (a k + coupling) = 0
        let b = a - k;
        let c = -(a * k + coupling);
        let disc = (b * b - 4.0 * c).sqrt();
        let q = if (b.conj() * disc).re >= 0.0 { -0.5 * (b + disc) } else { -0.5 * (b - disc) };
        [q, c / q]
    }

    #[test]
    fn single_cell_surface_matches_pointwise() {
        let p = ModelParams::rubidium_d2(0.05).unwrap();
        let s = sweep_surface(Component::Transverse, &[0.3], &[-0.2], &p).unwrap();
        assert_eq!(s.values.len(), 1);
        assert_eq!(s.get(0, 0).value().unwrap(), green(Component::Transverse, -0.2, 0.3, &p).unwrap().value);
    }

    #[test]
    fn surface_cells_reevaluate_identically() {
        let p = ModelParams::rubidium_d2(0.05).unwrap();
        let kappa: Vec<f64> = (0..9).map(|i| -4.0 + i as f64).collect();
        let delta: Vec<f64> = (0..11).map(|i| -5.0 + i as f64).collect();
        for component in [Component::Transverse, Component::Longitudinal] {
            let s = sweep_surface(component, &kappa, &delta, &p).unwrap();
            for (i, &k) in kappa.iter().enumerate() {
                for (j, &d) in delta.iter().enumerate() {
                    let z = green(component, d, k, &p).unwrap().value;
                    assert_eq!(s.get(i, j), Cell::Value(z));
                }
            }
        }
    }

    #[test]
    fn light_cone_cells_are_flagged() {
        let p = ModelParams::rubidium_d2(0.05).unwrap().with_light_cone_reg(0.0).unwrap();
        let grid = [-1.0, 0.0, 1.0];
        let s = sweep_surface(Component::Transverse, &grid, &grid, &p).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { "lightcone" } else { "ok" };
                assert_eq!(s.get(i, j).flag(), expect);
            }
        }
    }

    #[test]
    fn grid_validation() {
        let p = unity(0.05);
        assert!(matches!(sweep_surface(Component::Transverse, &[], &[0.0], &p), Err(SpectraError::EmptyGrid { .. })));
        assert!(matches!(
            sweep_surface(Component::Transverse, &[1.0, 0.0], &[0.0], &p),
            Err(SpectraError::BadGrid { .. })
        ));
        assert!(matches!(
            sweep_surface(Component::Transverse, &[f64::NAN], &[0.0], &p),
            Err(SpectraError::BadGrid { .. })
        ));
        let big: Vec<f64> = (0..100).map(|i| i as f64).collect();
        assert!(matches!(
            sweep_surface_with_budget(Component::Transverse, &big, &big, &p, 9_999),
            Err(SpectraError::BudgetExceeded { cells: 10_000, .. })
        ));
    }

    #[test]
    fn transverse_peak_moves_with_kappa() {
        let p = ModelParams::rubidium_d2(0.05).unwrap();
        let grid: Vec<f64> = (0..101).map(|i| -5.0 + 0.1 * i as f64).collect();
        let s = sweep_surface(Component::Transverse, &grid, &grid, &p).unwrap();
        let peak_low = s
            .row(0)
            .iter()
            .map(|c| c.value().unwrap().im.abs())
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0;
        let peak_high = s
            .row(100)
            .iter()
            .map(|c| c.value().unwrap().im.abs())
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .unwrap()
            .0;
        assert_ne!(peak_low, peak_high);
    }

    #[test]
    fn longitudinal_ridge_sits_at_shifted_resonance() {
        let p = unity(0.05);
        let delta: Vec<f64> = (0..201).map(|i| -5.0 + 0.05 * i as f64).collect();
        let kappa = [-3.0, 0.0, 4.0];
        let s = sweep_surface(Component::Longitudinal, &kappa, &delta, &p).unwrap();
        for i in 0..kappa.len() {
            let j = s.peak_loss_index(i).unwrap();
            assert!((delta[j] - 2.0 * PI * 0.05).abs() <= 0.05);
        }
    }

    #[test]
    fn longitudinal_pole_closed_form() {
        let p = unity(0.05);
        let sol =
            find_pole(Component::Longitudinal, 0.0, Complex64::new(0.3, -0.4), &PoleOptions::default(), &p).unwrap();
        let exact = Complex64::new(2.0 * PI * 0.05, -0.5);
        assert!((sol.pole - exact).norm() < 1e-9 * exact.norm());
        assert!(sol.residual < 1e-10);
        let d = inverse_bracket_at(Component::Longitudinal, sol.pole, 0.0, &p).unwrap();
        assert!(d.norm() < 1e-10);
    }

    #[test]
    fn free_atom_pole_for_both_components() {
        for component in [Component::Transverse, Component::Longitudinal] {
            let p = ModelParams::new(0.0, R_RB, 0.0).unwrap();
            let sol = find_pole(component, 2.0, Complex64::new(-0.1, -0.4), &PoleOptions::default(), &p).unwrap();
            assert!((sol.pole - Complex64::new(0.0, -0.5)).norm() < 1e-10);
        }
    }

    #[test]
    fn near_cone_transverse_poles_match_quadratic() {
        let p = unity(0.05).with_photon_term(PhotonTerm::NearCone);
        for kappa in [-10.0, -2.5, 0.0, 3.0, 10.0] {
            for root in near_cone_roots(0.05, R_RB, p.light_cone_reg(), kappa) {
                let seed = root * (1.0 + 1e-3);
                let sol = find_pole(Component::Transverse, kappa, seed, &PoleOptions::default(), &p).unwrap();
                assert!((sol.pole - root).norm() < 1e-8 * root.norm(), "{} vs {}", sol.pole, root);
            }
        }
    }

    #[test]
    fn pole_residual_contract() {
        let p = ModelParams::rubidium_d2(0.05).unwrap();
        let opts = PoleOptions { tol: 1e-9, max_iter: 200 };
        let sol = find_pole(Component::Longitudinal, 1.0, Complex64::new(0.3, -0.5), &opts, &p).unwrap();
        let d = inverse_bracket_at(Component::Longitudinal, sol.pole, 1.0, &p).unwrap();
        assert!(d.norm() < opts.tol);
        assert_eq!(d.norm(), sol.residual);
    }

    #[test]
    fn reports_non_convergence() {
        let p = unity(0.05);
        let opts = PoleOptions { tol: 1e-10, max_iter: 0 };
        let err = find_pole(Component::Longitudinal, 0.0, Complex64::new(5.0, 3.0), &opts, &p).unwrap_err();
        assert!(matches!(err, PoleError::NotConverged { iterations: 0, .. }));
        // no root exists for a constant function
        let err = newton_root(|_| Ok(Complex64::new(1.0, 0.0)), Complex64::new(0.0, 0.0), &PoleOptions::default())
            .unwrap_err();
        assert!(matches!(err, PoleError::NotConverged { .. }));
    }

    #[test]
    fn reports_divergence() {
        // the only root sits where the function overflows
        let f = |z: Complex64| Ok(if z.re > 10.0 { Complex64::new(f64::INFINITY, 0.0) } else { z - 20.0 });
        let err = newton_root(f, Complex64::new(0.0, 0.0), &PoleOptions::default());
        assert!(matches!(err, Err(PoleError::Diverged { .. })), "{err:?}");
        let err = newton_root(f, Complex64::new(11.0, 0.0), &PoleOptions::default());
        assert!(matches!(err, Err(PoleError::Diverged { iterations: 0, .. })));
        let err = newton_root(|z| Ok(z * z + 1.0), Complex64::new(f64::NAN, 0.0), &PoleOptions::default());
        assert!(matches!(err, Err(PoleError::InvalidInput { .. })));
    }

    #[test]
    fn free_gas_branch() {
        let rho = 6.2e-4;
        let p = ModelParams::new(0.0, R_RB, rho).unwrap();
        let branch = trace_dispersion(
            Component::Transverse,
            (-20.0, 20.0),
            0.5,
            default_seed(BranchLabel::AtomLike, -20.0, &p),
            &p,
            &TraceOptions::default(),
        )
        .unwrap();
        assert!(branch.is_complete());
        assert_eq!(branch.branch_label, BranchLabel::AtomLike);
        for pt in &branch.points {
            let expect = Complex64::new(rho * (1.0 + pt.kappa / R_RB).powi(2), -0.5);
            assert!((pt.pole - expect).norm() < 1e-10);
        }
    }

    #[test]
    fn branch_follows_closed_form_and_reverses() {
        let rho = 6.2e-4;
        let p = ModelParams::new(0.05, R_RB, rho).unwrap().with_epsilon_mode(EpsilonMode::Unity);
        let seed = Complex64::new(0.3, -0.5);
        let opts = TraceOptions::default();
        let fwd = trace_dispersion(Component::Longitudinal, (-10.0, 10.0), 0.25, seed, &p, &opts).unwrap();
        let rev = trace_dispersion(Component::Longitudinal, (10.0, -10.0), 0.25, seed, &p, &opts).unwrap();
        assert!(fwd.is_complete() && rev.is_complete());
        assert_eq!(fwd.points.len(), rev.points.len());
        for (a, b) in fwd.points.iter().zip(rev.points.iter().rev()) {
            let closed = Complex64::new(2.0 * PI * 0.05 + rho * (1.0 + a.kappa / R_RB).powi(2), -0.5);
            assert!((a.pole - closed).norm() < 1e-8);
            assert!((a.kappa - b.kappa).abs() < 1e-12);
            assert!((a.pole - b.pole).norm() < 1e-8);
        }
    }

    #[test]
    fn branch_break_returns_partial_result() {
        let p = unity(0.05);
        let opts = TraceOptions { pole: PoleOptions { tol: 1e-10, max_iter: 50 }, ..TraceOptions::default() };
        // a zero jump allowance breaks as soon as the pole moves
        let opts = TraceOptions { jump_factor: 0.0, jump_floor: 0.0, ..opts };
        let p = p.with_recoil_ratio(1e-1).unwrap();
        let branch =
            trace_dispersion(Component::Longitudinal, (0.0, 5.0), 1.0, Complex64::new(0.4, -0.5), &p, &opts).unwrap();
        assert!(!branch.is_complete());
        assert_eq!(branch.points.len(), 1);
        assert_eq!(branch.termination.as_ref().unwrap().kappa, 1.0);
    }

    #[test]
    fn kappa_samples_cover_range() {
        assert_eq!(kappa_samples(1.0, 1.0, 0.1), vec![1.0]);
        let s = kappa_samples(-1.0, 1.0, 0.5);
        assert_eq!(s, vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        let r = kappa_samples(1.0, -1.0, 0.5);
        assert_eq!(r, vec![1.0, 0.5, 0.0, -0.5, -1.0]);
    }

    #[test]
    fn photon_seed_is_off_cone() {
        let p = ModelParams::rubidium_d2(0.05).unwrap();
        let seed = default_seed(BranchLabel::PhotonLike, 3.0, &p);
        assert!(seed.re > 3.0);
        let p0 = p.with_light_cone_reg(0.0).unwrap();
        assert!(default_seed(BranchLabel::PhotonLike, 3.0, &p0).re > 3.0);
    }

    fn splitting(p: &ModelParams) -> f64 {
        (1.5 * PI * p.n_dimless() * p.resonance_ratio()).sqrt()
    }

    #[test]
    fn photon_law_holds_far_beyond_the_splitting() {
        // near the cone δ* − κ ≈ (3πñR/2)/κ once |κ| ≫ √(3πñR/2)
        let p = ModelParams::rubidium_d2(0.05).unwrap().with_epsilon_mode(EpsilonMode::Unity);
        let coupling = splitting(&p).powi(2);
        let (start, end) = (1.0e5, 2.0e5);
        let seed = default_seed(BranchLabel::PhotonLike, start, &p);
        // steps stay below the ~150 offset from the cone so no seed lands across it
        // the terms of D are ~1e5 here, far above the reach of an absolute 1e-10
        let options = TraceOptions { pole: PoleOptions { tol: 1e-6, max_iter: 100 }, ..TraceOptions::default() };
        let branch = trace_dispersion(Component::Transverse, (start, end), 50.0, seed, &p, &options).unwrap();
        assert!(branch.is_complete(), "{:?}", branch.termination);
        assert_eq!(branch.branch_label, BranchLabel::PhotonLike);
        let mut last = f64::INFINITY;
        for point in &branch.points {
            let shift = point.pole.re - point.kappa;
            let expected = coupling / point.kappa;
            assert!((shift - expected).abs() < 0.05 * expected, "κ = {}: {shift} vs {expected}", point.kappa);
            assert!(shift < last);
            last = shift;
        }
    }

    #[test]
    fn rubidium_splitting_keeps_roots_far_from_the_cone_at_a_hundred_linewidths() {
        let p = ModelParams::rubidium_d2(0.05).unwrap();
        let s = splitting(&p);
        assert!(s > 3800.0 && s < 3900.0, "{s}");
        for kappa in [-100.0, 100.0] {
            for root in near_cone_roots(0.05, p.resonance_ratio(), p.light_cone_reg(), kappa) {
                assert!((root.re - kappa).abs() > 3000.0, "κ = {kappa}: root {root}");
            }
        }
    }

    #[test]
    fn dilute_gas_reaches_the_photon_law_at_a_hundred_linewidths() {
        let p = ModelParams::rubidium_d2(1e-6).unwrap().with_epsilon_mode(EpsilonMode::Unity);
        assert!(splitting(&p) < 20.0);
        let seed = default_seed(BranchLabel::PhotonLike, 20.0, &p);
        let branch =
            trace_dispersion(Component::Transverse, (20.0, 100.0), 1.0, seed, &p, &TraceOptions::default()).unwrap();
        let pole = branch.pole_at(100.0).expect("branch reaches κ = 100");
        assert!((pole.re - 100.0).abs() / 100.0 < 0.05, "{pole}");
        assert_eq!(branch.branch_label, BranchLabel::PhotonLike);
    }

    #[test]
    fn photon_seed_is_the_near_cone_root_closest_to_the_light_line() {
        let p = unity(0.05).with_photon_term(PhotonTerm::NearCone);
        for kappa in [-50.0, 0.0, 2.0e4] {
            let seed = default_seed(BranchLabel::PhotonLike, kappa, &p);
            let sol = find_pole(Component::Transverse, kappa, seed, &PoleOptions::default(), &p).unwrap();
            assert!((sol.pole - seed).norm() < 1e-8 * seed.norm());
        }
    }
}
