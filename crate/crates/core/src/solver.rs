//! Pathwise time integration of the stochastic energy balance model
//!
//! ```text
//! du + A u dt + g(u) dt = Q S beta(u) dt + f dt + G dW
//! ```
//!
//! Diffusion is treated implicitly (diagonal in the eigenbasis) and the
//! reaction explicitly, evaluated at the quadrature nodes. Two equivalent
//! forms are available. `YForm` integrates the random PDE for
//! `y = u - (G.W)` obtained from the change of variables, which needs
//! `A (G.W)` to exist. `UForm` adds the Brownian increment directly and works
//! for rough noise.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constitutive::{CoalbedoGraph, CoalbedoRamp, EmissionLaw, ForcingData, ICE_THRESHOLD};
use crate::error::{invalid, Error, Result};
use crate::legendre::{LegendreBasis, SpectralField};
use crate::noise::{SamplePath, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SteppingForm {
    #[default]
    YForm,
    UForm,
}

fn default_modes() -> usize {
    32
}

fn default_dt() -> f64 {
    1e-3
}

fn default_horizon() -> f64 {
    5.0
}

fn default_bands() -> Vec<f64> {
    vec![0.1, 0.5]
}

/// Physical and discretization parameters of one model run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Solar constant scale `Q`.
    #[serde(rename = "q")]
    pub solar: f64,
    pub forcing: ForcingData,
    pub coalbedo: CoalbedoGraph,
    #[serde(default)]
    pub emission: EmissionLaw,
    #[serde(default = "default_modes")]
    pub modes: usize,
    /// Quadrature order; `2 * modes` when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quadrature: Option<usize>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_horizon")]
    pub horizon: f64,
    #[serde(default)]
    pub form: SteppingForm,
    /// Yosida parameter, required for the Budyko graph.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<f64>,
    /// Half-widths of the bands around the ice threshold used for the
    /// nondegeneracy diagnostic.
    #[serde(default = "default_bands")]
    pub nondegeneracy_bands: Vec<f64>,
}

impl ModelConfig {
    /// Reference Sellers data: `m = 0.2`, `M = 0.8`, ramp half-width 1,
    /// `S = 1`, `f = -12`, `g(r) = r`.
    pub fn reference_sellers(solar: f64) -> Self {
        Self {
            solar,
            forcing: ForcingData::constant(1.0, -12.0),
            coalbedo: CoalbedoGraph::Sellers {
                ice: 0.2,
                ice_free: 0.8,
                threshold: ICE_THRESHOLD,
                half_width: 1.0,
            },
            emission: EmissionLaw::Linear { slope: 1.0 },
            modes: default_modes(),
            quadrature: None,
            dt: default_dt(),
            horizon: default_horizon(),
            form: SteppingForm::YForm,
            lambda: None,
            nondegeneracy_bands: default_bands(),
        }
    }

    /// Reference data with the Budyko jump regularized at `lambda`.
    pub fn reference_budyko(solar: f64, lambda: f64) -> Self {
        Self {
            coalbedo: CoalbedoGraph::Budyko {
                ice: 0.2,
                ice_free: 0.8,
                threshold: ICE_THRESHOLD,
            },
            lambda: Some(lambda),
            ..Self::reference_sellers(solar)
        }
    }

    pub fn quadrature_order(&self) -> usize {
        self.quadrature.unwrap_or(2 * self.modes)
    }

    pub fn grid(&self) -> Result<TimeGrid> {
        TimeGrid::from_horizon(self.dt, self.horizon)
    }

    pub fn basis(&self) -> Result<LegendreBasis> {
        LegendreBasis::new(self.modes, self.quadrature_order())
    }

    pub fn ramp(&self) -> Result<CoalbedoRamp> {
        if self.coalbedo.is_budyko() {
            let lambda = self.lambda.ok_or_else(|| invalid("lambda", "required for the Budyko graph"))?;
            self.coalbedo.single_valued(Some(lambda))
        } else {
            self.coalbedo.single_valued(None)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.solar > 0.0) {
            return Err(invalid("q", "must be positive"));
        }
        if self.modes == 0 {
            return Err(invalid("modes", "need at least one mode"));
        }
        if !(self.dt > 0.0) {
            return Err(invalid("dt", "must be positive"));
        }
        if !(self.horizon >= 0.0) {
            return Err(invalid("horizon", "must be nonnegative"));
        }
        if let Some(lambda) = self.lambda {
            if !(lambda > 0.0) {
                return Err(Error::NonpositiveLambda(lambda));
            }
        }
        if self.nondegeneracy_bands.iter().any(|b| !(*b > 0.0)) {
            return Err(invalid("nondegeneracy_bands", "bands must be positive"));
        }
        self.coalbedo.validate()?;
        self.emission.validate()?;
        self.ramp()?;
        self.grid()?;
        self.forcing.validate(&self.basis()?)
    }
}

/// Measure of `{x : |u(x) + 10| <= band}` by the quadrature weights.
pub fn nondegeneracy_measure(field: &SpectralField, band: f64, basis: &LegendreBasis) -> Result<f64> {
    let nodal = basis.to_nodal(field)?;
    Ok(band_measure(&nodal, band, basis))
}

fn band_measure(nodal: &[f64], band: f64, basis: &LegendreBasis) -> f64 {
    nodal
        .iter()
        .zip(basis.weights())
        .filter(|(u, _)| (*u - ICE_THRESHOLD).abs() <= band)
        .map(|(_, w)| w)
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepDiagnostics {
    pub l2: f64,
    pub min: f64,
    pub max: f64,
    /// Nondegeneracy measure per configured band.
    pub nondegeneracy: Vec<f64>,
}

/// Discretized pathwise solution.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub u: Vec<SpectralField>,
    /// `y = u - (G.W)`, stored for `YForm` runs.
    pub y: Option<Vec<SpectralField>>,
    pub diagnostics: Vec<StepDiagnostics>,
    pub bands: Vec<f64>,
}

impl Trajectory {
    pub fn last(&self) -> &SpectralField {
        self.u.last().expect("trajectory holds the initial state")
    }

    /// `max_k ||u_k - other_k||` on the common grid, with `other` sampled
    /// every `stride` steps.
    pub fn sup_distance_strided(&self, other: &Self, stride: usize) -> f64 {
        self.u
            .iter()
            .enumerate()
            .map(|(k, u)| u.distance(&other.u[k * stride]))
            .fold(0.0, f64::max)
    }

    pub fn sup_distance(&self, other: &Self) -> f64 {
        self.sup_distance_strided(other, 1)
    }

    /// `sup_band measure / band` over the trajectory; large values flag a
    /// temperature plateau at the ice threshold.
    pub fn nondegeneracy_constant(&self) -> f64 {
        self.diagnostics
            .iter()
            .flat_map(|d| d.nondegeneracy.iter().zip(&self.bands).map(|(m, b)| m / b))
            .fold(0.0, f64::max)
    }
}

/// Time integrator bound to one model configuration.
#[derive(Debug, Clone)]
pub struct PathwiseSolver {
    config: ModelConfig,
    basis: LegendreBasis,
    ramp: CoalbedoRamp,
    grid: TimeGrid,
    /// `Q S(x_j)`.
    solar_nodal: Vec<f64>,
    forcing_nodal: Vec<f64>,
    transient_nodal: Option<(Vec<f64>, f64)>,
}

impl PathwiseSolver {
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let basis = config.basis()?;
        let ramp = config.ramp()?;
        let grid = config.grid()?;
        let solar_nodal: Vec<f64> = config
            .forcing
            .insolation
            .nodal(&basis)
            .into_iter()
            .map(|s| config.solar * s)
            .collect();
        let forcing_nodal = config.forcing.forcing.nodal(&basis);
        let transient_nodal = config
            .forcing
            .transient
            .as_ref()
            .map(|t| (t.profile.nodal(&basis), t.decay_rate));
        let bounds = config.forcing.bounds(&basis);
        let limit = 1.0 / (config.solar * bounds.s_max * ramp.lipschitz() + config.emission.slope());
        if config.dt >= limit {
            log::warn!(
                "dt = {} exceeds the explicit reaction limit {limit:.3e}; the step is stable but inaccurate",
                config.dt
            );
        }
        Ok(Self {
            config,
            basis,
            ramp,
            grid,
            solar_nodal,
            forcing_nodal,
            transient_nodal,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn basis(&self) -> &LegendreBasis {
        &self.basis
    }

    pub fn grid(&self) -> TimeGrid {
        self.grid
    }

    pub fn ramp(&self) -> &CoalbedoRamp {
        &self.ramp
    }

    /// Nodal `f(t)`.
    pub fn forcing_at(&self, t: f64) -> Vec<f64> {
        let mut f = self.forcing_nodal.clone();
        if let Some((profile, rate)) = &self.transient_nodal {
            let decay = (-rate * t).exp();
            for (fj, pj) in f.iter_mut().zip(profile) {
                *fj += decay * pj;
            }
        }
        f
    }

    /// Nodal reaction `Q S beta(u) - g(u) + f(t)`, overwriting `u`.
    fn reaction_in_place(&self, u: &mut [f64], t: f64) {
        let decay = self.transient_nodal.as_ref().map(|(_, rate)| (-rate * t).exp());
        for (j, uj) in u.iter_mut().enumerate() {
            let mut f = self.forcing_nodal[j];
            if let (Some((profile, _)), Some(d)) = (&self.transient_nodal, decay) {
                f += d * profile[j];
            }
            *uj = self.solar_nodal[j] * self.ramp.value(*uj) - self.config.emission.eval(*uj) + f;
        }
    }

    /// One IMEX step from `t_k`. `state` is `y_k` for `YForm` and `u_k` for
    /// `UForm`; the result is the state at `t_{k+1}`.
    pub fn step(
        &self,
        state: &SpectralField,
        z_k: &SpectralField,
        z_next: &SpectralField,
        t_k: f64,
    ) -> Result<SpectralField> {
        let n = self.basis.modes();
        for f in [state, z_k, z_next] {
            if f.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: f.len(),
                });
            }
        }
        let mut ws = Workspace::new(&self.basis);
        let mut next = SpectralField::zeros(n);
        self.step_into(state, z_k, z_next, t_k, &mut ws, next.coeffs_mut());
        Ok(next)
    }

    fn step_into(
        &self,
        state: &SpectralField,
        z_k: &SpectralField,
        z_next: &SpectralField,
        t_k: f64,
        ws: &mut Workspace,
        out: &mut [f64],
    ) {
        let dt = self.grid.dt();
        let mu = self.basis.eigenvalues();
        let s = state.coeffs();
        let (zk, zn) = (z_k.coeffs(), z_next.coeffs());
        match self.config.form {
            SteppingForm::YForm => {
                for ((u, y), z) in ws.coeffs.iter_mut().zip(s).zip(zk) {
                    *u = y + z;
                }
            }
            SteppingForm::UForm => ws.coeffs.copy_from_slice(s),
        }
        self.basis
            .nodal_into(&ws.coeffs, &mut ws.nodal)
            .expect("workspace sized to basis");
        self.reaction_in_place(&mut ws.nodal, t_k);
        self.basis
            .project_into(&ws.nodal, &mut ws.coeffs)
            .expect("workspace sized to basis");
        for n in 0..out.len() {
            let rhs = match self.config.form {
                // -A z implements +d/dx(rho d/dx z).
                SteppingForm::YForm => s[n] + dt * (ws.coeffs[n] - mu[n] * zk[n]),
                SteppingForm::UForm => s[n] + dt * ws.coeffs[n] + (zn[n] - zk[n]),
            };
            out[n] = rhs / (1.0 + dt * mu[n]);
        }
    }

    fn diagnostics(&self, u: &SpectralField, ws: &mut Workspace) -> StepDiagnostics {
        self.basis
            .nodal_into(u.coeffs(), &mut ws.nodal)
            .expect("workspace sized to basis");
        let nodal = &ws.nodal;
        StepDiagnostics {
            l2: u.norm(),
            min: nodal.iter().copied().fold(f64::INFINITY, f64::min),
            max: nodal.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            nondegeneracy: self
                .config
                .nondegeneracy_bands
                .iter()
                .map(|&b| band_measure(nodal, b, &self.basis))
                .collect(),
        }
    }

    fn check_path(&self, u0: &SpectralField, path: &SamplePath) -> Result<()> {
        let n = self.basis.modes();
        if u0.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: u0.len(),
            });
        }
        if path.modes() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: path.modes(),
            });
        }
        let pg = path.grid();
        let same_dt = (pg.dt() - self.grid.dt()).abs() <= 1e-12 * self.grid.dt();
        if !same_dt || pg.steps() != self.grid.steps() {
            return Err(Error::GridMismatch {
                path_dt: pg.dt(),
                path_steps: pg.steps(),
                dt: self.grid.dt(),
                steps: self.grid.steps(),
            });
        }
        Ok(())
    }

    /// Integrates one sample path from `u0`.
    pub fn solve_path(&self, u0: &SpectralField, path: &SamplePath) -> Result<Trajectory> {
        self.check_path(u0, path)?;
        let steps = self.grid.steps();
        let z = path.z();
        let mut ws = Workspace::new(&self.basis);
        let mut u = Vec::with_capacity(steps + 1);
        let mut diagnostics = Vec::with_capacity(steps + 1);
        let mut ys = match self.config.form {
            SteppingForm::YForm => Some(Vec::with_capacity(steps + 1)),
            SteppingForm::UForm => None,
        };
        let mut state = match self.config.form {
            SteppingForm::YForm => u0 - &z[0],
            SteppingForm::UForm => u0.clone(),
        };
        u.push(u0.clone());
        diagnostics.push(self.diagnostics(u0, &mut ws));
        if let Some(ys) = ys.as_mut() {
            ys.push(state.clone());
        }
        let mut next = SpectralField::zeros(self.basis.modes());
        for k in 0..steps {
            self.step_into(&state, &z[k], &z[k + 1], self.grid.time(k), &mut ws, next.coeffs_mut());
            std::mem::swap(&mut state, &mut next);
            let uk = match ys.as_mut() {
                Some(ys) => {
                    ys.push(state.clone());
                    &state + &z[k + 1]
                }
                None => state.clone(),
            };
            diagnostics.push(self.diagnostics(&uk, &mut ws));
            u.push(uk);
        }
        Ok(Trajectory {
            times: (0..=steps).map(|k| self.grid.time(k)).collect(),
            u,
            y: ys,
            diagnostics,
            bands: self.config.nondegeneracy_bands.clone(),
        })
    }

    /// Integrates without storing the trajectory, handing each `(k, u_k)` to
    /// `visit`, and returns the terminal state.
    pub fn solve_with<F>(&self, u0: &SpectralField, path: &SamplePath, mut visit: F) -> Result<SpectralField>
    where
        F: FnMut(usize, &SpectralField),
    {
        self.check_path(u0, path)?;
        let z = path.z();
        let mut ws = Workspace::new(&self.basis);
        let mut state = match self.config.form {
            SteppingForm::YForm => u0 - &z[0],
            SteppingForm::UForm => u0.clone(),
        };
        visit(0, u0);
        let mut next = SpectralField::zeros(self.basis.modes());
        let mut u = u0.clone();
        for k in 0..self.grid.steps() {
            self.step_into(&state, &z[k], &z[k + 1], self.grid.time(k), &mut ws, next.coeffs_mut());
            std::mem::swap(&mut state, &mut next);
            u = match self.config.form {
                SteppingForm::YForm => &state + &z[k + 1],
                SteppingForm::UForm => state.clone(),
            };
            visit(k + 1, &u);
        }
        Ok(u)
    }

    pub fn solve_terminal(&self, u0: &SpectralField, path: &SamplePath) -> Result<SpectralField> {
        self.solve_with(u0, path, |_, _| {})
    }
}

struct Workspace {
    nodal: Vec<f64>,
    coeffs: Vec<f64>,
}

impl Workspace {
    fn new(basis: &LegendreBasis) -> Self {
        Self {
            nodal: vec![0.0; basis.quadrature_order()],
            coeffs: vec![0.0; basis.modes()],
        }
    }
}

/// Outcome of a coupled comparison run.
#[derive(Debug, Clone, Serialize)]
pub struct ComparisonReport {
    pub times: Vec<f64>,
    /// `||u_t - u^_t||`.
    pub gap: Vec<f64>,
    /// `e^{t Q S_0 L} (||u0 - u^0|| + int ||f - f^||)`.
    pub bound: Vec<f64>,
    /// `||[u_t - u^_t]_+||`.
    pub positive_gap: Vec<f64>,
    pub positive_bound: Vec<f64>,
    /// `u0 <= u^0` and `f <= f^` at every node and step.
    pub data_ordered: bool,
    /// `u_k <= u^_k` at every node and step (within 1e-12).
    pub order_preserved: bool,
    /// Smallest nodal value of `u^_k - u_k` over the run.
    pub min_margin: f64,
}

impl ComparisonReport {
    pub fn bound_violations(&self) -> usize {
        self.gap.iter().zip(&self.bound).filter(|(g, b)| g > b).count()
    }

    pub fn positive_violations(&self) -> usize {
        self.positive_gap
            .iter()
            .zip(&self.positive_bound)
            .filter(|(g, b)| g > b)
            .count()
    }

    /// Ordered data implies ordered solutions.
    pub fn comparison_holds(&self) -> bool {
        !self.data_ordered || self.order_preserved
    }

    pub fn sup_gap(&self) -> f64 {
        self.gap.iter().copied().fold(0.0, f64::max)
    }
}

const ORDER_SLACK: f64 = 1e-12;

/// Runs `(u0, f)` from `config` and `(u0_hat, forcing_hat)` on the same
/// sample path and checks the comparison estimates.
pub fn comparison_check(
    config: &ModelConfig,
    u0: &SpectralField,
    u0_hat: &SpectralField,
    forcing_hat: &ForcingData,
    path: &SamplePath,
) -> Result<ComparisonReport> {
    if config.coalbedo.is_budyko() {
        return Err(Error::VariantMismatch);
    }
    let solver = PathwiseSolver::new(config.clone())?;
    let hat = PathwiseSolver::new(ModelConfig {
        forcing: forcing_hat.clone(),
        ..config.clone()
    })?;
    let (a, b) = rayon::join(|| solver.solve_path(u0, path), || hat.solve_path(u0_hat, path));
    let (a, b) = (a?, b?);

    let basis = solver.basis();
    let grid = solver.grid();
    let s0 = config.forcing.bounds(basis).s_min;
    let rate = config.solar * s0 * solver.ramp().lipschitz();
    let norm = |v: &[f64]| basis.integrate(&v.iter().map(|x| x * x).collect::<Vec<_>>()).sqrt();
    let positive = |v: &[f64]| v.iter().map(|x| x.max(0.0)).collect::<Vec<_>>();

    let initial = basis.to_nodal(&(u0 - u0_hat))?;
    let mut data_ordered = initial.iter().all(|d| *d <= 0.0);
    let mut forcing_integral = 0.0;
    let mut positive_forcing_integral = 0.0;
    let mut report = ComparisonReport {
        times: a.times.clone(),
        gap: Vec::with_capacity(a.u.len()),
        bound: Vec::with_capacity(a.u.len()),
        positive_gap: Vec::with_capacity(a.u.len()),
        positive_bound: Vec::with_capacity(a.u.len()),
        data_ordered: true,
        order_preserved: true,
        min_margin: f64::INFINITY,
    };
    let gap0 = (u0 - u0_hat).norm();
    let pos_gap0 = norm(&positive(&initial));
    for (k, (ua, ub)) in a.u.iter().zip(&b.u).enumerate() {
        let t = grid.time(k);
        let diff = basis.to_nodal(&(ua - ub))?;
        report.min_margin = diff.iter().map(|d| -d).fold(report.min_margin, f64::min);
        if diff.iter().any(|d| *d > ORDER_SLACK) {
            report.order_preserved = false;
        }
        let growth = (t * rate).exp();
        report.gap.push((ua - ub).norm());
        report.bound.push(growth * (gap0 + forcing_integral));
        report.positive_gap.push(norm(&positive(&diff)));
        report
            .positive_bound
            .push(growth * (pos_gap0 + positive_forcing_integral));

        // Left-point rule, matching the explicit treatment of f.
        let df: Vec<f64> = solver
            .forcing_at(t)
            .iter()
            .zip(hat.forcing_at(t))
            .map(|(f, fh)| f - fh)
            .collect();
        data_ordered &= df.iter().all(|d| *d <= 0.0);
        forcing_integral += grid.dt() * norm(&df);
        positive_forcing_integral += grid.dt() * norm(&positive(&df));
    }
    report.data_ordered = data_ordered;
    Ok(report)
}

/// Distance between the solutions of two consecutive ladder entries.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LadderStep {
    pub from: f64,
    pub to: f64,
    pub distance: f64,
}

/// Solves the Budyko problem for each Yosida parameter of a strictly
/// decreasing ladder on a shared path and reports sup-time distances between
/// consecutive solutions.
pub fn lambda_convergence(
    config: &ModelConfig,
    ladder: &[f64],
    u0: &SpectralField,
    path: &SamplePath,
) -> Result<Vec<LadderStep>> {
    if !config.coalbedo.is_budyko() {
        return Err(Error::WrongVariant { expected: "budyko" });
    }
    if ladder.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(invalid("lambda ladder", "must be strictly decreasing"));
    }
    let trajectories: Vec<Trajectory> = ladder
        .par_iter()
        .map(|&lambda| {
            PathwiseSolver::new(ModelConfig {
                lambda: Some(lambda),
                ..config.clone()
            })?
            .solve_path(u0, path)
        })
        .collect::<Result<_>>()?;
    Ok(ladder
        .windows(2)
        .zip(trajectories.windows(2))
        .map(|(l, t)| LadderStep {
            from: l[0],
            to: l[1],
            distance: t[0].sup_distance(&t[1]),
        })
        .collect())
}

/// Sup-time distance of the solution driven by `eps * G` to the
/// deterministic one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EpsilonDistance {
    pub eps: f64,
    pub distance: f64,
}

pub fn eps_convergence(
    config: &ModelConfig,
    ladder: &[f64],
    u0: &SpectralField,
    path: &SamplePath,
) -> Result<Vec<EpsilonDistance>> {
    let solver = PathwiseSolver::new(config.clone())?;
    let deterministic = solver.solve_path(u0, &path.scaled(0.0))?;
    ladder
        .par_iter()
        .map(|&eps| {
            let distance = if eps == 0.0 {
                0.0
            } else {
                solver.solve_path(u0, &path.scaled(eps))?.sup_distance(&deterministic)
            };
            Ok(EpsilonDistance { eps, distance })
        })
        .collect()
}

/// `log(d_i / d_{i+1}) / log(eps_i / eps_{i+1})` for consecutive entries.
pub fn empirical_orders(entries: &[EpsilonDistance]) -> Vec<f64> {
    entries
        .windows(2)
        .map(|w| (w[0].distance / w[1].distance).ln() / (w[0].eps / w[1].eps).ln())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constitutive::SpatialProfile;
    use crate::noise::{gw_path, Modulation, NoiseSpec};

    fn small(config: ModelConfig, modes: usize, horizon: f64) -> ModelConfig {
        ModelConfig {
            modes,
            horizon,
            ..config
        }
    }

    #[test]
    fn frozen_coalbedo_fixed_point() {
        // beta = M on the whole trajectory: u' + u = Q M + f = -8.4.
        let config = small(ModelConfig::reference_sellers(4.5), 8, 0.01);
        let solver = PathwiseSolver::new(config).unwrap();
        let u = SpectralField::constant(-8.4, 8);
        let z = SpectralField::zeros(8);
        let next = solver.step(&u, &z, &z, 0.0).unwrap();
        assert!(next.distance(&u) < 1e-12);
    }

    #[test]
    fn pure_diffusion_step() {
        // Emission with slope -> 0 is not allowed, so cancel reaction with
        // f: beta = M frozen, g = id, f = -Q M makes the reaction -u, and on
        // a zero-mean field the projection of -u is -u.
        let mut config = small(ModelConfig::reference_sellers(4.5), 6, 0.1);
        config.dt = 0.1;
        config.forcing = ForcingData::constant(1.0, -4.5 * 0.8);
        config.emission = EmissionLaw::Linear { slope: 1e-300 };
        let solver = PathwiseSolver::new(ModelConfig {
            form: SteppingForm::UForm,
            ..config
        })
        .unwrap();
        // Shift by a constant in the ice-free zone so beta stays M; the
        // constant mode is a fixed point.
        let mut u0 = SpectralField::constant(0.0, 6);
        u0.coeffs_mut()[1] = 1.0;
        let z = SpectralField::zeros(6);
        let next = solver.step(&u0, &z, &z, 0.0).unwrap();
        assert!((next.coeffs()[1] - 1.0 / (1.0 + 2.0 * 0.1)).abs() < 1e-12);
        assert!(next.coeffs()[0].abs() < 1e-12);
    }

    #[test]
    fn constant_equilibria_are_stationary() {
        for value in [-8.4, -11.1] {
            let config = small(ModelConfig::reference_sellers(4.5), 8, 0.2);
            let solver = PathwiseSolver::new(config).unwrap();
            let u0 = SpectralField::constant(value, 8);
            let traj = solver
                .solve_path(&u0, &SamplePath::zero(solver.grid(), 8))
                .unwrap();
            for w in traj.u.windows(2) {
                assert!(w[0].distance(&w[1]) < 1e-12);
            }
        }
    }

    #[test]
    fn zero_horizon_returns_initial_state() {
        let config = small(ModelConfig::reference_sellers(4.5), 8, 0.0);
        let solver = PathwiseSolver::new(config).unwrap();
        let u0 = SpectralField::constant(-3.0, 8);
        let traj = solver.solve_path(&u0, &SamplePath::zero(solver.grid(), 8)).unwrap();
        assert_eq!(traj.u, vec![u0]);
        assert_eq!(traj.times, vec![0.0]);
    }

    #[test]
    fn grid_mismatch_is_rejected() {
        let config = small(ModelConfig::reference_sellers(4.5), 8, 0.1);
        let solver = PathwiseSolver::new(config).unwrap();
        let u0 = SpectralField::constant(-8.0, 8);
        let wrong = SamplePath::zero(TimeGrid::new(2e-3, 50).unwrap(), 8);
        assert!(matches!(solver.solve_path(&u0, &wrong), Err(Error::GridMismatch { .. })));
        let wrong_modes = SamplePath::zero(solver.grid(), 6);
        assert!(matches!(
            solver.solve_path(&u0, &wrong_modes),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn y_form_reconstructs_u() {
        let config = small(ModelConfig::reference_sellers(4.5), 12, 0.05);
        let solver = PathwiseSolver::new(config).unwrap();
        let noise = NoiseSpec::cylindrical(6, 1.0, Modulation::default());
        let path = gw_path(&noise, solver.grid(), 3, 12).unwrap();
        let traj = solver.solve_path(&SpectralField::constant(-9.0, 12), &path).unwrap();
        let ys = traj.y.as_ref().unwrap();
        for ((u, y), z) in traj.u.iter().zip(ys).zip(path.z()) {
            assert!(u.distance(&(y + z)) < 1e-12);
        }
        let terminal = solver.solve_terminal(&SpectralField::constant(-9.0, 12), &path).unwrap();
        assert!(terminal.distance(traj.last()) < 1e-14);
    }

    #[test]
    fn dissipative_without_sources() {
        // f = 0 and beta ~ 0 (tiny co-albedo scale), no noise.
        let mut config = small(ModelConfig::reference_sellers(1e-12), 10, 0.5);
        config.forcing = ForcingData::constant(1.0, 0.0);
        let solver = PathwiseSolver::new(config).unwrap();
        let u0 = SpectralField::from_coeffs(vec![1.0, -2.0, 0.5, 0.3, 0.0, 0.1, 0.0, 0.0, 0.0, -0.2]);
        let traj = solver.solve_path(&u0, &SamplePath::zero(solver.grid(), 10)).unwrap();
        for w in traj.u.windows(2) {
            assert!(w[1].norm() <= w[0].norm() + 1e-13);
        }
    }

    #[test]
    fn nondegeneracy_examples() {
        let basis = LegendreBasis::new(32, 64).unwrap();
        let warm = SpectralField::constant(-8.4, 32);
        assert_eq!(nondegeneracy_measure(&warm, 0.5, &basis).unwrap(), 0.0);
        // u(x) = x - 10: c_0 = -10 sqrt(2), c_1 = sqrt(2/3).
        let mut ramp = SpectralField::constant(-10.0, 32);
        ramp.coeffs_mut()[1] = (2.0f64 / 3.0).sqrt();
        let m = nondegeneracy_measure(&ramp, 0.25, &basis).unwrap();
        assert!((m - 0.5).abs() < 0.05, "m={m}");
        let plateau = SpectralField::constant(-10.0, 32);
        assert!((nondegeneracy_measure(&plateau, 0.1, &basis).unwrap() - 2.0).abs() < 1e-12);
    }

    #[test]
    fn identical_comparison_has_zero_gap() {
        let config = small(ModelConfig::reference_sellers(4.5), 8, 0.2);
        let grid = config.grid().unwrap();
        let noise = NoiseSpec::cylindrical(4, 1.0, Modulation::default());
        let path = gw_path(&noise, grid, 1, 8).unwrap();
        let u0 = SpectralField::constant(-9.5, 8);
        let report = comparison_check(&config, &u0, &u0, &config.forcing, &path).unwrap();
        assert_eq!(report.sup_gap(), 0.0);
        assert!(report.comparison_holds() && report.data_ordered && report.order_preserved);
        let budyko = small(ModelConfig::reference_budyko(4.5, 0.1), 8, 0.2);
        assert_eq!(
            comparison_check(&budyko, &u0, &u0, &config.forcing, &path).unwrap_err(),
            Error::VariantMismatch
        );
    }

    #[test]
    fn shifted_comparison_respects_bound() {
        let config = small(ModelConfig::reference_sellers(4.5), 12, 1.0);
        let grid = config.grid().unwrap();
        let noise = NoiseSpec::cylindrical(6, 1.0, Modulation::default());
        let path = gw_path(&noise, grid, 2, 12).unwrap();
        let u0 = SpectralField::constant(-10.3, 12);
        let shifted = &u0 + &SpectralField::constant(1.0, 12);
        let report = comparison_check(&config, &u0, &shifted, &config.forcing, &path).unwrap();
        assert!(report.data_ordered && report.order_preserved);
        assert_eq!(report.bound_violations(), 0);
        assert!((report.bound[0] - 2f64.sqrt()).abs() < 1e-12);

        // Sign-changing perturbation: order is not required, the positive
        // part estimate still holds.
        let bumped = &u0 + &SpectralField::unit(1, 12);
        let report = comparison_check(&config, &u0, &bumped, &config.forcing, &path).unwrap();
        assert!(!report.data_ordered);
        assert_eq!(report.positive_violations(), 0);
        assert_eq!(report.bound_violations(), 0);
    }

    #[test]
    fn lambda_ladder_away_from_threshold() {
        let config = small(ModelConfig::reference_budyko(4.5, 0.2), 8, 1.0);
        let grid = config.grid().unwrap();
        let u0 = SpectralField::constant(-8.0, 8);
        let steps = lambda_convergence(&config, &[0.2, 0.1, 0.05], &u0, &SamplePath::zero(grid, 8)).unwrap();
        assert_eq!(steps.len(), 2);
        assert!(steps.iter().all(|s| s.distance < 1e-8));
        assert!(lambda_convergence(&config, &[0.2], &u0, &SamplePath::zero(grid, 8))
            .unwrap()
            .is_empty());
        assert!(lambda_convergence(&config, &[0.1, 0.2], &u0, &SamplePath::zero(grid, 8)).is_err());
    }

    #[test]
    fn eps_zero_has_zero_distance() {
        let config = small(ModelConfig::reference_sellers(4.5), 8, 0.5);
        let grid = config.grid().unwrap();
        let noise = NoiseSpec::cylindrical(4, 1.0, Modulation::default());
        let path = gw_path(&noise, grid, 4, 8).unwrap();
        let u0 = SpectralField::constant(-8.0, 8);
        let entries = eps_convergence(&config, &[0.4, 0.2, 0.1, 0.0], &u0, &path).unwrap();
        assert_eq!(entries[3].distance, 0.0);
        // Linear regime (beta frozen at M): distance exactly proportional.
        let orders = empirical_orders(&entries[..3]);
        assert!(orders.iter().all(|o| (o - 1.0).abs() < 1e-6), "{orders:?}");
    }

    #[test]
    fn transient_forcing_enters_reaction() {
        let mut config = small(ModelConfig::reference_sellers(4.5), 4, 0.0);
        config.forcing.transient = Some(crate::constitutive::Transient {
            profile: SpatialProfile::Constant(3.0),
            decay_rate: 2.0,
        });
        let solver = PathwiseSolver::new(config).unwrap();
        let f0 = solver.forcing_at(0.0);
        let f1 = solver.forcing_at(1.0);
        assert!((f0[0] + 9.0).abs() < 1e-14);
        assert!((f1[0] + 12.0 - 3.0 * (-2.0f64).exp()).abs() < 1e-14);
    }
}
