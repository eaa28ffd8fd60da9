//! Equilibria of the deterministic problem
//!
//! ```text
//! A u + g(u) = Q S beta(u) + f_inf
//! ```
//!
//! together with the minimal and maximal solutions and the balanced
//! constants `Q1..Q4` that delimit where several equilibria can coexist.
//! The variational functional `J` has the equilibria as critical points.
//! [`longtime_experiment`] follows sample paths under decaying noise.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::constitutive::{CoalbedoRamp, EmissionLaw, ForcingBounds, ICE_THRESHOLD};
use crate::error::{invalid, Error, Result};
use crate::legendre::{LegendreBasis, SpectralField};
use crate::noise::{gw_path_indexed, NoiseSpec, TimeGrid};
use crate::solver::{ModelConfig, PathwiseSolver};

/// Yosida parameter used for Budyko equilibria when the configuration does
/// not set one.
pub const DEFAULT_STATIONARY_LAMBDA: f64 = 1e-4;
/// Equilibria closer than this in L2 are the same solution.
pub const DEDUP_TOL: f64 = 1e-6;
const MONOTONE_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Classification {
    /// `u < -10` at every node.
    Below,
    /// `u > -10` at every node.
    Above,
    Mixed,
}

#[derive(Debug, Clone, Serialize)]
pub struct Equilibrium {
    pub field: SpectralField,
    pub residual: f64,
    pub functional: f64,
    pub classification: Classification,
    pub value_at_zero: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct StationaryBranch {
    pub q: f64,
    /// Sorted by the value at `x = 0`.
    pub equilibria: Vec<Equilibrium>,
    /// Initial guesses from which no solution was found.
    pub failed_starts: usize,
}

impl StationaryBranch {
    pub fn count(&self) -> usize {
        self.equilibria.len()
    }
}

/// The balanced constants under one reading of the emission term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QValues {
    pub q1: f64,
    pub q2: f64,
    pub q3: f64,
    pub q4: f64,
}

impl QValues {
    pub fn as_array(&self) -> [f64; 4] {
        [self.q1, self.q2, self.q3, self.q4]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Thresholds {
    /// Width of the band around `-10` outside which the co-albedo is
    /// constant.
    pub eps: f64,
    /// Constants with the emission law `g` itself.
    pub values: QValues,
    /// `(g(-10+eps) + |f|) / (g(-10-eps) + C_f) <= S0 M / (S1 m)`.
    pub valid: bool,
    /// `Q2 < Q3`, so that the multiplicity window is open.
    pub window_nonempty: bool,
    /// Constants with the primitive of `g` in place of `g`, when they differ
    /// from `values` and the positivity condition holds for them.
    pub primitive_reading: Option<QValues>,
}

/// Result of the monotone sub/supersolution iteration.
#[derive(Debug, Clone, Serialize)]
pub struct Extremes {
    pub minimal: SpectralField,
    pub maximal: SpectralField,
    pub subsolution: f64,
    pub supersolution: f64,
    pub iterations: (usize, usize),
    /// Every iterate moved in the expected direction at every node.
    pub monotone: bool,
}

/// Stationary solver bound to one configuration.
#[derive(Debug, Clone)]
pub struct StationarySolver {
    basis: LegendreBasis,
    ramp: CoalbedoRamp,
    emission: EmissionLaw,
    insolation: Vec<f64>,
    forcing: Vec<f64>,
    bounds: ForcingBounds,
    constants: Option<(f64, f64)>,
    pub tol: f64,
    pub max_newton: usize,
    pub max_fixed_point: usize,
}

impl StationarySolver {
    pub fn new(config: &ModelConfig) -> Result<Self> {
        let mut config = config.clone();
        if config.coalbedo.is_budyko() && config.lambda.is_none() {
            config.lambda = Some(DEFAULT_STATIONARY_LAMBDA);
        }
        config.validate()?;
        let basis = config.basis()?;
        Ok(Self {
            ramp: config.ramp()?,
            emission: config.emission,
            insolation: config.forcing.insolation.nodal(&basis),
            forcing: config.forcing.forcing.nodal(&basis),
            bounds: config.forcing.bounds(&basis),
            constants: config.forcing.constant_values(),
            basis,
            tol: 1e-9,
            max_newton: 100,
            max_fixed_point: 100_000,
        })
    }

    pub fn basis(&self) -> &LegendreBasis {
        &self.basis
    }

    pub fn ramp(&self) -> &CoalbedoRamp {
        &self.ramp
    }

    fn check(&self, u: &SpectralField) -> Result<()> {
        if u.len() != self.basis.modes() {
            return Err(Error::DimensionMismatch {
                expected: self.basis.modes(),
                got: u.len(),
            });
        }
        Ok(())
    }

    /// `A u + P(g(u) - Q S beta(u) - f_inf)`.
    pub fn residual(&self, u: &SpectralField, q: f64) -> Result<SpectralField> {
        self.check(u)?;
        let mut nodal = self.basis.to_nodal(u)?;
        for (j, v) in nodal.iter_mut().enumerate() {
            *v = self.emission.eval(*v) - q * self.insolation[j] * self.ramp.value(*v) - self.forcing[j];
        }
        let mut r = self.basis.to_spectral(&nodal)?;
        for ((rn, c), mu) in r.coeffs_mut().iter_mut().zip(u.coeffs()).zip(self.basis.eigenvalues()) {
            *rn += mu * c;
        }
        Ok(r)
    }

    fn jacobian(&self, u: &SpectralField, q: f64) -> Result<DMatrix<f64>> {
        let n = self.basis.modes();
        let nodal = self.basis.to_nodal(u)?;
        let mut jac = DMatrix::from_diagonal(&DVector::from_column_slice(self.basis.eigenvalues()));
        for (j, &v) in nodal.iter().enumerate() {
            let d = self.basis.weights()[j]
                * (self.emission.slope() - q * self.insolation[j] * self.ramp.derivative(v));
            for a in 0..n {
                let ea = d * self.basis.table_value(a, j);
                for b in 0..n {
                    jac[(a, b)] += ea * self.basis.table_value(b, j);
                }
            }
        }
        Ok(jac)
    }

    /// Newton on the Galerkin residual with backtracking. Returns the last
    /// iterate and its residual norm when it stalls.
    fn newton(&self, init: &SpectralField, q: f64) -> Result<(SpectralField, f64, usize)> {
        let mut u = init.clone();
        let mut r = self.residual(&u, q)?;
        let mut norm = r.norm();
        for it in 0..self.max_newton {
            if norm < self.tol {
                return Ok((u, norm, it));
            }
            let rhs = DVector::from_column_slice(r.coeffs());
            let Some(step) = self.jacobian(&u, q)?.lu().solve(&rhs) else {
                return Ok((u, norm, it));
            };
            let mut alpha = 1.0;
            let mut accepted = false;
            for _ in 0..40 {
                let mut trial = u.clone();
                for (c, s) in trial.coeffs_mut().iter_mut().zip(step.iter()) {
                    *c -= alpha * s;
                }
                let rt = self.residual(&trial, q)?;
                let nt = rt.norm();
                if nt < (1.0 - 1e-4 * alpha) * norm {
                    u = trial;
                    r = rt;
                    norm = nt;
                    accepted = true;
                    break;
                }
                alpha *= 0.5;
            }
            if !accepted {
                return Ok((u, norm, it));
            }
        }
        Ok((u, norm, self.max_newton))
    }

    /// Monotonicity shift `delta = Q S0 L + slope(g)`.
    fn shift(&self, q: f64) -> f64 {
        q * self.bounds.s_min * self.ramp.lipschitz() + self.emission.slope()
    }

    /// One step of `(A + delta) u' = P(Q S beta(u) - g(u) + delta u + f_inf)`.
    fn fixed_point_step(&self, u: &SpectralField, q: f64, delta: f64) -> Result<(SpectralField, Vec<f64>)> {
        let before = self.basis.to_nodal(u)?;
        let rhs: Vec<f64> = before
            .iter()
            .enumerate()
            .map(|(j, &v)| {
                q * self.insolation[j] * self.ramp.value(v) - self.emission.eval(v) + delta * v + self.forcing[j]
            })
            .collect();
        let mut next = self.basis.to_spectral(&rhs)?;
        for (c, mu) in next.coeffs_mut().iter_mut().zip(self.basis.eigenvalues()) {
            *c /= mu + delta;
        }
        Ok((next, before))
    }

    /// Damped monotone iteration until the residual drops below `tol`.
    /// `direction` is `+1` (iterates increase), `-1` or `0` (unchecked).
    fn fixed_point(&self, init: &SpectralField, q: f64, direction: f64) -> Result<(SpectralField, usize, bool)> {
        let delta = self.shift(q);
        let mut u = init.clone();
        let mut monotone = true;
        for it in 0..self.max_fixed_point {
            let residual = self.residual(&u, q)?.norm();
            if residual < self.tol {
                return Ok((u, it, monotone));
            }
            let (next, before) = self.fixed_point_step(&u, q, delta)?;
            if direction != 0.0 {
                let after = self.basis.to_nodal(&next)?;
                monotone &= after
                    .iter()
                    .zip(&before)
                    .all(|(a, b)| direction * (a - b) >= -MONOTONE_SLACK);
            }
            u = next;
        }
        Err(Error::NoConvergence {
            iterations: self.max_fixed_point,
            residual: self.residual(&u, q)?.norm(),
        })
    }

    /// An equilibrium reached from `init`: Newton first, the damped
    /// fixed-point iteration when Newton stalls.
    pub fn solve(&self, q: f64, init: &SpectralField) -> Result<Equilibrium> {
        self.check(init)?;
        if init.coeffs().iter().any(|c| !c.is_finite()) {
            return Err(invalid("init", "must be finite"));
        }
        let (u, residual, iterations) = self.newton(init, q)?;
        if residual < self.tol {
            return Ok(self.describe(u, q, iterations));
        }
        log::debug!("Newton stalled at residual {residual:.3e} for Q = {q}; falling back to the fixed-point map");
        let (u, more, _) = self.fixed_point(&u, q, 0.0)?;
        // Polish, since the fixed point stops right at the tolerance.
        let (u, _, polish) = self.newton(&u, q)?;
        Ok(self.describe(u, q, iterations + more + polish))
    }

    fn describe(&self, field: SpectralField, q: f64, iterations: usize) -> Equilibrium {
        let residual = self.residual(&field, q).map(|r| r.norm()).unwrap_or(f64::NAN);
        let nodal = self.basis.to_nodal(&field).expect("sized by check");
        let classification = if nodal.iter().all(|v| *v < ICE_THRESHOLD) {
            Classification::Below
        } else if nodal.iter().all(|v| *v > ICE_THRESHOLD) {
            Classification::Above
        } else {
            Classification::Mixed
        };
        Equilibrium {
            functional: self.functional(&field, q).unwrap_or(f64::NAN),
            value_at_zero: field.eval(0.0),
            residual,
            classification,
            iterations,
            field,
        }
    }

    /// Constant sub- and supersolutions `g^-1(Q S0 m - |f|)` and
    /// `g^-1(Q S1 M - C_f)`, which bracket every equilibrium.
    pub fn bracket(&self, q: f64) -> (f64, f64) {
        let b = &self.bounds;
        (
            self.emission.inverse(q * b.s_min * self.ramp.low - b.f_sup_norm),
            self.emission.inverse(q * b.s_max * self.ramp.high - b.c_f),
        )
    }

    /// Whether `u` lies nodally inside the bracket.
    pub fn in_bracket(&self, u: &SpectralField, q: f64) -> Result<bool> {
        let (lo, hi) = self.bracket(q);
        let slack = 1e-9 * (1.0 + lo.abs().max(hi.abs()));
        Ok(self
            .basis
            .to_nodal(u)?
            .iter()
            .all(|v| *v >= lo - slack && *v <= hi + slack))
    }

    pub fn minimal_maximal(&self, q: f64) -> Result<Extremes> {
        let (lo, hi) = self.bracket(q);
        let modes = self.basis.modes();
        let ((minimal, it_lo, mono_lo), (maximal, it_hi, mono_hi)) = {
            let (a, b) = rayon::join(
                || self.fixed_point(&SpectralField::constant(lo, modes), q, 1.0),
                || self.fixed_point(&SpectralField::constant(hi, modes), q, -1.0),
            );
            (a?, b?)
        };
        Ok(Extremes {
            minimal,
            maximal,
            subsolution: lo,
            supersolution: hi,
            iterations: (it_lo, it_hi),
            monotone: mono_lo && mono_hi,
        })
    }

    /// Width `eps` such that the co-albedo is `m` below `-10 - eps` and `M`
    /// above `-10 + eps`.
    pub fn ramp_band(&self) -> f64 {
        (ICE_THRESHOLD - self.ramp.start).max(self.ramp.end - ICE_THRESHOLD).max(0.0)
    }

    pub fn thresholds(&self) -> Result<Thresholds> {
        let eps = self.ramp_band();
        let b = &self.bounds;
        let (m, big_m) = (self.ramp.low, self.ramp.high);
        let values_with = |h: &dyn Fn(f64) -> f64| {
            let lower = h(ICE_THRESHOLD - eps) + b.c_f;
            let upper = h(ICE_THRESHOLD + eps) + b.f_sup_norm;
            (
                lower,
                upper,
                QValues {
                    q1: lower / (b.s_max * big_m),
                    q2: upper / (b.s_min * big_m),
                    q3: lower / (b.s_max * m),
                    q4: upper / (b.s_min * m),
                },
            )
        };
        let (lower, upper, values) = values_with(&|r| self.emission.eval(r));
        if !(lower > 0.0) {
            return Err(Error::HypothesisViolated(format!(
                "g(-10 - eps) + C_f = {lower} must be positive"
            )));
        }
        let valid = upper / lower <= b.s_min * big_m / (b.s_max * m);
        let (plower, _, pvalues) = values_with(&|r| self.emission.primitive(r));
        let differs = pvalues
            .as_array()
            .iter()
            .zip(values.as_array())
            .any(|(a, b)| (a - b).abs() > 1e-12 * b.abs().max(1.0));
        Ok(Thresholds {
            eps,
            values,
            valid,
            window_nonempty: values.q2 < values.q3,
            primitive_reading: (differs && plower > 0.0).then_some(pvalues),
        })
    }

    /// Roots of the scalar balance `g(u) = Q S beta(u) + f` when `S` and `f`
    /// are constant, by bracketing on a fine grid and bisection.
    pub fn scalar_roots(&self, q: f64) -> Option<Vec<f64>> {
        let (s, f) = self.constants?;
        let h = |u: f64| self.emission.eval(u) - q * s * self.ramp.value(u) - f;
        let (lo, hi) = self.bracket(q);
        let (a, b) = (lo.min(self.ramp.start) - 1.0, hi.max(self.ramp.end) + 1.0);
        // Break points of the ramp are always grid points so that roots at a
        // kink are caught exactly.
        let mut grid: Vec<f64> = (0..=4000).map(|i| a + (b - a) * i as f64 / 4000.0).collect();
        grid.extend([self.ramp.start, self.ramp.end]);
        grid.sort_by(f64::total_cmp);
        let mut roots: Vec<f64> = Vec::new();
        let push = |r: f64, roots: &mut Vec<f64>| {
            if roots.last().is_none_or(|last| (r - last).abs() > DEDUP_TOL) {
                roots.push(r);
            }
        };
        for w in grid.windows(2) {
            let (x0, x1) = (w[0], w[1]);
            let (h0, h1) = (h(x0), h(x1));
            if h0 == 0.0 {
                push(x0, &mut roots);
            } else if h0 * h1 < 0.0 {
                let (mut l, mut r, mut hl) = (x0, x1, h0);
                for _ in 0..200 {
                    let mid = 0.5 * (l + r);
                    let hm = h(mid);
                    if hm == 0.0 || r - l < 1e-15 * (1.0 + mid.abs()) {
                        l = mid;
                        r = mid;
                        break;
                    }
                    if hl * hm < 0.0 {
                        r = mid;
                    } else {
                        l = mid;
                        hl = hm;
                    }
                }
                push(0.5 * (l + r), &mut roots);
            }
        }
        if h(b) == 0.0 {
            push(b, &mut roots);
        }
        Some(roots)
    }

    /// Multistart constants: the sub- and supersolution, the threshold,
    /// and for constant data the scalar roots with their midpoints.
    pub fn default_starts(&self, q: f64) -> Vec<f64> {
        let (lo, hi) = self.bracket(q);
        let mut starts = vec![lo, hi, ICE_THRESHOLD];
        if let Some(roots) = self.scalar_roots(q) {
            starts.extend(&roots);
            starts.extend(roots.windows(2).map(|w| 0.5 * (w[0] + w[1])));
        }
        starts
    }

    /// All distinct equilibria reached from the default starts and `extra`.
    pub fn branch(&self, q: f64, extra: &[SpectralField]) -> Result<StationaryBranch> {
        let modes = self.basis.modes();
        let mut inits: Vec<SpectralField> = self
            .default_starts(q)
            .into_iter()
            .map(|c| SpectralField::constant(c, modes))
            .collect();
        inits.extend(extra.iter().map(|e| e.resized(modes)));
        let outcomes: Vec<Result<Equilibrium>> = inits.par_iter().map(|init| self.solve(q, init)).collect();
        let mut equilibria: Vec<Equilibrium> = Vec::new();
        let mut failed_starts = 0;
        for outcome in outcomes {
            match outcome {
                Ok(eq) if eq.residual < self.tol => {
                    if equilibria.iter().all(|e| e.field.distance(&eq.field) > DEDUP_TOL) {
                        equilibria.push(eq);
                    }
                }
                Ok(_) | Err(Error::NoConvergence { .. }) => failed_starts += 1,
                Err(e) => return Err(e),
            }
        }
        equilibria.sort_by(|a, b| a.value_at_zero.total_cmp(&b.value_at_zero));
        Ok(StationaryBranch {
            q,
            equilibria,
            failed_starts,
        })
    }

    pub fn scan_q(&self, grid: &[f64], extra: &[SpectralField]) -> Result<Vec<StationaryBranch>> {
        if grid.windows(2).any(|w| !(w[0] <= w[1])) {
            return Err(invalid("q grid", "must be sorted"));
        }
        grid.par_iter().map(|&q| self.branch(q, extra)).collect()
    }

    /// `J(u) = 1/2 int rho |u'|^2 + int G(u) - int f_inf u - Q int S j(u)`.
    pub fn functional(&self, u: &SpectralField, q: f64) -> Result<f64> {
        self.check(u)?;
        let nodal = self.basis.to_nodal(u)?;
        let integrand: Vec<f64> = nodal
            .iter()
            .enumerate()
            .map(|(j, &v)| {
                self.emission.primitive(v) - self.forcing[j] * v - q * self.insolation[j] * self.ramp.primitive(v)
            })
            .collect();
        Ok(0.5 * self.basis.dirichlet_energy(u) + self.basis.integrate(&integrand))
    }
}

/// Distance of each path to the nearest stored equilibrium over time.
#[derive(Debug, Clone, Serialize)]
pub struct LongtimeReport {
    /// Sampled times.
    pub times: Vec<f64>,
    /// `distances[p][i]`: path `p` at `times[i]`.
    pub distances: Vec<Vec<f64>>,
    /// Index of the equilibrium nearest to each path at the horizon.
    pub nearest: Vec<usize>,
}

impl LongtimeReport {
    pub fn terminal(&self) -> Vec<f64> {
        self.distances
            .iter()
            .map(|d| *d.last().expect("time zero is always sampled"))
            .collect()
    }

    /// Number of paths whose terminal distance is below `tol`.
    pub fn settled(&self, tol: f64) -> usize {
        self.terminal().iter().filter(|d| **d < tol).count()
    }
}

/// Runs `paths` independent paths of the noisy model from `u0` and records
/// `min_eq ||u_t - u_eq||` every `stride` steps and at the horizon.
pub fn longtime_experiment(
    config: &ModelConfig,
    noise: &NoiseSpec,
    u0: &SpectralField,
    equilibria: &[SpectralField],
    paths: usize,
    seed: u64,
    stride: usize,
) -> Result<LongtimeReport> {
    noise.validate()?;
    if equilibria.is_empty() {
        return Err(invalid("equilibria", "need at least one"));
    }
    if stride == 0 {
        return Err(invalid("stride", "must be positive"));
    }
    let solver = PathwiseSolver::new(config.clone())?;
    let grid: TimeGrid = solver.grid();
    let steps = grid.steps();
    let sampled = |k: usize| k.is_multiple_of(stride) || k == steps;
    let times: Vec<f64> = (0..=steps).filter(|&k| sampled(k)).map(|k| grid.time(k)).collect();
    let nearest = |u: &SpectralField| {
        equilibria
            .iter()
            .enumerate()
            .map(|(i, e)| (i, u.distance(e)))
            .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
    };
    let runs = (0..paths as u64)
        .into_par_iter()
        .map(|p| {
            let path = gw_path_indexed(noise, grid, seed, p, config.modes)?;
            let mut out = Vec::with_capacity(times.len());
            let terminal = solver.solve_with(u0, &path, |k, u| {
                if sampled(k) {
                    out.push(nearest(u).1);
                }
            })?;
            Ok((out, nearest(&terminal).0))
        })
        .collect::<Result<Vec<_>>>()?;
    let (distances, nearest) = runs.into_iter().unzip();
    Ok(LongtimeReport {
        times,
        distances,
        nearest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constitutive::{ForcingData, SpatialProfile};
    use crate::noise::Modulation;

    fn reference(modes: usize) -> StationarySolver {
        StationarySolver::new(&ModelConfig {
            modes,
            ..ModelConfig::reference_sellers(4.5)
        })
        .unwrap()
    }

    fn constant_value(u: &SpectralField) -> f64 {
        u.coeffs()[0] / 2f64.sqrt()
    }

    #[test]
    fn constant_equilibria_have_zero_residual() {
        let s = reference(16);
        for c in [-8.4, -11.1, -75.0 / 7.0] {
            let r = s.residual(&SpectralField::constant(c, 16), 4.5).unwrap();
            assert!(r.norm() < 1e-10, "c={c} residual={}", r.norm());
        }
        let zero = StationarySolver::new(&ModelConfig {
            modes: 8,
            forcing: ForcingData::constant(1.0, 0.0),
            ..ModelConfig::reference_sellers(1.0)
        })
        .unwrap();
        // Q = 0 cannot be configured, but the residual accepts it.
        assert!(zero.residual(&SpectralField::zeros(8), 0.0).unwrap().norm() < 1e-14);
        assert_eq!(zero.functional(&SpectralField::zeros(8), 0.0).unwrap(), 0.0);
    }

    #[test]
    fn solve_reaches_each_branch() {
        let s = reference(16);
        for (init, expected) in [(-8.0, -8.4), (-12.0, -11.1), (-10.5, -75.0 / 7.0)] {
            let eq = s.solve(4.5, &SpectralField::constant(init, 16)).unwrap();
            assert!(eq.residual < 1e-9);
            assert!((constant_value(&eq.field) - expected).abs() < 1e-9, "{init}");
            assert!(eq.field.coeffs()[1..].iter().all(|c| c.abs() < 1e-12));
        }
    }

    #[test]
    fn fixed_point_fallback_recovers_from_stall() {
        // At Q = 16 Newton from -10 stalls at the local minimum of |h| at the
        // bottom of the ramp; the fallback must still find 0.8.
        let s = reference(8);
        let eq = s.solve(16.0, &SpectralField::constant(-10.0, 8)).unwrap();
        assert!((constant_value(&eq.field) - 0.8).abs() < 1e-9);
    }

    #[test]
    fn extremes_across_regimes() {
        let s = reference(8);
        for (q, lo, hi) in [(4.5, -11.1, -8.4), (1.0, -11.8, -11.8), (16.0, 0.8, 0.8)] {
            let e = s.minimal_maximal(q).unwrap();
            assert!(e.monotone);
            assert!((constant_value(&e.minimal) - lo).abs() < 1e-8, "q={q}");
            assert!((constant_value(&e.maximal) - hi).abs() < 1e-8, "q={q}");
        }
    }

    #[test]
    fn reference_thresholds() {
        let t = reference(8).thresholds().unwrap();
        let expected = [1.25, 3.75, 5.0, 15.0];
        for (a, b) in t.values.as_array().iter().zip(expected) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
        assert!(t.valid && t.window_nonempty);
        assert_eq!(t.eps, 1.0);
        // With the primitive, G(-11) = 60.5 and G(-9) = 40.5.
        let p = t.primitive_reading.unwrap();
        assert!((p.q1 - 72.5 / 0.8).abs() < 1e-12);
        assert!((p.q4 - 52.5 / 0.2).abs() < 1e-12);
    }

    #[test]
    fn threshold_identities_and_violation() {
        let t = reference(8).thresholds().unwrap().values;
        assert!((t.q3 / t.q1 - 0.8 / 0.2).abs() < 1e-12);
        assert!((t.q4 / t.q2 - 0.8 / 0.2).abs() < 1e-12);

        // C_f = -g(-11) = 11, so g(-10 - eps) + C_f = 0.
        let config = ModelConfig {
            modes: 8,
            forcing: ForcingData::constant(1.0, 11.0),
            ..ModelConfig::reference_sellers(4.5)
        };
        assert!(matches!(
            StationarySolver::new(&config).unwrap().thresholds(),
            Err(Error::HypothesisViolated(_))
        ));
    }

    #[test]
    fn window_opens_iff_three_m_below_big_m() {
        // Symmetric reference data: Q2 = 3 / M and Q3 = 1 / m.
        for (m, big_m) in [(0.2, 0.8), (0.3, 0.8), (0.25, 0.75), (0.1, 0.9), (0.4, 0.5)] {
            let mut config = ModelConfig {
                modes: 4,
                ..ModelConfig::reference_sellers(4.5)
            };
            config.coalbedo = crate::constitutive::CoalbedoGraph::sellers(m, big_m, 1.0).unwrap();
            let t = StationarySolver::new(&config).unwrap().thresholds().unwrap();
            assert_eq!(t.window_nonempty, 3.0 * m < big_m, "m={m} M={big_m}");
        }
    }

    #[test]
    fn scalar_roots_match_regimes() {
        let s = reference(4);
        let roots = s.scalar_roots(4.5).unwrap();
        assert_eq!(roots.len(), 3);
        for (r, e) in roots.iter().zip([-11.1, -75.0 / 7.0, -8.4]) {
            assert!((r - e).abs() < 1e-12, "{r}");
        }
        assert_eq!(s.scalar_roots(1.0).unwrap().len(), 1);
        assert_eq!(s.scalar_roots(16.0).unwrap().len(), 1);
    }

    #[test]
    fn scan_counts() {
        let s = reference(16);
        let branches = s.scan_q(&[1.0, 4.5, 16.0], &[]).unwrap();
        let counts: Vec<usize> = branches.iter().map(StationaryBranch::count).collect();
        assert_eq!(counts, vec![1, 3, 1]);
        let mid = &branches[1];
        let values: Vec<f64> = mid.equilibria.iter().map(|e| e.value_at_zero).collect();
        for (v, e) in values.iter().zip([-11.1, -75.0 / 7.0, -8.4]) {
            assert!((v - e).abs() < 1e-6);
        }
        for eq in &mid.equilibria {
            assert!(s.in_bracket(&eq.field, 4.5).unwrap());
        }
        assert!(mid.equilibria[1].functional > mid.equilibria[0].functional);
        assert!(mid.equilibria[1].functional > mid.equilibria[2].functional);
        assert!(s.scan_q(&[4.5, 1.0], &[]).is_err());
    }

    #[test]
    fn functional_of_constants() {
        let s = reference(8);
        for c in [-12.0, -10.3, -9.5, -8.0] {
            let j = s.ramp().primitive(c);
            let expected = 2.0 * (0.5 * c * c + 12.0 * c - 4.5 * j);
            let got = s.functional(&SpectralField::constant(c, 8), 4.5).unwrap();
            assert!((got - expected).abs() < 1e-11, "c={c}");
        }
    }

    #[test]
    fn functional_gradient_matches_residual() {
        let s = reference(12);
        let mut u = SpectralField::constant(-9.7, 12);
        for n in 1..12 {
            u.coeffs_mut()[n] = 0.8 / (n * n) as f64 * if n % 2 == 0 { 1.0 } else { -1.0 };
        }
        let mut dir = SpectralField::zeros(12);
        for n in 0..12 {
            dir.coeffs_mut()[n] = ((n as f64) * 1.3).sin() / (1 + n) as f64;
        }
        let h = 1e-6;
        let mut plus = u.clone();
        plus.axpy(h, &dir);
        let mut minus = u.clone();
        minus.axpy(-h, &dir);
        let fd = (s.functional(&plus, 4.5).unwrap() - s.functional(&minus, 4.5).unwrap()) / (2.0 * h);
        let exact = s.residual(&u, 4.5).unwrap().dot(&dir);
        assert!((fd - exact).abs() < 1e-5 * exact.abs().max(1.0), "{fd} vs {exact}");
    }

    #[test]
    fn nonconstant_data_equilibria_stay_in_bracket() {
        let config = ModelConfig {
            modes: 12,
            forcing: ForcingData {
                insolation: SpatialProfile::Legendre {
                    coefficients: vec![2f64.sqrt(), 0.0, -0.2],
                },
                forcing: SpatialProfile::Constant(-12.0),
                transient: None,
            },
            ..ModelConfig::reference_sellers(4.5)
        };
        let s = StationarySolver::new(&config).unwrap();
        let ext = s.minimal_maximal(4.5).unwrap();
        let branch = s.branch(4.5, &[]).unwrap();
        assert!(branch.count() >= 1);
        let lo = s.basis().to_nodal(&ext.minimal).unwrap();
        let hi = s.basis().to_nodal(&ext.maximal).unwrap();
        for eq in &branch.equilibria {
            assert!(s.in_bracket(&eq.field, 4.5).unwrap());
            let v = s.basis().to_nodal(&eq.field).unwrap();
            for j in 0..v.len() {
                assert!(lo[j] <= v[j] + 1e-7 && v[j] <= hi[j] + 1e-7);
            }
        }
    }

    #[test]
    fn budyko_uses_default_lambda() {
        let config = ModelConfig {
            modes: 8,
            lambda: None,
            ..ModelConfig::reference_budyko(4.5, 1.0)
        };
        let s = StationarySolver::new(&config).unwrap();
        assert!((s.ramp().end - (-10.0 + 0.8e-4)).abs() < 1e-15);
        assert!((s.thresholds().unwrap().eps - 0.8e-4).abs() < 1e-15);
        assert_eq!(s.branch(4.5, &[]).unwrap().count(), 3);
    }

    #[test]
    fn longtime_deterministic_convergence() {
        let config = ModelConfig {
            modes: 8,
            horizon: 20.0,
            dt: 1e-2,
            ..ModelConfig::reference_sellers(4.5)
        };
        let eq = SpectralField::constant(-8.4, 8);
        let report = longtime_experiment(
            &config,
            &NoiseSpec::Off,
            &SpectralField::constant(-8.0, 8),
            std::slice::from_ref(&eq),
            1,
            0,
            100,
        )
        .unwrap();
        assert!(report.terminal()[0] < 1e-6);
        let at_rest = longtime_experiment(&config, &NoiseSpec::Off, &eq, std::slice::from_ref(&eq), 1, 0, 100).unwrap();
        assert!(at_rest.distances[0].iter().all(|d| *d < 1e-12));
        let bad = NoiseSpec::Cylindrical {
            modes: 4,
            gains: crate::noise::Gains::Smoothing { sigma: 1.0 },
            modulation: Modulation::PowerDecay { a: 1.0, alpha: 0.5 },
        };
        assert!(longtime_experiment(&config, &bad, &eq, std::slice::from_ref(&eq), 1, 0, 100).is_err());
    }
}
