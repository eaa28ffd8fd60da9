//! Experiment orchestration. Each kind builds its tables and checks from
//! the core library; Monte Carlo work fans out over paths inside a thread
//! pool of the configured size, and every merge runs in path order.

use rand::Rng;
use rayon::prelude::*;
use thiserror::Error;

use sebm_core::constitutive::{CoalbedoGraph, ForcingData, SpatialProfile};
use sebm_core::legendre::{LegendreBasis, SpectralField};
use sebm_core::noise::{
    channel_rng, convolution_estimate, convolution_sup_moment, convolution_trace, gw_path, gw_path_indexed,
    isometry_estimate, mean_and_stderr, NoiseSpec, TimeGrid,
};
use sebm_core::solver::{
    comparison_check, empirical_orders, eps_convergence, lambda_convergence, ComparisonReport, ModelConfig,
    PathwiseSolver, SteppingForm,
};
use sebm_core::stationary::{StationarySolver, Thresholds};
use sebm_core::Error as CoreError;

use crate::config::*;
use crate::output::{fmt_f64, Provenance, RunOutput, RunSummary, Table};

#[derive(Debug, Error)]
pub enum RunError {
    #[error("{context}: {source}")]
    Solver {
        context: String,
        #[source]
        source: CoreError,
    },
    #[error("cannot start worker pool: {0}")]
    Pool(#[from] rayon::ThreadPoolBuildError),
    #[error("cannot write outputs: {0}")]
    Io(#[from] std::io::Error),
}

trait Context<T> {
    fn context(self, what: &str) -> Result<T, RunError>;
}

impl<T> Context<T> for Result<T, CoreError> {
    fn context(self, what: &str) -> Result<T, RunError> {
        self.map_err(|source| RunError::Solver {
            context: what.to_string(),
            source,
        })
    }
}

/// Projection of a profile onto `basis`.
fn project(profile: &SpatialProfile, basis: &LegendreBasis) -> Result<SpectralField, RunError> {
    basis.to_spectral(&profile.nodal(basis)).context("initial state")
}

/// Runs the configured experiment. Outputs are a pure function of the
/// configuration; the thread count only changes wall-clock time.
pub fn run_experiment(config: &RunConfig) -> Result<RunOutput, RunError> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(config.threads).build()?;
    pool.install(|| {
        let summary = RunSummary::new(config.experiment.kind().name(), Provenance::of(config));
        let mut run = Run {
            config,
            summary,
            tables: Vec::new(),
        };
        match &config.experiment {
            Experiment::Simulate(p) => run.simulate(p)?,
            Experiment::Isometry(p) => run.isometry(p)?,
            Experiment::Convolution(p) => run.convolution(p)?,
            Experiment::Compare(p) => run.compare(p)?,
            Experiment::ConvergeEps(p) => run.converge_eps(p)?,
            Experiment::ConvergeLambda(p) => run.converge_lambda(p)?,
            Experiment::Stationary(p) => run.stationary(p)?,
            Experiment::ScanQ(p) => run.scan_q(p)?,
            Experiment::Longtime(p) => run.longtime(p)?,
            Experiment::ResolutionStudy(p) => run.resolution(p)?,
        }
        Ok(RunOutput {
            summary: run.summary,
            tables: run.tables,
        })
    })
}

struct Run<'a> {
    config: &'a RunConfig,
    summary: RunSummary,
    tables: Vec<Table>,
}

fn is_decreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] < w[0])
}

fn is_nonincreasing(values: &[f64]) -> bool {
    values.windows(2).all(|w| w[1] <= w[0])
}

fn fmt_list(values: &[f64]) -> String {
    let parts: Vec<String> = values.iter().map(|v| format!("{v:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

impl Run<'_> {
    fn model(&self) -> &ModelConfig {
        &self.config.model
    }

    fn noise(&self) -> &NoiseSpec {
        &self.config.noise
    }

    fn seed(&self) -> u64 {
        self.config.seed
    }

    fn simulate(&mut self, p: &SimulateParams) -> Result<(), RunError> {
        let solver = PathwiseSolver::new(self.model().clone()).context("model")?;
        let basis = solver.basis();
        let grid = solver.grid();
        let path = gw_path_indexed(self.noise(), grid, self.seed(), p.path, basis.modes()).context("noise path")?;
        let u0 = project(&p.u0, basis)?;
        let traj = solver.solve_path(&u0, &path).context("pathwise solve")?;

        let keep = |k: usize| k.is_multiple_of(p.stride) || k == grid.steps();
        let modes = basis.modes();
        let mut coeffs = Table::new(
            "trajectory.csv",
            std::iter::once("t".to_string()).chain((0..modes).map(|n| format!("c_{n}"))),
        );
        let mut nodal = Table::new(
            "trajectory_nodal.csv",
            std::iter::once("t".to_string()).chain((0..basis.quadrature_order()).map(|j| format!("u_{j}"))),
        );
        let mut diag = Table::new(
            "diagnostics.csv",
            ["t", "l2", "min", "max"]
                .into_iter()
                .map(String::from)
                .chain(traj.bands.iter().map(|b| format!("nondegeneracy_{b}"))),
        );
        for (k, (t, u)) in traj.times.iter().zip(&traj.u).enumerate().filter(|(k, _)| keep(*k)) {
            let mut row = vec![*t];
            row.extend_from_slice(u.coeffs());
            coeffs.push_values(&row);
            let mut row = vec![*t];
            row.extend(basis.to_nodal(u).context("nodal values")?);
            nodal.push_values(&row);
            let d = &traj.diagnostics[k];
            let mut row = vec![*t, d.l2, d.min, d.max];
            row.extend(&d.nondegeneracy);
            diag.push_values(&row);
        }
        let mut nodes = Table::new("nodes.csv", ["j", "x", "w"]);
        for (j, (x, w)) in basis.nodes().iter().zip(basis.weights()).enumerate() {
            nodes.push(vec![j.to_string(), fmt_f64(*x), fmt_f64(*w)]);
        }
        self.tables.extend([coeffs, nodal, diag, nodes]);
        if p.write_increments {
            if let Some(inc) = path.increments() {
                let mut t = Table::new(
                    "increments.csv",
                    std::iter::once("k".to_string()).chain((0..inc.channels()).map(|c| format!("dB_{}", c + 1))),
                );
                for k in 0..inc.steps() {
                    let mut row = vec![k.to_string()];
                    row.extend((0..inc.channels()).map(|c| fmt_f64(inc.get(c, k))));
                    t.push(row);
                }
                self.tables.push(t);
            }
        }

        let finite = traj.u.iter().all(|u| u.coeffs().iter().all(|c| c.is_finite()));
        self.summary.check("finite", finite, "every coefficient is finite");
        if let Some(ys) = &traj.y {
            let gap = traj
                .u
                .iter()
                .zip(ys)
                .zip(path.z())
                .flat_map(|((u, y), z)| {
                    u.coeffs()
                        .iter()
                        .zip(y.coeffs())
                        .zip(z.coeffs())
                        .map(|((u, y), z)| (u - y - z).abs())
                })
                .fold(0.0, f64::max);
            self.summary.scalar("change_of_variables_gap", gap);
            self.summary
                .check("change_of_variables", gap <= 1e-12, format!("max |u - (y + z)| = {gap:.3e}"));
        }
        let last = traj.diagnostics.last().expect("initial state is stored");
        self.summary.scalar("final_l2", last.l2);
        self.summary.scalar("final_min", last.min);
        self.summary.scalar("final_max", last.max);
        let nondeg = traj.nondegeneracy_constant();
        self.summary.scalar("nondegeneracy_constant", nondeg);
        if self.model().coalbedo.is_budyko() && nondeg > 2.0 {
            log::warn!("temperature plateau near the ice threshold (nondegeneracy constant {nondeg:.2}); uniqueness is not guaranteed");
            self.summary.notes.push(format!(
                "nondegeneracy constant {nondeg:.3} indicates a plateau near -10; Budyko uniqueness is not certified"
            ));
        }
        Ok(())
    }

    fn isometry(&mut self, p: &IsometryParams) -> Result<(), RunError> {
        let mut table = Table::new("isometry.csv", ["t", "mc_mean", "target", "stderr", "rel_err"]);
        for &t in &p.times {
            let grid = TimeGrid::from_horizon(self.model().dt, t).context("isometry grid")?;
            let est = isometry_estimate(self.noise(), grid, p.paths, self.seed()).context("isometry estimate")?;
            table.push_values(&[t, est.mean, est.target, est.stderr, est.rel_err()]);
            self.summary.estimate(&format!("mc_mean[t={t}]"), est.mean, est.stderr);
            self.summary.scalar(&format!("target[t={t}]"), est.target);
            self.summary.check(
                &format!("isometry[t={t}]"),
                est.z_score().abs() <= p.max_z,
                format!("|z| = {:.3} (limit {})", est.z_score().abs(), p.max_z),
            );
        }
        self.tables.push(table);
        Ok(())
    }

    fn convolution(&mut self, p: &ConvolutionParams) -> Result<(), RunError> {
        let mut table = Table::new("convolution.csv", ["t", "mc_mean", "target", "stderr", "rel_err"]);
        for &t in &p.times {
            let grid = TimeGrid::from_horizon(self.model().dt, t).context("convolution grid")?;
            let est = convolution_estimate(self.noise(), grid, p.paths, self.seed()).context("convolution estimate")?;
            table.push_values(&[t, est.mean, est.target, est.stderr, est.rel_err()]);
            self.summary.estimate(&format!("mc_mean[t={t}]"), est.mean, est.stderr);
            self.summary.scalar(&format!("target[t={t}]"), est.target);
            self.summary.check(
                &format!("convolution[t={t}]"),
                est.rel_err() <= p.rel_tol,
                format!("relative error {:.4} (limit {})", est.rel_err(), p.rel_tol),
            );
        }
        self.tables.push(table);
        if p.trace_check {
            let gains = vec![1.0; p.trace_modes];
            let value = convolution_trace(p.trace_horizon, &gains);
            let target = 0.5 * (std::f64::consts::PI.powi(2) / 3.0 - 3.0);
            self.summary.scalar("trace_sum", value);
            self.summary.scalar("trace_sum_target", target);
            self.summary.check(
                "trace_sum",
                (value - target).abs() <= p.trace_tol,
                format!("|{value:.9} - {target:.9}| (limit {})", p.trace_tol),
            );
        }
        if let (Some(order), Some(&t)) = (p.sup_moment_p, p.times.last()) {
            let grid = TimeGrid::from_horizon(self.model().dt, t).context("convolution grid")?;
            let m = convolution_sup_moment(self.noise(), grid, p.paths, self.seed(), order).context("maximal moment")?;
            self.summary.estimate("sup_moment", m.mean, m.stderr);
            self.summary.scalar("sup_moment_trace_power", m.trace_power);
            self.summary.scalar("sup_moment_ratio", m.ratio());
        }
        Ok(())
    }

    fn compare(&mut self, p: &CompareParams) -> Result<(), RunError> {
        let model = self.model().clone();
        let basis = model.basis().context("model")?;
        let grid = model.grid().context("model")?;
        let cases: Vec<ComparisonCase> = if p.random_configs == 0 {
            let mut forcing_hat = model.forcing.clone();
            if let Some(f) = &p.f_inf_hat {
                forcing_hat.forcing = f.clone();
            }
            vec![ComparisonCase {
                u0: project(&p.u0, &basis)?,
                u0_hat: project(&p.u0_hat, &basis)?,
                forcing_hat,
                model,
            }]
        } else {
            random_cases(&model, &basis, p.random_configs, self.seed())?
        };
        let reports: Vec<ComparisonReport> = cases
            .par_iter()
            .enumerate()
            .map(|(i, case)| {
                let path = gw_path_indexed(self.noise(), grid, self.seed(), i as u64, case.model.modes)
                    .context("noise path")?;
                comparison_check(&case.model, &case.u0, &case.u0_hat, &case.forcing_hat, &path)
                    .context(&format!("comparison run {i}"))
            })
            .collect::<Result<_, _>>()?;

        let mut table = Table::new(
            "comparison.csv",
            ["config", "t", "gap", "bound", "positive_gap", "positive_bound"],
        );
        for (i, r) in reports.iter().enumerate() {
            for k in (0..r.times.len()).filter(|k| k % p.stride == 0 || k + 1 == r.times.len()) {
                let mut row = vec![i.to_string()];
                row.extend(
                    [r.times[k], r.gap[k], r.bound[k], r.positive_gap[k], r.positive_bound[k]].map(fmt_f64),
                );
                table.push(row);
            }
        }
        self.tables.push(table);

        let ordered = reports.iter().filter(|r| r.data_ordered).count();
        let preserved = reports.iter().filter(|r| r.data_ordered && r.order_preserved).count();
        let violations: usize = reports.iter().map(ComparisonReport::bound_violations).sum();
        let positive_violations: usize = reports.iter().map(ComparisonReport::positive_violations).sum();
        let worst_ratio = reports
            .iter()
            .flat_map(|r| r.gap.iter().zip(&r.bound).map(|(g, b)| if *b > 0.0 { g / b } else { 0.0 }))
            .fold(0.0, f64::max);
        let min_margin = reports
            .iter()
            .filter(|r| r.data_ordered)
            .map(|r| r.min_margin)
            .fold(f64::INFINITY, f64::min);
        self.summary.scalar("configs", reports.len() as f64);
        self.summary.scalar("ordered_configs", ordered as f64);
        self.summary.scalar("max_gap", reports.iter().map(ComparisonReport::sup_gap).fold(0.0, f64::max));
        self.summary.scalar("worst_gap_to_bound", worst_ratio);
        if ordered > 0 {
            self.summary.scalar("min_order_margin", min_margin);
        }
        self.summary.check(
            "order_preserved",
            preserved == ordered,
            format!("{preserved} of {ordered} ordered configurations stay ordered at every node and step"),
        );
        self.summary
            .check("comparison_bound", violations == 0, format!("{violations} steps above the bound"));
        self.summary.check(
            "positive_part_bound",
            positive_violations == 0,
            format!("{positive_violations} steps above the positive-part bound"),
        );
        Ok(())
    }

    fn converge_eps(&mut self, p: &EpsParams) -> Result<(), RunError> {
        let model = self.model().clone();
        let grid = model.grid().context("model")?;
        let path = gw_path(self.noise(), grid, self.seed(), model.modes).context("noise path")?;
        let u0 = project(&p.u0, &model.basis().context("model")?)?;
        let mut table = Table::new("eps.csv", ["variant", "eps", "distance", "order"]);

        let mut variants = vec![(if model.coalbedo.is_budyko() { "budyko" } else { "sellers" }, model.clone())];
        if let (Some(lambda), false) = (p.budyko_lambda, model.coalbedo.is_budyko()) {
            let (ice, ice_free) = model.coalbedo.bounds();
            variants.push((
                "budyko",
                ModelConfig {
                    coalbedo: CoalbedoGraph::Budyko {
                        ice,
                        ice_free,
                        threshold: model.coalbedo.threshold(),
                    },
                    lambda: Some(lambda),
                    ..model.clone()
                },
            ));
        }
        for (i, (name, config)) in variants.iter().enumerate() {
            let entries = eps_convergence(config, &p.ladder, &u0, &path).context(&format!("{name} ladder"))?;
            let orders = empirical_orders(&entries);
            for (k, e) in entries.iter().enumerate() {
                let order = if k == 0 { String::new() } else { fmt_f64(orders[k - 1]) };
                table.push(vec![name.to_string(), fmt_f64(e.eps), fmt_f64(e.distance), order]);
            }
            let distances: Vec<f64> = entries.iter().map(|e| e.distance).collect();
            let last = *distances.last().expect("ladder is not empty");
            self.summary.scalar(&format!("{name}_final_distance"), last);
            for (k, o) in orders.iter().enumerate() {
                self.summary.scalar(&format!("{name}_order_{k}"), *o);
            }
            self.summary.check(
                &format!("{name}_monotone"),
                is_decreasing(&distances),
                format!("distances {}", fmt_list(&distances)),
            );
            if i == 0 {
                self.summary.check(
                    "final_distance",
                    last < p.max_final,
                    format!("{last:.4e} at eps = {} (limit {})", p.ladder.last().unwrap(), p.max_final),
                );
            }
        }
        self.tables.push(table);
        Ok(())
    }

    fn converge_lambda(&mut self, p: &LambdaParams) -> Result<(), RunError> {
        let model = self.model().clone();
        let grid = model.grid().context("model")?;
        let path = gw_path(self.noise(), grid, self.seed(), model.modes).context("noise path")?;
        let u0 = project(&p.u0, &model.basis().context("model")?)?;
        let steps = lambda_convergence(&model, &p.ladder, &u0, &path).context("Yosida ladder")?;
        let mut table = Table::new("lambda.csv", ["lambda_from", "lambda_to", "distance"]);
        for s in &steps {
            table.push_values(&[s.from, s.to, s.distance]);
        }
        self.tables.push(table);
        let distances: Vec<f64> = steps.iter().map(|s| s.distance).collect();
        for s in &steps {
            self.summary.scalar(&format!("distance[{}->{}]", s.from, s.to), s.distance);
        }
        self.summary
            .check("cauchy", is_nonincreasing(&distances), format!("distances {}", fmt_list(&distances)));
        if let Some(limit) = p.max_distance {
            let worst = distances.iter().copied().fold(0.0, f64::max);
            self.summary
                .check("max_distance", worst < limit, format!("largest distance {worst:.3e} (limit {limit})"));
        }
        Ok(())
    }

    fn thresholds(&mut self, solver: &StationarySolver) -> Option<Thresholds> {
        match solver.thresholds() {
            Ok(t) => {
                self.summary.thresholds = Some(t);
                self.summary.notes.push(
                    "balanced constants evaluate the emission law g; primitive_reading repeats them with the primitive of g"
                        .into(),
                );
                Some(t)
            }
            Err(e) => {
                self.summary.notes.push(format!("thresholds unavailable: {e}"));
                None
            }
        }
    }

    fn stationary(&mut self, p: &StationaryParams) -> Result<(), RunError> {
        let solver = StationarySolver::new(self.model()).context("model")?;
        let q = self.model().solar;
        self.thresholds(&solver);
        let modes = solver.basis().modes();
        let extra: Vec<SpectralField> = p.inits.iter().map(|c| SpectralField::constant(*c, modes)).collect();
        let branch = solver.branch(q, &extra).context("stationary solve")?;
        let extremes = solver.minimal_maximal(q).context("sub/supersolution iteration")?;
        let lo = solver.basis().to_nodal(&extremes.minimal).context("nodal values")?;
        let hi = solver.basis().to_nodal(&extremes.maximal).context("nodal values")?;

        let mut table = Table::new(
            "equilibria.csv",
            ["index", "u_at_0", "residual", "J", "classification", "in_bracket"],
        );
        let mut within_extremes = true;
        let mut in_bracket = true;
        for (i, eq) in branch.equilibria.iter().enumerate() {
            let inside = solver.in_bracket(&eq.field, q).context("bracket")?;
            in_bracket &= inside;
            let v = solver.basis().to_nodal(&eq.field).context("nodal values")?;
            within_extremes &= v.iter().zip(&lo).zip(&hi).all(|((v, l), h)| *l <= v + 1e-7 && *v <= h + 1e-7);
            table.push(vec![
                i.to_string(),
                fmt_f64(eq.value_at_zero),
                fmt_f64(eq.residual),
                fmt_f64(eq.functional),
                format!("{:?}", eq.classification).to_lowercase(),
                inside.to_string(),
            ]);
        }
        self.tables.push(table);
        let worst = branch.equilibria.iter().map(|e| e.residual).fold(0.0, f64::max);
        self.summary.scalar("count", branch.count() as f64);
        self.summary.scalar("max_residual", worst);
        self.summary.scalar("minimal_at_0", extremes.minimal.eval(0.0));
        self.summary.scalar("maximal_at_0", extremes.maximal.eval(0.0));
        self.summary.scalar("subsolution", extremes.subsolution);
        self.summary.scalar("supersolution", extremes.supersolution);
        self.summary.check("found", branch.count() > 0, format!("{} equilibria", branch.count()));
        self.summary
            .check("residuals", worst < solver.tol, format!("largest residual {worst:.3e}"));
        self.summary.check("bracket", in_bracket, "all equilibria within the constant bracket");
        self.summary
            .check("extremes_order", within_extremes, "minimal <= every equilibrium <= maximal");
        self.summary
            .check("monotone_iteration", extremes.monotone, "sub/supersolution iterates are monotone");
        Ok(())
    }

    fn scan_q(&mut self, p: &ScanParams) -> Result<(), RunError> {
        let solver = StationarySolver::new(self.model()).context("model")?;
        let thresholds = self.thresholds(&solver);
        self.summary.notes.push(
            "J integrates over (-1, 1) with dx and uses the primitive G of g with G(0) = 0".into(),
        );
        let branches = solver.scan_q(&p.grid, &[]).context("Q scan")?;
        let k = branches.iter().map(|b| b.count()).max().unwrap_or(0);
        let mut header = vec!["Q".to_string(), "count".to_string()];
        for prefix in ["u_at_0", "residual", "J"] {
            header.extend((1..=k).map(|i| format!("{prefix}_{i}")));
        }
        let mut table = Table::new("bifurcation.csv", header);
        for b in &branches {
            let mut row = vec![fmt_f64(b.q), b.count().to_string()];
            let pad = |row: &mut Vec<String>, values: Vec<f64>| {
                let n = values.len();
                row.extend(values.into_iter().map(fmt_f64));
                row.extend(std::iter::repeat_n(String::new(), k - n));
            };
            pad(&mut row, b.equilibria.iter().map(|e| e.value_at_zero).collect());
            pad(&mut row, b.equilibria.iter().map(|e| e.residual).collect());
            pad(&mut row, b.equilibria.iter().map(|e| e.functional).collect());
            table.push(row);
        }
        self.tables.push(table);

        let mut worst: f64 = 0.0;
        for b in &branches {
            let q = b.q;
            self.summary.scalar(&format!("count[Q={q}]"), b.count() as f64);
            worst = b.equilibria.iter().map(|e| e.residual).fold(worst, f64::max);
            if let Some(t) = thresholds.map(|t| t.values) {
                if q < t.q1 || q > t.q4 {
                    self.summary.check(
                        &format!("unique[Q={q}]"),
                        b.count() == 1,
                        format!("{} equilibria outside [Q1, Q4]", b.count()),
                    );
                } else if q > t.q2 && q < t.q3 {
                    self.summary.check(
                        &format!("multiple[Q={q}]"),
                        b.count() >= 3,
                        format!("{} equilibria inside (Q2, Q3)", b.count()),
                    );
                }
            }
            if b.count() == 3 {
                let j: Vec<f64> = b.equilibria.iter().map(|e| e.functional).collect();
                self.summary.check(
                    &format!("mountain_pass[Q={q}]"),
                    j[1] > j[0].max(j[2]),
                    format!("J = {}", fmt_list(&j)),
                );
            }
        }
        self.summary.scalar("max_residual", worst);
        self.summary.check("residuals", worst < solver.tol, format!("largest residual {worst:.3e}"));
        Ok(())
    }

    fn longtime(&mut self, p: &LongtimeParams) -> Result<(), RunError> {
        let model = self.model().clone();
        let stationary = StationarySolver::new(&model).context("model")?;
        let branch = stationary.branch(model.solar, &[]).context("equilibria")?;
        let equilibria: Vec<SpectralField> = branch.equilibria.iter().map(|e| e.field.clone()).collect();
        let basis = model.basis().context("model")?;
        let u0 = project(&p.u0, &basis)?;
        let report = sebm_core::stationary::longtime_experiment(
            &model,
            self.noise(),
            &u0,
            &equilibria,
            p.paths,
            self.seed(),
            p.stride,
        )
        .context("long-time runs")?;

        let mut series = Table::new("longtime.csv", ["t", "mean_distance", "stderr", "max_distance"]);
        for (i, t) in report.times.iter().enumerate() {
            let column: Vec<f64> = report.distances.iter().map(|d| d[i]).collect();
            let (mean, stderr) = if column.len() > 1 {
                mean_and_stderr(&column)
            } else {
                (column[0], 0.0)
            };
            series.push_values(&[*t, mean, stderr, column.iter().copied().fold(0.0, f64::max)]);
        }
        let terminal = report.terminal();
        let mut per_path = Table::new("longtime_terminal.csv", ["path", "distance", "nearest_u_at_0"]);
        for (i, (d, n)) in terminal.iter().zip(&report.nearest).enumerate() {
            per_path.push(vec![i.to_string(), fmt_f64(*d), fmt_f64(branch.equilibria[*n].value_at_zero)]);
        }
        self.tables.extend([series, per_path]);

        let settled = report.settled(p.tol);
        let fraction = settled as f64 / p.paths as f64;
        if terminal.len() > 1 {
            let (mean, stderr) = mean_and_stderr(&terminal);
            self.summary.estimate("terminal_distance", mean, stderr);
        } else {
            self.summary.scalar("terminal_distance", terminal[0]);
        }
        self.summary.scalar("settled_fraction", fraction);
        for (i, e) in branch.equilibria.iter().enumerate() {
            let count = report
                .nearest
                .iter()
                .zip(&terminal)
                .filter(|(n, d)| **n == i && **d < p.tol)
                .count();
            self.summary
                .scalar(&format!("settled_at[{}]", e.value_at_zero), count as f64);
        }
        self.summary.check(
            "stabilization",
            fraction >= p.min_fraction,
            format!(
                "{settled} of {} paths within {} of an equilibrium at T = {}",
                p.paths, p.tol, model.horizon
            ),
        );
        Ok(())
    }

    fn resolution(&mut self, p: &ResolutionParams) -> Result<(), RunError> {
        let model = self.model().clone();
        let finest = p.dts.last().expect("validated nonempty") / 2.0;
        let fine_grid = TimeGrid::from_horizon(finest, model.horizon).context("fine grid")?;
        let factors: Vec<usize> = p
            .dts
            .iter()
            .map(|dt| {
                let f = (dt / finest).round();
                if (f * finest - dt).abs() > 1e-9 * dt || f < 2.0 || !(f as usize).is_multiple_of(2) {
                    Err(RunError::Solver {
                        context: "resolution study".into(),
                        source: CoreError::InvalidParameter {
                            name: "dts",
                            reason: format!("{dt} is not an even multiple of the finest half step {finest}"),
                        },
                    })
                } else {
                    Ok(f as usize)
                }
            })
            .collect::<Result<_, _>>()?;
        let solvers = |dt: f64| -> Result<(PathwiseSolver, PathwiseSolver), RunError> {
            let with = |form| {
                PathwiseSolver::new(ModelConfig {
                    dt,
                    form,
                    ..model.clone()
                })
                .context("model")
            };
            Ok((with(SteppingForm::UForm)?, with(SteppingForm::YForm)?))
        };
        let levels: Vec<_> = p
            .dts
            .iter()
            .map(|dt| Ok((solvers(*dt)?, solvers(dt / 2.0)?.0)))
            .collect::<Result<_, RunError>>()?;
        let u0 = project(&p.u0, &model.basis().context("model")?)?;

        // Per path and level: squared sup-time discrepancy and self error.
        let per_path: Vec<Vec<(f64, f64)>> = (0..p.paths as u64)
            .into_par_iter()
            .map(|path_index| {
                let fine = gw_path_indexed(self.noise(), fine_grid, self.seed(), path_index, model.modes)
                    .context("noise path")?;
                levels
                    .iter()
                    .zip(&factors)
                    .map(|(((u_solver, y_solver), half), &f)| {
                        let coarse = fine.coarsened(f).context("coarse path")?;
                        let halved = fine.coarsened(f / 2).context("coarse path")?;
                        let u = u_solver.solve_path(&u0, &coarse).context("u-form")?;
                        let y = y_solver.solve_path(&u0, &coarse).context("y-form")?;
                        let h = half.solve_path(&u0, &halved).context("half step")?;
                        Ok((u.sup_distance(&y).powi(2), u.sup_distance_strided(&h, 2).powi(2)))
                    })
                    .collect()
            })
            .collect::<Result<_, RunError>>()?;
        let rms = |pick: fn(&(f64, f64)) -> f64, level: usize| {
            (per_path.iter().map(|r| pick(&r[level])).sum::<f64>() / p.paths as f64).sqrt()
        };
        let discrepancy: Vec<f64> = (0..p.dts.len()).map(|l| rms(|r| r.0, l)).collect();
        let self_error: Vec<f64> = (0..p.dts.len()).map(|l| rms(|r| r.1, l)).collect();
        let mut table = Table::new("resolution.csv", ["dt", "discrepancy_rms", "self_error_rms"]);
        for (i, dt) in p.dts.iter().enumerate() {
            table.push_values(&[*dt, discrepancy[i], self_error[i]]);
        }
        self.tables.push(table);
        for (name, values) in [("discrepancy", &discrepancy), ("self_error", &self_error)] {
            for (i, w) in values.windows(2).enumerate() {
                let ratio = w[0] / w[1];
                self.summary.scalar(&format!("{name}_ratio_{i}"), ratio);
                self.summary.check(
                    &format!("{name}_ratio_{i}"),
                    (p.ratio_min..=p.ratio_max).contains(&ratio),
                    format!("{ratio:.3} for dt {} -> {} (range [{}, {}])", p.dts[i], p.dts[i + 1], p.ratio_min, p.ratio_max),
                );
            }
        }

        // Truncation: same Brownian path, two basis sizes.
        let grid = model.grid().context("model")?;
        let path = gw_path(self.noise(), grid, self.seed(), model.modes).context("noise path")?;
        let runs: Vec<Vec<f64>> = p
            .modes
            .iter()
            .map(|&n| {
                let config = ModelConfig {
                    modes: n,
                    quadrature: None,
                    ..model.clone()
                };
                let solver = PathwiseSolver::new(config).context("model")?;
                let u0 = project(&p.u0, solver.basis())?;
                let traj = solver
                    .solve_path(&u0, &path.with_modes(n).context("noise path")?)
                    .context("truncation run")?;
                Ok(traj.u.iter().map(SpectralField::norm).collect())
            })
            .collect::<Result<_, RunError>>()?;
        let change = runs[0]
            .iter()
            .zip(&runs[1])
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let mut trunc = Table::new(
            "truncation.csv",
            ["t".to_string(), format!("norm_{}", p.modes[0]), format!("norm_{}", p.modes[1])],
        );
        for k in (0..runs[0].len()).filter(|k| k % 100 == 0 || k + 1 == runs[0].len()) {
            trunc.push_values(&[grid.time(k), runs[0][k], runs[1][k]]);
        }
        self.tables.push(trunc);
        self.summary.scalar("truncation_norm_change", change);
        self.summary.check(
            "truncation",
            change < p.norm_tol,
            format!("max |norm_{} - norm_{}| = {change:.3e}", p.modes[0], p.modes[1]),
        );
        Ok(())
    }
}

struct ComparisonCase {
    model: ModelConfig,
    u0: SpectralField,
    u0_hat: SpectralField,
    forcing_hat: ForcingData,
}

/// Random Sellers data with `u0 <= u0_hat` and `f <= f_hat` at every node.
/// Each gap is a constant plus lower-order terms kept below it, so the
/// ordering is strict.
fn random_cases(
    base: &ModelConfig,
    basis: &LegendreBasis,
    count: usize,
    seed: u64,
) -> Result<Vec<ComparisonCase>, RunError> {
    // A path index no Monte Carlo run uses, reserved for configuration draws.
    let mut rng = channel_rng(seed, u64::MAX, 0);
    let sqrt2 = std::f64::consts::SQRT_2;
    // sup |e_1| and sup |e_2| on [-1, 1].
    let (e1, e2) = (1.5f64.sqrt(), 2.5f64.sqrt());
    (0..count)
        .map(|_| {
            let half_width = rng.random_range(0.25..2.0);
            let model = ModelConfig {
                solar: rng.random_range(1.0..16.0),
                coalbedo: CoalbedoGraph::sellers(rng.random_range(0.1..0.35), rng.random_range(0.55..0.9), half_width)
                    .context("random co-albedo")?,
                forcing: ForcingData {
                    insolation: SpatialProfile::Legendre {
                        coefficients: vec![rng.random_range(0.8..1.2) * sqrt2, 0.0, rng.random_range(-0.1..0.1)],
                    },
                    forcing: SpatialProfile::Legendre {
                        coefficients: vec![
                            rng.random_range(-14.0..-8.0) * sqrt2,
                            rng.random_range(-0.5..0.5),
                            rng.random_range(-0.5..0.5),
                        ],
                    },
                    transient: None,
                },
                ..base.clone()
            };
            let u0 = SpatialProfile::Legendre {
                coefficients: vec![
                    rng.random_range(-13.0..-7.0) * sqrt2,
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ],
            };
            let g0: f64 = rng.random_range(0.01..1.0);
            let gap = [
                g0 * sqrt2,
                rng.random_range(-1.0..1.0) * 0.4 * g0 / e1,
                rng.random_range(-1.0..1.0) * 0.4 * g0 / e2,
            ];
            let d0: f64 = rng.random_range(0.0..1.0);
            let df = [d0 * sqrt2, rng.random_range(-1.0..1.0) * 0.6 * d0 / e1];
            let u0 = project(&u0, basis)?;
            let mut u0_hat = u0.clone();
            for (c, g) in u0_hat.coeffs_mut().iter_mut().zip(gap) {
                *c += g;
            }
            let SpatialProfile::Legendre { coefficients: f } = &model.forcing.forcing else {
                unreachable!("drawn as Legendre coefficients")
            };
            let mut f_hat = f.clone();
            for (c, d) in f_hat.iter_mut().zip(df) {
                *c += d;
            }
            let forcing_hat = ForcingData {
                forcing: SpatialProfile::Legendre { coefficients: f_hat },
                ..model.forcing.clone()
            };
            Ok(ComparisonCase {
                model,
                u0,
                u0_hat,
                forcing_hat,
            })
        })
        .collect()
}
