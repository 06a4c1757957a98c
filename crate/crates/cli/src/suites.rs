//! Experiment kinds and their checks.

use std::f64::consts::PI;

use fpme_core::extension::{
    decay_gap, dtn, dtn_finite_difference, extend_full, harmonic_residual, profile, profile_derivative,
    truncation_l2_gap, ExtensionField,
};
use fpme_core::quadrature::integrate_adaptive;
use fpme_core::random::random_band_limited;
use fpme_core::solver::{
    diagnostics_comparison, diagnostics_contraction, diagnostics_energy, diagnostics_mass,
    diagnostics_maxprinciple, l2_in_time_gap, regularized_sweep, solve,
};
use fpme_core::{Cylinder, EvolvingGeometry, ManifoldSnapshot, RadiusLaw, SolverConfig, SpectralField, Trajectory};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, ExperimentKind, FieldParams, InitialKind, NonlinearityKind, Run};
use crate::fit::fit_rate;
use crate::report::{to_csv, Relation, ResultRow};
use crate::HarnessError;

type Rows = Result<Vec<ResultRow>, HarnessError>;

/// Worker threads: `FPME_THREADS` if set, otherwise rayon's default.
pub fn thread_count() -> Option<usize> {
    std::env::var("FPME_THREADS").ok().and_then(|v| v.trim().parse().ok()).filter(|n| *n > 0)
}

/// Runs an experiment on a pool sized by [`thread_count`].
pub fn run(config: &ExperimentConfig) -> Rows {
    run_with_threads(config, thread_count())
}

/// Runs an experiment; rows come back in parameter order whatever the thread count.
pub fn run_with_threads(config: &ExperimentConfig, threads: Option<usize>) -> Rows {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = threads {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| HarnessError::Config {
        path: config.id.clone(),
        message: format!("cannot start worker pool: {e}"),
    })?;
    pool.install(|| dispatch(config))
}

fn dispatch(config: &ExperimentConfig) -> Rows {
    if config.kind == ExperimentKind::Determinism {
        return determinism(config);
    }
    let runs = config.runs();
    let per_run = par_map(&runs, |run| {
        let ctx = Ctx { config, run };
        match config.kind {
            ExperimentKind::VerifyExtension => verify_extension(&ctx),
            ExperimentKind::VerifyNorms => verify_norms(&ctx),
            ExperimentKind::Solve => solve_suite(&ctx),
            ExperimentKind::SweepR => sweep_r(&ctx),
            ExperimentKind::SweepK => sweep_k(&ctx),
            ExperimentKind::SweepDt => sweep_dt(&ctx),
            ExperimentKind::SweepN => sweep_n(&ctx),
            ExperimentKind::ExactCompare => exact_compare(&ctx),
            ExperimentKind::Determinism => unreachable!("handled above"),
        }
    })?;
    Ok(per_run.into_iter().flatten().collect())
}

fn par_map<T, U, F>(items: &[T], f: F) -> Result<Vec<U>, HarnessError>
where
    T: Sync,
    U: Send,
    F: Fn(&T) -> Result<U, HarnessError> + Sync + Send,
{
    items.par_iter().map(f).collect()
}

struct Ctx<'a> {
    config: &'a ExperimentConfig,
    run: &'a Run,
}

impl Ctx<'_> {
    fn wants(&self, check: &str) -> bool {
        self.config.active_checks().contains(&check)
    }

    fn case(&self, name: impl AsRef<str>) -> String {
        match (self.run.label.is_empty(), name.as_ref().is_empty()) {
            (true, _) => name.as_ref().to_string(),
            (false, true) => self.run.label.clone(),
            (false, false) => format!("{}/{}", self.run.label, name.as_ref()),
        }
    }

    fn row(&self, case: impl AsRef<str>, parameters: String, quantity: &str, value: f64, relation: Relation, default: f64) -> ResultRow {
        ResultRow {
            experiment: self.config.id.clone(),
            case: self.case(case),
            parameters,
            quantity: quantity.to_string(),
            value,
            relation,
            threshold: self.config.tolerance(quantity, default),
        }
    }

    fn info(&self, case: impl AsRef<str>, parameters: String, quantity: &str, value: f64) -> ResultRow {
        self.row(case, parameters, quantity, value, Relation::Info, f64::NAN)
    }

    fn seed(&self, offset: usize) -> u64 {
        self.config.seed.wrapping_add(offset as u64)
    }

    fn solver_error(&self, e: fpme_core::Error) -> HarnessError {
        HarnessError::Solver { experiment: self.config.id.clone(), source: e }
    }

    fn geometry(&self) -> Result<EvolvingGeometry, HarnessError> {
        self.run.geometry.build().map_err(|e| self.solver_error(e))
    }

    fn base_parameters(&self) -> String {
        let s = &self.run.solver;
        format!(
            "{};{};N={};dt={};T={}",
            self.run.geometry.describe(),
            self.run.nonlinearity.describe(),
            s.modes,
            s.time_step,
            self.run.geometry.horizon
        )
    }

    /// Solver configuration on `Γ₀` for the given initial data.
    fn solver_config(&self, geometry: EvolvingGeometry, u0: SpectralField) -> Result<SolverConfig, HarnessError> {
        let need = u0.sup_norm() * (geometry.div_bound() * geometry.horizon()).exp();
        let psi = self.run.nonlinearity.build(need).map_err(|e| self.solver_error(e))?;
        let cylinder = self.run.solver.cylinder().map_err(|e| self.solver_error(e))?;
        SolverConfig::new(
            geometry,
            psi,
            u0,
            cylinder,
            self.run.solver.time_step,
            geometry.horizon(),
            self.run.solver.stepper(),
        )
        .map_err(|e| self.solver_error(e))
    }

    fn solve(&self, config: &SolverConfig) -> Result<Trajectory, HarnessError> {
        solve(config).map_err(|e| self.solver_error(e))
    }
}

/// Seeded field described by `params` on `snapshot`.
fn initial_field(params: &FieldParams, snapshot: ManifoldSnapshot, seed: u64) -> Result<SpectralField, fpme_core::Error> {
    let offset = SpectralField::constant(snapshot, params.offset);
    let shape = match params.kind {
        InitialKind::Constant => return Ok(offset),
        InitialKind::BandLimited => random_band_limited(snapshot, params.band, seed, params.decay),
        InitialKind::Mode => SpectralField::basis(snapshot, params.mode)?,
    };
    shape.scale(params.amplitude).add(&offset)
}

/// `a|b|c`, keeping the parameters column free of commas.
fn list(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("|")
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..n).map(|j| a + (b - a) * j as f64 / (n - 1) as f64).collect()
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn max_ratio(values: &[f64]) -> f64 {
    values.windows(2).map(|w| w[1] / w[0]).fold(f64::NEG_INFINITY, f64::max)
}

/// `∫ (λ p² + p'²) dy` for one mode, by adaptive quadrature.
fn mode_energy_quadrature(lambda: f64, cylinder: Cylinder) -> Result<f64, fpme_core::Error> {
    let top = match cylinder {
        Cylinder::Truncated(r) => r,
        Cylinder::Full if lambda == 0.0 => return Ok(0.0),
        Cylinder::Full => 40.0 / lambda.sqrt(),
    };
    let f = |y: f64| {
        let p = profile(lambda, cylinder, y);
        let dp = profile_derivative(lambda, cylinder, y);
        lambda * p * p + dp * dp
    };
    integrate_adaptive(f, 0.0, top, 0.0, 1e-14)
}

fn energy_quadrature(ext: &ExtensionField) -> Result<f64, fpme_core::Error> {
    let u = ext.boundary();
    let lambdas = u.snapshot().eigenvalues();
    let mut total = 0.0;
    for (c, l) in u.coeffs().iter().zip(&lambdas) {
        if *c != 0.0 {
            total += c * c * mode_energy_quadrature(*l, ext.kind())?;
        }
    }
    Ok(total)
}

fn verify_extension(ctx: &Ctx) -> Rows {
    let fields = &ctx.run.fields;
    let family = ctx.run.geometry.family();
    let truncation = ctx.run.solver.truncation;
    let cases: Vec<(f64, usize)> =
        fields.radii.iter().flat_map(|r| (0..fields.count).map(move |i| (*r, i))).collect();
    let heights = linspace(0.01, 4.0, 200);
    let per_case = par_map(&cases, |&(radius, i)| {
        let err = |e| ctx.solver_error(e);
        let snap = ManifoldSnapshot::new(family, radius, fields.modes).map_err(err)?;
        let u = initial_field(fields, snap, ctx.seed(i)).map_err(err)?;
        let case = format!("r={radius}/field={i}");
        let params = format!("{};r={radius};N={};band={};seed={}", ctx.run.geometry.describe(), fields.modes, fields.band, ctx.seed(i));
        let full = extend_full(&u);
        let truncated = ExtensionField::new(u.clone(), Cylinder::truncated(truncation).map_err(err)?).map_err(err)?;
        let mut rows = Vec::new();
        if ctx.wants("harmonic-residual") {
            let res = harmonic_residual(&full, 64, &heights, 2e-3).map_err(err)?;
            rows.push(ctx.row(&case, params.clone(), "harmonic-residual", res, Relation::AtMost, 1e-6));
        }
        if ctx.wants("trace") {
            let trace = full.evaluate_at_height(0.0).map_err(err)?;
            let thetas = fpme_core::manifold::grid_nodes(family, 64);
            let pointwise = thetas.iter().map(|t| (trace.evaluate(*t) - u.evaluate(*t)).abs()).fold(0.0, f64::max);
            let coeff = max_abs_diff(trace.coeffs(), u.coeffs());
            rows.push(ctx.row(&case, params.clone(), "trace-error", coeff.max(pointwise), Relation::AtMost, 1e-14));
        }
        if ctx.wants("dtn-richardson") {
            for (name, ext) in [("dtn-error-full", &full), ("dtn-error-truncated", &truncated)] {
                let fd = dtn_finite_difference(ext, 0.01, 6).map_err(err)?;
                let exact = dtn(&u, ext.kind()).map_err(err)?;
                let e = max_abs_diff(fd.coeffs(), exact.coeffs());
                rows.push(ctx.row(&case, format!("{params};R={truncation}"), name, e, Relation::AtMost, 1e-6));
            }
        }
        if ctx.wants("grad-energy-full") {
            let semi = u.hm_seminorm_squared();
            let scale = semi.max(1.0);
            let identity = (full.grad_energy() - semi).abs() / scale;
            rows.push(ctx.row(&case, params.clone(), "grad-energy-identity", identity, Relation::AtMost, 1e-12));
            let quad = (energy_quadrature(&full).map_err(err)? - semi).abs() / scale;
            rows.push(ctx.row(&case, params.clone(), "grad-energy-full-quadrature", quad, Relation::AtMost, 1e-12));
        }
        if ctx.wants("grad-energy-truncated") {
            let closed = truncated.grad_energy();
            let quad = energy_quadrature(&truncated).map_err(err)?;
            let rel = (closed - quad).abs() / closed.abs().max(f64::MIN_POSITIVE);
            rows.push(ctx.row(&case, format!("{params};R={truncation}"), "grad-energy-truncated", rel, Relation::AtMost, 1e-9));
        }
        Ok(rows)
    })?;
    Ok(per_case.into_iter().flatten().collect())
}

fn verify_norms(ctx: &Ctx) -> Rows {
    let fields = &ctx.run.fields;
    let family = ctx.run.geometry.family();
    let with_k = ctx.wants("k-quadrature");
    let indices: Vec<usize> = (0..fields.count).collect();
    // (‖u‖_H / ‖u‖_{H^{1/2}}, ‖u‖_{H^{1/2}} / ‖u‖_H, K-quadrature relative error)
    let per_field = par_map(&indices, |&i| {
        let err = |e| ctx.solver_error(e);
        let radius = fields.radii[i % fields.radii.len()];
        let snap = ManifoldSnapshot::new(family, radius, fields.modes).map_err(err)?;
        let u = initial_field(fields, snap, ctx.seed(i)).map_err(err)?;
        let (hm, h12) = (u.hm_norm(), u.h12_norm_closed());
        let k_err = if with_k {
            let quad = u.h12_norm_quadrature().map_err(err)?;
            (quad - h12).abs() / h12
        } else {
            0.0
        };
        Ok((hm / h12, h12 / hm, k_err))
    })?;
    let params = format!(
        "{};radii={};N={};band={};decay={};fields={};seed={}",
        ctx.run.geometry.describe(),
        list(&fields.radii),
        fields.modes,
        fields.band,
        fields.decay,
        fields.count,
        ctx.config.seed
    );
    let mut rows = Vec::new();
    if ctx.wants("norm-equivalence") {
        let upper = ((2.0 + PI) / PI).sqrt();
        let lower = (PI / 2.0).sqrt();
        let a = per_field.iter().map(|t| t.0).fold(0.0, f64::max);
        let b = per_field.iter().map(|t| t.1).fold(0.0, f64::max);
        rows.push(ctx.row("", params.clone(), "hm-over-h12-max", a, Relation::AtMost, upper));
        rows.push(ctx.row("", params.clone(), "h12-over-hm-max", b, Relation::AtMost, lower));
    }
    if with_k {
        let e = per_field.iter().map(|t| t.2).fold(0.0, f64::max);
        rows.push(ctx.row("", params, "k-quadrature-rel-error-max", e, Relation::AtMost, 1e-6));
    }
    Ok(rows)
}

/// Lower and upper data of an ordered pair: `upper = lower + w − min w + gap`.
fn ordered_pair(ctx: &Ctx, snap: ManifoldSnapshot, pair: usize) -> Result<(SpectralField, SpectralField), fpme_core::Error> {
    let lower = initial_field(&ctx.run.fields, snap, ctx.seed(2 * pair))?;
    let w = random_band_limited(snap, ctx.run.fields.band, ctx.seed(2 * pair + 1), ctx.run.fields.decay);
    let lift = SpectralField::constant(snap, 0.05 - w.min_value());
    let upper = lower.add(&w.add(&lift)?)?;
    Ok((lower, upper))
}

/// Data of a crossing pair: two independent seeded fields.
fn crossing_pair(ctx: &Ctx, snap: ManifoldSnapshot, pair: usize) -> Result<(SpectralField, SpectralField), fpme_core::Error> {
    Ok((
        initial_field(&ctx.run.fields, snap, ctx.seed(2 * pair))?,
        initial_field(&ctx.run.fields, snap, ctx.seed(2 * pair + 1))?,
    ))
}

fn solve_suite(ctx: &Ctx) -> Rows {
    let g = ctx.geometry()?;
    let snap = g.snapshot_at(0.0, ctx.run.solver.modes).map_err(|e| ctx.solver_error(e))?;
    let params = ctx.base_parameters();
    let mut rows = Vec::new();
    if ctx.wants("mass") || ctx.wants("max-principle") || ctx.wants("energy") {
        let u0 = initial_field(&ctx.run.fields, snap, ctx.seed(0)).map_err(|e| ctx.solver_error(e))?;
        let traj = ctx.solve(&ctx.solver_config(g, u0)?)?;
        let p = format!("{params};seed={}", ctx.seed(0));
        if ctx.wants("mass") {
            let mass = diagnostics_mass(&traj);
            let drift = mass.iter().map(|m| (m - mass[0]).abs()).fold(0.0, f64::max);
            rows.push(ctx.row("", p.clone(), "mass-drift", drift, Relation::AtMost, 1e-7));
        }
        if ctx.wants("max-principle") {
            let slack = diagnostics_maxprinciple(&traj);
            rows.push(ctx.row("", p.clone(), "max-principle-slack", slack, Relation::AtMost, 1e-8));
        }
        if ctx.wants("energy") {
            let e = diagnostics_energy(&traj);
            let growth = e.windows(2).map(|w| w[1] - w[0]).fold(f64::NEG_INFINITY, f64::max);
            if g.is_static() {
                rows.push(ctx.row("", p.clone(), "energy-increase", growth, Relation::AtMost, 1e-8));
            } else {
                rows.push(ctx.info("", p.clone(), "energy-increase", growth));
            }
        }
    }
    if ctx.wants("comparison") {
        let pairs: Vec<usize> = (0..ctx.run.fields.count).collect();
        let per_pair = par_map(&pairs, |&i| {
            let (lower, upper) = ordered_pair(ctx, snap, i).map_err(|e| ctx.solver_error(e))?;
            let c_upper = ctx.solver_config(g, upper)?;
            let c_lower = c_upper.with_initial_data(lower).map_err(|e| ctx.solver_error(e))?;
            let (a, b) = (ctx.solve(&c_lower)?, ctx.solve(&c_upper)?);
            let v = diagnostics_comparison(&a, &b).map_err(|e| ctx.solver_error(e))?;
            let p = format!("{params};seeds={}+{}", ctx.seed(2 * i), ctx.seed(2 * i + 1));
            Ok(ctx.row(format!("pair={i}"), p, "order-violation", v, Relation::AtMost, 1e-6))
        })?;
        rows.extend(per_pair);
    }
    Ok(rows)
}

fn sweep_r(ctx: &Ctx) -> Rows {
    let fields = &ctx.run.fields;
    let family = ctx.run.geometry.family();
    let radius = fields.radii[0];
    let rs = &ctx.config.values;
    let err = |e| ctx.solver_error(e);
    let snap = ManifoldSnapshot::new(family, radius, fields.modes).map_err(err)?;
    let field_params = |i: usize| {
        format!("{};r={radius};N={};band={};seed={}", ctx.run.geometry.describe(), fields.modes, fields.band, ctx.seed(i))
    };
    let mut rows = Vec::new();
    if ctx.wants("decay-bound") || ctx.wants("truncation-l2") {
        for i in 0..fields.count {
            let u = initial_field(fields, snap, ctx.seed(i)).map_err(err)?;
            for &r in rs {
                let case = format!("field={i}/R={r}");
                if ctx.wants("decay-bound") {
                    let gap = decay_gap(&u, r).map_err(err)?;
                    rows.push(ctx.row(&case, format!("{};R={r}", field_params(i)), "decay-gap", gap.exact, Relation::AtMost, gap.bound));
                }
                if ctx.wants("truncation-l2") {
                    let gap = truncation_l2_gap(&u.mean_free(), r).map_err(err)?;
                    rows.push(ctx.row(&case, format!("{};R={r}", field_params(i)), "truncation-l2-gap", gap.exact, Relation::AtMost, gap.bound));
                }
            }
        }
    }
    if ctx.wants("decay-slope") {
        let u = SpectralField::basis(snap, fields.mode).map_err(err)?;
        let lambda = snap.eigenvalue(fields.mode).map_err(err)?;
        let gaps = rs.iter().map(|r| decay_gap(&u, *r).map(|g| g.exact)).collect::<Result<Vec<_>, _>>().map_err(err)?;
        let (slope, r2) = fit_rate(rs, &gaps).map_err(err)?;
        let target = -2.0 * lambda.sqrt();
        let p = format!("{};r={radius};mode={};lambda={lambda};R={}", ctx.run.geometry.describe(), fields.mode, list(rs));
        for (r, gap) in rs.iter().zip(&gaps) {
            rows.push(ctx.info(format!("mode/R={r}"), p.clone(), "decay-gap", *gap));
        }
        rows.push(ctx.info("mode", p.clone(), "decay-slope", slope));
        rows.push(ctx.info("mode", p.clone(), "decay-fit-r2", r2));
        rows.push(ctx.row("mode", p, "decay-slope-rel-deviation", ((slope - target) / target).abs(), Relation::AtMost, 0.05));
    }
    if ctx.wants("solver-limit") {
        let g = ctx.geometry()?;
        let s0 = g.snapshot_at(0.0, ctx.run.solver.modes).map_err(err)?;
        let u0 = initial_field(fields, s0, ctx.seed(0)).map_err(err)?;
        let base = ctx.solver_config(g, u0)?.with_cylinder(Cylinder::Full).map_err(err)?;
        let mut cylinders = vec![Cylinder::Full];
        for r in rs {
            cylinders.push(Cylinder::truncated(*r).map_err(err)?);
        }
        let trajs = par_map(&cylinders, |c| ctx.solve(&base.with_cylinder(*c).map_err(err)?))?;
        let gaps = trajs[1..].iter().map(|t| l2_in_time_gap(t, &trajs[0])).collect::<Result<Vec<_>, _>>().map_err(err)?;
        let p = format!("{};seed={}", ctx.base_parameters(), ctx.seed(0));
        for (r, gap) in rs.iter().zip(&gaps) {
            rows.push(ctx.info(format!("R={r}"), p.clone(), "truncated-full-gap", *gap));
        }
        rows.push(ctx.row("", p, "truncated-full-gap-ratio-max", max_ratio(&gaps), Relation::Below, 1.0));
    }
    Ok(rows)
}

fn sweep_k(ctx: &Ctx) -> Rows {
    let err = |e| ctx.solver_error(e);
    let g = ctx.geometry()?;
    let snap = g.snapshot_at(0.0, ctx.run.solver.modes).map_err(err)?;
    let u0 = initial_field(&ctx.run.fields, snap, ctx.seed(0)).map_err(err)?;
    let cfg = ctx.solver_config(g, u0)?;
    let sweep = regularized_sweep(&cfg, &ctx.config.values).map_err(err)?;
    let p = format!("{};seed={};A={}", ctx.base_parameters(), ctx.seed(0), sweep.working_interval);
    let mut rows = Vec::new();
    for (w, gap) in sweep.ks.windows(2).zip(&sweep.successive_gaps) {
        rows.push(ctx.info(format!("k={}-{}", w[0], w[1]), p.clone(), "regularized-gap", *gap));
    }
    rows.push(ctx.row("", p.clone(), "regularized-gap-ratio-max", max_ratio(&sweep.successive_gaps), Relation::Below, 1.0));
    let last = sweep.ks.last().copied().unwrap_or_default();
    let first = sweep.successive_gaps[0];
    rows.push(ctx.row(format!("k={last}-direct"), p, "gap-to-direct", sweep.gap_to_direct, Relation::AtMost, first));
    Ok(rows)
}

fn sweep_dt(ctx: &Ctx) -> Rows {
    let err = |e| ctx.solver_error(e);
    let g = ctx.geometry()?;
    let snap = g.snapshot_at(0.0, ctx.run.solver.modes).map_err(err)?;
    let dts = &ctx.config.values;
    let cases: Vec<(usize, f64)> = (0..ctx.run.fields.count).flat_map(|i| dts.iter().map(move |dt| (i, *dt))).collect();
    let violations = par_map(&cases, |&(i, dt)| {
        let (a, b) = crossing_pair(ctx, snap, i).map_err(err)?;
        let cb = ctx.solver_config(g, b)?;
        let need = a.sup_norm().max(cb.sup_bound());
        let ca = ctx.solver_config(g, a)?;
        // both trajectories use the nonlinearity built for the larger datum
        let psi = ctx.run.nonlinearity.build(need * (g.div_bound() * g.horizon()).exp()).map_err(err)?;
        let ca = ca.with_nonlinearity(psi.clone()).and_then(|c| c.with_time_step(dt)).map_err(err)?;
        let cb = cb.with_nonlinearity(psi).and_then(|c| c.with_time_step(dt)).map_err(err)?;
        let (ta, tb) = (ctx.solve(&ca)?, ctx.solve(&cb)?);
        let series = diagnostics_contraction(&ta, &tb).map_err(err)?;
        let last = *series.series.last().expect("non-empty");
        Ok((series.max_violation, series.series[0], last))
    })?;
    let mut rows = Vec::new();
    for i in 0..ctx.run.fields.count {
        let block = &violations[i * dts.len()..(i + 1) * dts.len()];
        let v: Vec<f64> = block.iter().map(|b| b.0).collect();
        let p = format!(
            "{};dt={};seeds={}+{}",
            ctx.base_parameters().split(";dt=").next().unwrap_or_default(),
            list(dts),
            ctx.seed(2 * i),
            ctx.seed(2 * i + 1)
        );
        let case = format!("pair={i}");
        rows.push(ctx.info(&case, p.clone(), "positive-part-initial", block[0].1));
        rows.push(ctx.info(&case, p.clone(), "positive-part-final", block[0].2));
        rows.push(ctx.row(format!("{case}/dt={}", dts[0]), p.clone(), "contraction-violation", v[0], Relation::AtMost, 1e-6));
        for j in 1..v.len() {
            let tol = ctx.config.tolerance("contraction-refinement-factor", 0.6);
            rows.push(ResultRow {
                threshold: tol * v[j - 1],
                ..ctx.row(format!("{case}/dt={}", dts[j]), p.clone(), "contraction-violation-refined", v[j], Relation::AtMost, 0.0)
            });
        }
    }
    Ok(rows)
}

fn sweep_n(ctx: &Ctx) -> Rows {
    let err = |e| ctx.solver_error(e);
    let g = ctx.geometry()?;
    let ns: Vec<usize> = ctx.config.values.iter().map(|v| *v as usize).collect();
    let trajs = par_map(&ns, |&n| {
        let snap = g.snapshot_at(0.0, n).map_err(err)?;
        let u0 = initial_field(&ctx.run.fields, snap, ctx.seed(0)).map_err(err)?;
        ctx.solve(&ctx.solver_config(g, u0)?)
    })?;
    let finest = trajs.iter().zip(&ns).max_by_key(|(_, n)| **n).map(|(t, _)| t.final_field()).expect("values");
    let gaps: Vec<f64> = trajs
        .iter()
        .map(|t| {
            let c = t.final_field().coeffs();
            let f = finest.coeffs();
            let (short, long) = if c.len() <= f.len() { (c, f) } else { (f, c) };
            let head: f64 = short.iter().zip(long).map(|(a, b)| (a - b).powi(2)).sum();
            let tail: f64 = long[short.len()..].iter().map(|b| b * b).sum();
            (head + tail).sqrt()
        })
        .collect();
    let p = format!("{};seed={}", ctx.base_parameters(), ctx.seed(0));
    let mut rows: Vec<ResultRow> =
        ns.iter().zip(&gaps).map(|(n, gap)| ctx.info(format!("N={n}"), p.clone(), "final-gap-to-finest", *gap)).collect();
    let mut coarse: Vec<(usize, f64)> = ns.iter().copied().zip(gaps.iter().copied()).filter(|(_, g)| *g > 0.0).collect();
    coarse.sort_by_key(|(n, _)| *n);
    let coarse_gaps: Vec<f64> = coarse.iter().map(|(_, g)| *g).collect();
    if coarse_gaps.len() >= 2 {
        rows.push(ctx.row("", p, "gap-ratio-max", max_ratio(&coarse_gaps), Relation::Below, 1.0));
    }
    Ok(rows)
}

/// `∫₀ᵗ r₀/r(s) ds`.
fn inverse_radius_integral(law: RadiusLaw, t: f64) -> Result<f64, fpme_core::Error> {
    match law {
        RadiusLaw::Constant { .. } => Ok(t),
        RadiusLaw::Linear { rate, .. } if rate != 0.0 => Ok((rate * t).ln_1p() / rate),
        RadiusLaw::Linear { .. } => Ok(t),
        RadiusLaw::Sinusoidal { .. } => {
            integrate_adaptive(|s| law.r0() / law.radius(s), 0.0, t, 0.0, 1e-14)
        }
    }
}

/// Coefficients on `Γ(t)` of the linear (`m = 1`) flow from `u0`.
fn linear_exact(g: &EvolvingGeometry, u0: &SpectralField, t: f64) -> Result<Vec<f64>, fpme_core::Error> {
    let snap = u0.snapshot();
    let d = g.dimension() as f64;
    let ratio = g.r0() / g.radius(t);
    let integral = inverse_radius_integral(g.law(), t)?;
    u0.coeffs()
        .iter()
        .enumerate()
        .map(|(k, c)| {
            let root = snap.eigenvalue(k)?.sqrt();
            Ok(c * ratio.powf(d) * ratio.powf(-d / 2.0) * (-root * integral).exp())
        })
        .collect()
}

fn exact_compare(ctx: &Ctx) -> Rows {
    let err = |e| ctx.solver_error(e);
    let g = ctx.geometry()?;
    let snap = g.snapshot_at(0.0, ctx.run.solver.modes).map_err(err)?;
    let mut rows = Vec::new();
    if ctx.wants("linear-modes") {
        let nl = &ctx.run.nonlinearity;
        if nl.kind != NonlinearityKind::PowerLaw || nl.m != 1.0 {
            return Err(HarnessError::Config {
                path: ctx.config.id.clone(),
                message: "field `nonlinearity`: linear-modes needs kind = \"power-law\" with m = 1".into(),
            });
        }
        let u0 = initial_field(&ctx.run.fields, snap, ctx.seed(0)).map_err(err)?;
        let base = ctx.solver_config(g, u0.clone())?;
        let exact = linear_exact(&g, &u0, g.horizon()).map_err(err)?;
        let dts = &ctx.config.values;
        let errors = par_map(dts, |dt| {
            let traj = ctx.solve(&base.with_time_step(*dt).map_err(err)?)?;
            let e: f64 = traj.final_field().coeffs().iter().zip(&exact).map(|(a, b)| (a - b).powi(2)).sum();
            Ok(e.sqrt())
        })?;
        let p = format!(
            "{};seed={};dt={}",
            ctx.base_parameters().split(";dt=").next().unwrap_or_default(),
            ctx.seed(0),
            list(dts)
        );
        for (dt, e) in dts.iter().zip(&errors) {
            rows.push(ctx.info(format!("dt={dt}"), p.clone(), "final-l2-error", *e));
        }
        let logs: Vec<f64> = dts.iter().map(|h| h.ln()).collect();
        let (order, r2) = fit_rate(&logs, &errors).map_err(err)?;
        rows.push(ctx.info("", p.clone(), "observed-order", order));
        rows.push(ctx.info("", p.clone(), "order-fit-r2", r2));
        rows.push(ctx.row("", p.clone(), "order-deviation", (order - 1.0).abs(), Relation::AtMost, 0.2));
        let (finest, e) = dts.iter().zip(&errors).min_by(|a, b| a.0.total_cmp(b.0)).expect("values");
        rows.push(ctx.row(format!("dt={finest}"), p, "finest-final-l2-error", *e, Relation::AtMost, 1e-3));
    }
    if ctx.wants("constant-datum") {
        let c = ctx.run.fields.offset;
        let u0 = SpectralField::constant(snap, c);
        let traj = ctx.solve(&ctx.solver_config(g, u0)?)?;
        let d = g.dimension() as i32;
        let thetas = fpme_core::manifold::grid_nodes(g.family(), 16);
        let mut worst = 0.0f64;
        for (t, u) in traj.times().iter().zip(traj.fields()) {
            let exact = c * (g.r0() / g.radius(*t)).powi(d);
            for th in &thetas {
                worst = worst.max((u.evaluate(*th) - exact).abs());
            }
        }
        let p = format!("{};c={c}", ctx.base_parameters());
        rows.push(ctx.row("", p, "constant-datum-error", worst, Relation::AtMost, 1e-8));
    }
    Ok(rows)
}

fn determinism(config: &ExperimentConfig) -> Rows {
    let paths: Vec<std::path::PathBuf> = config.configs.iter().map(|p| config.base_dir.join(p)).collect();
    let mut rows = Vec::new();
    for path in &paths {
        let inner = ExperimentConfig::load(path)?;
        if inner.kind == ExperimentKind::Determinism {
            return Err(HarnessError::Config {
                path: path.display().to_string(),
                message: "field `kind`: determinism configs cannot be nested".into(),
            });
        }
        let first = to_csv(&run(&inner)?);
        let second = to_csv(&run_with_threads(&inner, Some(1))?);
        let differing = first.lines().zip(second.lines()).filter(|(a, b)| a != b).count()
            + first.lines().count().abs_diff(second.lines().count());
        rows.push(ResultRow {
            experiment: config.id.clone(),
            case: inner.id.clone(),
            parameters: format!("config={};bytes={}", path.file_name().and_then(|n| n.to_str()).unwrap_or_default(), first.len()),
            quantity: "differing-lines".into(),
            value: differing as f64 + if first == second { 0.0 } else { 0.5 },
            relation: Relation::AtMost,
            threshold: 0.0,
        });
    }
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::path::Path;

    fn parse(text: &str) -> ExperimentConfig {
        ExperimentConfig::from_toml(text, Path::new("inline.toml")).unwrap()
    }

    #[test]
    fn linear_exact_matches_closed_form_on_linear_law() {
        let g = EvolvingGeometry::new(fpme_core::Family::Circle, RadiusLaw::Linear { r0: 1.0, rate: 0.5 }, 1.0).unwrap();
        let snap = g.snapshot_at(0.0, 4).unwrap();
        let u = SpectralField::basis(snap, 3).unwrap();
        let e = linear_exact(&g, &u, 1.0).unwrap();
        let r: f64 = 1.5;
        assert!((e[3] - (1.0 / r) * r.sqrt() * (-2.0 * r.ln() / 0.5).exp()).abs() < 1e-15);
    }

    #[test]
    fn sinusoidal_integral_by_quadrature() {
        let law = RadiusLaw::Sinusoidal { r0: 1.0, amplitude: 0.0, omega: 3.0 };
        assert!((inverse_radius_integral(law, 0.7).unwrap() - 0.7).abs() < 1e-14);
    }

    #[test]
    fn extension_suite_on_small_circle() {
        let c = parse("id = \"ext\"\nkind = \"verify-extension\"\nseed = 7\n[fields]\ncount = 2\nmodes = 8\nband = 4\n");
        let rows = run_with_threads(&c, Some(2)).unwrap();
        assert_eq!(rows.len(), 2 * 7);
        assert!(rows.iter().all(|r| r.pass()), "{rows:#?}");
    }

    #[test]
    fn rows_do_not_depend_on_thread_count() {
        let c = parse("id = \"n\"\nkind = \"verify-norms\"\nseed = 3\n[fields]\ncount = 12\nmodes = 6\nradii = [1.0, 2.0]\n");
        let a = to_csv(&run_with_threads(&c, Some(1)).unwrap());
        let b = to_csv(&run_with_threads(&c, Some(4)).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn solver_failures_carry_the_experiment_id() {
        // a working interval too small for the datum is rejected by the solver
        let c = parse(
            "id = \"bad\"\nkind = \"solve\"\nchecks = [\"mass\"]\n[nonlinearity]\nkind = \"arctan\"\nworking_interval = 0.1\n[solver]\nmodes = 4\n[fields]\nkind = \"constant\"\noffset = 1.0\n",
        );
        let e = run_with_threads(&c, Some(1)).unwrap_err();
        assert_eq!(e.exit_code(), 3);
        assert!(e.to_string().starts_with("experiment bad:"), "{e}");
    }
}
