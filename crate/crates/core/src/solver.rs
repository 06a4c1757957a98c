//! Spectral Galerkin time integration of
//! `u̇ + u ∇_Γ·w + (−Δ_Γ)^{1/2} Ψ(u) = 0` on a dilating closed manifold.
//!
//! Unknowns are the coefficients `α` of the pulled-back solution in the
//! eigenbasis of `Γ₀`. They satisfy
//!
//! ```text
//! α′ = −W(t) α − a(t, α),   a(t, α) = φ_{−t} DtN_t Ψ(φ_t α)
//! ```
//!
//! where `W(t)` is the Galerkin matrix of `∇_Γ·w` (a multiple of the identity
//! for uniform dilations) and the DtN multipliers are those of the chosen
//! cylinder. The implicit stepper treats `W` with its exact propagator
//! `exp(−∫W)` and `a` with backward Euler; this keeps the mean mode, and so
//! the mass, exact up to round-off.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::extension::{dtn_multiplier, Cylinder};
use crate::geometry::EvolvingGeometry;
use crate::manifold::{ManifoldSnapshot, SpectralField, SpectralTransform};
use crate::nonlinearity::NonlinearitySpec;

/// Diagonal shift added to Newton matrices.
pub const NEWTON_REGULARIZATION: f64 = 1e-12;

/// Number of times a failing implicit step is retried with half the step.
pub const MAX_STEP_HALVINGS: usize = 4;

const MAX_RK_SUBSTEPS: usize = 1_000_000;

/// Time integrator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Stepper {
    ImplicitEuler { newton_tol: f64, max_iter: usize },
    ExplicitRK { tol: f64 },
}

impl Stepper {
    fn validate(self) -> Result<Self> {
        match self {
            Stepper::ImplicitEuler { newton_tol, max_iter } => {
                if !(newton_tol > 0.0) || max_iter == 0 {
                    return Err(Error::Argument("Newton tolerance and iteration cap must be positive".into()));
                }
            }
            Stepper::ExplicitRK { tol } => {
                if !(tol > 0.0) {
                    return Err(Error::Argument("Runge–Kutta tolerance must be positive".into()));
                }
            }
        }
        Ok(self)
    }
}

/// Everything needed to integrate one problem.
#[derive(Debug, Clone)]
pub struct SolverConfig {
    geometry: EvolvingGeometry,
    nonlinearity: NonlinearitySpec,
    initial_data: SpectralField,
    sup_bound: f64,
    cylinder: Cylinder,
    time_step: f64,
    horizon: f64,
    stepper: Stepper,
}

impl SolverConfig {
    pub fn new(
        geometry: EvolvingGeometry,
        nonlinearity: NonlinearitySpec,
        initial_data: SpectralField,
        cylinder: Cylinder,
        time_step: f64,
        horizon: f64,
        stepper: Stepper,
    ) -> Result<Self> {
        let sup_bound = initial_data.sup_norm();
        let cfg = Self {
            geometry,
            nonlinearity,
            initial_data,
            sup_bound,
            cylinder,
            time_step,
            horizon,
            stepper,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        if !(self.time_step > 0.0 && self.time_step.is_finite()) {
            return Err(Error::Argument(format!("time step must be positive, got {}", self.time_step)));
        }
        if !(self.horizon > 0.0) || self.horizon > self.geometry.horizon() * (1.0 + 1e-12) {
            return Err(Error::Argument(format!(
                "horizon {} must lie in (0, {}]",
                self.horizon,
                self.geometry.horizon()
            )));
        }
        let snap = self.initial_data.snapshot();
        let expected = self.geometry.snapshot_at(0.0, snap.modes())?;
        if *snap != expected {
            return Err(Error::SnapshotMismatch(format!(
                "initial data lives on a {} of radius {}, geometry starts from radius {}",
                snap.family(),
                snap.radius(),
                expected.radius()
            )));
        }
        if let Cylinder::Truncated(r) = self.cylinder {
            if !(r >= 1.0 && r.is_finite()) {
                return Err(Error::Argument(format!("truncation height must be ≥ 1, got {r}")));
            }
        }
        self.stepper.validate()?;
        if let Some(a) = self.nonlinearity.working_interval() {
            let needed = self.sup_bound * (self.shift() * self.horizon).exp();
            if a < needed {
                return Err(Error::Argument(format!(
                    "working interval [−{a}, {a}] does not contain the a-priori bound {needed}"
                )));
            }
        }
        Ok(())
    }

    pub fn geometry(&self) -> &EvolvingGeometry {
        &self.geometry
    }

    pub fn nonlinearity(&self) -> &NonlinearitySpec {
        &self.nonlinearity
    }

    pub fn initial_data(&self) -> &SpectralField {
        &self.initial_data
    }

    /// `M = ‖u₀‖_{L∞}`.
    pub fn sup_bound(&self) -> f64 {
        self.sup_bound
    }

    pub fn cylinder(&self) -> Cylinder {
        self.cylinder
    }

    pub fn time_step(&self) -> f64 {
        self.time_step
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn stepper(&self) -> Stepper {
        self.stepper
    }

    pub fn modes(&self) -> usize {
        self.initial_data.snapshot().modes()
    }

    /// Growth rate `λ = max_t |∇_Γ·w|` of the maximum principle.
    pub fn shift(&self) -> f64 {
        self.geometry.div_bound()
    }

    pub fn with_nonlinearity(&self, nonlinearity: NonlinearitySpec) -> Result<Self> {
        let cfg = Self { nonlinearity, ..self.clone() };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_initial_data(&self, initial_data: SpectralField) -> Result<Self> {
        let sup_bound = initial_data.sup_norm();
        let cfg = Self { initial_data, sup_bound, ..self.clone() };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_cylinder(&self, cylinder: Cylinder) -> Result<Self> {
        let cfg = Self { cylinder, ..self.clone() };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_time_step(&self, time_step: f64) -> Result<Self> {
        let cfg = Self { time_step, ..self.clone() };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn with_stepper(&self, stepper: Stepper) -> Result<Self> {
        let cfg = Self { stepper, ..self.clone() };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Output times `0, Δt, 2Δt, …, T` (the last step may be shorter).
    pub fn output_times(&self) -> Vec<f64> {
        let n = (self.horizon / self.time_step - 1e-9).ceil().max(1.0) as usize;
        let mut times: Vec<f64> = (0..n).map(|i| i as f64 * self.time_step).collect();
        times.push(self.horizon);
        times
    }
}

/// Newton statistics of the last implicit step.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct NewtonStats {
    pub iterations: usize,
    pub residual: f64,
}

/// Time and pulled-back Galerkin coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub t: f64,
    pub alpha: Vec<f64>,
    pub newton_stats: NewtonStats,
}

impl SolverState {
    pub fn initial(config: &SolverConfig) -> Self {
        Self {
            t: 0.0,
            alpha: config.initial_data.coeffs().to_vec(),
            newton_stats: NewtonStats::default(),
        }
    }
}

/// Per-node diagnostics recorded along a trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct StepDiagnostics {
    pub mass: f64,
    pub sup_norm: f64,
    /// `∫_{Γ(t)} H(u)` with the solver's grid quadrature.
    pub energy: f64,
    /// `∫₀ᵗ ‖∇ E Ψ(u)‖²` accumulated by the steps so far.
    pub dissipation: f64,
    pub newton_iterations: usize,
    pub newton_residual: f64,
}

/// Solution fields on `Γ(t)` at the output times.
#[derive(Debug, Clone)]
pub struct Trajectory {
    geometry: EvolvingGeometry,
    sup_bound: f64,
    times: Vec<f64>,
    fields: Vec<SpectralField>,
    diagnostics: Vec<StepDiagnostics>,
}

impl Trajectory {
    /// Assembles a trajectory from fields on `Γ(t)`; diagnostics hold mass
    /// and sup norm only.
    pub fn from_fields(geometry: EvolvingGeometry, times: Vec<f64>, fields: Vec<SpectralField>) -> Result<Self> {
        if times.is_empty() || times.len() != fields.len() {
            return Err(Error::Argument("times and fields must be non-empty and of equal length".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Argument("trajectory times must be strictly increasing".into()));
        }
        for (t, f) in times.iter().zip(&fields) {
            let expected = geometry.snapshot_at(*t, f.snapshot().modes())?;
            if *f.snapshot() != expected {
                return Err(Error::SnapshotMismatch(format!("field at t = {t} does not live on Γ(t)")));
            }
        }
        let diagnostics = fields
            .iter()
            .map(|f| StepDiagnostics { mass: f.integrate(), sup_norm: f.sup_norm(), ..Default::default() })
            .collect();
        Ok(Self { geometry, sup_bound: fields[0].sup_norm(), times, fields, diagnostics })
    }

    pub fn geometry(&self) -> &EvolvingGeometry {
        &self.geometry
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn fields(&self) -> &[SpectralField] {
        &self.fields
    }

    pub fn diagnostics(&self) -> &[StepDiagnostics] {
        &self.diagnostics
    }

    /// `M = ‖u₀‖_{L∞}`.
    pub fn sup_bound(&self) -> f64 {
        self.sup_bound
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn final_field(&self) -> &SpectralField {
        self.fields.last().expect("trajectories are non-empty")
    }
}

/// Dense Galerkin operators for one configuration.
struct Galerkin<'a> {
    cfg: &'a SolverConfig,
    plan: SpectralTransform,
    unit_lambdas: Vec<f64>,
    dim: f64,
}

/// Why an implicit step failed.
enum StepFailure {
    Newton(Error),
    Other(Error),
}

impl<'a> Galerkin<'a> {
    fn new(cfg: &'a SolverConfig) -> Result<Self> {
        let snap = *cfg.initial_data.snapshot();
        let degree = match &cfg.nonlinearity {
            NonlinearitySpec::Custom(_) => 3.0,
            other => other.exponent().max(2.0),
        };
        let plan = SpectralTransform::new(snap.family(), snap.modes(), snap.dealiased_grid(degree))?;
        let unit = ManifoldSnapshot::new(snap.family(), 1.0, snap.modes())?;
        Ok(Self {
            cfg,
            plan,
            unit_lambdas: unit.eigenvalues(),
            dim: snap.dimension() as f64,
        })
    }

    fn radius(&self, t: f64) -> f64 {
        self.cfg.geometry.radius(t)
    }

    /// `(r(t)/r₀)^{d/2}`: pulled-back coefficients → coefficients on `Γ(t)`.
    fn push_factor(&self, t: f64) -> f64 {
        (self.radius(t) / self.cfg.geometry.r0()).powf(0.5 * self.dim)
    }

    fn multipliers(&self, t: f64) -> Vec<f64> {
        let r2 = self.radius(t).powi(2);
        self.unit_lambdas.iter().map(|l| dtn_multiplier(l / r2, self.cfg.cylinder)).collect()
    }

    /// Grid values of `u(t)` for pulled-back coefficients `alpha`.
    fn grid_values(&self, t: f64, alpha: &[f64]) -> Vec<f64> {
        let s = self.push_factor(t);
        let c: Vec<f64> = alpha.iter().map(|a| a * s).collect();
        self.plan.synthesize(&c, self.radius(t))
    }

    /// Coefficients on `Γ(t)` of the projection of `Ψ(u)`.
    fn psi_coeffs(&self, t: f64, values: &[f64]) -> Vec<f64> {
        let mapped: Vec<f64> = values.iter().map(|v| self.cfg.nonlinearity.psi_unchecked(*v)).collect();
        self.plan.analyze(&mapped, self.radius(t))
    }

    /// `a(t, α)` together with the grid values of `u`.
    fn a_term(&self, t: f64, alpha: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let values = self.grid_values(t, alpha);
        let psi = self.psi_coeffs(t, &values);
        let s = self.push_factor(t);
        let a = psi
            .iter()
            .zip(self.multipliers(t))
            .map(|(p, mu)| mu * p / s)
            .collect();
        (a, values)
    }

    fn check_domain(&self, t: f64, values: &[f64]) -> Result<()> {
        let a = self.cfg.nonlinearity.working_interval();
        for v in values {
            let outside = match a {
                Some(a) => v.abs() > a * (1.0 + 1e-12),
                None => false,
            };
            if outside || !v.is_finite() {
                return Err(Error::Step {
                    t,
                    reason: format!("solution value {v} left the domain of the nonlinearity"),
                    residuals: vec![*v],
                });
            }
        }
        Ok(())
    }

    fn rhs(&self, t: f64, alpha: &[f64]) -> Result<Vec<f64>> {
        let (a, values) = self.a_term(t, alpha);
        self.check_domain(t, &values)?;
        let div = self.cfg.geometry.div_w(t)?;
        Ok(alpha.iter().zip(&a).map(|(x, a)| -div * x - a).collect())
    }

    /// `exp(−∫_{t₀}^{t₁} ∇_Γ·w) = (r(t₀)/r(t₁))^d`.
    fn propagator(&self, t0: f64, t1: f64) -> f64 {
        (self.radius(t0) / self.radius(t1)).powf(self.dim)
    }

    fn implicit_step(
        &self,
        t: f64,
        alpha: &[f64],
        dt: f64,
        newton_tol: f64,
        max_iter: usize,
    ) -> std::result::Result<(Vec<f64>, NewtonStats), StepFailure> {
        let t1 = t + dt;
        let e = self.propagator(t, t1);
        let b: Vec<f64> = alpha.iter().map(|a| a * e).collect();
        let scale = b.iter().fold(1.0f64, |m, x| m.max(x.abs()));
        let mu = self.multipliers(t1);
        let n = b.len();
        let mut beta = b.clone();
        let mut history = Vec::new();
        for it in 0..=max_iter {
            let (a, values) = self.a_term(t1, &beta);
            let g: Vec<f64> = (0..n).map(|i| beta[i] + dt * a[i] - b[i]).collect();
            let res = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
            history.push(res);
            if !res.is_finite() {
                break;
            }
            if res <= newton_tol * scale {
                self.check_domain(t1, &values).map_err(StepFailure::Other)?;
                return Ok((beta, NewtonStats { iterations: it, residual: res }));
            }
            if it == max_iter {
                break;
            }
            let slopes: Vec<f64> = values
                .iter()
                .map(|v| self.cfg.nonlinearity.psi_prime_unchecked(*v))
                .collect();
            let m = self.plan.multiplication_matrix(&slopes);
            let mut jac = DMatrix::<f64>::identity(n, n) * (1.0 + NEWTON_REGULARIZATION);
            for i in 0..n {
                let f = dt * mu[i];
                if f != 0.0 {
                    for j in 0..n {
                        jac[(i, j)] += f * m[(i, j)];
                    }
                }
            }
            let rhs = DVector::from_iterator(n, g.iter().map(|x| -x));
            let Some(delta) = jac.lu().solve(&rhs) else {
                break;
            };
            for (b, d) in beta.iter_mut().zip(delta.iter()) {
                *b += d;
            }
        }
        Err(StepFailure::Newton(Error::Step {
            t: t1,
            reason: format!("Newton did not reach tolerance {newton_tol:e} in {max_iter} iterations"),
            residuals: history,
        }))
    }

    /// Implicit step with up to [`MAX_STEP_HALVINGS`] recursive halvings.
    fn implicit_advance(
        &self,
        t: f64,
        alpha: &[f64],
        dt: f64,
        newton_tol: f64,
        max_iter: usize,
        depth: usize,
    ) -> Result<(Vec<f64>, NewtonStats)> {
        match self.implicit_step(t, alpha, dt, newton_tol, max_iter) {
            Ok(out) => Ok(out),
            Err(StepFailure::Other(e)) => Err(e),
            Err(StepFailure::Newton(e)) => {
                if depth >= MAX_STEP_HALVINGS {
                    return Err(e);
                }
                let h = 0.5 * dt;
                let (mid, s1) = self.implicit_advance(t, alpha, h, newton_tol, max_iter, depth + 1)?;
                let (end, s2) = self.implicit_advance(t + h, &mid, h, newton_tol, max_iter, depth + 1)?;
                Ok((end, NewtonStats { iterations: s1.iterations + s2.iterations, residual: s2.residual }))
            }
        }
    }

    /// Dormand–Prince 5(4) with step control from `t` to `t + dt`.
    fn rk_advance(&self, t: f64, alpha: &[f64], dt: f64, tol: f64, h: &mut f64) -> Result<Vec<f64>> {
        const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
        const A: [[f64; 6]; 7] = [
            [0.0; 6],
            [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
            [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
            [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
            [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
            [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
            [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
        ];
        const B5: [f64; 7] = [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0, 0.0];
        const B4: [f64; 7] = [
            5179.0 / 57600.0,
            0.0,
            7571.0 / 16695.0,
            393.0 / 640.0,
            -92097.0 / 339200.0,
            187.0 / 2100.0,
            1.0 / 40.0,
        ];
        let end = t + dt;
        let mut tc = t;
        let mut y = alpha.to_vec();
        let n = y.len();
        let mut substeps = 0;
        while tc < end - 1e-14 * end.abs().max(1.0) {
            substeps += 1;
            if substeps > MAX_RK_SUBSTEPS {
                return Err(Error::Step {
                    t: tc,
                    reason: "Runge–Kutta step size collapsed".into(),
                    residuals: vec![*h],
                });
            }
            let step = h.min(end - tc);
            let mut k: Vec<Vec<f64>> = Vec::with_capacity(7);
            for s in 0..7 {
                let ys: Vec<f64> = (0..n)
                    .map(|i| y[i] + step * (0..s).map(|j| A[s][j] * k[j][i]).sum::<f64>())
                    .collect();
                k.push(self.rhs(tc + C[s] * step, &ys)?);
            }
            let y5: Vec<f64> = (0..n).map(|i| y[i] + step * (0..7).map(|s| B5[s] * k[s][i]).sum::<f64>()).collect();
            let err = (0..n)
                .map(|i| {
                    let e = step * (0..7).map(|s| (B5[s] - B4[s]) * k[s][i]).sum::<f64>();
                    e.abs() / (tol * (1.0 + y[i].abs().max(y5[i].abs())))
                })
                .fold(0.0f64, f64::max);
            if err <= 1.0 {
                tc += step;
                y = y5;
            }
            let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
            *h = step * factor;
        }
        Ok(y)
    }

    fn field_at(&self, t: f64, alpha: &[f64]) -> Result<SpectralField> {
        let snap = self.cfg.geometry.snapshot_at(t, self.cfg.modes())?;
        let s = self.push_factor(t);
        SpectralField::new(snap, alpha.iter().map(|a| a * s).collect())
    }

    /// Grid quadrature of `H(u)` on `Γ(t)`.
    fn energy(&self, t: f64, values: &[f64]) -> Result<f64> {
        let mut h = Vec::with_capacity(values.len());
        for v in values {
            h.push(self.cfg.nonlinearity.antiderivative_h_unchecked(*v)?);
        }
        let snap = self.cfg.geometry.snapshot_at(t, self.cfg.modes())?;
        Ok(SpectralField::new(snap, self.plan.analyze(&h, self.radius(t)))?.integrate())
    }

    /// `Δt Σ μ_k [PΨ(u)]_k²` on `Γ(t)`.
    fn dissipation(&self, t: f64, values: &[f64], dt: f64) -> f64 {
        let psi = self.psi_coeffs(t, values);
        dt * psi.iter().zip(self.multipliers(t)).map(|(p, mu)| mu * p * p).sum::<f64>()
    }

    fn diagnostics(&self, t: f64, alpha: &[f64], dissipation: f64, stats: NewtonStats) -> Result<(SpectralField, StepDiagnostics)> {
        let field = self.field_at(t, alpha)?;
        let values = self.grid_values(t, alpha);
        let diag = StepDiagnostics {
            mass: field.integrate(),
            sup_norm: field.sup_norm(),
            energy: self.energy(t, &values)?,
            dissipation,
            newton_iterations: stats.iterations,
            newton_residual: stats.residual,
        };
        Ok((field, diag))
    }
}

/// `W(t)_{ij} = ∫_{Γ₀} b_i b_j φ_{−t}(∇_Γ·w)` assembled by grid quadrature.
pub fn w_matrix(config: &SolverConfig, t: f64) -> Result<DMatrix<f64>> {
    let g = Galerkin::new(config)?;
    let div = config.geometry.div_w(t)?;
    Ok(g.plan.multiplication_matrix(&vec![div; g.plan.grid_size()]))
}

/// `α′ = −W(t)α − a(t, α)` for pulled-back coefficients `alpha`.
pub fn rhs(config: &SolverConfig, t: f64, alpha: &[f64]) -> Result<Vec<f64>> {
    if alpha.len() != config.initial_data.coeffs().len() {
        return Err(Error::Argument(format!(
            "coefficient vector has length {}, layout needs {}",
            alpha.len(),
            config.initial_data.coeffs().len()
        )));
    }
    Galerkin::new(config)?.rhs(t, alpha)
}

/// One step of length `min(Δt, T − t)` from `state`.
pub fn step(config: &SolverConfig, state: &SolverState) -> Result<SolverState> {
    let dt = config.time_step.min(config.horizon - state.t);
    if !(dt > 0.0) {
        return Err(Error::Range { t: state.t + config.time_step, horizon: config.horizon });
    }
    let g = Galerkin::new(config)?;
    advance(&g, state, dt, &mut dt.clone())
}

fn advance(g: &Galerkin<'_>, state: &SolverState, dt: f64, rk_h: &mut f64) -> Result<SolverState> {
    let (alpha, stats) = match g.cfg.stepper {
        Stepper::ImplicitEuler { newton_tol, max_iter } => {
            g.implicit_advance(state.t, &state.alpha, dt, newton_tol, max_iter, 0)?
        }
        Stepper::ExplicitRK { tol } => (g.rk_advance(state.t, &state.alpha, dt, tol, rk_h)?, NewtonStats::default()),
    };
    Ok(SolverState { t: state.t + dt, alpha, newton_stats: stats })
}

/// Integrates `config` to its horizon, recording diagnostics at every step.
pub fn solve(config: &SolverConfig) -> Result<Trajectory> {
    let g = Galerkin::new(config)?;
    let times = config.output_times();
    let mut state = SolverState::initial(config);
    let mut fields = Vec::with_capacity(times.len());
    let mut diagnostics = Vec::with_capacity(times.len());
    let (f0, d0) = g.diagnostics(0.0, &state.alpha, 0.0, NewtonStats::default())?;
    fields.push(f0);
    diagnostics.push(d0);
    let mut dissipated = 0.0;
    let mut rk_h = config.time_step;
    for w in times.windows(2) {
        let dt = w[1] - w[0];
        state = advance(&g, &state, dt, &mut rk_h)?;
        state.t = w[1];
        let values = g.grid_values(w[1], &state.alpha);
        dissipated += g.dissipation(w[1], &values, dt);
        let (f, d) = g.diagnostics(w[1], &state.alpha, dissipated, state.newton_stats)?;
        fields.push(f);
        diagnostics.push(d);
    }
    Ok(Trajectory {
        geometry: config.geometry,
        sup_bound: config.sup_bound,
        times,
        fields,
        diagnostics,
    })
}

/// Solves the non-degenerate problem with a validated `β`.
pub fn solve_nondegenerate(config: &SolverConfig) -> Result<Trajectory> {
    match config.nonlinearity {
        NonlinearitySpec::Custom(_) | NonlinearitySpec::Regularized(_) => solve(config),
        NonlinearitySpec::PowerLaw { m } if m == 1.0 => solve(config),
        NonlinearitySpec::PowerLaw { m } => Err(Error::Argument(format!(
            "the power law with m = {m} is degenerate; use solve_fpme"
        ))),
    }
}

/// Direct solve of the fractional porous medium equation with `Ψ` itself.
pub fn solve_fpme(config: &SolverConfig) -> Result<Trajectory> {
    match config.nonlinearity {
        NonlinearitySpec::PowerLaw { .. } => solve(config),
        _ => Err(Error::Argument("solve_fpme expects a power-law nonlinearity".into())),
    }
}

/// Solutions with `Ψ_k` for increasing `k` next to the direct solve.
#[derive(Debug, Clone)]
pub struct RegularizedSweep {
    pub ks: Vec<f64>,
    pub trajectories: Vec<Trajectory>,
    pub direct: Trajectory,
    /// `‖u_{k_{i+1}} − u_{k_i}‖_{L²(0,T;L²)}`.
    pub successive_gaps: Vec<f64>,
    /// `‖u_{k_last} − u‖_{L²(0,T;L²)}` against the direct solve.
    pub gap_to_direct: f64,
    pub working_interval: f64,
}

/// Regularized sweep for a power-law configuration; the working interval is
/// `1.1 · M e^{λT}`.
pub fn regularized_sweep(config: &SolverConfig, ks: &[f64]) -> Result<RegularizedSweep> {
    let NonlinearitySpec::PowerLaw { m } = config.nonlinearity else {
        return Err(Error::Argument("regularized sweep expects a power-law nonlinearity".into()));
    };
    if ks.len() < 2 || ks.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Argument("sweep needs at least two increasing indices k".into()));
    }
    let a = 1.1 * config.sup_bound * (config.shift() * config.horizon).exp();
    let direct = solve_fpme(config)?;
    let mut trajectories = Vec::with_capacity(ks.len());
    for &k in ks {
        let cfg = config.with_nonlinearity(NonlinearitySpec::make_regularized(m, k, a)?)?;
        trajectories.push(solve(&cfg)?);
    }
    let successive_gaps = trajectories
        .windows(2)
        .map(|w| l2_in_time_gap(&w[0], &w[1]))
        .collect::<Result<Vec<_>>>()?;
    let gap_to_direct = l2_in_time_gap(trajectories.last().expect("non-empty"), &direct)?;
    Ok(RegularizedSweep {
        ks: ks.to_vec(),
        trajectories,
        direct,
        successive_gaps,
        gap_to_direct,
        working_interval: a,
    })
}

fn check_shared_grid(a: &Trajectory, b: &Trajectory) -> Result<()> {
    if a.times.len() != b.times.len()
        || a.times.iter().zip(&b.times).any(|(x, y)| (x - y).abs() > 1e-12 * x.abs().max(1.0))
    {
        return Err(Error::Argument("trajectories do not share a time grid".into()));
    }
    if a.geometry != b.geometry {
        return Err(Error::Argument("trajectories live on different geometries".into()));
    }
    Ok(())
}

/// `(Σ_n Δt_n ‖u_a(t_n) − u_b(t_n)‖²_{L²(Γ(t_n))})^{1/2}` over the shared grid.
pub fn l2_in_time_gap(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    check_shared_grid(a, b)?;
    let mut total = 0.0;
    for n in 1..a.times.len() {
        let dt = a.times[n] - a.times[n - 1];
        total += dt * a.fields[n].sub(&b.fields[n])?.l2_norm_squared();
    }
    Ok(total.sqrt())
}

/// `t ↦ ∫_{Γ(t)} u`.
pub fn diagnostics_mass(traj: &Trajectory) -> Vec<f64> {
    traj.diagnostics.iter().map(|d| d.mass).collect()
}

/// `max_t ‖u(t)‖_∞ e^{−λt} − M`; nonpositive when the maximum principle holds.
pub fn diagnostics_maxprinciple(traj: &Trajectory) -> f64 {
    let lambda = traj.geometry.div_bound();
    traj.times
        .iter()
        .zip(&traj.diagnostics)
        .map(|(t, d)| d.sup_norm * (-lambda * t).exp() - traj.sup_bound)
        .fold(f64::NEG_INFINITY, f64::max)
}

/// `t ↦ ∫H(u(t)) + ∫₀ᵗ‖∇EΨ(u)‖²`; non-increasing on static surfaces.
pub fn diagnostics_energy(traj: &Trajectory) -> Vec<f64> {
    traj.diagnostics.iter().map(|d| d.energy + d.dissipation).collect()
}

/// `t ↦ ∫_{Γ(t)} (u₁ − u₂)⁺` and its largest increase.
#[derive(Debug, Clone, PartialEq)]
pub struct ContractionSeries {
    pub series: Vec<f64>,
    /// `max_{n > j} (s_n − s_j)⁺`.
    pub max_violation: f64,
}

pub fn diagnostics_contraction(a: &Trajectory, b: &Trajectory) -> Result<ContractionSeries> {
    check_shared_grid(a, b)?;
    let series = a
        .fields
        .iter()
        .zip(&b.fields)
        .map(|(x, y)| Ok(x.sub(y)?.positive_part_integral()))
        .collect::<Result<Vec<f64>>>()?;
    let mut running_min = f64::INFINITY;
    let mut max_violation: f64 = 0.0;
    for s in &series {
        max_violation = max_violation.max(s - running_min);
        running_min = running_min.min(*s);
    }
    Ok(ContractionSeries { series, max_violation })
}

/// `max_t max_Γ (u_lower − u_upper)`; nonpositive when the order is kept.
pub fn diagnostics_comparison(lower: &Trajectory, upper: &Trajectory) -> Result<f64> {
    check_shared_grid(lower, upper)?;
    lower
        .fields
        .iter()
        .zip(&upper.fields)
        .map(|(x, y)| Ok(x.sub(y)?.max_value()))
        .try_fold(f64::NEG_INFINITY, |m, v: Result<f64>| Ok(m.max(v?)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::RadiusLaw;
    use crate::manifold::Family;
    use approx::assert_relative_eq;

    const IE: Stepper = Stepper::ImplicitEuler { newton_tol: 1e-12, max_iter: 30 };

    fn static_circle(modes: usize) -> (EvolvingGeometry, ManifoldSnapshot) {
        let g = EvolvingGeometry::stationary(Family::Circle, 1.0, 1.0).unwrap();
        (g, g.snapshot_at(0.0, modes).unwrap())
    }

    fn config(
        g: EvolvingGeometry,
        psi: NonlinearitySpec,
        u0: SpectralField,
        cyl: Cylinder,
        dt: f64,
        horizon: f64,
    ) -> SolverConfig {
        SolverConfig::new(g, psi, u0, cyl, dt, horizon, IE).unwrap()
    }

    #[test]
    fn rhs_examples() {
        let (g, s) = static_circle(4);
        let lin = NonlinearitySpec::power_law(1.0).unwrap();
        let e1 = SpectralField::basis(s, 1).unwrap();
        let cfg = config(g, lin.clone(), e1.clone(), Cylinder::Full, 0.1, 1.0);
        let d = rhs(&cfg, 0.0, e1.coeffs()).unwrap();
        for (i, v) in d.iter().enumerate() {
            assert_relative_eq!(*v, if i == 1 { -1.0 } else { 0.0 }, epsilon = 1e-14);
        }

        let dil = EvolvingGeometry::new(Family::Circle, RadiusLaw::Linear { r0: 1.0, rate: 0.5 }, 1.0).unwrap();
        let c = SpectralField::constant(dil.snapshot_at(0.0, 4).unwrap(), 2.0);
        let cfg = config(dil, NonlinearitySpec::power_law(2.0).unwrap(), c.clone(), Cylinder::Full, 0.1, 1.0);
        let d = rhs(&cfg, 0.4, c.coeffs()).unwrap();
        let div = dil.div_w(0.4).unwrap();
        for (x, y) in d.iter().zip(c.coeffs()) {
            assert!((x + div * y).abs() < 1e-13);
        }

        let c = SpectralField::constant(s, 1.5);
        let cfg = config(g, lin, c.clone(), Cylinder::Truncated(3.0), 0.1, 1.0);
        let d = rhs(&cfg, 0.0, c.coeffs()).unwrap();
        assert_relative_eq!(d[0], -c.coeffs()[0] / 3.0, epsilon = 1e-14);
        assert!(d[0] != 0.0);
    }

    #[test]
    fn w_matrix_is_divergence_times_identity() {
        let dil = EvolvingGeometry::new(Family::SphereZonal, RadiusLaw::Linear { r0: 1.0, rate: 0.5 }, 1.0).unwrap();
        let u0 = SpectralField::constant(dil.snapshot_at(0.0, 6).unwrap(), 1.0);
        let cfg = config(dil, NonlinearitySpec::power_law(1.0).unwrap(), u0, Cylinder::Full, 0.1, 1.0);
        let w = w_matrix(&cfg, 0.5).unwrap();
        let div = dil.div_w(0.5).unwrap();
        for i in 0..w.nrows() {
            for j in 0..w.ncols() {
                assert!((w[(i, j)] - if i == j { div } else { 0.0 }).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn implicit_step_examples() {
        let (g, s) = static_circle(4);
        let lin = NonlinearitySpec::power_law(1.0).unwrap();
        for mode in [1, 4, 7] {
            let e = SpectralField::basis(s, mode).unwrap();
            let cfg = config(g, lin.clone(), e, Cylinder::Full, 0.05, 1.0);
            let next = step(&cfg, &SolverState::initial(&cfg)).unwrap();
            let sqrt_l = s.eigenvalue(mode).unwrap().sqrt();
            assert_relative_eq!(next.alpha[mode], 1.0 / (1.0 + 0.05 * sqrt_l), epsilon = 1e-12);
        }
        let c = SpectralField::constant(s, 0.7);
        let cfg = config(g, NonlinearitySpec::power_law(3.0).unwrap(), c.clone(), Cylinder::Full, 0.05, 1.0);
        let next = step(&cfg, &SolverState::initial(&cfg)).unwrap();
        for (x, y) in next.alpha.iter().zip(c.coeffs()) {
            assert!((x - y).abs() < 1e-15);
        }
    }

    #[test]
    fn one_step_is_locally_second_order() {
        let (g, s) = static_circle(4);
        let e = SpectralField::basis(s, 3).unwrap();
        let mut errs = Vec::new();
        for dt in [0.02, 0.01, 0.005] {
            let cfg = config(g, NonlinearitySpec::power_law(1.0).unwrap(), e.clone(), Cylinder::Full, dt, 1.0);
            let next = step(&cfg, &SolverState::initial(&cfg)).unwrap();
            errs.push((next.alpha[3] - (-2.0 * dt).exp()).abs());
        }
        for w in errs.windows(2) {
            let ratio = w[0] / w[1];
            assert!((ratio - 4.0).abs() < 0.2, "{errs:?}");
        }
    }

    #[test]
    fn degenerate_newton_converges() {
        let (g, s) = static_circle(16);
        let u0 = SpectralField::basis(s, 1).unwrap().add(&SpectralField::basis(s, 4).unwrap().scale(0.3)).unwrap();
        let cfg = config(g, NonlinearitySpec::power_law(3.0).unwrap(), u0, Cylinder::Full, 0.01, 0.1);
        let traj = solve_fpme(&cfg).unwrap();
        assert_eq!(traj.len(), 11);
        let mass = diagnostics_mass(&traj);
        assert!(mass.iter().all(|m| (m - mass[0]).abs() < 1e-12));
    }

    #[test]
    fn domain_violation_is_a_step_error() {
        let (g, s) = static_circle(4);
        let u0 = SpectralField::constant(s, 1.0);
        let psi = NonlinearitySpec::make_regularized(2.0, 10.0, 1.0).unwrap();
        let cfg = config(g, psi, u0, Cylinder::Full, 0.1, 1.0);
        let err = rhs(&cfg, 0.0, &[3.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0]).unwrap_err();
        match err {
            Error::Step { residuals, .. } => assert!(residuals[0] > 1.0),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn config_validation() {
        let (g, s) = static_circle(4);
        let u0 = SpectralField::constant(s, 1.0);
        let lin = NonlinearitySpec::power_law(1.0).unwrap();
        assert!(SolverConfig::new(g, lin.clone(), u0.clone(), Cylinder::Truncated(0.5), 0.1, 1.0, IE).is_err());
        assert!(SolverConfig::new(g, lin.clone(), u0.clone(), Cylinder::Full, 0.0, 1.0, IE).is_err());
        assert!(SolverConfig::new(g, lin.clone(), u0.clone(), Cylinder::Full, 0.1, 2.0, IE).is_err());
        let wrong = SpectralField::constant(ManifoldSnapshot::circle(2.0, 4).unwrap(), 1.0);
        assert!(SolverConfig::new(g, lin, wrong, Cylinder::Full, 0.1, 1.0, IE).is_err());
        let narrow = NonlinearitySpec::make_regularized(2.0, 10.0, 0.5).unwrap();
        assert!(SolverConfig::new(g, narrow, u0, Cylinder::Full, 0.1, 1.0, IE).is_err());
    }

    #[test]
    fn output_times_end_at_horizon() {
        let (g, s) = static_circle(2);
        let u0 = SpectralField::constant(s, 1.0);
        let cfg = config(g, NonlinearitySpec::power_law(1.0).unwrap(), u0.clone(), Cylinder::Full, 0.3, 1.0);
        let t = cfg.output_times();
        assert_eq!(t.len(), 5);
        assert_eq!(*t.last().unwrap(), 1.0);
        let cfg = config(g, NonlinearitySpec::power_law(1.0).unwrap(), u0, Cylinder::Full, 0.1, 1.0);
        assert_eq!(cfg.output_times().len(), 11);
    }
}
