//! Closed manifolds with analytic Laplace–Beltrami eigenpairs.
//!
//! Two families are supported: the circle of radius `r` and the round
//! sphere of radius `r` restricted to zonal (axisymmetric) data. Fields are
//! stored as coefficients against the `L²`-orthonormal eigenbasis:
//!
//! * circle: `(φ₀, cos 1, sin 1, …, cos N, sin N)` with
//!   `φ₀ = (2πr)^{-1/2}` and `cos k ↦ cos(kθ)/(πr)^{1/2}`;
//! * zonal sphere: Legendre degrees `0..=N` with
//!   `φ_l = ((2l+1)/4π)^{1/2} P_l(cos θ)/r`.
//!
//! Every basis function is `r^{-d/2}` times its unit-radius counterpart,
//! which is what makes dilations act diagonally on coefficients.

use std::cell::RefCell;
use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use nalgebra::DMatrix;
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::quadrature::{gauss_legendre, integrate_adaptive, legendre_all};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Family {
    Circle,
    SphereZonal,
}

impl Family {
    pub fn dimension(self) -> usize {
        match self {
            Family::Circle => 1,
            Family::SphereZonal => 2,
        }
    }

    /// `c_d` in `λ₁ = c_d / r²`.
    pub fn first_eigenvalue_constant(self) -> f64 {
        match self {
            Family::Circle => 1.0,
            Family::SphereZonal => 2.0,
        }
    }

    /// Volume of the unit-radius member (`2π` or `4π`).
    pub fn unit_volume(self) -> f64 {
        match self {
            Family::Circle => 2.0 * PI,
            Family::SphereZonal => 4.0 * PI,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::Circle => write!(f, "circle"),
            Family::SphereZonal => write!(f, "sphere-zonal"),
        }
    }
}

/// A closed manifold at a fixed time together with a mode truncation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ManifoldSnapshot {
    family: Family,
    radius: f64,
    modes: usize,
}

impl ManifoldSnapshot {
    pub fn new(family: Family, radius: f64, modes: usize) -> Result<Self> {
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::Argument(format!("radius must be positive, got {radius}")));
        }
        if modes < 1 {
            return Err(Error::Argument("mode count must be at least 1".into()));
        }
        Ok(Self { family, radius, modes })
    }

    pub fn circle(radius: f64, modes: usize) -> Result<Self> {
        Self::new(Family::Circle, radius, modes)
    }

    pub fn sphere(radius: f64, modes: usize) -> Result<Self> {
        Self::new(Family::SphereZonal, radius, modes)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    /// Number of retained eigenmodes beyond the constant (`N`).
    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn dimension(&self) -> usize {
        self.family.dimension()
    }

    /// Length of the coefficient vector.
    pub fn len(&self) -> usize {
        match self.family {
            Family::Circle => 2 * self.modes + 1,
            Family::SphereZonal => self.modes + 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// `|M|`.
    pub fn volume(&self) -> f64 {
        self.family.unit_volume() * self.radius.powi(self.dimension() as i32)
    }

    /// Same family and truncation at another radius.
    pub fn with_radius(&self, radius: f64) -> Result<Self> {
        Self::new(self.family, radius, self.modes)
    }

    /// Same family and radius with another truncation.
    pub fn with_modes(&self, modes: usize) -> Result<Self> {
        Self::new(self.family, self.radius, modes)
    }

    /// Integer frequency (circle) or Legendre degree (sphere) of a mode.
    pub fn frequency(&self, mode: usize) -> Result<usize> {
        self.check_mode(mode)?;
        Ok(match self.family {
            Family::Circle => mode.div_ceil(2),
            Family::SphereZonal => mode,
        })
    }

    pub fn eigenvalue(&self, mode: usize) -> Result<f64> {
        let f = self.frequency(mode)? as f64;
        let r2 = self.radius * self.radius;
        Ok(match self.family {
            Family::Circle => f * f / r2,
            Family::SphereZonal => f * (f + 1.0) / r2,
        })
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        (0..self.len())
            .map(|k| self.eigenvalue(k).expect("in range"))
            .collect()
    }

    /// `λ₁`, the first nonzero eigenvalue.
    pub fn first_eigenvalue(&self) -> f64 {
        self.family.first_eigenvalue_constant() / (self.radius * self.radius)
    }

    /// `r^{-d/2}`, the factor relating basis functions to their unit-radius
    /// counterparts.
    pub fn normalization(&self) -> f64 {
        self.radius.powf(-(self.dimension() as f64) / 2.0)
    }

    /// Smallest grid that resolves every retained mode exactly.
    pub fn min_grid(&self) -> usize {
        self.len()
    }

    /// Grid size that de-aliases products of polynomial degree `degree`.
    ///
    /// Fractional degrees are rounded up; the result is exact for integer
    /// polynomial nonlinearities and best effort otherwise.
    pub fn dealiased_grid(&self, degree: f64) -> usize {
        let deg = degree.max(1.0).ceil() as usize;
        let n = self.modes;
        match self.family {
            Family::Circle => {
                let g = (deg + 1) * n + 1;
                round_up_smooth(g.max(self.len()))
            }
            Family::SphereZonal => ((deg + 1) * n + 2).div_ceil(2).max(self.len()),
        }
    }

    pub(crate) fn check_mode(&self, mode: usize) -> Result<()> {
        if mode >= self.len() {
            Err(Error::ModeIndex { index: mode, len: self.len() })
        } else {
            Ok(())
        }
    }

    pub(crate) fn same_layout(&self, other: &Self) -> bool {
        self.family == other.family && self.modes == other.modes
    }

    pub(crate) fn same_manifold(&self, other: &Self) -> bool {
        self.same_layout(other) && (self.radius - other.radius).abs() <= 1e-14 * self.radius
    }
}

/// Free-function form of [`ManifoldSnapshot::eigenvalue`].
pub fn eigenvalue(snapshot: &ManifoldSnapshot, mode: usize) -> Result<f64> {
    snapshot.eigenvalue(mode)
}

fn round_up_smooth(n: usize) -> usize {
    // next integer of the form 2^a 3^b 5^c, kept even
    let mut m = n.max(2);
    loop {
        let mut k = m;
        for p in [2, 3, 5] {
            while k % p == 0 {
                k /= p;
            }
        }
        if k == 1 && m % 2 == 0 {
            return m;
        }
        m += 1;
    }
}

/// A function on a snapshot stored by eigenbasis coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralField {
    snapshot: ManifoldSnapshot,
    coeffs: Vec<f64>,
}

impl SpectralField {
    pub fn new(snapshot: ManifoldSnapshot, coeffs: Vec<f64>) -> Result<Self> {
        if coeffs.len() != snapshot.len() {
            return Err(Error::Argument(format!(
                "expected {} coefficients for {} with N = {}, got {}",
                snapshot.len(),
                snapshot.family(),
                snapshot.modes(),
                coeffs.len()
            )));
        }
        if let Some(i) = coeffs.iter().position(|c| !c.is_finite()) {
            return Err(Error::Domain(format!("coefficient {i} is not finite")));
        }
        Ok(Self { snapshot, coeffs })
    }

    pub fn zeros(snapshot: ManifoldSnapshot) -> Self {
        Self { snapshot, coeffs: vec![0.0; snapshot.len()] }
    }

    pub fn constant(snapshot: ManifoldSnapshot, value: f64) -> Self {
        let mut f = Self::zeros(snapshot);
        f.coeffs[0] = value * snapshot.volume().sqrt();
        f
    }

    /// The normalized eigenfunction `φ_mode`.
    pub fn basis(snapshot: ManifoldSnapshot, mode: usize) -> Result<Self> {
        snapshot.check_mode(mode)?;
        let mut f = Self::zeros(snapshot);
        f.coeffs[mode] = 1.0;
        Ok(f)
    }

    pub fn snapshot(&self) -> &ManifoldSnapshot {
        &self.snapshot
    }

    pub fn coeffs(&self) -> &[f64] {
        &self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<f64> {
        self.coeffs
    }

    /// Replace the snapshot while keeping coefficients (layouts must agree).
    pub(crate) fn relabel(mut self, snapshot: ManifoldSnapshot) -> Self {
        debug_assert!(self.snapshot.same_layout(&snapshot));
        self.snapshot = snapshot;
        self
    }

    /// Multiply coefficient `k` by `m(k, λ_k)`.
    pub fn map_modes<F: Fn(usize, f64) -> f64>(&self, multiplier: F) -> Self {
        let lambdas = self.snapshot.eigenvalues();
        let coeffs = self
            .coeffs
            .iter()
            .zip(&lambdas)
            .enumerate()
            .map(|(k, (c, l))| c * multiplier(k, *l))
            .collect();
        Self { snapshot: self.snapshot, coeffs }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            snapshot: self.snapshot,
            coeffs: self.coeffs.iter().map(|c| c * s).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, |a, b| a - b)
    }

    fn zip_with<F: Fn(f64, f64) -> f64>(&self, other: &Self, f: F) -> Result<Self> {
        if !self.snapshot.same_manifold(&other.snapshot) {
            return Err(Error::SnapshotMismatch(
                "fields live on different manifolds".into(),
            ));
        }
        Ok(Self {
            snapshot: self.snapshot,
            coeffs: self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| f(*a, *b)).collect(),
        })
    }

    /// Remove the mean mode.
    pub fn mean_free(&self) -> Self {
        let mut f = self.clone();
        f.coeffs[0] = 0.0;
        f
    }

    /// `∫_M u`.
    pub fn integrate(&self) -> f64 {
        self.coeffs[0] * self.snapshot.volume().sqrt()
    }

    /// `ū = ∫_M u / |M|`.
    pub fn mean(&self) -> f64 {
        self.integrate() / self.snapshot.volume()
    }

    pub fn l2_norm_squared(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.l2_norm_squared().sqrt()
    }

    /// `Σ_{k≥1} √λ_k |u_k|²`.
    pub fn hm_seminorm_squared(&self) -> f64 {
        let lambdas = self.snapshot.eigenvalues();
        self.coeffs
            .iter()
            .zip(&lambdas)
            .skip(1)
            .map(|(c, l)| l.sqrt() * c * c)
            .sum()
    }

    pub fn hm_seminorm(&self) -> f64 {
        self.hm_seminorm_squared().sqrt()
    }

    pub fn hm_norm(&self) -> f64 {
        (self.l2_norm_squared() + self.hm_seminorm_squared()).sqrt()
    }

    /// Closed form of the K-method `H^{1/2}` norm: `((π/2) Σ √(1+λ_k)|u_k|²)^{1/2}`.
    pub fn h12_norm_closed(&self) -> f64 {
        let lambdas = self.snapshot.eigenvalues();
        let s: f64 = self
            .coeffs
            .iter()
            .zip(&lambdas)
            .map(|(c, l)| (1.0 + l).sqrt() * c * c)
            .sum();
        (0.5 * PI * s).sqrt()
    }

    /// `K(t, u)` for the couple `(L², H¹)`, evaluated at its minimizer.
    pub fn k_functional(&self, t: f64) -> Result<f64> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::Argument(format!("K-functional needs t > 0, got {t}")));
        }
        Ok(self.k_functional_squared(t).sqrt())
    }

    fn k_functional_squared(&self, t: f64) -> f64 {
        let lambdas = self.snapshot.eigenvalues();
        let t2 = t * t;
        self.coeffs
            .iter()
            .zip(&lambdas)
            .map(|(c, l)| {
                let a = t2 * (1.0 + l);
                a / (1.0 + a) * c * c
            })
            .sum()
    }

    /// `H^{1/2}` norm by numerical quadrature of `∫₀^∞ t^{-2} K(t,u)² dt`.
    ///
    /// Integrates in `s = ln t` over `[-40, 40]` with adaptive Gauss–Kronrod
    /// and adds the asymptotic tails `t₀‖u‖²_{H¹}` and `‖u‖²/t₁`.
    pub fn h12_norm_quadrature(&self) -> Result<f64> {
        let l2 = self.l2_norm_squared();
        if l2 == 0.0 {
            return Ok(0.0);
        }
        let (s_lo, s_hi) = (-40.0f64, 40.0f64);
        let pieces = 32;
        let width = (s_hi - s_lo) / pieces as f64;
        let mut total = 0.0;
        for i in 0..pieces {
            let a = s_lo + i as f64 * width;
            let part = integrate_adaptive(
                |s: f64| (-s).exp() * self.k_functional_squared(s.exp()),
                a,
                a + width,
                1e-16 * l2,
                1e-12,
            )?;
            total += part;
        }
        let lambdas = self.snapshot.eigenvalues();
        let h1: f64 = self
            .coeffs
            .iter()
            .zip(&lambdas)
            .map(|(c, l)| (1.0 + l) * c * c)
            .sum();
        total += s_lo.exp() * h1 + l2 * (-s_hi).exp();
        Ok(total.sqrt())
    }

    /// Point value at parameter `θ` (angle on the circle, colatitude on the sphere).
    pub fn evaluate(&self, theta: f64) -> f64 {
        let norm = self.snapshot.normalization();
        match self.snapshot.family() {
            Family::Circle => {
                let mut s = self.coeffs[0] / (2.0 * PI).sqrt();
                let inv = 1.0 / PI.sqrt();
                for k in 1..=self.snapshot.modes() {
                    let kt = k as f64 * theta;
                    s += inv * (self.coeffs[2 * k - 1] * kt.cos() + self.coeffs[2 * k] * kt.sin());
                }
                s * norm
            }
            Family::SphereZonal => self.evaluate_at_cos(theta.cos()),
        }
    }

    fn evaluate_at_cos(&self, x: f64) -> f64 {
        let p = legendre_all(self.snapshot.modes(), x);
        let s: f64 = self
            .coeffs
            .iter()
            .zip(&p)
            .enumerate()
            .map(|(l, (c, p))| c * p * ((2 * l + 1) as f64 / (4.0 * PI)).sqrt())
            .sum();
        s * self.snapshot.normalization()
    }

    pub fn synthesize(&self, grid_size: usize) -> Result<GridField> {
        synthesize(self, grid_size)
    }

    pub fn positive_part_integral(&self) -> f64 {
        positive_part_integral(self)
    }

    /// `‖u‖_{L∞}` of the band-limited function.
    pub fn sup_norm(&self) -> f64 {
        sup_norm(self)
    }

    pub fn max_value(&self) -> f64 {
        max_value(self)
    }

    pub fn min_value(&self) -> f64 {
        -max_value(&self.scale(-1.0))
    }
}

/// Point values of a field on the transform grid of its family.
#[derive(Debug, Clone, PartialEq)]
pub struct GridField {
    snapshot: ManifoldSnapshot,
    values: Vec<f64>,
}

impl GridField {
    pub fn new(snapshot: ManifoldSnapshot, values: Vec<f64>) -> Result<Self> {
        if values.len() < snapshot.min_grid() {
            return Err(Error::Aliasing { grid: values.len(), modes: snapshot.len() });
        }
        Ok(Self { snapshot, values })
    }

    pub fn snapshot(&self) -> &ManifoldSnapshot {
        &self.snapshot
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// Grid parameters: equispaced angles or Gauss–Legendre colatitudes.
    pub fn nodes(&self) -> Vec<f64> {
        grid_nodes(self.snapshot.family(), self.values.len())
    }

    pub fn analyze(&self) -> Result<SpectralField> {
        analyze(self)
    }
}

/// Parameter values of the transform grid with `size` points.
pub fn grid_nodes(family: Family, size: usize) -> Vec<f64> {
    match family {
        Family::Circle => (0..size).map(|j| 2.0 * PI * j as f64 / size as f64).collect(),
        Family::SphereZonal => {
            let (x, _) = gauss_legendre(size);
            x.iter().map(|x| x.acos()).collect()
        }
    }
}

pub fn synthesize(field: &SpectralField, grid_size: usize) -> Result<GridField> {
    let snap = *field.snapshot();
    let plan = SpectralTransform::new(snap.family(), snap.modes(), grid_size)?;
    let values = plan.synthesize(field.coeffs(), snap.radius());
    Ok(GridField { snapshot: snap, values })
}

pub fn analyze(grid: &GridField) -> Result<SpectralField> {
    let snap = grid.snapshot;
    let plan = SpectralTransform::new(snap.family(), snap.modes(), grid.values.len())?;
    let coeffs = plan.analyze(&grid.values, snap.radius());
    SpectralField::new(snap, coeffs)
}

/// Pseudospectral evaluation of `f(u)`: synthesize on a grid de-aliased for
/// polynomial degree `degree`, apply `f` pointwise, analyze and truncate.
pub fn pointwise_apply<F: Fn(f64) -> f64>(
    f: F,
    field: &SpectralField,
    degree: f64,
) -> Result<SpectralField> {
    let snap = *field.snapshot();
    let plan = SpectralTransform::new(snap.family(), snap.modes(), snap.dealiased_grid(degree))?;
    plan.apply(&f, field)
}

thread_local! {
    // rustfft planners cache plans, so sharing one per thread makes repeated
    // transforms of the same size cheap
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
    static LEGENDRE_TABLES: RefCell<HashMap<(usize, usize), LegendreTable>> = RefCell::new(HashMap::new());
}

type LegendreTable = (Arc<Vec<f64>>, Arc<Vec<f64>>);

/// Precomputed transform between coefficients and a grid.
///
/// Works with the unit-radius basis; the radius only enters through the
/// `r^{∓d/2}` normalization, so one plan serves every time of a dilation.
#[derive(Clone)]
pub struct SpectralTransform {
    family: Family,
    modes: usize,
    grid: usize,
    kind: TransformKind,
}

#[derive(Clone)]
enum TransformKind {
    Fourier {
        forward: Arc<dyn Fft<f64>>,
        inverse: Arc<dyn Fft<f64>>,
    },
    Legendre {
        /// `table[j * len + l] = ψ_l(x_j)`
        table: Arc<Vec<f64>>,
        /// `2π w_j`
        weights: Arc<Vec<f64>>,
    },
}

impl fmt::Debug for SpectralTransform {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralTransform")
            .field("family", &self.family)
            .field("modes", &self.modes)
            .field("grid", &self.grid)
            .finish()
    }
}

impl SpectralTransform {
    pub fn new(family: Family, modes: usize, grid: usize) -> Result<Self> {
        let len = match family {
            Family::Circle => 2 * modes + 1,
            Family::SphereZonal => modes + 1,
        };
        if grid < len {
            return Err(Error::Aliasing { grid, modes: len });
        }
        let kind = match family {
            Family::Circle => PLANNER.with(|planner| {
                let mut planner = planner.borrow_mut();
                TransformKind::Fourier {
                    forward: planner.plan_fft_forward(grid),
                    inverse: planner.plan_fft_inverse(grid),
                }
            }),
            Family::SphereZonal => LEGENDRE_TABLES.with(|cache| {
                let mut cache = cache.borrow_mut();
                let (table, weights) = cache
                    .entry((modes, grid))
                    .or_insert_with(|| {
                        let (x, w) = gauss_legendre(grid);
                        let mut table = Vec::with_capacity(grid * len);
                        for xj in &x {
                            let p = legendre_all(modes, *xj);
                            table.extend(
                                p.iter()
                                    .enumerate()
                                    .map(|(l, p)| p * ((2 * l + 1) as f64 / (4.0 * PI)).sqrt()),
                            );
                        }
                        let weights = w.iter().map(|w| 2.0 * PI * w).collect();
                        (Arc::new(table), Arc::new(weights))
                    })
                    .clone();
                TransformKind::Legendre { table, weights }
            }),
        };
        Ok(Self { family, modes, grid, kind })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn grid_size(&self) -> usize {
        self.grid
    }

    pub fn len(&self) -> usize {
        match self.family {
            Family::Circle => 2 * self.modes + 1,
            Family::SphereZonal => self.modes + 1,
        }
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    fn radius_factor(&self, radius: f64) -> f64 {
        radius.powf(-(self.family.dimension() as f64) / 2.0)
    }

    /// Coefficients → grid values on the manifold of the given radius.
    pub fn synthesize(&self, coeffs: &[f64], radius: f64) -> Vec<f64> {
        debug_assert_eq!(coeffs.len(), self.len());
        let norm = self.radius_factor(radius);
        match &self.kind {
            TransformKind::Fourier { inverse, .. } => {
                let g = self.grid;
                let mut buf = vec![Complex64::new(0.0, 0.0); g];
                buf[0] = Complex64::new(coeffs[0] / (2.0 * PI).sqrt(), 0.0);
                let inv = 1.0 / PI.sqrt();
                for k in 1..=self.modes {
                    let a = coeffs[2 * k - 1] * inv;
                    let b = coeffs[2 * k] * inv;
                    buf[k] += Complex64::new(0.5 * a, -0.5 * b);
                    buf[g - k] += Complex64::new(0.5 * a, 0.5 * b);
                }
                inverse.process(&mut buf);
                buf.iter().map(|z| z.re * norm).collect()
            }
            TransformKind::Legendre { table, .. } => {
                let len = self.len();
                table
                    .chunks_exact(len)
                    .map(|row| row.iter().zip(coeffs).map(|(p, c)| p * c).sum::<f64>() * norm)
                    .collect()
            }
        }
    }

    /// Grid values → coefficients (truncated to the plan's modes).
    pub fn analyze(&self, values: &[f64], radius: f64) -> Vec<f64> {
        debug_assert_eq!(values.len(), self.grid);
        let scale = 1.0 / self.radius_factor(radius);
        match &self.kind {
            TransformKind::Fourier { forward, .. } => {
                let g = self.grid;
                let mut buf: Vec<Complex64> =
                    values.iter().map(|v| Complex64::new(*v, 0.0)).collect();
                forward.process(&mut buf);
                let gf = g as f64;
                let mut out = Vec::with_capacity(self.len());
                out.push(buf[0].re / gf * (2.0 * PI).sqrt() * scale);
                let root_pi = PI.sqrt();
                for k in 1..=self.modes {
                    let c = buf[k] / gf;
                    out.push(2.0 * c.re * root_pi * scale);
                    out.push(-2.0 * c.im * root_pi * scale);
                }
                out
            }
            TransformKind::Legendre { table, weights } => {
                let len = self.len();
                let mut out = vec![0.0; len];
                for (row, (v, w)) in table.chunks_exact(len).zip(values.iter().zip(weights.iter())) {
                    let wv = w * v;
                    for (o, p) in out.iter_mut().zip(row) {
                        *o += wv * p;
                    }
                }
                out.iter_mut().for_each(|o| *o *= scale);
                out
            }
        }
    }

    /// Pseudospectral `f(u)` on this plan's grid.
    pub fn apply<F: Fn(f64) -> f64>(&self, f: &F, field: &SpectralField) -> Result<SpectralField> {
        let snap = *field.snapshot();
        let values = self.synthesize(field.coeffs(), snap.radius());
        let mut mapped = Vec::with_capacity(values.len());
        for v in values {
            let y = f(v);
            if !y.is_finite() {
                return Err(Error::Domain(format!("nonlinearity is not finite at u = {v}")));
            }
            mapped.push(y);
        }
        SpectralField::new(snap, self.analyze(&mapped, snap.radius()))
    }

    /// Galerkin matrix of multiplication by `g` (given on this grid):
    /// `M_ij = ⟨g φ_j, φ_i⟩` evaluated with the grid quadrature.
    ///
    /// This is exactly the Jacobian of `u ↦ analyze(f(synthesize(u)))` when
    /// `g = f'(u)` on the grid, and it is independent of the radius.
    pub fn multiplication_matrix(&self, g: &[f64]) -> DMatrix<f64> {
        debug_assert_eq!(g.len(), self.grid);
        let n = self.len();
        match &self.kind {
            TransformKind::Fourier { forward, .. } => {
                let grid = self.grid;
                let mut buf: Vec<Complex64> = g.iter().map(|v| Complex64::new(*v, 0.0)).collect();
                forward.process(&mut buf);
                let gf = grid as f64;
                // C_j = (1/G) Σ g cos(jθ), S_j = (1/G) Σ g sin(jθ), j taken mod G
                let c = |j: i64| {
                    let idx = j.rem_euclid(grid as i64) as usize;
                    buf[idx].re / gf
                };
                let s = |j: i64| {
                    let idx = j.rem_euclid(grid as i64) as usize;
                    -buf[idx].im / gf
                };
                let mut m = DMatrix::zeros(n, n);
                let r2 = std::f64::consts::SQRT_2;
                m[(0, 0)] = c(0);
                for l in 1..=self.modes as i64 {
                    let (ci, si) = (2 * l as usize - 1, 2 * l as usize);
                    m[(0, ci)] = r2 * c(l);
                    m[(ci, 0)] = r2 * c(l);
                    m[(0, si)] = r2 * s(l);
                    m[(si, 0)] = r2 * s(l);
                }
                for k in 1..=self.modes as i64 {
                    let (ck, sk) = (2 * k as usize - 1, 2 * k as usize);
                    for l in 1..=self.modes as i64 {
                        let (cl, sl) = (2 * l as usize - 1, 2 * l as usize);
                        m[(ck, cl)] = c(k - l) + c(k + l);
                        m[(sk, sl)] = c(k - l) - c(k + l);
                        m[(ck, sl)] = s(l + k) + s(l - k);
                        m[(sk, cl)] = s(k + l) + s(k - l);
                    }
                }
                m
            }
            TransformKind::Legendre { table, weights } => {
                let mut m = DMatrix::zeros(n, n);
                for (row, (gv, w)) in table.chunks_exact(n).zip(g.iter().zip(weights.iter())) {
                    let wg = w * gv;
                    for i in 0..n {
                        let a = wg * row[i];
                        for j in i..n {
                            m[(i, j)] += a * row[j];
                        }
                    }
                }
                for i in 0..n {
                    for j in 0..i {
                        m[(i, j)] = m[(j, i)];
                    }
                }
                m
            }
        }
    }
}

/// Scanning resolution used to bracket sign changes and extrema.
fn scan_size(snap: &ManifoldSnapshot) -> usize {
    round_up_smooth((16 * snap.len()).max(512))
}

/// Roots of the band-limited function inside `(a, b)` bracketing a sign change.
fn bisect<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64) -> f64 {
    let mut fa = f(a);
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if m <= a || m >= b {
            break;
        }
        let fm = f(m);
        if fm == 0.0 {
            return m;
        }
        if (fm > 0.0) == (fa > 0.0) {
            a = m;
            fa = fm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// `∫_M u⁺`.
///
/// Sign changes are bracketed on a fine grid and refined by bisection on the
/// band-limited function; `u` is then integrated exactly over each positive
/// interval using closed-form antiderivatives of the basis.
pub fn positive_part_integral(field: &SpectralField) -> f64 {
    let snap = *field.snapshot();
    let scan = scan_size(&snap);
    match snap.family() {
        Family::Circle => {
            let plan = SpectralTransform::new(Family::Circle, snap.modes(), scan)
                .expect("scan grid resolves the field");
            let v = plan.synthesize(field.coeffs(), snap.radius());
            let h = 2.0 * PI / scan as f64;
            let eval = |t: f64| field.evaluate(t);
            let mut roots = Vec::new();
            for j in 0..scan {
                let (a, b) = (v[j], v[(j + 1) % scan]);
                if a == 0.0 {
                    roots.push(j as f64 * h);
                } else if (a > 0.0) != (b > 0.0) && b != 0.0 {
                    roots.push(bisect(&eval, j as f64 * h, (j + 1) as f64 * h));
                }
            }
            let antideriv = |t: f64| circle_antiderivative(field, t);
            if roots.is_empty() {
                return if v[0] > 0.0 { field.integrate() } else { 0.0 };
            }
            let mut total = 0.0;
            for (i, &a) in roots.iter().enumerate() {
                let b = if i + 1 < roots.len() { roots[i + 1] } else { roots[0] + 2.0 * PI };
                if field.evaluate(0.5 * (a + b)) > 0.0 {
                    total += antideriv(b) - antideriv(a);
                }
            }
            total * snap.radius()
        }
        Family::SphereZonal => {
            let eval = |x: f64| field.evaluate_at_cos(x);
            let xs: Vec<f64> = (0..=scan)
                .map(|j| -1.0 + 2.0 * j as f64 / scan as f64)
                .collect();
            let vals: Vec<f64> = xs.iter().map(|x| eval(*x)).collect();
            let mut breaks = vec![-1.0];
            for j in 0..scan {
                let (a, b) = (vals[j], vals[j + 1]);
                if (a > 0.0) != (b > 0.0) && a != 0.0 && b != 0.0 {
                    breaks.push(bisect(&eval, xs[j], xs[j + 1]));
                }
            }
            breaks.push(1.0);
            let mut total = 0.0;
            for w in breaks.windows(2) {
                if eval(0.5 * (w[0] + w[1])) > 0.0 {
                    total += sphere_antiderivative(field, w[1]) - sphere_antiderivative(field, w[0]);
                }
            }
            total * 2.0 * PI * snap.radius() * snap.radius()
        }
    }
}

/// `∫₀^θ u(s) ds` in the angle variable.
fn circle_antiderivative(field: &SpectralField, theta: f64) -> f64 {
    let c = field.coeffs();
    let mut s = c[0] / (2.0 * PI).sqrt() * theta;
    let inv = 1.0 / PI.sqrt();
    for k in 1..=field.snapshot().modes() {
        let kf = k as f64;
        let kt = kf * theta;
        s += inv * (c[2 * k - 1] * kt.sin() / kf + c[2 * k] * (1.0 - kt.cos()) / kf);
    }
    s * field.snapshot().normalization()
}

/// `∫_{-1}^x u dx'` in the variable `x = cos θ`.
fn sphere_antiderivative(field: &SpectralField, x: f64) -> f64 {
    let n = field.snapshot().modes();
    let p = legendre_all(n + 1, x);
    let c = field.coeffs();
    let mut s = c[0] * (x + 1.0) * (1.0 / (4.0 * PI)).sqrt();
    for l in 1..=n {
        let lf = (2 * l + 1) as f64;
        s += c[l] * (lf / (4.0 * PI)).sqrt() * (p[l + 1] - p[l - 1]) / lf;
    }
    s * field.snapshot().normalization()
}

/// Maximum of `|u|`, located on a fine grid and polished by golden-section search.
pub fn sup_norm(field: &SpectralField) -> f64 {
    if field.coeffs().iter().all(|c| *c == 0.0) {
        return 0.0;
    }
    extreme(field, f64::abs)
}

/// Maximum of `u` over the manifold.
pub fn max_value(field: &SpectralField) -> f64 {
    extreme(field, |v| v)
}

/// Maximum of `g(u)` over the manifold.
fn extreme(field: &SpectralField, g: fn(f64) -> f64) -> f64 {
    let snap = *field.snapshot();
    let scan = scan_size(&snap);
    let (params, vals, eval): (Vec<f64>, Vec<f64>, Box<dyn Fn(f64) -> f64 + '_>) =
        match snap.family() {
            Family::Circle => {
                let plan = SpectralTransform::new(Family::Circle, snap.modes(), scan)
                    .expect("scan grid resolves the field");
                let v = plan.synthesize(field.coeffs(), snap.radius());
                let p = (0..scan).map(|j| 2.0 * PI * j as f64 / scan as f64).collect();
                (p, v, Box::new(move |t| g(field.evaluate(t))))
            }
            Family::SphereZonal => {
                let p: Vec<f64> = (0..=scan).map(|j| -1.0 + 2.0 * j as f64 / scan as f64).collect();
                let v = p.iter().map(|x| field.evaluate_at_cos(*x)).collect();
                (p, v, Box::new(move |x| g(field.evaluate_at_cos(x))))
            }
        };
    let mapped: Vec<f64> = vals.iter().map(|v| g(*v)).collect();
    let grid_max = mapped.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let spread = mapped.iter().cloned().fold(f64::INFINITY, f64::min);
    let cutoff = grid_max - 1e-3 * (grid_max - spread).abs().max(grid_max.abs());
    let h = params[1] - params[0];
    let mut best = grid_max;
    // polish every grid local maximum close to the global one
    let last = mapped.len() - 1;
    for j in 0..mapped.len() {
        if mapped[j] < cutoff {
            continue;
        }
        let (left, right) = match snap.family() {
            Family::Circle => (mapped[(j + last) % mapped.len()], mapped[(j + 1) % mapped.len()]),
            Family::SphereZonal => (mapped[j.saturating_sub(1)], mapped[(j + 1).min(last)]),
        };
        if mapped[j] < left || mapped[j] < right {
            continue;
        }
        let (lo, hi) = match snap.family() {
            Family::Circle => (params[j] - h, params[j] + h),
            Family::SphereZonal => ((params[j] - h).max(-1.0), (params[j] + h).min(1.0)),
        };
        best = best.max(golden_max(&eval, lo, hi));
    }
    best
}

fn golden_max<F: Fn(f64) -> f64>(f: &F, mut a: f64, mut b: f64) -> f64 {
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..80 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = f(d);
        }
    }
    fc.max(fd).max(f(a)).max(f(b))
}
