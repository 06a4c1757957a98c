//! Harmonic extensions into the cylinder `M × [0, ∞)` and the truncated
//! cylinder `M × [0, R]`, their Dirichlet-to-Neumann maps, and the decay
//! estimates comparing the two.
//!
//! Extensions are symbolic: boundary coefficients plus a closed-form
//! profile per mode. Writing `z = √λ_k` and `x = zR`:
//!
//! | mode       | full cylinder | truncated at `R`            |
//! |------------|---------------|-----------------------------|
//! | mean       | `1`           | `(R − y)/R`                 |
//! | `λ_k > 0`  | `e^{−zy}`     | `sinh(z(R − y))/sinh(x)`    |
//!
//! Truncated profiles are zero-extended past `y = R`.

use crate::error::{Error, Result};
use crate::manifold::{SpectralField, SpectralTransform};
use crate::quadrature::richardson;

/// Which cylinder an extension lives on.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Cylinder {
    Full,
    Truncated(f64),
}

impl Cylinder {
    pub fn truncated(r: f64) -> Result<Self> {
        if !(r > 0.0 && r.is_finite()) {
            return Err(Error::Argument(format!("truncation height must be positive, got {r}")));
        }
        Ok(Cylinder::Truncated(r))
    }

    fn validate(self) -> Result<Self> {
        match self {
            Cylinder::Full => Ok(self),
            Cylinder::Truncated(r) => Self::truncated(r),
        }
    }
}

/// `f(x) = coth(x)/2 − x/(2 sinh²x) = (sinh 2x − 2x)/(4 sinh²x)`.
fn sinh_square_ratio(x: f64) -> f64 {
    if x < 1e-3 {
        x / 3.0 - 2.0 * x.powi(3) / 45.0
    } else if x > 350.0 {
        0.5
    } else {
        let s = x.sinh();
        0.5 / x.tanh() - 0.5 * x / (s * s)
    }
}

/// Coefficients `(α₁, α₂)` of the truncated profile
/// `α₁ e^{√λ y} + α₂ e^{−√λ y}` obtained by separation of variables.
pub fn sinh_profile_coefficients(lambda: f64, r: f64) -> (f64, f64) {
    let x = lambda.sqrt() * r;
    let denom = x.exp() - (-x).exp();
    (-(-x).exp() / denom, x.exp() / denom)
}

/// Value of the mode profile at height `y`.
pub fn profile(lambda: f64, cylinder: Cylinder, y: f64) -> f64 {
    match cylinder {
        Cylinder::Full => {
            if lambda == 0.0 {
                1.0
            } else {
                (-lambda.sqrt() * y).exp()
            }
        }
        Cylinder::Truncated(r) => {
            if y > r {
                return 0.0;
            }
            if lambda == 0.0 {
                return (r - y) / r;
            }
            // sinh(z(R−y))/sinh(zR) = e^{−zy}(1 − e^{−2z(R−y)})/(1 − e^{−2zR})
            let z = lambda.sqrt();
            (-z * y).exp() * (-(-2.0 * z * (r - y)).exp_m1()) / (-(-2.0 * z * r).exp_m1())
        }
    }
}

/// `∂_y` of the mode profile.
pub fn profile_derivative(lambda: f64, cylinder: Cylinder, y: f64) -> f64 {
    match cylinder {
        Cylinder::Full => {
            if lambda == 0.0 {
                0.0
            } else {
                let z = lambda.sqrt();
                -z * (-z * y).exp()
            }
        }
        Cylinder::Truncated(r) => {
            if y > r {
                return 0.0;
            }
            if lambda == 0.0 {
                return -1.0 / r;
            }
            // −z cosh(z(R−y))/sinh(zR)
            let z = lambda.sqrt();
            -z * (-z * y).exp() * (1.0 + (-2.0 * z * (r - y)).exp()) / (-(-2.0 * z * r).exp_m1())
        }
    }
}

/// DtN multiplier `−∂_y p(0)` for a mode with eigenvalue `lambda`.
pub fn dtn_multiplier(lambda: f64, cylinder: Cylinder) -> f64 {
    match cylinder {
        Cylinder::Full => lambda.sqrt(),
        Cylinder::Truncated(r) => {
            if lambda == 0.0 {
                1.0 / r
            } else {
                let z = lambda.sqrt();
                z / (z * r).tanh()
            }
        }
    }
}

/// A harmonic (full or truncated) extension of boundary data.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtensionField {
    boundary: SpectralField,
    kind: Cylinder,
}

/// `Ēu`: the harmonic extension into the semi-infinite cylinder.
pub fn extend_full(u: &SpectralField) -> ExtensionField {
    ExtensionField { boundary: u.clone(), kind: Cylinder::Full }
}

/// `Ē_R u`: the harmonic extension vanishing at `y = R`.
pub fn extend_truncated(u: &SpectralField, r: f64) -> Result<ExtensionField> {
    Ok(ExtensionField { boundary: u.clone(), kind: Cylinder::truncated(r)? })
}

impl ExtensionField {
    pub fn new(boundary: SpectralField, kind: Cylinder) -> Result<Self> {
        Ok(Self { boundary, kind: kind.validate()? })
    }

    pub fn boundary(&self) -> &SpectralField {
        &self.boundary
    }

    pub fn kind(&self) -> Cylinder {
        self.kind
    }

    /// Trace at height `y` (zero past `R` for truncated extensions).
    pub fn evaluate_at_height(&self, y: f64) -> Result<SpectralField> {
        if !(y >= 0.0) {
            return Err(Error::Argument(format!("height must be nonnegative, got {y}")));
        }
        let kind = self.kind;
        Ok(self.boundary.map_modes(|_, l| profile(l, kind, y)))
    }

    /// `∂_y` of the extension at height `y`.
    pub fn derivative_at_height(&self, y: f64) -> Result<SpectralField> {
        if !(y >= 0.0) {
            return Err(Error::Argument(format!("height must be nonnegative, got {y}")));
        }
        let kind = self.kind;
        Ok(self.boundary.map_modes(|_, l| profile_derivative(l, kind, y)))
    }

    /// `‖∇_ḡ v‖²_{L²}` over the cylinder.
    pub fn grad_energy(&self) -> f64 {
        let lambdas = self.boundary.snapshot().eigenvalues();
        let c = self.boundary.coeffs();
        match self.kind {
            Cylinder::Full => self.boundary.hm_seminorm_squared(),
            Cylinder::Truncated(r) => {
                let modes: f64 = c
                    .iter()
                    .zip(&lambdas)
                    .skip(1)
                    .map(|(c, l)| dtn_multiplier(*l, self.kind) * c * c)
                    .sum();
                modes + c[0] * c[0] / r
            }
        }
    }

    /// `‖v‖²_{L²}` over the cylinder.
    ///
    /// The full extension of data with nonzero mean is not square
    /// integrable, which is reported as a domain error.
    pub fn l2_norm_squared(&self) -> Result<f64> {
        let lambdas = self.boundary.snapshot().eigenvalues();
        let c = self.boundary.coeffs();
        match self.kind {
            Cylinder::Full => {
                let scale = self.boundary.l2_norm().max(f64::MIN_POSITIVE);
                if c[0].abs() > 1e-14 * scale {
                    return Err(Error::Domain(format!(
                        "full extension of data with mean {} is not square integrable on the infinite cylinder",
                        self.boundary.mean()
                    )));
                }
                Ok(c.iter().zip(&lambdas).skip(1).map(|(c, l)| c * c / (2.0 * l.sqrt())).sum())
            }
            Cylinder::Truncated(r) => {
                let modes: f64 = c
                    .iter()
                    .zip(&lambdas)
                    .skip(1)
                    .map(|(c, l)| {
                        let z = l.sqrt();
                        sinh_square_ratio(z * r) / z * c * c
                    })
                    .sum();
                Ok(modes + r * c[0] * c[0] / 3.0)
            }
        }
    }

    /// `‖v‖_{X(C)} = (‖∇v‖² + ‖trace v‖²)^{1/2}`.
    pub fn x_norm(&self) -> f64 {
        (self.grad_energy() + self.boundary.l2_norm_squared()).sqrt()
    }
}

/// `−∂_y v|_{y=0}` for the extension on the given cylinder.
pub fn dtn(u: &SpectralField, cylinder: Cylinder) -> Result<SpectralField> {
    let cylinder = cylinder.validate()?;
    Ok(u.map_modes(|_, l| dtn_multiplier(l, cylinder)))
}

/// Supported fractional orders of `(−Δ_M)^s`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FractionalOrder {
    Quarter,
    Half,
}

impl FractionalOrder {
    pub fn exponent(self) -> f64 {
        match self {
            FractionalOrder::Quarter => 0.25,
            FractionalOrder::Half => 0.5,
        }
    }

    pub fn from_exponent(s: f64) -> Result<Self> {
        if s == 0.25 {
            Ok(FractionalOrder::Quarter)
        } else if s == 0.5 {
            Ok(FractionalOrder::Half)
        } else {
            Err(Error::Argument(format!("fractional exponent {s} is not supported (use 1/4 or 1/2)")))
        }
    }
}

/// `(−Δ_M)^s u` with multiplier `λ_k^s`.
pub fn fractional_laplacian(u: &SpectralField, order: FractionalOrder) -> SpectralField {
    let s = order.exponent();
    u.map_modes(|_, l| if l == 0.0 { 0.0 } else { l.powf(s) })
}

/// `⟨(−Δ_M)^{1/2}u, v⟩ = Σ_{k≥1} √λ_k u_k v_k`.
pub fn duality_pairing(u: &SpectralField, v: &SpectralField) -> Result<f64> {
    if u.snapshot() != v.snapshot() {
        return Err(Error::SnapshotMismatch("pairing of fields on different manifolds".into()));
    }
    let lambdas = u.snapshot().eigenvalues();
    Ok(u.coeffs()
        .iter()
        .zip(v.coeffs())
        .zip(&lambdas)
        .skip(1)
        .map(|((a, b), l)| l.sqrt() * a * b)
        .sum())
}

/// Exact value and a-priori bound of `‖∇(Ēu − 𝒵_R Ē_R u)‖²_{L²(C)}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GapEstimate {
    pub exact: f64,
    pub bound: f64,
}

/// Gradient gap between the full extension and the zero-extended truncated one.
///
/// Per mode the difference on `[0, R]` is `e^{−x} sinh(zy)/sinh(x)`; its
/// energy plus the tail `∫_R^∞` of the full profile sums to
/// `2z/(e^{2x} − 1)`. The mean mode contributes `|M|ū²/R`.
pub fn decay_gap(u: &SpectralField, r: f64) -> Result<GapEstimate> {
    Cylinder::truncated(r)?;
    let snap = u.snapshot();
    let lambdas = snap.eigenvalues();
    let c = u.coeffs();
    let exact_modes: f64 = c
        .iter()
        .zip(&lambdas)
        .skip(1)
        .map(|(c, l)| {
            let z = l.sqrt();
            2.0 * z / (2.0 * z * r).exp_m1() * c * c
        })
        .sum();
    let mean_part = c[0] * c[0] / r;
    let root_l1 = snap.first_eigenvalue().sqrt();
    let fluct = u.mean_free();
    let bound = 3.0 * (-r * root_l1).exp() * fluct.hm_seminorm_squared()
        + 2.0 / r * (-2.0 * r * root_l1).exp() * fluct.l2_norm_squared()
        + 2.0 * mean_part;
    Ok(GapEstimate { exact: exact_modes + mean_part, bound })
}

/// Exact value and bound of `‖𝒵_R E_R u − E u‖²_{L²(C)}` for mean-free `u`.
///
/// The Poincaré constant in the bound is the spectral value `1/λ₁`.
pub fn truncation_l2_gap(u: &SpectralField, r: f64) -> Result<GapEstimate> {
    Cylinder::truncated(r)?;
    check_mean_free(u)?;
    let snap = u.snapshot();
    let lambdas = snap.eigenvalues();
    let exact: f64 = u
        .coeffs()
        .iter()
        .zip(&lambdas)
        .skip(1)
        .map(|(c, l)| truncation_l2_mode(*l, r) * c * c)
        .sum();
    let l1 = snap.first_eigenvalue();
    let root_l1 = l1.sqrt();
    let poincare = 1.0 / l1;
    let bound = poincare
        * (3.0 * (-r * root_l1).exp() * u.hm_seminorm_squared()
            + 2.0 / r * (-2.0 * r * root_l1).exp() * u.l2_norm_squared())
        + (-2.0 * r * root_l1).exp() / (2.0 * root_l1) * u.l2_norm_squared();
    Ok(GapEstimate { exact, bound })
}

/// `∫₀^∞ (𝒵_R p_R − e^{−zy})² dy` for one mode.
fn truncation_l2_mode(lambda: f64, r: f64) -> f64 {
    let z = lambda.sqrt();
    let x = z * r;
    // on [0, R] the difference is e^{−x} sinh(zy)/sinh(x); past R it is the full profile
    let inside = (-2.0 * x).exp() * sinh_square_ratio(x) / z;
    let tail = (-2.0 * x).exp() / (2.0 * z);
    inside + tail
}

/// `‖𝒵_R E_R(s·u) − E u‖²_{L²(C)}` for mean-free `u` (continuous convergence with `u_R = s·u`).
pub fn scaled_truncation_l2_gap(u: &SpectralField, r: f64, scale: f64) -> Result<f64> {
    Cylinder::truncated(r)?;
    check_mean_free(u)?;
    let lambdas = u.snapshot().eigenvalues();
    let eps = scale - 1.0;
    Ok(u.coeffs()
        .iter()
        .zip(&lambdas)
        .skip(1)
        .map(|(c, l)| {
            let z = l.sqrt();
            let x = z * r;
            // s p − e = ε p − d with d = e − p on [0, R]
            let pp = sinh_square_ratio(x) / z;
            let dd = (-2.0 * x).exp() * sinh_square_ratio(x) / z;
            let s = x.sinh();
            let pd = if x > 350.0 {
                0.0
            } else {
                (-x).exp() * (x * x.cosh() - s) / (2.0 * z * s * s)
            };
            let tail = (-2.0 * x).exp() / (2.0 * z);
            (eps * eps * pp - 2.0 * eps * pd + dd + tail) * c * c
        })
        .sum())
}

fn check_mean_free(u: &SpectralField) -> Result<()> {
    let scale = u.l2_norm().max(f64::MIN_POSITIVE);
    if u.coeffs()[0].abs() > 1e-14 * scale {
        Err(Error::Domain(format!("expected mean-free data, mean is {}", u.mean())))
    } else {
        Ok(())
    }
}

/// Largest `|∂²_y v + Δ_M v|` of the extension sampled on `thetas × heights`.
///
/// `Δ_M` is applied spectrally; `∂²_y` uses the fourth-order central
/// stencil with spacing `h` on the closed-form profiles.
pub fn harmonic_residual(ext: &ExtensionField, thetas: usize, heights: &[f64], h: f64) -> Result<f64> {
    let snap = *ext.boundary().snapshot();
    let plan = SpectralTransform::new(snap.family(), snap.modes(), thetas.max(snap.min_grid()))?;
    let mut worst = 0.0f64;
    for &y in heights {
        if y - 2.0 * h < 0.0 {
            return Err(Error::Argument(format!("stencil at y = {y} leaves the cylinder")));
        }
        let sample = |yy: f64| -> Result<Vec<f64>> {
            Ok(plan.synthesize(ext.evaluate_at_height(yy)?.coeffs(), snap.radius()))
        };
        let (m2, m1, c0, p1, p2) = (
            sample(y - 2.0 * h)?,
            sample(y - h)?,
            sample(y)?,
            sample(y + h)?,
            sample(y + 2.0 * h)?,
        );
        let lap = plan.synthesize(
            ext.evaluate_at_height(y)?.map_modes(|_, l| -l).coeffs(),
            snap.radius(),
        );
        for j in 0..c0.len() {
            let vyy = (-m2[j] + 16.0 * m1[j] - 30.0 * c0[j] + 16.0 * p1[j] - p2[j]) / (12.0 * h * h);
            worst = worst.max((vyy + lap[j]).abs());
        }
    }
    Ok(worst)
}

/// `−∂_y v(0)` by one-sided differences `−(v(h) − v(0))/h` and Richardson
/// extrapolation over `levels` halvings of `h0`.
pub fn dtn_finite_difference(ext: &ExtensionField, h0: f64, levels: usize) -> Result<SpectralField> {
    let base = ext.evaluate_at_height(0.0)?;
    let snap = *base.snapshot();
    let coeffs = richardson(
        |h| {
            let up = ext.evaluate_at_height(h).expect("h > 0");
            up.coeffs()
                .iter()
                .zip(base.coeffs())
                .map(|(a, b)| -(a - b) / h)
                .collect()
        },
        h0,
        levels,
        1,
    );
    SpectralField::new(snap, coeffs)
}
