//! Prescribed uniform dilations `Γ(t) = r(t)/r₀ · Γ₀`.
//!
//! The flow map keeps the angular (or colatitude) parameter fixed, so the
//! velocity divergence `∇_Γ·w = d r'/r` is spatially constant and the
//! Jacobian of `Φ⁰_t` is `(r/r₀)^d`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::manifold::{Family, ManifoldSnapshot, SpectralField};
use crate::solver::Trajectory;

/// Radius as a function of time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RadiusLaw {
    Constant { r0: f64 },
    /// `r₀(1 + a t)`
    Linear { r0: f64, rate: f64 },
    /// `r₀(1 + a sin ωt)`
    Sinusoidal { r0: f64, amplitude: f64, omega: f64 },
}

impl RadiusLaw {
    pub fn r0(&self) -> f64 {
        match *self {
            RadiusLaw::Constant { r0 }
            | RadiusLaw::Linear { r0, .. }
            | RadiusLaw::Sinusoidal { r0, .. } => r0,
        }
    }

    pub fn radius(&self, t: f64) -> f64 {
        match *self {
            RadiusLaw::Constant { r0 } => r0,
            RadiusLaw::Linear { r0, rate } => r0 * (1.0 + rate * t),
            RadiusLaw::Sinusoidal { r0, amplitude, omega } => r0 * (1.0 + amplitude * (omega * t).sin()),
        }
    }

    pub fn velocity(&self, t: f64) -> f64 {
        match *self {
            RadiusLaw::Constant { .. } => 0.0,
            RadiusLaw::Linear { r0, rate } => r0 * rate,
            RadiusLaw::Sinusoidal { r0, amplitude, omega } => {
                r0 * amplitude * omega * (omega * t).cos()
            }
        }
    }

    pub fn is_static(&self) -> bool {
        match *self {
            RadiusLaw::Constant { .. } => true,
            RadiusLaw::Linear { rate, .. } => rate == 0.0,
            RadiusLaw::Sinusoidal { amplitude, omega, .. } => amplitude == 0.0 || omega == 0.0,
        }
    }

    /// Candidate times where `r` or `r'/r` may attain extrema on `[0, T]`.
    fn sinusoid_phases(omega: f64, horizon: f64, base: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0, horizon];
        if omega == 0.0 {
            return out;
        }
        let span = omega * horizon;
        let (lo, hi) = (span.min(0.0), span.max(0.0));
        for &phase in base {
            let k0 = ((lo - phase) / (2.0 * PI)).floor() as i64;
            let k1 = ((hi - phase) / (2.0 * PI)).ceil() as i64;
            for k in k0..=k1 {
                let p = phase + 2.0 * PI * k as f64;
                if p >= lo && p <= hi {
                    out.push(p / omega);
                }
            }
        }
        out
    }

    /// `(min, max)` of `r` on `[0, T]` in closed form.
    pub fn radius_range(&self, horizon: f64) -> (f64, f64) {
        let times = match *self {
            RadiusLaw::Constant { .. } | RadiusLaw::Linear { .. } => vec![0.0, horizon],
            RadiusLaw::Sinusoidal { omega, .. } => {
                Self::sinusoid_phases(omega, horizon, &[0.5 * PI, 1.5 * PI])
            }
        };
        times.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &t| {
            let r = self.radius(t);
            (lo.min(r), hi.max(r))
        })
    }

    /// `max_t |r'/r|` on `[0, T]` in closed form.
    pub fn max_log_rate(&self, horizon: f64) -> f64 {
        let times = match *self {
            RadiusLaw::Constant { .. } => return 0.0,
            RadiusLaw::Linear { .. } => vec![0.0, horizon],
            RadiusLaw::Sinusoidal { amplitude, omega, .. } => {
                // d/dφ [cos φ / (1 + a sin φ)] = 0  ⇔  sin φ = -a
                let s = (-amplitude).clamp(-1.0, 1.0).asin();
                Self::sinusoid_phases(omega, horizon, &[s, PI - s])
            }
        };
        times
            .iter()
            .map(|&t| (self.velocity(t) / self.radius(t)).abs())
            .fold(0.0, f64::max)
    }
}

/// The evolving surface together with its time horizon.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvolvingGeometry {
    family: Family,
    law: RadiusLaw,
    horizon: f64,
    r_min: f64,
    r_max: f64,
}

impl EvolvingGeometry {
    pub fn new(family: Family, law: RadiusLaw, horizon: f64) -> Result<Self> {
        if !(horizon.is_finite() && horizon > 0.0) {
            return Err(Error::Argument(format!("horizon must be positive, got {horizon}")));
        }
        if !(law.r0().is_finite() && law.r0() > 0.0) {
            return Err(Error::Argument(format!("r0 must be positive, got {}", law.r0())));
        }
        let (r_min, r_max) = law.radius_range(horizon);
        if !(r_min > 0.0) {
            return Err(Error::Argument(format!(
                "radius law reaches r = {r_min} on [0, {horizon}]; the surface must stay nondegenerate"
            )));
        }
        Ok(Self { family, law, horizon, r_min, r_max })
    }

    pub fn stationary(family: Family, r0: f64, horizon: f64) -> Result<Self> {
        Self::new(family, RadiusLaw::Constant { r0 }, horizon)
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn law(&self) -> RadiusLaw {
        self.law
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn dimension(&self) -> usize {
        self.family.dimension()
    }

    pub fn r0(&self) -> f64 {
        self.law.r0()
    }

    pub fn radius(&self, t: f64) -> f64 {
        self.law.radius(t)
    }

    pub fn radius_bounds(&self) -> (f64, f64) {
        (self.r_min, self.r_max)
    }

    pub fn is_static(&self) -> bool {
        self.law.is_static()
    }

    fn check_time(&self, t: f64) -> Result<()> {
        // allow round-off at the end of a time grid
        if t < -1e-12 * self.horizon || t > self.horizon * (1.0 + 1e-12) || !t.is_finite() {
            Err(Error::Range { t, horizon: self.horizon })
        } else {
            Ok(())
        }
    }

    pub fn snapshot_at(&self, t: f64, modes: usize) -> Result<ManifoldSnapshot> {
        self.check_time(t)?;
        ManifoldSnapshot::new(self.family, self.radius(t), modes)
    }

    pub fn node(&self, t: f64, modes: usize) -> Result<TimeNode> {
        Ok(TimeNode { t, snapshot: self.snapshot_at(t, modes)? })
    }

    /// `∇_Γ·w(t) = d r'(t)/r(t)`.
    pub fn div_w(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(self.dimension() as f64 * self.law.velocity(t) / self.law.radius(t))
    }

    /// `J⁰_t = det DΦ⁰_t = (r(t)/r₀)^d`.
    pub fn jacobian(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok((self.radius(t) / self.r0()).powi(self.dimension() as i32))
    }

    /// `C = max_t |∇_Γ·w|`, also the shift `λ` of the weak maximum principle.
    pub fn div_bound(&self) -> f64 {
        self.dimension() as f64 * self.law.max_log_rate(self.horizon)
    }

    /// `(A_λ)` floor `min_t λ₁(t) = c_d / max_t r(t)²`.
    pub fn eigenvalue_floor(&self) -> f64 {
        self.family.first_eigenvalue_constant() / (self.r_max * self.r_max)
    }

    /// `λ₁(t)`.
    pub fn first_eigenvalue(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        let r = self.radius(t);
        Ok(self.family.first_eigenvalue_constant() / (r * r))
    }

    /// `|Γ(t)|`.
    pub fn area(&self, t: f64) -> Result<f64> {
        self.check_time(t)?;
        Ok(self.family.unit_volume() * self.radius(t).powi(self.dimension() as i32))
    }

    /// Coefficient factor `(r/r₀)^{d/2}` taking `Γ₀` coefficients to `Γ(t)`.
    fn coefficient_factor(&self, t: f64) -> f64 {
        (self.radius(t) / self.r0()).powf(self.dimension() as f64 / 2.0)
    }

    /// `φ_t u = u ∘ Φ^t_0`: same parameter values on `Γ(t)`.
    pub fn pushforward(&self, t: f64, field: &SpectralField) -> Result<SpectralField> {
        self.check_time(t)?;
        let snap = field.snapshot();
        let expected = self.snapshot_at(0.0, snap.modes())?;
        if snap.family() != self.family || !same_radius(snap.radius(), expected.radius()) {
            return Err(Error::SnapshotMismatch(format!(
                "pushforward expects a field on Γ₀ (r = {}), got r = {}",
                expected.radius(),
                snap.radius()
            )));
        }
        let target = self.snapshot_at(t, snap.modes())?;
        Ok(field.scale(self.coefficient_factor(t)).relabel(target))
    }

    /// `φ_{-t} u = u ∘ Φ^0_t`: back to `Γ₀`.
    pub fn pullback(&self, t: f64, field: &SpectralField) -> Result<SpectralField> {
        self.check_time(t)?;
        let snap = field.snapshot();
        let expected = self.snapshot_at(t, snap.modes())?;
        if snap.family() != self.family || !same_radius(snap.radius(), expected.radius()) {
            return Err(Error::SnapshotMismatch(format!(
                "pullback at t = {t} expects a field on Γ(t) (r = {}), got r = {}",
                expected.radius(),
                snap.radius()
            )));
        }
        let target = self.snapshot_at(0.0, snap.modes())?;
        Ok(field.scale(1.0 / self.coefficient_factor(t)).relabel(target))
    }

    /// Discrete residual of the transport identity
    /// `∫₀ᵀ⟨u̇, f(u)⟩ = ∫_{Γ(T)}F(u(T)) − ∫_{Γ₀}F(u₀) − ∫₀ᵀ∫_{Γ(t)}F(u)∇_Γ·w`.
    ///
    /// The material derivative is a backward difference of pulled-back
    /// fields and all time integrals use the right endpoint, so the residual
    /// is `O(Δt)` on smooth trajectories.
    pub fn transport_residual<Fs, Fa>(&self, trajectory: &Trajectory, f: Fs, antiderivative: Fa) -> Result<f64>
    where
        Fs: Fn(f64) -> f64,
        Fa: Fn(f64) -> f64,
    {
        let times = trajectory.times();
        let fields = trajectory.fields();
        if times.len() < 2 {
            return Err(Error::Argument(
                "transport residual needs at least two trajectory nodes".into(),
            ));
        }
        let integral_of_f = |u: &SpectralField| -> Result<f64> {
            Ok(crate::manifold::pointwise_apply(&antiderivative, u, 4.0)?.integrate())
        };
        let mut lhs = 0.0;
        let mut div_term = 0.0;
        for n in 0..times.len() - 1 {
            let (t0, t1) = (times[n], times[n + 1]);
            let prev = self.pullback(t0, &fields[n])?;
            let next = self.pullback(t1, &fields[n + 1])?;
            let f_next = crate::manifold::pointwise_apply(&f, &next, 4.0)?;
            let diff = next.sub(&prev)?;
            let inner: f64 = diff.coeffs().iter().zip(f_next.coeffs()).map(|(a, b)| a * b).sum();
            lhs += inner * self.jacobian(t1)?;
            div_term += (t1 - t0) * self.div_w(t1)? * integral_of_f(&fields[n + 1])?;
        }
        let last = fields.len() - 1;
        let rhs = integral_of_f(&fields[last])? - integral_of_f(&fields[0])? - div_term;
        Ok(lhs - rhs)
    }
}

fn same_radius(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-12 * a.abs().max(b.abs())
}

/// A time together with the manifold at that time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeNode {
    pub t: f64,
    pub snapshot: ManifoldSnapshot,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quadrature::integrate_adaptive;
    use crate::random::random_field;
    use approx::assert_relative_eq;

    fn circle(law: RadiusLaw) -> EvolvingGeometry {
        EvolvingGeometry::new(Family::Circle, law, 1.0).unwrap()
    }

    #[test]
    fn snapshot_examples() {
        let g = circle(RadiusLaw::Constant { r0: 1.0 });
        assert_eq!(g.snapshot_at(0.7, 4).unwrap().radius(), 1.0);
        let g = circle(RadiusLaw::Linear { r0: 1.0, rate: 0.5 });
        assert_relative_eq!(g.snapshot_at(1.0, 4).unwrap().radius(), 1.5);
        let g = circle(RadiusLaw::Sinusoidal { r0: 1.0, amplitude: 0.1, omega: 2.0 * PI });
        assert_relative_eq!(g.snapshot_at(0.25, 4).unwrap().radius(), 1.1, epsilon = 1e-15);
        assert!(matches!(g.snapshot_at(1.5, 4), Err(Error::Range { .. })));
    }

    #[test]
    fn divergence_and_jacobian_examples() {
        let g = circle(RadiusLaw::Constant { r0: 2.0 });
        assert_eq!(g.div_w(0.3).unwrap(), 0.0);
        assert_eq!(g.jacobian(0.3).unwrap(), 1.0);
        let g = circle(RadiusLaw::Linear { r0: 1.0, rate: 1.0 });
        assert_eq!(g.div_w(0.0).unwrap(), 1.0);
        let s = EvolvingGeometry::new(Family::SphereZonal, RadiusLaw::Linear { r0: 1.0, rate: 1.0 }, 1.0)
            .unwrap();
        assert_eq!(s.div_w(0.0).unwrap(), 2.0);
        assert_relative_eq!(s.jacobian(1.0).unwrap(), 4.0);
        assert_eq!(s.jacobian(0.0).unwrap(), 1.0);
    }

    #[test]
    fn degenerate_law_is_rejected() {
        let bad = EvolvingGeometry::new(Family::Circle, RadiusLaw::Linear { r0: 1.0, rate: -1.0 }, 1.0);
        assert!(bad.is_err());
        let bad = EvolvingGeometry::new(
            Family::Circle,
            RadiusLaw::Sinusoidal { r0: 1.0, amplitude: 1.0, omega: 2.0 * PI },
            1.0,
        );
        assert!(bad.is_err());
    }

    #[test]
    fn eigenvalue_floor_matches_sampled_minimum() {
        for law in [
            RadiusLaw::Linear { r0: 1.0, rate: 0.5 },
            RadiusLaw::Linear { r0: 2.0, rate: -0.3 },
            RadiusLaw::Sinusoidal { r0: 1.0, amplitude: 0.2, omega: 3.0 },
        ] {
            for family in [Family::Circle, Family::SphereZonal] {
                let g = EvolvingGeometry::new(family, law, 2.0).unwrap();
                let sampled = (0..=20000)
                    .map(|i| g.first_eigenvalue(2.0 * i as f64 / 20000.0).unwrap())
                    .fold(f64::INFINITY, f64::min);
                let (_, r_max) = g.radius_bounds();
                assert_eq!(g.eigenvalue_floor(), family.first_eigenvalue_constant() / (r_max * r_max));
                assert!(g.eigenvalue_floor() <= sampled + 1e-15);
                assert!(sampled - g.eigenvalue_floor() < 1e-8);
            }
        }
    }

    #[test]
    fn divergence_bound_matches_sampling() {
        for law in [
            RadiusLaw::Linear { r0: 1.0, rate: 0.5 },
            RadiusLaw::Sinusoidal { r0: 1.0, amplitude: 0.4, omega: 5.0 },
            RadiusLaw::Sinusoidal { r0: 1.0, amplitude: -0.3, omega: 1.0 },
        ] {
            let g = EvolvingGeometry::new(Family::SphereZonal, law, 1.5).unwrap();
            let sampled = (0..=30000)
                .map(|i| g.div_w(1.5 * i as f64 / 30000.0).unwrap().abs())
                .fold(0.0, f64::max);
            assert!(g.div_bound() >= sampled - 1e-12);
            assert!(g.div_bound() - sampled < 1e-6);
        }
    }

    #[test]
    fn area_growth_is_integral_of_divergence() {
        for law in [
            RadiusLaw::Constant { r0: 1.0 },
            RadiusLaw::Linear { r0: 1.0, rate: 0.7 },
            RadiusLaw::Sinusoidal { r0: 1.5, amplitude: 0.3, omega: 4.0 },
        ] {
            for family in [Family::Circle, Family::SphereZonal] {
                let g = EvolvingGeometry::new(family, law, 1.0).unwrap();
                for &t in &[0.3, 0.8, 1.0] {
                    let lhs = g.area(t).unwrap() - g.area(0.0).unwrap();
                    let rhs = integrate_adaptive(
                        |s| g.div_w(s).unwrap() * g.area(s).unwrap(),
                        0.0,
                        t,
                        1e-14,
                        1e-12,
                    )
                    .unwrap();
                    assert!((lhs - rhs).abs() <= 1e-8 * g.area(t).unwrap());
                }
            }
        }
    }

    #[test]
    fn push_pull_examples() {
        let g = circle(RadiusLaw::Linear { r0: 1.0, rate: 1.0 });
        let s0 = g.snapshot_at(0.0, 6).unwrap();
        let f = random_field(s0, 4, 1.0);
        assert_eq!(g.pushforward(0.0, &f).unwrap().coeffs(), f.coeffs());
        // constant c on radius 2 is still c; mode-0 coefficient grows by √2
        let c = SpectralField::constant(s0, 3.0);
        let pushed = g.pushforward(1.0, &c).unwrap();
        assert_eq!(pushed.snapshot().radius(), 2.0);
        assert_relative_eq!(pushed.mean(), 3.0, epsilon = 1e-14);
        assert_relative_eq!(pushed.coeffs()[0], c.coeffs()[0] * 2f64.sqrt(), epsilon = 1e-14);
        let back = g.pullback(0.6, &g.pushforward(0.6, &f).unwrap()).unwrap();
        let err = back
            .coeffs()
            .iter()
            .zip(f.coeffs())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(err < 1e-14);
        assert!(matches!(g.pullback(0.5, &f), Err(Error::SnapshotMismatch(_))));
    }

    #[test]
    fn pushforward_preserves_point_values() {
        let g = EvolvingGeometry::new(
            Family::SphereZonal,
            RadiusLaw::Sinusoidal { r0: 1.0, amplitude: 0.3, omega: 2.0 },
            1.0,
        )
        .unwrap();
        let f = random_field(g.snapshot_at(0.0, 8).unwrap(), 8, 1.0);
        let p = g.pushforward(0.7, &f).unwrap();
        for &th in &[0.1, 1.0, 2.5] {
            assert_relative_eq!(p.evaluate(th), f.evaluate(th), epsilon = 1e-13);
        }
    }
}
