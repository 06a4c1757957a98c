//! The porous-medium nonlinearity `Ψ(r) = |r|^{m−1} r`, a smooth
//! non-degenerate regularization `Ψ_k`, validated user nonlinearities, the
//! antiderivatives `H = ∫Ψ` and `G = ∫Ψ⁻¹`, and the height truncation.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::quadrature::integrate_adaptive;

/// A shareable scalar map.
pub type ScalarMap = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// Number of points of the validation grid on `[−A, A]`.
pub const VALIDATION_POINTS: usize = 10_000;

const QUAD_TOL: f64 = 1e-12;

/// Regularized power law
/// `Ψ_k(r) = (r² + δ²)^{(m−1)/2} r + c r` with `δ = 1/k` and `c ≤ 1/k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Regularized {
    pub m: f64,
    pub k: f64,
    pub working_interval: f64,
    pub delta: f64,
    pub linear: f64,
    /// Realized `1/C_k = min Ψ_k′` on the validation grid.
    pub min_slope: f64,
    pub max_slope: f64,
    /// `|Ψ_k⁻¹(s)| ≤ c1 |s| + c2`.
    pub c1: f64,
    pub c2: f64,
    /// `max |Ψ_k − Ψ|` on the validation grid.
    pub uniform_gap: f64,
}

impl Regularized {
    fn base(&self, r: f64) -> f64 {
        (r * r + self.delta * self.delta).powf(0.5 * (self.m - 1.0)) * r
    }

    fn base_prime(&self, r: f64) -> f64 {
        let d2 = self.delta * self.delta;
        (r * r + d2).powf(0.5 * (self.m - 3.0)) * (self.m * r * r + d2)
    }

    fn value(&self, r: f64) -> f64 {
        self.base(r) + self.linear * r
    }

    fn slope(&self, r: f64) -> f64 {
        self.base_prime(r) + self.linear
    }

    fn antiderivative(&self, r: f64) -> f64 {
        let d2 = self.delta * self.delta;
        let e = 0.5 * (self.m + 1.0);
        ((r * r + d2).powf(e) - d2.powf(e)) / (self.m + 1.0) + 0.5 * self.linear * r * r
    }

    /// Inverse by Newton's method safeguarded with bisection.
    fn inverse(&self, s: f64) -> f64 {
        if s == 0.0 {
            return 0.0;
        }
        let sign = s.signum();
        let target = s.abs();
        // Ψ_k(r) ≥ r·min_slope and Ψ_k(r) ≥ Ψ(r) for r ≥ 0
        let mut lo = 0.0;
        let mut hi = (target / self.min_slope).min(target.powf(1.0 / self.m));
        while self.value(hi) < target {
            hi *= 2.0;
        }
        let mut r = 0.5 * (lo + hi);
        for _ in 0..200 {
            let f = self.value(r) - target;
            if f > 0.0 {
                hi = r;
            } else {
                lo = r;
            }
            let mut next = r - f / self.slope(r);
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - r).abs() <= 1e-16 * r.abs() || hi - lo <= 1e-16 * hi {
                r = next;
                break;
            }
            r = next;
        }
        sign * r
    }
}

/// User nonlinearity `β` with its derivative and inverse, validated on a
/// working interval.
#[derive(Clone)]
pub struct Custom {
    pub beta: ScalarMap,
    pub beta_prime: ScalarMap,
    pub beta_inv: ScalarMap,
    pub working_interval: f64,
    /// Lower bound for `β′`.
    pub c_beta_prime: f64,
    /// Lower bound for `(β⁻¹)′`.
    pub c_beta_inv_prime: f64,
}

impl fmt::Debug for Custom {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Custom")
            .field("working_interval", &self.working_interval)
            .field("c_beta_prime", &self.c_beta_prime)
            .field("c_beta_inv_prime", &self.c_beta_inv_prime)
            .finish_non_exhaustive()
    }
}

/// The nonlinearity driving the evolution.
#[derive(Debug, Clone)]
pub enum NonlinearitySpec {
    PowerLaw { m: f64 },
    Regularized(Regularized),
    Custom(Custom),
}

impl NonlinearitySpec {
    pub fn power_law(m: f64) -> Result<Self> {
        if !(m >= 1.0 && m.is_finite()) {
            return Err(Error::Argument(format!("exponent m must be ≥ 1, got {m}")));
        }
        Ok(NonlinearitySpec::PowerLaw { m })
    }

    /// Builds `Ψ_k` and validates it on `[−A, A]`; see [`Regularized`].
    pub fn make_regularized(m: f64, k: f64, a: f64) -> Result<Self> {
        if !(m >= 1.0 && m.is_finite()) {
            return Err(Error::Argument(format!("exponent m must be ≥ 1, got {m}")));
        }
        if !(k >= 1.0 && k.is_finite()) {
            return Err(Error::Argument(format!("index k must be ≥ 1, got {k}")));
        }
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::Argument(format!("working interval half-width must be positive, got {a}")));
        }
        let mut psi = Regularized {
            m,
            k,
            working_interval: a,
            delta: 1.0 / k,
            linear: 0.0,
            min_slope: 0.0,
            max_slope: 0.0,
            c1: 1.0,
            c2: 1.0,
            uniform_gap: 0.0,
        };
        // Ψ_k′ is even and nondecreasing in |r|, so its maximum sits at A
        let top = psi.base_prime(a);
        if top > k {
            return Err(Error::Construction(format!(
                "slope condition Ψ_k′ ≤ k fails: Ψ_k′(A) ≥ {top:.6e} > k = {k} on [−{a}, {a}]"
            )));
        }
        psi.linear = (1.0 / k).min(k - top);
        validate_regularized(&mut psi)?;
        Ok(NonlinearitySpec::Regularized(psi))
    }

    /// Wraps a user nonlinearity after checking the stated constants on a
    /// grid of `[−A, A]`.
    pub fn custom(
        beta: ScalarMap,
        beta_prime: ScalarMap,
        beta_inv: ScalarMap,
        working_interval: f64,
        c_beta_prime: f64,
        c_beta_inv_prime: f64,
    ) -> Result<Self> {
        let a = working_interval;
        if !(a > 0.0 && a.is_finite()) {
            return Err(Error::Argument(format!("working interval half-width must be positive, got {a}")));
        }
        if !(c_beta_prime > 0.0 && c_beta_inv_prime > 0.0) {
            return Err(Error::Construction("slope constants must be positive".into()));
        }
        if beta(0.0).abs() > 1e-14 {
            return Err(Error::Construction(format!("β(0) = {} ≠ 0", beta(0.0))));
        }
        let n = VALIDATION_POINTS;
        let h = 2.0 * a / (n - 1) as f64;
        let mut prev_slope = f64::NAN;
        let mut max_second: f64 = 0.0;
        for i in 0..n {
            let r = -a + h * i as f64;
            let s = beta_prime(r);
            if !(s.is_finite() && s >= c_beta_prime) {
                return Err(Error::Construction(format!(
                    "β′({r}) = {s} violates β′ ≥ C_β′ = {c_beta_prime}"
                )));
            }
            if 1.0 / s < c_beta_inv_prime {
                return Err(Error::Construction(format!(
                    "(β⁻¹)′ = {} at β({r}) violates (β⁻¹)′ ≥ {c_beta_inv_prime}",
                    1.0 / s
                )));
            }
            let b = beta(r);
            let back = beta_inv(b);
            if (back - r).abs() > 1e-10 * (1.0 + r.abs()) {
                return Err(Error::Construction(format!("β⁻¹(β({r})) = {back} does not invert β")));
            }
            if i > 0 {
                // (β⁻¹)″ = −β″/β′³ with β″ by differences
                let second = (s - prev_slope) / h;
                max_second = max_second.max((second / s.powi(3)).abs());
            }
            prev_slope = s;
        }
        if !max_second.is_finite() {
            return Err(Error::Construction("(β⁻¹)″ is unbounded on the working interval".into()));
        }
        Ok(NonlinearitySpec::Custom(Custom {
            beta,
            beta_prime,
            beta_inv,
            working_interval: a,
            c_beta_prime,
            c_beta_inv_prime,
        }))
    }

    /// `β(r) = r + arctan(r)/2`, with `β′ ∈ [1, 3/2]`.
    pub fn arctan_example(working_interval: f64) -> Result<Self> {
        Self::custom(
            Arc::new(|r: f64| r + 0.5 * r.atan()),
            Arc::new(|r: f64| 1.0 + 0.5 / (1.0 + r * r)),
            Arc::new(invert_arctan_example),
            working_interval,
            1.0,
            2.0 / 3.0,
        )
    }

    /// Half-width `A` of the working interval, if any.
    pub fn working_interval(&self) -> Option<f64> {
        match self {
            NonlinearitySpec::PowerLaw { .. } => None,
            NonlinearitySpec::Regularized(p) => Some(p.working_interval),
            NonlinearitySpec::Custom(c) => Some(c.working_interval),
        }
    }

    /// Exponent of the underlying power law (1 for custom nonlinearities).
    pub fn exponent(&self) -> f64 {
        match self {
            NonlinearitySpec::PowerLaw { m } => *m,
            NonlinearitySpec::Regularized(p) => p.m,
            NonlinearitySpec::Custom(_) => 1.0,
        }
    }

    pub fn is_odd(&self) -> bool {
        !matches!(self, NonlinearitySpec::Custom(_))
    }

    fn check_domain(&self, r: f64) -> Result<()> {
        if !r.is_finite() {
            return Err(Error::Domain(format!("argument {r} is not finite")));
        }
        if let Some(a) = self.working_interval() {
            if r.abs() > a * (1.0 + 1e-12) {
                return Err(Error::Domain(format!("argument {r} outside the working interval [−{a}, {a}]")));
            }
        }
        Ok(())
    }

    fn check_image(&self, s: f64) -> Result<()> {
        if !s.is_finite() {
            return Err(Error::Domain(format!("argument {s} is not finite")));
        }
        if let Some(a) = self.working_interval() {
            let (lo, hi) = (self.psi_unchecked(-a), self.psi_unchecked(a));
            let slack = 1e-12 * hi.abs().max(lo.abs());
            if s < lo - slack || s > hi + slack {
                return Err(Error::Domain(format!("argument {s} outside Ψ([−{a}, {a}]) = [{lo}, {hi}]")));
            }
        }
        Ok(())
    }

    /// `Ψ(r)` without the working-interval check.
    pub fn psi_unchecked(&self, r: f64) -> f64 {
        match self {
            NonlinearitySpec::PowerLaw { m } => {
                if *m == 1.0 {
                    r
                } else {
                    r.abs().powf(m - 1.0) * r
                }
            }
            NonlinearitySpec::Regularized(p) => p.value(r),
            NonlinearitySpec::Custom(c) => (c.beta)(r),
        }
    }

    /// `Ψ′(r)` without the working-interval check.
    pub fn psi_prime_unchecked(&self, r: f64) -> f64 {
        match self {
            NonlinearitySpec::PowerLaw { m } => {
                if *m == 1.0 {
                    1.0
                } else {
                    m * r.abs().powf(m - 1.0)
                }
            }
            NonlinearitySpec::Regularized(p) => p.slope(r),
            NonlinearitySpec::Custom(c) => (c.beta_prime)(r),
        }
    }

    pub fn psi(&self, r: f64) -> Result<f64> {
        self.check_domain(r)?;
        Ok(self.psi_unchecked(r))
    }

    pub fn psi_prime(&self, r: f64) -> Result<f64> {
        self.check_domain(r)?;
        Ok(self.psi_prime_unchecked(r))
    }

    pub fn psi_inv(&self, s: f64) -> Result<f64> {
        self.check_image(s)?;
        Ok(match self {
            NonlinearitySpec::PowerLaw { m } => {
                if *m == 1.0 {
                    s
                } else {
                    s.signum() * s.abs().powf(1.0 / m)
                }
            }
            NonlinearitySpec::Regularized(p) => p.inverse(s),
            NonlinearitySpec::Custom(c) => (c.beta_inv)(s),
        })
    }

    /// `H(r) = ∫₀^r Ψ`.
    pub fn antiderivative_h(&self, r: f64) -> Result<f64> {
        self.check_domain(r)?;
        self.antiderivative_h_unchecked(r)
    }

    /// `H(r)` without the working-interval check.
    pub fn antiderivative_h_unchecked(&self, r: f64) -> Result<f64> {
        Ok(match self {
            NonlinearitySpec::PowerLaw { m } => r.abs().powf(m + 1.0) / (m + 1.0),
            NonlinearitySpec::Regularized(p) => p.antiderivative(r),
            NonlinearitySpec::Custom(c) => integrate_adaptive(|s| (c.beta)(s), 0.0, r, QUAD_TOL, QUAD_TOL)?,
        })
    }

    /// `G(s) = ∫₀^s Ψ⁻¹`.
    pub fn antiderivative_g(&self, s: f64) -> Result<f64> {
        self.check_image(s)?;
        Ok(match self {
            NonlinearitySpec::PowerLaw { m } => {
                let e = 1.0 + 1.0 / m;
                s.abs().powf(e) / e
            }
            NonlinearitySpec::Regularized(p) => {
                integrate_adaptive(|x| p.inverse(x), 0.0, s, QUAD_TOL, QUAD_TOL)?
            }
            NonlinearitySpec::Custom(c) => integrate_adaptive(|x| (c.beta_inv)(x), 0.0, s, QUAD_TOL, QUAD_TOL)?,
        })
    }
}

fn validate_regularized(p: &mut Regularized) -> Result<()> {
    let a = p.working_interval;
    let n = VALIDATION_POINTS;
    let mut min_slope = f64::INFINITY;
    let mut max_slope: f64 = 0.0;
    let mut gap: f64 = 0.0;
    let mut prev = f64::NEG_INFINITY;
    let power = |r: f64| r.abs().powf(p.m - 1.0) * r;
    for i in 0..n {
        let r = -a + 2.0 * a * i as f64 / (n - 1) as f64;
        let s = p.slope(r);
        min_slope = min_slope.min(s);
        max_slope = max_slope.max(s);
        let v = p.value(r);
        if !(v > prev) {
            return Err(Error::Construction(format!("Ψ_k is not strictly increasing near r = {r}")));
        }
        prev = v;
        gap = gap.max((v - power(r)).abs());
    }
    // grid minimum may miss r = 0 where the slope is smallest
    min_slope = min_slope.min(p.slope(0.0));
    max_slope = max_slope.max(p.slope(a));
    if p.value(0.0) != 0.0 {
        return Err(Error::Construction("Ψ_k(0) ≠ 0".into()));
    }
    if !(min_slope > 0.0) {
        return Err(Error::Construction(format!("lower slope bound fails: min Ψ_k′ = {min_slope}")));
    }
    if max_slope > p.k * (1.0 + 1e-12) {
        return Err(Error::Construction(format!("slope condition Ψ_k′ ≤ k fails: max Ψ_k′ = {max_slope}")));
    }
    p.min_slope = min_slope;
    p.max_slope = max_slope;
    p.uniform_gap = gap;
    // growth bound for the inverse on the image grid
    let top = p.value(a);
    for i in 0..n {
        let s = top * i as f64 / (n - 1) as f64;
        let r = p.inverse(s);
        if r > p.c1 * s + p.c2 + 1e-12 {
            return Err(Error::Construction(format!(
                "inverse growth bound |Ψ_k⁻¹(s)| ≤ {}|s| + {} fails at s = {s}",
                p.c1, p.c2
            )));
        }
    }
    Ok(())
}

fn invert_arctan_example(s: f64) -> f64 {
    // β is increasing with β′ ∈ [1, 3/2]: Newton from r = s/1.25
    let mut r = s / 1.25;
    for _ in 0..100 {
        let f = r + 0.5 * r.atan() - s;
        let d = 1.0 + 0.5 / (1.0 + r * r);
        let step = f / d;
        r -= step;
        if step.abs() <= 1e-16 * (1.0 + r.abs()) {
            break;
        }
    }
    r
}

/// `T_k(r)`: clamp to `[−k, k]`.
pub fn truncate_at_height(r: f64, k: f64) -> f64 {
    debug_assert!(k > 0.0);
    r.clamp(-k, k)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn power_law_examples() {
        let p = NonlinearitySpec::power_law(2.0).unwrap();
        assert_eq!(p.psi(-3.0).unwrap(), -9.0);
        let id = NonlinearitySpec::power_law(1.0).unwrap();
        for r in [-2.0, 0.0, 0.3] {
            assert_eq!(id.psi(r).unwrap(), r);
            assert_eq!(id.psi_inv(r).unwrap(), r);
        }
        assert!(NonlinearitySpec::power_law(0.5).is_err());
        assert_relative_eq!(p.antiderivative_h(2.0).unwrap(), 8.0 / 3.0, epsilon = 1e-15);
        assert_relative_eq!(p.antiderivative_g(4.0).unwrap(), 16.0 / 3.0, epsilon = 1e-14);
        assert_eq!(p.antiderivative_h(0.0).unwrap(), 0.0);
        assert_eq!(p.antiderivative_g(0.0).unwrap(), 0.0);
    }

    #[test]
    fn regularized_examples() {
        let p = NonlinearitySpec::make_regularized(2.0, 10.0, 2.0).unwrap();
        assert_eq!(p.psi(0.0).unwrap(), 0.0);
        let NonlinearitySpec::Regularized(r) = &p else { unreachable!() };
        assert!(r.min_slope > 0.0 && p.psi_prime(0.0).unwrap() >= r.min_slope);
        let q = NonlinearitySpec::make_regularized(2.0, 100.0, 1.0).unwrap();
        assert_relative_eq!(q.psi(1.0).unwrap(), (1.0f64 + 1e-4).sqrt() + 0.01, epsilon = 1e-15);
        assert_relative_eq!(q.psi(1.0).unwrap(), 1.01005, epsilon = 1e-5);
        for k in [2.0, 10.0, 1000.0] {
            let lin = NonlinearitySpec::make_regularized(1.0, k, 5.0).unwrap();
            for r in [-1.0, 0.5, 4.0] {
                assert_relative_eq!(lin.psi(r).unwrap(), r * (1.0 + 1.0 / k), epsilon = 1e-14);
                assert_relative_eq!(lin.psi_prime(r).unwrap(), 1.0 + 1.0 / k, epsilon = 1e-14);
            }
        }
        assert!(p.psi(2.5).is_err());
    }

    #[test]
    fn regularized_rejects_steep_intervals() {
        // Ψ′(A) for m = 3 is about 3A², which exceeds k = 10 at A = 3
        let err = NonlinearitySpec::make_regularized(3.0, 10.0, 3.0).unwrap_err();
        assert!(matches!(err, Error::Construction(ref msg) if msg.contains("slope")));
    }

    #[test]
    fn regularized_gap_shrinks_with_k() {
        let gaps: Vec<f64> = [10.0, 100.0, 1000.0]
            .iter()
            .map(|k| match NonlinearitySpec::make_regularized(2.0, *k, 1.0).unwrap() {
                NonlinearitySpec::Regularized(r) => r.uniform_gap,
                _ => unreachable!(),
            })
            .collect();
        assert!(gaps[0] > gaps[1] && gaps[1] > gaps[2] && gaps[2] < 3e-3, "{gaps:?}");
    }

    #[test]
    fn stored_constants_hold_on_grid() {
        for (m, k, a) in [(2.0, 10.0, 1.5), (3.0, 100.0, 2.0), (1.5, 30.0, 3.0)] {
            let spec = NonlinearitySpec::make_regularized(m, k, a).unwrap();
            let NonlinearitySpec::Regularized(r) = &spec else { unreachable!() };
            for i in 0..=2000 {
                let x = -a + 2.0 * a * i as f64 / 2000.0;
                let s = spec.psi_prime(x).unwrap();
                assert!(s >= r.min_slope * (1.0 - 1e-14) && s <= k);
                let y = spec.psi(x).unwrap();
                assert!(spec.psi_inv(y).unwrap().abs() <= r.c1 * y.abs() + r.c2);
                let g = spec.antiderivative_g(y).unwrap();
                assert!(g.abs() <= (r.c1 * y.abs() + r.c2) * y.abs() + 1e-12);
            }
        }
    }

    #[test]
    fn h_matches_quadrature_and_legendre_identity() {
        let specs = [
            NonlinearitySpec::power_law(2.5).unwrap(),
            NonlinearitySpec::make_regularized(2.0, 10.0, 2.0).unwrap(),
            NonlinearitySpec::arctan_example(3.0).unwrap(),
        ];
        for spec in &specs {
            for r in [-1.7, -0.2, 0.0, 0.9, 1.9] {
                let h = spec.antiderivative_h(r).unwrap();
                let quad = integrate_adaptive(|s| spec.psi_unchecked(s), 0.0, r, 1e-14, 1e-13).unwrap();
                assert!((h - quad).abs() < 1e-10);
                assert!(h >= 0.0);
                let u = spec.psi(r).unwrap();
                let inv = spec.psi_inv(u).unwrap();
                let g = spec.antiderivative_g(u).unwrap();
                assert!(g >= 0.0);
                assert!((spec.antiderivative_h(inv).unwrap() - (u * inv - g)).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn arctan_example_is_valid() {
        let b = NonlinearitySpec::arctan_example(4.0).unwrap();
        for r in [-4.0, -1.0, 0.0, 2.0, 4.0] {
            assert_relative_eq!(b.psi_inv(b.psi(r).unwrap()).unwrap(), r, epsilon = 1e-13);
        }
        // claimed constants that do not hold are rejected
        let bad = NonlinearitySpec::custom(
            Arc::new(|r: f64| r + 0.5 * r.atan()),
            Arc::new(|r: f64| 1.0 + 0.5 / (1.0 + r * r)),
            Arc::new(invert_arctan_example),
            2.0,
            1.2,
            0.5,
        );
        assert!(matches!(bad, Err(Error::Construction(_))));
    }

    #[test]
    fn truncation_examples() {
        assert_eq!(truncate_at_height(5.0, 2.0), 2.0);
        assert_eq!(truncate_at_height(-5.0, 2.0), -2.0);
        assert_eq!(truncate_at_height(1.5, 2.0), 1.5);
    }

    proptest! {
        #[test]
        fn truncation_is_lipschitz_and_idempotent(x in -10.0..10.0f64, y in -10.0..10.0f64, k in 0.1..5.0f64) {
            let (tx, ty) = (truncate_at_height(x, k), truncate_at_height(y, k));
            prop_assert!((tx - ty).abs() <= (x - y).abs());
            prop_assert_eq!(truncate_at_height(tx, k), tx);
        }

        #[test]
        fn regularized_inverse_round_trips(r in -2.0..2.0f64, k in 5.0..200.0f64) {
            let spec = NonlinearitySpec::make_regularized(2.0, k, 2.0).unwrap();
            let back = spec.psi_inv(spec.psi(r).unwrap()).unwrap();
            prop_assert!((back - r).abs() <= 1e-12);
        }

        #[test]
        fn h_is_midpoint_convex(x in -1.5..1.5f64, y in -1.5..1.5f64) {
            for spec in [NonlinearitySpec::power_law(3.0).unwrap(), NonlinearitySpec::make_regularized(3.0, 10.0, 1.5).unwrap()] {
                let mid = spec.antiderivative_h(0.5 * (x + y)).unwrap();
                let avg = 0.5 * (spec.antiderivative_h(x).unwrap() + spec.antiderivative_h(y).unwrap());
                prop_assert!(mid <= avg + 1e-14);
            }
        }

        #[test]
        fn regularized_is_odd_and_increasing(r in 0.0..2.0f64, dr in 1e-6..0.5f64) {
            let spec = NonlinearitySpec::make_regularized(2.0, 50.0, 3.0).unwrap();
            prop_assert_eq!(spec.psi(-r).unwrap(), -spec.psi(r).unwrap());
            prop_assert!(spec.psi(r + dr).unwrap() > spec.psi(r).unwrap());
        }
    }
}
