//! Forced fast-slow systems `delta dx/dt = f(x, y, lambda)`, `dy/dt = g(x, y, lambda)`
//! with `lambda = lambda(tau)`, `tau = epsilon t`.
//!
//! Both vector fields are polynomials so every partial derivative used by the
//! geometry and desingularization code is exact. The fast time `T = t / delta`
//! never appears explicitly; it is only the time in which the fast subsystem
//! `dx/dT = f` relaxes onto the critical manifold.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::poly::{Poly3, Term, Var};

pub const BUILTIN_SYSTEMS: &[&str] = &["paper-example"];

/// Cached exact partial derivatives of `f` and `g`.
#[derive(Debug, Clone)]
struct Partials {
    f_x: Poly3,
    f_y: Poly3,
    f_l: Poly3,
    f_xx: Poly3,
    f_xy: Poly3,
    f_xl: Poly3,
    f_yy: Poly3,
    f_yl: Poly3,
    f_ll: Poly3,
    g_x: Poly3,
    g_y: Poly3,
    g_l: Poly3,
}

impl Partials {
    fn new(f: &Poly3, g: &Poly3) -> Self {
        let f_x = f.derivative(Var::X);
        let f_y = f.derivative(Var::Y);
        let f_l = f.derivative(Var::Lambda);
        Self {
            f_xx: f_x.derivative(Var::X),
            f_xy: f_x.derivative(Var::Y),
            f_xl: f_x.derivative(Var::Lambda),
            f_yy: f_y.derivative(Var::Y),
            f_yl: f_y.derivative(Var::Lambda),
            f_ll: f_l.derivative(Var::Lambda),
            g_x: g.derivative(Var::X),
            g_y: g.derivative(Var::Y),
            g_l: g.derivative(Var::Lambda),
            f_x,
            f_y,
            f_l,
        }
    }
}

/// Values and partial derivatives of `(f, g)` at one point.
#[derive(Debug, Clone, Copy, Default)]
pub struct Jet {
    pub f: f64,
    pub g: f64,
    pub f_x: f64,
    pub f_y: f64,
    pub f_l: f64,
    pub f_xx: f64,
    pub f_xy: f64,
    pub f_xl: f64,
    pub f_yy: f64,
    pub f_yl: f64,
    pub f_ll: f64,
    pub g_x: f64,
    pub g_y: f64,
    pub g_l: f64,
}

#[derive(Debug, Clone)]
pub struct SystemDefinition {
    name: String,
    f_poly: Poly3,
    g_poly: Poly3,
    delta: f64,
    partials: Partials,
    linear_in_y: bool,
}

impl SystemDefinition {
    /// Validates the structural invariants: `delta >= 0`, `f` at least
    /// quadratic in `x` and at least linear in `y`.
    pub fn new(name: impl Into<String>, f_poly: Poly3, g_poly: Poly3, delta: f64) -> Result<Self> {
        if !(delta >= 0.0) || !delta.is_finite() {
            return Err(Error::Invalid(format!("delta must be finite and >= 0, got {delta}")));
        }
        if f_poly.degree_in(Var::X) < 2 {
            return Err(Error::Assumption(
                "f must have degree >= 2 in x for a quadratic fold".into(),
            ));
        }
        if f_poly.degree_in(Var::Y) < 1 {
            return Err(Error::Assumption(
                "f must depend on y so the critical manifold is a graph y(x)".into(),
            ));
        }
        let partials = Partials::new(&f_poly, &g_poly);
        let linear_in_y = f_poly.degree_in(Var::Y) == 1;
        Ok(Self {
            name: name.into(),
            f_poly,
            g_poly,
            delta,
            partials,
            linear_in_y,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn f_poly(&self) -> &Poly3 {
        &self.f_poly
    }

    pub fn g_poly(&self) -> &Poly3 {
        &self.g_poly
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    pub fn with_delta(&self, delta: f64) -> Result<Self> {
        Self::new(self.name.clone(), self.f_poly.clone(), self.g_poly.clone(), delta)
    }

    /// Exact evaluation of `(f, g)` at `(x, y, lambda)`.
    pub fn eval_field(&self, x: f64, y: f64, lambda: f64) -> (f64, f64) {
        (self.f_poly.eval(x, y, lambda), self.g_poly.eval(x, y, lambda))
    }

    pub fn f(&self, x: f64, y: f64, lambda: f64) -> f64 {
        self.f_poly.eval(x, y, lambda)
    }

    pub fn f_x(&self, x: f64, y: f64, lambda: f64) -> f64 {
        self.partials.f_x.eval(x, y, lambda)
    }

    pub fn f_xx(&self, x: f64, y: f64, lambda: f64) -> f64 {
        self.partials.f_xx.eval(x, y, lambda)
    }

    pub fn jet(&self, x: f64, y: f64, lambda: f64) -> Jet {
        let p = &self.partials;
        Jet {
            f: self.f_poly.eval(x, y, lambda),
            g: self.g_poly.eval(x, y, lambda),
            f_x: p.f_x.eval(x, y, lambda),
            f_y: p.f_y.eval(x, y, lambda),
            f_l: p.f_l.eval(x, y, lambda),
            f_xx: p.f_xx.eval(x, y, lambda),
            f_xy: p.f_xy.eval(x, y, lambda),
            f_xl: p.f_xl.eval(x, y, lambda),
            f_yy: p.f_yy.eval(x, y, lambda),
            f_yl: p.f_yl.eval(x, y, lambda),
            f_ll: p.f_ll.eval(x, y, lambda),
            g_x: p.g_x.eval(x, y, lambda),
            g_y: p.g_y.eval(x, y, lambda),
            g_l: p.g_l.eval(x, y, lambda),
        }
    }

    /// First-order partials only; the hot path of full-system integration.
    pub fn first_partials(&self, x: f64, y: f64, lambda: f64) -> Jet {
        let p = &self.partials;
        Jet {
            f: self.f_poly.eval(x, y, lambda),
            g: self.g_poly.eval(x, y, lambda),
            f_x: p.f_x.eval(x, y, lambda),
            f_y: p.f_y.eval(x, y, lambda),
            f_l: p.f_l.eval(x, y, lambda),
            g_x: p.g_x.eval(x, y, lambda),
            g_y: p.g_y.eval(x, y, lambda),
            g_l: p.g_l.eval(x, y, lambda),
            ..Jet::default()
        }
    }

    /// The critical manifold as a graph: the `y` with `f(x, y, lambda) = 0`.
    ///
    /// Exact for systems linear in `y`; otherwise Newton from `guess` with a
    /// bracketing fallback.
    pub fn manifold_y(&self, x: f64, lambda: f64, guess: f64) -> Option<f64> {
        if self.linear_in_y {
            let a = self.f_poly.eval(x, 0.0, lambda);
            let b = self.partials.f_y.eval(x, 0.0, lambda);
            return (b != 0.0).then(|| -a / b);
        }
        let mut y = guess;
        for _ in 0..50 {
            let fv = self.f_poly.eval(x, y, lambda);
            let fy = self.partials.f_y.eval(x, y, lambda);
            if fy == 0.0 {
                break;
            }
            let step = fv / fy;
            y -= step;
            if step.abs() <= 1e-14 * (1.0 + y.abs()) {
                return Some(y);
            }
        }
        let h = |y: f64| self.f_poly.eval(x, y, lambda);
        crate::roots::scan_roots(h, guess - 50.0, guess + 50.0, 2000, 1e-14)
            .into_iter()
            .min_by(|a, b| (a - guess).abs().total_cmp(&(b - guess).abs()))
    }
}

/// Looks up a built-in system. `delta` is supplied separately.
pub fn builtin_system(name: &str, delta: f64) -> Result<SystemDefinition> {
    match name {
        "paper-example" => {
            // f = x(x - 1) + y + lambda, g = -x
            let f = Poly3::from_terms([
                Term::new(2, 0, 0, 1.0),
                Term::new(1, 0, 0, -1.0),
                Term::new(0, 1, 0, 1.0),
                Term::new(0, 0, 1, 1.0),
            ]);
            let g = Poly3::from_terms([Term::new(1, 0, 0, -1.0)]);
            SystemDefinition::new(name, f, g, delta)
        }
        _ => Err(Error::UnknownSystem {
            name: name.to_string(),
            available: BUILTIN_SYSTEMS.join(", "),
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForcingKind {
    /// `lambda = lambda_max tanh(tau)` on the whole real line.
    LogisticTanh,
    /// `lambda = lambda_max (1 - exp(-tau))` for `tau > 0`.
    ExponentialApproach,
    /// `lambda = lambda_max tau` on `[-1, 1]`, saturating at the bounds.
    LinearSaturatingRamp,
    /// `lambda = lambda_max` for all `tau`; frozen-forcing diagnostics.
    Constant,
}

impl ForcingKind {
    pub fn name(self) -> &'static str {
        match self {
            ForcingKind::LogisticTanh => "logistic-tanh",
            ForcingKind::ExponentialApproach => "exponential-approach",
            ForcingKind::LinearSaturatingRamp => "linear-saturating-ramp",
            ForcingKind::Constant => "constant",
        }
    }
}

/// Distance from the asymptote at which infinite slow-time domains are cut off for scanning.
pub const ASYMPTOTE_CUTOFF: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForcingProfile {
    kind: ForcingKind,
    lambda_max: f64,
    epsilon: f64,
    tau_min: f64,
    tau_max: f64,
}

impl ForcingProfile {
    pub fn new(kind: ForcingKind, lambda_max: f64, epsilon: f64) -> Result<Self> {
        let (tau_min, tau_max) = match kind {
            ForcingKind::LogisticTanh | ForcingKind::Constant => (f64::NEG_INFINITY, f64::INFINITY),
            ForcingKind::ExponentialApproach => (0.0, f64::INFINITY),
            ForcingKind::LinearSaturatingRamp => (-1.0, 1.0),
        };
        Self::with_domain(kind, lambda_max, epsilon, tau_min, tau_max)
    }

    /// Restricts the slow-time domain. The interval must lie inside the kind's natural domain.
    pub fn with_domain(
        kind: ForcingKind,
        lambda_max: f64,
        epsilon: f64,
        tau_min: f64,
        tau_max: f64,
    ) -> Result<Self> {
        if !(epsilon > 0.0) || !epsilon.is_finite() {
            return Err(Error::Invalid(format!("epsilon must be > 0, got {epsilon}")));
        }
        if !lambda_max.is_finite() {
            return Err(Error::Invalid("lambda_max must be finite".into()));
        }
        if kind != ForcingKind::Constant && !(lambda_max > 0.0) {
            return Err(Error::Invalid(format!("lambda_max must be > 0, got {lambda_max}")));
        }
        if !(tau_min < tau_max) || tau_min.is_nan() || tau_max.is_nan() {
            return Err(Error::Invalid(format!("empty tau domain ({tau_min}, {tau_max})")));
        }
        let natural = match kind {
            ForcingKind::ExponentialApproach => (0.0, f64::INFINITY),
            ForcingKind::LinearSaturatingRamp => (-1.0, 1.0),
            _ => (f64::NEG_INFINITY, f64::INFINITY),
        };
        if tau_min < natural.0 || tau_max > natural.1 {
            return Err(Error::Invalid(format!(
                "tau domain ({tau_min}, {tau_max}) exceeds the {} domain ({}, {})",
                kind.name(),
                natural.0,
                natural.1
            )));
        }
        Ok(Self {
            kind,
            lambda_max,
            epsilon,
            tau_min,
            tau_max,
        })
    }

    pub fn logistic(lambda_max: f64, epsilon: f64) -> Result<Self> {
        Self::new(ForcingKind::LogisticTanh, lambda_max, epsilon)
    }

    pub fn exponential(lambda_max: f64, epsilon: f64) -> Result<Self> {
        Self::new(ForcingKind::ExponentialApproach, lambda_max, epsilon)
    }

    pub fn kind(&self) -> ForcingKind {
        self.kind
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn lambda_max(&self) -> f64 {
        self.lambda_max
    }

    pub fn lambda_min(&self) -> f64 {
        match self.kind {
            ForcingKind::LogisticTanh | ForcingKind::LinearSaturatingRamp => -self.lambda_max,
            ForcingKind::ExponentialApproach => 0.0,
            ForcingKind::Constant => self.lambda_max,
        }
    }

    pub fn tau_domain(&self) -> (f64, f64) {
        (self.tau_min, self.tau_max)
    }

    pub fn asymptotically_constant(&self) -> bool {
        !matches!(self.kind, ForcingKind::LinearSaturatingRamp)
    }

    /// Same profile shape at a different rate.
    pub fn with_epsilon(&self, epsilon: f64) -> Result<Self> {
        Self::with_domain(self.kind, self.lambda_max, epsilon, self.tau_min, self.tau_max)
    }

    pub fn contains(&self, tau: f64) -> bool {
        tau >= self.tau_min && tau <= self.tau_max
    }

    /// `lambda(tau)` and its exact slow-time derivative.
    pub fn eval_forcing(&self, tau: f64) -> Result<(f64, f64)> {
        if !self.contains(tau) || tau.is_nan() {
            return Err(Error::Domain {
                tau,
                min: self.tau_min,
                max: self.tau_max,
            });
        }
        Ok((self.lambda(tau), self.dlambda(tau)))
    }

    /// `lambda(tau)` without the domain check.
    pub fn lambda(&self, tau: f64) -> f64 {
        let lm = self.lambda_max;
        match self.kind {
            ForcingKind::LogisticTanh => lm * tau.tanh(),
            ForcingKind::ExponentialApproach => lm * (-(-tau).exp_m1()),
            ForcingKind::LinearSaturatingRamp => lm * tau.clamp(-1.0, 1.0),
            ForcingKind::Constant => lm,
        }
    }

    pub fn dlambda(&self, tau: f64) -> f64 {
        let lm = self.lambda_max;
        match self.kind {
            ForcingKind::LogisticTanh => {
                if tau.abs() > 350.0 {
                    return 0.0;
                }
                let c = tau.cosh();
                lm / (c * c)
            }
            ForcingKind::ExponentialApproach => lm * (-tau).exp(),
            ForcingKind::LinearSaturatingRamp => {
                if (-1.0..=1.0).contains(&tau) {
                    lm
                } else {
                    0.0
                }
            }
            ForcingKind::Constant => 0.0,
        }
    }

    pub fn d2lambda(&self, tau: f64) -> f64 {
        match self.kind {
            ForcingKind::LogisticTanh => -2.0 * tau.tanh() * self.dlambda(tau),
            ForcingKind::ExponentialApproach => -self.dlambda(tau),
            ForcingKind::LinearSaturatingRamp | ForcingKind::Constant => 0.0,
        }
    }

    /// Slow time at which the profile takes the value `lambda`.
    pub fn inverse(&self, lambda: f64) -> Result<f64> {
        let lm = self.lambda_max;
        let fail = |reason: &str| Error::InverseForcing {
            lambda,
            reason: reason.to_string(),
        };
        let tau = match self.kind {
            ForcingKind::LogisticTanh => {
                if lambda.abs() >= lm {
                    return Err(fail("|lambda| >= lambda_max is never attained"));
                }
                (lambda / lm).atanh()
            }
            ForcingKind::ExponentialApproach => {
                if lambda < 0.0 || lambda >= lm {
                    return Err(fail("outside [0, lambda_max)"));
                }
                -(-lambda / lm).ln_1p()
            }
            ForcingKind::LinearSaturatingRamp => {
                if lambda.abs() > lm {
                    return Err(fail("outside [-lambda_max, lambda_max]"));
                }
                lambda / lm
            }
            ForcingKind::Constant => {
                if lambda != lm {
                    return Err(fail("constant forcing takes a single value"));
                }
                0.0
            }
        };
        if !self.contains(tau) {
            return Err(fail("preimage lies outside the tau domain"));
        }
        Ok(tau)
    }

    /// Limit of `lambda` as `tau -> tau_max`, when the forcing settles.
    pub fn upper_asymptote(&self) -> Option<f64> {
        match self.kind {
            ForcingKind::LogisticTanh | ForcingKind::ExponentialApproach if self.tau_max.is_infinite() => {
                Some(self.lambda_max)
            }
            ForcingKind::Constant => Some(self.lambda_max),
            _ => None,
        }
    }

    /// Finite slow-time interval used for scanning: infinite ends are cut where
    /// `lambda` is within [`ASYMPTOTE_CUTOFF`] of its asymptote.
    pub fn scan_domain(&self) -> (f64, f64) {
        let lm = self.lambda_max;
        let cut = match self.kind {
            ForcingKind::LogisticTanh => (1.0 - ASYMPTOTE_CUTOFF / lm).atanh(),
            ForcingKind::ExponentialApproach => (lm / ASYMPTOTE_CUTOFF).ln(),
            ForcingKind::Constant => 1.0,
            ForcingKind::LinearSaturatingRamp => 1.0,
        };
        let lo = if self.tau_min.is_finite() { self.tau_min } else { -cut };
        let hi = if self.tau_max.is_finite() { self.tau_max } else { cut };
        (lo, hi)
    }

    /// Slow time after which `|dlambda/dtau| <= threshold`; `tau_max` when that never happens.
    pub fn settle_time(&self, threshold: f64) -> f64 {
        let lm = self.lambda_max;
        let t = match self.kind {
            ForcingKind::LogisticTanh => {
                if threshold >= lm {
                    0.0
                } else {
                    (lm / threshold).sqrt().acosh()
                }
            }
            ForcingKind::ExponentialApproach => (lm / threshold).ln().max(0.0),
            ForcingKind::LinearSaturatingRamp => self.tau_max,
            ForcingKind::Constant => self.tau_min.max(0.0),
        };
        t.clamp(self.tau_min, self.tau_max)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn builtin_example_field_values() {
        let sys = builtin_system("paper-example", 0.01).unwrap();
        assert_abs_diff_eq!(sys.f(0.5, -1.75, 2.0), 0.0, epsilon = 1e-15);
        assert_eq!(sys.eval_field(0.0, 3.0, -1.0).1, 0.0);
        assert_eq!(sys.f_xx(0.3, 0.2, 0.1), 2.0);
        assert_eq!(sys.eval_field(1.0, -2.5, 2.5), (0.0, -1.0));
        assert_eq!(sys.eval_field(0.0, 0.0, 0.0), (0.0, 0.0));
        assert_eq!(sys.eval_field(0.5, 0.0, 0.0), (-0.25, -0.5));
    }

    #[test]
    fn unknown_system_lists_available() {
        let err = builtin_system("nope", 0.01).unwrap_err();
        assert!(err.to_string().contains("paper-example"));
    }

    #[test]
    fn rejects_linear_fast_field() {
        let f = Poly3::from_terms([Term::new(1, 0, 0, 1.0), Term::new(0, 1, 0, 1.0)]);
        let g = Poly3::from_terms([Term::new(1, 0, 0, -1.0)]);
        assert!(SystemDefinition::new("lin", f, g, 0.01).unwrap_err().is_assumption());
    }

    #[test]
    fn forcing_examples() {
        let p = ForcingProfile::logistic(2.5, 0.2).unwrap();
        assert_eq!(p.eval_forcing(0.0).unwrap(), (0.0, 2.5));
        let tau = -(0.28f64).atanh();
        assert_abs_diff_eq!(p.eval_forcing(tau).unwrap().0, -0.7, epsilon = 1e-14);

        let e = ForcingProfile::exponential(2.5, 1.0).unwrap();
        assert_eq!(e.eval_forcing(f64::INFINITY).unwrap(), (2.5, 0.0));
        assert!(matches!(e.eval_forcing(-0.1), Err(Error::Domain { .. })));
        assert_eq!(e.lambda_min(), 0.0);
        assert_eq!(p.lambda_min(), -2.5);
    }

    #[test]
    fn asymptotic_constancy_flags() {
        let kinds = [
            (ForcingKind::LogisticTanh, true),
            (ForcingKind::ExponentialApproach, true),
            (ForcingKind::Constant, true),
            (ForcingKind::LinearSaturatingRamp, false),
        ];
        for (kind, flag) in kinds {
            assert_eq!(ForcingProfile::new(kind, 2.5, 0.3).unwrap().asymptotically_constant(), flag);
        }
    }

    #[test]
    fn inverse_round_trips() {
        let p = ForcingProfile::logistic(2.5, 0.2).unwrap();
        let e = ForcingProfile::exponential(2.5, 1.0).unwrap();
        for lam in [-2.4, -0.7, 0.0, 1.3, 2.49] {
            assert_abs_diff_eq!(p.lambda(p.inverse(lam).unwrap()), lam, epsilon = 1e-12);
        }
        for lam in [0.0, 0.7, 2.0, 2.49] {
            assert_abs_diff_eq!(e.lambda(e.inverse(lam).unwrap()), lam, epsilon = 1e-12);
        }
        assert!(p.inverse(2.5).is_err());
        assert!(e.inverse(-0.1).is_err());
    }

    #[test]
    fn settle_time_bounds_rate() {
        let p = ForcingProfile::logistic(2.5, 0.2).unwrap();
        let t = p.settle_time(1e-6);
        assert_abs_diff_eq!(p.dlambda(t), 1e-6, epsilon = 1e-12);
        let e = ForcingProfile::exponential(2.5, 1.0).unwrap();
        assert_abs_diff_eq!(e.dlambda(e.settle_time(1e-6)), 1e-6, epsilon = 1e-12);
    }
}
