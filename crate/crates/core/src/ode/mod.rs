//! Adaptive one-step integrators with cubic Hermite dense output.
//!
//! Two schemes share the same driver: the explicit Dormand-Prince 5(4) pair
//! with PI step control, and a fourth-order L-stable Rosenbrock method for the
//! stiff regime (small `delta` makes `delta eps dx/dtau = f` stiff away from
//! the fast manifold). Integration may run backward in time.

mod dopri5;
mod rosenbrock;

use nalgebra::{SMatrix, SVector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    #[default]
    DormandPrince,
    Rosenbrock,
}

pub trait OdeSystem<const N: usize> {
    fn rhs(&self, t: f64, y: &SVector<f64, N>) -> SVector<f64, N>;

    /// `(df/dy, df/dt)`. Only the Rosenbrock scheme calls this.
    fn jacobian(&self, t: f64, y: &SVector<f64, N>) -> (SMatrix<f64, N, N>, SVector<f64, N>) {
        let f0 = self.rhs(t, y);
        let mut dfdy = SMatrix::<f64, N, N>::zeros();
        for c in 0..N {
            let h = 1e-7 * (1.0 + y[c].abs());
            let mut yp = *y;
            yp[c] += h;
            dfdy.set_column(c, &((self.rhs(t, &yp) - f0) / h));
        }
        let ht = 1e-7 * (1.0 + t.abs());
        (dfdy, (self.rhs(t + ht, y) - f0) / ht)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
}

/// One accepted step, enough to interpolate anywhere inside it.
#[derive(Debug, Clone, Copy)]
pub struct Step<const N: usize> {
    pub t0: f64,
    pub y0: SVector<f64, N>,
    pub f0: SVector<f64, N>,
    pub t1: f64,
    pub y1: SVector<f64, N>,
    pub f1: SVector<f64, N>,
}

impl<const N: usize> Step<N> {
    /// Cubic Hermite interpolant through both endpoints and their slopes.
    pub fn interpolate(&self, t: f64) -> SVector<f64, N> {
        let h = self.t1 - self.t0;
        if h == 0.0 {
            return self.y1;
        }
        let s = (t - self.t0) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        self.y0 * h00 + self.f0 * (h10 * h) + self.y1 * h01 + self.f1 * (h11 * h)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum StepError {
    /// The step size fell below round-off relative to `t`.
    Underflow { t: f64 },
    /// The solution left the finite numbers.
    NonFinite { t: f64 },
}

/// Adaptive integrator state for one trajectory.
pub struct Integrator<'a, S: OdeSystem<N>, const N: usize> {
    sys: &'a S,
    method: Method,
    tol: Tolerances,
    t: f64,
    y: SVector<f64, N>,
    f: SVector<f64, N>,
    h: f64,
    dir: f64,
    err_old: f64,
    pub accepted: usize,
    pub rejected: usize,
}

impl<'a, S: OdeSystem<N>, const N: usize> Integrator<'a, S, N> {
    /// `direction` is +1 for forward and -1 for backward integration.
    pub fn new(sys: &'a S, method: Method, tol: Tolerances, t0: f64, y0: SVector<f64, N>, direction: f64) -> Self {
        let f = sys.rhs(t0, &y0);
        let dir = if direction < 0.0 { -1.0 } else { 1.0 };
        let mut it = Self {
            sys,
            method,
            tol,
            t: t0,
            y: y0,
            f,
            h: 0.0,
            dir,
            err_old: 1e-4,
            accepted: 0,
            rejected: 0,
        };
        it.h = it.initial_step();
        it
    }

    pub fn t(&self) -> f64 {
        self.t
    }

    pub fn y(&self) -> &SVector<f64, N> {
        &self.y
    }

    pub fn f(&self) -> &SVector<f64, N> {
        &self.f
    }

    fn weight(&self, a: &SVector<f64, N>, b: &SVector<f64, N>, i: usize) -> f64 {
        self.tol.abs_tol + self.tol.rel_tol * a[i].abs().max(b[i].abs())
    }

    fn error_norm(&self, err: &SVector<f64, N>, y_new: &SVector<f64, N>) -> f64 {
        let mut acc = 0.0;
        for i in 0..N {
            let e = err[i] / self.weight(&self.y, y_new, i);
            acc += e * e;
        }
        (acc / N as f64).sqrt()
    }

    fn initial_step(&self) -> f64 {
        let order = match self.method {
            Method::DormandPrince => 5.0,
            Method::Rosenbrock => 4.0,
        };
        let mut d0 = 0.0;
        let mut d1 = 0.0;
        for i in 0..N {
            let w = self.weight(&self.y, &self.y, i);
            d0 += (self.y[i] / w).powi(2);
            d1 += (self.f[i] / w).powi(2);
        }
        let (d0, d1) = ((d0 / N as f64).sqrt(), (d1 / N as f64).sqrt());
        let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
        h0 = h0.min(self.tol.max_step);
        let y1 = self.y + self.f * (self.dir * h0);
        let f1 = self.sys.rhs(self.t + self.dir * h0, &y1);
        let mut d2 = 0.0;
        for i in 0..N {
            d2 += ((f1[i] - self.f[i]) / self.weight(&self.y, &self.y, i)).powi(2);
        }
        let d2 = (d2 / N as f64).sqrt() / h0;
        let h1 = if d1.max(d2) <= 1e-15 {
            (h0 * 1e-3).max(1e-6)
        } else {
            (0.01 / d1.max(d2)).powf(1.0 / order)
        };
        (100.0 * h0).min(h1).min(self.tol.max_step)
    }

    /// Takes one accepted step without passing `t_limit`.
    pub fn step(&mut self, t_limit: f64) -> Result<Step<N>, StepError> {
        loop {
            let remaining = (t_limit - self.t) * self.dir;
            let mut h = self.h.min(self.tol.max_step);
            let clipped = h >= remaining;
            if clipped {
                h = remaining;
            }
            if h <= 1e-14 * self.t.abs().max(1.0) {
                return Err(StepError::Underflow { t: self.t });
            }
            let hs = h * self.dir;
            let (y_new, f_new, err_vec) = match self.method {
                Method::DormandPrince => dopri5::attempt(self.sys, self.t, &self.y, &self.f, hs),
                Method::Rosenbrock => rosenbrock::attempt(self.sys, self.t, &self.y, &self.f, hs),
            };
            let err = self.error_norm(&err_vec, &y_new);
            if !err.is_finite() || y_new.iter().any(|v| !v.is_finite()) {
                self.rejected += 1;
                self.h = h * 0.2;
                if self.h <= 1e-14 * self.t.abs().max(1.0) {
                    return Err(StepError::NonFinite { t: self.t });
                }
                continue;
            }
            if err <= 1.0 {
                let t_new = if clipped { t_limit } else { self.t + hs };
                let step = Step {
                    t0: self.t,
                    y0: self.y,
                    f0: self.f,
                    t1: t_new,
                    y1: y_new,
                    f1: f_new,
                };
                let h_next = self.next_step_accepted(h, err);
                self.t = t_new;
                self.y = y_new;
                self.f = f_new;
                self.accepted += 1;
                // a step clipped to the limit says nothing about the size we could take
                self.h = if clipped { h_next.max(self.h) } else { h_next };
                return Ok(step);
            }
            self.rejected += 1;
            self.h = self.next_step_rejected(h, err);
        }
    }

    fn next_step_accepted(&mut self, h: f64, err: f64) -> f64 {
        match self.method {
            Method::DormandPrince => {
                const BETA: f64 = 0.04;
                let expo = 0.2 - 0.75 * BETA;
                let fac11 = err.max(1e-16).powf(expo);
                let fac = (fac11 / self.err_old.powf(BETA) / 0.9).clamp(0.1, 5.0);
                self.err_old = err.max(1e-4);
                h / fac
            }
            Method::Rosenbrock => h * (0.9 * err.max(1e-16).powf(-0.25)).clamp(0.2, 6.0),
        }
    }

    fn next_step_rejected(&self, h: f64, err: f64) -> f64 {
        match self.method {
            Method::DormandPrince => h / (err.powf(0.2 - 0.75 * 0.04) / 0.9).min(5.0),
            Method::Rosenbrock => h * (0.9 * err.powf(-0.25)).clamp(0.2, 1.0),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{Matrix2, Vector2};

    /// y' = A y + (0, sin t), exact solution known.
    struct Forced;

    impl OdeSystem<2> for Forced {
        fn rhs(&self, t: f64, y: &Vector2<f64>) -> Vector2<f64> {
            Vector2::new(y[1], -y[0] + t.sin() * 0.0)
        }
        fn jacobian(&self, _t: f64, _y: &Vector2<f64>) -> (Matrix2<f64>, Vector2<f64>) {
            (Matrix2::new(0.0, 1.0, -1.0, 0.0), Vector2::zeros())
        }
    }

    /// Stiff linear problem y' = -k (y - cos t) - sin t with solution cos t.
    struct StiffTrack {
        k: f64,
    }

    impl OdeSystem<1> for StiffTrack {
        fn rhs(&self, t: f64, y: &SVector<f64, 1>) -> SVector<f64, 1> {
            SVector::<f64, 1>::new(-self.k * (y[0] - t.cos()) - t.sin())
        }
        fn jacobian(&self, t: f64, _y: &SVector<f64, 1>) -> (SMatrix<f64, 1, 1>, SVector<f64, 1>) {
            (
                SMatrix::<f64, 1, 1>::new(-self.k),
                SVector::<f64, 1>::new(-self.k * t.sin() - t.cos()),
            )
        }
    }

    fn run<S: OdeSystem<N>, const N: usize>(
        sys: &S,
        method: Method,
        tol: Tolerances,
        t0: f64,
        t1: f64,
        y0: SVector<f64, N>,
    ) -> (SVector<f64, N>, usize) {
        let dir = (t1 - t0).signum();
        let mut it = Integrator::new(sys, method, tol, t0, y0, dir);
        while (t1 - it.t()) * dir > 0.0 {
            it.step(t1).unwrap();
        }
        (*it.y(), it.accepted)
    }

    fn tol(rel: f64) -> Tolerances {
        Tolerances {
            rel_tol: rel,
            abs_tol: rel * 1e-2,
            max_step: 1.0,
        }
    }

    #[test]
    fn harmonic_oscillator_both_methods() {
        let t1 = 10.0;
        for method in [Method::DormandPrince, Method::Rosenbrock] {
            let (y, _) = run(&Forced, method, tol(1e-10), 0.0, t1, Vector2::new(1.0, 0.0));
            assert!((y[0] - t1.cos()).abs() < 1e-7, "{method:?}: {}", y[0] - t1.cos());
            assert!((y[1] + t1.sin()).abs() < 1e-7);
        }
    }

    #[test]
    fn backward_integration_returns_to_start() {
        let (y, _) = run(&Forced, Method::DormandPrince, tol(1e-11), 0.0, 5.0, Vector2::new(1.0, 0.0));
        let (y0, _) = run(&Forced, Method::DormandPrince, tol(1e-11), 5.0, 0.0, y);
        assert!((y0[0] - 1.0).abs() < 1e-8 && y0[1].abs() < 1e-8);
    }

    #[test]
    fn rosenbrock_is_cheap_on_stiff_problem() {
        let sys = StiffTrack { k: 1e5 };
        let y0 = SVector::<f64, 1>::new(1.0);
        let (y, n_ros) = run(&sys, Method::Rosenbrock, tol(1e-8), 0.0, 3.0, y0);
        assert!((y[0] - 3.0f64.cos()).abs() < 1e-6);
        let (y, n_dp) = run(&sys, Method::DormandPrince, tol(1e-8), 0.0, 3.0, y0);
        assert!((y[0] - 3.0f64.cos()).abs() < 1e-6);
        assert!(n_ros * 5 < n_dp, "rosenbrock {n_ros} vs dopri {n_dp}");
    }

    /// Fixed-step convergence order of the single-step formulas.
    fn order_of(method: Method) -> f64 {
        let sys = StiffTrack { k: 2.0 };
        let err_at = |n: usize| {
            let h = 1.0 / n as f64;
            let mut t = 0.0;
            let mut y = SVector::<f64, 1>::new(1.0);
            for _ in 0..n {
                let f = sys.rhs(t, &y);
                let (yn, _, _) = match method {
                    Method::DormandPrince => dopri5::attempt(&sys, t, &y, &f, h),
                    Method::Rosenbrock => rosenbrock::attempt(&sys, t, &y, &f, h),
                };
                y = yn;
                t += h;
            }
            (y[0] - 1.0f64.cos()).abs()
        };
        (err_at(20) / err_at(40)).log2()
    }

    #[test]
    fn convergence_orders() {
        let p = order_of(Method::DormandPrince);
        assert!((p - 5.0).abs() < 0.4, "dopri order {p}");
        let p = order_of(Method::Rosenbrock);
        assert!((p - 4.0).abs() < 0.4, "rosenbrock order {p}");
    }

    #[test]
    fn hermite_interpolation_is_exact_for_cubics() {
        let step = Step::<1> {
            t0: 1.0,
            y0: SVector::<f64, 1>::new(1.0),
            f0: SVector::<f64, 1>::new(3.0),
            t1: 2.0,
            y1: SVector::<f64, 1>::new(8.0),
            f1: SVector::<f64, 1>::new(12.0),
        };
        assert!((step.interpolate(1.5)[0] - 3.375).abs() < 1e-14);
    }
}
