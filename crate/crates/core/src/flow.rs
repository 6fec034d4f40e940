//! Trajectories of the full fast-slow system, the reduced flow on `S` and the
//! desingularized flow, with the escape/tracking events that decide whether an
//! initial state tips.
//!
//! The full system is integrated in slow time `tau`:
//! `delta eps dx/dtau = f`, `eps dy/dtau = g`, `lambda = lambda(tau)`.

use nalgebra::{Matrix2, SMatrix, SVector, Vector2};
use serde::{Deserialize, Serialize};

use crate::desing::{DesingularizedField, FoldedSingularity};
use crate::error::{Error, Result};
use crate::geometry::{self, DEFAULT_X_RANGE};
use crate::model::{ForcingProfile, SystemDefinition};
use crate::ode::{Integrator, Method, OdeSystem, Step, StepError, Tolerances};
use crate::roots;

/// Event times are bisected on the dense output to this width.
pub const EVENT_TOL: f64 = 1e-10;
/// Below this `delta` the automatic method choice switches to the stiff integrator.
pub const STIFF_DELTA: f64 = 2e-3;
/// The reduced flow is declared to have reached the fold within this distance.
pub const FOLD_HIT_DISTANCE: f64 = 1e-6;
/// ... or once `|dx/dtau|` exceeds this.
pub const FOLD_HIT_SPEED: f64 = 1e6;
const TABLE_POINTS: usize = 257;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum MethodChoice {
    #[default]
    Auto,
    DormandPrince,
    Rosenbrock,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IntegratorSettings {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub max_step: f64,
    /// Escape predicate fires this far beyond the fold.
    pub escape_offset: f64,
    /// Radius of the tracking tube around the moving stable state.
    pub tracking_tube: f64,
    /// Slow time after which the forcing counts as settled; derived from the profile when absent.
    pub horizon: Option<f64>,
    /// Extra slow time allowed past the horizon when the forcing domain is unbounded.
    pub overtime: f64,
    pub max_steps: usize,
    /// Distance (in `|f| / |f_y|`) within which a state counts as sitting on `S^r`.
    pub dwell_tube: f64,
    pub method: MethodChoice,
    /// Keep every accepted step; scans switch this off.
    pub record: bool,
}

impl Default for IntegratorSettings {
    fn default() -> Self {
        Self {
            rel_tol: 1e-9,
            abs_tol: 1e-11,
            max_step: 0.25,
            escape_offset: 1.5,
            tracking_tube: 0.05,
            horizon: None,
            overtime: 40.0,
            max_steps: 2_000_000,
            dwell_tube: 0.05,
            method: MethodChoice::Auto,
            record: true,
        }
    }
}

impl IntegratorSettings {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("rel_tol", self.rel_tol),
            ("abs_tol", self.abs_tol),
            ("max_step", self.max_step),
            ("escape_offset", self.escape_offset),
            ("tracking_tube", self.tracking_tube),
            ("overtime", self.overtime),
            ("dwell_tube", self.dwell_tube),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::Invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        if let Some(h) = self.horizon {
            if !h.is_finite() {
                return Err(Error::Invalid("horizon must be finite".into()));
            }
        }
        if self.max_steps == 0 {
            return Err(Error::Invalid("max_steps must be positive".into()));
        }
        Ok(())
    }

    fn tolerances(&self) -> Tolerances {
        Tolerances {
            rel_tol: self.rel_tol,
            abs_tol: self.abs_tol,
            max_step: self.max_step,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Tracked,
    Destabilized,
    Exhausted,
    HitFold,
}

impl Verdict {
    pub fn name(self) -> &'static str {
        match self {
            Verdict::Tracked => "tracked",
            Verdict::Destabilized => "destabilized",
            Verdict::Exhausted => "exhausted",
            Verdict::HitFold => "hit-fold",
        }
    }

    /// Destabilized and hit-fold both mean "fails to track".
    pub fn tips(self) -> bool {
        matches!(self, Verdict::Destabilized | Verdict::HitFold)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Sample {
    /// `tau` for slow-time systems, `s` for the desingularized flow.
    pub t: f64,
    pub tau: f64,
    pub x: f64,
    pub y: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct TrajectoryStats {
    /// Largest signed distance past the fold on the repelling side.
    pub max_excursion: f64,
    /// Slow time spent close to `S^r`.
    pub dwell_repelling: f64,
    pub steps: usize,
    pub rejected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub samples: Vec<Sample>,
    pub verdict: Verdict,
    /// Time at which the deciding event fired.
    pub event_t: f64,
    /// Distance to the stable state at the event.
    pub final_distance: f64,
    pub stats: TrajectoryStats,
}

impl Trajectory {
    pub fn last(&self) -> Option<&Sample> {
        self.samples.last()
    }

    /// Linear interpolation of the recorded path at slow time `tau`.
    pub fn x_at_tau(&self, tau: f64) -> Option<f64> {
        let i = self.samples.partition_point(|s| s.tau < tau);
        if i == 0 || i == self.samples.len() {
            return None;
        }
        let (a, b) = (&self.samples[i - 1], &self.samples[i]);
        let w = (tau - a.tau) / (b.tau - a.tau);
        Some(a.x + w * (b.x - a.x))
    }
}

/// Fold position and stable state tabulated over the forcing range.
#[derive(Debug, Clone)]
struct StateTable {
    lo: f64,
    hi: f64,
    fold: Vec<f64>,
    stable: Vec<(f64, f64)>,
}

impl StateTable {
    fn new(sys: &SystemDefinition, lo: f64, hi: f64) -> Result<Self> {
        let n = if hi > lo { TABLE_POINTS } else { 1 };
        let mut fold = Vec::with_capacity(n);
        let mut stable = Vec::with_capacity(n);
        let mut guess = geometry::single_fold(sys, lo, DEFAULT_X_RANGE)?.x_f;
        for i in 0..n {
            let lambda = if n == 1 { lo } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 };
            guess = geometry::fold_x(sys, lambda, guess)?;
            fold.push(guess);
            stable.push(geometry::stable_state(sys, lambda, DEFAULT_X_RANGE)?);
        }
        Ok(Self { lo, hi, fold, stable })
    }

    fn locate(&self, lambda: f64) -> (usize, f64) {
        let n = self.fold.len();
        if n == 1 {
            return (0, 0.0);
        }
        let u = ((lambda - self.lo) / (self.hi - self.lo)).clamp(0.0, 1.0) * (n - 1) as f64;
        let i = (u.floor() as usize).min(n - 2);
        (i, u - i as f64)
    }

    fn fold_x(&self, lambda: f64) -> f64 {
        let (i, w) = self.locate(lambda);
        if self.fold.len() == 1 {
            return self.fold[0];
        }
        self.fold[i] * (1.0 - w) + self.fold[i + 1] * w
    }

    fn stable_state(&self, lambda: f64) -> (f64, f64) {
        let (i, w) = self.locate(lambda);
        if self.stable.len() == 1 {
            return self.stable[0];
        }
        let (a, b) = (self.stable[i], self.stable[i + 1]);
        (a.0 * (1.0 - w) + b.0 * w, a.1 * (1.0 - w) + b.1 * w)
    }
}

/// Everything about one system/forcing pair that trajectories share.
#[derive(Debug, Clone)]
pub struct FlowContext<'a> {
    sys: &'a SystemDefinition,
    forcing: &'a ForcingProfile,
    settings: IntegratorSettings,
    singularities: Vec<FoldedSingularity>,
    tau_guard: f64,
    tau_end: f64,
    tau_stop: f64,
    table: StateTable,
    escape_dir: f64,
}

struct FullSystem<'a> {
    sys: &'a SystemDefinition,
    forcing: &'a ForcingProfile,
    inv_fast: f64,
    inv_slow: f64,
}

impl OdeSystem<2> for FullSystem<'_> {
    fn rhs(&self, tau: f64, u: &Vector2<f64>) -> Vector2<f64> {
        let (f, g) = self.sys.eval_field(u[0], u[1], self.forcing.lambda(tau));
        Vector2::new(f * self.inv_fast, g * self.inv_slow)
    }

    fn jacobian(&self, tau: f64, u: &Vector2<f64>) -> (Matrix2<f64>, Vector2<f64>) {
        let j = self.sys.first_partials(u[0], u[1], self.forcing.lambda(tau));
        let dl = self.forcing.dlambda(tau);
        (
            Matrix2::new(
                j.f_x * self.inv_fast,
                j.f_y * self.inv_fast,
                j.g_x * self.inv_slow,
                j.g_y * self.inv_slow,
            ),
            Vector2::new(j.f_l * dl * self.inv_fast, j.g_l * dl * self.inv_slow),
        )
    }
}

struct ReducedSystem<'a> {
    field: DesingularizedField<'a>,
}

impl OdeSystem<1> for ReducedSystem<'_> {
    fn rhs(&self, tau: f64, u: &SVector<f64, 1>) -> SVector<f64, 1> {
        SVector::<f64, 1>::new(self.field.reduced_rhs(u[0], tau).unwrap_or(f64::NAN))
    }

    fn jacobian(&self, tau: f64, u: &SVector<f64, 1>) -> (SMatrix<f64, 1, 1>, SVector<f64, 1>) {
        // d/dx (N / K) = (N_x K - N K_x) / K^2, with K = -eps f_x
        let (n, k) = self.field.desing_rhs(u[0], tau);
        let j = self.field.jacobian(u[0], tau);
        let k2 = k * k;
        (
            SMatrix::<f64, 1, 1>::new((j[0][0] * k - n * j[1][0]) / k2),
            SVector::<f64, 1>::new((j[0][1] * k - n * j[1][1]) / k2),
        )
    }
}

struct DesingSystem<'a> {
    field: DesingularizedField<'a>,
}

impl OdeSystem<2> for DesingSystem<'_> {
    fn rhs(&self, _s: f64, u: &Vector2<f64>) -> Vector2<f64> {
        let (a, b) = self.field.desing_rhs(u[0], u[1]);
        Vector2::new(a, b)
    }

    fn jacobian(&self, _s: f64, u: &Vector2<f64>) -> (Matrix2<f64>, Vector2<f64>) {
        let j = self.field.jacobian(u[0], u[1]);
        (Matrix2::new(j[0][0], j[0][1], j[1][0], j[1][1]), Vector2::zeros())
    }
}

/// Time in `(t0, t1]` where `h` first becomes nonnegative, given `h(t1) >= 0`.
fn locate_event<F: FnMut(f64) -> f64>(mut h: F, t0: f64, t1: f64) -> f64 {
    if h(t0) >= 0.0 {
        return t0;
    }
    let t = roots::bisect(&mut h, t0, t1, EVENT_TOL);
    // report the side where the predicate holds
    let hi = (t + 0.5 * EVENT_TOL).min(t1);
    if h(hi) >= 0.0 {
        hi
    } else {
        t1
    }
}

impl<'a> FlowContext<'a> {
    pub fn new(sys: &'a SystemDefinition, forcing: &'a ForcingProfile, settings: IntegratorSettings) -> Result<Self> {
        settings.validate()?;
        geometry::verify_assumptions(sys, forcing, DEFAULT_X_RANGE)?;
        let field = DesingularizedField::new(sys, forcing);
        let singularities = field.find_folded_singularities()?;
        let tau_guard = match singularities.iter().map(|s| s.tau_star).reduce(f64::max) {
            Some(t) => t,
            None => Self::most_critical_tau(&field)?,
        };
        let (_, tau_max) = forcing.tau_domain();
        let tau_end = settings
            .horizon
            .unwrap_or_else(|| forcing.settle_time(1e-6))
            .min(tau_max);
        let tau_stop = if tau_max.is_finite() { tau_max } else { tau_end + settings.overtime };
        let table = StateTable::new(sys, forcing.lambda_min(), forcing.lambda_max())?;
        let fold = geometry::single_fold(sys, forcing.lambda_min(), DEFAULT_X_RANGE)?;
        let escape_dir = -geometry::attracting_direction(sys, &fold);
        Ok(Self {
            sys,
            forcing,
            settings,
            singularities,
            tau_guard,
            tau_end,
            tau_stop,
            table,
            escape_dir,
        })
    }

    /// Slow time where the fold condition comes closest to admitting a root.
    fn most_critical_tau(field: &DesingularizedField) -> Result<f64> {
        let (lo, hi) = field.forcing().scan_domain();
        let n = 2000;
        let mut guess = field.fold_x(lo, 0.0).or_else(|_| {
            geometry::single_fold(field.system(), field.forcing().lambda(lo), DEFAULT_X_RANGE).map(|f| f.x_f)
        })?;
        let sign = {
            let lambda = field.forcing().lambda(lo);
            let fold = geometry::single_fold(field.system(), lambda, DEFAULT_X_RANGE)?;
            geometry::attracting_direction(field.system(), &fold)
        };
        // on S^a next to the fold the reduced flow moves toward the fold when
        // sign * N > 0 (built-in example: N > 0 pushes x up to x_F)
        let mut best = (lo, f64::NEG_INFINITY);
        for i in 0..=n {
            let tau = lo + (hi - lo) * i as f64 / n as f64;
            let (value, x_f) = field.fold_condition(tau, guess)?;
            guess = x_f;
            let v = -sign * value;
            if v > best.1 {
                best = (tau, v);
            }
        }
        Ok(best.0)
    }

    pub fn system(&self) -> &'a SystemDefinition {
        self.sys
    }

    pub fn forcing(&self) -> &'a ForcingProfile {
        self.forcing
    }

    pub fn settings(&self) -> &IntegratorSettings {
        &self.settings
    }

    pub fn singularities(&self) -> &[FoldedSingularity] {
        &self.singularities
    }

    /// Tracking is only accepted after this slow time.
    pub fn tau_guard(&self) -> f64 {
        self.tau_guard
    }

    pub fn tau_end(&self) -> f64 {
        self.tau_end
    }

    /// +1 when tipping trajectories leave toward larger `x`.
    pub fn escape_dir(&self) -> f64 {
        self.escape_dir
    }

    pub fn fold_x(&self, lambda: f64) -> f64 {
        self.table.fold_x(lambda)
    }

    pub fn stable_state(&self, lambda: f64) -> (f64, f64) {
        self.table.stable_state(lambda)
    }

    /// Same context with different integrator settings.
    pub fn with_settings(&self, settings: IntegratorSettings) -> Result<Self> {
        settings.validate()?;
        let mut ctx = self.clone();
        let (_, tau_max) = self.forcing.tau_domain();
        ctx.tau_end = settings
            .horizon
            .unwrap_or_else(|| self.forcing.settle_time(1e-6))
            .min(tau_max);
        ctx.tau_stop = if tau_max.is_finite() { tau_max } else { ctx.tau_end + settings.overtime };
        ctx.settings = settings;
        Ok(ctx)
    }

    fn method(&self) -> Method {
        match self.settings.method {
            MethodChoice::DormandPrince => Method::DormandPrince,
            MethodChoice::Rosenbrock => Method::Rosenbrock,
            MethodChoice::Auto if self.sys.delta() < STIFF_DELTA => Method::Rosenbrock,
            MethodChoice::Auto => Method::DormandPrince,
        }
    }

    fn excursion(&self, x: f64, lambda: f64) -> f64 {
        self.escape_dir * (x - self.table.fold_x(lambda))
    }

    fn distance_to_stable(&self, x: f64, y: f64, lambda: f64) -> f64 {
        let (xs, ys) = self.table.stable_state(lambda);
        (x - xs).hypot(y - ys)
    }

    fn sample(&self, t: f64, x: f64, y: f64) -> Sample {
        Sample {
            t,
            tau: t,
            x,
            y,
            lambda: self.forcing.lambda(t),
        }
    }

    /// Integrates the full system from `(x0, y0)` at slow time `tau0` until it
    /// escapes past the fold, settles into the tracking tube, or runs out of time.
    pub fn integrate_full(&self, x0: f64, y0: f64, tau0: f64) -> Result<Trajectory> {
        let delta = self.sys.delta();
        if !(delta > 0.0) {
            return Err(Error::Invalid("full-system integration needs delta > 0".into()));
        }
        if !(x0.is_finite() && y0.is_finite()) {
            return Err(Error::Invalid(format!("initial state ({x0}, {y0}) is not finite")));
        }
        self.forcing.eval_forcing(tau0)?;
        let eps = self.forcing.epsilon();
        let full = FullSystem {
            sys: self.sys,
            forcing: self.forcing,
            inv_fast: 1.0 / (delta * eps),
            inv_slow: 1.0 / eps,
        };
        let s = &self.settings;
        let mut it = Integrator::new(&full, self.method(), s.tolerances(), tau0, Vector2::new(x0, y0), 1.0);
        let mut traj = Trajectory {
            samples: Vec::new(),
            verdict: Verdict::Exhausted,
            event_t: tau0,
            final_distance: f64::NAN,
            stats: TrajectoryStats {
                max_excursion: self.excursion(x0, self.forcing.lambda(tau0)),
                ..Default::default()
            },
        };
        if s.record {
            traj.samples.push(self.sample(tau0, x0, y0));
        }
        let tube_from = self.tau_guard.min(self.tau_end);
        let mut on_sr_prev = self.on_repelling_strip(x0, y0, tau0);

        loop {
            if it.t() >= self.tau_stop || it.accepted + it.rejected >= s.max_steps {
                let y = it.y();
                traj.event_t = it.t();
                traj.final_distance = self.distance_to_stable(y[0], y[1], self.forcing.lambda(it.t()));
                break;
            }
            let limit = if it.t() < self.tau_end { self.tau_end } else { self.tau_stop };
            let step = match it.step(limit) {
                Ok(step) => step,
                Err(StepError::Underflow { t } | StepError::NonFinite { t }) => {
                    let y = it.y();
                    return Err(Error::Stiffness { tau: t, x: y[0], y: y[1] });
                }
            };
            let (x1, y1, t1) = (step.y1[0], step.y1[1], step.t1);
            let lambda1 = self.forcing.lambda(t1);

            let on_sr = self.on_repelling_strip(x1, y1, t1);
            traj.stats.dwell_repelling += (t1 - step.t0) * 0.5 * (on_sr_prev as u8 + on_sr as u8) as f64;
            on_sr_prev = on_sr;
            traj.stats.max_excursion = traj.stats.max_excursion.max(self.excursion(x1, lambda1));

            let escape = self.escape_event(&step);
            let track = if t1 >= tube_from { self.tube_event(&step, tube_from) } else { None };
            let event = match (escape, track) {
                (Some(a), Some(b)) if b < a => Some((b, Verdict::Tracked)),
                (Some(a), _) => Some((a, Verdict::Destabilized)),
                (None, Some(b)) => Some((b, Verdict::Tracked)),
                (None, None) => None,
            };
            if let Some((te, verdict)) = event {
                let u = step.interpolate(te);
                if s.record && te > step.t0 {
                    traj.samples.push(self.sample(te, u[0], u[1]));
                }
                traj.verdict = verdict;
                traj.event_t = te;
                traj.final_distance = self.distance_to_stable(u[0], u[1], self.forcing.lambda(te));
                break;
            }
            if s.record {
                traj.samples.push(self.sample(t1, x1, y1));
            }
        }
        traj.stats.steps = it.accepted;
        traj.stats.rejected = it.rejected;
        Ok(traj)
    }

    fn on_repelling_strip(&self, x: f64, y: f64, tau: f64) -> bool {
        let lambda = self.forcing.lambda(tau);
        let ex = self.excursion(x, lambda);
        if !(ex > 0.0 && ex < self.settings.escape_offset) {
            return false;
        }
        let j = self.sys.first_partials(x, y, lambda);
        j.f.abs() <= self.settings.dwell_tube * j.f_y.abs()
    }

    fn escape_event(&self, step: &Step<2>) -> Option<f64> {
        let offset = self.settings.escape_offset;
        let h = |t: f64| {
            let u = step.interpolate(t);
            self.excursion(u[0], self.forcing.lambda(t)) - offset
        };
        if h(step.t1) < 0.0 || self.escape_dir * step.f1[0] <= 0.0 {
            return None;
        }
        Some(locate_event(h, step.t0, step.t1))
    }

    fn tube_event(&self, step: &Step<2>, from: f64) -> Option<f64> {
        let rho = self.settings.tracking_tube;
        let h = |t: f64| {
            let u = step.interpolate(t);
            rho - self.distance_to_stable(u[0], u[1], self.forcing.lambda(t))
        };
        let (x1, y1) = (step.y1[0], step.y1[1]);
        if h(step.t1) < 0.0 || self.sys.f_x(x1, y1, self.forcing.lambda(step.t1)) >= 0.0 {
            return None;
        }
        Some(locate_event(h, step.t0.max(from), step.t1))
    }

    /// Full-system trajectory started on `S` at forcing value `lambda`.
    pub fn integrate_from_manifold(&self, x0: f64, lambda: f64, allow_repelling: bool) -> Result<Trajectory> {
        let tau0 = self.forcing.inverse(lambda)?;
        let p = geometry::project_onto_s(self.sys, x0, lambda, allow_repelling)?;
        self.integrate_full(p.x, p.y, tau0)
    }

    /// Integrates the reduced flow `dx/dtau` on `S` from `(x0, tau0)`.
    pub fn integrate_reduced(&self, x0: f64, tau0: f64) -> Result<Trajectory> {
        let lambda0 = self.forcing.eval_forcing(tau0)?.0;
        let field = DesingularizedField::new(self.sys, self.forcing);
        field.reduced_rhs(x0, tau0)?;
        let red = ReducedSystem { field };
        let s = &self.settings;
        let mut it = Integrator::new(&red, Method::DormandPrince, s.tolerances(), tau0, SVector::<f64, 1>::new(x0), 1.0);
        let y_of = |x: f64, tau: f64| field.manifold_y(x, tau);
        let mut traj = Trajectory {
            samples: Vec::new(),
            verdict: Verdict::Exhausted,
            event_t: tau0,
            final_distance: f64::NAN,
            stats: TrajectoryStats {
                max_excursion: self.excursion(x0, lambda0),
                ..Default::default()
            },
        };
        if s.record {
            traj.samples.push(self.sample(tau0, x0, y_of(x0, tau0)));
        }
        let tube_from = self.tau_guard.min(self.tau_end);
        let finish = |traj: &mut Trajectory, verdict: Verdict, t: f64, x: f64| {
            let y = y_of(x, t);
            traj.verdict = verdict;
            traj.event_t = t;
            traj.final_distance = self.distance_to_stable(x, y, self.forcing.lambda(t));
            if s.record && traj.samples.last().is_none_or(|l| l.t < t) {
                traj.samples.push(self.sample(t, x, y));
            }
        };
        loop {
            let (t, x) = (it.t(), it.y()[0]);
            if t >= self.tau_stop || it.accepted + it.rejected >= s.max_steps {
                finish(&mut traj, Verdict::Exhausted, t, x);
                break;
            }
            let lambda = self.forcing.lambda(t);
            if self.excursion(x, lambda) >= -FOLD_HIT_DISTANCE || it.f()[0].abs() > FOLD_HIT_SPEED {
                finish(&mut traj, Verdict::HitFold, t, x);
                break;
            }
            let limit = if t < self.tau_end { self.tau_end } else { self.tau_stop };
            let step = match it.step(limit) {
                Ok(step) => step,
                Err(_) if self.excursion(x, lambda) > -1e-3 => {
                    finish(&mut traj, Verdict::HitFold, t, x);
                    break;
                }
                Err(_) => {
                    return Err(Error::Stiffness {
                        tau: t,
                        x,
                        y: y_of(x, t),
                    })
                }
            };
            let (t1, x1) = (step.t1, step.y1[0]);
            traj.stats.max_excursion = traj.stats.max_excursion.max(self.excursion(x1, self.forcing.lambda(t1)));
            if t1 >= tube_from {
                let y1 = y_of(x1, t1);
                let d = self.distance_to_stable(x1, y1, self.forcing.lambda(t1));
                if d <= s.tracking_tube && self.sys.f_x(x1, y1, self.forcing.lambda(t1)) < 0.0 {
                    let h = |t: f64| {
                        let x = step.interpolate(t)[0];
                        s.tracking_tube - self.distance_to_stable(x, y_of(x, t), self.forcing.lambda(t))
                    };
                    let te = locate_event(h, step.t0.max(tube_from), t1);
                    finish(&mut traj, Verdict::Tracked, te, step.interpolate(te)[0]);
                    break;
                }
            }
            if s.record {
                traj.samples.push(self.sample(t1, x1, y_of(x1, t1)));
            }
        }
        traj.stats.steps = it.accepted;
        traj.stats.rejected = it.rejected;
        Ok(traj)
    }
}

/// Integrates the desingularized field from `(x0, tau0)` over `s in s_span`
/// (either direction). Stops early when `tau` leaves the forcing's scan domain
/// or `x` moves more than `x_bound` from the fold.
pub fn integrate_desing(
    sys: &SystemDefinition,
    forcing: &ForcingProfile,
    x0: f64,
    tau0: f64,
    s_span: (f64, f64),
    settings: &IntegratorSettings,
    x_bound: f64,
) -> Result<Trajectory> {
    settings.validate()?;
    if !(x0.is_finite() && tau0.is_finite()) {
        return Err(Error::Invalid(format!("initial point ({x0}, {tau0}) is not finite")));
    }
    let field = DesingularizedField::new(sys, forcing);
    let (lo, hi) = forcing.scan_domain();
    let dir = if s_span.1 < s_span.0 { -1.0 } else { 1.0 };
    let ds = DesingSystem { field };
    let mut it = Integrator::new(&ds, Method::DormandPrince, settings.tolerances(), s_span.0, Vector2::new(x0, tau0), dir);
    let mut guess = geometry::single_fold(sys, forcing.lambda(tau0), DEFAULT_X_RANGE)?.x_f;
    let sample = |s: f64, x: f64, tau: f64| Sample {
        t: s,
        tau,
        x,
        y: field.manifold_y(x, tau),
        lambda: forcing.lambda(tau),
    };
    let mut traj = Trajectory {
        samples: vec![sample(s_span.0, x0, tau0)],
        verdict: Verdict::Exhausted,
        event_t: s_span.0,
        final_distance: f64::NAN,
        stats: TrajectoryStats::default(),
    };
    while (s_span.1 - it.t()) * dir > 0.0 && it.accepted + it.rejected < settings.max_steps {
        let step = match it.step(s_span.1) {
            Ok(step) => step,
            Err(StepError::Underflow { t } | StepError::NonFinite { t }) => {
                let u = it.y();
                return Err(Error::Stiffness { tau: t, x: u[0], y: u[1] });
            }
        };
        let (x, tau) = (step.y1[0], step.y1[1]);
        if !(lo..=hi).contains(&tau) {
            break;
        }
        guess = geometry::fold_x(sys, forcing.lambda(tau), guess).unwrap_or(guess);
        let out = (x - guess).abs() > x_bound;
        traj.samples.push(sample(step.t1, x, tau));
        if out {
            break;
        }
    }
    traj.event_t = it.t();
    traj.stats.steps = it.accepted;
    traj.stats.rejected = it.rejected;
    Ok(traj)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{builtin_system, ForcingKind};

    fn ctx_parts(eps: f64, delta: f64) -> (SystemDefinition, ForcingProfile) {
        (
            builtin_system("paper-example", delta).unwrap(),
            ForcingProfile::logistic(2.5, eps).unwrap(),
        )
    }

    #[test]
    fn slow_forcing_tracks() {
        let (sys, forcing) = ctx_parts(0.06, 0.01);
        let ctx = FlowContext::new(&sys, &forcing, IntegratorSettings::default()).unwrap();
        assert!(ctx.singularities().is_empty());
        let tr = ctx.integrate_from_manifold(0.0, -2.49, false).unwrap();
        assert_eq!(tr.verdict, Verdict::Tracked);
        assert!(tr.final_distance <= 0.05 + 1e-9);
        for w in tr.samples.windows(2) {
            assert!(w[1].t > w[0].t);
        }
    }

    #[test]
    fn fast_forcing_destabilizes_somewhere() {
        let (sys, forcing) = ctx_parts(0.216, 0.01);
        let ctx = FlowContext::new(&sys, &forcing, IntegratorSettings::default()).unwrap();
        assert_eq!(ctx.singularities().len(), 2);
        let verdicts: Vec<Verdict> = [-1.0, -0.5, 0.0, 0.3]
            .iter()
            .map(|&x| ctx.integrate_from_manifold(x, -0.7, false).unwrap().verdict)
            .collect();
        assert!(verdicts.contains(&Verdict::Destabilized), "{verdicts:?}");
        let tr = ctx.integrate_from_manifold(0.3, -0.7, false).unwrap();
        let last = tr.last().unwrap();
        assert!(last.x >= 0.5 + 1.5 - 1e-9);
    }

    #[test]
    fn stable_equilibrium_under_constant_forcing() {
        let sys = builtin_system("paper-example", 0.01).unwrap();
        let forcing = ForcingProfile::new(ForcingKind::Constant, 1.0, 0.3).unwrap();
        let ctx = FlowContext::new(&sys, &forcing, IntegratorSettings::default()).unwrap();
        let tr = ctx.integrate_full(0.0, -1.0, 0.0).unwrap();
        assert_eq!(tr.verdict, Verdict::Tracked);
        assert!(tr.final_distance < 1e-9);
    }

    #[test]
    fn reduced_flow_hits_fold_above_critical_rate() {
        let (sys, forcing) = ctx_parts(0.216, 0.01);
        let ctx = FlowContext::new(&sys, &forcing, IntegratorSettings::default()).unwrap();
        let tau0 = forcing.inverse(-2.4).unwrap();
        let tr = ctx.integrate_reduced(0.0, tau0).unwrap();
        assert_eq!(tr.verdict, Verdict::HitFold);
    }

    #[test]
    fn reduced_flow_tracks_below_critical_rate() {
        let (sys, forcing) = ctx_parts(0.19, 0.01);
        let ctx = FlowContext::new(&sys, &forcing, IntegratorSettings::default()).unwrap();
        for x in [-1.0, 0.0, 0.3, 0.45] {
            let tau0 = forcing.inverse(-1.0).unwrap();
            let tr = ctx.integrate_reduced(x, tau0).unwrap();
            assert_eq!(tr.verdict, Verdict::Tracked, "x0 = {x}");
        }
    }

    #[test]
    fn desing_flow_reverses_on_repelling_branch() {
        let (sys, forcing) = ctx_parts(0.216, 0.01);
        let s = IntegratorSettings::default();
        let tr = integrate_desing(&sys, &forcing, 0.8, 0.0, (0.0, 0.5), &s, 10.0).unwrap();
        assert!(tr.last().unwrap().tau < 0.0);
        let tr = integrate_desing(&sys, &forcing, 0.0, 0.0, (0.0, 0.5), &s, 10.0).unwrap();
        assert!(tr.last().unwrap().tau > 0.0);
    }

    #[test]
    fn desing_steady_at_folded_saddle() {
        let sys = builtin_system("paper-example", 0.01).unwrap();
        let forcing = ForcingProfile::exponential(2.5, 1.0).unwrap();
        let tau = forcing.inverse(2.0).unwrap();
        let tr = integrate_desing(&sys, &forcing, 0.5, tau, (0.0, 5.0), &IntegratorSettings::default(), 10.0).unwrap();
        let last = tr.last().unwrap();
        assert!((last.x - 0.5).abs() < 1e-9 && (last.tau - tau).abs() < 1e-9);
    }
}
