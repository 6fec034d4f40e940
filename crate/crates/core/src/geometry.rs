//! Critical manifold `S(lambda) = {f = 0}`, its fold and the frozen stable state.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{ForcingProfile, SystemDefinition};
use crate::roots;

/// Residual bound for points reported on `S` and on the fold.
pub const ROOT_TOL: f64 = 1e-12;
/// Minimum curvature `|d2f/dx2|` for a fold to count as quadratic.
pub const DEGENERACY_TOL: f64 = 1e-6;
/// Samples closer than this to a fold carry no stability label.
pub const FOLD_EXCLUSION: f64 = 1e-9;
/// Default x-window searched for folds and equilibria.
pub const DEFAULT_X_RANGE: (f64, f64) = (-5.0, 5.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stability {
    Attracting,
    Repelling,
}

impl Stability {
    pub fn name(self) -> &'static str {
        match self {
            Stability::Attracting => "attracting",
            Stability::Repelling => "repelling",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FoldPoint {
    pub x_f: f64,
    pub y_f: f64,
    pub lambda: f64,
    pub second_deriv: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct Branch {
    pub x_interval: (f64, f64),
    /// `(x, y(x))` samples strictly inside the interval.
    pub samples: Vec<(f64, f64)>,
    pub stability: Stability,
}

#[derive(Debug, Clone, Serialize)]
pub struct CriticalManifoldSlice {
    pub lambda: f64,
    pub branches: Vec<Branch>,
    pub folds: Vec<FoldPoint>,
    pub equilibrium: Option<(f64, f64)>,
}

/// A point projected onto the critical manifold.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub x: f64,
    pub y: f64,
    pub on_fold: bool,
}

fn manifold_y(sys: &SystemDefinition, x: f64, lambda: f64) -> Result<f64> {
    sys.manifold_y(x, lambda, 0.0).ok_or_else(|| {
        Error::Assumption(format!(
            "critical manifold is not a graph over x at (x, lambda) = ({x}, {lambda})"
        ))
    })
}

/// `df/dx` restricted to `S`, as a function of `x`.
fn fold_function(sys: &SystemDefinition, x: f64, lambda: f64) -> f64 {
    match sys.manifold_y(x, lambda, 0.0) {
        Some(y) => sys.f_x(x, y, lambda),
        None => f64::NAN,
    }
}

/// All folds of `S(lambda)` inside `x_range`, each satisfying the quadratic-fold test.
pub fn fold_points(sys: &SystemDefinition, lambda: f64, x_range: (f64, f64)) -> Result<Vec<FoldPoint>> {
    let xs = roots::scan_roots(|x| fold_function(sys, x, lambda), x_range.0, x_range.1, 400, 1e-15);
    xs.into_iter()
        .map(|x| {
            let y = manifold_y(sys, x, lambda)?;
            let jet = sys.jet(x, y, lambda);
            if jet.f.abs() > 1e-10 || jet.f_x.abs() > 1e-10 {
                return Err(Error::Assumption(format!(
                    "fold at x = {x} not resolved (f = {:e}, f_x = {:e})",
                    jet.f, jet.f_x
                )));
            }
            if jet.f_xx.abs() < DEGENERACY_TOL {
                return Err(Error::Assumption(format!(
                    "fold at (x, lambda) = ({x}, {lambda}) is not quadratic (f_xx = {:e})",
                    jet.f_xx
                )));
            }
            Ok(FoldPoint {
                x_f: x,
                y_f: y,
                lambda,
                second_deriv: jet.f_xx,
            })
        })
        .collect()
}

/// The single fold required by (A1).
pub fn single_fold(sys: &SystemDefinition, lambda: f64, x_range: (f64, f64)) -> Result<FoldPoint> {
    let folds = fold_points(sys, lambda, x_range)?;
    match folds.as_slice() {
        [fold] => Ok(*fold),
        [] => Err(Error::Assumption(format!("no fold of S at lambda = {lambda}"))),
        _ => Err(Error::Assumption(format!(
            "{} folds of S at lambda = {lambda}; a single fold is required",
            folds.len()
        ))),
    }
}

/// Newton continuation of the fold position from a nearby `guess`.
pub fn fold_x(sys: &SystemDefinition, lambda: f64, guess: f64) -> Result<f64> {
    let mut x = guess;
    for _ in 0..40 {
        let y = manifold_y(sys, x, lambda)?;
        let jet = sys.jet(x, y, lambda);
        // d/dx f_x(x, y_S(x)) = f_xx + f_xy * dy_S/dx, dy_S/dx = -f_x / f_y
        let slope = jet.f_xx - jet.f_xy * jet.f_x / jet.f_y;
        if slope == 0.0 || !slope.is_finite() {
            break;
        }
        let step = jet.f_x / slope;
        x -= step;
        if step.abs() <= 1e-15 * (1.0 + x.abs()) {
            return Ok(x);
        }
    }
    let fold = single_fold(sys, lambda, (guess - 5.0, guess + 5.0))?;
    Ok(fold.x_f)
}

/// Fold curve over a sequence of forcing values, by predictor-corrector continuation.
pub fn fold_curve(sys: &SystemDefinition, lambdas: &[f64], x_range: (f64, f64)) -> Result<Vec<FoldPoint>> {
    let mut out: Vec<FoldPoint> = Vec::with_capacity(lambdas.len());
    for (n, &lambda) in lambdas.iter().enumerate() {
        let x = match n {
            0 => single_fold(sys, lambda, x_range)?.x_f,
            1 => fold_x(sys, lambda, out[0].x_f)?,
            _ => {
                let (a, b) = (out[n - 2], out[n - 1]);
                let slope = if b.lambda != a.lambda {
                    (b.x_f - a.x_f) / (b.lambda - a.lambda)
                } else {
                    0.0
                };
                fold_x(sys, lambda, b.x_f + slope * (lambda - b.lambda))?
            }
        };
        let y = manifold_y(sys, x, lambda)?;
        out.push(FoldPoint {
            x_f: x,
            y_f: y,
            lambda,
            second_deriv: sys.f_xx(x, y, lambda),
        });
    }
    Ok(out)
}

fn stability_at(sys: &SystemDefinition, x: f64, y: f64, lambda: f64) -> Stability {
    if sys.f_x(x, y, lambda) < 0.0 {
        Stability::Attracting
    } else {
        Stability::Repelling
    }
}

/// Frozen-system stability test: the Jacobian `[[f_x/delta, f_y/delta], [g_x, g_y]]`
/// has eigenvalues with negative real parts. For `delta = 0` the singular limit
/// criterion `f_x < 0`, `f_x g_y - f_y g_x > 0` is used.
fn frozen_stable(sys: &SystemDefinition, x: f64, y: f64, lambda: f64) -> bool {
    let j = sys.jet(x, y, lambda);
    let delta = sys.delta();
    if delta > 0.0 {
        let tr = j.f_x / delta + j.g_y;
        let det = (j.f_x * j.g_y - j.f_y * j.g_x) / delta;
        tr < 0.0 && det > 0.0
    } else {
        j.f_x < 0.0 && j.f_x * j.g_y - j.f_y * j.g_x > 0.0
    }
}

/// Equilibria of the frozen system on `S(lambda)` inside `x_range`.
pub fn equilibria(sys: &SystemDefinition, lambda: f64, x_range: (f64, f64)) -> Vec<(f64, f64)> {
    let g_on_s = |x: f64| match sys.manifold_y(x, lambda, 0.0) {
        Some(y) => sys.eval_field(x, y, lambda).1,
        None => f64::NAN,
    };
    roots::scan_roots(g_on_s, x_range.0, x_range.1, 400, 1e-15)
        .into_iter()
        .filter_map(|x| sys.manifold_y(x, lambda, 0.0).map(|y| (x, y)))
        .collect()
}

/// The unique asymptotically stable state on the attracting branch next to the fold (A2).
pub fn stable_state(sys: &SystemDefinition, lambda: f64, x_range: (f64, f64)) -> Result<(f64, f64)> {
    let fold = single_fold(sys, lambda, x_range)?;
    let attracting_side = attracting_direction(sys, &fold);
    let candidates: Vec<(f64, f64)> = equilibria(sys, lambda, x_range)
        .into_iter()
        .filter(|&(x, y)| {
            (x - fold.x_f) * attracting_side > 0.0 && stability_at(sys, x, y, lambda) == Stability::Attracting
        })
        .collect();
    match candidates.as_slice() {
        [(x, y)] => {
            let (f, g) = sys.eval_field(*x, *y, lambda);
            if f.abs() > 1e-10 || g.abs() > 1e-10 {
                return Err(Error::Assumption(format!(
                    "stable state at lambda = {lambda} not resolved (f = {f:e}, g = {g:e})"
                )));
            }
            if !frozen_stable(sys, *x, *y, lambda) {
                return Err(Error::Assumption(format!(
                    "steady state ({x}, {y}) at lambda = {lambda} is not asymptotically stable"
                )));
            }
            Ok((*x, *y))
        }
        [] => Err(Error::Assumption(format!(
            "no steady state on the attracting branch at lambda = {lambda}"
        ))),
        many => Err(Error::Assumption(format!(
            "{} steady states on the attracting branch at lambda = {lambda}; exactly one is required",
            many.len()
        ))),
    }
}

/// +1 when `S^a` lies at larger `x` than the fold, -1 otherwise.
pub fn attracting_direction(sys: &SystemDefinition, fold: &FoldPoint) -> f64 {
    let probe = fold.x_f - 1e-3;
    let y = sys.manifold_y(probe, fold.lambda, fold.y_f).unwrap_or(fold.y_f);
    if stability_at(sys, probe, y, fold.lambda) == Stability::Attracting {
        -1.0
    } else {
        1.0
    }
}

/// Samples `S(lambda)` over `x_range` and locates its fold and stable state.
pub fn slice_manifold(
    sys: &SystemDefinition,
    lambda: f64,
    x_range: (f64, f64),
    n_samples: usize,
) -> Result<CriticalManifoldSlice> {
    if n_samples < 2 || !(x_range.0 < x_range.1) {
        return Err(Error::Invalid("slice needs n_samples >= 2 and a nonempty x-range".into()));
    }
    let folds = vec![single_fold(sys, lambda, x_range)?];
    let equilibrium = Some(stable_state(sys, lambda, x_range)?);

    let mut cuts: Vec<f64> = vec![x_range.0];
    cuts.extend(folds.iter().map(|f| f.x_f));
    cuts.push(x_range.1);

    let mut branches = Vec::new();
    for w in cuts.windows(2) {
        let (lo, hi) = (w[0], w[1]);
        if hi - lo <= 2.0 * FOLD_EXCLUSION {
            continue;
        }
        let mid = 0.5 * (lo + hi);
        let y_mid = manifold_y(sys, mid, lambda)?;
        let stability = stability_at(sys, mid, y_mid, lambda);
        let mut samples = Vec::new();
        for i in 0..n_samples {
            let x = x_range.0 + (x_range.1 - x_range.0) * i as f64 / (n_samples - 1) as f64;
            if x < lo || x > hi || folds.iter().any(|f| (x - f.x_f).abs() <= FOLD_EXCLUSION) {
                continue;
            }
            samples.push((x, manifold_y(sys, x, lambda)?));
        }
        branches.push(Branch {
            x_interval: (lo, hi),
            samples,
            stability,
        });
    }
    Ok(CriticalManifoldSlice {
        lambda,
        branches,
        folds,
        equilibrium,
    })
}

/// Projects `x` onto `S(lambda)`. The point must lie on the attracting side of
/// the fold unless `allow_repelling` is set; points on the fold itself are
/// accepted and flagged.
pub fn project_onto_s(
    sys: &SystemDefinition,
    x: f64,
    lambda: f64,
    allow_repelling: bool,
) -> Result<Projection> {
    let x_f = fold_x(sys, lambda, x)?;
    let y = manifold_y(sys, x, lambda)?;
    let on_fold = (x - x_f).abs() <= FOLD_EXCLUSION;
    if !on_fold && !allow_repelling && stability_at(sys, x, y, lambda) == Stability::Repelling {
        return Err(Error::Side {
            x,
            x_fold: x_f,
            side: "repelling",
        });
    }
    Ok(Projection { x, y, on_fold })
}

pub fn project_onto_s_attracting(sys: &SystemDefinition, x: f64, lambda: f64) -> Result<Projection> {
    project_onto_s(sys, x, lambda, false)
}

/// Checks (A1) and (A2) on `n` forcing values spanning the profile's range.
pub fn verify_assumptions(sys: &SystemDefinition, forcing: &ForcingProfile, x_range: (f64, f64)) -> Result<()> {
    let (lo, hi) = (forcing.lambda_min(), forcing.lambda_max());
    let n = if lo == hi { 1 } else { 21 };
    for i in 0..n {
        let lambda = if n == 1 { lo } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 };
        stable_state(sys, lambda, x_range)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin_system;
    use crate::poly::{Poly3, Term};

    fn example() -> SystemDefinition {
        builtin_system("paper-example", 0.01).unwrap()
    }

    #[test]
    fn fold_of_example() {
        let fold = single_fold(&example(), 2.0, DEFAULT_X_RANGE).unwrap();
        assert!((fold.x_f - 0.5).abs() <= 1e-12);
        assert!((fold.y_f + 1.75).abs() <= 1e-12);
        assert_eq!(fold.second_deriv, 2.0);
    }

    #[test]
    fn stable_state_of_example() {
        let (x, y) = stable_state(&example(), 0.0, DEFAULT_X_RANGE).unwrap();
        assert!(x.abs() <= 1e-12 && y.abs() <= 1e-12);
        let (x, y) = stable_state(&example(), 1.3, DEFAULT_X_RANGE).unwrap();
        assert!(x.abs() <= 1e-12 && (y + 1.3).abs() <= 1e-12);
    }

    #[test]
    fn slice_labels_and_excludes_fold() {
        let slice = slice_manifold(&example(), 0.7, (-1.0, 2.0), 301).unwrap();
        assert_eq!(slice.branches.len(), 2);
        for b in &slice.branches {
            for &(x, y) in &b.samples {
                assert!((x - 0.5).abs() > FOLD_EXCLUSION);
                assert!((y - (-0.7 - x * (x - 1.0))).abs() <= 1e-12);
                let expected = if x < 0.5 { Stability::Attracting } else { Stability::Repelling };
                assert_eq!(b.stability, expected);
            }
        }
    }

    #[test]
    fn projection_examples() {
        let sys = example();
        let p = project_onto_s_attracting(&sys, 0.0, 1.5).unwrap();
        assert_eq!(p.y, -1.5);
        let p = project_onto_s_attracting(&sys, 0.5, 0.0).unwrap();
        assert!(p.on_fold && (p.y - 0.25).abs() < 1e-15);
        let p = project_onto_s_attracting(&sys, -1.0, 0.0).unwrap();
        assert_eq!(p.y, -2.0);
        assert!(matches!(
            project_onto_s_attracting(&sys, 0.8, 0.0),
            Err(Error::Side { .. })
        ));
        assert!(project_onto_s(&sys, 0.8, 0.0, true).is_ok());
    }

    #[test]
    fn cubic_fast_field_violates_single_fold() {
        // f = -x^3 + x + y has two folds
        let f = Poly3::from_terms([Term::new(3, 0, 0, -1.0), Term::new(1, 0, 0, 1.0), Term::new(0, 1, 0, 1.0)]);
        let g = Poly3::from_terms([Term::new(1, 0, 0, -1.0)]);
        let sys = SystemDefinition::new("cubic", f, g, 0.01).unwrap();
        assert!(single_fold(&sys, 0.0, DEFAULT_X_RANGE).unwrap_err().is_assumption());
    }

    #[test]
    fn missing_equilibrium_violates_a2() {
        // g = 1 never vanishes
        let sys = example();
        let g = Poly3::from_terms([Term::new(0, 0, 0, 1.0)]);
        let sys = SystemDefinition::new("no-eq", sys.f_poly().clone(), g, 0.01).unwrap();
        assert!(stable_state(&sys, 0.0, DEFAULT_X_RANGE).unwrap_err().is_assumption());
    }

    #[test]
    fn fold_continuation_tracks_moving_fold() {
        // f = x^2 - lambda x + y: fold at x = lambda / 2
        let f = Poly3::from_terms([Term::new(2, 0, 0, 1.0), Term::new(1, 0, 1, -1.0), Term::new(0, 1, 0, 1.0)]);
        let g = Poly3::from_terms([Term::new(1, 0, 0, -1.0)]);
        let sys = SystemDefinition::new("moving", f, g, 0.01).unwrap();
        let lambdas: Vec<f64> = (0..50).map(|i| -2.0 + 0.08 * i as f64).collect();
        let curve = fold_curve(&sys, &lambdas, DEFAULT_X_RANGE).unwrap();
        for p in curve {
            assert!((p.x_f - p.lambda / 2.0).abs() < 1e-12);
        }
    }
}
