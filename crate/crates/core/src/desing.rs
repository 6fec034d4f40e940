//! Reduced flow on the critical manifold, its desingularization, and folded singularities.
//!
//! On `S` the slow flow projected onto the `(x, tau)` plane is
//!
//! ```text
//! dx/dtau = -N(x, tau) / (eps f_x),   N = g f_y + eps f_lambda lambda'(tau)
//! ```
//!
//! which blows up on the fold `f_x = 0`. Rescaling time by `dtau = -ds eps f_x`
//! gives the desingularized field `(dx/ds, dtau/ds) = (N, -eps f_x)`, regular on
//! the fold and with the direction of time reversed on the repelling sheet.
//! Zeros of `N` on the fold are folded singularities.

use num_complex::Complex64;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry;
use crate::model::{ForcingProfile, SystemDefinition};
use crate::roots;

/// Nodes of the dense scan of the fold condition along the fold.
pub const SCAN_NODES: usize = 2000;
/// Bisection width for roots of the fold condition.
pub const ROOT_TAU_TOL: f64 = 1e-12;
/// Residual bound for a reported folded singularity.
pub const SINGULARITY_RESIDUAL: f64 = 1e-10;
/// Eigenvalues with `|Im| <=` this are real; with `|xi| <=` this are zero.
pub const EIG_TOL: f64 = 1e-8;
/// Width of the epsilon bracket returned by [`estimate_critical_rate`].
pub const CRITICAL_RATE_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SingularityKind {
    FoldedSaddle,
    FoldedNodeStable,
    FoldedNodeUnstable,
    FoldedFocusStable,
    FoldedFocusUnstable,
    FoldedSaddleNodeI,
    FoldedCentre,
}

impl SingularityKind {
    pub fn name(self) -> &'static str {
        match self {
            SingularityKind::FoldedSaddle => "folded-saddle",
            SingularityKind::FoldedNodeStable => "folded-node-stable",
            SingularityKind::FoldedNodeUnstable => "folded-node-unstable",
            SingularityKind::FoldedFocusStable => "folded-focus-stable",
            SingularityKind::FoldedFocusUnstable => "folded-focus-unstable",
            SingularityKind::FoldedSaddleNodeI => "folded-saddle-node-I",
            SingularityKind::FoldedCentre => "folded-centre",
        }
    }

    pub fn is_node(self) -> bool {
        matches!(self, SingularityKind::FoldedNodeStable | SingularityKind::FoldedNodeUnstable)
    }

    pub fn is_focus(self) -> bool {
        matches!(self, SingularityKind::FoldedFocusStable | SingularityKind::FoldedFocusUnstable)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FoldedSingularity {
    pub x_star: f64,
    pub tau_star: f64,
    pub lambda_star: f64,
    pub eigenvalues: [Complex64; 2],
    /// Unit eigenvectors in `(x, tau)` matching `eigenvalues`; absent for complex pairs.
    pub eigenvectors: Option<[[f64; 2]; 2]>,
    pub kind: SingularityKind,
    /// Sign of the normal-form coefficient `b = det J / (2 eps)`.
    pub b_sign: i8,
    pub b_coeff: f64,
    /// Normal-form coefficient `c = tr J`.
    pub c_coeff: f64,
    pub jacobian: [[f64; 2]; 2],
    /// Fold condition at the reported point.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CriticalRateReport {
    pub epsilon_c_singular: f64,
    pub epsilon_c_empirical: Option<f64>,
    pub e_delta: Option<f64>,
    pub order_exponent: Option<f64>,
}

impl CriticalRateReport {
    pub fn singular(epsilon_c: f64) -> Self {
        Self {
            epsilon_c_singular: epsilon_c,
            epsilon_c_empirical: None,
            e_delta: None,
            order_exponent: None,
        }
    }

    pub fn with_empirical(mut self, epsilon_c_empirical: f64) -> Self {
        self.epsilon_c_empirical = Some(epsilon_c_empirical);
        self.e_delta = Some(epsilon_c_empirical - self.epsilon_c_singular);
        self
    }
}

/// Point of the critical manifold lifted from `(x, tau)`.
#[derive(Debug, Clone, Copy)]
struct Lift {
    y: f64,
    lambda: f64,
    dlambda: f64,
}

/// The reduced and desingularized vector fields of one system/forcing pair.
#[derive(Debug, Clone, Copy)]
pub struct DesingularizedField<'a> {
    sys: &'a SystemDefinition,
    forcing: &'a ForcingProfile,
}

impl<'a> DesingularizedField<'a> {
    pub fn new(sys: &'a SystemDefinition, forcing: &'a ForcingProfile) -> Self {
        Self { sys, forcing }
    }

    pub fn system(&self) -> &'a SystemDefinition {
        self.sys
    }

    pub fn forcing(&self) -> &'a ForcingProfile {
        self.forcing
    }

    fn lift(&self, x: f64, tau: f64) -> Lift {
        let lambda = self.forcing.lambda(tau);
        let y = self.sys.manifold_y(x, lambda, 0.0).unwrap_or(f64::NAN);
        Lift {
            y,
            lambda,
            dlambda: self.forcing.dlambda(tau),
        }
    }

    /// `y` on `S` above `(x, tau)`.
    pub fn manifold_y(&self, x: f64, tau: f64) -> f64 {
        self.lift(x, tau).y
    }

    /// Numerator `N = g f_y + eps f_lambda lambda'` on `S`.
    pub fn numerator(&self, x: f64, tau: f64) -> f64 {
        let l = self.lift(x, tau);
        let j = self.sys.first_partials(x, l.y, l.lambda);
        j.g * j.f_y + self.forcing.epsilon() * j.f_l * l.dlambda
    }

    /// Reduced flow `dx/dtau` on `S`; undefined on the fold.
    pub fn reduced_rhs(&self, x: f64, tau: f64) -> Result<f64> {
        let l = self.lift(x, tau);
        let j = self.sys.first_partials(x, l.y, l.lambda);
        if j.f_x.abs() <= 1e-12 {
            return Err(Error::OnFold { x, tau });
        }
        let eps = self.forcing.epsilon();
        Ok(-(j.g * j.f_y + eps * j.f_l * l.dlambda) / (eps * j.f_x))
    }

    /// Desingularized field `(dx/ds, dtau/ds)`; defined everywhere on `S`.
    pub fn desing_rhs(&self, x: f64, tau: f64) -> (f64, f64) {
        let l = self.lift(x, tau);
        let j = self.sys.first_partials(x, l.y, l.lambda);
        let eps = self.forcing.epsilon();
        (j.g * j.f_y + eps * j.f_l * l.dlambda, -eps * j.f_x)
    }

    /// Exact Jacobian of [`Self::desing_rhs`] with respect to `(x, tau)`.
    pub fn jacobian(&self, x: f64, tau: f64) -> [[f64; 2]; 2] {
        let l = self.lift(x, tau);
        let j = self.sys.jet(x, l.y, l.lambda);
        let eps = self.forcing.epsilon();
        let d2 = self.forcing.d2lambda(tau);
        // y_S(x, lambda): dy/dx = -f_x/f_y, dy/dlambda = -f_l/f_y
        let dy_dx = -j.f_x / j.f_y;
        let dy_dl = -j.f_l / j.f_y;
        // N(x, y, lambda) = g f_y + eps f_l lambda'
        let n_x = j.g_x * j.f_y + j.g * j.f_xy + eps * j.f_xl * l.dlambda;
        let n_y = j.g_y * j.f_y + j.g * j.f_yy + eps * j.f_yl * l.dlambda;
        let n_l = j.g_l * j.f_y + j.g * j.f_yl + eps * j.f_ll * l.dlambda;
        let dn_dx = n_x + n_y * dy_dx;
        let dn_dtau = (n_y * dy_dl + n_l) * l.dlambda + eps * j.f_l * d2;
        // K = -eps f_x
        let dk_dx = -eps * (j.f_xx + j.f_xy * dy_dx);
        let dk_dtau = -eps * (j.f_xy * dy_dl + j.f_xl) * l.dlambda;
        [[dn_dx, dn_dtau], [dk_dx, dk_dtau]]
    }

    /// Fold position at slow time `tau`, continued from `guess`.
    pub fn fold_x(&self, tau: f64, guess: f64) -> Result<f64> {
        geometry::fold_x(self.sys, self.forcing.lambda(tau), guess)
    }

    /// Fold condition `N` evaluated on the fold at slow time `tau`.
    pub fn fold_condition(&self, tau: f64, guess: f64) -> Result<(f64, f64)> {
        let x_f = self.fold_x(tau, guess)?;
        Ok((self.numerator(x_f, tau), x_f))
    }

    /// Every folded singularity in the (truncated) slow-time domain.
    ///
    /// Sign changes of the fold condition on [`SCAN_NODES`] intervals are refined by
    /// bisection; extrema of the condition between nodes are checked as well so that
    /// close pairs of roots and tangencies (the saddle-node case) are not missed.
    pub fn find_folded_singularities(&self) -> Result<Vec<FoldedSingularity>> {
        let (lo, hi) = self.forcing.scan_domain();
        let lambda0 = self.forcing.lambda(lo);
        let mut guess = geometry::single_fold(self.sys, lambda0, geometry::DEFAULT_X_RANGE)?.x_f;
        let nodes: Vec<f64> = (0..=SCAN_NODES)
            .map(|i| lo + (hi - lo) * i as f64 / SCAN_NODES as f64)
            .collect();
        let mut values = Vec::with_capacity(nodes.len());
        let mut folds = Vec::with_capacity(nodes.len());
        for &t in &nodes {
            let (v, x_f) = self.fold_condition(t, guess)?;
            guess = x_f;
            values.push(v);
            folds.push(x_f);
        }
        let cond = |t: f64, g: f64| self.fold_condition(t, g).map(|(v, _)| v).unwrap_or(f64::NAN);

        let mut taus: Vec<f64> = Vec::new();
        for i in 0..SCAN_NODES {
            let (va, vb) = (values[i], values[i + 1]);
            if va == 0.0 {
                taus.push(nodes[i]);
            } else if vb != 0.0 && (va > 0.0) != (vb > 0.0) {
                let g = folds[i];
                taus.push(roots::bisect(|t| cond(t, g), nodes[i], nodes[i + 1], ROOT_TAU_TOL));
            }
        }
        if values[SCAN_NODES] == 0.0 {
            taus.push(nodes[SCAN_NODES]);
        }
        // Interior extrema that approach zero without a sign change at the nodes.
        for i in 1..SCAN_NODES {
            let (a, b, c) = (values[i - 1], values[i], values[i + 1]);
            let same_sign = (a > 0.0) == (b > 0.0) && (b > 0.0) == (c > 0.0) && a != 0.0 && b != 0.0 && c != 0.0;
            if !same_sign || !(b.abs() <= a.abs() && b.abs() <= c.abs()) {
                continue;
            }
            let s = b.signum();
            let g = folds[i];
            let toward_zero = |t: f64| -s * cond(t, g);
            let (t_ext, v_ext) = roots::golden_max(toward_zero, nodes[i - 1], nodes[i + 1], 1e-14, |_, _| false);
            let v_ext = -s * v_ext;
            if v_ext.abs() <= SINGULARITY_RESIDUAL {
                taus.push(t_ext);
            } else if (v_ext > 0.0) != (s > 0.0) {
                taus.push(roots::bisect(|t| cond(t, g), nodes[i - 1], t_ext, ROOT_TAU_TOL));
                taus.push(roots::bisect(|t| cond(t, g), t_ext, nodes[i + 1], ROOT_TAU_TOL));
            }
        }
        taus.sort_by(f64::total_cmp);
        taus.dedup_by(|a, b| (*a - *b).abs() <= 1e-9);

        let mut out = Vec::with_capacity(taus.len());
        for tau in taus {
            let (residual, x_star) = self.fold_condition(tau, guess)?;
            if residual.abs() > SINGULARITY_RESIDUAL {
                continue;
            }
            out.push(self.singularity_at(x_star, tau, residual));
        }
        Ok(out)
    }

    /// Builds and classifies the singularity record at a point of the fold.
    pub fn singularity_at(&self, x_star: f64, tau_star: f64, residual: f64) -> FoldedSingularity {
        let jacobian = self.jacobian(x_star, tau_star);
        let (eigenvalues, kind) = classify_eigenvalues(&jacobian);
        let eps = self.forcing.epsilon();
        let det = jacobian[0][0] * jacobian[1][1] - jacobian[0][1] * jacobian[1][0];
        let trace = jacobian[0][0] + jacobian[1][1];
        let b_coeff = det / (2.0 * eps);
        let b_sign = if kind == SingularityKind::FoldedSaddleNodeI {
            0
        } else if b_coeff < 0.0 {
            -1
        } else {
            1
        };
        FoldedSingularity {
            x_star,
            tau_star,
            lambda_star: self.forcing.lambda(tau_star),
            eigenvalues,
            eigenvectors: eigenvectors(&jacobian, &eigenvalues),
            kind,
            b_sign,
            b_coeff,
            c_coeff: trace,
            jacobian,
            residual,
        }
    }
}

/// Eigenvalues of a 2x2 Jacobian (ordered by decreasing real part) and the
/// singularity type they imply.
pub fn classify_eigenvalues(j: &[[f64; 2]; 2]) -> ([Complex64; 2], SingularityKind) {
    let tr = j[0][0] + j[1][1];
    let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
    let disc = tr * tr - 4.0 * det;
    let eig = if disc >= 0.0 {
        let r = disc.sqrt();
        // avoid cancellation for the smaller root
        let big = if tr >= 0.0 { 0.5 * (tr + r) } else { 0.5 * (tr - r) };
        let small = if big != 0.0 { det / big } else { 0.0 };
        let (a, b) = if big >= small { (big, small) } else { (small, big) };
        [Complex64::new(a, 0.0), Complex64::new(b, 0.0)]
    } else {
        let im = 0.5 * (-disc).sqrt();
        [Complex64::new(0.5 * tr, im), Complex64::new(0.5 * tr, -im)]
    };
    let kind = if eig.iter().any(|z| z.norm() <= EIG_TOL) {
        SingularityKind::FoldedSaddleNodeI
    } else if eig[0].im.abs() > EIG_TOL {
        if eig[0].re.abs() <= EIG_TOL {
            SingularityKind::FoldedCentre
        } else if eig[0].re < 0.0 {
            SingularityKind::FoldedFocusStable
        } else {
            SingularityKind::FoldedFocusUnstable
        }
    } else if eig[0].re * eig[1].re < 0.0 {
        SingularityKind::FoldedSaddle
    } else if eig[0].re < 0.0 {
        SingularityKind::FoldedNodeStable
    } else {
        SingularityKind::FoldedNodeUnstable
    };
    (eig, kind)
}

fn eigenvectors(j: &[[f64; 2]; 2], eig: &[Complex64; 2]) -> Option<[[f64; 2]; 2]> {
    if eig[0].im.abs() > EIG_TOL {
        return None;
    }
    let vec_for = |xi: f64| -> [f64; 2] {
        // (J - xi I) v = 0: pick the better-conditioned row
        let (a, b) = (j[0][0] - xi, j[0][1]);
        let (c, d) = (j[1][0], j[1][1] - xi);
        let v = if a.abs() + b.abs() >= c.abs() + d.abs() {
            [-b, a]
        } else {
            [-d, c]
        };
        let n = v[0].hypot(v[1]);
        if n == 0.0 {
            [1.0, 0.0]
        } else {
            [v[0] / n, v[1] / n]
        }
    };
    Some([vec_for(eig[0].re), vec_for(eig[1].re)])
}

/// Singular-limit critical rate: the infimum of `eps` at which a folded
/// singularity exists, by bisection inside `eps_bracket`.
pub fn estimate_critical_rate(
    sys: &SystemDefinition,
    forcing: &ForcingProfile,
    eps_bracket: (f64, f64),
) -> Result<CriticalRateReport> {
    let (mut lo, mut hi) = eps_bracket;
    if !(lo > 0.0 && lo < hi) {
        return Err(Error::Bracket(format!("need 0 < lo < hi, got ({lo}, {hi})")));
    }
    let has = |eps: f64| -> Result<bool> {
        let f = forcing.with_epsilon(eps)?;
        Ok(!DesingularizedField::new(sys, &f).find_folded_singularities()?.is_empty())
    };
    let (at_lo, at_hi) = (has(lo)?, has(hi)?);
    if at_lo || !at_hi {
        return Err(Error::Bracket(format!(
            "folded singularities present at eps = {lo}: {at_lo}, at eps = {hi}: {at_hi}; expected absent then present"
        )));
    }
    while hi - lo > CRITICAL_RATE_TOL {
        let mid = 0.5 * (lo + hi);
        if has(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(CriticalRateReport::singular(0.5 * (lo + hi)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::builtin_system;

    fn example() -> SystemDefinition {
        builtin_system("paper-example", 0.0).unwrap()
    }

    #[test]
    fn reduced_rhs_at_stable_state() {
        let sys = example();
        let forcing = ForcingProfile::logistic(2.5, 0.216).unwrap();
        let field = DesingularizedField::new(&sys, &forcing);
        let v = field.reduced_rhs(0.0, 0.0).unwrap();
        assert!((v - 2.5).abs() < 1e-12);
        assert!(matches!(field.reduced_rhs(0.5, 0.3), Err(Error::OnFold { .. })));
    }

    #[test]
    fn desing_rhs_matches_closed_forms() {
        let sys = example();
        let lm = 2.5;
        for eps in [0.19, 0.216, 0.27] {
            let logistic = ForcingProfile::logistic(lm, eps).unwrap();
            let expo = ForcingProfile::exponential(lm, eps).unwrap();
            for &(x, tau) in &[(0.0, -1.0), (-0.4, 0.3), (0.5, 0.9), (1.2, 2.0)] {
                let (dx, dt) = DesingularizedField::new(&sys, &logistic).desing_rhs(x, tau);
                let l = logistic.lambda(tau);
                assert!((dx - (-x + eps / lm * (lm * lm - l * l))).abs() < 1e-12);
                assert!((dt - eps * (1.0 - 2.0 * x)).abs() < 1e-15);
                let (dx, dt) = DesingularizedField::new(&sys, &expo).desing_rhs(x, tau);
                let l = expo.lambda(tau);
                assert!((dx - (-x + eps * (lm - l))).abs() < 1e-12);
                assert!((dt - eps * (1.0 - 2.0 * x)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let sys = example();
        let forcing = ForcingProfile::logistic(2.5, 0.216).unwrap();
        let field = DesingularizedField::new(&sys, &forcing);
        for &(x, tau) in &[(0.5, 0.3), (-0.2, -0.8), (0.9, 1.1)] {
            let j = field.jacobian(x, tau);
            let h = 1e-6;
            let (ax, at) = field.desing_rhs(x + h, tau);
            let (bx, bt) = field.desing_rhs(x - h, tau);
            let (cx, ct) = field.desing_rhs(x, tau + h);
            let (dx, dt) = field.desing_rhs(x, tau - h);
            let fd = [[(ax - bx) / (2.0 * h), (cx - dx) / (2.0 * h)], [(at - bt) / (2.0 * h), (ct - dt) / (2.0 * h)]];
            for r in 0..2 {
                for c in 0..2 {
                    assert!((j[r][c] - fd[r][c]).abs() < 1e-7, "{r}{c}: {} vs {}", j[r][c], fd[r][c]);
                }
            }
        }
    }

    #[test]
    fn classification_rules() {
        let (_, k) = classify_eigenvalues(&[[-1.0, 1.0], [0.5, 0.0]]);
        assert_eq!(k, SingularityKind::FoldedSaddle);
        let (_, k) = classify_eigenvalues(&[[-1.0, -0.1], [1.0, 0.0]]);
        assert_eq!(k, SingularityKind::FoldedNodeStable);
        let (_, k) = classify_eigenvalues(&[[-1.0, -1.0], [1.0, 0.0]]);
        assert_eq!(k, SingularityKind::FoldedFocusStable);
        let (_, k) = classify_eigenvalues(&[[0.0, -1.0], [1.0, 0.0]]);
        assert_eq!(k, SingularityKind::FoldedCentre);
        let (e, k) = classify_eigenvalues(&[[-1.0, 0.0], [0.3, 0.0]]);
        assert_eq!(k, SingularityKind::FoldedSaddleNodeI);
        assert!(e[0].norm() <= EIG_TOL);
        let (_, k) = classify_eigenvalues(&[[1.0, 0.1], [-1.0, 0.0]]);
        assert_eq!(k, SingularityKind::FoldedNodeUnstable);
    }

    #[test]
    fn no_singularities_below_threshold() {
        let sys = example();
        let forcing = ForcingProfile::logistic(2.5, 0.19).unwrap();
        assert!(DesingularizedField::new(&sys, &forcing).find_folded_singularities().unwrap().is_empty());
    }

    #[test]
    fn saddle_node_at_threshold() {
        let sys = example();
        let forcing = ForcingProfile::logistic(2.5, 0.2).unwrap();
        let found = DesingularizedField::new(&sys, &forcing).find_folded_singularities().unwrap();
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].kind, SingularityKind::FoldedSaddleNodeI);
        assert_eq!(found[0].b_sign, 0);
        assert!(found[0].lambda_star.abs() < 1e-6);
    }

    #[test]
    fn exponential_case_single_saddle() {
        let sys = example();
        let forcing = ForcingProfile::exponential(2.5, 1.0).unwrap();
        let found = DesingularizedField::new(&sys, &forcing).find_folded_singularities().unwrap();
        assert_eq!(found.len(), 1);
        assert_eq!(found[0].kind, SingularityKind::FoldedSaddle);
        assert!((found[0].lambda_star - 2.0).abs() < 1e-10);
        assert!((found[0].x_star - 0.5).abs() < 1e-12);
        assert_eq!(found[0].b_sign, -1);
    }

    #[test]
    fn critical_rate_bracket_errors() {
        let sys = example();
        let forcing = ForcingProfile::logistic(2.5, 0.3).unwrap();
        assert!(matches!(
            estimate_critical_rate(&sys, &forcing, (0.25, 0.3)),
            Err(Error::Bracket(_))
        ));
        assert!(matches!(
            estimate_critical_rate(&sys, &forcing, (0.05, 0.1)),
            Err(Error::Bracket(_))
        ));
    }
}
