//! Canards: singular canards of the desingularized flow, maximal canards of the
//! full system located as threshold boundaries, and composite canards that
//! shadow canards of different folded singularities in turn.

use serde::{Deserialize, Serialize};

use crate::desing::{FoldedSingularity, SingularityKind};
use crate::error::{Error, Result};
use crate::flow::{integrate_desing, FlowContext, IntegratorSettings, Trajectory};
use crate::model::{ForcingProfile, SystemDefinition};
use crate::scan::{BandStructure, Boundary, Scanner, Side, TransectOptions};

/// Offset of the seeds from the singularity along its eigenvectors.
pub const SEED_OFFSET: f64 = 1e-6;
/// Maximal canards are bisected to this seed width.
pub const CANARD_SEED_TOL: f64 = 1e-11;
/// Default shadowing tube in the `(x, lambda)` projection.
pub const SHADOW_TUBE: f64 = 0.05;
const SINGULAR_S_SPAN: f64 = 200.0;
const SINGULAR_X_BOUND: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CanardBranch {
    /// Stable eigendirection of a folded saddle.
    SaddleStable,
    /// Unstable eigendirection of a folded saddle (faux canard).
    SaddleUnstable,
    NodeStrong,
    /// Weak eigendirection of a folded node.
    NodeWeak,
}

impl CanardBranch {
    pub fn name(self) -> &'static str {
        match self {
            CanardBranch::SaddleStable => "saddle-stable",
            CanardBranch::SaddleUnstable => "saddle-unstable",
            CanardBranch::NodeStrong => "node-strong",
            CanardBranch::NodeWeak => "node-weak",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathPoint {
    pub x: f64,
    pub tau: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SingularCanard {
    pub singularity: FoldedSingularity,
    pub branch: CanardBranch,
    pub eigenvalue: f64,
    /// Unit eigenvector in `(x, tau)`.
    pub direction: [f64; 2],
    /// Ordered by increasing `tau`; contains the singularity itself.
    pub path: Vec<PathPoint>,
}

impl SingularCanard {
    /// `x` of the path at slow time `tau`, on the attracting side when `attracting`.
    pub fn x_at_tau(&self, tau: f64, attracting: bool) -> Option<f64> {
        let s = &self.singularity;
        let part: Vec<&PathPoint> = self
            .path
            .iter()
            .filter(|p| if attracting { p.tau <= s.tau_star } else { p.tau >= s.tau_star })
            .collect();
        part.windows(2).find_map(|w| {
            let (a, b) = (w[0], w[1]);
            ((a.tau - tau) * (b.tau - tau) <= 0.0 && a.tau != b.tau).then(|| {
                let t = (tau - a.tau) / (b.tau - a.tau);
                a.x + t * (b.x - a.x)
            })
        })
    }
}

/// Singular canards through `singularity`: the stable and unstable directions
/// of a folded saddle, the strong and weak directions of a folded node.
/// Folded foci and centres have none; the saddle-node case has no
/// well-separated pair of directions and also returns none.
pub fn singular_canards(
    sys: &SystemDefinition,
    forcing: &ForcingProfile,
    singularity: &FoldedSingularity,
    settings: &IntegratorSettings,
) -> Result<Vec<SingularCanard>> {
    use SingularityKind::*;
    let branches = match singularity.kind {
        FoldedFocusStable | FoldedFocusUnstable | FoldedCentre | FoldedSaddleNodeI => return Ok(Vec::new()),
        // eigenvalues are ordered by decreasing real part
        FoldedSaddle => [(1, CanardBranch::SaddleStable), (0, CanardBranch::SaddleUnstable)],
        FoldedNodeStable => [(1, CanardBranch::NodeStrong), (0, CanardBranch::NodeWeak)],
        FoldedNodeUnstable => [(0, CanardBranch::NodeStrong), (1, CanardBranch::NodeWeak)],
    };
    let vecs = singularity
        .eigenvectors
        .ok_or_else(|| Error::Degenerate("real eigenvalues without eigenvectors".into()))?;
    let cross = vecs[0][0] * vecs[1][1] - vecs[0][1] * vecs[1][0];
    if cross.abs() < 1e-6 {
        return Err(Error::Degenerate(format!(
            "eigenvectors of the {} at tau = {} are nearly parallel",
            singularity.kind.name(),
            singularity.tau_star
        )));
    }
    let mut settings = *settings;
    settings.max_step = settings.max_step.min(0.05);
    branches
        .iter()
        .map(|&(k, branch)| {
            let xi = singularity.eigenvalues[k].re;
            let v = vecs[k];
            // move away from the singularity: against the flow along stable directions
            let span = if xi < 0.0 { -SINGULAR_S_SPAN } else { SINGULAR_S_SPAN };
            let mut path = vec![PathPoint {
                x: singularity.x_star,
                tau: singularity.tau_star,
                lambda: singularity.lambda_star,
            }];
            for sign in [-1.0, 1.0] {
                let x0 = singularity.x_star + sign * SEED_OFFSET * v[0];
                let t0 = singularity.tau_star + sign * SEED_OFFSET * v[1];
                let tr = integrate_desing(sys, forcing, x0, t0, (0.0, span), &settings, SINGULAR_X_BOUND)?;
                path.extend(tr.samples.iter().map(|s| PathPoint {
                    x: s.x,
                    tau: s.tau,
                    lambda: s.lambda,
                }));
            }
            path.sort_by(|a, b| a.tau.total_cmp(&b.tau));
            Ok(SingularCanard {
                singularity: *singularity,
                branch,
                eigenvalue: xi,
                direction: v,
                path,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CanardKind {
    FoldedSaddle,
    StrongNode,
    WeakNode,
    SecondaryNode,
    Composite,
}

impl CanardKind {
    pub fn name(self) -> &'static str {
        match self {
            CanardKind::FoldedSaddle => "folded-saddle",
            CanardKind::StrongNode => "strong-node",
            CanardKind::WeakNode => "weak-node",
            CanardKind::SecondaryNode => "secondary-node",
            CanardKind::Composite => "composite",
        }
    }

    pub fn is_node(self) -> bool {
        matches!(self, CanardKind::StrongNode | CanardKind::WeakNode | CanardKind::SecondaryNode)
    }
}

/// A piece of a trajectory on `S^r` that stays close to another canard.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Segment {
    pub kind: CanardKind,
    /// Index into the canard list the segment was matched against.
    pub reference: usize,
    pub tau_interval: (f64, f64),
    /// Quantile distance to the reference, see [`shadowed_canard`].
    pub distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MaximalCanard {
    pub kind: CanardKind,
    /// Seed `x` on the section `lambda = section_lambda` of `S^a`.
    pub seed_parameter: f64,
    pub section_lambda: f64,
    pub boundary: Boundary,
    pub path: Trajectory,
    pub dwell_s_r: f64,
    pub segments: Vec<Segment>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MaximalOptions {
    /// Section placement; by default half a unit of slow time before the singularity.
    pub section_lambda: Option<f64>,
    /// Half-width of the first search window around the singular canard's crossing.
    pub window: f64,
    pub samples: usize,
    /// Tracked bands narrower than this count as narrow.
    pub narrow_width: f64,
}

impl Default for MaximalOptions {
    fn default() -> Self {
        Self {
            section_lambda: None,
            window: 0.3,
            samples: 61,
            narrow_width: 0.01,
        }
    }
}

fn branch_kind(branch: CanardBranch) -> CanardKind {
    match branch {
        CanardBranch::SaddleStable | CanardBranch::SaddleUnstable => CanardKind::FoldedSaddle,
        CanardBranch::NodeStrong => CanardKind::StrongNode,
        CanardBranch::NodeWeak => CanardKind::WeakNode,
    }
}

/// Recorded trajectories from both sides of a boundary; the one that stays
/// longer on `S^r` is returned.
pub fn boundary_trajectory(ctx: &FlowContext, boundary: &Boundary, lambda: f64, side: Side) -> Result<Trajectory> {
    let mut settings = *ctx.settings();
    settings.record = true;
    let rec = ctx.with_settings(settings)?;
    let a = rec.integrate_from_manifold(boundary.lo, lambda, side == Side::Sr)?;
    let b = rec.integrate_from_manifold(boundary.hi, lambda, side == Side::Sr)?;
    Ok(if b.stats.dwell_repelling > a.stats.dwell_repelling { b } else { a })
}

/// The maximal canard of the full system near `singular`: the threshold
/// boundary on a section of `S^a` closest to the singular canard's crossing,
/// bisected to [`CANARD_SEED_TOL`]. When that boundary is an edge of a narrow
/// tracked band, the band's far-side edge is taken; the fold-side edge is
/// where composite canards sit.
pub fn maximal_canard(scanner: &Scanner, singular: &SingularCanard, opts: &MaximalOptions) -> Result<MaximalCanard> {
    let ctx = scanner.ctx();
    let forcing = ctx.forcing();
    let s = &singular.singularity;
    let section_lambda = match opts.section_lambda {
        Some(l) => l,
        None => forcing.lambda((s.tau_star - 0.5).max(forcing.scan_domain().0)),
    };
    let tau_sec = forcing.inverse(section_lambda)?;
    let x_fold = ctx.fold_x(section_lambda);
    let dir = ctx.escape_dir();
    let x_c = singular
        .x_at_tau(tau_sec, tau_sec <= s.tau_star)
        .ok_or_else(|| Error::Section(format!("singular canard does not reach lambda = {section_lambda}")))?;
    if dir * (x_c - x_fold) >= 0.0 {
        return Err(Error::Section(format!(
            "singular canard crosses lambda = {section_lambda} at x = {x_c}, not on the attracting side"
        )));
    }
    let topts = TransectOptions {
        samples: opts.samples,
        refine_tol: CANARD_SEED_TOL,
        hidden: true,
        ..Default::default()
    };
    let near_fold = x_fold - dir * 1e-4;
    let mut window = opts.window;
    for _ in 0..3 {
        let (a, b) = (x_c - window, x_c + window);
        let range = if dir > 0.0 { (a, b.min(near_fold)) } else { (a.max(near_fold), b) };
        if range.0 >= range.1 {
            break;
        }
        let bands = scanner.transect(section_lambda, range, Side::Sa, &topts)?;
        if let Some(boundary) = pick_boundary(&bands, x_c, dir, opts.narrow_width) {
            let path = boundary_trajectory(ctx, &boundary, section_lambda, Side::Sa)?;
            return Ok(MaximalCanard {
                kind: branch_kind(singular.branch),
                seed_parameter: boundary.x,
                section_lambda,
                boundary,
                dwell_s_r: path.stats.dwell_repelling,
                path,
                segments: Vec::new(),
            });
        }
        window *= 2.0;
    }
    Err(Error::Section(format!(
        "no tracking/tipping flip within {window} of x = {x_c} on lambda = {section_lambda}"
    )))
}

fn pick_boundary(bands: &BandStructure, x_c: f64, dir: f64, narrow: f64) -> Option<Boundary> {
    let nearest = bands
        .boundaries
        .iter()
        .min_by(|a, b| (a.x - x_c).abs().total_cmp(&(b.x - x_c).abs()))?;
    for (_, band) in bands.narrow_tracked(narrow) {
        let touches = (band.x_lo - nearest.x).abs() <= 1e-9 || (band.x_hi - nearest.x).abs() <= 1e-9;
        if touches {
            let far_edge = if dir > 0.0 { band.x_lo } else { band.x_hi };
            return bands.boundaries.iter().find(|b| (b.x - far_edge).abs() <= 1e-9).copied();
        }
    }
    Some(*nearest)
}

/// Fold-side and far-side edge of a narrow tracked band.
fn narrow_edges(bands: &BandStructure, dir: f64, narrow: f64) -> Vec<(Boundary, Boundary)> {
    bands
        .narrow_tracked(narrow)
        .into_iter()
        .filter_map(|(_, band)| {
            let lo = bands.boundaries.iter().find(|b| (b.x - band.x_lo).abs() <= 1e-12)?;
            let hi = bands.boundaries.iter().find(|b| (b.x - band.x_hi).abs() <= 1e-12)?;
            Some(if dir > 0.0 { (*hi, *lo) } else { (*lo, *hi) })
        })
        .collect()
}

/// Secondary folded-node canards on the transect: boundaries with tipping on
/// the far side and tracking on the fold side that are not already in `known`
/// and not the fold-side edge of a narrow tracked band.
pub fn secondary_canards(
    scanner: &Scanner,
    bands: &BandStructure,
    known: &[MaximalCanard],
    narrow_width: f64,
) -> Result<Vec<MaximalCanard>> {
    let ctx = scanner.ctx();
    let dir = ctx.escape_dir();
    let fold_edges: Vec<f64> = narrow_edges(bands, dir, narrow_width).iter().map(|(fold, _)| fold.x).collect();
    let mut out = Vec::new();
    for b in &bands.boundaries {
        let (far, near) = if dir > 0.0 { (b.below, b.above) } else { (b.above, b.below) };
        let node_like = far.tips() && !near.tips();
        let taken = known.iter().any(|k| (k.seed_parameter - b.x).abs() <= 1e-9)
            || fold_edges.iter().any(|x| (x - b.x).abs() <= 1e-12);
        if !node_like || taken {
            continue;
        }
        let path = boundary_trajectory(ctx, b, bands.transect, Side::Sa)?;
        out.push(MaximalCanard {
            kind: CanardKind::SecondaryNode,
            seed_parameter: b.x,
            section_lambda: bands.transect,
            boundary: *b,
            dwell_s_r: path.stats.dwell_repelling,
            path,
            segments: Vec::new(),
        });
    }
    Ok(out)
}

/// Maximal intervals of slow time that `tr` spends close to `S^r`.
pub fn repelling_segments(ctx: &FlowContext, tr: &Trajectory, min_duration: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut start: Option<f64> = None;
    let mut prev_tau = f64::NAN;
    for s in &tr.samples {
        let on = on_sr(ctx, s.x, s.y, s.lambda);
        match (on, start) {
            (true, None) => start = Some(s.tau),
            (false, Some(t0)) => {
                if prev_tau - t0 >= min_duration {
                    out.push((t0, prev_tau));
                }
                start = None;
            }
            _ => {}
        }
        prev_tau = s.tau;
    }
    if let Some(t0) = start {
        if prev_tau - t0 >= min_duration {
            out.push((t0, prev_tau));
        }
    }
    out
}

fn on_sr(ctx: &FlowContext, x: f64, y: f64, lambda: f64) -> bool {
    let ex = ctx.escape_dir() * (x - ctx.fold_x(lambda));
    if !(ex > 0.0 && ex < ctx.settings().escape_offset) {
        return false;
    }
    let j = ctx.system().first_partials(x, y, lambda);
    j.f.abs() <= ctx.settings().dwell_tube * j.f_y.abs()
}

/// Fraction of a segment that must lie within the tube of its reference.
pub const SHADOW_QUANTILE: f64 = 0.9;

/// Which of `canards` the `S^r` segment `[t0, t1]` of `tr` follows: the
/// distance in the `(x, lambda)` projection from each segment point to the
/// nearest `S^r` point of the reference, taken at [`SHADOW_QUANTILE`], must be
/// at most `tube`. The closest such reference wins.
pub fn shadowed_canard(
    ctx: &FlowContext,
    tr: &Trajectory,
    (t0, t1): (f64, f64),
    canards: &[MaximalCanard],
    tube: f64,
) -> Option<(usize, f64)> {
    let pts: Vec<_> = tr.samples.iter().filter(|s| s.tau >= t0 && s.tau <= t1).collect();
    if pts.is_empty() {
        return None;
    }
    let mut best: Option<(usize, f64)> = None;
    for (k, c) in canards.iter().enumerate() {
        let reference: Vec<_> = c.path.samples.iter().filter(|q| on_sr(ctx, q.x, q.y, q.lambda)).collect();
        if reference.is_empty() {
            continue;
        }
        let mut d: Vec<f64> = pts
            .iter()
            .map(|p| {
                reference
                    .iter()
                    .map(|q| (q.x - p.x).hypot(q.lambda - p.lambda))
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        d.sort_by(f64::total_cmp);
        let idx = ((SHADOW_QUANTILE * d.len() as f64).ceil() as usize).clamp(1, d.len()) - 1;
        let q = d[idx];
        if q <= tube && best.is_none_or(|(_, b)| q < b) {
            best = Some((k, q));
        }
    }
    best
}

/// Segments of `tr` on `S^r`, each labelled with the canard it follows.
pub fn shadow_segments(ctx: &FlowContext, tr: &Trajectory, canards: &[MaximalCanard], tube: f64) -> Vec<Segment> {
    repelling_segments(ctx, tr, 0.01)
        .into_iter()
        .filter_map(|iv| {
            shadowed_canard(ctx, tr, iv, canards, tube).map(|(k, d)| Segment {
                kind: canards[k].kind,
                reference: k,
                tau_interval: iv,
                distance: d,
            })
        })
        .collect()
}

/// Composite canards among the fold-side edges of narrow tracked bands: the
/// edge trajectory first follows a folded-node canard (strong or secondary)
/// on `S^r`, later the folded-saddle canard.
pub fn detect_composites(
    scanner: &Scanner,
    bands: &BandStructure,
    canards: &[MaximalCanard],
    singular: &[SingularCanard],
    tube: f64,
    narrow_width: f64,
) -> Result<Vec<MaximalCanard>> {
    let distinct_singularities = {
        let mut taus: Vec<f64> = singular.iter().map(|c| c.singularity.tau_star).collect();
        taus.sort_by(f64::total_cmp);
        taus.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
        taus.len()
    };
    if distinct_singularities < 2 {
        return Ok(Vec::new());
    }
    let ctx = scanner.ctx();
    let mut out = Vec::new();
    for (fold, _) in narrow_edges(bands, ctx.escape_dir(), narrow_width) {
        let path = boundary_trajectory(ctx, &fold, bands.transect, Side::Sa)?;
        let segments = shadow_segments(ctx, &path, canards, tube);
        if is_composite(&segments) {
            out.push(MaximalCanard {
                kind: CanardKind::Composite,
                seed_parameter: fold.x,
                section_lambda: bands.transect,
                boundary: fold,
                dwell_s_r: path.stats.dwell_repelling,
                path,
                segments,
            });
        }
    }
    Ok(out)
}

/// A node-canard segment followed later by a folded-saddle segment.
pub fn is_composite(segments: &[Segment]) -> bool {
    segments.iter().enumerate().any(|(i, a)| {
        a.kind.is_node()
            && segments[i + 1..]
                .iter()
                .any(|b| b.kind == CanardKind::FoldedSaddle && b.reference != a.reference)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::desing::DesingularizedField;
    use crate::model::builtin_system;

    fn singularities(forcing: &ForcingProfile) -> (SystemDefinition, Vec<FoldedSingularity>) {
        let sys = builtin_system("paper-example", 0.01).unwrap();
        let s = DesingularizedField::new(&sys, forcing).find_folded_singularities().unwrap();
        (sys, s)
    }

    #[test]
    fn case2_saddle_canard_crosses_fold() {
        let forcing = ForcingProfile::exponential(2.5, 1.0).unwrap();
        let (sys, sings) = singularities(&forcing);
        assert_eq!(sings.len(), 1);
        let canards = singular_canards(&sys, &forcing, &sings[0], &IntegratorSettings::default()).unwrap();
        let gs = canards.iter().find(|c| c.branch == CanardBranch::SaddleStable).unwrap();
        assert!((gs.singularity.lambda_star - 2.0).abs() < 1e-9);
        let first = gs.path.first().unwrap();
        let last = gs.path.last().unwrap();
        assert!(first.x < 0.5 && last.x > 0.5, "path must cross from S^a to S^r");
        // tangent to the eigenvector at the singularity
        let i = gs.path.iter().position(|p| p.tau == gs.singularity.tau_star).unwrap();
        let p = &gs.path[i + 1];
        let d = [p.x - 0.5, p.tau - gs.singularity.tau_star];
        let cosang = (d[0] * gs.direction[0] + d[1] * gs.direction[1]).abs() / d[0].hypot(d[1]);
        assert!(cosang.min(1.0).acos() < 1e-4);
    }

    #[test]
    fn focus_has_no_canards() {
        let forcing = ForcingProfile::logistic(2.5, 0.27).unwrap();
        let (sys, sings) = singularities(&forcing);
        let focus = sings.iter().find(|s| s.lambda_star < 0.0).unwrap();
        assert!(focus.kind.is_focus());
        assert!(singular_canards(&sys, &forcing, focus, &IntegratorSettings::default())
            .unwrap()
            .is_empty());
    }

    #[test]
    fn node_has_distinct_strong_and_weak_canards() {
        let forcing = ForcingProfile::logistic(2.5, 0.216).unwrap();
        let (sys, sings) = singularities(&forcing);
        let node = sings.iter().find(|s| s.lambda_star < 0.0).unwrap();
        let c = singular_canards(&sys, &forcing, node, &IntegratorSettings::default()).unwrap();
        assert_eq!(c.len(), 2);
        assert_eq!(c[0].branch, CanardBranch::NodeStrong);
        assert_eq!(c[1].branch, CanardBranch::NodeWeak);
        let dot = c[0].direction[0] * c[1].direction[0] + c[0].direction[1] * c[1].direction[1];
        assert!(dot.abs() < 0.999);
    }

    #[test]
    fn composite_needs_node_then_saddle() {
        let seg = |kind, reference| Segment {
            kind,
            reference,
            tau_interval: (0.0, 1.0),
            distance: 0.0,
        };
        assert!(is_composite(&[seg(CanardKind::StrongNode, 0), seg(CanardKind::FoldedSaddle, 1)]));
        assert!(!is_composite(&[seg(CanardKind::FoldedSaddle, 1), seg(CanardKind::StrongNode, 0)]));
        assert!(!is_composite(&[seg(CanardKind::FoldedSaddle, 1)]));
    }
}
