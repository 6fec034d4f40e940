//! Classification of initial states on the critical manifold: verdict grids,
//! band structures along fixed-`lambda` transects, and the empirical critical
//! rate at finite `delta`.

use std::cell::Cell;

use serde::{Deserialize, Serialize};

use crate::desing::{estimate_critical_rate, CriticalRateReport};
use crate::error::{Error, Result};
use crate::flow::{FlowContext, IntegratorSettings, Trajectory, Verdict};
use crate::model::{ForcingProfile, SystemDefinition};
use crate::parallel::par_map;
use crate::roots;

/// Grids whose exhausted fraction exceeds this are flagged unreliable.
pub const MAX_EXHAUSTED_FRACTION: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    /// Attracting branch.
    #[default]
    Sa,
    /// Repelling branch.
    Sr,
}

impl Side {
    pub fn name(self) -> &'static str {
        match self {
            Side::Sa => "sa",
            Side::Sr => "sr",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_range: (f64, f64),
    pub n_x: usize,
    pub lambda_range: (f64, f64),
    pub n_lambda: usize,
    #[serde(default)]
    pub side: Side,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi), n) in [
            ("x", self.x_range, self.n_x),
            ("lambda", self.lambda_range, self.n_lambda),
        ] {
            if n == 0 {
                return Err(Error::Invalid(format!("grid needs at least one {name} point")));
            }
            if !(lo.is_finite() && hi.is_finite()) || hi < lo || (n > 1 && hi == lo) {
                return Err(Error::Invalid(format!("bad {name} range ({lo}, {hi}) for {n} points")));
            }
        }
        Ok(())
    }

    pub fn x_axis(&self) -> Vec<f64> {
        linspace(self.x_range, self.n_x)
    }

    pub fn lambda_axis(&self) -> Vec<f64> {
        linspace(self.lambda_range, self.n_lambda)
    }
}

pub fn linspace((lo, hi): (f64, f64), n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64).collect(),
    }
}

/// Outcome of one initial state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Probe {
    pub x: f64,
    pub verdict: Verdict,
    pub event_t: f64,
    pub max_excursion: f64,
    pub dwell: f64,
}

impl Probe {
    pub fn tips(&self) -> bool {
        self.verdict.tips()
    }

    /// Smooth "closeness to a canard" indicator: escape time for tipping
    /// states, how far past the fold (plus time spent on `S^r`) otherwise.
    /// Both spike next to maximal canards, which is how bands narrower than
    /// the sampling step are found.
    pub fn score(&self) -> f64 {
        if self.tips() {
            self.event_t
        } else {
            self.max_excursion + self.dwell
        }
    }

    fn failed(x: f64) -> Self {
        Self {
            x,
            verdict: Verdict::Exhausted,
            event_t: f64::NAN,
            max_excursion: f64::NAN,
            dwell: f64::NAN,
        }
    }

    fn from_trajectory(x: f64, tr: &Trajectory) -> Self {
        Self {
            x,
            verdict: tr.verdict,
            event_t: tr.event_t,
            max_excursion: tr.stats.max_excursion,
            dwell: tr.stats.dwell_repelling,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellResult {
    pub verdict: Verdict,
    pub event_t: f64,
    pub max_excursion: f64,
    pub reason: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanGrid {
    pub spec: GridSpec,
    pub x_axis: Vec<f64>,
    pub lambda_axis: Vec<f64>,
    /// Row-major: `cells[i_lambda * n_x + i_x]`.
    pub cells: Vec<CellResult>,
    pub exhausted_fraction: f64,
    pub reliable: bool,
}

impl ScanGrid {
    pub fn cell(&self, i_lambda: usize, i_x: usize) -> &CellResult {
        &self.cells[i_lambda * self.x_axis.len() + i_x]
    }

    pub fn verdicts(&self) -> Vec<Verdict> {
        self.cells.iter().map(|c| c.verdict).collect()
    }

    pub fn count(&self, verdict: Verdict) -> usize {
        self.cells.iter().filter(|c| c.verdict == verdict).count()
    }

    pub fn fraction(&self, verdict: Verdict) -> f64 {
        self.count(verdict) as f64 / self.cells.len() as f64
    }

    /// Index of the grid row closest to `lambda`.
    pub fn nearest_row(&self, lambda: f64) -> usize {
        let mut best = 0;
        for (i, l) in self.lambda_axis.iter().enumerate() {
            if (l - lambda).abs() < (self.lambda_axis[best] - lambda).abs() {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Boundary {
    pub x: f64,
    /// Final bracket; `x` is its midpoint.
    pub lo: f64,
    pub hi: f64,
    /// Verdict on the smaller-`x` side.
    pub below: Verdict,
    /// Verdict on the larger-`x` side.
    pub above: Verdict,
    /// Found by the narrow-band search rather than by a visible flip between samples.
    pub hidden: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Band {
    pub x_lo: f64,
    pub x_hi: f64,
    pub verdict: Verdict,
}

impl Band {
    pub fn width(&self) -> f64 {
        self.x_hi - self.x_lo
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BandStructure {
    pub transect: f64,
    pub x_range: (f64, f64),
    pub boundaries: Vec<Boundary>,
    pub bands: Vec<Band>,
}

impl BandStructure {
    fn from_boundaries(transect: f64, x_range: (f64, f64), first: Verdict, mut boundaries: Vec<Boundary>) -> Self {
        boundaries.sort_by(|a, b| a.x.total_cmp(&b.x));
        let mut bands = Vec::with_capacity(boundaries.len() + 1);
        let mut lo = x_range.0;
        let mut verdict = first;
        for b in &boundaries {
            bands.push(Band {
                x_lo: lo,
                x_hi: b.x,
                verdict,
            });
            lo = b.x;
            verdict = b.above;
        }
        bands.push(Band {
            x_lo: lo,
            x_hi: x_range.1,
            verdict,
        });
        Self {
            transect,
            x_range,
            boundaries,
            bands,
        }
    }

    pub fn count_bands(&self, verdict: Verdict) -> usize {
        self.bands.iter().filter(|b| b.verdict == verdict).count()
    }

    /// Tracked bands narrower than `width` with tipping bands on both sides.
    pub fn narrow_tracked(&self, width: f64) -> Vec<(usize, Band)> {
        self.bands
            .iter()
            .enumerate()
            .filter(|(i, b)| {
                *i > 0
                    && *i + 1 < self.bands.len()
                    && b.verdict == Verdict::Tracked
                    && b.width() < width
                    && self.bands[i - 1].verdict.tips()
                    && self.bands[i + 1].verdict.tips()
            })
            .map(|(i, b)| (i, *b))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TransectOptions {
    pub samples: usize,
    /// Boundaries are bisected to this bracket width.
    pub refine_tol: f64,
    /// Look for bands narrower than the sample spacing.
    pub hidden: bool,
    pub golden_tol: f64,
}

impl Default for TransectOptions {
    fn default() -> Self {
        Self {
            samples: 200,
            refine_tol: 1e-8,
            hidden: true,
            golden_tol: 1e-11,
        }
    }
}

/// Binary band label: tipping states versus everything else.
fn band_verdict(v: Verdict) -> Verdict {
    if v.tips() {
        Verdict::Destabilized
    } else {
        Verdict::Tracked
    }
}

/// Runs trajectories from initial states on `S`.
pub struct Scanner<'a> {
    ctx: FlowContext<'a>,
    workers: usize,
}

impl<'a> Scanner<'a> {
    /// `workers = 0` uses every available core.
    pub fn new(ctx: FlowContext<'a>, workers: usize) -> Self {
        Self { ctx, workers }
    }

    pub fn from_parts(
        sys: &'a SystemDefinition,
        forcing: &'a ForcingProfile,
        mut settings: IntegratorSettings,
        workers: usize,
    ) -> Result<Self> {
        settings.record = false;
        Ok(Self::new(FlowContext::new(sys, forcing, settings)?, workers))
    }

    pub fn ctx(&self) -> &FlowContext<'a> {
        &self.ctx
    }

    pub fn workers(&self) -> usize {
        self.workers
    }

    pub fn probe(&self, x: f64, lambda: f64, side: Side) -> Probe {
        match self.ctx.integrate_from_manifold(x, lambda, side == Side::Sr) {
            Ok(tr) => Probe::from_trajectory(x, &tr),
            Err(_) => Probe::failed(x),
        }
    }

    pub fn classify_grid(&self, spec: &GridSpec) -> Result<ScanGrid> {
        spec.validate()?;
        let x_axis = spec.x_axis();
        let lambda_axis = spec.lambda_axis();
        let points: Vec<(f64, f64)> = lambda_axis
            .iter()
            .flat_map(|&l| x_axis.iter().map(move |&x| (x, l)))
            .collect();
        let allow_repelling = spec.side == Side::Sr;
        let cells = par_map(&points, self.workers, |&(x, lambda)| {
            match self.ctx.integrate_from_manifold(x, lambda, allow_repelling) {
                Ok(tr) => CellResult {
                    verdict: tr.verdict,
                    event_t: tr.event_t,
                    max_excursion: tr.stats.max_excursion,
                    reason: None,
                },
                Err(e) => CellResult {
                    verdict: Verdict::Exhausted,
                    event_t: f64::NAN,
                    max_excursion: f64::NAN,
                    reason: Some(e.to_string()),
                },
            }
        });
        let exhausted = cells.iter().filter(|c| c.verdict == Verdict::Exhausted).count();
        let exhausted_fraction = exhausted as f64 / cells.len() as f64;
        Ok(ScanGrid {
            spec: *spec,
            x_axis,
            lambda_axis,
            cells,
            exhausted_fraction,
            reliable: exhausted_fraction <= MAX_EXHAUSTED_FRACTION,
        })
    }

    /// Band structure on the transect `lambda` over `x_range`, from fresh integrations.
    pub fn transect(&self, lambda: f64, x_range: (f64, f64), side: Side, opts: &TransectOptions) -> Result<BandStructure> {
        if opts.samples < 2 || !(x_range.0 < x_range.1) {
            return Err(Error::Invalid("transect needs >= 2 samples and a nonempty x-range".into()));
        }
        let xs = linspace(x_range, opts.samples);
        let probes = par_map(&xs, self.workers, |&x| self.probe(x, lambda, side));
        self.bands_from_probes(lambda, x_range, side, probes, opts, true)
    }

    /// Band structure on the grid row nearest to `lambda`. With `refine`, flips
    /// are bisected with fresh integrations and narrow bands are searched for.
    pub fn extract_bands(&self, grid: &ScanGrid, lambda: f64, refine: bool, opts: &TransectOptions) -> Result<BandStructure> {
        if grid.x_axis.len() < 2 {
            return Err(Error::Invalid("band extraction needs at least two x points".into()));
        }
        let lo = grid.lambda_axis.first().copied().unwrap_or(lambda);
        let hi = grid.lambda_axis.last().copied().unwrap_or(lambda);
        if lambda < lo.min(hi) - 1e-12 || lambda > lo.max(hi) + 1e-12 {
            return Err(Error::Invalid(format!("transect lambda = {lambda} outside the grid")));
        }
        let row = grid.nearest_row(lambda);
        let row_lambda = grid.lambda_axis[row];
        let probes: Vec<Probe> = grid
            .x_axis
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let c = grid.cell(row, i);
                Probe {
                    x,
                    verdict: c.verdict,
                    event_t: c.event_t,
                    max_excursion: c.max_excursion,
                    dwell: 0.0,
                }
            })
            .collect();
        let x_range = (grid.x_axis[0], *grid.x_axis.last().unwrap());
        self.bands_from_probes(row_lambda, x_range, grid.spec.side, probes, opts, refine)
    }

    fn bands_from_probes(
        &self,
        lambda: f64,
        x_range: (f64, f64),
        side: Side,
        probes: Vec<Probe>,
        opts: &TransectOptions,
        refine: bool,
    ) -> Result<BandStructure> {
        let first = band_verdict(probes[0].verdict);
        let mut brackets: Vec<(Probe, Probe, bool)> = probes
            .windows(2)
            .filter(|w| w[0].tips() != w[1].tips())
            .map(|w| (w[0], w[1], false))
            .collect();

        if refine && opts.hidden {
            // interior local maxima of the score inside runs of equal verdicts
            let candidates: Vec<(Probe, Probe)> = (1..probes.len().saturating_sub(1))
                .filter(|&i| {
                    let (a, b, c) = (&probes[i - 1], &probes[i], &probes[i + 1]);
                    a.tips() == b.tips()
                        && b.tips() == c.tips()
                        && b.score() >= a.score()
                        && b.score() >= c.score()
                        && (b.score() > a.score() || b.score() > c.score())
                })
                .map(|i| (probes[i - 1], probes[i + 1]))
                .collect();
            let found = par_map(&candidates, self.workers, |(a, c)| {
                self.spike_search(lambda, side, a.x, c.x, a.tips(), opts.golden_tol)
            });
            for ((a, c), hit) in candidates.iter().zip(found) {
                if let Some(p) = hit {
                    brackets.push((*a, p, true));
                    brackets.push((p, *c, true));
                }
            }
        }

        let boundaries: Vec<Boundary> = if refine {
            par_map(&brackets, self.workers, |(a, b, hidden)| {
                self.refine_flip(lambda, side, *a, *b, opts.refine_tol, *hidden)
            })
        } else {
            brackets
                .iter()
                .map(|(a, b, hidden)| Boundary {
                    x: 0.5 * (a.x + b.x),
                    lo: a.x,
                    hi: b.x,
                    below: band_verdict(a.verdict),
                    above: band_verdict(b.verdict),
                    hidden: *hidden,
                })
                .collect()
        };
        let mut boundaries = boundaries;
        boundaries.sort_by(|a, b| a.x.total_cmp(&b.x));
        boundaries.dedup_by(|a, b| (a.x - b.x).abs() <= 2.0 * opts.refine_tol && a.above == b.above);
        Ok(BandStructure::from_boundaries(lambda, x_range, first, boundaries))
    }

    /// Golden-section maximisation of the score on `[a, b]`, stopping at the
    /// first state whose verdict differs from `tips`.
    fn spike_search(&self, lambda: f64, side: Side, a: f64, b: f64, tips: bool, tol: f64) -> Option<Probe> {
        let last: Cell<Option<Probe>> = Cell::new(None);
        let h = |x: f64| {
            let p = self.probe(x, lambda, side);
            last.set(Some(p));
            let s = p.score();
            if s.is_nan() {
                f64::NEG_INFINITY
            } else {
                s
            }
        };
        let stop = |_x: f64, _v: f64| last.get().is_some_and(|p| p.tips() != tips && p.verdict != Verdict::Exhausted);
        roots::golden_max(h, a, b, tol, stop);
        last.get().filter(|p| p.tips() != tips && p.verdict != Verdict::Exhausted)
    }

    fn refine_flip(&self, lambda: f64, side: Side, mut a: Probe, mut b: Probe, tol: f64, hidden: bool) -> Boundary {
        while b.x - a.x > tol {
            let m = 0.5 * (a.x + b.x);
            if m <= a.x || m >= b.x {
                break;
            }
            let p = self.probe(m, lambda, side);
            if p.tips() == a.tips() {
                a = p;
            } else {
                b = p;
            }
        }
        Boundary {
            x: 0.5 * (a.x + b.x),
            lo: a.x,
            hi: b.x,
            below: band_verdict(a.verdict),
            above: band_verdict(b.verdict),
            hidden,
        }
    }
}

/// How a critical-rate probe searches for tipping initial states.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticalRateSearch {
    pub grid: GridSpec,
    /// Bisection on `eps` stops at this bracket width.
    pub eps_tol: f64,
    pub golden_tol: f64,
}

impl Default for CriticalRateSearch {
    fn default() -> Self {
        Self {
            grid: GridSpec {
                x_range: (-2.0, 0.3),
                n_x: 60,
                lambda_range: (-2.4, -0.3),
                n_lambda: 60,
                side: Side::Sa,
            },
            eps_tol: 1e-4,
            golden_tol: 1e-9,
        }
    }
}

/// Largest danger found at one rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Danger {
    pub tips: bool,
    pub x: f64,
    pub lambda: f64,
    /// [`Probe::score`] of the most dangerous state found (escape time if it tips).
    pub score: f64,
}

/// Classifies the coarse grid at one rate; when nothing tips, the most dangerous
/// cell's row is searched by golden section on the danger score.
pub fn danger_at(
    sys: &SystemDefinition,
    forcing: &ForcingProfile,
    settings: IntegratorSettings,
    search: &CriticalRateSearch,
    workers: usize,
) -> Result<Danger> {
    let scanner = Scanner::from_parts(sys, forcing, settings, workers)?;
    let grid = scanner.classify_grid(&search.grid)?;
    let nx = grid.x_axis.len();
    let mut best: Option<(usize, f64)> = None;
    for (k, c) in grid.cells.iter().enumerate() {
        if c.verdict.tips() {
            return Ok(Danger {
                tips: true,
                x: grid.x_axis[k % nx],
                lambda: grid.lambda_axis[k / nx],
                score: c.event_t,
            });
        }
        if c.max_excursion.is_finite() && best.is_none_or(|(_, v)| c.max_excursion > v) {
            best = Some((k, c.max_excursion));
        }
    }
    let Some((k, value)) = best else {
        return Err(Error::Invalid("every grid cell failed".into()));
    };
    let (ix, il) = (k % nx, k / nx);
    let lambda = grid.lambda_axis[il];
    if nx < 2 {
        return Ok(Danger {
            tips: false,
            x: grid.x_axis[ix],
            lambda,
            score: value,
        });
    }
    let a = grid.x_axis[ix.saturating_sub(1)];
    let b = grid.x_axis[(ix + 1).min(nx - 1)];
    let last: Cell<Option<Probe>> = Cell::new(None);
    let h = |x: f64| {
        let p = scanner.probe(x, lambda, search.grid.side);
        last.set(Some(p));
        if p.score().is_nan() {
            f64::NEG_INFINITY
        } else {
            p.score()
        }
    };
    let stop = |_x: f64, _v: f64| last.get().is_some_and(|p| p.tips());
    let (x, score) = roots::golden_max(h, a, b, search.golden_tol, stop);
    let tipped = last.get().filter(|p| p.tips());
    Ok(match tipped {
        Some(p) => Danger {
            tips: true,
            x: p.x,
            lambda,
            score: p.event_t,
        },
        None => Danger {
            tips: false,
            x,
            lambda,
            score: score.max(value),
        },
    })
}

/// Smallest rate at which some initial state on the grid tips, at the `delta`
/// carried by `sys`, by bisection on `eps` inside `eps_bracket`.
pub fn empirical_critical_rate(
    sys: &SystemDefinition,
    family: &ForcingProfile,
    eps_bracket: (f64, f64),
    settings: IntegratorSettings,
    search: &CriticalRateSearch,
    workers: usize,
) -> Result<CriticalRateReport> {
    let (mut lo, mut hi) = eps_bracket;
    if !(lo > 0.0 && lo < hi) {
        return Err(Error::Bracket(format!("need 0 < lo < hi, got ({lo}, {hi})")));
    }
    if !(sys.delta() > 0.0) {
        return Err(Error::Invalid("empirical critical rate needs delta > 0".into()));
    }
    let tips = |eps: f64| -> Result<bool> {
        let forcing = family.with_epsilon(eps)?;
        Ok(danger_at(sys, &forcing, settings, search, workers)?.tips)
    };
    let (at_lo, at_hi) = (tips(lo)?, tips(hi)?);
    if at_lo || !at_hi {
        return Err(Error::Bracket(format!(
            "tipping at eps = {lo}: {at_lo}, at eps = {hi}: {at_hi}; expected none then some"
        )));
    }
    while hi - lo > search.eps_tol {
        let mid = 0.5 * (lo + hi);
        if tips(mid)? {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let empirical = 0.5 * (lo + hi);
    let singular = estimate_critical_rate(sys, family, eps_bracket)
        .map(|r| r.epsilon_c_singular)
        .or_else(|_| estimate_critical_rate(sys, family, (1e-3 * eps_bracket.0, eps_bracket.1)).map(|r| r.epsilon_c_singular))?;
    Ok(CriticalRateReport::singular(singular).with_empirical(empirical))
}

/// Least-squares slope of `log |e|` against `log delta`. Needs two or more
/// points, all with nonzero `e`.
pub fn fit_order_exponent(points: &[(f64, f64)]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = points
        .iter()
        .filter(|(d, e)| *d > 0.0 && *e != 0.0 && e.is_finite())
        .map(|(d, e)| (d.ln(), e.abs().ln()))
        .collect();
    if pts.len() < 2 || pts.len() != points.len() {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Empirical critical rates over several `delta` values with the fitted order
/// of `E_delta`. The returned report carries the smallest `delta`'s values.
pub fn critical_rate_convergence(
    sys: &SystemDefinition,
    family: &ForcingProfile,
    deltas: &[f64],
    eps_bracket: (f64, f64),
    settings: IntegratorSettings,
    searches: &[CriticalRateSearch],
    workers: usize,
) -> Result<(CriticalRateReport, Vec<(f64, CriticalRateReport)>)> {
    if deltas.is_empty() || searches.len() != deltas.len() {
        return Err(Error::Invalid("need one search setting per delta".into()));
    }
    let mut per_delta = Vec::with_capacity(deltas.len());
    for (&delta, search) in deltas.iter().zip(searches) {
        let sys_d = sys.with_delta(delta)?;
        per_delta.push((delta, empirical_critical_rate(&sys_d, family, eps_bracket, settings, search, workers)?));
    }
    let pts: Vec<(f64, f64)> = per_delta
        .iter()
        .map(|(d, r)| (*d, r.e_delta.unwrap_or(f64::NAN)))
        .collect();
    let smallest = per_delta
        .iter()
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .map(|(_, r)| *r)
        .expect("nonempty");
    let mut report = smallest;
    report.order_exponent = fit_order_exponent(&pts);
    Ok((report, per_delta))
}
