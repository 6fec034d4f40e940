//! Subcommand bodies. Each reads the resolved config and writes its tables
//! through a [`Sink`].

use ratetip::canard::{
    detect_composites, maximal_canard, secondary_canards, singular_canards, CanardBranch, MaximalCanard, SingularCanard,
};
use ratetip::desing::{estimate_critical_rate, DesingularizedField};
use ratetip::flow::{FlowContext, IntegratorSettings, Trajectory};
use ratetip::geometry::{self, DEFAULT_X_RANGE};
use ratetip::model::{ForcingProfile, SystemDefinition};
use ratetip::scan::{critical_rate_convergence, linspace, Scanner, Side, TransectOptions};

use crate::config::RunConfig;
use crate::output::{num, opt, Sink, Table};
use crate::svg::{self, Polyline};
use crate::CliError;

pub struct Ctx<'a> {
    pub cfg: &'a RunConfig,
    pub sink: &'a mut Sink,
    pub comoving: bool,
}

fn parts(cfg: &RunConfig) -> Result<(SystemDefinition, ForcingProfile), CliError> {
    let sys = cfg.build_system()?;
    let forcing = cfg.build_forcing()?;
    geometry::verify_assumptions(&sys, &forcing, DEFAULT_X_RANGE)?;
    Ok((sys, forcing))
}

pub fn manifold(c: Ctx) -> Result<(), CliError> {
    let (sys, forcing) = parts(c.cfg)?;
    let scan = &c.cfg.scan;
    let lo = forcing.lambda_min().max(scan.lambda_range.0);
    let hi = forcing.lambda_max().min(scan.lambda_range.1);
    let mut fold = Table::new("fold", &["lambda", "x_fold", "y_fold", "x_stable", "y_stable"]);
    for lambda in linspace((lo, hi), scan.n_lambda.max(2)) {
        let f = geometry::single_fold(&sys, lambda, DEFAULT_X_RANGE)?;
        let (xs, ys) = geometry::stable_state(&sys, lambda, DEFAULT_X_RANGE)?;
        fold.push(vec![num(lambda), num(f.x_f), num(f.y_f), num(xs), num(ys)]);
    }
    c.sink.table(&fold)?;

    let lambda = scan.transect.unwrap_or(0.5 * (lo + hi));
    let x_f = geometry::single_fold(&sys, lambda, DEFAULT_X_RANGE)?.x_f;
    let reach = (x_f - scan.x_range.0).abs().max((scan.x_range.1 - x_f).abs());
    let slice = geometry::slice_manifold(&sys, lambda, (x_f - reach, x_f + reach), scan.n_x.max(2))?;
    let mut t = Table::new("manifold", &["lambda", "x", "y", "stability"]);
    for b in &slice.branches {
        for &(x, y) in &b.samples {
            t.push(vec![num(lambda), num(x), num(y), b.stability.name().into()]);
        }
    }
    Ok(c.sink.table(&t)?)
}

pub fn singularities(c: Ctx) -> Result<(), CliError> {
    let (sys, forcing) = parts(c.cfg)?;
    let sings = DesingularizedField::new(&sys, &forcing).find_folded_singularities()?;
    let mut t = Table::new(
        "singularities",
        &["kind", "x_star", "tau_star", "lambda_star", "xi1_re", "xi1_im", "xi2_re", "xi2_im", "residual"],
    );
    for s in &sings {
        t.push(vec![
            s.kind.name().into(),
            num(s.x_star),
            num(s.tau_star),
            num(s.lambda_star),
            num(s.eigenvalues[0].re),
            num(s.eigenvalues[0].im),
            num(s.eigenvalues[1].re),
            num(s.eigenvalues[1].im),
            num(s.residual),
        ]);
    }
    Ok(c.sink.table(&t)?)
}

pub fn critical_rate(c: Ctx) -> Result<(), CliError> {
    let (sys, forcing) = parts(c.cfg)?;
    let spec = &c.cfg.critical_rate;
    let mut t = Table::new(
        "critical_rate",
        &["delta", "epsilon_c_singular", "epsilon_c_empirical", "e_delta", "order_exponent"],
    );
    if spec.empirical {
        let deltas = if spec.deltas.is_empty() { vec![sys.delta()] } else { spec.deltas.clone() };
        let searches = vec![spec.search; deltas.len()];
        let (report, per_delta) = critical_rate_convergence(
            &sys,
            &forcing,
            &deltas,
            spec.bracket,
            c.cfg.integrator,
            &searches,
            c.cfg.workers,
        )?;
        for (d, r) in per_delta {
            t.push(vec![
                num(d),
                num(r.epsilon_c_singular),
                opt(r.epsilon_c_empirical),
                opt(r.e_delta),
                opt(report.order_exponent),
            ]);
        }
    } else {
        let r = estimate_critical_rate(&sys, &forcing, spec.bracket)?;
        t.push(vec![num(0.0), num(r.epsilon_c_singular), String::new(), String::new(), String::new()]);
    }
    Ok(c.sink.table(&t)?)
}

fn recorded(cfg: &RunConfig) -> IntegratorSettings {
    IntegratorSettings {
        record: true,
        ..cfg.integrator
    }
}

/// Trajectory samples, optionally relative to the moving stable state.
fn path_table(
    name: &'static str,
    sys: &SystemDefinition,
    paths: &[(String, String, &Trajectory)],
    comoving: bool,
) -> Result<Table, CliError> {
    let mut header = vec!["id", "kind", "t", "tau", "lambda", "x", "y"];
    if comoving {
        header.extend(["x_rel", "y_rel"]);
    }
    let mut t = Table::new(name, &header);
    for (id, kind, tr) in paths {
        for s in &tr.samples {
            let mut row = vec![id.clone(), kind.clone(), num(s.t), num(s.tau), num(s.lambda), num(s.x), num(s.y)];
            if comoving {
                let (xs, ys) = geometry::stable_state(sys, s.lambda, DEFAULT_X_RANGE)?;
                row.extend([num(s.x - xs), num(s.y - ys)]);
            }
            t.push(row);
        }
    }
    Ok(t)
}

pub fn trajectory(c: Ctx) -> Result<(), CliError> {
    let (sys, forcing) = parts(c.cfg)?;
    let spec = c.cfg.trajectory;
    let ctx = FlowContext::new(&sys, &forcing, recorded(c.cfg))?;
    let tr = if spec.reduced {
        ctx.integrate_reduced(spec.x0, forcing.inverse(spec.lambda0)?)?
    } else {
        ctx.integrate_from_manifold(spec.x0, spec.lambda0, c.cfg.scan.side == Side::Sr)?
    };
    let kind = if spec.reduced { "reduced" } else { "full" };
    let mut samples = path_table("trajectory", &sys, &[("0".into(), kind.into(), &tr)], c.comoving)?;
    samples.footer = Some(format!("verdict={} event_t={}", tr.verdict.name(), num(tr.event_t)));
    c.sink.table(&samples)?;
    let mut s = Table::new(
        "trajectory_summary",
        &["verdict", "event_t", "final_distance", "max_excursion", "dwell_repelling", "steps", "rejected"],
    );
    s.push(vec![
        tr.verdict.name().into(),
        num(tr.event_t),
        num(tr.final_distance),
        num(tr.stats.max_excursion),
        num(tr.stats.dwell_repelling),
        tr.stats.steps.to_string(),
        tr.stats.rejected.to_string(),
    ]);
    Ok(c.sink.table(&s)?)
}

fn all_singular_canards(
    sys: &SystemDefinition,
    forcing: &ForcingProfile,
    scanner: &Scanner,
    settings: &IntegratorSettings,
) -> Result<Vec<SingularCanard>, CliError> {
    let mut out = Vec::new();
    for s in scanner.ctx().singularities() {
        match singular_canards(sys, forcing, s, settings) {
            Ok(c) => out.extend(c),
            Err(e) => eprintln!("warning: no singular canards at tau = {}: {e}", s.tau_star),
        }
    }
    Ok(out)
}

fn singular_table(canards: &[SingularCanard]) -> Table {
    let mut t = Table::new("singular_canards", &["id", "singularity", "branch", "eigenvalue", "tau", "lambda", "x"]);
    for (i, c) in canards.iter().enumerate() {
        for p in &c.path {
            t.push(vec![
                i.to_string(),
                c.singularity.kind.name().into(),
                c.branch.name().into(),
                num(c.eigenvalue),
                num(p.tau),
                num(p.lambda),
                num(p.x),
            ]);
        }
    }
    t
}

fn singular_polylines(canards: &[SingularCanard]) -> Vec<Polyline> {
    canards
        .iter()
        .map(|c| Polyline {
            label: format!("{} {}", c.singularity.kind.name(), c.branch.name()),
            colour: match c.branch {
                CanardBranch::SaddleStable => "#0050c0",
                CanardBranch::NodeStrong => "#c06000",
                CanardBranch::NodeWeak => "#008040",
                CanardBranch::SaddleUnstable => "#808000",
            },
            points: c.path.iter().map(|p| (p.lambda, p.x)).collect(),
        })
        .collect()
}

pub fn canards(c: Ctx) -> Result<(), CliError> {
    let (sys, forcing) = parts(c.cfg)?;
    let spec = c.cfg.canards;
    let scanner = Scanner::from_parts(&sys, &forcing, c.cfg.integrator, c.cfg.workers)?;
    let singular = all_singular_canards(&sys, &forcing, &scanner, &c.cfg.integrator)?;
    c.sink.table(&singular_table(&singular))?;

    let mut opts = spec.maximal;
    if let Some(l) = c.cfg.scan.transect {
        opts.section_lambda = Some(l);
    }
    let mut maximal: Vec<MaximalCanard> = Vec::new();
    for s in singular
        .iter()
        .filter(|s| matches!(s.branch, CanardBranch::SaddleStable | CanardBranch::NodeStrong))
    {
        match maximal_canard(&scanner, s, &opts) {
            Ok(m) => maximal.push(m),
            Err(e) => eprintln!("warning: no maximal canard for the {} {}: {e}", s.singularity.kind.name(), s.branch.name()),
        }
    }
    if let Some(section) = opts.section_lambda.or(maximal.first().map(|m| m.section_lambda)) {
        let topts = TransectOptions {
            refine_tol: spec.refine_tol,
            ..c.cfg.scan.transect_options
        };
        let bands = scanner.transect(section, c.cfg.scan.transect_range(), Side::Sa, &topts)?;
        let secondary = secondary_canards(&scanner, &bands, &maximal, opts.narrow_width)?;
        maximal.extend(secondary);
        let composites = detect_composites(&scanner, &bands, &maximal, &singular, spec.tube, opts.narrow_width)?;
        maximal.extend(composites);
    }

    let mut m = Table::new(
        "maximal_canards",
        &["id", "kind", "seed_x", "bracket_lo", "bracket_hi", "section_lambda", "dwell_s_r", "verdict"],
    );
    let mut seg = Table::new(
        "canard_segments",
        &["id", "index", "kind", "reference", "tau_start", "tau_end", "distance"],
    );
    for (i, c) in maximal.iter().enumerate() {
        m.push(vec![
            i.to_string(),
            c.kind.name().into(),
            num(c.seed_parameter),
            num(c.boundary.lo),
            num(c.boundary.hi),
            num(c.section_lambda),
            num(c.dwell_s_r),
            c.path.verdict.name().into(),
        ]);
        for (k, s) in c.segments.iter().enumerate() {
            seg.push(vec![
                i.to_string(),
                k.to_string(),
                s.kind.name().into(),
                s.reference.to_string(),
                num(s.tau_interval.0),
                num(s.tau_interval.1),
                num(s.distance),
            ]);
        }
    }
    c.sink.table(&m)?;
    c.sink.table(&seg)?;
    let paths: Vec<(String, String, &Trajectory)> = maximal
        .iter()
        .enumerate()
        .map(|(i, m)| (i.to_string(), m.kind.name().to_string(), &m.path))
        .collect();
    Ok(c.sink.table(&path_table("canard_paths", &sys, &paths, c.comoving)?)?)
}

pub fn scan(c: Ctx) -> Result<(), CliError> {
    let (sys, forcing) = parts(c.cfg)?;
    let spec = &c.cfg.scan;
    let scanner = Scanner::from_parts(&sys, &forcing, c.cfg.integrator, c.cfg.workers)?;
    let grid = scanner.classify_grid(&spec.grid())?;
    if !grid.reliable {
        eprintln!(
            "warning: {:.2}% of cells exhausted; grid flagged unreliable",
            100.0 * grid.exhausted_fraction
        );
    }
    let nx = grid.x_axis.len();
    let mut t = Table::new("scan", &["lambda", "x", "verdict"]);
    for (k, cell) in grid.cells.iter().enumerate() {
        t.push(vec![
            num(grid.lambda_axis[k / nx]),
            num(grid.x_axis[k % nx]),
            cell.verdict.name().into(),
        ]);
    }
    c.sink.table(&t)?;

    if let Some(lambda) = spec.transect {
        let bands = scanner.transect(lambda, spec.transect_range(), spec.side, &spec.transect_options)?;
        let mut b = Table::new("boundaries", &["lambda", "x", "bracket_lo", "bracket_hi", "below", "above", "hidden"]);
        for e in &bands.boundaries {
            b.push(vec![
                num(lambda),
                num(e.x),
                num(e.lo),
                num(e.hi),
                e.below.name().into(),
                e.above.name().into(),
                e.hidden.to_string(),
            ]);
        }
        c.sink.table(&b)?;
        let mut bt = Table::new("bands", &["lambda", "x_lo", "x_hi", "width", "verdict"]);
        for band in &bands.bands {
            bt.push(vec![
                num(lambda),
                num(band.x_lo),
                num(band.x_hi),
                num(band.width()),
                band.verdict.name().into(),
            ]);
        }
        c.sink.table(&bt)?;
    }

    if spec.svg {
        let singular = all_singular_canards(&sys, &forcing, &scanner, &c.cfg.integrator)?;
        let svg = svg::render(&grid, &singular_polylines(&singular));
        c.sink.file("scan.svg", svg.as_bytes())?;
    }
    Ok(())
}
