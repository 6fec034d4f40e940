//! Minimal SVG raster of a verdict grid in the `(lambda, x)` plane with canard
//! polylines on top. `lambda` runs left to right, `x` bottom to top.

use std::fmt::Write;

use ratetip::flow::Verdict;
use ratetip::scan::ScanGrid;

const WIDTH: f64 = 600.0;
const HEIGHT: f64 = 600.0;

pub struct Polyline {
    pub label: String,
    pub colour: &'static str,
    /// `(lambda, x)` points.
    pub points: Vec<(f64, f64)>,
}

fn fill(v: Verdict) -> &'static str {
    match v {
        Verdict::Destabilized => "#ffffff",
        Verdict::Tracked => "#b0b0b0",
        Verdict::Exhausted | Verdict::HitFold => "#d04040",
    }
}

/// Cell edges halfway between axis nodes.
fn edges(axis: &[f64]) -> Vec<f64> {
    if axis.len() == 1 {
        return vec![axis[0] - 0.5, axis[0] + 0.5];
    }
    let mut e = Vec::with_capacity(axis.len() + 1);
    e.push(axis[0] - 0.5 * (axis[1] - axis[0]));
    e.extend(axis.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    let n = axis.len();
    e.push(axis[n - 1] + 0.5 * (axis[n - 1] - axis[n - 2]));
    e
}

pub fn render(grid: &ScanGrid, lines: &[Polyline]) -> String {
    let le = edges(&grid.lambda_axis);
    let xe = edges(&grid.x_axis);
    let (l0, l1) = (le[0], *le.last().unwrap());
    let (x0, x1) = (xe[0], *xe.last().unwrap());
    let px = |l: f64| (l - l0) / (l1 - l0) * WIDTH;
    let py = |x: f64| HEIGHT - (x - x0) / (x1 - x0) * HEIGHT;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<g id="cells" shape-rendering="crispEdges">"#);
    let nx = grid.x_axis.len();
    for (k, c) in grid.cells.iter().enumerate() {
        let (il, ix) = (k / nx, k % nx);
        let (a, b) = (px(le[il]), px(le[il + 1]));
        let (top, bottom) = (py(xe[ix + 1]), py(xe[ix]));
        let _ = writeln!(
            s,
            r#"<rect x="{a:.3}" y="{top:.3}" width="{:.3}" height="{:.3}" fill="{}" data-verdict="{}"/>"#,
            b - a,
            bottom - top,
            fill(c.verdict),
            c.verdict.name()
        );
    }
    let _ = writeln!(s, "</g>");
    let _ = writeln!(s, r#"<g id="canards" fill="none" stroke-width="1.5">"#);
    for line in lines {
        let pts: Vec<String> = line
            .points
            .iter()
            .filter(|(l, x)| (l0..=l1).contains(l) && (x0..=x1).contains(x))
            .map(|&(l, x)| format!("{:.3},{:.3}", px(l), py(x)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline stroke="{}" data-label="{}" points="{}"/>"#,
            line.colour,
            line.label,
            pts.join(" ")
        );
    }
    let _ = writeln!(s, "</g>\n</svg>");
    s
}
