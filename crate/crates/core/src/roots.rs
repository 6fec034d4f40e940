//! Scalar bracketing helpers shared by the geometry, singularity and scan code.

/// Bisection on a sign change of `h` over `[a, b]` until the bracket is
/// narrower than `tol` (or cannot shrink further in floating point).
pub fn bisect<F: FnMut(f64) -> f64>(mut h: F, mut a: f64, mut b: f64, tol: f64) -> f64 {
    let mut ha = h(a);
    if ha == 0.0 {
        return a;
    }
    for _ in 0..200 {
        let m = 0.5 * (a + b);
        if (b - a).abs() <= tol || m == a || m == b {
            break;
        }
        let hm = h(m);
        if hm == 0.0 {
            return m;
        }
        if (hm > 0.0) == (ha > 0.0) {
            a = m;
            ha = hm;
        } else {
            b = m;
        }
    }
    0.5 * (a + b)
}

/// Roots of `h` on `[lo, hi]` found by sign changes over `n` uniform intervals,
/// each refined by bisection to width `tol`.
pub fn scan_roots<F: FnMut(f64) -> f64>(mut h: F, lo: f64, hi: f64, n: usize, tol: f64) -> Vec<f64> {
    let nodes: Vec<f64> = (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect();
    let values: Vec<f64> = nodes.iter().map(|&t| h(t)).collect();
    let mut roots = Vec::new();
    for i in 0..n {
        let (va, vb) = (values[i], values[i + 1]);
        if va == 0.0 {
            roots.push(nodes[i]);
        } else if vb != 0.0 && (va > 0.0) != (vb > 0.0) {
            roots.push(bisect(&mut h, nodes[i], nodes[i + 1], tol));
        }
    }
    if values[n] == 0.0 {
        roots.push(nodes[n]);
    }
    roots
}

/// Golden-section search for a maximum of `h` on `[a, b]`. Returns `(argmax, max)`.
/// `stop` is consulted after every evaluation and ends the search early when it returns true.
pub fn golden_max<F, S>(mut h: F, mut a: f64, mut b: f64, tol: f64, mut stop: S) -> (f64, f64)
where
    F: FnMut(f64) -> f64,
    S: FnMut(f64, f64) -> bool,
{
    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut hc = h(c);
    if stop(c, hc) {
        return (c, hc);
    }
    let mut hd = h(d);
    if stop(d, hd) {
        return (d, hd);
    }
    while (b - a).abs() > tol {
        if hc >= hd {
            b = d;
            d = c;
            hd = hc;
            c = b - INV_PHI * (b - a);
            if c == d {
                break;
            }
            hc = h(c);
            if stop(c, hc) {
                return (c, hc);
            }
        } else {
            a = c;
            c = d;
            hc = hd;
            d = a + INV_PHI * (b - a);
            if c == d {
                break;
            }
            hd = h(d);
            if stop(d, hd) {
                return (d, hd);
            }
        }
    }
    if hc >= hd {
        (c, hc)
    } else {
        (d, hd)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finds_all_cubic_roots() {
        let roots = scan_roots(|x| (x - 1.0) * (x + 0.5) * (x - 2.25), -3.0, 3.0, 100, 1e-14);
        assert_eq!(roots.len(), 3);
        for (r, e) in roots.iter().zip([-0.5, 1.0, 2.25]) {
            assert!((r - e).abs() < 1e-12);
        }
    }

    #[test]
    fn golden_finds_peak() {
        let (x, v) = golden_max(|x| -(x - 0.3) * (x - 0.3), -1.0, 2.0, 1e-10, |_, _| false);
        assert!((x - 0.3).abs() < 1e-8 && v <= 0.0);
    }
}
