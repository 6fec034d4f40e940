//! Fourth-order Rosenbrock step with embedded third-order error estimate
//! (Shampine's L-stable parameter set for the Kaps-Rentrop family).

use nalgebra::{SMatrix, SVector};

use super::OdeSystem;

const GAM: f64 = 1.0 / 2.0;
const A21: f64 = 2.0;
const A31: f64 = 48.0 / 25.0;
const A32: f64 = 6.0 / 25.0;
const C21: f64 = -8.0;
const C31: f64 = 372.0 / 25.0;
const C32: f64 = 12.0 / 5.0;
const C41: f64 = -112.0 / 125.0;
const C42: f64 = -54.0 / 125.0;
const C43: f64 = -2.0 / 5.0;
const B1: f64 = 19.0 / 9.0;
const B2: f64 = 1.0 / 2.0;
const B3: f64 = 25.0 / 108.0;
const B4: f64 = 125.0 / 108.0;
const E1: f64 = 17.0 / 54.0;
const E2: f64 = 7.0 / 36.0;
const E4: f64 = 125.0 / 108.0;
const C1X: f64 = 1.0 / 2.0;
const C2X: f64 = -3.0 / 2.0;
const C3X: f64 = 121.0 / 50.0;
const C4X: f64 = 29.0 / 250.0;
const A2X: f64 = 1.0;
const A3X: f64 = 3.0 / 5.0;

/// Returns `(y_new, f(t + h, y_new), error estimate)`.
pub(super) fn attempt<S: OdeSystem<N>, const N: usize>(
    sys: &S,
    t: f64,
    y: &SVector<f64, N>,
    f0: &SVector<f64, N>,
    h: f64,
) -> (SVector<f64, N>, SVector<f64, N>, SVector<f64, N>) {
    let nan = SVector::<f64, N>::repeat(f64::NAN);
    let (dfdy, dfdt) = sys.jacobian(t, y);
    let a = SMatrix::<f64, N, N>::identity() / (GAM * h) - dfdy;
    let solve = |rhs: SVector<f64, N>| gauss_solve(a, rhs);

    let Some(g1) = solve(f0 + dfdt * (h * C1X)) else {
        return (nan, nan, nan);
    };
    let f2 = sys.rhs(t + A2X * h, &(y + g1 * A21));
    let Some(g2) = solve(f2 + dfdt * (h * C2X) + g1 * (C21 / h)) else {
        return (nan, nan, nan);
    };
    let f3 = sys.rhs(t + A3X * h, &(y + g1 * A31 + g2 * A32));
    let Some(g3) = solve(f3 + dfdt * (h * C3X) + (g1 * C31 + g2 * C32) / h) else {
        return (nan, nan, nan);
    };
    let Some(g4) = solve(f3 + dfdt * (h * C4X) + (g1 * C41 + g2 * C42 + g3 * C43) / h) else {
        return (nan, nan, nan);
    };
    let y_new = y + g1 * B1 + g2 * B2 + g3 * B3 + g4 * B4;
    let err = g1 * E1 + g2 * E2 + g4 * E4;
    let f_new = sys.rhs(t + h, &y_new);
    (y_new, f_new, err)
}

/// Gaussian elimination with partial pivoting; `None` when singular.
fn gauss_solve<const N: usize>(mut a: SMatrix<f64, N, N>, mut b: SVector<f64, N>) -> Option<SVector<f64, N>> {
    for col in 0..N {
        let piv = (col..N).max_by(|&i, &j| a[(i, col)].abs().total_cmp(&a[(j, col)].abs()))?;
        if a[(piv, col)] == 0.0 || !a[(piv, col)].is_finite() {
            return None;
        }
        a.swap_rows(col, piv);
        b.swap_rows(col, piv);
        for r in col + 1..N {
            let m = a[(r, col)] / a[(col, col)];
            for c in col..N {
                a[(r, c)] -= m * a[(col, c)];
            }
            b[r] -= m * b[col];
        }
    }
    for r in (0..N).rev() {
        let mut acc = b[r];
        for c in r + 1..N {
            acc -= a[(r, c)] * b[c];
        }
        b[r] = acc / a[(r, r)];
    }
    Some(b)
}
