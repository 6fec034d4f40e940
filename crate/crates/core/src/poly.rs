//! Sparse polynomials in the three variables `(x, y, lambda)`.
//!
//! Terms are stored as `(i, j, k, c)` meaning `c * x^i * y^j * lambda^k`,
//! the same quadruple layout used by the config files. Differentiation is
//! exact coefficient manipulation.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub i: u32,
    pub j: u32,
    pub k: u32,
    pub c: f64,
}

impl Term {
    pub fn new(i: u32, j: u32, k: u32, c: f64) -> Self {
        Self { i, j, k, c }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Var {
    X,
    Y,
    Lambda,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(from = "Vec<(u32, u32, u32, f64)>", into = "Vec<(u32, u32, u32, f64)>")]
pub struct Poly3 {
    terms: Vec<Term>,
}

impl From<Vec<(u32, u32, u32, f64)>> for Poly3 {
    fn from(quads: Vec<(u32, u32, u32, f64)>) -> Self {
        Self::from_terms(quads.into_iter().map(|(i, j, k, c)| Term::new(i, j, k, c)))
    }
}

impl From<Poly3> for Vec<(u32, u32, u32, f64)> {
    fn from(p: Poly3) -> Self {
        p.terms.iter().map(|t| (t.i, t.j, t.k, t.c)).collect()
    }
}

impl Poly3 {
    pub fn zero() -> Self {
        Self { terms: Vec::new() }
    }

    /// Builds a polynomial, merging repeated monomials and dropping zero coefficients.
    pub fn from_terms<I: IntoIterator<Item = Term>>(terms: I) -> Self {
        let mut merged: Vec<Term> = Vec::new();
        for t in terms {
            match merged
                .iter_mut()
                .find(|m| m.i == t.i && m.j == t.j && m.k == t.k)
            {
                Some(m) => m.c += t.c,
                None => merged.push(t),
            }
        }
        merged.retain(|t| t.c != 0.0);
        merged.sort_by_key(|t| (t.i, t.j, t.k));
        Self { terms: merged }
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn eval(&self, x: f64, y: f64, lambda: f64) -> f64 {
        self.terms
            .iter()
            .map(|t| t.c * pow(x, t.i) * pow(y, t.j) * pow(lambda, t.k))
            .sum()
    }

    pub fn degree_in(&self, var: Var) -> u32 {
        self.terms
            .iter()
            .map(|t| match var {
                Var::X => t.i,
                Var::Y => t.j,
                Var::Lambda => t.k,
            })
            .max()
            .unwrap_or(0)
    }

    pub fn derivative(&self, var: Var) -> Self {
        Self::from_terms(self.terms.iter().filter_map(|t| {
            let (p, next) = match var {
                Var::X => (t.i, Term::new(t.i.saturating_sub(1), t.j, t.k, t.c * t.i as f64)),
                Var::Y => (t.j, Term::new(t.i, t.j.saturating_sub(1), t.k, t.c * t.j as f64)),
                Var::Lambda => (t.k, Term::new(t.i, t.j, t.k.saturating_sub(1), t.c * t.k as f64)),
            };
            (p > 0).then_some(next)
        }))
    }
}

#[inline]
fn pow(v: f64, n: u32) -> f64 {
    match n {
        0 => 1.0,
        1 => v,
        2 => v * v,
        _ => v.powi(n as i32),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example_f() -> Poly3 {
        // x(x-1) + y + lambda
        Poly3::from_terms([
            Term::new(2, 0, 0, 1.0),
            Term::new(1, 0, 0, -1.0),
            Term::new(0, 1, 0, 1.0),
            Term::new(0, 0, 1, 1.0),
        ])
    }

    #[test]
    fn merges_and_drops_zero_terms() {
        let p = Poly3::from_terms([
            Term::new(1, 0, 0, 2.0),
            Term::new(1, 0, 0, -2.0),
            Term::new(0, 1, 0, 3.0),
        ]);
        assert_eq!(p.terms().len(), 1);
        assert_eq!(p.eval(5.0, 2.0, 0.0), 6.0);
    }

    #[test]
    fn exact_partials_of_example() {
        let f = example_f();
        let fx = f.derivative(Var::X);
        let fxx = fx.derivative(Var::X);
        assert_eq!(fx.eval(0.5, 3.0, -1.0), 0.0);
        assert_eq!(fxx.eval(-7.0, 1.0, 2.0), 2.0);
        assert_eq!(f.derivative(Var::Y).eval(1.0, 1.0, 1.0), 1.0);
        assert_eq!(f.derivative(Var::Lambda).eval(1.0, 1.0, 1.0), 1.0);
        assert!(fxx.derivative(Var::X).is_zero());
        assert_eq!(f.degree_in(Var::X), 2);
        assert_eq!(f.degree_in(Var::Y), 1);
    }

    #[test]
    fn quadruple_serde_layout() {
        let f = example_f();
        let quads: Vec<(u32, u32, u32, f64)> = f.clone().into();
        assert_eq!(Poly3::from(quads), f);
    }
}
