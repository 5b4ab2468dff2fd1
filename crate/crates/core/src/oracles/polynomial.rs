//! Exact multivariate polynomials and their expectations under a standard
//! Gaussian.

use std::collections::BTreeMap;
use std::fmt::Debug;

use num_rational::Ratio;
use num_traits::{Num, ToPrimitive};

use crate::error::{arg, Result};

/// Largest per-coordinate exponent accepted by [`SparsePolynomial::gaussian_expectation`].
pub const MAX_MOMENT_DEGREE: u32 = 16;

/// Coefficient ring for [`SparsePolynomial`].
pub trait Coefficient: Num + Clone + Debug + PartialEq {
    fn from_int(v: i64) -> Self;
    fn to_f64(&self) -> f64;
}

impl Coefficient for f64 {
    fn from_int(v: i64) -> Self {
        v as f64
    }

    fn to_f64(&self) -> f64 {
        *self
    }
}

impl Coefficient for Ratio<i128> {
    fn from_int(v: i64) -> Self {
        Ratio::from_integer(v as i128)
    }

    fn to_f64(&self) -> f64 {
        ToPrimitive::to_f64(self).unwrap_or(f64::NAN)
    }
}

/// Exponent vector, one entry per variable.
pub type Exponents = Vec<u32>;

/// Polynomial in `nvars` variables stored as exponent-vector -> coefficient.
/// Zero coefficients are never stored.
#[derive(Clone, Debug, PartialEq)]
pub struct SparsePolynomial<C: Coefficient> {
    nvars: usize,
    terms: BTreeMap<Exponents, C>,
}

impl<C: Coefficient> SparsePolynomial<C> {
    pub fn zero(nvars: usize) -> Self {
        Self {
            nvars,
            terms: BTreeMap::new(),
        }
    }

    pub fn constant(nvars: usize, c: C) -> Self {
        let mut p = Self::zero(nvars);
        p.add_term(vec![0; nvars], c);
        p
    }

    pub fn one(nvars: usize) -> Self {
        Self::constant(nvars, C::one())
    }

    /// The coordinate polynomial `x[var]` (0-based).
    pub fn variable(nvars: usize, var: usize) -> Self {
        assert!(var < nvars, "variable index out of range");
        let mut e = vec![0; nvars];
        e[var] = 1;
        Self::monomial(e, C::one())
    }

    pub fn monomial(exponents: Exponents, c: C) -> Self {
        let mut p = Self::zero(exponents.len());
        p.add_term(exponents, c);
        p
    }

    pub fn nvars(&self) -> usize {
        self.nvars
    }

    pub fn terms(&self) -> impl Iterator<Item = (&Exponents, &C)> {
        self.terms.iter()
    }

    pub fn term_count(&self) -> usize {
        self.terms.len()
    }

    pub fn coefficient(&self, exponents: &[u32]) -> C {
        self.terms.get(exponents).cloned().unwrap_or_else(C::zero)
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|e| e.iter().sum::<u32>()).max().unwrap_or(0)
    }

    pub fn add_term(&mut self, exponents: Exponents, c: C) {
        assert_eq!(exponents.len(), self.nvars, "exponent length mismatch");
        if c.is_zero() {
            return;
        }
        let entry = self.terms.entry(exponents);
        match entry {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(c);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                let sum = o.get().clone() + c;
                if sum.is_zero() {
                    o.remove();
                } else {
                    *o.get_mut() = sum;
                }
            }
        }
    }

    pub fn add(&self, rhs: &Self) -> Self {
        assert_eq!(self.nvars, rhs.nvars, "variable count mismatch");
        let mut out = self.clone();
        for (e, c) in &rhs.terms {
            out.add_term(e.clone(), c.clone());
        }
        out
    }

    pub fn sub(&self, rhs: &Self) -> Self {
        self.add(&rhs.scale(&(C::zero() - C::one())))
    }

    pub fn scale(&self, c: &C) -> Self {
        let mut out = Self::zero(self.nvars);
        for (e, v) in &self.terms {
            out.add_term(e.clone(), v.clone() * c.clone());
        }
        out
    }

    pub fn mul(&self, rhs: &Self) -> Self {
        assert_eq!(self.nvars, rhs.nvars, "variable count mismatch");
        let mut out = Self::zero(self.nvars);
        for (ea, ca) in &self.terms {
            for (eb, cb) in &rhs.terms {
                let e = ea.iter().zip(eb).map(|(a, b)| a + b).collect();
                out.add_term(e, ca.clone() * cb.clone());
            }
        }
        out
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        assert_eq!(x.len(), self.nvars, "point dimension mismatch");
        self.terms
            .iter()
            .map(|(e, c)| c.to_f64() * e.iter().zip(x).map(|(&k, &xi)| xi.powi(k as i32)).product::<f64>())
            .sum()
    }

    pub fn map_coefficients<D: Coefficient>(&self, f: impl Fn(&C) -> D) -> SparsePolynomial<D> {
        let mut out = SparsePolynomial::zero(self.nvars);
        for (e, c) in &self.terms {
            out.add_term(e.clone(), f(c));
        }
        out
    }

    /// Exact `E[p(x)]` for `x ~ N(0, I)`: each term contributes the product
    /// of univariate moments, `(k-1)!!` for even `k` and zero for odd `k`.
    pub fn gaussian_expectation(&self) -> Result<C> {
        let mut total = C::zero();
        for (e, c) in &self.terms {
            let mut m = C::one();
            for &k in e {
                if k > MAX_MOMENT_DEGREE {
                    return arg(format!(
                        "exponent {k} exceeds the supported moment degree {MAX_MOMENT_DEGREE}"
                    ));
                }
                match gaussian_moment(k) {
                    0 => {
                        m = C::zero();
                        break;
                    }
                    v => m = m * C::from_int(v),
                }
            }
            total = total + c.clone() * m;
        }
        Ok(total)
    }
}

/// `E[z^k]` for `z ~ N(0, 1)`.
pub fn gaussian_moment(k: u32) -> i64 {
    if k % 2 == 1 {
        return 0;
    }
    (1..k as i64).step_by(2).product()
}
