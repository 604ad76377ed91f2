//! Exact symbolic arithmetic: rational complex scalars and multivariate
//! integer-symbol polynomials.
//!
//! Scheme coefficients must be reproduced coefficient-exactly, so everything
//! in the symbolic pipeline is built on `Rational64` rather than floats.
//! Symbols are the formal frequencies of a paired forest (symbol 0 is the
//! distinguished output frequency `k`); a [`SymPoly`] is a polynomial with
//! rational coefficients in those symbols, and a [`CPoly`] carries a real and
//! an imaginary part.

use num_rational::Rational64;
use num_traits::{One, Signed, Zero};
use smallvec::SmallVec;
use std::collections::BTreeMap;
use std::fmt;

/// Identifier of a formal frequency symbol. `0` is reserved for the output
/// frequency `k`.
pub type SymbolId = u32;

/// The reserved symbol for the output frequency of a scheme.
pub const ROOT_SYMBOL: SymbolId = 0;

// ---------------------------------------------------------------------------
// Complex rationals
// ---------------------------------------------------------------------------

/// A complex number with exact rational real and imaginary parts.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct CRat {
    pub re: Rational64,
    pub im: Rational64,
}

impl CRat {
    pub fn new(re: Rational64, im: Rational64) -> Self {
        Self { re, im }
    }

    pub fn zero() -> Self {
        Self::new(Rational64::zero(), Rational64::zero())
    }

    pub fn one() -> Self {
        Self::new(Rational64::one(), Rational64::zero())
    }

    /// The imaginary unit.
    pub fn i() -> Self {
        Self::new(Rational64::zero(), Rational64::one())
    }

    pub fn from_int(n: i64) -> Self {
        Self::new(Rational64::from_integer(n), Rational64::zero())
    }

    pub fn from_ratio(num: i64, den: i64) -> Self {
        Self::new(Rational64::new(num, den), Rational64::zero())
    }

    pub fn is_zero(&self) -> bool {
        self.re.is_zero() && self.im.is_zero()
    }

    pub fn conj(&self) -> Self {
        Self::new(self.re, -self.im)
    }

    pub fn neg(&self) -> Self {
        Self::new(-self.re, -self.im)
    }

    pub fn add(&self, other: &Self) -> Self {
        Self::new(self.re + other.re, self.im + other.im)
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self::new(self.re - other.re, self.im - other.im)
    }

    pub fn mul(&self, other: &Self) -> Self {
        Self::new(
            self.re * other.re - self.im * other.im,
            self.re * other.im + self.im * other.re,
        )
    }

    pub fn scale(&self, s: Rational64) -> Self {
        Self::new(self.re * s, self.im * s)
    }

    /// i^n for n >= 0.
    pub fn i_pow(n: u32) -> Self {
        match n % 4 {
            0 => Self::one(),
            1 => Self::i(),
            2 => Self::from_int(-1),
            _ => Self::new(Rational64::zero(), -Rational64::one()),
        }
    }

    pub fn to_f64(&self) -> (f64, f64) {
        (ratio_to_f64(self.re), ratio_to_f64(self.im))
    }
}

pub fn ratio_to_f64(r: Rational64) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

impl fmt::Display for CRat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.im.is_zero() {
            write!(f, "{}", self.re)
        } else if self.re.is_zero() {
            write!(f, "{}i", self.im)
        } else if self.im.is_negative() {
            write!(f, "({}{}i)", self.re, self.im)
        } else {
            write!(f, "({}+{}i)", self.re, self.im)
        }
    }
}

// ---------------------------------------------------------------------------
// Monomials and polynomials
// ---------------------------------------------------------------------------

/// A monomial in the frequency symbols: sorted list of (symbol, exponent).
#[derive(Clone, PartialEq, Eq, PartialOrd, Ord, Debug, Default, Hash)]
pub struct Monomial(pub SmallVec<[(SymbolId, u8); 4]>);

impl Monomial {
    pub fn unit() -> Self {
        Self(SmallVec::new())
    }

    pub fn symbol(s: SymbolId) -> Self {
        Self(smallvec::smallvec![(s, 1)])
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().map(|&(_, e)| e as u32).sum()
    }

    /// Number of distinct symbols appearing in the monomial.
    pub fn support(&self) -> usize {
        self.0.len()
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out: SmallVec<[(SymbolId, u8); 4]> = SmallVec::new();
        let (mut i, mut j) = (0, 0);
        while i < self.0.len() || j < other.0.len() {
            if j >= other.0.len() || (i < self.0.len() && self.0[i].0 < other.0[j].0) {
                out.push(self.0[i]);
                i += 1;
            } else if i >= self.0.len() || other.0[j].0 < self.0[i].0 {
                out.push(other.0[j]);
                j += 1;
            } else {
                out.push((self.0[i].0, self.0[i].1 + other.0[j].1));
                i += 1;
                j += 1;
            }
        }
        Self(out)
    }
}

/// A polynomial with rational coefficients over the frequency symbols.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct SymPoly {
    pub terms: BTreeMap<Monomial, Rational64>,
}

impl SymPoly {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn constant(c: Rational64) -> Self {
        let mut p = Self::zero();
        if !c.is_zero() {
            p.terms.insert(Monomial::unit(), c);
        }
        p
    }

    pub fn from_int(n: i64) -> Self {
        Self::constant(Rational64::from_integer(n))
    }

    pub fn symbol(s: SymbolId) -> Self {
        let mut p = Self::zero();
        p.terms.insert(Monomial::symbol(s), Rational64::one());
        p
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add_term(&mut self, m: Monomial, c: Rational64) {
        if c.is_zero() {
            return;
        }
        let entry = self.terms.entry(m).or_insert_with(Rational64::zero);
        *entry += c;
        if entry.is_zero() {
            // remove cancelled terms so is_zero stays meaningful
            let key = self
                .terms
                .iter()
                .find(|(_, v)| v.is_zero())
                .map(|(k, _)| k.clone());
            if let Some(k) = key {
                self.terms.remove(&k);
            }
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), *c);
        }
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        for (m, c) in &other.terms {
            out.add_term(m.clone(), -*c);
        }
        out
    }

    pub fn neg(&self) -> Self {
        let mut out = Self::zero();
        for (m, c) in &self.terms {
            out.terms.insert(m.clone(), -*c);
        }
        out
    }

    pub fn scale(&self, s: Rational64) -> Self {
        if s.is_zero() {
            return Self::zero();
        }
        let mut out = Self::zero();
        for (m, c) in &self.terms {
            out.terms.insert(m.clone(), *c * s);
        }
        out
    }

    pub fn mul(&self, other: &Self) -> Self {
        let mut out = Self::zero();
        for (ma, ca) in &self.terms {
            for (mb, cb) in &other.terms {
                out.add_term(ma.mul(mb), *ca * *cb);
            }
        }
        out
    }

    pub fn pow(&self, n: u32) -> Self {
        let mut out = Self::constant(Rational64::one());
        for _ in 0..n {
            out = out.mul(self);
        }
        out
    }

    /// Evaluate at an integer assignment of the symbols (d = 1).
    pub fn eval_f64(&self, assign: &dyn Fn(SymbolId) -> f64) -> f64 {
        let mut total = 0.0;
        for (m, c) in &self.terms {
            let mut v = ratio_to_f64(*c);
            for &(s, e) in &m.0 {
                v *= assign(s).powi(e as i32);
            }
            total += v;
        }
        total
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(Monomial::degree).max().unwrap_or(0)
    }

    /// True when some monomial mixes two or more distinct symbols.
    ///
    /// Distinguishes resonance phases like `2(k^2 - k_2^2)` (pure squares)
    /// from convolution-type phases like `2(k - y)(k + x)`.
    pub fn has_mixed_monomial(&self) -> bool {
        self.terms.keys().any(|m| m.support() >= 2)
    }

    /// Rename symbols through the given map; unmapped symbols are kept.
    pub fn rename(&self, map: &dyn Fn(SymbolId) -> SymbolId) -> Self {
        let mut out = Self::zero();
        for (m, c) in &self.terms {
            let mut v: SmallVec<[(SymbolId, u8); 4]> = SmallVec::new();
            for &(s, e) in &m.0 {
                v.push((map(s), e));
            }
            v.sort();
            // merge duplicates created by the renaming
            let mut merged: SmallVec<[(SymbolId, u8); 4]> = SmallVec::new();
            for (s, e) in v {
                if let Some(last) = merged.last_mut() {
                    if last.0 == s {
                        last.1 += e;
                        continue;
                    }
                }
                merged.push((s, e));
            }
            out.add_term(Monomial(merged), *c);
        }
        out
    }
}

impl fmt::Display for SymPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.terms.is_empty() {
            return write!(f, "0");
        }
        let mut first = true;
        for (m, c) in &self.terms {
            if !first {
                write!(f, " + ")?;
            }
            first = false;
            write!(f, "{}", c)?;
            for &(s, e) in &m.0 {
                let name = if s == ROOT_SYMBOL {
                    "k".to_string()
                } else {
                    format!("k{}", s)
                };
                if e == 1 {
                    write!(f, "*{}", name)?;
                } else {
                    write!(f, "*{}^{}", name, e)?;
                }
            }
        }
        Ok(())
    }
}

/// Complex-coefficient polynomial over the frequency symbols.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct CPoly {
    pub re: SymPoly,
    pub im: SymPoly,
}

impl CPoly {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_real(p: SymPoly) -> Self {
        Self {
            re: p,
            im: SymPoly::zero(),
        }
    }

    pub fn from_scalar(c: CRat) -> Self {
        Self {
            re: SymPoly::constant(c.re),
            im: SymPoly::constant(c.im),
        }
    }

    pub fn is_zero(&self) -> bool {
        self.re.is_zero() && self.im.is_zero()
    }

    pub fn conj(&self) -> Self {
        Self {
            re: self.re.clone(),
            im: self.im.neg(),
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        Self {
            re: self.re.add(&other.re),
            im: self.im.add(&other.im),
        }
    }

    pub fn sub(&self, other: &Self) -> Self {
        Self {
            re: self.re.sub(&other.re),
            im: self.im.sub(&other.im),
        }
    }

    pub fn mul(&self, other: &Self) -> Self {
        Self {
            re: self.re.mul(&other.re).sub(&self.im.mul(&other.im)),
            im: self.re.mul(&other.im).add(&self.im.mul(&other.re)),
        }
    }

    pub fn scale(&self, c: &CRat) -> Self {
        Self {
            re: self.re.scale(c.re).sub(&self.im.scale(c.im)),
            im: self.re.scale(c.im).add(&self.im.scale(c.re)),
        }
    }

    /// (i * p)^n for a real polynomial p.
    pub fn i_times_pow(p: &SymPoly, n: u32) -> Self {
        let mut out = Self::from_scalar(CRat::one());
        let ip = Self {
            re: SymPoly::zero(),
            im: p.clone(),
        };
        for _ in 0..n {
            out = out.mul(&ip);
        }
        out
    }

    pub fn eval_f64(&self, assign: &dyn Fn(SymbolId) -> f64) -> num_complex::Complex64 {
        num_complex::Complex64::new(self.re.eval_f64(assign), self.im.eval_f64(assign))
    }
}

/// Polynomial in the time step `tau` with [`CPoly`] coefficients.
///
/// Index `j` holds the coefficient of `tau^j`.
#[derive(Clone, PartialEq, Eq, Debug, Default)]
pub struct TauPoly {
    pub coeffs: Vec<CPoly>,
}

impl TauPoly {
    pub fn zero() -> Self {
        Self { coeffs: vec![] }
    }

    pub fn one() -> Self {
        Self {
            coeffs: vec![CPoly::from_scalar(CRat::one())],
        }
    }

    pub fn monomial(power: usize, coeff: CPoly) -> Self {
        let mut coeffs = vec![CPoly::zero(); power + 1];
        coeffs[power] = coeff;
        Self { coeffs }
    }

    pub fn is_zero(&self) -> bool {
        self.coeffs.iter().all(CPoly::is_zero)
    }

    pub fn coeff(&self, j: usize) -> CPoly {
        self.coeffs.get(j).cloned().unwrap_or_default()
    }

    pub fn add(&self, other: &Self) -> Self {
        let n = self.coeffs.len().max(other.coeffs.len());
        let mut coeffs = Vec::with_capacity(n);
        for j in 0..n {
            coeffs.push(self.coeff(j).add(&other.coeff(j)));
        }
        Self { coeffs }
    }

    pub fn mul(&self, other: &Self) -> Self {
        if self.is_zero() || other.is_zero() {
            return Self::zero();
        }
        let mut coeffs = vec![CPoly::zero(); self.coeffs.len() + other.coeffs.len() - 1];
        for (a, ca) in self.coeffs.iter().enumerate() {
            if ca.is_zero() {
                continue;
            }
            for (b, cb) in other.coeffs.iter().enumerate() {
                if cb.is_zero() {
                    continue;
                }
                coeffs[a + b] = coeffs[a + b].add(&ca.mul(cb));
            }
        }
        Self { coeffs }
    }

    pub fn conj(&self) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(CPoly::conj).collect(),
        }
    }

    pub fn scale(&self, c: &CRat) -> Self {
        Self {
            coeffs: self.coeffs.iter().map(|p| p.scale(c)).collect(),
        }
    }

    /// Keep only powers `tau^j` with `j <= cut`.
    pub fn truncate(&self, cut: usize) -> Self {
        let mut coeffs = self.coeffs.clone();
        coeffs.truncate(cut + 1);
        Self { coeffs }
    }

    pub fn eval_f64(&self, tau: f64, assign: &dyn Fn(SymbolId) -> f64) -> num_complex::Complex64 {
        let mut acc = num_complex::Complex64::new(0.0, 0.0);
        let mut tp = 1.0;
        for c in &self.coeffs {
            acc += c.eval_f64(assign) * tp;
            tp *= tau;
        }
        acc
    }
}
