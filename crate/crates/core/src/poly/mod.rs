//! Exact multivariate polynomials over the rationals.
//!
//! Terms are kept in a `BTreeMap` keyed by graded-lex monomials, so two
//! equal polynomials always have identical term sequences. Zero
//! coefficients are never stored.

pub mod json;
pub mod linalg;

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use num_bigint::BigInt;
use num_integer::Integer;
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};

pub use json::PolyJson;

pub type Rational = BigRational;

pub fn rat(num: i64, den: i64) -> Rational {
    Rational::new(BigInt::from(num), BigInt::from(den))
}

pub fn int(v: i64) -> Rational {
    Rational::from_integer(BigInt::from(v))
}

pub fn to_f64(q: &Rational) -> f64 {
    // Scale down huge numerators/denominators before dividing.
    match (q.numer().to_f64(), q.denom().to_f64()) {
        (Some(a), Some(b)) if a.is_finite() && b.is_finite() => a / b,
        _ => {
            let shift = q.numer().bits().max(q.denom().bits()).saturating_sub(1000);
            let a = (q.numer() >> shift).to_f64().unwrap_or(0.0);
            let b = (q.denom() >> shift).to_f64().unwrap_or(1.0);
            a / b
        }
    }
}

pub fn from_f64(x: f64) -> Result<Rational> {
    Rational::from_float(x).ok_or_else(|| Error::InvalidArgument(format!("non-finite value {x}")))
}

/// Exponent vector. Ordered graded-lex: total degree first, then
/// lexicographic with `x1` most significant.
#[derive(Clone, PartialEq, Eq, Hash, Debug)]
pub struct Monomial(Vec<u32>);

impl Monomial {
    pub fn new(exps: Vec<u32>) -> Self {
        Monomial(exps)
    }

    pub fn one(n: usize) -> Self {
        Monomial(vec![0; n])
    }

    pub fn var(n: usize, i: usize) -> Self {
        let mut e = vec![0; n];
        e[i] = 1;
        Monomial(e)
    }

    pub fn exps(&self) -> &[u32] {
        &self.0
    }

    pub fn degree(&self) -> u32 {
        self.0.iter().sum()
    }

    pub fn n(&self) -> usize {
        self.0.len()
    }

    pub fn mul(&self, other: &Monomial) -> Monomial {
        Monomial(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    fn parity_mask(&self) -> u64 {
        self.0
            .iter()
            .enumerate()
            .fold(0u64, |m, (i, &e)| m | (((e & 1) as u64) << i))
    }
}

impl Ord for Monomial {
    fn cmp(&self, other: &Self) -> Ordering {
        self.degree().cmp(&other.degree()).then_with(|| self.0.cmp(&other.0))
    }
}

impl PartialOrd for Monomial {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

/// All exponent vectors of total degree `d` in `n` variables, ascending graded-lex.
pub fn monomials_of_degree(n: usize, d: u32) -> Vec<Monomial> {
    fn rec(n: usize, i: usize, left: u32, cur: &mut Vec<u32>, out: &mut Vec<Monomial>) {
        if i == n - 1 {
            cur[i] = left;
            out.push(Monomial(cur.clone()));
            return;
        }
        for e in 0..=left {
            cur[i] = e;
            rec(n, i + 1, left - e, cur, out);
        }
    }
    let mut out = Vec::new();
    if n == 0 {
        return out;
    }
    let mut cur = vec![0; n];
    rec(n, 0, d, &mut cur, &mut out);
    out.sort();
    out
}

fn double_factorial_odd(k: u32) -> BigInt {
    // (k-1)!! for even k, i.e. 1*3*...*(k-1)
    let mut acc = BigInt::one();
    let mut j = 1u32;
    while j < k {
        acc *= j;
        j += 2;
    }
    acc
}

/// Numerator and denominator of the unit-sphere average of `x^gamma`,
/// or `None` when some exponent is odd.
fn sphere_average_parts(n: usize, gamma: &[u32]) -> Option<(BigInt, BigInt)> {
    if gamma.iter().any(|e| e % 2 == 1) {
        return None;
    }
    let num = gamma
        .iter()
        .fold(BigInt::one(), |acc, &e| acc * double_factorial_odd(e));
    let m: u32 = gamma.iter().sum::<u32>() / 2;
    Some((num, sphere_denominator(n, m)))
}

fn sphere_denominator(n: usize, m: u32) -> BigInt {
    (0..m).fold(BigInt::one(), |acc, j| acc * (n as u64 + 2 * j as u64))
}

/// Average of `x^alpha` over the unit sphere in `R^n`.
pub fn sphere_average_monomial(n: usize, alpha: &[u32]) -> Rational {
    match sphere_average_parts(n, alpha) {
        None => Rational::zero(),
        Some((a, b)) => Rational::new(a, b),
    }
}

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct ExactPoly {
    n: usize,
    terms: BTreeMap<Monomial, Rational>,
}

impl ExactPoly {
    pub fn zero(n: usize) -> Self {
        ExactPoly { n, terms: BTreeMap::new() }
    }

    pub fn constant(n: usize, c: Rational) -> Self {
        Self::monomial(n, Monomial::one(n), c)
    }

    pub fn var(n: usize, i: usize) -> Self {
        Self::monomial(n, Monomial::var(n, i), Rational::one())
    }

    pub fn monomial(n: usize, m: Monomial, c: Rational) -> Self {
        assert_eq!(m.n(), n, "monomial arity");
        let mut p = Self::zero(n);
        if !c.is_zero() {
            p.terms.insert(m, c);
        }
        p
    }

    pub fn from_terms<I>(n: usize, terms: I) -> Result<Self>
    where
        I: IntoIterator<Item = (Vec<u32>, Rational)>,
    {
        let mut p = Self::zero(n);
        for (alpha, c) in terms {
            if alpha.len() != n {
                return Err(Error::DimensionMismatch { expected: n, got: alpha.len() });
            }
            p.add_term(Monomial(alpha), c);
        }
        Ok(p)
    }

    fn add_term(&mut self, m: Monomial, c: Rational) {
        if c.is_zero() {
            return;
        }
        use std::collections::btree_map::Entry;
        match self.terms.entry(m) {
            Entry::Vacant(v) => {
                v.insert(c);
            }
            Entry::Occupied(mut o) => {
                let s = o.get() + c;
                if s.is_zero() {
                    o.remove();
                } else {
                    *o.get_mut() = s;
                }
            }
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    /// Terms in ascending graded-lex order.
    pub fn terms(&self) -> impl DoubleEndedIterator<Item = (&Monomial, &Rational)> {
        self.terms.iter()
    }

    pub fn coeff(&self, alpha: &[u32]) -> Rational {
        self.terms
            .get(&Monomial(alpha.to_vec()))
            .cloned()
            .unwrap_or_else(Rational::zero)
    }

    pub fn degree(&self) -> Option<u32> {
        self.terms.keys().next_back().map(|m| m.degree())
    }

    pub fn leading_term(&self) -> Option<(&Monomial, &Rational)> {
        self.terms.iter().next_back()
    }

    pub fn is_homogeneous(&self, d: u32) -> bool {
        self.terms.keys().all(|m| m.degree() == d)
    }

    pub fn homogeneous_part(&self, k: u32) -> ExactPoly {
        ExactPoly {
            n: self.n,
            terms: self
                .terms
                .iter()
                .filter(|(m, _)| m.degree() == k)
                .map(|(m, c)| (m.clone(), c.clone()))
                .collect(),
        }
    }

    pub fn scale(&self, c: &Rational) -> ExactPoly {
        if c.is_zero() {
            return Self::zero(self.n);
        }
        ExactPoly {
            n: self.n,
            terms: self.terms.iter().map(|(m, a)| (m.clone(), a * c)).collect(),
        }
    }

    pub fn partial(&self, i: usize) -> ExactPoly {
        let mut out = Self::zero(self.n);
        for (m, c) in &self.terms {
            let e = m.0[i];
            if e == 0 {
                continue;
            }
            let mut m2 = m.clone();
            m2.0[i] -= 1;
            out.add_term(m2, c * BigInt::from(e));
        }
        out
    }

    pub fn gradient(&self) -> Vec<ExactPoly> {
        (0..self.n).map(|i| self.partial(i)).collect()
    }

    pub fn directional(&self, v: &[Rational]) -> Result<ExactPoly> {
        self.check_len(v.len())?;
        let mut out = Self::zero(self.n);
        for (i, vi) in v.iter().enumerate() {
            if !vi.is_zero() {
                out = &out + &self.partial(i).scale(vi);
            }
        }
        Ok(out)
    }

    pub fn laplacian(&self) -> ExactPoly {
        let mut out = Self::zero(self.n);
        for i in 0..self.n {
            for (m, c) in &self.terms {
                let e = m.0[i];
                if e < 2 {
                    continue;
                }
                let mut m2 = m.clone();
                m2.0[i] -= 2;
                out.add_term(m2, c * BigInt::from(e * (e - 1)));
            }
        }
        out
    }

    pub fn is_harmonic(&self) -> bool {
        self.laplacian().is_zero()
    }

    /// `|x|^2 * self`.
    pub fn times_radius_sq(&self) -> ExactPoly {
        let mut out = Self::zero(self.n);
        for i in 0..self.n {
            for (m, c) in &self.terms {
                let mut m2 = m.clone();
                m2.0[i] += 2;
                out.add_term(m2, c.clone());
            }
        }
        out
    }

    pub fn eval(&self, x: &[Rational]) -> Result<Rational> {
        self.check_len(x.len())?;
        let mut acc = Rational::zero();
        for (m, c) in &self.terms {
            let mut t = c.clone();
            for (xi, &e) in x.iter().zip(&m.0) {
                if e > 0 {
                    t *= num_traits::pow(xi.clone(), e as usize);
                }
            }
            acc += t;
        }
        Ok(acc)
    }

    pub fn eval_f64(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(m, c)| {
                to_f64(c) * m.0.iter().zip(x).map(|(&e, xi)| xi.powi(e as i32)).product::<f64>()
            })
            .sum()
    }

    /// The polynomial `y -> self(x0 + y)`.
    pub fn shift(&self, x0: &[Rational]) -> Result<ExactPoly> {
        self.check_len(x0.len())?;
        let maxe: Vec<u32> = (0..self.n)
            .map(|i| self.terms.keys().map(|m| m.0[i]).max().unwrap_or(0))
            .collect();
        let pows: Vec<Vec<Rational>> = (0..self.n)
            .map(|i| {
                let mut v = vec![Rational::one()];
                for k in 1..=maxe[i] as usize {
                    let next = &v[k - 1] * &x0[i];
                    v.push(next);
                }
                v
            })
            .collect();
        let mut out = Self::zero(self.n);
        for (m, c) in &self.terms {
            // expand prod_i (x0_i + y_i)^{e_i}
            let mut partial: Vec<(Vec<u32>, Rational)> = vec![(vec![0; self.n], c.clone())];
            for i in 0..self.n {
                let e = m.0[i];
                if e == 0 {
                    continue;
                }
                let mut next = Vec::with_capacity(partial.len() * (e as usize + 1));
                for (alpha, a) in &partial {
                    for k in 0..=e {
                        let p = &pows[i][(e - k) as usize];
                        if p.is_zero() {
                            continue;
                        }
                        let mut a2 = alpha.clone();
                        a2[i] = k;
                        next.push((a2, a * p * binomial(e, k)));
                    }
                }
                partial = next;
            }
            for (alpha, a) in partial {
                out.add_term(Monomial(alpha), a);
            }
        }
        Ok(out)
    }

    /// The polynomial `y -> self(s * y)`.
    pub fn dilate(&self, s: &Rational) -> ExactPoly {
        let mut out = Self::zero(self.n);
        for (m, c) in &self.terms {
            out.add_term(m.clone(), c * num_traits::pow(s.clone(), m.degree() as usize));
        }
        out
    }

    /// Re-embed into `n` variables; variable `j` of `self` becomes variable `slots[j]`.
    pub fn embed(&self, n: usize, slots: &[usize]) -> Result<ExactPoly> {
        self.check_len(slots.len())?;
        if slots.iter().any(|&s| s >= n) {
            return Err(Error::InvalidArgument("embedding slot out of range".into()));
        }
        let mut out = Self::zero(n);
        for (m, c) in &self.terms {
            let mut e = vec![0; n];
            for (j, &s) in slots.iter().enumerate() {
                e[s] += m.0[j];
            }
            out.add_term(Monomial(e), c.clone());
        }
        Ok(out)
    }

    pub fn sphere_average(&self) -> Rational {
        let mut acc = Rational::zero();
        for (m, c) in &self.terms {
            if let Some((a, b)) = sphere_average_parts(self.n, &m.0) {
                acc += c * Rational::new(a, b);
            }
        }
        acc
    }

    /// Common denominator and integer numerators.
    fn integer_form(&self) -> (BigInt, Vec<(&Monomial, BigInt)>) {
        let den = self
            .terms
            .values()
            .fold(BigInt::one(), |acc, c| acc.lcm(c.denom()));
        let nums = self
            .terms
            .iter()
            .map(|(m, c)| (m, c.numer() * (&den / c.denom())))
            .collect();
        (den, nums)
    }

    /// `<f, g>` = average of `f g` over the unit sphere.
    pub fn inner(&self, other: &ExactPoly) -> Rational {
        assert_eq!(self.n, other.n, "inner product arity");
        if self.is_zero() || other.is_zero() {
            return Rational::zero();
        }
        let (da, ta) = self.integer_form();
        let (db, tb) = other.integer_form();
        let mut groups: HashMap<u64, Vec<(&Monomial, &BigInt)>> = HashMap::new();
        for (m, c) in &tb {
            groups.entry(m.parity_mask()).or_default().push((m, c));
        }
        let mut by_half_degree: BTreeMap<u32, BigInt> = BTreeMap::new();
        let mut df_cache: HashMap<u32, BigInt> = HashMap::new();
        let mut df = |k: u32| -> BigInt {
            df_cache
                .entry(k)
                .or_insert_with(|| double_factorial_odd(k))
                .clone()
        };
        for (ma, a) in &ta {
            if let Some(g) = groups.get(&ma.parity_mask()) {
                for (mb, b) in g {
                    let mut w = a * *b;
                    let mut half = 0;
                    for (ea, eb) in ma.0.iter().zip(&mb.0) {
                        let e = ea + eb;
                        half += e / 2;
                        if e > 2 {
                            w *= df(e);
                        }
                    }
                    *by_half_degree.entry(half).or_insert_with(BigInt::zero) += w;
                }
            }
        }
        let mut acc = Rational::zero();
        for (m, s) in by_half_degree {
            if !s.is_zero() {
                acc += Rational::new(s, sphere_denominator(self.n, m));
            }
        }
        acc / Rational::from_integer(da * db)
    }

    pub fn norm_sq(&self) -> Rational {
        self.inner(self)
    }

    /// Same polynomial scaled to coprime integer coefficients with a
    /// positive leading coefficient. Returns the scale factor used.
    pub fn primitive(&self) -> (ExactPoly, Rational) {
        if self.is_zero() {
            return (self.clone(), Rational::one());
        }
        let (den, nums) = self.integer_form();
        let g = nums.iter().fold(BigInt::zero(), |acc, (_, c)| acc.gcd(c));
        let lead_neg = self.leading_term().map(|(_, c)| c.is_negative()).unwrap_or(false);
        let mut factor = Rational::new(den, g);
        if lead_neg {
            factor = -factor;
        }
        (self.scale(&factor), factor)
    }

    fn check_len(&self, got: usize) -> Result<()> {
        if got != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got });
        }
        Ok(())
    }

    pub fn to_float(&self) -> crate::numeric::FloatPoly {
        crate::numeric::FloatPoly::new(
            self.n,
            self.terms.iter().map(|(m, c)| (m.0.clone(), to_f64(c))).collect(),
        )
    }
}

fn binomial(n: u32, k: u32) -> BigInt {
    let k = k.min(n - k);
    let mut acc = BigInt::one();
    for j in 0..k {
        acc = acc * BigInt::from(n - j) / BigInt::from(j + 1);
    }
    acc
}

impl<'a> Add<&'a ExactPoly> for &'a ExactPoly {
    type Output = ExactPoly;
    fn add(self, rhs: &ExactPoly) -> ExactPoly {
        assert_eq!(self.n, rhs.n, "polynomial arity");
        let mut out = self.clone();
        for (m, c) in &rhs.terms {
            out.add_term(m.clone(), c.clone());
        }
        out
    }
}

impl<'a> Sub<&'a ExactPoly> for &'a ExactPoly {
    type Output = ExactPoly;
    fn sub(self, rhs: &ExactPoly) -> ExactPoly {
        assert_eq!(self.n, rhs.n, "polynomial arity");
        let mut out = self.clone();
        for (m, c) in &rhs.terms {
            out.add_term(m.clone(), -c.clone());
        }
        out
    }
}

impl Neg for &ExactPoly {
    type Output = ExactPoly;
    fn neg(self) -> ExactPoly {
        self.scale(&-Rational::one())
    }
}

impl<'a> Mul<&'a ExactPoly> for &'a ExactPoly {
    type Output = ExactPoly;
    fn mul(self, rhs: &ExactPoly) -> ExactPoly {
        assert_eq!(self.n, rhs.n, "polynomial arity");
        let mut out = ExactPoly::zero(self.n);
        for (ma, a) in &self.terms {
            for (mb, b) in &rhs.terms {
                out.add_term(ma.mul(mb), a * b);
            }
        }
        out
    }
}

impl fmt::Display for ExactPoly {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_zero() {
            return write!(f, "0");
        }
        for (idx, (m, c)) in self.terms.iter().rev().enumerate() {
            let neg = c.is_negative();
            let a = c.abs();
            if idx == 0 {
                if neg {
                    write!(f, "-")?;
                }
            } else {
                write!(f, "{}", if neg { " - " } else { " + " })?;
            }
            let vars: Vec<String> = m
                .0
                .iter()
                .enumerate()
                .filter(|(_, &e)| e > 0)
                .map(|(i, &e)| {
                    if e == 1 {
                        format!("x{}", i + 1)
                    } else {
                        format!("x{}^{}", i + 1, e)
                    }
                })
                .collect();
            if vars.is_empty() {
                write!(f, "{a}")?;
            } else if a.is_one() {
                write!(f, "{}", vars.join("*"))?;
            } else {
                write!(f, "{}*{}", a, vars.join("*"))?;
            }
        }
        Ok(())
    }
}
