//! Harmonic expansions `u(x0 + y) = sum_k a_k P_k(y)` and their frequency.
//!
//! An [`Expansion`] stores each degree as `coeff * poly` with rational data
//! and a global rational `denom`, so `u = denom^{-1/2} sum coeff * poly`.
//! Then `a_k^2 = coeff^2 <poly, poly> / denom` is rational and the height
//! and frequency at rational radii are exact. Tangent maps stay exact
//! because their normalizing factor only enters through `denom`.

use std::io::Write;

use num_traits::{One, Signed, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::{frequency_from_weights, TaylorEngine};
use crate::poly::json::{parse_rational_str, rational_to_string};
use crate::poly::{from_f64, int, to_f64, ExactPoly, PolyJson, Rational};

#[derive(Clone, Debug, PartialEq)]
pub struct Term {
    pub degree: u32,
    pub coeff: Rational,
    pub poly: ExactPoly,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Expansion {
    n: usize,
    center: Vec<Rational>,
    terms: Vec<Term>,
    denom: Rational,
    /// `(k, a_k^2)` for every stored degree.
    weights: Vec<(u32, Rational)>,
}

/// Which frequency to compute: with or without subtracting `u(x)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FrequencyKind {
    Normalized,
    Unnormalized,
}

impl Expansion {
    pub fn new(n: usize, center: Vec<Rational>, terms: Vec<Term>, denom: Rational) -> Result<Self> {
        if center.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: center.len() });
        }
        if !denom.is_positive() {
            return Err(Error::InvalidArgument("denominator must be positive".into()));
        }
        let mut merged: Vec<Term> = Vec::new();
        for t in terms {
            if t.poly.n() != n {
                return Err(Error::DimensionMismatch { expected: n, got: t.poly.n() });
            }
            if !t.poly.is_homogeneous(t.degree) {
                return Err(Error::NotHomogeneous(t.degree));
            }
            if !t.poly.is_harmonic() {
                return Err(Error::NotHarmonic);
            }
            if t.coeff.is_zero() || t.poly.is_zero() {
                continue;
            }
            match merged.iter_mut().find(|m| m.degree == t.degree) {
                Some(m) => {
                    let sum = &m.poly.scale(&m.coeff) + &t.poly.scale(&t.coeff);
                    m.coeff = Rational::one();
                    m.poly = sum;
                }
                None => merged.push(t),
            }
        }
        merged.retain(|t| !t.poly.is_zero());
        merged.sort_by_key(|t| t.degree);
        let weights = merged
            .iter()
            .map(|t| (t.degree, &t.coeff * &t.coeff * t.poly.norm_sq() / &denom))
            .collect();
        Ok(Expansion { n, center, terms: merged, denom, weights })
    }

    /// Splits a harmonic polynomial (in coordinates relative to `center`) by degree.
    pub fn from_poly(center: Vec<Rational>, p: &ExactPoly) -> Result<Self> {
        if !p.is_harmonic() {
            return Err(Error::NotHarmonic);
        }
        let deg = p.degree().unwrap_or(0);
        let terms = (0..=deg)
            .map(|k| Term { degree: k, coeff: Rational::one(), poly: p.homogeneous_part(k) })
            .collect();
        Self::new(p.n(), center, terms, Rational::one())
    }

    pub fn at_origin(p: &ExactPoly) -> Result<Self> {
        Self::from_poly(vec![Rational::zero(); p.n()], p)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn center(&self) -> &[Rational] {
        &self.center
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn denom(&self) -> &Rational {
        &self.denom
    }

    pub fn max_degree(&self) -> u32 {
        self.terms.last().map(|t| t.degree).unwrap_or(0)
    }

    /// `coeff * poly` for degree `k` (still to be divided by `sqrt(denom)`).
    pub fn component(&self, k: u32) -> Option<ExactPoly> {
        self.terms.iter().find(|t| t.degree == k).map(|t| t.poly.scale(&t.coeff))
    }

    /// `sum_k coeff_k * poly_k`, i.e. `sqrt(denom) * u(x0 + y)`.
    pub fn polynomial(&self) -> ExactPoly {
        self.terms
            .iter()
            .fold(ExactPoly::zero(self.n), |acc, t| &acc + &t.poly.scale(&t.coeff))
    }

    pub fn weights(&self) -> &[(u32, Rational)] {
        &self.weights
    }

    pub fn a_sq(&self, k: u32) -> Rational {
        self.weights
            .iter()
            .find(|(d, _)| *d == k)
            .map(|(_, w)| w.clone())
            .unwrap_or_else(Rational::zero)
    }

    pub fn weights_f64(&self) -> Vec<f64> {
        let mut w = vec![0.0; self.max_degree() as usize + 1];
        for (k, a) in &self.weights {
            w[*k as usize] = to_f64(a);
        }
        w
    }

    /// `h(r) = sum_k a_k^2 r^{2k}`, constant term included.
    pub fn height(&self, r: &Rational) -> Rational {
        self.sum_weights(r, 0, 0)
    }

    /// Height of `u - u(x0)`.
    pub fn height_normalized(&self, r: &Rational) -> Rational {
        self.sum_weights(r, 1, 0)
    }

    fn sum_weights(&self, r: &Rational, min_k: u32, power_of_k: u32) -> Rational {
        let r2 = r * r;
        let mut acc = Rational::zero();
        for (k, w) in &self.weights {
            if *k < min_k {
                continue;
            }
            let t = w * num_traits::pow(r2.clone(), *k as usize);
            acc += t * num_traits::pow(int(*k as i64), power_of_k as usize);
        }
        acc
    }

    pub fn freq(&self, r: &Rational) -> Result<Rational> {
        self.freq_kind(r, FrequencyKind::Normalized)
    }

    pub fn freq_kind(&self, r: &Rational, kind: FrequencyKind) -> Result<Rational> {
        let num = self.sum_weights(r, 1, 1);
        let den = match kind {
            FrequencyKind::Normalized => self.sum_weights(r, 1, 0),
            FrequencyKind::Unnormalized => self.sum_weights(r, 0, 0),
        };
        if den.is_zero() {
            return Err(Error::VanishingHeight);
        }
        Ok(num / den)
    }

    pub fn freq_f64(&self, r: f64) -> Result<f64> {
        frequency_from_weights(&self.weights_f64(), r).ok_or(Error::VanishingHeight)
    }

    pub fn height_f64(&self, r: f64) -> f64 {
        self.weights_f64().iter().enumerate().map(|(k, w)| w * r.powi(2 * k as i32)).sum()
    }

    pub fn height_normalized_f64(&self, r: f64) -> f64 {
        self.weights_f64().iter().enumerate().skip(1).map(|(k, w)| w * r.powi(2 * k as i32)).sum()
    }

    /// `r N'(r)` for the normalized frequency: twice the variance of `k`
    /// under the weights `a_k^2 r^{2k}`.
    pub fn r_dfreq(&self, r: &Rational) -> Result<Rational> {
        let s0 = self.sum_weights(r, 1, 0);
        if s0.is_zero() {
            return Err(Error::VanishingHeight);
        }
        let s1 = self.sum_weights(r, 1, 1);
        let s2 = self.sum_weights(r, 1, 2);
        Ok(int(2) * (s2 * &s0 - &s1 * &s1) / (&s0 * &s0))
    }

    /// Re-expansion about `x0 + x`.
    pub fn shift(&self, x: &[Rational]) -> Result<Expansion> {
        if x.len() != self.n {
            return Err(Error::DimensionMismatch { expected: self.n, got: x.len() });
        }
        let q = self.polynomial().shift(x)?;
        let center: Vec<Rational> = self.center.iter().zip(x).map(|(a, b)| a + b).collect();
        let deg = q.degree().unwrap_or(0);
        let terms = (0..=deg)
            .map(|k| Term { degree: k, coeff: Rational::one(), poly: q.homogeneous_part(k) })
            .collect();
        Expansion::new(self.n, center, terms, self.denom.clone())
    }

    /// `N(x0 + x, r)`.
    pub fn freq_at(&self, x: &[Rational], r: &Rational) -> Result<Rational> {
        self.shift(x)?.freq(r)
    }

    /// `T(y) = (u(x0 + x + r y) - u(x0 + x)) / sqrt(H)` with `H` the
    /// normalized height at radius `r`; the result is centred at the origin.
    pub fn tangent_map(&self, x: &[Rational], r: &Rational) -> Result<Expansion> {
        if !r.is_positive() {
            return Err(Error::InvalidArgument("radius must be positive".into()));
        }
        let s = self.shift(x)?;
        let h = s.height_normalized(r);
        if h.is_zero() {
            return Err(Error::VanishingHeight);
        }
        let terms = s
            .terms
            .iter()
            .filter(|t| t.degree > 0)
            .map(|t| Term {
                degree: t.degree,
                coeff: &t.coeff * num_traits::pow(r.clone(), t.degree as usize),
                poly: t.poly.clone(),
            })
            .collect();
        Expansion::new(self.n, vec![Rational::zero(); self.n], terms, &self.denom * h)
    }

    pub fn to_float(&self) -> FloatExpansion {
        FloatExpansion::new(self)
    }

    pub fn to_json(&self) -> ExpansionJson {
        ExpansionJson {
            n: self.n,
            x0: self.center.iter().map(rational_to_string).collect(),
            terms: self
                .terms
                .iter()
                .map(|t| TermJson { k: t.degree, a: rational_to_string(&t.coeff), p: t.poly.to_json() })
                .collect(),
            denom: if self.denom.is_one() { None } else { Some(rational_to_string(&self.denom)) },
        }
    }

    pub fn from_json(j: &ExpansionJson) -> Result<Expansion> {
        let center = j.x0.iter().map(|s| parse_rational_str(s)).collect::<Result<Vec<_>>>()?;
        let terms = j
            .terms
            .iter()
            .map(|t| {
                Ok(Term { degree: t.k, coeff: parse_rational_str(&t.a)?, poly: ExactPoly::from_json(&t.p)? })
            })
            .collect::<Result<Vec<_>>>()?;
        let denom = match &j.denom {
            Some(s) => parse_rational_str(s)?,
            None => Rational::one(),
        };
        Expansion::new(j.n, center, terms, denom)
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct TermJson {
    pub k: u32,
    pub a: String,
    #[serde(rename = "P")]
    pub p: PolyJson,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct ExpansionJson {
    pub n: usize,
    pub x0: Vec<String>,
    pub terms: Vec<TermJson>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub denom: Option<String>,
}

/// Floating-point twin of an [`Expansion`], for evaluation at arbitrary
/// points. Positions passed in are world coordinates.
#[derive(Clone, Debug)]
pub struct FloatExpansion {
    engine: TaylorEngine,
    center: Vec<f64>,
}

impl FloatExpansion {
    pub fn new(e: &Expansion) -> Self {
        let s = 1.0 / to_f64(&e.denom).sqrt();
        let f = e.polynomial().to_float();
        let scaled = crate::numeric::FloatPoly::new(
            f.n(),
            f.terms().iter().map(|(a, c)| (a.clone(), c * s)).collect(),
        );
        FloatExpansion { engine: TaylorEngine::with_degree(&scaled, e.max_degree()), center: e.center.iter().map(to_f64).collect() }
    }

    pub fn n(&self) -> usize {
        self.center.len()
    }

    pub fn center(&self) -> &[f64] {
        &self.center
    }

    pub fn engine(&self) -> &TaylorEngine {
        &self.engine
    }

    fn local(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.center).map(|(a, b)| a - b).collect()
    }

    /// Taylor coefficients of `u` about world point `x`.
    pub fn taylor(&self, x: &[f64]) -> Vec<f64> {
        self.engine.taylor_at(&self.local(x))
    }

    /// `a_k(x)^2` for `k = 0..=D`.
    pub fn weights_at(&self, x: &[f64]) -> Vec<f64> {
        self.engine.graded_weights(&self.taylor(x))
    }

    pub fn freq_at(&self, x: &[f64], r: f64) -> Option<f64> {
        frequency_from_weights(&self.weights_at(x), r)
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.taylor(x)[0]
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.engine.gradient_at(&self.taylor(x))
    }
}

/// Nearest integer, with half-integers going down, and the distance to it.
pub fn nearest_integer(q: &Rational) -> (i64, Rational) {
    let fl = q.floor();
    let frac = q - &fl;
    let half = Rational::new(1.into(), 2.into());
    let k = if frac > half { &fl + Rational::one() } else { fl };
    let dist = (q - &k).abs();
    (k.to_integer().to_i64().unwrap_or(i64::MAX), dist)
}

pub fn nearest_integer_f64(x: f64) -> (i64, f64) {
    let fl = x.floor();
    let k = if x - fl > 0.5 { fl + 1.0 } else { fl };
    (k as i64, (x - k).abs())
}

/// `N(x, r1) - N(x, r2)`.
pub fn pinch(e: &Expansion, x: &[Rational], r2: &Rational, r1: &Rational) -> Result<Rational> {
    let s = e.shift(x)?;
    Ok(s.freq(r1)? - s.freq(r2)?)
}

pub fn pinch_f64(e: &FloatExpansion, x: &[f64], r2: f64, r1: f64) -> Result<f64> {
    let w = e.weights_at(x);
    let a = frequency_from_weights(&w, r1).ok_or(Error::VanishingHeight)?;
    let b = frequency_from_weights(&w, r2).ok_or(Error::VanishingHeight)?;
    Ok(a - b)
}

#[derive(Clone, Debug, PartialEq)]
pub struct PinchOde {
    pub freq: Rational,
    pub nearest: i64,
    pub eps: Rational,
    /// `r N'(r)`.
    pub lhs: Rational,
    /// `2 eps (1 - eps)`.
    pub rhs: Rational,
}

impl PinchOde {
    pub fn holds(&self) -> bool {
        self.lhs >= self.rhs
    }
}

/// Exact check of `r N'(r) >= 2 eps (1 - eps)` with `eps = dist(N(r), N)`.
pub fn pinch_ode_check(e: &Expansion, r: &Rational) -> Result<PinchOde> {
    let freq = e.freq(r)?;
    let (nearest, eps) = nearest_integer(&freq);
    let lhs = e.r_dfreq(r)?;
    let rhs = int(2) * &eps * (Rational::one() - &eps);
    Ok(PinchOde { freq, nearest, eps, lhs, rhs })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PinchDrop {
    /// Half the distance of `N(r)` to the integers.
    pub eps: f64,
    pub drop: f64,
}

impl PinchDrop {
    pub fn holds(&self) -> bool {
        self.drop >= self.eps - 1e-12
    }
}

/// `N(r) - N(r/e) >= eps` whenever `dist(N(r), N) = 2 eps`.
pub fn pinch_drop_check(e: &Expansion, r: f64) -> Result<PinchDrop> {
    let w = e.weights_f64();
    let a = frequency_from_weights(&w, r).ok_or(Error::VanishingHeight)?;
    let b = frequency_from_weights(&w, r / std::f64::consts::E).ok_or(Error::VanishingHeight)?;
    Ok(PinchDrop { eps: nearest_integer_f64(a).1 / 2.0, drop: a - b })
}

#[derive(Clone, Debug, PartialEq)]
pub struct DominantDegree {
    pub degree: u32,
    /// `a_d^2 r^{2d} / h(r)`.
    pub fraction: f64,
    pub drop: f64,
    pub eps: f64,
}

impl DominantDegree {
    pub fn dominant(&self) -> bool {
        self.fraction >= 1.0 - 6.0 * self.eps
    }

    pub fn dropped(&self) -> bool {
        self.drop >= self.eps
    }

    pub fn holds(&self) -> bool {
        self.dominant() || self.dropped()
    }
}

/// Either one degree carries a `1 - 6 eps` share of the height of `u - u(0)`
/// at radius `r`, or the frequency drops by `eps` over one `e`-scale.
pub fn dominant_degree(e: &Expansion, r: f64, eps: f64) -> Result<DominantDegree> {
    let w = e.weights_f64();
    let parts: Vec<f64> = w.iter().enumerate().map(|(k, a)| if k == 0 { 0.0 } else { a * r.powi(2 * k as i32) }).collect();
    let h: f64 = parts.iter().sum();
    if h <= 0.0 {
        return Err(Error::VanishingHeight);
    }
    let (degree, top) = parts
        .iter()
        .enumerate()
        .fold((0usize, 0.0f64), |acc, (k, &p)| if p > acc.1 { (k, p) } else { acc });
    let n1 = frequency_from_weights(&w, r).ok_or(Error::VanishingHeight)?;
    let n0 = frequency_from_weights(&w, r / std::f64::consts::E).ok_or(Error::VanishingHeight)?;
    Ok(DominantDegree { degree: degree as u32, fraction: top / h, drop: n1 - n0, eps })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScaleSample {
    pub t: f64,
    pub freq: f64,
    pub dominance: Option<f64>,
    pub l2_distance_sq: Option<f64>,
    pub dirichlet_distance: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TangentUniqueness {
    pub degree: u32,
    pub eps: f64,
    /// The single limiting polynomial, as `coeff * poly` of the degree-`d` term.
    pub p_d: ExactPoly,
    pub samples: Vec<ScaleSample>,
    pub max_freq_deviation: f64,
    pub min_dominance: f64,
    pub max_l2_distance_sq: f64,
    pub max_dirichlet_distance: f64,
}

impl TangentUniqueness {
    pub fn freq_ok(&self) -> bool {
        self.max_freq_deviation <= 3.0 * self.eps
    }

    pub fn dominance_ok(&self) -> bool {
        self.min_dominance >= 1.0 - 6.0 * self.eps
    }

    pub fn l2_ok(&self) -> bool {
        self.max_l2_distance_sq <= 7.0 * self.eps
    }

    pub fn dirichlet_ok(&self) -> bool {
        self.max_dirichlet_distance <= 7.0 * self.degree as f64 * self.eps
    }

    pub fn holds(&self) -> bool {
        self.freq_ok() && self.dominance_ok() && self.l2_ok() && self.dirichlet_ok()
    }
}

/// Measures the four closeness statements for an expansion pinched between
/// `r2 <= r1 / e^3`. Distances to `P_d` use sphere averages; the Dirichlet
/// distance is the ball integral divided by the sphere area.
pub fn tangent_uniqueness_check(
    e: &Expansion,
    r2: f64,
    r1: f64,
    eps: f64,
    eps0: f64,
    samples: usize,
) -> Result<TangentUniqueness> {
    if eps > eps0 {
        return Err(Error::Precondition(format!("eps {eps} exceeds eps0 {eps0}")));
    }
    let e3 = std::f64::consts::E.powi(3);
    if r2 > r1 / e3 * (1.0 + 1e-12) {
        return Err(Error::Precondition("need r2 <= r1 / e^3".into()));
    }
    let w = e.weights_f64();
    let f = |t: f64| frequency_from_weights(&w, t).ok_or(Error::VanishingHeight);
    let p = f(r1)? - f(r2)?;
    if p > eps {
        return Err(Error::Precondition(format!("pinch {p} exceeds eps {eps}")));
    }
    let (d, _) = nearest_integer_f64(f(r1)?);
    let d = d.max(1) as u32;
    let p_d = e.component(d).ok_or_else(|| Error::Precondition(format!("no degree-{d} term")))?;
    let ad = w.get(d as usize).copied().unwrap_or(0.0).sqrt();
    let m = samples.max(2);
    let (lo, hi) = (r2.ln(), r1.ln());
    let inner_lo = r2 * std::f64::consts::E;
    let inner_hi = r1 / std::f64::consts::E;
    let mut out = Vec::with_capacity(m);
    let (mut mf, mut md, mut ml, mut mg) = (0.0f64, 1.0f64, 0.0f64, 0.0f64);
    for i in 0..m {
        // open interval: stay strictly inside the endpoints
        let t = (lo + (hi - lo) * (i as f64 + 0.5) / m as f64).exp();
        let nt = f(t)?;
        mf = mf.max((nt - d as f64).abs());
        let mut s = ScaleSample { t, freq: nt, dominance: None, l2_distance_sq: None, dirichlet_distance: None };
        if t > inner_lo && t < inner_hi {
            let h: f64 = w.iter().enumerate().skip(1).map(|(k, a)| a * t.powi(2 * k as i32)).sum();
            let b: Vec<f64> = w.iter().enumerate().map(|(k, a)| if k == 0 { 0.0 } else { (a * t.powi(2 * k as i32) / h).sqrt() }).collect();
            let bd = ad * t.powi(d as i32) / h.sqrt();
            let dom = bd * bd;
            let l2: f64 = b.iter().enumerate().filter(|(k, _)| *k != d as usize && *k > 0).map(|(_, x)| x * x).sum::<f64>() + (bd - 1.0).powi(2);
            let dir: f64 = b.iter().enumerate().filter(|(k, _)| *k != d as usize && *k > 0).map(|(k, x)| k as f64 * x * x).sum::<f64>() + d as f64 * (bd - 1.0).powi(2);
            md = md.min(dom);
            ml = ml.max(l2);
            mg = mg.max(dir);
            s.dominance = Some(dom);
            s.l2_distance_sq = Some(l2);
            s.dirichlet_distance = Some(dir);
        }
        out.push(s);
    }
    Ok(TangentUniqueness {
        degree: d,
        eps,
        p_d,
        samples: out,
        max_freq_deviation: mf,
        min_dominance: md,
        max_l2_distance_sq: ml,
        max_dirichlet_distance: mg,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct UniformBound {
    pub base_freq: f64,
    pub max_freq: f64,
    pub argmax: Vec<f64>,
}

impl UniformBound {
    pub fn ratio(&self) -> f64 {
        self.max_freq / self.base_freq
    }
}

/// `sup_{|x| <= r} N(x, k (1 - r))` over a lattice sample, against `N(0, 1)`.
pub fn uniform_bound_check(e: &FloatExpansion, r: f64, k: f64, samples: usize) -> Result<UniformBound> {
    if !(0.0..1.0).contains(&r) || !(0.0..1.0).contains(&k) || k == 0.0 {
        return Err(Error::InvalidArgument("need 0 <= r < 1 and 0 < k < 1".into()));
    }
    let c = e.center().to_vec();
    let base = e.freq_at(&c, 1.0).ok_or(Error::VanishingHeight)?;
    let rad = k * (1.0 - r);
    let mut best = (f64::NEG_INFINITY, c.clone());
    for p in crate::sampling::ball_points(e.n(), samples) {
        let x: Vec<f64> = p.iter().zip(&c).map(|(a, b)| b + r * a).collect();
        if let Some(v) = e.freq_at(&x, rad) {
            if v > best.0 {
                best = (v, x);
            }
        }
    }
    Ok(UniformBound { base_freq: base, max_freq: best.0, argmax: best.1 })
}

/// Relative error of `h(t) exp(2 int_t^r N(s)/s ds) = h(r)` for the
/// height of `u - u(0)`, with the integral done by adaptive Simpson.
pub fn growth_law_residual(e: &Expansion, t: f64, r: f64) -> Result<f64> {
    let w = e.weights_f64();
    let g = |s: f64| frequency_from_weights(&w, s).map(|v| v / s).unwrap_or(0.0);
    let integral = adaptive_simpson(&g, t, r, 1e-12, 40);
    let ht = e.height_normalized_f64(t);
    let hr = e.height_normalized_f64(r);
    if hr <= 0.0 {
        return Err(Error::VanishingHeight);
    }
    Ok((ht * (2.0 * integral).exp() - hr).abs() / hr)
}

pub fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64, depth: u32) -> f64 {
    fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
        (b - a) / 6.0 * (fa + 4.0 * fm + fb)
    }
    #[allow(clippy::too_many_arguments)]
    fn rec(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
        let m = 0.5 * (a + b);
        let lm = 0.5 * (a + m);
        let rm = 0.5 * (m + b);
        let flm = f(lm);
        let frm = f(rm);
        let left = simpson(fa, flm, fm, a, m);
        let right = simpson(fm, frm, fb, m, b);
        if depth == 0 || (left + right - whole).abs() <= 15.0 * tol {
            return left + right + (left + right - whole) / 15.0;
        }
        rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
    }
    let fa = f(a);
    let fb = f(b);
    let fm = f(0.5 * (a + b));
    rec(f, a, b, fa, fm, fb, simpson(fa, fm, fb, a, b), tol, depth)
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProfileRow {
    pub r: f64,
    pub freq: f64,
    pub height: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FrequencyProfile {
    pub center: Vec<f64>,
    pub rows: Vec<ProfileRow>,
}

impl FrequencyProfile {
    pub fn is_monotone(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].freq >= w[0].freq - 1e-12 * w[0].freq.abs().max(1.0))
    }

    /// Largest `N(r_j) - N(r_i)` over index windows of at least `span` radii.
    pub fn pinches(&self, span: usize) -> Vec<(f64, f64, f64)> {
        let mut out = Vec::new();
        for i in 0..self.rows.len() {
            if i + span < self.rows.len() {
                let a = &self.rows[i];
                let b = &self.rows[i + span];
                out.push((a.r, b.r, b.freq - a.freq));
            }
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut w: W, header: &[String]) -> Result<()> {
        for h in header {
            writeln!(w, "# {h}")?;
        }
        writeln!(w, "r,N,h")?;
        for row in &self.rows {
            writeln!(w, "{:.17e},{:.17e},{:.17e}", row.r, row.freq, row.height)?;
        }
        Ok(())
    }
}

/// Frequency and height of `u - u(x)` at each radius.
pub fn profile(e: &FloatExpansion, x: &[f64], radii: &[f64]) -> Result<FrequencyProfile> {
    let w = e.weights_at(x);
    let rows = radii
        .iter()
        .map(|&r| {
            let freq = frequency_from_weights(&w, r).ok_or(Error::VanishingHeight)?;
            let height = w.iter().enumerate().skip(1).map(|(k, a)| a * r.powi(2 * k as i32)).sum();
            Ok(ProfileRow { r, freq, height })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FrequencyProfile { center: x.to_vec(), rows })
}

/// Exact rational approximation of a float, for building expansions from numbers.
pub fn rational_of(x: f64) -> Result<Rational> {
    from_f64(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hhp::re_im_z_pow;
    use crate::poly::rat;

    #[test]
    fn height_of_two_unit_terms() {
        let (re1, im1) = re_im_z_pow(1);
        let (re3, im3) = re_im_z_pow(3);
        // Re + Im of z^k has unit norm.
        let p = &(&re1 + &im1) + &(&re3 + &im3);
        let e = Expansion::at_origin(&p).unwrap();
        assert_eq!(e.height(&int(1)), int(2));
        assert_eq!(e.freq(&int(1)).unwrap(), int(2));
    }

    #[test]
    fn nearest_integer_ties_go_down() {
        assert_eq!(nearest_integer(&rat(5, 2)).0, 2);
        assert_eq!(nearest_integer(&rat(11, 4)).0, 3);
        assert_eq!(nearest_integer_f64(2.5).0, 2);
    }

    #[test]
    fn json_round_trip() {
        let (re2, _) = re_im_z_pow(2);
        let p = &re2 + &ExactPoly::var(2, 0);
        let e = Expansion::from_poly(vec![rat(1, 3), int(0)], &p).unwrap();
        let s = serde_json::to_string(&e.to_json()).unwrap();
        let back = Expansion::from_json(&serde_json::from_str(&s).unwrap()).unwrap();
        assert_eq!(back, e);
    }
}
