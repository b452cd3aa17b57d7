use std::str::FromStr;

use num_bigint::BigInt;
use serde::{Deserialize, Serialize};

use super::{ExactPoly, Rational};
use crate::error::{Error, Result};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct TermJson {
    pub alpha: Vec<u32>,
    pub num: String,
    pub den: String,
}

/// Wire format of a polynomial. Terms run from the leading monomial down.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct PolyJson {
    pub n: usize,
    pub terms: Vec<TermJson>,
}

pub(crate) fn parse_rational(num: &str, den: &str) -> Result<Rational> {
    let a = BigInt::from_str(num.trim()).map_err(|e| Error::Parse(format!("numerator {num:?}: {e}")))?;
    let b = BigInt::from_str(den.trim()).map_err(|e| Error::Parse(format!("denominator {den:?}: {e}")))?;
    if b == BigInt::from(0) {
        return Err(Error::Parse("zero denominator".into()));
    }
    Ok(Rational::new(a, b))
}

/// Parses `"p/q"` or `"p"`.
pub fn parse_rational_str(s: &str) -> Result<Rational> {
    match s.split_once('/') {
        Some((a, b)) => parse_rational(a, b),
        None => parse_rational(s, "1"),
    }
}

pub fn rational_to_string(q: &Rational) -> String {
    if q.denom() == &BigInt::from(1) {
        q.numer().to_string()
    } else {
        format!("{}/{}", q.numer(), q.denom())
    }
}

impl ExactPoly {
    pub fn to_json(&self) -> PolyJson {
        PolyJson {
            n: self.n,
            terms: self
                .terms
                .iter()
                .rev()
                .map(|(m, c)| TermJson {
                    alpha: m.0.clone(),
                    num: c.numer().to_string(),
                    den: c.denom().to_string(),
                })
                .collect(),
        }
    }

    pub fn from_json(j: &PolyJson) -> Result<ExactPoly> {
        let mut terms = Vec::with_capacity(j.terms.len());
        for t in &j.terms {
            terms.push((t.alpha.clone(), parse_rational(&t.num, &t.den)?));
        }
        ExactPoly::from_terms(j.n, terms)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(&self.to_json()).expect("polynomial serializes")
    }

    pub fn from_json_str(s: &str) -> Result<ExactPoly> {
        let j: PolyJson = serde_json::from_str(s)?;
        Self::from_json(&j)
    }
}
