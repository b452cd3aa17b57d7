//! Seeded random harmonic expansions.
//!
//! Degree-`k` coefficients are uniform on `[-1, 1]` times `rho^k`; each
//! degree gets a random direction in the harmonic basis, scaled to unit
//! norm up to a rational rounding of about `2^-30`.

use num_bigint::BigInt;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::frequency::{Expansion, Term};
use crate::hhp::basis;
use crate::poly::{to_f64, ExactPoly, Rational};

pub const DEFAULT_RHO: f64 = 0.7;

/// Rational with denominator `2^30` nearest to `x`.
pub fn dyadic(x: f64) -> Rational {
    let scale = (1u64 << 30) as f64;
    Rational::new(BigInt::from((x * scale).round() as i64), BigInt::from(1u64 << 30))
}

/// Approximately unit-norm random element of `P_k`.
pub fn random_unit_hhp(n: usize, k: u32, rng: &mut ChaCha8Rng) -> ExactPoly {
    let b = basis(n, k);
    let mut p = ExactPoly::zero(n);
    for e in b.elements() {
        let c: f64 = rng.gen_range(-1.0..=1.0);
        p = &p + &e.poly.scale(&dyadic(c / e.norm()));
    }
    if p.is_zero() {
        p = b.elements()[0].poly.clone();
    }
    let norm = to_f64(&p.norm_sq()).sqrt();
    p.scale(&dyadic(1.0 / norm))
}

pub fn random_expansion(n: usize, max_degree: u32, rho: f64, rng: &mut ChaCha8Rng) -> Expansion {
    let mut terms = Vec::new();
    for k in 0..=max_degree {
        let a: f64 = rng.gen_range(-1.0..=1.0) * rho.powi(k as i32);
        let poly = random_unit_hhp(n, k, rng);
        terms.push(Term { degree: k, coeff: dyadic(a), poly });
    }
    Expansion::new(n, vec![Rational::from_integer(0.into()); n], terms, Rational::from_integer(1.into()))
        .expect("random terms are homogeneous harmonic")
}

/// `count` expansions with dimensions drawn from `dims` and top degree from `1..=max_degree`.
pub fn random_corpus(seed: u64, count: usize, dims: &[usize], max_degree: u32, rho: f64) -> Vec<Expansion> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let n = dims[rng.gen_range(0..dims.len())];
            let d = rng.gen_range(1..=max_degree);
            random_expansion(n, d, rho, &mut rng)
        })
        .collect()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_reproducible() {
        let a = random_corpus(7, 3, &[2, 3], 4, DEFAULT_RHO);
        let b = random_corpus(7, 3, &[2, 3], 4, DEFAULT_RHO);
        assert_eq!(a, b);
    }

    #[test]
    fn unit_directions_are_close_to_unit() {
        let mut r = rng(1);
        let p = random_unit_hhp(3, 3, &mut r);
        assert!((to_f64(&p.norm_sq()) - 1.0).abs() < 1e-6);
    }
}
