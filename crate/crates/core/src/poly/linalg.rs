//! Dense linear algebra over the rationals: row reduction, rank, kernels.

use num_traits::{One, Zero};

use super::Rational;

/// Reduced row echelon form in place; returns pivot columns.
pub fn rref(m: &mut [Vec<Rational>]) -> Vec<usize> {
    let rows = m.len();
    if rows == 0 {
        return Vec::new();
    }
    let cols = m[0].len();
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..cols {
        if r == rows {
            break;
        }
        let Some(p) = (r..rows).find(|&i| !m[i][c].is_zero()) else {
            continue;
        };
        m.swap(r, p);
        let inv = Rational::one() / &m[r][c];
        for v in m[r].iter_mut() {
            *v *= &inv;
        }
        for i in 0..rows {
            if i != r && !m[i][c].is_zero() {
                let f = m[i][c].clone();
                for j in c..cols {
                    let t = &m[r][j] * &f;
                    m[i][j] -= t;
                }
            }
        }
        pivots.push(c);
        r += 1;
    }
    pivots
}

pub fn rank(m: &[Vec<Rational>]) -> usize {
    let mut a = m.to_vec();
    rref(&mut a).len()
}

/// Basis of `{x : m x = 0}`, one vector per free column in increasing order.
/// Each vector has a 1 in its free column and zeros in the other free columns.
pub fn kernel(m: &[Vec<Rational>], cols: usize) -> Vec<Vec<Rational>> {
    let mut a = m.to_vec();
    let pivots = rref(&mut a);
    let mut out = Vec::new();
    for f in 0..cols {
        if pivots.contains(&f) {
            continue;
        }
        let mut v = vec![Rational::zero(); cols];
        v[f] = Rational::one();
        for (row, &pc) in pivots.iter().enumerate() {
            v[pc] = -a[row][f].clone();
        }
        out.push(v);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::poly::int;

    #[test]
    fn kernel_of_small_matrix() {
        let m = vec![vec![int(1), int(2), int(3)], vec![int(2), int(4), int(6)]];
        let k = kernel(&m, 3);
        assert_eq!(k.len(), 2);
        for v in &k {
            for row in &m {
                let s: Rational = row.iter().zip(v).map(|(a, b)| a * b).sum();
                assert!(s.is_zero());
            }
        }
        assert_eq!(rank(&m), 1);
    }
}
