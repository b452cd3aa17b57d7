//! Floating-point polynomial evaluation.
//!
//! `TaylorEngine` re-expands a polynomial about arbitrary points and
//! returns the sphere norms of each homogeneous piece, which is all the
//! frequency function needs. It is the fast path used by sampling code;
//! the exact path lives in `frequency::Expansion`.

use std::collections::HashMap;

use crate::poly::{monomials_of_degree, sphere_average_monomial, to_f64};

#[derive(Clone, Debug, PartialEq)]
pub struct FloatPoly {
    n: usize,
    terms: Vec<(Vec<u32>, f64)>,
}

impl FloatPoly {
    pub fn new(n: usize, terms: Vec<(Vec<u32>, f64)>) -> Self {
        FloatPoly { n, terms }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn terms(&self) -> &[(Vec<u32>, f64)] {
        &self.terms
    }

    pub fn degree(&self) -> u32 {
        self.terms.iter().map(|(a, _)| a.iter().sum()).max().unwrap_or(0)
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(a, c)| c * a.iter().zip(x).map(|(&e, v)| v.powi(e as i32)).product::<f64>())
            .sum()
    }

    pub fn partial(&self, i: usize) -> FloatPoly {
        let terms = self
            .terms
            .iter()
            .filter(|(a, _)| a[i] > 0)
            .map(|(a, c)| {
                let mut b = a.clone();
                b[i] -= 1;
                (b, c * a[i] as f64)
            })
            .collect();
        FloatPoly { n: self.n, terms }
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (0..self.n).map(|i| self.partial(i).eval(x)).collect()
    }

    /// Average of `self * other` over the unit sphere.
    pub fn inner(&self, other: &FloatPoly) -> f64 {
        let mut cache: HashMap<Vec<u32>, f64> = HashMap::new();
        let mut acc = 0.0;
        for (a, c) in &self.terms {
            for (b, d) in &other.terms {
                let g: Vec<u32> = a.iter().zip(b).map(|(x, y)| x + y).collect();
                if g.iter().any(|e| e % 2 == 1) {
                    continue;
                }
                let n = self.n;
                let avg = *cache
                    .entry(g.clone())
                    .or_insert_with(|| to_f64(&sphere_average_monomial(n, &g)));
                acc += c * d * avg;
            }
        }
        acc
    }
}

/// Re-expansion of a fixed polynomial about moving base points.
#[derive(Clone, Debug)]
pub struct TaylorEngine {
    n: usize,
    max_deg: u32,
    monos: Vec<Vec<u32>>,
    deg_start: Vec<usize>,
    coeffs: Vec<f64>,
    /// For each source monomial alpha: (beta, binomial(alpha, beta), alpha - beta).
    plan: Vec<Vec<(usize, f64, usize)>>,
    /// Per degree: (i, j, weight) with weight already doubled for i != j.
    avg: Vec<Vec<(usize, usize, f64)>>,
    /// Lowers a monomial index by one in variable v: (v, index) -> index.
    pred: Vec<Option<(usize, usize)>>,
    var_index: Vec<usize>,
}

impl TaylorEngine {
    pub fn new(poly: &FloatPoly) -> Self {
        Self::with_degree(poly, poly.degree())
    }

    pub fn with_degree(poly: &FloatPoly, max_deg: u32) -> Self {
        let n = poly.n();
        let mut monos = Vec::new();
        let mut deg_start = Vec::new();
        for d in 0..=max_deg {
            deg_start.push(monos.len());
            monos.extend(monomials_of_degree(n, d).into_iter().map(|m| m.exps().to_vec()));
        }
        deg_start.push(monos.len());
        let index: HashMap<Vec<u32>, usize> =
            monos.iter().enumerate().map(|(i, m)| (m.clone(), i)).collect();
        let mut coeffs = vec![0.0; monos.len()];
        for (a, c) in poly.terms() {
            if let Some(&i) = index.get(a) {
                coeffs[i] += c;
            }
        }
        let mut plan = vec![Vec::new(); monos.len()];
        for (ai, alpha) in monos.iter().enumerate() {
            if coeffs[ai] == 0.0 {
                continue;
            }
            let mut betas: Vec<Vec<u32>> = vec![vec![]];
            for &e in alpha {
                betas = betas
                    .into_iter()
                    .flat_map(|b| (0..=e).map(move |k| {
                        let mut b2 = b.clone();
                        b2.push(k);
                        b2
                    }))
                    .collect();
            }
            for beta in betas {
                let gamma: Vec<u32> = alpha.iter().zip(&beta).map(|(a, b)| a - b).collect();
                let binom: f64 = alpha
                    .iter()
                    .zip(&beta)
                    .map(|(&a, &b)| binomial_f64(a, b))
                    .product();
                plan[ai].push((index[&beta], binom, index[&gamma]));
            }
        }
        let mut avg = Vec::new();
        for d in 0..=max_deg as usize {
            let lo = deg_start[d];
            let hi = deg_start[d + 1];
            let mut list = Vec::new();
            for i in lo..hi {
                for j in i..hi {
                    let g: Vec<u32> = monos[i].iter().zip(&monos[j]).map(|(a, b)| a + b).collect();
                    if g.iter().any(|e| e % 2 == 1) {
                        continue;
                    }
                    let w = to_f64(&sphere_average_monomial(n, &g));
                    list.push((i, j, if i == j { w } else { 2.0 * w }));
                }
            }
            avg.push(list);
        }
        let mut pred = vec![None; monos.len()];
        for (i, m) in monos.iter().enumerate() {
            if let Some(v) = m.iter().position(|&e| e > 0) {
                let mut low = m.clone();
                low[v] -= 1;
                pred[i] = Some((v, index[&low]));
            }
        }
        let var_index = (0..n)
            .map(|i| {
                let mut e = vec![0; n];
                e[i] = 1;
                index.get(&e).copied().unwrap_or(0)
            })
            .collect();
        TaylorEngine { n, max_deg, monos, deg_start, coeffs, plan, avg, pred, var_index }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn max_degree(&self) -> u32 {
        self.max_deg
    }

    pub fn monomials(&self) -> &[Vec<u32>] {
        &self.monos
    }

    pub fn degree_range(&self, d: u32) -> std::ops::Range<usize> {
        self.deg_start[d as usize]..self.deg_start[d as usize + 1]
    }

    /// Coefficients of `y -> u(p + y)` in the engine's monomial order.
    pub fn taylor_at(&self, p: &[f64]) -> Vec<f64> {
        let mut pv = vec![1.0; self.monos.len()];
        for i in 1..self.monos.len() {
            let (v, lo) = self.pred[i].expect("non-constant monomial");
            pv[i] = pv[lo] * p[v];
        }
        let mut out = vec![0.0; self.monos.len()];
        for (ai, entries) in self.plan.iter().enumerate() {
            let c = self.coeffs[ai];
            if c == 0.0 {
                continue;
            }
            for &(b, binom, g) in entries {
                out[b] += c * binom * pv[g];
            }
        }
        out
    }

    /// Sphere norms `<Q_k, Q_k>` of the homogeneous pieces of a coefficient vector.
    pub fn graded_weights(&self, c: &[f64]) -> Vec<f64> {
        self.avg
            .iter()
            .map(|list| list.iter().map(|&(i, j, w)| w * c[i] * c[j]).sum::<f64>().max(0.0))
            .collect()
    }

    pub fn value_at(&self, c: &[f64]) -> f64 {
        c[0]
    }

    pub fn gradient_at(&self, c: &[f64]) -> Vec<f64> {
        if self.max_deg == 0 {
            return vec![0.0; self.n];
        }
        self.var_index.iter().map(|&i| c[i]).collect()
    }

    pub fn hessian_at(&self, c: &[f64]) -> Vec<Vec<f64>> {
        let mut h = vec![vec![0.0; self.n]; self.n];
        if self.max_deg < 2 {
            return h;
        }
        for idx in self.degree_range(2) {
            let m = &self.monos[idx];
            let nz: Vec<usize> = (0..self.n).filter(|&i| m[i] > 0).collect();
            if nz.len() == 1 {
                h[nz[0]][nz[0]] = 2.0 * c[idx];
            } else {
                h[nz[0]][nz[1]] = c[idx];
                h[nz[1]][nz[0]] = c[idx];
            }
        }
        h
    }

    /// Upper bound of `sup_{|z| <= r} |grad u(p + z) - grad u(p)|`.
    pub fn gradient_variation_bound(&self, c: &[f64], r: f64) -> f64 {
        let mut total = 0.0;
        for d in 2..=self.max_deg {
            let mut per_var = vec![0.0; self.n];
            for idx in self.degree_range(d) {
                for (v, s) in per_var.iter_mut().enumerate() {
                    *s += c[idx].abs() * self.monos[idx][v] as f64;
                }
            }
            let norm = per_var.iter().map(|s| s * s).sum::<f64>().sqrt();
            total += norm * r.powi(d as i32 - 1);
        }
        total
    }

    /// Upper bound of `sup_{|z| <= r} |u(p + z) - u(p)|`.
    pub fn value_variation_bound(&self, c: &[f64], r: f64) -> f64 {
        let mut total = 0.0;
        for d in 1..=self.max_deg {
            let s: f64 = self.degree_range(d).map(|i| c[i].abs()).sum();
            total += s * r.powi(d as i32);
        }
        total
    }
}

fn binomial_f64(n: u32, k: u32) -> f64 {
    let k = k.min(n - k);
    (0..k).fold(1.0, |acc, j| acc * (n - j) as f64 / (j + 1) as f64)
}

/// Frequency `sum k w_k r^{2k} / sum w_k r^{2k}` over `k >= 1`.
pub fn frequency_from_weights(w: &[f64], r: f64) -> Option<f64> {
    let r2 = r * r;
    let mut num = 0.0;
    let mut den = 0.0;
    let mut pw = 1.0;
    for (k, wk) in w.iter().enumerate() {
        if k > 0 {
            num += k as f64 * wk * pw;
            den += wk * pw;
        }
        pw *= r2;
    }
    if den > 0.0 && den.is_finite() {
        Some(num / den)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taylor_matches_direct_evaluation() {
        let p = FloatPoly::new(
            2,
            vec![(vec![3, 0], 1.0), (vec![1, 2], -3.0), (vec![0, 1], 0.5), (vec![0, 0], 2.0)],
        );
        let e = TaylorEngine::new(&p);
        let base = [0.3, -0.7];
        let c = e.taylor_at(&base);
        let y = [0.11, 0.05];
        let direct = p.eval(&[base[0] + y[0], base[1] + y[1]]);
        let via: f64 = e
            .monomials()
            .iter()
            .zip(&c)
            .map(|(m, ci)| ci * y[0].powi(m[0] as i32) * y[1].powi(m[1] as i32))
            .sum();
        assert!((direct - via).abs() < 1e-13);
        let g = e.gradient_at(&c);
        let g2 = p.gradient(&base);
        assert!((g[0] - g2[0]).abs() < 1e-13 && (g[1] - g2[1]).abs() < 1e-13);
    }
}
