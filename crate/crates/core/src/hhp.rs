//! Homogeneous harmonic polynomials: bases, the gradient identity, the
//! Kelvin-type map, invariant splittings and almost-invariant directions.
//!
//! Basis elements are stored as integer-coefficient polynomials together
//! with their exact squared sphere norm, so the unit element is
//! `poly / sqrt(norm_sq)` and orthonormality is checked exactly.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, SymmetricEigen};
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::config::HhpConfig;
use crate::error::{Error, Result};
use crate::numeric::FloatPoly;
use crate::poly::json::rational_to_string;
use crate::poly::{int, linalg, monomials_of_degree, to_f64, ExactPoly, Monomial, PolyJson, Rational};
use crate::sampling::sphere_points;

#[derive(Clone, Debug, PartialEq)]
pub struct HhpElement {
    pub poly: ExactPoly,
    pub norm_sq: Rational,
}

impl HhpElement {
    pub fn norm(&self) -> f64 {
        to_f64(&self.norm_sq).sqrt()
    }

    /// The unit-norm element in floating point.
    pub fn unit_float(&self) -> FloatPoly {
        let s = 1.0 / self.norm();
        let f = self.poly.to_float();
        FloatPoly::new(f.n(), f.terms().iter().map(|(a, c)| (a.clone(), c * s)).collect())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HhpBasis {
    n: usize,
    d: u32,
    elements: Vec<HhpElement>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct BasisManifest {
    pub n: usize,
    pub d: u32,
    pub count: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct BasisElementJson {
    pub poly: PolyJson,
    pub norm_sq: String,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq, Eq)]
pub struct BasisExport {
    pub manifest: BasisManifest,
    pub elements: Vec<BasisElementJson>,
}

impl HhpBasis {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn d(&self) -> u32 {
        self.d
    }

    pub fn len(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn elements(&self) -> &[HhpElement] {
        &self.elements
    }

    /// Exact check: pairwise orthogonal and each stored norm is the true norm.
    pub fn is_orthonormal(&self) -> bool {
        for (i, a) in self.elements.iter().enumerate() {
            if a.poly.norm_sq() != a.norm_sq {
                return false;
            }
            for b in &self.elements[i + 1..] {
                if !a.poly.inner(&b.poly).is_zero() {
                    return false;
                }
            }
        }
        true
    }

    pub fn export(&self) -> BasisExport {
        BasisExport {
            manifest: BasisManifest { n: self.n, d: self.d, count: self.elements.len() },
            elements: self
                .elements
                .iter()
                .map(|e| BasisElementJson { poly: e.poly.to_json(), norm_sq: rational_to_string(&e.norm_sq) })
                .collect(),
        }
    }
}

fn binom(n: i64, k: i64) -> i64 {
    if k < 0 || n < 0 || k > n {
        return 0;
    }
    let k = k.min(n - k);
    (0..k).fold(1i64, |acc, j| acc * (n - j) / (j + 1))
}

/// `dim P_d` in `n` variables.
pub fn dimension(n: usize, d: u32) -> usize {
    let (n, d) = (n as i64, d as i64);
    match d {
        0 => 1,
        1 => n as usize,
        _ => (binom(n + d - 1, n - 1) - binom(n + d - 3, n - 1)) as usize,
    }
}

type Cache = Mutex<HashMap<(usize, u32), Arc<HhpBasis>>>;

fn cache() -> &'static Cache {
    static CACHE: OnceLock<Cache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Orthogonal basis of `P_d` in `n` variables. Results are memoized.
pub fn basis(n: usize, d: u32) -> Arc<HhpBasis> {
    assert!(n >= 1, "need at least one variable");
    if let Some(b) = cache().lock().expect("basis cache").get(&(n, d)) {
        return b.clone();
    }
    let b = Arc::new(compute_basis(n, d));
    cache().lock().expect("basis cache").entry((n, d)).or_insert(b).clone()
}

fn compute_basis(n: usize, d: u32) -> HhpBasis {
    let monos = monomials_of_degree(n, d);
    let kernel: Vec<Vec<Rational>> = if d < 2 {
        (0..monos.len())
            .map(|i| (0..monos.len()).map(|j| if i == j { Rational::one() } else { Rational::zero() }).collect())
            .collect()
    } else {
        let lows = monomials_of_degree(n, d - 2);
        let row_of: HashMap<&Monomial, usize> = lows.iter().enumerate().map(|(i, m)| (m, i)).collect();
        let mut mat = vec![vec![Rational::zero(); monos.len()]; lows.len()];
        for (c, m) in monos.iter().enumerate() {
            for i in 0..n {
                let e = m.exps()[i];
                if e >= 2 {
                    let mut low = m.exps().to_vec();
                    low[i] -= 2;
                    mat[row_of[&Monomial::new(low)]][c] += int((e * (e - 1)) as i64);
                }
            }
        }
        linalg::kernel(&mat, monos.len())
    };
    let to_poly = |v: &[Rational]| -> ExactPoly {
        ExactPoly::from_terms(n, v.iter().zip(&monos).map(|(c, m)| (m.exps().to_vec(), c.clone())))
            .expect("arity")
    };
    // Leading monomial of each kernel vector is its free column; process from the top down.
    let mut vs: Vec<ExactPoly> = kernel.iter().map(|v| to_poly(v)).collect();
    vs.reverse();
    let m = vs.len();
    let mut gram = vec![vec![Rational::zero(); m]; m];
    for i in 0..m {
        for j in 0..=i {
            let g = vs[i].inner(&vs[j]);
            gram[i][j] = g.clone();
            gram[j][i] = g;
        }
    }
    let mut coef: Vec<Vec<Rational>> = Vec::with_capacity(m);
    let mut dsq: Vec<Rational> = Vec::with_capacity(m);
    for i in 0..m {
        let mut c = vec![Rational::zero(); m];
        c[i] = Rational::one();
        for j in 0..i {
            let vij: Rational = (0..=j).map(|k| &coef[j][k] * &gram[i][k]).sum();
            if vij.is_zero() {
                continue;
            }
            let f = vij / &dsq[j];
            for k in 0..=j {
                let t = &f * &coef[j][k];
                c[k] -= t;
            }
        }
        let di: Rational = (0..=i).map(|k| &c[k] * &gram[i][k]).sum();
        coef.push(c);
        dsq.push(di);
    }
    let elements = coef
        .iter()
        .map(|c| {
            let mut p = ExactPoly::zero(n);
            for (k, ck) in c.iter().enumerate() {
                if !ck.is_zero() {
                    p = &p + &vs[k].scale(ck);
                }
            }
            let (p, _) = p.primitive();
            let norm_sq = p.norm_sq();
            HhpElement { poly: p, norm_sq }
        })
        .collect();
    HhpBasis { n, d, elements }
}

/// The planar basis `{2 Im z^d, 2 Re z^d}` (just `{1}` for `d = 0`).
/// Each element has squared norm 2 under the averaged inner product.
pub fn basis_2d(d: u32) -> HhpBasis {
    if d == 0 {
        return HhpBasis { n: 2, d, elements: vec![HhpElement { poly: ExactPoly::constant(2, int(1)), norm_sq: int(1) }] };
    }
    let (re, im) = re_im_z_pow(d);
    let two = int(2);
    let elements = vec![
        HhpElement { poly: im.scale(&two), norm_sq: int(2) },
        HhpElement { poly: re.scale(&two), norm_sq: int(2) },
    ];
    HhpBasis { n: 2, d, elements }
}

/// `(Re z^d, Im z^d)` with `z = x1 + i x2`.
pub fn re_im_z_pow(d: u32) -> (ExactPoly, ExactPoly) {
    let mut re = Vec::new();
    let mut im = Vec::new();
    for k in 0..=d {
        // binom(d,k) x^{d-k} (i y)^k
        let c = int(binom(d as i64, k as i64));
        let alpha = vec![d - k, k];
        match k % 4 {
            0 => re.push((alpha, c)),
            1 => im.push((alpha, c)),
            2 => re.push((alpha, -c)),
            _ => im.push((alpha, -c)),
        }
    }
    (ExactPoly::from_terms(2, re).expect("arity"), ExactPoly::from_terms(2, im).expect("arity"))
}

fn require_hhp(p: &ExactPoly) -> Result<u32> {
    if p.is_zero() {
        return Err(Error::ZeroPolynomial);
    }
    let d = p.degree().unwrap_or(0);
    if !p.is_homogeneous(d) {
        return Err(Error::NotHomogeneous(d));
    }
    if !p.is_harmonic() {
        return Err(Error::NotHarmonic);
    }
    Ok(d)
}

/// `sum_i <d_i p, d_i q>`.
pub fn gradient_inner(p: &ExactPoly, q: &ExactPoly) -> Rational {
    (0..p.n()).map(|i| p.partial(i).inner(&q.partial(i))).sum()
}

/// `sum_i |d_i P|^2`, checked against `d (2d + n - 2) |P|^2`.
pub fn gradient_norm_sq(p: &ExactPoly) -> Result<Rational> {
    let d = require_hhp(p)?;
    let lhs = gradient_inner(p, p);
    let rhs = p.norm_sq() * int((d * (2 * d + p.n() as u32 - 2)) as i64);
    if lhs != rhs {
        return Err(Error::IdentityViolated(format!("gradient norm {lhs} != {rhs}")));
    }
    Ok(lhs)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SupNormCheck {
    pub sup: f64,
    pub bound: f64,
    pub dimension: usize,
}

impl SupNormCheck {
    pub fn holds(&self) -> bool {
        self.sup <= self.bound * (1.0 + 1e-12)
    }
}

/// Sampled sphere supremum of `|P|` against `sqrt(dim P_d) * |P|`.
pub fn sup_norm_bound_check(p: &ExactPoly, samples: usize) -> Result<SupNormCheck> {
    let d = require_hhp(p)?;
    let f = p.to_float();
    let sup = sphere_points(p.n(), samples).iter().map(|x| f.eval(x).abs()).fold(0.0, f64::max);
    let dimension = dimension(p.n(), d);
    let bound = (dimension as f64).sqrt() * to_f64(&p.norm_sq()).sqrt();
    Ok(SupNormCheck { sup, bound, dimension })
}

/// `K[p] = x_a p - |x|^2 d_a p / (2d + n - 4)` where `d = deg p + 1`.
pub fn kelvin(p: &ExactPoly, axis: usize) -> Result<ExactPoly> {
    if axis >= p.n() {
        return Err(Error::InvalidArgument(format!("axis {axis} out of range")));
    }
    if p.is_zero() {
        return Ok(p.clone());
    }
    let dm1 = require_hhp(p)?;
    let base = &ExactPoly::var(p.n(), axis) * p;
    let denom = 2 * dm1 as i64 + p.n() as i64 - 2;
    let dp = p.partial(axis);
    if dp.is_zero() {
        return Ok(base);
    }
    let corr = dp.times_radius_sq().scale(&(Rational::one() / int(denom)));
    Ok(&base - &corr)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct KelvinRank {
    pub image_rank: usize,
    pub dim_lower: usize,
    pub dim_invariant: usize,
    pub dim_total: usize,
}

impl KelvinRank {
    pub fn holds(&self) -> bool {
        self.image_rank == self.dim_lower && self.dim_invariant + self.dim_lower == self.dim_total
    }
}

/// Rank of the Kelvin image of `P_{d-1}` and the dimension count
/// `dim P_d = dim P_d(no x_a) + dim P_{d-1}`.
pub fn kelvin_rank_check(n: usize, d: u32, axis: usize) -> Result<KelvinRank> {
    if d == 0 {
        return Err(Error::InvalidArgument("degree must be positive".into()));
    }
    let monos = monomials_of_degree(n, d);
    let rows: Vec<Vec<Rational>> = basis(n, d - 1)
        .elements()
        .iter()
        .map(|e| kelvin(&e.poly, axis).map(|k| monos.iter().map(|m| k.coeff(m.exps())).collect()))
        .collect::<Result<_>>()?;
    Ok(KelvinRank {
        image_rank: linalg::rank(&rows),
        dim_lower: dimension(n, d - 1),
        dim_invariant: if n > 1 { dimension(n - 1, d) } else { usize::from(d == 0) },
        dim_total: dimension(n, d),
    })
}

/// `P = invariant + complement` with `invariant` independent of the given axes
/// and `complement` orthogonal to every such polynomial. The normalized pieces
/// are `invariant / sqrt(1 - delta_sq)` and `complement / sqrt(delta_sq)` in units of `|P|`.
#[derive(Clone, Debug, PartialEq)]
pub struct InvariantSplit {
    pub invariant: ExactPoly,
    pub complement: ExactPoly,
    pub delta_sq: Rational,
}

impl InvariantSplit {
    pub fn delta(&self) -> f64 {
        to_f64(&self.delta_sq).sqrt()
    }
}

/// Orthogonal basis of the homogeneous harmonic polynomials of degree `d`
/// in `n` variables that do not depend on `axes`.
pub fn invariant_basis(n: usize, d: u32, axes: &[usize]) -> Result<Vec<ExactPoly>> {
    if axes.iter().any(|&a| a >= n) {
        return Err(Error::InvalidArgument("axis out of range".into()));
    }
    let rest: Vec<usize> = (0..n).filter(|i| !axes.contains(i)).collect();
    if rest.is_empty() {
        return Ok(if d == 0 { vec![ExactPoly::constant(n, int(1))] } else { vec![] });
    }
    basis(rest.len(), d)
        .elements()
        .iter()
        .map(|e| e.poly.embed(n, &rest))
        .collect()
}

pub fn invariant_decompose(p: &ExactPoly, axes: &[usize]) -> Result<InvariantSplit> {
    let d = require_hhp(p)?;
    let inv = invariant_basis(p.n(), d, axes)?;
    let mut invariant = ExactPoly::zero(p.n());
    for e in &inv {
        // Restriction scales every norm of a fixed degree by the same factor,
        // so the embedded basis stays orthogonal.
        let c = p.inner(e) / e.norm_sq();
        invariant = &invariant + &e.scale(&c);
    }
    let complement = p - &invariant;
    let delta_sq = complement.norm_sq() / p.norm_sq();
    Ok(InvariantSplit { invariant, complement, delta_sq })
}

#[derive(Clone, Debug, PartialEq)]
pub struct PerpCheck {
    pub norm_sq: Rational,
    pub derivative_norm_sq: Rational,
}

impl PerpCheck {
    pub fn holds(&self) -> bool {
        self.norm_sq <= self.derivative_norm_sq
    }
}

/// `|h| <= |d_a h|` for `h` orthogonal to the polynomials independent of `x_a`.
pub fn perp_derivative_bound_check(h: &ExactPoly, axis: usize) -> Result<PerpCheck> {
    let split = invariant_decompose(h, &[axis])?;
    if !split.invariant.is_zero() {
        return Err(Error::Precondition("input has a component independent of the axis".into()));
    }
    Ok(PerpCheck { norm_sq: h.norm_sq(), derivative_norm_sq: h.partial(axis).norm_sq() })
}

/// Both sides of `(2d + n - 2) <p, x_a d_a p> = |d_a p|^2`.
pub fn euler_pairing(p: &ExactPoly, axis: usize) -> Result<(Rational, Rational)> {
    let d = require_hhp(p)?;
    let dp = p.partial(axis);
    let xdp = &ExactPoly::var(p.n(), axis) * &dp;
    let lhs = p.inner(&xdp) * int(2 * d as i64 + p.n() as i64 - 2);
    Ok((lhs, dp.norm_sq()))
}

/// `|P|^2_{S^{n-2}} / |P|^2_{S^{n-1}}` for `P` of degree `d` independent of one variable.
pub fn restriction_norm_ratio(n: usize, d: u32) -> Rational {
    let mut acc = Rational::one();
    for k in 1..=d as i64 {
        acc *= Rational::new((n as i64 + 2 * k - 2).into(), (n as i64 + 2 * k - 3).into());
    }
    acc
}

pub fn restriction_norm_bound(n: usize, d: u32) -> f64 {
    let e2 = std::f64::consts::E.powi(2);
    e2 * (1.0 + (2.0 * d as f64 - 2.0) / (n as f64 - 1.0)).sqrt()
}

/// Exact directions `v` with `d_v P == 0`.
pub fn invariant_directions(p: &ExactPoly) -> Result<Vec<Vec<Rational>>> {
    let d = require_hhp(p)?;
    if d == 0 {
        return Ok((0..p.n())
            .map(|i| (0..p.n()).map(|j| if i == j { int(1) } else { int(0) }).collect())
            .collect());
    }
    let monos = monomials_of_degree(p.n(), d - 1);
    let parts: Vec<ExactPoly> = p.gradient();
    let mat: Vec<Vec<Rational>> = monos
        .iter()
        .map(|m| parts.iter().map(|q| q.coeff(m.exps())).collect())
        .collect();
    Ok(linalg::kernel(&mat, p.n()))
}

/// Normalized Gram matrix `<d_i P, d_j P> / <P, P>`.
pub fn derivative_gram(p: &ExactPoly) -> DMatrix<f64> {
    let n = p.n();
    let parts = p.gradient();
    let nsq = p.norm_sq();
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = to_f64(&(parts[i].inner(&parts[j]) / &nsq));
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
    }
    m
}

/// Eigenvectors of a symmetric matrix whose eigenvalues are at most `threshold`,
/// sorted by eigenvalue.
pub fn small_eigenspace(m: &DMatrix<f64>, threshold: f64) -> (Vec<f64>, Vec<Vec<f64>>) {
    let eig = SymmetricEigen::new(m.clone());
    let mut order: Vec<usize> = (0..m.nrows()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vecs = order
        .iter()
        .filter(|&&i| eig.eigenvalues[i] <= threshold)
        .map(|&i| eig.eigenvectors.column(i).iter().copied().collect())
        .collect();
    (values, vecs)
}

/// Distance from a unit vector to the span of orthonormal `basis`.
pub fn distance_to_span(v: &[f64], basis: &[Vec<f64>]) -> f64 {
    let proj: f64 = basis
        .iter()
        .map(|b| b.iter().zip(v).map(|(x, y)| x * y).sum::<f64>().powi(2))
        .sum();
    let vv: f64 = v.iter().map(|x| x * x).sum();
    (vv - proj).max(0.0).sqrt()
}

#[derive(Clone, Debug, PartialEq)]
pub struct AlmostInvariant {
    pub eigenvalues: Vec<f64>,
    pub threshold: f64,
    /// Orthonormal basis of the recovered subspace `V`.
    pub basis: Vec<Vec<f64>>,
    pub sampled: usize,
    /// Sampled directions that are almost invariant for either input.
    pub almost_invariant: usize,
    pub max_distance: f64,
    pub tau: f64,
}

impl AlmostInvariant {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    pub fn within_tau(&self) -> bool {
        self.max_distance <= self.tau
    }
}

/// Recovers the almost-invariant subspace of `p` and checks that the
/// almost-invariant directions of `p` and `p_prime` lie near it.
pub fn almost_invariant_subspace(
    p: &ExactPoly,
    p_prime: Option<&ExactPoly>,
    eps: f64,
    cfg: &HhpConfig,
) -> Result<AlmostInvariant> {
    let d = require_hhp(p)?;
    if d < 2 {
        return Err(Error::Precondition("almost-invariant subspace needs degree at least 2".into()));
    }
    let n = p.n();
    let scale = (d as f64) * (2.0 * d as f64 + n as f64 - 2.0);
    let m = derivative_gram(p);
    let threshold = eps * scale;
    let (eigenvalues, basis) = small_eigenspace(&m, threshold);
    if eps < cfg.eps0 && basis.len() + 2 > n {
        return Err(Error::IdentityViolated(format!(
            "{} almost-invariant directions for a degree-{d} polynomial in {n} variables",
            basis.len()
        )));
    }
    let mut grams = vec![m];
    if let Some(q) = p_prime {
        if q.n() != n {
            return Err(Error::DimensionMismatch { expected: n, got: q.n() });
        }
        require_hhp(q)?;
        grams.push(derivative_gram(q));
    }
    let dirs = sphere_points(n, cfg.sphere_samples_per_dim * n);
    let mut count = 0;
    let mut max_distance: f64 = 0.0;
    for v in &dirs {
        let vv = nalgebra::DVector::from_column_slice(v);
        let hit = grams.iter().any(|g| {
            let q = (vv.transpose() * g * &vv)[(0, 0)];
            q <= eps * g.trace()
        });
        if hit {
            count += 1;
            max_distance = max_distance.max(distance_to_span(v, &basis));
        }
    }
    Ok(AlmostInvariant {
        eigenvalues,
        threshold,
        basis,
        sampled: dirs.len(),
        almost_invariant: count,
        max_distance,
        tau: cfg.tau,
    })
}

/// Largest `eps` for which directions `eps`-almost invariant for both
/// `P` and any `P'` with `|P - P'|^2 <= eps` are guaranteed within `tau` of `V`.
pub fn containment_eps(p: &ExactPoly, tau: f64) -> Result<f64> {
    let d = require_hhp(p)?;
    let m = derivative_gram(p);
    let (vals, vecs) = small_eigenspace(&m, 1e-12 * m.trace().max(1.0));
    let gap = vals.get(vecs.len()).copied().unwrap_or(f64::INFINITY);
    let scale = (d as f64) * (2.0 * d as f64 + p.n() as f64 - 2.0);
    Ok(tau * tau * gap / (4.0 * scale))
}

pub fn to_usize(q: &Rational) -> Option<usize> {
    if q.is_integer() {
        q.numer().to_usize()
    } else {
        None
    }
}
