//! Critical radii, effective critical/singular/nodal sets on grids, their
//! Minkowski volumes, and planar critical points.
//!
//! All set computations are in floating point. A field is anything that
//! implements [`FieldEvaluator`]; polynomial expansions provide exact
//! sphere averages and rigorous Taylor bounds that let most grid cells be
//! rejected without sampling.

use base64::Engine;
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::GeometryConfig;
use crate::error::{Error, Result};
use crate::frequency::{Expansion, FloatExpansion, FrequencyKind};
use crate::numeric::frequency_from_weights;
use crate::poly::{int, to_f64, Rational};
use crate::sampling::{ball_points, gauss_legendre, sphere_quadrature, unit_sphere_area};

pub trait FieldEvaluator: Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Vec<f64>;

    fn hessian(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let n = self.dim();
        let h = 1e-5;
        let mut out = vec![vec![0.0; n]; n];
        for j in 0..n {
            let mut a = x.to_vec();
            let mut b = x.to_vec();
            a[j] += h;
            b[j] -= h;
            let ga = self.gradient(&a);
            let gb = self.gradient(&b);
            for i in 0..n {
                out[i][j] = (ga[i] - gb[i]) / (2.0 * h);
            }
        }
        out
    }

    /// Average of `(u - u(x))^2` (or `u^2`) over the sphere of radius `s` about `x`.
    fn sphere_mean_sq(&self, x: &[f64], s: f64, subtract_center: bool) -> f64 {
        let q = sphere_quadrature(self.dim(), 64).expect("quadrature available in 2 and 3 dimensions");
        let u0 = if subtract_center { self.value(x) } else { 0.0 };
        q.iter()
            .map(|(p, w)| {
                let y: Vec<f64> = x.iter().zip(p).map(|(a, b)| a + s * b).collect();
                w * (self.value(&y) - u0).powi(2)
            })
            .sum()
    }

    /// Normalized frequency `N(x, s)`.
    fn freq(&self, x: &[f64], s: f64) -> Option<f64> {
        let n = self.dim();
        let q = sphere_quadrature(n, 32)?;
        let (gx, gw) = gauss_legendre(16);
        let mut dirichlet = 0.0;
        for (t, w) in gx.iter().zip(&gw) {
            let rho = 0.5 * s * (t + 1.0);
            let avg: f64 = q
                .iter()
                .map(|(p, qw)| {
                    let y: Vec<f64> = x.iter().zip(p).map(|(a, b)| a + rho * b).collect();
                    qw * self.gradient(&y).iter().map(|g| g * g).sum::<f64>()
                })
                .sum();
            dirichlet += 0.5 * s * w * rho.powi(n as i32 - 1) * avg;
        }
        let h = self.sphere_mean_sq(x, s, true);
        if h <= 0.0 {
            return None;
        }
        Some(s * dirichlet / (s.powi(n as i32 - 1) * h))
    }

    /// Graded weights `w_k` with `avg_{dB_s(x)} u^2 = sum_k w_k s^{2k}`, when the backing is polynomial.
    fn sphere_weights(&self, _x: &[f64]) -> Option<Vec<f64>> {
        None
    }

    /// Upper bound for `sup_{|z|<=r} |grad u(x+z) - grad u(x)|`, if the backing knows one.
    fn gradient_variation_bound(&self, _x: &[f64], _r: f64) -> Option<f64> {
        None
    }

    /// Upper bound for `sup_{|z|<=r} |u(x+z) - u(x)|`, if the backing knows one.
    fn value_variation_bound(&self, _x: &[f64], _r: f64) -> Option<f64> {
        None
    }
}

/// A harmonic polynomial given by an expansion.
#[derive(Clone, Debug)]
pub struct ExpansionField {
    inner: FloatExpansion,
}

impl ExpansionField {
    pub fn new(e: &Expansion) -> Self {
        ExpansionField { inner: e.to_float() }
    }

    pub fn expansion(&self) -> &FloatExpansion {
        &self.inner
    }
}

impl FieldEvaluator for ExpansionField {
    fn dim(&self) -> usize {
        self.inner.n()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.inner.value(x)
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.inner.gradient(x)
    }

    fn hessian(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let c = self.inner.taylor(x);
        self.inner.engine().hessian_at(&c)
    }

    fn sphere_mean_sq(&self, x: &[f64], s: f64, subtract_center: bool) -> f64 {
        let w = self.inner.weights_at(x);
        let start = usize::from(subtract_center);
        w.iter().enumerate().skip(start).map(|(k, a)| a * s.powi(2 * k as i32)).sum()
    }

    fn freq(&self, x: &[f64], s: f64) -> Option<f64> {
        frequency_from_weights(&self.inner.weights_at(x), s)
    }

    fn sphere_weights(&self, x: &[f64]) -> Option<Vec<f64>> {
        Some(self.inner.weights_at(x))
    }

    fn gradient_variation_bound(&self, x: &[f64], r: f64) -> Option<f64> {
        let c = self.inner.taylor(x);
        Some(self.inner.engine().gradient_variation_bound(&c, r))
    }

    fn value_variation_bound(&self, x: &[f64], r: f64) -> Option<f64> {
        let c = self.inner.taylor(x);
        Some(self.inner.engine().value_variation_bound(&c, r))
    }
}

/// `s -> N(x, s)` at a fixed centre; polynomial backings re-expand once.
pub struct FreqCurve<'a> {
    field: &'a dyn FieldEvaluator,
    x: Vec<f64>,
    weights: Option<Vec<f64>>,
}

impl<'a> FreqCurve<'a> {
    pub fn new(field: &'a dyn FieldEvaluator, x: &[f64]) -> Self {
        FreqCurve { field, x: x.to_vec(), weights: field.sphere_weights(x) }
    }

    pub fn at(&self, s: f64) -> Option<f64> {
        match &self.weights {
            Some(w) => frequency_from_weights(w, s),
            None => self.field.freq(&self.x, s),
        }
    }
}

/// `sup {s <= r0 : N(x, s) < 3/2}`, or 0 when the frequency is at least 3/2 at every scale.
pub fn critical_radius(f: &dyn FieldEvaluator, x: &[f64], r0: f64, rel_tol: f64) -> Result<f64> {
    let c = FreqCurve::new(f, x);
    threshold_radius(|s| c.at(s), 1.5, r0, rel_tol)
}

pub(crate) fn threshold_radius(g: impl Fn(f64) -> Option<f64>, level: f64, r0: f64, rel_tol: f64) -> Result<f64> {
    let below = |s: f64| -> Result<bool> {
        match g(s) {
            Some(v) => Ok(v < level),
            None => Err(Error::VanishingHeight),
        }
    };
    if below(r0)? {
        return Ok(r0);
    }
    let mut lo = r0 * 1e-9;
    if !below(lo)? {
        return Ok(0.0);
    }
    let mut hi = r0;
    while (hi - lo) > rel_tol * lo {
        let mid = (lo * hi).sqrt();
        if below(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// `sup {s <= r0 : N(y, s) < d + eps0 for all sampled y in B(x, s)}`.
pub fn d_critical_radius(
    f: &dyn FieldEvaluator,
    x: &[f64],
    d: u32,
    eps0: f64,
    r0: f64,
    samples: usize,
    rel_tol: f64,
) -> Result<f64> {
    let pts = ball_points(f.dim(), samples);
    let g = |s: f64| -> Option<f64> {
        let mut best = f64::NEG_INFINITY;
        for p in &pts {
            let y: Vec<f64> = x.iter().zip(p).map(|(a, b)| a + s * b).collect();
            best = best.max(FreqCurve::new(f, &y).at(s)?);
        }
        Some(best)
    };
    threshold_radius(g, d as f64 + eps0, r0, rel_tol)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub n: usize,
    pub origin: Vec<f64>,
    pub spacing: f64,
    pub extents: Vec<usize>,
}

impl GridSpec {
    /// Cube of cell centres covering `[-radius, radius]^n`, with the origin a cell centre.
    pub fn for_ball(n: usize, radius: f64, spacing: f64) -> Self {
        let m = (radius / spacing).ceil() as usize;
        GridSpec { n, origin: vec![-(m as f64) * spacing; n], spacing, extents: vec![2 * m + 1; n] }
    }

    pub fn len(&self) -> usize {
        self.extents.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index_of(&self, mut lin: usize) -> Vec<usize> {
        let mut out = vec![0; self.n];
        for (k, e) in self.extents.iter().enumerate() {
            out[k] = lin % e;
            lin /= e;
        }
        out
    }

    pub fn linear(&self, idx: &[usize]) -> usize {
        let mut lin = 0;
        for k in (0..self.n).rev() {
            lin = lin * self.extents[k] + idx[k];
        }
        lin
    }

    pub fn point(&self, lin: usize) -> Vec<f64> {
        self.index_of(lin)
            .iter()
            .zip(&self.origin)
            .map(|(&i, o)| o + i as f64 * self.spacing)
            .collect()
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.n as i32)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SetKind {
    /// `inf_{B_r(x)} |grad u|^2 < n/(16 r^2) avg_{dB_2r(x)} |u - u(x)|^2`.
    Critical,
    /// `inf_{B_r(x)} (|u|^2 + r^2/n |grad u|^2) < 1/16 avg_{dB_2r(x)} |u|^2`.
    Singular,
    /// `inf_{B_r(x)} |u|^2 < eps avg_{dB_2r(x)} |u|^2`.
    Nodal { eps: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SetMask {
    pub grid: GridSpec,
    pub r: f64,
    pub domain_radius: f64,
    pub bits: Vec<bool>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetMaskJson {
    pub n: usize,
    pub spacing: f64,
    pub origin: Vec<f64>,
    pub extents: Vec<usize>,
    pub r: f64,
    pub domain_radius: f64,
    /// Bits in linear index order, least significant bit first, base64.
    pub bitset: String,
}

impl SetMask {
    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn members(&self) -> Vec<Vec<f64>> {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(|(i, _)| self.grid.point(i))
            .collect()
    }

    pub fn to_json(&self) -> SetMaskJson {
        let mut bytes = vec![0u8; self.bits.len().div_ceil(8)];
        for (i, b) in self.bits.iter().enumerate() {
            if *b {
                bytes[i / 8] |= 1 << (i % 8);
            }
        }
        SetMaskJson {
            n: self.grid.n,
            spacing: self.grid.spacing,
            origin: self.grid.origin.clone(),
            extents: self.grid.extents.clone(),
            r: self.r,
            domain_radius: self.domain_radius,
            bitset: base64::engine::general_purpose::STANDARD.encode(bytes),
        }
    }

    pub fn from_json(j: &SetMaskJson) -> Result<SetMask> {
        let grid = GridSpec { n: j.n, origin: j.origin.clone(), spacing: j.spacing, extents: j.extents.clone() };
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(&j.bitset)
            .map_err(|e| Error::Parse(format!("bitset: {e}")))?;
        let len = grid.len();
        if bytes.len() != len.div_ceil(8) {
            return Err(Error::Parse("bitset length does not match extents".into()));
        }
        let bits = (0..len).map(|i| bytes[i / 8] & (1 << (i % 8)) != 0).collect();
        Ok(SetMask { grid, r: j.r, domain_radius: j.domain_radius, bits })
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn objective(f: &dyn FieldEvaluator, kind: SetKind, r: f64, y: &[f64]) -> f64 {
    let n = f.dim() as f64;
    match kind {
        SetKind::Critical => f.gradient(y).iter().map(|g| g * g).sum(),
        SetKind::Singular => f.value(y).powi(2) + r * r / n * f.gradient(y).iter().map(|g| g * g).sum::<f64>(),
        SetKind::Nodal { .. } => f.value(y).powi(2),
    }
}

fn threshold(f: &dyn FieldEvaluator, kind: SetKind, r: f64, x: &[f64]) -> f64 {
    let n = f.dim() as f64;
    match kind {
        SetKind::Critical => n / (16.0 * r * r) * f.sphere_mean_sq(x, 2.0 * r, true),
        SetKind::Singular => f.sphere_mean_sq(x, 2.0 * r, false) / 16.0,
        SetKind::Nodal { eps } => eps * f.sphere_mean_sq(x, 2.0 * r, false),
    }
}

/// Rigorous lower bound of the objective on `B_r(x)` when the field supplies Taylor bounds.
fn objective_lower_bound(f: &dyn FieldEvaluator, kind: SetKind, r: f64, x: &[f64]) -> Option<f64> {
    let n = f.dim() as f64;
    let grad_lb = || -> Option<f64> {
        let g = norm(&f.gradient(x));
        Some((g - f.gradient_variation_bound(x, r)?).max(0.0))
    };
    let val_lb = || -> Option<f64> { Some((f.value(x).abs() - f.value_variation_bound(x, r)?).max(0.0)) };
    match kind {
        SetKind::Critical => grad_lb().map(|g| g * g),
        SetKind::Singular => Some(val_lb()?.powi(2) + r * r / n * grad_lb()?.powi(2)),
        SetKind::Nodal { .. } => val_lb().map(|v| v * v),
    }
}

/// One local improvement step from `y`, kept inside `B_r(x)`.
fn refine(f: &dyn FieldEvaluator, kind: SetKind, r: f64, x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = f.dim();
    let g = f.gradient(y);
    let step: Option<Vec<f64>> = match kind {
        SetKind::Critical => {
            let h = f.hessian(y);
            let m = DMatrix::from_fn(n, n, |i, j| h[i][j]);
            m.lu().solve(&DVector::from_column_slice(&g)).map(|s| s.iter().copied().collect())
        }
        SetKind::Nodal { .. } => {
            let gg: f64 = g.iter().map(|v| v * v).sum();
            (gg > 0.0).then(|| {
                let u = f.value(y);
                g.iter().map(|v| u * v / gg).collect()
            })
        }
        SetKind::Singular => {
            let h = f.hessian(y);
            let u = f.value(y);
            let c = r * r / n as f64;
            let grad_phi: Vec<f64> = (0..n)
                .map(|i| 2.0 * u * g[i] + 2.0 * c * (0..n).map(|j| h[i][j] * g[j]).sum::<f64>())
                .collect();
            let gn = norm(&grad_phi);
            (gn > 0.0).then(|| grad_phi.iter().map(|v| v / gn * 0.25 * r).collect())
        }
    };
    let Some(step) = step else { return y.to_vec() };
    let base = objective(f, kind, r, y);
    let mut scale = 1.0;
    for _ in 0..6 {
        let mut z: Vec<f64> = y.iter().zip(&step).map(|(a, s)| a - scale * s).collect();
        let d: Vec<f64> = z.iter().zip(x).map(|(a, b)| a - b).collect();
        let dn = norm(&d);
        if dn > r {
            z = x.iter().zip(&d).map(|(b, v)| b + v * r / dn).collect();
        }
        if objective(f, kind, r, &z) < base {
            return z;
        }
        scale *= 0.5;
    }
    y.to_vec()
}

/// Membership of every grid cell centre inside `B(0, domain_radius)`.
pub fn effective_set(
    f: &dyn FieldEvaluator,
    kind: SetKind,
    r: f64,
    grid: &GridSpec,
    cfg: &GeometryConfig,
) -> Result<SetMask> {
    if grid.n != f.dim() {
        return Err(Error::DimensionMismatch { expected: f.dim(), got: grid.n });
    }
    if !(r > 0.0) {
        return Err(Error::InvalidArgument("radius must be positive".into()));
    }
    let unit = ball_points(f.dim(), cfg.inf_samples_per_dim * f.dim());
    let dr = cfg.domain_radius;
    let bits: Vec<bool> = (0..grid.len())
        .into_par_iter()
        .map(|lin| {
            let x = grid.point(lin);
            if norm(&x) > dr + 1e-12 {
                return false;
            }
            let thr = threshold(f, kind, r, &x);
            if let Some(lb) = objective_lower_bound(f, kind, r, &x) {
                if lb >= thr {
                    return false;
                }
            }
            let mut best = (f64::INFINITY, x.clone());
            for p in &unit {
                let y: Vec<f64> = x.iter().zip(p).map(|(a, b)| a + r * b).collect();
                let v = objective(f, kind, r, &y);
                if v < best.0 {
                    best = (v, y);
                }
            }
            if best.0 < thr {
                return true;
            }
            let z = refine(f, kind, r, &x, &best.1);
            objective(f, kind, r, &z) < thr
        })
        .collect();
    Ok(SetMask { grid: grid.clone(), r, domain_radius: dr, bits })
}

pub fn effective_critical_set(f: &dyn FieldEvaluator, r: f64, grid: &GridSpec, cfg: &GeometryConfig) -> Result<SetMask> {
    effective_set(f, SetKind::Critical, r, grid, cfg)
}

pub fn effective_singular_set(f: &dyn FieldEvaluator, r: f64, grid: &GridSpec, cfg: &GeometryConfig) -> Result<SetMask> {
    effective_set(f, SetKind::Singular, r, grid, cfg)
}

pub fn effective_nodal_set(f: &dyn FieldEvaluator, r: f64, grid: &GridSpec, cfg: &GeometryConfig) -> Result<SetMask> {
    effective_set(f, SetKind::Nodal { eps: cfg.nodal_eps }, r, grid, cfg)
}

/// Cells where `N(x, r) >= 3/2`, the frequency form of the effective singular set.
pub fn frequency_set(f: &dyn FieldEvaluator, r: f64, grid: &GridSpec, domain_radius: f64) -> Result<SetMask> {
    if grid.n != f.dim() {
        return Err(Error::DimensionMismatch { expected: f.dim(), got: grid.n });
    }
    let bits: Vec<bool> = (0..grid.len())
        .into_par_iter()
        .map(|lin| {
            let x = grid.point(lin);
            if norm(&x) > domain_radius + 1e-12 {
                return Ok(false);
            }
            FreqCurve::new(f, &x).at(r).map(|v| v >= 1.5).ok_or(Error::VanishingHeight)
        })
        .collect::<Result<_>>()?;
    Ok(SetMask { grid: grid.clone(), r, domain_radius, bits })
}

/// Volume of the cells within distance `r` of a member, inside the mask's domain ball.
pub fn minkowski_volume(mask: &SetMask, r: f64) -> f64 {
    let g = &mask.grid;
    let reach = (r / g.spacing).floor() as i64;
    let mut offsets: Vec<Vec<i64>> = vec![vec![]];
    for _ in 0..g.n {
        offsets = offsets
            .into_iter()
            .flat_map(|o| (-reach..=reach).map(move |k| {
                let mut o2 = o.clone();
                o2.push(k);
                o2
            }))
            .collect();
    }
    offsets.retain(|o| {
        let d2: f64 = o.iter().map(|&k| (k as f64 * g.spacing).powi(2)).sum();
        d2 <= r * r * (1.0 + 1e-12)
    });
    let mut marked = vec![false; g.len()];
    for (lin, b) in mask.bits.iter().enumerate() {
        if !*b {
            continue;
        }
        let idx = g.index_of(lin);
        'off: for o in &offsets {
            let mut j = Vec::with_capacity(g.n);
            for k in 0..g.n {
                let v = idx[k] as i64 + o[k];
                if v < 0 || v >= g.extents[k] as i64 {
                    continue 'off;
                }
                j.push(v as usize);
            }
            marked[g.linear(&j)] = true;
        }
    }
    let count = marked
        .iter()
        .enumerate()
        .filter(|(lin, m)| **m && norm(&g.point(*lin)) <= mask.domain_radius + 1e-12)
        .count();
    count as f64 * g.cell_volume()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeRow {
    pub id: String,
    pub r: f64,
    pub volume: f64,
    pub count: usize,
}

/// Effective set and its `r`-neighbourhood volume at each radius, grid spacing `spacing_factor * r`.
pub fn volume_scan(
    f: &dyn FieldEvaluator,
    kind: SetKind,
    id: &str,
    radii: &[f64],
    cfg: &GeometryConfig,
) -> Result<Vec<VolumeRow>> {
    radii
        .iter()
        .map(|&r| {
            let grid = GridSpec::for_ball(f.dim(), cfg.domain_radius, cfg.spacing_factor * r);
            let mask = effective_set(f, kind, r, &grid, cfg)?;
            Ok(VolumeRow { id: id.to_string(), r, volume: minkowski_volume(&mask, r), count: mask.count() })
        })
        .collect()
}

/// Least-squares slope and `R^2` of `y` against `x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let m = x.len() as f64;
    let mx = x.iter().sum::<f64>() / m;
    let my = y.iter().sum::<f64>() / m;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (slope, intercept, r2)
}

/// Slope of `log volume` against `log r`.
pub fn volume_exponent(rows: &[VolumeRow]) -> f64 {
    let x: Vec<f64> = rows.iter().map(|r| r.r.ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.volume.ln()).collect();
    linear_fit(&x, &y).0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticalPoint {
    pub x: Vec<f64>,
    pub multiplicity: usize,
}

/// Complex coefficients `c_k` with `u = Re sum c_k z^k` about the expansion centre.
pub fn holomorphic_coefficients(e: &Expansion) -> Result<Vec<Complex64>> {
    if e.n() != 2 {
        return Err(Error::InvalidArgument("planar expansion required".into()));
    }
    let s = 1.0 / to_f64(e.denom()).sqrt();
    let mut c = vec![Complex64::new(0.0, 0.0); e.max_degree() as usize + 1];
    for t in e.terms() {
        let k = t.degree;
        let q = t.poly.scale(&t.coeff);
        let alpha = to_f64(&q.coeff(&[k, 0]));
        let beta = if k > 0 { to_f64(&(q.coeff(&[k - 1, 1]) / int(k as i64))) } else { 0.0 };
        c[k as usize] = Complex64::new(alpha * s, -beta * s);
    }
    Ok(c)
}

fn horner(p: &[Complex64], z: Complex64) -> Complex64 {
    p.iter().rev().fold(Complex64::new(0.0, 0.0), |acc, c| acc * z + c)
}

/// Roots of the complex polynomial `sum p_j z^j` via the companion matrix,
/// with Aberth iteration as a fallback when the Schur form does not converge.
pub fn complex_roots(p: &[Complex64]) -> Vec<Complex64> {
    let scale = p.iter().map(|c| c.norm()).fold(0.0, f64::max);
    let mut deg = p.len();
    while deg > 0 && p[deg - 1].norm() <= 1e-14 * scale {
        deg -= 1;
    }
    if deg <= 1 {
        return vec![];
    }
    let zeros = p[..deg].iter().take_while(|c| c.norm() == 0.0).count();
    let mut out = vec![Complex64::new(0.0, 0.0); zeros];
    let q = &p[zeros..deg];
    let m = q.len() - 1;
    if m == 0 {
        return out;
    }
    let lead = q[m];
    let comp = DMatrix::<Complex64>::from_fn(m, m, |i, j| {
        if i == 0 {
            -q[m - 1 - j] / lead
        } else if i == j + 1 {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    let start: Vec<Complex64> = match nalgebra::Schur::try_new(comp, f64::EPSILON, 10_000) {
        Some(s) => {
            let t = s.unpack().1;
            (0..m).map(|i| t[(i, i)]).collect()
        }
        None => aberth(q),
    };
    let dq: Vec<Complex64> = (1..=m).map(|j| q[j] * j as f64).collect();
    out.extend(start.into_iter().map(|mut z| {
        for _ in 0..8 {
            let d = horner(&dq, z);
            if d.norm() == 0.0 {
                break;
            }
            let next = z - horner(q, z) / d;
            if !next.re.is_finite() || !next.im.is_finite() {
                break;
            }
            if horner(q, next).norm() <= horner(q, z).norm() {
                z = next;
            } else {
                break;
            }
        }
        z
    }));
    out
}

fn aberth(q: &[Complex64]) -> Vec<Complex64> {
    let m = q.len() - 1;
    let dq: Vec<Complex64> = (1..=m).map(|j| q[j] * j as f64).collect();
    let bound = 1.0 + q[..m].iter().map(|c| (c / q[m]).norm()).fold(0.0, f64::max);
    let mut z: Vec<Complex64> =
        (0..m).map(|k| Complex64::from_polar(0.5 * bound, 0.4 + std::f64::consts::TAU * k as f64 / m as f64)).collect();
    for _ in 0..500 {
        let mut moved: f64 = 0.0;
        for i in 0..m {
            let d = horner(&dq, z[i]);
            let v = horner(q, z[i]);
            if v.norm() == 0.0 {
                continue;
            }
            let ratio = v / d;
            let repulse: Complex64 = (0..m).filter(|&j| j != i).map(|j| 1.0 / (z[i] - z[j])).sum();
            let step = ratio / (1.0 - ratio * repulse);
            if step.re.is_finite() && step.im.is_finite() {
                z[i] -= step;
                moved = moved.max(step.norm());
            }
        }
        if moved <= 1e-15 * bound {
            break;
        }
    }
    z
}

/// Critical points of a planar expansion: roots of the holomorphic derivative,
/// clustered into points with multiplicity. `radius` restricts to a disc about
/// the expansion centre; `None` keeps every root.
pub fn critical_points_2d(e: &Expansion, radius: Option<f64>, cluster_tol: f64) -> Result<Vec<CriticalPoint>> {
    let c = holomorphic_coefficients(e)?;
    let dp: Vec<Complex64> = c.iter().enumerate().skip(1).map(|(k, ck)| ck * k as f64).collect();
    if dp.iter().all(|z| z.norm() == 0.0) {
        return Err(Error::InvalidArgument("constant function has no isolated critical points".into()));
    }
    let roots = complex_roots(&dp);
    let mut clusters: Vec<(Complex64, usize)> = Vec::new();
    for z in roots {
        match clusters.iter_mut().find(|(w, _)| (*w - z).norm() <= cluster_tol.max(1e-7 * w.norm())) {
            Some((w, m)) => {
                *w = (*w * *m as f64 + z) / (*m as f64 + 1.0);
                *m += 1;
            }
            None => clusters.push((z, 1)),
        }
    }
    let center: Vec<f64> = e.center().iter().map(to_f64).collect();
    let mut out: Vec<CriticalPoint> = clusters
        .into_iter()
        .filter(|(z, _)| radius.map_or(true, |rad| z.norm() < rad))
        .map(|(z, m)| CriticalPoint { x: vec![center[0] + z.re, center[1] + z.im], multiplicity: m })
        .collect();
    out.sort_by(|a, b| a.x[0].total_cmp(&b.x[0]).then(a.x[1].total_cmp(&b.x[1])));
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct InclusionReport {
    pub c: f64,
    pub checked: usize,
    pub max_ratio: f64,
    pub violations: usize,
}

impl InclusionReport {
    pub fn holds(&self) -> bool {
        self.violations == 0
    }
}

/// For every member `x`, compares the critical radius at `x` with `c * r`.
pub fn frequency_inclusion_check(
    f: &dyn FieldEvaluator,
    mask: &SetMask,
    c: f64,
    cfg: &GeometryConfig,
) -> Result<InclusionReport> {
    let members = mask.members();
    let ratios: Vec<f64> = members
        .par_iter()
        .map(|x| critical_radius(f, x, cfg.r0, cfg.radius_rel_tol).map(|rc| rc / mask.r))
        .collect::<Result<_>>()?;
    let max_ratio = ratios.iter().copied().fold(0.0, f64::max);
    let violations = ratios.iter().filter(|&&q| q > c).count();
    Ok(InclusionReport { c, checked: members.len(), max_ratio, violations })
}

#[derive(Clone, Debug, PartialEq)]
pub struct NodalCheck {
    /// Unnormalized frequency at radius 1.
    pub unnormalized_freq: Rational,
    /// Whether `u(0)^2 >= h(0,1)/2`, evaluated only when the frequency is at most 1/2.
    pub value_bound: Option<bool>,
    pub pinched: bool,
    pub sampled: usize,
    pub sign_violations: usize,
}

impl NodalCheck {
    pub fn holds(&self) -> bool {
        self.value_bound != Some(false) && self.sign_violations == 0
    }
}

/// Two nondegeneracy statements about the zero set near a point.
///
/// If `N_S(0,1) <= 1/2` then `u(0)^2 >= h(0,1)/2`. If the frequency is
/// `eps`-pinched around 1 on `[e^-2, e^2]`, then `u - u(0)` has the sign of
/// its linear part at every sampled point of `B(0,1)` farther than `tau`
/// from the hyperplane where that linear part vanishes.
pub fn nodal_nondegeneracy_check(e: &Expansion, eps: f64, tau: f64, samples: usize) -> Result<NodalCheck> {
    let one = Rational::from_integer(1.into());
    let ns = e.freq_kind(&one, FrequencyKind::Unnormalized)?;
    let value_bound = (ns <= Rational::new(1.into(), 2.into())).then(|| {
        let w0 = e.a_sq(0);
        let h = e.height(&one);
        w0 * int(2) >= h
    });
    let w = e.weights_f64();
    let e2 = std::f64::consts::E.powi(2);
    let lo = frequency_from_weights(&w, 1.0 / e2).ok_or(Error::VanishingHeight)?;
    let hi = frequency_from_weights(&w, e2).ok_or(Error::VanishingHeight)?;
    let pinched = lo >= 1.0 - eps && hi <= 1.0 + eps;
    let mut sampled = 0;
    let mut sign_violations = 0;
    if pinched {
        let fe = e.to_float();
        let c = fe.center().to_vec();
        let g = fe.gradient(&c);
        let gn = norm(&g);
        let u0 = fe.value(&c);
        for p in ball_points(e.n(), samples) {
            let lin: f64 = p.iter().zip(&g).map(|(a, b)| a * b).sum::<f64>() / gn;
            if lin.abs() <= tau {
                continue;
            }
            sampled += 1;
            let x: Vec<f64> = p.iter().zip(&c).map(|(a, b)| a + b).collect();
            let v = fe.value(&x) - u0;
            if v * lin <= 0.0 {
                sign_violations += 1;
            }
        }
    }
    Ok(NodalCheck { unnormalized_freq: ns, value_bound, pinched, sampled, sign_violations })
}

/// Surface area of the unit sphere, re-exported for convenience.
pub fn sphere_area(n: usize) -> f64 {
    unit_sphere_area(n)
}
