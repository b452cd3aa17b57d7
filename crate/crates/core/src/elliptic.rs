//! Planar divergence-form equations `d_i(a^ij d_j u) + b^i d_i u + c u = 0`:
//! a finite-difference solver, the generalized frequency built on the metric
//! `g_ij = eta a_ij`, and the Green's-kernel harmonic approximation of a
//! tangent field.

use std::f64::consts::PI;
use std::io::{Read, Write};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::EllipticConfig;
use crate::error::{Error, Result};
use crate::frequency::{rational_of, Expansion, ExpansionJson, FloatExpansion, Term};
use crate::geometry::GridSpec;
use crate::hhp::basis;
use crate::poly::Rational;
use crate::sampling::gauss_legendre;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ScalarField {
    Const { value: f64 },
    Affine { value: f64, gradient: [f64; 2] },
    /// `mean + amplitude * sin(wave . x + phase)`
    Trig { mean: f64, amplitude: f64, wave: [f64; 2], phase: f64 },
}

impl ScalarField {
    pub fn constant(value: f64) -> Self {
        ScalarField::Const { value }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            ScalarField::Const { value } => *value,
            ScalarField::Affine { value, gradient } => value + gradient[0] * x[0] + gradient[1] * x[1],
            ScalarField::Trig { mean, amplitude, wave, phase } => {
                mean + amplitude * (wave[0] * x[0] + wave[1] * x[1] + phase).sin()
            }
        }
    }

    pub fn gradient(&self, x: &[f64]) -> [f64; 2] {
        match self {
            ScalarField::Const { .. } => [0.0, 0.0],
            ScalarField::Affine { gradient, .. } => *gradient,
            ScalarField::Trig { amplitude, wave, phase, .. } => {
                let c = amplitude * (wave[0] * x[0] + wave[1] * x[1] + phase).cos();
                [c * wave[0], c * wave[1]]
            }
        }
    }

    /// Global Lipschitz constant.
    pub fn lipschitz(&self) -> f64 {
        match self {
            ScalarField::Const { .. } => 0.0,
            ScalarField::Affine { gradient, .. } => gradient[0].hypot(gradient[1]),
            ScalarField::Trig { amplitude, wave, .. } => amplitude.abs() * wave[0].hypot(wave[1]),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientField {
    pub a11: ScalarField,
    pub a12: ScalarField,
    pub a22: ScalarField,
    pub b1: ScalarField,
    pub b2: ScalarField,
    pub c: ScalarField,
    pub lambda: f64,
}

type Mat2 = [[f64; 2]; 2];

fn det2(m: &Mat2) -> f64 {
    m[0][0] * m[1][1] - m[0][1] * m[1][0]
}

fn inv2(m: &Mat2) -> Mat2 {
    let d = det2(m);
    [[m[1][1] / d, -m[0][1] / d], [-m[1][0] / d, m[0][0] / d]]
}

fn mul2(m: &Mat2, v: [f64; 2]) -> [f64; 2] {
    [m[0][0] * v[0] + m[0][1] * v[1], m[1][0] * v[0] + m[1][1] * v[1]]
}

fn dot2(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Square root of a symmetric positive definite 2x2 matrix.
fn sqrt2(m: &Mat2) -> Mat2 {
    let s = det2(m).sqrt();
    let t = (m[0][0] + m[1][1] + 2.0 * s).sqrt();
    [[(m[0][0] + s) / t, m[0][1] / t], [m[1][0] / t, (m[1][1] + s) / t]]
}

fn eig2(m: &Mat2) -> (f64, f64) {
    let tr = m[0][0] + m[1][1];
    let disc = ((m[0][0] - m[1][1]).powi(2) + 4.0 * m[0][1] * m[1][0]).max(0.0).sqrt();
    ((tr - disc) / 2.0, (tr + disc) / 2.0)
}

impl CoefficientField {
    /// The Laplacian.
    pub fn identity() -> Self {
        CoefficientField {
            a11: ScalarField::constant(1.0),
            a12: ScalarField::constant(0.0),
            a22: ScalarField::constant(1.0),
            b1: ScalarField::constant(0.0),
            b2: ScalarField::constant(0.0),
            c: ScalarField::constant(0.0),
            lambda: 0.0,
        }
    }

    /// Smooth perturbation of the Laplacian with `a(0) = I` satisfying the
    /// ellipticity and Lipschitz bounds for `lambda`.
    pub fn preset(lambda: f64) -> Self {
        let trig = |amp: f64, wave: [f64; 2]| ScalarField::Trig { mean: 0.0, amplitude: amp, wave, phase: 0.0 };
        let shift = |f: ScalarField| match f {
            ScalarField::Trig { amplitude, wave, phase, .. } => ScalarField::Trig { mean: 1.0, amplitude, wave, phase },
            other => other,
        };
        CoefficientField {
            a11: shift(trig(lambda / 2.0, [1.0, 0.0])),
            a12: trig(lambda / 4.0, [0.5, 0.5]),
            a22: shift(trig(lambda / 2.0, [0.0, 1.0])),
            b1: ScalarField::constant(lambda / 2.0),
            b2: ScalarField::constant(-lambda / 4.0),
            c: ScalarField::Trig { mean: -lambda / 2.0, amplitude: lambda / 4.0, wave: [1.0, 1.0], phase: 0.0 },
            lambda,
        }
    }

    pub fn a(&self, x: &[f64]) -> Mat2 {
        let o = self.a12.value(x);
        [[self.a11.value(x), o], [o, self.a22.value(x)]]
    }

    pub fn b(&self, x: &[f64]) -> [f64; 2] {
        [self.b1.value(x), self.b2.value(x)]
    }

    pub fn c(&self, x: &[f64]) -> f64 {
        self.c.value(x)
    }

    /// Checks the ellipticity, Lipschitz and lower-order bounds at the given points.
    pub fn validate(&self, points: &[Vec<f64>]) -> Result<()> {
        let l = self.lambda;
        let tol = 1e-12;
        let lip = [&self.a11, &self.a12, &self.a22].iter().map(|f| f.lipschitz()).fold(0.0, f64::max);
        if lip > l + tol {
            return Err(Error::Precondition(format!("Lip(a) = {lip} exceeds lambda = {l}")));
        }
        for x in points {
            let (lo, hi) = eig2(&self.a(x));
            if lo < 1.0 / (1.0 + l) - tol || hi > 1.0 + l + tol {
                return Err(Error::Precondition(format!("ellipticity fails at {x:?}")));
            }
            let b = self.b(x);
            if b[0].hypot(b[1]) > l + tol || self.c(x).abs() > l + tol {
                return Err(Error::Precondition(format!("lower-order bound fails at {x:?}")));
            }
        }
        Ok(())
    }
}

/// Node values on a uniform square grid centred at the origin.
#[derive(Clone, Debug, PartialEq)]
pub struct GridField {
    pub grid: GridSpec,
    pub values: Vec<f64>,
}

fn lagrange6(xi: f64) -> ([f64; 6], [f64; 6]) {
    let mut w = [0.0; 6];
    let mut dw = [0.0; 6];
    for k in 0..6 {
        let mut den = 1.0;
        for j in 0..6 {
            if j != k {
                den *= (k as f64) - (j as f64);
            }
        }
        let mut num = 1.0;
        let mut dnum = 0.0;
        for j in 0..6 {
            if j == k {
                continue;
            }
            let t = xi - j as f64;
            dnum = dnum * t + num;
            num *= t;
        }
        w[k] = num / den;
        dw[k] = dnum / den;
    }
    (w, dw)
}

impl GridField {
    /// Square grid over `[-half_width, half_width]^2` with `points` nodes per side.
    pub fn square(half_width: f64, points: usize) -> Result<GridSpec> {
        if points < 7 || points % 2 == 0 {
            return Err(Error::InvalidArgument("grid needs an odd number of at least 7 points per side".into()));
        }
        let m = (points - 1) / 2;
        let h = half_width / m as f64;
        Ok(GridSpec { n: 2, origin: vec![-(m as f64) * h; 2], spacing: h, extents: vec![points; 2] })
    }

    pub fn sample(grid: &GridSpec, f: impl Fn(&[f64]) -> f64 + Sync) -> Self {
        let values = (0..grid.len()).into_par_iter().map(|k| f(&grid.point(k))).collect();
        GridField { grid: grid.clone(), values }
    }

    pub fn spacing(&self) -> f64 {
        self.grid.spacing
    }

    pub fn side(&self) -> usize {
        self.grid.extents[0]
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i + self.side() * j]
    }

    pub fn node(&self, i: usize, j: usize) -> [f64; 2] {
        let h = self.spacing();
        [self.grid.origin[0] + i as f64 * h, self.grid.origin[1] + j as f64 * h]
    }

    pub fn half_width(&self) -> f64 {
        -self.grid.origin[0]
    }

    /// Value and gradient of the tensor six-point Lagrange interpolant.
    pub fn interp(&self, x: &[f64]) -> (f64, [f64; 2]) {
        let h = self.spacing();
        let m = self.side();
        let mut start = [0usize; 2];
        let mut w = [[0.0; 6]; 2];
        let mut dw = [[0.0; 6]; 2];
        for k in 0..2 {
            let s = (x[k] - self.grid.origin[k]) / h;
            let base = (s.floor() as i64 - 2).clamp(0, m as i64 - 6) as usize;
            start[k] = base;
            let (a, b) = lagrange6(s - base as f64);
            w[k] = a;
            dw[k] = b;
        }
        let mut v = 0.0;
        let mut gx = 0.0;
        let mut gy = 0.0;
        for q in 0..6 {
            for p in 0..6 {
                let u = self.at(start[0] + p, start[1] + q);
                v += w[0][p] * w[1][q] * u;
                gx += dw[0][p] * w[1][q] * u;
                gy += w[0][p] * dw[1][q] * u;
            }
        }
        (v, [gx / h, gy / h])
    }

    /// Five-point Laplacian at interior nodes, zero on the boundary.
    pub fn laplacian(&self) -> GridField {
        let m = self.side();
        let h2 = self.spacing().powi(2);
        let mut out = vec![0.0; self.values.len()];
        for j in 1..m - 1 {
            for i in 1..m - 1 {
                out[i + m * j] = (self.at(i + 1, j) + self.at(i - 1, j) + self.at(i, j + 1) + self.at(i, j - 1)
                    - 4.0 * self.at(i, j))
                    / h2;
            }
        }
        GridField { grid: self.grid.clone(), values: out }
    }

    /// Header `n: u32`, `spacing: f64`, `origin: [f64; n]`, `extents: [u64; n]`,
    /// then node values, all little-endian.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_u32::<LittleEndian>(self.grid.n as u32)?;
        w.write_f64::<LittleEndian>(self.grid.spacing)?;
        for o in &self.grid.origin {
            w.write_f64::<LittleEndian>(*o)?;
        }
        for e in &self.grid.extents {
            w.write_u64::<LittleEndian>(*e as u64)?;
        }
        for v in &self.values {
            w.write_f64::<LittleEndian>(*v)?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<GridField> {
        let n = r.read_u32::<LittleEndian>()? as usize;
        if n != 2 {
            return Err(Error::Parse(format!("expected a planar grid, got n = {n}")));
        }
        let spacing = r.read_f64::<LittleEndian>()?;
        let origin = (0..n).map(|_| r.read_f64::<LittleEndian>()).collect::<std::io::Result<Vec<_>>>()?;
        let extents = (0..n).map(|_| r.read_u64::<LittleEndian>().map(|e| e as usize)).collect::<std::io::Result<Vec<_>>>()?;
        let grid = GridSpec { n, origin, spacing, extents };
        let values = (0..grid.len()).map(|_| r.read_f64::<LittleEndian>()).collect::<std::io::Result<Vec<_>>>()?;
        Ok(GridField { grid, values })
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,y,u")?;
        for k in 0..self.values.len() {
            let p = self.grid.point(k);
            writeln!(w, "{},{},{}", p[0], p[1], self.values[k])?;
        }
        Ok(())
    }
}

/// Banded LU without pivoting; rows hold columns `i - bw ..= i + bw`.
struct BandLu {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandLu {
    fn new(n: usize, bw: usize) -> Self {
        BandLu { n, bw, data: vec![0.0; n * (2 * bw + 1)] }
    }

    fn idx(&self, i: usize, j: usize) -> usize {
        i * (2 * self.bw + 1) + (j + self.bw - i)
    }

    fn add(&mut self, i: usize, j: usize, v: f64) {
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    fn get(&self, i: usize, j: usize) -> f64 {
        self.data[self.idx(i, j)]
    }

    fn factor(&mut self) -> Result<()> {
        let (n, bw) = (self.n, self.bw);
        for k in 0..n {
            let piv = self.get(k, k);
            if piv.abs() < 1e-300 {
                return Err(Error::Numerical("singular finite-difference system".into()));
            }
            let hi = (k + bw).min(n - 1);
            for i in k + 1..=hi {
                let ik = self.idx(i, k);
                let l = self.data[ik] / piv;
                if l == 0.0 {
                    continue;
                }
                self.data[ik] = l;
                let kk = self.idx(k, k);
                let ii = self.idx(i, k);
                for j in 1..=(hi - k) {
                    self.data[ii + j] -= l * self.data[kk + j];
                }
            }
        }
        Ok(())
    }

    fn solve(&self, rhs: &mut [f64]) {
        let (n, bw) = (self.n, self.bw);
        for i in 0..n {
            let lo = i.saturating_sub(bw);
            let mut s = rhs[i];
            for j in lo..i {
                s -= self.get(i, j) * rhs[j];
            }
            rhs[i] = s;
        }
        for i in (0..n).rev() {
            let hi = (i + bw).min(n - 1);
            let mut s = rhs[i];
            for j in i + 1..=hi {
                s -= self.get(i, j) * rhs[j];
            }
            rhs[i] = s / self.get(i, i);
        }
    }
}

/// Nine-point stencil of `h^2 L` at an interior node, as `(di, dj, weight)`.
fn stencil(coeffs: &CoefficientField, x: [f64; 2], h: f64) -> [(i64, i64, f64); 9] {
    let at = |dx: f64, dy: f64| [x[0] + dx * h, x[1] + dy * h];
    let ae = coeffs.a11.value(&at(0.5, 0.0));
    let aw = coeffs.a11.value(&at(-0.5, 0.0));
    let an = coeffs.a22.value(&at(0.0, 0.5));
    let as_ = coeffs.a22.value(&at(0.0, -0.5));
    let ce = coeffs.a12.value(&at(1.0, 0.0)) / 4.0;
    let cw = coeffs.a12.value(&at(-1.0, 0.0)) / 4.0;
    let cn = coeffs.a12.value(&at(0.0, 1.0)) / 4.0;
    let cs = coeffs.a12.value(&at(0.0, -1.0)) / 4.0;
    let b = coeffs.b(&x);
    let c = coeffs.c(&x);
    [
        (0, 0, -(ae + aw + an + as_) + c * h * h),
        (1, 0, ae + b[0] * h / 2.0),
        (-1, 0, aw - b[0] * h / 2.0),
        (0, 1, an + b[1] * h / 2.0),
        (0, -1, as_ - b[1] * h / 2.0),
        (1, 1, ce + cn),
        (1, -1, -ce - cs),
        (-1, 1, -cw - cn),
        (-1, -1, cw + cs),
    ]
}

#[derive(Clone, Debug)]
pub struct Solution {
    pub field: GridField,
    /// Largest scaled residual `|h^2 (L u - f)|` over interior nodes.
    pub residual: f64,
}

/// Solves `L u = source` with Dirichlet data `boundary` on the square grid.
pub fn solve_with_source(
    coeffs: &CoefficientField,
    boundary: &(dyn Fn(&[f64]) -> f64 + Sync),
    source: &(dyn Fn(&[f64]) -> f64 + Sync),
    grid: &GridSpec,
    cfg: &EllipticConfig,
) -> Result<Solution> {
    if grid.n != 2 || grid.extents[0] != grid.extents[1] {
        return Err(Error::InvalidArgument("square planar grid required".into()));
    }
    let nodes: Vec<Vec<f64>> = (0..grid.len()).map(|k| grid.point(k)).collect();
    coeffs.validate(&nodes)?;
    let m = grid.extents[0];
    let h = grid.spacing;
    let inner = m - 2;
    let unknown = |i: usize, j: usize| (i - 1) + inner * (j - 1);
    let mut field = GridField::sample(grid, |x| boundary(x));
    let mut band = BandLu::new(inner * inner, inner + 1);
    let mut rhs = vec![0.0; inner * inner];
    let mut stencils = Vec::with_capacity(inner * inner);
    for j in 1..m - 1 {
        for i in 1..m - 1 {
            let x = field.node(i, j);
            let row = unknown(i, j);
            let st = stencil(coeffs, x, h);
            rhs[row] = h * h * source(&x);
            for &(di, dj, w) in &st {
                let (ii, jj) = ((i as i64 + di) as usize, (j as i64 + dj) as usize);
                if ii == 0 || jj == 0 || ii == m - 1 || jj == m - 1 {
                    rhs[row] -= w * field.at(ii, jj);
                } else {
                    band.add(row, unknown(ii, jj), w);
                }
            }
            stencils.push(st);
        }
    }
    band.factor()?;
    let mut u = rhs.clone();
    band.solve(&mut u);

    let apply = |u: &[f64], field: &GridField| -> Vec<f64> {
        (0..inner * inner)
            .map(|row| {
                let (i, j) = (row % inner + 1, row / inner + 1);
                stencils[row]
                    .iter()
                    .map(|&(di, dj, w)| {
                        let (ii, jj) = ((i as i64 + di) as usize, (j as i64 + dj) as usize);
                        let v = if ii == 0 || jj == 0 || ii == m - 1 || jj == m - 1 {
                            field.at(ii, jj)
                        } else {
                            u[unknown(ii, jj)]
                        };
                        w * v
                    })
                    .sum::<f64>()
                    - h * h * source(&field.node(i, j))
            })
            .collect()
    };
    let mut res = apply(&u, &field);
    for _ in 0..2 {
        let mut e = res.clone();
        band.solve(&mut e);
        for (a, b) in u.iter_mut().zip(&e) {
            *a -= b;
        }
        res = apply(&u, &field);
    }
    let residual = res.iter().fold(0.0f64, |a, b| a.max(b.abs()));
    for j in 1..m - 1 {
        for i in 1..m - 1 {
            field.values[i + m * j] = u[unknown(i, j)];
        }
    }
    if residual > cfg.residual_tol {
        return Err(Error::Numerical(format!("solver residual {residual:e} above tolerance")));
    }
    Ok(Solution { field, residual })
}

/// Solves `L u = 0` with Dirichlet data `boundary`.
pub fn solve(
    coeffs: &CoefficientField,
    boundary: &(dyn Fn(&[f64]) -> f64 + Sync),
    grid: &GridSpec,
    cfg: &EllipticConfig,
) -> Result<Solution> {
    solve_with_source(coeffs, boundary, &|_| 0.0, grid, cfg)
}

/// A problem file: coefficients, harmonic boundary data and the grid.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EllipticProblem {
    pub coefficients: CoefficientField,
    pub boundary: ExpansionJson,
    pub half_width: f64,
    pub points: usize,
}

impl EllipticProblem {
    pub fn solve(&self, cfg: &EllipticConfig) -> Result<Solution> {
        let e = Expansion::from_json(&self.boundary)?.to_float();
        let grid = GridField::square(self.half_width, self.points)?;
        solve(&self.coefficients, &|x| e.value(x), &grid, cfg)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneralizedFrequency {
    pub r: f64,
    pub freq: f64,
    pub i: f64,
    pub d: f64,
    pub h: f64,
    /// `|I - D| / D`
    pub discrepancy: f64,
}

/// `N = r I / H` over the ellipse `{a_ij(xbar)(x - xbar)^i (x - xbar)^j < r^2}`.
pub fn generalized_frequency(
    u: &GridField,
    coeffs: &CoefficientField,
    xbar: &[f64],
    r: f64,
    cfg: &EllipticConfig,
) -> Result<GeneralizedFrequency> {
    let abar = coeffs.a(xbar);
    let s = sqrt2(&abar);
    let abar_inv = inv2(&abar);
    let (_, hi) = eig2(&abar);
    let reach = r * hi.sqrt() + 3.0 * u.spacing();
    let hw = u.half_width();
    if xbar[0].abs() + reach > hw || xbar[1].abs() + reach > hw {
        return Err(Error::Precondition("ellipse leaves the grid".into()));
    }
    let u0 = u.interp(xbar).0;
    let jac = det2(&s);
    let m = cfg.boundary_nodes;
    let (gx, gw) = gauss_legendre(cfg.radial_nodes);
    let angles: Vec<(f64, f64)> = (0..m).map(|k| (2.0 * PI * k as f64 / m as f64).sin_cos()).collect();
    let dtheta = 2.0 * PI / m as f64;
    let map = |rho: f64, (sn, cs): (f64, f64)| -> [f64; 2] {
        let y = mul2(&s, [rho * cs, rho * sn]);
        [xbar[0] + y[0], xbar[1] + y[1]]
    };

    let d: f64 = gx
        .par_iter()
        .zip(&gw)
        .map(|(t, w)| {
            let rho = 0.5 * r * (t + 1.0);
            let ring: f64 = angles
                .iter()
                .map(|&a| {
                    let x = map(rho, a);
                    let (_, g) = u.interp(&x);
                    let ax = coeffs.a(&x);
                    dot2(g, mul2(&ax, g)) / det2(&ax).sqrt()
                })
                .sum();
            0.5 * r * w * rho * ring * dtheta * jac
        })
        .collect::<Vec<f64>>()
        .iter()
        .sum();

    let (i_sum, h_sum) = angles
        .par_iter()
        .map(|&(sn, cs)| {
            let x = map(r, (sn, cs));
            let tangent = mul2(&s, [-r * sn, r * cs]);
            let normal = [tangent[1], -tangent[0]];
            let (v, g) = u.interp(&x);
            let ax = coeffs.a(&x);
            let flux = dot2(mul2(&ax, g), normal) / det2(&ax).sqrt();
            let dx = [x[0] - xbar[0], x[1] - xbar[1]];
            let p = mul2(&abar_inv, dx);
            let eta = dot2(p, mul2(&ax, p)) / (r * r);
            let ds = (eta * dot2(tangent, mul2(&inv2(&ax), tangent))).sqrt();
            ((v - u0) * flux * dtheta, (v - u0).powi(2) * ds * dtheta)
        })
        .collect::<Vec<(f64, f64)>>()
        .iter()
        .fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));

    if h_sum <= 0.0 {
        return Err(Error::VanishingHeight);
    }
    Ok(GeneralizedFrequency {
        r,
        freq: r * i_sum / h_sum,
        i: i_sum,
        d,
        h: h_sum,
        discrepancy: (i_sum - d).abs() / d,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Monotonicity {
    pub lambda: f64,
    pub radii: Vec<f64>,
    pub freqs: Vec<f64>,
    /// Smallest `C >= 0` with `exp(C r) N(r)` nondecreasing on the radii.
    pub constant: f64,
    pub bound: f64,
}

impl Monotonicity {
    pub fn holds(&self) -> bool {
        self.constant <= self.bound
    }
}

pub fn almost_monotonicity_check(
    u: &GridField,
    coeffs: &CoefficientField,
    xbar: &[f64],
    radii: &[f64],
    cfg: &EllipticConfig,
) -> Result<Monotonicity> {
    let freqs: Vec<f64> = radii
        .iter()
        .map(|&r| generalized_frequency(u, coeffs, xbar, r, cfg).map(|g| g.freq))
        .collect::<Result<_>>()?;
    let constant = freqs
        .windows(2)
        .zip(radii.windows(2))
        .map(|(n, r)| (n[0] / n[1]).ln() / (r[1] - r[0]))
        .fold(0.0, f64::max);
    Ok(Monotonicity {
        lambda: coeffs.lambda,
        radii: radii.to_vec(),
        freqs,
        constant,
        bound: cfg.monotonicity_bound * coeffs.lambda + 1e-6,
    })
}

/// `(u - u(0)) / (avg_{dB_1} (u - u(0))^2)^{1/2}` on the same grid; needs `a(0) = I`.
pub fn normalized_tangent(u: &GridField, coeffs: &CoefficientField, cfg: &EllipticConfig) -> Result<GridField> {
    let a0 = coeffs.a(&[0.0, 0.0]);
    if (a0[0][0] - 1.0).abs() + a0[0][1].abs() + (a0[1][1] - 1.0).abs() > 1e-12 {
        return Err(Error::Precondition("tangent field needs a(0) = I".into()));
    }
    let u0 = u.interp(&[0.0, 0.0]).0;
    let m = cfg.boundary_nodes;
    let avg = (0..m)
        .map(|k| {
            let (s, c) = (2.0 * PI * k as f64 / m as f64).sin_cos();
            (u.interp(&[c, s]).0 - u0).powi(2)
        })
        .sum::<f64>()
        / m as f64;
    if avg <= 0.0 {
        return Err(Error::VanishingHeight);
    }
    let norm = avg.sqrt();
    Ok(GridField { grid: u.grid.clone(), values: u.values.iter().map(|v| (v - u0) / norm).collect() })
}

#[derive(Clone, Debug)]
pub struct HarmonicApprox {
    pub degree: u32,
    pub rho: f64,
    /// `Delta T` on the grid of `T`.
    pub f: GridField,
    pub w: GridField,
    pub h: GridField,
    pub w0: f64,
    /// Largest `|Delta h|` at nodes with `|x| < 1/2 - 2 spacing`.
    pub laplacian_residual: f64,
    /// `spacing^2 max |Delta^2 T|`, the size of the second-order truncation error.
    pub discretization_error: f64,
}

impl HarmonicApprox {
    pub fn harmonic_ok(&self) -> bool {
        self.laplacian_residual <= 10.0 * self.discretization_error + 1e-10
    }
}

/// `(1/h^2) * int over [-h/2, h/2]^2 of ln|z|`.
fn log_cell_mean(h: f64) -> f64 {
    (h / 2.0).ln() + 0.5 * 2f64.ln() + PI / 4.0 - 1.5
}

/// Splits `T = w + h` on `B(0, 1/2)` with `Delta w = Delta T`, `w(0) = 0`, and `h` harmonic.
///
/// `w` is the log-kernel potential of `f = Delta T` over the unit disc, recentred
/// so that `w(0) = 0`, plus the degree `1..=degree` harmonic correction built
/// from `int_{rho <= |y| <= 1} y^{-k} f(y) dy`.
pub fn harmonic_approximation(t: &GridField, degree: u32, rho: f64) -> Result<HarmonicApprox> {
    let hsp = t.spacing();
    let m = t.side();
    if t.half_width() < 1.0 - 1e-12 {
        return Err(Error::Precondition("tangent field must cover the unit disc".into()));
    }
    if degree as f64 > 0.125 / hsp {
        return Err(Error::InvalidArgument(format!("degree {degree} too large for grid spacing {hsp}")));
    }
    let f = t.laplacian();
    let cell = hsp * hsp;
    let sources: Vec<([f64; 2], f64)> = (1..m - 1)
        .flat_map(|j| (1..m - 1).map(move |i| (i, j)))
        .map(|(i, j)| (t.node(i, j), f.at(i, j)))
        .filter(|(y, v)| y[0].hypot(y[1]) <= 1.0 + 1e-12 && *v != 0.0)
        .collect();
    let self_term = log_cell_mean(hsp) / (2.0 * PI);
    let potential = |x: [f64; 2]| -> f64 {
        sources
            .iter()
            .map(|(y, v)| {
                let d = (x[0] - y[0]).hypot(x[1] - y[1]);
                let g = if d < 0.5 * hsp { self_term } else { d.ln() / (2.0 * PI) };
                g * v * cell
            })
            .sum()
    };
    let n0 = potential([0.0, 0.0]);
    let moments: Vec<Complex64> = (1..=degree)
        .map(|k| {
            sources
                .iter()
                .filter(|(y, _)| y[0].hypot(y[1]) >= rho)
                .map(|(y, v)| Complex64::new(y[0], y[1]).powi(-(k as i32)) * (v * cell))
                .sum()
        })
        .collect();

    let mh = ((0.5 / hsp).ceil() as usize + 4).min((m - 1) / 2);
    let sub = GridSpec { n: 2, origin: vec![-(mh as f64) * hsp; 2], spacing: hsp, extents: vec![2 * mh + 1; 2] };
    let offset = (m - 1) / 2 - mh;
    let w_vals: Vec<f64> = (0..sub.len())
        .into_par_iter()
        .map(|k| {
            let x = sub.point(k);
            let z = Complex64::new(x[0], x[1]);
            let corr: f64 = moments
                .iter()
                .enumerate()
                .map(|(i, c)| (z.powi(i as i32 + 1) * c).re / (i as f64 + 1.0))
                .sum();
            potential([x[0], x[1]]) - n0 + corr / (2.0 * PI)
        })
        .collect();
    let w = GridField { grid: sub.clone(), values: w_vals };
    let side = 2 * mh + 1;
    let t_sub: Vec<f64> = (0..sub.len()).map(|k| t.at(k % side + offset, k / side + offset)).collect();
    let h = GridField { grid: sub.clone(), values: t_sub.iter().zip(&w.values).map(|(a, b)| a - b).collect() };
    let w0 = w.values[mh + side * mh];

    let lh = h.laplacian();
    let lim = 0.5 - 2.0 * hsp;
    let mut residual: f64 = 0.0;
    for k in 0..sub.len() {
        let x = sub.point(k);
        if x[0].hypot(x[1]) < lim {
            residual = residual.max(lh.values[k].abs());
        }
    }
    let lf = f.laplacian();
    let mut bih: f64 = 0.0;
    for j in 2..m - 2 {
        for i in 2..m - 2 {
            let x = t.node(i, j);
            if x[0].hypot(x[1]) < 0.5 + 2.0 * hsp {
                bih = bih.max(lf.at(i, j).abs());
            }
        }
    }
    Ok(HarmonicApprox {
        degree,
        rho,
        f,
        w,
        h,
        w0,
        laplacian_residual: residual,
        discretization_error: hsp * hsp * bih,
    })
}

/// Largest `|w|` on dyadic annuli `2^{-k-1} <= |x| <= 2^{-k}`, `k = 1..`, down to `min_radius`.
pub fn annulus_maxima(w: &GridField, min_radius: f64) -> Vec<(f64, f64)> {
    let mut out = Vec::new();
    let mut outer: f64 = 0.5;
    while outer / 2.0 >= min_radius {
        let inner = outer / 2.0;
        let mut best: f64 = 0.0;
        for k in 0..w.values.len() {
            let x = w.grid.point(k);
            let r = x[0].hypot(x[1]);
            if r >= inner && r <= outer {
                best = best.max(w.values[k].abs());
            }
        }
        out.push((outer, best));
        outer = inner;
    }
    out
}

/// Least-squares slope of `ln max|w|` against `ln radius`.
pub fn decay_exponent(maxima: &[(f64, f64)]) -> f64 {
    let x: Vec<f64> = maxima.iter().map(|m| m.0.ln()).collect();
    let y: Vec<f64> = maxima.iter().map(|m| m.1.max(1e-300).ln()).collect();
    crate::geometry::linear_fit(&x, &y).0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransferRow {
    pub r: f64,
    pub freq_t: f64,
    pub freq_h: f64,
}

/// Generalized frequency of `T` against the classical frequency of `h` about the origin.
pub fn frequency_comparison(
    t: &GridField,
    coeffs: &CoefficientField,
    h: &GridField,
    radii: &[f64],
    cfg: &EllipticConfig,
) -> Result<Vec<TransferRow>> {
    let id = CoefficientField::identity();
    radii
        .iter()
        .map(|&r| {
            Ok(TransferRow {
                r,
                freq_t: generalized_frequency(t, coeffs, &[0.0, 0.0], r, cfg)?.freq,
                freq_h: generalized_frequency(h, &id, &[0.0, 0.0], r, cfg)?.freq,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PinchTransfer {
    pub r1: f64,
    pub delta: f64,
    pub freq_r1: f64,
    /// Frequency at `4 r1 / e^2`.
    pub freq_inner: f64,
    /// Whether `N(r1)` lies in `[d + delta, d + 1 - delta]` for an integer `d`.
    pub applicable: bool,
}

impl PinchTransfer {
    pub fn holds(&self) -> bool {
        !self.applicable || self.freq_inner <= self.freq_r1 - self.delta / 10.0
    }
}

/// Frequency strictly between integers drops by `delta/10` from `r1` to `4 r1 / e^2`.
pub fn pinching_transfer_check(
    u: &GridField,
    coeffs: &CoefficientField,
    r1: f64,
    delta: f64,
    cfg: &EllipticConfig,
) -> Result<PinchTransfer> {
    let n1 = generalized_frequency(u, coeffs, &[0.0, 0.0], r1, cfg)?.freq;
    let inner = 4.0 * r1 / std::f64::consts::E.powi(2);
    let n0 = generalized_frequency(u, coeffs, &[0.0, 0.0], inner, cfg)?.freq;
    let d = n1.floor();
    let applicable = n1 >= d + delta && n1 <= d + 1.0 - delta;
    Ok(PinchTransfer { r1, delta, freq_r1: n1, freq_inner: n0, applicable })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientBound {
    pub freq: f64,
    pub grad_sq: f64,
    pub bound: f64,
}

impl GradientBound {
    pub fn slack(&self) -> f64 {
        self.grad_sq - self.bound
    }

    pub fn holds(&self) -> bool {
        self.slack() >= 0.0
    }
}

/// `|grad T_{x, r1/8}(x)|^2` against `(n/2)(1 + delta)` when `N(x, r1) <= 3/2`.
pub fn gradient_lower_bound_check(
    u: &GridField,
    coeffs: &CoefficientField,
    x: &[f64],
    r1: f64,
    cfg: &EllipticConfig,
) -> Result<GradientBound> {
    let freq = generalized_frequency(u, coeffs, x, r1, cfg)?.freq;
    if freq > 1.5 {
        return Err(Error::Precondition(format!("N(x, r1) = {freq} exceeds 3/2")));
    }
    let s = r1 / 8.0;
    let q = sqrt2(&coeffs.a(x));
    let (u0, g) = u.interp(x);
    let m = cfg.boundary_nodes;
    let avg = (0..m)
        .map(|k| {
            let (sn, cs) = (2.0 * PI * k as f64 / m as f64).sin_cos();
            let y = mul2(&q, [s * cs, s * sn]);
            (u.interp(&[x[0] + y[0], x[1] + y[1]]).0 - u0).powi(2)
        })
        .sum::<f64>()
        / m as f64;
    if avg <= 0.0 {
        return Err(Error::VanishingHeight);
    }
    let gt = mul2(&q, g);
    let grad_sq = s * s * dot2(gt, gt) / avg;
    Ok(GradientBound { freq, grad_sq, bound: (1.0 + cfg.gradient_slack) })
}

#[derive(Clone, Debug)]
pub struct Projection {
    pub expansion: Expansion,
    /// Largest reconstruction error on `B(0, 1/4)` relative to the largest value there.
    pub residual: f64,
}

/// Projects a harmonic grid field onto `basis(2, k)`, `k <= degree`, using the
/// circle of radius 1/2 about the origin.
pub fn expansion_from_grid(h: &GridField, degree: u32, cfg: &EllipticConfig) -> Result<Projection> {
    let rad = 0.5;
    let m = cfg.boundary_nodes.max(4 * degree as usize + 8);
    let ring: Vec<([f64; 2], f64)> = (0..m)
        .map(|k| {
            let (s, c) = (2.0 * PI * k as f64 / m as f64).sin_cos();
            let x = [rad * c, rad * s];
            (x, h.interp(&x).0)
        })
        .collect();
    // Coefficients below this are quadrature noise.
    let floor = 1e-12 * ring.iter().fold(0.0f64, |a, (_, v)| a.max(v.abs()));
    let mut terms = Vec::new();
    for k in 0..=degree {
        let b = basis(2, k);
        let mut poly = crate::poly::ExactPoly::zero(2);
        for el in b.elements() {
            let fp = el.poly.to_float();
            let avg = ring.iter().map(|(x, v)| v * fp.eval(x)).sum::<f64>() / m as f64;
            let c = avg / (rad.powi(2 * k as i32) * crate::poly::to_f64(&el.norm_sq));
            if c.abs() * rad.powi(k as i32) > floor {
                poly = &poly + &el.poly.scale(&rational_of(c)?);
            }
        }
        if !poly.is_zero() {
            terms.push(Term { degree: k, coeff: Rational::from_integer(1.into()), poly });
        }
    }
    if terms.is_empty() {
        return Err(Error::ZeroPolynomial);
    }
    let expansion = Expansion::new(2, vec![Rational::from_integer(0.into()); 2], terms, Rational::from_integer(1.into()))?;
    let fe = FloatExpansion::new(&expansion);
    let (mut err, mut scale) = (0.0f64, 0.0f64);
    for k in 0..h.values.len() {
        let x = h.grid.point(k);
        if x[0].hypot(x[1]) <= 0.25 {
            err = err.max((fe.value(&x) - h.values[k]).abs());
            scale = scale.max(h.values[k].abs());
        }
    }
    let residual = if scale > 0.0 { err / scale } else { err };
    if residual > 1e-4 {
        return Err(Error::Numerical(format!("projection residual {residual:e} too large")));
    }
    Ok(Projection { expansion, residual })
}

/// `int_{B_t} T^2` by cell sums.
pub fn ball_l2_sq(t: &GridField, radius: f64) -> f64 {
    let cell = t.spacing().powi(2);
    (0..t.values.len())
        .filter(|&k| {
            let x = t.grid.point(k);
            x[0].hypot(x[1]) <= radius
        })
        .map(|k| t.values[k].powi(2) * cell)
        .sum()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GrowthRow {
    pub t: f64,
    pub lhs: f64,
    pub rhs: f64,
}

/// `int_{B_t} T^2 <= (|S^1| / 2)(1 + 2 delta) t^{2 + 2N - 2 delta}` at each `t`.
pub fn growth_estimate_check(tf: &GridField, freq: f64, delta: f64, radii: &[f64]) -> Vec<GrowthRow> {
    radii
        .iter()
        .map(|&t| GrowthRow {
            t,
            lhs: ball_l2_sq(tf, t),
            rhs: PI * (1.0 + 2.0 * delta) * t.powf(2.0 + 2.0 * freq - 2.0 * delta),
        })
        .collect()
}

/// `||Delta T||_{L^2(B_t)}` at each radius.
pub fn laplacian_l2(tf: &GridField, radii: &[f64]) -> Vec<(f64, f64)> {
    let f = tf.laplacian();
    radii.iter().map(|&t| (t, ball_l2_sq(&f, t).sqrt())).collect()
}
