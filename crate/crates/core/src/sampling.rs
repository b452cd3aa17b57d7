//! Deterministic point sets and quadrature rules.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand::Rng;

/// Roughly uniform points on the unit sphere `S^{n-1}`.
pub fn sphere_points(n: usize, count: usize) -> Vec<Vec<f64>> {
    let count = count.max(2);
    match n {
        1 => vec![vec![-1.0], vec![1.0]],
        2 => (0..count)
            .map(|k| {
                let t = std::f64::consts::TAU * (k as f64 + 0.5) / count as f64;
                vec![t.cos(), t.sin()]
            })
            .collect(),
        3 => {
            let golden = std::f64::consts::PI * (3.0 - 5f64.sqrt());
            (0..count)
                .map(|k| {
                    let z = 1.0 - 2.0 * (k as f64 + 0.5) / count as f64;
                    let s = (1.0 - z * z).sqrt();
                    let phi = golden * k as f64;
                    vec![s * phi.cos(), s * phi.sin(), z]
                })
                .collect()
        }
        _ => {
            let mut rng = ChaCha8Rng::seed_from_u64(0x5eed_0000 + n as u64);
            (0..count)
                .map(|_| loop {
                    let v: Vec<f64> = (0..n).map(|_| gaussian(&mut rng)).collect();
                    let r = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                    if r > 1e-12 {
                        break v.into_iter().map(|x| x / r).collect();
                    }
                })
                .collect()
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
}

/// Points of a cubic lattice inside the closed unit ball, at least `count`
/// of them, always containing the origin.
pub fn ball_points(n: usize, count: usize) -> Vec<Vec<f64>> {
    let vol = unit_ball_volume(n);
    let mut h = (vol / count.max(1) as f64).powf(1.0 / n as f64);
    loop {
        let pts = lattice_in_ball(n, h);
        if pts.len() >= count {
            return pts;
        }
        h *= 0.95;
    }
}

fn lattice_in_ball(n: usize, h: f64) -> Vec<Vec<f64>> {
    let m = (1.0 / h).floor() as i64;
    let mut out = Vec::new();
    let mut idx = vec![-m; n];
    loop {
        let p: Vec<f64> = idx.iter().map(|&i| i as f64 * h).collect();
        if p.iter().map(|x| x * x).sum::<f64>() <= 1.0 + 1e-12 {
            out.push(p);
        }
        let mut k = 0;
        loop {
            if k == n {
                return out;
            }
            idx[k] += 1;
            if idx[k] <= m {
                break;
            }
            idx[k] = -m;
            k += 1;
        }
    }
}

pub fn unit_ball_volume(n: usize) -> f64 {
    match n {
        0 => 1.0,
        1 => 2.0,
        _ => unit_ball_volume(n - 2) * std::f64::consts::TAU / n as f64,
    }
}

pub fn unit_sphere_area(n: usize) -> f64 {
    n as f64 * unit_ball_volume(n)
}

/// Gauss-Legendre nodes and weights on `[-1, 1]`.
pub fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    for i in 0..m.div_ceil(2) {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (m as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=m {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            if m == 1 {
                p0 = 1.0;
                p1 = z;
            }
            dp = m as f64 * (z * p1 - p0) / (z * z - 1.0);
            let dz = p1 / dp;
            z -= dz;
            if dz.abs() < 1e-15 {
                break;
            }
        }
        x[i] = -z;
        x[m - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[m - 1 - i] = w[i];
    }
    (x, w)
}

/// Product quadrature for the average over the unit sphere (n = 2 or 3).
pub fn sphere_quadrature(n: usize, resolution: usize) -> Option<Vec<(Vec<f64>, f64)>> {
    match n {
        2 => {
            let m = resolution.max(8);
            Some(
                (0..m)
                    .map(|k| {
                        let t = std::f64::consts::TAU * k as f64 / m as f64;
                        (vec![t.cos(), t.sin()], 1.0 / m as f64)
                    })
                    .collect(),
            )
        }
        3 => {
            let m = resolution.max(8);
            let (z, wz) = gauss_legendre(m);
            let nphi = 2 * m;
            let mut out = Vec::with_capacity(m * nphi);
            for (zi, wi) in z.iter().zip(&wz) {
                let s = (1.0 - zi * zi).sqrt();
                for k in 0..nphi {
                    let t = std::f64::consts::TAU * k as f64 / nphi as f64;
                    out.push((vec![s * t.cos(), s * t.sin(), *zi], wi / 2.0 / nphi as f64));
                }
            }
            Some(out)
        }
        _ => None,
    }
}
