use critset::config::GeometryConfig;
use critset::corpus::{dyadic, random_corpus, random_expansion, random_unit_hhp, rng, DEFAULT_RHO};
use critset::frequency::{Expansion, Term};
use critset::geometry::{
    critical_points_2d, critical_radius, d_critical_radius, effective_critical_set, effective_nodal_set,
    effective_set, frequency_inclusion_check, minkowski_volume, nodal_nondegeneracy_check, volume_exponent,
    volume_scan, ExpansionField, FieldEvaluator, GridSpec, SetKind, SetMask,
};
use critset::hhp::re_im_z_pow;
use critset::numeric::FloatPoly;
use critset::poly::{int, rat};
use critset::{ExactPoly, Rational};
use proptest::prelude::*;

fn planar(coeffs: &[(u32, Rational)]) -> Expansion {
    let terms = coeffs
        .iter()
        .map(|(k, a)| Term { degree: *k, coeff: a.clone(), poly: re_im_z_pow(*k).0 })
        .collect();
    Expansion::new(2, vec![int(0), int(0)], terms, rat(1, 2)).unwrap()
}

fn linear(n: usize) -> Expansion {
    Expansion::at_origin(&ExactPoly::var(n, 0)).unwrap()
}

fn cfg() -> GeometryConfig {
    GeometryConfig::default()
}

fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

#[test]
fn critical_radius_examples() {
    let c = cfg();
    let lin = ExpansionField::new(&linear(2));
    for x in [[0.0, 0.0], [0.3, -0.1]] {
        assert_eq!(critical_radius(&lin, &x, 0.5, 1e-4).unwrap(), 0.5);
    }
    let q = ExpansionField::new(&planar(&[(2, int(1))]));
    assert_eq!(critical_radius(&q, &[0.0, 0.0], 0.5, 1e-4).unwrap(), 0.0);
    // a1 = 1, a2 = 2: (1 + 8 s^2) / (1 + 4 s^2) = 3/2 at s = 1/2.
    let f = ExpansionField::new(&planar(&[(1, int(1)), (2, int(2))]));
    let rc = critical_radius(&f, &[0.0, 0.0], 1.0, c.radius_rel_tol).unwrap();
    assert!((rc - 0.5).abs() <= 0.5 * 2e-4, "{rc}");
}

#[test]
fn d_critical_radius_examples() {
    for d in 1..=4 {
        let f = ExpansionField::new(&planar(&[(d, int(1))]));
        assert_eq!(d_critical_radius(&f, &[0.0, 0.0], d, 0.5, 0.5, 200, 1e-4).unwrap(), 0.5);
    }
    let lin = ExpansionField::new(&linear(3));
    assert_eq!(d_critical_radius(&lin, &[0.1, 0.0, 0.0], 1, 0.5, 0.5, 300, 1e-4).unwrap(), 0.5);
    // N(0,s) = d + s^2/(1+s^2) crosses d + eps0 at s^2 = eps0 / (1 - eps0).
    for d in 1..=3 {
        let eps0 = 0.25;
        let f = ExpansionField::new(&planar(&[(d, int(1)), (d + 1, int(1))]));
        let rd = d_critical_radius(&f, &[0.0, 0.0], d, eps0, 1.0, 200, 1e-5).unwrap();
        let closed = (eps0 / (1.0 - eps0)).sqrt();
        assert!(rd > 0.0 && rd <= closed * (1.0 + 1e-4), "d={d}: {rd} vs {closed}");
    }
}

// Re z^2: inf_{B_r} |grad u|^2 = 4 (|z| - r)_+^2 against |z|^2 + r^2.
fn quadratic_oracle(x: &[f64], r: f64) -> f64 {
    let rho = norm(x);
    (rho * rho + r * r) - 4.0 * (rho - r).max(0.0).powi(2)
}

#[test]
fn effective_critical_set_examples() {
    let c = cfg();
    for n in [2, 3] {
        let f = ExpansionField::new(&linear(n));
        for r in [1.0 / 16.0, 1.0 / 64.0] {
            let g = GridSpec::for_ball(n, c.domain_radius, r / 4.0);
            assert_eq!(effective_critical_set(&f, r, &g, &c).unwrap().count(), 0);
        }
    }
    let f = ExpansionField::new(&planar(&[(2, int(1))]));
    let r = 1.0 / 16.0;
    let g = GridSpec::for_ball(2, c.domain_radius, r / 4.0);
    let mask = effective_critical_set(&f, r, &g, &c).unwrap();
    assert!(mask.count() > 0);
    let mut disagreements = 0;
    for lin in 0..g.len() {
        let x = g.point(lin);
        if norm(&x) > c.domain_radius {
            continue;
        }
        let margin = quadratic_oracle(&x, r);
        if margin.abs() < 1e-3 * r * r {
            continue;
        }
        if (margin > 0.0) != mask.bits[lin] {
            disagreements += 1;
        }
    }
    assert_eq!(disagreements, 0);
    let origin = g.linear(&[g.extents[0] / 2, g.extents[1] / 2]);
    assert!(mask.bits[origin]);
}

#[test]
fn critical_points_lie_in_effective_set() {
    let c = cfg();
    let r = 1.0 / 16.0;
    let g = GridSpec::for_ball(2, c.domain_radius, r / 4.0);
    for e in random_corpus(5, 8, &[2], 6, 1.5) {
        let f = ExpansionField::new(&e);
        let mask = effective_critical_set(&f, r, &g, &c).unwrap();
        for p in critical_points_2d(&e, Some(0.45), 1e-6).unwrap() {
            let near = (0..g.len()).filter(|&lin| norm(&sub(&g.point(lin), &p.x)) <= g.spacing).collect::<Vec<_>>();
            assert!(!near.is_empty());
            assert!(near.iter().all(|&lin| mask.bits[lin]), "critical point {:?} outside the effective set", p.x);
        }
    }
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

#[test]
fn effective_nodal_set_examples() {
    let c = cfg();
    let one = Expansion::at_origin(&ExactPoly::constant(2, int(1))).unwrap();
    let r = 1.0 / 16.0;
    let g = GridSpec::for_ball(2, c.domain_radius, r / 4.0);
    assert_eq!(effective_nodal_set(&ExpansionField::new(&one), r, &g, &c).unwrap().count(), 0);
    // u = x1: (|t| - r)_+^2 < (t^2 + 2 r^2) / 16.
    let mask = effective_nodal_set(&ExpansionField::new(&linear(2)), r, &g, &c).unwrap();
    for lin in 0..g.len() {
        let x = g.point(lin);
        if norm(&x) > c.domain_radius {
            continue;
        }
        let t = x[0].abs();
        let margin = (t * t + 2.0 * r * r) / 16.0 - (t - r).max(0.0).powi(2);
        if margin.abs() < 1e-3 * r * r {
            continue;
        }
        assert_eq!(margin > 0.0, mask.bits[lin], "{x:?}");
    }
}

#[test]
fn minkowski_examples() {
    let r = 0.05;
    let g = GridSpec::for_ball(2, 0.5, r / 16.0);
    let mut mask = SetMask { grid: g.clone(), r, domain_radius: 0.5, bits: vec![false; g.len()] };
    assert_eq!(minkowski_volume(&mask, r), 0.0);
    let origin = g.linear(&[g.extents[0] / 2, g.extents[1] / 2]);
    mask.bits[origin] = true;
    let v = minkowski_volume(&mask, r);
    assert!((v / (std::f64::consts::PI * r * r) - 1.0).abs() < 0.03, "{v}");
}

#[test]
fn quadratic_volume_is_stable_and_refines() {
    let c = cfg();
    let f = ExpansionField::new(&planar(&[(2, int(1))]));
    let radii: Vec<f64> = (4..=8).map(|k| 2f64.powi(-k)).collect();
    let rows = volume_scan(&f, SetKind::Critical, "re-z2", &radii, &c).unwrap();
    let ratios: Vec<f64> = rows.iter().map(|r| r.volume / (r.r * r.r)).collect();
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(a, b), &x| (a.min(x), b.max(x)));
    assert!(hi / lo < 2.0, "{ratios:?}");
    assert!((volume_exponent(&rows) - 2.0).abs() <= 0.3);
    for &r in &[1.0 / 16.0, 1.0 / 32.0] {
        let coarse = GridSpec::for_ball(2, c.domain_radius, r / 4.0);
        let fine = GridSpec::for_ball(2, c.domain_radius, r / 8.0);
        let a = minkowski_volume(&effective_critical_set(&f, r, &coarse, &c).unwrap(), r);
        let b = minkowski_volume(&effective_critical_set(&f, r, &fine, &c).unwrap(), r);
        assert!((a - b).abs() / b < 0.05, "r={r}: {a} vs {b}");
    }
}

#[test]
fn effective_sets_grow_with_r() {
    let c = cfg();
    let r = 1.0 / 32.0;
    let g = GridSpec::for_ball(2, c.domain_radius, r / 4.0);
    for e in random_corpus(6, 6, &[2], 5, DEFAULT_RHO) {
        let f = ExpansionField::new(&e);
        let small = effective_critical_set(&f, r, &g, &c).unwrap();
        let large = effective_critical_set(&f, 2.0 * r, &g, &c).unwrap();
        let missing = small.bits.iter().zip(&large.bits).filter(|(a, b)| **a && !**b).count();
        assert_eq!(missing, 0);
    }
}

// Newton on grad u from a lattice of starts, with derivatives taken from the exact polynomial.
fn newton_oracle(e: &Expansion, half: f64, starts: usize) -> Vec<[f64; 2]> {
    let p = e.polynomial();
    let gx = p.partial(0).to_float();
    let gy = p.partial(1).to_float();
    let (hxx, hxy, hyy): (FloatPoly, FloatPoly, FloatPoly) =
        (p.partial(0).partial(0).to_float(), p.partial(0).partial(1).to_float(), p.partial(1).partial(1).to_float());
    let mut roots: Vec<[f64; 2]> = Vec::new();
    for i in 0..starts {
        for j in 0..starts {
            let mut z = [
                -half + 2.0 * half * (i as f64 + 0.5) / starts as f64,
                -half + 2.0 * half * (j as f64 + 0.5) / starts as f64,
            ];
            let mut ok = false;
            for _ in 0..60 {
                let (a, b) = (gx.eval(&z), gy.eval(&z));
                let (m11, m12, m22) = (hxx.eval(&z), hxy.eval(&z), hyy.eval(&z));
                let det = m11 * m22 - m12 * m12;
                if det.abs() < 1e-300 {
                    break;
                }
                let dx = (m22 * a - m12 * b) / det;
                let dy = (m11 * b - m12 * a) / det;
                z = [z[0] - dx, z[1] - dy];
                if dx.hypot(dy) < 1e-14 {
                    ok = true;
                    break;
                }
            }
            if ok && norm(&z) < 10.0 && !roots.iter().any(|w| (w[0] - z[0]).hypot(w[1] - z[1]) < 1e-7) {
                roots.push(z);
            }
        }
    }
    roots
}

#[test]
fn critical_point_examples() {
    let (re3, _) = re_im_z_pow(3);
    let (re1, _) = re_im_z_pow(1);
    let u = &re3 - &re1.scale(&int(3));
    let pts = critical_points_2d(&Expansion::at_origin(&u).unwrap(), None, 1e-6).unwrap();
    assert_eq!(pts.len(), 2);
    assert!((pts[0].x[0] + 1.0).abs() < 1e-12 && pts[0].x[1].abs() < 1e-12);
    assert!((pts[1].x[0] - 1.0).abs() < 1e-12 && pts[1].x[1].abs() < 1e-12);
    for d in 2..=7 {
        let pts = critical_points_2d(&planar(&[(d, int(1))]), None, 1e-6).unwrap();
        assert_eq!(pts.len(), 1);
        assert_eq!(pts[0].multiplicity, d as usize - 1);
        assert!(norm(&pts[0].x) < 1e-6);
    }
    assert!(critical_points_2d(&linear(3), None, 1e-6).is_err());
}

#[test]
fn critical_points_match_newton_scan() {
    let mut r = rng(77);
    for case in 0..20 {
        let d = 2 + case % 7;
        let e = random_expansion(2, d, 1.0, &mut r);
        let pts = critical_points_2d(&e, None, 1e-9).unwrap();
        let total: usize = pts.iter().map(|p| p.multiplicity).sum();
        assert!(total <= d as usize - 1);
        let inside: Vec<&critset::geometry::CriticalPoint> = pts.iter().filter(|p| norm(&p.x) < 0.5).collect();
        let oracle: Vec<[f64; 2]> = newton_oracle(&e, 0.6, 60).into_iter().filter(|z| norm(z) < 0.5).collect();
        let skip = |z: &[f64]| (norm(z) - 0.5).abs() < 1e-3;
        for p in &inside {
            if skip(&p.x) {
                continue;
            }
            assert!(oracle.iter().any(|z| (z[0] - p.x[0]).hypot(z[1] - p.x[1]) < 1e-6), "case {case}: {:?}", p.x);
        }
        for z in &oracle {
            if skip(z) {
                continue;
            }
            assert!(inside.iter().any(|p| (z[0] - p.x[0]).hypot(z[1] - p.x[1]) < 1e-6), "case {case}: {z:?}");
        }
    }
}

#[test]
fn inclusion_examples() {
    let c = cfg();
    let r = 1.0 / 16.0;
    let g = GridSpec::for_ball(2, c.domain_radius, r / 4.0);
    let lin = ExpansionField::new(&linear(2));
    let mask = effective_critical_set(&lin, r, &g, &c).unwrap();
    assert_eq!(frequency_inclusion_check(&lin, &mask, 1.0, &c).unwrap().checked, 0);
    let q = ExpansionField::new(&planar(&[(2, int(1))]));
    let mask = effective_critical_set(&q, r, &g, &c).unwrap();
    let rep = frequency_inclusion_check(&q, &mask, 1.0, &c).unwrap();
    assert!(rep.checked > 0 && rep.max_ratio <= 8.0, "{}", rep.max_ratio);

    let mut worst: f64 = 0.0;
    for e in random_corpus(12, 20, &[2], 6, 1.2) {
        let f = ExpansionField::new(&e);
        for r in [1.0 / 16.0, 1.0 / 64.0] {
            let g = GridSpec::for_ball(2, c.domain_radius, r / 4.0);
            let mask = effective_critical_set(&f, r, &g, &c).unwrap();
            let rep = frequency_inclusion_check(&f, &mask, 8.0, &c).unwrap();
            worst = worst.max(rep.max_ratio);
        }
    }
    assert!(worst <= 8.0, "{worst}");
}

#[test]
fn nodal_nondegeneracy_examples() {
    // n = 4 makes sqrt(n) rational: |2 x1| = 1.
    let x1 = ExactPoly::var(4, 0);
    let one = ExactPoly::constant(4, int(1));
    let e = Expansion::new(
        4,
        vec![int(0); 4],
        vec![
            Term { degree: 0, coeff: int(1), poly: one.clone() },
            Term { degree: 1, coeff: rat(1, 5), poly: x1.clone() },
        ],
        int(1),
    )
    .unwrap();
    let c = nodal_nondegeneracy_check(&e, 0.1, 1e-2, 1000).unwrap();
    assert_eq!(c.value_bound, Some(true));
    assert!(c.holds());

    let plane = Expansion::new(4, vec![int(0); 4], vec![Term { degree: 1, coeff: int(2), poly: x1.clone() }], int(1))
        .unwrap();
    let c = nodal_nondegeneracy_check(&plane, 1e-6, 1e-2, 4000).unwrap();
    assert!(c.pinched && c.sampled > 0 && c.sign_violations == 0);

    let p2 = random_unit_hhp(4, 2, &mut rng(8));
    let pert = Expansion::new(
        4,
        vec![int(0); 4],
        vec![Term { degree: 1, coeff: int(2), poly: x1 }, Term { degree: 2, coeff: dyadic(0.01), poly: p2 }],
        int(1),
    )
    .unwrap();
    let c = nodal_nondegeneracy_check(&pert, 0.3, 2e-2, 4000).unwrap();
    assert!(c.pinched && c.sign_violations == 0, "{c:?}");
}

#[test]
fn mask_json_schema() {
    let c = cfg();
    let f = ExpansionField::new(&planar(&[(2, int(1))]));
    let r = 1.0 / 8.0;
    let g = GridSpec::for_ball(2, c.domain_radius, r / 4.0);
    let mask = effective_set(&f, SetKind::Singular, r, &g, &c).unwrap();
    let v = serde_json::to_value(mask.to_json()).unwrap();
    for k in ["spacing", "origin", "extents", "bitset"] {
        assert!(v.get(k).is_some(), "{k}");
    }
    assert_eq!(SetMask::from_json(&mask.to_json()).unwrap(), mask);
}

#[test]
fn gradient_is_consistent_with_values() {
    for e in random_corpus(19, 10, &[2, 3], 6, DEFAULT_RHO) {
        let f = ExpansionField::new(&e);
        let x = vec![0.13; e.n()];
        let g = f.gradient(&x);
        let h = 1e-6;
        for i in 0..e.n() {
            let mut a = x.clone();
            let mut b = x.clone();
            a[i] += h;
            b[i] -= h;
            let fd = (f.value(&a) - f.value(&b)) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-6 * g.iter().map(|v| v.abs()).fold(1.0, f64::max));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn critical_radius_scales_under_blow_up(seed in 0u64..5000, xi in -8i64..8, s in 2i64..8) {
        let e = random_expansion(2, 5, 1.2, &mut rng(seed));
        let x = [rat(xi, 64), rat(3, 64)];
        let xf = [xi as f64 / 64.0, 3.0 / 64.0];
        let sq = rat(s, 16);
        let sf = s as f64 / 16.0;
        let t = e.tangent_map(&x, &sq).unwrap();
        let base = critical_radius(&ExpansionField::new(&e), &xf, 0.25, 1e-6).unwrap();
        let blown = critical_radius(&ExpansionField::new(&t), &[0.0, 0.0], 0.25 / sf, 1e-6).unwrap();
        prop_assert!((blown - base / sf).abs() <= 1e-5 * (base / sf).max(1e-12), "{} vs {}", blown, base / sf);
    }
}
