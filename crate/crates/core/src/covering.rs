//! Degree-descending covering of the frequency singular set
//! `S_r = {x : N(x, r) >= 3/2}` by balls, with codimension-two mass accounting.
//!
//! The target set is sampled on a grid of spacing `r/4`. Every ball the
//! algorithm emits either has radius `r` (terminal) or has been checked to be
//! a good scale ball for the next lower degree; a ball that fails the check is
//! cut into smaller balls, and a ball is discarded only when it contains no
//! target point. Coverage of the sample is therefore exact by construction and
//! is re-verified at the end.

use std::cmp::Ordering;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::CoveringConfig;
use crate::error::{Error, Result};
use crate::geometry::{critical_radius, frequency_set, FieldEvaluator, FreqCurve, GridSpec};
use crate::sampling::ball_points;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BallStatus {
    GoodScale,
    TerminalR,
    BadSet,
    /// Contains no target point and was dropped.
    Excluded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScaleBall {
    pub center: Vec<f64>,
    pub radius: f64,
    pub degree: u32,
    pub status: BallStatus,
}

impl ScaleBall {
    fn contains(&self, y: &[f64]) -> bool {
        dist(&self.center, y) <= self.radius * (1.0 + 1e-12)
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// `N(y, t) <= d + eps` for every sampled `y` in `B(x, t)`.
pub fn is_good_scale(f: &dyn FieldEvaluator, x: &[f64], t: f64, d: u32, eps: f64, samples: usize) -> Result<bool> {
    let pts = ball_points(f.dim(), samples);
    let bad = pts.par_iter().map(|p| -> Result<bool> {
        let y: Vec<f64> = x.iter().zip(p).map(|(a, b)| a + t * b).collect();
        let v = FreqCurve::new(f, &y).at(t).ok_or(Error::VanishingHeight)?;
        Ok(v > d as f64 + eps)
    });
    let flags: Vec<bool> = bad.collect::<Result<_>>()?;
    Ok(!flags.into_iter().any(|b| b))
}

/// `(r'_x, r_x)` with `r'_x = inf {s <= cap : N(x, s) >= d - eps}`, set to `cap`
/// when the frequency stays below `d - eps` up to `cap`, and `r_x = max(r'_x, r)`.
pub fn r_prime(f: &dyn FieldEvaluator, x: &[f64], d: u32, eps: f64, r: f64, cap: f64) -> Result<(f64, f64)> {
    let c = FreqCurve::new(f, x);
    let level = d as f64 - eps;
    let at = |s: f64| c.at(s).ok_or(Error::VanishingHeight);
    if at(cap)? < level {
        return Ok((cap, cap.max(r)));
    }
    if at(r)? >= level {
        let rp = if at(r * 1e-9)? >= level { 0.0 } else { bisect(&at, level, r * 1e-9, r)? };
        return Ok((rp, r));
    }
    let rp = bisect(&at, level, r, cap)?;
    Ok((rp, rp.max(r)))
}

/// Smallest `s` in `[lo, hi]` with `g(s) >= level`, given `g(lo) < level <= g(hi)`.
fn bisect(g: &dyn Fn(f64) -> Result<f64>, level: f64, mut lo: f64, mut hi: f64) -> Result<f64> {
    while hi - lo > 1e-6 * hi {
        let mid = 0.5 * (lo + hi);
        if g(mid)? >= level {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(hi)
}

/// Splits sample indices into good and bad points: `y` is good when every
/// sampled `z` in `B(y, 5 r_y)` has `r_z >= r_y / 7`.
pub fn partition_good_bad(points: &[Vec<f64>], radii: &[f64], cfg: &CoveringConfig) -> (Vec<usize>, Vec<usize>) {
    let good: Vec<bool> = (0..points.len())
        .into_par_iter()
        .map(|i| {
            let reach = cfg.neighbourhood_factor * radii[i];
            (0..points.len()).all(|j| dist(&points[i], &points[j]) >= reach || radii[j] >= radii[i] / cfg.good_ratio)
        })
        .collect();
    let (g, b): (Vec<usize>, Vec<usize>) = (0..points.len()).partition(|&i| good[i]);
    (g, b)
}

/// Greedy disjoint subfamily: balls by descending radius, ties by centre in
/// lexicographic order; returns indices of kept balls.
pub fn vitali(balls: &[(Vec<f64>, f64)]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..balls.len()).collect();
    order.sort_by(|&a, &b| {
        balls[b].1.total_cmp(&balls[a].1).then_with(|| lex(&balls[a].0, &balls[b].0))
    });
    let mut kept: Vec<usize> = Vec::new();
    for i in order {
        if kept.iter().all(|&k| dist(&balls[i].0, &balls[k].0) >= balls[i].1 + balls[k].1) {
            kept.push(i);
        }
    }
    kept
}

fn lex(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match x.total_cmp(y) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

/// Balls of radius `r` about a maximal `r`-separated subset of `points`.
fn terminal_net(points: &[Vec<f64>], r: f64, degree: u32) -> Vec<ScaleBall> {
    let balls: Vec<(Vec<f64>, f64)> = points.iter().map(|p| (p.clone(), r / 2.0)).collect();
    let mut kept = vitali(&balls);
    kept.sort_unstable();
    kept.into_iter()
        .map(|i| ScaleBall { center: points[i].clone(), radius: r, degree, status: BallStatus::TerminalR })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub members: usize,
    /// Largest distance to the best fitting `(n-2)`-plane over the family's diameter.
    pub max_offset_ratio: f64,
    pub aligned: bool,
}

/// Least-squares `(n-2)`-plane through the centres and the worst relative offset.
pub fn alignment(centers: &[Vec<f64>], tau: f64) -> Alignment {
    let m = centers.len();
    let n = centers.first().map_or(0, |c| c.len());
    let mut diam: f64 = 0.0;
    for i in 0..m {
        for j in i + 1..m {
            diam = diam.max(dist(&centers[i], &centers[j]));
        }
    }
    if m < 2 || n < 3 || diam == 0.0 {
        return Alignment { members: m, max_offset_ratio: 0.0, aligned: true };
    }
    let mean: Vec<f64> = (0..n).map(|k| centers.iter().map(|c| c[k]).sum::<f64>() / m as f64).collect();
    let a = DMatrix::from_fn(m, n, |i, k| centers[i][k] - mean[k]);
    let cov = a.transpose() * &a;
    let eig = cov.symmetric_eigen();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let normal: Vec<usize> = idx[..2].to_vec();
    let worst = (0..m)
        .map(|i| {
            normal
                .iter()
                .map(|&c| {
                    let v = eig.eigenvectors.column(c);
                    (0..n).map(|k| (centers[i][k] - mean[k]) * v[k]).sum::<f64>().powi(2)
                })
                .sum::<f64>()
                .sqrt()
        })
        .fold(0.0, f64::max);
    let ratio = worst / diam;
    Alignment { members: m, max_offset_ratio: ratio, aligned: ratio <= tau }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StepDiagnostics {
    pub alignments: Vec<Alignment>,
    /// Smallest `r_c(z) / r` over targets left outside the main balls of a step;
    /// shrinking `r` below this factor would remove them from the target set.
    pub required_shrink: Option<f64>,
    pub subdivisions: usize,
}

impl StepDiagnostics {
    fn merge(&mut self, other: StepDiagnostics) {
        self.alignments.extend(other.alignments);
        self.required_shrink = match (self.required_shrink, other.required_shrink) {
            (Some(a), Some(b)) => Some(a.min(b)),
            (a, b) => a.or(b),
        };
        self.subdivisions += other.subdivisions;
    }
}

struct Ctx<'a> {
    f: &'a dyn FieldEvaluator,
    cfg: &'a CoveringConfig,
    r: f64,
    samples: usize,
}

impl Ctx<'_> {
    fn targets_in(&self, ball: &ScaleBall, targets: &[Vec<f64>]) -> Vec<Vec<f64>> {
        targets.iter().filter(|y| ball.contains(y)).cloned().collect()
    }

    /// Makes `ball` (holding `targets`) good at `degree`, cutting it into
    /// half-radius cells until each piece is good or has radius at most `r`.
    fn certify(
        &self,
        ball: ScaleBall,
        targets: Vec<Vec<f64>>,
        degree: u32,
        diag: &mut StepDiagnostics,
    ) -> Result<Vec<ScaleBall>> {
        if targets.is_empty() {
            return Ok(vec![]);
        }
        if ball.radius <= self.r * (1.0 + 1e-9) {
            return Ok(terminal_net(&targets, self.r, degree));
        }
        if is_good_scale(self.f, &ball.center, ball.radius, degree, self.cfg.eps, self.samples)? {
            return Ok(vec![ScaleBall { degree, ..ball }]);
        }
        diag.subdivisions += 1;
        let n = ball.center.len();
        let h = ball.radius / (n as f64).sqrt();
        let mut cells: Vec<(Vec<i64>, Vec<Vec<f64>>)> = Vec::new();
        for y in targets {
            let key: Vec<i64> = y.iter().zip(&ball.center).map(|(a, c)| ((a - c) / h).round() as i64).collect();
            match cells.iter_mut().find(|(k, _)| *k == key) {
                Some((_, v)) => v.push(y),
                None => cells.push((key, vec![y])),
            }
        }
        cells.sort_by(|a, b| a.0.cmp(&b.0));
        let mut out = Vec::new();
        for (key, pts) in cells {
            let center: Vec<f64> = key.iter().zip(&ball.center).map(|(&k, c)| c + k as f64 * h).collect();
            let child = ScaleBall { center, radius: ball.radius / 2.0, degree, status: ball.status };
            out.extend(self.certify(child, pts, degree, diag)?);
        }
        Ok(out)
    }

    /// One covering step on a good scale ball of degree `d >= 2`.
    fn cover_good_scale(&self, ball: &ScaleBall, targets: &[Vec<f64>]) -> Result<(Vec<ScaleBall>, StepDiagnostics)> {
        let mut diag = StepDiagnostics::default();
        let d = ball.degree;
        let pts = self.targets_in(ball, targets);
        if pts.is_empty() {
            return Ok((vec![], diag));
        }
        if ball.radius <= self.r * (1.0 + 1e-9) {
            return Ok((terminal_net(&pts, self.r, d - 1), diag));
        }
        let t = ball.radius;
        let radii: Vec<f64> = pts
            .par_iter()
            .map(|y| r_prime(self.f, y, d, self.cfg.eps, self.r, t).map(|p| p.1))
            .collect::<Result<_>>()?;

        // Output candidates: (centre, radius, status, held targets).
        let mut candidates: Vec<(Vec<f64>, f64, BallStatus)> = Vec::new();
        let leftover: Vec<usize>;

        if self.f.dim() == 2 && self.cfg.planar_single_ball {
            let best = (0..pts.len())
                .min_by(|&a, &b| radii[a].total_cmp(&radii[b]).then_with(|| lex(&pts[a], &pts[b])))
                .unwrap();
            let enclosing = pts.iter().map(|y| dist(y, &pts[best])).fold(0.0, f64::max);
            leftover = (0..pts.len()).filter(|&i| dist(&pts[i], &pts[best]) > radii[best]).collect();
            candidates.push((pts[best].clone(), radii[best].max(enclosing), BallStatus::GoodScale));
        } else {
            let (good, bad) = partition_good_bad(&pts, &radii, self.cfg);
            let family: Vec<(Vec<f64>, f64)> = good.iter().map(|&i| (pts[i].clone(), radii[i])).collect();
            let kept: Vec<usize> = vitali(&family).into_iter().map(|k| good[k]).collect();
            let dil = self.cfg.vitali_dilation;
            for &i in &kept {
                candidates.push((pts[i].clone(), dil * radii[i], BallStatus::GoodScale));
            }
            leftover = (0..pts.len())
                .filter(|&i| kept.iter().all(|&k| dist(&pts[i], &pts[k]) > dil * radii[k]))
                .collect();

            let split = t / (std::f64::consts::E.powi(3) * d as f64);
            let small: Vec<usize> = kept.iter().copied().filter(|&i| radii[i] < split).collect();
            for fam in clusters(&small, &pts, split) {
                let centers: Vec<Vec<f64>> = fam.iter().map(|&i| pts[i].clone()).collect();
                diag.alignments.push(alignment(&centers, self.cfg.tau));
            }

            if !bad.is_empty() {
                let bad_balls: Vec<(Vec<f64>, f64)> = bad
                    .iter()
                    .map(|&y| {
                        let m = kept.iter().map(|&k| dist(&pts[y], &pts[k])).fold(f64::INFINITY, f64::min);
                        (pts[y].clone(), (m / self.cfg.bad_divisor).clamp(self.r, radii[y]))
                    })
                    .collect();
                for k in vitali(&bad_balls) {
                    candidates.push((bad_balls[k].0.clone(), dil * bad_balls[k].1, BallStatus::BadSet));
                }
            }
        }

        if !leftover.is_empty() {
            let shrink = leftover
                .par_iter()
                .map(|&i| critical_radius(self.f, &pts[i], self.r, 1e-4).map(|rc| rc / self.r))
                .collect::<Result<Vec<f64>>>()?
                .into_iter()
                .fold(f64::INFINITY, f64::min);
            diag.required_shrink = Some(shrink);
        }

        // Assign each target to the first candidate holding it; clip candidates to the input ball.
        let mut held: Vec<Vec<Vec<f64>>> = vec![Vec::new(); candidates.len()];
        for y in &pts {
            let slot = candidates
                .iter()
                .position(|(c, s, _)| dist(c, y) <= *s * (1.0 + 1e-12))
                .expect("candidates cover every target");
            held[slot].push(y.clone());
        }
        let mut out = Vec::new();
        for ((c, s, status), ys) in candidates.into_iter().zip(held) {
            let (center, radius) = if s >= t + dist(&c, &ball.center) { (ball.center.clone(), t) } else { (c, s) };
            let cand = ScaleBall { center, radius: radius.max(self.r), degree: d - 1, status };
            out.extend(self.certify(cand, ys, d - 1, &mut diag)?);
        }
        Ok((out, diag))
    }
}

/// Groups indices into families of diameter at most `size` (greedy, in index order).
fn clusters(idx: &[usize], pts: &[Vec<f64>], size: f64) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    for &i in idx {
        match out.iter_mut().find(|fam| fam.iter().all(|&j| dist(&pts[i], &pts[j]) <= size)) {
            Some(fam) => fam.push(i),
            None => out.push(vec![i]),
        }
    }
    out
}

/// One proposition step: covers the targets of a good scale ball by terminal
/// balls and balls that are good at degree `d - 1`.
pub fn cover_good_scale(
    f: &dyn FieldEvaluator,
    ball: &ScaleBall,
    r: f64,
    targets: &[Vec<f64>],
    cfg: &CoveringConfig,
) -> Result<(Vec<ScaleBall>, StepDiagnostics)> {
    if ball.degree < 2 {
        return Err(Error::Precondition("covering step needs degree at least 2".into()));
    }
    let ctx = Ctx { f, cfg, r, samples: cfg.good_scale_samples(f.dim()) };
    ctx.cover_good_scale(ball, targets)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Level {
    pub degree: u32,
    pub balls: Vec<ScaleBall>,
    /// `sum radius^(n-2)` over the level's balls.
    pub mass: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoverReport {
    pub center: Vec<f64>,
    pub radius: f64,
    pub r: f64,
    pub lambda: f64,
    /// Largest sampled `N(y, radius)` over the input ball.
    pub observed_lambda: f64,
    pub d_star: u32,
    pub levels: Vec<Level>,
    pub masses: Vec<f64>,
    pub terminal: Vec<ScaleBall>,
    pub terminal_count: usize,
    pub targets: usize,
    pub escapes: usize,
    pub diagnostics: StepDiagnostics,
}

impl CoverReport {
    /// Largest ratio of consecutive level masses.
    pub fn max_mass_ratio(&self) -> f64 {
        self.masses.windows(2).filter(|w| w[0] > 0.0).map(|w| w[1] / w[0]).fold(0.0, f64::max)
    }

    pub fn sound(&self) -> bool {
        self.escapes == 0
    }

    /// Every non-terminal ball on level `j` carries degree `d* - j`.
    pub fn degrees_descend(&self) -> bool {
        self.levels.iter().enumerate().all(|(j, l)| {
            l.balls
                .iter()
                .filter(|b| b.status != BallStatus::TerminalR)
                .all(|b| b.degree + j as u32 == self.d_star)
        })
    }
}

fn mass(balls: &[ScaleBall], n: usize) -> f64 {
    balls.iter().fold(0.0, |m, b| m + b.radius.powi(n as i32 - 2))
}

/// Greedy set cover: keeps terminal balls while they still cover an uncovered target.
fn prune_terminal(balls: Vec<ScaleBall>, targets: &[Vec<f64>]) -> Vec<ScaleBall> {
    let holds: Vec<Vec<usize>> = balls
        .par_iter()
        .map(|b| (0..targets.len()).filter(|&i| b.contains(&targets[i])).collect())
        .collect();
    let mut covered = vec![false; targets.len()];
    let mut alive: Vec<usize> = (0..balls.len()).filter(|&i| !holds[i].is_empty()).collect();
    let mut kept = Vec::new();
    loop {
        let gain = |i: usize| holds[i].iter().filter(|&&t| !covered[t]).count();
        let Some((pos, best)) = alive
            .iter()
            .enumerate()
            .map(|(p, &i)| (p, i))
            .max_by(|a, b| gain(a.1).cmp(&gain(b.1)).then(b.1.cmp(&a.1)))
        else {
            break;
        };
        if gain(best) == 0 {
            break;
        }
        for &t in &holds[best] {
            covered[t] = true;
        }
        kept.push(best);
        alive.swap_remove(pos);
    }
    kept.sort_unstable();
    kept.into_iter().map(|i| balls[i].clone()).collect()
}

/// Grid sample of `S_r` inside `B(center, radius)` at spacing `r/4`.
pub fn target_points(f: &dyn FieldEvaluator, center: &[f64], radius: f64, r: f64) -> Result<Vec<Vec<f64>>> {
    let grid = GridSpec::for_ball(f.dim(), radius, r / 4.0);
    let centred = CentredField { f, shift: center.to_vec() };
    let mask = frequency_set(&centred, r, &grid, radius)?;
    Ok(mask.members().into_iter().map(|p| centred.world(&p)).collect())
}

struct CentredField<'a> {
    f: &'a dyn FieldEvaluator,
    shift: Vec<f64>,
}

impl CentredField<'_> {
    fn world(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.shift).map(|(a, b)| a + b).collect()
    }
}

impl FieldEvaluator for CentredField<'_> {
    fn dim(&self) -> usize {
        self.f.dim()
    }
    fn value(&self, x: &[f64]) -> f64 {
        self.f.value(&self.world(x))
    }
    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.f.gradient(&self.world(x))
    }
    fn freq(&self, x: &[f64], s: f64) -> Option<f64> {
        self.f.freq(&self.world(x), s)
    }
    fn sphere_weights(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.f.sphere_weights(&self.world(x))
    }
}

/// Covers the grid sample of `S_r` in `B(center, radius)` level by level,
/// starting from degree `d* = ceil(degree_factor * lambda)`.
pub fn recursive_cover(
    f: &dyn FieldEvaluator,
    lambda: f64,
    r: f64,
    center: &[f64],
    radius: f64,
    cfg: &CoveringConfig,
) -> Result<CoverReport> {
    let n = f.dim();
    if center.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: center.len() });
    }
    if !(r > 0.0 && r < radius) {
        return Err(Error::InvalidArgument("need 0 < r < radius".into()));
    }
    let d_star = ((cfg.degree_factor * lambda).ceil() as u32).max(1);
    let ctx = Ctx { f, cfg, r, samples: cfg.good_scale_samples(n) };

    let observed_lambda = ball_points(n, ctx.samples)
        .par_iter()
        .map(|p| {
            let y: Vec<f64> = center.iter().zip(p).map(|(a, b)| a + radius * b).collect();
            FreqCurve::new(f, &y).at(radius).ok_or(Error::VanishingHeight)
        })
        .collect::<Result<Vec<f64>>>()?
        .into_iter()
        .fold(0.0, f64::max);

    let targets = target_points(f, center, radius, r)?;
    let mut diag = StepDiagnostics::default();
    let root = ScaleBall { center: center.to_vec(), radius, degree: d_star, status: BallStatus::GoodScale };
    let first = ctx.certify(root, targets.clone(), d_star, &mut diag)?;

    let mut levels = vec![Level { degree: d_star, mass: mass(&first, n), balls: first }];
    let mut degree = d_star;
    while degree > 1 {
        let prev = levels.last().unwrap();
        if prev.balls.iter().all(|b| b.status == BallStatus::TerminalR) {
            break;
        }
        let mut next = Vec::new();
        for b in &prev.balls {
            if b.status == BallStatus::TerminalR {
                next.push(b.clone());
                continue;
            }
            let (balls, dg) = ctx.cover_good_scale(b, &targets)?;
            diag.merge(dg);
            next.extend(balls);
        }
        degree -= 1;
        if levels.len() > d_star as usize {
            return Err(Error::Numerical("level count exceeds the starting degree".into()));
        }
        levels.push(Level { degree, mass: mass(&next, n), balls: next });
    }

    // Final sweep: whatever the last non-terminal balls still hold goes into an r-net.
    let last = levels.last().unwrap();
    let mut terminal: Vec<ScaleBall> = last.balls.iter().filter(|b| b.status == BallStatus::TerminalR).cloned().collect();
    let mut residual: Vec<Vec<f64>> = Vec::new();
    for b in last.balls.iter().filter(|b| b.status != BallStatus::TerminalR) {
        for y in ctx.targets_in(b, &targets) {
            if !residual.contains(&y) {
                residual.push(y);
            }
        }
    }
    residual.sort_by(|a, b| lex(a, b));
    terminal.extend(terminal_net(&residual, r, 1));
    let terminal = prune_terminal(terminal, &targets);

    let escapes = targets.par_iter().filter(|y| !terminal.iter().any(|b| b.contains(y))).count();
    let masses = levels.iter().map(|l| l.mass).chain(std::iter::once(mass(&terminal, n))).collect();
    Ok(CoverReport {
        center: center.to_vec(),
        radius,
        r,
        lambda,
        observed_lambda,
        d_star,
        levels,
        masses,
        terminal_count: terminal.len(),
        terminal,
        targets: targets.len(),
        escapes,
        diagnostics: diag,
    })
}
