//! Finite-sample halfspace (Tukey) depth.

use std::cmp::Ordering;

use rand::Rng as _;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::seeding;

pub const DEFAULT_NDIRS: usize = 500;
pub const DEFAULT_DIRECTION_SEED: u64 = 0x5eed_d1e5;

const PRIMES: [u32; 24] = [
    2, 3, 5, 7, 11, 13, 17, 19, 23, 29, 31, 37, 41, 43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89,
];

fn radical_inverse(mut k: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut f = inv;
    let mut r = 0.0;
    while k > 0 {
        r += (k % base) as f64 * f;
        k /= base;
        f *= inv;
    }
    r
}

/// Unit directions from a randomly shifted Halton sequence pushed through
/// the normal quantile function. The first `k` directions do not depend on
/// how many are requested, so depth can only decrease as `ndirs` grows.
#[derive(Clone, Debug)]
pub struct DirectionSet {
    p: usize,
    dirs: Vec<f64>,
}

impl DirectionSet {
    pub fn quasi_random(p: usize, ndirs: usize, seed: u64) -> Self {
        assert!(p >= 1);
        let mut rng = seeding::stream(seed, &[p as u64]);
        let shift: Vec<f64> = (0..p).map(|_| rng.random::<f64>()).collect();
        let normal = Normal::standard();
        let mut dirs = Vec::with_capacity(ndirs * p);
        for k in 0..ndirs as u64 {
            let mut v: Vec<f64> = (0..p)
                .map(|d| {
                    let base = PRIMES.get(d).copied().unwrap_or_else(|| nth_prime(d)) as u64;
                    let u = (radical_inverse(k + 1, base) + shift[d]).fract();
                    normal.inverse_cdf(u.clamp(1e-12, 1.0 - 1e-12))
                })
                .collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                v.iter_mut().for_each(|x| *x /= norm);
            } else {
                v[0] = 1.0;
            }
            dirs.extend(v);
        }
        Self { p, dirs }
    }

    /// The first `n` points of the unshifted Halton sequence in `[0,1)^p`,
    /// row-major.
    pub fn halton_points(p: usize, n: usize) -> Vec<f64> {
        let bases: Vec<u64> = (0..p)
            .map(|d| PRIMES.get(d).copied().unwrap_or_else(|| nth_prime(d)) as u64)
            .collect();
        (1..=n as u64)
            .flat_map(|k| bases.iter().map(move |&b| radical_inverse(k, b)))
            .collect()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.dirs.len() / self.p
    }

    pub fn is_empty(&self) -> bool {
        self.dirs.is_empty()
    }

    pub fn direction(&self, k: usize) -> &[f64] {
        &self.dirs[k * self.p..(k + 1) * self.p]
    }
}

fn nth_prime(d: usize) -> u32 {
    let mut found = PRIMES.len() - 1;
    let mut c = *PRIMES.last().unwrap();
    while found < d {
        c += 2;
        if (2..).take_while(|q| q * q <= c).all(|q| c % q != 0) {
            found += 1;
        }
    }
    c
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Depth of `x` among scalar points.
pub fn depth_1d(points: &[f64], x: f64) -> f64 {
    let ge = points.iter().filter(|&&v| v >= x).count();
    let le = points.iter().filter(|&&v| v <= x).count();
    ge.min(le) as f64 / points.len() as f64
}

/// Exact bivariate depth by an angular sweep: `n` minus the largest number
/// of points in an open half-plane whose boundary passes through `x`.
pub fn depth_2d(points: &[f64], x: &[f64]) -> f64 {
    let n = points.len() / 2;
    let mut d: Vec<(f64, f64, f64)> = points
        .chunks_exact(2)
        .map(|q| (q[0] - x[0], q[1] - x[1]))
        .filter(|&(a, b)| a != 0.0 || b != 0.0)
        .map(|(a, b)| (b.atan2(a), a, b))
        .collect();
    let m = d.len();
    if m == 0 {
        return 1.0;
    }
    d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal));
    // d_k lies in the half-open half-turn [theta_i, theta_i + pi)
    let ahead = |i: usize, k: usize| {
        let (a, b) = (d[i % m], d[k % m]);
        let cross = a.1 * b.2 - a.2 * b.1;
        cross > 0.0 || (cross == 0.0 && a.1 * b.1 + a.2 * b.2 > 0.0)
    };
    let mut best = 0;
    let mut j = 0;
    for i in 0..m {
        if j < i + 1 {
            j = i + 1;
        }
        while j < i + m && ahead(i, j) {
            j += 1;
        }
        best = best.max(j - i);
    }
    (n - best) as f64 / n as f64
}

/// Depth of `x` over the directions of `dirs` (an upper bound of the exact
/// depth).
pub fn depth_directions(points: &[f64], x: &[f64], dirs: &DirectionSet) -> f64 {
    let p = dirs.p();
    let n = points.len() / p;
    let mut best = n;
    for k in 0..dirs.len() {
        let u = dirs.direction(k);
        let px = dot(u, x);
        let count = points.chunks_exact(p).filter(|q| dot(u, q) >= px).count();
        best = best.min(count);
        if best == 0 {
            break;
        }
    }
    best as f64 / n as f64
}

/// Depth of each query point (row-major, `p` columns) among `reference`.
/// Exact for `p <= 2`; `dirs` is used for `p >= 3`.
pub fn depths(reference: &[f64], queries: &[f64], p: usize, dirs: Option<&DirectionSet>) -> Vec<f64> {
    let n = reference.len() / p;
    match p {
        1 => {
            let mut sorted = reference.to_vec();
            sorted.sort_by(f64::total_cmp);
            queries
                .iter()
                .map(|&x| {
                    let lt = sorted.partition_point(|&v| v < x);
                    let le = sorted.partition_point(|&v| v <= x);
                    le.min(n - lt) as f64 / n as f64
                })
                .collect()
        }
        2 => queries.chunks_exact(2).map(|x| depth_2d(reference, x)).collect(),
        _ => {
            let dirs = dirs.expect("directions are required for p >= 3");
            let q = queries.len() / p;
            let mut best = vec![n; q];
            let mut proj = vec![0.0; n];
            for k in 0..dirs.len() {
                let u = dirs.direction(k);
                for (v, r) in proj.iter_mut().zip(reference.chunks_exact(p)) {
                    *v = dot(u, r);
                }
                proj.sort_unstable_by(f64::total_cmp);
                for (b, x) in best.iter_mut().zip(queries.chunks_exact(p)) {
                    let px = dot(u, x);
                    let ge = n - proj.partition_point(|&v| v < px);
                    if ge < *b {
                        *b = ge;
                    }
                }
            }
            best.into_iter().map(|b| b as f64 / n as f64).collect()
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum HalfspaceError {
    #[error("no reference points")]
    Empty,
    #[error("point dimension {got} does not match p = {p}")]
    Dimension { got: usize, p: usize },
    #[error("need at least one direction for p >= 3")]
    NoDirections,
}

/// Halfspace depth of `query` among `points` (`n x p`, row-major).
pub fn halfspace_depth(points: &[f64], p: usize, query: &[f64], ndirs: usize) -> Result<f64, HalfspaceError> {
    if points.is_empty() {
        return Err(HalfspaceError::Empty);
    }
    if query.len() != p || points.len() % p != 0 {
        return Err(HalfspaceError::Dimension { got: query.len(), p });
    }
    if p >= 3 && ndirs < 1 {
        return Err(HalfspaceError::NoDirections);
    }
    Ok(match p {
        1 => depth_1d(points, query[0]),
        2 => depth_2d(points, query),
        _ => depth_directions(points, query, &DirectionSet::quasi_random(p, ndirs, DEFAULT_DIRECTION_SEED)),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn univariate_middle_point() {
        assert_eq!(halfspace_depth(&[1.0, 2.0, 3.0, 4.0, 5.0], 1, &[3.0], 1).unwrap(), 0.6);
    }

    #[test]
    fn square_corners_center() {
        let pts = [1.0, 1.0, -1.0, 1.0, -1.0, -1.0, 1.0, -1.0];
        assert_eq!(halfspace_depth(&pts, 2, &[0.0, 0.0], 1).unwrap(), 0.5);
        // oracle: a fine grid of directions
        let mut best = 4usize;
        for k in 0..3600 {
            let a = k as f64 * std::f64::consts::TAU / 3600.0;
            let (c, s) = (a.cos(), a.sin());
            let cnt = pts.chunks_exact(2).filter(|q| c * q[0] + s * q[1] >= 0.0).count();
            best = best.min(cnt);
        }
        assert_eq!(best as f64 / 4.0, 0.5);
    }

    #[test]
    fn far_query_has_zero_depth() {
        let pts = [0.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.2, 0.3, 0.1, 0.9, 0.5, 0.5];
        assert_eq!(halfspace_depth(&pts[..10], 1, &[50.0], 1).unwrap(), 0.0);
        assert_eq!(halfspace_depth(&pts, 2, &[50.0, -3.0], 1).unwrap(), 0.0);
        assert_eq!(halfspace_depth(&pts, 3, &[50.0, -3.0, 9.0], 100).unwrap(), 0.0);
        assert_eq!(halfspace_depth(&pts, 3, &[0.0, 0.0, 0.0], 0), Err(HalfspaceError::NoDirections));
    }

    #[test]
    fn collinear_and_coincident_points() {
        // all points on a line through the query
        let pts = [-2.0, -2.0, -1.0, -1.0, 1.0, 1.0, 2.0, 2.0, 0.0, 0.0];
        assert_eq!(depth_2d(&pts, &[0.0, 0.0]), 3.0 / 5.0);
        let same = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0];
        assert_eq!(depth_2d(&same, &[1.0, 1.0]), 1.0);
    }

    fn brute_2d(pts: &[f64], x: &[f64]) -> f64 {
        // Candidate boundaries: directions perpendicular to each x->q, both
        // signs, nudged either way, plus the axis directions.
        let n = pts.len() / 2;
        let mut best = n;
        let mut cands: Vec<f64> = vec![0.0, 1.0, 2.0, 3.0];
        for q in pts.chunks_exact(2) {
            let a = (q[1] - x[1]).atan2(q[0] - x[0]);
            for base in [a + std::f64::consts::FRAC_PI_2, a - std::f64::consts::FRAC_PI_2] {
                for eps in [-1e-9, 0.0, 1e-9] {
                    cands.push(base + eps);
                }
            }
        }
        for a in cands {
            let (c, s) = (a.cos(), a.sin());
            let cnt = pts
                .chunks_exact(2)
                .filter(|q| c * (q[0] - x[0]) + s * (q[1] - x[1]) >= -1e-12)
                .count();
            best = best.min(cnt);
        }
        best as f64 / n as f64
    }

    proptest! {
        #[test]
        fn univariate_matches_rank_form(mut v in proptest::collection::vec(-100i32..100, 1..40)) {
            v.sort();
            let pts: Vec<f64> = v.iter().map(|&x| x as f64).collect();
            let n = pts.len();
            let d = depths(&pts, &pts, 1, None);
            for (i, &x) in pts.iter().enumerate() {
                let left = pts.iter().filter(|&&y| y <= x).count();
                let right = pts.iter().filter(|&&y| y >= x).count();
                prop_assert_eq!(d[i], left.min(right) as f64 / n as f64);
                prop_assert_eq!(d[i], depth_1d(&pts, x));
            }
        }

        #[test]
        fn bivariate_sweep_matches_brute_force(
            pts in proptest::collection::vec(-20i32..20, 2..40),
            x in proptest::collection::vec(-20i32..20, 2),
        ) {
            let pts: Vec<f64> = pts.iter().map(|&v| v as f64 / 2.0).collect();
            let pts = &pts[..pts.len() / 2 * 2];
            let x: Vec<f64> = x.iter().map(|&v| v as f64 / 2.0).collect();
            prop_assert_eq!(depth_2d(pts, &x), brute_2d(pts, &x));
        }

        #[test]
        fn more_directions_never_increase_depth(
            pts in proptest::collection::vec(-5.0f64..5.0, 30..60),
            x in proptest::collection::vec(-3.0f64..3.0, 3),
        ) {
            let pts = &pts[..pts.len() / 3 * 3];
            let few = DirectionSet::quasi_random(3, 20, 1);
            let many = DirectionSet::quasi_random(3, 200, 1);
            let a = depth_directions(pts, &x, &few);
            let b = depth_directions(pts, &x, &many);
            prop_assert!(b <= a);
            // batch version agrees
            prop_assert_eq!(depths(pts, &x, 3, Some(&many))[0], b);
        }

        #[test]
        fn direction_depth_bounds_exact_depth_in_the_plane(
            pts in proptest::collection::vec(-5.0f64..5.0, 4..40),
            x in proptest::collection::vec(-3.0f64..3.0, 2),
        ) {
            let pts = &pts[..pts.len() / 2 * 2];
            // embed in 3-d with a zero third coordinate
            let lifted: Vec<f64> = pts.chunks_exact(2).flat_map(|q| [q[0], q[1], 0.0]).collect();
            let dirs = DirectionSet::quasi_random(3, 300, 4);
            let approx = depth_directions(&lifted, &[x[0], x[1], 0.0], &dirs);
            prop_assert!(approx >= depth_2d(pts, &x));
        }
    }

    #[test]
    fn directions_are_unit_and_prefix_stable() {
        let a = DirectionSet::quasi_random(4, 10, 9);
        let b = DirectionSet::quasi_random(4, 50, 9);
        for k in 0..10 {
            assert_eq!(a.direction(k), b.direction(k));
            let norm: f64 = a.direction(k).iter().map(|x| x * x).sum();
            assert!((norm - 1.0).abs() < 1e-12);
        }
        let big = DirectionSet::quasi_random(30, 3, 9);
        assert_eq!(big.len(), 3);
    }
}
