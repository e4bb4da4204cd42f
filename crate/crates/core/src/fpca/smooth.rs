//! Local-linear Epanechnikov smoothers on binned data.

use nalgebra::DMatrix;

#[inline]
pub fn epanechnikov(x: f64) -> f64 {
    if x.abs() < 1.0 {
        0.75 * (1.0 - x * x)
    } else {
        0.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Singular {
    pub at: f64,
}

/// Local-linear fit of binned data at each point of `at`.
///
/// `locs` are sorted bin locations, `counts[u]` the total weight in bin `u`
/// and `sums[u]` the weighted sum of responses in it.
pub fn local_linear_1d(
    locs: &[f64],
    counts: &[f64],
    sums: &[f64],
    h: f64,
    at: &[f64],
) -> Result<Vec<f64>, Singular> {
    at.iter()
        .map(|&s| {
            let lo = locs.partition_point(|&u| u <= s - h);
            let hi = locs.partition_point(|&u| u < s + h);
            let (mut s0, mut s1, mut s2, mut t0, mut t1) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for u in lo..hi {
                let d = locs[u] - s;
                let k = epanechnikov(d / h);
                if k == 0.0 || counts[u] == 0.0 {
                    continue;
                }
                let kc = k * counts[u];
                s0 += kc;
                s1 += kc * d;
                s2 += kc * d * d;
                t0 += k * sums[u];
                t1 += k * sums[u] * d;
            }
            let det = s0 * s2 - s1 * s1;
            if s0 <= 0.0 || det <= 1e-12 * s0 * s2 {
                return Err(Singular { at: s });
            }
            Ok((s2 * t0 - s1 * t1) / det)
        })
        .collect()
}

/// Kernel design matrices `K`, `K d`, `K d^2` between output points and bins.
fn designs(out: &[f64], locs: &[f64], h: f64) -> [DMatrix<f64>; 3] {
    let mut a0 = DMatrix::zeros(out.len(), locs.len());
    let mut a1 = DMatrix::zeros(out.len(), locs.len());
    let mut a2 = DMatrix::zeros(out.len(), locs.len());
    for (r, &s) in out.iter().enumerate() {
        let lo = locs.partition_point(|&u| u <= s - h);
        let hi = locs.partition_point(|&u| u < s + h);
        for u in lo..hi {
            let d = locs[u] - s;
            let k = epanechnikov(d / h);
            a0[(r, u)] = k;
            a1[(r, u)] = k * d;
            a2[(r, u)] = k * d * d;
        }
    }
    [a0, a1, a2]
}

/// Local-linear surface fit of binned cross-products.
///
/// `counts` and `sums` are symmetric `U x U` bin totals (the caller zeroes
/// whatever should be excluded, e.g. the diagonal). Returns the surface at
/// `out x out`, column-major.
pub fn local_linear_surface(
    locs: &[f64],
    counts: &DMatrix<f64>,
    sums: &DMatrix<f64>,
    h: f64,
    out: &[f64],
) -> Result<DMatrix<f64>, Singular> {
    let [a0, a1, a2] = designs(out, locs, h);
    let p0 = counts * a0.transpose();
    let p1 = counts * a1.transpose();
    let s00 = &a0 * &p0;
    let s10 = &a1 * &p0;
    let s20 = &a2 * &p0;
    let s11 = &a1 * &p1;
    let q0 = sums * a0.transpose();
    let t0 = &a0 * &q0;
    let t1 = &a1 * &q0;
    let g = out.len();
    let mut surface = DMatrix::zeros(g, g);
    for a in 0..g {
        for b in 0..g {
            // row a indexes the first argument s, column b the second t
            let m00 = s00[(a, b)];
            let m01 = s10[(a, b)];
            let m02 = s10[(b, a)];
            let m11 = s20[(a, b)];
            let m12 = s11[(a, b)];
            let m22 = s20[(b, a)];
            let r0 = t0[(a, b)];
            let r1 = t1[(a, b)];
            let r2 = t1[(b, a)];
            // Cramer's rule on the symmetric 3x3 normal equations
            let c00 = m11 * m22 - m12 * m12;
            let c01 = m02 * m12 - m01 * m22;
            let c02 = m01 * m12 - m02 * m11;
            let det = m00 * c00 + m01 * c01 + m02 * c02;
            if m00 <= 0.0 || det <= 1e-12 * m00 * m11 * m22 {
                return Err(Singular { at: out[a].min(out[b]) });
            }
            surface[(a, b)] = (c00 * r0 + c01 * r1 + c02 * r2) / det;
        }
    }
    Ok(surface)
}

/// Diagonal of the covariance from a fit in coordinates rotated by 45
/// degrees: local linear along the diagonal, local quadratic across it.
/// Captures the ridge that a plain surface fit flattens.
pub fn rotated_diagonal(
    locs: &[f64],
    counts: &DMatrix<f64>,
    sums: &DMatrix<f64>,
    h: f64,
    out: &[f64],
) -> Result<Vec<f64>, Singular> {
    let reach = h * std::f64::consts::SQRT_2;
    out.iter()
        .map(|&t| {
            let lo = locs.partition_point(|&u| u <= t - reach);
            let hi = locs.partition_point(|&u| u < t + reach);
            let mut m = nalgebra::Matrix3::<f64>::zeros();
            let mut r = nalgebra::Vector3::<f64>::zeros();
            for a in lo..hi {
                for b in lo..hi {
                    let c = counts[(a, b)];
                    if c == 0.0 {
                        continue;
                    }
                    let x = 0.5 * (locs[a] + locs[b]) - t;
                    let y = 0.5 * (locs[a] - locs[b]);
                    let k = epanechnikov(x / h) * epanechnikov(y / h);
                    if k == 0.0 {
                        continue;
                    }
                    let z = nalgebra::Vector3::new(1.0, x, y * y);
                    m += k * c * z * z.transpose();
                    r += k * sums[(a, b)] * z;
                }
            }
            if m[(0, 0)] <= 0.0 {
                return Err(Singular { at: t });
            }
            let det = m.determinant();
            if det <= 1e-12 * m[(0, 0)] * m[(1, 1)] * m[(2, 2)] {
                return Err(Singular { at: t });
            }
            let sol = m.lu().solve(&r).ok_or(Singular { at: t })?;
            Ok(sol[0])
        })
        .collect()
}
