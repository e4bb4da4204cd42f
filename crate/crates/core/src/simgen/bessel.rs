//! Modified Bessel function of the second kind for real order, and the
//! Matérn correlation built on it.
//!
//! Temme's series for small arguments and Steed's continued fraction for
//! large ones, followed by forward recurrence in the order.

use std::f64::consts::PI;

const EPS: f64 = 1e-16;
const MAX_ITER: usize = 10_000;
const SERIES_LIMIT: f64 = 2.0;

fn chebyshev(coeffs: &[f64], x: f64) -> f64 {
    // interval [-1, 1]
    let y2 = 2.0 * x;
    let (mut d, mut dd) = (0.0, 0.0);
    for &c in coeffs[1..].iter().rev() {
        let sv = d;
        d = y2 * d - dd + c;
        dd = sv;
    }
    x * d - dd + 0.5 * coeffs[0]
}

/// `(gam1, gam2, 1/Gamma(1+mu), 1/Gamma(1-mu))` for `|mu| <= 1/2`.
fn temme_gammas(mu: f64) -> (f64, f64, f64, f64) {
    const C1: [f64; 7] = [
        -1.142022680371168e0,
        6.5165112670737e-3,
        3.087090173086e-4,
        -3.4706269649e-6,
        6.9437664e-9,
        3.67795e-11,
        -1.356e-13,
    ];
    const C2: [f64; 8] = [
        1.843740587300905e0,
        -7.68528408447867e-2,
        1.2719271366546e-3,
        -4.9717367042e-6,
        -3.31261198e-8,
        2.423096e-10,
        -1.702e-13,
        -1.49e-15,
    ];
    let xx = 8.0 * mu * mu - 1.0;
    let gam1 = chebyshev(&C1, xx);
    let gam2 = chebyshev(&C2, xx);
    (gam1, gam2, gam2 - mu * gam1, gam2 + mu * gam1)
}

/// `K_nu(x)` for `nu >= 0`, `x > 0`.
pub fn bessel_k(nu: f64, x: f64) -> f64 {
    assert!(nu >= 0.0 && x > 0.0, "bessel_k needs nu >= 0 and x > 0");
    let nl = (nu + 0.5).floor() as usize;
    let mu = nu - nl as f64;
    let mu2 = mu * mu;
    let xi = 1.0 / x;
    let xi2 = 2.0 * xi;

    let (mut k_mu, mut k_mu1);
    if x < SERIES_LIMIT {
        let x2 = 0.5 * x;
        let pimu = PI * mu;
        let fact = if pimu.abs() < EPS { 1.0 } else { pimu / pimu.sin() };
        let d = -x2.ln();
        let e = mu * d;
        let fact2 = if e.abs() < EPS { 1.0 } else { e.sinh() / e };
        let (gam1, gam2, gampl, gammi) = temme_gammas(mu);
        let mut ff = fact * (gam1 * e.cosh() + gam2 * fact2 * d);
        let mut sum = ff;
        let ee = e.exp();
        let mut p = 0.5 * ee / gampl;
        let mut q = 0.5 / (ee * gammi);
        let mut c = 1.0;
        let dd = x2 * x2;
        let mut sum1 = p;
        for i in 1..=MAX_ITER {
            let fi = i as f64;
            ff = (fi * ff + p + q) / (fi * fi - mu2);
            c *= dd / fi;
            p /= fi - mu;
            q /= fi + mu;
            let del = c * ff;
            sum += del;
            sum1 += c * (p - fi * ff);
            if del.abs() < sum.abs() * EPS {
                break;
            }
        }
        k_mu = sum;
        k_mu1 = sum1 * xi2;
    } else {
        let mut b = 2.0 * (1.0 + x);
        let mut d = 1.0 / b;
        let mut delh = d;
        let mut h = d;
        let mut q1 = 0.0;
        let mut q2 = 1.0;
        let a1 = 0.25 - mu2;
        let mut q = a1;
        let mut c = a1;
        let mut a = -a1;
        let mut s = 1.0 + q * delh;
        for i in 2..=MAX_ITER {
            let fi = i as f64;
            a -= 2.0 * (fi - 1.0);
            c = -a * c / fi;
            let qnew = (q1 - b * q2) / a;
            q1 = q2;
            q2 = qnew;
            q += c * qnew;
            b += 2.0;
            d = 1.0 / (b + a * d);
            delh = (b * d - 1.0) * delh;
            h += delh;
            let dels = q * delh;
            s += dels;
            if (dels / s).abs() < EPS {
                break;
            }
        }
        h *= a1;
        k_mu = (PI / (2.0 * x)).sqrt() * (-x).exp() / s;
        k_mu1 = k_mu * (mu + x + 0.5 - h) * xi;
    }
    for i in 1..=nl {
        let next = (mu + i as f64) * xi2 * k_mu1 + k_mu;
        k_mu = k_mu1;
        k_mu1 = next;
    }
    k_mu
}

/// Matérn correlation `2^(1-nu)/Gamma(nu) (sqrt(2 nu) r)^nu K_nu(sqrt(2 nu) r)`,
/// equal to 1 at `r = 0`.
pub fn matern(r: f64, nu: f64) -> f64 {
    let r = r.abs();
    if r == 0.0 {
        return 1.0;
    }
    let z = (2.0 * nu).sqrt() * r;
    let log_pre = (1.0 - nu) * std::f64::consts::LN_2 - statrs::function::gamma::ln_gamma(nu) + nu * z.ln();
    let k = bessel_k(nu, z);
    if k == 0.0 {
        return 0.0;
    }
    (log_pre + k.ln()).exp()
}
