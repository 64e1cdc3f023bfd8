//! Reference computations the library results are checked against. Each is
//! written from the textbook formula, independent of the library code.
#![allow(dead_code)]

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

/// Relative error with an absolute floor for values near zero.
pub fn rel_err(got: f64, want: f64) -> f64 {
    (got - want).abs() / want.abs().max(1e-300)
}

/// Plane-strain constant stress `(σxx, σyy, σzz, τxy)` for strain
/// `(εxx, εyy, γxy)`.
pub fn plane_strain_stress(e: f64, nu: f64, exx: f64, eyy: f64, gxy: f64) -> [f64; 4] {
    let lambda = e * nu / ((1.0 + nu) * (1.0 - 2.0 * nu));
    let mu = e / (2.0 * (1.0 + nu));
    let tr = exx + eyy;
    [
        lambda * tr + 2.0 * mu * exx,
        lambda * tr + 2.0 * mu * eyy,
        lambda * tr,
        mu * gxy,
    ]
}

/// Von Mises stress from the principal stresses of the in-plane tensor.
pub fn von_mises_principal(sxx: f64, syy: f64, szz: f64, txy: f64) -> f64 {
    let c = 0.5 * (sxx + syy);
    let r = (0.25 * (sxx - syy).powi(2) + txy * txy).sqrt();
    let (s1, s2, s3) = (c + r, c - r, szz);
    (0.5 * ((s1 - s2).powi(2) + (s2 - s3).powi(2) + (s3 - s1).powi(2))).sqrt()
}

/// In-plane rotation of `(σxx, σyy, τxy)` by `theta`.
pub fn rotate(sxx: f64, syy: f64, txy: f64, theta: f64) -> (f64, f64, f64) {
    let (s, c) = theta.sin_cos();
    (
        c * c * sxx + s * s * syy + 2.0 * s * c * txy,
        s * s * sxx + c * c * syy - 2.0 * s * c * txy,
        -s * c * sxx + s * c * syy + (c * c - s * s) * txy,
    )
}

/// Difference in surface settlement `u(r1) − u(r2)` of an elastic
/// half-plane under a line load `p` per unit thickness, plane strain.
pub fn flamant_settlement_difference(p: f64, e: f64, nu: f64, r1: f64, r2: f64) -> f64 {
    2.0 * p * (1.0 - nu * nu) / (std::f64::consts::PI * e) * (r2 / r1).ln()
}

/// Interspike interval of a leaky integrator under constant drive `d`
/// (mV/ms) that resets to rest, plus the refractory time.
pub fn lif_isi(d: f64, tau_m: f64, threshold: f64, u_reset: f64, tau_r: f64) -> f64 {
    tau_r + tau_m * (tau_m * d / (tau_m * d - (threshold - u_reset))).ln()
}

#[derive(Debug, Clone, Copy)]
pub struct OlsOracle {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least squares in exact rational arithmetic on the binary values of the
/// inputs.
pub fn ols_exact(pairs: &[(f64, f64)]) -> OlsOracle {
    let q = |v: f64| BigRational::from_float(v).expect("finite");
    let n = BigRational::from_integer(BigInt::from(pairs.len()));
    let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (
        BigRational::zero(),
        BigRational::zero(),
        BigRational::zero(),
        BigRational::zero(),
        BigRational::zero(),
    );
    for &(x, y) in pairs {
        let (x, y) = (q(x), q(y));
        sxx += &x * &x;
        syy += &y * &y;
        sxy += &x * &y;
        sx += x;
        sy += y;
    }
    let cxx = &n * &sxx - &sx * &sx;
    let cyy = &n * &syy - &sy * &sy;
    let cxy = &n * &sxy - &sx * &sy;
    let slope = &cxy / &cxx;
    let intercept = (&sy - &slope * &sx) / &n;
    let r_squared = (&cxy * &cxy) / (&cxx * &cyy);
    OlsOracle {
        slope: slope.to_f64().unwrap(),
        intercept: intercept.to_f64().unwrap(),
        r_squared: r_squared.to_f64().unwrap(),
    }
}

pub fn dominates(a: &[f64], b: &[f64]) -> bool {
    a.iter().zip(b).all(|(x, y)| x <= y) && a.iter().zip(b).any(|(x, y)| x < y)
}

/// Index pairs `(i, j)` where `i` dominates `j`.
pub fn dominated_pairs(points: &[Vec<f64>]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for i in 0..points.len() {
        for j in 0..points.len() {
            if i != j && dominates(&points[i], &points[j]) {
                out.push((i, j));
            }
        }
    }
    out
}

/// Area dominated by a 2-objective point set and bounded by `reference`.
pub fn hypervolume_2d(points: &[(f64, f64)], reference: (f64, f64)) -> f64 {
    let mut pts: Vec<(f64, f64)> = points
        .iter()
        .copied()
        .filter(|p| p.0 < reference.0 && p.1 < reference.1)
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut area = 0.0;
    let mut ceiling = reference.1;
    for (x, y) in pts {
        if y < ceiling {
            area += (reference.0 - x) * (ceiling - y);
            ceiling = y;
        }
    }
    area
}

pub fn rms(x: &[f64]) -> f64 {
    (x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64).sqrt()
}

/// Fraction of Hann-windowed periodogram power with `lo ≤ f ≤ hi`.
pub fn band_power_fraction(x: &[f64], dt_ms: f64, lo_hz: f64, hi_hz: f64) -> f64 {
    let n = x.len();
    let mut buf: Vec<Complex<f64>> = x
        .iter()
        .enumerate()
        .map(|(k, &v)| {
            let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * k as f64 / (n - 1) as f64).cos();
            Complex::new(v * w, 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    let fs = 1000.0 / dt_ms;
    let (mut inside, mut total) = (0.0, 0.0);
    for (k, c) in buf.iter().enumerate().take(n / 2 + 1).skip(1) {
        let p = c.norm_sqr();
        let f = k as f64 * fs / n as f64;
        total += p;
        if f >= lo_hz && f <= hi_hz {
            inside += p;
        }
    }
    inside / total
}
