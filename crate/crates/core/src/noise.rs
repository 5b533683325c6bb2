//! Noise-level estimation for approximately low-rank matrices.
//!
//! The error standard deviation of a noisy matrix is estimated from its
//! median singular value: for a pure-noise p x n matrix with entry variance
//! sigma^2, the squared singular values over max(p, n) follow the
//! Marchenko-Pastur law with aspect ratio beta = min(p, n) / max(p, n), so
//!
//! ```text
//! sigma_hat = s_median / sqrt(max(p, n) * mp_median(beta))
//! ```
//!
//! is consistent for sigma and robust to a low-rank signal component, which
//! perturbs only the top few singular values.

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg::{median, sorted_svd};
use crate::scalar::Real;

/// Grid resolution for the one-off CDF integration.
const CDF_GRID: usize = 1 << 14;

/// Median of the Marchenko-Pastur distribution with aspect ratio
/// `beta` in (0, 1], to an absolute tolerance of 1e-6.
///
/// The CDF is integrated after the substitution `t = a + (b-a) sin^2(theta)`,
/// which removes the inverse-square-root singularities at both support
/// edges, and the median is read off the cumulative grid by bisection-free
/// linear interpolation.
pub fn marchenko_pastur_median<T: Real>(beta: T) -> Result<T> {
    let beta = beta.to_f64_lossy();
    if !(beta > 0.0 && beta <= 1.0) {
        return Err(Error::invalid(format!(
            "aspect ratio must lie in (0, 1], got {beta}"
        )));
    }
    let sqrt_beta = beta.sqrt();
    let a = (1.0 - sqrt_beta) * (1.0 - sqrt_beta);
    let b = (1.0 + sqrt_beta) * (1.0 + sqrt_beta);
    let width = b - a;

    // Density mapped through the substitution; smooth on [0, pi/2]. At
    // beta = 1 the support touches zero and the ratio has a removable
    // singularity at theta = 0 with limit width * cos^2 / (pi * beta).
    let g = |theta: f64| -> f64 {
        let s = theta.sin();
        let c = theta.cos();
        let t = a + width * s * s;
        if t == 0.0 {
            width * c * c / (std::f64::consts::PI * beta)
        } else {
            width * width * s * s * c * c / (std::f64::consts::PI * beta * t)
        }
    };

    // Composite-Simpson cumulative integral over an even grid.
    let h = std::f64::consts::FRAC_PI_2 / CDF_GRID as f64;
    let mut cumulative = Vec::with_capacity(CDF_GRID + 1);
    cumulative.push(0.0);
    let mut acc = 0.0;
    let mut g_left = g(0.0);
    for k in 0..CDF_GRID {
        let mid = g((k as f64 + 0.5) * h);
        let right = g((k as f64 + 1.0) * h);
        acc += h / 6.0 * (g_left + 4.0 * mid + right);
        cumulative.push(acc);
        g_left = right;
    }
    let total = acc;
    debug_assert!((total - 1.0).abs() < 1e-8, "mp mass {total}");

    let target = total / 2.0;
    let idx = cumulative.partition_point(|&v| v < target);
    let idx = idx.clamp(1, CDF_GRID);
    let (c0, c1) = (cumulative[idx - 1], cumulative[idx]);
    let frac = if c1 > c0 { (target - c0) / (c1 - c0) } else { 0.5 };
    let theta = (idx as f64 - 1.0 + frac) * h;
    let s = theta.sin();
    Ok(T::approx(a + width * s * s))
}

/// Error standard deviation of a noisy matrix from its median singular
/// value. Missing entries must already be replaced by zero (the centered
/// mean). Requires min(p, n) >= 2 and a nonzero matrix.
pub fn estimate_noise_sd<T: Real>(m: &DMatrix<T>) -> Result<T> {
    let (p, n) = (m.nrows(), m.ncols());
    if p.min(n) < 2 {
        return Err(Error::invalid(format!(
            "noise estimation needs both dimensions >= 2, got {p} x {n}"
        )));
    }
    if m.iter().all(|&x| x == T::zero()) {
        return Err(Error::ZeroMatrix);
    }
    let svd = sorted_svd(m)?;
    let s_med = median(&svd.sigma);
    let big = p.max(n) as f64;
    let beta = T::approx(p.min(n) as f64 / big);
    let mu = marchenko_pastur_median::<T>(beta)?;
    Ok(s_med / (T::approx(big) * mu).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    // Medians of the Marchenko-Pastur law computed independently by
    // adaptive quadrature + root finding on the exact density.
    const MP_MEDIAN_ORACLE: &[(f64, f64)] = &[
        (1.0, 0.6527759416),
        (0.625, 0.7869894613),
        (0.5, 0.8304658816),
        (0.25, 0.9160040707),
        (0.1, 0.9665651474),
    ];

    #[test]
    fn mp_median_matches_quadrature_oracle() {
        for &(beta, want) in MP_MEDIAN_ORACLE {
            let got: f64 = marchenko_pastur_median(beta).unwrap();
            assert!(
                (got - want).abs() < 1e-6,
                "beta {beta}: got {got}, want {want}"
            );
        }
    }

    #[test]
    fn mp_median_rejects_bad_aspect() {
        assert!(marchenko_pastur_median::<f64>(0.0).is_err());
        assert!(marchenko_pastur_median::<f64>(1.5).is_err());
    }

    #[test]
    fn mp_median_f32() {
        let got: f32 = marchenko_pastur_median(1.0f32).unwrap();
        assert!((got - 0.652776).abs() < 1e-4);
    }

    fn gaussian_matrix(rng: &mut ChaCha8Rng, p: usize, n: usize, sd: f64) -> DMatrix<f64> {
        DMatrix::from_fn(p, n, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            sd * z
        })
    }

    // Monte Carlo oracle (20 seeded 500 x 500 draws, run independently):
    // estimates for sd = 2 landed in [1.986, 2.016], for sd = 1 in
    // [0.993, 1.008]. The test uses fewer, smaller draws for speed and the
    // wider brackets those imply.
    #[test]
    fn recovers_noise_sd_on_gaussian_matrices() {
        for &(sd, lo, hi) in &[(2.0, 1.9, 2.1), (1.0, 0.95, 1.05)] {
            for seed in 0..5 {
                let mut rng = ChaCha8Rng::seed_from_u64(100 + seed);
                let m = gaussian_matrix(&mut rng, 300, 300, sd);
                let est = estimate_noise_sd(&m).unwrap();
                assert!(est > lo && est < hi, "sd {sd} seed {seed}: est {est}");
            }
        }
    }

    #[test]
    fn rectangular_matrices_use_their_aspect_ratio() {
        // Tall and wide versions of the same noise level must agree.
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let tall = gaussian_matrix(&mut rng, 400, 100, 1.0);
        let wide = tall.transpose();
        let a = estimate_noise_sd(&tall).unwrap();
        let b = estimate_noise_sd(&wide).unwrap();
        assert!((a - b).abs() < 1e-12);
        assert!(a > 0.93 && a < 1.07, "tall estimate {a}");
    }

    #[test]
    fn scale_equivariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = gaussian_matrix(&mut rng, 60, 40, 1.0);
        let base = estimate_noise_sd(&m).unwrap();
        let scaled = estimate_noise_sd(&(&m * 3.5)).unwrap();
        assert!((scaled - 3.5 * base).abs() < 1e-9 * scaled.abs());
    }

    #[test]
    fn zero_matrix_rejected() {
        let m: DMatrix<f64> = DMatrix::zeros(5, 5);
        assert!(matches!(estimate_noise_sd(&m), Err(Error::ZeroMatrix)));
    }
}
