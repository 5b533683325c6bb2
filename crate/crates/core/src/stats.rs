//! Probability kernels: normal CDF pair, truncated-normal and
//! precision-parameterized multivariate-normal draws, inverse-gamma draws,
//! log densities, and interpolated quantiles.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::Rng;
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Standard normal CDF.
pub fn norm_cdf<T: Real>(x: T) -> T {
    let n = Normal::standard();
    T::approx(n.cdf(x.to_f64_lossy()))
}

/// Standard normal quantile function.
pub fn norm_inv_cdf<T: Real>(p: T) -> T {
    let n = Normal::standard();
    T::approx(n.inverse_cdf(p.to_f64_lossy()))
}

/// Log density of Normal(mean, var) at x.
pub fn norm_logpdf<T: Real>(x: T, mean: T, var: T) -> T {
    let half = T::approx(0.5);
    let two_pi = T::approx(std::f64::consts::TAU);
    let d = x - mean;
    -half * ((two_pi * var).ln() + d * d / var)
}

/// Log density of Inverse-Gamma(shape, scale) at x.
pub fn inverse_gamma_logpdf<T: Real>(x: T, shape: T, scale: T) -> T {
    let lg = T::approx(ln_gamma(shape.to_f64_lossy()));
    shape * scale.ln() - lg - (shape + T::one()) * x.ln() - scale / x
}

/// One draw from Inverse-Gamma(shape, scale): the reciprocal of a
/// Gamma(shape, 1/scale) draw.
pub fn sample_inverse_gamma<T: Real, R: Rng + ?Sized>(rng: &mut R, shape: T, scale: T) -> T {
    let g = T::sample_gamma(rng, shape, T::one() / scale);
    T::one() / g
}

/// How far into the tail (in standard deviations) the inverse-CDF sampler is
/// trusted before switching to exponential-proposal rejection.
const TAIL_SWITCH: f64 = 5.0;

/// One draw from Normal(mean, sd^2) truncated to (lower, +inf).
///
/// Inverse-CDF in the bulk; for truncation points more than five standard
/// deviations above the mean, an exponential-proposal rejection sampler
/// keeps the draw numerically stable.
pub fn sample_truncated_normal_lower<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    mean: T,
    sd: T,
    lower: T,
) -> T {
    let alpha = ((lower - mean) / sd).to_f64_lossy();
    if alpha <= TAIL_SWITCH {
        // Uniform on the surviving upper-tail mass, inverted through the
        // survival function to keep precision when the mass is small.
        let q = 1.0 - Normal::standard().cdf(alpha);
        let u: f64 = <f64 as Real>::sample_open01(rng);
        let v = (u * q).max(f64::MIN_POSITIVE);
        let z = -Normal::standard().inverse_cdf(v);
        mean + sd * T::approx(z)
    } else {
        // Robert's translated-exponential rejection sampler.
        let rate = (alpha + (alpha * alpha + 4.0).sqrt()) / 2.0;
        loop {
            let u1: f64 = <f64 as Real>::sample_open01(rng);
            let z = alpha - u1.ln() / rate;
            let rho = (-(z - rate) * (z - rate) / 2.0).exp();
            let u2: f64 = <f64 as Real>::sample_open01(rng);
            if u2 <= rho {
                return mean + sd * T::approx(z);
            }
        }
    }
}

/// One draw from Normal(mean, sd^2) truncated to (-inf, upper).
pub fn sample_truncated_normal_upper<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    mean: T,
    sd: T,
    upper: T,
) -> T {
    -sample_truncated_normal_lower(rng, -mean, sd, -upper)
}

/// Reusable sampler for multivariate normals specified by a precision
/// matrix: x ~ Normal(B b, B) with B the inverse of `precision` and b a
/// per-draw linear term. One factorization serves every row draw of a Gibbs
/// block, whose precision is shared across rows.
///
/// The covariance is solved from the precision, then factorized; a jitter of
/// `1e-10 * trace/dim` is added to the covariance diagonal only if that
/// factorization fails, with a logged warning. A non-positive-definite
/// precision is reported as a numerical error (it signals NaN contamination
/// upstream).
pub struct PrecisionSampler<T: Real> {
    chol_prec: Cholesky<T, nalgebra::Dyn>,
    cov: DMatrix<T>,
    cov_l: DMatrix<T>,
}

impl<T: Real> PrecisionSampler<T> {
    pub fn new(precision: DMatrix<T>) -> Result<Self> {
        let dim = precision.nrows();
        if precision.iter().any(|x| !x.is_finite()) {
            return Err(Error::numerical(
                "precision matrix contains non-finite values",
            ));
        }
        let chol_prec = Cholesky::new(precision)
            .ok_or_else(|| Error::numerical("precision matrix is not positive definite"))?;
        let cov = chol_prec.inverse();
        let chol_cov = match Cholesky::new(cov.clone()) {
            Some(c) => c,
            None => {
                let trace = (0..dim).fold(T::zero(), |acc, i| acc + cov[(i, i)]);
                let jitter = T::approx(1e-10) * trace / T::from_usize(dim).expect("dim fits");
                log::warn!(
                    "covariance factorization failed; retrying with jitter {:.3e}",
                    jitter.to_f64_lossy()
                );
                let mut bumped = cov.clone();
                for i in 0..dim {
                    bumped[(i, i)] += jitter;
                }
                Cholesky::new(bumped).ok_or_else(|| {
                    Error::numerical("covariance not positive definite after jitter")
                })?
            }
        };
        let cov_l = chol_cov.l();
        Ok(Self {
            chol_prec,
            cov,
            cov_l,
        })
    }

    /// Posterior mean B b for the given linear term.
    pub fn mean(&self, linear: &DVector<T>) -> DVector<T> {
        self.chol_prec.solve(linear)
    }

    /// Covariance B.
    pub fn covariance(&self) -> &DMatrix<T> {
        &self.cov
    }

    /// One draw with the given linear term.
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, linear: &DVector<T>) -> DVector<T> {
        let dim = self.cov.nrows();
        let z = DVector::from_fn(dim, |_, _| T::sample_standard_normal(rng));
        self.mean(linear) + &self.cov_l * z
    }
}

/// One-shot convenience over [`PrecisionSampler`].
pub fn sample_mvn_from_precision<T: Real, R: Rng + ?Sized>(
    rng: &mut R,
    precision: &DMatrix<T>,
    linear: &DVector<T>,
) -> Result<DVector<T>> {
    if precision.nrows() == 0 {
        return Ok(DVector::zeros(0));
    }
    Ok(PrecisionSampler::new(precision.clone())?.draw(rng, linear))
}

/// Quantile of a sorted slice by linear interpolation between order
/// statistics (the `h = (m - 1) p + 1` convention).
pub fn quantile_sorted<T: Real>(sorted: &[T], p: T) -> T {
    assert!(!sorted.is_empty(), "quantile of empty slice");
    let m = sorted.len();
    if m == 1 {
        return sorted[0];
    }
    let h = T::from_usize(m - 1).expect("length fits") * p;
    let lo = h.floor().to_f64_lossy() as usize;
    let lo = lo.min(m - 2);
    let frac = h - T::from_usize(lo).expect("index fits");
    sorted[lo] + frac * (sorted[lo + 1] - sorted[lo])
}

/// Equal-tailed interval at the given level from unsorted draws.
pub fn credible_interval<T: Real>(draws: &[T], level: T) -> (T, T) {
    let mut sorted = draws.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).expect("comparable draws"));
    let half_tail = (T::one() - level) / T::approx(2.0);
    (
        quantile_sorted(&sorted, half_tail),
        quantile_sorted(&sorted, T::one() - half_tail),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn cdf_and_inverse_are_consistent() {
        for &x in &[-3.0, -0.5, 0.0, 1.7, 4.0] {
            let p: f64 = norm_cdf(x);
            assert!((norm_inv_cdf(p) - x).abs() < 1e-9);
        }
    }

    #[test]
    fn truncated_lower_respects_bound_and_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // Bound far below the mean: truncation negligible, mean ~ 10.
        let n = 10_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let d: f64 = sample_truncated_normal_lower(&mut rng, 10.0, 1.0, 0.0);
            assert!(d > 0.0);
            sum += d;
        }
        let mean = sum / n as f64;
        assert!((mean - 10.0).abs() < 0.05, "mean {mean}");
    }

    #[test]
    fn truncated_upper_stays_negative() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let n = 10_000;
        let mut sum = 0.0;
        for _ in 0..n {
            let d: f64 = sample_truncated_normal_upper(&mut rng, -10.0, 1.0, 0.0);
            assert!(d < 0.0);
            sum += d;
        }
        assert!((sum / n as f64 + 10.0).abs() < 0.05);
    }

    #[test]
    fn deep_tail_rejection_sampler() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        // Mean -10 truncated to be positive: 10 sd into the tail.
        for _ in 0..2_000 {
            let d: f64 = sample_truncated_normal_lower(&mut rng, -10.0, 1.0, 0.0);
            assert!(d > 0.0 && d < 2.0, "tail draw {d}");
        }
    }

    #[test]
    fn mvn_moments_match_precision_spec() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        // precision [[2, 0.5], [0.5, 1]], linear [1, -1]
        let prec = DMatrix::from_row_slice(2, 2, &[2.0, 0.5, 0.5, 1.0]);
        let lin = DVector::from_column_slice(&[1.0, -1.0]);
        let cov = prec.clone().try_inverse().unwrap();
        let mean = &cov * &lin;
        let n = 60_000;
        let mut s = DVector::zeros(2);
        let mut s2 = DMatrix::zeros(2, 2);
        for _ in 0..n {
            let x = sample_mvn_from_precision(&mut rng, &prec, &lin).unwrap();
            s += &x;
            s2 += &x * x.transpose();
        }
        let emp_mean = &s / n as f64;
        let emp_cov = s2 / n as f64 - &emp_mean * emp_mean.transpose();
        for i in 0..2 {
            let se = (cov[(i, i)] / n as f64).sqrt();
            assert!((emp_mean[i] - mean[i]).abs() < 4.0 * se);
            for j in 0..2 {
                let var_cc = cov[(i, i)] * cov[(j, j)] + cov[(i, j)] * cov[(i, j)];
                let se_cc = (var_cc / n as f64).sqrt();
                assert!((emp_cov[(i, j)] - cov[(i, j)]).abs() < 4.0 * se_cc);
            }
        }
    }

    #[test]
    fn nan_precision_is_an_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let prec = DMatrix::from_row_slice(1, 1, &[f64::NAN]);
        let lin = DVector::from_column_slice(&[0.0]);
        assert!(sample_mvn_from_precision(&mut rng, &prec, &lin).is_err());
    }

    #[test]
    fn quantile_linear_interpolation() {
        // Independent oracle: h = (m-1)p, straight interpolation, computed
        // by hand for 1..=100: p=.025 -> 3.475, p=.975 -> 97.525.
        let xs: Vec<f64> = (1..=100).map(f64::from).collect();
        assert!((quantile_sorted(&xs, 0.025) - 3.475).abs() < 1e-12);
        assert!((quantile_sorted(&xs, 0.975) - 97.525).abs() < 1e-12);
        let (lo, hi) = credible_interval(&xs, 0.95);
        assert!((lo - 3.475).abs() < 1e-12 && (hi - 97.525).abs() < 1e-12);
    }

    #[test]
    fn constant_draws_give_zero_width() {
        let xs = vec![2.5f64; 40];
        let (lo, hi) = credible_interval(&xs, 0.95);
        assert_eq!((lo, hi), (2.5, 2.5));
    }

    #[test]
    fn inverse_gamma_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (shape, scale) = (3.0, 2.0);
        let n = 50_000;
        let mut sum = 0.0;
        for _ in 0..n {
            sum += sample_inverse_gamma::<f64, _>(&mut rng, shape, scale);
        }
        // mean = scale / (shape - 1) = 1.0
        assert!((sum / n as f64 - 1.0).abs() < 0.02);
    }
}
