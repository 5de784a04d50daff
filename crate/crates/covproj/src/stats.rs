//! Statistical utilities: one- and two-sample Kolmogorov--Smirnov distances,
//! histogram binning, and running moments.

use statrs::distribution::{Cauchy, ContinuousCDF, Normal};

/// Standard normal CDF.
pub fn standard_normal_cdf(x: f64) -> f64 {
    Normal::standard().cdf(x)
}

/// Standard normal density.
pub fn standard_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// Standard Cauchy CDF.
pub fn standard_cauchy_cdf(x: f64) -> f64 {
    Cauchy::new(0.0, 1.0).expect("valid parameters").cdf(x)
}

/// Standard Cauchy density.
pub fn standard_cauchy_pdf(x: f64) -> f64 {
    1.0 / (std::f64::consts::PI * (1.0 + x * x))
}

/// One-sample Kolmogorov--Smirnov statistic `sup_x |F_n(x) - F(x)|` against
/// a reference CDF.
pub fn ks_one_sample<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    assert!(!samples.is_empty(), "KS distance of an empty sample");
    let mut xs = samples.to_vec();
    xs.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite samples"));
    let n = xs.len() as f64;
    let mut d = 0.0_f64;
    for (i, &x) in xs.iter().enumerate() {
        let f = cdf(x);
        d = d.max(f - i as f64 / n).max((i + 1) as f64 / n - f);
    }
    d
}

/// Two-sample Kolmogorov--Smirnov test.
#[derive(Debug, Clone, Copy)]
pub struct KsTwoSample {
    pub statistic: f64,
    pub p_value: f64,
}

/// Two-sample KS statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> KsTwoSample {
    assert!(!a.is_empty() && !b.is_empty(), "KS test of an empty sample");
    let mut xs = a.to_vec();
    let mut ys = b.to_vec();
    xs.sort_unstable_by(|u, v| u.partial_cmp(v).expect("finite samples"));
    ys.sort_unstable_by(|u, v| u.partial_cmp(v).expect("finite samples"));
    let (n1, n2) = (xs.len(), ys.len());
    let (mut i, mut j) = (0usize, 0usize);
    let mut d = 0.0_f64;
    while i < n1 && j < n2 {
        let x = xs[i];
        let y = ys[j];
        let t = x.min(y);
        while i < n1 && xs[i] <= t {
            i += 1;
        }
        while j < n2 && ys[j] <= t {
            j += 1;
        }
        d = d.max((i as f64 / n1 as f64 - j as f64 / n2 as f64).abs());
    }
    let ne = (n1 as f64 * n2 as f64) / (n1 as f64 + n2 as f64);
    // Stephens' small-sample correction for the asymptotic distribution.
    let lambda = (ne.sqrt() + 0.12 + 0.11 / ne.sqrt()) * d;
    KsTwoSample {
        statistic: d,
        p_value: kolmogorov_sf(lambda),
    }
}

/// Survival function of the Kolmogorov distribution,
/// `Q(x) = 2 sum_{k>=1} (-1)^{k-1} exp(-2 k^2 x^2)`.
pub fn kolmogorov_sf(x: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for k in 1..=100 {
        let term = (-2.0 * (k as f64) * (k as f64) * x * x).exp();
        sum += sign * term;
        sign = -sign;
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Histogram normalized to integrate to one.
#[derive(Debug, Clone)]
pub struct Histogram {
    /// Bin centers, ascending.
    pub centers: Vec<f64>,
    /// Density per bin.
    pub densities: Vec<f64>,
    pub bin_width: f64,
}

impl Histogram {
    /// Builds a density histogram; `bins = None` selects the bin count by the
    /// Freedman--Diaconis rule.
    pub fn from_samples(samples: &[f64], bins: Option<usize>) -> Self {
        assert!(!samples.is_empty(), "histogram of an empty sample");
        let mut xs = samples.to_vec();
        xs.sort_unstable_by(|a, b| a.partial_cmp(b).expect("finite samples"));
        let n = xs.len();
        let lo = xs[0];
        let hi = xs[n - 1];
        let span = (hi - lo).max(f64::MIN_POSITIVE);
        let n_bins = bins.unwrap_or_else(|| {
            let q1 = quantile_sorted(&xs, 0.25);
            let q3 = quantile_sorted(&xs, 0.75);
            let iqr = q3 - q1;
            if iqr <= 0.0 {
                return 1;
            }
            let width = 2.0 * iqr / (n as f64).cbrt();
            ((span / width).ceil() as usize).clamp(1, 10_000)
        });
        let width = span / n_bins as f64;
        let mut counts = vec![0usize; n_bins];
        for &x in &xs {
            let idx = (((x - lo) / width) as usize).min(n_bins - 1);
            counts[idx] += 1;
        }
        let centers = (0..n_bins)
            .map(|i| lo + (i as f64 + 0.5) * width)
            .collect();
        let densities = counts
            .iter()
            .map(|&c| c as f64 / (n as f64 * width))
            .collect();
        Self {
            centers,
            densities,
            bin_width: width,
        }
    }
}

/// Quantile of a sorted slice by linear interpolation.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    if i + 1 < n {
        sorted[i] * (1.0 - frac) + sorted[i + 1] * frac
    } else {
        sorted[n - 1]
    }
}

/// Sample mean and unbiased sample variance.
pub fn mean_and_variance(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    assert!(n >= 2, "variance needs at least two samples");
    let mean = xs.iter().sum::<f64>() / n as f64;
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, ss / (n - 1) as f64)
}

/// Standard error of the unbiased sample variance,
/// `sqrt( (m4 - (n-3)/(n-1) s^4) / n )` with `m4` the fourth central moment.
pub fn variance_standard_error(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let (mean, var) = mean_and_variance(xs);
    let m4 = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n;
    ((m4 - (n - 3.0) / (n - 1.0) * var * var) / n).max(0.0).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    #[test]
    fn ks_one_sample_exact_grid() {
        // empirical CDF of {0.25, 0.75} against U(0,1):
        // sup deviation is 0.25 at each jump
        let d = ks_one_sample(&[0.25, 0.75], |x| x.clamp(0.0, 1.0));
        assert_abs_diff_eq!(d, 0.25, epsilon = 1e-12);
    }

    #[test]
    fn ks_one_sample_standard_normal_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let xs: Vec<f64> = (0..4000).map(|_| rng.sample(StandardNormal)).collect();
        let d = ks_one_sample(&xs, standard_normal_cdf);
        // typical value ~ 0.86 / sqrt(n); reject only far out
        assert!(d < 0.035, "d = {d}");
    }

    #[test]
    fn ks_two_sample_same_distribution_accepts() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let xs: Vec<f64> = (0..3000).map(|_| rng.sample(StandardNormal)).collect();
        let ys: Vec<f64> = (0..3000).map(|_| rng.sample(StandardNormal)).collect();
        let t = ks_two_sample(&xs, &ys);
        assert!(t.p_value > 0.01, "p = {}", t.p_value);
    }

    #[test]
    fn ks_two_sample_detects_shift() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let xs: Vec<f64> = (0..3000).map(|_| rng.sample(StandardNormal)).collect();
        let ys: Vec<f64> = (0..3000)
            .map(|_| rng.sample::<f64, _>(StandardNormal) + 0.5)
            .collect();
        let t = ks_two_sample(&xs, &ys);
        assert!(t.p_value < 1e-6, "p = {}", t.p_value);
    }

    #[test]
    fn kolmogorov_sf_reference_values() {
        // Q(0.5) ~ 0.9639, Q(1.0) ~ 0.27, Q(2.0) ~ 0.00067
        assert_abs_diff_eq!(kolmogorov_sf(1.0), 0.26999967, epsilon = 1e-6);
        assert!(kolmogorov_sf(0.0) == 1.0);
        assert!(kolmogorov_sf(2.0) < 1e-3);
    }

    #[test]
    fn histogram_integrates_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let xs: Vec<f64> = (0..5000).map(|_| rng.sample(StandardNormal)).collect();
        let h = Histogram::from_samples(&xs, None);
        let mass: f64 = h.densities.iter().map(|d| d * h.bin_width).sum();
        assert_abs_diff_eq!(mass, 1.0, epsilon = 1e-9);
    }

    #[test]
    fn moments_and_variance_se() {
        let xs = [1.0, 2.0, 3.0, 4.0];
        let (m, v) = mean_and_variance(&xs);
        assert_abs_diff_eq!(m, 2.5, epsilon = 1e-15);
        assert_abs_diff_eq!(v, 5.0 / 3.0, epsilon = 1e-12);
        assert!(variance_standard_error(&xs) > 0.0);
    }
}
