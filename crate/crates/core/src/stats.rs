//! Summary statistics and a one-sample Kolmogorov-Smirnov test against the
//! standard normal.

use serde::{Deserialize, Serialize};

pub fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Unbiased sample variance.
pub fn variance(x: &[f64]) -> f64 {
    let m = mean(x);
    x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (x.len() as f64 - 1.0)
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// Upper tail of the standard normal.
pub fn normal_sf(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Asymptotic Kolmogorov distribution `Q(λ) = 2 Σ (−1)^{j−1} exp(−2 j² λ²)`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=100 {
        let term = (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// KS test of `samples` against N(0, 1). Uses Stephens' small-sample
/// correction to the asymptotic distribution.
pub fn ks_normal(samples: &[f64]) -> KsResult {
    let mut s: Vec<f64> = samples.iter().copied().filter(|v| v.is_finite()).collect();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    let nf = n as f64;
    let mut d: f64 = 0.0;
    for (i, v) in s.iter().enumerate() {
        let f = normal_cdf(*v);
        d = d.max(((i + 1) as f64 / nf - f).abs()).max((f - i as f64 / nf).abs());
    }
    let en = nf.sqrt();
    KsResult {
        statistic: d,
        p_value: kolmogorov_q((en + 0.12 + 0.11 / en) * d),
        n,
    }
}

/// Every `stride`-th sample, to thin out correlated neighbours.
pub fn decimate(x: &[f64], stride: usize) -> Vec<f64> {
    x.iter().step_by(stride.max(1)).copied().collect()
}

/// Sample autocorrelation at `lag`.
pub fn autocorrelation(x: &[f64], lag: usize) -> f64 {
    let m = mean(x);
    let v: f64 = x.iter().map(|a| (a - m).powi(2)).sum();
    let c: f64 = x.iter().zip(&x[lag..]).map(|(a, b)| (a - m) * (b - m)).sum();
    c / v
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal, Uniform};

    #[test]
    fn normal_cdf_values() {
        assert!((normal_cdf(0.0) - 0.5).abs() < 1e-15);
        assert!((normal_cdf(1.959963984540054) - 0.975).abs() < 1e-12);
        assert!((normal_sf(3.455) - 2.7518e-4).abs() < 1e-7);
    }

    #[test]
    fn kolmogorov_reference_points() {
        // Critical values of the limiting distribution.
        assert!((kolmogorov_q(1.3581) - 0.05).abs() < 1e-4);
        assert!((kolmogorov_q(1.6276) - 0.01).abs() < 1e-4);
    }

    #[test]
    fn ks_accepts_normal_rejects_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g: Vec<f64> = (0..5000).map(|_| StandardNormal.sample(&mut rng)).collect();
        assert!(ks_normal(&g).p_value > 0.01);
        let u = Uniform::new(-2.0, 2.0).unwrap();
        let x: Vec<f64> = (0..5000).map(|_| u.sample(&mut rng)).collect();
        assert!(ks_normal(&x).p_value < 1e-6);
        let shifted: Vec<f64> = g.iter().map(|v| v * 1.1).collect();
        assert!(ks_normal(&shifted).p_value < 0.01);
    }

    #[test]
    fn ks_p_values_roughly_uniform_under_null() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let low = (0..400)
            .filter(|_| {
                let g: Vec<f64> = (0..500).map(|_| StandardNormal.sample(&mut rng)).collect();
                ks_normal(&g).p_value < 0.1
            })
            .count();
        assert!((20..=60).contains(&low), "{low}");
    }

    #[test]
    fn moments() {
        let x = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(mean(&x), 2.5);
        assert!((variance(&x) - 5.0 / 3.0).abs() < 1e-15);
        assert_eq!(decimate(&x, 3), vec![1.0, 4.0]);
        assert!((autocorrelation(&[1.0, -1.0, 1.0, -1.0], 1) + 0.75).abs() < 1e-12);
    }
}
