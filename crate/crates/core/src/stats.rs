//! Small statistics helpers shared by the Monte Carlo estimators.
//!
//! Reductions here are sequential and compensated, so estimator output does
//! not depend on how trials were scheduled across workers.

/// Kahan-compensated sum. Order-stable and accurate for long reductions.
pub fn kahan_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut carry = 0.0;
    for v in values {
        let y = v - carry;
        let t = sum + y;
        carry = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Sample mean and standard error of the mean.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = kahan_sum(values.iter().copied()) / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss = kahan_sum(values.iter().map(|v| (v - mean) * (v - mean)));
    let var = ss / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Sample variance (unbiased).
pub fn variance(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 2 {
        return 0.0;
    }
    let mean = kahan_sum(values.iter().copied()) / n as f64;
    kahan_sum(values.iter().map(|v| (v - mean) * (v - mean))) / (n - 1) as f64
}

/// Least-squares line through (x, y) points. Returns (slope, intercept).
pub fn fit_line(points: &[(f64, f64)]) -> Option<(f64, f64)> {
    let n = points.len();
    if n < 2 {
        return None;
    }
    let nf = n as f64;
    let sx = kahan_sum(points.iter().map(|p| p.0));
    let sy = kahan_sum(points.iter().map(|p| p.1));
    let sxx = kahan_sum(points.iter().map(|p| p.0 * p.0));
    let sxy = kahan_sum(points.iter().map(|p| p.0 * p.1));
    let denom = nf * sxx - sx * sx;
    if denom.abs() < 1e-300 {
        return None;
    }
    let slope = (nf * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / nf;
    Some((slope, intercept))
}

/// Slope of log(y) against x, using only strictly positive y.
/// This is the exponential-rate fit used by the decay estimators.
pub fn fit_log_slope(points: &[(f64, f64)]) -> Option<f64> {
    let usable: Vec<(f64, f64)> = points
        .iter()
        .filter(|(_, y)| *y > 0.0 && y.is_finite())
        .map(|&(x, y)| (x, y.ln()))
        .collect();
    fit_line(&usable).map(|(slope, _)| slope)
}

/// Fraction of the total sum carried by the largest `fraction` of the values.
/// Used as a heavy-tail / divergence indicator for exponential estimators.
pub fn top_share(values: &[f64], fraction: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut sorted: Vec<f64> = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
    let total = kahan_sum(sorted.iter().copied());
    if total <= 0.0 {
        return 0.0;
    }
    let k = ((values.len() as f64 * fraction).ceil() as usize).clamp(1, values.len());
    let top = kahan_sum(sorted[sorted.len() - k..].iter().copied());
    top / total
}

fn spearman_rho(values: &[f64]) -> f64 {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        values[a]
            .partial_cmp(&values[b])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let mut rank = vec![0.0; n];
    for (r, &i) in order.iter().enumerate() {
        rank[i] = r as f64;
    }
    let xs: Vec<(f64, f64)> = (0..n).map(|i| (i as f64, rank[i])).collect();
    // Pearson correlation of index vs rank.
    let mx = (n as f64 - 1.0) / 2.0;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for &(x, y) in &xs {
        sxy += (x - mx) * (y - mx);
        sxx += (x - mx) * (x - mx);
        syy += (y - mx) * (y - mx);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    sxy / (sxx * syy).sqrt()
}

/// One-sided p-value for a decreasing trend in `values`, via Spearman rank
/// correlation against time order. Exact permutation enumeration for n <= 8,
/// normal approximation beyond that.
pub fn decreasing_trend_p(values: &[f64]) -> f64 {
    let n = values.len();
    if n < 3 {
        return 1.0;
    }
    let observed = spearman_rho(values);
    if n <= 8 {
        let mut perm: Vec<f64> = values.to_vec();
        perm.sort_by(|a, b| a.partial_cmp(b).unwrap_or(std::cmp::Ordering::Equal));
        let mut le = 0usize;
        let mut total = 0usize;
        permute(&mut perm, 0, &mut |p| {
            total += 1;
            if spearman_rho(p) <= observed + 1e-12 {
                le += 1;
            }
        });
        le as f64 / total as f64
    } else {
        // rho * sqrt(n-1) is approximately standard normal under the null
        let z = observed * ((n - 1) as f64).sqrt();
        normal_cdf(z)
    }
}

fn permute(values: &mut Vec<f64>, k: usize, visit: &mut impl FnMut(&[f64])) {
    if k + 1 >= values.len() {
        visit(values);
        return;
    }
    for i in k..values.len() {
        values.swap(k, i);
        permute(values, k + 1, visit);
        values.swap(k, i);
    }
}

/// Standard normal CDF via the complementary error function (Abramowitz-Stegun 7.1.26).
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * (1.0 + erf(z / std::f64::consts::SQRT_2))
}

fn erf(x: f64) -> f64 {
    // max absolute error ~1.5e-7, plenty for trend p-values
    let sign = if x < 0.0 { -1.0 } else { 1.0 };
    let x = x.abs();
    let t = 1.0 / (1.0 + 0.3275911 * x);
    let poly = t
        * (0.254829592
            + t * (-0.284496736 + t * (1.421413741 + t * (-1.453152027 + t * 1.061405429))));
    sign * (1.0 - poly * (-x * x).exp())
}

/// Bootstrap standard error of `statistic` over resamples of the input values.
/// Deterministic given the seed.
pub fn bootstrap_se(
    values: &[f64],
    resamples: usize,
    seed: u64,
    statistic: impl Fn(&[f64]) -> f64,
) -> f64 {
    use rand::{Rng, SeedableRng};
    if values.len() < 2 || resamples < 2 {
        return 0.0;
    }
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut stats = Vec::with_capacity(resamples);
    let mut buf = vec![0.0; values.len()];
    for _ in 0..resamples {
        for slot in buf.iter_mut() {
            *slot = values[rng.random_range(0..values.len())];
        }
        stats.push(statistic(&buf));
    }
    let (_, _) = mean_se(&stats);
    variance(&stats).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn kahan_handles_cancellation() {
        let values: Vec<f64> = (0..100_000)
            .map(|i| if i % 2 == 0 { 1e16 } else { -1e16 })
            .chain(std::iter::once(1.0))
            .collect();
        assert_eq!(kahan_sum(values), 1.0);
    }

    #[test]
    fn mean_se_of_constant() {
        let (m, se) = mean_se(&[2.5; 40]);
        assert_eq!(m, 2.5);
        assert_eq!(se, 0.0);
    }

    #[test]
    fn line_fit_recovers_exact_line() {
        let pts: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 3.0 - 0.5 * i as f64)).collect();
        let (slope, intercept) = fit_line(&pts).unwrap();
        assert_relative_eq!(slope, -0.5, epsilon = 1e-12);
        assert_relative_eq!(intercept, 3.0, epsilon = 1e-12);
    }

    #[test]
    fn log_slope_of_exponential() {
        let pts: Vec<(f64, f64)> = (0..8)
            .map(|i| (i as f64 * 0.5, 2.0 * (-1.3 * i as f64 * 0.5).exp()))
            .collect();
        let slope = fit_log_slope(&pts).unwrap();
        assert_relative_eq!(slope, -1.3, epsilon = 1e-10);
    }

    #[test]
    fn monotone_decrease_has_small_p() {
        let p = decreasing_trend_p(&[6.0, 5.0, 4.0, 3.0, 2.0, 1.0]);
        assert!(p < 0.01, "p = {p}");
        let p_up = decreasing_trend_p(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        assert!(p_up > 0.95, "p = {p_up}");
    }

    #[test]
    fn top_share_uniform_is_fraction() {
        let values = vec![1.0; 1000];
        assert_relative_eq!(top_share(&values, 0.01), 0.01, epsilon = 1e-12);
    }

    #[test]
    fn normal_cdf_reference_points() {
        assert_relative_eq!(normal_cdf(0.0), 0.5, epsilon = 1e-7);
        assert_relative_eq!(normal_cdf(1.96), 0.975, epsilon = 1e-3);
    }

    #[test]
    fn bootstrap_se_close_to_analytic() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let values: Vec<f64> = (0..400).map(|_| rng.random_range(0.0..1.0)).collect();
        let se = bootstrap_se(&values, 400, 11, |v| mean_se(v).0);
        let (_, analytic) = mean_se(&values);
        assert!(
            (se - analytic).abs() < 0.35 * analytic,
            "se {se} vs {analytic}"
        );
    }
}
