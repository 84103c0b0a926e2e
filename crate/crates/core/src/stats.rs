//! Small statistical helpers shared by the Monte Carlo engines.

use statrs::function::beta::beta_reg;

/// `P(Bin(trials, p) >= k)`.
pub fn binomial_upper_tail(trials: u64, p: f64, k: u64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if k > trials {
        return 0.0;
    }
    if p <= 0.0 {
        return 0.0;
    }
    if p >= 1.0 {
        return 1.0;
    }
    beta_reg(k as f64, (trials - k + 1) as f64, p)
}

/// `P(Bin(trials, p) <= k)`.
pub fn binomial_cdf(trials: u64, p: f64, k: u64) -> f64 {
    1.0 - binomial_upper_tail(trials, p, k + 1)
}

fn bisect(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> bool) -> f64 {
    // f(lo) == false, f(hi) == true
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if f(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    0.5 * (lo + hi)
}

/// Exact (Clopper–Pearson) two-sided interval for a binomial proportion.
pub fn clopper_pearson(hits: u64, trials: u64, level: f64) -> (f64, f64) {
    assert!(trials > 0, "clopper_pearson needs at least one trial");
    assert!(hits <= trials);
    let alpha = 1.0 - level;
    let low = if hits == 0 {
        0.0
    } else {
        bisect(0.0, 1.0, |p| binomial_upper_tail(trials, p, hits) >= alpha / 2.0)
    };
    let high = if hits == trials {
        1.0
    } else {
        bisect(0.0, 1.0, |p| binomial_cdf(trials, p, hits) <= alpha / 2.0)
    };
    (
        low.min(hits as f64 / trials as f64),
        high.max(hits as f64 / trials as f64),
    )
}

/// Central acceptance region `[k_lo, k_hi]` for `Bin(trials, p)` holding at
/// least `level` of the mass: each tail outside it has mass at most `(1-level)/2`.
pub fn binomial_acceptance_region(trials: u64, p: f64, level: f64) -> (u64, u64) {
    let half = (1.0 - level) / 2.0;
    // largest k_lo with P(X < k_lo) <= half
    let (mut lo, mut hi) = (0u64, trials);
    while lo < hi {
        let mid = lo + (hi - lo).div_ceil(2);
        let below = if mid == 0 {
            0.0
        } else {
            binomial_cdf(trials, p, mid - 1)
        };
        if below <= half {
            lo = mid;
        } else {
            hi = mid - 1;
        }
    }
    let k_lo = lo;
    // smallest k_hi with P(X > k_hi) <= half
    let (mut lo, mut hi) = (0u64, trials);
    while lo < hi {
        let mid = lo + (hi - lo) / 2;
        if binomial_upper_tail(trials, p, mid + 1) <= half {
            hi = mid;
        } else {
            lo = mid + 1;
        }
    }
    (k_lo, lo)
}

/// Mean and unbiased variance, summed in slice order.
pub fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    (mean, ss / (n - 1.0))
}

/// Kish effective sample size `(Σw)² / Σw²`.
pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    if s2 == 0.0 {
        0.0
    } else {
        s * s / s2
    }
}

/// Converts log-weights into weights scaled so the largest is one.
/// Returns the shift that was subtracted.
pub fn normalize_log_weights(log_weights: &[f64]) -> (Vec<f64>, f64) {
    let max = log_weights
        .iter()
        .copied()
        .filter(|x| x.is_finite())
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return (vec![0.0; log_weights.len()], 0.0);
    }
    (log_weights.iter().map(|lw| (lw - max).exp()).collect(), max)
}

/// Delete-one jackknife standard error of `stat` given the leave-one-out values.
pub fn jackknife_se(leave_one_out: &[f64]) -> f64 {
    let n = leave_one_out.len() as f64;
    if leave_one_out.len() < 2 {
        return f64::NAN;
    }
    let mean = leave_one_out.iter().sum::<f64>() / n;
    let ss: f64 = leave_one_out.iter().map(|x| (x - mean) * (x - mean)).sum();
    ((n - 1.0) / n * ss).sqrt()
}
