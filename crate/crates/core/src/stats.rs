//! Small numeric helpers shared by several stages.

use alloc::vec::Vec;

use crate::{Error, Result};

/// Median of a slice (mean of the two middle values for even lengths).
/// Reorders the slice in place.
pub fn median_in_place(values: &mut [f64]) -> Option<f64> {
    let n = values.len();
    if n == 0 {
        return None;
    }
    let mid = n / 2;
    let (_, hi, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let hi = *hi;
    if n % 2 == 1 {
        Some(hi)
    } else {
        let lo = values[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(0.5 * (lo + hi))
    }
}

/// Nearest-rank percentile: the value at rank `ceil(p/100 * n)` of the
/// ascending order. `p` must lie in `(0, 100]`.
pub fn nearest_rank_percentile(values: &[f64], p: f64) -> Result<f64> {
    if !(p > 0.0 && p <= 100.0) {
        return Err(Error::InvalidParameter(alloc::format!("percentile {p} outside (0, 100]")));
    }
    if values.is_empty() {
        return Err(Error::InsufficientData("no values for percentile".into()));
    }
    let mut v: Vec<f64> = values.to_vec();
    let rank = nearest_rank(v.len(), p);
    let (_, x, _) = v.select_nth_unstable_by(rank - 1, f64::total_cmp);
    Ok(*x)
}

/// 1-based nearest rank for `n` values. Computed in integer arithmetic
/// when `p` has at most three decimals so 95% of 100 is exactly rank 95.
pub fn nearest_rank(n: usize, p: f64) -> usize {
    let milli = libm::round(p * 1000.0);
    let rank = if libm::fabs(milli - p * 1000.0) < 1e-6 {
        let num = milli as u128 * n as u128;
        num.div_ceil(100_000) as usize
    } else {
        libm::ceil(p / 100.0 * n as f64) as usize
    };
    rank.clamp(1, n)
}

/// Two-sided standard-normal critical value for a confidence `level`
/// (0.95 gives 1.959964).
pub fn z_for_level(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(alloc::format!("confidence level {level} outside (0, 1)")));
    }
    Ok(normal_quantile(0.5 + level / 2.0))
}

/// Inverse of the standard normal CDF (Acklam's rational approximation
/// refined by one Halley step).
pub fn normal_quantile(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969683028665376e1,
        2.209460984245205e2,
        -2.759285104469687e2,
        1.383577518672690e2,
        -3.066479806614716e1,
        2.506628277459239e0,
    ];
    const B: [f64; 5] = [
        -5.447609879822406e1,
        1.615858368580409e2,
        -1.556989798598866e2,
        6.680131188771972e1,
        -1.328068155288572e1,
    ];
    const C: [f64; 6] = [
        -7.784894002430293e-3,
        -3.223964580411365e-1,
        -2.400758277161838e0,
        -2.549732539343734e0,
        4.374664141464968e0,
        2.938163982698783e0,
    ];
    const D: [f64; 4] = [
        7.784695709041462e-3,
        3.224671290700398e-1,
        2.445134137142996e0,
        3.754408661907416e0,
    ];
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let p_low = 0.02425;
    let x = if p < p_low {
        let q = libm::sqrt(-2.0 * libm::log(p));
        (((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    } else if p <= 1.0 - p_low {
        let q = p - 0.5;
        let r = q * q;
        (((((A[0] * r + A[1]) * r + A[2]) * r + A[3]) * r + A[4]) * r + A[5]) * q
            / (((((B[0] * r + B[1]) * r + B[2]) * r + B[3]) * r + B[4]) * r + 1.0)
    } else {
        let q = libm::sqrt(-2.0 * libm::log(1.0 - p));
        -(((((C[0] * q + C[1]) * q + C[2]) * q + C[3]) * q + C[4]) * q + C[5])
            / ((((D[0] * q + D[1]) * q + D[2]) * q + D[3]) * q + 1.0)
    };
    let e = 0.5 * libm::erfc(-x / core::f64::consts::SQRT_2) - p;
    let u = e * libm::sqrt(2.0 * core::f64::consts::PI) * libm::exp(x * x / 2.0);
    x - u / (1.0 + x * u / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn z_95() {
        assert!((z_for_level(0.95).unwrap() - 1.959964).abs() < 1e-6);
        assert!((z_for_level(0.90).unwrap() - 1.644854).abs() < 1e-6);
        assert!(z_for_level(1.0).is_err());
    }

    #[test]
    fn medians() {
        assert_eq!(median_in_place(&mut []), None);
        assert_eq!(median_in_place(&mut [3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median_in_place(&mut [4.0, 1.0, 3.0, 2.0]), Some(2.5));
    }

    #[test]
    fn percentile_nearest_rank() {
        let v: Vec<f64> = (1..=100).map(|i| 0.01 * i as f64).collect();
        assert_eq!(nearest_rank_percentile(&v, 95.0).unwrap(), v[94]);
        assert_eq!(nearest_rank_percentile(&v, 100.0).unwrap(), v[99]);
        assert_eq!(nearest_rank_percentile(&vec![0.3; 150], 95.0).unwrap(), 0.3);
        assert!(nearest_rank_percentile(&v, 0.0).is_err());
        assert_eq!(nearest_rank(20, 5.0), 1);
        assert_eq!(nearest_rank(21, 5.0), 2);
    }
}
