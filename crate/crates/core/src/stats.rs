//! Small descriptive-statistics helpers shared by the analysis modules.

/// Mean (n ≥ 1) and sample standard deviation with n − 1 denominator (n ≥ 2).
pub fn mean_sd(xs: &[f64]) -> (Option<f64>, Option<f64>) {
    if xs.is_empty() {
        return (None, None);
    }
    let m = mean(xs);
    if xs.len() < 2 {
        return (Some(m), None);
    }
    let ss: f64 = xs.iter().map(|x| (x - m).powi(2)).sum();
    (Some(m), Some((ss / (xs.len() - 1) as f64).sqrt()))
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Linear-interpolation quantile of sorted data (type 7).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Sample skewness g1 and excess kurtosis g2 (population moments). `None`
/// for fewer than three points or zero spread.
pub fn skew_kurtosis(xs: &[f64]) -> Option<(f64, f64)> {
    if xs.len() < 3 {
        return None;
    }
    let n = xs.len() as f64;
    let m = mean(xs);
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for x in xs {
        let d = x - m;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    m2 /= n;
    m3 /= n;
    m4 /= n;
    if m2 <= 0.0 {
        return None;
    }
    Some((m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn basic_moments() {
        let (m, s) = mean_sd(&[-2.0, 0.0]);
        assert_eq!(m, Some(-1.0));
        assert!((s.unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert_eq!(mean_sd(&[3.0]), (Some(3.0), None));
        assert_eq!(mean_sd(&[]), (None, None));
        assert_eq!(quantile_sorted(&[1.0, 2.0, 3.0, 4.0], 0.5), 2.5);
        let (g1, _) = skew_kurtosis(&[1.0, 2.0, 3.0]).unwrap();
        assert!(g1.abs() < 1e-12);
        assert!(skew_kurtosis(&[1.0, 1.0, 1.0]).is_none());
    }
}
