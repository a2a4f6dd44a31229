//! Small statistics helpers: replica aggregation, least squares, chi-square.

use statrs::distribution::{ChiSquared, ContinuousCDF};

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 2 {
        return 0.0;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1) as f64
}

/// Mean and standard error of independent values.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let se = if xs.len() < 2 { 0.0 } else { (variance(xs) / xs.len() as f64).sqrt() };
    (mean(xs), se)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    /// Pearson correlation of the fitted points.
    pub r: f64,
    pub slope_se: f64,
}

/// Ordinary least squares `y = intercept + slope * x`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> LinearFit {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let (mx, my) = (mean(x), mean(y));
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r = if syy > 0.0 { sxy / (sxx * syy).sqrt() } else { 0.0 };
    let resid: f64 = x.iter().zip(y).map(|(a, b)| (b - intercept - slope * a).powi(2)).sum();
    let slope_se = if n > 2.0 { (resid / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    LinearFit {
        slope,
        intercept,
        r,
        slope_se,
    }
}

/// Weighted least squares with weights `1 / sigma^2`.
pub fn weighted_linear_fit(x: &[f64], y: &[f64], sigma: &[f64]) -> LinearFit {
    let w: Vec<f64> = sigma.iter().map(|s| 1.0 / (s * s).max(1e-300)).collect();
    let sw: f64 = w.iter().sum();
    let mx = x.iter().zip(&w).map(|(a, w)| a * w).sum::<f64>() / sw;
    let my = y.iter().zip(&w).map(|(b, w)| b * w).sum::<f64>() / sw;
    let sxx: f64 = x.iter().zip(&w).map(|(a, w)| w * (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().zip(&w).map(|(b, w)| w * (b - my).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).zip(&w).map(|((a, b), w)| w * (a - mx) * (b - my)).sum();
    let slope = sxy / sxx;
    LinearFit {
        slope,
        intercept: my - slope * mx,
        r: if syy > 0.0 { sxy / (sxx * syy).sqrt() } else { 0.0 },
        slope_se: (1.0 / sxx).sqrt(),
    }
}

/// Pearson chi-square statistic and degrees of freedom for independence
/// of rows and columns of a contingency table. Empty rows and columns are
/// dropped.
pub fn chi_square_independence(table: &[Vec<f64>]) -> (f64, usize) {
    let rows: Vec<&Vec<f64>> = table.iter().filter(|r| r.iter().sum::<f64>() > 0.0).collect();
    if rows.is_empty() {
        return (0.0, 0);
    }
    let ncol = rows[0].len();
    let col_sums: Vec<f64> = (0..ncol).map(|j| rows.iter().map(|r| r[j]).sum()).collect();
    let cols: Vec<usize> = (0..ncol).filter(|&j| col_sums[j] > 0.0).collect();
    let total: f64 = col_sums.iter().sum();
    if rows.len() < 2 || cols.len() < 2 {
        return (0.0, 0);
    }
    let mut stat = 0.0;
    for r in &rows {
        let rs: f64 = r.iter().sum();
        for &j in &cols {
            let expected = rs * col_sums[j] / total;
            stat += (r[j] - expected).powi(2) / expected;
        }
    }
    (stat, (rows.len() - 1) * (cols.len() - 1))
}

/// Upper tail probability of a chi-square variable.
pub fn chi_square_p_value(stat: f64, df: usize) -> f64 {
    if df == 0 {
        return 1.0;
    }
    let dist = ChiSquared::new(df as f64).expect("positive degrees of freedom");
    1.0 - dist.cdf(stat)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 0.5 - 2.0 * v).collect();
        let f = linear_fit(&x, &y);
        assert!((f.slope + 2.0).abs() < 1e-12);
        assert!((f.intercept - 0.5).abs() < 1e-12);
        assert!((f.r + 1.0).abs() < 1e-12);
    }

    #[test]
    fn chi_square_of_product_table_is_zero() {
        let t = vec![vec![10.0, 20.0], vec![30.0, 60.0]];
        let (s, df) = chi_square_independence(&t);
        assert!(s.abs() < 1e-12);
        assert_eq!(df, 1);
        assert!((chi_square_p_value(3.841_458_820_694_124, 1) - 0.05).abs() < 1e-9);
    }

    #[test]
    fn standard_error() {
        let (m, se) = mean_and_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-12);
    }
}
