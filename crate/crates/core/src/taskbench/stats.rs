use crate::error::{Error, Result};

/// Pearson correlation coefficient of two equally long samples.
pub fn pearson(pred: &[f64], truth: &[f64]) -> Result<f64> {
    if pred.len() != truth.len() {
        return Err(Error::Data(format!(
            "length mismatch: {} predictions vs {} targets",
            pred.len(),
            truth.len()
        )));
    }
    if pred.len() < 2 {
        return Err(Error::UndefinedCorrelation(
            "need at least two points".into(),
        ));
    }
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mt = truth.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        let (dp, dt) = (p - mp, t - mt);
        sxy += dp * dt;
        sxx += dp * dp;
        syy += dt * dt;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedCorrelation("zero variance".into()));
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, v.sqrt())
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// Closed-form ridge regression with an unpenalized intercept.
/// Returns `(weights, intercept)`.
pub fn ridge_fit(x: &[Vec<f64>], y: &[f64], lambda: f64) -> (Vec<f64>, f64) {
    let d = x.first().map_or(0, Vec::len);
    let n = x.len() as f64;
    let mx: Vec<f64> = (0..d)
        .map(|j| x.iter().map(|r| r[j]).sum::<f64>() / n)
        .collect();
    let my = y.iter().sum::<f64>() / n;
    // Normal equations on centered data: (XᵀX + λI) w = Xᵀy.
    let mut a = vec![vec![0.0; d + 1]; d];
    for (row, &t) in x.iter().zip(y) {
        for i in 0..d {
            let xi = row[i] - mx[i];
            for j in 0..d {
                a[i][j] += xi * (row[j] - mx[j]);
            }
            a[i][d] += xi * (t - my);
        }
    }
    for (i, r) in a.iter_mut().enumerate() {
        r[i] += lambda;
    }
    let w = solve(a);
    let b = my - w.iter().zip(&mx).map(|(w, m)| w * m).sum::<f64>();
    (w, b)
}

/// Gauss-Jordan elimination with partial pivoting on an augmented matrix.
fn solve(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let d = a.len();
    for col in 0..d {
        let pivot = (col..d)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, pivot);
        let p = a[col][col];
        for k in col..=d {
            a[col][k] /= p;
        }
        for r in 0..d {
            if r != col {
                let f = a[r][col];
                if f != 0.0 {
                    for k in col..=d {
                        a[r][k] -= f * a[col][k];
                    }
                }
            }
        }
    }
    a.into_iter().map(|r| r[d]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_and_inverse_correlation() {
        let x = [0.1, 0.4, 0.35, 0.9];
        assert!((pearson(&x, &x).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = x.iter().map(|v| -v).collect();
        assert!((pearson(&neg, &x).unwrap() + 1.0).abs() < 1e-15);
    }

    #[test]
    fn hand_computed_fixture() {
        // means 2.75 and 2.25; Sxy = 6.25, Sxx = 8.75, Syy = 4.75
        // r = 6.25 / sqrt(8.75 · 4.75) = 0.96946
        let r = pearson(&[1.0, 2.0, 3.0, 5.0], &[1.0, 2.0, 2.0, 4.0]).unwrap();
        assert!((r - 6.25 / (8.75f64 * 4.75).sqrt()).abs() < 1e-12);
        assert!((r - 0.9695).abs() < 1e-3);
    }

    #[test]
    fn zero_variance_is_undefined() {
        assert!(matches!(
            pearson(&[1.0, 1.0, 1.0], &[0.0, 1.0, 2.0]),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(pearson(&[1.0], &[1.0]).is_err());
        assert!(pearson(&[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn summary_statistics() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        let (m, s) = mean_std(&[1.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
    }

    #[test]
    fn ridge_recovers_a_linear_map() {
        let x: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![(i as f64 * 0.3).sin(), (i as f64 * 0.7).cos()])
            .collect();
        let y: Vec<f64> = x.iter().map(|r| 2.0 * r[0] - r[1] + 0.5).collect();
        let (w, b) = ridge_fit(&x, &y, 1e-9);
        assert!((w[0] - 2.0).abs() < 1e-6 && (w[1] + 1.0).abs() < 1e-6);
        assert!((b - 0.5).abs() < 1e-6);
    }
}
