use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::{Error, Result};

/// 1-based ranks, ties receiving their average rank. `+∞` ranks highest.
pub fn ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut out = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = r;
        }
        i = j + 1;
    }
    out
}

fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma) * (x - ma);
        sbb += (y - mb) * (y - mb);
    }
    sab / (saa * sbb).sqrt()
}

/// Spearman rank correlation.
pub fn spearman(xs: &[f64], ys: &[f64]) -> f64 {
    pearson(&ranks(xs), &ranks(ys))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrendTest {
    pub rho: f64,
    /// One-sided p-value for a decreasing trend, `P(T ≤ t)`.
    pub p_decreasing: f64,
    /// One-sided p-value for an increasing trend.
    pub p_increasing: f64,
}

/// Spearman trend of `ys` against `xs` with the `t`-approximation on `n − 2`
/// degrees of freedom.
pub fn spearman_trend(xs: &[f64], ys: &[f64]) -> Result<TrendTest> {
    if xs.len() != ys.len() || xs.len() < 4 {
        return Err(Error::InsufficientSamples {
            required: 4,
            actual: xs.len().min(ys.len()),
        });
    }
    let rho = spearman(xs, ys);
    let df = (xs.len() - 2) as f64;
    let (p_dec, p_inc) = if rho >= 1.0 {
        (1.0, 0.0)
    } else if rho <= -1.0 {
        (0.0, 1.0)
    } else if rho.is_nan() {
        (1.0, 1.0)
    } else {
        let t = rho * (df / (1.0 - rho * rho)).sqrt();
        let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
        (dist.cdf(t), dist.sf(t))
    };
    Ok(TrendTest {
        rho,
        p_decreasing: p_dec,
        p_increasing: p_inc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tied_ranks_are_averaged() {
        assert_eq!(ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
    }

    #[test]
    fn perfectly_decreasing() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0];
        let ys = [5.0, 4.0, 3.0, 2.0, f64::NEG_INFINITY];
        let t = spearman_trend(&xs, &ys).unwrap();
        assert_eq!(t.rho, -1.0);
        assert_eq!(t.p_decreasing, 0.0);
    }

    #[test]
    fn reference_p_value() {
        let xs = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0];
        let ys = [2.0, 1.0, 4.0, 3.0, 6.0, 5.0, 8.0, 7.0];
        let t = spearman_trend(&xs, &ys).unwrap();
        assert!((t.rho - 0.904_761_904_761_904_8).abs() < 1e-12);
        // Two-sided value 0.0020082755054294677 halved.
        assert!((t.p_increasing - 0.001_004_137_752_714_733_8).abs() < 1e-9);
    }
}
