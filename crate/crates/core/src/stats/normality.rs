use crate::{Error, Result};

/// Omnibus skewness–kurtosis normality test.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormalityTest {
    pub z_skewness: f64,
    pub z_kurtosis: f64,
    /// `K² = Z_s² + Z_k²`, asymptotically χ²(2).
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

fn central_moments(xs: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for &x in xs {
        let d = x - m;
        let d2 = d * d;
        m2 += d2;
        m3 += d2 * d;
        m4 += d2 * d2;
    }
    (m2 / n, m3 / n, m4 / n)
}

fn skew_z(b1: f64, n: f64) -> f64 {
    let y = b1 * ((n + 1.0) * (n + 3.0) / (6.0 * (n - 2.0))).sqrt();
    let beta2 = 3.0 * (n * n + 27.0 * n - 70.0) * (n + 1.0) * (n + 3.0)
        / ((n - 2.0) * (n + 5.0) * (n + 7.0) * (n + 9.0));
    let w2 = -1.0 + (2.0 * (beta2 - 1.0)).sqrt();
    let delta = 1.0 / (0.5 * w2.ln()).sqrt();
    let alpha = (2.0 / (w2 - 1.0)).sqrt();
    let y = if y == 0.0 { 1.0 } else { y };
    let r = y / alpha;
    delta * (r + (r * r + 1.0).sqrt()).ln()
}

fn kurtosis_z(b2: f64, n: f64) -> f64 {
    let e = 3.0 * (n - 1.0) / (n + 1.0);
    let var = 24.0 * n * (n - 2.0) * (n - 3.0) / ((n + 1.0).powi(2) * (n + 3.0) * (n + 5.0));
    let x = (b2 - e) / var.sqrt();
    let sqrt_beta1 = 6.0 * (n * n - 5.0 * n + 2.0) / ((n + 7.0) * (n + 9.0))
        * (6.0 * (n + 3.0) * (n + 5.0) / (n * (n - 2.0) * (n - 3.0))).sqrt();
    let a = 6.0 + 8.0 / sqrt_beta1 * (2.0 / sqrt_beta1 + (1.0 + 4.0 / (sqrt_beta1 * sqrt_beta1)).sqrt());
    let term1 = 1.0 - 2.0 / (9.0 * a);
    let denom = 1.0 + x * (2.0 / (a - 4.0)).sqrt();
    let term2 = denom.signum() * ((1.0 - 2.0 / a) / denom.abs()).cbrt();
    (term1 - term2) / (2.0 / (9.0 * a)).sqrt()
}

/// D'Agostino–Pearson `K²` test applied to `xs` directly.
pub fn dagostino_k2(xs: &[f64]) -> Result<NormalityTest> {
    const MIN: usize = 20;
    if xs.len() < MIN {
        return Err(Error::InsufficientSamples {
            required: MIN,
            actual: xs.len(),
        });
    }
    let n = xs.len() as f64;
    let (m2, m3, m4) = central_moments(xs);
    let zs = skew_z(m3 / m2.powf(1.5), n);
    let zk = kurtosis_z(m4 / (m2 * m2), n);
    let statistic = zs * zs + zk * zk;
    Ok(NormalityTest {
        z_skewness: zs,
        z_kurtosis: zk,
        statistic,
        // Survival function of χ²(2).
        p_value: (-statistic / 2.0).exp(),
        n: xs.len(),
    })
}

/// Normality test of `log(values)`; needs at least 100 finite positive values.
pub fn lognormality_test(values: &[f64]) -> Result<NormalityTest> {
    const MIN: usize = 100;
    let finite: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if finite.len() < MIN {
        return Err(Error::InsufficientSamples {
            required: MIN,
            actual: finite.len(),
        });
    }
    if finite.iter().any(|&v| v <= 0.0) {
        return Err(Error::NonPositive);
    }
    let logs: Vec<f64> = finite.iter().map(|v| v.ln()).collect();
    dagostino_k2(&logs)
}
