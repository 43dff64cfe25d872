//! Parsing of depth and parameter grids.

use anyhow::{bail, Context, Result};

const DEFAULT_POINTS: usize = 10;

/// `start:stop` gives 10 log-spaced integers, `start:stop:n` gives `n`;
/// otherwise a comma-separated list.
pub fn parse_depths(s: &str) -> Result<Vec<usize>> {
    let parts: Vec<&str> = s.split(':').collect();
    let depths = match parts.as_slice() {
        [a, b] => log_spaced(parse_int(a)?, parse_int(b)?, DEFAULT_POINTS)?,
        [a, b, n] => log_spaced(parse_int(a)?, parse_int(b)?, parse_int(n)?)?,
        [_] => s.split(',').map(parse_int).collect::<Result<Vec<_>>>()?,
        _ => bail!("cannot parse depth grid {s:?}"),
    };
    if depths.is_empty() || depths.contains(&0) {
        bail!("depth grid {s:?} must contain positive integers");
    }
    Ok(depths)
}

fn parse_int(s: &str) -> Result<usize> {
    s.trim()
        .parse()
        .with_context(|| format!("{s:?} is not a non-negative integer"))
}

fn parse_float(s: &str) -> Result<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .with_context(|| format!("{s:?} is not a number"))?;
    if !v.is_finite() {
        bail!("{s:?} is not finite");
    }
    Ok(v)
}

/// Rounded geometric grid from `start` to `stop`, duplicates removed.
pub fn log_spaced(start: usize, stop: usize, n: usize) -> Result<Vec<usize>> {
    if start == 0 || stop < start || n == 0 {
        bail!("invalid log grid {start}:{stop}:{n}");
    }
    if n == 1 {
        return Ok(vec![start]);
    }
    let (a, b) = ((start as f64).ln(), (stop as f64).ln());
    let mut out: Vec<usize> = (0..n)
        .map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp().round() as usize)
        .collect();
    out.dedup();
    Ok(out)
}

/// `a:b:step` (inclusive, linear) or a comma-separated list.
pub fn parse_values(s: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = s.split(':').collect();
    let values = match parts.as_slice() {
        [a, b, step] => linear(parse_float(a)?, parse_float(b)?, parse_float(step)?)?,
        [_] => s.split(',').map(parse_float).collect::<Result<Vec<_>>>()?,
        _ => bail!("cannot parse grid {s:?}; use a:b:step or a comma list"),
    };
    if values.is_empty() {
        bail!("grid {s:?} is empty");
    }
    Ok(values)
}

/// `a, a + step, …` up to `b` inclusive; values are `a + i·step` rounded to
/// 12 decimals so that `0.2:1.3:0.1` ends exactly at 1.3.
pub fn linear(a: f64, b: f64, step: f64) -> Result<Vec<f64>> {
    if step.is_nan() || step <= 0.0 || b < a {
        bail!("invalid linear grid {a}:{b}:{step}");
    }
    let n = ((b - a) / step + 1e-9).floor() as usize + 1;
    Ok((0..n)
        .map(|i| ((a + step * i as f64) * 1e12).round() / 1e12)
        .collect())
}
