//! Correlation, quantiles and performance-surface interpolation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Mean accuracy and similarity of one `(ber, bandwidth)` grid cell.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SurfacePoint {
    pub ber: f64,
    pub bandwidth: usize,
    pub acc: f64,
    /// Mean estimated similarity.
    pub sim: f64,
    pub n: usize,
}

/// Pearson correlation coefficient.
pub fn pearson(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.len() != ys.len() {
        return Err(Error::shape("pearson", &[xs.len()], &[ys.len()]));
    }
    if xs.len() < 2 {
        return Err(Error::Degenerate("pearson needs at least two points"));
    }
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
        syy += (y - my) * (y - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::Degenerate("pearson of a constant series"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Quantile at `level ∈ [0, 1]` with linear interpolation between order
/// statistics.
pub fn quantile(values: &[f64], level: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::Degenerate("quantile of an empty sample"));
    }
    if !(0.0..=1.0).contains(&level) {
        return Err(Error::OutOfRange {
            what: "quantile level",
            value: level,
        });
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = level * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Ok(v[lo] + (v[hi] - v[lo]) * (pos - lo as f64))
}

fn bracket(axis: &[f64], q: f64) -> Option<(usize, usize, f64)> {
    let i = axis.iter().position(|&a| a >= q)?;
    if axis[i] == q {
        return Some((i, i, 0.0));
    }
    if i == 0 {
        return None;
    }
    Some((i - 1, i, (q - axis[i - 1]) / (axis[i] - axis[i - 1])))
}

/// Bilinear interpolation of accuracy over the `(ber, bandwidth)` grid spanned
/// by `points`. Every grid corner around the query must be present.
pub fn interpolate_surface(points: &[SurfacePoint], bandwidth: f64, ber: f64) -> Result<f64> {
    let mut bers: Vec<f64> = points.iter().map(|p| p.ber).collect();
    bers.sort_by(f64::total_cmp);
    bers.dedup();
    let mut bws: Vec<f64> = points.iter().map(|p| p.bandwidth as f64).collect();
    bws.sort_by(f64::total_cmp);
    bws.dedup();
    let out = || Error::OutOfRange {
        what: "interpolation query",
        value: if bers.first().is_some_and(|&b| ber < b) || bers.last().is_some_and(|&b| ber > b) {
            ber
        } else {
            bandwidth
        },
    };
    let (i0, i1, u) = bracket(&bers, ber).ok_or_else(out)?;
    let (j0, j1, v) = bracket(&bws, bandwidth).ok_or_else(out)?;
    let at = |i: usize, j: usize| -> Result<f64> {
        points
            .iter()
            .find(|p| p.ber == bers[i] && p.bandwidth as f64 == bws[j])
            .map(|p| p.acc)
            .ok_or(Error::Degenerate("surface grid has a missing cell"))
    };
    let a00 = at(i0, j0)?;
    let a01 = at(i0, j1)?;
    let a10 = at(i1, j0)?;
    let a11 = at(i1, j1)?;
    let lo = a00 + (a01 - a00) * v;
    let hi = a10 + (a11 - a10) * v;
    Ok(lo + (hi - lo) * u)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pt(ber: f64, bandwidth: usize, acc: f64) -> SurfacePoint {
        SurfacePoint {
            ber,
            bandwidth,
            acc,
            sim: 0.0,
            n: 1,
        }
    }

    #[test]
    fn pearson_extremes() {
        let xs = [1.0, 2.0, 3.0, 5.0];
        let ys: Vec<f64> = xs.iter().map(|x| 2.0 * x + 1.0).collect();
        assert!((pearson(&xs, &ys).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        assert!((pearson(&xs, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(pearson(&xs, &[1.0; 4]).is_err());
        assert!(pearson(&[1.0], &[1.0]).is_err());
    }

    #[test]
    fn quantiles() {
        let v = [3.0, 1.0, 2.0, 4.0];
        assert_eq!(quantile(&v, 0.0).unwrap(), 1.0);
        assert_eq!(quantile(&v, 1.0).unwrap(), 4.0);
        assert_eq!(quantile(&v, 0.5).unwrap(), 2.5);
        assert!(quantile(&[], 0.5).is_err());
    }

    #[test]
    fn interpolation() {
        let pts = [pt(0.0, 100, 0.6), pt(0.0, 200, 0.8), pt(0.1, 100, 0.4), pt(0.1, 200, 0.5)];
        assert_eq!(interpolate_surface(&pts, 200.0, 0.1).unwrap(), 0.5);
        assert!((interpolate_surface(&pts, 150.0, 0.0).unwrap() - 0.7).abs() < 1e-15);
        assert!((interpolate_surface(&pts, 150.0, 0.05).unwrap() - 0.575).abs() < 1e-15);
        assert!(interpolate_surface(&pts, 250.0, 0.0).is_err());
        assert!(interpolate_surface(&pts, 150.0, 0.2).is_err());
    }
}
