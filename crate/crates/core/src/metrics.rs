//! Depth and disparity error metrics over pixels with valid ground truth.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

pub const DELTA_BASE: f64 = 1.25;

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct DepthMetrics {
    pub abs_rel: f64,
    pub sq_rel: f64,
    pub rmse: f64,
    /// Root mean squared natural-log difference.
    pub rmse_log: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub delta3: f64,
    pub valid_count: u64,
}

/// Evaluation window in pixels: rows `top..bottom`, columns `left..right`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Crop {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Crop {
    /// Parses `t,b,l,r`.
    pub fn parse(text: &str) -> Option<Crop> {
        let v: Vec<usize> = text
            .split(',')
            .map(|p| p.trim().parse().ok())
            .collect::<Option<_>>()?;
        match v[..] {
            [top, bottom, left, right] if top < bottom && left < right => Some(Crop {
                top,
                bottom,
                left,
                right,
            }),
            _ => None,
        }
    }
}

pub fn compute_metrics<T: Element>(pred: &Tensor<T>, gt: &Tensor<T>, min_valid: f64) -> Result<DepthMetrics> {
    compute_metrics_cropped(pred, gt, min_valid, None)
}

pub fn compute_metrics_cropped<T: Element>(
    pred: &Tensor<T>,
    gt: &Tensor<T>,
    min_valid: f64,
    crop: Option<Crop>,
) -> Result<DepthMetrics> {
    let s = pred.shape();
    if s != gt.shape() {
        return Err(Error::Metrics(format!(
            "prediction {} and ground truth {} differ in shape",
            s,
            gt.shape()
        )));
    }
    let crop = crop.unwrap_or(Crop {
        top: 0,
        bottom: s.h,
        left: 0,
        right: s.w,
    });
    if crop.bottom > s.h || crop.right > s.w || crop.top >= crop.bottom || crop.left >= crop.right {
        return Err(Error::Metrics(format!(
            "crop {},{},{},{} outside a {}x{} map",
            crop.top, crop.bottom, crop.left, crop.right, s.h, s.w
        )));
    }
    let thresholds = [DELTA_BASE, DELTA_BASE.powi(2), DELTA_BASE.powi(3)];
    let (mut abs_rel, mut sq_rel, mut sq, mut sq_log) = (0.0, 0.0, 0.0, 0.0);
    let mut inliers = [0u64; 3];
    let mut count = 0u64;
    for n in 0..s.n {
        for c in 0..s.c {
            for y in crop.top..crop.bottom {
                for x in crop.left..crop.right {
                    let d = gt.at(n, c, y, x).to_f64().unwrap_or(f64::NAN);
                    if !(d > min_valid) {
                        continue;
                    }
                    let p = pred.at(n, c, y, x).to_f64().unwrap_or(f64::NAN);
                    if !(p > 0.0) || !p.is_finite() {
                        return Err(Error::Metrics(format!(
                            "prediction {p} at ({n},{c},{y},{x}) must be positive where ground truth is valid"
                        )));
                    }
                    let diff = d - p;
                    abs_rel += diff.abs() / d;
                    sq_rel += diff * diff / d;
                    sq += diff * diff;
                    let dl = d.ln() - p.ln();
                    sq_log += dl * dl;
                    let ratio = (d / p).max(p / d);
                    for (hit, &t) in inliers.iter_mut().zip(&thresholds) {
                        if ratio < t {
                            *hit += 1;
                        }
                    }
                    count += 1;
                }
            }
        }
    }
    if count == 0 {
        return Err(Error::Metrics(format!(
            "no ground-truth pixels above {min_valid}"
        )));
    }
    let m = count as f64;
    Ok(DepthMetrics {
        abs_rel: abs_rel / m,
        sq_rel: sq_rel / m,
        rmse: (sq / m).sqrt(),
        rmse_log: (sq_log / m).sqrt(),
        delta1: inliers[0] as f64 / m,
        delta2: inliers[1] as f64 / m,
        delta3: inliers[2] as f64 / m,
        valid_count: count,
    })
}

/// Valid-count-weighted mean of every field.
pub fn aggregate(records: &[DepthMetrics]) -> Result<DepthMetrics> {
    let total: u64 = records.iter().map(|r| r.valid_count).sum();
    if records.is_empty() || total == 0 {
        return Err(Error::Metrics("nothing to aggregate".into()));
    }
    let mean = |f: fn(&DepthMetrics) -> f64| {
        records.iter().map(|r| f(r) * r.valid_count as f64).sum::<f64>() / total as f64
    };
    if let [single] = records {
        return Ok(*single);
    }
    Ok(DepthMetrics {
        abs_rel: mean(|r| r.abs_rel),
        sq_rel: mean(|r| r.sq_rel),
        rmse: mean(|r| r.rmse),
        rmse_log: mean(|r| r.rmse_log),
        delta1: mean(|r| r.delta1),
        delta2: mean(|r| r.delta2),
        delta3: mean(|r| r.delta3),
        valid_count: total,
    })
}

pub const CSV_HEADER: &str = "file,abs_rel,sq_rel,rmse,rmse_log,d1,d2,d3,valid_count";

fn csv_row(out: &mut String, label: &str, m: &DepthMetrics) {
    let _ = writeln!(
        out,
        "{label},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
        m.abs_rel, m.sq_rel, m.rmse, m.rmse_log, m.delta1, m.delta2, m.delta3, m.valid_count
    );
}

/// Per-file rows followed by an `AGGREGATE` row.
pub fn metrics_csv(rows: &[(String, DepthMetrics)]) -> Result<String> {
    let records: Vec<DepthMetrics> = rows.iter().map(|(_, m)| *m).collect();
    let agg = aggregate(&records)?;
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for (name, m) in rows {
        csv_row(&mut s, name, m);
    }
    csv_row(&mut s, "AGGREGATE", &agg);
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn row(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(Shape::new(1, 1, 1, v.len()), v.to_vec()).unwrap()
    }

    #[test]
    fn identity_is_perfect() {
        let t = row(&[0.5, 1.0, 7.0]);
        let m = compute_metrics(&t, &t, 0.0).unwrap();
        assert_eq!((m.abs_rel, m.sq_rel, m.rmse, m.rmse_log), (0.0, 0.0, 0.0, 0.0));
        assert_eq!((m.delta1, m.delta2, m.delta3), (1.0, 1.0, 1.0));
    }

    #[test]
    fn mask_and_errors() {
        let m = compute_metrics(&row(&[-1.0, 2.0]), &row(&[0.0, 2.0]), 0.0).unwrap();
        assert_eq!(m.valid_count, 1);
        assert!(compute_metrics(&row(&[1.0]), &row(&[0.0]), 0.0).is_err());
        assert!(compute_metrics(&row(&[0.0]), &row(&[1.0]), 0.0).is_err());
        assert!(compute_metrics(&row(&[1.0, 1.0]), &row(&[1.0]), 0.0).is_err());
        assert!(aggregate(&[]).is_err());
    }

    #[test]
    fn crop_window() {
        let t = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let p = Tensor::from_vec(Shape::new(1, 1, 2, 2), vec![9.0, 2.0, 3.0, 4.0]).unwrap();
        let crop = Crop::parse("1,2,0,2").unwrap();
        let m = compute_metrics_cropped(&p, &t, 0.0, Some(crop)).unwrap();
        assert_eq!((m.valid_count, m.rmse), (2, 0.0));
        assert!(Crop::parse("2,1,0,2").is_none());
        assert!(compute_metrics_cropped(&p, &t, 0.0, Crop::parse("0,3,0,2")).is_err());
    }

    #[test]
    fn csv_has_aggregate_row() {
        let m = compute_metrics(&row(&[1.0, 2.0]), &row(&[2.0, 4.0]), 0.0).unwrap();
        let csv = metrics_csv(&[("a".into(), m)]).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert!(lines[1].starts_with("a,0.500000,0.750000,1.581139,"));
        assert!(lines[2].starts_with("AGGREGATE,0.500000"));
    }
}
