//! Mahalanobis distance of (FID, Jitter) pairs from the ground-truth point.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodPoint {
    pub name: String,
    pub fid: f64,
    pub jitter: f64,
}

impl MethodPoint {
    pub fn new(name: impl Into<String>, fid: f64, jitter: f64) -> Self {
        MethodPoint {
            name: name.into(),
            fid,
            jitter,
        }
    }

    fn xy(&self) -> [f64; 2] {
        [self.fid, self.jitter]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutlierRule {
    /// Flag points whose squared distance from the sample mean exceeds the
    /// χ²(2) 97.5% quantile, refitting once.
    Mahalanobis,
    /// Robust z-score on the jitter values.
    MadZScore,
    None,
}

/// χ²(2) 97.5% quantile, `−2 ln 0.025`.
pub const CHI2_2_975: f64 = 7.377_758_908_227_871;
pub const MAD_Z_THRESHOLD: f64 = 3.0;
pub const MAD_FLOOR: f64 = 1e-12;
const RIDGE: f64 = 1e-10;

pub type Cov2 = [[f64; 2]; 2];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FidjEntry {
    pub name: String,
    pub fid: f64,
    pub jitter: f64,
    pub inlier: bool,
    pub fidj: f64,
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// `0.6745·(v − median)/MAD` for each value, with MAD floored at [`MAD_FLOOR`].
pub fn robust_z_scores(values: &[f64]) -> Vec<f64> {
    let med = median(&mut values.to_vec());
    let mut dev: Vec<f64> = values.iter().map(|v| (v - med).abs()).collect();
    let mad = median(&mut dev).max(MAD_FLOOR);
    values.iter().map(|v| 0.6745 * (v - med) / mad).collect()
}

/// True for values with `|z| > 3`.
pub fn mad_outliers(values: &[f64]) -> Result<Vec<bool>> {
    if values.len() < 3 {
        return Err(Error::InvalidInput(format!("MAD rule needs 3 values, got {}", values.len())));
    }
    Ok(robust_z_scores(values).into_iter().map(|z| z.abs() > MAD_Z_THRESHOLD).collect())
}

/// Unbiased 2×2 covariance with the ridge `1e-10·tr/2·I`.
pub fn covariance(points: &[[f64; 2]]) -> Result<([f64; 2], Cov2)> {
    if points.len() < 2 {
        return Err(Error::InvalidInput(format!("covariance needs 2 points, got {}", points.len())));
    }
    let n = points.len() as f64;
    let mean = [
        points.iter().map(|p| p[0]).sum::<f64>() / n,
        points.iter().map(|p| p[1]).sum::<f64>() / n,
    ];
    let mut c = [[0.0; 2]; 2];
    for p in points {
        let d = [p[0] - mean[0], p[1] - mean[1]];
        for i in 0..2 {
            for j in 0..2 {
                c[i][j] += d[i] * d[j] / (n - 1.0);
            }
        }
    }
    let ridge = RIDGE * (c[0][0] + c[1][1]) / 2.0;
    c[0][0] += ridge;
    c[1][1] += ridge;
    Ok((mean, c))
}

fn inverse(c: &Cov2) -> Result<Cov2> {
    let det = c[0][0] * c[1][1] - c[0][1] * c[1][0];
    if !(det > 0.0 && det.is_finite()) {
        return Err(Error::SingularCovariance(format!("determinant {det:e}")));
    }
    Ok([[c[1][1] / det, -c[0][1] / det], [-c[1][0] / det, c[0][0] / det]])
}

/// `√((x − μ)ᵀ S⁻¹ (x − μ))`.
pub fn mahalanobis(x: [f64; 2], mu: [f64; 2], cov: &Cov2) -> Result<f64> {
    let inv = inverse(cov)?;
    Ok(squared(x, mu, &inv).max(0.0).sqrt())
}

fn squared(x: [f64; 2], mu: [f64; 2], inv: &Cov2) -> f64 {
    let d = [x[0] - mu[0], x[1] - mu[1]];
    d[0] * (inv[0][0] * d[0] + inv[0][1] * d[1]) + d[1] * (inv[1][0] * d[0] + inv[1][1] * d[1])
}

fn flag_far(points: &[[f64; 2]], keep: &[bool]) -> Result<Vec<bool>> {
    let fit: Vec<[f64; 2]> = points.iter().zip(keep).filter(|(_, k)| **k).map(|(p, _)| *p).collect();
    let (mean, cov) = covariance(&fit)?;
    let inv = inverse(&cov)?;
    Ok(points.iter().map(|p| squared(*p, mean, &inv) > CHI2_2_975).collect())
}

/// Flags points far from the cloud: fit on all points, flag, refit on the
/// survivors and flag again.
pub fn mahalanobis_outliers(points: &[MethodPoint]) -> Result<Vec<bool>> {
    if points.len() < 3 {
        return Err(Error::InvalidInput(format!("Mahalanobis rule needs 3 points, got {}", points.len())));
    }
    let xy: Vec<[f64; 2]> = points.iter().map(MethodPoint::xy).collect();
    let first = flag_far(&xy, &vec![true; xy.len()])?;
    let keep: Vec<bool> = first.iter().map(|f| !f).collect();
    if keep.iter().filter(|k| **k).count() < 2 {
        return Ok(first);
    }
    flag_far(&xy, &keep)
}

/// Inlier mask for `rule`.
pub fn inliers(points: &[MethodPoint], rule: OutlierRule) -> Result<Vec<bool>> {
    let outliers = match rule {
        OutlierRule::None => vec![false; points.len()],
        OutlierRule::MadZScore => mad_outliers(&points.iter().map(|p| p.jitter).collect::<Vec<_>>())?,
        OutlierRule::Mahalanobis => mahalanobis_outliers(points)?,
    };
    Ok(outliers.into_iter().map(|o| !o).collect())
}

/// Distance of every method from `ground_truth`, with the covariance fitted
/// on the points marked in `inlier`.
pub fn fidj_with_inliers(points: &[MethodPoint], ground_truth: &MethodPoint, inlier: &[bool]) -> Result<Vec<FidjEntry>> {
    if inlier.len() != points.len() {
        return Err(Error::Shape("inlier mask length differs from point count".into()));
    }
    if points.iter().chain([ground_truth]).any(|p| !(p.fid.is_finite() && p.jitter.is_finite())) {
        return Err(Error::NonFinite("method point".into()));
    }
    let fit: Vec<[f64; 2]> = points.iter().zip(inlier).filter(|(_, k)| **k).map(|(p, _)| p.xy()).collect();
    if fit.len() < 2 {
        return Err(Error::InvalidInput(format!("{} inliers, need at least 2", fit.len())));
    }
    let (_, cov) = covariance(&fit)?;
    let inv = inverse(&cov)?;
    Ok(points
        .iter()
        .zip(inlier)
        .map(|(p, &k)| FidjEntry {
            name: p.name.clone(),
            fid: p.fid,
            jitter: p.jitter,
            inlier: k,
            fidj: squared(p.xy(), ground_truth.xy(), &inv).max(0.0).sqrt(),
        })
        .collect())
}

pub fn mahalanobis_fidj(points: &[MethodPoint], ground_truth: &MethodPoint, rule: OutlierRule) -> Result<Vec<FidjEntry>> {
    let mask = inliers(points, rule)?;
    fidj_with_inliers(points, ground_truth, &mask)
}

/// `method,fid,jitter,inlier_flag,fidj` rows.
pub fn fidj_csv(entries: &[FidjEntry]) -> String {
    let mut out = String::from("method,fid,jitter,inlier_flag,fidj\n");
    for e in entries {
        out.push_str(&format!("{},{},{},{},{}\n", e.name, e.fid, e.jitter, e.inlier as u8, e.fidj));
    }
    out
}
