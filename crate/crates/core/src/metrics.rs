//! Pose and retrieval metrics, plus the size/occlusion/truncation breakdown.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::rotation::{geodesic_distance, RotationMatrix};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricsError {
    #[error("no records left after filtering")]
    EmptyAfterFilter,
    #[error("bucketed report needs at least 3 records, got {0}")]
    TooFewRecords(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub instance_id: String,
    pub pred_rotation: RotationMatrix,
    pub gt_rotation: RotationMatrix,
    pub pred_shape_id: String,
    pub gt_shape_id: String,
    #[serde(default)]
    pub bbox_area: f64,
    #[serde(default)]
    pub occluded: bool,
    #[serde(default)]
    pub truncated: bool,
    #[serde(default)]
    pub category: String,
}

impl PredictionRecord {
    pub fn pose_error(&self) -> f64 {
        geodesic_distance(&self.pred_rotation, &self.gt_rotation)
    }
}

fn nonempty(records: &[PredictionRecord]) -> Result<(), MetricsError> {
    if records.is_empty() {
        Err(MetricsError::EmptyAfterFilter)
    } else {
        Ok(())
    }
}

/// Median of a slice (mean of the middle pair for even lengths).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    })
}

/// Median geodesic pose error, in degrees.
pub fn med_err(records: &[PredictionRecord]) -> Result<f64, MetricsError> {
    nonempty(records)?;
    let errs: Vec<f64> = records.iter().map(PredictionRecord::pose_error).collect();
    Ok(median(&errs).unwrap().to_degrees())
}

/// Fraction of records with pose error strictly below 30°.
pub fn acc_pi6(records: &[PredictionRecord]) -> Result<f64, MetricsError> {
    nonempty(records)?;
    let threshold = std::f64::consts::FRAC_PI_6;
    let hits = records
        .iter()
        .filter(|r| r.pose_error() < threshold)
        .count();
    Ok(hits as f64 / records.len() as f64)
}

pub fn top1_acc(records: &[PredictionRecord]) -> Result<f64, MetricsError> {
    nonempty(records)?;
    let hits = records
        .iter()
        .filter(|r| r.pred_shape_id == r.gt_shape_id)
        .count();
    Ok(hits as f64 / records.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketMetrics {
    pub count: usize,
    pub med_err_deg: f64,
    pub acc_pi6: f64,
    pub top1_acc: f64,
}

impl BucketMetrics {
    pub fn compute(records: &[PredictionRecord]) -> Result<Self, MetricsError> {
        Ok(Self {
            count: records.len(),
            med_err_deg: med_err(records)?,
            acc_pi6: acc_pi6(records)?,
            top1_acc: top1_acc(records)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BucketReport {
    /// Bucket name → metrics; empty buckets are absent.
    pub buckets: BTreeMap<String, BucketMetrics>,
    /// Category → metrics over that category's Default records.
    pub per_category: BTreeMap<String, BucketMetrics>,
    pub warnings: Vec<String>,
}

pub const BUCKET_NAMES: [&str; 5] = ["default", "small", "large", "occluded", "truncated"];

/// Default drops occluded or truncated records. Small and Large are the
/// bottom and top `floor(n/3)` of the Default set ordered by
/// `(bbox_area, instance_id)`. Occluded and Truncated ignore the exclusion.
pub fn bucketed_report(records: &[PredictionRecord]) -> Result<BucketReport, MetricsError> {
    if records.len() < 3 {
        return Err(MetricsError::TooFewRecords(records.len()));
    }
    let default: Vec<PredictionRecord> = records
        .iter()
        .filter(|r| !r.occluded && !r.truncated)
        .cloned()
        .collect();
    let mut by_size = default.clone();
    by_size.sort_by(|a, b| {
        a.bbox_area
            .total_cmp(&b.bbox_area)
            .then_with(|| a.instance_id.cmp(&b.instance_id))
    });
    let third = by_size.len() / 3;
    let small = by_size[..third].to_vec();
    let large = by_size[by_size.len() - third..].to_vec();
    let occluded: Vec<_> = records.iter().filter(|r| r.occluded).cloned().collect();
    let truncated: Vec<_> = records.iter().filter(|r| r.truncated).cloned().collect();

    let mut report = BucketReport {
        buckets: BTreeMap::new(),
        per_category: BTreeMap::new(),
        warnings: Vec::new(),
    };
    for (name, set) in BUCKET_NAMES
        .iter()
        .zip([&default, &small, &large, &occluded, &truncated])
    {
        match BucketMetrics::compute(set) {
            Ok(m) => {
                report.buckets.insert(name.to_string(), m);
            }
            Err(_) => report
                .warnings
                .push(format!("bucket {name} is empty; omitted")),
        }
    }
    let mut cats: BTreeMap<&str, Vec<PredictionRecord>> = BTreeMap::new();
    for r in &default {
        cats.entry(r.category.as_str()).or_default().push(r.clone());
    }
    for (c, set) in cats {
        report
            .per_category
            .insert(c.to_string(), BucketMetrics::compute(&set)?);
    }
    Ok(report)
}
