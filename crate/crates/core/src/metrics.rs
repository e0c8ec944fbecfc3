//! Voxel- and cluster-level overlap metrics for one subject, and the
//! across-subject volume/count correlation.
//!
//! Degenerate cases are never forced to 0 or 1 when a ratio has a zero
//! denominator. The affected metric is `None` and the record carries a flag:
//!
//! | reference | prediction | dsc  | sen  | ppv  |
//! |-----------|------------|------|------|------|
//! | empty     | empty      | None | None | None |
//! | empty     | non-empty  | 0    | None | 0    |
//! | non-empty | empty      | 0    | 0    | None |

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ccl::{label_components, Connectivity};
use crate::volume::{
    foreground_volume, intersect, overlap_count, BinaryMask, Region, RoiMask, VolumeError,
    VolumeUnits,
};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error(transparent)]
    Grid(#[from] VolumeError),
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct VoxelCounts {
    pub overlap: usize,
    pub manual: usize,
    pub algo: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClusterCounts {
    pub n_manual: usize,
    pub n_algo: usize,
    /// Manual clusters touched by at least one predicted voxel.
    pub n_manual_hit: usize,
    /// Predicted clusters touching at least one manual voxel.
    pub n_algo_hit: usize,
}

/// Dice, sensitivity and PPV; `None` where undefined.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Overlap {
    pub dsc: Option<f64>,
    pub sen: Option<f64>,
    pub ppv: Option<f64>,
}

impl Overlap {
    /// Applies the ratio definitions to hit counts on each side.
    ///
    /// `manual_hit` and `algo_hit` coincide for voxels (the overlap count);
    /// for clusters they are the per-side hit counts.
    fn from_counts(manual_hit: usize, manual: usize, algo_hit: usize, algo: usize) -> Self {
        let ratio = |num: usize, den: usize| (den > 0).then(|| num as f64 / den as f64);
        let sen = ratio(manual_hit, manual);
        let ppv = ratio(algo_hit, algo);
        let dsc = ratio(manual_hit + algo_hit, manual + algo);
        Overlap { dsc, sen, ppv }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct DegenerateFlags {
    /// The ROI itself contained no voxels.
    pub empty_roi: bool,
    /// No reference foreground inside the evaluated region.
    pub ref_empty: bool,
    /// No predicted foreground inside the evaluated region.
    pub pred_empty: bool,
}

impl DegenerateFlags {
    pub fn any(&self) -> bool {
        self.empty_roi || self.ref_empty || self.pred_empty
    }

    /// `|`-separated flag names, empty when none are set.
    pub fn to_field(&self) -> String {
        let mut parts = Vec::new();
        if self.empty_roi {
            parts.push("empty_roi");
        }
        if self.ref_empty {
            parts.push("ref_empty");
        }
        if self.pred_empty {
            parts.push("pred_empty");
        }
        parts.join("|")
    }

    pub fn from_field(s: &str) -> Result<Self, String> {
        let mut flags = DegenerateFlags::default();
        for part in s.split('|').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "empty_roi" => flags.empty_roi = true,
                "ref_empty" => flags.ref_empty = true,
                "pred_empty" => flags.pred_empty = true,
                other => return Err(format!("unknown degenerate flag '{other}'")),
            }
        }
        Ok(flags)
    }
}

/// One subject's metrics within one region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectMetrics {
    pub subject_id: String,
    pub region: Region,
    pub connectivity: Connectivity,
    pub dsc_vox: Option<f64>,
    pub sen_vox: Option<f64>,
    pub ppv_vox: Option<f64>,
    pub dsc_num: Option<f64>,
    pub sen_num: Option<f64>,
    pub ppv_num: Option<f64>,
    pub voxels: VoxelCounts,
    pub clusters: ClusterCounts,
    pub vol_manual_mm3: f64,
    pub vol_algo_mm3: f64,
    pub flags: DegenerateFlags,
}

/// The six per-subject ratios, in report order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    DscVox,
    SenVox,
    PpvVox,
    DscNum,
    SenNum,
    PpvNum,
}

impl Metric {
    pub const ALL: [Metric; 6] = [
        Metric::DscVox,
        Metric::SenVox,
        Metric::PpvVox,
        Metric::DscNum,
        Metric::SenNum,
        Metric::PpvNum,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Metric::DscVox => "dsc_vox",
            Metric::SenVox => "sen_vox",
            Metric::PpvVox => "ppv_vox",
            Metric::DscNum => "dsc_num",
            Metric::SenNum => "sen_num",
            Metric::PpvNum => "ppv_num",
        }
    }
}

impl std::fmt::Display for Metric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Metric {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Metric::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown metric '{s}'"))
    }
}

impl SubjectMetrics {
    pub fn get(&self, metric: Metric) -> Option<f64> {
        match metric {
            Metric::DscVox => self.dsc_vox,
            Metric::SenVox => self.sen_vox,
            Metric::PpvVox => self.ppv_vox,
            Metric::DscNum => self.dsc_num,
            Metric::SenNum => self.sen_num,
            Metric::PpvNum => self.ppv_num,
        }
    }
}

fn restrict(
    pred: &BinaryMask,
    reference: &BinaryMask,
    roi: Option<&RoiMask>,
) -> Result<(BinaryMask, BinaryMask), VolumeError> {
    pred.grid().check_compatible(reference.grid())?;
    match roi {
        Some(roi) => Ok((roi.restrict(pred)?, roi.restrict(reference)?)),
        None => Ok((pred.clone(), reference.clone())),
    }
}

fn voxel_overlap(pred: &BinaryMask, reference: &BinaryMask) -> Result<(VoxelCounts, Overlap), VolumeError> {
    let counts = VoxelCounts {
        overlap: overlap_count(pred, reference)?,
        manual: reference.foreground_count(),
        algo: pred.foreground_count(),
    };
    let o = Overlap::from_counts(counts.overlap, counts.manual, counts.overlap, counts.algo);
    Ok((counts, o))
}

/// Voxel-level Dice, sensitivity and PPV of `pred` against the reference.
pub fn voxel_metrics(
    pred: &BinaryMask,
    reference: &BinaryMask,
    roi: Option<&RoiMask>,
) -> Result<(VoxelCounts, Overlap), MetricsError> {
    let (p, r) = restrict(pred, reference, roi)?;
    Ok(voxel_overlap(&p, &r)?)
}

fn cluster_overlap(
    pred: &BinaryMask,
    reference: &BinaryMask,
    conn: Connectivity,
) -> Result<(ClusterCounts, Overlap), VolumeError> {
    pred.grid().check_compatible(reference.grid())?;
    let lp = label_components(pred, conn);
    let lr = label_components(reference, conn);
    let mut algo_hit = vec![false; lp.component_count() + 1];
    let mut manual_hit = vec![false; lr.component_count() + 1];
    for (&a, &m) in lp.labels().iter().zip(lr.labels()) {
        if a != 0 && m != 0 {
            algo_hit[a as usize] = true;
            manual_hit[m as usize] = true;
        }
    }
    let counts = ClusterCounts {
        n_manual: lr.component_count(),
        n_algo: lp.component_count(),
        n_manual_hit: manual_hit.iter().filter(|&&h| h).count(),
        n_algo_hit: algo_hit.iter().filter(|&&h| h).count(),
    };
    let o = Overlap::from_counts(
        counts.n_manual_hit,
        counts.n_manual,
        counts.n_algo_hit,
        counts.n_algo,
    );
    Ok((counts, o))
}

/// Cluster-level metrics. Components are labeled after ROI restriction, and a
/// cluster counts as detected when any of its voxels overlaps the other mask.
pub fn cluster_metrics(
    pred: &BinaryMask,
    reference: &BinaryMask,
    conn: Connectivity,
    roi: Option<&RoiMask>,
) -> Result<(ClusterCounts, Overlap), MetricsError> {
    let (p, r) = restrict(pred, reference, roi)?;
    Ok(cluster_overlap(&p, &r, conn)?)
}

/// Sample Pearson correlation; `None` for fewer than 3 pairs or a constant side.
pub fn pearson_r(xs: &[f64], ys: &[f64]) -> Result<Option<f64>, MetricsError> {
    if xs.len() != ys.len() {
        return Err(MetricsError::LengthMismatch(xs.len(), ys.len()));
    }
    if xs.len() < 3 {
        return Ok(None);
    }
    // single-pass co-moment update
    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (k, (&x, &y)) in xs.iter().zip(ys).enumerate() {
        let n = (k + 1) as f64;
        let dx = x - mx;
        let dy = y - my;
        mx += dx / n;
        my += dy / n;
        sxx += dx * (x - mx);
        syy += dy * (y - my);
        sxy += dx * (y - my);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Ok(None);
    }
    Ok(Some((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0)))
}

/// Evaluates one subject in each ROI, or over the whole grid when `rois` is empty.
pub fn evaluate_subject(
    subject_id: &str,
    pred: &BinaryMask,
    reference: &BinaryMask,
    rois: &[RoiMask],
    conn: Connectivity,
) -> Result<Vec<SubjectMetrics>, MetricsError> {
    pred.grid().check_compatible(reference.grid())?;
    for roi in rois {
        pred.grid().check_compatible(roi.mask.grid())?;
    }
    let whole;
    let regions: Vec<(Region, Option<&RoiMask>)> = if rois.is_empty() {
        whole = [(Region::Whole, None)];
        whole.to_vec()
    } else {
        rois.iter().map(|r| (r.region.clone(), Some(r))).collect()
    };

    regions
        .into_iter()
        .map(|(region, roi)| {
            let (p, r) = match roi {
                Some(roi) => (intersect(pred, &roi.mask)?, intersect(reference, &roi.mask)?),
                None => (pred.clone(), reference.clone()),
            };
            let (voxels, vox) = voxel_overlap(&p, &r)?;
            let (clusters, num) = cluster_overlap(&p, &r, conn)?;
            let flags = DegenerateFlags {
                empty_roi: roi.is_some_and(|roi| !roi.mask.has_foreground()),
                ref_empty: voxels.manual == 0,
                pred_empty: voxels.algo == 0,
            };
            Ok(SubjectMetrics {
                subject_id: subject_id.to_string(),
                region,
                connectivity: conn,
                dsc_vox: vox.dsc,
                sen_vox: vox.sen,
                ppv_vox: vox.ppv,
                dsc_num: num.dsc,
                sen_num: num.sen,
                ppv_num: num.ppv,
                voxels,
                clusters,
                vol_manual_mm3: foreground_volume(&r, VolumeUnits::Mm3),
                vol_algo_mm3: foreground_volume(&p, VolumeUnits::Mm3),
                flags,
            })
        })
        .collect()
}
