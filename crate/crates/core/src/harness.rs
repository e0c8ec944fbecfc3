//! Cross-validation fold definitions, manifest evaluation and the
//! subject-level aggregation behind the summary tables.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ccl::Connectivity;
use crate::metrics::{evaluate_subject, pearson_r, Metric, MetricsError, SubjectMetrics};
use crate::nifti::{read_mask, NiftiError};
use crate::volume::{wm_bg_rois, Region, RoiMask, VolumeError};

/// Site label of pooled groups.
pub const ALL_SITES: &str = "All Sites";
pub const FOLD_COUNT: usize = 5;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("manifest is empty")]
    EmptyManifest,
    #[error("leave-one-site-out needs at least 2 sites, found {0}")]
    TooFewSites(usize),
    #[error("duplicate subject id '{0}' in manifest")]
    DuplicateSubject(String),
    #[error("{path}: row {row}: {message}")]
    Schema {
        path: String,
        row: u64,
        message: String,
    },
    #[error("subject '{subject}': {source}")]
    Input {
        subject: String,
        #[source]
        source: NiftiError,
    },
    #[error("subject '{subject}': {source}")]
    Grid {
        subject: String,
        #[source]
        source: VolumeError,
    },
    #[error("no fold holds out site '{site}' for model '{model}' in region {region}")]
    MissingFold {
        model: String,
        region: String,
        site: String,
    },
    #[error("fold for model '{model}' holding out '{site}' mixes regions")]
    RegionMismatch { model: String, site: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("thread pool: {0}")]
    Pool(String),
}

/// One manifest row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub subject_id: String,
    pub site: String,
    pub pred_path: PathBuf,
    pub ref_path: PathBuf,
    #[serde(default, deserialize_with = "empty_path")]
    pub roi_wm_path: Option<PathBuf>,
    #[serde(default, deserialize_with = "empty_path")]
    pub roi_bg_path: Option<PathBuf>,
    #[serde(default, deserialize_with = "empty_path")]
    pub image_path: Option<PathBuf>,
}

fn empty_path<'de, D: serde::Deserializer<'de>>(d: D) -> Result<Option<PathBuf>, D::Error> {
    let s: Option<String> = Option::deserialize(d)?;
    Ok(s.filter(|s| !s.trim().is_empty()).map(PathBuf::from))
}

pub const MANIFEST_HEADER: [&str; 7] = [
    "subject_id",
    "site",
    "pred_path",
    "ref_path",
    "roi_wm_path",
    "roi_bg_path",
    "image_path",
];

/// Reads a manifest CSV. Relative paths are resolved against the manifest's directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<SubjectRecord>, HarnessError> {
    let path = path.as_ref();
    let shown = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| HarnessError::Schema {
            path: shown.clone(),
            row: 0,
            message: e.to_string(),
        })?;
    let headers = reader.headers().map_err(|e| HarnessError::Schema {
        path: shown.clone(),
        row: 1,
        message: e.to_string(),
    })?;
    for required in ["subject_id", "site", "pred_path", "ref_path"] {
        if !headers.iter().any(|h| h == required) {
            return Err(HarnessError::Schema {
                path: shown,
                row: 1,
                message: format!("missing column '{required}'"),
            });
        }
    }
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let resolve = |p: PathBuf| if p.is_absolute() { p } else { base.join(p) };

    let mut out: Vec<SubjectRecord> = Vec::new();
    let mut seen = BTreeSet::new();
    for row in reader.deserialize::<SubjectRecord>() {
        let rec = row.map_err(|e| HarnessError::Schema {
            path: shown.clone(),
            row: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        if rec.subject_id.is_empty() {
            return Err(HarnessError::Schema {
                path: shown.clone(),
                row: out.len() as u64 + 2,
                message: "empty subject_id".into(),
            });
        }
        if !seen.insert(rec.subject_id.clone()) {
            return Err(HarnessError::DuplicateSubject(rec.subject_id));
        }
        out.push(SubjectRecord {
            pred_path: resolve(rec.pred_path),
            ref_path: resolve(rec.ref_path),
            roi_wm_path: rec.roi_wm_path.map(resolve),
            roi_bg_path: rec.roi_bg_path.map(resolve),
            image_path: rec.image_path.map(resolve),
            ..rec
        });
    }
    Ok(out)
}

pub fn write_manifest(path: impl AsRef<Path>, records: &[SubjectRecord]) -> Result<(), HarnessError> {
    let path = path.as_ref();
    let io = |e: csv::Error| HarnessError::Io {
        path: path.display().to_string(),
        source: e.into(),
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(MANIFEST_HEADER).map_err(io)?;
    let s = |p: &Option<PathBuf>| p.as_ref().map(|p| p.display().to_string()).unwrap_or_default();
    for r in records {
        w.write_record([
            r.subject_id.clone(),
            r.site.clone(),
            r.pred_path.display().to_string(),
            r.ref_path.display().to_string(),
            s(&r.roi_wm_path),
            s(&r.roi_bg_path),
            s(&r.image_path),
        ])
        .map_err(io)?;
    }
    w.flush().map_err(|e| HarnessError::Io {
        path: path.display().to_string(),
        source: e,
    })
}

/// Sites in order of first appearance.
pub fn sites_in_order<'a>(sites: impl IntoIterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for s in sites {
        if !out.iter().any(|o| o == s) {
            out.push(s.to_string());
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Scheme {
    #[serde(rename = "5FCV")]
    FiveFoldCv,
    #[serde(rename = "LOSOCV")]
    Losocv,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::FiveFoldCv => "5FCV",
            Scheme::Losocv => "LOSOCV",
        }
    }
}

impl std::str::FromStr for Scheme {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "5fcv" | "five-fold" => Ok(Scheme::FiveFoldCv),
            "losocv" | "loso" => Ok(Scheme::Losocv),
            other => Err(format!("unknown scheme '{other}' (5fcv or losocv)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub subject_id: String,
    pub site: String,
    pub fold: String,
}

/// Fold membership of every manifest subject, in manifest order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub scheme: Scheme,
    pub seed: u64,
    /// Whether 5-fold assignment was stratified by site.
    pub stratified: bool,
    pub folds: Vec<String>,
    pub assignments: Vec<FoldAssignment>,
}

impl FoldSpec {
    pub fn fold_of(&self, subject_id: &str) -> Option<&str> {
        self.assignments
            .iter()
            .find(|a| a.subject_id == subject_id)
            .map(|a| a.fold.as_str())
    }

    pub fn members(&self, fold: &str) -> Vec<&str> {
        self.assignments
            .iter()
            .filter(|a| a.fold == fold)
            .map(|a| a.subject_id.as_str())
            .collect()
    }
}

/// Builds folds for `scheme`. 5-fold CV shuffles each site with a seeded
/// generator, then deals subjects round-robin across folds, continuing the
/// deal from site to site so both per-site and overall fold sizes differ by
/// at most one. Leave-one-site-out uses the site as the fold.
pub fn make_folds(
    manifest: &[SubjectRecord],
    scheme: Scheme,
    seed: u64,
) -> Result<FoldSpec, HarnessError> {
    if manifest.is_empty() {
        return Err(HarnessError::EmptyManifest);
    }
    let sites = sites_in_order(manifest.iter().map(|r| r.site.as_str()));
    let mut fold_of: Vec<String> = vec![String::new(); manifest.len()];
    let folds = match scheme {
        Scheme::Losocv => {
            if sites.len() < 2 {
                return Err(HarnessError::TooFewSites(sites.len()));
            }
            for (i, r) in manifest.iter().enumerate() {
                fold_of[i] = r.site.clone();
            }
            sites.clone()
        }
        Scheme::FiveFoldCv => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let labels: Vec<String> = (1..=FOLD_COUNT).map(|k| format!("fold{k}")).collect();
            let mut deal = 0usize;
            for site in &sites {
                let mut members: Vec<usize> = manifest
                    .iter()
                    .enumerate()
                    .filter(|(_, r)| &r.site == site)
                    .map(|(i, _)| i)
                    .collect();
                members.shuffle(&mut rng);
                for i in members {
                    fold_of[i] = labels[deal % FOLD_COUNT].clone();
                    deal += 1;
                }
            }
            labels
        }
    };
    Ok(FoldSpec {
        scheme,
        seed,
        stratified: scheme == Scheme::FiveFoldCv,
        folds,
        assignments: manifest
            .iter()
            .zip(fold_of)
            .map(|(r, fold)| FoldAssignment {
                subject_id: r.subject_id.clone(),
                site: r.site.clone(),
                fold,
            })
            .collect(),
    })
}

/// A subject's metric records tagged with its acquisition site.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluatedSubject {
    pub site: String,
    pub metrics: SubjectMetrics,
}

fn read_subject_mask(rec: &SubjectRecord, path: &Path) -> Result<crate::volume::BinaryMask, HarnessError> {
    read_mask(path).map_err(|source| HarnessError::Input {
        subject: rec.subject_id.clone(),
        source,
    })
}

/// Reads one subject's volumes and evaluates it in each available ROI.
///
/// When both ROI files are given, BG voxels are removed from the WM ROI so the
/// two regions are disjoint. A single ROI is used as given.
pub fn evaluate_record(
    rec: &SubjectRecord,
    conn: Connectivity,
) -> Result<Vec<EvaluatedSubject>, HarnessError> {
    let grid_err = |source: VolumeError| HarnessError::Grid {
        subject: rec.subject_id.clone(),
        source,
    };
    let pred = read_subject_mask(rec, &rec.pred_path)?;
    let reference = read_subject_mask(rec, &rec.ref_path)?;
    pred.grid().check_compatible(reference.grid()).map_err(grid_err)?;

    let wm = rec
        .roi_wm_path
        .as_ref()
        .map(|p| read_subject_mask(rec, p))
        .transpose()?;
    let bg = rec
        .roi_bg_path
        .as_ref()
        .map(|p| read_subject_mask(rec, p))
        .transpose()?;
    let rois: Vec<RoiMask> = match (wm, bg) {
        (Some(wm), Some(bg)) => {
            let (wm, bg) = wm_bg_rois(&wm, &bg).map_err(grid_err)?;
            vec![wm, bg]
        }
        (Some(wm), None) => vec![RoiMask::new(Region::Wm, wm)],
        (None, Some(bg)) => vec![RoiMask::new(Region::Bg, bg)],
        (None, None) => Vec::new(),
    };
    let records = evaluate_subject(&rec.subject_id, &pred, &reference, &rois, conn).map_err(
        |e| match e {
            MetricsError::Grid(source) => grid_err(source),
            MetricsError::LengthMismatch(..) => unreachable!("no correlation here"),
        },
    )?;
    Ok(records
        .into_iter()
        .map(|metrics| EvaluatedSubject {
            site: rec.site.clone(),
            metrics,
        })
        .collect())
}

/// Evaluates every manifest subject on a pool of `threads` workers.
/// Output follows manifest order regardless of completion order.
pub fn evaluate_manifest(
    manifest: &[SubjectRecord],
    conn: Connectivity,
    threads: usize,
) -> Result<Vec<EvaluatedSubject>, HarnessError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    let per_subject: Vec<Result<Vec<EvaluatedSubject>, HarnessError>> = pool.install(|| {
        manifest
            .par_iter()
            .map(|rec| evaluate_record(rec, conn))
            .collect()
    });
    let mut out = Vec::new();
    for r in per_subject {
        out.extend(r?);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: Metric,
    /// Mean over subjects with a defined value.
    pub mean: Option<f64>,
    /// Sample standard deviation; 0 for a single value.
    pub sd: Option<f64>,
    pub n: usize,
    /// Subjects whose value was undefined.
    pub n_excluded: usize,
}

impl MetricSummary {
    pub fn from_values(metric: Metric, values: &[Option<f64>]) -> Self {
        let defined: Vec<f64> = values.iter().flatten().copied().collect();
        let (mean, sd) = mean_sd(&defined);
        MetricSummary {
            metric,
            mean,
            sd,
            n: defined.len(),
            n_excluded: values.len() - defined.len(),
        }
    }
}

/// Mean and sample SD (n - 1); SD is 0 for one value.
pub fn mean_sd(values: &[f64]) -> (Option<f64>, Option<f64>) {
    match values.len() {
        0 => (None, None),
        1 => (Some(values[0]), Some(0.0)),
        n => {
            let mean = values.iter().sum::<f64>() / n as f64;
            let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
            (Some(mean), Some((ss / (n - 1) as f64).sqrt()))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GroupBy {
    /// One pooled "All Sites" group per region.
    Region,
    /// One group per (region, site).
    RegionSite,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub region: Region,
    pub site: String,
    pub scheme: Option<String>,
    pub n_subjects: usize,
    pub summaries: Vec<MetricSummary>,
    /// Correlation of manual and predicted volumes in voxels.
    pub r_vox: Option<f64>,
    /// Same correlation on volumes in mm³.
    pub r_vox_mm3: Option<f64>,
    /// Correlation of manual and predicted cluster counts.
    pub r_num: Option<f64>,
}

impl AggregateReport {
    pub fn summary(&self, metric: Metric) -> Option<&MetricSummary> {
        self.summaries.iter().find(|s| s.metric == metric)
    }
}

fn summarize(
    region: &Region,
    site: &str,
    scheme: Option<&str>,
    members: &[&SubjectMetrics],
) -> AggregateReport {
    let summaries = Metric::ALL
        .iter()
        .map(|&m| {
            let vals: Vec<Option<f64>> = members.iter().map(|r| r.get(m)).collect();
            MetricSummary::from_values(m, &vals)
        })
        .collect();
    let corr = |f: &dyn Fn(&SubjectMetrics) -> (f64, f64)| {
        let (xs, ys): (Vec<f64>, Vec<f64>) = members.iter().map(|r| f(r)).unzip();
        pearson_r(&xs, &ys).expect("equal lengths")
    };
    AggregateReport {
        region: region.clone(),
        site: site.to_string(),
        scheme: scheme.map(str::to_string),
        n_subjects: members.len(),
        summaries,
        r_vox: corr(&|r| (r.voxels.manual as f64, r.voxels.algo as f64)),
        r_vox_mm3: corr(&|r| (r.vol_manual_mm3, r.vol_algo_mm3)),
        r_num: corr(&|r| (r.clusters.n_manual as f64, r.clusters.n_algo as f64)),
    }
}

/// Mean/SD of each metric over subjects, excluding undefined values, plus
/// the across-subject volume and count correlations.
pub fn aggregate(
    records: &[EvaluatedSubject],
    group_by: GroupBy,
    scheme: Option<&str>,
) -> Vec<AggregateReport> {
    let regions: Vec<Region> = {
        let mut v: Vec<Region> = Vec::new();
        for r in records {
            if !v.contains(&r.metrics.region) {
                v.push(r.metrics.region.clone());
            }
        }
        v
    };
    let mut out = Vec::new();
    for region in &regions {
        let in_region: Vec<&EvaluatedSubject> = records
            .iter()
            .filter(|r| &r.metrics.region == region)
            .collect();
        match group_by {
            GroupBy::Region => {
                let members: Vec<&SubjectMetrics> = in_region.iter().map(|r| &r.metrics).collect();
                out.push(summarize(region, ALL_SITES, scheme, &members));
            }
            GroupBy::RegionSite => {
                for site in sites_in_order(in_region.iter().map(|r| r.site.as_str())) {
                    let members: Vec<&SubjectMetrics> = in_region
                        .iter()
                        .filter(|r| r.site == site)
                        .map(|r| &r.metrics)
                        .collect();
                    out.push(summarize(region, &site, scheme, &members));
                }
            }
        }
    }
    out
}

/// One leave-one-site-out model: its internal validation over the retained
/// sites and its external evaluation on the held-out site, for one region.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosoFold {
    pub model: String,
    pub held_out: String,
    pub internal: AggregateReport,
    pub external: AggregateReport,
}

impl LosoFold {
    /// Aggregates raw per-subject records into one fold entry per region.
    pub fn from_records(
        model: &str,
        held_out: &str,
        internal: &[SubjectMetrics],
        external: &[SubjectMetrics],
    ) -> Vec<LosoFold> {
        let tag = |recs: &[SubjectMetrics], site: &str| -> Vec<EvaluatedSubject> {
            recs.iter()
                .map(|m| EvaluatedSubject {
                    site: site.to_string(),
                    metrics: m.clone(),
                })
                .collect()
        };
        let int = aggregate(&tag(internal, ALL_SITES), GroupBy::Region, Some(Scheme::FiveFoldCv.as_str()));
        let ext = aggregate(&tag(external, held_out), GroupBy::RegionSite, Some(Scheme::Losocv.as_str()));
        int.into_iter()
            .filter_map(|i| {
                ext.iter().find(|e| e.region == i.region).map(|e| LosoFold {
                    model: model.to_string(),
                    held_out: held_out.to_string(),
                    internal: i,
                    external: e.clone(),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableCell {
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub n: usize,
}

impl TableCell {
    fn from_summary(s: Option<&MetricSummary>) -> Self {
        match s {
            Some(s) => TableCell {
                mean: s.mean,
                sd: s.sd,
                n: s.n,
            },
            None => TableCell {
                mean: None,
                sd: None,
                n: 0,
            },
        }
    }

    /// `0.73 (0.13)`, or `-` when undefined.
    pub fn display(&self, decimals: usize) -> String {
        match (self.mean, self.sd) {
            (Some(m), Some(s)) => format!("{m:.decimals$} ({s:.decimals$})"),
            (Some(m), None) => format!("{m:.decimals$}"),
            _ => "-".to_string(),
        }
    }
}

/// Combines per-group (mean, SD, n) into the statistics of the union of subjects.
pub fn pool_cells(cells: &[TableCell]) -> TableCell {
    let parts: Vec<(f64, f64, usize)> = cells
        .iter()
        .filter(|c| c.n > 0)
        .map(|c| (c.mean.unwrap_or(0.0), c.sd.unwrap_or(0.0), c.n))
        .collect();
    let total: usize = parts.iter().map(|p| p.2).sum();
    if total == 0 {
        return TableCell {
            mean: None,
            sd: None,
            n: 0,
        };
    }
    let mean = parts.iter().map(|(m, _, n)| m * *n as f64).sum::<f64>() / total as f64;
    let sd = if total == 1 {
        0.0
    } else {
        let ss: f64 = parts
            .iter()
            .map(|(m, s, n)| (*n as f64 - 1.0) * s * s + *n as f64 * (m - mean).powi(2))
            .sum();
        (ss / (total - 1) as f64).sqrt()
    };
    TableCell {
        mean: Some(mean),
        sd: Some(sd),
        n: total,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosoRow {
    pub model: String,
    pub region: Region,
    /// e.g. `LO ASC`.
    pub training: String,
    pub internal: TableCell,
    /// One entry per site column; only the held-out site is filled.
    pub external: Vec<Option<TableCell>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosoAverage {
    pub model: String,
    pub region: Region,
    /// Subject-weighted pool of all external cells.
    pub cell: TableCell,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LosoTable {
    pub metric: Metric,
    pub sites: Vec<String>,
    pub rows: Vec<LosoRow>,
    pub averages: Vec<LosoAverage>,
}

/// Lays out leave-one-site-out results for one metric: one row per
/// (model, region, held-out site) with the internal cell and the external
/// cell under its site column, plus a pooled external average per
/// (model, region). Every site must have a fold for every (model, region).
pub fn losocv_table(
    folds: &[LosoFold],
    sites: &[String],
    metric: Metric,
) -> Result<LosoTable, HarnessError> {
    let mut groups: Vec<(String, Region)> = Vec::new();
    for f in folds {
        if f.internal.region != f.external.region {
            return Err(HarnessError::RegionMismatch {
                model: f.model.clone(),
                site: f.held_out.clone(),
            });
        }
        let key = (f.model.clone(), f.internal.region.clone());
        if !groups.contains(&key) {
            groups.push(key);
        }
    }

    let mut rows = Vec::new();
    let mut averages = Vec::new();
    for (model, region) in groups {
        let mut externals = Vec::new();
        for (col, site) in sites.iter().enumerate() {
            let fold = folds
                .iter()
                .find(|f| f.model == model && f.internal.region == region && &f.held_out == site)
                .ok_or_else(|| HarnessError::MissingFold {
                    model: model.clone(),
                    region: region.to_string(),
                    site: site.clone(),
                })?;
            let ext = TableCell::from_summary(fold.external.summary(metric));
            let mut external = vec![None; sites.len()];
            external[col] = Some(ext);
            externals.push(ext);
            rows.push(LosoRow {
                model: model.clone(),
                region: region.clone(),
                training: format!("LO {site}"),
                internal: TableCell::from_summary(fold.internal.summary(metric)),
                external,
            });
        }
        averages.push(LosoAverage {
            model,
            region,
            cell: pool_cells(&externals),
        });
    }
    Ok(LosoTable {
        metric,
        sites: sites.to_vec(),
        rows,
        averages,
    })
}
