//! CSV and JSON serialization of per-subject records, comparison tables,
//! contrast rows, cluster-size histograms and aggregate tables.
//!
//! Undefined values are written as empty CSV fields and JSON `null`.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::ccl::{Connectivity, HistogramBin};
use crate::harness::{AggregateReport, LosoTable};
use crate::metrics::{ClusterCounts, DegenerateFlags, Metric, SubjectMetrics, VoxelCounts};
use crate::morphology::ContrastStat;
use crate::stats::StatResult;
use crate::volume::Region;

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}: row {row}, column '{column}': {message}")]
    Schema {
        path: String,
        row: u64,
        column: String,
        message: String,
    },
}

fn shown(path: &Path) -> String {
    path.display().to_string()
}

pub fn write_json<T: Serialize + ?Sized>(path: impl AsRef<Path>, value: &T) -> Result<(), ReportError> {
    let path = path.as_ref();
    let mut text = serde_json::to_string_pretty(value).map_err(|source| ReportError::Json {
        path: shown(path),
        source,
    })?;
    text.push('\n');
    fs::write(path, text).map_err(|source| ReportError::Io {
        path: shown(path),
        source,
    })
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: impl AsRef<Path>) -> Result<T, ReportError> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|source| ReportError::Io {
        path: shown(path),
        source,
    })?;
    serde_json::from_str(&text).map_err(|source| ReportError::Json {
        path: shown(path),
        source,
    })
}

/// Shortest representation that parses back to the same value.
pub fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn write_rows(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<(), ReportError> {
    let csv_err = |source| ReportError::Csv {
        path: shown(path),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.write_record(row).map_err(csv_err)?;
    }
    w.flush().map_err(|source| ReportError::Io {
        path: shown(path),
        source,
    })
}

fn strings(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

pub const SUBJECT_COLUMNS: [&str; 19] = [
    "subject_id",
    "region",
    "connectivity",
    "dsc_vox",
    "sen_vox",
    "ppv_vox",
    "dsc_num",
    "sen_num",
    "ppv_num",
    "vol_manual_vox",
    "vol_algo_vox",
    "vol_overlap_vox",
    "vol_manual_mm3",
    "vol_algo_mm3",
    "n_manual",
    "n_algo",
    "n_manual_hit",
    "n_algo_hit",
    "degenerate_flags",
];

pub fn write_subject_csv(path: impl AsRef<Path>, records: &[SubjectMetrics]) -> Result<(), ReportError> {
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            vec![
                r.subject_id.clone(),
                r.region.to_string(),
                r.connectivity.to_string(),
                fmt_opt(r.dsc_vox),
                fmt_opt(r.sen_vox),
                fmt_opt(r.ppv_vox),
                fmt_opt(r.dsc_num),
                fmt_opt(r.sen_num),
                fmt_opt(r.ppv_num),
                r.voxels.manual.to_string(),
                r.voxels.algo.to_string(),
                r.voxels.overlap.to_string(),
                r.vol_manual_mm3.to_string(),
                r.vol_algo_mm3.to_string(),
                r.clusters.n_manual.to_string(),
                r.clusters.n_algo.to_string(),
                r.clusters.n_manual_hit.to_string(),
                r.clusters.n_algo_hit.to_string(),
                r.flags.to_field(),
            ]
        })
        .collect();
    write_rows(path.as_ref(), &strings(&SUBJECT_COLUMNS), &rows)
}

struct Row<'a> {
    path: &'a Path,
    line: u64,
    record: &'a csv::StringRecord,
    columns: &'a HashMap<String, usize>,
}

impl Row<'_> {
    fn err(&self, column: &str, message: String) -> ReportError {
        ReportError::Schema {
            path: shown(self.path),
            row: self.line,
            column: column.to_string(),
            message,
        }
    }

    fn raw(&self, column: &str) -> Option<&str> {
        self.columns.get(column).and_then(|&i| self.record.get(i))
    }

    fn text(&self, column: &str) -> Result<String, ReportError> {
        match self.raw(column) {
            Some(s) if !s.is_empty() => Ok(s.to_string()),
            _ => Err(self.err(column, "value is required".into())),
        }
    }

    fn ratio(&self, column: &str) -> Result<Option<f64>, ReportError> {
        match self.raw(column) {
            None | Some("") => Ok(None),
            Some(s) => match s.parse::<f64>() {
                Ok(v) if (0.0..=1.0).contains(&v) => Ok(Some(v)),
                Ok(v) => Err(self.err(column, format!("{v} outside [0, 1]"))),
                Err(_) => Err(self.err(column, format!("'{s}' is not a number"))),
            },
        }
    }

    fn parsed<T: std::str::FromStr>(&self, column: &str, default: T) -> Result<T, ReportError> {
        match self.raw(column) {
            None | Some("") => Ok(default),
            Some(s) => s
                .parse()
                .map_err(|_| self.err(column, format!("cannot parse '{s}'"))),
        }
    }
}

/// Reads a per-subject CSV written by [`write_subject_csv`]. Only the id,
/// region and six ratio columns are required.
pub fn read_subject_csv(path: impl AsRef<Path>) -> Result<Vec<SubjectMetrics>, ReportError> {
    let path = path.as_ref();
    let csv_err = |source| ReportError::Csv {
        path: shown(path),
        source,
    };
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_err)?;
    let columns: HashMap<String, usize> = reader
        .headers()
        .map_err(csv_err)?
        .iter()
        .enumerate()
        .map(|(i, h)| (h.to_string(), i))
        .collect();
    let required = ["subject_id", "region"]
        .into_iter()
        .chain(Metric::ALL.iter().map(|m| m.name()));
    for col in required {
        if !columns.contains_key(col) {
            return Err(ReportError::Schema {
                path: shown(path),
                row: 1,
                column: col.to_string(),
                message: "missing column".into(),
            });
        }
    }

    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        let line = record.position().map_or(0, |p| p.line());
        let row = Row {
            path,
            line,
            record: &record,
            columns: &columns,
        };
        let connectivity = row.parsed::<Connectivity>("connectivity", Connectivity::TwentySix)?;
        let flags_raw = row.raw("degenerate_flags").unwrap_or("");
        let flags =
            DegenerateFlags::from_field(flags_raw).map_err(|m| row.err("degenerate_flags", m))?;
        out.push(SubjectMetrics {
            subject_id: row.text("subject_id")?,
            region: Region::from(row.text("region")?.as_str()),
            connectivity,
            dsc_vox: row.ratio("dsc_vox")?,
            sen_vox: row.ratio("sen_vox")?,
            ppv_vox: row.ratio("ppv_vox")?,
            dsc_num: row.ratio("dsc_num")?,
            sen_num: row.ratio("sen_num")?,
            ppv_num: row.ratio("ppv_num")?,
            voxels: VoxelCounts {
                manual: row.parsed("vol_manual_vox", 0)?,
                algo: row.parsed("vol_algo_vox", 0)?,
                overlap: row.parsed("vol_overlap_vox", 0)?,
            },
            clusters: ClusterCounts {
                n_manual: row.parsed("n_manual", 0)?,
                n_algo: row.parsed("n_algo", 0)?,
                n_manual_hit: row.parsed("n_manual_hit", 0)?,
                n_algo_hit: row.parsed("n_algo_hit", 0)?,
            },
            vol_manual_mm3: row.parsed("vol_manual_mm3", 0.0)?,
            vol_algo_mm3: row.parsed("vol_algo_mm3", 0.0)?,
            flags,
        });
    }
    Ok(out)
}

pub const STATS_COLUMNS: [&str; 16] = [
    "region",
    "metric",
    "n",
    "median_a",
    "median_b",
    "median_diff",
    "p_fdr",
    "sig",
    "r",
    "p_raw",
    "w_plus",
    "w_minus",
    "method",
    "status",
    "n_pairs",
    "n_dropped",
];

fn snake<T: Serialize>(v: &T) -> String {
    serde_json::to_value(v)
        .ok()
        .and_then(|v| v.as_str().map(str::to_string))
        .unwrap_or_default()
}

pub fn write_stats_csv(path: impl AsRef<Path>, rows: &[StatResult]) -> Result<(), ReportError> {
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.region.to_string(),
                r.metric.to_string(),
                r.n.to_string(),
                fmt_opt(r.median_a),
                fmt_opt(r.median_b),
                fmt_opt(r.median_diff),
                fmt_opt(r.p_fdr),
                if r.significant { "*" } else { "" }.to_string(),
                fmt_opt(r.rank_biserial),
                fmt_opt(r.p_raw),
                fmt_opt(r.w_plus),
                fmt_opt(r.w_minus),
                r.method.as_ref().map(snake).unwrap_or_default(),
                snake(&r.status),
                r.n_pairs.to_string(),
                r.n_dropped.to_string(),
            ]
        })
        .collect();
    write_rows(path.as_ref(), &strings(&STATS_COLUMNS), &rows)
}

/// One subject's contrast measurement on one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastRow {
    pub subject_id: String,
    pub modality: String,
    /// Which segmentation the contrast was measured on.
    pub mask: String,
    #[serde(flatten)]
    pub stat: ContrastStat,
}

pub fn write_contrast_csv(path: impl AsRef<Path>, rows: &[ContrastRow]) -> Result<(), ReportError> {
    let header = strings(&[
        "subject_id",
        "modality",
        "mask",
        "mask_mean",
        "shell_mean",
        "abs_contrast",
        "mode",
        "mask_voxels",
        "shell_voxels",
        "clusters",
    ]);
    let rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.subject_id.clone(),
                r.modality.clone(),
                r.mask.clone(),
                r.stat.mask_mean.to_string(),
                r.stat.shell_mean.to_string(),
                r.stat.abs_contrast.to_string(),
                r.stat.mode.as_str().to_string(),
                r.stat.mask_voxels.to_string(),
                r.stat.shell_voxels.to_string(),
                r.stat.clusters.to_string(),
            ]
        })
        .collect();
    write_rows(path.as_ref(), &header, &rows)
}

pub fn write_histogram_csv(path: impl AsRef<Path>, bins: &[HistogramBin]) -> Result<(), ReportError> {
    let rows: Vec<Vec<String>> = bins
        .iter()
        .map(|b| {
            vec![
                b.lower.to_string(),
                b.upper.to_string(),
                b.count.to_string(),
                b.density.to_string(),
            ]
        })
        .collect();
    write_rows(path.as_ref(), &strings(&["lower", "upper", "count", "density"]), &rows)
}

/// `subject_id,label,size,volume` rows; `volume` is in the configured units.
pub fn write_sizes_csv(
    path: impl AsRef<Path>,
    sizes: &[(String, u32, usize, f64)],
) -> Result<(), ReportError> {
    let rows: Vec<Vec<String>> = sizes
        .iter()
        .map(|(s, l, n, v)| vec![s.clone(), l.to_string(), n.to_string(), v.to_string()])
        .collect();
    write_rows(
        path.as_ref(),
        &strings(&["subject_id", "label", "size", "volume"]),
        &rows,
    )
}

pub fn write_aggregate_csv(path: impl AsRef<Path>, reports: &[AggregateReport]) -> Result<(), ReportError> {
    let mut header = strings(&["region", "site", "scheme", "n_subjects"]);
    for m in Metric::ALL {
        for suffix in ["mean", "sd", "n", "n_excluded"] {
            header.push(format!("{}_{suffix}", m.name()));
        }
    }
    header.extend(strings(&["r_vox", "r_vox_mm3", "r_num"]));
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let mut row = vec![
                r.region.to_string(),
                r.site.clone(),
                r.scheme.clone().unwrap_or_default(),
                r.n_subjects.to_string(),
            ];
            for m in Metric::ALL {
                match r.summary(m) {
                    Some(s) => row.extend([
                        fmt_opt(s.mean),
                        fmt_opt(s.sd),
                        s.n.to_string(),
                        s.n_excluded.to_string(),
                    ]),
                    None => row.extend(std::iter::repeat_n(String::new(), 4)),
                }
            }
            row.extend([fmt_opt(r.r_vox), fmt_opt(r.r_vox_mm3), fmt_opt(r.r_num)]);
            row
        })
        .collect();
    write_rows(path.as_ref(), &header, &rows)
}

/// Spreadsheet layout of a leave-one-site-out table: cells are `mean (sd)`,
/// and each (model, region) block ends with an `Average` row.
pub fn write_loso_csv(path: impl AsRef<Path>, table: &LosoTable, decimals: usize) -> Result<(), ReportError> {
    let mut header = strings(&["model", "region", "training", "internal"]);
    header.extend(table.sites.iter().cloned());
    header.push("average".into());
    let width = header.len();
    let mut rows = Vec::new();
    for avg in &table.averages {
        for row in table
            .rows
            .iter()
            .filter(|r| r.model == avg.model && r.region == avg.region)
        {
            let mut out = vec![
                row.model.clone(),
                row.region.to_string(),
                row.training.clone(),
                row.internal.display(decimals),
            ];
            out.extend(
                row.external
                    .iter()
                    .map(|c| c.map(|c| c.display(decimals)).unwrap_or_default()),
            );
            out.push(String::new());
            rows.push(out);
        }
        let mut out = vec![String::new(); width];
        out[0] = avg.model.clone();
        out[1] = avg.region.to_string();
        out[2] = "Average".into();
        out[width - 1] = avg.cell.display(decimals);
        rows.push(out);
    }
    write_rows(path.as_ref(), &header, &rows)
}
