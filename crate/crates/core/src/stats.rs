//! Paired comparison of two models' per-subject metrics: Wilcoxon
//! signed-rank test, Benjamini-Hochberg adjustment and the matched-pairs
//! rank-biserial correlation.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::metrics::{Metric, SubjectMetrics};
use crate::volume::Region;

/// Largest tie-free sample for which the automatic method uses the exact
/// null distribution.
pub const EXACT_MAX_N: usize = 25;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no observations")]
    EmptyInput,
    #[error("all paired differences are zero")]
    AllZeroDifferences,
    #[error("p-value {0} outside (0, 1]")]
    OutOfRange(f64),
    #[error("rank sums are both zero")]
    ZeroRankSum,
    #[error("the two reports share no subject ids")]
    NoCommonSubjects,
    #[error("subject '{subject}' appears twice in region {region}")]
    DuplicateSubject { subject: String, region: String },
    #[error("invalid parameter: {0}")]
    BadParameter(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMethod {
    Exact,
    NormalApprox,
}

/// Requested p-value computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PValueMethod {
    /// Exact when `n_eff <= 25` and the absolute differences have no ties,
    /// normal approximation otherwise.
    #[default]
    Auto,
    /// Exact permutation distribution of the (mid)rank sum.
    Exact,
    NormalApprox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Nonzero differences.
    pub n_eff: usize,
    /// Zero differences discarded.
    pub n_zero: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Two-sided, in (0, 1].
    pub p_value: f64,
    pub method: TestMethod,
    pub has_ties: bool,
}

/// Average ranks (1-based) of `values`, plus the sizes of tie groups.
fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // ranks start+1 ..= end share their mean
        let avg = (start + 1 + end) as f64 / 2.0;
        for &k in &order[start..end] {
            ranks[k] = avg;
        }
        if end - start > 1 {
            ties.push(end - start);
        }
        start = end;
    }
    (ranks, ties)
}

/// Exact two-sided p for the signed-rank statistic.
///
/// `doubled_ranks` are twice the midranks so every rank is an integer; the
/// distribution of the positive rank sum over all `2^n` sign assignments is
/// built by dynamic programming.
fn exact_p(doubled_ranks: &[u64], observed: u64) -> f64 {
    let total: u64 = doubled_ranks.iter().sum();
    let mut dist = vec![0.0f64; total as usize + 1];
    dist[0] = 1.0;
    let mut reach = 0usize;
    for &r in doubled_ranks {
        let r = r as usize;
        reach += r;
        for w in (0..=reach).rev() {
            let with = if w >= r { dist[w - r] } else { 0.0 };
            dist[w] = 0.5 * (dist[w] + with);
        }
    }
    let obs = observed as usize;
    let lower: f64 = dist[..=obs].iter().sum();
    let upper: f64 = dist[obs..].iter().sum();
    (2.0 * lower.min(upper)).min(1.0)
}

fn normal_p(n: usize, w_plus: f64, ties: &[usize]) -> f64 {
    let n = n as f64;
    let mean = n * (n + 1.0) / 4.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term;
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    libm::erfc(z / std::f64::consts::SQRT_2)
}

/// Two-sided Wilcoxon signed-rank test on `a - b`, zeros discarded.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult, StatsError> {
    wilcoxon_signed_rank_with(a, b, PValueMethod::Auto)
}

pub fn wilcoxon_signed_rank_with(
    a: &[f64],
    b: &[f64],
    method: PValueMethod,
) -> Result<WilcoxonResult, StatsError> {
    if a.len() != b.len() {
        return Err(StatsError::LengthMismatch(a.len(), b.len()));
    }
    if a.is_empty() {
        return Err(StatsError::EmptyInput);
    }
    let diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    let n_eff = diffs.len();
    if n_eff == 0 {
        return Err(StatsError::AllZeroDifferences);
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = midranks(&abs);
    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let total = (n_eff * (n_eff + 1)) as f64 / 2.0;
    let w_minus = total - w_plus;
    let has_ties = !ties.is_empty();

    let use_exact = match method {
        PValueMethod::Auto => n_eff <= EXACT_MAX_N && !has_ties,
        PValueMethod::Exact => true,
        PValueMethod::NormalApprox => false,
    };
    let p = if use_exact {
        let doubled: Vec<u64> = ranks.iter().map(|r| (2.0 * r).round() as u64).collect();
        exact_p(&doubled, (2.0 * w_plus).round() as u64)
    } else {
        normal_p(n_eff, w_plus, &ties)
    };
    Ok(WilcoxonResult {
        n_eff,
        n_zero: a.len() - n_eff,
        w_plus,
        w_minus,
        p_value: p.clamp(f64::MIN_POSITIVE, 1.0),
        method: if use_exact {
            TestMethod::Exact
        } else {
            TestMethod::NormalApprox
        },
        has_ties,
    })
}

/// Benjamini-Hochberg step-up adjusted p-values, in input order.
pub fn bh_fdr(p_values: &[f64]) -> Result<Vec<f64>, StatsError> {
    if let Some(&bad) = p_values.iter().find(|&&p| !(p > 0.0 && p <= 1.0)) {
        return Err(StatsError::OutOfRange(bad));
    }
    let m = p_values.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&i, &j| p_values[i].total_cmp(&p_values[j]));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0f64;
    for rank in (1..=m).rev() {
        let i = order[rank - 1];
        let scaled = (p_values[i] * m as f64 / rank as f64).max(p_values[i]);
        running = running.min(scaled);
        adjusted[i] = running.min(1.0);
    }
    Ok(adjusted)
}

/// `(w_plus - w_minus) / (w_plus + w_minus)`; positive when the first sample is larger.
pub fn rank_biserial(w_plus: f64, w_minus: f64) -> Result<f64, StatsError> {
    let total = w_plus + w_minus;
    if total <= 0.0 {
        return Err(StatsError::ZeroRankSum);
    }
    Ok((w_plus - w_minus) / total)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    })
}

/// Values of both models for one metric, restricted to subjects where both are defined.
#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub labels: Vec<String>,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// Common subjects dropped because either value was undefined.
    pub dropped: usize,
}

impl PairedSample {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Option<f64>, Option<f64>)>) -> Self {
        let mut s = PairedSample {
            labels: Vec::new(),
            a: Vec::new(),
            b: Vec::new(),
            dropped: 0,
        };
        for (label, a, b) in pairs {
            match (a, b) {
                (Some(a), Some(b)) => {
                    s.labels.push(label);
                    s.a.push(a);
                    s.b.push(b);
                }
                _ => s.dropped += 1,
            }
        }
        s
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestStatus {
    Tested,
    AllZeroDifferences,
    NoPairs,
}

/// Which rows are adjusted together.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FdrFamily {
    /// The listed metrics within one region.
    #[default]
    PerRegion,
    /// Every row of the comparison.
    All,
}

impl std::str::FromStr for FdrFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "per-region" | "per_region" => Ok(FdrFamily::PerRegion),
            "all" => Ok(FdrFamily::All),
            other => Err(format!("unknown FDR family '{other}' (per-region or all)")),
        }
    }
}

/// One row of a model comparison table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatResult {
    pub region: Region,
    pub metric: Metric,
    /// Nonzero paired differences entering the test.
    pub n: usize,
    pub n_pairs: usize,
    pub n_dropped: usize,
    pub median_a: Option<f64>,
    pub median_b: Option<f64>,
    /// Median of the paired differences `a - b`.
    pub median_diff: Option<f64>,
    pub w_plus: Option<f64>,
    pub w_minus: Option<f64>,
    pub p_raw: Option<f64>,
    pub p_fdr: Option<f64>,
    pub significant: bool,
    pub rank_biserial: Option<f64>,
    pub method: Option<TestMethod>,
    pub status: TestStatus,
}

fn test_pairs(region: &Region, metric: Metric, sample: &PairedSample) -> StatResult {
    let diffs: Vec<f64> = sample.a.iter().zip(&sample.b).map(|(x, y)| x - y).collect();
    let mut row = StatResult {
        region: region.clone(),
        metric,
        n: 0,
        n_pairs: sample.len(),
        n_dropped: sample.dropped,
        median_a: median(&sample.a),
        median_b: median(&sample.b),
        median_diff: median(&diffs),
        w_plus: None,
        w_minus: None,
        p_raw: None,
        p_fdr: None,
        significant: false,
        rank_biserial: None,
        method: None,
        status: TestStatus::NoPairs,
    };
    if sample.is_empty() {
        return row;
    }
    match wilcoxon_signed_rank(&sample.a, &sample.b) {
        Ok(w) => {
            row.n = w.n_eff;
            row.w_plus = Some(w.w_plus);
            row.w_minus = Some(w.w_minus);
            row.p_raw = Some(w.p_value);
            row.rank_biserial = rank_biserial(w.w_plus, w.w_minus).ok();
            row.method = Some(w.method);
            row.status = TestStatus::Tested;
        }
        Err(_) => row.status = TestStatus::AllZeroDifferences,
    }
    row
}

fn index_by_region(
    report: &[SubjectMetrics],
) -> Result<(Vec<Region>, HashMap<(Region, String), &SubjectMetrics>), StatsError> {
    let mut regions = Vec::new();
    let mut map = HashMap::new();
    for rec in report {
        if !regions.contains(&rec.region) {
            regions.push(rec.region.clone());
        }
        if map
            .insert((rec.region.clone(), rec.subject_id.clone()), rec)
            .is_some()
        {
            return Err(StatsError::DuplicateSubject {
                subject: rec.subject_id.clone(),
                region: rec.region.to_string(),
            });
        }
    }
    Ok((regions, map))
}

/// Compares model A against model B region by region, one row per metric.
///
/// Subjects are paired by id within each region. BH adjustment runs over the
/// tested rows of each family and a row is significant when `p_fdr <= q`.
pub fn compare_models(
    a_report: &[SubjectMetrics],
    b_report: &[SubjectMetrics],
    metrics: &[Metric],
    q: f64,
    family: FdrFamily,
) -> Result<Vec<StatResult>, StatsError> {
    if !(q > 0.0 && q < 1.0) {
        return Err(StatsError::BadParameter(format!("q must be in (0, 1), got {q}")));
    }
    let (regions, _) = index_by_region(a_report)?;
    let (_, b_map) = index_by_region(b_report)?;

    let mut rows = Vec::new();
    let mut any_common = false;
    for region in &regions {
        let common: Vec<(&SubjectMetrics, &SubjectMetrics)> = a_report
            .iter()
            .filter(|r| &r.region == region)
            .filter_map(|ra| {
                b_map
                    .get(&(region.clone(), ra.subject_id.clone()))
                    .map(|rb| (ra, *rb))
            })
            .collect();
        if common.is_empty() {
            continue;
        }
        any_common = true;
        for &metric in metrics {
            let sample = PairedSample::from_pairs(
                common
                    .iter()
                    .map(|(ra, rb)| (ra.subject_id.clone(), ra.get(metric), rb.get(metric))),
            );
            rows.push(test_pairs(region, metric, &sample));
        }
    }
    if !any_common {
        return Err(StatsError::NoCommonSubjects);
    }

    let families: Vec<Vec<usize>> = match family {
        FdrFamily::All => vec![(0..rows.len()).collect()],
        FdrFamily::PerRegion => regions
            .iter()
            .map(|reg| (0..rows.len()).filter(|&i| &rows[i].region == reg).collect())
            .collect(),
    };
    for members in families {
        let tested: Vec<usize> = members
            .into_iter()
            .filter(|&i| rows[i].p_raw.is_some())
            .collect();
        let raw: Vec<f64> = tested.iter().map(|&i| rows[i].p_raw.unwrap()).collect();
        for (&i, adj) in tested.iter().zip(bh_fdr(&raw)?) {
            rows[i].p_fdr = Some(adj);
            rows[i].significant = adj <= q;
        }
    }
    Ok(rows)
}
