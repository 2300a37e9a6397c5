//! Duration-prediction error metrics and the method comparison harness.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::behavior::{Behavior, ParameterSet};
use crate::engine::{duration_of_sections, Method};
use crate::error::{Error, Result};
use crate::timeline::InteractionSession;
use crate::trainer::occurrence_counts;

/// Users who stayed shorter than this are left out of evaluation.
pub const MIN_OBSERVED_DURATION: f64 = 30.0;
pub const BIN_WIDTH: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserError {
    pub session_id: String,
    pub user_id: String,
    pub observed: f64,
    pub estimated: f64,
    /// Signed error, estimated minus observed.
    pub error: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FiveNumberSummary {
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub center: f64,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalMetrics {
    pub method: Method,
    /// Ordered by session id, then user id.
    pub per_user_errors: Vec<UserError>,
    pub mae: f64,
    pub median: f64,
    pub mode: f64,
    pub histogram: Vec<HistogramBin>,
    pub observed_summary: FiveNumberSummary,
    pub estimated_summary: FiveNumberSummary,
    /// Users skipped for staying under [`MIN_OBSERVED_DURATION`].
    pub excluded: usize,
}

fn sorted(values: &[f64]) -> Vec<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Mean of absolute values, summed in ascending order of the values so the
/// result does not depend on input order.
pub fn mean_absolute_error(errors: &[f64]) -> f64 {
    if errors.is_empty() {
        return f64::NAN;
    }
    sorted(errors).iter().map(|e| e.abs()).sum::<f64>() / errors.len() as f64
}

/// Middle order statistic; the mean of the two central values for even counts.
pub fn median(values: &[f64]) -> f64 {
    let v = sorted(values);
    let n = v.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => v[n / 2],
        _ => 0.5 * (v[n / 2 - 1] + v[n / 2]),
    }
}

/// Linear-interpolation quantile of sorted data.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

pub fn five_number_summary(values: &[f64]) -> Option<FiveNumberSummary> {
    if values.is_empty() {
        return None;
    }
    let v = sorted(values);
    Some(FiveNumberSummary {
        min: v[0],
        q1: quantile(&v, 0.25),
        median: median(&v),
        q3: quantile(&v, 0.75),
        max: v[v.len() - 1],
    })
}

/// Index of the bin centered on a multiple of `BIN_WIDTH` that holds `value`;
/// bins are `[center - width/2, center + width/2)`.
pub fn bin_index(value: f64) -> i64 {
    ((value + 0.5 * BIN_WIDTH) / BIN_WIDTH).floor() as i64
}

/// Non-empty bins in ascending order of center.
pub fn histogram(values: &[f64]) -> Vec<HistogramBin> {
    let mut counts: BTreeMap<i64, usize> = BTreeMap::new();
    for &v in values {
        *counts.entry(bin_index(v)).or_default() += 1;
    }
    counts
        .into_iter()
        .map(|(i, count)| HistogramBin {
            center: i as f64 * BIN_WIDTH,
            count,
        })
        .collect()
}

/// Center of the fullest bin; ties go to the center closest to zero, then to
/// the lower center.
pub fn mode(histogram: &[HistogramBin]) -> f64 {
    histogram
        .iter()
        .min_by(|a, b| {
            b.count
                .cmp(&a.count)
                .then(a.center.abs().total_cmp(&b.center.abs()))
                .then(a.center.total_cmp(&b.center))
        })
        .map_or(f64::NAN, |b| b.center)
}

pub fn evaluate(dataset: &[InteractionSession], params: &ParameterSet, method: Method) -> Result<EvalMetrics> {
    for session in dataset {
        session.ensure_valid()?;
    }
    let per_session: Vec<(Vec<UserError>, usize)> = dataset
        .par_iter()
        .map(|session| {
            let mut rows = Vec::new();
            let mut excluded = 0;
            for (u, user) in session.users.iter().enumerate() {
                if !(user.observed_duration >= MIN_OBSERVED_DURATION) {
                    excluded += 1;
                    continue;
                }
                let sections = session.segment_user(u);
                let (estimated, _) = duration_of_sections(user.arrival(), &sections, params, method);
                rows.push(UserError {
                    session_id: session.session_id.clone(),
                    user_id: user.user_id.clone(),
                    observed: user.observed_duration,
                    estimated,
                    error: estimated - user.observed_duration,
                });
            }
            (rows, excluded)
        })
        .collect();

    let excluded = per_session.iter().map(|(_, e)| e).sum();
    let mut per_user_errors: Vec<UserError> = per_session.into_iter().flat_map(|(rows, _)| rows).collect();
    if per_user_errors.is_empty() {
        return Err(Error::NoEligibleUsers {
            min_duration: MIN_OBSERVED_DURATION,
        });
    }
    per_user_errors.sort_by(|a, b| (&a.session_id, &a.user_id).cmp(&(&b.session_id, &b.user_id)));

    let errors: Vec<f64> = per_user_errors.iter().map(|r| r.error).collect();
    let observed: Vec<f64> = per_user_errors.iter().map(|r| r.observed).collect();
    let estimated: Vec<f64> = per_user_errors.iter().map(|r| r.estimated).collect();
    let hist = histogram(&errors);
    Ok(EvalMetrics {
        method,
        mae: mean_absolute_error(&errors),
        median: median(&errors),
        mode: mode(&hist),
        histogram: hist,
        observed_summary: five_number_summary(&observed).expect("non-empty"),
        estimated_summary: five_number_summary(&estimated).expect("non-empty"),
        per_user_errors,
        excluded,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodComparison {
    pub method1: EvalMetrics,
    pub method2: EvalMetrics,
    /// `method1.mae - method2.mae`; positive when coupling helps.
    pub mae_difference: f64,
}

/// Evaluates `params1` without dependence and `params2` with it.
pub fn compare_methods(
    dataset: &[InteractionSession],
    params1: &ParameterSet,
    params2: &ParameterSet,
) -> Result<MethodComparison> {
    let method1 = evaluate(dataset, params1, Method::Independent)?;
    let method2 = evaluate(dataset, params2, Method::Coupled)?;
    Ok(MethodComparison {
        mae_difference: method1.mae - method2.mae,
        method1,
        method2,
    })
}

impl MethodComparison {
    pub fn table(&self) -> String {
        let mut out = metrics_table(&[&self.method1, &self.method2]);
        let _ = writeln!(out, "MAE difference (method 1 - method 2): {:.3} s", self.mae_difference);
        out
    }
}

/// Plain-text table with one row per evaluated method.
pub fn metrics_table(metrics: &[&EvalMetrics]) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<10} {:>5} {:>10} {:>10} {:>10}", "method", "users", "MAE s", "median s", "mode s");
    for m in metrics {
        let _ = writeln!(
            out,
            "{:<10} {:>5} {:>10.2} {:>10.2} {:>10.1}",
            m.method.label(),
            m.per_user_errors.len(),
            m.mae,
            m.median,
            m.mode
        );
    }
    out
}

/// Per-behavior table of means, variances and occurrence counts.
pub fn parameter_table(params: &ParameterSet, frequency: &BTreeMap<Behavior, usize>) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<12} {:>12} {:>12} {:>9}", "behavior", "mean", "variance", "frequency");
    for (b, g) in params.iter() {
        let _ = writeln!(
            out,
            "{:<12} {:>12.4e} {:>12.4e} {:>9}",
            b.name(),
            g.mean(),
            g.variance(),
            frequency.get(&b).copied().unwrap_or(0)
        );
    }
    out
}

#[derive(Serialize)]
struct MethodRow<'a> {
    method: &'a str,
    dependence_enabled: bool,
    users: usize,
    excluded: usize,
    mae: f64,
    median: f64,
    mode: f64,
    observed: FiveNumberSummary,
    estimated: FiveNumberSummary,
    histogram: &'a [HistogramBin],
}

#[derive(Serialize)]
struct BehaviorRow {
    behavior: Behavior,
    mean: f64,
    variance: f64,
    frequency: usize,
}

#[derive(Serialize)]
struct MetricsReport<'a> {
    methods: Vec<MethodRow<'a>>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    parameters: Vec<BehaviorRow>,
}

/// Structured report: one entry per method plus, when `params` is given, the
/// per-behavior parameter table with frequencies counted on `dataset`.
pub fn report_toml(metrics: &[&EvalMetrics], params: Option<&ParameterSet>, dataset: &[InteractionSession]) -> String {
    let methods = metrics
        .iter()
        .map(|m| MethodRow {
            method: m.method.label(),
            dependence_enabled: m.method.dependence_enabled(),
            users: m.per_user_errors.len(),
            excluded: m.excluded,
            mae: m.mae,
            median: m.median,
            mode: m.mode,
            observed: m.observed_summary,
            estimated: m.estimated_summary,
            histogram: &m.histogram,
        })
        .collect();
    let frequency = occurrence_counts(dataset);
    let parameters = params
        .map(|p| {
            p.iter()
                .map(|(behavior, g)| BehaviorRow {
                    behavior,
                    mean: g.mean(),
                    variance: g.variance(),
                    frequency: frequency[&behavior],
                })
                .collect()
        })
        .unwrap_or_default();
    toml::to_string(&MetricsReport { methods, parameters }).expect("report serializes")
}

fn write_csv<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| Error::parse(path, e))?;
    for row in rows {
        writer.serialize(row).map_err(|e| Error::parse(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| Error::parse(path, e))?;
    reader
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| Error::parse(path, e))
}

/// Writes `center,count` rows of the error histogram.
pub fn export_histogram(metrics: &EvalMetrics, path: impl AsRef<Path>) -> Result<()> {
    if metrics.histogram.is_empty() {
        return Err(Error::EmptyExport("histogram has no bins"));
    }
    write_csv(path.as_ref(), &metrics.histogram)
}

pub fn read_histogram(path: impl AsRef<Path>) -> Result<Vec<HistogramBin>> {
    read_csv(path.as_ref())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolinSample {
    pub series: String,
    pub duration: f64,
}

/// Writes raw observed and estimated durations as `series,duration` rows.
pub fn export_violin_data(metrics: &EvalMetrics, path: impl AsRef<Path>) -> Result<()> {
    if metrics.per_user_errors.is_empty() {
        return Err(Error::EmptyExport("no evaluated users"));
    }
    let observed = metrics.per_user_errors.iter().map(|r| ViolinSample {
        series: "observed".into(),
        duration: r.observed,
    });
    let estimated = metrics.per_user_errors.iter().map(|r| ViolinSample {
        series: "estimated".into(),
        duration: r.estimated,
    });
    write_csv(path.as_ref(), observed.chain(estimated))
}

pub fn read_violin_data(path: impl AsRef<Path>) -> Result<Vec<ViolinSample>> {
    read_csv(path.as_ref())
}
