//! Python bindings for the hpcload pipeline: load math, snapshot rows,
//! archive access, weekly rankings, views, and the simulator.
//!
//! The module mirrors the Rust operations one-to-one; nothing here adds
//! logic beyond converting arguments and errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, Utc};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

use hpcload::analyze;
use hpcload::archive::{self, SnapshotArchive, SnapshotRow};
use hpcload::cli::{self, CliMode, CliRequest, PrivilegeConfig};
use hpcload::collect::{self, PRIVILEGES_FILE};
use hpcload::model::{self, GpuRecord};
use hpcload::sim;

fn value_err(err: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(err.to_string())
}

fn io_err(err: impl std::fmt::Display) -> PyErr {
    PyIOError::new_err(err.to_string())
}

fn parse_ts(raw: &str) -> PyResult<DateTime<Utc>> {
    DateTime::parse_from_rfc3339(raw)
        .map(|ts| ts.with_timezone(&Utc))
        .map_err(|err| value_err(format!("bad timestamp {raw:?}: {err}")))
}

fn parse_date(raw: &str) -> PyResult<NaiveDate> {
    NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .map_err(|err| value_err(format!("bad date {raw:?}: {err}")))
}

/// Classification thresholds; defaults are the operational ones.
#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct Thresholds {
    inner: model::Thresholds,
}

#[pymethods]
impl Thresholds {
    #[new]
    #[pyo3(signature = (low=0.45, high_cpu=1.65, interval_hours=0.25))]
    fn new(low: f64, high_cpu: f64, interval_hours: f64) -> PyResult<Self> {
        let inner = model::Thresholds {
            low_threshold: low,
            high_cpu_threshold: high_cpu,
            snapshot_interval_hours: interval_hours,
        };
        inner.validate().map_err(value_err)?;
        Ok(Thresholds { inner })
    }

    #[getter]
    fn low(&self) -> f64 {
        self.inner.low_threshold
    }

    #[getter]
    fn high_cpu(&self) -> f64 {
        self.inner.high_cpu_threshold
    }

    #[getter]
    fn interval_hours(&self) -> f64 {
        self.inner.snapshot_interval_hours
    }

    /// The alternative high threshold 1 + (1 - low).
    fn formula_high(&self) -> f64 {
        model::Thresholds::formula_high(self.inner.low_threshold)
    }

    fn __repr__(&self) -> String {
        format!(
            "Thresholds(low={}, high_cpu={}, interval_hours={})",
            self.inner.low_threshold,
            self.inner.high_cpu_threshold,
            self.inner.snapshot_interval_hours
        )
    }
}

fn thresholds_or_default(t: Option<&Thresholds>) -> model::Thresholds {
    t.map(|t| t.inner).unwrap_or_default()
}

/// One archived (user, node, snapshot) row.
#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone)]
struct UsageRow {
    inner: SnapshotRow,
}

#[pymethods]
impl UsageRow {
    #[getter]
    fn ts(&self) -> String {
        self.inner
            .timestamp
            .to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
    }

    #[getter]
    fn cluster(&self) -> &str {
        &self.inner.cluster
    }

    #[getter]
    fn user(&self) -> &str {
        &self.inner.usage.user
    }

    #[getter]
    fn node(&self) -> &str {
        &self.inner.usage.node_name
    }

    #[getter]
    fn jobtype(&self) -> &str {
        self.inner.job_type.as_str()
    }

    #[getter]
    fn cpu_total(&self) -> u32 {
        self.inner.usage.cpu_total
    }

    #[getter]
    fn cpu_used(&self) -> u32 {
        self.inner.usage.cpu_used
    }

    #[getter]
    fn cpu_free(&self) -> u32 {
        self.inner.usage.cpu_free
    }

    #[getter]
    fn load_norm(&self) -> f64 {
        self.inner.usage.load_norm
    }

    #[getter]
    fn mem_total_gb(&self) -> u64 {
        self.inner.usage.mem_total_gb
    }

    #[getter]
    fn mem_used_gb(&self) -> u64 {
        self.inner.usage.mem_used_gb
    }

    #[getter]
    fn mem_free_gb(&self) -> u64 {
        self.inner.usage.mem_free_gb
    }

    #[getter]
    fn gpu_total(&self) -> u32 {
        self.inner.usage.gpu_total
    }

    #[getter]
    fn gpu_used(&self) -> u32 {
        self.inner.usage.gpu_used
    }

    #[getter]
    fn gpu_free(&self) -> u32 {
        self.inner.usage.gpu_free
    }

    #[getter]
    fn gpu_load_norm(&self) -> Option<f64> {
        self.inner.usage.gpu_load_norm
    }

    #[getter]
    fn gpu_mem_total_gb(&self) -> Option<u64> {
        self.inner.usage.gpu_mem_total_gb
    }

    #[getter]
    fn gpu_mem_used_gb(&self) -> Option<u64> {
        self.inner.usage.gpu_mem_used_gb
    }

    #[getter]
    fn gpu_mem_free_gb(&self) -> Option<u64> {
        self.inner.usage.gpu_mem_free_gb
    }

    /// The row as one TSV line under the snapshot header.
    fn to_tsv(&self) -> String {
        archive::emit_snapshot_row(&self.inner)
    }

    fn __repr__(&self) -> String {
        format!(
            "UsageRow({} {} on {}, load={:.2}, gpu={:?})",
            self.ts(),
            self.user(),
            self.node(),
            self.load_norm(),
            self.inner.usage.gpu_load_norm
        )
    }
}

/// load5 / cores_total; raises ValueError for zero cores or bad loads.
#[pyfunction]
fn normalize_cpu_load(load5: f64, cores_total: u32) -> PyResult<f64> {
    model::normalize_cpu_load(load5, cores_total).map_err(value_err)
}

/// Mean of the given GPU utilization percents on a 0-1 scale; None for
/// an empty list.
#[pyfunction]
fn normalize_gpu_load(utils: Vec<u32>) -> PyResult<Option<f64>> {
    let records: Vec<GpuRecord> = utils
        .into_iter()
        .enumerate()
        .map(|(i, util)| {
            if util > 100 {
                return Err(value_err(format!("gpu util {util} exceeds 100")));
            }
            Ok(GpuRecord {
                node_name: String::new(),
                gpu_index: i as u32,
                util_percent: util,
                mem_used_mb: 0,
                mem_total_mb: 0,
            })
        })
        .collect::<PyResult<_>>()?;
    Ok(model::normalize_gpu_load(&records))
}

/// Round a load to its two-decimal printed form.
#[pyfunction]
fn quantize_load(x: f64) -> f64 {
    model::quantize_load(x)
}

/// Category names ("low_gpu", "low_cpu", "high_cpu") the row falls in.
#[pyfunction]
#[pyo3(signature = (row, thresholds=None))]
fn classify(row: &UsageRow, thresholds: Option<&Thresholds>) -> Vec<&'static str> {
    model::classify_load(&row.inner.usage, &thresholds_or_default(thresholds))
        .categories()
        .map(|c| c.as_str())
        .collect()
}

/// Packing recommendation (nppn, limiting_factor) for a row's workload
/// at the given tasks-per-node; raises ValueError when the row has no
/// usable footprint.
#[pyfunction]
#[pyo3(signature = (row, current_nppn=1))]
fn recommend_nppn(row: &UsageRow, current_nppn: u32) -> PyResult<(u32, &'static str)> {
    model::recommend_nppn(&row.inner.usage, current_nppn)
        .map(|rec| (rec.nppn, rec.limiting_factor.as_str()))
        .map_err(value_err)
}

/// Parse one archived snapshot file's text into rows.
#[pyfunction]
fn parse_snapshot_tsv(text: &str) -> PyResult<Vec<UsageRow>> {
    let rows = archive::parse_snapshot_tsv(text).map_err(value_err)?;
    Ok(rows.into_iter().map(|inner| UsageRow { inner }).collect())
}

/// Snapshot a cluster directory into the archive; returns the written
/// file path.
#[pyfunction]
#[pyo3(signature = (cluster_dir, archive_root, at=None, cluster=None))]
fn take_snapshot(
    cluster_dir: PathBuf,
    archive_root: PathBuf,
    at: Option<&str>,
    cluster: Option<&str>,
) -> PyResult<String> {
    let at = at.map(parse_ts).transpose()?;
    let view = collect::load_cluster_dir(&cluster_dir, at, cluster).map_err(io_err)?;
    let archive = SnapshotArchive::new(archive_root, &view.cluster_name);
    let outcome = archive::take_snapshot(&view, &archive).map_err(io_err)?;
    Ok(outcome.path.display().to_string())
}

/// All archived rows of the calendar week containing `week_of`
/// (YYYY-MM-DD), plus the snapshot count.
#[pyfunction]
fn read_week(
    archive_root: PathBuf,
    cluster: &str,
    week_of: &str,
) -> PyResult<(Vec<UsageRow>, usize)> {
    let (start, end) = analyze::week_of(parse_date(week_of)?);
    let archive = SnapshotArchive::new(archive_root, cluster);
    let (snapshots, _warnings) = archive::read_range(&archive, start, end).map_err(io_err)?;
    let count = snapshots.len();
    let rows = snapshots
        .into_iter()
        .flat_map(|s| s.rows)
        .map(|inner| UsageRow { inner })
        .collect();
    Ok((rows, count))
}

/// Ranked weekly node-hours: {category: [(user, hours), ...]} with up
/// to ten entries per category, most hours first.
#[pyfunction]
#[pyo3(signature = (archive_root, cluster, week_of, thresholds=None))]
fn weekly_ranking(
    archive_root: PathBuf,
    cluster: &str,
    week_of: &str,
    thresholds: Option<&Thresholds>,
) -> PyResult<BTreeMap<&'static str, Vec<(String, f64)>>> {
    let t = thresholds_or_default(thresholds);
    let (start, end) = analyze::week_of(parse_date(week_of)?);
    let archive = SnapshotArchive::new(archive_root, cluster);
    let (snapshots, _warnings) = archive::read_range(&archive, start, end).map_err(io_err)?;
    let node_hours = analyze::compute_node_hours(&snapshots, &t);
    Ok(model::Category::ALL
        .into_iter()
        .map(|c| {
            (
                c.as_str(),
                analyze::rank_top(&node_hours, c, analyze::TOP_K),
            )
        })
        .collect())
}

/// The rendered weekly report text.
#[pyfunction]
#[pyo3(signature = (archive_root, cluster, week_of, anonymize=true, thresholds=None))]
fn weekly_report_text(
    archive_root: PathBuf,
    cluster: &str,
    week_of: &str,
    anonymize: bool,
    thresholds: Option<&Thresholds>,
) -> PyResult<String> {
    let t = thresholds_or_default(thresholds);
    let period = analyze::week_of(parse_date(week_of)?);
    let archive = SnapshotArchive::new(archive_root, cluster);
    let (_report, text, _warnings) =
        analyze::build_weekly_report(&archive, period, &t, anonymize).map_err(io_err)?;
    Ok(text)
}

/// Render a CLI view over a cluster directory. Returns (text, exit_code);
/// exit code 1 means none of the requested nodes exist.
#[pyfunction]
#[pyo3(signature = (cluster_dir, user, gpu=false, all=false, tsv=false, top=None, nodes=None, at=None, cluster=None))]
#[allow(clippy::too_many_arguments)]
fn render_view(
    cluster_dir: PathBuf,
    user: &str,
    gpu: bool,
    all: bool,
    tsv: bool,
    top: Option<u32>,
    nodes: Option<&str>,
    at: Option<&str>,
    cluster: Option<&str>,
) -> PyResult<(String, i32)> {
    let at = at.map(parse_ts).transpose()?;
    let nodelist = match nodes {
        None => Vec::new(),
        Some(raw) => cli::expand_nodelist(raw).map_err(value_err)?,
    };
    let request = CliRequest {
        invoking_user: user.to_string(),
        mode: if top.is_some() {
            CliMode::Top
        } else if !nodelist.is_empty() {
            CliMode::Nodes
        } else if all {
            CliMode::All
        } else {
            CliMode::Default
        },
        gpu,
        tsv,
        top_n: top.unwrap_or(0),
        nodelist,
    };
    request.validate().map_err(value_err)?;

    let view = collect::load_cluster_dir(&cluster_dir, at, cluster).map_err(io_err)?;
    let privileges = match std::fs::read_to_string(cluster_dir.join(PRIVILEGES_FILE)) {
        Ok(text) => PrivilegeConfig::parse(&text),
        Err(_) => PrivilegeConfig::default(),
    };
    let output = cli::run(&request, &view, &privileges).map_err(value_err)?;
    Ok((output.stdout, output.exit_code))
}

/// Generate a synthetic timeline; returns the interval directories.
#[pyfunction]
#[pyo3(signature = (preset, seed, out, nodes=None, users=None, hours=None, interval=None))]
fn generate_timeline(
    preset: &str,
    seed: u64,
    out: PathBuf,
    nodes: Option<u32>,
    users: Option<u32>,
    hours: Option<f64>,
    interval: Option<f64>,
) -> PyResult<Vec<String>> {
    let preset: sim::Preset = preset.parse().map_err(value_err)?;
    let mut config = sim::ScenarioConfig::new(preset, seed);
    if let Some(nodes) = nodes {
        config.nodes = nodes;
    }
    if let Some(users) = users {
        config.users = users;
    }
    if let Some(hours) = hours {
        config.duration_hours = hours;
    }
    if let Some(interval) = interval {
        config.interval_hours = interval;
    }
    let timeline = sim::generate_timeline(&config).map_err(value_err)?;
    let dirs = sim::write_timeline(&timeline, Path::new(&out)).map_err(io_err)?;
    Ok(dirs.into_iter().map(|d| d.display().to_string()).collect())
}

/// [start, end) of the calendar week containing a date, as RFC-3339.
#[pyfunction]
fn week_bounds(date: &str) -> PyResult<(String, String)> {
    let (start, end) = analyze::week_of(parse_date(date)?);
    let fmt =
        |ts: DateTime<Utc>| -> String { ts.to_rfc3339_opts(chrono::SecondsFormat::Secs, true) };
    Ok((fmt(start), fmt(end)))
}

#[pymodule]
fn hpcload_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Thresholds>()?;
    m.add_class::<UsageRow>()?;
    m.add_function(wrap_pyfunction!(normalize_cpu_load, m)?)?;
    m.add_function(wrap_pyfunction!(normalize_gpu_load, m)?)?;
    m.add_function(wrap_pyfunction!(quantize_load, m)?)?;
    m.add_function(wrap_pyfunction!(classify, m)?)?;
    m.add_function(wrap_pyfunction!(recommend_nppn, m)?)?;
    m.add_function(wrap_pyfunction!(parse_snapshot_tsv, m)?)?;
    m.add_function(wrap_pyfunction!(take_snapshot, m)?)?;
    m.add_function(wrap_pyfunction!(read_week, m)?)?;
    m.add_function(wrap_pyfunction!(weekly_ranking, m)?)?;
    m.add_function(wrap_pyfunction!(weekly_report_text, m)?)?;
    m.add_function(wrap_pyfunction!(render_view, m)?)?;
    m.add_function(wrap_pyfunction!(generate_timeline, m)?)?;
    m.add_function(wrap_pyfunction!(week_bounds, m)?)?;
    m.add("TSV_HEADER", cli::TSV_HEADER)?;
    Ok(())
}
