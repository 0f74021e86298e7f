//! The snapshot archive: one TSV file per interval per cluster, laid out
//! as `<root>/<cluster>/YYYY/MM/DD/HHMM.tsv`.
//!
//! The layout is the index: a range scan just walks the directory tree,
//! so there is no state to corrupt and nothing to rebuild after a crash.
//! Writes go through a temp file and rename, so a concurrent reader sees
//! either the previous snapshot or the new one, never a torn file.

use std::path::{Path, PathBuf};

use chrono::{DateTime, Datelike, TimeZone, Timelike, Utc};
use thiserror::Error;

use crate::cli::{render_tsv, TSV_HEADER};
use crate::collect::ClusterView;
use crate::model::{JobType, ModelError, UserNodeUsage};

#[derive(Debug, Error)]
pub enum ArchiveError {
    #[error("snapshot interval {0} hours does not give a whole number of seconds")]
    BadInterval(f64),
    #[error("start is after end")]
    BadRange,
    #[error("archive for cluster {cluster} not found under {}", root.display())]
    MissingRoot { root: PathBuf, cluster: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ArchiveError + '_ {
    move |source| ArchiveError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Floor a timestamp to the snapshot grid. The interval must come out to
/// a whole positive number of seconds.
pub fn floor_to_grid(
    ts: DateTime<Utc>,
    interval_hours: f64,
) -> Result<DateTime<Utc>, ArchiveError> {
    let secs = (interval_hours * 3600.0).round();
    // NaN intervals fail the >= and land here too.
    if !(secs >= 1.0 && secs.is_finite()) || (interval_hours * 3600.0 - secs).abs() > 1e-6 {
        return Err(ArchiveError::BadInterval(interval_hours));
    }
    let secs = secs as i64;
    let epoch = ts.timestamp();
    let floored = epoch - epoch.rem_euclid(secs);
    Ok(Utc.timestamp_opt(floored, 0).single().expect("valid epoch"))
}

#[derive(Debug, Clone)]
pub struct SnapshotArchive {
    pub root_dir: PathBuf,
    pub cluster_name: String,
    pub interval_hours: f64,
}

impl SnapshotArchive {
    pub fn new(root_dir: impl Into<PathBuf>, cluster_name: impl Into<String>) -> Self {
        SnapshotArchive {
            root_dir: root_dir.into(),
            cluster_name: cluster_name.into(),
            interval_hours: 0.25,
        }
    }

    pub fn with_interval(mut self, interval_hours: f64) -> Self {
        self.interval_hours = interval_hours;
        self
    }

    pub fn cluster_dir(&self) -> PathBuf {
        self.root_dir.join(&self.cluster_name)
    }

    /// Path for a grid-aligned timestamp.
    pub fn snapshot_path(&self, ts: DateTime<Utc>) -> PathBuf {
        self.cluster_dir()
            .join(format!("{:04}", ts.year()))
            .join(format!("{:02}", ts.month()))
            .join(format!("{:02}", ts.day()))
            .join(format!("{:02}{:02}.tsv", ts.hour(), ts.minute()))
    }
}

#[derive(Debug, Clone)]
pub struct SnapshotOutcome {
    pub path: PathBuf,
    pub timestamp: DateTime<Utc>,
    /// Notes worth logging, e.g. that an unaligned input time was floored.
    pub notes: Vec<String>,
}

/// Write one snapshot: the full-scope GPU TSV of the view, stamped with
/// the floored timestamp. Rewriting the same instant produces an
/// identical file.
pub fn take_snapshot(
    view: &ClusterView,
    archive: &SnapshotArchive,
) -> Result<SnapshotOutcome, ArchiveError> {
    let floored = floor_to_grid(view.timestamp, archive.interval_hours)?;
    let mut notes = Vec::new();
    if floored != view.timestamp {
        notes.push(format!(
            "timestamp {} floored to grid instant {}",
            view.timestamp.to_rfc3339(),
            floored.to_rfc3339()
        ));
    }
    let mut stamped = view.clone();
    stamped.timestamp = floored;
    let content = render_tsv(&stamped, None, true)?;

    let path = archive.snapshot_path(floored);
    let dir = path.parent().expect("snapshot path has a parent");
    std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    let file_name = path
        .file_name()
        .expect("snapshot file name")
        .to_string_lossy();
    let tmp = dir.join(format!(".{file_name}.tmp"));
    std::fs::write(&tmp, content).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, &path).map_err(io_err(&path))?;
    Ok(SnapshotOutcome {
        path,
        timestamp: floored,
        notes,
    })
}

/// One line of an archived snapshot, i.e. one (user, node) instance.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotRow {
    pub timestamp: DateTime<Utc>,
    pub cluster: String,
    pub job_type: JobType,
    pub usage: UserNodeUsage,
}

#[derive(Debug, Clone)]
pub struct Snapshot {
    pub timestamp: DateTime<Utc>,
    pub rows: Vec<SnapshotRow>,
}

fn parse_opt_count(s: &str) -> Result<Option<u64>, String> {
    if s == "-" {
        return Ok(None);
    }
    s.parse()
        .map(Some)
        .map_err(|e| format!("bad count {s:?}: {e}"))
}

/// Parse one snapshot TSV back into rows. Strict on shape (header, 19
/// columns, triples that add up) because a violation means the file was
/// not produced by the writer.
pub fn parse_snapshot_tsv(text: &str) -> Result<Vec<SnapshotRow>, String> {
    let mut lines = text.lines();
    if lines.next() != Some(TSV_HEADER) {
        return Err("bad or missing TSV header".to_string());
    }
    let mut rows = Vec::new();
    for (idx, raw) in lines.enumerate() {
        let line = idx + 2;
        let err = |msg: String| format!("line {line}: {msg}");
        let f: Vec<&str> = raw.split('\t').collect();
        if f.len() != 19 {
            return Err(err(format!("expected 19 columns, got {}", f.len())));
        }
        let timestamp = DateTime::parse_from_rfc3339(f[0])
            .map_err(|e| err(format!("bad timestamp {:?}: {e}", f[0])))?
            .with_timezone(&Utc);
        let job_type: JobType = f[4].parse().map_err(|e| err(format!("{e}")))?;
        let count = |i: usize| -> Result<u64, String> {
            f[i].parse()
                .map_err(|e| err(format!("bad count {:?}: {e}", f[i])))
        };
        let load = |i: usize| -> Result<f64, String> {
            f[i].parse()
                .map_err(|e| err(format!("bad load {:?}: {e}", f[i])))
        };
        let usage = UserNodeUsage {
            user: f[2].to_string(),
            node_name: f[3].to_string(),
            cpu_total: count(5)? as u32,
            cpu_used: count(6)? as u32,
            cpu_free: count(7)? as u32,
            load_norm: load(8)?,
            mem_total_gb: count(9)?,
            mem_used_gb: count(10)?,
            mem_free_gb: count(11)?,
            gpu_total: count(12)? as u32,
            gpu_used: count(13)? as u32,
            gpu_free: count(14)? as u32,
            gpu_load_norm: if f[15] == "-" { None } else { Some(load(15)?) },
            gpu_mem_total_gb: parse_opt_count(f[16]).map_err(&err)?,
            gpu_mem_used_gb: parse_opt_count(f[17]).map_err(&err)?,
            gpu_mem_free_gb: parse_opt_count(f[18]).map_err(&err)?,
        };
        if usage.cpu_used + usage.cpu_free != usage.cpu_total
            || usage.mem_used_gb + usage.mem_free_gb != usage.mem_total_gb
            || usage.gpu_used + usage.gpu_free != usage.gpu_total
        {
            return Err(err("triple does not add up".to_string()));
        }
        rows.push(SnapshotRow {
            timestamp,
            cluster: f[1].to_string(),
            job_type,
            usage,
        });
    }
    Ok(rows)
}

/// Render one row in the snapshot TSV column layout (the writer side of
/// [`parse_snapshot_tsv`] for a single line, used when quoting archived
/// rows in reports).
pub fn emit_snapshot_row(row: &SnapshotRow) -> String {
    let u = &row.usage;
    let opt_load = |x: Option<f64>| x.map(|v| format!("{v:.2}")).unwrap_or_else(|| "-".into());
    let opt_count = |x: Option<u64>| x.map(|v| v.to_string()).unwrap_or_else(|| "-".into());
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{:.2}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
        row.timestamp
            .to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        row.cluster,
        u.user,
        u.node_name,
        row.job_type,
        u.cpu_total,
        u.cpu_used,
        u.cpu_free,
        u.load_norm,
        u.mem_total_gb,
        u.mem_used_gb,
        u.mem_free_gb,
        u.gpu_total,
        u.gpu_used,
        u.gpu_free,
        opt_load(u.gpu_load_norm),
        opt_count(u.gpu_mem_total_gb),
        opt_count(u.gpu_mem_used_gb),
        opt_count(u.gpu_mem_free_gb),
    )
}

/// All snapshots with start <= ts < end, ascending. Unreadable or
/// corrupt files are reported as warnings and skipped; an absent archive
/// is an error.
pub fn read_range(
    archive: &SnapshotArchive,
    start: DateTime<Utc>,
    end: DateTime<Utc>,
) -> Result<(Vec<Snapshot>, Vec<String>), ArchiveError> {
    if start > end {
        return Err(ArchiveError::BadRange);
    }
    let cluster_dir = archive.cluster_dir();
    if !cluster_dir.is_dir() {
        return Err(ArchiveError::MissingRoot {
            root: archive.root_dir.clone(),
            cluster: archive.cluster_name.clone(),
        });
    }

    // Collect candidate (timestamp, path) pairs from the fixed layout.
    // Anything that does not look like YYYY/MM/DD/HHMM.tsv (temp files,
    // stray directories) is not part of the archive and is ignored.
    let mut candidates: Vec<(DateTime<Utc>, PathBuf)> = Vec::new();
    let mut warnings = Vec::new();
    for (year, ypath) in numeric_subdirs(&cluster_dir, 4)? {
        for (month, mpath) in numeric_subdirs(&ypath, 2)? {
            for (day, dpath) in numeric_subdirs(&mpath, 2)? {
                let entries = std::fs::read_dir(&dpath).map_err(io_err(&dpath))?;
                for entry in entries {
                    let entry = entry.map_err(io_err(&dpath))?;
                    let name = entry.file_name();
                    let Some(name) = name.to_str() else { continue };
                    let Some(hhmm) = name
                        .strip_suffix(".tsv")
                        .filter(|s| s.len() == 4 && s.bytes().all(|b| b.is_ascii_digit()))
                    else {
                        continue;
                    };
                    let (hh, mm) = (hhmm[..2].parse().unwrap(), hhmm[2..].parse().unwrap());
                    match Utc
                        .with_ymd_and_hms(year as i32, month, day, hh, mm, 0)
                        .single()
                    {
                        Some(ts) => candidates.push((ts, entry.path())),
                        None => warnings.push(format!(
                            "{}: not a valid instant, skipped",
                            entry.path().display()
                        )),
                    }
                }
            }
        }
    }
    candidates.sort();

    let mut snapshots = Vec::new();
    for (ts, path) in candidates {
        if ts < start || ts >= end {
            continue;
        }
        let text = match std::fs::read_to_string(&path) {
            Ok(text) => text,
            Err(e) => {
                warnings.push(format!("{}: unreadable, skipped: {e}", path.display()));
                continue;
            }
        };
        match parse_snapshot_tsv(&text) {
            Ok(rows) => snapshots.push(Snapshot {
                timestamp: ts,
                rows,
            }),
            Err(e) => warnings.push(format!("{}: corrupt, skipped: {e}", path.display())),
        }
    }
    Ok((snapshots, warnings))
}

// read_range helper: subdirectories whose names are exactly `digits`
// ascii digits, as (numeric value, path).
fn numeric_subdirs(dir: &Path, digits: usize) -> Result<Vec<(u32, PathBuf)>, ArchiveError> {
    let mut out = Vec::new();
    let entries = std::fs::read_dir(dir).map_err(io_err(dir))?;
    for entry in entries {
        let entry = entry.map_err(io_err(dir))?;
        let path = entry.path();
        if !path.is_dir() {
            continue;
        }
        let name = entry.file_name();
        let Some(name) = name.to_str() else { continue };
        if name.len() == digits && name.bytes().all(|b| b.is_ascii_digit()) {
            out.push((name.parse().unwrap(), path));
        }
    }
    out.sort();
    Ok(out)
}
