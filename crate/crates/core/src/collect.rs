//! Parsers for the scheduler-shaped text inputs, their emitters (the
//! simulator writes through these so round-trips are bit-exact by
//! construction), and assembly into a [`ClusterView`].
//!
//! Wire formats:
//! - node table: pipe-delimited, header [`NODE_TABLE_HEADER`], LOAD5
//!   printed with exactly two decimals
//! - job table: pipe-delimited, header [`JOB_TABLE_HEADER`]
//! - GPU text: one bare CSV per node, lines "index,util,mem_used_mb,mem_total_mb"
//! - user table: TSV "user<TAB>email", '#' comments

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Display;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, Utc};
use thiserror::Error;

use crate::model::{
    aggregate_user_node, GpuRecord, JobRecord, JobState, JobType, ModelError, NodeRecord,
    UserNodeUsage,
};

pub const NODE_TABLE_HEADER: &str =
    "NODE|CORES_TOTAL|CORES_ALLOC|LOAD5|MEM_TOTAL_MB|MEM_USED_MB|GPUS_TOTAL|GPUS_ALLOC|STATE";
pub const JOB_TABLE_HEADER: &str = "JOBID|USER|NODE|JOBTYPE|CORES|GPUS|STATE|NAME";

/// Node a pending job may carry when the scheduler has not placed it.
pub const UNPLACED: &str = "-";

#[derive(Debug, Error)]
pub enum CollectError {
    #[error("{table} table: bad or missing header, expected {expected:?}")]
    Header {
        table: &'static str,
        expected: &'static str,
    },
    #[error("{table} line {line}: {msg}")]
    Line {
        table: String,
        line: usize,
        msg: String,
    },
    #[error("running job {job_id} (user {user}) references unknown node {node}")]
    UnknownNode {
        job_id: String,
        user: String,
        node: String,
    },
    #[error("node table: duplicate node {0}")]
    DuplicateNode(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn line_err(table: &str, line: usize, msg: impl Display) -> CollectError {
    CollectError::Line {
        table: table.to_string(),
        line,
        msg: msg.to_string(),
    }
}

fn parse_field<T>(s: &str, what: &str, table: &str, line: usize) -> Result<T, CollectError>
where
    T: FromStr,
    T::Err: Display,
{
    s.parse()
        .map_err(|e| line_err(table, line, format!("bad {what} {s:?}: {e}")))
}

/// LOAD5 values must carry exactly two decimals so that emit(parse(x))
/// reproduces x byte-for-byte.
fn parse_load_2dp(s: &str, table: &str, line: usize) -> Result<f64, CollectError> {
    let ok = match s.split_once('.') {
        Some((int, frac)) => {
            !int.is_empty()
                && frac.len() == 2
                && int.bytes().all(|b| b.is_ascii_digit())
                && frac.bytes().all(|b| b.is_ascii_digit())
        }
        None => false,
    };
    if !ok {
        return Err(line_err(
            table,
            line,
            format!("bad load {s:?}: expected a nonnegative number with two decimals"),
        ));
    }
    parse_field(s, "load", table, line)
}

fn nonempty<'a>(s: &'a str, what: &str, table: &str, line: usize) -> Result<&'a str, CollectError> {
    if s.is_empty() {
        Err(line_err(table, line, format!("empty {what}")))
    } else {
        Ok(s)
    }
}

pub fn parse_node_table(text: &str) -> Result<Vec<NodeRecord>, CollectError> {
    const TABLE: &str = "node";
    let mut lines = text.lines();
    if lines.next() != Some(NODE_TABLE_HEADER) {
        return Err(CollectError::Header {
            table: TABLE,
            expected: NODE_TABLE_HEADER,
        });
    }
    let mut nodes = Vec::new();
    for (idx, raw) in lines.enumerate() {
        let line = idx + 2;
        let fields: Vec<&str> = raw.split('|').collect();
        if fields.len() != 9 {
            return Err(line_err(
                TABLE,
                line,
                format!("expected 9 fields, got {}", fields.len()),
            ));
        }
        let node = NodeRecord {
            node_name: nonempty(fields[0], "node name", TABLE, line)?.to_string(),
            cores_total: parse_field(fields[1], "cores_total", TABLE, line)?,
            cores_alloc: parse_field(fields[2], "cores_alloc", TABLE, line)?,
            load5: parse_load_2dp(fields[3], TABLE, line)?,
            mem_total_mb: parse_field(fields[4], "mem_total_mb", TABLE, line)?,
            mem_used_mb: parse_field(fields[5], "mem_used_mb", TABLE, line)?,
            gpus_total: parse_field(fields[6], "gpus_total", TABLE, line)?,
            gpus_alloc: parse_field(fields[7], "gpus_alloc", TABLE, line)?,
            state: parse_field(fields[8], "state", TABLE, line)?,
        };
        if node.cores_total == 0 {
            return Err(line_err(TABLE, line, "cores_total must be at least 1"));
        }
        if node.cores_alloc > node.cores_total {
            return Err(line_err(
                TABLE,
                line,
                format!(
                    "cores_alloc {} exceeds cores_total {}",
                    node.cores_alloc, node.cores_total
                ),
            ));
        }
        if node.mem_used_mb > node.mem_total_mb {
            return Err(line_err(
                TABLE,
                line,
                format!(
                    "mem_used_mb {} exceeds mem_total_mb {}",
                    node.mem_used_mb, node.mem_total_mb
                ),
            ));
        }
        if node.gpus_alloc > node.gpus_total {
            return Err(line_err(
                TABLE,
                line,
                format!(
                    "gpus_alloc {} exceeds gpus_total {}",
                    node.gpus_alloc, node.gpus_total
                ),
            ));
        }
        nodes.push(node);
    }
    Ok(nodes)
}

pub fn emit_node_table(nodes: &[NodeRecord]) -> String {
    let mut out = String::from(NODE_TABLE_HEADER);
    out.push('\n');
    for n in nodes {
        writeln!(
            out,
            "{}|{}|{}|{:.2}|{}|{}|{}|{}|{}",
            n.node_name,
            n.cores_total,
            n.cores_alloc,
            n.load5,
            n.mem_total_mb,
            n.mem_used_mb,
            n.gpus_total,
            n.gpus_alloc,
            n.state
        )
        .expect("write to String");
    }
    out
}

pub fn parse_job_table(text: &str) -> Result<Vec<JobRecord>, CollectError> {
    const TABLE: &str = "job";
    let mut lines = text.lines();
    if lines.next() != Some(JOB_TABLE_HEADER) {
        return Err(CollectError::Header {
            table: TABLE,
            expected: JOB_TABLE_HEADER,
        });
    }
    let mut jobs = Vec::new();
    for (idx, raw) in lines.enumerate() {
        let line = idx + 2;
        let fields: Vec<&str> = raw.split('|').collect();
        if fields.len() != 8 {
            return Err(line_err(
                TABLE,
                line,
                format!("expected 8 fields, got {}", fields.len()),
            ));
        }
        let job = JobRecord {
            job_id: nonempty(fields[0], "job id", TABLE, line)?.to_string(),
            user: nonempty(fields[1], "user", TABLE, line)?.to_string(),
            node_name: nonempty(fields[2], "node", TABLE, line)?.to_string(),
            job_type: parse_field(fields[3], "job type", TABLE, line)?,
            cores_req: parse_field(fields[4], "cores", TABLE, line)?,
            gpus_req: parse_field(fields[5], "gpus", TABLE, line)?,
            state: parse_field(fields[6], "state", TABLE, line)?,
            name: fields[7].to_string(),
        };
        if job.cores_req == 0 {
            return Err(line_err(TABLE, line, "cores must be at least 1"));
        }
        if job.state == JobState::Running && job.node_name == UNPLACED {
            return Err(line_err(TABLE, line, "running job without a node"));
        }
        jobs.push(job);
    }
    Ok(jobs)
}

pub fn emit_job_table(jobs: &[JobRecord]) -> String {
    let mut out = String::from(JOB_TABLE_HEADER);
    out.push('\n');
    for j in jobs {
        writeln!(
            out,
            "{}|{}|{}|{}|{}|{}|{}|{}",
            j.job_id, j.user, j.node_name, j.job_type, j.cores_req, j.gpus_req, j.state, j.name
        )
        .expect("write to String");
    }
    out
}

pub fn parse_gpu_csv(node_name: &str, text: &str) -> Result<Vec<GpuRecord>, CollectError> {
    let table = format!("gpu csv ({node_name})");
    let mut records = Vec::new();
    let mut seen = BTreeSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let fields: Vec<&str> = raw.split(',').collect();
        if fields.len() != 4 {
            return Err(line_err(
                &table,
                line,
                format!("expected 4 fields, got {}", fields.len()),
            ));
        }
        let rec = GpuRecord {
            node_name: node_name.to_string(),
            gpu_index: parse_field(fields[0], "index", &table, line)?,
            util_percent: parse_field(fields[1], "util", &table, line)?,
            mem_used_mb: parse_field(fields[2], "mem_used_mb", &table, line)?,
            mem_total_mb: parse_field(fields[3], "mem_total_mb", &table, line)?,
        };
        if rec.util_percent > 100 {
            return Err(line_err(
                &table,
                line,
                format!("util {} outside 0-100", rec.util_percent),
            ));
        }
        if rec.mem_used_mb > rec.mem_total_mb {
            return Err(line_err(
                &table,
                line,
                format!(
                    "mem_used_mb {} exceeds mem_total_mb {}",
                    rec.mem_used_mb, rec.mem_total_mb
                ),
            ));
        }
        if !seen.insert(rec.gpu_index) {
            return Err(line_err(
                &table,
                line,
                format!("duplicate gpu index {}", rec.gpu_index),
            ));
        }
        records.push(rec);
    }
    Ok(records)
}

pub fn emit_gpu_csv(records: &[GpuRecord]) -> String {
    let mut out = String::new();
    for g in records {
        writeln!(
            out,
            "{},{},{},{}",
            g.gpu_index, g.util_percent, g.mem_used_mb, g.mem_total_mb
        )
        .expect("write to String");
    }
    out
}

/// The user -> email directory, maintained out of band and refreshed
/// periodically; later entries win on duplicate users.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct UserTable {
    pub entries: BTreeMap<String, String>,
}

impl UserTable {
    pub fn email(&self, user: &str) -> Option<&str> {
        self.entries.get(user).map(String::as_str)
    }
}

pub fn load_user_table(text: &str) -> (UserTable, Vec<String>) {
    let mut table = UserTable::default();
    let mut warnings = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let trimmed = raw.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let Some((user, email)) = raw.split_once('\t') else {
            warnings.push(format!("user table line {line}: no tab separator, skipped"));
            continue;
        };
        if user.is_empty() || !email.contains('@') {
            warnings.push(format!(
                "user table line {line}: bad entry {user:?} -> {email:?}, skipped"
            ));
            continue;
        }
        table.entries.insert(user.to_string(), email.to_string());
    }
    (table, warnings)
}

pub fn emit_user_table(table: &UserTable) -> String {
    let mut out = String::new();
    for (user, email) in &table.entries {
        writeln!(out, "{user}\t{email}").expect("write to String");
    }
    out
}

/// One usage row plus the kind of work behind it. When a user runs
/// several job types on one node the most specific wins: jupyter over
/// interactive over batch.
#[derive(Debug, Clone, PartialEq)]
pub struct UsageRow {
    pub job_type: JobType,
    pub usage: UserNodeUsage,
}

/// Everything known about the cluster at one instant, cross-checked and
/// canonically sorted (nodes by name, jobs by id, GPUs by node+index) so
/// downstream output is insensitive to input order.
#[derive(Debug, Clone)]
pub struct ClusterView {
    pub timestamp: DateTime<Utc>,
    pub cluster_name: String,
    pub nodes: Vec<NodeRecord>,
    pub jobs: Vec<JobRecord>,
    pub gpu_records: Vec<GpuRecord>,
    pub user_table: UserTable,
    /// Degraded-collection notes (missing GPU data and the like).
    pub warnings: Vec<String>,
}

impl ClusterView {
    pub fn node(&self, name: &str) -> Option<&NodeRecord> {
        self.nodes.iter().find(|n| n.node_name == name)
    }

    pub fn jobs_on(&self, node: &str) -> Vec<&JobRecord> {
        self.jobs
            .iter()
            .filter(|j| j.state == JobState::Running && j.node_name == node)
            .collect()
    }

    pub fn gpus_on(&self, node: &str) -> Vec<GpuRecord> {
        self.gpu_records
            .iter()
            .filter(|g| g.node_name == node)
            .cloned()
            .collect()
    }

    /// Aggregate every occupied node into per-user rows, ordered by
    /// (node, user). Policy warnings from aggregation ride along.
    pub fn usage_rows(&self) -> Result<(Vec<UsageRow>, Vec<String>), ModelError> {
        let mut rows = Vec::new();
        let mut warnings = Vec::new();
        for node in &self.nodes {
            let jobs: Vec<JobRecord> = self.jobs_on(&node.node_name).into_iter().cloned().collect();
            if jobs.is_empty() {
                continue;
            }
            let gpus = self.gpus_on(&node.node_name);
            let agg = aggregate_user_node(node, &jobs, &gpus)?;
            warnings.extend(agg.warnings);
            for usage in agg.usages {
                let job_type = jobs
                    .iter()
                    .filter(|j| j.user == usage.user)
                    .map(|j| j.job_type)
                    .max()
                    .expect("usage row implies at least one job");
                rows.push(UsageRow { job_type, usage });
            }
        }
        Ok((rows, warnings))
    }
}

pub fn assemble_cluster_view(
    mut nodes: Vec<NodeRecord>,
    mut jobs: Vec<JobRecord>,
    gpu_texts: &BTreeMap<String, String>,
    user_table: UserTable,
    timestamp: DateTime<Utc>,
    cluster_name: &str,
) -> Result<ClusterView, CollectError> {
    nodes.sort_by(|a, b| a.node_name.cmp(&b.node_name));
    for pair in nodes.windows(2) {
        if pair[0].node_name == pair[1].node_name {
            return Err(CollectError::DuplicateNode(pair[0].node_name.clone()));
        }
    }
    jobs.sort_by(|a, b| {
        (&a.job_id, &a.node_name, &a.user).cmp(&(&b.job_id, &b.node_name, &b.user))
    });

    let known: BTreeSet<&str> = nodes.iter().map(|n| n.node_name.as_str()).collect();
    for job in &jobs {
        if job.state == JobState::Running && !known.contains(job.node_name.as_str()) {
            return Err(CollectError::UnknownNode {
                job_id: job.job_id.clone(),
                user: job.user.clone(),
                node: job.node_name.clone(),
            });
        }
    }

    let mut warnings = Vec::new();
    let mut gpu_records = Vec::new();
    for node in &nodes {
        let name = node.node_name.as_str();
        match (node.gpus_total, gpu_texts.get(name)) {
            (0, None) => {}
            (0, Some(_)) => {
                warnings.push(format!("gpu data for non-GPU node {name} ignored"));
            }
            (total, None) => {
                warnings.push(format!(
                    "no gpu data for {name} ({total} GPUs); GPU fields will be absent"
                ));
            }
            (total, Some(text)) => match parse_gpu_csv(name, text) {
                Ok(records) => {
                    if records.len() != total as usize {
                        warnings.push(format!(
                            "gpu data for {name} has {} records, node reports {total} GPUs",
                            records.len()
                        ));
                    }
                    gpu_records.extend(records);
                }
                Err(e) => {
                    warnings.push(format!("gpu data for {name} unreadable, skipped: {e}"));
                }
            },
        }
    }
    gpu_records.sort_by(|a, b| (&a.node_name, a.gpu_index).cmp(&(&b.node_name, b.gpu_index)));

    for stray in gpu_texts.keys() {
        if !known.contains(stray.as_str()) {
            warnings.push(format!("gpu data for unknown node {stray} ignored"));
        }
    }

    Ok(ClusterView {
        timestamp,
        cluster_name: cluster_name.to_string(),
        nodes,
        jobs,
        gpu_records,
        user_table,
        warnings,
    })
}

/// File names inside a cluster directory.
pub const NODES_FILE: &str = "nodes.txt";
pub const JOBS_FILE: &str = "jobs.txt";
pub const GPU_DIR: &str = "gpu";
pub const USERS_FILE: &str = "users.tsv";
pub const PRIVILEGES_FILE: &str = "privileges.tsv";
pub const CLUSTER_NAME_FILE: &str = "cluster";

fn read_file(path: &Path) -> Result<String, CollectError> {
    std::fs::read_to_string(path).map_err(|source| CollectError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Load a cluster directory into a view.
///
/// Timestamp: explicit `at` wins, then a directory basename that parses
/// as RFC-3339 (the simulator names interval directories that way), then
/// the current time. Cluster name: explicit override, then a one-line
/// `cluster` file, then the directory basename.
pub fn load_cluster_dir(
    dir: &Path,
    at: Option<DateTime<Utc>>,
    cluster: Option<&str>,
) -> Result<ClusterView, CollectError> {
    let nodes = parse_node_table(&read_file(&dir.join(NODES_FILE))?)?;
    let jobs = parse_job_table(&read_file(&dir.join(JOBS_FILE))?)?;

    let mut gpu_texts = BTreeMap::new();
    let gpu_dir = dir.join(GPU_DIR);
    if gpu_dir.is_dir() {
        let entries = std::fs::read_dir(&gpu_dir).map_err(|source| CollectError::Io {
            path: gpu_dir.clone(),
            source,
        })?;
        for entry in entries {
            let entry = entry.map_err(|source| CollectError::Io {
                path: gpu_dir.clone(),
                source,
            })?;
            let path = entry.path();
            if path.extension().and_then(|e| e.to_str()) != Some("csv") {
                continue;
            }
            let Some(node) = path.file_stem().and_then(|s| s.to_str()) else {
                continue;
            };
            gpu_texts.insert(node.to_string(), read_file(&path)?);
        }
    }

    let mut table_warnings = Vec::new();
    let users_path = dir.join(USERS_FILE);
    let user_table = if users_path.is_file() {
        let (table, warnings) = load_user_table(&read_file(&users_path)?);
        table_warnings = warnings;
        table
    } else {
        table_warnings.push(format!(
            "{}: missing, emails unavailable",
            users_path.display()
        ));
        UserTable::default()
    };

    let basename = dir
        .canonicalize()
        .ok()
        .and_then(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
        .unwrap_or_default();
    let timestamp = at
        .or_else(|| {
            DateTime::parse_from_rfc3339(&basename)
                .ok()
                .map(|t| t.with_timezone(&Utc))
        })
        .unwrap_or_else(Utc::now);
    let cluster_name = match cluster {
        Some(name) => name.to_string(),
        None => match std::fs::read_to_string(dir.join(CLUSTER_NAME_FILE)) {
            Ok(text) if !text.trim().is_empty() => text.trim().to_string(),
            _ => basename,
        },
    };

    let mut view = assemble_cluster_view(
        nodes,
        jobs,
        &gpu_texts,
        user_table,
        timestamp,
        &cluster_name,
    )?;
    let mut warnings = table_warnings;
    warnings.append(&mut view.warnings);
    view.warnings = warnings;
    Ok(view)
}
