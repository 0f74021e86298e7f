//! Snapshot archiver: capture a cluster directory into the TSV archive,
//! or list what a time range of the archive already holds.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use chrono::{DateTime, Utc};
use clap::{Parser, Subcommand};

use hpcload::archive::{read_range, take_snapshot, SnapshotArchive};
use hpcload::collect::load_cluster_dir;

#[derive(Parser)]
#[command(
    name = "hpcload-archive",
    version,
    about = "Maintain the per-cluster TSV snapshot archive",
    after_help = "Exit codes: 0 ok, 2 bad arguments, 3 unreadable input."
)]
struct Args {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Snapshot a cluster directory into the archive
    Take {
        /// Directory holding nodes.txt, jobs.txt, gpu/, users.tsv
        #[arg(long, value_name = "PATH")]
        cluster_dir: PathBuf,
        /// Archive root; snapshots land under <root>/<cluster>/...
        #[arg(long, value_name = "PATH")]
        archive_root: PathBuf,
        /// Snapshot timestamp override (RFC-3339); floored to the grid
        #[arg(long, value_name = "TIMESTAMP")]
        at: Option<String>,
        /// Cluster name override
        #[arg(long, value_name = "NAME")]
        cluster: Option<String>,
    },
    /// List archived snapshots in [--from, --to)
    Ls {
        #[arg(long, value_name = "PATH")]
        archive_root: PathBuf,
        #[arg(long, value_name = "TIMESTAMP")]
        from: String,
        #[arg(long, value_name = "TIMESTAMP")]
        to: String,
        /// Cluster name; defaults to the root's only subdirectory
        #[arg(long, value_name = "NAME")]
        cluster: Option<String>,
    },
}

fn usage_error(msg: &str) -> ExitCode {
    eprintln!("hpcload-archive: {msg}");
    ExitCode::from(2)
}

fn parse_ts(what: &str, raw: &str) -> Result<DateTime<Utc>, String> {
    DateTime::parse_from_rfc3339(raw)
        .map(|ts| ts.with_timezone(&Utc))
        .map_err(|err| format!("bad {what} {raw:?}: {err}"))
}

/// The cluster to operate on: explicit flag, or the root's single
/// subdirectory when there is exactly one.
fn resolve_cluster(root: &Path, explicit: Option<&str>) -> anyhow::Result<Result<String, String>> {
    if let Some(name) = explicit {
        return Ok(Ok(name.to_string()));
    }
    let mut clusters = Vec::new();
    let entries = std::fs::read_dir(root).with_context(|| format!("reading {}", root.display()))?;
    for entry in entries {
        let entry = entry.with_context(|| format!("reading {}", root.display()))?;
        if entry.path().is_dir() {
            clusters.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    clusters.sort();
    match clusters.len() {
        1 => Ok(Ok(clusters.remove(0))),
        0 => Ok(Err(format!(
            "no cluster directories under {}; pass --cluster",
            root.display()
        ))),
        _ => Ok(Err(format!(
            "multiple clusters under {} ({}); pass --cluster",
            root.display(),
            clusters.join(", ")
        ))),
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match args.cmd {
        Cmd::Take {
            cluster_dir,
            archive_root,
            at,
            cluster,
        } => {
            let at = match at.as_deref().map(|raw| parse_ts("--at", raw)).transpose() {
                Ok(ts) => ts,
                Err(msg) => return usage_error(&msg),
            };
            match take(&cluster_dir, &archive_root, at, cluster.as_deref()) {
                Ok(()) => ExitCode::SUCCESS,
                Err(err) => {
                    eprintln!("hpcload-archive: {err:#}");
                    ExitCode::from(3)
                }
            }
        }
        Cmd::Ls {
            archive_root,
            from,
            to,
            cluster,
        } => {
            let (from, to) = match (parse_ts("--from", &from), parse_ts("--to", &to)) {
                (Ok(f), Ok(t)) => (f, t),
                (Err(msg), _) | (_, Err(msg)) => return usage_error(&msg),
            };
            if from > to {
                return usage_error("--from is after --to");
            }
            let cluster = match resolve_cluster(&archive_root, cluster.as_deref()) {
                Ok(Ok(name)) => name,
                Ok(Err(msg)) => return usage_error(&msg),
                Err(err) => {
                    eprintln!("hpcload-archive: {err:#}");
                    return ExitCode::from(3);
                }
            };
            match ls(&archive_root, &cluster, from, to) {
                Ok(()) => ExitCode::SUCCESS,
                Err(err) => {
                    eprintln!("hpcload-archive: {err:#}");
                    ExitCode::from(3)
                }
            }
        }
    }
}

fn take(
    cluster_dir: &Path,
    archive_root: &Path,
    at: Option<DateTime<Utc>>,
    cluster: Option<&str>,
) -> anyhow::Result<()> {
    let view = load_cluster_dir(cluster_dir, at, cluster)
        .with_context(|| format!("reading cluster dir {}", cluster_dir.display()))?;
    for warning in &view.warnings {
        eprintln!("hpcload-archive: warning: {warning}");
    }
    let archive = SnapshotArchive::new(archive_root, &view.cluster_name);
    let outcome = take_snapshot(&view, &archive).context("writing snapshot")?;
    for note in &outcome.notes {
        eprintln!("hpcload-archive: note: {note}");
    }
    println!("{}", outcome.path.display());
    Ok(())
}

fn ls(root: &Path, cluster: &str, from: DateTime<Utc>, to: DateTime<Utc>) -> anyhow::Result<()> {
    let archive = SnapshotArchive::new(root, cluster);
    let (snapshots, warnings) = read_range(&archive, from, to)
        .with_context(|| format!("reading archive {}", root.display()))?;
    for warning in &warnings {
        eprintln!("hpcload-archive: warning: {warning}");
    }
    for snapshot in &snapshots {
        println!(
            "{}\t{}\t{}",
            snapshot
                .timestamp
                .to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            snapshot.rows.len(),
            archive.snapshot_path(snapshot.timestamp).display()
        );
    }
    Ok(())
}
