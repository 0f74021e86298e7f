//! One-shot cluster load printer: who is using which node, and how hard.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use chrono::{DateTime, Utc};
use clap::Parser;

use hpcload::cli::{expand_nodelist, run, CliMode, CliRequest, PrivilegeConfig};
use hpcload::collect::{load_cluster_dir, PRIVILEGES_FILE};

#[derive(Parser)]
#[command(
    name = "hpcload",
    version,
    about = "Show per-user CPU and GPU load across a cluster",
    after_help = "Exit codes: 0 ok, 1 no listed node found, 2 bad arguments, 3 unreadable input."
)]
struct Args {
    /// Add GPU columns (count, load, memory) to the tables
    #[arg(short = 'g', long = "gpu")]
    gpu: bool,

    /// Show every user's jobs, not only yours (privileged users only;
    /// silently shows just your own rows otherwise)
    #[arg(long)]
    all: bool,

    /// Machine-readable TSV instead of aligned tables
    #[arg(long)]
    tsv: bool,

    /// List the N highest-CPU-load nodes and nothing else
    #[arg(
        short = 't',
        value_name = "N",
        conflicts_with_all = ["gpu", "all", "tsv", "nodelist"]
    )]
    top: Option<u32>,

    /// Node detail view, e.g. "c-1-1-[1-4],c-8-6-2"
    #[arg(
        short = 'n',
        value_name = "NODELIST",
        conflicts_with_all = ["all", "tsv"]
    )]
    nodelist: Option<String>,

    /// Directory holding nodes.txt, jobs.txt, gpu/, users.tsv, privileges.tsv
    #[arg(long, value_name = "PATH")]
    cluster_dir: PathBuf,

    /// Act as this user instead of $USER
    #[arg(long, value_name = "NAME")]
    as_user: Option<String>,

    /// Override the snapshot timestamp (RFC-3339), mostly for tests
    #[arg(long, value_name = "TIMESTAMP")]
    at: Option<String>,

    /// Override the cluster name from the input directory
    #[arg(long, value_name = "NAME")]
    cluster: Option<String>,
}

fn usage_error(msg: &str) -> ExitCode {
    eprintln!("hpcload: {msg}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let args = Args::parse();

    let invoking_user = match args.as_user.clone().or_else(|| std::env::var("USER").ok()) {
        Some(user) if !user.is_empty() => user,
        _ => return usage_error("cannot determine invoking user: set --as-user or $USER"),
    };
    let at: Option<DateTime<Utc>> = match &args.at {
        None => None,
        Some(raw) => match DateTime::parse_from_rfc3339(raw) {
            Ok(ts) => Some(ts.with_timezone(&Utc)),
            Err(err) => return usage_error(&format!("bad --at {raw:?}: {err}")),
        },
    };
    let nodelist = match &args.nodelist {
        None => Vec::new(),
        Some(raw) => match expand_nodelist(raw) {
            Ok(names) => names,
            Err(err) => return usage_error(&format!("bad -n {raw:?}: {err}")),
        },
    };
    let request = CliRequest {
        invoking_user,
        mode: if args.top.is_some() {
            CliMode::Top
        } else if !nodelist.is_empty() {
            CliMode::Nodes
        } else if args.all {
            CliMode::All
        } else {
            CliMode::Default
        },
        gpu: args.gpu,
        tsv: args.tsv,
        top_n: args.top.unwrap_or(0),
        nodelist,
    };
    if let Err(err) = request.validate() {
        return usage_error(&err.to_string());
    }

    match load_and_run(&args, at, &request) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("hpcload: {err:#}");
            ExitCode::from(3)
        }
    }
}

fn load_and_run(
    args: &Args,
    at: Option<DateTime<Utc>>,
    request: &CliRequest,
) -> anyhow::Result<ExitCode> {
    let view = load_cluster_dir(&args.cluster_dir, at, args.cluster.as_deref())
        .with_context(|| format!("reading cluster dir {}", args.cluster_dir.display()))?;
    for warning in &view.warnings {
        eprintln!("hpcload: warning: {warning}");
    }

    let privileges_path = args.cluster_dir.join(PRIVILEGES_FILE);
    let privileges = match std::fs::read_to_string(&privileges_path) {
        Ok(text) => PrivilegeConfig::parse(&text),
        Err(err) if err.kind() == std::io::ErrorKind::NotFound => PrivilegeConfig::default(),
        Err(err) => {
            return Err(err).with_context(|| format!("reading {}", privileges_path.display()))
        }
    };

    let output = run(request, &view, &privileges)?;
    print!("{}", output.stdout);
    Ok(ExitCode::from(output.exit_code as u8))
}
