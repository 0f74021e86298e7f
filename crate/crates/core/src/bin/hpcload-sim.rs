//! Synthetic cluster generator: writes one collector-ready directory per
//! snapshot interval, deterministically from a seed.

use std::path::PathBuf;
use std::process::ExitCode;

use chrono::{DateTime, Utc};
use clap::Parser;

use hpcload::sim::{generate_timeline, write_timeline, Preset, ScenarioConfig};

#[derive(Parser)]
#[command(
    name = "hpcload-sim",
    version,
    about = "Generate a deterministic synthetic cluster timeline",
    after_help = "Presets: healthy, lowgpu, misalloc, threadstorm, mixed.\n\
                  Exit codes: 0 ok, 2 bad arguments, 3 write failure."
)]
struct Args {
    /// Scenario preset to generate
    #[arg(long, value_name = "NAME")]
    preset: String,

    /// RNG seed; same seed, same bytes
    #[arg(long, value_name = "N")]
    seed: u64,

    /// Output directory; one subdirectory per interval, named by its
    /// RFC-3339 timestamp
    #[arg(long, value_name = "DIR")]
    out: PathBuf,

    /// Number of nodes (preset default otherwise)
    #[arg(long, value_name = "N")]
    nodes: Option<u32>,

    /// Number of users (preset default otherwise)
    #[arg(long, value_name = "N")]
    users: Option<u32>,

    /// Timeline length in hours
    #[arg(long, value_name = "H")]
    hours: Option<f64>,

    /// Snapshot interval in hours
    #[arg(long, value_name = "H")]
    interval: Option<f64>,

    /// Cluster name (default sim-<preset>)
    #[arg(long, value_name = "NAME")]
    cluster: Option<String>,

    /// Timeline start (RFC-3339; default 2024-03-04T00:00:00Z, a Monday)
    #[arg(long, value_name = "TIMESTAMP")]
    start: Option<String>,
}

fn usage_error(msg: &str) -> ExitCode {
    eprintln!("hpcload-sim: {msg}");
    ExitCode::from(2)
}

fn main() -> ExitCode {
    let args = Args::parse();

    let preset: Preset = match args.preset.parse() {
        Ok(preset) => preset,
        Err(err) => return usage_error(&err.to_string()),
    };
    let mut config = ScenarioConfig::new(preset, args.seed);
    if let Some(nodes) = args.nodes {
        config.nodes = nodes;
    }
    if let Some(users) = args.users {
        config.users = users;
    }
    if let Some(hours) = args.hours {
        config.duration_hours = hours;
    }
    if let Some(interval) = args.interval {
        config.interval_hours = interval;
    }
    if let Some(cluster) = args.cluster {
        config.cluster_name = cluster;
    }
    if let Some(raw) = &args.start {
        match DateTime::parse_from_rfc3339(raw) {
            Ok(ts) => config.start = ts.with_timezone(&Utc),
            Err(err) => return usage_error(&format!("bad --start {raw:?}: {err}")),
        }
    }

    let timeline = match generate_timeline(&config) {
        Ok(timeline) => timeline,
        Err(err) => return usage_error(&err.to_string()),
    };
    match write_timeline(&timeline, &args.out) {
        Ok(dirs) => {
            for dir in &dirs {
                println!("{}", dir.display());
            }
            ExitCode::SUCCESS
        }
        Err(err) => {
            eprintln!("hpcload-sim: {err}");
            ExitCode::from(3)
        }
    }
}
