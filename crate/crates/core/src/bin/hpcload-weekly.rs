//! Weekly archive analysis: rank node-hours of low/high utilization and
//! draft the notification emails.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use chrono::NaiveDate;
use clap::Parser;

use hpcload::analyze::{
    build_weekly_report, draft_emails, render_email, week_of, EmailDraft, WeeklyReport,
};
use hpcload::archive::{read_range, SnapshotArchive};
use hpcload::collect::{load_user_table, UserTable};
use hpcload::model::Thresholds;

#[derive(Parser)]
#[command(
    name = "hpcload-weekly",
    version,
    about = "Build the weekly top-10 node-hour report and email drafts",
    after_help = "Exit codes: 0 ok, 2 bad arguments, 3 unreadable input."
)]
struct Args {
    /// Archive root as written by hpcload-archive
    #[arg(long, value_name = "PATH")]
    archive_root: PathBuf,

    /// Any date (YYYY-MM-DD) inside the week to analyze; weeks run
    /// Monday 00:00 UTC to the next Monday
    #[arg(long, value_name = "DATE")]
    week_of: String,

    /// Low-load threshold (CPU and GPU)
    #[arg(long, value_name = "T")]
    low: Option<f64>,

    /// High-CPU-load threshold
    #[arg(long, value_name = "T")]
    high: Option<f64>,

    /// Keep real user names in report.txt
    #[arg(long)]
    no_anonymize: bool,

    /// Output directory for report.txt, emails/, mapping.tsv
    #[arg(long, value_name = "DIR")]
    out: PathBuf,

    /// Cluster name; defaults to the root's only subdirectory
    #[arg(long, value_name = "NAME")]
    cluster: Option<String>,

    /// User table (user<TAB>email) for addressing email drafts
    #[arg(long, value_name = "PATH")]
    users: Option<PathBuf>,
}

fn usage_error(msg: &str) -> ExitCode {
    eprintln!("hpcload-weekly: {msg}");
    ExitCode::from(2)
}

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

/// A user name as an email file stem: anything outside [A-Za-z0-9._-]
/// becomes '_' so the name cannot escape the emails/ directory.
fn sanitize(user: &str) -> String {
    user.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '_' | '-') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn main() -> ExitCode {
    let args = Args::parse();

    let date = match NaiveDate::parse_from_str(&args.week_of, "%Y-%m-%d") {
        Ok(date) => date,
        Err(err) => return usage_error(&format!("bad --week-of {:?}: {err}", args.week_of)),
    };
    let mut thresholds = Thresholds::default();
    if let Some(low) = args.low {
        thresholds.low_threshold = low;
    }
    if let Some(high) = args.high {
        thresholds.high_cpu_threshold = high;
    }
    if let Err(err) = thresholds.validate() {
        return usage_error(&err.to_string());
    }
    let cluster = match resolve_cluster(&args.archive_root, args.cluster.as_deref()) {
        Ok(Ok(name)) => name,
        Ok(Err(msg)) => return usage_error(&msg),
        Err(err) => {
            eprintln!("hpcload-weekly: {err:#}");
            return ExitCode::from(3);
        }
    };

    match run(&args, date, &thresholds, &cluster) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("hpcload-weekly: {err:#}");
            ExitCode::from(3)
        }
    }
}

fn run(args: &Args, date: NaiveDate, thresholds: &Thresholds, cluster: &str) -> anyhow::Result<()> {
    let archive = SnapshotArchive::new(&args.archive_root, cluster);
    let period = week_of(date);

    let (report, text, warnings) =
        build_weekly_report(&archive, period, thresholds, !args.no_anonymize)
            .context("building weekly report")?;
    for warning in &warnings {
        eprintln!("hpcload-weekly: warning: {warning}");
    }

    let user_table = match &args.users {
        None => UserTable::default(),
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading {}", path.display()))?;
            let (table, warnings) = load_user_table(&text);
            for warning in warnings {
                eprintln!("hpcload-weekly: warning: {warning}");
            }
            table
        }
    };
    // drafts need the archived rows again for evidence
    let (snapshots, _) = read_range(&archive, period.0, period.1).context("reading archive")?;
    let (drafts, warnings) = draft_emails(&report, &user_table, &snapshots, thresholds);
    for warning in &warnings {
        eprintln!("hpcload-weekly: warning: {warning}");
    }

    write_outputs(&args.out, &report, &text, &drafts)?;
    println!(
        "{}: {} snapshots, {} drafts, report at {}",
        cluster,
        report.snapshot_count,
        drafts.len(),
        args.out.join("report.txt").display()
    );
    Ok(())
}

fn write_outputs(
    out: &Path,
    report: &WeeklyReport,
    text: &str,
    drafts: &[EmailDraft],
) -> anyhow::Result<()> {
    let emails_dir = out.join("emails");
    std::fs::create_dir_all(&emails_dir)
        .with_context(|| format!("creating {}", emails_dir.display()))?;

    let report_path = out.join("report.txt");
    std::fs::write(&report_path, text)
        .with_context(|| format!("writing {}", report_path.display()))?;

    for draft in drafts {
        let path = emails_dir.join(format!(
            "{}-{}.txt",
            sanitize(&draft.user),
            draft.category.as_str()
        ));
        std::fs::write(&path, render_email(draft, report))
            .with_context(|| format!("writing {}", path.display()))?;
    }

    // the de-anonymization key; keep this file restricted
    let mut mapping = String::from("category\tdisplay_user\treal_user\n");
    for section in &report.sections {
        for entry in &section.entries {
            mapping.push_str(&format!(
                "{}\t{}\t{}\n",
                section.category.as_str(),
                entry.display_user,
                section.real_user(&entry.display_user)
            ));
        }
    }
    let mapping_path = out.join("mapping.tsv");
    std::fs::write(&mapping_path, mapping)
        .with_context(|| format!("writing {}", mapping_path.display()))?;
    Ok(())
}
