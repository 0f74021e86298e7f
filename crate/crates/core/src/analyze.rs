//! The weekly pass over the snapshot archive: classify every archived
//! (user, node, snapshot) instance, aggregate node-hours per user and
//! category, rank the top 10, anonymize, and draft notification emails.
//!
//! Classification is instantaneous: each archived row is judged on its
//! own (quantized) loads and contributes one interval of node-hours to
//! every category it matches. Nothing is smoothed across snapshots.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use chrono::{DateTime, Datelike, Duration, NaiveDate, Utc};

use crate::archive::{
    emit_snapshot_row, read_range, ArchiveError, Snapshot, SnapshotArchive, SnapshotRow,
};
use crate::cli::TSV_HEADER;
use crate::collect::UserTable;
use crate::model::{classify_load, recommend_nppn, Category, Thresholds};

/// [start, end) of the calendar week (Monday 00:00 UTC) containing the
/// given date.
pub fn week_of(date: NaiveDate) -> (DateTime<Utc>, DateTime<Utc>) {
    let monday = date - Duration::days(date.weekday().num_days_from_monday() as i64);
    let start = monday
        .and_hms_opt(0, 0, 0)
        .expect("midnight exists")
        .and_utc();
    (start, start + Duration::days(7))
}

/// Aggregate flagged instances into node-hours: every archived row whose
/// flags include a category contributes one snapshot interval to that
/// (user, category). Totals are exact multiples of the interval.
pub fn compute_node_hours(
    snapshots: &[Snapshot],
    t: &Thresholds,
) -> BTreeMap<(String, Category), f64> {
    let mut counts: BTreeMap<(String, Category), u64> = BTreeMap::new();
    for snap in snapshots {
        for row in &snap.rows {
            for category in classify_load(&row.usage, t).categories() {
                *counts
                    .entry((row.usage.user.clone(), category))
                    .or_default() += 1;
            }
        }
    }
    counts
        .into_iter()
        .map(|(key, n)| (key, n as f64 * t.snapshot_interval_hours))
        .collect()
}

/// The k users with the most node-hours in one category, descending;
/// equal totals order alphabetically.
pub fn rank_top(
    node_hours: &BTreeMap<(String, Category), f64>,
    category: Category,
    k: usize,
) -> Vec<(String, f64)> {
    let mut entries: Vec<(String, f64)> = node_hours
        .iter()
        .filter(|((_, c), _)| *c == category)
        .map(|((user, _), hours)| (user.clone(), *hours))
        .collect();
    entries.sort_by(|a, b| {
        b.1.partial_cmp(&a.1)
            .expect("node-hours are finite")
            .then_with(|| a.0.cmp(&b.0))
    });
    entries.truncate(k);
    entries
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedEntry {
    pub rank: u32,
    pub display_user: String,
    pub node_hours: f64,
}

#[derive(Debug, Clone)]
pub struct ReportSection {
    pub category: Category,
    pub entries: Vec<RankedEntry>,
    /// display_user -> real user. Identity until anonymized.
    pub mapping: BTreeMap<String, String>,
}

impl ReportSection {
    pub fn real_user<'a>(&'a self, display: &'a str) -> &'a str {
        self.mapping
            .get(display)
            .map(String::as_str)
            .unwrap_or(display)
    }
}

#[derive(Debug, Clone)]
pub struct WeeklyReport {
    pub cluster: String,
    pub start: DateTime<Utc>,
    pub end: DateTime<Utc>,
    pub snapshot_count: usize,
    pub thresholds: Thresholds,
    pub anonymized: bool,
    /// Always three sections, in [`Category::ALL`] order.
    pub sections: Vec<ReportSection>,
}

/// Replace real names with per-section pseudonyms user01, user02, ... in
/// rank order. Labels are assigned independently per section, so user01
/// in one section and user01 in another are not the same person; the
/// mapping keeps the truth for email drafting.
pub fn anonymize(report: &mut WeeklyReport) {
    for section in &mut report.sections {
        let previous = std::mem::take(&mut section.mapping);
        for entry in &mut section.entries {
            let label = format!("user{:02}", entry.rank);
            let real = previous
                .get(&entry.display_user)
                .cloned()
                .unwrap_or_else(|| entry.display_user.clone());
            section.mapping.insert(label.clone(), real);
            entry.display_user = label;
        }
    }
    report.anonymized = true;
}

pub const TOP_K: usize = 10;

/// Read one period of the archive and build the ranked report plus its
/// rendered text. Returns archive warnings alongside.
pub fn build_weekly_report(
    archive: &SnapshotArchive,
    period: (DateTime<Utc>, DateTime<Utc>),
    thresholds: &Thresholds,
    anonymize_users: bool,
) -> Result<(WeeklyReport, String, Vec<String>), ArchiveError> {
    let (start, end) = period;
    let (snapshots, warnings) = read_range(archive, start, end)?;
    let node_hours = compute_node_hours(&snapshots, thresholds);

    let sections = Category::ALL
        .into_iter()
        .map(|category| {
            let ranked = rank_top(&node_hours, category, TOP_K);
            let mut mapping = BTreeMap::new();
            let entries = ranked
                .into_iter()
                .zip(1u32..)
                .map(|((user, hours), rank)| {
                    mapping.insert(user.clone(), user.clone());
                    RankedEntry {
                        rank,
                        display_user: user,
                        node_hours: hours,
                    }
                })
                .collect();
            ReportSection {
                category,
                entries,
                mapping,
            }
        })
        .collect();

    let mut report = WeeklyReport {
        cluster: archive.cluster_name.clone(),
        start,
        end,
        snapshot_count: snapshots.len(),
        thresholds: *thresholds,
        anonymized: false,
        sections,
    };
    if anonymize_users {
        anonymize(&mut report);
    }
    let text = render_report(&report);
    Ok((report, text, warnings))
}

pub fn render_report(report: &WeeklyReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "WEEKLY UTILIZATION REPORT");
    let _ = writeln!(out, "cluster: {}", report.cluster);
    let _ = writeln!(
        out,
        "period: {} .. {}",
        report
            .start
            .to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        report
            .end
            .to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
    );
    let _ = writeln!(out, "snapshots: {}", report.snapshot_count);
    let _ = writeln!(
        out,
        "thresholds: low {} high {}",
        report.thresholds.low_threshold, report.thresholds.high_cpu_threshold
    );
    let _ = writeln!(
        out,
        "anonymized: {}",
        if report.anonymized { "yes" } else { "no" }
    );
    for section in &report.sections {
        let _ = writeln!(out);
        let _ = writeln!(out, "TOP {TOP_K} {} (node-hours)", section.category.title());
        if section.entries.is_empty() {
            let _ = writeln!(out, "  none");
        }
        for entry in &section.entries {
            let _ = writeln!(
                out,
                "{:>4}  {:<12}  {:>10.2}",
                entry.rank, entry.display_user, entry.node_hours
            );
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct EmailDraft {
    pub to: String,
    pub user: String,
    pub category: Category,
    pub node_hours: f64,
    pub evidence: Vec<SnapshotRow>,
    pub suggestions: Vec<String>,
}

/// Placeholder recipient when the user table has no entry.
pub const NO_EMAIL: &str = "<no email on file>";

/// Evidence cap per draft: first and last occurrence plus the most
/// extreme rows in between.
pub const EVIDENCE_CAP: usize = 12;

/// Draft one notification per (user, category) entry in the report.
/// Drafts address real users (via the retained mapping), quote up to
/// [`EVIDENCE_CAP`] archived rows, and for low GPU load embed a packing
/// recommendation computed from the median flagged row, treating the
/// observed workload as one task per node.
pub fn draft_emails(
    report: &WeeklyReport,
    user_table: &UserTable,
    snapshots: &[Snapshot],
    thresholds: &Thresholds,
) -> (Vec<EmailDraft>, Vec<String>) {
    let mut drafts = Vec::new();
    let mut warnings = Vec::new();
    for section in &report.sections {
        for entry in &section.entries {
            let user = section.real_user(&entry.display_user).to_string();
            let flagged = flagged_rows(snapshots, &user, section.category, thresholds);
            let to = match user_table.email(&user) {
                Some(email) => email.to_string(),
                None => {
                    warnings.push(format!(
                        "no email on file for {user}; draft uses a placeholder recipient"
                    ));
                    NO_EMAIL.to_string()
                }
            };
            let suggestions = suggestions_for(section.category, &flagged, thresholds);
            drafts.push(EmailDraft {
                to,
                user,
                category: section.category,
                node_hours: entry.node_hours,
                evidence: select_evidence(&flagged, section.category),
                suggestions,
            });
        }
    }
    (drafts, warnings)
}

fn flagged_rows(
    snapshots: &[Snapshot],
    user: &str,
    category: Category,
    t: &Thresholds,
) -> Vec<SnapshotRow> {
    let mut rows: Vec<SnapshotRow> = snapshots
        .iter()
        .flat_map(|s| s.rows.iter())
        .filter(|r| r.usage.user == user && classify_load(&r.usage, t).contains(category))
        .cloned()
        .collect();
    rows.sort_by(|a, b| (a.timestamp, &a.usage.node_name).cmp(&(b.timestamp, &b.usage.node_name)));
    rows
}

/// How extreme a row is for its category; evidence keeps the smallest
/// keys, so low categories sort loads ascending and high descending.
fn extremity_key(row: &SnapshotRow, category: Category) -> f64 {
    match category {
        Category::LowGpu => row.usage.gpu_load_norm.unwrap_or(1.0),
        Category::LowCpu => row.usage.load_norm,
        Category::HighCpu => -row.usage.load_norm,
    }
}

fn select_evidence(flagged: &[SnapshotRow], category: Category) -> Vec<SnapshotRow> {
    if flagged.len() <= EVIDENCE_CAP {
        return flagged.to_vec();
    }
    let mut chosen = vec![0, flagged.len() - 1];
    let mut by_extremity: Vec<usize> = (0..flagged.len()).collect();
    by_extremity.sort_by(|a, b| {
        extremity_key(&flagged[*a], category)
            .partial_cmp(&extremity_key(&flagged[*b], category))
            .expect("loads are finite")
    });
    for idx in by_extremity {
        if chosen.len() == EVIDENCE_CAP {
            break;
        }
        if !chosen.contains(&idx) {
            chosen.push(idx);
        }
    }
    chosen.sort();
    chosen.into_iter().map(|i| flagged[i].clone()).collect()
}

fn suggestions_for(
    category: Category,
    flagged: &[SnapshotRow],
    thresholds: &Thresholds,
) -> Vec<String> {
    let mut out = Vec::new();
    match category {
        Category::LowGpu => {
            if let Some(rec) = median_nppn(flagged) {
                out.push(format!(
                    "pack more tasks per node: the median flagged row supports NPPN={} \
                     (limited by {}), i.e. {} tasks sharing each node's GPUs instead of 1",
                    rec.nppn, rec.limiting_factor, rec.nppn
                ));
            }
            out.push(
                "GPU overloading (several tasks per physical GPU) raises utilization \
                 when each task leaves GPU headroom; see the NPPN section of the \
                 cluster docs"
                    .to_string(),
            );
        }
        Category::LowCpu => {
            out.push(format!(
                "normalized CPU load stayed below {}: request only the cores the job \
                 actually uses, or pack several tasks per node",
                thresholds.low_threshold
            ));
        }
        Category::HighCpu => {
            out.push(
                "cap thread pools explicitly: many libraries spawn one thread per \
                 core (or hyperthread), so several such processes on one node \
                 multiply into far more runnable threads than cores"
                    .to_string(),
            );
            out.push(
                "batch file operations through fewer workers; large bursts of \
                 concurrent small-file I/O drive load far past the core count"
                    .to_string(),
            );
        }
    }
    out
}

/// Packing recommendation from the median flagged row (by GPU load).
/// The workload is assumed to run one task per node, which is what the
/// whole-node policy gives a low-GPU user.
fn median_nppn(flagged: &[SnapshotRow]) -> Option<crate::model::NppnRecommendation> {
    let mut with_gpu: Vec<&SnapshotRow> = flagged
        .iter()
        .filter(|r| r.usage.gpu_load_norm.is_some())
        .collect();
    if with_gpu.is_empty() {
        return None;
    }
    with_gpu.sort_by(|a, b| {
        a.usage
            .gpu_load_norm
            .partial_cmp(&b.usage.gpu_load_norm)
            .expect("loads are finite")
            .then_with(|| (a.timestamp, &a.usage.node_name).cmp(&(b.timestamp, &b.usage.node_name)))
    });
    let median = with_gpu[with_gpu.len() / 2];
    recommend_nppn(&median.usage, 1).ok()
}

pub fn render_email(draft: &EmailDraft, report: &WeeklyReport) -> String {
    let t = &report.thresholds;
    let condition = match draft.category {
        Category::LowGpu => format!("mean GPU load below {}", t.low_threshold),
        Category::LowCpu => format!("normalized CPU load below {}", t.low_threshold),
        Category::HighCpu => format!("normalized CPU load above {}", t.high_cpu_threshold),
    };
    let minutes = t.snapshot_interval_hours * 60.0;
    let mut out = String::new();
    let _ = writeln!(out, "To: {}", draft.to);
    let _ = writeln!(
        out,
        "Subject: [{}] weekly utilization notice: {} ({:.2} node-hours)",
        report.cluster,
        draft.category.display_name(),
        draft.node_hours
    );
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "Every {minutes:.0} minutes the cluster records one row per user per node \
         (CPU, memory, GPU)."
    );
    let _ = writeln!(
        out,
        "During {} .. {}, rows of yours matching \"{condition}\" added up to \
         {:.2} node-hours.",
        report
            .start
            .to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        report
            .end
            .to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        draft.node_hours
    );
    let _ = writeln!(out);
    let _ = writeln!(
        out,
        "Snapshot rows behind this notice (up to {EVIDENCE_CAP} shown):"
    );
    let _ = writeln!(out, "{TSV_HEADER}");
    for row in &draft.evidence {
        let _ = writeln!(out, "{}", emit_snapshot_row(row));
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "Suggestions:");
    for s in &draft.suggestions {
        let _ = writeln!(out, "- {s}");
    }
    out
}
