//! The five report renderers behind the `hpcload` command, plus the
//! privilege gate for `--all`.
//!
//! All renderers are pure: same view and request produce byte-identical
//! text. Loads appear with two decimals everywhere; absent GPU detail
//! renders as "-". Every line is right-trimmed.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use chrono::SecondsFormat;

use crate::collect::{ClusterView, UsageRow, UserTable};
use crate::model::{gb_floor, gb_round, normalize_cpu_load, JobType, ModelError, NodeRecord};

/// Users allowed to see everyone's jobs. Anyone else asking for `--all`
/// silently gets their own view, which is the operational behavior this
/// reproduces: the flag is not an error for regular users, it is just
/// inert.
#[derive(Debug, Clone, Default)]
pub struct PrivilegeConfig {
    pub privileged_users: BTreeSet<String>,
}

impl PrivilegeConfig {
    pub fn parse(text: &str) -> Self {
        let privileged_users = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(str::to_string)
            .collect();
        PrivilegeConfig { privileged_users }
    }

    pub fn is_privileged(&self, user: &str) -> bool {
        self.privileged_users.contains(user)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CliMode {
    Default,
    All,
    Top,
    Nodes,
}

#[derive(Debug, Clone)]
pub struct CliRequest {
    pub invoking_user: String,
    pub mode: CliMode,
    pub gpu: bool,
    pub tsv: bool,
    /// Only meaningful in top mode.
    pub top_n: u32,
    /// Only meaningful in nodes mode.
    pub nodelist: Vec<String>,
}

impl CliRequest {
    pub fn validate(&self) -> Result<(), ModelError> {
        if self.mode == CliMode::Top && self.top_n == 0 {
            return Err(ModelError::InvalidValue {
                what: "top_n",
                value: "0".to_string(),
            });
        }
        if self.mode == CliMode::Nodes && self.nodelist.is_empty() {
            return Err(ModelError::InvalidValue {
                what: "nodelist",
                value: "(empty)".to_string(),
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunOutput {
    pub stdout: String,
    pub exit_code: i32,
}

pub fn run(
    request: &CliRequest,
    view: &ClusterView,
    privileges: &PrivilegeConfig,
) -> Result<RunOutput, ModelError> {
    request.validate()?;
    let out = match request.mode {
        CliMode::Top => RunOutput {
            stdout: render_top_view(view, request.top_n)?,
            exit_code: 0,
        },
        CliMode::Nodes => {
            let viewer = if privileges.is_privileged(&request.invoking_user) {
                None
            } else {
                Some(request.invoking_user.as_str())
            };
            let (stdout, any_found) =
                render_nodes_view(view, &request.nodelist, request.gpu, viewer)?;
            RunOutput {
                stdout,
                exit_code: if any_found { 0 } else { 1 },
            }
        }
        CliMode::Default | CliMode::All => {
            let all =
                request.mode == CliMode::All && privileges.is_privileged(&request.invoking_user);
            let stdout = if request.tsv {
                let scope = if all {
                    None
                } else {
                    Some(request.invoking_user.as_str())
                };
                render_tsv(view, scope, request.gpu)?
            } else if all {
                render_all_view(view, request.gpu, &view.user_table)?
            } else {
                render_user_view(view, &request.invoking_user, request.gpu)?
            };
            RunOutput {
                stdout,
                exit_code: 0,
            }
        }
    };
    Ok(out)
}

fn fmt_load(x: f64) -> String {
    format!("{x:.2}")
}

fn fmt_opt_load(x: Option<f64>) -> String {
    x.map(fmt_load).unwrap_or_else(|| "-".to_string())
}

fn triple(used: u64, free: u64, total: u64) -> String {
    format!("{used}/{free}/{total}")
}

fn push_line(out: &mut String, line: &str) {
    out.push_str(line.trim_end());
    out.push('\n');
}

/// One table row in the per-user layout. Columns are fixed-width and
/// two-space separated so golden files stay diffable.
fn user_table_line(
    node: &str,
    cpu: &str,
    load: &str,
    mem: &str,
    gpu: Option<(&str, &str, &str)>,
) -> String {
    let mut line = format!("{node:<16}  {cpu:<11}  {load:>7}  {mem:<16}");
    if let Some((gpu_triple, gpu_load, gpu_mem)) = gpu {
        write!(line, "  {gpu_triple:<11}  {gpu_load:>7}  {gpu_mem}").expect("write to String");
    }
    line.trim_end().to_string()
}

fn user_table_header(gpu: bool) -> String {
    user_table_line(
        "NODE",
        "CPU(U/F/T)",
        "LOAD",
        "MEM_GB(U/F/T)",
        gpu.then_some(("GPU(U/F/T)", "GPULOAD", "GPUMEM_GB(U/F/T)")),
    )
}

/// Table body shared by the default and --all views: one line per row,
/// then a TOTAL line. Loads in the TOTAL line are usage-weighted means
/// (by cores for CPU, by attributed GPUs for GPU), not averages of
/// averages.
fn user_table_body(rows: &[&UsageRow], gpu: bool) -> Vec<String> {
    let mut lines = vec![user_table_header(gpu)];
    if rows.is_empty() {
        lines.push("no active jobs".to_string());
        return lines;
    }

    let mut cpu = (0u64, 0u64, 0u64);
    let mut mem = (0u64, 0u64, 0u64);
    let mut gputot = (0u64, 0u64, 0u64);
    let mut gmem: Option<(u64, u64, u64)> = None;
    let mut load_weighted = 0.0;
    let mut gl_weighted = 0.0;
    let mut gl_gpus = 0u64;

    for row in rows {
        let u = &row.usage;
        cpu = (
            cpu.0 + u.cpu_used as u64,
            cpu.1 + u.cpu_free as u64,
            cpu.2 + u.cpu_total as u64,
        );
        mem = (
            mem.0 + u.mem_used_gb,
            mem.1 + u.mem_free_gb,
            mem.2 + u.mem_total_gb,
        );
        gputot = (
            gputot.0 + u.gpu_used as u64,
            gputot.1 + u.gpu_free as u64,
            gputot.2 + u.gpu_total as u64,
        );
        load_weighted += u.load_norm * u.cpu_total as f64;
        if let Some(gl) = u.gpu_load_norm {
            if u.gpu_used > 0 {
                gl_weighted += gl * u.gpu_used as f64;
                gl_gpus += u.gpu_used as u64;
            }
        }
        if let (Some(t), Some(us), Some(f)) =
            (u.gpu_mem_total_gb, u.gpu_mem_used_gb, u.gpu_mem_free_gb)
        {
            let acc = gmem.get_or_insert((0, 0, 0));
            *acc = (acc.0 + us, acc.1 + f, acc.2 + t);
        }

        let gpu_cols = gpu.then(|| {
            let gpu_triple = if u.gpu_total == 0 {
                "-".to_string()
            } else {
                triple(u.gpu_used as u64, u.gpu_free as u64, u.gpu_total as u64)
            };
            let gpu_mem = match (u.gpu_mem_used_gb, u.gpu_mem_free_gb, u.gpu_mem_total_gb) {
                (Some(us), Some(f), Some(t)) => triple(us, f, t),
                _ => "-".to_string(),
            };
            (gpu_triple, fmt_opt_load(u.gpu_load_norm), gpu_mem)
        });
        lines.push(user_table_line(
            &u.node_name,
            &triple(u.cpu_used as u64, u.cpu_free as u64, u.cpu_total as u64),
            &fmt_load(u.load_norm),
            &triple(mem_row(u).0, mem_row(u).1, mem_row(u).2),
            gpu_cols
                .as_ref()
                .map(|(a, b, c)| (a.as_str(), b.as_str(), c.as_str())),
        ));
    }

    let total_load = fmt_load(load_weighted / cpu.2 as f64);
    let gpu_cols = gpu.then(|| {
        let gpu_triple = if gputot.2 == 0 {
            "-".to_string()
        } else {
            triple(gputot.0, gputot.1, gputot.2)
        };
        let gpu_load = if gl_gpus == 0 {
            "-".to_string()
        } else {
            fmt_load(gl_weighted / gl_gpus as f64)
        };
        let gpu_mem = match gmem {
            Some((us, f, t)) => triple(us, f, t),
            None => "-".to_string(),
        };
        (gpu_triple, gpu_load, gpu_mem)
    });
    lines.push(user_table_line(
        "TOTAL",
        &triple(cpu.0, cpu.1, cpu.2),
        &total_load,
        &triple(mem.0, mem.1, mem.2),
        gpu_cols
            .as_ref()
            .map(|(a, b, c)| (a.as_str(), b.as_str(), c.as_str())),
    ));
    lines
}

fn mem_row(u: &crate::model::UserNodeUsage) -> (u64, u64, u64) {
    (u.mem_used_gb, u.mem_free_gb, u.mem_total_gb)
}

/// The default view: the invoking user's own rows, one per node.
pub fn render_user_view(view: &ClusterView, user: &str, gpu: bool) -> Result<String, ModelError> {
    let (rows, _) = view.usage_rows()?;
    let mine: Vec<&UsageRow> = rows.iter().filter(|r| r.usage.user == user).collect();
    let mut out = String::new();
    for line in user_table_body(&mine, gpu) {
        push_line(&mut out, &line);
    }
    Ok(out)
}

/// The privileged `--all` view: Jupyter summary first, then one block
/// per user in name order, each headed by the user's email.
pub fn render_all_view(
    view: &ClusterView,
    gpu: bool,
    user_table: &UserTable,
) -> Result<String, ModelError> {
    let (rows, _) = view.usage_rows()?;
    let mut out = String::new();

    push_line(&mut out, "JUPYTER");
    let mut jupyter: Vec<_> = view
        .jobs
        .iter()
        .filter(|j| j.job_type == JobType::Jupyter && j.state == crate::model::JobState::Running)
        .collect();
    jupyter.sort_by(|a, b| {
        (&a.node_name, &a.user, &a.job_id).cmp(&(&b.node_name, &b.user, &b.job_id))
    });
    if jupyter.is_empty() {
        push_line(&mut out, "  none");
    }
    for job in jupyter {
        let mut line = format!("  {:<16}  {}", job.node_name, job.user);
        if job.gpus_req > 0 {
            write!(line, "  gpus={}", job.gpus_req).expect("write to String");
        }
        push_line(&mut out, &line);
    }

    let mut users: Vec<&str> = rows.iter().map(|r| r.usage.user.as_str()).collect();
    users.sort();
    users.dedup();
    for user in users {
        out.push('\n');
        let heading = match user_table.email(user) {
            Some(email) => format!("USER {user} {email}"),
            None => format!("USER {user} (no email on file)"),
        };
        push_line(&mut out, &heading);
        let theirs: Vec<&UsageRow> = rows.iter().filter(|r| r.usage.user == user).collect();
        for line in user_table_body(&theirs, gpu) {
            push_line(&mut out, &line);
        }
    }
    Ok(out)
}

/// The `-t N` view: node-level loads only, highest first. No ownership
/// information, so no privilege gate.
pub fn render_top_view(view: &ClusterView, n: u32) -> Result<String, ModelError> {
    let mut ranked: Vec<(&NodeRecord, f64)> = view
        .nodes
        .iter()
        .map(|node| normalize_cpu_load(node.load5, node.cores_total).map(|l| (node, l)))
        .collect::<Result<_, _>>()?;
    ranked.sort_by(|(na, la), (nb, lb)| {
        lb.partial_cmp(la)
            .expect("loads are finite")
            .then_with(|| na.node_name.cmp(&nb.node_name))
    });
    ranked.truncate(n as usize);

    let mut out = String::new();
    push_line(
        &mut out,
        &format!(
            "{:<16}  {:>9}  {:>5}  {}",
            "NODE", "LOAD_NORM", "CORES", "STATE"
        ),
    );
    for (node, load) in ranked {
        push_line(
            &mut out,
            &format!(
                "{:<16}  {:>9}  {:>5}  {}",
                node.node_name,
                fmt_load(load),
                node.cores_total,
                node.state
            ),
        );
    }
    Ok(out)
}

/// The `-n NODELIST` view: per-node inventory plus job rows in list
/// order. Unprivileged viewers see other users' job names as "(hidden)";
/// viewer = None means privileged.
pub fn render_nodes_view(
    view: &ClusterView,
    nodelist: &[String],
    gpu: bool,
    viewer: Option<&str>,
) -> Result<(String, bool), ModelError> {
    let mut out = String::new();
    let mut any_found = false;
    for (i, name) in nodelist.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let Some(node) = view.node(name) else {
            push_line(&mut out, &format!("node {name}: not found"));
            continue;
        };
        any_found = true;
        let load = normalize_cpu_load(node.load5, node.cores_total)?;
        push_line(
            &mut out,
            &format!(
                "{}  state={}  cores={}/{}  load={}  mem_gb={}/{}  gpus={}/{}",
                node.node_name,
                node.state,
                node.cores_alloc,
                node.cores_total,
                fmt_load(load),
                gb_floor(node.mem_used_mb),
                gb_round(node.mem_total_mb),
                node.gpus_alloc,
                node.gpus_total
            ),
        );
        let jobs = view.jobs_on(name);
        if jobs.is_empty() {
            push_line(&mut out, "  (no jobs)");
        } else {
            push_line(
                &mut out,
                &format!(
                    "  {:<10}  {:<10}  {:<11}  {:>5}  {:>4}  {}",
                    "JOBID", "USER", "TYPE", "CORES", "GPUS", "NAME"
                ),
            );
            for job in jobs {
                let name = match viewer {
                    Some(v) if job.user != v => "(hidden)",
                    _ => job.name.as_str(),
                };
                push_line(
                    &mut out,
                    &format!(
                        "  {:<10}  {:<10}  {:<11}  {:>5}  {:>4}  {}",
                        job.job_id,
                        job.user,
                        job.job_type.as_str(),
                        job.cores_req,
                        job.gpus_req,
                        name
                    ),
                );
            }
        }
        if gpu {
            for rec in view.gpus_on(name) {
                push_line(
                    &mut out,
                    &format!(
                        "  gpu{}: util={}%  mem_mb={}/{}",
                        rec.gpu_index, rec.util_percent, rec.mem_used_mb, rec.mem_total_mb
                    ),
                );
            }
        }
    }
    Ok((out, any_found))
}

pub const TSV_HEADER: &str = "ts\tcluster\tuser\tnode\tjobtype\tcpu_total\tcpu_used\tcpu_free\tload_norm\tmem_total_gb\tmem_used_gb\tmem_free_gb\tgpu_total\tgpu_used\tgpu_free\tgpu_load_norm\tgpu_mem_total_gb\tgpu_mem_used_gb\tgpu_mem_free_gb";

/// Machine-readable rows, one per (user, node) in that sort order.
/// scope = Some(user) restricts to that user's rows. Without the gpu
/// flag the GPU detail columns (load and memory) are "-"; the count
/// columns come from the scheduler and are always present.
pub fn render_tsv(
    view: &ClusterView,
    scope: Option<&str>,
    gpu: bool,
) -> Result<String, ModelError> {
    let (mut rows, _) = view.usage_rows()?;
    if let Some(user) = scope {
        rows.retain(|r| r.usage.user == user);
    }
    rows.sort_by(|a, b| {
        (&a.usage.user, &a.usage.node_name).cmp(&(&b.usage.user, &b.usage.node_name))
    });

    let ts = view.timestamp.to_rfc3339_opts(SecondsFormat::Secs, true);
    let mut out = String::from(TSV_HEADER);
    out.push('\n');
    for row in &rows {
        let u = &row.usage;
        let opt_count = |x: Option<u64>| match (gpu, x) {
            (true, Some(v)) => v.to_string(),
            _ => "-".to_string(),
        };
        let gpu_load = if gpu {
            fmt_opt_load(u.gpu_load_norm)
        } else {
            "-".to_string()
        };
        writeln!(
            out,
            "{ts}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
            view.cluster_name,
            u.user,
            u.node_name,
            row.job_type,
            u.cpu_total,
            u.cpu_used,
            u.cpu_free,
            fmt_load(u.load_norm),
            u.mem_total_gb,
            u.mem_used_gb,
            u.mem_free_gb,
            u.gpu_total,
            u.gpu_used,
            u.gpu_free,
            gpu_load,
            opt_count(u.gpu_mem_total_gb),
            opt_count(u.gpu_mem_used_gb),
            opt_count(u.gpu_mem_free_gb),
        )
        .expect("write to String");
    }
    Ok(out)
}

/// Expand a comma-separated node list with bracket ranges:
/// "c-8-6-[1-3],c-7-1-1" -> c-8-6-1 c-8-6-2 c-8-6-3 c-7-1-1. Lower
/// bounds with leading zeros keep their width ("n[08-10]" -> n08 n09
/// n10). Duplicates are preserved; the caller asked for them.
pub fn expand_nodelist(arg: &str) -> Result<Vec<String>, String> {
    let mut tokens = Vec::new();
    let mut depth = 0usize;
    let mut current = String::new();
    for ch in arg.chars() {
        match ch {
            '[' => {
                depth += 1;
                current.push(ch);
            }
            ']' => {
                depth = depth.checked_sub(1).ok_or("unbalanced ']'")?;
                current.push(ch);
            }
            ',' if depth == 0 => {
                tokens.push(std::mem::take(&mut current));
            }
            _ => current.push(ch),
        }
    }
    if depth != 0 {
        return Err("unbalanced '['".to_string());
    }
    tokens.push(current);

    let mut names = Vec::new();
    for token in tokens {
        if token.is_empty() {
            return Err("empty node name".to_string());
        }
        expand_token(&token, &mut names)?;
    }
    Ok(names)
}

fn expand_token(token: &str, out: &mut Vec<String>) -> Result<(), String> {
    let Some(open) = token.find('[') else {
        if token.contains(']') {
            return Err(format!("unbalanced ']' in {token:?}"));
        }
        out.push(token.to_string());
        return Ok(());
    };
    let close = token[open..]
        .find(']')
        .map(|i| open + i)
        .ok_or_else(|| format!("unbalanced '[' in {token:?}"))?;
    let (prefix, body, suffix) = (&token[..open], &token[open + 1..close], &token[close + 1..]);
    if body.is_empty() {
        return Err(format!("empty range in {token:?}"));
    }
    for part in body.split(',') {
        let (lo, hi) = match part.split_once('-') {
            Some((a, b)) => (a, b),
            None => (part, part),
        };
        let width = if lo.starts_with('0') { lo.len() } else { 0 };
        let lo_n: u64 = lo
            .parse()
            .map_err(|_| format!("bad range bound {lo:?} in {token:?}"))?;
        let hi_n: u64 = hi
            .parse()
            .map_err(|_| format!("bad range bound {hi:?} in {token:?}"))?;
        if hi_n < lo_n {
            return Err(format!("descending range {part:?} in {token:?}"));
        }
        for n in lo_n..=hi_n {
            // suffix may hold further bracket groups
            expand_token(&format!("{prefix}{n:0width$}{suffix}"), out)?;
        }
    }
    Ok(())
}
