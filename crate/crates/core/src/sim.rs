//! Deterministic synthetic clusters for exercising the whole pipeline
//! without scheduler access.
//!
//! Everything here is driven by [`SplitMix64`], a fixed algorithm rather
//! than the platform RNG, so identical (seed, config) pairs produce
//! byte-identical file sets on every machine and every run. Presets
//! stage one pathology each: chronically idle GPUs, a core-count
//! misallocation fixed mid-run, runaway thread counts, and a mixed bag.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, Duration, TimeZone, Utc};

use crate::collect::{
    assemble_cluster_view, emit_gpu_csv, emit_job_table, emit_node_table, load_user_table,
    parse_job_table, parse_node_table, ClusterView, CollectError, CLUSTER_NAME_FILE, GPU_DIR,
    JOBS_FILE, NODES_FILE, PRIVILEGES_FILE, USERS_FILE,
};
use crate::model::{quantize_load, GpuRecord, JobRecord, JobState, JobType, NodeRecord, NodeState};

/// SplitMix64 (Steele, Lea, Flood 2014). Tiny state, full 64-bit output,
/// and completely specified by the constants below, which is the point:
/// generated fixtures must never depend on std's hasher or OS entropy.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9e3779b97f4a7c15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
        z ^ (z >> 31)
    }

    /// Uniform integer in [lo, hi], both ends inclusive. Modulo bias is
    /// irrelevant at the ranges used here (spans far below 2^32).
    pub fn range_u64(&mut self, lo: u64, hi: u64) -> u64 {
        debug_assert!(lo <= hi);
        lo + self.next_u64() % (hi - lo + 1)
    }

    /// Uniform float in [0, 1) with 53 random bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 / (1u64 << 53) as f64
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("invalid scenario config: {0}")]
    Config(String),
    #[error("unknown preset {0:?} (expected healthy, lowgpu, misalloc, threadstorm or mixed)")]
    UnknownPreset(String),
    #[error("write {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    Healthy,
    LowGpu,
    Misalloc,
    ThreadStorm,
    Mixed,
}

impl Preset {
    pub const ALL: [Preset; 5] = [
        Preset::Healthy,
        Preset::LowGpu,
        Preset::Misalloc,
        Preset::ThreadStorm,
        Preset::Mixed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Preset::Healthy => "healthy",
            Preset::LowGpu => "lowgpu",
            Preset::Misalloc => "misalloc",
            Preset::ThreadStorm => "threadstorm",
            Preset::Mixed => "mixed",
        }
    }
}

impl std::fmt::Display for Preset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Preset {
    type Err = SimError;

    fn from_str(s: &str) -> Result<Self, SimError> {
        match s {
            "healthy" => Ok(Preset::Healthy),
            "lowgpu" => Ok(Preset::LowGpu),
            "misalloc" => Ok(Preset::Misalloc),
            "threadstorm" => Ok(Preset::ThreadStorm),
            "mixed" => Ok(Preset::Mixed),
            other => Err(SimError::UnknownPreset(other.to_string())),
        }
    }
}

/// GPU memory per device in every generated cluster (64 GB cards).
pub const GPU_MEM_TOTAL_MB: u64 = 65536;

#[derive(Debug, Clone)]
pub struct ScenarioConfig {
    pub preset: Preset,
    pub seed: u64,
    pub nodes: u32,
    pub cores_per_node: u32,
    pub gpus_per_node: u32,
    pub mem_gb_per_node: u32,
    pub users: u32,
    pub duration_hours: f64,
    pub interval_hours: f64,
    pub start: DateTime<Utc>,
    pub cluster_name: String,
}

impl ScenarioConfig {
    /// Baseline config for a preset: a small cluster over two hours,
    /// starting on a Monday so one generated day sits inside one report
    /// week. The misalloc story is five specific nodes and one user.
    pub fn new(preset: Preset, seed: u64) -> Self {
        let (nodes, users) = match preset {
            Preset::Misalloc => (5, 1),
            _ => (8, 4),
        };
        ScenarioConfig {
            preset,
            seed,
            nodes,
            cores_per_node: 48,
            gpus_per_node: 2,
            mem_gb_per_node: 384,
            users,
            duration_hours: 2.0,
            interval_hours: 0.25,
            start: Utc.with_ymd_and_hms(2024, 3, 4, 0, 0, 0).unwrap(),
            cluster_name: format!("sim-{preset}"),
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let counts = [
            ("nodes", self.nodes),
            ("cores_per_node", self.cores_per_node),
            ("gpus_per_node", self.gpus_per_node),
            ("mem_gb_per_node", self.mem_gb_per_node),
            ("users", self.users),
        ];
        for (what, v) in counts {
            if v == 0 {
                return Err(SimError::Config(format!("{what} must be at least 1")));
            }
        }
        if !(self.interval_hours.is_finite() && self.interval_hours > 0.0) {
            return Err(SimError::Config(format!(
                "interval_hours must be positive, got {}",
                self.interval_hours
            )));
        }
        if !(self.duration_hours.is_finite() && self.duration_hours > 0.0) {
            return Err(SimError::Config(format!(
                "duration_hours must be positive, got {}",
                self.duration_hours
            )));
        }
        let k = self.duration_hours / self.interval_hours;
        if (k - k.round()).abs() > 1e-9 || k.round() < 1.0 {
            return Err(SimError::Config(format!(
                "interval {} h must divide duration {} h",
                self.interval_hours, self.duration_hours
            )));
        }
        Ok(())
    }

    pub fn interval_count(&self) -> u32 {
        (self.duration_hours / self.interval_hours).round() as u32
    }

    fn interval_step(&self) -> Duration {
        Duration::seconds((self.interval_hours * 3600.0).round() as i64)
    }

    fn user_name(&self, index: u32) -> String {
        format!("u{:02}", index.min(self.users - 1) + 1)
    }

    fn mem_total_mb(&self) -> u64 {
        self.mem_gb_per_node as u64 * 1024
    }
}

/// Everything one snapshot interval needs, both as parsed records and as
/// the exact file bytes the collectors consume.
#[derive(Debug, Clone, PartialEq)]
pub struct IntervalState {
    pub timestamp: DateTime<Utc>,
    pub cluster_name: String,
    pub nodes: Vec<NodeRecord>,
    pub jobs: Vec<JobRecord>,
    /// node name -> GPU csv text, one entry per node that has GPUs.
    pub gpu_texts: BTreeMap<String, String>,
    pub users_text: String,
    pub privileges_text: String,
}

impl IntervalState {
    /// Relative path -> contents, exactly what [`write_timeline`] puts
    /// on disk for this interval.
    pub fn file_map(&self) -> Vec<(String, String)> {
        let mut files = vec![
            (NODES_FILE.to_string(), emit_node_table(&self.nodes)),
            (JOBS_FILE.to_string(), emit_job_table(&self.jobs)),
            (USERS_FILE.to_string(), self.users_text.clone()),
            (PRIVILEGES_FILE.to_string(), self.privileges_text.clone()),
            (
                CLUSTER_NAME_FILE.to_string(),
                format!("{}\n", self.cluster_name),
            ),
        ];
        for (node, text) in &self.gpu_texts {
            files.push((format!("{GPU_DIR}/{node}.csv"), text.clone()));
        }
        files
    }

    /// Round-trips through the collector grammars; this proves the
    /// generated text parses, not merely that the records are sane.
    pub fn to_view(&self) -> Result<ClusterView, CollectError> {
        let nodes = parse_node_table(&emit_node_table(&self.nodes))?;
        let jobs = parse_job_table(&emit_job_table(&self.jobs))?;
        let (users, _) = load_user_table(&self.users_text);
        assemble_cluster_view(
            nodes,
            jobs,
            &self.gpu_texts,
            users,
            self.timestamp,
            &self.cluster_name,
        )
    }
}

/// Load evolution for one series: a clipped random walk, or independent
/// uniform draws when successive values should not correlate.
#[derive(Debug, Clone, Copy)]
enum Plan {
    Walk { lo: f64, hi: f64, step: f64 },
    Uniform { lo: f64, hi: f64 },
}

#[derive(Debug, Clone, Copy, Default)]
struct WalkState {
    value: Option<f64>,
}

impl WalkState {
    /// One sample consumes exactly one RNG draw regardless of plan, so
    /// the global draw sequence is a pure function of the loop order.
    fn sample(&mut self, rng: &mut SplitMix64, plan: Plan) -> f64 {
        match plan {
            Plan::Uniform { lo, hi } => lo + rng.next_f64() * (hi - lo),
            Plan::Walk { lo, hi, step } => {
                let next = match self.value {
                    None => lo + rng.next_f64() * (hi - lo),
                    // clamp first: an envelope change (phase switch)
                    // pulls the walk into the new range
                    Some(v) => {
                        (v.clamp(lo, hi) + (rng.next_f64() * 2.0 - 1.0) * step).clamp(lo, hi)
                    }
                };
                self.value = Some(next);
                next
            }
        }
    }
}

#[derive(Debug, Clone)]
struct JobSpec {
    id: u64,
    user: u32,
    job_type: JobType,
    cores_req: u32,
    gpus_req: u32,
    name: &'static str,
}

/// How one node behaves during one interval.
#[derive(Debug, Clone)]
struct NodeSpec {
    jobs: Vec<JobSpec>,
    /// Normalized CPU load envelope (load5 / cores_total).
    cpu: Plan,
    /// This many GPUs, lowest indices first, run busy; the rest idle.
    busy_gpus: u32,
    /// Utilization percent envelope for the busy GPUs.
    util: Plan,
    busy_gpu_mem_mb: u64,
    mem_used_mb: u64,
}

fn idle_spec() -> NodeSpec {
    NodeSpec {
        jobs: Vec::new(),
        cpu: Plan::Walk {
            lo: 0.0,
            hi: 0.04,
            step: 0.01,
        },
        busy_gpus: 0,
        util: Plan::Uniform { lo: 0.0, hi: 0.0 },
        busy_gpu_mem_mb: 0,
        mem_used_mb: 4096,
    }
}

/// Owner for healthy filler nodes: round-robin over the users that hold
/// no scripted role (the first `reserved` indices), so a preset's
/// designated users never pick up stray healthy rows.
fn filler_user(config: &ScenarioConfig, reserved: u32, node_idx: u32) -> u32 {
    if config.users > reserved {
        reserved + node_idx % (config.users - reserved)
    } else {
        config.users - 1
    }
}

/// Well-used node: one whole-node batch job, CPU and GPUs busy but not
/// overloaded.
fn healthy_spec(config: &ScenarioConfig, user: u32, id: u64) -> NodeSpec {
    NodeSpec {
        jobs: vec![JobSpec {
            id,
            user,
            job_type: JobType::Batch,
            cores_req: config.cores_per_node,
            gpus_req: config.gpus_per_node,
            name: "train",
        }],
        cpu: Plan::Walk {
            lo: 0.71,
            hi: 0.99,
            step: 0.04,
        },
        busy_gpus: config.gpus_per_node,
        util: Plan::Walk {
            lo: 71.0,
            hi: 99.0,
            step: 7.0,
        },
        busy_gpu_mem_mb: 49152,
        mem_used_mb: config.mem_total_mb() / 2,
    }
}

/// Designated low-GPU workload: small CPU slice, one GPU of two, busy
/// GPU utilization never reaching the default 0.45 threshold and only
/// 2 GB of its memory touched.
fn lowgpu_spec(config: &ScenarioConfig, user: u32, id: u64, util: Plan) -> NodeSpec {
    NodeSpec {
        jobs: vec![JobSpec {
            id,
            user,
            job_type: JobType::Batch,
            cores_req: 8.min(config.cores_per_node),
            gpus_req: 1,
            name: "infer",
        }],
        cpu: Plan::Walk {
            lo: 0.51,
            hi: 0.89,
            step: 0.05,
        },
        busy_gpus: 1,
        util,
        busy_gpu_mem_mb: 2048,
        mem_used_mb: 64512.min(config.mem_total_mb()),
    }
}

/// Whole-node CPU job whose normalized load walks a given envelope,
/// requesting no GPUs.
fn cpu_only_spec(
    config: &ScenarioConfig,
    user: u32,
    id: u64,
    name: &'static str,
    cpu: Plan,
    mem_used_mb: u64,
) -> NodeSpec {
    NodeSpec {
        jobs: vec![JobSpec {
            id,
            user,
            job_type: JobType::Batch,
            cores_req: config.cores_per_node,
            gpus_req: 0,
            name,
        }],
        cpu,
        busy_gpus: 0,
        util: Plan::Uniform { lo: 0.0, hi: 0.0 },
        busy_gpu_mem_mb: 0,
        mem_used_mb: mem_used_mb.min(config.mem_total_mb()),
    }
}

/// Node behaviors for one interval, indexed like the node list.
fn layout(config: &ScenarioConfig, interval: u32) -> Vec<NodeSpec> {
    let n = config.nodes;
    let mut specs = Vec::with_capacity(n as usize);
    match config.preset {
        Preset::Healthy => {
            for i in 0..n {
                specs.push(healthy_spec(
                    config,
                    filler_user(config, 0, i),
                    1000 + i as u64 * 10,
                ));
            }
        }
        Preset::LowGpu => {
            for i in 0..n {
                let id = 1000 + i as u64 * 10;
                let spec = if i < 4 {
                    // the designated user's fleet: always below threshold
                    lowgpu_spec(config, 0, id, Plan::Uniform { lo: 23.0, hi: 44.0 })
                } else if i < 6 {
                    // a second user straddling the threshold, so they
                    // trail the designated user in flagged hours
                    lowgpu_spec(
                        config,
                        1.min(config.users - 1),
                        id,
                        Plan::Uniform { lo: 40.0, hi: 60.0 },
                    )
                } else if i == 6 {
                    cpu_only_spec(
                        config,
                        2.min(config.users - 1),
                        id,
                        "sweep",
                        Plan::Walk {
                            lo: 0.10,
                            hi: 0.40,
                            step: 0.05,
                        },
                        64512,
                    )
                } else {
                    healthy_spec(config, filler_user(config, 3, i), id)
                };
                specs.push(spec);
            }
        }
        Preset::Misalloc => {
            // first half: five whole-node jobs, one GPU each, second GPU
            // stranded; second half: the same five tasks resubmitted as
            // 20-core 1-GPU jobs packed two per node, c-8-6-1 keeping
            // the odd one out, trailing nodes freed entirely
            let phase1 = interval < config.interval_count() / 2;
            for i in 0..n {
                let spec = if phase1 && i < 5 {
                    NodeSpec {
                        jobs: vec![JobSpec {
                            id: 1000 + i as u64 * 10,
                            user: 0,
                            job_type: JobType::Batch,
                            cores_req: config.cores_per_node,
                            gpus_req: 1,
                            name: "train",
                        }],
                        cpu: Plan::Walk {
                            lo: 0.06,
                            hi: 0.19,
                            step: 0.03,
                        },
                        busy_gpus: 1,
                        util: Plan::Walk {
                            lo: 10.0,
                            hi: 20.0,
                            step: 3.0,
                        },
                        busy_gpu_mem_mb: 2048,
                        mem_used_mb: 64512.min(config.mem_total_mb()),
                    }
                } else if !phase1 && i < 3 {
                    let slots = if i == 0 { 1 } else { 2 };
                    NodeSpec {
                        jobs: (0..slots)
                            .map(|s| JobSpec {
                                id: 2000 + i as u64 * 10 + s as u64,
                                user: 0,
                                job_type: JobType::Batch,
                                cores_req: 20.min(config.cores_per_node),
                                gpus_req: 1,
                                name: "train",
                            })
                            .collect(),
                        cpu: Plan::Walk {
                            lo: 0.46,
                            hi: 0.85,
                            step: 0.06,
                        },
                        busy_gpus: slots,
                        util: Plan::Walk {
                            lo: 30.0,
                            hi: 60.0,
                            step: 5.0,
                        },
                        busy_gpu_mem_mb: 2048,
                        mem_used_mb: 64512.min(config.mem_total_mb()),
                    }
                } else {
                    idle_spec()
                };
                specs.push(spec);
            }
        }
        Preset::ThreadStorm => {
            for i in 0..n {
                let id = 1000 + i as u64 * 10;
                let spec = if i < 3 {
                    // load far past the core count: thread-per-core pools
                    // stacked with bursts of concurrent file I/O
                    cpu_only_spec(
                        config,
                        0,
                        id,
                        "storm",
                        Plan::Walk {
                            lo: 1.85,
                            hi: 5.95,
                            step: 0.50,
                        },
                        131072,
                    )
                } else if i == 3 {
                    // busy but under the default 1.65: never flagged
                    cpu_only_spec(
                        config,
                        1.min(config.users - 1),
                        id,
                        "almost",
                        Plan::Walk {
                            lo: 1.30,
                            hi: 1.60,
                            step: 0.05,
                        },
                        131072,
                    )
                } else {
                    healthy_spec(config, filler_user(config, 2, i), id)
                };
                specs.push(spec);
            }
        }
        Preset::Mixed => {
            for i in 0..n {
                let id = 1000 + i as u64 * 10;
                let spec = match i {
                    0 | 1 => lowgpu_spec(config, 0, id, Plan::Uniform { lo: 23.0, hi: 44.0 }),
                    2 | 3 => cpu_only_spec(
                        config,
                        1.min(config.users - 1),
                        id,
                        "storm",
                        Plan::Walk {
                            lo: 1.85,
                            hi: 5.95,
                            step: 0.50,
                        },
                        131072,
                    ),
                    4 => cpu_only_spec(
                        config,
                        2.min(config.users - 1),
                        id,
                        "sweep",
                        Plan::Walk {
                            lo: 0.10,
                            hi: 0.40,
                            step: 0.05,
                        },
                        64512,
                    ),
                    5 => NodeSpec {
                        jobs: vec![JobSpec {
                            id,
                            user: 3.min(config.users - 1),
                            job_type: JobType::Jupyter,
                            cores_req: 4.min(config.cores_per_node),
                            gpus_req: 1,
                            name: "notebook",
                        }],
                        cpu: Plan::Walk {
                            lo: 0.51,
                            hi: 0.89,
                            step: 0.05,
                        },
                        busy_gpus: 1,
                        util: Plan::Walk {
                            lo: 30.0,
                            hi: 70.0,
                            step: 5.0,
                        },
                        busy_gpu_mem_mb: 8192,
                        mem_used_mb: 64512.min(config.mem_total_mb()),
                    },
                    _ => healthy_spec(config, filler_user(config, 4, i), id),
                };
                specs.push(spec);
            }
        }
    }
    specs
}

fn node_names(config: &ScenarioConfig) -> Vec<String> {
    match config.preset {
        // the misalloc story names its nodes
        Preset::Misalloc => (1..=config.nodes).map(|i| format!("c-8-6-{i}")).collect(),
        _ => {
            let width = config.nodes.to_string().len();
            (1..=config.nodes)
                .map(|i| format!("c-1-1-{i:0width$}"))
                .collect()
        }
    }
}

/// Generate the whole timeline in memory, one state per interval.
/// Deterministic: the RNG is seeded once and consumed in a fixed order
/// (per interval, per node: CPU first, then every GPU slot).
pub fn generate_timeline(config: &ScenarioConfig) -> Result<Vec<IntervalState>, SimError> {
    config.validate()?;
    let names = node_names(config);
    let users_text: String = (1..=config.users)
        .map(|u| format!("u{u:02}\tu{u:02}@example.org\n"))
        .collect();
    let privileges_text = "admin\n".to_string();

    let mut rng = SplitMix64::new(config.seed);
    let mut cpu_state = vec![WalkState::default(); config.nodes as usize];
    let mut util_state =
        vec![vec![WalkState::default(); config.gpus_per_node as usize]; config.nodes as usize];

    let mut timeline = Vec::with_capacity(config.interval_count() as usize);
    for k in 0..config.interval_count() {
        let timestamp = config.start + config.interval_step() * k as i32;
        let specs = layout(config, k);
        let mut nodes = Vec::with_capacity(specs.len());
        let mut jobs = Vec::new();
        let mut gpu_texts = BTreeMap::new();

        for (i, spec) in specs.iter().enumerate() {
            let name = &names[i];
            let norm = cpu_state[i].sample(&mut rng, spec.cpu);
            // quantize at generation so the in-memory record equals its
            // own parse
            let load5 = quantize_load(norm * config.cores_per_node as f64);

            let mut gpu_records = Vec::with_capacity(config.gpus_per_node as usize);
            for g in 0..config.gpus_per_node {
                // draw even for idle slots: keeps the RNG sequence
                // independent of how many GPUs a phase keeps busy
                let util = util_state[i][g as usize].sample(&mut rng, spec.util);
                let busy = g < spec.busy_gpus;
                gpu_records.push(GpuRecord {
                    node_name: name.clone(),
                    gpu_index: g,
                    util_percent: if busy { util.round() as u32 } else { 0 },
                    mem_used_mb: if busy { spec.busy_gpu_mem_mb } else { 0 },
                    mem_total_mb: GPU_MEM_TOTAL_MB,
                });
            }
            gpu_texts.insert(name.clone(), emit_gpu_csv(&gpu_records));

            let cores_alloc = spec
                .jobs
                .iter()
                .map(|j| j.cores_req)
                .sum::<u32>()
                .min(config.cores_per_node);
            let gpus_alloc = spec
                .jobs
                .iter()
                .map(|j| j.gpus_req)
                .sum::<u32>()
                .min(config.gpus_per_node);
            nodes.push(NodeRecord {
                node_name: name.clone(),
                cores_total: config.cores_per_node,
                cores_alloc,
                load5,
                mem_total_mb: config.mem_total_mb(),
                mem_used_mb: spec.mem_used_mb.min(config.mem_total_mb()),
                gpus_total: config.gpus_per_node,
                gpus_alloc,
                state: if cores_alloc == config.cores_per_node {
                    NodeState::Alloc
                } else if cores_alloc > 0 {
                    NodeState::Mixed
                } else {
                    NodeState::Idle
                },
            });

            for job in &spec.jobs {
                jobs.push(JobRecord {
                    job_id: job.id.to_string(),
                    user: config.user_name(job.user),
                    node_name: name.clone(),
                    job_type: job.job_type,
                    cores_req: job.cores_req,
                    gpus_req: job.gpus_req,
                    state: JobState::Running,
                    name: job.name.to_string(),
                });
            }
        }

        timeline.push(IntervalState {
            timestamp,
            cluster_name: config.cluster_name.clone(),
            nodes,
            jobs,
            gpu_texts,
            users_text: users_text.clone(),
            privileges_text: privileges_text.clone(),
        });
    }
    Ok(timeline)
}

/// Write each interval as a cluster directory named by its RFC-3339
/// timestamp, ready for the collectors. Returns the directories in
/// timeline order.
pub fn write_timeline(states: &[IntervalState], out_dir: &Path) -> Result<Vec<PathBuf>, SimError> {
    let mut dirs = Vec::with_capacity(states.len());
    for state in states {
        let dir = out_dir.join(
            state
                .timestamp
                .to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
        );
        for (rel, contents) in state.file_map() {
            let path = dir.join(&rel);
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent).map_err(|source| SimError::Io {
                    path: parent.to_path_buf(),
                    source,
                })?;
            }
            fs::write(&path, contents).map_err(|source| SimError::Io {
                path: path.clone(),
                source,
            })?;
        }
        dirs.push(dir);
    }
    Ok(dirs)
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::cli::render_top_view;
    use crate::collect::load_cluster_dir;
    use crate::model::{classify_load, recommend_nppn, Category, Thresholds};

    #[test]
    fn splitmix_is_stable() {
        // First outputs for seed 0, straight from the reference
        // algorithm; pins the implementation across platforms.
        let mut rng = SplitMix64::new(0);
        assert_eq!(rng.next_u64(), 0xe220a8397b1dcdaf);
        assert_eq!(rng.next_u64(), 0x6e789e6aa1b965f4);
        assert_eq!(rng.next_u64(), 0x06c45d188009454f);
    }

    #[test]
    fn splitmix_helpers_stay_in_range() {
        let mut rng = SplitMix64::new(42);
        for _ in 0..1000 {
            let v = rng.range_u64(3, 9);
            assert!((3..=9).contains(&v));
            let f = rng.next_f64();
            assert!((0.0..1.0).contains(&f));
        }
    }

    #[test]
    fn config_validation_rejects_bad_shapes() {
        let good = ScenarioConfig::new(Preset::Healthy, 1);
        assert!(good.validate().is_ok());
        assert_eq!(good.interval_count(), 8);

        let mut c = ScenarioConfig::new(Preset::Healthy, 1);
        c.interval_hours = 0.3;
        assert!(matches!(c.validate(), Err(SimError::Config(_))));
        c.interval_hours = 0.25;
        c.nodes = 0;
        assert!(c.validate().is_err());

        assert!("healthy".parse::<Preset>().is_ok());
        assert!(matches!(
            "weird".parse::<Preset>(),
            Err(SimError::UnknownPreset(_))
        ));
    }

    #[test]
    fn same_seed_reproduces_byte_identical_files() {
        let flatten = |tl: &[IntervalState]| -> String {
            tl.iter()
                .flat_map(|s| s.file_map())
                .map(|(p, c)| format!("== {p}\n{c}"))
                .collect()
        };
        for preset in Preset::ALL {
            let config = ScenarioConfig::new(preset, 7);
            let a = generate_timeline(&config).unwrap();
            let b = generate_timeline(&config).unwrap();
            assert_eq!(flatten(&a), flatten(&b), "{preset}");

            let reseeded = generate_timeline(&ScenarioConfig::new(preset, 8)).unwrap();
            assert_ne!(flatten(&a), flatten(&reseeded), "{preset}");
        }
    }

    #[test]
    fn every_generated_state_parses_with_one_user_per_node() {
        for preset in Preset::ALL {
            for seed in [1u64, 99] {
                let tl = generate_timeline(&ScenarioConfig::new(preset, seed)).unwrap();
                for state in &tl {
                    let view = state.to_view().unwrap();
                    view.usage_rows().unwrap();
                    let mut by_node: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
                    for job in &state.jobs {
                        by_node
                            .entry(job.node_name.as_str())
                            .or_default()
                            .insert(job.user.as_str());
                    }
                    assert!(
                        by_node.values().all(|users| users.len() == 1),
                        "{preset} seed {seed}: {by_node:?}"
                    );
                }
            }
        }
    }

    #[test]
    fn healthy_loads_stay_in_envelope_and_never_flag() {
        let tl = generate_timeline(&ScenarioConfig::new(Preset::Healthy, 3)).unwrap();
        assert_eq!(tl.len(), 8);
        let t = Thresholds::default();
        for state in &tl {
            let (rows, warnings) = state.to_view().unwrap().usage_rows().unwrap();
            assert!(warnings.is_empty(), "{warnings:?}");
            assert_eq!(rows.len(), 8);
            for row in rows {
                assert!(
                    (0.7..=1.0).contains(&row.usage.load_norm),
                    "{}",
                    row.usage.load_norm
                );
                assert_eq!(classify_load(&row.usage, &t).categories().count(), 0);
            }
        }
    }

    #[test]
    fn lowgpu_designated_user_always_flags_and_supports_packing() {
        let tl = generate_timeline(&ScenarioConfig::new(Preset::LowGpu, 11)).unwrap();
        let t = Thresholds::default();
        let mut flagged = Vec::new();
        for state in &tl {
            let (rows, _) = state.to_view().unwrap().usage_rows().unwrap();
            for row in rows.into_iter().filter(|r| r.usage.user == "u01") {
                let flags = classify_load(&row.usage, &t);
                assert!(flags.low_gpu, "{:?}", row.usage);
                assert!(!flags.low_cpu && !flags.high_cpu, "{:?}", row.usage);
                let g = row.usage.gpu_load_norm.unwrap();
                assert!((0.23..0.45).contains(&g), "{g}");
                assert_eq!(row.usage.gpu_mem_used_gb, Some(2));
                flagged.push(row.usage);
            }
        }
        // 4 nodes, 8 intervals
        assert_eq!(flagged.len(), 32);
        flagged.sort_by(|a, b| a.gpu_load_norm.partial_cmp(&b.gpu_load_norm).unwrap());
        let median = &flagged[flagged.len() / 2];
        let rec = recommend_nppn(median, 1).unwrap();
        assert!((4..=8).contains(&rec.nppn), "{rec:?}");
    }

    #[test]
    fn misalloc_phases_follow_the_story() {
        let tl = generate_timeline(&ScenarioConfig::new(Preset::Misalloc, 5)).unwrap();
        let half = tl.len() / 2;

        for state in &tl[..half] {
            assert_eq!(state.jobs.len(), 5);
            assert!(state
                .jobs
                .iter()
                .all(|j| j.cores_req == 48 && j.gpus_req == 1));
            for node in &state.nodes {
                assert_eq!(
                    (node.gpus_alloc, node.gpus_total),
                    (1, 2),
                    "{}",
                    node.node_name
                );
            }
        }
        for state in &tl[half..] {
            assert_eq!(state.jobs.len(), 5);
            assert!(state
                .jobs
                .iter()
                .all(|j| j.cores_req == 20 && j.gpus_req == 1));
            let occupied: Vec<&NodeRecord> =
                state.nodes.iter().filter(|n| n.cores_alloc > 0).collect();
            assert_eq!(occupied.len(), 3);
            // all but one occupied node run both GPUs
            assert_eq!(occupied.iter().filter(|n| n.gpus_alloc == 2).count(), 2);
            let single = occupied.iter().find(|n| n.gpus_alloc == 1).unwrap();
            assert_eq!(single.node_name, "c-8-6-1");
        }

        let mean_gpu_load = |states: &[IntervalState]| -> f64 {
            let mut values = Vec::new();
            for s in states {
                let (rows, _) = s.to_view().unwrap().usage_rows().unwrap();
                values.extend(rows.iter().filter_map(|r| r.usage.gpu_load_norm));
            }
            values.iter().sum::<f64>() / values.len() as f64
        };
        assert!(mean_gpu_load(&tl[half..]) > mean_gpu_load(&tl[..half]));
    }

    #[test]
    fn threadstorm_flags_high_cpu_and_tops_the_view() {
        let tl = generate_timeline(&ScenarioConfig::new(Preset::ThreadStorm, 2)).unwrap();
        let t = Thresholds::default();
        for state in &tl {
            let view = state.to_view().unwrap();
            let (rows, _) = view.usage_rows().unwrap();
            let storm: Vec<_> = rows.iter().filter(|r| r.usage.user == "u01").collect();
            assert_eq!(storm.len(), 3);
            for row in &storm {
                assert!(row.usage.load_norm > 1.8 && row.usage.load_norm < 6.0);
                assert!(classify_load(&row.usage, &t).high_cpu);
            }
            let top = render_top_view(&view, 3).unwrap();
            for row in &storm {
                assert!(top.contains(&row.usage.node_name), "{top}");
            }
        }
    }

    #[test]
    fn mixed_covers_all_roles_including_jupyter() {
        let tl = generate_timeline(&ScenarioConfig::new(Preset::Mixed, 9)).unwrap();
        let t = Thresholds::default();
        let mut flagged: BTreeSet<(String, Category)> = BTreeSet::new();
        for state in &tl {
            assert!(state.jobs.iter().any(|j| j.job_type == JobType::Jupyter));
            let (rows, _) = state.to_view().unwrap().usage_rows().unwrap();
            for row in rows {
                for c in classify_load(&row.usage, &t).categories() {
                    flagged.insert((row.usage.user.clone(), c));
                }
            }
        }
        assert!(flagged.contains(&("u01".to_string(), Category::LowGpu)));
        assert!(flagged.contains(&("u02".to_string(), Category::HighCpu)));
        assert!(flagged.contains(&("u03".to_string(), Category::LowCpu)));
    }

    #[test]
    fn written_timeline_loads_back_through_the_collectors() {
        let tmp = tempfile::tempdir().unwrap();
        let config = ScenarioConfig::new(Preset::LowGpu, 21);
        let tl = generate_timeline(&config).unwrap();
        let dirs = write_timeline(&tl, tmp.path()).unwrap();
        assert_eq!(dirs.len(), tl.len());
        assert_eq!(
            dirs[1].file_name().unwrap().to_str().unwrap(),
            "2024-03-04T00:15:00Z"
        );

        let view = load_cluster_dir(&dirs[1], None, None).unwrap();
        assert!(view.warnings.is_empty(), "{:?}", view.warnings);
        assert_eq!(view.timestamp, tl[1].timestamp);
        assert_eq!(view.cluster_name, "sim-lowgpu");
        let direct = tl[1].to_view().unwrap();
        assert_eq!(view.nodes, direct.nodes);
        assert_eq!(view.jobs, direct.jobs);
        assert_eq!(view.gpu_records, direct.gpu_records);
    }
}
