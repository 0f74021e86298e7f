//! Domain records and the pure per-node math.
//!
//! Loads are normalized so 1.0 means "all cores busy" regardless of node
//! size: the 5-minute load average divided by total cores. Values above
//! 1.0 are meaningful (more runnable threads than cores), so nothing in
//! this module clamps.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid {what}: {value}")]
    InvalidValue { what: &'static str, value: String },
    #[error("node {node}: cores_total must be at least 1")]
    ZeroCores { node: String },
    #[error("no nonzero usage factor to base a recommendation on")]
    NoRecommendation,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum NodeState {
    Idle,
    Mixed,
    Alloc,
    Down,
}

impl NodeState {
    pub fn as_str(self) -> &'static str {
        match self {
            NodeState::Idle => "idle",
            NodeState::Mixed => "mixed",
            NodeState::Alloc => "alloc",
            NodeState::Down => "down",
        }
    }
}

impl fmt::Display for NodeState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NodeState {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "idle" => Ok(NodeState::Idle),
            "mixed" => Ok(NodeState::Mixed),
            "alloc" => Ok(NodeState::Alloc),
            "down" => Ok(NodeState::Down),
            other => Err(ModelError::InvalidValue {
                what: "node state",
                value: other.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum JobType {
    Batch,
    Interactive,
    Jupyter,
}

impl JobType {
    pub fn as_str(self) -> &'static str {
        match self {
            JobType::Batch => "batch",
            JobType::Interactive => "interactive",
            JobType::Jupyter => "jupyter",
        }
    }
}

impl fmt::Display for JobType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for JobType {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "batch" => Ok(JobType::Batch),
            "interactive" => Ok(JobType::Interactive),
            "jupyter" => Ok(JobType::Jupyter),
            other => Err(ModelError::InvalidValue {
                what: "job type",
                value: other.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum JobState {
    Running,
    Pending,
}

impl JobState {
    pub fn as_str(self) -> &'static str {
        match self {
            JobState::Running => "running",
            JobState::Pending => "pending",
        }
    }
}

impl fmt::Display for JobState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for JobState {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "running" => Ok(JobState::Running),
            "pending" => Ok(JobState::Pending),
            other => Err(ModelError::InvalidValue {
                what: "job state",
                value: other.to_string(),
            }),
        }
    }
}

/// One scheduler node as reported by the node table. Free counts are
/// always derived (total - used), never stored.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeRecord {
    pub node_name: String,
    pub cores_total: u32,
    pub cores_alloc: u32,
    /// 5-minute load average, not normalized. May exceed cores_total;
    /// that excess is the overload signal.
    pub load5: f64,
    pub mem_total_mb: u64,
    pub mem_used_mb: u64,
    pub gpus_total: u32,
    pub gpus_alloc: u32,
    pub state: NodeState,
}

/// One GPU on one node, as reported by the per-node GPU query.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GpuRecord {
    pub node_name: String,
    pub gpu_index: u32,
    pub util_percent: u32,
    pub mem_used_mb: u64,
    pub mem_total_mb: u64,
}

impl GpuRecord {
    /// A GPU counts as active when it shows any utilization or resident
    /// memory; used to attribute busy GPUs to the users holding them.
    pub fn is_active(&self) -> bool {
        self.util_percent > 0 || self.mem_used_mb > 0
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JobRecord {
    pub job_id: String,
    pub user: String,
    /// Node the job runs on. Pending jobs may carry "-" here; only
    /// running jobs must reference a real node.
    pub node_name: String,
    pub job_type: JobType,
    pub cores_req: u32,
    pub gpus_req: u32,
    pub state: JobState,
    pub name: String,
}

/// The per-user-per-node metric set everything downstream consumes.
/// For every (total, used, free) triple, used + free = total exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct UserNodeUsage {
    pub user: String,
    pub node_name: String,
    pub cpu_total: u32,
    pub cpu_used: u32,
    pub cpu_free: u32,
    /// load5 / cores_total for the node, unquantized.
    pub load_norm: f64,
    pub mem_total_gb: u64,
    pub mem_used_gb: u64,
    pub mem_free_gb: u64,
    pub gpu_total: u32,
    pub gpu_used: u32,
    pub gpu_free: u32,
    /// Mean utilization of this user's attributed GPUs on a 0-1 scale;
    /// absent when no GPU data could be attributed.
    pub gpu_load_norm: Option<f64>,
    pub gpu_mem_total_gb: Option<u64>,
    pub gpu_mem_used_gb: Option<u64>,
    pub gpu_mem_free_gb: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    /// Loads strictly below this are underutilized (CPU and GPU alike).
    pub low_threshold: f64,
    /// Normalized CPU loads strictly above this are overloaded. The
    /// operational default is 1.65; see [`Thresholds::formula_high`] for
    /// the derived alternative.
    pub high_cpu_threshold: f64,
    pub snapshot_interval_hours: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            low_threshold: 0.45,
            high_cpu_threshold: 1.65,
            snapshot_interval_hours: 0.25,
        }
    }
}

impl Thresholds {
    /// The overutilization formula 1 + (1 - low): one full node plus the
    /// idle headroom implied by the low threshold. At low = 0.45 this
    /// gives 1.55; the default keeps the operational 1.65 instead.
    pub fn formula_high(low_threshold: f64) -> f64 {
        1.0 + (1.0 - low_threshold)
    }

    /// The negated-conjunction form is deliberate: NaN fails every
    /// comparison, so it lands in the error branch of each check.
    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.low_threshold > 0.0 && self.low_threshold < 1.0) {
            return Err(ModelError::InvalidValue {
                what: "low_threshold",
                value: self.low_threshold.to_string(),
            });
        }
        if !(self.high_cpu_threshold > 1.0 && self.high_cpu_threshold.is_finite()) {
            return Err(ModelError::InvalidValue {
                what: "high_cpu_threshold",
                value: self.high_cpu_threshold.to_string(),
            });
        }
        if !(self.snapshot_interval_hours > 0.0 && self.snapshot_interval_hours.is_finite()) {
            return Err(ModelError::InvalidValue {
                what: "snapshot_interval_hours",
                value: self.snapshot_interval_hours.to_string(),
            });
        }
        Ok(())
    }
}

/// load5 / cores_total, unclamped.
pub fn normalize_cpu_load(load5: f64, cores_total: u32) -> Result<f64, ModelError> {
    if cores_total == 0 {
        return Err(ModelError::InvalidValue {
            what: "cores_total",
            value: "0".to_string(),
        });
    }
    if !load5.is_finite() || load5 < 0.0 {
        return Err(ModelError::InvalidValue {
            what: "load5",
            value: load5.to_string(),
        });
    }
    Ok(load5 / cores_total as f64)
}

/// Mean utilization of the given GPUs on a 0-1 scale. Empty input means
/// "unknown", not zero, and yields None.
pub fn normalize_gpu_load(gpus: &[GpuRecord]) -> Option<f64> {
    if gpus.is_empty() {
        return None;
    }
    let sum: f64 = gpus.iter().map(|g| g.util_percent as f64).sum();
    Some(sum / gpus.len() as f64 / 100.0)
}

/// Two-decimal quantization used everywhere loads are rendered. Defined
/// as print-then-parse so a rendered value always re-parses to itself.
pub fn quantize_load(x: f64) -> f64 {
    format!("{x:.2}").parse().expect("formatted float reparses")
}

/// Whole-GB conversion for used figures: floor, never overstate use.
pub fn gb_floor(mb: u64) -> u64 {
    mb / 1024
}

/// Whole-GB conversion for totals: round half up, matching how vendors
/// quote capacities.
pub fn gb_round(mb: u64) -> u64 {
    (mb + 512) / 1024
}

/// Aggregation result for one node: one usage row per user plus any
/// policy warnings noticed on the way.
#[derive(Debug, Clone, Default)]
pub struct NodeAggregate {
    pub usages: Vec<UserNodeUsage>,
    pub warnings: Vec<String>,
}

/// Fold a node's running jobs into per-user usage rows.
///
/// GPU attribution: each user is charged the number of GPUs their jobs
/// requested (capped at the node total). Actual GPU records are handed
/// out active-first in index order, so a lone user's busy GPUs land on
/// their row even if the scheduler data does not say which index belongs
/// to which job. Multiple users on a node without a jupyter job is a
/// whole-node policy violation: warned about, still aggregated.
pub fn aggregate_user_node(
    node: &NodeRecord,
    jobs: &[JobRecord],
    gpus: &[GpuRecord],
) -> Result<NodeAggregate, ModelError> {
    if node.cores_total == 0 {
        return Err(ModelError::ZeroCores {
            node: node.node_name.clone(),
        });
    }

    let running: Vec<&JobRecord> = jobs
        .iter()
        .filter(|j| j.state == JobState::Running && j.node_name == node.node_name)
        .collect();
    let mut agg = NodeAggregate::default();
    if running.is_empty() {
        return Ok(agg);
    }

    let mut by_user: BTreeMap<&str, Vec<&JobRecord>> = BTreeMap::new();
    for job in &running {
        by_user.entry(job.user.as_str()).or_default().push(job);
    }
    let shared = running.iter().any(|j| j.job_type == JobType::Jupyter);
    if by_user.len() > 1 && !shared {
        agg.warnings.push(format!(
            "node {}: jobs from {} users on a whole-node allocation",
            node.node_name,
            by_user.len()
        ));
    }

    // Busy GPUs first, then idle, both in index order. Users draw from
    // this pool in name order.
    let mut pool: Vec<&GpuRecord> = gpus
        .iter()
        .filter(|g| g.node_name == node.node_name)
        .collect();
    pool.sort_by_key(|g| (!g.is_active(), g.gpu_index));
    let mut pool = pool.into_iter();

    let load_norm = normalize_cpu_load(node.load5, node.cores_total)?;
    let mem_total_gb = gb_round(node.mem_total_mb);
    let mem_used_gb = gb_floor(node.mem_used_mb);

    for (user, ujobs) in by_user {
        let cores_req: u64 = ujobs.iter().map(|j| j.cores_req as u64).sum();
        let cpu_used = cores_req.min(node.cores_total as u64) as u32;
        let gpus_req: u64 = ujobs.iter().map(|j| j.gpus_req as u64).sum();
        let gpu_used = gpus_req.min(node.gpus_total as u64) as u32;

        let taken: Vec<GpuRecord> = pool.by_ref().take(gpu_used as usize).cloned().collect();
        let gpu_load_norm = normalize_gpu_load(&taken);
        let (gpu_mem_total_gb, gpu_mem_used_gb, gpu_mem_free_gb) = if taken.is_empty() {
            (None, None, None)
        } else {
            let total = gb_round(taken.iter().map(|g| g.mem_total_mb).sum());
            let used = gb_floor(taken.iter().map(|g| g.mem_used_mb).sum());
            (Some(total), Some(used), Some(total - used))
        };

        agg.usages.push(UserNodeUsage {
            user: user.to_string(),
            node_name: node.node_name.clone(),
            cpu_total: node.cores_total,
            cpu_used,
            cpu_free: node.cores_total - cpu_used,
            load_norm,
            mem_total_gb,
            mem_used_gb,
            mem_free_gb: mem_total_gb - mem_used_gb,
            gpu_total: node.gpus_total,
            gpu_used,
            gpu_free: node.gpus_total - gpu_used,
            gpu_load_norm,
            gpu_mem_total_gb,
            gpu_mem_used_gb,
            gpu_mem_free_gb,
        });
    }
    Ok(agg)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Category {
    LowGpu,
    LowCpu,
    HighCpu,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::LowGpu, Category::LowCpu, Category::HighCpu];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::LowGpu => "low_gpu",
            Category::LowCpu => "low_cpu",
            Category::HighCpu => "high_cpu",
        }
    }

    /// Section heading in the weekly report.
    pub fn title(self) -> &'static str {
        match self {
            Category::LowGpu => "LOW GPU LOAD",
            Category::LowCpu => "LOW CPU LOAD",
            Category::HighCpu => "HIGH CPU LOAD",
        }
    }

    /// Prose form for notification text.
    pub fn display_name(self) -> &'static str {
        match self {
            Category::LowGpu => "low GPU load",
            Category::LowCpu => "low CPU load",
            Category::HighCpu => "high CPU load",
        }
    }
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Category {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "low_gpu" => Ok(Category::LowGpu),
            "low_cpu" => Ok(Category::LowCpu),
            "high_cpu" => Ok(Category::HighCpu),
            other => Err(ModelError::InvalidValue {
                what: "category",
                value: other.to_string(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LoadFlags {
    pub low_gpu: bool,
    pub low_cpu: bool,
    pub high_cpu: bool,
}

impl LoadFlags {
    pub fn is_empty(self) -> bool {
        !(self.low_gpu || self.low_cpu || self.high_cpu)
    }

    pub fn contains(self, c: Category) -> bool {
        match c {
            Category::LowGpu => self.low_gpu,
            Category::LowCpu => self.low_cpu,
            Category::HighCpu => self.high_cpu,
        }
    }

    pub fn categories(self) -> impl Iterator<Item = Category> {
        Category::ALL.into_iter().filter(move |c| self.contains(*c))
    }
}

/// Strict-inequality threshold classification. A row sitting exactly on
/// a threshold is flagged by neither side. GPU classification needs both
/// GPUs present and GPU data attributed; a CPU-only row can never be
/// low_gpu.
pub fn classify_load(usage: &UserNodeUsage, t: &Thresholds) -> LoadFlags {
    LoadFlags {
        low_gpu: usage.gpu_total > 0 && usage.gpu_load_norm.is_some_and(|g| g < t.low_threshold),
        low_cpu: usage.load_norm < t.low_threshold,
        high_cpu: usage.load_norm > t.high_cpu_threshold,
    }
}

/// Resource axes a per-node packing recommendation can be limited by,
/// in tie-break priority order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum LimitingFactor {
    GpuLoad,
    GpuMemory,
    CpuCores,
    CpuMemory,
}

impl LimitingFactor {
    pub fn as_str(self) -> &'static str {
        match self {
            LimitingFactor::GpuLoad => "gpu_load",
            LimitingFactor::GpuMemory => "gpu_memory",
            LimitingFactor::CpuCores => "cpu_cores",
            LimitingFactor::CpuMemory => "cpu_memory",
        }
    }
}

impl fmt::Display for LimitingFactor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NppnRecommendation {
    pub nppn: u32,
    pub limiting_factor: LimitingFactor,
}

/// How many processes per node the observed workload could support.
///
/// The usage is assumed to come from `current_nppn` equal tasks, so the
/// per-task footprint on each axis is used/current_nppn. Each axis is
/// floored separately (you cannot run a fraction of a task against a
/// capacity) and the smallest wins; axes with zero footprint carry no
/// information and are skipped. All axes zero means the workload shows
/// no measurable use and there is nothing to recommend.
pub fn recommend_nppn(
    usage: &UserNodeUsage,
    current_nppn: u32,
) -> Result<NppnRecommendation, ModelError> {
    if current_nppn == 0 {
        return Err(ModelError::InvalidValue {
            what: "current_nppn",
            value: "0".to_string(),
        });
    }
    let n = current_nppn as f64;
    let mut factors: Vec<(LimitingFactor, u32)> = Vec::new();
    let mut push = |factor: LimitingFactor, capacity: f64, used: f64| {
        if capacity > 0.0 && used > 0.0 {
            let fit = (capacity / (used / n)).floor();
            factors.push((factor, fit.min(u32::MAX as f64) as u32));
        }
    };

    if let Some(gl) = usage.gpu_load_norm {
        push(
            LimitingFactor::GpuLoad,
            usage.gpu_total as f64,
            gl * usage.gpu_used as f64,
        );
    }
    if let (Some(total), Some(used)) = (usage.gpu_mem_total_gb, usage.gpu_mem_used_gb) {
        push(LimitingFactor::GpuMemory, total as f64, used as f64);
    }
    push(
        LimitingFactor::CpuCores,
        usage.cpu_total as f64,
        usage.cpu_used as f64,
    );
    push(
        LimitingFactor::CpuMemory,
        usage.mem_total_gb as f64,
        usage.mem_used_gb as f64,
    );

    // min_by_key keeps the first minimum, so ties resolve to the
    // earliest axis in declaration order.
    factors
        .into_iter()
        .min_by_key(|(_, fit)| *fit)
        .map(|(factor, fit)| NppnRecommendation {
            nppn: fit,
            limiting_factor: factor,
        })
        .ok_or(ModelError::NoRecommendation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::SplitMix64;

    fn node(
        name: &str,
        cores: u32,
        load5: f64,
        mem_total: u64,
        mem_used: u64,
        gpus: u32,
    ) -> NodeRecord {
        NodeRecord {
            node_name: name.to_string(),
            cores_total: cores,
            cores_alloc: 0,
            load5,
            mem_total_mb: mem_total,
            mem_used_mb: mem_used,
            gpus_total: gpus,
            gpus_alloc: 0,
            state: NodeState::Mixed,
        }
    }

    fn job(id: &str, user: &str, node: &str, jt: JobType, cores: u32, gpus: u32) -> JobRecord {
        JobRecord {
            job_id: id.to_string(),
            user: user.to_string(),
            node_name: node.to_string(),
            job_type: jt,
            cores_req: cores,
            gpus_req: gpus,
            state: JobState::Running,
            name: format!("job-{id}"),
        }
    }

    fn gpu(node: &str, idx: u32, util: u32, used: u64, total: u64) -> GpuRecord {
        GpuRecord {
            node_name: node.to_string(),
            gpu_index: idx,
            util_percent: util,
            mem_used_mb: used,
            mem_total_mb: total,
        }
    }

    fn usage_for_nppn(
        gpu_total: u32,
        gpu_used: u32,
        gpu_load: Option<f64>,
        gpu_mem: Option<(u64, u64)>,
    ) -> UserNodeUsage {
        let (gmt, gmu) = match gpu_mem {
            Some((t, u)) => (Some(t), Some(u)),
            None => (None, None),
        };
        UserNodeUsage {
            user: "u".to_string(),
            node_name: "n".to_string(),
            cpu_total: 48,
            cpu_used: 0,
            cpu_free: 48,
            load_norm: 0.0,
            mem_total_gb: 384,
            mem_used_gb: 0,
            mem_free_gb: 384,
            gpu_total,
            gpu_used,
            gpu_free: gpu_total - gpu_used,
            gpu_load_norm: gpu_load,
            gpu_mem_total_gb: gmt,
            gpu_mem_used_gb: gmu,
            gpu_mem_free_gb: gmt.zip(gmu).map(|(t, u)| t - u),
        }
    }

    #[test]
    fn normalize_cpu_is_plain_division() {
        assert_eq!(normalize_cpu_load(48.0, 48).unwrap(), 1.0);
        assert_eq!(normalize_cpu_load(0.0, 96).unwrap(), 0.0);
        let x = normalize_cpu_load(158.4, 96).unwrap();
        assert_eq!(x, 158.4 / 96.0);
        assert!((x - 1.65).abs() < 1e-12);
        // fully loaded is exactly 1.0 for any core count
        for cores in [1u32, 7, 40, 48, 96, 128] {
            assert_eq!(normalize_cpu_load(cores as f64, cores).unwrap(), 1.0);
        }
        assert!(normalize_cpu_load(1.0, 0).is_err());
        assert!(normalize_cpu_load(-0.5, 4).is_err());
        assert!(normalize_cpu_load(f64::NAN, 4).is_err());
    }

    #[test]
    fn normalize_cpu_is_homogeneous_in_load() {
        let mut rng = SplitMix64::new(11);
        for _ in 0..200 {
            let cores = 1 + (rng.next_u64() % 128) as u32;
            let load = (rng.next_u64() % 4096) as f64 / 16.0;
            let k = (rng.next_u64() % 8) as f64;
            let lhs = normalize_cpu_load(k * load, cores).unwrap();
            let rhs = k * normalize_cpu_load(load, cores).unwrap();
            assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs().max(1.0));
        }
    }

    #[test]
    fn normalize_gpu_is_mean_over_records() {
        assert_eq!(normalize_gpu_load(&[gpu("n", 0, 45, 0, 0)]), Some(0.45));
        assert_eq!(
            normalize_gpu_load(&[gpu("n", 0, 100, 0, 0), gpu("n", 1, 100, 0, 0)]),
            Some(1.0)
        );
        assert_eq!(
            normalize_gpu_load(&[gpu("n", 0, 23, 0, 0), gpu("n", 1, 46, 0, 0)]),
            Some(0.345)
        );
        assert_eq!(normalize_gpu_load(&[]), None);
    }

    #[test]
    fn quantize_round_trips_through_text() {
        for x in [0.0, 0.345, 0.125, 1.65, 2.999, 158.4 / 96.0] {
            let q = quantize_load(x);
            assert_eq!(format!("{q:.2}").parse::<f64>().unwrap(), q);
        }
    }

    #[test]
    fn gb_conversions_match_reported_granularity() {
        assert_eq!(gb_floor(64512), 63);
        assert_eq!(gb_round(393216), 384);
        assert_eq!(gb_floor(2048), 2);
        assert_eq!(gb_round(65536), 64);
        // round-half-up on totals, floor on used
        assert_eq!(gb_round(1536), 2);
        assert_eq!(gb_floor(1536), 1);
        assert_eq!(gb_round(1535), 1);
    }

    #[test]
    fn aggregate_single_user_node() {
        let n = node("c-8-6-1", 40, 8.0, 393216, 64512, 2);
        let jobs = vec![job("1234", "alice", "c-8-6-1", JobType::Batch, 20, 1)];
        let gpus = vec![gpu("c-8-6-1", 0, 30, 2048, 65536)];
        let agg = aggregate_user_node(&n, &jobs, &gpus).unwrap();
        assert!(agg.warnings.is_empty());
        assert_eq!(agg.usages.len(), 1);
        let u = &agg.usages[0];
        assert_eq!((u.cpu_used, u.cpu_free, u.cpu_total), (20, 20, 40));
        assert_eq!(u.load_norm, 0.2);
        assert_eq!((u.mem_used_gb, u.mem_total_gb), (63, 384));
        assert_eq!(u.mem_free_gb, 321);
        assert_eq!((u.gpu_used, u.gpu_free, u.gpu_total), (1, 1, 2));
        assert_eq!(u.gpu_load_norm, Some(0.30));
        assert_eq!(u.gpu_mem_used_gb, Some(2));
        assert_eq!(u.gpu_mem_total_gb, Some(64));
        assert_eq!(u.gpu_mem_free_gb, Some(62));
    }

    #[test]
    fn aggregate_empty_node_emits_nothing() {
        let n = node("n1", 48, 0.1, 8192, 0, 0);
        let agg = aggregate_user_node(&n, &[], &[]).unwrap();
        assert!(agg.usages.is_empty());
        assert!(agg.warnings.is_empty());
    }

    #[test]
    fn aggregate_skips_pending_and_other_nodes() {
        let n = node("n1", 48, 0.1, 8192, 0, 0);
        let mut pending = job("9", "alice", "n1", JobType::Batch, 4, 0);
        pending.state = JobState::Pending;
        let elsewhere = job("10", "alice", "n2", JobType::Batch, 4, 0);
        let agg = aggregate_user_node(&n, &[pending, elsewhere], &[]).unwrap();
        assert!(agg.usages.is_empty());
    }

    #[test]
    fn aggregate_flags_whole_node_violation() {
        let n = node("n1", 48, 24.0, 8192, 4096, 0);
        let jobs = vec![
            job("1", "alice", "n1", JobType::Batch, 24, 0),
            job("2", "bob", "n1", JobType::Batch, 24, 0),
        ];
        let agg = aggregate_user_node(&n, &jobs, &[]).unwrap();
        assert_eq!(agg.usages.len(), 2);
        assert_eq!(agg.warnings.len(), 1);
        assert!(agg.warnings[0].contains("n1"));
        // rows come out in user name order
        assert_eq!(agg.usages[0].user, "alice");
        assert_eq!(agg.usages[1].user, "bob");
    }

    #[test]
    fn aggregate_jupyter_node_shares_without_warning() {
        let n = node("j1", 48, 12.0, 393216, 131072, 2);
        let jobs = vec![
            job("1", "alice", "j1", JobType::Jupyter, 4, 1),
            job("2", "bob", "j1", JobType::Jupyter, 4, 1),
        ];
        let gpus = vec![gpu("j1", 0, 0, 0, 65536), gpu("j1", 1, 80, 30720, 65536)];
        let agg = aggregate_user_node(&n, &jobs, &gpus).unwrap();
        assert!(agg.warnings.is_empty());
        assert_eq!(agg.usages.len(), 2);
        // the busy GPU (index 1) is attributed before the idle one
        assert_eq!(agg.usages[0].gpu_load_norm, Some(0.80));
        assert_eq!(agg.usages[1].gpu_load_norm, Some(0.0));
        for u in &agg.usages {
            assert_eq!(u.gpu_used, 1);
        }
    }

    #[test]
    fn aggregate_caps_requests_at_node_capacity() {
        let n = node("n1", 16, 4.0, 8192, 1024, 1);
        let jobs = vec![
            job("1", "alice", "n1", JobType::Batch, 12, 1),
            job("2", "alice", "n1", JobType::Batch, 12, 1),
        ];
        let agg = aggregate_user_node(&n, &jobs, &[]).unwrap();
        let u = &agg.usages[0];
        assert_eq!(u.cpu_used, 16);
        assert_eq!(u.cpu_free, 0);
        assert_eq!(u.gpu_used, 1);
        // requested GPUs but no GPU data collected: counts known, detail absent
        assert_eq!(u.gpu_load_norm, None);
        assert_eq!(u.gpu_mem_total_gb, None);
    }

    // Brute force re-computation of what aggregate_user_node promises,
    // written independently: straight per-user sums, no pooling logic.
    fn brute_force_check(
        n: &NodeRecord,
        jobs: &[JobRecord],
        gpus: &[GpuRecord],
        agg: &NodeAggregate,
    ) {
        let mut users: Vec<String> = jobs
            .iter()
            .filter(|j| j.state == JobState::Running && j.node_name == n.node_name)
            .map(|j| j.user.clone())
            .collect();
        users.sort();
        users.dedup();
        assert_eq!(agg.usages.len(), users.len());
        let mut available: Vec<&GpuRecord> = gpus.iter().collect();
        available.sort_by_key(|g| (!g.is_active(), g.gpu_index));
        let mut cursor = 0usize;
        for (i, user) in users.iter().enumerate() {
            let u = &agg.usages[i];
            assert_eq!(&u.user, user);
            let mut cores = 0u64;
            let mut greq = 0u64;
            for j in jobs {
                if j.state == JobState::Running && &j.user == user && j.node_name == n.node_name {
                    cores += j.cores_req as u64;
                    greq += j.gpus_req as u64;
                }
            }
            assert_eq!(u.cpu_used as u64, cores.min(n.cores_total as u64));
            assert_eq!(u.cpu_used + u.cpu_free, u.cpu_total);
            assert_eq!(u.gpu_used as u64, greq.min(n.gpus_total as u64));
            assert_eq!(u.gpu_used + u.gpu_free, u.gpu_total);
            assert_eq!(u.mem_used_gb + u.mem_free_gb, u.mem_total_gb);
            assert_eq!(u.load_norm, n.load5 / n.cores_total as f64);
            let take = (u.gpu_used as usize).min(available.len() - cursor);
            let slice = &available[cursor..cursor + take];
            cursor += take;
            if slice.is_empty() {
                assert_eq!(u.gpu_load_norm, None);
            } else {
                let mean = slice.iter().map(|g| g.util_percent as f64).sum::<f64>()
                    / slice.len() as f64
                    / 100.0;
                assert_eq!(u.gpu_load_norm, Some(mean));
                let used: u64 = slice.iter().map(|g| g.mem_used_mb).sum();
                let total: u64 = slice.iter().map(|g| g.mem_total_mb).sum();
                assert_eq!(u.gpu_mem_used_gb, Some(used / 1024));
                assert_eq!(u.gpu_mem_total_gb, Some((total + 512) / 1024));
            }
        }
    }

    #[test]
    fn aggregate_matches_brute_force_on_random_nodes() {
        let mut rng = SplitMix64::new(0x4e6f6465);
        let users = ["alice", "bob", "carol", "dave"];
        for case in 0..300 {
            let cores = 1 + (rng.next_u64() % 128) as u32;
            let gpus_total = (rng.next_u64() % 5) as u32;
            let mem_total = 1024 * (1 + rng.next_u64() % 512);
            let mem_used = rng.next_u64() % (mem_total + 1);
            let load5 = (rng.next_u64() % 4096) as f64 / 16.0;
            let n = node(
                &format!("n{case}"),
                cores,
                load5,
                mem_total,
                mem_used,
                gpus_total,
            );
            let njobs = (rng.next_u64() % 9) as usize;
            let jupyter = rng.next_u64().is_multiple_of(4);
            let mut jobs = Vec::new();
            for i in 0..njobs {
                let user = users[(rng.next_u64() % users.len() as u64) as usize];
                let jt = if jupyter {
                    JobType::Jupyter
                } else {
                    JobType::Batch
                };
                let mut j = job(
                    &format!("{case}-{i}"),
                    user,
                    &n.node_name,
                    jt,
                    1 + (rng.next_u64() % 64) as u32,
                    (rng.next_u64() % 3) as u32,
                );
                if rng.next_u64().is_multiple_of(5) {
                    j.state = JobState::Pending;
                }
                jobs.push(j);
            }
            let mut gpu_recs = Vec::new();
            for idx in 0..gpus_total {
                let total = 65536;
                let used = rng.next_u64() % (total + 1);
                gpu_recs.push(gpu(
                    &n.node_name,
                    idx,
                    (rng.next_u64() % 101) as u32,
                    used,
                    total,
                ));
            }
            let agg = aggregate_user_node(&n, &jobs, &gpu_recs).unwrap();
            brute_force_check(&n, &jobs, &gpu_recs, &agg);
        }
    }

    #[test]
    fn classify_boundaries_are_strict() {
        let t = Thresholds::default();
        let mut u = usage_for_nppn(0, 0, None, None);

        u.load_norm = 0.4499;
        assert_eq!(
            classify_load(&u, &t),
            LoadFlags {
                low_cpu: true,
                ..Default::default()
            }
        );
        u.load_norm = 0.45;
        assert!(classify_load(&u, &t).is_empty());
        u.load_norm = 1.65;
        assert!(classify_load(&u, &t).is_empty());
        u.load_norm = 1.6501;
        assert_eq!(
            classify_load(&u, &t),
            LoadFlags {
                high_cpu: true,
                ..Default::default()
            }
        );
        u.load_norm = 0.44;
        assert!(classify_load(&u, &t).low_cpu);
        u.load_norm = 1.70;
        assert!(classify_load(&u, &t).high_cpu);
    }

    #[test]
    fn classify_gpu_needs_present_data() {
        let t = Thresholds::default();
        let mut u = usage_for_nppn(2, 1, Some(0.30), Some((64, 2)));
        u.load_norm = 0.5;
        let flags = classify_load(&u, &t);
        assert!(flags.low_gpu && !flags.low_cpu && !flags.high_cpu);

        // exactly at threshold: not low
        u.gpu_load_norm = Some(0.45);
        assert!(!classify_load(&u, &t).low_gpu);
        // CPU-only row can never be low_gpu
        let mut cpu_only = usage_for_nppn(0, 0, None, None);
        cpu_only.load_norm = 0.5;
        assert!(!classify_load(&cpu_only, &t).low_gpu);
        // GPU node without attributed data: unknown, not low
        let mut unknown = usage_for_nppn(2, 1, None, None);
        unknown.load_norm = 0.5;
        assert!(!classify_load(&unknown, &t).low_gpu);
    }

    #[test]
    fn classify_is_monotone_in_thresholds() {
        let mut rng = SplitMix64::new(99);
        for _ in 0..500 {
            let mut u = usage_for_nppn(2, 1, Some((rng.next_u64() % 101) as f64 / 100.0), None);
            u.load_norm = (rng.next_u64() % 300) as f64 / 100.0;
            let loose = Thresholds::default();
            let tight = Thresholds {
                low_threshold: 0.30,
                high_cpu_threshold: 2.0,
                ..loose
            };
            let f_loose = classify_load(&u, &loose);
            let f_tight = classify_load(&u, &tight);
            // lowering low and raising high can only clear flags
            assert!(!f_tight.low_cpu || f_loose.low_cpu);
            assert!(!f_tight.low_gpu || f_loose.low_gpu);
            assert!(!f_tight.high_cpu || f_loose.high_cpu);
            // low_cpu and high_cpu never co-occur
            assert!(!(f_loose.low_cpu && f_loose.high_cpu));
        }
    }

    #[test]
    fn nppn_reproduces_gpu_packing_targets() {
        // 2-GPU node, one task using gpu_load 0.45 and 2 of 64 GB: load
        // headroom allows 4 tasks, memory would allow 32, load wins.
        let u = usage_for_nppn(2, 1, Some(0.45), Some((64, 2)));
        let r = recommend_nppn(&u, 1).unwrap();
        assert_eq!(r.nppn, 4);
        assert_eq!(r.limiting_factor, LimitingFactor::GpuLoad);

        let u = usage_for_nppn(2, 1, Some(0.23), Some((64, 2)));
        let r = recommend_nppn(&u, 1).unwrap();
        assert_eq!(r.nppn, 8);
        assert_eq!(r.limiting_factor, LimitingFactor::GpuLoad);
    }

    #[test]
    fn nppn_saturated_gpu_has_no_headroom() {
        let u = usage_for_nppn(1, 1, Some(1.0), None);
        let r = recommend_nppn(&u, 1).unwrap();
        assert_eq!(r.nppn, 1);
        assert_eq!(r.limiting_factor, LimitingFactor::GpuLoad);
    }

    #[test]
    fn nppn_uses_cpu_axes_when_gpu_absent() {
        let mut u = usage_for_nppn(0, 0, None, None);
        u.cpu_used = 12;
        u.cpu_free = 36;
        u.mem_used_gb = 100;
        u.mem_free_gb = 284;
        let r = recommend_nppn(&u, 1).unwrap();
        // cores fit 4, memory fits 3
        assert_eq!(r.nppn, 3);
        assert_eq!(r.limiting_factor, LimitingFactor::CpuMemory);
    }

    #[test]
    fn nppn_tie_prefers_first_axis() {
        let mut u = usage_for_nppn(2, 1, Some(0.5), None);
        u.cpu_used = 12; // cores fit 4, gpu load fits 4
        u.cpu_free = 36;
        let r = recommend_nppn(&u, 1).unwrap();
        assert_eq!(r.nppn, 4);
        assert_eq!(r.limiting_factor, LimitingFactor::GpuLoad);
    }

    #[test]
    fn nppn_errors_without_usable_footprint() {
        let u = usage_for_nppn(2, 0, None, None);
        assert!(matches!(
            recommend_nppn(&u, 1),
            Err(ModelError::NoRecommendation)
        ));
        assert!(recommend_nppn(&u, 0).is_err());
    }

    #[test]
    fn nppn_footprint_normalization_is_consistent() {
        // A workload observed as k tasks must yield the same packing as
        // one of its tasks observed alone. GPU loads are multiples of
        // 1/64 so the scaled arithmetic stays exact.
        let mut rng = SplitMix64::new(7);
        for _ in 0..400 {
            let k = 1 + (rng.next_u64() % 6) as u32;
            let gl_units = 1 + rng.next_u64() % 64;
            let base_gl = gl_units as f64 / 64.0;
            let base = usage_for_nppn(16, 1, Some(base_gl), Some((512, 1 + rng.next_u64() % 8)));
            let mut scaled = base.clone();
            scaled.gpu_used = k; // same per-GPU load on k GPUs
            scaled.gpu_free = 16 - k;
            scaled.gpu_mem_used_gb = base.gpu_mem_used_gb.map(|m| m * k as u64);
            scaled.gpu_mem_free_gb = Some(512 - scaled.gpu_mem_used_gb.unwrap());
            let lone = recommend_nppn(&base, 1).unwrap();
            let packed = recommend_nppn(&scaled, k).unwrap();
            assert_eq!(lone.nppn, packed.nppn);
            assert_eq!(lone.limiting_factor, packed.limiting_factor);
        }
    }

    #[test]
    fn threshold_defaults_and_formula() {
        let t = Thresholds::default();
        assert_eq!(t.low_threshold, 0.45);
        assert_eq!(t.high_cpu_threshold, 1.65);
        assert_eq!(t.snapshot_interval_hours, 0.25);
        t.validate().unwrap();
        assert_eq!(Thresholds::formula_high(0.45), 1.55);
        assert!(Thresholds {
            low_threshold: 1.2,
            ..t
        }
        .validate()
        .is_err());
        assert!(Thresholds {
            high_cpu_threshold: 0.9,
            ..t
        }
        .validate()
        .is_err());
    }

    #[test]
    fn enum_tokens_round_trip() {
        for s in ["idle", "mixed", "alloc", "down"] {
            assert_eq!(s.parse::<NodeState>().unwrap().as_str(), s);
        }
        for s in ["batch", "interactive", "jupyter"] {
            assert_eq!(s.parse::<JobType>().unwrap().as_str(), s);
        }
        for s in ["running", "pending"] {
            assert_eq!(s.parse::<JobState>().unwrap().as_str(), s);
        }
        for s in ["low_gpu", "low_cpu", "high_cpu"] {
            assert_eq!(s.parse::<Category>().unwrap().as_str(), s);
        }
        assert!("busy".parse::<NodeState>().is_err());
        assert!("mpi".parse::<JobType>().is_err());
    }
}
