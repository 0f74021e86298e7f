//! Shared fixtures for unit tests.

use std::collections::BTreeMap;

use chrono::{DateTime, TimeZone, Utc};

use crate::collect::{
    assemble_cluster_view, load_user_table, parse_job_table, parse_node_table, ClusterView,
    JOB_TABLE_HEADER, NODE_TABLE_HEADER,
};

pub fn ts(h: u32, m: u32) -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2024, 3, 4, h, m, 0).unwrap()
}

/// Two occupied nodes (one with GPUs, one without) and a pending job.
pub fn small_view(at: DateTime<Utc>) -> ClusterView {
    let nodes = parse_node_table(&format!(
        "{NODE_TABLE_HEADER}\n\
         c-8-6-1|40|20|8.00|393216|64512|2|1|mixed\n\
         c-8-6-2|48|48|100.80|196608|131072|0|0|alloc\n"
    ))
    .unwrap();
    let jobs = parse_job_table(&format!(
        "{JOB_TABLE_HEADER}\n\
         1234|alice|c-8-6-1|batch|20|1|running|train\n\
         1235|bob|c-8-6-2|batch|48|0|running|crunch\n\
         1236|carol|-|batch|8|0|pending|queued\n"
    ))
    .unwrap();
    let mut gpu_texts = BTreeMap::new();
    gpu_texts.insert(
        "c-8-6-1".to_string(),
        "0,30,2048,65536\n1,0,0,65536\n".to_string(),
    );
    let (users, _) = load_user_table("alice\talice@example.org\nbob\tbob@example.org\n");
    assemble_cluster_view(nodes, jobs, &gpu_texts, users, at, "devcluster").unwrap()
}
