use serde::{Deserialize, Serialize};

use super::CounterSummary;
use crate::checkpoint::{CHECKPOINT_ENTRY_BYTES, EVICTION_ENTRY_BYTES};
use crate::error::Result;

pub const SCHEMA: &str = "grtx-stats/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BufferMemory {
    pub checkpoint_bytes: u64,
    pub eviction_bytes: u64,
    pub total_bytes: u64,
}

pub fn buffer_memory_report(checkpoint_capacity: usize, eviction_capacity: usize, rays: u64) -> BufferMemory {
    let checkpoint_bytes = rays * (checkpoint_capacity * CHECKPOINT_ENTRY_BYTES) as u64;
    let eviction_bytes = rays * (eviction_capacity * EVICTION_ENTRY_BYTES) as u64;
    BufferMemory {
        checkpoint_bytes,
        eviction_bytes,
        total_bytes: checkpoint_bytes + eviction_bytes,
    }
}

/// One regime's totals. Field order is the CSV column order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RegimeRow {
    pub regime: String,
    pub k: u64,
    #[serde(flatten)]
    pub counters: CounterSummary,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub cache_hit_rate: f64,
    pub structure_bytes: u64,
    pub buffer_bytes: u64,
    /// Max per-channel difference against the first row's image.
    pub max_abs_diff: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub schema: String,
    pub width: u32,
    pub height: u32,
    pub rows: Vec<RegimeRow>,
    #[serde(default)]
    pub pairs: Vec<PairDiff>,
}

/// Image difference and fetch ratio between two rows.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PairDiff {
    pub a: String,
    pub b: String,
    pub max_abs_diff: f64,
    /// `node_fetches(a) / node_fetches(b)`.
    pub fetch_ratio: f64,
}

impl Default for StatsReport {
    fn default() -> Self {
        StatsReport {
            schema: SCHEMA.to_string(),
            width: 0,
            height: 0,
            rows: Vec::new(),
            pairs: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

pub const CSV_HEADER: &str = "regime,k,rays,rounds,node_fetches,unique_nodes,frame_unique_nodes,box_tests,tri_tests,\
sphere_tests,proxy_false_positives,blends,checkpoint_seeds,checkpoints,evictions,overflow_fallbacks,\
cache_hits,cache_misses,cache_hit_rate,structure_bytes,buffer_bytes,max_abs_diff";

fn csv_row(r: &RegimeRow) -> String {
    let c = &r.counters;
    let ints = [
        r.k,
        c.rays,
        c.rounds,
        c.node_fetches,
        c.unique_nodes,
        c.frame_unique_nodes,
        c.box_tests,
        c.tri_tests,
        c.sphere_tests,
        c.proxy_false_positives,
        c.blends,
        c.checkpoint_seeds,
        c.checkpoints,
        c.evictions,
        c.overflow_fallbacks,
        r.cache_hits,
        r.cache_misses,
    ];
    let mut cells = vec![r.regime.clone()];
    cells.extend(ints.iter().map(u64::to_string));
    cells.push(r.cache_hit_rate.to_string());
    cells.push(r.structure_bytes.to_string());
    cells.push(r.buffer_bytes.to_string());
    cells.push(r.max_abs_diff.to_string());
    cells.join(",")
}

pub fn emit_report(report: &StatsReport, format: ReportFormat) -> Result<String> {
    Ok(match format {
        ReportFormat::Json => serde_json::to_string_pretty(report)?,
        ReportFormat::Csv => {
            let mut out = String::from(CSV_HEADER);
            out.push('\n');
            for r in &report.rows {
                out.push_str(&csv_row(r));
                out.push('\n');
            }
            out
        }
    })
}

pub fn parse_report(json: &str) -> Result<StatsReport> {
    Ok(serde_json::from_str(json)?)
}
