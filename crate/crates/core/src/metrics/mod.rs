mod cache;
mod counters;
mod report;

pub use cache::{cache_access, CacheLevelConfig, CacheModel, LevelStats, LineOutcome};
pub use counters::{Access, CounterSummary, FetchKey, TraversalCounters};
pub use report::{
    buffer_memory_report, emit_report, parse_report, BufferMemory, PairDiff, RegimeRow, ReportFormat, StatsReport, CSV_HEADER,
    SCHEMA,
};
