use serde::{Deserialize, Serialize};

use super::Access;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheLevelConfig {
    pub capacity: u64,
    pub line: u64,
    pub ways: usize,
}

impl CacheLevelConfig {
    /// 128 KiB, 128-byte lines, 16-way.
    pub const L1: CacheLevelConfig = CacheLevelConfig {
        capacity: 128 * 1024,
        line: 128,
        ways: 16,
    };

    pub fn sets(&self) -> u64 {
        self.capacity / (self.line * self.ways as u64)
    }

    fn validate(&self) -> Result<()> {
        let ok = self.line > 0
            && self.ways > 0
            && self.capacity.is_multiple_of(self.ways as u64)
            && (self.capacity / self.ways as u64).is_multiple_of(self.line)
            && self.sets() >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidArgument(format!("inconsistent cache geometry {self:?}")))
        }
    }
}

#[derive(Debug, Clone)]
struct Level {
    config: CacheLevelConfig,
    /// Per set, resident line numbers ordered most recent first.
    sets: Vec<Vec<u64>>,
    hits: u64,
    misses: u64,
}

impl Level {
    fn access(&mut self, line: u64) -> bool {
        let set = &mut self.sets[(line % self.config.sets()) as usize];
        if let Some(pos) = set.iter().position(|&l| l == line) {
            set[..=pos].rotate_right(1);
            self.hits += 1;
            true
        } else {
            if set.len() == self.config.ways {
                set.pop();
            }
            set.insert(0, line);
            self.misses += 1;
            false
        }
    }
}

/// Outcome of one line access: the level that hit, if any.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LineOutcome {
    pub line: u64,
    pub hit_level: Option<usize>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LevelStats {
    pub hits: u64,
    pub misses: u64,
    pub hit_rate: f64,
}

/// Set-associative LRU levels. A miss at level `i` probes level `i + 1`;
/// every level that missed is filled.
#[derive(Debug, Clone)]
pub struct CacheModel {
    levels: Vec<Level>,
}

impl CacheModel {
    pub fn new(levels: &[CacheLevelConfig]) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::InvalidArgument("cache model needs at least one level".into()));
        }
        for l in levels {
            l.validate()?;
        }
        Ok(CacheModel {
            levels: levels
                .iter()
                .map(|&config| Level {
                    config,
                    sets: vec![Vec::with_capacity(config.ways); config.sets() as usize],
                    hits: 0,
                    misses: 0,
                })
                .collect(),
        })
    }

    pub fn l1() -> Self {
        Self::new(&[CacheLevelConfig::L1]).expect("valid geometry")
    }

    /// Touches every line overlapped by `[address, address + size)`.
    pub fn access(&mut self, address: u64, size: u64) -> Vec<LineOutcome> {
        let line_size = self.levels[0].config.line;
        let first = address / line_size;
        let last = (address + size.max(1) - 1) / line_size;
        (first..=last)
            .map(|l| {
                let byte = l * line_size;
                let mut hit_level = None;
                for (i, level) in self.levels.iter_mut().enumerate() {
                    if level.access(byte / level.config.line) {
                        hit_level = Some(i);
                        break;
                    }
                }
                LineOutcome { line: l, hit_level }
            })
            .collect()
    }

    pub fn replay(&mut self, trace: &[Access]) {
        for a in trace {
            self.access(a.address, a.bytes as u64);
        }
    }

    pub fn stats(&self) -> Vec<LevelStats> {
        self.levels
            .iter()
            .map(|l| {
                let n = l.hits + l.misses;
                LevelStats {
                    hits: l.hits,
                    misses: l.misses,
                    hit_rate: if n == 0 { 0.0 } else { l.hits as f64 / n as f64 },
                }
            })
            .collect()
    }
}

pub fn cache_access(cache: &mut CacheModel, address: u64, size: u64) -> Vec<LineOutcome> {
    cache.access(address, size)
}
