use super::BkrError;
use crate::jsonl::{self, JsonlWriter};
use crate::stream::StateVector;
use crate::types::Tick;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::fs;
use std::path::PathBuf;

/// Ticks per on-disk segment file.
const SEGMENT_TICKS: u64 = 60;

/// Which part of a requested tick range could be served.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Coverage {
    pub requested: (Tick, Tick),
    /// Half-open covered span, `None` when nothing overlapped.
    pub covered: Option<(Tick, Tick)>,
    pub complete: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RtRead {
    pub vectors: Vec<StateVector>,
    pub coverage: Coverage,
}

/// Recent operating data: one vector per tick over the trailing retention
/// window. Entries leave only once the batch export has passed them.
#[derive(Debug)]
pub struct RtZone {
    ring: VecDeque<StateVector>,
    retention: usize,
    dir: Option<PathBuf>,
    sync: bool,
    writer: Option<(u64, JsonlWriter)>,
    /// Test hook: the next `n` writes fail as if storage were down.
    unavailable_for: u32,
}

impl RtZone {
    pub fn new(retention: usize) -> Self {
        Self {
            ring: VecDeque::new(),
            retention,
            dir: None,
            sync: false,
            writer: None,
            unavailable_for: 0,
        }
    }

    /// Opens the on-disk zone and reloads every retained segment.
    pub fn open(dir: PathBuf, retention: usize, sync: bool) -> Result<Self, BkrError> {
        fs::create_dir_all(&dir)?;
        let mut segs: Vec<_> = fs::read_dir(&dir)?
            .filter_map(|e| e.ok())
            .map(|e| e.path())
            .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
            .collect();
        segs.sort();
        let mut ring = VecDeque::new();
        for s in segs {
            for sv in jsonl::read_all::<StateVector>(&s)? {
                if ring.back().is_none_or(|b: &StateVector| sv.tick > b.tick) {
                    ring.push_back(sv);
                }
            }
        }
        Ok(Self {
            ring,
            retention,
            dir: Some(dir),
            sync,
            writer: None,
            unavailable_for: 0,
        })
    }

    pub fn retention(&self) -> usize {
        self.retention
    }

    pub fn simulate_outage(&mut self, failed_writes: u32) {
        self.unavailable_for = failed_writes;
    }

    pub fn len(&self) -> usize {
        self.ring.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ring.is_empty()
    }

    pub fn first_tick(&self) -> Option<Tick> {
        self.ring.front().map(|s| s.tick)
    }

    pub fn latest(&self) -> Option<&StateVector> {
        self.ring.back()
    }

    /// Span in ticks from oldest to newest retained vector, inclusive.
    pub fn span(&self) -> u64 {
        match (self.ring.front(), self.ring.back()) {
            (Some(a), Some(b)) => b.tick - a.tick + 1,
            _ => 0,
        }
    }

    pub fn write(&mut self, sv: &StateVector) -> Result<(), BkrError> {
        if self.unavailable_for > 0 {
            self.unavailable_for -= 1;
            return Err(BkrError::Unavailable("real-time zone".into()));
        }
        if let Some(last) = self.ring.back() {
            if sv.tick <= last.tick {
                return Err(BkrError::OutOfOrder {
                    tick: sv.tick,
                    latest: last.tick,
                });
            }
        }
        if let Some(dir) = &self.dir {
            let seg = sv.tick / SEGMENT_TICKS;
            if self.writer.as_ref().is_none_or(|(s, _)| *s != seg) {
                let path = dir.join(format!("seg-{seg:08}.jsonl"));
                self.writer = Some((seg, JsonlWriter::open(path, self.sync)?));
            }
            let (_, w) = self.writer.as_mut().expect("opened above");
            w.append(sv)?;
        }
        self.ring.push_back(sv.clone());
        Ok(())
    }

    /// Vectors with `from <= tick < to`, with explicit coverage.
    pub fn read(&self, from: Tick, to: Tick) -> RtRead {
        let vectors: Vec<_> = self
            .ring
            .iter()
            .filter(|s| s.tick >= from && s.tick < to)
            .cloned()
            .collect();
        let covered = match (vectors.first(), vectors.last()) {
            (Some(a), Some(b)) => Some((a.tick, b.tick + 1)),
            _ => None,
        };
        let complete = to <= from || (covered == Some((from, to)) && vectors.len() as u64 == to - from);
        RtRead {
            vectors,
            coverage: Coverage {
                requested: (from, to),
                covered,
                complete,
            },
        }
    }

    /// The trailing `n` vectors.
    pub fn last_n(&self, n: usize) -> Vec<StateVector> {
        let skip = self.ring.len().saturating_sub(n);
        self.ring.iter().skip(skip).cloned().collect()
    }

    pub fn iter(&self) -> impl Iterator<Item = &StateVector> {
        self.ring.iter()
    }

    /// Drops vectors beyond the retention window that the export watermark
    /// has already passed. Returns how many were evicted.
    pub fn evict(&mut self, export_watermark: Tick) -> Result<usize, BkrError> {
        let mut n = 0;
        while self.ring.len() > self.retention {
            match self.ring.front() {
                Some(f) if f.tick < export_watermark => {
                    self.ring.pop_front();
                    n += 1;
                }
                _ => break,
            }
        }
        if n > 0 {
            self.remove_dead_segments()?;
        }
        Ok(n)
    }

    fn remove_dead_segments(&mut self) -> Result<(), BkrError> {
        let (Some(dir), Some(first)) = (&self.dir, self.ring.front()) else {
            return Ok(());
        };
        let keep_from = first.tick / SEGMENT_TICKS;
        for e in fs::read_dir(dir)?.filter_map(|e| e.ok()) {
            let name = e.file_name().to_string_lossy().to_string();
            let seg = name
                .strip_prefix("seg-")
                .and_then(|s| s.strip_suffix(".jsonl"))
                .and_then(|s| s.parse::<u64>().ok());
            if seg.is_some_and(|s| s < keep_from) {
                fs::remove_file(e.path())?;
            }
        }
        Ok(())
    }
}
