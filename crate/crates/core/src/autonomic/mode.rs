use crate::types::Tick;
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use std::fmt;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Mode {
    Initializing,
    Optimizing,
    DetectingChange,
    Interfacing,
}

impl Mode {
    pub const ALL: [Mode; 4] = [
        Mode::Initializing,
        Mode::Optimizing,
        Mode::DetectingChange,
        Mode::Interfacing,
    ];
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Stimulus {
    CommissioningComplete,
    OptimumFound,
    DriftDetected,
    FaultDetected,
    FaultResolvedNoEquipChange,
    EquipmentChanged,
    /// The repository has been repopulated after an equipment change.
    UpgradeComplete,
}

impl Stimulus {
    pub const ALL: [Stimulus; 7] = [
        Stimulus::CommissioningComplete,
        Stimulus::OptimumFound,
        Stimulus::DriftDetected,
        Stimulus::FaultDetected,
        Stimulus::FaultResolvedNoEquipChange,
        Stimulus::EquipmentChanged,
        Stimulus::UpgradeComplete,
    ];
}

/// The building's state-transition relation. `None` means the pair is not
/// an edge.
pub fn transition(mode: Mode, stimulus: Stimulus) -> Option<Mode> {
    use Mode::*;
    use Stimulus::*;
    match (mode, stimulus) {
        (Initializing, CommissioningComplete) => Some(Optimizing),
        (Initializing, UpgradeComplete) => Some(Optimizing),
        (Optimizing, OptimumFound) => Some(DetectingChange),
        (DetectingChange, DriftDetected) => Some(Optimizing),
        (DetectingChange, FaultDetected) => Some(Interfacing),
        (Interfacing, FaultResolvedNoEquipChange) => Some(DetectingChange),
        (Interfacing, EquipmentChanged) => Some(Initializing),
        _ => None,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BuildingMode {
    pub mode: Mode,
    pub since: Tick,
    pub cause: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Origin {
    /// Submitted by a producer.
    Posted,
    /// Re-applied by the owner after being held back.
    Deferred,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Outcome {
    /// Followed an edge of the relation.
    Applied,
    /// Folded into a concern that already holds the mode.
    Absorbed,
    /// Held until the current optimization finishes.
    Deferred,
    /// Not an edge; journaled as an anomaly.
    Rejected,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct JournalEntry {
    pub seq: u64,
    pub tick: Tick,
    pub stimulus: Stimulus,
    pub cause: String,
    pub origin: Origin,
    pub outcome: Outcome,
    pub from: Mode,
    pub to: Mode,
}

/// Single owner of the global mode. Producers post stimuli; `process`
/// applies them in order and journals every decision.
///
/// The global mode shows the most severe active concern. A fault arriving
/// mid-optimization is held until the optimum is found, further faults and
/// drifts during Interfacing join the open concern, and Interfacing is left
/// only once the last open fault is resolved.
#[derive(Debug, Clone)]
pub struct ModeOwner {
    state: BuildingMode,
    queue: VecDeque<(Stimulus, String)>,
    deferred: Vec<(Stimulus, String)>,
    open_faults: usize,
    journal: Vec<JournalEntry>,
}

impl Default for ModeOwner {
    fn default() -> Self {
        Self::new()
    }
}

impl ModeOwner {
    pub fn new() -> Self {
        Self {
            state: BuildingMode {
                mode: Mode::Initializing,
                since: 0,
                cause: "boot".into(),
            },
            queue: VecDeque::new(),
            deferred: Vec::new(),
            open_faults: 0,
            journal: Vec::new(),
        }
    }

    /// Rebuilds an owner by resubmitting every posted stimulus of `journal`
    /// at its original tick.
    pub fn replay(journal: &[JournalEntry]) -> Self {
        let mut o = Self::new();
        for e in journal.iter().filter(|e| e.origin == Origin::Posted) {
            o.post(e.stimulus, e.cause.clone());
            o.process(e.tick);
        }
        o
    }

    pub fn mode(&self) -> Mode {
        self.state.mode
    }

    pub fn state(&self) -> &BuildingMode {
        &self.state
    }

    pub fn open_faults(&self) -> usize {
        self.open_faults
    }

    pub fn journal(&self) -> &[JournalEntry] {
        &self.journal
    }

    pub fn pending(&self) -> usize {
        self.queue.len()
    }

    pub fn post(&mut self, stimulus: Stimulus, cause: impl Into<String>) {
        self.queue.push_back((stimulus, cause.into()));
    }

    /// Applies all queued stimuli; returns the journal entries written.
    pub fn process(&mut self, tick: Tick) -> Vec<JournalEntry> {
        let start = self.journal.len();
        while let Some((s, cause)) = self.queue.pop_front() {
            self.apply(tick, s, cause, Origin::Posted);
        }
        self.journal[start..].to_vec()
    }

    fn apply(&mut self, tick: Tick, s: Stimulus, cause: String, origin: Origin) {
        use Mode::*;
        use Stimulus::*;
        let from = self.state.mode;
        let outcome = match (from, s) {
            (Optimizing, FaultDetected) => {
                self.deferred.push((s, cause.clone()));
                Outcome::Deferred
            }
            (Interfacing, FaultDetected) => {
                self.open_faults += 1;
                Outcome::Absorbed
            }
            (Interfacing, DriftDetected) | (Optimizing, DriftDetected) => Outcome::Absorbed,
            (Interfacing, FaultResolvedNoEquipChange) if self.open_faults > 1 => {
                self.open_faults -= 1;
                Outcome::Absorbed
            }
            _ => match transition(from, s) {
                Some(to) => {
                    match s {
                        FaultDetected => self.open_faults += 1,
                        FaultResolvedNoEquipChange | EquipmentChanged => {
                            self.open_faults = self.open_faults.saturating_sub(1)
                        }
                        _ => {}
                    }
                    self.state = BuildingMode {
                        mode: to,
                        since: tick,
                        cause: cause.clone(),
                    };
                    Outcome::Applied
                }
                None => {
                    tracing::warn!(?from, stimulus = ?s, %cause, "illegal transition rejected");
                    Outcome::Rejected
                }
            },
        };
        self.journal.push(JournalEntry {
            seq: self.journal.len() as u64,
            tick,
            stimulus: s,
            cause,
            origin,
            outcome,
            from,
            to: self.state.mode,
        });
        if outcome == Outcome::Applied && s == OptimumFound {
            for (d, c) in std::mem::take(&mut self.deferred) {
                self.apply(tick, d, c, Origin::Deferred);
            }
        }
    }

    /// Mode in force at the end of `tick`, read from the journal.
    pub fn mode_at(journal: &[JournalEntry], tick: Tick) -> Mode {
        journal
            .iter()
            .take_while(|e| e.tick <= tick)
            .last()
            .map_or(Mode::Initializing, |e| e.to)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relation_has_exactly_the_seven_edges() {
        assert_eq!(
            transition(Mode::DetectingChange, Stimulus::FaultDetected),
            Some(Mode::Interfacing)
        );
        assert_eq!(
            transition(Mode::DetectingChange, Stimulus::DriftDetected),
            Some(Mode::Optimizing)
        );
        assert_eq!(transition(Mode::Optimizing, Stimulus::FaultDetected), None);
    }

    #[test]
    fn illegal_stimulus_is_journaled_and_mode_kept() {
        let mut o = ModeOwner::new();
        o.post(Stimulus::OptimumFound, "x");
        let j = o.process(3);
        assert_eq!(o.mode(), Mode::Initializing);
        assert_eq!(j[0].outcome, Outcome::Rejected);
    }

    #[test]
    fn fault_during_optimization_waits_for_the_optimum() {
        let mut o = ModeOwner::new();
        o.post(Stimulus::CommissioningComplete, "cx");
        o.post(Stimulus::FaultDetected, "ev-1");
        o.process(1);
        assert_eq!(o.mode(), Mode::Optimizing);
        o.post(Stimulus::OptimumFound, "opt");
        let j = o.process(2);
        assert_eq!(o.mode(), Mode::Interfacing);
        assert_eq!(j.len(), 2);
        assert_eq!(j[1].origin, Origin::Deferred);
    }

    #[test]
    fn interfacing_held_until_last_fault_resolves() {
        let mut o = ModeOwner::new();
        for s in [Stimulus::CommissioningComplete, Stimulus::OptimumFound, Stimulus::FaultDetected, Stimulus::FaultDetected] {
            o.post(s, "c");
        }
        o.process(1);
        assert_eq!(o.open_faults(), 2);
        o.post(Stimulus::FaultResolvedNoEquipChange, "t1");
        o.process(2);
        assert_eq!(o.mode(), Mode::Interfacing);
        o.post(Stimulus::FaultResolvedNoEquipChange, "t2");
        o.process(3);
        assert_eq!(o.mode(), Mode::DetectingChange);
    }

    #[test]
    fn replay_reproduces_journal() {
        let mut o = ModeOwner::new();
        let script = [
            (1, Stimulus::CommissioningComplete),
            (1, Stimulus::FaultDetected),
            (2, Stimulus::OptimumFound),
            (5, Stimulus::DriftDetected),
            (7, Stimulus::FaultResolvedNoEquipChange),
            (8, Stimulus::DriftDetected),
            (9, Stimulus::OptimumFound),
            (9, Stimulus::UpgradeComplete),
        ];
        for (t, s) in script {
            o.post(s, format!("c{t}"));
            if t % 2 == 0 {
                continue;
            }
            o.process(t);
        }
        o.process(10);
        let r = ModeOwner::replay(o.journal());
        assert_eq!(r.journal(), o.journal());
        assert_eq!(r.mode(), o.mode());
    }
}
