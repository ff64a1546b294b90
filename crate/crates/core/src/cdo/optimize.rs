use crate::simulator::{SimError, SimWorld};
use crate::types::{ActuatorCommand, OperatingRange, Tick};
use serde::{Deserialize, Serialize};
use std::cmp::Ordering;
use thiserror::Error;

/// Time-of-day window, hours in `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HourWindow {
    pub start_hour: f64,
    pub end_hour: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchSpace {
    pub system: String,
    pub actuator: String,
    pub unit: String,
    pub windows: Vec<HourWindow>,
    /// Candidate setpoints, shared by every window.
    pub grid: Vec<f64>,
    /// Commanding this actuator needs human approval first.
    #[serde(default)]
    pub safety: bool,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OptError {
    #[error("search space for {0}: windows must partition the day without overlap")]
    Windows(String),
    #[error("search space for {0}: setpoint {1} outside operating range")]
    OutOfRange(String, f64),
    #[error("search space for {0}: empty grid")]
    EmptyGrid(String),
    #[error("evaluator failed after {attempts} attempts: {reason}")]
    Evaluator { attempts: u32, reason: String },
}

impl SearchSpace {
    pub fn validate(&self, range: Option<OperatingRange>) -> Result<(), OptError> {
        if self.grid.is_empty() {
            return Err(OptError::EmptyGrid(self.system.clone()));
        }
        let mut at = 0.0;
        for w in &self.windows {
            if w.start_hour != at || w.end_hour <= w.start_hour {
                return Err(OptError::Windows(self.system.clone()));
            }
            at = w.end_hour;
        }
        if at != 24.0 {
            return Err(OptError::Windows(self.system.clone()));
        }
        if let Some(r) = range {
            if let Some(v) = self.grid.iter().find(|v| !r.contains(**v)) {
                return Err(OptError::OutOfRange(self.system.clone(), *v));
            }
        }
        Ok(())
    }

    /// Number of candidate schedules.
    pub fn size(&self) -> usize {
        self.grid.len().saturating_pow(self.windows.len() as u32)
    }

    pub fn window_at(&self, hour: f64) -> usize {
        self.windows
            .iter()
            .position(|w| hour >= w.start_hour && hour < w.end_hour)
            .unwrap_or(self.windows.len() - 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub energy_kwh: f64,
    /// Share of zone-ticks inside the comfort band.
    pub comfort_fraction: f64,
}

pub trait Evaluator {
    fn evaluate(&self, setpoints: &[f64]) -> Result<Evaluation, String>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SearchMethod {
    Exhaustive,
    CoordinateDescent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub window: HourWindow,
    pub setpoint: f64,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterSchedule {
    pub system: String,
    pub actuator: String,
    pub entries: Vec<ScheduleEntry>,
    /// Evaluated energy over the horizon, kWh.
    pub objective_value: f64,
    pub comfort_fraction: f64,
    pub established_at: Tick,
    pub method: SearchMethod,
    pub evaluations: usize,
}

impl ParameterSchedule {
    pub fn setpoints(&self) -> Vec<f64> {
        self.entries.iter().map(|e| e.setpoint).collect()
    }

    pub fn setpoint_at(&self, hour: f64) -> Option<f64> {
        self.entries
            .iter()
            .find(|e| hour >= e.window.start_hour && hour < e.window.end_hour)
            .or(self.entries.last())
            .map(|e| e.setpoint)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct OptimizerConfig {
    /// Largest grid searched exhaustively.
    pub budget: usize,
    pub min_comfort: f64,
    pub horizon_ticks: u64,
    pub evaluator_attempts: u32,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        Self {
            budget: 64,
            min_comfort: 0.95,
            horizon_ticks: 1440,
            evaluator_attempts: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum OptOutcome {
    Found(ParameterSchedule),
    /// Nothing met the comfort constraint; the incumbent stays.
    Infeasible { evaluations: usize },
}

/// Candidate ordering: lower energy first, then the lexicographically
/// smaller setpoint vector (lowest setpoint, earliest window first).
pub fn better(a: (&[f64], f64), b: (&[f64], f64)) -> bool {
    match a.1.total_cmp(&b.1) {
        Ordering::Less => true,
        Ordering::Greater => false,
        Ordering::Equal => a.0.iter().zip(b.0).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()) == Some(Ordering::Less),
    }
}

struct Search<'a> {
    eval: &'a dyn Evaluator,
    cfg: &'a OptimizerConfig,
    count: usize,
}

impl Search<'_> {
    fn eval(&mut self, sp: &[f64]) -> Result<Option<f64>, OptError> {
        let mut last = String::new();
        for _ in 0..self.cfg.evaluator_attempts.max(1) {
            self.count += 1;
            match self.eval.evaluate(sp) {
                Ok(e) => return Ok((e.comfort_fraction >= self.cfg.min_comfort).then_some(e.energy_kwh)),
                Err(e) => last = e,
            }
        }
        Err(OptError::Evaluator {
            attempts: self.cfg.evaluator_attempts.max(1),
            reason: last,
        })
    }
}

/// Finds the lowest-energy comfortable schedule: exhaustively when the grid
/// fits the budget, else by coordinate descent from `incumbent`.
pub fn optimize(
    space: &SearchSpace,
    evaluator: &dyn Evaluator,
    incumbent: Option<&[f64]>,
    cfg: &OptimizerConfig,
    tick: Tick,
) -> Result<OptOutcome, OptError> {
    space.validate(None)?;
    let mut grid = space.grid.clone();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let nw = space.windows.len();
    let mut s = Search {
        eval: evaluator,
        cfg,
        count: 0,
    };
    let mut best: Option<(Vec<f64>, f64)> = None;
    let method = if space.size() <= cfg.budget {
        let mut idx = vec![0usize; nw];
        loop {
            let sp: Vec<f64> = idx.iter().map(|i| grid[*i]).collect();
            if let Some(e) = s.eval(&sp)? {
                if best.as_ref().is_none_or(|(b, be)| better((&sp, e), (b, *be))) {
                    best = Some((sp, e));
                }
            }
            let mut w = nw;
            loop {
                if w == 0 {
                    break;
                }
                w -= 1;
                idx[w] += 1;
                if idx[w] < grid.len() {
                    break;
                }
                idx[w] = 0;
                if w == 0 {
                    w = usize::MAX;
                    break;
                }
            }
            if w == usize::MAX || nw == 0 {
                break;
            }
        }
        SearchMethod::Exhaustive
    } else {
        let nearest = |v: f64| {
            grid.iter()
                .copied()
                .min_by(|a, b| (a - v).abs().total_cmp(&(b - v).abs()))
                .expect("grid not empty")
        };
        let mut cur: Vec<f64> = match incumbent {
            Some(inc) if inc.len() == nw => inc.iter().map(|v| nearest(*v)).collect(),
            _ => vec![grid[0]; nw],
        };
        let mut cur_e = s.eval(&cur)?;
        loop {
            let mut improved = false;
            for w in 0..nw {
                for g in &grid {
                    let mut cand = cur.clone();
                    cand[w] = *g;
                    if cand == cur {
                        continue;
                    }
                    let Some(e) = s.eval(&cand)? else {
                        continue;
                    };
                    let wins = match cur_e {
                        None => true,
                        Some(ce) => better((&cand, e), (&cur, ce)),
                    };
                    if wins {
                        cur = cand;
                        cur_e = Some(e);
                        improved = true;
                    }
                }
            }
            if !improved {
                break;
            }
        }
        best = cur_e.map(|e| (cur, e));
        SearchMethod::CoordinateDescent
    };
    let Some((sp, energy)) = best else {
        return Ok(OptOutcome::Infeasible { evaluations: s.count });
    };
    let comfort = evaluator
        .evaluate(&sp)
        .map(|e| e.comfort_fraction)
        .unwrap_or(f64::NAN);
    Ok(OptOutcome::Found(ParameterSchedule {
        system: space.system.clone(),
        actuator: space.actuator.clone(),
        entries: space
            .windows
            .iter()
            .zip(&sp)
            .map(|(w, v)| ScheduleEntry {
                window: *w,
                setpoint: *v,
                unit: space.unit.clone(),
            })
            .collect(),
        objective_value: energy,
        comfort_fraction: comfort,
        established_at: tick,
        method,
        evaluations: s.count,
    }))
}

/// Evaluates schedules on a physics-only copy of the building.
pub struct TwinEvaluator {
    base: SimWorld,
    space: SearchSpace,
    horizon: u64,
}

impl TwinEvaluator {
    pub fn new(world: &SimWorld, space: SearchSpace, horizon_ticks: u64) -> Self {
        Self {
            base: world.twin(),
            space,
            horizon: horizon_ticks,
        }
    }

    fn run(&self, setpoints: &[f64]) -> Result<Evaluation, SimError> {
        let mut w = self.base.clone();
        let bands: Vec<_> = w.comfort_bands().into_iter().map(|(_, b)| b).collect();
        let mut comfortable = 0u64;
        let mut samples = 0u64;
        let mut current: Option<f64> = None;
        for _ in 0..self.horizon {
            let hour = w.hour_at(w.tick());
            let sp = setpoints[self.space.window_at(hour)];
            let cmds = if current != Some(sp) {
                current = Some(sp);
                vec![ActuatorCommand::new(self.space.actuator.clone(), sp)]
            } else {
                vec![]
            };
            let out = w.step(&cmds)?;
            if let Some(e) = out.rejected.into_iter().next() {
                return Err(e);
            }
            for (t, b) in w.last_snapshot().zone_temps.iter().zip(&bands) {
                samples += 1;
                if b.contains(*t) {
                    comfortable += 1;
                }
            }
        }
        Ok(Evaluation {
            energy_kwh: w.energy().hvac_kwh,
            comfort_fraction: if samples == 0 { 1.0 } else { comfortable as f64 / samples as f64 },
        })
    }
}

impl Evaluator for TwinEvaluator {
    fn evaluate(&self, setpoints: &[f64]) -> Result<Evaluation, String> {
        self.run(setpoints).map_err(|e| e.to_string())
    }
}
