//! Forward dynamics of the inbox process and its stochastic flow.
//!
//! A state is the finite set of pending priorities. An arrival inserts its
//! priority; an execution removes the maximum, or does nothing on an empty
//! inbox. Every trajectory is a deterministic fold of these two rules over an
//! event stream, so several initial states driven by the same stream form a
//! coupling.

use std::cmp::Ordering;
use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::point_process::{Event, EventKind, EventStream};

/// A task priority: a finite real `<= 0`, totally ordered.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Priority(f64);

impl Priority {
    pub fn new(p: f64) -> Result<Self> {
        if p.is_finite() && p <= 0.0 {
            // Normalize -0.0 so that equality and ordering agree.
            Ok(Priority(if p == 0.0 { 0.0 } else { p }))
        } else {
            Err(Error::param(format!("priority {p} must be finite and <= 0")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl Eq for Priority {}

impl PartialOrd for Priority {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Priority {
    fn cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

/// Pending priorities `Y_1 > Y_2 > ... > Y_N`.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct InboxState {
    tasks: BTreeSet<Priority>,
}

impl InboxState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_priorities<I: IntoIterator<Item = f64>>(priorities: I) -> Result<Self> {
        let mut state = Self::new();
        for p in priorities {
            state.insert(p)?;
        }
        Ok(state)
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    /// Highest pending priority, `Y_1`.
    pub fn top(&self) -> Option<f64> {
        self.tasks.last().map(|p| p.value())
    }

    /// Lowest pending priority.
    pub fn bottom(&self) -> Option<f64> {
        self.tasks.first().map(|p| p.value())
    }

    /// Priorities from highest to lowest.
    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.tasks.iter().rev().map(|p| p.value())
    }

    pub fn contains(&self, p: f64) -> bool {
        Priority::new(p).is_ok_and(|p| self.tasks.contains(&p))
    }

    pub fn is_subset(&self, other: &InboxState) -> bool {
        self.tasks.is_subset(&other.tasks)
    }

    /// Number of pending tasks with priority `>= floor`.
    pub fn count_at_least(&self, floor: f64) -> usize {
        match Priority::new(floor.min(0.0)) {
            Ok(f) => self.tasks.range(f..).count(),
            Err(_) => self.len(),
        }
    }

    fn insert(&mut self, p: f64) -> Result<()> {
        let p = Priority::new(p)?;
        if !self.tasks.insert(p) {
            return Err(Error::logic(format!(
                "priority {} is already pending",
                p.value()
            )));
        }
        Ok(())
    }

    /// Applies one event in place. Returns the executed priority, if any.
    pub fn apply(&mut self, kind: &EventKind) -> Result<Option<f64>> {
        match *kind {
            EventKind::Arrival { priority } => {
                self.insert(priority)?;
                Ok(None)
            }
            EventKind::Execution => Ok(self.tasks.pop_last().map(Priority::value)),
        }
    }

    /// Keeps only priorities in `[-lambda, 0]`.
    pub fn restrict(&self, lambda: f64) -> InboxState {
        InboxState {
            tasks: self
                .tasks
                .iter()
                .copied()
                .filter(|p| p.value() >= -lambda)
                .collect(),
        }
    }
}

/// Pure single-event transition.
pub fn step(state: &InboxState, kind: &EventKind) -> Result<InboxState> {
    let mut next = state.clone();
    next.apply(kind)?;
    Ok(next)
}

/// `Y ∩ [-lambda, 0]`.
pub fn restrict_state(state: &InboxState, lambda: f64) -> InboxState {
    state.restrict(lambda)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub event: Event,
    /// Executed priority for executions on a nonempty inbox.
    pub executed: Option<f64>,
    /// Post-event state (right-continuous convention).
    pub state: InboxState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub start_time: f64,
    pub initial: InboxState,
    pub snapshots: Vec<Snapshot>,
}

impl Trajectory {
    pub fn final_state(&self) -> &InboxState {
        self.snapshots
            .last()
            .map(|s| &s.state)
            .unwrap_or(&self.initial)
    }

    /// State at time `t`, including any event at exactly `t`.
    pub fn state_at(&self, t: f64) -> &InboxState {
        let idx = self.snapshots.partition_point(|s| s.event.time <= t);
        if idx == 0 {
            &self.initial
        } else {
            &self.snapshots[idx - 1].state
        }
    }
}

/// Folds the transition rules over `events`, calling `visit` after each event
/// with the event, the executed priority (if any) and the new state.
///
/// Events must be strictly increasing in time.
pub fn evolve_with<I, F>(initial: InboxState, events: I, mut visit: F) -> Result<InboxState>
where
    I: IntoIterator<Item = Event>,
    F: FnMut(&Event, Option<f64>, &InboxState),
{
    let mut state = initial;
    let mut last = f64::NEG_INFINITY;
    for event in events {
        if !(event.time > last) {
            return Err(Error::logic(format!(
                "event at {} does not follow {}",
                event.time, last
            )));
        }
        last = event.time;
        let executed = state.apply(&event.kind)?;
        visit(&event, executed, &state);
    }
    Ok(state)
}

fn check_initial(initial: &InboxState, stream: &EventStream) -> Result<()> {
    let floor = stream.window().p_min;
    match initial.bottom() {
        Some(p) if p < floor => Err(Error::param(format!(
            "initial priority {p} below the stream floor {floor}"
        ))),
        _ => Ok(()),
    }
}

/// Runs the inbox from `initial` over the whole stream, recording every
/// post-event state.
pub fn evolve(initial: &InboxState, stream: &EventStream) -> Result<Trajectory> {
    check_initial(initial, stream)?;
    let mut snapshots = Vec::with_capacity(stream.len());
    evolve_with(initial.clone(), stream.events(), |event, executed, state| {
        snapshots.push(Snapshot {
            event: *event,
            executed,
            state: state.clone(),
        })
    })?;
    Ok(Trajectory {
        start_time: stream.window().t_start,
        initial: initial.clone(),
        snapshots,
    })
}

/// Final state only; the flow map `Y_{s,t}(y)` over the stream's window.
pub fn evolve_final(initial: &InboxState, stream: &EventStream) -> Result<InboxState> {
    check_initial(initial, stream)?;
    evolve_with(initial.clone(), stream.events(), |_, _, _| {})
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Coalescence {
    pub first: usize,
    pub second: usize,
    /// First time the two states agree; `None` if they never do on the window.
    pub time: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoupledRun {
    pub trajectories: Vec<Trajectory>,
    pub coalescence: Vec<Coalescence>,
}

/// Drives every initial state with the same stream and records the first
/// coalescence time of each pair.
pub fn evolve_coupled(initials: &[InboxState], stream: &EventStream) -> Result<CoupledRun> {
    for init in initials {
        check_initial(init, stream)?;
    }
    let start = stream.window().t_start;
    let mut states: Vec<InboxState> = initials.to_vec();
    let mut trajectories: Vec<Trajectory> = initials
        .iter()
        .map(|init| Trajectory {
            start_time: start,
            initial: init.clone(),
            snapshots: Vec::with_capacity(stream.len()),
        })
        .collect();
    let mut coalescence = Vec::new();
    for i in 0..initials.len() {
        for j in i + 1..initials.len() {
            coalescence.push(Coalescence {
                first: i,
                second: j,
                time: (initials[i] == initials[j]).then_some(start),
            });
        }
    }

    let mut last = f64::NEG_INFINITY;
    for event in stream.events() {
        if !(event.time > last) {
            return Err(Error::logic("events out of order"));
        }
        last = event.time;
        for (state, traj) in states.iter_mut().zip(trajectories.iter_mut()) {
            let executed = state.apply(&event.kind)?;
            traj.snapshots.push(Snapshot {
                event,
                executed,
                state: state.clone(),
            });
        }
        for c in coalescence.iter_mut().filter(|c| c.time.is_none()) {
            let (a, b) = (&states[c.first], &states[c.second]);
            if a.len() == b.len() && a == b {
                c.time = Some(event.time);
            }
        }
    }
    Ok(CoupledRun {
        trajectories,
        coalescence,
    })
}

/// One JSON-lines record of a trajectory export.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventRecord {
    pub time: f64,
    pub event_kind: String,
    /// Arrival priority, or the executed priority for a nonempty execution.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub priority: Option<f64>,
    pub queue_size: usize,
    pub top_priority: Option<f64>,
}

impl EventRecord {
    pub fn new(event: &Event, executed: Option<f64>, state: &InboxState) -> Self {
        let (event_kind, priority) = match event.kind {
            EventKind::Arrival { priority } => ("arrival", Some(priority)),
            EventKind::Execution => ("execution", executed),
        };
        Self {
            time: event.time,
            event_kind: event_kind.to_string(),
            priority,
            queue_size: state.len(),
            top_priority: state.top(),
        }
    }
}
