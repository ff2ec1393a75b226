//! Seeded Poisson randomness: substream RNGs, event streams on
//! priority × time windows, and a streaming exponential-clock source.

use std::cmp::Ordering;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A reproducible random stream identified by `(seed, stream_id)`.
///
/// Backed by ChaCha8, whose 64-bit stream selector gives independent
/// substreams without any seed bookkeeping: sample `i` of a batch simply uses
/// stream `i`.
#[derive(Clone, Debug)]
pub struct RngStream {
    seed: u64,
    stream_id: u64,
    inner: ChaCha8Rng,
}

impl RngStream {
    pub fn new(seed: u64, stream_id: u64) -> Self {
        let mut inner = ChaCha8Rng::seed_from_u64(seed);
        inner.set_stream(stream_id);
        Self {
            seed,
            stream_id,
            inner,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    /// Uniform draw on `[0, 1)`.
    #[inline]
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }
}

impl RngCore for RngStream {
    #[inline]
    fn next_u32(&mut self) -> u32 {
        self.inner.next_u32()
    }

    #[inline]
    fn next_u64(&mut self) -> u64 {
        self.inner.next_u64()
    }

    fn fill_bytes(&mut self, dst: &mut [u8]) {
        self.inner.fill_bytes(dst)
    }
}

/// Builds a stream id from a label and an index, so that different
/// experiments sharing one seed never share a substream.
pub fn substream(label: u32, index: u64) -> u64 {
    ((label as u64) << 40) ^ index
}

/// Rectangle `[t_start, t_end] × [p_min, 0]` in time × priority.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub t_start: f64,
    pub t_end: f64,
    pub p_min: f64,
}

impl Window {
    pub fn new(t_start: f64, t_end: f64, p_min: f64) -> Self {
        Self {
            t_start,
            t_end,
            p_min,
        }
    }

    pub fn length(&self) -> f64 {
        self.t_end - self.t_start
    }

    fn validate(&self) -> Result<()> {
        if !(self.t_start.is_finite() && self.t_end.is_finite() && self.p_min.is_finite()) {
            return Err(Error::param("window bounds must be finite"));
        }
        if self.t_start >= self.t_end {
            return Err(Error::param(format!(
                "empty time window [{}, {}]",
                self.t_start, self.t_end
            )));
        }
        if self.p_min >= 0.0 {
            return Err(Error::param(format!(
                "priority floor must be negative, got {}",
                self.p_min
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arrival {
    pub time: f64,
    pub priority: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum EventKind {
    Arrival { priority: f64 },
    Execution,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
}

impl Event {
    pub fn arrival(time: f64, priority: f64) -> Self {
        Self {
            time,
            kind: EventKind::Arrival { priority },
        }
    }

    pub fn execution(time: f64) -> Self {
        Self {
            time,
            kind: EventKind::Execution,
        }
    }
}

/// Realization of the arrival field and the execution clock on a window.
///
/// Both lists are strictly increasing in time, no two events share a time and
/// no two arrivals share a priority.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EventStream {
    window: Window,
    arrivals: Vec<Arrival>,
    executions: Vec<f64>,
}

impl EventStream {
    /// Assembles a stream from explicit events, checking every invariant.
    pub fn new(window: Window, arrivals: Vec<Arrival>, executions: Vec<f64>) -> Result<Self> {
        if !(window.t_start <= window.t_end) || window.p_min > 0.0 {
            return Err(Error::param("malformed window"));
        }
        for pair in arrivals.windows(2) {
            if !(pair[0].time < pair[1].time) {
                return Err(Error::logic("arrival times must be strictly increasing"));
            }
        }
        for pair in executions.windows(2) {
            if !(pair[0] < pair[1]) {
                return Err(Error::logic("execution times must be strictly increasing"));
            }
        }
        let in_window = |t: f64| t >= window.t_start && t <= window.t_end;
        for a in &arrivals {
            if !in_window(a.time) || !(a.priority >= window.p_min && a.priority <= 0.0) {
                return Err(Error::logic(format!(
                    "arrival ({}, {}) outside window",
                    a.time, a.priority
                )));
            }
        }
        if executions.iter().any(|&t| !in_window(t)) {
            return Err(Error::logic("execution outside window"));
        }
        let mut prios: Vec<f64> = arrivals.iter().map(|a| a.priority).collect();
        prios.sort_by(f64::total_cmp);
        if prios.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::logic("two arrivals share a priority"));
        }
        let stream = Self {
            window,
            arrivals,
            executions,
        };
        let mut last = f64::NEG_INFINITY;
        for e in stream.events() {
            if e.time == last {
                return Err(Error::logic("two events share a time"));
            }
            last = e.time;
        }
        Ok(stream)
    }

    pub fn empty(window: Window) -> Self {
        Self {
            window,
            arrivals: Vec::new(),
            executions: Vec::new(),
        }
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn arrivals(&self) -> &[Arrival] {
        &self.arrivals
    }

    pub fn executions(&self) -> &[f64] {
        &self.executions
    }

    pub fn len(&self) -> usize {
        self.arrivals.len() + self.executions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// All events merged in time order.
    pub fn events(&self) -> Events<'_> {
        Events {
            arrivals: &self.arrivals,
            executions: &self.executions,
        }
    }

    /// Removes arrivals with priority below `p_cut`; executions are kept.
    pub fn restrict(&self, p_cut: f64) -> Result<EventStream> {
        if !(p_cut >= self.window.p_min && p_cut <= 0.0) {
            return Err(Error::param(format!(
                "cut {p_cut} outside [{}, 0]",
                self.window.p_min
            )));
        }
        Ok(EventStream {
            window: Window {
                p_min: p_cut,
                ..self.window
            },
            arrivals: self
                .arrivals
                .iter()
                .copied()
                .filter(|a| a.priority >= p_cut)
                .collect(),
            executions: self.executions.clone(),
        })
    }

    /// Splits into the events in `[t_start, t]` and those in `(t, t_end]`.
    pub fn split_at(&self, t: f64) -> Result<(EventStream, EventStream)> {
        let w = self.window;
        if !(t >= w.t_start && t <= w.t_end) {
            return Err(Error::param(format!("split time {t} outside window")));
        }
        let ia = self.arrivals.partition_point(|a| a.time <= t);
        let ie = self.executions.partition_point(|&s| s <= t);
        let head = EventStream {
            window: Window { t_end: t, ..w },
            arrivals: self.arrivals[..ia].to_vec(),
            executions: self.executions[..ie].to_vec(),
        };
        let tail = EventStream {
            window: Window { t_start: t, ..w },
            arrivals: self.arrivals[ia..].to_vec(),
            executions: self.executions[ie..].to_vec(),
        };
        Ok((head, tail))
    }
}

pub struct Events<'a> {
    arrivals: &'a [Arrival],
    executions: &'a [f64],
}

impl Iterator for Events<'_> {
    type Item = Event;

    fn next(&mut self) -> Option<Event> {
        let take_arrival = match (self.arrivals.first(), self.executions.first()) {
            (None, None) => return None,
            (Some(_), None) => true,
            (None, Some(_)) => false,
            (Some(a), Some(&e)) => a.time.total_cmp(&e) != Ordering::Greater,
        };
        if take_arrival {
            let a = self.arrivals[0];
            self.arrivals = &self.arrivals[1..];
            Some(Event::arrival(a.time, a.priority))
        } else {
            let t = self.executions[0];
            self.executions = &self.executions[1..];
            Some(Event::execution(t))
        }
    }

    fn size_hint(&self) -> (usize, Option<usize>) {
        let n = self.arrivals.len() + self.executions.len();
        (n, Some(n))
    }
}

fn poisson_count(rng: &mut RngStream, mean: f64) -> Result<usize> {
    let dist = Poisson::new(mean).map_err(|e| Error::param(format!("poisson mean {mean}: {e}")))?;
    Ok(dist.sample(rng) as usize)
}

/// Samples the unit-intensity arrival field on `window` and the rate-one
/// execution clock on its time span, by count-then-uniform placement.
pub fn sample_event_stream(rng: &mut RngStream, window: Window) -> Result<EventStream> {
    window.validate()?;
    let len = window.length();
    let width = -window.p_min;
    let n_in = poisson_count(rng, width * len)?;
    let n_out = poisson_count(rng, len)?;

    let mut arrivals: Vec<Arrival> = (0..n_in)
        .map(|_| Arrival {
            time: window.t_start + len * rng.uniform(),
            priority: window.p_min + width * rng.uniform(),
        })
        .collect();
    let mut executions: Vec<f64> = (0..n_out)
        .map(|_| window.t_start + len * rng.uniform())
        .collect();

    // Exact ties have probability zero but floating point can produce them;
    // redraw until every time and every priority is distinct.
    loop {
        arrivals.sort_by(|a, b| a.time.total_cmp(&b.time));
        executions.sort_by(f64::total_cmp);
        let mut redrawn = false;

        let mut times: Vec<(f64, usize, bool)> = arrivals
            .iter()
            .enumerate()
            .map(|(i, a)| (a.time, i, true))
            .chain(executions.iter().enumerate().map(|(i, &t)| (t, i, false)))
            .collect();
        times.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in times.windows(2) {
            if w[0].0 == w[1].0 {
                let (_, idx, is_arrival) = w[1];
                let t = window.t_start + len * rng.uniform();
                if is_arrival {
                    arrivals[idx].time = t;
                } else {
                    executions[idx] = t;
                }
                redrawn = true;
            }
        }

        let mut order: Vec<usize> = (0..arrivals.len()).collect();
        order.sort_by(|&i, &j| arrivals[i].priority.total_cmp(&arrivals[j].priority));
        for w in order.windows(2) {
            if arrivals[w[0]].priority == arrivals[w[1]].priority {
                arrivals[w[1]].priority = window.p_min + width * rng.uniform();
                redrawn = true;
            }
        }

        if !redrawn {
            break;
        }
    }

    Ok(EventStream {
        window,
        arrivals,
        executions,
    })
}

/// `restrict_stream` as a free function.
pub fn restrict_stream(stream: &EventStream, p_cut: f64) -> Result<EventStream> {
    stream.restrict(p_cut)
}

/// Unbounded event source for the inbox with arrival rate `lambda`, generated
/// by exponential spacings of the superposed clock (rate `lambda + 1`).
///
/// Used where a stream is consumed once and never materialized, e.g. long
/// forward runs.
pub struct PoissonClock<'r> {
    rng: &'r mut RngStream,
    lambda: f64,
    spacing: Exp<f64>,
    time: f64,
}

impl<'r> PoissonClock<'r> {
    pub fn new(rng: &'r mut RngStream, lambda: f64, start: f64) -> Result<Self> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::param(format!("arrival rate {lambda} must be >= 0")));
        }
        let spacing = Exp::new(lambda + 1.0).map_err(|e| Error::param(e.to_string()))?;
        Ok(Self {
            rng,
            lambda,
            spacing,
            time: start,
        })
    }

    pub fn time(&self) -> f64 {
        self.time
    }
}

impl Iterator for PoissonClock<'_> {
    type Item = Event;

    fn next(&mut self) -> Option<Event> {
        self.time += self.spacing.sample(self.rng);
        let u = self.rng.uniform() * (self.lambda + 1.0);
        if u < self.lambda {
            // Conditioned on u < lambda, -u is uniform on (-lambda, 0].
            Some(Event::arrival(self.time, -u))
        } else {
            Some(Event::execution(self.time))
        }
    }
}
