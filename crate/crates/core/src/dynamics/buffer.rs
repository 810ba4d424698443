use std::collections::VecDeque;
use std::io::{self, Write};

use rand::{Rng, RngCore};

use super::{DynamicsError, Result};
use crate::env::{StepRecord, Trajectory};

/// Bounded FIFO of step records, tagged with the trajectory they came from.
#[derive(Clone, Debug)]
pub struct ReplayBuffer {
    capacity: usize,
    records: VecDeque<(u64, StepRecord)>,
    next_traj: u64,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(DynamicsError::Buffer("capacity must be positive".into()));
        }
        Ok(Self { capacity, records: VecDeque::with_capacity(capacity.min(1 << 16)), next_traj: 0 })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Appends every step, evicting the oldest records past capacity.
    pub fn push(&mut self, t: &Trajectory) -> Result<()> {
        if t.is_empty() {
            return Err(DynamicsError::Buffer("empty trajectory".into()));
        }
        for (i, w) in t.steps.windows(2).enumerate() {
            if w[0].s_next != w[1].s || w[0].terminal {
                return Err(DynamicsError::Buffer(format!("steps {i} and {} do not chain", i + 1)));
            }
        }
        if !t.steps.last().is_some_and(|s| s.terminal) {
            return Err(DynamicsError::Buffer("trajectory does not end at a terminal state".into()));
        }
        let id = self.next_traj;
        self.next_traj += 1;
        for st in &t.steps {
            if self.records.len() == self.capacity {
                self.records.pop_front();
            }
            self.records.push_back((id, st.clone()));
        }
        Ok(())
    }

    /// `k` records drawn uniformly with replacement.
    pub fn sample(&self, k: usize, rng: &mut dyn RngCore) -> Result<Vec<StepRecord>> {
        if self.records.is_empty() {
            return Err(DynamicsError::Buffer("cannot sample from an empty buffer".into()));
        }
        Ok((0..k).map(|_| self.records[rng.random_range(0..self.records.len())].1.clone()).collect())
    }

    pub fn iter(&self) -> impl Iterator<Item = &StepRecord> {
        self.records.iter().map(|(_, r)| r)
    }

    /// Writes one record per line, oldest first, tab-separated:
    /// `trajectory  s  a  s_next  terminal  reward`. States use the
    /// `[x,y]` / `[x,y]*` notation; reward is `-` on non-terminal steps.
    pub fn dump(&self, mut w: impl Write) -> io::Result<()> {
        writeln!(w, "# trajectory\ts\ta\ts_next\tterminal\treward")?;
        for (id, r) in &self.records {
            let reward = r.reward.map_or_else(|| "-".to_string(), |v| format!("{v:e}"));
            writeln!(w, "{id}\t{}\t{}\t{}\t{}\t{reward}", r.s, r.a.0, r.s_next, u8::from(r.terminal))?;
        }
        Ok(())
    }
}
