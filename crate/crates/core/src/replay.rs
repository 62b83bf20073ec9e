//! Per-task trajectory storage and window cropping.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::{Trajectory, Transition};
use crate::{Error, Result};

/// Replay capacity in transitions used by the paper-scale presets.
pub const DEFAULT_CAPACITY: usize = 1_000_000;

/// `W` contiguous transitions cropped from one trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionWindow {
    pub transitions: Vec<Transition>,
    pub source_trajectory_id: u64,
    pub start_index: usize,
}

impl TransitionWindow {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }
}

/// Bounded store of whole trajectories for one task. Eviction drops the
/// oldest trajectories first, never part of one.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TaskReplayBuffer {
    task_id: usize,
    capacity: usize,
    trajectories: VecDeque<Trajectory>,
    n_transitions: usize,
}

impl TaskReplayBuffer {
    pub fn new(task_id: usize, capacity: usize) -> Self {
        TaskReplayBuffer {
            task_id,
            capacity,
            trajectories: VecDeque::new(),
            n_transitions: 0,
        }
    }

    pub fn task_id(&self) -> usize {
        self.task_id
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Stored transitions.
    pub fn len(&self) -> usize {
        self.n_transitions
    }

    pub fn is_empty(&self) -> bool {
        self.n_transitions == 0
    }

    pub fn trajectories(&self) -> impl ExactSizeIterator<Item = &Trajectory> {
        self.trajectories.iter()
    }

    pub fn n_trajectories(&self) -> usize {
        self.trajectories.len()
    }

    pub fn add_trajectory(&mut self, trajectory: Trajectory) -> Result<()> {
        if trajectory.task_id != self.task_id {
            return Err(Error::Usage(format!(
                "trajectory of task {} added to buffer of task {}",
                trajectory.task_id, self.task_id
            )));
        }
        if trajectory.len() > self.capacity {
            return Err(Error::Usage(format!(
                "trajectory of {} transitions exceeds buffer capacity {}",
                trajectory.len(),
                self.capacity
            )));
        }
        self.n_transitions += trajectory.len();
        self.trajectories.push_back(trajectory);
        while self.n_transitions > self.capacity {
            let old = self.trajectories.pop_front().expect("over capacity implies non-empty");
            self.n_transitions -= old.len();
        }
        Ok(())
    }

    fn eligible(&self, window_size: usize) -> Result<Vec<usize>> {
        if window_size == 0 {
            return Err(Error::Config("window size must be at least 1".into()));
        }
        let eligible: Vec<usize> = self
            .trajectories
            .iter()
            .enumerate()
            .filter(|(_, t)| t.len() >= window_size)
            .map(|(i, _)| i)
            .collect();
        if eligible.is_empty() {
            return Err(Error::EmptyBuffer(format!(
                "task {} has no trajectory with at least {window_size} transitions",
                self.task_id
            )));
        }
        Ok(eligible)
    }

    fn crop<R: Rng + ?Sized>(&self, index: usize, window_size: usize, rng: &mut R) -> TransitionWindow {
        let traj = &self.trajectories[index];
        let start = rng.random_range(0..=traj.len() - window_size);
        TransitionWindow {
            transitions: traj.transitions[start..start + window_size].to_vec(),
            source_trajectory_id: traj.trajectory_id,
            start_index: start,
        }
    }

    /// Uniform trajectory among those at least `window_size` long, then a
    /// uniform start in `[0, len - window_size]`.
    pub fn sample_window<R: Rng + ?Sized>(
        &self,
        window_size: usize,
        rng: &mut R,
    ) -> Result<TransitionWindow> {
        let eligible = self.eligible(window_size)?;
        let index = eligible[rng.random_range(0..eligible.len())];
        Ok(self.crop(index, window_size, rng))
    }

    /// Two windows of the same trajectory with independent start indices.
    /// The starts may coincide.
    pub fn sample_window_pair<R: Rng + ?Sized>(
        &self,
        window_size: usize,
        rng: &mut R,
    ) -> Result<(TransitionWindow, TransitionWindow)> {
        self.sample_window_pair_excluding(window_size, None, rng)
    }

    /// As [`TaskReplayBuffer::sample_window_pair`], skipping the trajectory
    /// with id `exclude`.
    pub fn sample_window_pair_excluding<R: Rng + ?Sized>(
        &self,
        window_size: usize,
        exclude: Option<u64>,
        rng: &mut R,
    ) -> Result<(TransitionWindow, TransitionWindow)> {
        let mut eligible = self.eligible(window_size)?;
        if let Some(id) = exclude {
            eligible.retain(|&i| self.trajectories[i].trajectory_id != id);
            if eligible.is_empty() {
                return Err(Error::EmptyBuffer(format!(
                    "task {} has no second trajectory with at least {window_size} transitions",
                    self.task_id
                )));
            }
        }
        let index = eligible[rng.random_range(0..eligible.len())];
        let first = self.crop(index, window_size, rng);
        let second = self.crop(index, window_size, rng);
        Ok((first, second))
    }

    /// Uniform with replacement over all stored transitions.
    pub fn sample_rl_batch<R: Rng + ?Sized>(
        &self,
        batch_size: usize,
        rng: &mut R,
    ) -> Result<Vec<Transition>> {
        if self.is_empty() {
            return Err(Error::EmptyBuffer(format!(
                "task {} has no transitions",
                self.task_id
            )));
        }
        let mut out = Vec::with_capacity(batch_size);
        for _ in 0..batch_size {
            let mut k = rng.random_range(0..self.n_transitions);
            for t in &self.trajectories {
                if k < t.len() {
                    out.push(t.transitions[k].clone());
                    break;
                }
                k -= t.len();
            }
        }
        Ok(out)
    }

    /// All stored transitions, oldest first.
    pub fn all_transitions(&self) -> impl Iterator<Item = &Transition> {
        self.trajectories.iter().flat_map(|t| t.transitions.iter())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use alloc::vec;

    pub(crate) fn synthetic(task_id: usize, id: u64, len: usize) -> Trajectory {
        let transitions = (0..len)
            .map(|t| Transition {
                state: vec![t as f64],
                action: vec![0.0],
                reward: id as f64,
                next_state: vec![t as f64 + 1.0],
            })
            .collect();
        Trajectory {
            transitions,
            task_id,
            trajectory_id: id,
        }
    }

    #[test]
    fn add_counts_transitions() {
        let mut b = TaskReplayBuffer::new(0, 1000);
        b.add_trajectory(synthetic(0, 1, 64)).unwrap();
        assert_eq!(b.len(), 64);
    }

    #[test]
    fn whole_trajectory_eviction() {
        let mut b = TaskReplayBuffer::new(0, 100);
        b.add_trajectory(synthetic(0, 1, 64)).unwrap();
        b.add_trajectory(synthetic(0, 2, 64)).unwrap();
        assert_eq!(b.len(), 64);
        assert_eq!(b.trajectories().next().unwrap().trajectory_id, 2);
    }

    #[test]
    fn task_mismatch_is_usage_error() {
        let mut b = TaskReplayBuffer::new(0, 100);
        assert!(matches!(
            b.add_trajectory(synthetic(1, 1, 4)),
            Err(Error::Usage(_))
        ));
    }

    #[test]
    fn full_length_window_is_whole_trajectory() {
        let mut b = TaskReplayBuffer::new(0, 100);
        b.add_trajectory(synthetic(0, 3, 10)).unwrap();
        let w = b.sample_window(10, &mut seeded(0)).unwrap();
        assert_eq!(w.start_index, 0);
        assert_eq!(w.len(), 10);
        let (p, q) = b.sample_window_pair(10, &mut seeded(1)).unwrap();
        assert_eq!(p, q);
    }

    #[test]
    fn window_start_bounds_and_contiguity() {
        let mut b = TaskReplayBuffer::new(0, 100);
        b.add_trajectory(synthetic(0, 3, 10)).unwrap();
        let mut rng = seeded(2);
        for _ in 0..200 {
            let w = b.sample_window(4, &mut rng).unwrap();
            assert!(w.start_index <= 6);
            for (j, t) in w.transitions.iter().enumerate() {
                assert_eq!(t.state[0], (w.start_index + j) as f64);
            }
        }
    }

    #[test]
    fn oversized_window_rejected() {
        let mut b = TaskReplayBuffer::new(0, 100);
        b.add_trajectory(synthetic(0, 3, 10)).unwrap();
        assert!(matches!(
            b.sample_window(11, &mut seeded(0)),
            Err(Error::EmptyBuffer(_))
        ));
    }

    #[test]
    fn rl_batch_edge_cases() {
        let mut b = TaskReplayBuffer::new(0, 100);
        assert!(b.sample_rl_batch(3, &mut seeded(0)).is_err());
        b.add_trajectory(synthetic(0, 9, 1)).unwrap();
        assert!(b.sample_rl_batch(0, &mut seeded(0)).unwrap().is_empty());
        let batch = b.sample_rl_batch(5, &mut seeded(0)).unwrap();
        assert_eq!(batch.len(), 5);
        assert!(batch.iter().all(|t| *t == batch[0]));
    }
}
