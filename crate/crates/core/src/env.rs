//! Desk-scale point-mass task families.
//!
//! Three families vary along the axes a meta-RL learner must infer from
//! experience: the reward's goal (`point-goal-2d`), a reward parameter
//! (`point-vel-1d`), and the dynamics (`point-drag-2d`). Task identity never
//! appears in the state.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::math;
use crate::rng;
use crate::{Error, Result};

pub const DEFAULT_HORIZON: usize = 64;

/// Fixed target of the drag family.
pub const DRAG_GOAL: [f64; 2] = [0.5, 0.5];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Family {
    #[serde(rename = "point-goal-2d")]
    PointGoal2d,
    #[serde(rename = "point-vel-1d")]
    PointVel1d,
    #[serde(rename = "point-drag-2d")]
    PointDrag2d,
}

impl Family {
    pub const ALL: [Family; 3] = [Family::PointGoal2d, Family::PointVel1d, Family::PointDrag2d];

    pub fn name(self) -> &'static str {
        match self {
            Family::PointGoal2d => "point-goal-2d",
            Family::PointVel1d => "point-vel-1d",
            Family::PointDrag2d => "point-drag-2d",
        }
    }

    pub fn task_dim(self) -> usize {
        match self {
            Family::PointGoal2d => 2,
            Family::PointVel1d | Family::PointDrag2d => 1,
        }
    }

    pub fn state_dim(self) -> usize {
        match self {
            Family::PointGoal2d | Family::PointDrag2d => 4,
            Family::PointVel1d => 2,
        }
    }

    pub fn action_dim(self) -> usize {
        match self {
            Family::PointGoal2d | Family::PointDrag2d => 2,
            Family::PointVel1d => 1,
        }
    }

    /// Width of a flattened `(s, a, r, s')` transition.
    pub fn transition_dim(self) -> usize {
        2 * self.state_dim() + self.action_dim() + 1
    }

    fn sample_task_vector<R: Rng + ?Sized>(self, rng: &mut R) -> Vec<f64> {
        match self {
            Family::PointGoal2d => vec![rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0)],
            Family::PointVel1d => vec![rng.random_range(0.5..=2.0)],
            Family::PointDrag2d => vec![rng.random_range(0.1..=2.0)],
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Family {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Family::ALL
            .into_iter()
            .find(|f| f.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown task family `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub family: Family,
    pub task_vector: Vec<f64>,
    pub horizon: usize,
    pub discount: f64,
}

impl TaskSpec {
    pub fn new(family: Family, task_vector: Vec<f64>, horizon: usize, discount: f64) -> Result<Self> {
        let t = TaskSpec {
            family,
            task_vector,
            horizon,
            discount,
        };
        t.validate()?;
        Ok(t)
    }

    pub fn validate(&self) -> Result<()> {
        if self.task_vector.len() != self.family.task_dim() {
            return Err(Error::dim(
                "task vector",
                self.family.task_dim(),
                self.task_vector.len(),
            ));
        }
        if self.horizon == 0 {
            return Err(Error::Config("task horizon must be at least 1".into()));
        }
        if !(0.0..=1.0).contains(&self.discount) {
            return Err(Error::Config(format!(
                "discount must lie in [0, 1], got {}",
                self.discount
            )));
        }
        if self.task_vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("task vector".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_state: Vec<f64>,
}

impl Transition {
    /// Encoder input `(s, a, r, s')`.
    pub fn flatten_into(&self, out: &mut Vec<f64>) {
        out.extend_from_slice(&self.state);
        out.extend_from_slice(&self.action);
        out.push(self.reward);
        out.extend_from_slice(&self.next_state);
    }

    pub fn flattened(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(2 * self.state.len() + self.action.len() + 1);
        self.flatten_into(&mut v);
        v
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    pub task_id: usize,
    pub trajectory_id: u64,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn total_reward(&self) -> f64 {
        self.transitions.iter().map(|t| t.reward).sum()
    }

    /// `next_state[t] == state[t + 1]` for every step.
    pub fn is_chained(&self) -> bool {
        self.transitions
            .windows(2)
            .all(|w| w[0].next_state == w[1].state)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSplit {
    pub train_tasks: Vec<TaskSpec>,
    pub test_tasks: Vec<TaskSpec>,
}

impl TaskSplit {
    pub fn family(&self) -> Option<Family> {
        self.train_tasks.first().map(|t| t.family)
    }
}

/// Draws `n_train + n_test` tasks i.i.d. from the family distribution.
///
/// Goals are uniform in `[-1, 1]^2`, target velocities uniform in `[0.5, 2]`
/// and drag coefficients uniform in `[0.1, 2]`. Exact duplicates are redrawn
/// so the two sets are disjoint.
pub fn sample_task_split(
    family: Family,
    n_train: usize,
    n_test: usize,
    horizon: usize,
    discount: f64,
    seed: u64,
) -> Result<TaskSplit> {
    if n_train == 0 || n_test == 0 {
        return Err(Error::Config(format!(
            "task split needs at least one train and one test task, got {n_train}/{n_test}"
        )));
    }
    let mut rng = rng::derive(seed, rng::Stream::Split, 0, 0);
    let mut tasks: Vec<TaskSpec> = Vec::with_capacity(n_train + n_test);
    while tasks.len() < n_train + n_test {
        let v = family.sample_task_vector(&mut rng);
        if tasks.iter().any(|t| t.task_vector == v) {
            continue;
        }
        tasks.push(TaskSpec::new(family, v, horizon, discount)?);
    }
    let test_tasks = tasks.split_off(n_train);
    Ok(TaskSplit {
        train_tasks: tasks,
        test_tasks,
    })
}

pub fn env_reset<R: Rng + ?Sized>(task: &TaskSpec, rng: &mut R) -> Vec<f64> {
    match task.family {
        Family::PointGoal2d | Family::PointDrag2d => vec![
            rng.random_range(-0.1..=0.1),
            rng.random_range(-0.1..=0.1),
            0.0,
            0.0,
        ],
        Family::PointVel1d => vec![0.0, 0.0],
    }
}

fn clip(a: f64) -> f64 {
    a.clamp(-1.0, 1.0)
}

/// Deterministic transition. Action components are clipped to `[-1, 1]`.
pub fn env_step(task: &TaskSpec, state: &[f64], action: &[f64]) -> (Vec<f64>, f64) {
    debug_assert_eq!(state.len(), task.family.state_dim());
    debug_assert_eq!(action.len(), task.family.action_dim());
    match task.family {
        Family::PointGoal2d => {
            let x = state[0] + 0.1 * clip(action[0]);
            let y = state[1] + 0.1 * clip(action[1]);
            let g = &task.task_vector;
            let dist = math::sqrt((x - g[0]) * (x - g[0]) + (y - g[1]) * (y - g[1]));
            (vec![x, y, state[2], state[3]], -dist)
        }
        Family::PointVel1d => {
            let v = state[1] + 0.1 * clip(action[0]);
            let x = state[0] + 0.05 * v;
            (vec![x, v], -math::abs(v - task.task_vector[0]))
        }
        Family::PointDrag2d => {
            let drag = task.task_vector[0];
            let vx = state[2] + 0.1 * clip(action[0]) - drag * 0.05 * state[2];
            let vy = state[3] + 0.1 * clip(action[1]) - drag * 0.05 * state[3];
            let x = state[0] + 0.05 * vx;
            let y = state[1] + 0.05 * vy;
            let dist = math::sqrt(
                (x - DRAG_GOAL[0]) * (x - DRAG_GOAL[0]) + (y - DRAG_GOAL[1]) * (y - DRAG_GOAL[1]),
            );
            (vec![x, y, vx, vy], -dist)
        }
    }
}

/// Ground-truth task vector zero-padded to the context dimension.
pub fn oracle_context(task: &TaskSpec, context_dim: usize) -> Result<Vec<f64>> {
    if context_dim == 0 || context_dim < task.task_vector.len() {
        return Err(Error::Config(format!(
            "context dimension {context_dim} cannot hold a {}-dimensional task vector",
            task.task_vector.len()
        )));
    }
    let mut z = vec![0.0; context_dim];
    z[..task.task_vector.len()].copy_from_slice(&task.task_vector);
    Ok(z)
}

/// Runs one episode to the task horizon, querying `act(state)` each step.
pub fn rollout<R, F>(
    task: &TaskSpec,
    task_id: usize,
    trajectory_id: u64,
    rng: &mut R,
    mut act: F,
) -> Trajectory
where
    R: Rng + ?Sized,
    F: FnMut(&[f64], &mut R) -> Vec<f64>,
{
    let mut state = env_reset(task, rng);
    let mut transitions = Vec::with_capacity(task.horizon);
    for _ in 0..task.horizon {
        let action = act(&state, rng);
        let (next_state, reward) = env_step(task, &state, &action);
        transitions.push(Transition {
            state: core::mem::replace(&mut state, next_state.clone()),
            action,
            reward,
            next_state,
        });
    }
    Trajectory {
        transitions,
        task_id,
        trajectory_id,
    }
}

/// Short human-readable task label, e.g. `point-goal-2d[0.31,-0.20]`.
pub fn task_label(task: &TaskSpec) -> String {
    let mut s = String::from(task.family.name());
    s.push('[');
    for (i, v) in task.task_vector.iter().enumerate() {
        if i > 0 {
            s.push(',');
        }
        s.push_str(&format!("{v:.3}"));
    }
    s.push(']');
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn goal(g: [f64; 2]) -> TaskSpec {
        TaskSpec::new(Family::PointGoal2d, g.to_vec(), 64, 0.9).unwrap()
    }

    #[test]
    fn zero_train_tasks_rejected() {
        assert!(sample_task_split(Family::PointGoal2d, 0, 2, 64, 0.9, 1).is_err());
        assert!(sample_task_split(Family::PointGoal2d, 2, 0, 64, 0.9, 1).is_err());
    }

    #[test]
    fn split_is_deterministic() {
        let a = sample_task_split(Family::PointVel1d, 5, 3, 64, 0.9, 42).unwrap();
        let b = sample_task_split(Family::PointVel1d, 5, 3, 64, 0.9, 42).unwrap();
        assert_eq!(a, b);
        let c = sample_task_split(Family::PointVel1d, 5, 3, 64, 0.9, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn goals_inside_unit_box() {
        let s = sample_task_split(Family::PointGoal2d, 8, 4, 64, 0.9, 7).unwrap();
        assert_eq!(s.train_tasks.len(), 8);
        for t in s.train_tasks.iter().chain(&s.test_tasks) {
            assert!(t.task_vector.iter().all(|v| (-1.0..=1.0).contains(v)));
        }
        for t in &s.test_tasks {
            assert!(!s.train_tasks.contains(t));
        }
    }

    #[test]
    fn family_parsing() {
        assert_eq!("point-drag-2d".parse::<Family>().unwrap(), Family::PointDrag2d);
        assert!(matches!("ant-goal".parse::<Family>(), Err(Error::Config(_))));
    }

    #[test]
    fn vel_reset_is_origin() {
        let t = TaskSpec::new(Family::PointVel1d, vec![1.0], 64, 0.9).unwrap();
        assert_eq!(env_reset(&t, &mut seeded(9)), vec![0.0, 0.0]);
    }

    #[test]
    fn goal_reset_in_small_box_and_reproducible() {
        let t = goal([0.5, 0.5]);
        for seed in 0..50 {
            let s = env_reset(&t, &mut seeded(seed));
            assert!(s[..2].iter().all(|v| (-0.1..=0.1).contains(v)));
            assert_eq!(&s[2..], &[0.0, 0.0]);
            assert_eq!(s, env_reset(&t, &mut seeded(seed)));
        }
    }

    #[test]
    fn reward_zero_at_goal() {
        let t = goal([0.3, -0.2]);
        let (_, r) = env_step(&t, &[0.3, -0.2, 0.0, 0.0], &[0.0, 0.0]);
        assert_eq!(r, 0.0);
    }

    #[test]
    fn reward_zero_at_target_velocity() {
        let t = TaskSpec::new(Family::PointVel1d, vec![1.5], 64, 0.9).unwrap();
        let (_, r) = env_step(&t, &[0.0, 1.5], &[0.0]);
        assert_eq!(r, 0.0);
    }

    #[test]
    fn drag_from_rest() {
        let t = TaskSpec::new(Family::PointDrag2d, vec![1.0], 64, 0.9).unwrap();
        let (s, _) = env_step(&t, &[0.0, 0.0, 0.0, 0.0], &[1.0, 0.0]);
        assert_eq!(&s[2..], &[0.1, 0.0]);
    }

    #[test]
    fn actions_are_clipped() {
        let t = goal([0.0, 0.0]);
        let (a, _) = env_step(&t, &[0.0, 0.0, 0.0, 0.0], &[5.0, -5.0]);
        let (b, _) = env_step(&t, &[0.0, 0.0, 0.0, 0.0], &[1.0, -1.0]);
        assert_eq!(a, b);
    }

    #[test]
    fn oracle_context_pads() {
        let t = TaskSpec::new(Family::PointVel1d, vec![1.5], 64, 0.9).unwrap();
        assert_eq!(oracle_context(&t, 5).unwrap(), vec![1.5, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(
            oracle_context(&goal([0.3, -0.2]), 5).unwrap(),
            vec![0.3, -0.2, 0.0, 0.0, 0.0]
        );
        assert!(oracle_context(&t, 0).is_err());
        assert!(oracle_context(&goal([0.3, -0.2]), 1).is_err());
    }

    #[test]
    fn task_vector_dimension_checked() {
        assert!(TaskSpec::new(Family::PointGoal2d, vec![0.1], 64, 0.9).is_err());
        assert!(TaskSpec::new(Family::PointGoal2d, vec![0.1, 0.2], 0, 0.9).is_err());
    }
}
