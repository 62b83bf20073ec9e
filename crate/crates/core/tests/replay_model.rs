//! Replay buffer against a reference model and sampling-frequency tests.

use std::collections::VecDeque;

use proptest::prelude::*;

use tcl_core::env::{Trajectory, Transition};
use tcl_core::replay::TaskReplayBuffer;
use tcl_core::rng::seeded;
use tcl_core::Error;

/// Trajectory whose transitions encode `(id, index)` in the reward.
fn synthetic(task_id: usize, id: u64, len: usize) -> Trajectory {
    let transitions = (0..len)
        .map(|i| Transition {
            state: vec![i as f64],
            action: vec![0.0],
            reward: id as f64 * 1000.0 + i as f64,
            next_state: vec![i as f64 + 1.0],
        })
        .collect();
    Trajectory { transitions, task_id, trajectory_id: id }
}

/// Upper 0.1% quantile bound for a chi-square statistic, Wilson-Hilferty.
fn chi_square_bound(dof: usize) -> f64 {
    let k = dof as f64;
    let z = 3.09;
    k * (1.0 - 2.0 / (9.0 * k) + z * (2.0 / (9.0 * k)).sqrt()).powi(3)
}

fn chi_square(counts: &[usize], expected: f64) -> f64 {
    counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum()
}

#[test]
fn empty_buffer_errors() {
    let b = TaskReplayBuffer::new(0, 100);
    let mut rng = seeded(0);
    assert!(matches!(b.sample_window(4, &mut rng), Err(Error::EmptyBuffer(_))));
    assert!(matches!(b.sample_window_pair(4, &mut rng), Err(Error::EmptyBuffer(_))));
    assert!(matches!(b.sample_rl_batch(4, &mut rng), Err(Error::EmptyBuffer(_))));
}

#[test]
fn windows_shorter_trajectories_are_skipped() {
    let mut b = TaskReplayBuffer::new(0, 1000);
    b.add_trajectory(synthetic(0, 1, 3)).unwrap();
    b.add_trajectory(synthetic(0, 2, 10)).unwrap();
    let mut rng = seeded(1);
    for _ in 0..200 {
        let w = b.sample_window(5, &mut rng).unwrap();
        assert_eq!(w.source_trajectory_id, 2);
        assert_eq!(w.len(), 5);
    }
    assert!(matches!(b.sample_window(11, &mut rng), Err(Error::EmptyBuffer(_))));
}

#[test]
fn window_is_contiguous_slice() {
    let mut b = TaskReplayBuffer::new(0, 1000);
    b.add_trajectory(synthetic(0, 7, 20)).unwrap();
    let mut rng = seeded(2);
    for _ in 0..100 {
        let (q, k) = b.sample_window_pair(6, &mut rng).unwrap();
        for w in [&q, &k] {
            assert_eq!(w.source_trajectory_id, 7);
            for (i, t) in w.transitions.iter().enumerate() {
                assert_eq!(t.reward, 7000.0 + (w.start_index + i) as f64);
            }
        }
    }
}

#[test]
fn window_starts_are_uniform() {
    let (len, w, draws) = (20usize, 5usize, 64_000usize);
    let mut b = TaskReplayBuffer::new(0, 1000);
    b.add_trajectory(synthetic(0, 0, len)).unwrap();
    let mut rng = seeded(3);
    let mut counts = vec![0usize; len - w + 1];
    for _ in 0..draws {
        counts[b.sample_window(w, &mut rng).unwrap().start_index] += 1;
    }
    let stat = chi_square(&counts, draws as f64 / counts.len() as f64);
    assert!(stat < chi_square_bound(counts.len() - 1), "chi-square {stat}");
}

#[test]
fn trajectory_choice_is_uniform_among_eligible() {
    let mut b = TaskReplayBuffer::new(0, 10_000);
    // Lengths differ: trajectory choice must not be length-weighted.
    for (id, len) in [(0u64, 8usize), (1, 30), (2, 64), (3, 12)] {
        b.add_trajectory(synthetic(0, id, len)).unwrap();
    }
    let mut rng = seeded(4);
    let draws = 40_000;
    let mut counts = vec![0usize; 4];
    for _ in 0..draws {
        counts[b.sample_window(8, &mut rng).unwrap().source_trajectory_id as usize] += 1;
    }
    let stat = chi_square(&counts, draws as f64 / 4.0);
    assert!(stat < chi_square_bound(3), "chi-square {stat}: {counts:?}");
}

#[test]
fn rl_batch_is_uniform_over_transitions() {
    let mut b = TaskReplayBuffer::new(0, 10_000);
    b.add_trajectory(synthetic(0, 0, 5)).unwrap();
    b.add_trajectory(synthetic(0, 1, 15)).unwrap();
    let mut rng = seeded(5);
    let mut counts = vec![0usize; 20];
    let batches = 4000;
    for _ in 0..batches {
        for t in b.sample_rl_batch(10, &mut rng).unwrap() {
            let id = (t.reward / 1000.0).floor() as usize;
            let idx = t.reward as usize % 1000;
            counts[if id == 0 { idx } else { 5 + idx }] += 1;
        }
    }
    let stat = chi_square(&counts, (batches * 10) as f64 / 20.0);
    assert!(stat < chi_square_bound(19), "chi-square {stat}");
}

#[test]
fn same_task_negative_pair_avoids_excluded_trajectory() {
    let mut b = TaskReplayBuffer::new(0, 1000);
    b.add_trajectory(synthetic(0, 1, 10)).unwrap();
    let mut rng = seeded(6);
    assert!(b.sample_window_pair_excluding(4, Some(1), &mut rng).is_err());
    b.add_trajectory(synthetic(0, 2, 10)).unwrap();
    for _ in 0..50 {
        let (q, k) = b.sample_window_pair_excluding(4, Some(1), &mut rng).unwrap();
        assert_eq!((q.source_trajectory_id, k.source_trajectory_id), (2, 2));
    }
}

#[test]
fn wrong_task_is_rejected() {
    let mut b = TaskReplayBuffer::new(3, 100);
    assert!(matches!(b.add_trajectory(synthetic(2, 0, 4)), Err(Error::Usage(_))));
    assert!(b.is_empty());
}

#[derive(Debug, Clone)]
enum Op {
    Add(usize),
    Window(usize),
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![(1usize..30).prop_map(Op::Add), (1usize..12).prop_map(Op::Window)]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    /// Whole-trajectory FIFO eviction, checked against a plain deque model.
    #[test]
    fn matches_reference_model(capacity in 30usize..120, ops in prop::collection::vec(op(), 1..60)) {
        let mut buffer = TaskReplayBuffer::new(0, capacity);
        let mut model: VecDeque<(u64, usize)> = VecDeque::new();
        let mut rng = seeded(capacity as u64);
        let mut next_id = 0u64;
        for op in ops {
            match op {
                Op::Add(len) => {
                    buffer.add_trajectory(synthetic(0, next_id, len)).unwrap();
                    model.push_back((next_id, len));
                    while model.iter().map(|m| m.1).sum::<usize>() > capacity {
                        model.pop_front();
                    }
                    next_id += 1;
                }
                Op::Window(w) => {
                    let result = buffer.sample_window(w, &mut rng);
                    if model.iter().any(|m| m.1 >= w) {
                        let win = result.unwrap();
                        let len = model.iter().find(|m| m.0 == win.source_trajectory_id).map(|m| m.1);
                        prop_assert!(len.is_some_and(|l| l >= w && win.start_index + w <= l));
                    } else {
                        prop_assert!(result.is_err());
                    }
                }
            }
            let ids: Vec<u64> = buffer.trajectories().map(|t| t.trajectory_id).collect();
            let model_ids: Vec<u64> = model.iter().map(|m| m.0).collect();
            prop_assert_eq!(ids, model_ids);
            prop_assert_eq!(buffer.len(), model.iter().map(|m| m.1).sum::<usize>());
            prop_assert!(buffer.len() <= capacity);
            prop_assert!(buffer.trajectories().all(|t| t.is_chained()));
        }
    }
}
