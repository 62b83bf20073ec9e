//! The squashed-Gaussian log-density integrates to the sampling
//! distribution.

use tcl_core::policy::{policy_act, Actor};
use tcl_core::rng::{seeded, standard_normal_vec};

#[test]
fn log_prob_matches_sample_histogram() {
    let mut rng = seeded(31);
    let actor = Actor::new(2, 1, 2, &[8], &mut rng).unwrap();
    let state = [0.3, -0.4];
    let z = [0.5, 1.0];
    let draws = 200_000;
    let bins = 40;
    let mut counts = vec![0usize; bins];
    for _ in 0..draws {
        let a = policy_act(&actor, &state, &z, &mut rng, false).unwrap()[0];
        let b = (((a + 1.0) / 2.0) * bins as f64).floor().clamp(0.0, bins as f64 - 1.0) as usize;
        counts[b] += 1;
    }
    // Expected mass per bin by midpoint integration of exp(log_prob).
    let sub = 200;
    let mut chi = 0.0;
    let mut total_mass = 0.0;
    let mut dof = 0;
    for (b, &c) in counts.iter().enumerate() {
        let lo = -1.0 + 2.0 * b as f64 / bins as f64;
        let h = 2.0 / (bins * sub) as f64;
        let mass: f64 = (0..sub)
            .map(|k| {
                let a = lo + (k as f64 + 0.5) * h;
                actor.log_prob(&state, &z, &[a]).unwrap().exp() * h
            })
            .sum();
        total_mass += mass;
        let expected = mass * draws as f64;
        if expected > 5.0 {
            chi += (c as f64 - expected).powi(2) / expected;
            dof += 1;
        }
    }
    assert!((total_mass - 1.0).abs() < 1e-3, "density integrates to {total_mass}");
    // Generous bound: 0.1% tail of chi-square with `dof` degrees of freedom.
    let k = dof as f64;
    let bound = k * (1.0 - 2.0 / (9.0 * k) + 3.09 * (2.0 / (9.0 * k)).sqrt()).powi(3);
    assert!(chi < bound, "chi-square {chi} over {dof} bins");
}

#[test]
fn sampled_log_prob_agrees_with_log_prob() {
    let mut rng = seeded(32);
    let actor = Actor::new(3, 2, 2, &[8, 8], &mut rng).unwrap();
    for _ in 0..100 {
        let s = standard_normal_vec(&mut rng, 3);
        let z = standard_normal_vec(&mut rng, 2);
        let noise = standard_normal_vec(&mut rng, 2);
        let sample = actor.sample_with_noise(&s, &z, noise).unwrap();
        if sample.action.iter().any(|a| a.abs() > 0.999_999) {
            continue;
        }
        let lp = actor.log_prob(&s, &z, &sample.action).unwrap();
        assert!((lp - sample.log_prob).abs() < 1e-6 * (1.0 + lp.abs()), "{lp} vs {}", sample.log_prob);
    }
}

#[test]
fn extreme_pre_activations_stay_finite() {
    let mut rng = seeded(33);
    let actor = Actor::new(1, 1, 1, &[4], &mut rng).unwrap();
    for u in [-40.0, -20.0, 0.0, 20.0, 40.0] {
        let s = actor.sample_with_noise(&[0.0], &[0.0], vec![u]).unwrap();
        assert!(s.log_prob.is_finite(), "noise {u} gives {}", s.log_prob);
    }
}
