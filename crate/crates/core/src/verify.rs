//! Closed-form and gradient-check self tests.
//!
//! Each check compares an implementation against an independent reference:
//! hand-derived loss values, numeric integration, or central finite
//! differences. [`run`] executes all of them; the similarity used by the
//! loss checks is injectable so a broken similarity can be shown to fail.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::encoder::{
    kl_to_unit_prior, product_of_gaussians, ContextEmbedding, ContextEncoder, EncoderPair,
    GaussianFactor, PosteriorGaussian,
};
use crate::env::Transition;
use crate::linalg::norm;
use crate::math;
use crate::nn::{backward_tape, forward_tape, grad_check, Activation, MlpSpec, OutputActivation};
use crate::policy::{actor_loss, critic_loss_with_targets, critic_targets, Actor, Critics, RlBatch, SacHyperparameters};
use crate::rng::{seeded, standard_normal, standard_normal_vec, StreamRng};
use crate::tcl::{self, tcl_loss, tcl_loss_backward, QueryKeyBatch};

/// Finite-difference step used by every gradient check.
pub const FD_STEP: f64 = 1e-5;
/// Largest accepted relative gradient error.
pub const GRAD_TOLERANCE: f64 = 1e-4;

pub type SimilarityFn = fn(&PosteriorGaussian, &PosteriorGaussian) -> f64;

/// Replaceable pieces under test.
#[derive(Debug, Clone, Copy)]
pub struct VerifyHooks {
    pub similarity: SimilarityFn,
}

impl Default for VerifyHooks {
    fn default() -> Self {
        VerifyHooks {
            similarity: tcl::similarity,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> CheckResult {
    CheckResult { name, passed, detail }
}

/// Runs every check in a fixed order.
pub fn run(hooks: &VerifyHooks) -> Vec<CheckResult> {
    let mut out = Vec::new();

    let worst = [2usize, 3, 16]
        .iter()
        .map(|&n| math::abs(reference_loss(hooks, &identical_batch(n, 7), 1.0) - math::ln(n as f64)))
        .fold(0.0, f64::max);
    let single = reference_loss(hooks, &identical_batch(1, 7), 1.0);
    out.push(check(
        "loss of identical pairs is ln N",
        worst < 1e-9 && single == 0.0,
        format!("max |L - ln N| = {worst:.2e}, N=1 loss = {single}"),
    ));

    let worst = structured_cases()
        .iter()
        .map(|&(n, dist)| {
            let expected = math::ln(1.0 + (n as f64 - 1.0) * math::exp(-dist));
            math::abs(reference_loss(hooks, &structured_batch(n, dist), 1.0) - expected)
        })
        .fold(0.0, f64::max);
    out.push(check(
        "structured negatives give ln(1 + (N-1)e^-D)",
        worst < 1e-9,
        format!("max error {worst:.2e}"),
    ));

    let q = PosteriorGaussian {
        mean: vec![1.0, -2.0],
        std: vec![0.5, 1.5],
    };
    let k = PosteriorGaussian {
        mean: vec![0.0, 0.0],
        std: vec![1.0, 1.0],
    };
    let (s_qq, s_qk) = ((hooks.similarity)(&q, &q), (hooks.similarity)(&q, &k));
    out.push(check(
        "similarity is negative squared Wasserstein-2",
        s_qq == 0.0 && math::abs(s_qk + 5.5) < 1e-12,
        format!("s(q, q) = {s_qq}, s(q, k) = {s_qk} (expected -5.5)"),
    ));

    let mut rng = seeded(11);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = rng.random_range(2..10);
        let batch = random_batch(n, 4, 3.0, &mut rng);
        let t = rng.random_range(0.1..2.0);
        let lib = tcl_loss(&batch, t).map(|r| r.loss).unwrap_or(f64::NAN);
        worst = worst.max(math::abs(lib - reference_loss(hooks, &batch, t)));
    }
    out.push(check(
        "library loss matches cross-entropy over similarities",
        worst < 1e-10,
        format!("max difference {worst:.2e}"),
    ));

    let err = shift_invariance_error(50, 12);
    out.push(check(
        "max shift leaves the loss unchanged",
        err < 1e-12,
        format!("max difference {err:.2e}"),
    ));

    let err = permutation_equivariance_error(13);
    out.push(check(
        "loss is invariant to permuting aligned pairs",
        err < 1e-12,
        format!("max difference {err:.2e}"),
    ));

    let (mean_err, var_err) = pog_grid_error(100, 14);
    out.push(check(
        "product of Gaussians matches numeric integration",
        mean_err < 1e-6 && var_err < 1e-6,
        format!("max mean error {mean_err:.2e}, max variance error {var_err:.2e}"),
    ));

    let err = kl_integration_error(20, 15);
    out.push(check(
        "KL to unit prior matches numeric integration",
        err < 1e-6,
        format!("max error {err:.2e}"),
    ));

    let err = [0.9, 0.995]
        .iter()
        .map(|&m| ema_decay_error(m, 50, 16))
        .fold(0.0, f64::max);
    out.push(check(
        "key distance decays as m^k",
        err < 1e-9,
        format!("max relative error {err:.2e}"),
    ));

    for (name, f) in [
        ("MLP gradient matches finite differences", mlp_grad_error as fn(u64, usize) -> f64),
        ("contrastive path gradient matches finite differences", tcl_path_grad_error),
        ("critic gradient through z matches finite differences", critic_grad_error),
        ("actor gradient matches finite differences", actor_grad_error),
    ] {
        let err = f(17, 30);
        out.push(check(
            name,
            err < GRAD_TOLERANCE,
            format!("max relative error {err:.2e} over 30 probes"),
        ));
    }
    out
}

/// Cross-entropy with diagonal labels over `similarity / temperature`,
/// computed with a plain log-sum-exp and no shared code with the library
/// loss.
pub fn reference_loss(hooks: &VerifyHooks, batch: &QueryKeyBatch, temperature: f64) -> f64 {
    let n = batch.len();
    let mut total = 0.0;
    for i in 0..n {
        let scores: Vec<f64> = batch
            .keys
            .iter()
            .map(|k| (hooks.similarity)(&batch.queries[i], k) / temperature)
            .collect();
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + math::ln(scores.iter().map(|s| math::exp(s - max)).sum::<f64>());
        total += lse - scores[i];
    }
    total / n as f64
}

fn identical_batch(n: usize, dim: usize) -> QueryKeyBatch {
    let g = PosteriorGaussian {
        mean: (0..dim).map(|j| 0.1 * j as f64 - 0.2).collect(),
        std: vec![0.7; dim],
    };
    QueryKeyBatch {
        queries: vec![g.clone(); n],
        keys: vec![g; n],
    }
}

fn structured_cases() -> [(usize, f64); 4] {
    [(2, 0.5), (3, 1.0), (16, 2.0), (5, 0.1)]
}

/// `q_i = k_i`, with every cross pair at squared distance `dist`: means are
/// scaled basis vectors and stds equal.
pub fn structured_batch(n: usize, dist: f64) -> QueryKeyBatch {
    let scale = math::sqrt(dist / 2.0);
    let gs: Vec<PosteriorGaussian> = (0..n)
        .map(|i| {
            let mut mean = vec![0.0; n];
            mean[i] = scale;
            PosteriorGaussian {
                mean,
                std: vec![0.3; n],
            }
        })
        .collect();
    QueryKeyBatch {
        queries: gs.clone(),
        keys: gs,
    }
}

pub fn random_batch<R: Rng + ?Sized>(n: usize, dim: usize, spread: f64, rng: &mut R) -> QueryKeyBatch {
    let mut g = || PosteriorGaussian {
        mean: (0..dim).map(|_| spread * standard_normal(rng)).collect(),
        std: (0..dim).map(|_| rng.random_range(0.05..2.0)).collect(),
    };
    let queries: Vec<PosteriorGaussian> = (0..n).map(|_| g()).collect();
    let keys = (0..n).map(|_| g()).collect();
    QueryKeyBatch { queries, keys }
}

/// Largest gap between the library loss and the same cross-entropy computed
/// without any max shift, over random batches.
pub fn shift_invariance_error(trials: usize, seed: u64) -> f64 {
    let mut rng = seeded(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let n = rng.random_range(1..12);
        let batch = random_batch(n, 5, 0.5, &mut rng);
        let t = rng.random_range(0.5..2.0);
        let mut unshifted = 0.0;
        for i in 0..n {
            let scores: Vec<f64> = batch
                .keys
                .iter()
                .map(|k| tcl::similarity(&batch.queries[i], k) / t)
                .collect();
            let total: f64 = scores.iter().map(|&s| math::exp(s)).sum();
            unshifted += math::ln(total) - scores[i];
        }
        unshifted /= n as f64;
        let lib = tcl_loss(&batch, t).map(|r| r.loss).unwrap_or(f64::NAN);
        worst = worst.max(math::abs(lib - unshifted));
    }
    worst
}

/// Largest loss change when queries and keys are permuted together.
pub fn permutation_equivariance_error(seed: u64) -> f64 {
    let mut rng = seeded(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let n = rng.random_range(2..10);
        let batch = random_batch(n, 3, 1.0, &mut rng);
        let mut perm: Vec<usize> = (0..n).collect();
        rand::seq::SliceRandom::shuffle(&mut perm[..], &mut rng);
        let permuted = QueryKeyBatch {
            queries: perm.iter().map(|&p| batch.queries[p].clone()).collect(),
            keys: perm.iter().map(|&p| batch.keys[p].clone()).collect(),
        };
        let a = tcl_loss(&batch, 1.0).map(|r| r.loss).unwrap_or(f64::NAN);
        let b = tcl_loss(&permuted, 1.0).map(|r| r.loss).unwrap_or(f64::NAN);
        worst = worst.max(math::abs(a - b));
    }
    worst
}

/// Grid-normalized moments of a 1-D density given by its log on a grid.
fn grid_moments(lo: f64, hi: f64, points: usize, log_density: impl Fn(f64) -> f64) -> (f64, f64) {
    let h = (hi - lo) / (points - 1) as f64;
    let xs: Vec<f64> = (0..points).map(|i| lo + h * i as f64).collect();
    let logs: Vec<f64> = xs.iter().map(|&x| log_density(x)).collect();
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logs.iter().map(|l| math::exp(l - max)).collect();
    let z: f64 = w.iter().sum();
    let mean = xs.iter().zip(&w).map(|(x, w)| x * w).sum::<f64>() / z;
    let var = xs.iter().zip(&w).map(|(x, w)| (x - mean) * (x - mean) * w).sum::<f64>() / z;
    (mean, var)
}

/// Largest mean and variance errors of the closed-form product against
/// grid integration of the product density, over random 1-D factor sets.
pub fn pog_grid_error(sets: usize, seed: u64) -> (f64, f64) {
    let mut rng = seeded(seed);
    let (mut mean_err, mut var_err): (f64, f64) = (0.0, 0.0);
    for _ in 0..sets {
        let k = rng.random_range(1..6);
        let factors: Vec<GaussianFactor> = (0..k)
            .map(|_| GaussianFactor {
                mean: vec![rng.random_range(-3.0..3.0)],
                std: vec![rng.random_range(0.2..2.0)],
            })
            .collect();
        let lo = factors.iter().map(|f| f.mean[0] - 12.0 * f.std[0]).fold(f64::INFINITY, f64::min);
        let hi = factors.iter().map(|f| f.mean[0] + 12.0 * f.std[0]).fold(f64::NEG_INFINITY, f64::max);
        let (m, v) = grid_moments(lo, hi, 40_001, |x| {
            factors
                .iter()
                .map(|f| -0.5 * (x - f.mean[0]) * (x - f.mean[0]) / (f.std[0] * f.std[0]))
                .sum()
        });
        let Ok(p) = product_of_gaussians(&factors) else {
            return (f64::INFINITY, f64::INFINITY);
        };
        mean_err = mean_err.max(math::abs(p.mean[0] - m));
        var_err = var_err.max(math::abs(p.std[0] * p.std[0] - v));
    }
    (mean_err, var_err)
}

/// Largest error of the closed-form KL against a per-dimension Riemann sum
/// of `q log(q / p)`.
pub fn kl_integration_error(trials: usize, seed: u64) -> f64 {
    let mut rng = seeded(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let d = rng.random_range(1..4);
        let post = PosteriorGaussian {
            mean: (0..d).map(|_| rng.random_range(-2.0..2.0)).collect(),
            std: (0..d).map(|_| rng.random_range(0.2..2.5)).collect(),
        };
        let mut numeric = 0.0;
        for (&m, &s) in post.mean.iter().zip(&post.std) {
            let (lo, hi, n) = (m - 14.0 * s, m + 14.0 * s, 40_001);
            let h = (hi - lo) / (n - 1) as f64;
            for i in 0..n {
                let x = lo + h * i as f64;
                let log_q = -0.5 * (x - m) * (x - m) / (s * s) - math::ln(s) - 0.5 * math::LN_2PI;
                let log_p = -0.5 * x * x - 0.5 * math::LN_2PI;
                numeric += math::exp(log_q) * (log_q - log_p) * h;
            }
        }
        worst = worst.max(math::abs(numeric - kl_to_unit_prior(&post)));
    }
    worst
}

/// Largest relative deviation of `||key - query||` from `m^k` times its
/// initial value over `steps` EMA updates with a frozen query.
pub fn ema_decay_error(momentum: f64, steps: i32, seed: u64) -> f64 {
    let mut rng = seeded(seed);
    let Ok(enc) = ContextEncoder::new(7, &[6], 2) else {
        return f64::INFINITY;
    };
    let mut pair = EncoderPair::new(enc.clone(), &mut rng);
    pair.key_params = enc.spec.init_params(&mut rng);
    let gap = |p: &EncoderPair| {
        let diff: Vec<f64> = p
            .key_params
            .values()
            .iter()
            .zip(p.query_params.values())
            .map(|(k, q)| k - q)
            .collect();
        norm(&diff)
    };
    let initial = gap(&pair);
    let mut worst: f64 = 0.0;
    for k in 1..=steps {
        if pair.ema_update(momentum).is_err() {
            return f64::INFINITY;
        }
        let expected = math::powi(momentum, k) * initial;
        worst = worst.max(math::abs(gap(&pair) - expected) / initial);
    }
    worst
}

/// Random transitions of the given shape.
pub fn random_transitions<R: Rng + ?Sized>(
    n: usize,
    state_dim: usize,
    action_dim: usize,
    rng: &mut R,
) -> Vec<Transition> {
    (0..n)
        .map(|_| Transition {
            state: standard_normal_vec(rng, state_dim),
            action: (0..action_dim).map(|_| rng.random_range(-0.95..0.95)).collect(),
            reward: standard_normal(rng),
            next_state: standard_normal_vec(rng, state_dim),
        })
        .collect()
}

/// Squared-output loss through a 3-layer tanh MLP, all parameters.
pub fn mlp_grad_error(seed: u64, probes: usize) -> f64 {
    let mut rng = seeded(seed);
    let Ok(spec) = MlpSpec::new(vec![4, 6, 5, 3], Activation::Tanh, OutputActivation::Softplus) else {
        return f64::INFINITY;
    };
    let params = spec.init_params(&mut rng);
    let input = standard_normal_vec(&mut rng, 4);
    let f = |p: &[f64]| {
        let tape = forward_tape(&spec, p, &input);
        let out = tape.output();
        let loss = out.iter().map(|y| y * y).sum::<f64>();
        let cot: Vec<f64> = out.iter().map(|y| 2.0 * y).collect();
        let mut g = vec![0.0; p.len()];
        backward_tape(&spec, p, &tape, &cot, &mut g);
        (loss, g)
    };
    grad_check(f, params.values(), probes, FD_STEP, &mut rng)
}

const STATE_DIM: usize = 4;
const ACTION_DIM: usize = 2;
const CONTEXT_DIM: usize = 3;

fn transition_width() -> usize {
    2 * STATE_DIM + ACTION_DIM + 1
}

/// Window -> per-transition factors -> product posterior -> contrastive
/// loss, differentiated with respect to the query encoder parameters. Keys
/// come from a separate, detached parameter vector.
pub fn tcl_path_grad_error(seed: u64, probes: usize) -> f64 {
    let mut rng = seeded(seed);
    let Ok(enc) = ContextEncoder::new(transition_width(), &[8, 8], CONTEXT_DIM) else {
        return f64::INFINITY;
    };
    let pair = EncoderPair {
        query_params: enc.spec.init_params(&mut rng),
        key_params: enc.spec.init_params(&mut rng),
        encoder: enc.clone(),
    };
    let n = 4;
    let windows: Vec<Vec<Transition>> =
        (0..n).map(|_| random_transitions(5, STATE_DIM, ACTION_DIM, &mut rng)).collect();
    let keys: Vec<PosteriorGaussian> = windows
        .iter()
        .map(|w| enc.posterior(&pair.key_params, w).expect("valid window"))
        .collect();
    let temperature = 0.7;
    let mut params = pair.query_params.clone();
    let f = |p: &[f64]| {
        params.values_mut().copy_from_slice(p);
        let encodings: Vec<_> = windows
            .iter()
            .map(|w| enc.encode(&params, w).expect("valid window"))
            .collect();
        let batch = QueryKeyBatch {
            queries: encodings.iter().map(|e| e.posterior.clone()).collect(),
            keys: keys.clone(),
        };
        let loss = tcl_loss(&batch, temperature).map(|r| r.loss).unwrap_or(f64::NAN);
        let mut g = vec![0.0; p.len()];
        if let Ok(tg) = tcl_loss_backward(&batch, temperature, 1.0) {
            for (i, e) in encodings.iter().enumerate() {
                enc.backward(&params, e, &tg.query_mean[i], &tg.query_std[i], &mut g);
            }
        }
        (loss, g)
    };
    grad_check(f, pair.query_params.values(), probes, FD_STEP, &mut rng)
}

fn sac_setup(rng: &mut StreamRng) -> (Actor, Critics, Vec<Transition>) {
    let actor = Actor::new(STATE_DIM, ACTION_DIM, CONTEXT_DIM, &[8, 8], rng).expect("valid sizes");
    let mut critics = Critics::new(STATE_DIM, ACTION_DIM, CONTEXT_DIM, &[8, 8], rng).expect("valid sizes");
    critics.q1_target = critics.spec.init_params(rng);
    critics.q2_target = critics.spec.init_params(rng);
    let transitions = random_transitions(6, STATE_DIM, ACTION_DIM, rng);
    (actor, critics, transitions)
}

const HYPER: SacHyperparameters = SacHyperparameters {
    discount: 0.9,
    entropy_weight: 0.2,
    reward_scale: 5.0,
};

/// Critic loss as a function of `[encoder params, q1 params]`, with `z`
/// reparameterized from the encoder posterior of a window under fixed
/// noise and the Bellman targets held constant. Checks the encoder-through-z
/// flow and the critic weights at once.
pub fn critic_grad_error(seed: u64, probes: usize) -> f64 {
    let mut rng = seeded(seed);
    let (actor, critics, transitions) = sac_setup(&mut rng);
    let Ok(enc) = ContextEncoder::new(transition_width(), &[8], CONTEXT_DIM) else {
        return f64::INFINITY;
    };
    let enc_params = enc.spec.init_params(&mut rng);
    let window = random_transitions(4, STATE_DIM, ACTION_DIM, &mut rng);
    let noise = standard_normal_vec(&mut rng, CONTEXT_DIM);
    let ne = enc_params.len();
    let mut start = enc_params.values().to_vec();
    start.extend_from_slice(critics.q1.values());

    let context = |ep: &crate::nn::ParamVector| {
        let encoding = enc.encode(ep, &window).expect("valid window");
        let post = encoding.posterior.clone();
        let z = post.mean.iter().zip(&post.std).zip(&noise).map(|((m, s), e)| m + s * e).collect();
        let embedding = ContextEmbedding {
            z,
            posterior: post,
            noise: noise.clone(),
        };
        (encoding, embedding)
    };
    // Targets are constants of the loss, computed once at the start point.
    let batch0 = RlBatch {
        transitions: transitions.clone(),
        context: context(&enc_params).1,
        task_id: 0,
    };
    let Ok(targets) = critic_targets(&critics, &actor, &batch0, &HYPER, &mut seeded(seed ^ 0x5eed)) else {
        return f64::INFINITY;
    };

    let mut ep = enc_params.clone();
    let mut cr = critics.clone();
    let f = |p: &[f64]| {
        ep.values_mut().copy_from_slice(&p[..ne]);
        cr.q1.values_mut().copy_from_slice(&p[ne..]);
        let (encoding, embedding) = context(&ep);
        let batch = RlBatch {
            transitions: transitions.clone(),
            context: embedding,
            task_id: 0,
        };
        let Ok(out) = critic_loss_with_targets(&cr, &batch, targets.clone()) else {
            return (f64::NAN, vec![0.0; p.len()]);
        };
        let d_std: Vec<f64> = out.grad_z.iter().zip(&noise).map(|(g, e)| g * e).collect();
        let mut g = vec![0.0; ne];
        enc.backward(&ep, &encoding, &out.grad_z, &d_std, &mut g);
        g.extend_from_slice(&out.grad_q1);
        (out.loss, g)
    };
    grad_check(f, &start, probes, FD_STEP, &mut rng)
}

/// Actor loss with respect to the actor parameters under fixed noise.
pub fn actor_grad_error(seed: u64, probes: usize) -> f64 {
    let mut rng = seeded(seed);
    let (actor, critics, transitions) = sac_setup(&mut rng);
    let batch = RlBatch {
        transitions,
        context: ContextEmbedding::fixed(standard_normal_vec(&mut rng, CONTEXT_DIM)),
        task_id: 0,
    };
    let mut a = actor.clone();
    let f = |p: &[f64]| {
        a.params.values_mut().copy_from_slice(p);
        match actor_loss(&a, &critics, &batch, HYPER.entropy_weight, &mut seeded(seed ^ 0xac7)) {
            Ok(out) => (out.loss, out.grad_actor),
            Err(_) => (f64::NAN, vec![0.0; p.len()]),
        }
    };
    grad_check(f, actor.params.values(), probes, FD_STEP, &mut rng)
}
