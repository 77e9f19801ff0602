use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{CurveRecord, RewardMode, TrainConfig, TrainingCurve};
use crate::error::{Error, Result};
use crate::mdp::{
    expected_return, expected_return_under, kl_policies, occupancy, state_marginal,
    Kernel, SoftmaxPolicy, Step, TabularMdp, Trajectory,
};
use crate::model::collect_from_occupancy;
use crate::rng::{rng_from, sample_index, stream};
use crate::sar::{log_translated, RewardRange, SarConfig};

/// Where the offline policy-shift trainer draws its start states.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum ShiftStateSource {
    /// The closed-form behaviour occupancy.
    #[default]
    Exact,
    /// The empirical state law of a frozen behaviour dataset.
    Dataset { size: usize },
}

/// Score-function gradient of one episode with respect to the logits:
/// `Σ_t γ^t (G_t - b) ∇ log π(a_t|s_t)`, `G_t` the discounted reward-to-go.
pub fn episode_gradient(
    policy: &SoftmaxPolicy,
    steps: &[Step],
    gamma: f64,
    baseline: f64,
) -> Vec<f64> {
    let na = policy.n_actions();
    let mut grad = vec![0.0; policy.n_states() * na];
    let mut togo = vec![0.0; steps.len()];
    let mut acc = 0.0;
    for (t, st) in steps.iter().enumerate().rev() {
        acc = st.reward + gamma * acc;
        togo[t] = acc;
    }
    let mut disc = 1.0;
    for (t, st) in steps.iter().enumerate() {
        let adv = disc * (togo[t] - baseline);
        let probs = policy.probs(st.state);
        for b in 0..na {
            let ind = if b == st.action { 1.0 } else { 0.0 };
            grad[st.state * na + b] += adv * (ind - probs[b]);
        }
        disc *= gamma;
    }
    grad
}

fn sample_episode(
    kernel: &Kernel,
    start: &[f64],
    policy: &SoftmaxPolicy,
    shaped: &[f64],
    horizon: usize,
    seed: u64,
) -> Trajectory {
    let (ns, na) = (kernel.n_states(), kernel.n_actions());
    let mut rng = rng_from(seed, stream::PG_BATCH, 0);
    let mut s = sample_index(start, &mut rng);
    let mut steps = Vec::with_capacity(horizon);
    for _ in 0..horizon {
        let a = sample_index(policy.probs(s), &mut rng);
        let next = sample_index(kernel.row(s, a), &mut rng);
        steps.push(Step {
            state: s,
            action: a,
            reward: shaped[(s * na + a) * ns + next],
            next_state: next,
        });
        s = next;
    }
    Trajectory { steps }
}

/// Generic REINFORCE loop. `shape` maps the current policy to a reward table
/// over `(s,a,s')`; `record` reports the iterate used for each batch.
fn reinforce(
    kernel: &Kernel,
    start: &[f64],
    gamma: f64,
    init: SoftmaxPolicy,
    cfg: &TrainConfig,
    shape: impl Fn(&SoftmaxPolicy) -> Vec<f64>,
    record: impl Fn(usize, &SoftmaxPolicy, f64) -> Result<CurveRecord>,
) -> Result<(SoftmaxPolicy, TrainingCurve)> {
    cfg.validate()?;
    let mut policy = init;
    let mut baseline: Option<f64> = None;
    let mut curve = TrainingCurve::default();
    let n = cfg.rollouts_per_update;
    let dim = policy.logits().len();
    for it in 0..cfg.iterations {
        let shaped = shape(&policy);
        let episodes: Vec<Trajectory> = (0..n)
            .into_par_iter()
            .map(|j| {
                let seed = crate::rng::derive_seed(cfg.seed, it as u64, j as u64);
                sample_episode(kernel, start, &policy, &shaped, cfg.horizon, seed)
            })
            .collect();
        let returns: Vec<f64> = episodes.iter().map(|e| e.discounted_return(gamma)).collect();
        let total: f64 = returns.iter().sum();
        let batch_mean = total / n as f64;
        let steps: usize = episodes.iter().map(|e| e.horizon()).sum();
        let mean_sar = episodes
            .iter()
            .flat_map(|e| e.steps.iter().map(|s| s.reward))
            .sum::<f64>()
            / steps as f64;
        curve.records.push(record(it, &policy, mean_sar)?);

        let mut grad = vec![0.0; dim];
        for (i, ep) in episodes.iter().enumerate() {
            // Previous batches only, so the baseline is independent of the
            // episode it corrects; the first batch uses leave-one-out.
            let b = match baseline {
                Some(b) => b,
                None if n > 1 => (total - returns[i]) / (n - 1) as f64,
                None => 0.0,
            };
            let g = episode_gradient(&policy, &ep.steps, gamma, b);
            for (acc, x) in grad.iter_mut().zip(&g) {
                *acc += x / n as f64;
            }
            if cfg.entropy_coeff > 0.0 {
                let na = policy.n_actions();
                let mut disc = 1.0;
                for st in &ep.steps {
                    for (a, h) in policy.entropy_grad(st.state).iter().enumerate() {
                        grad[st.state * na + a] += cfg.entropy_coeff * disc * h / n as f64;
                    }
                    disc *= gamma;
                }
            }
        }
        baseline = Some(match baseline {
            None => batch_mean,
            Some(b) => b + cfg.baseline_rate * (batch_mean - b),
        });
        if cfg.learning_rate > 0.0 {
            policy.step(&grad, cfg.learning_rate)?;
        }
    }
    Ok((policy, curve))
}

fn raw_table(kernel: &Kernel, rewards: &[f64]) -> Vec<f64> {
    let ns = kernel.n_states();
    rewards
        .iter()
        .flat_map(|&r| std::iter::repeat(r).take(ns))
        .collect()
}

/// Train in `model` from the env start law and compare against the env.
pub fn train_pg_model_bias(
    env: &TabularMdp,
    model: &Kernel,
    mode: RewardMode,
    sar: &SarConfig,
    cfg: &TrainConfig,
) -> Result<(SoftmaxPolicy, TrainingCurve)> {
    if !model.same_shape(env.kernel()) {
        return Err(Error::Shape("model kernel does not match the environment".into()));
    }
    model.validate()?;
    sar.validate()?;
    let (ns, na) = (env.n_states(), env.n_actions());
    let shaped = match mode {
        RewardMode::Vanilla => raw_table(model, env.rewards()),
        RewardMode::Sar => {
            let range = RewardRange::of(env.rewards());
            let p = env.kernel();
            let mut t = Vec::with_capacity(ns * na * ns);
            for s in 0..ns {
                for a in 0..na {
                    let base = log_translated(env.reward(s, a), range, sar);
                    for next in 0..ns {
                        let lr = (p.prob(s, a, next).ln() - model.prob(s, a, next).ln())
                            .clamp(-sar.term_clamp, sar.term_clamp);
                        t.push(base + sar.alpha * lr);
                    }
                }
            }
            t
        }
    };
    let init = SoftmaxPolicy::uniform(ns, na);
    reinforce(
        model,
        env.mu0(),
        env.gamma(),
        init.clone(),
        cfg,
        |_| shaped.clone(),
        |it, pi, mean_sar| {
            Ok(CurveRecord {
                iteration: it,
                true_env_return: expected_return(env, pi)?,
                model_estimated_return: expected_return_under(
                    model,
                    env.rewards(),
                    env.mu0(),
                    env.gamma(),
                    pi,
                )?,
                kl_to_behavior: kl_policies(pi, &init, env.mu0())?,
                mean_sar,
            })
        },
    )
}

/// Offline objective `E_{s~d_b}[V^π(s)]`, optimised from `π_b`.
pub fn train_pg_policy_shift(
    env: &TabularMdp,
    pi_b: &SoftmaxPolicy,
    mode: RewardMode,
    sar: &SarConfig,
    source: ShiftStateSource,
    cfg: &TrainConfig,
) -> Result<(SoftmaxPolicy, TrainingCurve)> {
    env.check_policy(pi_b)?;
    sar.validate()?;
    let (ns, na) = (env.n_states(), env.n_actions());
    let d_b = state_marginal(&occupancy(env, pi_b, 1e-12)?, na);
    let start = match source {
        ShiftStateSource::Exact => d_b.clone(),
        ShiftStateSource::Dataset { size } => {
            if size == 0 {
                return Err(Error::EmptyDataset("behaviour dataset"));
            }
            let data = collect_from_occupancy(env, pi_b, size, cfg.seed)?;
            let mut w = vec![0.0; ns];
            for x in data.iter() {
                w[x.state] += 1.0 / size as f64;
            }
            let z: f64 = w.iter().sum();
            w.iter_mut().for_each(|x| *x /= z);
            w
        }
    };
    let offline = env.with_mu0(start.clone())?;
    let base = raw_table(env.kernel(), env.rewards());
    let beta = match mode {
        RewardMode::Vanilla => 0.0,
        RewardMode::Sar => sar.beta,
    };
    let clamp = sar.term_clamp;
    reinforce(
        env.kernel(),
        &start,
        env.gamma(),
        pi_b.clone(),
        cfg,
        |pi| {
            if beta == 0.0 {
                return base.clone();
            }
            let mut t = base.clone();
            for s in 0..ns {
                for a in 0..na {
                    let bonus =
                        beta * (pi.log_prob(s, a) - pi_b.log_prob(s, a)).clamp(-clamp, clamp);
                    for next in 0..ns {
                        t[(s * na + a) * ns + next] += bonus;
                    }
                }
            }
            t
        },
        |it, pi, mean_sar| {
            Ok(CurveRecord {
                iteration: it,
                true_env_return: expected_return(env, pi)?,
                model_estimated_return: expected_return(&offline, pi)?,
                kl_to_behavior: kl_policies(pi, pi_b, &d_b)?,
                mean_sar,
            })
        },
    )
}
