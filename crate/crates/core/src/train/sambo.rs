use rand::Rng;

use super::{CurveRecord, TrainConfig, TrainingCurve};
use crate::classifier::{ActionClassifier, TransitionClassifier};
use crate::error::{Error, Result};
use crate::mdp::{expected_return, expected_return_under, kl_policies, SoftmaxPolicy, TabularMdp};
use crate::model::{
    fit_ensemble, rollout, BufferTag, ReplayBuffer, TabularModelEnsemble, TransitionSample,
};
use crate::rng::{derive_seed, rng_from, stream};
use crate::sar::{practical_sar_classifier, RewardRange, SarConfig};

#[derive(Debug, Clone)]
pub struct SamboOutcome {
    pub policy: SoftmaxPolicy,
    pub curve: TrainingCurve,
    pub critic: Vec<f64>,
    pub transition_classifier: TransitionClassifier,
    pub action_classifier: ActionClassifier,
    /// Batch elements drawn from the real data and from model data.
    pub env_samples_used: usize,
    pub model_samples_used: usize,
}

/// Smoothed empirical behaviour policy and state law of a dataset.
fn empirical_behavior(data: &ReplayBuffer, ns: usize, na: usize) -> (SoftmaxPolicy, Vec<f64>) {
    let counts = data.pair_counts(ns, na);
    let logits = counts.iter().map(|c| (c + 1.0).ln()).collect();
    let mut w: Vec<f64> = counts.chunks(na).map(|r| r.iter().sum()).collect();
    let z: f64 = w.iter().sum();
    w.iter_mut().for_each(|x| *x /= z);
    (
        SoftmaxPolicy::new(ns, na, logits).expect("finite logits"),
        w,
    )
}

/// Fit the ensemble on `d_env`, then run the loop.
pub fn sambo_train(
    d_env: &ReplayBuffer,
    env: &TabularMdp,
    sar: &SarConfig,
    cfg: &TrainConfig,
) -> Result<SamboOutcome> {
    if d_env.is_empty() {
        return Err(Error::EmptyDataset("environment dataset"));
    }
    cfg.validate()?;
    let ensemble = fit_ensemble(
        d_env,
        env.n_states(),
        env.n_actions(),
        cfg.ensemble_members,
        cfg.smoothing,
        derive_seed(cfg.seed, stream::BOOTSTRAP, 0),
    )?;
    sambo_train_with_ensemble(d_env, &ensemble, env, sar, cfg)
}

/// The loop proper, for a prebuilt ensemble.
pub fn sambo_train_with_ensemble(
    d_env: &ReplayBuffer,
    ensemble: &TabularModelEnsemble,
    env: &TabularMdp,
    sar: &SarConfig,
    cfg: &TrainConfig,
) -> Result<SamboOutcome> {
    if d_env.is_empty() {
        return Err(Error::EmptyDataset("environment dataset"));
    }
    cfg.validate()?;
    sar.validate()?;
    let (ns, na) = (env.n_states(), env.n_actions());
    if ensemble.members()[0].n_states() != ns || ensemble.members()[0].n_actions() != na {
        return Err(Error::Shape("ensemble does not match the environment".into()));
    }
    let gamma = env.gamma();
    let tau = cfg.entropy_coeff;
    let range = RewardRange::of(env.rewards());
    let mean_model = ensemble.mean_kernel();
    let (pi_b_hat, w_b) = empirical_behavior(d_env, ns, na);

    let mut policy = SoftmaxPolicy::uniform(ns, na);
    let mut q = vec![0.0; ns * na];
    let mut d_m = ReplayBuffer::new(BufferTag::Model, cfg.model_capacity);
    let mut d_pi = ReplayBuffer::new(BufferTag::Policy, None);
    let mut c_phi = TransitionClassifier::neutral(ns, na, cfg.classifier.logit_clamp);
    let mut c_psi = ActionClassifier::neutral(ns, na, cfg.classifier.logit_clamp);
    let mut mix_rng = rng_from(cfg.seed, stream::MIXING, 0);
    let mut curve = TrainingCurve::default();
    let (mut env_used, mut model_used) = (0usize, 0usize);

    for it in 0..cfg.iterations {
        d_pi.clear();
        let fresh = rollout(
            ensemble,
            &policy,
            env.rewards(),
            d_env,
            cfg.rollout_h,
            cfg.rollout_b,
            derive_seed(cfg.seed, stream::ROLLOUT, it as u64),
        )?;
        d_m.extend(fresh.iter().copied());
        d_pi.extend(fresh);

        let cls_seed = derive_seed(cfg.seed, stream::CLASSIFIER, it as u64);
        c_phi = c_phi.train(d_env, &d_m, &cfg.classifier, cls_seed)?.0;
        c_psi = c_psi.train(&d_pi, d_env, &cfg.classifier, cls_seed)?.0;

        let mut sar_sum = 0.0;
        let mut sar_n = 0usize;
        for _ in 0..cfg.policy_updates {
            let batch: Vec<TransitionSample> = (0..cfg.batch_size)
                .map(|_| {
                    let real = d_m.is_empty() || mix_rng.gen::<f64>() < cfg.real_ratio;
                    let src = if real { d_env } else { &d_m };
                    *src.sample(&mut mix_rng).expect("non-empty buffer")
                })
                .collect();
            let (mut tgt_sum, mut tgt_n) = (vec![0.0; ns * na], vec![0.0; ns * na]);
            for x in &batch {
                if x.source == crate::model::Source::Env {
                    env_used += 1;
                } else {
                    model_used += 1;
                }
                let r = practical_sar_classifier(x, range, &c_phi, &c_psi, sar);
                sar_sum += r;
                sar_n += 1;
                let soft_next: f64 = (0..na)
                    .map(|b| {
                        policy.prob(x.next_state, b)
                            * (q[x.next_state * na + b] - tau * policy.log_prob(x.next_state, b))
                    })
                    .sum();
                let cell = x.state * na + x.action;
                tgt_sum[cell] += r + gamma * soft_next;
                tgt_n[cell] += 1.0;
            }
            for c in 0..ns * na {
                if tgt_n[c] > 0.0 {
                    q[c] += cfg.critic_lr * (tgt_sum[c] / tgt_n[c] - q[c]);
                }
            }
            // Soft policy improvement against the critic on batch states.
            let mut grad = vec![0.0; ns * na];
            for x in &batch {
                let s = x.state;
                let soft: Vec<f64> = (0..na)
                    .map(|b| q[s * na + b] - tau * policy.log_prob(s, b))
                    .collect();
                let mean: f64 = (0..na).map(|b| policy.prob(s, b) * soft[b]).sum();
                for b in 0..na {
                    grad[s * na + b] += policy.prob(s, b) * (soft[b] - mean) / batch.len() as f64;
                }
            }
            policy.step(&grad, cfg.learning_rate)?;
        }

        curve.records.push(CurveRecord {
            iteration: it,
            true_env_return: expected_return(env, &policy)?,
            model_estimated_return: expected_return_under(
                &mean_model,
                env.rewards(),
                env.mu0(),
                gamma,
                &policy,
            )?,
            kl_to_behavior: kl_policies(&policy, &pi_b_hat, &w_b)?,
            mean_sar: sar_sum / sar_n as f64,
        });
    }

    Ok(SamboOutcome {
        policy,
        curve,
        critic: q,
        transition_classifier: c_phi,
        action_classifier: c_psi,
        env_samples_used: env_used,
        model_samples_used: model_used,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{build_grid, GridSpec};
    use crate::model::collect_from_occupancy;

    fn small() -> TrainConfig {
        TrainConfig {
            iterations: 5,
            policy_updates: 3,
            batch_size: 64,
            rollout_b: 10,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn empty_dataset_errors() {
        let env = build_grid(&GridSpec::default()).unwrap();
        let d = ReplayBuffer::new(BufferTag::Env, None);
        assert!(matches!(
            sambo_train(&d, &env, &SarConfig::default(), &small()),
            Err(Error::EmptyDataset(_))
        ));
    }

    #[test]
    fn all_real_batches_use_no_model_samples() {
        let env = build_grid(&GridSpec::default()).unwrap();
        let d = collect_from_occupancy(&env, &SoftmaxPolicy::uniform(5, 2), 500, 1).unwrap();
        let cfg = TrainConfig {
            real_ratio: 1.0,
            ..small()
        };
        let out = sambo_train(&d, &env, &SarConfig::default(), &cfg).unwrap();
        assert_eq!(out.model_samples_used, 0);
        assert_eq!(out.env_samples_used, 5 * 3 * 64);
        assert_eq!(out.curve.len(), 5);
    }
}
