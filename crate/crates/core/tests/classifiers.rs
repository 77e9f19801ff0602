use approx::assert_abs_diff_eq;
use rand::distributions::{Distribution, WeightedIndex};
use sambo::classifier::{
    closed_form_action_oracle, closed_form_transition_oracle, train_action_classifier,
    train_transition_classifier, ClassifierTrainConfig,
};
use sambo::mdp::{Kernel, SoftmaxPolicy};
use sambo::model::{BufferTag, ReplayBuffer, Source, TransitionSample};
use sambo::rng::rng_from;
use sambo::sar::{practical_sar_classifier, practical_sar_exact, Densities, RewardRange, SarConfig};

fn sample(s: usize, a: usize, next: usize, source: Source) -> TransitionSample {
    TransitionSample {
        state: s,
        action: a,
        reward: 0.1 * (s + a) as f64,
        next_state: next,
        source,
    }
}

/// `per_cell` draws of `s'` from `kernel` at every `(s, a)`.
fn draws(kernel: &Kernel, per_cell: usize, source: Source, seed: u64) -> ReplayBuffer {
    let mut rng = rng_from(seed, 0, 0);
    let mut out = Vec::new();
    for s in 0..kernel.n_states() {
        for a in 0..kernel.n_actions() {
            let dist = WeightedIndex::new(kernel.row(s, a)).unwrap();
            for _ in 0..per_cell {
                out.push(sample(s, a, dist.sample(&mut rng), source));
            }
        }
    }
    let tag = match source {
        Source::Env => BufferTag::Env,
        Source::Model => BufferTag::Model,
    };
    ReplayBuffer::from_samples(tag, out)
}

/// Every transition cell `count` times.
fn tiled(ns: usize, na: usize, count: usize, source: Source) -> Vec<TransitionSample> {
    let mut out = Vec::new();
    for s in 0..ns {
        for a in 0..na {
            for t in 0..ns {
                out.extend(std::iter::repeat(sample(s, a, t, source)).take(count));
            }
        }
    }
    out
}

fn cfg() -> ClassifierTrainConfig {
    ClassifierTrainConfig::default()
}

#[test]
fn identical_data_is_indistinguishable() {
    let k = Kernel::new(2, 2, vec![0.3, 0.7, 0.5, 0.5, 0.9, 0.1, 0.2, 0.8]).unwrap();
    let env = draws(&k, 2000, Source::Env, 1);
    let model = ReplayBuffer::from_samples(BufferTag::Model, env.iter().copied().collect());
    let (c, _) = train_transition_classifier(&env, &model, 2, 2, &cfg(), 0).unwrap();
    for s in 0..2 {
        for a in 0..2 {
            for t in 0..2 {
                assert_abs_diff_eq!(c.prob(s, a, t), 0.5, epsilon = 0.02);
            }
        }
    }
}

#[test]
fn size_imbalance_shows_up_as_log_ratio() {
    let env = ReplayBuffer::from_samples(BufferTag::Env, tiled(3, 2, 1000, Source::Env));
    let model = ReplayBuffer::from_samples(BufferTag::Model, tiled(3, 2, 500, Source::Model));
    let (c, report) = train_transition_classifier(&env, &model, 3, 2, &cfg(), 2).unwrap();
    assert_abs_diff_eq!(report.size_log_ratio, 2f64.ln(), epsilon = 1e-12);
    for &l in c.logits() {
        assert_abs_diff_eq!(l, 2f64.ln(), epsilon = 0.01);
    }
}

#[test]
fn single_cell_density_ratio_is_recovered() {
    let mut env_s = tiled(2, 2, 400, Source::Env);
    let boosted = sample(1, 0, 1, Source::Env);
    env_s.extend(std::iter::repeat(boosted).take(800));
    let env = ReplayBuffer::from_samples(BufferTag::Env, env_s);
    let model = ReplayBuffer::from_samples(BufferTag::Model, tiled(2, 2, 400, Source::Model));
    let (c, _) = train_transition_classifier(&env, &model, 2, 2, &cfg(), 3).unwrap();
    assert_abs_diff_eq!(c.log_odds(1, 0, 1), 3f64.ln(), epsilon = 0.01);
    assert_abs_diff_eq!(c.log_odds(0, 1, 0), 0.0, epsilon = 0.01);
}

#[test]
fn trained_classifiers_match_the_closed_form() {
    let p = Kernel::new(3, 2, vec![
        0.6, 0.3, 0.1, 0.2, 0.5, 0.3, //
        0.1, 0.1, 0.8, 0.5, 0.4, 0.1, //
        0.3, 0.3, 0.4, 0.1, 0.2, 0.7,
    ])
    .unwrap();
    let q = Kernel::new(3, 2, vec![
        0.4, 0.4, 0.2, 0.3, 0.3, 0.4, //
        0.2, 0.2, 0.6, 0.3, 0.5, 0.2, //
        0.5, 0.2, 0.3, 0.2, 0.2, 0.6,
    ])
    .unwrap();
    let env = draws(&p, 300, Source::Env, 4);
    let model = draws(&q, 500, Source::Model, 5);
    let (c, _) = train_transition_classifier(&env, &model, 3, 2, &cfg(), 6).unwrap();
    let o = closed_form_transition_oracle(&env, &model, 3, 2, cfg().logit_clamp).unwrap();
    for (x, y) in c.logits().iter().zip(o.logits()) {
        assert!((x - y).abs() < 0.05, "{x} vs {y}");
    }

    let (a, _) = train_action_classifier(&model, &env, 3, 2, &cfg(), 7).unwrap();
    let ao = closed_form_action_oracle(&model, &env, 3, 2, cfg().logit_clamp).unwrap();
    for (x, y) in a.logits().iter().zip(ao.logits()) {
        assert!((x - y).abs() < 0.05, "{x} vs {y}");
    }
}

#[test]
fn action_classifier_recovers_policy_ratio() {
    // π puts 0.8 on action 1 where the data policy was uniform.
    let mut pi_s = Vec::new();
    let mut env_s = Vec::new();
    for s in 0..2 {
        for _ in 0..4000 {
            pi_s.push(sample(s, 1, s, Source::Model));
            env_s.push(sample(s, 1, s, Source::Env));
            env_s.push(sample(s, 0, s, Source::Env));
        }
        for _ in 0..1000 {
            pi_s.push(sample(s, 0, s, Source::Model));
        }
    }
    let d_pi = ReplayBuffer::from_samples(BufferTag::Model, pi_s);
    let d_env = ReplayBuffer::from_samples(BufferTag::Env, env_s);
    let (c, rep) = train_action_classifier(&d_pi, &d_env, 2, 2, &cfg(), 8).unwrap();
    // same state distribution, so log-odds minus the size offset is log π/π_b
    assert_abs_diff_eq!(rep.size_log_ratio, (10_000f64 / 16_000.0).ln(), epsilon = 1e-12);
    let shift = rep.size_log_ratio;
    for s in 0..2 {
        assert_abs_diff_eq!(c.log_odds(s, 1) - shift, (0.8f64 / 0.5).ln(), epsilon = 0.02);
        assert_abs_diff_eq!(c.log_odds(s, 0) - shift, (0.2f64 / 0.5).ln(), epsilon = 0.02);
    }
}

#[test]
fn classifier_sar_is_exact_sar_plus_size_offset() {
    let p = Kernel::new(3, 2, vec![
        0.5, 0.3, 0.2, 0.2, 0.4, 0.4, //
        0.3, 0.3, 0.4, 0.5, 0.25, 0.25, //
        0.3, 0.4, 0.3, 0.2, 0.2, 0.6,
    ])
    .unwrap();
    let q = Kernel::new(3, 2, vec![
        0.3, 0.4, 0.3, 0.3, 0.3, 0.4, //
        0.2, 0.4, 0.4, 0.4, 0.4, 0.2, //
        0.4, 0.3, 0.3, 0.3, 0.3, 0.4,
    ])
    .unwrap();
    let env = draws(&p, 100_000, Source::Env, 10);
    let model = draws(&q, 50_000, Source::Model, 11);
    let (c_phi, rep) = train_transition_classifier(&env, &model, 3, 2, &cfg(), 12).unwrap();
    let c_psi = sambo::classifier::ActionClassifier::neutral(3, 2, 10.0);

    let pi = SoftmaxPolicy::uniform(3, 2);
    let dens = Densities { p: &p, q: &q, pi: &pi, pi_c: &pi };
    let rewards: Vec<f64> = (0..6).map(|i| 0.1 * i as f64).collect();
    let range = RewardRange::of(&rewards);
    let sar = SarConfig { alpha: 0.5, beta: 0.0, ..SarConfig::default() };
    let offset = sar.alpha * rep.size_log_ratio;
    assert_abs_diff_eq!(rep.size_log_ratio, 2f64.ln(), epsilon = 1e-12);
    for s in 0..3 {
        for a in 0..2 {
            for t in 0..3 {
                let x = sample(s, a, t, Source::Model);
                let got = practical_sar_classifier(&x, range, &c_phi, &c_psi, &sar);
                let want = practical_sar_exact(x.reward, range, s, a, t, &dens, &sar) + offset;
                assert!((got - want).abs() < 0.05 * sar.alpha, "({s},{a},{t}): {got} vs {want}");
            }
        }
    }
}
