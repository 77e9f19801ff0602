//! Shifts-aware rewards, shift weights, and the KL forms of their
//! expectations.

use serde::{Deserialize, Serialize};

use crate::classifier::{ActionClassifier, TransitionClassifier};
use crate::error::{Error, Result};
use crate::mdp::{Kernel, SoftmaxPolicy, Trajectory};
use crate::model::{Source, TransitionSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SarMode {
    Theoretical,
    PracticalExact,
    #[default]
    PracticalClassifier,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SarConfig {
    pub alpha: f64,
    pub beta: f64,
    /// Reward translation coefficient.
    pub c: f64,
    pub floor: f64,
    /// Bound on each log-ratio term before it is scaled by α or β.
    pub term_clamp: f64,
    pub mode: SarMode,
}

impl Default for SarConfig {
    fn default() -> Self {
        SarConfig {
            alpha: 0.01,
            beta: 0.01,
            c: -0.2,
            floor: 1e-8,
            term_clamp: 10.0,
            mode: SarMode::PracticalClassifier,
        }
    }
}

impl SarConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha >= 0.0 && self.beta >= 0.0) {
            return Err(Error::invalid("alpha and beta must be non-negative"));
        }
        if !(self.floor > 0.0) {
            return Err(Error::invalid("reward floor must be positive"));
        }
        if !(self.term_clamp > 0.0) {
            return Err(Error::invalid("term clamp must be positive"));
        }
        if !self.c.is_finite() {
            return Err(Error::invalid("translation coefficient must be finite"));
        }
        Ok(())
    }

    fn clamp_term(&self, x: f64) -> f64 {
        x.clamp(-self.term_clamp, self.term_clamp)
    }
}

/// Reward range used by the translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardRange {
    pub r_min: f64,
    pub r_max: f64,
}

impl RewardRange {
    pub fn of(rewards: &[f64]) -> Self {
        RewardRange {
            r_min: rewards.iter().cloned().fold(f64::INFINITY, f64::min),
            r_max: rewards.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        }
    }
}

/// `max(floor, r - c (r_max - r_min) + 1e-8)`.
pub fn translate_reward(r: f64, r_max: f64, r_min: f64, cfg: &SarConfig) -> f64 {
    (r - cfg.c * (r_max - r_min) + 1e-8).max(cfg.floor)
}

pub fn log_translated(r: f64, range: RewardRange, cfg: &SarConfig) -> f64 {
    translate_reward(r, range.r_max, range.r_min, cfg).ln()
}

/// The four densities a shift weight depends on: true dynamics `p`, data
/// dynamics `q`, target policy `pi` and data-collection policy `pi_c`.
#[derive(Debug, Clone, Copy)]
pub struct Densities<'a> {
    pub p: &'a Kernel,
    pub q: &'a Kernel,
    pub pi: &'a SoftmaxPolicy,
    pub pi_c: &'a SoftmaxPolicy,
}

impl Densities<'_> {
    /// `(log p/q, log π/π_c)` at one transition, `-inf`/`+inf` allowed.
    fn log_ratios(&self, s: usize, a: usize, next: usize) -> (f64, f64) {
        let p = self.p.prob(s, a, next);
        let q = self.q.prob(s, a, next);
        (
            p.ln() - q.ln(),
            self.pi.log_prob(s, a) - self.pi_c.log_prob(s, a),
        )
    }

    fn check_support(&self, step: usize, s: usize, a: usize, next: usize) -> Result<()> {
        let p = self.p.prob(s, a, next);
        let q = self.q.prob(s, a, next);
        if p == 0.0 || q == 0.0 {
            return Err(Error::SupportViolation {
                step,
                detail: format!("p={p}, q={q} at ({s},{a},{next})"),
            });
        }
        Ok(())
    }
}

/// `Π q/p · Π π_c/π` along a trajectory.
pub fn shift_weighting(traj: &Trajectory, dens: &Densities) -> Result<f64> {
    let mut log_w = 0.0;
    for (t, st) in traj.steps.iter().enumerate() {
        dens.check_support(t, st.state, st.action, st.next_state)?;
        let (lm, lp) = dens.log_ratios(st.state, st.action, st.next_state);
        log_w -= lm + lp;
    }
    Ok(log_w.exp())
}

/// `log r + (log p/q + log π/π_c) / ((1-γ) γ^t)` with `r` already
/// translated.
pub fn theoretical_sar(
    t: usize,
    s: usize,
    a: usize,
    next: usize,
    dens: &Densities,
    gamma: f64,
    translated_r: f64,
) -> Result<f64> {
    dens.check_support(t, s, a, next)?;
    let (lm, lp) = dens.log_ratios(s, a, next);
    let coef = 1.0 / ((1.0 - gamma) * gamma.powi(t as i32));
    Ok(translated_r.ln() + coef * (lm + lp))
}

/// `log r' + α clamp(log p/q) + β clamp(log π/π_c)`.
pub fn practical_sar_exact(
    r: f64,
    range: RewardRange,
    s: usize,
    a: usize,
    next: usize,
    dens: &Densities,
    cfg: &SarConfig,
) -> f64 {
    let (lm, lp) = dens.log_ratios(s, a, next);
    let mut out = log_translated(r, range, cfg);
    if cfg.alpha != 0.0 {
        out += cfg.alpha * cfg.clamp_term(lm);
    }
    if cfg.beta != 0.0 {
        out += cfg.beta * cfg.clamp_term(lp);
    }
    out
}

/// Classifier form: model samples carry only the transition term, env
/// samples only the action term.
pub fn practical_sar_classifier(
    sample: &TransitionSample,
    range: RewardRange,
    c_phi: &TransitionClassifier,
    c_psi: &ActionClassifier,
    cfg: &SarConfig,
) -> f64 {
    let base = log_translated(sample.reward, range, cfg);
    match sample.source {
        Source::Model => {
            base + cfg.alpha
                * cfg.clamp_term(c_phi.log_odds(sample.state, sample.action, sample.next_state))
        }
        Source::Env => base + cfg.beta * cfg.clamp_term(c_psi.log_odds(sample.state, sample.action)),
    }
}

/// `KL(a ‖ b)` between two rows; infinite when `b` misses mass of `a`.
pub fn kl_rows(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .filter(|(x, _)| **x > 0.0)
        .map(|(x, y)| if *y == 0.0 { f64::INFINITY } else { x * (x / y).ln() })
        .sum()
}

/// `E_{(s,a)~d}[log r' - α KL(q(·|s,a) ‖ p(·|s,a))]`.
pub fn expected_model_bias_objective(
    d_sa: &[f64],
    rewards: &[f64],
    p: &Kernel,
    q: &Kernel,
    cfg: &SarConfig,
) -> Result<f64> {
    let (ns, na) = (p.n_states(), p.n_actions());
    if d_sa.len() != ns * na || rewards.len() != ns * na || !p.same_shape(q) {
        return Err(Error::Shape("model-bias objective inputs disagree".into()));
    }
    let range = RewardRange::of(rewards);
    let mut total = 0.0;
    for s in 0..ns {
        for a in 0..na {
            let w = d_sa[s * na + a];
            if w == 0.0 {
                continue;
            }
            let kl = kl_rows(q.row(s, a), p.row(s, a));
            total += w * (log_translated(rewards[s * na + a], range, cfg) - cfg.alpha * kl);
        }
    }
    Ok(total)
}

/// `E_{s~d, a~π}[log r'] + β E_{s~d}[KL(π ‖ π_b)]`.
pub fn expected_policy_shift_objective(
    d_s: &[f64],
    rewards: &[f64],
    pi: &SoftmaxPolicy,
    pi_b: &SoftmaxPolicy,
    cfg: &SarConfig,
) -> Result<f64> {
    let (ns, na) = (pi.n_states(), pi.n_actions());
    if d_s.len() != ns || rewards.len() != ns * na || pi_b.n_states() != ns {
        return Err(Error::Shape("policy-shift objective inputs disagree".into()));
    }
    let range = RewardRange::of(rewards);
    let mut total = 0.0;
    for s in 0..ns {
        let w = d_s[s];
        if w == 0.0 {
            continue;
        }
        let log_r: f64 = (0..na)
            .map(|a| pi.prob(s, a) * log_translated(rewards[s * na + a], range, cfg))
            .sum();
        total += w * (log_r + cfg.beta * kl_rows(pi.probs(s), pi_b.probs(s)));
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::Step;

    fn cfg(alpha: f64, beta: f64, c: f64) -> SarConfig {
        SarConfig {
            alpha,
            beta,
            c,
            ..SarConfig::default()
        }
    }

    #[test]
    fn translation_cases() {
        assert_eq!(translate_reward(1.0, 1.0, 0.0, &cfg(0.0, 0.0, 0.0)), 1.0 + 1e-8);
        assert_eq!(translate_reward(-5.0, 1.0, 0.0, &cfg(0.0, 0.0, 0.0)), 1e-8);
        let r = translate_reward(0.5, 1.0, 0.0, &cfg(0.0, 0.0, -0.2));
        assert!((r - (0.7 + 1e-8)).abs() < 1e-15);
    }

    fn two_point(p0: f64) -> Kernel {
        Kernel::new(2, 1, vec![p0, 1.0 - p0, 0.5, 0.5]).unwrap()
    }

    fn rows(first: [f64; 2]) -> Kernel {
        Kernel::new(
            2,
            2,
            vec![first[0], first[1], 0.5, 0.5, 0.5, 0.5, 0.5, 0.5],
        )
        .unwrap()
    }

    #[test]
    fn hand_shift_weight() {
        let p = rows([0.4, 0.6]);
        let q = rows([0.8, 0.2]);
        let pi = SoftmaxPolicy::new(2, 2, vec![0.25f64.ln(), 0.75f64.ln(), 0.0, 0.0]).unwrap();
        let pi_c = SoftmaxPolicy::uniform(2, 2);
        let dens = Densities {
            p: &p,
            q: &q,
            pi: &pi,
            pi_c: &pi_c,
        };
        let traj = Trajectory {
            steps: vec![Step {
                state: 0,
                action: 0,
                reward: 1.0,
                next_state: 0,
            }],
        };
        assert!((shift_weighting(&traj, &dens).unwrap() - 4.0).abs() < 1e-12);
        let same = Densities {
            p: &p,
            q: &p,
            pi: &pi,
            pi_c: &pi,
        };
        assert!((shift_weighting(&traj, &same).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn theoretical_coefficient() {
        let p = two_point(0.8);
        let q = two_point(0.4);
        let pi = SoftmaxPolicy::uniform(2, 1);
        let dens = Densities {
            p: &p,
            q: &q,
            pi: &pi,
            pi_c: &pi,
        };
        let v = theoretical_sar(0, 0, 0, 0, &dens, 0.5, 1.0 + 1e-8).unwrap();
        assert!((v - 4.0f64.ln()).abs() < 1e-7);
        assert!((v - 1.3863).abs() < 1e-4);
        let same = Densities {
            p: &p,
            q: &p,
            pi: &pi,
            pi_c: &pi,
        };
        assert_eq!(theoretical_sar(3, 0, 0, 1, &same, 0.9, 2.0).unwrap(), 2.0f64.ln());
    }

    #[test]
    fn support_violation_is_reported() {
        let p = Kernel::new(2, 1, vec![1.0, 0.0, 0.5, 0.5]).unwrap();
        let q = Kernel::uniform(2, 1).unwrap();
        let pi = SoftmaxPolicy::uniform(2, 1);
        let dens = Densities {
            p: &p,
            q: &q,
            pi: &pi,
            pi_c: &pi,
        };
        assert!(matches!(
            theoretical_sar(0, 0, 0, 1, &dens, 0.9, 1.0),
            Err(Error::SupportViolation { .. })
        ));
    }

    #[test]
    fn practical_exact_with_small_weights() {
        let e = std::f64::consts::E;
        // p/q = e at (0,0,0) and π/π_c = e² at (0,0).
        let p = rows([e / (e + 1.0), 1.0 / (e + 1.0)]);
        let q = rows([1.0 / (e + 1.0), e / (e + 1.0)]);
        let pc = 0.9 / (e * e);
        let pi = SoftmaxPolicy::new(2, 2, vec![0.9f64.ln(), 0.1f64.ln(), 0.0, 0.0]).unwrap();
        let pi_c =
            SoftmaxPolicy::new(2, 2, vec![pc.ln(), (1.0 - pc).ln(), 0.0, 0.0]).unwrap();
        let dens = Densities {
            p: &p,
            q: &q,
            pi: &pi,
            pi_c: &pi_c,
        };
        let range = RewardRange {
            r_min: 1.0,
            r_max: 1.0,
        };
        let v = practical_sar_exact(1.0, range, 0, 0, 0, &dens, &cfg(0.01, 0.01, 0.0));
        let log_r = (1.0 + 1e-8f64).ln();
        assert!((v - (log_r + 0.01 + 0.02)).abs() < 1e-12);
        let v0 = practical_sar_exact(1.0, range, 0, 0, 0, &dens, &cfg(0.0, 0.0, 0.0));
        assert_eq!(v0, log_r);
    }

    #[test]
    fn kl_example() {
        let q = [0.5, 0.5];
        let p = [0.9, 0.1];
        assert!((kl_rows(&q, &p) - 0.5108).abs() < 1e-4);
    }
}
