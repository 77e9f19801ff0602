//! Logit-table discriminators between two transition datasets.
//!
//! Each discrete cell owns one logit. Training minimises the pooled binary
//! cross-entropy plus `pseudo_count` virtual samples of each class per cell,
//! so its minimiser is exactly the Laplace-smoothed count ratio returned by
//! the closed-form oracles.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ReplayBuffer;
use crate::rng::{rng_from, stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierTrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub logit_clamp: f64,
    /// Step size decays as `lr / (1 + t / decay_steps)`; the returned
    /// logits average the iterates of the second half.
    pub decay_steps: f64,
    pub pseudo_count: f64,
}

impl Default for ClassifierTrainConfig {
    fn default() -> Self {
        ClassifierTrainConfig {
            steps: 5000,
            learning_rate: 1.0,
            batch_size: 256,
            logit_clamp: 10.0,
            decay_steps: 50.0,
            pseudo_count: 0.5,
        }
    }
}

impl ClassifierTrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::invalid("classifier batch size must be positive"));
        }
        for (name, v) in [
            ("learning rate", self.learning_rate),
            ("logit clamp", self.logit_clamp),
            ("decay steps", self.decay_steps),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::invalid(format!("classifier {name} must be positive")));
            }
        }
        if !(self.pseudo_count >= 0.0) {
            return Err(Error::invalid("pseudo count must be non-negative"));
        }
        Ok(())
    }
}

/// Diagnostics of one training call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub initial_loss: f64,
    pub final_loss: f64,
    /// Full-data objective at evenly spaced checkpoints.
    pub loss_trace: Vec<f64>,
    /// `log(|positive| / |negative|)`; the constant offset in every log-odds.
    pub size_log_ratio: f64,
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `log(1 + e^x)` without overflow.
#[inline]
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct LogitTable {
    logits: Vec<f64>,
    clamp: f64,
}

impl LogitTable {
    fn zeros(n: usize, clamp: f64) -> Self {
        LogitTable {
            logits: vec![0.0; n],
            clamp,
        }
    }

    fn get(&self, c: usize) -> f64 {
        self.logits[c].clamp(-self.clamp, self.clamp)
    }
}

/// Per-cell positive/negative counts plus the pooled sample list.
struct Pool {
    pos: Vec<f64>,
    neg: Vec<f64>,
    samples: Vec<(u32, bool)>,
}

impl Pool {
    fn new(n_cells: usize, pos: &[usize], neg: &[usize]) -> Self {
        let mut p = Pool {
            pos: vec![0.0; n_cells],
            neg: vec![0.0; n_cells],
            samples: Vec::with_capacity(pos.len() + neg.len()),
        };
        for &c in pos {
            p.pos[c] += 1.0;
            p.samples.push((c as u32, true));
        }
        for &c in neg {
            p.neg[c] += 1.0;
            p.samples.push((c as u32, false));
        }
        p
    }

    /// Mean cross-entropy per real sample, with the pseudo-counts included.
    fn objective(&self, logits: &[f64], lambda: f64) -> f64 {
        let total: f64 = logits
            .iter()
            .enumerate()
            .map(|(c, &x)| (self.pos[c] + lambda) * softplus(-x) + (self.neg[c] + lambda) * softplus(x))
            .sum();
        total / self.samples.len() as f64
    }
}

fn train_table(
    init: &LogitTable,
    pool: &Pool,
    cfg: &ClassifierTrainConfig,
    seed: u64,
    label: u64,
) -> (LogitTable, TrainReport) {
    let n_cells = init.logits.len();
    let n = pool.samples.len();
    let lambda = cfg.pseudo_count;
    let clamp = cfg.logit_clamp;
    let batch = cfg.batch_size.min(n);
    let scale = batch as f64 / n as f64;
    let mut rng = rng_from(seed, stream::CLASSIFIER, label);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut cursor = 0;

    let mut logits: Vec<f64> = init.logits.iter().map(|x| x.clamp(-clamp, clamp)).collect();
    let initial_loss = pool.objective(&logits, lambda);
    let checkpoints = 20.min(cfg.steps.max(1));
    let mut loss_trace = vec![initial_loss];
    let mut grad = vec![0.0; n_cells];
    // Iterate average over the second half of the run.
    let avg_from = cfg.steps / 2;
    let mut avg = vec![0.0; n_cells];

    for t in 0..cfg.steps {
        grad.iter_mut().for_each(|g| *g = 0.0);
        for _ in 0..batch {
            if cursor == n {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            let (c, y) = pool.samples[order[cursor]];
            cursor += 1;
            let c = c as usize;
            grad[c] += if y { 1.0 } else { 0.0 } - sigmoid(logits[c]);
        }
        let eta = cfg.learning_rate / (1.0 + t as f64 / cfg.decay_steps);
        for c in 0..n_cells {
            let s = sigmoid(logits[c]);
            let g = grad[c] + scale * lambda * (1.0 - 2.0 * s);
            let expected_hits = scale * (pool.pos[c] + pool.neg[c] + 2.0 * lambda);
            if expected_hits == 0.0 {
                continue;
            }
            // Per-cell Newton scaling with a unit trust region.
            let curvature = expected_hits * (s * (1.0 - s)).max(0.01);
            let step = (eta * g / curvature).clamp(-1.0, 1.0);
            logits[c] = (logits[c] + step).clamp(-clamp, clamp);
        }
        if t >= avg_from {
            let k = (t - avg_from + 1) as f64;
            for (m, x) in avg.iter_mut().zip(&logits) {
                *m += (x - *m) / k;
            }
        }
        if (t + 1) % (cfg.steps / checkpoints).max(1) == 0 {
            loss_trace.push(pool.objective(&logits, lambda));
        }
    }

    if cfg.steps > 0 {
        logits = avg;
    }
    let mut final_loss = pool.objective(&logits, lambda);
    if final_loss > initial_loss {
        // Never hand back something worse than the starting point.
        logits = init.logits.iter().map(|x| x.clamp(-clamp, clamp)).collect();
        final_loss = initial_loss;
    }
    let npos: f64 = pool.pos.iter().sum();
    let nneg: f64 = pool.neg.iter().sum();
    (
        LogitTable { logits, clamp },
        TrainReport {
            initial_loss,
            final_loss,
            loss_trace,
            size_log_ratio: (npos / nneg).ln(),
        },
    )
}

fn oracle_table(pool: &Pool, lambda: f64, clamp: f64) -> LogitTable {
    LogitTable {
        logits: pool
            .pos
            .iter()
            .zip(&pool.neg)
            .map(|(p, q)| ((p + lambda) / (q + lambda)).ln())
            .collect(),
        clamp,
    }
}

fn check_indices(buf: &ReplayBuffer, ns: usize, na: usize) -> Result<()> {
    if buf
        .iter()
        .any(|x| x.state >= ns || x.action >= na || x.next_state >= ns)
    {
        return Err(Error::invalid("transition index out of range"));
    }
    Ok(())
}

/// `C_φ(s,a,s')`: probability that a transition came from the environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionClassifier {
    n_states: usize,
    n_actions: usize,
    table: LogitTable,
}

impl TransitionClassifier {
    pub fn neutral(n_states: usize, n_actions: usize, clamp: f64) -> Self {
        TransitionClassifier {
            n_states,
            n_actions,
            table: LogitTable::zeros(n_states * n_actions * n_states, clamp),
        }
    }

    fn cell(&self, s: usize, a: usize, next: usize) -> usize {
        (s * self.n_actions + a) * self.n_states + next
    }

    /// Stored logit, clamped.
    pub fn log_odds(&self, s: usize, a: usize, next: usize) -> f64 {
        self.table.get(self.cell(s, a, next))
    }

    pub fn prob(&self, s: usize, a: usize, next: usize) -> f64 {
        sigmoid(self.log_odds(s, a, next))
    }

    pub fn logits(&self) -> &[f64] {
        &self.table.logits
    }

    fn pool(&self, d_env: &ReplayBuffer, d_m: &ReplayBuffer) -> Result<Pool> {
        if d_env.is_empty() {
            return Err(Error::EmptyDataset("environment transitions"));
        }
        if d_m.is_empty() {
            return Err(Error::EmptyDataset("model transitions"));
        }
        check_indices(d_env, self.n_states, self.n_actions)?;
        check_indices(d_m, self.n_states, self.n_actions)?;
        let cells = |b: &ReplayBuffer| -> Vec<usize> {
            b.iter()
                .map(|x| self.cell(x.state, x.action, x.next_state))
                .collect()
        };
        Ok(Pool::new(
            self.table.logits.len(),
            &cells(d_env),
            &cells(d_m),
        ))
    }

    /// Continue training from the current logits.
    pub fn train(
        &self,
        d_env: &ReplayBuffer,
        d_m: &ReplayBuffer,
        cfg: &ClassifierTrainConfig,
        seed: u64,
    ) -> Result<(TransitionClassifier, TrainReport)> {
        cfg.validate()?;
        let pool = self.pool(d_env, d_m)?;
        let (table, report) = train_table(&self.table, &pool, cfg, seed, 0);
        Ok((
            TransitionClassifier {
                table,
                ..self.clone()
            },
            report,
        ))
    }
}

/// `C_ψ(s,a)`: probability that a state-action pair came from the current
/// policy rather than the behaviour data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionClassifier {
    n_states: usize,
    n_actions: usize,
    table: LogitTable,
}

impl ActionClassifier {
    pub fn neutral(n_states: usize, n_actions: usize, clamp: f64) -> Self {
        ActionClassifier {
            n_states,
            n_actions,
            table: LogitTable::zeros(n_states * n_actions, clamp),
        }
    }

    pub fn log_odds(&self, s: usize, a: usize) -> f64 {
        self.table.get(s * self.n_actions + a)
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        sigmoid(self.log_odds(s, a))
    }

    pub fn logits(&self) -> &[f64] {
        &self.table.logits
    }

    fn pool(&self, d_pi: &ReplayBuffer, d_env: &ReplayBuffer) -> Result<Pool> {
        if d_pi.is_empty() {
            return Err(Error::EmptyDataset("policy transitions"));
        }
        if d_env.is_empty() {
            return Err(Error::EmptyDataset("environment transitions"));
        }
        check_indices(d_pi, self.n_states, self.n_actions)?;
        check_indices(d_env, self.n_states, self.n_actions)?;
        let cells = |b: &ReplayBuffer| -> Vec<usize> {
            b.iter().map(|x| x.state * self.n_actions + x.action).collect()
        };
        Ok(Pool::new(
            self.table.logits.len(),
            &cells(d_pi),
            &cells(d_env),
        ))
    }

    pub fn train(
        &self,
        d_pi: &ReplayBuffer,
        d_env: &ReplayBuffer,
        cfg: &ClassifierTrainConfig,
        seed: u64,
    ) -> Result<(ActionClassifier, TrainReport)> {
        cfg.validate()?;
        let pool = self.pool(d_pi, d_env)?;
        let (table, report) = train_table(&self.table, &pool, cfg, seed, 1);
        Ok((
            ActionClassifier {
                table,
                ..self.clone()
            },
            report,
        ))
    }
}

/// Fit `C_φ` from scratch: positives from `d_env`, negatives from `d_m`.
pub fn train_transition_classifier(
    d_env: &ReplayBuffer,
    d_m: &ReplayBuffer,
    n_states: usize,
    n_actions: usize,
    cfg: &ClassifierTrainConfig,
    seed: u64,
) -> Result<(TransitionClassifier, TrainReport)> {
    TransitionClassifier::neutral(n_states, n_actions, cfg.logit_clamp).train(d_env, d_m, cfg, seed)
}

/// Fit `C_ψ` from scratch: positives from `d_pi`, negatives from `d_env`.
pub fn train_action_classifier(
    d_pi: &ReplayBuffer,
    d_env: &ReplayBuffer,
    n_states: usize,
    n_actions: usize,
    cfg: &ClassifierTrainConfig,
    seed: u64,
) -> Result<(ActionClassifier, TrainReport)> {
    ActionClassifier::neutral(n_states, n_actions, cfg.logit_clamp).train(d_pi, d_env, cfg, seed)
}

/// Laplace pseudo-count of the closed-form oracles.
pub const ORACLE_LAMBDA: f64 = 0.5;

/// Bayes classifier of the pooled data: `log((n_env + λ) / (n_m + λ))`.
pub fn closed_form_transition_oracle(
    d_env: &ReplayBuffer,
    d_m: &ReplayBuffer,
    n_states: usize,
    n_actions: usize,
    clamp: f64,
) -> Result<TransitionClassifier> {
    let mut c = TransitionClassifier::neutral(n_states, n_actions, clamp);
    let pool = c.pool(d_env, d_m)?;
    c.table = oracle_table(&pool, ORACLE_LAMBDA, clamp);
    Ok(c)
}

pub fn closed_form_action_oracle(
    d_pi: &ReplayBuffer,
    d_env: &ReplayBuffer,
    n_states: usize,
    n_actions: usize,
    clamp: f64,
) -> Result<ActionClassifier> {
    let mut c = ActionClassifier::neutral(n_states, n_actions, clamp);
    let pool = c.pool(d_pi, d_env)?;
    c.table = oracle_table(&pool, ORACLE_LAMBDA, clamp);
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{BufferTag, Source, TransitionSample};
    use proptest::prelude::*;

    fn buf(cells: &[(usize, usize, usize, usize)]) -> ReplayBuffer {
        let mut out = Vec::new();
        for &(s, a, t, n) in cells {
            for _ in 0..n {
                out.push(TransitionSample {
                    state: s,
                    action: a,
                    reward: 1.0,
                    next_state: t,
                    source: Source::Env,
                });
            }
        }
        ReplayBuffer::from_samples(BufferTag::Env, out)
    }

    #[test]
    fn oracle_formula() {
        let env = buf(&[(0, 0, 0, 9), (1, 1, 1, 4)]);
        let m = buf(&[(0, 0, 0, 1), (1, 1, 1, 4)]);
        let o = closed_form_transition_oracle(&env, &m, 2, 2, 10.0).unwrap();
        assert!((o.log_odds(0, 0, 0) - (9.5f64 / 1.5).ln()).abs() < 1e-12);
        assert!((o.log_odds(0, 0, 0) - 1.845).abs() < 1e-3);
        assert_eq!(o.log_odds(1, 1, 1), 0.0);
    }

    #[test]
    fn identical_data_gives_even_odds() {
        let d = buf(&[(0, 0, 1, 300), (0, 1, 0, 120), (1, 0, 1, 50)]);
        let cfg = ClassifierTrainConfig::default();
        let (c, rep) = train_transition_classifier(&d, &d, 2, 2, &cfg, 3).unwrap();
        for &(s, a, t) in &[(0, 0, 1), (0, 1, 0), (1, 0, 1)] {
            assert!((c.prob(s, a, t) - 0.5).abs() < 0.02);
        }
        assert!(rep.final_loss <= rep.initial_loss);
        assert_eq!(rep.size_log_ratio, 0.0);
    }

    #[test]
    fn separable_cell_hits_clamp() {
        let env = buf(&[(0, 0, 0, 400), (1, 0, 1, 100)]);
        let m = buf(&[(1, 0, 1, 100)]);
        let cfg = ClassifierTrainConfig {
            logit_clamp: 3.0,
            ..Default::default()
        };
        let (c, _) = train_transition_classifier(&env, &m, 2, 1, &cfg, 1).unwrap();
        assert_eq!(c.log_odds(0, 0, 0), 3.0);
        let (a, _) = train_action_classifier(&env, &m, 2, 1, &cfg, 1).unwrap();
        assert_eq!(a.log_odds(0, 0), 3.0);
    }

    #[test]
    fn sgd_matches_oracle_on_fixed_data() {
        let env = buf(&[(0, 0, 0, 700), (0, 0, 1, 300), (1, 0, 0, 40), (1, 0, 1, 260)]);
        let m = buf(&[(0, 0, 0, 200), (0, 0, 1, 500), (1, 0, 0, 90), (1, 0, 1, 110)]);
        let cfg = ClassifierTrainConfig::default();
        let (c, rep) = train_transition_classifier(&env, &m, 2, 1, &cfg, 5).unwrap();
        let o = closed_form_transition_oracle(&env, &m, 2, 1, cfg.logit_clamp).unwrap();
        for (x, y) in c.logits().iter().zip(o.logits()) {
            assert!((x - y).abs() < 0.05, "{x} vs {y}");
        }
        for w in rep.loss_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-3);
        }
    }

    #[test]
    fn empty_inputs_error() {
        let d = buf(&[(0, 0, 0, 1)]);
        let e = buf(&[]);
        let cfg = ClassifierTrainConfig::default();
        assert!(train_transition_classifier(&d, &e, 1, 1, &cfg, 0).is_err());
        assert!(train_action_classifier(&e, &d, 1, 1, &cfg, 0).is_err());
    }

    proptest! {
        #[test]
        fn log_odds_is_logit_of_prob(x in -6.0f64..6.0) {
            let mut c = ActionClassifier::neutral(1, 1, 10.0);
            c.table.logits[0] = x;
            let p = c.prob(0, 0);
            prop_assert!((c.log_odds(0, 0) - (p / (1.0 - p)).ln()).abs() < 1e-12);
        }

        #[test]
        fn log_odds_never_exceed_clamp(x in -1e3f64..1e3) {
            let mut c = ActionClassifier::neutral(1, 1, 10.0);
            c.table.logits[0] = x;
            prop_assert!(c.log_odds(0, 0).abs() <= 10.0);
        }
    }
}
