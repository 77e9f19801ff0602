use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Per-state softmax policy. Full support is structural, so every log-ratio
/// between two such policies is finite.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "PolicyRepr", into = "PolicyRepr")]
pub struct SoftmaxPolicy {
    n_states: usize,
    n_actions: usize,
    logits: Vec<f64>,
    probs: Vec<f64>,
    log_probs: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct PolicyRepr {
    n_states: usize,
    n_actions: usize,
    logits: Vec<f64>,
}

impl TryFrom<PolicyRepr> for SoftmaxPolicy {
    type Error = Error;
    fn try_from(r: PolicyRepr) -> Result<Self> {
        SoftmaxPolicy::new(r.n_states, r.n_actions, r.logits)
    }
}

impl From<SoftmaxPolicy> for PolicyRepr {
    fn from(p: SoftmaxPolicy) -> Self {
        PolicyRepr {
            n_states: p.n_states,
            n_actions: p.n_actions,
            logits: p.logits,
        }
    }
}

impl SoftmaxPolicy {
    pub fn new(n_states: usize, n_actions: usize, logits: Vec<f64>) -> Result<Self> {
        if n_states == 0 || n_actions == 0 {
            return Err(Error::invalid("policy needs at least one state and one action"));
        }
        if logits.len() != n_states * n_actions {
            return Err(Error::Shape(format!(
                "policy has {} logits, expected {}",
                logits.len(),
                n_states * n_actions
            )));
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::invalid("policy logits must be finite"));
        }
        let mut p = SoftmaxPolicy {
            n_states,
            n_actions,
            logits,
            probs: vec![0.0; n_states * n_actions],
            log_probs: vec![0.0; n_states * n_actions],
        };
        p.refresh();
        Ok(p)
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        SoftmaxPolicy::new(n_states, n_actions, vec![0.0; n_states * n_actions])
            .expect("uniform policy is always valid")
    }

    /// Policy putting logit `sharpness` on `actions[s]` and 0 elsewhere.
    pub fn greedy(n_actions: usize, actions: &[usize], sharpness: f64) -> Result<Self> {
        let n_states = actions.len();
        let mut logits = vec![0.0; n_states * n_actions];
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::invalid(format!("action {a} out of range")));
            }
            logits[s * n_actions + a] = sharpness;
        }
        SoftmaxPolicy::new(n_states, n_actions, logits)
    }

    fn refresh(&mut self) {
        let na = self.n_actions;
        for s in 0..self.n_states {
            let l = &self.logits[s * na..(s + 1) * na];
            let m = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = l.iter().map(|x| (x - m).exp()).sum();
            let log_z = m + z.ln();
            for a in 0..na {
                let lp = l[a] - log_z;
                self.log_probs[s * na + a] = lp;
                self.probs[s * na + a] = lp.exp();
            }
        }
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    #[inline]
    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s * self.n_actions + a]
    }

    #[inline]
    pub fn log_prob(&self, s: usize, a: usize) -> f64 {
        self.log_probs[s * self.n_actions + a]
    }

    #[inline]
    pub fn probs(&self, s: usize) -> &[f64] {
        &self.probs[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn logits(&self) -> &[f64] {
        &self.logits
    }

    pub fn set_logits(&mut self, logits: &[f64]) -> Result<()> {
        if logits.len() != self.logits.len() {
            return Err(Error::Shape("logit length changed".into()));
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::invalid("policy logits must be finite"));
        }
        self.logits.copy_from_slice(logits);
        self.refresh();
        Ok(())
    }

    /// Add `step * direction` to the logits.
    pub fn step(&mut self, direction: &[f64], step: f64) -> Result<()> {
        if direction.len() != self.logits.len() {
            return Err(Error::Shape("gradient length mismatch".into()));
        }
        let next: Vec<f64> = self
            .logits
            .iter()
            .zip(direction)
            .map(|(l, d)| l + step * d)
            .collect();
        self.set_logits(&next)
    }

    pub fn entropy(&self, s: usize) -> f64 {
        (0..self.n_actions)
            .map(|a| -self.prob(s, a) * self.log_prob(s, a))
            .sum()
    }

    /// Gradient of the state entropy with respect to the logits of `s`:
    /// `dH/dθ_a = -π_a (log π_a + H)`.
    pub fn entropy_grad(&self, s: usize) -> Vec<f64> {
        let h = self.entropy(s);
        (0..self.n_actions)
            .map(|a| -self.prob(s, a) * (self.log_prob(s, a) + h))
            .collect()
    }

    /// Most probable action per state.
    pub fn greedy_actions(&self) -> Vec<usize> {
        (0..self.n_states)
            .map(|s| {
                let p = self.probs(s);
                (0..self.n_actions)
                    .fold(0, |best, a| if p[a] > p[best] { a } else { best })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn extreme_logits_stay_normalised() {
        let p = SoftmaxPolicy::new(1, 3, vec![800.0, -800.0, 0.0]).unwrap();
        let sum: f64 = p.probs(0).iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(p.log_prob(0, 1).is_finite());
    }

    #[test]
    fn entropy_grad_matches_finite_difference() {
        let p = SoftmaxPolicy::new(1, 3, vec![0.3, -1.2, 0.7]).unwrap();
        let g = p.entropy_grad(0);
        let h = 1e-6;
        for a in 0..3 {
            let mut l = p.logits().to_vec();
            l[a] += h;
            let up = SoftmaxPolicy::new(1, 3, l.clone()).unwrap().entropy(0);
            l[a] -= 2.0 * h;
            let dn = SoftmaxPolicy::new(1, 3, l).unwrap().entropy(0);
            assert!((g[a] - (up - dn) / (2.0 * h)).abs() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn rows_are_simplex(logits in proptest::collection::vec(-30.0f64..30.0, 6)) {
            let p = SoftmaxPolicy::new(3, 2, logits).unwrap();
            for s in 0..3 {
                let sum: f64 = p.probs(s).iter().sum();
                prop_assert!((sum - 1.0).abs() < 1e-12);
                prop_assert!(p.probs(s).iter().all(|&x| x > 0.0));
            }
        }
    }
}
