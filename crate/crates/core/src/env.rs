//! The 1D corridor grid world and point-mass biased dynamics models.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{Kernel, SoftmaxPolicy, TabularMdp};

pub const LEFT: usize = 0;
pub const RIGHT: usize = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Placement {
    pub state: usize,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridSpec {
    pub n_cells: usize,
    pub placements: Vec<Placement>,
    pub base_reward: f64,
    pub gamma: f64,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            n_cells: 5,
            placements: vec![
                Placement {
                    state: 4,
                    reward: 1.0,
                },
                Placement {
                    state: 0,
                    reward: 0.3,
                },
            ],
            base_reward: 0.01,
            gamma: 0.95,
        }
    }
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_cells < 2 {
            return Err(Error::invalid("grid needs at least two cells"));
        }
        if !(self.base_reward > 0.0 && self.base_reward.is_finite()) {
            return Err(Error::invalid("base reward must be positive"));
        }
        for p in &self.placements {
            if p.state >= self.n_cells {
                return Err(Error::invalid(format!(
                    "placement state {} outside a {}-cell grid",
                    p.state, self.n_cells
                )));
            }
            if !(p.reward > 0.0 && p.reward.is_finite()) {
                return Err(Error::invalid("placement rewards must be positive"));
            }
        }
        Ok(())
    }

    /// Reward for arriving in `s`.
    pub fn cell_reward(&self, s: usize) -> f64 {
        self.placements
            .iter()
            .rev()
            .find(|p| p.state == s)
            .map_or(self.base_reward, |p| p.reward)
    }

    /// Cell of the largest placement (first one on ties).
    pub fn best_cell(&self) -> Option<usize> {
        self.placements
            .iter()
            .fold(None::<Placement>, |best, p| match best {
                Some(b) if b.reward >= p.reward => Some(b),
                _ => Some(*p),
            })
            .map(|p| p.state)
    }

    pub fn successor(&self, s: usize, a: usize) -> usize {
        if a == LEFT {
            s.saturating_sub(1)
        } else {
            (s + 1).min(self.n_cells - 1)
        }
    }
}

/// Deterministic corridor: L and R move one cell, walls obstruct, start is
/// uniform, and `R[s][a]` is the reward of the cell the move lands in.
pub fn build_grid(spec: &GridSpec) -> Result<TabularMdp> {
    spec.validate()?;
    let n = spec.n_cells;
    let kernel = Kernel::from_fn(n, 2, |s, a, t| {
        if spec.successor(s, a) == t {
            1.0
        } else {
            0.0
        }
    })?;
    let reward = (0..n)
        .flat_map(|s| [LEFT, RIGHT].map(|a| spec.cell_reward(spec.successor(s, a))))
        .collect();
    TabularMdp::new(kernel, reward, vec![1.0 / n as f64; n], spec.gamma)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BiasKind {
    Overestimating,
    Underestimating,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BiasSpec {
    pub kind: BiasKind,
    pub epsilon: f64,
}

impl Default for BiasSpec {
    fn default() -> Self {
        BiasSpec {
            kind: BiasKind::Overestimating,
            epsilon: 0.2,
        }
    }
}

impl BiasSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.epsilon) {
            return Err(Error::invalid(format!(
                "bias epsilon must lie in [0,1), got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Mix every row toward a point mass one cell past (over) or short of (under)
/// its most likely successor, measured along the index line toward `target`.
pub fn make_biased_model(kernel: &Kernel, spec: &BiasSpec, target: usize) -> Result<Kernel> {
    spec.validate()?;
    let n = kernel.n_states();
    if target >= n {
        return Err(Error::invalid("bias target outside the state space"));
    }
    let toward = |t: usize| match t.cmp(&target) {
        std::cmp::Ordering::Less => t + 1,
        std::cmp::Ordering::Greater => t - 1,
        std::cmp::Ordering::Equal => t,
    };
    let away = |t: usize| {
        if t < target {
            t.saturating_sub(1)
        } else if t > target {
            (t + 1).min(n - 1)
        } else if t > 0 {
            t - 1
        } else {
            (t + 1).min(n - 1)
        }
    };
    let eps = spec.epsilon;
    let mut probs = Vec::with_capacity(kernel.as_slice().len());
    for s in 0..n {
        for a in 0..kernel.n_actions() {
            let succ = kernel.mode_successor(s, a);
            let point = match spec.kind {
                BiasKind::Overestimating => toward(succ),
                BiasKind::Underestimating => away(succ),
            };
            let row = kernel.row(s, a);
            let start = probs.len();
            probs.extend(row.iter().map(|p| (1.0 - eps) * p));
            probs[start + point] += eps;
            // Re-normalise away the rounding of the convex combination.
            let z: f64 = probs[start..].iter().sum();
            probs[start..].iter_mut().for_each(|p| *p /= z);
        }
    }
    Kernel::new(n, kernel.n_actions(), probs)
}

/// Biased model of a grid, aimed at its best placement.
pub fn biased_grid_model(grid: &GridSpec, mdp: &TabularMdp, bias: &BiasSpec) -> Result<Kernel> {
    let target = grid.best_cell().unwrap_or(grid.n_cells - 1);
    make_biased_model(mdp.kernel(), bias, target)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BehaviorKind {
    #[default]
    Uniform,
    Opposite,
}

/// Behaviour policy for policy-shift experiments. `Opposite` puts logit
/// `sharpness` on L everywhere.
pub fn behavior_policy(n_cells: usize, kind: BehaviorKind, sharpness: f64) -> SoftmaxPolicy {
    match kind {
        BehaviorKind::Uniform => SoftmaxPolicy::uniform(n_cells, 2),
        BehaviorKind::Opposite => {
            SoftmaxPolicy::greedy(2, &vec![LEFT; n_cells], sharpness).expect("valid grid policy")
        }
    }
}

/// Near-deterministic "always R".
pub fn always_right(n_cells: usize, sharpness: f64) -> SoftmaxPolicy {
    SoftmaxPolicy::greedy(2, &vec![RIGHT; n_cells], sharpness).expect("valid grid policy")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::expected_return_under;

    #[test]
    fn walls_obstruct() {
        let spec = GridSpec {
            n_cells: 2,
            placements: vec![Placement {
                state: 1,
                reward: 1.0,
            }],
            ..GridSpec::default()
        };
        let mdp = build_grid(&spec).unwrap();
        assert_eq!(mdp.kernel().prob(1, RIGHT, 1), 1.0);
        assert_eq!(mdp.kernel().prob(0, LEFT, 0), 1.0);
        assert_eq!(mdp.mu0(), &[0.5, 0.5]);
    }

    #[test]
    fn rejects_bad_specs() {
        let mut spec = GridSpec::default();
        spec.placements[0].state = 5;
        assert!(build_grid(&spec).is_err());
        let spec = GridSpec {
            n_cells: 1,
            ..GridSpec::default()
        };
        assert!(build_grid(&spec).is_err());
        let bias = BiasSpec {
            kind: BiasKind::Overestimating,
            epsilon: 1.0,
        };
        assert!(bias.validate().is_err());
    }

    #[test]
    fn zero_epsilon_is_identity() {
        let mdp = build_grid(&GridSpec::default()).unwrap();
        for kind in [BiasKind::Overestimating, BiasKind::Underestimating] {
            let k = make_biased_model(mdp.kernel(), &BiasSpec { kind, epsilon: 0.0 }, 4).unwrap();
            assert_eq!(k.max_abs_diff(mdp.kernel()), 0.0);
        }
    }

    #[test]
    fn bias_direction_on_default_grid() {
        let spec = GridSpec::default();
        let mdp = build_grid(&spec).unwrap();
        let pi = always_right(5, 30.0);
        let truth = expected_return_under(mdp.kernel(), mdp.rewards(), mdp.mu0(), 0.95, &pi)
            .unwrap();
        for eps in [0.01, 0.2, 0.5, 0.99] {
            let om = biased_grid_model(
                &spec,
                &mdp,
                &BiasSpec {
                    kind: BiasKind::Overestimating,
                    epsilon: eps,
                },
            )
            .unwrap();
            let um = biased_grid_model(
                &spec,
                &mdp,
                &BiasSpec {
                    kind: BiasKind::Underestimating,
                    epsilon: eps,
                },
            )
            .unwrap();
            let j_om = expected_return_under(&om, mdp.rewards(), mdp.mu0(), 0.95, &pi).unwrap();
            let j_um = expected_return_under(&um, mdp.rewards(), mdp.mu0(), 0.95, &pi).unwrap();
            assert!(j_om > truth, "eps {eps}: {j_om} <= {truth}");
            assert!(j_um < truth, "eps {eps}: {j_um} >= {truth}");
        }
    }
}
