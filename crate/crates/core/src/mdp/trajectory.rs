use serde::{Deserialize, Serialize};

use super::{check_distribution, Kernel, SoftmaxPolicy};
use crate::error::{Error, Result};
use crate::rng::{rng_from, sample_index, stream, LabRng};

/// Hard cap on materialised enumeration entries.
pub const ENUMERATION_LIMIT: usize = 10_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Step>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    /// Consecutive steps must chain.
    pub fn is_chained(&self) -> bool {
        self.steps
            .windows(2)
            .all(|w| w[0].next_state == w[1].state)
    }

    pub fn discounted_return(&self, gamma: f64) -> f64 {
        let mut disc = 1.0;
        let mut total = 0.0;
        for st in &self.steps {
            total += disc * st.reward;
            disc *= gamma;
        }
        total
    }
}

fn check_inputs(
    kernel: &Kernel,
    reward: &[f64],
    mu0: &[f64],
    policy: &SoftmaxPolicy,
) -> Result<()> {
    let (ns, na) = (kernel.n_states(), kernel.n_actions());
    if reward.len() != ns * na || mu0.len() != ns {
        return Err(Error::Shape("trajectory inputs disagree on shape".into()));
    }
    if policy.n_states() != ns || policy.n_actions() != na {
        return Err(Error::Shape("policy shape disagrees with kernel".into()));
    }
    check_distribution(mu0, "mu0")
}

/// Roll out one trajectory with a caller-owned generator.
pub fn sample_trajectory_with(
    kernel: &Kernel,
    reward: &[f64],
    mu0: &[f64],
    policy: &SoftmaxPolicy,
    horizon: usize,
    rng: &mut LabRng,
) -> Trajectory {
    let na = kernel.n_actions();
    let mut steps = Vec::with_capacity(horizon);
    let mut s = sample_index(mu0, rng);
    for _ in 0..horizon {
        let a = sample_index(policy.probs(s), rng);
        let next = sample_index(kernel.row(s, a), rng);
        steps.push(Step {
            state: s,
            action: a,
            reward: reward[s * na + a],
            next_state: next,
        });
        s = next;
    }
    Trajectory { steps }
}

pub fn sample_trajectory(
    kernel: &Kernel,
    reward: &[f64],
    mu0: &[f64],
    policy: &SoftmaxPolicy,
    horizon: usize,
    seed: u64,
) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    check_inputs(kernel, reward, mu0, policy)?;
    let mut rng = rng_from(seed, stream::TRAJECTORY, 0);
    Ok(sample_trajectory_with(
        kernel, reward, mu0, policy, horizon, &mut rng,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnumeratedEntry {
    pub trajectory: Trajectory,
    pub probability: f64,
    pub discounted_return: f64,
}

/// Every positive-probability length-`H` prefix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnumeratedTrajectorySet {
    pub entries: Vec<EnumeratedEntry>,
    pub horizon: usize,
    pub gamma: f64,
    /// `γ^H r_max / (1-γ)`.
    pub tail_bound: f64,
}

impl EnumeratedTrajectorySet {
    pub fn total_probability(&self) -> f64 {
        self.entries.iter().map(|e| e.probability).sum()
    }

    pub fn expected_return(&self) -> f64 {
        self.entries
            .iter()
            .map(|e| e.probability * e.discounted_return)
            .sum()
    }
}

/// Worst-case number of entries for an `H`-step enumeration.
fn entry_bound(mu0: &[f64], ns: usize, na: usize, horizon: usize) -> f64 {
    let starts = mu0.iter().filter(|&&m| m > 0.0).count() as f64;
    starts * ((ns * na) as f64).powi(horizon as i32)
}

/// Visit every positive-probability prefix without materialising it.
/// The callback receives the steps, the prefix probability and its
/// discounted return.
pub fn for_each_trajectory(
    kernel: &Kernel,
    reward: &[f64],
    mu0: &[f64],
    policy: &SoftmaxPolicy,
    gamma: f64,
    horizon: usize,
    mut visit: impl FnMut(&[Step], f64, f64),
) -> Result<()> {
    check_inputs(kernel, reward, mu0, policy)?;
    let mut buf = Vec::with_capacity(horizon);
    for (s0, &m) in mu0.iter().enumerate() {
        if m > 0.0 {
            walk(kernel, reward, policy, gamma, horizon, s0, m, 0.0, 1.0, &mut buf, &mut visit);
        }
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn walk(
    kernel: &Kernel,
    reward: &[f64],
    policy: &SoftmaxPolicy,
    gamma: f64,
    horizon: usize,
    s: usize,
    prob: f64,
    ret: f64,
    disc: f64,
    buf: &mut Vec<Step>,
    visit: &mut impl FnMut(&[Step], f64, f64),
) {
    if buf.len() == horizon {
        visit(buf, prob, ret);
        return;
    }
    let na = kernel.n_actions();
    for a in 0..na {
        let pa = prob * policy.prob(s, a);
        let r = reward[s * na + a];
        for (t, &pt) in kernel.row(s, a).iter().enumerate() {
            if pt == 0.0 {
                continue;
            }
            buf.push(Step {
                state: s,
                action: a,
                reward: r,
                next_state: t,
            });
            walk(
                kernel,
                reward,
                policy,
                gamma,
                horizon,
                t,
                pa * pt,
                ret + disc * r,
                disc * gamma,
                buf,
                visit,
            );
            buf.pop();
        }
    }
}

pub fn enumerate_trajectories(
    kernel: &Kernel,
    reward: &[f64],
    mu0: &[f64],
    policy: &SoftmaxPolicy,
    gamma: f64,
    horizon: usize,
) -> Result<EnumeratedTrajectorySet> {
    if horizon == 0 {
        return Err(Error::invalid("horizon must be at least 1"));
    }
    let (ns, na) = (kernel.n_states(), kernel.n_actions());
    let bound = entry_bound(mu0, ns, na, horizon);
    if bound > ENUMERATION_LIMIT as f64 {
        return Err(Error::EnumerationTooLarge {
            entries: bound,
            limit: ENUMERATION_LIMIT,
        });
    }
    let mut entries = Vec::new();
    for_each_trajectory(kernel, reward, mu0, policy, gamma, horizon, |steps, p, r| {
        entries.push(EnumeratedEntry {
            trajectory: Trajectory {
                steps: steps.to_vec(),
            },
            probability: p,
            discounted_return: r,
        })
    })?;
    let r_max = reward.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(EnumeratedTrajectorySet {
        entries,
        horizon,
        gamma,
        tail_bound: gamma.powi(horizon as i32) * r_max / (1.0 - gamma),
    })
}
