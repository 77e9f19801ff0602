//! Finite MDPs, softmax policies and exact dynamic programming.

mod eval;
mod kernel;
mod policy;
mod trajectory;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use eval::{
    evaluate, expected_return, expected_return_under, horizon_for_tolerance, kl_policies,
    occupancy, occupancy_under, optimal_deterministic, policy_evaluate, state_marginal,
    truncated_return, EvalMethod, Evaluation, DEFAULT_TRUNCATION_TOL, DIRECT_SOLVE_LIMIT,
};
pub use kernel::{Kernel, STOCHASTIC_TOL};
pub use policy::SoftmaxPolicy;
pub use trajectory::{
    enumerate_trajectories, for_each_trajectory, sample_trajectory, sample_trajectory_with,
    EnumeratedEntry, EnumeratedTrajectorySet, Step, Trajectory, ENUMERATION_LIMIT,
};

/// Finite discounted MDP with strictly positive rewards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MdpRepr", into = "MdpRepr")]
pub struct TabularMdp {
    kernel: Kernel,
    reward: Vec<f64>,
    mu0: Vec<f64>,
    gamma: f64,
}

#[derive(Serialize, Deserialize)]
struct MdpRepr {
    kernel: Kernel,
    reward: Vec<f64>,
    mu0: Vec<f64>,
    gamma: f64,
}

impl TryFrom<MdpRepr> for TabularMdp {
    type Error = Error;
    fn try_from(r: MdpRepr) -> Result<Self> {
        TabularMdp::new(r.kernel, r.reward, r.mu0, r.gamma)
    }
}

impl From<TabularMdp> for MdpRepr {
    fn from(m: TabularMdp) -> Self {
        MdpRepr {
            kernel: m.kernel,
            reward: m.reward,
            mu0: m.mu0,
            gamma: m.gamma,
        }
    }
}

pub(crate) fn check_distribution(v: &[f64], what: &str) -> Result<()> {
    if v.iter().any(|p| !p.is_finite() || *p < 0.0) {
        return Err(Error::invalid(format!("{what} has a negative or non-finite entry")));
    }
    let sum: f64 = v.iter().sum();
    if (sum - 1.0).abs() > STOCHASTIC_TOL {
        return Err(Error::invalid(format!("{what} sums to {sum}")));
    }
    Ok(())
}

pub(crate) fn check_rewards(reward: &[f64]) -> Result<()> {
    if let Some(r) = reward.iter().find(|r| !r.is_finite() || **r <= 0.0) {
        return Err(Error::invalid(format!("rewards must be strictly positive, got {r}")));
    }
    Ok(())
}

pub(crate) fn check_gamma(gamma: f64) -> Result<()> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return Err(Error::invalid(format!("gamma must lie in (0,1), got {gamma}")));
    }
    Ok(())
}

impl TabularMdp {
    pub fn new(kernel: Kernel, reward: Vec<f64>, mu0: Vec<f64>, gamma: f64) -> Result<Self> {
        let (ns, na) = (kernel.n_states(), kernel.n_actions());
        if reward.len() != ns * na {
            return Err(Error::Shape(format!(
                "reward has {} entries, expected {}",
                reward.len(),
                ns * na
            )));
        }
        if mu0.len() != ns {
            return Err(Error::Shape(format!(
                "mu0 has {} entries, expected {ns}",
                mu0.len()
            )));
        }
        check_rewards(&reward)?;
        check_distribution(&mu0, "mu0")?;
        check_gamma(gamma)?;
        Ok(TabularMdp {
            kernel,
            reward,
            mu0,
            gamma,
        })
    }

    pub fn n_states(&self) -> usize {
        self.kernel.n_states()
    }

    pub fn n_actions(&self) -> usize {
        self.kernel.n_actions()
    }

    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }

    pub fn rewards(&self) -> &[f64] {
        &self.reward
    }

    #[inline]
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions() + a]
    }

    pub fn mu0(&self) -> &[f64] {
        &self.mu0
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn r_max(&self) -> f64 {
        self.reward.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn r_min(&self) -> f64 {
        self.reward.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// Same rewards, start distribution and discount under another kernel.
    pub fn with_kernel(&self, kernel: Kernel) -> Result<Self> {
        if !kernel.same_shape(&self.kernel) {
            return Err(Error::Shape("replacement kernel has a different shape".into()));
        }
        TabularMdp::new(kernel, self.reward.clone(), self.mu0.clone(), self.gamma)
    }

    pub fn with_mu0(&self, mu0: Vec<f64>) -> Result<Self> {
        TabularMdp::new(self.kernel.clone(), self.reward.clone(), mu0, self.gamma)
    }

    pub(crate) fn check_policy(&self, policy: &SoftmaxPolicy) -> Result<()> {
        if policy.n_states() != self.n_states() || policy.n_actions() != self.n_actions() {
            return Err(Error::Shape(format!(
                "policy is {}x{}, mdp is {}x{}",
                policy.n_states(),
                policy.n_actions(),
                self.n_states(),
                self.n_actions()
            )));
        }
        Ok(())
    }
}
