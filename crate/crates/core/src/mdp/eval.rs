use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{check_distribution, check_gamma, Kernel, SoftmaxPolicy, TabularMdp};
use crate::error::{Error, Result};

/// Above this many state-action pairs `Auto` switches to iteration.
pub const DIRECT_SOLVE_LIMIT: usize = 10_000;

/// Default truncation tolerance for infinite-horizon oracles.
pub const DEFAULT_TRUNCATION_TOL: f64 = 1e-6;

const MAX_SWEEPS: usize = 1_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EvalMethod {
    #[default]
    Auto,
    Direct,
    Iterative,
}

impl EvalMethod {
    fn resolve(self, n_states: usize, n_actions: usize) -> EvalMethod {
        match self {
            EvalMethod::Auto if n_states * n_actions <= DIRECT_SOLVE_LIMIT => EvalMethod::Direct,
            EvalMethod::Auto => EvalMethod::Iterative,
            m => m,
        }
    }
}

/// State values and action values of one policy.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub values: Vec<f64>,
    /// Row-major `Q[s][a]`.
    pub q: Vec<f64>,
    n_actions: usize,
}

impl Evaluation {
    pub fn q(&self, s: usize, a: usize) -> f64 {
        self.q[s * self.n_actions + a]
    }
}

fn check_shapes(kernel: &Kernel, reward: &[f64], action_probs: &[f64]) -> Result<()> {
    let n = kernel.n_states() * kernel.n_actions();
    if reward.len() != n || action_probs.len() != n {
        return Err(Error::Shape(format!(
            "reward/policy tables must have {n} entries"
        )));
    }
    Ok(())
}

fn policy_probs(policy: &SoftmaxPolicy) -> Vec<f64> {
    (0..policy.n_states())
        .flat_map(|s| policy.probs(s).to_vec())
        .collect()
}

/// `P_π[s][t]` and `r_π[s]` for row-major action probabilities.
fn induced_chain(kernel: &Kernel, reward: &[f64], probs: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let (ns, na) = (kernel.n_states(), kernel.n_actions());
    let mut p = vec![0.0; ns * ns];
    let mut r = vec![0.0; ns];
    for s in 0..ns {
        for a in 0..na {
            let w = probs[s * na + a];
            if w == 0.0 {
                continue;
            }
            r[s] += w * reward[s * na + a];
            for (t, &pt) in kernel.row(s, a).iter().enumerate() {
                p[s * ns + t] += w * pt;
            }
        }
    }
    (p, r)
}

fn solve_direct(p: &[f64], rhs: &[f64], gamma: f64, transpose: bool) -> Result<Vec<f64>> {
    let n = rhs.len();
    let m = DMatrix::from_fn(n, n, |i, j| {
        let pij = if transpose { p[j * n + i] } else { p[i * n + j] };
        if i == j {
            1.0 - gamma * pij
        } else {
            -gamma * pij
        }
    });
    m.lu()
        .solve(&DVector::from_column_slice(rhs))
        .map(|x| x.iter().copied().collect())
        .ok_or_else(|| Error::invalid("singular evaluation system"))
}

fn solve_iterative(
    p: &[f64],
    rhs: &[f64],
    gamma: f64,
    transpose: bool,
    tol: f64,
) -> Result<Vec<f64>> {
    let n = rhs.len();
    // A sweep change of `eps` bounds the distance to the fixed point by
    // `eps * gamma / (1 - gamma)`.
    let stop = tol * (1.0 - gamma) / gamma;
    let mut x = rhs.to_vec();
    let mut next = vec![0.0; n];
    for _ in 0..MAX_SWEEPS {
        for i in 0..n {
            let mut acc = 0.0;
            for j in 0..n {
                let pij = if transpose { p[j * n + i] } else { p[i * n + j] };
                acc += pij * x[j];
            }
            next[i] = rhs[i] + gamma * acc;
        }
        let delta = x
            .iter()
            .zip(&next)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        std::mem::swap(&mut x, &mut next);
        if delta <= stop {
            return Ok(x);
        }
    }
    Err(Error::invalid("iterative evaluation did not converge"))
}

pub(crate) fn evaluate_probs(
    kernel: &Kernel,
    reward: &[f64],
    gamma: f64,
    probs: &[f64],
    method: EvalMethod,
    tol: f64,
) -> Result<Evaluation> {
    check_shapes(kernel, reward, probs)?;
    check_gamma(gamma)?;
    if !(tol > 0.0) {
        return Err(Error::invalid("tolerance must be positive"));
    }
    kernel.validate()?;
    let (ns, na) = (kernel.n_states(), kernel.n_actions());
    let (p, r) = induced_chain(kernel, reward, probs);
    let values = match method.resolve(ns, na) {
        EvalMethod::Iterative => solve_iterative(&p, &r, gamma, false, tol)?,
        _ => solve_direct(&p, &r, gamma, false)?,
    };
    let mut q = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            let next: f64 = kernel
                .row(s, a)
                .iter()
                .zip(&values)
                .map(|(pt, v)| pt * v)
                .sum();
            q[s * na + a] = reward[s * na + a] + gamma * next;
        }
    }
    Ok(Evaluation {
        values,
        q,
        n_actions: na,
    })
}

/// Evaluate `policy` under an arbitrary kernel and reward table.
pub fn evaluate(
    kernel: &Kernel,
    reward: &[f64],
    gamma: f64,
    policy: &SoftmaxPolicy,
    method: EvalMethod,
    tol: f64,
) -> Result<Evaluation> {
    evaluate_probs(kernel, reward, gamma, &policy_probs(policy), method, tol)
}

pub fn policy_evaluate(mdp: &TabularMdp, policy: &SoftmaxPolicy, tol: f64) -> Result<Evaluation> {
    mdp.check_policy(policy)?;
    evaluate(
        mdp.kernel(),
        mdp.rewards(),
        mdp.gamma(),
        policy,
        EvalMethod::Auto,
        tol,
    )
}

pub fn expected_return_under(
    kernel: &Kernel,
    reward: &[f64],
    mu0: &[f64],
    gamma: f64,
    policy: &SoftmaxPolicy,
) -> Result<f64> {
    check_distribution(mu0, "mu0")?;
    let ev = evaluate(kernel, reward, gamma, policy, EvalMethod::Auto, 1e-12)?;
    Ok(mu0.iter().zip(&ev.values).map(|(m, v)| m * v).sum())
}

pub fn expected_return(mdp: &TabularMdp, policy: &SoftmaxPolicy) -> Result<f64> {
    mdp.check_policy(policy)?;
    expected_return_under(mdp.kernel(), mdp.rewards(), mdp.mu0(), mdp.gamma(), policy)
}

pub(crate) fn occupancy_probs(
    kernel: &Kernel,
    mu0: &[f64],
    gamma: f64,
    probs: &[f64],
    method: EvalMethod,
    tol: f64,
) -> Result<Vec<f64>> {
    let (ns, na) = (kernel.n_states(), kernel.n_actions());
    if mu0.len() != ns || probs.len() != ns * na {
        return Err(Error::Shape("occupancy inputs disagree on shape".into()));
    }
    check_distribution(mu0, "mu0")?;
    check_gamma(gamma)?;
    let zeros = vec![0.0; ns * na];
    let (p, _) = induced_chain(kernel, &zeros, probs);
    let rhs: Vec<f64> = mu0.iter().map(|m| (1.0 - gamma) * m).collect();
    let ds = match method.resolve(ns, na) {
        EvalMethod::Iterative => solve_iterative(&p, &rhs, gamma, true, tol)?,
        _ => solve_direct(&p, &rhs, gamma, true)?,
    };
    let mut d = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            d[s * na + a] = ds[s].max(0.0) * probs[s * na + a];
        }
    }
    Ok(d)
}

/// Normalised discounted state-action occupancy `d[s][a]` under any kernel.
pub fn occupancy_under(
    kernel: &Kernel,
    mu0: &[f64],
    gamma: f64,
    policy: &SoftmaxPolicy,
    method: EvalMethod,
    tol: f64,
) -> Result<Vec<f64>> {
    occupancy_probs(kernel, mu0, gamma, &policy_probs(policy), method, tol)
}

pub fn occupancy(mdp: &TabularMdp, policy: &SoftmaxPolicy, tol: f64) -> Result<Vec<f64>> {
    mdp.check_policy(policy)?;
    occupancy_under(
        mdp.kernel(),
        mdp.mu0(),
        mdp.gamma(),
        policy,
        EvalMethod::Auto,
        tol,
    )
}

/// Sum a row-major `d[s][a]` over actions.
pub fn state_marginal(d: &[f64], n_actions: usize) -> Vec<f64> {
    d.chunks(n_actions).map(|row| row.iter().sum()).collect()
}

/// Exact `E[Σ_{t<H} γ^t r_t]` by forward propagation of the state law.
pub fn truncated_return(
    kernel: &Kernel,
    reward: &[f64],
    mu0: &[f64],
    gamma: f64,
    policy: &SoftmaxPolicy,
    horizon: usize,
) -> f64 {
    let (ns, na) = (kernel.n_states(), kernel.n_actions());
    let mut rho = mu0.to_vec();
    let mut next = vec![0.0; ns];
    let mut total = 0.0;
    let mut disc = 1.0;
    for _ in 0..horizon {
        next.iter_mut().for_each(|x| *x = 0.0);
        let mut step = 0.0;
        for s in 0..ns {
            if rho[s] == 0.0 {
                continue;
            }
            for a in 0..na {
                let w = rho[s] * policy.prob(s, a);
                step += w * reward[s * na + a];
                for (t, &pt) in kernel.row(s, a).iter().enumerate() {
                    next[t] += w * pt;
                }
            }
        }
        total += disc * step;
        disc *= gamma;
        std::mem::swap(&mut rho, &mut next);
    }
    total
}

/// Smallest `H` with `γ^H r_max / (1-γ) < tol`.
pub fn horizon_for_tolerance(gamma: f64, r_max: f64, tol: f64) -> usize {
    let mut bound = r_max.abs() / (1.0 - gamma);
    let mut h = 0;
    while bound >= tol {
        bound *= gamma;
        h += 1;
    }
    h
}

/// State-weighted `KL(π ‖ π_b)`.
pub fn kl_policies(pi: &SoftmaxPolicy, pi_b: &SoftmaxPolicy, weights: &[f64]) -> Result<f64> {
    if pi.n_states() != pi_b.n_states()
        || pi.n_actions() != pi_b.n_actions()
        || weights.len() != pi.n_states()
    {
        return Err(Error::Shape("kl inputs disagree on shape".into()));
    }
    let mut total = 0.0;
    for (s, &w) in weights.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        let kl: f64 = (0..pi.n_actions())
            .map(|a| pi.prob(s, a) * (pi.log_prob(s, a) - pi_b.log_prob(s, a)))
            .sum();
        total += w * kl.max(0.0);
    }
    Ok(total)
}

/// Optimal deterministic policy and its exact return, by policy iteration.
pub fn optimal_deterministic(mdp: &TabularMdp) -> Result<(Vec<usize>, f64)> {
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let mut actions = vec![0usize; ns];
    loop {
        let mut probs = vec![0.0; ns * na];
        for (s, &a) in actions.iter().enumerate() {
            probs[s * na + a] = 1.0;
        }
        let ev = evaluate_probs(
            mdp.kernel(),
            mdp.rewards(),
            mdp.gamma(),
            &probs,
            EvalMethod::Direct,
            1e-12,
        )?;
        let mut changed = false;
        for s in 0..ns {
            let cur = ev.q(s, actions[s]);
            let (best, qbest) = (0..na)
                .map(|a| (a, ev.q(s, a)))
                .fold((actions[s], cur), |acc, x| if x.1 > acc.1 { x } else { acc });
            if qbest > cur + 1e-12 * (1.0 + cur.abs()) {
                actions[s] = best;
                changed = true;
            }
        }
        if !changed {
            let j = mdp.mu0().iter().zip(&ev.values).map(|(m, v)| m * v).sum();
            return Ok((actions, j));
        }
    }
}
