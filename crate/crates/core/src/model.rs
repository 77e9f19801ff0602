//! Offline datasets, count-based dynamics ensembles and branched rollouts.

use std::collections::VecDeque;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{occupancy, Kernel, SoftmaxPolicy, TabularMdp};
use crate::rng::{rng_from, sample_index, stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Env,
    Model,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransitionSample {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    pub source: Source,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BufferTag {
    Env,
    Model,
    Policy,
}

/// Transition store. A finite capacity evicts the oldest samples first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    tag: BufferTag,
    capacity: Option<usize>,
    samples: VecDeque<TransitionSample>,
}

impl ReplayBuffer {
    pub fn new(tag: BufferTag, capacity: Option<usize>) -> Self {
        ReplayBuffer {
            tag,
            capacity,
            samples: VecDeque::new(),
        }
    }

    pub fn from_samples(tag: BufferTag, samples: Vec<TransitionSample>) -> Self {
        ReplayBuffer {
            tag,
            capacity: None,
            samples: samples.into(),
        }
    }

    pub fn tag(&self) -> BufferTag {
        self.tag
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn push(&mut self, sample: TransitionSample) {
        if self.capacity == Some(0) {
            return;
        }
        if let Some(cap) = self.capacity {
            while self.samples.len() >= cap {
                self.samples.pop_front();
            }
        }
        self.samples.push_back(sample);
    }

    pub fn extend(&mut self, samples: impl IntoIterator<Item = TransitionSample>) {
        for s in samples {
            self.push(s);
        }
    }

    pub fn clear(&mut self) {
        self.samples.clear();
    }

    pub fn get(&self, i: usize) -> &TransitionSample {
        &self.samples[i]
    }

    pub fn iter(&self) -> impl Iterator<Item = &TransitionSample> {
        self.samples.iter()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<&TransitionSample> {
        if self.samples.is_empty() {
            None
        } else {
            Some(&self.samples[rng.gen_range(0..self.samples.len())])
        }
    }

    /// Visit counts `n[s][a][s']`, row-major.
    pub fn transition_counts(&self, n_states: usize, n_actions: usize) -> Vec<f64> {
        let mut c = vec![0.0; n_states * n_actions * n_states];
        for x in &self.samples {
            c[(x.state * n_actions + x.action) * n_states + x.next_state] += 1.0;
        }
        c
    }

    /// Visit counts `n[s][a]`, row-major.
    pub fn pair_counts(&self, n_states: usize, n_actions: usize) -> Vec<f64> {
        let mut c = vec![0.0; n_states * n_actions];
        for x in &self.samples {
            c[x.state * n_actions + x.action] += 1.0;
        }
        c
    }
}

/// Draw `n` iid transitions with `(s,a)` from the discounted occupancy of
/// `behavior` and `s'` from the true kernel.
pub fn collect_from_occupancy(
    mdp: &TabularMdp,
    behavior: &SoftmaxPolicy,
    n: usize,
    seed: u64,
) -> Result<ReplayBuffer> {
    let d = occupancy(mdp, behavior, 1e-12)?;
    let na = mdp.n_actions();
    let mut rng = rng_from(seed, stream::DATASET, 0);
    let mut buf = ReplayBuffer::new(BufferTag::Env, None);
    for _ in 0..n {
        let sa = sample_index(&d, &mut rng);
        let (s, a) = (sa / na, sa % na);
        let next = sample_index(mdp.kernel().row(s, a), &mut rng);
        buf.push(TransitionSample {
            state: s,
            action: a,
            reward: mdp.reward(s, a),
            next_state: next,
            source: Source::Env,
        });
    }
    Ok(buf)
}

/// Concatenate `n_traj` behaviour rollouts of length `horizon` from `mu0`.
pub fn collect_trajectories(
    mdp: &TabularMdp,
    behavior: &SoftmaxPolicy,
    n_traj: usize,
    horizon: usize,
    seed: u64,
) -> Result<ReplayBuffer> {
    mdp.check_policy(behavior)?;
    let mut buf = ReplayBuffer::new(BufferTag::Env, None);
    for i in 0..n_traj {
        let mut rng = rng_from(seed, stream::DATASET, 1 + i as u64);
        let traj = crate::mdp::sample_trajectory_with(
            mdp.kernel(),
            mdp.rewards(),
            mdp.mu0(),
            behavior,
            horizon,
            &mut rng,
        );
        buf.extend(traj.steps.into_iter().map(|st| TransitionSample {
            state: st.state,
            action: st.action,
            reward: st.reward,
            next_state: st.next_state,
            source: Source::Env,
        }));
    }
    Ok(buf)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularModelEnsemble {
    members: Vec<Kernel>,
    smoothing: f64,
}

impl TabularModelEnsemble {
    /// Ensemble holding fixed kernels, e.g. the true dynamics.
    pub fn from_kernels(members: Vec<Kernel>) -> Result<Self> {
        let first = members
            .first()
            .ok_or_else(|| Error::invalid("ensemble needs at least one member"))?;
        if members.iter().any(|k| !k.same_shape(first)) {
            return Err(Error::Shape("ensemble members differ in shape".into()));
        }
        Ok(TabularModelEnsemble {
            members,
            smoothing: 0.0,
        })
    }

    pub fn members(&self) -> &[Kernel] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    /// Entrywise average of the members.
    pub fn mean_kernel(&self) -> Kernel {
        let first = &self.members[0];
        let n = self.members.len() as f64;
        let mut probs = vec![0.0; first.as_slice().len()];
        for m in &self.members {
            for (acc, p) in probs.iter_mut().zip(m.as_slice()) {
                *acc += p / n;
            }
        }
        let (ns, na) = (first.n_states(), first.n_actions());
        for row in probs.chunks_mut(ns) {
            let z: f64 = row.iter().sum();
            row.iter_mut().for_each(|p| *p /= z);
        }
        Kernel::new(ns, na, probs).expect("average of stochastic kernels")
    }

    pub fn max_pairwise_distance(&self) -> f64 {
        let mut d: f64 = 0.0;
        for (i, a) in self.members.iter().enumerate() {
            for b in &self.members[i + 1..] {
                d = d.max(a.max_abs_diff(b));
            }
        }
        d
    }
}

pub const DEFAULT_MEMBERS: usize = 5;
pub const DEFAULT_SMOOTHING: f64 = 1.0;

fn smoothed_kernel(counts: &[f64], ns: usize, na: usize, smoothing: f64) -> Result<Kernel> {
    let mut probs = Vec::with_capacity(counts.len());
    for row in counts.chunks(ns) {
        let total: f64 = row.iter().sum();
        let z = total + smoothing * ns as f64;
        probs.extend(row.iter().map(|c| (c + smoothing) / z));
        // Keep the row sum within the construction tolerance.
        let start = probs.len() - ns;
        let sum: f64 = probs[start..].iter().sum();
        probs[start..].iter_mut().for_each(|p| *p /= sum);
    }
    Kernel::new(ns, na, probs)
}

/// Fit `n_members` smoothed count models on bootstrap resamples of `data`.
pub fn fit_ensemble(
    data: &ReplayBuffer,
    n_states: usize,
    n_actions: usize,
    n_members: usize,
    smoothing: f64,
    seed: u64,
) -> Result<TabularModelEnsemble> {
    if data.is_empty() {
        return Err(Error::EmptyDataset("ensemble training data"));
    }
    if !(smoothing > 0.0 && smoothing.is_finite()) {
        return Err(Error::invalid("smoothing must be positive"));
    }
    if n_members == 0 {
        return Err(Error::invalid("ensemble needs at least one member"));
    }
    if data
        .iter()
        .any(|x| x.state >= n_states || x.next_state >= n_states || x.action >= n_actions)
    {
        return Err(Error::invalid("dataset index out of range"));
    }
    let n = data.len();
    let members = (0..n_members)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from(seed, stream::BOOTSTRAP, i as u64);
            let mut counts = vec![0.0; n_states * n_actions * n_states];
            for _ in 0..n {
                let x = data.get(rng.gen_range(0..n));
                counts[(x.state * n_actions + x.action) * n_states + x.next_state] += 1.0;
            }
            smoothed_kernel(&counts, n_states, n_actions, smoothing)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TabularModelEnsemble { members, smoothing })
}

/// `b` branches of `h` model steps each, starting from states of `init`.
/// Branch `j` draws from its own derived stream, so the output order and
/// contents do not depend on the thread pool.
pub fn rollout(
    ensemble: &TabularModelEnsemble,
    policy: &SoftmaxPolicy,
    reward: &[f64],
    init: &ReplayBuffer,
    h: usize,
    b: usize,
    seed: u64,
) -> Result<Vec<TransitionSample>> {
    if h == 0 || b == 0 {
        return Err(Error::invalid("rollout length and branch count must be positive"));
    }
    if init.is_empty() {
        return Err(Error::EmptyDataset("rollout start states"));
    }
    let k0 = &ensemble.members[0];
    let (ns, na) = (k0.n_states(), k0.n_actions());
    if policy.n_states() != ns || policy.n_actions() != na || reward.len() != ns * na {
        return Err(Error::Shape("rollout inputs disagree on shape".into()));
    }
    let branches: Vec<Vec<TransitionSample>> = (0..b)
        .into_par_iter()
        .map(|j| {
            let mut rng = rng_from(seed, stream::ROLLOUT, j as u64);
            let mut s = init.get(rng.gen_range(0..init.len())).state;
            let mut out = Vec::with_capacity(h);
            for _ in 0..h {
                let a = sample_index(policy.probs(s), &mut rng);
                let m = &ensemble.members[rng.gen_range(0..ensemble.len())];
                let next = sample_index(m.row(s, a), &mut rng);
                out.push(TransitionSample {
                    state: s,
                    action: a,
                    reward: reward[s * na + a],
                    next_state: next,
                    source: Source::Model,
                });
                s = next;
            }
            out
        })
        .collect();
    Ok(branches.into_iter().flatten().collect())
}
