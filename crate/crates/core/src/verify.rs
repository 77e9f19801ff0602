//! Numerical checks of the lower bound, the importance-sampling identity,
//! the KL forms and the classifier odds, plus seeded instance suites.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::classifier::{train_action_classifier, train_transition_classifier, ClassifierTrainConfig};
use crate::error::{Error, Result};
use crate::mdp::{
    for_each_trajectory, horizon_for_tolerance, truncated_return, Kernel, SoftmaxPolicy,
    TabularMdp,
};
use crate::model::{BufferTag, ReplayBuffer, Source, TransitionSample};
use crate::rng::{rng_from, sample_index, stream};
use crate::sar::{
    kl_rows, practical_sar_exact, shift_weighting, theoretical_sar, translate_reward, Densities,
    RewardRange, SarConfig,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CheckKind {
    /// Passes when `worst_margin >= -tolerance`.
    Inequality,
    /// Passes when `|worst_margin| <= tolerance`.
    Identity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub check_name: String,
    pub kind: CheckKind,
    pub instances_run: usize,
    pub worst_margin: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// Offending instance, serialised for replay.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub failing_instance: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub note: Option<String>,
}

impl VerificationReport {
    fn single(name: &str, kind: CheckKind, margin: f64, tolerance: f64) -> Self {
        VerificationReport {
            check_name: name.to_string(),
            kind,
            instances_run: 1,
            worst_margin: margin,
            tolerance,
            passed: passes(kind, margin, tolerance),
            failing_instance: None,
            note: None,
        }
    }

    /// Fold per-instance reports into one, keeping the worst margin.
    fn merge<I: Serialize>(name: &str, parts: Vec<(VerificationReport, I)>) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::invalid("empty verification suite"))?;
        let kind = first.0.kind;
        let tolerance = first.0.tolerance;
        let badness = |r: &VerificationReport| match kind {
            CheckKind::Inequality => -r.worst_margin,
            CheckKind::Identity => r.worst_margin.abs(),
        };
        let mut worst = 0;
        for (i, (r, _)) in parts.iter().enumerate() {
            if badness(r) > badness(&parts[worst].0) || r.worst_margin.is_nan() {
                worst = i;
            }
        }
        let passed = parts.iter().all(|(r, _)| r.passed);
        let failing_instance = if passed {
            None
        } else {
            let idx = parts.iter().position(|(r, _)| !r.passed).unwrap_or(worst);
            Some(serde_json::to_string(&parts[idx].1)?)
        };
        Ok(VerificationReport {
            check_name: name.to_string(),
            kind,
            instances_run: parts.len(),
            worst_margin: parts[worst].0.worst_margin,
            tolerance,
            passed,
            failing_instance,
            note: parts[worst].0.note.clone(),
        })
    }
}

fn passes(kind: CheckKind, margin: f64, tol: f64) -> bool {
    match kind {
        CheckKind::Inequality => margin >= -tol,
        CheckKind::Identity => margin.abs() <= tol,
    }
}

fn check_shapes(mdp: &TabularMdp, q: &Kernel, pi: &SoftmaxPolicy, pi_c: &SoftmaxPolicy) -> Result<()> {
    if !q.same_shape(mdp.kernel()) {
        return Err(Error::Shape("data kernel does not match the mdp".into()));
    }
    mdp.check_policy(pi)?;
    mdp.check_policy(pi_c)
}

/// Both sides of the lower bound at horizon `H`, by forward propagation of
/// the state law under `p^π` (left) and `q^{π_c}` (right).
pub fn theorem1_sides(
    mdp: &TabularMdp,
    q: &Kernel,
    pi: &SoftmaxPolicy,
    pi_c: &SoftmaxPolicy,
    horizon: usize,
) -> Result<(f64, f64)> {
    check_shapes(mdp, q, pi, pi_c)?;
    let p = mdp.kernel();
    let gamma = mdp.gamma();
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let lhs = truncated_return(p, mdp.rewards(), mdp.mu0(), gamma, pi, horizon).ln();

    let mut rho = mdp.mu0().to_vec();
    let mut next = vec![0.0; ns];
    let mut rhs = 0.0;
    let mut disc = 1.0;
    for t in 0..horizon {
        next.iter_mut().for_each(|x| *x = 0.0);
        for s in 0..ns {
            if rho[s] == 0.0 {
                continue;
            }
            for a in 0..na {
                let w = rho[s] * pi_c.prob(s, a);
                let lp = pi.log_prob(s, a) - pi_c.log_prob(s, a);
                let log_r = mdp.reward(s, a).ln();
                for (s2, &qt) in q.row(s, a).iter().enumerate() {
                    if qt == 0.0 {
                        continue;
                    }
                    let pt = p.prob(s, a, s2);
                    if pt == 0.0 {
                        return Err(Error::SupportViolation {
                            step: t,
                            detail: format!("p=0 under q={qt} at ({s},{a},{s2})"),
                        });
                    }
                    // γ^t · SAR_t = γ^t log r + (log p/q + log π/π_c) / (1-γ)
                    let lm = pt.ln() - qt.ln();
                    rhs += w * qt * (disc * log_r + (lm + lp) / (1.0 - gamma));
                    next[s2] += w * qt;
                }
            }
        }
        disc *= gamma;
        std::mem::swap(&mut rho, &mut next);
    }
    Ok((lhs, (1.0 - gamma) * rhs))
}

/// The right-hand side summed trajectory by trajectory from the per-step
/// reward, as a cross-check of [`theorem1_sides`] at small `H`.
pub fn theorem1_rhs_enumerated(
    mdp: &TabularMdp,
    q: &Kernel,
    pi: &SoftmaxPolicy,
    pi_c: &SoftmaxPolicy,
    horizon: usize,
) -> Result<f64> {
    check_shapes(mdp, q, pi, pi_c)?;
    let gamma = mdp.gamma();
    let dens = Densities {
        p: mdp.kernel(),
        q,
        pi,
        pi_c,
    };
    let mut total = 0.0;
    let mut err = None;
    for_each_trajectory(q, mdp.rewards(), mdp.mu0(), pi_c, gamma, horizon, |steps, prob, _| {
        let mut disc = 1.0;
        let mut acc = 0.0;
        for (t, st) in steps.iter().enumerate() {
            match theoretical_sar(t, st.state, st.action, st.next_state, &dens, gamma, st.reward) {
                Ok(v) => acc += disc * v,
                Err(e) => {
                    err.get_or_insert(e);
                }
            }
            disc *= gamma;
        }
        total += prob * acc;
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    Ok((1.0 - gamma) * total)
}

/// `log J(π) >= (1-γ) L(π)` at horizon `H`; rewards must already be
/// positive. Margin is `lhs - rhs`.
pub fn check_theorem1(
    mdp: &TabularMdp,
    q: &Kernel,
    pi: &SoftmaxPolicy,
    pi_c: &SoftmaxPolicy,
    horizon: usize,
    tolerance: f64,
) -> Result<VerificationReport> {
    let (lhs, rhs) = theorem1_sides(mdp, q, pi, pi_c, horizon)?;
    let tail = mdp.gamma().powi(horizon as i32) * mdp.r_max() / (1.0 - mdp.gamma());
    let mut rep = VerificationReport::single("theorem1", CheckKind::Inequality, lhs - rhs, tolerance);
    rep.note = Some(format!("H={horizon}, tail_bound={tail:.3e}"));
    Ok(rep)
}

/// `E_{q^{π_c}}[(p^π / q^{π_c}) R_H] = E_{p^π}[R_H]` over enumerated prefixes.
pub fn check_is_identity(
    mdp: &TabularMdp,
    q: &Kernel,
    pi: &SoftmaxPolicy,
    pi_c: &SoftmaxPolicy,
    horizon: usize,
    tolerance: f64,
) -> Result<VerificationReport> {
    check_shapes(mdp, q, pi, pi_c)?;
    let p = mdp.kernel();
    for s in 0..mdp.n_states() {
        for a in 0..mdp.n_actions() {
            for s2 in 0..mdp.n_states() {
                if p.prob(s, a, s2) > 0.0 && q.prob(s, a, s2) == 0.0 {
                    return Err(Error::SupportViolation {
                        step: 0,
                        detail: format!("q misses true transition ({s},{a},{s2})"),
                    });
                }
            }
        }
    }
    let gamma = mdp.gamma();
    let dens = Densities { p, q, pi, pi_c };
    let mut weighted = 0.0;
    let mut err = None;
    let mut buf = crate::mdp::Trajectory::default();
    for_each_trajectory(q, mdp.rewards(), mdp.mu0(), pi_c, gamma, horizon, |steps, prob, ret| {
        buf.steps.clear();
        buf.steps.extend_from_slice(steps);
        match shift_weighting(&buf, &dens) {
            // A zero true density contributes nothing to either side.
            Ok(w) => weighted += prob / w * ret,
            Err(Error::SupportViolation { .. }) => {}
            Err(e) => {
                err.get_or_insert(e);
            }
        }
    })?;
    if let Some(e) = err {
        return Err(e);
    }
    let mut direct = 0.0;
    for_each_trajectory(p, mdp.rewards(), mdp.mu0(), pi, gamma, horizon, |_, prob, ret| {
        direct += prob * ret;
    })?;
    Ok(VerificationReport::single(
        "is_identity",
        CheckKind::Identity,
        weighted - direct,
        tolerance,
    ))
}

/// Expected model-bias and policy-shift terms against their KL forms, per
/// row. The expectations are taken of the practical reward with the other
/// term switched off, so clamping must not bind.
pub fn check_kl_forms(
    mdp: &TabularMdp,
    q: &Kernel,
    pi: &SoftmaxPolicy,
    pi_b: &SoftmaxPolicy,
    alpha: f64,
    beta: f64,
    tolerance: f64,
) -> Result<VerificationReport> {
    check_shapes(mdp, q, pi, pi_b)?;
    let p = mdp.kernel();
    let (ns, na) = (mdp.n_states(), mdp.n_actions());
    let range = RewardRange::of(mdp.rewards());
    let model_cfg = SarConfig {
        alpha,
        beta: 0.0,
        term_clamp: f64::INFINITY,
        ..SarConfig::default()
    };
    let policy_cfg = SarConfig {
        alpha: 0.0,
        beta,
        ..model_cfg.clone()
    };
    let mut worst: f64 = 0.0;
    let mut track = |d: f64| {
        if d.abs() > worst.abs() || d.is_nan() {
            worst = d;
        }
    };
    for s in 0..ns {
        for a in 0..na {
            let r = mdp.reward(s, a);
            let base = crate::sar::log_translated(r, range, &model_cfg);
            let same = Densities {
                p,
                q,
                pi: pi_b,
                pi_c: pi_b,
            };
            let expect: f64 = (0..ns)
                .filter(|&s2| q.prob(s, a, s2) > 0.0)
                .map(|s2| {
                    q.prob(s, a, s2)
                        * (practical_sar_exact(r, range, s, a, s2, &same, &model_cfg) - base)
                })
                .sum();
            track(expect + alpha * kl_rows(q.row(s, a), p.row(s, a)));
        }
        let same = Densities {
            p,
            q: p,
            pi,
            pi_c: pi_b,
        };
        let expect: f64 = (0..na)
            .map(|a| {
                let r = mdp.reward(s, a);
                let base = crate::sar::log_translated(r, range, &policy_cfg);
                pi.prob(s, a) * (practical_sar_exact(r, range, s, a, 0, &same, &policy_cfg) - base)
            })
            .sum();
        track(expect - beta * kl_rows(pi.probs(s), pi_b.probs(s)));
    }
    Ok(VerificationReport::single(
        "kl_forms",
        CheckKind::Identity,
        worst,
        tolerance,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierCheckConfig {
    pub n_samples: usize,
    /// `|D_env| / |D_m|` for the transition check and `|D_π| / |D_env|` for
    /// the action check.
    pub size_ratio: f64,
    pub min_visits: usize,
    pub tolerance: f64,
    pub train: ClassifierTrainConfig,
}

impl Default for ClassifierCheckConfig {
    fn default() -> Self {
        ClassifierCheckConfig {
            n_samples: 100_000,
            size_ratio: 1.0,
            min_visits: 100,
            tolerance: 0.05,
            train: ClassifierTrainConfig::default(),
        }
    }
}

fn draw(
    n: usize,
    visitation: &[f64],
    n_actions: usize,
    kernel: &Kernel,
    policy: Option<&SoftmaxPolicy>,
    source: Source,
    seed: u64,
    label: u64,
) -> ReplayBuffer {
    let mut rng = rng_from(seed, stream::DATASET, label);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let (s, a) = match policy {
            Some(pi) => {
                let s = sample_index(visitation, &mut rng);
                (s, sample_index(pi.probs(s), &mut rng))
            }
            None => {
                let sa = sample_index(visitation, &mut rng);
                (sa / n_actions, sa % n_actions)
            }
        };
        let next = sample_index(kernel.row(s, a), &mut rng);
        out.push(TransitionSample {
            state: s,
            action: a,
            reward: 1.0,
            next_state: next,
            source,
        });
    }
    ReplayBuffer::from_samples(BufferTag::Env, out)
}

/// Outcome of [`check_classifier_oracle`]: one report per classifier.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierOracleReports {
    pub transition: VerificationReport,
    pub action: VerificationReport,
}

/// Train both classifiers on synthetic data with known densities and compare
/// their log-odds to the analytic ratio plus the dataset-size constant.
/// Transitions share the `(s,a)` law `π_b` over a uniform state law; the
/// action check shares a uniform state law.
pub fn check_classifier_oracle(
    p: &Kernel,
    q: &Kernel,
    pi: &SoftmaxPolicy,
    pi_b: &SoftmaxPolicy,
    cfg: &ClassifierCheckConfig,
    seed: u64,
) -> Result<ClassifierOracleReports> {
    if !p.same_shape(q) {
        return Err(Error::Shape("kernels differ in shape".into()));
    }
    let (ns, na) = (p.n_states(), p.n_actions());
    let n_big = cfg.n_samples;
    let n_small = ((n_big as f64) / cfg.size_ratio).round() as usize;
    if n_big == 0 || n_small == 0 {
        return Err(Error::EmptyDataset("classifier check data"));
    }
    let states = vec![1.0 / ns as f64; ns];
    let mut sa = vec![0.0; ns * na];
    for s in 0..ns {
        for a in 0..na {
            sa[s * na + a] = pi_b.prob(s, a) / ns as f64;
        }
    }

    // Transition classifier: env ~ p, model ~ q, same (s,a) law.
    let d_env = draw(n_big, &sa, na, p, None, Source::Env, seed, 10);
    let d_m = draw(n_small, &sa, na, q, None, Source::Model, seed, 11);
    let (c_phi, rep) = train_transition_classifier(&d_env, &d_m, ns, na, &cfg.train, seed)?;
    let n_env = d_env.transition_counts(ns, na);
    let n_m = d_m.transition_counts(ns, na);
    let mut err = 0.0;
    let mut cells = 0usize;
    for s in 0..ns {
        for a in 0..na {
            for s2 in 0..ns {
                let c = (s * na + a) * ns + s2;
                if n_env[c] + n_m[c] < cfg.min_visits as f64 {
                    continue;
                }
                let want = p.prob(s, a, s2).ln() - q.prob(s, a, s2).ln() + rep.size_log_ratio;
                err += (c_phi.log_odds(s, a, s2) - want).abs();
                cells += 1;
            }
        }
    }
    let transition = mae_report("classifier_transition", err, cells, cfg.tolerance);

    // Action classifier: D_π ~ π, D_env ~ π_b, same state law.
    let d_pi = draw(n_big, &states, na, p, Some(pi), Source::Model, seed, 12);
    let d_b = draw(n_small, &states, na, p, Some(pi_b), Source::Env, seed, 13);
    let (c_psi, rep) = train_action_classifier(&d_pi, &d_b, ns, na, &cfg.train, seed)?;
    let n_pi = d_pi.pair_counts(ns, na);
    let n_b = d_b.pair_counts(ns, na);
    let mut err = 0.0;
    let mut cells = 0usize;
    for s in 0..ns {
        for a in 0..na {
            let c = s * na + a;
            if n_pi[c] + n_b[c] < cfg.min_visits as f64 {
                continue;
            }
            let want = pi.log_prob(s, a) - pi_b.log_prob(s, a) + rep.size_log_ratio;
            err += (c_psi.log_odds(s, a) - want).abs();
            cells += 1;
        }
    }
    let action = mae_report("classifier_action", err, cells, cfg.tolerance);
    Ok(ClassifierOracleReports { transition, action })
}

fn mae_report(name: &str, err: f64, cells: usize, tol: f64) -> VerificationReport {
    let mae = if cells == 0 { f64::NAN } else { err / cells as f64 };
    let mut rep = VerificationReport::single(name, CheckKind::Identity, mae, tol);
    rep.note = Some(format!("mean absolute error over {cells} cells"));
    rep
}

/// One random verification instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub mdp: TabularMdp,
    pub q: Kernel,
    pub pi: SoftmaxPolicy,
    pub pi_c: SoftmaxPolicy,
}

fn random_rows<R: Rng>(n_rows: usize, width: usize, floor: f64, rng: &mut R) -> Vec<f64> {
    let mut out = Vec::with_capacity(n_rows * width);
    for _ in 0..n_rows {
        let row: Vec<f64> = (0..width).map(|_| rng.gen::<f64>() + floor).collect();
        let z: f64 = row.iter().sum();
        out.extend(row.iter().map(|x| x / z));
    }
    out
}

/// Random instance with `|S|` in `2..=max_states`, dense `p`, a smoothed
/// `q`, random softmax policies and rewards translated to be positive.
pub fn random_instance(
    max_states: usize,
    n_actions: usize,
    gamma: f64,
    seed: u64,
    index: u64,
) -> Result<Instance> {
    let mut rng = rng_from(seed, stream::INSTANCE, index);
    let ns = rng.gen_range(2..=max_states.max(2));
    let p = Kernel::new(ns, n_actions, random_rows(ns * n_actions, ns, 0.02, &mut rng))?;
    let q = Kernel::new(ns, n_actions, random_rows(ns * n_actions, ns, 0.2, &mut rng))?;
    let raw: Vec<f64> = (0..ns * n_actions).map(|_| rng.gen::<f64>()).collect();
    let range = RewardRange::of(&raw);
    let sar = SarConfig::default();
    let reward = raw
        .iter()
        .map(|&r| translate_reward(r, range.r_max, range.r_min, &sar))
        .collect();
    let mu0 = random_rows(1, ns, 0.1, &mut rng);
    let mdp = TabularMdp::new(p, reward, mu0, gamma)?;
    let logits = |rng: &mut crate::rng::LabRng| -> Result<SoftmaxPolicy> {
        let l = (0..ns * n_actions).map(|_| rng.gen_range(-2.0..2.0)).collect();
        SoftmaxPolicy::new(ns, n_actions, l)
    };
    let pi = logits(&mut rng)?;
    let pi_c = logits(&mut rng)?;
    Ok(Instance { mdp, q, pi, pi_c })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifyConfig {
    pub seed: u64,
    pub max_states: usize,
    pub gamma: f64,
    pub theorem1_instances: usize,
    pub theorem1_tolerance: f64,
    /// Horizon is the smallest with `γ^H r_max / (1-γ)` below this.
    pub theorem1_tail: f64,
    pub is_instances: usize,
    pub is_horizon: usize,
    pub is_tolerance: f64,
    pub kl_rows: usize,
    pub kl_tolerance: f64,
    pub classifier: ClassifierCheckConfig,
}

impl Default for VerifyConfig {
    fn default() -> Self {
        VerifyConfig {
            seed: 2024,
            max_states: 4,
            gamma: 0.9,
            theorem1_instances: 100,
            theorem1_tolerance: 1e-6,
            theorem1_tail: 1e-7,
            is_instances: 50,
            is_horizon: 5,
            is_tolerance: 1e-10,
            kl_rows: 1000,
            kl_tolerance: 1e-12,
            classifier: ClassifierCheckConfig::default(),
        }
    }
}

pub fn theorem1_suite(cfg: &VerifyConfig) -> Result<VerificationReport> {
    let parts = (0..cfg.theorem1_instances as u64)
        .into_par_iter()
        .map(|i| {
            let inst = random_instance(cfg.max_states, 2, cfg.gamma, cfg.seed, i)?;
            let h = horizon_for_tolerance(cfg.gamma, inst.mdp.r_max(), cfg.theorem1_tail);
            let rep = check_theorem1(&inst.mdp, &inst.q, &inst.pi, &inst.pi_c, h, cfg.theorem1_tolerance)?;
            Ok((rep, inst))
        })
        .collect::<Result<Vec<_>>>()?;
    VerificationReport::merge("theorem1", parts)
}

pub fn is_identity_suite(cfg: &VerifyConfig) -> Result<VerificationReport> {
    let parts = (0..cfg.is_instances as u64)
        .into_par_iter()
        .map(|i| {
            let inst = random_instance(cfg.max_states, 2, cfg.gamma, cfg.seed ^ 0x15, i)?;
            let rep = check_is_identity(
                &inst.mdp,
                &inst.q,
                &inst.pi,
                &inst.pi_c,
                cfg.is_horizon,
                cfg.is_tolerance,
            )?;
            Ok((rep, inst))
        })
        .collect::<Result<Vec<_>>>()?;
    VerificationReport::merge("is_identity", parts)
}

/// Each instance contributes `|S|·|A|` model rows and `|S|` policy rows;
/// instances are drawn until `kl_rows` rows of each kind are covered.
pub fn kl_forms_suite(cfg: &VerifyConfig) -> Result<VerificationReport> {
    let mut parts = Vec::new();
    let (mut rows, mut model_rows) = (0, 0);
    let mut i = 0u64;
    while rows < cfg.kl_rows {
        let inst = random_instance(cfg.max_states, 2, cfg.gamma, cfg.seed ^ 0x2f, i)?;
        let mut rng = rng_from(cfg.seed, stream::INSTANCE, 1_000_000 + i);
        let alpha = rng.gen_range(0.0..2.0);
        let beta = rng.gen_range(0.0..2.0);
        let rep = check_kl_forms(&inst.mdp, &inst.q, &inst.pi, &inst.pi_c, alpha, beta, cfg.kl_tolerance)?;
        rows += inst.mdp.n_states();
        model_rows += inst.mdp.n_states() * inst.mdp.n_actions();
        parts.push((rep, inst));
        i += 1;
    }
    let mut rep = VerificationReport::merge("kl_forms", parts)?;
    rep.note = Some(format!("{rows} policy rows, {model_rows} model rows"));
    Ok(rep)
}

/// Fixed 3-state instance for the classifier check.
pub fn classifier_suite(cfg: &VerifyConfig) -> Result<ClassifierOracleReports> {
    let inst = random_instance(3, 2, cfg.gamma, cfg.seed ^ 0x3c, 0)?;
    check_classifier_oracle(
        inst.mdp.kernel(),
        &inst.q,
        &inst.pi,
        &inst.pi_c,
        &cfg.classifier,
        cfg.seed,
    )
}

/// All four checks, in a fixed order.
pub fn run_all(cfg: &VerifyConfig) -> Result<Vec<VerificationReport>> {
    let cls = classifier_suite(cfg)?;
    Ok(vec![
        theorem1_suite(cfg)?,
        is_identity_suite(cfg)?,
        kl_forms_suite(cfg)?,
        cls.transition,
        cls.action,
    ])
}
