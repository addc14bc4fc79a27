//! Test-time identification: likelihood-ratio elimination, the sampling
//! routine, and the Identify-then-Commit family.
//!
//! Every algorithm plays against an [`Environment`] wrapping the hidden test
//! task. When the episode budget runs out mid-identification the run is
//! truncated: the interrupted test's episodes are tagged as such and the
//! lowest-index surviving task is committed to.

mod coverage;
mod env;
mod lrt;
mod sampling;

pub use coverage::{coverage_game_policy, coverage_values, revealing_policies_sampling, Harvest};
pub use env::{Deployment, Environment, PolicyId};
pub use lrt::{likelihood_ratio_test, EliminationVerdict, Keep, Reason};
pub use sampling::{sampling_routine, SampleBatch};

use rand::Rng;

use crate::error::IdentifyError;
use crate::mdp::{optimal_policy, Policy};
use crate::task_set::{cluster_certificate, find_tree_split, separation_report, ClusterStructure, TaskSet};
use crate::trace::RegretTrace;

/// `ceil(c * ln^2(S m H / lambda) * ln(m H) / lambda^4)`, at least 1.
///
/// `m` is the effective set size: `M` for the flat and explore variants, `K`
/// or `N` for the two cluster phases, and the tree depth for the tree variant.
pub fn sample_count(c: f64, num_states: usize, m: f64, h: usize, lambda: f64) -> usize {
    let h = h as f64;
    let a = (num_states as f64 * m * h / lambda).ln();
    let b = (m * h).ln().max(0.0);
    ((c * a * a * b / lambda.powi(4)).ceil() as usize).max(1)
}

/// `log_{1/beta} M`.
pub fn tree_depth(m: usize, beta: f64) -> f64 {
    (m as f64).ln() / (1.0 / beta).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// Online pairwise elimination (flat, inner, or tree).
    Eliminate,
    /// Phase 1 of the cluster variant.
    ClusterPhase,
    /// Coverage collection of the explore variant.
    Explore,
    /// Offline elimination of the explore variant.
    OfflineIdentify,
}

#[derive(Debug, Clone)]
pub struct AlgorithmRun {
    pub identified_task: usize,
    /// Episodes not spent committing (identify + truncated).
    pub episodes_identify: usize,
    pub truncated: bool,
    /// Elimination tests run (split rounds for the tree variant).
    pub rounds: usize,
    pub stage_episodes: Vec<(Stage, usize)>,
    pub committed_policy: Policy,
    /// Registry of every deployed policy, indexed by [`Deployment::policy`].
    pub policies: Vec<Policy>,
    pub deployments: Vec<Deployment>,
    pub trace: RegretTrace,
}

impl AlgorithmRun {
    pub fn stage(&self, stage: Stage) -> usize {
        self.stage_episodes
            .iter()
            .filter(|(s, _)| *s == stage)
            .map(|(_, e)| e)
            .sum()
    }
}

fn check_params<R: Rng>(env: &Environment<'_, R>, ts: &TaskSet, n: usize) -> Result<(), IdentifyError> {
    if n == 0 {
        return Err(IdentifyError::InvalidParameter("n must be at least 1".into()));
    }
    if env.budget() == 0 {
        return Err(IdentifyError::InvalidParameter("H must be at least 1".into()));
    }
    if env.horizon() != ts.shape().horizon {
        return Err(IdentifyError::InvalidParameter(
            "environment horizon differs from the task set".into(),
        ));
    }
    Ok(())
}

fn commit<R: Rng>(
    mut env: Environment<'_, R>,
    ts: &TaskSet,
    survivor: usize,
    truncated: bool,
    rounds: usize,
    stage_episodes: Vec<(Stage, usize)>,
) -> Result<AlgorithmRun, IdentifyError> {
    let (pi, _) = optimal_policy(ts.task(survivor));
    let id = env.register(pi.clone())?;
    let episodes_identify = env.used();
    env.commit(id);
    let (policies, deployments, trace) = env.into_parts();
    Ok(AlgorithmRun {
        identified_task: survivor,
        episodes_identify,
        truncated,
        rounds,
        stage_episodes,
        committed_policy: pi,
        policies,
        deployments,
        trace,
    })
}

/// Two distinct positions in `0..len`, uniformly, in draw order.
pub(crate) fn draw_pair<G: Rng>(rng: &mut G, len: usize) -> (usize, usize) {
    let a = rng.random_range(0..len);
    let mut b = rng.random_range(0..len - 1);
    if b >= a {
        b += 1;
    }
    (a, b)
}

enum Outcome {
    Done(usize),
    Truncated(usize),
}

/// Pairwise elimination over `candidates` (kept sorted) until one survives.
fn eliminate<R: Rng, G: Rng>(
    env: &mut Environment<'_, R>,
    ts: &TaskSet,
    mut candidates: Vec<usize>,
    n: usize,
    rng: &mut G,
    rounds: &mut usize,
) -> Result<Outcome, IdentifyError> {
    candidates.sort_unstable();
    while candidates.len() > 1 {
        let (x, y) = draw_pair(rng, candidates.len());
        let (m1, m2) = (candidates[x], candidates[y]);
        let (s, a, _) = ts.max_separation(m1, m2);
        let mark = env.used();
        let batch = match sampling_routine(env, ts, &candidates, (s, a), n) {
            Ok(b) => b,
            Err(IdentifyError::BudgetExhausted { .. }) => {
                env.mark_truncated_since(mark);
                return Ok(Outcome::Truncated(candidates[0]));
            }
            Err(e) => return Err(e),
        };
        let verdict =
            likelihood_ratio_test(ts.task(m1).row(s, a), ts.task(m2).row(s, a), &batch.samples)?;
        let loser = if verdict.keep == Keep::First { m2 } else { m1 };
        candidates.retain(|&i| i != loser);
        *rounds += 1;
    }
    Ok(Outcome::Done(candidates[0]))
}

/// Identify-then-Commit on the whole task set.
pub fn identify_then_commit<R: Rng, G: Rng>(
    mut env: Environment<'_, R>,
    ts: &TaskSet,
    n: usize,
    rng: &mut G,
) -> Result<AlgorithmRun, IdentifyError> {
    check_params(&env, ts, n)?;
    let mut rounds = 0;
    let outcome = eliminate(&mut env, ts, (0..ts.len()).collect(), n, rng, &mut rounds)?;
    let used = env.used();
    let (survivor, truncated) = match outcome {
        Outcome::Done(i) => (i, false),
        Outcome::Truncated(i) => (i, true),
    };
    commit(env, ts, survivor, truncated, rounds, vec![(Stage::Eliminate, used)])
}

/// Double-Identify-then-Commit: eliminate clusters, then tasks inside the
/// surviving cluster.
///
/// Each cluster test uses the pair that best certifies the drawn cluster
/// against every outside task, with the two models being the least separated
/// inside/outside tasks at that pair. Sampling cycles one random
/// representative per cluster.
pub fn double_identify_then_commit<R: Rng, G: Rng>(
    mut env: Environment<'_, R>,
    ts: &TaskSet,
    cs: &ClusterStructure,
    n_cluster: usize,
    n_inner: usize,
    rng: &mut G,
) -> Result<AlgorithmRun, IdentifyError> {
    check_params(&env, ts, n_cluster.min(n_inner))?;
    let cs = ClusterStructure::new(cs.cells().to_vec(), ts.len())?;
    let reps: Vec<usize> = cs
        .cells()
        .iter()
        .map(|c| c[rng.random_range(0..c.len())])
        .collect();
    let mut alive: Vec<usize> = (0..cs.k()).collect();
    let mut rounds = 0;
    while alive.len() > 1 {
        let k = alive[rng.random_range(0..alive.len())];
        let inside = &cs.cells()[k];
        let outside: Vec<usize> = (0..ts.len()).filter(|i| !inside.contains(i)).collect();
        let cert = cluster_certificate(ts, inside, &outside).expect("both sides non-empty");
        let (s, a) = (cert.state, cert.action);
        let mark = env.used();
        let batch = match sampling_routine(&mut env, ts, &reps, (s, a), n_cluster) {
            Ok(b) => b,
            Err(IdentifyError::BudgetExhausted { .. }) => {
                env.mark_truncated_since(mark);
                let first = alive.iter().map(|&c| cs.cells()[c].iter().min().copied().unwrap());
                let survivor = first.min().unwrap();
                let used = env.used();
                return commit(env, ts, survivor, true, rounds, vec![(Stage::ClusterPhase, used)]);
            }
            Err(e) => return Err(e),
        };
        let verdict = likelihood_ratio_test(
            ts.task(cert.inside).row(s, a),
            ts.task(cert.outside).row(s, a),
            &batch.samples,
        )?;
        if verdict.keep == Keep::First {
            alive = vec![k];
        } else {
            alive.retain(|&c| c != k);
        }
        rounds += 1;
    }
    let phase1 = env.used();
    let cell = cs.cells()[alive[0]].clone();
    let outcome = eliminate(&mut env, ts, cell, n_inner, rng, &mut rounds)?;
    let stages = vec![(Stage::ClusterPhase, phase1), (Stage::Eliminate, env.used() - phase1)];
    match outcome {
        Outcome::Done(i) => commit(env, ts, i, false, rounds, stages),
        Outcome::Truncated(i) => commit(env, ts, i, true, rounds, stages),
    }
}

/// Tree-Identify-then-Commit. `rounds` counts split rounds.
pub fn tree_identify_then_commit<R: Rng, G: Rng>(
    mut env: Environment<'_, R>,
    ts: &TaskSet,
    lambda: f64,
    beta: f64,
    n: usize,
    _rng: &mut G,
) -> Result<AlgorithmRun, IdentifyError> {
    check_params(&env, ts, n)?;
    let mut alive: Vec<usize> = (0..ts.len()).collect();
    let mut rounds = 0;
    while alive.len() > 1 {
        let split = find_tree_split(ts, &alive, lambda, beta)?;
        let (s, a) = split.pair;
        // The least separated D+/D- pair at the split pair.
        let mut m = (split.d_plus[0], split.d_minus[0], f64::INFINITY);
        for &i in &split.d_plus {
            for &j in &split.d_minus {
                let d = ts.pair_l1(i, j, s, a);
                if d < m.2 {
                    m = (i, j, d);
                }
            }
        }
        let mark = env.used();
        let batch = match sampling_routine(&mut env, ts, &[m.0], (s, a), n) {
            Ok(b) => b,
            Err(IdentifyError::BudgetExhausted { .. }) => {
                env.mark_truncated_since(mark);
                let used = env.used();
                return commit(env, ts, alive[0], true, rounds, vec![(Stage::Eliminate, used)]);
            }
            Err(e) => return Err(e),
        };
        let verdict =
            likelihood_ratio_test(ts.task(m.0).row(s, a), ts.task(m.1).row(s, a), &batch.samples)?;
        alive = if verdict.keep == Keep::First {
            split.d_plus
        } else {
            split.d_minus
        };
        alive.sort_unstable();
        rounds += 1;
    }
    let used = env.used();
    commit(env, ts, alive[0], false, rounds, vec![(Stage::Eliminate, used)])
}

/// Explore-Identify-then-Commit against the task set's own revealing set.
pub fn explore_identify_then_commit<R: Rng, G: Rng>(
    env: Environment<'_, R>,
    ts: &TaskSet,
    policies: &[Policy],
    n: usize,
    rng: &mut G,
) -> Result<AlgorithmRun, IdentifyError> {
    let revealing = separation_report(ts)?.revealing_set;
    explore_identify_then_commit_on(env, ts, policies, &revealing, n, rng)
}

/// Explore-Identify-then-Commit with an explicit revealing set.
///
/// Explore cycles the policies two episodes each and records, per episode,
/// the first next state observed at every revealing pair the policy visits.
/// Identify then runs offline on the pooled samples.
pub fn explore_identify_then_commit_on<R: Rng, G: Rng>(
    mut env: Environment<'_, R>,
    ts: &TaskSet,
    policies: &[Policy],
    revealing: &[(usize, usize)],
    n: usize,
    rng: &mut G,
) -> Result<AlgorithmRun, IdentifyError> {
    check_params(&env, ts, n)?;
    if policies.is_empty() {
        return Err(crate::error::TaskSetError::EmptyPolicies.into());
    }
    if revealing.is_empty() && ts.len() > 1 {
        return Err(crate::error::TaskSetError::EmptyRevealingSet.into());
    }
    let a_n = ts.shape().num_actions;
    let mut slot = vec![usize::MAX; ts.shape().num_states * a_n];
    for (k, &(s, a)) in revealing.iter().enumerate() {
        slot[s * a_n + a] = k;
    }
    let ids = policies
        .iter()
        .map(|p| env.register(p.clone()))
        .collect::<Result<Vec<_>, _>>()?;
    let mut samples: Vec<Vec<usize>> = vec![Vec::new(); revealing.len()];
    let mut truncated = false;
    let enough = |s: &[Vec<usize>]| s.iter().all(|x| x.len() >= n);
    'explore: while !enough(&samples) {
        for &id in &ids {
            for _ in 0..2 {
                if enough(&samples) {
                    break 'explore;
                }
                let mut seen = vec![false; revealing.len()];
                let res = env.episode(id, |_, step| {
                    let k = slot[step.state * a_n + step.action];
                    if k != usize::MAX && !seen[k] {
                        seen[k] = true;
                        samples[k].push(step.next_state);
                    }
                    !seen.iter().all(|x| *x)
                });
                if let Err(IdentifyError::BudgetExhausted { .. }) = res {
                    truncated = true;
                    break 'explore;
                }
                res?;
            }
        }
    }
    let explored = env.used();
    if truncated {
        env.mark_truncated_since(0);
        return commit(env, ts, 0, true, 0, vec![(Stage::Explore, explored)]);
    }
    let mut alive: Vec<usize> = (0..ts.len()).collect();
    let mut rounds = 0;
    while alive.len() > 1 {
        let (x, y) = draw_pair(rng, alive.len());
        let (m1, m2) = (alive[x], alive[y]);
        let mut best = (0, f64::NEG_INFINITY);
        for (k, &(s, a)) in revealing.iter().enumerate() {
            let d = ts.pair_l1(m1, m2, s, a);
            if d > best.1 {
                best = (k, d);
            }
        }
        let (s, a) = revealing[best.0];
        let verdict =
            likelihood_ratio_test(ts.task(m1).row(s, a), ts.task(m2).row(s, a), &samples[best.0])?;
        let loser = if verdict.keep == Keep::First { m2 } else { m1 };
        alive.retain(|&i| i != loser);
        rounds += 1;
    }
    let offline = env.used() - explored;
    commit(
        env,
        ts,
        alive[0],
        false,
        rounds,
        vec![(Stage::Explore, explored), (Stage::OfflineIdentify, offline)],
    )
}
