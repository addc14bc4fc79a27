//! Approximate max-min coverage of revealing pairs.
//!
//! The trajectory reward counts distinct uncovered pairs visited, so the
//! planner works on the augmented state `(s, mask)` where `mask` holds the
//! pairs not yet visited this episode. The max-min over tasks is attacked
//! with multiplicative weights on tasks against best responses computed on
//! the weight-averaged kernel, each projected back to a Markov policy.

use std::collections::HashMap;

use rand::Rng;

use crate::error::IdentifyError;
use crate::mdp::{Policy, TabularMdp};
use crate::task_set::TaskSet;

use super::env::Environment;

const MAX_PAIRS: usize = 12;
const MAX_ITERS: usize = 500;
const STEP: f64 = 0.1;
const GAP_TOL: f64 = 0.05;

struct Game<'a> {
    ts: &'a TaskSet,
    /// Bit of each `(s, a)` in the uncovered set, indexed `s * A + a`.
    bit: Vec<Option<usize>>,
    k: usize,
}

impl<'a> Game<'a> {
    fn new(ts: &'a TaskSet, uncovered: &[(usize, usize)]) -> Result<Self, IdentifyError> {
        if uncovered.len() > MAX_PAIRS {
            return Err(IdentifyError::CoverageTooLarge(uncovered.len()));
        }
        let sh = ts.shape();
        let mut bit = vec![None; sh.num_states * sh.num_actions];
        for (k, &(s, a)) in uncovered.iter().enumerate() {
            if s >= sh.num_states || a >= sh.num_actions {
                return Err(IdentifyError::InvalidParameter(format!("pair ({s}, {a}) out of range")));
            }
            bit[s * sh.num_actions + a] = Some(k);
        }
        Ok(Self {
            ts,
            bit,
            k: uncovered.len(),
        })
    }

    fn gain(&self, s: usize, a: usize, mask: usize) -> (f64, usize) {
        match self.bit[s * self.ts.shape().num_actions + a] {
            Some(b) if mask >> b & 1 == 1 => (1.0, mask & !(1 << b)),
            _ => (0.0, mask),
        }
    }

    /// Expected number of distinct uncovered pairs visited, per task.
    fn values(&self, policy: &Policy) -> Vec<f64> {
        self.ts
            .tasks()
            .iter()
            .map(|m| self.value_on(m, policy))
            .collect()
    }

    fn value_on(&self, mdp: &TabularMdp, policy: &Policy) -> f64 {
        let s_n = mdp.num_states();
        let masks = 1usize << self.k;
        let mut dist = vec![0.0; s_n * masks];
        dist[mdp.initial_state() * masks + masks - 1] = 1.0;
        let mut value = 0.0;
        for t in 1..=mdp.horizon() {
            let mut next = vec![0.0; s_n * masks];
            for s in 0..s_n {
                let rule = policy.rule(t, s);
                for mask in 0..masks {
                    let d = dist[s * masks + mask];
                    if d == 0.0 {
                        continue;
                    }
                    for (a, &pa) in rule.iter().enumerate() {
                        if pa == 0.0 {
                            continue;
                        }
                        let (g, m2) = self.gain(s, a, mask);
                        value += d * pa * g;
                        if t < mdp.horizon() {
                            for (s2, p) in mdp.row(s, a).iter().enumerate() {
                                if *p > 0.0 {
                                    next[s2 * masks + m2] += d * pa * p;
                                }
                            }
                        }
                    }
                }
            }
            dist = next;
        }
        value
    }

    /// Best response on the `weights`-averaged kernel, projected to a Markov
    /// policy by visitation-weighted averaging over masks.
    fn best_response(&self, weights: &[f64]) -> Policy {
        let sh = self.ts.shape();
        let (s_n, a_n, horizon) = (sh.num_states, sh.num_actions, sh.horizon);
        let masks = 1usize << self.k;
        let mut kernel: Vec<Vec<(usize, f64)>> = vec![Vec::new(); s_n * a_n];
        for s in 0..s_n {
            for a in 0..a_n {
                for s2 in 0..s_n {
                    let p: f64 = self
                        .ts
                        .tasks()
                        .iter()
                        .zip(weights)
                        .map(|(m, w)| w * m.prob(s, a, s2))
                        .sum();
                    if p > 0.0 {
                        kernel[s * a_n + a].push((s2, p));
                    }
                }
            }
        }
        let mut next = vec![0.0; s_n * masks];
        let mut current = vec![0.0; s_n * masks];
        let mut act = vec![0u8; horizon * s_n * masks];
        for t in (1..=horizon).rev() {
            for s in 0..s_n {
                for mask in 0..masks {
                    let mut best = (f64::NEG_INFINITY, 0);
                    for a in 0..a_n {
                        let (g, m2) = self.gain(s, a, mask);
                        let q = g + kernel[s * a_n + a]
                            .iter()
                            .map(|&(s2, p)| p * next[s2 * masks + m2])
                            .sum::<f64>();
                        if q > best.0 + 1e-12 {
                            best = (q, a);
                        }
                    }
                    current[s * masks + mask] = best.0;
                    act[((t - 1) * s_n + s) * masks + mask] = best.1 as u8;
                }
            }
            std::mem::swap(&mut next, &mut current);
        }
        // Forward pass for the visitation weights.
        let mut probs = vec![0.0; horizon * s_n * a_n];
        let mut dist = vec![0.0; s_n * masks];
        dist[sh.initial_state * masks + masks - 1] = 1.0;
        for t in 1..=horizon {
            let mut nd = vec![0.0; s_n * masks];
            for s in 0..s_n {
                let rule = &mut probs[((t - 1) * s_n + s) * a_n..((t - 1) * s_n + s + 1) * a_n];
                let mut total = 0.0;
                for mask in 0..masks {
                    let d = dist[s * masks + mask];
                    if d == 0.0 {
                        continue;
                    }
                    let a = act[((t - 1) * s_n + s) * masks + mask] as usize;
                    rule[a] += d;
                    total += d;
                    let (_, m2) = self.gain(s, a, mask);
                    for &(s2, p) in &kernel[s * a_n + a] {
                        nd[s2 * masks + m2] += d * p;
                    }
                }
                if total > 0.0 {
                    rule.iter_mut().for_each(|x| *x /= total);
                } else {
                    rule[act[((t - 1) * s_n + s) * masks + masks - 1] as usize] = 1.0;
                }
            }
            dist = nd;
        }
        Policy::new(horizon, s_n, a_n, probs).expect("projected rules are distributions")
    }
}

fn min_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

/// Approximate `argmax_pi min_i E_i[#distinct uncovered pairs visited]`.
///
/// Runs up to 500 multiplicative-weights rounds (step 0.1 on payoffs scaled
/// to `[0, 1]`), stopping once the duality-gap estimate drops to 0.05. The
/// average iterate is returned unless some single iterate has a strictly
/// better worst-task value.
pub fn coverage_game_policy(
    ts: &TaskSet,
    uncovered: &[(usize, usize)],
) -> Result<Policy, IdentifyError> {
    let game = Game::new(ts, uncovered)?;
    let sh = ts.shape();
    if uncovered.is_empty() {
        return Ok(Policy::uniform(sh.horizon, sh.num_states, sh.num_actions));
    }
    let m = ts.len();
    let scale = game.k as f64;
    let mut w = vec![1.0 / m as f64; m];
    let mut w_sum = vec![0.0; m];
    let mut rule_sum = vec![0.0; sh.horizon * sh.num_states * sh.num_actions];
    let mut best_iter: Option<(Policy, f64)> = None;
    let mut iters = 0;
    for it in 1..=MAX_ITERS {
        iters = it;
        let br = game.best_response(&w);
        let v = game.values(&br);
        rule_sum.iter_mut().zip(br.probs_flat()).for_each(|(acc, p)| *acc += p);
        w_sum.iter_mut().zip(&w).for_each(|(acc, x)| *acc += x);
        let worst = min_of(&v);
        if best_iter.as_ref().is_none_or(|(_, b)| worst > *b) {
            best_iter = Some((br, worst));
        }
        for (wi, vi) in w.iter_mut().zip(&v) {
            *wi *= (-STEP * vi / scale).exp();
        }
        let z: f64 = w.iter().sum();
        w.iter_mut().for_each(|x| *x /= z);
        if it == 1 || it % 10 == 0 {
            let avg = average(&rule_sum, it, sh.horizon, sh.num_states, sh.num_actions);
            let lower = min_of(&game.values(&avg)).max(best_iter.as_ref().unwrap().1);
            let w_bar: Vec<f64> = w_sum.iter().map(|x| x / it as f64).collect();
            let upper: f64 = game
                .values(&game.best_response(&w_bar))
                .iter()
                .zip(&w_bar)
                .map(|(v, w)| v * w)
                .sum();
            if upper - lower <= GAP_TOL {
                break;
            }
        }
    }
    let avg = average(&rule_sum, iters, sh.horizon, sh.num_states, sh.num_actions);
    let avg_worst = min_of(&game.values(&avg));
    match best_iter {
        Some((pi, b)) if b > avg_worst => Ok(pi),
        _ => Ok(avg),
    }
}

fn average(rule_sum: &[f64], it: usize, t: usize, s: usize, a: usize) -> Policy {
    let probs: Vec<f64> = rule_sum
        .chunks(a)
        .flat_map(|rule| {
            let z: f64 = rule.iter().sum();
            rule.iter().map(move |x| x / z)
        })
        .collect();
    debug_assert!(it > 0);
    Policy::new(t, s, a, probs).expect("averaged rules are distributions")
}

/// Exact expected number of distinct pairs of `uncovered` visited by
/// `policy`, per task.
pub fn coverage_values(
    ts: &TaskSet,
    policy: &Policy,
    uncovered: &[(usize, usize)],
) -> Result<Vec<f64>, IdentifyError> {
    let game = Game::new(ts, uncovered)?;
    for m in ts.tasks() {
        policy.check_shape(m)?;
    }
    Ok(game.values(policy))
}

/// Samples collected per revealing pair by [`revealing_policies_sampling`].
#[derive(Debug, Clone, PartialEq)]
pub struct Harvest {
    pub samples: Vec<Vec<usize>>,
    pub episodes: usize,
    /// Episodes until every pair had been visited at least once.
    pub first_cover_episodes: usize,
}

/// Adaptive coverage: deploy the coverage-game policy for the pairs not yet
/// visited in the current sweep, drop the pairs each trajectory visits, and
/// start a new sweep over under-sampled pairs until each holds `n` samples.
pub fn revealing_policies_sampling<R: Rng>(
    env: &mut Environment<'_, R>,
    ts: &TaskSet,
    revealing: &[(usize, usize)],
    n: usize,
) -> Result<Harvest, IdentifyError> {
    if revealing.len() > MAX_PAIRS {
        return Err(IdentifyError::CoverageTooLarge(revealing.len()));
    }
    let mut samples: Vec<Vec<usize>> = vec![Vec::new(); revealing.len()];
    let mut uncovered: Vec<usize> = (0..revealing.len()).collect();
    let mut cache: HashMap<Vec<usize>, usize> = HashMap::new();
    let start = env.used();
    let mut first_cover = None;
    while samples.iter().any(|x| x.len() < n) {
        if uncovered.is_empty() {
            first_cover.get_or_insert(env.used() - start);
            uncovered = (0..revealing.len()).filter(|&k| samples[k].len() < n).collect();
        }
        let id = match cache.get(&uncovered) {
            Some(&id) => id,
            None => {
                let pairs: Vec<(usize, usize)> = uncovered.iter().map(|&k| revealing[k]).collect();
                let id = env.register(coverage_game_policy(ts, &pairs)?)?;
                cache.insert(uncovered.clone(), id);
                id
            }
        };
        let mut seen = vec![false; revealing.len()];
        env.episode(id, |_, step| {
            if let Some(k) = revealing
                .iter()
                .position(|&(s, a)| s == step.state && a == step.action)
            {
                if !seen[k] {
                    seen[k] = true;
                    samples[k].push(step.next_state);
                }
            }
            true
        })?;
        uncovered.retain(|&k| !seen[k]);
    }
    let episodes = env.used() - start;
    Ok(Harvest {
        samples,
        episodes,
        first_cover_episodes: first_cover.unwrap_or(episodes),
    })
}
