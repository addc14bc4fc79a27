use crate::error::MdpError;

use super::{Policy, TabularMdp};

/// What a hitting time waits for: a state, or taking an action in a state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HitTarget {
    State(usize),
    Pair(usize, usize),
}

impl HitTarget {
    fn check(self, mdp: &TabularMdp) -> Result<(), MdpError> {
        let (s, a) = match self {
            HitTarget::State(s) => (s, 0),
            HitTarget::Pair(s, a) => (s, a),
        };
        if s >= mdp.num_states() || a >= mdp.num_actions() {
            return Err(MdpError::Index(format!("hitting target {self:?} out of range")));
        }
        Ok(())
    }

    /// Probability that `(s, rule)` counts as a hit at this step.
    fn hit_prob(self, s: usize, rule: &[f64]) -> f64 {
        match self {
            HitTarget::State(t) if t == s => 1.0,
            HitTarget::Pair(t, a) if t == s => rule[a],
            _ => 0.0,
        }
    }
}

/// Exact within-episode hitting statistics of a policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HittingStats {
    /// `E[X]` with `X = T + 1` when the target is missed.
    pub expected: f64,
    /// `P(X <= T)`.
    pub reach_prob: f64,
}

/// Policy minimising the truncated expected hitting time of `target`.
///
/// Backward DP on the cost-to-hit: `J_{T+1} = T + 1`, and at step `t` a hit
/// costs `t`. Ties go to the lowest action.
pub fn min_hitting_policy(
    mdp: &TabularMdp,
    target: HitTarget,
) -> Result<(Policy, f64), MdpError> {
    target.check(mdp)?;
    let (s_n, a_n, horizon) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    let mut next = vec![(horizon + 1) as f64; s_n];
    let mut current = vec![0.0; s_n];
    let mut actions = vec![0usize; horizon * s_n];
    for t in (1..=horizon).rev() {
        for s in 0..s_n {
            if target == HitTarget::State(s) {
                current[s] = t as f64;
                continue;
            }
            let mut best = f64::INFINITY;
            let mut best_a = 0;
            for a in 0..a_n {
                let q = if target == HitTarget::Pair(s, a) {
                    t as f64
                } else {
                    mdp.support(s, a)
                        .iter()
                        .map(|&(s2, _)| mdp.prob(s, a, s2) * next[s2])
                        .sum()
                };
                if q < best {
                    best = q;
                    best_a = a;
                }
            }
            current[s] = best;
            actions[(t - 1) * s_n + s] = best_a;
        }
        std::mem::swap(&mut next, &mut current);
    }
    let policy = Policy::for_mdp(mdp, |t, s| actions[(t - 1) * s_n + s]);
    Ok((policy, next[mdp.initial_state()]))
}

/// Forward DP over the not-yet-hit mass.
pub fn hitting_stats(
    mdp: &TabularMdp,
    policy: &Policy,
    target: HitTarget,
) -> Result<HittingStats, MdpError> {
    target.check(mdp)?;
    policy.check_shape(mdp)?;
    let s_n = mdp.num_states();
    let horizon = mdp.horizon();
    let mut mass = vec![0.0; s_n];
    mass[mdp.initial_state()] = 1.0;
    let mut expected = 0.0;
    let mut reach = 0.0;
    for t in 1..=horizon {
        let mut out = vec![0.0; s_n];
        for s in 0..s_n {
            let m = mass[s];
            if m == 0.0 {
                continue;
            }
            let rule = policy.rule(t, s);
            let h = m * target.hit_prob(s, rule);
            expected += t as f64 * h;
            reach += h;
            if t == horizon || matches!(target, HitTarget::State(x) if x == s) {
                continue;
            }
            for (a, &pa) in rule.iter().enumerate() {
                if pa == 0.0 || target == HitTarget::Pair(s, a) {
                    continue;
                }
                for &(s2, _) in mdp.support(s, a) {
                    out[s2] += m * pa * mdp.prob(s, a, s2);
                }
            }
        }
        mass = out;
    }
    let reach_prob = reach.min(1.0);
    Ok(HittingStats {
        expected: expected + (horizon + 1) as f64 * (1.0 - reach_prob),
        reach_prob,
    })
}

#[cfg(test)]
mod tests {
    use super::super::testutil::{chain, random_mdp};
    use super::super::simulate_episode;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn initial_state_is_hit_at_one() {
        let mdp = chain(4, 5);
        let (_, x) = min_hitting_policy(&mdp, HitTarget::State(0)).unwrap();
        assert_eq!(x, 1.0);
        let stats = hitting_stats(&mdp, &Policy::uniform(5, 4, 2), HitTarget::State(0)).unwrap();
        assert_eq!(stats.expected, 1.0);
        assert_eq!(stats.reach_prob, 1.0);
    }

    #[test]
    fn chain_end_hit_at_length() {
        let mdp = chain(5, 8);
        let (pi, x) = min_hitting_policy(&mdp, HitTarget::State(4)).unwrap();
        assert_eq!(x, 5.0);
        assert_eq!(pi.deterministic_action(1, 0), Some(0));
        let (_, x) = min_hitting_policy(&mdp, HitTarget::Pair(4, 1)).unwrap();
        assert_eq!(x, 5.0);
    }

    #[test]
    fn unreachable_target_truncates() {
        let mdp = chain(5, 3);
        let (_, x) = min_hitting_policy(&mdp, HitTarget::State(4)).unwrap();
        assert_eq!(x, 4.0);
        assert!(min_hitting_policy(&mdp, HitTarget::State(5)).is_err());
        assert!(min_hitting_policy(&mdp, HitTarget::Pair(0, 2)).is_err());
    }

    #[test]
    fn dp_value_matches_forward_stats() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let mdp = random_mdp(&mut rng, 5, 2, 6);
            for target in [HitTarget::State(3), HitTarget::Pair(2, 1)] {
                let (pi, x) = min_hitting_policy(&mdp, target).unwrap();
                let stats = hitting_stats(&mdp, &pi, target).unwrap();
                assert!((stats.expected - x).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn minimum_beats_random_policies() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..5 {
            let mdp = random_mdp(&mut rng, 4, 3, 6);
            let target = HitTarget::State(2);
            let (_, x) = min_hitting_policy(&mdp, target).unwrap();
            for _ in 0..100 {
                let pi = Policy::for_mdp(&mdp, |_, _| rng.random_range(0..3));
                assert!(x <= hitting_stats(&mdp, &pi, target).unwrap().expected + 1e-12);
            }
        }
    }

    #[test]
    fn forward_stats_match_monte_carlo() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let mdp = random_mdp(&mut rng, 4, 2, 5);
        let pi = Policy::uniform(5, 4, 2);
        let target = HitTarget::Pair(3, 0);
        let stats = hitting_stats(&mdp, &pi, target).unwrap();
        let trials = 40_000;
        let mut sum = 0.0;
        let mut sum_sq = 0.0;
        for h in 0..trials {
            let traj = simulate_episode(&mdp, &pi, &mut rng, h);
            let x = traj
                .steps
                .iter()
                .position(|st| st.state == 3 && st.action == 0)
                .map_or(6.0, |k| (k + 1) as f64);
            sum += x;
            sum_sq += x * x;
        }
        let mean = sum / trials as f64;
        let se = ((sum_sq / trials as f64 - mean * mean) / trials as f64).sqrt();
        assert!((mean - stats.expected).abs() < 4.0 * se, "{mean} vs {}", stats.expected);
    }
}
