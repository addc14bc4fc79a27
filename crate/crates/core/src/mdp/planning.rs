use crate::error::MdpError;

use super::{Policy, TabularMdp};

const TIE_TOL: f64 = 1e-12;

/// Result of backward induction on one MDP.
#[derive(Debug, Clone)]
pub struct OptimalPlan {
    pub policy: Policy,
    /// `V*_1(s1)`.
    pub value: f64,
    /// `V*_t(s)` for `t = 1..=T+1`, flat as `(t - 1) * S + s`.
    pub state_values: Vec<f64>,
    /// Whether some state visited by the optimal policy has two actions
    /// within `1e-12` of the optimum (non-unique optimal policy).
    pub reachable_ties: bool,
}

/// Backward induction. Ties are broken towards the lowest action index.
pub fn solve_optimal(mdp: &TabularMdp) -> OptimalPlan {
    let (s_n, a_n, horizon) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    let mut values = vec![0.0; (horizon + 1) * s_n];
    let mut actions = vec![0usize; horizon * s_n];
    let mut tied = vec![false; horizon * s_n];
    for t in (1..=horizon).rev() {
        let (head, tail) = values.split_at_mut(t * s_n);
        let next = &tail[..s_n];
        let current = &mut head[(t - 1) * s_n..];
        for s in 0..s_n {
            let mut best = f64::NEG_INFINITY;
            let mut best_a = 0;
            let mut q_values = Vec::with_capacity(a_n);
            for a in 0..a_n {
                let q = mdp.reward(s, a)
                    + mdp
                        .row(s, a)
                        .iter()
                        .zip(next)
                        .map(|(p, v)| p * v)
                        .sum::<f64>();
                q_values.push(q);
                if q > best {
                    best = q;
                    best_a = a;
                }
            }
            current[s] = best;
            actions[(t - 1) * s_n + s] = best_a;
            tied[(t - 1) * s_n + s] = q_values
                .iter()
                .enumerate()
                .any(|(a, q)| a != best_a && (best - q).abs() <= TIE_TOL);
        }
    }
    let policy = Policy::for_mdp(mdp, |t, s| actions[(t - 1) * s_n + s]);
    let occ = state_occupancy(mdp, &policy);
    let reachable_ties = (0..horizon * s_n).any(|k| tied[k] && occ[k] > 0.0);
    OptimalPlan {
        value: values[mdp.initial_state()],
        policy,
        state_values: values,
        reachable_ties,
    }
}

/// Deterministic optimal policy and its value `V*` at `(t = 1, s1)`.
pub fn optimal_policy(mdp: &TabularMdp) -> (Policy, f64) {
    let plan = solve_optimal(mdp);
    (plan.policy, plan.value)
}

/// Exact value `V(pi) = V_1(s1)` by backward recursion.
pub fn evaluate_policy(mdp: &TabularMdp, policy: &Policy) -> Result<f64, MdpError> {
    policy.check_shape(mdp)?;
    let (s_n, a_n) = (mdp.num_states(), mdp.num_actions());
    let mut next = vec![0.0; s_n];
    let mut current = vec![0.0; s_n];
    for t in (1..=mdp.horizon()).rev() {
        for (s, slot) in current.iter_mut().enumerate() {
            let rule = policy.rule(t, s);
            let mut v = 0.0;
            for (a, &pa) in rule.iter().enumerate().take(a_n) {
                if pa == 0.0 {
                    continue;
                }
                let cont: f64 = mdp
                    .support(s, a)
                    .iter()
                    .map(|&(s2, _)| mdp.prob(s, a, s2) * next[s2])
                    .sum();
                v += pa * (mdp.reward(s, a) + cont);
            }
            *slot = v;
        }
        std::mem::swap(&mut next, &mut current);
    }
    Ok(next[mdp.initial_state()])
}

/// Probability of being in `s` at step `t`, flat as `(t - 1) * S + s`.
fn state_occupancy(mdp: &TabularMdp, policy: &Policy) -> Vec<f64> {
    let s_n = mdp.num_states();
    let mut occ = vec![0.0; mdp.horizon() * s_n];
    occ[mdp.initial_state()] = 1.0;
    for t in 1..mdp.horizon() {
        for s in 0..s_n {
            let mass = occ[(t - 1) * s_n + s];
            if mass == 0.0 {
                continue;
            }
            for (a, &pa) in policy.rule(t, s).iter().enumerate() {
                if pa == 0.0 {
                    continue;
                }
                for &(s2, _) in mdp.support(s, a) {
                    occ[t * s_n + s2] += mass * pa * mdp.prob(s, a, s2);
                }
            }
        }
    }
    occ
}

/// State-action occupancy `P(s_t = s, a_t = a)`, flat as `((t - 1) * S + s) * A + a`.
pub fn occupancy_measure(mdp: &TabularMdp, policy: &Policy) -> Result<Vec<f64>, MdpError> {
    policy.check_shape(mdp)?;
    let (s_n, a_n) = (mdp.num_states(), mdp.num_actions());
    let occ = state_occupancy(mdp, policy);
    let mut out = vec![0.0; mdp.horizon() * s_n * a_n];
    for t in 1..=mdp.horizon() {
        for s in 0..s_n {
            let mass = occ[(t - 1) * s_n + s];
            for (a, &pa) in policy.rule(t, s).iter().enumerate() {
                out[((t - 1) * s_n + s) * a_n + a] = mass * pa;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::super::testutil::random_mdp;
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Value of every deterministic non-stationary policy, by enumeration.
    pub(crate) fn brute_force_best(mdp: &TabularMdp) -> f64 {
        let (s_n, a_n, t_n) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
        let slots = s_n * t_n;
        let total = a_n.pow(slots as u32);
        let mut best = f64::NEG_INFINITY;
        let mut digits = vec![0usize; slots];
        for _ in 0..total {
            let policy = Policy::for_mdp(mdp, |t, s| digits[(t - 1) * s_n + s]);
            best = best.max(evaluate_policy(mdp, &policy).unwrap());
            for d in digits.iter_mut() {
                *d += 1;
                if *d < a_n {
                    break;
                }
                *d = 0;
            }
        }
        best
    }

    #[test]
    fn unit_reward_everywhere_gives_horizon() {
        let mdp = TabularMdp::new(2, 2, 5, 0, vec![0.5; 8], vec![1.0; 4]).unwrap();
        let (_, v) = optimal_policy(&mdp);
        assert_eq!(v, 5.0);
        let u = Policy::uniform(5, 2, 2);
        assert_eq!(evaluate_policy(&mdp, &u).unwrap(), 5.0);
    }

    #[test]
    fn matches_enumeration_on_small_mdps() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..5 {
            let mdp = random_mdp(&mut rng, 3, 2, 4);
            let (pi, v) = optimal_policy(&mdp);
            assert!((evaluate_policy(&mdp, &pi).unwrap() - v).abs() < 1e-12);
            assert!((brute_force_best(&mdp) - v).abs() < 1e-9);
        }
    }

    #[test]
    fn optimal_dominates_random_policies() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..10 {
            let mdp = random_mdp(&mut rng, 4, 3, 5);
            let (_, v) = optimal_policy(&mdp);
            for _ in 0..100 {
                let probs: Vec<f64> = (0..5 * 4)
                    .flat_map(|_| {
                        let raw: Vec<f64> = (0..3).map(|_| rng.random::<f64>() + 1e-3).collect();
                        let s: f64 = raw.iter().sum();
                        raw.into_iter().map(move |x| x / s)
                    })
                    .collect();
                let pi = Policy::new(5, 4, 3, probs).unwrap();
                assert!(evaluate_policy(&mdp, &pi).unwrap() <= v + 1e-12);
            }
        }
    }

    #[test]
    fn ties_prefer_lowest_action() {
        let mdp = TabularMdp::new(1, 3, 2, 0, vec![1.0; 3], vec![0.5, 0.5, 0.5]).unwrap();
        let plan = solve_optimal(&mdp);
        assert_eq!(plan.policy.deterministic_action(1, 0), Some(0));
        assert!(plan.reachable_ties);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let mdp = TabularMdp::new(1, 2, 2, 0, vec![1.0; 2], vec![0.0, 1.0]).unwrap();
        assert!(evaluate_policy(&mdp, &Policy::uniform(3, 1, 2)).is_err());
    }

    #[test]
    fn occupancy_sums_to_one_per_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mdp = random_mdp(&mut rng, 4, 2, 6);
        let occ = occupancy_measure(&mdp, &Policy::uniform(6, 4, 2)).unwrap();
        for t in 0..6 {
            let s: f64 = occ[t * 8..(t + 1) * 8].iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
