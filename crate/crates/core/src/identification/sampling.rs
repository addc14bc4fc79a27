use rand::Rng;

use crate::error::IdentifyError;
use crate::mdp::{min_hitting_policy, HitTarget};
use crate::task_set::TaskSet;

use super::env::{Environment, PolicyId};

#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    /// Next-state draws from `(s̄, ā)` in the test task, in collection order.
    pub samples: Vec<usize>,
    pub episodes_used: usize,
    /// Policies deployed, one per candidate, in cycling order.
    pub policies: Vec<PolicyId>,
}

/// Cycles the candidates' minimum-hitting policies for `s̄` (forced to play
/// `ā` there), two episodes each, taking at most one sample per episode and
/// stopping as soon as `n` samples are in.
pub fn sampling_routine<R: Rng>(
    env: &mut Environment<'_, R>,
    ts: &TaskSet,
    candidates: &[usize],
    pair: (usize, usize),
    n: usize,
) -> Result<SampleBatch, IdentifyError> {
    if n == 0 {
        return Err(IdentifyError::InvalidParameter("n must be at least 1".into()));
    }
    if candidates.is_empty() {
        return Err(IdentifyError::InvalidParameter("no candidate tasks".into()));
    }
    ts.check_indices(candidates)?;
    let (s_bar, a_bar) = pair;
    let mut policies = Vec::with_capacity(candidates.len());
    for &i in candidates {
        let (pi, _) = min_hitting_policy(ts.task(i), HitTarget::State(s_bar))?;
        if a_bar >= pi.num_actions() {
            return Err(IdentifyError::InvalidParameter(format!("action {a_bar} out of range")));
        }
        policies.push(env.register(pi.with_forced_action(s_bar, a_bar))?);
    }
    let start = env.used();
    let mut samples = Vec::with_capacity(n);
    'outer: loop {
        for &id in &policies {
            for _ in 0..2 {
                if samples.len() >= n {
                    break 'outer;
                }
                env.episode(id, |_, step| {
                    if step.state == s_bar {
                        samples.push(step.next_state);
                        false
                    } else {
                        true
                    }
                })?;
            }
        }
    }
    Ok(SampleBatch {
        samples,
        episodes_used: env.used() - start,
        policies,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::testutil::chain;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn deterministic_visit_costs_one_episode_per_sample() {
        let ts = TaskSet::new(vec![chain(4, 6), chain(4, 6)]).unwrap();
        let mut env = Environment::new(ts.task(0), ChaCha8Rng::seed_from_u64(1), 100);
        let batch = sampling_routine(&mut env, &ts, &[0, 1], (2, 0), 7).unwrap();
        assert_eq!(batch.samples, vec![3; 7]);
        assert_eq!(batch.episodes_used, 7);
    }

    #[test]
    fn unreachable_pair_exhausts_budget() {
        let ts = TaskSet::new(vec![chain(6, 3)]).unwrap();
        let mut env = Environment::new(ts.task(0), ChaCha8Rng::seed_from_u64(1), 50);
        let err = sampling_routine(&mut env, &ts, &[0], (5, 0), 1).unwrap_err();
        assert_eq!(err, IdentifyError::BudgetExhausted { used: 50 });
    }
}
