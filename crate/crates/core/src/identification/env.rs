use rand::Rng;

use crate::error::{IdentifyError, MdpError};
use crate::mdp::{evaluate_policy, optimal_policy, sim, Policy, Step, TabularMdp};
use crate::trace::{Phase, RegretTrace};

/// Index into an environment's policy registry.
pub type PolicyId = usize;

/// Consecutive episodes played with one registered policy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Deployment {
    pub policy: PolicyId,
    pub phase: Phase,
    pub episodes: usize,
}

/// Live access to the (hidden) test task with an episode budget `H`.
///
/// Every deployed policy is registered once and evaluated exactly on the
/// test task, so regret is charged without sampling noise. Rollouts may stop
/// early once the caller has what it needs; the episode is still charged in
/// full.
pub struct Environment<'a, R: Rng> {
    mdp: &'a TabularMdp,
    rng: R,
    budget: usize,
    used: usize,
    optimal_value: f64,
    policies: Vec<Policy>,
    values: Vec<f64>,
    log: Vec<Deployment>,
}

impl<'a, R: Rng> Environment<'a, R> {
    pub fn new(mdp: &'a TabularMdp, rng: R, budget: usize) -> Self {
        let (_, optimal_value) = optimal_policy(mdp);
        Self {
            mdp,
            rng,
            budget,
            used: 0,
            optimal_value,
            policies: Vec::new(),
            values: Vec::new(),
            log: Vec::new(),
        }
    }

    pub fn budget(&self) -> usize {
        self.budget
    }

    pub fn used(&self) -> usize {
        self.used
    }

    pub fn remaining(&self) -> usize {
        self.budget - self.used
    }

    pub fn horizon(&self) -> usize {
        self.mdp.horizon()
    }

    pub fn register(&mut self, policy: Policy) -> Result<PolicyId, MdpError> {
        if let Some(id) = self.policies.iter().position(|p| *p == policy) {
            return Ok(id);
        }
        let value = evaluate_policy(self.mdp, &policy)?;
        self.policies.push(policy);
        self.values.push(value);
        Ok(self.policies.len() - 1)
    }

    pub fn policy(&self, id: PolicyId) -> &Policy {
        &self.policies[id]
    }

    /// Exact `V*(test) - V(pi)`, clamped at zero against rounding.
    pub fn regret_of(&self, id: PolicyId) -> f64 {
        (self.optimal_value - self.values[id]).max(0.0)
    }

    fn charge(&mut self, policy: PolicyId, phase: Phase, episodes: usize) {
        if episodes == 0 {
            return;
        }
        self.used += episodes;
        if let Some(last) = self.log.last_mut() {
            if last.policy == policy && last.phase == phase {
                last.episodes += episodes;
                return;
            }
        }
        self.log.push(Deployment {
            policy,
            phase,
            episodes,
        });
    }

    /// Plays one identification episode, feeding each step to `visit` until
    /// it returns `false`.
    pub fn episode(
        &mut self,
        id: PolicyId,
        visit: impl FnMut(usize, Step) -> bool,
    ) -> Result<(), IdentifyError> {
        if self.used >= self.budget {
            return Err(IdentifyError::BudgetExhausted { used: self.used });
        }
        sim::rollout(self.mdp, &self.policies[id], &mut self.rng, visit);
        self.charge(id, Phase::Identify, 1);
        Ok(())
    }

    /// Re-tags identification episodes played since `mark` (an earlier
    /// value of [`used`](Self::used)) as truncated.
    pub fn mark_truncated_since(&mut self, mark: usize) {
        let mut end = self.used;
        let mut k = self.log.len();
        let mut tail = Vec::new();
        while k > 0 && end > mark {
            k -= 1;
            let d = self.log[k];
            let start = end - d.episodes;
            if d.phase == Phase::Identify {
                let cut = mark.max(start) - start;
                if cut > 0 {
                    tail.push(Deployment {
                        episodes: cut,
                        ..d
                    });
                }
                tail.push(Deployment {
                    phase: Phase::Truncated,
                    episodes: d.episodes - cut,
                    ..d
                });
            } else {
                tail.push(d);
            }
            end = start;
        }
        self.log.truncate(k);
        let used = self.used;
        self.used = end;
        for d in tail.into_iter().rev() {
            self.charge(d.policy, d.phase, d.episodes);
        }
        debug_assert_eq!(self.used, used);
    }

    /// Plays `id` for every remaining episode without simulating them.
    pub fn commit(&mut self, id: PolicyId) {
        let left = self.remaining();
        self.charge(id, Phase::Commit, left);
    }

    pub fn log(&self) -> &[Deployment] {
        &self.log
    }

    pub fn trace(&self) -> RegretTrace {
        let mut trace = RegretTrace::new();
        for d in &self.log {
            trace.push(d.episodes, self.regret_of(d.policy), d.phase);
        }
        trace
    }

    pub fn into_parts(self) -> (Vec<Policy>, Vec<Deployment>, RegretTrace) {
        let trace = self.trace();
        (self.policies, self.log, trace)
    }
}
