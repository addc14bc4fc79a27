use serde::{Deserialize, Serialize};

use crate::error::MdpError;

use super::{TabularMdp, SIMPLEX_TOL};

/// Non-stationary Markov policy: one action distribution per `(t, s)`.
///
/// Stored flat as `probs[((t - 1) * S + s) * A + a]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    probs: Vec<f64>,
}

impl Policy {
    pub fn new(
        horizon: usize,
        num_states: usize,
        num_actions: usize,
        probs: Vec<f64>,
    ) -> Result<Self, MdpError> {
        if probs.len() != horizon * num_states * num_actions {
            return Err(MdpError::Policy(format!(
                "expected {} entries, got {}",
                horizon * num_states * num_actions,
                probs.len()
            )));
        }
        for (k, rule) in probs.chunks(num_actions).enumerate() {
            let sum: f64 = rule.iter().sum();
            if rule.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || (sum - 1.0).abs() > SIMPLEX_TOL
            {
                return Err(MdpError::Policy(format!(
                    "rule at (t={}, s={}) is not a distribution",
                    k / num_states + 1,
                    k % num_states
                )));
            }
        }
        Ok(Self {
            horizon,
            num_states,
            num_actions,
            probs,
        })
    }

    /// Deterministic policy from `choose(t, s)`, with `t` 1-based.
    pub fn deterministic(
        horizon: usize,
        num_states: usize,
        num_actions: usize,
        mut choose: impl FnMut(usize, usize) -> usize,
    ) -> Self {
        let mut probs = vec![0.0; horizon * num_states * num_actions];
        for t in 1..=horizon {
            for s in 0..num_states {
                let a = choose(t, s);
                assert!(a < num_actions, "action {a} out of range");
                probs[((t - 1) * num_states + s) * num_actions + a] = 1.0;
            }
        }
        Self {
            horizon,
            num_states,
            num_actions,
            probs,
        }
    }

    pub fn uniform(horizon: usize, num_states: usize, num_actions: usize) -> Self {
        Self {
            horizon,
            num_states,
            num_actions,
            probs: vec![1.0 / num_actions as f64; horizon * num_states * num_actions],
        }
    }

    /// Policy shaped for `mdp` from a per-`(t, s)` action table.
    pub fn for_mdp(mdp: &TabularMdp, choose: impl FnMut(usize, usize) -> usize) -> Self {
        Self::deterministic(mdp.horizon(), mdp.num_states(), mdp.num_actions(), choose)
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    /// Action distribution at step `t` (1-based) in state `s`.
    pub fn rule(&self, t: usize, s: usize) -> &[f64] {
        let base = ((t - 1) * self.num_states + s) * self.num_actions;
        &self.probs[base..base + self.num_actions]
    }

    pub fn probs_flat(&self) -> &[f64] {
        &self.probs
    }

    /// The action if the rule at `(t, s)` is deterministic.
    pub fn deterministic_action(&self, t: usize, s: usize) -> Option<usize> {
        let rule = self.rule(t, s);
        rule.iter().position(|p| *p == 1.0)
    }

    /// Same policy but forced to play `action` in `state` at every step.
    pub fn with_forced_action(&self, state: usize, action: usize) -> Self {
        let mut out = self.clone();
        for t in 1..=self.horizon {
            let base = ((t - 1) * self.num_states + state) * self.num_actions;
            for a in 0..self.num_actions {
                out.probs[base + a] = if a == action { 1.0 } else { 0.0 };
            }
        }
        out
    }

    pub fn matches(&self, mdp: &TabularMdp) -> bool {
        self.horizon == mdp.horizon()
            && self.num_states == mdp.num_states()
            && self.num_actions == mdp.num_actions()
    }

    pub(crate) fn check_shape(&self, mdp: &TabularMdp) -> Result<(), MdpError> {
        if self.matches(mdp) {
            Ok(())
        } else {
            Err(MdpError::Shape(format!(
                "policy is {}x{}x{} but MDP is T={} S={} A={}",
                self.horizon,
                self.num_states,
                self.num_actions,
                mdp.horizon(),
                mdp.num_states(),
                mdp.num_actions()
            )))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn validates_rules() {
        assert!(Policy::new(1, 1, 2, vec![0.5, 0.5]).is_ok());
        assert!(Policy::new(1, 1, 2, vec![0.5, 0.6]).is_err());
        assert!(Policy::new(1, 1, 2, vec![1.0]).is_err());
    }

    #[test]
    fn forced_action_overrides_every_step() {
        let p = Policy::uniform(3, 2, 2).with_forced_action(1, 1);
        for t in 1..=3 {
            assert_eq!(p.rule(t, 1), &[0.0, 1.0]);
            assert_eq!(p.rule(t, 0), &[0.5, 0.5]);
        }
    }
}
