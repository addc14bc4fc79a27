//! Finite-horizon tabular MDPs: representation, exact planning, hitting-time
//! dynamic programs and seeded simulation.
//!
//! Steps are 1-based in the public API (`t = 1..=T`), matching the usual
//! episodic convention where the initial state is observed at step 1.
//! Internally arrays are indexed from zero.

mod hitting;
mod metrics;
mod planning;
mod policy;
pub(crate) mod sim;

pub use hitting::{hitting_stats, min_hitting_policy, HitTarget, HittingStats};
pub use metrics::{distribution_metrics, l1_distance, symmetric_kl, DistributionMetrics};
pub use planning::{evaluate_policy, occupancy_measure, optimal_policy, solve_optimal, OptimalPlan};
pub use policy::Policy;
pub use sim::{simulate_episode, Step, Trajectory};

use serde::{Deserialize, Serialize};

use crate::error::MdpError;

/// Tolerance for the simplex check at construction time.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// One finite-horizon task `(S, A, p, r, s1, T)`.
///
/// Immutable after construction. Transition rows are dense but a sparse
/// cumulative copy is kept for sampling.
#[derive(Debug, Clone)]
pub struct TabularMdp {
    num_states: usize,
    num_actions: usize,
    horizon: usize,
    initial_state: usize,
    transitions: Vec<f64>,
    rewards: Vec<f64>,
    support: Vec<Vec<(usize, f64)>>,
}

impl PartialEq for TabularMdp {
    fn eq(&self, other: &Self) -> bool {
        self.num_states == other.num_states
            && self.num_actions == other.num_actions
            && self.horizon == other.horizon
            && self.initial_state == other.initial_state
            && self.transitions == other.transitions
            && self.rewards == other.rewards
    }
}

impl TabularMdp {
    /// Builds an MDP from flat row-major arrays: `transitions[(s * A + a) * S + s']`
    /// and `rewards[s * A + a]`.
    pub fn new(
        num_states: usize,
        num_actions: usize,
        horizon: usize,
        initial_state: usize,
        mut transitions: Vec<f64>,
        rewards: Vec<f64>,
    ) -> Result<Self, MdpError> {
        if num_states == 0 || num_actions == 0 {
            return Err(MdpError::Shape("S and A must be positive".into()));
        }
        if horizon == 0 {
            return Err(MdpError::Shape("horizon must be at least 1".into()));
        }
        if initial_state >= num_states {
            return Err(MdpError::Index(format!(
                "initial state {initial_state} >= S = {num_states}"
            )));
        }
        let (s_n, a_n) = (num_states, num_actions);
        if transitions.len() != s_n * a_n * s_n {
            return Err(MdpError::Shape(format!(
                "transitions has {} entries, expected {}",
                transitions.len(),
                s_n * a_n * s_n
            )));
        }
        if rewards.len() != s_n * a_n {
            return Err(MdpError::Shape(format!(
                "rewards has {} entries, expected {}",
                rewards.len(),
                s_n * a_n
            )));
        }
        for s in 0..s_n {
            for a in 0..a_n {
                let row = &mut transitions[(s * a_n + a) * s_n..(s * a_n + a + 1) * s_n];
                if let Some(v) = row.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                    return Err(MdpError::NotSimplex {
                        state: s,
                        action: a,
                        reason: format!("entry {v} is negative or not finite"),
                    });
                }
                let sum: f64 = row.iter().sum();
                if (sum - 1.0).abs() > SIMPLEX_TOL {
                    return Err(MdpError::NotSimplex {
                        state: s,
                        action: a,
                        reason: format!("sums to {sum}"),
                    });
                }
                // Rows already within 1e-12 are stored verbatim so documents round-trip.
                if (sum - 1.0).abs() > 1e-12 {
                    row.iter_mut().for_each(|v| *v /= sum);
                }
                let r = rewards[s * a_n + a];
                if !(0.0..=1.0).contains(&r) {
                    return Err(MdpError::Reward {
                        state: s,
                        action: a,
                        value: r,
                    });
                }
            }
        }
        let support = (0..s_n * a_n)
            .map(|sa| {
                let row = &transitions[sa * s_n..(sa + 1) * s_n];
                let mut acc = 0.0;
                let mut out: Vec<(usize, f64)> = row
                    .iter()
                    .enumerate()
                    .filter(|(_, p)| **p > 0.0)
                    .map(|(s2, p)| {
                        acc += p;
                        (s2, acc)
                    })
                    .collect();
                if let Some(last) = out.last_mut() {
                    last.1 = 1.0;
                }
                out
            })
            .collect();
        Ok(Self {
            num_states,
            num_actions,
            horizon,
            initial_state,
            transitions,
            rewards,
            support,
        })
    }

    /// Builds an MDP from nested `p[s][a][s']` and `r[s][a]` arrays.
    pub fn from_nested(
        horizon: usize,
        initial_state: usize,
        p: &[Vec<Vec<f64>>],
        r: &[Vec<f64>],
    ) -> Result<Self, MdpError> {
        let s_n = p.len();
        let a_n = p.first().map_or(0, Vec::len);
        let mut flat = Vec::with_capacity(s_n * a_n * s_n);
        for (s, rows) in p.iter().enumerate() {
            if rows.len() != a_n {
                return Err(MdpError::Shape(format!("p[{s}] has {} actions", rows.len())));
            }
            for (a, row) in rows.iter().enumerate() {
                if row.len() != s_n {
                    return Err(MdpError::Shape(format!("p[{s}][{a}] has {} entries", row.len())));
                }
                flat.extend_from_slice(row);
            }
        }
        if r.len() != s_n || r.iter().any(|row| row.len() != a_n) {
            return Err(MdpError::Shape("r must be S x A".into()));
        }
        let rewards = r.iter().flatten().copied().collect();
        Self::new(s_n, a_n, horizon, initial_state, flat, rewards)
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn initial_state(&self) -> usize {
        self.initial_state
    }

    /// Transition row `p(. | s, a)`.
    pub fn row(&self, state: usize, action: usize) -> &[f64] {
        let base = (state * self.num_actions + action) * self.num_states;
        &self.transitions[base..base + self.num_states]
    }

    pub fn prob(&self, state: usize, action: usize, next: usize) -> f64 {
        self.transitions[(state * self.num_actions + action) * self.num_states + next]
    }

    pub fn reward(&self, state: usize, action: usize) -> f64 {
        self.rewards[state * self.num_actions + action]
    }

    /// Nonzero entries of `p(. | s, a)` as `(next_state, cumulative_probability)`.
    pub(crate) fn support(&self, state: usize, action: usize) -> &[(usize, f64)] {
        &self.support[state * self.num_actions + action]
    }

    pub fn transitions_flat(&self) -> &[f64] {
        &self.transitions
    }

    pub fn rewards_flat(&self) -> &[f64] {
        &self.rewards
    }

    /// True when both MDPs share `(S, A, T, s1)`.
    pub fn same_shape(&self, other: &TabularMdp) -> bool {
        self.num_states == other.num_states
            && self.num_actions == other.num_actions
            && self.horizon == other.horizon
            && self.initial_state == other.initial_state
    }

    /// Copy with a different horizon.
    pub fn with_horizon(&self, horizon: usize) -> Result<Self, MdpError> {
        Self::new(
            self.num_states,
            self.num_actions,
            horizon,
            self.initial_state,
            self.transitions.clone(),
            self.rewards.clone(),
        )
    }

    pub fn to_document(&self) -> MdpDocument {
        let (s_n, a_n) = (self.num_states, self.num_actions);
        MdpDocument {
            num_states: s_n,
            num_actions: a_n,
            horizon: self.horizon,
            s1: self.initial_state,
            p: (0..s_n)
                .map(|s| (0..a_n).map(|a| self.row(s, a).to_vec()).collect())
                .collect(),
            r: (0..s_n)
                .map(|s| (0..a_n).map(|a| self.reward(s, a)).collect())
                .collect(),
        }
    }

    pub fn from_document(doc: &MdpDocument) -> Result<Self, MdpError> {
        let mdp = Self::from_nested(doc.horizon, doc.s1, &doc.p, &doc.r)?;
        if mdp.num_states != doc.num_states || mdp.num_actions != doc.num_actions {
            return Err(MdpError::Shape(format!(
                "declared S={}, A={} but arrays are {}x{}",
                doc.num_states, doc.num_actions, mdp.num_states, mdp.num_actions
            )));
        }
        Ok(mdp)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("MDP document serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, MdpError> {
        let doc: MdpDocument =
            serde_json::from_str(text).map_err(|e| MdpError::Shape(format!("parse error: {e}")))?;
        Self::from_document(&doc)
    }
}

/// Serialized form of a [`TabularMdp`].
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MdpDocument {
    #[serde(rename = "S")]
    pub num_states: usize,
    #[serde(rename = "A")]
    pub num_actions: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub s1: usize,
    pub p: Vec<Vec<Vec<f64>>>,
    pub r: Vec<Vec<f64>>,
}
