use rand::Rng;

use super::{Policy, TabularMdp};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Step {
    pub state: usize,
    pub action: usize,
    pub next_state: usize,
    pub reward: f64,
}

/// One episode: exactly `T` chained steps.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub episode_index: usize,
}

fn draw_action<R: Rng + ?Sized>(rule: &[f64], rng: &mut R) -> usize {
    if let Some(a) = rule.iter().position(|p| *p == 1.0) {
        return a;
    }
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (a, &p) in rule.iter().enumerate() {
        if p > 0.0 {
            acc += p;
            last = a;
            if u < acc {
                return a;
            }
        }
    }
    last
}

fn draw_next<R: Rng + ?Sized>(support: &[(usize, f64)], rng: &mut R) -> usize {
    if support.len() == 1 {
        return support[0].0;
    }
    let u: f64 = rng.random();
    support
        .iter()
        .find(|(_, c)| u < *c)
        .map_or(support[support.len() - 1].0, |(s, _)| *s)
}

/// Rolls out one episode, calling `visit(t, step)` after each step. Stops
/// early as soon as `visit` returns `false`; returns the number of steps run.
pub(crate) fn rollout<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    policy: &Policy,
    rng: &mut R,
    mut visit: impl FnMut(usize, Step) -> bool,
) -> usize {
    let mut state = mdp.initial_state();
    for t in 1..=mdp.horizon() {
        let action = draw_action(policy.rule(t, state), rng);
        let next_state = draw_next(mdp.support(state, action), rng);
        let step = Step {
            state,
            action,
            next_state,
            reward: mdp.reward(state, action),
        };
        if !visit(t, step) {
            return t;
        }
        state = next_state;
    }
    mdp.horizon()
}

/// Samples a full trajectory; deterministic given the state of `rng`.
///
/// Panics if the policy shape does not match the MDP.
pub fn simulate_episode<R: Rng + ?Sized>(
    mdp: &TabularMdp,
    policy: &Policy,
    rng: &mut R,
    episode_index: usize,
) -> Trajectory {
    assert!(policy.matches(mdp), "policy shape does not match the MDP");
    let mut steps = Vec::with_capacity(mdp.horizon());
    rollout(mdp, policy, rng, |_, step| {
        steps.push(step);
        true
    });
    Trajectory {
        steps,
        episode_index,
    }
}
