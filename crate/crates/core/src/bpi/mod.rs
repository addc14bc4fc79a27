//! Instance-dependent lower bound for best-policy identification: the
//! characteristic time `T*` of a test task, obtained as a linear program over
//! allocations (time-indexed occupancy flows), and the implied bound on the
//! expected stopping time.

mod lp;

use serde::{Deserialize, Serialize};

use crate::error::BoundError;
use crate::mdp::{occupancy_measure, symmetric_kl, Policy, TabularMdp};
use crate::task_set::TaskSet;

use lp::{Constraint, Sense};

/// Infinite KL entries are replaced by this value inside the program.
pub const KL_CAP: f64 = 1e6;

/// Feasibility tolerance for allocation checks.
pub const ALLOCATION_TOL: f64 = 1e-7;

/// Time-indexed allocation `omega_t(s, a, t)`, flat as
/// `((t - 1) * S + s) * A + a` like an occupancy measure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Allocation {
    horizon: usize,
    num_states: usize,
    num_actions: usize,
    omega_t: Vec<f64>,
}

impl Allocation {
    pub fn new(
        horizon: usize,
        num_states: usize,
        num_actions: usize,
        omega_t: Vec<f64>,
    ) -> Result<Self, BoundError> {
        if omega_t.len() != horizon * num_states * num_actions {
            return Err(BoundError::Shape);
        }
        Ok(Self {
            horizon,
            num_states,
            num_actions,
            omega_t,
        })
    }

    /// The occupancy measure of `policy` on `mdp`.
    pub fn from_policy(mdp: &TabularMdp, policy: &Policy) -> Result<Self, BoundError> {
        let occ = occupancy_measure(mdp, policy).map_err(|_| BoundError::Shape)?;
        Self::new(mdp.horizon(), mdp.num_states(), mdp.num_actions(), occ)
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn omega_t(&self, t: usize, s: usize, a: usize) -> f64 {
        self.omega_t[((t - 1) * self.num_states + s) * self.num_actions + a]
    }

    pub fn omega_t_flat(&self) -> &[f64] {
        &self.omega_t
    }

    /// Time average `(1/T) sum_t omega_t(s, a, t)`, flat as `s * A + a`.
    pub fn omega(&self) -> Vec<f64> {
        let sa = self.num_states * self.num_actions;
        let mut out = vec![0.0; sa];
        for chunk in self.omega_t.chunks(sa) {
            for (o, v) in out.iter_mut().zip(chunk) {
                *o += v;
            }
        }
        out.iter_mut().for_each(|o| *o /= self.horizon as f64);
        out
    }

    fn matches(&self, mdp: &TabularMdp) -> bool {
        self.horizon == mdp.horizon()
            && self.num_states == mdp.num_states()
            && self.num_actions == mdp.num_actions()
    }
}

/// Checks non-negativity, the initial distribution and every flow equation
/// of `mdp` to [`ALLOCATION_TOL`].
pub fn verify_allocation(alloc: &Allocation, mdp: &TabularMdp) -> Result<bool, BoundError> {
    if !alloc.matches(mdp) {
        return Err(BoundError::Shape);
    }
    let (s_n, a_n) = (mdp.num_states(), mdp.num_actions());
    if alloc.omega_t.iter().any(|v| !v.is_finite() || *v < -ALLOCATION_TOL) {
        return Ok(false);
    }
    let mut inflow = vec![0.0; s_n];
    inflow[mdp.initial_state()] = 1.0;
    for t in 1..=mdp.horizon() {
        let mut next = vec![0.0; s_n];
        for s in 0..s_n {
            let mut out = 0.0;
            for a in 0..a_n {
                let w = alloc.omega_t(t, s, a);
                out += w;
                for (s2, p) in mdp.row(s, a).iter().enumerate() {
                    next[s2] += p * w;
                }
            }
            if (out - inflow[s]).abs() > ALLOCATION_TOL {
                return Ok(false);
            }
        }
        inflow = next;
    }
    Ok(true)
}

/// `KL(p_i(s,a), p_j(s,a)) + KL(p_j(s,a), p_i(s,a))` for every alternative `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct KlMatrix {
    pub task: usize,
    pub alternatives: Vec<usize>,
    /// One `S * A` vector (flat `s * A + a`) per alternative; may hold `+inf`.
    pub values: Vec<Vec<f64>>,
}

impl KlMatrix {
    pub fn has_infinite(&self) -> bool {
        self.values.iter().flatten().any(|v| v.is_infinite())
    }

    /// `min_j sum_{s,a} omega(s,a) K_j(s,a)` with infinite entries capped.
    pub fn objective(&self, alloc: &Allocation) -> f64 {
        let omega = alloc.omega();
        self.values
            .iter()
            .map(|k| k.iter().zip(&omega).map(|(k, w)| k.min(KL_CAP) * w).sum::<f64>())
            .fold(f64::INFINITY, f64::min)
    }
}

pub fn kl_matrix(ts: &TaskSet, i: usize) -> Result<KlMatrix, BoundError> {
    if i >= ts.len() {
        return Err(BoundError::InvalidIndex(i));
    }
    let sh = ts.shape();
    let base = ts.task(i);
    let alternatives: Vec<usize> = (0..ts.len()).filter(|j| *j != i).collect();
    let values = alternatives
        .iter()
        .map(|&j| {
            let alt = ts.task(j);
            let mut v = Vec::with_capacity(sh.num_states * sh.num_actions);
            for s in 0..sh.num_states {
                for a in 0..sh.num_actions {
                    v.push(symmetric_kl(base.row(s, a), alt.row(s, a)));
                }
            }
            v
        })
        .collect();
    Ok(KlMatrix {
        task: i,
        alternatives,
        values,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BpiBound {
    pub t_star: f64,
    pub allocation: Allocation,
    /// Some KL entry was infinite and capped at [`KL_CAP`]; the true `T*` is
    /// then at least the reported value.
    pub capped: bool,
}

impl BpiBound {
    /// `ln(1 / (2.4 delta)) / T*`; `+inf` when `T* = 0`.
    pub fn tau_lower(&self, delta: f64) -> f64 {
        if self.t_star <= 0.0 {
            return f64::INFINITY;
        }
        (1.0 / (2.4 * delta)).ln() / self.t_star
    }
}

/// Solves `max_omega min_j sum omega(s,a) K_j(s,a)` over allocations of task `i`.
pub fn t_star(ts: &TaskSet, i: usize) -> Result<BpiBound, BoundError> {
    if ts.len() < 2 {
        return Err(BoundError::Singleton);
    }
    let kl = kl_matrix(ts, i)?;
    let mdp = ts.task(i);
    let (s_n, a_n, t_n) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    let n_omega = t_n * s_n * a_n;
    let z = n_omega;
    let idx = |t: usize, s: usize, a: usize| ((t - 1) * s_n + s) * a_n + a;
    let mut cons = Vec::new();
    for k in &kl.values {
        let mut coeffs = vec![(z, 1.0)];
        for t in 1..=t_n {
            for s in 0..s_n {
                for a in 0..a_n {
                    let v = k[s * a_n + a].min(KL_CAP);
                    if v != 0.0 {
                        coeffs.push((idx(t, s, a), -v / t_n as f64));
                    }
                }
            }
        }
        cons.push(Constraint {
            coeffs,
            sense: Sense::Le,
            rhs: 0.0,
        });
    }
    for t in 1..=t_n {
        for s in 0..s_n {
            let mut coeffs: Vec<(usize, f64)> = (0..a_n).map(|a| (idx(t, s, a), 1.0)).collect();
            let rhs = if t == 1 {
                if s == mdp.initial_state() {
                    1.0
                } else {
                    0.0
                }
            } else {
                for s0 in 0..s_n {
                    for a0 in 0..a_n {
                        let p = mdp.prob(s0, a0, s);
                        if p != 0.0 {
                            coeffs.push((idx(t - 1, s0, a0), -p));
                        }
                    }
                }
                0.0
            };
            cons.push(Constraint {
                coeffs,
                sense: Sense::Eq,
                rhs,
            });
        }
    }
    let mut c = vec![0.0; n_omega + 1];
    c[z] = 1.0;
    let sol = lp::maximize(n_omega + 1, &c, &cons).map_err(BoundError::Lp)?;
    let allocation = Allocation::new(t_n, s_n, a_n, sol.x[..n_omega].to_vec())?;
    Ok(BpiBound {
        t_star: sol.objective.max(0.0),
        allocation,
        capped: kl.has_infinite(),
    })
}

/// Hand-built allocation for a task of the two-chain hard instance with `m`
/// tasks: take the right chain, leave it towards the absorbing pair with mass
/// `1/M` at every position, and keep all other mass on the first action.
pub fn lower_bound_allocation(mdp: &TabularMdp, m: usize) -> Result<Allocation, BoundError> {
    use crate::instances::lower_bound_states::{right, START};
    let (s_n, a_n, t_n) = (mdp.num_states(), mdp.num_actions(), mdp.horizon());
    if s_n != 2 * m + 3 || a_n != 2 {
        return Err(BoundError::Shape);
    }
    let mut omega = vec![0.0; t_n * s_n * a_n];
    let mut inflow = vec![0.0; s_n];
    inflow[mdp.initial_state()] = 1.0;
    for t in 1..=t_n {
        let mut next = vec![0.0; s_n];
        for s in 0..s_n {
            let mass = inflow[s];
            if mass == 0.0 {
                continue;
            }
            let split = if s == START {
                [0.0, mass]
            } else if s > m && s <= 2 * m && t == s - m + 1 {
                debug_assert_eq!(s, right(m, t - 1));
                let leave = (1.0 / m as f64).min(mass);
                [leave, mass - leave]
            } else {
                [mass, 0.0]
            };
            for (a, w) in split.into_iter().enumerate() {
                omega[((t - 1) * s_n + s) * a_n + a] = w;
                for (s2, p) in mdp.row(s, a).iter().enumerate() {
                    next[s2] += p * w;
                }
            }
        }
        inflow = next;
    }
    Allocation::new(t_n, s_n, a_n, omega)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::instances::{default_lower_bound_horizon, lower_bound_states::right, make_lower_bound_instance};
    use crate::mdp::testutil::random_mdp;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Toy: two tasks equal except one row.
    fn two_task_toy(rng: &mut ChaCha8Rng) -> (TaskSet, usize, usize) {
        let base = random_mdp(rng, 3, 2, 3);
        let (s, a) = (rng.random_range(0..3), rng.random_range(0..2));
        let mut p = base.transitions_flat().to_vec();
        let row = &mut p[(s * 2 + a) * 3..(s * 2 + a + 1) * 3];
        let w: Vec<f64> = (0..3).map(|_| rng.random::<f64>() + 0.05).collect();
        let sum: f64 = w.iter().sum();
        row.iter_mut().zip(&w).for_each(|(x, v)| *x = v / sum);
        let other = TabularMdp::new(3, 2, 3, 0, p, base.rewards_flat().to_vec()).unwrap();
        (TaskSet::new(vec![base, other]).unwrap(), s, a)
    }

    /// `max` over deterministic policies of the time-averaged objective.
    fn enumerate_best(ts: &TaskSet, kl: &KlMatrix) -> f64 {
        let mdp = ts.task(kl.task);
        let (s_n, t_n, a_n) = (mdp.num_states(), mdp.horizon(), mdp.num_actions());
        let slots = s_n * t_n;
        let mut digits = vec![0usize; slots];
        let mut best = f64::NEG_INFINITY;
        for _ in 0..a_n.pow(slots as u32) {
            let pi = Policy::for_mdp(mdp, |t, s| digits[(t - 1) * s_n + s]);
            let alloc = Allocation::from_policy(mdp, &pi).unwrap();
            best = best.max(kl.objective(&alloc));
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
    fn two_task_toys_match_enumeration() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..5 {
            let (ts, s, a) = two_task_toy(&mut rng);
            let kl = kl_matrix(&ts, 0).unwrap();
            for (k, v) in kl.values[0].iter().enumerate() {
                assert_eq!(*v != 0.0, k == s * 2 + a);
            }
            let b = t_star(&ts, 0).unwrap();
            assert!(verify_allocation(&b.allocation, ts.task(0)).unwrap());
            assert!((b.t_star - enumerate_best(&ts, &kl)).abs() < 1e-7);
        }
    }

    #[test]
    fn duplicates_and_singletons() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_mdp(&mut rng, 3, 2, 3);
        let ts = TaskSet::new(vec![m.clone(), m.clone()]).unwrap();
        let kl = kl_matrix(&ts, 0).unwrap();
        assert!(kl.values[0].iter().all(|v| *v == 0.0));
        let b = t_star(&ts, 0).unwrap();
        assert_eq!(b.t_star, 0.0);
        assert_eq!(b.tau_lower(0.1), f64::INFINITY);
        assert_eq!(t_star(&TaskSet::new(vec![m]).unwrap(), 0), Err(BoundError::Singleton));
        assert_eq!(t_star(&ts, 5).unwrap_err(), BoundError::InvalidIndex(5));
    }

    #[test]
    fn weak_duality_and_monotonicity() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let tasks: Vec<_> = (0..4).map(|_| random_mdp(&mut rng, 3, 2, 4)).collect();
        let ts = TaskSet::new(tasks.clone()).unwrap();
        let b = t_star(&ts, 0).unwrap();
        let kl = kl_matrix(&ts, 0).unwrap();
        for _ in 0..50 {
            let pi = Policy::for_mdp(&tasks[0], |_, _| rng.random_range(0..2));
            let alloc = Allocation::from_policy(&tasks[0], &pi).unwrap();
            assert!(verify_allocation(&alloc, &tasks[0]).unwrap());
            assert!(kl.objective(&alloc) <= b.t_star + 1e-9);
        }
        let smaller = t_star(&TaskSet::new(tasks[..3].to_vec()).unwrap(), 0).unwrap();
        assert!(b.t_star <= smaller.t_star + 1e-9);
        assert!((b.tau_lower(0.05) - (1.0 / 0.12f64).ln() / b.t_star).abs() < 1e-12);
    }

    #[test]
    fn broken_flow_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mdp = random_mdp(&mut rng, 3, 2, 3);
        let pi = Policy::uniform(3, 3, 2);
        let mut alloc = Allocation::from_policy(&mdp, &pi).unwrap();
        assert!(verify_allocation(&alloc, &mdp).unwrap());
        alloc.omega_t[8] += 0.01;
        assert!(!verify_allocation(&alloc, &mdp).unwrap());
        let short = Allocation::new(2, 3, 2, vec![0.0; 12]).unwrap();
        assert_eq!(verify_allocation(&short, &mdp), Err(BoundError::Shape));
    }

    #[test]
    fn hard_instance_hand_allocation() {
        let m = 6;
        let horizon = default_lower_bound_horizon(m);
        let ts = make_lower_bound_instance(m, 4096, 0.4, horizon).unwrap().task_set;
        let alloc = lower_bound_allocation(ts.task(0), m).unwrap();
        assert!(verify_allocation(&alloc, ts.task(0)).unwrap());
        let omega = alloc.omega();
        for x in 1..=m {
            let s = right(m, x);
            assert!((omega[s * 2] - 1.0 / (horizon * m) as f64).abs() < 1e-15);
            assert!((alloc.omega_t(x + 1, s, 1) - (m - x) as f64 / m as f64).abs() < 1e-12);
        }
        let kl = kl_matrix(&ts, 0).unwrap();
        for x in 1..=m {
            let s = right(m, x);
            for (k, &j) in kl.alternatives.iter().enumerate() {
                if ts.pair_l1(0, j, s, 0) > 0.0 {
                    assert!(kl.values[k][s * 2] >= 0.4 * 0.4);
                }
            }
        }
    }
}
