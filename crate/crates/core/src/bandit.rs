//! Multi-task Gaussian bandits: every task is a vector of arm means with
//! unit-variance rewards, and test-time identification eliminates tasks by
//! pulling the arm that best separates a random pair.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use crate::error::BanditError;
use crate::identification::draw_pair;
use crate::trace::{Phase, RegretTrace};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BanditTask {
    means: Vec<f64>,
}

impl BanditTask {
    pub fn new(means: Vec<f64>) -> Result<Self, BanditError> {
        if means.is_empty() {
            return Err(BanditError::InvalidTask("no arms".into()));
        }
        if let Some(m) = means.iter().find(|m| !(0.0..=1.0).contains(*m)) {
            return Err(BanditError::InvalidTask(format!("mean {m} outside [0, 1]")));
        }
        Ok(Self { means })
    }

    pub fn means(&self) -> &[f64] {
        &self.means
    }

    pub fn num_arms(&self) -> usize {
        self.means.len()
    }

    /// Reward variance; fixed.
    pub fn variance(&self) -> f64 {
        1.0
    }

    /// Best arm, lowest index on ties.
    pub fn best_arm(&self) -> usize {
        let mut best = 0;
        for (a, m) in self.means.iter().enumerate() {
            if *m > self.means[best] {
                best = a;
            }
        }
        best
    }

    pub fn best_mean(&self) -> f64 {
        self.means[self.best_arm()]
    }
}

pub fn tasks_from_json(text: &str) -> Result<Vec<BanditTask>, BanditError> {
    let raw: Vec<Vec<f64>> =
        serde_json::from_str(text).map_err(|e| BanditError::InvalidTask(e.to_string()))?;
    let tasks = raw.into_iter().map(BanditTask::new).collect::<Result<Vec<_>, _>>()?;
    check_tasks(&tasks)?;
    Ok(tasks)
}

pub fn tasks_to_json(tasks: &[BanditTask]) -> String {
    serde_json::to_string_pretty(tasks).expect("plain numbers serialize")
}

fn check_tasks(tasks: &[BanditTask]) -> Result<(), BanditError> {
    let Some(first) = tasks.first() else {
        return Err(BanditError::InvalidTask("empty task list".into()));
    };
    if tasks.iter().any(|t| t.num_arms() != first.num_arms()) {
        return Err(BanditError::InvalidTask("tasks disagree on the arm count".into()));
    }
    Ok(())
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

/// l1 distance between the densities of `N(m1, 1)` and `N(m2, 1)` with
/// `|m1 - m2| = gap`: `2 (2 Phi(gap / 2) - 1)`.
pub fn gaussian_l1(gap: f64) -> f64 {
    2.0 * (2.0 * normal_cdf(gap.abs() / 2.0) - 1.0)
}

/// Mean gap whose unit-variance Gaussians are `l1` apart (bisection).
pub fn gaussian_gap_for_l1(l1: f64) -> Result<f64, BanditError> {
    if !(0.0..2.0).contains(&l1) {
        return Err(BanditError::InvalidParameter(format!("l1 {l1} outside [0, 2)")));
    }
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    while gaussian_l1(hi) < l1 {
        hi *= 2.0;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if gaussian_l1(mid) < l1 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(hi)
}

/// Log of the product of density ratios `N(x; mu1) / N(x; mu2)`.
pub fn gaussian_log_density_ratio(mu1: f64, mu2: f64, samples: &[f64]) -> f64 {
    samples
        .iter()
        .map(|x| ((x - mu2) * (x - mu2) - (x - mu1) * (x - mu1)) / 2.0)
        .sum()
}

/// `ceil(2 ln(2 M H) / lambda^4)`.
pub fn bandit_sample_count(m: usize, h: usize, lambda: f64) -> usize {
    (2.0 * (2.0 * m as f64 * h as f64).ln() / lambda.powi(4)).ceil() as usize
}

/// Arm maximising the mean gap between two tasks, lowest index on ties.
pub fn separating_arm(t1: &BanditTask, t2: &BanditTask) -> usize {
    let mut best = (0, f64::NEG_INFINITY);
    for (a, (m1, m2)) in t1.means.iter().zip(&t2.means).enumerate() {
        let g = (m1 - m2).abs();
        if g > best.1 {
            best = (a, g);
        }
    }
    best.0
}

/// Live pulls from the hidden test task with a budget of `H` pulls.
pub struct BanditEnv<R: Rng> {
    task: BanditTask,
    rng: R,
    budget: usize,
    used: usize,
    trace: RegretTrace,
}

impl<R: Rng> BanditEnv<R> {
    pub fn new(task: BanditTask, rng: R, budget: usize) -> Self {
        Self {
            task,
            rng,
            budget,
            used: 0,
            trace: RegretTrace::new(),
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

    fn gap(&self, arm: usize) -> f64 {
        (self.task.best_mean() - self.task.means[arm]).max(0.0)
    }

    /// One identification pull; rewards are unclipped Gaussians.
    pub fn pull(&mut self, arm: usize) -> Result<f64, BanditError> {
        if self.used >= self.budget {
            return Err(BanditError::BudgetExhausted { used: self.used });
        }
        if arm >= self.task.num_arms() {
            return Err(BanditError::InvalidParameter(format!("arm {arm} out of range")));
        }
        let z: f64 = StandardNormal.sample(&mut self.rng);
        self.used += 1;
        let gap = self.gap(arm);
        self.trace.push(1, gap, Phase::Identify);
        Ok(self.task.means[arm] + z)
    }

    /// Plays `arm` for every remaining pull.
    pub fn commit(&mut self, arm: usize) {
        let left = self.remaining();
        let gap = self.gap(arm);
        self.trace.push(left, gap, Phase::Commit);
        self.used = self.budget;
    }

    pub fn trace(&self) -> &RegretTrace {
        &self.trace
    }

    pub fn into_trace(self) -> RegretTrace {
        self.trace
    }

    fn retag_truncated(&mut self, pulls: usize) {
        // The interrupted test's pulls are the last `pulls` identify pulls.
        let mut rebuilt = RegretTrace::new();
        let keep = self.trace.len() - pulls;
        let mut seen = 0;
        for seg in self.trace.segments() {
            let head = seg.len.min(keep.saturating_sub(seen));
            rebuilt.push(head, seg.instant, seg.phase);
            rebuilt.push(seg.len - head, seg.instant, Phase::Truncated);
            seen += seg.len;
        }
        self.trace = rebuilt;
    }
}

#[derive(Debug, Clone)]
pub struct BanditRun {
    pub identified_task: usize,
    pub committed_arm: usize,
    pub pulls_identify: usize,
    pub truncated: bool,
    pub tests: usize,
    /// Distinct arms pulled before committing.
    pub arms_pulled: usize,
    pub trace: RegretTrace,
}

/// Pairwise elimination with `n` pulls per test, then commit to the
/// survivor's best arm for the rest of the budget.
pub fn bandit_identify_then_commit<R: Rng, G: Rng>(
    mut env: BanditEnv<R>,
    tasks: &[BanditTask],
    n: usize,
    rng: &mut G,
) -> Result<BanditRun, BanditError> {
    check_tasks(tasks)?;
    if tasks[0].num_arms() != env.task.num_arms() {
        return Err(BanditError::InvalidTask("test task has a different arm count".into()));
    }
    if n == 0 {
        return Err(BanditError::InvalidParameter("n must be at least 1".into()));
    }
    let mut alive: Vec<usize> = (0..tasks.len()).collect();
    let mut truncated = false;
    let mut tests = 0;
    let mut samples = Vec::with_capacity(n);
    let mut arms: Vec<usize> = Vec::new();
    while alive.len() > 1 {
        let (x, y) = draw_pair(rng, alive.len());
        let (i, j) = (alive[x], alive[y]);
        let arm = separating_arm(&tasks[i], &tasks[j]);
        if !arms.contains(&arm) {
            arms.push(arm);
        }
        samples.clear();
        while samples.len() < n && env.remaining() > 0 {
            samples.push(env.pull(arm)?);
        }
        if samples.len() < n {
            env.retag_truncated(samples.len());
            truncated = true;
            break;
        }
        tests += 1;
        let stat = gaussian_log_density_ratio(tasks[i].means[arm], tasks[j].means[arm], &samples);
        let loser = if stat >= 0.0 { j } else { i };
        alive.retain(|k| *k != loser);
    }
    let survivor = alive[0];
    let pulls_identify = env.used();
    let arm = tasks[survivor].best_arm();
    env.commit(arm);
    Ok(BanditRun {
        identified_task: survivor,
        committed_arm: arm,
        pulls_identify,
        truncated,
        tests,
        arms_pulled: arms.len(),
        trace: env.trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn quadrature_l1(gap: f64) -> f64 {
        // Midpoint rule on [-12, 12 + gap].
        let (lo, hi, k) = (-12.0, 12.0 + gap, 200_000);
        let w = (hi - lo) / k as f64;
        let phi = |x: f64| (-(x * x) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
        (0..k)
            .map(|i| {
                let x = lo + (i as f64 + 0.5) * w;
                (phi(x) - phi(x - gap)).abs() * w
            })
            .sum()
    }

    #[test]
    fn closed_form_l1_matches_quadrature() {
        for gap in [0.05, 0.3, 0.5067, 1.0, 2.5] {
            assert!((gaussian_l1(gap) - quadrature_l1(gap)).abs() < 1e-6, "gap {gap}");
        }
        let g = gaussian_gap_for_l1(0.4).unwrap();
        assert!((quadrature_l1(g) - 0.4).abs() < 1e-6);
        assert!(gaussian_gap_for_l1(2.0).is_err());
    }

    #[test]
    fn density_ratio_algebra() {
        assert_eq!(gaussian_log_density_ratio(0.3, 0.3, &[1.0, -2.0]), 0.0);
        let g = 0.25;
        let v = gaussian_log_density_ratio(0.5, 0.5 - g, &[0.5]);
        assert!((v - g * g / 2.0).abs() < 1e-15);
    }

    #[test]
    fn density_ratio_mean_is_n_kl() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (mu1, g, n, trials) = (0.6, 0.3, 5, 100_000);
        let mut sum = 0.0;
        let mut sq = 0.0;
        let mut buf = vec![0.0; n];
        for _ in 0..trials {
            for x in buf.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *x = mu1 + z;
            }
            let v = gaussian_log_density_ratio(mu1, mu1 - g, &buf);
            sum += v;
            sq += v * v;
        }
        let mean = sum / trials as f64;
        let se = ((sq / trials as f64 - mean * mean) / trials as f64).sqrt();
        assert!((mean - n as f64 * g * g / 2.0).abs() < 3.0 * se);
    }

    fn toy() -> Vec<BanditTask> {
        vec![
            BanditTask::new(vec![0.9, 0.1, 0.5]).unwrap(),
            BanditTask::new(vec![0.1, 0.9, 0.5]).unwrap(),
            BanditTask::new(vec![0.5, 0.5, 0.9]).unwrap(),
        ]
    }

    #[test]
    fn single_task_pulls_nothing() {
        let tasks = vec![BanditTask::new(vec![0.2, 0.7]).unwrap()];
        let env = BanditEnv::new(tasks[0].clone(), ChaCha8Rng::seed_from_u64(0), 10);
        let run = bandit_identify_then_commit(env, &tasks, 5, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        assert_eq!(run.pulls_identify, 0);
        assert_eq!(run.trace.total(), 0.0);
        assert_eq!(run.trace.len(), 10);
    }

    #[test]
    fn completes_with_exact_pull_count() {
        let tasks = toy();
        for seed in 0..20 {
            let env = BanditEnv::new(tasks[1].clone(), ChaCha8Rng::seed_from_u64(seed), 2000);
            let run =
                bandit_identify_then_commit(env, &tasks, 400, &mut ChaCha8Rng::seed_from_u64(seed + 99))
                    .unwrap();
            assert_eq!(run.pulls_identify, 800);
            assert_eq!(run.identified_task, 1);
            assert_eq!(run.trace.len(), 2000);
            assert_eq!(run.trace.episodes_in(Phase::Commit), 1200);
            assert!(run.trace.total() <= 2000.0);
        }
    }

    #[test]
    fn truncation_is_tagged() {
        let tasks = toy();
        let env = BanditEnv::new(tasks[0].clone(), ChaCha8Rng::seed_from_u64(0), 50);
        let run = bandit_identify_then_commit(env, &tasks, 40, &mut ChaCha8Rng::seed_from_u64(3))
            .unwrap();
        assert!(run.truncated);
        assert_eq!(run.pulls_identify, 50);
        assert_eq!(run.trace.episodes_in(Phase::Identify), 40);
        assert_eq!(run.trace.episodes_in(Phase::Truncated), 10);
        assert_eq!(run.trace.len(), 50);
    }

    #[test]
    fn json_round_trip() {
        let tasks = toy();
        assert_eq!(tasks_from_json(&tasks_to_json(&tasks)).unwrap(), tasks);
        assert!(tasks_from_json("[[0.1],[0.2,0.3]]").is_err());
        assert!(tasks_from_json("[[1.5]]").is_err());
    }
}
