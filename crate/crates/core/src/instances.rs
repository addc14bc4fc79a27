//! Constructive task-set generators: the two-chain hard instance, clustered,
//! tree-structured and revealing families, random separated sets, and the
//! Gaussian bandit hard instance.
//!
//! Every generator validates its output with the matching checker before
//! returning it, so a successful call is a certified instance.

use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::bandit::{gaussian_gap_for_l1, BanditTask};
use crate::error::GeneratorError;
use crate::mdp::{optimal_policy, Policy, TabularMdp};
use crate::rng::{stream_rng, Stream};
use crate::task_set::{
    check_cluster_structure, check_reachability, check_revealing_policy_set, check_strong_reachability,
    separation_report, ClusterStructure, TaskSet, SEPARATION_TOL,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    LowerBound,
    Clustered,
    Tree,
    Revealing,
    Random,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LowerBoundParams {
    pub m: usize,
    pub h: usize,
    pub lambda: f64,
    pub delta1: f64,
    pub delta2: f64,
    pub horizon: usize,
}

/// Internal node of a planted split tree.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    pub tasks: Vec<usize>,
    pub d_plus: Vec<usize>,
    pub d_minus: Vec<usize>,
    pub pair: (usize, usize),
}

/// Structure annotations written next to a generated task set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Metadata {
    pub family: Family,
    pub lambda: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub clusters: Option<Vec<Vec<usize>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree: Option<Vec<TreeNode>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revealing_policies: Option<Vec<Policy>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub revealing_pairs: Option<Vec<(usize, usize)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lower_bound: Option<LowerBoundParams>,
}

impl Metadata {
    fn new(family: Family, lambda: f64, seed: Option<u64>) -> Self {
        Self {
            family,
            lambda,
            seed,
            clusters: None,
            beta: None,
            tree: None,
            revealing_policies: None,
            revealing_pairs: None,
            lower_bound: None,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metadata serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    pub fn cluster_structure(&self, m: usize) -> Option<ClusterStructure> {
        self.clusters
            .as_ref()
            .and_then(|c| ClusterStructure::new(c.clone(), m).ok())
    }
}

#[derive(Debug, Clone)]
pub struct GeneratorOutput {
    pub task_set: TaskSet,
    pub metadata: Metadata,
}

/// Dense builder for one task; rows start empty and must be filled.
struct Builder {
    s_n: usize,
    a_n: usize,
    p: Vec<f64>,
    r: Vec<f64>,
}

impl Builder {
    fn new(s_n: usize, a_n: usize) -> Self {
        Self {
            s_n,
            a_n,
            p: vec![0.0; s_n * a_n * s_n],
            r: vec![0.0; s_n * a_n],
        }
    }

    fn row(&mut self, s: usize, a: usize, next: &[(usize, f64)]) {
        let base = (s * self.a_n + a) * self.s_n;
        self.p[base..base + self.s_n].fill(0.0);
        for &(s2, w) in next {
            self.p[base + s2] += w;
        }
    }

    /// Same row for every action.
    fn all(&mut self, s: usize, next: &[(usize, f64)]) {
        for a in 0..self.a_n {
            self.row(s, a, next);
        }
    }

    fn random_rewards<R: Rng>(&mut self, rng: &mut R) {
        for r in &mut self.r {
            *r = rng.random();
        }
    }

    fn build(self, horizon: usize, s1: usize) -> Result<TabularMdp, GeneratorError> {
        Ok(TabularMdp::new(self.s_n, self.a_n, horizon, s1, self.p, self.r)?)
    }
}

fn check_lambda(lambda: f64) -> Result<(), GeneratorError> {
    if !(lambda > 0.0 && lambda <= 2.0) {
        return Err(GeneratorError::Constraint(format!("lambda {lambda} outside (0, 2]")));
    }
    Ok(())
}

fn probe_row(hi: bool, lambda: f64, up: usize, down: usize) -> [(usize, f64); 2] {
    let q = if hi { 0.5 + lambda / 4.0 } else { 0.5 - lambda / 4.0 };
    [(up, q), (down, 1.0 - q)]
}

// ---------------------------------------------------------------------------
// Two-chain hard instance

/// Horizon used when none is given: the smallest that certifies reachability
/// with one step of slack.
pub fn default_lower_bound_horizon(m: usize) -> usize {
    2 * (m + 2) + 1
}

/// State layout of the hard instance: start `0`, left chain `1..=M`, right
/// chain `M+1..=2M`, then the high and low absorbing pair.
pub mod lower_bound_states {
    pub const START: usize = 0;
    pub fn left(j: usize) -> usize {
        j
    }
    pub fn right(m: usize, x: usize) -> usize {
        m + x
    }
    pub fn high(m: usize) -> usize {
        2 * m + 1
    }
    pub fn low(m: usize) -> usize {
        2 * m + 2
    }
}

/// Right-chain positions `x` (1-based) whose jump is the less noisy one for
/// task `i` (0-based): a cyclic window of `M / 2` positions starting at `i + 1`.
pub fn lower_bound_group(m: usize, i: usize) -> Vec<usize> {
    (0..m / 2).map(|k| (i + k) % m + 1).collect()
}

impl LowerBoundParams {
    pub fn new(m: usize, h: usize, lambda: f64, horizon: usize) -> Result<Self, GeneratorError> {
        if m < 2 {
            return Err(GeneratorError::Constraint("M must be at least 2".into()));
        }
        if !(lambda > 0.0 && lambda < 1.0) {
            return Err(GeneratorError::Constraint(format!("lambda {lambda} outside (0, 1)")));
        }
        if h < 2 || h + 1 < m {
            return Err(GeneratorError::Constraint(format!("H = {h} must be >= max(2, M - 1)")));
        }
        if horizon <= m {
            return Err(GeneratorError::Constraint(format!("T = {horizon} must exceed M = {m}")));
        }
        let hf = h as f64;
        let delta1 = 1.0 / hf.sqrt();
        let delta2 = hf.ln() / hf.sqrt();
        if delta2 + lambda / 2.0 > 1.0 {
            return Err(GeneratorError::Constraint(format!(
                "lambda / 2 + ln(H) / sqrt(H) = {} > 1",
                delta2 + lambda / 2.0
            )));
        }
        Ok(Self {
            m,
            h,
            lambda,
            delta1,
            delta2,
            horizon,
        })
    }

    /// Task `i` (0-based) of the family.
    pub fn task(&self, i: usize) -> Result<TabularMdp, GeneratorError> {
        use lower_bound_states::*;
        let m = self.m;
        let (hi, lo) = (high(m), low(m));
        let mut b = Builder::new(2 * m + 3, 2);
        b.row(START, 0, &[(left(1), 1.0)]);
        b.row(START, 1, &[(right(m, 1), 1.0)]);
        for j in 1..=m {
            let s = left(j);
            if j == i + 1 {
                b.row(s, 0, &[(hi, 1.0)]);
            } else {
                b.row(s, 0, &[(hi, 1.0 - self.delta1), (lo, self.delta1)]);
            }
            b.row(s, 1, &[(left((j + 1).min(m)), 1.0)]);
        }
        let group = lower_bound_group(m, i);
        for x in 1..=m {
            let s = right(m, x);
            let stay = if group.contains(&x) {
                1.0 - self.delta2
            } else {
                1.0 - self.delta2 - self.lambda / 2.0
            };
            b.row(s, 0, &[(hi, stay), (lo, 1.0 - stay)]);
            b.row(s, 1, &[(right(m, (x + 1).min(m)), 1.0)]);
        }
        b.all(hi, &[(lo, 1.0)]);
        b.all(lo, &[(lo, 1.0)]);
        b.r[hi * 2] = 1.0;
        b.r[hi * 2 + 1] = 1.0;
        b.build(self.horizon, START)
    }
}

pub fn make_lower_bound_instance(
    m: usize,
    h: usize,
    lambda: f64,
    horizon: usize,
) -> Result<GeneratorOutput, GeneratorError> {
    let params = LowerBoundParams::new(m, h, lambda, horizon)?;
    let tasks = (0..m).map(|i| params.task(i)).collect::<Result<Vec<_>, _>>()?;
    let task_set = TaskSet::new(tasks)?;
    let mut metadata = Metadata::new(Family::LowerBound, lambda, None);
    metadata.lower_bound = Some(params);
    Ok(GeneratorOutput { task_set, metadata })
}

// ---------------------------------------------------------------------------
// Clustered

/// Shared layout of the probe families: a hub that either enters the probe
/// chain or flips a fair coin between the two outcome states, the outcome
/// states (which return to the hub or drop into the sink) and the sink.
const HUB: usize = 0;
const OUT_HI: usize = 1;
const OUT_LO: usize = 2;
const SINK: usize = 3;
const CHAIN: usize = 4;

fn probe_skeleton(s_n: usize, chain_len: usize, sink_exit: usize) -> Builder {
    let mut b = Builder::new(s_n, 2);
    b.row(HUB, 0, &[(CHAIN, 1.0)]);
    b.row(HUB, 1, &[(OUT_HI, 0.5), (OUT_LO, 0.5)]);
    for o in [OUT_HI, OUT_LO] {
        b.row(o, 0, &[(HUB, 1.0)]);
        b.row(o, 1, &[(SINK, 1.0)]);
    }
    b.row(SINK, 0, &[(SINK, 1.0)]);
    b.row(SINK, 1, &[(sink_exit, 1.0)]);
    for p in 0..chain_len {
        let next = if p + 1 < chain_len { CHAIN + p + 1 } else { SINK };
        b.row(CHAIN + p, 0, &[(next, 1.0)]);
    }
    b
}

pub fn default_clustered_horizon(k: usize, n: usize, s_extra: usize) -> usize {
    2 * (k + n + 1).max(s_extra + 3).max(4) + 2
}

/// `K` clusters of `N` tasks each; task `k * N + j` is member `j` of
/// cluster `k`. Cluster `k` is signed at chain pair `k` and member `j` at
/// chain pair `K + j`.
pub fn make_clustered_instance(
    k: usize,
    n: usize,
    lambda: f64,
    s_extra: usize,
    horizon: usize,
    seed: u64,
) -> Result<GeneratorOutput, GeneratorError> {
    if !(n >= k && k >= 2) {
        return Err(GeneratorError::Infeasible(format!("need N >= K >= 2, got K={k}, N={n}")));
    }
    check_lambda(lambda)?;
    let chain = k + n;
    let filler = CHAIN + chain;
    let s_n = filler + s_extra;
    let mut rng = stream_rng(seed, Stream::Instance);
    let mut tasks = Vec::with_capacity(k * n);
    for c in 0..k {
        for j in 0..n {
            let exit = if s_extra > 0 { filler } else { SINK };
            let mut b = probe_skeleton(s_n, chain, exit);
            for p in 0..chain {
                let hi = if p < k { p == c } else { p - k == j };
                b.row(CHAIN + p, 1, &probe_row(hi, lambda, OUT_HI, OUT_LO));
            }
            for f in 0..s_extra {
                let next = if f + 1 < s_extra { filler + f + 1 } else { SINK };
                b.row(filler + f, 0, &[(next, 1.0)]);
                b.row(filler + f, 1, &[(SINK, 1.0)]);
            }
            b.random_rewards(&mut rng);
            tasks.push(b.build(horizon, HUB)?);
        }
    }
    let task_set = TaskSet::new(tasks)?;
    let partition: Vec<Vec<usize>> = (0..k).map(|c| (c * n..(c + 1) * n).collect()).collect();
    let cs = ClusterStructure::new(partition.clone(), k * n)?;
    let report = check_cluster_structure(&task_set, &cs, lambda)?;
    if !report.ok {
        return Err(GeneratorError::Infeasible(format!(
            "cluster checks failed (reachability ok: {}); increase T",
            report.reachability_ok
        )));
    }
    let mut metadata = Metadata::new(Family::Clustered, lambda, Some(seed));
    metadata.clusters = Some(partition);
    Ok(GeneratorOutput { task_set, metadata })
}

// ---------------------------------------------------------------------------
// Tree

pub fn default_tree_horizon(m: usize) -> usize {
    2 * m.max(4) + 2
}

/// Balanced binary split tree over `0..M`: each internal node sends the
/// first `ceil(|D| / 2)` of its tasks to the high side of its own probe pair.
pub fn make_tree_instance(
    m: usize,
    beta: f64,
    lambda: f64,
    horizon: usize,
    seed: u64,
) -> Result<GeneratorOutput, GeneratorError> {
    if m < 2 {
        return Err(GeneratorError::Infeasible("M must be at least 2".into()));
    }
    if !(0.5..1.0).contains(&beta) {
        return Err(GeneratorError::Constraint(format!("beta {beta} outside [1/2, 1)")));
    }
    check_lambda(lambda)?;
    // Breadth-first node list: (lo, hi) task ranges.
    let mut ranges = vec![(0usize, m)];
    let mut q = 0;
    while q < ranges.len() {
        let (lo, hi) = ranges[q];
        let len = hi - lo;
        let mid = lo + len.div_ceil(2);
        if len.div_ceil(2) as f64 > beta * len as f64 + 1e-9 {
            return Err(GeneratorError::Infeasible(format!(
                "a node of {len} tasks cannot be split within beta = {beta}"
            )));
        }
        for (a, b) in [(lo, mid), (mid, hi)] {
            if b - a >= 2 {
                ranges.push((a, b));
            }
        }
        q += 1;
    }
    let chain = ranges.len();
    let s_n = CHAIN + chain;
    let mut rng = stream_rng(seed, Stream::Instance);
    let mut tasks = Vec::with_capacity(m);
    for i in 0..m {
        let mut b = probe_skeleton(s_n, chain, SINK);
        for (p, &(lo, hi)) in ranges.iter().enumerate() {
            let mid = lo + (hi - lo).div_ceil(2);
            b.row(CHAIN + p, 1, &probe_row((lo..mid).contains(&i), lambda, OUT_HI, OUT_LO));
        }
        b.random_rewards(&mut rng);
        tasks.push(b.build(horizon, HUB)?);
    }
    let task_set = TaskSet::new(tasks)?;
    let mut nodes = Vec::with_capacity(chain);
    for (p, &(lo, hi)) in ranges.iter().enumerate() {
        let mid = lo + (hi - lo).div_ceil(2);
        let node = TreeNode {
            tasks: (lo..hi).collect(),
            d_plus: (lo..mid).collect(),
            d_minus: (mid..hi).collect(),
            pair: (CHAIN + p, 1),
        };
        if !check_strong_reachability(&task_set, &node.tasks, node.pair)? {
            return Err(GeneratorError::Infeasible(format!(
                "probe pair of node {p} is not strongly reachable; increase T"
            )));
        }
        nodes.push(node);
    }
    let mut metadata = Metadata::new(Family::Tree, lambda, Some(seed));
    metadata.beta = Some(beta);
    metadata.tree = Some(nodes);
    Ok(GeneratorOutput { task_set, metadata })
}

/// Depth of the planted tree (root at depth 1).
pub fn planted_tree_depth(nodes: &[TreeNode]) -> usize {
    fn depth(nodes: &[TreeNode], tasks: &[usize]) -> usize {
        match nodes.iter().find(|n| n.tasks == tasks) {
            None => 0,
            Some(n) => 1 + depth(nodes, &n.d_plus).max(depth(nodes, &n.d_minus)),
        }
    }
    nodes.first().map_or(0, |root| depth(nodes, &root.tasks))
}

// ---------------------------------------------------------------------------
// Revealing

fn code_bits(m: usize) -> usize {
    (usize::BITS - (m - 1).leading_zeros()) as usize
}

pub fn default_revealing_horizon(m: usize) -> usize {
    2 * (3 * code_bits(m.max(2)) + 8)
}

/// Tasks carry distinct binary codes read off probe pairs along one shared
/// line. The first action picks one of `I` gates; gate `g` reaches the line
/// surely in the tasks of group `g` (`task % I`) and leaks a little mass to
/// the sink elsewhere. The planted policy `g` takes gate `g` and probes every
/// bit once.
pub fn make_revealing_instance(
    m: usize,
    i_n: usize,
    lambda: f64,
    horizon: usize,
    seed: u64,
) -> Result<GeneratorOutput, GeneratorError> {
    if m < 2 {
        return Err(GeneratorError::Infeasible("M must be at least 2".into()));
    }
    if i_n == 0 {
        return Err(GeneratorError::Constraint("I must be at least 1".into()));
    }
    check_lambda(lambda)?;
    const START: usize = 0;
    const END: usize = 1;
    let bits = code_bits(m);
    let line = |l: usize| 2 + 3 * l;
    let next = |l: usize| if l + 1 < bits { line(l + 1) } else { END };
    let s_n = 2 + 3 * bits;
    let a_n = i_n.max(2);
    let leak = lambda / 4.0;
    let mut rng = stream_rng(seed, Stream::Instance);
    let mut tasks = Vec::with_capacity(m);
    for t in 0..m {
        let mut b = Builder::new(s_n, a_n);
        for g in 0..a_n {
            if g >= i_n {
                b.row(START, g, &[(END, 1.0)]);
            } else if g == t % i_n {
                b.row(START, g, &[(line(0), 1.0)]);
            } else {
                b.row(START, g, &[(line(0), 1.0 - leak), (END, leak)]);
            }
        }
        b.all(END, &[(END, 1.0)]);
        for l in 0..bits {
            let (s, up, down) = (line(l), line(l) + 1, line(l) + 2);
            b.all(s, &[(next(l), 1.0)]);
            b.row(s, 0, &probe_row((t >> l) & 1 == 1, lambda, up, down));
            for o in [up, down] {
                b.all(o, &[(next(l), 1.0)]);
                b.row(o, 0, &[(s, 1.0)]);
            }
        }
        b.random_rewards(&mut rng);
        let mdp = b.build(horizon, START)?;
        let rep = check_reachability(&mdp);
        if !rep.ok {
            return Err(GeneratorError::Infeasible(format!(
                "state {} not reachable in T/2 (expected hitting time {:.2}); increase T",
                rep.worst_state, rep.worst_value
            )));
        }
        tasks.push(mdp);
    }
    let task_set = TaskSet::new(tasks)?;
    let policies: Vec<Policy> = (0..i_n)
        .map(|g| {
            Policy::deterministic(horizon, s_n, a_n, |_, s| {
                if s == START {
                    g
                } else if s == END || (s >= 2 && (s - 2) % 3 == 0) {
                    0
                } else {
                    1
                }
            })
        })
        .collect();
    let report = check_revealing_policy_set(&task_set, &policies)?;
    if !report.ok {
        return Err(GeneratorError::Infeasible("planted policies do not reveal every task".into()));
    }
    let mut metadata = Metadata::new(Family::Revealing, lambda, Some(seed));
    metadata.revealing_pairs = Some((0..bits).map(|l| (line(l), 0)).collect());
    metadata.revealing_policies = Some(policies);
    Ok(GeneratorOutput { task_set, metadata })
}

// ---------------------------------------------------------------------------
// Random separated

pub const REPAIR_ATTEMPTS: usize = 200;

/// Random dense tasks, repaired until every pair is `lambda`-separated and
/// every task passes the reachability check.
pub fn make_random_separated_instance(
    m: usize,
    s_n: usize,
    a_n: usize,
    horizon: usize,
    lambda: f64,
    seed: u64,
) -> Result<GeneratorOutput, GeneratorError> {
    if m < 2 || s_n < 2 || a_n == 0 || horizon == 0 {
        return Err(GeneratorError::Infeasible("need M >= 2, S >= 2, A >= 1, T >= 1".into()));
    }
    // Any row can be pushed to within 2 (1 - 1/S) of another.
    if !(lambda > 0.0 && lambda < 2.0 * (1.0 - 1.0 / s_n as f64)) {
        return Err(GeneratorError::Infeasible(format!(
            "lambda {lambda} cannot be reached with S = {s_n}"
        )));
    }
    let mut rng = stream_rng(seed, Stream::Instance);
    let mut p: Vec<Vec<f64>> = Vec::with_capacity(m);
    let mut r: Vec<Vec<f64>> = Vec::with_capacity(m);
    for _ in 0..m {
        let mut pt = Vec::with_capacity(s_n * a_n * s_n);
        for _ in 0..s_n * a_n {
            let row: Vec<f64> = (0..s_n).map(|_| Exp1.sample(&mut rng)).collect();
            let sum: f64 = row.iter().sum();
            pt.extend(row.into_iter().map(|v: f64| v / sum));
        }
        p.push(pt);
        r.push((0..s_n * a_n).map(|_| rng.random()).collect());
    }
    let build = |p: &[Vec<f64>]| -> Result<TaskSet, GeneratorError> {
        let tasks = p
            .iter()
            .zip(&r)
            .map(|(pt, rt)| TabularMdp::new(s_n, a_n, horizon, 0, pt.clone(), rt.clone()))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(TaskSet::new(tasks)?)
    };
    let mut attempts = 0;
    let task_set = loop {
        let ts = build(&p)?;
        let report = separation_report(&ts)?;
        if report.lambda >= lambda - SEPARATION_TOL {
            break ts;
        }
        if attempts == REPAIR_ATTEMPTS {
            return Err(GeneratorError::RepairExhausted(attempts));
        }
        attempts += 1;
        let worst = report
            .pairs
            .iter()
            .min_by(|a, b| a.l1.total_cmp(&b.l1))
            .expect("at least one pair");
        let base = (worst.state * a_n + worst.action) * s_n;
        let anchor = &p[worst.i][base..base + s_n];
        let v = (0..s_n)
            .min_by(|a, b| anchor[*a].total_cmp(&anchor[*b]))
            .expect("S >= 2");
        let step = lambda / 2.0;
        let row = &mut p[worst.j][base..base + s_n];
        for (k, x) in row.iter_mut().enumerate() {
            *x = (1.0 - step) * *x + if k == v { step } else { 0.0 };
        }
        let sum: f64 = row.iter().sum();
        row.iter_mut().for_each(|x| *x /= sum);
    };
    for (i, mdp) in task_set.tasks().iter().enumerate() {
        let rep = check_reachability(mdp);
        if !rep.ok {
            return Err(GeneratorError::Infeasible(format!(
                "task {i}: state {} not reachable in T/2; increase T",
                rep.worst_state
            )));
        }
    }
    Ok(GeneratorOutput {
        task_set,
        metadata: Metadata::new(Family::Random, lambda, Some(seed)),
    })
}

// ---------------------------------------------------------------------------
// Gaussian bandit hard instance

/// Mean of the optimal arm of every task.
pub const BANDIT_TOP_MEAN: f64 = 1.0;

/// `2M` unit-variance Gaussian arms per task. In task `i` arm `i` is optimal
/// and the other first-block arms trail by `1/sqrt(H)`; in the second block a
/// cyclic window of `M/2` arms starting at `M + i` trails by
/// `ln(H)/sqrt(H)` and the rest trail by a further gap whose Gaussians are
/// `lambda` apart in l1.
pub fn make_bandit_lower_bound_instance(
    m: usize,
    h: usize,
    lambda: f64,
) -> Result<Vec<BanditTask>, GeneratorError> {
    if m < 2 || h < 2 {
        return Err(GeneratorError::Constraint("need M >= 2 and H >= 2".into()));
    }
    let hf = h as f64;
    let (d1, d2) = (1.0 / hf.sqrt(), hf.ln() / hf.sqrt());
    if !(lambda > 0.0 && lambda + d2 <= 1.0) {
        return Err(GeneratorError::Constraint(format!(
            "lambda + ln(H)/sqrt(H) = {} > 1",
            lambda + d2
        )));
    }
    let g = gaussian_gap_for_l1(lambda).map_err(|e| GeneratorError::Constraint(e.to_string()))?;
    let low = BANDIT_TOP_MEAN - d2 - g;
    if low < 0.0 {
        return Err(GeneratorError::Constraint(format!(
            "second-block mean {low} would be negative"
        )));
    }
    (0..m)
        .map(|i| {
            let mut means = vec![BANDIT_TOP_MEAN - d1; 2 * m];
            means[i] = BANDIT_TOP_MEAN;
            for x in 0..m {
                means[m + x] = low;
            }
            for k in 0..m / 2 {
                means[m + (i + k) % m] = BANDIT_TOP_MEAN - d2;
            }
            BanditTask::new(means).map_err(|e| GeneratorError::Constraint(e.to_string()))
        })
        .collect()
}

/// Optimal value of every task (checked by the tests for the hard instance).
pub fn optimal_values(ts: &TaskSet) -> Vec<f64> {
    ts.tasks().iter().map(|t| optimal_policy(t).1).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bandit::gaussian_l1;
    use crate::mdp::{evaluate_policy, min_hitting_policy, HitTarget};
    use crate::task_set::find_tree_split;

    /// Brute-force separation: min over pairs of max over rows of l1.
    fn brute_lambda(ts: &TaskSet) -> f64 {
        let sh = ts.shape();
        let mut worst = f64::INFINITY;
        for i in 0..ts.len() {
            for j in i + 1..ts.len() {
                let mut best: f64 = 0.0;
                for s in 0..sh.num_states {
                    for a in 0..sh.num_actions {
                        let d: f64 = ts
                            .task(i)
                            .row(s, a)
                            .iter()
                            .zip(ts.task(j).row(s, a))
                            .map(|(x, y)| (x - y).abs())
                            .sum();
                        best = best.max(d);
                    }
                }
                worst = worst.min(best);
            }
        }
        worst
    }

    #[test]
    fn lower_bound_shape_and_values() {
        for m in [2, 4, 6, 7] {
            let out = make_lower_bound_instance(m, 4096, 0.4, default_lower_bound_horizon(m)).unwrap();
            let sh = out.task_set.shape();
            assert_eq!((sh.num_states, sh.num_actions), (2 * m + 3, 2));
            for v in optimal_values(&out.task_set) {
                assert!((v - 1.0).abs() < 1e-12);
            }
            assert!((brute_lambda(&out.task_set) - 0.4).abs() < 1e-12);
            let rep = separation_report(&out.task_set).unwrap();
            assert!((rep.lambda - 0.4).abs() < 1e-12);
            for t in out.task_set.tasks() {
                assert!(check_reachability(t).ok);
            }
        }
    }

    #[test]
    fn lower_bound_right_chain_certifies_every_pair() {
        use lower_bound_states::right;
        let m = 6;
        let ts = make_lower_bound_instance(m, 4096, 0.4, 17).unwrap().task_set;
        for i in 0..m {
            for j in 0..m {
                if i != j {
                    let ok = (1..=m).any(|x| ts.pair_l1(i, j, right(m, x), 0) >= 0.4 - 1e-12);
                    assert!(ok, "pair ({i}, {j})");
                }
            }
        }
    }

    #[test]
    fn lower_bound_gaps_and_hitting() {
        use lower_bound_states::*;
        let (m, h) = (6, 4096);
        let p = LowerBoundParams::new(m, h, 0.4, 17).unwrap();
        assert_eq!(p.delta1, 1.0 / 64.0);
        let mdp = p.task(2).unwrap();
        // Walk the left chain and stop at a wrong position.
        let stop = 5;
        let pi = Policy::for_mdp(&mdp, |_, s| {
            if s == START {
                0
            } else if s == left(stop) {
                0
            } else {
                1
            }
        });
        let v = evaluate_policy(&mdp, &pi).unwrap();
        assert!((1.0 - v - p.delta1).abs() < 1e-12);
        for x in 1..=m {
            let (_, t) = min_hitting_policy(&mdp, HitTarget::State(right(m, x))).unwrap();
            assert_eq!(t, (x + 1) as f64);
        }
    }

    #[test]
    fn lower_bound_rejects_bad_params() {
        assert!(make_lower_bound_instance(4, 4096, 0.4, 4).is_err());
        assert!(make_lower_bound_instance(4, 4096, 1.2, 13).is_err());
        assert!(make_lower_bound_instance(4, 2, 0.4, 13).is_err());
        assert!(make_lower_bound_instance(8, 5, 0.4, 30).is_err());
        assert_eq!(lower_bound_group(6, 5), vec![6, 1, 2]);
    }

    #[test]
    fn clustered_passes_checker() {
        let out = make_clustered_instance(2, 3, 0.4, 2, default_clustered_horizon(2, 3, 2), 7).unwrap();
        assert_eq!(out.task_set.len(), 6);
        let clusters = out.metadata.clusters.clone().unwrap();
        assert_eq!(clusters.iter().map(Vec::len).collect::<Vec<_>>(), vec![3, 3]);
        let cs = out.metadata.cluster_structure(6).unwrap();
        assert!(check_cluster_structure(&out.task_set, &cs, 0.4).unwrap().ok);
        assert!(brute_lambda(&out.task_set) >= 0.4 - 1e-12);
        assert!(separation_report(&out.task_set).unwrap().lambda >= 0.4 - 1e-12);
        assert!(make_clustered_instance(3, 2, 0.4, 0, 30, 0).is_err());
        assert!(make_clustered_instance(2, 3, 0.4, 0, 4, 0).is_err());
    }

    #[test]
    fn generators_are_deterministic() {
        let a = make_clustered_instance(2, 3, 0.4, 1, 20, 5).unwrap().task_set;
        let b = make_clustered_instance(2, 3, 0.4, 1, 20, 5).unwrap().task_set;
        let c = make_clustered_instance(2, 3, 0.4, 1, 20, 6).unwrap().task_set;
        assert_eq!(a, b);
        assert_ne!(a, c);
        let r1 = make_random_separated_instance(4, 4, 2, 24, 0.5, 3).unwrap().task_set;
        let r2 = make_random_separated_instance(4, 4, 2, 24, 0.5, 3).unwrap().task_set;
        assert_eq!(r1.to_json(), r2.to_json());
    }

    #[test]
    fn tree_splits_validate() {
        for m in [2, 4, 8, 16] {
            let out = make_tree_instance(m, 0.5, 0.4, default_tree_horizon(m), 1).unwrap();
            let nodes = out.metadata.tree.as_ref().unwrap();
            assert_eq!(nodes.len(), m - 1);
            assert_eq!(planted_tree_depth(nodes), m.ilog2() as usize);
            for node in nodes {
                assert!(check_strong_reachability(&out.task_set, &node.tasks, node.pair).unwrap());
                let split = find_tree_split(&out.task_set, &node.tasks, 0.4, 0.5).unwrap();
                assert_eq!(split.d_plus, node.d_plus);
                assert_eq!(split.d_minus, node.d_minus);
                assert!(split.gap >= 0.4 - 1e-12);
            }
            assert!(brute_lambda(&out.task_set) >= 0.4 - 1e-12);
        }
        assert!(make_tree_instance(6, 0.5, 0.4, 20, 0).is_err());
        let out = make_tree_instance(6, 0.7, 0.4, 20, 0).unwrap();
        for node in out.metadata.tree.as_ref().unwrap() {
            let split = find_tree_split(&out.task_set, &node.tasks, 0.4, 0.7).unwrap();
            assert!(split.gap >= 0.4 - 1e-12);
        }
    }

    #[test]
    fn revealing_policies_cover() {
        for (m, i_n) in [(2, 1), (5, 1), (16, 2), (8, 3)] {
            let out = make_revealing_instance(m, i_n, 0.4, default_revealing_horizon(m), 2).unwrap();
            let pols = out.metadata.revealing_policies.as_ref().unwrap();
            assert_eq!(pols.len(), i_n);
            let rep = check_revealing_policy_set(&out.task_set, pols).unwrap();
            assert!(rep.ok);
            if i_n == 1 {
                assert!(rep.per_task.iter().all(|c| c.best_policy == 0 && c.min_reach >= 1.0 - 1e-12));
            }
            let sep = separation_report(&out.task_set).unwrap();
            assert!(sep.lambda >= 0.4 - 1e-12);
            assert!((brute_lambda(&out.task_set) - sep.lambda).abs() < 1e-12);
            let mut planted = out.metadata.revealing_pairs.clone().unwrap();
            let mut found = sep.revealing_set.clone();
            planted.sort();
            found.sort();
            assert_eq!(planted, found);
        }
    }

    #[test]
    fn random_instances_validate() {
        for seed in 0..5 {
            let out = make_random_separated_instance(5, 4, 2, 24, 0.6, seed).unwrap();
            assert!(separation_report(&out.task_set).unwrap().lambda >= 0.6 - 1e-9);
            assert!(out.task_set.tasks().iter().all(|t| check_reachability(t).ok));
        }
        let two = make_random_separated_instance(2, 3, 2, 24, 0.5, 9).unwrap();
        assert_eq!(separation_report(&two.task_set).unwrap().revealing_set.len(), 1);
        assert!(make_random_separated_instance(4, 2, 2, 12, 1.5, 0).is_err());
    }

    #[test]
    fn bandit_instance_layout() {
        let (m, h) = (8, 10_000);
        let tasks = make_bandit_lower_bound_instance(m, h, 0.4).unwrap();
        assert_eq!(tasks.len(), m);
        for (i, t) in tasks.iter().enumerate() {
            assert_eq!(t.num_arms(), 2 * m);
            assert_eq!(t.best_arm(), i);
            assert!((t.means()[(i + 1) % m] - (BANDIT_TOP_MEAN - 0.01)).abs() < 1e-15);
            let a1 = t.means()[m + i];
            let far = t.means()[m + (i + m / 2) % m];
            assert!((gaussian_l1(a1 - far) - 0.4).abs() < 1e-9);
        }
        assert!(make_bandit_lower_bound_instance(8, 10_000, 0.95).is_err());
    }

    #[test]
    fn metadata_round_trip() {
        let out = make_revealing_instance(4, 2, 0.4, default_revealing_horizon(4), 0).unwrap();
        let back = Metadata::from_json(&out.metadata.to_json()).unwrap();
        assert_eq!(back, out.metadata);
        assert!(Metadata::from_json(r#"{"family":"tree","lambda":0.4,"extra":1}"#).is_err());
    }
}
