//! The known finite task set and exact checkers for its structural
//! assumptions (separation, reachability, clusters, trees, revealing policies).

use serde::{Deserialize, Serialize};

use crate::error::TaskSetError;
use crate::mdp::{
    hitting_stats, l1_distance, min_hitting_policy, HitTarget, MdpDocument, Policy, TabularMdp,
};

/// Slack used when comparing an l1 gap against a separation level.
pub const SEPARATION_TOL: f64 = 1e-9;

/// `(S, A, T, s1)` shared by every task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Shape {
    pub num_states: usize,
    pub num_actions: usize,
    pub horizon: usize,
    pub initial_state: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskSet {
    tasks: Vec<TabularMdp>,
}

impl TaskSet {
    pub fn new(tasks: Vec<TabularMdp>) -> Result<Self, TaskSetError> {
        let first = tasks.first().ok_or(TaskSetError::Empty)?;
        for (index, t) in tasks.iter().enumerate().skip(1) {
            if !t.same_shape(first) {
                return Err(TaskSetError::ShapeMismatch {
                    index,
                    reason: format!(
                        "(S, A, T, s1) = ({}, {}, {}, {}) vs ({}, {}, {}, {})",
                        t.num_states(),
                        t.num_actions(),
                        t.horizon(),
                        t.initial_state(),
                        first.num_states(),
                        first.num_actions(),
                        first.horizon(),
                        first.initial_state()
                    ),
                });
            }
        }
        Ok(Self { tasks })
    }

    pub fn len(&self) -> usize {
        self.tasks.len()
    }

    /// Always false; kept for clippy symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.tasks.is_empty()
    }

    pub fn task(&self, i: usize) -> &TabularMdp {
        &self.tasks[i]
    }

    pub fn tasks(&self) -> &[TabularMdp] {
        &self.tasks
    }

    pub fn shape(&self) -> Shape {
        let t = &self.tasks[0];
        Shape {
            num_states: t.num_states(),
            num_actions: t.num_actions(),
            horizon: t.horizon(),
            initial_state: t.initial_state(),
        }
    }

    pub fn with_horizon(&self, horizon: usize) -> Result<Self, TaskSetError> {
        let tasks = self
            .tasks
            .iter()
            .map(|t| t.with_horizon(horizon))
            .collect::<Result<Vec<_>, _>>()?;
        Self::new(tasks)
    }

    /// `|| (p_i - p_j)(. | s, a) ||_1`.
    pub fn pair_l1(&self, i: usize, j: usize, s: usize, a: usize) -> f64 {
        l1_distance(self.tasks[i].row(s, a), self.tasks[j].row(s, a))
    }

    /// Best-separating `(s, a)` for tasks `i`, `j`; ties go to the lowest `(s, a)`.
    pub fn max_separation(&self, i: usize, j: usize) -> (usize, usize, f64) {
        let sh = self.shape();
        let mut best = (0, 0, f64::NEG_INFINITY);
        for s in 0..sh.num_states {
            for a in 0..sh.num_actions {
                let d = self.pair_l1(i, j, s, a);
                if d > best.2 {
                    best = (s, a, d);
                }
            }
        }
        best
    }

    pub(crate) fn check_indices(&self, subset: &[usize]) -> Result<(), TaskSetError> {
        let mut seen = vec![false; self.len()];
        for &i in subset {
            if i >= self.len() || seen[i] {
                return Err(TaskSetError::InvalidIndex(i));
            }
            seen[i] = true;
        }
        Ok(())
    }

    pub fn to_document(&self) -> TaskSetDocument {
        let sh = self.shape();
        TaskSetDocument {
            num_states: sh.num_states,
            num_actions: sh.num_actions,
            horizon: sh.horizon,
            s1: sh.initial_state,
            tasks: self.tasks.iter().map(TabularMdp::to_document).collect(),
        }
    }

    pub fn from_document(doc: &TaskSetDocument) -> Result<Self, TaskSetError> {
        let tasks = doc
            .tasks
            .iter()
            .map(TabularMdp::from_document)
            .collect::<Result<Vec<_>, _>>()?;
        let ts = Self::new(tasks)?;
        let sh = ts.shape();
        let declared = Shape {
            num_states: doc.num_states,
            num_actions: doc.num_actions,
            horizon: doc.horizon,
            initial_state: doc.s1,
        };
        if sh != declared {
            return Err(TaskSetError::ShapeMismatch {
                index: 0,
                reason: format!("declared {declared:?}, tasks are {sh:?}"),
            });
        }
        Ok(ts)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_document()).expect("task set serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TaskSetError> {
        let doc: TaskSetDocument = serde_json::from_str(text).map_err(|e| {
            TaskSetError::ShapeMismatch {
                index: 0,
                reason: format!("parse error: {e}"),
            }
        })?;
        Self::from_document(&doc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskSetDocument {
    #[serde(rename = "S")]
    pub num_states: usize,
    #[serde(rename = "A")]
    pub num_actions: usize,
    #[serde(rename = "T")]
    pub horizon: usize,
    pub s1: usize,
    pub tasks: Vec<MdpDocument>,
}

// ---------------------------------------------------------------------------
// Separation

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairSeparation {
    pub i: usize,
    pub j: usize,
    pub state: usize,
    pub action: usize,
    pub l1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeparationReport {
    pub lambda: f64,
    /// One entry per unordered pair `i < j`, in lexicographic order.
    pub pairs: Vec<PairSeparation>,
    pub revealing_set: Vec<(usize, usize)>,
}

impl SeparationReport {
    pub fn pair(&self, i: usize, j: usize) -> Option<&PairSeparation> {
        let (i, j) = if i < j { (i, j) } else { (j, i) };
        self.pairs.iter().find(|p| p.i == i && p.j == j)
    }
}

pub fn separation_report(ts: &TaskSet) -> Result<SeparationReport, TaskSetError> {
    if ts.len() < 2 {
        return Err(TaskSetError::Singleton);
    }
    let mut pairs = Vec::new();
    for i in 0..ts.len() {
        for j in i + 1..ts.len() {
            let (state, action, l1) = ts.max_separation(i, j);
            pairs.push(PairSeparation {
                i,
                j,
                state,
                action,
                l1,
            });
        }
    }
    let lambda = pairs.iter().map(|p| p.l1).fold(f64::INFINITY, f64::min);
    let revealing_set = revealing_set(ts, lambda)?;
    Ok(SeparationReport {
        lambda,
        pairs,
        revealing_set,
    })
}

/// Greedy covering set of `(s, a)` pairs separating every task pair at level
/// `lambda`: candidates are ranked once by how many task pairs they separate
/// and kept only if they cover something new.
pub fn revealing_set(ts: &TaskSet, lambda: f64) -> Result<Vec<(usize, usize)>, TaskSetError> {
    if ts.len() < 2 {
        return Err(TaskSetError::Singleton);
    }
    let sh = ts.shape();
    let m = ts.len();
    let task_pairs: Vec<(usize, usize)> =
        (0..m).flat_map(|i| (i + 1..m).map(move |j| (i, j))).collect();
    let mut ranked: Vec<((usize, usize), Vec<bool>)> = Vec::new();
    for s in 0..sh.num_states {
        for a in 0..sh.num_actions {
            let covers: Vec<bool> = task_pairs
                .iter()
                .map(|&(i, j)| ts.pair_l1(i, j, s, a) >= lambda - SEPARATION_TOL)
                .collect();
            if covers.iter().any(|c| *c) {
                ranked.push(((s, a), covers));
            }
        }
    }
    ranked.sort_by_key(|(_, c)| std::cmp::Reverse(c.iter().filter(|x| **x).count()));
    let mut covered = vec![false; task_pairs.len()];
    let mut out = Vec::new();
    for (pair, covers) in ranked {
        if covered.iter().all(|c| *c) {
            break;
        }
        if covers.iter().zip(&covered).any(|(c, done)| *c && !done) {
            covered.iter_mut().zip(&covers).for_each(|(d, c)| *d |= c);
            out.push(pair);
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Reachability

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReachabilityReport {
    pub ok: bool,
    pub worst_state: usize,
    /// Largest minimal truncated expected hitting time over states.
    pub worst_value: f64,
}

pub fn check_reachability(mdp: &TabularMdp) -> ReachabilityReport {
    let mut worst = (0, f64::NEG_INFINITY);
    for s in 0..mdp.num_states() {
        let (_, x) = min_hitting_policy(mdp, HitTarget::State(s)).expect("state in range");
        if x > worst.1 {
            worst = (s, x);
        }
    }
    ReachabilityReport {
        ok: worst.1 <= mdp.horizon() as f64 / 2.0,
        worst_state: worst.0,
        worst_value: worst.1,
    }
}

// ---------------------------------------------------------------------------
// Clusters

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterStructure {
    partition: Vec<Vec<usize>>,
}

impl ClusterStructure {
    /// Validates that `partition` splits `0..m` into non-empty disjoint cells.
    pub fn new(partition: Vec<Vec<usize>>, m: usize) -> Result<Self, TaskSetError> {
        let mut seen = vec![false; m];
        for cell in &partition {
            if cell.is_empty() {
                return Err(TaskSetError::NotPartition("empty cell".into()));
            }
            for &i in cell {
                if i >= m {
                    return Err(TaskSetError::NotPartition(format!("index {i} >= {m}")));
                }
                if seen[i] {
                    return Err(TaskSetError::NotPartition(format!("task {i} repeated")));
                }
                seen[i] = true;
            }
        }
        if let Some(i) = seen.iter().position(|x| !x) {
            return Err(TaskSetError::NotPartition(format!("task {i} not covered")));
        }
        Ok(Self { partition })
    }

    pub fn cells(&self) -> &[Vec<usize>] {
        &self.partition
    }

    /// Number of clusters `K`.
    pub fn k(&self) -> usize {
        self.partition.len()
    }

    /// Largest cluster size `N`.
    pub fn n(&self) -> usize {
        self.partition.iter().map(Vec::len).max().unwrap_or(0)
    }

    pub fn cluster_of(&self, task: usize) -> Option<usize> {
        self.partition.iter().position(|c| c.contains(&task))
    }
}

/// A certificate `(s, a)` separating one cluster from every outside task.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClusterCertificate {
    pub state: usize,
    pub action: usize,
    /// `min_{i in C, j not in C} l1` at `(state, action)`.
    pub gap: f64,
    /// The minimising inside/outside tasks at that pair.
    pub inside: usize,
    pub outside: usize,
}

/// `argmax_{(s,a)} min_{i in inside, j in outside} l1`, ties to the lowest `(s, a)`.
pub fn cluster_certificate(
    ts: &TaskSet,
    inside: &[usize],
    outside: &[usize],
) -> Option<ClusterCertificate> {
    if inside.is_empty() || outside.is_empty() {
        return None;
    }
    let sh = ts.shape();
    let mut best: Option<ClusterCertificate> = None;
    for s in 0..sh.num_states {
        for a in 0..sh.num_actions {
            let mut cert = ClusterCertificate {
                state: s,
                action: a,
                gap: f64::INFINITY,
                inside: inside[0],
                outside: outside[0],
            };
            for &i in inside {
                for &j in outside {
                    let d = ts.pair_l1(i, j, s, a);
                    if d < cert.gap {
                        cert.gap = d;
                        cert.inside = i;
                        cert.outside = j;
                    }
                }
            }
            if best.is_none_or(|b| cert.gap > b.gap) {
                best = Some(cert);
            }
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterReport {
    /// False when `K = 1`: there is no outside task to separate from.
    pub applicable: bool,
    pub certificates: Vec<Option<ClusterCertificate>>,
    pub separation_ok: bool,
    /// Largest cluster size is at least `K`, so the size bound `N + 1` exceeds `K`.
    pub n_at_least_k: bool,
    pub reachability_ok: bool,
    pub ok: bool,
}

pub fn check_cluster_structure(
    ts: &TaskSet,
    cs: &ClusterStructure,
    lambda: f64,
) -> Result<ClusterReport, TaskSetError> {
    let cs = ClusterStructure::new(cs.partition.clone(), ts.len())?;
    let applicable = cs.k() >= 2;
    let mut certificates = Vec::with_capacity(cs.k());
    for (k, cell) in cs.cells().iter().enumerate() {
        let outside: Vec<usize> = cs
            .cells()
            .iter()
            .enumerate()
            .filter(|(k2, _)| *k2 != k)
            .flat_map(|(_, c)| c.iter().copied())
            .collect();
        certificates.push(cluster_certificate(ts, cell, &outside));
    }
    let separation_ok = applicable
        && certificates
            .iter()
            .all(|c| c.is_some_and(|c| c.gap >= lambda - SEPARATION_TOL));
    let half = ts.shape().horizon as f64 / 2.0;
    let mut reachability_ok = true;
    'outer: for cell in cs.cells() {
        for &i in cell {
            for s in 0..ts.shape().num_states {
                let (pi, _) = min_hitting_policy(ts.task(i), HitTarget::State(s))?;
                for &j in cell {
                    if hitting_stats(ts.task(j), &pi, HitTarget::State(s))?.expected > half {
                        reachability_ok = false;
                        break 'outer;
                    }
                }
            }
        }
    }
    let n_at_least_k = cs.n() >= cs.k();
    Ok(ClusterReport {
        applicable,
        ok: applicable && separation_ok && n_at_least_k && reachability_ok,
        certificates,
        separation_ok,
        n_at_least_k,
        reachability_ok,
    })
}

// ---------------------------------------------------------------------------
// Strong reachability and tree splits

pub fn check_strong_reachability(
    ts: &TaskSet,
    subset: &[usize],
    pair: (usize, usize),
) -> Result<bool, TaskSetError> {
    ts.check_indices(subset)?;
    let target = HitTarget::Pair(pair.0, pair.1);
    let half = ts.shape().horizon as f64 / 2.0;
    for &i in subset {
        let (pi, _) = min_hitting_policy(ts.task(i), target)?;
        for &j in subset {
            if hitting_stats(ts.task(j), &pi, target)?.expected > half {
                return Ok(false);
            }
        }
    }
    Ok(true)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeSplit {
    pub d_plus: Vec<usize>,
    pub d_minus: Vec<usize>,
    pub pair: (usize, usize),
    pub gap: f64,
}

fn find_root(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Splits `subset` at a strongly reachable `(s, a)` so that tasks closer than
/// `lambda` stay together and neither side exceeds `beta * |subset|`.
///
/// Among valid splits the one with the largest minimum cross-gap wins, then
/// the more balanced one, then the lowest `(s, a)`. `d_plus` always holds the
/// first task of `subset`.
pub fn find_tree_split(
    ts: &TaskSet,
    subset: &[usize],
    lambda: f64,
    beta: f64,
) -> Result<TreeSplit, TaskSetError> {
    if subset.len() < 2 {
        return Err(TaskSetError::Singleton);
    }
    ts.check_indices(subset)?;
    let sh = ts.shape();
    let cap = (beta * subset.len() as f64 + 1e-9).floor() as usize;
    let mut best: Option<(TreeSplit, usize)> = None;
    for s in 0..sh.num_states {
        for a in 0..sh.num_actions {
            let Some((side, gap)) = split_at(ts, subset, (s, a), lambda, cap) else {
                continue;
            };
            let larger = side.iter().filter(|x| **x).count().max(
                side.iter().filter(|x| !**x).count(),
            );
            let better = match &best {
                None => true,
                Some((b, b_larger)) => {
                    gap > b.gap + 1e-12 || ((gap - b.gap).abs() <= 1e-12 && larger < *b_larger)
                }
            };
            if !better || !check_strong_reachability(ts, subset, (s, a))? {
                continue;
            }
            let (mut d_plus, mut d_minus) = (Vec::new(), Vec::new());
            for (k, &i) in subset.iter().enumerate() {
                if side[k] == side[0] {
                    d_plus.push(i);
                } else {
                    d_minus.push(i);
                }
            }
            best = Some((
                TreeSplit {
                    d_plus,
                    d_minus,
                    pair: (s, a),
                    gap,
                },
                larger,
            ));
        }
    }
    best.map(|(b, _)| b).ok_or(TaskSetError::NoValidSplit)
}

/// Side assignment (true/false per subset position) and its cross-gap.
fn split_at(
    ts: &TaskSet,
    subset: &[usize],
    (s, a): (usize, usize),
    lambda: f64,
    cap: usize,
) -> Option<(Vec<bool>, f64)> {
    let m = subset.len();
    let mut dist = vec![0.0; m * m];
    let mut parent: Vec<usize> = (0..m).collect();
    for x in 0..m {
        for y in x + 1..m {
            let d = ts.pair_l1(subset[x], subset[y], s, a);
            dist[x * m + y] = d;
            dist[y * m + x] = d;
            if d < lambda - SEPARATION_TOL {
                let (rx, ry) = (find_root(&mut parent, x), find_root(&mut parent, y));
                parent[rx] = ry;
            }
        }
    }
    let mut comps: Vec<Vec<usize>> = Vec::new();
    let mut comp_of = vec![usize::MAX; m];
    for x in 0..m {
        let r = find_root(&mut parent, x);
        if comp_of[r] == usize::MAX {
            comp_of[r] = comps.len();
            comps.push(Vec::new());
        }
        comps[comp_of[r]].push(x);
    }
    let c = comps.len();
    if c < 2 {
        return None;
    }
    let mut cgap = vec![f64::INFINITY; c * c];
    for x in 0..c {
        for y in 0..c {
            if x != y {
                for &u in &comps[x] {
                    for &v in &comps[y] {
                        cgap[x * c + y] = cgap[x * c + y].min(dist[u * m + v]);
                    }
                }
            }
        }
    }
    let gap_of = |mask: &[bool]| {
        let mut g = f64::INFINITY;
        for x in 0..c {
            for y in 0..c {
                if mask[x] && !mask[y] {
                    g = g.min(cgap[x * c + y]);
                }
            }
        }
        g
    };
    let sizes: Vec<usize> = comps.iter().map(Vec::len).collect();
    let balanced = |mask: &[bool]| {
        let left: usize = (0..c).filter(|&k| mask[k]).map(|k| sizes[k]).sum();
        left >= 1 && left < m && left.max(m - left) <= cap
    };
    // Greedy: largest components first, each to the currently smaller side.
    let mut order: Vec<usize> = (0..c).collect();
    order.sort_by_key(|&k| std::cmp::Reverse(sizes[k]));
    let mut mask = vec![false; c];
    let (mut left, mut right) = (0usize, 0usize);
    for &k in &order {
        if left <= right {
            mask[k] = true;
            left += sizes[k];
        } else {
            right += sizes[k];
        }
    }
    let mut chosen = balanced(&mask).then(|| (gap_of(&mask), mask.clone()));
    if chosen.is_none() && c <= 20 {
        // Exhaustive: component 0 pinned to one side to skip mirror images.
        for bits in 0u32..(1 << (c - 1)) {
            let mask: Vec<bool> = (0..c)
                .map(|k| k == 0 || (bits >> (k - 1)) & 1 == 1)
                .collect();
            if !balanced(&mask) {
                continue;
            }
            let g = gap_of(&mask);
            if chosen.as_ref().is_none_or(|(bg, _)| g > *bg) {
                chosen = Some((g, mask));
            }
        }
    }
    let (gap, mask) = chosen?;
    let mut side = vec![false; m];
    for (k, comp) in comps.iter().enumerate() {
        for &x in comp {
            side[x] = mask[k];
        }
    }
    Some((side, gap))
}

// ---------------------------------------------------------------------------
// Revealing policies

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskCoverage {
    /// Index of the policy with the best worst-pair reach probability.
    pub best_policy: usize,
    /// `min_{(s,a)} P(X(s, a) <= T)` under that policy.
    pub min_reach: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RevealingPolicyReport {
    pub ok: bool,
    pub per_task: Vec<TaskCoverage>,
}

/// Checks the revealing-policy property against the greedy revealing set
/// of the task set's own separation level.
pub fn check_revealing_policy_set(
    ts: &TaskSet,
    policies: &[Policy],
) -> Result<RevealingPolicyReport, TaskSetError> {
    if policies.is_empty() {
        return Err(TaskSetError::EmptyPolicies);
    }
    let report = separation_report(ts)?;
    check_revealing_policy_set_on(ts, policies, &report.revealing_set)
}

pub fn check_revealing_policy_set_on(
    ts: &TaskSet,
    policies: &[Policy],
    revealing: &[(usize, usize)],
) -> Result<RevealingPolicyReport, TaskSetError> {
    if policies.is_empty() {
        return Err(TaskSetError::EmptyPolicies);
    }
    if revealing.is_empty() {
        return Err(TaskSetError::EmptyRevealingSet);
    }
    let mut per_task = Vec::with_capacity(ts.len());
    for mdp in ts.tasks() {
        let mut best = TaskCoverage {
            best_policy: 0,
            min_reach: f64::NEG_INFINITY,
        };
        for (k, pi) in policies.iter().enumerate() {
            let mut worst = f64::INFINITY;
            for &(s, a) in revealing {
                worst = worst.min(hitting_stats(mdp, pi, HitTarget::Pair(s, a))?.reach_prob);
            }
            if worst > best.min_reach {
                best = TaskCoverage {
                    best_policy: k,
                    min_reach: worst,
                };
            }
        }
        per_task.push(best);
    }
    Ok(RevealingPolicyReport {
        ok: per_task.iter().all(|c| c.min_reach >= 0.5 - 1e-12),
        per_task,
    })
}
