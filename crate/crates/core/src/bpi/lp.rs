//! Dense two-phase simplex with Bland's rule. Small and exact enough for the
//! allocation programs here (a few thousand variables at most).

const PIVOT_TOL: f64 = 1e-10;
const FEAS_TOL: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Sense {
    Le,
    Eq,
}

#[derive(Debug, Clone)]
pub(crate) struct Constraint {
    /// Sparse coefficients `(variable, value)`.
    pub coeffs: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
}

#[derive(Debug, Clone)]
pub(crate) struct Solution {
    pub x: Vec<f64>,
    pub objective: f64,
}

struct Tableau {
    rows: usize,
    cols: usize,
    /// `rows + 1` rows of `cols + 1` entries; the last row holds reduced
    /// costs and the last column the right-hand sides.
    a: Vec<f64>,
    basis: Vec<usize>,
}

impl Tableau {
    fn at(&self, r: usize, c: usize) -> f64 {
        self.a[r * (self.cols + 1) + c]
    }

    fn pivot(&mut self, pr: usize, pc: usize) {
        let w = self.cols + 1;
        let inv = 1.0 / self.at(pr, pc);
        for c in 0..w {
            self.a[pr * w + c] *= inv;
        }
        let (before, rest) = self.a.split_at_mut(pr * w);
        let (prow, after) = rest.split_at_mut(w);
        for (r, row) in before.chunks_mut(w).chain(after.chunks_mut(w)).enumerate() {
            let _ = r;
            let f = row[pc];
            if f != 0.0 {
                for (x, p) in row.iter_mut().zip(prow.iter()) {
                    *x -= f * p;
                }
                row[pc] = 0.0;
            }
        }
        self.basis[pr] = pc;
    }

    /// Runs Bland's rule on the cost row over columns `< allowed`. Returns
    /// false when the program is unbounded.
    fn optimize(&mut self, allowed: usize) -> bool {
        let obj = self.rows;
        loop {
            let Some(pc) = (0..allowed).find(|&c| self.at(obj, c) < -1e-9) else {
                return true;
            };
            let mut best: Option<(usize, f64)> = None;
            for r in 0..self.rows {
                let v = self.at(r, pc);
                if v > PIVOT_TOL {
                    let ratio = self.at(r, self.cols) / v;
                    let better = match best {
                        None => true,
                        Some((br, bv)) => {
                            ratio < bv - 1e-12 || (ratio <= bv + 1e-12 && self.basis[r] < self.basis[br])
                        }
                    };
                    if better {
                        best = Some((r, ratio));
                    }
                }
            }
            match best {
                None => return false,
                Some((pr, _)) => self.pivot(pr, pc),
            }
        }
    }

    fn set_costs(&mut self, costs: &[f64]) {
        let w = self.cols + 1;
        let obj = self.rows;
        for c in 0..w {
            self.a[obj * w + c] = if c < costs.len() { costs[c] } else { 0.0 };
        }
        for r in 0..self.rows {
            let cb = costs.get(self.basis[r]).copied().unwrap_or(0.0);
            if cb != 0.0 {
                for c in 0..w {
                    self.a[obj * w + c] -= cb * self.a[r * w + c];
                }
            }
        }
    }

    fn remove_row(&mut self, r: usize) {
        let w = self.cols + 1;
        self.a.drain(r * w..(r + 1) * w);
        self.basis.remove(r);
        self.rows -= 1;
    }
}

/// Maximizes `c . x` over `x >= 0` subject to `constraints`.
pub(crate) fn maximize(n: usize, c: &[f64], constraints: &[Constraint]) -> Result<Solution, String> {
    let m = constraints.len();
    let n_slack = constraints.iter().filter(|k| k.sense == Sense::Le).count();
    // Rows whose right-hand side is negative are negated first.
    let needs_art: Vec<bool> = constraints
        .iter()
        .map(|k| k.sense == Sense::Eq || k.rhs < 0.0)
        .collect();
    let n_art = needs_art.iter().filter(|x| **x).count();
    let cols = n + n_slack + n_art;
    let w = cols + 1;
    let mut t = Tableau {
        rows: m,
        cols,
        a: vec![0.0; (m + 1) * w],
        basis: vec![0; m],
    };
    let (mut slack, mut art) = (n, n + n_slack);
    for (r, k) in constraints.iter().enumerate() {
        let sign = if k.rhs < 0.0 { -1.0 } else { 1.0 };
        for &(j, v) in &k.coeffs {
            if j >= n {
                return Err(format!("variable {j} out of range"));
            }
            t.a[r * w + j] += sign * v;
        }
        t.a[r * w + cols] = sign * k.rhs;
        if k.sense == Sense::Le {
            t.a[r * w + slack] = sign;
            if !needs_art[r] {
                t.basis[r] = slack;
            }
            slack += 1;
        }
        if needs_art[r] {
            t.a[r * w + art] = 1.0;
            t.basis[r] = art;
            art += 1;
        }
    }
    let first_art = n + n_slack;
    if n_art > 0 {
        let mut costs = vec![0.0; cols];
        costs[first_art..].fill(1.0);
        t.set_costs(&costs);
        t.optimize(cols);
        let infeas = -t.at(t.rows, cols);
        let scale = 1.0 + constraints.iter().map(|k| k.rhs.abs()).fold(0.0, f64::max);
        if infeas > FEAS_TOL * scale {
            return Err(format!("infeasible (phase-one residual {infeas:.3e})"));
        }
        // Drive remaining artificials out of the basis; drop redundant rows.
        let mut r = 0;
        while r < t.rows {
            if t.basis[r] >= first_art {
                match (0..first_art).find(|&c| t.at(r, c).abs() > 1e-9) {
                    Some(c) => {
                        t.pivot(r, c);
                        r += 1;
                    }
                    None => t.remove_row(r),
                }
            } else {
                r += 1;
            }
        }
    }
    let mut costs = vec![0.0; cols];
    for (j, v) in c.iter().enumerate() {
        costs[j] = -v;
    }
    t.set_costs(&costs);
    if !t.optimize(first_art) {
        return Err("unbounded".into());
    }
    let mut x = vec![0.0; n];
    for (r, &b) in t.basis.iter().enumerate() {
        if b < n {
            x[b] = t.at(r, t.cols).max(0.0);
        }
    }
    let objective = c.iter().zip(&x).map(|(a, b)| a * b).sum();
    Ok(Solution { x, objective })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn le(coeffs: &[(usize, f64)], rhs: f64) -> Constraint {
        Constraint {
            coeffs: coeffs.to_vec(),
            sense: Sense::Le,
            rhs,
        }
    }

    #[test]
    fn textbook_problem() {
        // max 3x + 5y, x <= 4, 2y <= 12, 3x + 2y <= 18 -> (2, 6), 36.
        let cons = [
            le(&[(0, 1.0)], 4.0),
            le(&[(1, 2.0)], 12.0),
            le(&[(0, 3.0), (1, 2.0)], 18.0),
        ];
        let s = maximize(2, &[3.0, 5.0], &cons).unwrap();
        assert!((s.objective - 36.0).abs() < 1e-9);
        assert!((s.x[0] - 2.0).abs() < 1e-9 && (s.x[1] - 6.0).abs() < 1e-9);
    }

    #[test]
    fn equalities_and_redundancy() {
        // max x + 2y, x + y = 1 (twice), y <= 0.25.
        let eq = Constraint {
            coeffs: vec![(0, 1.0), (1, 1.0)],
            sense: Sense::Eq,
            rhs: 1.0,
        };
        let cons = [eq.clone(), eq, le(&[(1, 1.0)], 0.25)];
        let s = maximize(2, &[1.0, 2.0], &cons).unwrap();
        assert!((s.objective - 1.25).abs() < 1e-9);
    }

    #[test]
    fn infeasible_and_unbounded() {
        let cons = [
            Constraint {
                coeffs: vec![(0, 1.0)],
                sense: Sense::Eq,
                rhs: 2.0,
            },
            le(&[(0, 1.0)], 1.0),
        ];
        assert!(maximize(1, &[1.0], &cons).unwrap_err().contains("infeasible"));
        assert!(maximize(2, &[1.0, 0.0], &[le(&[(1, 1.0)], 1.0)]).is_err());
        // Negative right-hand side: -x <= -1 means x >= 1.
        let s = maximize(1, &[-1.0], &[le(&[(0, -1.0)], -1.0)]).unwrap();
        assert!((s.x[0] - 1.0).abs() < 1e-9);
    }
}
