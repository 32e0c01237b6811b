//! Minimum-cost injective assignment of `G` ground-truth rows to `K >= G`
//! prediction columns.
//!
//! Both solvers work on the same tie-perturbed matrix
//! (`c[i][j] + 1e-12 * (i*K + j)`) and then pick, among assignments whose
//! perturbed total is within a small tolerance of the optimum, the
//! lexicographically smallest match vector. The Hungarian solver gets there
//! by re-solving only on edges that are tight under its optimal duals, so
//! both routes agree on every instance, including ones with exact ties.


use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Finite stand-in for an infeasible pairing.
pub const BIG: f64 = 1e8;

/// Per-entry tie-breaking perturbation.
pub const TIE_EPSILON: f64 = 1e-12;

/// Upper bound on the number of injections `brute_force` will enumerate.
pub const BRUTE_FORCE_LIMIT: u128 = 10_000_000;

/// `G x K` matching costs; rows are ground-truth entities, columns are
/// prediction queries.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    values: Matrix,
}

impl CostMatrix {
    pub fn new(values: Matrix) -> Result<Self> {
        let (g, k) = (values.rows(), values.cols());
        if g == 0 {
            return Err(Error::Dimension("cost matrix needs at least one row".into()));
        }
        if k < g {
            return Err(Error::TooManyLabels {
                labels: g,
                queries: k,
            });
        }
        if let Some(pos) = values.as_slice().iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "non-finite cost at ({}, {})",
                pos / k,
                pos % k
            )));
        }
        Ok(Self { values })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let m = Matrix::from_rows(rows).ok_or_else(|| Error::Dimension("ragged cost rows".into()))?;
        Self::new(m)
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn cols(&self) -> usize {
        self.values.cols()
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[(row, col)]
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    /// Sum of `values[i][cols[i]]`.
    pub fn cost_of(&self, cols: &[usize]) -> f64 {
        cols.iter().enumerate().map(|(i, &j)| self.get(i, j)).sum()
    }

    fn perturbed(&self) -> Matrix {
        let k = self.cols();
        Matrix::from_fn(self.rows(), k, |i, j| {
            self.values[(i, j)] + TIE_EPSILON * (i * k + j) as f64
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assignment {
    /// `matches[i]` is the column assigned to row `i`.
    pub matches: Vec<usize>,
    /// Sum of the unperturbed costs of the matched entries.
    pub total_cost: f64,
    /// Rows whose matched entry is at least `BIG / 2`.
    pub infeasible_rows: Vec<usize>,
}

impl Assignment {
    fn from_matches(c: &CostMatrix, matches: Vec<usize>) -> Self {
        let infeasible_rows = matches
            .iter()
            .enumerate()
            .filter(|&(i, &j)| c.get(i, j) >= BIG / 2.0)
            .map(|(i, _)| i)
            .collect();
        Self {
            total_cost: c.cost_of(&matches),
            matches,
            infeasible_rows,
        }
    }
}

/// Which solver the filters use. Brute force exists as an oracle for small
/// instances.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Matcher {
    #[default]
    Hungarian,
    BruteForce,
}

impl Matcher {
    pub fn solve(self, c: &CostMatrix) -> Result<Assignment> {
        match self {
            Matcher::Hungarian => Ok(hungarian(c)),
            Matcher::BruteForce => brute_force(c),
        }
    }
}

impl std::str::FromStr for Matcher {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "hungarian" => Ok(Matcher::Hungarian),
            "brute-force" | "brute_force" => Ok(Matcher::BruteForce),
            other => Err(Error::InvalidInput(format!("unknown matcher {other:?}"))),
        }
    }
}

/// Absolute slack under which two perturbed totals count as tied. Covers
/// float accumulation error at the magnitude of the matrix.
fn tie_tolerance(m: &Matrix) -> f64 {
    let scale: f64 = (0..m.rows())
        .map(|i| m.row(i).iter().fold(0.0f64, |a, v| a.max(v.abs())))
        .sum();
    1e-9 + 1e-14 * scale
}

struct Solution {
    /// Column for each row.
    matches: Vec<usize>,
    row_potential: Vec<f64>,
    col_potential: Vec<f64>,
}

/// Shortest-augmenting-path Hungarian method (Crouse's rectangular
/// variant; requires `rows <= cols`). O(n^2 m).
///
/// Column potentials stay `<= 0`, and columns left unmatched keep
/// potential 0.
fn solve_rect(m: &Matrix) -> Solution {
    let (n, k) = (m.rows(), m.cols());
    debug_assert!(n <= k);
    const NONE: usize = usize::MAX;
    let mut u = vec![0.0; n];
    let mut v = vec![0.0; k];
    let mut col_for_row = vec![NONE; n];
    let mut row_for_col = vec![NONE; k];
    let mut path = vec![NONE; k];
    let mut dist = vec![f64::INFINITY; k];
    let mut seen_row = vec![false; n];
    let mut seen_col = vec![false; k];
    let mut remaining: Vec<usize> = Vec::with_capacity(k);

    for start in 0..n {
        dist.fill(f64::INFINITY);
        seen_row.fill(false);
        seen_col.fill(false);
        remaining.clear();
        remaining.extend((0..k).rev());
        let mut min_val = 0.0;
        let mut i = start;
        let sink = loop {
            seen_row[i] = true;
            let row = m.row(i);
            let (ui, mut lowest, mut index) = (u[i], f64::INFINITY, NONE);
            for (it, &j) in remaining.iter().enumerate() {
                let r = min_val + row[j] - ui - v[j];
                if r < dist[j] {
                    path[j] = i;
                    dist[j] = r;
                }
                // On exact ties prefer a free column: it ends the search.
                if dist[j] < lowest || (dist[j] == lowest && row_for_col[j] == NONE) {
                    lowest = dist[j];
                    index = it;
                }
            }
            min_val = lowest;
            let j = remaining.swap_remove(index);
            seen_col[j] = true;
            if row_for_col[j] == NONE {
                break j;
            }
            i = row_for_col[j];
        };

        u[start] += min_val;
        for r in 0..n {
            if seen_row[r] && r != start {
                u[r] += min_val - dist[col_for_row[r]];
            }
        }
        for j in 0..k {
            if seen_col[j] {
                v[j] -= min_val - dist[j];
            }
        }
        let mut j = sink;
        loop {
            let r = path[j];
            row_for_col[j] = r;
            std::mem::swap(&mut col_for_row[r], &mut j);
            if r == start {
                break;
            }
        }
    }
    Solution {
        matches: col_for_row,
        row_potential: u,
        col_potential: v,
    }
}

/// Optimal assignment by the Hungarian method with deterministic
/// lexicographic tie-breaking.
pub fn hungarian(c: &CostMatrix) -> Assignment {
    let p = c.perturbed();
    let (g, k) = (p.rows(), p.cols());
    let sol = solve_rect(&p);
    let tol = tie_tolerance(&p);
    let optimum: f64 = sol.matches.iter().enumerate().map(|(i, &j)| p[(i, j)]).sum();

    // Every optimal assignment uses only edges that are tight under the
    // optimal duals and leaves uncovered only columns with zero potential.
    // Treat each uncovered column as held by a zero-cost dummy row that may
    // move to any zero-potential column; optimal assignments then differ by
    // alternating cycles in the tight graph. Rows are fixed in order, each
    // moving to its smallest tight column that starts a cycle through
    // unfixed rows back to its current column.
    let tight = |r: usize, j: usize| p[(r, j)] - sol.row_potential[r] - sol.col_potential[j] <= tol;
    let zero_potential = |j: usize| sol.col_potential[j].abs() <= tol;
    let mut matches = sol.matches;
    let mut owner: Vec<Option<usize>> = vec![None; k];
    // `next[c]`: the column the holder of `c` moves to.
    let mut next: Vec<Option<usize>> = vec![None; k];
    let mut queue = std::collections::VecDeque::new();
    for i in 0..g {
        let current = matches[i];
        if !(0..current).any(|j| tight(i, j)) {
            continue;
        }
        owner.fill(None);
        for (r, &j) in matches.iter().enumerate() {
            owner[j] = Some(r);
        }
        // The smallest candidate not held by a fixed row; once it is
        // reachable it is the answer.
        let Some(first) = (0..current).find(|&j| tight(i, j) && owner[j].is_none_or(|r| r > i)) else {
            continue;
        };
        next.fill(None);
        next[current] = Some(current);
        queue.clear();
        queue.push_back(current);
        let mut dummies_linked = false;
        'search: while let Some(c) = queue.pop_front() {
            for r in i + 1..g {
                let d = matches[r];
                if next[d].is_none() && tight(r, c) {
                    next[d] = Some(c);
                    if d == first {
                        break 'search;
                    }
                    queue.push_back(d);
                }
            }
            if !dummies_linked && zero_potential(c) {
                dummies_linked = true;
                for d in 0..k {
                    if owner[d].is_none() && next[d].is_none() {
                        next[d] = Some(c);
                        if d == first {
                            break 'search;
                        }
                        queue.push_back(d);
                    }
                }
            }
        }
        let Some(j) = (first..current).find(|&j| next[j].is_some() && tight(i, j)) else {
            continue;
        };
        matches[i] = j;
        let mut cur = j;
        while cur != current {
            let to = next[cur].expect("column on the cycle");
            if let Some(r) = owner[cur] {
                matches[r] = to;
            }
            cur = to;
        }
    }
    debug_assert!(
        matches.iter().enumerate().map(|(i, &j)| p[(i, j)]).sum::<f64>() <= optimum + g as f64 * tol
    );
    Assignment::from_matches(c, matches)
}

fn injection_count(g: usize, k: usize) -> u128 {
    (0..g).map(|i| (k - i) as u128).product()
}

/// Exhaustive search over all injective row-to-column maps, in lexicographic
/// order. Guarded by [`BRUTE_FORCE_LIMIT`].
pub fn brute_force(c: &CostMatrix) -> Result<Assignment> {
    let (g, k) = (c.rows(), c.cols());
    let count = injection_count(g, k);
    if count > BRUTE_FORCE_LIMIT {
        return Err(Error::TooLarge(count));
    }
    let p = c.perturbed();
    let tol = tie_tolerance(&p);

    let mut best = f64::INFINITY;
    enumerate(&p, &mut |_, total| {
        if total < best {
            best = total;
        }
        false
    });
    let mut chosen = Vec::new();
    enumerate(&p, &mut |cols, total| {
        if total <= best + tol {
            chosen = cols.to_vec();
            true
        } else {
            false
        }
    });
    Ok(Assignment::from_matches(c, chosen))
}

/// Visits injections in lexicographic order until `visit` returns true.
fn enumerate(p: &Matrix, visit: &mut dyn FnMut(&[usize], f64) -> bool) {
    fn rec(
        p: &Matrix,
        row: usize,
        partial: f64,
        cols: &mut Vec<usize>,
        used: &mut [bool],
        visit: &mut dyn FnMut(&[usize], f64) -> bool,
    ) -> bool {
        if row == p.rows() {
            return visit(cols, partial);
        }
        for j in 0..p.cols() {
            if used[j] {
                continue;
            }
            used[j] = true;
            cols.push(j);
            let stop = rec(p, row + 1, partial + p[(row, j)], cols, used, visit);
            cols.pop();
            used[j] = false;
            if stop {
                return true;
            }
        }
        false
    }
    let mut used = vec![false; p.cols()];
    rec(p, 0, 0.0, &mut Vec::with_capacity(p.rows()), &mut used, visit);
}
