//! Linear assignment: Hungarian (optimal) and greedy matching on rectangular cost matrices.

use crate::error::{Error, Result};

/// Dense row-major cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl CostMatrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch(format!("{} costs for a {rows}x{cols} matrix", data.len())));
        }
        if data.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidValue("assignment costs must be finite".into()));
        }
        Ok(CostMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(Error::ShapeMismatch("ragged cost matrix".into()));
        }
        CostMatrix::new(rows.len(), cols, rows.concat())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }
}

/// Partial row-to-column map.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Assignment {
    pub row_to_col: Vec<Option<usize>>,
}

impl Assignment {
    /// Assigned `(row, col)` pairs in row order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        self.row_to_col
            .iter()
            .enumerate()
            .filter_map(|(r, c)| c.map(|c| (r, c)))
            .collect()
    }

    pub fn total_cost(&self, cost: &CostMatrix) -> f64 {
        self.pairs().iter().map(|&(r, c)| cost.get(r, c)).sum()
    }
}

/// Minimum-cost assignment over the zero-padded square problem.
///
/// Among optimal assignments the lexicographically smallest by `(row, col)`
/// is returned, so equal inputs always produce equal outputs.
pub fn solve_hungarian(cost: &CostMatrix) -> Assignment {
    let n = cost.rows.max(cost.cols);
    if n == 0 {
        return Assignment { row_to_col: Vec::new() };
    }
    let padded = |r: usize, c: usize| if r < cost.rows && c < cost.cols { cost.get(r, c) } else { 0.0 };

    // Shortest augmenting paths with row/column potentials (1-based, column 0 is a sentinel).
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut owner = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = inf;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = padded(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut row_of: Vec<usize> = vec![0; n];
    let mut col_of: Vec<usize> = vec![0; n];
    for j in 1..=n {
        col_of[owner[j] - 1] = j - 1;
        row_of[j - 1] = owner[j] - 1;
    }

    // Every perfect matching on zero-reduced-cost edges is optimal; pick the
    // lexicographically smallest one.
    let scale = (0..n)
        .flat_map(|r| (0..n).map(move |c| (r, c)))
        .fold(1.0f64, |m, (r, c)| m.max(padded(r, c).abs()));
    let eps = 1e-9 * scale * n as f64;
    let tight: Vec<Vec<bool>> = (0..n)
        .map(|r| (0..n).map(|c| padded(r, c) - u[r + 1] - v[c + 1] <= eps).collect())
        .collect();
    let mut fixed = vec![false; n];
    for r in 0..n {
        for c in 0..n {
            if !tight[r][c] || fixed_col(&fixed, &row_of, c) {
                continue;
            }
            if col_of[r] == c {
                break;
            }
            if reroute(r, c, &tight, &fixed, &mut row_of, &mut col_of) {
                break;
            }
        }
        fixed[r] = true;
    }

    let row_to_col = (0..cost.rows)
        .map(|r| Some(col_of[r]).filter(|&c| c < cost.cols))
        .collect();
    Assignment { row_to_col }
}

fn fixed_col(fixed: &[bool], row_of: &[usize], c: usize) -> bool {
    fixed[row_of[c]]
}

/// Moves row `r` onto column `c` by re-matching the displaced row along tight
/// edges of unfixed rows. Leaves the matching unchanged on failure.
fn reroute(
    r: usize,
    c: usize,
    tight: &[Vec<bool>],
    fixed: &[bool],
    row_of: &mut [usize],
    col_of: &mut [usize],
) -> bool {
    let n = tight.len();
    let displaced = row_of[c];
    let freed = col_of[r];
    let mut visited = vec![false; n];
    visited[r] = true;
    let mut path = Vec::new();
    if !augment(displaced, freed, c, tight, fixed, row_of, &mut visited, &mut path) {
        return false;
    }
    // `path` holds (row, new column) steps from the displaced row to `freed`.
    for &(row, col) in &path {
        col_of[row] = col;
        row_of[col] = row;
    }
    col_of[r] = c;
    row_of[c] = r;
    true
}

#[allow(clippy::too_many_arguments)]
fn augment(
    row: usize,
    target: usize,
    taken: usize,
    tight: &[Vec<bool>],
    fixed: &[bool],
    row_of: &[usize],
    visited: &mut [bool],
    path: &mut Vec<(usize, usize)>,
) -> bool {
    visited[row] = true;
    for col in 0..tight.len() {
        if !tight[row][col] || col == taken {
            continue;
        }
        if col == target {
            path.push((row, col));
            return true;
        }
        let next = row_of[col];
        if next == row || visited[next] || fixed[next] {
            continue;
        }
        path.push((row, col));
        if augment(next, target, taken, tight, fixed, row_of, visited, path) {
            return true;
        }
        path.pop();
    }
    false
}

/// Repeatedly takes the globally cheapest remaining cell; ties by `(row, col)`.
pub fn solve_greedy(cost: &CostMatrix) -> Assignment {
    let mut cells: Vec<(f64, usize, usize)> = (0..cost.rows)
        .flat_map(|r| (0..cost.cols).map(move |c| (r, c)))
        .map(|(r, c)| (cost.get(r, c), r, c))
        .collect();
    cells.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut row_to_col = vec![None; cost.rows];
    let mut col_used = vec![false; cost.cols];
    for (_, r, c) in cells {
        if row_to_col[r].is_none() && !col_used[c] {
            row_to_col[r] = Some(c);
            col_used[c] = true;
        }
    }
    Assignment { row_to_col }
}
