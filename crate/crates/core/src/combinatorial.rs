//! Rounding under switching budgets: switch counting, the min-max prefix
//! deviation problem, an exact branch-and-bound for it and an exhaustive
//! oracle.
//!
//! Mode indices are zero-based throughout this module.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::rounding::{sur_round, BinaryControl, RelaxedControl};

/// Caps `K^{i,j}` on the number of `i -> j` switches. Pairs without an entry
/// are unconstrained.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SwitchBudget {
    entries: BTreeMap<(usize, usize), u32>,
}

impl SwitchBudget {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, from: usize, to: usize, max_switches: u32) -> Result<Self> {
        self.set(from, to, max_switches)?;
        Ok(self)
    }

    pub fn set(&mut self, from: usize, to: usize, max_switches: u32) -> Result<()> {
        if from == to {
            return Err(Error::SelfSwitch(from));
        }
        self.entries.insert((from, to), max_switches);
        Ok(())
    }

    /// Same cap on every ordered pair of distinct modes.
    pub fn all_pairs(n_modes: usize, max_switches: u32) -> Self {
        let mut b = Self::new();
        for i in 0..n_modes {
            for j in 0..n_modes {
                if i != j {
                    b.entries.insert((i, j), max_switches);
                }
            }
        }
        b
    }

    pub fn get(&self, from: usize, to: usize) -> Option<u32> {
        self.entries.get(&(from, to)).copied()
    }

    pub fn entries(&self) -> impl Iterator<Item = ((usize, usize), u32)> + '_ {
        self.entries.iter().map(|(&k, &v)| (k, v))
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn max_mode(&self) -> Option<usize> {
        self.entries.keys().map(|&(i, j)| i.max(j)).max()
    }

    /// True if every constrained pair is within its cap.
    pub fn admits(&self, beta: &BinaryControl) -> bool {
        self.violations(beta).is_empty()
    }

    /// `(from, to, count, cap)` for every exceeded entry.
    pub fn violations(&self, beta: &BinaryControl) -> Vec<(usize, usize, usize, u32)> {
        let counts = switch_matrix(beta);
        self.entries()
            .filter_map(|((i, j), k)| {
                let c = counts.get(i).and_then(|r| r.get(j)).copied().unwrap_or(0);
                (c > k as usize).then_some((i, j, c, k))
            })
            .collect()
    }
}

/// Per-cell averages `q_{l,i}` of the multipliers, one row per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct CellAverages {
    q: Vec<Vec<f64>>,
}

impl CellAverages {
    pub fn new(q: Vec<Vec<f64>>) -> Result<Self> {
        let n_modes = q.first().map_or(0, Vec::len);
        if q.is_empty() || n_modes == 0 {
            return Err(Error::InvalidControl("empty cell averages".into()));
        }
        for (l, row) in q.iter().enumerate() {
            let sum: f64 = row.iter().sum();
            if row.len() != n_modes
                || row.iter().any(|&x| !(-1e-9..=1.0 + 1e-9).contains(&x))
                || (sum - 1.0).abs() > 1e-9
            {
                return Err(Error::InvalidControl(format!(
                    "cell {l}: averages {row:?} not in the unit simplex"
                )));
            }
        }
        Ok(Self { q })
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.q
    }

    pub fn n_cells(&self) -> usize {
        self.q.len()
    }

    pub fn n_modes(&self) -> usize {
        self.q[0].len()
    }
}

/// For piecewise constant multipliers the cell average is the cell value.
pub fn cell_averages(alpha: &RelaxedControl) -> CellAverages {
    CellAverages {
        q: alpha.alpha().to_vec(),
    }
}

/// Number of consecutive cell pairs with `from` active then `to` active.
pub fn switch_count(beta: &BinaryControl, from: usize, to: usize) -> Result<usize> {
    if from == to {
        return Err(Error::SelfSwitch(from));
    }
    Ok(beta
        .modes()
        .windows(2)
        .filter(|w| w[0] == from && w[1] == to)
        .count())
}

/// `counts[i][j]` = number of `i -> j` switches.
pub fn switch_matrix(beta: &BinaryControl) -> Vec<Vec<usize>> {
    let n = beta.n_modes();
    let mut counts = vec![vec![0; n]; n];
    for w in beta.modes().windows(2) {
        if w[0] != w[1] {
            counts[w[0]][w[1]] += 1;
        }
    }
    counts
}

#[derive(Debug, Clone, PartialEq)]
pub struct MinMaxSolution {
    pub p: BinaryControl,
    pub objective: f64,
    /// False when a node or time cap stopped the search early.
    pub optimal: bool,
    pub nodes_explored: u64,
}

#[derive(Debug, Clone)]
pub struct MinMaxOptions {
    pub max_nodes: u64,
    pub time_limit: Option<Duration>,
}

impl Default for MinMaxOptions {
    fn default() -> Self {
        Self {
            max_nodes: 20_000_000,
            time_limit: Some(Duration::from_secs(120)),
        }
    }
}

/// `J_sub(p) = max_i max_r |sum_{l<=r} (q_{l,i} - p_{l,i}) dt_l|`.
pub fn j_sub(q: &CellAverages, grid: &TimeGrid, modes: &[usize]) -> f64 {
    let mut dev = vec![0.0; q.n_modes()];
    let mut worst = 0.0f64;
    for (l, &on) in modes.iter().enumerate() {
        worst = worst.max(advance(&mut dev, &q.q[l], on, grid.cell_len(l)));
    }
    worst
}

// Adds one cell to the prefix deviations; returns the largest magnitude.
// Shared by every evaluation path so objective values compare exactly.
fn advance(dev: &mut [f64], q_row: &[f64], on: usize, dt: f64) -> f64 {
    let mut worst = 0.0f64;
    for (i, d) in dev.iter_mut().enumerate() {
        let p = if i == on { 1.0 } else { 0.0 };
        *d += (q_row[i] - p) * dt;
        worst = worst.max(d.abs());
    }
    worst
}

fn check_instance(q: &CellAverages, grid: &TimeGrid, budget: &SwitchBudget) -> Result<()> {
    if q.n_cells() != grid.n_cells() {
        return Err(Error::GridMismatch(format!(
            "{} averages rows for {} cells",
            q.n_cells(),
            grid.n_cells()
        )));
    }
    if let Some(m) = budget.max_mode() {
        if m >= q.n_modes() {
            return Err(Error::InvalidControl(format!(
                "budget refers to mode {m} but there are {} modes",
                q.n_modes()
            )));
        }
    }
    Ok(())
}

struct Search<'a> {
    q: &'a CellAverages,
    dts: Vec<f64>,
    /// Budget entry index for each ordered pair, if constrained.
    pair_slot: Vec<Vec<Option<usize>>>,
    caps: Vec<u32>,
    used: Vec<u32>,
    path: Vec<usize>,
    best: Vec<usize>,
    best_value: f64,
    // The heuristic incumbent may be lexicographically later than an equally
    // good sequence, so ties only prune once the incumbent came from the tree.
    best_from_tree: bool,
    nodes: u64,
    max_nodes: u64,
    deadline: Option<Instant>,
    aborted: bool,
}

impl Search<'_> {
    fn worse_than_incumbent(&self, bound: f64) -> bool {
        bound > self.best_value || (bound == self.best_value && self.best_from_tree)
    }

    fn dfs(&mut self, dev: &[f64], cur_max: f64) {
        let l = self.path.len();
        if l == self.dts.len() {
            if !self.worse_than_incumbent(cur_max) {
                self.best.clone_from(&self.path);
                self.best_value = cur_max;
                self.best_from_tree = true;
            }
            return;
        }
        let n_modes = dev.len();
        let mut child = vec![0.0; n_modes];
        // Modes in decreasing index order visit one-hot rows in increasing
        // lexicographic order.
        for on in (0..n_modes).rev() {
            if self.aborted {
                return;
            }
            self.nodes += 1;
            if self.nodes >= self.max_nodes
                || (self.nodes.is_multiple_of(4096)
                    && self.deadline.is_some_and(|d| Instant::now() > d))
            {
                self.aborted = true;
                return;
            }
            let slot = self
                .path
                .last()
                .and_then(|&prev| (prev != on).then(|| self.pair_slot[prev][on]).flatten());
            if let Some(s) = slot {
                if self.used[s] >= self.caps[s] {
                    continue;
                }
            }
            child.copy_from_slice(dev);
            let bound = cur_max.max(advance(&mut child, &self.q.q[l], on, self.dts[l]));
            if self.worse_than_incumbent(bound) {
                continue;
            }
            if let Some(s) = slot {
                self.used[s] += 1;
            }
            self.path.push(on);
            let next = child.clone();
            self.dfs(&next, bound);
            self.path.pop();
            if let Some(s) = slot {
                self.used[s] -= 1;
            }
        }
    }
}

/// Exact minimizer of `J_sub` over one-hot sequences satisfying the switch
/// budget. Depth-first branch-and-bound over cells; the running maximum of
/// the prefix deviation is non-decreasing along a branch and serves as the
/// node bound. Among optimal sequences the lexicographically smallest
/// flattened one-hot matrix is returned.
pub fn solve_minmax(
    q: &CellAverages,
    grid: &TimeGrid,
    budget: &SwitchBudget,
) -> Result<MinMaxSolution> {
    solve_minmax_with(q, grid, budget, &MinMaxOptions::default())
}

pub fn solve_minmax_with(
    q: &CellAverages,
    grid: &TimeGrid,
    budget: &SwitchBudget,
    opts: &MinMaxOptions,
) -> Result<MinMaxSolution> {
    check_instance(q, grid, budget)?;
    let n_modes = q.n_modes();

    let relaxed = RelaxedControl::new(grid.clone(), vec![vec![]; q.n_cells()], q.q.clone())?;
    let sur = sur_round(&relaxed);
    let incumbent: Vec<usize> = if budget.admits(&sur) {
        sur.modes().to_vec()
    } else {
        let mut best = (f64::INFINITY, 0);
        for i in 0..n_modes {
            let v = j_sub(q, grid, &vec![i; q.n_cells()]);
            if v < best.0 {
                best = (v, i);
            }
        }
        vec![best.1; q.n_cells()]
    };

    let mut pair_slot = vec![vec![None; n_modes]; n_modes];
    let mut caps = Vec::new();
    for (s, ((i, j), k)) in budget.entries().enumerate() {
        pair_slot[i][j] = Some(s);
        caps.push(k);
    }
    let mut search = Search {
        q,
        dts: grid.cell_lens().collect(),
        pair_slot,
        used: vec![0; caps.len()],
        caps,
        path: Vec::with_capacity(q.n_cells()),
        best_value: j_sub(q, grid, &incumbent),
        best: incumbent,
        best_from_tree: false,
        nodes: 0,
        max_nodes: opts.max_nodes,
        deadline: opts.time_limit.map(|d| Instant::now() + d),
        aborted: false,
    };
    search.dfs(&vec![0.0; n_modes], 0.0);

    Ok(MinMaxSolution {
        p: BinaryControl::from_modes(grid, n_modes, search.best)?,
        objective: search.best_value,
        optimal: !search.aborted,
        nodes_explored: search.nodes,
    })
}

/// Largest instance (`N^n`) accepted by [`brute_force_minmax`].
pub const BRUTE_FORCE_LIMIT: u128 = 10_000_000;

/// Exhaustive enumeration of all one-hot sequences, filtered by the budget.
/// Ties go to the lexicographically smallest flattened matrix.
pub fn brute_force_minmax(
    q: &CellAverages,
    grid: &TimeGrid,
    budget: &SwitchBudget,
) -> Result<MinMaxSolution> {
    check_instance(q, grid, budget)?;
    let n_modes = q.n_modes();
    let n = q.n_cells();
    let total = (n_modes as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    if total > BRUTE_FORCE_LIMIT {
        return Err(Error::InstanceTooLarge(total, BRUTE_FORCE_LIMIT));
    }
    // digits[l] = k selects mode N-1-k, so counting upward walks the
    // flattened one-hot matrices in increasing lexicographic order.
    let mut digits = vec![0usize; n];
    let mut modes = vec![n_modes - 1; n];
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut visited = 0u64;
    loop {
        visited += 1;
        let beta = BinaryControl::from_modes(grid, n_modes, modes.clone())?;
        if budget.admits(&beta) {
            let v = j_sub(q, grid, &modes);
            if best.as_ref().is_none_or(|(b, _)| v < *b) {
                best = Some((v, modes.clone()));
            }
        }
        let mut pos = n;
        loop {
            if pos == 0 {
                let (objective, modes) = best.expect("constant sequences are always feasible");
                return Ok(MinMaxSolution {
                    p: BinaryControl::from_modes(grid, n_modes, modes)?,
                    objective,
                    optimal: true,
                    nodes_explored: visited,
                });
            }
            pos -= 1;
            digits[pos] += 1;
            if digits[pos] < n_modes {
                modes[pos] = n_modes - 1 - digits[pos];
                break;
            }
            digits[pos] = 0;
            modes[pos] = n_modes - 1;
        }
    }
}

/// Writes the min-max instance as a mixed-integer linear program in CPLEX LP
/// text format for cross-checking with external solvers.
///
/// Variables: binaries `p_l_i` (cell `l`, mode `i`, both zero-based), the
/// epigraph variable `J`, and switch indicators `s_i_j_l >= p_l_i + p_{l+1}_j - 1`
/// for every budgeted pair.
pub fn write_lp<W: Write>(
    q: &CellAverages,
    grid: &TimeGrid,
    budget: &SwitchBudget,
    mut w: W,
) -> Result<()> {
    check_instance(q, grid, budget)?;
    let io = |e| Error::io("<lp export>", e);
    let n = q.n_cells();
    let n_modes = q.n_modes();
    writeln!(w, "\\ min-max prefix deviation rounding").map_err(io)?;
    writeln!(w, "Minimize\n obj: J\nSubject To").map_err(io)?;
    for i in 0..n_modes {
        let mut constant = 0.0;
        let mut terms = String::new();
        for l in 0..n {
            let dt = grid.cell_len(l);
            constant += q.q[l][i] * dt;
            terms.push_str(&format!(" + {dt} p_{l}_{i}"));
            // J >= c - sum(p dt)  and  J >= sum(p dt) - c
            writeln!(w, " up_{i}_{l}: J{terms} >= {constant}").map_err(io)?;
            writeln!(w, " lo_{i}_{l}: J{} >= {}", negate(&terms), -constant).map_err(io)?;
        }
    }
    for l in 0..n {
        let row: Vec<String> = (0..n_modes).map(|i| format!("p_{l}_{i}")).collect();
        writeln!(w, " sos_{l}: {} = 1", row.join(" + ")).map_err(io)?;
    }
    let mut switch_vars = Vec::new();
    for ((i, j), k) in budget.entries() {
        let mut sum = Vec::new();
        for l in 0..n.saturating_sub(1) {
            let s = format!("s_{i}_{j}_{l}");
            writeln!(
                w,
                " link_{i}_{j}_{l}: {s} - p_{l}_{i} - p_{}_{j} >= -1",
                l + 1
            )
            .map_err(io)?;
            sum.push(s.clone());
            switch_vars.push(s);
        }
        if !sum.is_empty() {
            writeln!(w, " budget_{i}_{j}: {} <= {k}", sum.join(" + ")).map_err(io)?;
        }
    }
    writeln!(w, "Bounds\n J >= 0").map_err(io)?;
    for s in &switch_vars {
        writeln!(w, " 0 <= {s} <= 1").map_err(io)?;
    }
    writeln!(w, "Binaries").map_err(io)?;
    for l in 0..n {
        for i in 0..n_modes {
            writeln!(w, " p_{l}_{i}").map_err(io)?;
        }
    }
    writeln!(w, "End").map_err(io)?;
    Ok(())
}

fn negate(terms: &str) -> String {
    terms.replace(" + ", " - ")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn modes_of(seq: &[usize]) -> BinaryControl {
        BinaryControl::from_modes(
            &TimeGrid::uniform(seq.len() as f64, seq.len()).unwrap(),
            seq.iter().max().unwrap() + 1,
            seq.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn switch_counts() {
        let constant = modes_of(&[0, 0, 0]);
        assert_eq!(switch_count(&constant, 0, 1).unwrap(), 0);
        let b = modes_of(&[0, 1, 0]);
        assert_eq!(switch_count(&b, 0, 1).unwrap(), 1);
        assert_eq!(switch_count(&b, 1, 0).unwrap(), 1);
        let b = modes_of(&[0, 1, 1, 0, 1]);
        assert_eq!(switch_count(&b, 0, 1).unwrap(), 2);
        assert_eq!(switch_count(&b, 1, 0).unwrap(), 1);
        assert!(matches!(switch_count(&b, 1, 1), Err(Error::SelfSwitch(1))));
    }

    #[test]
    fn budget_rejects_self_pairs() {
        assert!(SwitchBudget::new().with(2, 2, 1).is_err());
    }

    #[test]
    fn cell_averages_copy_cell_values() {
        let a = RelaxedControl::new(
            TimeGrid::uniform(3.0, 3).unwrap(),
            vec![vec![]; 3],
            vec![vec![0.3, 0.7]; 3],
        )
        .unwrap();
        let q = cell_averages(&a);
        assert_eq!(q.rows(), &[vec![0.3, 0.7], vec![0.3, 0.7], vec![0.3, 0.7]]);
        for row in q.rows() {
            assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_malformed_averages() {
        assert!(CellAverages::new(vec![vec![0.5, 0.6]]).is_err());
        assert!(CellAverages::new(vec![]).is_err());
    }

    #[test]
    fn one_hot_averages_are_reproduced() {
        let grid = TimeGrid::uniform(4.0, 4).unwrap();
        let q = CellAverages::new(vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![0.0, 1.0],
            vec![1.0, 0.0],
        ])
        .unwrap();
        let budget = SwitchBudget::all_pairs(2, 1);
        let s = solve_minmax(&q, &grid, &budget).unwrap();
        assert_eq!(s.objective, 0.0);
        assert!(s.optimal);
        assert_eq!(s.p.modes(), &[0, 1, 1, 0]);
        let b = brute_force_minmax(&q, &grid, &budget).unwrap();
        assert_eq!(b.objective, 0.0);
        assert_eq!(b.p.modes(), &[0, 1, 1, 0]);
    }

    #[test]
    fn forbidden_up_switch_instance() {
        // q_1 = (0.7, 0.2, 0.7), unit cells, no 1 -> 2 switch allowed.
        // Feasible sequences: 222, 221, 211, 111 (1-based labels).
        let grid = TimeGrid::uniform(3.0, 3).unwrap();
        let q = CellAverages::new(vec![vec![0.7, 0.3], vec![0.2, 0.8], vec![0.7, 0.3]]).unwrap();
        let budget = SwitchBudget::new().with(0, 1, 0).unwrap();
        // Hand-enumerated prefix deviations of mode 1 (mode 2 mirrors them):
        //   222: 0.7, 0.9, 1.6      -> 1.6
        //   221: 0.7, 0.9, 0.6      -> 0.9
        //   211: 0.7, -0.1, -0.4    -> 0.7
        //   111: -0.3, -1.1, -1.4   -> 1.4
        let s = solve_minmax(&q, &grid, &budget).unwrap();
        let b = brute_force_minmax(&q, &grid, &budget).unwrap();
        assert_eq!(s.p.modes(), &[1, 0, 0]);
        assert!((s.objective - 0.7).abs() < 1e-12);
        assert_eq!(s.objective, b.objective);
        assert_eq!(s.p, b.p);
    }

    #[test]
    fn single_cell_picks_largest_average() {
        let grid = TimeGrid::uniform(1.0, 1).unwrap();
        let q = CellAverages::new(vec![vec![0.2, 0.5, 0.3]]).unwrap();
        let b = brute_force_minmax(&q, &grid, &SwitchBudget::new()).unwrap();
        assert_eq!(b.p.modes(), &[1]);
        // modes 0 and 1 tie at 0.6; row [0,1,0] precedes [1,0,0]
        let q = CellAverages::new(vec![vec![0.4, 0.4, 0.2]]).unwrap();
        let b = brute_force_minmax(&q, &grid, &SwitchBudget::new()).unwrap();
        assert_eq!(b.p.modes(), &[1]);
        let s = solve_minmax(&q, &grid, &SwitchBudget::new()).unwrap();
        assert_eq!(s.p.modes(), &[1]);
    }

    #[test]
    fn brute_force_guard() {
        let grid = TimeGrid::uniform(30.0, 30).unwrap();
        let q = CellAverages::new(vec![vec![0.5, 0.5]; 30]).unwrap();
        assert!(matches!(
            brute_force_minmax(&q, &grid, &SwitchBudget::new()),
            Err(Error::InstanceTooLarge(..))
        ));
    }

    #[test]
    fn zero_budgets_force_constant_sequences() {
        let grid = TimeGrid::uniform(5.0, 5).unwrap();
        let q = CellAverages::new(vec![
            vec![0.9, 0.1],
            vec![0.1, 0.9],
            vec![0.2, 0.8],
            vec![0.3, 0.7],
            vec![0.5, 0.5],
        ])
        .unwrap();
        let s = solve_minmax(&q, &grid, &SwitchBudget::all_pairs(2, 0)).unwrap();
        assert_eq!(s.p.modes(), &[1; 5]);
    }

    #[test]
    fn node_cap_returns_incumbent() {
        let grid = TimeGrid::uniform(12.0, 12).unwrap();
        let q = CellAverages::new(vec![vec![0.4, 0.35, 0.25]; 12]).unwrap();
        let opts = MinMaxOptions {
            max_nodes: 5,
            time_limit: None,
        };
        let s = solve_minmax_with(&q, &grid, &SwitchBudget::new(), &opts).unwrap();
        assert!(!s.optimal);
        assert_eq!(s.p.n_cells(), 12);
    }

    #[test]
    fn lp_export_mentions_every_constraint_family() {
        let grid = TimeGrid::uniform(3.0, 3).unwrap();
        let q = CellAverages::new(vec![vec![0.7, 0.3], vec![0.2, 0.8], vec![0.7, 0.3]]).unwrap();
        let budget = SwitchBudget::new().with(0, 1, 0).unwrap();
        let mut buf = Vec::new();
        write_lp(&q, &grid, &budget, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.contains("Minimize"));
        assert!(text.contains(" sos_2: p_2_0 + p_2_1 = 1"));
        assert!(text.contains(" budget_0_1: s_0_1_0 + s_0_1_1 <= 0"));
        assert!(text.contains(" up_0_0: J + 1 p_0_0 >= 0.7"));
        assert!(text.contains(" lo_0_0: J - 1 p_0_0 >= -0.7"));
        assert!(text.trim_end().ends_with("End"));
    }
}
