//! Sum-up rounding of relaxed mode multipliers and the accumulated-deviation
//! metrics used by the approximation estimates.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::TimeGrid;
use crate::numeric::CompensatedSum;

/// Accepted deviation of a cell's multipliers from the unit simplex.
pub const SIMPLEX_TOL: f64 = 1e-9;

/// Piecewise constant relaxed control: ordinary controls `omega` and convex
/// multipliers `alpha` per cell.
#[derive(Debug, Clone, PartialEq)]
pub struct RelaxedControl {
    grid: TimeGrid,
    omega: Vec<Vec<f64>>,
    alpha: Vec<Vec<f64>>,
}

impl RelaxedControl {
    /// Validates the simplex constraint on every cell. Entries within
    /// [`SIMPLEX_TOL`] of `[0, 1]` are clamped and the remaining sum residual
    /// is assigned to the largest component; anything further off is rejected.
    pub fn new(grid: TimeGrid, omega: Vec<Vec<f64>>, alpha: Vec<Vec<f64>>) -> Result<Self> {
        let n = grid.n_cells();
        if alpha.len() != n || omega.len() != n {
            return Err(Error::GridMismatch(format!(
                "grid has {n} cells, alpha has {} rows, omega has {}",
                alpha.len(),
                omega.len()
            )));
        }
        let n_modes = alpha[0].len();
        if n_modes == 0 {
            return Err(Error::InvalidControl("need at least one mode".into()));
        }
        let m = omega[0].len();
        let mut alpha = alpha;
        for (j, row) in alpha.iter_mut().enumerate() {
            if row.len() != n_modes {
                return Err(Error::InvalidControl(format!(
                    "cell {j}: expected {n_modes} multipliers, got {}",
                    row.len()
                )));
            }
            repair_simplex(row).map_err(|msg| Error::InvalidControl(format!("cell {j}: {msg}")))?;
        }
        for (j, row) in omega.iter().enumerate() {
            if row.len() != m {
                return Err(Error::InvalidControl(format!(
                    "cell {j}: expected {m} ordinary controls, got {}",
                    row.len()
                )));
            }
            if row.iter().any(|x| !x.is_finite()) {
                return Err(Error::InvalidControl(format!(
                    "cell {j}: non-finite control"
                )));
            }
        }
        Ok(Self { grid, omega, alpha })
    }

    /// Uniform multipliers `1/N` and constant ordinary controls.
    pub fn uniform(grid: TimeGrid, n_modes: usize, omega: &[f64]) -> Result<Self> {
        let n = grid.n_cells();
        let a = vec![1.0 / n_modes as f64; n_modes];
        Self::new(grid, vec![omega.to_vec(); n], vec![a; n])
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn n_modes(&self) -> usize {
        self.alpha[0].len()
    }

    pub fn n_controls(&self) -> usize {
        self.omega[0].len()
    }

    pub fn alpha(&self) -> &[Vec<f64>] {
        &self.alpha
    }

    pub fn omega(&self) -> &[Vec<f64>] {
        &self.omega
    }

    pub fn into_parts(self) -> (TimeGrid, Vec<Vec<f64>>, Vec<Vec<f64>>) {
        (self.grid, self.omega, self.alpha)
    }

    /// Checks the ordinary controls against per-component bounds.
    pub fn check_box(&self, bounds: &[(f64, f64)]) -> Result<()> {
        if bounds.len() != self.n_controls() {
            return Err(Error::InvalidControl(format!(
                "{} bounds for {} controls",
                bounds.len(),
                self.n_controls()
            )));
        }
        for (j, row) in self.omega.iter().enumerate() {
            for (k, (&u, &(lo, hi))) in row.iter().zip(bounds).enumerate() {
                if u < lo || u > hi {
                    return Err(Error::InvalidControl(format!(
                        "cell {j}: u_{} = {u} outside [{lo}, {hi}]",
                        k + 1
                    )));
                }
            }
        }
        Ok(())
    }

    /// True when every multiplier is exactly 0 or 1.
    pub fn is_binary(&self) -> bool {
        self.alpha
            .iter()
            .all(|row| row.iter().all(|&a| a == 0.0 || a == 1.0))
    }

    /// Copies cell values onto a refinement of the current grid.
    pub fn inject(&self, finer: &TimeGrid) -> Result<RelaxedControl> {
        let parents = self.grid.parent_cells(finer)?;
        Ok(RelaxedControl {
            grid: finer.clone(),
            omega: parents.iter().map(|&p| self.omega[p].clone()).collect(),
            alpha: parents.iter().map(|&p| self.alpha[p].clone()).collect(),
        })
    }
}

fn repair_simplex(row: &mut [f64]) -> std::result::Result<(), String> {
    for a in row.iter_mut() {
        if !a.is_finite() || *a < -SIMPLEX_TOL || *a > 1.0 + SIMPLEX_TOL {
            return Err(format!("multiplier {a} outside [0, 1]"));
        }
        *a = a.clamp(0.0, 1.0);
    }
    let sum: f64 = row.iter().sum();
    if (sum - 1.0).abs() > SIMPLEX_TOL {
        return Err(format!("multipliers sum to {sum}, not 1"));
    }
    // Rounding-level residuals are left alone so that repaired values are a
    // fixed point of the repair.
    if (sum - 1.0).abs() > 8.0 * f64::EPSILON {
        let largest = argmax_first(row);
        row[largest] += 1.0 - sum;
    }
    Ok(())
}

fn argmax_first(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// One-hot piecewise constant control, stored as the active mode per cell
/// (zero-based).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryControl {
    grid_nodes: Vec<u64>,
    n_modes: usize,
    active: Vec<usize>,
}

impl BinaryControl {
    pub fn from_modes(grid: &TimeGrid, n_modes: usize, active: Vec<usize>) -> Result<Self> {
        if active.len() != grid.n_cells() {
            return Err(Error::GridMismatch(format!(
                "grid has {} cells, got {} modes",
                grid.n_cells(),
                active.len()
            )));
        }
        if let Some(&bad) = active.iter().find(|&&i| i >= n_modes) {
            return Err(Error::InvalidControl(format!(
                "mode index {bad} out of range for {n_modes} modes"
            )));
        }
        Ok(Self {
            grid_nodes: grid.nodes().iter().map(|t| t.to_bits()).collect(),
            n_modes,
            active,
        })
    }

    /// Builds from one-hot rows; rejects anything but exactly one `1` per row.
    pub fn from_one_hot(grid: &TimeGrid, rows: &[Vec<f64>]) -> Result<Self> {
        let n_modes = rows.first().map_or(0, Vec::len);
        let mut active = Vec::with_capacity(rows.len());
        for (j, row) in rows.iter().enumerate() {
            if row.len() != n_modes || row.iter().any(|&b| b != 0.0 && b != 1.0) {
                return Err(Error::InvalidControl(format!("cell {j}: not a 0/1 row")));
            }
            let ones: Vec<usize> = (0..n_modes).filter(|&i| row[i] == 1.0).collect();
            if ones.len() != 1 {
                return Err(Error::InvalidControl(format!(
                    "cell {j}: {} active modes, expected exactly one",
                    ones.len()
                )));
            }
            active.push(ones[0]);
        }
        Self::from_modes(grid, n_modes, active)
    }

    pub fn n_modes(&self) -> usize {
        self.n_modes
    }

    pub fn n_cells(&self) -> usize {
        self.active.len()
    }

    /// Zero-based active mode per cell.
    pub fn modes(&self) -> &[usize] {
        &self.active
    }

    pub fn row(&self, j: usize) -> Vec<f64> {
        let mut r = vec![0.0; self.n_modes];
        r[self.active[j]] = 1.0;
        r
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.n_cells()).map(|j| self.row(j)).collect()
    }

    pub fn is_on_grid(&self, grid: &TimeGrid) -> bool {
        grid.nodes().len() == self.grid_nodes.len()
            && grid
                .nodes()
                .iter()
                .zip(&self.grid_nodes)
                .all(|(t, b)| t.to_bits() == *b)
    }

    pub fn grid(&self) -> TimeGrid {
        TimeGrid::new(self.grid_nodes.iter().map(|b| f64::from_bits(*b)).collect())
            .expect("stored grid was validated")
    }

    /// The same control viewed as a relaxed control with the given ordinary
    /// controls.
    pub fn to_relaxed(&self, omega: Vec<Vec<f64>>) -> Result<RelaxedControl> {
        RelaxedControl::new(self.grid(), omega, self.rows())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeviationReport {
    /// Per mode, `sup_t |int_0^t (alpha_i - beta_i)|`.
    pub per_mode_max: Vec<f64>,
    pub overall_max: f64,
    /// `(N - 1) * dt_max`.
    pub bound: f64,
}

impl DeviationReport {
    /// Whether the deviation stays within the bound up to `1e-10 * t_f`.
    pub fn within_bound(&self, t_final: f64) -> bool {
        self.overall_max <= self.bound + 1e-10 * t_final
    }
}

/// Sum-up rounding: on each cell the mode with the largest accumulated
/// deficit `int_0^{t_{j+1}} alpha_i - sum_{l<j} p_{i,l} dt_l` becomes active,
/// ties going to the smallest mode index.
pub fn sur_round(alpha: &RelaxedControl) -> BinaryControl {
    let grid = alpha.grid();
    let n_modes = alpha.n_modes();
    let mut integral = vec![CompensatedSum::new(); n_modes];
    let mut used = vec![CompensatedSum::new(); n_modes];
    let mut active = Vec::with_capacity(grid.n_cells());
    let mut deficit = vec![0.0; n_modes];
    for (j, row) in alpha.alpha().iter().enumerate() {
        let dt = grid.cell_len(j);
        for i in 0..n_modes {
            integral[i].add(row[i] * dt);
            deficit[i] = integral[i].value() - used[i].value();
        }
        let winner = argmax_first(&deficit);
        used[winner].add(dt);
        active.push(winner);
    }
    BinaryControl::from_modes(grid, n_modes, active).expect("modes in range")
}

/// Running integrals of `alpha_i - beta_i` evaluated at every grid node. The
/// integrand is constant on cells, so the supremum is attained at a node.
pub fn accumulated_deviation(
    alpha: &RelaxedControl,
    beta: &BinaryControl,
) -> Result<DeviationReport> {
    let grid = alpha.grid();
    if !beta.is_on_grid(grid) {
        return Err(Error::GridMismatch(
            "relaxed and binary controls live on different grids".into(),
        ));
    }
    if beta.n_modes() != alpha.n_modes() {
        return Err(Error::GridMismatch(format!(
            "{} relaxed modes vs {} binary modes",
            alpha.n_modes(),
            beta.n_modes()
        )));
    }
    let n_modes = alpha.n_modes();
    let mut running = vec![CompensatedSum::new(); n_modes];
    let mut per_mode_max = vec![0.0f64; n_modes];
    for (j, row) in alpha.alpha().iter().enumerate() {
        let dt = grid.cell_len(j);
        let on = beta.modes()[j];
        for i in 0..n_modes {
            let b = if i == on { 1.0 } else { 0.0 };
            running[i].add((row[i] - b) * dt);
            per_mode_max[i] = per_mode_max[i].max(running[i].value().abs());
        }
    }
    let overall_max = per_mode_max.iter().copied().fold(0.0, f64::max);
    Ok(DeviationReport {
        per_mode_max,
        overall_max,
        bound: (n_modes as f64 - 1.0) * grid.dt_max(),
    })
}

pub fn refine_bisect(grid: &TimeGrid) -> TimeGrid {
    grid.refine_bisect()
}

/// Controls table in the interchange CSV layout
/// `t_start,t_end,mode_1..mode_N[,u_1..u_m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlTable {
    pub grid: TimeGrid,
    pub modes: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
}

impl ControlTable {
    pub fn from_relaxed(c: &RelaxedControl) -> Self {
        Self {
            grid: c.grid().clone(),
            modes: c.alpha().to_vec(),
            controls: c.omega().to_vec(),
        }
    }

    pub fn from_binary(b: &BinaryControl, omega: &[Vec<f64>]) -> Self {
        Self {
            grid: b.grid(),
            modes: b.rows(),
            controls: omega.to_vec(),
        }
    }

    pub fn n_modes(&self) -> usize {
        self.modes.first().map_or(0, Vec::len)
    }

    pub fn n_controls(&self) -> usize {
        self.controls.first().map_or(0, Vec::len)
    }

    pub fn to_relaxed(&self) -> Result<RelaxedControl> {
        RelaxedControl::new(self.grid.clone(), self.controls.clone(), self.modes.clone())
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        let mut header = vec!["t_start".to_string(), "t_end".to_string()];
        header.extend((1..=self.n_modes()).map(|i| format!("mode_{i}")));
        header.extend((1..=self.n_controls()).map(|k| format!("u_{k}")));
        out.write_record(&header)?;
        for j in 0..self.grid.n_cells() {
            let (a, b) = self.grid.cell(j);
            let mut rec = vec![a.to_string(), b.to_string()];
            rec.extend(self.modes[j].iter().map(f64::to_string));
            rec.extend(self.controls[j].iter().map(f64::to_string));
            out.write_record(&rec)?;
        }
        out.flush().map_err(|e| Error::io("<controls csv>", e))?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let parse_err = |line: u64, message: String| Error::Parse {
            context: "controls csv".into(),
            line,
            message,
        };
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(r);
        let header = rdr.headers()?.clone();
        let cols: Vec<&str> = header.iter().collect();
        if cols.len() < 3 || cols[0] != "t_start" || cols[1] != "t_end" {
            return Err(parse_err(
                1,
                "header must start with t_start,t_end followed by mode_1..mode_N".into(),
            ));
        }
        let mut n_modes = 0;
        while 2 + n_modes < cols.len() && cols[2 + n_modes] == format!("mode_{}", n_modes + 1) {
            n_modes += 1;
        }
        if n_modes == 0 {
            return Err(parse_err(1, "no mode_1 column".into()));
        }
        let n_controls = cols.len() - 2 - n_modes;
        for k in 0..n_controls {
            if cols[2 + n_modes + k] != format!("u_{}", k + 1) {
                return Err(parse_err(
                    1,
                    format!("unexpected column '{}'", cols[2 + n_modes + k]),
                ));
            }
        }
        let mut nodes = Vec::new();
        let mut modes = Vec::new();
        let mut controls = Vec::new();
        for rec in rdr.records() {
            let rec = rec?;
            let line = rec.position().map_or(0, |p| p.line());
            let vals = rec
                .iter()
                .enumerate()
                .map(|(c, s)| {
                    s.parse::<f64>().map_err(|_| {
                        parse_err(line, format!("column {}: '{s}' is not a number", c + 1))
                    })
                })
                .collect::<Result<Vec<f64>>>()?;
            if vals.len() != cols.len() {
                return Err(parse_err(
                    line,
                    format!("expected {} fields, got {}", cols.len(), vals.len()),
                ));
            }
            match nodes.last() {
                None => nodes.push(vals[0]),
                Some(&prev) if prev != vals[0] => {
                    return Err(parse_err(
                        line,
                        format!(
                            "cell starts at {} but previous cell ended at {prev}",
                            vals[0]
                        ),
                    ))
                }
                _ => {}
            }
            nodes.push(vals[1]);
            modes.push(vals[2..2 + n_modes].to_vec());
            controls.push(vals[2 + n_modes..].to_vec());
        }
        if modes.is_empty() {
            return Err(parse_err(1, "no data rows".into()));
        }
        let grid = TimeGrid::new(nodes).map_err(|e| parse_err(0, e.to_string()))?;
        Ok(Self {
            grid,
            modes,
            controls,
        })
    }
}

/// Writes a deviation report as `mode,max_deviation,bound` rows plus an
/// `all` row for the overall maximum.
pub fn write_deviation_csv<W: Write>(report: &DeviationReport, w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    out.write_record(["mode", "max_deviation", "bound"])?;
    for (i, d) in report.per_mode_max.iter().enumerate() {
        out.write_record([(i + 1).to_string(), d.to_string(), report.bound.to_string()])?;
    }
    out.write_record([
        "all".to_string(),
        report.overall_max.to_string(),
        report.bound.to_string(),
    ])?;
    out.flush().map_err(|e| Error::io("<deviation csv>", e))?;
    Ok(())
}
