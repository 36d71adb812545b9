use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Ordered partition `0 = t_0 < t_1 < ... < t_n = t_f` carrying piecewise
/// constant controls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    nodes: Vec<f64>,
}

impl TimeGrid {
    pub fn new(nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least two nodes, got {}",
                nodes.len()
            )));
        }
        if nodes.iter().any(|t| !t.is_finite()) {
            return Err(Error::InvalidGrid("non-finite node".into()));
        }
        if nodes[0] != 0.0 {
            return Err(Error::InvalidGrid(format!(
                "first node must be 0, got {}",
                nodes[0]
            )));
        }
        if let Some(j) = nodes.windows(2).position(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGrid(format!(
                "nodes not strictly increasing at index {}: {} then {}",
                j,
                nodes[j],
                nodes[j + 1]
            )));
        }
        Ok(Self { nodes })
    }

    /// `cells` equidistant cells on `[0, t_final]`.
    pub fn uniform(t_final: f64, cells: usize) -> Result<Self> {
        if cells == 0 {
            return Err(Error::InvalidGrid("need at least one cell".into()));
        }
        if !(t_final > 0.0) || !t_final.is_finite() {
            return Err(Error::InvalidGrid(format!(
                "final time must be positive, got {t_final}"
            )));
        }
        let h = t_final / cells as f64;
        let mut nodes: Vec<f64> = (0..cells).map(|j| j as f64 * h).collect();
        nodes.push(t_final);
        Self::new(nodes)
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn n_cells(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn t_final(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    pub fn cell(&self, j: usize) -> (f64, f64) {
        (self.nodes[j], self.nodes[j + 1])
    }

    pub fn cell_len(&self, j: usize) -> f64 {
        self.nodes[j + 1] - self.nodes[j]
    }

    pub fn cell_lens(&self) -> impl Iterator<Item = f64> + '_ {
        self.nodes.windows(2).map(|w| w[1] - w[0])
    }

    pub fn dt_max(&self) -> f64 {
        self.cell_lens().fold(0.0, f64::max)
    }

    /// Index of the cell containing `t` (right-open cells, last cell closed).
    pub fn locate(&self, t: f64) -> Option<usize> {
        if t < 0.0 || t > self.t_final() {
            return None;
        }
        let j = self.nodes.partition_point(|&x| x <= t);
        Some(j.saturating_sub(1).min(self.n_cells() - 1))
    }

    /// Splits every cell at its midpoint.
    pub fn refine_bisect(&self) -> TimeGrid {
        let mut nodes = Vec::with_capacity(2 * self.nodes.len() - 1);
        for w in self.nodes.windows(2) {
            nodes.push(w[0]);
            nodes.push(0.5 * (w[0] + w[1]));
        }
        nodes.push(self.t_final());
        TimeGrid { nodes }
    }

    /// True if every node of `self` is also a node of `finer`.
    pub fn is_nested_in(&self, finer: &TimeGrid) -> bool {
        self.nodes
            .iter()
            .all(|t| finer.nodes.binary_search_by(|x| x.total_cmp(t)).is_ok())
    }

    /// For each cell of `finer`, the index of the cell of `self` containing it.
    pub fn parent_cells(&self, finer: &TimeGrid) -> Result<Vec<usize>> {
        if !self.is_nested_in(finer) || finer.t_final() != self.t_final() {
            return Err(Error::GridMismatch(
                "target grid is not a refinement of the source grid".into(),
            ));
        }
        Ok(finer
            .nodes
            .windows(2)
            .map(|w| self.locate(0.5 * (w[0] + w[1])).expect("inside horizon"))
            .collect())
    }

    pub fn same_as(&self, other: &TimeGrid) -> bool {
        self.nodes == other.nodes
    }
}
