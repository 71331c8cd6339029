//! Discrete graph `φ(s, ξ)` over a time grid and a rectangular `ξ` grid.

use std::path::Path;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Values of `φ` at nodes `(s_i, L_i u_j)`, `u_j` uniform on `[-1, 1]^{dim_e}`.
///
/// Interpolation is multilinear in `ξ` and linear in `s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifoldGraph {
    pub dim_e: usize,
    pub dim_f: usize,
    pub s_grid: Vec<f64>,
    /// Nodes `0..active_len` form the reported range; the rest only carry the tail.
    pub active_len: usize,
    /// Nodes per `ξ` axis (odd, so that `ξ = 0` is a node).
    pub xi_nodes: usize,
    pub halfwidth: Vec<f64>,
    /// Indexed `[s][ξ multi-index][F component]`, first `ξ` axis fastest.
    pub values: Vec<f64>,
    /// A-posteriori error estimate per `s` node (worst over `ξ`).
    pub node_error: Vec<f64>,
    pub alpha: f64,
    pub beta: f64,
    pub outer_iterations: usize,
    pub error_bound: f64,
    #[serde(default)]
    pub metadata: serde_json::Value,
}

impl ManifoldGraph {
    pub fn zero(dim_e: usize, dim_f: usize, s_grid: Vec<f64>, active_len: usize, xi_nodes: usize, halfwidth: Vec<f64>) -> Result<Self> {
        if dim_e == 0 || dim_e > 2 {
            return Err(Error::Constraint(format!("ξ grids support dim E in 1..=2, got {dim_e}")));
        }
        if xi_nodes < 3 || xi_nodes % 2 == 0 {
            return Err(Error::Constraint(format!("ξ nodes per axis must be odd and at least 3, got {xi_nodes}")));
        }
        if s_grid.len() < 2 || s_grid.windows(2).any(|w| w[1] <= w[0]) || halfwidth.len() != s_grid.len() {
            return Err(Error::Constraint("time grid must be increasing with one halfwidth per node".into()));
        }
        let n_xi = xi_nodes.pow(dim_e as u32);
        let ns = s_grid.len();
        Ok(ManifoldGraph {
            dim_e,
            dim_f,
            active_len: active_len.clamp(1, ns),
            xi_nodes,
            values: vec![0.0; ns * n_xi * dim_f],
            node_error: vec![0.0; ns],
            s_grid,
            halfwidth,
            alpha: 0.0,
            beta: 0.0,
            outer_iterations: 0,
            error_bound: 0.0,
            metadata: serde_json::Value::Null,
        })
    }

    pub fn n_s(&self) -> usize {
        self.s_grid.len()
    }

    /// `ξ` nodes per time node.
    pub fn n_xi(&self) -> usize {
        self.xi_nodes.pow(self.dim_e as u32)
    }

    fn u_node(&self, k: usize) -> f64 {
        -1.0 + 2.0 * k as f64 / (self.xi_nodes - 1) as f64
    }

    /// Per-axis indices of the flat `ξ` index `j`.
    pub fn xi_multi_index(&self, j: usize) -> [usize; 2] {
        [j % self.xi_nodes, j / self.xi_nodes]
    }

    pub fn xi_node(&self, i: usize, j: usize) -> DVector<f64> {
        let idx = self.xi_multi_index(j);
        DVector::from_fn(self.dim_e, |a, _| self.halfwidth[i] * self.u_node(idx[a]))
    }

    pub fn is_origin(&self, j: usize) -> bool {
        let mid = (self.xi_nodes - 1) / 2;
        let idx = self.xi_multi_index(j);
        (0..self.dim_e).all(|a| idx[a] == mid)
    }

    fn offset(&self, i: usize, j: usize) -> usize {
        (i * self.n_xi() + j) * self.dim_f
    }

    pub fn value(&self, i: usize, j: usize) -> &[f64] {
        let o = self.offset(i, j);
        &self.values[o..o + self.dim_f]
    }

    pub fn value_mut(&mut self, i: usize, j: usize) -> &mut [f64] {
        let o = self.offset(i, j);
        let df = self.dim_f;
        &mut self.values[o..o + df]
    }

    /// Multilinear interpolation at time node `i`, with `ξ` clamped onto the box.
    ///
    /// Returns the distance between `ξ` and its clamped image.
    pub fn eval_at_node_clamped(&self, i: usize, xi: &[f64], out: &mut [f64]) -> f64 {
        let n = self.xi_nodes;
        let du = 2.0 / (n - 1) as f64;
        let l = self.halfwidth[i];
        let mut cells = [(0usize, 0.0f64); 2];
        let mut dist2 = 0.0;
        for a in 0..self.dim_e {
            let u = xi[a] / l;
            let uc = u.clamp(-1.0, 1.0);
            dist2 += ((u - uc) * l).powi(2);
            let pos = (uc + 1.0) / du;
            let k = (pos.floor() as usize).min(n - 2);
            cells[a] = (k, pos - k as f64);
        }
        out.fill(0.0);
        let corners = 1usize << self.dim_e;
        for c in 0..corners {
            let mut w = 1.0;
            let mut j = 0;
            let mut stride = 1;
            for (a, &(k, frac)) in cells.iter().enumerate().take(self.dim_e) {
                let hi = (c >> a) & 1 == 1;
                w *= if hi { frac } else { 1.0 - frac };
                j += (k + hi as usize) * stride;
                stride *= n;
            }
            if w != 0.0 {
                for (o, v) in out.iter_mut().zip(self.value(i, j)) {
                    *o += w * v;
                }
            }
        }
        dist2.sqrt()
    }

    /// `φ(s, ξ)` within the grid's hull.
    pub fn eval(&self, s: f64, xi: &DVector<f64>) -> Result<DVector<f64>> {
        let outside = || Error::Extrapolation { s, xi: xi.as_slice().to_vec() };
        if xi.len() != self.dim_e {
            return Err(Error::Domain(format!("ξ has length {}, expected {}", xi.len(), self.dim_e)));
        }
        let (first, last) = (self.s_grid[0], *self.s_grid.last().expect("nonempty grid"));
        if !(s >= first && s <= last) {
            return Err(outside());
        }
        let i = match self.s_grid.partition_point(|&x| x <= s) {
            0 => 0,
            k => (k - 1).min(self.n_s() - 2),
        };
        let w = (s - self.s_grid[i]) / (self.s_grid[i + 1] - self.s_grid[i]);
        let nodes: &[(usize, f64)] = if w == 0.0 { &[(i, 1.0)] } else if w == 1.0 { &[(i + 1, 1.0)] } else { &[(i, 1.0 - w), (i + 1, w)] };
        let mut out = DVector::zeros(self.dim_f);
        let mut buf = vec![0.0; self.dim_f];
        for &(k, wk) in nodes {
            if xi.iter().any(|x| x.abs() > self.halfwidth[k]) {
                return Err(outside());
            }
            self.eval_at_node_clamped(k, xi.as_slice(), &mut buf);
            for (o, b) in out.iter_mut().zip(&buf) {
                *o += wk * b;
            }
        }
        Ok(out)
    }

    /// Largest slope between neighbouring `ξ` nodes at each time node.
    pub fn lipschitz_constants(&self) -> Vec<f64> {
        let n = self.xi_nodes;
        let norm = |v: &[f64], w: &[f64]| v.iter().zip(w).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let steps: Vec<(isize, isize)> = if self.dim_e == 1 { vec![(1, 0)] } else { vec![(1, 0), (0, 1), (1, 1), (1, -1)] };
        (0..self.n_s())
            .map(|i| {
                let h = 2.0 * self.halfwidth[i] / (n - 1) as f64;
                let mut worst: f64 = 0.0;
                for j in 0..self.n_xi() {
                    let [a, b] = self.xi_multi_index(j);
                    for &(da, db) in &steps {
                        let (a2, b2) = (a as isize + da, b as isize + db);
                        let inside = |k: isize| k >= 0 && (k as usize) < n;
                        if !inside(a2) || (self.dim_e == 2 && !inside(b2)) {
                            continue;
                        }
                        let j2 = a2 as usize + if self.dim_e == 2 { b2 as usize * n } else { 0 };
                        let dist = h * ((da * da + db * db) as f64).sqrt();
                        worst = worst.max(norm(self.value(i, j), self.value(i, j2)) / dist);
                    }
                }
                worst
            })
            .collect()
    }

    /// `true` when every `ξ = 0` node holds exactly zero.
    pub fn zero_at_origin(&self) -> bool {
        (0..self.n_s()).all(|i| (0..self.n_xi()).filter(|&j| self.is_origin(j)).all(|j| self.value(i, j).iter().all(|&v| v == 0.0)))
    }

    /// `sup ‖φ − ψ‖ / ‖ξ‖` over nodes with `ξ ≠ 0`.
    pub fn distance(&self, other: &ManifoldGraph) -> f64 {
        let mut worst: f64 = 0.0;
        for i in 0..self.n_s() {
            for j in 0..self.n_xi() {
                if self.is_origin(j) {
                    continue;
                }
                let xn = self.xi_node(i, j).norm();
                let d = self.value(i, j).iter().zip(other.value(i, j)).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
                worst = worst.max(d / xn);
            }
        }
        worst
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("s");
        for a in 1..=self.dim_e {
            out.push_str(&format!(",xi_{a}"));
        }
        for a in 1..=self.dim_f {
            out.push_str(&format!(",phi_{a}"));
        }
        out.push('\n');
        for i in 0..self.active_len {
            for j in 0..self.n_xi() {
                let xi = self.xi_node(i, j);
                out.push_str(&fmt17(self.s_grid[i]));
                for x in xi.iter() {
                    out.push(',');
                    out.push_str(&fmt17(*x));
                }
                for v in self.value(i, j) {
                    out.push(',');
                    out.push_str(&fmt17(*v));
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv())?;
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load_json(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// Seventeen significant digits in scientific notation.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line_graph() -> ManifoldGraph {
        let mut g = ManifoldGraph::zero(1, 1, vec![0.0, 1.0, 2.0], 3, 5, vec![1.0, 1.0, 2.0]).unwrap();
        for i in 0..3 {
            for j in 0..5 {
                let xi = g.xi_node(i, j)[0];
                g.value_mut(i, j)[0] = 0.1 * xi + 0.01 * xi * xi + 0.001 * i as f64 * xi;
            }
        }
        g
    }

    #[test]
    fn node_queries_are_exact() {
        let g = line_graph();
        for i in 0..3 {
            for j in 0..5 {
                let v = g.eval(g.s_grid[i], &g.xi_node(i, j)).unwrap();
                assert_eq!(v[0], g.value(i, j)[0]);
            }
        }
    }

    #[test]
    fn origin_maps_to_zero_everywhere() {
        let g = line_graph();
        assert!(g.zero_at_origin());
        for s in [0.0, 0.37, 1.5, 2.0] {
            assert_eq!(g.eval(s, &DVector::from_vec(vec![0.0])).unwrap()[0], 0.0);
        }
    }

    #[test]
    fn midpoint_is_average() {
        let g = line_graph();
        let (a, b) = (g.value(0, 3)[0], g.value(0, 4)[0]);
        let mid = g.eval(0.0, &DVector::from_vec(vec![0.75])).unwrap()[0];
        assert!((mid - 0.5 * (a + b)).abs() < 1e-16);
    }

    #[test]
    fn outside_hull_is_an_error() {
        let g = line_graph();
        assert!(matches!(g.eval(2.5, &DVector::from_vec(vec![0.0])), Err(Error::Extrapolation { .. })));
        assert!(matches!(g.eval(0.5, &DVector::from_vec(vec![1.5])), Err(Error::Extrapolation { .. })));
    }

    #[test]
    fn two_dimensional_bilinear() {
        let mut g = ManifoldGraph::zero(2, 1, vec![0.0, 1.0], 2, 3, vec![1.0, 1.0]).unwrap();
        for i in 0..2 {
            for j in 0..g.n_xi() {
                let xi = g.xi_node(i, j);
                g.value_mut(i, j)[0] = 0.2 * xi[0] - 0.1 * xi[1];
            }
        }
        let v = g.eval(0.5, &DVector::from_vec(vec![0.3, -0.6])).unwrap()[0];
        assert!((v - (0.06 + 0.06)).abs() < 1e-15);
        assert!((g.lipschitz_constants()[0] - 0.3 / 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn json_round_trip() {
        let g = line_graph();
        let back = ManifoldGraph::from_json(&g.to_json().unwrap()).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn csv_has_seventeen_digits() {
        let g = line_graph();
        let csv = g.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("s,xi_1,phi_1"));
        let row: Vec<&str> = lines.nth(1).unwrap().split(',').collect();
        let mantissa = row[1].split('e').next().unwrap().replace(['-', '.'], "");
        assert_eq!(mantissa.len(), 17);
    }
}
