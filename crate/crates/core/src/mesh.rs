use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Edge {
    Top,
    Bottom,
}

impl Edge {
    pub const BOTH: [Edge; 2] = [Edge::Top, Edge::Bottom];

    pub fn name(self) -> &'static str {
        match self {
            Edge::Top => "top",
            Edge::Bottom => "bottom",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundaryTag {
    Horizontal(Edge),
    Upstream,
    Downstream,
}

/// Uniform grid on a rectangle, every cell split into two triangles.
///
/// Node `(i, j)` (column `i` along x, row `j` along y) has index `j * nx + i`.
#[derive(Debug, Clone)]
pub struct StructuredMesh {
    x_range: (f64, f64),
    y_range: (f64, f64),
    nx: usize,
    ny: usize,
    nodes: Vec<[f64; 2]>,
    elements: Vec<[usize; 3]>,
    tags: Vec<Option<BoundaryTag>>,
}

impl StructuredMesh {
    pub fn new(x_range: (f64, f64), y_range: (f64, f64), nx: usize, ny: usize) -> Result<Self> {
        if nx < 2 || ny < 2 {
            return Err(Error::Mesh(format!("need at least 2 nodes per axis, got {nx}x{ny}")));
        }
        let finite = [x_range.0, x_range.1, y_range.0, y_range.1].iter().all(|v| v.is_finite());
        if !finite || x_range.1 <= x_range.0 || y_range.1 <= y_range.0 {
            return Err(Error::Mesh(format!("degenerate domain {x_range:?} x {y_range:?}")));
        }
        let hx = (x_range.1 - x_range.0) / (nx - 1) as f64;
        let hy = (y_range.1 - y_range.0) / (ny - 1) as f64;

        let mut nodes = Vec::with_capacity(nx * ny);
        let mut tags = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                let x = if i == nx - 1 { x_range.1 } else { x_range.0 + i as f64 * hx };
                let y = if j == ny - 1 { y_range.1 } else { y_range.0 + j as f64 * hy };
                nodes.push([x, y]);
                let tag = if i == 0 {
                    Some(BoundaryTag::Upstream)
                } else if i == nx - 1 {
                    Some(BoundaryTag::Downstream)
                } else if j == ny - 1 {
                    Some(BoundaryTag::Horizontal(Edge::Top))
                } else if j == 0 {
                    Some(BoundaryTag::Horizontal(Edge::Bottom))
                } else {
                    None
                };
                tags.push(tag);
            }
        }

        let mut elements = Vec::with_capacity(2 * (nx - 1) * (ny - 1));
        for j in 0..ny - 1 {
            for i in 0..nx - 1 {
                let n00 = j * nx + i;
                let n10 = n00 + 1;
                let n01 = n00 + nx;
                let n11 = n01 + 1;
                elements.push([n00, n10, n11]);
                elements.push([n00, n11, n01]);
            }
        }

        Ok(StructuredMesh { x_range, y_range, nx, ny, nodes, elements, tags })
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn x_range(&self) -> (f64, f64) {
        self.x_range
    }

    pub fn y_range(&self) -> (f64, f64) {
        self.y_range
    }

    pub fn hx(&self) -> f64 {
        (self.x_range.1 - self.x_range.0) / (self.nx - 1) as f64
    }

    pub fn hy(&self) -> f64 {
        (self.y_range.1 - self.y_range.0) / (self.ny - 1) as f64
    }

    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn index(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn elements(&self) -> &[[usize; 3]] {
        &self.elements
    }

    pub fn tag(&self, node: usize) -> Option<BoundaryTag> {
        self.tags[node]
    }

    pub fn area(&self) -> f64 {
        (self.x_range.1 - self.x_range.0) * (self.y_range.1 - self.y_range.0)
    }

    pub fn element_area(&self, e: usize) -> f64 {
        let [a, b, c] = self.elements[e].map(|k| self.nodes[k]);
        0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
    }

    /// Interior nodes of a horizontal edge, left to right. Corners belong to
    /// the vertical edges.
    pub fn edge_nodes(&self, edge: Edge) -> Vec<usize> {
        let j = match edge {
            Edge::Top => self.ny - 1,
            Edge::Bottom => 0,
        };
        (1..self.nx - 1).map(|i| self.index(i, j)).collect()
    }

    pub fn upstream_nodes(&self) -> Vec<usize> {
        (0..self.ny).map(|j| self.index(0, j)).collect()
    }

    /// Outflow nodes, bottom to top.
    pub fn outflow_nodes(&self) -> Vec<usize> {
        (0..self.ny).map(|j| self.index(self.nx - 1, j)).collect()
    }

    /// Nodes carrying a Dirichlet condition: the inflow edge and both
    /// horizontal edges.
    pub fn is_dirichlet(&self, node: usize) -> bool {
        matches!(self.tags[node], Some(BoundaryTag::Upstream | BoundaryTag::Horizontal(_)))
    }

    /// Node renumbering (`perm[new] = old`) that makes the shorter axis run
    /// fastest, which minimises the bandwidth of assembled matrices.
    pub fn band_ordering(&self) -> Vec<usize> {
        if self.ny < self.nx {
            let mut perm = Vec::with_capacity(self.n_nodes());
            for i in 0..self.nx {
                for j in 0..self.ny {
                    perm.push(self.index(i, j));
                }
            }
            perm
        } else {
            (0..self.n_nodes()).collect()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn river_mesh_has_expected_size() {
        let m = StructuredMesh::new((0.0, 8.0), (0.0, 1.0), 51, 21).unwrap();
        assert_eq!(m.n_nodes(), 1071);
        assert_eq!(m.elements().len(), 2 * 50 * 20);
        let coarse = StructuredMesh::new((0.0, 8.0), (0.0, 1.0), 41, 9).unwrap();
        assert_eq!(coarse.n_nodes(), 369);
    }

    #[test]
    fn minimal_mesh_is_all_boundary() {
        let m = StructuredMesh::new((0.0, 1.0), (0.0, 1.0), 2, 2).unwrap();
        assert_eq!(m.n_nodes(), 4);
        assert_eq!(m.elements().len(), 2);
        assert!((0..4).all(|k| m.tag(k).is_some()));
        assert_eq!(m.tag(0), Some(BoundaryTag::Upstream));
        assert_eq!(m.tag(3), Some(BoundaryTag::Downstream));
    }

    #[test]
    fn rejects_degenerate_input() {
        assert!(StructuredMesh::new((0.0, 1.0), (0.0, 1.0), 1, 5).is_err());
        assert!(StructuredMesh::new((1.0, 1.0), (0.0, 1.0), 3, 3).is_err());
        assert!(StructuredMesh::new((0.0, 1.0), (2.0, 1.0), 3, 3).is_err());
    }

    #[test]
    fn tags_and_orientation() {
        let m = StructuredMesh::new((0.0, 8.0), (0.0, 1.0), 9, 5).unwrap();
        for e in 0..m.elements().len() {
            assert!(m.element_area(e) > 0.0);
        }
        let top = m.edge_nodes(Edge::Top);
        assert_eq!(top.len(), 7);
        assert!(top.windows(2).all(|w| m.nodes()[w[0]][0] < m.nodes()[w[1]][0]));
        assert!(top.iter().all(|&k| m.nodes()[k][1] == 1.0));
        let out = m.outflow_nodes();
        assert!(out.windows(2).all(|w| m.nodes()[w[0]][1] < m.nodes()[w[1]][1]));
        assert_eq!(m.tag(m.index(0, 4)), Some(BoundaryTag::Upstream));
        assert_eq!(m.tag(m.index(8, 0)), Some(BoundaryTag::Downstream));
        let boundary = (0..m.n_nodes()).filter(|&k| m.tag(k).is_some()).count();
        assert_eq!(boundary, 2 * 9 + 2 * 5 - 4);
    }
}
