use serde::{Deserialize, Serialize};

use crate::banded::BandedLu;
use crate::mesh::{BoundaryTag, Edge, StructuredMesh};
use crate::sparse::Csr;
use crate::{Error, Field, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Velocity {
    /// `u = (-4 nu y^2 + 4 nu y, 0)`
    Poiseuille { nu: f64 },
    Uniform { ux: f64, uy: f64 },
}

impl Velocity {
    pub fn eval(&self, _x: f64, y: f64) -> [f64; 2] {
        match *self {
            Velocity::Poiseuille { nu } => [-4.0 * nu * y * y + 4.0 * nu * y, 0.0],
            Velocity::Uniform { ux, uy } => [ux, uy],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysicalCoefficients {
    pub mu: f64,
    pub sigma: f64,
    pub velocity: Velocity,
    pub c_up: f64,
}

impl PhysicalCoefficients {
    /// Poiseuille river with nu = 50, mu = 0.1, sigma = 0.1 and C_up = 0.1.
    pub fn river() -> Self {
        PhysicalCoefficients {
            mu: 0.1,
            sigma: 0.1,
            velocity: Velocity::Poiseuille { nu: 50.0 },
            c_up: 0.1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.mu > 0.0 && self.mu.is_finite()) {
            return Err(Error::Coefficients(format!("mu must be positive, got {}", self.mu)));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::Coefficients(format!("sigma must be nonnegative, got {}", self.sigma)));
        }
        if !(self.c_up >= 0.0 && self.c_up.is_finite()) {
            return Err(Error::Coefficients(format!("c_up must be nonnegative, got {}", self.c_up)));
        }
        Ok(())
    }
}

/// Boundary values on the interior nodes of both horizontal edges, ordered
/// as [`StructuredMesh::edge_nodes`].
#[derive(Debug, Clone, PartialEq)]
pub struct NodalControl<T = f64> {
    pub top: Vec<T>,
    pub bottom: Vec<T>,
}

impl<T: Field> NodalControl<T> {
    pub fn zeros(mesh: &StructuredMesh) -> Self {
        let n = mesh.nx() - 2;
        NodalControl { top: vec![T::zero(); n], bottom: vec![T::zero(); n] }
    }

    pub fn edge(&self, edge: Edge) -> &[T] {
        match edge {
            Edge::Top => &self.top,
            Edge::Bottom => &self.bottom,
        }
    }

    pub fn edge_mut(&mut self, edge: Edge) -> &mut Vec<T> {
        match edge {
            Edge::Top => &mut self.top,
            Edge::Bottom => &mut self.bottom,
        }
    }
}

/// P1 matrices of the convection-diffusion-reaction operator with Dirichlet
/// conditions on the inflow edge and both horizontal edges.
#[derive(Debug, Clone)]
pub struct FemSystem {
    pub mass: Csr,
    pub diffusion: Csr,
    pub convection: Csr,
    pub reaction: Csr,
    /// `diffusion + convection + reaction`
    pub operator: Csr,
    dirichlet: Vec<bool>,
    /// Mass matrix with Dirichlet rows and columns removed.
    mass_free: Csr,
    /// Operator with Dirichlet rows and columns replaced by the identity.
    operator_free: Csr,
}

/// Seven-point degree-5 rule on the reference triangle (barycentric points,
/// weights summing to one).
fn quadrature() -> [([f64; 3], f64); 7] {
    let r15 = 15f64.sqrt();
    let (a, b) = ((6.0 - r15) / 21.0, (6.0 + r15) / 21.0);
    let (wa, wb) = ((155.0 - r15) / 1200.0, (155.0 + r15) / 1200.0);
    [
        ([1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0], 9.0 / 40.0),
        ([a, a, 1.0 - 2.0 * a], wa),
        ([a, 1.0 - 2.0 * a, a], wa),
        ([1.0 - 2.0 * a, a, a], wa),
        ([b, b, 1.0 - 2.0 * b], wb),
        ([b, 1.0 - 2.0 * b, b], wb),
        ([1.0 - 2.0 * b, b, b], wb),
    ]
}

pub fn assemble(mesh: &StructuredMesh, coeffs: &PhysicalCoefficients) -> Result<FemSystem> {
    coeffs.validate()?;
    let n = mesh.n_nodes();
    let nodes = mesh.nodes();
    let ne = mesh.elements().len();
    let mut mass = Vec::with_capacity(9 * ne);
    let mut diffusion = Vec::with_capacity(9 * ne);
    let mut convection = Vec::with_capacity(9 * ne);
    let mut reaction = Vec::with_capacity(9 * ne);

    for (e, tri) in mesh.elements().iter().enumerate() {
        let p = tri.map(|k| nodes[k]);
        let area = mesh.element_area(e);
        let mut grad = [[0.0; 2]; 3];
        for a in 0..3 {
            let (b, c) = ((a + 1) % 3, (a + 2) % 3);
            grad[a] = [(p[b][1] - p[c][1]) / (2.0 * area), (p[c][0] - p[b][0]) / (2.0 * area)];
        }
        // moments \int_T u phi_a, exact for velocities up to quadratic order
        let mut u_phi = [[0.0; 2]; 3];
        for (bary, w) in quadrature() {
            let x = bary[0] * p[0][0] + bary[1] * p[1][0] + bary[2] * p[2][0];
            let y = bary[0] * p[0][1] + bary[1] * p[1][1] + bary[2] * p[2][1];
            let u = coeffs.velocity.eval(x, y);
            for a in 0..3 {
                u_phi[a][0] += w * area * u[0] * bary[a];
                u_phi[a][1] += w * area * u[1] * bary[a];
            }
        }

        for a in 0..3 {
            for b in 0..3 {
                let (r, c) = (tri[a], tri[b]);
                let m = area / 12.0 * if a == b { 2.0 } else { 1.0 };
                mass.push((r, c, m));
                reaction.push((r, c, coeffs.sigma * m));
                let g = grad[a][0] * grad[b][0] + grad[a][1] * grad[b][1];
                diffusion.push((r, c, coeffs.mu * area * g));
                // test function phi_r, trial function phi_c
                let adv = u_phi[a][0] * grad[b][0] + u_phi[a][1] * grad[b][1];
                convection.push((r, c, adv));
            }
        }
    }

    let mass = Csr::from_triplets(n, n, &mass);
    let diffusion = Csr::from_triplets(n, n, &diffusion);
    let convection = Csr::from_triplets(n, n, &convection);
    let reaction = Csr::from_triplets(n, n, &reaction);
    let operator = diffusion.add_scaled(&convection, 1.0).add_scaled(&reaction, 1.0);

    let dirichlet: Vec<bool> = (0..n).map(|k| mesh.is_dirichlet(k)).collect();
    let free = |r: usize, c: usize| !dirichlet[r] && !dirichlet[c];
    let diag: Vec<(usize, f64)> = (0..n).filter(|&k| dirichlet[k]).map(|k| (k, 1.0)).collect();
    let mass_free = mass.filtered(free, &[]);
    let operator_free = operator.filtered(free, &diag);

    Ok(FemSystem {
        mass,
        diffusion,
        convection,
        reaction,
        operator,
        dirichlet,
        mass_free,
        operator_free,
    })
}

impl FemSystem {
    pub fn n(&self) -> usize {
        self.dirichlet.len()
    }

    pub fn dirichlet_mask(&self) -> &[bool] {
        &self.dirichlet
    }

    pub fn mass_free(&self) -> &Csr {
        &self.mass_free
    }

    pub fn operator_free(&self) -> &Csr {
        &self.operator_free
    }

    /// Dirichlet data vector: control on the horizontal edges, `c_up` on the
    /// inflow edge, zero elsewhere.
    pub fn dirichlet_values<T: Field>(
        &self,
        mesh: &StructuredMesh,
        control: &NodalControl<T>,
        c_up: T,
    ) -> Result<Vec<T>> {
        let mut g = vec![T::zero(); self.n()];
        for edge in Edge::BOTH {
            let nodes = mesh.edge_nodes(edge);
            let vals = control.edge(edge);
            if vals.len() != nodes.len() {
                return Err(Error::Dimension(format!(
                    "{} control has {} values for {} nodes",
                    edge.name(),
                    vals.len(),
                    nodes.len()
                )));
            }
            for (&k, &v) in nodes.iter().zip(vals) {
                g[k] = v;
            }
        }
        for k in mesh.upstream_nodes() {
            g[k] = c_up;
        }
        Ok(g)
    }

    /// Load vector of the eliminated system for Dirichlet data `g`:
    /// `-(A g)` on free rows and `g` on Dirichlet rows.
    pub fn lift<T: Field>(&self, g: &[T]) -> Vec<T> {
        let ag = self.operator.matvec(g);
        ag.into_iter()
            .zip(g)
            .zip(&self.dirichlet)
            .map(|((a, &gk), &d)| if d { gk } else { -a })
            .collect()
    }

    pub fn load_vector(
        &self,
        mesh: &StructuredMesh,
        control: &NodalControl<f64>,
        c_up: f64,
    ) -> Result<Vec<f64>> {
        for edge in Edge::BOTH {
            let nodes = mesh.edge_nodes(edge);
            for (&k, &v) in nodes.iter().zip(control.edge(edge)) {
                if v < 0.0 || !v.is_finite() {
                    return Err(Error::NegativeControl { node: k, value: v });
                }
            }
        }
        if c_up < 0.0 {
            return Err(Error::NegativeControl { node: mesh.upstream_nodes()[0], value: c_up });
        }
        let g = self.dirichlet_values(mesh, control, c_up)?;
        Ok(self.lift(&g))
    }

    /// Steady state `A C = F` of the eliminated system.
    pub fn steady_state(&self, mesh: &StructuredMesh, g: &[f64]) -> Result<Vec<f64>> {
        let lu = BandedLu::factor(&self.operator_free, Some(&mesh.band_ordering()))?;
        Ok(lu.solve(&self.lift(g)))
    }
}

/// Boundary tag helper used by callers that need Dirichlet node lists.
pub fn dirichlet_nodes(mesh: &StructuredMesh) -> Vec<usize> {
    (0..mesh.n_nodes())
        .filter(|&k| matches!(mesh.tag(k), Some(BoundaryTag::Upstream | BoundaryTag::Horizontal(_))))
        .collect()
}
