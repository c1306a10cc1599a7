use serde::{Deserialize, Serialize};

use crate::control::{Segment, SegmentLayout, Subdivision};
use crate::mesh::Edge;
use crate::model::{ForwardModel, FullModel};
use crate::sensitivity::Window;
use crate::{Error, Result};

const TOL: f64 = 1e-9;

/// Vertical slabs `[ξ_j, ξ_{j+1}] × [y1, y2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SectionPartition {
    xi: Vec<f64>,
}

impl SectionPartition {
    pub fn new(xi: Vec<f64>) -> Result<Self> {
        if xi.len() < 2 || xi.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config(format!("section breakpoints {xi:?} must increase")));
        }
        Ok(SectionPartition { xi })
    }

    /// Sections matching the top-edge breakpoints of a subdivision.
    pub fn from_subdivision(sub: &Subdivision) -> Self {
        SectionPartition { xi: sub.breakpoints(Edge::Top) }
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.xi
    }

    pub fn n_sections(&self) -> usize {
        self.xi.len() - 1
    }

    pub fn bounds(&self, i: usize) -> (f64, f64) {
        (self.xi[i], self.xi[i + 1])
    }

    /// Indices of the segments lying inside section `i`.
    pub fn params_in(&self, i: usize, segments: &[Segment]) -> Vec<usize> {
        let (a, b) = self.bounds(i);
        (0..segments.len()).filter(|&s| segments[s].a >= a - TOL && segments[s].b <= b + TOL).collect()
    }
}

/// Normalized mean-outflow responses to unit probes and their time
/// derivatives, one curve per section.
#[derive(Debug, Clone)]
pub struct ZetaCurves {
    pub edge: Edge,
    pub times: Vec<f64>,
    pub zeta: Vec<Vec<f64>>,
    /// Centered differences per time step, not per unit time.
    pub dzeta: Vec<Vec<f64>>,
}

/// Probes the leftmost finest segment of each section on `edge` with unit
/// value and zero inflow.
pub fn zeta_curves(
    model: &FullModel,
    partition: &SectionPartition,
    finest: &Subdivision,
    edge: Edge,
) -> Result<ZetaCurves> {
    let grid = *model.grid();
    let dx = finest.dx();
    let mut zeta = Vec::with_capacity(partition.n_sections());
    for i in 0..partition.n_sections() {
        let (a, b) = partition.bounds(i);
        if b - a < dx - TOL {
            return Err(Error::Config(format!("section [{a}, {b}] holds no finest segment")));
        }
        finest.fine_index(a)?;
        let layout = SegmentLayout::new(model.mesh(), &[Segment::new(edge, a, a + dx)])?;
        let y = model.predict(&layout.dirichlet_vector(&[1.0], 0.0), grid.n - 1)?;
        let mean: Vec<f64> = (0..grid.n).map(|j| y.column(j).mean()).collect();
        zeta.push(normalize(mean));
    }
    let dzeta = zeta.iter().map(|z| centered_derivative(z, 1.0)).collect();
    let times = (0..grid.n).map(|j| grid.time(j)).collect();
    Ok(ZetaCurves { edge, times, zeta, dzeta })
}

fn normalize(mut z: Vec<f64>) -> Vec<f64> {
    let peak = z.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        z.iter_mut().for_each(|v| *v /= peak);
    }
    z
}

pub fn centered_derivative(z: &[f64], dt: f64) -> Vec<f64> {
    let n = z.len();
    (0..n)
        .map(|j| match (j, n) {
            (_, 0 | 1) => 0.0,
            (0, _) => (z[1] - z[0]) / dt,
            (j, n) if j == n - 1 => (z[n - 1] - z[n - 2]) / dt,
            (j, _) => (z[j + 1] - z[j - 1]) / (2.0 * dt),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WindowRule {
    pub eps4: f64,
    /// Overlap between consecutive windows, in time units.
    pub d: f64,
    /// Maximal extension of the first section's window, in time units.
    pub big_d: f64,
}

impl WindowRule {
    pub fn for_step(dt: f64) -> Self {
        WindowRule { eps4: 1e-3, d: 5.0 * dt, big_d: 40.0 * dt }
    }
}

/// Time windows `[t0_i, tf_i]` per section (index 0 is the upstream section).
pub fn select_windows(times: &[f64], dzeta: &[Vec<f64>], rule: WindowRule) -> Result<Vec<(f64, f64)>> {
    let ns = dzeta.len();
    if ns == 0 || times.is_empty() {
        return Err(Error::Window("no response curves".into()));
    }
    let (t_first, t_last) = (times[0], times[times.len() - 1]);
    let crossing = |i: usize| -> Result<(f64, f64)> {
        let hits: Vec<f64> = (0..times.len())
            .filter(|&j| dzeta[i][j] > rule.eps4 && (i == 0 || dzeta[i - 1][j] < rule.eps4))
            .map(|j| times[j])
            .collect();
        match (hits.first(), hits.last()) {
            (Some(&a), Some(&b)) => Ok((a, b)),
            _ => Err(Error::Window(format!("section {} never shows a transient above {}", i + 1, rule.eps4))),
        }
    };
    let mut out = vec![(0.0, 0.0); ns];
    let (a, b) = crossing(ns - 1)?;
    out[ns - 1] = if ns == 1 { (a, b.min(a + rule.big_d)) } else { (a, b) };
    for i in (0..ns - 1).rev() {
        let t0 = out[i + 1].1 - rule.d;
        let (_, last) = crossing(i)?;
        let tf = if i == 0 { (out[i + 1].1 + rule.big_d).min(last) } else { last };
        out[i] = (t0, tf);
    }
    for (i, w) in out.iter_mut().enumerate() {
        w.0 = w.0.clamp(t_first, t_last);
        w.1 = w.1.clamp(t_first, t_last);
        if !(w.1 > w.0) {
            return Err(Error::Window(format!("window of section {} is empty: [{}, {}]", i + 1, w.0, w.1)));
        }
    }
    Ok(out)
}

/// Per-section windows from top and bottom probes, merged into their hull.
/// An edge whose probes violate the arrival ordering is skipped; the call
/// fails only when neither edge yields windows.
pub fn section_windows(
    model: &FullModel,
    partition: &SectionPartition,
    finest: &Subdivision,
    rule: WindowRule,
) -> Result<Vec<Window>> {
    let mut hull: Option<Vec<(f64, f64)>> = None;
    let mut last_err = None;
    for edge in Edge::BOTH {
        let z = zeta_curves(model, partition, finest, edge)?;
        let w = match select_windows(&z.times, &z.dzeta, rule) {
            Ok(w) => w,
            Err(e) => {
                last_err = Some(e);
                continue;
            }
        };
        hull = Some(match hull {
            None => w,
            Some(h) => h.iter().zip(&w).map(|(p, q)| (p.0.min(q.0), p.1.max(q.1))).collect(),
        });
    }
    let grid = model.grid();
    match hull {
        Some(h) => h.into_iter().map(|(a, b)| Window::from_times(grid, a, b)).collect(),
        None => Err(last_err.unwrap()),
    }
}
