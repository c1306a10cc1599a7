use serde::{Deserialize, Serialize};

use crate::fem::NodalControl;
use crate::mesh::{Edge, StructuredMesh};
use crate::{Error, Field, Result};

const GRID_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub edge: Edge,
    pub a: f64,
    pub b: f64,
}

impl Segment {
    pub fn new(edge: Edge, a: f64, b: f64) -> Self {
        Segment { edge, a, b }
    }

    pub fn len(&self) -> f64 {
        self.b - self.a
    }

    pub fn is_empty(&self) -> bool {
        self.b <= self.a
    }

    pub fn mid(&self) -> f64 {
        0.5 * (self.a + self.b)
    }
}

/// Breakpoints of both horizontal edges, stored as indices on the finest
/// uniform grid of `n_fine` cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Subdivision {
    x_range: (u64, u64),
    n_fine: usize,
    top: Vec<usize>,
    bottom: Vec<usize>,
}

impl Subdivision {
    /// `per_edge` equal segments on each edge; `per_edge` must divide `n_fine`.
    pub fn uniform(x_range: (f64, f64), n_fine: usize, per_edge: usize) -> Result<Self> {
        if n_fine == 0 || per_edge == 0 || n_fine % per_edge != 0 || !(x_range.1 > x_range.0) {
            return Err(Error::Subdivision(format!(
                "{per_edge} segments do not fit {n_fine} finest cells on {x_range:?}"
            )));
        }
        let step = n_fine / per_edge;
        let pts: Vec<usize> = (0..=per_edge).map(|k| k * step).collect();
        Ok(Subdivision {
            x_range: (x_range.0.to_bits(), x_range.1.to_bits()),
            n_fine,
            top: pts.clone(),
            bottom: pts,
        })
    }

    pub fn finest(x_range: (f64, f64), n_fine: usize) -> Result<Self> {
        Self::uniform(x_range, n_fine, n_fine)
    }

    /// Builds a subdivision from explicit breakpoint coordinates, which must
    /// lie on the finest grid.
    pub fn from_breakpoints(x_range: (f64, f64), n_fine: usize, top: &[f64], bottom: &[f64]) -> Result<Self> {
        let base = Self::uniform(x_range, n_fine, 1)?;
        let conv = |pts: &[f64]| -> Result<Vec<usize>> {
            let idx = pts.iter().map(|&x| base.fine_index(x)).collect::<Result<Vec<_>>>()?;
            if idx.first() != Some(&0) || idx.last() != Some(&n_fine) || idx.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Subdivision(format!("breakpoints {pts:?} must increase and span the edge")));
            }
            Ok(idx)
        };
        Ok(Subdivision { top: conv(top)?, bottom: conv(bottom)?, ..base })
    }

    pub fn x_range(&self) -> (f64, f64) {
        (f64::from_bits(self.x_range.0), f64::from_bits(self.x_range.1))
    }

    pub fn n_fine(&self) -> usize {
        self.n_fine
    }

    /// Width of a finest cell.
    pub fn dx(&self) -> f64 {
        let (a, b) = self.x_range();
        (b - a) / self.n_fine as f64
    }

    fn coord(&self, k: usize) -> f64 {
        let (a, b) = self.x_range();
        if k == self.n_fine {
            b
        } else {
            a + k as f64 * self.dx()
        }
    }

    pub fn fine_index(&self, x: f64) -> Result<usize> {
        let (a, _) = self.x_range();
        let r = (x - a) / self.dx();
        let k = r.round();
        if (r - k).abs() > GRID_TOL || k < 0.0 || k as usize > self.n_fine {
            return Err(Error::Subdivision(format!("{x} is not on the finest grid of step {}", self.dx())));
        }
        Ok(k as usize)
    }

    pub fn breakpoint_indices(&self, edge: Edge) -> &[usize] {
        match edge {
            Edge::Top => &self.top,
            Edge::Bottom => &self.bottom,
        }
    }

    pub fn breakpoints(&self, edge: Edge) -> Vec<f64> {
        self.breakpoint_indices(edge).iter().map(|&k| self.coord(k)).collect()
    }

    pub fn n_params(&self) -> usize {
        self.top.len() + self.bottom.len() - 2
    }

    /// Segments ordered top edge left to right, then bottom edge.
    pub fn segments(&self) -> Vec<Segment> {
        let mut out = Vec::with_capacity(self.n_params());
        for edge in Edge::BOTH {
            for w in self.breakpoint_indices(edge).windows(2) {
                out.push(Segment::new(edge, self.coord(w[0]), self.coord(w[1])));
            }
        }
        out
    }

    /// Edge and finest-index span of parameter `idx`.
    pub fn fine_span(&self, idx: usize) -> (Edge, usize, usize) {
        let nt = self.top.len() - 1;
        if idx < nt {
            (Edge::Top, self.top[idx], self.top[idx + 1])
        } else {
            let k = idx - nt;
            (Edge::Bottom, self.bottom[k], self.bottom[k + 1])
        }
    }

    pub fn can_bisect(&self, idx: usize) -> bool {
        let (_, a, b) = self.fine_span(idx);
        let cells = b - a;
        cells >= 2 && cells % 2 == 0
    }

    /// Inserts the midpoint of segment `idx`. Returns `None` when the segment
    /// cannot be halved on the finest grid.
    pub fn bisect(&self, idx: usize) -> Option<Subdivision> {
        if idx >= self.n_params() || !self.can_bisect(idx) {
            return None;
        }
        let (edge, a, b) = self.fine_span(idx);
        let mut out = self.clone();
        let pts = match edge {
            Edge::Top => &mut out.top,
            Edge::Bottom => &mut out.bottom,
        };
        let pos = pts.iter().position(|&k| k == b).unwrap();
        pts.insert(pos, (a + b) / 2);
        Some(out)
    }

    /// True when every breakpoint of `other` is a breakpoint of `self`.
    pub fn refines(&self, other: &Subdivision) -> bool {
        Edge::BOTH.iter().all(|&e| {
            other.breakpoint_indices(e).iter().all(|k| self.breakpoint_indices(e).contains(k))
        })
    }
}

/// Piecewise-constant control on a subdivision.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlVector {
    pub sub: Subdivision,
    pub theta: Vec<f64>,
}

/// Result of one threshold refinement pass.
#[derive(Debug, Clone)]
pub struct Refinement {
    pub control: ControlVector,
    /// `parent[new] = old` parameter index.
    pub parent: Vec<usize>,
    /// Old indices that were bisected.
    pub bisected: Vec<usize>,
}

impl ControlVector {
    pub fn new(sub: Subdivision, theta: Vec<f64>) -> Result<Self> {
        if theta.len() != sub.n_params() {
            return Err(Error::Dimension(format!("{} values for {} segments", theta.len(), sub.n_params())));
        }
        if let Some(v) = theta.iter().find(|v| !(**v >= 0.0)) {
            return Err(Error::Subdivision(format!("control values must be nonnegative, got {v}")));
        }
        Ok(ControlVector { sub, theta })
    }

    pub fn zeros(sub: Subdivision) -> Self {
        let n = sub.n_params();
        ControlVector { sub, theta: vec![0.0; n] }
    }

    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }

    /// Bisects one segment; both children inherit its value.
    pub fn bisect(&self, idx: usize) -> Option<ControlVector> {
        let sub = self.sub.bisect(idx)?;
        let mut theta = self.theta.clone();
        theta.insert(idx + 1, self.theta[idx]);
        Some(ControlVector { sub, theta })
    }

    /// Bisects segments whose value exceeds `eps1`, largest values first and
    /// at most `cap` of them.
    pub fn refine_by_threshold(&self, eps1: f64, cap: Option<usize>) -> Refinement {
        self.refine_within(eps1, cap, |_| true)
    }

    /// Like [`ControlVector::refine_by_threshold`], restricted to the indices
    /// accepted by `allowed`.
    pub fn refine_within(&self, eps1: f64, cap: Option<usize>, allowed: impl Fn(usize) -> bool) -> Refinement {
        let mut chosen: Vec<usize> =
            (0..self.len()).filter(|&i| allowed(i) && self.theta[i] > eps1 && self.sub.can_bisect(i)).collect();
        chosen.sort_by(|&a, &b| self.theta[b].total_cmp(&self.theta[a]).then(a.cmp(&b)));
        if let Some(cap) = cap {
            chosen.truncate(cap);
        }
        chosen.sort_unstable();

        let mut control = self.clone();
        let mut parent: Vec<usize> = (0..self.len()).collect();
        for &old in chosen.iter().rev() {
            control = control.bisect(old).expect("bisectable segment");
            parent.insert(old + 1, old);
        }
        Refinement { control, parent, bisected: chosen }
    }

    pub fn select_active(&self, eps2: f64) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.theta[i] > eps2).collect()
    }

    pub fn to_nodal(&self, mesh: &StructuredMesh) -> Result<NodalControl<f64>> {
        let layout = SegmentLayout::new(mesh, &self.sub.segments())?;
        Ok(layout.nodal_control(&self.theta))
    }
}

/// Assignment of mesh nodes on the horizontal edges to control segments.
#[derive(Debug, Clone)]
pub struct SegmentLayout {
    segments: Vec<Segment>,
    /// Global node indices driven by each segment.
    nodes: Vec<Vec<usize>>,
    /// Position of each driven node inside [`NodalControl`] edge vectors.
    slots: Vec<Vec<usize>>,
    upstream: Vec<usize>,
    n_nodes: usize,
    n_edge: usize,
}

impl SegmentLayout {
    /// A node at `x` belongs to the segment with `a < x <= b`, so the owner
    /// of a node depends only on the breakpoints around it and a sparse
    /// layout drives the same nodes as the matching segments of a full one.
    /// Uncovered nodes stay at zero. Every segment must own a node.
    pub fn new(mesh: &StructuredMesh, segments: &[Segment]) -> Result<Self> {
        let mut nodes = vec![Vec::new(); segments.len()];
        let mut slots = vec![Vec::new(); segments.len()];
        for edge in Edge::BOTH {
            let mut order: Vec<usize> = (0..segments.len()).filter(|&s| segments[s].edge == edge).collect();
            order.sort_by(|&p, &q| segments[p].a.total_cmp(&segments[q].a).then(p.cmp(&q)));
            for (slot, &node) in mesh.edge_nodes(edge).iter().enumerate() {
                let x = mesh.nodes()[node][0];
                let tol = GRID_TOL * mesh.hx();
                if let Some(&s) = order.iter().find(|&&s| segments[s].a + tol < x && x <= segments[s].b + tol) {
                    nodes[s].push(node);
                    slots[s].push(slot);
                }
            }
        }
        if let Some(s) = nodes.iter().position(|n| n.is_empty()) {
            let seg = segments[s];
            return Err(Error::Misaligned(format!(
                "segment [{}, {}] on the {} edge contains no mesh node (hx = {})",
                seg.a,
                seg.b,
                seg.edge.name(),
                mesh.hx()
            )));
        }
        Ok(SegmentLayout {
            segments: segments.to_vec(),
            nodes,
            slots,
            upstream: mesh.upstream_nodes(),
            n_nodes: mesh.n_nodes(),
            n_edge: mesh.nx() - 2,
        })
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn len(&self) -> usize {
        self.segments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.segments.is_empty()
    }

    pub fn nodes_of(&self, idx: usize) -> &[usize] {
        &self.nodes[idx]
    }

    pub fn n_nodes(&self) -> usize {
        self.n_nodes
    }

    /// Full Dirichlet data vector for parameter values `theta`.
    pub fn dirichlet_vector<T: Field>(&self, theta: &[T], c_up: T) -> Vec<T> {
        assert_eq!(theta.len(), self.len());
        let mut g = vec![T::zero(); self.n_nodes];
        for (s, &v) in theta.iter().enumerate() {
            for &k in &self.nodes[s] {
                g[k] = v;
            }
        }
        for &k in &self.upstream {
            g[k] = c_up;
        }
        g
    }

    pub fn nodal_control(&self, theta: &[f64]) -> NodalControl<f64> {
        let mut c = NodalControl { top: vec![0.0; self.n_edge], bottom: vec![0.0; self.n_edge] };
        for (s, &v) in theta.iter().enumerate() {
            let edge = c.edge_mut(self.segments[s].edge);
            for &slot in &self.slots[s] {
                edge[slot] = v;
            }
        }
        c
    }
}

/// A true source: constant value on `[a, b]` of one edge.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Source {
    pub edge: Edge,
    pub a: f64,
    pub b: f64,
    pub value: f64,
}

impl Source {
    pub fn segment(&self) -> Segment {
        Segment::new(self.edge, self.a, self.b)
    }
}

/// Value at `x` of the piecewise-constant function defined by segments and
/// values on one edge; overlapping segments resolve to the leftmost.
fn piecewise_value(segments: &[Segment], values: &[f64], edge: Edge, x: f64) -> f64 {
    let mut best: Option<(f64, f64)> = None;
    for (s, &v) in segments.iter().zip(values) {
        if s.edge == edge && s.a <= x && x <= s.b && best.is_none_or(|(a, _)| s.a < a) {
            best = Some((s.a, v));
        }
    }
    best.map_or(0.0, |(_, v)| v)
}

pub fn truth_value(truth: &[Source], edge: Edge, x: f64) -> f64 {
    let segs: Vec<Segment> = truth.iter().map(|s| s.segment()).collect();
    let vals: Vec<f64> = truth.iter().map(|s| s.value).collect();
    piecewise_value(&segs, &vals, edge, x)
}

/// Exact `L1` distance on one edge between the estimate (`theta` on
/// `segments`, zero elsewhere) and the true profile.
pub fn l1_error(segments: &[Segment], theta: &[f64], truth: &[Source], edge: Edge, x_range: (f64, f64)) -> f64 {
    let mut pts = vec![x_range.0, x_range.1];
    for s in segments.iter().filter(|s| s.edge == edge) {
        pts.extend([s.a, s.b]);
    }
    for s in truth.iter().filter(|s| s.edge == edge) {
        pts.extend([s.a, s.b]);
    }
    pts.retain(|&x| x >= x_range.0 && x <= x_range.1);
    pts.sort_by(f64::total_cmp);
    pts.dedup_by(|a, b| (*a - *b).abs() < 1e-14);
    pts.windows(2)
        .map(|w| {
            let xm = 0.5 * (w[0] + w[1]);
            let est = piecewise_value(segments, theta, edge, xm);
            (est - truth_value(truth, edge, xm)).abs() * (w[1] - w[0])
        })
        .sum()
}

/// Coarsest subdivision reachable from `coarse` by bisection on which the
/// true profile is constant on every segment.
pub fn optimal_subdivision(coarse: &Subdivision, truth: &[Source]) -> Result<Subdivision> {
    for s in truth {
        coarse.fine_index(s.a)?;
        coarse.fine_index(s.b)?;
    }
    let (x0, _) = coarse.x_range();
    let dx = coarse.dx();
    let cell = |edge: Edge, k: usize| truth_value(truth, edge, x0 + (k as f64 + 0.5) * dx);
    let mut sub = coarse.clone();
    loop {
        let mut split = None;
        for idx in 0..sub.n_params() {
            let (edge, a, b) = sub.fine_span(idx);
            let v = cell(edge, a);
            if (a + 1..b).any(|k| cell(edge, k) != v) {
                split = Some(idx);
                break;
            }
        }
        match split {
            None => return Ok(sub),
            Some(idx) => {
                sub = sub.bisect(idx).ok_or_else(|| {
                    Error::Subdivision("true profile is not reachable by bisection of the coarse subdivision".into())
                })?;
            }
        }
    }
}

/// Signed breakpoint-count difference per edge (top, bottom) between `sub`
/// and the optimal subdivision of the true profile.
pub fn distance_from_optimal(sub: &Subdivision, coarse: &Subdivision, truth: &[Source]) -> Result<(i64, i64)> {
    let opt = optimal_subdivision(coarse, truth)?;
    let d = |e: Edge| sub.breakpoint_indices(e).len() as i64 - opt.breakpoint_indices(e).len() as i64;
    Ok((d(Edge::Top), d(Edge::Bottom)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn coarse() -> Subdivision {
        Subdivision::uniform((0.0, 8.0), 16, 2).unwrap()
    }

    #[test]
    fn bisection_inserts_midpoint_and_stops_at_floor() {
        let s = Subdivision::from_breakpoints((0.0, 8.0), 16, &[0.0, 4.0, 5.0, 8.0], &[0.0, 8.0]).unwrap();
        let b = s.bisect(1).unwrap();
        assert_eq!(b.breakpoints(Edge::Top), vec![0.0, 4.0, 4.5, 5.0, 8.0]);
        let fine = Subdivision::finest((0.0, 8.0), 16).unwrap();
        assert!(fine.bisect(3).is_none());
        let cv = ControlVector::new(s, vec![0.0, 100.0, 0.0, 0.0]).unwrap();
        let child = cv.bisect(1).unwrap();
        assert_eq!(child.theta, vec![0.0, 100.0, 100.0, 0.0, 0.0]);
    }

    #[test]
    fn threshold_refinement() {
        let s = Subdivision::from_breakpoints((0.0, 8.0), 16, &[0.0, 2.0, 4.0, 8.0], &[0.0, 8.0]).unwrap();
        let cv = ControlVector::new(s, vec![100.0, 0.1, 50.0, 0.0]).unwrap();
        let r = cv.refine_by_threshold(0.4, None);
        assert_eq!(r.control.len(), 6);
        assert_eq!(r.bisected, vec![0, 2]);
        assert_eq!(r.parent, vec![0, 0, 1, 2, 2, 3]);
        assert_eq!(r.control.theta, vec![100.0, 100.0, 0.1, 50.0, 50.0, 0.0]);

        let capped = cv.refine_by_threshold(0.4, Some(1));
        assert_eq!(capped.bisected, vec![0]);

        let unchanged = cv.refine_by_threshold(1000.0, None);
        assert_eq!(unchanged.control, cv);

        let fine = ControlVector::new(Subdivision::finest((0.0, 8.0), 16).unwrap(), vec![5.0; 32]).unwrap();
        assert!(fine.refine_by_threshold(0.4, None).bisected.is_empty());
    }

    #[test]
    fn active_selection() {
        let cv = ControlVector::new(
            Subdivision::from_breakpoints((0.0, 8.0), 16, &[0.0, 4.0, 8.0], &[0.0, 2.0, 8.0]).unwrap(),
            vec![100.0, 0.2, 80.0, 0.0],
        )
        .unwrap();
        assert_eq!(cv.select_active(0.4), vec![0, 2]);
        assert_eq!(cv.select_active(0.0), vec![0, 1, 2]);
        assert!(ControlVector::zeros(coarse()).select_active(0.4).is_empty());
    }

    #[test]
    fn nodal_values_follow_segments() {
        let mesh = StructuredMesh::new((0.0, 8.0), (0.0, 1.0), 33, 5).unwrap();
        let layout = SegmentLayout::new(&mesh, &[Segment::new(Edge::Top, 4.0, 4.5)]).unwrap();
        let c = layout.nodal_control(&[100.0]);
        let top = mesh.edge_nodes(Edge::Top);
        for (slot, &node) in top.iter().enumerate() {
            let x = mesh.nodes()[node][0];
            let expect = if x > 4.0 && x <= 4.5 { 100.0 } else { 0.0 };
            assert_eq!(c.top[slot], expect);
        }
        assert!(c.bottom.iter().all(|&v| v == 0.0));

        // breakpoint nodes take the left segment's value
        let sub = Subdivision::from_breakpoints((0.0, 8.0), 16, &[0.0, 4.0, 8.0], &[0.0, 8.0]).unwrap();
        let cv = ControlVector::new(sub, vec![1.0, 2.0, 0.0]).unwrap();
        let c = cv.to_nodal(&mesh).unwrap();
        let at4 = top.iter().position(|&n| mesh.nodes()[n][0] == 4.0).unwrap();
        assert_eq!(c.top[at4], 1.0);
        assert_eq!(c.top[at4 + 1], 2.0);

        let coarse_mesh = StructuredMesh::new((0.0, 8.0), (0.0, 1.0), 5, 3).unwrap();
        assert!(matches!(
            SegmentLayout::new(&coarse_mesh, &[Segment::new(Edge::Top, 4.1, 4.4)]),
            Err(Error::Misaligned(_))
        ));
    }

    #[test]
    fn l1_error_is_exact_integral() {
        let truth = [Source { edge: Edge::Top, a: 4.0, b: 4.5, value: 100.0 }];
        let segs = [Segment::new(Edge::Top, 4.0, 5.0)];
        let e = l1_error(&segs, &[50.0], &truth, Edge::Top, (0.0, 8.0));
        assert!((e - (0.5 * 50.0 + 0.5 * 50.0)).abs() < 1e-12);
        assert_eq!(l1_error(&segs, &[50.0], &truth, Edge::Bottom, (0.0, 8.0)), 0.0);
        assert_eq!(l1_error(&[Segment::new(Edge::Top, 4.0, 4.5)], &[100.0], &truth, Edge::Top, (0.0, 8.0)), 0.0);
    }

    #[test]
    fn optimal_subdivision_counts() {
        let truth = [Source { edge: Edge::Top, a: 4.5, b: 5.0, value: 100.0 }];
        let opt = optimal_subdivision(&coarse(), &truth).unwrap();
        assert_eq!(opt.breakpoints(Edge::Top), vec![0.0, 4.0, 4.5, 5.0, 6.0, 8.0]);
        assert_eq!(opt.breakpoints(Edge::Bottom), vec![0.0, 4.0, 8.0]);
        assert_eq!(distance_from_optimal(&opt, &coarse(), &truth).unwrap(), (0, 0));
        let extra = opt.bisect(opt.n_params() - 1).unwrap();
        assert_eq!(distance_from_optimal(&extra, &coarse(), &truth).unwrap(), (0, 1));
        let fine = Subdivision::finest((0.0, 8.0), 16).unwrap();
        assert_eq!(distance_from_optimal(&fine, &coarse(), &truth).unwrap(), (11, 14));
        let off_grid = [Source { edge: Edge::Top, a: 4.2, b: 5.0, value: 1.0 }];
        assert!(optimal_subdivision(&coarse(), &off_grid).is_err());
    }

    proptest! {
        #[test]
        fn bisection_is_neutral_and_stays_on_the_finest_grid(
            picks in proptest::collection::vec(0usize..64, 1..16),
            values in proptest::collection::vec(0.0f64..100.0, 4),
        ) {
            let mesh = StructuredMesh::new((0.0, 8.0), (0.0, 1.0), 33, 3).unwrap();
            let finest = Subdivision::finest((0.0, 8.0), 16).unwrap();
            let mut cv = ControlVector::new(coarse(), values).unwrap();
            for p in picks {
                let Some(next) = cv.bisect(p % cv.len()) else { continue };
                prop_assert_eq!(next.to_nodal(&mesh).unwrap(), cv.to_nodal(&mesh).unwrap());
                prop_assert!(next.sub.refines(&cv.sub) && finest.refines(&next.sub));
                for edge in [Edge::Top, Edge::Bottom] {
                    let (before, after) = (cv.sub.breakpoints(edge), next.sub.breakpoints(edge));
                    prop_assert!(before.iter().all(|x| after.contains(x)));
                    prop_assert!(after.iter().all(|x| finest.breakpoints(edge).contains(x)));
                }
                cv = next;
            }
        }
    }
}
