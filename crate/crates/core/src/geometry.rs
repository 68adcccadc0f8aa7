//! Structured meshes for the model domains.
//!
//! Every mesh lives in the meridional half-plane `(xi, zeta)`, where `zeta` is the
//! symmetry axis (`x_n`) and `xi >= 0` the distance to it. Fields are nodal and
//! depend on the meridional position only; the azimuthal direction is integrated
//! out exactly in the quadrature weights.
//!
//! Node placement avoids the coordinate singularities: the radial axis of the balls
//! starts at `r = h/2` and ends on the sphere, the polar angle is cell-centred in
//! `(0, pi)`, and the cylindrical radius of the half-box starts at `s = h/2`. Each
//! node owns a control volume; the control volumes tile the domain exactly, so the
//! weights integrate constants exactly.
//!
//! Gradient stencils are local quadratic least-squares fits over the 3x3 index
//! neighbourhood. Where an axis ends on the symmetry axis (the poles `theta = 0, pi`
//! of the ball, `s = 0` of the half-box, `r = 0` of the 1-D radial ball) the missing
//! neighbour is a ghost node obtained by reflection `xi -> -xi`, carrying the value of
//! its mirror image; this is exact for axisymmetric fields, which are even in `xi`.
//! Elsewhere ends use one-sided neighbourhoods.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use std::f64::consts::PI;

use crate::error::{check_len, Error, Result};

/// Model domain of a mesh.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "type")]
pub enum DomainKind {
    /// Unit ball in `R^n` with radial fields.
    RadialBall { n: usize },
    /// Unit ball in `R^3` with fields depending on `(r, theta)`.
    AxiBall3,
    /// Cylinder `{s <= half_width, 0 <= z <= height}` in the upper half-space of
    /// `R^3`; only the face `z = 0` is a true boundary.
    AxiHalfBox { half_width: f64, height: f64 },
    /// Half ball `B(0, radius) ∩ {z > 0}` of `R^3`, used for Pohozaev-type checks.
    AxiHalfBall { radius: f64 },
}

impl DomainKind {
    /// Ambient dimension.
    pub fn dim(&self) -> usize {
        match *self {
            DomainKind::RadialBall { n } => n,
            _ => 3,
        }
    }

    /// Analytic volume.
    pub fn volume(&self) -> f64 {
        match *self {
            DomainKind::RadialBall { n } => crate::sphere_area(n - 1) / n as f64,
            DomainKind::AxiBall3 => 4.0 * PI / 3.0,
            DomainKind::AxiHalfBox { half_width, height } => PI * half_width * half_width * height,
            DomainKind::AxiHalfBall { radius } => 2.0 * PI * radius.powi(3) / 3.0,
        }
    }

    /// Analytic measure of the primary boundary.
    pub fn boundary_area(&self) -> f64 {
        match *self {
            DomainKind::RadialBall { n } => crate::sphere_area(n - 1),
            DomainKind::AxiBall3 => 4.0 * PI,
            DomainKind::AxiHalfBox { half_width, .. } => PI * half_width * half_width,
            DomainKind::AxiHalfBall { radius } => PI * radius * radius,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            DomainKind::RadialBall { n } if n < 3 => Err(Error::Config(format!("radial ball needs n >= 3, got {n}"))),
            DomainKind::AxiHalfBox { half_width, height } if !(half_width > 0.0 && height > 0.0) => {
                Err(Error::Config(format!("half-box dimensions must be positive, got L={half_width}, Hgt={height}")))
            }
            DomainKind::AxiHalfBall { radius } if !(radius > 0.0) => {
                Err(Error::Config(format!("half-ball radius must be positive, got {radius}")))
            }
            _ => Ok(()),
        }
    }
}

/// Grid sizes: `(N_r)` for radial meshes, `(N_1, N_2)` otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Resolution {
    pub n1: usize,
    pub n2: usize,
}

impl Resolution {
    pub fn radial(n: usize) -> Self {
        Resolution { n1: n, n2: 1 }
    }

    pub fn grid(n1: usize, n2: usize) -> Self {
        Resolution { n1, n2 }
    }

    fn doubled(self) -> Self {
        Resolution { n1: 2 * self.n1, n2: if self.n2 == 1 { 1 } else { 2 * self.n2 } }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum AxisEnd {
    /// Reflection symmetry about the end point.
    Mirror(f64),
    Open,
}

#[derive(Debug, Clone)]
struct Axis {
    nodes: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    step: f64,
    low: AxisEnd,
    high: AxisEnd,
}

impl Axis {
    /// Nodes at `start + (k + 1/2) h`, last node exactly on `end`.
    fn half_shifted_closed(start: f64, end: f64, n: usize, low: AxisEnd) -> Axis {
        let h = (end - start) / (n as f64 - 0.5);
        let nodes: Vec<f64> = (0..n).map(|k| start + (k as f64 + 0.5) * h).collect();
        let lo = nodes.iter().map(|&c| (c - 0.5 * h).max(start)).collect();
        let hi = nodes.iter().map(|&c| (c + 0.5 * h).min(end)).collect();
        Axis { nodes, lo, hi, step: h, low, high: AxisEnd::Open }
    }

    /// Cell-centred nodes; control volumes are the cells.
    fn cell_centred(start: f64, end: f64, n: usize, low: AxisEnd, high: AxisEnd) -> Axis {
        let h = (end - start) / n as f64;
        let nodes = (0..n).map(|k| start + (k as f64 + 0.5) * h).collect();
        let lo = (0..n).map(|k| start + k as f64 * h).collect();
        let hi = (0..n).map(|k| start + (k + 1) as f64 * h).collect();
        Axis { nodes, lo, hi, step: h, low, high }
    }

    /// Nodes on both end points.
    fn vertex_centred(start: f64, end: f64, n: usize) -> Axis {
        let h = (end - start) / (n as f64 - 1.0);
        let nodes: Vec<f64> = (0..n).map(|k| start + k as f64 * h).collect();
        let lo = nodes.iter().map(|&c| (c - 0.5 * h).max(start)).collect();
        let hi = nodes.iter().map(|&c| (c + 0.5 * h).min(end)).collect();
        Axis { nodes, lo, hi, step: h, low: AxisEnd::Open, high: AxisEnd::Open }
    }

    fn trivial() -> Axis {
        Axis { nodes: vec![0.0], lo: vec![0.0], hi: vec![0.0], step: 1.0, low: AxisEnd::Open, high: AxisEnd::Open }
    }

    fn len(&self) -> usize {
        self.nodes.len()
    }

    /// Three (source index, coordinate) samples around node `k`.
    fn neighbourhood(&self, k: usize) -> [(usize, f64); 3] {
        let n = self.len();
        let c = &self.nodes;
        if k == 0 {
            match self.low {
                AxisEnd::Mirror(m) => [(0, 2.0 * m - c[0]), (0, c[0]), (1, c[1])],
                AxisEnd::Open => [(0, c[0]), (1, c[1]), (2, c[2])],
            }
        } else if k == n - 1 {
            match self.high {
                AxisEnd::Mirror(m) => [(n - 2, c[n - 2]), (n - 1, c[n - 1]), (n - 1, 2.0 * m - c[n - 1])],
                AxisEnd::Open => [(n - 3, c[n - 3]), (n - 2, c[n - 2]), (n - 1, c[n - 1])],
            }
        } else {
            [(k - 1, c[k - 1]), (k, c[k]), (k + 1, c[k + 1])]
        }
    }

    /// Bracketing indices and linear weight of `x`, clamped to the node range.
    fn locate(&self, x: f64) -> (usize, usize, f64) {
        let n = self.len();
        if n == 1 || x <= self.nodes[0] {
            return (0, 0, 0.0);
        }
        if x >= self.nodes[n - 1] {
            return (n - 1, n - 1, 0.0);
        }
        let k = (((x - self.nodes[0]) / self.step).floor() as usize).min(n - 2);
        let t = (x - self.nodes[k]) / (self.nodes[k + 1] - self.nodes[k]);
        (k, k + 1, t.clamp(0.0, 1.0))
    }
}

/// A dual edge of the Dirichlet form: contributes `weight * (u_a - u_b)^2` to `∫|∇u|²`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

/// Nodal gradient stencil: `∂_xi u = Σ d_xi[k] u[nodes[k]]`, likewise for `zeta`.
#[derive(Debug, Clone, PartialEq)]
pub struct GradStencil {
    pub nodes: Vec<usize>,
    pub d_xi: Vec<f64>,
    pub d_zeta: Vec<f64>,
}

/// A set of boundary nodes with surface weights and outward unit normals.
#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryPart {
    pub nodes: Vec<usize>,
    pub weights: Vec<f64>,
    pub normals: Vec<[f64; 2]>,
    /// Neighbouring node one layer inside the domain.
    pub inward: Vec<usize>,
}

impl BoundaryPart {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Immutable structured mesh with quadrature weights and stencils.
#[derive(Debug, Clone)]
pub struct Mesh {
    kind: DomainKind,
    resolution: Resolution,
    axes: [Axis; 2],
    nodes: Vec<[f64; 2]>,
    volume_weights: Vec<f64>,
    boundary: BoundaryPart,
    outer: Option<BoundaryPart>,
    truncated: Vec<bool>,
    edges: Vec<Edge>,
    grad_stencils: Vec<GradStencil>,
}

/// JSON-friendly summary of a mesh.
#[derive(Debug, Clone, Serialize)]
pub struct MeshSummary {
    pub kind: DomainKind,
    pub resolution: Resolution,
    pub node_count: usize,
    pub boundary_count: usize,
    pub volume: f64,
    pub boundary_area: f64,
    pub weights_checksum: String,
}

/// Builds a mesh; every grid size must be at least 8.
pub fn build_mesh(kind: DomainKind, resolution: Resolution) -> Result<Mesh> {
    kind.validate()?;
    let radial = matches!(kind, DomainKind::RadialBall { .. });
    if resolution.n1 < 8 || (!radial && resolution.n2 < 8) {
        return Err(Error::Config(format!("resolution components must be >= 8, got ({}, {})", resolution.n1, resolution.n2)));
    }
    if radial && resolution.n2 != 1 {
        return Err(Error::Config("radial meshes take a single resolution".into()));
    }
    Ok(match kind {
        DomainKind::RadialBall { n } => build_radial(kind, resolution, n),
        DomainKind::AxiBall3 => build_polar(kind, resolution, 1.0, PI),
        DomainKind::AxiHalfBall { radius } => build_polar(kind, resolution, radius, PI / 2.0),
        DomainKind::AxiHalfBox { half_width, height } => build_box(kind, resolution, half_width, height),
    })
}

fn build_radial(kind: DomainKind, resolution: Resolution, n: usize) -> Mesh {
    let omega = crate::sphere_area(n - 1);
    let nr = resolution.n1;
    let r = Axis::half_shifted_closed(0.0, 1.0, nr, AxisEnd::Mirror(0.0));
    let nf = n as f64;
    let nodes = r.nodes.iter().map(|&x| [x, 0.0]).collect();
    let volume_weights = (0..nr).map(|i| omega * (r.hi[i].powf(nf) - r.lo[i].powf(nf)) / nf).collect();
    let edges = (0..nr - 1).map(|i| Edge { a: i, b: i + 1, weight: omega * r.hi[i].powf(nf - 1.0) / r.step }).collect();
    let boundary = BoundaryPart { nodes: vec![nr - 1], weights: vec![omega], normals: vec![[1.0, 0.0]], inward: vec![nr - 2] };
    let mut mesh = Mesh {
        kind,
        resolution,
        axes: [r, Axis::trivial()],
        nodes,
        volume_weights,
        boundary,
        outer: None,
        truncated: vec![false; nr],
        edges,
        grad_stencils: Vec::new(),
    };
    mesh.grad_stencils = (0..nr).map(|i| mesh.radial_stencil(i)).collect();
    mesh
}

/// Ball (`theta_max = pi`) or upper half ball (`theta_max = pi/2`) in polar coordinates.
fn build_polar(kind: DomainKind, resolution: Resolution, radius: f64, theta_max: f64) -> Mesh {
    let (nr, nt) = (resolution.n1, resolution.n2);
    let r = Axis::half_shifted_closed(0.0, radius, nr, AxisEnd::Open);
    let half = theta_max < PI;
    let t = if half {
        Axis::half_shifted_closed(0.0, theta_max, nt, AxisEnd::Mirror(0.0))
    } else {
        Axis::cell_centred(0.0, PI, nt, AxisEnd::Mirror(0.0), AxisEnd::Mirror(PI))
    };
    let idx = |i: usize, j: usize| i * nt + j;
    let mut nodes = Vec::with_capacity(nr * nt);
    let mut volume_weights = Vec::with_capacity(nr * nt);
    for i in 0..nr {
        for j in 0..nt {
            let (rr, th) = (r.nodes[i], t.nodes[j]);
            nodes.push([rr * th.sin(), rr * th.cos()]);
            let radial = (r.hi[i].powi(3) - r.lo[i].powi(3)) / 3.0;
            let polar = t.lo[j].cos() - t.hi[j].cos();
            volume_weights.push(2.0 * PI * radial * polar);
        }
    }
    let mut edges = Vec::new();
    for i in 0..nr {
        for j in 0..nt {
            if i + 1 < nr {
                let rf = r.hi[i];
                let polar = t.lo[j].cos() - t.hi[j].cos();
                edges.push(Edge { a: idx(i, j), b: idx(i + 1, j), weight: 2.0 * PI * rf * rf * polar / r.step });
            }
            if j + 1 < nt {
                let width = r.hi[i] - r.lo[i];
                edges.push(Edge { a: idx(i, j), b: idx(i, j + 1), weight: 2.0 * PI * width * t.hi[j].sin() / t.step });
            }
        }
    }
    let sphere = BoundaryPart {
        nodes: (0..nt).map(|j| idx(nr - 1, j)).collect(),
        weights: (0..nt).map(|j| 2.0 * PI * radius * radius * (t.lo[j].cos() - t.hi[j].cos())).collect(),
        normals: (0..nt).map(|j| [t.nodes[j].sin(), t.nodes[j].cos()]).collect(),
        inward: (0..nt).map(|j| idx(nr - 2, j)).collect(),
    };
    let (boundary, outer) = if half {
        let flat = BoundaryPart {
            nodes: (0..nr).map(|i| idx(i, nt - 1)).collect(),
            weights: (0..nr).map(|i| PI * (r.hi[i].powi(2) - r.lo[i].powi(2))).collect(),
            normals: vec![[0.0, -1.0]; nr],
            inward: (0..nr).map(|i| idx(i, nt - 2)).collect(),
        };
        (flat, Some(sphere))
    } else {
        (sphere, None)
    };
    let mut truncated = vec![false; nr * nt];
    if let Some(o) = &outer {
        for &k in &o.nodes {
            truncated[k] = true;
        }
    }
    let mut mesh = Mesh {
        kind,
        resolution,
        axes: [r, t],
        nodes,
        volume_weights,
        boundary,
        outer,
        truncated,
        edges,
        grad_stencils: Vec::new(),
    };
    mesh.grad_stencils = (0..nr * nt).map(|k| mesh.planar_stencil(k)).collect();
    mesh
}

fn build_box(kind: DomainKind, resolution: Resolution, half_width: f64, height: f64) -> Mesh {
    let (ns, nz) = (resolution.n1, resolution.n2);
    let s = Axis::cell_centred(0.0, half_width, ns, AxisEnd::Mirror(0.0), AxisEnd::Open);
    let z = Axis::vertex_centred(0.0, height, nz);
    let idx = |i: usize, k: usize| i * nz + k;
    let mut nodes = Vec::with_capacity(ns * nz);
    let mut volume_weights = Vec::with_capacity(ns * nz);
    let mut truncated = Vec::with_capacity(ns * nz);
    for i in 0..ns {
        let ring = PI * (s.hi[i].powi(2) - s.lo[i].powi(2));
        for k in 0..nz {
            nodes.push([s.nodes[i], z.nodes[k]]);
            volume_weights.push(ring * (z.hi[k] - z.lo[k]));
            truncated.push(i == ns - 1 || k == nz - 1);
        }
    }
    let mut edges = Vec::new();
    for i in 0..ns {
        let ring = PI * (s.hi[i].powi(2) - s.lo[i].powi(2));
        for k in 0..nz {
            if i + 1 < ns {
                let w = 2.0 * PI * s.hi[i] * (z.hi[k] - z.lo[k]) / s.step;
                edges.push(Edge { a: idx(i, k), b: idx(i + 1, k), weight: w });
            }
            if k + 1 < nz {
                edges.push(Edge { a: idx(i, k), b: idx(i, k + 1), weight: ring / z.step });
            }
        }
    }
    let boundary = BoundaryPart {
        nodes: (0..ns).map(|i| idx(i, 0)).collect(),
        weights: (0..ns).map(|i| PI * (s.hi[i].powi(2) - s.lo[i].powi(2))).collect(),
        normals: vec![[0.0, -1.0]; ns],
        inward: (0..ns).map(|i| idx(i, 1)).collect(),
    };
    let mut mesh = Mesh {
        kind,
        resolution,
        axes: [s, z],
        nodes,
        volume_weights,
        boundary,
        outer: None,
        truncated,
        edges,
        grad_stencils: Vec::new(),
    };
    mesh.grad_stencils = (0..ns * nz).map(|k| mesh.planar_stencil(k)).collect();
    mesh
}

impl Mesh {
    pub fn kind(&self) -> DomainKind {
        self.kind
    }

    pub fn resolution(&self) -> Resolution {
        self.resolution
    }

    pub fn dim(&self) -> usize {
        self.kind.dim()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Meridional coordinates `(xi, zeta)` of every node.
    pub fn nodes(&self) -> &[[f64; 2]] {
        &self.nodes
    }

    pub fn volume_weights(&self) -> &[f64] {
        &self.volume_weights
    }

    /// The primary boundary: sphere, bottom face, or flat face of the half ball.
    pub fn boundary(&self) -> &BoundaryPart {
        &self.boundary
    }

    /// Curved hemisphere of the half ball.
    pub fn outer(&self) -> Option<&BoundaryPart> {
        self.outer.as_ref()
    }

    /// Nodes excluded from residual norms: the artificial faces of the half-box and
    /// the hemisphere of the half ball.
    pub fn truncated(&self) -> &[bool] {
        &self.truncated
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn grad_stencils(&self) -> &[GradStencil] {
        &self.grad_stencils
    }

    /// Smallest grid spacing in physical length.
    pub fn min_spacing(&self) -> f64 {
        match self.kind {
            DomainKind::RadialBall { .. } => self.axes[0].step,
            DomainKind::AxiBall3 | DomainKind::AxiHalfBall { .. } => {
                let r_max = self.axes[0].nodes[self.axes[0].len() - 1];
                self.axes[0].step.min(r_max * self.axes[1].step)
            }
            DomainKind::AxiHalfBox { .. } => self.axes[0].step.min(self.axes[1].step),
        }
    }

    /// Largest grid spacing in physical length.
    pub fn max_spacing(&self) -> f64 {
        match self.kind {
            DomainKind::RadialBall { .. } => self.axes[0].step,
            DomainKind::AxiBall3 | DomainKind::AxiHalfBall { .. } => {
                let r_max = self.axes[0].nodes[self.axes[0].len() - 1];
                self.axes[0].step.max(r_max * self.axes[1].step)
            }
            DomainKind::AxiHalfBox { .. } => self.axes[0].step.max(self.axes[1].step),
        }
    }

    /// Node index of grid position `(i, j)`.
    pub fn index(&self, i: usize, j: usize) -> usize {
        i * self.axes[1].len() + j
    }

    /// Evaluates a function of the meridional position at every node.
    pub fn sample<F: Fn([f64; 2]) -> f64>(&self, f: F) -> Vec<f64> {
        self.nodes.iter().map(|&p| f(p)).collect()
    }

    /// Evaluates a function at every node of the primary boundary.
    pub fn sample_boundary<F: Fn([f64; 2]) -> f64>(&self, f: F) -> Vec<f64> {
        self.boundary.nodes.iter().map(|&k| f(self.nodes[k])).collect()
    }

    /// Restricts a nodal field to the primary boundary.
    pub fn trace(&self, f: &[f64]) -> Vec<f64> {
        self.boundary.nodes.iter().map(|&k| f[k]).collect()
    }

    pub fn summary(&self) -> MeshSummary {
        let mut hash = Fnv::new();
        for w in self.volume_weights.iter().chain(&self.boundary.weights) {
            hash.write(&w.to_bits().to_le_bytes());
        }
        MeshSummary {
            kind: self.kind,
            resolution: self.resolution,
            node_count: self.len(),
            boundary_count: self.boundary.len(),
            volume: pairwise_sum(&self.volume_weights),
            boundary_area: pairwise_sum(&self.boundary.weights),
            weights_checksum: format!("{:016x}", hash.finish()),
        }
    }

    /// Whether a meridional point lies in the closed domain.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        const EPS: f64 = 1e-12;
        let (xi, zeta) = (p[0].abs(), p[1]);
        match self.kind {
            DomainKind::RadialBall { .. } | DomainKind::AxiBall3 => xi.hypot(zeta) <= 1.0 + EPS,
            DomainKind::AxiHalfBall { radius } => xi.hypot(zeta) <= radius + EPS && zeta >= -EPS,
            DomainKind::AxiHalfBox { half_width, height } => xi <= half_width + EPS && zeta >= -EPS && zeta <= height + EPS,
        }
    }

    fn grid_coords(&self, p: [f64; 2]) -> (f64, f64) {
        let xi = p[0].abs();
        match self.kind {
            DomainKind::RadialBall { .. } => (xi.hypot(p[1]), 0.0),
            DomainKind::AxiBall3 | DomainKind::AxiHalfBall { .. } => (xi.hypot(p[1]), xi.atan2(p[1])),
            DomainKind::AxiHalfBox { .. } => (xi, p[1]),
        }
    }

    /// Bilinear interpolation in grid coordinates; `None` outside the domain.
    pub fn interpolate(&self, f: &[f64], p: [f64; 2]) -> Option<f64> {
        if !self.contains(p) {
            return None;
        }
        let (c1, c2) = self.grid_coords(p);
        let (i0, i1, t) = self.axes[0].locate(c1);
        let (j0, j1, s) = self.axes[1].locate(c2);
        let v = |i, j| f[self.index(i, j)];
        Some((1.0 - t) * ((1.0 - s) * v(i0, j0) + s * v(i0, j1)) + t * ((1.0 - s) * v(i1, j0) + s * v(i1, j1)))
    }

    /// Interpolation at a point of `R^3` for axisymmetric fields (or `R^n`, radial).
    pub fn interpolate_3d(&self, f: &[f64], x: [f64; 3]) -> Option<f64> {
        self.interpolate(f, [x[0].hypot(x[1]), x[2]])
    }

    /// Same mesh with every grid size doubled.
    pub fn refine(&self) -> Mesh {
        build_mesh(self.kind, self.resolution.doubled()).expect("refining a valid mesh")
    }

    fn radial_stencil(&self, i: usize) -> GradStencil {
        let pts = self.axes[0].neighbourhood(i);
        let x0 = self.axes[0].nodes[i];
        let h = self.axes[0].step;
        let rows: Vec<Vec<f64>> = pts
            .iter()
            .map(|&(_, c)| {
                let d = (c - x0) / h;
                vec![1.0, d, d * d]
            })
            .collect();
        let coeff = least_squares_rows(&rows, 1);
        let mut st = GradStencil { nodes: Vec::new(), d_xi: Vec::new(), d_zeta: Vec::new() };
        for (k, &(src, _)) in pts.iter().enumerate() {
            push_merged(&mut st, src, coeff[0][k] / h, 0.0);
        }
        st
    }

    fn planar_stencil(&self, node: usize) -> GradStencil {
        let n2 = self.axes[1].len();
        let (i, j) = (node / n2, node % n2);
        let a = self.axes[0].neighbourhood(i);
        let b = self.axes[1].neighbourhood(j);
        let p0 = self.nodes[node];
        let scale = self.axes[0].step.max(self.axes[1].step * self.axes[0].nodes[i].max(0.0)).max(1e-300);
        let scale = match self.kind {
            DomainKind::AxiHalfBox { .. } => self.axes[0].step.max(self.axes[1].step),
            _ => scale,
        };
        let mut rows = Vec::with_capacity(9);
        let mut srcs = Vec::with_capacity(9);
        for &(ia, ca) in &a {
            for &(jb, cb) in &b {
                let p = self.to_meridional(ca, cb);
                let dx = (p[0] - p0[0]) / scale;
                let dy = (p[1] - p0[1]) / scale;
                rows.push(vec![1.0, dx, dy, dx * dx, dx * dy, dy * dy]);
                srcs.push(ia * n2 + jb);
            }
        }
        let coeff = least_squares_rows(&rows, 2);
        let mut st = GradStencil { nodes: Vec::new(), d_xi: Vec::new(), d_zeta: Vec::new() };
        for (k, &src) in srcs.iter().enumerate() {
            push_merged(&mut st, src, coeff[0][k] / scale, coeff[1][k] / scale);
        }
        st
    }

    fn to_meridional(&self, c1: f64, c2: f64) -> [f64; 2] {
        match self.kind {
            DomainKind::RadialBall { .. } => [c1, 0.0],
            DomainKind::AxiBall3 | DomainKind::AxiHalfBall { .. } => [c1 * c2.sin(), c1 * c2.cos()],
            DomainKind::AxiHalfBox { .. } => [c1, c2],
        }
    }

    /// Derivative along the primary boundary with respect to arc length.
    ///
    /// Ends on the symmetry axis use the mirror ghost; other ends are one-sided.
    pub fn tangential_derivative(&self, f: &[f64]) -> Result<Vec<f64>> {
        check_len(self.boundary.len(), f.len())?;
        let (h, low_mirror, high_mirror) = match self.kind {
            DomainKind::RadialBall { .. } => return Ok(vec![0.0; f.len()]),
            DomainKind::AxiBall3 => (self.axes[1].step, true, true),
            DomainKind::AxiHalfBox { .. } => (self.axes[0].step, true, false),
            DomainKind::AxiHalfBall { .. } => (self.axes[0].step, true, false),
        };
        let n = f.len();
        let mut d = vec![0.0; n];
        for k in 0..n {
            d[k] = if k == 0 {
                if low_mirror {
                    (f[1] - f[0]) / (2.0 * h)
                } else {
                    (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * h)
                }
            } else if k == n - 1 {
                if high_mirror {
                    (f[n - 1] - f[n - 2]) / (2.0 * h)
                } else {
                    (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * h)
                }
            } else {
                (f[k + 1] - f[k - 1]) / (2.0 * h)
            };
        }
        Ok(d)
    }

    /// Polar angle / radial coordinate of each primary-boundary node along the boundary.
    pub fn boundary_parameter(&self) -> Vec<f64> {
        match self.kind {
            DomainKind::RadialBall { .. } => vec![0.0],
            DomainKind::AxiBall3 => self.axes[1].nodes.clone(),
            DomainKind::AxiHalfBox { .. } | DomainKind::AxiHalfBall { .. } => self.axes[0].nodes.clone(),
        }
    }

    /// Grid coordinates of the first axis (`r`, `rho` or `s`).
    pub fn axis1(&self) -> &[f64] {
        &self.axes[0].nodes
    }

    /// Grid coordinates of the second axis (`theta` or `z`); a single zero for radial meshes.
    pub fn axis2(&self) -> &[f64] {
        &self.axes[1].nodes
    }

    /// Control interval `[lo, hi]` of node `i` along the first axis.
    pub fn axis1_cell(&self, i: usize) -> (f64, f64) {
        (self.axes[0].lo[i], self.axes[0].hi[i])
    }

    /// Control interval `[lo, hi]` of node `j` along the second axis.
    pub fn axis2_cell(&self, j: usize) -> (f64, f64) {
        (self.axes[1].lo[j], self.axes[1].hi[j])
    }
}

fn push_merged(st: &mut GradStencil, src: usize, cx: f64, cz: f64) {
    if let Some(pos) = st.nodes.iter().position(|&s| s == src) {
        st.d_xi[pos] += cx;
        st.d_zeta[pos] += cz;
    } else {
        st.nodes.push(src);
        st.d_xi.push(cx);
        st.d_zeta.push(cz);
    }
}

/// Rows `1..=count` of the least-squares pseudo-inverse of the design matrix.
fn least_squares_rows(rows: &[Vec<f64>], count: usize) -> Vec<Vec<f64>> {
    let m = rows.len();
    let p = rows[0].len();
    let a = DMatrix::from_fn(m, p, |i, j| rows[i][j]);
    let ata = a.transpose() * &a;
    let lu = ata.lu();
    (1..=count)
        .map(|row| {
            let mut e = DVector::zeros(p);
            e[row] = 1.0;
            // (A^T A)^{-1} is symmetric, so row `row` of (A^T A)^{-1} A^T is A (A^T A)^{-1} e_row.
            let y = lu.solve(&e).expect("least-squares design matrix is nonsingular");
            (&a * y).iter().copied().collect()
        })
        .collect()
}

/// Sum in a fixed pairwise order.
pub fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        n if n <= 16 => values.iter().sum(),
        n => pairwise_sum(&values[..n / 2]) + pairwise_sum(&values[n / 2..]),
    }
}

fn weighted_sum(weights: &[f64], f: &[f64]) -> f64 {
    let prod: Vec<f64> = weights.iter().zip(f).map(|(w, v)| w * v).collect();
    pairwise_sum(&prod)
}

/// `∫_M f`.
pub fn volume_integral(mesh: &Mesh, f: &[f64]) -> Result<f64> {
    check_len(mesh.len(), f.len())?;
    Ok(weighted_sum(&mesh.volume_weights, f))
}

/// `∫_{∂M} f` over the primary boundary; `f` is indexed by boundary node.
pub fn surface_integral(mesh: &Mesh, f: &[f64]) -> Result<f64> {
    check_len(mesh.boundary.len(), f.len())?;
    Ok(weighted_sum(&mesh.boundary.weights, f))
}

/// `∫` over the curved hemisphere of a half-ball mesh; `f` is indexed by outer node.
pub fn outer_integral(mesh: &Mesh, f: &[f64]) -> Result<f64> {
    let outer = mesh.outer.as_ref().ok_or_else(|| Error::Domain("mesh has no curved outer boundary".into()))?;
    check_len(outer.len(), f.len())?;
    Ok(weighted_sum(&outer.weights, f))
}

/// Nodal gradient `(∂_xi f, ∂_zeta f)` from the least-squares stencils.
pub fn gradient(mesh: &Mesh, f: &[f64]) -> Result<Vec<[f64; 2]>> {
    check_len(mesh.len(), f.len())?;
    Ok(mesh
        .grad_stencils
        .iter()
        .map(|st| {
            let mut g = [0.0; 2];
            for (k, &src) in st.nodes.iter().enumerate() {
                g[0] += st.d_xi[k] * f[src];
                g[1] += st.d_zeta[k] * f[src];
            }
            g
        })
        .collect())
}

/// Refines a mesh by doubling each grid size.
pub fn refine(mesh: &Mesh) -> Mesh {
    mesh.refine()
}

struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }

    fn write(&mut self, bytes: &[u8]) {
        for &b in bytes {
            self.0 ^= b as u64;
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }

    fn finish(&self) -> u64 {
        self.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ball(nr: usize, nt: usize) -> Mesh {
        build_mesh(DomainKind::AxiBall3, Resolution::grid(nr, nt)).unwrap()
    }

    #[test]
    fn ball_volume_and_area_exact() {
        let m = ball(64, 64);
        let s = m.summary();
        assert!((s.volume - 4.0 * PI / 3.0).abs() < 1e-12);
        assert!((s.boundary_area - 4.0 * PI).abs() < 1e-12);
        let r = build_mesh(DomainKind::RadialBall { n: 3 }, Resolution::radial(64)).unwrap();
        assert!((r.summary().volume - 4.0 * PI / 3.0).abs() < 1e-12);
        let r5 = build_mesh(DomainKind::RadialBall { n: 5 }, Resolution::radial(16)).unwrap();
        assert!((r5.summary().volume - DomainKind::RadialBall { n: 5 }.volume()).abs() < 1e-12);
    }

    #[test]
    fn half_box_bottom_area() {
        let m = build_mesh(DomainKind::AxiHalfBox { half_width: 4.0, height: 4.0 }, Resolution::grid(64, 64)).unwrap();
        let area = surface_integral(&m, &vec![1.0; m.boundary().len()]).unwrap();
        assert!((area - 16.0 * PI).abs() < 1e-10);
        assert!((m.summary().volume - 64.0 * PI).abs() < 1e-9);
    }

    #[test]
    fn half_ball_parts() {
        let m = build_mesh(DomainKind::AxiHalfBall { radius: 2.0 }, Resolution::grid(16, 16)).unwrap();
        assert!((m.summary().volume - 16.0 * PI / 3.0).abs() < 1e-12);
        assert!((m.summary().boundary_area - 4.0 * PI).abs() < 1e-12);
        let outer = outer_integral(&m, &vec![1.0; m.outer().unwrap().len()]).unwrap();
        assert!((outer - 8.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(matches!(build_mesh(DomainKind::AxiBall3, Resolution::grid(4, 64)), Err(Error::Config(_))));
        assert!(matches!(
            build_mesh(DomainKind::AxiHalfBox { half_width: 0.0, height: 1.0 }, Resolution::grid(16, 16)),
            Err(Error::Config(_))
        ));
        assert!(matches!(build_mesh(DomainKind::RadialBall { n: 2 }, Resolution::radial(16)), Err(Error::Config(_))));
    }

    #[test]
    fn normals_are_unit() {
        for m in [
            ball(16, 16),
            build_mesh(DomainKind::AxiHalfBall { radius: 1.0 }, Resolution::grid(16, 16)).unwrap(),
            build_mesh(DomainKind::AxiHalfBox { half_width: 1.0, height: 1.0 }, Resolution::grid(16, 16)).unwrap(),
        ] {
            for nrm in m.boundary().normals.iter().chain(m.outer().map(|o| o.normals.iter()).into_iter().flatten()) {
                assert!((nrm[0].hypot(nrm[1]) - 1.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linear_gradients_exact() {
        for m in [
            ball(16, 16),
            build_mesh(DomainKind::AxiHalfBall { radius: 1.5 }, Resolution::grid(12, 12)).unwrap(),
            build_mesh(DomainKind::AxiHalfBox { half_width: 2.0, height: 1.0 }, Resolution::grid(12, 9)).unwrap(),
        ] {
            let z = m.sample(|p| p[1]);
            let gz = gradient(&m, &z).unwrap();
            for g in &gz {
                assert!(g[0].abs() < 1e-10 && (g[1] - 1.0).abs() < 1e-10, "{g:?}");
            }
            // xi is odd across the axis; the mirror ghost is only exact away from it.
            let x = m.sample(|p| p[0]);
            let gx = gradient(&m, &x).unwrap();
            for (k, g) in gx.iter().enumerate() {
                let (_, j) = (k / m.axis2().len(), k % m.axis2().len());
                let near_axis = match m.kind() {
                    DomainKind::AxiHalfBox { .. } => k / m.axis2().len() == 0,
                    DomainKind::AxiBall3 => j == 0 || j == m.axis2().len() - 1,
                    _ => j == 0,
                };
                if !near_axis {
                    assert!((g[0] - 1.0).abs() < 1e-10 && g[1].abs() < 1e-10, "{k} {g:?}");
                }
            }
        }
    }

    #[test]
    fn radial_gradient_second_order() {
        let err = |n| {
            let m = build_mesh(DomainKind::RadialBall { n: 3 }, Resolution::radial(n)).unwrap();
            let f = m.sample(|p| p[0] * p[0]);
            let g = gradient(&m, &f).unwrap();
            m.nodes().iter().zip(&g).map(|(p, g)| (g[0] - 2.0 * p[0]).abs()).fold(0.0, f64::max)
        };
        // |x|^2 is even and quadratic: reproduced up to rounding.
        assert!(err(32) < 1e-10);
    }

    #[test]
    fn constants_have_zero_gradient() {
        let m = ball(16, 16);
        for g in gradient(&m, &vec![3.5; m.len()]).unwrap() {
            assert!(g[0].abs() < 1e-9 && g[1].abs() < 1e-9);
        }
    }

    #[test]
    fn moments_converge_second_order() {
        let err = |n| {
            let m = ball(n, n);
            let f = m.sample(|p| p[1] * p[1]);
            (volume_integral(&m, &f).unwrap() - 4.0 * PI / 15.0).abs()
        };
        let ratio = err(32) / err(64);
        assert!((ratio - 4.0).abs() < 0.6, "ratio {ratio}");
        let m = ball(64, 64);
        let c = m.sample_boundary(|p| p[1]);
        assert!(surface_integral(&m, &c).unwrap().abs() < 1e-12);
        let c2 = m.sample_boundary(|p| p[1] * p[1]);
        assert!((surface_integral(&m, &c2).unwrap() - 4.0 * PI / 3.0).abs() < 1e-3);
    }

    #[test]
    fn integration_by_parts_residual_converges() {
        // f = zeta, g = exp(-(xi^2 + zeta^2)) on the ball: ∫ g ∂_z f + f ∂_z g = ∫_{∂} f g n_z.
        let res = |n| {
            let m = ball(n, n);
            let f = m.sample(|p| p[1]);
            let g = m.sample(|p| (-(p[0] * p[0] + p[1] * p[1])).exp());
            let gf = gradient(&m, &f).unwrap();
            let gg = gradient(&m, &g).unwrap();
            let lhs: Vec<f64> = (0..m.len()).map(|k| g[k] * gf[k][1] + f[k] * gg[k][1]).collect();
            let b = &m.boundary();
            let rhs: Vec<f64> = (0..b.len()).map(|q| f[b.nodes[q]] * g[b.nodes[q]] * b.normals[q][1]).collect();
            (volume_integral(&m, &lhs).unwrap() - surface_integral(&m, &rhs).unwrap()).abs()
        };
        let (a, b) = (res(32), res(64));
        assert!(a / b > 3.0, "{a} {b}");
    }

    #[test]
    fn refine_doubles() {
        let m = build_mesh(DomainKind::RadialBall { n: 3 }, Resolution::radial(32)).unwrap();
        assert_eq!(m.refine().resolution(), Resolution::radial(64));
        assert_eq!(ball(32, 32).refine().resolution(), Resolution::grid(64, 64));
    }

    #[test]
    fn deterministic_construction() {
        assert_eq!(ball(20, 24).summary().weights_checksum, ball(20, 24).summary().weights_checksum);
    }

    #[test]
    fn interpolation_reproduces_bilinear_data() {
        let m = build_mesh(DomainKind::AxiHalfBox { half_width: 2.0, height: 2.0 }, Resolution::grid(16, 17)).unwrap();
        let f = m.sample(|p| 1.0 + 2.0 * p[0] + 3.0 * p[1]);
        let v = m.interpolate(&f, [0.7, 1.3]).unwrap();
        assert!((v - (1.0 + 1.4 + 3.9)).abs() < 1e-12);
        assert!(m.interpolate(&f, [0.5, 2.5]).is_none());
    }
}
