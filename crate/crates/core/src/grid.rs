//! Convex domains, Dirichlet data, uniform grids and the finite-difference
//! calculus shared by the solver and the diagnostics.
//!
//! Fields live on an `n x n` Cartesian grid covering the bounding box of the
//! domain. Every node carries a [`NodeKind`]: interior nodes lie strictly
//! inside the domain, boundary nodes are the non-interior nodes touching an
//! interior node (they hold extrapolated Dirichlet data), everything else is
//! exterior and never read by the stencils below.

use std::f64::consts::PI;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MIN_NODES: usize = 16;
pub const DEFAULT_GRADIENT_FLOOR: f64 = 1e-6;

/// Geometric description of a convex domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DomainShape {
    Disk { center: [f64; 2], radius: f64 },
    Ellipse { center: [f64; 2], radii: [f64; 2] },
    Polygon { vertices: Vec<[f64; 2]> },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl BoundingBox {
    pub fn width(&self) -> f64 {
        self.max[0] - self.min[0]
    }

    pub fn height(&self) -> f64 {
        self.max[1] - self.min[1]
    }
}

/// A validated convex domain. Polygons are stored counter-clockwise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "DomainShape", into = "DomainShape")]
pub struct ConvexDomain {
    shape: DomainShape,
    bbox: BoundingBox,
}

impl TryFrom<DomainShape> for ConvexDomain {
    type Error = Error;

    fn try_from(shape: DomainShape) -> Result<Self> {
        match shape {
            DomainShape::Disk { center, radius } => Self::disk(center, radius),
            DomainShape::Ellipse { center, radii } => Self::ellipse(center, radii[0], radii[1]),
            DomainShape::Polygon { vertices } => Self::polygon(vertices),
        }
    }
}

impl From<ConvexDomain> for DomainShape {
    fn from(d: ConvexDomain) -> Self {
        d.shape
    }
}

fn cross(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

fn sub(a: [f64; 2], b: [f64; 2]) -> [f64; 2] {
    [a[0] - b[0], a[1] - b[1]]
}

fn norm(a: [f64; 2]) -> f64 {
    a[0].hypot(a[1])
}

impl ConvexDomain {
    pub fn disk(center: [f64; 2], radius: f64) -> Result<Self> {
        if !(radius > 0.0 && radius.is_finite()) {
            return Err(Error::DegenerateDomain(format!("disk radius {radius}")));
        }
        Ok(Self {
            shape: DomainShape::Disk { center, radius },
            bbox: BoundingBox {
                min: [center[0] - radius, center[1] - radius],
                max: [center[0] + radius, center[1] + radius],
            },
        })
    }

    pub fn ellipse(center: [f64; 2], a: f64, b: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
            return Err(Error::DegenerateDomain(format!("ellipse radii ({a}, {b})")));
        }
        Ok(Self {
            shape: DomainShape::Ellipse {
                center,
                radii: [a, b],
            },
            bbox: BoundingBox {
                min: [center[0] - a, center[1] - b],
                max: [center[0] + a, center[1] + b],
            },
        })
    }

    /// Builds a polygon, checking the convexity certificate: the cross
    /// products of consecutive edges must all share one sign.
    pub fn polygon(mut vertices: Vec<[f64; 2]>) -> Result<Self> {
        let m = vertices.len();
        if m < 3 {
            return Err(Error::DegenerateDomain(format!("polygon with {m} vertices")));
        }
        let mut sign = 0.0f64;
        for k in 0..m {
            let e0 = sub(vertices[(k + 1) % m], vertices[k]);
            let e1 = sub(vertices[(k + 2) % m], vertices[(k + 1) % m]);
            let c = cross(e0, e1);
            if c == 0.0 {
                continue;
            }
            if sign == 0.0 {
                sign = c.signum();
            } else if c.signum() != sign {
                return Err(Error::NotConvex { edge: (k + 1) % m });
            }
        }
        let area2: f64 = (0..m)
            .map(|k| cross(vertices[k], vertices[(k + 1) % m]))
            .sum();
        if area2.abs() < 1e-14 {
            return Err(Error::DegenerateDomain("polygon has zero area".into()));
        }
        if area2 < 0.0 {
            vertices.reverse();
        }
        let mut min = [f64::INFINITY; 2];
        let mut max = [f64::NEG_INFINITY; 2];
        for v in &vertices {
            for a in 0..2 {
                min[a] = min[a].min(v[a]);
                max[a] = max[a].max(v[a]);
            }
        }
        Ok(Self {
            shape: DomainShape::Polygon { vertices },
            bbox: BoundingBox { min, max },
        })
    }

    pub fn shape(&self) -> &DomainShape {
        &self.shape
    }

    pub fn bbox(&self) -> BoundingBox {
        self.bbox
    }

    pub fn area(&self) -> f64 {
        match &self.shape {
            DomainShape::Disk { radius, .. } => PI * radius * radius,
            DomainShape::Ellipse { radii, .. } => PI * radii[0] * radii[1],
            DomainShape::Polygon { vertices } => {
                let m = vertices.len();
                0.5 * (0..m)
                    .map(|k| cross(vertices[k], vertices[(k + 1) % m]))
                    .sum::<f64>()
            }
        }
    }

    /// Characteristic length used to scale geometric tolerances.
    pub fn scale(&self) -> f64 {
        self.bbox.width().max(self.bbox.height())
    }

    /// Negative inside, zero on the boundary, positive outside. Exact signed
    /// distance for disks and polygons, a normalized level function for
    /// ellipses.
    pub fn level(&self, p: [f64; 2]) -> f64 {
        match &self.shape {
            DomainShape::Disk { center, radius } => norm(sub(p, *center)) - radius,
            DomainShape::Ellipse { center, radii } => {
                let d = sub(p, *center);
                ((d[0] / radii[0]).hypot(d[1] / radii[1]) - 1.0) * radii[0].min(radii[1])
            }
            DomainShape::Polygon { vertices } => {
                let m = vertices.len();
                (0..m)
                    .map(|k| {
                        let e = sub(vertices[(k + 1) % m], vertices[k]);
                        let len = norm(e);
                        // outward normal of a ccw polygon
                        let nrm = [e[1] / len, -e[0] / len];
                        nrm[0] * (p[0] - vertices[k][0]) + nrm[1] * (p[1] - vertices[k][1])
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            }
        }
    }

    pub fn contains(&self, p: [f64; 2]) -> bool {
        self.level(p) < -1e-12 * self.scale()
    }

    /// Distance along the unit direction `dir` from the interior point `p`
    /// to the boundary.
    pub fn ray_exit(&self, p: [f64; 2], dir: [f64; 2]) -> f64 {
        match &self.shape {
            DomainShape::Disk { center, radius } => {
                let d = sub(p, *center);
                let b = d[0] * dir[0] + d[1] * dir[1];
                let c = d[0] * d[0] + d[1] * d[1] - radius * radius;
                -b + (b * b - c).max(0.0).sqrt()
            }
            DomainShape::Ellipse { center, radii } => {
                let d = [(p[0] - center[0]) / radii[0], (p[1] - center[1]) / radii[1]];
                let v = [dir[0] / radii[0], dir[1] / radii[1]];
                let a = v[0] * v[0] + v[1] * v[1];
                let b = d[0] * v[0] + d[1] * v[1];
                let c = d[0] * d[0] + d[1] * d[1] - 1.0;
                (-b + (b * b - a * c).max(0.0).sqrt()) / a
            }
            DomainShape::Polygon { vertices } => {
                let m = vertices.len();
                let mut best = f64::INFINITY;
                for k in 0..m {
                    let e = sub(vertices[(k + 1) % m], vertices[k]);
                    let nrm = [e[1], -e[0]];
                    let den = nrm[0] * dir[0] + nrm[1] * dir[1];
                    if den > 0.0 {
                        let t = (nrm[0] * (vertices[k][0] - p[0]) + nrm[1] * (vertices[k][1] - p[1]))
                            / den;
                        best = best.min(t.max(0.0));
                    }
                }
                best
            }
        }
    }

    /// Periodic boundary parameter in `[0, 1)` of the boundary point closest
    /// to (or radially associated with) `p`.
    pub fn boundary_param(&self, p: [f64; 2]) -> f64 {
        let wrap = |s: f64| s.rem_euclid(1.0);
        match &self.shape {
            DomainShape::Disk { center, .. } => {
                let d = sub(p, *center);
                wrap(d[1].atan2(d[0]) / (2.0 * PI))
            }
            DomainShape::Ellipse { center, radii } => {
                let d = sub(p, *center);
                wrap((d[1] / radii[1]).atan2(d[0] / radii[0]) / (2.0 * PI))
            }
            DomainShape::Polygon { vertices } => {
                let m = vertices.len();
                let lens: Vec<f64> = (0..m)
                    .map(|k| norm(sub(vertices[(k + 1) % m], vertices[k])))
                    .collect();
                let perimeter: f64 = lens.iter().sum();
                let mut best = (f64::INFINITY, 0.0);
                let mut acc = 0.0;
                for k in 0..m {
                    let a = vertices[k];
                    let e = sub(vertices[(k + 1) % m], a);
                    let t = (((p[0] - a[0]) * e[0] + (p[1] - a[1]) * e[1]) / (lens[k] * lens[k]))
                        .clamp(0.0, 1.0);
                    let q = [a[0] + t * e[0], a[1] + t * e[1]];
                    let dist = norm(sub(p, q));
                    if dist < best.0 {
                        best = (dist, (acc + t * lens[k]) / perimeter);
                    }
                    acc += lens[k];
                }
                wrap(best.1)
            }
        }
    }

    /// Inverse of [`Self::boundary_param`].
    pub fn boundary_point(&self, s: f64) -> [f64; 2] {
        let s = s.rem_euclid(1.0);
        match &self.shape {
            DomainShape::Disk { center, radius } => {
                let a = 2.0 * PI * s;
                [center[0] + radius * a.cos(), center[1] + radius * a.sin()]
            }
            DomainShape::Ellipse { center, radii } => {
                let a = 2.0 * PI * s;
                [center[0] + radii[0] * a.cos(), center[1] + radii[1] * a.sin()]
            }
            DomainShape::Polygon { vertices } => {
                let m = vertices.len();
                let lens: Vec<f64> = (0..m)
                    .map(|k| norm(sub(vertices[(k + 1) % m], vertices[k])))
                    .collect();
                let mut target = s * lens.iter().sum::<f64>();
                for k in 0..m {
                    if target <= lens[k] || k == m - 1 {
                        let t = (target / lens[k]).clamp(0.0, 1.0);
                        let a = vertices[k];
                        let b = vertices[(k + 1) % m];
                        return [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
                    }
                    target -= lens[k];
                }
                vertices[0]
            }
        }
    }

    /// Largest distance from the origin to a point of the closed domain.
    pub fn max_radius(&self) -> f64 {
        match &self.shape {
            DomainShape::Disk { center, radius } => norm(*center) + radius,
            DomainShape::Polygon { vertices } => {
                vertices.iter().map(|v| norm(*v)).fold(0.0, f64::max)
            }
            DomainShape::Ellipse { .. } => (0..4096)
                .map(|k| norm(self.boundary_point(k as f64 / 4096.0)))
                .fold(0.0, f64::max),
        }
    }

    /// Whether the domain sits inside the open ball of the given radius about
    /// the origin. With `radius = 1` this is the normalization `Omega ⊂ B_1`.
    pub fn within_ball(&self, radius: f64) -> bool {
        self.max_radius() < radius
    }
}

/// Positive Dirichlet data sampled along the boundary parameter.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryData {
    domain: ConvexDomain,
    params: Vec<f64>,
    values: Vec<f64>,
}

impl BoundaryData {
    pub fn constant(domain: &ConvexDomain, value: f64) -> Result<Self> {
        Self::from_table(domain, vec![(0.0, value)])
    }

    /// Samples `value_at` at `m` equally spaced boundary parameters.
    pub fn sampled(
        domain: &ConvexDomain,
        m: usize,
        mut value_at: impl FnMut([f64; 2]) -> f64,
    ) -> Result<Self> {
        let m = m.max(1);
        let table = (0..m)
            .map(|k| {
                let s = k as f64 / m as f64;
                (s, value_at(domain.boundary_point(s)))
            })
            .collect();
        Self::from_table(domain, table)
    }

    /// Builds data from `(parameter, value)` pairs; parameters are wrapped into
    /// `[0, 1)` and interpolated periodically.
    pub fn from_table(domain: &ConvexDomain, mut table: Vec<(f64, f64)>) -> Result<Self> {
        if table.is_empty() {
            return Err(Error::param("boundary", "empty boundary table"));
        }
        for (index, &(_, value)) in table.iter().enumerate() {
            if !(value > 0.0 && value.is_finite()) {
                return Err(Error::NonPositiveBoundary { index, value });
            }
        }
        for entry in table.iter_mut() {
            entry.0 = entry.0.rem_euclid(1.0);
        }
        table.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (params, values) = table.into_iter().unzip();
        Ok(Self {
            domain: domain.clone(),
            params,
            values,
        })
    }

    pub fn domain(&self) -> &ConvexDomain {
        &self.domain
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn eval_param(&self, s: f64) -> f64 {
        let m = self.params.len();
        if m == 1 {
            return self.values[0];
        }
        let s = s.rem_euclid(1.0);
        let hi = self.params.partition_point(|&t| t <= s);
        let (i0, i1) = if hi == 0 || hi == m { (m - 1, 0) } else { (hi - 1, hi) };
        let (t0, mut t1) = (self.params[i0], self.params[i1]);
        let mut ss = s;
        if t1 <= t0 {
            t1 += 1.0;
            if ss < t0 {
                ss += 1.0;
            }
        }
        let w = if t1 > t0 { (ss - t0) / (t1 - t0) } else { 0.0 };
        (1.0 - w) * self.values[i0] + w * self.values[i1]
    }

    /// Dirichlet value associated with a point on (or near) the boundary.
    pub fn eval(&self, p: [f64; 2]) -> f64 {
        self.eval_param(self.domain.boundary_param(p))
    }

    /// Pressure trace `q^{2/3} phi^{1/q}` of each sample.
    pub fn pressure_trace(&self, pack: &crate::transforms::ExponentPack) -> Vec<f64> {
        self.values.iter().map(|&v| pack.pressure(v)).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum NodeKind {
    Interior,
    Boundary,
    Exterior,
}

impl NodeKind {
    pub fn code(self) -> u8 {
        match self {
            NodeKind::Interior => 0,
            NodeKind::Boundary => 1,
            NodeKind::Exterior => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(NodeKind::Interior),
            1 => Some(NodeKind::Boundary),
            2 => Some(NodeKind::Exterior),
            _ => None,
        }
    }

    pub fn has_value(self) -> bool {
        self != NodeKind::Exterior
    }
}

/// Grid-sampled real function. Row-major: node `(i, j)` sits at
/// `origin + (i, j) * spacing` and is stored at `j * n + i`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField2D {
    n: usize,
    origin: [f64; 2],
    spacing: f64,
    values: Vec<f64>,
    mask: Vec<NodeKind>,
    domain: Option<ConvexDomain>,
}

/// Builds the grid skeleton (zero values) covering the domain's bounding box.
pub fn make_grid(domain: &ConvexDomain, n: usize) -> Result<ScalarField2D> {
    if n < MIN_NODES {
        return Err(Error::GridTooSmall {
            min: MIN_NODES,
            got: n,
        });
    }
    if domain.area() <= 0.0 {
        return Err(Error::DegenerateDomain("zero area".into()));
    }
    let bbox = domain.bbox();
    let side = bbox.width().max(bbox.height());
    let spacing = side / (n - 1) as f64;
    let origin = [
        0.5 * (bbox.min[0] + bbox.max[0]) - 0.5 * side,
        0.5 * (bbox.min[1] + bbox.max[1]) - 0.5 * side,
    ];
    let mut mask = vec![NodeKind::Exterior; n * n];
    for j in 0..n {
        for i in 0..n {
            let p = [origin[0] + i as f64 * spacing, origin[1] + j as f64 * spacing];
            if domain.contains(p) {
                mask[j * n + i] = NodeKind::Interior;
            }
        }
    }
    let interior = mask.clone();
    for j in 0..n {
        for i in 0..n {
            if interior[j * n + i] == NodeKind::Interior {
                continue;
            }
            let touches = neighbours8(n, i, j).any(|k| interior[k] == NodeKind::Interior);
            if touches {
                mask[j * n + i] = NodeKind::Boundary;
            }
        }
    }
    Ok(ScalarField2D {
        n,
        origin,
        spacing,
        values: vec![0.0; n * n],
        mask,
        domain: Some(domain.clone()),
    })
}

fn neighbours8(n: usize, i: usize, j: usize) -> impl Iterator<Item = usize> {
    let (i, j) = (i as isize, j as isize);
    let n_i = n as isize;
    (-1..=1)
        .flat_map(move |dj| (-1..=1).map(move |di| (di, dj)))
        .filter(|&(di, dj)| di != 0 || dj != 0)
        .filter_map(move |(di, dj)| {
            let (a, b) = (i + di, j + dj);
            (a >= 0 && b >= 0 && a < n_i && b < n_i).then(|| (b * n_i + a) as usize)
        })
}

impl ScalarField2D {
    /// Field on an explicit square grid without a domain; all nodes are
    /// interior except the outermost ring, which is marked boundary.
    pub fn rectangular(n: usize, origin: [f64; 2], spacing: f64) -> Result<Self> {
        if n < 3 {
            return Err(Error::GridTooSmall { min: 3, got: n });
        }
        if !(spacing > 0.0) {
            return Err(Error::param("spacing", "must be positive"));
        }
        let mask = (0..n * n)
            .map(|k| {
                let (i, j) = (k % n, k / n);
                if i == 0 || j == 0 || i == n - 1 || j == n - 1 {
                    NodeKind::Boundary
                } else {
                    NodeKind::Interior
                }
            })
            .collect();
        Ok(Self {
            n,
            origin,
            spacing,
            values: vec![0.0; n * n],
            mask,
            domain: None,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn origin(&self) -> [f64; 2] {
        self.origin
    }

    pub fn domain(&self) -> Option<&ConvexDomain> {
        self.domain.as_ref()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn mask(&self) -> &[NodeKind] {
        &self.mask
    }

    pub fn kind(&self, k: usize) -> NodeKind {
        self.mask[k]
    }

    #[inline]
    pub fn idx(&self, i: usize, j: usize) -> usize {
        j * self.n + i
    }

    #[inline]
    pub fn ij(&self, k: usize) -> (usize, usize) {
        (k % self.n, k / self.n)
    }

    #[inline]
    pub fn point(&self, k: usize) -> [f64; 2] {
        let (i, j) = self.ij(k);
        [
            self.origin[0] + i as f64 * self.spacing,
            self.origin[1] + j as f64 * self.spacing,
        ]
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[self.idx(i, j)]
    }

    /// Same grid and mask, new values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        if values.len() != self.values.len() {
            return Err(Error::ShapeMismatch);
        }
        Ok(Self {
            values,
            ..self.clone()
        })
    }

    /// Same grid and mask, values from a function of position.
    pub fn sample(&self, mut f: impl FnMut([f64; 2]) -> f64) -> Self {
        let values = (0..self.len()).map(|k| f(self.point(k))).collect();
        Self {
            values,
            ..self.clone()
        }
    }

    /// Same grid with values `f(k)` at nodes that carry a value.
    pub fn sample_indexed(&self, mut f: impl FnMut(usize) -> f64) -> Self {
        let mut out = self.clone();
        for k in 0..self.len() {
            out.values[k] = if self.mask[k].has_value() { f(k) } else { 0.0 };
        }
        out
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Self {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.n == other.n && self.origin == other.origin && self.spacing == other.spacing
    }

    pub fn interior_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m == NodeKind::Interior).count()
    }

    /// Offset neighbour index if it exists and carries a value.
    #[inline]
    pub fn neighbour(&self, k: usize, di: isize, dj: isize) -> Option<usize> {
        let (i, j) = self.ij(k);
        let a = i as isize + di;
        let b = j as isize + dj;
        let n = self.n as isize;
        if a < 0 || b < 0 || a >= n || b >= n {
            return None;
        }
        let kk = (b * n + a) as usize;
        self.mask[kk].has_value().then_some(kk)
    }

    /// Interior node whose eight neighbours are all interior.
    pub fn is_deep_interior(&self, k: usize) -> bool {
        self.mask[k] == NodeKind::Interior
            && (-1..=1).all(|dj| {
                (-1..=1).all(|di| {
                    self.neighbour(k, di, dj)
                        .map(|kk| self.mask[kk] == NodeKind::Interior)
                        .unwrap_or(false)
                })
            })
    }

    /// Bilinear interpolation; `None` outside the grid or if a corner is
    /// exterior.
    pub fn interpolate(&self, p: [f64; 2]) -> Option<f64> {
        let u = (p[0] - self.origin[0]) / self.spacing;
        let v = (p[1] - self.origin[1]) / self.spacing;
        if u < 0.0 || v < 0.0 {
            return None;
        }
        let i = (u.floor() as usize).min(self.n - 2);
        let j = (v.floor() as usize).min(self.n - 2);
        if u > (self.n - 1) as f64 || v > (self.n - 1) as f64 {
            return None;
        }
        let (a, b) = (u - i as f64, v - j as f64);
        let ks = [
            self.idx(i, j),
            self.idx(i + 1, j),
            self.idx(i, j + 1),
            self.idx(i + 1, j + 1),
        ];
        if ks.iter().any(|&k| !self.mask[k].has_value()) {
            return None;
        }
        Some(
            (1.0 - a) * (1.0 - b) * self.values[ks[0]]
                + a * (1.0 - b) * self.values[ks[1]]
                + (1.0 - a) * b * self.values[ks[2]]
                + a * b * self.values[ks[3]],
        )
    }

    /// Writes `x,y,value,mask` rows (mask codes 0 interior, 1 boundary,
    /// 2 exterior) with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,y,value,mask")?;
        for k in 0..self.len() {
            let p = self.point(k);
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{}",
                p[0],
                p[1],
                self.values[k],
                self.mask[k].code()
            )?;
        }
        Ok(())
    }

    /// Reads a field written by [`Self::write_csv`]. The domain is not
    /// stored in the file and comes back as `None`.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut rows = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line?;
            if lineno == 0 {
                if line.trim() != "x,y,value,mask" {
                    return Err(Error::param("csv", format!("unexpected header `{line}`")));
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            let bad = || Error::param("csv", format!("malformed row {lineno}"));
            if cols.len() != 4 {
                return Err(bad());
            }
            let x: f64 = cols[0].parse().map_err(|_| bad())?;
            let y: f64 = cols[1].parse().map_err(|_| bad())?;
            let v: f64 = cols[2].parse().map_err(|_| bad())?;
            let m = cols[3]
                .trim()
                .parse::<u8>()
                .ok()
                .and_then(NodeKind::from_code)
                .ok_or_else(bad)?;
            rows.push((x, y, v, m));
        }
        let n = (rows.len() as f64).sqrt().round() as usize;
        if n * n != rows.len() || n < 2 {
            return Err(Error::param("csv", "row count is not a square grid"));
        }
        let origin = [rows[0].0, rows[0].1];
        let spacing = rows[1].0 - rows[0].0;
        Ok(Self {
            n,
            origin,
            spacing,
            values: rows.iter().map(|r| r.2).collect(),
            mask: rows.iter().map(|r| r.3).collect(),
            domain: None,
        })
    }
}

/// Accuracy of the stencil used at a node.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Stencil {
    Central,
    OneSided,
    Undefined,
}

#[derive(Clone, Debug)]
pub struct GradientField {
    pub gx: Vec<f64>,
    pub gy: Vec<f64>,
    pub stencil: Vec<Stencil>,
}

impl GradientField {
    pub fn magnitude(&self, k: usize) -> f64 {
        self.gx[k].hypot(self.gy[k])
    }
}

/// Symmetric 2x2 Hessian per node.
#[derive(Clone, Debug)]
pub struct HessianField {
    pub xx: Vec<f64>,
    pub xy: Vec<f64>,
    pub yy: Vec<f64>,
    pub stencil: Vec<Stencil>,
}

impl HessianField {
    pub fn det(&self, k: usize) -> f64 {
        self.xx[k] * self.yy[k] - self.xy[k] * self.xy[k]
    }
}

fn first_diff(f: &ScalarField2D, k: usize, di: isize, dj: isize) -> (f64, Stencil) {
    let h = f.spacing;
    let v = &f.values;
    match (f.neighbour(k, di, dj), f.neighbour(k, -di, -dj)) {
        (Some(p), Some(m)) => ((v[p] - v[m]) / (2.0 * h), Stencil::Central),
        (Some(p), None) => ((v[p] - v[k]) / h, Stencil::OneSided),
        (None, Some(m)) => ((v[k] - v[m]) / h, Stencil::OneSided),
        (None, None) => (f64::NAN, Stencil::Undefined),
    }
}

fn second_diff(f: &ScalarField2D, k: usize, di: isize, dj: isize) -> (f64, Stencil) {
    let h2 = f.spacing * f.spacing;
    let v = &f.values;
    match (f.neighbour(k, di, dj), f.neighbour(k, -di, -dj)) {
        (Some(p), Some(m)) => ((v[p] - 2.0 * v[k] + v[m]) / h2, Stencil::Central),
        (Some(p), None) => match f.neighbour(k, 2 * di, 2 * dj) {
            Some(pp) => ((v[pp] - 2.0 * v[p] + v[k]) / h2, Stencil::OneSided),
            None => (f64::NAN, Stencil::Undefined),
        },
        (None, Some(m)) => match f.neighbour(k, -2 * di, -2 * dj) {
            Some(mm) => ((v[mm] - 2.0 * v[m] + v[k]) / h2, Stencil::OneSided),
            None => (f64::NAN, Stencil::Undefined),
        },
        (None, None) => (f64::NAN, Stencil::Undefined),
    }
}

fn mixed_diff(f: &ScalarField2D, k: usize) -> (f64, Stencil) {
    let h2 = f.spacing * f.spacing;
    let v = &f.values;
    let corners = [
        f.neighbour(k, 1, 1),
        f.neighbour(k, -1, -1),
        f.neighbour(k, -1, 1),
        f.neighbour(k, 1, -1),
    ];
    if let [Some(ne), Some(sw), Some(nw), Some(se)] = corners {
        return ((v[ne] + v[sw] - v[nw] - v[se]) / (4.0 * h2), Stencil::Central);
    }
    for (a, b) in [(1isize, 1isize), (-1, -1), (-1, 1), (1, -1)] {
        if let (Some(ab), Some(a0), Some(b0)) = (
            f.neighbour(k, a, b),
            f.neighbour(k, a, 0),
            f.neighbour(k, 0, b),
        ) {
            let s = (a * b) as f64;
            return ((v[ab] - v[a0] - v[b0] + v[k]) * s / h2, Stencil::OneSided);
        }
    }
    (f64::NAN, Stencil::Undefined)
}

fn worst(a: Stencil, b: Stencil) -> Stencil {
    use Stencil::*;
    match (a, b) {
        (Undefined, _) | (_, Undefined) => Undefined,
        (OneSided, _) | (_, OneSided) => OneSided,
        _ => Central,
    }
}

/// Central differences at nodes with both neighbours, one-sided (first
/// order, flagged) at mask edges.
pub fn gradient(f: &ScalarField2D) -> GradientField {
    let len = f.len();
    let mut out = GradientField {
        gx: vec![f64::NAN; len],
        gy: vec![f64::NAN; len],
        stencil: vec![Stencil::Undefined; len],
    };
    for k in 0..len {
        if !f.mask[k].has_value() {
            continue;
        }
        let (gx, sx) = first_diff(f, k, 1, 0);
        let (gy, sy) = first_diff(f, k, 0, 1);
        out.gx[k] = gx;
        out.gy[k] = gy;
        out.stencil[k] = worst(sx, sy);
    }
    out
}

/// Nine-point Hessian; symmetric by construction.
pub fn hessian(f: &ScalarField2D) -> HessianField {
    let len = f.len();
    let mut out = HessianField {
        xx: vec![f64::NAN; len],
        xy: vec![f64::NAN; len],
        yy: vec![f64::NAN; len],
        stencil: vec![Stencil::Undefined; len],
    };
    for k in 0..len {
        if !f.mask[k].has_value() {
            continue;
        }
        let (xx, s1) = second_diff(f, k, 1, 0);
        let (yy, s2) = second_diff(f, k, 0, 1);
        let (xy, s3) = mixed_diff(f, k);
        out.xx[k] = xx;
        out.yy[k] = yy;
        out.xy[k] = xy;
        out.stencil[k] = worst(worst(s1, s2), s3);
    }
    out
}

/// Unit outward normal `nu = Dg/|Dg|` of the level sets, defined where
/// `|Dg| >= floor`. The tangent is `nu` rotated by +90 degrees.
#[derive(Clone, Debug)]
pub struct LevelFrame {
    pub normal: Vec<Option<[f64; 2]>>,
}

impl LevelFrame {
    pub fn tangent(&self, k: usize) -> Option<[f64; 2]> {
        self.normal[k].map(|nu| [-nu[1], nu[0]])
    }

    pub fn defined_count(&self) -> usize {
        self.normal.iter().filter(|n| n.is_some()).count()
    }
}

pub fn level_frame(grad: &GradientField, floor: f64) -> LevelFrame {
    let normal = (0..grad.gx.len())
        .map(|k| {
            let m = grad.magnitude(k);
            (grad.stencil[k] != Stencil::Undefined && m.is_finite() && m >= floor)
                .then(|| [grad.gx[k] / m, grad.gy[k] / m])
        })
        .collect();
    LevelFrame { normal }
}

/// Frame-aligned second derivatives; NaN where the frame or Hessian is
/// undefined.
#[derive(Clone, Debug)]
pub struct DirectionalSecond {
    pub nn: Vec<f64>,
    pub nt: Vec<f64>,
    pub tt: Vec<f64>,
}

pub fn rotate_hessian(h: [f64; 3], nu: [f64; 2]) -> [f64; 3] {
    let [xx, xy, yy] = h;
    let tau = [-nu[1], nu[0]];
    let quad = |a: [f64; 2], b: [f64; 2]| {
        a[0] * (xx * b[0] + xy * b[1]) + a[1] * (xy * b[0] + yy * b[1])
    };
    [quad(nu, nu), quad(nu, tau), quad(tau, tau)]
}

pub fn directional_second(hess: &HessianField, frame: &LevelFrame) -> DirectionalSecond {
    let len = hess.xx.len();
    let mut out = DirectionalSecond {
        nn: vec![f64::NAN; len],
        nt: vec![f64::NAN; len],
        tt: vec![f64::NAN; len],
    };
    for k in 0..len {
        if let (Some(nu), true) = (frame.normal[k], hess.stencil[k] != Stencil::Undefined) {
            let [nn, nt, tt] = rotate_hessian([hess.xx[k], hess.xy[k], hess.yy[k]], nu);
            out.nn[k] = nn;
            out.nt[k] = nt;
            out.tt[k] = tt;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square_field(n: usize) -> ScalarField2D {
        let h = 2.0 / (n - 1) as f64;
        ScalarField2D::rectangular(n, [-1.0, -1.0], h).unwrap()
    }

    #[test]
    fn spacing_from_bounding_box() {
        let d = ConvexDomain::disk([0.0, 0.0], 2.0).unwrap();
        let g = make_grid(&d, 129).unwrap();
        assert_eq!(g.spacing(), 0.03125);
    }

    #[test]
    fn interior_count_matches_brute_force() {
        let d = ConvexDomain::disk([0.0, 0.0], 1.0).unwrap();
        let g = make_grid(&d, 17).unwrap();
        let h = g.spacing();
        let mut brute = 0;
        for j in 0..17 {
            for i in 0..17 {
                let (x, y) = (-1.0 + i as f64 * h, -1.0 + j as f64 * h);
                if x * x + y * y < 1.0 - 1e-12 {
                    brute += 1;
                }
            }
        }
        assert_eq!(g.interior_count(), brute);
        let area_estimate = brute as f64 * h * h;
        assert!((area_estimate - PI).abs() / PI < 0.15);
    }

    #[test]
    fn rejects_small_grids_and_reflex_polygons() {
        let d = ConvexDomain::disk([0.0, 0.0], 1.0).unwrap();
        assert!(matches!(make_grid(&d, 8), Err(Error::GridTooSmall { .. })));
        let reflex = vec![[0.0, 0.0], [2.0, 0.0], [1.0, 0.5], [2.0, 2.0], [0.0, 2.0]];
        assert!(matches!(
            ConvexDomain::polygon(reflex),
            Err(Error::NotConvex { .. })
        ));
        assert!(ConvexDomain::polygon(vec![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]]).is_err());
    }

    #[test]
    fn clockwise_polygon_is_reoriented() {
        let cw = vec![[0.0, 0.0], [0.0, 1.0], [1.0, 1.0], [1.0, 0.0]];
        let d = ConvexDomain::polygon(cw).unwrap();
        assert!((d.area() - 1.0).abs() < 1e-14);
        assert!(d.contains([0.5, 0.5]));
        assert!(!d.contains([1.5, 0.5]));
        assert!((d.ray_exit([0.5, 0.5], [1.0, 0.0]) - 0.5).abs() < 1e-14);
    }

    #[test]
    fn ray_exit_hits_boundary() {
        let disk = ConvexDomain::disk([0.5, 0.0], 2.0).unwrap();
        let ell = ConvexDomain::ellipse([0.0, 0.0], 2.0, 1.0).unwrap();
        for d in [disk, ell] {
            for a in 0..12 {
                let th = a as f64 * 0.5;
                let dir = [th.cos(), th.sin()];
                let p = [0.3, -0.2];
                let t = d.ray_exit(p, dir);
                let q = [p[0] + t * dir[0], p[1] + t * dir[1]];
                assert!(d.level(q).abs() < 1e-12, "{:?}", d.shape());
            }
        }
    }

    #[test]
    fn boundary_param_round_trip() {
        let poly = ConvexDomain::polygon(vec![[0.0, 0.0], [2.0, 0.0], [2.0, 1.0], [0.0, 1.0]]).unwrap();
        let ell = ConvexDomain::ellipse([1.0, 0.0], 1.5, 0.5).unwrap();
        for d in [poly, ell] {
            for k in 0..20 {
                let s = k as f64 / 20.0 + 0.013;
                let p = d.boundary_point(s);
                assert!((d.boundary_param(p) - s).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn boundary_data_interpolates_periodically() {
        let d = ConvexDomain::disk([0.0, 0.0], 1.0).unwrap();
        let bd = BoundaryData::from_table(&d, vec![(0.0, 1.0), (0.5, 3.0)]).unwrap();
        assert!((bd.eval_param(0.25) - 2.0).abs() < 1e-14);
        assert!((bd.eval_param(0.75) - 2.0).abs() < 1e-14);
        assert!((bd.eval([0.0, -1.0]) - 2.0).abs() < 1e-12);
        assert!(matches!(
            BoundaryData::constant(&d, 0.0),
            Err(Error::NonPositiveBoundary { .. })
        ));
    }

    #[test]
    fn quadratics_are_differentiated_exactly() {
        let f = unit_square_field(21);
        let q = f.sample(|p| 1.5 * p[0] * p[0] - 0.7 * p[0] * p[1] + 0.25 * p[1] * p[1] + p[0] - 2.0);
        let g = gradient(&q);
        let h = hessian(&q);
        for k in 0..q.len() {
            if h.stencil[k] != Stencil::Central {
                continue;
            }
            let p = q.point(k);
            assert!((g.gx[k] - (3.0 * p[0] - 0.7 * p[1] + 1.0)).abs() < 1e-10);
            assert!((g.gy[k] - (-0.7 * p[0] + 0.5 * p[1])).abs() < 1e-10);
            assert!((h.xx[k] - 3.0).abs() < 1e-9);
            assert!((h.xy[k] + 0.7).abs() < 1e-9);
            assert!((h.yy[k] - 0.5).abs() < 1e-9);
        }
    }

    #[test]
    fn x_squared_and_xy() {
        let f = unit_square_field(17);
        let a = hessian(&f.sample(|p| p[0] * p[0]));
        let b = hessian(&f.sample(|p| p[0] * p[1]));
        let k = f.idx(8, 8);
        assert!((a.xx[k] - 2.0).abs() < 1e-12 && a.yy[k].abs() < 1e-12 && a.xy[k].abs() < 1e-12);
        assert!((b.xy[k] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn second_order_convergence_on_sine() {
        let err = |n: usize| {
            let f = unit_square_field(n).sample(|p| p[0].sin());
            let h = hessian(&f);
            (0..f.len())
                .filter(|&k| h.stencil[k] == Stencil::Central)
                .map(|k| (h.xx[k] + f.point(k)[0].sin()).abs())
                .fold(0.0, f64::max)
        };
        let ratio = err(33) / err(65);
        assert!((ratio - 4.0).abs() < 0.3, "ratio {ratio}");
    }

    #[test]
    fn frames_of_radial_and_linear_fields() {
        let f = unit_square_field(21);
        let lin = f.sample(|p| p[0] + 2.0 * p[1]);
        let frame = level_frame(&gradient(&lin), DEFAULT_GRADIENT_FLOOR);
        let s5 = 5f64.sqrt();
        for k in 0..f.len() {
            let nu = frame.normal[k].unwrap();
            assert!((nu[0] - 1.0 / s5).abs() < 1e-12 && (nu[1] - 2.0 / s5).abs() < 1e-12);
        }
        // g = r sampled on a grid through (1,0) and (0,1)
        let g = ScalarField2D::rectangular(41, [-2.0, -2.0], 0.1)
            .unwrap()
            .sample(|p| p[0].hypot(p[1]));
        let frame = level_frame(&gradient(&g), DEFAULT_GRADIENT_FLOOR);
        let k = g.idx(30, 20);
        let nu = frame.normal[k].unwrap();
        assert!((nu[0] - 1.0).abs() < 1e-12 && nu[1].abs() < 1e-12);
        assert!((frame.tangent(k).unwrap()[1] - 1.0).abs() < 1e-12);
        let k = g.idx(20, 30);
        let tau = frame.tangent(k).unwrap();
        assert!((tau[0] + 1.0).abs() < 1e-12 && tau[1].abs() < 1e-12);
        for k in 0..g.len() {
            if let Some(nu) = frame.normal[k] {
                let tau = frame.tangent(k).unwrap();
                assert!((nu[0] * nu[0] + nu[1] * nu[1] - 1.0).abs() < 1e-14);
                assert!((nu[0] * tau[0] + nu[1] * tau[1]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn directional_second_derivatives() {
        let f = unit_square_field(21);
        let iso = f.sample(|p| 0.5 * (p[0] * p[0] + p[1] * p[1]));
        let ds = directional_second(&hessian(&iso), &level_frame(&gradient(&iso), 1e-6));
        let k = f.idx(15, 12);
        assert!((ds.nn[k] - 1.0).abs() < 1e-9 && (ds.tt[k] - 1.0).abs() < 1e-9 && ds.nt[k].abs() < 1e-9);

        let half_x2 = f.sample(|p| 0.5 * p[0] * p[0]);
        let ds = directional_second(&hessian(&half_x2), &level_frame(&gradient(&half_x2), 1e-6));
        let k = f.idx(15, 12);
        assert!((ds.nn[k] - 1.0).abs() < 1e-9 && ds.tt[k].abs() < 1e-9);
    }

    #[test]
    fn frame_contraction_reconstructs_hessian() {
        let f = unit_square_field(21);
        let q = f.sample(|p| 0.8 * p[0] * p[0] + 0.3 * p[0] * p[1] + 1.1 * p[1] * p[1] + 0.2 * p[1]);
        let h = hessian(&q);
        let frame = level_frame(&gradient(&q), 1e-6);
        let ds = directional_second(&h, &frame);
        for k in 0..q.len() {
            let (Some(nu), false) = (frame.normal[k], ds.nn[k].is_nan()) else {
                continue;
            };
            let tau = frame.tangent(k).unwrap();
            let rebuild = |a: usize, b: usize| {
                ds.nn[k] * nu[a] * nu[b]
                    + ds.nt[k] * (nu[a] * tau[b] + tau[a] * nu[b])
                    + ds.tt[k] * tau[a] * tau[b]
            };
            assert!((rebuild(0, 0) - h.xx[k]).abs() < 1e-10);
            assert!((rebuild(0, 1) - h.xy[k]).abs() < 1e-10);
            assert!((rebuild(1, 1) - h.yy[k]).abs() < 1e-10);
        }
    }

    #[test]
    fn csv_round_trip() {
        let d = ConvexDomain::disk([0.0, 0.0], 1.0).unwrap();
        let f = make_grid(&d, 16).unwrap().sample(|p| p[0].exp() * p[1]);
        let mut buf = Vec::new();
        f.write_csv(&mut buf).unwrap();
        let back = ScalarField2D::read_csv(&buf[..]).unwrap();
        assert_eq!(back.values(), f.values());
        assert_eq!(back.mask(), f.mask());
        assert_eq!(back.n(), f.n());
        assert!((back.spacing() - f.spacing()).abs() < 1e-14);
        assert!((back.origin()[0] - f.origin()[0]).abs() < 1e-14);
    }
}
