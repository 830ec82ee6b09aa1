//! Free-boundary extraction from the pressure field.
//!
//! The zero set of the discrete pressure is a region, not a curve, so the
//! interface is located from the level `g = eps0` just outside it and pushed
//! back to `g = 0` along the gradient. The pressure has a nonvanishing slope
//! at the interface, which keeps this extrapolation well conditioned.

use serde::Serialize;

use super::PressureSolution;
use crate::error::{Error, Result};
use crate::grid::{gradient, hessian, NodeKind, ScalarField2D};
use crate::numerics::weighted_lsq;
use crate::transforms::ExponentPack;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Interface {
    /// Counter-clockwise closed polyline; the first vertex is not repeated.
    pub vertices: Vec<[f64; 2]>,
    pub kappa: Vec<f64>,
    /// Normal pressure slope at each vertex.
    pub g_nu: Vec<f64>,
    /// Outward (into the positivity set) unit normal at each vertex.
    pub normals: Vec<[f64; 2]>,
    /// Level used for the crossings.
    pub eps0: f64,
}

impl Interface {
    pub fn len(&self) -> usize {
        self.vertices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vertices.is_empty()
    }

    pub fn centroid(&self) -> [f64; 2] {
        let m = self.len() as f64;
        let s = self
            .vertices
            .iter()
            .fold([0.0, 0.0], |a, v| [a[0] + v[0], a[1] + v[1]]);
        [s[0] / m, s[1] / m]
    }

    /// Mean distance of the vertices from `center`.
    pub fn mean_radius(&self, center: [f64; 2]) -> f64 {
        self.vertices
            .iter()
            .map(|v| (v[0] - center[0]).hypot(v[1] - center[1]))
            .sum::<f64>()
            / self.len() as f64
    }

    /// Euclidean distance from `p` to the closed polyline.
    pub fn distance(&self, p: [f64; 2]) -> f64 {
        let m = self.len();
        let mut best = f64::INFINITY;
        for i in 0..m {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % m];
            best = best.min(segment_distance(p, a, b));
        }
        best
    }

    /// Whether `p` lies inside the polyline (in the vanishing set).
    pub fn encloses(&self, p: [f64; 2]) -> bool {
        let m = self.len();
        let mut inside = false;
        for i in 0..m {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % m];
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x = a[0] + (p[1] - a[1]) / (b[1] - a[1]) * (b[0] - a[0]);
                if p[0] < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Vertex closest to `p`.
    pub fn nearest_vertex(&self, p: [f64; 2]) -> usize {
        (0..self.len())
            .min_by(|&a, &b| {
                let da = (self.vertices[a][0] - p[0]).hypot(self.vertices[a][1] - p[1]);
                let db = (self.vertices[b][0] - p[0]).hypot(self.vertices[b][1] - p[1]);
                da.total_cmp(&db)
            })
            .unwrap_or(0)
    }

    /// Curvature of the polyline itself: circle through the vertices `w`
    /// steps before and after each vertex.
    pub fn polyline_curvature(&self, w: usize) -> Vec<f64> {
        let m = self.len();
        let w = w % m;
        (0..m)
            .map(|i| {
                circumcurvature(
                    self.vertices[(i + m - w) % m],
                    self.vertices[i],
                    self.vertices[(i + w) % m],
                )
            })
            .collect()
    }

    /// Writes `x,y,kappa,gnu`; the first vertex is repeated at the end so the
    /// file plots as a closed curve.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "x,y,kappa,gnu")?;
        for i in 0..=self.len() {
            let k = i % self.len();
            let v = self.vertices[k];
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e}",
                v[0], v[1], self.kappa[k], self.g_nu[k]
            )?;
        }
        Ok(())
    }
}

fn segment_distance(p: [f64; 2], a: [f64; 2], b: [f64; 2]) -> f64 {
    let d = [b[0] - a[0], b[1] - a[1]];
    let len2 = d[0] * d[0] + d[1] * d[1];
    let t = if len2 > 0.0 {
        (((p[0] - a[0]) * d[0] + (p[1] - a[1]) * d[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p[0] - a[0] - t * d[0]).hypot(p[1] - a[1] - t * d[1])
}

/// Signed curvature of the circle through three points (positive for a
/// counter-clockwise turn).
pub fn circumcurvature(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    let ab = (b[0] - a[0]).hypot(b[1] - a[1]);
    let bc = (c[0] - b[0]).hypot(c[1] - b[1]);
    let ca = (a[0] - c[0]).hypot(a[1] - c[1]);
    let cross = (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0]);
    let den = ab * bc * ca;
    if den == 0.0 {
        0.0
    } else {
        2.0 * cross / den
    }
}

/// Crossing of the level `eps0` pushed back to `g = 0` along the gradient.
struct Crossing {
    point: [f64; 2],
    normal: [f64; 2],
    slope: f64,
}

/// Samples taken along the normal for the slope fit.
const FIT_SAMPLES: usize = 12;

/// Locates `g = 0` from a point `x` on the level `eps0`. The pressure is
/// sampled along the normal on the far side of `x`, where the discrete
/// solution is accurate, a least-squares quadratic is fitted and its root
/// nearest `x` is taken.
fn extrapolate(g: &ScalarField2D, x: [f64; 2], normal: [f64; 2], eps0: f64, slope0: f64) -> Option<Crossing> {
    let d = g.spacing();
    let start = eps0 / slope0;
    let mut rows = Vec::with_capacity(FIT_SAMPLES);
    for j in 0..FIT_SAMPLES {
        let t = start + j as f64 * d;
        if let Some(v) = g.interpolate([x[0] + t * normal[0], x[1] + t * normal[1]]) {
            rows.push((t, v));
        }
    }
    if rows.len() < 4 {
        return None;
    }
    let [a, b, c] = quadratic_fit(&rows)?;
    // Newton from the linear guess
    let mut t = -eps0 / slope0;
    for _ in 0..30 {
        let val = a + t * (b + t * c);
        let der = b + 2.0 * c * t;
        if !(der > 0.0) {
            return None;
        }
        let step = val / der;
        t -= step;
        if step.abs() < 1e-15 * d {
            break;
        }
    }
    let slope = b + 2.0 * c * t;
    (slope > 0.0 && t.is_finite()).then_some(Crossing {
        point: [x[0] + t * normal[0], x[1] + t * normal[1]],
        normal,
        slope,
    })
}

/// Least-squares `a + b t + c t^2` through `(t, v)` pairs.
fn quadratic_fit(rows: &[(f64, f64)]) -> Option<[f64; 3]> {
    let rows: Vec<(Vec<f64>, f64, f64)> = rows.iter().map(|&(t, v)| (vec![1.0, t, t * t], v, 1.0)).collect();
    let c = weighted_lsq(&rows, 3)?;
    Some([c[0], c[1], c[2]])
}

/// Nodal curvature `g_ττ / g_ν` of the level sets of `g`.
fn level_curvature(g: &ScalarField2D) -> ScalarField2D {
    let grad = gradient(g);
    let hess = hessian(g);
    let values = (0..g.len())
        .map(|k| {
            let (gx, gy) = (grad.gx[k], grad.gy[k]);
            let n2 = gx * gx + gy * gy;
            (gy * gy * hess.xx[k] - 2.0 * gx * gy * hess.xy[k] + gx * gx * hess.yy[k]) / (n2 * n2.sqrt())
        })
        .collect();
    g.with_values(values).expect("same grid")
}

/// Extracts the free boundary `Γ(g)` of a solved problem.
pub fn extract_interface(sol: &PressureSolution) -> Result<Interface> {
    let g = &sol.g;
    let n = g.n();
    let vanishing: Vec<usize> = (0..g.len())
        .filter(|&k| g.kind(k) == NodeKind::Interior && !sol.positive[k])
        .collect();
    if vanishing.is_empty() {
        return Err(Error::EmptyVanishingSet);
    }
    let grad = gradient(g);
    let max_grad = (0..g.len())
        .filter(|&k| g.kind(k) == NodeKind::Interior)
        .map(|k| grad.magnitude(k))
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max);
    let eps0 = 2.0 * g.spacing() * max_grad;

    // a boundary-band node below eps0 means the level set reaches the
    // boundary of the domain
    for k in 0..g.len() {
        if g.kind(k) == NodeKind::Boundary && g.values()[k] <= eps0 {
            return Err(Error::OpenInterface);
        }
    }

    let mut raw = Vec::new();
    let vals = g.values();
    for j in 0..n {
        for i in 0..n {
            let k = g.idx(i, j);
            if !g.kind(k).has_value() {
                continue;
            }
            for (di, dj) in [(1usize, 0usize), (0, 1)] {
                if i + di >= n || j + dj >= n {
                    continue;
                }
                let kk = g.idx(i + di, j + dj);
                if !g.kind(kk).has_value() {
                    continue;
                }
                let (a, b) = (vals[k], vals[kk]);
                if (a < eps0) == (b < eps0) {
                    continue;
                }
                let t = (eps0 - a) / (b - a);
                let pa = g.point(k);
                let pb = g.point(kk);
                let x = [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])];
                let gx = interp_pair(grad.gx[k], grad.gx[kk], t);
                let gy = interp_pair(grad.gy[k], grad.gy[kk], t);
                let norm = gx.hypot(gy);
                if !(norm > 0.0) {
                    continue;
                }
                let nu = [gx / norm, gy / norm];
                if let Some(c) = extrapolate(g, x, nu, eps0, norm) {
                    raw.push(c);
                }
            }
        }
    }
    if raw.len() < 8 {
        return Err(Error::EmptyVanishingSet);
    }

    // the vanishing set is convex, so an angular sort about an interior
    // point orders the crossings along the curve
    let m = raw.len() as f64;
    let c = raw
        .iter()
        .fold([0.0, 0.0], |a, v| [a[0] + v.point[0] / m, a[1] + v.point[1] / m]);
    raw.sort_by(|a, b| {
        let ta = (a.point[1] - c[1]).atan2(a.point[0] - c[0]);
        let tb = (b.point[1] - c[1]).atan2(b.point[0] - c[0]);
        ta.total_cmp(&tb)
    });
    // merge near-duplicates (a crossing counted on two edges at a node)
    let min_gap = 1e-3 * g.spacing();
    let mut pts: Vec<Crossing> = Vec::with_capacity(raw.len());
    for cr in raw {
        if let Some(last) = pts.last() {
            if (last.point[0] - cr.point[0]).hypot(last.point[1] - cr.point[1]) < min_gap {
                continue;
            }
        }
        pts.push(cr);
    }

    // Curvature of the level set a little further out, where the nine-point
    // Hessian no longer reaches into the vanishing set, carried back to the
    // interface as for parallel curves (radius of curvature shrinks by the
    // offset).
    let kfield = level_curvature(g);
    let kappa = pts
        .iter()
        .map(|c| {
            let t = 2.0 * eps0 / c.slope;
            let x = [c.point[0] + t * c.normal[0], c.point[1] + t * c.normal[1]];
            let kx = kfield.interpolate(x).unwrap_or(f64::NAN);
            kx / (1.0 - t * kx)
        })
        .collect();
    Ok(Interface {
        vertices: pts.iter().map(|c| c.point).collect(),
        kappa,
        g_nu: pts.iter().map(|c| c.slope).collect(),
        normals: pts.iter().map(|c| c.normal).collect(),
        eps0,
    })
}

fn interp_pair(a: f64, b: f64, t: f64) -> f64 {
    match (a.is_finite(), b.is_finite()) {
        (true, true) => a + t * (b - a),
        (true, false) => a,
        (false, true) => b,
        _ => f64::NAN,
    }
}

/// Per-vertex residual `θ g_ν³ κ − h` of the interface relation.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FreeBoundaryResidual {
    pub residual: Vec<f64>,
    pub sup: f64,
}

/// Evaluates the interface relation; `h` is evaluated at each vertex.
pub fn free_boundary_relation(
    iface: &Interface,
    h: impl Fn([f64; 2]) -> f64,
    pack: &ExponentPack,
) -> FreeBoundaryResidual {
    let residual: Vec<f64> = (0..iface.len())
        .map(|i| pack.theta() * iface.g_nu[i].powi(3) * iface.kappa[i] - h(iface.vertices[i]))
        .collect();
    let sup = residual.iter().fold(0.0f64, |a, r| a.max(r.abs()));
    FreeBoundaryResidual { residual, sup }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn circle_curvature() {
        let r = 2.0;
        let pt = |t: f64| [r * t.cos(), r * t.sin()];
        let k = circumcurvature(pt(0.0), pt(0.3), pt(0.7));
        assert!((k - 0.5).abs() < 1e-12);
        let k = circumcurvature(pt(0.7), pt(0.3), pt(0.0));
        assert!((k + 0.5).abs() < 1e-12);
    }

    #[test]
    fn synthetic_interface_relation_vanishes() {
        let pack = ExponentPack::new(1.0).unwrap();
        let rho: f64 = 1.0;
        let slope = (rho / pack.theta()).cbrt();
        let m = 64;
        let iface = Interface {
            vertices: (0..m)
                .map(|i| {
                    let t = 2.0 * std::f64::consts::PI * i as f64 / m as f64;
                    [t.cos(), t.sin()]
                })
                .collect(),
            kappa: vec![1.0 / rho; m],
            g_nu: vec![slope; m],
            normals: vec![[1.0, 0.0]; m],
            eps0: 0.0,
        };
        let r = free_boundary_relation(&iface, |_| 1.0, &pack);
        assert!(r.sup < 1e-14);
        let doubled = free_boundary_relation(&iface, |_| 2.0, &pack);
        for (a, b) in r.residual.iter().zip(&doubled.residual) {
            assert!((b - (a - 1.0)).abs() < 1e-14);
        }
        assert!(iface.encloses([0.1, 0.2]));
        assert!(!iface.encloses([1.1, 0.2]));
        assert!((iface.distance([0.0, 0.5]) - 0.5).abs() < 1e-2);
    }
}
