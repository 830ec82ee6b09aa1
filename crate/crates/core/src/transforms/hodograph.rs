//! Hodograph coordinates near the free boundary.
//!
//! After rotating the plane so that the normal at a base point of the
//! interface is the first axis, the pressure is increasing along the rotated
//! `x`-lines, and `z = g(x, y)` can be solved for `x = q(z, y)`. The interface
//! becomes the flat edge `z = 0`. Nodes are uniform in `s = sqrt(z)`, the
//! arclength of the singular metric in the normal direction.

use serde::Serialize;

use super::ExponentPack;
use crate::error::{Error, Result};
use crate::grid::{gradient, NodeKind, ScalarField2D};
use crate::numerics::{weighted_lsq, Pchip};
use crate::radial::RadialSolution;
use crate::solver::PressureSolution;

/// Pressure value with first and second derivatives at a point.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct Jet {
    pub g: f64,
    pub gx: f64,
    pub gy: f64,
    pub gxx: f64,
    pub gxy: f64,
    pub gyy: f64,
}

impl Jet {
    pub fn det_hessian(&self) -> f64 {
        self.gxx * self.gyy - self.gxy * self.gxy
    }

    /// Components in the rotated frame.
    pub fn rotated(&self, frame: &Frame) -> Jet {
        let [n, t] = [frame.normal, frame.tangent];
        let hess = |a: [f64; 2], b: [f64; 2]| {
            a[0] * b[0] * self.gxx + (a[0] * b[1] + a[1] * b[0]) * self.gxy + a[1] * b[1] * self.gyy
        };
        Jet {
            g: self.g,
            gx: self.gx * n[0] + self.gy * n[1],
            gy: self.gx * t[0] + self.gy * t[1],
            gxx: hess(n, n),
            gxy: hess(n, t),
            gyy: hess(t, t),
        }
    }
}

/// Orthonormal frame: `normal` becomes the first rotated axis.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Frame {
    pub normal: [f64; 2],
    pub tangent: [f64; 2],
}

impl Frame {
    pub fn new(normal: [f64; 2]) -> Result<Self> {
        let len = normal[0].hypot(normal[1]);
        if !(len > 0.0) || !len.is_finite() {
            return Err(Error::param("normal", "must be a nonzero finite vector"));
        }
        let n = [normal[0] / len, normal[1] / len];
        Ok(Self {
            normal: n,
            tangent: [-n[1], n[0]],
        })
    }

    pub fn to_local(&self, p: [f64; 2]) -> [f64; 2] {
        [
            p[0] * self.normal[0] + p[1] * self.normal[1],
            p[0] * self.tangent[0] + p[1] * self.tangent[1],
        ]
    }

    pub fn to_global(&self, l: [f64; 2]) -> [f64; 2] {
        [
            l[0] * self.normal[0] + l[1] * self.tangent[0],
            l[0] * self.normal[1] + l[1] * self.tangent[1],
        ]
    }
}

/// Source of pressure values, derivatives and forcing in domain
/// coordinates. Values may continue below zero across the interface.
pub trait PressureSampler {
    fn jet(&self, p: [f64; 2]) -> Option<Jet>;

    fn value(&self, p: [f64; 2]) -> Option<f64> {
        self.jet(p).map(|j| j.g)
    }

    fn forcing(&self, p: [f64; 2]) -> f64;
}

/// Sampler built from closures, for analytic test fields.
pub struct FnSampler<J, H> {
    pub jet: J,
    pub forcing: H,
}

impl<J, H> PressureSampler for FnSampler<J, H>
where
    J: Fn([f64; 2]) -> Option<Jet>,
    H: Fn([f64; 2]) -> f64,
{
    fn jet(&self, p: [f64; 2]) -> Option<Jet> {
        (self.jet)(p)
    }

    fn forcing(&self, p: [f64; 2]) -> f64 {
        (self.forcing)(p)
    }
}

/// Rotational pressure of a radial profile. Inside the interface the
/// pressure is continued by its second-order Taylor polynomial so that lines
/// crossing the interface can be inverted down to `z = 0`.
pub struct RadialSampler<'a> {
    sol: &'a RadialSolution,
    slope: f64,
    curvature: f64,
}

impl<'a> RadialSampler<'a> {
    pub fn new(sol: &'a RadialSolution) -> Self {
        Self {
            sol,
            slope: sol.interface_slope(),
            curvature: sol.interface_curvature(),
        }
    }

    /// `(g, g', g'')` as functions of the radius.
    pub fn radial_jet(&self, r: f64) -> (f64, f64, f64) {
        let rho = self.sol.rho;
        let s = r - rho;
        if s <= 0.0 {
            return (
                self.slope * s + 0.5 * self.curvature * s * s,
                self.slope + self.curvature * s,
                self.curvature,
            );
        }
        let (g, gp, gpp) = self.sol.pressure_jet(r);
        if s > 0.05 * rho {
            return (g, gp, gpp);
        }
        // the ODE form of g'' cancels badly near the interface
        let step = 1e-4 * rho;
        let lo = (r - step).max(rho + 1e-7 * rho);
        let hi = lo + 2.0 * step;
        let gpp = (self.sol.pressure_at(hi).1 - self.sol.pressure_at(lo).1) / (hi - lo);
        (g, gp, gpp)
    }
}

impl PressureSampler for RadialSampler<'_> {
    fn jet(&self, p: [f64; 2]) -> Option<Jet> {
        let r = p[0].hypot(p[1]);
        if r < 1e-12 {
            return None;
        }
        let (g, gp, gpp) = self.radial_jet(r);
        let n = [p[0] / r, p[1] / r];
        let tang = gp / r;
        Some(Jet {
            g,
            gx: gp * n[0],
            gy: gp * n[1],
            gxx: gpp * n[0] * n[0] + tang * (1.0 - n[0] * n[0]),
            gxy: (gpp - tang) * n[0] * n[1],
            gyy: gpp * n[1] * n[1] + tang * (1.0 - n[1] * n[1]),
        })
    }

    fn forcing(&self, _p: [f64; 2]) -> f64 {
        self.sol.h0
    }
}

/// Moving least-squares reconstruction of a solved pressure from the nodes
/// of its positivity set. The local cubic extends smoothly across the
/// interface. Nodes in a thin layer next to the interface, where the
/// discrete solution is least accurate, are left out by default, and the
/// wide support averages out grid-scale noise that the hodograph second
/// differences would otherwise amplify.
pub struct GridSampler<'a> {
    g: &'a ScalarField2D,
    h: &'a ScalarField2D,
    positive: &'a [bool],
    /// Support radius in units of the grid spacing.
    pub radius: f64,
    /// Nodes with pressure below this level are left out of the fits.
    pub exclude_below: f64,
}

impl<'a> GridSampler<'a> {
    pub fn new(sol: &'a PressureSolution) -> Self {
        // pressure level about 2.5 cells from the interface
        let slope = sol
            .interface
            .as_ref()
            .filter(|i| !i.is_empty())
            .map(|i| i.g_nu.iter().sum::<f64>() / i.len() as f64)
            .unwrap_or(1.0);
        Self {
            g: &sol.g,
            h: &sol.h,
            positive: &sol.positive,
            radius: 8.0,
            exclude_below: 2.5 * sol.spacing() * slope,
        }
    }

    fn fit(&self, p: [f64; 2]) -> Option<Jet> {
        let d = self.g.spacing();
        let o = self.g.origin();
        let n = self.g.n() as isize;
        let reach = self.radius.ceil() as isize;
        let ci = ((p[0] - o[0]) / d).round() as isize;
        let cj = ((p[1] - o[1]) / d).round() as isize;
        let mut rows = Vec::new();
        for j in (cj - reach).max(0)..=(cj + reach).min(n - 1) {
            for i in (ci - reach).max(0)..=(ci + reach).min(n - 1) {
                let k = self.g.idx(i as usize, j as usize);
                if self.g.kind(k) != NodeKind::Interior
                    || !self.positive[k]
                    || self.g.values()[k] < self.exclude_below
                {
                    continue;
                }
                let q = self.g.point(k);
                let (x, y) = ((q[0] - p[0]) / d, (q[1] - p[1]) / d);
                let r2 = (x * x + y * y) / (self.radius * self.radius);
                if r2 >= 1.0 {
                    continue;
                }
                let w = (1.0 - r2).powi(4);
                let phi = vec![
                    1.0,
                    x,
                    y,
                    x * x,
                    x * y,
                    y * y,
                    x * x * x,
                    x * x * y,
                    x * y * y,
                    y * y * y,
                ];
                rows.push((phi, self.g.values()[k], w));
            }
        }
        let c = if rows.len() >= 16 {
            weighted_lsq(&rows, 10)
        } else {
            None
        };
        let c = match c {
            Some(c) => c,
            None if rows.len() >= 8 => {
                for r in rows.iter_mut() {
                    r.0.truncate(6);
                }
                weighted_lsq(&rows, 6)?
            }
            None => return None,
        };
        Some(Jet {
            g: c[0],
            gx: c[1] / d,
            gy: c[2] / d,
            gxx: 2.0 * c[3] / (d * d),
            gxy: c[4] / (d * d),
            gyy: 2.0 * c[5] / (d * d),
        })
    }
}

impl PressureSampler for GridSampler<'_> {
    fn jet(&self, p: [f64; 2]) -> Option<Jet> {
        self.fit(p)
    }

    fn forcing(&self, p: [f64; 2]) -> f64 {
        self.h.interpolate(p).unwrap_or_else(|| {
            let d = self.g.spacing();
            let o = self.g.origin();
            let n = self.g.n() - 1;
            let i = (((p[0] - o[0]) / d).round().max(0.0) as usize).min(n);
            let j = (((p[1] - o[1]) / d).round().max(0.0) as usize).min(n);
            self.h.get(i, j)
        })
    }
}

/// Node placement of a patch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PatchLayout {
    /// Rows uniform in `s = sqrt(z)`, starting on the interface.
    SqrtZ,
    /// Rows uniform in the computational `z`; the equation sees
    /// `shift + z` (dilated patches away from the interface).
    UniformZ { shift: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PatchOptions {
    /// Box half-width: `0 <= z <= eta^2`, `|y - y0| <= eta`.
    pub eta: f64,
    /// Intervals in `sqrt(z)`.
    pub nodes_s: usize,
    /// Intervals on each side of `y0`.
    pub nodes_y: usize,
    /// Line samples per `sqrt(z)` interval used for the inversion.
    pub samples_per_cell: usize,
    /// Rotation normal; defaults to `P0/|P0|`.
    pub normal: Option<[f64; 2]>,
}

impl PatchOptions {
    pub fn new(eta: f64) -> Self {
        Self {
            eta,
            nodes_s: 16,
            nodes_y: 16,
            samples_per_cell: 16,
            normal: None,
        }
    }
}

/// `x = q(z, y)` on a box near one interface point, with the derivative
/// fields of the weighted second-order space and the forcing.
#[derive(Clone, Debug, Serialize)]
pub struct HodographPatch {
    pub base: [f64; 2],
    pub frame: Frame,
    pub eta: f64,
    pub y0: f64,
    pub layout: PatchLayout,
    /// Computational coordinate of each row (`s` or `z`).
    pub coord: Vec<f64>,
    /// Value of `z` entering the equation on each row.
    pub z: Vec<f64>,
    /// `y` of each column.
    pub y: Vec<f64>,
    pub q: Vec<f64>,
    pub qz: Vec<f64>,
    pub qy: Vec<f64>,
    pub zqzz: Vec<f64>,
    pub sqzqzy: Vec<f64>,
    pub qyy: Vec<f64>,
    pub forcing: Vec<f64>,
    /// Domain point of each node.
    pub physical: Vec<[f64; 2]>,
}

#[derive(Serialize)]
struct PatchMeta<'a> {
    base: [f64; 2],
    frame: &'a Frame,
    eta: f64,
    y0: f64,
    layout: PatchLayout,
    rows: usize,
    cols: usize,
}

impl HodographPatch {
    pub fn rows(&self) -> usize {
        self.coord.len()
    }

    pub fn cols(&self) -> usize {
        self.y.len()
    }

    pub fn len(&self) -> usize {
        self.q.len()
    }

    pub fn is_empty(&self) -> bool {
        self.q.is_empty()
    }

    #[inline]
    pub fn idx(&self, k: usize, j: usize) -> usize {
        k * self.cols() + j
    }

    /// `(z, y)` of every node in storage order.
    pub fn nodes(&self) -> Vec<[f64; 2]> {
        let mut out = Vec::with_capacity(self.len());
        for k in 0..self.rows() {
            for j in 0..self.cols() {
                out.push([self.z[k], self.y[j]]);
            }
        }
        out
    }

    /// Replaces the values and recomputes every derivative field.
    pub fn with_values(&self, q: Vec<f64>) -> Result<Self> {
        if q.len() != self.len() {
            return Err(Error::ShapeMismatch);
        }
        let mut out = self.clone();
        out.q = q;
        out.differentiate();
        Ok(out)
    }

    /// Recomputes `q_z, q_y, z q_zz, sqrt(z) q_zy, q_yy` from `q`.
    pub fn differentiate(&mut self) {
        let d = derivatives(&self.q, self.rows(), self.cols(), &self.coord, &self.y, self.layout);
        self.qz = d.qz;
        self.qy = d.qy;
        self.zqzz = d.zqzz;
        self.sqzqzy = d.sqzqzy;
        self.qyy = d.qyy;
    }

    /// `z det D^2 q = (z q_zz) q_yy - (sqrt(z) q_zy)^2` at a node.
    #[inline]
    pub fn z_det(&self, i: usize) -> f64 {
        self.zqzz[i] * self.qyy[i] - self.sqzqzy[i] * self.sqzqzy[i]
    }

    /// Nonlinear operator `(-z det D^2 q + theta q_z q_yy) / q_z^4` at a node.
    #[inline]
    pub fn operator(&self, i: usize, theta: f64) -> f64 {
        (-self.z_det(i) + theta * self.qz[i] * self.qyy[i]) / self.qz[i].powi(4)
    }

    /// Writes `z,y,q,qz,qy,zqzz,sqzqzy,qyy,H`.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "z,y,q,qz,qy,zqzz,sqzqzy,qyy,H")?;
        for k in 0..self.rows() {
            for j in 0..self.cols() {
                let i = self.idx(k, j);
                writeln!(
                    w,
                    "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                    self.z[k],
                    self.y[j],
                    self.q[i],
                    self.qz[i],
                    self.qy[i],
                    self.zqzz[i],
                    self.sqzqzy[i],
                    self.qyy[i],
                    self.forcing[i]
                )?;
            }
        }
        Ok(())
    }

    /// Frame, box and layout as JSON.
    pub fn metadata_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&PatchMeta {
            base: self.base,
            frame: &self.frame,
            eta: self.eta,
            y0: self.y0,
            layout: self.layout,
            rows: self.rows(),
            cols: self.cols(),
        })?)
    }

    /// Value of `q` at computational coordinates by tensor cubic
    /// interpolation (even reflection across `s = 0` for the root layout).
    pub fn interpolate(&self, field: &[f64], c: f64, y: f64) -> Option<f64> {
        let dc = self.coord[1] - self.coord[0];
        let dy = self.y[1] - self.y[0];
        let tc = (c - self.coord[0]) / dc;
        let ty = (y - self.y[0]) / dy;
        let (nr, nc) = (self.rows() as isize, self.cols() as isize);
        let eps = 1e-9;
        if ty < -eps || ty > (nc - 1) as f64 + eps || tc > (nr - 1) as f64 + eps {
            return None;
        }
        let reflect = matches!(self.layout, PatchLayout::SqrtZ);
        if tc < -eps && !reflect {
            return None;
        }
        let (kc, wc) = lagrange4(tc, if reflect { -(nr - 1) } else { 0 }, nr - 1);
        let (ky, wy) = lagrange4(ty, 0, nc - 1);
        let mut acc = 0.0;
        for a in 0..4 {
            let k = (kc + a as isize).unsigned_abs();
            for b in 0..4 {
                let j = (ky + b as isize) as usize;
                acc += wc[a] * wy[b] * field[k * self.cols() + j];
            }
        }
        Some(acc)
    }
}

/// Start index and weights of the four-point Lagrange stencil around `t`
/// (in index units) restricted to `[lo, hi]`.
fn lagrange4(t: f64, lo: isize, hi: isize) -> (isize, [f64; 4]) {
    let start = ((t.floor() as isize) - 1).clamp(lo, hi - 3);
    let mut w = [1.0; 4];
    for a in 0..4 {
        let xa = (start + a as isize) as f64;
        for b in 0..4 {
            if a != b {
                let xb = (start + b as isize) as f64;
                w[a] *= (t - xb) / (xa - xb);
            }
        }
    }
    (start, w)
}

struct Derivatives {
    qz: Vec<f64>,
    qy: Vec<f64>,
    zqzz: Vec<f64>,
    sqzqzy: Vec<f64>,
    qyy: Vec<f64>,
}

/// First and second differences along a uniformly spaced line: central
/// inside, second-order one-sided at the ends. With `even_start` the line is
/// continued evenly across its first node.
fn line_diff(v: &[f64], h: f64, even_start: bool) -> (Vec<f64>, Vec<f64>) {
    let n = v.len();
    let mut d1 = vec![0.0; n];
    let mut d2 = vec![0.0; n];
    for i in 0..n {
        if i > 0 && i + 1 < n {
            d1[i] = (v[i + 1] - v[i - 1]) / (2.0 * h);
            d2[i] = (v[i + 1] - 2.0 * v[i] + v[i - 1]) / (h * h);
        } else if i == 0 && even_start {
            d1[i] = 0.0;
            d2[i] = 2.0 * (v[1] - v[0]) / (h * h);
        } else if i == 0 {
            d1[i] = (-3.0 * v[0] + 4.0 * v[1] - v[2]) / (2.0 * h);
            d2[i] = (2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]) / (h * h);
        } else {
            let m = n - 1;
            d1[i] = (3.0 * v[m] - 4.0 * v[m - 1] + v[m - 2]) / (2.0 * h);
            d2[i] = (2.0 * v[m] - 5.0 * v[m - 1] + 4.0 * v[m - 2] - v[m - 3]) / (h * h);
        }
    }
    (d1, d2)
}

fn derivatives(
    q: &[f64],
    rows: usize,
    cols: usize,
    coord: &[f64],
    y: &[f64],
    layout: PatchLayout,
) -> Derivatives {
    let dc = coord[1] - coord[0];
    let dy = y[1] - y[0];
    let even = matches!(layout, PatchLayout::SqrtZ);
    let len = rows * cols;
    let (mut qc, mut qcc) = (vec![0.0; len], vec![0.0; len]);
    let (mut qy, mut qyy) = (vec![0.0; len], vec![0.0; len]);
    for j in 0..cols {
        let col: Vec<f64> = (0..rows).map(|k| q[k * cols + j]).collect();
        let (d1, d2) = line_diff(&col, dc, even);
        for k in 0..rows {
            qc[k * cols + j] = d1[k];
            qcc[k * cols + j] = d2[k];
        }
    }
    let mut qcy = vec![0.0; len];
    for k in 0..rows {
        let row = &q[k * cols..(k + 1) * cols];
        let (d1, d2) = line_diff(row, dy, false);
        qy[k * cols..(k + 1) * cols].copy_from_slice(&d1);
        qyy[k * cols..(k + 1) * cols].copy_from_slice(&d2);
        let (m1, _) = line_diff(&qc[k * cols..(k + 1) * cols], dy, false);
        qcy[k * cols..(k + 1) * cols].copy_from_slice(&m1);
    }
    let mut out = Derivatives {
        qz: vec![0.0; len],
        qy,
        zqzz: vec![0.0; len],
        sqzqzy: vec![0.0; len],
        qyy,
    };
    for k in 0..rows {
        for j in 0..cols {
            let i = k * cols + j;
            match layout {
                PatchLayout::SqrtZ => {
                    let s = coord[k];
                    if s == 0.0 {
                        // q is even in s: q_s = 0, q_z = q_ss / 2
                        out.qz[i] = 0.5 * qcc[i];
                    } else {
                        out.qz[i] = qc[i] / (2.0 * s);
                        out.zqzz[i] = 0.25 * (qcc[i] - qc[i] / s);
                        out.sqzqzy[i] = 0.5 * qcy[i];
                    }
                }
                PatchLayout::UniformZ { shift } => {
                    let z = shift + coord[k];
                    out.qz[i] = qc[i];
                    out.zqzz[i] = z * qcc[i];
                    out.sqzqzy[i] = z.max(0.0).sqrt() * qcy[i];
                }
            }
        }
    }
    out
}

/// Solves `z = g(x, y)` for `x` along the rotated line at height `y`.
fn invert_line(
    sampler: &dyn PressureSampler,
    frame: &Frame,
    x_start: f64,
    y: f64,
    levels: &[f64],
    dx: f64,
    line: usize,
) -> Result<Vec<f64>> {
    let eval = |x: f64| {
        sampler
            .value(frame.to_global([x, y]))
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::PatchEscapes(format!("no pressure at rotated ({x:.6}, {y:.6})")))
    };
    let zmax = levels.iter().copied().fold(0.0, f64::max);
    let stride = 4.0 * dx;
    let mut lo = x_start;
    let mut tries = 0;
    while eval(lo)? >= 0.0 {
        lo -= stride;
        tries += 1;
        if tries > 4096 {
            return Err(Error::PatchEscapes(format!("line {line} never reaches g < 0")));
        }
    }
    let mut hi = x_start;
    tries = 0;
    while eval(hi)? <= zmax {
        hi += stride;
        tries += 1;
        if tries > 4096 {
            return Err(Error::PatchEscapes(format!("line {line} never reaches z = {zmax}")));
        }
    }
    let m = ((hi - lo) / dx).ceil() as usize + 1;
    let mut xs = Vec::with_capacity(m);
    let mut gs = Vec::with_capacity(m);
    for i in 0..m {
        let x = lo + (hi - lo) * i as f64 / (m - 1) as f64;
        let g = eval(x)?;
        if let Some(&last) = gs.last() {
            if !(g > last) {
                return Err(Error::NonMonotoneLine { line, y });
            }
        }
        xs.push(x);
        gs.push(g);
    }
    let inverse = Pchip::new(gs, xs).ok_or(Error::NonMonotoneLine { line, y })?;
    Ok(levels.iter().map(|&z| inverse.eval(z)).collect())
}

/// Builds the patch at interface point `base` from any pressure sampler.
pub fn build_hodograph_patch(
    sampler: &dyn PressureSampler,
    base: [f64; 2],
    opts: &PatchOptions,
) -> Result<HodographPatch> {
    if !(opts.eta > 0.0) || !opts.eta.is_finite() {
        return Err(Error::param("eta", "must be positive"));
    }
    if opts.nodes_s < 4 || opts.nodes_y < 2 || opts.samples_per_cell < 1 {
        return Err(Error::param("nodes", "need nodes_s >= 4, nodes_y >= 2, samples_per_cell >= 1"));
    }
    let frame = Frame::new(opts.normal.unwrap_or(base))?;
    let [xb, y0] = frame.to_local(base);
    let eta = opts.eta;
    let ds = eta / opts.nodes_s as f64;
    let dy = eta / opts.nodes_y as f64;
    let coord: Vec<f64> = (0..=opts.nodes_s).map(|k| k as f64 * ds).collect();
    let z: Vec<f64> = coord.iter().map(|s| s * s).collect();
    let y: Vec<f64> = (0..=2 * opts.nodes_y).map(|j| y0 - eta + j as f64 * dy).collect();
    let (rows, cols) = (coord.len(), y.len());
    let dx = ds / opts.samples_per_cell as f64;

    let mut q = vec![0.0; rows * cols];
    for (j, &yj) in y.iter().enumerate() {
        let xs = invert_line(sampler, &frame, xb, yj, &z, dx, j)?;
        for k in 0..rows {
            q[k * cols + j] = xs[k];
        }
    }
    let mut physical = Vec::with_capacity(rows * cols);
    let mut forcing = Vec::with_capacity(rows * cols);
    for k in 0..rows {
        for j in 0..cols {
            let p = frame.to_global([q[k * cols + j], y[j]]);
            physical.push(p);
            forcing.push(sampler.forcing(p));
        }
    }
    let mut patch = HodographPatch {
        base,
        frame,
        eta,
        y0,
        layout: PatchLayout::SqrtZ,
        coord,
        z,
        y,
        q,
        qz: Vec::new(),
        qy: Vec::new(),
        zqzz: Vec::new(),
        sqzqzy: Vec::new(),
        qyy: Vec::new(),
        forcing,
        physical,
    };
    patch.differentiate();
    Ok(patch)
}

/// Default box half-width `10 Δ max(1, max|Dg|)` for a solved field.
pub fn default_eta(sol: &PressureSolution) -> f64 {
    let grad = gradient(&sol.g);
    let max_grad = (0..sol.g.len())
        .filter(|&k| sol.g.kind(k) == NodeKind::Interior)
        .map(|k| grad.magnitude(k))
        .filter(|v| v.is_finite())
        .fold(0.0, f64::max);
    10.0 * sol.spacing() * max_grad.max(1.0)
}

/// Patch at `base` reconstructed from a solved pressure field.
pub fn patch_from_solution(
    sol: &PressureSolution,
    base: [f64; 2],
    opts: &PatchOptions,
) -> Result<HodographPatch> {
    build_hodograph_patch(&GridSampler::new(sol), base, opts)
}

/// Residual `N(q) + H` of the hodograph equation at every node.
pub fn hodograph_residual(patch: &HodographPatch, pack: &ExponentPack) -> Vec<f64> {
    (0..patch.len())
        .map(|i| patch.operator(i, pack.theta()) + patch.forcing[i])
        .collect()
}

/// Dilation `q^r(z, y) = q(r^2 + r^2 z, y_r + r y) / r^2` on the box
/// `|z|, |y| <= 1/2` with `2 * half + 1` nodes per side. The equation for
/// `q^r` has `z` replaced by `1 + z`.
pub fn dilate_patch(patch: &HodographPatch, r: f64, y_r: f64, half: usize) -> Result<HodographPatch> {
    if patch.layout != PatchLayout::SqrtZ {
        return Err(Error::param("patch", "dilation needs a patch on the interface"));
    }
    if !(r > 0.0) || half < 2 {
        return Err(Error::param("r", "need r > 0 and at least 2 nodes per half side"));
    }
    let smax = *patch.coord.last().unwrap_or(&0.0);
    if 1.5 * r * r > smax * smax + 1e-12 {
        return Err(Error::PatchEscapes(format!(
            "dilated rows reach z = {} beyond eta^2 = {}",
            1.5 * r * r,
            smax * smax
        )));
    }
    let (ylo, yhi) = (patch.y[0], *patch.y.last().unwrap_or(&0.0));
    if y_r - 0.5 * r < ylo - 1e-12 || y_r + 0.5 * r > yhi + 1e-12 {
        return Err(Error::PatchEscapes("dilated columns leave the patch".into()));
    }
    let step = 0.5 / half as f64;
    let coord: Vec<f64> = (0..=2 * half).map(|k| -0.5 + k as f64 * step).collect();
    let y = coord.clone();
    let (rows, cols) = (coord.len(), y.len());
    let mut q = Vec::with_capacity(rows * cols);
    let mut forcing = Vec::with_capacity(rows * cols);
    let mut physical = Vec::with_capacity(rows * cols);
    for &zc in &coord {
        let s = (r * r * (1.0 + zc)).sqrt();
        for &yc in &y {
            let ys = y_r + r * yc;
            let qv = patch
                .interpolate(&patch.q, s, ys)
                .ok_or_else(|| Error::PatchEscapes("dilated node outside patch".into()))?;
            let hv = patch.interpolate(&patch.forcing, s, ys).unwrap_or(f64::NAN);
            q.push(qv / (r * r));
            forcing.push(hv);
            physical.push(patch.frame.to_global([qv, ys]));
        }
    }
    let layout = PatchLayout::UniformZ { shift: 1.0 };
    let mut out = HodographPatch {
        base: patch.base,
        frame: patch.frame,
        eta: 0.5,
        y0: 0.0,
        layout,
        z: coord.iter().map(|c| 1.0 + c).collect(),
        coord,
        y,
        q,
        qz: Vec::new(),
        qy: Vec::new(),
        zqzz: Vec::new(),
        sqzqzy: Vec::new(),
        qyy: Vec::new(),
        forcing,
        physical,
    };
    out.differentiate();
    Ok(out)
}

/// Nodes of a dilated patch inside the disk `z^2 + y^2 <= radius^2` of
/// computational coordinates.
pub fn disk_nodes(patch: &HodographPatch, radius: f64) -> Vec<usize> {
    let mut out = Vec::new();
    for k in 0..patch.rows() {
        for j in 0..patch.cols() {
            if patch.coord[k].hypot(patch.y[j] - patch.y0) <= radius + 1e-12 {
                out.push(patch.idx(k, j));
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::radial::solve_radial;

    fn planar(a: f64) -> impl PressureSampler {
        FnSampler {
            jet: move |p: [f64; 2]| {
                Some(Jet {
                    g: a * (p[0] - 1.0),
                    gx: a,
                    ..Jet::default()
                })
            },
            forcing: |_| 0.0,
        }
    }

    #[test]
    fn planar_pressure_inverts_exactly() {
        let a = 1.7;
        let patch = build_hodograph_patch(&planar(a), [1.0, 0.0], &PatchOptions::new(0.2)).unwrap();
        let pack = ExponentPack::new(1.0).unwrap();
        for k in 0..patch.rows() {
            for j in 0..patch.cols() {
                let i = patch.idx(k, j);
                assert!((patch.q[i] - (1.0 + patch.z[k] / a)).abs() < 1e-12);
                assert!((patch.qz[i] - 1.0 / a).abs() < 1e-9, "{}", patch.qz[i]);
                assert!(patch.zqzz[i].abs() < 1e-8);
                assert!(patch.qyy[i].abs() < 1e-8);
            }
        }
        // flat case: residual equals H = 0
        assert!(hodograph_residual(&patch, &pack).iter().all(|r| r.abs() < 1e-6));
    }

    #[test]
    fn radial_patch_slope_and_residual() {
        let sol = solve_radial(1.0, 1.0, 1.0, 2.0, 1e-12).unwrap();
        let sampler = RadialSampler::new(&sol);
        let pack = ExponentPack::new(1.0).unwrap();
        let patch = build_hodograph_patch(&sampler, [1.0, 0.0], &PatchOptions::new(0.2)).unwrap();
        let mid = patch.cols() / 2;
        // q(0, 0) = rho and q_z(0, 0) = 1 / g_nu = 2^{1/3}
        assert!((patch.q[patch.idx(0, mid)] - 1.0).abs() < 1e-9);
        assert!((patch.qz[patch.idx(0, mid)] - 2f64.cbrt()).abs() < 2e-3);
        let res = hodograph_residual(&patch, &pack);
        let coarse = res.iter().fold(0.0f64, |m, r| m.max(r.abs()));
        let mut fine_opts = PatchOptions::new(0.2);
        fine_opts.nodes_s = 32;
        fine_opts.nodes_y = 32;
        let fine = build_hodograph_patch(&sampler, [1.0, 0.0], &fine_opts).unwrap();
        let fine_res = hodograph_residual(&fine, &pack)
            .iter()
            .fold(0.0f64, |m, r| m.max(r.abs()));
        assert!(coarse < 1e-2, "{coarse}");
        assert!(fine_res < coarse / 3.0, "{coarse} -> {fine_res}");
    }

    #[test]
    fn lagrange_weights_reproduce_cubics() {
        let (start, w) = lagrange4(2.3, 0, 10);
        let f = |x: f64| x * x * x - 2.0 * x;
        let v: f64 = (0..4).map(|a| w[a] * f((start + a as isize) as f64)).sum();
        assert!((v - f(2.3)).abs() < 1e-12);
    }

    #[test]
    fn dilation_of_linear_profile_keeps_slope() {
        let a = 2.0;
        let patch = build_hodograph_patch(&planar(a), [1.0, 0.0], &PatchOptions::new(0.4)).unwrap();
        let r = 0.25;
        let dil = dilate_patch(&patch, r, 0.0, 8).unwrap();
        let c = dil.idx(8, 8);
        // q^r(0, 0) = q(r^2, y_r) / r^2
        let direct = patch.interpolate(&patch.q, r, 0.0).unwrap() / (r * r);
        assert!((dil.q[c] - direct).abs() < 1e-12);
        for i in 0..dil.len() {
            assert!((dil.qz[i] - 1.0 / a).abs() < 1e-8);
        }
        assert!(dilate_patch(&patch, 1.0, 0.0, 8).is_err());
    }
}
