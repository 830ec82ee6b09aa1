//! Sweep solver for `det D^2 f = h f^p` with Dirichlet data.
//!
//! Every interior node carries four directional second differences (the two
//! axes and the two diagonals). Arms that leave the domain are cut at the
//! boundary and pick up the Dirichlet value there. With the mixed derivative
//! written as half the difference of the diagonal second differences, the
//! discrete determinant is a quadratic in the centre value; each sweep solves
//! it at every node, taking the root on the convex branch, with the source
//! `h f^p` lagged. The iterate is projected onto `f >= 0` after each update,
//! which is what produces the vanishing set.

pub mod interface;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{make_grid, BoundaryData, ConvexDomain, NodeKind, ScalarField2D};
use crate::transforms::{pressure_from_density, ExponentPack};

pub use interface::{extract_interface, free_boundary_relation, FreeBoundaryResidual, Interface};

/// Where the lagged source `h f^p` is evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SourceLag {
    /// From the iterate at the start of the sweep.
    PreviousSweep,
    /// From the current value at the node, just before its update.
    Pointwise,
}

/// Handling of nodes where the quadratic has no root on the convex branch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ConvexityMode {
    /// Fall back to the two-pair monotone evaluation at offending nodes.
    Monotone,
    /// Take the vertex of the quadratic and count the event.
    Off,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveConfig {
    pub n: usize,
    pub max_sweeps: usize,
    /// Sup-norm of a sweep's update below which the iteration stops.
    pub tol: f64,
    pub source_lag: SourceLag,
    pub convexity: ConvexityMode,
    /// Over-relaxation factor; 1 is plain Gauss-Seidel.
    pub omega: f64,
    /// Solve on a hierarchy of coarser grids first and interpolate upward.
    pub nested: bool,
    /// Fail when more than this fraction of node updates needed the
    /// convexity fallback in the final sweep.
    pub max_fallback_fraction: f64,
}

impl Default for SolveConfig {
    fn default() -> Self {
        Self {
            n: 129,
            max_sweeps: 200_000,
            tol: 1e-11,
            source_lag: SourceLag::Pointwise,
            convexity: ConvexityMode::Monotone,
            omega: 0.0,
            nested: true,
            max_fallback_fraction: 0.05,
        }
    }
}

impl SolveConfig {
    pub fn with_n(mut self, n: usize) -> Self {
        self.n = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::param("tol", "must be positive"));
        }
        if self.max_sweeps < 1 {
            return Err(Error::param("max_sweeps", "must be at least 1"));
        }
        if !(self.omega == 0.0 || (self.omega > 0.0 && self.omega < 2.0)) {
            return Err(Error::param("omega", "must lie in (0, 2), or 0 for automatic"));
        }
        Ok(())
    }

    /// Relaxation factor actually used on a grid with `n` nodes per axis.
    pub fn relaxation(&self, n: usize) -> f64 {
        if self.omega > 0.0 {
            self.omega
        } else {
            // optimal SOR factor of the five-point Laplacian, slightly damped
            let rho = (std::f64::consts::PI / (n - 1) as f64).cos();
            let opt = 2.0 / (1.0 + (1.0 - rho * rho).sqrt());
            1.0 + 0.9 * (opt - 1.0)
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub converged: bool,
    pub sweeps: usize,
    /// Sup-norm of the last sweep's update.
    pub last_update: f64,
    /// Sup-norm of the discrete equation residual at interior nodes.
    pub residual: f64,
    pub fallback_nodes: usize,
    /// Sweeps spent on coarser levels of the nested solve.
    pub coarse_sweeps: usize,
    pub n: usize,
}

/// Solved density and pressure with their free boundary.
#[derive(Clone, Debug)]
pub struct PressureSolution {
    pub f: ScalarField2D,
    pub g: ScalarField2D,
    pub pack: ExponentPack,
    pub h: ScalarField2D,
    pub boundary: BoundaryData,
    /// `true` where `f > 0` on interior nodes.
    pub positive: Vec<bool>,
    pub interface: Option<Interface>,
    pub report: ConvergenceReport,
}

impl PressureSolution {
    pub fn spacing(&self) -> f64 {
        self.f.spacing()
    }

    pub fn vanishing_count(&self) -> usize {
        (0..self.f.len())
            .filter(|&k| self.f.kind(k) == NodeKind::Interior && !self.positive[k])
            .count()
    }

    /// Distance from each node to the interface polyline (infinite when there
    /// is no interface).
    pub fn interface_distance(&self) -> Vec<f64> {
        match &self.interface {
            Some(iface) => (0..self.f.len())
                .map(|k| iface.distance(self.f.point(k)))
                .collect(),
            None => vec![f64::INFINITY; self.f.len()],
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct Arm {
    /// Neighbour index, or `u32::MAX` for a cut arm ending on the boundary.
    nb: u32,
    value: f64,
    weight: f64,
}

#[derive(Clone, Copy, Debug)]
struct DirStencil {
    plus: Arm,
    minus: Arm,
    beta: f64,
}

/// Precomputed cut-cell stencils of the interior nodes.
struct Stencils {
    nodes: Vec<u32>,
    dirs: Vec<[DirStencil; 4]>,
}

const DIRECTIONS: [(isize, isize); 4] = [(1, 0), (0, 1), (1, 1), (1, -1)];

fn build_stencils(grid: &ScalarField2D, domain: &ConvexDomain, bd: &BoundaryData) -> Stencils {
    let h = grid.spacing();
    let mut nodes = Vec::new();
    let mut dirs = Vec::new();
    for k in 0..grid.len() {
        if grid.kind(k) != NodeKind::Interior {
            continue;
        }
        let p = grid.point(k);
        let mut st = [DirStencil {
            plus: Arm { nb: 0, value: 0.0, weight: 0.0 },
            minus: Arm { nb: 0, value: 0.0, weight: 0.0 },
            beta: 0.0,
        }; 4];
        for (d, &(di, dj)) in DIRECTIONS.iter().enumerate() {
            let full = h * ((di * di + dj * dj) as f64).sqrt();
            let arm = |sgn: isize| -> (u32, f64, f64) {
                let (a, b) = (sgn * di, sgn * dj);
                match grid.neighbour(k, a, b) {
                    Some(kk) if grid.kind(kk) == NodeKind::Interior => (kk as u32, 0.0, full),
                    _ => {
                        let dir = [a as f64 * h / full, b as f64 * h / full];
                        let t = domain.ray_exit(p, dir).clamp(1e-3 * full, full);
                        let q = [p[0] + t * dir[0], p[1] + t * dir[1]];
                        (u32::MAX, bd.eval(q), t)
                    }
                }
            };
            let (np, vp, hp) = arm(1);
            let (nm, vm, hm) = arm(-1);
            let s = hp + hm;
            st[d] = DirStencil {
                plus: Arm { nb: np, value: vp, weight: 2.0 / (s * hp) },
                minus: Arm { nb: nm, value: vm, weight: 2.0 / (s * hm) },
                beta: 2.0 / (hp * hm),
            };
        }
        nodes.push(k as u32);
        dirs.push(st);
    }
    Stencils { nodes, dirs }
}

#[inline]
fn arm_value(u: &[f64], arm: &Arm) -> f64 {
    if arm.nb == u32::MAX {
        arm.value
    } else {
        u[arm.nb as usize]
    }
}

/// Directional second differences `alpha_d - beta_d * u` at a node.
#[inline]
fn alphas(u: &[f64], st: &[DirStencil; 4]) -> [f64; 4] {
    let mut a = [0.0; 4];
    for d in 0..4 {
        a[d] = st[d].plus.weight * arm_value(u, &st[d].plus)
            + st[d].minus.weight * arm_value(u, &st[d].minus);
    }
    a
}

/// Smaller root of `a u^2 + b u + c = 0`, `None` if complex.
#[inline]
fn smaller_root(a: f64, b: f64, c: f64) -> Option<f64> {
    let disc = b * b - 4.0 * a * c;
    if disc < 0.0 || a <= 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    if b < 0.0 {
        // (-b - sq)/(2a) computed without cancellation
        let den = -b + sq;
        if den == 0.0 {
            return Some(0.0);
        }
        Some(2.0 * c / den)
    } else {
        Some((-b - sq) / (2.0 * a))
    }
}

/// Centre value solving `Dxx Dyy - Dxy^2 = rhs`, plus whether the convexity
/// fallback was used.
#[inline]
fn local_solve(al: [f64; 4], be: [f64; 4], rhs: f64, mode: ConvexityMode) -> (f64, bool) {
    let db = be[2] - be[3];
    let da = al[2] - al[3];
    let a = be[0] * be[1] - 0.25 * db * db;
    let b = -(al[0] * be[1] + al[1] * be[0]) + 0.5 * da * db;
    let c = al[0] * al[1] - 0.25 * da * da - rhs;
    if let Some(u) = smaller_root(a, b, c) {
        let ok = (0..4).all(|d| al[d] - be[d] * u >= -1e-9 * al[d].abs().max(1e-300));
        if ok {
            return (u, false);
        }
    }
    match mode {
        ConvexityMode::Monotone => {
            let pair = |x: usize, y: usize| {
                let a = be[x] * be[y];
                let b = -(al[x] * be[y] + al[y] * be[x]);
                let c = al[x] * al[y] - rhs;
                smaller_root(a, b, c).unwrap_or(0.5 * (al[x] / be[x] + al[y] / be[y]))
            };
            (pair(0, 1).min(pair(2, 3)), true)
        }
        ConvexityMode::Off => (if a > 0.0 { -b / (2.0 * a) } else { al[0] / be[0] }, true),
    }
}

#[inline]
fn source(h: f64, u: f64, p: f64) -> f64 {
    if u <= 0.0 {
        0.0
    } else if p == 1.0 {
        h * u
    } else {
        h * u.powf(p)
    }
}

struct Level {
    grid: ScalarField2D,
    stencils: Stencils,
    h: Vec<f64>,
}

fn sweep(
    level: &Level,
    u: &mut [f64],
    snapshot: Option<&[f64]>,
    p: f64,
    omega: f64,
    mode: ConvexityMode,
) -> (f64, usize) {
    let mut max_update = 0.0f64;
    let mut fallbacks = 0usize;
    let st = &level.stencils;
    for (idx, &k) in st.nodes.iter().enumerate() {
        let k = k as usize;
        let dirs = &st.dirs[idx];
        let al = alphas(u, dirs);
        let be = [dirs[0].beta, dirs[1].beta, dirs[2].beta, dirs[3].beta];
        let lagged = snapshot.map_or(u[k], |s| s[k]);
        let rhs = source(level.h[k], lagged, p);
        let (target, fb) = local_solve(al, be, rhs, mode);
        fallbacks += fb as usize;
        let new = (u[k] + omega * (target - u[k])).max(0.0);
        max_update = max_update.max((new - u[k]).abs());
        u[k] = new;
    }
    (max_update, fallbacks)
}

fn discrete_residual(level: &Level, u: &[f64], p: f64) -> f64 {
    let st = &level.stencils;
    let mut worst = 0.0f64;
    for (idx, &k) in st.nodes.iter().enumerate() {
        let k = k as usize;
        let dirs = &st.dirs[idx];
        let al = alphas(u, dirs);
        let d: Vec<f64> = (0..4).map(|i| al[i] - dirs[i].beta * u[k]).collect();
        let dxy = 0.5 * (d[2] - d[3]);
        let det = d[0] * d[1] - dxy * dxy;
        let r = (det - source(level.h[k], u[k], p)).abs();
        worst = worst.max(r);
    }
    worst
}

/// Upper initial guess: minimum over chords through the node of the linear
/// interpolation of the boundary data.
fn chord_interpolation(grid: &ScalarField2D, domain: &ConvexDomain, bd: &BoundaryData) -> Vec<f64> {
    let constant = bd.values().windows(2).all(|w| w[0] == w[1]);
    let mut u = vec![0.0; grid.len()];
    for k in 0..grid.len() {
        if !grid.kind(k).has_value() {
            continue;
        }
        if constant {
            u[k] = bd.values()[0];
            continue;
        }
        let p = grid.point(k);
        if grid.kind(k) != NodeKind::Interior {
            u[k] = bd.eval(p);
            continue;
        }
        let mut best = f64::INFINITY;
        for a in 0..32 {
            let th = std::f64::consts::PI * a as f64 / 32.0;
            let dir = [th.cos(), th.sin()];
            let t1 = domain.ray_exit(p, dir);
            let t2 = domain.ray_exit(p, [-dir[0], -dir[1]]);
            let v1 = bd.eval([p[0] + t1 * dir[0], p[1] + t1 * dir[1]]);
            let v2 = bd.eval([p[0] - t2 * dir[0], p[1] - t2 * dir[1]]);
            best = best.min((t2 * v1 + t1 * v2) / (t1 + t2));
        }
        u[k] = best.max(0.0);
    }
    u
}

fn fill_boundary_band(grid: &ScalarField2D, bd: &BoundaryData, u: &mut [f64]) {
    for k in 0..grid.len() {
        if grid.kind(k) == NodeKind::Boundary {
            u[k] = bd.eval(grid.point(k));
        }
    }
}

fn check_forcing(h: &ScalarField2D) -> Result<()> {
    for k in 0..h.len() {
        if h.kind(k) == NodeKind::Interior {
            let v = h.values()[k];
            if !(v > 0.0 && v.is_finite()) {
                let (i, j) = h.ij(k);
                return Err(Error::ForcingOutOfBounds { i, j, value: v });
            }
        }
    }
    Ok(())
}

/// Smallest `lambda` with `lambda < h < 1/lambda` up to equality, i.e.
/// `min(min h, 1/max h)` over interior nodes.
pub fn forcing_lambda(h: &ScalarField2D) -> f64 {
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for k in 0..h.len() {
        if h.kind(k) == NodeKind::Interior {
            lo = lo.min(h.values()[k]);
            hi = hi.max(h.values()[k]);
        }
    }
    lo.min(1.0 / hi)
}

/// Forcing given as a function of position.
pub type ForcingFn<'a> = &'a dyn Fn([f64; 2]) -> f64;

fn iterate(
    level: &Level,
    u: &mut [f64],
    p: f64,
    cfg: &SolveConfig,
    budget: usize,
    tol: f64,
) -> (usize, f64, usize, bool) {
    let mut omega = cfg.relaxation(level.grid.n());
    let mut snapshot = Vec::new();
    let mut last = f64::INFINITY;
    let mut fallbacks = 0;
    // Over-relaxation can lock into a cycle with the projection at nodes
    // next to the vanishing set; damp it when the update stops shrinking.
    let window = 4 * level.grid.n();
    let mut window_best = f64::INFINITY;
    let mut stalled_best = f64::INFINITY;
    for s in 1..=budget {
        let snap = match cfg.source_lag {
            SourceLag::PreviousSweep => {
                snapshot.clear();
                snapshot.extend_from_slice(u);
                Some(snapshot.as_slice())
            }
            SourceLag::Pointwise => None,
        };
        let (upd, fb) = sweep(level, u, snap, p, omega, cfg.convexity);
        last = upd;
        fallbacks = fb;
        if upd < tol {
            return (s, last, fallbacks, true);
        }
        window_best = window_best.min(upd);
        if s % window == 0 {
            if window_best > 0.5 * stalled_best && omega > 1.0 {
                omega = 1.0 + 0.5 * (omega - 1.0);
                log::debug!("sweep {s}: update stalled at {window_best:.3e}, omega -> {omega:.4}");
            }
            stalled_best = stalled_best.min(window_best);
            window_best = f64::INFINITY;
        }
    }
    (budget, last, fallbacks, false)
}

fn make_level(
    domain: &ConvexDomain,
    bd: &BoundaryData,
    forcing: ForcingFn<'_>,
    n: usize,
) -> Result<Level> {
    let grid = make_grid(domain, n)?;
    let stencils = build_stencils(&grid, domain, bd);
    let h = (0..grid.len()).map(|k| forcing(grid.point(k))).collect();
    Ok(Level { grid, stencils, h })
}

/// Solves on the grid of `cfg.n` nodes with the forcing given as a function.
///
/// `initial` (same grid) replaces the default start; it should lie above the
/// solution, e.g. a supersolution or the solution for a smaller forcing.
pub fn solve_ma_fn(
    domain: &ConvexDomain,
    boundary: &BoundaryData,
    forcing: ForcingFn<'_>,
    pack: &ExponentPack,
    cfg: &SolveConfig,
    initial: Option<&ScalarField2D>,
) -> Result<PressureSolution> {
    cfg.validate()?;
    let level = make_level(domain, boundary, forcing, cfg.n)?;
    let hfield = level.grid.with_values(level.h.clone())?;
    check_forcing(&hfield)?;
    let p = pack.p();

    let mut coarse_sweeps = 0;
    let mut u = match initial {
        Some(init) => {
            if !init.same_grid(&level.grid) {
                return Err(Error::ShapeMismatch);
            }
            init.values().to_vec()
        }
        None => chord_interpolation(&level.grid, domain, boundary),
    };
    if initial.is_none() && cfg.nested && cfg.n > 40 && cfg.n % 2 == 1 {
        let coarse_cfg = SolveConfig {
            n: (cfg.n - 1) / 2 + 1,
            tol: cfg.tol * 4.0,
            ..cfg.clone()
        };
        let coarse = solve_ma_fn(domain, boundary, forcing, pack, &coarse_cfg, None)?;
        coarse_sweeps = coarse.report.sweeps + coarse.report.coarse_sweeps;
        prolong(&coarse.f, &level.grid, &mut u);
    }
    for k in 0..u.len() {
        if level.grid.kind(k) != NodeKind::Interior {
            u[k] = 0.0;
        }
    }

    let (sweeps, last, fallbacks, converged) =
        iterate(&level, &mut u, p, cfg, cfg.max_sweeps, cfg.tol);
    let residual = discrete_residual(&level, &u, p);
    let nodes = level.stencils.nodes.len().max(1);
    if fallbacks as f64 > cfg.max_fallback_fraction * nodes as f64 {
        return Err(Error::ConvexityLost { fallbacks, nodes });
    }
    fill_boundary_band(&level.grid, boundary, &mut u);
    let f = level.grid.with_values(u)?;
    let report = ConvergenceReport {
        converged,
        sweeps,
        last_update: last,
        residual,
        fallback_nodes: fallbacks,
        coarse_sweeps,
        n: cfg.n,
    };
    finish(f, hfield, boundary.clone(), pack, report)
}

fn finish(
    f: ScalarField2D,
    h: ScalarField2D,
    boundary: BoundaryData,
    pack: &ExponentPack,
    report: ConvergenceReport,
) -> Result<PressureSolution> {
    let g = pressure_from_density(&f, pack)?;
    let positive = (0..f.len())
        .map(|k| f.kind(k) == NodeKind::Interior && f.values()[k] > 0.0)
        .collect();
    let mut sol = PressureSolution {
        f,
        g,
        pack: *pack,
        h,
        boundary,
        positive,
        interface: None,
        report,
    };
    sol.interface = extract_interface(&sol).ok();
    Ok(sol)
}

/// Bilinear prolongation of a coarse solution onto a grid with (roughly)
/// twice the resolution; nodes without four valued coarse corners keep their
/// current value.
fn prolong(coarse: &ScalarField2D, fine: &ScalarField2D, u: &mut [f64]) {
    for k in 0..fine.len() {
        if fine.kind(k) != NodeKind::Interior {
            continue;
        }
        if let Some(v) = coarse.interpolate(fine.point(k)) {
            u[k] = v.max(0.0);
        }
    }
}

/// Solves with the forcing sampled on the grid (`h` must live on the grid
/// of `cfg.n` nodes over `domain`).
pub fn solve_ma(
    domain: &ConvexDomain,
    boundary: &BoundaryData,
    h: &ScalarField2D,
    pack: &ExponentPack,
    cfg: &SolveConfig,
) -> Result<PressureSolution> {
    check_forcing(h)?;
    if h.n() != cfg.n {
        return Err(Error::ShapeMismatch);
    }
    let probe = make_grid(domain, cfg.n)?;
    if !probe.same_grid(h) {
        return Err(Error::ShapeMismatch);
    }
    // coarse levels of the nested solve read the forcing by interpolation
    let forcing = |p: [f64; 2]| h.interpolate(p).unwrap_or(f64::NAN);
    solve_ma_fn(domain, boundary, &forcing, pack, cfg, None)
}
