//! Verification of candidate solutions: the pressure operator and
//! sub/supersolution classification, the comparison check, the estimate
//! suite on the grid, and the coefficient suite on hodograph patches.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{gradient, hessian, rotate_hessian, NodeKind, ScalarField2D, Stencil};
use crate::numerics::{par_map, weighted_lsq};
use crate::solver::{free_boundary_relation, Interface, PressureSolution};
use crate::transforms::{
    default_eta, holder_seminorm_s, patch_from_solution, GridSampler, HodographPatch, Jet,
    PatchOptions, PressureSampler,
};
use crate::ExponentPack;

/// Version tag written into every serialized [`EstimateReport`].
pub const REPORT_SCHEMA: &str = "degma.estimate-report/1";

/// Names of the five hodograph fields whose Holder seminorms are reported.
pub const HOLDER_FIELDS: [&str; 5] = ["q_z", "q_y", "z q_zz", "sqrt(z) q_zy", "q_yy"];

/// Level-set term `g_y^2 g_xx - 2 g_x g_y g_xy + g_x^2 g_yy`, equal to
/// `g_nu^2 g_tautau`.
#[inline]
pub fn level_term(j: &Jet) -> f64 {
    j.gy * j.gy * j.gxx - 2.0 * j.gx * j.gy * j.gxy + j.gx * j.gx * j.gyy
}

/// Pressure operator `g det D^2 g + theta G` at a jet.
#[inline]
pub fn operator_p_jet(j: &Jet, theta: f64) -> f64 {
    j.g * j.det_hessian() + theta * level_term(j)
}

/// Eigenvalues `(lo, hi)` of the symmetric matrix `[[a, b], [b, c]]`.
pub fn sym_eig(a: f64, b: f64, c: f64) -> (f64, f64) {
    let m = 0.5 * (a + c);
    let r = (0.5 * (a - c)).hypot(b);
    (m - r, m + r)
}

fn jet_at(g: &ScalarField2D, grad: &crate::grid::GradientField, hess: &crate::grid::HessianField, k: usize) -> Jet {
    Jet {
        g: g.values()[k],
        gx: grad.gx[k],
        gy: grad.gy[k],
        gxx: hess.xx[k],
        gxy: hess.xy[k],
        gyy: hess.yy[k],
    }
}

fn touches_vanishing(g: &ScalarField2D, k: usize) -> bool {
    (-1..=1).any(|dj| {
        (-1..=1).any(|di| {
            g.neighbour(k, di, dj)
                .map(|kk| g.kind(kk) == NodeKind::Interior && g.values()[kk] <= 0.0)
                .unwrap_or(false)
        })
    })
}

/// Positive interior node whose eight neighbours are positive interior
/// nodes, so that every difference stencil stays inside the positivity set.
fn clean_node(g: &ScalarField2D, k: usize) -> bool {
    g.is_deep_interior(k)
        && (-1..=1).all(|dj| {
            (-1..=1).all(|di| g.neighbour(k, di, dj).map(|kk| g.values()[kk] > 0.0).unwrap_or(false))
        })
}

/// Nodewise `P[g]`. Vanishing interior nodes get 0; positive nodes next to
/// the vanishing set get the interface limit `theta G`, since `g det D^2 g`
/// tends to zero there; nodes without a stencil get NaN.
pub fn operator_p(g: &ScalarField2D, pack: &ExponentPack) -> ScalarField2D {
    let grad = gradient(g);
    let hess = hessian(g);
    let theta = pack.theta();
    g.sample_indexed(|k| {
        if g.kind(k) != NodeKind::Interior || hess.stencil[k] == Stencil::Undefined {
            return f64::NAN;
        }
        let v = g.values()[k];
        if v <= 0.0 {
            return 0.0;
        }
        let j = jet_at(g, &grad, &hess, k);
        if touches_vanishing(g, k) {
            theta * level_term(&j)
        } else {
            operator_p_jet(&j, theta)
        }
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolutionClass {
    Supersolution,
    Subsolution,
    Solution,
    Neither,
}

/// Outcome of [`classify`]. Relative defects are `(P[g] - h) / h` in the
/// interior and `(theta g_nu^3 kappa - h) / h` on the interface.
#[derive(Clone, Debug, Serialize)]
pub struct Classification {
    pub class: SolutionClass,
    pub interior_max: f64,
    pub interior_min: f64,
    pub interface_max: Option<f64>,
    pub interface_min: Option<f64>,
    /// Worst offending grid nodes, most severe first.
    pub witnesses: Vec<usize>,
    /// Node where the density fails discrete convexity, if any.
    pub convexity_witness: Option<usize>,
    pub checked_nodes: usize,
}

/// Grid spacing multiple below which nodes count as part of the interface
/// band and are left out of interior identity checks.
pub const DEFAULT_BAND: f64 = 3.0;

/// Most negative directional second difference of `f` (axes and diagonals,
/// interior stencils only) below `-slack`, with its node.
pub fn convexity_witness(f: &ScalarField2D, slack: f64) -> Option<(usize, f64)> {
    let h2 = f.spacing() * f.spacing();
    let v = f.values();
    let mut worst: Option<(usize, f64)> = None;
    for k in 0..f.len() {
        if f.kind(k) != NodeKind::Interior {
            continue;
        }
        for (di, dj, w) in [(1, 0, 1.0), (0, 1, 1.0), (1, 1, 0.5), (1, -1, 0.5)] {
            let (Some(a), Some(b)) = (f.neighbour(k, di, dj), f.neighbour(k, -di, -dj)) else {
                continue;
            };
            if f.kind(a) != NodeKind::Interior || f.kind(b) != NodeKind::Interior {
                continue;
            }
            let d2 = w * (v[a] - 2.0 * v[k] + v[b]) / h2;
            if d2 < -slack && worst.map(|(_, m)| d2 < m).unwrap_or(true) {
                worst = Some((k, d2));
            }
        }
    }
    worst
}

/// Default convexity slack: a relative `1e-7` of the field's size measured
/// in second-difference units.
pub fn default_convexity_slack(f: &ScalarField2D) -> f64 {
    let top = f.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    1e-7 * top / (f.spacing() * f.spacing())
}

/// Classifies `g` against forcing `h` with relative tolerance `tol`.
///
/// The interior test runs over positive nodes whose stencil avoids the
/// vanishing set and that lie at least [`DEFAULT_BAND`] cells from the
/// interface (estimated by `g / |Dg|`); the interface test uses the
/// extracted interface when one is given.
pub fn classify(
    g: &ScalarField2D,
    h: &ScalarField2D,
    pack: &ExponentPack,
    tol: f64,
    interface: Option<&Interface>,
) -> Result<Classification> {
    if !g.same_grid(h) {
        return Err(Error::ShapeMismatch);
    }
    let grad = gradient(g);
    let hess = hessian(g);
    let band = DEFAULT_BAND * g.spacing();
    let mut rel = Vec::new();
    for k in 0..g.len() {
        if !clean_node(g, k) {
            continue;
        }
        let j = jet_at(g, &grad, &hess, k);
        if j.g < band * j.gx.hypot(j.gy) {
            continue;
        }
        let hk = h.values()[k];
        rel.push((k, (operator_p_jet(&j, pack.theta()) - hk) / hk));
    }
    let (mut imax, mut imin) = (f64::NEG_INFINITY, f64::INFINITY);
    for &(_, r) in &rel {
        imax = imax.max(r);
        imin = imin.min(r);
    }
    let (mut bmax, mut bmin) = (None, None);
    if let Some(iface) = interface.filter(|i| !i.is_empty()) {
        let hv = |p: [f64; 2]| h.interpolate(p).unwrap_or(f64::NAN);
        let fb = free_boundary_relation(iface, hv, pack);
        let rels: Vec<f64> = fb
            .residual
            .iter()
            .zip(&iface.vertices)
            .map(|(r, &p)| r / hv(p))
            .filter(|v| v.is_finite())
            .collect();
        bmax = rels.iter().cloned().reduce(f64::max);
        bmin = rels.iter().cloned().reduce(f64::min);
    }
    let f = crate::transforms::density_from_pressure(g, pack)?;
    let convexity = convexity_witness(&f, default_convexity_slack(&f)).map(|(k, _)| k);

    let above = imax <= tol && bmax.map(|v| v <= tol).unwrap_or(true);
    let below = imin >= -tol && bmin.map(|v| v >= -tol).unwrap_or(true);
    let class = match (convexity.is_some(), above, below) {
        (true, _, _) => SolutionClass::Neither,
        (false, true, true) => SolutionClass::Solution,
        (false, true, false) => SolutionClass::Supersolution,
        (false, false, true) => SolutionClass::Subsolution,
        (false, false, false) => SolutionClass::Neither,
    };
    let mut bad: Vec<(usize, f64)> = rel.iter().copied().filter(|(_, r)| r.abs() > tol).collect();
    bad.sort_by(|a, b| b.1.abs().total_cmp(&a.1.abs()).then(a.0.cmp(&b.0)));
    Ok(Classification {
        class,
        interior_max: imax,
        interior_min: imin,
        interface_max: bmax,
        interface_min: bmin,
        witnesses: bad.iter().take(16).map(|b| b.0).collect(),
        convexity_witness: convexity,
        checked_nodes: rel.len(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ComparisonStatus {
    Pass,
    /// Boundary ordering or support inclusion fails, so the comparison
    /// theorem does not apply.
    HypothesisViolated,
    /// Hypotheses hold but the ordering fails inside the domain.
    ConclusionViolated,
}

/// Outcome of [`comparison_check`] for an upper field `g1` and lower `g2`.
#[derive(Clone, Debug, Serialize)]
pub struct ComparisonReport {
    pub status: ComparisonStatus,
    /// Boundary nodes with `g2 > g1 + tol`.
    pub boundary_violations: Vec<usize>,
    /// Nodes where `g2 > 0` although `g1` vanishes on the node and all its
    /// neighbours.
    pub support_violations: Vec<usize>,
    /// Interior nodes with `g2 > g1 + tol`.
    pub violations: Vec<usize>,
    /// Largest `g2 - g1` over nodes with values.
    pub max_excess: f64,
}

impl ComparisonReport {
    pub fn passed(&self) -> bool {
        self.status == ComparisonStatus::Pass
    }

    /// Excess `max(g2 - g1, 0)` on the violating nodes, zero elsewhere.
    pub fn violation_map(&self, g1: &ScalarField2D, g2: &ScalarField2D) -> ScalarField2D {
        let mut out = g1.map(|_| 0.0);
        for &k in self.violations.iter().chain(&self.boundary_violations) {
            out.values_mut()[k] = (g2.values()[k] - g1.values()[k]).max(0.0);
        }
        out
    }
}

/// Checks `g2 <= g1 + tol` nodewise together with the hypotheses
/// `g2 <= g1 + tol` on the boundary band and `Omega(g2) ⊆ Omega(g1)` up to
/// one cell.
pub fn comparison_check(g1: &ScalarField2D, g2: &ScalarField2D, tol: f64) -> Result<ComparisonReport> {
    if !g1.same_grid(g2) {
        return Err(Error::ShapeMismatch);
    }
    let (a, b) = (g1.values(), g2.values());
    let mut boundary_violations = Vec::new();
    let mut support_violations = Vec::new();
    let mut violations = Vec::new();
    let mut max_excess = f64::NEG_INFINITY;
    for k in 0..g1.len() {
        match g1.kind(k) {
            NodeKind::Exterior => continue,
            NodeKind::Boundary => {
                if b[k] > a[k] + tol {
                    boundary_violations.push(k);
                }
            }
            NodeKind::Interior => {
                if b[k] > a[k] + tol {
                    violations.push(k);
                }
                if b[k] > 0.0 && a[k] <= 0.0 {
                    let near = (-1..=1).any(|dj| {
                        (-1..=1).any(|di| g1.neighbour(k, di, dj).map(|kk| a[kk] > 0.0).unwrap_or(false))
                    });
                    if !near {
                        support_violations.push(k);
                    }
                }
            }
        }
        max_excess = max_excess.max(b[k] - a[k]);
    }
    let status = if !boundary_violations.is_empty() || !support_violations.is_empty() {
        ComparisonStatus::HypothesisViolated
    } else if !violations.is_empty() {
        ComparisonStatus::ConclusionViolated
    } else {
        ComparisonStatus::Pass
    };
    Ok(ComparisonReport {
        status,
        boundary_violations,
        support_violations,
        violations,
        max_excess,
    })
}

/// Interior nodes where `earlier` vanishes but `later` is positive with no
/// vanishing node of `later` within one cell: the vanishing set failed to
/// grow.
pub fn vanishing_set_growth(earlier: &ScalarField2D, later: &ScalarField2D) -> Result<Vec<usize>> {
    if !earlier.same_grid(later) {
        return Err(Error::ShapeMismatch);
    }
    let (a, b) = (earlier.values(), later.values());
    Ok((0..a.len())
        .filter(|&k| {
            earlier.kind(k) == NodeKind::Interior
                && a[k] <= 0.0
                && b[k] > 0.0
                && !(-1..=1).any(|dj| {
                    (-1..=1).any(|di| {
                        later
                            .neighbour(k, di, dj)
                            .map(|kk| later.kind(kk) == NodeKind::Interior && b[kk] <= 0.0)
                            .unwrap_or(false)
                    })
                })
        })
        .collect())
}

/// Options of the estimate and hodograph suites.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsOptions {
    /// Patch half-width; `None` uses the grid default.
    pub eta: Option<f64>,
    /// Number of patches, based at evenly spread interface points.
    pub patches: usize,
    pub nodes_s: usize,
    pub nodes_y: usize,
    /// Interface band excluded from identity checks, in grid spacings.
    pub band: f64,
    pub alpha: f64,
    /// Seed of the random directions in the linearization check.
    pub seed: u64,
    pub linearization_check: bool,
    pub threads: usize,
}

impl Default for DiagnosticsOptions {
    fn default() -> Self {
        Self {
            eta: None,
            patches: 4,
            nodes_s: 16,
            nodes_y: 16,
            band: DEFAULT_BAND,
            alpha: 0.5,
            seed: 0,
            linearization_check: true,
            threads: 1,
        }
    }
}

/// Closed range of a recorded quantity.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub min: f64,
    pub max: f64,
}

impl Range {
    fn empty() -> Self {
        Self {
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
        }
    }

    fn push(&mut self, v: f64) {
        if v.is_finite() {
            self.min = self.min.min(v);
            self.max = self.max.max(v);
        }
    }

    fn is_set(&self) -> bool {
        self.min <= self.max
    }

    fn merge(&mut self, other: &Range) {
        if other.is_set() {
            self.push(other.min);
            self.push(other.max);
        }
    }
}

/// Coefficient report of one hodograph patch.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PatchReport {
    pub base: [f64; 2],
    pub eta: f64,
    /// Eigenvalues of the coefficient matrix `A` over all nodes.
    pub a_eig: Range,
    pub b: Range,
    pub b1: Range,
    /// Sup of `|det M / q_z^4 - H| / H` away from the interface band.
    pub det_identity: f64,
    /// Sup of `|b - g_x (3h + g det D^2 g)| / |g_x (3h + g det D^2 g)|`
    /// away from the interface band, with the right side sampled from the
    /// grid reconstruction.
    pub b_identity: f64,
    /// Sup of `|b - 3 h g_x| / (3 h g_x)` on the interface row.
    pub b_interface: f64,
    /// Sup of `|tr A - tr_expected| / |tr_expected|`, the trace written
    /// through the primal derivatives.
    pub trace_identity: f64,
    pub checked_nodes: usize,
    /// Holder seminorms of [`HOLDER_FIELDS`] in the singular distance.
    pub holder: [f64; 5],
    /// Observed order of the finite-difference linearization check.
    pub linearization_order: Option<f64>,
}

/// Everything the estimate suite records about one solution.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub schema: String,
    pub n: usize,
    pub spacing: f64,
    /// No positive nodes with a clean stencil were found.
    pub empty: bool,
    pub nodes: usize,
    /// `|Dg|` over clean nodes and the interface.
    pub gradient: Range,
    /// Eigenvalues of the matrix `M` built from `g`.
    pub m_eig: Range,
    pub level_term: Range,
    pub q_max_eig: Range,
    /// `Q` on the interface, where it reduces to `theta g_nu^2`.
    pub q_interface: Range,
    pub z_min: f64,
    /// Sup of `|det M - h| / h` away from the interface band.
    pub det_m_identity: f64,
    /// Eigenvalues of the density form of `M`.
    pub f_matrix_eig: Range,
    /// Sup of `|det M_f - h| / h` for the density form.
    pub f_matrix_identity: f64,
    pub free_boundary_sup: Option<f64>,
    pub patches: Vec<PatchReport>,
    /// Largest seminorm per field over all patches.
    pub holder_max: [f64; 5],
    pub patch_a_eig: Range,
    pub patch_b: Range,
    pub patch_errors: Vec<String>,
}

impl EstimateReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// True when every recorded range is populated and every patch was
    /// built.
    pub fn complete(&self) -> bool {
        !self.empty
            && self.gradient.is_set()
            && self.m_eig.is_set()
            && self.free_boundary_sup.is_some()
            && !self.patches.is_empty()
            && self.patch_errors.is_empty()
    }
}

/// Frame quantities at a clean node: `(|Dg|, M eigenvalues, det M, G, Q, Z)`.
struct NodeEstimate {
    grad: f64,
    m_eig: (f64, f64),
    det_m: f64,
    g_term: f64,
    q: f64,
    z: f64,
}

fn node_estimate(j: &Jet, theta: f64) -> Option<NodeEstimate> {
    let grad = j.gx.hypot(j.gy);
    if !(grad > 0.0) {
        return None;
    }
    let nu = [j.gx / grad, j.gy / grad];
    let [nn, nt, tt] = rotate_hessian([j.gxx, j.gxy, j.gyy], nu);
    let sg = j.g.sqrt();
    let (a, b, c) = (j.g * nn + theta * grad * grad, sg * nt, tt);
    let (_, q) = sym_eig(
        j.g * j.gxx + theta * j.gx * j.gx,
        j.g * j.gxy + theta * j.gx * j.gy,
        j.g * j.gyy + theta * j.gy * j.gy,
    );
    Some(NodeEstimate {
        grad,
        m_eig: sym_eig(a, b, c),
        det_m: a * c - b * b,
        g_term: grad * grad * tt,
        q,
        z: sg * j.det_hessian(),
    })
}

/// Grid part of the estimate suite plus the hodograph suite on patches
/// built from `sol`.
pub fn estimate_suite(sol: &PressureSolution, opts: &DiagnosticsOptions) -> Result<EstimateReport> {
    let g = &sol.g;
    let pack = &sol.pack;
    let theta = pack.theta();
    let grad = gradient(g);
    let hess = hessian(g);
    let f = &sol.f;
    let fgrad = gradient(f);
    let fhess = hessian(f);
    let dist = sol.interface_distance();
    let band = opts.band * sol.spacing();
    let q = pack.q();
    let p = pack.p();

    let mut report = EstimateReport {
        schema: REPORT_SCHEMA.to_string(),
        n: g.n(),
        spacing: g.spacing(),
        empty: true,
        nodes: 0,
        gradient: Range::empty(),
        m_eig: Range::empty(),
        level_term: Range::empty(),
        q_max_eig: Range::empty(),
        q_interface: Range::empty(),
        z_min: f64::INFINITY,
        det_m_identity: 0.0,
        f_matrix_eig: Range::empty(),
        f_matrix_identity: 0.0,
        free_boundary_sup: None,
        patches: Vec::new(),
        holder_max: [0.0; 5],
        patch_a_eig: Range::empty(),
        patch_b: Range::empty(),
        patch_errors: Vec::new(),
    };

    for k in 0..g.len() {
        if !clean_node(g, k) {
            continue;
        }
        let j = jet_at(g, &grad, &hess, k);
        let Some(e) = node_estimate(&j, theta) else { continue };
        report.nodes += 1;
        report.gradient.push(e.grad);
        report.m_eig.push(e.m_eig.0);
        report.m_eig.push(e.m_eig.1);
        report.level_term.push(e.g_term);
        report.q_max_eig.push(e.q);
        report.z_min = report.z_min.min(e.z);

        let fk = f.values()[k];
        let fj = Jet {
            g: fk,
            gx: fgrad.gx[k],
            gy: fgrad.gy[k],
            gxx: fhess.xx[k],
            gxy: fhess.xy[k],
            gyy: fhess.yy[k],
        };
        let nu = [j.gx / e.grad, j.gy / e.grad];
        let [nn, nt, tt] = rotate_hessian([fj.gxx, fj.gxy, fj.gyy], nu);
        let a = q.cbrt() * fk.powf((1.0 - 2.0 * p) / 3.0) * nn;
        let b = fk.powf(-0.5 * p) * nt;
        let c = fk.powf(-(1.0 + p) / 3.0) * tt / q.cbrt();
        let (lo, hi) = sym_eig(a, b, c);
        report.f_matrix_eig.push(lo);
        report.f_matrix_eig.push(hi);

        if dist[k] >= band {
            let hk = sol.h.values()[k];
            report.det_m_identity = report.det_m_identity.max((e.det_m - hk).abs() / hk);
            report.f_matrix_identity = report.f_matrix_identity.max((a * c - b * b - hk).abs() / hk);
        }
    }
    report.empty = report.nodes == 0;

    if let Some(iface) = sol.interface.as_ref().filter(|i| !i.is_empty()) {
        for &gn in &iface.g_nu {
            report.gradient.push(gn);
            report.q_interface.push(theta * gn * gn);
        }
        let hv = |pt: [f64; 2]| forcing_near(&sol.h, pt);
        report.free_boundary_sup = Some(free_boundary_relation(iface, hv, pack).sup);

        match build_patches(sol, opts) {
            Ok(patches) => {
                let reports = hodograph_suite(sol, &patches, opts);
                for (i, r) in reports.into_iter().enumerate() {
                    match r {
                        Ok(r) => report.patches.push(r),
                        Err(e) => report.patch_errors.push(format!("patch {i}: {e}")),
                    }
                }
            }
            Err(e) => report.patch_errors.push(e.to_string()),
        }
    } else {
        report.patch_errors.push("no interface".into());
    }
    for r in &report.patches {
        report.patch_a_eig.merge(&r.a_eig);
        report.patch_b.merge(&r.b);
        for (m, v) in report.holder_max.iter_mut().zip(r.holder) {
            *m = m.max(v);
        }
    }
    Ok(report)
}

/// Forcing at a point: bilinear where possible, else the nearest interior
/// node value.
fn forcing_near(h: &ScalarField2D, p: [f64; 2]) -> f64 {
    if let Some(v) = h.interpolate(p) {
        return v;
    }
    let mut best = (f64::INFINITY, f64::NAN);
    for k in 0..h.len() {
        if h.kind(k) == NodeKind::Interior {
            let q = h.point(k);
            let d = (q[0] - p[0]).hypot(q[1] - p[1]);
            if d < best.0 {
                best = (d, h.values()[k]);
            }
        }
    }
    best.1
}

/// Patch half-width used for `sol`: the requested one (or the grid default)
/// capped at half the smallest radius of curvature of the interface.
pub fn patch_eta(sol: &PressureSolution, opts: &DiagnosticsOptions) -> f64 {
    let eta = opts.eta.unwrap_or_else(|| default_eta(sol));
    let kmax = sol
        .interface
        .as_ref()
        .map(|i| i.kappa.iter().fold(0.0f64, |m, k| m.max(k.abs())))
        .unwrap_or(0.0);
    if kmax > 0.0 {
        eta.min(0.5 / kmax)
    } else {
        eta
    }
}

/// Hodograph patches at `opts.patches` interface vertices spread evenly in
/// angle about the interface centroid.
pub fn build_patches(sol: &PressureSolution, opts: &DiagnosticsOptions) -> Result<Vec<HodographPatch>> {
    let iface = sol.interface.as_ref().ok_or(Error::EmptyVanishingSet)?;
    if iface.is_empty() || opts.patches == 0 {
        return Err(Error::EmptyVanishingSet);
    }
    let eta = patch_eta(sol, opts);
    let c = iface.centroid();
    let bases: Vec<[f64; 2]> = (0..opts.patches)
        .map(|i| {
            // offset keeps the bases off the grid axes
            let a = (i as f64 + 0.15) * std::f64::consts::TAU / opts.patches as f64;
            iface.vertices[iface.nearest_vertex([c[0] + a.cos(), c[1] + a.sin()])]
        })
        .collect();
    let popts = PatchOptions {
        nodes_s: opts.nodes_s,
        nodes_y: opts.nodes_y,
        ..PatchOptions::new(eta)
    };
    par_map(&bases, opts.threads, |&b| {
        let mut o = popts.clone();
        o.normal = Some([b[0] - c[0], b[1] - c[1]]);
        patch_from_solution(sol, b, &o)
    })
    .into_iter()
    .collect()
}

/// Entries `(a11, a12, a22)` of the coefficient matrix
/// `A = q_z^{-4} [[-q_yy, sqrt(z) q_zy], [sqrt(z) q_zy, theta q_z - z q_zz]]`.
#[inline]
pub fn coefficient_matrix(patch: &HodographPatch, i: usize, theta: f64) -> (f64, f64, f64) {
    let w = patch.qz[i].powi(4);
    (
        -patch.qyy[i] / w,
        patch.sqzqzy[i] / w,
        (theta * patch.qz[i] - patch.zqzz[i]) / w,
    )
}

/// First-order coefficient `b = (4 z det D^2 q - 3 theta q_z q_yy) / q_z^5`.
#[inline]
pub fn coefficient_b(patch: &HodographPatch, i: usize, theta: f64) -> f64 {
    (4.0 * patch.z_det(i) - 3.0 * theta * patch.qz[i] * patch.qyy[i]) / patch.qz[i].powi(5)
}

/// Variant `b1 = (4 z det D^2 q - (3 theta + 1) q_z q_yy) / q_z^5`.
#[inline]
pub fn coefficient_b1(patch: &HodographPatch, i: usize, theta: f64) -> f64 {
    (4.0 * patch.z_det(i) - (3.0 * theta + 1.0) * patch.qz[i] * patch.qyy[i]) / patch.qz[i].powi(5)
}

/// Coefficient reports for patches built on `sol`.
pub fn hodograph_suite(
    sol: &PressureSolution,
    patches: &[HodographPatch],
    opts: &DiagnosticsOptions,
) -> Vec<Result<PatchReport>> {
    let sampler = GridSampler::new(sol);
    let iface = sol.interface.as_ref();
    let band = opts.band * sol.spacing();
    let indexed: Vec<(usize, &HodographPatch)> = patches.iter().enumerate().collect();
    par_map(&indexed, opts.threads, |&(i, patch)| {
        let near = |p: [f64; 2]| iface.map(|f| f.distance(p) < band).unwrap_or(false);
        let seed = opts.seed.wrapping_add(i as u64);
        patch_report(patch, &sol.pack, &sampler, &near, opts, seed)
    })
}

/// Coefficient report of one patch. `in_band` marks physical points too
/// close to the interface for the identity checks; `sampler` supplies the
/// primal derivatives for the `b` and trace cross-checks.
pub fn patch_report(
    patch: &HodographPatch,
    pack: &ExponentPack,
    sampler: &dyn PressureSampler,
    in_band: &dyn Fn([f64; 2]) -> bool,
    opts: &DiagnosticsOptions,
    seed: u64,
) -> Result<PatchReport> {
    let theta = pack.theta();
    let mut a_eig = Range::empty();
    let mut b_range = Range::empty();
    let mut b1_range = Range::empty();
    let (mut det_identity, mut b_identity, mut b_interface, mut trace_identity) = (0.0f64, 0.0f64, 0.0f64, 0.0f64);
    let mut checked = 0;
    for k in 0..patch.rows() {
        for j in 0..patch.cols() {
            let i = patch.idx(k, j);
            let (a11, a12, a22) = coefficient_matrix(patch, i, theta);
            let (lo, hi) = sym_eig(a11, a12, a22);
            a_eig.push(lo);
            a_eig.push(hi);
            let b = coefficient_b(patch, i, theta);
            b_range.push(b);
            b1_range.push(coefficient_b1(patch, i, theta));
            let h = patch.forcing[i];
            if patch.z[k] == 0.0 {
                let expected = 3.0 * h / patch.qz[i];
                b_interface = b_interface.max((b - expected).abs() / expected);
            }
            let pt = patch.physical[i];
            if in_band(pt) {
                continue;
            }
            let Some(jet) = sampler.jet(pt) else { continue };
            let jet = jet.rotated(&patch.frame);
            checked += 1;
            let w4 = patch.qz[i].powi(4);
            det_identity = det_identity.max(((a11 * a22 - a12 * a12) * w4 - h).abs() / h);
            let other = jet.gx * (3.0 * h + jet.g * jet.det_hessian());
            b_identity = b_identity.max((b - other).abs() / other.abs());
            let tr = a11 + a22;
            let expected = trace_from_jet(&jet, theta);
            trace_identity = trace_identity.max((tr - expected).abs() / expected.abs());
        }
    }
    let nodes = patch.nodes();
    let sep = 2.0 * patch.eta / opts.nodes_s.max(1) as f64;
    let fields = [&patch.qz, &patch.qy, &patch.zqzz, &patch.sqzqzy, &patch.qyy];
    let mut holder = [0.0; 5];
    for (h, f) in holder.iter_mut().zip(fields) {
        *h = holder_seminorm_s(&nodes, f, opts.alpha, sep)?;
    }
    let linearization_order = if opts.linearization_check {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dir = random_direction(patch, &mut rng);
        Some(linearization_consistency(patch, pack, &dir, &[1e-3, 1e-4, 1e-5])?.order)
    } else {
        None
    };
    Ok(PatchReport {
        base: patch.base,
        eta: patch.eta,
        a_eig,
        b: b_range,
        b1: b1_range,
        det_identity,
        b_identity,
        b_interface,
        trace_identity,
        checked_nodes: checked,
        holder,
        linearization_order,
    })
}

/// Trace of `A` written through the pressure jet in the patch frame. With
/// `x = q(z, y)` the inverse of `g(x, y) = z` one has `q_z = 1/g_x`,
/// `q_y = -g_y/g_x`, `q_zz = -g_xx/g_x^3`, `q_zy = (g_y g_xx - g_x g_xy)/g_x^3`
/// and `q_yy = -(g_x^2 g_yy - 2 g_x g_y g_xy + g_y^2 g_xx)/g_x^3`.
pub fn trace_from_jet(j: &Jet, theta: f64) -> f64 {
    let gx3 = j.gx.powi(3);
    let qz = 1.0 / j.gx;
    let qzz = -j.gxx / gx3;
    let qyy = -(j.gx * j.gx * j.gyy - 2.0 * j.gx * j.gy * j.gxy + j.gy * j.gy * j.gxx) / gx3;
    (-qyy + theta * qz - j.g * qzz) / qz.powi(4)
}

/// Smooth direction field on a patch: a random combination of low-degree
/// polynomials and one trigonometric mode in the normalized coordinates
/// `z / eta^2` and `(y - y0) / eta`, scaled by `eta`.
pub fn random_direction(patch: &HodographPatch, rng: &mut impl Rng) -> Vec<f64> {
    let c: Vec<f64> = (0..8).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let (ph, om) = (rng.gen_range(0.0..std::f64::consts::TAU), rng.gen_range(0.5..2.0));
    let e = patch.eta;
    let mut out = Vec::with_capacity(patch.len());
    for k in 0..patch.rows() {
        for j in 0..patch.cols() {
            let zz = patch.z[k] / (e * e);
            let yy = (patch.y[j] - patch.y0) / e;
            let v = c[0]
                + c[1] * zz
                + c[2] * yy
                + c[3] * zz * yy
                + c[4] * yy * yy
                + c[5] * zz * zz
                + c[6] * (om * yy + ph).sin()
                + c[7] * (om * zz).cos();
            out.push(e * v);
        }
    }
    out
}

/// `L_q(dq)` assembled directly:
/// `[-z q_yy dq_zz + 2 z q_zy dq_zy + (theta q_z - z q_zz) dq_yy] / q_z^4 + b dq_z`.
pub fn linearized_apply(patch: &HodographPatch, pack: &ExponentPack, direction: &[f64]) -> Result<Vec<f64>> {
    let d = patch.with_values(direction.to_vec())?;
    let theta = pack.theta();
    Ok((0..patch.len())
        .map(|i| {
            let qz = patch.qz[i];
            let second = -patch.qyy[i] * d.zqzz[i]
                + 2.0 * patch.sqzqzy[i] * d.sqzqzy[i]
                + (theta * qz - patch.zqzz[i]) * d.qyy[i];
            second / qz.powi(4) + coefficient_b(patch, i, theta) * d.qz[i]
        })
        .collect())
}

/// `L_q(dq)` in canonical form `z a11 dq_zz + 2 sqrt(z) a12 dq_zy + a22 dq_yy
/// + b dq_z`, assembled from the coefficient matrix and `b`.
pub fn linearized_apply_canonical(
    patch: &HodographPatch,
    pack: &ExponentPack,
    direction: &[f64],
) -> Result<Vec<f64>> {
    let d = patch.with_values(direction.to_vec())?;
    let theta = pack.theta();
    Ok((0..patch.len())
        .map(|i| {
            let (a11, a12, a22) = coefficient_matrix(patch, i, theta);
            a11 * d.zqzz[i] + 2.0 * a12 * d.sqzqzy[i] + a22 * d.qyy[i] + coefficient_b(patch, i, theta) * d.qz[i]
        })
        .collect())
}

/// Finite-difference consistency of [`linearized_apply`] with the
/// nonlinear operator.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LinearizationCheck {
    pub eps: Vec<f64>,
    /// Sup-norm defect `|(N(q + eps dq) - N(q)) / eps - L_q dq|` per `eps`.
    pub defect: Vec<f64>,
    /// Least-squares slope of `log defect` against `log eps`.
    pub order: f64,
}

pub fn linearization_consistency(
    patch: &HodographPatch,
    pack: &ExponentPack,
    direction: &[f64],
    eps: &[f64],
) -> Result<LinearizationCheck> {
    if eps.len() < 2 || eps.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::param("eps", "need at least two positive step sizes"));
    }
    let theta = pack.theta();
    let lin = linearized_apply(patch, pack, direction)?;
    let base: Vec<f64> = (0..patch.len()).map(|i| patch.operator(i, theta)).collect();
    let mut defect = Vec::with_capacity(eps.len());
    for &e in eps {
        let moved: Vec<f64> = patch.q.iter().zip(direction).map(|(q, d)| q + e * d).collect();
        let pm = patch.with_values(moved)?;
        let sup = (0..patch.len())
            .map(|i| ((pm.operator(i, theta) - base[i]) / e - lin[i]).abs())
            .fold(0.0f64, f64::max);
        defect.push(sup);
    }
    let rows: Vec<(Vec<f64>, f64, f64)> = eps
        .iter()
        .zip(&defect)
        .map(|(e, d)| (vec![1.0, e.ln()], d.max(f64::MIN_POSITIVE).ln(), 1.0))
        .collect();
    let order = weighted_lsq(&rows, 2).map(|c| c[1]).unwrap_or(f64::NAN);
    Ok(LinearizationCheck {
        eps: eps.to_vec(),
        defect,
        order,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::ConvexDomain;

    fn square_field(n: usize, f: impl Fn(f64, f64) -> f64) -> ScalarField2D {
        let spacing = 2.0 / (n - 1) as f64;
        let base = ScalarField2D::rectangular(n, [-1.0, -1.0], spacing).unwrap();
        base.sample(|p| f(p[0], p[1]))
    }

    #[test]
    fn operator_on_quadratic_and_linear() {
        let pack = ExponentPack::new(1.0).unwrap();
        let th = pack.theta();
        let g = square_field(21, |x, y| 0.5 * (x * x + y * y) + 0.1);
        let pg = operator_p(&g, &pack);
        for k in 0..g.len() {
            if g.kind(k) == NodeKind::Interior {
                let [x, y] = g.point(k);
                let r2 = x * x + y * y;
                let want = (0.5 * r2 + 0.1) + th * r2;
                assert!((pg.values()[k] - want).abs() < 1e-10, "{} vs {want}", pg.values()[k]);
            }
        }
        let g = square_field(21, |x, _| 0.7 * x + 2.0);
        let pg = operator_p(&g, &pack);
        assert!(pg.values().iter().filter(|v| v.is_finite()).all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn level_term_frame_form_and_q_by_sampling() {
        let j = Jet {
            g: 0.7,
            gx: 0.4,
            gy: -1.1,
            gxx: 1.3,
            gxy: 0.2,
            gyy: 0.9,
        };
        let th = 2.0;
        let e = node_estimate(&j, th).unwrap();
        assert!((e.g_term - level_term(&j)).abs() < 1e-12);
        let brute = (0..360)
            .map(|d| {
                let a = (d as f64).to_radians();
                let (c, s) = (a.cos(), a.sin());
                let dgg = c * c * j.gxx + 2.0 * c * s * j.gxy + s * s * j.gyy;
                let dg = c * j.gx + s * j.gy;
                j.g * dgg + th * dg * dg
            })
            .fold(f64::NEG_INFINITY, f64::max);
        assert!((brute - e.q).abs() < 1e-3 * e.q.abs());
        assert!(brute <= e.q + 1e-12);
        // det M = P[g]
        assert!((e.det_m - operator_p_jet(&j, th)).abs() < 1e-12);
    }

    #[test]
    fn operator_is_homogeneous_of_degree_three() {
        let pack = ExponentPack::new(0.5).unwrap();
        let g = square_field(17, |x, y| (x - 0.1).powi(2) + 0.3 * y * y + 0.2 * x * y + 0.5);
        // every term carries three factors of g
        let c = 1.7;
        let a = operator_p(&g, &pack);
        let b = operator_p(&g.map(|v| c * v), &pack);
        for (x, y) in a.values().iter().zip(b.values()) {
            if x.is_finite() {
                assert!((y - c * c * c * x).abs() < 1e-10 * (1.0 + x.abs()), "{x} {y}");
            }
        }
    }

    #[test]
    fn comparison_detects_lowered_disk() {
        let d = ConvexDomain::disk([0.0, 0.0], 1.0).unwrap();
        let g = crate::grid::make_grid(&d, 33).unwrap().sample(|p| 1.0 + p[0] * p[0] + p[1] * p[1]);
        let same = comparison_check(&g, &g, 0.0).unwrap();
        assert!(same.passed());
        assert_eq!(same.max_excess, 0.0);

        let mut low = g.clone();
        let centre = [0.3, -0.2];
        for k in 0..low.len() {
            let p = low.point(k);
            if (p[0] - centre[0]).hypot(p[1] - centre[1]) < 0.25 {
                low.values_mut()[k] *= 0.5;
            }
        }
        let r = comparison_check(&low, &g, 1e-12).unwrap();
        assert_eq!(r.status, ComparisonStatus::ConclusionViolated);
        let inside = (0..g.len())
            .filter(|&k| {
                let p = g.point(k);
                g.kind(k) == NodeKind::Interior && (p[0] - centre[0]).hypot(p[1] - centre[1]) < 0.25
            })
            .count();
        assert_eq!(r.violations.len(), inside);
        let map = r.violation_map(&low, &g);
        assert!(map.values().iter().filter(|v| **v > 0.0).count() == inside);
    }

    #[test]
    fn comparison_flags_hypotheses_separately() {
        let d = ConvexDomain::disk([0.0, 0.0], 1.0).unwrap();
        let upper = crate::grid::make_grid(&d, 33).unwrap().sample(|p| (p[0] * p[0] + p[1] * p[1] - 0.25).max(0.0));
        let lower = upper.map(|v| 0.5 * v + 0.01);
        let r = comparison_check(&upper, &lower, 1e-12).unwrap();
        assert_eq!(r.status, ComparisonStatus::HypothesisViolated);
        assert!(!r.support_violations.is_empty());
        assert!(r.boundary_violations.is_empty());
    }

    #[test]
    fn convexity_witness_finds_dent() {
        let g = square_field(21, |x, y| x * x + y * y);
        assert!(convexity_witness(&g, 1e-9).is_none());
        let mut dented = g.clone();
        let k = dented.idx(10, 10);
        dented.values_mut()[k] += 0.05;
        assert_eq!(convexity_witness(&dented, 1e-9).unwrap().0, k);
    }

    #[test]
    fn sym_eig_matches_trace_and_det() {
        let (lo, hi) = sym_eig(2.0, 0.5, -1.0);
        assert!((lo + hi - 1.0).abs() < 1e-14);
        assert!((lo * hi - (-2.0 - 0.25)).abs() < 1e-14);
    }
}
