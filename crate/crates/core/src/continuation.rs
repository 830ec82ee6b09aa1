//! Method of continuity in the forcing: the explicit radial supersolution
//! `psi = c1 (|P|^2 - rho^2)_+^q`, its forcing `hbar = det D^2 psi / psi^p`,
//! and the march through `h_t = (1 - t) hbar + t` from `t = 0` to `t = 1`.

use serde::{Deserialize, Serialize};

use crate::diagnostics::{
    comparison_check, convexity_witness, default_convexity_slack, estimate_suite, vanishing_set_growth,
    DiagnosticsOptions, EstimateReport,
};
use crate::error::{Error, Result};
use crate::grid::{make_grid, BoundaryData, ConvexDomain, NodeKind, ScalarField2D};
use crate::solver::{solve_ma_fn, PressureSolution, SolveConfig};
use crate::ExponentPack;

/// Radial supersolution centred at the origin.
#[derive(Clone, Debug)]
pub struct Supersolution {
    pub pack: ExponentPack,
    pub c1: f64,
    pub rho: f64,
    /// Lower forcing bound: `lambda < hbar < 1` on the positivity set.
    pub lambda: f64,
    /// Achieved range of `hbar` over the positivity set inside the domain.
    pub ratio_min: f64,
    pub ratio_max: f64,
    /// Whether `c1` was raised so that `psi` meets the boundary data.
    pub matched: bool,
    pub psi: ScalarField2D,
    pub hbar: ScalarField2D,
}

/// Options of [`build_supersolution`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SupersolutionConfig {
    pub rho: f64,
    pub lambda: f64,
    /// Raise `c1` until `psi` touches the boundary data from below, so the
    /// march starts exactly at `psi` for radially constant data.
    pub match_boundary: bool,
}

impl Default for SupersolutionConfig {
    fn default() -> Self {
        Self {
            rho: 0.3,
            lambda: 1e-3,
            match_boundary: true,
        }
    }
}

/// `det D^2 psi / psi^p` for `psi = c1 (r^2 - rho^2)^q` at `r > rho`:
/// `4 q^2 c1^(2-p) ((2q - 1) r^2 - rho^2)`.
pub fn supersolution_ratio(pack: &ExponentPack, c1: f64, rho: f64, r: f64) -> f64 {
    let q = pack.q();
    4.0 * q * q * c1.powf(2.0 - pack.p()) * ((2.0 * q - 1.0) * r * r - rho * rho)
}

impl Supersolution {
    pub fn psi_at(&self, p: [f64; 2]) -> f64 {
        let s = p[0] * p[0] + p[1] * p[1] - self.rho * self.rho;
        if s <= 0.0 {
            0.0
        } else {
            self.c1 * s.powf(self.pack.q())
        }
    }

    /// `hbar` at a point; inside the vanishing disk, where the ratio is not
    /// defined, it is continued by its value on the circle `|P| = rho`.
    pub fn hbar_at(&self, p: [f64; 2]) -> f64 {
        let r = p[0].hypot(p[1]).max(self.rho);
        supersolution_ratio(&self.pack, self.c1, self.rho, r)
    }

    /// Forcing of the family at parameter `t`.
    pub fn forcing_value(&self, t: f64, p: [f64; 2]) -> f64 {
        (1.0 - t) * self.hbar_at(p) + t
    }
}

/// Nodewise `(1 - t) hbar + t`.
pub fn forcing_at(t: f64, hbar: &ScalarField2D) -> Result<ScalarField2D> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::ParameterOutOfRange(t));
    }
    Ok(hbar.map(|h| (1.0 - t) * h + t))
}

/// Builds `psi` on the grid of `n` nodes.
///
/// `c1` is first bisected (in `log c1`) until the ratio lies in
/// `(2 lambda, 1/2)` on the positivity set. With `match_boundary`, `c1` is
/// then raised to the largest value with `psi <= phi` on the boundary; the
/// ratio must stay below 1. Without it, `phi >= psi` is only verified.
pub fn build_supersolution(
    pack: &ExponentPack,
    domain: &ConvexDomain,
    boundary: &BoundaryData,
    cfg: &SupersolutionConfig,
    n: usize,
) -> Result<Supersolution> {
    let rho = cfg.rho;
    let lambda = cfg.lambda;
    if !(rho > 0.0) || !(lambda > 0.0 && lambda < 0.25) {
        return Err(Error::param("supersolution", "need rho > 0 and 0 < lambda < 1/4"));
    }
    let clearance = (0..256)
        .map(|k| {
            let a = k as f64 * std::f64::consts::TAU / 256.0;
            domain.ray_exit([0.0, 0.0], [a.cos(), a.sin()])
        })
        .fold(f64::INFINITY, f64::min);
    if !domain.contains([0.0, 0.0]) || clearance <= rho {
        return Err(Error::NoAdmissibleAmplitude(format!(
            "the disk of radius {rho} about the origin is not inside the domain"
        )));
    }
    let r_max = domain.max_radius();
    let shape = |r: f64| supersolution_ratio(pack, 1.0, rho, r);
    let (s_lo, s_hi) = (shape(rho), shape(r_max));
    let expo = 2.0 - pack.p();
    let (mut lo, mut hi) = (-60.0f64, 60.0f64);
    let mut c1 = None;
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let k = (mid * expo).exp();
        if k * s_lo <= 2.0 * lambda {
            lo = mid;
        } else if k * s_hi >= 0.5 {
            hi = mid;
        } else {
            c1 = Some(mid.exp());
            break;
        }
    }
    let mut c1 = c1.ok_or_else(|| {
        Error::NoAdmissibleAmplitude(format!(
            "ratio spread {:.4} exceeds 1/(4 lambda) = {:.4}",
            s_hi / s_lo,
            0.25 / lambda
        ))
    })?;

    // boundary dominance, and the largest admissible lift
    let mut lift = f64::INFINITY;
    let mut worst = None;
    for (&s, &phi) in boundary.params().iter().zip(boundary.values()) {
        let p = domain.boundary_point(s);
        let base = p[0] * p[0] + p[1] * p[1] - rho * rho;
        let psi = c1 * base.powf(pack.q());
        if phi < psi {
            worst = Some((p, phi, psi));
        }
        lift = lift.min(phi / base.powf(pack.q()));
    }
    if let Some((p, phi, psi)) = worst {
        return Err(Error::BoundaryDominance {
            x: p[0],
            y: p[1],
            phi,
            psi,
        });
    }
    if cfg.match_boundary {
        c1 = lift;
    }
    let ratio_min = supersolution_ratio(pack, c1, rho, rho);
    let ratio_max = supersolution_ratio(pack, c1, rho, r_max);
    if ratio_max >= 1.0 {
        return Err(Error::NoAdmissibleAmplitude(format!(
            "matching the boundary data needs c1 = {c1:.6e}, where the ratio reaches {ratio_max:.4} >= 1"
        )));
    }
    let grid = make_grid(domain, n)?;
    let mut sup = Supersolution {
        pack: *pack,
        c1,
        rho,
        lambda,
        ratio_min,
        ratio_max,
        matched: cfg.match_boundary,
        psi: grid.clone(),
        hbar: grid.clone(),
    };
    sup.psi = grid.sample_indexed(|k| {
        let p = grid.point(k);
        if grid.kind(k) == NodeKind::Boundary && cfg.match_boundary {
            boundary.eval(p)
        } else {
            sup.psi_at(p)
        }
    });
    sup.hbar = grid.sample_indexed(|k| sup.hbar_at(grid.point(k)));
    Ok(sup)
}

/// Hypothesis flags of one state.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct HypothesisFlags {
    /// The domain is bounded, so it fits the unit ball after the scaling
    /// `f(x) -> L^(-4/(2-p)) f(L x)` that leaves the equation invariant.
    pub h1: bool,
    /// The vanishing set is nonempty, stays off the boundary band and
    /// contains the disk of radius `rho` up to one cell.
    pub h2: bool,
    /// The density is discretely convex and the matrix `M` is positive
    /// definite on the positivity set.
    pub h3: bool,
    /// The interface is extracted and every hodograph patch has positive
    /// definite coefficients and `b > 0`.
    pub h4: bool,
}

impl HypothesisFlags {
    pub fn all(&self) -> bool {
        self.h1 && self.h2 && self.h3 && self.h4
    }
}

/// Options of [`run_continuation`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ContinuationConfig {
    pub delta0: f64,
    pub delta_min: f64,
    /// Allowed factor by which gradient bounds and the smallest eigenvalue of
    /// `M` may degrade against the first state.
    pub max_degradation: f64,
    /// Absolute slack of the comparison `f <= psi + tol`, as a fraction of
    /// the largest boundary value.
    pub comparison_tol: f64,
    /// Parameters at which the solution is kept for restarts.
    pub checkpoints: Vec<f64>,
    pub solver: SolveConfig,
    pub diagnostics: DiagnosticsOptions,
}

impl Default for ContinuationConfig {
    fn default() -> Self {
        Self {
            delta0: 0.1,
            delta_min: 1e-3,
            max_degradation: 2.0,
            comparison_tol: 1e-3,
            checkpoints: Vec::new(),
            solver: SolveConfig::default(),
            diagnostics: DiagnosticsOptions::default(),
        }
    }
}

impl ContinuationConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta0 > 0.0 && self.delta0 <= 1.0) {
            return Err(Error::param("delta0", "must lie in (0, 1]"));
        }
        if !(self.delta_min > 0.0 && self.delta_min <= self.delta0) {
            return Err(Error::param("delta_min", "must lie in (0, delta0]"));
        }
        if !(self.max_degradation >= 1.0) {
            return Err(Error::param("max_degradation", "must be at least 1"));
        }
        if self.checkpoints.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::param("checkpoints", "values must lie in [0, 1]"));
        }
        self.solver.validate()
    }
}

/// One accepted state of the march.
#[derive(Clone, Debug)]
pub struct ContinuationState {
    pub t: f64,
    /// Step that led to this state (0 for the first).
    pub delta: f64,
    pub forcing: ScalarField2D,
    pub solution: PressureSolution,
    pub report: EstimateReport,
    pub flags: HypothesisFlags,
}

/// One ledger line: every attempted state, accepted or not.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LedgerRecord {
    pub attempt: usize,
    pub t: f64,
    pub delta: f64,
    pub accepted: bool,
    pub reasons: Vec<String>,
    pub converged: bool,
    pub sweeps: usize,
    pub residual: f64,
    pub last_update: f64,
    pub flags: HypothesisFlags,
    pub gradient_min: f64,
    pub gradient_max: f64,
    pub m_eig_min: f64,
    pub m_eig_max: f64,
    pub patch_a_eig_min: f64,
    pub patch_b_min: f64,
    pub free_boundary_sup: Option<f64>,
    pub det_m_identity: f64,
    /// Largest `f - psi` over the grid.
    pub comparison_excess: f64,
    pub comparison_passed: bool,
    /// Nodes where the vanishing set shrank against the previous state.
    pub vanishing_growth_violations: usize,
    pub vanishing_nodes: usize,
}

/// Saved solution for restarts.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub t: f64,
    pub f: ScalarField2D,
}

#[derive(Clone, Debug)]
pub struct ContinuationRun {
    pub states: Vec<ContinuationState>,
    pub ledger: Vec<LedgerRecord>,
    pub checkpoints: Vec<Checkpoint>,
    /// Largest accepted parameter, `None` if not even the start was accepted.
    pub reached: Option<f64>,
}

impl ContinuationRun {
    pub fn complete(&self) -> bool {
        self.reached == Some(1.0)
    }

    /// Ledger as JSON lines; deterministic for a deterministic run.
    pub fn write_ledger<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        for r in &self.ledger {
            serde_json::to_writer(&mut w, r)?;
            writeln!(w)?;
        }
        Ok(())
    }
}

struct Baseline {
    grad_min: f64,
    grad_max: f64,
    m_eig_min: f64,
}

fn hypothesis_flags(
    sol: &PressureSolution,
    report: &EstimateReport,
    domain: &ConvexDomain,
    rho: f64,
) -> HypothesisFlags {
    let f = &sol.f;
    let delta = sol.spacing();
    let h1 = domain.max_radius().is_finite() && domain.area() > 0.0;

    let mut vanishing = 0;
    let mut h2 = true;
    for k in 0..f.len() {
        if f.kind(k) != NodeKind::Interior {
            continue;
        }
        let p = f.point(k);
        let v = f.values()[k];
        if v <= 0.0 {
            vanishing += 1;
            let off_boundary = (-1..=1).all(|dj| {
                (-1..=1).all(|di| f.neighbour(k, di, dj).map(|kk| f.kind(kk) == NodeKind::Interior).unwrap_or(false))
            });
            h2 &= off_boundary;
        } else if p[0].hypot(p[1]) < rho - delta {
            h2 = false;
        }
    }
    h2 &= vanishing > 0;

    let h3 = convexity_witness(f, default_convexity_slack(f)).is_none() && report.m_eig.min > 0.0;
    let h4 = sol.interface.is_some()
        && report.complete()
        && report.patch_a_eig.min > 0.0
        && report.patch_b.min > 0.0;
    HypothesisFlags { h1, h2, h3, h4 }
}

struct Evaluated {
    state: ContinuationState,
    record: LedgerRecord,
}

#[allow(clippy::too_many_arguments)]
fn evaluate(
    sup: &Supersolution,
    domain: &ConvexDomain,
    sol: PressureSolution,
    t: f64,
    delta: f64,
    attempt: usize,
    prev: Option<&ScalarField2D>,
    baseline: Option<&Baseline>,
    cfg: &ContinuationConfig,
    comparison_tol: f64,
) -> Result<Evaluated> {
    let report = estimate_suite(&sol, &cfg.diagnostics)?;
    let flags = hypothesis_flags(&sol, &report, domain, sup.rho);
    let cmp = comparison_check(&sup.psi, &sol.f, comparison_tol)?;
    let growth = match prev {
        Some(pf) => vanishing_set_growth(pf, &sol.f)?.len(),
        None => 0,
    };

    let mut reasons = Vec::new();
    if !sol.report.converged {
        reasons.push("solver did not converge".to_string());
    }
    for (ok, name) in [(flags.h1, "H-1"), (flags.h2, "H-2"), (flags.h3, "H-3"), (flags.h4, "H-4")] {
        if !ok {
            reasons.push(format!("{name} failed"));
        }
    }
    if let Some(b) = baseline {
        let m = cfg.max_degradation;
        if report.gradient.min < b.grad_min / m || report.gradient.max > b.grad_max * m {
            reasons.push("gradient bounds degraded".to_string());
        }
        if report.m_eig.min < b.m_eig_min / m {
            reasons.push("smallest eigenvalue of M degraded".to_string());
        }
    }
    let record = LedgerRecord {
        attempt,
        t,
        delta,
        accepted: reasons.is_empty(),
        reasons,
        converged: sol.report.converged,
        sweeps: sol.report.sweeps,
        residual: sol.report.residual,
        last_update: sol.report.last_update,
        flags,
        gradient_min: report.gradient.min,
        gradient_max: report.gradient.max,
        m_eig_min: report.m_eig.min,
        m_eig_max: report.m_eig.max,
        patch_a_eig_min: report.patch_a_eig.min,
        patch_b_min: report.patch_b.min,
        free_boundary_sup: report.free_boundary_sup,
        det_m_identity: report.det_m_identity,
        comparison_excess: cmp.max_excess,
        comparison_passed: cmp.passed(),
        vanishing_growth_violations: growth,
        vanishing_nodes: sol.vanishing_count(),
    };
    let forcing = forcing_at(t, &sup.hbar)?;
    Ok(Evaluated {
        state: ContinuationState {
            t,
            delta,
            forcing,
            solution: sol,
            report,
            flags,
        },
        record,
    })
}

/// Marches from `t = 0` (or a checkpoint) to `t = 1`.
///
/// Each step re-solves warm-started from the previous density, runs the
/// estimate suite and accepts the state when the solver converged, the
/// hypothesis flags hold and the bounds did not degrade beyond
/// `max_degradation` against the first state. A rejected step halves
/// `delta`; the march stops when `delta` falls below `delta_min`.
pub fn run_continuation(
    sup: &Supersolution,
    domain: &ConvexDomain,
    boundary: &BoundaryData,
    cfg: &ContinuationConfig,
    start: Option<&Checkpoint>,
) -> Result<ContinuationRun> {
    cfg.validate()?;
    if sup.psi.n() != cfg.solver.n {
        return Err(Error::ShapeMismatch);
    }
    let pack = sup.pack;
    let tol = cfg.comparison_tol * boundary.values().iter().fold(0.0f64, |m, v| m.max(*v));
    let mut run = ContinuationRun {
        states: Vec::new(),
        ledger: Vec::new(),
        checkpoints: Vec::new(),
        reached: None,
    };
    let mut pending: Vec<f64> = cfg.checkpoints.clone();
    pending.sort_by(f64::total_cmp);

    let (t0, init) = match start {
        Some(c) => (c.t, &c.f),
        None => (0.0, &sup.psi),
    };
    if !(0.0..=1.0).contains(&t0) {
        return Err(Error::ParameterOutOfRange(t0));
    }
    let solve = |t: f64, init: &ScalarField2D| {
        let forcing = move |p: [f64; 2]| sup.forcing_value(t, p);
        solve_ma_fn(domain, boundary, &forcing, &pack, &cfg.solver, Some(init))
    };

    let first = evaluate(sup, domain, solve(t0, init)?, t0, 0.0, 0, None, None, cfg, tol)?;
    let accepted = first.record.accepted;
    run.ledger.push(first.record);
    if !accepted {
        return Ok(run);
    }
    let baseline = Baseline {
        grad_min: first.state.report.gradient.min,
        grad_max: first.state.report.gradient.max,
        m_eig_min: first.state.report.m_eig.min,
    };
    keep_checkpoints(&mut pending, &first.state, &mut run.checkpoints);
    run.states.push(first.state);
    run.reached = Some(t0);

    let mut t = t0;
    let mut delta = cfg.delta0;
    let mut attempt = 1;
    while t < 1.0 {
        let step = delta.min(1.0 - t);
        // Snap to a 1e-12 lattice so that t = 0.1 + 0.2 reads as 0.3.
        let t_new = if 1.0 - (t + step) < 1e-12 {
            1.0
        } else {
            ((t + step) * 1e12).round() / 1e12
        };
        let prev = &run.states.last().expect("at least one state").solution.f;
        let outcome = match solve(t_new, prev) {
            Ok(sol) => Some(evaluate(
                sup,
                domain,
                sol,
                t_new,
                step,
                attempt,
                Some(prev),
                Some(&baseline),
                cfg,
                tol,
            )?),
            Err(e) => {
                log::warn!("solve at t = {t_new} failed: {e}");
                None
            }
        };
        attempt += 1;
        match outcome {
            Some(ev) if ev.record.accepted => {
                log::info!("accepted t = {t_new:.6} (delta {step:.3e})");
                run.ledger.push(ev.record);
                keep_checkpoints(&mut pending, &ev.state, &mut run.checkpoints);
                run.states.push(ev.state);
                t = t_new;
                run.reached = Some(t);
            }
            other => {
                if let Some(ev) = other {
                    log::info!("rejected t = {t_new:.6}: {:?}", ev.record.reasons);
                    run.ledger.push(ev.record);
                }
                delta *= 0.5;
                if delta < cfg.delta_min {
                    log::warn!("step size fell below {}; stopping at t = {t}", cfg.delta_min);
                    break;
                }
            }
        }
    }
    Ok(run)
}

fn keep_checkpoints(pending: &mut Vec<f64>, state: &ContinuationState, out: &mut Vec<Checkpoint>) {
    let mut hit = false;
    pending.retain(|&c| {
        let due = state.t >= c;
        hit |= due;
        !due
    });
    if hit {
        out.push(Checkpoint {
            t: state.t,
            f: state.solution.f.clone(),
        });
    }
}
