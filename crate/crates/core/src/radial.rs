//! Radial reduction `f'' f' / r = h0 f^p` with a free boundary at `r = rho`.
//!
//! The profile is launched just outside the interface from the two-term
//! expansion
//!
//! ```text
//! f(rho + s) = A s^q (1 + c1 s),
//! A  = (h0 rho / (q^2 (q - 1)))^{1/(2-p)},
//! c1 = q (q - 1) / (rho (6q - 4)),
//! ```
//!
//! obtained by matching the two lowest powers of `s` (the exponents agree
//! because `2q - 3 = p q`), and integrated outward with an embedded
//! Dormand-Prince 5(4) pair under pure relative error control.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{make_grid, ConvexDomain, DomainShape, ScalarField2D};
use crate::transforms::ExponentPack;

/// Offset of the launch point, relative to `rho`.
pub const LAUNCH_OFFSET: f64 = 1e-6;

fn check_params(p: f64, rho: f64, h0: f64) -> Result<ExponentPack> {
    let pack = ExponentPack::new(p)?;
    if !(rho > 0.0 && rho.is_finite()) {
        return Err(Error::param("rho", format!("need rho > 0, got {rho}")));
    }
    if !(h0 > 0.0 && h0.is_finite()) {
        return Err(Error::param("h0", format!("need h0 > 0, got {h0}")));
    }
    Ok(pack)
}

/// Coefficient `A` of the leading behaviour `f ~ A (r - rho)^q`.
pub fn leading_coefficient(p: f64, rho: f64, h0: f64) -> Result<f64> {
    let pack = check_params(p, rho, h0)?;
    let q = pack.q();
    Ok((h0 * rho / (q * q * (q - 1.0))).powf(1.0 / (2.0 - p)))
}

/// First correction `c1` in `f = A s^q (1 + c1 s + ...)`.
pub fn series_correction(p: f64, rho: f64) -> Result<f64> {
    let pack = check_params(p, rho, 1.0)?;
    let q = pack.q();
    Ok(q * (q - 1.0) / (rho * (6.0 * q - 4.0)))
}

/// Closed-form interface slope `(h0 rho / theta)^{1/3}` of the pressure.
pub fn interface_slope_closed_form(p: f64, rho: f64, h0: f64) -> Result<f64> {
    let pack = check_params(p, rho, h0)?;
    Ok((h0 * rho / pack.theta()).cbrt())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RadialSolution {
    pub pack: ExponentPack,
    pub rho: f64,
    pub h0: f64,
    pub outer_radius: f64,
    pub tol: f64,
    /// Leading coefficient `A`.
    pub leading: f64,
    pub r: Vec<f64>,
    pub f: Vec<f64>,
    pub fp: Vec<f64>,
    pub g: Vec<f64>,
    pub gp: Vec<f64>,
    /// Largest normalized embedded error estimate among accepted steps.
    pub max_step_error: f64,
    pub rejected_steps: usize,
}

#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct OracleSummary {
    pub p: f64,
    pub rho: f64,
    pub h0: f64,
    #[serde(rename = "A")]
    pub leading: f64,
    pub gprime: f64,
    pub gprime_closed_form: f64,
    pub fit_slope: f64,
    pub q: f64,
}

// Dormand-Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 1.0 / 5.0, 3.0 / 10.0, 4.0 / 5.0, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

/// Integrates the radial profile on `(rho, outer_radius]`.
pub fn solve_radial(p: f64, rho: f64, h0: f64, outer_radius: f64, tol: f64) -> Result<RadialSolution> {
    let pack = check_params(p, rho, h0)?;
    if !(outer_radius > rho) {
        return Err(Error::param("R", format!("need R > rho, got R = {outer_radius}")));
    }
    if !(tol > 0.0) {
        return Err(Error::param("tol", "must be positive"));
    }
    let q = pack.q();
    let a = leading_coefficient(p, rho, h0)?;
    let c1 = series_correction(p, rho)?;
    let eps = LAUNCH_OFFSET * rho;
    let f0 = a * eps.powf(q) * (1.0 + c1 * eps);
    let fp0 = a * (q * eps.powf(q - 1.0) + c1 * (q + 1.0) * eps.powf(q));
    if !(f0.is_normal() && fp0.is_normal()) {
        return Err(Error::Integration(format!(
            "launch values underflow at s = {eps:e} (f = {f0:e}, f' = {fp0:e})"
        )));
    }
    let rhs = |s: f64, y: [f64; 2]| -> [f64; 2] {
        let f = y[0].max(0.0);
        [y[1], (rho + s) * h0 * f.powf(p) / y[1]]
    };

    let span = outer_radius - rho;
    let h_max = span / 256.0;
    let mut s = eps;
    let mut y = [f0, fp0];
    let mut h = 0.01 * eps;
    let mut out_s = vec![s];
    let mut out_y = vec![y];
    let mut max_err = 0.0f64;
    let mut rejected = 0usize;
    while s < span {
        h = h.min(h_max).min(0.1 * s.max(eps)).min(span - s);
        if h < 1e-14 * s.max(1e-300) {
            return Err(Error::Integration(format!("step size collapsed at r = {}", rho + s)));
        }
        let mut k = [[0.0f64; 2]; 7];
        for st in 0..7 {
            let mut yy = y;
            for (prev, &coef) in A[st].iter().enumerate().take(st) {
                yy[0] += h * coef * k[prev][0];
                yy[1] += h * coef * k[prev][1];
            }
            k[st] = rhs(s + C[st] * h, yy);
        }
        let mut y5 = y;
        let mut y4 = y;
        for st in 0..7 {
            for c in 0..2 {
                y5[c] += h * B5[st] * k[st][c];
                y4[c] += h * B4[st] * k[st][c];
            }
        }
        let err = (0..2)
            .map(|c| (y5[c] - y4[c]).abs() / (tol * y5[c].abs().max(y[c].abs()) + 1e-300))
            .fold(0.0, f64::max);
        if !err.is_finite() || y5[1] <= 0.0 {
            h *= 0.25;
            rejected += 1;
            continue;
        }
        if err <= 1.0 {
            s += h;
            y = y5;
            max_err = max_err.max(err);
            out_s.push(s);
            out_y.push(y);
        } else {
            rejected += 1;
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
    }

    let r: Vec<f64> = out_s.iter().map(|s| rho + s).collect();
    let f: Vec<f64> = out_y.iter().map(|y| y[0]).collect();
    let fp: Vec<f64> = out_y.iter().map(|y| y[1]).collect();
    let (g, gp) = pressure_samples(&pack, &f, &fp);
    Ok(RadialSolution {
        pack,
        rho,
        h0,
        outer_radius,
        tol,
        leading: a,
        r,
        f,
        fp,
        g,
        gp,
        max_step_error: max_err,
        rejected_steps: rejected,
    })
}

fn pressure_samples(pack: &ExponentPack, f: &[f64], fp: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let q = pack.q();
    let c = q.powf(2.0 / 3.0) / q;
    let g = f.iter().map(|&v| pack.pressure(v)).collect();
    let gp = f
        .iter()
        .zip(fp)
        .map(|(&v, &d)| if v > 0.0 { c * v.powf(1.0 / q - 1.0) * d } else { 0.0 })
        .collect();
    (g, gp)
}

/// Pressure samples `(g(r_i), g'(r_i))` of a profile under the given
/// exponents.
pub fn radial_pressure(sol: &RadialSolution, pack: &ExponentPack) -> (Vec<f64>, Vec<f64>) {
    pressure_samples(pack, &sol.f, &sol.fp)
}

impl RadialSolution {
    fn ode_second(&self, r: f64, f: f64, fp: f64) -> f64 {
        if fp <= 0.0 {
            return 0.0;
        }
        r * self.h0 * f.max(0.0).powf(self.pack.p()) / fp
    }

    /// `(f, f')` at radius `r`: zero inside the interface, series between the
    /// interface and the launch point, Hermite interpolation of the samples
    /// beyond.
    pub fn eval(&self, r: f64) -> (f64, f64) {
        if r <= self.rho {
            return (0.0, 0.0);
        }
        let q = self.pack.q();
        if r <= self.r[0] {
            let s = r - self.rho;
            let c1 = series_correction(self.pack.p(), self.rho).unwrap_or(0.0);
            let a = self.leading;
            return (
                a * s.powf(q) * (1.0 + c1 * s),
                a * (q * s.powf(q - 1.0) + c1 * (q + 1.0) * s.powf(q)),
            );
        }
        let last = self.r.len() - 1;
        if r >= self.r[last] {
            let d = r - self.r[last];
            let fpp = self.ode_second(self.r[last], self.f[last], self.fp[last]);
            return (
                self.f[last] + self.fp[last] * d + 0.5 * fpp * d * d,
                self.fp[last] + fpp * d,
            );
        }
        let i = self.r.partition_point(|&x| x <= r).saturating_sub(1).min(last - 1);
        let (r0, r1) = (self.r[i], self.r[i + 1]);
        let h = r1 - r0;
        let t = (r - r0) / h;
        // cubic Hermite for f, and for f' using f'' from the ODE
        let (f0, f1, d0, d1) = (self.f[i], self.f[i + 1], self.fp[i], self.fp[i + 1]);
        let h00 = 2.0 * t.powi(3) - 3.0 * t * t + 1.0;
        let h10 = t.powi(3) - 2.0 * t * t + t;
        let h01 = -2.0 * t.powi(3) + 3.0 * t * t;
        let h11 = t.powi(3) - t * t;
        let f = h00 * f0 + h10 * h * d0 + h01 * f1 + h11 * h * d1;
        let s0 = self.ode_second(r0, f0, d0);
        let s1 = self.ode_second(r1, f1, d1);
        let fp = h00 * d0 + h10 * h * s0 + h01 * d1 + h11 * h * s1;
        (f, fp)
    }

    /// `(g, g')` at radius `r`.
    pub fn pressure_at(&self, r: f64) -> (f64, f64) {
        let (f, fp) = self.eval(r);
        let q = self.pack.q();
        if f <= 0.0 {
            return (0.0, 0.0);
        }
        (self.pack.pressure(f), q.powf(2.0 / 3.0) / q * f.powf(1.0 / q - 1.0) * fp)
    }

    /// `g'` and `g''` at radius `r > rho`, the latter from the pressure form
    /// of the radial equation `(g g'' + theta g'^2) g' / r = h0`.
    pub fn pressure_jet(&self, r: f64) -> (f64, f64, f64) {
        let (g, gp) = self.pressure_at(r);
        let theta = self.pack.theta();
        let gpp = if g > 0.0 && gp > 0.0 {
            (self.h0 * r / gp - theta * gp * gp) / g
        } else {
            0.0
        };
        (g, gp, gpp)
    }

    /// Interface slope `g'(rho+)`, extrapolated linearly from two points of
    /// the integrated profile close to the interface.
    pub fn interface_slope(&self) -> f64 {
        let s1 = 1e-4 * self.rho;
        let s2 = 2e-4 * self.rho;
        let (_, a) = self.pressure_at(self.rho + s1);
        let (_, b) = self.pressure_at(self.rho + s2);
        a - (b - a) * s1 / (s2 - s1)
    }

    /// Interface curvature of the pressure slope, `g''(rho+)`, from the
    /// series (needed to extend the pressure smoothly across the interface).
    pub fn interface_curvature(&self) -> f64 {
        let s1 = 1e-3 * self.rho;
        let s2 = 2e-3 * self.rho;
        let (_, a) = self.pressure_at(self.rho + s1);
        let (_, b) = self.pressure_at(self.rho + s2);
        (b - a) / (s2 - s1)
    }

    /// Least-squares slope of `log f` against `log(r - rho)` over
    /// `[s_lo, s_hi]`.
    pub fn fit_exponent(&self, s_lo: f64, s_hi: f64) -> f64 {
        let m = 64;
        let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
        for k in 0..m {
            let ls = s_lo.ln() + (s_hi.ln() - s_lo.ln()) * k as f64 / (m - 1) as f64;
            let (f, _) = self.eval(self.rho + ls.exp());
            let lf = f.ln();
            sx += ls;
            sy += lf;
            sxx += ls * ls;
            sxy += ls * lf;
        }
        let mf = m as f64;
        (mf * sxy - sx * sy) / (mf * sxx - sx * sx)
    }

    pub fn summary(&self) -> OracleSummary {
        OracleSummary {
            p: self.pack.p(),
            rho: self.rho,
            h0: self.h0,
            leading: self.leading,
            gprime: self.interface_slope(),
            gprime_closed_form: (self.h0 * self.rho / self.pack.theta()).cbrt(),
            fit_slope: self.fit_exponent(1e-3 * self.rho, 1e-1 * self.rho),
            q: self.pack.q(),
        }
    }

    /// Rotational extension onto a grid over a disk centred at the origin.
    pub fn to_field(&self, domain: &ConvexDomain, n: usize) -> Result<ScalarField2D> {
        radial_to_field(self, domain, n)
    }

    /// Writes `r,f,fprime,g,gprime` rows.
    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "r,f,fprime,g,gprime")?;
        for i in 0..self.r.len() {
            writeln!(
                w,
                "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                self.r[i], self.f[i], self.fp[i], self.g[i], self.gp[i]
            )?;
        }
        Ok(())
    }
}

pub fn radial_to_field(sol: &RadialSolution, domain: &ConvexDomain, n: usize) -> Result<ScalarField2D> {
    match domain.shape() {
        DomainShape::Disk { center, radius } if center[0] == 0.0 && center[1] == 0.0 => {
            if *radius > sol.outer_radius * (1.0 + 1e-12) {
                return Err(Error::DomainExceedsProfile {
                    domain: *radius,
                    profile: sol.outer_radius,
                });
            }
        }
        _ => {
            return Err(Error::param(
                "domain",
                "radial extension needs a disk centred at the origin",
            ))
        }
    }
    let grid = make_grid(domain, n)?;
    Ok(grid.sample(|p| sol.eval(p[0].hypot(p[1])).0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::hessian;

    #[test]
    fn leading_coefficients() {
        assert!((leading_coefficient(1.0, 1.0, 1.0).unwrap() - 1.0 / 18.0).abs() < 1e-15);
        assert!((leading_coefficient(0.5, 1.0, 1.0).unwrap() - 0.25f64.powf(2.0 / 3.0)).abs() < 1e-15);
        assert!((0.25f64.powf(2.0 / 3.0) - 0.396_850_262_992_049_9).abs() < 1e-15);
        for &(p, rho, h0) in &[(1.0, 2.0, 3.0), (0.3, 0.7, 0.2), (1.7, 1.3, 5.0)] {
            let a = leading_coefficient(p, rho, h0).unwrap();
            let a1 = leading_coefficient(p, 1.0, 1.0).unwrap();
            let expected = a1 * (h0 * rho).powf(1.0 / (2.0 - p));
            assert!((a - expected).abs() < 1e-13 * expected);
        }
        assert!(leading_coefficient(2.0, 1.0, 1.0).is_err());
        assert!(leading_coefficient(1.0, 0.0, 1.0).is_err());
        assert!(leading_coefficient(1.0, 1.0, -1.0).is_err());
    }

    /// Substituting the two-term series into the ODE leaves a residual of
    /// relative order s^2.
    #[test]
    fn series_balances_the_ode() {
        for &(p, rho, h0) in &[(1.0, 1.0, 1.0), (0.5, 1.0, 1.0), (1.5, 0.8, 2.0)] {
            let pack = ExponentPack::new(p).unwrap();
            let q = pack.q();
            let a = leading_coefficient(p, rho, h0).unwrap();
            let c = series_correction(p, rho).unwrap();
            let rel = |s: f64| {
                let f = a * s.powf(q) * (1.0 + c * s);
                let fp = a * (q * s.powf(q - 1.0) + c * (q + 1.0) * s.powf(q));
                let fpp = a * (q * (q - 1.0) * s.powf(q - 2.0) + c * (q + 1.0) * q * s.powf(q - 1.0));
                let lhs = fpp * fp;
                let rhs = (rho + s) * h0 * f.powf(p);
                ((lhs - rhs) / rhs).abs()
            };
            let (e1, e2) = (rel(1e-3), rel(5e-4));
            assert!(e1 < 1e-4, "{e1}");
            assert!(e1 / e2 > 3.0, "residual should shrink like s^2: {e1} {e2}");
        }
    }

    #[test]
    fn profile_near_interface_matches_series() {
        let sol = solve_radial(1.0, 1.0, 1.0, 2.0, 1e-10).unwrap();
        let (f, _) = sol.eval(1.01);
        assert!(((f / 1e-6) - 1.0 / 18.0).abs() < 0.005 * (1.0 / 18.0) * 1.01);
        let slope = sol.fit_exponent(1e-3, 1e-1);
        assert!((slope - 3.0).abs() < 0.06, "{slope}");
        assert!(sol.max_step_error <= 1.0);
        for w in sol.f.windows(2) {
            assert!(w[1] > w[0]);
        }
        for w in sol.fp.windows(2) {
            assert!(w[1] > w[0]);
        }
    }

    #[test]
    fn pressure_slope_two_routes() {
        for &(p, expected) in &[(1.0, 0.5f64.cbrt()), (0.5, 1.0)] {
            let sol = solve_radial(p, 1.0, 1.0, 2.0, 1e-10).unwrap();
            let pack = sol.pack;
            let via_a = pack.q().powf(2.0 / 3.0) * sol.leading.powf(1.0 / pack.q());
            assert!((via_a - expected).abs() < 1e-12);
            assert!((interface_slope_closed_form(p, 1.0, 1.0).unwrap() - expected).abs() < 1e-12);
            assert!((sol.interface_slope() - expected).abs() < 1e-4 * expected);
            let (_, gp) = radial_pressure(&sol, &pack);
            for w in gp.windows(2) {
                assert!(w[1] >= w[0] - 1e-12);
            }
        }
    }

    #[test]
    fn forcing_scaling_law() {
        let p = 1.0;
        let base = solve_radial(p, 1.0, 1.0, 2.0, 1e-10).unwrap();
        let doubled = solve_radial(p, 1.0, 2.0, 2.0, 1e-10).unwrap();
        let scale = 2f64.powf(1.0 / (2.0 - p));
        for &r in &[1.05, 1.3, 1.7, 2.0] {
            let a = base.eval(r).0 * scale;
            let b = doubled.eval(r).0;
            assert!((a - b).abs() < 1e-8 * b, "r = {r}: {a} vs {b}");
        }
    }

    #[test]
    fn tolerance_refinement_converges() {
        let coarse = solve_radial(1.0, 1.0, 1.0, 2.0, 1e-7).unwrap();
        let fine = solve_radial(1.0, 1.0, 1.0, 2.0, 1e-8).unwrap();
        let (a, b) = (coarse.eval(2.0).0, fine.eval(2.0).0);
        assert!((a - b).abs() < 10.0 * 1e-7 * b);
    }

    #[test]
    fn free_boundary_relation_closes() {
        for &(p, rho, h0) in &[(1.0, 1.0, 1.0), (0.5, 1.0, 1.0), (1.5, 1.0, 1.0), (1.0, 0.5, 3.0)] {
            let sol = solve_radial(p, rho, h0, rho + 1.0, 1e-10).unwrap();
            let gnu = sol.interface_slope();
            let rel = (sol.pack.theta() * gnu.powi(3) / rho - h0) / h0;
            assert!(rel.abs() < 1e-2, "{p} {rho} {h0}: {rel}");
        }
    }

    #[test]
    fn field_extension_and_determinant() {
        let sol = solve_radial(1.0, 1.0, 1.0, 2.0, 1e-10).unwrap();
        let disk = ConvexDomain::disk([0.0, 0.0], 2.0).unwrap();
        let field = radial_to_field(&sol, &disk, 257).unwrap();
        let k_rho = field.idx(192, 128); // (1, 0)
        assert_eq!(field.values()[k_rho], 0.0);
        let k_r = field.idx(256, 128); // (2, 0)
        assert!((field.values()[k_r] - sol.eval(2.0).0).abs() < 1e-15);
        let h = hessian(&field);
        let k = field.idx(224, 128); // (1.5, 0)
        let r = 1.5;
        let (f, fp) = sol.eval(r);
        let fpp = r * f / fp;
        let expected = fpp * fp / r;
        assert!(((h.det(k) - expected) / expected).abs() < 0.01);
        let big = ConvexDomain::disk([0.0, 0.0], 3.0).unwrap();
        assert!(matches!(
            radial_to_field(&sol, &big, 33),
            Err(Error::DomainExceedsProfile { .. })
        ));
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(solve_radial(1.0, 1.0, 1.0, 0.5, 1e-8).is_err());
        assert!(solve_radial(1.0, 1.0, 1.0, 2.0, 0.0).is_err());
    }
}
