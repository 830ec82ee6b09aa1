//! Density/pressure transform, the singular distance of the hodograph
//! coordinates and Holder seminorms measured in it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::ScalarField2D;

pub mod hodograph;

pub use hodograph::{
    build_hodograph_patch, default_eta, dilate_patch, disk_nodes, hodograph_residual, patch_from_solution,
    FnSampler, Frame, GridSampler, HodographPatch, Jet, PatchLayout, PatchOptions, PressureSampler,
    RadialSampler,
};

/// Exponents attached to the source power `p`: `q = 3/(2-p)` and
/// `theta = (1+p)/(2-p) = q - 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentPack {
    p: f64,
    q: f64,
    theta: f64,
}

impl ExponentPack {
    pub fn new(p: f64) -> Result<Self> {
        if !(p > 0.0 && p < 2.0) {
            return Err(Error::param("p", format!("need 0 < p < 2, got {p}")));
        }
        let q = 3.0 / (2.0 - p);
        Ok(Self { p, q, theta: q - 1.0 })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    /// `q^{2/3} f^{1/q}`.
    #[inline]
    pub fn pressure(&self, f: f64) -> f64 {
        if f <= 0.0 {
            0.0
        } else {
            self.q.powf(2.0 / 3.0) * f.powf(1.0 / self.q)
        }
    }

    /// `(q^{-2/3} g)^q`.
    #[inline]
    pub fn density(&self, g: f64) -> f64 {
        if g <= 0.0 {
            0.0
        } else {
            (self.q.powf(-2.0 / 3.0) * g).powf(self.q)
        }
    }
}

fn check_nonnegative(field: &ScalarField2D) -> Result<()> {
    for (k, &v) in field.values().iter().enumerate() {
        if field.kind(k).has_value() && (v < 0.0 || v.is_nan()) {
            let (i, j) = field.ij(k);
            return Err(Error::NegativeValue { i, j, value: v });
        }
    }
    Ok(())
}

pub fn pressure_from_density(f: &ScalarField2D, pack: &ExponentPack) -> Result<ScalarField2D> {
    check_nonnegative(f)?;
    Ok(f.map(|v| pack.pressure(v)))
}

pub fn density_from_pressure(g: &ScalarField2D, pack: &ExponentPack) -> Result<ScalarField2D> {
    check_nonnegative(g)?;
    Ok(g.map(|v| pack.density(v)))
}

/// Point `(z, y)` of hodograph coordinates.
pub type HodoPoint = [f64; 2];

/// `|sqrt(z1) - sqrt(z2)| + |y1 - y2|`.
pub fn singular_distance(a: HodoPoint, b: HodoPoint) -> Result<f64> {
    for z in [a[0], b[0]] {
        if z < 0.0 {
            return Err(Error::NegativeZ(z));
        }
    }
    Ok((a[0].sqrt() - b[0].sqrt()).abs() + (a[1] - b[1]).abs())
}

/// Largest Holder quotient `|u(Q1) - u(Q2)| / s(Q1, Q2)^alpha` over node
/// pairs at singular distance at least `min_sep`.
pub fn holder_seminorm_s(
    nodes: &[HodoPoint],
    values: &[f64],
    alpha: f64,
    min_sep: f64,
) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::param("alpha", format!("need 0 < alpha < 1, got {alpha}")));
    }
    if !(min_sep > 0.0) {
        return Err(Error::param("min_sep", "must be positive"));
    }
    if nodes.len() != values.len() {
        return Err(Error::ShapeMismatch);
    }
    let roots: Vec<f64> = nodes
        .iter()
        .map(|q| if q[0] < 0.0 { Err(Error::NegativeZ(q[0])) } else { Ok(q[0].sqrt()) })
        .collect::<Result<_>>()?;
    let mut best = 0.0f64;
    let mut pairs = 0usize;
    for a in 0..nodes.len() {
        if !values[a].is_finite() {
            continue;
        }
        for b in a + 1..nodes.len() {
            if !values[b].is_finite() {
                continue;
            }
            let s = (roots[a] - roots[b]).abs() + (nodes[a][1] - nodes[b][1]).abs();
            if s < min_sep {
                continue;
            }
            pairs += 1;
            best = best.max((values[a] - values[b]).abs() / s.powf(alpha));
        }
    }
    if pairs < 2 {
        return Err(Error::TooFewPairs(pairs));
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, ConvexDomain};
    use proptest::prelude::*;

    #[test]
    fn exponent_identities() {
        for k in 1..2000 {
            let p = k as f64 * 1e-3;
            let pack = ExponentPack::new(p).unwrap();
            assert_eq!(pack.theta(), pack.q() - 1.0);
            assert_eq!(pack.q(), 3.0 / (2.0 - p));
            let direct = (1.0 + p) / (2.0 - p);
            assert!((pack.theta() - direct).abs() <= 4.0 * f64::EPSILON * direct.max(1.0));
        }
        assert!(ExponentPack::new(0.0).is_err());
        assert!(ExponentPack::new(2.0).is_err());
    }

    #[test]
    fn pressure_values() {
        let p1 = ExponentPack::new(1.0).unwrap();
        // 3^{2/3} (1/18)^{1/3} = (9/18)^{1/3}
        let expected = 0.5f64.cbrt();
        assert!((p1.pressure(1.0 / 18.0) - expected).abs() < 1e-15);
        assert!((expected - 0.793_700_525_984_099_7).abs() < 1e-15);
        assert!((p1.density(expected) - 1.0 / 18.0).abs() < 1e-16);
        assert_eq!(p1.pressure(0.0), 0.0);
        assert_eq!(p1.density(0.0), 0.0);
        let half = ExponentPack::new(0.5).unwrap();
        assert!((half.density(2f64.powf(2.0 / 3.0)) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn field_transforms_reject_negatives() {
        let d = ConvexDomain::disk([0.0, 0.0], 1.0).unwrap();
        let pack = ExponentPack::new(1.0).unwrap();
        let f = make_grid(&d, 16).unwrap().sample(|p| p[0]);
        match pressure_from_density(&f, &pack) {
            Err(Error::NegativeValue { value, .. }) => assert!(value < 0.0),
            other => panic!("{other:?}"),
        }
        assert!(density_from_pressure(&f, &pack).is_err());
        let pos = f.map(|v| v.abs());
        let back = density_from_pressure(&pressure_from_density(&pos, &pack).unwrap(), &pack).unwrap();
        for (a, b) in pos.values().iter().zip(back.values()) {
            assert!((a - b).abs() <= 1e-12 * a.abs());
        }
    }

    #[test]
    fn singular_distance_examples() {
        assert_eq!(singular_distance([1.0, 0.0], [4.0, 1.0]).unwrap(), 2.0);
        assert_eq!(singular_distance([0.3, 0.2], [0.3, 0.2]).unwrap(), 0.0);
        let eta = 0.37;
        assert!((singular_distance([0.0, 0.0], [eta * eta, 0.0]).unwrap() - eta).abs() < 1e-15);
        assert!(matches!(singular_distance([-1.0, 0.0], [0.0, 0.0]), Err(Error::NegativeZ(_))));
    }

    fn box_nodes(k: usize, eta: f64) -> Vec<HodoPoint> {
        let d = eta / k as f64;
        let mut v = Vec::new();
        for a in 0..=k {
            for b in 0..=2 * k {
                v.push([(a as f64 * d).powi(2), -eta + b as f64 * d]);
            }
        }
        v
    }

    #[test]
    fn holder_of_constant_and_sqrt_z() {
        let nodes = box_nodes(6, 1.0);
        let ones = vec![1.0; nodes.len()];
        assert_eq!(holder_seminorm_s(&nodes, &ones, 0.5, 0.1).unwrap(), 0.0);

        // brute force: u = sqrt z is 1-Lipschitz in s
        let alpha = 0.3;
        let sep = 0.2;
        let u: Vec<f64> = nodes.iter().map(|q| q[0].sqrt()).collect();
        let got = holder_seminorm_s(&nodes, &u, alpha, sep).unwrap();
        let mut brute = 0.0f64;
        for a in &nodes {
            for b in &nodes {
                let s = (a[0].sqrt() - b[0].sqrt()).abs() + (a[1] - b[1]).abs();
                if s >= sep {
                    brute = brute.max((a[0].sqrt() - b[0].sqrt()).abs() / s.powf(alpha));
                }
            }
        }
        assert!((got - brute).abs() < 1e-14);
        // pure z-separation pairs reach s^{1-alpha} with s = 1
        assert!((got - 1.0).abs() < 1e-12);

        let uy: Vec<f64> = nodes.iter().map(|q| q[1]).collect();
        let got = holder_seminorm_s(&nodes, &uy, 0.5, sep).unwrap();
        // maximal y separation 2 at equal z: 2 / sqrt(2)
        assert!((got - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn holder_needs_pairs() {
        let nodes = vec![[0.0, 0.0], [0.01, 0.0]];
        assert!(matches!(
            holder_seminorm_s(&nodes, &[0.0, 1.0], 0.5, 1.0),
            Err(Error::TooFewPairs(0))
        ));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(10_000))]
        #[test]
        fn singular_distance_is_a_metric(
            a in (0.0f64..4.0, -2.0f64..2.0),
            b in (0.0f64..4.0, -2.0f64..2.0),
            c in (0.0f64..4.0, -2.0f64..2.0),
        ) {
            let (a, b, c) = ([a.0, a.1], [b.0, b.1], [c.0, c.1]);
            let ab = singular_distance(a, b).unwrap();
            let ba = singular_distance(b, a).unwrap();
            let ac = singular_distance(a, c).unwrap();
            let cb = singular_distance(c, b).unwrap();
            prop_assert_eq!(ab, ba);
            prop_assert!(ab <= ac + cb + 1e-12);
        }

        #[test]
        fn density_pressure_round_trip(p in 0.01f64..1.99, f in 1e-12f64..1e3) {
            let pack = ExponentPack::new(p).unwrap();
            let back = pack.density(pack.pressure(f));
            prop_assert!((back - f).abs() <= 1e-12 * f);
        }
    }
}
