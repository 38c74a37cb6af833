//! Built-in benchmark systems.
//!
//! These are the systems used throughout the test suites and shipped as
//! JSON configs under `configs/`. Coefficients are exact dyadic multiples
//! of the base amplitude so that critical values come out exactly.

use crate::symmap::FactorizedMap;
use crate::trigpoly::{Phase, Term, TrigPolynomial};

fn cos(c: f64, m: Vec<i64>) -> Term {
    Term { c, m, ph: Phase::Cos }
}

fn sin(c: f64, m: Vec<i64>) -> Term {
    Term { c, m, ph: Phase::Sin }
}

/// SYS-A: the identity map (d = 1, k = 1, f ≡ 0). Every point is fixed.
pub fn sys_a() -> FactorizedMap {
    FactorizedMap::new(1, vec![TrigPolynomial::zero(2)], "SYS-A".into(), None).unwrap()
}

/// SYS-B: d = 1, k = 1, `f = -ε(sin⁴πx + sin⁴πy)` with ε = 0.01.
///
/// The origin is an isolated totally degenerate local maximum of `f` with
/// critical value exactly 0; it is the canonical degenerate-maximum test
/// case. Expansion: `sin⁴πt = 3/8 - cos(2πt)/2 + cos(4πt)/8`.
pub fn sys_b() -> FactorizedMap {
    FactorizedMap::new(1, vec![sys_b_factor(0.01)], "SYS-B".into(), None).unwrap()
}

pub fn sys_b_factor(eps: f64) -> TrigPolynomial {
    TrigPolynomial::new(
        2,
        vec![
            cos(-0.75 * eps, vec![0, 0]),
            cos(0.5 * eps, vec![1, 0]),
            cos(-0.125 * eps, vec![2, 0]),
            cos(0.5 * eps, vec![0, 1]),
            cos(-0.125 * eps, vec![0, 2]),
        ],
    )
    .unwrap()
}

/// Sign-flipped SYS-B: the origin becomes a totally degenerate minimum.
pub fn sys_b_min() -> FactorizedMap {
    FactorizedMap::new(1, vec![sys_b_factor(-0.01)], "SYS-B-MIN".into(), None).unwrap()
}

/// SYS-C: d = 1, k = 1, `f = ε(cos2πx + cos2πy)` with ε = 0.01.
///
/// Four nondegenerate fixed points: maximum at (0,0), saddles at (0,½) and
/// (½,0), minimum at (½,½).
pub fn sys_c() -> FactorizedMap {
    FactorizedMap::new(
        1,
        vec![TrigPolynomial::new(2, vec![cos(0.01, vec![1, 0]), cos(0.01, vec![0, 1])]).unwrap()],
        "SYS-C".into(),
        None,
    )
    .unwrap()
}

/// SYS-D: d = 2, k = 2 composite built from two small fixed trigonometric
/// polynomials (frozen "random" draws; coefficients a few 1e-3 keep the
/// smallness certificate far below 1).
pub fn sys_d() -> FactorizedMap {
    let f0 = TrigPolynomial::new(
        4,
        vec![
            cos(0.0040, vec![1, 0, 0, 0]),
            cos(0.0030, vec![0, 0, 1, 0]),
            sin(0.0035, vec![0, 1, 0, 0]),
            cos(0.0025, vec![0, 0, 0, 1]),
            sin(0.0020, vec![1, 0, 0, 1]),
            cos(0.0015, vec![0, 1, -1, 0]),
        ],
    )
    .unwrap();
    let f1 = TrigPolynomial::new(
        4,
        vec![
            sin(0.0030, vec![1, 0, 0, 0]),
            cos(0.0040, vec![0, 1, 0, 0]),
            cos(0.0020, vec![0, 0, 1, 1]),
            sin(0.0030, vec![0, 0, 0, 1]),
            sin(0.0015, vec![1, -1, 1, 0]),
            cos(0.0025, vec![1, 1, 0, 0]),
        ],
    )
    .unwrap();
    FactorizedMap::new(2, vec![f0, f1], "SYS-D".into(), None).unwrap()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn certificates_are_small() {
        for map in [sys_a(), sys_b(), sys_c(), sys_d()] {
            assert!(
                map.smallness_certificate < 0.5,
                "{}: certificate {}",
                map.label,
                map.smallness_certificate
            );
        }
    }

    #[test]
    fn sys_b_critical_points() {
        let f = &sys_b().factors[0];
        // max, two (partially degenerate) saddles, min
        for (pt, val) in [
            ([0.0, 0.0], 0.0),
            ([0.0, 0.5], -0.01),
            ([0.5, 0.0], -0.01),
            ([0.5, 0.5], -0.02),
        ] {
            assert!(f.gradient(&pt).unwrap().amax() < 1e-15, "{pt:?} not critical");
            assert!((f.evaluate(&pt).unwrap() - val).abs() < 1e-15);
        }
    }
}
