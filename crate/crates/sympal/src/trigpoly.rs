//! Exact `Z^{2d}`-periodic generating functions as real trigonometric
//! polynomials.
//!
//! Every term is `c·cos(2π⟨m, z⟩)` or `c·sin(2π⟨m, z⟩)` with an integer
//! wavevector `m`, so values, gradients and Hessians are closed-form and
//! periodicity is exact up to floating rounding. This is the on-disk
//! format for every generating function in a system config:
//! `{"dim": int, "terms": [{"c": float, "m": [int,...], "ph": "cos"|"sin"}]}`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;

use crate::{Result, SympalError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "cos")]
    Cos,
    #[serde(rename = "sin")]
    Sin,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Term {
    pub c: f64,
    pub m: Vec<i64>,
    pub ph: Phase,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrigPolynomial {
    pub dim: usize,
    pub terms: Vec<Term>,
}

impl TrigPolynomial {
    /// The zero function on `T^dim`.
    pub fn zero(dim: usize) -> Self {
        Self { dim, terms: Vec::new() }
    }

    pub fn new(dim: usize, terms: Vec<Term>) -> Result<Self> {
        for t in &terms {
            if t.m.len() != dim {
                return Err(SympalError::DimensionMismatch { expected: dim, got: t.m.len() });
            }
        }
        let mut p = Self { dim, terms };
        p.normalize();
        Ok(p)
    }

    /// Canonical term order (lexicographic wavevector, cos before sin),
    /// equal keys combined, exact zeros dropped. Deterministic serialization
    /// depends on this.
    pub fn normalize(&mut self) {
        self.terms.sort_by(|a, b| a.m.cmp(&b.m).then(a.ph.cmp(&b.ph)));
        let mut merged: Vec<Term> = Vec::with_capacity(self.terms.len());
        for t in self.terms.drain(..) {
            match merged.last_mut() {
                Some(last) if last.m == t.m && last.ph == t.ph => last.c += t.c,
                _ => merged.push(t),
            }
        }
        merged.retain(|t| t.c != 0.0);
        self.terms = merged;
    }

    pub fn check_dim(&self, z: &[f64]) -> Result<()> {
        if z.len() != self.dim {
            return Err(SympalError::DimensionMismatch { expected: self.dim, got: z.len() });
        }
        Ok(())
    }

    fn angle(term: &Term, z: &[f64]) -> f64 {
        let mut s = 0.0;
        for (mi, zi) in term.m.iter().zip(z) {
            s += *mi as f64 * zi;
        }
        TAU * s
    }

    pub fn evaluate(&self, z: &[f64]) -> Result<f64> {
        self.check_dim(z)?;
        let mut acc = 0.0;
        for t in &self.terms {
            let a = Self::angle(t, z);
            acc += t.c * match t.ph {
                Phase::Cos => a.cos(),
                Phase::Sin => a.sin(),
            };
        }
        Ok(acc)
    }

    /// Exact analytic gradient.
    pub fn gradient(&self, z: &[f64]) -> Result<DVector<f64>> {
        self.check_dim(z)?;
        let mut g = DVector::zeros(self.dim);
        for t in &self.terms {
            let a = Self::angle(t, z);
            // d/dz_i of cos(a) = -2π m_i sin(a); of sin(a) = 2π m_i cos(a)
            let factor = match t.ph {
                Phase::Cos => -t.c * TAU * a.sin(),
                Phase::Sin => t.c * TAU * a.cos(),
            };
            for i in 0..self.dim {
                g[i] += factor * t.m[i] as f64;
            }
        }
        Ok(g)
    }

    /// Exact analytic Hessian (symmetric).
    pub fn hessian(&self, z: &[f64]) -> Result<DMatrix<f64>> {
        self.check_dim(z)?;
        let mut h = DMatrix::zeros(self.dim, self.dim);
        for t in &self.terms {
            let a = Self::angle(t, z);
            let factor = -t.c * TAU * TAU * match t.ph {
                Phase::Cos => a.cos(),
                Phase::Sin => a.sin(),
            };
            for i in 0..self.dim {
                let mi = t.m[i] as f64;
                if mi == 0.0 {
                    continue;
                }
                for j in 0..self.dim {
                    h[(i, j)] += factor * mi * t.m[j] as f64;
                }
            }
        }
        Ok(h)
    }

    /// Pointwise scaling `f ↦ s·f`.
    pub fn scaled(&self, s: f64) -> Self {
        let mut p = self.clone();
        for t in &mut p.terms {
            t.c *= s;
        }
        p.normalize();
        p
    }

    /// `Σ |c|·(2π)²·‖m_x‖·‖m_y‖` bound on the spectral norm of the mixed
    /// Hessian block, valid at every point. Cheap sufficient certificate
    /// for the implicit-solve contraction.
    pub fn mixed_block_analytic_bound(&self, d: usize) -> f64 {
        let mut bound = 0.0;
        for t in &self.terms {
            let nx: f64 = t.m[..d].iter().map(|&v| (v * v) as f64).sum::<f64>().sqrt();
            let ny: f64 = t.m[d..].iter().map(|&v| (v * v) as f64).sum::<f64>().sqrt();
            bound += t.c.abs() * TAU * TAU * nx * ny;
        }
        bound
    }

    /// Spectral norm of the mixed block `∂²f/∂x∂y` at `z` (first `d`
    /// coordinates against the last `d`).
    pub fn mixed_block_norm(&self, z: &[f64], d: usize) -> Result<f64> {
        let h = self.hessian(z)?;
        let block = h.view((0, d), (d, d)).into_owned();
        Ok(block.svd_unordered(false, false).singular_values.max())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn fd_gradient(f: &TrigPolynomial, z: &[f64], h: f64) -> DVector<f64> {
        let mut g = DVector::zeros(f.dim);
        let mut zp = z.to_vec();
        for i in 0..f.dim {
            zp[i] = z[i] + h;
            let fp = f.evaluate(&zp).unwrap();
            zp[i] = z[i] - h;
            let fm = f.evaluate(&zp).unwrap();
            zp[i] = z[i];
            g[i] = (fp - fm) / (2.0 * h);
        }
        g
    }

    fn fd_hessian(f: &TrigPolynomial, z: &[f64], h: f64) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(f.dim, f.dim);
        let mut zp = z.to_vec();
        for j in 0..f.dim {
            zp[j] = z[j] + h;
            let gp = f.gradient(&zp).unwrap();
            zp[j] = z[j] - h;
            let gm = f.gradient(&zp).unwrap();
            zp[j] = z[j];
            for i in 0..f.dim {
                m[(i, j)] = (gp[i] - gm[i]) / (2.0 * h);
            }
        }
        m
    }

    #[test]
    fn zero_function() {
        let f = TrigPolynomial::zero(2);
        assert_eq!(f.evaluate(&[0.3, -1.7]).unwrap(), 0.0);
        assert_eq!(f.gradient(&[0.3, -1.7]).unwrap(), DVector::zeros(2));
        assert_eq!(f.hessian(&[0.3, -1.7]).unwrap(), DMatrix::zeros(2, 2));
    }

    #[test]
    fn dimension_mismatch_is_an_input_error() {
        let f = TrigPolynomial::zero(2);
        assert!(f.evaluate(&[0.0]).is_err());
        assert!(f.gradient(&[0.0, 0.0, 0.0]).is_err());
    }

    #[test]
    fn degenerate_max_example_vanishes_to_second_order_at_origin() {
        // -ε(sin⁴πx + sin⁴πy) has critical value 0 and vanishing gradient
        // and Hessian at the origin.
        let f = crate::systems::sys_b().factors[0].clone();
        assert!(f.evaluate(&[0.0, 0.0]).unwrap().abs() < 1e-16);
        let g = f.gradient(&[0.0, 0.0]).unwrap();
        assert!(g.amax() < 1e-15, "gradient {g}");
        let h = f.hessian(&[0.0, 0.0]).unwrap();
        assert!(h.amax() < 1e-12, "hessian {h}");
    }

    #[test]
    fn two_cosine_example_value() {
        // Oracle: naive independent summation of the two terms.
        let f = crate::systems::sys_c().factors[0].clone();
        let eps = 0.01;
        let naive = |x: f64, y: f64| eps * ((TAU * x).cos() + (TAU * y).cos());
        for &(x, y) in &[(0.0, 0.0), (0.25, 0.0), (0.13, -0.62), (0.5, 0.5)] {
            let v = f.evaluate(&[x, y]).unwrap();
            assert!((v - naive(x, y)).abs() < 1e-15, "{v} vs {}", naive(x, y));
        }
        assert!((f.evaluate(&[0.0, 0.0]).unwrap() - 0.02).abs() < 1e-15);
    }

    #[test]
    fn gradient_example_against_finite_differences() {
        let f = crate::systems::sys_c().factors[0].clone();
        let g = f.gradient(&[0.25, 0.0]).unwrap();
        assert!((g[0] - (-TAU * 0.01)).abs() < 1e-12);
        assert!(g[1].abs() < 1e-12);
        let fd = fd_gradient(&f, &[0.25, 0.0], 1e-5);
        assert!((g - fd).amax() < 1e-7);
    }

    #[test]
    fn hessian_example_single_cosine() {
        let f = TrigPolynomial::new(
            2,
            vec![Term { c: 0.01, m: vec![1, 0], ph: Phase::Cos }],
        )
        .unwrap();
        let h = f.hessian(&[0.0, 0.0]).unwrap();
        assert!((h[(0, 0)] - (-TAU * TAU * 0.01)).abs() < 1e-12);
        assert!(h[(0, 1)].abs() < 1e-15 && h[(1, 1)].abs() < 1e-15);
        let fd = fd_hessian(&f, &[0.0, 0.0], 1e-4);
        assert!((h - fd).amax() < 1e-6);
    }

    #[test]
    fn normalization_merges_and_sorts() {
        let f = TrigPolynomial::new(
            1,
            vec![
                Term { c: 0.5, m: vec![2], ph: Phase::Sin },
                Term { c: 0.25, m: vec![1], ph: Phase::Cos },
                Term { c: 0.5, m: vec![2], ph: Phase::Sin },
                Term { c: -0.25, m: vec![1], ph: Phase::Cos },
            ],
        )
        .unwrap();
        assert_eq!(f.terms.len(), 1);
        assert_eq!(f.terms[0].m, vec![2]);
        assert_eq!(f.terms[0].c, 1.0);
    }

    #[test]
    fn json_round_trip_schema() {
        let f = crate::systems::sys_b().factors[0].clone();
        let js = serde_json::to_string(&f).unwrap();
        assert!(js.contains("\"ph\":\"cos\""));
        let back: TrigPolynomial = serde_json::from_str(&js).unwrap();
        assert_eq!(back.terms.len(), f.terms.len());
        assert_eq!(back.evaluate(&[0.2, 0.7]).unwrap(), f.evaluate(&[0.2, 0.7]).unwrap());
    }

    fn small_poly() -> impl Strategy<Value = TrigPolynomial> {
        let term = (
            -0.02f64..0.02,
            prop::collection::vec(-2i64..=2, 2),
            prop_oneof![Just(Phase::Cos), Just(Phase::Sin)],
        )
            .prop_map(|(c, m, ph)| Term { c, m, ph });
        prop::collection::vec(term, 0..6)
            .prop_map(|terms| TrigPolynomial::new(2, terms).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn periodicity_is_exact(f in small_poly(),
                                z in prop::collection::vec(-1.0f64..1.0, 2),
                                shift in prop::collection::vec(-2i64..=2, 2)) {
            let zs: Vec<f64> = z.iter().zip(&shift).map(|(a, s)| a + *s as f64).collect();
            let dv = (f.evaluate(&z).unwrap() - f.evaluate(&zs).unwrap()).abs();
            prop_assert!(dv < 1e-12);
            let dg = (f.gradient(&z).unwrap() - f.gradient(&zs).unwrap()).amax();
            prop_assert!(dg < 1e-10);
        }

        #[test]
        fn derivatives_match_finite_differences(f in small_poly(),
                                                z in prop::collection::vec(0.0f64..1.0, 2)) {
            // central differences truncate at O(h²·f⁽³⁾) resp. O(h²·f⁽⁴⁾);
            // scale the tolerance by an a-priori derivative bound
            let m3: f64 = f.terms.iter()
                .map(|t| t.c.abs() * (TAU * t.m.iter().map(|&v| v.abs()).sum::<i64>() as f64).powi(3))
                .sum();
            let m4: f64 = f.terms.iter()
                .map(|t| t.c.abs() * (TAU * t.m.iter().map(|&v| v.abs()).sum::<i64>() as f64).powi(4))
                .sum();
            let h_fd = 1e-4;
            let g = f.gradient(&z).unwrap();
            let fd = fd_gradient(&f, &z, h_fd);
            prop_assert!((g - fd).amax() < 1e-8 + h_fd * h_fd * m3);
            let h = f.hessian(&z).unwrap();
            let fdh = fd_hessian(&f, &z, h_fd);
            prop_assert!((h - fdh).amax() < 1e-8 + h_fd * h_fd * m4);
        }
    }

    #[test]
    fn benchmark_factors_meet_the_fd_contract() {
        // < 1e−6 at h = 1e−4 over 100 random points per factor
        use crate::sampling::rng_stream;
        use rand::Rng;
        let mut rng = rng_stream(42, 0);
        for map in [
            crate::systems::sys_a(),
            crate::systems::sys_b(),
            crate::systems::sys_c(),
            crate::systems::sys_d(),
        ] {
            for f in &map.factors {
                for _ in 0..100 {
                    let z: Vec<f64> = (0..f.dim).map(|_| rng.random_range(0.0..1.0f64)).collect();
                    let g = f.gradient(&z).unwrap();
                    let fd = fd_gradient(f, &z, 1e-4);
                    assert!((g - fd).amax() < 1e-6, "{} gradient", map.label);
                    let h = f.hessian(&z).unwrap();
                    let fdh = fd_hessian(f, &z, 1e-4);
                    assert!((h - fdh).amax() < 1e-6, "{} hessian", map.label);
                }
            }
        }
    }
}
