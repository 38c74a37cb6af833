//! Symplectic maps of the torus realized implicitly through generating
//! functions.
//!
//! Each factor `ψ` acts by `x' − x = ∂_y f(x', y)`, `y' − y = −∂_x f(x', y)`;
//! the mixed Hessian block of `f` must stay below 1 in spectral norm so the
//! implicit equation is a contraction. Orbits, factor differentials, the
//! monodromy product along an orbit and the canonical symplectic path from
//! the identity to the monodromy all live here.

use nalgebra::{Complex, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::maslov::SymplecticPath;
use crate::tol;
use crate::trigpoly::TrigPolynomial;
use crate::{Result, SympalError};

/// Gram matrix of `ω = dx∧dy` in `(x, y)` block coordinates:
/// `J = [[0, I],[-I, 0]]`, so `M` is symplectic iff `MᵀJM = J`.
pub fn j_form(d: usize) -> DMatrix<f64> {
    let mut j = DMatrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        j[(i, d + i)] = 1.0;
        j[(d + i, i)] = -1.0;
    }
    j
}

/// `‖MᵀJM − J‖∞`.
pub fn symplectic_residual(m: &DMatrix<f64>) -> f64 {
    let d = m.nrows() / 2;
    let j = j_form(d);
    (m.transpose() * &j * m - j).amax()
}

/// A `2d × 2d` matrix validated against `MᵀJM = J`.
#[derive(Debug, Clone)]
pub struct SymplecticMatrix {
    m: DMatrix<f64>,
}

impl SymplecticMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() || m.nrows() % 2 != 0 {
            return Err(SympalError::DimensionMismatch { expected: m.ncols(), got: m.nrows() });
        }
        let res = symplectic_residual(&m);
        if res > tol::SYMPLECTIC {
            return Err(SympalError::DifferentialFailure(format!(
                "matrix is not symplectic: ‖MᵀJM − J‖∞ = {res:.3e}"
            )));
        }
        Ok(Self { m })
    }

    pub fn identity(d: usize) -> Self {
        Self { m: DMatrix::identity(2 * d, 2 * d) }
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.m
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.m
    }

    pub fn half_dim(&self) -> usize {
        self.m.nrows() / 2
    }
}

/// `φ = ψ_{k-1} ∘ … ∘ ψ_0` given by one generating function per factor.
#[derive(Debug, Clone)]
pub struct FactorizedMap {
    pub d: usize,
    pub factors: Vec<TrigPolynomial>,
    pub label: String,
    /// Max over factors and a verification grid of the spectral norm of the
    /// mixed Hessian block; must be < 1 for the implicit solve to contract.
    pub smallness_certificate: f64,
    /// `Σ|c|(2π)²‖m_x‖‖m_y‖` upper bound on the same quantity, valid
    /// everywhere (not just on the grid).
    pub analytic_bound: f64,
}

/// On-disk form of a system config.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MapConfig {
    pub d: usize,
    pub k: usize,
    pub factors: Vec<TrigPolynomial>,
    #[serde(default)]
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cert_grid: Option<usize>,
}

impl FactorizedMap {
    pub fn new(
        d: usize,
        factors: Vec<TrigPolynomial>,
        label: String,
        cert_grid: Option<usize>,
    ) -> Result<Self> {
        if d == 0 || factors.is_empty() {
            return Err(SympalError::Config("need d ≥ 1 and k ≥ 1".into()));
        }
        for f in &factors {
            if f.dim != 2 * d {
                return Err(SympalError::DimensionMismatch { expected: 2 * d, got: f.dim });
            }
        }
        let grid = cert_grid.unwrap_or_else(|| default_cert_grid(d));
        let mut cert: f64 = 0.0;
        let mut analytic: f64 = 0.0;
        for f in &factors {
            analytic = analytic.max(f.mixed_block_analytic_bound(d));
            cert = cert.max(grid_mixed_norm_max(f, d, grid)?);
        }
        if cert >= 1.0 {
            return Err(SympalError::Config(format!(
                "smallness certificate {cert:.6} ≥ 1; generating functions too large for the implicit solve"
            )));
        }
        Ok(Self { d, factors, label, smallness_certificate: cert, analytic_bound: analytic })
    }

    pub fn from_config(cfg: MapConfig) -> Result<Self> {
        if cfg.k != cfg.factors.len() {
            return Err(SympalError::Config(format!(
                "config declares k = {} but lists {} factors",
                cfg.k,
                cfg.factors.len()
            )));
        }
        Self::new(cfg.d, cfg.factors, cfg.label, cfg.cert_grid)
    }

    pub fn to_config(&self) -> MapConfig {
        MapConfig {
            d: self.d,
            k: self.factors.len(),
            factors: self.factors.clone(),
            label: self.label.clone(),
            cert_grid: None,
        }
    }

    pub fn k(&self) -> usize {
        self.factors.len()
    }

    pub fn factor(&self, j: usize) -> &TrigPolynomial {
        &self.factors[j % self.factors.len()]
    }

    /// Apply the full map `φ` once.
    pub fn apply(&self, z: &DVector<f64>) -> Result<DVector<f64>> {
        let mut w = z.clone();
        for f in &self.factors {
            w = apply_factor(f, &w)?;
        }
        Ok(w)
    }
}

fn default_cert_grid(d: usize) -> usize {
    // 64 per dimension at d = 1; capped so the total grid stays ≤ 65536.
    let per_dim = (65536f64).powf(1.0 / (2.0 * d as f64)).floor() as usize;
    per_dim.clamp(4, 64)
}

fn grid_mixed_norm_max(f: &TrigPolynomial, d: usize, grid: usize) -> Result<f64> {
    let dims = 2 * d;
    let total: usize = grid.pow(dims as u32);
    let mut max_norm: f64 = 0.0;
    let mut z = vec![0.0; dims];
    for idx in 0..total {
        let mut rem = idx;
        for zi in z.iter_mut() {
            *zi = (rem % grid) as f64 / grid as f64;
            rem /= grid;
        }
        max_norm = max_norm.max(f.mixed_block_norm(&z, d)?);
    }
    Ok(max_norm)
}

/// One factor application: solves Eq. `x' = x + s·∂_y f(x', y)` by fixed
/// point iteration (Newton fallback on slow convergence), then
/// `y' = y − s·∂_x f(x', y)`.
pub fn apply_factor_scaled(f: &TrigPolynomial, s: f64, z: &DVector<f64>) -> Result<DVector<f64>> {
    let d = f.dim / 2;
    if z.len() != f.dim {
        return Err(SympalError::DimensionMismatch { expected: f.dim, got: z.len() });
    }
    let x = z.rows(0, d).into_owned();
    let y = z.rows(d, d).into_owned();

    let mut arg = DVector::zeros(f.dim);
    arg.rows_mut(d, d).copy_from(&y);

    let residual_at = |xn: &DVector<f64>, arg: &mut DVector<f64>| -> Result<(DVector<f64>, f64)> {
        arg.rows_mut(0, d).copy_from(xn);
        let g = f.gradient(arg.as_slice())?;
        let target = &x + s * g.rows(d, d);
        let res = (&target - xn).amax();
        Ok((target, res))
    };

    let mut xn = x.clone();
    let mut res = f64::INFINITY;
    for iter in 0..tol::IMPLICIT_MAX_ITER {
        let (target, r) = residual_at(&xn, &mut arg)?;
        res = r;
        if res < tol::IMPLICIT_SOLVE {
            xn = target;
            break;
        }
        if iter >= 50 {
            // Newton step on g(x) = x − x₀ − s·∂_y f(x, y)
            arg.rows_mut(0, d).copy_from(&xn);
            let h = f.hessian(arg.as_slice())?;
            let jac = DMatrix::identity(d, d) - s * h.view((d, 0), (d, d));
            match jac.lu().solve(&(&target - &xn)) {
                Some(step) => xn += step,
                None => xn = target,
            }
        } else {
            xn = target;
        }
        if iter + 1 == tol::IMPLICIT_MAX_ITER {
            return Err(SympalError::SolveFailure { iterations: tol::IMPLICIT_MAX_ITER, residual: res });
        }
    }
    if res >= tol::IMPLICIT_SOLVE {
        // loop ended by break only when converged; reaching here means the
        // very first residual was already below tolerance
        debug_assert!(res < tol::IMPLICIT_SOLVE);
    }

    arg.rows_mut(0, d).copy_from(&xn);
    let g = f.gradient(arg.as_slice())?;
    let yn = &y - s * g.rows(0, d);

    let mut out = DVector::zeros(f.dim);
    out.rows_mut(0, d).copy_from(&xn);
    out.rows_mut(d, d).copy_from(&yn);
    Ok(out)
}

/// `ψ(z)` for the factor generated by `f`.
pub fn apply_factor(f: &TrigPolynomial, z: &DVector<f64>) -> Result<DVector<f64>> {
    apply_factor_scaled(f, 1.0, z)
}

/// Differential `dψ(z)` of the factor generated by `s·f`, evaluated from
/// the Hessian blocks of `f` at `(x', y)`:
///
/// ```text
/// dψ = [ A            A·f_vv                       ]      A = (I − f_vu)⁻¹
///      [ −f_uu·A      I − f_uv − f_uu·A·f_vv       ]
/// ```
pub fn differential_factor_scaled(
    f: &TrigPolynomial,
    s: f64,
    z: &DVector<f64>,
    x_next: &DVector<f64>,
) -> Result<SymplecticMatrix> {
    let d = f.dim / 2;
    if z.len() != f.dim || x_next.len() != d {
        return Err(SympalError::DimensionMismatch { expected: f.dim, got: z.len() });
    }
    let mut arg = DVector::zeros(f.dim);
    arg.rows_mut(0, d).copy_from(x_next);
    arg.rows_mut(d, d).copy_from(&z.rows(d, d));
    let h = f.hessian(arg.as_slice())? * s;

    let f_uu = h.view((0, 0), (d, d)).into_owned();
    let f_uv = h.view((0, d), (d, d)).into_owned();
    let f_vu = h.view((d, 0), (d, d)).into_owned();
    let f_vv = h.view((d, d), (d, d)).into_owned();

    let lhs = DMatrix::identity(d, d) - f_vu;
    let a = lhs
        .lu()
        .try_inverse()
        .ok_or_else(|| SympalError::DifferentialFailure("(I − ∂xy f) not invertible".into()))?;

    let top_left = a.clone();
    let top_right = &a * &f_vv;
    let bottom_left = -(&f_uu * &a);
    let bottom_right = DMatrix::identity(d, d) - &f_uv - &f_uu * &a * &f_vv;

    let mut m = DMatrix::zeros(2 * d, 2 * d);
    m.view_mut((0, 0), (d, d)).copy_from(&top_left);
    m.view_mut((0, d), (d, d)).copy_from(&top_right);
    m.view_mut((d, 0), (d, d)).copy_from(&bottom_left);
    m.view_mut((d, d), (d, d)).copy_from(&bottom_right);
    SymplecticMatrix::new(m)
}

pub fn differential_factor(
    f: &TrigPolynomial,
    z: &DVector<f64>,
    x_next: &DVector<f64>,
) -> Result<SymplecticMatrix> {
    differential_factor_scaled(f, 1.0, z, x_next)
}

/// Distance of `v` to the nearest integer vector, ∞-norm.
pub fn deck_distance(v: &DVector<f64>) -> f64 {
    v.iter().map(|c| (c - c.round()).abs()).fold(0.0, f64::max)
}

/// The lifted orbit `z, ψ_0 z, ψ_1 ψ_0 z, …` over `p` periods (`kp` points).
/// Errors with `NotPeriodic` if it fails to close modulo `Z^{2d}`.
pub fn orbit_points(map: &FactorizedMap, z0: &DVector<f64>, p: usize) -> Result<Vec<DVector<f64>>> {
    let k = map.k();
    let mut pts = Vec::with_capacity(k * p);
    let mut z = z0.clone();
    for j in 0..k * p {
        pts.push(z.clone());
        z = apply_factor(map.factor(j), &z)?;
    }
    let res = deck_distance(&(&z - z0));
    if res > tol::ORBIT_CLOSURE {
        return Err(SympalError::NotPeriodic { period: p, residual: res });
    }
    Ok(pts)
}

/// Ordered product of the factor differentials along stored orbit points.
/// Evaluation points `(x_{j+1}, y_j)` are taken from the stored loop so the
/// result is consistent with the action Hessian at the same loop.
pub fn monodromy_of_points(map: &FactorizedMap, points: &[DVector<f64>]) -> Result<SymplecticMatrix> {
    let d = map.d;
    let kp = points.len();
    let mut m = DMatrix::identity(2 * d, 2 * d);
    for j in 0..kp {
        let x_next = points[(j + 1) % kp].rows(0, d).into_owned();
        let dpsi = differential_factor(map.factor(j), &points[j], &x_next)?;
        m = dpsi.matrix() * m;
    }
    SymplecticMatrix::new(m)
}

/// `dφ^p(z₀)` at a fixed point of `φ^p`.
pub fn monodromy(map: &FactorizedMap, z0: &DVector<f64>, p: usize) -> Result<SymplecticMatrix> {
    let pts = orbit_points(map, z0, p)?;
    monodromy_of_points(map, &pts)
}

/// Floquet multipliers: eigenvalues of the monodromy, sorted by
/// `(re, im)` for deterministic output.
pub fn floquet_multipliers(m: &SymplecticMatrix) -> Vec<Complex<f64>> {
    let mut eigs: Vec<Complex<f64>> = m.matrix().clone().complex_eigenvalues().iter().copied().collect();
    eigs.sort_by(|a, b| (a.re, a.im).partial_cmp(&(b.re, b.im)).unwrap());
    eigs
}

/// Kernel dimension of `a` by singular-value count.
pub fn kernel_dimension(a: &DMatrix<f64>, tol: f64) -> usize {
    let sv = a.clone().svd_unordered(false, false).singular_values;
    sv.iter().filter(|&&s| s <= tol).count()
}

/// Canonical symplectic path `Γ: [0,1] → Sp(2d)` from the identity to the
/// monodromy along stored orbit points. On the `j`-th of the `kp`
/// subintervals the path runs through the differentials of the maps
/// generated by `s·f_j`, `s ∈ [0,1]`, left-multiplied into the running
/// product of completed factors.
pub fn canonical_path_of_points(
    map: &FactorizedMap,
    points: &[DVector<f64>],
    samples_per_factor: usize,
) -> Result<SymplecticPath> {
    let d = map.d;
    let kp = points.len();
    let mut prefixes = Vec::with_capacity(kp + 1);
    prefixes.push(DMatrix::identity(2 * d, 2 * d));
    for j in 0..kp {
        let x_next = points[(j + 1) % kp].rows(0, d).into_owned();
        let dpsi = differential_factor(map.factor(j), &points[j], &x_next)?;
        let next = dpsi.matrix() * prefixes.last().unwrap();
        prefixes.push(next);
    }

    let map = map.clone();
    let points: Vec<DVector<f64>> = points.to_vec();
    let sampler = move |t: f64| -> Result<DMatrix<f64>> {
        let u = (t.clamp(0.0, 1.0)) * kp as f64;
        let mut j = u.floor() as usize;
        let mut s = u - j as f64;
        if j >= kp {
            j = kp - 1;
            s = 1.0;
        }
        if s == 0.0 {
            return Ok(prefixes[j].clone());
        }
        let f = map.factor(j);
        let z = &points[j];
        let zs = apply_factor_scaled(f, s, z)?;
        let x_next = zs.rows(0, d).into_owned();
        let dpsi = differential_factor_scaled(f, s, z, &x_next)?;
        Ok(dpsi.matrix() * &prefixes[j])
    };

    SymplecticPath::from_sampler(d, std::sync::Arc::new(sampler), samples_per_factor * kp)
}

/// Canonical path at a fixed point of `φ^p` (computes the orbit first).
pub fn canonical_path(
    map: &FactorizedMap,
    z0: &DVector<f64>,
    p: usize,
    samples_per_factor: usize,
) -> Result<SymplecticPath> {
    let pts = orbit_points(map, z0, p)?;
    canonical_path_of_points(map, &pts, samples_per_factor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{sys_b, sys_c, sys_d};
    use nalgebra::dvector;
    use std::f64::consts::{PI, TAU};

    fn fd_jacobian(f: &TrigPolynomial, z: &DVector<f64>, h: f64) -> DMatrix<f64> {
        let n = z.len();
        let mut jac = DMatrix::zeros(n, n);
        for j in 0..n {
            let mut zp = z.clone();
            zp[j] += h;
            let fp = apply_factor(f, &zp).unwrap();
            zp[j] = z[j] - h;
            let fm = apply_factor(f, &zp).unwrap();
            let col = (fp - fm) / (2.0 * h);
            jac.set_column(j, &col);
        }
        jac
    }

    #[test]
    fn zero_factor_is_identity() {
        let f = TrigPolynomial::zero(2);
        let z = dvector![0.37, -1.2];
        assert_eq!(apply_factor(&f, &z).unwrap(), z);
        let m = differential_factor(&f, &z, &dvector![0.37]).unwrap();
        assert_eq!(m.matrix(), &DMatrix::identity(2, 2));
    }

    #[test]
    fn two_cosine_factor_moves_y_only_at_quarter() {
        // ∂_y f(·, 0) = 0 so x is unchanged; y picks up 2πε.
        let f = &sys_c().factors[0];
        let z = dvector![0.25, 0.0];
        let w = apply_factor(f, &z).unwrap();
        assert!((w[0] - 0.25).abs() < 1e-14);
        assert!((w[1] - TAU * 0.01 / 2.0 * 2.0).abs() < 1e-12, "y' = {}", w[1]);
        // residual check on both implicit equations
        let arg = [w[0], z[1]];
        let g = f.gradient(&arg).unwrap();
        assert!((w[0] - z[0] - g[1]).abs() < 1e-12);
        assert!((w[1] - z[1] + g[0]).abs() < 1e-12);
    }

    #[test]
    fn degenerate_max_is_fixed() {
        let f = &sys_b().factors[0];
        let z = dvector![0.0, 0.0];
        let w = apply_factor(f, &z).unwrap();
        assert!((w - &z).amax() < 1e-14);
        let m = differential_factor(f, &z, &dvector![0.0]).unwrap();
        assert!((m.matrix() - DMatrix::identity(2, 2)).amax() < 1e-13);
    }

    #[test]
    fn shear_differential() {
        let eps = 0.01;
        let f = TrigPolynomial::new(
            2,
            vec![crate::trigpoly::Term { c: eps, m: vec![1, 0], ph: crate::trigpoly::Phase::Cos }],
        )
        .unwrap();
        let z = dvector![0.0, 0.0];
        let m = differential_factor(&f, &z, &dvector![0.0]).unwrap();
        let expected = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 4.0 * PI * PI * eps, 1.0]);
        assert!((m.matrix() - expected).amax() < 1e-12);
        assert!(symplectic_residual(m.matrix()) < 1e-12);
        let fd = fd_jacobian(&f, &z, 1e-5);
        assert!((m.matrix() - fd).amax() < 1e-6);
    }

    #[test]
    fn equivariance_under_deck_translations() {
        let f = &sys_d().factors[0];
        let z = dvector![0.21, -0.4, 0.77, 0.05];
        let m = dvector![1.0, -2.0, 0.0, 3.0];
        let a = apply_factor(f, &(z.clone() + &m)).unwrap();
        let b = apply_factor(f, &z).unwrap() + &m;
        assert!((a - b).amax() < 1e-12);
    }

    #[test]
    fn solve_failure_on_large_mixed_term() {
        // ∂xy block has spectral norm (2π)²·c ≈ 1.6 > 1: contraction fails.
        let f = TrigPolynomial::new(
            2,
            vec![crate::trigpoly::Term { c: 0.04, m: vec![1, 1], ph: crate::trigpoly::Phase::Cos }],
        )
        .unwrap();
        assert!(f.mixed_block_analytic_bound(1) > 1.0);
        let mut failed = false;
        'scan: for i in 0..16 {
            for j in 0..16 {
                let z = dvector![i as f64 / 16.0, j as f64 / 16.0];
                if apply_factor(&f, &z).is_err() {
                    failed = true;
                    break 'scan;
                }
            }
        }
        assert!(failed, "expected SolveFailure somewhere on the grid");
        // and the map constructor rejects such factors outright
        assert!(FactorizedMap::new(1, vec![f], "too-big".into(), None).is_err());
    }

    #[test]
    fn monodromy_identity_cases() {
        let id = sys_a_map();
        let z = dvector![0.3, 0.9];
        let m = monodromy(&id, &z, 3).unwrap();
        assert_eq!(m.matrix(), &DMatrix::identity(2, 2));
        let mb = monodromy(&sys_b(), &dvector![0.0, 0.0], 5).unwrap();
        assert!((mb.matrix() - DMatrix::identity(2, 2)).amax() < 1e-12);
    }

    fn sys_a_map() -> FactorizedMap {
        crate::systems::sys_a()
    }

    #[test]
    fn monodromy_determinant_and_floquet() {
        let map = sys_c();
        let m = monodromy(&map, &dvector![0.0, 0.0], 1).unwrap();
        let eigs = floquet_multipliers(&m);
        let prod: Complex<f64> = eigs.iter().product();
        assert!((prod - Complex::new(1.0, 0.0)).norm() < 1e-10);
        // elliptic maximum: unit-circle pair
        for e in &eigs {
            assert!((e.norm() - 1.0).abs() < 1e-10);
        }
        assert!(monodromy(&map, &dvector![0.1, 0.2], 1).is_err(), "not a fixed point");
    }

    #[test]
    fn floquet_examples() {
        let shear = SymplecticMatrix::new(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.7, 1.0])).unwrap();
        let eigs = floquet_multipliers(&shear);
        assert!((eigs[0] - Complex::new(1.0, 0.0)).norm() < 1e-7);
        assert!((eigs[1] - Complex::new(1.0, 0.0)).norm() < 1e-7);

        let th: f64 = 0.8;
        let rot = SymplecticMatrix::new(DMatrix::from_row_slice(
            2,
            2,
            &[th.cos(), -th.sin(), th.sin(), th.cos()],
        ))
        .unwrap();
        let eigs = floquet_multipliers(&rot);
        assert!((eigs[0] - Complex::new(th.cos(), -th.sin())).norm() < 1e-12);
        assert!((eigs[1] - Complex::new(th.cos(), th.sin())).norm() < 1e-12);
    }

    #[test]
    fn canonical_path_trivial_and_endpoint() {
        // f ≡ 0: constant path at I
        let id = sys_a_map();
        let z = dvector![0.6, 0.1];
        let path = canonical_path(&id, &z, 2, 8).unwrap();
        for m in &path.matrices {
            assert_eq!(m, &DMatrix::identity(2, 2));
        }
        assert_eq!(crate::maslov::average_maslov(&path), 0.0);

        // single factor: endpoint = differential
        let map = sys_c();
        let z0 = dvector![0.0, 0.0];
        let path = canonical_path(&map, &z0, 1, 32).unwrap();
        let m = monodromy(&map, &z0, 1).unwrap();
        assert!((path.endpoint() - m.matrix()).amax() < 1e-9);

        // §3.2 system at the degenerate max: every sample is I
        let path = canonical_path(&sys_b(), &z0, 3, 16).unwrap();
        for m in &path.matrices {
            assert!((m - DMatrix::identity(2, 2)).amax() < 1e-12);
        }
    }

    #[test]
    fn canonical_path_group_law() {
        let map = sys_c();
        let z0 = dvector![0.0, 0.0];
        let p1 = canonical_path(&map, &z0, 1, 64).unwrap();
        let p3 = canonical_path(&map, &z0, 3, 64).unwrap();
        let iter3 = crate::maslov::iterate_path(&p1, 3).unwrap();
        // compare at shared sample times
        for (i, &t) in iter3.times.iter().enumerate() {
            let direct = p3.sample(t).unwrap();
            assert!((&direct - &iter3.matrices[i]).amax() < 1e-9, "t = {t}");
        }
        assert!((p3.endpoint() - iter3.endpoint()).amax() < 1e-9);
    }

    #[test]
    fn symplecticity_along_orbits() {
        let map = sys_d();
        let mut rng = crate::sampling::rng_stream(11, 0);
        use rand::Rng;
        for _ in 0..25 {
            let z = DVector::from_fn(4, |_, _| rng.random_range(-1.0..1.0f64));
            let w = apply_factor(&map.factors[0], &z).unwrap();
            let m = differential_factor(&map.factors[0], &z, &w.rows(0, 2).into_owned()).unwrap();
            assert!(symplectic_residual(m.matrix()) < tol::SYMPLECTIC);
            let fd = fd_jacobian(&map.factors[0], &z, 1e-5);
            assert!((m.matrix() - fd).amax() < 1e-6);
        }
    }

    #[test]
    fn config_round_trip_rejects_bad_k() {
        let cfg = sys_c().to_config();
        let js = serde_json::to_string(&cfg).unwrap();
        let back: MapConfig = serde_json::from_str(&js).unwrap();
        let map = FactorizedMap::from_config(back).unwrap();
        assert_eq!(map.label, "SYS-C");
        let mut bad = cfg;
        bad.k = 3;
        assert!(FactorizedMap::from_config(bad).is_err());
    }
}
