//! Rotation-function Maslov machinery.
//!
//! The rotation function `ρ = det ∘ r` composes the polar retraction
//! `r(A) = (AAᵀ)^{-1/2}A` onto `U(d)` (under the identification
//! `(x, y) ↦ x + iy`) with the complex determinant. Unwrapping `θ` with
//! `e^{i2πθ(t)} = ρ(Γ(t))` along a path gives the average Maslov index
//! `avmas = 2(θ(1) − θ(0))`; closing the path into a reference component of
//! `Sp*(2d)` through `W'` or `W''` gives the integer Maslov index, extended
//! lower semi-continuously at degenerate endpoints by a perturbation panel.

use nalgebra::{Complex, DMatrix};
use serde::Serialize;
use std::sync::Arc;

use crate::action::OrbitRecord;
use crate::sampling::rng_stream;
use crate::symmap::{j_form, SymplecticMatrix};
use crate::tol;
use crate::{Result, SympalError};
use rand::Rng;

type C64 = Complex<f64>;
type Sampler = Arc<dyn Fn(f64) -> Result<DMatrix<f64>> + Send + Sync>;

/// RNG substream reserved for the degenerate perturbation panel.
const PANEL_STREAM: u64 = 0x50414E45;

/// `W' = diag(2, 1/2, -1, …, -1)` in `(x…, y…)` block ordering: the
/// hyperbolic reference matrix, `det(W' − I) < 0`.
pub fn w_prime(d: usize) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(2 * d, 2 * d);
    m[(0, 0)] = 2.0;
    m[(d, d)] = 0.5;
    for i in 1..d {
        m[(i, i)] = -1.0;
        m[(d + i, d + i)] = -1.0;
    }
    m
}

/// `W'' = -I`: the elliptic reference matrix, `det(W'' − I) > 0`.
pub fn w_dprime(d: usize) -> DMatrix<f64> {
    -DMatrix::identity(2 * d, 2 * d)
}

/// Rotation by `theta` in the `plane`-th symplectic coordinate plane.
pub fn plane_rotation(d: usize, plane: usize, theta: f64) -> DMatrix<f64> {
    let mut m = DMatrix::identity(2 * d, 2 * d);
    let (c, s) = (theta.cos(), theta.sin());
    m[(plane, plane)] = c;
    m[(plane, d + plane)] = -s;
    m[(d + plane, plane)] = s;
    m[(d + plane, d + plane)] = c;
    m
}

/// Left polar decomposition `M = exp(S)·O` with `S = ½·log(MMᵀ)` symmetric
/// and `O` orthogonal-symplectic. Fails on non-invertible input.
fn polar_left(m: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    let mmt = m * m.transpose();
    let se = mmt.symmetric_eigen();
    let mut log_half = DMatrix::zeros(n, n);
    let mut inv_sqrt = DMatrix::zeros(n, n);
    for i in 0..n {
        let lam = se.eigenvalues[i];
        if lam <= 0.0 || !lam.is_finite() {
            return Err(SympalError::PreconditionFailed(
                "polar decomposition failed: input not invertible (non-symplectic?)".into(),
            ));
        }
        log_half[(i, i)] = 0.5 * lam.ln();
        inv_sqrt[(i, i)] = 1.0 / lam.sqrt();
    }
    let v = &se.eigenvectors;
    let s = v * log_half * v.transpose();
    let o = v * inv_sqrt * v.transpose() * m;
    Ok((s, o))
}

/// Complex `d×d` form of an orthogonal-symplectic matrix
/// `O = [[P, -Q],[Q, P]] ↦ P + iQ` under `(x, y) ↦ x + iy`.
fn complexify(o: &DMatrix<f64>) -> Result<DMatrix<C64>> {
    let d = o.nrows() / 2;
    let p = o.view((0, 0), (d, d));
    let q = o.view((d, 0), (d, d));
    let res = (o.view((0, d), (d, d)) + q).amax().max((o.view((d, d), (d, d)) - p).amax());
    if res > 1e-5 {
        return Err(SympalError::PreconditionFailed(format!(
            "matrix is not unitary-symplectic (complex-structure residual {res:.3e}); non-symplectic input?"
        )));
    }
    // orthogonal projection onto complex-linear matrices: average the blocks
    Ok(DMatrix::from_fn(d, d, |i, j| {
        C64::new(
            0.5 * (o[(i, j)] + o[(d + i, d + j)]),
            0.5 * (o[(d + i, j)] - o[(i, d + j)]),
        )
    }))
}

fn realify(u: &DMatrix<C64>) -> DMatrix<f64> {
    let d = u.nrows();
    let mut o = DMatrix::zeros(2 * d, 2 * d);
    for i in 0..d {
        for j in 0..d {
            o[(i, j)] = u[(i, j)].re;
            o[(d + i, d + j)] = u[(i, j)].re;
            o[(i, d + j)] = -u[(i, j)].im;
            o[(d + i, j)] = u[(i, j)].im;
        }
    }
    o
}

fn sym_exp(s: &DMatrix<f64>) -> DMatrix<f64> {
    let se = s.clone().symmetric_eigen();
    let n = s.nrows();
    let mut e = DMatrix::zeros(n, n);
    for i in 0..n {
        e[(i, i)] = se.eigenvalues[i].exp();
    }
    &se.eigenvectors * e * se.eigenvectors.transpose()
}

/// Scaling-and-squaring series exponential for small generators.
pub fn matrix_exp(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.nrows();
    let norm = a.amax();
    let mut squarings = 0u32;
    let mut scale = 1.0;
    while norm * scale > 0.25 {
        scale *= 0.5;
        squarings += 1;
    }
    let b = a * scale;
    let mut term = DMatrix::identity(n, n);
    let mut acc = DMatrix::identity(n, n);
    for k in 1..=16 {
        term = &term * &b / k as f64;
        acc += &term;
    }
    for _ in 0..squarings {
        acc = &acc * &acc;
    }
    acc
}

fn rho_raw(m: &DMatrix<f64>) -> Result<C64> {
    let (_, o) = polar_left(m)?;
    let u = complexify(&o)?;
    let det = u.determinant();
    let n = det.norm();
    if (n - 1.0).abs() > 1e-7 {
        return Err(SympalError::PreconditionFailed(format!(
            "rotation function |ρ| = {n} deviates from 1; non-symplectic input?"
        )));
    }
    Ok(det / n)
}

/// The rotation function `ρ(M)` on `Sp(2d)`: determinant of the unitary
/// polar factor, a unit complex number.
pub fn rotation(m: &SymplecticMatrix) -> Result<C64> {
    rho_raw(m.matrix())
}

/// Sign of `det(M − I)` determined structurally from the eigenvalues:
/// complex-conjugate pairs contribute positively, each real eigenvalue
/// below 1 flips the sign. Robust where the LU determinant drowns in
/// rounding (needs no eigenvalue within `real_tol` of 1).
pub fn det_minus_id_sign(m: &DMatrix<f64>) -> f64 {
    let eigs = m.clone().complex_eigenvalues();
    let mut sign = 1.0;
    for e in eigs.iter() {
        if e.im.abs() <= 1e-9 * (1.0 + e.norm()) && e.re < 1.0 {
            sign = -sign;
        }
    }
    sign
}

fn min_eig_dist_to_one(m: &DMatrix<f64>) -> f64 {
    m.clone()
        .complex_eigenvalues()
        .iter()
        .map(|e| (e - C64::new(1.0, 0.0)).norm())
        .fold(f64::INFINITY, f64::min)
}

/// A sampled continuous path `Γ: [0,1] → Sp(2d)` with `Γ(0) = I`, carrying
/// the unwrapped angle `θ` of its rotation function. A sampler closure is
/// retained so the path can be refined or iterated.
#[derive(Clone)]
pub struct SymplecticPath {
    pub d: usize,
    pub times: Vec<f64>,
    pub matrices: Vec<DMatrix<f64>>,
    pub theta: Vec<f64>,
    sampler: Sampler,
}

impl std::fmt::Debug for SymplecticPath {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SymplecticPath")
            .field("d", &self.d)
            .field("samples", &self.times.len())
            .field("avmas", &self.theta_increment())
            .finish()
    }
}

fn unwrap_rhos(rhos: &[C64]) -> (Vec<f64>, f64) {
    let mut theta = Vec::with_capacity(rhos.len());
    let mut max_step: f64 = 0.0;
    theta.push(rhos[0].arg() / std::f64::consts::TAU);
    for i in 1..rhos.len() {
        let step = (rhos[i] / rhos[i - 1]).arg() / std::f64::consts::TAU;
        max_step = max_step.max(step.abs());
        theta.push(theta[i - 1] + step);
    }
    (theta, max_step)
}

impl SymplecticPath {
    /// Build by sampling `sampler` on a uniform grid, doubling resolution
    /// until the unwrap steps are unambiguous (< 0.25 turns) and the total
    /// angle is stable between refinements.
    pub fn from_sampler(d: usize, sampler: Sampler, initial_samples: usize) -> Result<Self> {
        let mut n = initial_samples.max(8).next_power_of_two().min(tol::UNWRAP_CAP);
        let mut prev_end: Option<f64> = None;
        loop {
            let times: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
            let matrices: Vec<DMatrix<f64>> =
                times.iter().map(|&t| sampler(t)).collect::<Result<_>>()?;
            let rhos: Vec<C64> = matrices.iter().map(rho_raw).collect::<Result<_>>()?;
            let (theta, max_step) = unwrap_rhos(&rhos);
            let end = *theta.last().unwrap();
            let steps_ok = max_step < tol::UNWRAP_STEP;
            if steps_ok {
                if prev_end.is_some_and(|pe| (end - pe).abs() < tol::UNWRAP_STABLE) || n >= tol::UNWRAP_CAP {
                    return Ok(Self { d, times, matrices, theta, sampler });
                }
                prev_end = Some(end);
            } else {
                if n >= tol::UNWRAP_CAP {
                    return Err(SympalError::RefineNeeded { cap: tol::UNWRAP_CAP });
                }
                prev_end = None;
            }
            n *= 2;
        }
    }

    /// Build from explicit samples (validating the unwrap-step rule); the
    /// sampler is kept for refinement of derived paths. Falls back to
    /// sampler-driven refinement if the given samples are too coarse.
    pub fn from_samples(
        d: usize,
        times: Vec<f64>,
        matrices: Vec<DMatrix<f64>>,
        sampler: Sampler,
    ) -> Result<Self> {
        let rhos: Vec<C64> = matrices.iter().map(rho_raw).collect::<Result<_>>()?;
        let (theta, max_step) = unwrap_rhos(&rhos);
        if max_step < tol::UNWRAP_STEP {
            return Ok(Self { d, times, matrices, theta, sampler });
        }
        Self::from_sampler(d, sampler, 2 * times.len())
    }

    pub fn endpoint(&self) -> &DMatrix<f64> {
        self.matrices.last().unwrap()
    }

    pub fn theta_increment(&self) -> f64 {
        self.theta.last().unwrap() - self.theta[0]
    }

    /// Evaluate the underlying sampler at an arbitrary time.
    pub fn sample(&self, t: f64) -> Result<DMatrix<f64>> {
        (self.sampler)(t)
    }

    /// Right-multiply the path by a time-dependent factor; sample times are
    /// reused (the factor is assumed mild enough not to break the step rule;
    /// if it does, the composed sampler refines).
    pub fn transformed(&self, factor: Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync>) -> Result<Self> {
        let base = self.sampler.clone();
        let f2 = factor.clone();
        let sampler: Sampler = Arc::new(move |t| Ok(base(t)? * f2(t)));
        let matrices: Vec<DMatrix<f64>> = self
            .times
            .iter()
            .zip(&self.matrices)
            .map(|(&t, m)| m * factor(t))
            .collect();
        Self::from_samples(self.d, self.times.clone(), matrices, sampler)
    }
}

/// `avmas(Γ) = 2(θ(1) − θ(0))`: twice the total winding of the rotation
/// function. Not necessarily an integer.
pub fn average_maslov(path: &SymplecticPath) -> f64 {
    2.0 * path.theta_increment()
}

/// The `n`-fold product path `Γ^{×n}((j+t)/n) = Γ(t)·Γ(1)^j` in the
/// universal cover.
pub fn iterate_path(path: &SymplecticPath, n: usize) -> Result<SymplecticPath> {
    if n == 0 {
        return Err(SympalError::PreconditionFailed("iterate_path needs n ≥ 1".into()));
    }
    if n == 1 {
        return Ok(path.clone());
    }
    let e = path.endpoint().clone();
    let mut powers = Vec::with_capacity(n);
    powers.push(DMatrix::identity(e.nrows(), e.ncols()));
    for j in 1..n {
        let next = &e * &powers[j - 1];
        powers.push(next);
    }

    let mut times = Vec::new();
    let mut mats = Vec::new();
    for j in 0..n {
        for (i, &t) in path.times.iter().enumerate() {
            if j > 0 && i == 0 {
                continue; // junction sample equals previous block's end
            }
            times.push((j as f64 + t) / n as f64);
            mats.push(&path.matrices[i] * &powers[j]);
        }
    }

    let base = path.sampler.clone();
    let powers_arc = Arc::new(powers);
    let nn = n;
    let sampler: Sampler = Arc::new(move |t: f64| {
        let u = t.clamp(0.0, 1.0) * nn as f64;
        let mut j = u.floor() as usize;
        let mut s = u - j as f64;
        if j >= nn {
            j = nn - 1;
            s = 1.0;
        }
        Ok(base(s)? * &powers_arc[j])
    });
    SymplecticPath::from_samples(path.d, times, mats, sampler)
}

/// Maslov computation knobs. All randomness (connector waypoints, the
/// degenerate perturbation panel) flows from `seed`.
#[derive(Debug, Clone, Serialize)]
pub struct MaslovConfig {
    pub seed: u64,
    /// Degenerate-liminf panel size (±I plus random symmetric draws).
    pub panel_size: usize,
    /// Magnitude `s` of the panel perturbation `exp(s·J·S·t)`.
    pub panel_scale: f64,
    /// Endpoint eigenvalue distance from 1 below which the lower
    /// semi-continuous extension is used.
    pub degeneracy_tol: f64,
    pub connector_attempts: usize,
    pub connector_samples: usize,
}

impl Default for MaslovConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            panel_size: 16,
            panel_scale: 1e-4,
            degeneracy_tol: tol::DEGENERATE_ENDPOINT,
            connector_attempts: 32,
            connector_samples: 256,
        }
    }
}

/// An SU(2) factor embedded at rows/cols `(i, j)` of a `d×d` unitary,
/// interpolated from the identity by geodesic angle scaling.
struct EmbeddedFactor {
    i: usize,
    j: usize,
    block: [C64; 4], // row-major [aa, ab, ba, bb], det = 1
}

impl EmbeddedFactor {
    fn new(i: usize, j: usize, block: [C64; 4]) -> Self {
        Self { i, j, block }
    }

    fn omega(&self) -> f64 {
        (0.5 * (self.block[0].re + self.block[3].re)).clamp(-1.0, 1.0).acos()
    }

    /// `T(s) = (sin((1−s)ω)·I + sin(sω)·T)/sin ω`; exact at s ∈ {0, 1}.
    fn at(&self, s: f64, d: usize) -> DMatrix<C64> {
        let mut out = DMatrix::identity(d, d).map(|x: f64| C64::new(x, 0.0));
        let omega = self.omega();
        if omega < 1e-12 {
            return out;
        }
        let denom = omega.sin();
        let a = ((1.0 - s) * omega).sin() / denom;
        let b = (s * omega).sin() / denom;
        let one = C64::new(1.0, 0.0);
        out[(self.i, self.i)] = one * a + self.block[0] * b;
        out[(self.i, self.j)] = self.block[1] * b;
        out[(self.j, self.i)] = self.block[2] * b;
        out[(self.j, self.j)] = one * a + self.block[3] * b;
        out
    }
}

/// Split an SU(2) element near −I (where the geodesic formula degenerates)
/// into a quarter rotation times a well-conditioned remainder.
fn push_factor(factors: &mut Vec<EmbeddedFactor>, i: usize, j: usize, block: [C64; 4]) {
    let half_tr = 0.5 * (block[0].re + block[3].re);
    if half_tr > -0.99 {
        factors.push(EmbeddedFactor::new(i, j, block));
        return;
    }
    let zero = C64::new(0.0, 0.0);
    let one = C64::new(1.0, 0.0);
    // quarter = [[0, 1],[−1, 0]]; remainder = quarter⁻¹ · block
    let quarter = [zero, one, -one, zero];
    let rem = [-block[2], -block[3], block[0], block[1]];
    factors.push(EmbeddedFactor::new(i, j, quarter));
    factors.push(EmbeddedFactor::new(i, j, rem));
}

/// One leg of a connecting path: simultaneous interpolation of the polar
/// factors, `A(s) = exp((1−s)S_from + s·S_to) · O(s)` with `O(s)` running
/// through scaled Givens factors of the unitary parts. `A(0) = from`,
/// `A(1) = to`; every sample symplectic by construction, and the positive
/// factor is invisible to ρ, so the winding comes from `O(s)` alone.
///
/// `branch_mask` selects, per diagonal phase, the 2π-complement branch
/// instead of the principal one; different branches land in different
/// homotopy classes of connectors, of which exactly one family avoids the
/// eigenvalue-1 hypersurface.
fn polar_leg(
    from: &DMatrix<f64>,
    to: &DMatrix<f64>,
    samples: usize,
    branch_mask: u32,
) -> Result<Vec<DMatrix<f64>>> {
    let (s_from, o_from) = polar_left(from)?;
    let (s_to, o_to) = polar_left(to)?;
    let u0 = complexify(&o_from)?;
    let u1 = complexify(&o_to)?;
    let v = u0.adjoint() * &u1;

    // complex Givens QR of the unitary v: v = F_1 ... F_m · D
    let d = v.nrows();
    let mut work = v.clone();
    let mut factors: Vec<EmbeddedFactor> = Vec::new();
    for c in 0..d {
        for r in c + 1..d {
            let b = work[(r, c)];
            if b.norm() < 1e-14 {
                continue;
            }
            let a = work[(c, c)];
            let n = (a.norm_sqr() + b.norm_sqr()).sqrt();
            let mut t = DMatrix::identity(d, d).map(|x: f64| C64::new(x, 0.0));
            t[(c, c)] = a.conj() / n;
            t[(c, r)] = b.conj() / n;
            t[(r, c)] = -b / n;
            t[(r, r)] = a / n;
            work = &t * &work;
            // factor to reconstruct v is t†, an SU(2) block at (c, r)
            push_factor(&mut factors, c, r, [a / n, -b.conj() / n, b / n, a.conj() / n]);
        }
    }
    let mut phases = Vec::with_capacity(d);
    for l in 0..d {
        let v_ll = work[(l, l)];
        if (v_ll.norm() - 1.0).abs() > 1e-8 {
            return Err(SympalError::ConnectFailure(format!(
                "Givens residual not unitary-diagonal (|v_ll| = {})",
                v_ll.norm()
            )));
        }
        let mut ph = v_ll.arg();
        if branch_mask & (1 << l) != 0 && ph != 0.0 {
            ph -= std::f64::consts::TAU * ph.signum();
        }
        phases.push(ph);
    }

    let mut leg = Vec::with_capacity(samples + 1);
    for i in 0..=samples {
        let s = i as f64 / samples as f64;
        let e = sym_exp(&((1.0 - s) * &s_from + s * &s_to));
        let mut u = u0.clone();
        for f in &factors {
            u *= f.at(s, d);
        }
        let mut dph = DMatrix::identity(d, d).map(|x: f64| C64::new(x, 0.0));
        for (l, &ph) in phases.iter().enumerate() {
            dph[(l, l)] = C64::from_polar(1.0, s * ph);
        }
        u *= dph;
        leg.push(e * realify(&u));
    }
    Ok(leg)
}

/// Crossing scan: a connector is rejected if any sample comes close to the
/// eigenvalue-1 hypersurface, measured by the eigenvalue distance to 1
/// (the determinant only *touches* zero at an elliptic-pair crossing, so a
/// determinant threshold cannot see transversal elliptic crossings). Two
/// rules, both scale-aware:
///   - no interior sample may drop below a fraction of the endpoint
///     distances, and
///   - no interior sample may be a sharp local dip relative to its
///     neighbors (catches crossings that fall between samples).
fn crossing_free(samples: &[DMatrix<f64>]) -> bool {
    let dists: Vec<f64> = samples.iter().map(min_eig_dist_to_one).collect();
    let n = dists.len();
    let floor = 0.25 * dists[0].min(dists[n - 1]);
    for i in 1..n - 1 {
        if dists[i] <= floor {
            return false;
        }
        if dists[i] < 0.45 * dists[i - 1].min(dists[i + 1]) {
            return false;
        }
    }
    true
}

fn random_unitary_symplectic(rng: &mut rand_chacha::ChaCha8Rng, d: usize) -> DMatrix<f64> {
    // random complex matrix, Gram-Schmidt, realify
    let mut cols: Vec<nalgebra::DVector<C64>> = Vec::with_capacity(d);
    for _ in 0..d {
        loop {
            let mut v = nalgebra::DVector::from_fn(d, |_, _| {
                C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
            });
            for c in &cols {
                let proj = c.dotc(&v);
                v -= c * proj;
            }
            let n = v.norm();
            if n > 1e-3 {
                v /= C64::new(n, 0.0);
                cols.push(v);
                break;
            }
        }
    }
    let u = DMatrix::from_columns(&cols);
    realify(&u)
}

fn random_symmetric(rng: &mut rand_chacha::ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    (&a + a.transpose()) * 0.5
}

/// Symplectic invariant-plane decomposition of a nondegenerate symplectic
/// matrix: `m = T · blockdiag(blocks) · T⁻¹` with `T` symplectic, each
/// block a standard 2×2 (elliptic rotation with its Krein-signed angle,
/// positive or negative hyperbolic diagonal) or a 4×4 `[[A,0],[0,A⁻ᵀ]]`
/// quadruple.
enum PlaneBlock {
    /// Standard rotation `R(angle)`, angle Krein-signed, `|angle| ∈ (0, π]`.
    Elliptic { angle: f64 },
    /// `diag(λ, 1/λ)`, `λ > 1`.
    PositiveHyperbolic { lambda: f64 },
    /// `−diag(λ, 1/λ)`, `λ ≥ 1`.
    NegativeHyperbolic { lambda: f64 },
    /// `[[A, 0],[0, (Aᵀ)⁻¹]]` with `A` having eigenvalues `r·e^{±iθ}`,
    /// `r > 1`, `θ ∈ (0, π)`.
    Quadruple { a: DMatrix<f64> },
}

struct PlaneSplit {
    t: DMatrix<f64>,
    blocks: Vec<PlaneBlock>,
}

fn complex_kernel_vector(m: &DMatrix<f64>, lambda: C64) -> Option<(DVectorF, DVectorF)> {
    let n = m.nrows();
    let mut k = DMatrix::zeros(2 * n, 2 * n);
    let shifted = m - DMatrix::identity(n, n) * lambda.re;
    k.view_mut((0, 0), (n, n)).copy_from(&shifted);
    k.view_mut((n, n), (n, n)).copy_from(&shifted);
    for i in 0..n {
        k[(i, n + i)] = lambda.im;
        k[(n + i, i)] = -lambda.im;
    }
    let svd = k.svd_unordered(true, true);
    let (mut best, mut best_sv) = (0, f64::INFINITY);
    for (i, &sv) in svd.singular_values.iter().enumerate() {
        if sv < best_sv {
            best_sv = sv;
            best = i;
        }
    }
    if best_sv > 1e-7 {
        return None;
    }
    let vt = svd.v_t.as_ref()?;
    let row = vt.row(best);
    let re = DVectorF::from_fn(n, |i, _| row[i]);
    let im = DVectorF::from_fn(n, |i, _| row[n + i]);
    Some((re, im))
}

type DVectorF = nalgebra::DVector<f64>;

fn omega(d: usize, a: &DVectorF, b: &DVectorF) -> f64 {
    // ⟨Ja, b⟩ with J = [[0, I],[-I, 0]]
    let mut s = 0.0;
    for i in 0..d {
        s += a[i] * b[d + i] - a[d + i] * b[i];
    }
    s
}

/// Attempt the invariant-plane split; `None` when the spectrum is too
/// clustered or defective for reliable plane extraction (callers fall back
/// to the sampled heuristic connector).
fn plane_split(m: &DMatrix<f64>) -> Option<PlaneSplit> {
    let n = m.nrows();
    let d = n / 2;
    let eigs: Vec<C64> = m.clone().complex_eigenvalues().iter().copied().collect();
    let im_tol = 1e-9;

    // near-degenerate endpoints produce ill-conditioned plane frames; the
    // sampled fallback handles them better
    if eigs.iter().any(|e| (e - C64::new(1.0, 0.0)).norm() < 2e-2) {
        return None;
    }

    // simple multiplicity guard: reliable plane extraction needs simple
    // eigenvalues (up to conjugate/inverse pairing)
    for i in 0..eigs.len() {
        for j in i + 1..eigs.len() {
            if (eigs[i] - eigs[j]).norm() < 1e-6 {
                return None;
            }
        }
    }

    let mut used = vec![false; eigs.len()];
    let mut columns: Vec<(DVectorF, DVectorF)> = Vec::new(); // (e, f) per plane
    let mut blocks = Vec::new();

    // complex eigenvalues first
    for i in 0..eigs.len() {
        if used[i] || eigs[i].im <= im_tol {
            continue;
        }
        let lam = eigs[i];
        let conj_idx = (0..eigs.len())
            .find(|&j| !used[j] && j != i && (eigs[j] - lam.conj()).norm() < 1e-7)?;
        if (lam.norm() - 1.0).abs() < 1e-7 {
            // elliptic pair
            used[i] = true;
            used[conj_idx] = true;
            let (a, b) = complex_kernel_vector(m, lam)?;
            let kappa = omega(d, &a, &b);
            if kappa.abs() < 2e-2 * a.norm() * b.norm() {
                return None; // Krein pairing too weak for a stable frame
            }
            let alpha = lam.arg(); // ∈ (0, π)
            let (e, f, angle) = if kappa < 0.0 {
                let s = (-kappa).sqrt();
                (b / s, a / s, alpha)
            } else {
                let s = kappa.sqrt();
                (a / s, b / s, -alpha)
            };
            columns.push((e, f));
            blocks.push(PlaneBlock::Elliptic { angle });
        } else {
            // Krein quadruple λ, λ̄, 1/λ, 1/λ̄
            let lam_out = if lam.norm() > 1.0 { lam } else { 1.0 / lam };
            let inv = 1.0 / lam_out;
            let i2 = (0..eigs.len())
                .find(|&j| !used[j] && (eigs[j] - lam_out).norm() < 1e-7)?;
            let i3 = (0..eigs.len())
                .find(|&j| !used[j] && j != i2 && (eigs[j] - lam_out.conj()).norm() < 1e-7)?;
            let i4 = (0..eigs.len()).find(|&j| !used[j] && (eigs[j] - inv).norm() < 1e-7)?;
            let i5 = (0..eigs.len())
                .find(|&j| !used[j] && j != i4 && (eigs[j] - inv.conj()).norm() < 1e-7)?;
            for j in [i2, i3, i4, i5] {
                used[j] = true;
            }
            let (p1, p2) = complex_kernel_vector(m, lam_out)?;
            let (z1, z2) = complex_kernel_vector(m, inv)?;
            // dual-normalize the inverse-plane basis: ω(p_i, q_j) = δ_ij
            let g = nalgebra::Matrix2::new(
                omega(d, &p1, &z1),
                omega(d, &p1, &z2),
                omega(d, &p2, &z1),
                omega(d, &p2, &z2),
            );
            let ginv = g.try_inverse()?;
            let q1 = &z1 * ginv[(0, 0)] + &z2 * ginv[(1, 0)];
            let q2 = &z1 * ginv[(0, 1)] + &z2 * ginv[(1, 1)];
            // read off A: action of m on the (p1, p2) plane
            let mp1 = m * &p1;
            let mp2 = m * &p2;
            let a_mat = DMatrix::from_row_slice(
                2,
                2,
                &[
                    omega(d, &mp1, &q1),
                    omega(d, &mp2, &q1),
                    omega(d, &mp1, &q2),
                    omega(d, &mp2, &q2),
                ],
            );
            columns.push((p1, q1));
            columns.push((p2, q2));
            blocks.push(PlaneBlock::Quadruple { a: a_mat });
        }
    }

    // real eigenvalues: hyperbolic pairs (λ, 1/λ)
    for i in 0..eigs.len() {
        if used[i] || eigs[i].im.abs() > im_tol {
            continue;
        }
        let lam = eigs[i].re;
        if (lam - 1.0).abs() < 1e-7 {
            return None; // nondegenerate endpoints only
        }
        let j = (0..eigs.len()).find(|&j| {
            !used[j] && j != i && eigs[j].im.abs() <= im_tol && (eigs[j].re - 1.0 / lam).abs() < 1e-7
        })?;
        used[i] = true;
        used[j] = true;
        let big = if lam.abs() > 1.0 { lam } else { 1.0 / lam };
        let (u, _) = complex_kernel_vector(m, C64::new(big, 0.0))?;
        let (v, _) = complex_kernel_vector(m, C64::new(1.0 / big, 0.0))?;
        let kappa = omega(d, &u, &v);
        if kappa.abs() < 2e-2 * u.norm() * v.norm() {
            return None;
        }
        let f = &v / kappa;
        columns.push((u, f));
        if big > 0.0 {
            blocks.push(PlaneBlock::PositiveHyperbolic { lambda: big });
        } else {
            blocks.push(PlaneBlock::NegativeHyperbolic { lambda: -big });
        }
    }

    let planes: usize = blocks
        .iter()
        .map(|b| match b {
            PlaneBlock::Quadruple { .. } => 2,
            _ => 1,
        })
        .sum();
    if planes != d || columns.len() != d {
        return None;
    }

    let mut t = DMatrix::zeros(n, n);
    for (pi, (e, f)) in columns.iter().enumerate() {
        for r in 0..n {
            t[(r, pi)] = e[r];
            t[(r, d + pi)] = f[r];
        }
    }
    // validity: T symplectic and the split reproduces m at homotopy start
    if crate::symmap::symplectic_residual(&t) > 1e-7 {
        return None;
    }
    let block_mat = assemble_blockdiag(d, &blocks, 0.0, 0.0);
    let t_inv = t.clone().try_inverse()?;
    if (&t * &block_mat * &t_inv - m).amax() > 1e-6 * (1.0 + m.amax()) {
        return None;
    }
    Some(PlaneSplit { t, blocks })
}

/// Block-diagonal matrix of the split at homotopy stage `stage ∈ [0, 2]`
/// (encoded by `phase ∈ [0,1]` within `leg ∈ {0.0, 1.0}`): leg 0 moves
/// every block to its local reference (angles to ±π, positive pairs to
/// λ = 2, negative to −I, quadruples to −I); leg 1 merges even sets of
/// positive-hyperbolic planes pairwise into −I blocks.
fn assemble_blockdiag(d: usize, blocks: &[PlaneBlock], leg: f64, s: f64) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(2 * d, 2 * d);
    let mut plane = 0usize;

    // gather positive-hyperbolic plane indices for the pair merge
    let mut pos_planes: Vec<usize> = Vec::new();
    {
        let mut p = 0;
        for b in blocks {
            match b {
                PlaneBlock::PositiveHyperbolic { .. } => {
                    pos_planes.push(p);
                    p += 1;
                }
                PlaneBlock::Quadruple { .. } => p += 2,
                _ => p += 1,
            }
        }
    }
    let paired: Vec<(usize, usize)> =
        pos_planes.chunks(2).filter(|c| c.len() == 2).map(|c| (c[0], c[1])).collect();
    let leftover: Option<usize> =
        if pos_planes.len() % 2 == 1 { pos_planes.last().copied() } else { None };

    let set_plane = |out: &mut DMatrix<f64>, p: usize, b: &nalgebra::Matrix2<f64>| {
        out[(p, p)] = b[(0, 0)];
        out[(p, d + p)] = b[(0, 1)];
        out[(d + p, p)] = b[(1, 0)];
        out[(d + p, d + p)] = b[(1, 1)];
    };

    for b in blocks {
        match b {
            PlaneBlock::Elliptic { angle } => {
                let theta = if leg < 0.5 {
                    let target = std::f64::consts::PI * angle.signum();
                    angle + s * (target - angle)
                } else {
                    std::f64::consts::PI * angle.signum()
                };
                set_plane(
                    &mut out,
                    plane,
                    &nalgebra::Matrix2::new(theta.cos(), -theta.sin(), theta.sin(), theta.cos()),
                );
                plane += 1;
            }
            PlaneBlock::PositiveHyperbolic { lambda } => {
                if leg >= 0.5 {
                    // merge leg: a pair of positive planes rotates jointly,
                    // A(s) = 2R(πs) then the modulus slides 2 → 1, ending
                    // at −I on both planes; moduli {2, ½} then {λ(s), 1/λ(s)}
                    // with the argument at π keep every eigenvalue off 1
                    if let Some(&(p1, p2)) =
                        paired.iter().find(|&&(p1, p2)| plane == p1 || plane == p2)
                    {
                        let (rot, modu) = if s < 0.5 {
                            (std::f64::consts::PI * (2.0 * s), 2.0)
                        } else {
                            (std::f64::consts::PI, 2.0 - (2.0 * s - 1.0))
                        };
                        let a = nalgebra::Matrix2::new(
                            modu * rot.cos(),
                            -modu * rot.sin(),
                            modu * rot.sin(),
                            modu * rot.cos(),
                        );
                        let a_inv_t = a.try_inverse().unwrap().transpose();
                        let planes = [p1, p2];
                        for (bi, &pi) in planes.iter().enumerate() {
                            for (bj, &pj) in planes.iter().enumerate() {
                                out[(pi, pj)] = a[(bi, bj)];
                                out[(d + pi, d + pj)] = a_inv_t[(bi, bj)];
                            }
                        }
                    } else if Some(plane) == leftover {
                        set_plane(&mut out, plane, &nalgebra::Matrix2::new(2.0, 0.0, 0.0, 0.5));
                    }
                    plane += 1;
                    continue;
                }
                let lam0 = lambda + s * (2.0 - lambda);
                set_plane(&mut out, plane, &nalgebra::Matrix2::new(lam0, 0.0, 0.0, 1.0 / lam0));
                plane += 1;
            }
            PlaneBlock::NegativeHyperbolic { lambda } => {
                let lam0 = if leg < 0.5 { lambda + s * (1.0 - lambda) } else { 1.0 };
                set_plane(&mut out, plane, &nalgebra::Matrix2::new(-lam0, 0.0, 0.0, -1.0 / lam0));
                plane += 1;
            }
            PlaneBlock::Quadruple { a } => {
                // slide A's eigenvalues r·e^{±iθ}: first θ → π with the
                // modulus fixed, then r → 1; the endpoint −I is central, so
                // the fixed eigenframe conjugation cancels there exactly
                let eigs = a.clone().complex_eigenvalues();
                let lam = if eigs[0].im > 0.0 { eigs[0] } else { eigs[1] };
                let (r0, th0) = (lam.norm(), lam.arg());
                let (r, th) = if leg < 0.5 {
                    if s < 0.5 {
                        (r0, th0 + 2.0 * s * (std::f64::consts::PI - th0))
                    } else {
                        (r0 + (2.0 * s - 1.0) * (1.0 - r0), std::f64::consts::PI)
                    }
                } else {
                    (1.0, std::f64::consts::PI)
                };
                let core = nalgebra::Matrix2::new(
                    r * th.cos(),
                    -r * th.sin(),
                    r * th.sin(),
                    r * th.cos(),
                );
                let a_s = match real_eigenframe(a) {
                    Some(c) => {
                        let c_inv = c.try_inverse().expect("eigenframe is invertible");
                        c * core * c_inv
                    }
                    None => core,
                };
                let a_inv_t = a_s.try_inverse().unwrap().transpose();
                for bi in 0..2 {
                    for bj in 0..2 {
                        out[(plane + bi, plane + bj)] = a_s[(bi, bj)];
                        out[(d + plane + bi, d + plane + bj)] = a_inv_t[(bi, bj)];
                    }
                }
                plane += 2;
            }
        }
    }
    out
}

fn real_eigenframe(a: &DMatrix<f64>) -> Option<nalgebra::Matrix2<f64>> {
    // A = C (r R(θ)) C⁻¹ for real 2×2 with complex eigenvalues:
    // columns of C are (Re v, -Im v) for the eigenvector v of r e^{iθ}
    let eigs = a.clone().complex_eigenvalues();
    let lam = if eigs[0].im > 0.0 { eigs[0] } else { eigs[1] };
    if lam.im.abs() < 1e-12 {
        return None;
    }
    // (A − Re λ) v_re = -Im λ · v_im ⇒ choose v_re = e1
    let vre = nalgebra::Vector2::new(1.0, 0.0);
    let vim = nalgebra::Vector2::new(
        (a[(0, 0)] - lam.re) / lam.im,
        a[(1, 0)] / lam.im,
    );
    let mut c = nalgebra::Matrix2::new(vre[0], -vim[0], vre[1], -vim[1]);
    if c.determinant() < 0.0 {
        c = nalgebra::Matrix2::new(-vre[0], -vim[0], -vre[1], -vim[1]);
    }
    if c.determinant().abs() < 1e-10 {
        return None;
    }
    Some(c)
}

/// Normal-form connector: eigenvalues are steered radially/angularly away
/// from 1 along explicit invariant-plane homotopies, so no sample can
/// cross the degeneracy hypersurface. Returns `None` when the spectrum
/// resists a clean plane split.
fn normal_form_connector(
    m: &DMatrix<f64>,
    target_sign: f64,
    samples: usize,
) -> Option<Vec<DMatrix<f64>>> {
    let split = plane_split(m)?;
    let d = m.nrows() / 2;
    let t = &split.t;
    let t_inv = t.clone().try_inverse()?;

    let n_pos = split
        .blocks
        .iter()
        .filter(|b| matches!(b, PlaneBlock::PositiveHyperbolic { .. }))
        .count();
    let sign = if n_pos % 2 == 1 { -1.0 } else { 1.0 };
    if sign != target_sign {
        return None; // inconsistent component classification; let the caller fall back
    }

    let mut path: Vec<DMatrix<f64>> = Vec::new();
    for leg in [0.0f64, 1.0] {
        if leg >= 0.5 && n_pos < 2 {
            break; // nothing to merge
        }
        for i in 0..=samples {
            if leg >= 0.5 && i == 0 {
                continue;
            }
            let s = i as f64 / samples as f64;
            let b = assemble_blockdiag(d, &split.blocks, leg, s);
            path.push(t * &b * &t_inv);
        }
    }

    // endpoint in the T-frame: either −I (central: frame irrelevant) or a
    // W′-like matrix needing alignment to the standard frame
    let end = path.last()?.clone();
    if target_sign > 0.0 {
        // should be exactly −I up to conjugation residue: force the exact
        // reference endpoint
        if (&end - w_dprime(d)).amax() > 1e-6 {
            return None;
        }
        path.push(w_dprime(d));
    } else {
        // one diag(2, ½) plane remains; align T and the plane position to
        // the standard first plane by an eigenvalue-constant conjugation
        let wp = w_prime(d);
        // locate the distinguished plane
        let mut pos_plane = None;
        {
            let mut p = 0;
            for b in &split.blocks {
                match b {
                    PlaneBlock::PositiveHyperbolic { .. } => {
                        pos_plane = Some(p);
                        p += 1;
                    }
                    PlaneBlock::Quadruple { .. } => p += 2,
                    _ => p += 1,
                }
            }
        }
        let pp = pos_plane?;
        let perm = plane_swap(d, 0, pp);
        // end = (T·perm) · W′ · (T·perm)⁻¹ (by construction of the blocks)
        let c0 = t * &perm;
        let c0_inv = c0.clone().try_inverse()?;
        if (&c0 * &wp * &c0_inv - &end).amax() > 1e-6 {
            return None;
        }
        // conjugation leg: any path C(s) from c0 to I keeps the spectrum
        // of C W′ C⁻¹ pinned at spec(W′), never touching 1
        let legs = conjugation_path(&c0, samples)?;
        for c in legs {
            let ci = c.clone().try_inverse()?;
            path.push(&c * &wp * ci);
        }
        path.push(wp);
    }
    Some(path)
}

fn plane_swap(d: usize, i: usize, j: usize) -> DMatrix<f64> {
    let mut p = DMatrix::identity(2 * d, 2 * d);
    if i != j {
        p[(i, i)] = 0.0;
        p[(j, j)] = 0.0;
        p[(i, j)] = 1.0;
        p[(j, i)] = 1.0;
        p[(d + i, d + i)] = 0.0;
        p[(d + j, d + j)] = 0.0;
        p[(d + i, d + j)] = 1.0;
        p[(d + j, d + i)] = 1.0;
    }
    p
}

/// A path from `c0` to the identity inside Sp(2d): contract the positive
/// polar factor while unwinding the unitary factor through scaled Givens
/// angles. Any such path is admissible for conjugation legs.
fn conjugation_path(c0: &DMatrix<f64>, samples: usize) -> Option<Vec<DMatrix<f64>>> {
    let leg = polar_leg(c0, &DMatrix::identity(c0.nrows(), c0.ncols()), samples, 0).ok()?;
    Some(leg)
}

/// Build a connecting path inside `Sp*(2d)` from `m` to the reference
/// matrix of its component. The normal-form homotopy is tried first (it
/// cannot cross the hypersurface); if the spectrum resists a plane split,
/// sampled polar-interpolation legs over the phase branches and randomized
/// waypoints take over, guarded by the crossing scan.
fn connect_to_reference(
    m: &DMatrix<f64>,
    cfg: &MaslovConfig,
    rng_stream_offset: u64,
    force_waypoint: bool,
) -> Result<Vec<DMatrix<f64>>> {
    let d = m.nrows() / 2;
    let sign = det_minus_id_sign(m);
    let target = if sign < 0.0 { w_prime(d) } else { w_dprime(d) };

    if !force_waypoint {
        if let Some(candidate) = normal_form_connector(m, sign, cfg.connector_samples) {
            if crossing_free(&candidate) {
                return Ok(candidate);
            }
        }
        let mut masks: Vec<u32> = vec![0];
        for l in 0..d {
            masks.push(1 << l);
        }
        if d > 1 {
            masks.push((1 << d) - 1);
        }
        for mask in masks {
            let candidate = polar_leg(m, &target, cfg.connector_samples, mask)?;
            if crossing_free(&candidate) {
                return Ok(candidate);
            }
        }
    }

    for attempt in 0..cfg.connector_attempts {
        let mut rng = rng_stream(cfg.seed, rng_stream_offset + attempt as u64);
        let mut waypoint = None;
        for _ in 0..40 {
            let o = random_unitary_symplectic(&mut rng, d);
            let s = random_symmetric(&mut rng, 2 * d);
            let v = &o * matrix_exp(&(j_form(d) * s * 0.4));
            if det_minus_id_sign(&v) == sign && min_eig_dist_to_one(&v) > 1e-4 {
                waypoint = Some(v);
                break;
            }
        }
        let Some(v) = waypoint else { continue };
        let mut mask_pairs: Vec<(u32, u32)> = vec![(0, 0)];
        for l in 0..d as u32 {
            mask_pairs.push((0, 1 << l));
            mask_pairs.push((1 << l, 0));
        }
        mask_pairs.push(((1 << d) - 1, (1 << d) - 1));
        for (mask1, mask2) in mask_pairs {
            let mut leg1 = polar_leg(m, &v, cfg.connector_samples, mask1)?;
            let leg2 = polar_leg(&v, &target, cfg.connector_samples, mask2)?;
            leg1.extend(leg2.into_iter().skip(1));
            if crossing_free(&leg1) {
                return Ok(leg1);
            }
        }
    }
    Err(SympalError::ConnectFailure(format!(
        "no crossing-free connector after {} attempts",
        cfg.connector_attempts
    )))
}

/// Maslov index of a path with nondegenerate endpoint: unwrap `θ` through a
/// connector into the reference matrix and read off `2Δθ`, which must be an
/// integer.
fn mas_nondegenerate(
    path: &SymplecticPath,
    cfg: &MaslovConfig,
    stream_offset: u64,
    force_waypoint: bool,
) -> Result<i64> {
    let connector = connect_to_reference(path.endpoint(), cfg, stream_offset, force_waypoint)?;
    let rhos: Vec<C64> = connector.iter().map(rho_raw).collect::<Result<_>>()?;
    let mut theta = *path.theta.last().unwrap();
    let mut prev = rhos[0]; // equals ρ(endpoint)
    for r in &rhos[1..] {
        let step = (r / prev).arg() / std::f64::consts::TAU;
        if step.abs() >= tol::UNWRAP_STEP {
            return Err(SympalError::RefineNeeded { cap: connector.len() });
        }
        theta += step;
        prev = *r;
    }
    let avm = 2.0 * (theta - path.theta[0]);
    let rounded = avm.round();
    if (avm - rounded).abs() > tol::MASLOV_INTEGER {
        return Err(SympalError::InvariantMismatch(format!(
            "closed-up average Maslov index {avm} is not an integer"
        )));
    }
    Ok(rounded as i64)
}

#[derive(Debug, Clone, Serialize)]
pub struct MaslovDetail {
    pub mas: i64,
    pub avmas: f64,
    pub degenerate_endpoint: bool,
    /// `(panel index, mas)` for each nondegenerate perturbation, when the
    /// endpoint was degenerate.
    pub panel: Vec<(usize, i64)>,
}

/// Maslov index of `Γ`. Nondegenerate endpoints close up through `W'/W''`;
/// degenerate endpoints take the minimum over a panel of perturbed paths
/// `Γ(t)·exp(s·J·S·t)`, realizing the lower semi-continuous extension.
///
/// `force_degenerate` lets a caller who has already classified the
/// endpoint as degenerate (through the nullity machinery, whose tolerance
/// is scale-aware) override the raw eigenvalue test; the panel scale is
/// then widened past the endpoint's residual eigenvalue distance so the
/// perturbation dominates convergence scatter.
pub fn maslov_index_detailed_ext(
    path: &SymplecticPath,
    cfg: &MaslovConfig,
    force_degenerate: bool,
) -> Result<MaslovDetail> {
    let avmas = average_maslov(path);
    let dist = min_eig_dist_to_one(path.endpoint());
    if dist > cfg.degeneracy_tol && !force_degenerate {
        let mas = mas_nondegenerate(path, cfg, 0, false)?;
        return Ok(MaslovDetail { mas, avmas, degenerate_endpoint: false, panel: Vec::new() });
    }
    let scale = cfg.panel_scale.max(30.0 * dist).min(1e-2);

    let d = path.d;
    let j = j_form(d);
    let mut panel_gens: Vec<DMatrix<f64>> = vec![
        DMatrix::identity(2 * d, 2 * d),
        -DMatrix::identity(2 * d, 2 * d),
    ];
    let mut rng = rng_stream(cfg.seed, PANEL_STREAM);
    while panel_gens.len() < cfg.panel_size {
        panel_gens.push(random_symmetric(&mut rng, 2 * d));
    }

    let mut panel = Vec::new();
    for (idx, s_mat) in panel_gens.iter().enumerate() {
        let gen = &j * s_mat * scale;
        let factor: Arc<dyn Fn(f64) -> DMatrix<f64> + Send + Sync> = {
            let gen = gen.clone();
            Arc::new(move |t: f64| matrix_exp(&(&gen * t)))
        };
        let perturbed = path.transformed(factor)?;
        if min_eig_dist_to_one(perturbed.endpoint()) <= cfg.degeneracy_tol {
            continue;
        }
        let mas = mas_nondegenerate(&perturbed, cfg, 1000 + idx as u64 * 100, false)?;
        // the n = 1 iteration inequality brackets any legitimate branch;
        // values outside it signal an undetected connector crossing
        let avm_p = average_maslov(&perturbed);
        if (mas as f64) < avm_p - d as f64 - 0.5 || (mas as f64) > avm_p + d as f64 + 0.5 {
            continue;
        }
        panel.push((idx, mas));
    }
    let mas = panel
        .iter()
        .map(|&(_, m)| m)
        .min()
        .ok_or_else(|| SympalError::InvariantMismatch("entire perturbation panel degenerate".into()))?;
    Ok(MaslovDetail { mas, avmas, degenerate_endpoint: true, panel })
}

pub fn maslov_index_detailed(path: &SymplecticPath, cfg: &MaslovConfig) -> Result<MaslovDetail> {
    maslov_index_detailed_ext(path, cfg, false)
}

pub fn maslov_index(path: &SymplecticPath, cfg: &MaslovConfig) -> Result<i64> {
    Ok(maslov_index_detailed(path, cfg)?.mas)
}

/// `maslov_index` with an externally supplied degeneracy classification
/// (see `maslov_index_detailed_ext`).
pub fn maslov_index_forced(path: &SymplecticPath, cfg: &MaslovConfig, degenerate: bool) -> Result<i64> {
    Ok(maslov_index_detailed_ext(path, cfg, degenerate)?.mas)
}

/// Like `maslov_index` but forcing a randomized waypoint into the connector
/// (only meaningful for nondegenerate endpoints); used to validate
/// connector independence.
pub fn maslov_index_with_waypoint(path: &SymplecticPath, cfg: &MaslovConfig, stream: u64) -> Result<i64> {
    mas_nondegenerate(path, cfg, stream, true)
}

/// Report for the Liu–Long iteration inequalities
/// `n·avmas(Γ) − d ≤ mas(Γ^{×n}) ≤ n·avmas(Γ) + d − nul_n`.
#[derive(Debug, Clone, Serialize)]
pub struct IterationBoundsReport {
    pub n: usize,
    pub avmas: f64,
    pub mas_n: i64,
    pub lower: f64,
    pub upper: f64,
    pub lower_ok: bool,
    pub upper_ok: bool,
    pub both_strict: bool,
    /// When not both strict: is 1 the only eigenvalue of the iterated
    /// endpoint (as the theory requires)?
    pub unipotent_when_tight: Option<bool>,
    /// When the base endpoint is unipotent and avmas = 0:
    /// does `mas(Γ^{×n}) = mas(Γ)` hold?
    pub persistence_check: Option<bool>,
}

pub fn check_iteration_bounds(
    path: &SymplecticPath,
    n: usize,
    nullity_n: usize,
    cfg: &MaslovConfig,
) -> Result<IterationBoundsReport> {
    let d = path.d as f64;
    let avmas = average_maslov(path);
    let iterated = iterate_path(path, n)?;
    // the caller's nullity (scale-aware kernel of the iterated endpoint)
    // decides the degenerate branch, keeping both classifiers aligned
    let mas_n = maslov_index_forced(&iterated, cfg, nullity_n > 0)?;
    let lower = n as f64 * avmas - d;
    let upper = n as f64 * avmas + d - nullity_n as f64;
    let lower_ok = mas_n as f64 >= lower - 1e-9;
    let upper_ok = mas_n as f64 <= upper + 1e-9;
    let both_strict = (mas_n as f64) > lower + 1e-7 && (mas_n as f64) < upper - 1e-7;

    let unipotent_when_tight = if !both_strict {
        let all_one = iterated
            .endpoint()
            .clone()
            .complex_eigenvalues()
            .iter()
            .all(|e| (e - C64::new(1.0, 0.0)).norm() < tol::UNIPOTENT);
        Some(all_one)
    } else {
        None
    };

    let base_unipotent = path
        .endpoint()
        .clone()
        .complex_eigenvalues()
        .iter()
        .all(|e| (e - C64::new(1.0, 0.0)).norm() < tol::UNIPOTENT);
    let persistence_check = if base_unipotent && avmas.abs() < tol::AVMAS_ZERO {
        let mas_1 = maslov_index_forced(path, cfg, true)?;
        Some(mas_1 == mas_n)
    } else {
        None
    };

    Ok(IterationBoundsReport {
        n,
        avmas,
        mas_n,
        lower,
        upper,
        lower_ok,
        upper_ok,
        both_strict,
        unipotent_when_tight,
        persistence_check,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct IndexTheoremReport {
    pub morse_index: usize,
    pub dkp: usize,
    pub maslov: i64,
    pub ok: bool,
}

/// The symplectic Morse index theorem: `mor(z) = mas(z) + dkp`, exact as
/// integers on every orbit record.
pub fn index_theorem_check(record: &OrbitRecord) -> IndexTheoremReport {
    let dkp = record.loop_config.d * record.loop_config.k * record.loop_config.p;
    let ok = record.morse_index as i64 - dkp as i64 == record.maslov;
    IndexTheoremReport { morse_index: record.morse_index, dkp, maslov: record.maslov, ok }
}

/// Constant path at the identity (test and SYS-A plumbing).
pub fn constant_identity_path(d: usize) -> SymplecticPath {
    let id = DMatrix::identity(2 * d, 2 * d);
    let id2 = id.clone();
    SymplecticPath::from_sampler(d, Arc::new(move |_| Ok(id2.clone())), 8)
        .expect("identity path always unwraps")
}

/// Path `t ↦ R(θ·t)` in one plane (test helper).
pub fn rotation_path(d: usize, plane: usize, theta: f64) -> SymplecticPath {
    SymplecticPath::from_sampler(
        d,
        Arc::new(move |t: f64| Ok(plane_rotation(d, plane, theta * t))),
        64,
    )
    .expect("rotation path unwraps")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{PI, TAU};

    #[test]
    fn rotation_of_identity_and_rotations() {
        let id = SymplecticMatrix::identity(2);
        let r = rotation(&id).unwrap();
        assert!((r - C64::new(1.0, 0.0)).norm() < 1e-12);

        for th in [0.3, -1.2, 2.9] {
            let m = SymplecticMatrix::new(plane_rotation(1, 0, th)).unwrap();
            let r = rotation(&m).unwrap();
            assert!((r - C64::from_polar(1.0, th)).norm() < 1e-10, "θ = {th}");
        }
    }

    #[test]
    fn rotation_of_reference_matrices() {
        for d in 1..=3 {
            let wp = SymplecticMatrix::new(w_prime(d)).unwrap();
            let wd = SymplecticMatrix::new(w_dprime(d)).unwrap();
            let expected_p = if d % 2 == 1 { 1.0 } else { -1.0 }; // (−1)^{d−1}
            let expected_d = if d % 2 == 0 { 1.0 } else { -1.0 }; // (−1)^d
            assert!((rotation(&wp).unwrap() - C64::new(expected_p, 0.0)).norm() < 1e-12);
            assert!((rotation(&wd).unwrap() - C64::new(expected_d, 0.0)).norm() < 1e-12);
        }
    }

    #[test]
    fn rotation_of_shear_is_not_one() {
        // polar angle of [[1, c],[0, 1]] is -atan(c/2)
        let c = 2.0;
        let m = DMatrix::from_row_slice(2, 2, &[1.0, c, 0.0, 1.0]);
        let r = rho_raw(&m).unwrap();
        let expected = C64::from_polar(1.0, -(c / 2.0f64).atan());
        assert!((r - expected).norm() < 1e-10, "got {r}");
    }

    #[test]
    fn average_maslov_examples() {
        let id_path = constant_identity_path(1);
        assert_eq!(average_maslov(&id_path), 0.0);

        // Γ(t) = R(2παt), α = 1/4 → avmas = 2·α = 0.5
        let p = rotation_path(1, 0, TAU * 0.25);
        assert!((average_maslov(&p) - 0.5).abs() < 1e-8);
    }

    #[test]
    fn maslov_index_of_quarter_rotation() {
        let p = rotation_path(1, 0, TAU * 0.25);
        let mas = maslov_index(&p, &MaslovConfig::default()).unwrap();
        assert_eq!(mas, 1);
    }

    #[test]
    fn maslov_index_of_constant_path_is_minus_d() {
        for d in 1..=2 {
            let p = constant_identity_path(d);
            let mas = maslov_index(&p, &MaslovConfig::default()).unwrap();
            assert_eq!(mas, -(d as i64), "d = {d}");
        }
    }

    #[test]
    fn iterate_rotation_path() {
        let p = rotation_path(1, 0, TAU * 0.25);
        let it = iterate_path(&p, 2).unwrap();
        assert!((average_maslov(&it) - 1.0).abs() < 1e-8);
        // endpoint of iterate = endpoint²
        let e2 = p.endpoint() * p.endpoint();
        assert!((it.endpoint() - e2).amax() < 1e-12);
        // total rotation π lands exactly on W'' = −I; connector is trivial
        assert_eq!(maslov_index(&it, &MaslovConfig::default()).unwrap(), 1);
    }

    #[test]
    fn iterate_constant_path() {
        let p = constant_identity_path(1);
        let it = iterate_path(&p, 5).unwrap();
        assert_eq!(average_maslov(&it), 0.0);
        assert_eq!(maslov_index(&it, &MaslovConfig::default()).unwrap(), -1);
    }

    #[test]
    fn elliptic_direct_sums_in_sp4() {
        // R(π/2) ⊕ R(π/2): each plane contributes one half-winding; mas = 2.
        let path = SymplecticPath::from_sampler(
            2,
            Arc::new(move |t: f64| {
                Ok(plane_rotation(2, 0, PI / 2.0 * t) * plane_rotation(2, 1, PI / 2.0 * t))
            }),
            64,
        )
        .unwrap();
        assert!((average_maslov(&path) - 1.0).abs() < 1e-8);
        assert_eq!(maslov_index(&path, &MaslovConfig::default()).unwrap(), 2);

        // elliptic ⊕ hyperbolic: only the elliptic plane counts; mas = 1.
        let boost = {
            let mut s = DMatrix::zeros(4, 4);
            s[(0, 0)] = 0.4;
            s[(2, 2)] = -0.4;
            s
        };
        let path = SymplecticPath::from_sampler(
            2,
            Arc::new(move |t: f64| Ok(plane_rotation(2, 1, PI / 2.0 * t) * sym_exp(&(&boost * t)))),
            64,
        )
        .unwrap();
        assert_eq!(maslov_index(&path, &MaslovConfig::default()).unwrap(), 1);
    }

    #[test]
    fn hyperbolic_path_has_maslov_zero() {
        // pure boost: ρ ≡ 1, endpoint in the W' component
        let path = SymplecticPath::from_sampler(
            1,
            Arc::new(move |t: f64| {
                let mut s = DMatrix::zeros(2, 2);
                s[(0, 0)] = 0.8 * t;
                s[(1, 1)] = -0.8 * t;
                Ok(sym_exp(&s))
            }),
            32,
        )
        .unwrap();
        assert!(average_maslov(&path).abs() < 1e-10);
        assert_eq!(maslov_index(&path, &MaslovConfig::default()).unwrap(), 0);
        assert!(det_minus_id_sign(path.endpoint()) < 0.0);
    }

    #[test]
    fn shear_path_maslov_via_liminf() {
        // Γ(t) = [[1, tc],[0,1]] has unipotent endpoint; the lower
        // semi-continuous extension gives −1 (elliptic side wins the min).
        let c = 0.39;
        let path = SymplecticPath::from_sampler(
            1,
            Arc::new(move |t: f64| Ok(DMatrix::from_row_slice(2, 2, &[1.0, t * c, 0.0, 1.0]))),
            64,
        )
        .unwrap();
        let det = maslov_index_detailed(&path, &MaslovConfig::default()).unwrap();
        assert!(det.degenerate_endpoint);
        assert_eq!(det.mas, -1);
        // lower semicontinuity: the liminf value is ≤ every sampled branch
        assert!(det.panel.iter().all(|&(_, m)| det.mas <= m));
        // both ±1-side branches appear in the panel
        assert!(det.panel.iter().any(|&(_, m)| m == -1));
        assert!(det.panel.iter().any(|&(_, m)| m == 0));
    }

    #[test]
    fn connector_independence() {
        let cfg = MaslovConfig::default();
        for (name, path) in [
            ("elliptic", rotation_path(1, 0, 0.9)),
            ("hyperbolic", {
                SymplecticPath::from_sampler(
                    1,
                    Arc::new(move |t: f64| {
                        let mut s = DMatrix::zeros(2, 2);
                        s[(0, 0)] = 0.5 * t;
                        s[(1, 1)] = -0.5 * t;
                        Ok(sym_exp(&s))
                    }),
                    32,
                )
                .unwrap()
            }),
        ] {
            let base = maslov_index(&path, &cfg).unwrap();
            for stream in [11u64, 22, 33] {
                let m = maslov_index_with_waypoint(&path, &cfg, stream).unwrap();
                assert_eq!(m, base, "{name}, stream {stream}");
            }
        }
    }

    #[test]
    fn sampling_stability() {
        let th = TAU * 0.37;
        let coarse = SymplecticPath::from_sampler(
            1,
            Arc::new(move |t: f64| Ok(plane_rotation(1, 0, th * t))),
            32,
        )
        .unwrap();
        let fine = SymplecticPath::from_sampler(
            1,
            Arc::new(move |t: f64| Ok(plane_rotation(1, 0, th * t))),
            1024,
        )
        .unwrap();
        assert!((average_maslov(&coarse) - average_maslov(&fine)).abs() < 1e-8);
        let cfg = MaslovConfig::default();
        assert_eq!(maslov_index(&coarse, &cfg).unwrap(), maslov_index(&fine, &cfg).unwrap());
    }

    #[test]
    fn refinement_triggers_on_fast_rotation() {
        // 6 full turns: 8 initial samples violate the 0.25-turn step rule,
        // refinement must kick in and still produce 12 half-windings.
        let p = SymplecticPath::from_sampler(
            1,
            Arc::new(move |t: f64| Ok(plane_rotation(1, 0, 6.0 * TAU * t))),
            8,
        )
        .unwrap();
        assert!((average_maslov(&p) - 12.0).abs() < 1e-8);
        assert!(p.times.len() > 9);
    }
}
