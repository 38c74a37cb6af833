//! The discrete symplectic action in arbitrary period, its derivatives,
//! critical-point search, Morse data and orbit deduplication.
//!
//! A lifted loop `z = (z_0, …, z_{kp−1})` has action
//! `Σ_j ⟨y_j, x_j − x_{j+1}⟩ + f_{j mod k}(x_{j+1}, y_j)` (cyclic indices);
//! critical points are exactly the lifted contractible `p`-periodic orbits
//! of the factorized map. Loops are kept as canonical representatives
//! modulo the diagonal `Z^{2d}` action, with the base point reduced to
//! `[0,1)^{2d}`.

use nalgebra::{Complex, DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::maslov::{self, MaslovConfig};
use crate::sampling::rng_stream;
use crate::symmap::{self, FactorizedMap};
use crate::tol;
use crate::{Result, SympalError};
use rand::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct LoopConfiguration {
    pub d: usize,
    pub k: usize,
    pub p: usize,
    /// `kp` points in `R^{2d}`, base point reduced to `[0,1)^{2d}`.
    pub points: Vec<DVector<f64>>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct LoopConfigJson {
    d: usize,
    k: usize,
    p: usize,
    points: Vec<Vec<f64>>,
}

impl Serialize for LoopConfiguration {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        LoopConfigJson {
            d: self.d,
            k: self.k,
            p: self.p,
            points: self.points.iter().map(|v| v.iter().copied().collect()).collect(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for LoopConfiguration {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let raw = LoopConfigJson::deserialize(de)?;
        LoopConfiguration::new(
            raw.d,
            raw.k,
            raw.p,
            raw.points.into_iter().map(DVector::from_vec).collect(),
        )
        .map_err(serde::de::Error::custom)
    }
}

impl LoopConfiguration {
    pub fn new(d: usize, k: usize, p: usize, points: Vec<DVector<f64>>) -> Result<Self> {
        if points.len() != k * p {
            return Err(SympalError::DimensionMismatch { expected: k * p, got: points.len() });
        }
        for pt in &points {
            if pt.len() != 2 * d {
                return Err(SympalError::DimensionMismatch { expected: 2 * d, got: pt.len() });
            }
        }
        let mut lc = Self { d, k, p, points };
        lc.canonicalize();
        Ok(lc)
    }

    pub fn constant(d: usize, k: usize, p: usize, z: &DVector<f64>) -> Result<Self> {
        Self::new(d, k, p, vec![z.clone(); k * p])
    }

    /// Reduce modulo the diagonal `Z^{2d}` action: subtract `⌊z_0⌋` from
    /// every point. Idempotent.
    pub fn canonicalize(&mut self) {
        let shift = self.points[0].map(|c| c.floor());
        if shift.amax() == 0.0 {
            return;
        }
        for pt in &mut self.points {
            *pt -= &shift;
        }
    }

    pub fn dims(&self) -> usize {
        2 * self.d * self.k * self.p
    }

    pub fn flat(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.dims());
        for (j, pt) in self.points.iter().enumerate() {
            v.rows_mut(j * 2 * self.d, 2 * self.d).copy_from(pt);
        }
        v
    }

    pub fn from_flat(d: usize, k: usize, p: usize, flat: &DVector<f64>) -> Result<Self> {
        if flat.len() != 2 * d * k * p {
            return Err(SympalError::DimensionMismatch { expected: 2 * d * k * p, got: flat.len() });
        }
        let points = (0..k * p).map(|j| flat.rows(j * 2 * d, 2 * d).into_owned()).collect();
        Self::new(d, k, p, points)
    }

    /// `z^{×n}`: the loop traversed `n` times, a critical point of the
    /// period-`pn` action whenever `z` is one of the period-`p` action.
    pub fn iterate(&self, n: usize) -> Self {
        let mut points = Vec::with_capacity(self.points.len() * n);
        for _ in 0..n {
            points.extend(self.points.iter().cloned());
        }
        Self { d: self.d, k: self.k, p: self.p * n, points }
    }

    /// Cyclic shift by `s` whole `k`-blocks (the `Z_p` action), canonical.
    pub fn shift_blocks(&self, s: usize) -> Self {
        let kp = self.points.len();
        let off = (s % self.p) * self.k;
        let points = (0..kp).map(|j| self.points[(j + off) % kp].clone()).collect();
        let mut lc = Self { d: self.d, k: self.k, p: self.p, points };
        lc.canonicalize();
        lc
    }

    /// Sup distance after aligning the deck representative.
    pub fn distance(&self, other: &Self) -> f64 {
        let m = (&other.points[0] - &self.points[0]).map(|c| c.round());
        self.points
            .iter()
            .zip(&other.points)
            .map(|(a, b)| (b - &m - a).amax())
            .fold(0.0, f64::max)
    }

    /// Min distance over all `Z_p` shifts of `other` (orbit equivalence).
    pub fn equivalent_distance(&self, other: &Self) -> f64 {
        (0..self.p)
            .map(|s| self.distance(&other.shift_blocks(s)))
            .fold(f64::INFINITY, f64::min)
    }

    /// Lexicographically smallest point list among all shifts after deck
    /// reduction: the canonical orbit representative.
    pub fn canonical_representative(&self) -> Self {
        let mut best = self.shift_blocks(0);
        let mut best_key = best.flat();
        for s in 1..self.p {
            let cand = self.shift_blocks(s);
            let key = cand.flat();
            if key.as_slice() < best_key.as_slice() {
                best = cand;
                best_key = key;
            }
        }
        best
    }

    pub fn orbit_key(&self) -> String {
        let rep = self.canonical_representative();
        let mut key = format!("d{}k{}p{}", self.d, self.k, self.p);
        for pt in &rep.points {
            for c in pt.iter() {
                // micro-unit quantization keeps keys stable across runs
                key.push_str(&format!(":{}", (c * 1e6).round() as i64));
            }
        }
        key
    }
}

fn check_loop(map: &FactorizedMap, lc: &LoopConfiguration) -> Result<()> {
    if lc.d != map.d || lc.k != map.k() {
        return Err(SympalError::DimensionMismatch { expected: 2 * map.d, got: 2 * lc.d });
    }
    Ok(())
}

/// `𝒜⁽ᵖ⁾(z) = Σ_j ⟨y_j, x_j − x_{j+1}⟩ + f_{j mod k}(x_{j+1}, y_j)`.
pub fn action_value(map: &FactorizedMap, lc: &LoopConfiguration) -> Result<f64> {
    check_loop(map, lc)?;
    let d = map.d;
    let kp = lc.points.len();
    let mut acc = 0.0;
    let mut arg = vec![0.0; 2 * d];
    for j in 0..kp {
        let zj = &lc.points[j];
        let znext = &lc.points[(j + 1) % kp];
        for i in 0..d {
            acc += zj[d + i] * (zj[i] - znext[i]);
            arg[i] = znext[i];
            arg[d + i] = zj[d + i];
        }
        acc += map.factor(j).evaluate(&arg)?;
    }
    Ok(acc)
}

/// Gradient of the action; vanishes exactly on lifted orbits.
pub fn action_gradient(map: &FactorizedMap, lc: &LoopConfiguration) -> Result<DVector<f64>> {
    check_loop(map, lc)?;
    let d = map.d;
    let kp = lc.points.len();
    let mut g = DVector::zeros(lc.dims());
    let mut arg = vec![0.0; 2 * d];
    for j in 0..kp {
        // term j couples y_j with (x_j, x_{j+1}) through f_j(x_{j+1}, y_j)
        let jn = (j + 1) % kp;
        let zj = &lc.points[j];
        let znext = &lc.points[jn];
        for i in 0..d {
            arg[i] = znext[i];
            arg[d + i] = zj[d + i];
        }
        let gf = map.factor(j).gradient(&arg)?;
        for i in 0..d {
            // ∂/∂y_j: (x_j − x_{j+1}) + ∂_y f_j
            g[j * 2 * d + d + i] += zj[i] - znext[i] + gf[d + i];
            // ∂/∂x_j (from term j): +y_j
            g[j * 2 * d + i] += zj[d + i];
            // ∂/∂x_{j+1} (from term j): −y_j + ∂_x f_j
            g[jn * 2 * d + i] += -zj[d + i] + gf[i];
        }
    }
    Ok(g)
}

/// Dense symmetric Hessian of the action (size `2dkp`).
pub fn action_hessian(map: &FactorizedMap, lc: &LoopConfiguration) -> Result<DMatrix<f64>> {
    check_loop(map, lc)?;
    let d = map.d;
    let kp = lc.points.len();
    let n = lc.dims();
    let mut h = DMatrix::zeros(n, n);
    let mut arg = vec![0.0; 2 * d];
    let xi = |j: usize, a: usize| j * 2 * d + a;
    let yi = |j: usize, a: usize| j * 2 * d + d + a;
    for j in 0..kp {
        let jn = (j + 1) % kp;
        let zj = &lc.points[j];
        let znext = &lc.points[jn];
        for i in 0..d {
            arg[i] = znext[i];
            arg[d + i] = zj[d + i];
        }
        let hf = map.factor(j).hessian(&arg)?;
        for a in 0..d {
            for b in 0..d {
                // f_j(x_{j+1}, y_j) second derivatives
                h[(xi(jn, a), xi(jn, b))] += hf[(a, b)];
                h[(yi(j, a), yi(j, b))] += hf[(d + a, d + b)];
                h[(xi(jn, a), yi(j, b))] += hf[(a, d + b)];
                h[(yi(j, b), xi(jn, a))] += hf[(a, d + b)];
            }
            // coupling ⟨y_j, x_j − x_{j+1}⟩
            h[(xi(j, a), yi(j, a))] += 1.0;
            h[(yi(j, a), xi(j, a))] += 1.0;
            h[(xi(jn, a), yi(j, a))] += -1.0;
            h[(yi(j, a), xi(jn, a))] += -1.0;
        }
    }
    Ok(h)
}

/// Morse index and nullity of a symmetric matrix: eigenvalues below
/// `−tol_null` and within `tol_null` of zero.
pub fn morse_data(h: &DMatrix<f64>, tol_null: f64) -> (usize, usize) {
    let eigs = h.clone().symmetric_eigen().eigenvalues;
    let mor = eigs.iter().filter(|&&l| l < -tol_null).count();
    let nul = eigs.iter().filter(|&&l| l.abs() <= tol_null).count();
    (mor, nul)
}

/// Scale-aware default kernel threshold: `factor · spectral_radius(H)`.
pub fn default_tol_null(h: &DMatrix<f64>, factor: f64) -> f64 {
    let eigs = h.clone().symmetric_eigen().eigenvalues;
    factor * eigs.iter().fold(0.0f64, |m, &l| m.max(l.abs()))
}

/// Search configuration. Defaults follow the documented contract; the one
/// seed drives every random choice downstream (jitter, Maslov panels,
/// connector waypoints).
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SearchConfig {
    pub grid_per_dim: usize,
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub seed: u64,
    /// Absolute kernel threshold override; scale-aware default when absent.
    pub tol_null: Option<f64>,
    pub tol_null_factor: f64,
    pub jitter_starts: usize,
    pub jitter_amplitude: f64,
    pub dedup_tol: f64,
    pub family_radius: f64,
    pub samples_per_factor: usize,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            grid_per_dim: 8,
            newton_tol: 1e-12,
            newton_max_iter: 100,
            seed: 0,
            tol_null: None,
            tol_null_factor: tol::NULL_FACTOR,
            jitter_starts: 1,
            jitter_amplitude: 0.1,
            dedup_tol: tol::ORBIT_DEDUP,
            family_radius: tol::ORBIT_DEDUP,
            samples_per_factor: 64,
        }
    }
}

impl SearchConfig {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Default::default() }
    }

    pub fn maslov(&self) -> MaslovConfig {
        MaslovConfig { seed: self.seed, ..MaslovConfig::default() }
    }

    pub fn tol_null_for(&self, h: &DMatrix<f64>) -> f64 {
        self.tol_null.unwrap_or_else(|| default_tol_null(h, self.tol_null_factor))
    }
}

/// A critical point with every invariant attached.
#[derive(Debug, Clone)]
pub struct OrbitRecord {
    pub loop_config: LoopConfiguration,
    pub action: f64,
    pub average_action: f64,
    pub morse_index: usize,
    pub nullity: usize,
    pub maslov: i64,
    pub avg_maslov: f64,
    pub floquet: Vec<Complex<f64>>,
    pub orbit_key: String,
    pub gradient_residual: f64,
}

#[derive(Serialize, Deserialize)]
struct OrbitRecordJson {
    #[serde(rename = "loop")]
    loop_config: LoopConfiguration,
    action: f64,
    average_action: f64,
    morse_index: usize,
    nullity: usize,
    maslov: i64,
    avg_maslov: f64,
    floquet: Vec<[f64; 2]>,
    orbit_key: String,
    gradient_residual: f64,
}

impl Serialize for OrbitRecord {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        OrbitRecordJson {
            loop_config: self.loop_config.clone(),
            action: self.action,
            average_action: self.average_action,
            morse_index: self.morse_index,
            nullity: self.nullity,
            maslov: self.maslov,
            avg_maslov: self.avg_maslov,
            floquet: self.floquet.iter().map(|c| [c.re, c.im]).collect(),
            orbit_key: self.orbit_key.clone(),
            gradient_residual: self.gradient_residual,
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for OrbitRecord {
    fn deserialize<D: serde::Deserializer<'de>>(de: D) -> std::result::Result<Self, D::Error> {
        let raw = OrbitRecordJson::deserialize(de)?;
        Ok(OrbitRecord {
            loop_config: raw.loop_config,
            action: raw.action,
            average_action: raw.average_action,
            morse_index: raw.morse_index,
            nullity: raw.nullity,
            maslov: raw.maslov,
            avg_maslov: raw.avg_maslov,
            floquet: raw.floquet.into_iter().map(|[re, im]| Complex::new(re, im)).collect(),
            orbit_key: raw.orbit_key,
            gradient_residual: raw.gradient_residual,
        })
    }
}

impl OrbitRecord {
    pub fn period(&self) -> usize {
        self.loop_config.p
    }
}

/// Assemble the full record for a critical loop: Morse data from the
/// Hessian, Floquet multipliers from the monodromy along the stored points,
/// Maslov data from the canonical path. The nullity identity and the
/// symplectic Morse index theorem are enforced here as hard cross-module
/// consistency checks.
pub fn assemble_record(
    map: &FactorizedMap,
    lc: &LoopConfiguration,
    cfg: &SearchConfig,
) -> Result<OrbitRecord> {
    let lc = lc.canonical_representative();
    let grad = action_gradient(map, &lc)?;
    let residual = grad.amax();
    let action = action_value(map, &lc)?;

    let h = action_hessian(map, &lc)?;
    let tol_null = cfg.tol_null_for(&h);
    let (mor, nul) = morse_data(&h, tol_null);

    let mono = symmap::monodromy_of_points(map, &lc.points)?;
    let floquet = symmap::floquet_multipliers(&mono);
    let m_minus_i = mono.matrix() - DMatrix::identity(2 * map.d, 2 * map.d);
    let mono_tol = cfg.tol_null.unwrap_or_else(|| {
        let scale = m_minus_i.clone().svd_unordered(false, false).singular_values.max();
        cfg.tol_null_factor * scale.max(1.0)
    });
    let mono_nul = symmap::kernel_dimension(&m_minus_i, mono_tol);
    if mono_nul != nul {
        return Err(SympalError::InvariantMismatch(format!(
            "nullity identity violated: Hessian kernel {nul} vs dim ker(dφ^p − I) {mono_nul} (orbit {})",
            lc.orbit_key()
        )));
    }

    let path = symmap::canonical_path_of_points(map, &lc.points, cfg.samples_per_factor)?;
    if (path.endpoint() - mono.matrix()).amax() > tol::PATH_ENDPOINT {
        return Err(SympalError::InvariantMismatch(
            "canonical path endpoint does not match monodromy".into(),
        ));
    }
    let mcfg = cfg.maslov();
    // the monodromy-kernel classification (already reconciled with the
    // Hessian nullity above) decides the degenerate Maslov branch
    let detail = maslov::maslov_index_detailed_ext(&path, &mcfg, mono_nul > 0)?;

    let dkp = map.d * map.k() * lc.p;
    if mor as i64 - dkp as i64 != detail.mas {
        return Err(SympalError::InvariantMismatch(format!(
            "index theorem violated: mor {mor} − dkp {dkp} ≠ mas {} (orbit {})",
            detail.mas,
            lc.orbit_key()
        )));
    }

    Ok(OrbitRecord {
        orbit_key: lc.orbit_key(),
        action,
        average_action: action / lc.p as f64,
        morse_index: mor,
        nullity: nul,
        maslov: detail.mas,
        avg_maslov: detail.avmas,
        floquet,
        gradient_residual: residual,
        loop_config: lc,
    })
}

/// Outcome of a multi-start search.
#[derive(Debug, Clone)]
pub struct FinderResult {
    pub records: Vec<OrbitRecord>,
    /// Set when the critical set looks like a positive-dimensional family
    /// (identity-like maps): inequivalent converged loops closer than the
    /// family radius, or a large fraction of starts already critical.
    pub degenerate_family: bool,
    pub already_critical_fraction: f64,
    pub n_starts: usize,
    pub n_converged: usize,
    pub warnings: Vec<String>,
}

struct Converged {
    lc: LoopConfiguration,
    grad_norm: f64,
    already_critical: bool,
}

fn newton_from_start(
    map: &FactorizedMap,
    d: usize,
    k: usize,
    p: usize,
    start: DVector<f64>,
    cfg: &SearchConfig,
) -> Option<Converged> {
    let mut lc = LoopConfiguration::from_flat(d, k, p, &start).ok()?;
    let mut g = action_gradient(map, &lc).ok()?;
    let already_critical = g.amax() < cfg.newton_tol;

    let mut iterations_left = cfg.newton_max_iter;
    while g.amax() >= cfg.newton_tol {
        if iterations_left == 0 {
            return None;
        }
        iterations_left -= 1;

        let h = action_hessian(map, &lc).ok()?;
        let step = solve_regularized(&h, &(-&g))?;
        // damped line search on ‖∇𝒜‖²
        let g2 = g.norm_squared();
        let mut t = 1.0f64;
        let mut accepted = None;
        while t > 1e-6 {
            let trial = lc.flat() + t * &step;
            if let Ok(tl) = LoopConfiguration::from_flat(d, k, p, &trial) {
                if let Ok(tg) = action_gradient(map, &tl) {
                    if tg.norm_squared() <= (1.0 - 1e-4 * t) * g2 {
                        accepted = Some((tl, tg));
                        break;
                    }
                }
            }
            t *= 0.5;
        }
        let (tl, tg) = accepted?;
        lc = tl;
        g = tg;
        // compactness guard: chains must stay bounded for small factors
        for j in 0..lc.points.len() {
            let jn = (j + 1) % lc.points.len();
            if (&lc.points[jn] - &lc.points[j]).amax() > 1.5 {
                return None;
            }
        }
    }

    // Polish: totally degenerate (quartic-flat) directions converge only
    // linearly, which leaves convergence scatter far above rounding. Keep
    // taking full Newton steps while the gradient still shrinks.
    let mut grad_norm = g.amax();
    for _ in 0..50 {
        if grad_norm == 0.0 {
            break;
        }
        let Ok(h) = action_hessian(map, &lc) else { break };
        let Some(step) = solve_regularized(&h, &(-&g)) else { break };
        let trial = lc.flat() + &step;
        let Ok(tl) = LoopConfiguration::from_flat(d, k, p, &trial) else { break };
        let Ok(tg) = action_gradient(map, &tl) else { break };
        let tn = tg.amax();
        if !tn.is_finite() || tn > 0.99 * grad_norm {
            break;
        }
        lc = tl;
        g = tg;
        grad_norm = tn;
    }

    (grad_norm < tol::CRITICAL_GRADIENT).then_some(Converged { lc, grad_norm, already_critical })
}

fn solve_regularized(h: &DMatrix<f64>, rhs: &DVector<f64>) -> Option<DVector<f64>> {
    let n = h.nrows();
    if let Some(step) = h.clone().lu().solve(rhs) {
        if step.amax().is_finite() && step.amax() < 1e3 {
            return Some(step);
        }
    }
    let scale = h.amax().max(1.0);
    let mut mu = 1e-10 * scale;
    for _ in 0..12 {
        let reg = h + DMatrix::identity(n, n) * mu;
        if let Some(step) = reg.lu().solve(rhs) {
            if step.amax().is_finite() && step.amax() < 1e3 {
                return Some(step);
            }
        }
        mu *= 10.0;
    }
    None
}

/// Multi-start damped Newton search for critical points of the period-`p`
/// action. Deterministic for a fixed seed: starts sit on a uniform torus
/// grid (plus seeded jitter in the difference variables) and results are
/// merged in start order.
pub fn find_critical_points(map: &FactorizedMap, p: usize, cfg: &SearchConfig) -> Result<FinderResult> {
    let d = map.d;
    let k = map.k();
    let kp = k * p;
    let g = cfg.grid_per_dim.max(1);
    let base_count = g.pow(2 * d as u32);

    let mut starts: Vec<DVector<f64>> = Vec::new();
    for idx in 0..base_count {
        let mut rem = idx;
        let mut z0 = DVector::zeros(2 * d);
        for i in 0..2 * d {
            z0[i] = (rem % g) as f64 / g as f64;
            rem /= g;
        }
        let constant = LoopConfiguration::constant(d, k, p, &z0).unwrap().flat();
        starts.push(constant.clone());
        let mut rng = rng_stream(cfg.seed, idx as u64);
        for _ in 0..cfg.jitter_starts {
            let mut v = constant.clone();
            // jitter the difference variables, leaving the base point
            for j in 1..kp {
                for i in 0..2 * d {
                    v[j * 2 * d + i] += rng.random_range(-cfg.jitter_amplitude..cfg.jitter_amplitude);
                }
            }
            starts.push(v);
        }
    }

    let n_starts = starts.len();
    let converged: Vec<Converged> = starts
        .into_par_iter()
        .filter_map(|s| newton_from_start(map, d, k, p, s, cfg))
        .collect();
    let n_converged = converged.len();
    let already = converged.iter().filter(|c| c.already_critical).count();
    let already_fraction = if n_starts == 0 { 0.0 } else { already as f64 / n_starts as f64 };

    // geometric clustering into orbit classes
    struct Class {
        rep: LoopConfiguration,
        rep_grad: f64,
        members: usize,
    }
    let mut classes: Vec<Class> = Vec::new();
    for c in converged {
        match classes.iter_mut().find(|cl| cl.rep.equivalent_distance(&c.lc) < cfg.dedup_tol) {
            Some(cl) => {
                cl.members += 1;
                if c.grad_norm < cl.rep_grad {
                    cl.rep = c.lc;
                    cl.rep_grad = c.grad_norm;
                }
            }
            None => classes.push(Class { rep: c.lc, rep_grad: c.grad_norm, members: 1 }),
        }
    }

    let mut warnings = Vec::new();

    // family detection: inequivalent loops closer than the family radius
    let mut degenerate_family = false;
    for i in 0..classes.len() {
        for j in i + 1..classes.len() {
            let dist = classes[i].rep.equivalent_distance(&classes[j].rep);
            if dist < cfg.family_radius {
                degenerate_family = true;
            }
        }
    }
    // identity-like maps: the grid itself is critical everywhere
    if already_fraction > 0.25 && classes.len() > 4 {
        degenerate_family = true;
    }
    if degenerate_family {
        warnings.push(format!(
            "non-isolated criticality: {} inequivalent critical classes, {:.0}% of starts already critical",
            classes.len(),
            100.0 * already_fraction
        ));
        return Ok(FinderResult {
            records: Vec::new(),
            degenerate_family,
            already_critical_fraction: already_fraction,
            n_starts,
            n_converged,
            warnings,
        });
    }

    // merge residual near-duplicates left by flat (totally degenerate)
    // directions, where gradient-based convergence scatters at the noise
    // floor; merging requires matching cheap invariants
    let mut merged: Vec<Class> = Vec::new();
    'outer: for cl in classes {
        for ex in &mut merged {
            if ex.rep.equivalent_distance(&cl.rep) < 1e-4 {
                let a1 = action_value(map, &ex.rep)?;
                let a2 = action_value(map, &cl.rep)?;
                if (a1 - a2).abs() < 1e-8 {
                    ex.members += cl.members;
                    if cl.rep_grad < ex.rep_grad {
                        ex.rep = cl.rep;
                        ex.rep_grad = cl.rep_grad;
                    }
                    continue 'outer;
                }
            }
        }
        merged.push(cl);
    }

    let mut records = Vec::new();
    for cl in &merged {
        records.push(assemble_record(map, &cl.rep, cfg)?);
    }
    let records = dedup_orbits(records, cfg.dedup_tol)?;

    Ok(FinderResult {
        records,
        degenerate_family,
        already_critical_fraction: already_fraction,
        n_starts,
        n_converged,
        warnings,
    })
}

/// One representative per equivalence class under the cyclic `k`-block
/// shift and the deck action; merged members must carry identical
/// invariants or the solver is broken.
pub fn dedup_orbits(records: Vec<OrbitRecord>, tol_dist: f64) -> Result<Vec<OrbitRecord>> {
    let mut groups: Vec<Vec<OrbitRecord>> = Vec::new();
    for r in records {
        match groups
            .iter_mut()
            .find(|g| g[0].loop_config.equivalent_distance(&r.loop_config) < tol_dist)
        {
            Some(g) => g.push(r),
            None => groups.push(vec![r]),
        }
    }
    let mut out = Vec::with_capacity(groups.len());
    for g in groups {
        for other in &g[1..] {
            let first = &g[0];
            if (first.action - other.action).abs() > tol::DEDUP_INVARIANT
                || first.morse_index != other.morse_index
                || first.nullity != other.nullity
                || first.maslov != other.maslov
            {
                return Err(SympalError::InvariantMismatch(format!(
                    "merged orbit members disagree: ({}, mor {}, nul {}, mas {}) vs ({}, mor {}, nul {}, mas {})",
                    first.action, first.morse_index, first.nullity, first.maslov,
                    other.action, other.morse_index, other.nullity, other.maslov
                )));
            }
        }
        // representative: lexicographically smallest canonical point list
        let best = g
            .into_iter()
            .min_by(|a, b| {
                let fa = a.loop_config.flat();
                let fb = b.loop_config.flat();
                fa.as_slice().partial_cmp(fb.as_slice()).unwrap()
            })
            .unwrap();
        out.push(best);
    }
    out.sort_by(|a, b| {
        (a.period(), a.action, &a.orbit_key)
            .partial_cmp(&(b.period(), b.action, &b.orbit_key))
            .unwrap()
    });
    Ok(out)
}

/// Smallest divisor period `m` of `p` such that the loop is invariant
/// under the shift by `km` points, followed by a Newton re-search at that
/// period (which must converge immediately on the sub-loop).
pub fn basic_period(map: &FactorizedMap, lc: &LoopConfiguration, cfg: &SearchConfig) -> Result<usize> {
    let p = lc.p;
    'candidates: for m in 1..=p {
        if p % m != 0 {
            continue;
        }
        let km = lc.k * m;
        for j in 0..lc.points.len() {
            let jn = (j + km) % lc.points.len();
            if (&lc.points[jn] - &lc.points[j]).amax() > 1e-8 {
                continue 'candidates;
            }
        }
        let sub = LoopConfiguration::new(lc.d, lc.k, m, lc.points[..km].to_vec())?;
        let g = action_gradient(map, &sub)?;
        if g.amax() < 1e-6 {
            if let Some(c) = newton_from_start(map, lc.d, lc.k, m, sub.flat(), cfg) {
                if c.lc.equivalent_distance(&sub) < 1e-6 {
                    return Ok(m);
                }
            }
        }
    }
    Ok(p)
}

/// Canonical path along a record's stored loop (plumbing shared with the
/// sdm and spectrum modules).
pub fn record_path(map: &FactorizedMap, rec: &OrbitRecord, cfg: &SearchConfig) -> Result<maslov::SymplecticPath> {
    symmap::canonical_path_of_points(map, &rec.loop_config.points, cfg.samples_per_factor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{sys_a, sys_b, sys_c};
    use nalgebra::dvector;

    fn fd_action_gradient(map: &FactorizedMap, lc: &LoopConfiguration, h: f64) -> DVector<f64> {
        let flat = lc.flat();
        let n = flat.len();
        let mut g = DVector::zeros(n);
        for i in 0..n {
            let mut fp = flat.clone();
            fp[i] += h;
            let mut fm = flat.clone();
            fm[i] -= h;
            let lp = LoopConfiguration { points: split(&fp, lc), ..lc.clone() };
            let lm = LoopConfiguration { points: split(&fm, lc), ..lc.clone() };
            g[i] = (action_value(map, &lp).unwrap() - action_value(map, &lm).unwrap()) / (2.0 * h);
        }
        g
    }

    fn split(flat: &DVector<f64>, lc: &LoopConfiguration) -> Vec<DVector<f64>> {
        (0..lc.points.len()).map(|j| flat.rows(j * 2 * lc.d, 2 * lc.d).into_owned()).collect()
    }

    #[test]
    fn action_value_examples() {
        // identity map, constant loop
        let lc = LoopConfiguration::constant(1, 1, 4, &dvector![0.3, 0.8]).unwrap();
        assert_eq!(action_value(&sys_a(), &lc).unwrap(), 0.0);

        // degenerate max: z₀^{×n} has action n·f(z₀) = 0
        let lc = LoopConfiguration::constant(1, 1, 6, &dvector![0.0, 0.0]).unwrap();
        assert!(action_value(&sys_b(), &lc).unwrap().abs() < 1e-15);

        // two-cosine system at the maximum, p = 3: action 3·f(0,0) = 0.06
        let lc = LoopConfiguration::constant(1, 1, 3, &dvector![0.0, 0.0]).unwrap();
        let a = action_value(&sys_c(), &lc).unwrap();
        assert!((a - 0.06).abs() < 1e-15);

        // deck invariance: adding an integer vector to every point
        let shifted = LoopConfiguration::new(
            1,
            1,
            3,
            vec![dvector![1.0, 1.0], dvector![1.0, 1.0], dvector![1.0, 1.0]],
        )
        .unwrap();
        assert!((action_value(&sys_c(), &shifted).unwrap() - a).abs() < 1e-12);
    }

    #[test]
    fn gradient_vanishes_on_orbits_and_matches_fd() {
        let map = sys_c();
        for z in [dvector![0.0, 0.0], dvector![0.5, 0.0], dvector![0.5, 0.5]] {
            let lc = LoopConfiguration::constant(1, 1, 2, &z).unwrap();
            assert!(action_gradient(&map, &lc).unwrap().amax() < 1e-14, "{z:?}");
        }
        // random non-orbit loop: nonzero gradient matching finite differences
        let lc = LoopConfiguration::new(1, 1, 3, vec![
            dvector![0.21, 0.33],
            dvector![0.27, 0.31],
            dvector![0.19, 0.40],
        ])
        .unwrap();
        let g = action_gradient(&map, &lc).unwrap();
        assert!(g.amax() > 1e-3);
        let fd = fd_action_gradient(&map, &lc, 1e-5);
        assert!((&g - fd).amax() < 1e-6);
    }

    #[test]
    fn hessian_of_identity_map_is_pure_coupling() {
        // f ≡ 0, d = k = 1, period n: kernel dim 2, Morse index n − 1
        let map = sys_a();
        for n in [1usize, 2, 3, 5, 8] {
            let lc = LoopConfiguration::constant(1, 1, n, &dvector![0.4, 0.7]).unwrap();
            let h = action_hessian(&map, &lc).unwrap();
            assert!((h.transpose() - &h).amax() < 1e-15);
            let (mor, nul) = morse_data(&h, 1e-9);
            assert_eq!((mor, nul), (n - 1, 2), "period {n}");
        }
    }

    #[test]
    fn hessian_of_degenerate_max_iterates() {
        let map = sys_b();
        for n in [1usize, 4, 7] {
            let lc = LoopConfiguration::constant(1, 1, n, &dvector![0.0, 0.0]).unwrap();
            let h = action_hessian(&map, &lc).unwrap();
            let tol_null = default_tol_null(&h, tol::NULL_FACTOR);
            let (mor, nul) = morse_data(&h, tol_null);
            assert_eq!((mor, nul), (n - 1, 2), "period {n}");
        }
    }

    #[test]
    fn hessian_of_two_cosine_maximum() {
        let map = sys_c();
        let lc = LoopConfiguration::constant(1, 1, 1, &dvector![0.0, 0.0]).unwrap();
        let h = action_hessian(&map, &lc).unwrap();
        let (mor, nul) = morse_data(&h, default_tol_null(&h, tol::NULL_FACTOR));
        assert_eq!((mor, nul), (2, 0));
    }

    #[test]
    fn morse_data_direct_counts() {
        let z = DMatrix::zeros(5, 5);
        assert_eq!(morse_data(&z, 0.0), (0, 5));
        let m = DMatrix::from_diagonal(&dvector![-1.0, 0.0, 2.0]);
        assert_eq!(morse_data(&m, 1e-8), (1, 1));
        // degenerate-max iterate, n = 4, d = 1: (3, 2)
        let map = sys_b();
        let lc = LoopConfiguration::constant(1, 1, 4, &dvector![0.0, 0.0]).unwrap();
        let h = action_hessian(&map, &lc).unwrap();
        assert_eq!(morse_data(&h, default_tol_null(&h, tol::NULL_FACTOR)), (3, 2));
    }

    #[test]
    fn canonicalization_and_equivalence() {
        let a = LoopConfiguration::new(1, 1, 2, vec![dvector![1.25, -0.75], dvector![1.30, -0.70]])
            .unwrap();
        assert!(a.points[0][0] >= 0.0 && a.points[0][0] < 1.0);
        let mut b = a.clone();
        b.canonicalize();
        assert_eq!(a, b, "canonicalization is idempotent");

        let shifted = a.shift_blocks(1);
        assert!(a.equivalent_distance(&shifted) < 1e-12);
        assert!(a.equivalent_distance(&a) < 1e-15);
    }

    #[test]
    fn finder_on_two_cosine_system() {
        // Brute-force oracle: scan a 200² grid for cells with small ∇𝒜 and
        // count sign patterns; there are exactly 4 critical points.
        let map = sys_c();
        let f = &map.factors[0];
        let mut oracle_hits: Vec<(f64, f64)> = Vec::new();
        let n = 200;
        for i in 0..n {
            for j in 0..n {
                let z = [i as f64 / n as f64, j as f64 / n as f64];
                let g = f.gradient(&z).unwrap();
                if g.amax() < 2.0 * std::f64::consts::TAU * 0.01 * (std::f64::consts::PI / n as f64)
                {
                    let close = oracle_hits.iter().any(|&(a, b)| {
                        let da = (z[0] - a - (z[0] - a).round()).abs();
                        let db = (z[1] - b - (z[1] - b).round()).abs();
                        da.max(db) < 0.1
                    });
                    if !close {
                        oracle_hits.push((z[0], z[1]));
                    }
                }
            }
        }
        assert_eq!(oracle_hits.len(), 4, "oracle should isolate 4 cells");

        let cfg = SearchConfig::with_seed(1);
        let res = find_critical_points(&map, 1, &cfg).unwrap();
        assert!(!res.degenerate_family);
        assert_eq!(res.records.len(), 4);
        let mut indices: Vec<usize> = res.records.iter().map(|r| r.morse_index).collect();
        indices.sort_unstable();
        assert_eq!(indices, vec![0, 1, 1, 2]);
        for r in &res.records {
            assert!(r.gradient_residual < 1e-10);
        }
    }

    #[test]
    fn finder_flags_identity_map() {
        let res = find_critical_points(&sys_a(), 1, &SearchConfig::with_seed(3)).unwrap();
        assert!(res.degenerate_family);
        assert!(res.records.is_empty());
        assert!(res.already_critical_fraction > 0.25);
    }

    #[test]
    fn finder_locates_degenerate_max() {
        let map = sys_b();
        let res = find_critical_points(&map, 1, &SearchConfig::with_seed(5)).unwrap();
        assert!(!res.degenerate_family);
        let at_origin = res
            .records
            .iter()
            .find(|r| r.loop_config.points[0].amax() < 1e-5 || (r.loop_config.points[0][0] - 1.0).abs() < 1e-5)
            .expect("origin critical point found");
        assert_eq!((at_origin.morse_index, at_origin.nullity), (0, 2));
        assert_eq!(at_origin.maslov, -1);
    }

    #[test]
    fn dedup_merges_duplicates_and_shifts() {
        let map = sys_c();
        let cfg = SearchConfig::with_seed(2);
        let lc = LoopConfiguration::constant(1, 1, 2, &dvector![0.0, 0.0]).unwrap();
        let r1 = assemble_record(&map, &lc, &cfg).unwrap();
        let r2 = assemble_record(&map, &lc.shift_blocks(1), &cfg).unwrap();
        let out = dedup_orbits(vec![r1.clone(), r2, r1.clone()], 1e-6).unwrap();
        assert_eq!(out.len(), 1);
    }

    #[test]
    fn iterate_of_critical_point_is_critical() {
        let map = sys_c();
        let lc = LoopConfiguration::constant(1, 1, 1, &dvector![0.5, 0.0]).unwrap();
        for n in [2usize, 3, 5] {
            let it = lc.iterate(n);
            assert!(action_gradient(&map, &it).unwrap().amax() < 1e-10, "n = {n}");
        }
    }

    #[test]
    fn different_seeds_find_identical_orbits() {
        let map = sys_c();
        let a = find_critical_points(&map, 2, &SearchConfig::with_seed(10)).unwrap();
        let b = find_critical_points(&map, 2, &SearchConfig::with_seed(99)).unwrap();
        let keys_a: Vec<&str> = a.records.iter().map(|r| r.orbit_key.as_str()).collect();
        let keys_b: Vec<&str> = b.records.iter().map(|r| r.orbit_key.as_str()).collect();
        assert_eq!(keys_a, keys_b);
        for (ra, rb) in a.records.iter().zip(&b.records) {
            assert_eq!(ra.morse_index, rb.morse_index);
            assert_eq!(ra.maslov, rb.maslov);
            assert!((ra.action - rb.action).abs() < 1e-9);
        }
    }
}
