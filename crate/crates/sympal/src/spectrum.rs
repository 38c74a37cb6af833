//! Multi-period orbit census: action and average-action spectra, prime
//! period experiments, and growth-rate counting.
//!
//! The average-action spectrum is the union over periods `p` of the
//! critical values of `𝒜⁽ᵖ⁾/p`. The two experiment drivers probe the
//! asymptotic existence statements behind them: single-generating-function
//! maps should eventually carry orbits of every large prime basic period,
//! and nondegenerate maps should carry two distinct ones. The finder is a
//! heuristic multi-start search, so "not found at this resolution" is
//! always reported distinctly from nonexistence.

use serde::Serialize;

use crate::action::{
    action_hessian, basic_period, find_critical_points, morse_data, SearchConfig,
};
use crate::symmap::FactorizedMap;
use crate::tol;
use crate::{Result, SympalError};

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumEntry {
    pub period: usize,
    pub orbit_key: String,
    pub action: f64,
    pub average_action: f64,
    pub morse_index: usize,
    pub nullity: usize,
    pub maslov: i64,
    pub basic_period: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct SpectrumTable {
    pub entries: Vec<SpectrumEntry>,
    /// Optional `(center, radius)` filter applied to the average action.
    pub window: Option<(f64, f64)>,
    /// Periods at which the finder flagged a non-isolated critical family.
    pub degenerate_family_periods: Vec<usize>,
    pub warnings: Vec<String>,
}

impl SpectrumTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("period,orbit_key,action,avg_action,mor,nul,mas,basic_period\n");
        for e in &self.entries {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                e.period,
                e.orbit_key,
                e.action,
                e.average_action,
                e.morse_index,
                e.nullity,
                e.maslov,
                e.basic_period
            ));
        }
        s
    }
}

/// Scan the given periods, collecting every deduplicated orbit with its
/// invariants and basic period. Deterministic for a fixed seed.
pub fn scan_periods(
    map: &FactorizedMap,
    p_list: &[usize],
    cfg: &SearchConfig,
    window: Option<(f64, f64)>,
) -> Result<SpectrumTable> {
    let mut periods: Vec<usize> = p_list.to_vec();
    periods.sort_unstable();
    periods.dedup();

    let mut entries = Vec::new();
    let mut degenerate = Vec::new();
    let mut warnings = Vec::new();
    for &p in &periods {
        let res = find_critical_points(map, p, cfg)?;
        if res.degenerate_family {
            degenerate.push(p);
            warnings.extend(res.warnings);
            continue;
        }
        for r in &res.records {
            if let Some((c, rad)) = window {
                if (r.average_action - c).abs() > rad {
                    continue;
                }
            }
            entries.push(SpectrumEntry {
                period: p,
                orbit_key: r.orbit_key.clone(),
                action: r.action,
                average_action: r.average_action,
                morse_index: r.morse_index,
                nullity: r.nullity,
                maslov: r.maslov,
                basic_period: basic_period(map, &r.loop_config, cfg)?,
            });
        }
    }
    Ok(SpectrumTable { entries, window, degenerate_family_periods: degenerate, warnings })
}

#[derive(Debug, Clone, Serialize)]
pub struct SingleGfPrime {
    pub p: usize,
    /// Orbits whose index window `[mor, mor+nul]` contains `dp + d`.
    pub index_window_orbits: usize,
    /// Of those, how many have basic period exactly `p`.
    pub with_basic_period_p: usize,
    pub found: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct GrowthPoint {
    pub p: usize,
    /// Distinct orbits of basic period ≤ p seen so far.
    pub n_p: usize,
    /// `N(p)·log(p)/p`.
    pub stat: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SingleGfReport {
    pub primes: Vec<SingleGfPrime>,
    pub growth: Vec<GrowthPoint>,
    pub note: String,
}

/// Probe the single-generating-function existence phenomenon: for each
/// prime `p`, does some orbit of basic period `p` sit in the Morse-index
/// window around `dp + d`? Existence is only guaranteed asymptotically, so
/// small-prime outcomes are reported, never asserted.
pub fn conley_single_gf_experiment(
    map: &FactorizedMap,
    prime_list: &[usize],
    cfg: &SearchConfig,
) -> Result<SingleGfReport> {
    if map.k() != 1 {
        return Err(SympalError::PreconditionFailed(format!(
            "single-generating-function experiment needs k = 1, got k = {}",
            map.k()
        )));
    }
    let d = map.d;
    let mut primes = Vec::new();
    let mut growth = Vec::new();
    let mut seen_orbits: Vec<String> = Vec::new();
    for &p in prime_list {
        let res = find_critical_points(map, p, cfg)?;
        let mut window_orbits = 0;
        let mut with_bp = 0;
        for r in &res.records {
            let target = d * p + d;
            if r.morse_index <= target && target <= r.morse_index + r.nullity {
                window_orbits += 1;
                let bp = basic_period(map, &r.loop_config, cfg)?;
                if bp == p {
                    with_bp += 1;
                }
            }
            let bp = basic_period(map, &r.loop_config, cfg)?;
            if bp <= p {
                let sub = crate::action::LoopConfiguration::new(
                    r.loop_config.d,
                    r.loop_config.k,
                    bp,
                    r.loop_config.points[..r.loop_config.k * bp].to_vec(),
                )?;
                let key = sub.orbit_key();
                if !seen_orbits.contains(&key) {
                    seen_orbits.push(key);
                }
            }
        }
        primes.push(SingleGfPrime {
            p,
            index_window_orbits: window_orbits,
            with_basic_period_p: with_bp,
            found: with_bp > 0,
        });
        let n_p = seen_orbits.len();
        growth.push(GrowthPoint { p, n_p, stat: n_p as f64 * (p as f64).ln() / p as f64 });
    }
    Ok(SingleGfReport {
        primes,
        growth,
        note: "existence is asymptotic in p; 'found: false' records search outcome at this \
               resolution, not nonexistence"
            .into(),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct DichotomyEntry {
    pub orbit_key: String,
    pub p: usize,
    pub morse_index_iterate: usize,
    pub forbidden: (usize, usize),
    pub in_forbidden_set: bool,
    /// The assertion only applies past both thresholds: `p > p0` (Floquet
    /// denominators) and `p > 2d/|avmas|` for orbits with nonzero average
    /// Maslov index (below that the iterate can legitimately land on the
    /// window edge).
    pub asserted: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConleyZehnderPrime {
    pub p: usize,
    /// Orbits of basic period `p` whose window contains `dkp − d`.
    pub lower_candidates: usize,
    /// Orbits of basic period `p` whose window contains `dkp + d`.
    pub upper_candidates: usize,
    /// Two distinct orbits realizing both windows.
    pub pair_found: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConleyZehnderReport {
    pub p0: usize,
    /// Per-orbit dichotomy thresholds `max(p0, ⌊2d/|avmas|⌋ + 1)`.
    pub orbit_thresholds: Vec<(String, usize)>,
    pub primes: Vec<ConleyZehnderPrime>,
    pub dichotomy: Vec<DichotomyEntry>,
    pub dichotomy_violations: usize,
    pub note: String,
}

/// Probe the nondegenerate two-orbit phenomenon and the fixed-point index
/// dichotomy. Requires every period-1 orbit to be nondegenerate.
pub fn conley_zehnder_experiment(
    map: &FactorizedMap,
    prime_list: &[usize],
    cfg: &SearchConfig,
) -> Result<ConleyZehnderReport> {
    let d = map.d;
    let k = map.k();
    let base = find_critical_points(map, 1, cfg)?;
    if base.degenerate_family {
        return Err(SympalError::PreconditionFailed(
            "period-1 critical set is a degenerate family".into(),
        ));
    }
    for r in &base.records {
        if r.nullity != 0 {
            return Err(SympalError::PreconditionFailed(format!(
                "degenerate fixed point found (nul = {} at {})",
                r.nullity, r.orbit_key
            )));
        }
    }

    // p0: largest order of a root-of-unity Floquet multiplier
    let mut p0 = 1usize;
    for r in &base.records {
        for l in &r.floquet {
            for q in 1..=64usize {
                if (l.powu(q as u32) - nalgebra::Complex::new(1.0, 0.0)).norm() < tol::ROOT_OF_UNITY
                {
                    p0 = p0.max(q);
                    break;
                }
            }
        }
    }

    let mut orbit_thresholds = Vec::new();
    for r in &base.records {
        let n_z = if r.avg_maslov.abs() < tol::AVMAS_ZERO {
            0
        } else {
            (2.0 * d as f64 / r.avg_maslov.abs()).floor() as usize + 1
        };
        orbit_thresholds.push((r.orbit_key.clone(), p0.max(n_z)));
    }

    let mut primes = Vec::new();
    let mut dichotomy = Vec::new();
    let mut violations = 0usize;
    for &p in prime_list {
        let res = find_critical_points(map, p, cfg)?;
        let dkp = d * k * p;
        let mut lower: Vec<&crate::action::OrbitRecord> = Vec::new();
        let mut upper: Vec<&crate::action::OrbitRecord> = Vec::new();
        for r in &res.records {
            let bp = basic_period(map, &r.loop_config, cfg)?;
            if bp != p {
                continue;
            }
            let lo = r.morse_index;
            let hi = r.morse_index + r.nullity;
            if lo <= dkp - d && dkp - d <= hi {
                lower.push(r);
            }
            if lo <= dkp + d && dkp + d <= hi {
                upper.push(r);
            }
        }
        // two distinct orbits: key inequality plus a secondary witness
        let mut pair_found = false;
        'outer: for a in &lower {
            for b in &upper {
                if a.orbit_key != b.orbit_key
                    && ((a.action - b.action).abs() > 1e-6
                        || a.loop_config.equivalent_distance(&b.loop_config) > 1e-6)
                {
                    pair_found = true;
                    break 'outer;
                }
            }
        }
        primes.push(ConleyZehnderPrime {
            p,
            lower_candidates: lower.len(),
            upper_candidates: upper.len(),
            pair_found,
        });

        // fixed-point index dichotomy at this prime
        for (r, (key, threshold)) in base.records.iter().zip(&orbit_thresholds) {
            let it = r.loop_config.iterate(p);
            let h = action_hessian(map, &it)?;
            let (mor_p, _) = morse_data(&h, cfg.tol_null_for(&h));
            let forbidden = (dkp - d, dkp + d);
            let in_forbidden = mor_p == forbidden.0 || mor_p == forbidden.1;
            let asserted = p > *threshold;
            if asserted && in_forbidden {
                violations += 1;
            }
            dichotomy.push(DichotomyEntry {
                orbit_key: key.clone(),
                p,
                morse_index_iterate: mor_p,
                forbidden,
                in_forbidden_set: in_forbidden,
                asserted,
            });
        }
    }

    Ok(ConleyZehnderReport {
        p0,
        orbit_thresholds,
        primes,
        dichotomy,
        dichotomy_violations: violations,
        note: "pair existence is asymptotic in p; candidates restricted to basic period p"
            .into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{sys_a, sys_b, sys_c};

    fn cfg() -> SearchConfig {
        SearchConfig::with_seed(13)
    }

    #[test]
    fn scan_two_cosine_period_one() {
        let table = scan_periods(&sys_c(), &[1], &cfg(), None).unwrap();
        assert_eq!(table.entries.len(), 4);
        let mut avgs: Vec<f64> = table.entries.iter().map(|e| e.average_action).collect();
        avgs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expected = [-0.02, 0.0, 0.0, 0.02];
        for (a, e) in avgs.iter().zip(expected) {
            assert!((a - e).abs() < 1e-12, "{a} vs {e}");
        }
        for e in &table.entries {
            assert_eq!(e.basic_period, 1);
            assert!((e.average_action - e.action / e.period as f64).abs() < 1e-15);
        }
    }

    #[test]
    fn scan_identity_reports_family() {
        let table = scan_periods(&sys_a(), &[1, 2], &cfg(), None).unwrap();
        assert!(table.entries.is_empty());
        assert_eq!(table.degenerate_family_periods, vec![1, 2]);
    }

    #[test]
    fn scan_degenerate_max_has_zero_action_entry() {
        let table = scan_periods(&sys_b(), &[1], &cfg(), None).unwrap();
        let zero = table
            .entries
            .iter()
            .find(|e| e.action.abs() < 1e-12)
            .expect("the degenerate maximum sits at action 0");
        assert_eq!((zero.morse_index, zero.nullity), (0, 2));
    }

    #[test]
    fn window_filter() {
        let table = scan_periods(&sys_c(), &[1], &cfg(), Some((0.02, 1e-6))).unwrap();
        assert_eq!(table.entries.len(), 1);
        assert!((table.entries[0].average_action - 0.02).abs() < 1e-12);
    }

    #[test]
    fn iteration_consistency_of_average_action() {
        // an orbit of average action a at period p appears with the same
        // average action at period np
        let c = cfg();
        let t1 = scan_periods(&sys_c(), &[1], &c, None).unwrap();
        let t2 = scan_periods(&sys_c(), &[2], &c, None).unwrap();
        for e in &t1.entries {
            assert!(
                t2.entries
                    .iter()
                    .any(|f| (f.average_action - e.average_action).abs() < 1e-12
                        && f.basic_period == 1),
                "iterate of {} missing at period 2",
                e.orbit_key
            );
        }
    }

    #[test]
    fn single_gf_smoke_and_k_precondition() {
        let rep = conley_single_gf_experiment(&sys_b(), &[2, 3], &cfg()).unwrap();
        assert_eq!(rep.primes.len(), 2);
        // the degenerate maximum's iterate carries the index window, but it
        // is a fixed point, so no basic-period-p orbit is claimed
        for p in &rep.primes {
            assert!(p.index_window_orbits > 0);
            assert!(!p.found);
        }
        assert!(rep.growth[0].n_p >= 4);

        let rep = conley_single_gf_experiment(&sys_b(), &[], &cfg()).unwrap();
        assert!(rep.primes.is_empty());

        let sys_d = crate::systems::sys_d();
        assert!(matches!(
            conley_single_gf_experiment(&sys_d, &[2], &cfg()),
            Err(SympalError::PreconditionFailed(_))
        ));
    }

    #[test]
    fn conley_zehnder_smoke_and_degenerate_precondition() {
        let rep = conley_zehnder_experiment(&sys_c(), &[2, 3, 5], &cfg()).unwrap();
        assert_eq!(rep.p0, 1, "hyperbolic/irrational-elliptic multipliers only");
        assert_eq!(rep.dichotomy_violations, 0);
        // no genuine prime-period orbits exist at these primes for the
        // small two-cosine map: none-found must be reported
        for p in &rep.primes {
            assert!(!p.pair_found);
        }
        // elliptic fixed points carry nonzero avmas, so their dichotomy
        // threshold is finite and larger than these primes
        assert!(rep.orbit_thresholds.iter().any(|(_, t)| *t > 5));

        assert!(matches!(
            conley_zehnder_experiment(&sys_b(), &[2], &cfg()),
            Err(SympalError::PreconditionFailed(_))
        ));
    }
}
