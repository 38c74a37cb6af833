//! Command-line front end: config ingestion, deterministic experiment
//! orchestration, structured output emission, and the bundled verification
//! suite.
//!
//! Exit codes: 0 success, 1 invariant/precondition failure, 2 config
//! error, 3 numerical failure. Outputs are written atomically (temp file
//! plus rename) and are byte-identical for a fixed seed; no timestamps
//! appear anywhere.

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::DVector;
use serde::Serialize;
use std::path::{Path, PathBuf};

use crate::action::{
    action_gradient, action_value, dedup_orbits, find_critical_points, LoopConfiguration,
    OrbitRecord, SearchConfig,
};
use crate::maslov::{average_maslov, check_iteration_bounds, IterationBoundsReport};
use crate::sampling::rng_stream;
use crate::sdm::{
    accumulation_scan, sdm_criteria, vanishing_homotopy_verify, ExtremumMode, VanishParams,
};
use crate::spectrum::{
    conley_single_gf_experiment, conley_zehnder_experiment, scan_periods, SpectrumEntry,
    SpectrumTable,
};
use crate::symmap::{
    apply_factor, canonical_path_of_points, differential_factor, monodromy_of_points,
    symplectic_residual, FactorizedMap, MapConfig,
};
use crate::tol;
use crate::{Result, SympalError};
use rand::Rng;

#[derive(Parser, Debug)]
#[command(name = "sympal", version, about = "Periodic-orbit laboratory for torus maps given by generating functions")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ConleyMode {
    #[value(name = "single-gf")]
    SingleGf,
    #[value(name = "nondegenerate")]
    Nondegenerate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum CliMode {
    Max,
    Min,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Validate a system config; print dimensions and smallness data
    Map {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Find periodic orbits of a given period with all invariants
    Orbits {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        period: usize,
        /// JSON file with search-config overrides
        #[arg(long)]
        search: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a CSV flattening (one row per orbit)
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Maslov data of a stored orbit: average index, index, iteration bounds
    Maslov {
        #[arg(long)]
        system: PathBuf,
        /// Orbit file: either an orbit record or a bare loop configuration
        #[arg(long)]
        orbit: PathBuf,
        /// Analyze the n-fold iterate
        #[arg(long, default_value_t = 1)]
        period: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Symplectically degenerate extremum detection at a fixed point
    Sdm {
        #[arg(long)]
        system: PathBuf,
        /// Fixed point, comma-separated coordinates
        #[arg(long)]
        point: String,
        #[arg(long, value_enum, default_value_t = CliMode::Max)]
        mode: CliMode,
        /// Periods: "1..8" or "1,2,5"
        #[arg(long, default_value = "1..8")]
        periods: String,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Homological-vanishing homotopy verification on the polydisc
    Vanish {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        point: String,
        /// JSON file with the vanishing parameters
        #[arg(long)]
        params: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Action-spectrum scan over a period range
    Spectrum {
        #[arg(long)]
        system: PathBuf,
        #[arg(long, default_value = "1..4")]
        periods: String,
        /// Average-action window filter "center,radius"
        #[arg(long)]
        window: Option<String>,
        #[arg(long)]
        seed: Option<u64>,
        /// CSV output path
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Prime-period experiments
    Conley {
        #[arg(long)]
        system: PathBuf,
        /// Comma-separated primes
        #[arg(long, default_value = "2,3,5,7,11")]
        primes: String,
        #[arg(long, value_enum)]
        mode: ConleyMode,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the bundled invariant suite on a system
    Verify {
        #[arg(long)]
        system: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// SVG scatter of (period, average action) from a spectrum CSV
    Plot {
        #[arg(long)]
        table: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Horizontal reference line (defaults to the window center if the
        /// table carried one)
        #[arg(long)]
        refline: Option<f64>,
    },
    /// Run the accumulation scan around a degenerate extremum
    Accumulate {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        point: String,
        #[arg(long, default_value = "2,3,5,7")]
        periods: String,
        #[arg(long, default_value_t = 0.5)]
        window: f64,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

pub fn parse_periods(s: &str) -> Result<Vec<usize>> {
    let s = s.trim();
    if let Some((a, b)) = s.split_once("..") {
        let lo: usize = a.trim().parse().map_err(|_| bad_periods(s))?;
        let hi: usize = b.trim().trim_start_matches('=').parse().map_err(|_| bad_periods(s))?;
        if lo == 0 || hi < lo {
            return Err(bad_periods(s));
        }
        Ok((lo..=hi).collect())
    } else {
        let mut out = Vec::new();
        for part in s.split(',') {
            let v: usize = part.trim().parse().map_err(|_| bad_periods(s))?;
            if v == 0 {
                return Err(bad_periods(s));
            }
            out.push(v);
        }
        Ok(out)
    }
}

fn bad_periods(s: &str) -> SympalError {
    SympalError::Config(format!("cannot parse period list {s:?} (use \"1..8\" or \"1,2,5\")"))
}

pub fn parse_point(s: &str) -> Result<DVector<f64>> {
    let coords: std::result::Result<Vec<f64>, _> =
        s.split(',').map(|p| p.trim().parse::<f64>()).collect();
    match coords {
        Ok(v) if !v.is_empty() => Ok(DVector::from_vec(v)),
        _ => Err(SympalError::Config(format!("cannot parse point {s:?}"))),
    }
}

fn parse_window(s: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(SympalError::Config(format!("window must be \"center,radius\", got {s:?}")));
    }
    let c = parts[0].trim().parse().map_err(|_| SympalError::Config("bad window center".into()))?;
    let r = parts[1].trim().parse().map_err(|_| SympalError::Config("bad window radius".into()))?;
    Ok((c, r))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| SympalError::Config(format!("cannot read {what} {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| SympalError::Config(format!("cannot parse {what} {}: {e}", path.display())))
}

pub fn load_system(path: &Path) -> Result<FactorizedMap> {
    let cfg: MapConfig = read_json(path, "system config")?;
    FactorizedMap::from_config(cfg)
}

/// Atomic write: temp file in the target directory, then rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
        std::process::id()
    ));
    std::fs::write(&tmp, bytes)
        .and_then(|_| std::fs::rename(&tmp, path))
        .map_err(|e| SympalError::Config(format!("cannot write {}: {e}", path.display())))
}

fn emit<T: Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| SympalError::Config(format!("serialization failed: {e}")))?;
    text.push('\n');
    match out {
        Some(p) => write_atomic(p, text.as_bytes()),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[derive(Debug, Serialize)]
struct MapInfo {
    label: String,
    d: usize,
    k: usize,
    smallness_certificate: f64,
    analytic_bound: f64,
    terms_per_factor: Vec<usize>,
}

#[derive(Debug, Serialize)]
struct OrbitsOut {
    system: String,
    period: usize,
    seed: u64,
    degenerate_family: bool,
    already_critical_fraction: f64,
    n_starts: usize,
    n_converged: usize,
    warnings: Vec<String>,
    records: Vec<OrbitRecord>,
}

fn orbits_csv(records: &[OrbitRecord]) -> String {
    let mut s = String::from("period,orbit_key,action,avg_action,mor,nul,mas,avmas,grad_residual\n");
    for r in records {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.period(),
            r.orbit_key,
            r.action,
            r.average_action,
            r.morse_index,
            r.nullity,
            r.maslov,
            r.avg_maslov,
            r.gradient_residual
        ));
    }
    s
}

#[derive(Debug, Serialize)]
struct MaslovOut {
    avmas: f64,
    mas: i64,
    period: usize,
    bounds_report: IterationBoundsReport,
}

#[derive(Debug, Serialize)]
pub struct VerifyCheck {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Debug, Serialize)]
pub struct VerifyReport {
    pub system: String,
    pub seed: u64,
    pub all_pass: bool,
    pub checks: Vec<VerifyCheck>,
}

/// The bundled invariant suite: exercises every contract that can be
/// checked on an arbitrary system at desk scale.
pub fn verify_system(map: &FactorizedMap, seed: u64) -> Result<VerifyReport> {
    let mut checks: Vec<VerifyCheck> = Vec::new();
    let mut check = |name: &str, pass: bool, detail: String| {
        checks.push(VerifyCheck { name: name.into(), pass, detail });
    };
    let d = map.d;
    let dims = 2 * d;
    let mut rng = rng_stream(seed, 1);

    check(
        "smallness-certificate",
        map.smallness_certificate < 1.0,
        format!("grid max {:.6}, analytic bound {:.6}", map.smallness_certificate, map.analytic_bound),
    );

    // symplecticity of factor differentials at random points
    let mut worst_sympl: f64 = 0.0;
    let mut worst_jac: f64 = 0.0;
    let mut worst_equiv: f64 = 0.0;
    let mut worst_resid: f64 = 0.0;
    for _ in 0..200 {
        let z = DVector::from_fn(dims, |_, _| rng.random_range(-1.0..1.0f64));
        let fi = rng.random_range(0..map.k());
        let f = &map.factors[fi];
        let w = apply_factor(f, &z)?;
        let x_next = w.rows(0, d).into_owned();
        let m = differential_factor(f, &z, &x_next)?;
        worst_sympl = worst_sympl.max(symplectic_residual(m.matrix()));
        // implicit residual of both defining equations
        let mut arg = DVector::zeros(dims);
        arg.rows_mut(0, d).copy_from(&x_next);
        arg.rows_mut(d, d).copy_from(&z.rows(d, d));
        let g = f.gradient(arg.as_slice())?;
        for i in 0..d {
            worst_resid = worst_resid.max((w[i] - z[i] - g[d + i]).abs());
            worst_resid = worst_resid.max((w[d + i] - z[d + i] + g[i]).abs());
        }
        // equivariance
        let mvec = DVector::from_fn(dims, |_, _| rng.random_range(-2i64..=2) as f64);
        let wa = apply_factor(f, &(&z + &mvec))?;
        worst_equiv = worst_equiv.max((wa - (&w + &mvec)).amax());
        // finite-difference Jacobian
        let h = 1e-5;
        let mut fd = nalgebra::DMatrix::zeros(dims, dims);
        for c in 0..dims {
            let mut zp = z.clone();
            zp[c] += h;
            let fp = apply_factor(f, &zp)?;
            zp[c] = z[c] - h;
            let fm = apply_factor(f, &zp)?;
            fd.set_column(c, &((fp - fm) / (2.0 * h)));
        }
        worst_jac = worst_jac.max((m.matrix() - fd).amax());
    }
    check("symplecticity", worst_sympl < tol::SYMPLECTIC, format!("max ‖MᵀJM−J‖∞ = {worst_sympl:.3e}"));
    check("implicit-residual", worst_resid < 1e-12, format!("max residual = {worst_resid:.3e}"));
    check("equivariance", worst_equiv < tol::EXACT_PERIODICITY, format!("max deviation = {worst_equiv:.3e}"));
    check("jacobian-consistency", worst_jac < 1e-6, format!("max |dψ − FD| = {worst_jac:.3e}"));

    // action deck invariance and gradient consistency on random loops
    let p_test = 2;
    let mut worst_deck: f64 = 0.0;
    let mut worst_gfd: f64 = 0.0;
    for _ in 0..10 {
        let pts: Vec<DVector<f64>> = (0..map.k() * p_test)
            .map(|_| DVector::from_fn(dims, |_, _| rng.random_range(0.0..1.0f64)))
            .collect();
        let lc = LoopConfiguration::new(d, map.k(), p_test, pts)?;
        let a0 = action_value(map, &lc)?;
        let shift = DVector::from_fn(dims, |_, _| rng.random_range(-2i64..=2) as f64);
        let shifted = LoopConfiguration {
            points: lc.points.iter().map(|p| p + &shift).collect(),
            ..lc.clone()
        };
        worst_deck = worst_deck.max((action_value(map, &shifted)? - a0).abs());
        let g = action_gradient(map, &lc)?;
        let flat = lc.flat();
        let h = 1e-5;
        for idx in 0..flat.len().min(8) {
            let mut fp = flat.clone();
            fp[idx] += h;
            let mut fm = flat.clone();
            fm[idx] -= h;
            let ap = action_value(map, &LoopConfiguration::from_flat(d, map.k(), p_test, &fp)?)?;
            let am = action_value(map, &LoopConfiguration::from_flat(d, map.k(), p_test, &fm)?)?;
            worst_gfd = worst_gfd.max(((ap - am) / (2.0 * h) - g[idx]).abs());
        }
    }
    check("action-deck-invariance", worst_deck < 1e-10, format!("max deviation = {worst_deck:.3e}"));
    check("action-gradient-fd", worst_gfd < 1e-6, format!("max |∇𝒜 − FD| = {worst_gfd:.3e}"));

    // orbit pipeline on periods 1 and 2
    let cfg = SearchConfig {
        grid_per_dim: if dims >= 4 { 4 } else { 8 },
        seed,
        ..SearchConfig::default()
    };
    let res1 = find_critical_points(map, 1, &cfg)?;
    if res1.degenerate_family {
        check("orbit-search", true, "degenerate family flagged; orbit checks skipped".into());
    } else {
        check(
            "orbit-search",
            !res1.records.is_empty(),
            format!("{} period-1 orbits", res1.records.len()),
        );
        let mut path_endpoint: f64 = 0.0;
        let mut idx_ok = true;
        let mut bl_ok = true;
        for r in &res1.records {
            let mono = monodromy_of_points(map, &r.loop_config.points)?;
            let path = canonical_path_of_points(map, &r.loop_config.points, cfg.samples_per_factor)?;
            path_endpoint = path_endpoint.max((path.endpoint() - mono.matrix()).amax());
            idx_ok &= r.morse_index as i64 - (d * map.k()) as i64 == r.maslov;
            for n in 1..=4usize {
                let mn = mono.matrix().pow(n as u32);
                let nul_n = crate::symmap::kernel_dimension(
                    &(&mn - nalgebra::DMatrix::identity(dims, dims)),
                    cfg.tol_null_factor,
                );
                let rep = check_iteration_bounds(&path, n, nul_n, &cfg.maslov())?;
                bl_ok &= rep.lower_ok && rep.upper_ok;
                if !rep.both_strict {
                    bl_ok &= rep.unipotent_when_tight.unwrap_or(false);
                }
            }
        }
        check("path-endpoint", path_endpoint < tol::PATH_ENDPOINT, format!("max = {path_endpoint:.3e}"));
        check("index-theorem", idx_ok, "mor − dkp = mas on every period-1 orbit".into());
        check("bott-long", bl_ok, "iteration bounds for n ≤ 4".into());

        // group law: period-2 path equals the squared period-1 path
        if let Some(r) = res1.records.first() {
            let p1 = canonical_path_of_points(map, &r.loop_config.points, 32)?;
            let it2 = crate::maslov::iterate_path(&p1, 2)?;
            let lc2 = r.loop_config.iterate(2);
            let p2 = canonical_path_of_points(map, &lc2.points, 32)?;
            let mut worst: f64 = 0.0;
            for (i, &t) in it2.times.iter().enumerate() {
                worst = worst.max((p2.sample(t)? - &it2.matrices[i]).amax());
            }
            check("path-group-law", worst < tol::PATH_ENDPOINT, format!("max deviation = {worst:.3e}"));

            // iterate criticality
            let g3 = action_gradient(map, &r.loop_config.iterate(3))?;
            check("iterate-criticality", g3.amax() < tol::CRITICAL_GRADIENT, format!("‖∇𝒜⁽³ᵖ⁾‖∞ = {:.3e}", g3.amax()));
        }

        // dedup on shifted copies at period 2
        let res2 = find_critical_points(map, 2, &cfg)?;
        if let Some(r) = res2.records.first() {
            let shifted = OrbitRecord {
                loop_config: r.loop_config.shift_blocks(1),
                ..r.clone()
            };
            let merged = dedup_orbits(vec![r.clone(), shifted], cfg.dedup_tol)?;
            check("dedup-shift", merged.len() == 1, format!("{} after merge", merged.len()));
        }
    }

    let all_pass = checks.iter().all(|c| c.pass);
    Ok(VerifyReport { system: map.label.clone(), seed, all_pass, checks })
}

/// Scatter plot of (period, average action) with an optional horizontal
/// reference line; pure function of the table.
pub fn build_svg(table: &SpectrumTable, refline: Option<f64>) -> Option<String> {
    if table.entries.is_empty() {
        return None;
    }
    let (w, h, ml, mb) = (640.0, 420.0, 70.0, 50.0);
    let pmin = table.entries.iter().map(|e| e.period).min().unwrap() as f64;
    let pmax = table.entries.iter().map(|e| e.period).max().unwrap() as f64;
    let mut amin = table.entries.iter().map(|e| e.average_action).fold(f64::INFINITY, f64::min);
    let mut amax = table.entries.iter().map(|e| e.average_action).fold(f64::NEG_INFINITY, f64::max);
    if let Some(r) = refline {
        amin = amin.min(r);
        amax = amax.max(r);
    }
    let apad = ((amax - amin) * 0.08).max(1e-12);
    let (amin, amax) = (amin - apad, amax + apad);
    let (pmin, pmax) = (pmin - 0.5, pmax + 0.5);
    let sx = |p: f64| ml + (p - pmin) / (pmax - pmin) * (w - ml - 20.0);
    let sy = |a: f64| (h - mb) - (a - amin) / (amax - amin) * (h - mb - 20.0);

    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n\
         <line x1=\"{ml}\" y1=\"20\" x2=\"{ml}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{ml}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <text x=\"{xc}\" y=\"{yl}\" text-anchor=\"middle\" font-size=\"13\">period</text>\n\
         <text x=\"16\" y=\"{ymid}\" font-size=\"13\" transform=\"rotate(-90 16 {ymid})\" text-anchor=\"middle\">average action</text>\n",
        y0 = h - mb,
        x1 = w - 20.0,
        xc = (ml + w - 20.0) / 2.0,
        yl = h - 14.0,
        ymid = (h - mb + 20.0) / 2.0,
    );
    if let Some(r) = refline {
        s.push_str(&format!(
            "<line x1=\"{ml}\" y1=\"{y}\" x2=\"{x1}\" y2=\"{y}\" stroke=\"#c00\" stroke-dasharray=\"6 3\"/>\n\
             <text x=\"{x1}\" y=\"{yt}\" font-size=\"11\" fill=\"#c00\" text-anchor=\"end\">reference</text>\n",
            y = sy(r),
            x1 = w - 20.0,
            yt = sy(r) - 5.0,
        ));
    }
    for e in &table.entries {
        s.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"#1f5fbf\" fill-opacity=\"0.75\"><title>{}</title></circle>\n",
            sx(e.period as f64),
            sy(e.average_action),
            e.orbit_key
        ));
    }
    s.push_str("</svg>\n");
    Some(s)
}

fn parse_csv_table(text: &str) -> Result<SpectrumTable> {
    let mut entries = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split(',').collect();
        if parts.len() != 8 {
            return Err(SympalError::Config(format!("CSV line {} has {} fields, want 8", i + 1, parts.len())));
        }
        let parse_err = |what: &str| SympalError::Config(format!("CSV line {}: bad {what}", i + 1));
        entries.push(SpectrumEntry {
            period: parts[0].parse().map_err(|_| parse_err("period"))?,
            orbit_key: parts[1].to_string(),
            action: parts[2].parse().map_err(|_| parse_err("action"))?,
            average_action: parts[3].parse().map_err(|_| parse_err("avg_action"))?,
            morse_index: parts[4].parse().map_err(|_| parse_err("mor"))?,
            nullity: parts[5].parse().map_err(|_| parse_err("nul"))?,
            maslov: parts[6].parse().map_err(|_| parse_err("mas"))?,
            basic_period: parts[7].parse().map_err(|_| parse_err("basic_period"))?,
        });
    }
    Ok(SpectrumTable { entries, window: None, degenerate_family_periods: Vec::new(), warnings: Vec::new() })
}

fn run_command(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Map { system, out } => {
            let map = load_system(&system)?;
            let info = MapInfo {
                label: map.label.clone(),
                d: map.d,
                k: map.k(),
                smallness_certificate: map.smallness_certificate,
                analytic_bound: map.analytic_bound,
                terms_per_factor: map.factors.iter().map(|f| f.terms.len()).collect(),
            };
            emit(&info, out.as_deref())?;
            Ok(0)
        }
        Command::Orbits { system, period, search, seed, out, csv } => {
            let map = load_system(&system)?;
            let mut cfg: SearchConfig = match search {
                Some(p) => read_json(&p, "search config")?,
                None => SearchConfig::default(),
            };
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let res = find_critical_points(&map, period, &cfg)?;
            let payload = OrbitsOut {
                system: map.label.clone(),
                period,
                seed: cfg.seed,
                degenerate_family: res.degenerate_family,
                already_critical_fraction: res.already_critical_fraction,
                n_starts: res.n_starts,
                n_converged: res.n_converged,
                warnings: res.warnings.clone(),
                records: res.records.clone(),
            };
            emit(&payload, out.as_deref())?;
            if let Some(p) = csv {
                write_atomic(&p, orbits_csv(&res.records).as_bytes())?;
            }
            Ok(0)
        }
        Command::Maslov { system, orbit, period, seed, out } => {
            let map = load_system(&system)?;
            let text = std::fs::read_to_string(&orbit)
                .map_err(|e| SympalError::Config(format!("cannot read orbit file: {e}")))?;
            let lc: LoopConfiguration = match serde_json::from_str::<OrbitRecord>(&text) {
                Ok(rec) => rec.loop_config,
                Err(_) => serde_json::from_str(&text)
                    .map_err(|e| SympalError::Config(format!("cannot parse orbit file: {e}")))?,
            };
            let cfg = SearchConfig::with_seed(seed.unwrap_or(0));
            let g = action_gradient(&map, &lc)?;
            if g.amax() > tol::CRITICAL_GRADIENT {
                return Err(SympalError::PreconditionFailed(format!(
                    "stored loop is not a critical point (‖∇𝒜‖∞ = {:.3e})",
                    g.amax()
                )));
            }
            let path = canonical_path_of_points(&map, &lc.points, cfg.samples_per_factor)?;
            let mono = monodromy_of_points(&map, &lc.points)?;
            let n = period.max(1);
            let mn = mono.matrix().pow(n as u32);
            let dims = 2 * map.d;
            let scale = (&mn - nalgebra::DMatrix::identity(dims, dims))
                .svd_unordered(false, false)
                .singular_values
                .max();
            let nul_n = crate::symmap::kernel_dimension(
                &(&mn - nalgebra::DMatrix::identity(dims, dims)),
                cfg.tol_null_factor * scale.max(1.0),
            );
            let report = check_iteration_bounds(&path, n, nul_n, &cfg.maslov())?;
            let payload = MaslovOut {
                avmas: average_maslov(&path),
                mas: crate::maslov::maslov_index_forced(
                    &path,
                    &cfg.maslov(),
                    crate::symmap::kernel_dimension(
                        &(mono.matrix() - nalgebra::DMatrix::identity(dims, dims)),
                        cfg.tol_null_factor,
                    ) > 0,
                )?,
                period: n,
                bounds_report: report,
            };
            emit(&payload, out.as_deref())?;
            Ok(0)
        }
        Command::Sdm { system, point, mode, periods, seed, out } => {
            let map = load_system(&system)?;
            let z0 = parse_point(&point)?;
            let n_list = parse_periods(&periods)?;
            let cfg = SearchConfig::with_seed(seed.unwrap_or(0));
            let mode = match mode {
                CliMode::Max => ExtremumMode::Max,
                CliMode::Min => ExtremumMode::Min,
            };
            let report = sdm_criteria(&map, &z0, &n_list, mode, &cfg)?;
            emit(&report, out.as_deref())?;
            Ok(0)
        }
        Command::Vanish { system, point, params, out } => {
            let map = load_system(&system)?;
            let z0 = parse_point(&point)?;
            let p: VanishParams = read_json(&params, "vanish params")?;
            let report = vanishing_homotopy_verify(&map, &z0, &p)?;
            let ok = report.bounds_hold;
            emit(&report, out.as_deref())?;
            if ok {
                Ok(0)
            } else {
                eprintln!("vanishing bounds violated at {} samples", report.violations);
                Ok(1)
            }
        }
        Command::Spectrum { system, periods, window, seed, out, json } => {
            let map = load_system(&system)?;
            let p_list = parse_periods(&periods)?;
            let win = window.as_deref().map(parse_window).transpose()?;
            let cfg = SearchConfig {
                grid_per_dim: if map.d >= 2 { 4 } else { 8 },
                seed: seed.unwrap_or(0),
                ..SearchConfig::default()
            };
            let table = scan_periods(&map, &p_list, &cfg, win)?;
            if let Some(p) = &out {
                write_atomic(p, table.to_csv().as_bytes())?;
            }
            if let Some(p) = &json {
                emit(&table, Some(p.as_path()))?;
            }
            if out.is_none() && json.is_none() {
                emit(&table, None)?;
            }
            Ok(0)
        }
        Command::Conley { system, primes, mode, seed, out } => {
            let map = load_system(&system)?;
            let p_list = parse_periods(&primes)?;
            let cfg = SearchConfig {
                grid_per_dim: if map.d >= 2 { 4 } else { 8 },
                seed: seed.unwrap_or(0),
                ..SearchConfig::default()
            };
            match mode {
                ConleyMode::SingleGf => {
                    let rep = conley_single_gf_experiment(&map, &p_list, &cfg)?;
                    emit(&rep, out.as_deref())?;
                }
                ConleyMode::Nondegenerate => {
                    let rep = conley_zehnder_experiment(&map, &p_list, &cfg)?;
                    emit(&rep, out.as_deref())?;
                }
            }
            Ok(0)
        }
        Command::Verify { system, seed, out } => {
            let map = load_system(&system)?;
            let report = verify_system(&map, seed)?;
            let ok = report.all_pass;
            emit(&report, out.as_deref())?;
            if ok {
                Ok(0)
            } else {
                eprintln!("verification failed");
                Ok(1)
            }
        }
        Command::Plot { table, out, refline } => {
            let text = std::fs::read_to_string(&table)
                .map_err(|e| SympalError::Config(format!("cannot read table: {e}")))?;
            let parsed = parse_csv_table(&text)?;
            match build_svg(&parsed, refline.or(parsed.window.map(|w| w.0))) {
                Some(svg) => {
                    write_atomic(&out, svg.as_bytes())?;
                    Ok(0)
                }
                None => {
                    eprintln!("warning: empty table, no plot written");
                    Ok(0)
                }
            }
        }
        Command::Accumulate { system, point, periods, window, seed, out } => {
            let map = load_system(&system)?;
            let z0 = parse_point(&point)?;
            let n_list = parse_periods(&periods)?;
            let cfg = SearchConfig {
                grid_per_dim: if map.d >= 2 { 4 } else { 8 },
                seed: seed.unwrap_or(0),
                ..SearchConfig::default()
            };
            let rep = accumulation_scan(&map, &z0, &n_list, window, &cfg)?;
            emit(&rep, out.as_deref())?;
            Ok(0)
        }
    }
}

/// Entry point shared by the binary and the CLI tests: parses arguments,
/// configures the thread pool from `SYMPAL_THREADS` (0 = auto), runs, and
/// maps errors onto exit-code classes.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run_command(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn init_threads() {
    if let Ok(v) = std::env::var("SYMPAL_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            if n > 0 {
                let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::{sys_b, sys_c};

    #[test]
    fn period_and_point_parsing() {
        assert_eq!(parse_periods("1..4").unwrap(), vec![1, 2, 3, 4]);
        assert_eq!(parse_periods("2,3,5").unwrap(), vec![2, 3, 5]);
        assert!(parse_periods("0..3").is_err());
        assert!(parse_periods("x").is_err());
        assert_eq!(parse_point("0.5, -0.25").unwrap().len(), 2);
        assert!(parse_point("a,b").is_err());
    }

    #[test]
    fn verify_suite_passes_on_benchmarks() {
        for map in [sys_b(), sys_c()] {
            let rep = verify_system(&map, 0).unwrap();
            assert!(
                rep.all_pass,
                "{}: {:?}",
                map.label,
                rep.checks.iter().filter(|c| !c.pass).collect::<Vec<_>>()
            );
        }
    }

    #[test]
    fn svg_builder() {
        let entry = |p: usize, a: f64| SpectrumEntry {
            period: p,
            orbit_key: format!("k{p}"),
            action: a * p as f64,
            average_action: a,
            morse_index: 1,
            nullity: 0,
            maslov: 0,
            basic_period: p,
        };
        let table = SpectrumTable {
            entries: vec![entry(1, 0.02)],
            window: None,
            degenerate_family_periods: vec![],
            warnings: vec![],
        };
        let svg = build_svg(&table, Some(0.0)).unwrap();
        assert_eq!(svg.matches("<circle").count(), 1);
        assert!(svg.contains("reference"));

        let empty = SpectrumTable {
            entries: vec![],
            window: None,
            degenerate_family_periods: vec![],
            warnings: vec![],
        };
        assert!(build_svg(&empty, None).is_none());
    }

    #[test]
    fn csv_round_trip() {
        let cfg = SearchConfig::with_seed(3);
        let table = scan_periods(&sys_c(), &[1], &cfg, None).unwrap();
        let csv = table.to_csv();
        let parsed = parse_csv_table(&csv).unwrap();
        assert_eq!(parsed.entries.len(), table.entries.len());
        assert_eq!(parsed.entries[0].orbit_key, table.entries[0].orbit_key);
    }
}
