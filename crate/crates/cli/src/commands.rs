use std::collections::BTreeMap;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use framecert::alphamod::{run_scenario, write_envelope_csv};
use framecert::certificate::{
    c_d, c_d_prime, c_prime, certify_with_pairs, default_calderon_grid, default_rule, kappa_d, paper_constants,
    relative_change, Certificate, CertifyOptions,
};
use framecert::partition::{build_regular_partition, partition_constants_with, BumpProfile, PartitionConstantsOptions};
use framecert::system::StructuredSystem;
use framecert::walnut::{
    self, apply_direct, apply_direct_auto, apply_walnut_with, bump_corpus, contraction_surrogate, gaussian_corpus,
    lambda_set, neumann_with, ApplyMode, FrameOperator, FreqGrid, GridSignal, LATTICE_TOL,
};
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{AlphaModConfig, DeltaSpec, InvertMode, Loaded, RunConfig, SchemaError, SignalKind};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const ERROR: i32 = 1;
    /// Computed, but the certificate or check does not pass.
    pub const NOT_CERTIFIED: i32 = 2;
    pub const CONTRACTION_FAILED: i32 = 3;
    pub const SCHEMA: i32 = 64;
    pub const OFF_GRID: i32 = 65;
}

/// Options shared by all subcommands.
#[derive(Debug, Clone)]
pub struct Common {
    pub out: Option<PathBuf>,
    pub double_check: bool,
    pub seed: Option<u64>,
}

/// Relative tolerance of the Walnut/direct comparison.
pub const WALNUT_TOLERANCE: f64 = 1e-6;

fn out_dir(common: &Common, configured: &Option<PathBuf>) -> Result<PathBuf> {
    let dir = common
        .out
        .clone()
        .or_else(|| configured.clone())
        .unwrap_or_else(|| PathBuf::from("."));
    fs::create_dir_all(&dir).with_context(|| format!("creating output directory {}", dir.display()))?;
    Ok(dir)
}

fn timestamp() -> u64 {
    std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// Report envelope shared by all commands.
fn report(command: &str, config_hash: &str, seed: Option<u64>, body: Value) -> Value {
    json!({
        "tool": "framecert",
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config_hash": config_hash,
        "seed": seed,
        "timestamp": timestamp(),
        "result": body,
    })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").with_context(|| format!("writing {}", path.display()))?;
    log::info!("wrote {}", path.display());
    Ok(())
}

fn certify_options(cfg: &RunConfig) -> CertifyOptions {
    CertifyOptions {
        rule: cfg.quadrature,
        calderon_grid: cfg.calderon_grid,
        auto_delta: cfg.delta == DeltaSpec::Auto,
        adaptedness: cfg.adaptedness,
        l2_alpha_max: cfg.truncation.alpha_max,
        weight_family: cfg.weight,
        ..CertifyOptions::default()
    }
}

/// Re-certification at doubled quadrature resolution and Calderón grid.
#[derive(Debug, Clone, Serialize)]
struct DoubleCheck {
    relative_changes: BTreeMap<String, f64>,
    stable: bool,
}

fn double_check(first: &Certificate, second: &Certificate) -> DoubleCheck {
    let pairs = [
        ("a_prime", first.a_prime, second.a_prime),
        ("m0", first.m0, second.m0),
        ("m1", first.m1, second.m1),
        ("delta_max", first.delta_max, second.delta_max),
    ];
    let relative_changes: BTreeMap<String, f64> =
        pairs.iter().map(|(k, a, b)| (k.to_string(), relative_change(*a, *b))).collect();
    let stable = relative_changes.values().all(|c| *c < framecert::certificate::STABILITY_TOLERANCE);
    DoubleCheck {
        relative_changes,
        stable,
    }
}

pub fn certify(loaded: &Loaded<RunConfig>, common: &Common) -> Result<i32> {
    let cfg = &loaded.config;
    let system = cfg.system(&loaded.base_dir)?;
    let weight = cfg.weight(system.cover())?;
    let opts = certify_options(cfg);
    let (cert, pairs) = certify_with_pairs(&system, weight.as_ref(), cfg.p.0, cfg.q.0, &opts)?;
    let dir = out_dir(common, &cfg.output.dir)?;

    let checked = if common.double_check {
        let d = system.dim();
        let mut fine = opts.clone();
        fine.rule = Some(opts.rule.unwrap_or_else(|| default_rule(d)).doubled());
        fine.calderon_grid = Some(2 * opts.calderon_grid.unwrap_or_else(|| default_calderon_grid(d)) - 1);
        fine.quadrature_doubling = false;
        fine.truncation_doubling = false;
        let (second, _) = certify_with_pairs(&system, weight.as_ref(), cfg.p.0, cfg.q.0, &fine)?;
        Some(double_check(&cert, &second))
    } else {
        None
    };

    if cfg.output.matrices {
        pairs.yhat.write_csv(BufWriter::new(fs::File::create(dir.join("yhat.csv"))?))?;
        pairs.ytilde.write_csv(BufWriter::new(fs::File::create(dir.join("ytilde.csv"))?))?;
    }

    let stable = cert.is_stable() && checked.as_ref().is_none_or(|c| c.stable);
    let body = json!({
        "certificate": cert,
        "stability_flags_green": stable,
        "double_check": checked,
    });
    write_json(&dir.join("certificate.json"), &report("certify", &loaded.hash, None, body))?;
    log::info!(
        "δ = {:e}, δ_max = {:e}, invertible = {}, stable = {}",
        cert.delta,
        cert.delta_max,
        cert.invertible,
        stable
    );
    if !cert.invertible {
        return Ok(exit::NOT_CERTIFIED);
    }
    if !stable {
        log::warn!("certificate computed but stability flags are not all green");
        return Ok(exit::NOT_CERTIFIED);
    }
    Ok(exit::OK)
}

fn corpus(cfg: &RunConfig, system: &StructuredSystem, grid: &FreqGrid, margin: f64, seed: u64, count: usize) -> Result<Vec<GridSignal>> {
    let spec = cfg.signals;
    match spec.kind {
        SignalKind::Gaussian => {
            // Gaussian bumps of width ≤ 1.5 fall below 1e-12 within 5 units.
            let range = spec.centre_range.unwrap_or(grid.halfwidth - margin - 5.0);
            if !(range >= 0.0) {
                return Err(SchemaError(format!(
                    "field `grid.halfwidth`: {} leaves no room for test signals with a boundary margin of {margin}",
                    grid.halfwidth
                ))
                .into());
            }
            Ok(gaussian_corpus(grid, count, seed, range))
        }
        SignalKind::Painless => {
            let limit = grid.halfwidth - margin - spec.bump_radius;
            let centres: Vec<Vec<f64>> = system
                .cover()
                .elements()
                .iter()
                .filter(|e| !e.edge)
                .map(|e| e.map.shift().iter().copied().collect::<Vec<f64>>())
                .filter(|c| c.iter().all(|x| x.abs() <= limit))
                .collect();
            if centres.is_empty() {
                return Err(SchemaError("field `signals`: no cover centre lies inside the grid margin".into()).into());
            }
            Ok(bump_corpus(grid, count, seed, &centres, spec.bump_radius))
        }
    }
}

fn delta_of(cfg: &RunConfig) -> Result<f64> {
    match cfg.delta {
        DeltaSpec::Value(v) => Ok(v),
        DeltaSpec::Auto => Err(SchemaError("field `delta`: this command needs a numeric δ".into()).into()),
    }
}

#[derive(Debug, Clone, Serialize)]
struct WalnutRow {
    signal: usize,
    relative_error: f64,
    coefficient_truncation_flagged: bool,
    norm: f64,
}

fn walnut_rows(
    cfg: &RunConfig,
    system: &StructuredSystem,
    grid: FreqGrid,
    alpha_max: f64,
    seed: u64,
) -> Result<Vec<WalnutRow>> {
    let lambda = lambda_set(system, alpha_max, LATTICE_TOL)?;
    for a in &lambda.alphas {
        grid.steps(a).map_err(|_| framecert::Error::OffGridLattice {
            alpha: a.clone(),
            spacing: grid.spacing(),
            suggested_n: grid.compatible_n(&lambda.alphas),
        })?;
    }
    let signals = corpus(cfg, system, &grid, alpha_max, seed, cfg.signals.count)?;
    let mut rows = Vec::with_capacity(signals.len());
    for (k, f) in signals.iter().enumerate() {
        let w = apply_walnut_with(system, f, &lambda)?;
        let d = match cfg.truncation.kmax {
            Some(kmax) => apply_direct(system, f, kmax)?,
            None => apply_direct_auto(system, f, 8)?,
        };
        rows.push(WalnutRow {
            signal: k,
            relative_error: w.relative_distance(&d.signal),
            coefficient_truncation_flagged: d.flagged,
            norm: f.norm(),
        });
    }
    Ok(rows)
}

pub fn walnut_check(loaded: &Loaded<RunConfig>, common: &Common) -> Result<i32> {
    let cfg = &loaded.config;
    let system = cfg.system(&loaded.base_dir)?.with_delta(delta_of(cfg)?)?;
    let grid = cfg.grid()?;
    let alpha_max = cfg.truncation.alpha_max.unwrap_or_else(|| walnut::default_alpha_max(&system));
    let seed = common.seed.unwrap_or(cfg.seed);
    let rows = walnut_rows(cfg, &system, grid, alpha_max, seed)?;
    let max_error = rows.iter().map(|r| r.relative_error).fold(0.0, f64::max);
    let dir = out_dir(common, &cfg.output.dir)?;
    let mut w = csv::Writer::from_path(dir.join("walnut_check.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;

    let doubled = if common.double_check {
        let fine = FreqGrid::new(grid.d, grid.halfwidth, 2 * grid.n)?;
        let rows = walnut_rows(cfg, &system, fine, alpha_max, seed)?;
        Some(json!({
            "n": fine.n,
            "max_relative_error": rows.iter().map(|r| r.relative_error).fold(0.0, f64::max),
        }))
    } else {
        None
    };
    let passed = max_error < WALNUT_TOLERANCE
        && doubled
            .as_ref()
            .is_none_or(|d| d["max_relative_error"].as_f64().is_some_and(|e| e < WALNUT_TOLERANCE));
    let body = json!({
        "delta": system.delta(),
        "grid": grid,
        "alpha_max": alpha_max,
        "kmax": cfg.truncation.kmax,
        "signals": rows.len(),
        "max_relative_error": max_error,
        "tolerance": WALNUT_TOLERANCE,
        "passed": passed,
        "double_check": doubled,
    });
    write_json(&dir.join("walnut_check.json"), &report("walnut-check", &loaded.hash, Some(seed), body))?;
    log::info!("max relative Walnut/direct difference {max_error:e} over {} signals", rows.len());
    Ok(if passed { exit::OK } else { exit::NOT_CERTIFIED })
}

pub fn invert(loaded: &Loaded<RunConfig>, common: &Common, input: Option<&Path>) -> Result<i32> {
    let cfg = &loaded.config;
    let system = cfg.system(&loaded.base_dir)?.with_delta(delta_of(cfg)?)?;
    let grid = cfg.grid()?;
    let seed = common.seed.unwrap_or(cfg.seed);
    let mode = match cfg.invert.mode {
        InvertMode::Walnut => ApplyMode::Walnut {
            alpha_max: cfg.truncation.alpha_max.unwrap_or_else(|| walnut::default_alpha_max(&system)),
        },
        InvertMode::Direct => ApplyMode::Direct {
            kmax: cfg.truncation.kmax.unwrap_or(32),
        },
    };
    let margin = match mode {
        ApplyMode::Walnut { alpha_max } => alpha_max,
        ApplyMode::Direct { .. } => 0.0,
    };
    let op = FrameOperator::new(&system, grid, mode)?;
    // Without an input, g = S f for a seeded test signal f, so that the
    // reconstruction error can be reported too.
    let (g, truth, csv_input) = match input {
        Some(path) => {
            let csv = path.extension().is_some_and(|e| e == "csv");
            let g = GridSignal::read_path(path, Some(grid))?;
            if g.grid != grid {
                return Err(SchemaError(format!(
                    "field `grid`: input signal grid {:?} differs from the configured grid",
                    g.grid
                ))
                .into());
            }
            (g, None, csv)
        }
        None => {
            let f = corpus(cfg, &system, &grid, margin, seed, 1)?.remove(0);
            (op.apply(&f)?, Some(f), false)
        }
    };
    let dir = out_dir(common, &cfg.output.dir)?;
    let surrogate = contraction_surrogate(&op, &corpus(cfg, &system, &grid, margin, seed ^ 0x5eed, 5)?, 3)?;
    match neumann_with(&op, &g, cfg.invert.tol, cfg.invert.max_iter) {
        Ok(res) => {
            res.write_history_csv(BufWriter::new(fs::File::create(dir.join("residual_history.csv"))?))?;
            if csv_input {
                res.u.write_csv(BufWriter::new(fs::File::create(dir.join("inverted.csv"))?))?;
            } else {
                res.u.write_binary(BufWriter::new(fs::File::create(dir.join("inverted.bin"))?))?;
            }
            let body = json!({
                "delta": system.delta(),
                "mode": mode,
                "grid": grid,
                "tol": cfg.invert.tol,
                "max_iter": cfg.invert.max_iter,
                "converged": res.converged,
                "iterations": res.iterations(),
                "final_relative_residual": res.residual_history.last(),
                "contraction_ratio": res.contraction_ratio,
                "contraction_surrogate": surrogate,
                "reconstruction_error": truth.as_ref().map(|f| res.u.relative_distance(f)),
            });
            write_json(&dir.join("invert.json"), &report("invert", &loaded.hash, Some(seed), body))?;
            log::info!("{} iterations, converged = {}", res.iterations(), res.converged);
            Ok(if res.converged { exit::OK } else { exit::NOT_CERTIFIED })
        }
        Err(framecert::Error::ContractionFailed { ratio, history }) => {
            let mut w = csv::Writer::from_path(dir.join("residual_history.csv"))?;
            w.write_record(["iteration", "relative_residual"])?;
            for (i, r) in history.iter().enumerate() {
                w.write_record([i.to_string(), format!("{r:e}")])?;
            }
            w.flush()?;
            let body = json!({
                "delta": system.delta(),
                "mode": mode,
                "converged": false,
                "contraction_failed": true,
                "contraction_ratio": ratio,
                "contraction_surrogate": surrogate,
                "iterations": history.len(),
            });
            write_json(&dir.join("invert.json"), &report("invert", &loaded.hash, Some(seed), body))?;
            log::error!("contraction failed: measured residual ratio {ratio}");
            Ok(exit::CONTRACTION_FAILED)
        }
        Err(e) => Err(e.into()),
    }
}

fn dimension_constants(d: usize) -> Value {
    json!({
        "d": d,
        "C_d": c_d(d),
        "C'_d": c_d_prime(d),
        "C'": c_prime(d),
        "kappa_d": kappa_d(d),
        "C_pq(finite p, q)": 1.0,
    })
}

pub fn constants(loaded: Option<&Loaded<RunConfig>>, dims: &[usize], common: &Common) -> Result<i32> {
    let mut tables = Vec::new();
    let mut full = None;
    if let Some(loaded) = loaded {
        let cfg = &loaded.config;
        let cover = cfg.cover()?;
        let d = cover.dimension();
        let weight = cfg.weight(&cover)?;
        let partition = build_regular_partition(cover.clone(), BumpProfile::default())?;
        let pconsts = partition_constants_with(&partition, &PartitionConstantsOptions::default())?;
        let cconsts = cover.admissibility_constants(weight.as_ref(), false);
        let sup_measure = cover.elements().iter().map(|e| e.base.outer.measure()).fold(0.0, f64::max);
        let consts = paper_constants(d, &cconsts, &pconsts, cfg.p.0, cfg.q.0, sup_measure);
        full = Some(json!({
            "cover": cover.fingerprint(),
            "partition": partition.fingerprint(),
            "constants": consts,
        }));
        tables.push(dimension_constants(d));
    } else {
        for &d in dims {
            tables.push(dimension_constants(d));
        }
    }
    for t in &tables {
        println!("d = {}", t["d"]);
        for key in ["C_d", "C'_d", "C'", "kappa_d", "C_pq(finite p, q)"] {
            println!("  {key:<18} {:.17e}", t[key].as_f64().unwrap_or(f64::NAN));
        }
    }
    if let Some(f) = &full {
        println!("constants for the configured cover and partition:");
        if let Some(map) = f["constants"].as_object() {
            for (k, v) in map {
                println!("  {k:<18} {v}");
            }
        }
    }
    let dir = out_dir(common, &loaded.and_then(|l| l.config.output.dir.clone()))?;
    let hash = loaded.map(|l| l.hash.clone()).unwrap_or_default();
    let body = json!({ "dimensions": tables, "configured": full });
    write_json(&dir.join("constants.json"), &report("constants", &hash, None, body))?;
    Ok(exit::OK)
}

pub fn alphamod(loaded: &Loaded<AlphaModConfig>, common: &Common) -> Result<i32> {
    let cfg = &loaded.config;
    let opts = CertifyOptions {
        rule: cfg.quadrature,
        calderon_grid: cfg.calderon_grid,
        ..CertifyOptions::default()
    };
    let rep = run_scenario(&cfg.scenario, cfg.p.0, cfg.q.0, &opts, &loaded.base_dir)?;
    let dir = out_dir(common, &cfg.output.dir)?;
    write_envelope_csv(&rep.envelope, BufWriter::new(fs::File::create(dir.join("yhat_envelope.csv"))?))?;
    let passed = !rep.below_threshold
        && rep.envelope_decreasing
        && rep.m1_truncation_stable.unwrap_or(false)
        && rep.lower_bound_holds.unwrap_or(true)
        && rep.certificate.invertible;
    let body = json!({ "report": rep, "checks_passed": passed });
    write_json(&dir.join("alphamod.json"), &report("alphamod", &loaded.hash, None, body))?;
    log::info!(
        "N_emp = {}, required {}, M_1 = {:e}, envelope decreasing = {}",
        rep.decay,
        rep.required_decay,
        rep.certificate.m1,
        rep.envelope_decreasing
    );
    Ok(if passed { exit::OK } else { exit::NOT_CERTIFIED })
}
