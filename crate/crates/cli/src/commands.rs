//! Command implementations. Every command validates its config (exit 2 on
//! any config problem), refuses to overwrite existing outputs unless
//! `--force` is given, and writes byte-deterministic files.

use std::fs;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use papertrust_core::attacks::{run_attack_cell, AttackKind, MatrixCell};
use papertrust_core::chainnet::ScenarioConfig;
use papertrust_core::population::PopulationSpec;
use papertrust_core::pufmetrics::{self, ScorePolarity};

use crate::config::{AttackConfig, GenConfig, MetricsConfig, SCHEMA_VERSION};
use crate::RunArgs;

#[derive(Debug)]
pub enum CliError {
    /// Bad config or usage; exit code 2.
    Config(String),
    /// Failure while running; exit code 1.
    Runtime(String),
}

impl CliError {
    fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    fn runtime(msg: impl Into<String>) -> Self {
        CliError::Runtime(msg.into())
    }
}

fn load_config<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::config(format!("cannot parse {}: {e}", path.display())))
}

fn check_schema(version: u32) -> Result<(), CliError> {
    if version != SCHEMA_VERSION {
        return Err(CliError::config(format!(
            "unsupported schema_version {version} (expected {SCHEMA_VERSION})"
        )));
    }
    Ok(())
}

/// Creates the output directory and enforces the no-overwrite rule.
fn prepare_outputs(out: &Path, files: &[String], force: bool) -> Result<(), CliError> {
    fs::create_dir_all(out)
        .map_err(|e| CliError::runtime(format!("cannot create {}: {e}", out.display())))?;
    if !force {
        for name in files {
            let path = out.join(name);
            if path.exists() {
                return Err(CliError::config(format!(
                    "{} already exists; pass --force to overwrite",
                    path.display()
                )));
            }
        }
    }
    Ok(())
}

fn write_file(path: &PathBuf, bytes: &[u8]) -> Result<(), CliError> {
    fs::write(path, bytes)
        .map_err(|e| CliError::runtime(format!("cannot write {}: {e}", path.display())))
}

fn pretty_json(value: &serde_json::Value) -> Vec<u8> {
    let mut text = serde_json::to_string_pretty(value).expect("value serializes");
    text.push('\n');
    text.into_bytes()
}

pub fn run_gen(args: &RunArgs) -> Result<(), CliError> {
    let mut config: GenConfig = load_config(&args.config)?;
    check_schema(config.schema_version)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if config.count == 0 {
        return Err(CliError::config("count must be at least 1"));
    }

    let spec = PopulationSpec {
        surfaces: config.count,
        width: config.surface.width,
        height: config.surface.height,
        correlation_length: config.surface.correlation_length,
        slope_scale: config.surface.slope_scale,
        seed: config.seed,
        ..Default::default()
    };

    let mut files: Vec<String> =
        (0..config.count).map(|k| format!("surface_{k:04}.nmap")).collect();
    if config.emit_csv {
        files.extend((0..config.count).map(|k| format!("surface_{k:04}.csv")));
    }
    files.push("manifest.json".into());
    prepare_outputs(&args.out, &files, args.force)?;

    let mut manifest_files = Vec::with_capacity(config.count as usize);
    for k in 0..config.count {
        let nm = spec.surface(k).map_err(|e| CliError::runtime(e.to_string()))?;
        let bytes = nm.to_bytes();
        let name = format!("surface_{k:04}.nmap");
        write_file(&args.out.join(&name), &bytes)?;
        if config.emit_csv {
            let mut csv = Vec::new();
            nm.write_csv(&mut csv).map_err(|e| CliError::runtime(e.to_string()))?;
            write_file(&args.out.join(format!("surface_{k:04}.csv")), &csv)?;
        }
        manifest_files.push(serde_json::json!({
            "index": k,
            "file": name,
            "sha256": hex::encode::<[u8; 32]>(Sha256::digest(&bytes).into()),
        }));
    }
    let manifest = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "seed": config.seed,
        "count": config.count,
        "surface": {
            "width": config.surface.width,
            "height": config.surface.height,
            "correlation_length": config.surface.correlation_length,
            "slope_scale": config.surface.slope_scale,
        },
        "files": manifest_files,
    });
    write_file(&args.out.join("manifest.json"), &pretty_json(&manifest))?;
    info!("generated {} surfaces into {}", config.count, args.out.display());
    Ok(())
}

pub fn run_metrics(args: &RunArgs) -> Result<(), CliError> {
    let mut config: MetricsConfig = load_config(&args.config)?;
    check_schema(config.schema_version)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if config.surfaces < 2 {
        return Err(CliError::config(format!(
            "population of {} surfaces is too small: uniqueness needs at least 2",
            config.surfaces
        )));
    }
    if config.trials == 0 {
        return Err(CliError::config("trials must be at least 1"));
    }

    let files =
        ["metrics_summary.json".to_string(), "scores.csv".to_string(), "per_surface.csv".to_string()];
    prepare_outputs(&args.out, &files, args.force)?;

    let spec = PopulationSpec {
        surfaces: config.surfaces,
        trials: config.trials,
        width: config.surface.width,
        height: config.surface.height,
        correlation_length: config.surface.correlation_length,
        slope_scale: config.surface.slope_scale,
        noise_rel: config.noise_rel,
        sensor: config.sensor,
        quantizer: config.quantizer.clone(),
        seed: config.seed,
        degradation: None,
    };
    info!("building {}x{} evaluation batch", config.surfaces, config.trials);
    let batch = spec.build_batch().map_err(|e| CliError::runtime(e.to_string()))?;

    let mut robustness = Vec::with_capacity(batch.surfaces());
    let mut uniformity_rows = Vec::with_capacity(batch.surfaces());
    for k in 0..batch.surfaces() {
        robustness.push(pufmetrics::robustness(&batch, k).map_err(|e| CliError::runtime(e.to_string()))?);
        let mut u = 0.0;
        for t in 0..batch.trials() {
            u += pufmetrics::uniformity(&batch, k, t).map_err(|e| CliError::runtime(e.to_string()))?;
        }
        uniformity_rows.push(u / batch.trials() as f64);
    }
    let mut uniqueness_per_trial = Vec::with_capacity(batch.trials());
    for t in 0..batch.trials() {
        uniqueness_per_trial
            .push(pufmetrics::uniqueness(&batch, t).map_err(|e| CliError::runtime(e.to_string()))?);
    }
    let uniqueness_mean = pufmetrics::uniqueness_trial_average(&batch)
        .map_err(|e| CliError::runtime(e.to_string()))?;
    let (genuine, impostor) =
        spec.score_sets(&batch).map_err(|e| CliError::runtime(e.to_string()))?;
    let report = pufmetrics::eer(&genuine, &impostor, ScorePolarity::Distance)
        .map_err(|e| CliError::runtime(e.to_string()))?;

    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let summary = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "seed": config.seed,
        "surfaces": config.surfaces,
        "trials": config.trials,
        "noise_rel": config.noise_rel,
        "response_bits": batch.bits(),
        "robustness": {
            "mean": mean(&robustness),
            "min": robustness.iter().cloned().fold(f64::INFINITY, f64::min),
        },
        "uniqueness": {
            "per_trial": uniqueness_per_trial,
            "mean_over_trials": uniqueness_mean,
        },
        "uniformity": { "mean": mean(&uniformity_rows) },
        "eer": report.summary_json(),
    });
    write_file(&args.out.join("metrics_summary.json"), &pretty_json(&summary))?;

    let mut scores_csv = Vec::new();
    report.write_csv(&mut scores_csv).map_err(|e| CliError::runtime(e.to_string()))?;
    write_file(&args.out.join("scores.csv"), &scores_csv)?;

    let mut per_surface = String::from("surface,robustness,uniformity\n");
    for k in 0..batch.surfaces() {
        per_surface.push_str(&format!("{k},{},{}\n", robustness[k], uniformity_rows[k]));
    }
    write_file(&args.out.join("per_surface.csv"), per_surface.as_bytes())?;
    Ok(())
}

pub fn run_attack(args: &RunArgs) -> Result<(), CliError> {
    let mut config: AttackConfig = load_config(&args.config)?;
    check_schema(config.schema_version)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if config.seeds == 0 {
        return Err(CliError::config("seeds must be at least 1"));
    }
    let attacks: Vec<AttackKind> = if config.attacks.is_empty() {
        AttackKind::ALL.to_vec()
    } else {
        config
            .attacks
            .iter()
            .map(|name| AttackKind::parse(name).map_err(|e| CliError::config(e.to_string())))
            .collect::<Result<_, _>>()?
    };

    let files = ["attack_matrix.csv".to_string(), "attack_summary.json".to_string()];
    prepare_outputs(&args.out, &files, args.force)?;

    let mut jobs = Vec::new();
    for kind in &attacks {
        for mitigated in [false, true] {
            for s in 0..config.seeds {
                jobs.push((*kind, mitigated, config.seed.wrapping_add(s as u64)));
            }
        }
    }
    info!("running {} attack cells", jobs.len());
    let cells: Vec<MatrixCell> = jobs
        .par_iter()
        .map(|(kind, mitigated, seed)| {
            run_attack_cell(*kind, *mitigated, *seed).map_err(|e| CliError::runtime(e.to_string()))
        })
        .collect::<Result<_, _>>()?;

    let mut csv = String::from("attack,mitigation,mitigated,seed,success,queries_used,notes\n");
    for cell in &cells {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            cell.attack,
            cell.mitigation,
            cell.mitigated,
            cell.seed,
            cell.success,
            cell.queries_used,
            cell.notes.replace(',', ";"),
        ));
    }
    write_file(&args.out.join("attack_matrix.csv"), csv.as_bytes())?;

    let rows: Vec<serde_json::Value> = attacks
        .iter()
        .map(|kind| {
            let rate = |mitigated: bool| {
                let relevant: Vec<&MatrixCell> = cells
                    .iter()
                    .filter(|c| c.attack == kind.name() && c.mitigated == mitigated)
                    .collect();
                relevant.iter().filter(|c| c.success).count() as f64 / relevant.len() as f64
            };
            serde_json::json!({
                "attack": kind.name(),
                "mitigation": kind.mitigation_name(),
                "success_rate_unmitigated": rate(false),
                "success_rate_mitigated": rate(true),
            })
        })
        .collect();
    let summary = serde_json::json!({
        "schema_version": SCHEMA_VERSION,
        "seed": config.seed,
        "seeds": config.seeds,
        "rows": rows,
    });
    write_file(&args.out.join("attack_summary.json"), &pretty_json(&summary))?;
    Ok(())
}

pub fn run_scenario(args: &RunArgs) -> Result<(), CliError> {
    let mut config: ScenarioConfig = load_config(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    config.validate().map_err(|e| CliError::config(e.to_string()))?;

    let files = [
        "scenario_report.json".to_string(),
        "events.csv".to_string(),
        "ledger.json".to_string(),
    ];
    prepare_outputs(&args.out, &files, args.force)?;

    info!("running {:?} scenario with {} products", config.archetype, config.products.len());
    let report = papertrust_core::chainnet::run_scenario(&config)
        .map_err(|e| CliError::runtime(e.to_string()))?;

    write_file(&args.out.join("scenario_report.json"), &pretty_json(&report.to_json()))?;
    write_file(&args.out.join("events.csv"), report.events_csv().as_bytes())?;
    write_file(&args.out.join("ledger.json"), &pretty_json(&report.ledger_json()))?;
    Ok(())
}
