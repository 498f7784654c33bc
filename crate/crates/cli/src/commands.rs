//! `evaluate`, `optimize` and `sweep`.

use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::mpsc;

use rayon::prelude::*;
use sha2::{Digest, Sha256};

use opoherald::field::ModeFunction;
use opoherald::herald::{HeraldModel, HeraldResult, HeraldScenario};
use opoherald::opo::{squeezing_eigenmode, Quadrature};

use crate::config::{GridPoint, PumpKind, ScenarioFile};
use crate::table::{num, read_rows, write_table, Meta};
use crate::CliError;

/// Settings shared by all subcommands after flags and config are merged.
#[derive(Debug, Clone)]
pub struct Context {
    pub out: PathBuf,
    pub seed: u64,
    pub grid_m: usize,
    pub config_hash: String,
}

impl Context {
    fn meta(&self, table: &'static str, extra: Vec<(String, String)>) -> Meta {
        Meta {
            table,
            config_hash: self.config_hash.clone(),
            seed: self.seed,
            grid_m: self.grid_m,
            extra,
        }
    }
}

/// Built-in candidate mode by name.
pub fn candidate(model: &HeraldModel, name: &str) -> Result<ModeFunction, CliError> {
    let sc = model.scenario();
    let mode = match name {
        "th" => sc.candidate_th()?,
        "cah" => sc.candidate_cah()?,
        "comb" => sc.candidate_spike_comb()?,
        "eigenmode" => squeezing_eigenmode(model.field(), Quadrature::P)?.mode,
        "window" => model
            .candidates()?
            .into_iter()
            .find(|(n, _)| *n == "window")
            .map(|(_, m)| m)
            .ok_or_else(|| CliError::Config("run.mode: \"window\" is only defined for CW pumps".into()))?,
        other => return Err(CliError::Config(format!("run.mode: unknown candidate \"{other}\""))),
    };
    Ok(mode)
}

/// Reads `(t_seconds, amplitude)` pairs and interpolates them linearly onto
/// the scenario grid, zero outside the tabulated range.
pub fn load_mode_file(path: &Path, scenario: &HeraldScenario) -> Result<ModeFunction, CliError> {
    let file =
        std::fs::File::open(path).map_err(|e| CliError::Config(format!("run.mode_file {}: {e}", path.display())))?;
    let mut samples: Vec<(f64, f64)> = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| CliError::Config(format!("run.mode_file: {e}")))?;
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split([',', ' ', '\t']).filter(|s| !s.is_empty());
        let (Some(a), Some(b)) = (parts.next(), parts.next()) else {
            return Err(CliError::Config(format!("run.mode_file: malformed line \"{line}\"")));
        };
        match (a.parse::<f64>(), b.parse::<f64>()) {
            (Ok(t), Ok(h)) => samples.push((t, h)),
            // Column header.
            _ if samples.is_empty() => continue,
            _ => return Err(CliError::Config(format!("run.mode_file: malformed line \"{line}\""))),
        }
    }
    if samples.len() < 2 {
        return Err(CliError::Config("run.mode_file: need at least two samples".into()));
    }
    samples.sort_by(|x, y| x.0.total_cmp(&y.0));
    let amps: Vec<f64> = scenario
        .sim
        .times()
        .map(|t| {
            let k = samples.partition_point(|s| s.0 <= t);
            if k == 0 || k == samples.len() {
                if k == samples.len() && (t - samples[k - 1].0).abs() < 1e-6 * scenario.sim.dt() {
                    return samples[k - 1].1;
                }
                return 0.0;
            }
            let (t0, h0) = samples[k - 1];
            let (t1, h1) = samples[k];
            h0 + (h1 - h0) * (t - t0) / (t1 - t0)
        })
        .collect();
    Ok(ModeFunction::from_amplitudes(scenario.sim, &amps)?)
}

fn herald_tables(
    ctx: &Context,
    cfg: &ScenarioFile,
    label: &str,
    result: &HeraldResult,
    model: &HeraldModel,
) -> Result<(), CliError> {
    let dt = model.scenario().sim.dt();
    let t_eff = model.trigger_count() as f64 * dt;
    let extra = vec![
        ("mode".to_string(), label.to_string()),
        ("tau[s]".to_string(), num(cfg.opo.tau)),
        ("T_effective[s]".to_string(), num(t_eff)),
    ];
    let rows: Vec<Vec<String>> = result
        .per_trigger
        .iter()
        .map(|o| vec![num(o.time), num(o.probability), o.wigner.map_or(String::new(), num)])
        .collect();
    write_table(
        &ctx.out.join("herald.csv"),
        &ctx.meta("herald", extra.clone()),
        &["t[s]", "P_i[1]", "W_i[1]"],
        &rows,
    )?;
    let summary = vec![vec![
        label.to_string(),
        num(result.wigner),
        num(result.probability),
        num(result.window_start),
        num(t_eff),
        result.iterations.to_string(),
        result.high_flux().to_string(),
    ]];
    write_table(
        &ctx.out.join("herald_summary.csv"),
        &ctx.meta("herald_summary", extra),
        &[
            "mode",
            "W[1]",
            "P[1]",
            "window_start[s]",
            "T_effective[s]",
            "iterations",
            "high_flux",
        ],
        &summary,
    )?;
    println!(
        "{label}: W(0,0) = {:.6}, P = {:.4e}, window start = {:.3} tau, {} trigger modes",
        result.wigner,
        result.probability,
        result.window_start / cfg.opo.tau,
        model.trigger_count()
    );
    if result.high_flux() {
        eprintln!(
            "warning: P = {:.3e} exceeds 0.01; double detections are not negligible",
            result.probability
        );
    }
    Ok(())
}

pub fn evaluate(cfg: &ScenarioFile, ctx: &Context) -> Result<(), CliError> {
    let scenario = cfg.scenario(&cfg.base_point(), ctx.grid_m)?;
    let model = scenario.prepare()?;
    let (label, mode) = match &cfg.run.mode_file {
        Some(path) => (path.display().to_string(), load_mode_file(path, &scenario)?),
        None => (cfg.run.mode.clone(), candidate(&model, &cfg.run.mode)?),
    };
    let result = model.evaluate(&mode)?;
    herald_tables(ctx, cfg, &label, &result, &model)
}

pub fn optimize(cfg: &ScenarioFile, ctx: &Context) -> Result<(), CliError> {
    let scenario = cfg.scenario(&cfg.base_point(), ctx.grid_m)?;
    let model = scenario.prepare()?;
    let result = model.optimize(&cfg.options(ctx.seed))?;
    herald_tables(ctx, cfg, "optimized", &result, &model)?;
    let rows: Vec<Vec<String>> = scenario
        .sim
        .times()
        .zip(result.mode.amplitudes())
        .map(|(t, h)| vec![num(t), num(h)])
        .collect();
    write_table(
        &ctx.out.join("mode.csv"),
        &ctx.meta("mode", vec![("tau[s]".into(), num(cfg.opo.tau))]),
        &["t[s]", "h[s^-1/2]"],
        &rows,
    )
}

const SWEEP_COLUMNS: [&str; 11] = [
    "T[s]",
    "T_effective[s]",
    "T_p[s]",
    "s[1]",
    "z[1]",
    "single_pass",
    "W[1]",
    "P[1]",
    "offset[s]",
    "iterations",
    "mode",
];

fn sweep_point(cfg: &ScenarioFile, ctx: &Context, point: &GridPoint) -> Result<Vec<String>, CliError> {
    let scenario = cfg.scenario(point, ctx.grid_m)?;
    let model = scenario.prepare()?;
    let mode_name = cfg.sweep.mode.clone().unwrap_or_else(|| "optimize".into());
    let result = if mode_name == "optimize" {
        model.optimize(&cfg.options(ctx.seed))?
    } else {
        model.evaluate(&candidate(&model, &mode_name)?)?
    };
    let z = match cfg.pump.kind {
        PumpKind::Cw => match &scenario.pump {
            opoherald::opo::PumpProfile::ConstantCw { z } => num(*z),
            _ => String::new(),
        },
        PumpKind::Pulsed => String::new(),
    };
    let (tp, s) = match cfg.pump.kind {
        PumpKind::Pulsed => (num(point.tp), num(point.s)),
        PumpKind::Cw => (String::new(), String::new()),
    };
    Ok(vec![
        num(point.duration),
        num(model.trigger_count() as f64 * scenario.sim.dt()),
        tp,
        s,
        z,
        point.single_pass.to_string(),
        num(result.wigner),
        num(result.probability),
        num(result.window_start),
        result.iterations.to_string(),
        mode_name,
    ])
}

/// Key identifying one grid point of one configuration. The sweep axes are
/// excluded from the hash so that extending a sweep reuses finished points.
fn point_key(cfg: &ScenarioFile, ctx: &Context, point: &GridPoint) -> String {
    let mut base = cfg.clone();
    base.sweep.duration.clear();
    base.sweep.s.clear();
    base.sweep.tp.clear();
    base.sweep.z.clear();
    base.sweep.single_pass.clear();
    let text = format!("{}|{}|M={}|seed={}", base.hash(), point.key(), ctx.grid_m, ctx.seed);
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub fn sweep(cfg: &ScenarioFile, ctx: &Context) -> Result<(), CliError> {
    let grid = cfg.grid();
    let keys: Vec<String> = grid.iter().map(|p| point_key(cfg, ctx, p)).collect();
    let partial = ctx.out.join("sweep.partial.csv");
    let mut done: BTreeMap<String, Vec<String>> = BTreeMap::new();
    if partial.exists() {
        for row in read_rows(&partial)? {
            if row.len() == SWEEP_COLUMNS.len() + 1 {
                done.insert(row[0].clone(), row[1..].to_vec());
            }
        }
    }
    let pending: Vec<(usize, &GridPoint)> = grid
        .iter()
        .enumerate()
        .filter(|(i, _)| !done.contains_key(&keys[*i]))
        .collect();
    if pending.len() < grid.len() {
        eprintln!(
            "resuming sweep: {} of {} points already done",
            grid.len() - pending.len(),
            grid.len()
        );
    }
    if !partial.exists() {
        let mut columns = vec!["key"];
        columns.extend(SWEEP_COLUMNS);
        write_table(&partial, &ctx.meta("sweep_partial", vec![]), &columns, &[])?;
    }
    let (tx, rx) = mpsc::channel::<(usize, Vec<String>)>();
    let writer = {
        let partial = partial.clone();
        let keys = keys.clone();
        std::thread::spawn(move || -> Result<Vec<(usize, Vec<String>)>, CliError> {
            let mut file = OpenOptions::new()
                .append(true)
                .open(&partial)
                .map_err(|e| CliError::Io(format!("{}: {e}", partial.display())))?;
            let mut got = Vec::new();
            for (i, row) in rx {
                let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
                let mut record = vec![keys[i].clone()];
                record.extend(row.iter().cloned());
                w.write_record(&record).map_err(|e| CliError::Io(e.to_string()))?;
                let bytes = w.into_inner().map_err(|e| CliError::Io(e.to_string()))?;
                file.write_all(&bytes).map_err(|e| CliError::Io(e.to_string()))?;
                file.flush().map_err(|e| CliError::Io(e.to_string()))?;
                got.push((i, row));
            }
            Ok(got)
        })
    };
    let outcome: Result<(), CliError> = pending.par_iter().try_for_each_with(tx, |tx, (i, point)| {
        let row = sweep_point(cfg, ctx, point)?;
        eprintln!("point {}/{}: {}", i + 1, grid.len(), point.key());
        tx.send((*i, row)).map_err(|e| CliError::Io(e.to_string()))
    });
    let fresh = writer
        .join()
        .map_err(|_| CliError::Io("sweep writer panicked".into()))??;
    outcome?;
    for (i, row) in fresh {
        done.insert(keys[i].clone(), row);
    }
    let rows: Vec<Vec<String>> = keys.iter().map(|k| done[k].clone()).collect();
    write_table(
        &ctx.out.join("sweep.csv"),
        &ctx.meta("sweep", vec![("tau[s]".into(), num(cfg.opo.tau))]),
        &SWEEP_COLUMNS,
        &rows,
    )?;
    println!(
        "sweep: {} points written to {}",
        rows.len(),
        ctx.out.join("sweep.csv").display()
    );
    Ok(())
}
