//! Experiment front end: config loading, overrides, and the commands behind
//! the `qmarl` binary.
//!
//! Configs are TOML files whose tables mirror [`ExperimentConfig`]; every
//! key is optional and unknown keys are rejected. `--set a.b.c=value`
//! overrides are applied to the parsed tree before validation, with `value`
//! read as a TOML literal (bare words fall back to strings).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use qmarl_core::channel::McsTable;
use qmarl_core::config::ExperimentConfig;
use qmarl_core::gradcheck::{verify_gradients, GradientReport};
use qmarl_core::trainer::{
    baseline_random_walk, infer, param_counts, train, Checkpoint, EvalOutput, LearnerKind, Metrics,
    ParamCounts, Summary, TrainOutput,
};
use qmarl_core::{Error, Result};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Environment variable that overrides the output directory from the
/// config file (but not `--out`).
pub const OUT_DIR_ENV: &str = "QMARL_OUT_DIR";

/// Reads `path` (or starts from defaults), applies overrides, validates.
pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<ExperimentConfig> {
    let mut tree = match path {
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::config(p.display().to_string(), format!("cannot read: {e}")))?;
            text.parse::<toml::Table>()
                .map_err(|e| Error::config(p.display().to_string(), e.to_string()))?
        }
        None => toml::Table::new(),
    };
    let defaults = toml::Table::try_from(ExperimentConfig::default())
        .map_err(|e| Error::config("<defaults>", e.to_string()))?;
    for o in overrides {
        apply_override(&mut tree, &defaults, o)?;
    }
    let cfg: ExperimentConfig =
        toml::Value::Table(tree)
            .try_into()
            .map_err(|e: toml::de::Error| {
                Error::config(
                    path.map_or("<overrides>".into(), |p| p.display().to_string()),
                    e.message().to_string(),
                )
            })?;
    cfg.validate()?;
    Ok(cfg)
}

fn parse_literal(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

/// Sets `key=value` on `tree`, refusing paths that are not config fields.
pub fn apply_override(tree: &mut toml::Table, defaults: &toml::Table, spec: &str) -> Result<()> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| Error::config(spec, "override must look like key=value"))?;
    let key = key.trim();
    let parts: Vec<&str> = key.split('.').collect();
    let mut probe = defaults;
    for (i, part) in parts.iter().enumerate() {
        match probe.get(*part) {
            Some(toml::Value::Table(t)) if i + 1 < parts.len() => probe = t,
            Some(v) if i + 1 == parts.len() && !v.is_table() => {}
            _ => return Err(Error::config(key, "no such config key")),
        }
    }
    let mut node = tree;
    for part in &parts[..parts.len() - 1] {
        let entry = node
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        node = entry
            .as_table_mut()
            .ok_or_else(|| Error::config(key, format!("`{part}` is not a table")))?;
    }
    let mut value = parse_literal(raw.trim());
    // integers given for float fields
    if let (toml::Value::Integer(i), Some(toml::Value::Float(_))) =
        (&value, probe.get(parts[parts.len() - 1]))
    {
        value = toml::Value::Float(*i as f64);
    }
    node.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

/// Fully resolved config as TOML.
pub fn render_config(cfg: &ExperimentConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| Error::config("<config>", e.to_string()))
}

/// SHA-256 of the rendered config.
pub fn config_hash(cfg: &ExperimentConfig) -> Result<String> {
    Ok(hex::encode(Sha256::digest(render_config(cfg)?.as_bytes())))
}

pub fn stamp(cfg: &ExperimentConfig) -> Result<String> {
    Ok(format!(
        "config_sha256={} seed={}",
        config_hash(cfg)?,
        cfg.seed
    ))
}

/// Writes through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::Usage(format!("{} has no file name", path.display())))?
        .to_string_lossy();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    fs::rename(&tmp, path)?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// `--out`, then the environment variable, then `output.dir`.
pub fn resolve_out_dir(cli: Option<&Path>, cfg: &ExperimentConfig) -> PathBuf {
    if let Some(p) = cli {
        return p.to_path_buf();
    }
    match std::env::var_os(OUT_DIR_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(&cfg.output.dir),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunSummary {
    pub command: String,
    pub seed: u64,
    pub config_sha256: String,
    #[serde(flatten)]
    pub summary: Summary,
}

fn write_metrics(
    dir: &Path,
    cfg: &ExperimentConfig,
    command: &str,
    metrics: &Metrics,
    fraction: f64,
) -> Result<RunSummary> {
    let mut buf = Vec::new();
    metrics.write_csv(&mut buf, Some(&stamp(cfg)?))?;
    write_atomic(&dir.join("metrics.csv"), &buf)?;
    let s = RunSummary {
        command: command.into(),
        seed: cfg.seed,
        config_sha256: config_hash(cfg)?,
        summary: metrics.summary(fraction),
    };
    write_json(&dir.join("summary.json"), &s)?;
    write_atomic(&dir.join("config.toml"), render_config(cfg)?.as_bytes())?;
    Ok(s)
}

fn write_trace(path: &Path, trace: &qmarl_core::env::EpisodeTrace, num_uavs: usize) -> Result<()> {
    let mut buf = Vec::new();
    trace.write_csv(&mut buf, num_uavs)?;
    write_atomic(path, &buf)
}

/// Trains one seed into `dir`: metrics, summary, periodic and final
/// checkpoints, and optionally the last epoch's trace.
pub fn run_train(
    cfg: &ExperimentConfig,
    kind: LearnerKind,
    dir: &Path,
) -> Result<(TrainOutput, RunSummary)> {
    let out = train(cfg, kind, |ck: &Checkpoint| {
        write_json(&dir.join(format!("checkpoint-{:06}.json", ck.epoch)), ck)?;
        write_json(&dir.join("checkpoint.json"), ck)
    })?;
    let command = match kind {
        LearnerKind::Quantum => "train",
        LearnerKind::Classical => "baseline-classical",
    };
    let s = write_metrics(dir, cfg, command, &out.metrics, cfg.train.summary_fraction)?;
    if cfg.output.traces {
        write_trace(
            &dir.join("trace.csv"),
            &out.last_trace,
            cfg.scenario.num_uavs,
        )?;
    }
    Ok((out, s))
}

fn write_eval(
    dir: &Path,
    cfg: &ExperimentConfig,
    command: &str,
    out: &EvalOutput,
) -> Result<RunSummary> {
    let s = write_metrics(dir, cfg, command, &out.metrics, 1.0)?;
    for (i, t) in out.traces.iter().enumerate() {
        write_trace(
            &dir.join(format!("trace-{i:04}.csv")),
            t,
            cfg.scenario.num_uavs,
        )?;
    }
    Ok(s)
}

pub fn run_infer(
    cfg: &ExperimentConfig,
    checkpoint: &Path,
    episodes: usize,
    dir: &Path,
) -> Result<RunSummary> {
    let text = fs::read_to_string(checkpoint)
        .map_err(|e| Error::Load(format!("{}: {e}", checkpoint.display())))?;
    let ck: Checkpoint = serde_json::from_str(&text)
        .map_err(|e| Error::Load(format!("{}: {e}", checkpoint.display())))?;
    let out = infer(cfg, ck, episodes)?;
    write_eval(dir, cfg, "infer", &out)
}

pub fn run_random(cfg: &ExperimentConfig, episodes: usize, dir: &Path) -> Result<RunSummary> {
    let out = baseline_random_walk(cfg, episodes)?;
    write_eval(dir, cfg, "baseline-random", &out)
}

/// Mean and spread of per-seed summaries.
#[derive(Debug, Clone, Serialize)]
pub struct MergedSummary {
    pub command: String,
    pub seeds: Vec<u64>,
    pub reward_mean: f64,
    pub reward_std: f64,
    pub support_rate_mean: f64,
    pub qos_total_mean: f64,
    pub runs: Vec<RunSummary>,
}

pub fn merge_summaries(command: &str, runs: Vec<RunSummary>) -> MergedSummary {
    let n = runs.len().max(1) as f64;
    let rewards: Vec<f64> = runs.iter().map(|r| r.summary.reward_mean).collect();
    let reward_mean = rewards.iter().sum::<f64>() / n;
    let reward_std = (rewards
        .iter()
        .map(|r| (r - reward_mean).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    MergedSummary {
        command: command.into(),
        seeds: runs.iter().map(|r| r.seed).collect(),
        reward_mean,
        reward_std,
        support_rate_mean: runs
            .iter()
            .map(|r| r.summary.support_rate_mean)
            .sum::<f64>()
            / n,
        qos_total_mean: runs.iter().map(|r| r.summary.qos_total_mean).sum::<f64>() / n,
        runs,
    }
}

pub fn write_merged(dir: &Path, merged: &MergedSummary) -> Result<()> {
    write_json(&dir.join("summary.json"), merged)
}

pub fn mcs_table_csv() -> Result<String> {
    let mut buf = Vec::new();
    McsTable::default().write_csv(&mut buf)?;
    String::from_utf8(buf).map_err(|e| Error::Data(e.to_string()))
}

#[derive(Debug, Clone, Serialize)]
pub struct GradientOutput {
    pub report: GradientReport,
    pub params: ParamCounts,
}

pub fn run_verify_gradients(cfg: &ExperimentConfig) -> Result<GradientOutput> {
    Ok(GradientOutput {
        report: verify_gradients(cfg.seed)?,
        params: param_counts(cfg)?,
    })
}

/// One metrics series read back from CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub source: String,
    pub epoch: Vec<u64>,
    pub reward: Vec<f64>,
    pub support_rate: Vec<f64>,
    pub qos_total: Vec<f64>,
}

#[derive(serde::Deserialize)]
struct Row {
    epoch: u64,
    reward: f64,
    support_rate: f64,
    qos_total: f64,
}

pub fn read_metrics(path: &Path) -> Result<Series> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
    let mut s = Series {
        source: path.display().to_string(),
        epoch: vec![],
        reward: vec![],
        support_rate: vec![],
        qos_total: vec![],
    };
    for row in rdr.deserialize::<Row>() {
        let r = row.map_err(|e| Error::config(path.display().to_string(), e.to_string()))?;
        s.epoch.push(r.epoch);
        s.reward.push(r.reward);
        s.support_rate.push(r.support_rate);
        s.qos_total.push(r.qos_total);
    }
    if s.epoch.is_empty() {
        return Err(Error::config(path.display().to_string(), "no metrics rows"));
    }
    Ok(s)
}

/// Trailing moving average: entry `i` is the mean of the last
/// `min(window, i + 1)` values.
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    let w = window.max(1);
    (0..values.len())
        .map(|i| {
            let win = &values[(i + 1).saturating_sub(w)..=i];
            // offsets from the first entry keep constant runs exact
            let base = win[0];
            base + win.iter().map(|v| v - base).sum::<f64>() / win.len() as f64
        })
        .collect()
}

/// Smoothed reward, support and QoS series for every input file, as CSV.
pub fn export_plot_data(files: &[PathBuf], window: usize) -> Result<String> {
    if files.is_empty() {
        return Err(Error::config("files", "no metrics files given"));
    }
    if window == 0 {
        return Err(Error::config("window", "must be at least 1"));
    }
    let mut out = format!("# window={window}\nsource,epoch,reward,support_rate,qos_total\n");
    for f in files {
        let s = read_metrics(f)?;
        let (r, sr, q) = (
            moving_average(&s.reward, window),
            moving_average(&s.support_rate, window),
            moving_average(&s.qos_total, window),
        );
        for i in 0..s.epoch.len() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                s.source, s.epoch[i], r[i], sr[i], q[i]
            ));
        }
    }
    Ok(out)
}

/// Exit status for an error: 2 for configuration problems, 1 otherwise.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config { .. } => 2,
        _ => 1,
    }
}
