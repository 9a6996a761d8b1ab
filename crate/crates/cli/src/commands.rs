//! Command bodies. Each writes into a fresh [`RunDir`] and finishes with a
//! manifest listing every artifact.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use isli_core::estimator::{FitOptions, RoleDensities};
use isli_core::rng::{derive_seed, keyed_rng, stream};
use isli_core::EnvConfig;
use isli_policy::checkpoint;
use isli_policy::eval::{self, Actor, EpisodeRecord, IdentifiedEpisode};
use isli_policy::ppo::{self, UpdateMetrics, METRICS_HEADER};
use isli_policy::Policy;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::run::{unix_now, Inputs, RunDir, RunManifest, CONFIG_FILE};

pub const COMMANDS: [&str; 5] = ["train", "sweep", "fit-kde", "identify", "export-trace"];

/// Run `command` into `out` and write its manifest.
pub fn execute(
    command: &str,
    config: &ExperimentConfig,
    inputs: &Inputs,
    out: &Path,
    overwrite: bool,
) -> Result<RunManifest> {
    config.validate()?;
    if !COMMANDS.contains(&command) {
        bail!("unknown command {command:?}");
    }
    let inputs = Inputs {
        checkpoint: inputs.checkpoint.as_deref().map(absolute).transpose()?,
        densities: inputs.densities.as_deref().map(absolute).transpose()?,
        ..inputs.clone()
    };
    let started = unix_now();
    let run = RunDir::create(out, overwrite)?;
    fs::write(run.path(CONFIG_FILE), config.to_toml()?)?;
    let result = match command {
        "train" => train(config, &run),
        "sweep" => match inputs.mode.as_deref().unwrap_or("eval") {
            "eval" => sweep_eval(config, &inputs, &run),
            "train" => sweep_train(config, &run),
            m => Err(anyhow::anyhow!(
                "unknown sweep mode {m:?}; expected eval or train"
            )),
        },
        "fit-kde" => fit_kde(config, &inputs, &run),
        "identify" => identify(config, &inputs, &run),
        _ => export_trace(config, &inputs, &run),
    };
    // Partial outputs still get a manifest.
    let manifest = run.write_manifest(command, config, &inputs, started)?;
    result.map(|_| manifest)
}

/// Re-execute a manifest into a new directory.
pub fn rerun(manifest: &Path, out: &Path, overwrite: bool) -> Result<RunManifest> {
    let m = RunManifest::load(manifest)?;
    execute(&m.command, &m.config, &m.inputs, out, overwrite)
}

fn absolute(p: &Path) -> Result<PathBuf> {
    fs::canonicalize(p).with_context(|| format!("input {} not found", p.display()))
}

fn load_policy(inputs: &Inputs) -> Result<Option<Policy>> {
    inputs
        .checkpoint
        .as_ref()
        .map(|p| {
            checkpoint::load(p)
                .map(|(policy, _)| policy)
                .with_context(|| format!("loading checkpoint {}", p.display()))
        })
        .transpose()
}

fn actor<'a>(policy: &'a Option<Policy>, config: &ExperimentConfig) -> Actor<'a> {
    match policy {
        Some(p) => Actor::Policy {
            policy: p,
            greedy: config.eval.greedy,
        },
        None => Actor::Random,
    }
}

fn fmt_opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

// ---------------------------------------------------------------- train

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub seed: u64,
    pub updates: u64,
    pub global_step: u64,
    /// Mean of the last (up to) ten non-empty per-update mean returns.
    pub final_mean_return: Option<f64>,
    pub error: Option<String>,
}

/// Average of the trailing `window` recorded mean returns.
pub fn trailing_return(metrics: &[UpdateMetrics], window: usize) -> Option<f64> {
    let recent: Vec<f64> = metrics
        .iter()
        .rev()
        .filter_map(|m| m.mean_return)
        .take(window)
        .collect();
    (!recent.is_empty()).then(|| recent.iter().sum::<f64>() / recent.len() as f64)
}

/// Train one seed into `dir`: `metrics.csv`, `timing.csv`, periodic
/// checkpoints and `final.ckpt`.
pub fn train_seed(config: &ExperimentConfig, seed: u64, dir: &Path) -> Result<TrainSummary> {
    fs::create_dir_all(dir)?;
    let mut ppo_config = config.ppo.clone();
    ppo_config.seed = seed;
    let policy = Policy::new(config.policy.clone(), &mut keyed_rng(seed, &[stream::INIT]))?;
    let mut metrics_csv = csv::Writer::from_path(dir.join("metrics.csv"))?;
    metrics_csv.write_record(METRICS_HEADER)?;
    let mut timing = BufWriter::new(File::create(dir.join("timing.csv"))?);
    writeln!(timing, "update,wall_time_s")?;
    let ckpt_dir = dir.join("checkpoints");
    let started = std::time::Instant::now();
    let every = config.train.checkpoint_every;
    let meta = |update: u64, step: u64| {
        let mut m = serde_json::Map::new();
        m.insert("seed".into(), seed.into());
        m.insert("update".into(), update.into());
        m.insert("global_step".into(), step.into());
        m
    };

    let outcome = ppo::train(&ppo_config, &config.env, policy, |m, p| {
        let io = |e: std::io::Error| isli_policy::PolicyError::Io(e);
        metrics_csv.write_record(m.csv_record())?;
        metrics_csv.flush().map_err(io)?;
        writeln!(timing, "{},{}", m.update, started.elapsed().as_secs_f64()).map_err(io)?;
        if every > 0 && m.update % every == 0 {
            fs::create_dir_all(&ckpt_dir).map_err(io)?;
            let path = ckpt_dir.join(format!("update-{:06}.ckpt", m.update));
            checkpoint::save(p, meta(m.update, m.global_step), path)?;
        }
        Ok(())
    })?;
    timing.flush()?;
    let last = outcome.metrics.last();
    let (updates, step) = last.map_or((0, 0), |m| (m.update, m.global_step));
    checkpoint::save(&outcome.policy, meta(updates, step), dir.join("final.ckpt"))?;
    Ok(TrainSummary {
        seed,
        updates,
        global_step: step,
        final_mean_return: trailing_return(&outcome.metrics, 10),
        error: outcome.error.map(|e| e.to_string()),
    })
}

fn write_train_summary(path: &Path, rows: &[(Option<usize>, TrainSummary)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "cell",
        "seed",
        "updates",
        "global_step",
        "final_mean_return",
        "error",
    ])?;
    for (cell, s) in rows {
        w.write_record([
            cell.map(|c| c.to_string()).unwrap_or_default(),
            s.seed.to_string(),
            s.updates.to_string(),
            s.global_step.to_string(),
            fmt_opt(s.final_mean_return),
            s.error.clone().unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

fn train(config: &ExperimentConfig, run: &RunDir) -> Result<()> {
    let mut rows = Vec::new();
    for &seed in &config.seeds {
        let summary = train_seed(config, seed, &run.subdir(&format!("seed-{seed}"))?)?;
        rows.push((None, summary));
    }
    write_train_summary(&run.path("summary.csv"), &rows)?;
    if let Some((_, s)) = rows.iter().find(|(_, s)| s.error.is_some()) {
        bail!(
            "training seed {} stopped early: {}",
            s.seed,
            s.error.as_deref().unwrap_or("")
        );
    }
    Ok(())
}

/// Table-style grid over clip, entropy coefficient, model width and depth.
fn sweep_train(config: &ExperimentConfig, run: &RunDir) -> Result<()> {
    let s = &config.sweep;
    let mut cells = Vec::new();
    for &clip in &s.clip {
        for &ent in &s.ent_coef {
            for &dim in &s.model_dim {
                for &layers in &s.layers {
                    cells.push((clip, ent, dim, layers));
                }
            }
        }
    }
    let mut grid = csv::Writer::from_path(run.path("grid.csv"))?;
    grid.write_record(["cell", "clip", "ent_coef", "model_dim", "layers"])?;
    let mut rows = Vec::new();
    for (i, &(clip, ent, dim, layers)) in cells.iter().enumerate() {
        grid.write_record([
            i.to_string(),
            clip.to_string(),
            ent.to_string(),
            dim.to_string(),
            layers.to_string(),
        ])?;
        let mut c = config.clone();
        c.ppo.clip = clip;
        c.ppo.ent_coef = ent;
        c.policy.model_dim = dim;
        c.policy.layers = layers;
        c.validate()?;
        for &seed in &config.seeds {
            let dir = run.subdir(&format!("cell-{i:03}/seed-{seed}"))?;
            rows.push((Some(i), train_seed(&c, seed, &dir)?));
        }
    }
    grid.flush()?;
    write_train_summary(&run.path("summary.csv"), &rows)
}

// ---------------------------------------------------------------- evaluation

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub master_seed: u64,
    #[serde(flatten)]
    pub result: IdentifiedEpisode,
}

/// Held-out episodes for every master seed, identified when densities are given.
pub fn evaluate(
    config: &ExperimentConfig,
    env: &EnvConfig,
    policy: &Option<Policy>,
    densities: Option<&RoleDensities>,
) -> Result<(Vec<EpisodeRecord>, Vec<Option<EvalRecord>>)> {
    let actor = actor(policy, config);
    let mut episodes = Vec::new();
    let mut identified = Vec::new();
    for &master in &config.seeds {
        for e in 0..config.eval.episodes {
            let seed = eval::eval_episode_seed(master, e as u64);
            let rec = eval::run_episode(actor, env, seed, seed, false)?;
            identified.push(
                densities
                    .map(|d| {
                        eval::identify_episode(e, &rec, env.v_max(), d, config.eval.update_every)
                    })
                    .transpose()?
                    .map(|result| EvalRecord {
                        master_seed: master,
                        result,
                    }),
            );
            episodes.push(rec);
        }
    }
    Ok((episodes, identified))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IdentifyReport {
    pub episodes: usize,
    pub accuracy: f64,
    pub mean_return: f64,
    /// Absent with fewer than two episodes.
    pub se_return: Option<f64>,
    pub update_every: usize,
    pub records: Vec<EvalRecord>,
}

/// Equal-width confidence bins over `[0, 1]`: `(lo, hi, incorrect, correct)`.
pub fn confidence_histogram(records: &[EvalRecord], bins: usize) -> Vec<(f64, f64, usize, usize)> {
    let mut out: Vec<(f64, f64, usize, usize)> = (0..bins)
        .map(|b| (b as f64 / bins as f64, (b + 1) as f64 / bins as f64, 0, 0))
        .collect();
    for r in records {
        let b = ((r.result.confidence * bins as f64) as usize).min(bins - 1);
        if r.result.correct {
            out[b].3 += 1;
        } else {
            out[b].2 += 1;
        }
    }
    out
}

fn load_densities(inputs: &Inputs) -> Result<Option<RoleDensities>> {
    inputs
        .densities
        .as_ref()
        .map(|p| {
            RoleDensities::load(p).with_context(|| format!("loading densities {}", p.display()))
        })
        .transpose()
}

fn identify(config: &ExperimentConfig, inputs: &Inputs, run: &RunDir) -> Result<()> {
    let densities = load_densities(inputs)?.context("identify needs --densities")?;
    let policy = load_policy(inputs)?;
    let (episodes, identified) = evaluate(config, &config.env, &policy, Some(&densities))?;
    let records: Vec<EvalRecord> = identified.into_iter().flatten().collect();
    let returns: Vec<f64> = episodes.iter().map(|e| e.episode_return).collect();
    let (mean_return, se_return) = eval::mean_se(&returns);
    let correct = records.iter().filter(|r| r.result.correct).count();
    let report = IdentifyReport {
        episodes: records.len(),
        accuracy: correct as f64 / records.len().max(1) as f64,
        mean_return,
        se_return: se_return.is_finite().then_some(se_return),
        update_every: config.eval.update_every,
        records,
    };
    fs::write(
        run.path("identification.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    let mut w = csv::Writer::from_path(run.path("histogram.csv"))?;
    w.write_record(["bin", "lo", "hi", "incorrect", "correct"])?;
    for (i, (lo, hi, bad, good)) in
        confidence_histogram(&report.records, config.eval.histogram_bins)
            .into_iter()
            .enumerate()
    {
        w.write_record([
            i.to_string(),
            lo.to_string(),
            hi.to_string(),
            bad.to_string(),
            good.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub const SWEEP_EPISODE_HEADER: [&str; 12] = [
    "cell",
    "n_agents",
    "v_max",
    "master_seed",
    "episode",
    "seed",
    "return",
    "length",
    "leader",
    "estimate",
    "confidence",
    "correct",
];

pub const SWEEP_SUMMARY_HEADER: [&str; 7] = [
    "cell",
    "n_agents",
    "v_max",
    "episodes",
    "mean_return",
    "se_return",
    "accuracy",
];

fn sweep_eval(config: &ExperimentConfig, inputs: &Inputs, run: &RunDir) -> Result<()> {
    let policy = load_policy(inputs)?;
    let densities = load_densities(inputs)?;
    let mut rows = csv::Writer::from_path(run.path("sweep_episodes.csv"))?;
    rows.write_record(SWEEP_EPISODE_HEADER)?;
    let mut summary = csv::Writer::from_path(run.path("sweep_summary.csv"))?;
    summary.write_record(SWEEP_SUMMARY_HEADER)?;
    let mut cell = 0usize;
    for &n in &config.sweep.grid_n {
        for &v in &config.sweep.grid_vmax {
            let env = config.env.clone().with_agents(n).with_v_max(v);
            env.validate()?;
            let (episodes, identified) = evaluate(config, &env, &policy, densities.as_ref())?;
            let per_seed = config.eval.episodes;
            for (i, (rec, id)) in episodes.iter().zip(&identified).enumerate() {
                let master = config.seeds[i / per_seed.max(1)];
                let result = id.as_ref().map(|r| &r.result);
                rows.write_record([
                    cell.to_string(),
                    n.to_string(),
                    v.to_string(),
                    master.to_string(),
                    (i % per_seed.max(1)).to_string(),
                    rec.seed.to_string(),
                    rec.episode_return.to_string(),
                    rec.length.to_string(),
                    rec.leader_index.to_string(),
                    result.map(|r| r.estimate.to_string()).unwrap_or_default(),
                    fmt_opt(result.map(|r| r.confidence)),
                    result
                        .map(|r| (r.correct as u8).to_string())
                        .unwrap_or_default(),
                ])?;
            }
            let returns: Vec<f64> = episodes.iter().map(|e| e.episode_return).collect();
            let (m, se) = eval::mean_se(&returns);
            let accuracy = densities.as_ref().map(|_| {
                identified
                    .iter()
                    .flatten()
                    .filter(|r| r.result.correct)
                    .count() as f64
                    / episodes.len().max(1) as f64
            });
            summary.write_record([
                cell.to_string(),
                n.to_string(),
                v.to_string(),
                episodes.len().to_string(),
                m.to_string(),
                fmt_opt(se.is_finite().then_some(se)),
                fmt_opt(accuracy),
            ])?;
            cell += 1;
        }
    }
    rows.flush()?;
    summary.flush()?;
    Ok(())
}

// ---------------------------------------------------------------- densities

pub const DATASET_HEADER: [&str; 7] = [
    "master_seed",
    "n_agents",
    "episode",
    "k",
    "agent",
    "ratio",
    "leader",
];

/// Seed of dataset episode `episode` at swarm size `n`.
pub fn dataset_episode_seed(master: u64, n: usize, episode: usize) -> u64 {
    derive_seed(master, &[stream::DATASET, n as u64, episode as u64])
}

fn fit_kde(config: &ExperimentConfig, inputs: &Inputs, run: &RunDir) -> Result<()> {
    let policy = load_policy(inputs)?;
    let actor = actor(&policy, config);
    let mut episodes = Vec::new();
    let mut w = csv::Writer::from_path(run.path("dataset.csv"))?;
    w.write_record(DATASET_HEADER)?;
    for &master in &config.seeds {
        for &n in &config.dataset.n_values {
            let env = config.env.clone().with_agents(n);
            env.validate()?;
            for e in 0..config.dataset.episodes {
                let seed = dataset_episode_seed(master, n, e);
                let rec = eval::run_episode(actor, &env, seed, seed, false)?;
                let global = episodes.len();
                for (i, ratios) in rec.ratios.iter().enumerate() {
                    for (agent, r) in ratios.iter().enumerate() {
                        w.write_record([
                            master.to_string(),
                            n.to_string(),
                            global.to_string(),
                            (i + 1).to_string(),
                            agent.to_string(),
                            r.to_string(),
                            ((agent == rec.leader_index) as u8).to_string(),
                        ])?;
                    }
                }
                episodes.push(rec);
            }
        }
    }
    w.flush()?;
    let dataset = eval::ratio_dataset(&episodes);
    let options = FitOptions {
        max_samples: config.dataset.max_samples,
        floor: config.dataset.floor,
        min_bandwidth: config.dataset.min_bandwidth,
    };
    RoleDensities::fit(&dataset, &options)?.save(run.path("densities.json"))?;
    Ok(())
}

// ---------------------------------------------------------------- traces

fn export_trace(config: &ExperimentConfig, inputs: &Inputs, run: &RunDir) -> Result<()> {
    let policy = load_policy(inputs)?;
    let seed = inputs
        .episode_seed
        .unwrap_or_else(|| eval::eval_episode_seed(config.seeds[0], 0));
    let rec = eval::run_episode(actor(&policy, config), &config.env, seed, seed, true)?;
    let trace = rec.trace.context("trace was not recorded")?;
    trace.write_csv(BufWriter::new(File::create(run.path("trace.csv"))?))?;
    Ok(())
}
