use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context as _, Result};
use sha2::{Digest, Sha256};
use sparse_rep::analysis::{
    ema_smooth, heatmap, instance_sparsity, mean_pairwise_overlap, monte_carlo_value, pairwise_overlaps,
    sparsity_histogram, Estimate, ProbeSet,
};
use sparse_rep::control::{run_control, ControlRun};
use sparse_rep::env::{DataPolicy, Policy};
use sparse_rep::network::{read_checkpoint, write_checkpoint};
use sparse_rep::training::{generate_dataset, EpochStats, EvalSet, Trainer};
use sparse_rep::{
    child_rng, child_seed, Checkpoint, Environment, FeatureMap, Matrix, MlpParams, Probe, RegularizerSpec, TileCoder,
    TransitionBatch,
};

use crate::config::{ExperimentConfig, FeatureKind};
use crate::output::{opt, Csv, Stamp};
use crate::par_map;

/// Smoothing weight of the EMA column in learning-curve outputs.
pub const EMA_WEIGHT: f64 = 0.1;

/// Episodes averaged for the final-performance score.
pub const FINAL_EPISODES: usize = 25;

/// A validated configuration bound to an output directory.
#[derive(Clone, Debug)]
pub struct Context {
    pub config: ExperimentConfig,
    pub out: PathBuf,
    /// Worker threads for independent runs.
    pub parallel: usize,
    stamp: Stamp,
}

impl Context {
    pub fn new(config: ExperimentConfig, out: impl Into<PathBuf>) -> Result<Self> {
        config.validate()?;
        let stamp = Stamp {
            config_hash: config.hash()?,
        };
        Ok(Context {
            config,
            out: out.into(),
            parallel: 1,
            stamp,
        })
    }

    pub fn with_parallel(mut self, workers: usize) -> Self {
        self.parallel = workers.max(1);
        self
    }

    pub fn stamp(&self) -> &Stamp {
        &self.stamp
    }

    pub fn dataset_path(&self) -> PathBuf {
        self.out.join("dataset.bin")
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.out.join("checkpoint.bin")
    }

    pub fn environment(&self) -> Result<Environment> {
        Ok(Environment::with_config(self.config.domain, self.config.env.clone())?)
    }
}

// ---- gen-data ----

#[derive(Clone, Debug, PartialEq)]
pub struct DataSummary {
    pub transitions: usize,
    pub episodes: usize,
    pub terminations: usize,
    pub truncations: usize,
    pub mean_episode_length: Option<f64>,
    pub mean_episode_return: Option<f64>,
}

pub fn summarize(batch: &TransitionBatch) -> DataSummary {
    let (mut lengths, mut returns) = (Vec::new(), Vec::new());
    let (mut len, mut ret) = (0usize, 0.0);
    let mut terminations = 0;
    for i in 0..batch.len() {
        len += 1;
        ret += batch.rewards[i];
        let terminal = batch.discounts[i] == 0.0;
        if terminal || batch.truncated[i] {
            terminations += terminal as usize;
            lengths.push(len as f64);
            returns.push(ret);
            (len, ret) = (0, 0.0);
        }
    }
    let mean = |xs: &[f64]| (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64);
    DataSummary {
        transitions: batch.len(),
        episodes: lengths.len(),
        terminations,
        truncations: lengths.len() - terminations,
        mean_episode_length: mean(&lengths),
        mean_episode_return: mean(&returns),
    }
}

pub fn make_dataset(cfg: &ExperimentConfig, env: &Environment) -> Result<TransitionBatch> {
    Ok(generate_dataset(env, cfg.data.transitions, child_seed(cfg.seed, "data", 0))?)
}

/// Writes `dataset.bin` and `dataset_summary.csv`.
pub fn gen_data(ctx: &Context) -> Result<DataSummary> {
    let env = ctx.environment()?;
    let batch = make_dataset(&ctx.config, &env)?;
    fs::create_dir_all(&ctx.out).with_context(|| format!("creating {}", ctx.out.display()))?;
    let path = ctx.dataset_path();
    batch.save(&path).with_context(|| format!("writing {}", path.display()))?;
    let s = summarize(&batch);
    let mut csv = Csv::create(
        &ctx.out.join("dataset_summary.csv"),
        ctx.stamp(),
        &[
            "domain",
            "policy",
            "seed",
            "transitions",
            "episodes",
            "terminations",
            "truncations",
            "mean_episode_length",
            "mean_episode_return",
        ],
    )?;
    csv.row(&[
        &batch.domain,
        &batch.policy,
        &batch.seed,
        &s.transitions,
        &s.episodes,
        &s.terminations,
        &s.truncations,
        &opt(s.mean_episode_length),
        &opt(s.mean_episode_return),
    ])?;
    csv.finish()?;
    Ok(s)
}

// ---- train-rep ----

pub fn data_hash(batch: &TransitionBatch) -> Result<String> {
    let mut bytes = Vec::new();
    batch.write_to(&mut bytes)?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

/// Value of `start` under the data policy, averaged over rollouts whose
/// first action is also drawn from that policy.
fn data_policy_value(env: &Environment, obs: &[f64], rollouts: usize, seed: u64) -> Result<f64> {
    let start = env.state_from_observation(obs)?;
    let policy = DataPolicy(env);
    let mut total = 0.0;
    for i in 0..rollouts {
        let rollout_seed = child_seed(seed, "rollout", i as u64);
        let first = policy.act(&start, &mut child_rng(rollout_seed, "first-action", 0))?;
        total += monte_carlo_value(env, &policy, &start, first, 1, env.config.cutoff, rollout_seed)?.mean;
    }
    Ok(total / rollouts as f64)
}

/// Held-out observations for the sparsity column and, when test states are
/// requested, Monte Carlo value targets for the RMSE column.
pub fn make_eval_set(cfg: &ExperimentConfig, env: &Environment, workers: usize) -> Result<EvalSet> {
    let probes = match cfg.data.probe_transitions {
        0 => None,
        n => Some(generate_dataset(env, n, child_seed(cfg.seed, "probe-data", 0))?.obs),
    };
    let values = match cfg.data.test_states {
        0 => None,
        n => {
            ensure!(cfg.data.rollouts > 0, "data.rollouts must be positive when test states are requested");
            let states = generate_dataset(env, n, child_seed(cfg.seed, "test-data", 0))?.obs;
            let seed = child_seed(cfg.seed, "test-values", 0);
            let truth = par_map(n, workers, |k| {
                data_policy_value(env, states.row(k), cfg.data.rollouts, child_seed(seed, "state", k as u64))
            })
            .into_iter()
            .collect::<Result<Vec<_>>>()?;
            Some((states, truth))
        }
    };
    Ok(EvalSet { probes, values })
}

/// Runs `cfg.train.epochs` epochs, from scratch or from a checkpoint. The
/// returned checkpoint carries the optimizer state; for k-sparse networks
/// its parameters keep the top-k at inference.
pub fn train_network(
    cfg: &ExperimentConfig,
    data: &TransitionBatch,
    eval: &EvalSet,
    resume: Option<Checkpoint>,
) -> sparse_rep::Result<(Checkpoint, Vec<EpochStats>)> {
    let seed = child_seed(cfg.seed, "train", 0);
    let mut trainer = match resume {
        Some(ckpt) => Trainer::resume(cfg.train.clone(), cfg.regularizer.clone(), seed, ckpt)?,
        None => Trainer::new(cfg.train.clone(), cfg.regularizer.clone(), cfg.domain.obs_dim(), seed)?,
    };
    let mut history = Vec::with_capacity(cfg.train.epochs);
    for _ in 0..cfg.train.epochs {
        history.push(trainer.run_epoch(data, eval)?);
    }
    let mut ckpt = trainer.checkpoint();
    if let RegularizerSpec::Ksparse { k, .. } = cfg.regularizer {
        ckpt.params.topk = Some(k);
    }
    Ok((ckpt, history))
}

pub fn write_train_loss(path: &Path, stamp: &Stamp, data_hash: &str, reg: &RegularizerSpec, history: &[EpochStats]) -> Result<()> {
    let mut csv = Csv::with_notes(
        path,
        stamp,
        &[("data_sha256", data_hash.to_string()), ("regularizer", reg.name().to_string())],
        &["epoch", "mstde", "penalty", "rmse", "mean_instance_sparsity"],
    )?;
    for s in history {
        csv.row(&[&s.epoch, &s.mstde, &s.penalty, &opt(s.rmse), &opt(s.mean_instance_sparsity)])?;
    }
    csv.finish()?;
    Ok(())
}

#[derive(Clone, Debug)]
pub struct TrainReport {
    pub history: Vec<EpochStats>,
    pub checkpoint: Checkpoint,
    pub data_hash: String,
}

/// Trains the representation network and writes `checkpoint.bin` and
/// `train_loss.csv`. Data comes from `data`, else `dataset.bin` in the
/// output directory, else is generated from the config.
pub fn train_rep(ctx: &Context, data: Option<&Path>, resume: Option<&Path>) -> Result<TrainReport> {
    let cfg = &ctx.config;
    ensure!(
        cfg.features == FeatureKind::Network,
        "train-rep needs features = \"network\"; tile coding has nothing to train"
    );
    let env = ctx.environment()?;
    let path = data.map(Path::to_path_buf).unwrap_or_else(|| ctx.dataset_path());
    let batch = if data.is_some() || path.exists() {
        TransitionBatch::load(&path).with_context(|| format!("loading {}", path.display()))?
    } else {
        make_dataset(cfg, &env)?
    };
    if batch.domain != cfg.domain {
        bail!(sparse_rep::Error::DomainMismatch {
            expected: cfg.domain.to_string(),
            found: batch.domain.to_string(),
        });
    }
    let hash = data_hash(&batch)?;
    let resume = match resume {
        Some(p) => Some(read_checkpoint(p).with_context(|| format!("loading {}", p.display()))?),
        None => None,
    };
    let eval = make_eval_set(cfg, &env, ctx.parallel)?;
    let (checkpoint, history) = train_network(cfg, &batch, &eval, resume).context("training the representation")?;
    fs::create_dir_all(&ctx.out).with_context(|| format!("creating {}", ctx.out.display()))?;
    write_checkpoint(&ctx.checkpoint_path(), &checkpoint)
        .with_context(|| format!("writing {}", ctx.checkpoint_path().display()))?;
    write_train_loss(&ctx.out.join("train_loss.csv"), ctx.stamp(), &hash, &cfg.regularizer, &history)?;
    Ok(TrainReport {
        history,
        checkpoint,
        data_hash: hash,
    })
}

// ---- control ----

/// Frozen features used by the control and analysis phases.
#[derive(Clone, Debug)]
pub enum Representation {
    Network(MlpParams),
    Tiles(TileCoder),
}

impl Representation {
    pub fn feature_map(&self) -> &dyn FeatureMap {
        match self {
            Representation::Network(p) => p,
            Representation::Tiles(t) => t,
        }
    }

    /// Whether the representation counts as sparse for the automatic
    /// optimizer choice.
    pub fn is_sparse(&self, reg: &RegularizerSpec) -> bool {
        match self {
            Representation::Network(_) => reg.targets_sparsity(),
            Representation::Tiles(_) => true,
        }
    }

    /// Activations at or below this level count as inactive.
    pub fn active_threshold(&self) -> f64 {
        match self {
            Representation::Network(p) => p.activation().active_threshold(),
            Representation::Tiles(_) => 0.0,
        }
    }

    pub fn dense_batch(&self, obs: &Matrix) -> Result<Matrix> {
        match self {
            Representation::Network(p) => Ok(p.represent_batch(obs)?),
            Representation::Tiles(t) => {
                let width = t.num_features();
                let mut data = Vec::with_capacity(obs.rows() * width);
                for row in obs.iter_rows() {
                    data.extend(t.features(row)?.to_dense(width));
                }
                Ok(Matrix::from_vec(obs.rows(), width, data)?)
            }
        }
    }
}

pub fn load_representation(ctx: &Context, checkpoint: Option<&Path>) -> Result<Representation> {
    let cfg = &ctx.config;
    let dim = cfg.domain.obs_dim();
    match cfg.features {
        FeatureKind::TileCoding => Ok(Representation::Tiles(TileCoder::new(cfg.tile_coding.clone(), dim)?)),
        FeatureKind::Network => {
            let path = checkpoint.map(Path::to_path_buf).unwrap_or_else(|| ctx.checkpoint_path());
            let ckpt = read_checkpoint(&path).with_context(|| format!("loading checkpoint {}", path.display()))?;
            ensure!(
                ckpt.params.input_dim() == dim,
                "incompatible checkpoint {}: network takes {} inputs, {} observations have {}",
                path.display(),
                ckpt.params.input_dim(),
                cfg.domain,
                dim
            );
            Ok(Representation::Network(ckpt.params))
        }
    }
}

pub fn probe_list(cfg: &ExperimentConfig) -> Vec<Probe> {
    let observations = match &cfg.analysis.probes {
        Some(p) => p.clone(),
        None => ProbeSet::default_for(cfg.domain).observations(),
    };
    observations
        .into_iter()
        .enumerate()
        .map(|(i, obs)| Probe {
            obs,
            action: cfg.analysis.probe_actions.as_ref().map_or(0, |a| a[i]),
        })
        .collect()
}

pub fn control_run(
    cfg: &ExperimentConfig,
    env: &Environment,
    rep: &Representation,
    run: usize,
    probes: &[Probe],
) -> sparse_rep::Result<ControlRun> {
    run_control(
        env,
        rep.feature_map(),
        rep.is_sparse(&cfg.regularizer),
        &cfg.control,
        child_seed(cfg.seed, "control", run as u64),
        probes,
    )
}

pub fn write_curve(path: &Path, stamp: &Stamp, run_id: usize, run: &ControlRun) -> Result<()> {
    let c = &run.curve;
    let smoothed = ema_smooth(&c.returns, EMA_WEIGHT);
    let mut csv = Csv::with_notes(
        path,
        stamp,
        &[("seed", c.seed.to_string())],
        &["run_id", "episode", "steps", "return", "truncated", "smoothed"],
    )?;
    for e in 0..c.len() {
        csv.row(&[&run_id, &e, &c.steps[e], &c.returns[e], &c.truncated[e], &smoothed[e]])?;
    }
    csv.finish()?;
    Ok(())
}

fn write_probe_track(path: &Path, stamp: &Stamp, probes: &[Probe], run: &ControlRun) -> Result<()> {
    let names: Vec<String> = (0..probes.len()).map(|p| format!("probe_{p}")).collect();
    let mut header = vec!["episode"];
    header.extend(names.iter().map(String::as_str));
    let mut csv = Csv::create(path, stamp, &header)?;
    for (e, values) in run.probe_values.iter().enumerate() {
        let mut fields: Vec<&dyn std::fmt::Display> = vec![&e];
        fields.extend(values.iter().map(|v| v as &dyn std::fmt::Display));
        csv.row(&fields)?;
    }
    csv.finish()?;
    Ok(())
}

/// Per-episode statistics across runs.
#[derive(Clone, Debug, PartialEq)]
pub struct AggregateRow {
    pub episode: usize,
    pub mean_return: f64,
    pub std_error: f64,
    pub mean_steps: f64,
    pub goal_fraction: f64,
    pub smoothed: f64,
}

pub fn aggregate(runs: &[ControlRun]) -> Vec<AggregateRow> {
    let episodes = runs.iter().map(|r| r.curve.len()).min().unwrap_or(0);
    let mut rows: Vec<AggregateRow> = (0..episodes)
        .map(|e| {
            let returns: Vec<f64> = runs.iter().map(|r| r.curve.returns[e]).collect();
            let est = Estimate::from_samples(&returns);
            let n = runs.len() as f64;
            AggregateRow {
                episode: e,
                mean_return: est.mean,
                std_error: est.std_error,
                mean_steps: runs.iter().map(|r| r.curve.steps[e] as f64).sum::<f64>() / n,
                goal_fraction: runs.iter().filter(|r| !r.curve.truncated[e]).count() as f64 / n,
                smoothed: 0.0,
            }
        })
        .collect();
    let means: Vec<f64> = rows.iter().map(|r| r.mean_return).collect();
    for (row, s) in rows.iter_mut().zip(ema_smooth(&means, EMA_WEIGHT)) {
        row.smoothed = s;
    }
    rows
}

/// Runs `config.runs` independent Sarsa(0) learners and writes one curve per
/// run, an aggregate, and the probe value tracks under `control/`.
pub fn control(ctx: &Context, checkpoint: Option<&Path>) -> Result<Vec<ControlRun>> {
    let cfg = &ctx.config;
    let rep = load_representation(ctx, checkpoint)?;
    let env = ctx.environment()?;
    let probes = if cfg.analysis.track_probes { probe_list(cfg) } else { Vec::new() };
    let runs = par_map(cfg.runs, ctx.parallel, |i| control_run(cfg, &env, &rep, i, &probes))
        .into_iter()
        .enumerate()
        .map(|(i, r)| r.with_context(|| format!("control run {i}")))
        .collect::<Result<Vec<_>>>()?;
    let dir = ctx.out.join("control");
    for (i, run) in runs.iter().enumerate() {
        write_curve(&dir.join(format!("run_{i:03}.csv")), ctx.stamp(), i, run)?;
        if !probes.is_empty() {
            write_probe_track(&dir.join(format!("bootstrap_run_{i:03}.csv")), ctx.stamp(), &probes, run)?;
        }
    }
    let mut csv = Csv::create(
        &dir.join("aggregate.csv"),
        ctx.stamp(),
        &["episode", "runs", "mean_return", "stderr_return", "mean_steps", "goal_fraction", "smoothed"],
    )?;
    for r in aggregate(&runs) {
        csv.row(&[&r.episode, &runs.len(), &r.mean_return, &r.std_error, &r.mean_steps, &r.goal_fraction, &r.smoothed])?;
    }
    csv.finish()?;
    Ok(runs)
}

// ---- analyze ----

#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisReport {
    pub active_threshold: f64,
    /// Percentage of active units per sampled observation.
    pub sparsity: Vec<f64>,
    pub histogram: Vec<usize>,
    pub mean_instance_sparsity: f64,
    pub overlaps: Vec<(usize, usize, usize)>,
    pub mean_overlap: f64,
    pub heatmap_units: Vec<usize>,
}

/// `count` units spread evenly over `0..width`.
pub fn spread_units(width: usize, count: usize) -> Vec<usize> {
    let count = count.min(width);
    (0..count).map(|i| i * width / count).collect()
}

/// Writes instance sparsity, its histogram, probe overlaps and, on 2-d
/// domains, per-unit heatmaps under `analysis/`.
pub fn analyze(ctx: &Context, checkpoint: Option<&Path>) -> Result<AnalysisReport> {
    let cfg = &ctx.config;
    let a = &cfg.analysis;
    ensure!(a.sparsity_samples > 0, "analysis.sparsity_samples must be positive");
    ensure!(a.histogram_bins > 0, "analysis.histogram_bins must be positive");
    let rep = load_representation(ctx, checkpoint)?;
    let want_heatmaps = match (a.heatmaps, &rep) {
        (Some(false), _) => false,
        (Some(true), Representation::Tiles(_)) => bail!("heatmaps need a network representation"),
        (Some(true), _) if cfg.domain.obs_dim() != 2 => {
            bail!("heatmaps requested on {}, which is not 2-d", cfg.domain)
        }
        (_, Representation::Network(_)) => cfg.domain.obs_dim() == 2,
        (None, Representation::Tiles(_)) => false,
    };
    let env = ctx.environment()?;
    let threshold = rep.active_threshold();
    let dir = ctx.out.join("analysis");
    let notes = [("active_threshold", threshold.to_string())];

    let samples = generate_dataset(&env, a.sparsity_samples, child_seed(cfg.seed, "analysis", 0))?.obs;
    let reps = rep.dense_batch(&samples)?;
    let sparsity = instance_sparsity(&reps, threshold);
    let mean_instance_sparsity = sparsity.iter().sum::<f64>() / sparsity.len() as f64;
    let mut csv = Csv::with_notes(&dir.join("instance_sparsity.csv"), ctx.stamp(), &notes, &["sample", "percent_active"])?;
    for (i, s) in sparsity.iter().enumerate() {
        csv.row(&[&i, s])?;
    }
    csv.finish()?;

    let histogram = sparsity_histogram(&sparsity, a.histogram_bins);
    let width = 100.0 / a.histogram_bins as f64;
    let mut csv = Csv::with_notes(&dir.join("sparsity_histogram.csv"), ctx.stamp(), &notes, &["bin_lo", "bin_hi", "count"])?;
    for (b, count) in histogram.iter().enumerate() {
        csv.row(&[&(b as f64 * width), &((b + 1) as f64 * width), count])?;
    }
    csv.finish()?;

    let probes = probe_list(cfg);
    let probe_obs = Matrix::from_rows(&probes.iter().map(|p| p.obs.clone()).collect::<Vec<_>>())?;
    let probe_reps: Vec<Vec<f64>> = rep.dense_batch(&probe_obs)?.iter_rows().map(<[f64]>::to_vec).collect();
    let overlaps = pairwise_overlaps(&probe_reps, threshold)?;
    let mean_overlap = mean_pairwise_overlap(&probe_reps, threshold)?;
    let mut csv = Csv::with_notes(&dir.join("overlap.csv"), ctx.stamp(), &notes, &["probe_a", "probe_b", "overlap"])?;
    for (i, j, o) in &overlaps {
        csv.row(&[i, j, o])?;
    }
    csv.finish()?;
    let obs_names: Vec<String> = (0..cfg.domain.obs_dim()).map(|d| format!("obs_{d}")).collect();
    let mut header = vec!["probe"];
    header.extend(obs_names.iter().map(String::as_str));
    header.push("active_units");
    let mut csv = Csv::with_notes(&dir.join("probes.csv"), ctx.stamp(), &notes, &header)?;
    for (k, (p, r)) in probes.iter().zip(&probe_reps).enumerate() {
        let active = r.iter().filter(|&&v| v > threshold).count();
        let mut fields: Vec<&dyn std::fmt::Display> = vec![&k];
        fields.extend(p.obs.iter().map(|v| v as &dyn std::fmt::Display));
        fields.push(&active);
        csv.row(&fields)?;
    }
    csv.finish()?;

    let mut summary = Csv::with_notes(&dir.join("summary.csv"), ctx.stamp(), &notes, &["metric", "value"])?;
    summary.row(&[&"samples", &sparsity.len()])?;
    summary.row(&[&"width", &reps.cols()])?;
    summary.row(&[&"mean_instance_sparsity", &mean_instance_sparsity])?;
    summary.row(&[&"probe_pairs", &overlaps.len()])?;
    summary.row(&[&"mean_pairwise_overlap", &mean_overlap])?;
    summary.finish()?;

    let mut heatmap_units = Vec::new();
    if let (true, Representation::Network(params)) = (want_heatmaps, &rep) {
        heatmap_units = a
            .heatmap_units
            .clone()
            .unwrap_or_else(|| spread_units(params.width(), a.heatmap_count));
        let grids = heatmap(params, cfg.domain, &heatmap_units, a.heatmap_resolution)?;
        let hdir = dir.join("heatmaps");
        let mut index = Csv::create(
            &hdir.join("index.csv"),
            ctx.stamp(),
            &["unit", "file", "resolution", "min", "max", "active_fraction"],
        )?;
        for g in &grids {
            let file = format!("unit_{:03}.csv", g.unit);
            let r = g.resolution;
            let step = 1.0 / (r - 1) as f64;
            let mut csv = Csv::with_notes(&hdir.join(&file), ctx.stamp(), &notes, &["i", "j", "x", "y", "activation"])?;
            for i in 0..r {
                for j in 0..r {
                    csv.row(&[&i, &j, &(i as f64 * step), &(j as f64 * step), &g.values.get(i, j)])?;
                }
            }
            csv.finish()?;
            let vals = g.values.as_slice();
            let min = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let max = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let active = vals.iter().filter(|&&v| v > threshold).count() as f64 / vals.len() as f64;
            index.row(&[&g.unit, &file, &r, &min, &max, &active])?;
        }
        index.finish()?;
    }

    Ok(AnalysisReport {
        active_threshold: threshold,
        sparsity,
        histogram,
        mean_instance_sparsity,
        overlaps,
        mean_overlap,
        heatmap_units,
    })
}
