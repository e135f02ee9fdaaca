use std::fmt::Display;

use anyhow::{Context as _, Result};
use sparse_rep::analysis::Estimate;
use sparse_rep::control::ALPHA_GRID;
use sparse_rep::training::EvalSet;
use sparse_rep::{child_seed, Error, RegularizerSpec, TileCoderConfig};

use crate::commands::{
    control_run, data_hash, make_dataset, make_eval_set, train_network, write_curve, write_train_loss, Context,
    Representation, FINAL_EPISODES,
};
use crate::config::{ExperimentConfig, FeatureKind};
use crate::output::{opt, Csv};
use crate::par_map;

pub const LAMBDA_KL: [f64; 3] = [0.1, 0.01, 0.001];
pub const BETA: [f64; 3] = [0.05, 0.1, 0.2];
pub const LAMBDA_NORM: [f64; 4] = [0.1, 0.01, 0.001, 0.0001];
pub const DROPOUT_P: [f64; 5] = [0.1, 0.2, 0.3, 0.4, 0.5];
pub const KSPARSE_K: [usize; 4] = [16, 32, 64, 128];
pub const WTA_PERCENT: [f64; 4] = [6.25, 12.5, 25.0, 50.0];
pub const TC_GRID: [usize; 3] = [4, 8, 16];
pub const TC_TILINGS: [usize; 3] = [8, 16, 32];

fn grid<T: Clone>(given: &Option<Vec<T>>, standard: &[T]) -> Vec<T> {
    given.clone().unwrap_or_else(|| standard.to_vec())
}

/// Representation settings to sweep, in config order. Control step sizes
/// are crossed with these separately.
pub fn representation_points(cfg: &ExperimentConfig) -> Vec<ExperimentConfig> {
    let s = &cfg.sweep;
    let with_reg = |reg: RegularizerSpec| ExperimentConfig {
        regularizer: reg,
        ..cfg.clone()
    };
    if cfg.features == FeatureKind::TileCoding {
        let mut out = Vec::new();
        for g in grid(&s.tc_grid, &TC_GRID) {
            for t in grid(&s.tc_tilings, &TC_TILINGS) {
                out.push(ExperimentConfig {
                    tile_coding: TileCoderConfig {
                        grid: g,
                        tilings: t,
                        ..cfg.tile_coding.clone()
                    },
                    ..cfg.clone()
                });
            }
        }
        return out;
    }
    use RegularizerSpec as R;
    match cfg.regularizer.clone() {
        R::None => vec![cfg.clone()],
        reg @ (R::SklExp { .. } | R::KlExp { .. } | R::SklBern { .. } | R::KlBern { .. }) => {
            let mut out = Vec::new();
            for lambda in grid(&s.lambda, &LAMBDA_KL) {
                for beta in grid(&s.beta, &BETA) {
                    out.push(with_reg(match reg {
                        R::SklExp { .. } => R::SklExp { beta, lambda },
                        R::KlExp { .. } => R::KlExp { beta, lambda },
                        R::SklBern { .. } => R::SklBern { beta, lambda },
                        _ => R::KlBern { beta, lambda },
                    }));
                }
            }
            out
        }
        reg @ (R::L1Weights { .. } | R::L2Weights { .. } | R::L1Acts { .. } | R::L2Acts { .. }) => {
            grid(&s.lambda, &LAMBDA_NORM)
                .into_iter()
                .map(|lambda| {
                    with_reg(match reg {
                        R::L1Weights { .. } => R::L1Weights { lambda },
                        R::L2Weights { .. } => R::L2Weights { lambda },
                        R::L1Acts { .. } => R::L1Acts { lambda },
                        _ => R::L2Acts { lambda },
                    })
                })
                .collect()
        }
        R::Dropout { .. } => grid(&s.p, &DROPOUT_P).into_iter().map(|p| with_reg(R::Dropout { p })).collect(),
        R::Ksparse { beta, lambda, .. } => grid(&s.k, &KSPARSE_K)
            .into_iter()
            .map(|k| with_reg(R::Ksparse { k, beta, lambda }))
            .collect(),
        R::Wta { .. } => grid(&s.k_percent, &WTA_PERCENT)
            .into_iter()
            .map(|k_percent| with_reg(R::Wta { k_percent }))
            .collect(),
    }
}

/// Hyperparameter columns shared by the sweep tables.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointParams {
    pub kind: String,
    pub lambda: Option<f64>,
    pub beta: Option<f64>,
    pub p: Option<f64>,
    pub k: Option<usize>,
    pub k_percent: Option<f64>,
    pub tc_grid: Option<usize>,
    pub tc_tilings: Option<usize>,
    pub alpha0: f64,
}

impl PointParams {
    fn new(cfg: &ExperimentConfig) -> Self {
        let mut out = PointParams {
            alpha0: cfg.control.alpha0,
            ..PointParams::default()
        };
        if cfg.features == FeatureKind::TileCoding {
            out.kind = "tile_coding".into();
            out.tc_grid = Some(cfg.tile_coding.grid);
            out.tc_tilings = Some(cfg.tile_coding.tilings);
            return out;
        }
        use RegularizerSpec as R;
        out.kind = cfg.regularizer.name().into();
        match cfg.regularizer {
            R::None => {}
            R::SklExp { beta, lambda } | R::KlExp { beta, lambda } | R::SklBern { beta, lambda } | R::KlBern { beta, lambda } => {
                out.beta = Some(beta);
                out.lambda = Some(lambda);
            }
            R::L1Weights { lambda } | R::L2Weights { lambda } | R::L1Acts { lambda } | R::L2Acts { lambda } => {
                out.lambda = Some(lambda)
            }
            R::Dropout { p } => out.p = Some(p),
            R::Ksparse { k, beta, lambda } => {
                out.k = Some(k);
                out.beta = beta;
                out.lambda = lambda;
            }
            R::Wta { k_percent } => out.k_percent = Some(k_percent),
        }
        out
    }

    pub const HEADER: [&'static str; 9] = ["kind", "lambda", "beta", "p", "k", "k_percent", "tc_grid", "tc_tilings", "alpha0"];

    pub fn fields(&self) -> Vec<String> {
        vec![
            self.kind.clone(),
            opt(self.lambda),
            opt(self.beta),
            opt(self.p),
            opt(self.k),
            opt(self.k_percent),
            opt(self.tc_grid),
            opt(self.tc_tilings),
            self.alpha0.to_string(),
        ]
    }
}

/// One control run of one grid point.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    /// Index of the grid point in config order.
    pub point: usize,
    pub seed_index: usize,
    pub seed: u64,
    pub params: PointParams,
    /// Mean return of the final episodes; `-inf` when the run diverged.
    pub score: f64,
    pub goals: usize,
    pub diverged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepSummary {
    pub point: usize,
    pub params: PointParams,
    pub score: Estimate,
    pub diverged_runs: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    /// Ranked best first.
    pub rows: Vec<SweepRow>,
    pub summary: Vec<SweepSummary>,
}

fn is_divergence(e: &Error) -> bool {
    matches!(e, Error::NonFinite(_))
}

/// Ranks by score, best first. Ties keep their input order.
pub fn rank<T>(items: &mut [T], score: impl Fn(&T) -> f64) {
    items.sort_by(|a, b| score(b).total_cmp(&score(a)));
}

/// Trains one representation per (point, seed), runs Sarsa(0) once for
/// every step size, and writes `sweep/results.csv` and `sweep/summary.csv`.
/// Diverged runs rank last. Each (point, seed) pair writes its own files
/// under `sweep/runs/`.
pub fn sweep(ctx: &Context) -> Result<SweepReport> {
    let cfg = &ctx.config;
    let points = representation_points(cfg);
    for p in &points {
        p.validate().context("invalid sweep grid point")?;
    }
    let alphas = grid(&cfg.sweep.alpha0, &ALPHA_GRID);
    for &a in &alphas {
        anyhow::ensure!(a > 0.0 && a.is_finite(), "sweep step size {a} must be positive");
    }
    let seeds: Vec<u64> = (0..cfg.sweep.seeds).map(|s| child_seed(cfg.seed, "sweep", s as u64)).collect();
    let env = ctx.environment()?;
    let dir = ctx.out.join("sweep");

    // training data depends only on the seed, so share it across points
    let network = cfg.features == FeatureKind::Network;
    let data = if network {
        par_map(seeds.len(), ctx.parallel, |s| -> Result<_> {
            let sub = ExperimentConfig {
                seed: seeds[s],
                ..cfg.clone()
            };
            let batch = make_dataset(&sub, &env)?;
            let hash = data_hash(&batch)?;
            let eval = make_eval_set(&sub, &env, 1)?;
            Ok(Some((batch, hash, eval)))
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?
    } else {
        vec![None; seeds.len()]
    };

    let jobs: Vec<(usize, usize)> = (0..points.len()).flat_map(|p| (0..seeds.len()).map(move |s| (p, s))).collect();
    let per_job = par_map(jobs.len(), ctx.parallel, |j| -> Result<Vec<SweepRow>> {
        let (p, s) = jobs[j];
        let base = ExperimentConfig {
            seed: seeds[s],
            ..points[p].clone()
        };
        let run_dir = dir.join("runs").join(format!("point_{p:03}_seed_{s:02}"));
        let rep = match &data[s] {
            Some((batch, hash, eval)) => {
                let eval: &EvalSet = eval;
                match train_network(&base, batch, eval, None) {
                    Ok((ckpt, history)) => {
                        write_train_loss(&run_dir.join("train_loss.csv"), ctx.stamp(), hash, &base.regularizer, &history)?;
                        Some(Representation::Network(ckpt.params))
                    }
                    Err(e) if is_divergence(&e) => None,
                    Err(e) => return Err(e).with_context(|| format!("training point {p} seed {s}")),
                }
            }
            None => Some(Representation::Tiles(sparse_rep::TileCoder::new(
                base.tile_coding.clone(),
                base.domain.obs_dim(),
            )?)),
        };
        let mut rows = Vec::with_capacity(alphas.len());
        for (a, &alpha0) in alphas.iter().enumerate() {
            let mut run_cfg = base.clone();
            run_cfg.control.alpha0 = alpha0;
            let outcome = match &rep {
                Some(rep) => match control_run(&run_cfg, &env, rep, 0, &[]) {
                    Ok(run) => {
                        write_curve(&run_dir.join(format!("control_alpha_{a:02}.csv")), ctx.stamp(), 0, &run)?;
                        Some(run)
                    }
                    Err(e) if is_divergence(&e) => None,
                    Err(e) => return Err(e).with_context(|| format!("control for point {p} seed {s}")),
                },
                None => None,
            };
            rows.push(SweepRow {
                point: p * alphas.len() + a,
                seed_index: s,
                seed: seeds[s],
                params: PointParams::new(&run_cfg),
                score: outcome.as_ref().map_or(f64::NEG_INFINITY, |r| r.curve.final_mean_return(FINAL_EPISODES)),
                goals: outcome.as_ref().map_or(0, |r| r.curve.goals_reached()),
                diverged: outcome.is_none(),
            });
        }
        Ok(rows)
    });
    let mut rows = Vec::new();
    for r in per_job {
        rows.extend(r?);
    }
    // config order: point, then seed
    rows.sort_by_key(|r| (r.point, r.seed_index));

    let mut summary: Vec<SweepSummary> = rows
        .chunk_by(|a, b| a.point == b.point)
        .map(|group| {
            let scores: Vec<f64> = group.iter().map(|r| r.score).collect();
            let diverged_runs = group.iter().filter(|r| r.diverged).count();
            let mut score = Estimate::from_samples(&scores);
            if diverged_runs > 0 {
                score.mean = f64::NEG_INFINITY;
                score.std_error = 0.0;
            }
            SweepSummary {
                point: group[0].point,
                params: group[0].params.clone(),
                score,
                diverged_runs,
            }
        })
        .collect();
    rank(&mut rows, |r| r.score);
    rank(&mut summary, |s| s.score.mean);

    let mut header = vec!["rank", "point", "seed_index", "seed"];
    header.extend(PointParams::HEADER);
    header.extend(["score", "goals", "diverged"]);
    let mut csv = Csv::with_notes(
        &dir.join("results.csv"),
        ctx.stamp(),
        &[("score", format!("mean return over the last {FINAL_EPISODES} episodes"))],
        &header,
    )?;
    for (i, r) in rows.iter().enumerate() {
        let params = r.params.fields();
        let mut fields: Vec<&dyn Display> = vec![&i, &r.point, &r.seed_index, &r.seed];
        fields.extend(params.iter().map(|f| f as &dyn Display));
        fields.extend([&r.score as &dyn Display, &r.goals, &r.diverged]);
        csv.row(&fields)?;
    }
    csv.finish()?;

    let mut header = vec!["rank", "point"];
    header.extend(PointParams::HEADER);
    header.extend(["mean_score", "stderr_score", "seeds", "diverged_runs"]);
    let mut csv = Csv::create(&dir.join("summary.csv"), ctx.stamp(), &header)?;
    for (i, s) in summary.iter().enumerate() {
        let params = s.params.fields();
        let mut fields: Vec<&dyn Display> = vec![&i, &s.point];
        fields.extend(params.iter().map(|f| f as &dyn Display));
        fields.extend([&s.score.mean as &dyn Display, &s.score.std_error, &s.score.samples, &s.diverged_runs]);
        csv.row(&fields)?;
    }
    csv.finish()?;

    Ok(SweepReport { rows, summary })
}
