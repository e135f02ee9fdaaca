//! Batch pretraining of representations on fixed-policy trajectories.
//!
//! The network is trained to minimize the mean squared TD error of its value
//! head,
//!
//! ```text
//! delta = R + gamma * phi(S')^T w_v - phi(S)^T w_v
//! ```
//!
//! with the gradient taken through both `phi(S)` and `phi(S')`, plus the
//! configured regularizer. Mini-batches are drawn i.i.d. with replacement.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::instance_sparsity;
use crate::binio::*;
use crate::env::{Domain, Environment, Transition};
use crate::error::{Error, Result};
use crate::linalg::{dot, Matrix};
use crate::network::{he_init, Activation, Checkpoint, Gradients, MlpParams, Optimizer, OptimizerKind};
use crate::regularizers::{
    activation_penalty, dropout_mask, topk_indicator, weight_penalty, wta_indicator, Norm, RegularizerSpec,
};
use crate::seed::{child_rng, SimRng};

const DATASET_MAGIC: &[u8; 8] = b"SRNNDATA";
const DATASET_VERSION: u32 = 1;
const MAX_OBS_DIM: usize = 64;

/// Fixed-policy transitions from one domain, stored column-wise.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionBatch {
    pub domain: Domain,
    /// Name of the generating policy.
    pub policy: String,
    pub seed: u64,
    pub obs: Matrix,
    pub actions: Vec<usize>,
    pub rewards: Vec<f64>,
    pub next_obs: Matrix,
    pub discounts: Vec<f64>,
    pub truncated: Vec<bool>,
}

impl TransitionBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn transition(&self, i: usize) -> Transition {
        Transition {
            obs: self.obs.row(i).to_vec(),
            action: self.actions[i],
            reward: self.rewards[i],
            next_obs: self.next_obs.row(i).to_vec(),
            discount: self.discounts[i],
            truncated: self.truncated[i],
        }
    }

    /// Number of episodes that ended inside the batch (goal or cut-off).
    pub fn completed_episodes(&self) -> usize {
        self.discounts
            .iter()
            .zip(&self.truncated)
            .filter(|(&d, &t)| d == 0.0 || t)
            .count()
    }

    /// Gathers the rows at `indices` into a mini-batch.
    pub fn gather(&self, indices: &[usize]) -> Result<MiniBatch> {
        let d = self.obs.cols();
        let mut obs = Vec::with_capacity(indices.len() * d);
        let mut next = Vec::with_capacity(indices.len() * d);
        let mut rewards = Vec::with_capacity(indices.len());
        let mut discounts = Vec::with_capacity(indices.len());
        for &i in indices {
            if i >= self.len() {
                return Err(Error::invalid(format!("transition index {i} out of range")));
            }
            obs.extend_from_slice(self.obs.row(i));
            next.extend_from_slice(self.next_obs.row(i));
            rewards.push(self.rewards[i]);
            discounts.push(self.discounts[i]);
        }
        Ok(MiniBatch {
            obs: Matrix::from_vec(indices.len(), d, obs)?,
            rewards,
            next_obs: Matrix::from_vec(indices.len(), d, next)?,
            discounts,
        })
    }

    fn validate(&self) -> Result<()> {
        let n = self.len();
        let d = self.domain.obs_dim();
        if n == 0 {
            return Err(Error::invalid("empty transition batch"));
        }
        if self.obs.shape() != (n, d) || self.next_obs.shape() != (n, d) {
            return Err(Error::shape("TransitionBatch observations", format!("({n}, {d})"), format!("{:?}", self.obs.shape())));
        }
        if self.actions.len() != n || self.discounts.len() != n || self.truncated.len() != n {
            return Err(Error::invalid("transition batch columns differ in length"));
        }
        if self.actions.iter().any(|&a| a >= self.domain.num_actions()) {
            return Err(Error::invalid("action index out of range for domain"));
        }
        Ok(())
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        self.validate()?;
        w.write_all(DATASET_MAGIC)?;
        write_u32(w, DATASET_VERSION)?;
        write_u8(w, self.domain.tag())?;
        write_str(w, &self.policy)?;
        write_u64(w, self.seed)?;
        write_u64(w, self.obs.cols() as u64)?;
        write_u64(w, self.len() as u64)?;
        for i in 0..self.len() {
            for &v in self.obs.row(i) {
                write_f64(w, v)?;
            }
            write_u32(w, self.actions[i] as u32)?;
            write_f64(w, self.rewards[i])?;
            for &v in self.next_obs.row(i) {
                write_f64(w, v)?;
            }
            write_f64(w, self.discounts[i])?;
            write_u8(w, self.truncated[i] as u8)?;
        }
        Ok(())
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self> {
        expect_magic(r, DATASET_MAGIC)?;
        let version = read_u32(r)?;
        if version != DATASET_VERSION {
            return Err(Error::Format(format!("unsupported dataset version {version}")));
        }
        let domain = Domain::from_tag(read_u8(r)?)?;
        let policy = read_str(r)?;
        let seed = read_u64(r)?;
        let d = read_len(r, MAX_OBS_DIM)?;
        if d != domain.obs_dim() {
            return Err(Error::Format(format!("{domain} observations have {} dims, file says {d}", domain.obs_dim())));
        }
        let n = read_len(r, 1 << 32)?;
        let mut obs = Vec::new();
        let mut next = Vec::new();
        let mut actions = Vec::new();
        let mut rewards = Vec::new();
        let mut discounts = Vec::new();
        let mut truncated = Vec::new();
        for _ in 0..n {
            for _ in 0..d {
                obs.push(read_f64(r)?);
            }
            actions.push(read_u32(r)? as usize);
            rewards.push(read_f64(r)?);
            for _ in 0..d {
                next.push(read_f64(r)?);
            }
            discounts.push(read_f64(r)?);
            truncated.push(match read_u8(r)? {
                0 => false,
                1 => true,
                b => return Err(Error::Format(format!("bad truncation flag {b}"))),
            });
        }
        let batch = TransitionBatch {
            domain,
            policy,
            seed,
            obs: Matrix::from_vec(n, d, obs)?,
            actions,
            rewards,
            next_obs: Matrix::from_vec(n, d, next)?,
            discounts,
            truncated,
        };
        batch.validate()?;
        Ok(batch)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(&mut BufReader::new(File::open(path)?))
    }
}

/// Rolls out the domain's data-collection policy, resetting after every
/// termination or cut-off, until `n` transitions have been collected.
pub fn generate_dataset(env: &Environment, n: usize, seed: u64) -> Result<TransitionBatch> {
    if n == 0 {
        return Err(Error::invalid("dataset size must be positive"));
    }
    let mut rng = child_rng(seed, "dataset", 0);
    let d = env.obs_dim();
    let mut obs = Vec::with_capacity(n * d);
    let mut next = Vec::with_capacity(n * d);
    let mut actions = Vec::with_capacity(n);
    let mut rewards = Vec::with_capacity(n);
    let mut discounts = Vec::with_capacity(n);
    let mut truncated = Vec::with_capacity(n);
    let (mut state, _) = env.reset(&mut rng);
    while rewards.len() < n {
        let action = env.data_policy_action(&state, &mut rng);
        let (t, s) = env.step(&state, action, &mut rng)?;
        obs.extend_from_slice(&t.obs);
        next.extend_from_slice(&t.next_obs);
        actions.push(t.action);
        rewards.push(t.reward);
        discounts.push(t.discount);
        truncated.push(t.truncated);
        state = if s.done { env.reset(&mut rng).0 } else { s };
    }
    Ok(TransitionBatch {
        domain: env.domain,
        policy: "data".into(),
        seed,
        obs: Matrix::from_vec(n, d, obs)?,
        actions,
        rewards,
        next_obs: Matrix::from_vec(n, d, next)?,
        discounts,
        truncated,
    })
}

/// Inputs of one MSTDE evaluation.
#[derive(Clone, Debug)]
pub struct MiniBatch {
    pub obs: Matrix,
    pub rewards: Vec<f64>,
    pub next_obs: Matrix,
    pub discounts: Vec<f64>,
}

/// Per-call settings of the loss that vary during training.
#[derive(Clone, Debug, Default)]
pub struct LossOptions {
    /// Dropout mask, one row per sample, shared by `S` and `S'`.
    pub dropout: Option<Matrix>,
    /// Overrides the k of a k-sparse regularizer (sparsity scheduling).
    pub k: Option<usize>,
    /// Running node means and their decay, if smoothing is enabled.
    pub running_means: Option<(Vec<f64>, f64)>,
}

/// Value, gradient and batch statistics of the regularized MSTDE.
#[derive(Clone, Debug)]
pub struct LossEval {
    pub mstde: f64,
    pub penalty: f64,
    pub grads: Gradients,
    /// Node means used by a distributional penalty (after smoothing).
    pub node_means: Vec<f64>,
}

impl LossEval {
    pub fn total(&self) -> f64 {
        self.mstde + self.penalty
    }
}

fn row_mask(rep: &Matrix, k: usize) -> Result<Matrix> {
    let mut mask = Matrix::zeros(rep.rows(), rep.cols());
    for r in 0..rep.rows() {
        mask.row_mut(r).copy_from_slice(&topk_indicator(rep.row(r), k)?);
    }
    Ok(mask)
}

/// Regularized MSTDE and its full gradient.
///
/// Masks produced by top-k and winner-take-all are chosen from the current
/// activations and then held fixed, so the gradient flows through the
/// surviving units only.
pub fn mstde_loss(params: &MlpParams, batch: &MiniBatch, reg: &RegularizerSpec, opts: &LossOptions) -> Result<LossEval> {
    let m = batch.rewards.len();
    if m == 0 {
        return Err(Error::invalid("empty mini-batch"));
    }
    if batch.discounts.len() != m || batch.obs.rows() != m || batch.next_obs.rows() != m {
        return Err(Error::shape("mstde_loss batch", m, batch.obs.rows()));
    }
    let mut cur = params.forward(&batch.obs, None)?;
    let mut nxt = params.forward(&batch.next_obs, None)?;
    match *reg {
        RegularizerSpec::Dropout { .. } => {
            if let Some(mask) = &opts.dropout {
                cur.apply_mask(mask.clone())?;
                nxt.apply_mask(mask.clone())?;
            }
        }
        RegularizerSpec::Ksparse { k, .. } => {
            let k = opts.k.unwrap_or(k);
            let mc = row_mask(cur.unmasked(), k)?;
            let mn = row_mask(nxt.unmasked(), k)?;
            cur.apply_mask(mc)?;
            nxt.apply_mask(mn)?;
        }
        RegularizerSpec::Wta { k_percent } => {
            let mc = wta_indicator(cur.unmasked(), k_percent)?;
            let mn = wta_indicator(nxt.unmasked(), k_percent)?;
            cur.apply_mask(mc)?;
            nxt.apply_mask(mn)?;
        }
        _ => {}
    }

    let w = &params.value_head;
    let phi = cur.representation();
    let phi_next = nxt.representation();
    let width = phi.cols();
    let mf = m as f64;
    let mut mstde = 0.0;
    let mut g_phi = Matrix::zeros(m, width);
    let mut g_next = Matrix::zeros(m, width);
    let mut g_w = vec![0.0; width];
    for i in 0..m {
        let gamma = batch.discounts[i];
        let (p, pn) = (phi.row(i), phi_next.row(i));
        let delta = batch.rewards[i] + gamma * dot(pn, w) - dot(p, w);
        mstde += delta * delta;
        let c = 2.0 * delta / mf;
        for j in 0..width {
            g_phi.row_mut(i)[j] = -c * w[j];
            g_next.row_mut(i)[j] = c * gamma * w[j];
            g_w[j] += c * (gamma * pn[j] - p[j]);
        }
    }
    mstde /= mf;

    let mut penalty = 0.0;
    let mut node_means = Vec::new();
    if let Some((div, beta, lambda)) = reg.divergence() {
        let batch_means = phi.column_means();
        let (means, scale) = match &opts.running_means {
            Some((run, decay)) => {
                if run.len() != width {
                    return Err(Error::shape("running node means", width, run.len()));
                }
                let mixed = run.iter().zip(&batch_means).map(|(r, b)| decay * r + (1.0 - decay) * b).collect();
                (mixed, 1.0 - decay)
            }
            None => (batch_means, 1.0),
        };
        let (value, grads) = div.penalty(&means, beta)?;
        penalty += lambda * value;
        for i in 0..m {
            for (g, dg) in g_phi.row_mut(i).iter_mut().zip(&grads) {
                *g += lambda * scale * dg / mf;
            }
        }
        node_means = means;
    }
    match *reg {
        RegularizerSpec::L1Acts { lambda } | RegularizerSpec::L2Acts { lambda } => {
            let norm = if matches!(reg, RegularizerSpec::L1Acts { .. }) { Norm::L1 } else { Norm::L2 };
            let (value, grad) = activation_penalty(phi, norm);
            penalty += lambda * value;
            for (g, d) in g_phi.as_mut_slice().iter_mut().zip(grad.as_slice()) {
                *g += lambda * d;
            }
        }
        _ => {}
    }

    let mut grads = params.backward(&cur, &g_phi)?;
    grads.add_assign(&params.backward(&nxt, &g_next)?)?;
    grads.value_head = g_w;
    match *reg {
        RegularizerSpec::L1Weights { lambda } | RegularizerSpec::L2Weights { lambda } => {
            let norm = if matches!(reg, RegularizerSpec::L1Weights { .. }) { Norm::L1 } else { Norm::L2 };
            let (value, mut wg) = weight_penalty(params, norm);
            penalty += lambda * value;
            scale_grads(&mut wg, lambda);
            grads.add_assign(&wg)?;
        }
        _ => {}
    }
    if !(mstde.is_finite() && penalty.is_finite()) || !grads.is_finite() {
        return Err(Error::NonFinite(format!("training loss (mstde {mstde}, penalty {penalty})")));
    }
    Ok(LossEval {
        mstde,
        penalty,
        grads,
        node_means,
    })
}

fn scale_grads(g: &mut Gradients, s: f64) {
    for l in &mut g.layers {
        l.weights.map_inplace(|v| v * s);
        l.bias.iter_mut().for_each(|v| *v *= s);
    }
    g.value_head.iter_mut().for_each(|v| *v *= s);
}

fn default_hidden() -> Vec<usize> {
    vec![32, 256]
}

fn default_epochs() -> usize {
    50
}

fn default_batch_size() -> usize {
    64
}

fn default_step_size() -> f64 {
    1e-3
}

fn default_ramp() -> f64 {
    0.25
}

/// Representation pretraining settings.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: Activation,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// Adam step size.
    #[serde(default = "default_step_size")]
    pub step_size: f64,
    /// Fraction of epochs over which k-sparse ramps k down from the width.
    #[serde(default = "default_ramp")]
    pub ksparse_ramp: f64,
    /// When set, node means are smoothed across mini-batches with this decay
    /// instead of being taken from the current batch alone.
    #[serde(default)]
    pub node_mean_decay: Option<f64>,
}

fn default_activation() -> Activation {
    Activation::Relu
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: default_hidden(),
            activation: default_activation(),
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            step_size: default_step_size(),
            ksparse_ramp: default_ramp(),
            node_mean_decay: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, reg: &RegularizerSpec) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return Err(Error::invalid("hidden layer sizes must be nonempty and positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::invalid(format!("step size {} must be positive", self.step_size)));
        }
        if !(0.0..=1.0).contains(&self.ksparse_ramp) {
            return Err(Error::invalid("ksparse_ramp must lie in [0, 1]"));
        }
        if let Some(d) = self.node_mean_decay {
            if !(0.0..1.0).contains(&d) {
                return Err(Error::invalid("node_mean_decay must lie in [0, 1)"));
            }
        }
        reg.validate(*self.hidden.last().unwrap(), self.activation)
    }
}

/// Held-out data used to report progress after every epoch.
#[derive(Clone, Debug, Default)]
pub struct EvalSet {
    /// Observations on which instance sparsity is measured.
    pub probes: Option<Matrix>,
    /// Test observations with reference values for RMSE.
    pub values: Option<(Matrix, Vec<f64>)>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    /// 1-based epoch number.
    pub epoch: usize,
    pub mstde: f64,
    pub penalty: f64,
    pub rmse: Option<f64>,
    pub mean_instance_sparsity: Option<f64>,
}

/// Root mean squared error between predictions and reference values.
pub fn rmse(predicted: &[f64], truth: &[f64]) -> Result<f64> {
    if predicted.is_empty() {
        return Err(Error::invalid("RMSE of an empty test set"));
    }
    if predicted.len() != truth.len() {
        return Err(Error::shape("rmse", truth.len(), predicted.len()));
    }
    let sq: f64 = predicted.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum();
    Ok((sq / predicted.len() as f64).sqrt())
}

/// RMSE of the value head `phi(x)^T w_v` against reference values.
pub fn rmse_eval(params: &MlpParams, states: &Matrix, truth: &[f64]) -> Result<f64> {
    let reps = params.represent_batch(states)?;
    let predicted: Vec<f64> = reps.iter_rows().map(|r| dot(r, &params.value_head)).collect();
    rmse(&predicted, truth)
}

/// Resumable training loop.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub config: TrainConfig,
    pub regularizer: RegularizerSpec,
    pub seed: u64,
    params: MlpParams,
    optimizer: Optimizer,
    epochs_done: usize,
    running_means: Option<Vec<f64>>,
}

impl Trainer {
    pub fn new(config: TrainConfig, regularizer: RegularizerSpec, input_dim: usize, seed: u64) -> Result<Self> {
        config.validate(&regularizer)?;
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(&config.hidden);
        let params = he_init(&sizes, config.activation, &mut child_rng(seed, "init", 0))?;
        let optimizer = Optimizer::new(OptimizerKind::ADAM, config.step_size, &params.slice_sizes())?;
        Ok(Trainer {
            config,
            regularizer,
            seed,
            params,
            optimizer,
            epochs_done: 0,
            running_means: None,
        })
    }

    /// Continues from a checkpoint written by [`Trainer::checkpoint`].
    pub fn resume(config: TrainConfig, regularizer: RegularizerSpec, seed: u64, ckpt: Checkpoint) -> Result<Self> {
        config.validate(&regularizer)?;
        let optimizer = ckpt
            .optimizer
            .ok_or_else(|| Error::invalid("checkpoint carries no optimizer state"))?;
        let mut params = ckpt.params;
        params.topk = None;
        params.validate()?;
        if params.slice_sizes() != optimizer_sizes(&optimizer) {
            return Err(Error::invalid("optimizer state does not match the network"));
        }
        Ok(Trainer {
            config,
            regularizer,
            seed,
            params,
            optimizer,
            epochs_done: ckpt.epochs_done as usize,
            running_means: None,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn params(&self) -> &MlpParams {
        &self.params
    }

    /// k in effect for the next epoch under the linear sparsity ramp.
    pub fn scheduled_k(&self) -> Option<usize> {
        let RegularizerSpec::Ksparse { k, .. } = self.regularizer else {
            return None;
        };
        let width = self.params.width();
        let ramp = (self.config.ksparse_ramp * self.config.epochs as f64).ceil() as usize;
        if ramp == 0 || self.epochs_done + 1 >= ramp {
            return Some(k);
        }
        let frac = (self.epochs_done + 1) as f64 / ramp as f64;
        let k_now = width as f64 - frac * (width - k) as f64;
        Some((k_now.round() as usize).clamp(k, width))
    }

    fn draw_dropout(&self, m: usize, rng: &mut SimRng) -> Result<Option<Matrix>> {
        let RegularizerSpec::Dropout { p } = self.regularizer else {
            return Ok(None);
        };
        let width = self.params.width();
        let mut data = Vec::with_capacity(m * width);
        for _ in 0..m {
            data.extend(dropout_mask(width, p, rng)?);
        }
        Ok(Some(Matrix::from_vec(m, width, data)?))
    }

    /// One epoch of `ceil(N / batch_size)` Adam steps.
    pub fn run_epoch(&mut self, data: &TransitionBatch, eval: &EvalSet) -> Result<EpochStats> {
        if data.is_empty() {
            return Err(Error::invalid("empty training data"));
        }
        if data.obs.cols() != self.params.input_dim() {
            return Err(Error::shape("training data", self.params.input_dim(), data.obs.cols()));
        }
        let n = data.len();
        let bs = self.config.batch_size;
        let steps = n.div_ceil(bs);
        let mut rng = child_rng(self.seed, "epoch", self.epochs_done as u64);
        let k = self.scheduled_k();
        let (mut mstde, mut penalty) = (0.0, 0.0);
        let mut idx = vec![0usize; bs];
        for _ in 0..steps {
            idx.iter_mut().for_each(|i| *i = rng.random_range(0..n));
            let batch = data.gather(&idx)?;
            let opts = LossOptions {
                dropout: self.draw_dropout(bs, &mut rng)?,
                k,
                running_means: match (self.config.node_mean_decay, &self.running_means) {
                    (Some(d), Some(run)) => Some((run.clone(), d)),
                    _ => None,
                },
            };
            let eval_loss = mstde_loss(&self.params, &batch, &self.regularizer, &opts)?;
            mstde += eval_loss.mstde;
            penalty += eval_loss.penalty;
            if self.config.node_mean_decay.is_some() && !eval_loss.node_means.is_empty() {
                self.running_means = Some(eval_loss.node_means.clone());
            }
            let grads = eval_loss.grads.slices();
            let mut slots = self.params.slices_mut();
            self.optimizer.step(&mut slots, &grads)?;
        }
        self.epochs_done += 1;
        let mut snapshot = self.params.clone();
        snapshot.topk = k;
        let mean_instance_sparsity = match &eval.probes {
            Some(p) => {
                let reps = snapshot.represent_batch(p)?;
                let s = instance_sparsity(&reps, snapshot.activation().active_threshold());
                Some(s.iter().sum::<f64>() / s.len().max(1) as f64)
            }
            None => None,
        };
        let rmse = match &eval.values {
            Some((states, truth)) => Some(rmse_eval(&snapshot, states, truth)?),
            None => None,
        };
        Ok(EpochStats {
            epoch: self.epochs_done,
            mstde: mstde / steps as f64,
            penalty: penalty / steps as f64,
            rmse,
            mean_instance_sparsity,
        })
    }

    /// Training state for resumption.
    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            params: self.params.clone(),
            optimizer: Some(self.optimizer.clone()),
            epochs_done: self.epochs_done as u64,
        }
    }

    /// Frozen representation; k-sparse networks keep their top-k at inference.
    pub fn finish(self) -> MlpParams {
        let mut params = self.params;
        if let RegularizerSpec::Ksparse { k, .. } = self.regularizer {
            params.topk = Some(k);
        }
        params
    }
}

fn optimizer_sizes(opt: &Optimizer) -> Vec<usize> {
    let store = if opt.second.is_empty() { &opt.first } else { &opt.second };
    store.iter().map(Vec::len).collect()
}

/// Trains for the configured number of epochs from scratch.
pub fn train_representation(
    config: &TrainConfig,
    regularizer: &RegularizerSpec,
    data: &TransitionBatch,
    eval: &EvalSet,
    seed: u64,
) -> Result<(MlpParams, Vec<EpochStats>)> {
    let mut trainer = Trainer::new(config.clone(), regularizer.clone(), data.obs.cols(), seed)?;
    let mut history = Vec::with_capacity(config.epochs);
    for _ in 0..config.epochs {
        history.push(trainer.run_epoch(data, eval)?);
    }
    Ok((trainer.finish(), history))
}
