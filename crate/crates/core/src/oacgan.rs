//! Operation-adversarial conditional GAN trainer.
//!
//! The generator loss mixes the usual adversarial term with the negated,
//! scaled dispatch cost of the scenario it produced:
//! `loss_G = k * loss_G1 + (1 - k) * loss_G2`. The second term is
//! differentiated through the dispatch optimum using the nodal prices: for
//! each node and hour the upstream coefficient is
//! `lmp * (DA_max - DA_min) / delta_scale`, with the sign following the
//! configured denormalization direction. At `k = 1` the whole OPF branch is
//! inert and training reduces to a plain conditional GAN.

use crate::dataprep::{
    day_stats, denormalize_error, forecast_error, normalize_day, DayStats, DaySample, ErrorField,
    ErrorKind, Label, SignMode,
};
use crate::grid::GridModel;
use crate::neuralnet::{
    backward, clip_probability, forward, init_params, sgd_step, Activation, LayerSpec, NetError,
    NetParams, NetSpec,
};
use crate::opf::{scaled_cost, solve_dcopf, NetLoadProfile, OpfError, OpfSolution, ScaleConstants};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error(transparent)]
    Data(#[from] crate::dataprep::DataError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error("dispatch failed during training: {0}")]
    Opf(#[from] OpfError),
}

/// Noise source for the generator: `n_z` independent standard normals.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub n_z: usize,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec { n_z: 32 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InfeasiblePolicy {
    /// Drop the sample's loss_G2 contribution for this batch.
    Skip,
    /// Push the generator back toward deliverable scenarios with a fixed
    /// upstream gradient of the given magnitude.
    Penalty { gradient: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    /// Separate SGD steps: D, then the adversarial G term, then the
    /// operation term, all from the same batch forward pass.
    AlgorithmOne,
    /// One combined G step per batch.
    Fused,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchConfig {
    pub hidden: usize,
    pub output_range: f64,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            hidden: 128,
            output_range: 2.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Weight of the adversarial term in the generator loss, in [0, 1].
    pub k: f64,
    pub alpha: f64,
    /// Learning rate for the operation-cost step; defaults to `alpha`.
    pub alpha_g2: Option<f64>,
    pub batch_size: usize,
    pub epoch_max: usize,
    pub noise: NoiseSpec,
    pub scale: ScaleConstants,
    pub seed: u64,
    pub infeasible_policy: InfeasiblePolicy,
    pub sign: SignMode,
    pub update_mode: UpdateMode,
    pub arch: ArchConfig,
    pub n_labels: usize,
}

impl TrainConfig {
    pub fn new(k: f64, seed: u64) -> Self {
        TrainConfig {
            k,
            alpha: 0.01,
            alpha_g2: None,
            batch_size: 100,
            epoch_max: 30,
            noise: NoiseSpec::default(),
            scale: ScaleConstants::new(0.0, 1.0),
            seed,
            infeasible_policy: InfeasiblePolicy::Skip,
            sign: SignMode::RoundTrip,
            update_mode: UpdateMode::AlgorithmOne,
            arch: ArchConfig::default(),
            n_labels: crate::dataprep::QUARTER_LABELS,
        }
    }

    fn validate(&self) -> Result<(), TrainError> {
        if !(0.0..=1.0).contains(&self.k) {
            return Err(TrainError::Config(format!("k = {} outside [0, 1]", self.k)));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be >= 1".into()));
        }
        if self.epoch_max == 0 {
            return Err(TrainError::Config("epoch_max must be >= 1".into()));
        }
        if self.noise.n_z == 0 {
            return Err(TrainError::Config("noise dimension must be positive".into()));
        }
        if self.n_labels == 0 {
            return Err(TrainError::Config("label vocabulary must be nonempty".into()));
        }
        Ok(())
    }
}

/// Three dense layers for both networks; the generator ends in a scaled
/// tanh head, the discriminator in a sigmoid probability.
pub fn generator_spec(n_nodes: usize, horizon: usize, cfg: &TrainConfig) -> NetSpec {
    let hidden = cfg.arch.hidden;
    NetSpec {
        layers: vec![
            LayerSpec::dense(cfg.noise.n_z + cfg.n_labels, hidden, Activation::Relu),
            LayerSpec::dense(hidden, hidden, Activation::Relu),
            LayerSpec::dense(hidden, n_nodes * horizon, Activation::Tanh),
        ],
        label_width: cfg.n_labels,
        output_scale: cfg.arch.output_range,
    }
}

pub fn discriminator_spec(n_nodes: usize, horizon: usize, cfg: &TrainConfig) -> NetSpec {
    let hidden = cfg.arch.hidden;
    NetSpec {
        layers: vec![
            LayerSpec::dense(n_nodes * horizon + cfg.n_labels, hidden, Activation::Relu),
            LayerSpec::dense(hidden, hidden, Activation::Relu),
            LayerSpec::dense(hidden, 1, Activation::Sigmoid),
        ],
        label_width: cfg.n_labels,
        output_scale: 1.0,
    }
}

/// Discriminator loss, the minimization form:
/// mean of `log(1 - D(real)) + log(D(fake))`.
pub fn loss_d(d_real: &[f64], d_fake: &[f64]) -> f64 {
    assert_eq!(d_real.len(), d_fake.len());
    let n = d_real.len() as f64;
    d_real
        .iter()
        .zip(d_fake)
        .map(|(&r, &f)| (1.0 - clip_probability(r)).ln() + clip_probability(f).ln())
        .sum::<f64>()
        / n
}

/// Adversarial generator term: mean of `log(1 - D(G(z)))`.
pub fn loss_g1(d_fake: &[f64]) -> f64 {
    let n = d_fake.len() as f64;
    d_fake
        .iter()
        .map(|&f| (1.0 - clip_probability(f)).ln())
        .sum::<f64>()
        / n
}

/// Operation term for one sample: denormalize the generated error against
/// the day's DA forecast, dispatch it, and return the negated scaled cost
/// together with the dispatch solution for gradient extraction.
pub fn loss_g2(
    eps_gen: &ErrorField,
    sample: &DaySample,
    stats: &DayStats,
    grid: &GridModel,
    sc: ScaleConstants,
    sign: SignMode,
) -> Result<(f64, OpfSolution), TrainError> {
    let load_by_node = denormalize_error(eps_gen, sample, stats, sign)?;
    let horizon = sample.horizon();
    let n_nodes = sample.n_nodes();
    let mut d = vec![vec![0.0; n_nodes]; horizon];
    for (i, row) in load_by_node.iter().enumerate() {
        for (t, &v) in row.iter().enumerate() {
            d[t][i] = v;
        }
    }
    let sol = solve_dcopf(grid, &NetLoadProfile::new(d)?)?;
    let loss = -scaled_cost(sol.cost, sc);
    Ok((loss, sol))
}

/// Upstream coefficients of the operation term: the gradient of `loss_G2`
/// with respect to each generated error entry, flattened node-major to
/// match the generator output layout. In round-trip mode the physical load
/// moves against the error, so the coefficient is `+lmp * range / scale`;
/// under the additive convention it is negated.
pub fn g2_upstream_gradient(
    sol: &OpfSolution,
    stats: &DayStats,
    sc: ScaleConstants,
    sign: SignMode,
) -> Vec<f64> {
    let horizon = sol.lmp.len();
    let n_nodes = stats.da_min.len();
    let factor = -sign.direction() / sc.delta_scale;
    let mut out = vec![0.0; n_nodes * horizon];
    for t in 0..horizon {
        for i in 0..n_nodes {
            out[i * horizon + t] = factor * sol.lmp[t][i] * stats.range(i);
        }
    }
    out
}

/// Per-epoch batch-averaged losses plus solver health counters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub loss_d: f64,
    pub loss_g: f64,
    pub loss_g1: f64,
    pub loss_g2: f64,
    pub batches: usize,
    pub n_infeasible: usize,
    pub n_degenerate: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainTrace {
    pub epochs: Vec<EpochStats>,
}

impl TrainTrace {
    /// CSV with the pinned header `epoch,loss_d,loss_g,loss_g1,loss_g2`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loss_d,loss_g,loss_g1,loss_g2\n");
        for (i, e) in self.epochs.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                i + 1,
                e.loss_d,
                e.loss_g,
                e.loss_g1,
                e.loss_g2
            ));
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub g_spec: NetSpec,
    pub theta_g: NetParams,
    pub d_spec: NetSpec,
    pub theta_d: NetParams,
    pub trace: TrainTrace,
}

/// Whether the dispatch branch runs at all. `train` disables it when
/// `k == 1` since the operation term then carries zero weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpfBranch {
    Enabled,
    Disabled,
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e3779b97f4a7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d049bb133111eb);
    x ^ (x >> 31)
}

/// Independent deterministic seed streams derived from the root seed.
pub fn derive_seed(root: u64, tag: u64, index: u64) -> u64 {
    splitmix64(root ^ splitmix64(tag.wrapping_shl(32) ^ index))
}

struct PreparedSample<'a> {
    sample: &'a DaySample,
    stats: DayStats,
    eps_norm: Vec<f64>,
}

fn flatten_field(field: &[Vec<f64>]) -> Vec<f64> {
    field.iter().flatten().copied().collect()
}

fn unflatten_field(flat: &[f64], n_nodes: usize, horizon: usize) -> Vec<Vec<f64>> {
    (0..n_nodes)
        .map(|i| flat[i * horizon..(i + 1) * horizon].to_vec())
        .collect()
}

/// Algorithm-style training over `dataset`. Dispatches to the plain cGAN
/// path when the operation term has no weight.
pub fn train(
    dataset: &[DaySample],
    grid: &GridModel,
    cfg: &TrainConfig,
) -> Result<TrainOutput, TrainError> {
    let branch = if cfg.k == 1.0 {
        OpfBranch::Disabled
    } else {
        OpfBranch::Enabled
    };
    train_with_mode(dataset, grid, cfg, branch)
}

pub fn train_with_mode(
    dataset: &[DaySample],
    grid: &GridModel,
    cfg: &TrainConfig,
    branch: OpfBranch,
) -> Result<TrainOutput, TrainError> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(TrainError::Config("empty training set".into()));
    }
    let n_nodes = dataset[0].n_nodes();
    let horizon = dataset[0].horizon();
    if n_nodes != grid.n_nodes() {
        return Err(TrainError::Config(format!(
            "dataset has {n_nodes} nodes, grid has {}",
            grid.n_nodes()
        )));
    }
    let mut prepared = Vec::with_capacity(dataset.len());
    for sample in dataset {
        if sample.n_nodes() != n_nodes || sample.horizon() != horizon {
            return Err(TrainError::Config("inconsistent sample shapes".into()));
        }
        if sample.label.0 >= cfg.n_labels {
            return Err(TrainError::Config(format!(
                "label {} outside vocabulary of {}",
                sample.label.0, cfg.n_labels
            )));
        }
        let stats = day_stats(sample)?;
        let (da_norm, rt_norm) = normalize_day(sample, &stats)?;
        let eps_norm = flatten_field(&forecast_error(&da_norm, &rt_norm).eps);
        prepared.push(PreparedSample {
            sample,
            stats,
            eps_norm,
        });
    }

    let g_spec = generator_spec(n_nodes, horizon, cfg);
    let d_spec = discriminator_spec(n_nodes, horizon, cfg);
    g_spec.validate()?;
    d_spec.validate()?;
    let mut theta_g = init_params(&g_spec, derive_seed(cfg.seed, 1, 0));
    let mut theta_d = init_params(&d_spec, derive_seed(cfg.seed, 2, 0));
    let mut noise_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 3, 0));

    let alpha_g2 = cfg.alpha_g2.unwrap_or(cfg.alpha);
    let data_len = n_nodes * horizon;
    let mut trace = TrainTrace::default();

    for epoch in 0..cfg.epoch_max {
        let mut order: Vec<usize> = (0..prepared.len()).collect();
        let mut shuffle_rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 4, epoch as u64));
        order.shuffle(&mut shuffle_rng);

        let mut ep = EpochStats {
            loss_d: 0.0,
            loss_g: 0.0,
            loss_g1: 0.0,
            loss_g2: 0.0,
            batches: 0,
            n_infeasible: 0,
            n_degenerate: 0,
        };

        for batch in order.chunks(cfg.batch_size) {
            let nb = batch.len() as f64;

            // generator forward pass for the whole batch
            let mut gen_fields = Vec::with_capacity(batch.len());
            let mut gen_tapes = Vec::with_capacity(batch.len());
            for &s in batch {
                let z: Vec<f64> = (0..cfg.noise.n_z)
                    .map(|_| noise_rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let (eps_gen, tape) = forward(&g_spec, &theta_g, &z, prepared[s].sample.label)?;
                gen_fields.push(eps_gen);
                gen_tapes.push(tape);
            }

            // discriminator step
            let mut grad_d = vec![0.0; d_spec.param_count()];
            let mut batch_loss_d = 0.0;
            for (bi, &s) in batch.iter().enumerate() {
                let label = prepared[s].sample.label;
                let (p_real_v, tape_real) =
                    forward(&d_spec, &theta_d, &prepared[s].eps_norm, label)?;
                let (p_fake_v, tape_fake) = forward(&d_spec, &theta_d, &gen_fields[bi], label)?;
                let p_real = clip_probability(p_real_v[0]);
                let p_fake = clip_probability(p_fake_v[0]);
                batch_loss_d += (1.0 - p_real).ln() + p_fake.ln();
                let up_real = -1.0 / (1.0 - p_real) / nb;
                let up_fake = 1.0 / p_fake / nb;
                let gr = backward(&d_spec, &theta_d, &tape_real, &[up_real])?;
                let gf = backward(&d_spec, &theta_d, &tape_fake, &[up_fake])?;
                for ((acc, a), b) in grad_d.iter_mut().zip(&gr.theta).zip(&gf.theta) {
                    *acc += a + b;
                }
            }
            batch_loss_d /= nb;
            sgd_step(&mut theta_d, &grad_d, cfg.alpha);

            // adversarial generator term, scored by the freshly updated D
            let mut grad_g1 = vec![0.0; g_spec.param_count()];
            let mut batch_loss_g1 = 0.0;
            for (bi, &s) in batch.iter().enumerate() {
                let label = prepared[s].sample.label;
                let (p_fake_v, tape_fake) = forward(&d_spec, &theta_d, &gen_fields[bi], label)?;
                let p_fake = clip_probability(p_fake_v[0]);
                batch_loss_g1 += (1.0 - p_fake).ln();
                let up = -1.0 / (1.0 - p_fake) / nb;
                let through_d = backward(&d_spec, &theta_d, &tape_fake, &[up])?;
                let gg = backward(&g_spec, &theta_g, &gen_tapes[bi], &through_d.input[..data_len])?;
                for (acc, v) in grad_g1.iter_mut().zip(&gg.theta) {
                    *acc += v;
                }
            }
            batch_loss_g1 /= nb;

            if cfg.update_mode == UpdateMode::AlgorithmOne {
                let weighted: Vec<f64> = grad_g1.iter().map(|g| cfg.k * g).collect();
                sgd_step(&mut theta_g, &weighted, cfg.alpha);
            }

            // operation-cost term
            let mut batch_loss_g2 = 0.0;
            let mut grad_g2 = vec![0.0; g_spec.param_count()];
            if branch == OpfBranch::Enabled {
                let per_sample: Vec<Result<(f64, Vec<f64>, bool), OpfError>> = batch
                    .par_iter()
                    .enumerate()
                    .map(|(bi, &s)| {
                        let ps = &prepared[s];
                        let field = ErrorField {
                            eps: unflatten_field(&gen_fields[bi], n_nodes, horizon),
                            kind: ErrorKind::Normalized,
                        };
                        match loss_g2(&field, ps.sample, &ps.stats, grid, cfg.scale, cfg.sign) {
                            Ok((loss, sol)) => {
                                let upstream =
                                    g2_upstream_gradient(&sol, &ps.stats, cfg.scale, cfg.sign);
                                Ok((loss, upstream, sol.any_degenerate()))
                            }
                            Err(TrainError::Opf(e)) => Err(e),
                            Err(_) => Err(OpfError::Profile("sample preparation failed".into())),
                        }
                    })
                    .collect();
                for (bi, result) in per_sample.into_iter().enumerate() {
                    match result {
                        Ok((loss, upstream, degenerate)) => {
                            batch_loss_g2 += loss;
                            if degenerate {
                                ep.n_degenerate += 1;
                            }
                            let scaled: Vec<f64> = upstream.iter().map(|u| u / nb).collect();
                            let gg = backward(&g_spec, &theta_g, &gen_tapes[bi], &scaled)?;
                            for (acc, v) in grad_g2.iter_mut().zip(&gg.theta) {
                                *acc += v;
                            }
                        }
                        Err(OpfError::InfeasibleDispatch { .. }) => {
                            ep.n_infeasible += 1;
                            if let InfeasiblePolicy::Penalty { gradient } = cfg.infeasible_policy {
                                let up = vec![gradient * cfg.sign.direction() / nb; data_len];
                                let gg = backward(&g_spec, &theta_g, &gen_tapes[bi], &up)?;
                                for (acc, v) in grad_g2.iter_mut().zip(&gg.theta) {
                                    *acc += v;
                                }
                            }
                        }
                        Err(e) => return Err(TrainError::Opf(e)),
                    }
                }
                batch_loss_g2 /= nb;
                if cfg.update_mode == UpdateMode::AlgorithmOne {
                    let weighted: Vec<f64> = grad_g2.iter().map(|g| (1.0 - cfg.k) * g).collect();
                    sgd_step(&mut theta_g, &weighted, alpha_g2);
                }
            }

            if cfg.update_mode == UpdateMode::Fused {
                let fused: Vec<f64> = grad_g1
                    .iter()
                    .zip(&grad_g2)
                    .map(|(g1, g2)| cfg.k * g1 + (1.0 - cfg.k) * g2)
                    .collect();
                sgd_step(&mut theta_g, &fused, cfg.alpha);
            }

            ep.loss_d += batch_loss_d;
            ep.loss_g1 += batch_loss_g1;
            ep.loss_g2 += batch_loss_g2;
            ep.batches += 1;
        }

        let nb = ep.batches as f64;
        ep.loss_d /= nb;
        ep.loss_g1 /= nb;
        ep.loss_g2 /= nb;
        ep.loss_g = cfg.k * ep.loss_g1 + (1.0 - cfg.k) * ep.loss_g2;
        trace.epochs.push(ep);
    }

    Ok(TrainOutput {
        g_spec,
        theta_g,
        d_spec,
        theta_d,
        trace,
    })
}

/// Draw `n` error fields from a trained generator. Deterministic per seed.
pub fn generate(
    g_spec: &NetSpec,
    theta_g: &NetParams,
    label: Label,
    n: usize,
    noise: NoiseSpec,
    seed: u64,
    n_nodes: usize,
    horizon: usize,
) -> Result<Vec<ErrorField>, NetError> {
    if g_spec.output_dim() != n_nodes * horizon {
        return Err(NetError::DimensionMismatch(format!(
            "generator output {} != {n_nodes}x{horizon}",
            g_spec.output_dim()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let z: Vec<f64> = (0..noise.n_z)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        let (flat, _) = forward(g_spec, theta_g, &z, label)?;
        out.push(ErrorField {
            eps: unflatten_field(&flat, n_nodes, horizon),
            kind: ErrorKind::Normalized,
        });
    }
    Ok(out)
}

/// On-disk bundle of a trained model plus everything needed to use it.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub zones: Vec<String>,
    pub horizon: usize,
    pub n_labels: usize,
    pub noise: NoiseSpec,
    pub scale: ScaleConstants,
    pub sign: SignMode,
    pub g_spec: NetSpec,
    pub theta_g: NetParams,
    pub d_spec: NetSpec,
    pub theta_d: NetParams,
}

impl Checkpoint {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str) -> Result<Checkpoint, NetError> {
        let cp: Checkpoint =
            serde_json::from_str(text).map_err(|e| NetError::Checkpoint(e.to_string()))?;
        if cp.version != 1 {
            return Err(NetError::Checkpoint(format!(
                "unsupported checkpoint version {}",
                cp.version
            )));
        }
        if cp.theta_g.theta.len() != cp.g_spec.param_count()
            || cp.theta_d.theta.len() != cp.d_spec.param_count()
        {
            return Err(NetError::Checkpoint("parameter length mismatch".into()));
        }
        Ok(cp)
    }
}
