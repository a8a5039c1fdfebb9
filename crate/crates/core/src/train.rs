//! Minibatch Adam training of the autoencoder under the PCAE objective, the
//! HAE baseline or plain reconstruction.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{estimate_dim_cumvar_ordered, latent_variances, CumvarOrder, DimEstimate};
use crate::error::{invalid, mismatch, Error, Result};
use crate::geodesic::GeodesicIndex;
use crate::linalg::Matrix;
use crate::network::{adam_step, init_model, AdamState, MlpModel};
use crate::objective::{hae_loss_and_grads, pcae_loss, recon_loss, sample_pair_rounds, IsoVariant, LossBreakdown, Terms};
use crate::scheduler::{init_gammas, GammaSchedule, ScheduleMode, ScheduleSnapshot};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    #[default]
    Pcae,
    Hae,
    ReconOnly,
}

/// Drops one of the two regularizers from the PCAE objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    None,
    VarOnly,
    IsoOnly,
}

impl Ablation {
    pub fn terms(self) -> Terms {
        match self {
            Ablation::None => Terms { var: true, iso: true },
            Ablation::VarOnly => Terms { var: true, iso: false },
            Ablation::IsoOnly => Terms { var: false, iso: true },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    /// Hidden widths of the encoder; the decoder mirrors them.
    pub hidden: Vec<usize>,
    pub latent_dim: usize,
    pub beta: f64,
    pub iso_variant: IsoVariant,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub threshold: f64,
    pub update_period: usize,
    pub schedule_mode: ScheduleMode,
    /// Independent pairings drawn per minibatch for the isometry term.
    pub pair_rounds: usize,
    pub taus: Vec<f64>,
    pub seed: u64,
    pub loss: LossKind,
    pub ablation: Ablation,
    /// Prefix weights for the HAE loss; all ones when absent.
    pub hae_alpha: Option<Vec<f64>>,
    pub cumvar_order: CumvarOrder,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            latent_dim: 16,
            beta: 0.1,
            iso_variant: IsoVariant::AbsSqDiff,
            epochs: 100,
            batch_size: 128,
            learning_rate: 1e-3,
            threshold: crate::scheduler::DEFAULT_THRESHOLD,
            update_period: crate::scheduler::DEFAULT_PERIOD,
            schedule_mode: ScheduleMode::Dynamic,
            pair_rounds: 1,
            taus: vec![0.99],
            seed: 0,
            loss: LossKind::Pcae,
            ablation: Ablation::None,
            hae_alpha: None,
            cumvar_order: CumvarOrder::Index,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.hidden.contains(&0) {
            return Err(invalid("layer widths must be positive"));
        }
        if !(self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(invalid(format!("beta must be finite and nonnegative, got {}", self.beta)));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid(format!("learning rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size < 2 {
            return Err(invalid("batch size must be at least 2"));
        }
        if self.epochs == 0 {
            return Err(invalid("epochs must be at least 1"));
        }
        if self.pair_rounds == 0 {
            return Err(invalid("pair rounds must be at least 1"));
        }
        if self.update_period == 0 {
            return Err(invalid("update period must be at least 1"));
        }
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(invalid(format!("threshold must lie in (0, 1), got {}", self.threshold)));
        }
        if let Some(t) = self.taus.iter().find(|t| !(**t > 0.0 && **t < 1.0)) {
            return Err(invalid(format!("tau must lie in (0, 1), got {t}")));
        }
        if let Some(a) = &self.hae_alpha {
            if a.len() != self.latent_dim {
                return Err(mismatch(format!("{} HAE weights for latent dimension {}", a.len(), self.latent_dim)));
            }
        }
        Ok(())
    }

    fn uses_pairs(&self) -> bool {
        self.loss == LossKind::Pcae && self.ablation.terms().iso
    }

    pub fn encoder_widths(&self, input_dim: usize) -> Vec<usize> {
        std::iter::once(input_dim).chain(self.hidden.iter().copied()).chain([self.latent_dim]).collect()
    }

    pub fn decoder_widths(&self, input_dim: usize) -> Vec<usize> {
        std::iter::once(self.latent_dim).chain(self.hidden.iter().rev().copied()).chain([input_dim]).collect()
    }

    fn schedule(&self) -> Result<GammaSchedule> {
        init_gammas(self.latent_dim)?
            .with_mode(self.schedule_mode)
            .with_threshold(self.threshold)?
            .with_period(self.update_period)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub epochs: Vec<EpochRecord>,
    pub schedule_history: Vec<ScheduleSnapshot>,
    pub final_gammas: Vec<f64>,
    pub final_variances: Vec<f64>,
    pub dim_estimates: Vec<DimEstimate>,
    /// Why training ended before the configured epoch count, if it did.
    pub stopped_early: Option<String>,
}

impl TrainReport {
    pub fn mean_seconds_per_epoch(&self) -> f64 {
        if self.epochs.is_empty() {
            return 0.0;
        }
        self.epochs.iter().map(|e| e.seconds).sum::<f64>() / self.epochs.len() as f64
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: MlpModel,
    pub report: TrainReport,
}

fn finite_breakdown(b: &LossBreakdown) -> bool {
    [b.recon, b.var, b.iso, b.total].iter().all(|v| v.is_finite())
}

/// Trains on the columns of `x`. `index` supplies geodesic targets for the
/// isometry term and must cover exactly those columns.
///
/// A non-finite loss, gradient or parameter stops training; the returned
/// model is the last one with finite parameters and the report says why.
pub fn train(cfg: &TrainConfig, x: &Matrix, index: Option<&GeodesicIndex>) -> Result<TrainOutcome> {
    cfg.validate()?;
    let n = x.cols();
    if n < 2 {
        return Err(invalid("training needs at least 2 samples"));
    }
    if cfg.uses_pairs() {
        let index = index.ok_or_else(|| invalid("the isometry term needs a geodesic index"))?;
        if index.len() != n {
            return Err(mismatch(format!("geodesic index covers {} points, training set has {n}", index.len())));
        }
    }
    let p = x.rows();
    let mut model = init_model(&cfg.encoder_widths(p), &cfg.decoder_widths(p), cfg.seed)?;
    let mut adam = AdamState::for_model(&model, cfg.learning_rate);
    let mut sched = cfg.schedule()?;
    let alpha = cfg.hae_alpha.clone().unwrap_or_else(|| vec![1.0; cfg.latent_dim]);
    let terms = cfg.ablation.terms();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(7);
    let mut order: Vec<usize> = (0..n).collect();
    let mut records = Vec::with_capacity(cfg.epochs);
    let mut history = vec![sched.snapshot()];
    let mut stopped_early = None;

    'epochs: for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::new(0.0, 0.0, 0.0, cfg.beta);
        let mut batches = 0usize;
        for ids in order.chunks(cfg.batch_size) {
            if ids.len() < 2 {
                continue;
            }
            let pair_seed: u64 = rng.random();
            let xb = x.select_columns(ids);
            let (breakdown, grads) = match cfg.loss {
                LossKind::Pcae => {
                    let cache = model.forward_cached(&xb)?;
                    let pairs = if terms.iso {
                        let mut b = sample_pair_rounds(ids, index.expect("checked"), cfg.pair_rounds, pair_seed)?;
                        if cfg.iso_variant == IsoVariant::LogSq {
                            b.retain_positive_targets();
                        }
                        Some(b)
                    } else {
                        None
                    };
                    let (b, g) = match pairs.as_ref().filter(|b| b.is_empty()) {
                        Some(_) => continue,
                        None => pcae_loss(
                            &xb,
                            cache.z(),
                            cache.xhat(),
                            pairs.as_ref(),
                            &sched.gammas,
                            cfg.beta,
                            cfg.iso_variant,
                            terms,
                        ),
                    }
                    .map_err(|e| match e {
                        Error::Domain(msg) => Error::Numerical(msg),
                        other => other,
                    })?;
                    (b, model.backward(&cache, Some(&g.z), Some(&g.xhat))?)
                }
                LossKind::Hae => {
                    let (l, g) = hae_loss_and_grads(&xb, &model, &alpha)?;
                    (LossBreakdown::new(l, 0.0, 0.0, cfg.beta), g)
                }
                LossKind::ReconOnly => {
                    let cache = model.forward_cached(&xb)?;
                    let (l, g) = recon_loss(&xb, cache.xhat())?;
                    (LossBreakdown::new(l, 0.0, 0.0, cfg.beta), model.backward(&cache, None, Some(&g))?)
                }
            };
            if !finite_breakdown(&breakdown) || grads.slices().iter().any(|s| s.iter().any(|v| !v.is_finite())) {
                stopped_early = Some(format!("non-finite loss or gradient in epoch {epoch}"));
                break 'epochs;
            }
            let backup = model.clone();
            adam_step(&mut model, &grads, &mut adam)?;
            if model.params().iter().any(|s| s.iter().any(|v| !v.is_finite())) {
                model = backup;
                stopped_early = Some(format!("non-finite parameters after a step in epoch {epoch}"));
                break 'epochs;
            }
            sum.recon += breakdown.recon;
            sum.var += breakdown.var;
            sum.iso += breakdown.iso;
            batches += 1;
        }
        let k = batches.max(1) as f64;
        let mean = LossBreakdown::new(sum.recon / k, sum.var / k, sum.iso / k, cfg.beta);
        records.push(EpochRecord { epoch, loss: mean, seconds: started.elapsed().as_secs_f64() });
        log::debug!("epoch {epoch}: total {:.6e} recon {:.6e} var {:.6e} iso {:.6e}", mean.total, mean.recon, mean.var, mean.iso);

        if cfg.loss == LossKind::Pcae && terms.var && sched.mode == ScheduleMode::Dynamic && sched.should_update(epoch)
        {
            let vars = latent_variances(&model, x)?;
            sched.update_at(&vars, epoch)?;
            history.push(sched.snapshot());
        }
    }

    let final_variances = latent_variances(&model, x)?;
    let dim_estimates = if final_variances.iter().all(|&v| v == 0.0) {
        Vec::new()
    } else {
        cfg.taus
            .iter()
            .map(|&t| estimate_dim_cumvar_ordered(&final_variances, t, cfg.cumvar_order))
            .collect::<Result<_>>()?
    };
    let report = TrainReport {
        config: cfg.clone(),
        epochs: records,
        schedule_history: history,
        final_gammas: sched.gammas.clone(),
        final_variances,
        dim_estimates,
        stopped_early,
    };
    Ok(TrainOutcome { model, report })
}
