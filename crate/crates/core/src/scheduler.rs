//! Weighting coefficients for the latent variance penalty.
//!
//! The dynamic scheme starts from an arithmetic ramp `γ_i = 1.9 i / d` and,
//! every `K` epochs, re-centres the weights on the pivot `j`: the first
//! coordinate whose cumulative variance exceeds the fraction `t` of the total.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, mismatch, Result};

pub const DEFAULT_THRESHOLD: f64 = 0.99;
pub const DEFAULT_PERIOD: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleMode {
    /// Piecewise re-assignment around the pivot every `period` epochs.
    #[default]
    Dynamic,
    /// Fixed `γ_i = 1.9 i / d`.
    Arithmetic,
    /// Fixed geometric ramp from `1.9 / d` up to `1.9`.
    Geometric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaSchedule {
    pub gammas: Vec<f64>,
    pub threshold: f64,
    pub period: usize,
    pub last_update_epoch: usize,
    /// 1-based pivot index of the most recent update.
    pub pivot: Option<usize>,
    pub mode: ScheduleMode,
}

/// State after one update, for the training report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleSnapshot {
    pub epoch: usize,
    pub pivot: Option<usize>,
    pub gammas: Vec<f64>,
}

/// `γ_i = 1.9 i / d`, `t = 0.99`, `K = 10`.
pub fn init_gammas(d_latent: usize) -> Result<GammaSchedule> {
    if d_latent == 0 {
        return Err(invalid("latent dimension must be at least 1"));
    }
    let d = d_latent as f64;
    Ok(GammaSchedule {
        gammas: (1..=d_latent).map(|i| 1.9 * i as f64 / d).collect(),
        threshold: DEFAULT_THRESHOLD,
        period: DEFAULT_PERIOD,
        last_update_epoch: 0,
        pivot: None,
        mode: ScheduleMode::Dynamic,
    })
}

/// Smallest 1-based `j` with `Σ_{i≤j} σ_i² > t Σ σ_i²`; `None` when all
/// variances are zero.
pub fn pivot_index(variances: &[f64], threshold: f64) -> Result<Option<usize>> {
    if let Some(v) = variances.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
        return Err(invalid(format!("variance {v} is not a finite nonnegative value")));
    }
    let total: f64 = variances.iter().sum();
    if total == 0.0 {
        return Ok(None);
    }
    let cut = threshold * total;
    let mut acc = 0.0;
    for (i, v) in variances.iter().enumerate() {
        acc += v;
        if acc > cut {
            return Ok(Some(i + 1));
        }
    }
    Ok(Some(variances.len()))
}

/// `γ_i = 0.5 i/(j−1)` for `i < j`, `1` at `i = j`, `1 + 0.5 (i−j)/(d−j)`
/// for `i > j`.
pub fn piecewise_gammas(d: usize, j: usize) -> Result<Vec<f64>> {
    if j == 0 || j > d {
        return Err(invalid(format!("pivot {j} outside 1..={d}")));
    }
    Ok((1..=d)
        .map(|i| {
            if i < j {
                0.5 * i as f64 / (j - 1) as f64
            } else if i == j {
                1.0
            } else {
                1.0 + 0.5 * (i - j) as f64 / (d - j) as f64
            }
        })
        .collect())
}

impl GammaSchedule {
    pub fn with_threshold(mut self, threshold: f64) -> Result<Self> {
        if !(threshold > 0.0 && threshold < 1.0) {
            return Err(invalid(format!("threshold must lie in (0, 1), got {threshold}")));
        }
        self.threshold = threshold;
        Ok(self)
    }

    pub fn with_period(mut self, period: usize) -> Result<Self> {
        if period == 0 {
            return Err(invalid("update period must be at least one epoch"));
        }
        self.period = period;
        Ok(self)
    }

    /// Switches to a static ramp; dynamic updates become no-ops.
    pub fn with_mode(mut self, mode: ScheduleMode) -> Self {
        let d = self.gammas.len();
        self.mode = mode;
        self.gammas = match mode {
            ScheduleMode::Dynamic | ScheduleMode::Arithmetic => {
                (1..=d).map(|i| 1.9 * i as f64 / d as f64).collect()
            }
            ScheduleMode::Geometric if d == 1 => vec![1.9],
            ScheduleMode::Geometric => {
                let lo = 1.0 / d as f64;
                (1..=d).map(|i| 1.9 * lo.powf((d - i) as f64 / (d - 1) as f64)).collect()
            }
        };
        self
    }

    pub fn len(&self) -> usize {
        self.gammas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.gammas.is_empty()
    }

    /// `epoch − last_update_epoch ≥ K`.
    pub fn should_update(&self, epoch: usize) -> bool {
        epoch.saturating_sub(self.last_update_epoch) >= self.period
    }

    pub fn snapshot(&self) -> ScheduleSnapshot {
        ScheduleSnapshot { epoch: self.last_update_epoch, pivot: self.pivot, gammas: self.gammas.clone() }
    }

    /// Applies [`update_gammas`] in place and stamps the epoch.
    pub fn update_at(&mut self, variances: &[f64], epoch: usize) -> Result<()> {
        *self = update_gammas(self, variances)?;
        self.last_update_epoch = epoch;
        Ok(())
    }
}

/// Recomputes the weights from the current per-coordinate variances. All-zero
/// variances leave the schedule unchanged with a warning; static modes never
/// change.
pub fn update_gammas(sched: &GammaSchedule, variances: &[f64]) -> Result<GammaSchedule> {
    if variances.len() != sched.gammas.len() {
        return Err(mismatch(format!("{} variances for {} weights", variances.len(), sched.gammas.len())));
    }
    let j = pivot_index(variances, sched.threshold)?;
    let mut next = sched.clone();
    if sched.mode != ScheduleMode::Dynamic {
        return Ok(next);
    }
    match j {
        None => log::warn!("all latent variances are zero; keeping the current weights"),
        Some(j) => {
            next.gammas = piecewise_gammas(sched.gammas.len(), j)?;
            next.pivot = Some(j);
        }
    }
    Ok(next)
}
