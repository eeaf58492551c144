//! Training loop shared by every optimizer.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::em::{full_batch_em_step, minibatch_em_step_baseline, minibatch_em_step_proposed, momentum_update, MomentumFlows};
use super::gradient::{adam_step, sgd_step, AdamConfig, AdamState};
use super::schedule::cosine_alpha;
use crate::circuit::Circuit;
use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::flows::{backward_flows, gradient_from, td_probs, Reduction};
use crate::inference::dataset_log_likelihood;
use crate::params::Params;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Optimizer {
    FullEm,
    MiniEmBaseline,
    MiniEmProposed,
    Sgd,
    Adam,
}

impl Optimizer {
    pub fn is_minibatch_em(self) -> bool {
        matches!(self, Optimizer::MiniEmBaseline | Optimizer::MiniEmProposed)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub alpha_start: f64,
    pub alpha_end: f64,
    pub batch_size: usize,
    pub eta: f64,
    pub pseudocount: f64,
    pub epochs: usize,
    pub seed: u64,
    /// Sequential flow reduction, so results are bit-reproducible.
    pub deterministic: bool,
    /// Step size for SGD and Adam.
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Record metrics every this many updates; `None` records once per epoch.
    pub eval_every: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            optimizer: Optimizer::MiniEmProposed,
            alpha_start: 0.4,
            alpha_end: 0.08,
            batch_size: 1024,
            eta: 0.0,
            pseudocount: 0.0,
            epochs: 1,
            seed: 0,
            deterministic: false,
            lr: 1e-2,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            eval_every: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if self.optimizer.is_minibatch_em()
            && !(0.0 < self.alpha_end && self.alpha_end <= self.alpha_start && self.alpha_start <= 1.0)
        {
            return fail(format!(
                "need 0 < alpha_end <= alpha_start <= 1, got alpha_start={} alpha_end={}",
                self.alpha_start, self.alpha_end
            ));
        }
        if !(0.0..1.0).contains(&self.eta) {
            return fail(format!("eta must lie in [0, 1), got {}", self.eta));
        }
        if !(self.pseudocount >= 0.0 && self.pseudocount.is_finite()) {
            return fail(format!("pseudocount must be nonnegative, got {}", self.pseudocount));
        }
        if self.batch_size == 0 {
            return fail("batch size must be positive".into());
        }
        if self.epochs == 0 {
            return fail("epochs must be positive".into());
        }
        if self.eval_every == Some(0) {
            return fail("evaluation cadence must be positive".into());
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return fail(format!("learning rate must be nonnegative, got {}", self.lr));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2) && self.eps > 0.0) {
            return fail("Adam needs beta1, beta2 in [0, 1) and eps > 0".into());
        }
        Ok(())
    }

    fn steps_per_epoch(&self, n: usize) -> usize {
        match self.optimizer {
            Optimizer::FullEm => 1,
            _ => n.div_ceil(self.batch_size),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MetricsRow {
    pub samples_consumed: u64,
    pub step: u64,
    pub train_ll: f64,
    pub valid_ll: Option<f64>,
    pub alpha: f64,
}

pub const METRICS_HEADER: &str = "samples_consumed,step,train_ll,valid_ll,alpha";

/// Renders rows as CSV; a missing validation LL is an empty cell.
pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        let valid = r.valid_ll.map(|v| format!("{v:?}")).unwrap_or_default();
        let _ = writeln!(out, "{},{},{:?},{},{:?}", r.samples_consumed, r.step, r.train_ll, valid, r.alpha);
    }
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome<T> {
    pub params: Params<T>,
    pub metrics: Vec<MetricsRow>,
}

/// Runs `cfg.epochs` passes over `train`, shuffling with a seeded RNG each epoch.
pub fn train_loop<T: Scalar>(
    circuit: &Circuit,
    params: &Params<T>,
    train: &Dataset,
    valid: Option<&Dataset>,
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    params.require_normalized()?;
    params.check_len(circuit)?;
    train.check_against(circuit)?;
    if train.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if let Some(v) = valid {
        v.check_against(circuit)?;
        if v.is_empty() {
            return Err(Error::EmptyBatch);
        }
    }

    let reduction = if cfg.deterministic { Reduction::Sequential } else { Reduction::Parallel };
    let n = train.len();
    let per_epoch = cfg.steps_per_epoch(n);
    let total_steps = per_epoch * cfg.epochs;
    let schedule_len = total_steps.saturating_sub(1).max(1);
    let cadence = cfg.eval_every.unwrap_or(per_epoch);

    let alpha_at = |t: usize| match cfg.optimizer {
        Optimizer::FullEm => 1.0,
        Optimizer::Sgd | Optimizer::Adam => cfg.lr,
        _ => cosine_alpha(t, schedule_len, cfg.alpha_start, cfg.alpha_end),
    };
    let record = |p: &Params<T>, samples: u64, step: usize, alpha: f64| -> Result<MetricsRow> {
        let train_ll = dataset_log_likelihood(circuit, p, train)?.as_f64();
        let valid_ll = valid.map(|v| dataset_log_likelihood(circuit, p, v)).transpose()?.map(|v| v.as_f64());
        Ok(MetricsRow { samples_consumed: samples, step: step as u64, train_ll, valid_ll, alpha })
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..n).collect();
    let mut current = params.clone();
    let mut momentum = MomentumFlows::new(circuit);
    let mut adam = AdamState::new(params.len());
    let adam_cfg = AdamConfig { lr: T::lit(cfg.lr), beta1: T::lit(cfg.beta1), beta2: T::lit(cfg.beta2), eps: T::lit(cfg.eps) };
    let mut metrics = vec![record(&current, 0, 0, alpha_at(0))?];
    let mut samples = 0u64;
    let mut step = 0usize;

    for epoch in 0..cfg.epochs {
        if cfg.optimizer != Optimizer::FullEm {
            order.shuffle(&mut rng);
        }
        let batch_len = if cfg.optimizer == Optimizer::FullEm { n } else { cfg.batch_size };
        for chunk in order.chunks(batch_len) {
            let rows = train.select(chunk);
            let alpha = alpha_at(step);
            let flows = backward_flows(circuit, &current, &rows, reduction)?;
            current = match cfg.optimizer {
                Optimizer::FullEm => full_batch_em_step(circuit, &current, &flows, T::lit(cfg.pseudocount))?,
                Optimizer::MiniEmBaseline => {
                    let smoothed = momentum_update(&mut momentum, &flows, T::lit(cfg.eta))?;
                    minibatch_em_step_baseline(circuit, &current, &smoothed, T::lit(alpha))?
                }
                Optimizer::MiniEmProposed => {
                    let smoothed = momentum_update(&mut momentum, &flows, T::lit(cfg.eta))?;
                    let td = td_probs(circuit, &current);
                    minibatch_em_step_proposed(circuit, &current, &smoothed, &td, T::lit(alpha))?
                }
                Optimizer::Sgd => {
                    let grad = gradient_from(&flows, &td_probs(circuit, &current));
                    sgd_step(circuit, &current, &grad, T::lit(cfg.lr))?
                }
                Optimizer::Adam => {
                    let grad = gradient_from(&flows, &td_probs(circuit, &current));
                    adam_step(circuit, &current, &grad, &mut adam, &adam_cfg)?
                }
            };
            samples += rows.len() as u64;
            step += 1;
            if step.is_multiple_of(cadence) || step == total_steps {
                metrics.push(record(&current, samples, step, alpha)?);
                let last = metrics.last().expect("just pushed");
                log::info!(
                    "epoch {} step {step} samples {samples} train_ll {:.6} valid_ll {:?}",
                    epoch + 1,
                    last.train_ll,
                    last.valid_ll
                );
            }
        }
    }
    Ok(TrainOutcome { params: current, metrics })
}
