//! Stage schedules and the progressive training loop.
//!
//! Each step: grow the bank if a stage boundary was crossed, pick a virtual
//! depth, build the layer map, then forward, backward and update every slot.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::flops::{step_flops, LossCurve};
use crate::maps::{expand_bank, Expansion, LayerMap};
use crate::model::{ModelConfig, TokenBatch, WeightBank};
use crate::optim::AdamW;
use crate::rng::CounterRng;
use crate::sampler::SamplerSpec;

/// RNG stream used for depth draws; stream 0 is left to weight init.
pub const DEPTH_STREAM: u64 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stage {
    /// First step (1-based) of the stage.
    pub start_step: usize,
    pub n_slots: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StageSchedule {
    stages: Vec<Stage>,
    total_steps: usize,
    target_depth: usize,
}

impl StageSchedule {
    pub fn new(stages: Vec<Stage>, total_steps: usize, target_depth: usize) -> Result<Self> {
        let fail = |msg: alloc::string::String| Err(Error::Schedule(msg));
        let Some(first) = stages.first() else {
            return fail("no stages".into());
        };
        if first.start_step != 1 {
            return fail(format!("first stage must start at step 1, got {}", first.start_step));
        }
        if first.n_slots == 0 {
            return fail("slot counts must be positive".into());
        }
        for w in stages.windows(2) {
            if w[1].start_step <= w[0].start_step {
                return fail(format!(
                    "stage starts must strictly increase: {} then {}",
                    w[0].start_step, w[1].start_step
                ));
            }
            if w[1].n_slots <= w[0].n_slots {
                return fail(format!(
                    "slot counts must strictly increase: {} then {}",
                    w[0].n_slots, w[1].n_slots
                ));
            }
        }
        let last = stages[stages.len() - 1];
        if last.n_slots != target_depth {
            return fail(format!(
                "final stage has {} slots, target depth is {target_depth}",
                last.n_slots
            ));
        }
        if last.start_step > total_steps {
            return fail(format!(
                "stage starting at step {} is beyond the {total_steps} total steps",
                last.start_step
            ));
        }
        Ok(Self {
            stages,
            total_steps,
            target_depth,
        })
    }

    /// One stage at full depth.
    pub fn single(total_steps: usize, target_depth: usize) -> Result<Self> {
        Self::new(
            alloc::vec![Stage {
                start_step: 1,
                n_slots: target_depth,
            }],
            total_steps,
            target_depth,
        )
    }

    /// Convenience constructor from `(start_step, n_slots)` pairs.
    pub fn from_pairs(pairs: &[(usize, usize)], total_steps: usize, target_depth: usize) -> Result<Self> {
        let stages = pairs
            .iter()
            .map(|&(start_step, n_slots)| Stage { start_step, n_slots })
            .collect();
        Self::new(stages, total_steps, target_depth)
    }

    pub fn stages(&self) -> &[Stage] {
        &self.stages
    }

    pub fn total_steps(&self) -> usize {
        self.total_steps
    }

    pub fn target_depth(&self) -> usize {
        self.target_depth
    }

    /// `(stage, n_slots)` for step `t`, stages numbered from 1.
    pub fn stage_of(&self, t: usize) -> Result<(usize, usize)> {
        if t == 0 || t > self.total_steps {
            return Err(Error::StepOutOfRange {
                step: t,
                total: self.total_steps,
            });
        }
        let idx = self.stages.partition_point(|s| s.start_step <= t) - 1;
        Ok((idx + 1, self.stages[idx].n_slots))
    }

    /// Schedule actually followed under `mode`: scratch ignores stages.
    pub fn for_mode(&self, mode: TrainMode) -> Self {
        match mode {
            TrainMode::Scratch => Self::single(self.total_steps, self.target_depth).expect("valid"),
            _ => self.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrainMode {
    /// Sampled virtual depth over shared slots, interpolation growth.
    Apollo,
    /// Full-depth unshared model from the first step.
    Scratch,
    /// Current slots at their own depth, no sampling or sharing.
    StackProgressive,
}

impl TrainMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Apollo => "apollo",
            Self::Scratch => "scratch",
            Self::StackProgressive => "stack_progressive",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        [Self::Apollo, Self::Scratch, Self::StackProgressive]
            .into_iter()
            .find(|m| m.name() == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainSettings {
    pub mode: TrainMode,
    pub sampler: SamplerSpec,
    pub optimizer: AdamW,
    /// How the bank grows at stage boundaries.
    pub expansion: Expansion,
    /// Linear learning-rate ramp over the first steps; 0 disables it.
    pub warmup_steps: usize,
}

impl TrainSettings {
    pub fn new(mode: TrainMode, sampler: SamplerSpec, optimizer: AdamW) -> Self {
        Self {
            mode,
            sampler,
            optimizer,
            expansion: Expansion::Interpolation,
            warmup_steps: 0,
        }
    }

    /// Optimizer with the warmup-scaled learning rate for step `t`.
    pub fn optimizer_at(&self, t: usize) -> AdamW {
        let mut opt = self.optimizer;
        if self.warmup_steps > 0 && t < self.warmup_steps {
            opt.lr *= t as f64 / self.warmup_steps as f64;
        }
        opt
    }
}

/// Telemetry for one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub step: usize,
    pub stage: usize,
    pub n_slots: usize,
    pub depth: usize,
    pub train_loss: f64,
    pub grad_mean: f64,
    pub grad_std: f64,
    pub step_flops: u64,
    pub cum_flops: u64,
    /// The bank grew at the start of this step.
    pub expanded: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub bank: WeightBank,
    /// Last completed step; 0 before training.
    pub step: usize,
    pub stage: usize,
    pub rng: CounterRng,
    pub cum_flops: u64,
}

impl TrainState {
    /// Bank sized for the first stage of `schedule` (already adjusted with
    /// [`StageSchedule::for_mode`]).
    pub fn new(config: &ModelConfig, schedule: &StageSchedule, seed: u64) -> Result<Self> {
        if schedule.target_depth() != config.depth {
            return Err(Error::Schedule(format!(
                "schedule depth {} differs from model depth {}",
                schedule.target_depth(),
                config.depth
            )));
        }
        let bank = WeightBank::init(config, schedule.stages()[0].n_slots, seed)?;
        Ok(Self {
            bank,
            step: 0,
            stage: 1,
            rng: CounterRng::with_stream(seed, DEPTH_STREAM),
            cum_flops: 0,
        })
    }

    /// The model whose validation loss is tracked: full depth through the
    /// shared slots for Apollo, the trained depth otherwise.
    pub fn eval_map(&self, mode: TrainMode) -> LayerMap {
        let n = self.bank.n_slots();
        let depth = self.bank.config().depth;
        match mode {
            TrainMode::Apollo => LayerMap::interpolation(n, depth).expect("n <= depth"),
            TrainMode::Scratch | TrainMode::StackProgressive => LayerMap::identity(n),
        }
    }

    /// Token-weighted mean loss over `batches` with the mode's eval map.
    pub fn validation_loss(&self, mode: TrainMode, batches: &[TokenBatch]) -> Result<f64> {
        mean_loss(&self.bank, &self.eval_map(mode), batches)
    }

    pub fn train_step(
        &mut self,
        schedule: &StageSchedule,
        settings: &TrainSettings,
        batch: &TokenBatch,
    ) -> Result<StepRecord> {
        let t = self.step + 1;
        let (stage, n_slots) = schedule.stage_of(t)?;
        let target = schedule.target_depth();
        let mut expanded = false;
        if stage != self.stage {
            self.bank = expand_bank(self.bank.clone(), n_slots, settings.expansion)?;
            self.stage = stage;
            expanded = true;
        }
        if self.bank.n_slots() != n_slots {
            return Err(Error::Schedule(format!(
                "bank has {} slots, stage {stage} expects {n_slots}",
                self.bank.n_slots()
            )));
        }
        let (depth, map) = match settings.mode {
            TrainMode::Apollo => {
                let pmf = settings.sampler.pmf(n_slots, target)?;
                let depth = pmf.sample(&mut self.rng);
                (depth, LayerMap::interpolation(n_slots, depth)?)
            }
            TrainMode::Scratch => {
                if n_slots != target {
                    return Err(Error::Schedule(format!(
                        "scratch training needs {target} slots, bank has {n_slots}"
                    )));
                }
                (target, LayerMap::identity(target))
            }
            TrainMode::StackProgressive => (n_slots, LayerMap::identity(n_slots)),
        };
        let loss = self.bank.compute_gradients(&map, batch)?;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step: t, depth, loss });
        }
        let stats = self.bank.grad_stats()?;
        settings.optimizer_at(t).step(&mut self.bank)?;
        let flops = step_flops(self.bank.config(), depth, batch.tokens());
        self.cum_flops += flops;
        self.step = t;
        Ok(StepRecord {
            step: t,
            stage,
            n_slots,
            depth,
            train_loss: loss,
            grad_mean: stats.mean,
            grad_std: stats.std,
            step_flops: flops,
            cum_flops: self.cum_flops,
            expanded,
        })
    }
}

/// Token-weighted mean loss of `bank` under `map`.
pub fn mean_loss(bank: &WeightBank, map: &LayerMap, batches: &[TokenBatch]) -> Result<f64> {
    if batches.is_empty() {
        return Err(Error::Empty("validation batches"));
    }
    let mut total = 0.0;
    let mut tokens = 0usize;
    for b in batches {
        let counted = b.targets.iter().filter(|t| t.is_some()).count();
        total += bank.evaluate(map, b)? * counted as f64;
        tokens += counted;
    }
    Ok(total / tokens as f64)
}

/// Supplies training batches and a fixed validation set.
pub trait BatchSource {
    fn next_batch(&mut self) -> TokenBatch;
    fn validation(&self) -> &[TokenBatch];
}

/// Receives step records; `val_loss` is set on evaluation steps.
pub trait MetricSink {
    type Error;

    fn record(&mut self, record: &StepRecord, val_loss: Option<f64>) -> core::result::Result<(), Self::Error>;

    /// Called once if training halts on a non-finite loss.
    fn halted(&mut self, _error: &Error) -> core::result::Result<(), Self::Error> {
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError<E> {
    #[error(transparent)]
    Train(#[from] Error),
    #[error("metric sink failed")]
    Sink(E),
}

/// Runs every remaining step of `schedule`, evaluating before the first
/// step, every `eval_interval` steps, and after the last.
pub fn run_training<B: BatchSource, S: MetricSink>(
    state: &mut TrainState,
    schedule: &StageSchedule,
    settings: &TrainSettings,
    source: &mut B,
    sink: &mut S,
    eval_interval: usize,
) -> core::result::Result<LossCurve, RunError<S::Error>> {
    let mut curve = LossCurve::new();
    if state.step == 0 {
        let loss = state.validation_loss(settings.mode, source.validation())?;
        curve.push(0.0, loss)?;
    }
    while state.step < schedule.total_steps() {
        let batch = source.next_batch();
        let record = match state.train_step(schedule, settings, &batch) {
            Ok(r) => r,
            Err(e) => {
                if matches!(e, Error::NonFiniteLoss { .. }) {
                    sink.halted(&e).map_err(RunError::Sink)?;
                }
                return Err(e.into());
            }
        };
        let evaluate = (eval_interval > 0 && record.step % eval_interval == 0)
            || record.step == schedule.total_steps();
        let val_loss = if evaluate {
            let loss = state.validation_loss(settings.mode, source.validation())?;
            curve.push(state.cum_flops as f64, loss)?;
            Some(loss)
        } else {
            None
        };
        sink.record(&record, val_loss).map_err(RunError::Sink)?;
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_lookup_boundaries() {
        let s = StageSchedule::from_pairs(&[(1, 1), (100, 3)], 200, 3).unwrap();
        assert_eq!(s.stage_of(1).unwrap(), (1, 1));
        assert_eq!(s.stage_of(99).unwrap(), (1, 1));
        assert_eq!(s.stage_of(100).unwrap(), (2, 3));
        assert_eq!(s.stage_of(200).unwrap(), (2, 3));
        assert!(s.stage_of(0).is_err());
        assert!(s.stage_of(201).is_err());
    }

    #[test]
    fn schedule_validation() {
        assert!(StageSchedule::from_pairs(&[(2, 1), (5, 3)], 10, 3).is_err());
        assert!(StageSchedule::from_pairs(&[(1, 1), (1, 3)], 10, 3).is_err());
        assert!(StageSchedule::from_pairs(&[(1, 3), (5, 3)], 10, 3).is_err());
        assert!(StageSchedule::from_pairs(&[(1, 1), (5, 2)], 10, 3).is_err());
        assert!(StageSchedule::from_pairs(&[(1, 1), (11, 3)], 10, 3).is_err());
        assert!(StageSchedule::from_pairs(&[], 10, 3).is_err());
        let ok = StageSchedule::from_pairs(&[(1, 1), (3, 2), (6, 4)], 10, 4).unwrap();
        assert_eq!(ok.for_mode(TrainMode::Scratch).stages(), &[Stage { start_step: 1, n_slots: 4 }]);
        assert_eq!(ok.for_mode(TrainMode::Apollo), ok);
    }

    #[test]
    fn mode_names() {
        for m in [TrainMode::Apollo, TrainMode::Scratch, TrainMode::StackProgressive] {
            assert_eq!(TrainMode::from_name(m.name()), Some(m));
        }
        assert_eq!(TrainMode::from_name("nope"), None);
    }
}
