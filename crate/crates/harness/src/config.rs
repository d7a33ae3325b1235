//! Flat `section.key = value` run configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Every key is
//! optional except `data.corpus` and one of `run.steps` / `run.epochs`.
//! Unknown or repeated keys are errors.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use apollo_core::{
    AdamW, Expansion, ModelConfig, NormPlacement, SamplerKind, SamplerSpec, StageSchedule, TrainMode,
    TrainSettings,
};

use crate::corpus::VOCAB_SIZE;
use crate::error::{HarnessError, Result};

/// Every accepted key, in documentation order.
pub const KEYS: &[&str] = &[
    "model.depth",
    "model.d_model",
    "model.n_heads",
    "model.ffn_ratio",
    "model.seq_len",
    "model.norm",
    "sampler.kind",
    "sampler.k",
    "schedule.slots",
    "schedule.boundary_steps",
    "schedule.boundary_epochs",
    "schedule.expansion",
    "optimizer.lr",
    "optimizer.weight_decay",
    "optimizer.beta1",
    "optimizer.beta2",
    "optimizer.eps",
    "optimizer.warmup_steps",
    "data.corpus",
    "data.split",
    "data.batch_size",
    "data.validation_samples",
    "run.mode",
    "run.seed",
    "run.steps",
    "run.epochs",
    "run.eval_interval",
    "run.out_dir",
    "expand.half_depth",
    "expand.pre_steps",
    "expand.histogram_bins",
    "bench.samplers",
];

#[derive(Debug, Clone, PartialEq)]
pub enum Length {
    Steps(usize),
    Epochs(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Boundaries {
    Steps(Vec<usize>),
    Epochs(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScheduleConfig {
    /// Bank size of each stage.
    pub slots: Vec<usize>,
    /// Start of stages 2.. (steps are 1-based, epochs 0-based).
    pub boundaries: Boundaries,
    pub expansion: Expansion,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DataConfig {
    pub corpus: PathBuf,
    pub split: f64,
    pub batch_size: usize,
    pub validation_samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSection {
    pub mode: TrainMode,
    pub seed: u64,
    pub length: Length,
    pub eval_interval: usize,
    pub out_dir: PathBuf,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpandConfig {
    pub half_depth: Option<usize>,
    /// Training steps for the half-depth model; defaults to the run length.
    pub pre_steps: Option<usize>,
    pub histogram_bins: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub sampler: SamplerSpec,
    pub schedule: ScheduleConfig,
    pub optimizer: AdamW,
    pub warmup_steps: usize,
    pub data: DataConfig,
    pub run: RunSection,
    pub expand: ExpandConfig,
    pub bench_samplers: Vec<SamplerKind>,
}

struct Entries {
    map: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.map.remove(key)
    }

    fn parse<T: std::str::FromStr>(&mut self, key: &str, default: T) -> Result<T> {
        match self.take(key) {
            None => Ok(default),
            Some((line, raw)) => raw
                .parse()
                .map_err(|_| HarnessError::Config(format!("line {line}: {key}: cannot parse `{raw}`"))),
        }
    }

    fn optional<T: std::str::FromStr>(&mut self, key: &str) -> Result<Option<T>> {
        match self.take(key) {
            None => Ok(None),
            Some((line, raw)) => raw
                .parse()
                .map(Some)
                .map_err(|_| HarnessError::Config(format!("line {line}: {key}: cannot parse `{raw}`"))),
        }
    }

    fn list(&mut self, key: &str) -> Result<Option<Vec<usize>>> {
        let Some((line, raw)) = self.take(key) else {
            return Ok(None);
        };
        if raw.trim().is_empty() {
            return Ok(Some(Vec::new()));
        }
        raw.split(',')
            .map(|s| s.trim().parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map(Some)
            .map_err(|_| HarnessError::Config(format!("line {line}: {key}: expected comma-separated integers, got `{raw}`")))
    }
}

fn field_error(key: &str, msg: impl std::fmt::Display) -> HarnessError {
    HarnessError::Config(format!("{key}: {msg}"))
}

impl RunConfig {
    /// Reads and validates `path`; a relative `data.corpus` resolves
    /// against the config file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let cfg = Self::parse(&text, base)?;
        if !cfg.data.corpus.is_file() {
            return Err(field_error(
                "data.corpus",
                format!("no such file: {}", cfg.data.corpus.display()),
            ));
        }
        Ok(cfg)
    }

    /// Parses and validates config text without touching the filesystem.
    pub fn parse(text: &str, base_dir: &Path) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| HarnessError::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(HarnessError::Config(format!("line {}: unknown key `{key}`", i + 1)));
            }
            if map.insert(key.to_string(), (i + 1, value.trim().to_string())).is_some() {
                return Err(HarnessError::Config(format!("line {}: duplicate key `{key}`", i + 1)));
            }
        }
        let mut e = Entries { map };

        let norm = match e.take("model.norm") {
            None => NormPlacement::Pre,
            Some((_, v)) if v == "pre" => NormPlacement::Pre,
            Some((_, v)) if v == "post" => NormPlacement::Post,
            Some((_, v)) => return Err(field_error("model.norm", format!("expected `pre` or `post`, got `{v}`"))),
        };
        let model = ModelConfig {
            depth: e.parse("model.depth", 8)?,
            d_model: e.parse("model.d_model", 64)?,
            n_heads: e.parse("model.n_heads", 4)?,
            ffn_ratio: e.parse("model.ffn_ratio", 4)?,
            vocab_size: VOCAB_SIZE,
            seq_len: e.parse("model.seq_len", 32)?,
            norm_placement: norm,
        };
        model.validate().map_err(|err| field_error("model", err))?;

        let kind = match e.take("sampler.kind") {
            None => SamplerKind::Lvps,
            Some((_, v)) => SamplerKind::from_name(&v)
                .ok_or_else(|| field_error("sampler.kind", format!("expected lvps|es|us|fs|none, got `{v}`")))?,
        };
        let sampler = SamplerSpec::with_k(kind, e.parse("sampler.k", kind.default_k())?);

        let slots = e.list("schedule.slots")?.unwrap_or_else(|| vec![model.depth]);
        let steps = e.list("schedule.boundary_steps")?;
        let epochs = e.list("schedule.boundary_epochs")?;
        let boundaries = match (steps, epochs) {
            (Some(_), Some(_)) => {
                return Err(field_error(
                    "schedule.boundary_steps",
                    "set either boundary_steps or boundary_epochs, not both",
                ))
            }
            (Some(s), None) => Boundaries::Steps(s),
            (None, Some(ep)) => Boundaries::Epochs(ep),
            (None, None) => Boundaries::Steps(Vec::new()),
        };
        let expansion = match e.take("schedule.expansion") {
            None => Expansion::Interpolation,
            Some((_, v)) if v == "interpolation" => Expansion::Interpolation,
            Some((_, v)) if v == "stack" => Expansion::Stack,
            Some((_, v)) => {
                return Err(field_error(
                    "schedule.expansion",
                    format!("expected `interpolation` or `stack`, got `{v}`"),
                ))
            }
        };

        let defaults = AdamW::default();
        let optimizer = AdamW {
            lr: e.parse("optimizer.lr", defaults.lr)?,
            weight_decay: e.parse("optimizer.weight_decay", defaults.weight_decay)?,
            beta1: e.parse("optimizer.beta1", defaults.beta1)?,
            beta2: e.parse("optimizer.beta2", defaults.beta2)?,
            eps: e.parse("optimizer.eps", defaults.eps)?,
        };
        let warmup_steps = e.parse("optimizer.warmup_steps", 0)?;

        let corpus = match e.take("data.corpus") {
            Some((_, v)) => base_dir.join(v),
            None => return Err(field_error("data.corpus", "required")),
        };
        let data = DataConfig {
            corpus,
            split: e.parse("data.split", 0.9)?,
            batch_size: e.parse("data.batch_size", 8)?,
            validation_samples: e.parse("data.validation_samples", 500)?,
        };

        let mode = match e.take("run.mode") {
            None => TrainMode::Apollo,
            Some((_, v)) => TrainMode::from_name(&v)
                .ok_or_else(|| field_error("run.mode", format!("expected apollo|scratch|stack_progressive, got `{v}`")))?,
        };
        let length = match (e.optional::<usize>("run.steps")?, e.optional::<usize>("run.epochs")?) {
            (Some(_), Some(_)) => return Err(field_error("run.steps", "set either run.steps or run.epochs, not both")),
            (Some(s), None) => Length::Steps(s),
            (None, Some(ep)) => Length::Epochs(ep),
            (None, None) => return Err(field_error("run.steps", "one of run.steps or run.epochs is required")),
        };
        let run = RunSection {
            mode,
            seed: e.parse("run.seed", 0)?,
            length,
            eval_interval: e.parse("run.eval_interval", 50)?,
            out_dir: base_dir.join(e.parse::<String>("run.out_dir", "out".into())?),
        };

        let expand = ExpandConfig {
            half_depth: e.optional("expand.half_depth")?,
            pre_steps: e.optional("expand.pre_steps")?,
            histogram_bins: e.parse("expand.histogram_bins", 32)?,
        };
        let bench_samplers = match e.take("bench.samplers") {
            None => SamplerKind::ALL.to_vec(),
            Some((_, v)) => v
                .split(',')
                .map(|s| {
                    SamplerKind::from_name(s.trim())
                        .ok_or_else(|| field_error("bench.samplers", format!("unknown sampler `{}`", s.trim())))
                })
                .collect::<Result<_>>()?,
        };

        debug_assert!(e.map.is_empty(), "unconsumed keys: {:?}", e.map.keys());
        let cfg = Self {
            model,
            sampler,
            schedule: ScheduleConfig {
                slots,
                boundaries,
                expansion,
            },
            optimizer,
            warmup_steps,
            data,
            run,
            expand,
            bench_samplers,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    fn validate(&self) -> Result<()> {
        let d = &self.data;
        if !(d.split > 0.0 && d.split < 1.0) {
            return Err(field_error("data.split", format!("must lie in (0, 1), got {}", d.split)));
        }
        if d.batch_size == 0 {
            return Err(field_error("data.batch_size", "must be >= 1"));
        }
        if d.validation_samples == 0 {
            return Err(field_error("data.validation_samples", "must be >= 1"));
        }
        match self.run.length {
            Length::Steps(0) => return Err(field_error("run.steps", "must be >= 1")),
            Length::Epochs(0) => return Err(field_error("run.epochs", "must be >= 1")),
            _ => {}
        }
        let s = &self.schedule;
        let n_bounds = match &s.boundaries {
            Boundaries::Steps(b) | Boundaries::Epochs(b) => b.len(),
        };
        if n_bounds + 1 != s.slots.len() {
            return Err(field_error(
                "schedule.slots",
                format!("{} stages need {} boundaries, got {n_bounds}", s.slots.len(), s.slots.len() - 1),
            ));
        }
        let opt = &self.optimizer;
        if !(opt.lr > 0.0) || !(opt.weight_decay >= 0.0) || !(0.0..1.0).contains(&opt.beta1) || !(0.0..1.0).contains(&opt.beta2) || !(opt.eps > 0.0)
        {
            return Err(field_error("optimizer", "need lr > 0, weight_decay >= 0, betas in [0, 1), eps > 0"));
        }
        self.sampler
            .pmf(1.min(self.model.depth), self.model.depth)
            .map_err(|err| field_error("sampler.k", err))?;
        if self.expand.histogram_bins < 2 {
            return Err(field_error("expand.histogram_bins", "must be >= 2"));
        }
        // schedule shape, independent of the epoch length
        self.stage_schedule(1).map(|_| ())
    }

    pub fn total_steps(&self, steps_per_epoch: usize) -> usize {
        match self.run.length {
            Length::Steps(s) => s,
            Length::Epochs(e) => e * steps_per_epoch,
        }
    }

    /// Stage schedule in steps; epoch boundary `e` starts at step
    /// `e·steps_per_epoch + 1`.
    pub fn stage_schedule(&self, steps_per_epoch: usize) -> Result<StageSchedule> {
        let starts: Vec<usize> = match &self.schedule.boundaries {
            Boundaries::Steps(b) => b.clone(),
            Boundaries::Epochs(b) => b.iter().map(|e| e * steps_per_epoch + 1).collect(),
        };
        let pairs: Vec<(usize, usize)> = std::iter::once(1)
            .chain(starts)
            .zip(self.schedule.slots.iter().copied())
            .collect();
        StageSchedule::from_pairs(&pairs, self.total_steps(steps_per_epoch), self.model.depth)
            .map_err(|err| field_error("schedule", err))
    }

    pub fn settings(&self) -> TrainSettings {
        TrainSettings {
            expansion: self.schedule.expansion,
            warmup_steps: self.warmup_steps,
            ..TrainSettings::new(self.run.mode, self.sampler, self.optimizer)
        }
    }
}
