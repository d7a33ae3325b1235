//! Subcommand implementations, usable without the CLI.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use apollo_core::flops::expected_step_flops;
use apollo_core::model::Histogram;
use apollo_core::scheduler::mean_loss;
use apollo_core::{
    expand_bank, run_training, saving_ratio, BatchSource, CounterRng, Expansion, LayerMap, LossCurve, RunError,
    Saving, SamplerKind, SamplerSpec, StageSchedule, TrainMode, TrainSettings, TrainState, WeightBank,
};
use serde::Serialize;

use crate::checkpoint;
use crate::config::RunConfig;
use crate::corpus::load_corpus;
use crate::data::{steps_per_epoch, CorpusBatches};
use crate::error::{HarnessError, Result};
use crate::metrics::{write_curve, write_json, JsonlSink, MetricsRecord};

pub struct Prepared {
    pub source: CorpusBatches,
    pub steps_per_epoch: usize,
}

pub fn prepare(cfg: &RunConfig) -> Result<Prepared> {
    let corpus = load_corpus(&cfg.data.corpus, cfg.data.split)?;
    let spe = steps_per_epoch(corpus.train.len(), cfg.data.batch_size, cfg.model.seq_len);
    if spe == 0 && matches!(cfg.run.length, crate::config::Length::Epochs(_)) {
        return Err(HarnessError::Config(
            "run.epochs: corpus is shorter than one batch, so an epoch has no steps".into(),
        ));
    }
    let source = CorpusBatches::new(
        corpus,
        cfg.model.seq_len,
        cfg.data.batch_size,
        cfg.data.validation_samples,
        cfg.run.seed,
    )?;
    Ok(Prepared {
        source,
        steps_per_epoch: spe,
    })
}

pub struct RunOutcome {
    pub state: TrainState,
    pub curve: LossCurve,
    pub records: Vec<MetricsRecord>,
    pub schedule: StageSchedule,
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| HarnessError::io(dir, e))
}

#[derive(Serialize)]
struct HaltReport<'a> {
    error: String,
    last_step: usize,
    records: &'a [MetricsRecord],
}

/// One training run. With `out_dir`, writes `metrics.jsonl`, `curve.json`
/// and `final.aplo` there (or `halt.json` on a non-finite loss).
pub fn train_run(cfg: &RunConfig, settings: &TrainSettings, out_dir: Option<&Path>) -> Result<RunOutcome> {
    let Prepared {
        mut source,
        steps_per_epoch,
    } = prepare(cfg)?;
    let schedule = cfg.stage_schedule(steps_per_epoch)?.for_mode(settings.mode);
    let mut state = TrainState::new(&cfg.model, &schedule, cfg.run.seed)?;

    let metrics_path = out_dir.map(|d| d.join("metrics.jsonl"));
    let writer: Box<dyn Write> = match (&metrics_path, out_dir) {
        (Some(path), Some(dir)) => {
            create_dir(dir)?;
            Box::new(BufWriter::new(File::create(path).map_err(|e| HarnessError::io(path, e))?))
        }
        _ => Box::new(std::io::sink()),
    };
    let mut sink = JsonlSink::new(writer, steps_per_epoch);
    let result = run_training(
        &mut state,
        &schedule,
        settings,
        &mut source,
        &mut sink,
        cfg.run.eval_interval,
    );
    let metrics_err = |e: std::io::Error| HarnessError::io(metrics_path.clone().unwrap_or_default(), e);
    let curve = match result {
        Ok(curve) => curve,
        Err(RunError::Sink(e)) => return Err(metrics_err(e)),
        Err(RunError::Train(e)) => {
            if let (Some(dir), Some(halt)) = (out_dir, &sink.halt) {
                write_json(
                    &dir.join("halt.json"),
                    &HaltReport {
                        error: halt.to_string(),
                        last_step: state.step,
                        records: &sink.records,
                    },
                )?;
            }
            return Err(e.into());
        }
    };
    let records = std::mem::take(&mut sink.records);
    sink.into_inner().flush().map_err(metrics_err)?;
    state.bank.clear_gradients();
    if let Some(dir) = out_dir {
        write_curve(&dir.join("curve.json"), &curve)?;
        checkpoint::save(&dir.join("final.aplo"), &state)?;
    }
    Ok(RunOutcome {
        state,
        curve,
        records,
        schedule,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramReport {
    pub min: f64,
    pub max: f64,
    pub counts: Vec<u64>,
}

impl From<Histogram> for HistogramReport {
    fn from(h: Histogram) -> Self {
        Self {
            min: h.min,
            max: h.max,
            counts: h.counts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub depth: usize,
    pub n_slots: usize,
    pub val_loss: f64,
    pub grad_mean: f64,
    pub grad_std: f64,
    pub histogram: HistogramReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExpandReport {
    pub half_depth: usize,
    pub depth: usize,
    pub pre_steps: usize,
    pub pre_expansion: ConditionReport,
    pub stack_expanded: ConditionReport,
    pub interpolation_expanded: ConditionReport,
    pub random_init: ConditionReport,
}

fn condition(bank: &WeightBank, source: &CorpusBatches, bins: usize) -> Result<ConditionReport> {
    let map = LayerMap::identity(bank.n_slots());
    let held_out = &source.validation()[0];
    let mut probe = bank.clone();
    probe.compute_gradients(&map, held_out)?;
    let stats = probe.grad_stats()?;
    Ok(ConditionReport {
        depth: map.depth(),
        n_slots: bank.n_slots(),
        val_loss: mean_loss(bank, &map, source.validation())?,
        grad_mean: stats.mean,
        grad_std: stats.std,
        histogram: bank.activation_histogram(&map, held_out, bins)?.into(),
    })
}

/// Trains a half-depth model, grows it to full depth by stacking and by
/// interpolation, and measures all of them next to a fresh full-depth model.
pub fn expand_analyze(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<ExpandReport> {
    let depth = cfg.model.depth;
    let half = match cfg.expand.half_depth {
        Some(h) if h >= 1 && h <= depth => h,
        Some(h) => return Err(HarnessError::Config(format!("expand.half_depth: {h} not in [1, {depth}]"))),
        None if depth.is_multiple_of(2) => depth / 2,
        None => {
            return Err(HarnessError::Config(format!(
                "expand.half_depth: model.depth {depth} is odd; set the half depth explicitly"
            )))
        }
    };
    let Prepared {
        mut source,
        steps_per_epoch,
    } = prepare(cfg)?;
    let pre_steps = cfg.expand.pre_steps.unwrap_or_else(|| cfg.total_steps(steps_per_epoch));

    let mut half_model = cfg.model.clone();
    half_model.depth = half;
    let schedule = StageSchedule::single(pre_steps, half)?;
    let mut state = TrainState::new(&half_model, &schedule, cfg.run.seed)?;
    let settings = TrainSettings {
        mode: TrainMode::Scratch,
        ..cfg.settings()
    };
    while state.step < pre_steps {
        let batch = source.next_batch();
        state.train_step(&schedule, &settings, &batch)?;
    }
    let trained = state.bank;
    let bins = cfg.expand.histogram_bins;

    let full_bank = WeightBank::from_parts(
        cfg.model.clone(),
        trained.slots.clone(),
        trained.token_embedding.clone(),
        trained.position_embedding.clone(),
        (trained.final_norm_gain.clone(), trained.final_norm_bias.clone()),
        trained.step,
    )?;
    let stacked = expand_bank(full_bank.clone(), depth, Expansion::Stack)?;
    let interpolated = expand_bank(full_bank, depth, Expansion::Interpolation)?;
    let random = WeightBank::init(&cfg.model, depth, cfg.run.seed)?;

    let report = ExpandReport {
        half_depth: half,
        depth,
        pre_steps,
        pre_expansion: condition(&trained, &source, bins)?,
        stack_expanded: condition(&stacked, &source, bins)?,
        interpolation_expanded: condition(&interpolated, &source, bins)?,
        random_init: condition(&random, &source, bins)?,
    };
    if let Some(dir) = out_dir {
        create_dir(dir)?;
        write_json(&dir.join("report.json"), &report)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchRun {
    pub sampler: String,
    pub k: f64,
    /// `None` when the baseline's final loss was never reached.
    pub saving: Option<f64>,
    pub status: &'static str,
    pub final_val_loss: f64,
    pub total_flops: f64,
    #[serde(skip)]
    pub curve: LossCurve,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StageFlops {
    pub stage: usize,
    pub n_slots: usize,
    pub start_step: usize,
    /// Expected training FLOPs of one step, by sampler.
    pub expected_step_flops: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub baseline_final_val_loss: f64,
    pub baseline_total_flops: f64,
    pub runs: Vec<BenchRun>,
    pub expected_step_flops: Vec<StageFlops>,
    #[serde(skip)]
    pub baseline_curve: LossCurve,
}

fn spec_for(cfg: &RunConfig, kind: SamplerKind) -> SamplerSpec {
    if kind == cfg.sampler.kind {
        cfg.sampler
    } else {
        SamplerSpec::new(kind)
    }
}

/// Expected per-step FLOPs of every configured sampler in every stage.
pub fn stage_flops(cfg: &RunConfig, schedule: &StageSchedule) -> Result<Vec<StageFlops>> {
    let tokens = cfg.data.batch_size * cfg.model.seq_len;
    schedule
        .stages()
        .iter()
        .enumerate()
        .map(|(i, st)| {
            let expected_step_flops = cfg
                .bench_samplers
                .iter()
                .map(|&kind| {
                    let pmf = spec_for(cfg, kind).pmf(st.n_slots, cfg.model.depth)?;
                    Ok((kind.name().to_string(), expected_step_flops(&cfg.model, &pmf, tokens)))
                })
                .collect::<Result<_>>()?;
            Ok(StageFlops {
                stage: i + 1,
                n_slots: st.n_slots,
                start_step: st.start_step,
                expected_step_flops,
            })
        })
        .collect()
}

/// Scratch baseline plus one progressive run per configured sampler, all
/// with the config's seed; each run's files go to `out/<name>/`.
pub fn sampler_bench(cfg: &RunConfig, out_dir: Option<&Path>) -> Result<BenchReport> {
    let sub = |name: &str| out_dir.map(|d| d.join(name));
    let base_settings = TrainSettings {
        mode: TrainMode::Scratch,
        ..cfg.settings()
    };
    let baseline = train_run(cfg, &base_settings, sub("scratch").as_deref())?;
    let (Some(base_loss), Some(base_flops)) = (baseline.curve.final_loss(), baseline.curve.total_flops()) else {
        return Err(apollo_core::Error::Empty("baseline curve").into());
    };
    let schedule = cfg.stage_schedule(prepare(cfg)?.steps_per_epoch)?;
    let mut runs = Vec::new();
    for &kind in &cfg.bench_samplers {
        let spec = spec_for(cfg, kind);
        let settings = TrainSettings {
            mode: TrainMode::Apollo,
            sampler: spec,
            ..cfg.settings()
        };
        let run = train_run(cfg, &settings, sub(kind.name()).as_deref())?;
        let saving = saving_ratio(&run.curve, &baseline.curve)?;
        runs.push(BenchRun {
            sampler: kind.name().to_string(),
            k: spec.k,
            saving: saving.value(),
            status: match saving {
                Saving::Reached(_) => "reached",
                Saving::NotReached => "not-reached",
            },
            final_val_loss: run.curve.final_loss().unwrap_or(f64::NAN),
            total_flops: run.curve.total_flops().unwrap_or(0.0),
            curve: run.curve,
        });
    }
    let report = BenchReport {
        baseline_final_val_loss: base_loss,
        baseline_total_flops: base_flops,
        runs,
        expected_step_flops: stage_flops(cfg, &schedule)?,
        baseline_curve: baseline.curve,
    };
    if let Some(dir) = out_dir {
        write_json(&dir.join("report.json"), &report)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DepthDump {
    pub sampler: String,
    pub k: f64,
    pub floor: usize,
    pub depth: usize,
    pub expected_depth: f64,
    pub draws: usize,
    pub seed: u64,
    /// `(depth, probability)` pairs.
    pub pmf: Vec<(usize, f64)>,
    /// `(depth, empirical frequency)` pairs.
    pub frequencies: Vec<(usize, f64)>,
}

pub fn sample_depth(spec: SamplerSpec, floor: usize, depth: usize, draws: usize, seed: u64) -> Result<DepthDump> {
    let pmf = spec.pmf(floor, depth)?;
    let mut rng = CounterRng::with_stream(seed, apollo_core::scheduler::DEPTH_STREAM);
    let mut counts = vec![0usize; depth - floor + 1];
    for _ in 0..draws {
        counts[pmf.sample(&mut rng) - floor] += 1;
    }
    Ok(DepthDump {
        sampler: spec.kind.name().to_string(),
        k: spec.k,
        floor,
        depth,
        expected_depth: pmf.expected_depth(),
        draws,
        seed,
        pmf: pmf.iter().collect(),
        frequencies: counts
            .iter()
            .enumerate()
            .map(|(i, &c)| (floor + i, c as f64 / draws.max(1) as f64))
            .collect(),
    })
}

pub fn compare(candidate: &Path, baseline: &Path) -> Result<Saving> {
    let c = crate::metrics::read_curve(candidate)?;
    let b = crate::metrics::read_curve(baseline)?;
    Ok(saving_ratio(&c, &b)?)
}

/// Output directory: the `--out` override or the config's `run.out_dir`.
pub fn out_dir(cfg: &RunConfig, overridden: Option<PathBuf>) -> PathBuf {
    overridden.unwrap_or_else(|| cfg.run.out_dir.clone())
}
