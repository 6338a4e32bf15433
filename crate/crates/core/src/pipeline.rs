//! End-to-end workflows behind the command-line subcommands: data
//! generation, training, evaluation, planning, closed-loop simulation and
//! transfer fine-tuning. Every function is deterministic given the run
//! configuration.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::canonical::{
    evaluate_loss, predict_rollout, train_with_progress, transfer_finetune, AutoEncoder, Checkpoint,
    LossHistory, LossReport, TrainOptions, TrainingMetadata,
};
use crate::config::{RunConfig, SystemConfig, TransferConfig};
use crate::control::{plan_trajectory, ClosedLoopController, ClosedLoopTrace, TrackingMetrics, TrajectoryPlan};
use crate::datastore::{
    generate_dataset, load_dataset, normalize_with, sample_trajectory, save_dataset, split, Dataset, Normalization,
    Sample,
};
use crate::error::{Error, Result};
use crate::plot::{LinePlot, Series};

/// Attempts allowed when drawing held-out evaluation trajectories.
const HELD_OUT_ATTEMPTS: u64 = 10_000;
/// Streams for held-out trajectories start here so they never coincide with
/// the streams used for the training data.
const HELD_OUT_STREAM: u64 = 1 << 40;

/// File names inside a run's output directory.
pub mod files {
    pub const DATASET: &str = "dataset.csv";
    pub const CHECKPOINT: &str = "checkpoint.json";
    pub const LOSS_HISTORY: &str = "loss_history.csv";
    pub const LOSS_PLOT: &str = "loss.svg";
    pub const EVAL: &str = "eval.json";
    pub const ROLLOUT: &str = "rollout.csv";
    pub const ROLLOUT_PLOT: &str = "rollout.svg";
    pub const PLAN: &str = "plan.csv";
    pub const PLAN_PLOT: &str = "plan.svg";
    pub const TRACE: &str = "trace.csv";
    pub const TRACE_PLOT: &str = "trace.svg";
    pub const TRANSFER_DATASET: &str = "transfer_dataset.csv";
    pub const TRANSFER_CHECKPOINT: &str = "transfer_checkpoint.json";
    pub const TRANSFER_HISTORY: &str = "transfer_loss_history.csv";
    pub const TRACE_BEFORE: &str = "trace_before.csv";
    pub const TRACE_AFTER: &str = "trace_after.csv";
    pub const TRANSFER_PLOT: &str = "transfer.svg";
}

pub fn generate(cfg: &RunConfig) -> Result<Dataset> {
    let sys = cfg.system.build()?;
    let n = sys.state_dim();
    generate_dataset(
        sys.as_ref(),
        &cfg.policy(),
        cfg.dataset.trajectories,
        cfg.dataset.trajectory_length,
        &cfg.dataset.safety_box(n),
    )
}

/// Trajectory-wise split of a physical dataset, both parts normalized with
/// the dataset's constants.
pub fn split_normalized(cfg: &RunConfig, ds: &Dataset) -> Result<(Dataset, Dataset)> {
    let (train, val) = split(ds, cfg.training.options.split, cfg.seeds().split)?;
    Ok((
        normalize_with(&train, &ds.normalization),
        normalize_with(&val, &ds.normalization),
    ))
}

pub fn initial_autoencoder(cfg: &RunConfig, normalization: Normalization) -> Result<AutoEncoder> {
    AutoEncoder::new(
        cfg.system.state_dim(),
        cfg.network.hidden,
        cfg.network.activation,
        cfg.seeds().network,
        normalization,
    )
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: LossHistory,
    pub train: Dataset,
    pub validation: Dataset,
}

fn progress_logger(epochs: usize) -> impl FnMut(&crate::canonical::EpochRecord) {
    let every = (epochs / 20).max(1);
    move |r| {
        if r.train.epoch % every == 0 || r.train.epoch == 1 {
            log::info!(
                "epoch {:>6}  train {:.4e}  val {:.4e}",
                r.train.epoch,
                r.train.total,
                r.validation.total
            );
        }
    }
}

/// Train a fresh auto-encoder on a physical dataset.
pub fn train_model(cfg: &RunConfig, ds: &Dataset) -> Result<TrainOutcome> {
    train_model_with(cfg, ds, &cfg.train_options())
}

pub fn train_model_with(cfg: &RunConfig, ds: &Dataset, opts: &TrainOptions) -> Result<TrainOutcome> {
    if ds.normalized {
        return Err(Error::invalid("dataset", "expected physical (unnormalized) samples"));
    }
    let (train, validation) = split_normalized(cfg, ds)?;
    let ae = initial_autoencoder(cfg, ds.normalization.clone())?;
    let w = cfg.training.loss_weights;
    let (ae, history) = train_with_progress(&ae, &train, &validation, &w, opts, progress_logger(opts.epochs))?;
    let checkpoint = Checkpoint {
        ae,
        loss_weights: w,
        training: metadata(opts, ds, &history, &cfg.name),
    };
    Ok(TrainOutcome {
        checkpoint,
        history,
        train,
        validation,
    })
}

fn metadata(opts: &TrainOptions, ds: &Dataset, history: &LossHistory, note: &str) -> TrainingMetadata {
    TrainingMetadata {
        epochs: history.epochs.len(),
        seed: opts.seed,
        dataset_fingerprint: ds.policy_fingerprint.clone(),
        samples: ds.len(),
        final_train_total: history.last().map(|r| r.train.total),
        final_validation_total: history.last().map(|r| r.validation.total),
        note: note.to_string(),
    }
}

/// Per-channel RMSE divided by the channel scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionError {
    pub state: Vec<f64>,
    pub input: f64,
}

impl ReconstructionError {
    pub fn worst(&self) -> f64 {
        self.state.iter().copied().fold(self.input, f64::max)
    }
}

/// Auto-encoder reconstruction error over physical samples.
pub fn reconstruction_error(ae: &AutoEncoder, samples: &[Sample]) -> Result<ReconstructionError> {
    let n = ae.n();
    let norm = &ae.normalization;
    let mut sx = vec![0.0; n];
    let mut su = 0.0;
    for s in samples {
        let (x_hat, u_hat) = ae.reconstruct(&s.x, s.u)?;
        for i in 0..n {
            sx[i] += (x_hat[i] - s.x[i]).powi(2);
        }
        su += (u_hat - s.u).powi(2);
    }
    let count = samples.len().max(1) as f64;
    Ok(ReconstructionError {
        state: sx
            .iter()
            .zip(&norm.x_scale)
            .map(|(e, scale)| (e / count).sqrt() / scale)
            .collect(),
        input: (su / count).sqrt() / norm.u_scale,
    })
}

/// A held-out trajectory and the identified model's feed-forward prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout {
    pub truth: Vec<Vec<f64>>,
    pub inputs: Vec<f64>,
    pub predicted: Vec<Vec<f64>>,
    /// RMSE over all steps and channels, each channel divided by its scale.
    pub normalized_rmse: f64,
}

/// Draw `count` fresh trajectories of `steps` steps from the configured
/// excitation, on streams disjoint from the training data.
pub fn held_out_trajectories(cfg: &RunConfig, count: usize, steps: usize) -> Result<Vec<Vec<Sample>>> {
    let sys = cfg.system.build()?;
    let policy = cfg.policy();
    let safety = cfg.dataset.safety_box(sys.state_dim());
    let mut out = Vec::with_capacity(count);
    let mut attempt = 0;
    while out.len() < count {
        if attempt >= HELD_OUT_ATTEMPTS {
            return Err(Error::DiscardRate {
                discarded: attempt as usize - out.len(),
                attempted: attempt as usize,
            });
        }
        if let Some(t) = sample_trajectory(sys.as_ref(), &policy, &safety, HELD_OUT_STREAM + attempt, out.len(), steps)? {
            out.push(t);
        }
        attempt += 1;
    }
    Ok(out)
}

pub fn rollout(ae: &AutoEncoder, trajectory: &[Sample]) -> Result<Rollout> {
    let first = trajectory
        .first()
        .ok_or_else(|| Error::invalid("trajectory", "must not be empty"))?;
    let mut truth: Vec<Vec<f64>> = vec![first.x.clone()];
    truth.extend(trajectory.iter().map(|s| s.x_plus.clone()));
    let inputs: Vec<f64> = trajectory.iter().map(|s| s.u).collect();
    let predicted = predict_rollout(ae, &first.x, &inputs)?;
    let scale = &ae.normalization.x_scale;
    let mut acc = 0.0;
    let mut count = 0usize;
    for (p, t) in predicted.iter().zip(&truth).skip(1) {
        for i in 0..p.len() {
            acc += ((p[i] - t[i]) / scale[i]).powi(2);
            count += 1;
        }
    }
    Ok(Rollout {
        truth,
        inputs,
        predicted,
        normalized_rmse: (acc / count.max(1) as f64).sqrt(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub validation: LossReport,
    pub reconstruction: ReconstructionError,
    pub rollout_steps: usize,
    pub rollout_rmse: Vec<f64>,
}

/// Validation losses, reconstruction error on the validation samples and
/// rollouts on fresh held-out trajectories.
pub fn evaluate(
    cfg: &RunConfig,
    ae: &AutoEncoder,
    validation_physical: &Dataset,
    rollouts: usize,
    steps: usize,
) -> Result<(EvalReport, Vec<Rollout>)> {
    let val_n = normalize_with(validation_physical, &ae.normalization);
    let w = cfg.training.loss_weights;
    let validation = evaluate_loss(ae, &val_n.samples, &w)?;
    let reconstruction = reconstruction_error(ae, &validation_physical.samples)?;
    let runs = held_out_trajectories(cfg, rollouts, steps)?
        .iter()
        .map(|t| rollout(ae, t))
        .collect::<Result<Vec<_>>>()?;
    Ok((
        EvalReport {
            validation,
            reconstruction,
            rollout_steps: steps,
            rollout_rmse: runs.iter().map(|r| r.normalized_rmse).collect(),
        },
        runs,
    ))
}

/// Plan between two physical states through the current state encoder.
pub fn plan_between(ae: &AutoEncoder, start: &[f64], goal: &[f64], horizon: usize) -> Result<TrajectoryPlan> {
    plan_trajectory(&ae.encode_state(start)?, &ae.encode_state(goal)?, horizon)
}

pub fn controller<'a>(cfg: &RunConfig, ae: &'a AutoEncoder) -> Result<ClosedLoopController<&'a AutoEncoder>> {
    let plan = plan_between(ae, &cfg.control.start, &cfg.control.goal, cfg.control.horizon)?;
    ClosedLoopController::new(ae, cfg.control.gains()?, plan)
}

/// Closed loop of the configured scenario on `system`.
pub fn closed_loop(cfg: &RunConfig, system: &SystemConfig, ae: &AutoEncoder) -> Result<ClosedLoopTrace> {
    let sys = system.build()?;
    let ctrl = controller(cfg, ae)?;
    crate::control::run_closed_loop(sys.as_ref(), &ctrl, &cfg.control.initial_state(), cfg.control.steps())
}

/// Summary of one closed-loop run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoopSummary {
    pub tracking: TrackingMetrics,
    /// `|x(N) − goal|` on the first state channel, at the plan horizon.
    pub terminal_error: f64,
    pub final_state: Vec<f64>,
}

pub fn summarize(cfg: &RunConfig, trace: &ClosedLoopTrace) -> LoopSummary {
    let k = cfg.control.horizon.min(trace.states.len() - 1);
    LoopSummary {
        tracking: trace.metrics(),
        terminal_error: (trace.states[k][0] - cfg.control.goal[0]).abs(),
        final_state: trace.final_state().to_vec(),
    }
}

/// Record closed-loop experiments with the given controller on `system`.
///
/// Experiment `e` uses stream `e` of a generator seeded with `seed`: random
/// start and goal positions, a random initial offset and held uniform input
/// noise. Runs whose state or input turn non-finite are discarded; more
/// discards than requested experiments abort.
pub fn record_experiments(
    cfg: &RunConfig,
    tcfg: &TransferConfig,
    system: &SystemConfig,
    ae: &AutoEncoder,
    seed: u64,
) -> Result<Dataset> {
    let sys = system.build()?;
    let gains = cfg.control.gains()?;
    let pos = cfg.dataset.policy.position_index;
    let steps = cfg.control.steps();
    let hold = cfg.dataset.policy.hold_steps.max(1);
    let [lo, hi] = tcfg.position_range;
    let draw = |rng: &mut ChaCha8Rng, a: f64, b: f64| if b > a { rng.random_range(a..b) } else { a };

    let mut samples = Vec::new();
    let mut accepted = 0;
    let mut discarded = 0;
    let mut attempt = 0u64;
    'experiments: while accepted < tcfg.experiments {
        if discarded > tcfg.experiments {
            return Err(Error::DiscardRate {
                discarded,
                attempted: attempt as usize,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(attempt);
        attempt += 1;
        let mut start = cfg.control.start.clone();
        let mut goal = cfg.control.goal.clone();
        start[pos] = draw(&mut rng, lo, hi);
        goal[pos] = draw(&mut rng, lo, hi);
        let mut x = start.clone();
        x[pos] += draw(&mut rng, -tcfg.offset_amplitude, tcfg.offset_amplitude);
        let plan = plan_between(ae, &start, &goal, cfg.control.horizon)?;
        let ctrl = ClosedLoopController::new(ae, gains.clone(), plan)?;
        let mut noise = 0.0;
        let mut run = Vec::with_capacity(steps);
        for k in 0..steps {
            if k % hold == 0 {
                noise = draw(&mut rng, -tcfg.input_noise, tcfg.input_noise);
            }
            let step = ctrl.control_step(&x, k);
            let next = step.and_then(|s| {
                let u = s.u + noise;
                sys.step(&x, u).map(|xp| (u, xp))
            });
            match next {
                Ok((u, xp)) if xp.iter().all(|v| v.is_finite()) => {
                    run.push(Sample {
                        x: x.clone(),
                        u,
                        x_plus: xp.clone(),
                        trajectory_id: accepted,
                        k,
                    });
                    x = xp;
                }
                other => {
                    if let Err(e) = other {
                        log::debug!("experiment {attempt} discarded at k={k}: {e}");
                    }
                    discarded += 1;
                    continue 'experiments;
                }
            }
        }
        samples.extend(run);
        accepted += 1;
    }
    if discarded > 0 {
        log::info!("discarded {discarded} of {attempt} experiments");
    }
    Dataset::from_samples(
        sys.state_dim(),
        sys.sampling_time(),
        samples,
        format!("closed-loop:{seed}"),
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferReport {
    /// Nominal controller on the target plant.
    pub before: LoopSummary,
    /// Fine-tuned controller on the target plant, replanned through the
    /// updated encoder.
    pub after: LoopSummary,
    pub recorded_samples: usize,
    pub epochs: usize,
    pub final_validation_total: Option<f64>,
}

impl TransferReport {
    pub fn improvement_ratio(&self) -> f64 {
        self.after.tracking.rms / self.before.tracking.rms
    }
}

#[derive(Debug, Clone)]
pub struct TransferOutcome {
    pub checkpoint: Checkpoint,
    pub history: LossHistory,
    pub recorded: Dataset,
    pub trace_before: ClosedLoopTrace,
    pub trace_after: ClosedLoopTrace,
    pub report: TransferReport,
}

fn transfer_section(cfg: &RunConfig) -> Result<&TransferConfig> {
    cfg.transfer
        .as_ref()
        .ok_or_else(|| Error::Config("the configuration has no `transfer` section".into()))
}

/// Fine-tune a nominal auto-encoder on closed-loop recordings from
/// `system`, using the nominal normalization constants.
pub fn finetune_on(
    cfg: &RunConfig,
    nominal: &Checkpoint,
    system: &SystemConfig,
    seed: u64,
) -> Result<(Checkpoint, LossHistory, Dataset)> {
    let tcfg = transfer_section(cfg)?;
    let recorded = record_experiments(cfg, tcfg, system, &nominal.ae, seed)?;
    let norm = &nominal.ae.normalization;
    let (train, val) = split(&recorded, tcfg.training.split, seed)?;
    let train = normalize_with(&train, norm);
    let val = normalize_with(&val, norm);
    let opts = TrainOptions {
        seed,
        ..tcfg.training.clone()
    };
    let (ae, history) = transfer_finetune(&nominal.ae, &train, &val, &nominal.loss_weights, &opts)?;
    let ck = Checkpoint {
        ae,
        loss_weights: nominal.loss_weights,
        training: metadata(&opts, &recorded, &history, &format!("{} transfer", cfg.name)),
    };
    Ok((ck, history, recorded))
}

/// Validation loss of a model before and after fine-tuning on fresh data
/// from its own plant and excitation policy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelfTransfer {
    pub before: f64,
    pub after: f64,
}

impl SelfTransfer {
    pub fn degradation(&self) -> f64 {
        self.after / self.before - 1.0
    }
}

/// Fine-tunes `nominal` on a new dataset drawn from the configured plant with
/// dataset seed `seed`, then scores both models on `validation` (normalized
/// with the nominal constants).
pub fn self_transfer(
    cfg: &RunConfig,
    nominal: &Checkpoint,
    validation: &Dataset,
    opts: &TrainOptions,
    seed: u64,
) -> Result<SelfTransfer> {
    let mut fresh_cfg = cfg.clone();
    fresh_cfg.seed = seed;
    let fresh = generate(&fresh_cfg)?;
    let norm = &nominal.ae.normalization;
    let (train, val) = split(&fresh, opts.split, seed)?;
    let (ae, _) = transfer_finetune(
        &nominal.ae,
        &normalize_with(&train, norm),
        &normalize_with(&val, norm),
        &nominal.loss_weights,
        opts,
    )?;
    let w = &nominal.loss_weights;
    Ok(SelfTransfer {
        before: evaluate_loss(&nominal.ae, &validation.samples, w)?.total,
        after: evaluate_loss(&ae, &validation.samples, w)?.total,
    })
}

pub fn transfer(cfg: &RunConfig, nominal: &Checkpoint) -> Result<TransferOutcome> {
    let tcfg = transfer_section(cfg)?;
    let target = cfg.system.with_params(tcfg.target)?;
    let trace_before = closed_loop(cfg, &target, &nominal.ae)?;
    let (checkpoint, history, recorded) = finetune_on(cfg, nominal, &target, cfg.seeds().transfer)?;
    let trace_after = closed_loop(cfg, &target, &checkpoint.ae)?;
    let report = TransferReport {
        before: summarize(cfg, &trace_before),
        after: summarize(cfg, &trace_after),
        recorded_samples: recorded.len(),
        epochs: history.epochs.len(),
        final_validation_total: history.last().map(|r| r.validation.total),
    };
    Ok(TransferOutcome {
        checkpoint,
        history,
        recorded,
        trace_before,
        trace_after,
        report,
    })
}

/// Subcommands of the command-line tool.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    GenData,
    Train,
    Eval,
    Plan,
    Simulate,
    Transfer,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::Plan => "plan",
            Command::Simulate => "simulate",
            Command::Transfer => "transfer",
        }
    }
}

/// What a command did, written next to its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: String,
    pub config: String,
    pub seed: u64,
    pub outputs: Vec<PathBuf>,
    pub metrics: serde_json::Value,
}

impl RunReport {
    pub fn path(out: &Path, command: Command) -> PathBuf {
        out.join(format!("{}.report.json", command.name()))
    }
}

fn to_value<T: Serialize>(v: &T) -> serde_json::Value {
    serde_json::to_value(v).unwrap_or(serde_json::Value::Null)
}

fn load_or_generate(cfg: &RunConfig, out: &Path, outputs: &mut Vec<PathBuf>) -> Result<Dataset> {
    let path = out.join(files::DATASET);
    if path.exists() {
        let ds = load_dataset(&path)?;
        if ds.policy_fingerprint == cfg.policy().fingerprint() {
            log::info!("using existing dataset {}", path.display());
            return Ok(ds);
        }
        log::info!("dataset {} was generated by another policy; regenerating", path.display());
    }
    let ds = generate(cfg)?;
    save_dataset(&ds, &path)?;
    outputs.push(path);
    Ok(ds)
}

fn load_checkpoint(out: &Path, name: &str) -> Result<Checkpoint> {
    let path = out.join(name);
    if !path.exists() {
        let missing = std::io::Error::new(std::io::ErrorKind::NotFound, "checkpoint not found; run `train` first");
        return Err(Error::io(path, missing));
    }
    Checkpoint::load(&path)
}

fn loss_plot(history: &LossHistory, title: &str) -> LinePlot {
    let pick = |f: fn(&crate::canonical::EpochRecord) -> f64| -> Vec<(f64, f64)> {
        history.epochs.iter().map(|r| (r.train.epoch as f64, f(r))).collect()
    };
    LinePlot::new(title, "epoch", "loss")
        .log_y()
        .with(Series::new("L_rec_x", pick(|r| r.train.rec_x)))
        .with(Series::new("L_rec_u", pick(|r| r.train.rec_u)))
        .with(Series::new("L_pred_1", pick(|r| r.train.pred_1)))
        .with(Series::new("L_pred_2", pick(|r| r.train.pred_2)))
        .with(Series::new("total", pick(|r| r.train.total)))
        .with(Series::new("val total", pick(|r| r.validation.total)).dashed())
}

fn trace_plot(title: &str, traces: &[(&str, &ClosedLoopTrace)], channel: usize) -> LinePlot {
    let mut plot = LinePlot::new(title, "k", format!("x{}", channel + 1));
    for (name, t) in traces {
        let values: Vec<f64> = t.states.iter().map(|x| x[channel]).collect();
        plot = plot.with(Series::from_values(*name, &values));
    }
    plot
}

fn write_rollout_csv(path: &Path, r: &Rollout) -> Result<()> {
    use std::fmt::Write as _;
    let n = r.truth.first().map_or(0, Vec::len);
    let mut s = String::from("k");
    for i in 1..=n {
        let _ = write!(s, ",x{i}");
    }
    for i in 1..=n {
        let _ = write!(s, ",xhat{i}");
    }
    s.push_str(",u\n");
    for (k, (t, p)) in r.truth.iter().zip(&r.predicted).enumerate() {
        let _ = write!(s, "{k}");
        for v in t.iter().chain(p) {
            let _ = write!(s, ",{v:.16e}");
        }
        match r.inputs.get(k) {
            Some(u) => {
                let _ = writeln!(s, ",{u:.16e}");
            }
            None => s.push_str(",\n"),
        }
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

/// Number of held-out rollouts evaluated by `eval`.
pub const EVAL_ROLLOUTS: usize = 5;
/// Length of each held-out rollout.
pub const EVAL_ROLLOUT_STEPS: usize = 50;

/// Run one subcommand with outputs under `out`.
pub fn run_command(command: Command, cfg: &RunConfig, out: &Path) -> Result<RunReport> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut outputs = Vec::new();
    let metrics = match command {
        Command::GenData => {
            let ds = generate(cfg)?;
            let path = out.join(files::DATASET);
            save_dataset(&ds, &path)?;
            outputs.push(path);
            serde_json::json!({
                "samples": ds.len(),
                "trajectories": ds.trajectory_ids().len(),
                "fingerprint": ds.policy_fingerprint,
            })
        }
        Command::Train => {
            let ds = load_or_generate(cfg, out, &mut outputs)?;
            let result = train_model(cfg, &ds)?;
            let ck_path = out.join(files::CHECKPOINT);
            result.checkpoint.save(&ck_path)?;
            let hist_path = out.join(files::LOSS_HISTORY);
            result.history.save_csv(&hist_path)?;
            let plot_path = out.join(files::LOSS_PLOT);
            loss_plot(&result.history, &format!("{} training", cfg.name)).save(&plot_path)?;
            outputs.extend([ck_path, hist_path, plot_path]);
            serde_json::json!({
                "epochs": result.history.epochs.len(),
                "first": result.history.first().map(to_value),
                "last": result.history.last().map(to_value),
            })
        }
        Command::Eval => {
            let ck = load_checkpoint(out, files::CHECKPOINT)?;
            let ds = load_or_generate(cfg, out, &mut outputs)?;
            let (_, val) = split(&ds, cfg.training.options.split, cfg.seeds().split)?;
            let (report, runs) = evaluate(cfg, &ck.ae, &val, EVAL_ROLLOUTS, EVAL_ROLLOUT_STEPS)?;
            let eval_path = out.join(files::EVAL);
            std::fs::write(&eval_path, serde_json::to_string_pretty(&report).map_err(|e| Error::json(&eval_path, e))?)
                .map_err(|e| Error::io(&eval_path, e))?;
            let roll_path = out.join(files::ROLLOUT);
            write_rollout_csv(&roll_path, &runs[0])?;
            let mut plot = LinePlot::new("held-out rollout", "k", "x");
            let n = runs[0].truth[0].len();
            for i in 0..n {
                let t: Vec<f64> = runs[0].truth.iter().map(|x| x[i]).collect();
                let p: Vec<f64> = runs[0].predicted.iter().map(|x| x[i]).collect();
                plot = plot
                    .with(Series::from_values(format!("x{}", i + 1), &t).dashed())
                    .with(Series::from_values(format!("x{} model", i + 1), &p));
            }
            let plot_path = out.join(files::ROLLOUT_PLOT);
            plot.save(&plot_path)?;
            outputs.extend([eval_path, roll_path, plot_path]);
            to_value(&report)
        }
        Command::Plan => {
            let ck = load_checkpoint(out, files::CHECKPOINT)?;
            let plan = plan_between(&ck.ae, &cfg.control.start, &cfg.control.goal, cfg.control.horizon)?;
            let path = out.join(files::PLAN);
            plan.save_csv(&path)?;
            let mut plot = LinePlot::new("planned reference", "k", "z_d");
            for i in 0..plan.n() {
                let v: Vec<f64> = (0..=plan.horizon()).map(|k| plan.z_d(k)[i]).collect();
                plot = plot.with(Series::from_values(format!("zd{}", i + 1), &v));
            }
            let plot_path = out.join(files::PLAN_PLOT);
            plot.save(&plot_path)?;
            outputs.extend([path, plot_path]);
            serde_json::json!({
                "horizon": plan.horizon(),
                "coefficients": plan.coefficients(),
                "condition": plan.condition(),
            })
        }
        Command::Simulate => {
            let ck = load_checkpoint(out, files::CHECKPOINT)?;
            let trace = closed_loop(cfg, &cfg.system, &ck.ae)?;
            let path = out.join(files::TRACE);
            trace.save_csv(&path)?;
            let plot_path = out.join(files::TRACE_PLOT);
            trace_plot("closed loop", &[("x", &trace)], 0).save(&plot_path)?;
            outputs.extend([path, plot_path]);
            to_value(&summarize(cfg, &trace))
        }
        Command::Transfer => {
            let ck = load_checkpoint(out, files::CHECKPOINT)?;
            let t = transfer(cfg, &ck)?;
            let paths = [
                out.join(files::TRANSFER_DATASET),
                out.join(files::TRANSFER_CHECKPOINT),
                out.join(files::TRANSFER_HISTORY),
                out.join(files::TRACE_BEFORE),
                out.join(files::TRACE_AFTER),
                out.join(files::TRANSFER_PLOT),
            ];
            save_dataset(&t.recorded, &paths[0])?;
            t.checkpoint.save(&paths[1])?;
            t.history.save_csv(&paths[2])?;
            t.trace_before.save_csv(&paths[3])?;
            t.trace_after.save_csv(&paths[4])?;
            trace_plot(
                "target plant",
                &[("nominal controller", &t.trace_before), ("after fine-tuning", &t.trace_after)],
                0,
            )
            .save(&paths[5])?;
            outputs.extend(paths);
            to_value(&t.report)
        }
    };
    let report = RunReport {
        command: command.name().into(),
        config: cfg.name.clone(),
        seed: cfg.seed,
        outputs,
        metrics,
    };
    let path = RunReport::path(out, command);
    std::fs::write(&path, serde_json::to_string_pretty(&report).map_err(|e| Error::json(&path, e))?)
        .map_err(|e| Error::io(&path, e))?;
    Ok(report)
}
