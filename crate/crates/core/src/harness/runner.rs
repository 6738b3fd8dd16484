//! The instrumented training loop and the protocols built on it.
//!
//! A run of `T` update steps emits measurements for iterates
//! `x_0, …, x_T`. Step `t < T` draws batch `z_t`, evaluates `f` and `∇f`
//! at `x_t` and at `x_{t−1}` on `z_t` (for the update-correlation family,
//! accumulated every step), measures the enabled quantities when a record
//! is due, then computes `Δ_t`, draws `s_t` and moves to
//! `x_{t+1} = x_t + s_t Δ_t`. The final iterate `x_T` is measured on the next
//! batch of the stream without an update and always recorded.
//!
//! Records are emitted at cadence points, at epoch ends when full-dataset
//! evaluation or sharpness is scheduled there, and at `t = T`. Epoch ends
//! are the last record of each epoch; the per-epoch aggregates are reset
//! when the next epoch's first batch is drawn.

use std::fs;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::Instant;

use crate::error::{Error, Result};
use crate::harness::checkpoint::Checkpoint;
use crate::harness::config::{BatchSize, ExperimentConfig, FullEval, OptimizerKind, TaskConfig};
use crate::harness::export::{Abort, RecordWriter, RunLog, RunMeta};
use crate::metrics::{correlations_from, gap_from_evals, smooth_from_grads, MetricRecord, MetricState, Reference};
use crate::num::{Objective, ParamVector};
use crate::optim::{Adamw, AdamwParams, Optimizer, ScalingMode, ScalingPolicy, Schedule, Sgdm};
use crate::sharpness::power_iteration_lambda_max;
use crate::tasks::{gen_synthetic, load_libsvm, make_batches, Batch, ModelKind, ModelObjective, ModelSpec};

/// Environment variable that overrides `run.output_dir`.
pub const OUTPUT_DIR_ENV: &str = "OPTDIAG_OUTPUT_DIR";

/// Applies environment overrides to a parsed config.
pub fn apply_env_overrides(cfg: &mut ExperimentConfig) {
    if let Some(dir) = std::env::var_os(OUTPUT_DIR_ENV) {
        if !dir.is_empty() {
            cfg.run.output_dir = PathBuf::from(dir);
        }
    }
}

/// Files written by a run named `name`.
#[derive(Clone, Debug, PartialEq)]
pub struct RunPaths {
    pub csv: PathBuf,
    pub jsonl: PathBuf,
    pub checkpoint: PathBuf,
    pub timing: PathBuf,
}

impl RunPaths {
    pub fn of(cfg: &ExperimentConfig) -> Self {
        let base = cfg.run.output_dir.join(&cfg.run.name);
        let with = |ext: &str| PathBuf::from(format!("{}.{ext}", base.display()));
        RunPaths {
            csv: with("csv"),
            jsonl: with("jsonl"),
            checkpoint: with("ckpt"),
            timing: with("timing.json"),
        }
    }
}

/// Builds the dataset and binds the configured model to it.
pub fn build_objective(task: &TaskConfig) -> Result<ModelObjective> {
    let data = match task.dataset.synthetic() {
        Some(kind) => {
            let n = task
                .n
                .ok_or_else(|| Error::config("task.n", "required for synthetic datasets"))?;
            let d = task
                .dim
                .ok_or_else(|| Error::config("task.dim", "required for synthetic datasets"))?;
            gen_synthetic(kind, n, d, task.noise, task.data_seed)?
        }
        None => {
            let path = task
                .path
                .as_ref()
                .ok_or_else(|| Error::config("task.path", "required"))?;
            load_libsvm(path)?
        }
    };
    let d = data.d();
    let classes = data.classes().unwrap_or(0).max(2);
    let spec = match task.model {
        ModelKind::SquaredLinear => ModelSpec::squared_linear(d),
        ModelKind::Logistic => ModelSpec::logistic(d, classes),
        ModelKind::MlpTanh => ModelSpec::mlp_tanh(d, task.hidden.clone(), classes, task.init_seed),
    };
    ModelObjective::new(spec, Arc::new(data))
}

fn build_optimizer(cfg: &ExperimentConfig, dim: usize) -> Result<Optimizer> {
    let o = &cfg.optimizer;
    Ok(match o.kind {
        OptimizerKind::Gd => Optimizer::Sgdm(Sgdm::new(dim, 0.0)?),
        OptimizerKind::Sgdm => Optimizer::Sgdm(Sgdm::new(dim, o.momentum)?),
        OptimizerKind::Adamw => Optimizer::Adamw(Adamw::new(
            dim,
            AdamwParams {
                b1: o.beta1,
                b2: o.beta2,
                eps: o.eps,
                weight_decay: o.weight_decay,
            },
        )?),
    })
}

/// The move into the current iterate.
struct Prev {
    x: ParamVector,
    /// `s_{t−1} Δ_{t−1}`.
    displacement: ParamVector,
    /// `Δ_{t−1}`.
    delta: ParamVector,
}

struct Loop<'a> {
    cfg: &'a ExperimentConfig,
    obj: &'a ModelObjective,
    x_star: Option<&'a ParamVector>,
    n: usize,
    batch_size: usize,
    batches_per_epoch: u64,
    total: u64,
    schedule: Schedule,
    optimizer: Optimizer,
    scaling: ScalingPolicy,
    state: MetricState,
    x: ParamVector,
    prev: Option<Prev>,
    epoch_batches: Vec<Batch>,
    loaded_epoch: Option<u64>,
}

impl<'a> Loop<'a> {
    fn batch(&mut self, t: u64) -> Result<Batch> {
        let epoch = t / self.batches_per_epoch;
        if self.loaded_epoch != Some(epoch) {
            let task = &self.cfg.task;
            self.epoch_batches = make_batches(self.n, self.batch_size, task.shuffle, task.data_seed, epoch)?;
            self.loaded_epoch = Some(epoch);
        }
        Ok(self.epoch_batches[(t % self.batches_per_epoch) as usize].clone())
    }

    /// One step: measure `x_t`, then (for `t < T`) update. Returns the record
    /// if one is due.
    fn step(&mut self, t: u64) -> Result<Option<MetricRecord>> {
        let m = &self.cfg.metrics;
        let bpe = self.batches_per_epoch;
        let last = t == self.total;
        let epoch = if last { (self.total - 1) / bpe } else { t / bpe };
        if !last && t > 0 && t.is_multiple_of(bpe) && m.epoch_reset {
            self.state.epoch_reset();
        }
        let epoch_end = last || ((t + 1).is_multiple_of(bpe) && t + 1 < self.total);
        let sharp_due = m.sharpness_every_epochs > 0 && epoch_end && (epoch + 1) % m.sharpness_every_epochs == 0;
        let emit = t.is_multiple_of(m.cadence) || last || sharp_due || (m.full_eval == FullEval::EpochEnd && epoch_end);
        let full_due = match m.full_eval {
            FullEval::Off => false,
            FullEval::Cadence => emit,
            FullEval::EpochEnd => epoch_end,
        };

        let batch = self.batch(t)?;
        let (f, g) = self.obj.loss_grad(&self.x, &batch)?;
        let mut rec = MetricRecord {
            step: t,
            epoch,
            loss: f,
            batch_digest: format!("{:016x}", batch.digest()),
            ..MetricRecord::default()
        };

        let mut prev_eval = None;
        if let Some(p) = &self.prev {
            let (f_prev, g_prev) = self.obj.loss_grad(&p.x, &batch)?;
            let c = correlations_from(f, &g, f_prev, &p.displacement, &p.delta)?;
            let (cu, cr, cl) = self.state.accumulate_correlations(&c);
            rec.update_corr = Some(c.update_corr);
            rec.update_corr_rs = Some(c.update_corr_rs);
            rec.loss_diff = Some(c.loss_diff);
            (rec.cum_update_corr, rec.cum_update_corr_rs, rec.cum_loss_diff) = (cu, cr, cl);
            prev_eval = Some((f_prev, g_prev));
        } else {
            (rec.cum_update_corr, rec.cum_update_corr_rs, rec.cum_loss_diff) = self.state.cumulative();
        }

        if emit {
            let reference = match m.reference {
                Reference::PrevIterate => match (&self.prev, prev_eval) {
                    (Some(p), Some((fy, gy))) => Some((p.x.clone(), fy, gy)),
                    _ => None,
                },
                Reference::FixedPoint => {
                    let y = self
                        .x_star
                        .ok_or_else(|| Error::config("run.x_star_path", "fixed_point reference needs x*"))?;
                    let (fy, gy) = self.obj.loss_grad(y, &batch)?;
                    Some((y.clone(), fy, gy))
                }
            };
            if let Some((y, fy, gy)) = reference {
                let gap = gap_from_evals(f, &g, fy, &self.x, &y)?;
                let (avg, exp) = self.state.update_gap(gap);
                rec.inst_gap = Some(gap);
                rec.avg_gap = Some(avg);
                rec.exp_gap = Some(exp);
                if let Some(s) = smooth_from_grads(&g, &gy, &self.x, &y, m.zero_disp_epsilon)? {
                    rec.inst_smooth = Some(s);
                }
            }
            if let Some(s) = rec.inst_smooth {
                self.state.update_smooth(s);
            }
            rec.max_smooth = self.state.max_smooth();
            rec.exp_smooth = self.state.exp_smooth();
            if rec.inst_gap.is_none() {
                rec.avg_gap = self.state.avg_gap();
                rec.exp_gap = self.state.exp_gap();
            }

            // A batch covering every row already is the full-data evaluation.
            let full = if !full_due {
                None
            } else if batch.len() == self.n {
                Some((f, g.clone()))
            } else {
                Some(self.obj.loss_grad(&self.x, &self.obj.full_batch())?)
            };
            if let Some((ff, fg)) = &full {
                rec.full_loss = Some(*ff);
                if self.x_star.is_some() {
                    let obs = self.state.ratio_accumulate_with(self.obj, &self.x, *ff, fg)?;
                    rec.convexity_ratio = obs.ratio;
                    rec.ratio_den_sign = Some(obs.den_sign);
                }
            }
            let stats = self.state.grad_stats(&g, full.as_ref().map(|(_, fg)| fg), &self.x)?;
            rec.grad_l1 = stats.grad_l1;
            rec.grad_l2 = stats.grad_l2;
            rec.grad_std_running = stats.grad_std_running;
            rec.param_l2 = stats.param_l2;

            if sharp_due {
                let est = power_iteration_lambda_max(self.obj, &self.x, &m.sharpness_config())?;
                rec.sharpness = Some(est.lambda);
            }
        }

        if !last {
            let eta = self.schedule.lr(t)?;
            let delta = self.optimizer.step(&g, eta, &self.x)?;
            let s = self.scaling.sample();
            let x_next = self.x.add_scaled(s, &delta);
            x_next.ensure_finite("iterate after update")?;
            rec.eta_t = Some(eta);
            rec.s_t = Some(s);
            let x_prev = std::mem::replace(&mut self.x, x_next);
            self.prev = Some(Prev {
                x: x_prev,
                displacement: delta.scale(s),
                delta,
            });
        }
        Ok(emit.then_some(rec))
    }
}

/// Runs one configured experiment, streaming CSV/JSONL to the output
/// directory and writing the final iterate as a checkpoint.
///
/// Setup problems are returned as errors. A numerical failure inside the
/// loop stops the run; the returned log then carries the offending step in
/// [`RunLog::abort`], which is also the last JSONL line, and no checkpoint
/// is written.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunLog> {
    cfg.validate()?;
    let started = Instant::now();
    let obj = build_objective(&cfg.task)?;
    let spec = obj.spec().clone();
    let dim = spec.param_count();
    let n = obj.data().n();
    let batch_size = match cfg.task.batch_size {
        BatchSize::Full => n,
        BatchSize::Rows(b) if b <= n => b,
        BatchSize::Rows(b) => {
            return Err(Error::config(
                "task.batch_size",
                format!("{b} exceeds the dataset size {n}"),
            ));
        }
    };
    let batches_per_epoch = n.div_ceil(batch_size) as u64;
    let total = match (cfg.run.steps, cfg.run.epochs) {
        (Some(s), _) => s,
        (None, Some(e)) => e * batches_per_epoch,
        (None, None) => {
            return Err(Error::config(
                "run.steps",
                "one of run.steps and run.epochs is required",
            ))
        }
    };
    let x_star = match &cfg.run.x_star_path {
        Some(p) => Some(Checkpoint::load_for(p, dim, &spec.digest())?),
        None => None,
    };
    if cfg.metrics.reference == Reference::FixedPoint && x_star.is_none() {
        return Err(Error::config(
            "run.x_star_path",
            "metrics.reference = \"fixed_point\" needs x*",
        ));
    }

    let meta = RunMeta {
        name: cfg.run.name.clone(),
        config_digest: cfg.digest(),
        version: format!("{}/{}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION")),
        dataset: obj.data().name().to_string(),
        param_count: dim,
        steps: total,
        batches_per_epoch,
        config: cfg.clone(),
    };
    let paths = RunPaths::of(cfg);
    fs::create_dir_all(&cfg.run.output_dir)?;
    let mut writer = RecordWriter::create(&paths.csv, &paths.jsonl, &meta)?;

    let mut state = MetricState::new(cfg.metrics.ema_beta);
    if let Some(xs) = &x_star {
        state = state.with_reference_point(xs.clone());
    }
    let mut lp = Loop {
        cfg,
        obj: &obj,
        x_star: x_star.as_ref(),
        n,
        batch_size,
        batches_per_epoch,
        total,
        schedule: Schedule {
            kind: cfg.schedule.kind,
            base_lr: cfg.optimizer.learning_rate,
            warmup_steps: cfg.schedule.warmup_steps,
            total_steps: total,
            step_period: cfg.schedule.step_period,
        },
        optimizer: build_optimizer(cfg, dim)?,
        scaling: ScalingPolicy::new(cfg.optimizer.scaling, cfg.optimizer.seed),
        state,
        x: spec.init(),
        prev: None,
        epoch_batches: Vec::new(),
        loaded_epoch: None,
    };

    let mut records = Vec::new();
    let mut abort = None;
    let end = if total == 0 { 0 } else { total + 1 };
    for t in 0..end {
        match lp.step(t) {
            Ok(Some(rec)) => {
                writer.write(&rec)?;
                records.push(rec);
            }
            Ok(None) => {}
            Err(e) => {
                let a = Abort {
                    step: t,
                    kind: e.kind().to_string(),
                    message: e.to_string(),
                };
                writer.write_abort(&a)?;
                abort = Some(a);
                break;
            }
        }
    }
    if abort.is_none() {
        Checkpoint::new(spec.digest(), lp.x.clone()).save(&paths.checkpoint)?;
    }
    let wall_clock_secs = started.elapsed().as_secs_f64();
    fs::write(
        &paths.timing,
        serde_json::to_string(&serde_json::json!({ "wall_clock_secs": wall_clock_secs }))?,
    )?;
    Ok(RunLog {
        meta,
        records,
        abort,
        wall_clock_secs,
    })
}

/// Two-phase convexity-ratio protocol.
///
/// Phase 1 trains to completion under the name `<name>.phase1` and its final
/// iterate becomes `x*`. Phase 2 repeats the run (same data, init and
/// optimizer seeds, hence the same batch sequence) measuring against `x*`
/// with ratio accumulation at every full-data evaluation, and is returned.
pub fn run_ratio_protocol(cfg: &ExperimentConfig) -> Result<(RunLog, RunLog)> {
    if cfg.run.x_star_path.is_some() {
        return Err(Error::config(
            "run.x_star_path",
            "the ratio protocol produces x* itself; leave it unset",
        ));
    }
    let mut phase1 = cfg.clone();
    phase1.run.name = format!("{}.phase1", cfg.run.name);
    let log1 = run_experiment(&phase1)?;
    log1.ensure_complete()?;

    let mut phase2 = cfg.clone();
    phase2.run.x_star_path = Some(RunPaths::of(&phase1).checkpoint);
    phase2.metrics.reference = Reference::FixedPoint;
    if phase2.metrics.full_eval == FullEval::Off {
        phase2.metrics.full_eval = FullEval::EpochEnd;
    }
    let log2 = run_experiment(&phase2)?;
    Ok((log1, log2))
}

/// Paired runs differing only in the scaling policy: `(none, exp1)`, named
/// `<name>.none` and `<name>.exp1`.
pub fn run_rs_ab(cfg: &ExperimentConfig) -> Result<(RunLog, RunLog)> {
    let variant = |mode: ScalingMode, tag: &str| {
        let mut c = cfg.clone();
        c.optimizer.scaling = mode;
        c.run.name = format!("{}.{tag}", cfg.run.name);
        c
    };
    let none = run_experiment(&variant(ScalingMode::None, "none"))?;
    let exp1 = run_experiment(&variant(ScalingMode::Exp1, "exp1"))?;
    Ok((none, exp1))
}

/// Independent runs over a list of learning rates, executed concurrently.
/// Run `i` is named `<name>.lr<i>`; `<name>.sweep.json` records the grid and
/// each run's outcome.
pub fn run_sweep(cfg: &ExperimentConfig, learning_rates: &[f64]) -> Result<Vec<RunLog>> {
    if learning_rates.is_empty() {
        return Err(Error::config("sweep.lr", "needs at least one learning rate"));
    }
    let configs: Vec<ExperimentConfig> = learning_rates
        .iter()
        .enumerate()
        .map(|(i, &lr)| {
            let mut c = cfg.clone();
            c.optimizer.learning_rate = lr;
            c.run.name = format!("{}.lr{i}", cfg.run.name);
            c.validate().map(|_| c)
        })
        .collect::<Result<_>>()?;
    let results: Vec<Result<RunLog>> = std::thread::scope(|s| {
        let handles: Vec<_> = configs.iter().map(|c| s.spawn(move || run_experiment(c))).collect();
        handles
            .into_iter()
            .map(|h| {
                h.join()
                    .unwrap_or_else(|_| Err(Error::Contract("sweep worker panicked".into())))
            })
            .collect()
    });
    let logs = results.into_iter().collect::<Result<Vec<_>>>()?;
    let runs: Vec<_> = logs
        .iter()
        .map(|l| {
            serde_json::json!({
                "name": l.meta.name,
                "learning_rate": l.meta.config.optimizer.learning_rate,
                "final_loss": l.last().map(|r| r.loss),
                "aborted_at": l.abort.as_ref().map(|a| a.step),
            })
        })
        .collect();
    let manifest = serde_json::json!({ "learning_rates": learning_rates, "runs": runs });
    fs::create_dir_all(&cfg.run.output_dir)?;
    fs::write(
        cfg.run.output_dir.join(format!("{}.sweep.json", cfg.run.name)),
        serde_json::to_string_pretty(&manifest)? + "\n",
    )?;
    Ok(logs)
}
