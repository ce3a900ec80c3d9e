//! Asynchronous multi-fidelity Bayesian optimisation and the random-search
//! baseline.
//!
//! One coordinator owns the surrogate and the trial history. Trials run on
//! `workers` evaluator threads (inline when `workers == 1`) and report back
//! over a channel. Each finished trial is added to the surrogate as
//! `((encoded config, fidelity), -objective)`, kernel parameters are refitted
//! on schedule, and the free worker is handed the expected-improvement
//! maximiser with in-flight points imputed by the constant liar.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::mpsc;
use std::sync::{Arc, Mutex, RwLock};
use std::time::Instant;

use crate::acquisition::{propose_next, Incumbent, ProposalSettings};
use crate::error::{Error, Result};
use crate::fidelity::{FidelitySchedule, MedianStopping, StopDecision, TrialRecord, TrialStatus};
use crate::gp::{fit_mle_bounded, GpDataset, GpModel, KernelParams, DEFAULT_RESTARTS, LENGTHSCALE_BOUNDS};
use crate::rng;
use crate::space::{HyperConfig, ParamValue, SearchSpace};

pub use crate::fidelity::Monitor;

pub const DEFAULT_FIDELITY_LENGTHSCALE_FLOOR: f64 = 1.0;

/// What an objective reports back for one trial.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Evaluation {
    pub epoch_errors: Vec<f64>,
    /// Set when training failed (for example diverged).
    pub failure: Option<String>,
}

/// A trainable configuration evaluator. Must be deterministic given the seed
/// and safe to run concurrently.
pub trait Objective: Sync {
    fn evaluate(&self, config: &HyperConfig, max_epochs: usize, seed: u64, monitor: &mut Monitor<'_>) -> Evaluation;
}

impl<F> Objective for F
where
    F: Fn(&HyperConfig, usize, u64, &mut Monitor<'_>) -> Evaluation + Sync,
{
    fn evaluate(&self, config: &HyperConfig, max_epochs: usize, seed: u64, monitor: &mut Monitor<'_>) -> Evaluation {
        self(config, max_epochs, seed, monitor)
    }
}

/// Objective whose error at each epoch is given by a function of the config
/// and the 1-based epoch. Useful for synthetic benchmarks.
pub struct EpochCurve<F>(pub F);

impl<F> Objective for EpochCurve<F>
where
    F: Fn(&HyperConfig, usize) -> f64 + Sync,
{
    fn evaluate(&self, config: &HyperConfig, max_epochs: usize, _seed: u64, monitor: &mut Monitor<'_>) -> Evaluation {
        let mut errors = Vec::with_capacity(max_epochs);
        for epoch in 1..=max_epochs {
            let e = (self.0)(config, epoch);
            if !e.is_finite() {
                return Evaluation {
                    epoch_errors: errors,
                    failure: Some(format!("non-finite error at epoch {epoch}")),
                };
            }
            errors.push(e);
            if monitor(epoch, e) == StopDecision::Stop {
                break;
            }
        }
        Evaluation {
            epoch_errors: errors,
            failure: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Budget {
    /// Tuning-time budget in seconds (of the configured clock).
    pub wall_s: Option<f64>,
    /// Cap on the number of dispatched trials.
    pub max_trials: Option<usize>,
}

impl Budget {
    pub fn seconds(s: f64) -> Self {
        Budget {
            wall_s: Some(s),
            max_trials: None,
        }
    }

    pub fn trials(n: usize) -> Self {
        Budget {
            wall_s: None,
            max_trials: Some(n),
        }
    }
}

/// How tuning time is measured.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Clock {
    Wall,
    /// Each executed epoch costs a fixed number of seconds; runs become
    /// reproducible to the byte in serial mode.
    Virtual { seconds_per_epoch: f64 },
}

/// Full-MLE refits after every observation up to `every_until` observations,
/// then every `then_every` observations.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RefitSchedule {
    pub every_until: usize,
    pub then_every: usize,
}

impl Default for RefitSchedule {
    fn default() -> Self {
        RefitSchedule {
            every_until: 50,
            then_every: 5,
        }
    }
}

impl RefitSchedule {
    pub fn should_refit(&self, n: usize) -> bool {
        n <= self.every_until || (n - self.every_until).is_multiple_of(self.then_every.max(1))
    }
}

#[derive(Clone, Debug)]
pub struct TunerSettings {
    pub budget: Budget,
    pub workers: usize,
    pub init_trials: usize,
    pub seed: u64,
    pub fidelity: FidelitySchedule,
    pub stopping: MedianStopping,
    pub proposal: ProposalSettings,
    pub mle_restarts: usize,
    /// Lower bound on the surrogate lengthscale of the fidelity coordinate.
    /// Keeps cheap low-fidelity observations informative about full-fidelity
    /// predictions.
    pub fidelity_lengthscale_floor: f64,
    pub refit: RefitSchedule,
    pub clock: Clock,
}

impl TunerSettings {
    pub fn new(budget: Budget, seed: u64) -> Self {
        TunerSettings {
            budget,
            workers: 1,
            init_trials: 5,
            seed,
            fidelity: FidelitySchedule::default(),
            stopping: MedianStopping::default(),
            proposal: ProposalSettings::default(),
            mle_restarts: DEFAULT_RESTARTS,
            fidelity_lengthscale_floor: DEFAULT_FIDELITY_LENGTHSCALE_FLOOR,
            refit: RefitSchedule::default(),
            clock: Clock::Wall,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::config("workers", "need at least one worker"));
        }
        if self.budget.wall_s.is_none() && self.budget.max_trials.is_none() {
            return Err(Error::config("budget", "set a time budget or a trial cap"));
        }
        if let Some(s) = self.budget.wall_s {
            if !(s >= 0.0) {
                return Err(Error::config("budget_s", "must be non-negative"));
            }
        }
        if self.fidelity.max_epochs < self.fidelity.min_epochs || self.fidelity.min_epochs == 0 {
            return Err(Error::config("fidelity", "need 1 <= min_epochs <= max_epochs"));
        }
        if let Clock::Virtual { seconds_per_epoch } = self.clock {
            if !(seconds_per_epoch > 0.0) {
                return Err(Error::config("clock", "seconds_per_epoch must be positive"));
            }
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub elapsed_s: f64,
    pub best_error_m: f64,
}

#[derive(Clone, Debug)]
pub struct TuningResult {
    pub best_config: HyperConfig,
    pub best_validation_error_m: f64,
    pub history: Vec<TrialRecord>,
    pub curve: Vec<CurvePoint>,
}

/// Running minimum of the objective at each trial's completion time.
/// Records sharing a timestamp collapse into one point.
pub fn extract_curve(history: &[TrialRecord]) -> Vec<CurvePoint> {
    let mut curve: Vec<CurvePoint> = Vec::with_capacity(history.len());
    let mut best = f64::INFINITY;
    for t in history {
        best = best.min(t.objective);
        match curve.last_mut() {
            Some(last) if last.elapsed_s >= t.finished_at_s => last.best_error_m = best,
            _ => curve.push(CurvePoint {
                elapsed_s: t.finished_at_s,
                best_error_m: best,
            }),
        }
    }
    curve
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Strategy {
    Bayesian,
    Random,
}

struct Job {
    index: usize,
    config: HyperConfig,
    epochs: usize,
    seed: u64,
    started_at_s: f64,
}

struct Done {
    job: Job,
    evaluation: Evaluation,
    wall_time_s: f64,
}

/// Shared between the coordinator and the evaluators.
struct Shared {
    completed_curves: RwLock<Vec<Vec<f64>>>,
    start: Instant,
}

struct Runner<'a, O: Objective + ?Sized> {
    objective: &'a O,
    settings: &'a TunerSettings,
    shared: &'a Shared,
}

impl<O: Objective + ?Sized> Runner<'_, O> {
    fn elapsed_wall(&self) -> f64 {
        self.shared.start.elapsed().as_secs_f64()
    }

    fn run(&self, job: Job) -> Done {
        let t0 = Instant::now();
        let settings = self.settings;
        let mut history_errors = Vec::with_capacity(job.epochs);
        let mut monitor = |epoch: usize, err: f64| -> StopDecision {
            history_errors.push(err);
            if let Some(budget) = settings.budget.wall_s {
                let now = match settings.clock {
                    Clock::Wall => self.elapsed_wall(),
                    Clock::Virtual { seconds_per_epoch } => job.started_at_s + epoch as f64 * seconds_per_epoch,
                };
                if now >= budget {
                    return StopDecision::Stop;
                }
            }
            let curves = self.shared.completed_curves.read().expect("curve lock");
            let refs: Vec<&[f64]> = curves.iter().map(Vec::as_slice).collect();
            settings.stopping.decide(&history_errors, &refs, epoch)
        };
        let evaluation = self.objective.evaluate(&job.config, job.epochs, job.seed, &mut monitor);
        let wall_time_s = match settings.clock {
            Clock::Wall => t0.elapsed().as_secs_f64(),
            Clock::Virtual { seconds_per_epoch } => evaluation.epoch_errors.len().max(1) as f64 * seconds_per_epoch,
        };
        Done {
            job,
            evaluation,
            wall_time_s,
        }
    }
}

/// Coordinator-side state of one tuning run.
struct TuningState {
    gp: Option<GpModel>,
    incumbent: Option<Incumbent>,
    pending: Vec<(usize, Vec<f64>)>,
    history: Vec<TrialRecord>,
    virtual_elapsed: f64,
}

struct Coordinator<'a> {
    space: &'a SearchSpace,
    settings: &'a TunerSettings,
    strategy: Strategy,
    config_rng: rng::Rng,
    state: TuningState,
    dispatched: usize,
}

impl<'a> Coordinator<'a> {
    fn new(space: &'a SearchSpace, settings: &'a TunerSettings, strategy: Strategy) -> Self {
        Coordinator {
            space,
            settings,
            strategy,
            config_rng: rng::child(settings.seed, 0x5eed_c0f9),
            state: TuningState {
                gp: None,
                incumbent: None,
                pending: Vec::new(),
                history: Vec::new(),
                virtual_elapsed: 0.0,
            },
            dispatched: 0,
        }
    }

    fn elapsed(&self, shared: &Shared) -> f64 {
        match self.settings.clock {
            Clock::Wall => shared.start.elapsed().as_secs_f64(),
            Clock::Virtual { .. } => self.state.virtual_elapsed,
        }
    }

    fn may_dispatch(&self, shared: &Shared) -> bool {
        let b = self.settings.budget;
        b.max_trials.is_none_or(|m| self.dispatched < m) && b.wall_s.is_none_or(|s| self.elapsed(shared) < s)
    }

    fn encode_point(&self, config: &HyperConfig, epochs: usize) -> Vec<f64> {
        let mut x = self.space.encode(config).expect("dispatched configs are valid");
        x.push(self.settings.fidelity.coordinate(epochs));
        x
    }

    fn next_job(&mut self, shared: &Shared) -> Result<Job> {
        let index = self.dispatched;
        let epochs = self.settings.fidelity.fidelity_for_trial(index);
        let random_phase = self.strategy == Strategy::Random || index < self.settings.init_trials;
        let config = match (&self.state.gp, random_phase) {
            (Some(gp), false) => {
                let pending: Vec<Vec<f64>> = self.state.pending.iter().map(|(_, p)| p.clone()).collect();
                propose_next(
                    gp,
                    self.space,
                    &pending,
                    Some(self.settings.fidelity.coordinate(epochs)),
                    &self.settings.proposal,
                    rng::mix(self.settings.seed, 1 << 32 | index as u64),
                )?
            }
            _ => self.space.sample_random(&mut self.config_rng),
        };
        if self.strategy == Strategy::Bayesian {
            let point = self.encode_point(&config, epochs);
            self.state.pending.push((index, point));
        }
        self.dispatched += 1;
        Ok(Job {
            index,
            config,
            epochs,
            seed: rng::mix(self.settings.seed, index as u64),
            started_at_s: self.elapsed(shared),
        })
    }

    fn failure_penalty(&self) -> f64 {
        let worst = self
            .state
            .history
            .iter()
            .filter(|t| t.status != TrialStatus::Failed)
            .map(|t| t.objective)
            .fold(f64::NEG_INFINITY, f64::max);
        (2.0 * worst).max(10.0)
    }

    fn record(&mut self, done: Done, shared: &Shared) -> Result<()> {
        let Done {
            job,
            evaluation,
            wall_time_s,
        } = done;
        if let Clock::Virtual { .. } = self.settings.clock {
            self.state.virtual_elapsed += wall_time_s;
        }
        let executed = evaluation.epoch_errors.len();
        let bad_errors = evaluation.epoch_errors.iter().any(|e| !e.is_finite() || *e < 0.0);
        let status = if evaluation.failure.is_some() || executed == 0 || bad_errors {
            TrialStatus::Failed
        } else if executed < job.epochs {
            TrialStatus::StoppedEarly
        } else {
            TrialStatus::Completed
        };
        let objective = if status == TrialStatus::Failed {
            self.failure_penalty()
        } else {
            evaluation.epoch_errors.iter().copied().fold(f64::INFINITY, f64::min)
        };
        let record = TrialRecord {
            index: job.index,
            config: job.config,
            seed: job.seed,
            status,
            epoch_errors: evaluation.epoch_errors,
            epoch_budget: job.epochs,
            final_epochs: executed,
            wall_time_s,
            finished_at_s: self.elapsed(shared),
            objective,
        };

        self.state.pending.retain(|(i, _)| *i != record.index);
        if status == TrialStatus::Completed {
            shared
                .completed_curves
                .write()
                .expect("curve lock")
                .push(record.epoch_errors.clone());
        }
        if self.strategy == Strategy::Bayesian {
            self.observe(&record)?;
        }
        if self.state.incumbent.as_ref().is_none_or(|inc| -objective > inc.value) {
            self.state.incumbent = Some(Incumbent {
                value: -objective,
                config: record.config.clone(),
                fidelity: executed,
            });
        }
        self.state.history.push(record);
        debug_assert_eq!(
            self.state.incumbent.as_ref().map(|i| -i.value),
            self.state.history.iter().map(|t| t.objective).reduce(f64::min)
        );
        Ok(())
    }

    fn observe(&mut self, record: &TrialRecord) -> Result<()> {
        let x = self.encode_point(&record.config, record.surrogate_epochs());
        let y = -record.objective;
        let dim = x.len();
        let augmented = match &self.state.gp {
            Some(gp) => gp.augment(x, y)?,
            None => GpModel::empty(dim, KernelParams::default_for(dim))?.augment(x, y)?,
        };
        let n = augmented.len();
        self.state.gp = Some(if self.settings.refit.should_refit(n) {
            let seed = rng::mix(self.settings.seed, 2 << 32 | n as u64);
            let mut bounds = vec![LENGTHSCALE_BOUNDS; dim];
            bounds[dim - 1].0 = self.settings.fidelity_lengthscale_floor;
            fit_mle_bounded(augmented.dataset(), self.settings.mle_restarts, seed, &bounds)?.model
        } else {
            augmented
        });
        Ok(())
    }

    fn finish(self) -> Result<TuningResult> {
        let history = self.state.history;
        if history.is_empty() {
            return Err(Error::NoTrialsCompleted);
        }
        let pick = |allow_failed: bool| {
            history
                .iter()
                .filter(|t| allow_failed || t.status != TrialStatus::Failed)
                .min_by(|a, b| a.objective.total_cmp(&b.objective))
        };
        let best = pick(false).or_else(|| pick(true)).expect("non-empty history");
        Ok(TuningResult {
            best_config: best.config.clone(),
            best_validation_error_m: best.objective,
            curve: extract_curve(&history),
            history,
        })
    }
}

trait Executor {
    fn submit(&mut self, job: Job);
    fn next(&mut self) -> Done;
}

struct Inline<'r, 'a, O: Objective + ?Sized> {
    runner: &'r Runner<'a, O>,
    queue: VecDeque<Job>,
}

impl<O: Objective + ?Sized> Executor for Inline<'_, '_, O> {
    fn submit(&mut self, job: Job) {
        self.queue.push_back(job);
    }

    fn next(&mut self) -> Done {
        let job = self.queue.pop_front().expect("next() only called with work in flight");
        self.runner.run(job)
    }
}

struct Threaded {
    jobs: Option<mpsc::Sender<Job>>,
    results: mpsc::Receiver<Done>,
}

impl Executor for Threaded {
    fn submit(&mut self, job: Job) {
        self.jobs
            .as_ref()
            .expect("executor open")
            .send(job)
            .expect("workers alive while jobs are in flight");
    }

    fn next(&mut self) -> Done {
        self.results.recv().expect("workers alive while jobs are in flight")
    }
}

fn drive(coord: &mut Coordinator<'_>, exec: &mut dyn Executor, shared: &Shared) -> Result<()> {
    let workers = coord.settings.workers;
    let first_wave = match coord.strategy {
        Strategy::Bayesian => workers.min(coord.settings.init_trials.max(1)),
        Strategy::Random => workers,
    };
    let mut in_flight = 0usize;
    while in_flight < first_wave && coord.may_dispatch(shared) {
        exec.submit(coord.next_job(shared)?);
        in_flight += 1;
    }
    while in_flight > 0 {
        let done = exec.next();
        in_flight -= 1;
        coord.record(done, shared)?;
        while in_flight < workers && coord.may_dispatch(shared) {
            exec.submit(coord.next_job(shared)?);
            in_flight += 1;
        }
    }
    Ok(())
}

fn run<O: Objective + ?Sized>(
    space: &SearchSpace,
    objective: &O,
    settings: &TunerSettings,
    strategy: Strategy,
) -> Result<TuningResult> {
    settings.validate()?;
    if space.is_empty() {
        return Err(Error::invalid("search space has no parameters"));
    }
    let shared = Shared {
        completed_curves: RwLock::new(Vec::new()),
        start: Instant::now(),
    };
    let runner = Runner {
        objective,
        settings,
        shared: &shared,
    };
    let mut coord = Coordinator::new(space, settings, strategy);

    if settings.workers == 1 {
        let mut exec = Inline {
            runner: &runner,
            queue: VecDeque::new(),
        };
        drive(&mut coord, &mut exec, &shared)?;
    } else {
        let (job_tx, job_rx) = mpsc::channel::<Job>();
        let (done_tx, done_rx) = mpsc::channel::<Done>();
        let job_rx = Arc::new(Mutex::new(job_rx));
        std::thread::scope(|scope| -> Result<()> {
            for _ in 0..settings.workers {
                let job_rx = Arc::clone(&job_rx);
                let done_tx = done_tx.clone();
                let runner = &runner;
                scope.spawn(move || loop {
                    let job = match job_rx.lock().expect("job queue").recv() {
                        Ok(job) => job,
                        Err(_) => break,
                    };
                    if done_tx.send(runner.run(job)).is_err() {
                        break;
                    }
                });
            }
            drop(done_tx);
            let mut exec = Threaded {
                jobs: Some(job_tx),
                results: done_rx,
            };
            let outcome = drive(&mut coord, &mut exec, &shared);
            exec.jobs = None;
            outcome
        })?;
    }
    coord.finish()
}

/// Multi-fidelity Bayesian optimisation over `space`.
pub fn run_bo<O: Objective + ?Sized>(space: &SearchSpace, objective: &O, settings: &TunerSettings) -> Result<TuningResult> {
    run(space, objective, settings, Strategy::Bayesian)
}

/// Random-search baseline sharing the fidelity control, seeds and initial
/// configurations of [`run_bo`].
pub fn run_random_search<O: Objective + ?Sized>(
    space: &SearchSpace,
    objective: &O,
    settings: &TunerSettings,
) -> Result<TuningResult> {
    run(space, objective, settings, Strategy::Random)
}

fn fmt_f64(v: f64) -> String {
    format!("{v:?}")
}

/// Trials table: one row per trial in completion order.
pub fn trials_to_csv(space: &SearchSpace, history: &[TrialRecord]) -> String {
    let mut out = String::new();
    let mut header = vec!["trial".to_string(), "seed".to_string()];
    header.extend(space.params().iter().map(|p| p.name.clone()));
    header.extend(
        [
            "epoch_budget",
            "epochs",
            "status",
            "objective_m",
            "wall_time_s",
            "finished_at_s",
            "epoch_errors_m",
        ]
        .map(String::from),
    );
    let _ = writeln!(out, "{}", header.join(","));
    for t in history {
        let mut row = vec![t.index.to_string(), t.seed.to_string()];
        row.extend(
            space
                .params()
                .iter()
                .map(|p| t.config.get(&p.name).map(ToString::to_string).unwrap_or_default()),
        );
        row.push(t.epoch_budget.to_string());
        row.push(t.final_epochs.to_string());
        row.push(t.status.as_str().to_string());
        row.push(fmt_f64(t.objective));
        row.push(fmt_f64(t.wall_time_s));
        row.push(fmt_f64(t.finished_at_s));
        row.push(t.epoch_errors.iter().map(|e| fmt_f64(*e)).collect::<Vec<_>>().join(";"));
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

/// Parses a table written by [`trials_to_csv`].
pub fn trials_from_csv(space: &SearchSpace, text: &str, path: &Path) -> Result<Vec<TrialRecord>> {
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| perr(1, "missing header".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    let np = space.params().len();
    if cols.len() != np + 9 {
        return Err(perr(1, format!("expected {} columns, found {}", np + 9, cols.len())));
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let ln = i + 1;
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != cols.len() {
            return Err(perr(ln, format!("expected {} fields, found {}", cols.len(), f.len())));
        }
        let num = |s: &str| s.parse::<f64>().map_err(|e| perr(ln, format!("`{s}`: {e}")));
        let int = |s: &str| s.parse::<u64>().map_err(|e| perr(ln, format!("`{s}`: {e}")));
        let mut config = HyperConfig::new();
        for (p, raw) in space.params().iter().zip(&f[2..2 + np]) {
            let v = match p.kind {
                crate::space::ParamKind::Continuous { .. } => ParamValue::Real(num(raw)?),
                crate::space::ParamKind::Integer { .. } => {
                    ParamValue::Int(raw.parse().map_err(|e| perr(ln, format!("`{raw}`: {e}")))?)
                }
                crate::space::ParamKind::Categorical { .. } => ParamValue::Choice(raw.to_string()),
            };
            config.set(&p.name, v);
        }
        let rest = &f[2 + np..];
        let status = TrialStatus::parse(rest[2]).ok_or_else(|| perr(ln, format!("unknown status `{}`", rest[2])))?;
        let epoch_errors = if rest[6].is_empty() {
            Vec::new()
        } else {
            rest[6].split(';').map(num).collect::<Result<Vec<_>>>()?
        };
        out.push(TrialRecord {
            index: int(f[0])? as usize,
            seed: int(f[1])?,
            config,
            epoch_budget: int(rest[0])? as usize,
            final_epochs: int(rest[1])? as usize,
            status,
            objective: num(rest[3])?,
            wall_time_s: num(rest[4])?,
            finished_at_s: num(rest[5])?,
            epoch_errors,
        });
    }
    Ok(out)
}

pub fn curve_to_csv(curve: &[CurvePoint]) -> String {
    let mut out = String::from("elapsed_s,best_error_m\n");
    for p in curve {
        let _ = writeln!(out, "{},{}", fmt_f64(p.elapsed_s), fmt_f64(p.best_error_m));
    }
    out
}

/// Surrogate over the history, built the same way the loop builds it; used
/// by tests and diagnostics.
pub fn history_dataset(space: &SearchSpace, fidelity: &FidelitySchedule, history: &[TrialRecord]) -> Result<GpDataset> {
    let mut ds = GpDataset::new(space.encoded_dim() + 1);
    for t in history {
        let mut x = space.encode(&t.config)?;
        x.push(fidelity.coordinate(t.surrogate_epochs()));
        ds.push(x, -t.objective)?;
    }
    Ok(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::space::{ParamSpec, Scale};

    fn line_space() -> SearchSpace {
        SearchSpace::new("x", vec![ParamSpec::continuous("x", 0.0, 1.0, Scale::Linear, false)]).unwrap()
    }

    fn quad() -> EpochCurve<impl Fn(&HyperConfig, usize) -> f64 + Sync> {
        EpochCurve(|c: &HyperConfig, _e: usize| (c.real("x").unwrap() - 0.3).powi(2))
    }

    fn serial(trials: usize, seed: u64) -> TunerSettings {
        let mut s = TunerSettings::new(Budget::trials(trials), seed);
        s.fidelity = FidelitySchedule {
            min_epochs: 2,
            max_epochs: 4,
            warmup_trials: 0,
        };
        s.clock = Clock::Virtual { seconds_per_epoch: 1.0 };
        s.proposal.n_candidates = 500;
        s
    }

    #[test]
    fn degenerate_budget_is_pure_random() {
        let mut s = serial(3, 11);
        s.init_trials = 3;
        let r = run_bo(&line_space(), &quad(), &s).unwrap();
        assert_eq!(r.history.len(), 3);
        let mut rng = rng::child(11, 0x5eed_c0f9);
        for t in &r.history {
            assert_eq!(t.config, line_space().sample_random(&mut rng));
        }
        let best = r
            .history
            .iter()
            .min_by(|a, b| a.objective.total_cmp(&b.objective))
            .unwrap();
        assert_eq!(r.best_config, best.config);
    }

    #[test]
    fn finds_quadratic_minimum() {
        let mut hits = 0;
        for seed in 0..10 {
            let r = run_bo(&line_space(), &quad(), &serial(25, seed)).unwrap();
            if (r.best_config.real("x").unwrap() - 0.3).abs() < 0.05 {
                hits += 1;
            }
        }
        assert!(hits >= 9, "{hits}/10");
    }

    #[test]
    fn serial_runs_are_deterministic() {
        let space = SearchSpace::preset("localisation-wifi").unwrap();
        let obj = EpochCurve(|c: &HyperConfig, e: usize| {
            let lr = c.real("learning_rate").unwrap().log10();
            (lr + 2.0).powi(2) + 1.0 / e as f64 + c.int("units1").unwrap() as f64 / 1000.0
        });
        let a = run_bo(&space, &obj, &serial(12, 3)).unwrap();
        let b = run_bo(&space, &obj, &serial(12, 3)).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(trials_to_csv(&space, &a.history), trials_to_csv(&space, &b.history));
    }

    #[test]
    fn bo_and_rs_share_initial_trials() {
        let mut s = serial(8, 5);
        s.init_trials = 4;
        let bo = run_bo(&line_space(), &quad(), &s).unwrap();
        let rs = run_random_search(&line_space(), &quad(), &s).unwrap();
        assert_eq!(&bo.history[..4], &rs.history[..4]);
    }

    #[test]
    fn zero_budget_reports_no_trials() {
        let s = TunerSettings::new(Budget::seconds(0.0), 1);
        let err = run_random_search(&line_space(), &quad(), &s).unwrap_err();
        assert_eq!(err.to_string(), "no trials completed");
    }

    #[test]
    fn failures_get_penalty_and_loop_continues() {
        let obj = |c: &HyperConfig, epochs: usize, _s: u64, m: &mut Monitor<'_>| {
            let x = c.real("x").unwrap();
            if x > 0.5 {
                return Evaluation {
                    epoch_errors: vec![],
                    failure: Some("diverged".into()),
                };
            }
            let mut errs = vec![];
            for e in 1..=epochs {
                errs.push(x);
                if m(e, x) == StopDecision::Stop {
                    break;
                }
            }
            Evaluation {
                epoch_errors: errs,
                failure: None,
            }
        };
        let r = run_bo(&line_space(), &obj, &serial(15, 2)).unwrap();
        assert_eq!(r.history.len(), 15);
        let failed: Vec<_> = r.history.iter().filter(|t| t.status == TrialStatus::Failed).collect();
        assert!(!failed.is_empty());
        for t in failed {
            assert!(t.objective >= 10.0);
        }
        assert!(r.best_validation_error_m <= 0.5);
    }

    #[test]
    fn median_rule_cuts_bad_trials() {
        let mut s = serial(20, 4);
        s.fidelity = FidelitySchedule {
            min_epochs: 10,
            max_epochs: 10,
            warmup_trials: 0,
        };
        s.stopping = MedianStopping { grace_epochs: 3 };
        let r = run_random_search(&line_space(), &quad(), &s).unwrap();
        let stopped: Vec<_> = r.history.iter().filter(|t| t.status == TrialStatus::StoppedEarly).collect();
        assert!(!stopped.is_empty());
        for t in stopped {
            assert_eq!(t.final_epochs, 3);
            assert_eq!(t.epoch_errors.len(), t.final_epochs);
        }
    }

    #[test]
    fn wall_budget_is_respected() {
        let obj = EpochCurve(|c: &HyperConfig, _e: usize| {
            std::thread::sleep(std::time::Duration::from_millis(2));
            c.real("x").unwrap()
        });
        let mut s = TunerSettings::new(Budget::seconds(0.3), 9);
        s.fidelity.max_epochs = 20;
        s.proposal.n_candidates = 200;
        s.mle_restarts = 2;
        let r = run_bo(&line_space(), &obj, &s).unwrap();
        assert!(!r.history.is_empty());
        let last = r.history.last().unwrap();
        assert!(last.finished_at_s < 0.3 + 0.5);
    }

    #[test]
    fn parallel_workers_reproduce_trial_results() {
        let space = line_space();
        let obj = |c: &HyperConfig, epochs: usize, seed: u64, m: &mut Monitor<'_>| {
            let noise = (seed % 1000) as f64 * 1e-6;
            let mut errs = vec![];
            for e in 1..=epochs {
                let v = (c.real("x").unwrap() - 0.3).abs() + noise;
                errs.push(v);
                if m(e, v) == StopDecision::Stop {
                    break;
                }
            }
            Evaluation {
                epoch_errors: errs,
                failure: None,
            }
        };
        let mut s = serial(12, 21);
        s.workers = 3;
        s.init_trials = 12;
        s.stopping.grace_epochs = 100;
        let a = run_random_search(&space, &obj, &s).unwrap();
        let b = run_random_search(&space, &obj, &s).unwrap();
        let key = |r: &TuningResult| {
            let mut v: Vec<(usize, Vec<f64>)> = r.history.iter().map(|t| (t.index, t.epoch_errors.clone())).collect();
            v.sort_by_key(|p| p.0);
            v
        };
        assert_eq!(key(&a), key(&b));
        assert_eq!(a.history.len(), 12);
    }

    #[test]
    fn parallel_bo_runs_and_never_duplicates_pending() {
        let space = SearchSpace::new("k", vec![ParamSpec::integer("k", 0, 3)]).unwrap();
        let obj = EpochCurve(|c: &HyperConfig, _e: usize| {
            std::thread::sleep(std::time::Duration::from_millis(1));
            (c.int("k").unwrap() as f64 - 2.0).abs()
        });
        let mut s = serial(10, 8);
        s.workers = 3;
        s.init_trials = 2;
        let r = run_bo(&space, &obj, &s).unwrap();
        assert_eq!(r.history.len(), 10);
        assert_eq!(r.best_config.int("k"), Some(2));
    }

    #[test]
    fn curve_is_running_minimum() {
        let mk = |obj: f64, t: f64| TrialRecord {
            index: 0,
            config: HyperConfig::new(),
            seed: 0,
            status: TrialStatus::Completed,
            epoch_errors: vec![obj],
            epoch_budget: 1,
            final_epochs: 1,
            wall_time_s: 0.0,
            finished_at_s: t,
            objective: obj,
        };
        let c = extract_curve(&[mk(0.9, 1.0), mk(0.5, 2.0), mk(0.7, 3.0)]);
        let pairs: Vec<(f64, f64)> = c.iter().map(|p| (p.elapsed_s, p.best_error_m)).collect();
        assert_eq!(pairs, vec![(1.0, 0.9), (2.0, 0.5), (3.0, 0.5)]);
        assert_eq!(extract_curve(&[mk(0.4, 0.5)]).len(), 1);
    }

    #[test]
    fn trials_csv_roundtrip() {
        let space = SearchSpace::preset("localisation-wifi").unwrap();
        let obj = EpochCurve(|c: &HyperConfig, e: usize| c.real("dropout1").unwrap() + 1.0 / e as f64);
        let r = run_random_search(&space, &obj, &serial(6, 1)).unwrap();
        let text = trials_to_csv(&space, &r.history);
        let back = trials_from_csv(&space, &text, Path::new("trials.csv")).unwrap();
        assert_eq!(back, r.history);
    }

    #[test]
    fn gp_size_tracks_history() {
        let space = line_space();
        let s = serial(9, 6);
        let r = run_bo(&space, &quad(), &s).unwrap();
        let ds = history_dataset(&space, &s.fidelity, &r.history).unwrap();
        assert_eq!(ds.len(), r.history.len());
    }

    #[test]
    fn refit_schedule() {
        let r = RefitSchedule::default();
        assert!(r.should_refit(1) && r.should_refit(50));
        assert!(!r.should_refit(51) && r.should_refit(55) && r.should_refit(60));
    }
}
