//! Experiment configuration and the commands behind the `boloc` binary:
//! dataset generation, BO/RS tuning sweeps, final training, evaluation and
//! comparison reports.
//!
//! A run directory holds flat, per-run files:
//!
//! - `trials_<method>_seed<k>.csv`, `curve_<method>_seed<k>.csv`,
//!   `best_config_<method>_seed<k>.toml` from `tune`;
//! - `model_<method>_seed<k>.txt`, `pipeline_<method>_seed<k>.txt`,
//!   `outcome_<method>_seed<k>.csv` from `train`;
//! - `report.txt`, `report.csv`, `report_seeds.csv` from `report`.
//!
//! Reports read only the outcome CSVs, so they work on any past run.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, FeatureLayout, LocalisationDataset, ScenarioConfig};
use crate::error::{Error, Result};
use crate::features::FeaturePipeline;
use crate::fidelity::{FidelitySchedule, MedianStopping};
use crate::mlp::{localisation_error, MlpModel};
use crate::objective::LocalisationObjective;
use crate::space::SearchSpace;
use crate::tuner::{
    curve_to_csv, run_bo, run_random_search, trials_to_csv, Budget, Clock, TunerSettings, TuningResult,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Bo,
    Rs,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Bo => "bo",
            Method::Rs => "rs",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "bo" => Some(Method::Bo),
            "rs" => Some(Method::Rs),
            _ => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Exactly one of `synthetic` or `csv` must be set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetSection {
    pub synthetic: Option<ScenarioConfig>,
    pub csv: Option<PathBuf>,
    #[serde(default = "default_split_ratios")]
    pub split_ratios: [f64; 3],
    #[serde(default)]
    pub split_seed: u64,
}

fn default_split_ratios() -> [f64; 3] {
    [0.7, 0.15, 0.15]
}

/// Exactly one of `preset` or `file` must be set.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpaceSection {
    pub preset: Option<String>,
    pub file: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TunerSection {
    pub budget_s: Option<f64>,
    pub max_trials: Option<usize>,
    pub workers: usize,
    pub init_trials: usize,
    pub seeds: Vec<u64>,
    pub methods: Vec<Method>,
    /// When set, tuning time is counted as this many seconds per executed
    /// epoch instead of wall-clock time.
    pub virtual_seconds_per_epoch: Option<f64>,
}

impl Default for TunerSection {
    fn default() -> Self {
        TunerSection {
            budget_s: Some(200.0),
            max_trials: None,
            workers: 1,
            init_trials: 5,
            seeds: (0..10).collect(),
            methods: vec![Method::Bo, Method::Rs],
            virtual_seconds_per_epoch: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FidelitySection {
    pub min_epochs: usize,
    pub max_epochs: usize,
    pub warmup_trials: usize,
    pub grace_epochs: usize,
}

impl Default for FidelitySection {
    fn default() -> Self {
        let f = FidelitySchedule::default();
        FidelitySection {
            min_epochs: f.min_epochs,
            max_epochs: f.max_epochs,
            warmup_trials: f.warmup_trials,
            grace_epochs: MedianStopping::default().grace_epochs,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetSection,
    pub space: SpaceSection,
    #[serde(default)]
    pub tuner: TunerSection,
    #[serde(default)]
    pub fidelity: FidelitySection,
    #[serde(default = "default_final_epochs")]
    pub final_epochs: usize,
    /// Feature processing order; only `scale-pca` is implemented.
    #[serde(default = "default_pipeline_order")]
    pub pipeline_order: String,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
}

fn default_final_epochs() -> usize {
    200
}

fn default_pipeline_order() -> String {
    "scale-pca".into()
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("runs")
}

pub const PRESETS: [&str; 2] = ["localisation-wifi", "localisation-uwb"];

impl ExperimentConfig {
    /// `localisation-wifi` (alias `wifi-like`): 7 features, PCA count tuned,
    /// 200 s budget. `localisation-uwb` (alias `uwb-like`): 12 range, bearing
    /// and RSS features, no PCA, 1000 s budget. Both use 10 seeds and 200
    /// final epochs.
    pub fn preset(name: &str) -> Result<Self> {
        let (space, layout, budget, scenario) = match name {
            "localisation-wifi" | "wifi-like" => (
                "localisation-wifi",
                FeatureLayout::Wifi7,
                200.0,
                ScenarioConfig::default(),
            ),
            "localisation-uwb" | "uwb-like" => (
                "localisation-uwb",
                FeatureLayout::Full,
                1000.0,
                ScenarioConfig {
                    sigma_range_m: 0.05,
                    ..ScenarioConfig::default()
                },
            ),
            other => return Err(Error::config("preset", format!("unknown preset `{other}`"))),
        };
        Ok(ExperimentConfig {
            dataset: DatasetSection {
                synthetic: Some(ScenarioConfig { layout, ..scenario }),
                csv: None,
                split_ratios: default_split_ratios(),
                split_seed: 0,
            },
            space: SpaceSection {
                preset: Some(space.into()),
                file: None,
            },
            tuner: TunerSection {
                budget_s: Some(budget),
                ..TunerSection::default()
            },
            fidelity: FidelitySection::default(),
            final_epochs: default_final_epochs(),
            pipeline_order: default_pipeline_order(),
            output_dir: default_output_dir(),
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::config("experiment", e.to_string().trim_end()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::config("config", format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::from_toml_str(&text)?;
        // relative paths in the file are relative to the file
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(csv) = &cfg.dataset.csv {
            cfg.dataset.csv = Some(base.join(csv));
        }
        if let Some(file) = &cfg.space.file {
            cfg.space.file = Some(base.join(file));
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("experiment config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        match (&self.dataset.synthetic, &self.dataset.csv) {
            (Some(s), None) => s.validate()?,
            (None, Some(_)) => {}
            _ => return Err(Error::config("dataset", "set exactly one of `synthetic` or `csv`")),
        }
        if self.space.preset.is_some() == self.space.file.is_some() {
            return Err(Error::config("space", "set exactly one of `preset` or `file`"));
        }
        let t = &self.tuner;
        if t.seeds.is_empty() {
            return Err(Error::config("tuner.seeds", "need at least one seed"));
        }
        if t.methods.is_empty() {
            return Err(Error::config("tuner.methods", "need at least one method"));
        }
        if t.workers == 0 {
            return Err(Error::config("tuner.workers", "need at least one worker"));
        }
        if t.budget_s.is_none() && t.max_trials.is_none() {
            return Err(Error::config("tuner", "set `budget_s` or `max_trials`"));
        }
        if let Some(b) = t.budget_s {
            if !(b.is_finite() && b >= 0.0) {
                return Err(Error::config("tuner.budget_s", "must be finite and non-negative"));
            }
        }
        if let Some(v) = t.virtual_seconds_per_epoch {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::config("tuner.virtual_seconds_per_epoch", "must be positive"));
            }
        }
        let f = &self.fidelity;
        if f.min_epochs == 0 || f.max_epochs < f.min_epochs {
            return Err(Error::config("fidelity", "need 1 <= min_epochs <= max_epochs"));
        }
        if self.final_epochs == 0 {
            return Err(Error::config("final_epochs", "must be at least 1"));
        }
        if self.pipeline_order != "scale-pca" {
            return Err(Error::config("pipeline_order", "only `scale-pca` is supported"));
        }
        let r = self.dataset.split_ratios;
        if r.iter().any(|v| !(*v > 0.0)) || (r.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::config("dataset.split_ratios", "must be positive and sum to 1"));
        }
        Ok(())
    }

    pub fn search_space(&self) -> Result<SearchSpace> {
        match (&self.space.preset, &self.space.file) {
            (Some(p), None) => SearchSpace::preset(p),
            (None, Some(f)) => SearchSpace::load(f),
            _ => Err(Error::config("space", "set exactly one of `preset` or `file`")),
        }
    }

    /// Loads or generates the dataset and applies the configured split.
    pub fn dataset(&self) -> Result<LocalisationDataset> {
        let raw = match (&self.dataset.synthetic, &self.dataset.csv) {
            (Some(s), None) => generate_synthetic(s)?,
            (None, Some(p)) => LocalisationDataset::load_csv(p)?,
            _ => return Err(Error::config("dataset", "set exactly one of `synthetic` or `csv`")),
        };
        raw.split(self.dataset.split_ratios, self.dataset.split_seed)
    }

    pub fn tuner_settings(&self, seed: u64) -> TunerSettings {
        let t = &self.tuner;
        let mut s = TunerSettings::new(
            Budget {
                wall_s: t.budget_s,
                max_trials: t.max_trials,
            },
            seed,
        );
        s.workers = t.workers;
        s.init_trials = t.init_trials;
        s.fidelity = FidelitySchedule {
            min_epochs: self.fidelity.min_epochs,
            max_epochs: self.fidelity.max_epochs,
            warmup_trials: self.fidelity.warmup_trials,
        };
        s.stopping = MedianStopping {
            grace_epochs: self.fidelity.grace_epochs,
        };
        if let Some(v) = t.virtual_seconds_per_epoch {
            s.clock = Clock::Virtual { seconds_per_epoch: v };
        }
        s
    }
}

pub fn run_file_name(kind: &str, method: Method, seed: u64, ext: &str) -> String {
    format!("{kind}_{method}_seed{seed}.{ext}")
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes the synthetic dataset and its scenario manifest. Returns the CSV
/// path.
pub fn cmd_generate(cfg: &ExperimentConfig, out_dir: &Path) -> Result<PathBuf> {
    let scenario = cfg
        .dataset
        .synthetic
        .as_ref()
        .ok_or_else(|| Error::config("dataset.synthetic", "generate needs a synthetic scenario"))?;
    let ds = generate_synthetic(scenario)?;
    let csv = out_dir.join("dataset.csv");
    write(&csv, &ds.to_csv_string())?;
    let manifest = toml::to_string(scenario).expect("scenario serializes");
    write(&out_dir.join("scenario.toml"), &manifest)?;
    Ok(csv)
}

/// One tuning run of a sweep.
pub struct RunSummary {
    pub method: Method,
    pub seed: u64,
    pub result: Result<TuningResult>,
}

/// Runs every configured method for every seed and writes per-run trials,
/// curve and best-config files. A failing run is reported in its summary
/// and does not stop the sweep.
pub fn cmd_tune(cfg: &ExperimentConfig) -> Result<Vec<RunSummary>> {
    cfg.validate()?;
    let space = cfg.search_space()?;
    let objective = LocalisationObjective::new(&cfg.dataset()?)?;
    let out = &cfg.output_dir;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let mut runs = Vec::new();
    for &seed in &cfg.tuner.seeds {
        for &method in &cfg.tuner.methods {
            let settings = cfg.tuner_settings(seed);
            let result = match method {
                Method::Bo => run_bo(&space, &objective, &settings),
                Method::Rs => run_random_search(&space, &objective, &settings),
            };
            if let Ok(r) = &result {
                write(&out.join(run_file_name("trials", method, seed, "csv")), &trials_to_csv(&space, &r.history))?;
                write(&out.join(run_file_name("curve", method, seed, "csv")), &curve_to_csv(&r.curve))?;
                write(
                    &out.join(run_file_name("best_config", method, seed, "toml")),
                    &space.config_to_toml(&r.best_config),
                )?;
            }
            runs.push(RunSummary { method, seed, result });
        }
    }
    Ok(runs)
}

/// Final-training result for one run.
#[derive(Clone, Debug, PartialEq)]
pub struct OutcomeRow {
    pub method: String,
    pub seed: u64,
    pub epochs: usize,
    pub train_error_m: f64,
    pub val_error_m: f64,
    pub test_error_m: f64,
}

const OUTCOME_HEADER: &str = "method,seed,epochs,train_error_m,val_error_m,test_error_m";

impl OutcomeRow {
    pub fn to_csv(&self) -> String {
        format!(
            "{OUTCOME_HEADER}\n{},{},{},{:?},{:?},{:?}\n",
            self.method, self.seed, self.epochs, self.train_error_m, self.val_error_m, self.test_error_m
        )
    }
}

/// Splits `best_config_<method>_seed<k>.toml` into method and seed.
fn parse_run_stem(stem: &str, kind: &str) -> Option<(String, u64)> {
    let rest = stem.strip_prefix(kind)?.strip_prefix('_')?;
    let (method, seed) = rest.rsplit_once("_seed")?;
    Some((method.to_string(), seed.parse().ok()?))
}

/// Retrains a best-config file for `epochs` epochs with the run's seed and
/// writes model, pipeline and outcome files next to it.
pub fn cmd_train(cfg: &ExperimentConfig, best_config: &Path, epochs: usize) -> Result<OutcomeRow> {
    if epochs == 0 {
        return Err(Error::config("epochs", "must be at least 1"));
    }
    let space = cfg.search_space()?;
    let text = std::fs::read_to_string(best_config).map_err(|e| Error::io(best_config, e))?;
    let config = space.config_from_toml(&text)?;
    let stem = best_config.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
    let (method, seed) = parse_run_stem(stem, "best_config").unwrap_or_else(|| (stem.to_string(), 0));
    let objective = LocalisationObjective::new(&cfg.dataset()?)?;
    let (pipeline, outcome) = objective.retrain(&config, epochs, seed)?;
    let dir = best_config.parent().unwrap_or(Path::new("."));
    let tag = format!("{method}_seed{seed}");
    outcome.model.save(&dir.join(format!("model_{tag}.txt")))?;
    pipeline.save(&dir.join(format!("pipeline_{tag}.txt")))?;
    let row = OutcomeRow {
        method,
        seed,
        epochs,
        train_error_m: outcome.train_error_m,
        val_error_m: outcome.val_error_m,
        test_error_m: outcome.test_error_m,
    };
    write(&dir.join(format!("outcome_{tag}.csv")), &row.to_csv())?;
    Ok(row)
}

/// Runs [`cmd_train`] for every best-config file in the output directory.
pub fn cmd_train_all(cfg: &ExperimentConfig, epochs: usize) -> Result<Vec<OutcomeRow>> {
    let mut files = list_files(&cfg.output_dir, "best_config_", ".toml")?;
    files.sort();
    files.iter().map(|f| cmd_train(cfg, f, epochs)).collect()
}

fn list_files(dir: &Path, prefix: &str, suffix: &str) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if name.starts_with(prefix) && name.ends_with(suffix) {
            out.push(entry.path());
        }
    }
    Ok(out)
}

/// Mean localisation error of a saved model and pipeline over every row of
/// a dataset CSV.
pub fn cmd_eval(model: &Path, pipeline: &Path, dataset: &Path) -> Result<f64> {
    let model = MlpModel::load(model)?;
    let pipeline = FeaturePipeline::load(pipeline)?;
    let ds = LocalisationDataset::load_csv(dataset)?;
    let x = pipeline.apply(ds.features.view())?;
    let pred: Array2<f64> = model.predict_positions(x.view())?;
    localisation_error(pred.view(), ds.labels.view())
}

/// Aggregate over seeds for one method.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodSummary {
    pub method: String,
    pub n_seeds: usize,
    pub mean_train_m: f64,
    pub mean_val_m: f64,
    pub mean_test_m: f64,
    /// Relative test-error reduction against random search, in percent; only
    /// set on the BO row when both methods are present.
    pub reduction_pct: Option<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ComparisonReport {
    pub rows: Vec<OutcomeRow>,
    pub summaries: Vec<MethodSummary>,
}

impl ComparisonReport {
    pub fn from_rows(mut rows: Vec<OutcomeRow>) -> Self {
        rows.sort_by(|a, b| (a.method.as_str(), a.seed).cmp(&(b.method.as_str(), b.seed)));
        let mut groups: BTreeMap<&str, Vec<&OutcomeRow>> = BTreeMap::new();
        for r in &rows {
            groups.entry(r.method.as_str()).or_default().push(r);
        }
        let mean = |g: &[&OutcomeRow], f: fn(&OutcomeRow) -> f64| g.iter().map(|r| f(r)).sum::<f64>() / g.len() as f64;
        let mut summaries: Vec<MethodSummary> = groups
            .iter()
            .map(|(m, g)| MethodSummary {
                method: m.to_string(),
                n_seeds: g.len(),
                mean_train_m: mean(g, |r| r.train_error_m),
                mean_val_m: mean(g, |r| r.val_error_m),
                mean_test_m: mean(g, |r| r.test_error_m),
                reduction_pct: None,
            })
            .collect();
        let rs = summaries.iter().find(|s| s.method == "rs").map(|s| s.mean_test_m);
        if let (Some(rs), Some(bo)) = (rs, summaries.iter_mut().find(|s| s.method == "bo")) {
            if rs > 0.0 {
                bo.reduction_pct = Some(100.0 * (rs - bo.mean_test_m) / rs);
            }
        }
        ComparisonReport { rows, summaries }
    }

    pub fn summary_csv(&self) -> String {
        let mut out = String::from("method,n_seeds,train_error_m,val_error_m,test_error_m,test_reduction_pct\n");
        for s in &self.summaries {
            let red = s.reduction_pct.map(|r| format!("{r:?}")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{},{},{:?},{:?},{:?},{}",
                s.method, s.n_seeds, s.mean_train_m, s.mean_val_m, s.mean_test_m, red
            );
        }
        out
    }

    pub fn seeds_csv(&self) -> String {
        let mut out = String::from(OUTCOME_HEADER);
        out.push('\n');
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{},{},{},{:?},{:?},{:?}",
                r.method, r.seed, r.epochs, r.train_error_m, r.val_error_m, r.test_error_m
            );
        }
        out
    }

    /// Aligned text table: per-seed rows, then per-method means.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{:<8} {:>6} {:>10} {:>10} {:>10}", "method", "seed", "train[m]", "val[m]", "test[m]");
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<8} {:>6} {:>10.4} {:>10.4} {:>10.4}",
                r.method, r.seed, r.train_error_m, r.val_error_m, r.test_error_m
            );
        }
        out.push('\n');
        let _ = writeln!(
            out,
            "{:<8} {:>6} {:>10} {:>10} {:>10} {:>12}",
            "method", "seeds", "train[m]", "val[m]", "test[m]", "reduction"
        );
        for s in &self.summaries {
            let red = s.reduction_pct.map(|r| format!("{r:.1}%")).unwrap_or_default();
            let _ = writeln!(
                out,
                "{:<8} {:>6} {:>10.4} {:>10.4} {:>10.4} {:>12}",
                s.method, s.n_seeds, s.mean_train_m, s.mean_val_m, s.mean_test_m, red
            );
        }
        out
    }
}

fn read_outcomes(path: &Path) -> Result<Vec<OutcomeRow>> {
    let perr = |line: u64, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: line as usize,
        msg,
    };
    let mut reader = csv::Reader::from_path(path).map_err(|e| perr(0, e.to_string()))?;
    let header = reader.headers().map_err(|e| perr(1, e.to_string()))?;
    if header.iter().collect::<Vec<_>>().join(",") != OUTCOME_HEADER {
        return Err(perr(1, format!("expected header `{OUTCOME_HEADER}`")));
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| perr(e.position().map_or(0, |p| p.line()), e.to_string()))?;
        let line = rec.position().map_or(0, |p| p.line());
        let num = |i: usize| -> Result<f64> {
            rec[i]
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite() && *v >= 0.0)
                .ok_or_else(|| perr(line, format!("bad value `{}`", &rec[i])))
        };
        rows.push(OutcomeRow {
            method: rec[0].to_string(),
            seed: rec[1].parse().map_err(|_| perr(line, "bad seed".into()))?,
            epochs: rec[2].parse().map_err(|_| perr(line, "bad epoch count".into()))?,
            train_error_m: num(3)?,
            val_error_m: num(4)?,
            test_error_m: num(5)?,
        });
    }
    Ok(rows)
}

/// Builds the comparison report from every `outcome_*.csv` in `run_dir` and
/// writes `report.txt`, `report.csv` and `report_seeds.csv`.
pub fn cmd_report(run_dir: &Path) -> Result<ComparisonReport> {
    let mut files = list_files(run_dir, "outcome_", ".csv")?;
    files.sort();
    if files.is_empty() {
        return Err(Error::invalid(format!("no outcome files in {}", run_dir.display())));
    }
    let mut rows = Vec::new();
    for f in &files {
        rows.extend(read_outcomes(f)?);
    }
    let report = ComparisonReport::from_rows(rows);
    write(&run_dir.join("report.txt"), &report.to_text())?;
    write(&run_dir.join("report.csv"), &report.summary_csv())?;
    write(&run_dir.join("report_seeds.csv"), &report.seeds_csv())?;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: &str, seed: u64, test: f64) -> OutcomeRow {
        OutcomeRow {
            method: method.into(),
            seed,
            epochs: 200,
            train_error_m: test / 2.0,
            val_error_m: test * 0.9,
            test_error_m: test,
        }
    }

    #[test]
    fn presets_validate_and_roundtrip() {
        for p in PRESETS.iter().chain(&["wifi-like", "uwb-like"]) {
            let cfg = ExperimentConfig::preset(p).unwrap();
            cfg.validate().unwrap();
            let back = ExperimentConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(cfg.final_epochs, 200);
            assert_eq!(cfg.tuner.seeds.len(), 10);
        }
        assert_eq!(ExperimentConfig::preset("localisation-wifi").unwrap().tuner.budget_s, Some(200.0));
        assert_eq!(ExperimentConfig::preset("localisation-uwb").unwrap().tuner.budget_s, Some(1000.0));
        assert!(ExperimentConfig::preset("nope").is_err());
    }

    #[test]
    fn validation_names_fields() {
        let mut cfg = ExperimentConfig::preset("wifi-like").unwrap();
        cfg.tuner.seeds.clear();
        assert!(matches!(cfg.validate(), Err(Error::Config { field, .. }) if field == "tuner.seeds"));
        let mut cfg = ExperimentConfig::preset("wifi-like").unwrap();
        cfg.dataset.csv = Some("x.csv".into());
        assert!(matches!(cfg.validate(), Err(Error::Config { field, .. }) if field == "dataset"));
        let mut cfg = ExperimentConfig::preset("wifi-like").unwrap();
        cfg.dataset.synthetic.as_mut().unwrap().room_height_m = 0.0;
        assert!(matches!(cfg.validate(), Err(Error::Config { field, .. }) if field == "room_height_m"));
    }

    #[test]
    fn reduction_arithmetic() {
        let r = ComparisonReport::from_rows(vec![row("bo", 0, 0.9), row("rs", 0, 1.0)]);
        let bo = r.summaries.iter().find(|s| s.method == "bo").unwrap();
        assert!((bo.reduction_pct.unwrap() - 10.0).abs() < 1e-9);
        assert!(r.to_text().contains("10.0%"));
    }

    #[test]
    fn single_method_has_no_reduction() {
        let r = ComparisonReport::from_rows(vec![row("bo", 3, 0.5)]);
        assert_eq!(r.summaries.len(), 1);
        assert!(r.summaries[0].reduction_pct.is_none());
        let csv = r.summary_csv();
        assert_eq!(csv.lines().count(), 2);
        assert!(csv.lines().nth(1).unwrap().ends_with(','));
    }

    #[test]
    fn means_match_rows() {
        let rows: Vec<OutcomeRow> = (0..7).map(|s| row("rs", s, 0.1 + s as f64 * 0.37)).collect();
        let r = ComparisonReport::from_rows(rows.clone());
        let mean = rows.iter().map(|r| r.test_error_m).sum::<f64>() / 7.0;
        assert!((r.summaries[0].mean_test_m - mean).abs() < 1e-12);
    }

    #[test]
    fn run_stem_parsing() {
        assert_eq!(parse_run_stem("best_config_bo_seed12", "best_config"), Some(("bo".into(), 12)));
        assert_eq!(parse_run_stem("other", "best_config"), None);
    }
}
