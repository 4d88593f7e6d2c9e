use std::path::{Path, PathBuf};
use std::str::FromStr;

use cryda_core::dsp::{ActivityConfig, AudioClip, PitchConfig};
use cryda_core::evaldiag::{
    build_report, domain_id_experiment, mean_stderr, pitch_distribution, wasserstein1d, xgen_experiment,
    DomainIdReport, MetricsReport, PitchDistribution, XgenReport, PITCH_BIN_HZ, PITCH_RANGE_HZ,
};
use cryda_core::model::{load_checkpoint, save_checkpoint};
use cryda_core::synth::{generate_corpus, Corpus};
use cryda_core::uda::{train, train_from, Method, RunMetrics, RunOutput, TrainData, TrainRunConfig};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{CliError, CliResult};

pub const METRICS_FILE: &str = "metrics.json";
pub const HISTORY_FILE: &str = "history.jsonl";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const CONFIG_ECHO_FILE: &str = "experiment.toml";

/// Contents of `metrics.json`.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MetricsFile {
    #[serde(flatten)]
    pub metrics: RunMetrics,
    pub config: TrainRunConfig,
    pub meta: Meta,
}

/// Provenance that is not part of the result itself.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Meta {
    pub cryda_version: String,
}

impl Meta {
    fn current() -> Self {
        Meta { cryda_version: env!("CARGO_PKG_VERSION").to_string() }
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    write_text(path, &(serde_json::to_string_pretty(value)? + "\n"))
}

fn write_xy(path: &Path, rows: impl IntoIterator<Item = (f64, f64)>) -> CliResult<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["x", "y"])?;
    for (x, y) in rows {
        w.write_record([x.to_string(), y.to_string()])?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn echo_config(dir: &Path, cfg: &ExperimentConfig) -> CliResult<()> {
    write_text(&dir.join(CONFIG_ECHO_FILE), &cfg.to_toml())
}

fn load_corpus(cfg: &ExperimentConfig, dir: &Path) -> CliResult<TrainData> {
    if !dir.join("manifest.csv").is_file() {
        return Err(CliError::MissingDependency(format!(
            "no corpus at {} (run `cryda synth` first)",
            dir.display()
        )));
    }
    Ok(TrainData::load(dir, &cfg.features)?)
}

pub fn parse_method(s: &str) -> CliResult<Method> {
    s.parse::<Method>().map_err(|e| CliError::Usage(e.to_string()))
}

/// Generates the corpus and writes it under `out`.
pub fn cmd_synth(cfg: &ExperimentConfig, out: &Path, seed: Option<u64>) -> CliResult<Corpus> {
    let mut cfg = cfg.clone();
    if let Some(s) = seed {
        cfg.corpus.seed = s;
    }
    create_dir(out)?;
    let corpus = generate_corpus(&cfg.corpus.config, cfg.corpus.seed)?;
    corpus.write(out)?;
    echo_config(out, &cfg)?;
    Ok(corpus)
}

/// One training job. Unsupervised BN adapts the baseline in `from_checkpoint`
/// and fails without it.
pub fn cmd_train(
    cfg: &ExperimentConfig,
    corpus: &Path,
    method: Method,
    seed: u64,
    out: &Path,
    from_checkpoint: Option<&Path>,
) -> CliResult<RunOutput> {
    let mut run_cfg = cfg.run_config(method, seed)?;
    if method == Method::Bn && from_checkpoint.is_none() {
        return Err(CliError::MissingDependency(
            "method bn adapts a trained baseline; pass --from-checkpoint <baseline>/model.ckpt".into(),
        ));
    }
    if let Some(p) = from_checkpoint {
        if !p.is_file() {
            return Err(CliError::MissingDependency(format!("checkpoint {} not found", p.display())));
        }
    }
    let data = load_corpus(cfg, corpus)?;
    create_dir(out)?;
    let output = match from_checkpoint {
        Some(p) => {
            if method == Method::Bn {
                run_cfg.epochs = 0;
            }
            train_from(&data, load_checkpoint(p)?, &run_cfg)?
        }
        None => train(&data, &cfg.model, &run_cfg)?,
    };
    save_checkpoint(&output.model, &out.join(CHECKPOINT_FILE))?;
    output.history.write_jsonl(&out.join(HISTORY_FILE))?;
    let file = MetricsFile { metrics: output.metrics.clone(), config: run_cfg, meta: Meta::current() };
    write_json(&out.join(METRICS_FILE), &file)?;
    echo_config(out, cfg)?;
    Ok(output)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepParam {
    Alpha,
    NoiseFraction,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Alpha => "alpha",
            SweepParam::NoiseFraction => "noise-fraction",
        }
    }

    pub fn csv_name(self) -> String {
        format!("sweep_{}.csv", self.name().replace('-', "_"))
    }

    fn apply(self, cfg: &mut TrainRunConfig, v: f64) {
        match self {
            SweepParam::Alpha => cfg.alpha = v,
            SweepParam::NoiseFraction => cfg.noise_pool_fraction = v,
        }
    }
}

impl FromStr for SweepParam {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "alpha" => Ok(SweepParam::Alpha),
            "noise-fraction" => Ok(SweepParam::NoiseFraction),
            _ => Err(CliError::Usage(format!("unknown sweep parameter {s:?} (expected alpha or noise-fraction)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepPoint {
    pub value: f64,
    pub target_aucs: Vec<f64>,
    pub mean_auc_target: f64,
    pub stderr: f64,
}

/// One run per value per seed; rows come out in ascending value order.
pub fn cmd_sweep(
    cfg: &ExperimentConfig,
    corpus: &Path,
    method: Method,
    param: SweepParam,
    values: &[f64],
    out: &Path,
) -> CliResult<Vec<SweepPoint>> {
    if method != Method::Tni {
        return Err(CliError::Usage(format!("{method} has no {} parameter; sweeps need --method tni", param.name())));
    }
    if values.is_empty() {
        return Err(CliError::Usage("--values needs at least one number".into()));
    }
    let mut values = values.to_vec();
    values.sort_by(f64::total_cmp);
    values.dedup();
    for &v in &values {
        let mut c = cfg.run_config(method, 0)?;
        param.apply(&mut c, v);
        c.validate()?;
    }
    let data = load_corpus(cfg, corpus)?;
    create_dir(out)?;
    let mut points = Vec::with_capacity(values.len());
    for &v in &values {
        let mut aucs = Vec::new();
        for seed in 0..cfg.eval.n_seeds {
            let mut run_cfg = cfg.run_config(method, seed)?;
            param.apply(&mut run_cfg, v);
            let output = train(&data, &cfg.model, &run_cfg)?;
            let dir = out.join(format!("{}={v}", param.name())).join(format!("seed{seed}"));
            create_dir(&dir)?;
            let file = MetricsFile { metrics: output.metrics.clone(), config: run_cfg, meta: Meta::current() };
            write_json(&dir.join(METRICS_FILE), &file)?;
            let auc = output.metrics.target_test_auc.ok_or_else(|| {
                cryda_core::Error::UndefinedMetric(format!("target test AUC undefined at {}={v}", param.name()))
            })?;
            aucs.push(auc);
        }
        let (mean, stderr) = if aucs.len() > 1 { mean_stderr(&aucs)? } else { (aucs[0], f64::NAN) };
        points.push(SweepPoint { value: v, target_aucs: aucs, mean_auc_target: mean, stderr });
    }
    let path = out.join(param.csv_name());
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["value", "mean_auc_target", "stderr"])?;
    for p in &points {
        w.write_record([p.value.to_string(), p.mean_auc_target.to_string(), p.stderr.to_string()])?;
    }
    w.flush().map_err(|e| CliError::io(&path, e))?;
    echo_config(out, cfg)?;
    Ok(points)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiagnoseTask {
    DomainId,
    PitchDist,
    Xgen,
}

impl FromStr for DiagnoseTask {
    type Err = CliError;

    fn from_str(s: &str) -> CliResult<Self> {
        match s {
            "domain-id" => Ok(DiagnoseTask::DomainId),
            "pitch-dist" => Ok(DiagnoseTask::PitchDist),
            "xgen" => Ok(DiagnoseTask::Xgen),
            _ => Err(CliError::Usage(format!("unknown task {s:?} (expected domain-id, pitch-dist or xgen)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PitchReport {
    pub source: PitchDistribution,
    pub target: PitchDistribution,
    /// `None` when either histogram is empty.
    pub wasserstein1_hz: Option<f64>,
}

/// Contents of `pitch_distance.json`.
#[derive(Serialize)]
struct PitchDistanceFile<'a> {
    wasserstein1_hz: Option<f64>,
    bin_hz: f64,
    range_hz: (f64, f64),
    source_frames: u64,
    target_frames: u64,
    source_clips: usize,
    target_clips: usize,
    warnings: Vec<&'a str>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Diagnosis {
    DomainId(DomainIdReport),
    Pitch(Box<PitchReport>),
    Xgen(XgenReport),
}

fn all_clips(data: &TrainData, source: bool) -> Vec<&AudioClip> {
    let d = if source { &data.source } else { &data.target };
    d.train.iter().chain(&d.valid).chain(&d.test).map(|s| &s.clip).collect()
}

pub fn pitch_report(data: &TrainData) -> CliResult<PitchReport> {
    let (p, a) = (PitchConfig::default(), ActivityConfig::default());
    let source = pitch_distribution(&all_clips(data, true), &p, &a)?;
    let target = pitch_distribution(&all_clips(data, false), &p, &a)?;
    let wasserstein1_hz = if source.histogram.is_empty() || target.histogram.is_empty() {
        None
    } else {
        Some(wasserstein1d(&source.histogram, &target.histogram)?)
    };
    Ok(PitchReport { source, target, wasserstein1_hz })
}

/// Runs one shift diagnostic on the corpus and writes its artifacts.
pub fn cmd_diagnose(cfg: &ExperimentConfig, corpus: &Path, task: DiagnoseTask, seed: u64, out: &Path) -> CliResult<Diagnosis> {
    let run_cfg = cfg.run_config(Method::Baseline, seed)?;
    let data = load_corpus(cfg, corpus)?;
    create_dir(out)?;
    let result = match task {
        DiagnoseTask::DomainId => {
            let r = domain_id_experiment(&data, &cfg.model, &run_cfg)?;
            let path = out.join("domain_id_confusion.csv");
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(std::iter::once("true_domain".to_string()).chain(r.domains.iter().cloned()))?;
            for (name, row) in r.domains.iter().zip(&r.confusion) {
                w.write_record(std::iter::once(name.clone()).chain(row.iter().map(f64::to_string)))?;
            }
            w.flush().map_err(|e| CliError::io(&path, e))?;
            write_json(&out.join("domain_id.json"), &r)?;
            Diagnosis::DomainId(r)
        }
        DiagnoseTask::PitchDist => {
            let r = pitch_report(&data)?;
            let as_xy = |d: &PitchDistribution| d.histogram.rows().map(|(c, n)| (c, n as f64)).collect::<Vec<_>>();
            write_xy(&out.join("pitch_source.csv"), as_xy(&r.source))?;
            write_xy(&out.join("pitch_target.csv"), as_xy(&r.target))?;
            let file = PitchDistanceFile {
                wasserstein1_hz: r.wasserstein1_hz,
                bin_hz: PITCH_BIN_HZ,
                range_hz: PITCH_RANGE_HZ,
                source_frames: r.source.histogram.total,
                target_frames: r.target.histogram.total,
                source_clips: r.source.clips,
                target_clips: r.target.clips,
                warnings: [&r.source.warning, &r.target.warning].into_iter().flatten().map(String::as_str).collect(),
            };
            write_json(&out.join("pitch_distance.json"), &file)?;
            Diagnosis::Pitch(Box::new(r))
        }
        DiagnoseTask::Xgen => {
            let r = xgen_experiment(&data, &cfg.model, &run_cfg)?;
            write_json(&out.join("xgen.json"), &r)?;
            Diagnosis::Xgen(r)
        }
    };
    echo_config(out, cfg)?;
    Ok(result)
}

fn find_metrics(dir: &Path, found: &mut Vec<PathBuf>) -> CliResult<()> {
    let mut entries = std::fs::read_dir(dir)
        .map_err(|e| CliError::io(dir, e))?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()
        .map_err(|e| CliError::io(dir, e))?;
    entries.sort();
    for p in entries {
        if p.is_dir() {
            find_metrics(&p, found)?;
        } else if p.file_name().is_some_and(|n| n == METRICS_FILE) {
            found.push(p);
        }
    }
    Ok(())
}

/// Every `metrics.json` below `dir`, in path order.
pub fn collect_runs(dir: &Path) -> CliResult<Vec<MetricsFile>> {
    if !dir.is_dir() {
        return Err(CliError::Usage(format!("runs directory {} does not exist", dir.display())));
    }
    let mut paths = Vec::new();
    find_metrics(dir, &mut paths)?;
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::io(p, e))?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))
        })
        .collect()
}

/// Aggregates runs into `report.json` and `report.md` under `out`.
pub fn cmd_report(runs: &Path, out: &Path) -> CliResult<MetricsReport> {
    let files = collect_runs(runs)?;
    let metrics: Vec<RunMetrics> = files.into_iter().map(|f| f.metrics).collect();
    let seeds = metrics.iter().filter(|m| m.method == Method::Baseline).count();
    if seeds == 0 {
        return Err(CliError::MissingDependency(format!("no baseline runs under {}", runs.display())));
    }
    if metrics.iter().all(|m| m.method == Method::Baseline) {
        return Err(CliError::MissingDependency(format!("no adapted-method runs under {}", runs.display())));
    }
    let report = build_report(&metrics, seeds)?;
    create_dir(out)?;
    write_json(&out.join("report.json"), &report)?;
    write_text(&out.join("report.md"), &report.to_markdown())?;
    Ok(report)
}
