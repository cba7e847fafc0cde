use crate::experiment::{Experiment, Points};
use crate::manifest::{ExperimentManifest, RESOLVED_NAME};
use crate::UsageError;
use anyhow::{Context, Result};
use sciuq::data::fmt_f64;
use sciuq::eval::metrics::{calibration_curve, calibration_levels, DEFAULT_LEVELS};
use sciuq::eval::{calibrate_crude, calibrate_isotonic, calibrate_scale, CalibrationMap, CalibrationReport, MetricsReport, PredictiveSummary, ScaleObjective};
use sciuq::pinn::{PdeProblem, PinnDataset, PinnField};
use sciuq::workflow::Fitted;
use serde::Serialize;
use std::path::{Path, PathBuf};
use std::time::Instant;

const SNAPSHOT_DIR: &str = "snapshot";

fn write_json<T: Serialize>(path: &Path, v: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(v)? + "\n").with_context(|| format!("writing {}", path.display()))
}

/// `<input>` is an experiment manifest (`.toml`) or a PINN problem (`.json`).
pub fn generate(input: &Path, out: Option<&Path>) -> Result<()> {
    if input.extension().is_some_and(|e| e == "json") {
        let text = std::fs::read_to_string(input).with_context(|| format!("reading {}", input.display()))?;
        let problem: PdeProblem =
            serde_json::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", input.display())))?;
        problem.validate().map_err(|e| UsageError(e.to_string()))?;
        let dir = out.map(Path::to_path_buf).unwrap_or_else(|| PathBuf::from("data"));
        std::fs::create_dir_all(&dir)?;
        let reference = problem.solve_reference()?;
        PinnDataset::generate(&problem, &reference)?.write_csv(&dir.join("train.csv"))?;
        write_json(&dir.join("problem.json"), &problem)?;
        log::info!("wrote PINN data to {}", dir.display());
        return Ok(());
    }
    let m = ExperimentManifest::read(input)?;
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| m.output.join("data"));
    Experiment::build(&m)?.write_data(&dir)?;
    m.write_resolved(&dir)?;
    log::info!("wrote datasets to {}", dir.display());
    Ok(())
}

#[derive(Serialize)]
struct TrainLog {
    method: String,
    seed: u64,
    members: Option<usize>,
    diagnostics: Option<sciuq::posterior::Diagnostics>,
}

pub fn train(manifest: &Path, out: Option<&Path>) -> Result<PathBuf> {
    let mut m = ExperimentManifest::read(manifest)?;
    if let Some(o) = out {
        m.output = o.to_path_buf();
    }
    let dir = m.output.clone();
    m.write_resolved(&dir)?;
    let exp = Experiment::build(&m)?;
    exp.write_data(&dir.join("data"))?;
    let start = Instant::now();
    let fitted = exp.fit(&m.method, m.seed)?;
    log::info!("{} trained in {:.1} s", m.method.id(), start.elapsed().as_secs_f64());
    fitted.save(&dir.join(SNAPSHOT_DIR))?;
    let (members, diagnostics) = match &fitted {
        Fitted::Ensemble(e) => (Some(e.len()), Some(e.diagnostics.clone())),
        Fitted::Laplace { samples, .. } => (samples.as_ref().map(|s| s.len()), None),
        Fitted::Gp(_) => (None, None),
    };
    write_json(
        &dir.join("train_log.json"),
        &TrainLog {
            method: m.method.id().into(),
            seed: m.seed,
            members,
            diagnostics,
        },
    )?;
    Ok(dir)
}

struct Run {
    manifest: ExperimentManifest,
    experiment: Experiment,
    fitted: Fitted,
}

impl Run {
    fn open(dir: &Path) -> Result<Self> {
        let manifest = ExperimentManifest::from_run(dir)?;
        let experiment = Experiment::build(&manifest)?;
        let fitted = Fitted::load(&dir.join(SNAPSHOT_DIR)).with_context(|| format!("loading the snapshot in {}", dir.display()))?;
        Ok(Self {
            manifest,
            experiment,
            fitted,
        })
    }

    fn summary(&self, split: &str, field: PinnField) -> Result<(Points, PredictiveSummary)> {
        let p = self.experiment.points(split, field)?;
        let s = self.experiment.summarize(&self.fitted, &p, field)?;
        Ok((p, s))
    }
}

fn field_suffix(field: PinnField) -> &'static str {
    match field {
        PinnField::U => "",
        PinnField::Lambda => "_lambda",
        PinnField::F => "_f",
    }
}

fn output_dir(run: &Path, out: Option<&Path>, m: &ExperimentManifest) -> Result<PathBuf> {
    let dir = out.map(Path::to_path_buf).unwrap_or_else(|| run.to_path_buf());
    if !dir.join(RESOLVED_NAME).is_file() {
        m.write_resolved(&dir)?;
    }
    Ok(dir)
}

pub struct EvaluateArgs<'a> {
    pub split: &'a str,
    pub field: PinnField,
    pub gold: Option<&'a Path>,
    pub calibration: Option<&'a Path>,
    pub out: Option<&'a Path>,
}

pub fn evaluate(run_dir: &Path, a: &EvaluateArgs<'_>) -> Result<PathBuf> {
    let run = Run::open(run_dir)?;
    let dir = output_dir(run_dir, a.out, &run.manifest)?;
    let (p, raw) = run.summary(a.split, a.field)?;
    let gold = match a.gold {
        Some(g) => {
            let gr = Run::open(g)?;
            if gr.manifest.problem != run.manifest.problem {
                return Err(UsageError(format!("gold run {} solves a different problem", g.display())).into());
            }
            Some(gr.summary(a.split, a.field)?.1)
        }
        None => None,
    };
    let method = run.fitted.method();
    let suffix = format!("{}{}", a.split, field_suffix(a.field));
    let (s, report) = match a.calibration {
        Some(path) => {
            let map: CalibrationMap = serde_json::from_str(&std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?)
                .map_err(|e| UsageError(format!("{}: {e}", path.display())))?;
            map.validate()?;
            let after = map.apply(&raw)?;
            let mut r = MetricsReport::compute(&method, run.manifest.seed, &after, &p.u, gold.as_ref())?;
            r.calibration = Some(CalibrationReport::compute(&map, &raw, &p.u)?);
            (after, r)
        }
        None => {
            let r = MetricsReport::compute(&method, run.manifest.seed, &raw, &p.u, gold.as_ref())?;
            (raw, r)
        }
    };
    let (names, x) = p.inputs();
    s.write_csv_named(&names, &x, &dir.join(format!("predictions_{suffix}.csv")))?;
    write_json(&dir.join(format!("metrics_{suffix}.json")), &report)?;
    Ok(dir)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum CalibrationKind {
    Scale,
    Isotonic,
    Crude,
}

#[derive(Serialize)]
struct CalibrationOutput<'a> {
    kind: &'a str,
    fit_split: &'a str,
    eval_split: &'a str,
    points_fit: usize,
    points_eval: usize,
    #[serde(flatten)]
    report: CalibrationReport,
}

pub fn calibrate(run_dir: &Path, kind: CalibrationKind, objective: ScaleObjective, eval_split: &str, out: Option<&Path>) -> Result<PathBuf> {
    let run = Run::open(run_dir)?;
    let dir = output_dir(run_dir, out, &run.manifest)?;
    let (pc, sc) = run.summary("calibration", PinnField::U)?;
    let map = match kind {
        CalibrationKind::Scale => calibrate_scale(&sc, &pc.u, objective, DEFAULT_LEVELS)?,
        CalibrationKind::Isotonic => calibrate_isotonic(&sc, &pc.u)?,
        CalibrationKind::Crude => calibrate_crude(&sc, &pc.u)?,
    };
    let (pe, se) = run.summary(eval_split, PinnField::U)?;
    let name = map.kind();
    write_json(&dir.join(format!("calibration_{name}.json")), &map)?;
    write_json(
        &dir.join(format!("calibration_report_{name}.json")),
        &CalibrationOutput {
            kind: name,
            fit_split: "calibration",
            eval_split,
            points_fit: pc.u.len(),
            points_eval: pe.u.len(),
            report: CalibrationReport::compute(&map, &se, &pe.u)?,
        },
    )?;
    let levels = calibration_levels(DEFAULT_LEVELS);
    let before = calibration_curve(&se, &pe.u, &levels)?;
    let after = map.calibration_curve(&se, &pe.u, &levels)?;
    let mut w = csv::Writer::from_path(dir.join(format!("calibration_curve_{name}.csv")))?;
    w.write_record(["p", "p_hat", "p_hat_calibrated"])?;
    for ((p, b), (_, a)) in before.iter().zip(&after) {
        w.write_record([fmt_f64(*p), fmt_f64(*b), fmt_f64(*a)])?;
    }
    w.flush()?;
    Ok(dir)
}

/// One row per metrics file in the column order of [`MetricsReport::columns`].
pub fn compare(files: &[PathBuf], out: &Path) -> Result<()> {
    if files.is_empty() {
        return Err(UsageError("compare needs at least one metrics file".into()).into());
    }
    let mut rows = Vec::with_capacity(files.len());
    for f in files {
        let text = std::fs::read_to_string(f).with_context(|| format!("reading {}", f.display()))?;
        let r: MetricsReport = serde_json::from_str(&text).map_err(|e| UsageError(format!("{}: {e}", f.display())))?;
        rows.push((f, r));
    }
    let mut w = csv::Writer::from_path(out)?;
    let mut header = vec!["source".to_string(), "method".into(), "seed".into()];
    header.extend(rows[0].1.columns().iter().map(|(n, _)| n.to_string()));
    w.write_record(&header)?;
    for (f, r) in &rows {
        let mut rec = vec![f.display().to_string(), r.method.clone(), r.seed.to_string()];
        rec.extend(r.columns().iter().map(|(_, v)| v.map(fmt_f64).unwrap_or_default()));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
