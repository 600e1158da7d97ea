use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use radgraph::checkpoint::{load_into, save_checkpoint};
use radgraph::dataset::{load_dataset, write_synth_dataset, ONTOLOGY_FILE};
use radgraph::downstream::{graph_to_labels, graph_to_report, PathologyMapping, ReportRules};
use radgraph::eval::{score_graphs, GraphReport, LabelVector};
use radgraph::gradcheck::GradCheckOptions;
use radgraph::graph::{EntityClassSpace, RadiologyGraph};
use radgraph::image::ImageGrid;
use radgraph::model::{Mode, Model, ModelConfig};
use radgraph::synth::synth_ontology;
use radgraph::train::{evaluate, fit_model, gradcheck_model, EpochMetrics};

use crate::config::RunConfig;
use crate::CliError;

pub const CHECKPOINT_FILE: &str = "model.json";
pub const CONFIG_FILE: &str = "config.json";
pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const GRAPH_SUFFIX: &str = ".graph.json";
pub const GRADCHECK_TOLERANCE: f64 = 1e-4;

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::io(format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<(), CliError> {
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| io_error(path, e))
}

fn emit(out: &mut dyn Write, text: &str) -> Result<(), CliError> {
    writeln!(out, "{text}").map_err(|e| CliError::io(format!("stdout: {e}")))
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string_pretty(value).expect("output serializes")
}

pub fn load_config(path: Option<&Path>, overrides: &[String]) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => RunConfig::load(p, overrides),
        None => RunConfig::parse("{}", overrides),
    }
}

fn load_ontology(path: &Path) -> Result<EntityClassSpace, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    EntityClassSpace::from_json(&text).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

/// The explicit ontology, else the first candidate directory holding one.
fn resolve_ontology(explicit: Option<&Path>, dirs: &[&Path]) -> Result<EntityClassSpace, CliError> {
    if let Some(p) = explicit {
        return load_ontology(p);
    }
    for d in dirs {
        let p = d.join(ONTOLOGY_FILE);
        if p.is_file() {
            return load_ontology(&p);
        }
    }
    let tried: Vec<String> = dirs.iter().map(|d| d.join(ONTOLOGY_FILE).display().to_string()).collect();
    Err(CliError::io(format!("no class space found (tried {}); pass --ontology", tried.join(", "))))
}

fn list_dir(dir: &Path) -> Result<Vec<(String, PathBuf)>, CliError> {
    let entries = fs::read_dir(dir).map_err(|e| io_error(dir, e))?;
    let mut files = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|e| io_error(dir, e))?;
        let path = entry.path();
        if path.is_file() {
            files.push((entry.file_name().to_string_lossy().into_owned(), path));
        }
    }
    files.sort();
    Ok(files)
}

/// Graph files of `dir` keyed by stem (`00012.graph.json` -> `00012`).
pub fn graph_files(dir: &Path) -> Result<BTreeMap<String, PathBuf>, CliError> {
    Ok(list_dir(dir)?
        .into_iter()
        .filter_map(|(name, path)| name.strip_suffix(GRAPH_SUFFIX).map(|s| (s.to_string(), path)))
        .collect())
}

fn read_graph(path: &Path, classes: &EntityClassSpace) -> Result<RadiologyGraph, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    RadiologyGraph::from_json(&text, classes).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

pub fn synth(count: usize, seed: u64, dir: &Path, noise: f64, out: &mut dyn Write) -> Result<(), CliError> {
    if !(noise >= 0.0) {
        return Err(CliError::validation(format!("noise must be >= 0, got {noise}")));
    }
    let manifest = write_synth_dataset(dir, count, seed, noise)?;
    emit(out, &format!("wrote {} pairs to {}", manifest.pairs.len(), dir.display()))
}

/// Final scores of a training run.
#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct TrainSummary {
    pub steps: usize,
    pub report: GraphReport,
}

pub fn train(cfg: &RunConfig, out: &mut dyn Write) -> Result<TrainSummary, CliError> {
    let mut missing = Vec::new();
    if cfg.paths.dataset.is_none() {
        missing.push("paths.dataset");
    }
    if cfg.paths.output.is_none() {
        missing.push("paths.output");
    }
    if !missing.is_empty() {
        return Err(CliError::validation(format!("missing config keys: {}", missing.join(", "))));
    }
    let (data_dir, run_dir) = (cfg.paths.dataset.as_ref().unwrap(), cfg.paths.output.as_ref().unwrap());
    let data = load_dataset(data_dir)?;
    if data.classes.len() != cfg.model.num_classes {
        return Err(CliError::validation(format!(
            "model.num_classes is {} but {} defines {} classes",
            cfg.model.num_classes,
            data_dir.display(),
            data.classes.len()
        )));
    }
    let validation = match &cfg.paths.validation {
        Some(dir) => {
            let v = load_dataset(dir)?;
            if v.classes != data.classes {
                return Err(CliError::validation(format!(
                    "{} and {} use different class spaces",
                    data_dir.display(),
                    dir.display()
                )));
            }
            v.samples
        }
        None => Vec::new(),
    };

    let mut model = Model::new(&cfg.model, cfg.train.mode, cfg.train.seed)?;
    if let Some(ck) = &cfg.paths.checkpoint {
        load_into(model.params_mut(), ck)?;
    }
    create_dir(run_dir)?;
    write_file(&run_dir.join(CONFIG_FILE), cfg.to_json())?;
    write_file(&run_dir.join(ONTOLOGY_FILE), data.classes.to_json())?;

    let outcome = fit_model(model, &data.samples, &validation, &cfg.train)?;
    save_checkpoint(outcome.model.params(), &run_dir.join(CHECKPOINT_FILE))?;
    let log: String = outcome
        .log
        .iter()
        .map(|m| serde_json::to_string(m).expect("metrics serialize") + "\n")
        .collect();
    write_file(&run_dir.join(METRICS_FILE), log)?;

    let eval_set = if validation.is_empty() { &data.samples } else { &validation };
    let summary = TrainSummary {
        steps: outcome.steps,
        report: evaluate(&outcome.model, eval_set)?,
    };
    write_file(&run_dir.join(SUMMARY_FILE), to_json(&summary))?;
    emit(out, &to_json(&summary))?;
    Ok(summary)
}

/// Reads the metrics log written by `train`.
pub fn read_metrics(path: &Path) -> Result<Vec<EpochMetrics>, CliError> {
    let text = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(|e| CliError::validation(format!("{}: {e}", path.display()))))
        .collect()
}

pub fn load_model(checkpoint: &Path, config: Option<&Path>) -> Result<Model, CliError> {
    let dir = checkpoint.parent().unwrap_or(Path::new("."));
    let config_path = config.map(Path::to_path_buf).unwrap_or_else(|| dir.join(CONFIG_FILE));
    let cfg = RunConfig::load(&config_path, &[])?;
    let mut model = Model::new(&cfg.model, cfg.train.mode, cfg.train.seed)?;
    load_into(model.params_mut(), checkpoint)?;
    Ok(model)
}

pub fn infer(
    checkpoint: &Path,
    images: &Path,
    dir: &Path,
    config: Option<&Path>,
    ontology: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let model = load_model(checkpoint, config)?;
    let run_dir = checkpoint.parent().unwrap_or(Path::new("."));
    let classes = resolve_ontology(ontology, &[run_dir])?;
    if classes.len() != model.config().num_classes {
        return Err(CliError::validation(format!(
            "class space has {} classes but the model predicts {}",
            classes.len(),
            model.config().num_classes
        )));
    }
    let inputs: Vec<(String, PathBuf)> = list_dir(images)?
        .into_iter()
        .filter_map(|(name, path)| name.strip_suffix(".pgm").map(|s| (s.to_string(), path)))
        .collect();
    create_dir(dir)?;
    write_file(&dir.join(ONTOLOGY_FILE), classes.to_json())?;
    let size = model.config().image_size;
    for (stem, path) in &inputs {
        let image = ImageGrid::read_pgm(path)?;
        if image.height() != size || image.width() != size {
            return Err(CliError::validation(format!(
                "{}: image is {}x{}, model expects {size}x{size}",
                path.display(),
                image.height(),
                image.width()
            )));
        }
        let graph = model.predict(&image)?;
        write_file(&dir.join(format!("{stem}{GRAPH_SUFFIX}")), graph.to_json(&classes))?;
    }
    emit(out, &format!("wrote {} graphs to {}", inputs.len(), dir.display()))
}

pub fn eval(
    pred_dir: &Path,
    gt_dir: &Path,
    ontology: Option<&Path>,
    class_only: bool,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let classes = resolve_ontology(ontology, &[gt_dir, pred_dir])?;
    let pred = graph_files(pred_dir)?;
    let gt = graph_files(gt_dir)?;
    let mut unpaired: Vec<String> = Vec::new();
    unpaired.extend(
        pred.keys()
            .filter(|k| !gt.contains_key(*k))
            .map(|k| format!("{} (no ground truth)", pred[k].display())),
    );
    unpaired.extend(
        gt.keys()
            .filter(|k| !pred.contains_key(*k))
            .map(|k| format!("{} (no prediction)", gt[k].display())),
    );
    if !unpaired.is_empty() {
        return Err(CliError::io(format!("unpaired files: {}", unpaired.join(", "))));
    }
    let mut p = Vec::with_capacity(gt.len());
    let mut g = Vec::with_capacity(gt.len());
    for (stem, path) in &gt {
        g.push(read_graph(path, &classes)?);
        p.push(read_graph(&pred[stem], &classes)?);
    }
    let report = score_graphs(&p, &g, class_only).expect("paired by construction");
    emit(out, &to_json(&report))
}

pub fn report(
    graphs: &Path,
    dir: &Path,
    rules: Option<&Path>,
    ontology: Option<&Path>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let classes = resolve_ontology(ontology, &[graphs])?;
    let rules = match rules {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_error(p, e))?;
            ReportRules::from_json(&text).map_err(|e| CliError::validation(format!("{}: {e}", p.display())))?
        }
        None => ReportRules::default(),
    };
    let files = graph_files(graphs)?;
    create_dir(dir)?;
    for (stem, path) in &files {
        let g = read_graph(path, &classes)?;
        write_file(&dir.join(format!("{stem}.txt")), graph_to_report(&g, &classes, &rules) + "\n")?;
    }
    emit(out, &format!("wrote {} reports to {}", files.len(), dir.display()))
}

/// The synthetic mapping for the synthetic class space, the radiology one
/// otherwise.
fn default_mapping(classes: &EntityClassSpace) -> Result<PathologyMapping, CliError> {
    let mapping = if *classes == synth_ontology() {
        PathologyMapping::synth_default(classes)
    } else {
        PathologyMapping::radiology_default(classes)
    };
    mapping.map_err(|e| CliError::validation(format!("default pathology mapping does not fit the class space: {e}")))
}

pub fn labels(graphs: &Path, mapping: Option<&Path>, ontology: Option<&Path>, out: &mut dyn Write) -> Result<(), CliError> {
    let classes = resolve_ontology(ontology, &[graphs])?;
    let mapping = match mapping {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(|e| io_error(p, e))?;
            PathologyMapping::from_json(&text, &classes)
                .map_err(|e| CliError::validation(format!("{}: {e}", p.display())))?
        }
        None => default_mapping(&classes)?,
    };
    let mut result: BTreeMap<String, LabelVector> = BTreeMap::new();
    for (stem, path) in graph_files(graphs)? {
        let g = read_graph(&path, &classes)?;
        result.insert(stem, graph_to_labels(&g, &classes, &mapping));
    }
    emit(out, &to_json(&result))
}

pub fn gradcheck(
    cfg: &RunConfig,
    tiny: bool,
    all_modes: bool,
    coords: Option<usize>,
    out: &mut dyn Write,
) -> Result<(), CliError> {
    let model_cfg = if tiny { ModelConfig::tiny() } else { cfg.model.clone() };
    let modes: Vec<Mode> = if all_modes { Mode::ALL.to_vec() } else { vec![cfg.train.mode] };
    let options = GradCheckOptions {
        max_coords_per_param: coords,
        seed: cfg.train.seed,
        ..GradCheckOptions::default()
    };
    let mut reports = BTreeMap::new();
    let mut failed = Vec::new();
    for mode in modes {
        let r = gradcheck_model(&model_cfg, mode, cfg.train.seed, &options)
            .map_err(|e| CliError::validation(format!("gradcheck {}: {e}", mode.as_str())))?;
        if !(r.max_relative_error < GRADCHECK_TOLERANCE) {
            failed.push(format!("{} ({:e})", mode.as_str(), r.max_relative_error));
        }
        reports.insert(mode.as_str(), r);
    }
    emit(out, &to_json(&reports))?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::validation(format!(
            "max relative error reaches {GRADCHECK_TOLERANCE:e} in: {}",
            failed.join(", ")
        )))
    }
}
