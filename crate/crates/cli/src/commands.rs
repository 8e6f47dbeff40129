//! Subcommand implementations. Each takes already-parsed arguments and returns
//! an `anyhow::Result`; `main` maps errors to exit codes.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use ecg_recon::ingest::{
    build_manifest, file_stem_for, load_canonical, load_record, save_canonical, save_csv, DatasetManifest,
    EcgRecord, RecordFormat, Split, CANONICAL_EXT, MANIFEST_FILE, METADATA_FILE,
};
use ecg_recon::leads::LeadSet;
use ecg_recon::models::{CheckpointMeta, Model, ModelFamily, Reconstruct};
use ecg_recon::preprocess::{prepare_record, PreprocessConfig};
use ecg_recon::report::{
    check_hash, check_limb_consistency, evaluate_model, render_overlay, render_table, to_markdown, Evaluation,
    MetricsReport, TableFormat,
};
use ecg_recon::synthetic::SyntheticEcg;
use ecg_recon::training::{fit_manifest, TrainState, BEST_CHECKPOINT};
use serde::{Deserialize, Serialize};

use crate::config::{RunConfig, CONFIG_FILE};

pub const RECORDS_DIR: &str = "records";
pub const EVALUATION_FILE: &str = "evaluation.json";
pub const TRAIN_STATE_FILE: &str = "train_state.json";

/// `explicit`, else `config.toml` in `dir` when present, else defaults.
pub fn config_for(explicit: Option<&Path>, dir: Option<&Path>) -> Result<RunConfig> {
    if explicit.is_some() {
        return RunConfig::load_or_default(explicit);
    }
    match dir.map(|d| d.join(CONFIG_FILE)).filter(|p| p.is_file()) {
        Some(p) => {
            log::info!("using config {}", p.display());
            RunConfig::load(&p)
        }
        None => Ok(RunConfig::default()),
    }
}

fn parent_dir(path: &Path) -> &Path {
    path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(value)? + "\n";
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn is_raw_record(path: &Path) -> bool {
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    (name != METADATA_FILE && matches!(ext.as_str(), "csv" | "txt")) || ext == CANONICAL_EXT
}

fn raw_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    for entry in fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        if path.is_dir() {
            raw_files(&path, out)?;
        } else if is_raw_record(&path) {
            out.push(path);
        }
    }
    Ok(())
}

/// Ingests every record under `raw`, preprocesses it and writes canonical
/// records plus a manifest to `out`.
pub fn prepare(raw: &Path, out: &Path, format: Option<RecordFormat>, metadata: Option<&Path>, cfg: &RunConfig) -> Result<DatasetManifest> {
    let mut files = Vec::new();
    raw_files(raw, &mut files)?;
    files.sort();
    if files.is_empty() {
        return Err(ecg_recon::Error::EmptyDataset(raw.to_path_buf()).into());
    }
    let records_dir = out.join(RECORDS_DIR);
    if records_dir.exists() {
        fs::remove_dir_all(&records_dir).with_context(|| format!("clearing {}", records_dir.display()))?;
    }
    create_dir(&records_dir)?;
    for file in &files {
        let fmt = format.unwrap_or_else(|| RecordFormat::from_path(file));
        let rec = load_record(file, fmt).with_context(|| format!("loading {}", file.display()))?;
        check_limb_consistency(&rec)?;
        let prepared = prepare_record(&rec, &cfg.preprocess).with_context(|| format!("preparing {}", rec.record_id))?;
        let dest = records_dir.join(format!("{}.{CANONICAL_EXT}", file_stem_for(&rec.record_id)));
        ensure!(!dest.exists(), "duplicate record id {}", rec.record_id);
        save_canonical(&prepared, &dest)?;
    }
    let default_meta = raw.join(METADATA_FILE);
    let metadata = metadata.or_else(|| default_meta.is_file().then_some(default_meta.as_path()));
    let mut manifest = build_manifest(out, &cfg.split_spec()?, metadata)?;
    manifest.preprocess_hash = Some(cfg.preprocess.hash());
    manifest.save(&out.join(MANIFEST_FILE))?;
    cfg.save(&out.join(CONFIG_FILE))?;
    log::info!(
        "prepared {} records (train {}, val {}, test {})",
        manifest.records.len(),
        manifest.count(Split::Train),
        manifest.count(Split::Val),
        manifest.count(Split::Test)
    );
    Ok(manifest)
}

pub fn load_manifest(path: &Path) -> Result<(DatasetManifest, PathBuf)> {
    let manifest = DatasetManifest::load(path)?;
    Ok((manifest, parent_dir(path).to_path_buf()))
}

/// Trains one model family and writes checkpoints, the log, the final state
/// and the resolved config into `run_dir`.
pub fn train(manifest_path: &Path, family: Option<ModelFamily>, run_dir: &Path, cfg: &RunConfig, bn_everywhere: bool) -> Result<TrainState> {
    let (manifest, base) = load_manifest(manifest_path)?;
    let spec = cfg.model_spec(family)?.with_bn_everywhere(bn_everywhere);
    create_dir(run_dir)?;
    let mut resolved = cfg.clone();
    resolved.model = Some(spec.clone());
    resolved.save(&run_dir.join(CONFIG_FILE))?;

    let state = if ModelFamily::TRAINABLE.contains(&spec.family()) {
        let (_, state) = fit_manifest(&manifest, &base, spec, &cfg.preprocess, &cfg.train, Some(run_dir))?;
        state
    } else {
        // Nothing to learn: write the fixture checkpoint directly.
        let path = run_dir.join(BEST_CHECKPOINT);
        let meta = CheckpointMeta {
            preprocess_hash: cfg.preprocess.hash(),
            dataset_hash: Some(manifest.content_hash()?),
            ..CheckpointMeta::default()
        };
        Model::new(spec, cfg.seed)?.save(&path, &meta)?;
        TrainState {
            best_checkpoint: Some(path),
            ..TrainState::default()
        }
    };
    write_json(&state, &run_dir.join(TRAIN_STATE_FILE))?;
    Ok(state)
}

/// What `evaluate` writes and `compare` reads.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvaluationFile {
    pub checkpoint: PathBuf,
    pub dataset_hash: String,
    pub r2_variant: ecg_recon::metrics::R2Variant,
    pub evaluation: Evaluation,
}

pub struct EvaluateArgs<'a> {
    pub checkpoint: &'a Path,
    pub manifest: &'a Path,
    pub split: Split,
    pub out: Option<&'a Path>,
    pub format: TableFormat,
    pub plots: usize,
}

/// Evaluates a checkpoint on one split; returns the rendered markdown table.
pub fn evaluate(args: &EvaluateArgs<'_>, cfg: &RunConfig) -> Result<String> {
    ensure!(args.checkpoint.is_file(), "checkpoint {} does not exist", args.checkpoint.display());
    let (manifest, base) = load_manifest(args.manifest)?;
    let variant = cfg.evaluate.r2_variant;
    let (mut eval, _) = evaluate_model(args.checkpoint, &manifest, &base, args.split, &cfg.preprocess, variant)?;
    if !cfg.evaluate.subgroups {
        eval.aggregate.subgroups.clear();
    }
    let out = args.out.unwrap_or_else(|| parent_dir(args.checkpoint));
    create_dir(out)?;
    let file = EvaluationFile {
        checkpoint: args.checkpoint.to_path_buf(),
        dataset_hash: manifest.content_hash()?,
        r2_variant: variant,
        evaluation: eval,
    };
    write_json(&file, &out.join(EVALUATION_FILE))?;
    let report = MetricsReport::from_evaluation(&file.evaluation);
    write_tables(&report, args.format, out, "metrics")?;

    if args.plots > 0 {
        let (model, _) = Model::load(args.checkpoint)?;
        let records = ecg_recon::preprocess::prepare_split(&manifest, &base, args.split, &cfg.preprocess)?;
        for rec in records.iter().take(args.plots) {
            let path = out.join("plots").join(format!("{}.png", file_stem_for(&rec.record_id)));
            overlay(rec, &[(model.family().name().to_string(), &model)], &path)?;
        }
    }
    Ok(to_markdown(&report))
}

fn write_tables(report: &MetricsReport, format: TableFormat, dir: &Path, stem: &str) -> Result<PathBuf> {
    let ext = match format {
        TableFormat::Csv => "csv",
        TableFormat::Markdown => "md",
    };
    let path = dir.join(format!("{stem}.{ext}"));
    render_table(report, format, &path)?;
    Ok(path)
}

/// Combines the evaluations of several run directories into one table. All
/// must come from the same dataset, split and R² variant.
pub fn compare(run_dirs: &[PathBuf], out: &Path, format: TableFormat, subgroups: bool) -> Result<String> {
    ensure!(!run_dirs.is_empty(), "compare needs at least one run directory");
    let files: Vec<EvaluationFile> = run_dirs
        .iter()
        .map(|d| read_json(&d.join(EVALUATION_FILE)).with_context(|| format!("{} has no evaluation; run evaluate first", d.display())))
        .collect::<Result<_>>()?;
    let first = &files[0];
    for (dir, f) in run_dirs.iter().zip(&files).skip(1) {
        if f.dataset_hash != first.dataset_hash {
            bail!(
                "{} was evaluated on dataset {} but {} on {}; refusing to compare",
                dir.display(),
                &f.dataset_hash[..12],
                run_dirs[0].display(),
                &first.dataset_hash[..12]
            );
        }
        ensure!(
            f.evaluation.split == first.evaluation.split && f.r2_variant == first.r2_variant,
            "{} used a different split or R² variant than {}",
            dir.display(),
            run_dirs[0].display()
        );
    }
    let mut report = MetricsReport::new();
    for f in files {
        let mut agg = f.evaluation.aggregate;
        if !subgroups {
            agg.subgroups.clear();
        }
        report.push(f.evaluation.model, f.evaluation.dataset, agg);
    }
    let path = match out.extension() {
        Some(_) => {
            render_table(&report, format, out)?;
            out.to_path_buf()
        }
        None => {
            create_dir(out)?;
            write_tables(&report, format, out, "comparison")?
        }
    };
    log::info!("wrote {}", path.display());
    Ok(to_markdown(&report))
}

/// Loads and preprocesses one record from a file in any supported format.
fn prepared_input(input: &Path, format: Option<RecordFormat>, pre: &PreprocessConfig) -> Result<EcgRecord> {
    let fmt = format.unwrap_or_else(|| RecordFormat::from_path(input));
    let rec = load_record(input, fmt).with_context(|| format!("loading {}", input.display()))?;
    if rec.scaling.is_some() {
        // already a prepared canonical record
        return Ok(rec);
    }
    Ok(prepare_record(&rec, pre)?)
}

/// Reconstructs the 9 missing leads of one record and writes a 12-lead file
/// in millivolts (CSV, or canonical for `.ecgr`). Leads I, II and V2 are the
/// preprocessed inputs; the other nine come from the model.
pub fn reconstruct(checkpoint: &Path, input: &Path, format: Option<RecordFormat>, out: &Path, cfg: &RunConfig) -> Result<EcgRecord> {
    let (model, meta) = Model::load(checkpoint)?;
    check_hash(&meta, &cfg.preprocess)?;
    let rec = prepared_input(input, format, &cfg.preprocess)?;
    let recon = model.reconstruct(&rec)?;
    let mut signal = rec.signal().clone();
    for (k, row) in LeadSet::target_rows().into_iter().enumerate() {
        signal.row_mut(row).assign(&recon.row(k));
    }
    if let Some(s) = &rec.scaling {
        signal = s.denormalize(signal.view(), &LeadSet::ALL_12)?;
    }
    let mut out_rec = rec.with_signal(signal, rec.fs())?;
    out_rec.scaling = None;
    let canonical = out.extension().is_some_and(|e| e.eq_ignore_ascii_case(CANONICAL_EXT));
    if canonical {
        save_canonical(&out_rec, out)?;
    } else {
        save_csv(&out_rec, out)?;
    }
    Ok(out_rec)
}

fn overlay(rec: &EcgRecord, models: &[(String, &Model)], path: &Path) -> Result<()> {
    let original = rec.signal().select(ndarray::Axis(0), &LeadSet::target_rows());
    let recons = models
        .iter()
        .map(|(name, m)| Ok((name.as_str(), m.reconstruct(rec)?)))
        .collect::<Result<Vec<_>>>()?;
    let views: Vec<_> = recons.iter().map(|(n, r)| (*n, r.view())).collect();
    render_overlay(&rec.record_id, original.view(), &views, rec.fs(), path)?;
    Ok(())
}

pub enum PlotSource<'a> {
    File(&'a Path, Option<RecordFormat>),
    Manifest(&'a Path, &'a str),
}

/// Overlays the original target leads of one record with the reconstructions
/// of one or more checkpoints.
pub fn plot(checkpoints: &[PathBuf], source: PlotSource<'_>, out: &Path, cfg: &RunConfig) -> Result<()> {
    ensure!(!checkpoints.is_empty(), "plot needs at least one checkpoint");
    let models = checkpoints
        .iter()
        .map(|c| {
            let (m, meta) = Model::load(c).with_context(|| format!("loading {}", c.display()))?;
            check_hash(&meta, &cfg.preprocess)?;
            Ok(m)
        })
        .collect::<Result<Vec<_>>>()?;
    let rec = match source {
        PlotSource::File(path, format) => prepared_input(path, format, &cfg.preprocess)?,
        PlotSource::Manifest(path, id) => {
            let (manifest, base) = load_manifest(path)?;
            let entry = manifest
                .records
                .iter()
                .find(|e| e.record_id == id)
                .with_context(|| format!("record {id} is not in {}", path.display()))?;
            let mut rec = load_canonical(&manifest.resolve(&base, entry))?;
            rec.subgroup = entry.subgroup;
            if manifest.preprocess_hash.is_none() {
                rec = prepare_record(&rec, &cfg.preprocess)?;
            }
            rec
        }
    };
    let named: Vec<(String, &Model)> = checkpoints
        .iter()
        .zip(&models)
        .map(|(c, m)| {
            let run = parent_dir(c).file_name().map(|n| n.to_string_lossy().into_owned());
            let name = match run {
                Some(run) if checkpoints.len() > 1 => format!("{} ({run})", m.family()),
                _ => m.family().to_string(),
            };
            (name, m)
        })
        .collect();
    overlay(&rec, &named, out)
}

/// Writes `count` synthetic dipole-consistent records in CSV (millivolts) and
/// a `metadata.csv` cycling through the labelled subgroups.
pub fn synth(out: &Path, count: usize, length: usize, fs: f32, seed: u64, noise_mv: f64) -> Result<()> {
    ensure!(count > 0 && length > 0, "count and length must be positive");
    create_dir(out)?;
    let gen = SyntheticEcg {
        noise_mv,
        ..SyntheticEcg::default()
    };
    let mut labels = String::from("record_id,subgroup\n");
    for rec in gen.dataset(count, length, fs, seed) {
        labels.push_str(&format!("{},{}\n", rec.record_id, rec.subgroup));
        save_csv(&rec, &out.join(format!("{}.csv", rec.record_id)))?;
    }
    fs::write(out.join(METADATA_FILE), labels).with_context(|| format!("writing {METADATA_FILE}"))
}
