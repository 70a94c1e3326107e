//! File-level pipeline stages, one per `fgcount` subcommand.
//!
//! Every stage writes its data files plus a `manifest.json` recording the tool
//! version, the full configuration (defaults included), SHA-256 digests of the
//! inputs and wall-clock timing. Data files are a pure function of inputs and
//! configuration; only the manifest's timing differs between runs.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use chrono::{DateTime, Utc};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::attributes::Attribute;
use crate::cluster::{cluster_with_stats, read_objects_jsonl, write_objects_jsonl, AggregatedObject, ClusterParams};
use crate::error::{Error, Result};
use crate::ingest::{
    load_dataset, parse_image_file, temporal_split, validate_dataset, write_annotations_iter, write_images,
    ClusteringSummary, Format, ImageRecord,
};
use crate::mapgen::{DensityMethod, DensityRenderer, Dims, KernelSpec, SegmentationStack, DEFAULT_TAU};
use crate::maps::{dir_name_for, ground_truth_channels, list_map_sets, read_sidecar, MapFiles, write_map_set, MapSidecar};
use crate::metrics::{evaluate_image, summarize, EvalReport};
use crate::sim::{simulate_scene, write_truth_jsonl, Confusion, SimConfig};

pub const ANNOTATIONS_FILE: &str = "annotations.csv";
pub const IMAGES_FILE: &str = "images.csv";
pub const TRUTH_FILE: &str = "truth.jsonl";
pub const OBJECTS_FILE: &str = "objects.jsonl";
pub const VALIDATION_FILE: &str = "validation.json";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InputDigest {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool: String,
    pub version: String,
    pub command: String,
    pub config: serde_json::Value,
    pub inputs: Vec<InputDigest>,
    pub outputs: Vec<String>,
    pub timing: Timing,
}

impl RunManifest {
    fn new(command: &str, config: impl Serialize, inputs: Vec<InputDigest>, outputs: Vec<String>, started: Instant) -> Result<Self> {
        Ok(RunManifest {
            tool: env!("CARGO_PKG_NAME").to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            command: command.to_string(),
            config: serde_json::to_value(config)?,
            inputs,
            outputs,
            timing: Timing {
                wall_seconds: started.elapsed().as_secs_f64(),
            },
        })
    }

    fn write(&self, path: &Path) -> Result<()> {
        let mut json = serde_json::to_vec_pretty(self)?;
        json.push(b'\n');
        write_atomic(path, &json)
    }
}

/// Runs `f` on a pool of `jobs` threads; 0 picks the default.
pub fn with_jobs<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("cannot start {jobs} worker threads: {e}")))?;
    Ok(pool.install(f))
}

fn tmp_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".tmp");
    path.with_file_name(name)
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    write_atomic_with(path, |w| w.write_all(bytes).map_err(|e| Error::write(path, e)))
}

fn write_atomic_with(path: &Path, f: impl FnOnce(&mut BufWriter<File>) -> Result<()>) -> Result<()> {
    let tmp = tmp_path(path);
    let file = File::create(&tmp).map_err(|e| Error::write(&tmp, e))?;
    let mut w = BufWriter::new(file);
    f(&mut w)?;
    w.flush().map_err(|e| Error::write(&tmp, e))?;
    drop(w);
    fs::rename(&tmp, path).map_err(|e| Error::write(path, e))
}

fn create_out_dir(out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::write(out, e))
}

/// Relative path, SHA-256 of the contents and length of one file.
type FileDigest = (PathBuf, [u8; 32], u64);

fn hash_file(path: &Path) -> Result<([u8; 32], u64)> {
    let mut hasher = Sha256::new();
    let mut f = File::open(path).map_err(|e| Error::read(path, e))?;
    let mut buf = vec![0u8; 1 << 16];
    let mut total = 0u64;
    loop {
        let n = f.read(&mut buf).map_err(|e| Error::read(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
        total += n as u64;
    }
    Ok((hasher.finalize().into(), total))
}

fn collect_files(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| Error::read(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::read(dir, e))?.path();
        if path.is_dir() {
            collect_files(&path, out)?;
        } else if path.file_name().is_some_and(|n| n != MANIFEST_FILE) {
            out.push(path);
        }
    }
    Ok(())
}

/// Digest of a directory tree: every file except manifests, in sorted
/// relative-path order, each contributing its path, a zero byte and the
/// SHA-256 of its contents. `known` supplies digests already computed.
fn tree_digest(root: &Path, known: Vec<FileDigest>) -> Result<InputDigest> {
    let mut known: HashMap<PathBuf, ([u8; 32], u64)> = known.into_iter().map(|(p, h, n)| (p, (h, n))).collect();
    let mut files = Vec::new();
    collect_files(root, &mut files)?;
    let mut entries = files
        .into_iter()
        .map(|f| {
            let rel = f.strip_prefix(root).unwrap_or(&f).to_path_buf();
            let (hash, n) = match known.remove(&rel) {
                Some(d) => d,
                None => hash_file(&f)?,
            };
            Ok((rel, hash, n))
        })
        .collect::<Result<Vec<FileDigest>>>()?;
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    let mut hasher = Sha256::new();
    let mut bytes = 0;
    for (rel, hash, n) in entries {
        hasher.update(rel.to_string_lossy().as_bytes());
        hasher.update([0u8]);
        hasher.update(hash);
        bytes += n;
    }
    Ok(InputDigest {
        path: root.display().to_string(),
        sha256: hex::encode(hasher.finalize()),
        bytes,
    })
}

/// SHA-256 of a file's contents, or the tree digest of a directory.
pub fn digest_path(path: &Path) -> Result<InputDigest> {
    if path.is_dir() {
        return tree_digest(path, Vec::new());
    }
    let (hash, bytes) = hash_file(path)?;
    Ok(InputDigest {
        path: path.display().to_string(),
        sha256: hex::encode(hash),
        bytes,
    })
}

/// Reads one map set under `root` along with the digests of its files.
fn read_map_files(root: &Path, dir: &Path) -> Result<(MapFiles, Vec<FileDigest>)> {
    let files = MapFiles::read(dir)?;
    let rel = dir.strip_prefix(root).unwrap_or(dir);
    let digests = files
        .iter()
        .map(|(name, bytes)| (rel.join(name), Sha256::digest(bytes).into(), bytes.len() as u64))
        .collect();
    Ok((files, digests))
}

// ---------------------------------------------------------------------------
// simulate

/// Confusion/prior overrides read from a JSON file. Missing attributes keep
/// the configured values.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfusionFile {
    #[serde(default)]
    pub species: Option<Confusion>,
    #[serde(default)]
    pub sex: Option<Confusion>,
    #[serde(default)]
    pub age: Option<Confusion>,
    #[serde(default)]
    pub priors: Option<HashMap<Attribute, [f64; 3]>>,
}

impl ConfusionFile {
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::read(path, e))?;
        serde_json::from_slice(&bytes).map_err(|e| Error::parse(e.line() as u64, format!("{}: {e}", path.display())))
    }

    pub fn apply(&self, config: &mut SimConfig) {
        for (a, m) in Attribute::ALL.into_iter().zip([self.species, self.sex, self.age]) {
            if let Some(m) = m {
                config.confusion[a.index()] = m;
            }
        }
        if let Some(p) = &self.priors {
            for (a, v) in p {
                config.priors[a.index()] = *v;
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SimulateSummary {
    pub images: usize,
    pub objects: usize,
    pub annotations: usize,
    pub manifest: RunManifest,
}

pub fn run_simulate(config: &SimConfig, out: &Path, jobs: usize) -> Result<SimulateSummary> {
    let started = Instant::now();
    config.validate()?;
    create_out_dir(out)?;
    let scenes = with_jobs(jobs, || {
        (0..config.n_images)
            .into_par_iter()
            .map(|i| simulate_scene(config, i))
            .collect::<Result<Vec<_>>>()
    })??;
    let images: Vec<ImageRecord> = (0..config.n_images).map(|i| config.image_record(i)).collect();

    write_atomic_with(&out.join(IMAGES_FILE), |w| write_images(w, &images, Format::Csv))?;
    write_atomic_with(&out.join(ANNOTATIONS_FILE), |w| {
        write_annotations_iter(w, scenes.iter().flat_map(|s| &s.dots), Format::Csv)
    })?;
    write_atomic_with(&out.join(TRUTH_FILE), |w| {
        for s in &scenes {
            write_truth_jsonl(&mut *w, s)?;
        }
        Ok(())
    })?;

    let annotations = scenes.iter().map(|s| s.dots.len()).sum();
    let objects = scenes.iter().map(|s| s.objects.len()).sum();
    let manifest = RunManifest::new(
        "simulate",
        config,
        Vec::new(),
        vec![ANNOTATIONS_FILE.into(), IMAGES_FILE.into(), TRUTH_FILE.into()],
        started,
    )?;
    manifest.write(&out.join(MANIFEST_FILE))?;
    Ok(SimulateSummary {
        images: config.n_images,
        objects,
        annotations,
        manifest,
    })
}

// ---------------------------------------------------------------------------
// aggregate

#[derive(Serialize)]
struct AggregateConfig<'a> {
    annotations: &'a Path,
    images: &'a Path,
    params: &'a ClusterParams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AggregateSummary {
    pub objects: usize,
    pub discarded_dots: usize,
    pub manifest: RunManifest,
}

pub fn run_aggregate(annotations: &Path, images: &Path, params: &ClusterParams, out: &Path, jobs: usize) -> Result<AggregateSummary> {
    let started = Instant::now();
    params.validate()?;
    let dataset = load_dataset(annotations, images)?;
    create_out_dir(out)?;
    let mut report = validate_dataset(&dataset.images, &dataset.annotations);
    let groups = dataset.by_image();
    let outcomes = with_jobs(jobs, || {
        groups
            .par_iter()
            .map(|(_, dots)| cluster_with_stats(dots.iter().copied(), params))
            .collect::<Result<Vec<_>>>()
    })??;

    let mut summary = ClusteringSummary::default();
    for ((im, _), o) in groups.iter().zip(&outcomes) {
        summary.objects += o.objects.len();
        summary.discarded_dots += o.discarded;
        summary.objects_per_image.insert(im.image_id.clone(), o.objects.len());
    }
    write_atomic_with(&out.join(OBJECTS_FILE), |w| {
        for o in &outcomes {
            write_objects_jsonl(&mut *w, &o.objects)?;
        }
        Ok(())
    })?;
    let (objects, discarded_dots) = (summary.objects, summary.discarded_dots);
    report.clustering = Some(summary);
    let mut json = serde_json::to_vec_pretty(&report)?;
    json.push(b'\n');
    write_atomic(&out.join(VALIDATION_FILE), &json)?;

    let manifest = RunManifest::new(
        "aggregate",
        AggregateConfig { annotations, images, params },
        vec![digest_path(annotations)?, digest_path(images)?],
        vec![OBJECTS_FILE.into(), VALIDATION_FILE.into()],
        started,
    )?;
    manifest.write(&out.join(MANIFEST_FILE))?;
    Ok(AggregateSummary {
        objects,
        discarded_dots,
        manifest,
    })
}

// ---------------------------------------------------------------------------
// genmaps

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapOptions {
    pub method: DensityMethod,
    pub kernel: KernelSpec,
    pub tau: f64,
    pub downsample: usize,
}

impl Default for MapOptions {
    fn default() -> Self {
        MapOptions {
            method: DensityMethod::Cluster,
            kernel: KernelSpec::default(),
            tau: DEFAULT_TAU,
            downsample: 1,
        }
    }
}

#[derive(Serialize)]
struct GenmapsConfig<'a> {
    objects: &'a Path,
    images: &'a Path,
    options: &'a MapOptions,
}

pub fn read_objects_file(path: &Path) -> Result<Vec<AggregatedObject>> {
    let f = File::open(path).map_err(|e| Error::read(path, e))?;
    read_objects_jsonl(std::io::BufReader::new(f))
}

/// Renders and writes one map set per image of the image table.
pub fn run_genmaps(objects: &Path, images: &Path, options: &MapOptions, out: &Path, jobs: usize) -> Result<RunManifest> {
    let started = Instant::now();
    options.kernel.validate()?;
    if options.downsample == 0 {
        return Err(Error::InvalidParameter("downsample factor must be positive".into()));
    }
    if !(options.tau.is_finite() && options.tau > 0.0) {
        return Err(Error::InvalidParameter(format!("tau must be positive, got {}", options.tau)));
    }
    let image_table = parse_image_file(images, Format::from_path(images))?;
    let objs = read_objects_file(objects)?;
    let mut grouped: HashMap<&str, Vec<AggregatedObject>> =
        image_table.iter().map(|im| (im.image_id.as_str(), Vec::new())).collect();
    let mut unknown: Vec<String> = Vec::new();
    for o in objs {
        match grouped.get_mut(o.image_id.as_str()) {
            Some(v) => v.push(o),
            None => unknown.push(o.image_id.clone()),
        }
    }
    if !unknown.is_empty() {
        unknown.sort();
        unknown.dedup();
        return Err(Error::UnknownImages(unknown));
    }
    create_out_dir(out)?;
    let renderer = DensityRenderer::new(&options.kernel, options.downsample)?;

    with_jobs(jobs, || {
        image_table.par_iter().try_for_each(|im| -> Result<()> {
            let dims = Dims::new(im.width as usize, im.height as usize);
            let objects = &grouped[im.image_id.as_str()];
            let density = renderer.render(&im.image_id, objects, dims, options.method)?;
            let seg = SegmentationStack::from_density(&density, options.tau)?;
            let (w, h) = density.dims();
            let sidecar = MapSidecar {
                image_id: im.image_id.clone(),
                width: w,
                height: h,
                source_width: Some(im.width),
                source_height: Some(im.height),
                method: Some(options.method),
                kernel: Some(options.kernel),
                tau: Some(options.tau),
                downsample: options.downsample,
                channels: Vec::new(),
            };
            write_map_set(&out.join(dir_name_for(&im.image_id)), &sidecar, &ground_truth_channels(&density, &seg))
        })
    })??;

    let manifest = RunManifest::new(
        "genmaps",
        GenmapsConfig { objects, images, options },
        vec![digest_path(objects)?, digest_path(images)?],
        image_table.iter().map(|im| dir_name_for(&im.image_id)).collect(),
        started,
    )?;
    manifest.write(&out.join(MANIFEST_FILE))?;
    Ok(manifest)
}

// ---------------------------------------------------------------------------
// evaluate

#[derive(Serialize)]
struct EvaluateConfig<'a> {
    pred: &'a Path,
    gt: &'a Path,
    report: &'a Path,
    name: &'a str,
}

fn map_set_ids(root: &Path) -> Result<Vec<(String, PathBuf)>> {
    list_map_sets(root)?
        .into_iter()
        .map(|dir| Ok((read_sidecar(&dir)?.image_id, dir)))
        .collect()
}

/// Paths of the CSV table and manifest that accompany a JSON report.
pub fn report_companions(report: &Path) -> (PathBuf, PathBuf) {
    let stem = report.file_stem().unwrap_or_default().to_string_lossy().into_owned();
    (report.with_extension("csv"), report.with_file_name(format!("{stem}.manifest.json")))
}

/// Evaluates the prediction map sets under `pred` against those under `gt`.
/// Writes the JSON report to `report`, a one-row CSV table beside it and a
/// manifest.
pub fn run_evaluate(pred: &Path, gt: &Path, report: &Path, name: &str, jobs: usize) -> Result<(EvalReport, RunManifest)> {
    let started = Instant::now();
    let gt_sets = map_set_ids(gt)?;
    let pred_sets = map_set_ids(pred)?;
    let pred_by_id: HashMap<&str, &PathBuf> = pred_sets.iter().map(|(id, p)| (id.as_str(), p)).collect();
    let gt_by_id: HashMap<&str, &PathBuf> = gt_sets.iter().map(|(id, p)| (id.as_str(), p)).collect();
    let mut unpaired: Vec<String> = gt_sets
        .iter()
        .filter(|(id, _)| !pred_by_id.contains_key(id.as_str()))
        .chain(pred_sets.iter().filter(|(id, _)| !gt_by_id.contains_key(id.as_str())))
        .map(|(id, _)| id.clone())
        .collect();
    if !unpaired.is_empty() {
        unpaired.sort();
        return Err(Error::UnpairedImages(unpaired));
    }
    if pred_by_id.len() != pred_sets.len() || gt_by_id.len() != gt_sets.len() {
        return Err(Error::InvalidParameter("duplicate image ids in evaluation input".into()));
    }

    // One pair in memory per worker; each map set is read once, for both
    // scoring and the input digests.
    let (images, pred_files, gt_files) = with_jobs(jobs, || -> Result<_> {
        let per_image = gt_sets
            .par_iter()
            .map(|(id, gt_dir)| {
                let pred_dir = pred_by_id[id.as_str()];
                let (gt_map, gt_files) = read_map_files(gt, gt_dir)?;
                let (pred_map, pred_files) = read_map_files(pred, pred_dir)?;
                let (g, p) = (gt_map.ground_truth()?, pred_map.prediction()?);
                Ok((evaluate_image(&p, &g)?, pred_files, gt_files))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut images = Vec::with_capacity(per_image.len());
        let (mut pred_files, mut gt_files) = (Vec::new(), Vec::new());
        for (im, pf, gf) in per_image {
            images.push(im);
            pred_files.extend(pf);
            gt_files.extend(gf);
        }
        Ok((images, pred_files, gt_files))
    })??;
    let result = summarize(images)?;

    if let Some(parent) = report.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_out_dir(parent)?;
    }
    let mut json = serde_json::to_vec_pretty(&result)?;
    json.push(b'\n');
    write_atomic(report, &json)?;
    let (csv_path, manifest_path) = report_companions(report);
    write_atomic_with(&csv_path, |w| result.write_csv(w, name))?;

    let manifest = RunManifest::new(
        "evaluate",
        EvaluateConfig { pred, gt, report, name },
        vec![tree_digest(pred, pred_files)?, tree_digest(gt, gt_files)?],
        vec![report.display().to_string(), csv_path.display().to_string()],
        started,
    )?;
    manifest.write(&manifest_path)?;
    Ok((result, manifest))
}

// ---------------------------------------------------------------------------
// split

#[derive(Serialize)]
struct SplitConfig<'a> {
    images: &'a Path,
    train_before: String,
    val_before: String,
}

pub const SPLIT_FILES: [&str; 3] = ["train.txt", "val.txt", "test.txt"];

pub fn run_split(images: &Path, train_before: DateTime<Utc>, val_before: DateTime<Utc>, out: &Path) -> Result<RunManifest> {
    let started = Instant::now();
    let table = parse_image_file(images, Format::from_path(images))?;
    let split = temporal_split(&table, train_before, val_before)?;
    create_out_dir(out)?;
    for (file, ids) in SPLIT_FILES.iter().zip([&split.train, &split.val, &split.test]) {
        let mut text = String::new();
        for id in ids {
            text.push_str(id);
            text.push('\n');
        }
        write_atomic(&out.join(file), text.as_bytes())?;
    }
    let manifest = RunManifest::new(
        "split",
        SplitConfig {
            images,
            train_before: crate::ingest::format_timestamp(&train_before),
            val_before: crate::ingest::format_timestamp(&val_before),
        },
        vec![digest_path(images)?],
        SPLIT_FILES.iter().map(|s| s.to_string()).collect(),
        started,
    )?;
    manifest.write(&out.join(MANIFEST_FILE))?;
    Ok(manifest)
}

