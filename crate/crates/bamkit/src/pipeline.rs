//! Pipeline driver: dataset generation, classifier training, saliency and
//! segmentation artifacts, scan-benchmark preparation, and metric reports,
//! glued together behind a CLI with content-hashed run manifests.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Parser, Subcommand};
use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bam::{bam_heatmap, greedy_fuse, ChannelStack, SelectionTrace};
use crate::classifier::evaluate_classifier;
use crate::cnn::{self, Checkpoint, ModelConfig, TrainConfig};
use crate::error::{Error, Result};
use crate::evaluation::{batch_report, format_table, AggregationMode, MetricsReport};
use crate::gradcam::{binarize, gradcam, Heatmap, DEFAULT_HEATMAP_THRESHOLD};
use crate::ldi::{
    classify_palette, estimate_alignment, ldi_masks, restrict_to_manual, warp_scan, AlignmentFit,
    HpCategory, PaletteTable,
};
use crate::mask::BinaryMask;
use crate::raster::{
    gray_to_mask, heatmap_to_gray, mask_to_gray, read_png_gray8, read_png_rgb8, write_png_gray8,
    write_png_rgb8, Gray8Image, Rgb8Image,
};
use crate::segment::{segment_heatmap, SegmentConfig, ThresholdReport};
use crate::synth::{generate_dataset, image_to_tensor, make_scan_fixture, Sample, Split, SyntheticSpec};
use crate::tensor::Tensor;
use crate::viz::overlay_boundary;

/// Everything a run needs, resolved to concrete values. A copy is written
/// next to the outputs so artifacts carry their own provenance.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Master seed; mixture fitting and any command-level randomness key
    /// off it. `--seed` also overwrites the synth and train seeds.
    pub seed: u64,
    pub n_train: usize,
    pub n_val: usize,
    pub synth: SyntheticSpec,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub segment: SegmentConfig,
    /// Binarization threshold for the class-activation baseline mask.
    pub gradcam_threshold: f64,
    pub palette: PaletteTable,
    /// Contour color for segmentation overlays.
    pub overlay_rgb: [u8; 3],
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 1,
            n_train: 240,
            n_val: 100,
            synth: SyntheticSpec::default(),
            model: ModelConfig::default(),
            train: TrainConfig {
                target_val_accuracy: Some(0.95),
                ..TrainConfig::default()
            },
            segment: SegmentConfig::default(),
            gradcam_threshold: DEFAULT_HEATMAP_THRESHOLD,
            palette: PaletteTable::synthetic_default(),
            overlay_rgb: [255, 48, 48],
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |detail: String| Error::InvalidArgument {
            op: "pipeline config",
            detail,
        };
        self.model.validate()?;
        self.palette.validate()?;
        if self.n_train == 0 || self.n_val == 0 {
            return Err(bad("n_train and n_val must be positive".into()));
        }
        if self.model.input_size != self.synth.image_size {
            return Err(bad(format!(
                "model expects {}px inputs but the generator makes {}px images",
                self.model.input_size, self.synth.image_size
            )));
        }
        if self.model.num_classes != self.synth.num_classes() {
            return Err(bad(format!(
                "model has {} classes but the generator defines {}",
                self.model.num_classes,
                self.synth.num_classes()
            )));
        }
        if !(0.0..=1.0).contains(&self.gradcam_threshold) {
            return Err(bad(format!(
                "gradcam threshold {} outside [0, 1]",
                self.gradcam_threshold
            )));
        }
        if self.segment.components < 2 {
            return Err(bad(
                "threshold search needs at least 2 mixture components".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.segment.min_area_fraction) {
            return Err(bad(format!(
                "min area fraction {} outside [0, 1]",
                self.segment.min_area_fraction
            )));
        }
        Ok(())
    }
}

/// One output (or input) file, identified by content.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    /// Path relative to the run's output root.
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

/// Audit record of one command invocation. Every file the command wrote is
/// listed with its content hash; `wall_ms` is informational and not part of
/// any determinism contract.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_sha256: String,
    pub inputs: Vec<FileEntry>,
    pub outputs: Vec<FileEntry>,
    pub wall_ms: u64,
}

/// Fixed directory layout under one output root, shared by all commands so
/// they chain without extra plumbing.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Layout {
            root: root.to_path_buf(),
        }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.json")
    }

    pub fn manifest_for(&self, command: &str) -> PathBuf {
        self.root.join("manifests").join(format!("{command}.json"))
    }

    pub fn data_dir(&self) -> PathBuf {
        self.root.join("data")
    }

    pub fn data_manifest(&self) -> PathBuf {
        self.data_dir().join("manifest.json")
    }

    pub fn checkpoint_dir(&self) -> PathBuf {
        self.root.join("checkpoint")
    }

    pub fn train_history(&self) -> PathBuf {
        self.root.join("train_history.json")
    }

    pub fn classifier_report(&self) -> PathBuf {
        self.root.join("classifier_report.json")
    }

    pub fn saliency_dir(&self, index: usize) -> PathBuf {
        self.root.join("saliency").join(format!("val_{index:04}"))
    }

    pub fn ldi_dir(&self, index: usize) -> PathBuf {
        self.root.join("ldi").join(format!("val_{index:04}"))
    }

    pub fn segmentation_report(&self) -> PathBuf {
        self.root.join("eval").join("segmentation_report.json")
    }

    pub fn segmentation_table(&self) -> PathBuf {
        self.root.join("eval").join("segmentation_table.txt")
    }
}

/// One sample's files in the dataset manifest; paths are relative to the
/// data directory. Scan fields are present on validation entries only.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetEntry {
    pub index: usize,
    pub label: usize,
    pub class: String,
    pub image: String,
    pub mask: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scan: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub landmarks: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hp: Option<HpCategory>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub spec: SyntheticSpec,
    pub classes: Vec<String>,
    pub train: Vec<DatasetEntry>,
    pub val: Vec<DatasetEntry>,
}

/// Landmark pairs tying a scan to its photo, stored beside the scan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LandmarkSidecar {
    pub scan: Vec<(f64, f64)>,
    pub photo: Vec<(f64, f64)>,
}

/// Per-image saliency audit record written beside the masks.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageTrace {
    pub index: usize,
    pub label: usize,
    pub predicted: usize,
    pub gradcam_threshold: f64,
    pub selection: SelectionTrace,
    pub threshold: ThresholdReport,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn read_input(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::InputIo {
        path: path.to_path_buf(),
        source: e,
    })
}

fn rel_string(root: &Path, path: &Path) -> String {
    path.strip_prefix(root)
        .unwrap_or(path)
        .to_string_lossy()
        .into_owned()
}

fn file_entry(root: &Path, path: &Path) -> Result<FileEntry> {
    let bytes = read_input(path)?;
    Ok(FileEntry {
        path: rel_string(root, path),
        sha256: sha256_hex(&bytes),
        bytes: bytes.len() as u64,
    })
}

/// Pretty JSON with a trailing newline, written atomically.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = read_input(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::BadFormat {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })
}

/// Write a file atomically: the bytes land in a sibling temp file which is
/// then renamed over the target, so readers never observe a partial write.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty());
    if let Some(dir) = dir {
        fs::create_dir_all(dir)?;
    }
    let file_name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| "artifact".to_string());
    let tmp = path.with_file_name(format!(".{file_name}.tmp"));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::InvalidArgument {
            op: "jobs",
            detail: e.to_string(),
        })
}

/// Hash `paths` (sorted, deduplicated) relative to `root`, write the
/// resolved config and the command manifest, and return the manifest.
fn finish_run(
    command: &str,
    cfg: &PipelineConfig,
    layout: &Layout,
    inputs: Vec<FileEntry>,
    mut written: Vec<PathBuf>,
    started: Instant,
) -> Result<RunManifest> {
    let mut config_text = serde_json::to_string_pretty(cfg)?;
    config_text.push('\n');
    write_atomic(&layout.config(), config_text.as_bytes())?;
    written.push(layout.config());
    written.sort();
    written.dedup();
    let outputs = written
        .iter()
        .map(|p| file_entry(&layout.root, p))
        .collect::<Result<Vec<_>>>()?;
    let manifest = RunManifest {
        command: command.to_string(),
        config_sha256: sha256_hex(config_text.as_bytes()),
        inputs,
        outputs,
        wall_ms: started.elapsed().as_millis() as u64,
    };
    write_json(&layout.manifest_for(command), &manifest)?;
    info!(
        "{command}: {} files in {} ms",
        manifest.outputs.len(),
        manifest.wall_ms
    );
    Ok(manifest)
}

fn split_dir_name(split: Split) -> &'static str {
    match split {
        Split::Train => "train",
        Split::Val => "val",
    }
}

/// Write one sample's files; validation samples also get a rendered scan
/// and its landmark sidecar. Returns the manifest entry and written paths.
fn write_sample(
    cfg: &PipelineConfig,
    layout: &Layout,
    split: Split,
    index: usize,
    sample: &Sample,
) -> Result<(DatasetEntry, Vec<PathBuf>)> {
    let dir_name = split_dir_name(split);
    let dir = layout.data_dir().join(dir_name);
    let image_path = dir.join(format!("img_{index:04}.png"));
    let mask_path = dir.join(format!("mask_{index:04}.png"));
    write_png_rgb8(&image_path, &sample.image)?;
    write_png_gray8(&mask_path, &mask_to_gray(&sample.mask))?;
    let mut written = vec![image_path, mask_path];
    let mut entry = DatasetEntry {
        index,
        label: sample.label,
        class: cfg.synth.archetypes[sample.label].name.clone(),
        image: format!("{dir_name}/img_{index:04}.png"),
        mask: format!("{dir_name}/mask_{index:04}.png"),
        scan: None,
        landmarks: None,
        hp: None,
    };
    if split == Split::Val {
        let fixture = make_scan_fixture(&cfg.synth, sample, split, index, &cfg.palette);
        let scan_path = dir.join(format!("scan_{index:04}.png"));
        let landmarks_path = dir.join(format!("landmarks_{index:04}.json"));
        write_png_rgb8(&scan_path, &fixture.scan)?;
        write_json(
            &landmarks_path,
            &LandmarkSidecar {
                scan: fixture.landmarks_scan.clone(),
                photo: fixture.landmarks_photo.clone(),
            },
        )?;
        written.push(scan_path);
        written.push(landmarks_path);
        entry.scan = Some(format!("{dir_name}/scan_{index:04}.png"));
        entry.landmarks = Some(format!("{dir_name}/landmarks_{index:04}.json"));
        entry.hp = Some(fixture.hp);
    }
    Ok((entry, written))
}

/// Generate the dataset and write images, masks, validation scans, and the
/// dataset manifest.
pub fn cmd_synth(cfg: &PipelineConfig, root: &Path, jobs: usize) -> Result<RunManifest> {
    let started = Instant::now();
    cfg.validate()?;
    let layout = Layout::new(root);
    let (train, val) = generate_dataset(&cfg.synth, cfg.n_train, cfg.n_val);
    let pool = thread_pool(jobs)?;
    let write_split = |split: Split, samples: &[Sample]| -> Result<(Vec<DatasetEntry>, Vec<PathBuf>)> {
        let results: Vec<(DatasetEntry, Vec<PathBuf>)> = pool.install(|| {
            samples
                .par_iter()
                .enumerate()
                .map(|(i, s)| write_sample(cfg, &layout, split, i, s))
                .collect::<Result<Vec<_>>>()
        })?;
        let mut entries = Vec::with_capacity(results.len());
        let mut written = Vec::new();
        for (entry, paths) in results {
            entries.push(entry);
            written.extend(paths);
        }
        Ok((entries, written))
    };
    let (train_entries, mut written) = write_split(Split::Train, &train)?;
    let (val_entries, val_written) = write_split(Split::Val, &val)?;
    written.extend(val_written);
    let manifest = DatasetManifest {
        spec: cfg.synth.clone(),
        classes: cfg.synth.archetypes.iter().map(|a| a.name.clone()).collect(),
        train: train_entries,
        val: val_entries,
    };
    write_json(&layout.data_manifest(), &manifest)?;
    written.push(layout.data_manifest());
    finish_run("synth", cfg, &layout, Vec::new(), written, started)
}

pub fn load_dataset_manifest(root: &Path) -> Result<DatasetManifest> {
    read_json(&Layout::new(root).data_manifest())
}

/// Load a split as (tensor, label) pairs in manifest order.
pub fn load_split(root: &Path, entries: &[DatasetEntry], cfg: &PipelineConfig) -> Result<Vec<(Tensor, usize)>> {
    let data_dir = Layout::new(root).data_dir();
    entries
        .iter()
        .map(|e| {
            let img = read_png_rgb8(&data_dir.join(&e.image))?;
            Ok((image_to_tensor(&img, cfg.model.dtype), e.label))
        })
        .collect()
}

fn load_checkpoint(layout: &Layout) -> Result<Checkpoint> {
    Checkpoint::load(&layout.checkpoint_dir())
}

/// Every file under `dir`, recursively, sorted by path.
fn files_under(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.push(path);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// Train the classifier on the generated dataset; write the checkpoint and
/// per-epoch history.
pub fn cmd_train(cfg: &PipelineConfig, root: &Path) -> Result<RunManifest> {
    let started = Instant::now();
    cfg.validate()?;
    let layout = Layout::new(root);
    let manifest = load_dataset_manifest(root)?;
    let train_set = load_split(root, &manifest.train, cfg)?;
    let val_set = load_split(root, &manifest.val, cfg)?;
    let mut ckpt = Checkpoint::init(cfg.model.clone(), cfg.train.seed)?;
    let history = cnn::train(&mut ckpt, &train_set, &val_set, &cfg.train)?;
    ckpt.save(&layout.checkpoint_dir())?;
    write_json(&layout.train_history(), &history)?;
    let mut written = files_under(&layout.checkpoint_dir())?;
    written.push(layout.train_history());
    let inputs = vec![file_entry(root, &layout.data_manifest())?];
    finish_run("train", cfg, &layout, inputs, written, started)
}

/// Evaluate the trained classifier on the validation split and write the
/// report (confusion matrix, per-class metrics, averages, ROC curves).
pub fn cmd_eval_clf(cfg: &PipelineConfig, root: &Path) -> Result<RunManifest> {
    let started = Instant::now();
    cfg.validate()?;
    let layout = Layout::new(root);
    let manifest = load_dataset_manifest(root)?;
    let val_set = load_split(root, &manifest.val, cfg)?;
    let ckpt = load_checkpoint(&layout)?;
    let report = evaluate_classifier(&ckpt, &val_set)?;
    write_json(&layout.classifier_report(), &report)?;
    let inputs = vec![
        file_entry(root, &layout.data_manifest())?,
        file_entry(root, &layout.checkpoint_dir().join("manifest.json"))?,
    ];
    finish_run(
        "eval-clf",
        cfg,
        &layout,
        inputs,
        vec![layout.classifier_report()],
        started,
    )
}

/// Class-activation heatmap (normalized, at image resolution) and its
/// thresholded baseline mask.
fn gradcam_for_image(
    cfg: &PipelineConfig,
    ckpt: &Checkpoint,
    image: &Rgb8Image,
) -> Result<(cnn::TapsOutput, Heatmap, BinaryMask)> {
    let tensor = image_to_tensor(image, cfg.model.dtype);
    let taps = cnn::forward_with_taps(ckpt, &tensor)?;
    let size = cfg.model.input_size;
    let heat = gradcam(&taps.last_activation, &taps.last_gradient, size, size)?;
    let mask = binarize(&heat, cfg.gradcam_threshold);
    Ok((taps, heat, mask))
}

/// Emit class-activation heatmaps and baseline masks for every validation
/// image.
pub fn cmd_gradcam(cfg: &PipelineConfig, root: &Path, jobs: usize) -> Result<RunManifest> {
    let started = Instant::now();
    cfg.validate()?;
    let layout = Layout::new(root);
    let manifest = load_dataset_manifest(root)?;
    let ckpt = load_checkpoint(&layout)?;
    let pool = thread_pool(jobs)?;
    let per_image: Vec<Vec<PathBuf>> = pool.install(|| {
        manifest
            .val
            .par_iter()
            .map(|entry| {
                let image = read_png_rgb8(&layout.data_dir().join(&entry.image))?;
                let (_, heat, mask) = gradcam_for_image(cfg, &ckpt, &image)?;
                let dir = layout.saliency_dir(entry.index);
                let heat_path = dir.join("gradcam.png");
                let mask_path = dir.join("gradcam_mask.png");
                write_png_gray8(&heat_path, &heatmap_to_gray(&heat))?;
                write_png_gray8(&mask_path, &mask_to_gray(&mask))?;
                Ok(vec![heat_path, mask_path])
            })
            .collect::<Result<Vec<_>>>()
    })?;
    let written: Vec<PathBuf> = per_image.into_iter().flatten().collect();
    let inputs = vec![
        file_entry(root, &layout.data_manifest())?,
        file_entry(root, &layout.checkpoint_dir().join("manifest.json"))?,
    ];
    finish_run("gradcam", cfg, &layout, inputs, written, started)
}

/// Mixture thresholding with a degeneracy fallback: a heatmap with fewer
/// distinct values than mixture components retries with a smaller K, and a
/// heatmap without separable structure — (near-)constant values, or a fit
/// whose components all collapse onto one mean — yields an empty mask
/// instead of an error, since it carries no signal worth thresholding.
pub fn segment_with_fallback(
    heat: &Heatmap,
    reference: &BinaryMask,
    cfg: &SegmentConfig,
    seed: u64,
) -> Result<(BinaryMask, ThresholdReport)> {
    let mut seg_cfg = cfg.clone();
    loop {
        match segment_heatmap(heat, reference, &seg_cfg, seed) {
            Ok(outcome) => return Ok((outcome.mask, outcome.report)),
            Err(Error::TooFewDistinctValues { distinct, .. }) if distinct >= 2 => {
                seg_cfg.components = distinct;
            }
            Err(Error::TooFewDistinctValues { .. }) | Err(Error::CollapsedMixture) => {
                log::warn!("heatmap has no separable structure; using an empty mask");
                let empty = BinaryMask::zeros(heat.height(), heat.width());
                let chosen_iou = crate::segment::iou(&empty, reference)?;
                let report = ThresholdReport {
                    candidates: Vec::new(),
                    ious: Vec::new(),
                    chosen_t: 1.0,
                    chosen_iou,
                };
                return Ok((empty, report));
            }
            Err(e) => return Err(e),
        }
    }
}

/// Full saliency chain for one image: class-activation reference, greedy
/// channel fusion, mixture thresholding, and the boundary overlay.
fn bam_for_image(
    cfg: &PipelineConfig,
    ckpt: &Checkpoint,
    layout: &Layout,
    entry: &DatasetEntry,
) -> Result<Vec<PathBuf>> {
    let image = read_png_rgb8(&layout.data_dir().join(&entry.image))?;
    let (taps, heat, gc_mask) = gradcam_for_image(cfg, ckpt, &image)?;
    let stack = ChannelStack::from_activation(&taps.first_activation)?;
    let trace = greedy_fuse(&stack, &heat)?;
    let fused = bam_heatmap(&trace);
    let (mask, report) = segment_with_fallback(&fused, &gc_mask, &cfg.segment, cfg.seed)?;
    let overlay = overlay_boundary(&image, &mask, cfg.overlay_rgb)?;

    let dir = layout.saliency_dir(entry.index);
    let paths = [
        dir.join("gradcam.png"),
        dir.join("gradcam_mask.png"),
        dir.join("bam_heatmap.png"),
        dir.join("bam_mask.png"),
        dir.join("overlay.png"),
        dir.join("trace.json"),
    ];
    write_png_gray8(&paths[0], &heatmap_to_gray(&heat))?;
    write_png_gray8(&paths[1], &mask_to_gray(&gc_mask))?;
    write_png_gray8(&paths[2], &heatmap_to_gray(&fused))?;
    write_png_gray8(&paths[3], &mask_to_gray(&mask))?;
    write_png_rgb8(&paths[4], &overlay)?;
    write_json(
        &paths[5],
        &ImageTrace {
            index: entry.index,
            label: entry.label,
            predicted: taps.predicted,
            gradcam_threshold: cfg.gradcam_threshold,
            selection: trace,
            threshold: report,
        },
    )?;
    Ok(paths.to_vec())
}

/// Emit the per-image saliency artifact set (heatmaps, masks, overlay,
/// trace) for every validation image.
pub fn cmd_bam(cfg: &PipelineConfig, root: &Path, jobs: usize) -> Result<RunManifest> {
    let started = Instant::now();
    cfg.validate()?;
    let layout = Layout::new(root);
    let manifest = load_dataset_manifest(root)?;
    let ckpt = load_checkpoint(&layout)?;
    let pool = thread_pool(jobs)?;
    let per_image: Vec<Vec<PathBuf>> = pool.install(|| {
        manifest
            .val
            .par_iter()
            .map(|entry| bam_for_image(cfg, &ckpt, &layout, entry))
            .collect::<Result<Vec<_>>>()
    })?;
    let written: Vec<PathBuf> = per_image.into_iter().flatten().collect();
    let inputs = vec![
        file_entry(root, &layout.data_manifest())?,
        file_entry(root, &layout.checkpoint_dir().join("manifest.json"))?,
    ];
    finish_run("bam", cfg, &layout, inputs, written, started)
}

fn gray_to_heatmap(img: &Gray8Image) -> Heatmap {
    let data = img.pixels().iter().map(|&v| v as f64 / 255.0).collect();
    Heatmap::new(img.height(), img.width(), data)
}

/// Segment a single grayscale heatmap against a reference mask; writes the
/// mask and the threshold audit record into the output root.
pub fn cmd_segment(
    cfg: &PipelineConfig,
    root: &Path,
    heatmap_path: &Path,
    reference_mask_path: &Path,
) -> Result<RunManifest> {
    let started = Instant::now();
    cfg.validate()?;
    let layout = Layout::new(root);
    let heat = gray_to_heatmap(&read_png_gray8(heatmap_path)?);
    let reference = gray_to_mask(&read_png_gray8(reference_mask_path)?);
    let (mask, report) = segment_with_fallback(&heat, &reference, &cfg.segment, cfg.seed)?;
    let mask_path = layout.root.join("segmented.png");
    let report_path = layout.root.join("threshold_report.json");
    write_png_gray8(&mask_path, &mask_to_gray(&mask))?;
    write_json(&report_path, &report)?;
    let inputs = vec![
        file_entry(root, heatmap_path)?,
        file_entry(root, reference_mask_path)?,
    ];
    finish_run(
        "segment",
        cfg,
        &layout,
        inputs,
        vec![mask_path, report_path],
        started,
    )
}

/// Alignment provenance written beside each warped scan.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AlignmentRecord {
    pub fit: AlignmentFit,
    pub landmark_count: usize,
}

/// Align one scan into its photo frame, classify palette colors, restrict
/// to the manual mask, and write the category masks.
fn ldi_prep_for_image(
    cfg: &PipelineConfig,
    layout: &Layout,
    entry: &DatasetEntry,
) -> Result<Vec<PathBuf>> {
    let missing = |what: &str| Error::BadFormat {
        path: layout.data_manifest(),
        detail: format!("validation entry {} has no {what}; re-run synth", entry.index),
    };
    let scan_rel = entry.scan.as_ref().ok_or_else(|| missing("scan"))?;
    let landmarks_rel = entry.landmarks.as_ref().ok_or_else(|| missing("landmarks"))?;
    let scan = read_png_rgb8(&layout.data_dir().join(scan_rel))?;
    let sidecar: LandmarkSidecar = read_json(&layout.data_dir().join(landmarks_rel))?;
    let manual = gray_to_mask(&read_png_gray8(&layout.data_dir().join(&entry.mask))?);

    let fit = estimate_alignment(&sidecar.scan, &sidecar.photo)?;
    let warped = warp_scan(
        &scan,
        &fit.transform,
        manual.width(),
        manual.height(),
        [0, 0, 0],
    );
    let categories = classify_palette(&warped, &cfg.palette)?;
    let restricted = restrict_to_manual(&categories, &manual)?;
    let masks = ldi_masks(&restricted);

    let dir = layout.ldi_dir(entry.index);
    let paths = [
        dir.join("warped_scan.png"),
        dir.join("hp_lt14.png"),
        dir.join("hp_14_21.png"),
        dir.join("hp_gt21.png"),
        dir.join("hp_union.png"),
        dir.join("alignment.json"),
    ];
    write_png_rgb8(&paths[0], &warped)?;
    write_png_gray8(&paths[1], &mask_to_gray(&masks.hp_lt_14))?;
    write_png_gray8(&paths[2], &mask_to_gray(&masks.hp_14_21))?;
    write_png_gray8(&paths[3], &mask_to_gray(&masks.hp_gt_21))?;
    write_png_gray8(&paths[4], &mask_to_gray(&masks.union))?;
    write_json(
        &paths[5],
        &AlignmentRecord {
            fit,
            landmark_count: sidecar.scan.len(),
        },
    )?;
    Ok(paths.to_vec())
}

/// Build benchmark masks for every validation image: align scans to photos,
/// classify palette colors into categories, and restrict to manual masks.
pub fn cmd_ldi_prep(cfg: &PipelineConfig, root: &Path, jobs: usize) -> Result<RunManifest> {
    let started = Instant::now();
    cfg.validate()?;
    let layout = Layout::new(root);
    let manifest = load_dataset_manifest(root)?;
    let pool = thread_pool(jobs)?;
    let per_image: Vec<Vec<PathBuf>> = pool.install(|| {
        manifest
            .val
            .par_iter()
            .map(|entry| ldi_prep_for_image(cfg, &layout, entry))
            .collect::<Result<Vec<_>>>()
    })?;
    let written: Vec<PathBuf> = per_image.into_iter().flatten().collect();
    let inputs = vec![file_entry(root, &layout.data_manifest())?];
    finish_run("ldi-prep", cfg, &layout, inputs, written, started)
}

fn load_mask_checked(path: &Path, width: usize, height: usize) -> Result<BinaryMask> {
    let mask = gray_to_mask(&read_png_gray8(path)?);
    if mask.width() != width || mask.height() != height {
        return Err(Error::BadFormat {
            path: path.to_path_buf(),
            detail: format!(
                "mask is {}x{} but the photo frame is {width}x{height}",
                mask.width(),
                mask.height()
            ),
        });
    }
    Ok(mask)
}

/// The comparison rows of the segmentation report, in emission order.
pub const EVAL_SEG_ROWS: [&str; 7] = [
    "bam-vs-manual",
    "bam-vs-hp-lt14",
    "bam-vs-hp-14-21",
    "bam-vs-hp-gt21",
    "bam-vs-hp-union",
    "gradcam-vs-manual",
    "gradcam-vs-hp-union",
];

/// Compare the saliency masks against manual and category references and
/// write the metric table (JSON and aligned text).
pub fn cmd_eval_seg(cfg: &PipelineConfig, root: &Path) -> Result<RunManifest> {
    let started = Instant::now();
    cfg.validate()?;
    let layout = Layout::new(root);
    let manifest = load_dataset_manifest(root)?;
    let size = cfg.synth.image_size;
    let mut rows: Vec<Vec<(BinaryMask, BinaryMask)>> = vec![Vec::new(); EVAL_SEG_ROWS.len()];
    for entry in &manifest.val {
        let sal = layout.saliency_dir(entry.index);
        let ldi = layout.ldi_dir(entry.index);
        let bam = load_mask_checked(&sal.join("bam_mask.png"), size, size)?;
        let gc = load_mask_checked(&sal.join("gradcam_mask.png"), size, size)?;
        let manual = load_mask_checked(&layout.data_dir().join(&entry.mask), size, size)?;
        let hp_lt14 = load_mask_checked(&ldi.join("hp_lt14.png"), size, size)?;
        let hp_14_21 = load_mask_checked(&ldi.join("hp_14_21.png"), size, size)?;
        let hp_gt21 = load_mask_checked(&ldi.join("hp_gt21.png"), size, size)?;
        let hp_union = load_mask_checked(&ldi.join("hp_union.png"), size, size)?;
        rows[0].push((bam.clone(), manual.clone()));
        rows[1].push((bam.clone(), hp_lt14));
        rows[2].push((bam.clone(), hp_14_21));
        rows[3].push((bam.clone(), hp_gt21));
        rows[4].push((bam, hp_union.clone()));
        rows[5].push((gc.clone(), manual));
        rows[6].push((gc, hp_union));
    }
    let reports = EVAL_SEG_ROWS
        .iter()
        .zip(&rows)
        .map(|(name, pairs)| batch_report(name, pairs, AggregationMode::PooledCounts))
        .collect::<Result<Vec<MetricsReport>>>()?;
    write_json(&layout.segmentation_report(), &reports)?;
    write_atomic(
        &layout.segmentation_table(),
        format_table(&reports).as_bytes(),
    )?;
    let inputs = vec![file_entry(root, &layout.data_manifest())?];
    finish_run(
        "eval-seg",
        cfg,
        &layout,
        inputs,
        vec![layout.segmentation_report(), layout.segmentation_table()],
        started,
    )
}

/// Run every stage in order; the returned manifests follow execution order.
pub fn cmd_pipeline(cfg: &PipelineConfig, root: &Path, jobs: usize) -> Result<Vec<RunManifest>> {
    let manifests = vec![
        cmd_synth(cfg, root, jobs)?,
        cmd_train(cfg, root)?,
        cmd_eval_clf(cfg, root)?,
        cmd_bam(cfg, root, jobs)?,
        cmd_ldi_prep(cfg, root, jobs)?,
        cmd_eval_seg(cfg, root)?,
    ];
    Ok(manifests)
}

#[derive(Debug, Parser)]
#[command(
    name = "bamkit",
    version,
    about = "Saliency-guided segmentation pipeline: synthetic data, CNN training, \
             class-activation maps, channel fusion, mixture thresholding, and metric reports"
)]
struct Cli {
    /// JSON config file; built-in defaults are used when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed; overrides the config's generator and training seeds.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads for per-image stages.
    #[arg(long, global = true, value_name = "N", default_value_t = 1)]
    jobs: usize,
    /// Output root directory.
    #[arg(long, global = true, value_name = "DIR", default_value = "out")]
    out: PathBuf,
    /// Mixture components for threshold candidates.
    #[arg(long = "gmm-k", global = true, value_name = "N")]
    gmm_k: Option<usize>,
    /// Binarization threshold for the class-activation baseline.
    #[arg(long = "gradcam-th", global = true, value_name = "F")]
    gradcam_th: Option<f64>,
    /// Minimum connected-component area as a fraction of the mask area.
    #[arg(long = "min-area-frac", global = true, value_name = "F")]
    min_area_frac: Option<f64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate the synthetic dataset (images, masks, validation scans).
    Synth,
    /// Train the classifier on the generated dataset.
    Train,
    /// Evaluate the trained classifier on the validation split.
    EvalClf,
    /// Emit class-activation heatmaps and baseline masks.
    Gradcam,
    /// Emit fused saliency heatmaps, segmentations, and overlays.
    Bam,
    /// Segment one grayscale heatmap against a reference mask.
    Segment {
        /// Grayscale heatmap PNG to segment.
        #[arg(long, value_name = "PATH")]
        heatmap: PathBuf,
        /// Reference mask PNG guiding threshold selection.
        #[arg(long, value_name = "PATH")]
        reference_mask: PathBuf,
    },
    /// Align scans, classify palette colors, and build category masks.
    LdiPrep,
    /// Compare segmentations against references and write metric tables.
    EvalSeg,
    /// Run every stage in order.
    Pipeline,
}

fn resolve_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg: PipelineConfig = match &cli.config {
        Some(path) => read_json(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
        cfg.synth.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(k) = cli.gmm_k {
        cfg.segment.components = k;
    }
    if let Some(t) = cli.gradcam_th {
        cfg.gradcam_threshold = t;
    }
    if let Some(f) = cli.min_area_frac {
        cfg.segment.min_area_fraction = f;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn dispatch(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(cli)?;
    let root = cli.out.as_path();
    let jobs = cli.jobs;
    match &cli.command {
        Command::Synth => cmd_synth(&cfg, root, jobs).map(drop),
        Command::Train => cmd_train(&cfg, root).map(drop),
        Command::EvalClf => cmd_eval_clf(&cfg, root).map(drop),
        Command::Gradcam => cmd_gradcam(&cfg, root, jobs).map(drop),
        Command::Bam => cmd_bam(&cfg, root, jobs).map(drop),
        Command::Segment {
            heatmap,
            reference_mask,
        } => cmd_segment(&cfg, root, heatmap, reference_mask).map(drop),
        Command::LdiPrep => cmd_ldi_prep(&cfg, root, jobs).map(drop),
        Command::EvalSeg => cmd_eval_seg(&cfg, root).map(drop),
        Command::Pipeline => cmd_pipeline(&cfg, root, jobs).map(drop),
    }
}

/// Parse CLI arguments and run the selected subcommand, returning the
/// process exit code (0 success, 2 bad usage, 3 invalid input, 4 numeric
/// failure).
pub fn run_cli() -> i32 {
    let _ = env_logger::Builder::from_env(env_logger::Env::new().filter("BAMKIT_LOG")).try_init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(err) => {
            let code = match err.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = err.print();
            return code;
        }
    };
    match dispatch(&cli) {
        Ok(()) => 0,
        Err(err) => {
            eprintln!("error: {err}");
            err.exit_code()
        }
    }
}

#[cfg(test)]
mod tests;
