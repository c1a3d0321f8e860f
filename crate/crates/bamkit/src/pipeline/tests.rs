use super::*;
use crate::cnn::TrainConfig;
use crate::evaluation::MetricValue;

#[test]
fn write_atomic_replaces_existing_content() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("a/b/artifact.bin");
    write_atomic(&path, b"first").unwrap();
    write_atomic(&path, b"second").unwrap();
    assert_eq!(std::fs::read(&path).unwrap(), b"second");
    assert!(!path.with_file_name(".artifact.bin.tmp").exists());
}

#[test]
fn default_config_validates_and_round_trips() {
    let cfg = PipelineConfig::default();
    cfg.validate().unwrap();
    let text = serde_json::to_string(&cfg).unwrap();
    let back: PipelineConfig = serde_json::from_str(&text).unwrap();
    back.validate().unwrap();
    assert_eq!(serde_json::to_string(&back).unwrap(), text);
}

#[test]
fn partial_config_files_fill_in_defaults() {
    let cfg: PipelineConfig = serde_json::from_str(r#"{"seed": 7, "n_val": 3}"#).unwrap();
    assert_eq!(cfg.seed, 7);
    assert_eq!(cfg.n_val, 3);
    assert_eq!(cfg.n_train, PipelineConfig::default().n_train);
}

#[test]
fn config_validation_catches_inconsistencies() {
    let mut cfg = PipelineConfig::default();
    cfg.model.input_size = 32;
    assert!(cfg.validate().is_err());

    let mut cfg = PipelineConfig::default();
    cfg.gradcam_threshold = 1.5;
    assert!(cfg.validate().is_err());

    let mut cfg = PipelineConfig::default();
    cfg.segment.components = 1;
    assert!(cfg.validate().is_err());

    let mut cfg = PipelineConfig::default();
    cfg.synth.archetypes.truncate(3);
    assert!(cfg.validate().is_err());
}

/// Everything scaled down so a full pipeline run takes seconds: 16px
/// images, two conv layers, a handful of samples, two epochs.
fn tiny_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.n_train = 8;
    cfg.n_val = 4;
    cfg.synth.image_size = 16;
    cfg.synth.radius_range = (0.15, 0.25);
    cfg.synth.area_fraction_range = (0.04, 0.45);
    cfg.model.input_size = 16;
    cfg.model.conv_channels = vec![4, 6];
    cfg.train = TrainConfig {
        epochs: 2,
        batch_size: 4,
        seed: 1,
        target_val_accuracy: None,
        ..TrainConfig::default()
    };
    cfg.validate().unwrap();
    cfg
}

fn manifest_paths(manifest: &RunManifest) -> Vec<&str> {
    manifest.outputs.iter().map(|f| f.path.as_str()).collect()
}

/// Re-hash every file a manifest lists and compare to the recorded hash.
fn verify_manifest(root: &Path, manifest: &RunManifest) {
    for entry in &manifest.outputs {
        let bytes = std::fs::read(root.join(&entry.path)).unwrap();
        assert_eq!(sha256_hex(&bytes), entry.sha256, "hash drift: {}", entry.path);
        assert_eq!(bytes.len() as u64, entry.bytes, "size drift: {}", entry.path);
    }
}

#[test]
fn synth_writes_consistent_manifest_and_is_deterministic() {
    let cfg = tiny_config();
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let a = cmd_synth(&cfg, dir_a.path(), 2).unwrap();
    let b = cmd_synth(&cfg, dir_b.path(), 1).unwrap();
    verify_manifest(dir_a.path(), &a);

    // per-sample files, the dataset manifest, and the resolved config
    assert_eq!(
        a.outputs.len(),
        cfg.n_train * 2 + cfg.n_val * 4 + 2,
        "{:?}",
        manifest_paths(&a)
    );
    // identical content regardless of job count or directory
    let key = |m: &RunManifest| {
        m.outputs
            .iter()
            .map(|f| (f.path.clone(), f.sha256.clone()))
            .collect::<Vec<_>>()
    };
    assert_eq!(key(&a), key(&b));

    let manifest = load_dataset_manifest(dir_a.path()).unwrap();
    assert_eq!(manifest.train.len(), cfg.n_train);
    assert_eq!(manifest.val.len(), cfg.n_val);
    assert!(manifest.val.iter().all(|e| e.scan.is_some()
        && e.landmarks.is_some()
        && e.hp.is_some()));
    assert!(manifest.train.iter().all(|e| e.scan.is_none()));
}

#[test]
fn train_with_zero_epochs_writes_the_initial_checkpoint() {
    let mut cfg = tiny_config();
    cfg.train.epochs = 0;
    let dir = tempfile::tempdir().unwrap();
    cmd_synth(&cfg, dir.path(), 1).unwrap();
    cmd_train(&cfg, dir.path()).unwrap();

    let loaded = Checkpoint::load(&Layout::new(dir.path()).checkpoint_dir()).unwrap();
    let init = Checkpoint::init(cfg.model.clone(), cfg.train.seed).unwrap();
    assert_eq!(loaded.params.len(), init.params.len());
    for (name, tensor) in &init.params {
        assert_eq!(
            tensor.to_f64_vec(),
            loaded.params[name].to_f64_vec(),
            "parameter {name} changed"
        );
    }
    let history: cnn::TrainingHistory =
        read_json(&Layout::new(dir.path()).train_history()).unwrap();
    assert!(history.epochs.is_empty());
}

#[test]
fn segment_command_reports_candidates_for_a_bimodal_heatmap() {
    let cfg = tiny_config();
    let dir = tempfile::tempdir().unwrap();
    // left half dark, right half bright, with mild dithering for spread
    let (h, w) = (24, 24);
    let mut heat = Gray8Image::new(w, h);
    let mut mask = Gray8Image::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let bright = x >= w / 2;
            let base: i32 = if bright { 200 } else { 40 };
            heat.set(y, x, (base + (((x * 7 + y * 3) % 11) as i32) - 5) as u8);
            mask.set(y, x, if bright { 255 } else { 0 });
        }
    }
    let heat_path = dir.path().join("heat.png");
    let mask_path = dir.path().join("ref.png");
    write_png_gray8(&heat_path, &heat).unwrap();
    write_png_gray8(&mask_path, &mask).unwrap();

    let out = dir.path().join("out");
    cmd_segment(&cfg, &out, &heat_path, &mask_path).unwrap();
    let report: ThresholdReport = read_json(&out.join("threshold_report.json")).unwrap();
    assert!(!report.candidates.is_empty());
    assert!(report.chosen_iou > 0.95, "iou {}", report.chosen_iou);
    let segmented = gray_to_mask(&read_png_gray8(&out.join("segmented.png")).unwrap());
    let reference = gray_to_mask(&read_png_gray8(&mask_path).unwrap());
    assert!(crate::segment::iou(&segmented, &reference).unwrap() > 0.95);
}

#[test]
fn segment_with_fallback_handles_degenerate_heatmaps() {
    let seg = SegmentConfig {
        components: 4,
        ..SegmentConfig::default()
    };
    let reference = BinaryMask::zeros(4, 4);

    // constant heatmap: empty mask, empty candidate list, and since the
    // reference is empty too, a perfect-match IOU
    let flat = Heatmap::new(4, 4, vec![0.25; 16]);
    let (mask, report) = segment_with_fallback(&flat, &reference, &seg, 1).unwrap();
    assert_eq!(mask.area(), 0);
    assert!(report.candidates.is_empty());
    assert_eq!(report.chosen_iou, 1.0);

    // three distinct values with K=4: retries with a smaller mixture
    let data: Vec<f64> = (0..16).map(|i| [0.1, 0.5, 0.9][i % 3]).collect();
    let trimodal = Heatmap::new(4, 4, data);
    let (_, report) = segment_with_fallback(&trimodal, &reference, &seg, 1).unwrap();
    assert!(!report.candidates.is_empty());
}

#[test]
fn full_pipeline_produces_consistent_artifacts_and_reports() {
    let cfg = tiny_config();
    let dir = tempfile::tempdir().unwrap();
    let manifests = cmd_pipeline(&cfg, dir.path(), 2).unwrap();
    assert_eq!(
        manifests.iter().map(|m| m.command.as_str()).collect::<Vec<_>>(),
        ["synth", "train", "eval-clf", "bam", "ldi-prep", "eval-seg"]
    );
    for m in &manifests {
        verify_manifest(dir.path(), m);
    }

    // saliency artifacts exist for every validation image
    let layout = Layout::new(dir.path());
    for i in 0..cfg.n_val {
        for file in [
            "gradcam.png",
            "gradcam_mask.png",
            "bam_heatmap.png",
            "bam_mask.png",
            "overlay.png",
            "trace.json",
        ] {
            assert!(layout.saliency_dir(i).join(file).is_file(), "val {i} {file}");
        }
        let record: AlignmentRecord = read_json(&layout.ldi_dir(i).join("alignment.json")).unwrap();
        assert!(record.fit.residual_rms < 1e-6, "val {i} residual");
    }

    let reports: Vec<MetricsReport> = read_json(&layout.segmentation_report()).unwrap();
    assert_eq!(
        reports.iter().map(|r| r.comparison.as_str()).collect::<Vec<_>>(),
        EVAL_SEG_ROWS
    );
    assert!(reports.iter().all(|r| r.images == cfg.n_val));
    for r in &reports {
        if let MetricValue::Defined(acc) = r.primary().metrics.accuracy {
            assert!((0.0..=1.0).contains(&acc));
        }
    }
    let table = std::fs::read_to_string(layout.segmentation_table()).unwrap();
    assert!(table.contains("bam-vs-manual") && table.contains("gradcam-vs-hp-union"));

    // the classifier report parses and covers the validation set
    let clf: crate::classifier::ClassifierReport =
        read_json(&layout.classifier_report()).unwrap();
    assert_eq!(clf.samples, cfg.n_val);
}

#[test]
fn pipeline_reruns_are_bit_identical() {
    let cfg = tiny_config();
    let dir_a = tempfile::tempdir().unwrap();
    let dir_b = tempfile::tempdir().unwrap();
    let a = cmd_pipeline(&cfg, dir_a.path(), 2).unwrap();
    let b = cmd_pipeline(&cfg, dir_b.path(), 1).unwrap();
    let key = |ms: &[RunManifest]| {
        ms.iter()
            .flat_map(|m| m.outputs.iter().map(|f| (f.path.clone(), f.sha256.clone())))
            .collect::<Vec<_>>()
    };
    assert_eq!(key(&a), key(&b));
}

#[test]
fn commands_fail_cleanly_without_upstream_artifacts() {
    let cfg = tiny_config();
    let dir = tempfile::tempdir().unwrap();
    // no dataset yet
    let err = cmd_train(&cfg, dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), 3);
    let msg = err.to_string();
    assert!(msg.contains("manifest.json"), "message was: {msg}");

    // dataset but no checkpoint
    cmd_synth(&cfg, dir.path(), 1).unwrap();
    let err = cmd_eval_clf(&cfg, dir.path()).unwrap_err();
    assert_eq!(err.exit_code(), 3);
}
