use std::path::Path;

use ptdebias::checkpoint::{load_checkpoint, save_backbone};
use ptdebias::config::{BackboneSpec, ExperimentConfig};
use ptdebias::experiment::{load_encoder, run_eval, run_sweep, run_training, swap_backbone, Benchmark, SweepGrid, REPORT_FILE};
use ptdebias::io::read_json;
use ptdebias::plot::emit_plots;
use ptdebias::report::BiasReport;
use ptdebias::RunnerError;
use ptdebias_core::train::Method;

fn tiny(out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig {
        backbone: BackboneSpec::Toy {
            layers: 1,
            hidden: 16,
            heads: 2,
            seed: 3,
        },
        prompt_length: 3,
        epochs: 2,
        max_len: 32,
        seeds: vec![0, 1],
        output_dir: Some(out.to_path_buf()),
        ..ExperimentConfig::default()
    };
    cfg.toy.train_size = 64;
    cfg.toy.dev_size = 24;
    cfg
}

#[test]
fn training_writes_report_and_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let run = run_training(&cfg).unwrap();
    let r = &run.report;
    assert_eq!(r.seeds.len(), 2);
    assert_eq!(run.checkpoints.len(), 2);
    assert_eq!(r.backbone.digest_before, r.backbone.digest_after);
    for key in ["avg_abs_diff", "frac>0.1", "frac>0.3"] {
        let mean = (r.seeds[0].bias[key] + r.seeds[1].bias[key]) / 2.0;
        assert!((r.mean_bias[key] - mean).abs() < 1e-12, "{key}");
    }
    for key in ["pearson", "spearman", "dev_spearman"] {
        assert!(r.mean_task.contains_key(key), "{key}");
    }
    assert!(r.seeds.iter().all(|s| s.series.len() <= cfg.epochs && s.series.iter().all(|p| p.bias.is_some())));
    let on_disk: BiasReport = read_json(&run.run_dir.join(REPORT_FILE)).unwrap();
    assert_eq!(&on_disk, r);
}

#[test]
fn same_config_gives_byte_identical_reports() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let mut ca = tiny(a.path());
    ca.seeds = vec![4];
    let mut cb = ca.clone();
    cb.output_dir = Some(b.path().to_path_buf());
    let ra = run_training(&ca).unwrap();
    let rb = run_training(&cb).unwrap();
    let bytes = |r: &ptdebias::experiment::TrainingRun| {
        let mut v: BiasReport = read_json(&r.run_dir.join(REPORT_FILE)).unwrap();
        v.config.as_mut().unwrap().output_dir = None;
        serde_json::to_vec(&v).unwrap()
    };
    assert_eq!(bytes(&ra), bytes(&rb));
    for f in ["prompt.safetensors", "head.safetensors", "manifest.json"] {
        assert_eq!(
            std::fs::read(ra.checkpoints[0].join(f)).unwrap(),
            std::fs::read(rb.checkpoints[0].join(f)).unwrap(),
            "{f}"
        );
    }
}

#[test]
fn checkpoint_reload_reproduces_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.seeds = vec![0];
    let run = run_training(&cfg).unwrap();
    let report = run_eval(&run.checkpoints[0], Benchmark::BiasStsb, &cfg).unwrap();
    assert_eq!(report.seeds[0].bias, run.report.seeds[0].bias);
    assert_eq!(report.seeds[0].task, run.report.seeds[0].task);
    let (_, ckpt) = load_checkpoint(&run.checkpoints[0]).unwrap();
    assert_eq!(ckpt.manifest.method, Method::Co2pt);
    assert!(matches!(
        run_eval(&run.checkpoints[0], Benchmark::BiasNli, &cfg),
        Err(RunnerError::TaskMismatch { .. })
    ));
}

#[test]
fn sweep_yields_one_report_per_point() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.seeds = vec![0];
    cfg.epochs = 1;
    cfg.toy.train_size = 32;
    let grid = SweepGrid {
        temperature: vec![0.005, 0.05, 0.5],
        ..SweepGrid::default()
    };
    let out = run_sweep(&cfg, &grid).unwrap();
    assert_eq!(out.reports.len(), 3);
    assert_eq!(out.table.lines().count(), 2 + 3);
    assert!(out.table_path.exists());
    assert!(matches!(run_sweep(&cfg, &SweepGrid::default()), Err(RunnerError::EmptyGrid)));
}

#[test]
fn backbone_swap_checks_dimensions() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let same = load_encoder(&BackboneSpec::Toy {
        layers: 1,
        hidden: 16,
        heads: 2,
        seed: 9,
    })
    .unwrap();
    let other = load_encoder(&BackboneSpec::Toy {
        layers: 1,
        hidden: 32,
        heads: 2,
        seed: 9,
    })
    .unwrap();
    save_backbone(&dir.path().join("b16"), &same).unwrap();
    save_backbone(&dir.path().join("b32"), &other).unwrap();
    let swapped = swap_backbone(&cfg, &dir.path().join("b16")).unwrap();
    assert!(matches!(swapped.backbone, BackboneSpec::Checkpoint { .. }));
    let mut rest = swapped.clone();
    rest.backbone = cfg.backbone.clone();
    assert_eq!(rest, cfg);
    assert_ne!(swapped.hash(), cfg.hash());
    assert!(matches!(
        swap_backbone(&cfg, &dir.path().join("b32")),
        Err(RunnerError::IncompatibleBackbone(_))
    ));
}

#[test]
fn plots_overlay_reports() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = tiny(dir.path());
    cfg.seeds = vec![0];
    let a = run_training(&cfg).unwrap().report;
    cfg.method = Method::Pt;
    let b = run_training(&cfg).unwrap().report;
    let files = emit_plots(&[a.clone(), b], &dir.path().join("plots")).unwrap();
    assert_eq!(files.len(), 2);
    let svg = std::fs::read_to_string(&files[0]).unwrap();
    assert!(svg.contains(">co2pt</text>") && svg.contains(">pt</text>"));
    let single = emit_plots(std::slice::from_ref(&a), &dir.path().join("one")).unwrap();
    assert!(single[0].file_name().unwrap().to_string_lossy().starts_with(&a.config_hash[..12]));
    let mut empty = a;
    empty.seeds[0].series.clear();
    assert!(matches!(emit_plots(&[empty], dir.path()), Err(RunnerError::MissingSeries)));
}
