use std::fs;

use advlab_core::data::{DatasetSpec, KernelFamily};
use advlab_core::experiment::{
    panel_image, run_experiment, sha256_hex, AttackGrid, CellKey, CellMetrics, Defense, ExperimentConfig, PanelConfig,
    ResultRow, ResultTable, TableFormat, FAILED, RESULTS_CSV, RESULTS_JSON, RESULTS_MD, RUN_MANIFEST, SCHEMA_VERSION,
    TABLE_COLUMNS,
};
use advlab_core::train::TrainConfig;
use advlab_core::{CoreError, Rational};
use advlab_tensor::{DType, Tensor};

fn eps8() -> Rational {
    Rational::new(8, 255).unwrap()
}

fn metrics(psnr: f64, ssim: f64) -> CellMetrics {
    CellMetrics {
        psnr,
        ssim,
        hf_energy_ratio: 1.25,
        grid_peak_score: 0.5,
        color_mixing_score: 0.125,
        n_images: 50,
    }
}

fn tiny_config() -> ExperimentConfig {
    let mut cfg = ExperimentConfig::desk_default();
    cfg.name = "tiny".into();
    cfg.variants = vec!["nafnet".into()];
    cfg.dataset = DatasetSpec {
        n_train: 8,
        n_val: 2,
        n_test: 3,
        height: 16,
        width: 16,
        family: KernelFamily::Gaussian,
        seed: 3,
    };
    cfg.train = TrainConfig {
        steps: 4,
        batch_size: 2,
        val_every: 2,
        ..TrainConfig::default()
    };
    cfg.attacks = vec![AttackGrid {
        kind: "cospgd".into(),
        epsilons: vec![eps8()],
        alpha: Some(0.01),
        iterations: vec![2, 1],
    }];
    cfg.panels = PanelConfig { samples: 2 };
    cfg.eval_batch = 2;
    cfg
}

#[test]
fn cell_keys_round_trip_through_strings_and_panel_names() {
    let keys = [
        CellKey::clean("nafnet", Defense::None),
        CellKey::attacked("intermediate_relu", Defense::Adv, "cospgd", eps8(), 20),
        CellKey::attacked("restormer", Defense::None, "fgsm", Rational::new(4, 255).unwrap(), 1),
    ];
    assert_eq!(keys[0].to_string(), "nafnet__none__clean");
    assert_eq!(keys[1].to_string(), "intermediate_relu__adv__cospgd__eps8-255__it20");
    for k in &keys {
        assert_eq!(&k.to_string().parse::<CellKey>().unwrap(), k);
        let name = k.panel_filename();
        assert!(name.starts_with("panel__") && name.ends_with(".png"));
        assert_eq!(&CellKey::from_panel_filename(&name).unwrap(), k);
    }
    for bad in ["", "nafnet", "nafnet__none", "nafnet__maybe__clean", "a__none__pgd__eps8__it5", "a__none__pgd__eps8-0__it5"] {
        assert!(bad.parse::<CellKey>().is_err(), "{bad}");
    }
    assert!(CellKey::from_panel_filename("nafnet__none__clean.png").is_err());
}

#[test]
fn panel_tiles_samples_into_rows_of_four() {
    let tile = |v: f64| Tensor::<f64>::full(&[3, 4, 5], v);
    let tiles: Vec<Tensor<f64>> = (0..8).map(|i| tile(i as f64 / 8.0)).collect();
    let rows: Vec<[&Tensor<f64>; 4]> = tiles.chunks(4).map(|c| [&c[0], &c[1], &c[2], &c[3]]).collect();
    let p = panel_image(&rows).unwrap();
    assert_eq!(p.shape(), &[3, 8, 20]);
    for r in 0..2 {
        for c in 0..4 {
            let want = (r * 4 + c) as f64 / 8.0;
            for ch in 0..3 {
                assert_eq!(p.data()[ch * 160 + (r * 4 + 1) * 20 + c * 5 + 2], want);
            }
        }
    }
    assert!(panel_image::<f64>(&[]).is_err());
    let odd = Tensor::<f64>::zeros(&[3, 4, 4]);
    assert!(panel_image(&[[&tiles[0], &tiles[1], &odd, &tiles[3]]]).is_err());
}

#[test]
fn table_renders_fixed_precision_and_marks_failures() {
    let table = ResultTable {
        rows: vec![
            ResultRow {
                key: CellKey::clean("nafnet", Defense::None),
                outcome: Ok(metrics(18.4512, 0.61234)),
            },
            ResultRow {
                key: CellKey::attacked("nafnet", Defense::None, "cospgd", eps8(), 5),
                outcome: Ok(metrics(11.3614, 0.32364)),
            },
            ResultRow {
                key: CellKey::attacked("nafnet", Defense::Adv, "cospgd", eps8(), 5),
                outcome: Err("diverged".into()),
            },
        ],
    };
    let csv = table.render(TableFormat::Csv);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], TABLE_COLUMNS.join(","));
    assert_eq!(lines[1], "nafnet,none,clean,0,0,18.45,0.6123,1.2500,0.5000,0.1250,50");
    assert_eq!(lines[2], "nafnet,none,cospgd,8/255,5,11.36,0.3236,1.2500,0.5000,0.1250,50");
    assert_eq!(lines[3], format!("nafnet,adv,cospgd,8/255,5{}", format!(",{FAILED}").repeat(6)));
    assert_eq!(table.failed(), 1);

    let md = table.render(TableFormat::Markdown);
    let md_rows: Vec<Vec<String>> = md
        .lines()
        .skip(2)
        .map(|l| l.trim_matches('|').split('|').map(|c| c.trim().to_string()).collect())
        .collect();
    let csv_rows: Vec<Vec<String>> = lines[1..].iter().map(|l| l.split(',').map(String::from).collect()).collect();
    assert_eq!(md_rows, csv_rows);

    let dir = tempfile::tempdir().unwrap();
    assert!(ResultTable::default().emit(TableFormat::Csv, &dir.path().join("t.csv")).is_err());
    table.emit(TableFormat::Csv, &dir.path().join("sub/t.csv")).unwrap();
    assert_eq!(fs::read_to_string(dir.path().join("sub/t.csv")).unwrap(), csv);
}

#[test]
fn config_survives_toml_and_rejects_bad_grids() {
    let cfg = ExperimentConfig::desk_default();
    cfg.validate().unwrap();
    assert_eq!(ExperimentConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
    assert_eq!(cfg.schema_version, SCHEMA_VERSION);
    assert_eq!(cfg.precision, DType::F64);

    let mutate = |f: &dyn Fn(&mut ExperimentConfig)| {
        let mut c = ExperimentConfig::desk_default();
        f(&mut c);
        c.validate()
    };
    assert!(mutate(&|c| c.schema_version = 2).is_err());
    assert!(mutate(&|c| c.variants.clear()).is_err());
    assert!(matches!(
        mutate(&|c| c.variants.push("unet".into())),
        Err(CoreError::UnknownStrategy { .. })
    ));
    assert!(mutate(&|c| c.dataset.height = 30).is_err());
    assert!(mutate(&|c| c.dataset.n_test = 0).is_err());
    assert!(mutate(&|c| c.train.batch_size = 3).is_err());
    assert!(mutate(&|c| c.eval_batch = 0).is_err());
    assert!(mutate(&|c| c.attacks[0].iterations.push(0)).is_err());
    assert!(mutate(&|c| c.attacks[0].alpha = None).is_err());
    assert!(mutate(&|c| c.attacks[0].kind = "cw".into()).is_err());
    assert!(mutate(&|c| {
        c.attacks[0].kind = "fgsm".into();
        c.attacks[0].alpha = None;
        c.attacks[0].iterations = vec![1];
    })
    .is_ok());
    assert!(mutate(&|c| c.checkpoint_dir = Some("/nonexistent/ckpts".into())).is_err());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bad.toml");
    fs::write(&path, "name = 3").unwrap();
    assert!(matches!(ExperimentConfig::load(&path), Err(CoreError::Format { .. })));
}

#[test]
fn tiny_grid_writes_a_complete_run_directory() {
    let cfg = tiny_config();
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run");
    let out = run_experiment(&cfg, &run).unwrap();

    let t = &out.table;
    assert_eq!(t.rows.len(), 6);
    assert_eq!(t.failed(), 0);
    for d in [Defense::None, Defense::Adv] {
        let clean = t.metrics(&CellKey::clean("nafnet", d)).unwrap();
        assert_eq!(clean.n_images, 3);
        for it in [1, 2] {
            let key = CellKey::attacked("nafnet", d, "cospgd", eps8(), it);
            let m = t.metrics(&key).unwrap();
            assert!(m.psnr.is_finite() && m.psnr < clean.psnr, "{key}: {} vs {}", m.psnr, clean.psnr);
            assert!(run.join("panels").join(key.panel_filename()).is_file());
            assert_eq!(out.per_image[&key.to_string()].len(), 3);
        }
    }
    assert_eq!(out.traces.len(), 4);
    for tr in &out.traces {
        let k: usize = tr.cell.rsplit("__it").next().unwrap().parse().unwrap();
        assert_eq!(tr.loss_trace.len(), k + 1, "{}", tr.cell);
    }

    for f in [RESULTS_CSV, RESULTS_MD, RESULTS_JSON, RUN_MANIFEST, "config.toml", "traces.jsonl", "per_image.csv"] {
        assert!(run.join(f).is_file(), "{f}");
    }
    assert_eq!(fs::read_to_string(run.join(RESULTS_CSV)).unwrap(), t.render(TableFormat::Csv));
    let stored: ResultTable = serde_json::from_str(&fs::read_to_string(run.join(RESULTS_JSON)).unwrap()).unwrap();
    assert_eq!(&stored, t);
    assert_eq!(ExperimentConfig::load(&run.join("config.toml")).unwrap(), cfg);

    let m = &out.manifest;
    assert_eq!(m.failed_cells(), 0);
    assert_eq!(m.cells.len(), 6);
    assert_eq!(m.dataset_sha256, sha256_hex(&fs::read(run.join("data/manifest.json")).unwrap()));
    assert_eq!(m.models.len(), 2);
    for rec in &m.models {
        let bytes = fs::read(run.join(&rec.checkpoint)).unwrap();
        assert_eq!(rec.checkpoint_sha256.as_deref(), Some(sha256_hex(&bytes).as_str()));
        assert!(rec.trained && rec.error.is_none());
        assert!(run.join("logs").join(format!("{}__{}.csv", rec.variant, rec.defense)).is_file());
    }
    let on_disk: serde_json::Value = serde_json::from_str(&fs::read_to_string(run.join(RUN_MANIFEST)).unwrap()).unwrap();
    assert_eq!(on_disk["schema_version"], SCHEMA_VERSION);
    assert_eq!(on_disk["precision"], "f64");

    let mut reuse = cfg.clone();
    reuse.checkpoint_dir = Some(run.join("models"));
    let again = run_experiment(&reuse, &dir.path().join("reuse")).unwrap();
    assert!(again.manifest.models.iter().all(|r| !r.trained));
    assert_eq!(again.table, out.table);
}

#[test]
fn tiny_grid_is_reproducible_in_f32_and_f64() {
    for precision in [DType::F64, DType::F32] {
        let mut cfg = tiny_config();
        cfg.precision = precision;
        cfg.defenses = vec![Defense::None];
        cfg.panels.samples = 0;
        let dir = tempfile::tempdir().unwrap();
        let a = run_experiment(&cfg, &dir.path().join("a")).unwrap();
        let b = run_experiment(&cfg, &dir.path().join("b")).unwrap();
        assert_eq!(
            fs::read(dir.path().join("a").join(RESULTS_CSV)).unwrap(),
            fs::read(dir.path().join("b").join(RESULTS_CSV)).unwrap()
        );
        assert_eq!(a.manifest.dataset_sha256, b.manifest.dataset_sha256);
        assert!(a.manifest.cells.iter().all(|c| c.panel.is_none()));
        assert!(!dir.path().join("a/panels").exists());
    }
}
