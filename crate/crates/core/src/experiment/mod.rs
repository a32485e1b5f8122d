//! Config-driven experiment grid: train variants with and without the
//! adversarial defense, evaluate clean and attacked restorations, and write
//! tables, traces, panels and a provenance manifest.

mod cell;
mod config;
mod panel;
mod table;

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use advlab_tensor::{DType, Real, Tensor};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};

pub use cell::{AttackCell, CellKey};
pub use config::{checkpoint_name, ArchTemplate, AttackGrid, Defense, ExperimentConfig, PanelConfig, SCHEMA_VERSION};
pub use panel::{panel_image, save_reconstruction_panel, PANEL_COLUMNS};
pub use table::{CellMetrics, ResultRow, ResultTable, TableFormat, FAILED, TABLE_COLUMNS};

use crate::attacks::{attack_registry, AttackConfig, AttackResult};
use crate::data::{save_dataset, stack_pairs, Dataset, ImagePair, MANIFEST_FILE};
use crate::error::{io_err, CoreError, Result};
use crate::metrics::{evaluate_image, ImageMetrics, Summary};
use crate::nets::{build_model, Model};
use crate::train::{train_loop, TrainOptions};

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

fn sha256_file(path: &Path) -> Result<String> {
    Ok(sha256_hex(&fs::read(path).map_err(io_err(path))?))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    fs::write(path, contents).map_err(io_err(path))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelRecord {
    pub variant: String,
    pub defense: Defense,
    pub checkpoint: PathBuf,
    pub checkpoint_sha256: Option<String>,
    pub trained: bool,
    pub best_step: Option<usize>,
    pub best_val_psnr: Option<f64>,
    pub clipped_steps: Option<usize>,
    pub error: Option<String>,
    /// Wall time of training (or loading) in seconds.
    #[serde(default)]
    pub train_seconds: f64,
    /// Wall time of clean and attacked evaluation in seconds.
    #[serde(default)]
    pub eval_seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellRecord {
    pub key: String,
    pub status: String,
    pub error: Option<String>,
    pub checkpoint_sha256: Option<String>,
    pub dataset_sha256: String,
    pub panel: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: u32,
    pub name: String,
    pub tool_version: String,
    pub precision: String,
    pub model_seed: u64,
    pub data_seed: u64,
    pub train_seed: u64,
    pub config: String,
    pub dataset_sha256: String,
    pub models: Vec<ModelRecord>,
    pub cells: Vec<CellRecord>,
    pub started_at: String,
    pub finished_at: String,
}

impl RunManifest {
    pub fn failed_cells(&self) -> usize {
        self.cells.iter().filter(|c| c.status != "ok").count()
    }
}

/// Loss traces of one attack cell averaged over the test split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellTrace {
    pub cell: String,
    pub loss_trace: Vec<f64>,
    pub objective_trace: Vec<f64>,
    pub zero_grad_fraction: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub table: ResultTable,
    pub manifest: RunManifest,
    pub run_dir: PathBuf,
    /// Per-image metrics keyed by cell key.
    pub per_image: BTreeMap<String, Vec<ImageMetrics>>,
    pub traces: Vec<CellTrace>,
}

pub const RESULTS_CSV: &str = "results.csv";
pub const RESULTS_MD: &str = "results.md";
pub const RESULTS_JSON: &str = "results.json";
pub const RUN_MANIFEST: &str = "manifest.json";

/// Runs the whole grid into `run_dir` at the configured precision.
pub fn run_experiment(cfg: &ExperimentConfig, run_dir: &Path) -> Result<ExperimentOutcome> {
    match cfg.precision {
        DType::F32 => run_typed::<f32>(cfg, run_dir),
        DType::F64 => run_typed::<f64>(cfg, run_dir),
    }
}

struct Accumulator {
    table: ResultTable,
    cells: Vec<CellRecord>,
    per_image: BTreeMap<String, Vec<ImageMetrics>>,
    traces: Vec<CellTrace>,
    dataset_sha256: String,
}

impl Accumulator {
    fn record(
        &mut self,
        key: CellKey,
        outcome: Result<Vec<ImageMetrics>>,
        checkpoint_sha256: Option<String>,
        panel: Option<PathBuf>,
    ) {
        let name = key.to_string();
        let (row, error) = match outcome {
            Ok(images) => {
                let mean = |f: fn(&ImageMetrics) -> f64| Summary::of(images.iter().map(f)).mean;
                let m = CellMetrics {
                    psnr: mean(|m| m.psnr),
                    ssim: mean(|m| m.ssim),
                    hf_energy_ratio: mean(|m| m.hf_energy_ratio),
                    grid_peak_score: mean(|m| m.grid_peak_score),
                    color_mixing_score: mean(|m| m.color_mixing_score),
                    n_images: images.len(),
                };
                self.per_image.insert(name.clone(), images);
                (Ok(m), None)
            }
            Err(e) => {
                log::error!("cell {name} failed: {e}");
                (Err(e.to_string()), Some(e.to_string()))
            }
        };
        self.cells.push(CellRecord {
            key: name,
            status: if error.is_none() { "ok" } else { "failed" }.into(),
            error,
            checkpoint_sha256,
            dataset_sha256: self.dataset_sha256.clone(),
            panel: if row.is_ok() { panel } else { None },
        });
        self.table.rows.push(ResultRow { key, outcome: row });
    }
}

fn restore_all<T: Real>(model: &Model<T>, inputs: &[Tensor<T>]) -> Result<Vec<Tensor<f64>>> {
    let mut out = Vec::with_capacity(inputs.len());
    for y in inputs {
        let pred = model.predict(y)?;
        let n = pred.dims4()?.0;
        for i in 0..n {
            let s = pred.slice0(i, 1)?;
            let shape = s.shape()[1..].to_vec();
            out.push(s.reshape(&shape)?.cast());
        }
    }
    Ok(out)
}

fn score(test: &[ImagePair], restored: &[Tensor<f64>]) -> Result<Vec<ImageMetrics>> {
    test.iter()
        .zip(restored)
        .map(|(p, r)| evaluate_image(&p.id, r, &p.x))
        .collect()
}

fn mean_trace(parts: &[(usize, Vec<f64>)]) -> Vec<f64> {
    let total: usize = parts.iter().map(|p| p.0).sum();
    let len = parts.first().map_or(0, |p| p.1.len());
    (0..len)
        .map(|i| parts.iter().map(|(n, t)| *n as f64 * t[i]).sum::<f64>() / total.max(1) as f64)
        .collect()
}

fn run_typed<T: Real>(cfg: &ExperimentConfig, run_dir: &Path) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let started_at = chrono::Utc::now().to_rfc3339();
    fs::create_dir_all(run_dir).map_err(io_err(run_dir))?;
    let config_text = cfg.to_toml();
    write(&run_dir.join("config.toml"), &config_text)?;

    let data = Dataset::generate(&cfg.dataset)?;
    let data_dir = run_dir.join("data");
    save_dataset(&data_dir, &data, Some(&cfg.dataset))?;
    let dataset_sha256 = sha256_file(&data_dir.join(MANIFEST_FILE))?;
    log::info!(
        "dataset: {} train, {} val, {} test pairs ({})",
        data.train.len(),
        data.val.len(),
        data.test.len(),
        &dataset_sha256[..12]
    );

    let test_batches: Vec<(Tensor<T>, Tensor<T>)> = data
        .test
        .chunks(cfg.eval_batch)
        .map(|c| stack_pairs::<T>(&c.iter().collect::<Vec<_>>()))
        .collect::<Result<_>>()?;
    let test_inputs: Vec<Tensor<T>> = test_batches.iter().map(|b| b.0.clone()).collect();

    let mut acc = Accumulator {
        table: ResultTable::default(),
        cells: Vec::new(),
        per_image: BTreeMap::new(),
        traces: Vec::new(),
        dataset_sha256: dataset_sha256.clone(),
    };
    let mut models = Vec::new();
    let attacks = attack_registry::<T>();
    let k_panel = cfg.panels.samples.min(data.test.len());

    for variant_kind in &cfg.variants {
        for &defense in &cfg.defenses {
            let ckpt_rel = PathBuf::from("models").join(checkpoint_name(variant_kind, defense));
            let mut record = ModelRecord {
                variant: variant_kind.clone(),
                defense,
                checkpoint: ckpt_rel.clone(),
                checkpoint_sha256: None,
                trained: cfg.checkpoint_dir.is_none(),
                best_step: None,
                best_val_psnr: None,
                clipped_steps: None,
                error: None,
                train_seconds: 0.0,
                eval_seconds: 0.0,
            };
            let timer = Instant::now();
            let model = obtain_model::<T>(cfg, variant_kind, defense, &data, run_dir, &ckpt_rel, &mut record);
            let model = match model {
                Ok(m) => {
                    record.checkpoint_sha256 = Some(sha256_file(&run_dir.join(&ckpt_rel))?);
                    m
                }
                Err(e) => {
                    log::error!("{variant_kind}/{defense}: {e}");
                    record.error = Some(e.to_string());
                    let msg = format!("model unavailable: {e}");
                    acc.record(CellKey::clean(variant_kind, defense), Err(fail(&msg)), None, None);
                    for g in &cfg.attacks {
                        for &eps in &g.epsilons {
                            for &it in &g.iterations {
                                let key = CellKey::attacked(variant_kind, defense, &g.kind, eps, it);
                                acc.record(key, Err(fail(&msg)), None, None);
                            }
                        }
                    }
                    models.push(record);
                    continue;
                }
            };
            record.train_seconds = timer.elapsed().as_secs_f64();
            let ckpt_sha = record.checkpoint_sha256.clone();
            let timer = Instant::now();

            let clean = restore_all(&model, &test_inputs);
            let clean_key = CellKey::clean(variant_kind, defense);
            let clean_restored = match clean {
                Ok(r) => {
                    acc.record(clean_key, score(&data.test, &r), ckpt_sha.clone(), None);
                    Some(r)
                }
                Err(e) => {
                    acc.record(clean_key, Err(e), ckpt_sha.clone(), None);
                    None
                }
            };

            for grid in &cfg.attacks {
                for &eps in &grid.epsilons {
                    let mut iters = grid.iterations.clone();
                    iters.sort_unstable();
                    iters.dedup();
                    let acfg = AttackConfig {
                        kind: grid.kind.clone(),
                        epsilon: eps.value(),
                        alpha: grid.alpha.unwrap_or(eps.value()),
                        iterations: *iters.last().expect("validated non-empty"),
                        seed: cfg.seed,
                        random_start: false,
                    };
                    let acfg = if grid.kind == "fgsm" {
                        AttackConfig::fgsm(eps.value())
                    } else {
                        acfg
                    };
                    let runs: Result<Vec<Vec<AttackResult<T>>>> = (|| {
                        let attack = attacks.get(&grid.kind)?;
                        test_batches
                            .iter()
                            .map(|(y, x)| attack.run_schedule(&model, y, x, &acfg, &iters))
                            .collect()
                    })();
                    for (ci, &it) in iters.iter().enumerate() {
                        let key = CellKey::attacked(variant_kind, defense, &grid.kind, eps, it);
                        let outcome = match &runs {
                            Err(e) => Err(fail(&e.to_string())),
                            Ok(per_batch) => {
                                let adv_inputs: Vec<Tensor<T>> = per_batch.iter().map(|b| b[ci].y_adv.clone()).collect();
                                restore_all(&model, &adv_inputs).and_then(|restored| {
                                    let sizes: Vec<usize> = test_batches.iter().map(|b| b.0.shape()[0]).collect();
                                    let trace = |pick: fn(&AttackResult<T>) -> &Vec<f64>| {
                                        mean_trace(
                                            &sizes
                                                .iter()
                                                .zip(per_batch)
                                                .map(|(&n, b)| (n, pick(&b[ci]).clone()))
                                                .collect::<Vec<_>>(),
                                        )
                                    };
                                    acc.traces.push(CellTrace {
                                        cell: key.to_string(),
                                        loss_trace: trace(|r| &r.loss_trace),
                                        objective_trace: trace(|r| &r.objective_trace),
                                        zero_grad_fraction: trace(|r| &r.grad_sign_stats),
                                    });
                                    let panel = match (&clean_restored, k_panel) {
                                        (Some(clean), k) if k > 0 => {
                                            let adv_f64: Vec<Tensor<f64>> = adv_inputs
                                                .iter()
                                                .flat_map(|b| split_batch(b))
                                                .take(k)
                                                .collect();
                                            let rows: Vec<[&Tensor<f64>; 4]> = (0..k)
                                                .map(|i| [&data.test[i].x, &adv_f64[i], &clean[i], &restored[i]])
                                                .collect();
                                            let rel = PathBuf::from("panels").join(key.panel_filename());
                                            save_reconstruction_panel(&rows, &run_dir.join(&rel))?;
                                            Some(rel)
                                        }
                                        _ => None,
                                    };
                                    Ok((score(&data.test, &restored)?, panel))
                                })
                            }
                        };
                        match outcome {
                            Ok((images, panel)) => acc.record(key, Ok(images), ckpt_sha.clone(), panel),
                            Err(e) => acc.record(key, Err(e), ckpt_sha.clone(), None),
                        }
                    }
                }
            }
            record.eval_seconds = timer.elapsed().as_secs_f64();
            models.push(record);
        }
    }

    acc.table.emit(TableFormat::Csv, &run_dir.join(RESULTS_CSV))?;
    acc.table.emit(TableFormat::Markdown, &run_dir.join(RESULTS_MD))?;
    write(
        &run_dir.join(RESULTS_JSON),
        serde_json::to_string_pretty(&acc.table).expect("serializable table"),
    )?;
    let mut traces = String::new();
    for t in &acc.traces {
        let _ = writeln!(traces, "{}", serde_json::to_string(t).expect("serializable trace"));
    }
    write(&run_dir.join("traces.jsonl"), traces)?;
    write(&run_dir.join("per_image.csv"), per_image_csv(&acc.per_image))?;

    let manifest = RunManifest {
        schema_version: SCHEMA_VERSION,
        name: cfg.name.clone(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        precision: cfg.precision.to_string(),
        model_seed: cfg.seed,
        data_seed: cfg.dataset.seed,
        train_seed: cfg.train.seed,
        config: config_text,
        dataset_sha256,
        models,
        cells: acc.cells,
        started_at,
        finished_at: chrono::Utc::now().to_rfc3339(),
    };
    write(
        &run_dir.join(RUN_MANIFEST),
        serde_json::to_string_pretty(&manifest).expect("serializable manifest"),
    )?;
    Ok(ExperimentOutcome {
        table: acc.table,
        manifest,
        run_dir: run_dir.to_path_buf(),
        per_image: acc.per_image,
        traces: acc.traces,
    })
}

fn fail(msg: &str) -> CoreError {
    crate::error::invalid("cell", msg)
}

fn split_batch<T: Real>(b: &Tensor<T>) -> Vec<Tensor<f64>> {
    let n = b.shape()[0];
    let shape = b.shape()[1..].to_vec();
    (0..n)
        .map(|i| b.slice0(i, 1).and_then(|s| s.reshape(&shape)).expect("in range").cast())
        .collect()
}

fn per_image_csv(per_image: &BTreeMap<String, Vec<ImageMetrics>>) -> String {
    let mut out = String::from("cell,id,psnr,ssim,hf_energy_ratio,grid_peak_score,color_mixing_score\n");
    for (cell, rows) in per_image {
        for r in rows {
            let _ = writeln!(
                out,
                "{cell},{},{:.6},{:.6},{:.6},{:.6},{:.6}",
                r.id, r.psnr, r.ssim, r.hf_energy_ratio, r.grid_peak_score, r.color_mixing_score
            );
        }
    }
    out
}

/// Trains (or loads) one model and writes its checkpoint and training log.
fn obtain_model<T: Real>(
    cfg: &ExperimentConfig,
    kind: &str,
    defense: Defense,
    data: &Dataset,
    run_dir: &Path,
    ckpt_rel: &Path,
    record: &mut ModelRecord,
) -> Result<Model<T>> {
    let ckpt = run_dir.join(ckpt_rel);
    if let Some(dir) = &cfg.checkpoint_dir {
        let model = Model::<T>::load(&dir.join(checkpoint_name(kind, defense)))?;
        model.save(&ckpt)?;
        return Ok(model);
    }
    let variant = cfg.arch.variant(kind);
    let model = build_model::<T>(&variant, cfg.seed)?;
    let mut tcfg = cfg.train.clone();
    tcfg.adversarial = defense == Defense::Adv;
    tcfg.checkpoint_every = 0;
    log::info!("training {kind}/{defense} for {} steps", tcfg.steps);
    let out = train_loop(model, &data.train, &data.val, &tcfg, &TrainOptions::default())?;
    record.best_step = Some(out.best_step);
    record.best_val_psnr = out.best_val_psnr;
    record.clipped_steps = Some(out.log.clipped_steps());
    write(
        &run_dir.join("logs").join(format!("{kind}__{defense}.csv")),
        out.log.to_csv(),
    )?;
    let meta = json!({
        "defense": defense,
        "best_step": out.best_step,
        "best_val_psnr": out.best_val_psnr,
        "train": tcfg,
        "optimizer": "adamw",
    });
    out.model.to_archive(Some(meta)).save(&ckpt)?;
    Ok(out.model)
}
