use std::path::Path;

use anyhow::{bail, Context};
use omics_ssl::config::{DataConfig, RunConfig};
use omics_ssl::data::{generate_synthetic, subsample_labels, write_dataset, Prepared, SynthConfig};
use omics_ssl::evaluation::{
    compare_aggregation, compute_metrics, export_embeddings, mean_accuracy, run_ablation, softmax_rows,
    write_ablation_csv, write_aggregation_csv, write_results_csv, Drop,
};
use omics_ssl::model::{init_model, Aggregation, Checkpoint};
use omics_ssl::training::{evaluate_pretext, finetune, predict_logits, pretrain, run_semi_supervised};
use serde_json::{json, Value};

use crate::output::{ensure_dir, out_dir, write_json, write_jsonl, write_run_files};
use crate::{CliError, Command, SplitName};

pub fn run(command: Command) -> Result<(), CliError> {
    match command {
        Command::Synth {
            out,
            samples,
            classes,
            dims,
            latent,
            sigma,
            seed,
            force,
        } => {
            let synth = SynthConfig {
                n_samples: samples,
                n_classes: classes,
                dims,
                shared_latent_dim: latent,
                noise_sigma: sigma,
                seed,
                ..SynthConfig::default()
            };
            synth.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            ensure_dir(&out, force)?;
            synth_cmd(&out, synth)?;
            Ok(())
        }
        Command::Pretrain {
            config,
            out,
            seed,
            epochs,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            if let Some(e) = epochs {
                cfg.train.pretext_epochs = e;
            }
            let dir = out_dir(&out, Some(&cfg))?;
            pretrain_cmd(&dir, &cfg)?;
            Ok(())
        }
        Command::Finetune {
            config,
            checkpoint,
            label_fraction,
            freeze,
            no_freeze,
            seed,
            epochs,
            out,
        } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let mut cfg = config_or_stored(config.as_deref(), &ckpt)?;
            if let Some(f) = label_fraction {
                cfg.train.label_fraction = f;
            }
            if no_freeze {
                cfg.train.freeze_encoders = false;
            } else if freeze {
                cfg.train.freeze_encoders = true;
            }
            if let Some(s) = seed {
                cfg.train.seed = s;
            }
            if let Some(e) = epochs {
                cfg.train.downstream_epochs = e;
            }
            cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let dir = out_dir(&out, Some(&cfg))?;
            finetune_cmd(&dir, &cfg, &ckpt)?;
            Ok(())
        }
        Command::Protocol {
            config,
            fractions,
            seeds,
            arms,
            out,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            override_grid(&mut cfg, fractions, seeds)?;
            if let Some(a) = arms {
                cfg.protocol.arms = a;
            }
            cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
            let dir = out_dir(&out, Some(&cfg))?;
            protocol_cmd(&dir, &cfg)?;
            Ok(())
        }
        Command::Ablate {
            config,
            drop,
            fractions,
            seeds,
            out,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            override_grid(&mut cfg, fractions, seeds)?;
            let drops = drop.unwrap_or_else(|| Drop::ALL.to_vec());
            let dir = out_dir(&out, Some(&cfg))?;
            ablate_cmd(&dir, &cfg, &drops)?;
            Ok(())
        }
        Command::Aggregate {
            config,
            methods,
            fractions,
            seeds,
            out,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            override_grid(&mut cfg, fractions, seeds)?;
            let methods = methods.unwrap_or_else(|| Aggregation::ALL.to_vec());
            let dir = out_dir(&out, Some(&cfg))?;
            aggregate_cmd(&dir, &cfg, &methods)?;
            Ok(())
        }
        Command::Export {
            checkpoint,
            config,
            split,
            out,
        } => {
            let ckpt = load_checkpoint(&checkpoint)?;
            let cfg = config_or_stored(config.as_deref(), &ckpt)?;
            let dir = out_dir(&out, Some(&cfg))?;
            export_cmd(&dir, &cfg, &ckpt, split)?;
            Ok(())
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    if !path.is_file() {
        return Err(CliError::Usage(format!("config file {} not found", path.display())));
    }
    RunConfig::load(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, CliError> {
    if !path.is_file() {
        return Err(CliError::Usage(format!("checkpoint {} not found", path.display())));
    }
    Ok(Checkpoint::read(path)?)
}

/// The explicit config, else the run config embedded in the checkpoint.
fn config_or_stored(path: Option<&Path>, ckpt: &Checkpoint) -> Result<RunConfig, CliError> {
    if path.is_some() {
        return load_config(path);
    }
    let stored = ckpt
        .run_config
        .clone()
        .ok_or_else(|| CliError::Usage("checkpoint has no stored run config; pass --config".into()))?;
    let cfg: RunConfig = serde_json::from_value(stored)
        .map_err(|e| CliError::Usage(format!("stored run config is invalid: {e}")))?;
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    Ok(cfg)
}

fn override_grid(cfg: &mut RunConfig, fractions: Option<Vec<f64>>, seeds: Option<Vec<u64>>) -> Result<(), CliError> {
    if let Some(f) = fractions {
        cfg.protocol.fractions = f;
    }
    if let Some(s) = seeds {
        cfg.protocol.seeds = s;
    }
    cfg.protocol.validate().map_err(|e| CliError::Usage(e.to_string()))
}

fn prepare(cfg: &RunConfig) -> anyhow::Result<Prepared> {
    let prepared = cfg.prepare().context("loading data")?;
    log::info!(
        "{} samples, {} views {:?}, {} classes; split {}/{}/{}",
        prepared.dataset.n_samples(),
        prepared.dataset.n_views(),
        prepared.dataset.dims(),
        prepared.dataset.n_classes(),
        prepared.split.train.len(),
        prepared.split.val.len(),
        prepared.split.test.len()
    );
    Ok(prepared)
}

fn check_compatible(ckpt: &Checkpoint, prepared: &Prepared) -> anyhow::Result<()> {
    let ds = &prepared.dataset;
    if ckpt.config.input_dims != ds.dims() || ckpt.config.n_classes != ds.n_classes() {
        bail!(
            "checkpoint expects views {:?} and {} classes, data has {:?} and {}",
            ckpt.config.input_dims,
            ckpt.config.n_classes,
            ds.dims(),
            ds.n_classes()
        );
    }
    Ok(())
}

fn config_value(cfg: &RunConfig) -> anyhow::Result<Value> {
    Ok(serde_json::to_value(cfg)?)
}

fn synth_cmd(dir: &Path, synth: SynthConfig) -> anyhow::Result<()> {
    let ds = generate_synthetic(&synth)?;
    let manifest = write_dataset(dir, &ds)?;
    write_json(&dir.join("synth.json"), &synth)?;
    // A run config pointing at the written manifest, usable as --config directly.
    let cfg = RunConfig {
        data: DataConfig {
            manifest: Some("manifest.json".into()),
            synth: None,
            ..DataConfig::default()
        },
        ..RunConfig::default()
    };
    let path = dir.join("config.json");
    std::fs::write(&path, cfg.to_json_pretty()?).with_context(|| format!("writing {}", path.display()))?;
    log::info!("wrote {} samples to {}", ds.n_samples(), manifest.display());
    Ok(())
}

fn pretrain_cmd(dir: &Path, cfg: &RunConfig) -> anyhow::Result<()> {
    let prepared = prepare(cfg)?;
    let exp = cfg.experiment(&prepared.dataset)?;
    let seed = cfg.train.seed;
    let init = init_model(&exp.model, seed)?;
    let out = pretrain(&init, &prepared, &exp.corruption, &exp.loss, &exp.train)?;
    let val = evaluate_pretext(&out.params, &prepared, &prepared.split.val, &exp.corruption, &exp.loss, &exp.train)?;
    Checkpoint::from_params(&out.params, Some(config_value(cfg)?)).write(dir.join("checkpoint.json"))?;
    write_jsonl(&dir.join("pretrain_log.jsonl"), &out.log)?;
    let metrics = json!({
        "epochs": out.log.len(),
        "final": out.log.last(),
        "validation": val,
        "n_parameters": out.params.n_parameters(),
        "encoder_checksum": out.params.checksum("encoders")?,
    });
    write_run_files(dir, cfg, metrics, json!(seed))?;
    log::info!("pretrained {} epochs into {}", out.log.len(), dir.display());
    Ok(())
}

fn finetune_cmd(dir: &Path, cfg: &RunConfig, ckpt: &Checkpoint) -> anyhow::Result<()> {
    let prepared = prepare(cfg)?;
    check_compatible(ckpt, &prepared)?;
    let ds = &prepared.dataset;
    let split = &prepared.split;
    let seed = cfg.train.seed;
    let stored = ckpt.to_params()?;
    let params = stored.with_classifier(stored.config.architecture.aggregation, seed)?;
    let labelled = subsample_labels(split, &ds.labels, cfg.train.label_fraction, seed)?;
    let before = params.checksum("encoders")?;
    let out = finetune(&params, ds, &labelled, &split.val, &cfg.train)?;
    let after = out.params.checksum("encoders")?;
    if cfg.train.freeze_encoders && before != after {
        bail!("frozen encoders changed during fine-tuning");
    }
    let probs = softmax_rows(&predict_logits(&out.params, ds, &split.test)?);
    let report = compute_metrics(&probs, &ds.labels_at(&split.test))?;
    Checkpoint::from_params(&out.params, Some(config_value(cfg)?)).write(dir.join("checkpoint.json"))?;
    write_jsonl(&dir.join("finetune_log.jsonl"), &out.log)?;
    let metrics = json!({
        "test": report,
        "label_fraction": cfg.train.label_fraction,
        "n_labelled": labelled.len(),
        "freeze_encoders": cfg.train.freeze_encoders,
        "encoder_checksum_before": before,
        "encoder_checksum_after": after,
    });
    write_run_files(dir, cfg, metrics, json!(seed))?;
    log::info!("test accuracy {:.4} with {} labels", report.accuracy, labelled.len());
    Ok(())
}

fn protocol_cmd(dir: &Path, cfg: &RunConfig) -> anyhow::Result<()> {
    let prepared = prepare(cfg)?;
    let exp = cfg.experiment(&prepared.dataset)?;
    let out = run_semi_supervised(&prepared, &exp)?;
    write_results_csv(dir.join("results.csv"), &out.rows)?;
    for m in &out.models {
        if !m.pretrain_log.is_empty() {
            write_jsonl(&dir.join(format!("pretrain_log_seed{}.jsonl", m.seed)), &m.pretrain_log)?;
        }
    }
    let summary: Vec<Value> = mean_accuracy(out.rows.iter().map(|r| ((r.arm, r.fraction), r.metrics.accuracy)))
        .into_iter()
        .map(|((arm, fraction), acc)| json!({"arm": arm, "fraction": fraction, "mean_accuracy": acc}))
        .collect();
    write_run_files(
        dir,
        cfg,
        json!({"summary": summary, "rows": out.rows}),
        json!(cfg.protocol.seeds),
    )?;
    Ok(())
}

fn ablate_cmd(dir: &Path, cfg: &RunConfig, drops: &[Drop]) -> anyhow::Result<()> {
    let prepared = prepare(cfg)?;
    let exp = cfg.experiment(&prepared.dataset)?;
    let rows = run_ablation(&prepared, &exp, drops)?;
    write_ablation_csv(dir.join("ablation.csv"), &rows)?;
    let summary: Vec<Value> = mean_accuracy(rows.iter().map(|r| ((r.variant.clone(), r.fraction), r.metrics.accuracy)))
        .into_iter()
        .map(|((variant, fraction), acc)| json!({"variant": variant, "fraction": fraction, "mean_accuracy": acc}))
        .collect();
    write_run_files(dir, cfg, json!({"summary": summary, "rows": rows}), json!(cfg.protocol.seeds))?;
    Ok(())
}

fn aggregate_cmd(dir: &Path, cfg: &RunConfig, methods: &[Aggregation]) -> anyhow::Result<()> {
    let prepared = prepare(cfg)?;
    let exp = cfg.experiment(&prepared.dataset)?;
    let rows = compare_aggregation(&prepared, &exp, methods)?;
    write_aggregation_csv(dir.join("aggregation.csv"), &rows)?;
    let summary: Vec<Value> = mean_accuracy(rows.iter().map(|r| ((r.aggregation, r.fraction), r.metrics.accuracy)))
        .into_iter()
        .map(|((aggregation, fraction), acc)| json!({"aggregation": aggregation, "fraction": fraction, "mean_accuracy": acc}))
        .collect();
    write_run_files(dir, cfg, json!({"summary": summary, "rows": rows}), json!(cfg.protocol.seeds))?;
    Ok(())
}

fn export_cmd(dir: &Path, cfg: &RunConfig, ckpt: &Checkpoint, split: SplitName) -> anyhow::Result<()> {
    let prepared = prepare(cfg)?;
    check_compatible(ckpt, &prepared)?;
    let params = ckpt.to_params()?;
    let s = &prepared.split;
    let indices: Vec<usize> = match split {
        SplitName::Train => s.train.clone(),
        SplitName::Val => s.val.clone(),
        SplitName::Test => s.test.clone(),
        SplitName::All => (0..prepared.dataset.n_samples()).collect(),
    };
    export_embeddings(&params, &prepared.dataset, &indices, dir.join("embeddings.csv"))?;
    let metrics = json!({
        "split": format!("{split:?}").to_lowercase(),
        "n_samples": indices.len(),
        "width": params.config.architecture.aggregation.output_width(params.config.n_views(), params.config.architecture.latent_dim),
    });
    write_run_files(dir, cfg, metrics, json!(ckpt.seed))?;
    Ok(())
}
