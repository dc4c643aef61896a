use std::collections::BTreeMap;
use std::time::Instant;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{EarlyStop, TrainConfig};
use crate::corruption::{corrupt, mask_target, sample_plan, CorruptionConfig, MaskPlan, MaskRecord, Resample};
use crate::data::{Prepared, SubsetPartition};
use crate::error::{Error, Result};
use crate::graph::Var;
use crate::losses::{
    self, combine, combine_on, ContrastiveKind, DistanceSpace, LossBreakdown, LossComponent,
    PretextLossWeights,
};
use crate::model::{Forward, ModelParameters};
use crate::optim::Optimizer;
use crate::seed;

/// One epoch of the pretext log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean of each enabled component over the epoch's batches.
    pub components: BTreeMap<String, f64>,
    pub total: f64,
    pub val_total: Option<f64>,
    pub wall_ms: u64,
}

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub params: ModelParameters,
    pub log: Vec<EpochRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MaskedView {
    pub view: usize,
    pub record: MaskRecord,
}

/// Inputs of one pretext step.
#[derive(Debug, Clone, PartialEq)]
pub struct PretextBatch {
    pub clean: Vec<Array2<f64>>,
    /// Corrupted copy of each view for the noise objective; for the masked
    /// view this is its encoder input.
    pub noisy: Vec<Option<Array2<f64>>>,
    pub masked: Option<MaskedView>,
}

/// Corrupts `masked` with its plan and, when `with_noise`, every other view
/// with a freshly drawn plan.
pub fn build_pretext_batch<R: Rng + ?Sized>(
    clean: Vec<Array2<f64>>,
    masked: Option<(usize, &MaskPlan)>,
    partitions: &[SubsetPartition],
    corruption: &CorruptionConfig,
    with_noise: bool,
    rng: &mut R,
) -> Result<PretextBatch> {
    let mut noisy = vec![None; clean.len()];
    let mut masked_view = None;
    if let Some((v, plan)) = masked {
        let (x, record) = corrupt(
            &clean[v],
            &partitions[v],
            plan.method,
            &plan.subsets,
            corruption.gaussian_sigma,
            rng,
        )?;
        noisy[v] = Some(x);
        masked_view = Some(MaskedView { view: v, record });
    }
    if with_noise {
        for v in 0..clean.len() {
            if noisy[v].is_some() {
                continue;
            }
            let plan = sample_plan(corruption, &partitions[v], rng);
            let (x, _) = corrupt(
                &clean[v],
                &partitions[v],
                plan.method,
                &plan.subsets,
                corruption.gaussian_sigma,
                rng,
            )?;
            noisy[v] = Some(x);
        }
    }
    Ok(PretextBatch {
        clean,
        noisy,
        masked: masked_view,
    })
}

fn pair_loss(
    f: &mut Forward,
    kind: ContrastiveKind,
    a: Var,
    b: Var,
    weights: &PretextLossWeights,
) -> Result<Var> {
    match kind {
        ContrastiveKind::Clip => losses::clip_alignment_loss(&mut f.tape, a, b, weights.temperature),
        ContrastiveKind::BarlowTwins => losses::barlow_twins_loss(&mut f.tape, a, b, weights.barlow_lambda),
        ContrastiveKind::NtXent => losses::nt_xent_loss(&mut f.tape, a, b, weights.temperature),
        ContrastiveKind::SimSiam => {
            let pa = f.predict(a)?;
            let pb = f.predict(b)?;
            losses::simsiam_loss(&mut f.tape, pa, b, pb, a)
        }
    }
}

fn sum_vars(f: &mut Forward, vars: &[Var]) -> Option<Var> {
    let mut acc: Option<Var> = None;
    for &v in vars {
        acc = Some(match acc {
            Some(a) => f.tape.add(a, v),
            None => v,
        });
    }
    acc
}

/// Records every enabled pretext component of `batch` on `f`.
///
/// Alignment and distance need two views and are skipped otherwise; the
/// noise term needs noisy copies and mask prediction a masked view.
pub fn pretext_losses(
    f: &mut Forward,
    batch: &PretextBatch,
    weights: &PretextLossWeights,
) -> Result<Vec<(LossComponent, Var)>> {
    let n_views = batch.clean.len();
    let masked = batch.masked.as_ref().map(|m| m.view);
    let clean: Vec<Var> = batch.clean.iter().map(|x| f.constant(x.clone())).collect();
    let noisy: Vec<Option<Var>> = batch
        .noisy
        .iter()
        .map(|x| x.as_ref().map(|x| f.constant(x.clone())))
        .collect();

    let mut h = Vec::with_capacity(n_views);
    for v in 0..n_views {
        let input = if masked == Some(v) {
            noisy[v].expect("masked view has a corrupted copy")
        } else {
            clean[v]
        };
        h.push(f.encode(v, input)?);
    }

    let use_align = weights.alignment > 0.0 && n_views >= 2;
    let use_noise = weights.noise > 0.0 && noisy.iter().all(Option::is_some);
    let use_dist = weights.distance > 0.0 && n_views >= 2;
    let need_z = use_align || use_noise || (use_dist && weights.distance_space == DistanceSpace::Projection);
    let mut z = Vec::new();
    if need_z {
        for (v, &hv) in h.iter().enumerate() {
            z.push(f.project(v, hv)?);
        }
    }

    let mut parts = Vec::new();
    if weights.reconstruction > 0.0 {
        let mut per_source = Vec::with_capacity(n_views);
        for (u, &hu) in h.iter().enumerate() {
            let rec = f.decode(u, hu)?;
            per_source.push(match masked {
                Some(mv) => losses::weighted_reconstruction_loss(
                    &mut f.tape,
                    &clean,
                    &rec,
                    mv,
                    weights.corrupted_view_weight,
                    weights.other_view_weight,
                )?,
                None => losses::reconstruction_loss(&mut f.tape, &clean, &rec)?,
            });
        }
        let total = sum_vars(f, &per_source).expect("at least one view");
        parts.push((LossComponent::Reconstruction, f.tape.scale(total, 1.0 / n_views as f64)));
    }
    if use_align {
        let mut terms = Vec::new();
        for u in 0..n_views {
            for v in u + 1..n_views {
                terms.push(pair_loss(f, weights.alignment_loss, z[u], z[v], weights)?);
            }
        }
        parts.push((LossComponent::Alignment, sum_vars(f, &terms).expect("two views")));
    }
    if use_noise {
        let mut terms = Vec::new();
        for v in 0..n_views {
            let (zc, zn) = if masked == Some(v) {
                let hc = f.encode(v, clean[v])?;
                (f.project(v, hc)?, z[v])
            } else {
                let hn = f.encode(v, noisy[v].expect("checked above"))?;
                (z[v], f.project(v, hn)?)
            };
            terms.push(pair_loss(f, weights.noise_loss, zc, zn, weights)?);
        }
        parts.push((LossComponent::Noise, sum_vars(f, &terms).expect("one view")));
    }
    if use_dist {
        let space = match weights.distance_space {
            DistanceSpace::Latent => &h,
            DistanceSpace::Projection => &z,
        };
        let d = losses::distance_loss(&mut f.tape, space)?;
        parts.push((LossComponent::Distance, d));
    }
    if let Some(m) = &batch.masked {
        if weights.mask_prediction > 0.0 && f.params().config.mask_subsets[m.view].is_some() {
            let logits = f.predict_mask(m.view, h[m.view])?;
            let target = mask_target(&m.record);
            let rows = batch.clean[m.view].nrows();
            let targets = Array2::from_shape_fn((rows, target.len()), |(_, j)| target[j]);
            let l = losses::mask_prediction_loss(&mut f.tape, logits, &targets)?;
            parts.push((LossComponent::MaskPrediction, l));
        }
    }
    Ok(parts)
}

fn check_finite(f: &Forward, parts: &[(LossComponent, Var)], step: Option<usize>) -> Result<Vec<(LossComponent, f64)>> {
    parts
        .iter()
        .map(|&(c, v)| {
            let value = f.tape.scalar(v);
            if value.is_finite() {
                Ok((c, value))
            } else {
                Err(Error::NonFinite {
                    component: c.name().to_owned(),
                    step,
                })
            }
        })
        .collect()
}

struct Accumulator {
    sums: BTreeMap<LossComponent, f64>,
    batches: usize,
}

impl Accumulator {
    fn new() -> Self {
        Self {
            sums: BTreeMap::new(),
            batches: 0,
        }
    }

    fn add(&mut self, values: &[(LossComponent, f64)]) {
        for &(c, v) in values {
            *self.sums.entry(c).or_insert(0.0) += v;
        }
        self.batches += 1;
    }

    fn finish(&self, weights: &PretextLossWeights) -> Result<Option<LossBreakdown>> {
        if self.batches == 0 {
            return Ok(None);
        }
        let means: Vec<(LossComponent, f64)> = self
            .sums
            .iter()
            .map(|(&c, &s)| (c, s / self.batches as f64))
            .collect();
        combine(&means, weights).map(Some)
    }
}

fn partitions(prepared: &Prepared) -> Vec<SubsetPartition> {
    (0..prepared.dataset.n_views())
        .map(|v| prepared.dataset.effective_partition(v))
        .collect()
}

fn masking_enabled(corruption: &CorruptionConfig) -> bool {
    corruption.enabled && !corruption.target_views.is_empty()
}

/// Pretext loss of the model on `indices`, in batches, with corruption drawn
/// from a fixed stream so repeated calls are comparable.
pub fn evaluate_pretext(
    params: &ModelParameters,
    prepared: &Prepared,
    indices: &[usize],
    corruption: &CorruptionConfig,
    weights: &PretextLossWeights,
    cfg: &TrainConfig,
) -> Result<Option<LossBreakdown>> {
    let ds = &prepared.dataset;
    let parts_of = partitions(prepared);
    let mut rng = seed::rng(cfg.seed, "pretrain:validation", &[]);
    let plans: Vec<(usize, MaskPlan)> = if masking_enabled(corruption) {
        corruption
            .target_views
            .iter()
            .map(|&v| (v, sample_plan(corruption, &parts_of[v], &mut rng)))
            .collect()
    } else {
        Vec::new()
    };
    let mut acc = Accumulator::new();
    for (b, chunk) in indices.chunks(cfg.batch_size).enumerate() {
        if chunk.len() < 2 {
            continue;
        }
        let masked = (!plans.is_empty()).then(|| {
            let (v, plan) = &plans[b % plans.len()];
            (*v, plan)
        });
        let batch = build_pretext_batch(ds.batch(chunk), masked, &parts_of, corruption, weights.noise > 0.0, &mut rng)?;
        let mut f = Forward::inference(params);
        let parts = pretext_losses(&mut f, &batch, weights)?;
        acc.add(&check_finite(&f, &parts, None)?);
    }
    acc.finish(weights)
}

/// Optimizes the unfrozen parameters on the pretext objective over the
/// training split; the validation split drives early stopping.
pub fn pretrain(
    params: &ModelParameters,
    prepared: &Prepared,
    corruption: &CorruptionConfig,
    weights: &PretextLossWeights,
    cfg: &TrainConfig,
) -> Result<PretrainOutcome> {
    cfg.validate()?;
    weights.validate()?;
    let ds = &prepared.dataset;
    corruption.validate(ds.n_views())?;
    if params.config.input_dims != ds.dims() {
        return Err(Error::Shape(format!(
            "model expects view widths {:?}, dataset has {:?}",
            params.config.input_dims,
            ds.dims()
        )));
    }
    let parts_of = partitions(prepared);
    let train = &prepared.split.train;
    let val = &prepared.split.val;
    let mut params = params.clone();
    let mut opt = Optimizer::new(cfg.optimizer, cfg.learning_rate)?;
    let mut stop = EarlyStop::new(cfg.patience);
    let mut log = Vec::new();
    let mut step = 0usize;

    for epoch in 1..=cfg.pretext_epochs {
        let start = Instant::now();
        let mut rng = seed::rng(cfg.seed, "pretrain", &[epoch as u64]);
        let mut order = train.clone();
        order.shuffle(&mut rng);
        let epoch_plans: BTreeMap<usize, MaskPlan> = if masking_enabled(corruption) {
            corruption
                .target_views
                .iter()
                .map(|&v| (v, sample_plan(corruption, &parts_of[v], &mut rng)))
                .collect()
        } else {
            BTreeMap::new()
        };

        let mut acc = Accumulator::new();
        for chunk in order.chunks(cfg.batch_size) {
            if chunk.len() < 2 {
                continue;
            }
            let plan;
            let masked = if epoch_plans.is_empty() {
                None
            } else {
                let v = *corruption.target_views.choose(&mut rng).expect("non-empty");
                plan = match corruption.resample {
                    Resample::PerEpoch => epoch_plans[&v].clone(),
                    Resample::PerBatch => sample_plan(corruption, &parts_of[v], &mut rng),
                };
                Some((v, &plan))
            };
            let batch = build_pretext_batch(ds.batch(chunk), masked, &parts_of, corruption, weights.noise > 0.0, &mut rng)?;
            let grads = {
                let mut f = Forward::training(&params);
                let parts = pretext_losses(&mut f, &batch, weights)?;
                acc.add(&check_finite(&f, &parts, Some(step))?);
                combine_on(&mut f.tape, &parts, weights).map(|total| f.backward(total))
            };
            if let Some(grads) = grads {
                opt.step(&mut params, &grads);
            }
            step += 1;
        }
        let breakdown = acc.finish(weights)?.ok_or_else(|| {
            Error::Data(format!(
                "training split of {} samples yields no batch of at least 2",
                train.len()
            ))
        })?;
        let val_total = evaluate_pretext(&params, prepared, val, corruption, weights, cfg)?.map(|b| b.total);
        let record = EpochRecord {
            epoch,
            components: breakdown.components,
            total: breakdown.total,
            val_total,
            wall_ms: start.elapsed().as_millis() as u64,
        };
        log::info!(
            "pretext epoch {epoch}: total {:.6} val {:?}",
            record.total,
            record.val_total
        );
        log.push(record);
        if cfg.patience > 0 {
            if let Some(v) = val_total {
                if stop.observe(v, || params.clone()) {
                    log::info!("pretext early stop after epoch {epoch}");
                    break;
                }
            }
        }
    }
    if let Some(best) = stop.into_best() {
        params = best;
    }
    Ok(PretrainOutcome { params, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, prepare, split, SplitFractions, SynthConfig};
    use crate::model::{init_model, Architecture};
    use crate::training::model_config_for;

    fn tiny() -> (Prepared, ModelParameters) {
        let ds = generate_synthetic(&SynthConfig {
            n_samples: 120,
            n_classes: 3,
            dims: vec![8, 6, 4],
            shared_latent_dim: 3,
            seed: 2,
            ..SynthConfig::default()
        })
        .unwrap();
        let s = split(&ds, SplitFractions::default(), 1, true).unwrap();
        let prepared = prepare(&ds, s).unwrap();
        let arch = Architecture {
            encoder_hidden: vec![8],
            latent_dim: 4,
            projection_hidden: 6,
            projection_dim: 4,
            ..Architecture::default()
        };
        let cfg = model_config_for(&prepared.dataset, 3, arch);
        let params = init_model(&cfg, 4).unwrap();
        (prepared, params)
    }

    fn train_cfg(epochs: usize) -> TrainConfig {
        TrainConfig {
            pretext_epochs: epochs,
            batch_size: 16,
            learning_rate: 1e-2,
            patience: 0,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_epochs_or_zero_lr_leave_parameters_unchanged() {
        let (prepared, params) = tiny();
        let c = CorruptionConfig::default();
        let w = PretextLossWeights::default();
        let out = pretrain(&params, &prepared, &c, &w, &train_cfg(0)).unwrap();
        assert_eq!(out.params, params);
        assert!(out.log.is_empty());
        let cfg = TrainConfig {
            learning_rate: 0.0,
            ..train_cfg(2)
        };
        let out = pretrain(&params, &prepared, &c, &w, &cfg).unwrap();
        assert_eq!(out.params, params);
        assert_eq!(out.log.len(), 2);
    }

    #[test]
    fn loss_decreases_and_log_is_consistent() {
        let (prepared, params) = tiny();
        let w = PretextLossWeights::default();
        let out = pretrain(&params, &prepared, &CorruptionConfig::default(), &w, &train_cfg(8)).unwrap();
        let first = &out.log[0];
        let last = out.log.last().unwrap();
        assert!(last.total < first.total, "{} !< {}", last.total, first.total);
        for r in &out.log {
            assert_eq!(r.components.len(), 5);
            let recomputed: f64 = r
                .components
                .iter()
                .map(|(k, v)| {
                    let c = LossComponent::ALL.iter().find(|c| c.name() == k).unwrap();
                    w.weight(*c) * v
                })
                .sum();
            assert!((recomputed - r.total).abs() < 1e-6);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let (prepared, params) = tiny();
        let c = CorruptionConfig::default();
        let w = PretextLossWeights::default();
        let a = pretrain(&params, &prepared, &c, &w, &train_cfg(2)).unwrap();
        let b = pretrain(&params, &prepared, &c, &w, &train_cfg(2)).unwrap();
        assert_eq!(a.params, b.params);
        let strip = |log: &[EpochRecord]| log.iter().map(|r| (r.components.clone(), r.total, r.val_total)).collect::<Vec<_>>();
        assert_eq!(strip(&a.log), strip(&b.log));
    }

    #[test]
    fn zero_weights_drop_components() {
        let (prepared, params) = tiny();
        let w = PretextLossWeights {
            alignment: 0.0,
            mask_prediction: 0.0,
            ..PretextLossWeights::default()
        };
        let out = pretrain(&params, &prepared, &CorruptionConfig::default(), &w, &train_cfg(1)).unwrap();
        let keys: Vec<&String> = out.log[0].components.keys().collect();
        assert_eq!(keys, ["distance", "noise", "reconstruction"]);

        let off = CorruptionConfig {
            enabled: false,
            ..CorruptionConfig::default()
        };
        let out = pretrain(&params, &prepared, &off, &PretextLossWeights::default(), &train_cfg(1)).unwrap();
        assert!(!out.log[0].components.contains_key("mask_prediction"));
    }

    #[test]
    fn single_view_runs_without_pairwise_terms() {
        let ds = generate_synthetic(&SynthConfig {
            n_samples: 60,
            n_classes: 2,
            dims: vec![6],
            shared_latent_dim: 2,
            ..SynthConfig::default()
        })
        .unwrap();
        let s = split(&ds, SplitFractions::default(), 0, true).unwrap();
        let prepared = prepare(&ds, s).unwrap();
        let arch = Architecture {
            encoder_hidden: vec![5],
            latent_dim: 3,
            ..Architecture::default()
        };
        let params = init_model(&model_config_for(&prepared.dataset, 2, arch), 0).unwrap();
        let out = pretrain(&params, &prepared, &CorruptionConfig::default(), &PretextLossWeights::default(), &train_cfg(2)).unwrap();
        let keys: Vec<&String> = out.log[0].components.keys().collect();
        assert_eq!(keys, ["mask_prediction", "noise", "reconstruction"]);
    }

    #[test]
    fn contrastive_variants_train() {
        let (prepared, params) = tiny();
        for (align, noise) in [
            (ContrastiveKind::NtXent, ContrastiveKind::SimSiam),
            (ContrastiveKind::BarlowTwins, ContrastiveKind::Clip),
        ] {
            let w = PretextLossWeights {
                alignment_loss: align,
                noise_loss: noise,
                distance_space: DistanceSpace::Projection,
                ..PretextLossWeights::default()
            };
            let out = pretrain(&params, &prepared, &CorruptionConfig::default(), &w, &train_cfg(1)).unwrap();
            assert!(out.log[0].total.is_finite());
            assert_ne!(out.params, params);
        }
    }

    #[test]
    fn nan_loss_names_component() {
        let (prepared, mut params) = tiny();
        params.components.get_mut("mask_head.0").unwrap().layers[0].weight.fill(f64::NAN);
        let err = pretrain(&params, &prepared, &CorruptionConfig::default(), &PretextLossWeights::default(), &train_cfg(1))
            .unwrap_err();
        match err {
            Error::NonFinite { component, step } => {
                assert_eq!(component, "mask_prediction");
                assert_eq!(step, Some(0));
            }
            other => panic!("unexpected {other}"),
        }
    }
}
