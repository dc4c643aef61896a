//! Pretext and downstream objectives.
//!
//! Each loss is built on a [`Tape`] so it can be differentiated; the
//! [`value`] module wraps them for plain matrices.

use std::collections::BTreeMap;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Tape, Var};

/// Standardization guard used by the Barlow Twins cross-correlation.
pub const BARLOW_EPS: f64 = 1e-5;
/// Probability clamp of the mask-prediction cross-entropy.
pub const BCE_EPS: f64 = 1e-7;

/// Objective used for a pair of projection batches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ContrastiveKind {
    Clip,
    BarlowTwins,
    NtXent,
    SimSiam,
}

/// Where the distance loss is measured.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DistanceSpace {
    #[default]
    Latent,
    Projection,
}

/// Component weights and loss hyperparameters; the config-file `loss` section.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretextLossWeights {
    pub reconstruction: f64,
    pub alignment: f64,
    pub noise: f64,
    pub distance: f64,
    pub mask_prediction: f64,
    /// Weight of the masked view inside the reconstruction term.
    pub corrupted_view_weight: f64,
    /// Weight of every other view inside the reconstruction term.
    pub other_view_weight: f64,
    pub temperature: f64,
    pub barlow_lambda: f64,
    pub alignment_loss: ContrastiveKind,
    pub noise_loss: ContrastiveKind,
    pub distance_space: DistanceSpace,
}

impl Default for PretextLossWeights {
    fn default() -> Self {
        Self {
            reconstruction: 1.0,
            alignment: 1.0,
            noise: 1.0,
            distance: 1.0,
            mask_prediction: 1.0,
            corrupted_view_weight: 0.5,
            other_view_weight: 0.25,
            temperature: 0.1,
            barlow_lambda: 5e-3,
            alignment_loss: ContrastiveKind::Clip,
            noise_loss: ContrastiveKind::BarlowTwins,
            distance_space: DistanceSpace::Latent,
        }
    }
}

impl PretextLossWeights {
    pub fn validate(&self) -> Result<()> {
        let weights = [
            self.reconstruction,
            self.alignment,
            self.noise,
            self.distance,
            self.mask_prediction,
            self.corrupted_view_weight,
            self.other_view_weight,
            self.barlow_lambda,
        ];
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::Config(format!("loss weights must be finite and >= 0: {self:?}")));
        }
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(Error::Config("temperature must be positive".into()));
        }
        Ok(())
    }

    pub fn weight(&self, c: LossComponent) -> f64 {
        match c {
            LossComponent::Reconstruction => self.reconstruction,
            LossComponent::Alignment => self.alignment,
            LossComponent::Noise => self.noise,
            LossComponent::Distance => self.distance,
            LossComponent::MaskPrediction => self.mask_prediction,
        }
    }

    pub fn set_weight(&mut self, c: LossComponent, w: f64) {
        match c {
            LossComponent::Reconstruction => self.reconstruction = w,
            LossComponent::Alignment => self.alignment = w,
            LossComponent::Noise => self.noise = w,
            LossComponent::Distance => self.distance = w,
            LossComponent::MaskPrediction => self.mask_prediction = w,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossComponent {
    Reconstruction,
    Alignment,
    Noise,
    Distance,
    MaskPrediction,
}

impl LossComponent {
    pub const ALL: [LossComponent; 5] = [
        LossComponent::Reconstruction,
        LossComponent::Alignment,
        LossComponent::Noise,
        LossComponent::Distance,
        LossComponent::MaskPrediction,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LossComponent::Reconstruction => "reconstruction",
            LossComponent::Alignment => "alignment",
            LossComponent::Noise => "noise",
            LossComponent::Distance => "distance",
            LossComponent::MaskPrediction => "mask_prediction",
        }
    }
}

/// Named component values and their weighted total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct LossBreakdown {
    pub components: BTreeMap<String, f64>,
    pub total: f64,
}

/// Weighted sum of the components whose weight is nonzero.
pub fn combine(parts: &[(LossComponent, f64)], weights: &PretextLossWeights) -> Result<LossBreakdown> {
    let mut out = LossBreakdown::default();
    for &(c, value) in parts {
        if !value.is_finite() {
            return Err(Error::NonFinite {
                component: c.name().to_owned(),
                step: None,
            });
        }
        let w = weights.weight(c);
        if w == 0.0 {
            continue;
        }
        out.components.insert(c.name().to_owned(), value);
        out.total += w * value;
    }
    Ok(out)
}

/// Graph counterpart of [`combine`]; `None` when every part has zero weight.
pub fn combine_on(tape: &mut Tape, parts: &[(LossComponent, Var)], weights: &PretextLossWeights) -> Option<Var> {
    let mut total: Option<Var> = None;
    for &(c, v) in parts {
        let w = weights.weight(c);
        if w == 0.0 {
            continue;
        }
        let term = tape.scale(v, w);
        total = Some(match total {
            Some(t) => tape.add(t, term),
            None => term,
        });
    }
    total
}

fn same_shape(tape: &Tape, a: Var, b: Var, what: &str) -> Result<()> {
    if tape.shape(a) != tape.shape(b) {
        return Err(Error::Shape(format!(
            "{what}: {:?} vs {:?}",
            tape.shape(a),
            tape.shape(b)
        )));
    }
    Ok(())
}

fn nonzero_rows(tape: &Tape, v: Var, what: &str) -> Result<()> {
    let x = tape.value(v);
    if let Some(i) = x.outer_iter().position(|r| r.dot(&r) == 0.0) {
        return Err(Error::Data(format!("{what}: row {i} has zero norm")));
    }
    Ok(())
}

fn min_rows(tape: &Tape, v: Var, n: usize, what: &str) -> Result<()> {
    if tape.shape(v).0 < n {
        return Err(Error::Shape(format!(
            "{what} needs at least {n} rows, got {}",
            tape.shape(v).0
        )));
    }
    Ok(())
}

/// Mean over all entries of the squared difference.
pub fn mse(tape: &mut Tape, a: Var, b: Var) -> Result<Var> {
    same_shape(tape, a, b, "mse")?;
    let d = tape.sub(a, b);
    let sq = tape.square(d);
    Ok(tape.mean(sq))
}

fn view_mses(tape: &mut Tape, x: &[Var], rec: &[Var]) -> Result<Vec<Var>> {
    if x.is_empty() || x.len() != rec.len() {
        return Err(Error::Shape(format!(
            "{} inputs vs {} reconstructions",
            x.len(),
            rec.len()
        )));
    }
    x.iter().zip(rec).map(|(&a, &b)| mse(tape, a, b)).collect()
}

/// `(1/V)·Σ MSE(x_v, x'_v)`.
pub fn reconstruction_loss(tape: &mut Tape, x: &[Var], rec: &[Var]) -> Result<Var> {
    let terms = view_mses(tape, x, rec)?;
    let n = terms.len() as f64;
    let mut acc = terms[0];
    for &t in &terms[1..] {
        acc = tape.add(acc, t);
    }
    Ok(tape.scale(acc, 1.0 / n))
}

/// `(1/V)·(w_corrupted·MSE_corrupted + w_other·Σ_{v≠corrupted} MSE_v)`.
pub fn weighted_reconstruction_loss(
    tape: &mut Tape,
    x: &[Var],
    rec: &[Var],
    corrupted_view: usize,
    w_corrupted: f64,
    w_other: f64,
) -> Result<Var> {
    if corrupted_view >= x.len() {
        return Err(Error::Shape(format!(
            "corrupted view {corrupted_view} out of range for {} views",
            x.len()
        )));
    }
    let terms = view_mses(tape, x, rec)?;
    let n = terms.len() as f64;
    let mut acc: Option<Var> = None;
    for (v, &t) in terms.iter().enumerate() {
        let w = if v == corrupted_view { w_corrupted } else { w_other };
        let term = tape.scale(t, w);
        acc = Some(match acc {
            Some(a) => tape.add(a, term),
            None => term,
        });
    }
    Ok(tape.scale(acc.expect("at least one view"), 1.0 / n))
}

/// Symmetric cross-entropy over cosine similarities / τ with matching rows as targets.
pub fn clip_alignment_loss(tape: &mut Tape, za: Var, zb: Var, temperature: f64) -> Result<Var> {
    same_shape(tape, za, zb, "clip alignment")?;
    min_rows(tape, za, 1, "clip alignment")?;
    nonzero_rows(tape, za, "clip alignment")?;
    nonzero_rows(tape, zb, "clip alignment")?;
    let n = tape.shape(za).0;
    let targets: Vec<usize> = (0..n).collect();
    let a = tape.normalize_rows(za);
    let b = tape.normalize_rows(zb);
    let bt = tape.transpose(b);
    let sim = tape.matmul(a, bt);
    let logits = tape.scale(sim, 1.0 / temperature);
    let forward = tape.softmax_cross_entropy(logits, &targets);
    let logits_t = tape.transpose(logits);
    let backward = tape.softmax_cross_entropy(logits_t, &targets);
    let both = tape.add(forward, backward);
    Ok(tape.scale(both, 0.5))
}

/// `Σ_i (1 − C_ii)² + λ·Σ_{i≠j} C_ij²` with `C` the cross-correlation of the
/// batch-standardized projections.
pub fn barlow_twins_loss(tape: &mut Tape, z: Var, z_noisy: Var, lambda: f64) -> Result<Var> {
    same_shape(tape, z, z_noisy, "barlow twins")?;
    min_rows(tape, z, 2, "barlow twins")?;
    let (n, p) = tape.shape(z);
    let a = tape.standardize_cols(z, BARLOW_EPS);
    let b = tape.standardize_cols(z_noisy, BARLOW_EPS);
    let at = tape.transpose(a);
    let cross = tape.matmul(at, b);
    let c = tape.scale(cross, 1.0 / n as f64);
    let minus_identity = Array2::from_shape_fn((p, p), |(i, j)| if i == j { -1.0 } else { 0.0 });
    let off = tape.add_const(c, &minus_identity);
    let sq = tape.square(off);
    let weights = Array2::from_shape_fn((p, p), |(i, j)| if i == j { 1.0 } else { lambda });
    let weighted = tape.mul_const(sq, weights);
    Ok(tape.sum(weighted))
}

/// Normalized-temperature cross-entropy over the `2n` stacked rows; row `i`
/// and row `i + n` are positives and self-similarity is excluded.
pub fn nt_xent_loss(tape: &mut Tape, z: Var, z_noisy: Var, temperature: f64) -> Result<Var> {
    same_shape(tape, z, z_noisy, "nt-xent")?;
    min_rows(tape, z, 2, "nt-xent")?;
    nonzero_rows(tape, z, "nt-xent")?;
    nonzero_rows(tape, z_noisy, "nt-xent")?;
    let n = tape.shape(z).0;
    let stacked = tape.vcat(&[z, z_noisy]);
    let u = tape.normalize_rows(stacked);
    let ut = tape.transpose(u);
    let sim = tape.matmul(u, ut);
    let logits = tape.scale(sim, 1.0 / temperature);
    // exp(-1e30 - max) underflows to exactly 0
    let self_mask = Array2::from_shape_fn((2 * n, 2 * n), |(i, j)| if i == j { -1e30 } else { 0.0 });
    let masked = tape.add_const(logits, &self_mask);
    let targets: Vec<usize> = (0..2 * n).map(|i| (i + n) % (2 * n)).collect();
    Ok(tape.softmax_cross_entropy(masked, &targets))
}

fn mean_cosine(tape: &mut Tape, a: Var, b: Var) -> Var {
    let an = tape.normalize_rows(a);
    let bn = tape.normalize_rows(b);
    let prod = tape.mul(an, bn);
    let cos = tape.row_sum(prod);
    tape.mean(cos)
}

/// `½·[−cos(p_a, h_b) − cos(p_b, h_a)]` averaged over rows. Targets are detached.
pub fn simsiam_loss(tape: &mut Tape, p_a: Var, h_b: Var, p_b: Var, h_a: Var) -> Result<Var> {
    for (p, h) in [(p_a, h_b), (p_b, h_a)] {
        same_shape(tape, p, h, "simsiam")?;
        nonzero_rows(tape, p, "simsiam prediction")?;
        nonzero_rows(tape, h, "simsiam target")?;
    }
    let h_b = tape.detach(h_b);
    let h_a = tape.detach(h_a);
    let c1 = mean_cosine(tape, p_a, h_b);
    let c2 = mean_cosine(tape, p_b, h_a);
    let sum = tape.add(c1, c2);
    Ok(tape.scale(sum, -0.5))
}

/// `Σ_{u<v} MSE(h_u, h_v)`; zero for a single view.
pub fn distance_loss(tape: &mut Tape, hs: &[Var]) -> Result<Var> {
    let first = *hs
        .first()
        .ok_or_else(|| Error::Shape("distance loss needs at least one batch".into()))?;
    let mut acc: Option<Var> = None;
    for u in 0..hs.len() {
        for v in u + 1..hs.len() {
            let term = mse(tape, hs[u], hs[v])?;
            acc = Some(match acc {
                Some(a) => tape.add(a, term),
                None => term,
            });
        }
    }
    Ok(match acc {
        Some(a) => a,
        None => {
            let zero = tape.scale(first, 0.0);
            tape.sum(zero)
        }
    })
}

/// Mean per-subset binary cross-entropy of the mask logits.
pub fn mask_prediction_loss(tape: &mut Tape, logits: Var, targets: &Array2<f64>) -> Result<Var> {
    if tape.shape(logits) != targets.dim() {
        return Err(Error::Shape(format!(
            "mask logits {:?} vs targets {:?}",
            tape.shape(logits),
            targets.dim()
        )));
    }
    Ok(tape.bce_with_logits(logits, targets, BCE_EPS))
}

/// Mean softmax cross-entropy against class indices.
pub fn classification_loss(tape: &mut Tape, logits: Var, labels: &[usize]) -> Result<Var> {
    let (n, c) = tape.shape(logits);
    if n != labels.len() {
        return Err(Error::Shape(format!("{n} logit rows for {} labels", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::Data(format!("label {bad} outside [0, {c})")));
    }
    Ok(tape.softmax_cross_entropy(logits, labels))
}

/// The losses evaluated on plain matrices.
pub mod value {
    use super::*;

    fn eval(inputs: &[&Array2<f64>], f: impl FnOnce(&mut Tape, &[Var]) -> Result<Var>) -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|x| tape.constant((*x).clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.scalar(out))
    }

    pub fn reconstruction(x: &[Array2<f64>], rec: &[Array2<f64>]) -> Result<f64> {
        let all: Vec<&Array2<f64>> = x.iter().chain(rec).collect();
        let v = x.len();
        if rec.len() != v {
            return Err(Error::Shape(format!("{v} inputs vs {} reconstructions", rec.len())));
        }
        eval(&all, |t, vars| reconstruction_loss(t, &vars[..v], &vars[v..]))
    }

    pub fn weighted_reconstruction(
        x: &[Array2<f64>],
        rec: &[Array2<f64>],
        corrupted_view: usize,
        w_corrupted: f64,
        w_other: f64,
    ) -> Result<f64> {
        let all: Vec<&Array2<f64>> = x.iter().chain(rec).collect();
        let v = x.len();
        if rec.len() != v {
            return Err(Error::Shape(format!("{v} inputs vs {} reconstructions", rec.len())));
        }
        eval(&all, |t, vars| {
            weighted_reconstruction_loss(t, &vars[..v], &vars[v..], corrupted_view, w_corrupted, w_other)
        })
    }

    pub fn clip_alignment(za: &Array2<f64>, zb: &Array2<f64>, temperature: f64) -> Result<f64> {
        eval(&[za, zb], |t, v| clip_alignment_loss(t, v[0], v[1], temperature))
    }

    pub fn barlow_twins(z: &Array2<f64>, z_noisy: &Array2<f64>, lambda: f64) -> Result<f64> {
        eval(&[z, z_noisy], |t, v| barlow_twins_loss(t, v[0], v[1], lambda))
    }

    pub fn nt_xent(z: &Array2<f64>, z_noisy: &Array2<f64>, temperature: f64) -> Result<f64> {
        eval(&[z, z_noisy], |t, v| nt_xent_loss(t, v[0], v[1], temperature))
    }

    pub fn simsiam(p_a: &Array2<f64>, h_b: &Array2<f64>, p_b: &Array2<f64>, h_a: &Array2<f64>) -> Result<f64> {
        eval(&[p_a, h_b, p_b, h_a], |t, v| simsiam_loss(t, v[0], v[1], v[2], v[3]))
    }

    pub fn distance(hs: &[Array2<f64>]) -> Result<f64> {
        let refs: Vec<&Array2<f64>> = hs.iter().collect();
        eval(&refs, |t, v| distance_loss(t, v))
    }

    pub fn mask_prediction(logits: &Array2<f64>, targets: &Array2<f64>) -> Result<f64> {
        eval(&[logits], |t, v| mask_prediction_loss(t, v[0], targets))
    }

    pub fn classification(logits: &Array2<f64>, labels: &[usize]) -> Result<f64> {
        eval(&[logits], |t, v| classification_loss(t, v[0], labels))
    }
}
