use std::collections::BTreeMap;

use ndarray::Array2;

use super::{Aggregation, ModelParameters};
use crate::error::{Error, Result};
use crate::graph::{Gradients, Tape, Var};

/// Forward passes recorded on a [`Tape`].
///
/// Parameters are bound lazily the first time a component is used. In
/// training mode, unfrozen components become differentiable inputs and
/// frozen ones constants; in inference mode everything is constant.
pub struct Forward<'p> {
    pub tape: Tape,
    params: &'p ModelParameters,
    bound: BTreeMap<String, Vec<(Var, Var)>>,
    training: bool,
}

/// Gradients of bound, unfrozen components: `(d weight, d bias)` per layer.
#[derive(Debug, Default)]
pub struct ParamGrads(pub BTreeMap<String, Vec<(Array2<f64>, Array2<f64>)>>);

impl<'p> Forward<'p> {
    pub fn training(params: &'p ModelParameters) -> Self {
        Self {
            tape: Tape::new(),
            params,
            bound: BTreeMap::new(),
            training: true,
        }
    }

    pub fn inference(params: &'p ModelParameters) -> Self {
        Self {
            training: false,
            ..Self::training(params)
        }
    }

    pub fn params(&self) -> &'p ModelParameters {
        self.params
    }

    pub fn constant(&mut self, x: Array2<f64>) -> Var {
        self.tape.constant(x)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        self.tape.value(v)
    }

    fn bind(&mut self, name: &str) -> Result<Vec<(Var, Var)>> {
        if let Some(vars) = self.bound.get(name) {
            return Ok(vars.clone());
        }
        let component = self.params.component(name)?;
        let trainable = self.training && !component.frozen;
        let vars: Vec<(Var, Var)> = component
            .layers
            .iter()
            .map(|l| {
                if trainable {
                    (self.tape.input(l.weight.clone()), self.tape.input(l.bias.clone()))
                } else {
                    (self.tape.constant(l.weight.clone()), self.tape.constant(l.bias.clone()))
                }
            })
            .collect();
        self.bound.insert(name.to_owned(), vars.clone());
        Ok(vars)
    }

    /// Dense stack; the activation follows every layer except possibly the last.
    fn mlp(&mut self, name: &str, x: Var, activate_last: bool) -> Result<Var> {
        let layers = self.bind(name)?;
        let act = self.params.config.architecture.activation;
        let mut h = x;
        for (i, (w, b)) in layers.iter().enumerate() {
            let y = self.tape.matmul(h, *w);
            h = self.tape.add_row(y, *b);
            if i + 1 < layers.len() || activate_last {
                h = self.tape.activate(h, act);
            }
        }
        Ok(h)
    }

    fn check_view(&self, view: usize) -> Result<()> {
        let n = self.params.config.n_views();
        if view >= n {
            return Err(Error::Shape(format!("view {view} out of range for {n} views")));
        }
        Ok(())
    }

    fn check_width(&self, x: Var, expected: usize, what: &str) -> Result<()> {
        let got = self.tape.shape(x).1;
        if got != expected {
            return Err(Error::Shape(format!("{what}: expected {expected} columns, got {got}")));
        }
        Ok(())
    }

    /// Latent batch (`rows × latent_dim`) of one view.
    pub fn encode(&mut self, view: usize, x: Var) -> Result<Var> {
        self.check_view(view)?;
        let cfg = &self.params.config;
        self.check_width(x, cfg.input_dims[view], &format!("encoder input of view {view}"))?;
        let names = cfg.encoder_components(view);
        let mut h = x;
        let last = names.len() - 1;
        for (i, name) in names.iter().enumerate() {
            h = self.mlp(name, h, i < last)?;
        }
        Ok(h)
    }

    /// Reconstructions of every view from the latent of `source_view`.
    pub fn decode(&mut self, source_view: usize, h: Var) -> Result<Vec<Var>> {
        self.check_view(source_view)?;
        let cfg = &self.params.config;
        self.check_width(h, cfg.latent_dim(), "decoder input")?;
        let name = cfg.decoder_name(source_view);
        let n_views = cfg.n_views();
        let trunk = if self.params.components.contains_key(&name) {
            self.mlp(&name, h, true)?
        } else {
            h
        };
        (0..n_views)
            .map(|u| self.mlp(&format!("{name}.head.{u}"), trunk, false))
            .collect()
    }

    pub fn project(&mut self, view: usize, h: Var) -> Result<Var> {
        self.check_view(view)?;
        self.check_width(h, self.params.config.latent_dim(), "projection input")?;
        let name = self.params.config.projection_name(view);
        self.mlp(&name, h, false)
    }

    /// Predictor head applied to projections (SimSiam-style objectives).
    pub fn predict(&mut self, z: Var) -> Result<Var> {
        self.check_width(z, self.params.config.architecture.projection_dim, "predictor input")?;
        self.mlp("predictor", z, false)
    }

    pub fn predict_mask(&mut self, view: usize, h: Var) -> Result<Var> {
        self.check_view(view)?;
        if self.params.config.mask_subsets[view].is_none() {
            return Err(Error::Config(format!("view {view} has no subset partition")));
        }
        self.check_width(h, self.params.config.latent_dim(), "mask head input")?;
        self.mlp(&format!("mask_head.{view}"), h, false)
    }

    pub fn aggregate(&mut self, latents: &[Var], method: Aggregation) -> Result<Var> {
        aggregate_on(&mut self.tape, latents, method)
    }

    pub fn classify(&mut self, agg: Var) -> Result<Var> {
        let width = self.params.components["classifier"].layers[0].weight.nrows();
        self.check_width(agg, width, "classifier input")?;
        self.mlp("classifier", agg, false)
    }

    pub fn backward(&self, loss: Var) -> ParamGrads {
        let mut grads: Gradients = self.tape.backward(loss);
        let mut out = BTreeMap::new();
        for (name, vars) in &self.bound {
            if !self.training || self.params.components[name].frozen {
                continue;
            }
            let layers: Option<Vec<_>> = vars
                .iter()
                .map(|(w, b)| Some((grads.take(*w)?, grads.take(*b)?)))
                .collect();
            if let Some(layers) = layers {
                out.insert(name.clone(), layers);
            }
        }
        ParamGrads(out)
    }
}

pub fn encode(params: &ModelParameters, view: usize, x: &Array2<f64>) -> Result<Array2<f64>> {
    let mut f = Forward::inference(params);
    let x = f.constant(x.clone());
    let h = f.encode(view, x)?;
    Ok(f.value(h).clone())
}

pub fn decode(params: &ModelParameters, source_view: usize, h: &Array2<f64>) -> Result<Vec<Array2<f64>>> {
    let mut f = Forward::inference(params);
    let h = f.constant(h.clone());
    let outs = f.decode(source_view, h)?;
    Ok(outs.into_iter().map(|o| f.value(o).clone()).collect())
}

pub fn project(params: &ModelParameters, view: usize, h: &Array2<f64>) -> Result<Array2<f64>> {
    let mut f = Forward::inference(params);
    let h = f.constant(h.clone());
    let z = f.project(view, h)?;
    Ok(f.value(z).clone())
}

pub fn predict_mask(params: &ModelParameters, view: usize, h: &Array2<f64>) -> Result<Array2<f64>> {
    let mut f = Forward::inference(params);
    let h = f.constant(h.clone());
    let z = f.predict_mask(view, h)?;
    Ok(f.value(z).clone())
}

fn aggregate_on(tape: &mut Tape, latents: &[Var], method: Aggregation) -> Result<Var> {
    let first = *latents
        .first()
        .ok_or_else(|| Error::Shape("nothing to aggregate".into()))?;
    let (rows, width) = tape.shape(first);
    for &l in &latents[1..] {
        let (r, w) = tape.shape(l);
        if r != rows || (method != Aggregation::Concat && w != width) {
            return Err(Error::Shape(format!(
                "cannot {} latents of shapes {:?} and {:?}",
                method.name(),
                (rows, width),
                (r, w)
            )));
        }
    }
    Ok(match method {
        Aggregation::Concat => tape.hcat(latents),
        Aggregation::Sum | Aggregation::Mean => {
            let mut acc = first;
            for &l in &latents[1..] {
                acc = tape.add(acc, l);
            }
            if method == Aggregation::Mean && latents.len() > 1 {
                acc = tape.scale(acc, 1.0 / latents.len() as f64);
            }
            acc
        }
    })
}

/// Concatenates, averages or sums per-view latent batches.
pub fn aggregate(latents: &[Array2<f64>], method: Aggregation) -> Result<Array2<f64>> {
    let mut tape = Tape::new();
    let vars: Vec<Var> = latents.iter().map(|l| tape.constant(l.clone())).collect();
    let out = aggregate_on(&mut tape, &vars, method)?;
    Ok(tape.value(out).clone())
}

pub fn classify(params: &ModelParameters, agg: &Array2<f64>) -> Result<Array2<f64>> {
    let mut f = Forward::inference(params);
    let a = f.constant(agg.clone());
    let logits = f.classify(a)?;
    Ok(f.value(logits).clone())
}
