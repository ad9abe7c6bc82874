//! Central finite-difference verification of the analytic gradients.

use rand::seq::IndexedRandom;
use rand::Rng;

use super::step::{compute_gradients, TrainBatch};
use super::TrainableSet;
use crate::error::Result;
use crate::model::PadModel;

#[derive(Debug, Clone)]
pub struct CoordinateCheck {
    pub tensor: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_error: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub coords: Vec<CoordinateCheck>,
}

impl GradCheckReport {
    pub fn max_rel_error(&self) -> f64 {
        self.coords.iter().map(|c| c.rel_error).fold(0.0, f64::max)
    }

    pub fn worst(&self) -> Option<&CoordinateCheck> {
        self.coords.iter().max_by(|a, b| a.rel_error.total_cmp(&b.rel_error))
    }
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares the analytic mean-loss gradient with central differences of
/// step `h` at `samples` coordinates drawn uniformly from the trainable
/// tensors. Dropout is disabled.
pub fn check_gradients<R: Rng + ?Sized>(
    model: &PadModel<f64>,
    batch: &TrainBatch<f64>,
    trainable: &TrainableSet,
    samples: usize,
    h: f64,
    floor: f64,
    rng: &mut R,
) -> Result<GradCheckReport> {
    let (_, grads) = compute_gradients(model, batch, trainable, None)?;
    let analytic: Vec<(String, Vec<f64>)> = grads
        .tensors()
        .into_iter()
        .filter(|(name, _)| trainable.is_trainable(name))
        .map(|(name, t)| (name, t.iter().copied().collect()))
        .collect();
    let candidates: Vec<(usize, usize)> = analytic
        .iter()
        .enumerate()
        .flat_map(|(ti, (_, g))| (0..g.len()).map(move |i| (ti, i)))
        .collect();

    let mut coords = Vec::with_capacity(samples);
    let mut probe = model.clone();
    for &(ti, index) in candidates.choose_multiple(rng, samples) {
        let (name, g) = &analytic[ti];
        let eval = |delta: f64, probe: &mut PadModel<f64>| -> Result<f64> {
            set_element(probe, name, index, delta);
            let loss = probe.mean_loss(&batch.images, &batch.labels);
            set_element(probe, name, index, -delta);
            loss
        };
        let plus = eval(h, &mut probe)?;
        let minus = eval(-h, &mut probe)?;
        let numeric = (plus - minus) / (2.0 * h);
        coords.push(CoordinateCheck {
            tensor: name.clone(),
            index,
            analytic: g[index],
            numeric,
            rel_error: relative_error(g[index], numeric, floor),
        });
    }
    Ok(GradCheckReport { coords })
}

fn set_element(model: &mut PadModel<f64>, name: &str, index: usize, delta: f64) {
    for (n, mut t) in model.tensors_mut() {
        if n == name {
            let slot = t.iter_mut().nth(index).expect("index within tensor");
            *slot += delta;
            return;
        }
    }
    panic!("unknown tensor {name}");
}
