use rayon::prelude::*;

use super::{AdamW, TrainableSet};
use crate::error::{Error, Result};
use crate::label::Label;
use crate::model::PadModel;
use crate::nn::{cast, Real};
use crate::rng;
use crate::vit::ImageBatch;

/// Samples per gradient accumulation chunk. Chunks are reduced in a fixed
/// order so results do not depend on thread scheduling.
const CHUNK: usize = 8;

#[derive(Debug, Clone)]
pub struct TrainBatch<T> {
    pub images: ImageBatch<T>,
    pub labels: Vec<Label>,
}

impl<T: Real> TrainBatch<T> {
    pub fn new(images: ImageBatch<T>, labels: Vec<Label>) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::shape("batch labels", &[images.len()], &[labels.len()]));
        }
        Ok(Self { images, labels })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Mean BCE and its gradient for the trainable families of `trainable`.
/// Tensors outside the trainable set are left at zero in the result.
/// `dropout_seed` enables adapter dropout with per-sample streams.
pub fn compute_gradients<T: Real>(
    model: &PadModel<T>,
    batch: &TrainBatch<T>,
    trainable: &TrainableSet,
    dropout_seed: Option<u64>,
) -> Result<(T, PadModel<T>)> {
    let n = batch.len();
    if n == 0 {
        return Err(Error::config("empty training batch"));
    }
    let scope = trainable.scope();
    let weight = T::one() / cast::<T>(n as f64);
    let indices: Vec<usize> = (0..n).collect();
    let partials: Vec<(T, PadModel<T>)> = indices
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut grads = model.zeros_like();
            let mut loss = T::zero();
            for &i in chunk {
                let mut stream = dropout_seed.map(|s| rng::stream(s, &[rng::DROPOUT, i as u64]));
                let eval = model.loss_and_grad(batch.images.image(i), batch.labels[i], stream.as_mut(), scope, weight, &mut grads)?;
                loss += eval.loss;
            }
            Ok((loss, grads))
        })
        .collect::<Result<_>>()?;
    let mut iter = partials.into_iter();
    let (mut loss, mut grads) = iter.next().expect("non-empty batch");
    for (l, g) in iter {
        loss += l;
        grads.add_assign(&g);
    }
    for (name, mut g) in grads.tensors_mut() {
        if !trainable.is_trainable(&name) {
            g.fill(T::zero());
        }
    }
    Ok((loss * weight, grads))
}

/// One optimizer step on a batch; returns the mean batch loss.
pub fn train_step<T: Real>(
    model: &mut PadModel<T>,
    batch: &TrainBatch<T>,
    trainable: &TrainableSet,
    optimizer: &mut AdamW<T>,
    dropout_seed: Option<u64>,
) -> Result<T> {
    let (loss, grads) = compute_gradients(model, batch, trainable, dropout_seed)?;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!("non-finite training loss {loss}; aborting step")));
    }
    optimizer.step(model, &grads, trainable);
    Ok(loss)
}
