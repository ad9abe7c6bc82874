//! Scoring of in-memory samples with a trained detector.

use rayon::prelude::*;

use crate::data::{Preprocess, Sample};
use crate::error::Result;
use crate::head::bce_mean;
use crate::metrics::{report, MetricReport, ScoreRecord, ThresholdPolicy};
use crate::model::PadModel;
use crate::vit::{Encoder, ImageBatch};

/// Bona-fide probability of every sample, in input order.
pub fn score_samples(model: &PadModel<f32>, samples: &[Sample], preprocess: &Preprocess) -> Result<Vec<ScoreRecord>> {
    samples
        .par_iter()
        .map(|s| {
            let input = preprocess.eval_tensor(&s.image)?;
            let out = model.forward_sample(input.view())?;
            Ok(ScoreRecord::new(out.prob as f64, s.label, s.domain.clone()))
        })
        .collect()
}

pub fn evaluate(model: &PadModel<f32>, samples: &[Sample], preprocess: &Preprocess, policy: ThresholdPolicy) -> Result<(MetricReport, Vec<ScoreRecord>)> {
    let scores = score_samples(model, samples, preprocess)?;
    Ok((report(&scores, policy)?, scores))
}

pub fn mean_loss(model: &PadModel<f32>, samples: &[Sample], preprocess: &Preprocess) -> Result<f64> {
    let records = score_samples(model, samples, preprocess)?;
    let probs: Vec<f64> = records.iter().map(|r| r.score).collect();
    let targets: Vec<f64> = records.iter().map(|r| r.label.target()).collect();
    bce_mean(&probs, &targets)
}

/// Class-token embeddings of every sample, inference mode.
pub fn embed_samples(encoder: &Encoder<f32>, samples: &[Sample], preprocess: &Preprocess) -> Result<Vec<ndarray::Array1<f32>>> {
    let inputs = samples.par_iter().map(|s| preprocess.eval_tensor(&s.image)).collect::<Result<Vec<_>>>()?;
    let batch = ImageBatch::from_images(&inputs)?;
    let feats = encoder.encode(&batch)?;
    Ok(feats.rows().into_iter().map(|r| r.to_owned()).collect())
}
