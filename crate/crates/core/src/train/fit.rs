use rand::seq::SliceRandom;
use serde::Serialize;

use super::{build_trainable_set, train_step, AdamW, TrainBatch, TrainConfig, TrainMode};
use crate::data::{Preprocess, Sample};
use crate::error::{Error, Result};
use crate::eval::mean_loss;
use crate::head::HeadWeights;
use crate::label::Label;
use crate::lora::AdapterConfig;
use crate::model::PadModel;
use crate::rng;
use crate::vit::{Encoder, EncoderConfig, ImageBatch, INIT_STD};

/// One line of the JSON-Lines loss log.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Head learning rate.
    pub lr: f64,
    pub lr_backbone: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub final_model: PadModel<f32>,
    /// Model after the epoch with the lowest mean training loss.
    pub best_model: PadModel<f32>,
    pub best_epoch: usize,
    /// Mean loss of the initial model on un-augmented inputs.
    pub initial_loss: f64,
    pub history: Vec<EpochLog>,
}

/// Assembles the starting model of a run. `base` supplies the frozen encoder
/// for `fe` and `foundpad`; without it a seeded random encoder stands in.
pub fn initial_model(
    encoder: &EncoderConfig,
    adapter: &AdapterConfig,
    base: Option<&Encoder<f32>>,
    config: &TrainConfig,
) -> Result<PadModel<f32>> {
    config.validate()?;
    let mut enc = match (config.mode, base) {
        (TrainMode::VitFs, Some(_)) => {
            return Err(Error::config("vit_fs trains from random initialization; drop the base checkpoint"));
        }
        (_, Some(base)) => {
            if &base.config != encoder {
                return Err(Error::config("base checkpoint architecture differs from the configured encoder"));
            }
            base.merged()?
        }
        (_, None) => Encoder::init(encoder, config.init_std, &mut rng::stream(config.seed, &[rng::INIT]))?,
    };
    if config.mode == TrainMode::Foundpad {
        enc.attach_adapters(adapter, &mut rng::stream(config.seed, &[rng::ADAPTER]))?;
    }
    let head = HeadWeights::init(encoder.embed_dim, INIT_STD, &mut rng::stream(config.seed, &[rng::HEAD]));
    Ok(PadModel { encoder: enc, head })
}

fn check_samples(samples: &[Sample]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::EmptyManifest);
    }
    let attack = samples.iter().any(|s| s.label == Label::Attack);
    let bona = samples.iter().any(|s| s.label == Label::BonaFide);
    if !(attack && bona) {
        return Err(Error::Domain("training data must contain both attack and bona-fide samples".into()));
    }
    Ok(())
}

/// Trains `model` for `config.epochs` epochs. Batch order, augmentation draws
/// and adapter dropout all derive from `config.seed`.
pub fn fit(
    mut model: PadModel<f32>,
    samples: &[Sample],
    config: &TrainConfig,
    preprocess: &Preprocess,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<FitOutcome> {
    config.validate()?;
    check_samples(samples)?;
    let trainable = build_trainable_set(config.mode, &model.layout(), config)?;
    let mut optimizer = AdamW::new(config);
    let initial_loss = mean_loss(&model, samples, preprocess)?;
    let mut best = (f64::INFINITY, 0usize, model.clone());
    let mut history = Vec::with_capacity(config.epochs);
    let dropout = config.mode == TrainMode::Foundpad;

    for epoch in 1..=config.epochs {
        let e = epoch as u64;
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut rng::stream(config.seed, &[rng::SHUFFLE, e]));
        let mut total = 0.0;
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            use rayon::prelude::*;
            let images = chunk
                .par_iter()
                .map(|&i| {
                    let mut aug = rng::stream(config.seed, &[rng::AUGMENT, e, i as u64]);
                    preprocess.train_tensor(&samples[i].image, &mut aug)
                })
                .collect::<Result<Vec<_>>>()?;
            let labels = chunk.iter().map(|&i| samples[i].label).collect();
            let batch = TrainBatch::new(ImageBatch::from_images(&images)?, labels)?;
            let dropout_seed = dropout.then(|| rng::derive_seed(config.seed, &[rng::DROPOUT, e, b as u64]));
            let loss = train_step(&mut model, &batch, &trainable, &mut optimizer, dropout_seed)?;
            total += loss as f64 * chunk.len() as f64;
        }
        let log = EpochLog {
            epoch,
            mean_loss: total / samples.len() as f64,
            lr: config.lr_head,
            lr_backbone: config.lr_backbone,
        };
        on_epoch(&log);
        if log.mean_loss < best.0 {
            best = (log.mean_loss, epoch, model.clone());
        }
        history.push(log);
    }
    let (_, best_epoch, best_model) = best;
    Ok(FitOutcome {
        final_model: model,
        best_model,
        best_epoch,
        initial_loss,
        history,
    })
}
