//! Cross-domain protocol runs: train on the union of source domains, report
//! per held-out domain.

use serde::Serialize;

use crate::data::{load_samples, AugmentationConfig, DatasetManifest, Domain, Preprocess, ProtocolSpec};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::lora::AdapterConfig;
use crate::metrics::{MetricReport, ThresholdPolicy};
use crate::train::{fit, initial_model, EpochLog, FitOutcome, TrainConfig};
use crate::vit::{Encoder, EncoderConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub encoder: EncoderConfig,
    pub adapter: AdapterConfig,
    pub train: TrainConfig,
    pub augmentation: AugmentationConfig,
    pub policy: ThresholdPolicy,
}

#[derive(Debug, Clone, Serialize)]
pub struct DomainReport {
    pub domain: Domain,
    #[serde(flatten)]
    pub report: MetricReport,
}

#[derive(Debug, Clone, Serialize)]
pub struct ProtocolReport {
    pub protocol: String,
    pub mode: String,
    pub seed: u64,
    pub domains: Vec<DomainReport>,
    pub mean_hter_pct: f64,
    pub mean_auc_pct: f64,
}

impl ProtocolReport {
    pub fn row(&self) -> String {
        format!("{:.2} / {:.2}", self.mean_hter_pct, self.mean_auc_pct)
    }
}

/// First protocol domain absent from `manifest`, in train-then-test order.
pub fn missing_domain(spec: &ProtocolSpec, manifest: &DatasetManifest) -> Option<Domain> {
    let present = manifest.domains();
    spec.all_domains().find(|d| !present.contains(d)).cloned()
}

/// Trains with `config` on the train domains of `spec` and evaluates the
/// final model on each test domain.
pub fn protocol_run(
    spec: &ProtocolSpec,
    manifest: &DatasetManifest,
    config: &ExperimentConfig,
    base: Option<&Encoder<f32>>,
    on_epoch: impl FnMut(&EpochLog),
) -> Result<(ProtocolReport, FitOutcome)> {
    if let Some(d) = missing_domain(spec, manifest) {
        return Err(Error::MissingDomain(d.as_str().to_string()));
    }
    let preprocess = Preprocess::new(&config.encoder, config.augmentation.clone());
    let train = load_samples(&manifest.filter_domains(&spec.train_domains))?;
    let model = initial_model(&config.encoder, &config.adapter, base, &config.train)?;
    let outcome = fit(model, &train, &config.train, &preprocess, on_epoch)?;

    let mut domains = Vec::with_capacity(spec.test_domains.len());
    for domain in &spec.test_domains {
        let samples = load_samples(&manifest.filter_domains(std::slice::from_ref(domain)))?;
        let (report, _) = evaluate(&outcome.final_model, &samples, &preprocess, config.policy)?;
        domains.push(DomainReport {
            domain: domain.clone(),
            report,
        });
    }
    let n = domains.len() as f64;
    let mean = |f: fn(&MetricReport) -> f64| (domains.iter().map(|d| f(&d.report)).sum::<f64>() / n * 100.0).round() / 100.0;
    let report = ProtocolReport {
        protocol: spec.name(),
        mode: config.train.mode.as_str().to_string(),
        seed: config.train.seed,
        mean_hter_pct: mean(|r| r.hter_pct),
        mean_auc_pct: mean(|r| r.auc_pct),
        domains,
    };
    Ok((report, outcome))
}
