//! Zero-shot detection by cosine similarity against two text-prompt
//! embeddings computed offline.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::archive::{NamedTensor, TensorArchive};
use crate::data::Domain;
use crate::error::{Error, Result};
use crate::label::Label;
use crate::metrics::ScoreRecord;

pub const ATTACK_PROMPT: &str = "biometric presentation attack";
pub const BONAFIDE_PROMPT: &str = "bona-fide presentation";
pub const ATTACK_KEY: &str = "prompt.attack";
pub const BONAFIDE_KEY: &str = "prompt.bonafide";
/// Optional `d_e × d` map from encoder features to the joint embedding space.
pub const PROJECTION_KEY: &str = "visual.proj";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTexts {
    pub attack: String,
    pub bonafide: String,
}

impl Default for PromptTexts {
    fn default() -> Self {
        Self {
            attack: ATTACK_PROMPT.into(),
            bonafide: BONAFIDE_PROMPT.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptEmbeddingPair {
    attack: Array1<f64>,
    bonafide: Array1<f64>,
    pub texts: PromptTexts,
    pub projection: Option<Array2<f64>>,
}

fn unit(v: ArrayView1<f64>, what: &str) -> Result<Array1<f64>> {
    let norm = v.dot(&v).sqrt();
    if !norm.is_finite() || norm == 0.0 {
        return Err(Error::Numeric(format!("{what} has zero or non-finite norm")));
    }
    Ok(v.mapv(|x| x / norm))
}

impl PromptEmbeddingPair {
    /// Normalizes both embeddings to unit length.
    pub fn new(attack: Array1<f64>, bonafide: Array1<f64>) -> Result<Self> {
        if attack.len() != bonafide.len() {
            return Err(Error::shape("prompt embeddings", &[attack.len()], &[bonafide.len()]));
        }
        Ok(Self {
            attack: unit(attack.view(), "attack prompt embedding")?,
            bonafide: unit(bonafide.view(), "bona-fide prompt embedding")?,
            texts: PromptTexts::default(),
            projection: None,
        })
    }

    pub fn with_projection(mut self, projection: Array2<f64>) -> Result<Self> {
        if projection.nrows() != self.dim() {
            return Err(Error::shape("visual projection rows", &[self.dim()], &[projection.nrows()]));
        }
        self.projection = Some(projection);
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.attack.len()
    }

    pub fn attack(&self) -> ArrayView1<'_, f64> {
        self.attack.view()
    }

    pub fn bonafide(&self) -> ArrayView1<'_, f64> {
        self.bonafide.view()
    }

    pub fn swapped(&self) -> Self {
        Self {
            attack: self.bonafide.clone(),
            bonafide: self.attack.clone(),
            texts: self.texts.clone(),
            projection: self.projection.clone(),
        }
    }

    /// Maps an encoder feature into the prompt space (identity without a
    /// projection).
    pub fn embed(&self, feature: ArrayView1<f64>) -> Result<Array1<f64>> {
        match &self.projection {
            None => Ok(feature.to_owned()),
            Some(p) if p.ncols() == feature.len() => Ok(p.dot(&feature)),
            Some(p) => Err(Error::shape("image feature", &[p.ncols()], &[feature.len()])),
        }
    }

    pub fn to_archive(&self) -> Result<TensorArchive> {
        let header = serde_json::json!({ "prompts": self.texts });
        let mut archive = TensorArchive::new(header);
        let vec = |name: &str, v: &Array1<f64>| NamedTensor::new(name, vec![v.len()], v.iter().map(|&x| x as f32).collect());
        archive.push(vec(ATTACK_KEY, &self.attack)?)?;
        archive.push(vec(BONAFIDE_KEY, &self.bonafide)?)?;
        if let Some(p) = &self.projection {
            archive.push(NamedTensor::new(PROJECTION_KEY, p.shape().to_vec(), p.iter().map(|&x| x as f32).collect())?)?;
        }
        Ok(archive)
    }

    /// Loads a prompt archive; the recorded prompt strings must be the two
    /// fixed label descriptions.
    pub fn from_archive(archive: &TensorArchive) -> Result<Self> {
        let texts: PromptTexts = serde_json::from_value(archive.header.get("prompts").cloned().unwrap_or_default())
            .map_err(|e| Error::Checkpoint(format!("prompt archive header: {e}")))?;
        if texts != PromptTexts::default() {
            return Err(Error::Checkpoint(format!(
                "prompt texts must be {ATTACK_PROMPT:?} and {BONAFIDE_PROMPT:?}, found {:?} and {:?}",
                texts.attack, texts.bonafide
            )));
        }
        if let Some(unknown) = archive.names().find(|n| ![ATTACK_KEY, BONAFIDE_KEY, PROJECTION_KEY].contains(n)) {
            return Err(Error::Checkpoint(format!("unknown tensor {unknown}")));
        }
        let get = |key: &str| archive.get(key).ok_or_else(|| Error::Checkpoint(format!("missing tensor {key}")));
        let vector = |t: &NamedTensor| -> Result<Array1<f64>> {
            if t.shape.len() != 1 {
                return Err(Error::Checkpoint(format!("{} must be a vector, shape {:?}", t.name, t.shape)));
            }
            Ok(t.data.iter().map(|&x| x as f64).collect())
        };
        let pair = Self::new(vector(get(ATTACK_KEY)?)?, vector(get(BONAFIDE_KEY)?)?)?;
        match archive.get(PROJECTION_KEY) {
            None => Ok(pair),
            Some(t) if t.shape.len() == 2 => {
                let p = Array2::from_shape_vec((t.shape[0], t.shape[1]), t.data.iter().map(|&x| x as f64).collect())
                    .map_err(|e| Error::Checkpoint(e.to_string()))?;
                pair.with_projection(p)
            }
            Some(t) => Err(Error::Checkpoint(format!("{PROJECTION_KEY} must be a matrix, shape {:?}", t.shape))),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive(&TensorArchive::read(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_archive()?.write(path)
    }
}

/// Cosine similarities `(attack, bona-fide)`.
pub fn ti_score(image_embedding: ArrayView1<f64>, prompts: &PromptEmbeddingPair) -> Result<(f64, f64)> {
    if image_embedding.len() != prompts.dim() {
        return Err(Error::shape("image embedding", &[prompts.dim()], &[image_embedding.len()]));
    }
    let x = unit(image_embedding, "image embedding")?;
    let clamp = |v: f64| v.clamp(-1.0, 1.0);
    Ok((clamp(x.dot(&prompts.attack)), clamp(x.dot(&prompts.bonafide))))
}

pub fn ti_predict(sims: (f64, f64)) -> Label {
    if sims.1 > sims.0 {
        Label::BonaFide
    } else {
        Label::Attack
    }
}

pub fn ti_record(sims: (f64, f64), label: Label, domain: Domain) -> ScoreRecord {
    let margin = sims.1 - sims.0;
    ScoreRecord::new(1.0 / (1.0 + (-margin).exp()), label, domain)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn hand_example() {
        let h = 0.5f64.sqrt();
        let p = PromptEmbeddingPair::new(array![0.0, 1.0], array![h, h]).unwrap();
        let (a, b) = ti_score(array![1.0, 0.0].view(), &p).unwrap();
        assert!(a.abs() < 1e-12);
        assert!((b - 0.7071).abs() < 1e-4);
    }

    #[test]
    fn parallel_and_orthogonal() {
        let p = PromptEmbeddingPair::new(array![1.0, 0.0, 0.0], array![0.0, 3.0, 0.0]).unwrap();
        assert_eq!(ti_score(array![0.0, 2.0, 0.0].view(), &p).unwrap().1, 1.0);
        assert_eq!(ti_score(array![0.0, 0.0, 5.0].view(), &p).unwrap(), (0.0, 0.0));
        assert!(ti_score(array![1.0, 0.0].view(), &p).is_err());
    }

    #[test]
    fn predictions_and_scores() {
        assert_eq!(ti_predict((0.3, 0.5)), Label::BonaFide);
        assert_eq!(ti_predict((0.5, 0.5)), Label::Attack);
        let d = Domain::new("M").unwrap();
        assert_eq!(ti_record((0.2, 0.2), Label::Attack, d).score, 0.5);
    }

    #[test]
    fn archive_round_trip_and_text_check() {
        let p = PromptEmbeddingPair::new(array![3.0, 4.0], array![1.0, 0.0]).unwrap()
            .with_projection(array![[1.0, 0.0, 2.0], [0.0, 1.0, 0.0]]).unwrap();
        let back = PromptEmbeddingPair::from_archive(&p.to_archive().unwrap()).unwrap();
        assert!((back.attack()[0] - 0.6).abs() < 1e-7);
        assert_eq!(back.projection.as_ref().unwrap().shape(), &[2, 3]);

        let mut archive = p.to_archive().unwrap();
        archive.header = serde_json::json!({"prompts": {"attack": "spoof", "bonafide": BONAFIDE_PROMPT}});
        assert!(PromptEmbeddingPair::from_archive(&archive).is_err());
    }

    fn vec3() -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(-1.0f64..1.0, 3).prop_filter("non-zero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-3)
    }

    proptest! {
        #[test]
        fn positive_scaling_keeps_prediction(x in vec3(), a in vec3(), b in vec3(), s in 1e-3f64..1e3) {
            let p = PromptEmbeddingPair::new(Array1::from(a), Array1::from(b)).unwrap();
            let x = Array1::from(x);
            let s1 = ti_score(x.view(), &p).unwrap();
            let s2 = ti_score((&x * s).view(), &p).unwrap();
            prop_assert_eq!(ti_predict(s1), ti_predict(s2));
        }

        #[test]
        fn prompt_swap_flips(x in vec3(), a in vec3(), b in vec3()) {
            let p = PromptEmbeddingPair::new(Array1::from(a), Array1::from(b)).unwrap();
            let x = Array1::from(x);
            let s = ti_score(x.view(), &p).unwrap();
            let t = ti_score(x.view(), &p.swapped()).unwrap();
            prop_assume!(s.0 != s.1);
            prop_assert_ne!(ti_predict(s), ti_predict(t));
            let d = Domain::new("X").unwrap();
            let r1 = ti_record(s, Label::Attack, d.clone()).score;
            let r2 = ti_record(t, Label::Attack, d).score;
            prop_assert!((r1 + r2 - 1.0).abs() < 1e-12);
        }
    }
}
