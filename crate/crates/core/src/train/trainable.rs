use std::collections::HashMap;

use serde::Serialize;

use super::{TrainConfig, TrainMode};
use crate::error::{Error, Result};
use crate::model::{is_head_tensor, is_lora_tensor, TensorSpec};
use crate::vit::GradScope;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKind {
    Backbone,
    Lora,
    Head,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ParamGroup {
    pub kind: GroupKind,
    pub lr: f64,
    pub tensors: Vec<TensorSpec>,
}

impl ParamGroup {
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(TensorSpec::numel).sum()
    }
}

/// Parameter groups updated by the optimizer; everything else is frozen.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainableSet {
    pub mode: TrainMode,
    pub groups: Vec<ParamGroup>,
    pub frozen: Vec<TensorSpec>,
    lr_by_name: HashMap<String, f64>,
}

impl TrainableSet {
    pub fn is_trainable(&self, name: &str) -> bool {
        self.lr_by_name.contains_key(name)
    }

    pub fn lr(&self, name: &str) -> Option<f64> {
        self.lr_by_name.get(name).copied()
    }

    pub fn trainable_count(&self) -> usize {
        self.groups.iter().map(ParamGroup::numel).sum()
    }

    pub fn frozen_count(&self) -> usize {
        self.frozen.iter().map(TensorSpec::numel).sum()
    }

    pub fn group(&self, kind: GroupKind) -> Option<&ParamGroup> {
        self.groups.iter().find(|g| g.kind == kind)
    }

    /// Gradient families the backward pass must produce.
    pub fn scope(&self) -> GradScope {
        GradScope {
            base: self.group(GroupKind::Backbone).is_some(),
            adapters: self.group(GroupKind::Lora).is_some(),
        }
    }
}

/// Every tensor trainable at a unit rate; used for full-model verification.
pub fn everything_trainable(layout: &[TensorSpec]) -> TrainableSet {
    let mut groups: Vec<ParamGroup> = Vec::new();
    for spec in layout {
        let kind = if is_head_tensor(&spec.name) {
            GroupKind::Head
        } else if is_lora_tensor(&spec.name) {
            GroupKind::Lora
        } else {
            GroupKind::Backbone
        };
        match groups.iter_mut().find(|g| g.kind == kind) {
            Some(g) => g.tensors.push(spec.clone()),
            None => groups.push(ParamGroup {
                kind,
                lr: 1.0,
                tensors: vec![spec.clone()],
            }),
        }
    }
    let lr_by_name = groups
        .iter()
        .flat_map(|g| g.tensors.iter().map(move |t| (t.name.clone(), g.lr)))
        .collect();
    TrainableSet {
        mode: TrainMode::VitFs,
        groups,
        frozen: Vec::new(),
        lr_by_name,
    }
}

/// Splits a tensor layout into the trainable groups of `mode`.
pub fn build_trainable_set(mode: TrainMode, layout: &[TensorSpec], config: &TrainConfig) -> Result<TrainableSet> {
    let has_lora = layout.iter().any(|t| is_lora_tensor(&t.name));
    match mode {
        TrainMode::Foundpad if !has_lora => {
            return Err(Error::config("foundpad mode requires attached adapters"));
        }
        TrainMode::VitFs if has_lora => {
            return Err(Error::config("vit_fs mode trains the full encoder and takes no adapters"));
        }
        _ => {}
    }
    let mut backbone = Vec::new();
    let mut lora = Vec::new();
    let mut head = Vec::new();
    let mut frozen = Vec::new();
    for spec in layout {
        let bucket = if is_head_tensor(&spec.name) {
            &mut head
        } else if is_lora_tensor(&spec.name) {
            if mode == TrainMode::Foundpad {
                &mut lora
            } else {
                &mut frozen
            }
        } else if mode == TrainMode::VitFs {
            &mut backbone
        } else {
            &mut frozen
        };
        bucket.push(spec.clone());
    }
    let mut groups = Vec::new();
    for (kind, lr, tensors) in [
        (GroupKind::Backbone, config.lr_backbone, backbone),
        (GroupKind::Lora, config.lr_backbone, lora),
        (GroupKind::Head, config.lr_head, head),
    ] {
        if !tensors.is_empty() {
            groups.push(ParamGroup { kind, lr, tensors });
        }
    }
    let lr_by_name = groups
        .iter()
        .flat_map(|g| g.tensors.iter().map(move |t| (t.name.clone(), g.lr)))
        .collect();
    Ok(TrainableSet {
        mode,
        groups,
        frozen,
        lr_by_name,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lora::AdapterConfig;
    use crate::model::param_layout;
    use crate::vit::EncoderConfig;

    #[test]
    fn closed_form_counts_for_vit_b() {
        let cfg = TrainConfig::default();
        let vit_b = EncoderConfig::vit_b();
        let fe = build_trainable_set(TrainMode::Fe, &param_layout(&vit_b, None), &cfg).unwrap();
        assert_eq!(fe.trainable_count(), 1538);
        let adapted = param_layout(&vit_b, Some(&AdapterConfig::default()));
        let fp = build_trainable_set(TrainMode::Foundpad, &adapted, &cfg).unwrap();
        assert_eq!(fp.trainable_count(), 294_912 + 1538);
        assert_eq!(fp.group(GroupKind::Lora).unwrap().numel(), 294_912);
        assert_eq!(fp.group(GroupKind::Lora).unwrap().lr, cfg.lr_backbone);
        assert_eq!(fp.lr("head.weight"), Some(cfg.lr_head));
        let fs = build_trainable_set(TrainMode::VitFs, &param_layout(&vit_b, None), &cfg).unwrap();
        assert!(fs.frozen.is_empty());
    }

    #[test]
    fn foundpad_without_adapters_is_rejected() {
        let layout = param_layout(&EncoderConfig::toy(), None);
        let err = build_trainable_set(TrainMode::Foundpad, &layout, &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn scopes_follow_mode() {
        let cfg = TrainConfig::default();
        let toy = EncoderConfig::toy();
        let plain = param_layout(&toy, None);
        let adapted = param_layout(&toy, Some(&AdapterConfig::default().with_rank(2)));
        let s = |mode, layout: &[TensorSpec]| build_trainable_set(mode, layout, &cfg).unwrap().scope();
        assert_eq!(s(TrainMode::VitFs, &plain), GradScope { base: true, adapters: false });
        assert_eq!(s(TrainMode::Fe, &adapted), GradScope { base: false, adapters: false });
        assert_eq!(s(TrainMode::Foundpad, &adapted), GradScope { base: false, adapters: true });
    }
}
