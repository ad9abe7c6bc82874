//! Cross-dataset protocol definitions: which domains train a model and which
//! held-out domains evaluate it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const ARROW: &str = "→";

/// Dataset identifier such as `M`, `C`, `I`, `O`, `CA` or `SYN`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Domain(String);

impl Domain {
    pub fn new(id: impl Into<String>) -> Result<Self> {
        let id = id.into();
        let valid = !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-');
        if valid {
            Ok(Self(id))
        } else {
            Err(Error::Protocol(format!("invalid domain id {id:?}")))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl TryFrom<String> for Domain {
    type Error = Error;

    fn try_from(value: String) -> Result<Self> {
        Domain::new(value)
    }
}

impl From<Domain> for String {
    fn from(d: Domain) -> Self {
        d.0
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl FromStr for Domain {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Domain::new(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProtocolKind {
    TripleSource,
    DoubleSource,
    SingleSource,
    Synthetic,
    Custom,
}

/// `train_domains → test_domains`, e.g. `O&C&I→M`. Each test domain is
/// evaluated separately.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProtocolSpec {
    pub train_domains: Vec<Domain>,
    pub test_domains: Vec<Domain>,
}

fn parse_side(side: &str, what: &str) -> Result<Vec<Domain>> {
    let domains: Vec<Domain> = side.split('&').map(|s| Domain::new(s.trim())).collect::<Result<_>>()?;
    let mut sorted = domains.clone();
    sorted.sort();
    sorted.dedup();
    if sorted.len() != domains.len() {
        return Err(Error::Protocol(format!("duplicate {what} domain in {side:?}")));
    }
    Ok(domains)
}

impl ProtocolSpec {
    pub fn new(train_domains: Vec<Domain>, test_domains: Vec<Domain>) -> Result<Self> {
        if train_domains.is_empty() || test_domains.is_empty() {
            return Err(Error::Protocol("protocol needs at least one train and one test domain".into()));
        }
        if let Some(d) = test_domains.iter().find(|d| train_domains.contains(d)) {
            return Err(Error::Protocol(format!("test domain {d} also appears in the training domains")));
        }
        Ok(Self {
            train_domains,
            test_domains,
        })
    }

    /// Accepts `→` or `->` as the separator and optional spaces.
    pub fn parse(name: &str) -> Result<Self> {
        let (train, test) = name
            .split_once(ARROW)
            .or_else(|| name.split_once("->"))
            .ok_or_else(|| Error::Protocol(format!("missing arrow in {name:?}")))?;
        Self::new(parse_side(train, "train")?, parse_side(test, "test")?)
    }

    pub fn name(&self) -> String {
        let join = |ds: &[Domain]| ds.iter().map(Domain::as_str).collect::<Vec<_>>().join("&");
        format!("{}{ARROW}{}", join(&self.train_domains), join(&self.test_domains))
    }

    pub fn all_domains(&self) -> impl Iterator<Item = &Domain> {
        self.train_domains.iter().chain(&self.test_domains)
    }
}

impl fmt::Display for ProtocolSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}

impl FromStr for ProtocolSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegisteredProtocol {
    pub kind: ProtocolKind,
    pub spec: ProtocolSpec,
}

const TRIPLE: [&str; 5] = ["O&C&I→M", "O&M&I→C", "O&C&M→I", "I&C&M→O", "O&C&M→CA"];
const DOUBLE: [&str; 2] = ["M&I→C", "M&I→O"];
const SYNTHETIC: &str = "SYN→M&C&I&O";
const BENCHMARKS: [&str; 4] = ["M", "C", "I", "O"];

/// The benchmark protocols: five triple-source, two double-source, twelve
/// single-source and the synthetic-source protocol.
pub fn registry() -> Vec<RegisteredProtocol> {
    let mut out = Vec::with_capacity(20);
    let mut add = |kind, name: &str| {
        out.push(RegisteredProtocol {
            kind,
            spec: ProtocolSpec::parse(name).expect("registry names are valid"),
        })
    };
    for name in TRIPLE {
        add(ProtocolKind::TripleSource, name);
    }
    for name in DOUBLE {
        add(ProtocolKind::DoubleSource, name);
    }
    for train in BENCHMARKS {
        for test in BENCHMARKS.iter().filter(|&&t| t != train) {
            add(ProtocolKind::SingleSource, &format!("{train}{ARROW}{test}"));
        }
    }
    add(ProtocolKind::Synthetic, SYNTHETIC);
    out
}

/// Looks a name up in the registry, falling back to parsing it as a custom
/// protocol.
pub fn resolve(name: &str) -> Result<RegisteredProtocol> {
    let spec = ProtocolSpec::parse(name)?;
    Ok(registry()
        .into_iter()
        .find(|p| p.spec == spec)
        .unwrap_or(RegisteredProtocol {
            kind: ProtocolKind::Custom,
            spec,
        }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> Domain {
        Domain::new(s).unwrap()
    }

    #[test]
    fn parses_triple_source_name() {
        let p = ProtocolSpec::parse("O&C&I→M").unwrap();
        assert_eq!(p.train_domains, vec![d("O"), d("C"), d("I")]);
        assert_eq!(p.test_domains, vec![d("M")]);
        let p = ProtocolSpec::parse("M&I→O").unwrap();
        assert_eq!(p.train_domains, vec![d("M"), d("I")]);
        assert_eq!(p.test_domains, vec![d("O")]);
        assert_eq!(ProtocolSpec::parse("M & I -> O").unwrap(), p);
    }

    #[test]
    fn rejects_leaking_test_domain() {
        assert!(matches!(ProtocolSpec::parse("O&C&M→M"), Err(Error::Protocol(_))));
        assert!(ProtocolSpec::parse("M→M").is_err());
        assert!(ProtocolSpec::parse("MC").is_err());
        assert!(ProtocolSpec::parse("M&M→C").is_err());
        assert!(ProtocolSpec::parse("→C").is_err());
    }

    #[test]
    fn registry_shape() {
        let reg = registry();
        assert_eq!(reg.len(), 20);
        let count = |k| reg.iter().filter(|p| p.kind == k).count();
        assert_eq!(count(ProtocolKind::TripleSource), 5);
        assert_eq!(count(ProtocolKind::DoubleSource), 2);
        assert_eq!(count(ProtocolKind::SingleSource), 12);
        assert_eq!(count(ProtocolKind::Synthetic), 1);
        for p in &reg {
            assert_eq!(ProtocolSpec::parse(&p.spec.name()).unwrap(), p.spec);
        }
        let syn = reg.last().unwrap();
        assert_eq!(syn.spec.test_domains.len(), 4);
    }

    #[test]
    fn resolve_prefers_registry() {
        assert_eq!(resolve("O&C&M→CA").unwrap().kind, ProtocolKind::TripleSource);
        assert_eq!(resolve("D1&D2→D3").unwrap().kind, ProtocolKind::Custom);
    }
}
