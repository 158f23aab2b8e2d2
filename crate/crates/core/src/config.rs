//! Attribute schema, propagation parameters and the JSON config file.
//!
//! ```json
//! {"attributes": ["phone", "email"],
//!  "weights": {"phone": 3, "email": 2},
//!  "hub_cap": 500,
//!  "propagation": {"max_hops": 5, "epsilon": 0.5, "seed_score": 100}}
//! ```
//!
//! Every field is optional. Omitting both `attributes` and `weights` selects
//! the default profile; omitting `attributes` alone takes the weight keys in
//! sorted order.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::hash;

pub const DEFAULT_HUB_CAP: usize = 500;
pub const DEFAULT_MAX_HOPS: usize = 5;
pub const DEFAULT_EPSILON: f64 = 0.5;
pub const DEFAULT_SEED_SCORE: f64 = 100.0;
pub const DEFAULT_CLAMP_MAX: f64 = 100.0;

/// Default attribute profile with its weights.
pub const DEFAULT_PROFILE: [(&str, f64); 6] = [
    ("name", 1.0),
    ("address", 1.0),
    ("email", 2.0),
    ("phone", 3.0),
    ("device", 2.0),
    ("payment", 3.0),
];

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed config JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid config: {}", .0.join("; "))]
    Invalid(Vec<String>),
}

/// The attribute set that defines edges, with one weight per attribute.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeSchema {
    pub attributes: Vec<String>,
    pub weights: BTreeMap<String, f64>,
    /// Largest bucket (transactions sharing one value) that still forms edges.
    pub hub_cap: usize,
}

impl Default for AttributeSchema {
    fn default() -> Self {
        Self {
            attributes: DEFAULT_PROFILE.iter().map(|(a, _)| a.to_string()).collect(),
            weights: DEFAULT_PROFILE.iter().map(|(a, w)| (a.to_string(), *w)).collect(),
            hub_cap: DEFAULT_HUB_CAP,
        }
    }
}

impl AttributeSchema {
    /// Builds and validates a schema.
    pub fn new<I, S>(weights: I, hub_cap: usize) -> Result<Self, ConfigError>
    where
        I: IntoIterator<Item = (S, f64)>,
        S: Into<String>,
    {
        let mut attributes = Vec::new();
        let mut map = BTreeMap::new();
        for (name, w) in weights {
            let name = name.into();
            attributes.push(name.clone());
            map.insert(name, w);
        }
        let schema = Self { attributes, weights: map, hub_cap };
        let violations = schema.validate();
        if violations.is_empty() {
            Ok(schema)
        } else {
            Err(ConfigError::Invalid(violations))
        }
    }

    pub fn validate(&self) -> Vec<String> {
        validate_schema(self)
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn index_of(&self, attr: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a == attr)
    }

    /// Weight of the attribute at position `k` in `attributes`.
    pub fn weight_at(&self, k: usize) -> f64 {
        self.weights.get(&self.attributes[k]).copied().unwrap_or(0.0)
    }

    /// Weights in attribute order.
    pub fn weight_vec(&self) -> Vec<f64> {
        (0..self.attributes.len()).map(|k| self.weight_at(k)).collect()
    }

    /// Weight of two transactions agreeing on every attribute, summed in attribute order.
    pub fn max_possible_weight(&self) -> f64 {
        self.weight_vec().into_iter().fold(0.0, |acc, w| acc + w)
    }

    pub fn canonical_json(&self) -> String {
        serde_json::to_string(self).expect("schema serializes")
    }

    pub fn hash(&self) -> String {
        hash::short_hash(self.canonical_json().as_bytes())
    }
}

/// Returns every violated schema invariant; empty iff the schema is valid.
pub fn validate_schema(schema: &AttributeSchema) -> Vec<String> {
    let mut out = Vec::new();
    if schema.attributes.is_empty() {
        out.push("attributes must not be empty".to_string());
    }
    let mut seen = std::collections::BTreeSet::new();
    for a in &schema.attributes {
        if !seen.insert(a.as_str()) {
            out.push(format!("attributes: duplicate attribute '{a}'"));
        }
        if !schema.weights.contains_key(a) {
            out.push(format!("weights.{a} is missing"));
        }
    }
    for (k, w) in &schema.weights {
        if !seen.contains(k.as_str()) {
            out.push(format!("weights.{k} does not name an attribute"));
        }
        if !w.is_finite() {
            out.push(format!("weights.{k} must be finite"));
        } else if *w < 0.0 {
            out.push(format!("weights.{k} must be ≥ 0"));
        }
    }
    if !schema.weights.values().any(|w| *w > 0.0 && w.is_finite()) {
        out.push("at least one weight must be > 0".to_string());
    }
    if schema.hub_cap < 2 {
        out.push("hub_cap ≥ 2".to_string());
    }
    out
}

/// Parameters of one propagation run. Scores live on a 0..=`clamp_max` scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PropagationConfig {
    pub max_hops: usize,
    pub epsilon: f64,
    pub seed_score: f64,
    pub clamp_max: f64,
}

impl Default for PropagationConfig {
    fn default() -> Self {
        Self {
            max_hops: DEFAULT_MAX_HOPS,
            epsilon: DEFAULT_EPSILON,
            seed_score: DEFAULT_SEED_SCORE,
            clamp_max: DEFAULT_CLAMP_MAX,
        }
    }
}

impl PropagationConfig {
    pub fn validate(&self) -> Vec<String> {
        let mut out = Vec::new();
        if self.max_hops < 1 {
            out.push("propagation.max_hops must be ≥ 1".to_string());
        }
        if !(self.clamp_max.is_finite() && self.clamp_max > 0.0) {
            out.push("propagation.clamp_max must be > 0".to_string());
        }
        if !(self.epsilon.is_finite() && self.epsilon >= 0.0 && self.epsilon <= self.clamp_max) {
            out.push("propagation.epsilon must be in [0, clamp_max]".to_string());
        }
        if !(self.seed_score.is_finite() && self.seed_score > 0.0 && self.seed_score <= self.clamp_max)
        {
            out.push("propagation.seed_score must be in (0, clamp_max]".to_string());
        }
        out
    }
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawPropagation {
    max_hops: Option<i64>,
    epsilon: Option<f64>,
    seed_score: Option<f64>,
    clamp_max: Option<f64>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    attributes: Option<Vec<String>>,
    weights: Option<BTreeMap<String, f64>>,
    hub_cap: Option<i64>,
    #[serde(default)]
    propagation: RawPropagation,
}

#[derive(Serialize)]
struct ConfigOut<'a> {
    attributes: &'a [String],
    weights: &'a BTreeMap<String, f64>,
    hub_cap: usize,
    propagation: &'a PropagationConfig,
}

/// Parses the JSON config document.
pub fn parse_config(text: &str) -> Result<(AttributeSchema, PropagationConfig), ConfigError> {
    let raw: RawConfig = serde_json::from_str(text)?;
    let mut violations = Vec::new();

    let default = AttributeSchema::default();
    let (attributes, weights) = match (raw.attributes, raw.weights) {
        (None, None) => (default.attributes, default.weights),
        (Some(a), Some(w)) => (a, w),
        (None, Some(w)) => (w.keys().cloned().collect(), w),
        (Some(a), None) => {
            violations.push("weights is required when attributes are given".to_string());
            (a, BTreeMap::new())
        }
    };
    let hub_cap = match raw.hub_cap {
        None => DEFAULT_HUB_CAP,
        Some(h) if h < 0 => {
            violations.push("hub_cap ≥ 2".to_string());
            0
        }
        Some(h) => h as usize,
    };
    let schema = AttributeSchema { attributes, weights, hub_cap };
    for v in validate_schema(&schema) {
        if !violations.contains(&v) {
            violations.push(v);
        }
    }

    let p = raw.propagation;
    let max_hops = match p.max_hops {
        None => DEFAULT_MAX_HOPS,
        Some(h) if h < 1 => {
            violations.push("propagation.max_hops must be ≥ 1".to_string());
            1
        }
        Some(h) => h as usize,
    };
    let cfg = PropagationConfig {
        max_hops,
        epsilon: p.epsilon.unwrap_or(DEFAULT_EPSILON),
        seed_score: p.seed_score.unwrap_or(DEFAULT_SEED_SCORE),
        clamp_max: p.clamp_max.unwrap_or(DEFAULT_CLAMP_MAX),
    };
    violations.extend(cfg.validate());

    if violations.is_empty() {
        Ok((schema, cfg))
    } else {
        Err(ConfigError::Invalid(violations))
    }
}

/// Reads and validates a config file.
pub fn load_config(path: impl AsRef<Path>) -> Result<(AttributeSchema, PropagationConfig), ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_config(&text)
}

/// Serializes a schema and propagation config back into the config format.
pub fn config_to_json(schema: &AttributeSchema, cfg: &PropagationConfig) -> String {
    serde_json::to_string_pretty(&ConfigOut {
        attributes: &schema.attributes,
        weights: &schema.weights,
        hub_cap: schema.hub_cap,
        propagation: cfg,
    })
    .expect("config serializes")
}

/// Content hash of a full run configuration.
pub fn config_hash(schema: &AttributeSchema, cfg: &PropagationConfig) -> String {
    let compact: serde_json::Value =
        serde_json::from_str(&config_to_json(schema, cfg)).expect("round trip");
    hash::short_hash(compact.to_string().as_bytes())
}

impl fmt::Display for AttributeSchema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self
            .attributes
            .iter()
            .map(|a| format!("{a}={}", self.weights.get(a).copied().unwrap_or(0.0)))
            .collect();
        write!(f, "[{}] hub_cap={}", parts.join(", "), self.hub_cap)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn max_weight_is_hand_sum() {
        let (schema, _) =
            parse_config(r#"{"weights":{"phone":3,"email":2,"device":1}}"#).unwrap();
        assert_eq!(schema.max_possible_weight(), 6.0);
    }

    #[test]
    fn omitted_epsilon_defaults() {
        let (_, cfg) = parse_config(r#"{"propagation":{"max_hops":3}}"#).unwrap();
        assert_eq!(cfg.epsilon, 0.5);
        assert_eq!(cfg.max_hops, 3);
        assert_eq!(cfg.seed_score, 100.0);
    }

    #[test]
    fn negative_weight_names_field() {
        let err = parse_config(r#"{"weights":{"phone":-1,"email":2}}"#).unwrap_err();
        match err {
            ConfigError::Invalid(v) => assert!(v.contains(&"weights.phone must be ≥ 0".to_string()), "{v:?}"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn malformed_and_missing() {
        assert!(matches!(parse_config("{"), Err(ConfigError::Json(_))));
        assert!(matches!(
            load_config("/nonexistent/config.json"),
            Err(ConfigError::Io { .. })
        ));
        assert!(matches!(parse_config(r#"{"hub":3}"#), Err(ConfigError::Json(_))));
    }

    #[test]
    fn validate_examples() {
        let mut s = AttributeSchema::default();
        assert!(validate_schema(&s).is_empty());
        s.hub_cap = 1;
        assert_eq!(validate_schema(&s), vec!["hub_cap ≥ 2".to_string()]);
        let zero = AttributeSchema {
            attributes: vec!["a".into(), "b".into()],
            weights: [("a".to_string(), 0.0), ("b".to_string(), 0.0)].into_iter().collect(),
            hub_cap: 10,
        };
        assert_eq!(validate_schema(&zero), vec!["at least one weight must be > 0".to_string()]);
    }

    #[test]
    fn propagation_bounds() {
        let bad = PropagationConfig { epsilon: -1.0, ..Default::default() };
        assert_eq!(bad.validate().len(), 1);
        let bad = PropagationConfig { seed_score: 0.0, max_hops: 0, ..Default::default() };
        assert_eq!(bad.validate().len(), 2);
    }

    #[test]
    fn default_profile_orders_phone_above_email() {
        let s = AttributeSchema::default();
        assert!(s.weights["phone"] > s.weights["email"]);
        assert_eq!(s.max_possible_weight(), 12.0);
    }

    fn arb_config() -> impl Strategy<Value = (AttributeSchema, PropagationConfig)> {
        (
            prop::collection::btree_map("[a-z]{1,8}", 0u32..20, 1..6),
            2usize..10_000,
            1usize..20,
            0.0f64..50.0,
            1.0f64..100.0,
        )
            .prop_filter_map("needs a positive weight", |(w, hub, hops, eps, seed)| {
                let schema = AttributeSchema::new(w.into_iter().map(|(k, v)| (k, v as f64)), hub).ok()?;
                let cfg = PropagationConfig { max_hops: hops, epsilon: eps, seed_score: seed, clamp_max: 100.0 };
                Some((schema, cfg))
            })
    }

    proptest! {
        #[test]
        fn serialize_then_load_is_identity((schema, cfg) in arb_config()) {
            let text = config_to_json(&schema, &cfg);
            let (s2, c2) = parse_config(&text).unwrap();
            prop_assert_eq!(s2, schema);
            prop_assert_eq!(c2, cfg);
        }
    }
}
