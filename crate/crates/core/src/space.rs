//! Mixed continuous/integer/categorical hyperparameter spaces.
//!
//! Every space maps onto the unit hypercube used by the surrogate:
//! continuous parameters through an affine map of their (optionally log10)
//! value, integers through an affine map of the integer, and categoricals as
//! one-hot blocks.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Distance kept from the bounds of open intervals, in unit coordinates.
pub const OPEN_MARGIN: f64 = 1e-9;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    #[default]
    Linear,
    Log10,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ParamKind {
    Continuous {
        lo: f64,
        hi: f64,
        #[serde(default)]
        scale: Scale,
        /// Sampling and decoding stay strictly inside `(lo, hi)`.
        #[serde(default)]
        open: bool,
    },
    Integer {
        lo: i64,
        hi: i64,
    },
    Categorical {
        choices: Vec<String>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamSpec {
    pub name: String,
    #[serde(flatten)]
    pub kind: ParamKind,
}

impl ParamSpec {
    pub fn continuous(name: &str, lo: f64, hi: f64, scale: Scale, open: bool) -> Self {
        ParamSpec {
            name: name.into(),
            kind: ParamKind::Continuous { lo, hi, scale, open },
        }
    }

    pub fn integer(name: &str, lo: i64, hi: i64) -> Self {
        ParamSpec {
            name: name.into(),
            kind: ParamKind::Integer { lo, hi },
        }
    }

    pub fn categorical(name: &str, choices: &[&str]) -> Self {
        ParamSpec {
            name: name.into(),
            kind: ParamKind::Categorical {
                choices: choices.iter().map(|c| c.to_string()).collect(),
            },
        }
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::config(&self.name, msg));
        match &self.kind {
            ParamKind::Continuous { lo, hi, scale, .. } => {
                if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                    return bad(format!("need finite lo < hi, got [{lo}, {hi}]"));
                }
                if *scale == Scale::Log10 && *lo <= 0.0 {
                    return bad("log10 scale requires lo > 0".into());
                }
            }
            ParamKind::Integer { lo, hi } => {
                if lo >= hi {
                    return bad(format!("need lo < hi, got [{lo}, {hi}]"));
                }
            }
            ParamKind::Categorical { choices } => {
                let distinct: HashSet<&String> = choices.iter().collect();
                if choices.len() < 2 || distinct.len() != choices.len() {
                    return bad("categorical needs at least two distinct choices".into());
                }
            }
        }
        Ok(())
    }

    /// Width of this parameter's block in the encoded vector.
    pub fn encoded_width(&self) -> usize {
        match &self.kind {
            ParamKind::Categorical { choices } => choices.len(),
            _ => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ParamValue {
    Real(f64),
    Int(i64),
    Choice(String),
}

impl ParamValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ParamValue::Real(v) => Some(*v),
            ParamValue::Int(v) => Some(*v as f64),
            ParamValue::Choice(_) => None,
        }
    }

    pub fn as_i64(&self) -> Option<i64> {
        match self {
            ParamValue::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_str(&self) -> Option<&str> {
        match self {
            ParamValue::Choice(s) => Some(s),
            _ => None,
        }
    }
}

impl fmt::Display for ParamValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ParamValue::Real(v) => write!(f, "{v:?}"),
            ParamValue::Int(v) => write!(f, "{v}"),
            ParamValue::Choice(s) => f.write_str(s),
        }
    }
}

/// One concrete hyperparameter assignment.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct HyperConfig {
    values: BTreeMap<String, ParamValue>,
}

impl HyperConfig {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, name: &str, value: ParamValue) -> Self {
        self.set(name, value);
        self
    }

    pub fn set(&mut self, name: &str, value: ParamValue) {
        self.values.insert(name.to_string(), value);
    }

    pub fn get(&self, name: &str) -> Option<&ParamValue> {
        self.values.get(name)
    }

    pub fn real(&self, name: &str) -> Option<f64> {
        self.get(name).and_then(ParamValue::as_f64)
    }

    pub fn int(&self, name: &str) -> Option<i64> {
        self.get(name).and_then(ParamValue::as_i64)
    }

    pub fn choice(&self, name: &str) -> Option<&str> {
        self.get(name).and_then(ParamValue::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamValue)> {
        self.values.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Equality with a relative tolerance on real values; integers and
    /// choices must match exactly.
    pub fn approx_eq(&self, other: &HyperConfig, rel_tol: f64) -> bool {
        self.values.len() == other.values.len()
            && self.values.iter().all(|(k, a)| match (a, other.values.get(k)) {
                (ParamValue::Real(x), Some(ParamValue::Real(y))) => {
                    (x - y).abs() <= rel_tol * x.abs().max(y.abs()).max(f64::MIN_POSITIVE)
                }
                (a, Some(b)) => a == b,
                _ => false,
            })
    }
}

#[derive(Serialize, Deserialize)]
struct SpaceFile {
    #[serde(default)]
    name: Option<String>,
    #[serde(rename = "param")]
    params: Vec<ParamSpec>,
}

/// Ordered list of parameters. Order fixes the encoded layout.
#[derive(Clone, Debug, PartialEq)]
pub struct SearchSpace {
    name: String,
    params: Vec<ParamSpec>,
}

pub const SCALING_CHOICES: [&str; 5] = ["l1", "l2", "standardise", "minmax", "none"];

impl SearchSpace {
    pub fn new(name: &str, params: Vec<ParamSpec>) -> Result<Self> {
        let mut seen = HashSet::new();
        for p in &params {
            p.validate()?;
            if !seen.insert(p.name.as_str()) {
                return Err(Error::config(&p.name, "duplicate parameter name"));
            }
        }
        Ok(SearchSpace {
            name: name.into(),
            params,
        })
    }

    /// Built-in presets: `localisation-wifi` (network, PCA count and scaling)
    /// and `localisation-uwb` (same without the PCA count).
    pub fn preset(name: &str) -> Result<Self> {
        let mut params = vec![
            ParamSpec::integer("units1", 12, 256),
            ParamSpec::integer("units2", 12, 256),
            ParamSpec::continuous("dropout1", 0.0, 0.75, Scale::Linear, true),
            ParamSpec::continuous("dropout2", 0.0, 0.75, Scale::Linear, true),
            ParamSpec::continuous("learning_rate", 1e-6, 1.0, Scale::Log10, true),
            ParamSpec::integer("batch_size", 16, 128),
        ];
        match name {
            "localisation-wifi" => params.push(ParamSpec::integer("pca_count", 1, 7)),
            "localisation-uwb" => {}
            other => return Err(Error::config("preset", format!("unknown preset `{other}`"))),
        }
        params.push(ParamSpec::categorical("scaling", &SCALING_CHOICES));
        SearchSpace::new(name, params)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        let file: SpaceFile =
            toml::from_str(text).map_err(|e| Error::config("space", e.to_string()))?;
        SearchSpace::new(file.name.as_deref().unwrap_or("custom"), file.params)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        let file = SpaceFile {
            name: Some(self.name.clone()),
            params: self.params.clone(),
        };
        toml::to_string(&file).expect("space serializes")
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn params(&self) -> &[ParamSpec] {
        &self.params
    }

    pub fn param(&self, name: &str) -> Option<&ParamSpec> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn encoded_dim(&self) -> usize {
        self.params.iter().map(ParamSpec::encoded_width).sum()
    }

    pub fn validate_config(&self, config: &HyperConfig) -> Result<()> {
        if config.len() != self.params.len() {
            return Err(Error::invalid(format!(
                "config has {} values, space has {} parameters",
                config.len(),
                self.params.len()
            )));
        }
        for p in &self.params {
            let v = config
                .get(&p.name)
                .ok_or_else(|| Error::invalid(format!("missing parameter `{}`", p.name)))?;
            let ok = match (&p.kind, v) {
                (ParamKind::Continuous { lo, hi, .. }, ParamValue::Real(x)) => {
                    x.is_finite() && *lo <= *x && *x <= *hi
                }
                (ParamKind::Integer { lo, hi }, ParamValue::Int(x)) => lo <= x && x <= hi,
                (ParamKind::Categorical { choices }, ParamValue::Choice(c)) => choices.contains(c),
                _ => false,
            };
            if !ok {
                return Err(Error::invalid(format!("`{}` = {v} is outside its range", p.name)));
            }
        }
        Ok(())
    }

    pub fn encode(&self, config: &HyperConfig) -> Result<Vec<f64>> {
        self.validate_config(config)?;
        let mut out = Vec::with_capacity(self.encoded_dim());
        for p in &self.params {
            let v = &config.values[&p.name];
            match (&p.kind, v) {
                (ParamKind::Continuous { lo, hi, scale, .. }, ParamValue::Real(x)) => {
                    let u = match scale {
                        Scale::Linear => (x - lo) / (hi - lo),
                        Scale::Log10 => (x.log10() - lo.log10()) / (hi.log10() - lo.log10()),
                    };
                    out.push(u.clamp(0.0, 1.0));
                }
                (ParamKind::Integer { lo, hi }, ParamValue::Int(x)) => {
                    out.push((x - lo) as f64 / (hi - lo) as f64);
                }
                (ParamKind::Categorical { choices }, ParamValue::Choice(c)) => {
                    out.extend(choices.iter().map(|ch| if ch == c { 1.0 } else { 0.0 }));
                }
                _ => unreachable!("validated above"),
            }
        }
        Ok(out)
    }

    /// Inverse of [`encode`](Self::encode): rounds integers to nearest,
    /// takes the categorical argmax (lowest index on ties) and clamps
    /// coordinates into `[0, 1]`.
    pub fn decode(&self, vector: &[f64]) -> Result<HyperConfig> {
        if vector.len() != self.encoded_dim() {
            return Err(Error::invalid(format!(
                "encoded vector has length {}, expected {}",
                vector.len(),
                self.encoded_dim()
            )));
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("encoded vector has non-finite entries"));
        }
        let mut config = HyperConfig::new();
        let mut at = 0;
        for p in &self.params {
            let w = p.encoded_width();
            let block = &vector[at..at + w];
            at += w;
            config.set(&p.name, decode_one(&p.kind, block));
        }
        Ok(config)
    }

    /// Independent uniform draw per parameter (log-uniform for log10 scales).
    pub fn sample_random<R: Rng + ?Sized>(&self, rng: &mut R) -> HyperConfig {
        let mut config = HyperConfig::new();
        for p in &self.params {
            let v = match &p.kind {
                ParamKind::Continuous { .. } => {
                    let u: f64 = rng.random();
                    decode_one(&p.kind, &[u])
                }
                ParamKind::Integer { lo, hi } => ParamValue::Int(rng.random_range(*lo..=*hi)),
                ParamKind::Categorical { choices } => {
                    ParamValue::Choice(choices[rng.random_range(0..choices.len())].clone())
                }
            };
            config.set(&p.name, v);
        }
        config
    }

    /// Serializes a config as a TOML table, parameters in space order.
    pub fn config_to_toml(&self, config: &HyperConfig) -> String {
        let mut table = toml::Table::new();
        for p in &self.params {
            if let Some(v) = config.get(&p.name) {
                let tv = match v {
                    ParamValue::Real(x) => toml::Value::Float(*x),
                    ParamValue::Int(x) => toml::Value::Integer(*x),
                    ParamValue::Choice(s) => toml::Value::String(s.clone()),
                };
                table.insert(p.name.clone(), tv);
            }
        }
        let mut root = toml::Table::new();
        root.insert("space".into(), toml::Value::String(self.name.clone()));
        root.insert("config".into(), toml::Value::Table(table));
        toml::to_string(&root).expect("config serializes")
    }

    pub fn config_from_toml(&self, text: &str) -> Result<HyperConfig> {
        let root: toml::Table = toml::from_str(text).map_err(|e| Error::config("config", e.to_string()))?;
        let table = root
            .get("config")
            .and_then(toml::Value::as_table)
            .ok_or_else(|| Error::config("config", "missing [config] table"))?;
        let mut config = HyperConfig::new();
        for p in &self.params {
            let raw = table
                .get(&p.name)
                .ok_or_else(|| Error::config(&p.name, "missing value"))?;
            let v = match (&p.kind, raw) {
                (ParamKind::Continuous { .. }, toml::Value::Float(x)) => ParamValue::Real(*x),
                (ParamKind::Continuous { .. }, toml::Value::Integer(x)) => ParamValue::Real(*x as f64),
                (ParamKind::Integer { .. }, toml::Value::Integer(x)) => ParamValue::Int(*x),
                (ParamKind::Categorical { .. }, toml::Value::String(s)) => ParamValue::Choice(s.clone()),
                _ => return Err(Error::config(&p.name, format!("unexpected value {raw}"))),
            };
            config.set(&p.name, v);
        }
        self.validate_config(&config)
            .map_err(|e| Error::config("config", e.to_string()))?;
        Ok(config)
    }
}

fn decode_one(kind: &ParamKind, block: &[f64]) -> ParamValue {
    match kind {
        ParamKind::Continuous { lo, hi, scale, open } => {
            let mut u = block[0].clamp(0.0, 1.0);
            if *open {
                u = u.clamp(OPEN_MARGIN, 1.0 - OPEN_MARGIN);
            }
            let v = match scale {
                Scale::Linear => lo + u * (hi - lo),
                Scale::Log10 => 10f64.powf(lo.log10() + u * (hi.log10() - lo.log10())),
            };
            ParamValue::Real(v.clamp(*lo, *hi))
        }
        ParamKind::Integer { lo, hi } => {
            let u = block[0].clamp(0.0, 1.0);
            let v = *lo + (u * (hi - lo) as f64).round() as i64;
            ParamValue::Int(v.clamp(*lo, *hi))
        }
        ParamKind::Categorical { choices } => {
            let mut best = 0;
            for (i, v) in block.iter().enumerate() {
                if *v > block[best] {
                    best = i;
                }
            }
            ParamValue::Choice(choices[best].clone())
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn wifi() -> SearchSpace {
        SearchSpace::preset("localisation-wifi").unwrap()
    }

    fn base_config() -> HyperConfig {
        HyperConfig::new()
            .with("units1", ParamValue::Int(12))
            .with("units2", ParamValue::Int(256))
            .with("dropout1", ParamValue::Real(0.1))
            .with("dropout2", ParamValue::Real(0.5))
            .with("learning_rate", ParamValue::Real(1e-6))
            .with("batch_size", ParamValue::Int(16))
            .with("pca_count", ParamValue::Int(7))
            .with("scaling", ParamValue::Choice("minmax".into()))
    }

    #[test]
    fn preset_dimensions() {
        let s = wifi();
        assert_eq!(s.params().len(), 8);
        assert_eq!(s.encoded_dim(), 12);
        assert_eq!(SearchSpace::preset("localisation-uwb").unwrap().encoded_dim(), 11);
        assert!(SearchSpace::preset("nope").is_err());
    }

    #[test]
    fn encode_endpoints() {
        let s = wifi();
        let e = s.encode(&base_config()).unwrap();
        assert_eq!(e[0], 0.0);
        assert_eq!(e[1], 1.0);
        assert_eq!(e[4], 0.0);
        assert_eq!(&e[7..], &[0.0, 0.0, 0.0, 1.0, 0.0]);
        let mut c = base_config();
        c.set("learning_rate", ParamValue::Real(1.0));
        assert_eq!(s.encode(&c).unwrap()[4], 1.0);
    }

    #[test]
    fn encode_rejects_out_of_range() {
        let s = wifi();
        let mut c = base_config();
        c.set("units1", ParamValue::Int(300));
        assert!(s.encode(&c).is_err());
        let mut c = base_config();
        c.set("scaling", ParamValue::Choice("zscore".into()));
        assert!(s.encode(&c).is_err());
    }

    #[test]
    fn decode_integer_midpoint() {
        let s = SearchSpace::new("b", vec![ParamSpec::integer("batch_size", 16, 128)]).unwrap();
        assert_eq!(s.decode(&[0.5]).unwrap().int("batch_size"), Some(72));
    }

    #[test]
    fn decode_tie_takes_first() {
        let s = SearchSpace::new("s", vec![ParamSpec::categorical("scaling", &SCALING_CHOICES)]).unwrap();
        let c = s.decode(&[0.3, 0.3, 0.2, 0.1, 0.1]).unwrap();
        assert_eq!(c.choice("scaling"), Some("l1"));
    }

    #[test]
    fn decode_clamps() {
        let s = wifi();
        let c = s.decode(&[2.0; 12]).unwrap();
        assert_eq!(c.int("units1"), Some(256));
        assert!(c.real("dropout1").unwrap() < 0.75);
        let c = s.decode(&[-1.0; 12]).unwrap();
        assert!(c.real("dropout1").unwrap() > 0.0);
        assert!(s.decode(&[0.5; 3]).is_err());
    }

    #[test]
    fn learning_rate_is_log_uniform() {
        let s = wifi();
        let mut r = rng::seeded(1);
        let n = 10_000;
        let below = (0..n)
            .filter(|_| s.sample_random(&mut r).real("learning_rate").unwrap() < 1e-3)
            .count();
        let frac = below as f64 / n as f64;
        assert!((frac - 0.5).abs() < 0.02, "{frac}");
    }

    #[test]
    fn batch_size_is_uniform() {
        let s = wifi();
        let mut r = rng::seeded(2);
        let n = 10_000;
        let mut counts = [0usize; 113];
        for _ in 0..n {
            counts[(s.sample_random(&mut r).int("batch_size").unwrap() - 16) as usize] += 1;
        }
        let p = 1.0 / 113.0;
        let sd = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 5.0 * sd);
        }
    }

    #[test]
    fn sampling_is_deterministic() {
        let s = wifi();
        let a: Vec<_> = {
            let mut r = rng::seeded(9);
            (0..10).map(|_| s.sample_random(&mut r)).collect()
        };
        let b: Vec<_> = {
            let mut r = rng::seeded(9);
            (0..10).map(|_| s.sample_random(&mut r)).collect()
        };
        assert_eq!(a, b);
    }

    #[test]
    fn space_toml_roundtrip() {
        let s = wifi();
        let back = SearchSpace::from_toml_str(&s.to_toml_string()).unwrap();
        assert_eq!(back, s);
    }

    #[test]
    fn space_toml_validation() {
        let text = r#"
            [[param]]
            name = "a"
            kind = "continuous"
            lo = 0.0
            hi = 1.0
            scale = "log10"
        "#;
        let err = SearchSpace::from_toml_str(text).unwrap_err();
        assert!(err.to_string().contains("`a`"));
        let dup = r#"
            [[param]]
            name = "a"
            kind = "integer"
            lo = 0
            hi = 3
            [[param]]
            name = "a"
            kind = "integer"
            lo = 0
            hi = 3
        "#;
        assert!(SearchSpace::from_toml_str(dup).is_err());
    }

    #[test]
    fn config_toml_roundtrip() {
        let s = wifi();
        let mut r = rng::seeded(4);
        for _ in 0..50 {
            let c = s.sample_random(&mut r);
            let back = s.config_from_toml(&s.config_to_toml(&c)).unwrap();
            assert_eq!(back, c);
        }
    }
}
