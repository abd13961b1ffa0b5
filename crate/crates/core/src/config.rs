//! Flat `key = value` configuration. Dotted keys address nested fields of
//! any serde config struct (`bank.train.learning_rate = 3e-3`); lists are
//! comma separated; `none` clears an optional value. Unknown keys are errors.

use std::fs;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{Map, Value};

use crate::defense::{eligible_bands, EligiblePreset};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    /// 1-based source line; 0 for command-line overrides.
    pub line: usize,
}

/// Ordered `key = value` pairs.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FlatConfig {
    pub entries: Vec<Entry>,
}

impl FlatConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries: Vec<Entry> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", i + 1)))?;
            let key = k.trim();
            if key.is_empty() {
                return Err(Error::Config(format!("line {}: empty key", i + 1)));
            }
            if let Some(prev) = entries.iter().find(|e| e.key == key) {
                return Err(Error::Config(format!("line {}: `{key}` already set on line {}", i + 1, prev.line)));
            }
            entries.push(Entry {
                key: key.into(),
                value: v.trim().into(),
                line: i + 1,
            });
        }
        Ok(FlatConfig { entries })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        FlatConfig::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Parse `key=value` command-line overrides.
    pub fn from_overrides<S: AsRef<str>>(items: &[S]) -> Result<Self> {
        let mut entries = Vec::with_capacity(items.len());
        for item in items {
            let (k, v) = item
                .as_ref()
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("override `{}` is not key=value", item.as_ref())))?;
            entries.push(Entry {
                key: k.trim().into(),
                value: v.trim().into(),
                line: 0,
            });
        }
        Ok(FlatConfig { entries })
    }

    /// Apply every entry on top of `base`.
    pub fn apply<T: Serialize + DeserializeOwned>(&self, base: &T) -> Result<T> {
        let mut tree = serde_json::to_value(base)?;
        for e in &self.entries {
            set(&mut tree, e).map_err(|msg| {
                let at = if e.line > 0 { format!("line {}: ", e.line) } else { String::new() };
                Error::Config(format!("{at}{}: {msg}", e.key))
            })?;
        }
        serde_json::from_value(tree).map_err(|err| Error::Config(format!("invalid configuration: {err}")))
    }
}

/// Defaults, then the file, then command-line overrides.
pub fn resolve<T: Serialize + DeserializeOwned>(defaults: &T, file: Option<&Path>, overrides: &[String]) -> Result<T> {
    let from_file = match file {
        Some(p) => FlatConfig::load(p)?.apply(defaults)?,
        None => serde_json::from_value(serde_json::to_value(defaults)?)?,
    };
    FlatConfig::from_overrides(overrides)?.apply(&from_file)
}

fn level_of(root: &Value) -> usize {
    let pick = |v: Option<&Value>| v.and_then(Value::as_u64);
    pick(root.pointer("/bank/level")).or(pick(root.get("level"))).unwrap_or(2) as usize
}

fn set(root: &mut Value, e: &Entry) -> std::result::Result<(), String> {
    let level = level_of(root);
    let mut node = &mut *root;
    let path: Vec<&str> = e.key.split('.').collect();
    for (i, part) in path.iter().enumerate() {
        let slot = match node {
            Value::Array(items) => part
                .parse::<usize>()
                .ok()
                .and_then(|j| items.get_mut(j))
                .ok_or_else(|| "list index out of range".to_string())?,
            _ => {
                let obj: &mut Map<String, Value> = node.as_object_mut().ok_or("not a section")?;
                obj.get_mut(*part).ok_or_else(|| "unknown key".to_string())?
            }
        };
        if i + 1 == path.len() {
            *slot = convert(slot, &e.value, part.ends_with("eligible").then_some(level))?;
            return Ok(());
        }
        node = slot;
    }
    Ok(())
}

fn scalar(current: &Value, text: &str) -> std::result::Result<Value, String> {
    let bad = |what: &str| format!("`{text}` is not {what}");
    Ok(match current {
        Value::Bool(_) => Value::Bool(text.parse().map_err(|_| bad("a boolean"))?),
        Value::Number(n) if n.is_f64() => json_f64(text).ok_or_else(|| bad("a number"))?,
        Value::Number(_) => match text.parse::<u64>() {
            Ok(v) => Value::from(v),
            Err(_) => match text.parse::<i64>() {
                Ok(v) => Value::from(v),
                Err(_) => json_f64(text).ok_or_else(|| bad("a number"))?,
            },
        },
        Value::String(_) => Value::String(text.into()),
        // Unset optional: guess from the text.
        _ => {
            if text == "none" {
                Value::Null
            } else if let Ok(b) = text.parse::<bool>() {
                Value::Bool(b)
            } else if let Ok(u) = text.parse::<u64>() {
                Value::from(u)
            } else {
                json_f64(text).unwrap_or_else(|| Value::String(text.into()))
            }
        }
    })
}

fn json_f64(text: &str) -> Option<Value> {
    text.parse::<f64>().ok().and_then(|v| serde_json::Number::from_f64(v).map(Value::Number))
}

fn convert(current: &Value, text: &str, eligible_level: Option<usize>) -> std::result::Result<Value, String> {
    match current {
        Value::Object(_) => Err("names a section, not a value".into()),
        Value::Array(items) => {
            if let Some(level) = eligible_level {
                if let Ok(preset) = EligiblePreset::parse(text) {
                    return Ok(Value::from(eligible_bands(level, preset)));
                }
            }
            let proto = items.first().cloned().unwrap_or(Value::Null);
            text.split(',')
                .map(str::trim)
                .filter(|t| !t.is_empty())
                .map(|t| match &proto {
                    // A list of tagged sections (e.g. attacks) is rebuilt from
                    // the first entry with the kind replaced.
                    Value::Object(m) if m.contains_key("kind") => {
                        let mut item = m.clone();
                        item.insert("kind".into(), Value::String(t.into()));
                        Ok(Value::Object(item))
                    }
                    Value::Object(_) => Err("list of sections; address entries as key.<index>.field".into()),
                    p => scalar(p, t),
                })
                .collect::<std::result::Result<Vec<_>, _>>()
                .map(Value::Array)
        }
        _ if text == "none" => Ok(Value::Null),
        other => scalar(other, text),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::ExperimentPlan;

    #[test]
    fn nested_keys_lists_and_comments() {
        let text = "# plan\nseed = 7\nbank.train.learning_rate = 3e-3 # lr\nk_grid = 3, 5\nsuspect_eligible = all\nmatch_threshold = none\n";
        let plan = FlatConfig::parse(text).unwrap().apply(&ExperimentPlan::default()).unwrap();
        assert_eq!(plan.seed, 7);
        assert_eq!(plan.bank.train.learning_rate, 3e-3);
        assert_eq!(plan.k_grid, vec![3, 5]);
        assert_eq!(plan.suspect_eligible, (1..=16).collect::<Vec<_>>());
        assert_eq!(plan.match_threshold, None);
    }

    #[test]
    fn attack_lists_and_indices() {
        let text = "attacks = igsm, deepfool\nattacks.1.epsilon = none\nattacks.0.step = 0.002";
        let plan = FlatConfig::parse(text).unwrap().apply(&ExperimentPlan::default()).unwrap();
        assert_eq!(plan.attacks.len(), 2);
        assert_eq!(plan.attacks[0].kind, crate::attack::AttackKind::Igsm);
        assert_eq!(plan.attacks[0].step, 0.002);
        assert_eq!(plan.attacks[1].epsilon, None);
        assert!(FlatConfig::parse("attacks.5.step = 1").unwrap().apply(&plan).is_err());
    }

    #[test]
    fn unknown_and_duplicate_keys_fail() {
        let d = ExperimentPlan::default();
        let e = FlatConfig::parse("bank.widht_scale = 1").unwrap().apply(&d).unwrap_err();
        assert!(e.to_string().contains("line 1: bank.widht_scale: unknown key"), "{e}");
        assert!(FlatConfig::parse("seed = 1\nseed = 2").is_err());
        assert!(FlatConfig::parse("seed").is_err());
        assert!(FlatConfig::parse("bank = 1").unwrap().apply(&d).is_err());
        assert!(FlatConfig::parse("seed = x").unwrap().apply(&d).is_err());
    }

    #[test]
    fn overrides_win_over_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("plan.cfg");
        fs::write(&path, "seed = 3\ndataset.identities = 12\n").unwrap();
        let plan: ExperimentPlan = resolve(&ExperimentPlan::default(), Some(&path), &["seed=9".into()]).unwrap();
        assert_eq!((plan.seed, plan.dataset.identities), (9, 12));
    }

    #[test]
    fn optional_values_round_trip() {
        let d = ExperimentPlan::default();
        let p = FlatConfig::parse("match_threshold = none").unwrap().apply(&d).unwrap();
        let p = FlatConfig::parse("match_threshold = 0.3").unwrap().apply(&p).unwrap();
        assert_eq!(p.match_threshold, Some(0.3));
    }
}
