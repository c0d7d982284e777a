//! Flat `key = value` run configuration.
//!
//! Keys are the field names of [`TrainConfig`]; augmentation fields may be
//! written bare (`n_segments`) or qualified (`augment.n_segments`). Three
//! extra keys exist: `k` (cluster count), `tau` (alias of `tau0`) and `seed`,
//! which seeds both training and augmentation. Lines starting with `#` and
//! blank lines are ignored.

use std::fs;
use std::path::Path;

use loster::trainer::TrainConfig;
use serde_json::{Map, Value};

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunConfig {
    pub train: TrainConfig,
    pub k: Option<usize>,
}

impl RunConfig {
    /// Applies every `key = value` line of `text`. `origin` names the source
    /// in error messages.
    pub fn apply_text(&mut self, text: &str, origin: &str) -> Result<(), String> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = split_pair(line).map_err(|e| format!("{origin}:{}: {e}", i + 1))?;
            self.set(key, value).map_err(|e| format!("{origin}:{}: {e}", i + 1))?;
        }
        Ok(())
    }

    pub fn apply_file(&mut self, path: &Path) -> Result<(), String> {
        let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        self.apply_text(&text, &path.display().to_string())
    }

    /// Applies one `key=value` pair given on the command line.
    pub fn apply_pair(&mut self, pair: &str) -> Result<(), String> {
        let (key, value) = split_pair(pair).map_err(|e| format!("--set {pair}: {e}"))?;
        self.set(key, value).map_err(|e| format!("--set {pair}: {e}"))
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
        match key {
            "k" => {
                let k = value
                    .parse::<usize>()
                    .map_err(|_| format!("k expects a positive integer, got {value:?}"))?;
                self.k = Some(k);
                return Ok(());
            }
            "seed" => {
                let seed = value
                    .parse::<u64>()
                    .map_err(|_| format!("seed expects an unsigned integer, got {value:?}"))?;
                self.train = self.train.clone().with_seed(seed);
                return Ok(());
            }
            _ => {}
        }
        let key = if key == "tau" { "tau0" } else { key };
        let mut doc = serde_json::to_value(&self.train).map_err(|e| e.to_string())?;
        let root = doc.as_object_mut().expect("TrainConfig serializes to an object");
        let slot = locate(root, key).ok_or_else(|| format!("unknown key {key:?}"))?;
        *slot = typed_like(slot, value).map_err(|e| format!("{key}: {e}"))?;
        self.train = serde_json::from_value(doc).map_err(|e| format!("{key}: {e}"))?;
        Ok(())
    }
}

fn split_pair(s: &str) -> Result<(&str, &str), String> {
    let (k, v) = s.split_once('=').ok_or("expected key=value")?;
    let (k, v) = (k.trim(), v.trim());
    if k.is_empty() {
        return Err("empty key".into());
    }
    Ok((k, v))
}

fn locate<'a>(root: &'a mut Map<String, Value>, key: &str) -> Option<&'a mut Value> {
    let bare = key.strip_prefix("augment.");
    if bare.is_none() && key != "augment" && root.contains_key(key) {
        return root.get_mut(key);
    }
    root.get_mut("augment")?.as_object_mut()?.get_mut(bare.unwrap_or(key))
}

/// Parses `text` as the same JSON kind as `current`.
fn typed_like(current: &Value, text: &str) -> Result<Value, String> {
    match current {
        Value::Bool(_) => match text {
            "true" | "1" | "yes" => Ok(Value::Bool(true)),
            "false" | "0" | "no" => Ok(Value::Bool(false)),
            _ => Err(format!("expected a boolean, got {text:?}")),
        },
        Value::Number(n) if n.is_u64() => text
            .parse::<u64>()
            .map(Value::from)
            .map_err(|_| format!("expected an unsigned integer, got {text:?}")),
        Value::Number(_) => {
            let v = text
                .parse::<f64>()
                .map_err(|_| format!("expected a number, got {text:?}"))?;
            serde_json::Number::from_f64(v)
                .map(Value::Number)
                .ok_or_else(|| format!("expected a finite number, got {text:?}"))
        }
        _ => Err("not a settable key".into()),
    }
}

/// Every settable key with its default, one `key = value` per line.
pub fn default_config_text() -> String {
    let doc = serde_json::to_value(TrainConfig::default()).expect("serializable");
    let mut out = String::from("k = <number of clusters>\n");
    for (key, value) in doc.as_object().expect("object") {
        if let Value::Object(inner) = value {
            for (sub, v) in inner {
                out.push_str(&format!("{key}.{sub} = {v}\n"));
            }
        } else {
            out.push_str(&format!("{key} = {value}\n"));
        }
    }
    out
}
