//! Parsing of model replies.

use std::collections::BTreeMap;

use serde_json::{Map, Value};

use crate::AnnotatorError;

/// The outermost JSON object in a reply, tolerating code fences and chatter.
pub fn extract_object(raw: &str) -> Result<Map<String, Value>, AnnotatorError> {
    let schema = |reason: &str| AnnotatorError::Schema { reason: reason.into(), raw: raw.into() };
    let start = raw.find('{').ok_or_else(|| schema("no JSON object"))?;
    let end = raw.rfind('}').ok_or_else(|| schema("no JSON object"))?;
    if end < start {
        return Err(schema("no JSON object"));
    }
    match serde_json::from_str::<Value>(&raw[start..=end]) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(schema("reply is not an object")),
        Err(e) => Err(schema(&format!("invalid JSON: {e}"))),
    }
}

fn is_feature_name(s: &str) -> bool {
    !s.is_empty()
        && s.len() <= 64
        && s.starts_with(|c: char| c.is_ascii_lowercase())
        && s.chars().all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

/// Features proposed by one mining reply, in reply order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MinedReply {
    pub features: Vec<(String, String)>,
    pub types_description: Option<String>,
    pub malformed: usize,
}

/// Reads the `features` and `explain` maps. A feature needs a valid name, a
/// boolean value and a non-empty explanation; anything else is counted as malformed.
pub fn parse_mining(raw: &str) -> Result<MinedReply, AnnotatorError> {
    let obj = extract_object(raw)?;
    let schema = |reason: &str| AnnotatorError::Schema { reason: reason.into(), raw: raw.into() };
    let features = obj.get("features").and_then(Value::as_object).ok_or_else(|| schema("missing `features` map"))?;
    let explain = obj.get("explain").and_then(Value::as_object).ok_or_else(|| schema("missing `explain` map"))?;
    let mut out = MinedReply {
        types_description: explain.get("types").and_then(Value::as_str).map(str::to_string),
        ..Default::default()
    };
    for (name, v) in features {
        if name == "types" {
            continue;
        }
        match (v, explain.get(name).and_then(Value::as_str)) {
            (Value::Bool(_), Some(d)) if is_feature_name(name) && !d.trim().is_empty() => {
                out.features.push((name.clone(), d.trim().to_string()));
            }
            _ => out.malformed += 1,
        }
    }
    // Explanations for features the reply never valued.
    out.malformed += explain.keys().filter(|k| *k != "types" && !features.contains_key(*k)).count();
    Ok(out)
}

/// Values from one labeling reply. Accepts `{"features": {...}}` or a flat map.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabelReply {
    pub types: Option<String>,
    pub values: BTreeMap<String, bool>,
}

pub fn parse_labels(raw: &str) -> Result<LabelReply, AnnotatorError> {
    let obj = extract_object(raw)?;
    let map = match obj.get("features") {
        Some(Value::Object(m)) => m.clone(),
        Some(_) => return Err(AnnotatorError::Schema { reason: "`features` is not a map".into(), raw: raw.into() }),
        None => obj,
    };
    let mut out = LabelReply::default();
    for (k, v) in map {
        match (k.as_str(), v) {
            ("types", Value::String(s)) => out.types = Some(s),
            (_, Value::Bool(b)) => {
                out.values.insert(k, b);
            }
            (_, Value::String(s)) if s.eq_ignore_ascii_case("true") || s.eq_ignore_ascii_case("false") => {
                out.values.insert(k, s.eq_ignore_ascii_case("true"));
            }
            _ => {}
        }
    }
    Ok(out)
}
