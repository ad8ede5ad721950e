//! Statement-per-line script for a downstream correction tool.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{parse_literal, RecipeError, RecipeRule};
use crate::features::{builtin_pool, class_to_offset, reserve_features, TypeTag};
use crate::geometry::PointKind;

/// Feature-to-token mapping used when rendering tag definitions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Naming {
    pub tokens: BTreeMap<String, String>,
    pub negation_prefix: String,
    /// Layer the tag definitions select edges from.
    pub input_layer: String,
}

impl Default for Naming {
    fn default() -> Self {
        let mut tokens: BTreeMap<String, String> = BTreeMap::new();
        for f in builtin_pool().features.into_iter().chain(reserve_features()) {
            tokens.insert(f.name.clone(), f.name);
        }
        for t in TypeTag::ALL {
            tokens.insert(t.column(), format!("type_{}", t.as_str()));
        }
        Self { tokens, negation_prefix: "not_".into(), input_layer: "target".into() }
    }
}

/// Spreadsheet-style tag names: A..Z, AA, AB, ...
pub fn tag_name(mut i: usize) -> String {
    let mut s = Vec::new();
    loop {
        s.push(b'A' + (i % 26) as u8);
        if i < 26 {
            break;
        }
        i = i / 26 - 1;
    }
    s.reverse();
    String::from_utf8(s).expect("ascii")
}

fn micrometres(nm: i64) -> String {
    format!("{:.3}", nm as f64 / 1000.0)
}

/// Renders rules as tag definitions followed by one action per rule.
///
/// FRAG rules become `fragment_corner` statements and EPE rules become
/// `retarget_layer` statements; the numeric parameter is the class offset in µm.
pub fn emit_downstream(rules: &[RecipeRule], classes: i32, naming: &Naming) -> Result<String, RecipeError> {
    let mut missing = BTreeSet::new();
    for r in rules {
        for lit in &r.condition {
            let (f, _) = parse_literal(lit);
            if !naming.tokens.contains_key(f) {
                missing.insert(lit.clone());
            }
        }
    }
    if !missing.is_empty() {
        return Err(RecipeError::Unmappable(missing.into_iter().collect()));
    }
    let n_epe = rules.iter().filter(|r| r.kind == PointKind::Epe).count();
    let mut out = format!("# opc recipe: {} rules ({} EPE, {} FRAG)\n", rules.len(), n_epe, rules.len() - n_epe);
    let mut tags: BTreeMap<BTreeSet<&str>, String> = BTreeMap::new();
    let mut defs = String::new();
    let mut actions = String::new();
    for r in rules {
        let key: BTreeSet<&str> = r.condition.iter().map(String::as_str).collect();
        let tag = match tags.get(&key) {
            Some(t) => t.clone(),
            None => {
                let t = tag_name(tags.len());
                let mut line = format!("NEWTAG edge {}", naming.input_layer);
                for lit in &r.condition {
                    let (f, v) = parse_literal(lit);
                    let tok = &naming.tokens[f];
                    line.push(' ');
                    if !v {
                        line.push_str(&naming.negation_prefix);
                    }
                    line.push_str(tok);
                }
                defs.push_str(&format!("{line} -out {t}\n"));
                tags.insert(key, t.clone());
                t
            }
        };
        let um = micrometres(class_to_offset(r.class, classes)?);
        match r.kind {
            PointKind::Frag => actions.push_str(&format!("fragment_corner {tag} convex concave mid_length {um}\n")),
            PointKind::Epe => actions.push_str(&format!("retarget_layer {tag} pattern_epe {um} emulate\n")),
        }
    }
    out.push_str(&defs);
    out.push_str(&actions);
    Ok(out)
}
