//! Decision-tree summaries of learned movements and the recipes derived from them.

mod downstream;
mod improve;
mod tree;

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use downstream::{emit_downstream, tag_name, Naming};
pub use improve::{self_improve, FeatureSource, ImproveOutcome, NoReplacements, RoundAudit, TableSource};
pub use tree::{
    best_split, classification_report, evaluate, gini, train_tree, DecisionTree, LabeledSet, Node, TrainReport, TreeParams,
};

use crate::features::{column_names, FeatureError, FeaturePool, FeatureVector, Labeler};
use crate::geometry::{ClipFragmentation, LayoutClip, PointKind};

#[derive(Debug, Error)]
pub enum RecipeError {
    #[error("training: {0}")]
    Training(String),
    #[error("rule references unknown feature `{0}`")]
    UnknownFeature(String),
    #[error("rule {index}: {reason}")]
    InvalidRule { index: usize, reason: String },
    #[error("no downstream mapping for literal(s): {}", .0.join(", "))]
    Unmappable(Vec<String>),
    #[error("format: {0}")]
    Format(String),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Features(#[from] FeatureError),
}

/// A conjunction of feature literals with the class to apply.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecipeRule {
    pub condition: Vec<String>,
    #[serde(rename = "type")]
    pub kind: PointKind,
    pub class: i32,
}

/// Splits a literal into `(feature, expected value)`.
pub fn parse_literal(lit: &str) -> (&str, bool) {
    match lit.strip_prefix("not ") {
        Some(f) => (f.trim(), false),
        None => (lit.trim(), true),
    }
}

impl RecipeRule {
    pub fn matches(&self, columns: &[String], row: &[bool]) -> Result<bool, RecipeError> {
        for lit in &self.condition {
            let (f, want) = parse_literal(lit);
            let i = columns.iter().position(|c| c == f).ok_or_else(|| RecipeError::UnknownFeature(f.into()))?;
            if row[i] != want {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// One rule per leaf, in depth-first order with the true branch first.
pub fn emit_rules(tree: &DecisionTree) -> Vec<RecipeRule> {
    fn walk(n: &Node, path: &mut Vec<String>, kind: PointKind, out: &mut Vec<RecipeRule>) {
        match n {
            Node::Leaf { class, .. } => out.push(RecipeRule { condition: path.clone(), kind, class: *class }),
            Node::Split { feature, if_true, if_false, .. } => {
                path.push(feature.clone());
                walk(if_true, path, kind, out);
                path.pop();
                path.push(format!("not {feature}"));
                walk(if_false, path, kind, out);
                path.pop();
            }
        }
    }
    let mut out = Vec::new();
    walk(&tree.root, &mut Vec::new(), tree.kind, &mut out);
    out
}

pub fn emit_jsonl(rules: &[RecipeRule]) -> String {
    rules.iter().map(|r| serde_json::to_string(r).expect("rule serializes") + "\n").collect()
}

pub fn parse_jsonl(text: &str) -> Result<Vec<RecipeRule>, RecipeError> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(RecipeError::from))
        .collect()
}

/// Checks literal references and internal consistency of every rule.
pub fn validate_rules(rules: &[RecipeRule], columns: &[String], classes: i32) -> Result<(), RecipeError> {
    for (index, r) in rules.iter().enumerate() {
        let mut seen: BTreeSet<(&str, bool)> = BTreeSet::new();
        for lit in &r.condition {
            let (f, v) = parse_literal(lit);
            if !columns.iter().any(|c| c == f) {
                return Err(RecipeError::UnknownFeature(f.into()));
            }
            if seen.contains(&(f, !v)) {
                return Err(RecipeError::InvalidRule { index, reason: format!("contradictory literals on {f}") });
            }
            seen.insert((f, v));
        }
        if r.class.abs() > classes {
            return Err(RecipeError::InvalidRule { index, reason: format!("class {} outside +/-{classes}", r.class) });
        }
    }
    Ok(())
}

/// Class from the first rule of the point's kind whose condition holds.
/// Rules emitted from one tree are mutually exclusive, so order does not matter.
pub fn apply_rules(rules: &[RecipeRule], kind: PointKind, columns: &[String], row: &[bool]) -> Result<Option<i32>, RecipeError> {
    for r in rules.iter().filter(|r| r.kind == kind) {
        if r.matches(columns, row)? {
            return Ok(Some(r.class));
        }
    }
    Ok(None)
}

/// Training rows for one point kind from labeled vectors and their classes.
pub fn labeled_set(pool: &FeaturePool, vectors: &[FeatureVector], classes: &[i32], kind: PointKind) -> LabeledSet {
    let mut set = LabeledSet::new(column_names(pool));
    for (v, &c) in vectors.iter().zip(classes) {
        if v.kind == kind {
            set.push(v.columns(), c);
        }
    }
    set
}

/// Per-point classes for a clip from a recipe. Points no rule covers get class 0.
pub fn recipe_classes(
    rules: &[RecipeRule],
    pool: &FeaturePool,
    clip: &LayoutClip,
    frag: &ClipFragmentation,
) -> Result<Vec<i32>, RecipeError> {
    let labeler = Labeler::new(clip, pool.thresholds);
    let columns = column_names(pool);
    frag.points
        .iter()
        .map(|p| {
            let v = labeler.label(p, pool)?;
            Ok(apply_rules(rules, p.kind, &columns, &v.columns())?.unwrap_or(0))
        })
        .collect()
}
