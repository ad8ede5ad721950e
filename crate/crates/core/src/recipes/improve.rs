//! Pool refresh: drop features the tree never uses and try replacements.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::tree::{evaluate, train_tree, DecisionTree, LabeledSet, TreeParams};
use super::RecipeError;
use crate::geometry::PointKind;

/// Supplies replacement features and their values.
pub trait FeatureSource {
    /// Next candidate whose name is not in `exclude`; `None` when exhausted.
    fn next_feature(&mut self, exclude: &[String]) -> Option<String>;
    /// Values of a feature for the training rows and the held-out rows.
    fn column(&mut self, name: &str) -> Result<(Vec<bool>, Vec<bool>), RecipeError>;
}

/// A source with nothing to offer.
pub struct NoReplacements;

impl FeatureSource for NoReplacements {
    fn next_feature(&mut self, _: &[String]) -> Option<String> {
        None
    }

    fn column(&mut self, name: &str) -> Result<(Vec<bool>, Vec<bool>), RecipeError> {
        Err(RecipeError::UnknownFeature(name.into()))
    }
}

/// Replacements drawn in order from precomputed columns.
#[derive(Debug, Clone, Default)]
pub struct TableSource {
    pub order: Vec<String>,
    pub train: BTreeMap<String, Vec<bool>>,
    pub test: BTreeMap<String, Vec<bool>>,
}

impl FeatureSource for TableSource {
    fn next_feature(&mut self, exclude: &[String]) -> Option<String> {
        self.order.iter().find(|n| !exclude.contains(n)).cloned()
    }

    fn column(&mut self, name: &str) -> Result<(Vec<bool>, Vec<bool>), RecipeError> {
        match (self.train.get(name), self.test.get(name)) {
            (Some(a), Some(b)) => Ok((a.clone(), b.clone())),
            _ => Err(RecipeError::UnknownFeature(name.into())),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundAudit {
    pub round: usize,
    pub columns: Vec<String>,
    pub importance: BTreeMap<String, f64>,
    pub train_accuracy: f64,
    pub test_accuracy: f64,
    pub test_macro_precision: f64,
    pub removed: Vec<String>,
    pub added: Vec<String>,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ImproveOutcome {
    pub tree: DecisionTree,
    pub train: LabeledSet,
    pub test: LabeledSet,
    pub audit: Vec<RoundAudit>,
}

/// Up to `rounds` rounds of train, drop zero-importance columns, add replacements.
///
/// Columns listed in `protected` are never dropped. The returned tree is
/// trained on the final column set; the loop stops early once every column
/// carries weight.
#[allow(clippy::too_many_arguments)]
pub fn self_improve(
    train: &LabeledSet,
    test: &LabeledSet,
    kind: PointKind,
    classes: i32,
    params: &TreeParams,
    rounds: usize,
    protected: &[String],
    source: &mut dyn FeatureSource,
) -> Result<ImproveOutcome, RecipeError> {
    if rounds == 0 {
        return Err(RecipeError::Training("at least one round is required".into()));
    }
    if train.columns != test.columns {
        return Err(RecipeError::Training("training and held-out columns differ".into()));
    }
    let mut train = train.clone();
    let mut test = test.clone();
    let mut seen: Vec<String> = train.columns.clone();
    let mut audit = Vec::new();
    for round in 1..=rounds {
        let tree = train_tree(&train, kind, classes, params)?;
        let importance = tree.importance();
        let train_report = evaluate(&tree, &train)?;
        let test_report = evaluate(&tree, &test)?;
        let removed: Vec<String> = train
            .columns
            .iter()
            .filter(|c| importance[*c] == 0.0 && !protected.contains(c))
            .cloned()
            .collect();
        let mut entry = RoundAudit {
            round,
            columns: train.columns.clone(),
            importance,
            train_accuracy: train_report.accuracy,
            test_accuracy: test_report.accuracy,
            test_macro_precision: test_report.macro_precision,
            removed: removed.clone(),
            added: Vec::new(),
            warning: None,
        };
        if removed.is_empty() {
            audit.push(entry);
            return Ok(ImproveOutcome { tree, train, test, audit });
        }
        train = train.without(&removed);
        test = test.without(&removed);
        for _ in 0..removed.len() {
            let Some(name) = source.next_feature(&seen) else {
                entry.warning = Some("replacement features exhausted".into());
                log::warn!("round {round}: replacement features exhausted");
                break;
            };
            let (a, b) = source.column(&name)?;
            train.with_column(&name, a)?;
            test.with_column(&name, b)?;
            seen.push(name.clone());
            entry.added.push(name);
        }
        let exhausted = entry.warning.is_some() && entry.added.is_empty();
        audit.push(entry);
        if exhausted {
            break;
        }
    }
    let tree = train_tree(&train, kind, classes, params)?;
    Ok(ImproveOutcome { tree, train, test, audit })
}

#[cfg(test)]
mod tests {
    use super::super::tree::evaluate;
    use super::*;

    fn hand_set() -> LabeledSet {
        let mut s = LabeledSet::new(vec!["a".into(), "b".into(), "noise".into()]);
        for bits in 0..8u8 {
            let (a, b, n) = (bits & 1 != 0, bits & 2 != 0, bits & 4 != 0);
            s.push(vec![a, b, n], if a && b { 1 } else if a { 0 } else { -1 });
        }
        s
    }

    #[test]
    fn noise_is_dropped_in_round_one() {
        let s = hand_set();
        let out = self_improve(&s, &s, PointKind::Epe, 4, &TreeParams::default(), 3, &[], &mut NoReplacements).unwrap();
        assert_eq!(out.audit[0].removed, vec!["noise".to_string()]);
        assert!(out.audit[0].removed.iter().all(|f| out.audit[0].importance[f] == 0.0));
        assert_eq!(out.train.columns, vec!["a".to_string(), "b".to_string()]);
        // Retraining without the noise column reproduces the same accuracy.
        let acc = evaluate(&out.tree, &out.test).unwrap().accuracy;
        assert!(acc >= out.audit[0].test_accuracy);
    }

    #[test]
    fn stops_when_nothing_is_unused() {
        let s = hand_set().without(&["noise".to_string()]);
        let out = self_improve(&s, &s, PointKind::Epe, 4, &TreeParams::default(), 5, &[], &mut NoReplacements).unwrap();
        assert_eq!(out.audit.len(), 1);
        assert!(out.audit[0].removed.is_empty());
    }

    #[test]
    fn replacements_come_from_the_table() {
        let s = hand_set();
        let mut src = TableSource::default();
        src.order = vec!["a".into(), "extra".into()];
        let col: Vec<bool> = s.rows.iter().map(|r| r[0]).collect();
        src.train.insert("extra".into(), col.clone());
        src.test.insert("extra".into(), col);
        let out = self_improve(&s, &s, PointKind::Epe, 4, &TreeParams::default(), 1, &["b".to_string()], &mut src).unwrap();
        assert_eq!(out.audit[0].added, vec!["extra".to_string()]);
        assert!(out.train.columns.contains(&"extra".to_string()));
    }
}
