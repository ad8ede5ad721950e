//! Gini CART over binary columns.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::RecipeError;
use crate::geometry::PointKind;

/// Binary feature rows with integer class labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledSet {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<bool>>,
    pub labels: Vec<i32>,
}

impl LabeledSet {
    pub fn new(columns: Vec<String>) -> Self {
        Self { columns, rows: Vec::new(), labels: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<bool>, label: i32) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
        self.labels.push(label);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Copy without the named columns.
    pub fn without(&self, drop: &[String]) -> Self {
        let keep: Vec<usize> = (0..self.columns.len()).filter(|&i| !drop.contains(&self.columns[i])).collect();
        Self {
            columns: keep.iter().map(|&i| self.columns[i].clone()).collect(),
            rows: self.rows.iter().map(|r| keep.iter().map(|&i| r[i]).collect()).collect(),
            labels: self.labels.clone(),
        }
    }

    pub fn with_column(&mut self, name: &str, values: Vec<bool>) -> Result<(), RecipeError> {
        if values.len() != self.rows.len() {
            return Err(RecipeError::Training(format!("column {name} has {} values for {} rows", values.len(), self.rows.len())));
        }
        if self.column_index(name).is_some() {
            return Err(RecipeError::Training(format!("duplicate column {name}")));
        }
        self.columns.push(name.into());
        for (r, v) in self.rows.iter_mut().zip(values) {
            r.push(v);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    pub min_samples_split: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self { max_depth: 10, min_samples_leaf: 1, min_samples_split: 2 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "node", rename_all = "lowercase")]
pub enum Node {
    Split {
        feature: String,
        samples: usize,
        impurity: f64,
        #[serde(rename = "true")]
        if_true: Box<Node>,
        #[serde(rename = "false")]
        if_false: Box<Node>,
    },
    Leaf {
        class: i32,
        samples: usize,
        /// `(class, count)` pairs in class order.
        histogram: Vec<(i32, usize)>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTree {
    pub version: u32,
    pub kind: PointKind,
    pub classes: i32,
    pub columns: Vec<String>,
    pub params: TreeParams,
    pub root: Node,
}

pub fn gini(hist: &BTreeMap<i32, usize>) -> f64 {
    let n: usize = hist.values().sum();
    if n == 0 {
        return 0.0;
    }
    let n = n as f64;
    1.0 - hist.values().map(|&c| (c as f64 / n).powi(2)).sum::<f64>()
}

fn histogram(labels: &[i32], idx: &[usize]) -> BTreeMap<i32, usize> {
    let mut h = BTreeMap::new();
    for &i in idx {
        *h.entry(labels[i]).or_insert(0) += 1;
    }
    h
}

/// Most frequent class; ties go to the class nearest zero, then the negative one.
fn majority(hist: &BTreeMap<i32, usize>) -> i32 {
    hist.iter()
        .max_by(|(a, ca), (b, cb)| ca.cmp(cb).then_with(|| (b.abs(), *b).cmp(&(a.abs(), *a))))
        .map(|(&c, _)| c)
        .unwrap_or(0)
}

/// The best split over the given rows: `(column, weighted child impurity)`.
///
/// Candidates are scanned in lexicographic column-name order and only a
/// strictly smaller impurity replaces the incumbent.
pub fn best_split(set: &LabeledSet, idx: &[usize], min_leaf: usize) -> Option<(usize, f64)> {
    let mut order: Vec<usize> = (0..set.columns.len()).collect();
    order.sort_by(|&a, &b| set.columns[a].cmp(&set.columns[b]));
    let n = idx.len() as f64;
    let parent = gini(&histogram(&set.labels, idx));
    let mut best: Option<(usize, f64)> = None;
    for c in order {
        let (t, f): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| set.rows[i][c]);
        if t.len() < min_leaf.max(1) || f.len() < min_leaf.max(1) {
            continue;
        }
        let w = t.len() as f64 / n * gini(&histogram(&set.labels, &t)) + f.len() as f64 / n * gini(&histogram(&set.labels, &f));
        if w < parent - 1e-12 && best.is_none_or(|(_, b)| w < b - 1e-12) {
            best = Some((c, w));
        }
    }
    best
}

fn grow(set: &LabeledSet, idx: &[usize], depth: usize, params: &TreeParams) -> Node {
    let hist = histogram(&set.labels, idx);
    let impurity = gini(&hist);
    let leaf = |hist: BTreeMap<i32, usize>| Node::Leaf { class: majority(&hist), samples: idx.len(), histogram: hist.into_iter().collect() };
    if depth >= params.max_depth || impurity == 0.0 || idx.len() < params.min_samples_split.max(2) {
        return leaf(hist);
    }
    match best_split(set, idx, params.min_samples_leaf) {
        None => leaf(hist),
        Some((c, _)) => {
            let (t, f): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| set.rows[i][c]);
            Node::Split {
                feature: set.columns[c].clone(),
                samples: idx.len(),
                impurity,
                if_true: Box::new(grow(set, &t, depth + 1, params)),
                if_false: Box::new(grow(set, &f, depth + 1, params)),
            }
        }
    }
}

pub fn train_tree(set: &LabeledSet, kind: PointKind, classes: i32, params: &TreeParams) -> Result<DecisionTree, RecipeError> {
    if set.is_empty() {
        return Err(RecipeError::Training("no samples".into()));
    }
    if let Some(bad) = set.labels.iter().find(|c| c.abs() > classes) {
        return Err(RecipeError::Training(format!("label {bad} outside +/-{classes}")));
    }
    if set.rows.iter().any(|r| r.len() != set.columns.len()) {
        return Err(RecipeError::Training("row width differs from the column list".into()));
    }
    let idx: Vec<usize> = (0..set.len()).collect();
    Ok(DecisionTree {
        version: DecisionTree::VERSION,
        kind,
        classes,
        columns: set.columns.clone(),
        params: *params,
        root: grow(set, &idx, 0, params),
    })
}

impl DecisionTree {
    pub const VERSION: u32 = 1;

    /// `row` is aligned with `self.columns`.
    pub fn predict(&self, row: &[bool]) -> i32 {
        let mut node = &self.root;
        loop {
            match node {
                Node::Leaf { class, .. } => return *class,
                Node::Split { feature, if_true, if_false, .. } => {
                    let c = self.columns.iter().position(|n| n == feature).expect("split feature is a column");
                    node = if row[c] { if_true } else { if_false };
                }
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn d(n: &Node) -> usize {
            match n {
                Node::Leaf { .. } => 0,
                Node::Split { if_true, if_false, .. } => 1 + d(if_true).max(d(if_false)),
            }
        }
        d(&self.root)
    }

    pub fn leaves(&self) -> usize {
        fn l(n: &Node) -> usize {
            match n {
                Node::Leaf { .. } => 1,
                Node::Split { if_true, if_false, .. } => l(if_true) + l(if_false),
            }
        }
        l(&self.root)
    }

    /// Weighted Gini decrease per column, normalized to sum 1 (all zero without splits).
    pub fn importance(&self) -> BTreeMap<String, f64> {
        fn walk(n: &Node, acc: &mut BTreeMap<String, f64>) {
            if let Node::Split { feature, samples, impurity, if_true, if_false } = n {
                let child = |c: &Node| match c {
                    Node::Leaf { samples, histogram, .. } => (*samples as f64, gini(&histogram.iter().copied().collect())),
                    Node::Split { samples, impurity, .. } => (*samples as f64, *impurity),
                };
                let (nt, gt) = child(if_true);
                let (nf, gf) = child(if_false);
                *acc.get_mut(feature).expect("split feature is a column") += *samples as f64 * impurity - nt * gt - nf * gf;
                walk(if_true, acc);
                walk(if_false, acc);
            }
        }
        let mut acc: BTreeMap<String, f64> = self.columns.iter().map(|c| (c.clone(), 0.0)).collect();
        walk(&self.root, &mut acc);
        let total: f64 = acc.values().sum();
        if total > 0.0 {
            acc.values_mut().for_each(|v| *v /= total);
        }
        acc
    }

    pub fn to_json(&self) -> Result<String, RecipeError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self, RecipeError> {
        let t: Self = serde_json::from_str(text)?;
        if t.version != Self::VERSION {
            return Err(RecipeError::Format(format!("unsupported tree version {}", t.version)));
        }
        Ok(t)
    }
}

/// Precision, recall and F1 per class with macro averages.
///
/// The confusion matrix spans every class in `-C..=C`. Macro averages run over
/// the classes that occur as a true label or a prediction; a class with no
/// predictions has precision 0, one with no support has recall 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub classes: Vec<i32>,
    /// `confusion[t][p]`: true class `classes[t]` predicted as `classes[p]`.
    pub confusion: Vec<Vec<usize>>,
    pub precision: Vec<f64>,
    pub recall: Vec<f64>,
    pub f1: Vec<f64>,
    pub support: Vec<usize>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
}

pub fn classification_report(truth: &[i32], predicted: &[i32], c: i32) -> TrainReport {
    let classes: Vec<i32> = (-c..=c).collect();
    let k = classes.len();
    let pos = |x: i32| (x + c) as usize;
    let mut confusion = vec![vec![0usize; k]; k];
    for (&t, &p) in truth.iter().zip(predicted) {
        confusion[pos(t)][pos(p)] += 1;
    }
    let support: Vec<usize> = confusion.iter().map(|r| r.iter().sum()).collect();
    let predicted_n: Vec<usize> = (0..k).map(|j| confusion.iter().map(|r| r[j]).sum()).collect();
    let mut precision = vec![0.0; k];
    let mut recall = vec![0.0; k];
    let mut f1 = vec![0.0; k];
    for i in 0..k {
        let tp = confusion[i][i] as f64;
        if predicted_n[i] > 0 {
            precision[i] = tp / predicted_n[i] as f64;
        }
        if support[i] > 0 {
            recall[i] = tp / support[i] as f64;
        }
        if precision[i] + recall[i] > 0.0 {
            f1[i] = 2.0 * precision[i] * recall[i] / (precision[i] + recall[i]);
        }
    }
    let active: Vec<usize> = (0..k).filter(|&i| support[i] > 0 || predicted_n[i] > 0).collect();
    let mean = |v: &[f64]| if active.is_empty() { 0.0 } else { active.iter().map(|&i| v[i]).sum::<f64>() / active.len() as f64 };
    let correct: usize = (0..k).map(|i| confusion[i][i]).sum();
    TrainReport {
        macro_precision: mean(&precision),
        macro_recall: mean(&recall),
        macro_f1: mean(&f1),
        accuracy: if truth.is_empty() { 0.0 } else { correct as f64 / truth.len() as f64 },
        classes,
        confusion,
        precision,
        recall,
        f1,
        support,
    }
}

/// Scores a tree on a labeled set whose columns include the tree's columns.
pub fn evaluate(tree: &DecisionTree, set: &LabeledSet) -> Result<TrainReport, RecipeError> {
    let map: Vec<usize> = tree
        .columns
        .iter()
        .map(|c| set.column_index(c).ok_or_else(|| RecipeError::UnknownFeature(c.clone())))
        .collect::<Result<_, _>>()?;
    let preds: Vec<i32> = set.rows.iter().map(|r| tree.predict(&map.iter().map(|&i| r[i]).collect::<Vec<_>>())).collect();
    Ok(classification_report(&set.labels, &preds, tree.classes))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// All eight combinations of (a, b, noise); the class depends on a and b only.
    pub(crate) fn hand_set() -> LabeledSet {
        let mut s = LabeledSet::new(vec!["a".into(), "b".into(), "noise".into()]);
        for bits in 0..8u8 {
            let (a, b, n) = (bits & 1 != 0, bits & 2 != 0, bits & 4 != 0);
            let class = match (a, b) {
                (true, true) => 1,
                (true, false) => 0,
                _ => -1,
            };
            s.push(vec![a, b, n], class);
        }
        s
    }

    #[test]
    fn gini_values() {
        let h: BTreeMap<i32, usize> = [(0, 2), (1, 2)].into();
        assert!((gini(&h) - 0.5).abs() < 1e-15);
        assert_eq!(gini(&BTreeMap::new()), 0.0);
    }

    #[test]
    fn separable_feature_gives_a_stump() {
        let mut s = LabeledSet::new(vec!["f".into(), "g".into()]);
        for i in 0..10 {
            s.push(vec![i % 2 == 0, i % 3 == 0], if i % 2 == 0 { 1 } else { -1 });
        }
        let t = train_tree(&s, PointKind::Epe, 4, &TreeParams::default()).unwrap();
        assert_eq!(t.depth(), 1);
        assert_eq!(evaluate(&t, &s).unwrap().accuracy, 1.0);
        let imp = t.importance();
        assert_eq!(imp["f"], 1.0);
        assert_eq!(imp["g"], 0.0);
    }

    #[test]
    fn single_class_is_a_leaf() {
        let mut s = LabeledSet::new(vec!["f".into()]);
        s.push(vec![true], 2);
        s.push(vec![false], 2);
        let t = train_tree(&s, PointKind::Frag, 4, &TreeParams::default()).unwrap();
        assert!(matches!(t.root, Node::Leaf { class: 2, samples: 2, .. }));
        assert!(t.importance().values().all(|&v| v == 0.0));
    }

    #[test]
    fn hand_dataset_matches_enumerated_splits() {
        let s = hand_set();
        // Weighted child impurities at the root, worked by hand:
        // a: (4*0.5 + 4*0)/8 = 0.25; b: (4*0.5 + 4*0.5)/8 = 0.5; noise: 0.625.
        let idx: Vec<usize> = (0..8).collect();
        let (c, w) = best_split(&s, &idx, 1).unwrap();
        assert_eq!(s.columns[c], "a");
        assert!((w - 0.25).abs() < 1e-12);
        let t = train_tree(&s, PointKind::Epe, 4, &TreeParams::default()).unwrap();
        let Node::Split { feature, if_true, if_false, .. } = &t.root else { panic!("root should split") };
        assert_eq!(feature, "a");
        assert!(matches!(**if_false, Node::Leaf { class: -1, .. }));
        let Node::Split { feature, .. } = &**if_true else { panic!("a-branch should split") };
        assert_eq!(feature, "b");
        let imp = t.importance();
        assert_eq!(imp["noise"], 0.0);
        // Decreases: root 8*(1 - (1/16 + 1/16 + 1/4)) - 4*0.5 = 3.0; a-branch 4*0.5 = 2.0.
        assert!((imp["a"] - 0.6).abs() < 1e-12);
        assert!((imp["b"] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn ties_go_to_the_lowest_name() {
        let mut s = LabeledSet::new(vec!["zeta".into(), "alpha".into()]);
        for i in 0..4 {
            s.push(vec![i < 2, i < 2], if i < 2 { 1 } else { 0 });
        }
        let t = train_tree(&s, PointKind::Epe, 4, &TreeParams::default()).unwrap();
        assert!(matches!(&t.root, Node::Split { feature, .. } if feature == "alpha"));
    }

    #[test]
    fn report_conventions() {
        let r = classification_report(&[1, 1, 0], &[1, 1, 0], 4);
        assert_eq!((r.macro_precision, r.macro_recall, r.macro_f1), (1.0, 1.0, 1.0));
        assert_eq!(r.classes.len(), 9);
        let r = classification_report(&[1, 1, -1, -1], &[1, 1, 1, 1], 4);
        assert!((r.macro_precision - 0.25).abs() < 1e-15);
        assert!((r.macro_recall - 0.5).abs() < 1e-15);
        for (i, row) in r.confusion.iter().enumerate() {
            assert_eq!(row.iter().sum::<usize>(), r.support[i]);
        }
    }

    #[test]
    fn json_round_trip() {
        let t = train_tree(&hand_set(), PointKind::Epe, 4, &TreeParams::default()).unwrap();
        assert_eq!(DecisionTree::from_json(&t.to_json().unwrap()).unwrap(), t);
    }
}
