//! CART classification trees that explain cluster labels, with root-to-leaf
//! rule extraction and attribute importance.

use std::collections::BTreeMap;
use std::fmt::{self, Display, Write as _};

use serde::{Deserialize, Serialize};

use crate::data::{AttributeKind, Dataset};
use crate::error::{Error, Result};

const GAIN_EPS: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureKind {
    Numeric,
    /// Indicator column for `attribute == category`.
    Dummy {
        category: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureColumn {
    pub name: String,
    /// Source attribute.
    pub attribute: String,
    #[serde(flatten)]
    pub kind: FeatureKind,
}

/// Column-major feature table: numeric attributes as-is, categorical
/// attributes as 0/1 dummy columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    columns: Vec<FeatureColumn>,
    n_rows: usize,
    values: Vec<f64>,
}

impl FeatureMatrix {
    pub fn new(columns: Vec<FeatureColumn>, column_values: Vec<Vec<f64>>) -> Result<Self> {
        if columns.len() != column_values.len() {
            return Err(Error::Input(
                "one value vector per feature column is required".into(),
            ));
        }
        let n_rows = column_values.first().map_or(0, Vec::len);
        if column_values.iter().any(|c| c.len() != n_rows) {
            return Err(Error::Input("feature columns differ in length".into()));
        }
        Ok(Self {
            columns,
            n_rows,
            values: column_values.concat(),
        })
    }

    /// Features in schema order; each categorical attribute expands to one
    /// dummy per category.
    pub fn from_dataset(d: &Dataset) -> Self {
        let mut columns = Vec::new();
        let mut values = Vec::new();
        for (k, attr) in d.schema.attributes().iter().enumerate() {
            match &attr.kind {
                AttributeKind::Numeric { .. } => {
                    columns.push(FeatureColumn {
                        name: attr.name.clone(),
                        attribute: attr.name.clone(),
                        kind: FeatureKind::Numeric,
                    });
                    values.push(
                        d.records
                            .iter()
                            .map(|r| r.values[k].as_number().unwrap_or(0.0))
                            .collect(),
                    );
                }
                AttributeKind::Categorical { categories } => {
                    for c in categories {
                        columns.push(FeatureColumn {
                            name: format!("{}_{}", attr.name, c),
                            attribute: attr.name.clone(),
                            kind: FeatureKind::Dummy {
                                category: c.clone(),
                            },
                        });
                        values.push(
                            d.records
                                .iter()
                                .map(|r| {
                                    if r.values[k].as_category() == Some(c) {
                                        1.0
                                    } else {
                                        0.0
                                    }
                                })
                                .collect(),
                        );
                    }
                }
            }
        }
        Self::new(columns, values).expect("columns built from one dataset")
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }

    pub fn columns(&self) -> &[FeatureColumn] {
        &self.columns
    }

    pub fn column(&self, c: usize) -> &[f64] {
        &self.values[c * self.n_rows..(c + 1) * self.n_rows]
    }

    #[inline]
    pub fn value(&self, row: usize, c: usize) -> f64 {
        self.values[c * self.n_rows + row]
    }
}

fn gini_from_counts(counts: &[usize], total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    let t = total as f64;
    1.0 - counts.iter().map(|&c| (c as f64 / t).powi(2)).sum::<f64>()
}

/// Gini impurity `1 - sum_c p_c^2` of a label multiset.
pub fn gini<L: Ord>(labels: &[L]) -> Result<f64> {
    if labels.is_empty() {
        return Err(Error::Input("gini impurity of an empty label set".into()));
    }
    let mut counts: BTreeMap<&L, usize> = BTreeMap::new();
    for l in labels {
        *counts.entry(l).or_default() += 1;
    }
    Ok(gini_from_counts(
        &counts.into_values().collect::<Vec<_>>(),
        labels.len(),
    ))
}

/// A candidate binary split: rows with `feature <= threshold` go left.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
    /// Parent impurity minus the size-weighted child impurity.
    pub gain: f64,
    pub left_impurity: f64,
    pub right_impurity: f64,
    pub left_count: usize,
    pub right_count: usize,
}

/// Best Gini split of `rows` over the given feature columns. Thresholds are
/// midpoints between consecutive distinct values; equal gains keep the
/// earlier feature, then the lower threshold.
fn search_split(
    features: &FeatureMatrix,
    labels: &[usize],
    n_classes: usize,
    rows: &[usize],
    candidates: &[usize],
    min_samples_leaf: usize,
) -> Option<SplitCandidate> {
    let n = rows.len();
    if n < 2 {
        return None;
    }
    let mut parent = vec![0usize; n_classes];
    for &r in rows {
        parent[labels[r]] += 1;
    }
    let parent_gini = gini_from_counts(&parent, n);
    if parent_gini <= GAIN_EPS {
        return None;
    }
    let parent_sq: f64 = parent.iter().map(|&c| (c * c) as f64).sum();
    let min_leaf = min_samples_leaf.max(1);

    let mut best: Option<SplitCandidate> = None;
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(n);
    let mut left = vec![0usize; n_classes];
    for &f in candidates {
        let column = features.column(f);
        order.clear();
        order.extend(rows.iter().map(|&r| (column[r], labels[r])));
        order.sort_by(|a, b| a.0.total_cmp(&b.0));
        if order[0].0 == order[n - 1].0 {
            continue;
        }
        left.iter_mut().for_each(|c| *c = 0);
        let (mut left_sq, mut right_sq) = (0.0f64, parent_sq);
        for p in 0..n - 1 {
            let class = order[p].1;
            let right_c = parent[class] - left[class];
            left_sq += (2 * left[class] + 1) as f64;
            right_sq -= (2 * right_c - 1) as f64;
            left[class] += 1;
            let (lo, hi) = (order[p].0, order[p + 1].0);
            if lo == hi {
                continue;
            }
            let n_left = p + 1;
            let n_right = n - n_left;
            if n_left < min_leaf || n_right < min_leaf {
                continue;
            }
            let gl = 1.0 - left_sq / (n_left * n_left) as f64;
            let gr = 1.0 - right_sq / (n_right * n_right) as f64;
            let weighted = (n_left as f64 * gl + n_right as f64 * gr) / n as f64;
            let gain = parent_gini - weighted;
            if gain <= GAIN_EPS {
                continue;
            }
            if best.is_none_or(|b| gain > b.gain + GAIN_EPS) {
                let mid = lo + (hi - lo) / 2.0;
                best = Some(SplitCandidate {
                    feature: f,
                    threshold: if mid < hi { mid } else { lo },
                    gain,
                    left_impurity: gl.max(0.0),
                    right_impurity: gr.max(0.0),
                    left_count: n_left,
                    right_count: n_right,
                });
            }
        }
    }
    best
}

/// Best split over all features of the given rows, or `None` when no split
/// lowers the impurity.
pub fn best_split(
    features: &FeatureMatrix,
    labels: &[usize],
    rows: &[usize],
    min_samples_leaf: usize,
) -> Option<SplitCandidate> {
    let n_classes = labels.iter().max().map_or(0, |m| m + 1);
    let all: Vec<usize> = (0..features.n_features()).collect();
    search_split(features, labels, n_classes, rows, &all, min_samples_leaf)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_leaf: usize,
    /// Minimum of `(node samples / total samples) * gain` for a split.
    pub min_impurity_decrease: f64,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: 12,
            min_samples_leaf: 1,
            min_impurity_decrease: 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    Leaf {
        /// Class index of the majority label.
        prediction: usize,
        samples: usize,
        histogram: Vec<usize>,
    },
    Split {
        feature: usize,
        threshold: f64,
        samples: usize,
        impurity: f64,
        histogram: Vec<usize>,
        /// Weighted impurity decrease contributed by this split.
        gain: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
}

impl TreeNode {
    pub fn samples(&self) -> usize {
        match self {
            TreeNode::Leaf { samples, .. } | TreeNode::Split { samples, .. } => *samples,
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn n_leaves(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => left.n_leaves() + right.n_leaves(),
        }
    }
}

/// A fitted tree together with its feature layout and class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct DecisionTree<L> {
    pub root: TreeNode,
    pub columns: Vec<FeatureColumn>,
    /// Sorted distinct labels; leaf predictions index into this.
    pub classes: Vec<L>,
    pub n_train: usize,
}

struct Grower<'a> {
    features: &'a FeatureMatrix,
    labels: &'a [usize],
    n_classes: usize,
    params: &'a TreeParams,
    all_features: Vec<usize>,
    n_total: usize,
}

impl Grower<'_> {
    fn leaf(&self, histogram: Vec<usize>, samples: usize) -> TreeNode {
        // max_by_key keeps the last maximum; scan for the first instead.
        let mut prediction = 0;
        for (c, &count) in histogram.iter().enumerate() {
            if count > histogram[prediction] {
                prediction = c;
            }
        }
        TreeNode::Leaf {
            prediction,
            samples,
            histogram,
        }
    }

    fn grow(&self, rows: Vec<usize>, depth: usize, forced: Option<&[usize]>) -> TreeNode {
        let mut histogram = vec![0usize; self.n_classes];
        for &r in &rows {
            histogram[self.labels[r]] += 1;
        }
        let samples = rows.len();
        if depth >= self.params.max_depth {
            return self.leaf(histogram, samples);
        }
        let split = forced
            .and_then(|f| {
                search_split(
                    self.features,
                    self.labels,
                    self.n_classes,
                    &rows,
                    f,
                    self.params.min_samples_leaf,
                )
            })
            .or_else(|| {
                search_split(
                    self.features,
                    self.labels,
                    self.n_classes,
                    &rows,
                    &self.all_features,
                    self.params.min_samples_leaf,
                )
            });
        let Some(split) = split else {
            return self.leaf(histogram, samples);
        };
        let weighted_gain = samples as f64 / self.n_total as f64 * split.gain;
        if weighted_gain < self.params.min_impurity_decrease {
            return self.leaf(histogram, samples);
        }
        let column = self.features.column(split.feature);
        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
            rows.iter().partition(|&&r| column[r] <= split.threshold);
        TreeNode::Split {
            feature: split.feature,
            threshold: split.threshold,
            samples,
            impurity: gini_from_counts(&histogram, samples),
            histogram,
            gain: weighted_gain,
            left: Box::new(self.grow(left_rows, depth + 1, None)),
            right: Box::new(self.grow(right_rows, depth + 1, None)),
        }
    }
}

fn index_labels<L: Ord + Clone>(labels: &[L]) -> (Vec<L>, Vec<usize>) {
    let mut classes: Vec<L> = labels.to_vec();
    classes.sort();
    classes.dedup();
    let indices = labels
        .iter()
        .map(|l| classes.binary_search(l).expect("label is a class"))
        .collect();
    (classes, indices)
}

/// Grows a CART tree by recursive best splits until nodes are pure, the
/// depth or leaf-size limits are hit, or no split lowers the impurity.
pub fn build_tree<L: Ord + Clone>(
    features: &FeatureMatrix,
    labels: &[L],
    params: &TreeParams,
) -> Result<DecisionTree<L>> {
    build(features, labels, params, None)
}

/// Like [`build_tree`], but the root split is searched only among the
/// columns of `attribute` (falling back to all columns if none of them
/// separates anything).
pub fn build_tree_rooted<L: Ord + Clone>(
    features: &FeatureMatrix,
    labels: &[L],
    params: &TreeParams,
    attribute: &str,
) -> Result<DecisionTree<L>> {
    let root: Vec<usize> = features
        .columns
        .iter()
        .enumerate()
        .filter(|(_, c)| c.attribute.eq_ignore_ascii_case(attribute.trim()))
        .map(|(i, _)| i)
        .collect();
    if root.is_empty() {
        return Err(Error::Schema(format!(
            "no feature columns for root attribute '{attribute}'"
        )));
    }
    build(features, labels, params, Some(&root))
}

fn build<L: Ord + Clone>(
    features: &FeatureMatrix,
    labels: &[L],
    params: &TreeParams,
    forced_root: Option<&[usize]>,
) -> Result<DecisionTree<L>> {
    if labels.len() != features.n_rows() {
        return Err(Error::Input(format!(
            "{} labels for {} feature rows",
            labels.len(),
            features.n_rows()
        )));
    }
    if labels.is_empty() {
        return Err(Error::Input("cannot fit a tree on zero records".into()));
    }
    let (classes, indices) = index_labels(labels);
    let grower = Grower {
        features,
        labels: &indices,
        n_classes: classes.len(),
        params,
        all_features: (0..features.n_features()).collect(),
        n_total: labels.len(),
    };
    let root = grower.grow((0..labels.len()).collect(), 0, forced_root);
    Ok(DecisionTree {
        root,
        columns: features.columns.clone(),
        classes,
        n_train: labels.len(),
    })
}

impl<L> DecisionTree<L> {
    /// Index of the leaf (in left-first depth-first order) reached by `row`.
    fn leaf_index(&self, features: &FeatureMatrix, row: usize) -> (usize, &TreeNode) {
        fn walk<'t>(
            node: &'t TreeNode,
            features: &FeatureMatrix,
            row: usize,
            offset: usize,
        ) -> (usize, &'t TreeNode) {
            match node {
                TreeNode::Leaf { .. } => (offset, node),
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => {
                    if features.value(row, *feature) <= *threshold {
                        walk(left, features, row, offset)
                    } else {
                        walk(right, features, row, offset + left.n_leaves())
                    }
                }
            }
        }
        walk(&self.root, features, row, 0)
    }

    pub fn predict(&self, features: &FeatureMatrix, row: usize) -> &L {
        match self.leaf_index(features, row).1 {
            TreeNode::Leaf { prediction, .. } => &self.classes[*prediction],
            TreeNode::Split { .. } => unreachable!("walk ends at a leaf"),
        }
    }

    /// The attribute tested at the root, if the tree has any split.
    pub fn root_attribute(&self) -> Option<&str> {
        match &self.root {
            TreeNode::Split { feature, .. } => Some(&self.columns[*feature].attribute),
            TreeNode::Leaf { .. } => None,
        }
    }
}

impl<L: PartialEq> DecisionTree<L> {
    pub fn accuracy(&self, features: &FeatureMatrix, labels: &[L]) -> f64 {
        if labels.is_empty() {
            return 0.0;
        }
        let hits = labels
            .iter()
            .enumerate()
            .filter(|(row, l)| self.predict(features, *row) == *l)
            .count();
        hits as f64 / labels.len() as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Comparator {
    Le,
    Gt,
    Eq,
    Ne,
}

impl Display for Comparator {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Comparator::Le => "<=",
            Comparator::Gt => ">",
            Comparator::Eq => "=",
            Comparator::Ne => "!=",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ConditionValue {
    Number(f64),
    Category(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Condition {
    pub attribute: String,
    pub comparator: Comparator,
    pub value: ConditionValue,
    /// Feature column the condition is evaluated on.
    pub feature: usize,
}

impl Condition {
    pub fn holds(&self, features: &FeatureMatrix, row: usize) -> bool {
        let x = features.value(row, self.feature);
        match (self.comparator, &self.value) {
            (Comparator::Le, ConditionValue::Number(t)) => x <= *t,
            (Comparator::Gt, ConditionValue::Number(t)) => x > *t,
            (Comparator::Eq, _) => x > 0.5,
            (Comparator::Ne, _) => x <= 0.5,
            _ => false,
        }
    }
}

impl Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.value {
            ConditionValue::Number(v) => {
                write!(f, "{} {} {}", self.attribute, self.comparator, round6(*v))
            }
            ConditionValue::Category(c) => {
                write!(f, "{} {} {}", self.attribute, self.comparator, c)
            }
        }
    }
}

fn round6(v: f64) -> f64 {
    (v * 1e6).round() / 1e6
}

/// One root-to-leaf path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRule<L> {
    pub conditions: Vec<Condition>,
    pub predicted_cluster: L,
    /// Training records reaching the leaf.
    pub support: usize,
    /// Of those, records labeled with the predicted cluster.
    pub class_support: usize,
    /// `class_support` over the size of the predicted cluster.
    pub coverage: f64,
    /// `class_support` over `support`.
    pub precision: f64,
}

impl<L> DecisionRule<L> {
    pub fn matches(&self, features: &FeatureMatrix, row: usize) -> bool {
        self.conditions.iter().all(|c| c.holds(features, row))
    }
}

impl<L: Display> Display for DecisionRule<L> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let conditions = if self.conditions.is_empty() {
            "(all records)".to_string()
        } else {
            self.conditions
                .iter()
                .map(ToString::to_string)
                .collect::<Vec<_>>()
                .join(" AND ")
        };
        write!(
            f,
            "{conditions} -> cluster {} | support {} | coverage {:.1}% | precision {:.1}%",
            self.predicted_cluster,
            self.support,
            self.coverage * 100.0,
            self.precision * 100.0
        )
    }
}

/// Path step: feature, threshold, and whether the row went left.
type Step = (usize, f64, bool);

/// For a two-category attribute ruled out on one side only, the column of
/// the remaining category.
fn binary_complement(columns: &[FeatureColumn], attribute: &str, steps: &[&Step]) -> Vec<usize> {
    let all: Vec<usize> = (0..columns.len())
        .filter(|&c| {
            columns[c].attribute == attribute
                && matches!(columns[c].kind, FeatureKind::Dummy { .. })
        })
        .collect();
    if all.len() != 2 {
        return Vec::new();
    }
    all.into_iter()
        .filter(|c| steps.iter().all(|(f, _, _)| f != c))
        .collect()
}

fn merge_path(columns: &[FeatureColumn], path: &[Step]) -> Vec<Condition> {
    // Attributes in order of first appearance.
    let mut order: Vec<&str> = Vec::new();
    for &(f, _, _) in path {
        let a = columns[f].attribute.as_str();
        if !order.contains(&a) {
            order.push(a);
        }
    }
    let mut conditions = Vec::new();
    for attribute in order {
        let steps: Vec<&Step> = path
            .iter()
            .filter(|(f, _, _)| columns[*f].attribute == attribute)
            .collect();
        match columns[steps[0].0].kind {
            FeatureKind::Numeric => {
                let mut upper: Option<(f64, usize)> = None;
                let mut lower: Option<(f64, usize)> = None;
                for &&(f, t, went_left) in &steps {
                    if went_left {
                        if upper.is_none_or(|(u, _)| t < u) {
                            upper = Some((t, f));
                        }
                    } else if lower.is_none_or(|(l, _)| t > l) {
                        lower = Some((t, f));
                    }
                }
                if let Some((t, f)) = lower {
                    conditions.push(Condition {
                        attribute: attribute.to_string(),
                        comparator: Comparator::Gt,
                        value: ConditionValue::Number(t),
                        feature: f,
                    });
                }
                if let Some((t, f)) = upper {
                    conditions.push(Condition {
                        attribute: attribute.to_string(),
                        comparator: Comparator::Le,
                        value: ConditionValue::Number(t),
                        feature: f,
                    });
                }
            }
            FeatureKind::Dummy { .. } => {
                let category = |f: usize| match &columns[f].kind {
                    FeatureKind::Dummy { category } => category.clone(),
                    FeatureKind::Numeric => unreachable!("dummy columns share an attribute"),
                };
                if let Some(&&(f, _, _)) = steps.iter().find(|(_, _, went_left)| !went_left) {
                    conditions.push(Condition {
                        attribute: attribute.to_string(),
                        comparator: Comparator::Eq,
                        value: ConditionValue::Category(category(f)),
                        feature: f,
                    });
                } else if let [only] = binary_complement(columns, attribute, &steps)[..] {
                    conditions.push(Condition {
                        attribute: attribute.to_string(),
                        comparator: Comparator::Eq,
                        value: ConditionValue::Category(category(only)),
                        feature: only,
                    });
                } else {
                    let mut seen = Vec::new();
                    for &&(f, _, _) in &steps {
                        if !seen.contains(&f) {
                            seen.push(f);
                            conditions.push(Condition {
                                attribute: attribute.to_string(),
                                comparator: Comparator::Ne,
                                value: ConditionValue::Category(category(f)),
                                feature: f,
                            });
                        }
                    }
                }
            }
        }
    }
    conditions
}

/// One rule per leaf with merged path conditions; support and coverage are
/// counted on the given training set. Sorted by support, descending.
pub fn extract_rules<L: Ord + Clone>(
    tree: &DecisionTree<L>,
    features: &FeatureMatrix,
    labels: &[L],
) -> Vec<DecisionRule<L>> {
    let mut leaves: Vec<(Vec<Step>, usize)> = Vec::new();
    fn collect(node: &TreeNode, path: &mut Vec<Step>, out: &mut Vec<(Vec<Step>, usize)>) {
        match node {
            TreeNode::Leaf { prediction, .. } => out.push((path.clone(), *prediction)),
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
                ..
            } => {
                path.push((*feature, *threshold, true));
                collect(left, path, out);
                path.pop();
                path.push((*feature, *threshold, false));
                collect(right, path, out);
                path.pop();
            }
        }
    }
    collect(&tree.root, &mut Vec::new(), &mut leaves);

    let mut support = vec![0usize; leaves.len()];
    let mut class_support = vec![0usize; leaves.len()];
    let mut cluster_sizes: BTreeMap<&L, usize> = BTreeMap::new();
    for (row, label) in labels.iter().enumerate() {
        *cluster_sizes.entry(label).or_default() += 1;
        let (leaf, _) = tree.leaf_index(features, row);
        support[leaf] += 1;
        if tree.classes[leaves[leaf].1] == *label {
            class_support[leaf] += 1;
        }
    }

    let mut rules: Vec<DecisionRule<L>> = leaves
        .iter()
        .enumerate()
        .map(|(leaf, (path, prediction))| {
            let predicted = tree.classes[*prediction].clone();
            let size = cluster_sizes.get(&predicted).copied().unwrap_or(0);
            DecisionRule {
                conditions: merge_path(&tree.columns, path),
                support: support[leaf],
                class_support: class_support[leaf],
                coverage: if size == 0 {
                    0.0
                } else {
                    class_support[leaf] as f64 / size as f64
                },
                precision: if support[leaf] == 0 {
                    0.0
                } else {
                    class_support[leaf] as f64 / support[leaf] as f64
                },
                predicted_cluster: predicted,
            }
        })
        .collect();
    rules.sort_by_key(|r| std::cmp::Reverse(r.support));
    rules
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeImportance {
    pub attribute: String,
    pub importance: f64,
    /// Shallowest depth (root = 0) at which the attribute is tested.
    pub best_depth: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeRanking {
    pub entries: Vec<AttributeImportance>,
}

/// Sample-weighted Gini decrease per source attribute, normalized to sum to
/// one. Ordered by importance, then shallower depth, then name.
pub fn rank_attributes<L>(tree: &DecisionTree<L>) -> AttributeRanking {
    let mut totals: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    fn visit<'t>(
        node: &TreeNode,
        depth: usize,
        columns: &'t [FeatureColumn],
        totals: &mut BTreeMap<&'t str, (f64, usize)>,
    ) {
        if let TreeNode::Split {
            feature,
            gain,
            left,
            right,
            ..
        } = node
        {
            let entry = totals
                .entry(columns[*feature].attribute.as_str())
                .or_insert((0.0, depth));
            entry.0 += gain;
            entry.1 = entry.1.min(depth);
            visit(left, depth + 1, columns, totals);
            visit(right, depth + 1, columns, totals);
        }
    }
    visit(&tree.root, 0, &tree.columns, &mut totals);
    let sum: f64 = totals.values().map(|(g, _)| g).sum();
    let mut entries: Vec<AttributeImportance> = totals
        .into_iter()
        .map(|(attribute, (gain, best_depth))| AttributeImportance {
            attribute: attribute.to_string(),
            importance: if sum > 0.0 { gain / sum } else { 0.0 },
            best_depth,
        })
        .collect();
    entries.sort_by(|a, b| {
        b.importance
            .total_cmp(&a.importance)
            .then(a.best_depth.cmp(&b.best_depth))
            .then_with(|| a.attribute.cmp(&b.attribute))
    });
    AttributeRanking { entries }
}

impl<L: Display> DecisionTree<L> {
    /// Indented text rendering, one node per line.
    pub fn to_text(&self) -> String {
        fn describe(
            columns: &[FeatureColumn],
            feature: usize,
            threshold: f64,
            left: bool,
        ) -> String {
            let c = &columns[feature];
            match (&c.kind, left) {
                (FeatureKind::Numeric, true) => format!("{} <= {}", c.attribute, round6(threshold)),
                (FeatureKind::Numeric, false) => format!("{} > {}", c.attribute, round6(threshold)),
                (FeatureKind::Dummy { category }, true) => {
                    match binary_complement(columns, &c.attribute, &[&(feature, threshold, true)])[..]
                    {
                        [other] => describe(columns, other, threshold, false),
                        _ => format!("{} != {}", c.attribute, category),
                    }
                }
                (FeatureKind::Dummy { category }, false) => {
                    format!("{} = {}", c.attribute, category)
                }
            }
        }
        fn render<L: Display>(
            tree: &DecisionTree<L>,
            node: &TreeNode,
            depth: usize,
            out: &mut String,
        ) {
            let pad = "  ".repeat(depth);
            match node {
                TreeNode::Leaf {
                    prediction,
                    samples,
                    histogram,
                } => {
                    let _ = writeln!(
                        out,
                        "{pad}cluster {} (samples {samples}, correct {})",
                        tree.classes[*prediction], histogram[*prediction]
                    );
                }
                TreeNode::Split {
                    feature,
                    threshold,
                    samples,
                    impurity,
                    left,
                    right,
                    ..
                } => {
                    let _ = writeln!(
                        out,
                        "{pad}if {} (samples {samples}, gini {:.4}):",
                        describe(&tree.columns, *feature, *threshold, false),
                        impurity
                    );
                    render(tree, right, depth + 1, out);
                    let _ = writeln!(
                        out,
                        "{pad}else ({}):",
                        describe(&tree.columns, *feature, *threshold, true)
                    );
                    render(tree, left, depth + 1, out);
                }
            }
        }
        let mut out = String::new();
        render(self, &self.root, 0, &mut out);
        out
    }
}
