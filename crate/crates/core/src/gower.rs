//! Gower dissimilarity over mixed attributes and its conversion into the
//! similarity matrix consumed by affinity propagation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{AttributeKind, Dataset, EncodedMatrix};
use crate::error::{Error, Result};
use crate::matrix::SquareMatrix;

/// Normalized Manhattan distance `|x_i - x_j| / R_k`; zero for a constant
/// attribute (`R_k = 0`).
pub fn numeric_dissim(x_i: f64, x_j: f64, range: f64) -> f64 {
    if range <= 0.0 {
        return 0.0;
    }
    (x_i - x_j).abs() / range
}

/// Dice dissimilarity `(FP + FN) / (2 TP + FP + FN)` of two binary vectors.
/// Two all-zero vectors count as matching and give 0.
pub fn dice_dissim(a: &[u8], b: &[u8]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut tp = 0u32;
    let mut differ = 0u32;
    for (&x, &y) in a.iter().zip(b) {
        match (x != 0, y != 0) {
            (true, true) => tp += 1,
            (true, false) | (false, true) => differ += 1,
            (false, false) => {}
        }
    }
    let denom = 2 * tp + differ;
    if denom == 0 {
        log::debug!("dice dissimilarity of two all-zero vectors treated as 0");
        return 0.0;
    }
    f64::from(differ) / f64::from(denom)
}

/// How categorical attributes enter the mean.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DiceMode {
    /// One Dice term per source attribute.
    #[default]
    PerAttribute,
    /// A single Dice term over the concatenation of all dummy columns,
    /// counted as one attribute.
    Concatenated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DissimilarityMatrix(SquareMatrix);

impl DissimilarityMatrix {
    /// Wraps a matrix after checking symmetry, zero diagonal and `[0, 1]`
    /// entries.
    pub fn new(m: SquareMatrix) -> Result<Self> {
        let n = m.n();
        for i in 0..n {
            if m.get(i, i) != 0.0 {
                return Err(Error::Input(format!(
                    "dissimilarity d[{i}][{i}] is not zero"
                )));
            }
            for k in 0..n {
                let v = m.get(i, k);
                if !(0.0..=1.0).contains(&v) {
                    return Err(Error::Input(format!(
                        "dissimilarity d[{i}][{k}] = {v} outside [0, 1]"
                    )));
                }
                if v != m.get(k, i) {
                    return Err(Error::Input(format!(
                        "dissimilarity matrix is not symmetric at ({i}, {k})"
                    )));
                }
            }
        }
        Ok(Self(m))
    }

    pub fn n(&self) -> usize {
        self.0.n()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0.get(i, j)
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix(SquareMatrix);

impl SimilarityMatrix {
    /// Wraps an arbitrary similarity matrix (diagonal = preferences).
    pub fn from_matrix(m: SquareMatrix) -> Self {
        Self(m)
    }

    pub fn n(&self) -> usize {
        self.0.n()
    }

    pub fn get(&self, i: usize, k: usize) -> f64 {
        self.0.get(i, k)
    }

    pub fn matrix(&self) -> &SquareMatrix {
        &self.0
    }

    pub fn preferences(&self) -> Vec<f64> {
        self.0.diagonal()
    }
}

/// Per-attribute layout of the active attributes of a dataset.
enum Term {
    Numeric { column: Vec<f64>, range: f64 },
    Categorical { group: usize },
    AllCategorical,
}

/// Indices of attributes that vary across the dataset's records.
pub fn active_attributes(d: &Dataset) -> Vec<usize> {
    (0..d.schema.len()).filter(|&k| !d.is_constant(k)).collect()
}

/// Pairwise Gower distance: mean over active attributes of the normalized
/// Manhattan term (numeric) and Dice term (categorical dummies).
///
/// Each entry is computed once with a fixed attribute order and mirrored, so
/// the result is bitwise identical however rows are scheduled.
pub fn gower_matrix(
    d: &Dataset,
    enc: &EncodedMatrix,
    mode: DiceMode,
) -> Result<DissimilarityMatrix> {
    if enc.n_rows() != d.len() {
        return Err(Error::Input(format!(
            "encoded matrix has {} rows, dataset has {}",
            enc.n_rows(),
            d.len()
        )));
    }
    let active = active_attributes(d);
    let mut terms = Vec::new();
    let mut any_categorical = false;
    for &k in &active {
        match &d.schema.get(k).kind {
            AttributeKind::Numeric { min, max, .. } => terms.push(Term::Numeric {
                column: d
                    .records
                    .iter()
                    .map(|r| r.values[k].as_number().unwrap_or(0.0))
                    .collect(),
                range: max - min,
            }),
            AttributeKind::Categorical { .. } => {
                let group = enc.group_of(k).ok_or_else(|| {
                    Error::Input(format!("no dummy columns for '{}'", d.schema.get(k).name))
                })?;
                match mode {
                    DiceMode::PerAttribute => terms.push(Term::Categorical { group }),
                    DiceMode::Concatenated => any_categorical = true,
                }
            }
        }
    }
    if any_categorical {
        terms.push(Term::AllCategorical);
    }
    if terms.is_empty() {
        return Err(Error::Config(
            "no active (non-constant) attributes to compute Gower distance over".into(),
        ));
    }
    let n_terms = terms.len() as f64;
    let n = d.len();

    let pair = |i: usize, j: usize| -> f64 {
        let mut sum = 0.0;
        for term in &terms {
            sum += match term {
                Term::Numeric { column, range } => numeric_dissim(column[i], column[j], *range),
                Term::Categorical { group } => {
                    dice_dissim(enc.group_slice(i, *group), enc.group_slice(j, *group))
                }
                Term::AllCategorical => dice_dissim(enc.row(i), enc.row(j)),
            };
        }
        sum / n_terms
    };

    // Upper triangle row by row, then mirror.
    let upper: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| ((i + 1)..n).map(|j| pair(i, j)).collect())
        .collect();
    let mut m = SquareMatrix::zeros(n);
    for (i, row) in upper.into_iter().enumerate() {
        for (offset, v) in row.into_iter().enumerate() {
            let j = i + 1 + offset;
            m.set(i, j, v);
            m.set(j, i, v);
        }
    }
    Ok(DissimilarityMatrix(m))
}

/// Diagonal of the similarity matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preference {
    /// Median of the off-diagonal similarities.
    Median,
    /// The same value for every point.
    Value(f64),
    PerPoint(Vec<f64>),
}

/// Median of a non-empty slice; mean of the two middle values for even
/// counts. The slice is reordered.
pub(crate) fn median_in_place(values: &mut [f64]) -> f64 {
    let len = values.len();
    assert!(len > 0, "median of an empty slice");
    let mid = len / 2;
    let (_, upper, _) = values.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if len % 2 == 1 {
        upper
    } else {
        let lower = values[..mid]
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max);
        (lower + upper) / 2.0
    }
}

/// `s_ij = theta * d_ij` off the diagonal; the diagonal holds preferences.
pub fn to_similarity(
    dis: &DissimilarityMatrix,
    theta: f64,
    preference: &Preference,
) -> Result<SimilarityMatrix> {
    if !(theta < 0.0) || !theta.is_finite() {
        return Err(Error::Parameter(format!(
            "theta must be a finite negative number, got {theta}"
        )));
    }
    let n = dis.n();
    let mut s = SquareMatrix::zeros(n);
    for i in 0..n {
        for k in 0..n {
            if i != k {
                s.set(i, k, theta * dis.get(i, k));
            }
        }
    }
    let diagonal = match preference {
        Preference::Median => {
            let mut off: Vec<f64> = (0..n)
                .flat_map(|i| (0..n).filter(move |&k| k != i).map(move |k| (i, k)))
                .map(|(i, k)| s.get(i, k))
                .collect();
            let value = if off.is_empty() {
                0.0
            } else {
                median_in_place(&mut off)
            };
            vec![value; n]
        }
        Preference::Value(v) => vec![*v; n],
        Preference::PerPoint(values) => {
            if values.len() != n {
                return Err(Error::Parameter(format!(
                    "expected {n} preference values, got {}",
                    values.len()
                )));
            }
            values.clone()
        }
    };
    if let Some(bad) = diagonal.iter().find(|v| !v.is_finite()) {
        return Err(Error::Parameter(format!("preference {bad} is not finite")));
    }
    for (i, v) in diagonal.into_iter().enumerate() {
        s.set(i, i, v);
    }
    Ok(SimilarityMatrix(s))
}
