//! Damped affinity propagation over a dense similarity matrix.
//!
//! One iteration computes fresh responsibilities from the similarities and
//! the current availabilities, damps them against the previous
//! responsibilities, then computes fresh availabilities from the damped
//! responsibilities and damps those. The run stops once the exemplar set
//! read off the diagonal of `A + R` has been unchanged for a configurable
//! number of consecutive iterations.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gower::SimilarityMatrix;
use crate::matrix::SquareMatrix;

/// Damping factor, validated to lie in `[0.5, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Damping(f64);

impl Damping {
    pub fn new(gamma: f64) -> Result<Self> {
        if (0.5..1.0).contains(&gamma) {
            Ok(Self(gamma))
        } else {
            Err(Error::Parameter(format!(
                "damping factor must lie in [0.5, 1), got {gamma}"
            )))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Damping {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Damping::new(value)
    }
}

impl From<Damping> for f64 {
    fn from(d: Damping) -> f64 {
        d.0
    }
}

impl Default for Damping {
    fn default() -> Self {
        Self(0.6)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ApParams {
    pub damping: Damping,
    pub max_iter: usize,
    /// Consecutive iterations with an unchanged exemplar set needed to stop.
    pub stable_window: usize,
}

impl Default for ApParams {
    fn default() -> Self {
        Self {
            damping: Damping::default(),
            max_iter: 1000,
            stable_window: 15,
        }
    }
}

impl ApParams {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::Parameter("max_iter must be at least 1".into()));
        }
        if self.stable_window == 0 {
            return Err(Error::Parameter("stable_window must be at least 1".into()));
        }
        Ok(())
    }
}

/// Responsibility and availability matrices at some iteration.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageState {
    pub responsibility: SquareMatrix,
    pub availability: SquareMatrix,
    pub iteration: usize,
}

impl MessageState {
    pub fn new(n: usize) -> Self {
        Self {
            responsibility: SquareMatrix::zeros(n),
            availability: SquareMatrix::zeros(n),
            iteration: 0,
        }
    }

    /// Diagonal test `a_kk + r_kk > 0` for every point.
    pub fn exemplar_mask(&self) -> Vec<bool> {
        (0..self.responsibility.n())
            .map(|k| self.availability.get(k, k) + self.responsibility.get(k, k) > 0.0)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterResult {
    /// Exemplar record indices, ascending.
    pub exemplars: Vec<usize>,
    /// Exemplar index of every record.
    pub labels: Vec<usize>,
    pub iterations_run: usize,
    pub converged: bool,
    pub net_similarity: f64,
}

impl ClusterResult {
    pub fn n_clusters(&self) -> usize {
        self.exemplars.len()
    }

    /// Position of each record's exemplar in `exemplars`, i.e. cluster ids
    /// `0..K`.
    pub fn cluster_ids(&self) -> Vec<usize> {
        self.labels
            .iter()
            .map(|l| {
                self.exemplars
                    .binary_search(l)
                    .expect("label is an exemplar")
            })
            .collect()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.exemplars.len()];
        for c in self.cluster_ids() {
            sizes[c] += 1;
        }
        sizes
    }
}

/// Cluster label qualified by the subset it came from. Displays as
/// `subset:index`, or just `index` when the subset is empty.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub struct ClusterId {
    pub subset: String,
    pub index: usize,
}

impl ClusterId {
    pub fn new(subset: impl Into<String>, index: usize) -> Self {
        Self {
            subset: subset.into(),
            index,
        }
    }
}

impl std::fmt::Display for ClusterId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        if self.subset.is_empty() {
            write!(f, "{}", self.index)
        } else {
            write!(f, "{}:{}", self.subset, self.index)
        }
    }
}

impl std::str::FromStr for ClusterId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (subset, index) = s.rsplit_once(':').unwrap_or(("", s));
        let index = index
            .trim()
            .parse()
            .map_err(|_| Error::Input(format!("'{s}' is not a cluster id")))?;
        Ok(Self::new(subset, index))
    }
}

impl From<ClusterId> for String {
    fn from(id: ClusterId) -> Self {
        id.to_string()
    }
}

impl TryFrom<String> for ClusterId {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

fn check_square(s: &SimilarityMatrix, other: &SquareMatrix, what: &str) -> Result<()> {
    if other.n() != s.n() {
        return Err(Error::Input(format!(
            "{what} is {0}x{0}, similarity matrix is {1}x{1}",
            other.n(),
            s.n()
        )));
    }
    Ok(())
}

/// Fresh responsibilities `r_ik = s_ik - max_{k' != k} (a_ik' + s_ik')`.
pub fn update_responsibilities(s: &SimilarityMatrix, a: &SquareMatrix) -> Result<SquareMatrix> {
    check_square(s, a, "availability matrix")?;
    let n = s.n();
    if n < 2 {
        return Err(Error::Input(
            "responsibility update needs at least two points".into(),
        ));
    }
    let mut r = SquareMatrix::zeros(n);
    fill_responsibilities(s, a, &mut r, |_, fresh| fresh);
    Ok(r)
}

/// Overwrites every entry of `r` with `combine(old, fresh)`.
fn fill_responsibilities(
    s: &SimilarityMatrix,
    a: &SquareMatrix,
    r: &mut SquareMatrix,
    combine: impl Fn(f64, f64) -> f64 + Sync,
) {
    let n = s.n();
    r.as_mut_slice()
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, out)| {
            let s_row = s.matrix().row(i);
            // Largest and second-largest a + s in the row.
            let mut best = f64::NEG_INFINITY;
            let mut best_k = 0;
            let mut second = f64::NEG_INFINITY;
            for (k, (&s, &a)) in s_row.iter().zip(a.row(i)).enumerate() {
                let v = a + s;
                if v > best {
                    second = best;
                    best = v;
                    best_k = k;
                } else if v > second {
                    second = v;
                }
            }
            for (k, (o, &s)) in out.iter_mut().zip(s_row).enumerate() {
                let fresh = s - if k == best_k { second } else { best };
                *o = combine(*o, fresh);
            }
        });
}

/// Fresh availabilities: `a_ik = min(0, r_kk + sum_{i' not in {i,k}} max(0, r_i'k))`
/// off the diagonal and `a_kk = sum_{i' != k} max(0, r_i'k)` on it.
pub fn update_availabilities(r: &SquareMatrix) -> Result<SquareMatrix> {
    let n = r.n();
    if n < 2 {
        return Err(Error::Input(
            "availability update needs at least two points".into(),
        ));
    }
    let mut a = SquareMatrix::zeros(n);
    fill_availabilities(r, &mut a, |_, fresh| fresh);
    Ok(a)
}

/// Overwrites every entry of `a` with `combine(old, fresh)`.
fn fill_availabilities(
    r: &SquareMatrix,
    a: &mut SquareMatrix,
    combine: impl Fn(f64, f64) -> f64 + Sync,
) {
    let n = r.n();
    // Column sums of positive off-diagonal responsibilities, accumulated in
    // row order.
    let mut positive_sums = vec![0.0; n];
    for i in 0..n {
        let (sums_before, sums_after) = positive_sums.split_at_mut(i);
        let row = r.row(i);
        for (sum, &v) in sums_before.iter_mut().zip(&row[..i]) {
            *sum += v.max(0.0);
        }
        for (sum, &v) in sums_after[1..].iter_mut().zip(&row[i + 1..]) {
            *sum += v.max(0.0);
        }
    }
    let diagonal: Vec<f64> = (0..n).map(|k| r.get(k, k)).collect();
    a.as_mut_slice()
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, out)| {
            let old_diagonal = out[i];
            let columns = out
                .iter_mut()
                .zip(r.row(i))
                .zip(&positive_sums)
                .zip(&diagonal);
            for (((o, &r_ik), &sum), &r_kk) in columns {
                *o = combine(*o, (r_kk + sum - r_ik.max(0.0)).min(0.0));
            }
            out[i] = combine(old_diagonal, positive_sums[i]);
        });
}

/// Elementwise `gamma * prev + (1 - gamma) * fresh`.
pub fn damp(prev: &SquareMatrix, fresh: &SquareMatrix, gamma: f64) -> Result<SquareMatrix> {
    let g = Damping::new(gamma)?.value();
    if prev.n() != fresh.n() {
        return Err(Error::Input("damping needs matrices of equal size".into()));
    }
    let data = prev
        .as_slice()
        .iter()
        .zip(fresh.as_slice())
        .map(|(&p, &f)| g * p + (1.0 - g) * f)
        .collect();
    Ok(SquareMatrix::from_vec(prev.n(), data))
}

/// Net similarity of an assignment: member-to-exemplar similarities plus the
/// exemplars' preferences.
pub fn net_similarity(s: &SimilarityMatrix, labels: &[usize]) -> f64 {
    labels.iter().enumerate().map(|(i, &k)| s.get(i, k)).sum()
}

/// Nearest exemplar by similarity; ties go to the lowest index. Exemplars
/// label themselves.
pub fn assign_to_exemplars(s: &SimilarityMatrix, exemplars: &[usize]) -> Vec<usize> {
    (0..s.n())
        .map(|i| {
            if exemplars.binary_search(&i).is_ok() {
                return i;
            }
            let mut best = exemplars[0];
            for &k in &exemplars[1..] {
                if s.get(i, k) > s.get(i, best) {
                    best = k;
                }
            }
            best
        })
        .collect()
}

/// Reads exemplars and assignments off the message matrices.
pub fn extract_clusters(r: &SquareMatrix, a: &SquareMatrix, s: &SimilarityMatrix) -> ClusterResult {
    let n = s.n();
    assert!(
        r.n() == n && a.n() == n,
        "message matrices must match the similarity matrix"
    );
    if n == 0 {
        return ClusterResult {
            exemplars: Vec::new(),
            labels: Vec::new(),
            iterations_run: 0,
            converged: true,
            net_similarity: 0.0,
        };
    }
    let mut exemplars: Vec<usize> = (0..n)
        .filter(|&k| a.get(k, k) + r.get(k, k) > 0.0)
        .collect();
    if exemplars.is_empty() {
        // Fall back to the column of the largest a + r entry.
        let mut best = (f64::NEG_INFINITY, 0);
        for i in 0..n {
            for k in 0..n {
                let v = a.get(i, k) + r.get(i, k);
                if v > best.0 {
                    best = (v, k);
                }
            }
        }
        exemplars.push(best.1);
    }
    let labels = assign_to_exemplars(s, &exemplars);
    ClusterResult {
        net_similarity: net_similarity(s, &labels),
        exemplars,
        labels,
        iterations_run: 0,
        converged: false,
    }
}

/// One row of the optional per-iteration trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub exemplars: usize,
    pub net_similarity: f64,
}

pub fn write_trace_csv<W: Write>(rows: &[TraceRow], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for row in rows {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io("trace", e))?;
    Ok(())
}

/// Advances `state` by one damped iteration.
pub fn step(s: &SimilarityMatrix, state: &mut MessageState, gamma: Damping) -> Result<()> {
    check_square(s, &state.responsibility, "responsibility matrix")?;
    check_square(s, &state.availability, "availability matrix")?;
    if s.n() < 2 {
        return Err(Error::Input(
            "a message update needs at least two points".into(),
        ));
    }
    let g = gamma.value();
    let damped = move |old: f64, fresh: f64| g * old + (1.0 - g) * fresh;
    fill_responsibilities(s, &state.availability, &mut state.responsibility, damped);
    fill_availabilities(&state.responsibility, &mut state.availability, damped);
    state.iteration += 1;
    Ok(())
}

pub fn run_ap(s: &SimilarityMatrix, params: &ApParams) -> Result<ClusterResult> {
    run_ap_traced(s, params, None)
}

/// Runs affinity propagation, optionally recording one [`TraceRow`] per
/// iteration.
pub fn run_ap_traced(
    s: &SimilarityMatrix,
    params: &ApParams,
    mut trace: Option<&mut Vec<TraceRow>>,
) -> Result<ClusterResult> {
    params.validate()?;
    if let Some((idx, v)) = s
        .matrix()
        .as_slice()
        .iter()
        .enumerate()
        .find(|(_, v)| !v.is_finite())
    {
        let n = s.n();
        return Err(Error::Input(format!(
            "similarity s[{}][{}] = {v} is not finite",
            idx / n,
            idx % n
        )));
    }
    let n = s.n();
    if n < 2 {
        let mut result = extract_clusters(&SquareMatrix::zeros(n), &SquareMatrix::zeros(n), s);
        if n == 1 {
            result.exemplars = vec![0];
            result.labels = vec![0];
            result.net_similarity = s.get(0, 0);
        }
        result.converged = true;
        return Ok(result);
    }

    let mut state = MessageState::new(n);
    let mut previous = state.exemplar_mask();
    let mut unchanged = 0;
    let mut converged = false;
    while state.iteration < params.max_iter {
        step(s, &mut state, params.damping)?;
        let mask = state.exemplar_mask();
        // An empty exemplar set never counts as stable.
        if mask == previous && mask.contains(&true) {
            unchanged += 1;
        } else {
            unchanged = 0;
            previous = mask;
        }
        if let Some(rows) = trace.as_deref_mut() {
            let snapshot = extract_clusters(&state.responsibility, &state.availability, s);
            rows.push(TraceRow {
                iteration: state.iteration,
                exemplars: previous.iter().filter(|&&e| e).count(),
                net_similarity: snapshot.net_similarity,
            });
        }
        if unchanged >= params.stable_window {
            converged = true;
            break;
        }
    }
    let mut result = extract_clusters(&state.responsibility, &state.availability, s);
    result.iterations_run = state.iteration;
    result.converged = converged;
    Ok(result)
}
