//! Cluster scoring and damping-factor selection.

use std::collections::HashMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::affinity::{run_ap, ApParams, ClusterResult, Damping};
use crate::error::{Error, Result};
use crate::gower::{DissimilarityMatrix, SimilarityMatrix};

/// The damping grid 0.5, 0.6, ..., 0.9.
pub fn default_damping_grid() -> Vec<f64> {
    vec![0.5, 0.6, 0.7, 0.8, 0.9]
}

fn check_labels(d: &DissimilarityMatrix, labels: &[usize]) -> Result<()> {
    if labels.len() != d.n() {
        return Err(Error::Input(format!(
            "{} labels for a {}-point dissimilarity matrix",
            labels.len(),
            d.n()
        )));
    }
    Ok(())
}

/// Pooled silhouette `(d2 - d1) / max(d1, d2)`, where `d1` is the mean
/// distance over all same-cluster pairs and `d2` over all cross-cluster
/// pairs. Returns 0 when there is a single cluster or both means vanish.
pub fn silhouette_global(d: &DissimilarityMatrix, labels: &[usize]) -> Result<f64> {
    check_labels(d, labels)?;
    let n = d.n();
    let (mut within, mut n_within, mut across, mut n_across) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..n {
        for j in (i + 1)..n {
            if labels[i] == labels[j] {
                within += d.get(i, j);
                n_within += 1;
            } else {
                across += d.get(i, j);
                n_across += 1;
            }
        }
    }
    if n_across == 0 {
        return Ok(0.0);
    }
    let d2 = across / n_across as f64;
    let d1 = if n_within == 0 {
        0.0
    } else {
        within / n_within as f64
    };
    let scale = d1.max(d2);
    if scale == 0.0 {
        return Ok(0.0);
    }
    Ok((d2 - d1) / scale)
}

/// Conventional silhouette: mean over points of `(b - a) / max(a, b)`, with
/// singletons scoring 0. Returns 0 for a single cluster.
pub fn silhouette_per_point(d: &DissimilarityMatrix, labels: &[usize]) -> Result<f64> {
    check_labels(d, labels)?;
    let n = d.n();
    let mut ids: Vec<usize> = labels.to_vec();
    ids.sort_unstable();
    ids.dedup();
    if ids.len() < 2 {
        return Ok(0.0);
    }
    let index: HashMap<usize, usize> = ids.iter().enumerate().map(|(p, &l)| (l, p)).collect();
    let dense: Vec<usize> = labels.iter().map(|l| index[l]).collect();
    let mut sizes = vec![0usize; ids.len()];
    for &c in &dense {
        sizes[c] += 1;
    }
    let scores: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let own = dense[i];
            if sizes[own] == 1 {
                return 0.0;
            }
            let mut sums = vec![0.0; ids.len()];
            for j in 0..n {
                if j != i {
                    sums[dense[j]] += d.get(i, j);
                }
            }
            let a = sums[own] / (sizes[own] - 1) as f64;
            let b = (0..ids.len())
                .filter(|&c| c != own)
                .map(|c| sums[c] / sizes[c] as f64)
                .fold(f64::INFINITY, f64::min);
            let scale = a.max(b);
            if scale == 0.0 {
                0.0
            } else {
                (b - a) / scale
            }
        })
        .collect();
    Ok(scores.iter().sum::<f64>() / n as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub damping: f64,
    pub silhouette: f64,
    pub clusters: usize,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub entries: Vec<SweepEntry>,
    /// Damping with the highest silhouette; ties go to the smaller value.
    pub best_damping: f64,
}

impl SweepResult {
    pub fn best_index(&self) -> usize {
        self.entries
            .iter()
            .position(|e| e.damping == self.best_damping)
            .expect("best damping is one of the entries")
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        write_sweep_csv(None, self, out)
    }
}

/// Writes sweep rows as `damping,silhouette,clusters,converged,iterations`,
/// prefixed by a `subset` column when one is given.
pub fn write_sweep_csv<W: Write>(subset: Option<&str>, sweep: &SweepResult, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec![
        "damping",
        "silhouette",
        "clusters",
        "converged",
        "iterations",
    ];
    if subset.is_some() {
        header.insert(0, "subset");
    }
    w.write_record(&header)?;
    for e in &sweep.entries {
        let mut row = vec![
            e.damping.to_string(),
            e.silhouette.to_string(),
            e.clusters.to_string(),
            e.converged.to_string(),
            e.iterations.to_string(),
        ];
        if let Some(s) = subset {
            row.insert(0, s.to_string());
        }
        w.write_record(&row)?;
    }
    w.flush().map_err(|e| Error::io("sweep", e))?;
    Ok(())
}

/// Runs affinity propagation once per damping value (other parameters held
/// fixed) and scores each run with [`silhouette_global`]. Returns the sweep
/// summary and the runs in grid order.
pub fn damping_sweep(
    s: &SimilarityMatrix,
    d: &DissimilarityMatrix,
    grid: &[f64],
    params: &ApParams,
) -> Result<(SweepResult, Vec<ClusterResult>)> {
    if grid.is_empty() {
        return Err(Error::Parameter("damping grid is empty".into()));
    }
    if s.n() != d.n() {
        return Err(Error::Input(
            "similarity and dissimilarity matrices differ in size".into(),
        ));
    }
    let dampings = grid
        .iter()
        .map(|&g| Damping::new(g))
        .collect::<Result<Vec<_>>>()?;
    if grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::Parameter(
            "damping grid must be strictly increasing".into(),
        ));
    }

    let runs = dampings
        .par_iter()
        .map(|&damping| {
            let result = run_ap(s, &ApParams { damping, ..*params })?;
            let score = silhouette_global(d, &result.labels)?;
            Ok((result, score))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut entries = Vec::with_capacity(runs.len());
    let mut best: Option<(f64, f64)> = None;
    for (g, (result, score)) in grid.iter().zip(&runs) {
        entries.push(SweepEntry {
            damping: *g,
            silhouette: *score,
            clusters: result.n_clusters(),
            converged: result.converged,
            iterations: result.iterations_run,
        });
        if best.is_none_or(|(_, s)| *score > s) {
            best = Some((*g, *score));
        }
    }
    let sweep = SweepResult {
        entries,
        best_damping: best.expect("non-empty grid").0,
    };
    Ok((sweep, runs.into_iter().map(|(r, _)| r).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::SquareMatrix;

    fn dis(rows: &[Vec<f64>]) -> DissimilarityMatrix {
        DissimilarityMatrix::new(SquareMatrix::from_rows(rows)).unwrap()
    }

    /// Four points: pairs {0,1} and {2,3} at `within`, all cross pairs at `across`.
    fn blocks(within: f64, across: f64) -> DissimilarityMatrix {
        dis(&[
            vec![0.0, within, across, across],
            vec![within, 0.0, across, across],
            vec![across, across, 0.0, within],
            vec![across, across, within, 0.0],
        ])
    }

    #[test]
    fn pooled_silhouette_hand_value() {
        let score = silhouette_global(&blocks(0.1, 0.9), &[0, 0, 1, 1]).unwrap();
        assert!((score - 0.8 / 0.9).abs() < 1e-15);
    }

    #[test]
    fn pooled_silhouette_limits() {
        assert_eq!(
            silhouette_global(&blocks(0.0, 1.0), &[0, 0, 1, 1]).unwrap(),
            1.0
        );
        // Same-cluster pairs far apart, cross pairs coincident.
        assert_eq!(
            silhouette_global(&blocks(1.0, 0.0), &[0, 0, 1, 1]).unwrap(),
            -1.0
        );
        assert_eq!(
            silhouette_global(&blocks(0.4, 0.4), &[0, 0, 1, 1]).unwrap(),
            0.0
        );
        assert_eq!(
            silhouette_global(&blocks(0.1, 0.9), &[3, 3, 3, 3]).unwrap(),
            0.0
        );
        assert_eq!(
            silhouette_global(&blocks(0.0, 0.0), &[0, 0, 1, 1]).unwrap(),
            0.0
        );
    }

    #[test]
    fn silhouette_ignores_label_names() {
        let d = blocks(0.2, 0.7);
        let a = silhouette_global(&d, &[0, 1, 1, 1]).unwrap();
        let b = silhouette_global(&d, &[9, 4, 4, 4]).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            silhouette_per_point(&d, &[0, 0, 1, 1]).unwrap(),
            silhouette_per_point(&d, &[5, 5, 2, 2]).unwrap()
        );
    }

    #[test]
    fn label_length_must_match() {
        assert!(matches!(
            silhouette_global(&blocks(0.1, 0.9), &[0, 1]),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn per_point_silhouette_hand_value() {
        // a = 0.1, b = 0.9 for every point.
        let score = silhouette_per_point(&blocks(0.1, 0.9), &[0, 0, 1, 1]).unwrap();
        assert!((score - 0.8 / 0.9).abs() < 1e-15);
        assert_eq!(
            silhouette_per_point(&blocks(0.1, 0.9), &[0, 0, 0, 0]).unwrap(),
            0.0
        );
    }

    fn block_similarity() -> (SimilarityMatrix, DissimilarityMatrix) {
        let d = dis(&[
            vec![0.0, 0.02, 0.03, 0.8, 0.82, 0.85],
            vec![0.02, 0.0, 0.04, 0.81, 0.8, 0.83],
            vec![0.03, 0.04, 0.0, 0.86, 0.84, 0.8],
            vec![0.8, 0.81, 0.86, 0.0, 0.05, 0.01],
            vec![0.82, 0.8, 0.84, 0.05, 0.0, 0.03],
            vec![0.85, 0.83, 0.8, 0.01, 0.03, 0.0],
        ]);
        let s = crate::gower::to_similarity(&d, -1.0, &crate::gower::Preference::Median).unwrap();
        (s, d)
    }

    #[test]
    fn sweep_over_default_grid() {
        let (s, d) = block_similarity();
        let (sweep, runs) =
            damping_sweep(&s, &d, &default_damping_grid(), &ApParams::default()).unwrap();
        assert_eq!(sweep.entries.len(), 5);
        assert_eq!(runs.len(), 5);
        let max = sweep
            .entries
            .iter()
            .map(|e| e.silhouette)
            .fold(f64::NEG_INFINITY, f64::max);
        assert_eq!(sweep.entries[sweep.best_index()].silhouette, max);
        // All runs tie, so the smallest damping wins.
        assert_eq!(sweep.best_damping, 0.5);
        let (again, _) =
            damping_sweep(&s, &d, &default_damping_grid(), &ApParams::default()).unwrap();
        assert_eq!(sweep, again);
    }

    #[test]
    fn single_entry_grid() {
        let (s, d) = block_similarity();
        let (sweep, _) = damping_sweep(&s, &d, &[0.7], &ApParams::default()).unwrap();
        assert_eq!(sweep.best_damping, 0.7);
    }

    #[test]
    fn grid_validation() {
        let (s, d) = block_similarity();
        assert!(damping_sweep(&s, &d, &[], &ApParams::default()).is_err());
        assert!(damping_sweep(&s, &d, &[0.7, 0.6], &ApParams::default()).is_err());
        assert!(damping_sweep(&s, &d, &[0.6, 1.0], &ApParams::default()).is_err());
    }
}
