#![allow(dead_code)]

use std::path::PathBuf;

use colonia_cluster::data::{read_dataset, Dataset, SchemaPolicy};
use colonia_cluster::gower::{
    gower_matrix, to_similarity, DiceMode, DissimilarityMatrix, Preference, SimilarityMatrix,
};
use colonia_cluster::matrix::SquareMatrix;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn fixture_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/synthetic_colonias.csv")
}

/// One raw record: numeric values then categorical values.
#[derive(Debug, Clone)]
pub struct RawRecord {
    pub numeric: Vec<f64>,
    pub categorical: Vec<String>,
}

/// Writes records as CSV (`name,state,x0..,c0..`) and reads them back with an
/// inferred schema.
pub fn dataset_from(records: &[RawRecord]) -> Dataset {
    let n_num = records[0].numeric.len();
    let n_cat = records[0].categorical.len();
    let mut csv = String::from("name,state");
    for k in 0..n_num {
        csv += &format!(",x{k}");
    }
    for k in 0..n_cat {
        csv += &format!(",c{k}");
    }
    csv.push('\n');
    for (i, r) in records.iter().enumerate() {
        csv += &format!("r{i},TX");
        for v in &r.numeric {
            // `{:?}` prints the shortest string that parses back to the same f64.
            csv += &format!(",{v:?}");
        }
        for c in &r.categorical {
            csv += &format!(",{c}");
        }
        csv.push('\n');
    }
    read_dataset(csv.as_bytes(), &SchemaPolicy::InferFromHeader).expect("generated csv parses")
}

pub fn random_records(
    rng: &mut ChaCha8Rng,
    n: usize,
    n_num: usize,
    n_cat: usize,
) -> Vec<RawRecord> {
    let levels = ["p", "q", "r", "s"];
    (0..n)
        .map(|_| RawRecord {
            numeric: (0..n_num)
                .map(|_| {
                    // Coarse values so that ties and equal records occur.
                    if rng.gen_bool(0.3) {
                        rng.gen_range(0..4) as f64
                    } else {
                        rng.gen_range(-50.0..50.0)
                    }
                })
                .collect(),
            categorical: (0..n_cat)
                .map(|_| levels[rng.gen_range(0..3)].to_string())
                .collect(),
        })
        .collect()
}

/// Gower distance straight from the raw values: mean over non-constant
/// attributes of `|x - y| / (max - min)` and categorical mismatch.
pub fn gower_oracle(records: &[RawRecord]) -> Vec<Vec<f64>> {
    let n = records.len();
    let mut ranges = Vec::new();
    for k in 0..records[0].numeric.len() {
        let lo = records
            .iter()
            .map(|r| r.numeric[k])
            .fold(f64::INFINITY, f64::min);
        let hi = records
            .iter()
            .map(|r| r.numeric[k])
            .fold(f64::NEG_INFINITY, f64::max);
        ranges.push(hi - lo);
    }
    let active_cat: Vec<usize> = (0..records[0].categorical.len())
        .filter(|&k| {
            records
                .iter()
                .any(|r| r.categorical[k] != records[0].categorical[k])
        })
        .collect();
    let active = ranges.iter().filter(|&&r| r > 0.0).count() + active_cat.len();
    let mut d = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let mut sum = 0.0;
            for (k, &range) in ranges.iter().enumerate() {
                if range > 0.0 {
                    sum += (records[i].numeric[k] - records[j].numeric[k]).abs() / range;
                }
            }
            for &k in &active_cat {
                if records[i].categorical[k] != records[j].categorical[k] {
                    sum += 1.0;
                }
            }
            d[i][j] = sum / active as f64;
        }
    }
    d
}

pub fn gower(d: &Dataset) -> DissimilarityMatrix {
    let enc = colonia_cluster::data::encode_categorical(d);
    gower_matrix(d, &enc, DiceMode::PerAttribute).expect("dataset has active attributes")
}

pub fn median_similarity(d: &DissimilarityMatrix) -> SimilarityMatrix {
    to_similarity(d, -1.0, &Preference::Median).unwrap()
}

/// `groups` blobs of `size` records in two numeric and two categorical
/// attributes. Each group has its own category values, and its numeric
/// values vary by at most `spread` of the overall range.
pub fn planted_records(
    rng: &mut ChaCha8Rng,
    groups: usize,
    size: usize,
    spread: f64,
) -> Vec<RawRecord> {
    let mut out = Vec::new();
    for g in 0..groups {
        let centre = g as f64 * 100.0;
        for _ in 0..size {
            out.push(RawRecord {
                numeric: vec![
                    centre + rng.gen_range(0.0..=spread * 100.0),
                    centre + rng.gen_range(0.0..=spread * 100.0),
                ],
                categorical: vec![format!("g{g}"), format!("h{g}")],
            });
        }
    }
    out
}

pub fn random_similarity(rng: &mut ChaCha8Rng, n: usize) -> SquareMatrix {
    let rows: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..n).map(|_| rng.gen_range(-1.0..0.0)).collect())
        .collect();
    SquareMatrix::from_rows(&rows)
}
