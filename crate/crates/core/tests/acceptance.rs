//! Acceptance criteria, one PASS/FAIL line each. Runs without the libtest
//! harness so the lines are always printed.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use colonia_cluster::affinity::{
    run_ap, update_availabilities, update_responsibilities, ApParams, ClusterId, Damping,
};
use colonia_cluster::cart::{build_tree, extract_rules, FeatureMatrix, TreeParams};
use colonia_cluster::data::{
    encode_categorical, read_dataset, AttributeSpec, SchemaPolicy, ESTIMATED_POPULATION,
    PRIVATE_WELLS, PUBLIC_SEWER, PUBLIC_WATER_SERVICE, SERVICE_ADEQUACY, WATER_HAULED,
    WATER_HEALTH_HAZARD,
};
use colonia_cluster::eval::silhouette_global;
use colonia_cluster::gower::{dice_dissim, SimilarityMatrix};
use colonia_cluster::matrix::SquareMatrix;
use colonia_cluster::pipeline::{run_pipeline, PipelineConfig};
use colonia_cluster::priority::{
    assign_priorities, default_rules, CategoricalSummary, ClusterProfile,
};
use common::{
    dataset_from, gower, gower_oracle, median_similarity, planted_records, random_records,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GOWER_TOL: f64 = 1e-12;
const MESSAGE_TOL: f64 = 1e-12;
const OPTIMUM_TOL: f64 = 1e-9;
const OPTIMUM_GAP: f64 = 1e-6;
const OPTIMAL_SHARE: f64 = 0.9;
const PLANTED_INTRA_MAX: f64 = 0.05;
const PLANTED_INTER_MIN: f64 = 0.6;
const PLANTED_SILHOUETTE_MIN: f64 = 0.9;
const CART_ACCURACY_MIN: f64 = 0.95;
const REFERENCE_SUBSET_SIZES: (usize, usize) = (1939, 217);
const REFERENCE_RECORDS: usize = 2156;

/// Outcome of one criterion plus a one-line detail. `skipped` marks a
/// criterion whose gating check needs data that is not available.
struct Outcome {
    pass: bool,
    skipped: bool,
    detail: String,
}

impl Outcome {
    fn check(pass: bool, detail: impl Into<String>) -> Self {
        Self {
            pass,
            skipped: false,
            detail: detail.into(),
        }
    }
}

fn within(elapsed: Duration, limit: Duration) -> bool {
    elapsed < limit
}

fn criterion_1() -> Outcome {
    let text = "Name,Private Wells\nPleasanton,Y\nWilco,N\n";
    let d = read_dataset(
        text.as_bytes(),
        &SchemaPolicy::Explicit(vec![AttributeSpec::categorical(PRIVATE_WELLS)]),
    )
    .unwrap();
    let start = Instant::now();
    let enc = encode_categorical(&d);
    let differ = dice_dissim(enc.row(0), enc.row(1));
    let same = dice_dissim(enc.row(0), enc.row(0));
    let elapsed = start.elapsed();
    let table = (enc.row(0).to_vec(), enc.row(1).to_vec());
    // Categories sort as N, Y: Pleasanton (Y) is (0, 1), Wilco (N) is (1, 0).
    let pass = differ == 1.0
        && same == 0.0
        && table == (vec![0, 1], vec![1, 0])
        && within(elapsed, Duration::from_millis(1));
    Outcome::check(
        pass,
        format!("Y vs N = {differ}, Y vs Y = {same}, dummies {table:?}, {elapsed:?} (limit 1 ms)"),
    )
}

fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let (mut pairs, mut worst, mut failures) = (0usize, 0.0f64, Vec::new());
    while pairs < 1000 {
        let n = rng.gen_range(4..12);
        let records = random_records(&mut rng, n, 3, 3);
        let d = gower(&dataset_from(&records));
        let oracle = gower_oracle(&records);
        for i in 0..n {
            if d.get(i, i) != 0.0 {
                failures.push(format!("d[{i}][{i}] != 0"));
            }
            for j in (i + 1)..n {
                pairs += 1;
                let v = d.get(i, j);
                worst = worst.max((v - oracle[i][j]).abs());
                let same = records[i].numeric == records[j].numeric
                    && records[i].categorical == records[j].categorical;
                if !(0.0..=1.0).contains(&v) {
                    failures.push(format!("{v} outside [0, 1]"));
                }
                if v.to_bits() != d.get(j, i).to_bits() {
                    failures.push(format!("asymmetric at ({i}, {j})"));
                }
                if (v == 0.0) != same {
                    failures.push(format!("zero/equality mismatch at ({i}, {j})"));
                }
            }
        }
    }
    let pass = failures.is_empty() && worst <= GOWER_TOL;
    Outcome::check(
        pass,
        format!(
            "{pairs} pairs, max |gower - oracle| = {worst:.2e} (tol {GOWER_TOL:.0e}), {} axiom violations",
            failures.len()
        ),
    )
}

fn responsibility_oracle(s: &SquareMatrix, a: &SquareMatrix) -> SquareMatrix {
    let n = s.n();
    let mut r = SquareMatrix::zeros(n);
    for i in 0..n {
        for k in 0..n {
            let mut best = f64::NEG_INFINITY;
            for kp in 0..n {
                if kp != k {
                    best = best.max(a.get(i, kp) + s.get(i, kp));
                }
            }
            r.set(i, k, s.get(i, k) - best);
        }
    }
    r
}

fn availability_oracle(r: &SquareMatrix) -> SquareMatrix {
    let n = r.n();
    let mut a = SquareMatrix::zeros(n);
    for i in 0..n {
        for k in 0..n {
            let mut sum = 0.0;
            for ip in 0..n {
                if ip != i && ip != k {
                    sum += r.get(ip, k).max(0.0);
                }
            }
            if i == k {
                a.set(i, k, sum);
            } else {
                a.set(i, k, (r.get(k, k) + sum).min(0.0));
            }
        }
    }
    a
}

fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let start = Instant::now();
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let n = rng.gen_range(4..=10);
        let random = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| {
            SquareMatrix::from_rows(
                &(0..n)
                    .map(|_| (0..n).map(|_| rng.gen_range(lo..hi)).collect())
                    .collect::<Vec<_>>(),
            )
        };
        let s = random(&mut rng, -1.0, 0.0);
        let a = random(&mut rng, -1.0, 1.0);
        let r = update_responsibilities(&SimilarityMatrix::from_matrix(s.clone()), &a).unwrap();
        let a_next = update_availabilities(&r).unwrap();
        let r_oracle = responsibility_oracle(&s, &a);
        let a_oracle = availability_oracle(&r);
        for (x, y) in r
            .as_slice()
            .iter()
            .zip(r_oracle.as_slice())
            .chain(a_next.as_slice().iter().zip(a_oracle.as_slice()))
        {
            worst = worst.max((x - y).abs());
        }
    }
    let elapsed = start.elapsed();
    Outcome::check(
        worst <= MESSAGE_TOL && within(elapsed, Duration::from_secs(1)),
        format!("100 matrices 4x4..10x10, max deviation {worst:.2e} (tol {MESSAGE_TOL:.0e}), {elapsed:?} (limit 1 s)"),
    )
}

fn facility_optimum(s: &SimilarityMatrix) -> (f64, f64) {
    let n = s.n();
    let mut values: Vec<f64> = (1u32..(1 << n))
        .map(|mask| {
            (0..n)
                .map(|i| {
                    if mask >> i & 1 == 1 {
                        s.get(i, i)
                    } else {
                        (0..n)
                            .filter(|&e| mask >> e & 1 == 1)
                            .map(|e| s.get(i, e))
                            .fold(f64::NEG_INFINITY, f64::max)
                    }
                })
                .sum()
        })
        .collect();
    values.sort_by(|a, b| b.total_cmp(a));
    (values[0], values[1])
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(44);
    let start = Instant::now();
    let (mut eligible, mut optimal, mut invalid) = (0usize, 0usize, 0usize);
    for _ in 0..100 {
        let groups = rng.gen_range(2..=3);
        let size = rng.gen_range(2..=8 / groups);
        let records = planted_records(&mut rng, groups, size, 0.3);
        let s = median_similarity(&gower(&dataset_from(&records)));
        let result = run_ap(&s, &ApParams::default()).unwrap();
        let valid = !result.exemplars.is_empty()
            && result.exemplars.iter().all(|&e| result.labels[e] == e)
            && result.labels.iter().all(|l| result.exemplars.contains(l));
        if !valid {
            invalid += 1;
        }
        let (best, second) = facility_optimum(&s);
        if best - second >= OPTIMUM_GAP {
            eligible += 1;
            if (result.net_similarity - best).abs() <= OPTIMUM_TOL {
                optimal += 1;
            }
        }
    }
    let elapsed = start.elapsed();
    let share = optimal as f64 / eligible.max(1) as f64;
    Outcome::check(
        eligible > 0 && share >= OPTIMAL_SHARE && invalid == 0 && within(elapsed, Duration::from_secs(10)),
        format!(
            "{optimal}/{eligible} separated instances optimal ({:.1}%, need {:.0}%), {invalid} invalid, {elapsed:?} (limit 10 s)",
            share * 100.0,
            OPTIMAL_SHARE * 100.0
        ),
    )
}

const PLANTED_GROUP: usize = 10;
const PLANTED_SEED: u64 = 0;
/// Extra fixtures reported for robustness; they do not gate the criterion.
const ROBUSTNESS_SEEDS: u64 = 20;

/// Two groups of [`PLANTED_GROUP`]; returns records and Gower matrix.
fn planted_fixture(
    seed: u64,
) -> (
    Vec<common::RawRecord>,
    colonia_cluster::gower::DissimilarityMatrix,
) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let records = planted_records(&mut rng, 2, PLANTED_GROUP, 0.1);
    let d = gower(&dataset_from(&records));
    (records, d)
}

/// Failures of one planted fixture across the damping grid, plus intra max,
/// inter min and the lowest silhouette.
fn planted_recovery(seed: u64) -> (Vec<String>, f64, f64, f64) {
    let group = |i: usize| i / PLANTED_GROUP;
    let (_, d) = planted_fixture(seed);
    let n = d.n();
    let (mut intra, mut inter, mut min_score) = (0.0f64, f64::INFINITY, f64::INFINITY);
    for i in 0..n {
        for j in (i + 1)..n {
            if group(i) == group(j) {
                intra = intra.max(d.get(i, j));
            } else {
                inter = inter.min(d.get(i, j));
            }
        }
    }
    let s = median_similarity(&d);
    let mut failures = Vec::new();
    for g in [0.5, 0.6, 0.7, 0.8, 0.9] {
        let params = ApParams {
            damping: Damping::new(g).unwrap(),
            ..ApParams::default()
        };
        let result = run_ap(&s, &params).unwrap();
        let ids = result.cluster_ids();
        let pure = (0..n).all(|i| (0..n).all(|j| (ids[i] == ids[j]) == (group(i) == group(j))));
        let score = silhouette_global(&d, &result.labels).unwrap();
        min_score = min_score.min(score);
        if result.n_clusters() != 2 || !pure || score < PLANTED_SILHOUETTE_MIN {
            failures.push(format!(
                "seed {seed} damping {g}: K={} pure={pure} s={score:.3}",
                result.n_clusters()
            ));
        }
    }
    (failures, intra, inter, min_score)
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let (failures, intra, inter, min_score) = planted_recovery(PLANTED_SEED);
    let elapsed = start.elapsed();
    let others: Vec<String> = (1..ROBUSTNESS_SEEDS)
        .flat_map(|seed| planted_recovery(seed).0)
        .collect();
    let fixture_ok = intra <= PLANTED_INTRA_MAX && inter >= PLANTED_INTER_MIN;
    Outcome::check(
        fixture_ok && failures.is_empty() && within(elapsed, Duration::from_secs(5)),
        format!(
            "2x{PLANTED_GROUP} fixture, intra max {intra:.3} (<= {PLANTED_INTRA_MAX}), inter min {inter:.3} \
             (>= {PLANTED_INTER_MIN}), damping 0.5..0.9 misses {failures:?}, min silhouette {min_score:.3}, \
             {elapsed:?} (limit 5 s); informational: {} misses over {} further seeds {others:?}",
            others.len(),
            ROBUSTNESS_SEEDS - 1
        ),
    )
}

/// Grows the bundled fixture to `target` records by resampling its rows with
/// fresh populations and jittered ratios.
fn synthetic_snapshot(target: usize, path: &Path) {
    let mut reader = csv::Reader::from_path(common::fixture_path()).unwrap();
    let headers = reader.headers().unwrap().clone();
    let col = |name: &str| headers.iter().position(|h| h == name).unwrap();
    let (pop, counts) = (
        col(ESTIMATED_POPULATION),
        [
            col("People without Water"),
            col("People without Wastewater"),
            col("People with Water"),
            col("People with Wastewater"),
        ],
    );
    let templates: Vec<csv::StringRecord> = reader
        .records()
        .map(|r| r.unwrap())
        .filter(|r| r.iter().all(|c| !c.is_empty() && c != "NA"))
        .filter(|r| {
            let p: f64 = r[pop].parse().unwrap();
            p > 0.0 && counts.iter().all(|&c| r[c].parse::<f64>().unwrap() <= p)
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2156);
    let mut writer = csv::Writer::from_path(path).unwrap();
    writer.write_record(&headers).unwrap();
    for i in 0..target {
        let t = &templates[rng.gen_range(0..templates.len())];
        let p_old: f64 = t[pop].parse().unwrap();
        let p_new = rng.gen_range(20..3000) as f64;
        let mut row: Vec<String> = t.iter().map(str::to_string).collect();
        row[0] = format!("S{i:05}");
        row[pop] = p_new.to_string();
        for &c in &counts {
            let ratio = t[c].parse::<f64>().unwrap() / p_old;
            let jittered = (ratio + rng.gen_range(-0.1..0.1)).clamp(0.0, 1.0);
            row[c] = (jittered * p_new).round().to_string();
        }
        writer.write_record(&row).unwrap();
    }
    writer.flush().unwrap();
}

fn criterion_6() -> Outcome {
    let limit = Duration::from_secs(60);
    let dir = tempfile::tempdir().unwrap();
    match std::env::var_os("COLONIA_DATA").map(PathBuf::from) {
        Some(input) => {
            let start = Instant::now();
            let output = match run_pipeline(&PipelineConfig {
                input: input.clone(),
                output_dir: Some(dir.path().to_path_buf()),
                ..PipelineConfig::default()
            }) {
                Ok(o) => o,
                Err(e) => {
                    return Outcome::check(
                        false,
                        format!("pipeline failed on {}: {e}", input.display()),
                    )
                }
            };
            let elapsed = start.elapsed();
            let r = &output.report;
            let size = |v: &str| {
                r.subsets
                    .iter()
                    .find(|s| s.value == v)
                    .map_or(0, |s| s.records)
            };
            let sizes = (size("Y"), size("N"));
            let k = |v: &str| {
                r.subsets
                    .iter()
                    .find(|s| s.value == v)
                    .map_or(0, |s| s.clusters)
            };
            let gamma = |v: &str| {
                r.subsets
                    .iter()
                    .find(|s| s.value == v)
                    .map_or(f64::NAN, |s| s.damping)
            };
            let soft = format!(
                "soft: best damping Y {} / N {} (target 0.6 +/- 0.1), K Y {} (15..=35), K N {} (6..=18)",
                gamma("Y"),
                gamma("N"),
                k("Y"),
                k("N")
            );
            Outcome::check(
                sizes == REFERENCE_SUBSET_SIZES && within(elapsed, limit),
                format!("subset sizes {sizes:?} (expect {REFERENCE_SUBSET_SIZES:?}), {elapsed:?} (limit 60 s); {soft}"),
            )
        }
        None => {
            let input = dir.path().join("synthetic_2156.csv");
            synthetic_snapshot(REFERENCE_RECORDS, &input);
            let start = Instant::now();
            let result = run_pipeline(&PipelineConfig {
                input,
                output_dir: Some(dir.path().join("out")),
                ..PipelineConfig::default()
            });
            let elapsed = start.elapsed();
            let ran = match &result {
                Ok(_) => "ran".to_string(),
                Err(e) => format!("failed: {e}"),
            };
            Outcome {
                pass: result.is_ok() && within(elapsed, limit),
                skipped: true,
                detail: format!(
                    "reference dataset not available, subset sizes {REFERENCE_SUBSET_SIZES:?} unverified \
                     (set COLONIA_DATA to the CSV to check them); full pipeline on a synthetic \
                     {REFERENCE_RECORDS}-record table {ran} in {elapsed:?} (limit 60 s)"
                ),
            }
        }
    }
}

fn criterion_7() -> Outcome {
    let (records, d) = planted_fixture(PLANTED_SEED);
    let result = run_ap(&median_similarity(&d), &ApParams::default()).unwrap();
    let labels = result.cluster_ids();
    let features = FeatureMatrix::from_dataset(&dataset_from(&records));
    let tree = build_tree(&features, &labels, &TreeParams::default()).unwrap();
    let accuracy = tree.accuracy(&features, &labels);
    let rules = extract_rules(&tree, &features, &labels);
    let exclusive_exhaustive = (0..labels.len())
        .all(|row| rules.iter().filter(|r| r.matches(&features, row)).count() == 1);
    let supports: usize = rules.iter().map(|r| r.support).sum();

    let dir = tempfile::tempdir().unwrap();
    let union = run_pipeline(&PipelineConfig {
        input: common::fixture_path(),
        output_dir: Some(dir.path().to_path_buf()),
        ..PipelineConfig::default()
    })
    .map(|o| o.report.explanations[0].root_attribute.clone());
    let root = union.as_ref().ok().cloned().flatten();

    let pass = accuracy >= CART_ACCURACY_MIN
        && exclusive_exhaustive
        && supports == labels.len()
        && root.as_deref() == Some(PUBLIC_WATER_SERVICE);
    Outcome::check(
        pass,
        format!(
            "accuracy {accuracy:.3} (>= {CART_ACCURACY_MIN}), {} rules exclusive+exhaustive={exclusive_exhaustive}, \
             support sum {supports}/{}; union tree root {root:?}",
            rules.len(),
            labels.len()
        ),
    )
}

fn profile(values: &[(&str, &str)]) -> ClusterProfile {
    ClusterProfile {
        cluster: ClusterId::new("", 0),
        size: 10,
        categorical: values
            .iter()
            .map(|(a, v)| {
                (
                    a.to_string(),
                    CategoricalSummary {
                        modal: v.to_string(),
                        frequency: 1.0,
                        frequencies: BTreeMap::from([(v.to_string(), 1.0)]),
                    },
                )
            })
            .collect(),
        numeric: BTreeMap::from([(ESTIMATED_POPULATION.to_string(), 250.0)]),
    }
}

fn criterion_8() -> Outcome {
    let hauled = profile(&[
        (WATER_HAULED, "Y"),
        (PUBLIC_WATER_SERVICE, "N"),
        (PRIVATE_WELLS, "N"),
        (SERVICE_ADEQUACY, "N"),
        (WATER_HEALTH_HAZARD, "N"),
        (PUBLIC_SEWER, "N"),
    ]);
    let no_public_no_hazard = profile(&[
        (WATER_HAULED, "N"),
        (PUBLIC_WATER_SERVICE, "N"),
        (PRIVATE_WELLS, "Y"),
        (SERVICE_ADEQUACY, "N"),
        (WATER_HEALTH_HAZARD, "N"),
        (PUBLIC_SEWER, "N"),
    ]);
    let full_service = profile(&[
        (WATER_HAULED, "N"),
        (PUBLIC_WATER_SERVICE, "Y"),
        (PRIVATE_WELLS, "N"),
        (SERVICE_ADEQUACY, "Y"),
        (WATER_HEALTH_HAZARD, "N"),
        (PUBLIC_SEWER, "Y"),
    ]);
    let rules = default_rules();
    let levels: Vec<u8> = [hauled, no_public_no_hazard, full_service]
        .iter()
        .map(|p| {
            assign_priorities(std::slice::from_ref(p), &rules)
                .unwrap()
                .entries[0]
                .priority
        })
        .collect();
    Outcome::check(
        levels == [1, 2, 4],
        format!("levels {levels:?} (expect [1, 2, 4])"),
    )
}

fn criterion_9() -> Outcome {
    let run = |threads: usize| -> BTreeMap<String, Vec<u8>> {
        let dir = tempfile::tempdir().unwrap();
        let config = PipelineConfig {
            input: common::fixture_path(),
            output_dir: Some(dir.path().to_path_buf()),
            trace: true,
            dump_matrices: true,
            ..PipelineConfig::default()
        };
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_pipeline(&config).unwrap());
        fs::read_dir(dir.path())
            .unwrap()
            .map(|e| e.unwrap().path())
            .filter(|p| p.file_name().unwrap() != "timings.json")
            .map(|p| {
                (
                    p.file_name().unwrap().to_string_lossy().into_owned(),
                    fs::read(&p).unwrap(),
                )
            })
            .collect()
    };
    let a = run(1);
    let b = run(1);
    let c = run(4);
    let pass = !a.is_empty() && a == b && a == c;
    Outcome::check(
        pass,
        format!(
            "{} artifact files compared across 1/1/4 worker threads, identical={pass}",
            a.len()
        ),
    )
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("1 Dice worked example", criterion_1),
        ("2 Gower metric axioms and oracle", criterion_2),
        ("3 message-passing oracle", criterion_3),
        ("4 facility-location optimality", criterion_4),
        ("5 planted-cluster recovery", criterion_5),
        ("6 reference dataset reproduction", criterion_6),
        ("7 CART fidelity", criterion_7),
        ("8 priority mapping", criterion_8),
        ("9 determinism", criterion_9),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        let outcome = run();
        let status = match (outcome.pass, outcome.skipped) {
            (false, _) => "FAIL",
            (true, true) => "SKIP",
            (true, false) => "PASS",
        };
        if !outcome.pass {
            failed += 1;
        }
        println!("criterion {name}: {status} - {}", outcome.detail);
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
